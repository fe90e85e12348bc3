//! Dataset representation, validation, grouping and file ingestion.
//!
//! The label and the behavioral cluster are exposed as the pseudo-attributes
//! [`LABEL_ATTRIBUTE`] and [`CLUSTER_ATTRIBUTE`], so that every grouping path
//! (auditing, oversampling, per-group metrics) goes through [`GroupSpec`].

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved attribute name that always refers to the binary label.
pub const LABEL_ATTRIBUTE: &str = "intervention";
/// Reserved attribute name for the behavioral cluster of a student.
pub const CLUSTER_ATTRIBUTE: &str = "cluster";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    pub values: Vec<String>,
}

/// Declared categorical attributes and their allowed values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct AttributeSchema {
    attributes: Vec<AttributeDef>,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    attributes: Vec<AttributeDef>,
}

impl TryFrom<RawSchema> for AttributeSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        AttributeSchema::new(raw.attributes)
    }
}

impl From<AttributeSchema> for RawSchema {
    fn from(schema: AttributeSchema) -> Self {
        RawSchema {
            attributes: schema.attributes,
        }
    }
}

impl AttributeSchema {
    pub fn new(attributes: Vec<AttributeDef>) -> Result<Self> {
        let mut seen = HashSet::new();
        for attr in &attributes {
            if attr.name == LABEL_ATTRIBUTE || attr.name == CLUSTER_ATTRIBUTE {
                return Err(Error::InvalidSchema(format!(
                    "attribute name `{}` is reserved",
                    attr.name
                )));
            }
            if attr.name.is_empty() {
                return Err(Error::InvalidSchema("empty attribute name".into()));
            }
            if !seen.insert(attr.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "attribute `{}` declared twice",
                    attr.name
                )));
            }
            let distinct: HashSet<&String> = attr.values.iter().collect();
            if distinct.len() != attr.values.len() {
                return Err(Error::InvalidSchema(format!(
                    "attribute `{}` lists a value twice",
                    attr.name
                )));
            }
            if attr.values.len() < 2 {
                return Err(Error::InvalidSchema(format!(
                    "attribute `{}` needs at least two values",
                    attr.name
                )));
            }
        }
        Ok(Self { attributes })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: RawSchema = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidSchema(format!("{}: {e}", path.display())))?;
        Self::try_from(raw)
    }

    pub fn attributes(&self) -> &[AttributeDef] {
        &self.attributes
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&AttributeDef> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn label_name(&self) -> &'static str {
        LABEL_ATTRIBUTE
    }
}

/// One student: demographics, a T×D behavior sequence and the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub student_id: String,
    pub attributes: BTreeMap<String, String>,
    pub label: u8,
    pub behavior: Vec<Vec<f64>>,
}

impl StudentRecord {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }

    pub fn steps(&self) -> usize {
        self.behavior.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.behavior.first().map_or(0, Vec::len)
    }
}

/// A canonical (sorted, duplicate-free) selection of attribute names.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct GroupSpec(Vec<String>);

impl GroupSpec {
    pub fn new<I, T>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let mut names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::InvalidConfig(
                "group spec needs at least one attribute".into(),
            ));
        }
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig(format!(
                "group spec lists an attribute twice: {}",
                names.join("+")
            )));
        }
        if names.iter().any(String::is_empty) {
            return Err(Error::InvalidConfig(
                "empty attribute name in group spec".into(),
            ));
        }
        Ok(Self(names))
    }

    pub fn single(name: &str) -> Self {
        Self(vec![name.to_string()])
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.iter().any(|n| n == name)
    }

    pub fn uses_cluster(&self) -> bool {
        self.contains(CLUSTER_ATTRIBUTE)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for GroupSpec {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        GroupSpec::new(v)
    }
}

impl From<GroupSpec> for Vec<String> {
    fn from(spec: GroupSpec) -> Self {
        spec.0
    }
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("+"))
    }
}

impl FromStr for GroupSpec {
    type Err = Error;

    /// Parses `gender+school` (a `,` separator is accepted as well).
    fn from_str(s: &str) -> Result<Self> {
        GroupSpec::new(s.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty()))
    }
}

/// A concrete subgroup: one value per name of `spec`, in spec order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub spec: GroupSpec,
    pub values: Vec<String>,
}

impl GroupKey {
    pub fn new(spec: GroupSpec, values: Vec<String>) -> Self {
        assert_eq!(spec.arity(), values.len(), "group key arity");
        Self { spec, values }
    }

    /// Values joined by `|`, the key used in JSON artifacts.
    pub fn joined(&self) -> String {
        self.values.join("|")
    }

    pub fn value_of(&self, name: &str) -> Option<&str> {
        self.spec.position(name).map(|i| self.values[i].as_str())
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (n, v)) in self.spec.names().iter().zip(&self.values).enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{n}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Column<'a> {
    Attribute(&'a str),
    Label,
    Cluster,
}

/// Validated, immutable collection of student records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: AttributeSchema,
    records: Vec<StudentRecord>,
    feature_dim: usize,
    clusters: Option<Vec<usize>>,
}

impl Dataset {
    /// Validates `records` against `schema`. Row numbers in errors are 1-based.
    pub fn new(schema: AttributeSchema, records: Vec<StudentRecord>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(records.len());
        let mut feature_dim = None;
        for (i, rec) in records.iter().enumerate() {
            let row = i + 1;
            validate_record(&schema, rec, row)?;
            if !ids.insert(rec.student_id.as_str()) {
                return Err(Error::DuplicateStudentId(rec.student_id.clone()));
            }
            let dim = rec.feature_dim();
            match feature_dim {
                None => feature_dim = Some(dim),
                Some(expected) if expected != dim => {
                    return Err(Error::InconsistentFeatureDim {
                        row,
                        expected,
                        found: dim,
                    })
                }
                _ => {}
            }
        }
        Ok(Self {
            schema,
            records,
            feature_dim: feature_dim.unwrap_or(0),
            clusters: None,
        })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn records(&self) -> &[StudentRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn has_clusters(&self) -> bool {
        self.clusters.is_some()
    }

    pub fn cluster_of(&self, index: usize) -> Option<usize> {
        self.clusters.as_ref().map(|c| c[index])
    }

    /// Student id → cluster label, when clusters have been assigned.
    pub fn cluster_assignment(&self) -> Option<BTreeMap<String, usize>> {
        self.clusters.as_ref().map(|c| {
            self.records
                .iter()
                .zip(c)
                .map(|(r, &k)| (r.student_id.clone(), k))
                .collect()
        })
    }

    /// Returns a copy with the given cluster labels, aligned with `records`.
    pub fn with_clusters(&self, clusters: Vec<usize>) -> Result<Self> {
        if clusters.len() != self.records.len() {
            return Err(Error::CoverageMismatch(format!(
                "{} cluster labels for {} records",
                clusters.len(),
                self.records.len()
            )));
        }
        Ok(Self {
            clusters: Some(clusters),
            ..self.clone()
        })
    }

    /// Sub-dataset over distinct `indices` (in the given order). Cluster
    /// labels carry over.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            feature_dim: self.feature_dim,
            clusters: self
                .clusters
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
        }
    }

    fn resolve<'a>(&self, spec: &'a GroupSpec) -> Result<Vec<Column<'a>>> {
        spec.names()
            .iter()
            .map(|name| match name.as_str() {
                LABEL_ATTRIBUTE => Ok(Column::Label),
                CLUSTER_ATTRIBUTE => {
                    if self.clusters.is_some() {
                        Ok(Column::Cluster)
                    } else {
                        Err(Error::ClusterNotAssigned)
                    }
                }
                other if self.schema.contains(other) => Ok(Column::Attribute(other)),
                other => Err(Error::UnknownAttribute(other.to_string())),
            })
            .collect()
    }

    fn value_at(&self, index: usize, column: Column<'_>) -> String {
        match column {
            Column::Attribute(name) => self.records[index].attributes[name].clone(),
            Column::Label => self.records[index].label.to_string(),
            Column::Cluster => self.clusters.as_ref().expect("resolved")[index].to_string(),
        }
    }

    /// Checks that every name of `spec` can be resolved on this dataset.
    pub fn check_spec(&self, spec: &GroupSpec) -> Result<()> {
        self.resolve(spec).map(|_| ())
    }

    /// Group key of every record under `spec`, in record order.
    pub fn keys(&self, spec: &GroupSpec) -> Result<Vec<GroupKey>> {
        let columns = self.resolve(spec)?;
        Ok((0..self.records.len())
            .map(|i| {
                GroupKey::new(
                    spec.clone(),
                    columns.iter().map(|&c| self.value_at(i, c)).collect(),
                )
            })
            .collect())
    }
}

fn validate_record(schema: &AttributeSchema, rec: &StudentRecord, row: usize) -> Result<()> {
    let malformed = |reason: String| Error::MalformedRecord { row, reason };
    if rec.student_id.is_empty() {
        return Err(malformed("empty student_id".into()));
    }
    if rec.label > 1 {
        return Err(malformed(format!(
            "label must be 0 or 1, got {}",
            rec.label
        )));
    }
    for def in schema.attributes() {
        match rec.attributes.get(&def.name) {
            None => return Err(malformed(format!("missing attribute `{}`", def.name))),
            Some(v) if !def.values.contains(v) => {
                return Err(Error::SchemaViolation {
                    row,
                    attribute: def.name.clone(),
                    value: v.clone(),
                })
            }
            _ => {}
        }
    }
    if let Some(extra) = rec.attributes.keys().find(|k| !schema.contains(k)) {
        return Err(malformed(format!(
            "attribute `{extra}` is not declared in the schema"
        )));
    }
    if rec.behavior.is_empty() {
        return Err(malformed("behavior sequence is empty".into()));
    }
    let dim = rec.behavior[0].len();
    if dim == 0 {
        return Err(malformed("behavior vectors are empty".into()));
    }
    for (t, step) in rec.behavior.iter().enumerate() {
        if step.len() != dim {
            return Err(malformed(format!(
                "behavior step {t} has {} features, expected {dim}",
                step.len()
            )));
        }
        if step.iter().any(|v| !v.is_finite()) {
            return Err(malformed(format!(
                "behavior step {t} has a non-finite value"
            )));
        }
    }
    Ok(())
}

/// Number of records per group. Empty groups never appear.
pub fn group_counts(dataset: &Dataset, spec: &GroupSpec) -> Result<BTreeMap<GroupKey, usize>> {
    let mut counts = BTreeMap::new();
    for key in dataset.keys(spec)? {
        *counts.entry(key).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Ascending record indices per group.
pub fn partition_by_group(
    dataset: &Dataset,
    spec: &GroupSpec,
) -> Result<BTreeMap<GroupKey, Vec<usize>>> {
    let mut parts: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, key) in dataset.keys(spec)?.into_iter().enumerate() {
        parts.entry(key).or_default().push(i);
    }
    Ok(parts)
}

/// Loads a JSON-lines records file and a JSON schema file.
pub fn load_dataset(records_path: &Path, schema_path: &Path) -> Result<Dataset> {
    let schema = AttributeSchema::from_path(schema_path)?;
    let file = File::open(records_path).map_err(|e| Error::io(records_path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| Error::io(records_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StudentRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                row,
                reason: e.to_string(),
            })?;
        records.push((row, rec));
    }
    dataset_with_file_rows(schema, records)
}

// Reports errors against file line numbers instead of record positions.
fn dataset_with_file_rows(
    schema: AttributeSchema,
    rows: Vec<(usize, StudentRecord)>,
) -> Result<Dataset> {
    let line_of: Vec<usize> = rows.iter().map(|(r, _)| *r).collect();
    let records = rows.into_iter().map(|(_, r)| r).collect();
    Dataset::new(schema, records).map_err(|e| match e {
        Error::MalformedRecord { row, reason } => Error::MalformedRecord {
            row: line_of[row - 1],
            reason,
        },
        Error::SchemaViolation {
            row,
            attribute,
            value,
        } => Error::SchemaViolation {
            row: line_of[row - 1],
            attribute,
            value,
        },
        Error::InconsistentFeatureDim {
            row,
            expected,
            found,
        } => Error::InconsistentFeatureDim {
            row: line_of[row - 1],
            expected,
            found,
        },
        other => other,
    })
}

/// Loads the flat wide CSV variant: `student_id`, `label`, one column per
/// schema attribute and `behavior_t{t}_f{f}` columns. A time step whose
/// feature cells are all empty ends a shorter sequence.
pub fn load_dataset_csv(records_path: &Path, schema_path: &Path) -> Result<Dataset> {
    let schema = AttributeSchema::from_path(schema_path)?;
    let mut reader = csv::Reader::from_path(records_path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(
            records_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
        ),
        _ => Error::Csv(e),
    })?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("student_id").ok_or_else(|| Error::MalformedRecord {
        row: 1,
        reason: "missing `student_id` column".into(),
    })?;
    let label_col = col("label").ok_or_else(|| Error::MalformedRecord {
        row: 1,
        reason: "missing `label` column".into(),
    })?;
    let mut attr_cols = Vec::new();
    for def in schema.attributes() {
        let c = col(&def.name).ok_or_else(|| Error::MalformedRecord {
            row: 1,
            reason: format!("missing attribute column `{}`", def.name),
        })?;
        attr_cols.push((def.name.clone(), c));
    }
    // (t, f) -> column
    let mut cells: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (c, h) in headers.iter().enumerate() {
        if let Some(rest) = h.strip_prefix("behavior_t") {
            let (t, f) = rest
                .split_once("_f")
                .and_then(|(t, f)| Some((t.parse().ok()?, f.parse().ok()?)))
                .ok_or_else(|| Error::MalformedRecord {
                    row: 1,
                    reason: format!("bad behavior column `{h}`"),
                })?;
            cells.insert((t, f), c);
        }
    }
    let steps = cells.keys().map(|&(t, _)| t + 1).max().unwrap_or(0);
    let dim = cells.keys().map(|&(_, f)| f + 1).max().unwrap_or(0);
    if steps * dim != cells.len() {
        return Err(Error::MalformedRecord {
            row: 1,
            reason: "behavior columns do not form a full T×D grid".into(),
        });
    }

    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let malformed = |reason: String| Error::MalformedRecord { row, reason };
        let label = match rec.get(label_col).map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            other => return Err(malformed(format!("label must be 0 or 1, got {other:?}"))),
        };
        let attributes = attr_cols
            .iter()
            .map(|(name, c)| (name.clone(), rec.get(*c).unwrap_or("").to_string()))
            .collect();
        let mut behavior = Vec::new();
        for t in 0..steps {
            let raw: Vec<&str> = (0..dim)
                .map(|f| rec.get(cells[&(t, f)]).unwrap_or("").trim())
                .collect();
            if raw.iter().all(|v| v.is_empty()) {
                break;
            }
            let step = raw
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| malformed(format!("bad number `{v}` at step {t}")))
                })
                .collect::<Result<Vec<_>>>()?;
            behavior.push(step);
        }
        rows.push((
            row,
            StudentRecord {
                student_id: rec.get(id_col).unwrap_or("").to_string(),
                attributes,
                label,
                behavior,
            },
        ));
    }
    dataset_with_file_rows(schema, rows)
}

/// Writes the records (JSON lines) and schema files.
pub fn save_dataset(dataset: &Dataset, records_path: &Path, schema_path: &Path) -> Result<()> {
    let file = File::create(records_path).map_err(|e| Error::io(records_path, e))?;
    let mut out = BufWriter::new(file);
    for rec in dataset.records() {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io(records_path, e))?;
    }
    out.flush().map_err(|e| Error::io(records_path, e))?;
    let schema = serde_json::to_string_pretty(dataset.schema())?;
    std::fs::write(schema_path, schema + "\n").map_err(|e| Error::io(schema_path, e))
}

/// Writes the wide CSV variant. Shorter sequences leave trailing cells empty.
pub fn save_dataset_csv(dataset: &Dataset, records_path: &Path) -> Result<()> {
    let steps = dataset
        .records()
        .iter()
        .map(StudentRecord::steps)
        .max()
        .unwrap_or(0);
    let dim = dataset.feature_dim();
    let mut writer = csv::Writer::from_path(records_path)?;
    let mut header = vec!["student_id".to_string(), "label".to_string()];
    header.extend(dataset.schema().names().map(String::from));
    for t in 0..steps {
        for f in 0..dim {
            header.push(format!("behavior_t{t}_f{f}"));
        }
    }
    writer.write_record(&header)?;
    for rec in dataset.records() {
        let mut row = vec![rec.student_id.clone(), rec.label.to_string()];
        row.extend(dataset.schema().names().map(|n| rec.attributes[n].clone()));
        for t in 0..steps {
            for f in 0..dim {
                row.push(
                    rec.behavior
                        .get(t)
                        .map_or(String::new(), |s| s[f].to_string()),
                );
            }
        }
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io(records_path, e))
}

/// Distinct values observed for `name` (schema attribute or pseudo-attribute).
pub fn observed_values(dataset: &Dataset, name: &str) -> Result<BTreeSet<String>> {
    let spec = GroupSpec::single(name);
    Ok(dataset
        .keys(&spec)?
        .into_iter()
        .map(|mut k| k.values.remove(0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn schema() -> AttributeSchema {
        AttributeSchema::new(vec![
            AttributeDef {
                name: "gender".into(),
                values: vec!["F".into(), "M".into()],
            },
            AttributeDef {
                name: "school".into(),
                values: vec!["H".into(), "M".into()],
            },
        ])
        .unwrap()
    }

    fn rec(id: &str, gender: &str, school: &str, label: u8) -> StudentRecord {
        StudentRecord {
            student_id: id.into(),
            attributes: [("gender", gender), ("school", school)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            label,
            behavior: vec![vec![0.5, 1.0]],
        }
    }

    #[test]
    fn counts_and_partition_on_alternating_genders() {
        let records = (0..4)
            .map(|i| rec(&format!("s{i}"), if i % 2 == 0 { "M" } else { "F" }, "H", 0))
            .collect();
        let ds = Dataset::new(schema(), records).unwrap();
        let spec = GroupSpec::single("gender");
        let parts = partition_by_group(&ds, &spec).unwrap();
        let m = GroupKey::new(spec.clone(), vec!["M".into()]);
        let f = GroupKey::new(spec.clone(), vec!["F".into()]);
        assert_eq!(parts[&m], vec![0, 2]);
        assert_eq!(parts[&f], vec![1, 3]);

        let uniform = GroupSpec::single("school");
        let parts = partition_by_group(&ds, &uniform).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts.values().next().unwrap(), &vec![0, 1, 2, 3]);
    }

    #[test]
    fn six_four_gender_split() {
        let records = (0..10)
            .map(|i| {
                rec(
                    &format!("s{i}"),
                    if i < 6 { "M" } else { "F" },
                    "H",
                    (i % 3 == 0) as u8,
                )
            })
            .collect();
        let ds = Dataset::new(schema(), records).unwrap();
        let counts = group_counts(&ds, &GroupSpec::single("gender")).unwrap();
        let by_value: BTreeMap<String, usize> =
            counts.into_iter().map(|(k, c)| (k.joined(), c)).collect();
        assert_eq!(by_value, BTreeMap::from([("F".into(), 4), ("M".into(), 6)]));
    }

    #[test]
    fn cluster_spec_requires_assignment() {
        let ds = Dataset::new(schema(), vec![rec("a", "F", "H", 1)]).unwrap();
        let err = group_counts(&ds, &GroupSpec::single(CLUSTER_ATTRIBUTE)).unwrap_err();
        assert!(matches!(err, Error::ClusterNotAssigned));
        let err = group_counts(&ds, &GroupSpec::single("country")).unwrap_err();
        assert!(matches!(err, Error::UnknownAttribute(a) if a == "country"));
    }

    #[test]
    fn spec_canonicalization() {
        let a = GroupSpec::new(["school", "gender"]).unwrap();
        let b: GroupSpec = "gender+school".parse().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_string(), "gender+school");
        assert!(GroupSpec::new(["gender", "gender"]).is_err());
        assert!(GroupSpec::new(Vec::<String>::new()).is_err());
    }

    #[test]
    fn validation_errors() {
        let dup = Dataset::new(
            schema(),
            vec![rec("s1", "F", "H", 1), rec("s1", "M", "H", 0)],
        );
        assert!(matches!(dup, Err(Error::DuplicateStudentId(id)) if id == "s1"));

        let bad = Dataset::new(
            schema(),
            vec![rec("s1", "F", "H", 1), rec("s2", "X", "H", 0)],
        );
        match bad {
            Err(Error::SchemaViolation {
                row,
                attribute,
                value,
            }) => {
                assert_eq!(
                    (row, attribute.as_str(), value.as_str()),
                    (2, "gender", "X")
                );
            }
            other => panic!("{other:?}"),
        }

        let mut wide = rec("s2", "M", "H", 0);
        wide.behavior = vec![vec![1.0, 2.0, 3.0]];
        let err = Dataset::new(schema(), vec![rec("s1", "F", "H", 1), wide]).unwrap_err();
        assert!(matches!(
            err,
            Error::InconsistentFeatureDim {
                row: 2,
                expected: 2,
                found: 3
            }
        ));

        let mut nan = rec("s1", "F", "H", 1);
        nan.behavior[0][0] = f64::NAN;
        assert!(matches!(
            Dataset::new(schema(), vec![nan]),
            Err(Error::MalformedRecord { row: 1, .. })
        ));

        let mut label = rec("s1", "F", "H", 1);
        label.label = 2;
        assert!(Dataset::new(schema(), vec![label]).is_err());
    }

    #[test]
    fn schema_rejects_reserved_and_singleton_attributes() {
        let reserved = AttributeSchema::new(vec![AttributeDef {
            name: LABEL_ATTRIBUTE.into(),
            values: vec!["0".into(), "1".into()],
        }]);
        assert!(reserved.is_err());
        let single = AttributeSchema::new(vec![AttributeDef {
            name: "gender".into(),
            values: vec!["F".into()],
        }]);
        assert!(single.is_err());
    }

    #[test]
    fn label_pseudo_attribute_groups_by_label() {
        let ds = Dataset::new(
            schema(),
            vec![
                rec("a", "F", "H", 1),
                rec("b", "F", "M", 0),
                rec("c", "M", "M", 1),
            ],
        )
        .unwrap();
        let spec = GroupSpec::new(["gender", LABEL_ATTRIBUTE]).unwrap();
        let counts = group_counts(&ds, &spec).unwrap();
        let joined: Vec<(String, usize)> = counts.iter().map(|(k, &c)| (k.joined(), c)).collect();
        assert_eq!(
            joined,
            vec![("F|0".into(), 1), ("F|1".into(), 1), ("M|1".into(), 1)]
        );
    }
}
