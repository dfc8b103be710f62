//! On-disk instance and dataset formats.
//!
//! An instance file is a JSON object with the fields, in this order:
//!
//! ```text
//! {"name": "...", "points": [[x, y, ...], ...], "labels": [0, 1, ...], "meta": {"k": "v"}}
//! ```
//!
//! `points` is row-major N×D (one row per point). Floats are written with 17
//! significant digits so that a write/read cycle is bit-exact. A dataset is a
//! directory of instance files plus `manifest.json` mapping each split to the
//! instance names it contains.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("validation failed: {0}")]
    Validation(String),
}

impl DataError {
    fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        DataError::Field {
            field: field.into(),
            message: message.into(),
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One clustering problem: `points` is D×N (one column per point).
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub name: String,
    pub points: Array2<f64>,
    pub labels: Vec<usize>,
    pub meta: BTreeMap<String, String>,
}

impl Instance {
    /// Builds a validated instance. Labels may be arbitrary integers; unless
    /// they already are exactly 0..K-1 they are re-indexed to contiguous ids
    /// in first-occurrence order.
    pub fn new(name: impl Into<String>, points: Array2<f64>, labels: &[i64]) -> Result<Self> {
        let labels = normalize_labels(labels);
        let inst = Instance {
            name: name.into(),
            points,
            labels,
            meta: BTreeMap::new(),
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn num_clusters(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, n) = self.points.dim();
        if n == 0 {
            return Err(DataError::Validation("empty point set".into()));
        }
        if n < 2 {
            return Err(DataError::Validation(format!("need at least 2 points, got {n}")));
        }
        if d < 2 {
            return Err(DataError::Validation(format!("need dimension at least 2, got {d}")));
        }
        if let Some(((r, c), v)) = self.points.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DataError::Validation(format!(
                "non-finite coordinate {v} at point {c}, dimension {r}"
            )));
        }
        if self.labels.len() != n {
            return Err(DataError::Validation(format!(
                "{} labels for {n} points",
                self.labels.len()
            )));
        }
        check_contiguous(&self.labels)?;
        Ok(())
    }
}

/// Keeps labels that already cover exactly 0..K-1, otherwise falls back to
/// [`reindex_labels`].
pub fn normalize_labels(labels: &[i64]) -> Vec<usize> {
    let contiguous = labels.iter().all(|&l| l >= 0) && {
        let as_usize: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        check_contiguous(&as_usize).is_ok()
    };
    if contiguous {
        labels.iter().map(|&l| l as usize).collect()
    } else {
        reindex_labels(labels)
    }
}

/// Maps arbitrary integer labels to 0..K-1 in order of first occurrence.
pub fn reindex_labels(labels: &[i64]) -> Vec<usize> {
    let mut ids = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(*l).or_insert(next)
        })
        .collect()
}

fn check_contiguous(labels: &[usize]) -> Result<usize> {
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut seen = vec![false; k];
    for &l in labels {
        seen[l] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(DataError::Validation(format!(
            "labels are not contiguous: id {missing} is unused but {} is present",
            k - 1
        )));
    }
    Ok(k)
}

/// One-hot encoded labels, K×N.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotLabels {
    pub y: Array2<f64>,
}

impl OneHotLabels {
    pub fn num_clusters(&self) -> usize {
        self.y.nrows()
    }
}

pub fn one_hot(labels: &[usize]) -> Result<OneHotLabels> {
    if labels.is_empty() {
        return Err(DataError::Validation("no labels".into()));
    }
    let k = check_contiguous(labels)?;
    let mut y = Array2::zeros((k, labels.len()));
    for (i, &l) in labels.iter().enumerate() {
        y[[l, i]] = 1.0;
    }
    Ok(OneHotLabels { y })
}

/// Stacks per-frame xy coordinates into one column per point:
/// column i is (x_1, y_1, ..., x_F, y_F).
pub fn flatten_trajectories(frames: &[Vec<[f64; 2]>]) -> Result<Array2<f64>> {
    let f = frames.len();
    if f == 0 {
        return Err(DataError::Validation("no frames".into()));
    }
    let n = frames[0].len();
    if let Some(bad) = frames.iter().position(|fr| fr.len() != n) {
        return Err(DataError::Validation(format!(
            "ragged trajectories: frame {bad} has {} points, frame 0 has {n}",
            frames[bad].len()
        )));
    }
    let mut out = Array2::zeros((2 * f, n));
    for (t, frame) in frames.iter().enumerate() {
        for (i, p) in frame.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(DataError::Validation(format!(
                    "non-finite coordinate in frame {t}, point {i}"
                )));
            }
            out[[2 * t, i]] = p[0];
            out[[2 * t + 1, i]] = p[1];
        }
    }
    Ok(out)
}

/// Inverse of [`flatten_trajectories`].
pub fn unflatten_trajectories(flat: &Array2<f64>) -> Result<Vec<Vec<[f64; 2]>>> {
    let (d, n) = flat.dim();
    if d == 0 || d % 2 != 0 {
        return Err(DataError::Validation(format!(
            "trajectory matrix needs an even, nonzero row count, got {d}"
        )));
    }
    Ok((0..d / 2)
        .map(|t| (0..n).map(|i| [flat[[2 * t, i]], flat[[2 * t + 1, i]]]).collect())
        .collect())
}

/// Formats a float like C's `%.17g`: 17 significant digits, trailing zeros trimmed.
pub fn format_f64(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        trim_fraction(&fixed).to_string()
    } else {
        format!("{}e{}", trim_fraction(mantissa), exp)
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Renders an instance in the canonical file layout.
pub fn instance_to_json(inst: &Instance) -> String {
    let mut out = String::new();
    let json_str = |s: &str| serde_json::to_string(s).expect("string serialization");
    out.push_str("{\"name\":");
    out.push_str(&json_str(&inst.name));
    out.push_str(",\"points\":[");
    for (i, col) in inst.points.columns().into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('[');
        for (j, v) in col.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format_f64(*v));
        }
        out.push(']');
    }
    out.push_str("],\"labels\":[");
    for (i, l) in inst.labels.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{l}");
    }
    out.push_str("],\"meta\":{");
    for (i, (k, v)) in inst.meta.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&json_str(k));
        out.push(':');
        out.push_str(&json_str(v));
    }
    out.push_str("}}\n");
    out
}

/// Replaces bare `NaN`, `Infinity` and `-Infinity` tokens (as emitted by some
/// JSON writers) with `null` so they surface as validation errors rather than
/// parse errors.
fn neutralize_nonfinite_tokens(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        let token = ["-Infinity", "Infinity", "NaN"]
            .into_iter()
            .find(|t| rest.starts_with(t));
        if let Some(t) = token {
            out.push_str("null");
            rest = &rest[t.len()..];
        } else {
            out.push(c);
            rest = &rest[c.len_utf8()..];
        }
    }
    out
}

pub fn parse_instance(text: &str, origin: &Path) -> Result<Instance> {
    let value: Value =
        serde_json::from_str(&neutralize_nonfinite_tokens(text)).map_err(|e| DataError::Json {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
    let obj = value
        .as_object()
        .ok_or_else(|| DataError::field("<root>", "expected a JSON object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "name" | "points" | "labels" | "meta") {
            return Err(DataError::field(key.clone(), "unknown field"));
        }
    }

    let name = obj
        .get("name")
        .ok_or_else(|| DataError::field("name", "missing"))?
        .as_str()
        .ok_or_else(|| DataError::field("name", "expected a string"))?
        .to_string();

    let rows = obj
        .get("points")
        .ok_or_else(|| DataError::field("points", "missing"))?
        .as_array()
        .ok_or_else(|| DataError::field("points", "expected an array of points"))?;
    if rows.is_empty() {
        return Err(DataError::Validation("empty point set".into()));
    }
    let mut d = None;
    let mut coords = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| DataError::field(format!("points[{i}]"), "expected an array"))?;
        match d {
            None => d = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(DataError::field(
                    format!("points[{i}]"),
                    format!("has {} coordinates, expected {d}", row.len()),
                ))
            }
            _ => {}
        }
        for (j, v) in row.iter().enumerate() {
            let x = match v {
                Value::Null => f64::NAN,
                v => v.as_f64().ok_or_else(|| {
                    DataError::field(format!("points[{i}][{j}]"), "expected a number")
                })?,
            };
            coords.push(x);
        }
    }
    let d = d.unwrap_or(0);
    let n = rows.len();
    // coords is row-major N×D; the instance stores D×N.
    let points = Array2::from_shape_vec((n, d), coords)
        .expect("shape checked above")
        .reversed_axes()
        .as_standard_layout()
        .into_owned();

    let labels = obj
        .get("labels")
        .ok_or_else(|| DataError::field("labels", "missing"))?
        .as_array()
        .ok_or_else(|| DataError::field("labels", "expected an array of integers"))?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_i64()
                .ok_or_else(|| DataError::field(format!("labels[{i}]"), "expected an integer"))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut meta = BTreeMap::new();
    match obj.get("meta") {
        None | Some(Value::Null) => {}
        Some(Value::Object(m)) => {
            for (k, v) in m {
                let v = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                meta.insert(k.clone(), v);
            }
        }
        Some(_) => return Err(DataError::field("meta", "expected an object")),
    }

    let mut inst = Instance::new(name, points, &labels)?;
    inst.meta = meta;
    Ok(inst)
}

pub fn read_instance(path: impl AsRef<Path>) -> Result<Instance> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_instance(&text, path)
}

pub fn write_instance(inst: &Instance, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    inst.validate()?;
    fs::write(path, instance_to_json(inst)).map_err(|e| DataError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(DataError::Validation(format!("unknown split `{other}`"))),
        }
    }
}

/// Split membership, serialized as `{"train": [...], "val": [...], "test": [...]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub val: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

impl Manifest {
    pub fn names(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn names_mut(&mut self, split: Split) -> &mut Vec<String> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| DataError::Json {
            path,
            message: e.to_string(),
        })
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serialization");
        fs::write(&path, text + "\n").map_err(|e| DataError::io(&path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub split: Split,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>, split: Split) -> Result<Self> {
        let mut seen = HashSet::new();
        for inst in &instances {
            if !seen.insert(inst.name.as_str()) {
                return Err(DataError::Validation(format!(
                    "duplicate instance name `{}`",
                    inst.name
                )));
            }
        }
        Ok(Dataset { instances, split })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Loads one split of a dataset directory.
    pub fn load(dir: impl AsRef<Path>, split: Split) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = Manifest::read(dir)?;
        let instances = manifest
            .names(split)
            .iter()
            .map(|name| read_instance(dir.join(format!("{name}.json"))))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(instances, split)
    }
}

/// Writes the given splits into `dir` as instance files plus a manifest.
pub fn write_dataset(dir: impl AsRef<Path>, splits: &[&Dataset]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let mut manifest = Manifest::default();
    let mut seen = HashSet::new();
    for ds in splits {
        for inst in &ds.instances {
            if !seen.insert(inst.name.clone()) {
                return Err(DataError::Validation(format!(
                    "instance name `{}` appears in more than one split",
                    inst.name
                )));
            }
            write_instance(inst, dir.join(format!("{}.json", inst.name)))?;
            manifest.names_mut(ds.split).push(inst.name.clone());
        }
    }
    manifest.write(dir)
}
