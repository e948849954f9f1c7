//! Loading, normalisation and train/validation/test splitting.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("line {line}: expected {expected} fields, found {found}")]
    InconsistentWidth { line: u64, expected: usize, found: usize },
    #[error("no column named '{0}'")]
    MissingLabelColumn(String),
    #[error("fraction {0} outside [0, 1)")]
    BadFraction(f64),
    #[error("eps must be finite and >= 0, got {0}")]
    BadEps(f64),
    #[error("class {0} does not occur in the labels")]
    UnknownClass(i64),
    #[error("feature count mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub features: Array2<f64>,
    pub labels: Vec<i64>,
    pub feature_names: Option<Vec<String>>,
}

impl RawDataset {
    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> RawDataset {
        RawDataset {
            features: self.features.select(ndarray::Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Seeded random subset of `n` rows, kept in original order.
    pub fn subsample(&self, n: usize, seed: u64) -> RawDataset {
        let mut idx: Vec<usize> = (0..self.n_samples()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        idx.truncate(n.min(self.n_samples()));
        idx.sort_unstable();
        self.select(&idx)
    }

    /// Zero-pads to `d` columns (libsvm files may omit trailing features).
    pub fn widen(mut self, d: usize) -> RawDataset {
        if d > self.n_features() {
            let mut x = Array2::zeros((self.n_samples(), d));
            x.slice_mut(ndarray::s![.., ..self.n_features()]).assign(&self.features);
            self.features = x;
            self.feature_names = None;
        }
        self
    }

    pub fn classes(&self) -> Vec<i64> {
        self.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Libsvm,
}

impl std::str::FromStr for DataFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "libsvm" | "svmlight" => Ok(DataFormat::Libsvm),
            other => Err(format!("unknown format '{other}'")),
        }
    }
}

impl DataFormat {
    /// Guesses the format from the file name, ignoring a trailing `.gz`.
    pub fn from_path(path: &Path) -> DataFormat {
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("");
        let name = name.strip_suffix(".gz").unwrap_or(name);
        if name.ends_with(".csv") {
            DataFormat::Csv
        } else {
            DataFormat::Libsvm
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub format: Option<DataFormat>,
    pub label_column: String,
    /// Minimum width for libsvm data.
    pub n_features: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            format: None,
            label_column: "label".into(),
            n_features: None,
        }
    }
}

/// Reads a csv or libsvm file; `.gz` files are decompressed on the fly.
pub fn load_dataset(path: &Path, opts: &LoadOptions) -> Result<RawDataset, DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let format = opts.format.unwrap_or_else(|| DataFormat::from_path(path));
    let raw = match format {
        DataFormat::Csv => parse_csv(reader, &opts.label_column)?,
        DataFormat::Libsvm => parse_libsvm(BufReader::new(reader))?,
    };
    Ok(match opts.n_features {
        Some(d) => raw.widen(d),
        None => raw,
    })
}

fn parse_label(field: &str, line: u64) -> Result<i64, DatasetError> {
    let v: f64 = field.trim().parse().map_err(|_| DatasetError::ParseError {
        line,
        message: format!("bad label '{field}'"),
    })?;
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(DatasetError::ParseError {
            line,
            message: format!("label '{field}' is not an integer"),
        });
    }
    Ok(v as i64)
}

fn parse_value(field: &str, line: u64) -> Result<f64, DatasetError> {
    let t = field.trim();
    if t.is_empty() {
        return Err(DatasetError::ParseError {
            line,
            message: "missing value".into(),
        });
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(DatasetError::ParseError {
            line,
            message: format!("bad value '{t}'"),
        }),
    }
}

pub fn parse_csv<R: Read>(reader: R, label_column: &str) -> Result<RawDataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let csv_err = |e: csv::Error| DatasetError::ParseError {
        line: e.position().map(|p| p.line()).unwrap_or(0),
        message: e.to_string(),
    };
    let header = rdr.headers().map_err(csv_err)?.clone();
    let width = header.len();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DatasetError::MissingLabelColumn(label_column.to_string()))?;
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    if names.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != width {
            return Err(DatasetError::InconsistentWidth {
                line,
                expected: width,
                found: rec.len(),
            });
        }
        for (i, field) in rec.iter().enumerate() {
            if i == label_idx {
                labels.push(parse_label(field, line)?);
            } else {
                values.push(parse_value(field, line)?);
            }
        }
    }
    if labels.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let features = Array2::from_shape_vec((labels.len(), names.len()), values)
        .expect("row widths were checked");
    Ok(RawDataset {
        features,
        labels,
        feature_names: Some(names),
    })
}

/// `<label> <index>:<value> ...` with 1-based indices; the width is the
/// largest index seen.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<RawDataset, DatasetError> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut d = 0usize;
    for (k, line) in reader.lines().enumerate() {
        let lineno = k as u64 + 1;
        let line = line.map_err(|e| DatasetError::ParseError {
            line: lineno,
            message: e.to_string(),
        })?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut parts = body.split_whitespace();
        let label = parse_label(parts.next().unwrap_or(""), lineno)?;
        let mut row = Vec::new();
        for tok in parts {
            let (i, v) = tok.split_once(':').ok_or_else(|| DatasetError::ParseError {
                line: lineno,
                message: format!("expected index:value, got '{tok}'"),
            })?;
            let i: usize = i.parse().ok().filter(|&i| i >= 1).ok_or_else(|| DatasetError::ParseError {
                line: lineno,
                message: format!("bad index '{i}'"),
            })?;
            let v = parse_value(v, lineno)?;
            d = d.max(i);
            row.push((i - 1, v));
        }
        labels.push(label);
        rows.push(row);
    }
    if rows.is_empty() || d == 0 {
        return Err(DatasetError::EmptyDataset);
    }
    let mut features = Array2::zeros((rows.len(), d));
    for (r, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            features[[r, j]] = v;
        }
    }
    Ok(RawDataset {
        features,
        labels,
        feature_names: None,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClassSpec {
    Positive(i64),
    OneVsAll,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Normalization {
    /// Per-feature min-max scaling with training statistics.
    MinMax,
    /// The same affine map `(v - lo) / (hi - lo)` for every feature.
    Fixed { lo: f64, hi: f64 },
}

#[derive(Clone, Debug)]
pub struct PrepareOptions {
    pub classes: ClassSpec,
    pub eps: f64,
    pub val_frac: f64,
    /// Held-out fraction when no separate test set is supplied.
    pub test_frac: f64,
    pub seed: u64,
    pub normalization: Normalization,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            classes: ClassSpec::Positive(1),
            eps: 0.0,
            val_frac: 0.2,
            test_frac: 0.2,
            seed: 0,
            normalization: Normalization::MinMax,
        }
    }
}

/// One partition. `y[k][i]` is the sign label of row `i` for task `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub x: Array2<f64>,
    pub class_ids: Vec<i64>,
    pub y: Vec<Vec<f64>>,
    /// Row indices into the source dataset.
    pub rows: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    /// Labels of the first (binary) task.
    pub fn labels(&self) -> &[f64] {
        &self.y[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedTask {
    pub train: Split,
    pub val: Split,
    pub test: Split,
    pub eps: f64,
    /// Per-feature `(min, max)` used for scaling.
    pub norm_stats: Vec<(f64, f64)>,
    pub seed: u64,
    /// Class id that is `+1` in each task; one entry for binary tasks.
    pub classes: Vec<i64>,
    pub one_vs_all: bool,
}

impl PreparedTask {
    pub fn n_features(&self) -> usize {
        self.train.x.ncols()
    }

    pub fn n_tasks(&self) -> usize {
        self.classes.len()
    }
}

/// Scales columns with `stats`; constant columns map to 0 and the result is
/// clipped to `[0, 1]`.
pub fn apply_normalization(x: &Array2<f64>, stats: &[(f64, f64)]) -> Array2<f64> {
    let mut out = x.clone();
    for (mut col, &(lo, hi)) in out.columns_mut().into_iter().zip(stats) {
        let span = hi - lo;
        col.mapv_inplace(|v| {
            if span > 0.0 {
                ((v - lo) / span).clamp(0.0, 1.0)
            } else {
                0.0
            }
        });
    }
    out
}

pub fn minmax_stats(x: &Array2<f64>) -> Vec<(f64, f64)> {
    x.columns()
        .into_iter()
        .map(|c| {
            c.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
        })
        .collect()
}

fn check_fraction(f: f64) -> Result<(), DatasetError> {
    if (0.0..1.0).contains(&f) {
        Ok(())
    } else {
        Err(DatasetError::BadFraction(f))
    }
}

/// Builds a task from `raw`. Without `test`, a seeded fraction of `raw` is
/// held out as the test set; validation rows are then drawn from the rest.
pub fn prepare_task(
    raw: &RawDataset,
    test: Option<&RawDataset>,
    opts: &PrepareOptions,
) -> Result<PreparedTask, DatasetError> {
    check_fraction(opts.val_frac)?;
    check_fraction(opts.test_frac)?;
    if !(opts.eps >= 0.0 && opts.eps.is_finite()) {
        return Err(DatasetError::BadEps(opts.eps));
    }
    if raw.n_samples() == 0 || raw.n_features() == 0 {
        return Err(DatasetError::EmptyDataset);
    }
    if let Some(t) = test {
        if t.n_features() != raw.n_features() {
            return Err(DatasetError::DimensionMismatch(raw.n_features(), t.n_features()));
        }
    }
    let classes = match &opts.classes {
        ClassSpec::Positive(c) => {
            if !raw.labels.contains(c) {
                return Err(DatasetError::UnknownClass(*c));
            }
            vec![*c]
        }
        ClassSpec::OneVsAll => {
            let mut all: BTreeSet<i64> = raw.labels.iter().copied().collect();
            if let Some(t) = test {
                all.extend(t.labels.iter().copied());
            }
            all.into_iter().collect()
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = raw.n_samples();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let (test_rows, mut pool) = if test.is_some() {
        (Vec::new(), perm)
    } else {
        let n_test = ((n as f64) * opts.test_frac).round() as usize;
        let rest = perm.split_off(n_test.min(n));
        (perm, rest)
    };
    pool.shuffle(&mut rng);
    let n_val = ((pool.len() as f64) * opts.val_frac).floor() as usize;
    let mut train_rows = pool.split_off(n_val);
    let mut val_rows = pool;
    if train_rows.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    train_rows.sort_unstable();
    val_rows.sort_unstable();
    let mut test_rows = test_rows;
    test_rows.sort_unstable();

    let train_raw = raw.select(&train_rows);
    let norm_stats = match opts.normalization {
        Normalization::MinMax => minmax_stats(&train_raw.features),
        Normalization::Fixed { lo, hi } => vec![(lo, hi); raw.n_features()],
    };
    let build = |src: &RawDataset, rows: Vec<usize>| -> Split {
        let part = src.select(&rows);
        let y = classes
            .iter()
            .map(|&c| part.labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect())
            .collect();
        Split {
            x: apply_normalization(&part.features, &norm_stats),
            class_ids: part.labels,
            y,
            rows,
        }
    };
    let test_split = match test {
        Some(t) => build(t, (0..t.n_samples()).collect()),
        None => build(raw, test_rows),
    };
    Ok(PreparedTask {
        train: build(raw, train_rows),
        val: build(raw, val_rows),
        test: test_split,
        eps: opts.eps,
        norm_stats,
        seed: opts.seed,
        classes,
        one_vs_all: opts.classes == ClassSpec::OneVsAll,
    })
}
