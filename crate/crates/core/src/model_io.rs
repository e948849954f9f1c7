//! JSON model files and CSV reports.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::RobustnessReport;
use crate::loss::LossKind;
use crate::model::{Ensemble, Model, ModelKind, Task};
use crate::stumps::{Stump, StumpEnsemble};
use crate::trees::{Tree, TreeEnsemble};
use crate::ModelError;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported model format version {0} (this build reads {FORMAT_VERSION})")]
    UnsupportedVersion(u64),
    #[error("schema error at {pointer}: {message}")]
    SchemaError { pointer: String, message: String },
    #[error("invalid model: {0}")]
    Invalid(#[from] ModelError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Weights of one class; exactly one of the two lists is present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleRecord {
    pub class: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stumps: Option<Vec<Stump>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trees: Option<Vec<Tree>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u64,
    pub model_kind: ModelKind,
    pub task: Task,
    pub eps_trained: f64,
    pub loss_kind: LossKind,
    pub w_max: f64,
    pub shrinkage: f64,
    pub n_features: usize,
    pub classes: Vec<i64>,
    pub ensembles: Vec<EnsembleRecord>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: Option<u64>,
}

impl ModelFile {
    pub fn from_model(m: &Model) -> ModelFile {
        let first = &m.ensembles[0];
        let ensembles = m
            .ensembles
            .iter()
            .zip(&m.classes)
            .map(|(e, &class)| match e {
                Ensemble::Stumps(s) => EnsembleRecord {
                    class,
                    stumps: Some(s.stumps().to_vec()),
                    trees: None,
                },
                Ensemble::Trees(t) => EnsembleRecord {
                    class,
                    stumps: None,
                    trees: Some(t.trees.clone()),
                },
            })
            .collect();
        ModelFile {
            format_version: FORMAT_VERSION,
            model_kind: first.kind(),
            task: m.task,
            eps_trained: first.eps_trained(),
            loss_kind: first.loss_kind(),
            w_max: first.w_max(),
            shrinkage: first.shrinkage(),
            n_features: m.n_features(),
            classes: m.classes.clone(),
            ensembles,
        }
    }

    pub fn into_model(self) -> Result<Model, ModelIoError> {
        let schema = |pointer: String, message: &str| ModelIoError::SchemaError {
            pointer,
            message: message.into(),
        };
        if self.ensembles.is_empty() {
            return Err(schema("/ensembles".into(), "at least one ensemble is required"));
        }
        if self.classes.len() != self.ensembles.len() {
            return Err(schema("/classes".into(), "one class per ensemble is required"));
        }
        if self.task == Task::Binary && self.ensembles.len() != 1 {
            return Err(schema("/ensembles".into(), "a binary model has exactly one ensemble"));
        }
        let mut out = Vec::with_capacity(self.ensembles.len());
        for (i, (rec, &class)) in self.ensembles.into_iter().zip(&self.classes).enumerate() {
            if rec.class != class {
                return Err(schema(format!("/ensembles/{i}/class"), "does not match the class list"));
            }
            let e = match (self.model_kind, rec.stumps, rec.trees) {
                (ModelKind::Stumps, Some(s), None) => {
                    let mut e = StumpEnsemble::from_stumps(self.n_features, s, self.loss_kind, self.eps_trained, self.w_max)?;
                    e.shrinkage = self.shrinkage;
                    Ensemble::Stumps(e)
                }
                (ModelKind::Trees, None, Some(t)) => Ensemble::Trees(TreeEnsemble::from_trees(
                    self.n_features,
                    t,
                    self.loss_kind,
                    self.eps_trained,
                    self.w_max,
                    self.shrinkage,
                )?),
                (ModelKind::Stumps, ..) => return Err(schema(format!("/ensembles/{i}"), "expected only a 'stumps' list")),
                (ModelKind::Trees, ..) => return Err(schema(format!("/ensembles/{i}"), "expected only a 'trees' list")),
            };
            out.push(e);
        }
        Ok(Model {
            task: self.task,
            classes: self.classes,
            ensembles: out,
        })
    }
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut s = String::new();
    for seg in path.iter() {
        s.push('/');
        match seg {
            Segment::Seq { index } => s.push_str(&index.to_string()),
            Segment::Map { key } => s.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => s.push_str(variant),
            Segment::Unknown => s.push('?'),
        }
    }
    if s.is_empty() {
        s.push('/');
    }
    s
}

/// Parses a model document.
pub fn model_from_json(text: &str) -> Result<Model, ModelIoError> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| ModelIoError::SchemaError {
        pointer: "/".into(),
        message: e.to_string(),
    })?;
    match probe.format_version {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(ModelIoError::UnsupportedVersion(v)),
        None => {
            return Err(ModelIoError::SchemaError {
                pointer: "/format_version".into(),
                message: "missing field".into(),
            })
        }
    }
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ModelFile = serde_path_to_error::deserialize(de).map_err(|e| ModelIoError::SchemaError {
        pointer: pointer(e.path()),
        message: e.inner().to_string(),
    })?;
    file.into_model()
}

pub fn model_to_json(m: &Model) -> String {
    serde_json::to_string_pretty(&ModelFile::from_model(m)).expect("model serializes")
}

pub fn save_model(m: &Model, path: &Path) -> Result<(), ModelIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(model_to_json(m).as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model, ModelIoError> {
    let mut text = String::new();
    std::io::Read::read_to_string(&mut BufReader::new(File::open(path)?), &mut text)?;
    model_from_json(&text)
}

/// One row of an eps sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub eps: f64,
    pub te: f64,
    pub lrte: f64,
    pub urte: f64,
    pub rte_exact: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `thresholds.csv` and `split_counts.csv`, plus `metrics.csv` and
/// `report.csv` when a report is given and `sweep.csv` when sweep rows are
/// given. Returns the written paths.
pub fn export_report(
    model: &Model,
    report: Option<&RobustnessReport>,
    sweep: Option<&[SweepRow]>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ModelIoError> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let splits = model.split_points();

    let path = out_dir.join("thresholds.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["coord", "threshold"])?;
    for (c, t) in &splits {
        w.write_record([c.to_string(), t.to_string()])?;
    }
    w.flush()?;
    written.push(path);

    let path = out_dir.join("split_counts.csv");
    let mut counts = vec![0usize; model.n_features()];
    for (c, _) in &splits {
        counts[*c] += 1;
    }
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["coord", "count"])?;
    for (c, n) in counts.iter().enumerate() {
        w.write_record([c.to_string(), n.to_string()])?;
    }
    w.flush()?;
    written.push(path);

    if let Some(r) = report {
        let path = out_dir.join("metrics.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([
            "eps", "n", "te", "lrte", "urte", "rte_exact", "t_clean", "t_attack", "t_bound", "t_exact",
        ])?;
        w.write_record([
            r.eps.to_string(),
            r.n().to_string(),
            r.te.to_string(),
            r.lrte.to_string(),
            r.urte.to_string(),
            opt(r.rte_exact),
            r.wall_times.clean.to_string(),
            r.wall_times.attack.to_string(),
            r.wall_times.bound.to_string(),
            r.wall_times.exact.to_string(),
        ])?;
        w.flush()?;
        written.push(path);

        let path = out_dir.join("report.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["index", "label", "clean_margin", "attack_margin", "bound_margin", "exact_margin"])?;
        for p in &r.per_point {
            w.write_record([
                p.index.to_string(),
                p.label.to_string(),
                p.clean_margin.to_string(),
                p.attack_margin.to_string(),
                p.bound_margin.to_string(),
                opt(p.exact_margin),
            ])?;
        }
        // error fractions in the margin columns
        w.write_record([
            "summary".to_string(),
            String::new(),
            r.te.to_string(),
            r.lrte.to_string(),
            r.urte.to_string(),
            opt(r.rte_exact),
        ])?;
        w.flush()?;
        written.push(path);
    }

    if let Some(rows) = sweep {
        let path = out_dir.join("sweep.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["eps", "te", "lrte", "urte", "rte_exact"])?;
        for s in rows {
            w.write_record([
                s.eps.to_string(),
                s.te.to_string(),
                s.lrte.to_string(),
                s.urte.to_string(),
                opt(s.rte_exact),
            ])?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}
