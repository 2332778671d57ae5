use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::chunk::{ChunkStore, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::eval::{evaluate_pair, PairReport, Summary};
use crate::volume::Region;

use super::{read_binary, write_json, JobSpec, Provenance};

/// Relative paths of every chunk store under `root`, sorted. A root that is
/// itself a store yields the single empty path.
pub fn discover_stores(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Manifest(format!("scanning {}: {e}", root.display())))?;
        if entry.file_type().is_file() && entry.file_name() == MANIFEST_FILE {
            let dir = entry.path().parent().unwrap_or(root);
            out.push(dir.strip_prefix(root).unwrap_or(dir).to_path_buf());
        }
    }
    Ok(out)
}

/// One evaluated pair; exactly one of `report` and `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub name: String,
    pub report: Option<PairReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: Vec<PairEntry>,
    pub failed: usize,
    pub plain_jaccard: Summary,
    pub warped_jaccard: Summary,
    pub topo_errors: Summary,
    pub flips: Summary,
}

impl EvalReport {
    pub fn from_pairs(pairs: Vec<PairEntry>) -> Self {
        let ok: Vec<&PairReport> = pairs.iter().filter_map(|p| p.report.as_ref()).collect();
        let stat = |f: &dyn Fn(&PairReport) -> f64| Summary::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
        Self {
            failed: pairs.len() - ok.len(),
            plain_jaccard: stat(&|r| r.plain_jaccard),
            warped_jaccard: stat(&|r| r.warped_jaccard),
            topo_errors: stat(&|r| r.topo_errors as f64),
            flips: stat(&|r| r.flips as f64),
            pairs,
        }
    }
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in &self.pairs {
            let name = if p.name.is_empty() { "." } else { &p.name };
            match (&p.report, &p.error) {
                (Some(r), _) => writeln!(
                    f,
                    "{name}\tplain_jaccard={:.6}\twarped_jaccard={:.6}\tflips={}\ttopo_errors={}\tcomponents={}/{}",
                    r.plain_jaccard, r.warped_jaccard, r.flips, r.topo_errors, r.prediction.foreground, r.label.foreground
                )?,
                (None, e) => writeln!(f, "{name}\terror={}", e.as_deref().unwrap_or("unknown"))?,
            }
        }
        writeln!(f, "plain_jaccard\t{}", self.plain_jaccard)?;
        writeln!(f, "warped_jaccard\t{}", self.warped_jaccard)?;
        writeln!(f, "topo_errors\t{}", self.topo_errors)?;
        write!(f, "failed_pairs\t{}", self.failed)
    }
}

fn evaluate_stores(pred: &Path, label: &Path, job: &JobSpec) -> Result<PairReport> {
    let p = ChunkStore::open(pred)?;
    let l = ChunkStore::open(label)?;
    if p.shape() != l.shape() {
        return Err(Error::ShapeMismatch(p.shape(), l.shape()));
    }
    let t = job.loss.threshold;
    let whole = Region::whole(p.shape());
    evaluate_pair(&read_binary(&p, whole, 0, t)?, &read_binary(&l, whole, 0, t)?, job.empty_jaccard)
}

pub const REPORT_FILE: &str = "report.json";

/// Pairs every store under the prediction root `inputs[0]` with the store at
/// the same relative path under `labels` and evaluates each pair. Failing
/// pairs are reported and skipped.
pub fn run_eval(job: &JobSpec) -> Result<EvalReport> {
    job.validate()?;
    let pred_root = job.input(0)?;
    let label_root = job
        .labels
        .as_deref()
        .ok_or_else(|| Error::InvalidParameter("eval needs --labels".into()))?;
    let names = discover_stores(pred_root)?;
    if names.is_empty() {
        return Err(Error::Manifest(format!("no datasets under {}", pred_root.display())));
    }
    let pairs = job.pool()?.map(names.len(), |i| {
        let rel = &names[i];
        let name = rel.to_string_lossy().replace('\\', "/");
        match evaluate_stores(&pred_root.join(rel), &label_root.join(rel), job) {
            Ok(r) => PairEntry {
                name,
                report: Some(r),
                error: None,
            },
            Err(e) => {
                log::warn!("{name}: {e}");
                PairEntry {
                    name,
                    report: None,
                    error: Some(e.to_string()),
                }
            }
        }
    });
    let report = EvalReport::from_pairs(pairs);
    if let Some(out) = &job.output {
        write_json(&out.join(REPORT_FILE), &report)?;
        let params = serde_json::json!({
            "labels": label_root,
            "threshold": job.loss.threshold,
            "empty_jaccard": job.empty_jaccard,
        });
        Provenance::new("eval", job, params).write(out)?;
    }
    Ok(report)
}
