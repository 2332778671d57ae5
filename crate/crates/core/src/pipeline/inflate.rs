use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::chunk::chunk_write;
use crate::error::{Error, Result};
use crate::inflate::{certify, inflate_skeleton, rasterize_skeleton, Certificate, InflationSpec};
use crate::swc::parse_swc;
use crate::synth::{CorpusManifest, CORPUS_MANIFEST};
use crate::topology::TopologyCounts;
use crate::volume::Shape;

use super::{write_json, JobSpec, Provenance};

/// `(name, path)` of every `.swc` file among `inputs`, where directories are
/// searched recursively. Names are paths relative to the input without the
/// extension; results are sorted by name within each input.
pub fn discover_swc(inputs: &[PathBuf]) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_file() {
            let stem = input.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.push((stem, input.clone()));
            continue;
        }
        let mut found = Vec::new();
        for entry in WalkDir::new(input).sort_by_file_name() {
            let entry = entry.map_err(|e| Error::Manifest(format!("scanning {}: {e}", input.display())))?;
            let path = entry.path();
            if entry.file_type().is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("swc")) {
                let rel = path.strip_prefix(input).unwrap_or(path).with_extension("");
                found.push((rel.to_string_lossy().replace('\\', "/"), path.to_path_buf()));
            }
        }
        if found.is_empty() {
            return Err(Error::Manifest(format!("no .swc files under {}", input.display())));
        }
        out.extend(found);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflateEntry {
    pub name: String,
    pub source: PathBuf,
    pub trees: usize,
    pub counts: Option<TopologyCounts>,
    pub certificate: Option<Certificate>,
    pub error: Option<String>,
}

impl InflateEntry {
    /// Certified, and one foreground component per traced tree.
    pub fn passed(&self) -> bool {
        self.certificate.is_some_and(|c| c.passed()) && self.counts.is_some_and(|c| c.foreground == self.trees)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflateReport {
    pub spec: InflationSpec,
    pub entries: Vec<InflateEntry>,
    pub passed: usize,
    pub failed: usize,
}

pub const INFLATE_REPORT_FILE: &str = "inflate_report.json";

fn grid_spec(job: &JobSpec) -> Result<InflationSpec> {
    let corpus = job
        .inputs
        .iter()
        .map(|p| p.join(CORPUS_MANIFEST))
        .find(|p| p.is_file())
        .map(|p| CorpusManifest::load(p.parent().unwrap_or(Path::new("."))))
        .transpose()?;
    let shape = job
        .inflate
        .shape
        .or(corpus.as_ref().map(|c| c.template.shape))
        .ok_or_else(|| Error::InvalidParameter("inflate needs a target shape".into()))?;
    let voxel_size = job
        .inflate
        .voxel_size
        .or(job.voxel_size)
        .or(corpus.as_ref().map(|c| c.template.voxel_size))
        .unwrap_or_default();
    Ok(InflationSpec {
        radius: job.inflate.radius,
        shape,
        voxel_size,
    })
}

fn inflate_one(name: &str, path: &Path, spec: &InflationSpec, out: &Path, chunk: Shape) -> (usize, Result<(TopologyCounts, Certificate)>) {
    let skeleton = match fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))
        .and_then(|t| parse_swc(&t))
    {
        Ok(s) => s,
        Err(e) => return (0, Err(e)),
    };
    let trees = skeleton.tree_count();
    let result = (|| {
        let centerline = rasterize_skeleton(&skeleton, spec.shape, spec.voxel_size)?;
        let inflation = inflate_skeleton(&skeleton, spec)?;
        let cert = certify(&centerline, &inflation);
        chunk_write(&inflation.label, chunk, out.join(name))?;
        Ok((inflation.after, cert))
    })();
    (trees, result)
}

/// Inflates every SWC among the inputs into a label dataset under
/// `output/<name>`, certifying each result. Unreadable or out-of-grid traces
/// are reported and skipped.
pub fn run_inflate(job: &JobSpec) -> Result<InflateReport> {
    job.validate()?;
    let out = job.output()?;
    let spec = grid_spec(job)?;
    let chunk = job.patch.unwrap_or(Shape::cube(64));
    let files = discover_swc(&job.inputs)?;
    let entries = job.pool()?.map(files.len(), |i| {
        let (name, path) = &files[i];
        let (trees, result) = inflate_one(name, path, &spec, out, chunk);
        let mut entry = InflateEntry {
            name: name.clone(),
            source: path.clone(),
            trees,
            counts: None,
            certificate: None,
            error: None,
        };
        match result {
            Ok((counts, cert)) => {
                log::info!(
                    "{name}: {} voxels added, simple={}, counts preserved={}, components={}/{trees}",
                    cert.additions,
                    cert.all_simple,
                    cert.counts_preserved,
                    counts.foreground
                );
                entry.counts = Some(counts);
                entry.certificate = Some(cert);
            }
            Err(e) => {
                log::warn!("{name}: {e}");
                entry.error = Some(e.to_string());
            }
        }
        entry
    });
    let passed = entries.iter().filter(|e| e.passed()).count();
    let report = InflateReport {
        spec,
        failed: entries.len() - passed,
        passed,
        entries,
    };
    write_json(&out.join(INFLATE_REPORT_FILE), &report)?;
    let params = serde_json::json!({ "inflation": spec, "chunk_shape": chunk });
    Provenance::new("inflate", job, params).write(out)?;
    Ok(report)
}
