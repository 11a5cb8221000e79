//! Run directories: `frame_%05d.csv`, `labels_%05d.csv`, `truth.csv`, `run.json`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use catenary_core::simulator::Scenario;
use catenary_core::{ParamVector, Point3, PointCloud};
use serde::{Deserialize, Serialize};

pub const TRUTH_FILE: &str = "truth.csv";
pub const RUN_FILE: &str = "run.json";

/// Metadata written next to simulated frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunInfo {
    pub config: String,
    #[serde(default)]
    pub scenario: Option<Scenario>,
}

pub struct Frame {
    pub cloud: PointCloud,
    /// Integer label per point: conductor index or -1.
    pub labels: Option<Vec<i64>>,
}

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:05}.csv"))
}

pub fn labels_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("labels_{index:05}.csv"))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))
}

pub fn write_frame(dir: &Path, cloud: &PointCloud, labels: Option<&[i64]>) -> Result<()> {
    let mut w = writer(&frame_path(dir, cloud.frame_index))?;
    w.write_record(["x", "y", "z"])?;
    for p in &cloud.points {
        w.write_record([p.x.to_string(), p.y.to_string(), p.z.to_string()])?;
    }
    w.flush()?;
    if let Some(labels) = labels {
        let mut w = writer(&labels_path(dir, cloud.frame_index))?;
        w.write_record(["label"])?;
        for l in labels {
            w.write_record([l.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn reader(path: &Path, header: &[&str]) -> Result<csv::Reader<fs::File>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let found: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        bail!("{}: expected header {:?}, found {:?}", path.display(), header.join(","), found.join(","));
    }
    Ok(r)
}

fn parse_f64(s: &str, path: &Path) -> Result<f64> {
    s.trim()
        .parse()
        .with_context(|| format!("{}: not a number: {s:?}", path.display()))
}

pub fn read_frame(dir: &Path, index: usize) -> Result<Frame> {
    let path = frame_path(dir, index);
    let mut points = Vec::new();
    for rec in reader(&path, &["x", "y", "z"])?.records() {
        let rec = rec?;
        if rec.len() != 3 {
            bail!("{}: expected 3 columns, found {}", path.display(), rec.len());
        }
        points.push(Point3::new(
            parse_f64(&rec[0], &path)?,
            parse_f64(&rec[1], &path)?,
            parse_f64(&rec[2], &path)?,
        ));
    }
    let lpath = labels_path(dir, index);
    let labels = if lpath.exists() {
        let mut labels = Vec::new();
        for rec in reader(&lpath, &["label"])?.records() {
            let rec = rec?;
            labels.push(rec[0].trim().parse::<i64>().with_context(|| format!("{}: bad label", lpath.display()))?);
        }
        if labels.len() != points.len() {
            bail!("{}: {} labels for {} points", lpath.display(), labels.len(), points.len());
        }
        Some(labels)
    } else {
        None
    };
    Ok(Frame {
        cloud: PointCloud::new(points, index),
        labels,
    })
}

/// Frame indices present in `dir`, ascending.
pub fn frame_indices(dir: &Path) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(idx) = name.strip_prefix("frame_").and_then(|s| s.strip_suffix(".csv")) {
            if let Ok(i) = idx.parse() {
                out.push(i);
            }
        }
    }
    if out.is_empty() {
        bail!("no frame_*.csv files in {}", dir.display());
    }
    out.sort_unstable();
    Ok(out)
}

pub fn read_frames(dir: &Path) -> Result<Vec<Frame>> {
    frame_indices(dir)?.into_iter().map(|i| read_frame(dir, i)).collect()
}

pub fn param_header(l: usize) -> Vec<String> {
    let mut h: Vec<String> = ["x_o", "y_o", "z_o", "psi", "a"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=l).map(|i| format!("delta_{i}")));
    h
}

pub fn write_truth(dir: &Path, truth: &ParamVector) -> Result<()> {
    let mut w = writer(&dir.join(TRUTH_FILE))?;
    w.write_record(param_header(truth.deltas.len()))?;
    w.write_record(truth.to_vec().iter().map(f64::to_string))?;
    w.flush()?;
    Ok(())
}

pub fn read_truth(dir: &Path) -> Result<Option<ParamVector>> {
    let path = dir.join(TRUTH_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let mut r = csv::Reader::from_path(&path)?;
    let n = r.headers()?.len();
    if n < 5 || r.headers()?.iter().collect::<Vec<_>>() != param_header(n - 5) {
        bail!("{}: unexpected header", path.display());
    }
    let Some(rec) = r.records().next() else {
        bail!("{}: no data row", path.display());
    };
    let values = rec?.iter().map(|s| parse_f64(s, &path)).collect::<Result<Vec<_>>>()?;
    Ok(Some(ParamVector::from_slice(&values)?))
}

pub fn write_run_info(dir: &Path, info: &RunInfo) -> Result<()> {
    let mut text = serde_json::to_string_pretty(info)?;
    text.push('\n');
    fs::write(dir.join(RUN_FILE), text)?;
    Ok(())
}

pub fn read_run_info(dir: &Path) -> Result<Option<RunInfo>> {
    let path = dir.join(RUN_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
}
