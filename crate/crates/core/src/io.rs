//! Result files. Everything is written to a temporary file in the target
//! directory and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dynamics::{Outcome, Run, Snapshot, SpectralAudit, Trajectory};
use crate::error::{Error, Result};
use crate::sweep::csv_err;

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("result types serialize");
    out.push(b'\n');
    out
}

/// `t, g, h, max_I, total_I, S_probe_1..P`.
pub fn series_csv(tr: &Trajectory) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["t", "g", "h", "max_I", "total_I"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=tr.probe_positions.len()).map(|p| format!("S_probe_{p}")));
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..tr.len() {
        let mut rec = vec![
            tr.t[k].to_string(),
            tr.g[k].to_string(),
            tr.h[k].to_string(),
            tr.max_i[k].to_string(),
            tr.total_i[k].to_string(),
        ];
        rec.extend(tr.s_probe[k].iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// `x, S, I`.
pub fn snapshot_csv(s: &Snapshot) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "S", "I"]).map_err(csv_err)?;
    for k in 0..s.x.len() {
        w.write_record([s.x[k].to_string(), s.s[k].to_string(), s.i[k].to_string()]).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn snapshot_name(t: f64) -> String {
    format!("snapshot_{t:.4}.csv")
}

#[derive(Debug, Serialize)]
pub struct OutcomeReport<'a> {
    #[serde(flatten)]
    pub outcome: &'a Outcome,
    pub spectral_audit: &'a SpectralAudit,
    pub probes: &'a [f64],
    pub final_s_probe: &'a [f64],
    pub bound: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub max_i_seen: f64,
    pub max_leak_rate: f64,
    pub dt: f64,
    pub config_hash: &'a str,
}

/// Writes `series.csv`, one `snapshot_<t>.csv` per snapshot, and
/// `outcome.json` into `dir`. Returns the written paths.
pub fn write_run(dir: &Path, run: &Run, audit: &SpectralAudit, dt: f64, config_hash: &str) -> Result<Vec<PathBuf>> {
    let tr = &run.trajectory;
    let mut written = Vec::new();
    let series = dir.join("series.csv");
    atomic_write(&series, &series_csv(tr)?)?;
    written.push(series);
    for s in &tr.snapshots {
        let p = dir.join(snapshot_name(s.t));
        atomic_write(&p, &snapshot_csv(s)?)?;
        written.push(p);
    }
    let report = OutcomeReport {
        outcome: &run.outcome,
        spectral_audit: audit,
        probes: &tr.probe_positions,
        final_s_probe: tr.s_probe.last().map_or(&[], |v| v.as_slice()),
        bound: tr.bound,
        min_s: tr.extremes.min_s,
        max_s: tr.extremes.max_s,
        max_i_seen: tr.extremes.max_i,
        max_leak_rate: tr.extremes.max_leak,
        dt,
        config_hash,
    };
    let out = dir.join("outcome.json");
    atomic_write(&out, &to_json(&report))?;
    written.push(out);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/out.txt");
        atomic_write(&p, b"first").unwrap();
        atomic_write(&p, b"second").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"second");
        // no stray temporaries left behind
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn series_columns() {
        let tr = Trajectory {
            t: vec![0.0, 1.0],
            g: vec![-1.0, -1.5],
            h: vec![1.0, 1.5],
            max_i: vec![0.1, 0.2],
            total_i: vec![0.05, 0.1],
            probe_positions: vec![0.0, 2.0],
            s_probe: vec![vec![1.0, 1.0], vec![0.9, 1.0]],
            ..Default::default()
        };
        let text = String::from_utf8(series_csv(&tr).unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,g,h,max_I,total_I,S_probe_1,S_probe_2");
        assert_eq!(lines.nth(1).unwrap(), "1,-1.5,1.5,0.2,0.1,0.9,1");
    }
}
