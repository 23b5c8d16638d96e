//! Output plumbing: atomic file writes, CSV/plot-data emission and the run
//! manifest.
//!
//! Data files are deterministic given (config, seed); wall-clock quantities
//! live only in the manifest, so re-running a command reproduces every data
//! file byte for byte at any thread count.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;
use wfident_core::identifiability::{EqMap, MinQMap, SweepResult};

/// Write via a temp file in the same directory plus rename, so interrupted
/// runs never leave truncated files behind.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// Sweep CSV per the interface contract: one row per (e, parameter).
///
/// The walltime column is part of the schema but is emitted as 0 unless
/// timing mode is on: measured times are not reproducible across runs, and
/// the data files are required to be.
pub fn sweep_csv(result: &SweepResult, include_timing: bool) -> String {
    let mut out = String::from("e,param,mse,rel_err,coverage,n_converged,median_walltime_s\n");
    for stats in &result.per_e {
        for (i, name) in result.param_names.iter().enumerate() {
            let p = &stats.params[i];
            let wall = if include_timing {
                stats.median_walltime_s
            } else {
                0.0
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                stats.e, name, p.mse, p.rel_err, p.coverage, stats.n_converged, wall
            ));
        }
    }
    out
}

/// 0/1 grid with e rows and q columns.
pub fn eqmap_csv(map: &EqMap, strict: bool) -> String {
    let grid = if strict { &map.model_strict } else { &map.model };
    let mut out = String::from("e");
    for q in &map.q_grid {
        out.push_str(&format!(",q={q}"));
    }
    out.push('\n');
    for (e, row) in map.e_grid.iter().zip(grid.iter()) {
        out.push_str(&format!("{e}"));
        for &cell in row {
            out.push_str(if cell { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    out
}

/// Gnuplot-style relative-error curves: e column then one column per
/// parameter; rows sorted by e.
pub fn relerr_dat(result: &SweepResult) -> String {
    let mut out = String::from("# e");
    for name in &result.param_names {
        out.push_str(&format!(" rel_err_{name}"));
    }
    out.push('\n');
    for stats in &result.per_e {
        out.push_str(&format!("{}", stats.e));
        for p in &stats.params {
            out.push_str(&format!(" {}", p.rel_err));
        }
        out.push('\n');
    }
    out
}

/// Coverage curves, same layout as [`relerr_dat`].
pub fn coverage_dat(result: &SweepResult) -> String {
    let mut out = String::from("# e");
    for name in &result.param_names {
        out.push_str(&format!(" coverage_{name}"));
    }
    out.push('\n');
    for stats in &result.per_e {
        out.push_str(&format!("{}", stats.e));
        for p in &stats.params {
            out.push_str(&format!(" {}", p.coverage));
        }
        out.push('\n');
    }
    out
}

/// Long-form coverage CSV (e, param, coverage), sorted by e then parameter.
pub fn coverage_csv(result: &SweepResult) -> String {
    let mut out = String::from("e,param,coverage\n");
    for stats in &result.per_e {
        for (i, name) in result.param_names.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", stats.e, name, stats.params[i].coverage));
        }
    }
    out
}

/// Minimum-q map as CSV: one row per parameter point, one column per e.
pub fn minq_csv(map: &MinQMap) -> String {
    let mut out = String::from("w1,w2,w3");
    for e in &map.e_grid {
        out.push_str(&format!(",e={e}"));
    }
    out.push('\n');
    for (point, row) in map.points.iter().zip(map.min_q.iter()) {
        out.push_str(&format!("{},{},{}", point[0], point[1], point[2]));
        for q in row {
            match q {
                Some(q) => out.push_str(&format!(",{q}")),
                None => out.push_str(",none"),
            }
        }
        out.push('\n');
    }
    out
}

/// Manifest: resolved configuration, seed, versions and wall-clock. The one
/// deliberately non-reproducible output.
pub fn manifest(
    command: &str,
    raw: &BTreeMap<String, String>,
    seed: u64,
    threads: Option<usize>,
    started: SystemTime,
    timing_note: serde_json::Value,
) -> serde_json::Value {
    let elapsed = started.elapsed().unwrap_or_default().as_secs_f64();
    let started_unix = started
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default()
        .as_secs();
    json!({
        "command": command,
        "config": raw,
        "seed": seed,
        "threads": threads,
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": started_unix,
        "walltime_s": elapsed,
        "timing": timing_note,
    })
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
