//! Command implementations. Each command resolves its configuration, runs
//! the corresponding core machinery, and writes data files plus a manifest
//! into the output directory.

use std::path::Path;
use std::time::SystemTime;

use serde_json::json;

use crate::config::Resolved;
use crate::output;
use wfident_core::baseline::{profile_likelihood_blood, timing_compare, ForwardProblem};
use wfident_core::identifiability::{
    eq_map, hyperparam_scan, min_q_map, run_sweep, run_sweep_with_records, ReplicateRecord,
    SweepConfig,
};
use wfident_core::noise::{corrupt_with, replicate_seed, sigma_for};
use wfident_core::testfn::{matrix_rank, rank_diagnostics};
use wfident_core::wendy::{irls_estimate, NoiseSpec};

pub type CmdResult = Result<(), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn sweep_config(cfg: &Resolved) -> SweepConfig {
    let mut sc = SweepConfig::new(cfg.setup.clone());
    sc.e_grid = cfg.e_grid.clone();
    sc.q_grid = cfg.q_grid.clone();
    sc.replicates = cfg.replicates;
    sc.noise_kind = cfg.noise_kind;
    sc.lognormal_scaling = cfg.lognormal_scaling;
    sc.master_seed = cfg.seed;
    sc.estimator = cfg.estimator;
    sc.irls = cfg.irls;
    sc.oe = cfg.oe;
    sc
}

pub fn simulate(cfg: &Resolved, out: &Path, started: SystemTime, threads: Option<usize>) -> CmdResult {
    let traj = cfg.setup.truth_trajectory().map_err(err)?;
    let mut csv = String::from("t");
    for i in 0..cfg.setup.ode.state_dim() {
        csv.push_str(&format!(",x{}", i + 1));
    }
    csv.push('\n');
    for (m, t) in cfg.setup.grid.points().iter().enumerate() {
        csv.push_str(&format!("{t}"));
        for v in traj.row(m) {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    output::atomic_write(&output::out_path(out, "trajectory.csv"), csv.as_bytes())
        .map_err(err)?;
    write_manifest(cfg, out, "simulate", started, threads, json!(null))?;
    println!(
        "simulated {} over [{}, {}] with {} samples",
        cfg.setup.label,
        cfg.setup.grid.t0(),
        cfg.setup.grid.t1(),
        cfg.setup.grid.len()
    );
    Ok(())
}

pub fn estimate(cfg: &Resolved, out: &Path, started: SystemTime, threads: Option<usize>) -> CmdResult {
    let truth = cfg.setup.truth_observable().map_err(err)?;
    let basis = cfg.setup.basis().map_err(err)?;
    let e = cfg.extras.estimate_e;
    let seed = replicate_seed(cfg.seed, 0, cfg.extras.estimate_replicate);
    let obs = corrupt_with(
        &cfg.setup.grid,
        &truth,
        e,
        cfg.noise_kind,
        cfg.lognormal_scaling,
        seed,
    )
    .map_err(err)?;
    let sigma = sigma_for(&truth, e, cfg.noise_kind, cfg.lognormal_scaling).map_err(err)?;
    let est = irls_estimate(
        &cfg.setup.weak,
        &obs.values,
        &basis,
        &NoiseSpec::known(cfg.noise_kind, sigma),
        &cfg.irls,
    )
    .map_err(err)?;

    let names = cfg.setup.weak.unknown_names();
    let mut rows = Vec::new();
    for (i, name) in names.iter().enumerate() {
        println!(
            "{name}: {:.6e}  (truth {:.6e}, 95% CI [{:.6e}, {:.6e}])",
            est.w_hat[i], cfg.setup.true_w[i], est.ci[i].0, est.ci[i].1
        );
        rows.push(json!({
            "param": name,
            "estimate": est.w_hat[i],
            "truth": cfg.setup.true_w[i],
            "ci_lo": est.ci[i].0,
            "ci_hi": est.ci[i].1,
        }));
    }
    let summary = json!({
        "e": e,
        "seed": seed,
        "sigma": est.sigma_used,
        "converged": est.converged,
        "iterations": est.iterations,
        "estimates": rows,
    });
    output::write_json(&output::out_path(out, "estimate.json"), &summary).map_err(err)?;
    write_manifest(cfg, out, "estimate", started, threads, json!(null))?;
    Ok(())
}

pub fn sweep(
    cfg: &Resolved,
    out: &Path,
    started: SystemTime,
    threads: Option<usize>,
    timing: bool,
) -> CmdResult {
    let sc = sweep_config(cfg);
    let (result, records) = run_sweep_with_records(&sc).map_err(err)?;
    let map = eq_map(&result, &cfg.setup.true_w, &cfg.q_grid).map_err(err)?;

    if cfg.store_replicates {
        output::atomic_write(
            &output::out_path(out, "replicates.csv"),
            replicates_csv(cfg, &records).as_bytes(),
        )
        .map_err(err)?;
    }

    output::atomic_write(
        &output::out_path(out, "sweep.csv"),
        output::sweep_csv(&result, timing).as_bytes(),
    )
    .map_err(err)?;
    output::atomic_write(
        &output::out_path(out, "eqmap.csv"),
        output::eqmap_csv(&map, false).as_bytes(),
    )
    .map_err(err)?;
    output::atomic_write(
        &output::out_path(out, "eqmap_strict.csv"),
        output::eqmap_csv(&map, true).as_bytes(),
    )
    .map_err(err)?;
    output::atomic_write(
        &output::out_path(out, "relerr.dat"),
        output::relerr_dat(&result).as_bytes(),
    )
    .map_err(err)?;
    output::atomic_write(
        &output::out_path(out, "coverage.dat"),
        output::coverage_dat(&result).as_bytes(),
    )
    .map_err(err)?;
    output::atomic_write(
        &output::out_path(out, "coverage.csv"),
        output::coverage_csv(&result).as_bytes(),
    )
    .map_err(err)?;
    output::write_json(&output::out_path(out, "relerr.json"), &result).map_err(err)?;
    output::write_json(&output::out_path(out, "summary.json"), &json!({
        "param_names": result.param_names,
        "true_w": result.true_w,
        "e_grid": result.e_grid,
        "replicates": result.replicates,
        "per_e": result.per_e.iter().map(|s| json!({
            "e": s.e,
            "n_converged": s.n_converged,
            "n_failed": s.n_failed,
            "params": s.params,
        })).collect::<Vec<_>>(),
    }))
    .map_err(err)?;

    let timing_json = json!({
        "median_walltime_s": result
            .per_e
            .iter()
            .map(|s| s.median_walltime_s)
            .collect::<Vec<_>>(),
    });
    write_manifest(cfg, out, "sweep", started, threads, timing_json)?;
    let total_failed: usize = result.per_e.iter().map(|s| s.n_failed).sum();
    println!(
        "swept {} error ratios x {} replicates ({} failures recorded)",
        cfg.e_grid.len(),
        cfg.replicates,
        total_failed
    );
    Ok(())
}

pub fn param_scan(cfg: &Resolved, out: &Path, started: SystemTime, threads: Option<usize>) -> CmdResult {
    let mut points = Vec::new();
    for &w2 in &cfg.extras.param_scan_w2 {
        for &w3 in &cfg.extras.param_scan_w3 {
            if w3 > w2 {
                points.push([cfg.extras.param_scan_w1, w2, w3]);
            }
        }
    }
    let map = min_q_map(
        &points,
        cfg.extras.param_scan_points,
        &cfg.e_grid,
        &cfg.q_grid,
        cfg.replicates,
        cfg.seed,
    )
    .map_err(err)?;
    output::atomic_write(
        &output::out_path(out, "minq.csv"),
        output::minq_csv(&map).as_bytes(),
    )
    .map_err(err)?;
    output::write_json(&output::out_path(out, "minq.json"), &map).map_err(err)?;
    write_manifest(cfg, out, "param-scan", started, threads, json!(null))?;
    println!("scanned {} parameterizations", points.len());
    Ok(())
}

pub fn hyperparam(cfg: &Resolved, out: &Path, started: SystemTime, threads: Option<usize>) -> CmdResult {
    let cells = hyperparam_scan(
        &cfg.setup,
        &cfg.extras.scan_degrees,
        &cfg.extras.scan_radii,
        cfg.extras.scan_e,
        cfg.noise_kind,
        cfg.replicates,
        cfg.seed,
        &cfg.irls,
    )
    .map_err(err)?;
    let mut csv = String::from("degree,radius,mean_rel_err,admissible\n");
    for c in &cells {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            c.degree.map(|d| d.to_string()).unwrap_or_default(),
            c.radius,
            c.mean_rel_err,
            c.admissible
        ));
    }
    output::atomic_write(&output::out_path(out, "scan.csv"), csv.as_bytes()).map_err(err)?;
    output::write_json(&output::out_path(out, "scan.json"), &cells).map_err(err)?;
    let best = cells
        .iter()
        .filter(|c| c.admissible && c.mean_rel_err.is_finite())
        .min_by(|a, b| a.mean_rel_err.partial_cmp(&b.mean_rel_err).unwrap());
    if let Some(best) = best {
        println!(
            "best cell: degree {:?} radius {} (mean rel err {:.4})",
            best.degree, best.radius, best.mean_rel_err
        );
    }
    write_manifest(cfg, out, "hyperparam-scan", started, threads, json!(null))?;
    Ok(())
}

pub fn baseline(cfg: &Resolved, out: &Path, started: SystemTime, threads: Option<usize>) -> CmdResult {
    match cfg.extras.baseline_mode.as_str() {
        "timing" => {
            let table = timing_compare(
                &cfg.setup,
                cfg.extras.baseline_e,
                cfg.noise_kind,
                cfg.extras.baseline_n,
                cfg.seed,
                &cfg.irls,
                &cfg.oe,
            )
            .map_err(err)?;
            let mut csv = String::from("estimator,e,replicate,walltime_s,rel_err,converged\n");
            for row in &table.rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    row.estimator, row.e, row.replicate, row.walltime_s, row.rel_err, row.converged
                ));
            }
            output::atomic_write(&output::out_path(out, "timing.csv"), csv.as_bytes())
                .map_err(err)?;
            output::write_json(
                &output::out_path(out, "timing.json"),
                &json!({
                    "wendy_median_s": table.wendy_median_s,
                    "oe_median_s": table.oe_median_s,
                    "wendy_median_rel_err": table.wendy_median_rel_err,
                    "oe_median_rel_err": table.oe_median_rel_err,
                    "oe_failures": table.oe_failures,
                    "wendy_failures": table.wendy_failures,
                }),
            )
            .map_err(err)?;
            println!(
                "median walltime: wendy {:.3e} s, oe {:.3e} s ({} oe failures / {})",
                table.wendy_median_s, table.oe_median_s, table.oe_failures, cfg.extras.baseline_n
            );
            write_manifest(cfg, out, "baseline", started, threads, json!(null))?;
            Ok(())
        }
        "profile" => {
            if cfg.setup.label != "blood_diffusion" {
                return Err("profile mode is implemented for the blood model".into());
            }
            let truth = cfg.setup.truth_observable().map_err(err)?;
            let e = cfg.extras.baseline_e;
            let seed = replicate_seed(cfg.seed, 0, cfg.extras.profile_seed_replicate);
            let obs = corrupt_with(
                &cfg.setup.grid,
                &truth,
                e,
                cfg.noise_kind,
                cfg.lognormal_scaling,
                seed,
            )
            .map_err(err)?;
            let problem = ForwardProblem::from_setup(&cfg.setup);
            let idx = cfg.extras.profile_param;
            if idx > 2 {
                return Err(format!("profile.param must be 0..=2, got {idx}"));
            }
            let w = [
                cfg.setup.true_w[0],
                cfg.setup.true_w[1],
                cfg.setup.true_w[2],
            ];
            let lo = cfg.extras.profile_lo.unwrap_or(0.25 * w[idx]);
            let hi = cfg.extras.profile_hi.unwrap_or(3.0 * w[idx]);
            let n = cfg.extras.profile_points.max(3);
            let grid: Vec<f64> = (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect();
            let curve =
                profile_likelihood_blood(&problem, &obs.values, idx, &grid, w, &cfg.oe)
                    .map_err(err)?;
            let mut dat = String::from("# fixed_value objective threshold\n");
            for (v, o) in curve.grid.iter().zip(curve.objective.iter()) {
                match o {
                    Some(o) => dat.push_str(&format!("{v} {o} {}\n", curve.threshold)),
                    None => dat.push_str(&format!("{v} nan {}\n", curve.threshold)),
                }
            }
            output::atomic_write(
                &output::out_path(out, &format!("profile_w{}.dat", idx + 1)),
                dat.as_bytes(),
            )
            .map_err(err)?;
            output::write_json(
                &output::out_path(out, &format!("profile_w{}.json", idx + 1)),
                &curve,
            )
            .map_err(err)?;
            println!(
                "profiled w{} on [{lo}, {hi}]: CI = ({:?}, {:?})",
                idx + 1,
                curve.ci.0,
                curve.ci.1
            );
            write_manifest(cfg, out, "baseline", started, threads, json!(null))?;
            Ok(())
        }
        other => Err(format!("unknown baseline.mode '{other}'")),
    }
}

pub fn rank_check(cfg: &Resolved, out: &Path, started: SystemTime, threads: Option<usize>) -> CmdResult {
    let basis = cfg.setup.basis().map_err(err)?;
    let ranks = rank_diagnostics(&basis, 1e-12);
    let truth = cfg.setup.truth_observable().map_err(err)?;
    let sys = cfg.setup.weak.assemble(&truth, &basis).map_err(err)?;
    let g_rank = matrix_rank(&sys.g, 1e-12);
    println!(
        "rank(Phi) = {}, rank(Phi') = {}, rank(Phi'') = {} (K = {})",
        ranks.rank0,
        ranks.rank1,
        ranks.rank2,
        basis.k()
    );
    println!(
        "rank(G) = {} of {} unknowns (condition number {:.3e})",
        g_rank,
        sys.n_unknowns(),
        sys.condition_number
    );
    output::write_json(
        &output::out_path(out, "ranks.json"),
        &json!({
            "phi_ranks": [ranks.rank0, ranks.rank1, ranks.rank2],
            "k": basis.k(),
            "g_rank": g_rank,
            "n_unknowns": sys.n_unknowns(),
            "condition_number": sys.condition_number,
        }),
    )
    .map_err(err)?;
    write_manifest(cfg, out, "rank-check", started, threads, json!(null))?;
    if g_rank < sys.n_unknowns() || ranks.rank0 < basis.k() || ranks.rank1 < basis.k() {
        return Err("rank deficiency detected".into());
    }
    Ok(())
}

// Raw per-replicate estimates in long form; walltimes are intentionally
// omitted so the file is reproducible.
fn replicates_csv(cfg: &Resolved, records: &[ReplicateRecord]) -> String {
    let names = cfg.setup.weak.unknown_names();
    let mut outp = String::from("e,replicate,seed,param,estimate,ci_lo,ci_hi,converged,error\n");
    for rec in records {
        let e = cfg.e_grid[rec.e_index];
        match (&rec.w_hat, &rec.ci) {
            (Some(w), ci) => {
                for (i, name) in names.iter().enumerate() {
                    let (lo, hi) = match ci {
                        Some(ci) => (ci[i].0.to_string(), ci[i].1.to_string()),
                        None => (String::new(), String::new()),
                    };
                    outp.push_str(&format!(
                        "{},{},{},{},{},{},{},{},\n",
                        e, rec.replicate, rec.seed, name, w[i], lo, hi, rec.converged
                    ));
                }
            }
            (None, _) => {
                outp.push_str(&format!(
                    "{},{},{},,,,,{},{}\n",
                    e,
                    rec.replicate,
                    rec.seed,
                    rec.converged,
                    rec.error.clone().unwrap_or_default().replace(',', ";")
                ));
            }
        }
    }
    outp
}

pub fn write_manifest(
    cfg: &Resolved,
    out: &Path,
    command: &str,
    started: SystemTime,
    threads: Option<usize>,
    timing: serde_json::Value,
) -> CmdResult {
    let manifest = output::manifest(command, &cfg.raw, cfg.seed, threads, started, timing);
    output::write_json(&output::out_path(out, "manifest.json"), &manifest).map_err(err)
}

