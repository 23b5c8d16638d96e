//! Monte Carlo sweeps over observation-error ratios, (e,q)-identifiability
//! maps, minimum-q parameter-space scans, and test-function hyperparameter
//! scans.
//!
//! Replicates are independent tasks seeded by (master seed, e index,
//! replicate index); aggregation is a deterministic reduction in replicate
//! order, so results are bit-identical at any thread count.

use crate::baseline::{free_indices, oe_fit, perturbed_init, ForwardProblem, OeOptions};
use crate::error::{Error, Result};
use crate::models::BloodDiffusionParams;
use crate::noise::{corrupt_with, replicate_seed, sigma_for, LognormalScaling, NoiseKind};
use crate::presets::{example1_blood_weak, ExperimentSetup};
use crate::stats::median;
use crate::testfn::{build_basis, TestFunctionFamily, TestFunctionSpec};
use crate::wendy::{irls_estimate, IrlsOptions, NoiseSpec};
use rayon::prelude::*;
use serde::Serialize;
use std::time::Instant;

/// Which estimator a sweep runs per replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EstimatorKind {
    Wendy,
    OutputError,
}

impl EstimatorKind {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "wendy" => Ok(EstimatorKind::Wendy),
            "oe" => Ok(EstimatorKind::OutputError),
            other => Err(Error::Config(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Full sweep specification.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub setup: ExperimentSetup,
    pub e_grid: Vec<f64>,
    pub q_grid: Vec<f64>,
    /// Replicates per error ratio (D).
    pub replicates: usize,
    pub noise_kind: NoiseKind,
    pub lognormal_scaling: LognormalScaling,
    pub master_seed: u64,
    pub estimator: EstimatorKind,
    pub irls: IrlsOptions,
    pub oe: OeOptions,
}

impl SweepConfig {
    pub fn new(setup: ExperimentSetup) -> Self {
        Self {
            setup,
            e_grid: vec![0.0],
            q_grid: default_q_grid(),
            replicates: 1000,
            noise_kind: NoiseKind::AdditiveGaussian,
            lognormal_scaling: LognormalScaling::LogRms,
            master_seed: 1,
            estimator: EstimatorKind::Wendy,
            irls: IrlsOptions::default(),
            oe: OeOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("sweep requires at least one replicate".into()));
        }
        for grid in [&self.e_grid, &self.q_grid] {
            if grid.is_empty() {
                return Err(Error::Config("e and q grids must be nonempty".into()));
            }
            if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Config("e and q grids must be nonnegative".into()));
            }
            if grid.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config("e and q grids must be strictly increasing".into()));
            }
        }
        Ok(())
    }
}

/// The q grid used by the identifiability maps: 1%..100% in 1% steps.
pub fn default_q_grid() -> Vec<f64> {
    (1..=100).map(|i| i as f64 / 100.0).collect()
}

/// One replicate's outcome, in weak-parameter space.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRecord {
    pub e_index: usize,
    pub replicate: usize,
    pub seed: u64,
    pub w_hat: Option<Vec<f64>>,
    pub ci: Option<Vec<(f64, f64)>>,
    pub converged: bool,
    pub walltime_s: f64,
    pub error: Option<String>,
}

/// Aggregates for one (error ratio, parameter) cell. Non-converged
/// replicates are excluded from the moments and counted separately.
#[derive(Debug, Clone, Serialize)]
pub struct ParamStats {
    pub mse: f64,
    pub rel_err: f64,
    /// Fraction of converged replicates whose confidence interval contains
    /// the truth; NaN when the estimator produces no intervals.
    pub coverage: f64,
}

/// Aggregates at one error ratio.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorRatioStats {
    pub e: f64,
    pub n_converged: usize,
    pub n_failed: usize,
    pub median_walltime_s: f64,
    pub params: Vec<ParamStats>,
}

/// Result of a sweep: per-(e, parameter) aggregates plus the configuration
/// echoes needed to interpret them.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub param_names: Vec<String>,
    pub true_w: Vec<f64>,
    pub e_grid: Vec<f64>,
    pub replicates: usize,
    pub per_e: Vec<ErrorRatioStats>,
}

/// Mean over parameters of |w_hat - w| / |w|.
pub fn mean_rel_err(w_hat: &[f64], true_w: &[f64]) -> f64 {
    debug_assert_eq!(w_hat.len(), true_w.len());
    w_hat
        .iter()
        .zip(true_w.iter())
        .map(|(a, t)| ((a - t) / t).abs())
        .sum::<f64>()
        / true_w.len() as f64
}

/// Run the Monte Carlo sweep: simulate the truth once, then corrupt and
/// estimate `replicates` datasets at every error ratio.
///
/// Per-replicate estimation failures are recorded and excluded from the
/// aggregates; only configuration errors abort the sweep.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    Ok(run_sweep_with_records(config)?.0)
}

/// As [`run_sweep`], additionally returning the raw per-replicate records
/// (estimates, intervals, seeds, convergence flags) in deterministic
/// (e index, replicate) order.
pub fn run_sweep_with_records(
    config: &SweepConfig,
) -> Result<(SweepResult, Vec<ReplicateRecord>)> {
    config.validate()?;
    let setup = &config.setup;
    let truth = setup.truth_observable()?;
    let basis = setup.basis()?;
    let problem = ForwardProblem::from_setup(setup);
    let free = free_indices(setup);

    // Per-e noise scales fail fast on configuration problems (e.g. the
    // lognormal scaling with RMS <= 1).
    let mut sigmas = Vec::with_capacity(config.e_grid.len());
    for &e in &config.e_grid {
        sigmas.push(sigma_for(&truth, e, config.noise_kind, config.lognormal_scaling)?);
    }

    let n_e = config.e_grid.len();
    let d = config.replicates;
    let records: Vec<ReplicateRecord> = (0..n_e * d)
        .into_par_iter()
        .map(|task| {
            let e_index = task / d;
            let replicate = task % d;
            run_replicate(
                config,
                &truth,
                &basis,
                &problem,
                &free,
                e_index,
                sigmas[e_index],
                replicate,
            )
        })
        .collect();

    let result = aggregate(config, &records);
    Ok((result, records))
}

#[allow(clippy::too_many_arguments)]
fn run_replicate(
    config: &SweepConfig,
    truth: &[f64],
    basis: &crate::testfn::TestFunctionBasis,
    problem: &ForwardProblem,
    free: &[usize],
    e_index: usize,
    sigma: f64,
    replicate: usize,
) -> ReplicateRecord {
    let setup = &config.setup;
    let e = config.e_grid[e_index];
    let seed = replicate_seed(config.master_seed, e_index, replicate);
    let obs = match corrupt_with(
        &setup.grid,
        truth,
        e,
        config.noise_kind,
        config.lognormal_scaling,
        seed,
    ) {
        Ok(o) => o,
        Err(err) => {
            return ReplicateRecord {
                e_index,
                replicate,
                seed,
                w_hat: None,
                ci: None,
                converged: false,
                walltime_s: 0.0,
                error: Some(err.to_string()),
            }
        }
    };

    let start = Instant::now();
    match config.estimator {
        EstimatorKind::Wendy => {
            let noise = NoiseSpec::known(config.noise_kind, sigma);
            match irls_estimate(&setup.weak, &obs.values, basis, &noise, &config.irls) {
                Ok(est) => ReplicateRecord {
                    e_index,
                    replicate,
                    seed,
                    converged: est.converged,
                    walltime_s: start.elapsed().as_secs_f64(),
                    w_hat: Some(est.w_hat),
                    ci: Some(est.ci),
                    error: None,
                },
                Err(err) => ReplicateRecord {
                    e_index,
                    replicate,
                    seed,
                    w_hat: None,
                    ci: None,
                    converged: false,
                    walltime_s: start.elapsed().as_secs_f64(),
                    error: Some(err.to_string()),
                },
            }
        }
        EstimatorKind::OutputError => {
            let init = perturbed_init(setup, free, config.oe.init_spread, seed ^ 0x5143_a1c4);
            let fit = oe_fit(
                problem,
                &obs.values,
                &setup.mech_params,
                free,
                &init,
                None,
                &config.oe,
            );
            let w_hat = oe_weak_params(setup, &fit.params);
            ReplicateRecord {
                e_index,
                replicate,
                seed,
                converged: fit.converged,
                walltime_s: fit.walltime_s,
                w_hat: Some(w_hat),
                ci: None,
                error: None,
            }
        }
    }
}

fn oe_weak_params(setup: &ExperimentSetup, mech: &[f64]) -> Vec<f64> {
    match setup.weak {
        crate::weakform::WeakObservationModel::BloodDiffusionIo => BloodDiffusionParams {
            k12: mech[0],
            k21: mech[1],
            ve: mech[2],
        }
        .to_weak_params()
        .to_vec(),
        _ => mech.to_vec(),
    }
}

fn aggregate(config: &SweepConfig, records: &[ReplicateRecord]) -> SweepResult {
    let setup = &config.setup;
    let p = setup.true_w.len();
    let d = config.replicates;
    let mut per_e = Vec::with_capacity(config.e_grid.len());

    for (e_index, &e) in config.e_grid.iter().enumerate() {
        let slice = &records[e_index * d..(e_index + 1) * d];
        let converged: Vec<&ReplicateRecord> = slice
            .iter()
            .filter(|r| r.converged && r.w_hat.is_some())
            .collect();
        let n_converged = converged.len();
        let walltimes: Vec<f64> = slice.iter().map(|r| r.walltime_s).collect();

        let mut params = Vec::with_capacity(p);
        for i in 0..p {
            let w_true = setup.true_w[i];
            let (mut mse, mut rel) = (0.0, 0.0);
            let mut covered = 0usize;
            let mut with_ci = 0usize;
            for r in &converged {
                let w = r.w_hat.as_ref().unwrap()[i];
                mse += (w - w_true) * (w - w_true);
                rel += ((w - w_true) / w_true).abs();
                if let Some(ci) = &r.ci {
                    with_ci += 1;
                    // At e = 0 intervals are zero-width at the estimate; the
                    // degenerate convention counts them as covering.
                    if (ci[i].0 <= w_true && w_true <= ci[i].1) || e == 0.0 {
                        covered += 1;
                    }
                }
            }
            let denom = n_converged.max(1) as f64;
            params.push(ParamStats {
                mse: if n_converged > 0 { mse / denom } else { f64::NAN },
                rel_err: if n_converged > 0 { rel / denom } else { f64::NAN },
                coverage: if with_ci > 0 {
                    covered as f64 / with_ci as f64
                } else {
                    f64::NAN
                },
            });
        }

        per_e.push(ErrorRatioStats {
            e,
            n_converged,
            n_failed: d - n_converged,
            median_walltime_s: median(&walltimes),
            params,
        });
    }

    SweepResult {
        param_names: setup.weak.unknown_names().iter().map(|s| s.to_string()).collect(),
        true_w: setup.true_w.clone(),
        e_grid: config.e_grid.clone(),
        replicates: config.replicates,
        per_e,
    }
}

/// Boolean (e,q)-identifiability grids: a cell is identifiable when the
/// estimator MSE at that error ratio stays below (q * w_i)^2.
#[derive(Debug, Clone, Serialize)]
pub struct EqMap {
    pub e_grid: Vec<f64>,
    pub q_grid: Vec<f64>,
    pub param_names: Vec<String>,
    /// per_param[i][e][q]
    pub per_param: Vec<Vec<Vec<bool>>>,
    /// AND over parameters, converged-only aggregates.
    pub model: Vec<Vec<bool>>,
    /// As `model`, but error ratios with any non-converged replicate are
    /// marked non-identifiable outright.
    pub model_strict: Vec<Vec<bool>>,
}

impl EqMap {
    /// Look up the model-level cell nearest to (e, q).
    pub fn model_cell(&self, e: f64, q: f64) -> bool {
        let ei = nearest_index(&self.e_grid, e);
        let qi = nearest_index(&self.q_grid, q);
        self.model[ei][qi]
    }

    /// Smallest q in the grid at which the model-level criterion holds for
    /// the given error-ratio index.
    pub fn min_q(&self, e_index: usize) -> Option<f64> {
        self.q_grid
            .iter()
            .enumerate()
            .find(|(qi, _)| self.model[e_index][*qi])
            .map(|(_, q)| *q)
    }
}

fn nearest_index(grid: &[f64], value: f64) -> usize {
    grid.iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1 - value)
                .abs()
                .partial_cmp(&(b.1 - value).abs())
                .unwrap()
        })
        .map(|(i, _)| i)
        .unwrap()
}

/// Evaluate the (e,q) criterion on sweep aggregates.
pub fn eq_map(result: &SweepResult, true_w: &[f64], q_grid: &[f64]) -> Result<EqMap> {
    if let Some(i) = true_w.iter().position(|w| *w == 0.0) {
        return Err(Error::Config(format!(
            "(e,q) criterion is undefined for zero true parameter at index {i}"
        )));
    }
    let p = true_w.len();
    let mut per_param = vec![vec![vec![false; q_grid.len()]; result.e_grid.len()]; p];
    for i in 0..p {
        for (ei, stats) in result.per_e.iter().enumerate() {
            for (qi, &q) in q_grid.iter().enumerate() {
                let bound = (q * true_w[i]) * (q * true_w[i]);
                per_param[i][ei][qi] = stats.params[i].mse.is_finite() && stats.params[i].mse < bound;
            }
        }
    }
    let mut model = vec![vec![true; q_grid.len()]; result.e_grid.len()];
    let mut model_strict = vec![vec![true; q_grid.len()]; result.e_grid.len()];
    for (ei, stats) in result.per_e.iter().enumerate() {
        for qi in 0..q_grid.len() {
            let all = (0..p).all(|i| per_param[i][ei][qi]);
            model[ei][qi] = all;
            model_strict[ei][qi] = all && stats.n_failed == 0;
        }
    }
    Ok(EqMap {
        e_grid: result.e_grid.clone(),
        q_grid: q_grid.to_vec(),
        param_names: result.param_names.clone(),
        per_param,
        model,
        model_strict,
    })
}

/// Minimum satisfied q per parameter at one error ratio, or None when even
/// the largest q in the grid fails.
pub fn min_q_per_param(result: &SweepResult, e_index: usize, q_grid: &[f64]) -> Vec<Option<f64>> {
    result
        .true_w
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            q_grid
                .iter()
                .find(|&&q| result.per_e[e_index].params[i].mse < (q * w) * (q * w))
                .copied()
        })
        .collect()
}

/// Minimum-q scan over a grid of blood-model parameterizations: one sweep
/// per point, reporting the smallest q at which the model-level criterion
/// holds for each error ratio.
#[derive(Debug, Clone, Serialize)]
pub struct MinQMap {
    /// The scanned weak-parameter points.
    pub points: Vec<[f64; 3]>,
    pub e_grid: Vec<f64>,
    pub q_grid: Vec<f64>,
    /// min_q[point][e]; None when no q in the grid satisfies the criterion.
    pub min_q: Vec<Vec<Option<f64>>>,
}

pub fn min_q_map(
    points: &[[f64; 3]],
    n_points: usize,
    e_grid: &[f64],
    q_grid: &[f64],
    replicates: usize,
    master_seed: u64,
) -> Result<MinQMap> {
    let mut min_q = Vec::with_capacity(points.len());
    for w in points {
        let setup = example1_blood_weak(*w, n_points)?;
        let mut config = SweepConfig::new(setup);
        config.e_grid = e_grid.to_vec();
        config.q_grid = q_grid.to_vec();
        config.replicates = replicates;
        config.master_seed = master_seed;
        let result = run_sweep(&config)?;
        let map = eq_map(&result, &config.setup.true_w, q_grid)?;
        min_q.push((0..e_grid.len()).map(|ei| map.min_q(ei)).collect());
    }
    Ok(MinQMap {
        points: points.to_vec(),
        e_grid: e_grid.to_vec(),
        q_grid: q_grid.to_vec(),
        min_q,
    })
}

/// One cell of the test-function hyperparameter scan.
#[derive(Debug, Clone, Serialize)]
pub struct ScanCell {
    pub degree: Option<usize>,
    pub radius: f64,
    pub mean_rel_err: f64,
    /// False when the radius does not fit the observation window and the
    /// cell was skipped.
    pub admissible: bool,
}

/// Grid search over polynomial degree and support radius at a fixed error
/// ratio, replicating the datasets across cells so the comparison is
/// matched-noise.
#[allow(clippy::too_many_arguments)]
pub fn hyperparam_scan(
    base: &ExperimentSetup,
    degrees: &[usize],
    radii: &[f64],
    e: f64,
    kind: NoiseKind,
    replicates: usize,
    master_seed: u64,
    irls: &IrlsOptions,
) -> Result<Vec<ScanCell>> {
    let truth = base.truth_observable()?;
    let sigma = sigma_for(&truth, e, kind, LognormalScaling::LogRms)?;
    let noise = NoiseSpec::known(kind, sigma);
    let window = base.grid.t1() - base.grid.t0();

    let mut cells = Vec::new();
    for &radius in radii {
        for &degree in degrees {
            if 2.0 * radius > window {
                cells.push(ScanCell {
                    degree: Some(degree),
                    radius,
                    mean_rel_err: f64::NAN,
                    admissible: false,
                });
                continue;
            }
            let spec = TestFunctionSpec::new(TestFunctionFamily::Polynomial { degree }, radius)?;
            let basis = build_basis(&spec, base.n_testfns, &base.grid)?;
            let errs: Vec<f64> = (0..replicates)
                .into_par_iter()
                .map(|d| {
                    let seed = replicate_seed(master_seed, 0, d);
                    let obs = corrupt_with(
                        &base.grid,
                        &truth,
                        e,
                        kind,
                        LognormalScaling::LogRms,
                        seed,
                    )
                    .expect("noise scale validated above");
                    match irls_estimate(&base.weak, &obs.values, &basis, &noise, irls) {
                        Ok(est) if est.converged => mean_rel_err(&est.w_hat, &base.true_w),
                        _ => f64::NAN,
                    }
                })
                .collect();
            let ok: Vec<f64> = errs.iter().copied().filter(|v| v.is_finite()).collect();
            cells.push(ScanCell {
                degree: Some(degree),
                radius,
                mean_rel_err: if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().sum::<f64>() / ok.len() as f64
                },
                admissible: true,
            });
        }
    }
    Ok(cells)
}
