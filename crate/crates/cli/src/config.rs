//! Key = value configuration files with a fixed schema.
//!
//! One flat namespace of dotted keys; `#` starts a comment; later
//! assignments win, and command-line `--set key=value` overrides win over
//! file values. Unknown keys are rejected with the offending key named.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use wfident_core::identifiability::EstimatorKind;
use wfident_core::models::{BloodDiffusionParams, TimeGrid};
use wfident_core::noise::{LognormalScaling, NoiseKind};
use wfident_core::presets::{self, ExperimentSetup};
use wfident_core::testfn::TestFunctionFamily;
use wfident_core::wendy::{CovarianceForm, IrlsOptions};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

/// Every key the schema accepts, with a one-line meaning.
pub const KNOWN_KEYS: &[(&str, &str)] = &[
    ("model", "blood_diffusion | sir"),
    ("points", "number of observation times (M+1)"),
    ("window.t0", "observation window start"),
    ("window.t1", "observation window end"),
    ("blood.k12", "blood->tissue rate"),
    ("blood.k21", "tissue->blood rate"),
    ("blood.ve", "saturable elimination rate"),
    ("blood.w", "weak parameterization w1,w2,w3 (overrides the k rates)"),
    ("blood.x1_0", "initial blood concentration"),
    ("blood.x2_0", "initial tissue concentration"),
    ("sir.beta", "transmission rate"),
    ("sir.alpha", "recovery rate"),
    ("sir.n", "population size"),
    ("sir.i0", "initial infected count"),
    ("basis.family", "polynomial | cinf | hartley"),
    ("basis.degree", "polynomial degree (even, >= 4)"),
    ("basis.eta", "bump shape parameter"),
    ("basis.radius", "support radius"),
    ("basis.k", "number of test functions"),
    ("noise.kind", "additive | lognormal"),
    ("noise.lognormal_scaling", "logrms | direct"),
    ("sweep.e_grid", "error ratios: comma list or lo:step:hi"),
    ("sweep.q_grid", "estimator error ratios: comma list or lo:step:hi"),
    ("sweep.replicates", "datasets per error ratio (D)"),
    ("sweep.store_replicates", "persist raw per-replicate estimates (true/false)"),
    ("estimator", "wendy | oe"),
    ("irls.max_iter", "reweighting iteration cap"),
    ("irls.tol", "relative step tolerance"),
    ("irls.covariance", "sandwich | gls"),
    ("oe.max_iter", "output-error iteration cap"),
    ("oe.init_spread", "lognormal spread of perturbed initial guesses"),
    ("seed", "master seed"),
    ("estimate.e", "error ratio for the single-estimate command"),
    ("estimate.replicate", "replicate index for the single-estimate command"),
    ("scan.degrees", "hyperparameter scan: polynomial degrees"),
    ("scan.radii", "hyperparameter scan: support radii"),
    ("scan.e", "hyperparameter scan: error ratio"),
    ("param_scan.w1", "parameter scan: fixed w1"),
    ("param_scan.w2", "parameter scan: w2 values"),
    ("param_scan.w3", "parameter scan: w3 values"),
    ("param_scan.points", "parameter scan: observations per sweep"),
    ("baseline.mode", "timing | profile"),
    ("baseline.n", "timing replicates"),
    ("baseline.e", "timing/profile error ratio"),
    ("profile.param", "profiled parameter index (0-based)"),
    ("profile.lo", "profile grid start"),
    ("profile.hi", "profile grid end"),
    ("profile.points", "profile grid size"),
    ("profile.seed_replicate", "replicate index of the profiled dataset"),
];

/// Raw parsed key/value map.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    pub values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            check_key(&key)?;
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config '{}': {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let Some((key, value)) = item.split_once('=') else {
                return Err(ConfigError(format!(
                    "--set expects key=value, got '{item}'"
                )));
            };
            let key = key.trim().to_string();
            check_key(&key)?;
            self.values.insert(key, value.trim().to_string());
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| ConfigError(format!("key '{key}': expected a number, got '{v}'")))
            })
            .transpose()
    }

    fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| ConfigError(format!("key '{key}': expected an integer, got '{v}'")))
            })
            .transpose()
    }

    fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| ConfigError(format!("key '{key}': expected an integer, got '{v}'")))
            })
            .transpose()
    }
}

fn check_key(key: &str) -> Result<()> {
    if KNOWN_KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(ConfigError(format!("unknown configuration key '{key}'")))
    }
}

/// Grid syntax: either "a,b,c" or "lo:step:hi" (inclusive of hi up to a half
/// step of rounding slack).
pub fn parse_grid(text: &str, key: &str) -> Result<Vec<f64>> {
    let parse_one = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| ConfigError(format!("key '{key}': expected a number, got '{s}'")))
    };
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let lo = parse_one(parts[0])?;
        let step = parse_one(parts[1])?;
        let hi = parse_one(parts[2])?;
        if step <= 0.0 || hi < lo {
            return Err(ConfigError(format!("key '{key}': bad range '{text}'")));
        }
        let mut grid = Vec::new();
        let n = ((hi - lo) / step + 0.5).floor() as usize;
        for i in 0..=n {
            grid.push(lo + i as f64 * step);
        }
        Ok(grid)
    } else {
        text.split(',').map(parse_one).collect()
    }
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub setup: ExperimentSetup,
    pub e_grid: Vec<f64>,
    pub q_grid: Vec<f64>,
    pub replicates: usize,
    pub store_replicates: bool,
    pub noise_kind: NoiseKind,
    pub lognormal_scaling: LognormalScaling,
    pub estimator: EstimatorKind,
    pub irls: IrlsOptions,
    pub oe: wfident_core::baseline::OeOptions,
    pub seed: u64,
    pub raw: BTreeMap<String, String>,
    pub extras: Extras,
}

/// Command-specific knobs resolved alongside the core experiment.
#[derive(Debug, Clone)]
pub struct Extras {
    pub estimate_e: f64,
    pub estimate_replicate: usize,
    pub scan_degrees: Vec<usize>,
    pub scan_radii: Vec<f64>,
    pub scan_e: f64,
    pub param_scan_w1: f64,
    pub param_scan_w2: Vec<f64>,
    pub param_scan_w3: Vec<f64>,
    pub param_scan_points: usize,
    pub baseline_mode: String,
    pub baseline_n: usize,
    pub baseline_e: f64,
    pub profile_param: usize,
    pub profile_lo: Option<f64>,
    pub profile_hi: Option<f64>,
    pub profile_points: usize,
    pub profile_seed_replicate: usize,
}

pub fn resolve(raw: &RawConfig) -> Result<Resolved> {
    let model = raw.get("model").unwrap_or("blood_diffusion");
    let mut setup = presets::by_name(model)
        .map_err(|e| ConfigError(e.to_string()))?;

    if let Some(n) = raw.get_usize("points")? {
        setup = setup
            .with_grid_points(n)
            .map_err(|e| ConfigError(e.to_string()))?;
    }
    let t0 = raw.get_f64("window.t0")?.unwrap_or(setup.grid.t0());
    let t1 = raw.get_f64("window.t1")?.unwrap_or(setup.grid.t1());
    if (t0, t1) != (setup.grid.t0(), setup.grid.t1()) {
        setup.grid =
            TimeGrid::uniform(t0, t1, setup.grid.len()).map_err(|e| ConfigError(e.to_string()))?;
    }

    match model {
        "blood_diffusion" => {
            let params = if let Some(wtext) = raw.get("blood.w") {
                let w = parse_grid(wtext, "blood.w")?;
                if w.len() != 3 {
                    return Err(ConfigError("key 'blood.w': expected three values".into()));
                }
                BloodDiffusionParams::from_weak_params([w[0], w[1], w[2]])
                    .map_err(|e| ConfigError(e.to_string()))?
            } else {
                BloodDiffusionParams::new(
                    raw.get_f64("blood.k12")?.unwrap_or(setup.mech_params[0]),
                    raw.get_f64("blood.k21")?.unwrap_or(setup.mech_params[1]),
                    raw.get_f64("blood.ve")?.unwrap_or(setup.mech_params[2]),
                )
                .map_err(|e| ConfigError(e.to_string()))?
            };
            setup.mech_params = vec![params.k12, params.k21, params.ve];
            setup.true_w = params.to_weak_params().to_vec();
            if let Some(x1) = raw.get_f64("blood.x1_0")? {
                setup.y0[0] = x1;
            }
            if let Some(x2) = raw.get_f64("blood.x2_0")? {
                setup.y0[1] = x2;
            }
        }
        "sir" => {
            let beta = raw.get_f64("sir.beta")?.unwrap_or(setup.mech_params[0]);
            let alpha = raw.get_f64("sir.alpha")?.unwrap_or(setup.mech_params[1]);
            let n = raw.get_f64("sir.n")?.unwrap_or(setup.mech_params[2]);
            let i0 = raw.get_f64("sir.i0")?.unwrap_or(setup.y0[1]);
            setup.mech_params = vec![beta, alpha, n];
            setup.y0 = vec![n - i0, i0, 0.0];
            setup.true_w = vec![beta];
            setup.weak = wfident_core::weakform::WeakObservationModel::SirIo {
                alpha,
                s0: n - i0,
            };
        }
        _ => unreachable!("validated by presets::by_name"),
    }

    if let Some(fam) = raw.get("basis.family") {
        setup.family = match fam {
            "polynomial" => TestFunctionFamily::Polynomial {
                degree: raw.get_usize("basis.degree")?.unwrap_or(default_degree(&setup)),
            },
            "cinf" => TestFunctionFamily::CInfBump {
                eta: raw.get_f64("basis.eta")?.unwrap_or(9.0),
            },
            "hartley" => TestFunctionFamily::Hartley3,
            other => {
                return Err(ConfigError(format!(
                    "key 'basis.family': unknown family '{other}'"
                )))
            }
        };
    } else if let Some(degree) = raw.get_usize("basis.degree")? {
        setup.family = TestFunctionFamily::Polynomial { degree };
    }
    if let Some(a) = raw.get_f64("basis.radius")? {
        setup.radius = a;
    }
    if let Some(k) = raw.get_usize("basis.k")? {
        setup.n_testfns = k;
    }

    let noise_kind = match raw.get("noise.kind").unwrap_or("additive") {
        "additive" => NoiseKind::AdditiveGaussian,
        "lognormal" => NoiseKind::MultiplicativeLognormal,
        other => {
            return Err(ConfigError(format!(
                "key 'noise.kind': unknown kind '{other}'"
            )))
        }
    };
    let lognormal_scaling = match raw.get("noise.lognormal_scaling").unwrap_or("logrms") {
        "logrms" => LognormalScaling::LogRms,
        "direct" => LognormalScaling::Direct,
        other => {
            return Err(ConfigError(format!(
                "key 'noise.lognormal_scaling': unknown scaling '{other}'"
            )))
        }
    };

    let e_grid = match raw.get("sweep.e_grid") {
        Some(text) => parse_grid(text, "sweep.e_grid")?,
        None => (0..=20).map(|i| i as f64 / 100.0).collect(),
    };
    let q_grid = match raw.get("sweep.q_grid") {
        Some(text) => parse_grid(text, "sweep.q_grid")?,
        None => wfident_core::identifiability::default_q_grid(),
    };
    let replicates = raw.get_usize("sweep.replicates")?.unwrap_or(1000);
    let store_replicates = match raw.get("sweep.store_replicates").unwrap_or("false") {
        "true" => true,
        "false" => false,
        other => {
            return Err(ConfigError(format!(
                "key 'sweep.store_replicates': expected true/false, got '{other}'"
            )))
        }
    };

    let estimator = EstimatorKind::by_name(raw.get("estimator").unwrap_or("wendy"))
        .map_err(|e| ConfigError(e.to_string()))?;

    let mut irls = IrlsOptions::default();
    if let Some(v) = raw.get_usize("irls.max_iter")? {
        irls.max_iter = v;
    }
    if let Some(v) = raw.get_f64("irls.tol")? {
        irls.tol = v;
    }
    if let Some(v) = raw.get("irls.covariance") {
        irls.covariance = match v {
            "sandwich" => CovarianceForm::Sandwich,
            "gls" => CovarianceForm::GlsInverse,
            other => {
                return Err(ConfigError(format!(
                    "key 'irls.covariance': unknown form '{other}'"
                )))
            }
        };
    }

    let mut oe = wfident_core::baseline::OeOptions::default();
    if let Some(v) = raw.get_usize("oe.max_iter")? {
        oe.max_iter = v;
    }
    if let Some(v) = raw.get_f64("oe.init_spread")? {
        oe.init_spread = v;
    }

    let seed = raw.get_u64("seed")?.unwrap_or(1);

    let extras = Extras {
        estimate_e: raw.get_f64("estimate.e")?.unwrap_or(0.05),
        estimate_replicate: raw.get_usize("estimate.replicate")?.unwrap_or(0),
        scan_degrees: match raw.get("scan.degrees") {
            Some(text) => parse_grid(text, "scan.degrees")?
                .into_iter()
                .map(|v| v as usize)
                .collect(),
            None => vec![6, 8, 10, 12, 14, 16, 18],
        },
        scan_radii: match raw.get("scan.radii") {
            Some(text) => parse_grid(text, "scan.radii")?,
            None => vec![setup.radius],
        },
        scan_e: raw.get_f64("scan.e")?.unwrap_or(0.10),
        param_scan_w1: raw.get_f64("param_scan.w1")?.unwrap_or(30.0),
        param_scan_w2: match raw.get("param_scan.w2") {
            Some(text) => parse_grid(text, "param_scan.w2")?,
            None => (1..=9).map(|i| i as f64).collect(),
        },
        param_scan_w3: match raw.get("param_scan.w3") {
            Some(text) => parse_grid(text, "param_scan.w3")?,
            None => (10..=20).map(|i| i as f64).collect(),
        },
        param_scan_points: raw.get_usize("param_scan.points")?.unwrap_or(400),
        baseline_mode: raw.get("baseline.mode").unwrap_or("timing").to_string(),
        baseline_n: raw.get_usize("baseline.n")?.unwrap_or(50),
        baseline_e: raw.get_f64("baseline.e")?.unwrap_or(0.05),
        profile_param: raw.get_usize("profile.param")?.unwrap_or(2),
        profile_lo: raw.get_f64("profile.lo")?,
        profile_hi: raw.get_f64("profile.hi")?,
        profile_points: raw.get_usize("profile.points")?.unwrap_or(41),
        profile_seed_replicate: raw.get_usize("profile.seed_replicate")?.unwrap_or(0),
    };

    Ok(Resolved {
        setup,
        e_grid,
        q_grid,
        replicates,
        store_replicates,
        noise_kind,
        lognormal_scaling,
        estimator,
        irls,
        oe,
        seed,
        raw: raw.values.clone(),
        extras,
    })
}

fn default_degree(setup: &ExperimentSetup) -> usize {
    match setup.family {
        TestFunctionFamily::Polynomial { degree } => degree,
        _ => 12,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_keys_by_name() {
        let err = RawConfig::parse("bogus.key = 3\n").unwrap_err();
        assert!(err.0.contains("bogus.key"), "message was: {}", err.0);
    }

    #[test]
    fn parses_ranges_and_lists() {
        assert_eq!(parse_grid("1,2,3", "k").unwrap(), vec![1.0, 2.0, 3.0]);
        let g = parse_grid("0.01:0.01:0.05", "k").unwrap();
        assert_eq!(g.len(), 5);
        assert!((g[4] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn override_wins_over_file_value() {
        let mut raw = RawConfig::parse("model = sir\nseed = 3\n").unwrap();
        raw.apply_overrides(&["seed=9".to_string()]).unwrap();
        let resolved = resolve(&raw).unwrap();
        assert_eq!(resolved.seed, 9);
        assert_eq!(resolved.setup.label, "sir");
    }

    #[test]
    fn resolves_weak_parameterization() {
        let raw = RawConfig::parse("model = blood_diffusion\nblood.w = 30,6,12\n").unwrap();
        let r = resolve(&raw).unwrap();
        assert_eq!(r.setup.true_w, vec![30.0, 6.0, 12.0]);
        // (k12, k21, ve) = (1, 5, 6)
        assert!((r.setup.mech_params[0] - 1.0).abs() < 1e-12);
        assert!((r.setup.mech_params[1] - 5.0).abs() < 1e-12);
        assert!((r.setup.mech_params[2] - 6.0).abs() < 1e-12);
    }
}
