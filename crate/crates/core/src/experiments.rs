//! Scenario runners for each figure, plus CSV/JSON output.
//!
//! Every trial draws from its own ChaCha8 stream derived from the master seed,
//! the work-unit index and the trial index, so results do not depend on how
//! rayon schedules the work.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encode::{
    decode, fidelity, haar_random, measure_all, perturb_ratio, CoefficientVector, EncodingScheme,
    NoiseModel, RowMeasurement,
};
use crate::error::{Error, Result};
use crate::reconstruct::{
    simulate_and_reconstruct_with, BranchSolver, MeasurementNoise, ReconstructionReport,
};
use crate::walk::{
    classical_walk, coin_reduced_density, entanglement_entropy, evolve, position_distribution,
    step, Coin, CoinOperator, PositionDistribution, WalkState,
};

/// Master seed used when none is given.
pub const DEFAULT_SEED: u64 = 1729;
pub const DESK_TRIALS: usize = 200;
pub const PAPER_TRIALS: usize = 1000;
/// Mean fidelity above which a Fig. 6(a) cell counts toward the area fraction.
pub const AREA_THRESHOLD: f64 = 0.9;
/// Trials run on every Fig. 6(a) cell before a structurally singular scheme is skipped.
pub const PROBE_TRIALS: usize = 4;

pub const FIG3_INITIAL: &str = "0.8:-1:c0, 0.6:1:c0";
pub const FIG4_INITIAL: &str = "0.6:-2:c0, 1:0:c0, 0.8:2:c0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Fig3,
    Fig4,
    Fig5,
    Fig6a,
    Fig6b,
    Custom,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Fig3 => "fig3",
            Scenario::Fig4 => "fig4",
            Scenario::Fig5 => "fig5",
            Scenario::Fig6a => "fig6a",
            Scenario::Fig6b => "fig6b",
            Scenario::Custom => "custom",
        }
    }
}

/// Everything a scenario run depends on. Unused fields are ignored by the
/// scenarios that do not need them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub psi_deg: f64,
    /// Initial state in the `amp:pos:c0|c1` mini-language.
    pub initial: Option<String>,
    pub steps: Vec<usize>,
    pub alphas: Vec<f64>,
    pub noise_model: NoiseModel,
    pub noise_bound: f64,
    pub shots_per_basis: u64,
    pub solver: BranchSolver,
    pub trials: usize,
    pub seed: u64,
    /// Fig. 6(a) cells per axis.
    pub grid: usize,
    /// Encoded dimension for Fig. 6(a) and 6(b).
    pub dimension: usize,
    pub delta_theta_deg: f64,
    pub delta_phi_deg: f64,
    /// Fig. 6(a): also run the other noise model.
    pub compare_noise_models: bool,
    /// Fig. 6(a): extra grid resolutions for the area fraction.
    pub grid_sensitivity: Vec<usize>,
    pub output_dir: Option<PathBuf>,
}

/// 41 evenly spaced points on `[-0.98, 0.98]`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..41).map(|i| (49 * i - 980) as f64 / 1000.0).collect()
}

impl ScenarioConfig {
    pub fn for_scenario(scenario: Scenario) -> Self {
        let base = Self {
            scenario,
            psi_deg: 45.0,
            initial: None,
            steps: vec![],
            alphas: vec![],
            noise_model: NoiseModel::Relative,
            noise_bound: 0.0,
            shots_per_basis: 0,
            solver: BranchSolver::default(),
            trials: 1,
            seed: DEFAULT_SEED,
            grid: 36,
            dimension: 50,
            delta_theta_deg: 22.0,
            delta_phi_deg: 12.0,
            compare_noise_models: false,
            grid_sensitivity: vec![],
            output_dir: None,
        };
        match scenario {
            Scenario::Fig3 => Self {
                initial: Some(FIG3_INITIAL.into()),
                steps: vec![2, 4, 6],
                shots_per_basis: 100_000,
                trials: 100,
                ..base
            },
            Scenario::Fig4 => Self {
                initial: Some(FIG4_INITIAL.into()),
                steps: vec![6],
                shots_per_basis: 100_000,
                trials: 100,
                ..base
            },
            Scenario::Fig5 => Self {
                steps: vec![4, 16, 50],
                alphas: default_alpha_grid(),
                shots_per_basis: 100_000,
                trials: 50,
                ..base
            },
            Scenario::Fig6a => Self {
                noise_bound: 0.1,
                trials: DESK_TRIALS,
                compare_noise_models: true,
                ..base
            },
            Scenario::Fig6b => Self {
                dimension: 16,
                noise_bound: 0.1,
                trials: 100,
                ..base
            },
            Scenario::Custom => Self {
                steps: vec![6],
                shots_per_basis: 100_000,
                trials: 100,
                ..base
            },
        }
    }

    /// Parses a JSON config; absent fields take the defaults of its scenario.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let Value::Object(fields) = value else {
            return Err(Error::Parse("config must be a JSON object".into()));
        };
        let scenario: Scenario = match fields.get("scenario") {
            Some(s) => serde_json::from_value(s.clone())
                .map_err(|e| Error::Parse(format!("scenario: {e}")))?,
            None => return Err(Error::Parse("missing field `scenario`".into())),
        };
        let Value::Object(mut merged) = serde_json::to_value(Self::for_scenario(scenario))? else {
            unreachable!("config serializes to an object");
        };
        merged.extend(fields);
        let cfg: Self = serde_json::from_value(Value::Object(merged))
            .map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is serializable")
    }

    /// Raises trials to at least 1000.
    pub fn paper_scale(mut self) -> Self {
        self.trials = self.trials.max(PAPER_TRIALS);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parse(msg));
        CoinOperator::new(self.psi_deg).map_err(|e| Error::Parse(format!("psi_deg: {e}")))?;
        if self.trials == 0 {
            return bad("trials: must be >= 1".into());
        }
        if let Some(&a) = self.alphas.iter().find(|a| !(a.abs() < 1.0)) {
            return bad(format!("alphas: {a} outside (-1, 1)"));
        }
        if self.steps.contains(&0) {
            return bad("steps: every step count must be >= 1".into());
        }
        if !(self.noise_bound >= 0.0 && self.noise_bound < 1.0) {
            return bad(format!("noise_bound: {} outside [0, 1)", self.noise_bound));
        }
        if self.dimension == 0 {
            return bad("dimension: must be >= 1".into());
        }
        match self.scenario {
            Scenario::Fig3 | Scenario::Fig4 | Scenario::Custom => {
                if self.steps.is_empty() {
                    return bad("steps: at least one step count needed".into());
                }
                let Some(init) = &self.initial else {
                    return bad("initial: required for this scenario".into());
                };
                parse_initial(init).map_err(|e| Error::Parse(format!("initial: {e}")))?;
            }
            Scenario::Fig5 if self.alphas.is_empty() => return bad("alphas: empty grid".into()),
            Scenario::Fig6a => {
                if self.grid < 12 || self.grid_sensitivity.iter().any(|&g| g < 12) {
                    return bad("grid: resolution must be >= 12".into());
                }
                if self.trials < 50 {
                    return bad("trials: fidelity maps need >= 50 trials".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn noise(&self) -> MeasurementNoise {
        MeasurementNoise {
            shots_per_basis: self.shots_per_basis,
            ratio_bound: self.noise_bound,
            noise_model: self.noise_model,
            ..MeasurementNoise::default()
        }
    }

    fn is_noiseless(&self) -> bool {
        self.shots_per_basis == 0 && self.noise_bound == 0.0
    }
}

/// An initial state parsed from the mini-language.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedInitial {
    pub state: WalkState,
    /// Norm of the terms as written, before normalization.
    pub input_norm: f64,
}

impl ParsedInitial {
    pub fn norm_warning(&self) -> Option<String> {
        ((self.input_norm - 1.0).abs() > 1e-6)
            .then(|| format!("initial state norm {} renormalized to 1", self.input_norm))
    }
}

/// Parses `re+imj` style complex numbers: `0.6`, `-0.3+0.4j`, `2j`, `-j`.
pub fn parse_complex(s: &str) -> Result<Complex64> {
    let s = s.trim();
    let err = || Error::Parse(format!("bad complex number `{s}`"));
    let num = |t: &str| -> Result<f64> {
        match t {
            "" | "+" => Ok(1.0),
            "-" => Ok(-1.0),
            _ => t.parse::<f64>().map_err(|_| err()),
        }
    };
    let Some(body) = s.strip_suffix(['j', 'J']) else {
        return Ok(Complex64::new(s.parse::<f64>().map_err(|_| err())?, 0.0));
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'));
    match split {
        Some(i) => {
            let re: f64 = body[..i].parse().map_err(|_| err())?;
            Ok(Complex64::new(re, num(&body[i..])?))
        }
        None => Ok(Complex64::new(0.0, num(body)?)),
    }
}

/// Parses comma-separated `amplitude:position:coin` terms (`coin` is `c0` or `c1`)
/// and normalizes the result.
pub fn parse_initial(s: &str) -> Result<ParsedInitial> {
    let mut terms = Vec::new();
    for term in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let parts: Vec<&str> = term.split(':').map(str::trim).collect();
        let [amp, pos, coin] = parts[..] else {
            return Err(Error::Parse(format!(
                "term `{term}` is not amplitude:position:coin"
            )));
        };
        let pos: i64 = pos
            .parse()
            .map_err(|_| Error::Parse(format!("bad position `{pos}` in `{term}`")))?;
        let coin = match coin {
            "c0" | "0" => Coin::Zero,
            "c1" | "1" => Coin::One,
            _ => {
                return Err(Error::Parse(format!(
                    "bad coin `{coin}` in `{term}`; use c0 or c1"
                )))
            }
        };
        terms.push((parse_complex(amp)?, pos, coin));
    }
    if terms.is_empty() {
        return Err(Error::Parse("empty initial state".into()));
    }
    let mut sums: BTreeMap<(i64, Coin), Complex64> = BTreeMap::new();
    for &(amp, x, c) in &terms {
        *sums.entry((x, c)).or_default() += amp;
    }
    let input_norm = sums.values().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let state = WalkState::from_terms(terms)?;
    Ok(ParsedInitial { state, input_norm })
}

/// Independent RNG for work unit `unit`, trial `trial`.
pub fn trial_rng(seed: u64, unit: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ unit.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(trial);
    rng
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let count = xs.len();
        if count == 0 {
            return Self::default();
        }
        let mean = xs.iter().sum::<f64>() / count as f64;
        let std = if count > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, count }
    }
}

/// Tally of error kinds.
pub type FailureTally = BTreeMap<String, usize>;

fn tally<T>(results: &[Result<T>]) -> FailureTally {
    let mut out = FailureTally::new();
    for e in results.iter().filter_map(|r| r.as_ref().err()) {
        *out.entry(e.kind().to_string()).or_default() += 1;
    }
    out
}

// ---------------------------------------------------------------- Fig. 3 / 4

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub position: i64,
    pub a_theory: [f64; 2],
    pub b_theory: [f64; 2],
    pub p_theory: f64,
    pub a_re: Stat,
    pub a_im: Stat,
    pub b_re: Stat,
    pub b_im: Stat,
    pub p: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTable {
    pub n_steps: usize,
    pub rows: Vec<CoefficientRow>,
    /// Distance between the noiseless reconstruction and theory.
    pub noiseless_total_variation: f64,
    pub failures: FailureTally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkTables {
    pub initial: String,
    pub psi_deg: f64,
    pub tables: Vec<StepTable>,
}

/// `(a, b)` coefficients over the window positions.
type Branches = (Vec<Complex64>, Vec<Complex64>);

/// Rotates each reconstructed branch onto the phase of the true branch.
fn align_to_truth(report: &ReconstructionReport, truth: &WalkState) -> Branches {
    let align = |rec: &CoefficientVector, coin: Coin| {
        let overlap: Complex64 = report
            .positions
            .iter()
            .zip(rec.iter())
            .map(|(&x, r)| {
                let t = if coin == Coin::Zero {
                    truth.a(x)
                } else {
                    truth.b(x)
                };
                r.conj() * t
            })
            .sum();
        let rot = if overlap.norm() > 0.0 {
            overlap / overlap.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        rec.iter().map(|z| z * rot).collect::<Vec<_>>()
    };
    (align(&report.a, Coin::Zero), align(&report.b, Coin::One))
}

/// Theory and reconstructed coefficient tables for each requested step count.
pub fn run_walk_tables(cfg: &ScenarioConfig) -> Result<WalkTables> {
    cfg.validate()?;
    let init_text = cfg.initial.clone().unwrap_or_default();
    let initial = parse_initial(&init_text)?.state;
    let coin = CoinOperator::new(cfg.psi_deg)?;
    let noise = cfg.noise();
    let trials = if cfg.is_noiseless() { 1 } else { cfg.trials };
    let mut tables = Vec::with_capacity(cfg.steps.len());
    for (unit, &n) in cfg.steps.iter().enumerate() {
        let truth = evolve(&initial, &coin, n);
        let exact = simulate_and_reconstruct_with(
            &initial,
            cfg.psi_deg,
            n,
            MeasurementNoise::default(),
            cfg.solver,
            trial_rng(cfg.seed, 0, 0),
        )?;
        let positions = exact.positions.clone();
        let runs: Vec<Result<Branches>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let rng = trial_rng(cfg.seed, unit as u64 + 1, t as u64);
                let rep = simulate_and_reconstruct_with(
                    &initial,
                    cfg.psi_deg,
                    n,
                    noise,
                    cfg.solver,
                    rng,
                )?;
                Ok(align_to_truth(&rep, &truth))
            })
            .collect();
        let ok: Vec<&Branches> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
        let column =
            |f: &dyn Fn(&Branches) -> f64| Stat::of(&ok.iter().map(|v| f(v)).collect::<Vec<_>>());
        let rows = positions
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let (a, b) = truth.amplitude(x);
                CoefficientRow {
                    position: x,
                    a_theory: [a.re, a.im],
                    b_theory: [b.re, b.im],
                    p_theory: a.norm_sqr() + b.norm_sqr(),
                    a_re: column(&|v| v.0[i].re),
                    a_im: column(&|v| v.0[i].im),
                    b_re: column(&|v| v.1[i].re),
                    b_im: column(&|v| v.1[i].im),
                    p: column(&|v| v.0[i].norm_sqr() + v.1[i].norm_sqr()),
                }
            })
            .collect();
        tables.push(StepTable {
            n_steps: n,
            rows,
            noiseless_total_variation: exact.truth.map_or(f64::NAN, |t| t.total_variation),
            failures: tally(&runs),
        });
    }
    Ok(WalkTables {
        initial: init_text,
        psi_deg: cfg.psi_deg,
        tables,
    })
}

pub fn run_fig3(cfg: &ScenarioConfig) -> Result<WalkTables> {
    run_walk_tables(cfg)
}

pub fn run_fig4(cfg: &ScenarioConfig) -> Result<WalkTables> {
    run_walk_tables(cfg)
}

// ---------------------------------------------------------------- Fig. 5

/// Steps at which entropy convergence is checked.
pub const CONVERGENCE_STEPS: (usize, usize) = (40, 50);
/// Step count for the asymmetry, correlation and noisy overlay.
pub const REFERENCE_STEP: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub alpha: f64,
    /// Quantum spread speed at each configured step count.
    pub spread_speed: Vec<f64>,
    pub entropy: Vec<f64>,
    pub classical_spread_speed: Vec<f64>,
    pub entropy_40: f64,
    pub entropy_50: f64,
    pub spread_speed_4: f64,
    pub entropy_4: f64,
    /// Reconstructed `s(4)`, `E(4)` under the configured noise.
    pub overlay_spread_speed: Option<Stat>,
    pub overlay_entropy: Option<Stat>,
    pub overlay_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweep {
    pub steps: Vec<usize>,
    pub records: Vec<AlphaRecord>,
    /// `max |s_cl(alpha) - s_cl(-alpha)|` over mirrored grid pairs and steps.
    pub classical_asymmetry: f64,
    /// `max |s(alpha) - s(-alpha)|` at n = 4.
    pub quantum_asymmetry_4: f64,
    pub max_entropy_change_40_50: f64,
    pub min_entropy: f64,
    pub max_entropy: f64,
    pub spearman_s_entropy_4: f64,
}

/// `(alpha|-1> + sqrt(1 - alpha^2)|1>)(|0> + i|1>)/sqrt(2)`
pub fn fig5_initial(alpha: f64) -> Result<WalkState> {
    WalkState::product(
        [
            (-1, Complex64::new(alpha, 0.0)),
            (1, Complex64::new((1.0 - alpha * alpha).sqrt(), 0.0)),
        ],
        Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
        Complex64::new(0.0, std::f64::consts::FRAC_1_SQRT_2),
    )
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // ties share their average rank
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of the ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn mirrored_max(alphas: &[f64], values: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, &a) in alphas.iter().enumerate() {
        if let Some(j) = alphas.iter().position(|&b| (a + b).abs() < 1e-9) {
            worst = worst.max((values[i] - values[j]).abs());
        }
    }
    worst
}

/// Spread speed and coin entropy against `alpha`, with the classical baseline.
pub fn sweep_alpha(cfg: &ScenarioConfig) -> Result<AlphaSweep> {
    cfg.validate()?;
    let coin = CoinOperator::new(cfg.psi_deg)?;
    let max_step = cfg
        .steps
        .iter()
        .copied()
        .chain([CONVERGENCE_STEPS.1, REFERENCE_STEP])
        .max()
        .unwrap_or(0);
    let overlay = !cfg.is_noiseless();
    let records: Vec<Result<AlphaRecord>> = cfg
        .alphas
        .par_iter()
        .enumerate()
        .map(|(unit, &alpha)| {
            let s0 = fig5_initial(alpha)?;
            let d0 = position_distribution(&s0);
            let mut spread = BTreeMap::new();
            let mut entropy = BTreeMap::new();
            let mut s = s0.clone();
            for n in 1..=max_step {
                s = step(&s, &coin);
                spread.insert(
                    n,
                    crate::walk::spread_speed(&position_distribution(&s), &d0, n)?,
                );
                entropy.insert(n, entanglement_entropy(&coin_reduced_density(&s))?);
            }
            let classical0 = PositionDistribution::new(BTreeMap::from([
                (-1, alpha * alpha),
                (1, 1.0 - alpha * alpha),
            ]))?;
            let classical = cfg
                .steps
                .iter()
                .map(|&n| {
                    crate::walk::spread_speed(&classical_walk(&classical0, n), &classical0, n)
                })
                .collect::<Result<Vec<_>>>()?;
            let (mut o_s, mut o_e, mut failures) = (None, None, 0);
            if overlay {
                let runs: Vec<Result<(f64, f64)>> = (0..cfg.trials)
                    .map(|t| {
                        let rng = trial_rng(cfg.seed, unit as u64, t as u64);
                        let rep = simulate_and_reconstruct_with(
                            &s0,
                            cfg.psi_deg,
                            REFERENCE_STEP,
                            cfg.noise(),
                            cfg.solver,
                            rng,
                        )?;
                        Ok((rep.spread_speed.unwrap_or(f64::NAN), rep.entropy))
                    })
                    .collect();
                let ok: Vec<(f64, f64)> = runs
                    .iter()
                    .filter_map(|r| r.as_ref().ok().copied())
                    .collect();
                failures = runs.len() - ok.len();
                o_s = Some(Stat::of(&ok.iter().map(|v| v.0).collect::<Vec<_>>()));
                o_e = Some(Stat::of(&ok.iter().map(|v| v.1).collect::<Vec<_>>()));
            }
            Ok(AlphaRecord {
                alpha,
                spread_speed: cfg.steps.iter().map(|n| spread[n]).collect(),
                entropy: cfg.steps.iter().map(|n| entropy[n]).collect(),
                classical_spread_speed: classical,
                entropy_40: entropy[&CONVERGENCE_STEPS.0],
                entropy_50: entropy[&CONVERGENCE_STEPS.1],
                spread_speed_4: spread[&REFERENCE_STEP],
                entropy_4: entropy[&REFERENCE_STEP],
                overlay_spread_speed: o_s,
                overlay_entropy: o_e,
                overlay_failures: failures,
            })
        })
        .collect();
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;

    let alphas: Vec<f64> = records.iter().map(|r| r.alpha).collect();
    let classical_asymmetry = (0..cfg.steps.len())
        .map(|k| {
            mirrored_max(
                &alphas,
                &records
                    .iter()
                    .map(|r| r.classical_spread_speed[k])
                    .collect::<Vec<_>>(),
            )
        })
        .fold(0.0, f64::max);
    let s4: Vec<f64> = records.iter().map(|r| r.spread_speed_4).collect();
    let e4: Vec<f64> = records.iter().map(|r| r.entropy_4).collect();
    let all_entropy = records.iter().flat_map(|r| {
        r.entropy
            .iter()
            .chain([&r.entropy_40, &r.entropy_50, &r.entropy_4])
    });
    let (min_entropy, max_entropy) = all_entropy
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| {
            (lo.min(e), hi.max(e))
        });
    Ok(AlphaSweep {
        steps: cfg.steps.clone(),
        classical_asymmetry,
        quantum_asymmetry_4: mirrored_max(&alphas, &s4),
        max_entropy_change_40_50: records
            .iter()
            .map(|r| (r.entropy_50 - r.entropy_40).abs())
            .fold(0.0, f64::max),
        min_entropy,
        max_entropy,
        spearman_s_entropy_4: spearman(&s4, &e4),
        records,
    })
}

// ---------------------------------------------------------------- Fig. 6(a)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub delta_theta_deg: f64,
    pub delta_phi_deg: f64,
    /// Failed trials enter as fidelity 0.
    pub fidelity: Stat,
    /// `|<truth|recovered>|`, the square root of the fidelity.
    pub overlap: Stat,
    pub failures: usize,
    /// Most frequent failure kind, if any trial failed.
    pub failure_mode: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityMap {
    pub dimension: usize,
    pub grid: usize,
    pub trials: usize,
    pub noise_bound: f64,
    pub noise_model: NoiseModel,
    pub cells: Vec<CellResult>,
    pub area_fraction: f64,
    /// Same threshold applied to the mean of `|<truth|recovered>|`.
    pub overlap_area_fraction: f64,
}

/// Cell centers `((i + 1/2) 180/grid, (l + 1/2) 360/grid)`, row-major in `i`.
pub fn grid_centers(grid: usize) -> Vec<(f64, f64)> {
    let g = grid as f64;
    (0..grid)
        .flat_map(|i| {
            (0..grid).map(move |l| ((i as f64 + 0.5) * 180.0 / g, (l as f64 + 0.5) * 360.0 / g))
        })
        .collect()
}

/// One noisy encode/decode trial on a Haar-random state.
pub fn fidelity_trial(
    scheme: &EncodingScheme,
    bound: f64,
    model: NoiseModel,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let truth = haar_random(scheme.dim(), rng);
    let mut meas = measure_all(&truth, scheme)?;
    for (_, m) in meas.iter_mut() {
        if let RowMeasurement::Ratio(r) = m {
            *r = perturb_ratio(*r, bound, model, rng)?;
        }
    }
    let (rec, _) = decode(&meas, scheme)?;
    Ok(fidelity(&truth, &rec))
}

/// Mean fidelity over `(dtheta, dphi)` cells for `dimension`-level Haar states.
pub fn fidelity_map(
    dimension: usize,
    grid: usize,
    trials: usize,
    bound: f64,
    model: NoiseModel,
    seed: u64,
) -> Result<FidelityMap> {
    if grid == 0 || trials == 0 {
        return Err(Error::InvalidParameter(
            "grid and trials must be >= 1".into(),
        ));
    }
    let cells: Vec<Result<CellResult>> = grid_centers(grid)
        .into_par_iter()
        .enumerate()
        .map(|(unit, (dt, dp))| {
            let scheme = EncodingScheme::generated(dimension, dt, dp)?;
            let trial = |t: usize| {
                fidelity_trial(
                    &scheme,
                    bound,
                    model,
                    &mut trial_rng(seed, unit as u64, t as u64),
                )
            };
            let mut runs: Vec<Result<f64>> = (0..trials.min(PROBE_TRIALS)).map(trial).collect();
            if structurally_ambiguous(&scheme, &runs) {
                // a polar row is an all-zero equation: every further trial fails the same way
                runs.resize_with(trials, || Err(Error::AmbiguousNullSpace(0.0)));
            } else {
                runs.extend((runs.len()..trials).map(trial));
            }
            let values: Vec<f64> = runs.iter().map(|r| *r.as_ref().unwrap_or(&0.0)).collect();
            let overlaps: Vec<f64> = values.iter().map(|f| f.sqrt()).collect();
            let fails = tally(&runs);
            Ok(CellResult {
                delta_theta_deg: dt,
                delta_phi_deg: dp,
                fidelity: Stat::of(&values),
                overlap: Stat::of(&overlaps),
                failures: fails.values().sum(),
                failure_mode: fails.iter().max_by_key(|(_, &c)| c).map(|(k, _)| k.clone()),
            })
        })
        .collect();
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
    let frac = |f: fn(&CellResult) -> f64| {
        cells.iter().filter(|c| f(c) > AREA_THRESHOLD).count() as f64 / cells.len() as f64
    };
    Ok(FidelityMap {
        dimension,
        grid,
        trials,
        noise_bound: bound,
        noise_model: model,
        area_fraction: frac(|c| c.fidelity.mean),
        overlap_area_fraction: frac(|c| c.overlap.mean),
        cells,
    })
}

fn structurally_ambiguous(scheme: &EncodingScheme, probes: &[Result<f64>]) -> bool {
    scheme.num_rows() + 1 - scheme.polar_rows().len() < scheme.dim()
        && probes
            .iter()
            .all(|r| matches!(r, Err(e) if e.kind() == "ambiguous-null-space"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig6a {
    pub primary: FidelityMap,
    /// The other noise model, when requested.
    pub alternate: Option<FidelityMap>,
    /// `(grid, area fraction)` at extra resolutions, primary noise model.
    pub grid_sensitivity: Vec<(usize, f64)>,
}

pub fn run_fig6a(cfg: &ScenarioConfig) -> Result<Fig6a> {
    cfg.validate()?;
    let run = |grid, model| {
        fidelity_map(
            cfg.dimension,
            grid,
            cfg.trials,
            cfg.noise_bound,
            model,
            cfg.seed,
        )
    };
    let primary = run(cfg.grid, cfg.noise_model)?;
    let alternate = if cfg.compare_noise_models {
        let other = match cfg.noise_model {
            NoiseModel::Relative => NoiseModel::Componentwise,
            NoiseModel::Componentwise => NoiseModel::Relative,
        };
        Some(run(cfg.grid, other)?)
    } else {
        None
    };
    let grid_sensitivity = cfg
        .grid_sensitivity
        .iter()
        .map(|&g| Ok((g, run(g, cfg.noise_model)?.area_fraction)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Fig6a {
        primary,
        alternate,
        grid_sensitivity,
    })
}

// ---------------------------------------------------------------- Fig. 6(b)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig6b {
    pub dimension: usize,
    pub delta_theta_deg: f64,
    pub delta_phi_deg: f64,
    pub noiseless_fidelity: f64,
    pub recovered: CoefficientVector,
    /// `max_k | |c_k| - 1/sqrt(n) |` of the noiseless reconstruction.
    pub max_coefficient_error: f64,
    pub noise_bound: f64,
    pub noise_model: NoiseModel,
    /// Failed trials enter as fidelity 0.
    pub noisy_fidelity: Stat,
    pub noisy_failures: usize,
}

/// Encodes and reconstructs the uniform state.
pub fn run_fig6b(cfg: &ScenarioConfig) -> Result<Fig6b> {
    cfg.validate()?;
    let n = cfg.dimension;
    let scheme = EncodingScheme::generated(n, cfg.delta_theta_deg, cfg.delta_phi_deg)?;
    let amp = 1.0 / (n as f64).sqrt();
    let truth = CoefficientVector(vec![Complex64::new(amp, 0.0); n]);
    let (recovered, _) = decode(&measure_all(&truth, &scheme)?, &scheme)?;
    let runs: Vec<Result<f64>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(cfg.seed, 0, t as u64);
            let mut meas = measure_all(&truth, &scheme)?;
            for (_, m) in meas.iter_mut() {
                if let RowMeasurement::Ratio(r) = m {
                    *r = perturb_ratio(*r, cfg.noise_bound, cfg.noise_model, &mut rng)?;
                }
            }
            Ok(fidelity(&truth, &decode(&meas, &scheme)?.0))
        })
        .collect();
    let values: Vec<f64> = runs.iter().map(|r| *r.as_ref().unwrap_or(&0.0)).collect();
    Ok(Fig6b {
        dimension: n,
        delta_theta_deg: cfg.delta_theta_deg,
        delta_phi_deg: cfg.delta_phi_deg,
        noiseless_fidelity: fidelity(&truth, &recovered),
        max_coefficient_error: recovered
            .iter()
            .map(|z| (z.norm() - amp).abs())
            .fold(0.0, f64::max),
        recovered,
        noise_bound: cfg.noise_bound,
        noise_model: cfg.noise_model,
        noisy_failures: runs.iter().filter(|r| r.is_err()).count(),
        noisy_fidelity: Stat::of(&values),
    })
}

// ---------------------------------------------------------------- output

/// 12 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.11e}")
}

fn stat_cells(s: &Stat) -> [String; 2] {
    [fmt_num(s.mean), fmt_num(s.std)]
}

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    w.write_record(header).map_err(|e| Error::Io(e.into()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    config: &'a ScenarioConfig,
    seed: u64,
    #[serde(flatten)]
    result: T,
}

/// Result of any scenario run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ScenarioOutput {
    Tables(WalkTables),
    Alpha(AlphaSweep),
    Map(Fig6a),
    Uniform(Fig6b),
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput> {
    Ok(match cfg.scenario {
        Scenario::Fig3 | Scenario::Fig4 | Scenario::Custom => {
            ScenarioOutput::Tables(run_walk_tables(cfg)?)
        }
        Scenario::Fig5 => ScenarioOutput::Alpha(sweep_alpha(cfg)?),
        Scenario::Fig6a => ScenarioOutput::Map(run_fig6a(cfg)?),
        Scenario::Fig6b => ScenarioOutput::Uniform(run_fig6b(cfg)?),
    })
}

fn map_rows(map: &FidelityMap) -> Vec<Vec<String>> {
    map.cells
        .iter()
        .map(|c| {
            let [m, s] = stat_cells(&c.fidelity);
            let [om, os] = stat_cells(&c.overlap);
            vec![
                fmt_num(c.delta_theta_deg),
                fmt_num(c.delta_phi_deg),
                m,
                s,
                om,
                os,
                c.fidelity.count.to_string(),
                c.failures.to_string(),
                c.failure_mode.clone().unwrap_or_default(),
            ]
        })
        .collect()
}

impl ScenarioOutput {
    /// Writes CSV panels plus `<name>_summary.json` into `dir`; returns the paths.
    pub fn write(&self, cfg: &ScenarioConfig, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let name = cfg.scenario.name();
        let mut out = Vec::new();
        match self {
            ScenarioOutput::Tables(t) => {
                for table in &t.tables {
                    let path = dir.join(format!("{name}_n{}.csv", table.n_steps));
                    let header = [
                        "position",
                        "a_re_theory",
                        "a_im_theory",
                        "b_re_theory",
                        "b_im_theory",
                        "p_theory",
                        "a_re_mean",
                        "a_re_std",
                        "a_im_mean",
                        "a_im_std",
                        "b_re_mean",
                        "b_re_std",
                        "b_im_mean",
                        "b_im_std",
                        "p_mean",
                        "p_std",
                        "trials",
                    ];
                    let rows = table.rows.iter().map(|r| {
                        let mut row = vec![
                            r.position.to_string(),
                            fmt_num(r.a_theory[0]),
                            fmt_num(r.a_theory[1]),
                            fmt_num(r.b_theory[0]),
                            fmt_num(r.b_theory[1]),
                            fmt_num(r.p_theory),
                        ];
                        for s in [&r.a_re, &r.a_im, &r.b_re, &r.b_im, &r.p] {
                            row.extend(stat_cells(s));
                        }
                        row.push(r.p.count.to_string());
                        row
                    });
                    write_csv(&path, &header, rows)?;
                    out.push(path);
                }
            }
            ScenarioOutput::Alpha(s) => {
                let path = dir.join(format!("{name}.csv"));
                let mut header: Vec<String> = vec!["alpha".into()];
                for n in &s.steps {
                    header.extend([
                        format!("s_{n}"),
                        format!("entropy_{n}"),
                        format!("s_classical_{n}"),
                    ]);
                }
                header.extend(
                    [
                        "entropy_40",
                        "entropy_50",
                        "s_overlay_mean",
                        "s_overlay_std",
                        "entropy_overlay_mean",
                        "entropy_overlay_std",
                    ]
                    .map(String::from),
                );
                let rows = s.records.iter().map(|r| {
                    let mut row = vec![fmt_num(r.alpha)];
                    for k in 0..s.steps.len() {
                        row.extend(
                            [r.spread_speed[k], r.entropy[k], r.classical_spread_speed[k]]
                                .map(fmt_num),
                        );
                    }
                    row.extend([r.entropy_40, r.entropy_50].map(fmt_num));
                    for o in [&r.overlay_spread_speed, &r.overlay_entropy] {
                        match o {
                            Some(st) => row.extend(stat_cells(st)),
                            None => row.extend([String::new(), String::new()]),
                        }
                    }
                    row
                });
                let header: Vec<&str> = header.iter().map(String::as_str).collect();
                write_csv(&path, &header, rows)?;
                out.push(path);
            }
            ScenarioOutput::Map(m) => {
                let header = [
                    "delta_theta_deg",
                    "delta_phi_deg",
                    "fidelity_mean",
                    "fidelity_std",
                    "overlap_mean",
                    "overlap_std",
                    "trials",
                    "failures",
                    "failure_mode",
                ];
                for map in std::iter::once(&m.primary).chain(&m.alternate) {
                    let tag = serde_json::to_value(map.noise_model)?;
                    let path = dir.join(format!("{name}_{}.csv", tag.as_str().unwrap_or("model")));
                    write_csv(&path, &header, map_rows(map))?;
                    out.push(path);
                }
            }
            ScenarioOutput::Uniform(u) => {
                let path = dir.join(format!("{name}.csv"));
                let rows = u.recovered.iter().enumerate().map(|(k, z)| {
                    vec![
                        (k + 1).to_string(),
                        fmt_num(z.re),
                        fmt_num(z.im),
                        fmt_num(z.norm()),
                    ]
                });
                write_csv(&path, &["k", "re", "im", "abs"], rows)?;
                out.push(path);
            }
        }
        let summary_path = dir.join(format!("{name}_summary.json"));
        let summary = match self {
            // cell-level data already lives in the CSVs
            ScenarioOutput::Map(m) => serde_json::json!({
                "area_fraction": m.primary.area_fraction,
                "overlap_area_fraction": m.primary.overlap_area_fraction,
                "noise_model": m.primary.noise_model,
                "alternate_area_fraction": m.alternate.as_ref().map(|a| a.area_fraction),
                "alternate_overlap_area_fraction": m.alternate.as_ref().map(|a| a.overlap_area_fraction),
                "alternate_noise_model": m.alternate.as_ref().map(|a| a.noise_model),
                "grid_sensitivity": m.grid_sensitivity,
                "failed_trials": m.primary.cells.iter().map(|c| c.failures).sum::<usize>(),
            }),
            other => serde_json::to_value(other)?,
        };
        write_json(
            &summary_path,
            &Summary {
                config: cfg,
                seed: cfg.seed,
                result: summary,
            },
        )?;
        out.push(summary_path);
        Ok(out)
    }
}
