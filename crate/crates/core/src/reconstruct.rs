//! Recovering the full walk state from optical measurements.
//!
//! Each run fixes an encoding angle `dtheta`, evolves the optical state and
//! performs tomography on both paths. Path 0 carries `sum a'_k |k>_p`, path 1
//! carries `sum b'_k |k>_p`, so every run adds one homogeneous equation per
//! branch. Together with the known-zero outermost coefficients
//! (`a_{max} = 0`, `b_{min} = 0`) this fixes the unit branch vectors `a'`, `b'`
//! up to a global phase each. A single count ratio `r` measured at an analysis
//! angle `theta*` then fixes the branch weights `C_a`, `C_b`.
//!
//! The relative phase between the two branches is not observable this way.
//! It is also not needed: the position distribution, spread speed and coin
//! entropy are all invariant under independent per-branch phases.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::encode::{
    assemble_system, fidelity, fix_phase, haar_random, measure_row, perturb_ratio,
    solve_null_anchored, BasisPoint, CoefficientVector, Conditioning, EncodingScheme, NoiseModel,
    RowMeasurement,
};
use crate::error::{Error, Result, StageExt};
use crate::optics::{
    encode_walk, path_count_ratio, physical_evolve, tomography, CountRatioMode,
    PhysicalOpticalState, COUNT_RATIO_TOL,
};
use crate::walk::{
    coin_reduced_density, entanglement_entropy, evolve, position_distribution, spread_speed, Coin,
    CoinOperator, PositionDistribution, WalkState,
};

/// Gap a planned noiseless system must clear.
pub const PLAN_GAP_TOL: f64 = 1e-6;
/// Minimum projection magnitude for weight recovery.
pub const WEIGHT_TOL: f64 = 1e-10;
/// Run angles are drawn from `(0, RUN_ANGLE_LIMIT)` deg.
pub const RUN_ANGLE_LIMIT: f64 = 90.0;
const PLACEHOLDER_SEED: u64 = 0x5eed;
/// Repair candidates per evenly spaced slot.
const REPAIR_GRID: usize = 8;
/// Candidate analysis angles, in degrees.
const THETA_STAR_GRID: usize = 90;

/// Which runs to perform and what is known a priori about the final state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub n_steps: usize,
    pub psi_deg: f64,
    pub initial_support: Vec<i64>,
    /// Parity shared by all occupied positions after `n_steps`.
    pub parity: i64,
    /// Inclusive `[k_min, k_max]`.
    pub window: (i64, i64),
    /// Window positions with the right parity, increasing.
    pub positions: Vec<i64>,
    /// Positions where `a` is known to vanish.
    pub zero_a: Vec<i64>,
    /// Positions where `b` is known to vanish.
    pub zero_b: Vec<i64>,
    pub run_angles: Vec<f64>,
    /// Plan-time analysis angle; superseded after branch recovery unless the
    /// measurement source pins it.
    pub theta_star_deg: f64,
    /// Needed for the spread speed.
    #[serde(default)]
    pub initial_distribution: Option<PositionDistribution>,
    /// Coefficient index anchoring each branch's global phase (`None`: first significant).
    #[serde(default)]
    pub phase_anchor: Option<usize>,
    #[serde(default)]
    pub solver: BranchSolver,
}

impl RunPlan {
    /// Free coefficients per branch (window positions minus boundary zeros).
    pub fn unknowns(&self, coin: Coin) -> usize {
        self.positions.len() - self.zeros(coin).len()
    }

    pub fn zeros(&self, coin: Coin) -> &[i64] {
        match coin {
            Coin::Zero => &self.zero_a,
            Coin::One => &self.zero_b,
        }
    }

    /// Ratio runs needed to pin down both branches.
    pub fn runs_needed(&self) -> usize {
        self.unknowns(Coin::Zero)
            .max(self.unknowns(Coin::One))
            .saturating_sub(1)
    }

    /// Upper end of the run-angle range.
    ///
    /// Angles in `(90, 180)` only repeat rows already available below 90 deg.
    pub fn angle_limit(&self) -> f64 {
        RUN_ANGLE_LIMIT
    }

    fn index_of(&self, x: i64) -> Option<usize> {
        self.positions.binary_search(&x).ok()
    }

    /// The same plan with measured angles replacing the planned ones.
    pub fn with_angles(mut self, angles: Vec<f64>) -> Self {
        self.run_angles = angles;
        self
    }

    pub fn with_initial_distribution(mut self, d: PositionDistribution) -> Self {
        self.initial_distribution = Some(d);
        self
    }

    pub fn with_solver(mut self, solver: BranchSolver) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_initial_distribution_opt(mut self, d: Option<PositionDistribution>) -> Self {
        if d.is_some() {
            self.initial_distribution = d;
        }
        self
    }

    /// Encoding scheme of the runs, `theta_k = k dtheta`, `phi_k = 0`.
    pub fn scheme(&self, angles: &[f64]) -> Result<EncodingScheme> {
        EncodingScheme::explicit(
            self.positions.len(),
            angles
                .iter()
                .map(|&dt| {
                    self.positions
                        .iter()
                        .map(|&k| BasisPoint::new(k as f64 * dt, 0.0))
                        .collect()
                })
                .collect(),
        )
    }
}

/// Plans the runs for an `n_steps` walk started on `support`.
///
/// Run angles are spread evenly over `(0, 90)`. Angles that send two window
/// positions to the same polarization ray are moved on a finer grid, then
/// single angles are swapped until the placeholder system passes the
/// conditioning gate.
pub fn plan_runs(n_steps: usize, support: &[i64], psi_deg: f64) -> Result<RunPlan> {
    let coin = CoinOperator::new(psi_deg)?;
    if n_steps == 0 {
        return Err(Error::PlanningFailed("need at least one step".into()));
    }
    let (Some(&min), Some(&max)) = (support.iter().min(), support.iter().max()) else {
        return Err(Error::PlanningFailed("empty initial support".into()));
    };
    let parity0 = min.rem_euclid(2);
    if support.iter().any(|x| x.rem_euclid(2) != parity0) {
        return Err(Error::PlanningFailed(
            "initial support mixes parities".into(),
        ));
    }
    let n = n_steps as i64;
    let window = (min - n, max + n);
    let positions: Vec<i64> = (window.0..=window.1).step_by(2).collect();
    let mut plan = RunPlan {
        n_steps,
        psi_deg,
        initial_support: support.to_vec(),
        parity: (min + n).rem_euclid(2),
        window,
        positions,
        // the last move of the a branch was to the left, of the b branch to the right
        zero_a: vec![window.1],
        zero_b: vec![window.0],
        run_angles: Vec::new(),
        theta_star_deg: 45.0,
        initial_distribution: None,
        phase_anchor: None,
        solver: BranchSolver::default(),
    };
    let m = plan.runs_needed();
    let limit = plan.angle_limit();
    let mut angles: Vec<f64> = (1..=m).map(|j| j as f64 * limit / (m + 1) as f64).collect();

    let span = (window.1 - window.0) as u32;
    let fine: Vec<f64> = (1..REPAIR_GRID * (m + 1))
        .map(|i| i as f64 * limit / (REPAIR_GRID * (m + 1)) as f64)
        .filter(|&t| keeps_positions_distinct(t, span))
        .collect();
    for j in 0..m {
        if !keeps_positions_distinct(angles[j], span) {
            let taken = angles.clone();
            angles[j] = fine
                .iter()
                .copied()
                .filter(|c| !taken.contains(c))
                .min_by(|x, y| (x - taken[j]).abs().total_cmp(&(y - taken[j]).abs()))
                .ok_or_else(|| Error::PlanningFailed("no admissible run angle".into()))?;
        }
    }

    let placeholder = placeholder_state(support, &coin, n_steps)?;
    let mut gap = plan_gap(&plan, &placeholder, &angles);
    if m > 0 && gap < PLAN_GAP_TOL {
        for _ in 0..2 * m {
            let mut best = (gap, None);
            for idx in 0..m {
                for &cand in &fine {
                    if angles.iter().any(|&a| (a - cand).abs() < limit * 1e-3) {
                        continue;
                    }
                    let mut trial = angles.clone();
                    trial[idx] = cand;
                    let g = plan_gap(&plan, &placeholder, &trial);
                    if g > best.0 {
                        best = (g, Some((idx, cand)));
                    }
                }
            }
            match best {
                (g, Some((idx, cand))) => {
                    angles[idx] = cand;
                    gap = g;
                }
                _ => break,
            }
            if gap >= PLAN_GAP_TOL {
                break;
            }
        }
        if gap < PLAN_GAP_TOL {
            return Err(Error::PlanningFailed(format!(
                "no set of {m} well-conditioned run angles below {limit} deg (best gap {gap:e})"
            )));
        }
    }
    plan.run_angles = angles;

    let uniform = |coin: Coin| {
        let free = plan.unknowns(coin) as f64;
        let zeros = plan.zeros(coin);
        let v = plan
            .positions
            .iter()
            .map(|x| {
                if zeros.contains(x) {
                    Complex64::default()
                } else {
                    Complex64::new(1.0 / free.sqrt(), 0.0)
                }
            })
            .collect();
        CoefficientVector(v)
    };
    plan.theta_star_deg =
        choose_theta_star(&uniform(Coin::Zero), &uniform(Coin::One), &plan.positions)?;
    Ok(plan)
}

/// Plan for a known initial state: its support, plus its distribution for the spread speed.
pub fn plan_for_state(initial: &WalkState, n_steps: usize, psi_deg: f64) -> Result<RunPlan> {
    Ok(plan_runs(n_steps, &initial.support(), psi_deg)?
        .with_initial_distribution(position_distribution(initial)))
}

/// Generic stand-in for the unknown final state, used only to screen run angles.
///
/// Symmetric stand-ins (uniform amplitudes, a fixed coin) can be structurally
/// ambiguous themselves, so the initial amplitudes are drawn from a fixed seed.
fn placeholder_state(support: &[i64], coin: &CoinOperator, n_steps: usize) -> Result<WalkState> {
    let mut rng = ChaCha8Rng::seed_from_u64(PLACEHOLDER_SEED);
    let v = haar_random(2 * support.len(), &mut rng);
    let s0 = WalkState::from_terms(
        support
            .iter()
            .enumerate()
            .flat_map(|(i, &x)| [(v.0[2 * i], x, Coin::Zero), (v.0[2 * i + 1], x, Coin::One)]),
    )?;
    Ok(evolve(&s0, coin, n_steps))
}

/// No two positions `span` or fewer apart map to the same polarization ray.
fn keeps_positions_distinct(delta_theta_deg: f64, span: u32) -> bool {
    (1..=span).all(|d| {
        let x = (d as f64 * delta_theta_deg).rem_euclid(180.0);
        x.min(180.0 - x) > 1e-6
    })
}

/// Smallest branch gap of the noiseless placeholder system; 0 when it cannot be solved.
fn plan_gap(plan: &RunPlan, state: &WalkState, angles: &[f64]) -> f64 {
    [Coin::Zero, Coin::One]
        .into_iter()
        .map(|coin| {
            let rows: Vec<(f64, RowMeasurement)> = angles
                .iter()
                .map(|&dt| (dt, noiseless_branch_row(state, dt, coin)))
                .collect();
            match branch_system(&rows, plan, coin) {
                Ok(Some((_, cond))) => cond.gap(),
                Ok(None) => f64::INFINITY,
                Err(_) => 0.0,
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Noiseless row from the abstract state, `R = C0 / C1` of the branch encoded at `dtheta`.
fn noiseless_branch_row(state: &WalkState, dt: f64, coin: Coin) -> RowMeasurement {
    let (mut c0, mut c1) = (Complex64::default(), Complex64::default());
    for (k, a, b) in state.iter() {
        let amp = if coin == Coin::Zero { a } else { b };
        let (s, c) = (k as f64 * dt).to_radians().sin_cos();
        c0 += amp * c;
        c1 += amp * s;
    }
    let scale = (c0.norm_sqr() + c1.norm_sqr()).sqrt();
    if c1.norm() <= 1e-10 * scale.max(f64::MIN_POSITIVE) {
        RowMeasurement::VanishingC1
    } else {
        RowMeasurement::Ratio(c0 / c1)
    }
}

fn branch_matrix(
    rows: &[(f64, RowMeasurement)],
    plan: &RunPlan,
    coin: Coin,
) -> Result<DMatrix<Complex64>> {
    let angles: Vec<f64> = rows.iter().map(|(dt, _)| *dt).collect();
    let scheme = plan.scheme(&angles)?;
    let meas: Vec<(usize, RowMeasurement)> =
        rows.iter().enumerate().map(|(j, (_, m))| (j, *m)).collect();
    let zeros: Vec<usize> = plan
        .zeros(coin)
        .iter()
        .filter_map(|&x| plan.index_of(x))
        .collect();
    assemble_system(&meas, &scheme, &zeros)
}

fn branch_system(
    rows: &[(f64, RowMeasurement)],
    plan: &RunPlan,
    coin: Coin,
) -> Result<Option<(CoefficientVector, Conditioning)>> {
    if plan.unknowns(coin) <= 1 {
        return Ok(None);
    }
    let sys = branch_matrix(rows, plan, coin)?;
    solve_null_anchored(&sys, plan.phase_anchor).map(Some)
}

/// Unit, phase-fixed branch vector over `plan.positions`.
pub fn recover_branch(
    rows: &[(f64, RowMeasurement)],
    plan: &RunPlan,
    coin: Coin,
) -> Result<(CoefficientVector, Option<Conditioning>)> {
    match branch_system(rows, plan, coin)? {
        Some((v, cond)) => Ok((v, Some(cond))),
        None => {
            let zeros = plan.zeros(coin);
            let v = plan
                .positions
                .iter()
                .map(|x| {
                    if zeros.contains(x) {
                        Complex64::default()
                    } else {
                        Complex64::new(1.0, 0.0)
                    }
                })
                .collect();
            Ok((CoefficientVector(v), None))
        }
    }
}

fn projections(
    a: &CoefficientVector,
    b: &CoefficientVector,
    positions: &[i64],
    theta: f64,
) -> (f64, f64) {
    let (mut pa, mut pb) = (Complex64::default(), Complex64::default());
    for ((&k, a), b) in positions.iter().zip(&a.0).zip(&b.0) {
        let (s, c) = (k as f64 * theta).to_radians().sin_cos();
        pa += a * c;
        pb += b * s;
    }
    (pa.norm(), pb.norm())
}

/// How the unit branch vectors are obtained from the ratio rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchSolver {
    /// One null-space solve per branch; the reachable subspace is consulted
    /// only when a branch is exactly ambiguous. Exact on noiseless data, but
    /// near-ambiguous branches make it fragile under shot noise.
    PerBranch,
    /// Solve both branches jointly inside the reachable subspace, falling back
    /// to per-branch solves when there are too few rows for the joint system.
    #[default]
    Reachable,
}

/// Both unit branches. Returns whether the reachable subspace was used.
///
/// Some walks (e.g. a real Hadamard walk whose branch polynomial has a double
/// root on the unit circle) admit a second vector with identical ratios at
/// every angle. The final state must lie in `U^n span{|x, c> : x in support}`,
/// which removes the spurious direction.
fn solve_branches(
    rows_a: &[(f64, RowMeasurement)],
    rows_b: &[(f64, RowMeasurement)],
    plan: &RunPlan,
) -> Result<(BranchResult, BranchResult, bool)> {
    if plan.solver == BranchSolver::PerBranch {
        let a = recover_branch(rows_a, plan, Coin::Zero);
        let b = recover_branch(rows_b, plan, Coin::One);
        let ambiguous = |r: &Result<_>| matches!(r, Err(Error::AmbiguousNullSpace(_)));
        if !ambiguous(&a) && !ambiguous(&b) {
            return Ok((
                a.stage("recover branch a")?,
                b.stage("recover branch b")?,
                false,
            ));
        }
    }
    match solve_reachable(rows_a, rows_b, plan) {
        Ok((a, b)) => Ok((a, b, true)),
        // too few rows to fix the joint coefficients; the branches may still be fine alone
        Err(Error::AmbiguousNullSpace(_)) if plan.solver == BranchSolver::Reachable => {
            let a = recover_branch(rows_a, plan, Coin::Zero).stage("recover branch a")?;
            let b = recover_branch(rows_b, plan, Coin::One).stage("recover branch b")?;
            Ok((a, b, false))
        }
        Err(e) => Err(e.at("reachable subspace")),
    }
}

/// Joint least-squares solve with `(a, b) = V c`, `V` the reachable basis.
/// Rows are scaled to unit norm so neither branch dominates.
fn solve_reachable(
    rows_a: &[(f64, RowMeasurement)],
    rows_b: &[(f64, RowMeasurement)],
    plan: &RunPlan,
) -> Result<(BranchResult, BranchResult)> {
    let reach = reachable_basis(plan)?;
    let p = plan.positions.len();
    let ma = branch_matrix(rows_a, plan, Coin::Zero)?;
    let mb = branch_matrix(rows_b, plan, Coin::One)?;
    let top = ma * reach.rows(0, p);
    let bottom = mb * reach.rows(p, p);
    let mut joint = DMatrix::from_fn(top.nrows() + bottom.nrows(), reach.ncols(), |r, c| {
        if r < top.nrows() {
            top[(r, c)]
        } else {
            bottom[(r - top.nrows(), c)]
        }
    });
    for mut row in joint.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= Complex64::new(n, 0.0);
        }
    }
    let (c, cond) = solve_null_anchored(&joint, None)?;
    let c = DMatrix::from_column_slice(c.len(), 1, &c.0);
    let finish = |v: DMatrix<Complex64>| -> Result<BranchResult> {
        let norm = v.norm();
        if norm < WEIGHT_TOL {
            return Err(Error::AmbiguousNullSpace(0.0));
        }
        let mut v: Vec<Complex64> = v.iter().map(|z| z / norm).collect();
        fix_phase(&mut v, plan.phase_anchor);
        Ok((CoefficientVector(v), Some(cond)))
    };
    Ok((
        finish(reach.rows(0, p) * &c)?,
        finish(reach.rows(p, p) * &c)?,
    ))
}

type BranchResult = (CoefficientVector, Option<Conditioning>);

/// Orthonormal columns spanning `U^n |x, c>` for every initial position and coin,
/// laid out as `(a over positions, b over positions)`.
fn reachable_basis(plan: &RunPlan) -> Result<DMatrix<Complex64>> {
    let coin_op = CoinOperator::new(plan.psi_deg)?;
    let p = plan.positions.len();
    let mut cols = Vec::with_capacity(2 * plan.initial_support.len());
    for &x in &plan.initial_support {
        for c in [Coin::Zero, Coin::One] {
            let s = evolve(
                &WalkState::from_terms([(Complex64::new(1.0, 0.0), x, c)])?,
                &coin_op,
                plan.n_steps,
            );
            let mut col = vec![Complex64::default(); 2 * p];
            for (k, a, b) in s.iter() {
                let i = plan.index_of(k).ok_or_else(|| {
                    Error::PlanningFailed(format!("position {k} outside the window"))
                })?;
                col[i] = a;
                col[p + i] = b;
            }
            cols.push(col);
        }
    }
    let m = DMatrix::from_fn(2 * p, cols.len(), |r, c| cols[c][r]);
    // U^n is unitary, so the evolved basis states are already orthonormal
    Ok(m)
}

/// Analysis angle on `{1, ..., 90}` deg maximizing `min(|sum a' cos k theta|, |sum b' sin k theta|)`.
pub fn choose_theta_star(
    a: &CoefficientVector,
    b: &CoefficientVector,
    positions: &[i64],
) -> Result<f64> {
    let (best, score) = (1..=THETA_STAR_GRID)
        .map(|i| {
            let t = i as f64 * 90.0 / THETA_STAR_GRID as f64;
            let (pa, pb) = projections(a, b, positions, t);
            (t, pa.min(pb))
        })
        .fold((f64::NAN, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    if score < WEIGHT_TOL {
        return Err(Error::WeightRecoveryDegenerate);
    }
    Ok(best)
}

/// Branch weights from the count ratio `r` at `theta*`.
///
/// `r = inf` (nothing in path 1) gives `(1, 0)`; `r = 0` gives `(0, 1)`.
pub fn recover_weights(
    a_unit: &CoefficientVector,
    b_unit: &CoefficientVector,
    positions: &[i64],
    r: f64,
    theta_star_deg: f64,
) -> Result<(f64, f64)> {
    if r.is_nan() || r < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "count ratio {r} must be >= 0"
        )));
    }
    if r.is_infinite() {
        return Ok((1.0, 0.0));
    }
    if r == 0.0 {
        return Ok((0.0, 1.0));
    }
    let (pa, pb) = projections(a_unit, b_unit, positions, theta_star_deg);
    if pa < WEIGHT_TOL || pb < WEIGHT_TOL {
        return Err(Error::WeightRecoveryDegenerate);
    }
    let q = r * pb * pb / (pa * pa);
    Ok(((q / (1.0 + q)).sqrt(), (1.0 / (1.0 + q)).sqrt()))
}

/// Anything that can answer the two kinds of measurement the protocol needs.
pub trait MeasurementSource {
    /// Row measurement from tomography of `coin`'s path in the run at `dtheta`.
    fn branch(&mut self, delta_theta_deg: f64, coin: Coin) -> Result<RowMeasurement>;
    /// Count ratio `r` at analysis angle `theta`.
    fn count_ratio(&mut self, theta_deg: f64) -> Result<f64>;
    /// Analysis angle fixed by the data, if any.
    fn theta_star(&self) -> Option<f64> {
        None
    }
}

/// Measurement imperfections of the simulated experiment.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasurementNoise {
    /// Shots per tomography basis and for the count ratio; 0 means exact.
    pub shots_per_basis: u64,
    /// Relative error bound on each measured R; 0 disables.
    pub ratio_bound: f64,
    pub noise_model: NoiseModel,
    pub count_mode: CountRatioMode,
}

/// Simulates the optical experiment for a known initial state.
#[derive(Debug, Clone)]
pub struct SimulatedExperiment {
    initial: WalkState,
    psi_deg: f64,
    n_steps: usize,
    noise: MeasurementNoise,
    rng: ChaCha8Rng,
}

impl SimulatedExperiment {
    pub fn new(
        initial: WalkState,
        psi_deg: f64,
        n_steps: usize,
        noise: MeasurementNoise,
        rng: ChaCha8Rng,
    ) -> Self {
        Self {
            initial,
            psi_deg,
            n_steps,
            noise,
            rng,
        }
    }

    pub fn noiseless(initial: WalkState, psi_deg: f64, n_steps: usize) -> Self {
        Self::new(
            initial,
            psi_deg,
            n_steps,
            MeasurementNoise::default(),
            ChaCha8Rng::seed_from_u64(0),
        )
    }

    /// Output of the optical setup run at encoding angle `dtheta`.
    pub fn optical_state(&self, delta_theta_deg: f64) -> Result<PhysicalOpticalState> {
        let (input, _) = encode_walk(&self.initial, delta_theta_deg)?;
        physical_evolve(&input, self.psi_deg, delta_theta_deg, self.n_steps)
    }
}

impl MeasurementSource for SimulatedExperiment {
    fn branch(&mut self, delta_theta_deg: f64, coin: Coin) -> Result<RowMeasurement> {
        let state = self.optical_state(delta_theta_deg)?;
        let path = match coin {
            Coin::Zero => 0,
            Coin::One => 1,
        };
        let rec = tomography(
            path,
            state.branch(path),
            self.noise.shots_per_basis,
            &mut self.rng,
        )?;
        Ok(match measure_row(&rec.rho) {
            RowMeasurement::Ratio(r) => RowMeasurement::Ratio(perturb_ratio(
                r,
                self.noise.ratio_bound,
                self.noise.noise_model,
                &mut self.rng,
            )?),
            other => other,
        })
    }

    fn count_ratio(&mut self, theta_deg: f64) -> Result<f64> {
        let state = self.optical_state(theta_deg)?;
        let shots = self.noise.shots_per_basis;
        if shots == 0 {
            return path_count_ratio(&state, self.noise.count_mode);
        }
        let (p0, p1) = match self.noise.count_mode {
            CountRatioMode::Projected => (state.p0h().norm_sqr(), state.p1v().norm_sqr()),
            CountRatioMode::TotalIntensity => (
                state.p0h().norm_sqr() + state.p0v().norm_sqr(),
                state.p1h().norm_sqr() + state.p1v().norm_sqr(),
            ),
        };
        if p1 < COUNT_RATIO_TOL {
            return Err(Error::CountRatioUndefined);
        }
        let draw = |p: f64, rng: &mut ChaCha8Rng| -> Result<u64> {
            Ok(Binomial::new(shots, p.clamp(0.0, 1.0))
                .map_err(|e| Error::InvalidParameter(e.to_string()))?
                .sample(rng))
        };
        let n0 = draw(p0, &mut self.rng)?;
        let n1 = draw(p1, &mut self.rng)?;
        if n1 == 0 {
            return Err(Error::CountRatioUndefined);
        }
        Ok(n0 as f64 / n1 as f64)
    }
}

/// One tomography run in a measurement file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub delta_theta_deg: f64,
    pub path: usize,
    /// `[re, im]`; `null` when `C1 ~ 0` made the ratio undefined.
    #[serde(rename = "R")]
    pub r: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub theta_star_deg: f64,
    pub r: f64,
}

/// Measured data for one reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFile {
    pub runs: Vec<RunRecord>,
    pub weights: WeightRecord,
}

impl MeasurementFile {
    /// Distinct run angles in file order.
    pub fn angles(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for run in &self.runs {
            if !out.contains(&run.delta_theta_deg) {
                out.push(run.delta_theta_deg);
            }
        }
        out
    }

    /// Records every measurement a reconstruction under `plan` would take from `source`.
    pub fn record<S: MeasurementSource>(
        source: &mut S,
        plan: &RunPlan,
        theta_star_deg: f64,
    ) -> Result<Self> {
        let mut runs = Vec::new();
        for &dt in &plan.run_angles {
            for (path, coin) in [(0, Coin::Zero), (1, Coin::One)] {
                let r = match source.branch(dt, coin)? {
                    RowMeasurement::Ratio(z) => Some([z.re, z.im]),
                    RowMeasurement::VanishingC1 => None,
                };
                runs.push(RunRecord {
                    delta_theta_deg: dt,
                    path,
                    r,
                });
            }
        }
        let r = source.count_ratio(theta_star_deg)?;
        Ok(Self {
            runs,
            weights: WeightRecord { theta_star_deg, r },
        })
    }
}

impl MeasurementSource for MeasurementFile {
    fn branch(&mut self, delta_theta_deg: f64, coin: Coin) -> Result<RowMeasurement> {
        let path = if coin == Coin::Zero { 0 } else { 1 };
        self.runs
            .iter()
            .find(|r| r.path == path && r.delta_theta_deg == delta_theta_deg)
            .map(|r| match r.r {
                Some([re, im]) => RowMeasurement::Ratio(Complex64::new(re, im)),
                None => RowMeasurement::VanishingC1,
            })
            .ok_or_else(|| {
                Error::MissingMeasurement(format!("path {path} at dtheta = {delta_theta_deg}"))
            })
    }

    fn count_ratio(&mut self, theta_deg: f64) -> Result<f64> {
        if theta_deg != self.weights.theta_star_deg {
            return Err(Error::MissingMeasurement(format!(
                "count ratio at theta = {theta_deg}"
            )));
        }
        Ok(self.weights.r)
    }

    fn theta_star(&self) -> Option<f64> {
        Some(self.weights.theta_star_deg)
    }
}

/// Comparison against a known final state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthComparison {
    pub fidelity_a: f64,
    pub fidelity_b: f64,
    pub total_variation: f64,
    pub entropy_error: f64,
    pub spread_speed_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub positions: Vec<i64>,
    pub a_unit: CoefficientVector,
    pub b_unit: CoefficientVector,
    pub c_a: f64,
    pub c_b: f64,
    /// `C_a a'`
    pub a: CoefficientVector,
    /// `C_b b'`
    pub b: CoefficientVector,
    pub distribution: PositionDistribution,
    pub std_dev: f64,
    pub spread_speed: Option<f64>,
    pub entropy: f64,
    pub theta_star_deg: f64,
    pub count_ratio: f64,
    pub conditioning_a: Option<Conditioning>,
    pub conditioning_b: Option<Conditioning>,
    /// Ratio rows alone were ambiguous; the reachable subspace settled it.
    pub used_reachability: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub truth: Option<TruthComparison>,
}

impl ReconstructionReport {
    /// The reconstructed walk state, each branch in its canonical phase.
    pub fn state(&self) -> WalkState {
        branches_to_state(&self.positions, &self.a, &self.b)
    }
}

fn branches_to_state(positions: &[i64], a: &CoefficientVector, b: &CoefficientVector) -> WalkState {
    let map: BTreeMap<i64, (Complex64, Complex64)> = positions
        .iter()
        .zip(a.iter().zip(b.iter()))
        .filter(|(_, (a, b))| a.norm() > 0.0 || b.norm() > 0.0)
        .map(|(&x, (&a, &b))| (x, (a, b)))
        .collect();
    WalkState::from_map_unchecked(map)
}

/// Branch `coin` of `state` over `positions`, scaled to unit norm (zero vector if empty).
pub fn unit_branch(state: &WalkState, positions: &[i64], coin: Coin) -> CoefficientVector {
    let v = CoefficientVector(
        positions
            .iter()
            .map(|&x| match coin {
                Coin::Zero => state.a(x),
                Coin::One => state.b(x),
            })
            .collect(),
    );
    v.normalized().unwrap_or(v)
}

/// Runs the whole protocol: branch recovery, analysis angle, weights, observables.
pub fn reconstruct_state<S: MeasurementSource>(
    source: &mut S,
    plan: &RunPlan,
    truth: Option<&WalkState>,
) -> Result<ReconstructionReport> {
    let mut rows_a = Vec::with_capacity(plan.run_angles.len());
    let mut rows_b = Vec::with_capacity(plan.run_angles.len());
    for &dt in &plan.run_angles {
        rows_a.push((dt, source.branch(dt, Coin::Zero).stage("measure path 0")?));
        rows_b.push((dt, source.branch(dt, Coin::One).stage("measure path 1")?));
    }
    let ((a_unit, conditioning_a), (b_unit, conditioning_b), used_reachability) =
        solve_branches(&rows_a, &rows_b, plan)?;

    let theta_star_deg = match source.theta_star() {
        Some(t) => t,
        None => choose_theta_star(&a_unit, &b_unit, &plan.positions).stage("choose theta*")?,
    };
    let count_ratio = source
        .count_ratio(theta_star_deg)
        .stage("measure count ratio")?;
    let (c_a, c_b) = recover_weights(
        &a_unit,
        &b_unit,
        &plan.positions,
        count_ratio,
        theta_star_deg,
    )
    .stage("recover weights")?;

    let a = CoefficientVector(a_unit.iter().map(|z| z * c_a).collect());
    let b = CoefficientVector(b_unit.iter().map(|z| z * c_b).collect());
    let state = branches_to_state(&plan.positions, &a, &b);
    let distribution = position_distribution(&state);
    let entropy = entanglement_entropy(&coin_reduced_density(&state)).stage("entropy")?;
    let spread = match &plan.initial_distribution {
        Some(d0) => Some(spread_speed(&distribution, d0, plan.n_steps).stage("spread speed")?),
        None => None,
    };

    let truth = match truth {
        Some(t) => {
            let true_dist = position_distribution(t);
            let true_entropy =
                entanglement_entropy(&coin_reduced_density(t)).stage("truth entropy")?;
            let spread_speed_error = match (&plan.initial_distribution, spread) {
                (Some(d0), Some(s)) => {
                    Some((s - spread_speed(&true_dist, d0, plan.n_steps)?).abs())
                }
                _ => None,
            };
            Some(TruthComparison {
                fidelity_a: fidelity(&unit_branch(t, &plan.positions, Coin::Zero), &a_unit),
                fidelity_b: fidelity(&unit_branch(t, &plan.positions, Coin::One), &b_unit),
                total_variation: distribution.total_variation(&true_dist),
                entropy_error: (entropy - true_entropy).abs(),
                spread_speed_error,
            })
        }
        None => None,
    };

    Ok(ReconstructionReport {
        positions: plan.positions.clone(),
        std_dev: distribution.std_dev(),
        a_unit,
        b_unit,
        c_a,
        c_b,
        a,
        b,
        distribution,
        spread_speed: spread,
        entropy,
        theta_star_deg,
        count_ratio,
        conditioning_a,
        conditioning_b,
        used_reachability,
        truth,
    })
}

/// Simulates the experiment for `initial` and reconstructs the `n_steps` state.
pub fn simulate_and_reconstruct(
    initial: &WalkState,
    psi_deg: f64,
    n_steps: usize,
    noise: MeasurementNoise,
    rng: ChaCha8Rng,
) -> Result<ReconstructionReport> {
    simulate_and_reconstruct_with(
        initial,
        psi_deg,
        n_steps,
        noise,
        BranchSolver::default(),
        rng,
    )
}

/// As [`simulate_and_reconstruct`] with an explicit branch solver.
pub fn simulate_and_reconstruct_with(
    initial: &WalkState,
    psi_deg: f64,
    n_steps: usize,
    noise: MeasurementNoise,
    solver: BranchSolver,
    rng: ChaCha8Rng,
) -> Result<ReconstructionReport> {
    let plan = plan_for_state(initial, n_steps, psi_deg)
        .stage("plan runs")?
        .with_solver(solver);
    let truth = evolve(initial, &CoinOperator::new(psi_deg)?, n_steps);
    let mut sim = SimulatedExperiment::new(initial.clone(), psi_deg, n_steps, noise, rng);
    reconstruct_state(&mut sim, &plan, Some(&truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn fig3_initial() -> WalkState {
        WalkState::from_terms([(c(0.8), -1, Coin::Zero), (c(0.6), 1, Coin::Zero)]).unwrap()
    }

    #[test]
    fn plan_six_steps_two_point_support() {
        let plan = plan_runs(6, &[-1, 1], 45.0).unwrap();
        assert_eq!(plan.window, (-7, 7));
        assert_eq!(plan.parity, 1);
        assert_eq!(plan.positions, vec![-7, -5, -3, -1, 1, 3, 5, 7]);
        assert_eq!(plan.zero_a, vec![7]);
        assert_eq!(plan.zero_b, vec![-7]);
        assert_eq!(plan.unknowns(Coin::Zero), 7);
        assert_eq!(plan.run_angles.len(), 6);
        assert!(plan.run_angles.iter().all(|&a| a > 0.0 && a < 90.0));
    }

    #[test]
    fn plan_one_step_needs_no_ratio_runs() {
        let plan = plan_runs(1, &[0], 45.0).unwrap();
        assert_eq!(plan.window, (-1, 1));
        assert_eq!(plan.positions, vec![-1, 1]);
        assert!(plan.run_angles.is_empty());
        assert_eq!(plan.unknowns(Coin::Zero), 1);
    }

    #[test]
    fn plan_even_parity_matches_brute_force_support() {
        let plan = plan_runs(6, &[-2, 0, 2], 45.0).unwrap();
        assert_eq!(plan.window, (-8, 8));
        assert_eq!(plan.parity, 0);
        let s0 = WalkState::from_terms([
            (c(0.6), -2, Coin::Zero),
            (c(1.0), 0, Coin::Zero),
            (c(0.8), 2, Coin::Zero),
        ])
        .unwrap();
        let s6 = evolve(&s0, &CoinOperator::hadamard(), 6);
        for x in s6.support() {
            assert!(plan.positions.contains(&x));
        }
        assert_eq!(s6.a(8), c(0.0));
        assert_eq!(s6.b(-8), c(0.0));
    }

    #[test]
    fn plan_rejects_bad_input() {
        assert!(plan_runs(0, &[0], 45.0).is_err());
        assert!(plan_runs(2, &[0, 1], 45.0).is_err());
        assert!(plan_runs(2, &[], 45.0).is_err());
        assert!(plan_runs(2, &[0], 90.0).is_err());
    }

    #[test]
    fn recover_two_step_branch() {
        let s0 = fig3_initial();
        let plan = plan_for_state(&s0, 2, 45.0).unwrap();
        let mut sim = SimulatedExperiment::noiseless(s0.clone(), 45.0, 2);
        let rows: Vec<_> = plan
            .run_angles
            .iter()
            .map(|&dt| (dt, sim.branch(dt, Coin::Zero).unwrap()))
            .collect();
        let (a, _) = recover_branch(&rows, &plan, Coin::Zero).unwrap();
        // positions -3, -1, 1, 3; a = (0.4, -0.1, -0.3, 0)
        let truth = CoefficientVector(vec![c(0.4), c(-0.1), c(-0.3), c(0.0)])
            .normalized()
            .unwrap();
        assert!(fidelity(&truth, &a) > 1.0 - 1e-9);
    }

    #[test]
    fn weights_closed_form() {
        let positions = [-1, 1];
        let a = CoefficientVector(vec![c(1.0), c(0.0)]);
        let b = CoefficientVector(vec![c(0.0), c(1.0)]);
        // at 45 deg: |cos(-45)| = |sin 45|, so q = r
        let (ca, cb) = recover_weights(&a, &b, &positions, 1.0, 45.0).unwrap();
        assert!((ca - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((cb - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(
            recover_weights(&a, &b, &positions, f64::INFINITY, 45.0).unwrap(),
            (1.0, 0.0)
        );
        assert!(matches!(
            recover_weights(&a, &b, &positions, 1.0, 90.0),
            Err(Error::WeightRecoveryDegenerate)
        ));
    }

    #[test]
    fn two_step_weights() {
        let s0 = fig3_initial();
        let report = simulate_and_reconstruct(
            &s0,
            45.0,
            2,
            MeasurementNoise::default(),
            ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!((report.c_a - 0.26f64.sqrt()).abs() < 1e-9);
        assert!((report.c_b - 0.74f64.sqrt()).abs() < 1e-9);
        assert!((report.c_a.powi(2) + report.c_b.powi(2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truth_is_optional() {
        let s0 = fig3_initial();
        let plan = plan_for_state(&s0, 2, 45.0).unwrap();
        let mut sim = SimulatedExperiment::noiseless(s0, 45.0, 2);
        let report = reconstruct_state(&mut sim, &plan, None).unwrap();
        assert!(report.truth.is_none());
        let json = serde_json::to_value(&report).unwrap();
        assert!(json.get("truth").is_none());
    }

    #[test]
    fn measurement_file_round_trip() {
        let s0 = fig3_initial();
        let plan = plan_for_state(&s0, 4, 45.0).unwrap();
        let mut sim = SimulatedExperiment::noiseless(s0.clone(), 45.0, 4);
        let direct = reconstruct_state(&mut sim, &plan, None).unwrap();
        let mut file = MeasurementFile::record(&mut sim, &plan, direct.theta_star_deg).unwrap();
        let text = serde_json::to_string(&file).unwrap();
        assert!(text.contains("\"R\""));
        file = serde_json::from_str(&text).unwrap();
        let from_file = reconstruct_state(&mut file, &plan, None).unwrap();
        assert!(from_file.distribution.total_variation(&direct.distribution) < 1e-12);
    }

    #[test]
    fn missing_run_is_reported_with_stage() {
        let s0 = fig3_initial();
        let plan = plan_for_state(&s0, 4, 45.0).unwrap();
        let mut file = MeasurementFile {
            runs: vec![],
            weights: WeightRecord {
                theta_star_deg: 30.0,
                r: 1.0,
            },
        };
        let err = reconstruct_state(&mut file, &plan, None).unwrap_err();
        assert!(matches!(err.root(), Error::MissingMeasurement(_)));
        assert!(err.to_string().starts_with("measure path 0"));
    }
}
