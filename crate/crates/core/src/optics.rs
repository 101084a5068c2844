//! Jones-calculus model of the linear-optics walk.
//!
//! The coin is the photon's path (`|0>`, `|1>`), the walker position is a
//! polarization state `|k>_p = cos(k dtheta)|H> + sin(k dtheta)|V>`. A beam
//! splitter tosses the coin and, in each path, a pair of half-wave plates rotates
//! the polarization by `-dtheta` (path 0) or `+dtheta` (path 1), which moves
//! `|k>_p` to `|k-1>_p` or `|k+1>_p`.

use nalgebra::{Matrix2, Matrix4, Vector4};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::encode::{pure_density, QubitDensityMatrix};
use crate::error::{Error, Result};
use crate::walk::{CoinOperator, Matrix2c, WalkState};

/// `|p1V|^2` below this makes the count ratio undefined.
pub const COUNT_RATIO_TOL: f64 = 1e-20;
/// Encodings whose physical norm falls below this cannot be normalized.
pub const PHYSICAL_NORM_TOL: f64 = 1e-12;

/// A 2x2 Jones matrix acting on `(|H>, |V>)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesMatrix(pub Matrix2c);

impl JonesMatrix {
    pub fn from_real(m: Matrix2<f64>) -> Self {
        Self(m.map(|x| Complex64::new(x, 0.0)))
    }

    /// Polarization rotation by `angle` (counter-clockwise from H toward V).
    pub fn rotation(angle_deg: f64) -> Self {
        let (s, c) = angle_deg.to_radians().sin_cos();
        Self::from_real(Matrix2::new(c, -s, s, c))
    }

    pub fn then(&self, next: &JonesMatrix) -> JonesMatrix {
        JonesMatrix(next.0 * self.0)
    }

    pub fn apply(&self, h: Complex64, v: Complex64) -> (Complex64, Complex64) {
        let m = &self.0;
        (m[(0, 0)] * h + m[(0, 1)] * v, m[(1, 0)] * h + m[(1, 1)] * v)
    }

    pub fn determinant(&self) -> Complex64 {
        self.0.determinant()
    }

    /// `||J^dagger J - I||_F`
    pub fn unitarity_error(&self) -> f64 {
        (self.0.adjoint() * self.0 - Matrix2c::identity()).norm()
    }
}

impl std::ops::Mul for JonesMatrix {
    type Output = JonesMatrix;

    fn mul(self, rhs: JonesMatrix) -> JonesMatrix {
        JonesMatrix(self.0 * rhs.0)
    }
}

/// Half-wave plate with its fast axis at `orientation` degrees from H.
pub fn hwp_matrix(orientation_deg: f64) -> JonesMatrix {
    let (s, c) = (2.0 * orientation_deg.to_radians()).sin_cos();
    JonesMatrix::from_real(Matrix2::new(c, s, s, -c))
}

/// Path-conditioned polarization rotations. Path 1 gets `HWP(dtheta/2) HWP(0)`,
/// a rotation by `+dtheta`; path 0 gets `HWP(-dtheta/2) HWP(0)`, a rotation by
/// `-dtheta`. The `0 deg` plate acts first.
pub fn shift_blocks(delta_theta_deg: f64) -> (JonesMatrix, JonesMatrix) {
    let back = hwp_matrix(-delta_theta_deg / 2.0) * hwp_matrix(0.0);
    let forward = hwp_matrix(delta_theta_deg / 2.0) * hwp_matrix(0.0);
    (back, forward)
}

/// Ordering of the 4-dimensional space is `(p0H, p0V, p1H, p1V)`.
pub type Operator4 = Matrix4<Complex64>;

/// The conditional translation as a block-diagonal 4x4 operator.
pub fn conditional_shift(delta_theta_deg: f64) -> Operator4 {
    let (back, forward) = shift_blocks(delta_theta_deg);
    let mut op = Operator4::zeros();
    op.fixed_view_mut::<2, 2>(0, 0).copy_from(&back.0);
    op.fixed_view_mut::<2, 2>(2, 2).copy_from(&forward.0);
    op
}

/// Beam-splitter coin: `S_c(psi)` on the path index, identity on polarization.
pub fn coin_bs(psi_deg: f64) -> Result<Operator4> {
    let coin = CoinOperator::new(psi_deg)?;
    let s = coin.matrix();
    let mut op = Operator4::zeros();
    for (p_out, p_in) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        for pol in 0..2 {
            op[(2 * p_out + pol, 2 * p_in + pol)] = Complex64::new(s[(p_out, p_in)], 0.0);
        }
    }
    Ok(op)
}

/// One step `T_p S_c` of the optical walk.
pub fn step_operator(psi_deg: f64, delta_theta_deg: f64) -> Result<Operator4> {
    Ok(conditional_shift(delta_theta_deg) * coin_bs(psi_deg)?)
}

/// `||U^dagger U - I||_F`
pub fn unitarity_error(op: &Operator4) -> f64 {
    (op.adjoint() * op - Operator4::identity()).norm()
}

/// Photon amplitudes over path x polarization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalOpticalState {
    pub amps: Vector4<Complex64>,
}

impl PhysicalOpticalState {
    pub fn new(p0h: Complex64, p0v: Complex64, p1h: Complex64, p1v: Complex64) -> Self {
        Self {
            amps: Vector4::new(p0h, p0v, p1h, p1v),
        }
    }

    pub fn p0h(&self) -> Complex64 {
        self.amps[0]
    }
    pub fn p0v(&self) -> Complex64 {
        self.amps[1]
    }
    pub fn p1h(&self) -> Complex64 {
        self.amps[2]
    }
    pub fn p1v(&self) -> Complex64 {
        self.amps[3]
    }

    /// Polarization pair `(H, V)` carried by `path` (0 or 1).
    pub fn branch(&self, path: usize) -> (Complex64, Complex64) {
        (self.amps[2 * path], self.amps[2 * path + 1])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.norm_squared()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        max_modulus((self.amps - other.amps).iter())
    }
}

/// Largest entry modulus.
pub fn max_modulus<'a, I: IntoIterator<Item = &'a Complex64>>(it: I) -> f64 {
    it.into_iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Walker position `k` as a polarization state at encoding angle `delta_theta`.
pub fn position_polarization(k: i64, delta_theta_deg: f64) -> (f64, f64) {
    let (s, c) = (k as f64 * delta_theta_deg).to_radians().sin_cos();
    (c, s)
}

/// Unnormalized image of a walk state: `sum_k a_k |k>_p |0> + sum_k b_k |k>_p |1>`.
pub fn encode_walk_raw(state: &WalkState, delta_theta_deg: f64) -> PhysicalOpticalState {
    let mut amps = Vector4::<Complex64>::zeros();
    for (k, a, b) in state.iter() {
        let (c, s) = position_polarization(k, delta_theta_deg);
        amps[0] += a * c;
        amps[1] += a * s;
        amps[2] += b * c;
        amps[3] += b * s;
    }
    PhysicalOpticalState { amps }
}

/// Normalized optical state for a walk state, together with the factor `N_p`
/// it was divided by.
pub fn encode_walk(state: &WalkState, delta_theta_deg: f64) -> Result<(PhysicalOpticalState, f64)> {
    let mut raw = encode_walk_raw(state, delta_theta_deg);
    let np = raw.norm_sqr().sqrt();
    if np < PHYSICAL_NORM_TOL {
        return Err(Error::InvalidParameter(format!(
            "walk state encodes to the zero vector at dtheta = {delta_theta_deg}"
        )));
    }
    raw.amps /= Complex64::new(np, 0.0);
    Ok((raw, np))
}

/// `n` applications of `T_p S_c`.
pub fn physical_evolve(
    input: &PhysicalOpticalState,
    psi_deg: f64,
    delta_theta_deg: f64,
    n: usize,
) -> Result<PhysicalOpticalState> {
    let u = step_operator(psi_deg, delta_theta_deg)?;
    let mut amps = input.amps;
    for _ in 0..n {
        amps = u * amps;
    }
    Ok(PhysicalOpticalState { amps })
}

/// Which photons enter the path count ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountRatioMode {
    /// H-projected counts in path 0 over V-projected counts in path 1.
    #[default]
    Projected,
    /// All photons in path 0 over all photons in path 1.
    TotalIntensity,
}

/// `r = |p0H|^2 / |p1V|^2`, or the total path intensities in
/// [`CountRatioMode::TotalIntensity`].
pub fn path_count_ratio(state: &PhysicalOpticalState, mode: CountRatioMode) -> Result<f64> {
    let (num, den) = match mode {
        CountRatioMode::Projected => (state.p0h().norm_sqr(), state.p1v().norm_sqr()),
        CountRatioMode::TotalIntensity => (
            state.p0h().norm_sqr() + state.p0v().norm_sqr(),
            state.p1h().norm_sqr() + state.p1v().norm_sqr(),
        ),
    };
    if den < COUNT_RATIO_TOL {
        return Err(Error::CountRatioUndefined);
    }
    Ok(num / den)
}

/// Counts per outcome pair in one measurement basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisCounts {
    pub plus: u64,
    pub minus: u64,
}

/// Result of tomography on one path.
#[derive(Debug, Clone, PartialEq)]
pub struct TomographyRecord {
    pub path: usize,
    pub rho: QubitDensityMatrix,
    /// Zero in exact mode.
    pub total_counts: u64,
    /// H/V, D/A, R/L; `None` in exact mode.
    pub counts: Option<[BasisCounts; 3]>,
}

/// Single-qubit tomography of the polarization carried by one path.
///
/// `shots_per_basis = 0` returns the exact state. Otherwise each of the H/V,
/// D/A, R/L bases is sampled `shots_per_basis` times, the Pauli expectations
/// are inverted linearly and the estimate is projected onto the nearest
/// density matrix by clipping eigenvalues and renormalizing.
pub fn tomography<R: Rng + ?Sized>(
    path: usize,
    branch: (Complex64, Complex64),
    shots_per_basis: u64,
    rng: &mut R,
) -> Result<TomographyRecord> {
    let (h, v) = branch;
    let norm = (h.norm_sqr() + v.norm_sqr()).sqrt();
    if !(norm > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "path {path} carries no amplitude"
        )));
    }
    let (h, v) = (h / norm, v / norm);
    let exact = pure_density(h, v);
    if shots_per_basis == 0 {
        return Ok(TomographyRecord {
            path,
            rho: exact,
            total_counts: 0,
            counts: None,
        });
    }
    let (x, y, z) = exact.bloch();
    let mut counts = [BasisCounts { plus: 0, minus: 0 }; 3];
    let mut expect = [0.0; 3];
    for (i, e) in [x, y, z].into_iter().enumerate() {
        let p = (0.5 * (1.0 + e)).clamp(0.0, 1.0);
        let plus = Binomial::new(shots_per_basis, p)
            .map_err(|err| Error::InvalidParameter(err.to_string()))?
            .sample(rng);
        counts[i] = BasisCounts {
            plus,
            minus: shots_per_basis - plus,
        };
        expect[i] = (2.0 * plus as f64 - shots_per_basis as f64) / shots_per_basis as f64;
    }
    // H/V measures Z, D/A measures X, R/L measures Y
    let [ex, ey, ez] = expect;
    let rho = project_psd(ex, ey, ez);
    Ok(TomographyRecord {
        path,
        rho,
        total_counts: 3 * shots_per_basis,
        counts: Some([counts[2], counts[0], counts[1]]),
    })
}

/// Nearest density matrix to the linear-inversion estimate with Bloch vector
/// `(x, y, z)`: eigenvalues `(1 +- |r|)/2` are clipped at zero and renormalized,
/// which for a qubit shrinks `|r|` to at most 1.
pub fn project_psd(x: f64, y: f64, z: f64) -> QubitDensityMatrix {
    let len = (x * x + y * y + z * z).sqrt();
    if len <= 1.0 {
        return QubitDensityMatrix::from_bloch(x, y, z);
    }
    QubitDensityMatrix::from_bloch(x / len, y / len, z / len)
}

/// Loss bookkeeping for the looped setup. Losses are applied once per two steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonBudget {
    /// Fraction of photons the loop coupler keeps in the loop per round trip.
    pub coupler_retention: f64,
    /// Additional fractional loss per two steps, on top of the coupler.
    pub extra_loss: f64,
    /// Photons (or pulses) per second entering the walk.
    pub source_rate: f64,
    pub detection_efficiency: f64,
    pub steps: f64,
}

impl PhotonBudget {
    fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("coupler_retention", self.coupler_retention),
            ("extra_loss", self.extra_loss),
            ("detection_efficiency", self.detection_efficiency),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {f} outside [0, 1]"
                )));
            }
        }
        if !(self.source_rate >= 0.0 && self.source_rate.is_finite()) {
            return Err(Error::InvalidParameter("source_rate must be >= 0".into()));
        }
        if !(self.steps >= 0.0 && self.steps.is_finite()) {
            return Err(Error::InvalidParameter("steps must be >= 0".into()));
        }
        Ok(())
    }

    /// Budget whose total loss per two steps (coupler included) is `total_loss`.
    pub fn from_total_loss(
        coupler_retention: f64,
        total_loss: f64,
        source_rate: f64,
        detection_efficiency: f64,
        steps: f64,
    ) -> Result<Self> {
        if !(coupler_retention > 0.0) {
            return Err(Error::InvalidParameter(
                "coupler_retention must be > 0".into(),
            ));
        }
        let b = Self {
            coupler_retention,
            extra_loss: 1.0 - (1.0 - total_loss) / coupler_retention,
            source_rate,
            detection_efficiency,
            steps,
        };
        b.validate().map(|_| b)
    }

    /// Fraction of photons surviving two steps.
    pub fn survival_per_two_steps(&self) -> f64 {
        self.coupler_retention * (1.0 - self.extra_loss)
    }
}

/// Detected events per second after `b.steps` steps.
pub fn photon_budget(b: &PhotonBudget) -> Result<f64> {
    b.validate()?;
    Ok(b.source_rate * b.survival_per_two_steps().powf(b.steps / 2.0) * b.detection_efficiency)
}

/// The extra loss per two steps that makes [`photon_budget`] return
/// `target_rate`; the `extra_loss` field of `b` is ignored.
pub fn implied_extra_loss(b: &PhotonBudget, target_rate: f64) -> Result<f64> {
    if !(target_rate > 0.0) || !(b.steps > 0.0) {
        return Err(Error::InvalidParameter(
            "target rate and steps must be > 0".into(),
        ));
    }
    let probe = PhotonBudget {
        extra_loss: 0.0,
        ..*b
    };
    probe.validate()?;
    let per_two = (target_rate / (b.source_rate * b.detection_efficiency)).powf(2.0 / b.steps);
    let loss = 1.0 - per_two / b.coupler_retention;
    if !(0.0..=1.0).contains(&loss) {
        return Err(Error::InvalidParameter(format!(
            "target rate {target_rate} unreachable with this coupler (implied extra loss {loss})"
        )));
    }
    Ok(loss)
}
