//! Encoding an `n`-dimensional state into a single qubit.
//!
//! Each basis label `k` is mapped to a (generally non-orthogonal) qubit state
//! `|k>_q = cos(theta_k)|0> + e^{i phi_k} sin(theta_k)|1>`. The encoded qubit is
//! `(C0|0> + C1|1>)/N_q` with `C0 = sum a_k cos(theta_k)` and
//! `C1 = sum a_k e^{i phi_k} sin(theta_k)`. Tomography of that qubit yields the
//! ratio `R = C0/C1`, i.e. one homogeneous linear equation
//!
//! ```text
//! sum_k (cos(theta_k) - R e^{i phi_k} sin(theta_k)) a_k = 0
//! ```
//!
//! Repeating with `n - 1` different basis sets ("rows") pins down `a` up to a
//! global phase; the unit-norm solution is the null vector of the stacked system.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::walk::Matrix2c;

/// Below this normalization the encoded qubit is treated as the zero vector.
pub const DEGENERATE_NQ: f64 = 1e-12;
/// Denominator threshold for the two ratio estimates.
pub const RATIO_DENOM_TOL: f64 = 1e-10;
/// `sigma_next / ||M||` below this means the null space is not one-dimensional.
pub const AMBIGUITY_TOL: f64 = 1e-8;
/// Magnitude a coefficient needs to anchor the global phase.
pub const PHASE_ANCHOR_TOL: f64 = 1e-8;
/// Two basis points closer than this in `1 - |<u|v>|^2` are the same ray.
pub const DISTINCT_TOL: f64 = 1e-12;
/// `|sin theta|` below this puts a basis point on a pole of the Bloch sphere.
pub const POLAR_TOL: f64 = 1e-9;

/// One point on the Bloch sphere, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisPoint {
    pub theta_deg: f64,
    pub phi_deg: f64,
}

impl BasisPoint {
    pub fn new(theta_deg: f64, phi_deg: f64) -> Self {
        Self { theta_deg, phi_deg }
    }

    /// `(cos theta, e^{i phi} sin theta)`
    pub fn components(&self) -> (f64, Complex64) {
        let t = self.theta_deg.to_radians();
        let phase = Complex64::from_polar(1.0, self.phi_deg.to_radians());
        (t.cos(), phase * t.sin())
    }

    /// `|<self|other>|^2`
    pub fn overlap(&self, other: &BasisPoint) -> f64 {
        let (c1, s1) = self.components();
        let (c2, s2) = other.components();
        (c1 * c2 + s1.conj() * s2).norm_sqr()
    }
}

/// A family of basis-point sets, one set ("row") per measured ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingScheme {
    n: usize,
    rows: Vec<Vec<BasisPoint>>,
    generator: Option<(f64, f64)>,
    // (cos theta, e^{i phi} sin theta) per row and label
    table: Vec<Vec<(f64, Complex64)>>,
}

impl EncodingScheme {
    /// Rows `j = 1..n-1` with `theta_k^j = j k dtheta` and `phi_k^j = k dphi`, `k = 1..n`.
    ///
    /// The generated family is not screened for coincident basis points; whether
    /// it can be inverted is decided by the conditioning gate in [`solve_null`].
    pub fn generated(n: usize, delta_theta_deg: f64, delta_phi_deg: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if !delta_theta_deg.is_finite() || !delta_phi_deg.is_finite() {
            return Err(Error::InvalidParameter("non-finite scheme angle".into()));
        }
        let rows = (1..n)
            .map(|j| {
                (1..=n)
                    .map(|k| {
                        BasisPoint::new((j * k) as f64 * delta_theta_deg, k as f64 * delta_phi_deg)
                    })
                    .collect()
            })
            .collect();
        Ok(Self::build(n, rows, Some((delta_theta_deg, delta_phi_deg))))
    }

    /// Explicit per-row angles. Every row must have `n` pairwise distinct points.
    pub fn explicit(n: usize, rows: Vec<Vec<BasisPoint>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        for (j, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "row {j} has {} basis points, expected {n}",
                    row.len()
                )));
            }
            if row
                .iter()
                .any(|p| !p.theta_deg.is_finite() || !p.phi_deg.is_finite())
            {
                return Err(Error::InvalidParameter(format!(
                    "row {j} has a non-finite angle"
                )));
            }
            if let Some((k1, k2)) = first_coincidence(row) {
                return Err(Error::InvalidParameter(format!(
                    "row {j}: basis points {k1} and {k2} coincide on the Bloch sphere"
                )));
            }
        }
        Ok(Self::build(n, rows, None))
    }

    fn build(n: usize, rows: Vec<Vec<BasisPoint>>, generator: Option<(f64, f64)>) -> Self {
        let table = rows
            .iter()
            .map(|r| r.iter().map(BasisPoint::components).collect())
            .collect();
        Self {
            n,
            rows,
            generator,
            table,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, j: usize) -> Option<&[BasisPoint]> {
        self.rows.get(j).map(Vec::as_slice)
    }

    /// `(cos theta_k, e^{i phi_k} sin theta_k)` for every label of row `j`.
    pub fn components(&self, j: usize) -> Option<&[(f64, Complex64)]> {
        self.table.get(j).map(Vec::as_slice)
    }

    pub fn rows(&self) -> &[Vec<BasisPoint>] {
        &self.rows
    }

    pub fn generator(&self) -> Option<(f64, f64)> {
        self.generator
    }

    /// Indices of rows containing two coincident basis points.
    pub fn degenerate_rows(&self) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| first_coincidence(r).is_some())
            .map(|(j, _)| j)
            .collect()
    }

    /// Rows whose every basis point sits on a pole (`sin theta ~ 0`). Such a row
    /// carries no information about the coefficients.
    pub fn polar_rows(&self) -> Vec<usize> {
        self.table
            .iter()
            .enumerate()
            .filter(|(_, row)| row.iter().all(|(_, s)| s.norm() < POLAR_TOL))
            .map(|(j, _)| j)
            .collect()
    }

    pub fn to_file(&self) -> SchemeFile {
        match self.generator {
            Some((dt, dp)) => SchemeFile::Generated {
                n: self.n,
                delta_theta_deg: dt,
                delta_phi_deg: dp,
            },
            None => SchemeFile::Explicit {
                n: self.n,
                rows: self
                    .rows
                    .iter()
                    .map(|r| r.iter().map(|p| [p.theta_deg, p.phi_deg]).collect())
                    .collect(),
            },
        }
    }
}

fn first_coincidence(row: &[BasisPoint]) -> Option<(usize, usize)> {
    for i in 0..row.len() {
        for k in i + 1..row.len() {
            if 1.0 - row[i].overlap(&row[k]) < DISTINCT_TOL {
                return Some((i, k));
            }
        }
    }
    None
}

/// On-disk scheme description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemeFile {
    Generated {
        n: usize,
        delta_theta_deg: f64,
        delta_phi_deg: f64,
    },
    Explicit {
        n: usize,
        /// `rows[j][k] = [theta_deg, phi_deg]`
        rows: Vec<Vec<[f64; 2]>>,
    },
}

impl TryFrom<SchemeFile> for EncodingScheme {
    type Error = Error;

    fn try_from(f: SchemeFile) -> Result<Self> {
        match f {
            SchemeFile::Generated {
                n,
                delta_theta_deg,
                delta_phi_deg,
            } => EncodingScheme::generated(n, delta_theta_deg, delta_phi_deg),
            SchemeFile::Explicit { n, rows } => EncodingScheme::explicit(
                n,
                rows.into_iter()
                    .map(|r| r.into_iter().map(|[t, p]| BasisPoint::new(t, p)).collect())
                    .collect(),
            ),
        }
    }
}

/// Coefficients `a_k` of `sum a_k |k>`. Serialized as a list of `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct CoefficientVector(pub Vec<Complex64>);

impl From<Vec<[f64; 2]>> for CoefficientVector {
    fn from(v: Vec<[f64; 2]>) -> Self {
        Self(
            v.into_iter()
                .map(|[re, im]| Complex64::new(re, im))
                .collect(),
        )
    }
}

impl From<CoefficientVector> for Vec<[f64; 2]> {
    fn from(v: CoefficientVector) -> Self {
        v.0.into_iter().map(|z| [z.re, z.im]).collect()
    }
}

impl CoefficientVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Rescaled to unit norm. Fails on the zero vector.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidParameter(
                "cannot normalize a zero vector".into(),
            ));
        }
        Ok(Self(self.0.iter().map(|z| z / n).collect()))
    }

    /// Global phase fixed so the first coefficient above [`PHASE_ANCHOR_TOL`] is real positive.
    pub fn phase_fixed(&self) -> Self {
        let mut v = self.clone();
        fix_phase(&mut v.0, None);
        v
    }

    pub fn iter(&self) -> impl Iterator<Item = &Complex64> {
        self.0.iter()
    }
}

/// Rotates `v` so `v[anchor]` (or the first coefficient above tolerance) is real positive.
pub(crate) fn fix_phase(v: &mut [Complex64], anchor: Option<usize>) {
    let idx = anchor
        .filter(|&i| i < v.len() && v[i].norm() > PHASE_ANCHOR_TOL)
        .or_else(|| v.iter().position(|z| z.norm() > PHASE_ANCHOR_TOL));
    if let Some(i) = idx {
        let rot = v[i].conj() / v[i].norm();
        for z in v.iter_mut() {
            *z *= rot;
        }
    }
}

/// Normalized encoded qubit plus the raw sums it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodedQubit {
    pub c0: Complex64,
    pub c1: Complex64,
    pub raw_c0: Complex64,
    pub raw_c1: Complex64,
    pub nq: f64,
}

impl EncodedQubit {
    /// Normalizes an arbitrary amplitude pair.
    pub fn from_raw(raw_c0: Complex64, raw_c1: Complex64) -> Option<Self> {
        let nq = (raw_c0.norm_sqr() + raw_c1.norm_sqr()).sqrt();
        (nq >= DEGENERATE_NQ).then(|| Self {
            c0: raw_c0 / nq,
            c1: raw_c1 / nq,
            raw_c0,
            raw_c1,
            nq,
        })
    }
}

/// Raw `(C0, C1)` from coefficients and the `(cos, e^{i phi} sin)` table of one row.
pub fn raw_amplitudes(coeffs: &[Complex64], row: &[(f64, Complex64)]) -> (Complex64, Complex64) {
    coeffs.iter().zip(row).fold(
        (Complex64::default(), Complex64::default()),
        |(c0, c1), (a, &(c, s))| (c0 + a * c, c1 + a * s),
    )
}

pub fn encode(
    coeffs: &CoefficientVector,
    scheme: &EncodingScheme,
    row: usize,
) -> Result<EncodedQubit> {
    if coeffs.len() != scheme.dim() {
        return Err(Error::InvalidParameter(format!(
            "coefficient vector has length {}, scheme dimension is {}",
            coeffs.len(),
            scheme.dim()
        )));
    }
    let points = scheme
        .components(row)
        .ok_or_else(|| Error::InvalidParameter(format!("scheme has no row {row}")))?;
    let (raw_c0, raw_c1) = raw_amplitudes(&coeffs.0, points);
    EncodedQubit::from_raw(raw_c0, raw_c1).ok_or_else(|| {
        Error::DegenerateEncoding((raw_c0.norm_sqr() + raw_c1.norm_sqr()).sqrt(), row)
    })
}

/// 2x2 density matrix in the `(|0>, |1>)` basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitDensityMatrix(pub Matrix2c);

impl QubitDensityMatrix {
    pub const TRACE_TOL: f64 = 1e-9;

    /// Wraps a matrix after checking Hermiticity, unit trace and positivity.
    pub fn new(m: Matrix2c) -> Result<Self> {
        if (m[(1, 0)] - m[(0, 1)].conj()).norm() > Self::TRACE_TOL
            || m[(0, 0)].im.abs() > Self::TRACE_TOL
            || m[(1, 1)].im.abs() > Self::TRACE_TOL
        {
            return Err(Error::InvalidParameter(
                "density matrix is not Hermitian".into(),
            ));
        }
        let tr = m[(0, 0)].re + m[(1, 1)].re;
        if (tr - 1.0).abs() > Self::TRACE_TOL {
            return Err(Error::NotNormalized(tr));
        }
        let (lo, _) = crate::walk::hermitian2_eigenvalues(&m);
        if lo < -Self::TRACE_TOL {
            return Err(Error::NotPsd(lo));
        }
        Ok(Self(m))
    }

    /// From a Bloch vector `(x, y, z)`: `rho = (I + x X + y Y + z Z) / 2`.
    pub fn from_bloch(x: f64, y: f64, z: f64) -> Self {
        Self(Matrix2c::new(
            Complex64::new(0.5 * (1.0 + z), 0.0),
            Complex64::new(0.5 * x, -0.5 * y),
            Complex64::new(0.5 * x, 0.5 * y),
            Complex64::new(0.5 * (1.0 - z), 0.0),
        ))
    }

    pub fn bloch(&self) -> (f64, f64, f64) {
        let m = &self.0;
        (
            2.0 * m[(1, 0)].re,
            2.0 * m[(1, 0)].im,
            m[(0, 0)].re - m[(1, 1)].re,
        )
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.0[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.0[(0, 0)].re + self.0[(1, 1)].re
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        crate::walk::hermitian2_eigenvalues(&self.0)
    }
}

/// `|psi><psi|` for a normalized qubit.
pub fn density_matrix(q: &EncodedQubit) -> QubitDensityMatrix {
    pure_density(q.c0, q.c1)
}

pub(crate) fn pure_density(c0: Complex64, c1: Complex64) -> QubitDensityMatrix {
    QubitDensityMatrix(Matrix2c::new(
        c0 * c0.conj(),
        c0 * c1.conj(),
        c1 * c0.conj(),
        c1 * c1.conj(),
    ))
}

/// Ratio `R = C0/C1` read off a density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioEstimate {
    pub r: Complex64,
    /// `|rho11/rho21 - rho12/rho22|`, zero for pure states; zero also when only
    /// one estimate was usable.
    pub discrepancy: f64,
}

impl fmt::Display for RatioEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R = {} (discrepancy {:e})", self.r, self.discrepancy)
    }
}

/// `R = rho11/rho21 = rho12/rho22`. For noisy inputs the two estimates are
/// averaged with weights `|rho21|` and `|rho22|`.
pub fn extract_ratio(rho: &QubitDensityMatrix) -> Result<RatioEstimate> {
    let (r11, r12, r21, r22) = (
        rho.entry(0, 0),
        rho.entry(0, 1),
        rho.entry(1, 0),
        rho.entry(1, 1),
    );
    let (w1, w2) = (r21.norm(), r22.norm());
    let first = (w1 >= RATIO_DENOM_TOL).then(|| r11 / r21);
    let second = (w2 >= RATIO_DENOM_TOL).then(|| r12 / r22);
    match (first, second) {
        (Some(e1), Some(e2)) => Ok(RatioEstimate {
            r: (e1 * w1 + e2 * w2) / (w1 + w2),
            discrepancy: (e1 - e2).norm(),
        }),
        (Some(e), None) | (None, Some(e)) => Ok(RatioEstimate {
            r: e,
            discrepancy: 0.0,
        }),
        (None, None) => Err(Error::RatioUndefined),
    }
}

/// What one measured row contributes to the linear system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowMeasurement {
    /// `C0 - R C1 = 0`
    Ratio(Complex64),
    /// The ratio was undefined because `C1 ~ 0`; the row becomes `C1 = 0`.
    VanishingC1,
}

/// [`extract_ratio`] with the `C1 ~ 0` failure turned into its fallback constraint.
pub fn measure_row(rho: &QubitDensityMatrix) -> RowMeasurement {
    match extract_ratio(rho) {
        Ok(est) => RowMeasurement::Ratio(est.r),
        Err(_) => RowMeasurement::VanishingC1,
    }
}

/// Stacks one homogeneous equation per measured row plus one unit row per known-zero index.
pub fn assemble_system(
    measurements: &[(usize, RowMeasurement)],
    scheme: &EncodingScheme,
    zero_constraints: &[usize],
) -> Result<DMatrix<Complex64>> {
    let n = scheme.dim();
    let m = measurements.len() + zero_constraints.len();
    if m + 1 < n {
        return Err(Error::Underdetermined {
            rows: m,
            unknowns: n,
        });
    }
    let mut sys = DMatrix::<Complex64>::zeros(m, n);
    for (i, (j, meas)) in measurements.iter().enumerate() {
        let points = scheme
            .components(*j)
            .ok_or_else(|| Error::InvalidParameter(format!("scheme has no row {j}")))?;
        for (k, &(c, s)) in points.iter().enumerate() {
            sys[(i, k)] = match meas {
                RowMeasurement::Ratio(r) => Complex64::new(c, 0.0) - r * s,
                RowMeasurement::VanishingC1 => s,
            };
        }
    }
    for (i, &k) in zero_constraints.iter().enumerate() {
        if k >= n {
            return Err(Error::InvalidParameter(format!(
                "zero constraint index {k} >= {n}"
            )));
        }
        sys[(measurements.len() + i, k)] = Complex64::new(1.0, 0.0);
    }
    Ok(sys)
}

/// Smallest singular values of a solved system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub sigma_min: f64,
    pub sigma_next: f64,
    /// Spectral norm (largest singular value).
    pub norm: f64,
}

impl Conditioning {
    /// `sigma_next / ||M||`, the gap that makes the null direction unique.
    pub fn gap(&self) -> f64 {
        if self.norm > 0.0 {
            self.sigma_next / self.norm
        } else {
            0.0
        }
    }
}

/// Unit-norm, phase-fixed least-squares null vector of `system`.
pub fn solve_null(system: &DMatrix<Complex64>) -> Result<(CoefficientVector, Conditioning)> {
    solve_null_anchored(system, None)
}

/// As [`solve_null`], anchoring the global phase on coefficient `anchor` when it is
/// large enough.
pub fn solve_null_anchored(
    system: &DMatrix<Complex64>,
    anchor: Option<usize>,
) -> Result<(CoefficientVector, Conditioning)> {
    let (rows, n) = system.shape();
    if n == 0 {
        return Err(Error::InvalidParameter("empty system".into()));
    }
    if rows + 1 < n {
        return Err(Error::Underdetermined { rows, unknowns: n });
    }
    if n == 1 {
        // a single unknown is fixed by normalization alone
        let norm = system.column(0).norm();
        let cond = Conditioning {
            sigma_min: norm,
            sigma_next: norm.max(1.0),
            norm: norm.max(1.0),
        };
        return Ok((CoefficientVector(vec![Complex64::new(1.0, 0.0)]), cond));
    }
    let (sv, vecs) = sorted_svd(system);
    let cond = Conditioning {
        sigma_min: sv[0],
        sigma_next: sv[1],
        norm: sv[sv.len() - 1],
    };
    if !(cond.gap() >= AMBIGUITY_TOL) {
        return Err(Error::AmbiguousNullSpace(cond.gap()));
    }
    let mut v: Vec<Complex64> = vecs.column(0).iter().copied().collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|z| *z /= norm);
    fix_phase(&mut v, anchor);
    Ok((CoefficientVector(v), cond))
}

/// Singular values in increasing order with the matching right-singular vectors
/// as columns. Short systems are zero-padded so all `n` vectors appear.
fn sorted_svd(system: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let (rows, n) = system.shape();
    let padded = if rows < n {
        let mut p = DMatrix::<Complex64>::zeros(n, n);
        p.view_mut((0, 0), (rows, n)).copy_from(system);
        p
    } else {
        system.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    // rows of V^T are conjugated right-singular vectors
    let vecs = DMatrix::from_fn(n, order.len(), |r, c| v_t[(order[c], r)].conj());
    (order.iter().map(|&i| sv[i]).collect(), vecs)
}

/// Orthonormal basis (as columns) of the directions with `sigma <= rel_tol ||M||`.
pub fn null_space(system: &DMatrix<Complex64>, rel_tol: f64) -> DMatrix<Complex64> {
    let (sv, vecs) = sorted_svd(system);
    let norm = sv.last().copied().unwrap_or(0.0);
    let dim = sv.iter().take_while(|&&s| s <= rel_tol * norm).count();
    vecs.columns(0, dim).into_owned()
}

/// `|<truth|recovered>|^2`
pub fn fidelity(truth: &CoefficientVector, recovered: &CoefficientVector) -> f64 {
    truth
        .0
        .iter()
        .zip(&recovered.0)
        .map(|(t, r)| t.conj() * r)
        .sum::<Complex64>()
        .norm_sqr()
}

/// How a ratio measurement error is modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    /// `R (1 + eps)`, `eps ~ U[-b, b]`.
    #[default]
    Relative,
    /// `Re R (1 + eps1) + i Im R (1 + eps2)`, independent `eps ~ U[-b, b]`.
    Componentwise,
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseModel::Relative => "relative",
            NoiseModel::Componentwise => "componentwise",
        })
    }
}

pub fn perturb_ratio<R: Rng + ?Sized>(
    r: Complex64,
    bound: f64,
    model: NoiseModel,
    rng: &mut R,
) -> Result<Complex64> {
    if !(0.0..1.0).contains(&bound) {
        return Err(Error::InvalidParameter(format!(
            "noise bound {bound} outside [0, 1)"
        )));
    }
    if bound == 0.0 {
        return Ok(r);
    }
    let dist = Uniform::new_inclusive(-bound, bound).expect("bound is finite");
    Ok(match model {
        NoiseModel::Relative => r * (1.0 + dist.sample(rng)),
        NoiseModel::Componentwise => Complex64::new(
            r.re * (1.0 + dist.sample(rng)),
            r.im * (1.0 + dist.sample(rng)),
        ),
    })
}

/// Uniformly random unit vector in `C^n` (normalized complex Gaussians).
pub fn haar_random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CoefficientVector {
    loop {
        let v: Vec<Complex64> = (0..n)
            .map(|_| {
                Complex64::new(
                    StandardNormal.sample(&mut *rng),
                    StandardNormal.sample(&mut *rng),
                )
            })
            .collect();
        if let Ok(unit) = CoefficientVector(v).normalized() {
            return unit;
        }
    }
}

/// Noiseless measurement of every scheme row.
pub fn measure_all(
    coeffs: &CoefficientVector,
    scheme: &EncodingScheme,
) -> Result<Vec<(usize, RowMeasurement)>> {
    (0..scheme.num_rows())
        .map(|j| {
            let q = encode(coeffs, scheme, j)?;
            Ok((j, measure_row(&density_matrix(&q))))
        })
        .collect()
}

/// Reconstructs the coefficients from a set of row measurements.
pub fn decode(
    measurements: &[(usize, RowMeasurement)],
    scheme: &EncodingScheme,
) -> Result<(CoefficientVector, Conditioning)> {
    solve_null(&assemble_system(measurements, scheme, &[])?)
}
