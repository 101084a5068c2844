//! Abstract one-dimensional coined walk.
//!
//! The walker lives on the integer line and carries a two-level coin. One step
//! is `U = T S_c(psi)`: the coin is rotated by
//!
//! ```text
//! S_c(psi) = [[cos psi, -sin psi],
//!             [sin psi,  cos psi]]
//! ```
//!
//! and then the coin-`|1>` amplitude moves to `x + 1` while the coin-`|0>`
//! amplitude moves to `x - 1`.
//!
//! States are stored sparsely as a map from position to the pair `(a_x, b_x)`,
//! `a` being the coin-`|0>` branch and `b` the coin-`|1>` branch.

use std::collections::BTreeMap;

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `sum |a|^2 + |b|^2 = 1`.
pub const NORM_TOL: f64 = 1e-12;
/// Amplitudes smaller than this are dropped from the support after a step.
pub const PRUNE_TOL: f64 = 1e-15;
/// Eigenvalue slack used by the PSD check and clamping in [`entanglement_entropy`].
pub const PSD_TOL: f64 = 1e-9;

pub type Matrix2c = Matrix2<Complex64>;

/// Coin basis label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Coin {
    /// `|0>_c`, shifts the walker left.
    Zero,
    /// `|1>_c`, shifts the walker right.
    One,
}

/// Coin toss `S_c(psi)`, with `psi` in degrees on the open interval (0, 90).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoinOperator {
    psi_deg: f64,
    cos: f64,
    sin: f64,
}

impl CoinOperator {
    pub fn new(psi_deg: f64) -> Result<Self> {
        if !(psi_deg.is_finite() && psi_deg > 0.0 && psi_deg < 90.0) {
            return Err(Error::InvalidCoinAngle(psi_deg));
        }
        let rad = psi_deg.to_radians();
        Ok(Self {
            psi_deg,
            cos: rad.cos(),
            sin: rad.sin(),
        })
    }

    /// The balanced coin, `psi = 45 deg`. Labelled "hadamard" for consistency with
    /// the literature even though `S_c(45)` is a rotation, not the Hadamard gate.
    pub fn hadamard() -> Self {
        Self::new(45.0).expect("45 deg is a valid coin angle")
    }

    pub fn psi_deg(&self) -> f64 {
        self.psi_deg
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.cos, -self.sin, self.sin, self.cos)
    }

    /// Applies the coin to one position's `(a, b)` pair.
    #[inline]
    pub fn toss(&self, a: Complex64, b: Complex64) -> (Complex64, Complex64) {
        (a * self.cos - b * self.sin, a * self.sin + b * self.cos)
    }
}

/// Sparse walker-coin state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WalkState {
    amps: BTreeMap<i64, (Complex64, Complex64)>,
}

impl WalkState {
    /// Builds a state from explicit amplitudes, checking finiteness and normalization.
    pub fn new(amps: BTreeMap<i64, (Complex64, Complex64)>) -> Result<Self> {
        let state = Self { amps };
        state.check_finite()?;
        let norm = state.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(norm));
        }
        Ok(state)
    }

    /// Builds a state from `(amplitude, position, coin)` terms and rescales it to
    /// unit norm. Repeated `(position, coin)` terms are summed.
    pub fn from_terms<I>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Complex64, i64, Coin)>,
    {
        let mut amps: BTreeMap<i64, (Complex64, Complex64)> = BTreeMap::new();
        for (amp, x, coin) in terms {
            let slot = amps.entry(x).or_default();
            match coin {
                Coin::Zero => slot.0 += amp,
                Coin::One => slot.1 += amp,
            }
        }
        let mut state = Self { amps };
        state.check_finite()?;
        let norm = state.norm_sqr().sqrt();
        if norm < 1e-300 {
            return Err(Error::InvalidParameter(
                "initial state has zero norm".into(),
            ));
        }
        for v in state.amps.values_mut() {
            v.0 /= norm;
            v.1 /= norm;
        }
        Ok(state)
    }

    /// Walker state `sum_x w_x |x>` times coin state `c0 |0> + c1 |1>`, normalized.
    pub fn product<I>(walker: I, c0: Complex64, c1: Complex64) -> Result<Self>
    where
        I: IntoIterator<Item = (i64, Complex64)>,
    {
        let terms: Vec<_> = walker
            .into_iter()
            .flat_map(|(x, w)| [(w * c0, x, Coin::Zero), (w * c1, x, Coin::One)])
            .collect();
        Self::from_terms(terms)
    }

    fn check_finite(&self) -> Result<()> {
        let finite = |z: &Complex64| z.re.is_finite() && z.im.is_finite();
        if self.amps.values().all(|(a, b)| finite(a) && finite(b)) {
            Ok(())
        } else {
            Err(Error::InvalidParameter("non-finite amplitude".into()))
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps
            .values()
            .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
            .sum()
    }

    /// `(a_x, b_x)`, zero outside the support.
    pub fn amplitude(&self, x: i64) -> (Complex64, Complex64) {
        self.amps.get(&x).copied().unwrap_or_default()
    }

    pub fn a(&self, x: i64) -> Complex64 {
        self.amplitude(x).0
    }

    pub fn b(&self, x: i64) -> Complex64 {
        self.amplitude(x).1
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, Complex64, Complex64)> + '_ {
        self.amps.iter().map(|(&x, &(a, b))| (x, a, b))
    }

    /// Positions carrying any amplitude, in increasing order.
    pub fn support(&self) -> Vec<i64> {
        self.amps.keys().copied().collect()
    }

    pub fn min_position(&self) -> Option<i64> {
        self.amps.keys().next().copied()
    }

    pub fn max_position(&self) -> Option<i64> {
        self.amps.keys().next_back().copied()
    }

    /// Multiplies the whole `a` branch by `e^{i gamma}` and the `b` branch by `e^{i delta}`.
    pub fn with_branch_phases(&self, gamma: f64, delta: f64) -> Self {
        let pa = Complex64::from_polar(1.0, gamma);
        let pb = Complex64::from_polar(1.0, delta);
        Self {
            amps: self
                .amps
                .iter()
                .map(|(&x, &(a, b))| (x, (a * pa, b * pb)))
                .collect(),
        }
    }

    /// Branch weight `sum_x |a_x|^2` (or `|b_x|^2` for [`Coin::One`]).
    pub fn branch_weight(&self, coin: Coin) -> f64 {
        self.amps
            .values()
            .map(|(a, b)| match coin {
                Coin::Zero => a.norm_sqr(),
                Coin::One => b.norm_sqr(),
            })
            .sum()
    }

    pub(crate) fn from_map_unchecked(amps: BTreeMap<i64, (Complex64, Complex64)>) -> Self {
        Self { amps }
    }
}

/// Probability of finding the walker at each position.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PositionDistribution {
    probs: BTreeMap<i64, f64>,
}

impl PositionDistribution {
    pub fn new(probs: BTreeMap<i64, f64>) -> Result<Self> {
        if probs.values().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidParameter(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let total: f64 = probs.values().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(total));
        }
        Ok(Self { probs })
    }

    pub fn delta(x: i64) -> Self {
        Self {
            probs: BTreeMap::from([(x, 1.0)]),
        }
    }

    pub fn get(&self, x: i64) -> f64 {
        self.probs.get(&x).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.probs.iter().map(|(&x, &p)| (x, p))
    }

    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(x, p)| x as f64 * p).sum()
    }

    /// Standard deviation of the position (square root of the second central moment).
    pub fn std_dev(&self) -> f64 {
        let mean = self.mean();
        let var: f64 = self
            .iter()
            .map(|(x, p)| {
                let d = x as f64 - mean;
                d * d * p
            })
            .sum();
        var.max(0.0).sqrt()
    }

    /// Total-variation distance `1/2 sum |p - q|`.
    pub fn total_variation(&self, other: &Self) -> f64 {
        let mut keys: Vec<i64> = self
            .probs
            .keys()
            .chain(other.probs.keys())
            .copied()
            .collect();
        keys.sort_unstable();
        keys.dedup();
        0.5 * keys
            .into_iter()
            .map(|x| (self.get(x) - other.get(x)).abs())
            .sum::<f64>()
    }
}

/// One application of `U = T S_c`.
pub fn step(state: &WalkState, coin: &CoinOperator) -> WalkState {
    let mut out: BTreeMap<i64, (Complex64, Complex64)> = BTreeMap::new();
    for (&x, &(a, b)) in &state.amps {
        let (a2, b2) = coin.toss(a, b);
        out.entry(x - 1).or_default().0 += a2;
        out.entry(x + 1).or_default().1 += b2;
    }
    out.retain(|_, (a, b)| a.norm() >= PRUNE_TOL || b.norm() >= PRUNE_TOL);
    WalkState::from_map_unchecked(out)
}

/// `n` successive steps; `n = 0` returns a copy of the input.
pub fn evolve(state: &WalkState, coin: &CoinOperator, n: usize) -> WalkState {
    let mut s = state.clone();
    for _ in 0..n {
        s = step(&s, coin);
    }
    s
}

pub fn position_distribution(state: &WalkState) -> PositionDistribution {
    PositionDistribution {
        probs: state
            .iter()
            .map(|(x, a, b)| (x, a.norm_sqr() + b.norm_sqr()))
            .collect(),
    }
}

/// `s(n) = (sigma(n) - sigma(0)) / n` with `sigma` the standard deviation.
pub fn spread_speed(
    dist_n: &PositionDistribution,
    dist_0: &PositionDistribution,
    n: usize,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::ZeroSteps);
    }
    Ok((dist_n.std_dev() - dist_0.std_dev()) / n as f64)
}

/// Reduced coin density matrix `Tr_x |psi><psi|`.
pub fn coin_reduced_density(state: &WalkState) -> Matrix2c {
    let mut m = Matrix2c::zeros();
    for (_, a, b) in state.iter() {
        m[(0, 0)] += a * a.conj();
        m[(0, 1)] += a * b.conj();
        m[(1, 0)] += a.conj() * b;
        m[(1, 1)] += b * b.conj();
    }
    m
}

/// Eigenvalues of a 2x2 Hermitian matrix, ascending.
pub fn hermitian2_eigenvalues(m: &Matrix2c) -> (f64, f64) {
    let p = m[(0, 0)].re;
    let q = m[(1, 1)].re;
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)].conj());
    let half_tr = 0.5 * (p + q);
    let r = (0.25 * (p - q) * (p - q) + off.norm_sqr()).sqrt();
    (half_tr - r, half_tr + r)
}

/// Von Neumann entropy `-Tr(rho ln rho)` in nats.
pub fn entanglement_entropy(rho: &Matrix2c) -> Result<f64> {
    let (lo, hi) = hermitian2_eigenvalues(rho);
    if lo < -PSD_TOL {
        return Err(Error::NotPsd(lo));
    }
    if hi > 1.0 + PSD_TOL {
        return Err(Error::InvalidParameter(format!(
            "eigenvalue {hi} exceeds 1; input is not a density matrix"
        )));
    }
    Ok([lo, hi]
        .into_iter()
        .map(|l| l.clamp(0.0, 1.0))
        .filter(|&l| l > 0.0)
        .map(|l| -l * l.ln())
        .sum())
}

/// Classical unbiased random walk: `n`-fold convolution with `{-1: 1/2, +1: 1/2}`.
pub fn classical_walk(initial: &PositionDistribution, n: usize) -> PositionDistribution {
    let mut probs = initial.probs.clone();
    for _ in 0..n {
        let mut next: BTreeMap<i64, f64> = BTreeMap::new();
        for (&x, &p) in &probs {
            *next.entry(x - 1).or_default() += 0.5 * p;
            *next.entry(x + 1).or_default() += 0.5 * p;
        }
        probs = next;
    }
    PositionDistribution { probs }
}
