#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use polwalk::walk::{Coin, WalkState};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random normalized state on `support` (both coin components populated).
pub fn random_state<R: Rng>(support: &[i64], rng: &mut R) -> WalkState {
    let terms: Vec<_> = support
        .iter()
        .flat_map(|&x| {
            let a = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let b = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            [(a, x, Coin::Zero), (b, x, Coin::One)]
        })
        .collect();
    WalkState::from_terms(terms).unwrap()
}

/// Dense `(2L) x (2L)` walk unitary on positions `lo..=hi`, index `2 (x - lo) + coin`.
pub struct DenseWalk {
    pub lo: i64,
    pub hi: i64,
    pub u: DMatrix<Complex64>,
}

impl DenseWalk {
    pub fn new(psi_deg: f64, lo: i64, hi: i64) -> Self {
        let len = (hi - lo + 1) as usize;
        let (s, co) = psi_deg.to_radians().sin_cos();
        let mut coin = DMatrix::<Complex64>::zeros(2 * len, 2 * len);
        let mut shift = DMatrix::<Complex64>::zeros(2 * len, 2 * len);
        for i in 0..len {
            coin[(2 * i, 2 * i)] = c(co, 0.0);
            coin[(2 * i, 2 * i + 1)] = c(-s, 0.0);
            coin[(2 * i + 1, 2 * i)] = c(s, 0.0);
            coin[(2 * i + 1, 2 * i + 1)] = c(co, 0.0);
            // |x,0> -> |x-1,0>, |x,1> -> |x+1,1>; edges wrap, callers keep the window wide enough
            let left = (i + len - 1) % len;
            let right = (i + 1) % len;
            shift[(2 * left, 2 * i)] = c(1.0, 0.0);
            shift[(2 * right + 1, 2 * i + 1)] = c(1.0, 0.0);
        }
        Self {
            lo,
            hi,
            u: shift * coin,
        }
    }

    pub fn vector(&self, state: &WalkState) -> DVector<Complex64> {
        let len = (self.hi - self.lo + 1) as usize;
        let mut v = DVector::zeros(2 * len);
        for (x, a, b) in state.iter() {
            let i = (x - self.lo) as usize;
            v[2 * i] = a;
            v[2 * i + 1] = b;
        }
        v
    }

    pub fn evolve(&self, state: &WalkState, n: usize) -> BTreeMap<i64, (Complex64, Complex64)> {
        let mut v = self.vector(state);
        for _ in 0..n {
            v = &self.u * v;
        }
        (self.lo..=self.hi)
            .map(|x| {
                let i = (x - self.lo) as usize;
                (x, (v[2 * i], v[2 * i + 1]))
            })
            .collect()
    }
}

pub fn fig3_initial() -> WalkState {
    WalkState::from_terms([(c(0.8, 0.0), -1, Coin::Zero), (c(0.6, 0.0), 1, Coin::Zero)]).unwrap()
}

/// Random `(dtheta, dphi)` scheme with distinct points in every row and a
/// noiseless gap above `1e-6` on a probe state.
pub fn generic_scheme<R: Rng>(n: usize, rng: &mut R) -> polwalk::encode::EncodingScheme {
    use polwalk::encode::*;
    loop {
        let s = EncodingScheme::generated(
            n,
            rng.random_range(1.0..179.0),
            rng.random_range(1.0..359.0),
        )
        .unwrap();
        if !s.degenerate_rows().is_empty() || !s.polar_rows().is_empty() {
            continue;
        }
        let probe = haar_random(n, rng);
        let Ok(meas) = measure_all(&probe, &s) else {
            continue;
        };
        if let Ok((_, cond)) = decode(&meas, &s) {
            if cond.gap() > 1e-6 {
                return s;
            }
        }
    }
}
