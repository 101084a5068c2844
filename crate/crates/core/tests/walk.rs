mod common;

use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

use common::{c, fig3_initial, random_state, rng, DenseWalk};
use polwalk::walk::*;
use proptest::prelude::*;

#[test]
fn two_step_table() {
    let s = evolve(&fig3_initial(), &CoinOperator::hadamard(), 2);
    let expect = [
        (-3, 0.4, 0.0),
        (-1, -0.1, 0.4),
        (1, -0.3, 0.7),
        (3, 0.0, 0.3),
    ];
    for (x, a, b) in expect {
        assert!((s.a(x) - c(a, 0.0)).norm() < 1e-12, "a({x})");
        assert!((s.b(x) - c(b, 0.0)).norm() < 1e-12, "b({x})");
    }
    let d = position_distribution(&s);
    for (x, p) in [(-3, 0.16), (-1, 0.17), (1, 0.58), (3, 0.09)] {
        assert!((d.get(x) - p).abs() < 1e-12);
    }
}

#[test]
fn dense_oracle_matches_sparse() {
    let mut r = rng(11);
    for trial in 0..50 {
        let psi = 5.0 + 80.0 * (trial as f64 / 50.0);
        let init = random_state(&[-3, -2, -1, 0, 1, 2, 3], &mut r);
        let coin = CoinOperator::new(psi).unwrap();
        let dense = DenseWalk::new(psi, -14, 14);
        for n in 0..=10 {
            let sparse = evolve(&init, &coin, n);
            for (x, (a, b)) in dense.evolve(&init, n) {
                assert!((sparse.a(x) - a).norm() < 1e-12, "psi {psi} n {n} x {x}");
                assert!((sparse.b(x) - b).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn dense_oracle_is_unitary() {
    let d = DenseWalk::new(33.0, -6, 6);
    let id = d.u.adjoint() * &d.u;
    let err = (id - nalgebra::DMatrix::identity(26, 26))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    assert!(err < 1e-12);
}

#[test]
fn psi_endpoints_rejected() {
    for psi in [0.0, 90.0, -1.0, f64::NAN] {
        assert!(CoinOperator::new(psi).is_err());
    }
}

#[test]
fn classical_symmetry_and_quantum_asymmetry() {
    let init_dist = PositionDistribution::delta(0);
    let cl = classical_walk(&init_dist, 4);
    let s_cl = spread_speed(&cl, &init_dist, 4).unwrap();
    assert!((s_cl - 1.0 / 2.0).abs() < 1e-12);

    let coin = CoinOperator::hadamard();
    let speed = |alpha: f64| {
        let beta = (1.0 - alpha * alpha).sqrt();
        let s0 = WalkState::product(
            [(-1, c(alpha, 0.0)), (1, c(beta, 0.0))],
            c(FRAC_1_SQRT_2, 0.0),
            c(0.0, FRAC_1_SQRT_2),
        )
        .unwrap();
        let d0 = position_distribution(&s0);
        spread_speed(&position_distribution(&evolve(&s0, &coin, 4)), &d0, 4).unwrap()
    };
    let asym = [0.2, 0.5, 0.8]
        .iter()
        .map(|&a| (speed(a) - speed(-a)).abs())
        .fold(0.0, f64::max);
    assert!(asym > 0.01, "asymmetry {asym}");
}

#[test]
fn entropy_extremes() {
    let product = WalkState::product([(0, c(1.0, 0.0))], c(0.6, 0.0), c(0.0, 0.8)).unwrap();
    assert!(
        entanglement_entropy(&coin_reduced_density(&product))
            .unwrap()
            .abs()
            < 1e-12
    );
    let bell = WalkState::from_terms([(c(1.0, 0.0), -1, Coin::Zero), (c(1.0, 0.0), 1, Coin::One)])
        .unwrap();
    assert!((entanglement_entropy(&coin_reduced_density(&bell)).unwrap() - LN_2).abs() < 1e-12);
}

fn arb_state() -> impl Strategy<Value = WalkState> {
    (
        prop::collection::vec(
            (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
            1..6,
        ),
        -3i64..3,
    )
        .prop_filter_map("zero state", |(amps, start)| {
            let terms: Vec<_> = amps
                .iter()
                .enumerate()
                .flat_map(|(i, &(ar, ai, br, bi))| {
                    let x = start + 2 * i as i64;
                    [(c(ar, ai), x, Coin::Zero), (c(br, bi), x, Coin::One)]
                })
                .collect();
            WalkState::from_terms(terms).ok()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn norm_is_conserved(s in arb_state(), psi in 0.5f64..89.5, n in 0usize..30) {
        let coin = CoinOperator::new(psi).unwrap();
        let mut cur = s;
        for _ in 0..n {
            cur = step(&cur, &coin);
            prop_assert!((cur.norm_sqr() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn parity_tracks_steps(s in arb_state(), psi in 0.5f64..89.5, n in 0usize..20) {
        let p0 = s.min_position().unwrap().rem_euclid(2);
        let out = evolve(&s, &CoinOperator::new(psi).unwrap(), n);
        for x in out.support() {
            prop_assert_eq!(x.rem_euclid(2), (p0 + n as i64) % 2);
        }
    }

    #[test]
    fn branch_phases_do_not_change_observables(
        s in arb_state(), psi in 0.5f64..89.5, n in 1usize..12, g in 0.0f64..6.3, d in 0.0f64..6.3
    ) {
        let coin = CoinOperator::new(psi).unwrap();
        let a = evolve(&s, &coin, n);
        let b = a.with_branch_phases(g, d);
        let (pa, pb) = (position_distribution(&a), position_distribution(&b));
        prop_assert!(pa.total_variation(&pb) < 1e-12);
        let d0 = position_distribution(&s);
        let sa = spread_speed(&pa, &d0, n).unwrap();
        let sb = spread_speed(&pb, &d0, n).unwrap();
        prop_assert!((sa - sb).abs() < 1e-12);
        let ea = entanglement_entropy(&coin_reduced_density(&a)).unwrap();
        let eb = entanglement_entropy(&coin_reduced_density(&b)).unwrap();
        prop_assert!((ea - eb).abs() < 1e-12);
    }

    #[test]
    fn entropy_is_bounded(s in arb_state(), psi in 0.5f64..89.5, n in 0usize..25) {
        let e = entanglement_entropy(&coin_reduced_density(&evolve(&s, &CoinOperator::new(psi).unwrap(), n))).unwrap();
        prop_assert!((0.0..=LN_2 + 1e-12).contains(&e));
    }

    #[test]
    fn classical_speed_is_even_in_alpha(alpha in -0.99f64..0.99, n in 1usize..40) {
        let beta2 = 1.0 - alpha * alpha;
        let mk = |a2: f64, b2: f64| {
            PositionDistribution::new([(-1, a2), (1, b2)].into_iter().collect()).unwrap()
        };
        let (p, q) = (mk(alpha * alpha, beta2), mk(beta2, alpha * alpha));
        let sp = spread_speed(&classical_walk(&p, n), &p, n).unwrap();
        let sq = spread_speed(&classical_walk(&q, n), &q, n).unwrap();
        prop_assert!((sp - sq).abs() < 1e-12);
    }
}
