mod common;

use common::{c, fig3_initial, random_state, rng};
use polwalk::encode::{CoefficientVector, NoiseModel};
use polwalk::experiments::{parse_initial, trial_rng, FIG4_INITIAL};
use polwalk::reconstruct::*;
use polwalk::walk::*;

fn truth_of(init: &WalkState, n: usize) -> WalkState {
    evolve(init, &CoinOperator::hadamard(), n)
}

fn check_exact(init: &WalkState, n: usize, solver: BranchSolver) {
    let noise = MeasurementNoise::default();
    let rep = simulate_and_reconstruct_with(init, 45.0, n, noise, solver, trial_rng(0, 0, 0))
        .unwrap_or_else(|e| panic!("n = {n}, {solver:?}: {e}"));
    let truth = truth_of(init, n);
    let t = rep.truth.unwrap();
    assert!(
        t.total_variation < 1e-8,
        "n = {n}, {solver:?}: tv {}",
        t.total_variation
    );
    assert!(t.entropy_error < 1e-8);
    assert!(t.spread_speed_error.unwrap() < 1e-8);
    let e = entanglement_entropy(&coin_reduced_density(&truth)).unwrap();
    assert!((rep.entropy - e).abs() < 1e-8);
    assert!((rep.c_a * rep.c_a + rep.c_b * rep.c_b - 1.0).abs() < 1e-9);
    assert!((rep.distribution.total() - 1.0).abs() < 1e-12);
}

#[test]
fn noiseless_exact_for_reference_states() {
    let fig4 = parse_initial(FIG4_INITIAL).unwrap().state;
    for solver in [BranchSolver::Reachable, BranchSolver::PerBranch] {
        for n in 1..=6 {
            check_exact(&fig3_initial(), n, solver);
            check_exact(&fig4, n, solver);
        }
    }
}

#[test]
fn noiseless_exact_for_random_states() {
    let mut r = rng(31);
    for solver in [BranchSolver::Reachable, BranchSolver::PerBranch] {
        for trial in 0..12 {
            let support: &[i64] = if trial % 2 == 0 {
                &[-1, 1]
            } else {
                &[-2, 0, 2]
            };
            let init = random_state(support, &mut r);
            for n in 1..=6 {
                check_exact(&init, n, solver);
            }
        }
    }
}

#[test]
fn two_step_branches_and_weights() {
    let init = fig3_initial();
    let plan = plan_for_state(&init, 2, 45.0).unwrap();
    assert_eq!(plan.positions, vec![-3, -1, 1, 3]);
    let mut sim = SimulatedExperiment::noiseless(init, 45.0, 2);
    let rep = reconstruct_state(&mut sim, &plan, None).unwrap();
    assert!(rep.truth.is_none());
    let json = serde_json::to_value(&rep).unwrap();
    assert!(json.get("truth").is_none());
    let want = CoefficientVector(vec![c(0.4, 0.0), c(-0.1, 0.0), c(-0.3, 0.0), c(0.0, 0.0)])
        .normalized()
        .unwrap();
    assert!(polwalk::encode::fidelity(&want, &rep.a_unit) > 1.0 - 1e-9);
    assert!((rep.c_a - 0.26f64.sqrt()).abs() < 1e-9);
    assert!((rep.c_b - 0.74f64.sqrt()).abs() < 1e-9);
}

#[test]
fn plan_examples() {
    let p = plan_runs(6, &[-1, 1], 45.0).unwrap();
    assert_eq!(p.window, (-7, 7));
    assert_eq!((p.unknowns(Coin::Zero), p.unknowns(Coin::One)), (7, 7));
    assert_eq!(p.run_angles.len(), 6);
    let p = plan_runs(1, &[0], 45.0).unwrap();
    assert_eq!(p.window, (-1, 1));
    assert_eq!(p.runs_needed(), 0);
    let p = plan_runs(6, &[-2, 0, 2], 45.0).unwrap();
    assert_eq!((p.window, p.parity), ((-8, 8), 0));
    assert!(plan_runs(3, &[0, 1], 45.0).is_err());
}

#[test]
fn weight_limits() {
    let a = CoefficientVector(vec![c(1.0, 0.0), c(0.0, 0.0)]);
    let b = CoefficientVector(vec![c(0.0, 0.0), c(1.0, 0.0)]);
    assert_eq!(
        recover_weights(&a, &b, &[-1, 1], f64::INFINITY, 30.0).unwrap(),
        (1.0, 0.0)
    );
    assert_eq!(
        recover_weights(&a, &b, &[-1, 1], 0.0, 30.0).unwrap(),
        (0.0, 1.0)
    );
    // |cos(-30)|^2 / |sin(30)|^2 = 3, so r = 3 means q = 1
    let (ca, cb) = recover_weights(&a, &b, &[-1, 1], 3.0, 30.0).unwrap();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    assert!((ca - h).abs() < 1e-12 && (cb - h).abs() < 1e-12);
}

#[test]
fn phase_anchor_does_not_matter() {
    let mut r = rng(12);
    for _ in 0..10 {
        let init = random_state(&[-1, 1], &mut r);
        let base = plan_for_state(&init, 4, 45.0).unwrap();
        let reports: Vec<_> = (0..base.positions.len())
            .map(|i| {
                let mut plan = base.clone();
                plan.phase_anchor = Some(i);
                let mut sim = SimulatedExperiment::noiseless(init.clone(), 45.0, 4);
                reconstruct_state(&mut sim, &plan, None).unwrap()
            })
            .collect();
        for rep in &reports[1..] {
            assert!(rep.distribution.total_variation(&reports[0].distribution) < 1e-12);
            assert!((rep.entropy - reports[0].entropy).abs() < 1e-12);
            assert!((rep.spread_speed.unwrap() - reports[0].spread_speed.unwrap()).abs() < 1e-12);
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

#[test]
fn degradation_is_monotone_in_ratio_noise() {
    let init = fig3_initial();
    let medians: Vec<f64> = [0.01, 0.05, 0.10]
        .iter()
        .map(|&bound| {
            let noise = MeasurementNoise {
                ratio_bound: bound,
                noise_model: NoiseModel::Relative,
                ..Default::default()
            };
            median(
                (0..200)
                    .map(|seed| {
                        simulate_and_reconstruct(&init, 45.0, 4, noise, trial_rng(99, 0, seed))
                            .map(|rep| rep.truth.unwrap().total_variation)
                            .unwrap_or(1.0)
                    })
                    .collect(),
            )
        })
        .collect();
    assert!(
        medians[0] <= medians[1] && medians[1] <= medians[2],
        "{medians:?}"
    );
}

#[test]
fn one_percent_noise_two_steps() {
    let noise = MeasurementNoise {
        ratio_bound: 0.01,
        ..Default::default()
    };
    for solver in [BranchSolver::Reachable, BranchSolver::PerBranch] {
        for seed in 0..100 {
            let rep = simulate_and_reconstruct_with(
                &fig3_initial(),
                45.0,
                2,
                noise,
                solver,
                trial_rng(5, 1, seed),
            )
            .unwrap();
            let t = rep.truth.unwrap();
            assert!(
                t.fidelity_a >= 0.99 && t.fidelity_b >= 0.99,
                "{solver:?} seed {seed}: {t:?}"
            );
        }
    }
}

#[test]
fn shot_noise_reconstruction_is_close() {
    let noise = MeasurementNoise {
        shots_per_basis: 100_000,
        ..Default::default()
    };
    let tv: Vec<f64> = (0..20)
        .map(|seed| {
            simulate_and_reconstruct(&fig3_initial(), 45.0, 6, noise, trial_rng(3, 0, seed))
                .unwrap()
                .truth
                .unwrap()
                .total_variation
        })
        .collect();
    assert!(median(tv) < 0.01);
}

#[test]
fn measurement_file_replays() {
    let init = fig3_initial();
    let plan = plan_for_state(&init, 4, 45.0).unwrap();
    let mut sim = SimulatedExperiment::noiseless(init.clone(), 45.0, 4);
    let file = MeasurementFile::record(&mut sim, &plan, 30.0).unwrap();
    let text = serde_json::to_string(&file).unwrap();
    let mut back: MeasurementFile = serde_json::from_str(&text).unwrap();
    let plan = plan.with_angles(back.angles());
    let rep = reconstruct_state(&mut back, &plan, Some(&truth_of(&init, 4))).unwrap();
    assert!(rep.truth.unwrap().total_variation < 1e-8);
    assert_eq!(rep.theta_star_deg, 30.0);
}
