//! Limiting behaviour of the combined estimate: it approaches the forward
//! estimate when the informed investor dominates, noise vanishes or the
//! informed investor is very aggressive, and the backward estimate in the
//! opposite limits.

mod common;

use common::{base_params, deviations, instance, ladders, non_increasing, Limit};
use mixcast::estimator::EstimationMode;

const SEEDS: std::ops::Range<u64> = 0..16;
const ENDPOINT_TOL: f64 = 1e-2;

fn check(name_part: &str) {
    for seed in SEEDS {
        for l in ladders(seed, 0.0)
            .into_iter()
            .filter(|l| l.name.contains(name_part))
        {
            assert!(
                l.monotone(),
                "seed {seed}, {}: deviations not shrinking {:?}",
                l.name,
                l.deviations
            );
            assert!(
                l.endpoint() < ENDPOINT_TOL,
                "seed {seed}, {}: endpoint {}",
                l.name,
                l.endpoint()
            );
        }
    }
}

#[test]
fn dominant_informed_share_gives_forward() {
    check("informed share");
}

#[test]
fn dominant_noise_share_gives_backward() {
    check("noise share");
}

#[test]
fn vanishing_and_exploding_noise() {
    check("noise intensity");
}

#[test]
fn aggressive_and_conservative_informed_investor() {
    check("informed risk aversion");
}

#[test]
fn endpoints_hold_with_a_noise_draw() {
    for seed in SEEDS {
        for l in ladders(seed, 1.0) {
            assert!(
                l.endpoint() < ENDPOINT_TOL,
                "seed {seed}, {}: {:?}",
                l.name,
                l.deviations
            );
        }
    }
}

#[test]
fn noise_draw_can_delay_the_trend() {
    // seed 1: more noise share first pushes the combined estimate further
    // from the prior mean, then the prior takes over
    let l = ladders(1, 1.0)
        .into_iter()
        .find(|l| l.name.contains("noise share"))
        .unwrap();
    assert!(l.deviations[1] > l.deviations[0]);
    assert!(non_increasing(&l.deviations[1..], 1e-9));
}

#[test]
fn each_ladder_targets_the_right_limit() {
    let all = ladders(0, 0.0);
    assert_eq!(all.len(), 6);
    assert_eq!(all.iter().filter(|l| l.limit == Limit::Forward).count(), 3);
    // at the base market the combined estimate sits strictly between
    let (b, f) = deviations(&instance(0, 3, 4, base_params(4, 0.51)));
    assert!(b > ENDPOINT_TOL && f > ENDPOINT_TOL, "{b} {f}");
}

#[test]
fn combined_objective_never_above_endpoints() {
    for seed in SEEDS {
        let inst = instance(seed, 3, 4, base_params(4, 0.51));
        let p = mixcast::estimator::EstimationProblem::new(
            &inst.model,
            &inst.prior,
            &inst.obs,
            EstimationMode::Combined,
        )
        .unwrap();
        let c = common::solve(&inst, EstimationMode::Combined);
        for mode in [EstimationMode::Backward, EstimationMode::Forward] {
            let other = common::solve(&inst, mode).reduced();
            assert!(c.objective_value <= mixcast::estimator::objective_value(&p, &other) + 1e-10);
        }
    }
}
