// SPDX-License-Identifier: Apache-2.0

use proptest::prelude::*;

use stormsim::analytics::normalized_retry_curve;
use stormsim::cost::PricingRule;
use stormsim::experiments::{self, run_scenario, simulate_curve_point, Params};
use stormsim::guard::{Controller, ControllerConfig, MetricKind, Mode};
use stormsim::policy::{PolicyKind, RetryPolicySpec};
use stormsim::services::{
    simulate, AutoscalerKind, AutoscalerSpec, ServiceModel, ServiceNodeSpec, TandemSpec, TrafficProfile,
};

fn overload(policy: RetryPolicySpec) -> TandemSpec {
    TandemSpec {
        horizon: 1200.0,
        warmup: 200.0,
        traffic: TrafficProfile::constant(150.0),
        downstream: ServiceNodeSpec { capacity: 100.0, ..ServiceNodeSpec::named("B") },
        policy,
        ..TandemSpec::default()
    }
}

#[test]
fn adaptive_retries_less_than_legacy_under_overload() {
    for model in [ServiceModel::Mm1m, ServiceModel::CapacitySlot] {
        let run = |kind| {
            let spec = TandemSpec { service_model: model, ..overload(RetryPolicySpec::of_kind(kind)) };
            simulate(&spec).unwrap().metrics.retries_per_request()
        };
        let (adaptive, legacy) = (run(PolicyKind::Adaptive), run(PolicyKind::Legacy));
        assert!(adaptive < legacy, "{model:?}: adaptive {adaptive} vs legacy {legacy}");
    }
}

#[test]
fn controller_stays_on_under_stable_load() {
    let m = 10;
    let (lo, hi) = experiments::threshold_band(5, m).unwrap();
    let spec = TandemSpec {
        horizon: 1.0e6 / 90.0,
        traffic: TrafficProfile::constant(90.0),
        downstream: ServiceNodeSpec { capacity: 100.0, buffer_size: m - 1, ..ServiceNodeSpec::named("B") },
        policy: RetryPolicySpec::of_kind(PolicyKind::Legacy).with_max_attempts(4),
        controller: Some(ControllerConfig {
            metric: MetricKind::RetriesPerRequest,
            threshold: (lo * hi).sqrt(),
            ..ControllerConfig::default()
        }),
        ..TandemSpec::default()
    };
    let run = simulate(&spec).unwrap();
    assert!(run.metrics.fresh > 990_000);
    assert_eq!(run.transitions.len(), 1, "{:?}", &run.transitions[..run.transitions.len().min(5)]);
    assert_eq!(run.transitions[0].mode, Mode::On);
}

#[test]
fn critical_transition_points_match_the_curve() {
    let stable = simulate_curve_point(0.8, 5, 20, &[1], 1.0e6, 1000.0).unwrap();
    assert!((stable.simulated - stable.analytic).abs() <= 3.0 * stable.stderr, "{stable:?}");
    let over = simulate_curve_point(1.5, 5, 20, &[1], 1.0e6, 1000.0).unwrap();
    assert!((over.simulated / over.analytic - 1.0).abs() <= 0.05, "{over:?}");
    let curve = normalized_retry_curve(&[0.9, 1.1], 5, 20).unwrap();
    assert!(curve[1].value() / curve[0].value() >= 5.0);
}

#[test]
fn upstream_cost_is_exact_without_retries() {
    let (invocation, held, service_time) = (0.002, 3.0, 0.04);
    let spec = TandemSpec {
        horizon: 300.0,
        service_model: ServiceModel::CapacitySlot,
        traffic: TrafficProfile::constant(120.0),
        upstream: ServiceNodeSpec {
            pricing: Some(PricingRule::invocation_duration(invocation, held)),
            ..ServiceNodeSpec::named("A")
        },
        downstream: ServiceNodeSpec {
            capacity: 50.0,
            service_time,
            scaler: Some(AutoscalerSpec { kind: AutoscalerKind::Instant, ..AutoscalerSpec::default() }),
            ..ServiceNodeSpec::named("B")
        },
        policy: RetryPolicySpec::of_kind(PolicyKind::None),
        ..TandemSpec::default()
    };
    let run = simulate(&spec).unwrap();
    let m = &run.metrics;
    assert_eq!((m.failed, m.rejections), (0, 0));
    // Requests still held at the horizon are billed for the time so far.
    let open = m.in_system as f64;
    let exact = m.succeeded as f64 * (invocation + service_time * held);
    let accrued = run.upstream_ledger.accrued;
    assert!(accrued >= exact + open * invocation - 1e-9);
    assert!(accrued <= exact + open * (invocation + service_time * held) + 1e-9);
    assert!((m.held_sum / m.succeeded as f64 - service_time).abs() < 1e-12);
}

#[test]
fn dominating_capacity_costs_more() {
    let config = experiments::overscaling_config(&Params::default()).unwrap();
    let r = &run_scenario(&config, 2).unwrap()[0];
    let (none, budget) = (r.variant("none").unwrap(), r.variant("budget").unwrap());
    let capacity_at = |traj: &[(f64, f64)], t: f64| traj.iter().take_while(|p| p.0 <= t).last().unwrap().1;
    let dominates = (0..=2100)
        .map(|t| t as f64)
        .all(|t| capacity_at(&budget.capacity_trajectory, t) >= capacity_at(&none.capacity_trajectory, t));
    assert!(dominates);
    assert!(budget.downstream_cost >= none.downstream_cost);
}

#[test]
fn every_policy_respects_its_attempt_cap() {
    for kind in [PolicyKind::None, PolicyKind::Legacy, PolicyKind::Standard, PolicyKind::Adaptive, PolicyKind::Budget] {
        for attempts in [0, 1, 3] {
            let policy = RetryPolicySpec::of_kind(kind).with_max_attempts(attempts);
            let limit = policy.retry_limit();
            let m = simulate(&TandemSpec { horizon: 300.0, ..overload(policy) }).unwrap().metrics;
            assert!(m.max_attempts_seen <= limit + 1, "{kind:?}/{attempts}: {}", m.max_attempts_seen);
            assert!(m.conserved);
        }
    }
}

proptest! {
    #[test]
    fn mode_changes_are_separated_by_interval(
        values in proptest::collection::vec(prop_oneof![Just(0.1), Just(0.2), Just(0.3)], 0..60),
        interval in 1u32..5,
    ) {
        let mut c = Controller::new(ControllerConfig { threshold: 0.2, interval, ..ControllerConfig::default() });
        let mut last_change: Option<usize> = None;
        let mut mode = c.mode();
        for (i, &v) in values.iter().enumerate() {
            let next = c.ingest(v, i as f64);
            if next != mode {
                if let Some(prev) = last_change {
                    prop_assert!(i - prev >= interval as usize);
                }
                last_change = Some(i);
                mode = next;
            }
        }
    }
}
