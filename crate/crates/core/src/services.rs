// SPDX-License-Identifier: Apache-2.0

//! Two-tier tandem: an upstream service that holds each request and retries
//! rejected attempts, and a finite-capacity downstream service steered by an
//! autoscaler.
//!
//! The downstream node has two service models. `Mm1m` is a single exponential
//! server with `buffer_size` waiting positions, so the system holds at most
//! `buffer_size + 1` requests. `CapacitySlot` is a pure-loss token bucket
//! refilled continuously at `capacity` tokens per second with room for
//! `capacity * slot_interval` tokens; accepted requests finish after a fixed
//! `service_time`.
//!
//! The upstream node never rejects and its capacity trajectory is the number
//! of requests it holds. Its cost is driven by held time, which runs from the
//! fresh arrival to the final outcome and includes backoff waits.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::cost::{Activity, CostLedger, PricingRule};
use crate::engine::{poisson_interarrival, EventHandle, Kernel, RngStreams, Time};
use crate::error::{Error, Result};
use crate::guard::{measure_value, Controller, ControllerConfig, GuardedPolicy, Mode, ModeTransition, WindowCounts};
use crate::policy::{Admission, RetryPolicy, RetryPolicySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ServiceModel {
    Mm1m,
    CapacitySlot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AutoscalerKind {
    Instant,
    TargetTracking,
    HpaLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoscalerSpec {
    pub kind: AutoscalerKind,
    pub target_utilization: f64,
    /// Seconds between the measurement that triggers a change and the change.
    pub decision_delay: f64,
    /// Measurement and tick period in seconds.
    pub measurement_window: f64,
    pub scale_down_hold: f64,
    /// hpa-like: scale-down uses the highest recommendation of this window.
    pub stabilization_window: f64,
    pub min_capacity: f64,
    pub max_capacity: f64,
    pub replica_unit: f64,
    /// target-tracking: consecutive breaching windows before scaling up.
    pub breach_windows: u32,
    /// Relative dead band around the target.
    pub tolerance: f64,
}

impl Default for AutoscalerSpec {
    fn default() -> Self {
        Self {
            kind: AutoscalerKind::TargetTracking,
            target_utilization: 0.9,
            decision_delay: 60.0,
            measurement_window: 60.0,
            scale_down_hold: 900.0,
            stabilization_window: 60.0,
            min_capacity: 1.0,
            max_capacity: 1e9,
            replica_unit: 1.0,
            breach_windows: 2,
            tolerance: 0.05,
        }
    }
}

impl AutoscalerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("autoscaler: {msg}")));
        if !(self.target_utilization > 0.0 && self.target_utilization <= 1.0) {
            return bad("target_utilization must be in (0, 1]");
        }
        if !(self.measurement_window > 0.0) {
            return bad("measurement_window must be > 0");
        }
        if !(self.decision_delay >= 0.0 && self.scale_down_hold >= 0.0 && self.stabilization_window >= 0.0) {
            return bad("delays and windows must be >= 0");
        }
        if !(self.min_capacity > 0.0 && self.min_capacity <= self.max_capacity) {
            return bad("need 0 < min_capacity <= max_capacity");
        }
        if !(self.replica_unit > 0.0) {
            return bad("replica_unit must be > 0");
        }
        if self.breach_windows == 0 {
            return bad("breach_windows must be >= 1");
        }
        if !(0.0..1.0).contains(&self.tolerance) {
            return bad("tolerance must be in [0, 1)");
        }
        Ok(())
    }

    fn clamp(&self, capacity: f64) -> f64 {
        capacity.clamp(self.min_capacity, self.max_capacity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceNodeSpec {
    pub name: String,
    /// Requests per second.
    pub capacity: f64,
    /// Waiting positions (mm1m only); 0 is pure loss.
    pub buffer_size: u32,
    /// Fixed service time in capacity-slot mode.
    pub service_time: f64,
    /// Token bucket depth in seconds of capacity (capacity-slot mode).
    pub slot_interval: f64,
    pub scaler: Option<AutoscalerSpec>,
    pub pricing: Option<PricingRule>,
}

impl Default for ServiceNodeSpec {
    fn default() -> Self {
        Self {
            name: String::new(),
            capacity: 100.0,
            buffer_size: 20,
            service_time: 0.05,
            slot_interval: 0.1,
            scaler: None,
            pricing: None,
        }
    }
}

impl ServiceNodeSpec {
    pub fn named(name: &str) -> Self {
        Self { name: name.to_string(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("service name must not be empty".into()));
        }
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return Err(Error::Config(format!("service {}: capacity must be > 0", self.name)));
        }
        if !(self.service_time >= 0.0 && self.slot_interval > 0.0) {
            return Err(Error::Config(format!("service {}: need service_time >= 0, slot_interval > 0", self.name)));
        }
        if let Some(scaler) = &self.scaler {
            scaler.validate()?;
            if self.capacity < scaler.min_capacity || self.capacity > scaler.max_capacity {
                return Err(Error::Config(format!("service {}: capacity outside scaler bounds", self.name)));
            }
        }
        if let Some(pricing) = &self.pricing {
            pricing.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateChange {
    pub time: Time,
    pub rate: f64,
}

/// `repetitions` bursts of `extra_rate` lasting `duration`, starting at
/// `start + r * period`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BurstSpec {
    pub start: Time,
    pub duration: f64,
    pub extra_rate: f64,
    pub period: f64,
    pub repetitions: u32,
}

impl Default for BurstSpec {
    fn default() -> Self {
        Self { start: 0.0, duration: 0.0, extra_rate: 0.0, period: 0.0, repetitions: 1 }
    }
}

impl BurstSpec {
    fn windows(&self) -> impl Iterator<Item = (Time, Time)> + '_ {
        (0..self.repetitions).map(move |r| {
            let s = self.start + f64::from(r) * self.period;
            (s, s + self.duration)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficProfile {
    pub base_rate: f64,
    pub changes: Vec<RateChange>,
    pub bursts: Vec<BurstSpec>,
}

impl TrafficProfile {
    pub fn constant(rate: f64) -> Self {
        Self { base_rate: rate, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("traffic: {msg}")));
        if !(self.base_rate >= 0.0 && self.base_rate.is_finite()) {
            return bad("base_rate must be >= 0".into());
        }
        let mut last = f64::NEG_INFINITY;
        for c in &self.changes {
            if !(c.time >= last) {
                return bad(format!("change times must be non-decreasing, got {} after {last}", c.time));
            }
            if !(c.rate >= 0.0 && c.rate.is_finite()) {
                return bad(format!("rate at t={} must be >= 0", c.time));
            }
            last = c.time;
        }
        for b in &self.bursts {
            if !(b.start >= 0.0 && b.duration >= 0.0 && b.extra_rate >= 0.0 && b.period >= 0.0) {
                return bad("burst start, duration, extra_rate and period must be >= 0".into());
            }
            if b.repetitions > 1 && b.period < b.duration {
                return bad("repeated bursts need period >= duration".into());
            }
        }
        Ok(())
    }

    /// Legitimate arrival rate at `t`.
    pub fn rate_at(&self, t: Time) -> f64 {
        self.changes.iter().take_while(|c| c.time <= t).last().map_or(self.base_rate, |c| c.rate)
    }

    /// Attack arrival rate at `t`.
    pub fn burst_rate_at(&self, t: Time) -> f64 {
        self.bursts.iter().map(|b| if b.windows().any(|(s, e)| s <= t && t < e) { b.extra_rate } else { 0.0 }).sum()
    }

    /// Every time at which either rate may change, sorted.
    pub fn change_times(&self) -> Vec<Time> {
        let mut times: Vec<Time> = self.changes.iter().map(|c| c.time).collect();
        for b in &self.bursts {
            for (s, e) in b.windows() {
                times.push(s);
                times.push(e);
            }
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequestState {
    Pending,
    InService,
    AwaitingRetry,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Fresh,
    BurstAttack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub arrival_time: Time,
    /// 0 for the first try.
    pub attempt: u32,
    pub deadline: Option<Time>,
    pub state: RequestState,
    pub completion_time: Option<Time>,
    pub origin: Origin,
}

impl Request {
    pub fn new(id: u64, arrival_time: Time, origin: Origin, deadline: Option<Time>) -> Self {
        debug_assert!(deadline.is_none_or(|d| d >= arrival_time));
        Self { id, arrival_time, attempt: 0, deadline, state: RequestState::Pending, completion_time: None, origin }
    }

    fn transition(&mut self, to: RequestState) {
        use RequestState::*;
        debug_assert!(
            matches!(
                (self.state, to),
                (Pending, InService)
                    | (Pending, AwaitingRetry)
                    | (InService, Succeeded)
                    | (InService, AwaitingRetry)
                    | (AwaitingRetry, Pending)
                    | (AwaitingRetry, Failed)
            ),
            "illegal request transition {:?} -> {to:?}",
            self.state
        );
        self.state = to;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfferOutcome {
    Accepted,
    Rejected,
}

/// A capacity change decided by a scaler tick, effective at `apply_at`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityChange {
    pub apply_at: Time,
    pub capacity: f64,
}

#[derive(Debug, Clone)]
struct ScalerState {
    spec: AutoscalerSpec,
    window_offers: u64,
    breaches: u32,
    low_since: Option<Time>,
    pending: bool,
    recommendations: VecDeque<(Time, f64)>,
}

#[derive(Debug, Clone)]
pub struct ServiceNode {
    pub name: String,
    pub model: ServiceModel,
    pub buffer_size: u32,
    capacity: f64,
    queue: VecDeque<u64>,
    in_service: Option<u64>,
    in_flight: u64,
    service_time: f64,
    slot_interval: f64,
    tokens: f64,
    last_refill: Time,
    scaler: Option<ScalerState>,
}

impl ServiceNode {
    pub fn new(spec: &ServiceNodeSpec, model: ServiceModel) -> Self {
        let scaler = spec.scaler.clone().map(|spec| ScalerState {
            spec,
            window_offers: 0,
            breaches: 0,
            low_since: None,
            pending: false,
            recommendations: VecDeque::new(),
        });
        let mut node = Self {
            name: spec.name.clone(),
            model,
            buffer_size: spec.buffer_size,
            capacity: spec.capacity,
            queue: VecDeque::new(),
            in_service: None,
            in_flight: 0,
            service_time: spec.service_time,
            slot_interval: spec.slot_interval,
            tokens: 0.0,
            last_refill: 0.0,
            scaler,
        };
        node.tokens = node.bucket_depth();
        node
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Requests accepted and not yet finished.
    pub fn in_flight(&self) -> u64 {
        self.in_flight
    }

    /// The request in service (mm1m).
    pub fn serving(&self) -> Option<u64> {
        self.in_service
    }

    pub fn service_time(&self) -> f64 {
        self.service_time
    }

    fn bucket_depth(&self) -> f64 {
        (self.capacity * self.slot_interval).max(1.0)
    }

    fn refill(&mut self, now: Time) {
        let dt = (now - self.last_refill).max(0.0);
        self.tokens = (self.tokens + dt * self.capacity).min(self.bucket_depth());
        self.last_refill = now;
    }

    /// Offers one attempt. In mm1m mode an accepted request either starts
    /// service at once (see [`ServiceNode::serving`]) or waits in the queue.
    pub fn offer(&mut self, id: u64, now: Time) -> OfferOutcome {
        if let Some(s) = self.scaler.as_mut() {
            s.window_offers += 1;
        }
        match self.model {
            ServiceModel::Mm1m => {
                if self.in_service.is_none() {
                    self.in_service = Some(id);
                } else if self.queue.len() < self.buffer_size as usize {
                    self.queue.push_back(id);
                } else {
                    return OfferOutcome::Rejected;
                }
            }
            ServiceModel::CapacitySlot => {
                self.refill(now);
                if self.tokens < 1.0 && !self.grow_instantly() {
                    return OfferOutcome::Rejected;
                }
                self.tokens -= 1.0;
            }
        }
        self.in_flight += 1;
        OfferOutcome::Accepted
    }

    /// Instant scaler in capacity-slot mode: raise capacity by one request
    /// per slot to cover the shortfall, up to the maximum.
    fn grow_instantly(&mut self) -> bool {
        let Some(s) = self.scaler.as_ref() else { return false };
        if s.spec.kind != AutoscalerKind::Instant {
            return false;
        }
        let grown = (self.capacity + 1.0 / self.slot_interval).min(s.spec.max_capacity);
        if grown <= self.capacity {
            return false;
        }
        self.capacity = grown;
        self.tokens += 1.0;
        true
    }

    /// Ends the current mm1m service and returns the request that starts next.
    pub fn finish_service(&mut self) -> Option<u64> {
        debug_assert!(self.in_service.is_some());
        self.in_flight -= 1;
        self.in_service = self.queue.pop_front();
        self.in_service
    }

    /// Ends one capacity-slot service.
    pub fn release(&mut self) {
        debug_assert!(self.in_flight > 0);
        self.in_flight -= 1;
    }

    pub fn set_capacity(&mut self, capacity: f64, now: Time) {
        self.refill(now);
        self.capacity = capacity;
        self.tokens = self.tokens.min(self.bucket_depth());
        if let Some(s) = self.scaler.as_mut() {
            s.pending = false;
        }
    }

    pub fn scaler_spec(&self) -> Option<&AutoscalerSpec> {
        self.scaler.as_ref().map(|s| &s.spec)
    }

    /// One autoscaler decision over the window that ends at `now`. The
    /// measured rate counts every offered attempt, retries included.
    pub fn scaler_tick(&mut self, now: Time) -> Option<CapacityChange> {
        let capacity = self.capacity;
        let s = self.scaler.as_mut()?;
        let spec = &s.spec;
        let measured = s.window_offers as f64 / spec.measurement_window;
        s.window_offers = 0;
        let util = measured / capacity;
        let high = util > spec.target_utilization * (1.0 + spec.tolerance);
        let low = util < spec.target_utilization * (1.0 - spec.tolerance);
        let window_start = now - spec.measurement_window;

        if low {
            s.low_since.get_or_insert(window_start);
        } else {
            s.low_since = None;
        }
        let held_low = s.low_since.is_some_and(|t| now - t >= spec.scale_down_hold);

        match spec.kind {
            AutoscalerKind::Instant => {
                let desired = spec.clamp(measured / spec.target_utilization);
                if (high && desired > capacity) || (held_low && desired < capacity) {
                    s.low_since = None;
                    return Some(CapacityChange { apply_at: now, capacity: desired });
                }
                None
            }
            AutoscalerKind::TargetTracking => {
                if s.pending {
                    s.breaches = 0;
                    return None;
                }
                let desired = spec.clamp(measured / spec.target_utilization);
                if high {
                    s.breaches += 1;
                    if s.breaches >= spec.breach_windows && desired > capacity {
                        s.breaches = 0;
                        s.pending = true;
                        return Some(CapacityChange { apply_at: now + spec.decision_delay, capacity: desired });
                    }
                } else {
                    s.breaches = 0;
                }
                if held_low && desired < capacity {
                    s.low_since = None;
                    s.pending = true;
                    return Some(CapacityChange { apply_at: now + spec.decision_delay, capacity: desired });
                }
                None
            }
            AutoscalerKind::HpaLike => {
                let replicas = (capacity / spec.replica_unit).ceil().max(1.0);
                let desired_replicas =
                    if high || low { (replicas * util / spec.target_utilization).ceil().max(1.0) } else { replicas };
                s.recommendations.push_back((now, desired_replicas));
                while s.recommendations.front().is_some_and(|&(t, _)| t < now - spec.stabilization_window) {
                    s.recommendations.pop_front();
                }
                if s.pending {
                    return None;
                }
                let stable_down = s.recommendations.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
                let target = if desired_replicas > replicas {
                    desired_replicas
                } else if held_low && stable_down < replicas {
                    stable_down
                } else {
                    return None;
                };
                let capacity_wanted = spec.clamp(target * spec.replica_unit);
                if capacity_wanted == capacity {
                    return None;
                }
                if capacity_wanted < capacity {
                    s.low_since = None;
                }
                s.pending = true;
                Some(CapacityChange { apply_at: now + spec.decision_delay, capacity: capacity_wanted })
            }
        }
    }
}

/// What happened to a rejected request at the upstream service.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RetryDecision {
    Scheduled { fire_at: Time },
    Failed,
}

/// Handles a rejection: schedules a retry if attempts remain, the deadline
/// has not passed and the (guarded) policy admits it; fails the request
/// otherwise.
pub fn upstream_hold_and_retry<R: Rng + ?Sized>(
    request: &mut Request,
    policy: &mut GuardedPolicy,
    rng: &mut R,
    now: Time,
) -> Result<RetryDecision> {
    debug_assert_eq!(request.state, RequestState::AwaitingRetry);
    let next = request.attempt + 1;
    let expired = request.deadline.is_some_and(|d| now >= d);
    if next > policy.policy.spec().retry_limit() || expired {
        fail(request, now);
        return Ok(RetryDecision::Failed);
    }
    match policy.admit_retry(next, now) {
        Admission::Allow => {
            let delay = policy.policy.next_delay(next, rng)?;
            Ok(RetryDecision::Scheduled { fire_at: now + delay })
        }
        Admission::Deny => {
            fail(request, now);
            Ok(RetryDecision::Failed)
        }
    }
}

fn fail(request: &mut Request, now: Time) {
    request.transition(RequestState::Failed);
    request.completion_time = Some(now);
}

/// Everything one tandem run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TandemSpec {
    pub horizon: Time,
    /// Steady-state counters ignore events before this time.
    pub warmup: Time,
    pub seed: u64,
    pub sample_period: f64,
    pub traffic: TrafficProfile,
    pub service_model: ServiceModel,
    pub upstream: ServiceNodeSpec,
    pub downstream: ServiceNodeSpec,
    pub policy: RetryPolicySpec,
    pub controller: Option<ControllerConfig>,
    pub request_timeout: Option<f64>,
}

impl Default for TandemSpec {
    fn default() -> Self {
        Self {
            horizon: 600.0,
            warmup: 0.0,
            seed: 1,
            sample_period: 1.0,
            traffic: TrafficProfile::constant(50.0),
            service_model: ServiceModel::Mm1m,
            upstream: ServiceNodeSpec::named("A"),
            downstream: ServiceNodeSpec::named("B"),
            policy: RetryPolicySpec::default(),
            controller: None,
            request_timeout: None,
        }
    }
}

impl TandemSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be > 0, got {}", self.horizon)));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.horizon) {
            return Err(Error::Config("warmup must be in [0, horizon)".into()));
        }
        if !(self.sample_period > 0.0) {
            return Err(Error::Config("sample_period must be > 0".into()));
        }
        if self.request_timeout.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Config("request_timeout must be > 0".into()));
        }
        self.traffic.validate()?;
        self.upstream.validate()?;
        self.downstream.validate()?;
        self.policy.validate()?;
        if let Some(c) = &self.controller {
            c.validate()?;
        }
        Ok(())
    }
}

/// One row of the sampled time series; counts cover `(t - period, t]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub time: Time,
    pub fresh: u64,
    pub burst: u64,
    pub attempts: u64,
    pub retries: u64,
    pub rejections: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub capacity: f64,
    pub upstream_held: u64,
    pub retries_on: bool,
    pub upstream_spend: f64,
    pub downstream_spend: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TandemMetrics {
    pub fresh: u64,
    pub burst_fresh: u64,
    pub burst_failed: u64,
    /// Upstream held seconds of burst-origin requests.
    pub burst_held_sum: f64,
    pub attempts: u64,
    pub retries: u64,
    pub rejections: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub in_system: u64,
    pub latency_sum: f64,
    pub held_sum: f64,
    pub max_attempts_seen: u32,
    /// Seconds of steady-state measurement (`horizon - warmup`).
    pub steady_duration: f64,
    /// Steady-state attempts by attempt index.
    pub steady_stage_attempts: Vec<u64>,
    pub steady_attempts: u64,
    pub steady_rejections: u64,
    pub steady_succeeded: u64,
    pub steady_failed: u64,
    pub steady_fresh: u64,
    /// True if fresh = succeeded + failed + in-system held at every sample.
    pub conserved: bool,
}

impl TandemMetrics {
    pub fn retries_per_request(&self) -> f64 {
        ratio(self.retries as f64, self.fresh)
    }

    /// Fraction of finished requests that failed.
    pub fn rejection_rate(&self) -> f64 {
        ratio(self.failed as f64, self.succeeded + self.failed)
    }

    /// Mean arrival-to-success time of succeeded requests.
    pub fn mean_latency(&self) -> f64 {
        ratio(self.latency_sum, self.succeeded)
    }

    /// Steady-state per-attempt rejection probability.
    pub fn attempt_rejection_prob(&self) -> f64 {
        ratio(self.steady_rejections as f64, self.steady_attempts)
    }

    /// Steady-state successes per second.
    pub fn goodput(&self) -> f64 {
        self.steady_succeeded as f64 / self.steady_duration
    }

    /// Steady-state rate of attempts with index `i`.
    pub fn stage_rate(&self, i: usize) -> f64 {
        self.steady_stage_attempts.get(i).copied().unwrap_or(0) as f64 / self.steady_duration
    }
}

fn ratio(num: f64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

#[derive(Debug, Clone)]
pub struct TandemRun {
    pub metrics: TandemMetrics,
    pub series: Vec<SampleRow>,
    /// `(time, capacity)` at the start and at every change.
    pub capacity_trajectory: Vec<(Time, f64)>,
    pub transitions: Vec<ModeTransition>,
    pub upstream_ledger: CostLedger,
    pub downstream_ledger: CostLedger,
    pub events_processed: u64,
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Arrival(Origin),
    TrafficChange,
    Complete(u64),
    RetryFire(u64),
    ControllerTick,
    ScalerTick,
    ApplyCapacity(f64),
    Sample,
}

struct World {
    spec: TandemSpec,
    downstream: ServiceNode,
    policy: GuardedPolicy,
    requests: HashMap<u64, Request>,
    next_id: u64,
    arrival_rng: ChaCha8Rng,
    burst_rng: ChaCha8Rng,
    service_rng: ChaCha8Rng,
    jitter_rng: ChaCha8Rng,
    legit_rate: f64,
    burst_rate: f64,
    legit_handle: Option<EventHandle>,
    burst_handle: Option<EventHandle>,
    service_handle: Option<(EventHandle, u64)>,
    upstream_rule: PricingRule,
    downstream_rule: PricingRule,
    upstream_ledger: CostLedger,
    downstream_ledger: CostLedger,
    capacity_since: Time,
    capacity_trajectory: Vec<(Time, f64)>,
    metrics: TandemMetrics,
    row: SampleRow,
    series: Vec<SampleRow>,
    ctrl_window: WindowCounts,
    error: Option<Error>,
}

/// Runs one tandem simulation; a pure function of `spec`.
pub fn simulate(spec: &TandemSpec) -> Result<TandemRun> {
    spec.validate()?;
    let streams = RngStreams::new(spec.seed);
    let downstream = ServiceNode::new(&spec.downstream, spec.service_model);
    let controller = spec.controller.clone().map(Controller::new);
    let zero_rule = PricingRule::default();
    let mut world = World {
        downstream,
        policy: GuardedPolicy::new(RetryPolicy::new(spec.policy.clone()), controller),
        requests: HashMap::new(),
        next_id: 0,
        arrival_rng: streams.stream("arrivals"),
        burst_rng: streams.stream("burst"),
        service_rng: streams.stream("service"),
        jitter_rng: streams.stream("jitter"),
        legit_rate: 0.0,
        burst_rate: 0.0,
        legit_handle: None,
        burst_handle: None,
        service_handle: None,
        upstream_rule: spec.upstream.pricing.clone().unwrap_or_else(|| zero_rule.clone()),
        downstream_rule: spec.downstream.pricing.clone().unwrap_or(zero_rule),
        upstream_ledger: CostLedger::new(spec.upstream.name.clone(), spec.sample_period),
        downstream_ledger: CostLedger::new(spec.downstream.name.clone(), spec.sample_period),
        capacity_since: 0.0,
        capacity_trajectory: vec![(0.0, spec.downstream.capacity)],
        metrics: TandemMetrics {
            steady_duration: spec.horizon - spec.warmup,
            steady_stage_attempts: vec![0; spec.policy.retry_limit() as usize + 1],
            conserved: true,
            ..TandemMetrics::default()
        },
        row: SampleRow::default(),
        series: Vec::new(),
        ctrl_window: WindowCounts::default(),
        error: None,
        spec: spec.clone(),
    };

    let mut kernel: Kernel<Event> = Kernel::new();
    world.retarget_arrivals(&mut kernel, 0.0)?;
    for t in spec.traffic.change_times() {
        if t > 0.0 && t <= spec.horizon {
            kernel.schedule(t, Event::TrafficChange)?;
        }
    }
    if let Some(c) = &spec.controller {
        kernel.schedule(c.tick_period, Event::ControllerTick)?;
    }
    if let Some(s) = &spec.downstream.scaler {
        kernel.schedule(s.measurement_window, Event::ScalerTick)?;
    }
    kernel.schedule(spec.sample_period, Event::Sample)?;

    let summary = kernel.run_until(spec.horizon, |k, now, ev| {
        if world.error.is_none() {
            if let Err(e) = world.handle(k, now, ev) {
                world.error = Some(e);
            }
        }
    });
    if let Some(e) = world.error.take() {
        return Err(e);
    }
    Ok(world.finish(summary.events_processed))
}

impl World {
    fn steady(&self, now: Time) -> bool {
        now >= self.spec.warmup
    }

    fn retarget_arrivals(&mut self, k: &mut Kernel<Event>, now: Time) -> Result<()> {
        self.legit_rate = self.spec.traffic.rate_at(now);
        self.burst_rate = self.spec.traffic.burst_rate_at(now);
        if let Some(h) = self.legit_handle.take() {
            k.cancel(h);
        }
        if let Some(h) = self.burst_handle.take() {
            k.cancel(h);
        }
        if self.legit_rate > 0.0 {
            let dt = poisson_interarrival(&mut self.arrival_rng, self.legit_rate)?;
            self.legit_handle = Some(k.schedule(now + dt, Event::Arrival(Origin::Fresh))?);
        }
        if self.burst_rate > 0.0 {
            let dt = poisson_interarrival(&mut self.burst_rng, self.burst_rate)?;
            self.burst_handle = Some(k.schedule(now + dt, Event::Arrival(Origin::BurstAttack))?);
        }
        Ok(())
    }

    fn handle(&mut self, k: &mut Kernel<Event>, now: Time, ev: Event) -> Result<()> {
        match ev {
            Event::Arrival(origin) => self.on_arrival(k, now, origin),
            Event::TrafficChange => self.retarget_arrivals(k, now),
            Event::Complete(id) => self.on_complete(k, now, id),
            Event::RetryFire(id) => {
                let req = self.requests.get_mut(&id).expect("retry for live request");
                req.attempt += 1;
                req.transition(RequestState::Pending);
                self.attempt(k, now, id)
            }
            Event::ControllerTick => {
                let value = {
                    let c = self.policy.controller.as_ref().expect("controller tick without controller");
                    measure_value(&self.ctrl_window, c.config().metric)
                };
                self.ctrl_window = WindowCounts::default();
                let c = self.policy.controller.as_mut().expect("controller");
                c.ingest(value, now);
                c.probe_cycle(now);
                let period = c.config().tick_period;
                k.schedule(now + period, Event::ControllerTick)?;
                Ok(())
            }
            Event::ScalerTick => {
                if let Some(change) = self.downstream.scaler_tick(now) {
                    if change.apply_at <= now {
                        self.apply_capacity(k, now, change.capacity)?;
                    } else {
                        k.schedule(change.apply_at, Event::ApplyCapacity(change.capacity))?;
                    }
                }
                let window = self.downstream.scaler_spec().expect("scaler").measurement_window;
                k.schedule(now + window, Event::ScalerTick)?;
                Ok(())
            }
            Event::ApplyCapacity(c) => self.apply_capacity(k, now, c),
            Event::Sample => {
                self.sample(now);
                k.schedule(now + self.spec.sample_period, Event::Sample)?;
                Ok(())
            }
        }
    }

    fn on_arrival(&mut self, k: &mut Kernel<Event>, now: Time, origin: Origin) -> Result<()> {
        let (rng, rate) = match origin {
            Origin::Fresh => (&mut self.arrival_rng, self.legit_rate),
            Origin::BurstAttack => (&mut self.burst_rng, self.burst_rate),
        };
        let dt = poisson_interarrival(rng, rate)?;
        let handle = k.schedule(now + dt, Event::Arrival(origin))?;
        match origin {
            Origin::Fresh => self.legit_handle = Some(handle),
            Origin::BurstAttack => self.burst_handle = Some(handle),
        }

        let id = self.next_id;
        self.next_id += 1;
        let deadline = self.spec.request_timeout.map(|t| now + t);
        self.requests.insert(id, Request::new(id, now, origin, deadline));
        self.policy.policy.on_fresh(now);
        self.metrics.fresh += 1;
        self.row.fresh += 1;
        if origin == Origin::BurstAttack {
            self.metrics.burst_fresh += 1;
            self.row.burst += 1;
        }
        if self.steady(now) {
            self.metrics.steady_fresh += 1;
        }
        self.ctrl_window.fresh += 1;
        self.attempt(k, now, id)
    }

    fn attempt(&mut self, k: &mut Kernel<Event>, now: Time, id: u64) -> Result<()> {
        let attempt = self.requests[&id].attempt;
        self.metrics.attempts += 1;
        self.metrics.max_attempts_seen = self.metrics.max_attempts_seen.max(attempt + 1);
        self.row.attempts += 1;
        self.ctrl_window.attempts += 1;
        if attempt > 0 {
            self.metrics.retries += 1;
            self.row.retries += 1;
            self.ctrl_window.retries += 1;
        }
        let steady = self.steady(now);
        if steady {
            self.metrics.steady_attempts += 1;
            self.metrics.steady_stage_attempts[attempt as usize] += 1;
        }

        match self.downstream.offer(id, now) {
            OfferOutcome::Accepted => {
                self.requests.get_mut(&id).expect("live").transition(RequestState::InService);
                match self.spec.service_model {
                    ServiceModel::Mm1m => {
                        if self.downstream.serving() == Some(id) {
                            self.start_service(k, now, id)?;
                        }
                    }
                    ServiceModel::CapacitySlot => {
                        k.schedule(now + self.downstream.service_time(), Event::Complete(id))?;
                    }
                }
                Ok(())
            }
            OfferOutcome::Rejected => {
                self.metrics.rejections += 1;
                self.row.rejections += 1;
                self.ctrl_window.rejections += 1;
                if steady {
                    self.metrics.steady_rejections += 1;
                }
                let req = self.requests.get_mut(&id).expect("live");
                req.transition(RequestState::AwaitingRetry);
                match upstream_hold_and_retry(req, &mut self.policy, &mut self.jitter_rng, now)? {
                    RetryDecision::Scheduled { fire_at } => {
                        k.schedule(fire_at, Event::RetryFire(id))?;
                    }
                    RetryDecision::Failed => self.finalize(now, id, false),
                }
                Ok(())
            }
        }
    }

    fn start_service(&mut self, k: &mut Kernel<Event>, now: Time, id: u64) -> Result<()> {
        let dt = Exp::new(self.downstream.capacity())
            .map_err(|e| Error::Domain(e.to_string()))?
            .sample(&mut self.service_rng);
        let handle = k.schedule(now + dt, Event::Complete(id))?;
        self.service_handle = Some((handle, id));
        Ok(())
    }

    fn on_complete(&mut self, k: &mut Kernel<Event>, now: Time, id: u64) -> Result<()> {
        match self.spec.service_model {
            ServiceModel::Mm1m => {
                self.service_handle = None;
                if let Some(next) = self.downstream.finish_service() {
                    self.start_service(k, now, next)?;
                }
            }
            ServiceModel::CapacitySlot => self.downstream.release(),
        }
        let req = self.requests.get_mut(&id).expect("live");
        req.transition(RequestState::Succeeded);
        req.completion_time = Some(now);
        self.policy.policy.on_success();
        self.finalize(now, id, true);
        Ok(())
    }

    fn finalize(&mut self, now: Time, id: u64, succeeded: bool) {
        let req = self.requests.remove(&id).expect("live");
        let held = now - req.arrival_time;
        self.metrics.held_sum += held;
        if req.origin == Origin::BurstAttack {
            self.metrics.burst_held_sum += held;
            if !succeeded {
                self.metrics.burst_failed += 1;
            }
        }
        let steady = self.steady(now);
        if succeeded {
            self.metrics.succeeded += 1;
            self.metrics.latency_sum += held;
            self.row.succeeded += 1;
            self.ctrl_window.completions += 1;
            self.ctrl_window.latency_sum += held;
            if steady {
                self.metrics.steady_succeeded += 1;
            }
        } else {
            self.metrics.failed += 1;
            self.row.failed += 1;
            if steady {
                self.metrics.steady_failed += 1;
            }
        }
        self.upstream_ledger.accrue(&self.upstream_rule, &Activity::Request { at: now, held_seconds: held });
    }

    fn apply_capacity(&mut self, k: &mut Kernel<Event>, now: Time, capacity: f64) -> Result<()> {
        self.accrue_capacity(now);
        self.downstream.set_capacity(capacity, now);
        self.capacity_trajectory.push((now, capacity));
        // Exponential service is memoryless: redraw the running service at the new rate.
        if let Some((handle, id)) = self.service_handle.take() {
            k.cancel(handle);
            self.start_service(k, now, id)?;
        }
        Ok(())
    }

    fn accrue_capacity(&mut self, now: Time) {
        let capacity = self.downstream.capacity();
        let from = self.capacity_since;
        let unit = self.spec.downstream.scaler.as_ref().map_or(1.0, |s| s.replica_unit);
        self.downstream_ledger.accrue(&self.downstream_rule, &Activity::Capacity { from, to: now, capacity });
        self.downstream_ledger
            .accrue(&self.downstream_rule, &Activity::Replicas { from, to: now, replicas: (capacity / unit).ceil() });
        self.capacity_since = now;
    }

    fn sample(&mut self, now: Time) {
        let held = self.requests.len() as u64;
        self.metrics.in_system = held;
        let m = &self.metrics;
        if m.fresh != m.succeeded + m.failed + held {
            self.metrics.conserved = false;
        }
        let mut row = std::mem::take(&mut self.row);
        row.time = now;
        row.capacity = self.downstream.capacity();
        row.upstream_held = held;
        row.retries_on = self.policy.mode() == Mode::On && self.spec.policy.retry_limit() > 0;
        self.series.push(row);
    }

    fn finish(mut self, events_processed: u64) -> TandemRun {
        let horizon = self.spec.horizon;
        self.accrue_capacity(horizon);
        self.metrics.in_system = self.requests.len() as u64;
        let m = &self.metrics;
        if m.fresh != m.succeeded + m.failed + m.in_system {
            self.metrics.conserved = false;
        }
        // Requests still held at the horizon are billed for the time so far.
        let mut open: Vec<&Request> = self.requests.values().collect();
        open.sort_by_key(|r| r.id);
        for r in open {
            self.upstream_ledger.accrue(
                &self.upstream_rule,
                &Activity::Request { at: horizon, held_seconds: horizon - r.arrival_time },
            );
        }
        let period = self.spec.sample_period;
        for row in &mut self.series {
            let mid = row.time - period / 2.0;
            row.upstream_spend = self.upstream_ledger.bin_spend(mid);
            row.downstream_spend = self.downstream_ledger.bin_spend(mid);
        }
        TandemRun {
            metrics: self.metrics,
            series: self.series,
            capacity_trajectory: self.capacity_trajectory,
            transitions: self.policy.controller.map(|c| c.transitions().to_vec()).unwrap_or_default(),
            upstream_ledger: self.upstream_ledger,
            downstream_ledger: self.downstream_ledger,
            events_processed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{self, OverloadModel, StableLoadModel};
    use crate::policy::{Jitter, PolicyKind};
    use rand::SeedableRng;

    fn node(buffer_size: u32) -> ServiceNode {
        ServiceNode::new(
            &ServiceNodeSpec { capacity: 1.0, buffer_size, ..ServiceNodeSpec::named("B") },
            ServiceModel::Mm1m,
        )
    }

    #[test]
    fn empty_node_accepts() {
        let mut n = node(0);
        assert_eq!(n.offer(1, 0.0), OfferOutcome::Accepted);
        assert_eq!(n.serving(), Some(1));
    }

    #[test]
    fn full_buffer_rejects_and_queue_stays_bounded() {
        let mut n = node(3);
        for id in 0..4 {
            assert_eq!(n.offer(id, 0.0), OfferOutcome::Accepted);
        }
        assert_eq!(n.queue_len(), 3);
        assert_eq!(n.offer(9, 0.0), OfferOutcome::Rejected);
        assert_eq!(n.queue_len(), 3);
        assert_eq!(n.finish_service(), Some(1));
        assert_eq!(n.offer(10, 0.0), OfferOutcome::Accepted);
        assert_eq!(n.in_flight(), 4);
    }

    #[test]
    fn capacity_slot_rejects_beyond_tokens() {
        let spec = ServiceNodeSpec { capacity: 10.0, slot_interval: 1.0, ..ServiceNodeSpec::named("B") };
        let mut n = ServiceNode::new(&spec, ServiceModel::CapacitySlot);
        let accepted = (0..15).filter(|&id| n.offer(id, 0.0) == OfferOutcome::Accepted).count();
        assert_eq!(accepted, 10);
        assert_eq!(n.offer(99, 0.5), OfferOutcome::Accepted);
    }

    #[test]
    fn poisson_offers_match_small_buffer_blocking() {
        let spec = TandemSpec {
            horizon: 2e6,
            sample_period: 2e4,
            traffic: TrafficProfile::constant(0.5),
            downstream: ServiceNodeSpec { capacity: 1.0, buffer_size: 1, ..ServiceNodeSpec::named("B") },
            policy: RetryPolicySpec::of_kind(PolicyKind::None),
            ..TandemSpec::default()
        };
        let run = simulate(&spec).unwrap();
        let m = &run.metrics;
        assert!(m.attempts > 900_000);
        let p = m.rejections as f64 / m.attempts as f64;
        let ratios: Vec<f64> = run.series.iter().map(|s| s.rejections as f64 / s.attempts as f64).collect();
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (ratios.len() - 1) as f64;
        let se = (var / ratios.len() as f64).sqrt();
        let exact = analytics::mm1m_rejection_prob(&StableLoadModel { rho: 0.5, m: 2 }).unwrap();
        assert!((exact - 0.142857).abs() < 1e-6);
        assert!((p - exact).abs() < 3.0 * se, "p={p} exact={exact} se={se}");
    }

    fn scaler_node(kind: AutoscalerKind, capacity: f64) -> ServiceNode {
        let scaler = AutoscalerSpec {
            kind,
            target_utilization: 0.9,
            decision_delay: 60.0,
            measurement_window: 60.0,
            scale_down_hold: 900.0,
            min_capacity: 1.0,
            max_capacity: 10_000.0,
            ..AutoscalerSpec::default()
        };
        let spec =
            ServiceNodeSpec { capacity, buffer_size: 1_000_000, scaler: Some(scaler), ..ServiceNodeSpec::named("B") };
        ServiceNode::new(&spec, ServiceModel::Mm1m)
    }

    fn offer_window(n: &mut ServiceNode, rate: f64, window: f64, next_id: &mut u64) {
        for _ in 0..(rate * window).round() as u64 {
            n.offer(*next_id, 0.0);
            *next_id += 1;
        }
    }

    #[test]
    fn target_tracking_inflated_load_lands_near_448() {
        let mut n = scaler_node(AutoscalerKind::TargetTracking, 383.0 / 0.9);
        let mut id = 0;
        let mut t = 0.0;
        let mut change = None;
        for _ in 0..5 {
            t += 60.0;
            offer_window(&mut n, 403.0, 60.0, &mut id);
            if let Some(c) = n.scaler_tick(t) {
                change = Some(c);
                break;
            }
        }
        let c = change.expect("scale-up after sustained breach");
        assert!((c.capacity - 403.0 / 0.9).abs() < 0.5);
        assert!((c.capacity - 448.0).abs() < 1.0);
        assert_eq!(c.apply_at, t + 60.0);
        n.set_capacity(c.capacity, c.apply_at);
        assert!((n.capacity() - 447.8).abs() < 0.1);
    }

    #[test]
    fn short_low_spell_does_not_shrink() {
        let mut n = scaler_node(AutoscalerKind::TargetTracking, 1000.0);
        let mut id = 0;
        let mut t = 0.0;
        for _ in 0..14 {
            t += 60.0;
            offer_window(&mut n, 100.0, 60.0, &mut id);
            assert!(n.scaler_tick(t).is_none(), "shrunk after {t}s below target");
        }
        t += 60.0;
        offer_window(&mut n, 100.0, 60.0, &mut id);
        let c = n.scaler_tick(t).expect("shrink once the hold has elapsed");
        assert!(c.capacity < 1000.0);
    }

    #[test]
    fn instant_scaler_doubles_at_the_tick() {
        let mut n = scaler_node(AutoscalerKind::Instant, 100.0 / 0.9);
        let mut id = 0;
        offer_window(&mut n, 200.0, 60.0, &mut id);
        let c = n.scaler_tick(60.0).expect("instant scale-up");
        assert_eq!(c.apply_at, 60.0);
        assert!((c.capacity - 2.0 * 100.0 / 0.9).abs() < 1e-9);
    }

    #[test]
    fn hpa_rounds_to_replicas() {
        let mut n = scaler_node(AutoscalerKind::HpaLike, 100.0);
        let mut id = 0;
        offer_window(&mut n, 150.0, 60.0, &mut id);
        let c = n.scaler_tick(60.0).expect("hpa scale-up");
        assert_eq!(c.capacity, (100.0f64 * 1.5 / 0.9).ceil());
    }

    #[test]
    fn instant_capacity_slot_never_rejects_after_step() {
        let spec = TandemSpec {
            horizon: 200.0,
            service_model: ServiceModel::CapacitySlot,
            traffic: TrafficProfile {
                base_rate: 50.0,
                changes: vec![RateChange { time: 100.0, rate: 150.0 }],
                bursts: vec![],
            },
            downstream: ServiceNodeSpec {
                capacity: 60.0,
                scaler: Some(AutoscalerSpec { kind: AutoscalerKind::Instant, ..AutoscalerSpec::default() }),
                ..ServiceNodeSpec::named("B")
            },
            policy: RetryPolicySpec::of_kind(PolicyKind::None),
            ..TandemSpec::default()
        };
        let run = simulate(&spec).unwrap();
        assert_eq!(run.metrics.rejections, 0);
    }

    fn awaiting(attempt: u32) -> Request {
        let mut r = Request::new(1, 0.0, Origin::Fresh, None);
        r.attempt = attempt;
        r.state = RequestState::AwaitingRetry;
        r
    }

    #[test]
    fn last_attempt_fails_without_retry() {
        let spec = RetryPolicySpec::of_kind(PolicyKind::Legacy).with_max_attempts(2);
        let mut policy = GuardedPolicy::new(RetryPolicy::new(spec), None);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut r = awaiting(2);
        assert_eq!(upstream_hold_and_retry(&mut r, &mut policy, &mut rng, 5.0).unwrap(), RetryDecision::Failed);
        assert_eq!(r.state, RequestState::Failed);
        assert_eq!(r.completion_time, Some(5.0));
    }

    #[test]
    fn exponential_backoff_waits_one_then_two_units() {
        let spec = RetryPolicySpec { jitter: Some(Jitter::None), ..RetryPolicySpec::of_kind(PolicyKind::Legacy) };
        let mut policy = GuardedPolicy::new(RetryPolicy::new(spec), None);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let d1 = upstream_hold_and_retry(&mut awaiting(0), &mut policy, &mut rng, 10.0).unwrap();
        let d2 = upstream_hold_and_retry(&mut awaiting(1), &mut policy, &mut rng, 10.0).unwrap();
        assert_eq!(d1, RetryDecision::Scheduled { fire_at: 11.0 });
        assert_eq!(d2, RetryDecision::Scheduled { fire_at: 12.0 });
    }

    #[test]
    fn expired_deadline_fails() {
        let mut policy = GuardedPolicy::new(RetryPolicy::new(RetryPolicySpec::default()), None);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut r = awaiting(0);
        r.deadline = Some(3.0);
        assert_eq!(upstream_hold_and_retry(&mut r, &mut policy, &mut rng, 3.0).unwrap(), RetryDecision::Failed);
    }

    #[test]
    fn controller_off_denies_retries() {
        let controller = Controller::new(ControllerConfig::default());
        let mut policy = GuardedPolicy::new(RetryPolicy::new(RetryPolicySpec::default()), Some(controller));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            upstream_hold_and_retry(&mut awaiting(0), &mut policy, &mut rng, 1.0).unwrap(),
            RetryDecision::Failed
        );
    }

    #[test]
    fn overload_stage_rates_follow_geometric_decay() {
        let (mu, lambda, k) = (100.0, 200.0, 2);
        let spec = TandemSpec {
            horizon: 1200.0,
            warmup: 200.0,
            service_model: ServiceModel::CapacitySlot,
            traffic: TrafficProfile::constant(lambda),
            downstream: ServiceNodeSpec { capacity: mu, ..ServiceNodeSpec::named("B") },
            policy: RetryPolicySpec::of_kind(PolicyKind::Standard).with_max_attempts(k - 1),
            ..TandemSpec::default()
        };
        let run = simulate(&spec).unwrap();
        let model = OverloadModel::new(lambda, mu, k).unwrap();
        for i in 0..k {
            let expected = analytics::retry_stage_rate(&model, i).unwrap();
            let got = run.metrics.stage_rate(i as usize);
            assert!((got / expected - 1.0).abs() < 0.05, "stage {i}: {got} vs {expected}");
        }
    }

    #[test]
    fn requests_are_conserved() {
        for model in [ServiceModel::Mm1m, ServiceModel::CapacitySlot] {
            let spec = TandemSpec {
                horizon: 300.0,
                service_model: model,
                traffic: TrafficProfile {
                    base_rate: 80.0,
                    changes: vec![RateChange { time: 100.0, rate: 180.0 }],
                    bursts: vec![BurstSpec { start: 150.0, duration: 10.0, extra_rate: 300.0, ..BurstSpec::default() }],
                },
                request_timeout: Some(5.0),
                ..TandemSpec::default()
            };
            let m = simulate(&spec).unwrap().metrics;
            assert!(m.conserved);
            assert_eq!(m.fresh, m.succeeded + m.failed + m.in_system);
            assert!(m.max_attempts_seen <= spec.policy.retry_limit());
        }
    }

    #[test]
    fn held_time_equals_service_time_without_contention() {
        let spec = TandemSpec {
            horizon: 100.0,
            service_model: ServiceModel::CapacitySlot,
            traffic: TrafficProfile::constant(20.0),
            downstream: ServiceNodeSpec {
                capacity: 1000.0,
                service_time: 0.05,
                pricing: Some(PricingRule::provisioned_capacity(1.0)),
                ..ServiceNodeSpec::named("B")
            },
            upstream: ServiceNodeSpec {
                pricing: Some(PricingRule::invocation_duration(0.0, 1.0)),
                ..ServiceNodeSpec::named("A")
            },
            policy: RetryPolicySpec::of_kind(PolicyKind::None),
            ..TandemSpec::default()
        };
        let run = simulate(&spec).unwrap();
        let m = &run.metrics;
        assert_eq!(m.rejections, 0);
        let finished = (m.succeeded + m.in_system) as f64;
        assert!((m.held_sum / m.succeeded as f64 - 0.05).abs() < 1e-9);
        assert!(run.upstream_ledger.accrued <= finished * 0.05 + 1e-9);
        assert!((run.downstream_ledger.accrued - 1000.0 * 100.0).abs() < 1e-6);
    }

    #[test]
    fn same_seed_same_run() {
        let spec = TandemSpec { traffic: TrafficProfile::constant(150.0), ..TandemSpec::default() };
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.series, b.series);
        let c = simulate(&TandemSpec { seed: 2, ..spec }).unwrap();
        assert_ne!(a.series, c.series);
    }
}
