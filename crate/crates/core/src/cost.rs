// SPDX-License-Identifier: Apache-2.0

//! Billing proxies in abstract cost units.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::Time;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PricingKind {
    /// Per invocation plus per second the request is held (function-style).
    InvocationDuration,
    /// Integral of provisioned capacity over time.
    ProvisionedCapacity,
    /// Integral of replica count over time.
    ReplicaTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingRule {
    pub kind: PricingKind,
    pub price_per_invocation: f64,
    pub price_per_second_held: f64,
    pub price_per_capacity_unit_second: f64,
    pub price_per_replica_second: f64,
}

impl Default for PricingRule {
    fn default() -> Self {
        Self {
            kind: PricingKind::InvocationDuration,
            price_per_invocation: 0.0,
            price_per_second_held: 0.0,
            price_per_capacity_unit_second: 0.0,
            price_per_replica_second: 0.0,
        }
    }
}

impl PricingRule {
    pub fn invocation_duration(per_invocation: f64, per_second_held: f64) -> Self {
        Self {
            kind: PricingKind::InvocationDuration,
            price_per_invocation: per_invocation,
            price_per_second_held: per_second_held,
            ..Self::default()
        }
    }

    pub fn provisioned_capacity(per_unit_second: f64) -> Self {
        Self {
            kind: PricingKind::ProvisionedCapacity,
            price_per_capacity_unit_second: per_unit_second,
            ..Self::default()
        }
    }

    pub fn replica_time(per_replica_second: f64) -> Self {
        Self { kind: PricingKind::ReplicaTime, price_per_replica_second: per_replica_second, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let prices = [
            self.price_per_invocation,
            self.price_per_second_held,
            self.price_per_capacity_unit_second,
            self.price_per_replica_second,
        ];
        if prices.iter().all(|p| *p >= 0.0 && p.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("prices must be finite and >= 0".into()))
        }
    }
}

/// Something billable that happened during a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activity {
    /// A request that finished (succeeded or failed) at `at` after being held
    /// upstream for `held_seconds`, backoff waits included.
    Request { at: Time, held_seconds: f64 },
    /// `capacity` was provisioned over `[from, to)`.
    Capacity { from: Time, to: Time, capacity: f64 },
    /// `replicas` ran over `[from, to)`.
    Replicas { from: Time, to: Time, replicas: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub service: String,
    pub accrued: f64,
    pub breakdown: BTreeMap<String, f64>,
    /// Width of the spend-rate bins in seconds.
    pub bin_width: f64,
    bins: BTreeMap<u64, f64>,
}

impl CostLedger {
    pub fn new(service: impl Into<String>, bin_width: f64) -> Self {
        Self {
            service: service.into(),
            accrued: 0.0,
            breakdown: BTreeMap::new(),
            bin_width: bin_width.max(f64::MIN_POSITIVE),
            bins: BTreeMap::new(),
        }
    }

    /// Adds the cost of `activity` under `rule`. Activities the rule does not
    /// price are ignored.
    pub fn accrue(&mut self, rule: &PricingRule, activity: &Activity) {
        match (*activity, rule.kind) {
            (Activity::Request { at, held_seconds }, PricingKind::InvocationDuration) => {
                self.add("invocations", rule.price_per_invocation, at);
                self.add("held", held_seconds.max(0.0) * rule.price_per_second_held, at);
            }
            (Activity::Capacity { from, to, capacity }, PricingKind::ProvisionedCapacity) => {
                self.add_interval("capacity", from, to, capacity * rule.price_per_capacity_unit_second);
            }
            (Activity::Replicas { from, to, replicas }, PricingKind::ReplicaTime) => {
                self.add_interval("replicas", from, to, replicas * rule.price_per_replica_second);
            }
            _ => {}
        }
    }

    fn add(&mut self, component: &str, amount: f64, at: Time) {
        if amount <= 0.0 {
            return;
        }
        self.accrued += amount;
        *self.breakdown.entry(component.to_string()).or_default() += amount;
        *self.bins.entry(self.bin_of(at)).or_default() += amount;
    }

    /// Spreads a constant spend rate over `[from, to)` across the bins.
    fn add_interval(&mut self, component: &str, from: Time, to: Time, rate: f64) {
        if !(to > from) || rate <= 0.0 {
            return;
        }
        let amount = rate * (to - from);
        self.accrued += amount;
        *self.breakdown.entry(component.to_string()).or_default() += amount;
        let mut t = from;
        while t < to {
            let bin = self.bin_of(t);
            let bin_end = (bin + 1) as f64 * self.bin_width;
            let end = bin_end.min(to);
            *self.bins.entry(bin).or_default() += rate * (end - t);
            if end <= t {
                break;
            }
            t = end;
        }
    }

    fn bin_of(&self, t: Time) -> u64 {
        (t.max(0.0) / self.bin_width).floor() as u64
    }

    /// Total spend in the bin containing `t`.
    pub fn bin_spend(&self, t: Time) -> f64 {
        self.bins.get(&self.bin_of(t)).copied().unwrap_or(0.0)
    }

    /// `(bin start, spend per second)` samples in time order.
    pub fn series(&self) -> Vec<(Time, f64)> {
        self.bins.iter().map(|(&bin, &spend)| (bin as f64 * self.bin_width, spend / self.bin_width)).collect()
    }
}

/// Each entry's total as a percentage of the baseline entry's total.
pub fn relative_billing(totals: &[(String, f64)], baseline: &str) -> Result<Vec<(String, f64)>> {
    let base = totals
        .iter()
        .find(|(name, _)| name == baseline)
        .map(|(_, total)| *total)
        .ok_or_else(|| Error::MissingBaseline(baseline.to_string()))?;
    Ok(totals.iter().map(|(name, total)| (name.clone(), 100.0 * total / base)).collect())
}
