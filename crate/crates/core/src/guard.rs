// SPDX-License-Identifier: Apache-2.0

//! Productive-retry controller.
//!
//! Each tick the controller measures one metric on its caller→callee edge and
//! compares it to a threshold. `interval` consecutive measurements below the
//! threshold switch retries ON; `interval` consecutive measurements above it
//! switch them OFF. A measurement exactly at the threshold resets both
//! streaks. Retries start OFF.
//!
//! With `probe_enabled`, a controller that has been OFF for `cooldown` seconds
//! re-enables retries for one tick and judges the probe traffic: a high
//! reading returns it to OFF, a low one hands control back to the counters.

use serde::{Deserialize, Serialize};

use crate::engine::Time;
use crate::error::{Error, Result};
use crate::policy::{Admission, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    RejectionRate,
    RetriesPerRequest,
    MeanLatency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    On,
    Off,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::On => "ON",
            Mode::Off => "OFF",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub metric: MetricKind,
    pub threshold: f64,
    /// Consecutive same-side measurements needed to change mode.
    pub interval: u32,
    pub tick_period: f64,
    pub cooldown: f64,
    pub probe_enabled: bool,
    pub initial_mode: Mode,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            metric: MetricKind::RejectionRate,
            threshold: 0.2,
            interval: 6,
            tick_period: 5.0,
            cooldown: 60.0,
            probe_enabled: false,
            initial_mode: Mode::Off,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!("controller threshold must be > 0, got {}", self.threshold)));
        }
        if self.interval == 0 {
            return Err(Error::Config("controller interval must be >= 1".into()));
        }
        if !(self.tick_period > 0.0 && self.tick_period.is_finite()) {
            return Err(Error::Config(format!("controller tick_period must be > 0, got {}", self.tick_period)));
        }
        if !(self.cooldown >= 0.0) {
            return Err(Error::Config("controller cooldown must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub consecutive_low: u32,
    pub consecutive_high: u32,
    pub retries_mode: Mode,
    pub last_decision_time: Time,
}

impl ControllerState {
    pub fn initial(mode: Mode) -> Self {
        Self { consecutive_low: 0, consecutive_high: 0, retries_mode: mode, last_decision_time: 0.0 }
    }
}

/// One pass of the controller loop body. Pure: the next state depends only on
/// the current state and the measurement.
pub fn ingest_measurement(state: ControllerState, config: &ControllerConfig, value: f64) -> ControllerState {
    let mut next = state;
    if value < config.threshold {
        next.consecutive_low += 1;
        next.consecutive_high = 0;
    } else if value > config.threshold {
        next.consecutive_high += 1;
        next.consecutive_low = 0;
    } else {
        next.consecutive_low = 0;
        next.consecutive_high = 0;
    }
    if next.consecutive_low >= config.interval {
        next.retries_mode = Mode::On;
    } else if next.consecutive_high >= config.interval {
        next.retries_mode = Mode::Off;
    }
    next
}

/// Attempt and completion counts on one edge over one measurement window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowCounts {
    pub attempts: u64,
    pub rejections: u64,
    pub fresh: u64,
    pub retries: u64,
    pub completions: u64,
    pub latency_sum: f64,
}

impl WindowCounts {
    pub fn ratio(num: f64, den: u64) -> f64 {
        if den == 0 {
            0.0
        } else {
            num / den as f64
        }
    }
}

/// Metric value for a window. Empty windows read as 0, which is below any
/// valid threshold.
pub fn measure_value(window: &WindowCounts, metric: MetricKind) -> f64 {
    match metric {
        MetricKind::RejectionRate => WindowCounts::ratio(window.rejections as f64, window.attempts),
        MetricKind::RetriesPerRequest => WindowCounts::ratio(window.retries as f64, window.fresh),
        MetricKind::MeanLatency => WindowCounts::ratio(window.latency_sum, window.completions),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeTransition {
    pub time: Time,
    pub mode: Mode,
    /// True for the temporary ON of a probe and for the OFF that ends a
    /// failed probe.
    pub probe: bool,
}

/// A controller instance governing one caller→callee edge.
#[derive(Debug, Clone)]
pub struct Controller {
    config: ControllerConfig,
    state: ControllerState,
    probing: bool,
    transitions: Vec<ModeTransition>,
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Self {
        let state = ControllerState::initial(config.initial_mode);
        Self { config, state, probing: false, transitions: Vec::new() }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn state(&self) -> ControllerState {
        self.state
    }

    /// Mode seen by the retry path, including a running probe.
    pub fn mode(&self) -> Mode {
        if self.probing {
            Mode::On
        } else {
            self.state.retries_mode
        }
    }

    pub fn is_probing(&self) -> bool {
        self.probing
    }

    pub fn transitions(&self) -> &[ModeTransition] {
        &self.transitions
    }

    /// Feeds one measurement taken at `now` and returns the resulting mode.
    pub fn ingest(&mut self, value: f64, now: Time) -> Mode {
        let before = self.state.retries_mode;
        let next = ingest_measurement(self.state, &self.config, value);
        self.state = next;

        if self.probing {
            self.probing = false;
            if value > self.config.threshold {
                self.state.retries_mode = Mode::Off;
                self.state.last_decision_time = now;
                self.transitions.push(ModeTransition { time: now, mode: Mode::Off, probe: true });
                return Mode::Off;
            }
        }

        if self.state.retries_mode != before {
            self.state.last_decision_time = now;
            self.transitions.push(ModeTransition { time: now, mode: self.state.retries_mode, probe: false });
        }
        self.mode()
    }

    /// Starts a probe when enabled, OFF, and the cool-down has elapsed since
    /// the last decision. Returns true if retries are temporarily ON.
    pub fn probe_cycle(&mut self, now: Time) -> bool {
        if !self.config.probe_enabled || self.probing || self.state.retries_mode == Mode::On {
            return false;
        }
        if now - self.state.last_decision_time < self.config.cooldown {
            return false;
        }
        self.probing = true;
        self.transitions.push(ModeTransition { time: now, mode: Mode::On, probe: true });
        true
    }
}

/// A retry policy gated by an optional controller. With the controller OFF
/// every retry is denied before the policy sees it, so token buckets and
/// budgets are not charged.
#[derive(Debug, Clone)]
pub struct GuardedPolicy {
    pub policy: RetryPolicy,
    pub controller: Option<Controller>,
}

impl GuardedPolicy {
    pub fn new(policy: RetryPolicy, controller: Option<Controller>) -> Self {
        Self { policy, controller }
    }

    pub fn mode(&self) -> Mode {
        self.controller.as_ref().map_or(Mode::On, Controller::mode)
    }

    pub fn admit_retry(&mut self, attempt: u32, now: Time) -> Admission {
        apply_mode(self.mode(), || self.policy.admit_retry(attempt, now))
    }
}

/// OFF denies; ON defers to the underlying policy.
pub fn apply_mode(mode: Mode, policy: impl FnOnce() -> Admission) -> Admission {
    match mode {
        Mode::Off => Admission::Deny,
        Mode::On => policy(),
    }
}
