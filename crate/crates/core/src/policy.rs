// SPDX-License-Identifier: Apache-2.0

//! Client-side retry disciplines: none, legacy exponential backoff, standard
//! backoff with full jitter, adaptive token bucket and a retry budget.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Time;
use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    None,
    Legacy,
    Standard,
    Adaptive,
    Budget,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::None => "none",
            PolicyKind::Legacy => "legacy",
            PolicyKind::Standard => "standard",
            PolicyKind::Adaptive => "adaptive",
            PolicyKind::Budget => "budget",
        }
    }

    fn default_jitter(self) -> Jitter {
        match self {
            PolicyKind::Standard | PolicyKind::Adaptive => Jitter::Full,
            _ => Jitter::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Jitter {
    /// Uniform over `[0, backoff]`.
    Full,
    None,
}

/// Configuration of one retry discipline.
///
/// `max_attempts` counts retries: 0 means a single attempt. Delays are in
/// seconds; `base_delay` is the backoff base unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicySpec {
    pub kind: PolicyKind,
    pub max_attempts: u32,
    pub base_delay: f64,
    pub max_delay: f64,
    /// Defaults to full jitter for standard and adaptive, none otherwise.
    pub jitter: Option<Jitter>,
    pub bucket_capacity: f64,
    pub bucket_refill_per_success: f64,
    pub budget_ratio: f64,
    pub budget_window: f64,
}

impl Default for RetryPolicySpec {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Legacy,
            max_attempts: 5,
            base_delay: 1.0,
            max_delay: 20.0,
            jitter: None,
            bucket_capacity: 10.0,
            bucket_refill_per_success: 0.5,
            budget_ratio: 0.2,
            budget_window: 10.0,
        }
    }
}

impl RetryPolicySpec {
    pub fn of_kind(kind: PolicyKind) -> Self {
        let max_attempts = if kind == PolicyKind::None { 0 } else { 5 };
        Self { kind, max_attempts, ..Self::default() }
    }

    pub fn with_max_attempts(mut self, max_attempts: u32) -> Self {
        self.max_attempts = max_attempts;
        self
    }

    pub fn with_base_delay(mut self, base_delay: f64) -> Self {
        self.base_delay = base_delay;
        self
    }

    pub fn jitter(&self) -> Jitter {
        self.jitter.unwrap_or_else(|| self.kind.default_jitter())
    }

    /// Largest number of retries a request can make under this policy.
    pub fn retry_limit(&self) -> u32 {
        if self.kind == PolicyKind::None {
            0
        } else {
            self.max_attempts
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.kind != PolicyKind::None {
            if !(self.base_delay > 0.0 && self.base_delay.is_finite()) {
                return bad(format!("policy base_delay must be > 0, got {}", self.base_delay));
            }
            if !(self.max_delay >= self.base_delay) {
                return bad(format!("policy max_delay {} must be >= base_delay {}", self.max_delay, self.base_delay));
            }
        }
        if !(self.bucket_capacity >= 0.0) || !(self.bucket_refill_per_success >= 0.0) {
            return bad("token bucket parameters must be >= 0".into());
        }
        if !(self.budget_ratio >= 0.0) || !(self.budget_window > 0.0) {
            return bad("budget_ratio must be >= 0 and budget_window > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Allow,
    Deny,
}

/// A policy with its runtime state (token bucket, budget window).
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    spec: RetryPolicySpec,
    tokens: f64,
    fresh: VecDeque<Time>,
    retries: VecDeque<Time>,
}

impl RetryPolicy {
    pub fn new(spec: RetryPolicySpec) -> Self {
        let tokens = spec.bucket_capacity;
        Self { spec, tokens, fresh: VecDeque::new(), retries: VecDeque::new() }
    }

    pub fn spec(&self) -> &RetryPolicySpec {
        &self.spec
    }

    pub fn tokens(&self) -> f64 {
        self.tokens
    }

    /// Wait before retry number `attempt` (1-based).
    pub fn next_delay<R: Rng + ?Sized>(&self, attempt: u32, rng: &mut R) -> Result<Time> {
        if self.spec.kind == PolicyKind::None {
            return domain("policy `none` never retries");
        }
        if attempt == 0 || attempt > self.spec.max_attempts {
            return Err(Error::Index { index: attempt, max: self.spec.max_attempts });
        }
        let backoff = (self.spec.base_delay * 2f64.powi(attempt as i32 - 1)).min(self.spec.max_delay);
        Ok(match self.spec.jitter() {
            Jitter::None => backoff,
            Jitter::Full => rng.random_range(0.0..=backoff),
        })
    }

    /// Decides whether retry number `attempt` (1-based) may be issued. An
    /// allowed adaptive retry consumes a token; an allowed budget retry is
    /// charged to the trailing window.
    pub fn admit_retry(&mut self, attempt: u32, now: Time) -> Admission {
        if attempt == 0 || attempt > self.retry_limit() {
            return Admission::Deny;
        }
        match self.spec.kind {
            PolicyKind::None => Admission::Deny,
            PolicyKind::Legacy | PolicyKind::Standard => Admission::Allow,
            PolicyKind::Adaptive => {
                if self.tokens >= 1.0 {
                    self.tokens -= 1.0;
                    Admission::Allow
                } else {
                    Admission::Deny
                }
            }
            PolicyKind::Budget => {
                self.expire(now);
                let allowed = self.spec.budget_ratio * self.fresh.len() as f64;
                if (self.retries.len() + 1) as f64 <= allowed {
                    self.retries.push_back(now);
                    Admission::Allow
                } else {
                    Admission::Deny
                }
            }
        }
    }

    fn retry_limit(&self) -> u32 {
        self.spec.retry_limit()
    }

    /// Records a fresh request; only the budget policy keeps these.
    pub fn on_fresh(&mut self, now: Time) {
        if self.spec.kind == PolicyKind::Budget {
            self.fresh.push_back(now);
            self.expire(now);
        }
    }

    /// Success notification, delivered synchronously at completion.
    pub fn on_success(&mut self) {
        if self.spec.kind == PolicyKind::Adaptive {
            self.tokens = (self.tokens + self.spec.bucket_refill_per_success).min(self.spec.bucket_capacity);
        }
    }

    fn expire(&mut self, now: Time) {
        let cutoff = now - self.spec.budget_window;
        while self.fresh.front().is_some_and(|&t| t <= cutoff) {
            self.fresh.pop_front();
        }
        while self.retries.front().is_some_and(|&t| t <= cutoff) {
            self.retries.pop_front();
        }
    }
}
