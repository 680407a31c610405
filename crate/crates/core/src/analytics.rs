// SPDX-License-Identifier: Apache-2.0

//! Closed-form load, rejection and delay model for two services in tandem.
//!
//! Upstream receives fresh requests at rate `lambda` and forwards them to a
//! downstream service of capacity `mu`. Under overload (`lambda > mu`) every
//! attempt is rejected with the same probability `p_tilde`, a request makes at
//! most `k` attempts, and the `k`-th rejection is final. Under stable load the
//! downstream service is an M/M/1/m queue and rejection is the blocking
//! probability of that queue.
//!
//! All functions are pure.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Arrival rate, downstream capacity and per-request attempt limit of an
/// overloaded tandem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverloadModel {
    pub lambda: f64,
    pub mu: f64,
    /// Attempts per request counted the way the geometric offered-rate sum
    /// counts them: stages `0..k` reach downstream, stage `k` is the
    /// permanently failed stream.
    pub k: u32,
}

impl OverloadModel {
    pub fn new(lambda: f64, mu: f64, k: u32) -> Result<Self> {
        let model = Self { lambda, mu, k };
        model.validate()?;
        Ok(model)
    }

    pub fn rho(&self) -> f64 {
        self.lambda / self.mu
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return domain(format!("lambda must be > 0, got {}", self.lambda));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return domain(format!("mu must be > 0, got {}", self.mu));
        }
        Ok(())
    }

    fn validate_overload(&self) -> Result<()> {
        self.validate()?;
        if self.lambda <= self.mu {
            return domain(format!("overload formulas need lambda > mu (rho = {}); use the M/M/1/m path", self.rho()));
        }
        if self.k == 0 {
            return domain("overload formulas need k >= 1");
        }
        Ok(())
    }
}

/// Every overload quantity for one [`OverloadModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticSolution {
    pub p_tilde: f64,
    pub p: f64,
    pub big_lambda: f64,
    /// `lambda_i[i]` for `i = 0..=k`; index 0 is the fresh stream.
    pub lambda_i: Vec<f64>,
    /// Expected backoff delay in base units, `E[T](p_tilde, k)`.
    pub expected_delay: f64,
}

pub fn solve_overload(model: &OverloadModel) -> Result<AnalyticSolution> {
    let p_tilde = overload_rejection_prob(model)?;
    let lambda_i = (0..=model.k).map(|i| model.lambda * p_tilde.powi(i as i32)).collect();
    Ok(AnalyticSolution {
        p_tilde,
        p: 1.0 - p_tilde,
        big_lambda: overload_offered_rate(model)?,
        lambda_i,
        expected_delay: expected_backoff_delay(p_tilde, model.k)?,
    })
}

/// `p_tilde = (1 - mu/lambda)^(1/k)`.
pub fn overload_rejection_prob(model: &OverloadModel) -> Result<f64> {
    model.validate_overload()?;
    Ok((1.0 - model.mu / model.lambda).powf(1.0 / f64::from(model.k)))
}

/// Total rate reaching downstream, `lambda (1 - p^k) / (1 - p)`.
pub fn overload_offered_rate(model: &OverloadModel) -> Result<f64> {
    let p = overload_rejection_prob(model)?;
    // p^k = 1 - mu/lambda exactly, which keeps mu/Lambda = 1 - p tight.
    let p_k = 1.0 - model.mu / model.lambda;
    Ok(model.lambda * (1.0 - p_k) / (1.0 - p))
}

/// Rate of requests in their `i`-th attempt, `lambda * p_tilde^i`.
pub fn retry_stage_rate(model: &OverloadModel, i: u32) -> Result<f64> {
    let p = overload_rejection_prob(model)?;
    if i > model.k {
        return Err(Error::Index { index: i, max: model.k });
    }
    if i == model.k {
        return Ok(model.lambda - model.mu);
    }
    Ok(model.lambda * p.powi(i as i32))
}

/// `Pr[X = i]` for `i = 0..=k`, where `X` is the number of retries a request
/// experiences when each attempt is rejected independently with `p_tilde`.
pub fn truncated_geometric_pmf(p_tilde: f64, k: u32) -> Result<Vec<f64>> {
    check_probability(p_tilde)?;
    let p = 1.0 - p_tilde;
    let mut pmf: Vec<f64> = (0..k).map(|i| p_tilde.powi(i as i32) * p).collect();
    pmf.push(p_tilde.powi(k as i32));
    Ok(pmf)
}

/// Expected total backoff wait of a request under exponential backoff, in
/// base units: `sum_i Pr[X = i] (2^i - 1)`.
///
/// Evaluated by direct summation so it stays exact at `p_tilde = 1/2` and
/// `p_tilde = 1`, where [`expected_backoff_delay_closed_form`] is singular.
pub fn expected_backoff_delay(p_tilde: f64, k: u32) -> Result<f64> {
    let pmf = truncated_geometric_pmf(p_tilde, k)?;
    Ok(pmf.iter().enumerate().map(|(i, pr)| pr * backoff_total_wait(i as u32)).sum())
}

/// Geometric-series form of [`expected_backoff_delay`]:
///
/// `p((2p~)^k - 1)/(2p~ - 1) - p(p~^k - 1)/(p~ - 1) + p~^k (2^k - 1)`.
///
/// Returns `None` at the removable singularities `p_tilde ∈ {1/2, 1}`.
pub fn expected_backoff_delay_closed_form(p_tilde: f64, k: u32) -> Option<f64> {
    if check_probability(p_tilde).is_err() || p_tilde == 0.5 || p_tilde == 1.0 {
        return None;
    }
    let p = 1.0 - p_tilde;
    let two_p = 2.0 * p_tilde;
    let kk = k as i32;
    let doubled = p * (two_p.powi(kk) - 1.0) / (two_p - 1.0);
    let plain = p * (p_tilde.powi(kk) - 1.0) / (p_tilde - 1.0);
    Some(doubled - plain + p_tilde.powi(kk) * backoff_total_wait(k))
}

/// `T_i = 1 + 2 + ... + 2^(i-1) = 2^i - 1`.
pub fn backoff_total_wait(retries: u32) -> f64 {
    2f64.powi(retries as i32) - 1.0
}

/// Load and buffer capacity of a stable M/M/1/m downstream service.
/// `m` counts every request in the system, including the one in service.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableLoadModel {
    pub rho: f64,
    pub m: u32,
}

/// Blocking probability `(1 - rho) rho^m / (1 - rho^(m+1))`.
///
/// At `rho = 1` the expression is 0/0; the branch returns its limit
/// `1/(m+1)` (all `m+1` states equally likely) so the function is continuous.
pub fn mm1m_rejection_prob(model: &StableLoadModel) -> Result<f64> {
    let StableLoadModel { rho, m } = *model;
    if !rho.is_finite() || rho < 0.0 {
        return domain(format!("rho must be >= 0, got {rho}"));
    }
    if m == 0 {
        return domain("buffer capacity m must be >= 1");
    }
    if rho == 1.0 {
        return Ok(1.0 / f64::from(m + 1));
    }
    let mi = m as i32;
    Ok((1.0 - rho) * rho.powi(mi) / (1.0 - rho.powi(mi + 1)))
}

/// One `rho` of the normalized retry curve. At `rho = 1` both one-sided values
/// are present because the two regime formulas do not meet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rho: f64,
    /// `k * p_tilde` with `p_tilde` the M/M/1/m blocking probability.
    pub stable: Option<f64>,
    /// `sum_{i=1}^{k-1} p_tilde^i` with the overload `p_tilde`.
    pub overload: Option<f64>,
}

impl CurvePoint {
    /// The curve value; at `rho = 1` the overload-side limit (zero) wins only if
    /// no stable value exists.
    pub fn value(&self) -> f64 {
        self.stable.or(self.overload).unwrap_or(f64::NAN)
    }
}

/// Retries per original request as a function of load.
pub fn normalized_retry_curve(rho_grid: &[f64], k: u32, m: u32) -> Result<Vec<CurvePoint>> {
    if k == 0 {
        return domain("normalized retry curve needs k >= 1");
    }
    rho_grid
        .iter()
        .map(|&rho| {
            if !(rho.is_finite() && rho > 0.0) {
                return domain(format!("rho must be > 0, got {rho}"));
            }
            let stable =
                if rho <= 1.0 { Some(f64::from(k) * mm1m_rejection_prob(&StableLoadModel { rho, m })?) } else { None };
            let overload = if rho >= 1.0 { Some(overload_retries_per_request(rho, k)) } else { None };
            Ok(CurvePoint { rho, stable, overload })
        })
        .collect()
}

fn overload_retries_per_request(rho: f64, k: u32) -> f64 {
    if rho <= 1.0 {
        return 0.0;
    }
    let p = (1.0 - 1.0 / rho).powf(1.0 / f64::from(k));
    (1..k).map(|i| p.powi(i as i32)).sum()
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        domain(format!("probability must lie in [0, 1], got {p}"))
    }
}

#[cfg(test)]
#[path = "../tests/common/oracles.rs"]
#[allow(dead_code)]
mod oracles;
