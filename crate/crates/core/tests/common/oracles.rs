// SPDX-License-Identifier: Apache-2.0

//! Reference computations that do not share code paths with the library.

/// Result of iterating the overload balance equations to a fixed point.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub p_tilde: f64,
    pub offered_rate: f64,
    /// `stage_rates[i]` for `i = 0..=k`.
    pub stage_rates: Vec<f64>,
    pub iterations: usize,
}

/// Damped fixed-point iteration on `lambda_i = p * lambda_{i-1}`,
/// `Lambda = lambda + sum_{i=1}^{k-1} lambda_i`, `p = 1 - mu / Lambda`.
///
/// Damping 0.5, stop when the update is below 1e-12, at most 1e6 iterations.
pub fn damped_fixed_point(lambda: f64, mu: f64, k: u32) -> FixedPoint {
    const DAMPING: f64 = 0.5;
    const TOL: f64 = 1e-12;
    const MAX_ITER: usize = 1_000_000;

    let stages = |p: f64| {
        let mut rates = Vec::with_capacity(k as usize + 1);
        let mut current = lambda;
        rates.push(current);
        for _ in 0..k {
            current *= p;
            rates.push(current);
        }
        rates
    };

    let mut p = 0.5;
    let mut iterations = 0;
    loop {
        let rates = stages(p);
        let offered: f64 = rates[..k as usize].iter().sum();
        let target = 1.0 - mu / offered;
        let next = (1.0 - DAMPING) * p + DAMPING * target;
        iterations += 1;
        let step = (next - p).abs();
        p = next;
        if step < TOL || iterations >= MAX_ITER {
            break;
        }
    }
    let stage_rates = stages(p);
    let offered_rate = stage_rates[..k as usize].iter().sum();
    FixedPoint { p_tilde: p, offered_rate, stage_rates, iterations }
}

/// Stationary blocking probability of a birth–death chain on `0..=m` with
/// birth rate `rho` and death rate 1, from the balance equations.
pub fn birth_death_blocking(rho: f64, m: u32) -> f64 {
    let mut weights = vec![1.0f64];
    for n in 1..=m as usize {
        let prev = weights[n - 1];
        weights.push(prev * rho);
    }
    let total: f64 = weights.iter().sum();
    weights[m as usize] / total
}

/// Pseudo-code form of the rejection-based controller, written as a flat
/// loop over the measurements. Returns the mode after every measurement.
pub fn reference_controller(values: &[f64], threshold: f64, interval: u32) -> Vec<bool> {
    let mut consecutive_low = 0u32;
    let mut consecutive_high = 0u32;
    let mut retries = false;
    let mut out = Vec::with_capacity(values.len());
    for &failures in values {
        if failures < threshold {
            consecutive_low += 1;
            consecutive_high = 0;
        } else if failures > threshold {
            consecutive_high += 1;
            consecutive_low = 0;
        } else {
            consecutive_low = 0;
            consecutive_high = 0;
        }
        if consecutive_low >= interval {
            retries = true;
        } else if consecutive_high >= interval {
            retries = false;
        }
        out.push(retries);
    }
    out
}

/// Expected total backoff wait by explicit summation over the truncated
/// geometric law: `Pr[X=i] = p^i (1-p)` for `i < k`, `Pr[X=k] = p^k`, each
/// weighted by the cumulative wait `1 + 2 + ... + 2^(i-1)`.
pub fn direct_backoff_sum(p_tilde: f64, k: u32) -> f64 {
    let mut total = 0.0;
    let mut reach = 1.0;
    let mut wait = 0.0;
    let mut step = 1.0;
    for i in 0..=k {
        let pr = if i < k { reach * (1.0 - p_tilde) } else { reach };
        total += pr * wait;
        reach *= p_tilde;
        wait += step;
        step *= 2.0;
    }
    total
}
