//! Logarithmic cooling, the acceptance rule, and initial temperature estimation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cost::WeightedCost;
use crate::error::{Error, Result};
use crate::mask::{generate_neighbor, HeadMask, WeightBounds};

/// `t0 / ln(2 + i)`.
#[inline]
pub fn temperature(t0: f64, i: u64) -> f64 {
    log_schedule(t0, i as f64)
}

#[inline]
fn log_schedule(t0: f64, x: f64) -> f64 {
    t0 / (2.0 + x).ln()
}

/// Downhill moves are always taken; uphill ones iff `u < exp(-delta_e / t)`.
#[inline]
pub fn accept(delta_e: f64, t: f64, u: f64) -> bool {
    delta_e <= 0.0 || u < (-delta_e / t).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T0Settings {
    /// Target acceptance ratio for uphill moves.
    pub target: f64,
    /// Number of uphill transitions to collect.
    pub sample_size: usize,
}

impl Default for T0Settings {
    fn default() -> Self {
        Self {
            target: 0.8,
            sample_size: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T0Estimate {
    pub t0: f64,
    /// Uphill transitions `(E_before, E_after)` the estimate was fitted on.
    pub transitions: Vec<(f64, f64)>,
    /// True when no uphill move was found and the fallback of 1.0 was used.
    pub fallback: bool,
}

pub const T0_FALLBACK: f64 = 1.0;
const T0_TOLERANCE: f64 = 1e-3;
const T0_MAX_ITERATIONS: usize = 100;

/// Acceptance ratio `sum exp(-E_after/T) / sum exp(-E_before/T)` over uphill transitions.
pub fn acceptance_ratio(transitions: &[(f64, f64)], t: f64) -> f64 {
    let shift = transitions
        .iter()
        .map(|&(lo, _)| lo)
        .fold(f64::INFINITY, f64::min);
    let mut num = 0.0;
    let mut den = 0.0;
    for &(lo, hi) in transitions {
        num += (-(hi - shift) / t).exp();
        den += (-(lo - shift) / t).exp();
    }
    num / den
}

/// Fixed-point iteration `T <- T * ln(chi(T)) / ln(target)`.
pub fn solve_t0(transitions: &[(f64, f64)], target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::config(format!(
            "target acceptance ratio {target} not in (0, 1)"
        )));
    }
    if transitions.is_empty() {
        return Err(Error::data("no uphill transitions"));
    }
    if transitions
        .iter()
        .any(|&(lo, hi)| !lo.is_finite() || !hi.is_finite() || hi <= lo)
    {
        return Err(Error::data(
            "transitions must be finite and strictly uphill",
        ));
    }
    let mean_delta =
        transitions.iter().map(|&(lo, hi)| hi - lo).sum::<f64>() / transitions.len() as f64;
    let ln_target = target.ln();
    let mut t = -mean_delta / ln_target;
    for _ in 0..T0_MAX_ITERATIONS {
        let chi = acceptance_ratio(transitions, t);
        if (chi - target).abs() <= T0_TOLERANCE {
            break;
        }
        let next = t * chi.ln() / ln_target;
        if !(next.is_finite() && next > 0.0) {
            break;
        }
        t = next;
    }
    Ok(t)
}

/// Collects uphill transitions from a random walk starting at `s0`, then
/// solves for the temperature whose acceptance ratio matches the target.
pub fn estimate_t0<R: Rng + ?Sized>(
    cost: &WeightedCost<'_>,
    s0: &HeadMask,
    bounds: WeightBounds,
    settings: T0Settings,
    rng: &mut R,
) -> Result<T0Estimate> {
    if !(settings.target > 0.0 && settings.target < 1.0) {
        return Err(Error::config(format!(
            "target acceptance ratio {} not in (0, 1)",
            settings.target
        )));
    }
    let mut transitions = Vec::with_capacity(settings.sample_size);
    let mut current = s0.clone();
    let mut current_cost = cost.eval(&current);
    let max_attempts = settings.sample_size.saturating_mul(100);
    let mut attempts = 0;
    while transitions.len() < settings.sample_size && attempts < max_attempts {
        attempts += 1;
        let next = generate_neighbor(&current, bounds, rng)?;
        let next_cost = cost.eval(&next);
        if next_cost > current_cost {
            transitions.push((current_cost, next_cost));
        }
        current = next;
        current_cost = next_cost;
    }
    if transitions.is_empty() {
        log::warn!("no uphill move in {attempts} random steps; cost landscape looks flat, using T0 = {T0_FALLBACK}");
        return Ok(T0Estimate {
            t0: T0_FALLBACK,
            transitions,
            fallback: true,
        });
    }
    let t0 = solve_t0(&transitions, settings.target)?;
    Ok(T0Estimate {
        t0,
        transitions,
        fallback: false,
    })
}
