//! Scorers and the weighted search cost.

use crate::error::{check_width, Error, Result};
use crate::mask::HeadMask;
use crate::surrogate::SurrogateRegressor;

/// Anything that maps a mask of fixed width to a scaled value.
pub trait MaskScorer: Sync {
    fn width(&self) -> usize;

    /// Callers guarantee `s.len() == self.width()`.
    fn score(&self, s: &HeadMask) -> f64;
}

impl MaskScorer for SurrogateRegressor {
    fn width(&self) -> usize {
        self.input_width()
    }

    fn score(&self, s: &HeadMask) -> f64 {
        self.predict_unchecked(s)
    }
}

impl<T: MaskScorer + ?Sized> MaskScorer for &T {
    fn width(&self) -> usize {
        (**self).width()
    }

    fn score(&self, s: &HeadMask) -> f64 {
        (**self).score(s)
    }
}

/// Wraps a closure as a scorer.
pub struct FnScorer<F> {
    width: usize,
    f: F,
}

impl<F: Fn(&HeadMask) -> f64 + Sync> FnScorer<F> {
    pub fn new(width: usize, f: F) -> Self {
        Self { width, f }
    }
}

impl<F: Fn(&HeadMask) -> f64 + Sync> MaskScorer for FnScorer<F> {
    fn width(&self) -> usize {
        self.width
    }

    fn score(&self, s: &HeadMask) -> f64 {
        (self.f)(s)
    }
}

/// `epsilon * bias(s) + (1 - epsilon) * ppl(s)`.
///
/// At `epsilon == 1` the perplexity scorer is never called, and at
/// `epsilon == 0` the bias scorer is never called.
pub struct WeightedCost<'a> {
    bias: &'a dyn MaskScorer,
    ppl: &'a dyn MaskScorer,
    epsilon: f64,
}

impl<'a> WeightedCost<'a> {
    pub fn new(bias: &'a dyn MaskScorer, ppl: &'a dyn MaskScorer, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::config(format!("epsilon {epsilon} not in [0, 1]")));
        }
        check_width(bias.width(), ppl.width())?;
        Ok(Self { bias, ppl, epsilon })
    }

    pub fn width(&self) -> usize {
        self.bias.width()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    pub fn eval(&self, s: &HeadMask) -> f64 {
        if self.epsilon == 1.0 {
            self.bias.score(s)
        } else if self.epsilon == 0.0 {
            self.ppl.score(s)
        } else {
            self.epsilon * self.bias.score(s) + (1.0 - self.epsilon) * self.ppl.score(s)
        }
    }
}

/// Width-checked weighted cost of a single mask.
pub fn cost(
    s: &HeadMask,
    bias: &dyn MaskScorer,
    ppl: &dyn MaskScorer,
    epsilon: f64,
) -> Result<f64> {
    let weighted = WeightedCost::new(bias, ppl, epsilon)?;
    check_width(weighted.width(), s.len())?;
    Ok(weighted.eval(s))
}
