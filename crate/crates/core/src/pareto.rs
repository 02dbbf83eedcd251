//! Nondominated (bias, perplexity) points, both minimized.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint<T> {
    pub bias: f64,
    pub ppl: f64,
    pub item: T,
}

/// `a` dominates `b` when it is no worse in both and better in one.
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

/// Incrementally maintained frontier, sorted by increasing bias (and so by
/// strictly decreasing perplexity). A point equal to one already present is
/// dropped, so the first of several identical points wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frontier<T> {
    points: Vec<FrontierPoint<T>>,
}

impl<T> Default for Frontier<T> {
    fn default() -> Self {
        Self { points: Vec::new() }
    }
}

impl<T> Frontier<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns whether the point was kept.
    pub fn insert(&mut self, bias: f64, ppl: f64, item: T) -> bool {
        let idx = self.points.partition_point(|q| q.bias <= bias);
        if idx > 0 && self.points[idx - 1].ppl <= ppl {
            return false;
        }
        let start = if idx > 0 && self.points[idx - 1].bias == bias {
            idx - 1
        } else {
            idx
        };
        let end = start + self.points[start..].partition_point(|q| q.ppl >= ppl);
        self.points
            .splice(start..end, [FrontierPoint { bias, ppl, item }]);
        true
    }

    pub fn extend(&mut self, other: Frontier<T>) {
        for p in other.points {
            self.insert(p.bias, p.ppl, p.item);
        }
    }

    pub fn points(&self) -> &[FrontierPoint<T>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<FrontierPoint<T>> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
