//! Head masks and the bounded Hamming neighborhood explored by the annealer.
//!
//! A [`HeadMask`] is a vertex of the `N`-dimensional Boolean hypercube: bit `i`
//! set means head `i` is pruned. Heads are flattened layer-major, head-minor,
//! and the text form prints head 0 first.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_width, Error, Result};

const WORD: usize = 64;

/// Fixed-length bit vector of pruned heads.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HeadMask {
    words: Vec<u64>,
    len: usize,
}

impl HeadMask {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(WORD)],
            len,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut mask = Self::zeros(len);
        for i in 0..len {
            mask.set(i, true);
        }
        mask
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut mask = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                mask.set(i, true);
            }
        }
        mask
    }

    /// Builds a mask of width `len` with the given head indices set.
    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut mask = Self::zeros(len);
        for i in indices {
            if i >= len {
                return Err(Error::data(format!(
                    "head index {i} out of range for {len} heads"
                )));
            }
            mask.set(i, true);
        }
        Ok(mask)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(
            i < self.len,
            "bit {i} out of range for mask of {}",
            self.len
        );
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(
            i < self.len,
            "bit {i} out of range for mask of {}",
            self.len
        );
        let bit = 1u64 << (i % WORD);
        if value {
            self.words[i / WORD] |= bit;
        } else {
            self.words[i / WORD] &= !bit;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(
            i < self.len,
            "bit {i} out of range for mask of {}",
            self.len
        );
        self.words[i / WORD] ^= 1u64 << (i % WORD);
    }

    /// Number of pruned heads.
    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn hamming_distance(&self, other: &HeadMask) -> Result<usize> {
        check_width(self.len, other.len)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// True when no head is set in both masks.
    pub fn is_disjoint(&self, other: &HeadMask) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & b == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Indices of set bits in ascending order.
    pub fn ones_iter(&self) -> OnesIter<'_> {
        OnesIter {
            words: &self.words,
            word_idx: 0,
            current: self.words.first().copied().unwrap_or(0),
        }
    }

    /// Index of the `k`-th set bit (0-based), if any.
    pub fn nth_one(&self, k: usize) -> Option<usize> {
        let mut remaining = k;
        for (w, &word) in self.words.iter().enumerate() {
            let count = word.count_ones() as usize;
            if remaining < count {
                return Some(w * WORD + select_in_word(word, remaining));
            }
            remaining -= count;
        }
        None
    }

    /// Index of the `k`-th clear bit (0-based), if any.
    pub fn nth_zero(&self, k: usize) -> Option<usize> {
        let mut remaining = k;
        for (w, &word) in self.words.iter().enumerate() {
            let valid = (self.len - w * WORD).min(WORD);
            let inverted = if valid == WORD {
                !word
            } else {
                !word & ((1u64 << valid) - 1)
            };
            let count = inverted.count_ones() as usize;
            if remaining < count {
                return Some(w * WORD + select_in_word(inverted, remaining));
            }
            remaining -= count;
        }
        None
    }

    pub fn to_bit_string(&self) -> String {
        self.iter().map(|b| if b { '1' } else { '0' }).collect()
    }
}

fn select_in_word(mut word: u64, k: usize) -> usize {
    for _ in 0..k {
        word &= word - 1;
    }
    word.trailing_zeros() as usize
}

pub struct OnesIter<'a> {
    words: &'a [u64],
    word_idx: usize,
    current: u64,
}

impl Iterator for OnesIter<'_> {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        loop {
            if self.current != 0 {
                let bit = self.current.trailing_zeros() as usize;
                self.current &= self.current - 1;
                return Some(self.word_idx * WORD + bit);
            }
            self.word_idx += 1;
            if self.word_idx >= self.words.len() {
                return None;
            }
            self.current = self.words[self.word_idx];
        }
    }
}

impl fmt::Display for HeadMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bit_string())
    }
}

impl fmt::Debug for HeadMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HeadMask({})", self.to_bit_string())
    }
}

impl FromStr for HeadMask {
    type Err = Error;

    /// Accepts `"0101"` or the comma-separated `"0,1,0,1"` form.
    fn from_str(s: &str) -> Result<Self> {
        let mut bits = Vec::with_capacity(s.len());
        for c in s.chars() {
            match c {
                '0' => bits.push(false),
                '1' => bits.push(true),
                ',' | ' ' | '\t' => {}
                other => {
                    return Err(Error::data(format!(
                        "unexpected character {other:?} in head mask"
                    )))
                }
            }
        }
        if bits.is_empty() {
            return Err(Error::data("empty head mask"));
        }
        Ok(Self::from_bits(&bits))
    }
}

impl Serialize for HeadMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_bit_string())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MaskRepr {
    Text(String),
    Ints(Vec<u8>),
    Bools(Vec<bool>),
}

impl<'de> Deserialize<'de> for HeadMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        match MaskRepr::deserialize(deserializer)? {
            MaskRepr::Text(s) => s.parse().map_err(D::Error::custom),
            MaskRepr::Ints(v) => {
                if let Some(bad) = v.iter().find(|&&x| x > 1) {
                    return Err(D::Error::custom(format!("mask entry {bad} is not 0 or 1")));
                }
                Ok(HeadMask::from_bits(
                    &v.iter().map(|&x| x == 1).collect::<Vec<_>>(),
                ))
            }
            MaskRepr::Bools(v) => Ok(HeadMask::from_bits(&v)),
        }
    }
}

pub fn hamming_distance(a: &HeadMask, b: &HeadMask) -> Result<usize> {
    a.hamming_distance(b)
}

pub fn hamming_weight(s: &HeadMask) -> usize {
    s.weight()
}

/// Inclusive bounds `[lower, upper]` on the number of pruned heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightBounds {
    lower: usize,
    upper: usize,
}

/// How neighbors are generated for a given set of bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neighborhood {
    /// Flip one bit, keeping the weight inside the bounds.
    SingleFlip,
    /// Clear one set bit and set one clear bit. Used when `lower == upper`,
    /// where no single flip can keep the weight fixed.
    Swap,
}

impl WeightBounds {
    pub fn new(lower: usize, upper: usize) -> Result<Self> {
        if lower > upper {
            return Err(Error::config(format!(
                "lower bound {lower} exceeds upper bound {upper}"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// Bounds `[0, n]`: the whole hypercube.
    pub fn unbounded(n: usize) -> Self {
        Self { lower: 0, upper: n }
    }

    /// Upper bound `ceil(eta * n)`, as used by the pruning-ratio convenience flags.
    pub fn from_ratio(lower: usize, eta: f64, n: usize) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::config(format!("pruning ratio {eta} not in (0, 1]")));
        }
        let upper = ((eta * n as f64) - 1e-9).ceil().max(0.0) as usize;
        Self::new(lower, upper.min(n))
    }

    pub fn lower(&self) -> usize {
        self.lower
    }

    pub fn upper(&self) -> usize {
        self.upper
    }

    pub fn contains(&self, weight: usize) -> bool {
        (self.lower..=self.upper).contains(&weight)
    }

    pub fn validate_for(&self, n: usize) -> Result<()> {
        if self.upper > n {
            return Err(Error::config(format!(
                "upper bound {} exceeds head count {n}",
                self.upper
            )));
        }
        Ok(())
    }

    pub fn neighborhood(&self) -> Neighborhood {
        if self.lower == self.upper {
            Neighborhood::Swap
        } else {
            Neighborhood::SingleFlip
        }
    }
}

/// Draws a mask with weight `k ~ U{lower..=upper}` and `k` distinct heads chosen uniformly.
pub fn random_state<R: Rng + ?Sized>(
    n: usize,
    bounds: WeightBounds,
    rng: &mut R,
) -> Result<HeadMask> {
    bounds.validate_for(n)?;
    let k = rng.random_range(bounds.lower..=bounds.upper);
    let picked = index::sample(rng, n, k);
    HeadMask::from_indices(n, picked.iter())
}

/// Samples uniformly from the bounded neighborhood of `s`.
///
/// In [`Neighborhood::SingleFlip`] mode the result is at Hamming distance 1;
/// in [`Neighborhood::Swap`] mode (equal bounds) it is at distance 2 with the
/// weight unchanged.
pub fn generate_neighbor<R: Rng + ?Sized>(
    s: &HeadMask,
    bounds: WeightBounds,
    rng: &mut R,
) -> Result<HeadMask> {
    let n = s.len();
    bounds.validate_for(n)?;
    let weight = s.weight();
    if !bounds.contains(weight) {
        return Err(Error::validation(format!(
            "state weight {weight} outside bounds [{}, {}]",
            bounds.lower, bounds.upper
        )));
    }
    let mut next = s.clone();
    match bounds.neighborhood() {
        Neighborhood::SingleFlip => {
            let settable = if weight < bounds.upper { n - weight } else { 0 };
            let clearable = if weight > bounds.lower { weight } else { 0 };
            let total = settable + clearable;
            if total == 0 {
                return Err(Error::Neighborhood(format!(
                    "no legal single flip from weight {weight}"
                )));
            }
            let r = rng.random_range(0..total);
            let pos = if r < settable {
                s.nth_zero(r)
            } else {
                s.nth_one(r - settable)
            };
            next.flip(pos.expect("flip index within counted range"));
        }
        Neighborhood::Swap => {
            if weight == 0 || weight == n {
                return Err(Error::Neighborhood(format!(
                    "no weight-preserving swap from weight {weight} of {n}"
                )));
            }
            let clear = s.nth_one(rng.random_range(0..weight)).expect("set bit");
            let set = s
                .nth_zero(rng.random_range(0..n - weight))
                .expect("clear bit");
            next.flip(clear);
            next.flip(set);
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::{BTreeSet, HashMap};

    fn mask(s: &str) -> HeadMask {
        s.parse().unwrap()
    }

    #[test]
    fn hamming_basics() {
        assert_eq!(hamming_distance(&mask("0101"), &mask("0001")).unwrap(), 1);
        let x = mask("110010");
        assert_eq!(hamming_distance(&x, &x).unwrap(), 0);
        assert!(matches!(
            hamming_distance(&mask("01"), &mask("011")),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn weights() {
        assert_eq!(hamming_weight(&HeadMask::zeros(30)), 0);
        assert_eq!(hamming_weight(&HeadMask::ones(12)), 12);
        // first sample configuration shown for the 1024-head model prunes only head 1
        let first = HeadMask::from_indices(1024, [1]).unwrap();
        assert_eq!(hamming_weight(&first), 1);
    }

    #[test]
    fn text_forms() {
        let m = mask("0,1,0,0,1");
        assert_eq!(m.to_string(), "01001");
        assert_eq!(mask("01001"), m);
        assert!("01a".parse::<HeadMask>().is_err());
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, "\"01001\"");
        let from_list: HeadMask = serde_json::from_str("[0,1,0,0,1]").unwrap();
        assert_eq!(from_list, m);
        let from_bools: HeadMask = serde_json::from_str("[false,true,false,false,true]").unwrap();
        assert_eq!(from_bools, m);
        assert!(serde_json::from_str::<HeadMask>("[0,2]").is_err());
    }

    #[test]
    fn nth_selectors_cross_word_boundaries() {
        let m = HeadMask::from_indices(130, [0, 63, 64, 100, 129]).unwrap();
        let ones: Vec<_> = (0..5).map(|k| m.nth_one(k).unwrap()).collect();
        assert_eq!(ones, vec![0, 63, 64, 100, 129]);
        assert_eq!(m.nth_one(5), None);
        let zeros: Vec<_> = (0..125).map(|k| m.nth_zero(k).unwrap()).collect();
        let expected: Vec<_> = (0..130).filter(|i| !m.get(*i)).collect();
        assert_eq!(zeros, expected);
        assert_eq!(m.nth_zero(125), None);
        assert_eq!(m.ones_iter().collect::<Vec<_>>(), vec![0, 63, 64, 100, 129]);
    }

    #[test]
    fn random_state_forced_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_state(8, WeightBounds::new(3, 3).unwrap(), &mut rng).unwrap();
        assert_eq!(s.weight(), 3);
        let z = random_state(8, WeightBounds::new(0, 0).unwrap(), &mut rng).unwrap();
        assert_eq!(z, HeadMask::zeros(8));
        assert!(random_state(4, WeightBounds::new(1, 5).unwrap(), &mut rng).is_err());
        assert!(WeightBounds::new(3, 2).is_err());
    }

    #[test]
    fn random_state_weight_histogram_is_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bounds = WeightBounds::new(2, 4).unwrap();
        let draws = 10_000;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            let s = random_state(10, bounds, &mut rng).unwrap();
            counts[s.weight() - 2] += 1;
        }
        let expected = draws as f64 / 3.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let critical = ChiSquared::new(2.0).unwrap().inverse_cdf(0.99);
        assert!(
            chi2 < critical,
            "chi2 {chi2} >= {critical}, counts {counts:?}"
        );
    }

    #[test]
    fn neighbor_of_empty_mask_is_uniform_over_singletons() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bounds = WeightBounds::new(0, 1).unwrap();
        let s = HeadMask::zeros(3);
        let mut freq: HashMap<String, usize> = HashMap::new();
        let draws = 30_000;
        for _ in 0..draws {
            let t = generate_neighbor(&s, bounds, &mut rng).unwrap();
            *freq.entry(t.to_string()).or_default() += 1;
        }
        assert_eq!(freq.len(), 3);
        for key in ["100", "010", "001"] {
            let p = freq[key] as f64 / draws as f64;
            // 4 sigma of a binomial proportion with p = 1/3
            assert!(
                (p - 1.0 / 3.0).abs() < 4.0 * (2.0f64 / 9.0 / draws as f64).sqrt(),
                "{key}: {p}"
            );
        }
    }

    #[test]
    fn neighbor_at_upper_bound_clears_a_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bounds = WeightBounds::new(0, 3).unwrap();
        let s = mask("10110000");
        for _ in 0..200 {
            let t = generate_neighbor(&s, bounds, &mut rng).unwrap();
            assert_eq!(t.weight(), 2);
        }
    }

    /// Independent enumeration of the bounded neighborhood by trying every flip.
    fn brute_force_neighborhood(s: &HeadMask, bounds: WeightBounds) -> BTreeSet<HeadMask> {
        (0..s.len())
            .map(|i| {
                let mut t = s.clone();
                t.flip(i);
                t
            })
            .filter(|t| bounds.contains(t.weight()))
            .collect()
    }

    #[test]
    fn emitted_neighbors_are_members_of_the_enumerated_neighborhood() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for bits in 0u32..64 {
            let s = HeadMask::from_bits(&(0..6).map(|i| bits >> i & 1 == 1).collect::<Vec<_>>());
            for (lo, hi) in [(0, 6), (1, 3), (2, 4), (0, 2)] {
                let bounds = WeightBounds::new(lo, hi).unwrap();
                if !bounds.contains(s.weight()) {
                    continue;
                }
                let legal = brute_force_neighborhood(&s, bounds);
                let mut seen = BTreeSet::new();
                for _ in 0..200 {
                    let t = generate_neighbor(&s, bounds, &mut rng).unwrap();
                    assert!(legal.contains(&t), "{s} -> {t} not in neighborhood");
                    seen.insert(t);
                }
                assert_eq!(seen, legal, "not every neighbor of {s} was reachable");
            }
        }
    }

    #[test]
    fn swap_mode_preserves_weight_and_errors_when_stuck() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bounds = WeightBounds::new(3, 3).unwrap();
        assert_eq!(bounds.neighborhood(), Neighborhood::Swap);
        let s = mask("1101000000");
        for _ in 0..100 {
            let t = generate_neighbor(&s, bounds, &mut rng).unwrap();
            assert_eq!(t.weight(), 3);
            assert_eq!(t.hamming_distance(&s).unwrap(), 2);
        }
        let full = WeightBounds::new(4, 4).unwrap();
        assert!(matches!(
            generate_neighbor(&HeadMask::ones(4), full, &mut rng),
            Err(Error::Neighborhood(_))
        ));
    }

    #[test]
    fn neighbor_rejects_out_of_bounds_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bounds = WeightBounds::new(2, 3).unwrap();
        assert!(generate_neighbor(&mask("0000"), bounds, &mut rng).is_err());
    }

    #[test]
    fn ratio_bounds_use_ceiling() {
        let b = WeightBounds::from_ratio(2, 0.1, 144).unwrap();
        assert_eq!(b.upper(), 15);
        let b = WeightBounds::from_ratio(0, 0.2, 10).unwrap();
        assert_eq!(b.upper(), 2);
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
        (1usize..200).prop_flat_map(|n| {
            (
                proptest::collection::vec(any::<bool>(), n),
                proptest::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn hamming_matches_positionwise_loop((a, b) in arb_pair()) {
            let expected = a.iter().zip(&b).filter(|(x, y)| x != y).count();
            let got = HeadMask::from_bits(&a).hamming_distance(&HeadMask::from_bits(&b)).unwrap();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn text_round_trip(bits in proptest::collection::vec(any::<bool>(), 1..300)) {
            let m = HeadMask::from_bits(&bits);
            prop_assert_eq!(m.to_string().parse::<HeadMask>().unwrap(), m);
        }

        #[test]
        fn bounds_never_violated(n in 1usize..80, lo in 0usize..80, span in 0usize..80, seed in any::<u64>()) {
            let lo = lo.min(n);
            let hi = (lo + span).min(n);
            let bounds = WeightBounds::new(lo, hi).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = random_state(n, bounds, &mut rng).unwrap();
            prop_assert!(bounds.contains(s.weight()));
            for _ in 0..50 {
                match generate_neighbor(&s, bounds, &mut rng) {
                    Ok(t) => {
                        prop_assert!(bounds.contains(t.weight()));
                        let d = t.hamming_distance(&s).unwrap();
                        match bounds.neighborhood() {
                            Neighborhood::SingleFlip => prop_assert_eq!(d, 1),
                            Neighborhood::Swap => {
                                prop_assert_eq!(d, 2);
                                prop_assert_eq!(t.weight(), s.weight());
                            }
                        }
                        s = t;
                    }
                    Err(Error::Neighborhood(_)) => {
                        prop_assert!(lo == hi && (s.weight() == 0 || s.weight() == n));
                        break;
                    }
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                }
            }
        }

        #[test]
        fn seeded_generation_is_deterministic(seed in any::<u64>()) {
            let bounds = WeightBounds::new(1, 5).unwrap();
            let run = |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let s = random_state(40, bounds, &mut rng).unwrap();
                let t = generate_neighbor(&s, bounds, &mut rng).unwrap();
                (s, t)
            };
            prop_assert_eq!(run(seed), run(seed));
        }
    }
}
