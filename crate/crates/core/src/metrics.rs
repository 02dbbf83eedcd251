//! Grouped-toxicity bias, corpus perplexity and stratified subsampling.
//!
//! Toxicity scores and per-sequence losses arrive pre-computed; nothing here
//! looks at text.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToxicityRecord {
    pub prompt_id: String,
    pub subgroup: String,
    pub toxicity: f64,
}

/// Scored prompts of one bias group (for example "gender"), labelled by subgroup.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptToxicityTable {
    group: String,
    rows: Vec<ToxicityRecord>,
    declared: Vec<String>,
}

impl PromptToxicityTable {
    pub fn new(group: impl Into<String>, rows: Vec<ToxicityRecord>) -> Result<Self> {
        for r in &rows {
            if !(0.0..=1.0).contains(&r.toxicity) {
                return Err(Error::validation(format!(
                    "toxicity {} of prompt {:?} outside [0, 1]",
                    r.toxicity, r.prompt_id
                )));
            }
        }
        Ok(Self {
            group: group.into(),
            rows,
            declared: Vec::new(),
        })
    }

    pub fn from_path(group: impl Into<String>, path: &Path) -> Result<Self> {
        Self::new(group, io::read_records(path)?)
    }

    /// Declares subgroups that must be present; [`compute_bias`] fails on any
    /// declared subgroup without rows.
    pub fn with_subgroups<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.declared.extend(names.into_iter().map(Into::into));
        self
    }

    pub fn group(&self) -> &str {
        &self.group
    }

    pub fn rows(&self) -> &[ToxicityRecord] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row count per subgroup, declared subgroups included with zero.
    pub fn subgroup_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> =
            self.declared.iter().map(|g| (g.clone(), 0)).collect();
        for r in &self.rows {
            *counts.entry(r.subgroup.clone()).or_default() += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub group: String,
    /// Mean toxicity of each subgroup.
    pub per_subgroup: BTreeMap<String, f64>,
    /// Unweighted mean of the subgroup toxicities.
    pub group_mean: f64,
    /// Prompt-weighted mean toxicity. Reported next to `bias` because a low
    /// average toxicity says nothing about the spread across subgroups.
    pub mean_toxicity: f64,
    /// Sum over subgroups of `|group_mean - subgroup mean|`.
    pub bias: f64,
}

pub fn compute_bias(table: &PromptToxicityTable) -> Result<BiasReport> {
    if table.is_empty() {
        return Err(Error::data("toxicity table has no rows"));
    }
    let mut sums: BTreeMap<String, (f64, usize)> = table
        .declared
        .iter()
        .map(|g| (g.clone(), (0.0, 0)))
        .collect();
    for r in &table.rows {
        let e = sums.entry(r.subgroup.clone()).or_insert((0.0, 0));
        e.0 += r.toxicity;
        e.1 += 1;
    }
    let mut per_subgroup = BTreeMap::new();
    for (g, (sum, count)) in sums {
        if count == 0 {
            return Err(Error::data(format!("subgroup {g:?} has no prompts")));
        }
        per_subgroup.insert(g, sum / count as f64);
    }
    let group_mean = per_subgroup.values().sum::<f64>() / per_subgroup.len() as f64;
    let bias = per_subgroup.values().map(|t| (group_mean - t).abs()).sum();
    let mean_toxicity =
        table.rows.iter().map(|r| r.toxicity).sum::<f64>() / table.rows.len() as f64;
    Ok(BiasReport {
        group: table.group.clone(),
        per_subgroup,
        group_mean,
        mean_toxicity,
        bias,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceLoss {
    pub sequence_id: String,
    /// Mean negative log-likelihood per token, in nats.
    pub mean_nll: f64,
    pub token_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLossTable {
    rows: Vec<SequenceLoss>,
}

impl SequenceLossTable {
    pub fn new(rows: Vec<SequenceLoss>) -> Result<Self> {
        for r in &rows {
            if !r.mean_nll.is_finite() || r.mean_nll < 0.0 {
                return Err(Error::validation(format!(
                    "sequence {:?} has invalid mean NLL {}",
                    r.sequence_id, r.mean_nll
                )));
            }
            if r.token_count == 0 {
                return Err(Error::validation(format!(
                    "sequence {:?} has zero tokens",
                    r.sequence_id
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::new(io::read_records(path)?)
    }

    pub fn rows(&self) -> &[SequenceLoss] {
        &self.rows
    }
}

/// Token-weighted corpus perplexity: `exp(sum(nll_i * n_i) / sum(n_i))`.
pub fn compute_perplexity(table: &SequenceLossTable) -> Result<f64> {
    let tokens: u64 = table.rows.iter().map(|r| r.token_count).sum();
    if tokens == 0 {
        return Err(Error::data("loss table has no tokens"));
    }
    let total: f64 = table
        .rows
        .iter()
        .map(|r| r.mean_nll * r.token_count as f64)
        .sum();
    Ok((total / tokens as f64).exp())
}

/// Draws `fraction` of the prompts while keeping every subgroup's share.
///
/// The total `K = round(fraction * |D|)` is apportioned by largest remainder
/// on the quotas `K * |D_g| / |D|`, so each subgroup lands within one row of
/// its exact share. Rows inside a subgroup are drawn without replacement and
/// the output order is shuffled.
pub fn stratified_subsample<R: Rng + ?Sized>(
    table: &PromptToxicityTable,
    fraction: f64,
    rng: &mut R,
) -> Result<PromptToxicityTable> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!("fraction {fraction} not in (0, 1]")));
    }
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in table.rows.iter().enumerate() {
        by_group.entry(r.subgroup.as_str()).or_default().push(i);
    }
    for g in &table.declared {
        if !by_group.contains_key(g.as_str()) {
            return Err(Error::data(format!("subgroup {g:?} has no prompts")));
        }
    }
    for (g, rows) in &by_group {
        if fraction * (rows.len() as f64) < 1.0 - 1e-9 {
            return Err(Error::config(format!(
                "fraction {fraction} selects no rows from subgroup {g:?} ({} rows)",
                rows.len()
            )));
        }
    }
    let sizes: Vec<usize> = by_group.values().map(Vec::len).collect();
    let counts = apportion(&sizes, fraction);

    let mut picked = Vec::with_capacity(counts.iter().sum());
    for (rows, &k) in by_group.values().zip(&counts) {
        for j in index::sample(rng, rows.len(), k).iter() {
            picked.push(table.rows[rows[j]].clone());
        }
    }
    picked.shuffle(rng);
    Ok(PromptToxicityTable {
        group: table.group.clone(),
        rows: picked,
        declared: table.declared.clone(),
    })
}

/// Largest-remainder apportionment of `round(fraction * total)` rows over
/// groups of the given sizes, with at least one row per group.
fn apportion(sizes: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let target = ((fraction * total as f64).round() as usize).clamp(sizes.len(), total);
    let quotas: Vec<f64> = sizes
        .iter()
        .map(|&s| target as f64 * s as f64 / total as f64)
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut remaining = target - counts.iter().sum::<usize>();
    for &g in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if counts[g] < sizes[g] {
            counts[g] += 1;
            remaining -= 1;
        }
    }
    // A quota just under one can round down to zero; borrow a row from the
    // group furthest above its quota.
    for g in 0..counts.len() {
        if counts[g] == 0 {
            let donor = (0..counts.len())
                .filter(|&h| counts[h] > 1)
                .max_by(|&a, &b| {
                    (counts[a] as f64 - quotas[a]).total_cmp(&(counts[b] as f64 - quotas[b]))
                });
            if let Some(d) = donor {
                counts[d] -= 1;
            }
            counts[g] = 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(id: &str, g: &str, t: f64) -> ToxicityRecord {
        ToxicityRecord {
            prompt_id: id.into(),
            subgroup: g.into(),
            toxicity: t,
        }
    }

    fn loss(id: &str, nll: f64, n: u64) -> SequenceLoss {
        SequenceLoss {
            sequence_id: id.into(),
            mean_nll: nll,
            token_count: n,
        }
    }

    #[test]
    fn two_subgroup_hand_evaluation() {
        let t = PromptToxicityTable::new("gender", vec![row("a", "x", 0.2), row("b", "y", 0.4)])
            .unwrap();
        let r = compute_bias(&t).unwrap();
        assert_relative_eq!(r.group_mean, 0.3, max_relative = 1e-12);
        assert_relative_eq!(r.bias, 0.2, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_bias_cases() {
        let same = PromptToxicityTable::new(
            "g",
            vec![row("a", "x", 0.3), row("b", "y", 0.3), row("c", "z", 0.3)],
        )
        .unwrap();
        assert_eq!(compute_bias(&same).unwrap().bias, 0.0);
        let single =
            PromptToxicityTable::new("g", vec![row("a", "x", 0.9), row("b", "x", 0.1)]).unwrap();
        assert_eq!(compute_bias(&single).unwrap().bias, 0.0);
    }

    #[test]
    fn bias_errors() {
        assert!(matches!(
            PromptToxicityTable::new("g", vec![row("a", "x", 1.2)]),
            Err(Error::Validation(_))
        ));
        let empty = PromptToxicityTable::new("g", vec![]).unwrap();
        assert!(matches!(compute_bias(&empty), Err(Error::Data(_))));
        let missing = PromptToxicityTable::new("g", vec![row("a", "x", 0.1)])
            .unwrap()
            .with_subgroups(["x", "queer"]);
        assert!(matches!(compute_bias(&missing), Err(Error::Data(_))));
    }

    #[test]
    fn low_mean_toxicity_can_hide_high_bias() {
        let t = PromptToxicityTable::new(
            "g",
            (0..99)
                .map(|i| row(&i.to_string(), "majority", 0.0))
                .chain([row("x", "minority", 0.9)])
                .collect(),
        )
        .unwrap();
        let r = compute_bias(&t).unwrap();
        assert!(r.mean_toxicity < 0.01);
        assert_relative_eq!(r.bias, 0.9, max_relative = 1e-12);
    }

    #[test]
    fn perplexity_cases() {
        let t = SequenceLossTable::new(vec![loss("a", 0.0, 5)]).unwrap();
        assert_eq!(compute_perplexity(&t).unwrap(), 1.0);
        let v = 50_257.0f64;
        let t = SequenceLossTable::new(vec![loss("a", v.ln(), 17)]).unwrap();
        assert_relative_eq!(compute_perplexity(&t).unwrap(), v, max_relative = 1e-12);
        let t = SequenceLossTable::new(vec![loss("a", 1.0, 10), loss("b", 2.0, 30)]).unwrap();
        assert_relative_eq!(
            compute_perplexity(&t).unwrap(),
            1.75f64.exp(),
            max_relative = 1e-12
        );
        assert_relative_eq!(compute_perplexity(&t).unwrap(), 5.7546, max_relative = 1e-4);
        assert!(compute_perplexity(&SequenceLossTable::new(vec![]).unwrap()).is_err());
        assert!(SequenceLossTable::new(vec![loss("a", -0.1, 3)]).is_err());
        assert!(SequenceLossTable::new(vec![loss("a", 0.1, 0)]).is_err());
    }

    fn shares_table() -> PromptToxicityTable {
        // 1000 prompts: 400 non-binary, 27 binary, the rest spread over three subgroups
        let mut rows = Vec::new();
        let groups = [
            ("non-binary", 400),
            ("binary", 27),
            ("queer", 250),
            ("transgender", 200),
            ("other", 123),
        ];
        for (g, n) in groups {
            for i in 0..n {
                rows.push(row(&format!("{g}-{i}"), g, (i % 10) as f64 / 10.0));
            }
        }
        PromptToxicityTable::new("gender", rows).unwrap()
    }

    #[test]
    fn full_fraction_is_a_permutation() {
        let t = shares_table();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = stratified_subsample(&t, 1.0, &mut rng).unwrap();
        let mut a: Vec<_> = t.rows().iter().map(|r| r.prompt_id.clone()).collect();
        let mut b: Vec<_> = s.rows().iter().map(|r| r.prompt_id.clone()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn subgroup_shares_preserved_within_one_row() {
        let t = shares_table();
        let input = t.subgroup_counts();
        let total_in = t.len() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for fraction in [0.1, 0.15, 0.2, 0.5] {
            let s = stratified_subsample(&t, fraction, &mut rng).unwrap();
            let out = s.subgroup_counts();
            let total_out = s.len() as f64;
            for (g, &n) in &input {
                let expected = n as f64 / total_in * total_out;
                assert!(
                    (out[g] as f64 - expected).abs() <= 1.0,
                    "{g}: {} vs {expected}",
                    out[g]
                );
            }
            let nb = out["non-binary"] as f64 / total_out;
            assert!((nb - 0.40).abs() <= 1.0 / total_out);
            let b = out["binary"] as f64 / total_out;
            assert!((b - 0.027).abs() <= 1.0 / total_out);
        }
    }

    #[test]
    fn subsample_distribution_matches_input_by_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let t = shares_table();
        let input = t.subgroup_counts();
        let critical = ChiSquared::new((input.len() - 1) as f64)
            .unwrap()
            .inverse_cdf(0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut significant = 0;
        for _ in 0..1000 {
            let s = stratified_subsample(&t, 0.1, &mut rng).unwrap();
            let out = s.subgroup_counts();
            let n_out = s.len() as f64;
            let chi2: f64 = input
                .iter()
                .map(|(g, &n)| {
                    let e = n as f64 / t.len() as f64 * n_out;
                    (out[g] as f64 - e).powi(2) / e
                })
                .sum();
            if chi2 >= critical {
                significant += 1;
            }
        }
        assert_eq!(significant, 0);
    }

    #[test]
    fn fraction_too_small_for_rarest_subgroup() {
        let t = shares_table();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(
            stratified_subsample(&t, 0.02, &mut rng),
            Err(Error::Config(_))
        ));
    }

    fn arb_rows() -> impl Strategy<Value = Vec<ToxicityRecord>> {
        proptest::collection::vec((0usize..5, 0.0f64..=1.0), 1..60).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (g, t))| row(&i.to_string(), &format!("g{g}"), t))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn bias_is_permutation_invariant(rows in arb_rows(), seed in any::<u64>()) {
            let base = compute_bias(&PromptToxicityTable::new("g", rows.clone()).unwrap()).unwrap();
            let mut shuffled = rows;
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let other = compute_bias(&PromptToxicityTable::new("g", shuffled).unwrap()).unwrap();
            prop_assert!((base.bias - other.bias).abs() <= 1e-12);
        }

        #[test]
        fn bias_is_shift_invariant_and_nonnegative(rows in arb_rows(), c in -0.25f64..0.25) {
            // squeeze into [0.25, 0.75] so every shift stays a valid toxicity
            let rows: Vec<_> = rows.iter().map(|r| row(&r.prompt_id, &r.subgroup, 0.25 + 0.5 * r.toxicity)).collect();
            let base = compute_bias(&PromptToxicityTable::new("g", rows.clone()).unwrap()).unwrap();
            prop_assert!(base.bias >= 0.0);
            let shifted: Vec<_> = rows.iter().map(|r| row(&r.prompt_id, &r.subgroup, r.toxicity + c)).collect();
            let other = compute_bias(&PromptToxicityTable::new("g", shifted).unwrap()).unwrap();
            prop_assert!((base.bias - other.bias).abs() <= 1e-12);
        }

        #[test]
        fn bias_zero_iff_subgroup_means_equal(rows in arb_rows()) {
            let r = compute_bias(&PromptToxicityTable::new("g", rows).unwrap()).unwrap();
            let first = *r.per_subgroup.values().next().unwrap();
            let all_equal = r.per_subgroup.values().all(|&t| t == first);
            prop_assert_eq!(r.bias == 0.0, all_equal);
        }

        #[test]
        fn apportion_stays_within_one_row(
            sizes in proptest::collection::vec(1usize..500, 1..12),
            fraction in 0.01f64..=1.0,
        ) {
            prop_assume!(sizes.iter().all(|&s| fraction * s as f64 >= 1.0));
            let counts = apportion(&sizes, fraction);
            let total: usize = sizes.iter().sum();
            let k: usize = counts.iter().sum();
            for (&c, &s) in counts.iter().zip(&sizes) {
                prop_assert!(c >= 1 && c <= s);
                prop_assert!((c as f64 - k as f64 * s as f64 / total as f64).abs() <= 1.0);
            }
        }

        #[test]
        fn perplexity_ignores_order_and_splits(
            rows in proptest::collection::vec((0.0f64..8.0, 2u64..400), 1..40),
            pick in any::<prop::sample::Index>(),
            seed in any::<u64>(),
        ) {
            let table: Vec<_> = rows.iter().enumerate().map(|(i, &(nll, n))| loss(&i.to_string(), nll, n)).collect();
            let base = compute_perplexity(&SequenceLossTable::new(table.clone()).unwrap()).unwrap();
            let mut shuffled = table.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let other = compute_perplexity(&SequenceLossTable::new(shuffled).unwrap()).unwrap();
            prop_assert!((base - other).abs() <= 1e-12 * base);
            let mut split = table;
            let i = pick.index(split.len());
            let n = split[i].token_count;
            let cut = n / 2;
            split[i].token_count = cut;
            let mut tail = split[i].clone();
            tail.token_count = n - cut;
            split.push(tail);
            let other = compute_perplexity(&SequenceLossTable::new(split).unwrap()).unwrap();
            prop_assert!((base - other).abs() <= 1e-12 * base);
        }
    }
}
