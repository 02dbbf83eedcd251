//! Sample records and the target scaling applied before regression.
//!
//! Bias is divided by its observed maximum. Perplexity is heavy-tailed, so it
//! is first clamped at a threshold `p_max` chosen such that the clamped values
//! have a standard deviation of at most `sigma`, then divided by `p_max`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::mask::HeadMask;

/// One measured pruning configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub mask: HeadMask,
    pub bias: f64,
    pub ppl: f64,
}

/// Delimited rows keep the mask as text: type inference would otherwise read
/// `0010` as the number 10 and drop the leading zeros.
#[derive(Deserialize)]
struct DelimitedSample {
    mask: String,
    bias: f64,
    ppl: f64,
}

/// Reads JSON lines or delimited text with `mask,bias,ppl` columns.
pub fn read_corpus(path: &Path) -> Result<Vec<SampleRecord>> {
    match io::Container::for_path(path) {
        io::Container::JsonLines => io::read_json_lines(path),
        io::Container::Delimited => io::read_delimited_with(path, |r: DelimitedSample| {
            Ok(SampleRecord {
                mask: r.mask.parse()?,
                bias: r.bias,
                ppl: r.ppl,
            })
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingSpec {
    pub bias_max: f64,
    /// Perplexity clamp threshold, also the divisor.
    pub ppl_max: f64,
    /// Standard-deviation bound used to pick `ppl_max`.
    pub sigma: f64,
}

impl ScalingSpec {
    pub fn scale_bias(&self, bias: f64) -> f64 {
        bias / self.bias_max
    }

    pub fn scale_ppl(&self, ppl: f64) -> f64 {
        ppl.min(self.ppl_max) / self.ppl_max
    }

    pub fn unscale_bias(&self, scaled: f64) -> f64 {
        scaled * self.bias_max
    }

    pub fn unscale_ppl(&self, scaled: f64) -> f64 {
        scaled * self.ppl_max
    }
}

/// Preprocessed training data for the two regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCorpus {
    masks: Vec<HeadMask>,
    raw_bias: Vec<f64>,
    raw_ppl: Vec<f64>,
    bias_targets: Vec<f64>,
    ppl_targets: Vec<f64>,
    scaling: ScalingSpec,
}

impl TrainingCorpus {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn head_count(&self) -> usize {
        self.masks[0].len()
    }

    pub fn masks(&self) -> &[HeadMask] {
        &self.masks
    }

    pub fn bias_targets(&self) -> &[f64] {
        &self.bias_targets
    }

    pub fn ppl_targets(&self) -> &[f64] {
        &self.ppl_targets
    }

    pub fn raw_bias(&self) -> &[f64] {
        &self.raw_bias
    }

    pub fn raw_ppl(&self) -> &[f64] {
        &self.raw_ppl
    }

    pub fn scaling(&self) -> ScalingSpec {
        self.scaling
    }

    /// Records with perplexity clamped but not rescaled.
    pub fn clamped_records(&self) -> Vec<SampleRecord> {
        self.masks
            .iter()
            .zip(self.raw_bias.iter().zip(&self.raw_ppl))
            .map(|(m, (&b, &p))| SampleRecord {
                mask: m.clone(),
                bias: b,
                ppl: p.min(self.scaling.ppl_max),
            })
            .collect()
    }
}

pub fn preprocess(raw: &[SampleRecord], sigma: f64) -> Result<TrainingCorpus> {
    if raw.is_empty() {
        return Err(Error::data("corpus is empty"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("sigma {sigma} must be positive")));
    }
    let n = raw[0].mask.len();
    for (i, r) in raw.iter().enumerate() {
        if r.mask.len() != n {
            return Err(Error::data(format!(
                "sample {i} has {} heads, expected {n}",
                r.mask.len()
            )));
        }
        if !r.bias.is_finite() || r.bias < 0.0 {
            return Err(Error::validation(format!("sample {i} has bias {}", r.bias)));
        }
        if !r.ppl.is_finite() || r.ppl <= 0.0 {
            return Err(Error::validation(format!(
                "sample {i} has perplexity {}",
                r.ppl
            )));
        }
    }
    let bias_max = raw.iter().map(|r| r.bias).fold(f64::NEG_INFINITY, f64::max);
    if bias_max <= 0.0 {
        return Err(Error::data("every bias is zero; nothing to scale by"));
    }
    let ppls: Vec<f64> = raw.iter().map(|r| r.ppl).collect();
    if raw.len() > 1 && ppls.iter().all(|&p| p == ppls[0]) {
        return Err(Error::data(format!(
            "every perplexity equals {}; degenerate training data",
            ppls[0]
        )));
    }
    let ppl_max = clamp_threshold(&ppls, sigma)?;
    let scaling = ScalingSpec {
        bias_max,
        ppl_max,
        sigma,
    };
    Ok(TrainingCorpus {
        masks: raw.iter().map(|r| r.mask.clone()).collect(),
        raw_bias: raw.iter().map(|r| r.bias).collect(),
        raw_ppl: ppls.clone(),
        bias_targets: raw.iter().map(|r| scaling.scale_bias(r.bias)).collect(),
        ppl_targets: ppls.iter().map(|&p| scaling.scale_ppl(p)).collect(),
        scaling,
    })
}

/// Population standard deviation, two-pass.
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Largest observed value `c` such that `std(min(p, c))` is at most `sigma`.
///
/// Candidates are scanned in descending order using prefix sums; a candidate
/// that passes is re-checked with a direct two-pass computation.
pub fn clamp_threshold(values: &[f64], sigma: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::data("no perplexity values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut s1 = Vec::with_capacity(n + 1);
    let mut s2 = Vec::with_capacity(n + 1);
    s1.push(0.0);
    s2.push(0.0);
    for &v in &sorted {
        s1.push(s1.last().unwrap() + v);
        s2.push(s2.last().unwrap() + v * v);
    }
    let mut candidates = sorted.clone();
    candidates.dedup();
    for &c in candidates.iter().rev() {
        let below = sorted.partition_point(|&v| v < c);
        let clamped = (n - below) as f64;
        let sum = s1[below] + clamped * c;
        let sum_sq = s2[below] + clamped * c * c;
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        if var.sqrt() <= sigma {
            let direct: Vec<f64> = values.iter().map(|&v| v.min(c)).collect();
            if std_dev(&direct) <= sigma {
                return Ok(c);
            }
        }
    }
    // The smallest value always clamps everything to a constant.
    Ok(candidates[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(bias: f64, ppl: f64) -> SampleRecord {
        SampleRecord {
            mask: HeadMask::zeros(4),
            bias,
            ppl,
        }
    }

    #[test]
    fn corpus_formats() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("c.csv");
        std::fs::write(
            &csv,
            "# collector run 3\nmask,bias,ppl\n0010,0.4,31.5\n1100,0.3,40\n",
        )
        .unwrap();
        let rows = read_corpus(&csv).unwrap();
        assert_eq!(rows[0].mask.to_bit_string(), "0010");
        assert_eq!(rows[1].ppl, 40.0);

        std::fs::write(&csv, "mask,bias,ppl\n0010,0.4,31.5\n0020,0.3,40\n").unwrap();
        match read_corpus(&csv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }

        // JSON lines survive a parse and re-serialize round trip byte for byte
        let jsonl = dir.path().join("c.jsonl");
        let text = "{\"mask\":\"0010\",\"bias\":0.1234567890123,\"ppl\":31.000000000000004}\n\
                    {\"mask\":\"1111\",\"bias\":0.0,\"ppl\":1e300}\n";
        std::fs::write(&jsonl, text).unwrap();
        let rows = read_corpus(&jsonl).unwrap();
        let back = io::to_json_lines(&rows).unwrap();
        assert_eq!(read_corpus_bytes(&back), rows);
        assert_eq!(io::to_json_lines(&read_corpus_bytes(&back)).unwrap(), back);
    }

    fn read_corpus_bytes(bytes: &[u8]) -> Vec<SampleRecord> {
        std::str::from_utf8(bytes)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    /// Independent oracle: try every candidate from the top, recomputing the
    /// standard deviation from scratch each time.
    fn scan_oracle(values: &[f64], sigma: f64) -> f64 {
        let mut cands = values.to_vec();
        cands.sort_by(|a, b| b.total_cmp(a));
        cands.dedup();
        for c in cands {
            let clamped: Vec<f64> = values.iter().map(|v| v.min(c)).collect();
            let mean = clamped.iter().sum::<f64>() / clamped.len() as f64;
            let var =
                clamped.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / clamped.len() as f64;
            if var.sqrt() <= sigma {
                return c;
            }
        }
        unreachable!()
    }

    #[test]
    fn synthetic_threshold_matches_descending_scan() {
        let values = [10.0, 20.0, 30.0, 10_000.0];
        let c = clamp_threshold(&values, 10.0).unwrap();
        assert_eq!(c, scan_oracle(&values, 10.0));
        // clamping at 30 gives {10,20,30,30}: std = sqrt(68.75) ≈ 8.29
        assert_eq!(c, 30.0);
        let clamped: Vec<f64> = values.iter().map(|v| v.min(c)).collect();
        assert!(std_dev(&clamped) <= 10.0);
    }

    #[test]
    fn bias_scaling_maps_max_to_one() {
        let raw = vec![rec(0.3, 40.0), rec(1.05, 45.0), rec(0.7, 41.0)];
        let corpus = preprocess(&raw, 10.0).unwrap();
        assert_eq!(
            corpus.bias_targets().iter().cloned().fold(0.0, f64::max),
            1.0
        );
        assert_eq!(corpus.scaling().bias_max, 1.05);
    }

    #[test]
    fn preprocess_errors() {
        assert!(preprocess(&[], 10.0).is_err());
        assert!(preprocess(&[rec(0.1, 10.0), rec(0.2, 12.0)], 0.0).is_err());
        assert!(matches!(
            preprocess(&[rec(0.0, 10.0), rec(0.0, 12.0)], 10.0),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            preprocess(&[rec(0.1, 50.0), rec(0.2, 50.0)], 10.0),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            preprocess(&[rec(0.1, f64::NAN)], 10.0),
            Err(Error::Validation(_))
        ));
        let mixed = vec![
            rec(0.1, 10.0),
            SampleRecord {
                mask: HeadMask::zeros(5),
                bias: 0.2,
                ppl: 11.0,
            },
        ];
        assert!(matches!(preprocess(&mixed, 10.0), Err(Error::Data(_))));
    }

    proptest! {
        #[test]
        fn threshold_agrees_with_oracle(values in proptest::collection::vec(1.0f64..1e6, 1..80), sigma in 0.5f64..200.0) {
            let c = clamp_threshold(&values, sigma).unwrap();
            prop_assert_eq!(c, scan_oracle(&values, sigma));
        }

        #[test]
        fn preprocessing_is_idempotent(
            samples in proptest::collection::vec((0.01f64..1.2, 5.0f64..300.0), 2..60),
            sigma in 1.0f64..50.0,
        ) {
            let raw: Vec<_> = samples.iter().map(|&(b, p)| rec(b, p)).collect();
            prop_assume!(raw.iter().any(|r| r.ppl != raw[0].ppl));
            let once = preprocess(&raw, sigma).unwrap();
            let clamped = once.clamped_records();
            prop_assume!(clamped.iter().any(|r| r.ppl != clamped[0].ppl));
            let twice = preprocess(&clamped, sigma).unwrap();
            prop_assert_eq!(once.scaling(), twice.scaling());
            prop_assert_eq!(once.ppl_targets(), twice.ppl_targets());
            prop_assert_eq!(once.bias_targets(), twice.bias_targets());
        }

        #[test]
        fn clamping_preserves_order_below_threshold(values in proptest::collection::vec(1.0f64..1e5, 2..60), sigma in 1.0f64..100.0) {
            let c = clamp_threshold(&values, sigma).unwrap();
            for a in &values {
                for b in &values {
                    if a < b {
                        prop_assert!(a.min(c) <= b.min(c));
                        if *b < c {
                            prop_assert!(a.min(c) < b.min(c));
                        }
                    }
                }
            }
            let clamped: Vec<f64> = values.iter().map(|v| v.min(c)).collect();
            prop_assert!(std_dev(&clamped) <= sigma);
        }
    }
}
