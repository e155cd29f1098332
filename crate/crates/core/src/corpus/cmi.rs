//! Code-Mixing Index and its bucketed histogram.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::switching::Utterance;
use super::tag::{LanguageTag, Token};
use super::CorpusError;

const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Weights of the mixing-ratio term (`w_m`) and the switch-count term (`w_p`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmiWeights {
    pub w_m: f64,
    pub w_p: f64,
}

impl Default for CmiWeights {
    fn default() -> Self {
        CmiWeights { w_m: 0.5, w_p: 0.5 }
    }
}

impl CmiWeights {
    pub fn new(w_m: f64, w_p: f64) -> Result<Self, CorpusError> {
        let w = CmiWeights { w_m, w_p };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let ok = self.w_m.is_finite()
            && self.w_p.is_finite()
            && self.w_m >= 0.0
            && self.w_p >= 0.0
            && (self.w_m + self.w_p - 1.0).abs() <= WEIGHT_TOLERANCE;
        if ok {
            Ok(())
        } else {
            Err(CorpusError::InvalidWeights { w_m: self.w_m, w_p: self.w_p })
        }
    }
}

/// `100 * (w_m * (N - max_lang_count) + w_p * P) / N` where `N` counts
/// L1/L2 tokens and `P` is the number of switching points. All-`Other`
/// utterances score 0.
pub fn compute_cmi(tokens: &[Token], sp_indices: &[usize], weights: &CmiWeights) -> Result<f64, CorpusError> {
    weights.validate()?;
    let l1 = tokens.iter().filter(|t| t.tag == LanguageTag::L1).count();
    let l2 = tokens.iter().filter(|t| t.tag == LanguageTag::L2).count();
    let n = l1 + l2;
    if n == 0 {
        return Ok(0.0);
    }
    let minority = (n - l1.max(l2)) as f64;
    let switches = sp_indices.len() as f64;
    Ok(100.0 * (weights.w_m * minority + weights.w_p * switches) / n as f64)
}

/// The six CMI ranges used for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CmiBucket {
    #[serde(rename = "0-10")]
    B0To10,
    #[serde(rename = "11-20")]
    B11To20,
    #[serde(rename = "21-30")]
    B21To30,
    #[serde(rename = "31-40")]
    B31To40,
    #[serde(rename = "41-50")]
    B41To50,
    #[serde(rename = "50+")]
    Over50,
}

impl CmiBucket {
    pub const ALL: [CmiBucket; 6] = [
        CmiBucket::B0To10,
        CmiBucket::B11To20,
        CmiBucket::B21To30,
        CmiBucket::B31To40,
        CmiBucket::B41To50,
        CmiBucket::Over50,
    ];

    /// Ranges are closed on the right: (10, 20] is "11-20", and so on.
    pub fn of(cmi: f64) -> CmiBucket {
        match cmi {
            c if c <= 10.0 => CmiBucket::B0To10,
            c if c <= 20.0 => CmiBucket::B11To20,
            c if c <= 30.0 => CmiBucket::B21To30,
            c if c <= 40.0 => CmiBucket::B31To40,
            c if c <= 50.0 => CmiBucket::B41To50,
            _ => CmiBucket::Over50,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            CmiBucket::B0To10 => "0-10",
            CmiBucket::B11To20 => "11-20",
            CmiBucket::B21To30 => "21-30",
            CmiBucket::B31To40 => "31-40",
            CmiBucket::B41To50 => "41-50",
            CmiBucket::Over50 => "50+",
        }
    }

    /// (exclusive lower, inclusive upper) bounds; the first bucket
    /// starts above zero and the last is capped at 100.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            CmiBucket::B0To10 => (0.0, 10.0),
            CmiBucket::B11To20 => (10.0, 20.0),
            CmiBucket::B21To30 => (20.0, 30.0),
            CmiBucket::B31To40 => (30.0, 40.0),
            CmiBucket::B41To50 => (40.0, 50.0),
            CmiBucket::Over50 => (50.0, 100.0),
        }
    }
}

impl fmt::Display for CmiBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Reference mix percentages, in bucket order.
pub const REFERENCE_MIX_PERCENT: [f64; 6] = [8.05, 18.9, 25.9, 26.0, 13.1, 8.05];
pub const REFERENCE_MEAN_CMI: f64 = 28.0;

/// Counts per CMI bucket. Zero-CMI utterances are counted apart and do
/// not contribute to `total` or `mean_cmi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmiHistogram {
    pub buckets: [u64; 6],
    pub zero_cmi: u64,
    pub total: u64,
    /// `None` when no utterance has a positive CMI.
    pub mean_cmi: Option<f64>,
}

impl CmiHistogram {
    pub fn count(&self, bucket: CmiBucket) -> u64 {
        self.buckets[bucket.index()]
    }

    pub fn percent(&self, bucket: CmiBucket) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.count(bucket) as f64 / self.total as f64
        }
    }

    /// `bucket,count,percent` rows followed by total, mean and the discard bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket,count,percent\n");
        for b in CmiBucket::ALL {
            writeln!(out, "{},{},{:.2}", b.label(), self.count(b), self.percent(b)).unwrap();
        }
        let total_pct = if self.total == 0 { 0.0 } else { 100.0 };
        writeln!(out, "total,{},{:.2}", self.total, total_pct).unwrap();
        match self.mean_cmi {
            Some(m) => writeln!(out, "mean_cmi,{m:.4},").unwrap(),
            None => writeln!(out, "mean_cmi,undefined,").unwrap(),
        }
        writeln!(out, "discarded_cmi0,{},", self.zero_cmi).unwrap();
        out
    }
}

/// Buckets a corpus by CMI.
pub fn bucket_cmi(corpus: &[Utterance]) -> CmiHistogram {
    let mut buckets = [0u64; 6];
    let mut zero_cmi = 0;
    let mut sum = 0.0;
    for u in corpus {
        if u.cmi == 0.0 {
            zero_cmi += 1;
            continue;
        }
        buckets[CmiBucket::of(u.cmi).index()] += 1;
        sum += u.cmi;
    }
    let total: u64 = buckets.iter().sum();
    let mean_cmi = (total > 0).then(|| sum / total as f64);
    CmiHistogram { buckets, zero_cmi, total, mean_cmi }
}
