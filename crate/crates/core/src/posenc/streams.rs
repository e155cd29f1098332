use serde::{Deserialize, Serialize};

use crate::corpus::{LanguageTag, Token};
use crate::nn::{Graph, Tensor, Var};

use super::PosEncError;

/// Adjacent token pair `(i, i+1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bigram {
    pub left: String,
    pub right: String,
    pub switching: bool,
}

impl Bigram {
    /// Vocabulary key.
    pub fn key(&self) -> String {
        format!("{}_{}", self.left, self.right)
    }
}

/// `n` tokens give `n - 1` bigrams. A bigram is a switch when both tags
/// are languages and they differ.
pub fn bigramize(tokens: &[Token]) -> Vec<Bigram> {
    tokens
        .windows(2)
        .map(|w| Bigram {
            left: w[0].surface().to_string(),
            right: w[1].surface().to_string(),
            switching: w[0].tag.is_language() && w[1].tag.is_language() && w[0].tag != w[1].tag,
        })
        .collect()
}

/// Tags of the bigram stream, one per bigram: the right token's tag, so the
/// stream's own switching points sit where tag pairs change.
pub fn bigram_tags(tokens: &[Token]) -> Vec<LanguageTag> {
    tokens.iter().skip(1).map(|t| t.tag).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamWeights {
    pub a: f64,
    pub b: f64,
}

impl Default for StreamWeights {
    fn default() -> Self {
        StreamWeights { a: 0.5, b: 0.5 }
    }
}

/// Where the shorter bigram stream gets its zero row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamAlignment {
    /// Zero row appended: bigram `i` sits at position `i`.
    #[default]
    RightPad,
    /// Zero row prepended: bigram `(t-1, t)` sits at position `t`.
    ShiftRight,
}

fn aligned_front(uni_rows: usize, bi_rows: usize, align: StreamAlignment) -> Result<usize, PosEncError> {
    if bi_rows > uni_rows {
        return Err(PosEncError::Shape(format!("bigram stream has {bi_rows} rows, unigram {uni_rows}")));
    }
    Ok(match align {
        StreamAlignment::RightPad => 0,
        StreamAlignment::ShiftRight => uni_rows - bi_rows,
    })
}

/// `a * uni + b * pad(bi)`.
pub fn combine_streams(uni: &Tensor, bi: &Tensor, w: StreamWeights, align: StreamAlignment) -> Result<Tensor, PosEncError> {
    if uni.cols() != bi.cols() {
        return Err(PosEncError::Shape(format!("stream widths {} and {}", uni.cols(), bi.cols())));
    }
    let front = aligned_front(uni.rows(), bi.rows(), align)?;
    let n = uni.cols();
    let mut out: Vec<f64> = uni.data().iter().map(|x| w.a * x).collect();
    for (k, x) in bi.data().iter().enumerate() {
        out[front * n + k] += w.b * x;
    }
    Ok(Tensor::matrix(uni.rows(), n, out).expect("stream shape"))
}

/// Graph form of [`combine_streams`] with `a`, `b` as `[1,1]` nodes.
pub fn combine_streams_graph(
    g: &mut Graph,
    uni: Var,
    bi: Var,
    a: Var,
    b: Var,
    align: StreamAlignment,
) -> Result<Var, PosEncError> {
    let (m, n) = g.shape(uni);
    let (bm, bn) = g.shape(bi);
    if n != bn {
        return Err(PosEncError::Shape(format!("stream widths {n} and {bn}")));
    }
    let front = aligned_front(m, bm, align)?;
    let padded = g.pad_rows(bi, m, front);
    let ua = g.scalar_mul(a, uni);
    let bb = g.scalar_mul(b, padded);
    Ok(g.add(ua, bb))
}
