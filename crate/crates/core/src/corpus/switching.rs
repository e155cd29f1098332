//! Switching points, switching-point indices and the tagged utterance.

use serde::{Deserialize, Serialize};

use super::cmi::{compute_cmi, CmiWeights};
use super::tag::{LanguageTag, Token};
use super::CorpusError;

/// Positions `i` where the language changes relative to the previous
/// language-bearing token. `Other` tokens are skipped when looking back.
pub fn detect_switching_points(tokens: &[Token]) -> Vec<usize> {
    detect_switching_points_in_tags(tokens.iter().map(|t| t.tag))
}

/// Same as [`detect_switching_points`] over bare tags.
pub fn detect_switching_points_in_tags(tags: impl IntoIterator<Item = LanguageTag>) -> Vec<usize> {
    let mut last: Option<LanguageTag> = None;
    let mut out = Vec::new();
    for (i, tag) in tags.into_iter().enumerate() {
        if !tag.is_language() {
            continue;
        }
        if matches!(last, Some(prev) if prev != tag) {
            out.push(i);
        }
        last = Some(tag);
    }
    out
}

/// Switching-point indices: a counter that resets to 0 at every switching
/// point and otherwise counts up from the start of the utterance.
///
/// `sp_indices` must be sorted and within `0..len`.
pub fn compute_spi(len: usize, sp_indices: &[usize]) -> Vec<usize> {
    let mut spi = Vec::with_capacity(len);
    let mut sp = sp_indices.iter().peekable();
    for i in 0..len {
        let reset = sp.next_if_eq(&&i).is_some();
        let v = if i == 0 || reset { 0 } else { spi[i - 1] + 1 };
        spi.push(v);
    }
    spi
}

/// Recovers switching points from an SPI vector (zeros after index 0).
pub fn switching_points_from_spi(spi: &[usize]) -> Vec<usize> {
    spi.iter().enumerate().skip(1).filter(|(_, &v)| v == 0).map(|(i, _)| i).collect()
}

/// A tagged utterance with its derived switching-point data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub tokens: Vec<Token>,
    pub sp_indices: Vec<usize>,
    pub spi: Vec<usize>,
    pub cmi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<String>>,
}

impl Utterance {
    pub fn new(tokens: Vec<Token>, weights: &CmiWeights) -> Result<Self, CorpusError> {
        let sp_indices = detect_switching_points(&tokens);
        let spi = compute_spi(tokens.len(), &sp_indices);
        let cmi = compute_cmi(&tokens, &sp_indices, weights)?;
        Ok(Utterance { tokens, sp_indices, spi, cmi, label: None, target: None })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tags(&self) -> impl Iterator<Item = LanguageTag> + '_ {
        self.tokens.iter().map(|t| t.tag)
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> + '_ {
        self.tokens.iter().map(|t| t.surface())
    }

    /// Per-position flag: true at switching points.
    pub fn sp_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for &i in &self.sp_indices {
            mask[i] = true;
        }
        mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LanguageTag::*;
    use proptest::prelude::*;

    pub(crate) fn toks(tags: &[LanguageTag]) -> Vec<Token> {
        tags.iter().enumerate().map(|(i, &t)| Token::new(&format!("w{i}"), t).unwrap()).collect()
    }

    #[test]
    fn switching_points_examples() {
        assert_eq!(detect_switching_points(&toks(&[L1, L2, L1])), [1, 2]);
        assert!(detect_switching_points(&toks(&[L1, L1, L1, L1])).is_empty());
        assert_eq!(detect_switching_points(&toks(&[L1, L2, L1, L2])), [1, 2, 3]);
    }

    #[test]
    fn other_is_transparent() {
        assert_eq!(detect_switching_points(&toks(&[L1, Other, L2, Other, Other, L2])), [2]);
        assert!(detect_switching_points(&toks(&[Other, L1, Other, L1])).is_empty());
    }

    #[test]
    fn spi_examples() {
        // ye gaana enjoy kare
        let t = toks(&[L1, L1, L2, L1]);
        assert_eq!(compute_spi(4, &detect_switching_points(&t)), [0, 1, 0, 0]);
        assert_eq!(compute_spi(5, &[]), [0, 1, 2, 3, 4]);
        let alt = toks(&[L1, L2, L1, L2]);
        assert_eq!(compute_spi(4, &detect_switching_points(&alt)), [0, 0, 0, 0]);
    }

    #[test]
    fn utterance_invariants_hold() {
        let u = Utterance::new(toks(&[L1, L1, L2, L1]), &CmiWeights::default()).unwrap();
        assert_eq!(u.sp_indices, [2, 3]);
        assert_eq!(u.spi, [0, 1, 0, 0]);
        assert_eq!(u.sp_mask(), [false, false, true, true]);
    }

    fn tag_strategy() -> impl Strategy<Value = LanguageTag> {
        prop_oneof![Just(L1), Just(L2), Just(Other)]
    }

    proptest! {
        #[test]
        fn spi_zeros_recover_switching_points(tags in prop::collection::vec(tag_strategy(), 1..40)) {
            let sp = detect_switching_points(&toks(&tags));
            let spi = compute_spi(tags.len(), &sp);
            prop_assert_eq!(switching_points_from_spi(&spi), sp.clone());
            prop_assert_eq!(spi[0], 0);
            for &i in &sp {
                prop_assert!(i >= 1 && i < tags.len());
                prop_assert!(tags[i].is_language());
            }
        }

        #[test]
        fn inserting_other_tokens_keeps_switch_count(
            tags in prop::collection::vec(prop_oneof![Just(L1), Just(L2)], 1..30),
            inserts in prop::collection::vec(0usize..3, 30),
        ) {
            let base = detect_switching_points(&toks(&tags));
            let mut padded = Vec::new();
            let mut surviving = Vec::new();
            for (i, &t) in tags.iter().enumerate() {
                for _ in 0..inserts[i] {
                    padded.push(Other);
                }
                surviving.push(padded.len());
                padded.push(t);
            }
            let with_other = detect_switching_points(&toks(&padded));
            let mapped: Vec<usize> = base.iter().map(|&i| surviving[i]).collect();
            prop_assert_eq!(with_other, mapped);
        }
    }
}
