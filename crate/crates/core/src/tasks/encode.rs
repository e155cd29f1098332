//! Utterance to model-input conversion.

use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, BOS, EOS, SPECIALS};
use crate::corpus::{compute_spi, detect_switching_points_in_tags, LanguageTag, Token, Utterance};
use crate::nn::{EncoderInput, StreamInput};
use crate::posenc::bigramize;

/// Vocabularies a model was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub unigram: Vocab,
    #[serde(default)]
    pub bigram: Option<Vocab>,
    #[serde(default)]
    pub target: Option<Vocab>,
}

impl Vocabularies {
    /// Unigram (and optionally bigram) vocabularies from training data.
    pub fn build(corpus: &[Utterance], min_count: usize, bigrams: bool) -> Self {
        let unigram = Vocab::build(corpus.iter().flat_map(|u| u.surfaces()), min_count);
        let bigram = bigrams.then(|| {
            let keys: Vec<String> = corpus.iter().flat_map(|u| bigram_keys(&with_bos(u))).collect();
            Vocab::build(keys.iter().map(String::as_str), min_count)
        });
        Vocabularies { unigram, bigram, target: None }
    }
}

fn bos_token() -> Token {
    Token::new(SPECIALS[BOS], LanguageTag::Other).expect("reserved token")
}

fn with_bos(u: &Utterance) -> Vec<Token> {
    std::iter::once(bos_token()).chain(u.tokens.iter().cloned()).collect()
}

pub fn bigram_keys(tokens: &[Token]) -> Vec<String> {
    bigramize(tokens).iter().map(|b| b.key()).collect()
}

/// A stream with switching-point metadata derived from `tags`.
pub fn unigram_stream(ids: Vec<usize>, tags: &[LanguageTag]) -> StreamInput {
    let sp = detect_switching_points_in_tags(tags.iter().copied());
    let mut mask = vec![false; tags.len()];
    for &i in &sp {
        mask[i] = true;
    }
    StreamInput { spi: Some(compute_spi(tags.len(), &sp)), sp_mask: Some(mask), ids }
}

/// Bigram stream of `tokens`; a bigram is a switching point when its two
/// tags are different languages.
pub fn bigram_stream(tokens: &[Token], vocab: &Vocab) -> StreamInput {
    let bigrams = bigramize(tokens);
    let ids = bigrams.iter().map(|b| vocab.id(&b.key())).collect();
    let mask: Vec<bool> = bigrams.iter().map(|b| b.switching).collect();
    let sp: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    StreamInput { spi: Some(compute_spi(mask.len(), &sp)), sp_mask: Some(mask), ids }
}

fn stream_pair(tokens: &[Token], vocabs: &Vocabularies) -> EncoderInput {
    let tags: Vec<LanguageTag> = tokens.iter().map(|t| t.tag).collect();
    let ids = tokens.iter().map(|t| vocabs.unigram.id(t.surface())).collect();
    EncoderInput { unigram: unigram_stream(ids, &tags), bigram: vocabs.bigram.as_ref().map(|v| bigram_stream(tokens, v)) }
}

/// One next-token training example: `[BOS, w1..wn] -> [w1..wn, EOS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmExample {
    pub input: EncoderInput,
    pub targets: Vec<usize>,
}

pub fn lm_example(u: &Utterance, vocabs: &Vocabularies) -> LmExample {
    let tokens = with_bos(u);
    let input = stream_pair(&tokens, vocabs);
    let mut targets: Vec<usize> = input.unigram.ids[1..].to_vec();
    targets.push(EOS);
    LmExample { input, targets }
}

/// A group of examples. Each example is its own graph, so there is no
/// padding to mask.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LmBatch {
    pub examples: Vec<LmExample>,
}

impl LmBatch {
    pub fn from_utterances<'a>(us: impl IntoIterator<Item = &'a Utterance>, vocabs: &Vocabularies) -> Self {
        LmBatch { examples: us.into_iter().map(|u| lm_example(u, vocabs)).collect() }
    }

    /// Number of predicted tokens.
    pub fn tokens(&self) -> usize {
        self.examples.iter().map(|e| e.targets.len()).sum()
    }
}

/// Bidirectional encoder input (classification, translation source).
pub fn encoder_input(u: &Utterance, vocabs: &Vocabularies) -> EncoderInput {
    stream_pair(&u.tokens, vocabs)
}
