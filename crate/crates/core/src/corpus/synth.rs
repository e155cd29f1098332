//! Synthetic code-mixed corpora.
//!
//! Languages follow a two-state Markov chain whose switch probability is the
//! requested switching-point density. Each utterance is assigned a target
//! CMI bin up front (largest-remainder quotas over the requested mix) and
//! chains are resampled until their CMI lands in that bin.
//!
//! Optionally, the token right after every switching point is drawn from a
//! separate "post-switch" sub-vocabulary of its language. That gives a
//! corpus in which knowing where the switches are helps predict the next
//! token.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::cmi::{CmiBucket, CmiWeights, REFERENCE_MIX_PERCENT};
use super::switching::Utterance;
use super::tag::{LanguageTag, Token};
use super::CorpusError;
use crate::rng::rng_for;

/// Relative weights over seven bins: zero CMI (monolingual) followed by the
/// six reporting buckets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketMix(pub [f64; 7]);

impl BucketMix {
    /// The reference mix, with no monolingual utterances.
    pub fn reference() -> Self {
        let p = REFERENCE_MIX_PERCENT;
        BucketMix([0.0, p[0], p[1], p[2], p[3], p[4], p[5]])
    }

    pub fn monolingual() -> Self {
        BucketMix([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    }

    pub fn only(bucket: CmiBucket) -> Self {
        let mut w = [0.0; 7];
        w[bucket.index() + 1] = 1.0;
        BucketMix(w)
    }

    /// Integer counts summing to `n`, largest remainder first.
    pub fn quotas(&self, n: usize) -> Vec<usize> {
        let total: f64 = self.0.iter().sum();
        let exact: Vec<f64> = self.0.iter().map(|w| w / total * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..7).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut missing = n - counts.iter().sum::<usize>();
        for i in order {
            if missing == 0 {
                break;
            }
            if self.0[i] > 0.0 {
                counts[i] += 1;
                missing -= 1;
            }
        }
        counts
    }
}

/// How sentiment-style labels are attached to generated utterances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRule {
    /// Parity of the vocabulary rank of the token at the first switching
    /// point: even is `positive`, odd is `negative`; no switch is `neutral`.
    FirstSwitchParity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_utterances: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub target_mix: BucketMix,
    pub sp_density: f64,
    pub l1_vocab: Vec<String>,
    pub l2_vocab: Vec<String>,
    /// Sub-vocabularies used for the token right after a switching point.
    pub post_switch: Option<(Vec<String>, Vec<String>)>,
    /// Zipf exponent for word choice within a vocabulary (0 = uniform).
    pub zipf_exponent: f64,
    pub weights: CmiWeights,
    pub label_rule: Option<LabelRule>,
    /// Attach an L1-only "translation" of every utterance as its target.
    pub translate: bool,
    pub max_attempts: usize,
}

impl SynthSpec {
    /// A spec with `n_l1`/`n_l2` numbered words and the reference mix.
    pub fn with_vocab_sizes(n_utterances: usize, n_l1: usize, n_l2: usize) -> Self {
        SynthSpec {
            n_utterances,
            min_len: 8,
            max_len: 20,
            target_mix: BucketMix::reference(),
            sp_density: 0.3,
            l1_vocab: numbered_vocab("hi", n_l1),
            l2_vocab: numbered_vocab("en", n_l2),
            post_switch: None,
            zipf_exponent: 1.0,
            weights: CmiWeights::default(),
            label_rule: None,
            translate: false,
            max_attempts: 200_000,
        }
    }

    /// Adds post-switch sub-vocabularies of the given sizes.
    pub fn with_post_switch(mut self, n_l1: usize, n_l2: usize) -> Self {
        self.post_switch = Some((numbered_vocab("hisw", n_l1), numbered_vocab("ensw", n_l2)));
        self
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let bad = |msg: String| Err(CorpusError::InfeasibleSynth(msg));
        if !(0.0..=1.0).contains(&self.sp_density) {
            return bad(format!("sp density {} is outside [0, 1]", self.sp_density));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("length range {}..={} is empty", self.min_len, self.max_len));
        }
        if self.l1_vocab.is_empty() || self.l2_vocab.is_empty() {
            return bad("both vocabularies must be non-empty".into());
        }
        if self.target_mix.0.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || self.target_mix.0.iter().sum::<f64>() <= 0.0 {
            return bad("target mix must be nonnegative with a positive total".into());
        }
        self.weights.validate()?;
        let mut seen = HashSet::new();
        let mut lists = vec![&self.l1_vocab, &self.l2_vocab];
        if let Some((a, b)) = &self.post_switch {
            if a.is_empty() || b.is_empty() {
                return bad("post-switch vocabularies must be non-empty".into());
            }
            lists.push(a);
            lists.push(b);
        }
        for w in lists.into_iter().flatten() {
            if !seen.insert(w.as_str()) {
                return bad(format!("vocabularies are not disjoint: {w:?} appears twice"));
            }
        }
        let wants_mixed = self.target_mix.0[1..].iter().any(|&w| w > 0.0);
        if self.sp_density == 0.0 && wants_mixed {
            return bad("nonzero CMI buckets requested with sp density 0: every utterance would be monolingual".into());
        }
        if self.sp_density == 1.0 && self.target_mix.0[0] > 0.0 && self.min_len > 1 {
            return bad("monolingual utterances requested with sp density 1: every token switches".into());
        }
        // Highest CMI any allowed length can reach.
        let max_cmi = (self.min_len..=self.max_len)
            .map(|n| {
                100.0 * (self.weights.w_m * (n / 2) as f64 + self.weights.w_p * (n - 1) as f64) / n as f64
            })
            .fold(0.0, f64::max);
        for b in CmiBucket::ALL {
            if self.target_mix.0[b.index() + 1] > 0.0 && b.bounds().0 >= max_cmi {
                return bad(format!(
                    "bucket {b} requested but lengths {}..={} cap CMI at {max_cmi:.1}",
                    self.min_len, self.max_len
                ));
            }
        }
        Ok(())
    }
}

pub fn numbered_vocab(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:03}")).collect()
}

struct Sampler {
    l1: Zipf<f64>,
    l2: Zipf<f64>,
    post: Option<(Zipf<f64>, Zipf<f64>)>,
}

fn zipf(n: usize, s: f64) -> Result<Zipf<f64>, CorpusError> {
    Zipf::new(n as f64, s).map_err(|e| CorpusError::InfeasibleSynth(format!("zipf({n}, {s}): {e}")))
}

/// A drawn token before it becomes a [`Token`]: language, sub-vocabulary and rank.
#[derive(Clone, Copy)]
struct Draw {
    lang: LanguageTag,
    post_switch: bool,
    rank: usize,
}

fn cmi_bin(cmi: f64) -> usize {
    if cmi == 0.0 {
        0
    } else {
        CmiBucket::of(cmi).index() + 1
    }
}

/// Generates a corpus per `spec`; deterministic for a given seed.
pub fn generate_synthetic_corpus(spec: &SynthSpec, seed: u64) -> Result<Vec<Utterance>, CorpusError> {
    spec.validate()?;
    let s = spec.zipf_exponent;
    let sampler = Sampler {
        l1: zipf(spec.l1_vocab.len(), s)?,
        l2: zipf(spec.l2_vocab.len(), s)?,
        post: match &spec.post_switch {
            Some((a, b)) => Some((zipf(a.len(), s)?, zipf(b.len(), s)?)),
            None => None,
        },
    };
    let mut rng = rng_for(seed, "synth", 0);
    let mut bins: Vec<usize> = spec
        .target_mix
        .quotas(spec.n_utterances)
        .into_iter()
        .enumerate()
        .flat_map(|(bin, count)| std::iter::repeat_n(bin, count))
        .collect();
    bins.shuffle(&mut rng);

    let mut out = Vec::with_capacity(spec.n_utterances);
    for (idx, &bin) in bins.iter().enumerate() {
        let mut accepted = None;
        for _ in 0..spec.max_attempts {
            let draws = draw_chain(spec, &sampler, &mut rng);
            let tags: Vec<LanguageTag> = draws.iter().map(|d| d.lang).collect();
            let cmi = quick_cmi(&tags, &spec.weights);
            if cmi_bin(cmi) == bin {
                accepted = Some(draws);
                break;
            }
        }
        let draws = accepted.ok_or_else(|| {
            CorpusError::InfeasibleSynth(format!(
                "utterance {idx}: no chain landed in bin {} within {} attempts; adjust sp density or lengths",
                bin_label(bin),
                spec.max_attempts
            ))
        })?;
        out.push(materialize(spec, &draws)?);
    }
    Ok(out)
}

fn bin_label(bin: usize) -> &'static str {
    if bin == 0 {
        "cmi=0"
    } else {
        CmiBucket::ALL[bin - 1].label()
    }
}

fn quick_cmi(tags: &[LanguageTag], w: &CmiWeights) -> f64 {
    let l1 = tags.iter().filter(|&&t| t == LanguageTag::L1).count();
    let n = tags.len();
    let switches = tags.windows(2).filter(|p| p[0] != p[1]).count();
    100.0 * (w.w_m * (n - l1.max(n - l1)) as f64 + w.w_p * switches as f64) / n as f64
}

fn draw_chain(spec: &SynthSpec, sampler: &Sampler, rng: &mut ChaCha8Rng) -> Vec<Draw> {
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let mut lang = if rng.random_bool(0.5) { LanguageTag::L1 } else { LanguageTag::L2 };
    let mut draws: Vec<Draw> = Vec::with_capacity(len);
    let mut prev_switched = false;
    for i in 0..len {
        let switched = i > 0 && rng.random_bool(spec.sp_density);
        if switched {
            lang = if lang == LanguageTag::L1 { LanguageTag::L2 } else { LanguageTag::L1 };
        }
        let post_switch = prev_switched && sampler.post.is_some();
        let dist = match (post_switch, lang, &sampler.post) {
            (true, LanguageTag::L1, Some((p1, _))) => p1,
            (true, _, Some((_, p2))) => p2,
            (_, LanguageTag::L1, _) => &sampler.l1,
            _ => &sampler.l2,
        };
        let rank = dist.sample(rng) as usize - 1;
        draws.push(Draw { lang, post_switch, rank });
        prev_switched = switched;
    }
    draws
}

fn word_list<'a>(spec: &'a SynthSpec, lang: LanguageTag, post_switch: bool) -> &'a [String] {
    match (post_switch, lang, &spec.post_switch) {
        (true, LanguageTag::L1, Some((a, _))) => a,
        (true, _, Some((_, b))) => b,
        (_, LanguageTag::L1, _) => &spec.l1_vocab,
        _ => &spec.l2_vocab,
    }
}

fn materialize(spec: &SynthSpec, draws: &[Draw]) -> Result<Utterance, CorpusError> {
    let tokens = draws
        .iter()
        .map(|d| Token::new(&word_list(spec, d.lang, d.post_switch)[d.rank], d.lang))
        .collect::<Result<Vec<_>, _>>()?;
    let mut u = Utterance::new(tokens, &spec.weights)?;
    if let Some(LabelRule::FirstSwitchParity) = spec.label_rule {
        let label = match u.sp_indices.first() {
            None => "neutral",
            Some(&i) if draws[i].rank % 2 == 0 => "positive",
            Some(_) => "negative",
        };
        u.label = Some(label.to_string());
    }
    if spec.translate {
        u.target = Some(
            draws
                .iter()
                .map(|d| {
                    let list = word_list(spec, LanguageTag::L1, d.post_switch);
                    list[d.rank % list.len()].clone()
                })
                .collect(),
        );
    }
    Ok(u)
}
