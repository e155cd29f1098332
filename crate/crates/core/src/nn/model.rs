//! Transformer stacks with pluggable positional encodings.
//!
//! Post-LN layers: `x -> LN(x + drop(attn(x))) -> LN(x + drop(ff(x)))`.
//! Additive encodings are added once to the input embeddings; relative
//! terms and rotations act inside every layer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::NnError;
use crate::posenc::{
    combine_streams_graph, head_logits, rotation_coeffs, sinusoidal_table, PeConfig, PeVariant, PositionTerm,
    RotaryTable, SignPattern, SprmMode, StreamAlignment,
};
use crate::rng::rng_for;

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StackMode {
    /// Encoder with a causal mask and a next-token head.
    Causal,
    /// Bidirectional encoder with a pooled classification head.
    Encoder,
    /// Bidirectional encoder plus causal decoder with cross-attention.
    EncoderDecoder,
}

fn default_heads() -> usize {
    6
}

fn default_dropout() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub mode: StackMode,
    pub n_layers: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub pe_config: PeConfig,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    pub vocab_size: usize,
    #[serde(default)]
    pub bigram_vocab_size: usize,
    #[serde(default)]
    pub use_bigram_stream: bool,
    /// Decoder vocabulary (encoder-decoder mode).
    #[serde(default)]
    pub target_vocab_size: usize,
    /// Classifier classes (encoder mode).
    #[serde(default)]
    pub n_classes: usize,
    #[serde(default)]
    pub sprm_mode: SprmMode,
    #[serde(default)]
    pub tie_embeddings: bool,
}

impl ModelSpec {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidSpec(m));
        self.pe_config.validate()?;
        if self.pe_config.d_model != self.d_model {
            return bad(format!("pe_config.d_model {} differs from d_model {}", self.pe_config.d_model, self.d_model));
        }
        if self.n_layers == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("n_layers, n_heads and d_ff must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.pe_config.variant.is_rotary() && self.head_dim() % 2 != 0 {
            return bad(format!("rotary encodings need an even head width, got {}", self.head_dim()));
        }
        if self.mode == StackMode::EncoderDecoder && self.head_dim() % 2 != 0 {
            return bad(format!("the decoder is rotary and needs an even head width, got {}", self.head_dim()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        if self.use_bigram_stream && self.bigram_vocab_size == 0 {
            return bad("bigram stream enabled with an empty bigram vocabulary".into());
        }
        match self.mode {
            StackMode::Encoder if self.n_classes < 2 => bad("encoder mode needs n_classes >= 2".into()),
            StackMode::EncoderDecoder if self.target_vocab_size == 0 => {
                bad("encoder-decoder mode needs target_vocab_size".into())
            }
            StackMode::EncoderDecoder if self.tie_embeddings => {
                bad("embedding tying is only available in causal mode".into())
            }
            _ => Ok(()),
        }
    }
}

/// One token stream of an encoder input.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StreamInput {
    pub ids: Vec<usize>,
    /// Switching-point indices, required by SPDRPE.
    pub spi: Option<Vec<usize>>,
    /// Per-position switching flags, required by SP_ROTARY.
    pub sp_mask: Option<Vec<bool>>,
}

impl StreamInput {
    pub fn plain(ids: Vec<usize>) -> Self {
        StreamInput { ids, spi: None, sp_mask: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EncoderInput {
    pub unigram: StreamInput,
    pub bigram: Option<StreamInput>,
}

/// Per-call forward options.
#[derive(Debug)]
pub struct ForwardCtx {
    dropout: Option<(f64, ChaCha8Rng)>,
    record_attention: bool,
    /// Unigram-stream attention probabilities, `[layer][head]`.
    pub attention: Vec<Vec<Var>>,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx { dropout: None, record_attention: false, attention: Vec::new() }
    }

    pub fn train(p: f64, rng: ChaCha8Rng) -> Self {
        ForwardCtx { dropout: (p > 0.0).then_some((p, rng)), record_attention: false, attention: Vec::new() }
    }

    pub fn recording() -> Self {
        ForwardCtx { dropout: None, record_attention: true, attention: Vec::new() }
    }

    fn dropout(&mut self, g: &mut Graph, x: Var) -> Var {
        let Some((p, rng)) = self.dropout.as_mut() else { return x };
        let keep = 1.0 / (1.0 - *p);
        let len = g.value(x).len();
        let mask: Vec<f64> = (0..len).map(|_| if rng.random::<f64>() < *p { 0.0 } else { keep }).collect();
        g.mul_const(x, mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stream {
    Uni,
    Bi,
}

impl Stream {
    fn prefix(self) -> &'static str {
        match self {
            Stream::Uni => "enc.uni",
            Stream::Bi => "enc.bi",
        }
    }
}

/// Attention-layer parameters bound to a graph.
#[derive(Debug, Clone, Copy)]
pub struct AttnVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Per-head positional term inside an attention layer.
#[derive(Debug, Clone)]
pub enum HeadPosition {
    None,
    /// `[2k+1, d_model]` table, sliced by head.
    Relative { table: Var, clip: usize },
    /// Rotation coefficients for one head width, shared by all heads.
    Rotation { cos: Vec<f64>, sin: Vec<f64> },
}

/// Multi-head attention of `q_in` over `kv_in`. Returns the projected
/// output and the per-head attention probabilities.
pub fn multi_head_attention(
    g: &mut Graph,
    q_in: Var,
    kv_in: Var,
    w: &AttnVars,
    n_heads: usize,
    pos: &HeadPosition,
    causal: bool,
) -> Result<(Var, Vec<Var>), NnError> {
    let d = g.shape(q_in).1;
    if d % n_heads != 0 {
        return Err(NnError::Shape(format!("width {d} not divisible by {n_heads} heads")));
    }
    let dk = d / n_heads;
    let q = g.matmul(q_in, w.wq);
    let k = g.matmul(kv_in, w.wk);
    let v = g.matmul(kv_in, w.wv);
    let mut heads = Vec::with_capacity(n_heads);
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * dk, dk);
        let kh = g.slice_cols(k, h * dk, dk);
        let vh = g.slice_cols(v, h * dk, dk);
        let term = match pos {
            HeadPosition::None => PositionTerm::None,
            HeadPosition::Relative { table, clip } => {
                PositionTerm::Relative { table: g.slice_cols(*table, h * dk, dk), clip: *clip }
            }
            HeadPosition::Rotation { cos, sin } => PositionTerm::Rotation { cos: cos.clone(), sin: sin.clone() },
        };
        let mut e = head_logits(g, qh, kh, &term)?;
        if causal {
            e = g.causal_mask(e);
        }
        let a = g.softmax_rows(e);
        heads.push(g.matmul(a, vh));
        probs.push(a);
    }
    let cat = if n_heads == 1 { heads[0] } else { g.concat_cols(&heads) };
    let o = g.matmul(cat, w.wo);
    Ok((g.add_row(o, w.bo), probs))
}

/// Affine layer norm over rows.
pub fn layer_norm(g: &mut Graph, x: Var, gamma: Var, beta: Var) -> Var {
    let n = g.normalize_rows(x, LN_EPS);
    let s = g.mul_row(n, gamma);
    g.add_row(s, beta)
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
    rotary: Option<RotaryTable>,
}

impl Model {
    /// Fresh model. Projections are uniform in `+-1/sqrt(fan_in)`;
    /// positional tables start at zero and both stream weights at 0.5.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, NnError> {
        spec.validate()?;
        let mut params = ParamStore::new();
        for (idx, b) in layout(&spec).into_iter().enumerate() {
            let mut rng = rng_for(seed, "init", idx as u64);
            let n = b.rows * b.cols;
            let data = match b.init {
                Init::Zeros => vec![0.0; n],
                Init::Const(c) => vec![c; n],
                Init::Uniform(limit) => (0..n).map(|_| rng.random_range(-limit..limit)).collect(),
            };
            params.add(b.name, Tensor::matrix(b.rows, b.cols, data).expect("init shape"));
        }
        Self::from_params(spec, params)
    }

    /// Wraps existing parameters (e.g. from a checkpoint) after checking
    /// that every expected block is present with the right shape.
    pub fn from_params(spec: ModelSpec, params: ParamStore) -> Result<Self, NnError> {
        spec.validate()?;
        let expected = layout(&spec);
        if expected.len() != params.len() {
            return Err(NnError::Checkpoint(format!("expected {} parameter blocks, found {}", expected.len(), params.len())));
        }
        for b in expected {
            let id = params.id(&b.name).ok_or_else(|| NnError::Checkpoint(format!("missing parameter {}", b.name)))?;
            let shape = params.value(id).shape();
            if shape != [b.rows, b.cols] {
                return Err(NnError::Checkpoint(format!("parameter {} has shape {shape:?}, expected [{}, {}]", b.name, b.rows, b.cols)));
            }
        }
        let rotary = if spec.pe_config.variant.is_rotary() || spec.mode == StackMode::EncoderDecoder {
            Some(RotaryTable::new(spec.head_dim(), spec.pe_config.base, spec.pe_config.max_len)?)
        } else {
            None
        };
        Ok(Model { spec, params, rotary })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    fn id(&self, name: &str) -> ParamId {
        self.params.id(name).unwrap_or_else(|| panic!("model has no parameter {name}"))
    }

    fn bind(&self, g: &mut Graph, name: &str) -> Var {
        g.param(&self.params, self.id(name))
    }

    fn bind_attention(&self, g: &mut Graph, prefix: &str) -> AttnVars {
        AttnVars {
            wq: self.bind(g, &format!("{prefix}.wq")),
            wk: self.bind(g, &format!("{prefix}.wk")),
            wv: self.bind(g, &format!("{prefix}.wv")),
            wo: self.bind(g, &format!("{prefix}.wo")),
            bo: self.bind(g, &format!("{prefix}.bo")),
        }
    }

    fn embed(&self, g: &mut Graph, table: &str, ids: &[usize]) -> Result<Var, NnError> {
        let t = self.bind(g, table);
        let vocab = g.shape(t).0;
        if let Some((position, &id)) = ids.iter().enumerate().find(|(_, &id)| id >= vocab) {
            return Err(NnError::TokenOutOfVocab { position, id, vocab });
        }
        let e = g.gather_rows(t, ids.to_vec());
        Ok(g.scale(e, (self.spec.d_model as f64).sqrt()))
    }

    fn rotation(&self, n: usize, sign: Option<&SignPattern>) -> Result<HeadPosition, NnError> {
        let table = self.rotary.as_ref().expect("rotary table");
        let positions: Vec<usize> = (0..n).collect();
        let (cos, sin) = rotation_coeffs(&positions, sign, table, self.spec.sprm_mode)?;
        Ok(HeadPosition::Rotation { cos, sin })
    }

    /// Runs one encoder stream through embeddings and all layers.
    fn encode_stream(
        &self,
        g: &mut Graph,
        stream: Stream,
        input: &StreamInput,
        causal: bool,
        ctx: &mut ForwardCtx,
    ) -> Result<Var, NnError> {
        let n = input.ids.len();
        if n == 0 {
            return Err(NnError::InvalidArgument("empty input sequence".into()));
        }
        let pe = &self.spec.pe_config;
        let d = self.spec.d_model;
        let table = if stream == Stream::Uni { "tok_emb" } else { "bi_emb" };
        let mut h = self.embed(g, table, &input.ids)?;
        let check_len = |idx: &[usize]| -> Result<(), NnError> {
            match idx.iter().find(|&&i| i >= pe.max_len) {
                Some(&i) => Err(crate::posenc::PosEncError::IndexOutOfRange { index: i, len: pe.max_len }.into()),
                None => Ok(()),
            }
        };
        match pe.variant {
            PeVariant::Sinusoidal => {
                let p = g.constant(sinusoidal_table(n, d, pe.base)?);
                h = g.add(h, p);
            }
            PeVariant::Dynamic => {
                let idx: Vec<usize> = (0..n).collect();
                check_len(&idx)?;
                let t = self.bind(g, "pos_dyn");
                let p = g.gather_rows(t, idx);
                h = g.add(h, p);
            }
            PeVariant::Spdrpe => {
                let spi = input.spi.as_ref().ok_or_else(|| NnError::MissingMetadata("spi".into()))?;
                if spi.len() != n {
                    return Err(NnError::Shape(format!("spi has {} entries for {n} tokens", spi.len())));
                }
                check_len(spi)?;
                let t = self.bind(g, "pos_spi");
                let p = g.gather_rows(t, spi.clone());
                h = g.add(h, p);
            }
            _ => {}
        }
        h = ctx.dropout(g, h);

        let rotation = match pe.variant {
            PeVariant::Rotary => Some(self.rotation(n, None)?),
            PeVariant::SpRotary => {
                let mask = input.sp_mask.as_ref().ok_or_else(|| NnError::MissingMetadata("sp_mask".into()))?;
                if mask.len() != n {
                    return Err(NnError::Shape(format!("sp_mask has {} entries for {n} tokens", mask.len())));
                }
                let sign = SignPattern::from_mask(mask);
                Some(self.rotation(n, Some(&sign))?)
            }
            _ => None,
        };
        let record = ctx.record_attention && stream == Stream::Uni;
        for l in 0..self.spec.n_layers {
            let p = format!("{}.{l}", stream.prefix());
            let w = self.bind_attention(g, &format!("{p}.attn"));
            let pos = match (&rotation, pe.variant.has_relative_term()) {
                (Some(r), _) => r.clone(),
                (None, true) => HeadPosition::Relative { table: self.bind(g, &format!("{p}.rel")), clip: pe.clip_k },
                (None, false) => HeadPosition::None,
            };
            let (a, probs) = multi_head_attention(g, h, h, &w, self.spec.n_heads, &pos, causal)?;
            if record {
                ctx.attention.push(probs);
            }
            h = self.residual_norm(g, h, a, &format!("{p}.ln1"), ctx);
            h = self.feed_forward_block(g, h, &p, ctx);
        }
        Ok(h)
    }

    fn residual_norm(&self, g: &mut Graph, x: Var, sub: Var, ln: &str, ctx: &mut ForwardCtx) -> Var {
        let sub = ctx.dropout(g, sub);
        let sum = g.add(x, sub);
        let gamma = self.bind(g, &format!("{ln}_g"));
        let beta = self.bind(g, &format!("{ln}_b"));
        layer_norm(g, sum, gamma, beta)
    }

    fn feed_forward_block(&self, g: &mut Graph, h: Var, p: &str, ctx: &mut ForwardCtx) -> Var {
        let w1 = self.bind(g, &format!("{p}.ff_w1"));
        let b1 = self.bind(g, &format!("{p}.ff_b1"));
        let w2 = self.bind(g, &format!("{p}.ff_w2"));
        let b2 = self.bind(g, &format!("{p}.ff_b2"));
        let z = g.matmul(h, w1);
        let z = g.add_row(z, b1);
        let z = g.gelu(z);
        let z = g.matmul(z, w2);
        let f = g.add_row(z, b2);
        self.residual_norm(g, h, f, &format!("{p}.ln2"), ctx)
    }

    /// Encoder output `[n, d_model]`, with the bigram stream blended in
    /// when enabled.
    pub fn encode(&self, g: &mut Graph, input: &EncoderInput, causal: bool, ctx: &mut ForwardCtx) -> Result<Var, NnError> {
        let uni = self.encode_stream(g, Stream::Uni, &input.unigram, causal, ctx)?;
        if !self.spec.use_bigram_stream {
            return Ok(uni);
        }
        let n = input.unigram.ids.len();
        let Some(bi_in) = input.bigram.as_ref().filter(|b| !b.ids.is_empty()) else {
            // Single-token inputs have no bigrams: the bigram stream is all padding.
            let a = self.bind(g, "stream_a");
            return Ok(g.scalar_mul(a, uni));
        };
        if bi_in.ids.len() >= n + 1 {
            return Err(NnError::Shape(format!("{} bigrams for {n} tokens", bi_in.ids.len())));
        }
        let bi = self.encode_stream(g, Stream::Bi, bi_in, causal, ctx)?;
        let a = self.bind(g, "stream_a");
        let b = self.bind(g, "stream_b");
        let align = if causal { StreamAlignment::ShiftRight } else { StreamAlignment::RightPad };
        Ok(combine_streams_graph(g, uni, bi, a, b, align)?)
    }

    /// Next-token logits `[n, vocab]` (causal mode).
    pub fn lm_logits(&self, g: &mut Graph, input: &EncoderInput, ctx: &mut ForwardCtx) -> Result<Var, NnError> {
        self.expect_mode(StackMode::Causal)?;
        let h = self.encode(g, input, true, ctx)?;
        let logits = if self.spec.tie_embeddings {
            let e = self.bind(g, "tok_emb");
            g.matmul_nt(h, e)
        } else {
            let w = self.bind(g, "out_w");
            g.matmul(h, w)
        };
        let b = self.bind(g, "out_b");
        Ok(g.add_row(logits, b))
    }

    /// Class logits `[1, n_classes]` from mean-pooled encoder states.
    pub fn class_logits(&self, g: &mut Graph, input: &EncoderInput, ctx: &mut ForwardCtx) -> Result<Var, NnError> {
        self.expect_mode(StackMode::Encoder)?;
        let h = self.encode(g, input, false, ctx)?;
        let pooled = g.mean_rows(h);
        let w = self.bind(g, "cls_w");
        let b = self.bind(g, "cls_b");
        let z = g.matmul(pooled, w);
        Ok(g.add_row(z, b))
    }

    /// Source encoding for translation.
    pub fn encode_source(&self, g: &mut Graph, input: &EncoderInput, ctx: &mut ForwardCtx) -> Result<Var, NnError> {
        self.expect_mode(StackMode::EncoderDecoder)?;
        self.encode(g, input, false, ctx)
    }

    /// Decoder logits `[m, target_vocab]` for target prefix `tgt_in`.
    pub fn decode_logits(&self, g: &mut Graph, memory: Var, tgt_in: &[usize], ctx: &mut ForwardCtx) -> Result<Var, NnError> {
        self.expect_mode(StackMode::EncoderDecoder)?;
        let m = tgt_in.len();
        if m == 0 {
            return Err(NnError::InvalidArgument("empty decoder input".into()));
        }
        let mut h = self.embed(g, "tgt_emb", tgt_in)?;
        h = ctx.dropout(g, h);
        // Targets are monolingual, so the decoder's sign pattern is all +1.
        let rot = self.rotation(m, None)?;
        for l in 0..self.spec.n_layers {
            let p = format!("dec.{l}");
            let ws = self.bind_attention(g, &format!("{p}.self"));
            let (a, _) = multi_head_attention(g, h, h, &ws, self.spec.n_heads, &rot, true)?;
            h = self.residual_norm(g, h, a, &format!("{p}.ln0"), ctx);
            let wc = self.bind_attention(g, &format!("{p}.cross"));
            let (c, _) = multi_head_attention(g, h, memory, &wc, self.spec.n_heads, &HeadPosition::None, false)?;
            h = self.residual_norm(g, h, c, &format!("{p}.ln1"), ctx);
            h = self.feed_forward_block(g, h, &p, ctx);
        }
        let w = self.bind(g, "out_w");
        let b = self.bind(g, "out_b");
        let z = g.matmul(h, w);
        Ok(g.add_row(z, b))
    }

    fn expect_mode(&self, mode: StackMode) -> Result<(), NnError> {
        if self.spec.mode != mode {
            return Err(NnError::InvalidSpec(format!("operation needs {mode:?} mode, model is {:?}", self.spec.mode)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Zeros,
    Const(f64),
    Uniform(f64),
}

struct Block {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

/// Every parameter block of a spec, in creation order.
fn layout(spec: &ModelSpec) -> Vec<Block> {
    let mut out = Vec::new();
    let (d, ff) = (spec.d_model, spec.d_ff);
    let mut add = |name: String, rows: usize, cols: usize, init: Init| out.push(Block { name, rows, cols, init });
    let lim = |fan_in: usize| Init::Uniform(1.0 / (fan_in as f64).sqrt());
    let pe = &spec.pe_config;

    add("tok_emb".into(), spec.vocab_size, d, lim(d));
    let mut streams = vec![Stream::Uni];
    if spec.use_bigram_stream {
        add("bi_emb".into(), spec.bigram_vocab_size, d, lim(d));
        streams.push(Stream::Bi);
    }
    match pe.variant {
        PeVariant::Dynamic => add("pos_dyn".into(), pe.max_len, d, Init::Zeros),
        PeVariant::Spdrpe => add("pos_spi".into(), pe.max_len, d, Init::Zeros),
        _ => {}
    }
    let attention = |add: &mut dyn FnMut(String, usize, usize, Init), prefix: &str| {
        for w in ["wq", "wk", "wv", "wo"] {
            add(format!("{prefix}.{w}"), d, d, lim(d));
        }
        add(format!("{prefix}.bo"), 1, d, Init::Zeros);
    };
    let tail = |add: &mut dyn FnMut(String, usize, usize, Init), p: &str| {
        add(format!("{p}.ln1_g"), 1, d, Init::Const(1.0));
        add(format!("{p}.ln1_b"), 1, d, Init::Zeros);
        add(format!("{p}.ff_w1"), d, ff, lim(d));
        add(format!("{p}.ff_b1"), 1, ff, Init::Zeros);
        add(format!("{p}.ff_w2"), ff, d, lim(ff));
        add(format!("{p}.ff_b2"), 1, d, Init::Zeros);
        add(format!("{p}.ln2_g"), 1, d, Init::Const(1.0));
        add(format!("{p}.ln2_b"), 1, d, Init::Zeros);
    };
    for s in &streams {
        for l in 0..spec.n_layers {
            let p = format!("{}.{l}", s.prefix());
            attention(&mut add, &format!("{p}.attn"));
            if pe.variant.has_relative_term() {
                add(format!("{p}.rel"), 2 * pe.clip_k + 1, d, Init::Zeros);
            }
            tail(&mut add, &p);
        }
    }
    if spec.use_bigram_stream {
        add("stream_a".into(), 1, 1, Init::Const(0.5));
        add("stream_b".into(), 1, 1, Init::Const(0.5));
    }
    match spec.mode {
        StackMode::Causal => {
            if !spec.tie_embeddings {
                add("out_w".into(), d, spec.vocab_size, lim(d));
            }
            add("out_b".into(), 1, spec.vocab_size, Init::Zeros);
        }
        StackMode::Encoder => {
            add("cls_w".into(), d, spec.n_classes, lim(d));
            add("cls_b".into(), 1, spec.n_classes, Init::Zeros);
        }
        StackMode::EncoderDecoder => {
            add("tgt_emb".into(), spec.target_vocab_size, d, lim(d));
            for l in 0..spec.n_layers {
                let p = format!("dec.{l}");
                attention(&mut add, &format!("{p}.self"));
                attention(&mut add, &format!("{p}.cross"));
                add(format!("{p}.ln0_g"), 1, d, Init::Const(1.0));
                add(format!("{p}.ln0_b"), 1, d, Init::Zeros);
                tail(&mut add, &p);
            }
            add("out_w".into(), d, spec.target_vocab_size, lim(d));
            add("out_b".into(), 1, spec.target_vocab_size, Init::Zeros);
        }
    }
    out
}
