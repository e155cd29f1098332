use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use codemix::corpus::{
    bucket_cmi, fit_heaps, generate_synthetic_corpus, heaps_csv, split_corpus, vocabulary_growth, LanguageTag, Lexicon,
    SplitRatio, Token, Utterance,
};
use codemix::corpus::io::{read_corpus, read_lexicon, write_corpus, Corpus};
use codemix::nn::Checkpoint;
use codemix::posenc::PeVariant;
use codemix::tasks::{
    class_prior_baseline, evaluate_classifier, evaluate_mt, log_csv, perplexity, pretrain_embeddings, sp_attention_contrast,
    train_classifier, train_lm, train_mt, translation_pairs, Classifier, EvalReport, LmScorer, ModelConfig,
    PretrainedEmbeddings, TrainConfig, TrainedModel, Translator,
};

use crate::config::{CompareTask, RunConfig};
use crate::error::CliError;
use crate::output::Outputs;

pub struct Run {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: PathBuf,
    pub timings: bool,
    started: Instant,
}

impl Run {
    pub fn new(cfg: RunConfig, hash: String, out: PathBuf, timings: bool) -> Self {
        Run { cfg, hash, out, timings, started: Instant::now() }
    }

    fn lexicon(&self) -> Result<Option<Lexicon>, CliError> {
        let Some(p) = &self.cfg.data.lexicon else { return Ok(None) };
        Ok(Some(read_lexicon(BufReader::new(File::open(p)?), self.cfg.data.overlap_policy)?))
    }

    fn corpus_at(&self, path: &Path) -> Result<Corpus, CliError> {
        let lex = self.lexicon()?;
        read_corpus(BufReader::new(File::open(path)?), lex.as_ref(), &self.cfg.cmi)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    fn train_corpus(&self) -> Result<Corpus, CliError> {
        self.corpus_at(self.cfg.data.require(&self.cfg.data.corpus, "corpus")?)
    }

    /// `data.test`, falling back to `data.corpus`.
    fn eval_corpus(&self) -> Result<Corpus, CliError> {
        match &self.cfg.data.test {
            Some(p) => self.corpus_at(p),
            None => self.train_corpus(),
        }
    }

    fn checkpoint(&self) -> Result<Checkpoint, CliError> {
        let p = self.cfg.data.require(&self.cfg.data.checkpoint, "checkpoint")?;
        Checkpoint::load(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
    }

    fn report(&self, task: &str, spec: Option<codemix::nn::ModelSpec>) -> EvalReport {
        EvalReport::new(task, self.cfg.seed, &self.hash, spec)
    }

    fn finish(&self, mut report: EvalReport, mut out: Outputs) -> Result<(), CliError> {
        if self.timings {
            report.notes.push(format!("elapsed_s={:.3}", self.started.elapsed().as_secs_f64()));
        }
        out.add("report.json", report.to_json());
        out.add("report.csv", report.to_csv());
        out.commit(&self.out)?;
        Ok(())
    }

    fn model_cfg(&self) -> Result<&ModelConfig, CliError> {
        self.cfg.section(&self.cfg.model, "model")
    }

    fn train_cfg(&self) -> Result<&TrainConfig, CliError> {
        self.cfg.section(&self.cfg.train, "train")
    }

    fn pretrained(&self, corpus: &[Utterance], notes: &mut Vec<String>) -> Result<Option<PretrainedEmbeddings>, CliError> {
        let Some(p) = &self.cfg.pretrain else { return Ok(None) };
        let d = self.model_cfg()?.d_model;
        if p.dims != d {
            return Err(CliError::Config(format!("pretrain.dims {} must equal model.d_model {d}", p.dims)));
        }
        let emb = pretrain_embeddings(corpus, p, self.cfg.seed)?;
        notes.push(format!(
            "skipgram final loss unigram={:.6} bigram={:.6}",
            emb.unigram.epoch_loss.last().unwrap_or(&0.0),
            emb.bigram.epoch_loss.last().unwrap_or(&0.0)
        ));
        Ok(Some(emb))
    }
}

fn require_tags(corpus: &Corpus, variant: PeVariant) -> Result<(), CliError> {
    if variant.needs_switching_points() && !corpus.fully_tagged {
        return Err(CliError::Data(format!(
            "{} needs switching points but the corpus has untagged tokens and no lexicon was given",
            variant.as_str()
        )));
    }
    Ok(())
}

fn train_notes(t: &TrainedModel) -> Vec<String> {
    let mut notes = vec![format!("steps_done={}", t.checkpoint.rng.step)];
    if let Some(last) = t.log.last() {
        notes.push(format!("final_loss={:.6}", last.loss));
    }
    if let Some(s) = t.diverged_at {
        notes.push(format!("diverged_at={s}"));
    }
    notes
}

/// Stages the final checkpoint and log; divergence becomes exit code 4
/// after the last good checkpoint is written.
fn finish_training(run: &Run, trained: &TrainedModel, report: EvalReport, mut out: Outputs) -> Result<(), CliError> {
    out.add_checkpoint("checkpoint.json", &trained.checkpoint)?;
    out.add("train_log.csv", log_csv(&trained.log));
    run.finish(report, out)?;
    match trained.diverged_at {
        Some(s) => Err(CliError::Numerical(format!("loss diverged at step {s}; last good checkpoint written"))),
        None => Ok(()),
    }
}

fn checkpoint_writer(run: &Run) -> Result<impl FnMut(&Checkpoint) + '_, CliError> {
    std::fs::create_dir_all(&run.out)?;
    Ok(move |c: &Checkpoint| {
        let path = run.out.join(format!("checkpoint_step{}.json", c.rng.step));
        if let Err(e) = c.save(&path) {
            eprintln!("warning: could not write {}: {e}", path.display());
        }
    })
}

pub fn analyze(run: &Run) -> Result<(), CliError> {
    let corpus = run.train_corpus()?;
    let hist = bucket_cmi(&corpus.utterances);
    let samples = vocabulary_growth(corpus.utterances.iter().flat_map(|u| u.surfaces()), run.cfg.data.heaps_points);
    let fit = fit_heaps(&samples)?;
    let mut out = Outputs::default();
    out.add("cmi_histogram.csv", hist.to_csv());
    out.add("heaps.csv", heaps_csv(&samples, &fit));
    out.commit(&run.out)?;
    Ok(())
}

pub fn synth(run: &Run) -> Result<(), CliError> {
    let sc = run.cfg.section(&run.cfg.synth, "synth")?;
    let corpus = generate_synthetic_corpus(&sc.spec(run.cfg.cmi), run.cfg.seed)?;
    let mut out = Outputs::default();
    let jsonl = |us: &[Utterance]| -> Result<Vec<u8>, CliError> {
        let mut buf = Vec::new();
        write_corpus(&mut buf, us)?;
        Ok(buf)
    };
    out.add("corpus.jsonl", jsonl(&corpus)?);
    if sc.split {
        let split = split_corpus(&corpus, SplitRatio::default(), run.cfg.seed)?;
        out.add("train.jsonl", jsonl(&split.train)?);
        out.add("test.jsonl", jsonl(&split.test)?);
        for w in &split.warnings {
            eprintln!("warning: {w}");
        }
    }
    out.commit(&run.out)?;
    Ok(())
}

pub fn train_lm_cmd(run: &Run) -> Result<(), CliError> {
    let (mc, tc) = (run.model_cfg()?, run.train_cfg()?);
    let corpus = run.train_corpus()?;
    require_tags(&corpus, mc.variant)?;
    let test = run.cfg.data.test.as_ref().map(|p| run.corpus_at(p)).transpose()?;
    let mut notes = Vec::new();
    let pre = run.pretrained(&corpus.utterances, &mut notes)?;
    let mut writer = checkpoint_writer(run)?;
    let trained = train_lm(&corpus.utterances, mc, tc, run.cfg.seed, pre.as_ref(), &mut writer)?;
    let mut report = run.report("train-lm", Some(trained.checkpoint.spec.clone()));
    report.notes = notes;
    report.notes.extend(train_notes(&trained));
    if let (Some(test), None) = (&test, trained.diverged_at) {
        let scorer = LmScorer::from_checkpoint(&trained.checkpoint)?;
        report.perplexity = Some(perplexity(&scorer, &test.utterances)?);
    }
    finish_training(run, &trained, report, Outputs::default())
}

pub fn eval_ppl(run: &Run) -> Result<(), CliError> {
    let ck = run.checkpoint()?;
    let scorer = LmScorer::from_checkpoint(&ck)?;
    let corpus = run.eval_corpus()?;
    require_tags(&corpus, ck.spec.pe_config.variant)?;
    let mut report = run.report("eval-ppl", Some(ck.spec.clone()));
    report.perplexity = Some(perplexity(&scorer, &corpus.utterances)?);
    run.finish(report, Outputs::default())
}

pub fn train_sa(run: &Run) -> Result<(), CliError> {
    let (mc, tc) = (run.model_cfg()?, run.train_cfg()?);
    let corpus = run.train_corpus()?;
    require_tags(&corpus, mc.variant)?;
    let init = match &run.cfg.data.init_checkpoint {
        Some(p) => Some(Checkpoint::load(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let mut notes = Vec::new();
    let pre = run.pretrained(&corpus.utterances, &mut notes)?;
    let res = train_classifier(&corpus.utterances, &run.cfg.classifier, mc, tc, init.as_ref(), pre.as_ref(), run.cfg.seed)?;
    let mut report = run.report("train-sa", Some(res.trained.checkpoint.spec.clone()));
    report.notes = notes;
    report.notes.extend(train_notes(&res.trained));
    report.notes.push(format!("train_accuracy={:.6}", res.train_accuracy));
    if !res.initialized.is_empty() {
        report.notes.push(format!("initialized {} parameter blocks from data.init_checkpoint", res.initialized.len()));
    }
    if let Some(v) = &res.validation {
        report.notes.push(format!("validation macro_f1={:.6}", v.score));
    }
    if let Some(p) = &run.cfg.data.test {
        let test = run.corpus_at(p)?;
        let clf = Classifier::from_checkpoint(&res.trained.checkpoint)?;
        report.classification = Some(evaluate_classifier(&clf, &test.utterances)?);
        let base = class_prior_baseline(&corpus.utterances, &test.utterances, &clf.labels)?;
        report.notes.push(format!("class-prior baseline macro_f1={:.6}", base.f1.score));
    }
    finish_training(run, &res.trained, report, Outputs::default())
}

pub fn eval_sa(run: &Run) -> Result<(), CliError> {
    let ck = run.checkpoint()?;
    let clf = Classifier::from_checkpoint(&ck)?;
    let corpus = run.eval_corpus()?;
    require_tags(&corpus, ck.spec.pe_config.variant)?;
    let mut report = run.report("eval-sa", Some(ck.spec.clone()));
    let score = evaluate_classifier(&clf, &corpus.utterances)?;
    for c in &score.f1.flagged {
        report.notes.push(format!("label {} absent from gold and predictions; scored 0", score.labels[*c]));
    }
    report.classification = Some(score);
    run.finish(report, Outputs::default())
}

pub fn train_mt_cmd(run: &Run) -> Result<(), CliError> {
    let (mc, tc) = (run.model_cfg()?, run.train_cfg()?);
    let corpus = run.train_corpus()?;
    require_tags(&corpus, mc.variant)?;
    let pairs = translation_pairs(&corpus.utterances)?;
    let mut notes = Vec::new();
    let pre = run.pretrained(&corpus.utterances, &mut notes)?;
    let mut writer = checkpoint_writer(run)?;
    let trained = train_mt(&pairs, mc, tc, run.cfg.seed, pre.as_ref(), &mut writer)?;
    let mut report = run.report("train-mt", Some(trained.checkpoint.spec.clone()));
    report.notes = notes;
    report.notes.extend(train_notes(&trained));
    if let (Some(p), None) = (&run.cfg.data.test, trained.diverged_at) {
        let test = translation_pairs(&run.corpus_at(p)?.utterances)?;
        let tr = Translator::from_checkpoint(&trained.checkpoint)?;
        report.translation = Some(evaluate_mt(&tr, &test, &run.cfg.decode)?);
    }
    finish_training(run, &trained, report, Outputs::default())
}

pub fn eval_mt(run: &Run) -> Result<(), CliError> {
    let ck = run.checkpoint()?;
    let tr = Translator::from_checkpoint(&ck)?;
    let corpus = run.eval_corpus()?;
    require_tags(&corpus, ck.spec.pe_config.variant)?;
    let pairs = translation_pairs(&corpus.utterances)?;
    let mut report = run.report("eval-mt", Some(ck.spec.clone()));
    let score = evaluate_mt(&tr, &pairs, &run.cfg.decode)?;
    let mut hyp = String::new();
    for h in &score.hypotheses {
        hyp.push_str(&h.join(" "));
        hyp.push('\n');
    }
    report.translation = Some(score);
    let mut out = Outputs::default();
    out.add("hypotheses.txt", hyp);
    run.finish(report, out)
}

pub fn compare_pe(run: &Run) -> Result<(), CliError> {
    let cc = run.cfg.section(&run.cfg.compare, "compare")?;
    let (mc, tc) = (run.model_cfg()?, run.train_cfg()?);
    if cc.variants.is_empty() {
        return Err(CliError::Config("compare.variants is empty".into()));
    }
    let corpus = run.train_corpus()?;
    for &v in &cc.variants {
        require_tags(&corpus, v)?;
    }
    let (train, test) = match &run.cfg.data.test {
        Some(p) => (corpus.utterances, run.corpus_at(p)?.utterances),
        None => {
            let s = split_corpus(&corpus.utterances, SplitRatio::default(), run.cfg.seed)?;
            (s.train, s.test)
        }
    };
    let metric = match cc.task {
        CompareTask::Lm => "perplexity",
        CompareTask::Sa => "macro_f1",
    };
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = vec!["variant".into()];
    header.extend(["sin_cos", "index", "dynamic", "spi", "relative", "rm", "sprm"].map(String::from));
    header.extend(["seed", "params", "steps", metric, "delta"].map(String::from));
    if run.timings {
        header.push("wall_clock_s".into());
    }
    wtr.write_record(&header).map_err(|e| CliError::Data(e.to_string()))?;
    let mut rows = Vec::new();
    let mut first = None;
    for &variant in &cc.variants {
        let t0 = Instant::now();
        let mut m = mc.clone();
        m.variant = variant;
        let (value, params, trained) = match cc.task {
            CompareTask::Lm => {
                let t = train_lm(&train, &m, tc, run.cfg.seed, None, &mut |_| {})?;
                let s = LmScorer::from_checkpoint(&t.checkpoint)?;
                (perplexity(&s, &test)?.overall, s.model.num_params(), t)
            }
            CompareTask::Sa => {
                let r = train_classifier(&train, &run.cfg.classifier, &m, tc, None, None, run.cfg.seed)?;
                let clf = Classifier::from_checkpoint(&r.trained.checkpoint)?;
                (evaluate_classifier(&clf, &test)?.f1.score, clf.model.num_params(), r.trained)
            }
        };
        if let Some(s) = trained.diverged_at {
            return Err(CliError::Numerical(format!("{} diverged at step {s}", variant.as_str())));
        }
        let base = *first.get_or_insert(value);
        let mut rec = vec![variant.as_str().to_string()];
        rec.extend(variant.capabilities().flags().iter().map(|&f| u8::from(f).to_string()));
        rec.push(run.cfg.seed.to_string());
        rec.push(params.to_string());
        rec.push(trained.checkpoint.rng.step.to_string());
        rec.push(format!("{value:.6}"));
        rec.push(format!("{:.6}", value - base));
        if run.timings {
            rec.push(format!("{:.3}", t0.elapsed().as_secs_f64()));
        }
        wtr.write_record(&rec).map_err(|e| CliError::Data(e.to_string()))?;
        rows.push(serde_json::json!({
            "variant": variant.as_str(),
            "seed": run.cfg.seed,
            "params": params,
            metric: value,
            "delta": value - base,
        }));
    }
    let mut out = Outputs::default();
    out.add("compare_pe.csv", wtr.into_inner().map_err(|e| CliError::Data(e.to_string()))?);
    let doc = serde_json::json!({
        "schema_version": codemix::tasks::REPORT_SCHEMA_VERSION,
        "task": format!("compare-pe/{metric}"),
        "config_hash": run.hash,
        "rows": rows,
    });
    out.add("compare_pe.json", serde_json::to_string_pretty(&doc).expect("json") + "\n");
    out.commit(&run.out)?;
    Ok(())
}

/// `word/L1` style tokens; untagged words go through the lexicon.
fn parse_utterance(text: &str, lex: Option<&Lexicon>, run: &Run) -> Result<Utterance, CliError> {
    let mut tokens = Vec::new();
    for raw in text.split_whitespace() {
        let (w, tag) = match raw.rsplit_once('/') {
            Some((w, t)) if !w.is_empty() => match t.parse::<LanguageTag>() {
                Ok(tag) => (w, Some(tag)),
                Err(_) => (raw, None),
            },
            _ => (raw, None),
        };
        let tag = match (tag, lex) {
            (Some(t), _) => t,
            (None, Some(l)) => l.lookup(w),
            (None, None) => {
                return Err(CliError::Data(format!("token {raw:?} has no tag and no lexicon was given")));
            }
        };
        tokens.push(Token::new(w, tag)?);
    }
    if tokens.is_empty() {
        return Err(CliError::Config("attention.text is empty".into()));
    }
    Ok(Utterance::new(tokens, &run.cfg.cmi)?)
}

pub fn dump_attention(run: &Run) -> Result<(), CliError> {
    let ac = run.cfg.section(&run.cfg.attention, "attention")?;
    let ck = run.checkpoint()?;
    let scorer = LmScorer::from_checkpoint(&ck)?;
    let lex = run.lexicon()?;
    let u = parse_utterance(&ac.text, lex.as_ref(), run)?;
    let map = scorer.attention(&u, ac.layer, ac.head)?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let header = map.header();
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    wtr.write_record(std::iter::once(String::new()).chain(header.iter().cloned())).map_err(csv_err)?;
    for (label, row) in header.iter().zip(&map.weights) {
        wtr.write_record(std::iter::once(label.clone()).chain(row.iter().map(|x| x.to_string()))).map_err(csv_err)?;
    }
    let mut out = Outputs::default();
    out.add("attention.csv", wtr.into_inner().map_err(|e| CliError::Data(e.to_string()))?);
    if let Some(p) = &run.cfg.data.test {
        let test = run.corpus_at(p)?;
        let (sp, non, n) = sp_attention_contrast(&scorer, &test.utterances, ac.layer, ac.head)?;
        out.add(
            "attention_summary.csv",
            format!("layer,head,utterances,sp_column_mass,non_sp_column_mass\n{},{},{n},{sp:.9},{non:.9}\n", ac.layer, ac.head),
        );
    }
    out.commit(&run.out)?;
    Ok(())
}
