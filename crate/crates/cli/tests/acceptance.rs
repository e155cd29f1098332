//! Acceptance criteria 1 to 8. Prints one line per criterion and exits
//! nonzero when any of them fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use codemix::corpus::*;
use codemix::nn::{registered_checks, Tensor};
use codemix::posenc::*;
use codemix::rng::rng_for;
use codemix::tasks::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()))
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, random_vec(rng, rows * cols)).unwrap()
}

fn full_rotation(table: &RotaryTable, m: usize) -> Vec<Vec<f64>> {
    let d = table.d_model();
    let mut r = vec![vec![0.0; d]; d];
    for i in 0..d / 2 {
        let b = table.block(m, i);
        for (a, row) in b.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                r[2 * i + a][2 * i + c] = *v;
            }
        }
    }
    r
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `q . R(angle_i) k` per pair with the angle computed from scratch.
fn rotated_score(q: &[f64], k: &[f64], offset: f64, base: f64) -> f64 {
    let d = q.len();
    (0..d / 2)
        .map(|i| {
            let theta = base.powf(-2.0 * i as f64 / d as f64);
            let (s, c) = (offset * theta).sin_cos();
            let (k0, k1) = (c * k[2 * i] - s * k[2 * i + 1], s * k[2 * i] + c * k[2 * i + 1]);
            q[2 * i] * k0 + q[2 * i + 1] * k1
        })
        .sum()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let base = 10000.0;
    let mut rng = rng_for(1, "acceptance", 0);
    let (mut ortho, mut norm, mut shift) = (0.0f64, 0.0f64, 0.0f64);
    for d in [2, 4, 6, 8] {
        let table = RotaryTable::new(d, base, 16).map_err(|e| e.to_string())?;
        for m in 0..16 {
            let r = full_rotation(&table, m);
            for a in 0..d {
                for b in 0..d {
                    let mtm: f64 = (0..d).map(|k| r[k][a] * r[k][b]).sum();
                    ortho = ortho.max((mtm - if a == b { 1.0 } else { 0.0 }).abs());
                }
            }
            let x = random_vec(&mut rng, d);
            let y = apply_rotary(&x, m, &table, Sign::Forward).map_err(|e| e.to_string())?;
            norm = norm.max((dot(&x, &x).sqrt() - dot(&y, &y).sqrt()).abs());
        }
        for seq in 1..=16 {
            let q = random_vec(&mut rng, d);
            let k = random_vec(&mut rng, d);
            for m in 0..seq {
                let rq = apply_rotary(&q, m, &table, Sign::Forward).unwrap();
                for n in 0..seq {
                    let rk = apply_rotary(&k, n, &table, Sign::Forward).unwrap();
                    let oracle = rotated_score(&q, &k, n as f64 - m as f64, base);
                    shift = shift.max((dot(&rq, &rk) - oracle).abs());
                }
            }
        }
    }
    ensure(ortho < 1e-9, || format!("orthogonality error {ortho:e}"))?;
    ensure(norm < 1e-12, || format!("norm drift {norm:e}"))?;
    ensure(shift < 1e-9, || format!("relative shift error {shift:e}"))?;

    let table = RotaryTable::new(2, base, 64).unwrap();
    let theta = table.theta()[0];
    let mut complex = 0.0f64;
    for m in 0..64 {
        let x = random_vec(&mut rng, 2);
        let y = apply_rotary(&x, m, &table, Sign::Forward).unwrap();
        let (s, c) = (m as f64 * theta).sin_cos();
        let (re, im) = (x[0] * c - x[1] * s, x[0] * s + x[1] * c);
        complex = complex.max((y[0] - re).abs()).max((y[1] - im).abs());
    }
    ensure(complex < 1e-9, || format!("complex form error {complex:e}"))?;
    within(start.elapsed(), 10.0)?;
    Ok(format!("ortho {ortho:.1e}, norm {norm:.1e}, shift {shift:.1e}, complex {complex:.1e}"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_for(2, "acceptance", 0);
    let mut cases = 0;
    for d in [2, 4, 8] {
        let table = RotaryTable::new(d, 10000.0, 32).unwrap();
        for len in 1..=12 {
            let x = random_matrix(&mut rng, len, d);
            let proj = ProjectionSet::new(random_matrix(&mut rng, d, d), random_matrix(&mut rng, d, d));
            let pos: Vec<usize> = (0..len).collect();
            let plain = attn_rotary(&x, &pos, &table, &proj).unwrap();
            for mode in [SprmMode::Transpose, SprmMode::Negate] {
                let sp = attn_sp_rotary(&x, &pos, &SignPattern::all_forward(len), &table, mode, &proj).unwrap();
                ensure(sp == plain, || format!("all-forward pattern differs from rotary at d={d} len={len}"))?;
            }
            // Position 0 cannot be a switching point.
            for m in 1..len {
                let sign = build_spm(&[m], len).unwrap();
                let sprm = build_sprm(&pos, &sign, &table, SprmMode::Transpose).unwrap();
                for (p, blocks) in sprm.blocks.iter().enumerate() {
                    for (i, b) in blocks.iter().enumerate() {
                        let rm = table.block(p, i);
                        let want = if p == m { [[rm[0][0], rm[1][0]], [rm[0][1], rm[1][1]]] } else { rm };
                        ensure(*b == want, || format!("block {i} at position {p} (sp {m}) is not exact"))?;
                    }
                }
                cases += 1;
            }
        }
    }

    // d = 2: a key behind a switch sits at effective relative angle (i + j) theta.
    let base = 10000.0;
    let table = RotaryTable::new(2, base, 32).unwrap();
    let mut worst = 0.0f64;
    for len in 2..=10 {
        let x = random_matrix(&mut rng, len, 2);
        let pos: Vec<usize> = (0..len).collect();
        for j in 1..len {
            let sign = build_spm(&[j], len).unwrap();
            let a = attn_sp_rotary(&x, &pos, &sign, &table, SprmMode::Transpose, &ProjectionSet::identity(2)).unwrap();
            for i in (0..len).filter(|&i| i != j) {
                let oracle = rotated_score(x.row(i), x.row(j), -((i + j) as f64), base) / 2f64.sqrt();
                worst = worst.max((a.get(i, j) - oracle).abs());
            }
        }
    }
    ensure(worst < 1e-9, || format!("angle algebra error {worst:e}"))?;
    within(start.elapsed(), 10.0)?;
    Ok(format!("{cases} sign patterns exact, angle oracle {worst:.1e}"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let (eps, tol) = (1e-4, 1e-4);
    let checks = registered_checks();
    let mut worst = (String::new(), 0.0f64);
    for seed in [0u64, 1] {
        for c in &checks {
            let r = c.run(seed, eps, tol);
            if r.max_rel_err() > worst.1 {
                worst = (r.name.clone(), r.max_rel_err());
            }
            ensure(r.passed(), || format!("{} seed {seed}: relative error {:e}", r.name, r.max_rel_err()))?;
        }
    }
    within(start.elapsed(), 120.0)?;
    Ok(format!("{} checks x 2 seeds, worst {} {:.1e}", checks.len(), worst.0, worst.1))
}

fn tokens(spec: &[(&str, LanguageTag)]) -> Vec<Token> {
    spec.iter().map(|(w, t)| Token::new(w, *t).unwrap()).collect()
}

fn cmi_of(tags: &[LanguageTag], w: CmiWeights) -> f64 {
    let toks: Vec<Token> = tags.iter().enumerate().map(|(i, t)| Token::new(&format!("w{i}"), *t).unwrap()).collect();
    Utterance::new(toks, &w).unwrap().cmi
}

fn criterion_4() -> Outcome {
    use LanguageTag::{L1, L2};
    let start = Instant::now();
    let u = Utterance::new(
        tokens(&[("ye", L1), ("gaana", L1), ("enjoy", L2), ("kare", L1)]),
        &CmiWeights::default(),
    )
    .unwrap();
    ensure(u.spi == [0, 1, 0, 0], || format!("spi {:?}", u.spi))?;

    let half = CmiWeights::new(0.5, 0.5).unwrap();
    ensure(cmi_of(&[L1, L1, L1, L1], half) == 0.0, || "monolingual cmi is not 0".into())?;
    let c = cmi_of(&[L1, L2, L1], half);
    ensure(c == 50.0, || format!("(L1,L2,L1) cmi {c}"))?;
    let ratio_only = CmiWeights::new(1.0, 0.0).unwrap();
    let (ti, tj) = ([L1, L1, L2, L2], [L1, L2, L1, L2]);
    ensure(cmi_of(&ti, ratio_only) == 50.0 && cmi_of(&tj, ratio_only) == 50.0, || "ratio-only cmi".into())?;
    for wp in [0.1, 0.5, 1.0] {
        let w = CmiWeights::new(1.0 - wp, wp).unwrap();
        ensure(cmi_of(&tj, w) > cmi_of(&ti, w), || format!("switch ordering fails at w_p={wp}"))?;
    }

    let (k, beta) = (7.5, 0.62);
    let clean: Vec<(f64, f64)> = (1..=30).map(|i| (i as f64 * 100.0, k * (i as f64 * 100.0).powf(beta))).collect();
    let fit = fit_heaps(&clean).map_err(|e| e.to_string())?;
    ensure((fit.beta - beta).abs() < 1e-12 && (fit.k - k).abs() < 1e-9, || format!("noiseless fit {fit:?}"))?;

    let mut rng = rng_for(4, "acceptance", 0);
    let noise = Normal::<f64>::new(0.0, 0.05).unwrap();
    let mut noisy = Vec::new();
    let mut last = 0.0f64;
    for i in 1..=40 {
        let n = 50.0 * 1.2f64.powi(i);
        let v = (k * n.powf(beta) * noise.sample(&mut rng).exp()).max(last);
        noisy.push((n, v));
        last = v;
    }
    let nfit = fit_heaps(&noisy).map_err(|e| e.to_string())?;
    ensure((nfit.beta - beta).abs() <= 0.02, || format!("noisy beta {} vs {beta}", nfit.beta))?;
    within(start.elapsed(), 30.0)?;
    Ok(format!("spi {:?}, noisy beta {:.4} (true {beta})", u.spi, nfit.beta))
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let spec = SynthSpec::with_vocab_sizes(60, 20, 20);
    let corpus = generate_synthetic_corpus(&spec, 5).map_err(|e| e.to_string())?;
    for v in [2usize, 37, 1000] {
        let r = perplexity(&UniformScorer { vocab_size: v }, &corpus).map_err(|e| e.to_string())?;
        let err = (r.overall - v as f64).abs().max((r.average - v as f64).abs());
        ensure(err < 1e-9 * v as f64, || format!("uniform perplexity {} for V={v}", r.overall))?;
    }

    let perfect = macro_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).map_err(|e| e.to_string())?;
    ensure(perfect.score == 1.0, || format!("perfect f1 {}", perfect.score))?;
    let degenerate = macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).map_err(|e| e.to_string())?;
    ensure((degenerate.score - 1.0 / 3.0).abs() < 1e-15, || format!("degenerate f1 {}", degenerate.score))?;

    let same = vec![words("the cat sat on the mat"), words("a dog ran")];
    let id = bleu(&same, &same, 4, Smoothing::AddOne).map_err(|e| e.to_string())?;
    ensure((id.score - 100.0).abs() < 1e-9, || format!("identity bleu {}", id.score))?;
    let clip = bleu(&[words("the the the")], &[words("the cat")], 4, Smoothing::AddOne).map_err(|e| e.to_string())?;
    let oracle = 100.0 * (1.0f64 / 3.0 * 1.0 / 3.0 * 1.0 / 2.0 * 1.0).powf(0.25);
    ensure((clip.score - oracle).abs() < 1e-6, || format!("clipping bleu {} vs {oracle}", clip.score))?;
    within(start.elapsed(), 10.0)?;
    Ok(format!("degenerate f1 {:.6}, clipped bleu {:.6}", degenerate.score, clip.score))
}

// Budget and regression bound for the switching-point experiment.
const SP_STEPS: u64 = 1500;
const SP_D_MODEL: usize = 48;
const SP_LAYERS: usize = 2;
const SP_UTTERANCES: usize = 6000;
// First oracle run: margins 0.825, 0.786, 0.083 (mean 0.565).
const SP_MIN_MEAN_MARGIN: f64 = 0.25;

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut margins = Vec::new();
    let mut params = 0;
    for seed in 0..3u64 {
        let mut spec = SynthSpec::with_vocab_sizes(SP_UTTERANCES, 60, 60).with_post_switch(10, 10);
        spec.min_len = 8;
        spec.max_len = 16;
        let corpus = generate_synthetic_corpus(&spec, 100 + seed).map_err(|e| e.to_string())?;
        let split = split_corpus(&corpus, SplitRatio::default(), seed).map_err(|e| e.to_string())?;
        let mut ppl = Vec::new();
        for variant in [PeVariant::Rotary, PeVariant::SpRotary] {
            let mut m = ModelConfig::new(variant, SP_LAYERS, 6, SP_D_MODEL, 2 * SP_D_MODEL);
            m.dropout_p = 0.1;
            let t = TrainConfig::new(SP_STEPS, 16, SP_STEPS / 5);
            let out = train_lm(&split.train, &m, &t, seed, None, &mut |_| {}).map_err(|e| e.to_string())?;
            ensure(out.diverged_at.is_none(), || format!("{variant:?} seed {seed} diverged"))?;
            let scorer = LmScorer::from_checkpoint(&out.checkpoint).map_err(|e| e.to_string())?;
            params = scorer.model.num_params();
            ppl.push(perplexity(&scorer, &split.test).map_err(|e| e.to_string())?.overall);
        }
        let margin = ppl[0] - ppl[1];
        println!("  seed {seed}: rotary {:.3}, sp_rotary {:.3}, margin {margin:.3}", ppl[0], ppl[1]);
        wins += usize::from(margin > 0.0);
        margins.push(margin);
    }
    let mean = margins.iter().sum::<f64>() / 3.0;
    ensure(params <= 1_000_000, || format!("{params} parameters"))?;
    ensure(wins >= 2, || format!("sp_rotary better in {wins} of 3 seeds"))?;
    ensure(mean >= SP_MIN_MEAN_MARGIN, || format!("mean margin {mean:.3} below {SP_MIN_MEAN_MARGIN}"))?;
    within(start.elapsed(), 1800.0)?;
    Ok(format!("{wins}/3 seeds, mean margin {mean:.3}, {params} params, {:.0}s", start.elapsed().as_secs_f64()))
}

fn criterion_7() -> Outcome {
    let spec = SynthSpec::with_vocab_sizes(2000, 60, 60);
    let corpus = generate_synthetic_corpus(&spec, 7).map_err(|e| e.to_string())?;
    let h = bucket_cmi(&corpus);
    let mut worst = 0.0f64;
    for b in CmiBucket::ALL {
        let gap = (h.percent(b) - REFERENCE_MIX_PERCENT[b.index()]).abs();
        worst = worst.max(gap);
        ensure(gap <= 3.0, || format!("bucket {} at {:.2}%", b.label(), h.percent(b)))?;
    }

    let report = perplexity(&UniformScorer { vocab_size: 50 }, &corpus).map_err(|e| e.to_string())?;
    let csv = report.to_csv();
    let labels: Vec<&str> = csv.lines().skip(1).filter_map(|l| l.split(',').next()).collect();
    let want = ["0-10", "11-20", "21-30", "31-40", "41-50"];
    ensure(labels.len() > want.len() && labels[..want.len()] == want, || format!("rows {labels:?}"))?;
    ensure(labels.last() == Some(&"Average"), || format!("last row {:?}", labels.last()))?;
    Ok(format!("rows {}, worst bucket gap {worst:.2} pp", labels.join("|")))
}

fn codemix(dir: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_codemix")).current_dir(dir).args(args).output().map_err(|e| e.to_string())?;
    ensure(o.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)))
}

fn same_dirs(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = fs::read_dir(a).map_err(|e| e.to_string())?.map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for n in &names {
        let (x, y) = (fs::read(a.join(n)).map_err(|e| e.to_string())?, fs::read(b.join(n)).map_err(|e| e.to_string())?);
        ensure(x == y, || format!("{} differs between reruns", a.join(n).display()))?;
    }
    Ok(names.len())
}

fn criterion_8() -> Outcome {
    let t = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let dir = t.path();
    let model = "[model]\nvariant = \"SP_ROTARY\"\nn_layers = 1\nn_heads = 2\nd_model = 8\nd_ff = 16\n\
                 [train]\nsteps = 10\nbatch_size = 4\nwarmup_steps = 5\n";
    let files = [
        ("synth.toml", "seed = 3\n[synth]\nn_utterances = 120\nn_l1 = 20\nn_l2 = 20\npost_switch = [4, 4]\n\
                        label_rule = \"first-switch-parity\"\ntranslate = true\nsplit = true\n"
            .to_string()),
        ("train.toml", format!("[data]\ncorpus = \"data/train.jsonl\"\ntest = \"data/test.jsonl\"\n{model}")),
        ("compare.toml", format!(
            "[data]\ncorpus = \"data/train.jsonl\"\ntest = \"data/test.jsonl\"\n{model}\
             [compare]\ntask = \"lm\"\nvariants = [\"ROTARY\", \"SP_ROTARY\"]\n"
        )),
        ("analyze.toml", "[data]\ncorpus = \"data/corpus.jsonl\"\n".to_string()),
    ];
    for (name, text) in &files {
        fs::write(dir.join(name), text).map_err(|e| e.to_string())?;
    }
    codemix(dir, &["synth", "--config", "synth.toml", "--out", "data"])?;
    codemix(dir, &["synth", "--config", "synth.toml", "--out", "data2"])?;
    let mut compared = same_dirs(&dir.join("data"), &dir.join("data2"))?;

    let trained = [("train-lm", "eval-ppl", "lm"), ("train-sa", "eval-sa", "sa"), ("train-mt", "eval-mt", "mt")];
    for (train, eval, tag) in trained {
        for run in ["a", "b"] {
            codemix(dir, &[train, "--config", "train.toml", "--out", &format!("{tag}-{run}")])?;
        }
        compared += same_dirs(&dir.join(format!("{tag}-a")), &dir.join(format!("{tag}-b")))?;
        let eval_cfg = format!("{tag}-eval.toml");
        fs::write(dir.join(&eval_cfg), format!("[data]\ncheckpoint = \"{tag}-a/checkpoint.json\"\ntest = \"data/test.jsonl\"\n"))
            .map_err(|e| e.to_string())?;
        for run in ["a", "b"] {
            codemix(dir, &[eval, "--config", &eval_cfg, "--out", &format!("{tag}-eval-{run}")])?;
        }
        compared += same_dirs(&dir.join(format!("{tag}-eval-a")), &dir.join(format!("{tag}-eval-b")))?;
    }
    for (cmd, cfg) in [("compare-pe", "compare.toml"), ("analyze", "analyze.toml")] {
        for run in ["a", "b"] {
            codemix(dir, &[cmd, "--config", cfg, "--out", &format!("{cmd}-{run}")])?;
        }
        compared += same_dirs(&dir.join(format!("{cmd}-a")), &dir.join(format!("{cmd}-b")))?;
    }
    Ok(format!("{compared} output files byte-identical across reruns"))
}

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, fn() -> Outcome); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let mut failed = 0;
    for (n, f) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        match f() {
            Ok(detail) => println!("criterion {n}: PASS ({detail})"),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL ({why})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
