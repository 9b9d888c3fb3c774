//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p pase --test acceptance`. `ACCEPTANCE_ONLY=3,7`
//! restricts the run to the listed criteria.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pase::dsp::{lps, mfcc, prosody, AudioChunk, FeatureKind, FeatureMatrix, HOP, LOG_FLOOR, NFFT, VOICING_THRESHOLD};
use pase::encoder::{Encoder, EncoderConfig};
use pase::io::{read_features, read_wav, synth_corpus, synth_utterance, write_features, Manifest, Speaker, Split, SynthSpec};
use pase::nn::{Graph, ParamStore, Phase, Tensor};
use pase::probe::{ablation_deltas, run_ablation, LabeledUtterance, ProbeConfig, ProbeModel};
use pase::trainer::{
    gradient_suite, load_checkpoint, lr_at, save_checkpoint, total_loss, ChunkRef, TrainConfig, Trainer, TrainingSet, Utterance,
};
use pase::workers::{materialize, sample_gim, sample_lim, sample_spc, ChunkInfo, SpcWindow, WorkerConfig, WorkerName, Workers};

type Outcome = Result<String, String>;
type Criterion = (usize, &'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn noise(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-0.5f32..0.5)).collect()
}

fn encoder(config: EncoderConfig, seed: u64) -> (Encoder, ParamStore<f32>) {
    let mut store = ParamStore::new();
    let enc = Encoder::new(config, &mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (enc, store)
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let checks = gradient_suite().map_err(e2s)?;
    let elapsed = start.elapsed();
    let worst = checks.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    let entries: usize = checks.iter().map(|c| c.checked).sum();
    let narrowed: usize = checks.iter().map(|c| c.narrowed).sum();
    for c in &checks {
        ensure(c.passed(), || format!("{} max relative error {:.3e}", c.name, c.max_rel_error))?;
    }
    ensure(checks.iter().any(|c| c.name.starts_with("stack/")), || "end-to-end stack not checked".into())?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} checks, {entries} entries, worst {:.2e} ({}), {narrowed} entries on a narrowed step, {:.1}s",
        checks.len(),
        worst.max_rel_error,
        worst.name,
        elapsed.as_secs_f64()
    ))
}

fn shape_laws() -> Outcome {
    let (enc, store) = encoder(EncoderConfig::full(), 1);
    let mut wstore = ParamStore::<f32>::new();
    let workers = Workers::new(WorkerConfig::full(), 100, &mut wstore, &mut ChaCha8Rng::seed_from_u64(2));
    for t in [160, 16_000, 32_000] {
        let chunk = AudioChunk::new(noise(t, t as u64), "u", 0);
        let emb = enc.encode(&store, &chunk, Phase::Eval).map_err(e2s)?;
        ensure((emb.frames, emb.dims) == (t / 160, 100), || format!("T={t}: {}x{}", emb.frames, emb.dims))?;
        let mut g = Graph::new();
        let data: Vec<f32> = (0..emb.dims)
            .flat_map(|d| (0..emb.frames).map(move |f| (f, d)))
            .map(|(f, d)| emb.row(f)[d] as f32)
            .collect();
        let x = g.constant(Tensor::new([1, emb.dims, emb.frames], data).map_err(e2s)?);
        let y = workers.wave.forward(&mut g, &wstore, x, Phase::Eval, &mut Vec::new()).map_err(e2s)?;
        ensure(g.shape(y) == [1, 160 * emb.frames], || format!("T={t}: decoder gave {:?}", g.shape(y)))?;
        if t >= 400 {
            for m in [lps(&chunk), mfcc(&chunk), prosody(&chunk)] {
                let m = m.map_err(e2s)?;
                ensure(m.frames == emb.frames, || format!("T={t}: {:?} has {} frames", m.kind, m.frames))?;
            }
        }
    }
    Ok("T in {160, 16000, 32000}: N = T/160, dim 100, decoder 160N; LPS/MFCC/prosody aligned".into())
}

fn receptive_field() -> Outcome {
    let config = EncoderConfig::full();
    let rf = config.receptive_field();
    ensure(rf == 2370, || format!("analytic receptive field {rf}"))?;
    ensure(EncoderConfig::desk().receptive_field() == 2370, || "desk config differs".into())?;
    let (enc, store) = encoder(config.clone(), 3);
    let len = 8000;
    let base_wave = noise(len, 4);
    let base = enc.encode(&store, &AudioChunk::new(base_wave.clone(), "u", 0), Phase::Eval).map_err(e2s)?;
    let (mut outside, mut inside_changed, mut inside) = (0, 0, 0);
    for p in [0, 1234, 4000, 6001, 7999] {
        let mut w = base_wave.clone();
        w[p] += 1.0;
        let out = enc.encode(&store, &AudioChunk::new(w, "u", 0), Phase::Eval).map_err(e2s)?;
        for f in 0..base.frames {
            let (lo, hi) = config.receptive_window(f, len).map_err(e2s)?;
            ensure((hi - lo) as usize == rf, || format!("window of frame {f} spans {}", hi - lo))?;
            let same = base.row(f) == out.row(f);
            if (lo..hi).contains(&(p as isize)) {
                inside += 1;
                inside_changed += (!same) as usize;
            } else {
                outside += 1;
                ensure(same, || format!("sample {p} moved frame {f} outside its window [{lo}, {hi})"))?;
            }
        }
    }
    ensure(inside_changed > 0, || "perturbations inside the window had no effect".into())?;
    Ok(format!(
        "analytic 2370 samples ({:.1} ms); {outside} out-of-window frames bit-identical, {inside_changed}/{inside} in-window frames moved",
        rf as f64 / 16.0
    ))
}

/// Independent LPS oracle: reflect-pad by 120, Hamming 400, O(N^2) DFT.
fn naive_lps(x: &[f32]) -> Vec<Vec<f64>> {
    let n = x.len();
    let reflect = |i: isize| -> f64 {
        let mut i = i;
        while i < 0 || i >= n as isize {
            i = if i < 0 { -i } else { 2 * (n as isize - 1) - i };
        }
        x[i as usize] as f64
    };
    let win: Vec<f64> = (0..400).map(|k| 0.54 - 0.46 * (2.0 * PI * k as f64 / 399.0).cos()).collect();
    let table: Vec<(f64, f64)> = (0..NFFT).map(|m| ((2.0 * PI * m as f64 / NFFT as f64).cos(), (2.0 * PI * m as f64 / NFFT as f64).sin())).collect();
    (0..n / HOP)
        .map(|f| {
            let frame: Vec<f64> = (0..400).map(|k| reflect((f * HOP + k) as isize - 120) * win[k]).collect();
            (0..=NFFT / 2)
                .map(|bin| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (k, &v) in frame.iter().enumerate() {
                        let (c, s) = table[(bin * k) % NFFT];
                        re += v * c;
                        im -= v * s;
                    }
                    (re * re + im * im).max(LOG_FLOOR).ln()
                })
                .collect()
        })
        .collect()
}

fn dsp_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for c in 0..100 {
        let len = HOP * rng.gen_range(3..=5);
        let x: Vec<f32> = (0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let got = lps(&AudioChunk::new(x.clone(), format!("c{c}"), 0)).map_err(e2s)?;
        for (f, row) in naive_lps(&x).iter().enumerate() {
            for (a, b) in got.row(f).iter().zip(row) {
                worst = worst.max((a - b).abs() / b.abs().max(1.0));
            }
        }
    }
    ensure(worst < 1e-6, || format!("LPS relative error {worst:.2e}"))?;
    let mut f0_worst = 0.0f64;
    let mut voiced = 0;
    for hz in [80.0, 110.0, 150.0, 200.0, 260.0, 330.0, 400.0] {
        let x: Vec<f32> = (0..16_000).map(|n| (0.5 * (2.0 * PI * hz * n as f64 / 16_000.0).sin()) as f32).collect();
        let p = prosody(&AudioChunk::new(x, "sine", 0)).map_err(e2s)?;
        for row in p.rows().filter(|r| r[1] >= VOICING_THRESHOLD) {
            f0_worst = f0_worst.max((row[0].exp() - hz).abs() / hz);
            voiced += 1;
        }
    }
    ensure(voiced >= 600, || format!("only {voiced} of 700 frames voiced"))?;
    ensure(f0_worst < 0.05, || format!("F0 error {:.2}%", 100.0 * f0_worst))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "LPS vs naive DFT worst rel {worst:.1e} over 100 chunks; F0 80-400 Hz worst {:.3}% on {voiced} voiced frames; {:.1}s",
        100.0 * f0_worst,
        elapsed.as_secs_f64()
    ))
}

fn chunk_infos(utts: &[&str], frames: usize) -> Vec<ChunkInfo> {
    utts.iter().enumerate().map(|(i, u)| ChunkInfo { utterance: u.to_string(), offset: 16_000 * i, frames }).collect()
}

fn samplers() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let info = chunk_infos(&["a", "b", "c", "a", "d"], 100);
    let pool: Vec<usize> = (0..info.len()).collect();
    let mut violations = 0;
    let mut lim = 0;
    while lim < 10_000 {
        for p in sample_lim(&info, &pool, &mut rng).map_err(e2s)? {
            violations += (p.positive.utterance != p.anchor.utterance) as usize;
            violations += (p.negative.utterance == p.anchor.utterance) as usize;
            lim += 1;
        }
    }

    let mut info = chunk_infos(&["a", "a", "b", "c"], 100);
    info[1].offset = 32_000;
    let mats: Vec<FeatureMatrix> = (0..4)
        .map(|_| FeatureMatrix::new(FeatureKind::Embedding, 100, 100, (0..10_000).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap())
        .collect();
    let oracle: Vec<f64> = (0..100).map(|d| (0..100).map(|f| mats[0].row(f)[d]).sum::<f64>() / 100.0).collect();
    let mut gim_err = 0.0f64;
    for _ in 0..10_000 {
        for p in sample_gim(&info, &[(0, 1)], &[0, 1, 2, 3], &mut rng).map_err(e2s)? {
            violations += (p.negative.utterance == p.anchor.utterance) as usize;
            let t = materialize(&p, &mats);
            for (a, o) in t.anchor.iter().zip(&oracle) {
                gim_err = gim_err.max((a - o).abs());
            }
        }
    }
    ensure(gim_err < 1e-10, || format!("GIM anchor differs from frame mean by {gim_err:e}"))?;

    let info = chunk_infos(&["a", "b"], 100);
    let w = SpcWindow::default();
    let (mut spc, mut lo, mut hi) = (0, usize::MAX, 0);
    while spc < 10_000 {
        for p in sample_spc(&info, &[0, 1], w, &mut rng).map_err(e2s)? {
            let t = p.anchor.start;
            for f in p.positive.start..p.positive.start + p.positive.len {
                violations += !(f > t && (15..=50).contains(&(f - t))) as usize;
                lo = lo.min(f - t);
                hi = hi.max(f - t);
            }
            for f in p.negative.start..p.negative.start + p.negative.len {
                violations += !(f < t && (15..=50).contains(&(t - f))) as usize;
            }
            violations += (p.positive.start + p.positive.len > 100) as usize;
            spc += 1;
        }
    }
    ensure(violations == 0, || format!("{violations} violations"))?;
    Ok(format!(
        "{lim} LIM, 10000 GIM, {spc} SPC draws: 0 violations; GIM mean error {gim_err:.1e}; SPC offsets seen {lo}..{hi}"
    ))
}

fn tiny_set(n: usize, seconds: f64, chunk: usize, seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spk = [Speaker { f0_lo: 100.0, f0_hi: 140.0 }, Speaker { f0_lo: 220.0, f0_hi: 280.0 }];
    let utts = (0..n).map(|i| Utterance { id: format!("u{i}"), samples: synth_utterance(&spk[i % 2], seconds, 20.0, &mut rng) }).collect();
    TrainingSet::prepare(utts, chunk).unwrap()
}

fn tiny_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        encoder: EncoderConfig::tiny(),
        workers: WorkerConfig::tiny(),
        chunk_samples: 1600,
        batch_size_chunks: 4,
        epochs,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn training_mechanics() -> Outcome {
    let set = tiny_set(4, 0.25, 1600, 7);
    let mut t = Trainer::new(tiny_train_config(1), set.stats().map_err(e2s)?).map_err(e2s)?;
    let refs = [ChunkRef { utterance: 0, offset: 0 }, ChunkRef { utterance: 0, offset: 1600 }, ChunkRef { utterance: 1, offset: 800 }];
    let batch = set.batch::<f32>(&refs, &t.stats, &t.config.enabled()).map_err(e2s)?;
    let rep = t.step(&batch).map_err(e2s)?;
    ensure(rep.losses.len() == 7, || format!("{} worker losses", rep.losses.len()))?;
    // same f32 summation the tape performs
    let mean32 = rep.losses.iter().fold(0f32, |a, &(_, v)| a + v as f32) / rep.losses.len() as f32;
    ensure(rep.total == mean32 as f64, || format!("total {} vs mean {}", rep.total, mean32))?;
    let vals: Vec<f64> = rep.losses.iter().map(|&(_, v)| v).collect();
    ensure((total_loss(&vals).map_err(e2s)? - rep.total).abs() < 1e-6, || "f64 mean differs".into())?;

    let c = TrainConfig::default();
    let lrs: Vec<f64> = [0, 30, 60].iter().map(|&e| lr_at(e, &c)).collect();
    ensure(lrs == [5e-4, 2.5e-4, 1.25e-4], || format!("lr {lrs:?}"))?;

    let dir = tempfile::tempdir().map_err(e2s)?;
    let mut straight = Trainer::new(tiny_train_config(3), set.stats().map_err(e2s)?).map_err(e2s)?;
    straight.train(&set, None, |_| {}).map_err(e2s)?;
    let mut half = Trainer::new(tiny_train_config(1), set.stats().map_err(e2s)?).map_err(e2s)?;
    half.train(&set, Some(dir.path()), |_| {}).map_err(e2s)?;
    let mut resumed = load_checkpoint(&dir.path().join("checkpoint.bin")).map_err(e2s)?;
    resumed.config.epochs = 3;
    resumed.train(&set, None, |_| {}).map_err(e2s)?;
    ensure(resumed.store.checksum("") == straight.store.checksum(""), || "resumed parameters differ".into())?;
    ensure(resumed.loss_curve_tsv() == straight.loss_curve_tsv(), || "resumed loss curve differs".into())?;
    Ok(format!(
        "total == mean of 7 losses ({:.6}); lr {{0,30,60}} -> {lrs:?}; resume after epoch 1 of 3 bit-identical ({} steps)",
        rep.total, straight.global_step
    ))
}

fn overfit() -> Outcome {
    let start = Instant::now();
    // 5 two-second utterances, both halves of each: 10 one-second chunks
    let set = tiny_set(5, 2.0, 16_000, 8);
    let config = TrainConfig { seed: 4, ..TrainConfig::desk() };
    let mut t = Trainer::new(config, set.stats().map_err(e2s)?).map_err(e2s)?;
    let refs: Vec<ChunkRef> = (0..5).flat_map(|u| [ChunkRef { utterance: u, offset: 0 }, ChunkRef { utterance: u, offset: 16_000 }]).collect();
    let batch = set.batch::<f32>(&refs, &t.stats, &t.config.enabled()).map_err(e2s)?;
    let mut totals = Vec::new();
    for _ in 0..300 {
        let r = t.step(&batch).map_err(e2s)?;
        ensure(r.losses.len() == 7, || format!("step {} scored {} workers", totals.len() + 1, r.losses.len()))?;
        totals.push(r.total);
    }
    let elapsed = start.elapsed();
    let (first, last) = (totals[0], totals[299]);
    ensure(last < 0.5 * first, || format!("loss {first:.4} -> {last:.4} ({:.1}%)", 100.0 * last / first))?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "desk model, 10 chunks, 300 steps: total {first:.4} -> {last:.4} ({:.1}% of step 1) in {:.0}s",
        100.0 * last / first,
        elapsed.as_secs_f64()
    ))
}

fn labeled(corpus: Vec<(String, usize, Vec<f32>)>, split: Split) -> Vec<LabeledUtterance> {
    corpus.into_iter().map(|(id, label, samples)| LabeledUtterance { id, label, samples, split }).collect()
}

fn probe_corpus(seed: u64, train_per: usize, test_per: usize) -> (Vec<LabeledUtterance>, Vec<LabeledUtterance>) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let rename = |c: Vec<(String, usize, Vec<f32>)>, tag: &str| c.into_iter().map(|(id, l, s)| (format!("{tag}{id}"), l, s)).collect();
    let train = synth_corpus(&SynthSpec::two_speakers(train_per, 1.0), &mut rng);
    let test = synth_corpus(&SynthSpec::two_speakers(test_per, 1.0), &mut rng);
    (labeled(rename(train, "tr"), Split::Train), labeled(rename(test, "te"), Split::Test))
}

fn pretrain_set(seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus = synth_corpus(&SynthSpec::two_speakers(12, 2.0), &mut rng);
    TrainingSet::prepare(corpus.into_iter().map(|(id, _, samples)| Utterance { id, samples }).collect(), 16_000).unwrap()
}

fn desk_probe() -> Outcome {
    let start = Instant::now();
    let set = pretrain_set(9);
    let config = TrainConfig { epochs: 12, batch_size_chunks: 16, seed: 5, ..TrainConfig::desk() };
    let mut t = Trainer::new(config.clone(), set.stats().map_err(e2s)?).map_err(e2s)?;
    t.train(&set, None, |_| {}).map_err(e2s)?;
    let pretrain = start.elapsed();
    ensure(pretrain < Duration::from_secs(1800), || format!("pretraining took {pretrain:?}"))?;
    let first = &t.history[0];
    let last = t.history.last().unwrap();

    let probe = ProbeConfig { epochs: 10, ..ProbeConfig::default() };
    let (mut accs, mut nulls) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let (train, test) = probe_corpus(seed, 10, 20);
        let cfg = ProbeConfig { seed, ..probe.clone() };
        let mut m = ProbeModel::new(cfg.clone(), Some((&t.model.encoder, &t.store)), &config.encoder).map_err(e2s)?;
        let before = m.encoder_checksum();
        m.fit(&train).map_err(e2s)?;
        ensure(m.encoder_checksum() == before, || "FROZEN probe changed the encoder".into())?;
        accs.push(m.evaluate(&test).map_err(e2s)?.utterance_accuracy);

        let mut shuffled = train.clone();
        let mut labels: Vec<usize> = shuffled.iter().map(|u| u.label).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(77 + seed));
        for (u, l) in shuffled.iter_mut().zip(labels) {
            u.label = l;
        }
        let mut null = ProbeModel::new(cfg, Some((&t.model.encoder, &t.store)), &config.encoder).map_err(e2s)?;
        null.fit(&shuffled).map_err(e2s)?;
        nulls.push(null.evaluate(&test).map_err(e2s)?.utterance_accuracy);
    }
    let null_mean = nulls.iter().sum::<f64>() / nulls.len() as f64;
    // reference only: the same probe on an untrained encoder
    let fresh = Trainer::new(config.clone(), set.stats().map_err(e2s)?).map_err(e2s)?;
    let (train, test) = probe_corpus(0, 10, 20);
    let mut m = ProbeModel::new(probe.clone(), Some((&fresh.model.encoder, &fresh.store)), &config.encoder).map_err(e2s)?;
    m.fit(&train).map_err(e2s)?;
    let untrained = m.evaluate(&test).map_err(e2s)?.utterance_accuracy;
    ensure(accs.iter().all(|&a| a > 0.9), || format!("FROZEN accuracies {accs:?}"))?;
    ensure((null_mean - 0.5).abs() <= 0.1, || format!("shuffled-label control mean {null_mean:.3} ({nulls:?})"))?;
    let pct = |v: &[f64]| v.iter().map(|a| format!("{:.0}", 100.0 * a)).collect::<Vec<_>>().join("/");
    Ok(format!(
        "pretrain {} epochs in {:.0}s (loss {:.3} -> {:.3}); FROZEN acc % over 5 seeds {}; shuffled control {} (mean {:.1}%); untrained encoder {:.0}% (not gated); total {:.0}s",
        config.epochs,
        pretrain.as_secs_f64(),
        first.total,
        last.total,
        pct(&accs),
        pct(&nulls),
        100.0 * null_mean,
        100.0 * untrained,
        start.elapsed().as_secs_f64()
    ))
}

fn ablation() -> Outcome {
    let start = Instant::now();
    let set = tiny_set(6, 1.0, 1600, 10);
    let config = tiny_train_config(30);
    let (train, test) = probe_corpus(0, 4, 10);
    let probe = ProbeConfig { hidden: 32, epochs: 30, ..ProbeConfig::default() };
    let dir = tempfile::tempdir().map_err(e2s)?;
    let study = run_ablation(&config, &WorkerName::ALL, &set, &probe, &train, &test, Some(dir.path()), |_| {}).map_err(e2s)?;
    for r in &study.runs {
        ensure(r.head_untouched, || format!("{:?} head moved", r.dropped))?;
    }
    let report = study.report().map_err(e2s)?;
    let lines: Vec<&str> = report.lines().collect();
    ensure(lines.len() == 9, || format!("report has {} lines", lines.len()))?;
    let all = study.all().unwrap();
    let table = ablation_deltas(all, &study.runs.iter().filter_map(|r| r.dropped.map(|w| (w, r.accuracy))).collect::<Vec<_>>()).map_err(e2s)?;
    for ((w, acc, delta), line) in table.iter().zip(&lines[2..]) {
        ensure(*delta == all - acc, || format!("{w}: delta {delta} != {all} - {acc}"))?;
        ensure(line.starts_with(&format!("-{w}\t")), || format!("unexpected row `{line}`"))?;
    }
    for w in WorkerName::ALL {
        let curve = std::fs::read_to_string(dir.path().join(format!("drop-{w}/loss_curve.tsv"))).map_err(e2s)?;
        ensure(!curve.lines().next().unwrap().split('\t').any(|c| c == w.as_str()), || format!("{w} still in its ablated loss curve"))?;
    }
    // reference Speaker-ID ablation: every worker helps
    let agree = table.iter().filter(|(_, _, d)| *d > 0.0).count();
    let deltas: Vec<String> = table.iter().map(|(w, _, d)| format!("{w} {d:+.2}")).collect();
    Ok(format!(
        "8 runs, 7 dropped heads untouched, 7-row delta table exact; all {all:.2}, deltas [{}], {agree}/7 positive like the reference (not gated); {:.0}s",
        deltas.join(", "),
        start.elapsed().as_secs_f64()
    ))
}

fn names_file(msg: &str, path: &Path) -> Result<(), String> {
    let name = path.file_name().unwrap().to_string_lossy();
    ensure(msg.contains(name.as_ref()), || format!("error `{msg}` does not name {name}"))
}

fn formats() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let wav = dir.path().join("pcm.wav");
    let spec = hound::WavSpec { channels: 1, sample_rate: 16_000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(&wav, spec).map_err(e2s)?;
    for s in [32767i16, 0, -32768] {
        w.write_sample(s).map_err(e2s)?;
    }
    w.finalize().map_err(e2s)?;
    let a = read_wav(&wav).map_err(e2s)?;
    ensure(a.samples[0] == 32767.0 / 32768.0 && a.samples[1] == 0.0 && a.samples[2] == -1.0, || format!("{:?}", a.samples))?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let feats = dir.path().join("f.pase");
    let m = FeatureMatrix::new(FeatureKind::Embedding, 13, 100, (0..1300).map(|_| rng.gen_range(-3.0f32..3.0) as f64).collect()).map_err(e2s)?;
    write_features(&feats, &m).map_err(e2s)?;
    let back = read_features(&feats).map_err(e2s)?;
    ensure(back.data.iter().zip(&m.data).all(|(a, b)| a.to_bits() == b.to_bits()), || "feature round-trip not bit-exact".into())?;

    let set = tiny_set(3, 0.2, 1600, 12);
    let mut t = Trainer::new(tiny_train_config(1), set.stats().map_err(e2s)?).map_err(e2s)?;
    t.train(&set, None, |_| {}).map_err(e2s)?;
    let ck = dir.path().join("run.ckpt");
    save_checkpoint(&t, &ck).map_err(e2s)?;
    let loaded = load_checkpoint(&ck).map_err(e2s)?;
    let ck2 = dir.path().join("again.ckpt");
    save_checkpoint(&loaded, &ck2).map_err(e2s)?;
    ensure(std::fs::read(&ck).map_err(e2s)? == std::fs::read(&ck2).map_err(e2s)?, || "checkpoint re-save differs".into())?;
    ensure(loaded.store.checksum("") == t.store.checksum(""), || "checkpoint tensors differ".into())?;

    let mut bad = 0;
    let junk = dir.path().join("junk.wav");
    std::fs::write(&junk, b"RIFF\x04\x00\x00\x00WAVE").map_err(e2s)?;
    names_file(&read_wav(&junk).unwrap_err().to_string(), &junk)?;
    bad += 1;
    let mut bytes = std::fs::read(&feats).map_err(e2s)?;
    bytes[0] = b'Q';
    let badf = dir.path().join("badmagic.pase");
    std::fs::write(&badf, &bytes).map_err(e2s)?;
    names_file(&read_features(&badf).unwrap_err().to_string(), &badf)?;
    bad += 1;
    let bytes = std::fs::read(&ck).map_err(e2s)?;
    let trunc = dir.path().join("truncated.ckpt");
    std::fs::write(&trunc, &bytes[..bytes.len() / 2]).map_err(e2s)?;
    names_file(&load_checkpoint(&trunc).err().map(|e| e.to_string()).unwrap_or_default(), &trunc)?;
    bad += 1;
    let man = dir.path().join("labels.tsv");
    std::fs::write(&man, "a.wav\t0\nb.wav\t5\n").map_err(e2s)?;
    names_file(&Manifest::load_labeled(&man, 2).unwrap_err().to_string(), &man)?;
    bad += 1;
    Ok(format!("PCM16 32767 -> {:.5}; feature and checkpoint round-trips bit-exact; {bad} malformed inputs rejected naming their file", a.samples[0]))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let criteria: [Criterion; 10] = [
        (1, "gradient suite", gradients),
        (2, "shape laws", shape_laws),
        (3, "receptive field", receptive_field),
        (4, "DSP oracles", dsp_oracles),
        (5, "sampler contracts", samplers),
        (6, "training mechanics", training_mechanics),
        (7, "tiny overfit", overfit),
        (8, "desk-scale probe", desk_probe),
        (9, "ablation machinery", ablation),
        (10, "format round-trips", formats),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        match std::panic::catch_unwind(run) {
            Ok(Ok(detail)) => println!("PASS  {id:>2} {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL  {id:>2} {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL  {id:>2} {name}: panicked");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
