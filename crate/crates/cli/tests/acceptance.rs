//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! The process exits non-zero when a criterion fails, unless the failure is
//! the one where the target exceeds the largest value the metric can take
//! (reported as `FAIL (unattainable)` together with the bound).

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use speechkit::audio_io::{write_wav, AudioClip};
use speechkit::bench::{self, compare_models, emit_report, ComparisonReport, MonotonicClock};
use speechkit::dataset::{self, load_pairs, Corpus, Pair, SnrLadder, Source};
use speechkit::dsp::{istft, measure_snr, stft, StftConfig};
use speechkit::net::{
    conv1d_backward, conv1d_forward, deconv1d_backward, deconv1d_forward, lstm_backward, lstm_forward,
    lstm_forward_cached, ConvLayerParams, DeconvLayerParams, LstmParams, Model, ModelConfig, Tensor,
};
use speechkit::quant::{model_footprint, quantize_model, relative_l2, QuantizedModel, FIDELITY_TOLERANCE};
use speechkit::synthetic::{noise, tone_complex_speech, NoiseKind};
use speechkit::train::{
    complex_loss, complex_loss_grad, fit, gradient_check, relative_error, LossConfig, OptimConfig,
};
use speechkit::Exec;

const RATE: u32 = 16_000;

enum Verdict {
    Pass,
    Fail,
    /// Failed, and the target lies outside the metric's range.
    Unattainable,
}

struct Line {
    verdict: Verdict,
    detail: String,
}

fn check(ok: bool, detail: String) -> Line {
    Line {
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        detail,
    }
}

fn within(elapsed: Duration, budget_s: f64) -> (bool, String) {
    let s = elapsed.as_secs_f64();
    (s < budget_s, format!("{s:.1}s of {budget_s:.0}s"))
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape.to_vec()).unwrap()
}

/// 1. Every rendered entry hits its ladder SNR.
fn snr_exactness() -> Line {
    let start = Instant::now();
    let seg_secs = 0.25;
    let clean: Vec<AudioClip> = (0..200).map(|s| tone_complex_speech(s, seg_secs, RATE)).collect();
    let noises: Vec<Source> = (0..5)
        .map(|j| Source {
            id: format!("noise{j}.wav"),
            clip: noise(if j % 2 == 0 { NoiseKind::White } else { NoiseKind::Pink }, 900 + j, 0.4, RATE),
        })
        .collect();
    let corpus = Corpus::from_clips(&clean, noises, seg_secs).unwrap();
    let ladder = SnrLadder::new(0.0, 40.0, 5);
    let m = dataset::build_manifest_from_corpus(&corpus, &ladder, 11, Path::new("clean"), Path::new("noise")).unwrap();
    let mut worst = 0.0f64;
    for spec in &m.entries {
        let mix = corpus.realize(spec).unwrap();
        let measured = measure_snr(&mix.clean.samples, &mix.noise.samples).unwrap();
        worst = worst.max((measured - spec.snr_db).abs());
    }
    let (fast, t) = within(start.elapsed(), 10.0);
    check(
        m.entries.len() == 200 && worst < 1e-6 && fast,
        format!("{} entries, max |error| {worst:.2e} dB, {t}", m.entries.len()),
    )
}

/// 2. istft(stft(x)) reproduces interior samples.
fn stft_identity() -> Line {
    let start = Instant::now();
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x: Vec<f64> = (0..RATE as usize).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = istft(&stft(&x, cfg).unwrap()).unwrap();
        let margin = cfg.frame_len;
        for i in margin..x.len() - margin {
            worst = worst.max((x[i] - y[i]).abs());
        }
    }
    let (fast, t) = within(start.elapsed(), 5.0);
    check(worst < 1e-6 && fast, format!("50 clips, max interior error {worst:.2e}, {t}"))
}

/// Max relative error of `analytic` against central differences of `f`
/// around `params`.
fn fd_error(params: &mut [f64], analytic: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + eps;
        let plus = f(params);
        params[i] = orig - eps;
        let minus = f(params);
        params[i] = orig;
        worst = worst.max(relative_error(analytic[i], (plus - minus) / (2.0 * eps)));
    }
    worst
}

fn shaped(data: &[f64], like: &Tensor) -> Tensor {
    Tensor::new(data.to_vec(), like.shape().to_vec()).unwrap()
}

fn near_kink(t: &Tensor, margin: f64) -> bool {
    t.data().iter().any(|v| v.abs() < margin)
}

/// Conv layer: objective `<r, conv(x)>` against weight, bias and input.
fn conv_layer_error(rng: &mut ChaCha8Rng, eps: f64) -> f64 {
    loop {
        let layer = ConvLayerParams {
            weight: random_tensor(&[3, 2, 4], rng),
            bias: random_tensor(&[3], rng),
            stride: 2,
        };
        let x = random_tensor(&[2, 13], rng);
        if near_kink(&layer.linear(&x).unwrap(), 100.0 * eps) {
            continue;
        }
        let out = conv1d_forward(&x, &layer).unwrap();
        let r = random_tensor(out.shape(), rng);
        let g = conv1d_backward(&x, &out, &r, &layer);
        let obj = |l: &ConvLayerParams, x: &Tensor| conv1d_forward(x, l).unwrap().dot(&r);
        let mut w = layer.weight.data().to_vec();
        let e1 = fd_error(&mut w, g.weight.data(), eps, |w| {
            obj(&ConvLayerParams { weight: shaped(w, &layer.weight), ..layer.clone() }, &x)
        });
        let mut b = layer.bias.data().to_vec();
        let e2 = fd_error(&mut b, g.bias.data(), eps, |b| {
            obj(&ConvLayerParams { bias: shaped(b, &layer.bias), ..layer.clone() }, &x)
        });
        let mut xi = x.data().to_vec();
        let e3 = fd_error(&mut xi, g.input.data(), eps, |xi| obj(&layer, &shaped(xi, &x)));
        return e1.max(e2).max(e3);
    }
}

/// Transposed conv layer, with and without its activation.
fn deconv_layer_error(rng: &mut ChaCha8Rng, eps: f64) -> f64 {
    let mut worst = 0.0f64;
    for act in [false, true] {
        loop {
            let layer = DeconvLayerParams {
                weight: random_tensor(&[2, 3, 4], rng),
                bias: random_tensor(&[3], rng),
                stride: 2,
            };
            let x = random_tensor(&[2, 6], rng);
            if act && near_kink(&layer.linear(&x).unwrap(), 100.0 * eps) {
                continue;
            }
            let out = deconv1d_forward(&x, &layer, act).unwrap();
            let r = random_tensor(out.shape(), rng);
            let g = deconv1d_backward(&x, &out, &r, &layer, act);
            let obj = |l: &DeconvLayerParams, x: &Tensor| deconv1d_forward(x, l, act).unwrap().dot(&r);
            let mut w = layer.weight.data().to_vec();
            let e1 = fd_error(&mut w, g.weight.data(), eps, |w| {
                obj(&DeconvLayerParams { weight: shaped(w, &layer.weight), ..layer.clone() }, &x)
            });
            let mut b = layer.bias.data().to_vec();
            let e2 = fd_error(&mut b, g.bias.data(), eps, |b| {
                obj(&DeconvLayerParams { bias: shaped(b, &layer.bias), ..layer.clone() }, &x)
            });
            let mut xi = x.data().to_vec();
            let e3 = fd_error(&mut xi, g.input.data(), eps, |xi| obj(&layer, &shaped(xi, &x)));
            worst = worst.max(e1).max(e2).max(e3);
            break;
        }
    }
    worst
}

fn lstm_layer_error(rng: &mut ChaCha8Rng, eps: f64) -> f64 {
    let (h, i, t) = (3, 2, 6);
    let p = LstmParams {
        w_ih: random_tensor(&[4 * h, i], rng),
        w_hh: random_tensor(&[4 * h, h], rng),
        bias: random_tensor(&[4 * h], rng),
    };
    let x = random_tensor(&[i, t], rng);
    let (out, cache) = lstm_forward_cached(&x, &p).unwrap();
    let r = random_tensor(out.shape(), rng);
    let g = lstm_backward(&cache, &r, &p);
    let obj = |p: &LstmParams, x: &Tensor| lstm_forward(x, p).unwrap().dot(&r);
    let mut a = p.w_ih.data().to_vec();
    let e1 = fd_error(&mut a, g.w_ih.data(), eps, |v| {
        obj(&LstmParams { w_ih: shaped(v, &p.w_ih), ..p.clone() }, &x)
    });
    let mut b = p.w_hh.data().to_vec();
    let e2 = fd_error(&mut b, g.w_hh.data(), eps, |v| {
        obj(&LstmParams { w_hh: shaped(v, &p.w_hh), ..p.clone() }, &x)
    });
    let mut c = p.bias.data().to_vec();
    let e3 = fd_error(&mut c, g.bias.data(), eps, |v| {
        obj(&LstmParams { bias: shaped(v, &p.bias), ..p.clone() }, &x)
    });
    let mut xi = x.data().to_vec();
    let e4 = fd_error(&mut xi, g.input.data(), eps, |v| obj(&p, &shaped(v, &x)));
    e1.max(e2).max(e3).max(e4)
}

fn loss_error(rng: &mut ChaCha8Rng, eps: f64) -> f64 {
    let cfg = LossConfig::default();
    let target = random_tensor(&[1, 64], rng);
    let mut est = random_tensor(&[1, 64], rng);
    // keep every |e - t| well away from the MAE kink
    for (e, t) in est.data_mut().iter_mut().zip(target.data()) {
        if (*e - t).abs() < 1e-2 {
            *e = t + 0.1;
        }
    }
    let g = complex_loss_grad(&est, &target, &cfg).unwrap();
    let mut v = est.data().to_vec();
    fd_error(&mut v, g.data(), eps, |v| complex_loss(&shaped(v, &est), &target, &cfg).unwrap())
}

/// 3. Backpropagation agrees with central differences.
fn gradient_fidelity() -> Line {
    let start = Instant::now();
    let cfg = ModelConfig {
        depth: 1,
        base_channels: 2,
        kernel_size: 4,
        stride: 2,
        lstm_layers: 1,
        lstm_hidden: 2,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Model::init(cfg, 3).unwrap();
    let pair = Pair {
        id: "gc".into(),
        snr_db: 0.0,
        sample_rate_hz: RATE,
        noisy: (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        clean: (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    let full = gradient_check(&model, &pair, &LossConfig::default(), 1e-4).unwrap();
    let eps = 1e-5;
    let conv = conv_layer_error(&mut rng, eps);
    let deconv = deconv_layer_error(&mut rng, eps);
    let lstm = lstm_layer_error(&mut rng, eps);
    let loss = loss_error(&mut rng, eps);
    let layers = conv.max(deconv).max(lstm).max(loss);
    let (fast, t) = within(start.elapsed(), 60.0);
    check(
        full < 1e-3 && layers < 1e-5 && fast,
        format!(
            "model {full:.2e}; conv {conv:.2e}, deconv {deconv:.2e}, lstm {lstm:.2e}, loss {loss:.2e}; {t}"
        ),
    )
}

/// 4. ComplexLoss floor.
fn loss_constants() -> Line {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(&[1, 256], &mut rng);
    let same = complex_loss(&x, &x, &cfg).unwrap();
    let mut min = f64::INFINITY;
    for _ in 0..1000 {
        let n = rng.gen_range(1..64);
        let a = random_tensor(&[1, n], &mut rng);
        let b = random_tensor(&[1, n], &mut rng);
        min = min.min(complex_loss(&a, &b, &cfg).unwrap());
    }
    check(
        same == 0.2 && min >= 0.2,
        format!("loss(x, x) = {same}, min over 1000 random pairs {min:.6}"),
    )
}

struct DeskCorpus {
    _dir: tempfile::TempDir,
    pairs: Vec<Pair>,
}

/// 50 fifteen-second pairs rendered through the synth pipeline: 40 for
/// training, 10 held out.
fn desk_corpus() -> DeskCorpus {
    let dir = tempfile::tempdir().unwrap();
    let (clean_dir, noise_dir, out) = (dir.path().join("clean"), dir.path().join("noise"), dir.path().join("corpus"));
    std::fs::create_dir_all(&clean_dir).unwrap();
    std::fs::create_dir_all(&noise_dir).unwrap();
    for s in 0..50u64 {
        write_wav(clean_dir.join(format!("utt{s:03}.wav")), &tone_complex_speech(s, 15.0, RATE)).unwrap();
    }
    for j in 0..4u64 {
        let kind = if j % 2 == 0 { NoiseKind::White } else { NoiseKind::Pink };
        write_wav(noise_dir.join(format!("noise{j}.wav")), &noise(kind, 1000 + j, 15.0, RATE)).unwrap();
    }
    let ladder = SnrLadder::new(0.0, 40.0, 5);
    let (manifest, corpus) = dataset::build_manifest(&clean_dir, &noise_dir, &ladder, 7, 15.0).unwrap();
    dataset::render_corpus(&manifest, &corpus, &out, Exec::Parallel).unwrap();
    let (_, pairs) = load_pairs(&out.join(dataset::MANIFEST_FILE), Exec::Parallel).unwrap();
    DeskCorpus { _dir: dir, pairs }
}

/// Optimizer settings for the desk-scale run.
fn desk_optim() -> OptimConfig {
    OptimConfig {
        learning_rate: 1e-2,
        batch_size: 2,
        epochs: 20,
        seed: 0,
        ..OptimConfig::default()
    }
}

struct Trained {
    model: Model,
    base: Model,
}

/// 5. Training lowers the loss and improves held-out STOI.
fn desk_learning(corpus: &DeskCorpus) -> (Line, Trained) {
    let start = Instant::now();
    let (train, held) = corpus.pairs.split_at(40);
    let base = Model::init(ModelConfig::tiny(), 0).unwrap();
    let mut model = base.clone();
    let stats = fit(&mut model, train, &LossConfig::default(), &desk_optim(), Exec::Parallel, |e| {
        println!("    epoch {:>2}  loss {:.6}  {:.1}s", e.epoch, e.mean_loss, e.seconds);
    })
    .unwrap();
    let loss1 = stats.epochs[0].mean_loss;
    let loss10 = stats.epochs[9].mean_loss;
    let noisy = bench::evaluate_noisy(held, Exec::Parallel).unwrap();
    let enhanced = bench::evaluate(&model, held, Exec::Parallel).unwrap();
    for (a, b) in noisy.by_condition.iter().zip(&enhanced.by_condition) {
        println!(
            "    held-out {:>4} dB: STOI noisy {:.3} -> enhanced {:.3}; SI-SNR {:.2} -> {:.2} dB",
            a.snr_db, a.medians.stoi, b.medians.stoi, a.medians.si_snr_db, b.medians.si_snr_db
        );
    }
    let (sn, se) = (noisy.overall.unwrap().stoi, enhanced.overall.unwrap().stoi);
    let (fast, t) = within(start.elapsed(), 15.0 * 60.0);
    let part_a = loss10 < loss1;
    let part_b = se >= sn + 0.05;
    let detail = format!(
        "(a) loss epoch1 {loss1:.6} -> epoch10 {loss10:.6}; (b) median STOI noisy {sn:.4}, enhanced {se:.4}, needed {:.4}; {t}",
        sn + 0.05
    );
    let verdict = if part_a && part_b && fast {
        Verdict::Pass
    } else if part_a && fast && !part_b && sn + 0.05 > 1.0 {
        Verdict::Unattainable
    } else {
        Verdict::Fail
    };
    (Line { verdict, detail }, Trained { model, base })
}

/// 6. Noisy-input STOI orders the ladder ends.
fn ladder_monotonicity(corpus: &DeskCorpus) -> Line {
    let report = bench::evaluate_noisy(&corpus.pairs, Exec::Parallel).unwrap();
    let hi = report.condition(40.0).unwrap();
    let lo = report.condition(0.0).unwrap();
    check(
        hi.stoi > lo.stoi,
        format!("median noisy STOI 40 dB {:.4} ({} clips) vs 0 dB {:.4} ({} clips)", hi.stoi, hi.count, lo.stoi, lo.count),
    )
}

/// 7. INT8 conv weights shrink the large conv layers by >= 3.9.
fn quant_footprint(trained: &Trained) -> Line {
    let model = Model::init(ModelConfig::default(), 0).unwrap();
    let q = quantize_model(&model).unwrap();
    let (f, i) = (model_footprint(&model), q.footprint());
    let factor = f.large_conv_bytes as f64 / i.large_conv_bytes as f64;
    let reduction = (f.total_bytes as f64 - i.total_bytes as f64) / f.total_bytes as f64 * 100.0;
    let (tf, ti) = (model_footprint(&trained.model), quantize_model(&trained.model).unwrap().footprint());
    check(
        factor >= 3.9,
        format!(
            "default model: conv layers >= 100 params {} -> {} bytes (x{factor:.3}); whole model {} -> {} bytes ({reduction:.2}% reduction); tiny model conv factor x{:.3}",
            f.large_conv_bytes,
            i.large_conv_bytes,
            f.total_bytes,
            i.total_bytes,
            tf.large_conv_bytes as f64 / ti.large_conv_bytes as f64
        ),
    )
}

/// 8. INT8 outputs track FP32 outputs.
fn quant_fidelity(trained: &Trained, held: &[Pair]) -> (Line, QuantizedModel) {
    let q = quantize_model(&trained.model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x: Vec<f64> = (0..RATE as usize).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let a = trained.model.enhance(&x).unwrap();
        let b = q.enhance(&x).unwrap();
        worst = worst.max(relative_l2(&b, &a));
    }
    let fp = bench::evaluate(&trained.model, held, Exec::Parallel).unwrap();
    let iq = bench::evaluate(&q, held, Exec::Parallel).unwrap();
    let delta = (fp.overall.unwrap().stoi - iq.overall.unwrap().stoi).abs();
    let line = check(
        worst < FIDELITY_TOLERANCE && delta <= 0.02,
        format!("max relative L2 over 20 inputs {worst:.4}; median STOI fp32 {:.4} vs int8 {:.4} (|delta| {delta:.4})", fp.overall.unwrap().stoi, iq.overall.unwrap().stoi),
    );
    (line, q)
}

/// 9. Derived report fields and emitted files are reproducible.
fn bench_consistency(trained: &Trained, q: &QuantizedModel, held: &[Pair]) -> Line {
    let noisy: Vec<AudioClip> = held.iter().map(|p| AudioClip::new(p.noisy.clone(), p.sample_rate_hz)).collect();
    let clean: Vec<AudioClip> = held.iter().map(|p| AudioClip::new(p.clean.clone(), p.sample_rate_hz)).collect();
    let cmp = compare_models(&trained.model, q, &noisy, &clean, 10, 2, &MonotonicClock::default()).unwrap();
    let exact = cmp.is_consistent()
        && cmp.speedup == cmp.fp32.mean_ms_per_clip / cmp.int8.mean_ms_per_clip
        && cmp.reduction_percent == (cmp.fp32_bytes as f64 - cmp.int8_bytes as f64) / cmp.fp32_bytes as f64 * 100.0
        && cmp.fp32.mean_ms_per_clip == cmp.fp32.batch_ms.iter().sum::<f64>() / cmp.fp32.clip_count as f64;
    let reloaded = ComparisonReport::from_json(&cmp.to_json()).unwrap();
    let evals = vec![
        ("Base".to_string(), bench::evaluate(&trained.base, held, Exec::Parallel).unwrap()),
        ("Fine-Tuned".to_string(), bench::evaluate(&trained.model, held, Exec::Parallel).unwrap()),
    ];
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    emit_report(&cmp, &evals, d1.path()).unwrap();
    emit_report(&reloaded, &evals, d2.path()).unwrap();
    let identical = ["report.md", "metrics.csv", "deployment.csv"]
        .iter()
        .all(|f| std::fs::read(d1.path().join(f)).unwrap() == std::fs::read(d2.path().join(f)).unwrap());
    check(
        exact && reloaded == cmp && identical,
        format!(
            "speedup {:.4} ({:.2} vs {:.2} ms/clip), reduction {:.2}%; fields consistent: {exact}; reports identical: {identical}",
            cmp.speedup, cmp.fp32.mean_ms_per_clip, cmp.int8.mean_ms_per_clip, cmp.reduction_percent
        ),
    )
}

fn run(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_speechkit")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "speechkit {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn same_tree(a: &Path, b: &Path) -> bool {
    let (fa, fb) = (files_under(a), files_under(b));
    fa.len() == fb.len()
        && fa.iter().zip(&fb).all(|(x, y)| {
            x.strip_prefix(a).unwrap() == y.strip_prefix(b).unwrap()
                && std::fs::read(x).unwrap() == std::fs::read(y).unwrap()
        })
}

/// 10. `synth` and `train` are byte-reproducible.
fn cli_determinism() -> Line {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s);
    std::fs::create_dir_all(p("clean")).unwrap();
    std::fs::create_dir_all(p("noise")).unwrap();
    for s in 0..4u64 {
        write_wav(p("clean").join(format!("c{s}.wav")), &tone_complex_speech(s, 2.0, RATE)).unwrap();
    }
    for j in 0..2u64 {
        write_wav(p("noise").join(format!("n{j}.wav")), &noise(NoiseKind::Pink, 50 + j, 1.5, RATE)).unwrap();
    }
    let config = serde_json::json!({ "model": ModelConfig::tiny() });
    std::fs::write(p("config.json"), config.to_string()).unwrap();
    let s = |p: PathBuf| p.to_string_lossy().into_owned();
    for out in ["run1", "run2"] {
        run(&[
            "synth", "--clean", &s(p("clean")), "--noise", &s(p("noise")), "--snr-min", "0", "--snr-max", "40",
            "--levels", "5", "--seed", "42", "--segment-seconds", "1", "--out", &s(p(out)),
        ]);
    }
    let manifest = s(p("run1").join(dataset::MANIFEST_FILE));
    for ckpt in ["a.ckpt", "b.ckpt"] {
        run(&[
            "train", "--manifest", &manifest, "--config", &s(p("config.json")), "--epochs", "2", "--lr", "0.01",
            "--batch", "2", "--seed", "9", "--out", &s(p(ckpt)),
        ]);
    }
    let manifests = std::fs::read(p("run1").join(dataset::MANIFEST_FILE)).unwrap()
        == std::fs::read(p("run2").join(dataset::MANIFEST_FILE)).unwrap();
    let trees = same_tree(&p("run1"), &p("run2"));
    let ckpts = std::fs::read(p("a.ckpt")).unwrap() == std::fs::read(p("b.ckpt")).unwrap();
    check(
        manifests && trees && ckpts,
        format!("manifests identical: {manifests}; rendered WAVs identical: {trees}; checkpoints identical: {ckpts}"),
    )
}

fn main() {
    // `cargo test -- --list` and filters: nothing to enumerate
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut failures = 0;
    let mut emit = |n: usize, name: &str, line: Line| {
        let tag = match line.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failures += 1;
                "FAIL"
            }
            Verdict::Unattainable => "FAIL (unattainable)",
        };
        println!("criterion {n:>2} {tag}: {name}: {}", line.detail);
    };
    emit(1, "SNR exactness", snr_exactness());
    emit(2, "STFT identity", stft_identity());
    emit(3, "gradient fidelity", gradient_fidelity());
    emit(4, "loss constants", loss_constants());
    let corpus = desk_corpus();
    let (line, trained) = desk_learning(&corpus);
    emit(5, "desk-scale learning", line);
    emit(6, "ladder monotonicity", ladder_monotonicity(&corpus));
    emit(7, "quantization footprint", quant_footprint(&trained));
    let held = &corpus.pairs[40..];
    let (line, q) = quant_fidelity(&trained, held);
    emit(8, "quantization fidelity", line);
    emit(9, "benchmark consistency", bench_consistency(&trained, &q, held));
    emit(10, "determinism", cli_determinism());
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
