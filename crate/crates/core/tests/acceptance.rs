//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 2 10`.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use cortexdec_core::data::{self, SynthConfig, N_CLASSES};
use cortexdec_core::model::build_model;
use cortexdec_core::seed;
use cortexdec_core::signal::{self, design_butterworth_bandpass, PreprocessConfig};
use cortexdec_core::tensor::{check_gradients, dropout_mask, BatchNormStats, Mode, Tape, Var};
use cortexdec_core::training::{self, make_folds, AdamState, FoldPlan, Grouping, Metrics};
use cortexdec_core::{EncoderConfig, Tensor, TrainConfig, TrialSet};
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

const GRAD_EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const INSTANCES: u64 = 5;

/// Runs `case` on seeded instances and returns the worst relative error.
fn grad_suite<F>(name: &str, case: F, worst: &mut Vec<String>) -> Result<(), String>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> Result<f64, String>,
{
    let mut max = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = seed::derived_rng(0x6772_6164, i + 100 * name.len() as u64);
        let err = case(&mut rng)?;
        ensure!(err < GRAD_TOL, "{name} instance {i}: relative error {err:e}");
        max = max.max(err);
    }
    worst.push(format!("{name} {max:.1e}"));
    Ok(())
}

fn check(
    build: impl Fn(&mut Tape<f64>, &[Var]) -> cortexdec_core::tensor::Result<Var>,
    inputs: &[Tensor<f64>],
) -> Result<f64, String> {
    check_gradients(build, inputs, GRAD_EPS)
        .map(|r| r.max_rel_error)
        .map_err(|e| e.to_string())
}

fn criterion_1() -> Outcome {
    let mut worst = Vec::new();
    grad_suite("conv1d", |rng| {
        let (b, cin, cout) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let t = rng.gen_range(k..12);
        let stride = rng.gen_range(1..3);
        let pad = rng.gen_range(0..=k / 2);
        let t_out = (t + 2 * pad - k) / stride + 1;
        let proj = random(&[b, cout, t_out], rng);
        check(
            |tape, v| {
                let y = tape.conv1d(v[0], v[1], Some(v[2]), stride, pad)?;
                tape.weighted_sum(y, &proj)
            },
            &[random(&[b, cin, t], rng), random(&[cout, cin, k], rng), random(&[cout], rng)],
        )
    }, &mut worst)?;
    for mode in [Mode::Train, Mode::Eval] {
        let name = if mode == Mode::Train { "batchnorm1d(train)" } else { "batchnorm1d(eval)" };
        grad_suite(name, |rng| {
            let (b, ch, t) = (rng.gen_range(2..5), rng.gen_range(1..4), rng.gen_range(2..8));
            let proj = random(&[b, ch, t], rng);
            let mut stats = BatchNormStats::new(ch);
            for c in 0..ch {
                stats.running_mean[c] = rng.gen_range(-1.0..1.0);
                stats.running_var[c] = rng.gen_range(0.5..2.0);
            }
            let gamma = Tensor::from_fn(&[ch], |_| rng.gen_range(0.5..1.5));
            check(
                |tape, v| {
                    let mut s = stats.clone();
                    let y = tape.batchnorm1d(v[0], v[1], v[2], &mut s, mode)?;
                    tape.weighted_sum(y, &proj)
                },
                &[random(&[b, ch, t], rng), gamma, random(&[ch], rng)],
            )
        }, &mut worst)?;
    }
    grad_suite("elu", |rng| {
        let n = rng.gen_range(4..20);
        // Stay clear of the kink at zero, where the derivative jumps.
        let x = Tensor::from_fn(&[n], |_| {
            let m = rng.gen_range(1e-3..2.0);
            if rng.gen::<bool>() { m } else { -m }
        });
        let proj = random(&[n], rng);
        check(|tape, v| {
            let y = tape.elu(v[0], 1.0);
            tape.weighted_sum(y, &proj)
        }, &[x])
    }, &mut worst)?;
    grad_suite("linear", |rng| {
        let (b, i, o) = (rng.gen_range(1..4), rng.gen_range(1..6), rng.gen_range(1..5));
        let proj = random(&[b, o], rng);
        check(
            |tape, v| {
                let y = tape.linear(v[0], v[1], Some(v[2]))?;
                tape.weighted_sum(y, &proj)
            },
            &[random(&[b, i], rng), random(&[o, i], rng), random(&[o], rng)],
        )
    }, &mut worst)?;
    grad_suite("maxpool1d", |rng| {
        let (b, ch) = (rng.gen_range(1..3), rng.gen_range(1..4));
        let (k, s) = [(2, 2), (3, 2), (2, 1)][rng.gen_range(0..3)];
        let t = rng.gen_range(k + 1..14);
        let proj = random(&[b, ch, (t - k) / s + 1], rng);
        check(|tape, v| {
            let y = tape.maxpool1d(v[0], k, s)?;
            tape.weighted_sum(y, &proj)
        }, &[random(&[b, ch, t], rng)])
    }, &mut worst)?;
    grad_suite("softmax", |rng| {
        let (b, n) = (rng.gen_range(1..4), rng.gen_range(2..8));
        let proj = random(&[b, n], rng);
        let x = Tensor::from_fn(&[b, n], |_| rng.gen_range(-3.0..3.0));
        check(|tape, v| {
            let y = tape.softmax(v[0])?;
            tape.weighted_sum(y, &proj)
        }, &[x])
    }, &mut worst)?;
    grad_suite("mse_loss", |rng| {
        let shape = [rng.gen_range(1..4), rng.gen_range(1..6)];
        check(|tape, v| tape.mse_loss(v[0], v[1]), &[random(&shape, rng), random(&shape, rng)])
    }, &mut worst)?;
    grad_suite("dropout(fixed mask)", |rng| {
        let shape = [rng.gen_range(1..4), rng.gen_range(2..6), rng.gen_range(2..8)];
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = dropout_mask(n, 0.5, rng);
        let proj = random(&shape, rng);
        check(|tape, v| {
            let y = tape.apply_mask(v[0], mask.clone())?;
            tape.weighted_sum(y, &proj)
        }, &[random(&shape, rng)])
    }, &mut worst)?;
    Ok(format!("max relative error per op: {}", worst.join(", ")))
}

fn criterion_2() -> Outcome {
    let fs = 1000.0;
    let f = design_butterworth_bandpass(5, 0.5, 120.0, fs).map_err(|e| e.to_string())?;
    let db = |hz: f64| 20.0 * f.frequency_response(hz, fs).unwrap().norm().log10();
    let (lo, hi) = (db(0.5), db(120.0));
    let half_power = 10.0 * 0.5f64.log10();
    ensure!((lo - half_power).abs() <= 0.1, "0.5 Hz edge at {lo:.4} dB");
    ensure!((hi - half_power).abs() <= 0.1, "120 Hz edge at {hi:.4} dB");
    let dc = f.frequency_response(0.0, fs).unwrap().norm();
    ensure!(dc < 1e-10, "|H(0)| = {dc:e}");
    let max_pole = f
        .sections
        .iter()
        .flat_map(|s| s.poles())
        .map(|p| p.norm())
        .fold(0.0, f64::max);
    ensure!(max_pole < 1.0, "pole radius {max_pole}");

    // Gabor pulse centred in the record: symmetric about the middle sample.
    let n = 3001;
    let mid = (n / 2) as f64;
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - mid) / fs;
            (-(t / 0.15).powi(2) / 2.0).exp() * (2.0 * PI * 12.0 * t).cos()
        })
        .collect();
    let y = f.apply_zero_phase(&x).map_err(|e| e.to_string())?;
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let asym = (0..n / 2).map(|i| (y[i] - y[n - 1 - i]).abs()).fold(0.0, f64::max) / scale;
    ensure!(asym <= 1e-9, "relative asymmetry {asym:e}");
    Ok(format!(
        "edges {lo:.4}/{hi:.4} dB, |H(0)| {dc:.1e}, max pole radius {max_pole:.6}, asymmetry {asym:.1e}"
    ))
}

fn criterion_3() -> Outcome {
    let cfg = SynthConfig {
        n_subjects: 2,
        trials_per_class_per_subject: 1,
        seed: 3,
        ..Default::default()
    };
    let rec = data::synth_recording(&cfg).map_err(|e| e.to_string())?;
    ensure!(rec.sample_rate_hz == 1000.0, "recording at {} Hz", rec.sample_rate_hz);
    let pp = PreprocessConfig::default();
    let trials = signal::preprocess(&rec, &pp).map_err(|e| e.to_string())?;
    ensure!(trials.n_samples() == 1500, "{} samples per trial", trials.n_samples());
    ensure!(trials.n_trials() == rec.events.len(), "{} trials for {} events", trials.n_trials(), rec.events.len());

    // Oracle: filter the continuous channels, then baseline-correct by hand.
    let cascade = design_butterworth_bandpass(pp.filter_order, pp.low_hz, pp.high_hz, 1000.0)
        .map_err(|e| e.to_string())?;
    let mut worst_mean = 0.0f64;
    let mut worst_trial = 0.0f64;
    for (ci, name) in pp.channels.iter().enumerate() {
        let src = rec.channel_names.iter().position(|n| n == name).ok_or("channel missing")?;
        let filtered = cascade.apply_zero_phase(rec.channel(src)).map_err(|e| e.to_string())?;
        for (ti, e) in rec.events.iter().enumerate() {
            let base = &filtered[e.onset_sample - 500..e.onset_sample];
            let mean = base.iter().sum::<f64>() / 500.0;
            let corrected: Vec<f64> = base.iter().map(|v| v - mean).collect();
            let rms = (corrected.iter().map(|v| v * v).sum::<f64>() / 500.0).sqrt();
            let rel = (corrected.iter().sum::<f64>() / 500.0).abs() / rms;
            worst_mean = worst_mean.max(rel);
            let got = trials.channel(ti, ci);
            let want = &filtered[e.onset_sample..e.onset_sample + 1500];
            let err = got
                .iter()
                .zip(want)
                .map(|(g, w)| (g - (w - mean)).abs())
                .fold(0.0, f64::max);
            worst_trial = worst_trial.max(err / rms);
        }
    }
    ensure!(worst_mean < 1e-9, "baseline mean {worst_mean:e} relative");
    ensure!(worst_trial < 1e-9, "trial differs from oracle by {worst_trial:e} relative");
    Ok(format!(
        "{} trials x 1500 samples, worst corrected baseline mean {worst_mean:.1e} relative",
        trials.n_trials()
    ))
}

fn criterion_4() -> Outcome {
    // Trial i carries a constant offset on channel i: separable by a linear map.
    let (n, c, t) = (8, 10, 1500);
    let mut rng = seed::rng(1);
    let mut values = Vec::with_capacity(n * c * t);
    for i in 0..n {
        for ch in 0..c {
            let offset = if ch == i { 1.0 } else { 0.0 };
            values.extend((0..t).map(|_| offset + 0.1 * rng.gen_range(-1.0..1.0)));
        }
    }
    let labels: Vec<u8> = (0..n as u8).collect();
    let trials = TrialSet::new(values, c, t, labels, vec![0; n], data::default_channel_names(c), 1000.0)
        .map_err(|e| e.to_string())?;
    let enc = EncoderConfig::default();
    ensure!(
        enc.n_blocks == 5 && enc.feature_channels == 64 && enc.skip_enabled,
        "default model is not 5 blocks x 64 features with skips"
    );
    let mut model = build_model(enc, 1).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { lr: 1e-4, ..Default::default() };
    let mut adam = cfg.adam().map_err(|e| e.to_string())?;
    let all: Vec<usize> = (0..n).collect();
    for epoch in 1..=500 {
        training::train_epoch(&mut model, &mut adam, &trials, &all, &cfg, epoch).map_err(|e| e.to_string())?;
        let acc = training::evaluate(&mut model, &trials, &all).map_err(|e| e.to_string())?.accuracy;
        if acc == 1.0 {
            return Ok(format!("100% training accuracy after {epoch} epochs"));
        }
    }
    Err("training accuracy below 100% after 500 epochs".into())
}

/// Reduced corpus and model used for the cross-validated criteria; see the
/// README for why the full-size settings are out of reach on one core.
fn desk_corpus(snr: f64) -> SynthConfig {
    SynthConfig {
        n_subjects: 8,
        trials_per_class_per_subject: 10,
        n_samples: 128,
        sample_rate_hz: 125.0,
        signature_snr: snr,
        subject_mixing: 0.5,
        seed: 7,
        ..Default::default()
    }
}

fn desk_encoder() -> EncoderConfig {
    EncoderConfig { feature_channels: 16, input_samples: 128, ..Default::default() }
}

/// Independent disjointness check: recomputes both subject sets per fold.
fn assert_disjoint(trials: &TrialSet, plan: &FoldPlan) -> Result<usize, String> {
    for fold in 0..plan.k {
        let test: BTreeSet<u16> = plan.test_indices(fold).iter().map(|&i| trials.subject_ids[i]).collect();
        let train: BTreeSet<u16> = plan.train_indices(fold).iter().map(|&i| trials.subject_ids[i]).collect();
        ensure!(test.is_disjoint(&train), "fold {fold} shares subjects {:?}", test.intersection(&train).collect::<Vec<_>>());
        ensure!(!test.is_empty(), "fold {fold} has no test subjects");
        plan.check_subject_disjoint(trials, fold).map_err(|e| e.to_string())?;
    }
    Ok(plan.k)
}

struct Disjointness(Vec<String>);

fn criterion_5(folds_checked: &mut Disjointness) -> Outcome {
    let trials = data::synth_generate(&desk_corpus(6.0)).map_err(|e| e.to_string())?;
    ensure!(trials.n_trials() == 8 * 10 * N_CLASSES, "{} trials", trials.n_trials());
    let shuffled = data::shuffle_labels(&trials, 11).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        lr: 1e-3,
        max_epochs: 60,
        validate_every: 5,
        patience: 4,
        seed: 1,
        ..Default::default()
    };
    let out = training::cross_validate(&shuffled, &desk_encoder(), &cfg, 5, Grouping::BySubject, 1)
        .map_err(|e| e.to_string())?;
    let k = assert_disjoint(&shuffled, &out.plan)?;
    folds_checked.0.push(format!("chance run {k} folds"));
    let acc = out.pooled.accuracy;
    let chance = 1.0 / N_CLASSES as f64;
    ensure!((acc - chance).abs() <= 0.05, "pooled accuracy {acc:.4} outside {chance:.4} ± 0.05");
    Ok(format!("pooled accuracy {:.2}% (chance {:.2}%)", 100.0 * acc, 100.0 * chance))
}

fn criterion_6(folds_checked: &mut Disjointness) -> Outcome {
    let trials = data::synth_generate(&desk_corpus(6.0)).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        lr: 1e-3,
        max_epochs: 120,
        validate_every: 5,
        patience: 6,
        ..Default::default()
    };
    let seeds = [1, 2, 3, 4, 5];
    let out = training::run_ablation(&trials, &desk_encoder(), &cfg, 5, Grouping::BySubject, &seeds, 1)
        .map_err(|e| e.to_string())?;
    for (s, plan) in &out.plans {
        let k = assert_disjoint(&trials, plan)?;
        folds_checked.0.push(format!("ablation seed {s} {k} folds"));
    }
    let acc = |skip: bool| -> Vec<f64> {
        out.rows.iter().filter(|r| r.skip == skip).map(|r| r.pooled.accuracy).collect()
    };
    let (with, without) = (acc(true), acc(false));
    ensure!(with.len() == 5 && without.len() == 5, "expected 5 paired rows");
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let diff = with.iter().zip(&without).map(|(a, b)| a - b).sum::<f64>() / 5.0;
    ensure!((diff - out.mean_difference).abs() < 1e-12, "mean difference mismatch");
    let fmt = |v: &[f64]| v.iter().map(|a| format!("{:.1}", 100.0 * a)).collect::<Vec<_>>().join("/");
    let detail = format!(
        "skip {} (mean {:.2}%), no skip {} (mean {:.2}%), mean difference {:+.2} points",
        fmt(&with),
        100.0 * mean(&with),
        fmt(&without),
        100.0 * mean(&without),
        100.0 * diff
    );
    let noskip = mean(&without);
    ensure!((0.6..=0.9).contains(&noskip), "no-skip accuracy outside 60-90%: {detail}");
    ensure!(diff >= 0.0, "skip variant worse on average: {detail}");
    Ok(detail)
}

fn criterion_7(folds_checked: &Disjointness) -> Outcome {
    ensure!(!folds_checked.0.is_empty(), "no by-subject runs completed");
    // A plan that mixes subjects across folds must be refused.
    let trials = data::synth_generate(&SynthConfig {
        n_subjects: 4,
        trials_per_class_per_subject: 1,
        n_samples: 32,
        sample_rate_hz: 100.0,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let by_trial = make_folds(&trials, 4, Grouping::ByTrial, 0).map_err(|e| e.to_string())?;
    let leaked = FoldPlan { grouping: Grouping::BySubject, ..by_trial };
    ensure!(
        leaked.check_subject_disjoint(&trials, 0).is_err(),
        "subject leak not detected"
    );
    Ok(format!("disjoint in {}; leaking plan rejected", folds_checked.0.join(", ")))
}

fn criterion_8() -> Outcome {
    let per_class = 20;
    let truth: Vec<u8> = (0..N_CLASSES * per_class).map(|i| (i % N_CLASSES) as u8).collect();
    let mut rng = seed::rng(8);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let skill = rng.gen_range(0.0..1.0);
        let pred: Vec<u8> = truth
            .iter()
            .map(|&t| if rng.gen_bool(skill) { t } else { rng.gen_range(0..N_CLASSES as u8) })
            .collect();
        let m = Metrics::from_predictions(&truth, &pred, N_CLASSES).map_err(|e| e.to_string())?;
        let hits = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
        let oracle = hits as f64 / truth.len() as f64;
        ensure!((m.accuracy - oracle).abs() < 1e-12, "accuracy {} vs counted {oracle}", m.accuracy);
        ensure!(
            m.row_sums().iter().all(|&r| r == per_class as u64),
            "row sums {:?}",
            m.row_sums()
        );
        worst = worst.max((m.accuracy - m.macro_recall).abs());
    }
    ensure!(worst < 1e-12, "|accuracy - macro recall| up to {worst:e}");
    Ok(format!("20 balanced sets, max |accuracy - macro recall| = {worst:.1e}"))
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = SynthConfig {
        n_subjects: 2,
        trials_per_class_per_subject: 2,
        n_samples: 64,
        sample_rate_hz: 125.0,
        seed: 21,
        ..Default::default()
    };
    let (a, b) = (dir.path().join("a.cdt"), dir.path().join("b.cdt"));
    let first = data::synth_generate(&cfg).map_err(|e| e.to_string())?;
    data::write_dataset(&first, &a).map_err(|e| e.to_string())?;
    data::write_dataset(&data::synth_generate(&cfg).map_err(|e| e.to_string())?, &b)
        .map_err(|e| e.to_string())?;
    let bytes_a = std::fs::read(&a).map_err(|e| e.to_string())?;
    ensure!(bytes_a == std::fs::read(&b).map_err(|e| e.to_string())?, "dataset files differ");
    let back = data::read_dataset(&a).map_err(|e| e.to_string())?;
    ensure!(
        back.data().iter().zip(first.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            && back.labels == first.labels
            && back.subject_ids == first.subject_ids
            && back.channel_names == first.channel_names
            && back.sample_rate_hz.to_bits() == first.sample_rate_hz.to_bits(),
        "dataset roundtrip is lossy"
    );

    let enc = EncoderConfig { n_blocks: 3, feature_channels: 8, input_samples: 64, ..Default::default() };
    let tc = TrainConfig { max_epochs: 4, validate_every: 2, batch_size: 16, lr: 1e-3, seed: 5, ..Default::default() };
    let (train, val) = training::validation_split(&first, &(0..first.n_trials()).collect::<Vec<_>>(), 0.25, 5)
        .map_err(|e| e.to_string())?;
    let mut ckpts = Vec::new();
    for _ in 0..2 {
        let model = build_model(enc.clone(), 9).map_err(|e| e.to_string())?;
        let (best, _) = training::fit(model, &first, &train, &val, &tc).map_err(|e| e.to_string())?;
        ckpts.push(best.to_bytes().map_err(|e| e.to_string())?);
    }
    ensure!(ckpts[0] == ckpts[1], "checkpoints differ between identical runs");
    Ok(format!(
        "dataset {} bytes and checkpoint {} bytes identical across runs; roundtrip bit-exact",
        bytes_a.len(),
        ckpts[0].len()
    ))
}

fn criterion_10() -> Outcome {
    let (lr, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-8);
    let p0 = [0.5, -1.2, 3.0];
    let g = [0.3, -2.0, 1e-4];
    let mut adam = AdamState::<f64>::new(lr, b1, b2, eps).map_err(|e| e.to_string())?;
    let mut p = Tensor::new(vec![3], p0.to_vec()).map_err(|e| e.to_string())?;
    let names = vec!["p".to_string()];
    for _ in 0..2 {
        adam.step(&names, &mut [&mut p], &[&g]).map_err(|e| e.to_string())?;
    }
    let mut worst = 0.0f64;
    for i in 0..3 {
        let m1 = (1.0 - b1) * g[i];
        let v1 = (1.0 - b2) * g[i] * g[i];
        let p1 = p0[i] - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * g[i];
        let v2 = b2 * v1 + (1.0 - b2) * g[i] * g[i];
        let p2 = p1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        worst = worst.max((p.data()[i] - p2).abs());
    }
    ensure!(worst < 1e-12, "two-step update off by {worst:e}");

    let mut fresh = AdamState::<f32>::new(1e-3, b1, b2, eps).map_err(|e| e.to_string())?;
    let before: Vec<f32> = vec![0.25, -7.5, 1e-6, 0.0];
    let mut q = Tensor::new(vec![4], before.clone()).map_err(|e| e.to_string())?;
    for _ in 0..3 {
        fresh.step(&names, &mut [&mut q], &[&[0.0f32; 4]]).map_err(|e| e.to_string())?;
    }
    ensure!(
        q.data().iter().zip(&before).all(|(a, b)| a.to_bits() == b.to_bits()),
        "zero gradient moved parameters"
    );
    Ok(format!("max deviation from hand recurrence {worst:.1e}; zero gradient leaves parameters bit-identical"))
}

fn main() {
    let wanted: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let mut folds_checked = Disjointness(Vec::new());
    let mut failures = 0;
    let mut report = |n: u32, title: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {title}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n:>2} FAIL  {title}: {detail} [{secs:.1}s]");
            }
        }
    };
    if run(1) {
        report(1, "gradient suite", &mut criterion_1);
    }
    if run(2) {
        report(2, "filter suite", &mut criterion_2);
    }
    if run(3) {
        report(3, "preprocessing contract", &mut criterion_3);
    }
    if run(4) {
        report(4, "overfit check", &mut criterion_4);
    }
    if run(5) {
        report(5, "chance level", &mut || criterion_5(&mut folds_checked));
    }
    if run(6) {
        report(6, "directional ablation", &mut || criterion_6(&mut folds_checked));
    }
    if run(7) && (run(5) || run(6)) {
        report(7, "subject independence", &mut || criterion_7(&folds_checked));
    }
    if run(8) {
        report(8, "metrics identity", &mut criterion_8);
    }
    if run(9) {
        report(9, "determinism and I/O", &mut criterion_9);
    }
    if run(10) {
        report(10, "adam unit check", &mut criterion_10);
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
