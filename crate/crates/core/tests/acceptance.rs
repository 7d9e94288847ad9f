//! Acceptance criteria 1 to 9. Each test writes one `PASS`/`FAIL` line to stderr
//! (uncaptured) before asserting, so `cargo test --test acceptance` always shows
//! the full verdict list.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

use sit_core::adaptation::{crt_adapt, crt_adapt_with_targets, AdaptConfig};
use sit_core::checkpoint::Checkpoint;
use sit_core::config::RunConfig;
use sit_core::data::{decode_sitc, encode_sitc, prepare_corpus, PreparedCorpus, SyntheticCorpusSpec};
use sit_core::error::FormatError;
use sit_core::eval::{
    centroid_separation, frame_accuracy, invariance_ratio, speaker_probe, tsne, Pca, ProbeConfig, TsneConfig,
};
use sit_core::gradcheck::{finite_diff_grad, finite_diff_grad_vec, relative_error, relative_error_slices};
use sit_core::loss::LossReduction;
use sit_core::model::{grl_backward, split_pretrained, AcousticModel, AcousticTopology, Hyperparams, SpeakerTopology};
use sit_core::nn::{Activation, LayerGrad, Mlp};
use sit_core::objectives::{senone_loss, senone_loss_grad, speaker_loss, speaker_loss_grad};
use sit_core::pipeline::cmd_repro;
use sit_core::seeding::stream;
use sit_core::trainer::{continue_si, init_speaker, sit_gradients, sit_step, train_si, train_sit};
use sit_core::{Matrix, ModelParams, SitError};

fn verdict(id: u8, name: &str, pass: bool, detail: String) {
    let line = format!(
        "acceptance criterion {id} [{}] {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{line}");
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn mlp_bits_equal(a: &Mlp<f64>, b: &Mlp<f64>) -> bool {
    a.len() == b.len()
        && a.layers()
            .iter()
            .zip(b.layers())
            .all(|(la, lb)| same_bits(la.weights.as_slice(), lb.weights.as_slice()) && same_bits(&la.bias, &lb.bias))
}

fn grads_bits_equal(a: &[LayerGrad<f64>], b: &[LayerGrad<f64>]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| same_bits(x.weights.as_slice(), y.weights.as_slice()) && same_bits(&x.bias, &y.bias))
}

// ---------------------------------------------------------------- criterion 1

#[derive(Clone, Copy)]
enum Group {
    Feature,
    Senone,
    Speaker,
}

fn group_mut(p: &mut ModelParams<f64>, g: Group) -> &mut Mlp<f64> {
    match g {
        Group::Feature => &mut p.acoustic.feature,
        Group::Senone => &mut p.acoustic.senone,
        Group::Speaker => &mut p.speaker,
    }
}

fn group_ref(p: &ModelParams<f64>, g: Group) -> &Mlp<f64> {
    match g {
        Group::Feature => &p.acoustic.feature,
        Group::Senone => &p.acoustic.senone,
        Group::Speaker => &p.speaker,
    }
}

/// Largest relative error between `analytic` and central differences of
/// `objective` over every layer of `group`.
fn worst_error(
    params: &ModelParams<f64>,
    group: Group,
    analytic: &[LayerGrad<f64>],
    objective: &dyn Fn(&ModelParams<f64>) -> f64,
) -> f64 {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (li, g) in analytic.iter().enumerate() {
        let w0 = group_ref(params, group).layers()[li].weights.clone();
        let fd_w = finite_diff_grad(
            |w: &Matrix<f64>| {
                let mut p = params.clone();
                group_mut(&mut p, group).layers_mut()[li].weights = w.clone();
                objective(&p)
            },
            &w0,
            h,
        )
        .unwrap();
        worst = worst.max(relative_error(&g.weights, &fd_w));
        let b0 = group_ref(params, group).layers()[li].bias.clone();
        let fd_b = finite_diff_grad_vec(
            |b: &[f64]| {
                let mut p = params.clone();
                group_mut(&mut p, group).layers_mut()[li].bias = b.to_vec();
                objective(&p)
            },
            &b0,
            h,
        )
        .unwrap();
        worst = worst.max(relative_error_slices(&g.bias, &fd_b));
    }
    worst
}

fn random_case(seed: u64) -> (ModelParams<f64>, Matrix<f64>, Vec<usize>, Vec<usize>, f64) {
    let mut rng = stream(seed, "oracle-case", 0);
    let acts = [Activation::Tanh, Activation::Sigmoid, Activation::Relu];
    let dim = |rng: &mut rand_chacha::ChaCha8Rng| rng.random_range(2..=8usize);
    let input = dim(&mut rng);
    let n_hidden = rng.random_range(2..=3usize);
    let hidden: Vec<usize> = (0..n_hidden).map(|_| dim(&mut rng)).collect();
    let n_senones = dim(&mut rng);
    let n_speakers = dim(&mut rng);
    let act = acts[rng.random_range(0..acts.len())];
    let topo = AcousticTopology {
        input_dim: input,
        hidden: hidden.clone(),
        n_senones,
        activation: act,
    };
    let stack = Mlp::<f64>::init(&topo.specs(), &mut stream(seed, "oracle-init", 0)).unwrap();
    let n_h = rng.random_range(1..n_hidden);
    let acoustic = split_pretrained(&stack, n_h).unwrap();
    let spk_hidden: Vec<usize> = (0..rng.random_range(1..=2usize)).map(|_| dim(&mut rng)).collect();
    let spk_topo = SpeakerTopology {
        hidden: spk_hidden,
        n_speakers,
        activation: act,
    };
    let speaker = init_speaker(&spk_topo, acoustic.feature_dim(), seed).unwrap();
    let mut params = ModelParams::new(acoustic, speaker).unwrap();
    // non-zero biases so their gradients are exercised away from the init point
    for g in [Group::Feature, Group::Senone, Group::Speaker] {
        for layer in group_mut(&mut params, g).layers_mut() {
            for b in &mut layer.bias {
                *b = rng.random_range(-0.3..0.3);
            }
        }
    }
    let batch = rng.random_range(1..=5usize);
    let x = Matrix::from_fn(batch, input, |_, _| rng.random_range(-1.5..1.5));
    let senones = (0..batch).map(|_| rng.random_range(0..n_senones)).collect();
    let speakers = (0..batch).map(|_| rng.random_range(0..n_speakers)).collect();
    let lambda = [0.5, 1.0, 3.0][rng.random_range(0..3usize)];
    (params, x, senones, speakers, lambda)
}

#[test]
fn criterion_1_gradient_oracle() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let cases = 40;
    for seed in 0..cases {
        let (params, x, q, a, lambda) = random_case(seed);
        let red = LossReduction::Sum;
        let ls = |p: &ModelParams<f64>| senone_loss(&x, &q, p.feature(), p.senone(), red).unwrap();
        let la = |p: &ModelParams<f64>| speaker_loss(&x, &a, p.feature(), &p.speaker, red).unwrap();
        let bracket = |p: &ModelParams<f64>| ls(p) - lambda * la(p);

        let gy = senone_loss_grad(&x, &q, params.feature(), params.senone(), red).unwrap();
        let gs = speaker_loss_grad(&x, &a, params.feature(), &params.speaker, red).unwrap();
        let fused = sit_gradients(&params, &x, &q, &a, lambda, red).unwrap();

        worst = worst.max(worst_error(&params, Group::Feature, &gy.feature, &ls));
        worst = worst.max(worst_error(&params, Group::Senone, &gy.head, &ls));
        worst = worst.max(worst_error(&params, Group::Feature, &gs.feature, &la));
        worst = worst.max(worst_error(&params, Group::Speaker, &gs.head, &la));
        worst = worst.max(worst_error(&params, Group::Feature, &fused.feature, &bracket));
        worst = worst.max(worst_error(&params, Group::Senone, &fused.senone, &ls));
        worst = worst.max(worst_error(&params, Group::Speaker, &fused.speaker, &la));
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "gradient oracle",
        worst < 1e-4 && elapsed < Duration::from_secs(10),
        format!("{cases} random networks, worst relative error {worst:.2e} (< 1e-4), {elapsed:.2?} (< 10 s)"),
    );
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_2_grl_exactness() {
    let (params, x, q, a, _) = random_case(101);
    let red = LossReduction::Sum;
    let f_trace = params.feature().forward_trace(&x).unwrap();
    let features = &f_trace.output;
    let upstream = Matrix::from_fn(features.rows(), features.cols(), |i, j| {
        ((i * 7 + j * 3) % 5) as f64 * 0.37 - 0.6
    });

    let mut ok = true;
    let mut notes = Vec::new();
    for lambda in [0.0, 1.0, 3.0] {
        let back = grl_backward(&upstream, lambda);
        let expected: Vec<f64> = upstream.as_slice().iter().map(|g| -lambda * g).collect();
        let exact = same_bits(back.as_slice(), &expected);

        // the speaker branch must see F itself, and the fused feature gradient must
        // equal backpropagating d_senone + grl(d_speaker) through the extractor
        let fused = sit_gradients(&params, &x, &q, &a, lambda, red).unwrap();
        let direct_speaker = speaker_loss(&x, &a, params.feature(), &params.speaker, red).unwrap();
        let forward_identity = fused.breakdown.speaker_loss.to_bits() == direct_speaker.to_bits();

        let y_trace = params.senone().forward_trace(features).unwrap();
        let (_, dy) = sit_core::loss::batch_cross_entropy(&y_trace.output, &q, red).unwrap();
        let (_, df_y) = params.senone().backward(&y_trace, &dy).unwrap();
        let s_trace = params.speaker.forward_trace(features).unwrap();
        let (_, ds) = sit_core::loss::batch_cross_entropy(&s_trace.output, &a, red).unwrap();
        let (_, df_s) = params.speaker.backward(&s_trace, &ds).unwrap();
        let df = if lambda == 0.0 {
            df_y
        } else {
            df_y.add(&grl_backward(&df_s, lambda)).unwrap()
        };
        let (manual, _) = params.feature().backward(&f_trace, &df).unwrap();
        let through = grads_bits_equal(&fused.feature, &manual);

        ok &= exact && forward_identity && through;
        notes.push(format!(
            "lambda={lambda}: backward {exact}, forward {forward_identity}, fused {through}"
        ));
    }
    verdict(2, "GRL exactness", ok, notes.join("; "));
}

// ---------------------------------------------------------------- shared desk-scale models

struct Shared {
    corpus: PreparedCorpus<f64>,
    si: AcousticModel<f64>,
    sit: AcousticModel<f64>,
    hyper: Hyperparams,
    train_time: Duration,
}

fn shared() -> &'static Shared {
    static CELL: OnceLock<Shared> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let cfg = RunConfig::default();
        let corpus = prepare_corpus::<f64>(&cfg.corpus).unwrap();
        let (si_stack, _) = train_si(&corpus.train, &cfg.acoustic, &cfg.hyper).unwrap();
        let (sit, _) = train_sit(&si_stack, &corpus.train, &cfg.speaker, &cfg.sit_hyper()).unwrap();
        Shared {
            si: split_pretrained(&si_stack, cfg.hyper.n_h).unwrap(),
            sit: sit.acoustic,
            corpus,
            hyper: cfg.hyper,
            train_time: start.elapsed(),
        }
    })
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_3_lambda_zero_reduces_to_si() {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let corpus = prepare_corpus::<f64>(&cfg.corpus).unwrap();
    let warm = Hyperparams {
        epochs: 2,
        ..cfg.hyper.clone()
    };
    let (base, _) = train_si(&corpus.train, &cfg.acoustic, &warm).unwrap();
    let hyper = Hyperparams {
        epochs: 3,
        lambda: 0.0,
        ..cfg.hyper.clone()
    };

    let (si, _) = continue_si(base.clone(), &corpus.train, &hyper).unwrap();
    let (sit, _) = train_sit(&base, &corpus.train, &cfg.speaker, &hyper).unwrap();
    let si = split_pretrained(&si, hyper.n_h).unwrap();
    let identical =
        mlp_bits_equal(&si.feature, &sit.acoustic.feature) && mlp_bits_equal(&si.senone, &sit.acoustic.senone);
    let elapsed = start.elapsed();
    verdict(
        3,
        "lambda = 0 reduction",
        identical && elapsed < Duration::from_secs(120),
        format!(
            "theta_f and theta_y bit-identical after {} epochs on {} frames: {identical}, {elapsed:.2?} (< 2 min)",
            hyper.epochs,
            corpus.train.len()
        ),
    );
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_4_senone_branch_isolation() {
    let cfg = RunConfig::default();
    let corpus = prepare_corpus::<f64>(&cfg.corpus).unwrap();
    let stack = Mlp::<f64>::init(&cfg.acoustic.specs(), &mut stream(4, "c4", 0)).unwrap();
    let acoustic = split_pretrained(&stack, cfg.hyper.n_h).unwrap();
    let speaker = init_speaker(&cfg.speaker, acoustic.feature_dim(), 4).unwrap();
    let params = ModelParams::new(acoustic, speaker).unwrap();

    let mut idx: Vec<usize> = (0..corpus.train.len()).collect();
    idx.shuffle(&mut stream(4, "c4-batch", 0));
    let batch = corpus.train.select(&idx[..64]);
    let mut perm: Vec<usize> = (0..cfg.corpus.n_speakers).collect();
    perm.shuffle(&mut stream(4, "c4-perm", 0));
    let permuted: Vec<usize> = batch.speaker_labels.iter().map(|&a| perm[a]).collect();
    assert_ne!(permuted, batch.speaker_labels);

    let lambda = cfg.hyper.lambda;
    let red = cfg.hyper.reduction;
    let g0 = sit_gradients(
        &params,
        &batch.frames,
        &batch.senone_labels,
        &batch.speaker_labels,
        lambda,
        red,
    )
    .unwrap();
    let g1 = sit_gradients(&params, &batch.frames, &batch.senone_labels, &permuted, lambda, red).unwrap();
    let grad_same = grads_bits_equal(&g0.senone, &g1.senone);
    let loss_same = g0.breakdown.senone_loss.to_bits() == g1.breakdown.senone_loss.to_bits();

    let (mut p0, mut p1) = (params.clone(), params.clone());
    let b0 = sit_step(
        &mut p0,
        &batch.frames,
        &batch.senone_labels,
        &batch.speaker_labels,
        lambda,
        cfg.hyper.mu,
        red,
    )
    .unwrap();
    let b1 = sit_step(
        &mut p1,
        &batch.frames,
        &batch.senone_labels,
        &permuted,
        lambda,
        cfg.hyper.mu,
        red,
    )
    .unwrap();
    let theta_y_same = mlp_bits_equal(p0.senone(), p1.senone());
    let step_loss_same = b0.senone_loss.to_bits() == b1.senone_loss.to_bits();
    let speaker_differs = b0.speaker_loss != b1.speaker_loss;

    verdict(
        4,
        "senone branch isolation",
        grad_same && loss_same && theta_y_same && step_loss_same,
        format!(
            "senone gradient {grad_same}, senone loss {loss_same}, updated theta_y {theta_y_same}, step loss {step_loss_same} \
             (speaker loss changed: {speaker_differs})"
        ),
    );
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_5_directional_invariance() {
    let start = Instant::now();
    let s = shared();
    let cfg = RunConfig::default();
    let train = &s.corpus.train;
    let probe = ProbeConfig::default();
    let measure = |m: &AcousticModel<f64>| {
        let f = m.deep_features(&train.frames).unwrap();
        let p = speaker_probe(&f, &train.speaker_labels, &probe, cfg.eval_seed)
            .unwrap()
            .test_accuracy;
        let r = invariance_ratio(&f, &train.senone_labels, &train.speaker_labels)
            .unwrap()
            .ratio;
        let acc = frame_accuracy(m, &s.corpus.test).unwrap();
        (p, r, acc)
    };
    let (p_si, r_si, acc_si) = measure(&s.si);
    let (p_sit, r_sit, acc_sit) = measure(&s.sit);
    let elapsed = s.train_time + start.elapsed();
    let pass =
        p_sit <= p_si - 0.10 && r_sit <= 0.7 * r_si && acc_sit >= acc_si - 0.02 && elapsed < Duration::from_secs(600);
    verdict(
        5,
        "directional invariance",
        pass,
        format!(
            "probe SI {p_si:.4} -> SIT {p_sit:.4}; ratio SI {r_si:.4} -> SIT {r_sit:.4} (limit {:.4}); \
             held-out accuracy SI {acc_si:.4} -> SIT {acc_sit:.4}; {elapsed:.2?}",
            0.7 * r_si
        ),
    );
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_6_adaptation_direction() {
    let s = shared();
    let start = Instant::now();
    let cfg = AdaptConfig::default();
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, model) in [("SI", &s.si), ("SIT", &s.sit)] {
        for a in s.corpus.test.speakers() {
            let sub = s.corpus.test.speaker_subset(a);
            let pre = frame_accuracy(model, &sub).unwrap();
            let pseudo = crt_adapt(model, &sub.frames, &cfg, s.hyper.mu).unwrap();
            let post = frame_accuracy(&pseudo.model, &sub).unwrap();
            let oracle = crt_adapt_with_targets(model, &sub.frames, &sub.senone_labels, &cfg, s.hyper.mu).unwrap();
            let orc = frame_accuracy(&oracle, &sub).unwrap();
            pass &= post - pre >= 0.005 && orc >= post;
            notes.push(format!("{name} spk{a} {pre:.4} -> {post:.4} (oracle {orc:.4})"));
        }
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(300);
    verdict(
        6,
        "adaptation direction",
        pass,
        format!("{}; {elapsed:.2?}", notes.join(", ")),
    );
}

// ---------------------------------------------------------------- criterion 7

fn tiny_config() -> RunConfig {
    let defaults = RunConfig::default();
    RunConfig {
        corpus: SyntheticCorpusSpec {
            n_senones: 5,
            n_speakers: 4,
            n_test_speakers: 2,
            frames_per_speaker_per_senone: 20,
            ..defaults.corpus.clone()
        },
        acoustic: AcousticTopology {
            n_senones: 5,
            hidden: vec![16; 3],
            ..defaults.acoustic.clone()
        },
        speaker: SpeakerTopology {
            hidden: vec![16],
            n_speakers: 4,
            ..defaults.speaker.clone()
        },
        hyper: Hyperparams {
            epochs: 2,
            ..defaults.hyper.clone()
        },
        adapt: AdaptConfig {
            epochs_adapt: 2,
            ..defaults.adapt.clone()
        },
        probe: ProbeConfig {
            epochs: 2,
            ..defaults.probe.clone()
        },
        tsne: TsneConfig {
            perplexity: 5.0,
            iterations: 150,
            ..defaults.tsne.clone()
        },
        projection: sit_core::config::ProjectionConfig {
            frames_per_speaker: 10,
            ..defaults.projection.clone()
        },
        checkpoint_every: Some(1),
        ..defaults
    }
}

fn hash_tree(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            // manifests record the (different) absolute input paths
            if path.file_name().is_some_and(|n| n == "manifest.json") {
                continue;
            }
            let rel = path.strip_prefix(root).unwrap().display().to_string();
            let digest = Sha256::digest(std::fs::read(&path).unwrap());
            out.insert(rel, digest.iter().map(|b| format!("{b:02x}")).collect());
        }
    }
    out
}

#[test]
fn criterion_7_determinism() {
    let cfg = tiny_config();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_repro(&cfg, d1.path()).unwrap();
    cmd_repro(&cfg, d2.path()).unwrap();
    let (h1, h2) = (hash_tree(d1.path()), hash_tree(d2.path()));
    let kinds = ["sitc", "json", "csv", "md"];
    let covered: Vec<&str> = kinds
        .iter()
        .copied()
        .filter(|k| h1.keys().any(|f| f.ends_with(&format!(".{k}"))))
        .collect();
    let differing: Vec<&String> = h1.keys().filter(|k| h1.get(*k) != h2.get(*k)).collect();
    let pass = h1 == h2 && covered.len() == kinds.len() && h1.len() > 10;
    verdict(
        7,
        "determinism",
        pass,
        format!(
            "{} files hashed across two full pipeline runs ({}), {} differ",
            h1.len(),
            covered.join("/"),
            differing.len()
        ),
    );
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_8_format_round_trips() {
    let cfg = tiny_config();
    let corpus = prepare_corpus::<f64>(&cfg.corpus).unwrap();
    let mut checks = Vec::new();

    let bytes = encode_sitc(&corpus.train).unwrap();
    let back = decode_sitc::<f64>(&bytes).unwrap();
    checks.push((
        "sitc exact",
        same_bits(back.frames.as_slice(), corpus.train.frames.as_slice())
            && back.senone_labels == corpus.train.senone_labels
            && back.speaker_labels == corpus.train.speaker_labels
            && back.n_senones == corpus.train.n_senones
            && back.n_speakers == corpus.train.n_speakers,
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    checks.push((
        "sitc magic",
        matches!(
            decode_sitc::<f64>(&bad),
            Err(SitError::Format(FormatError::BadMagic { .. }))
        ),
    ));
    let mut bad = bytes.clone();
    bad[4] = 99;
    checks.push((
        "sitc version",
        matches!(
            decode_sitc::<f64>(&bad),
            Err(SitError::Format(FormatError::UnsupportedVersion(99)))
        ),
    ));
    checks.push((
        "sitc truncated",
        matches!(
            decode_sitc::<f64>(&bytes[..bytes.len() - 9]),
            Err(SitError::Format(FormatError::Truncated { .. }))
        ),
    ));
    let mut bad = bytes.clone();
    let mid = bytes.len() / 2;
    bad[mid] ^= 0x10;
    checks.push((
        "sitc checksum",
        matches!(
            decode_sitc::<f64>(&bad),
            Err(SitError::Format(FormatError::ChecksumMismatch { .. }))
        ),
    ));

    let hyper = Hyperparams {
        epochs: 1,
        ..cfg.hyper.clone()
    };
    let (si, _) = train_si(&corpus.train, &cfg.acoustic, &hyper).unwrap();
    let (sit, _) = train_sit(&si, &corpus.train, &cfg.speaker, &hyper).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sit.json");
    Checkpoint::from_sit(&sit, &hyper).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let params = loaded.model_params::<f64>().unwrap();
    checks.push((
        "checkpoint exact",
        mlp_bits_equal(&params.acoustic.feature, &sit.acoustic.feature)
            && mlp_bits_equal(&params.acoustic.senone, &sit.acoustic.senone)
            && mlp_bits_equal(&params.speaker, &sit.speaker)
            && loaded.hyper == hyper,
    ));
    let si_ckpt = Checkpoint::from_si(&si, &hyper, corpus.train.n_speakers).unwrap();
    checks.push((
        "si checkpoint exact",
        mlp_bits_equal(
            &Checkpoint::from_json(&si_ckpt.to_json().unwrap())
                .unwrap()
                .stack()
                .unwrap(),
            &si,
        ),
    ));
    let text = std::fs::read_to_string(&path).unwrap();
    // a digit-for-digit swap keeps the JSON well formed, so only the checksum can catch it
    let start = text.find("\"weights\":[").unwrap();
    let pos = start + text[start..].find(|c: char| c.is_ascii_digit()).unwrap();
    let mut bad = text.clone().into_bytes();
    bad[pos] = if bad[pos] == b'3' { b'4' } else { b'3' };
    checks.push((
        "checkpoint checksum",
        matches!(Checkpoint::from_json(std::str::from_utf8(&bad).unwrap()), Err(SitError::Checkpoint(m)) if m.contains("checksum")),
    ));
    checks.push((
        "checkpoint truncated",
        matches!(
            Checkpoint::from_json(&text[..text.len() - 40]),
            Err(SitError::Checkpoint(_))
        ),
    ));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(
        8,
        "format round trips",
        failed.is_empty(),
        format!("{} checks, failed: {:?}", checks.len(), failed),
    );
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_9_projection_sanity() {
    // planted rank-2 structure: X = mean + U·V with U n×2, V 2×d
    let mut rng = stream(9, "pca-plant", 0);
    let (n, d) = (200, 12);
    let u = Matrix::from_fn(n, 2, |_, j| {
        rng.random_range(-1.0..1.0) * if j == 0 { 5.0 } else { 2.0 }
    });
    let v = Matrix::from_fn(2, d, |_, _| rng.random_range(-1.0..1.0));
    let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let x = u.matmul(&v).unwrap().add_row_vector(&mean).unwrap();
    let pca = Pca::fit(&x, 2).unwrap();
    let recon = pca.reconstruct(&pca.transform(&x).unwrap()).unwrap();
    let pca_err = recon.sub(&x).unwrap().frobenius_norm() / x.frobenius_norm();

    let s = shared();
    let train = &s.corpus.train;
    let mut idx = Vec::new();
    for a in 0..4 {
        idx.extend(train.indices_where(|q, sp| q == 0 && sp == a).into_iter().take(100));
    }
    let sel = train.select(&idx);
    let sep = |m: &AcousticModel<f64>| {
        let f = m.deep_features(&sel.frames).unwrap();
        (1..=3u64)
            .map(|seed| {
                centroid_separation(&tsne(&f, &TsneConfig::default(), seed).unwrap(), &sel.speaker_labels).unwrap()
            })
            .sum::<f64>()
            / 3.0
    };
    let (sep_si, sep_sit) = (sep(&s.si), sep(&s.sit));
    verdict(
        9,
        "PCA and t-SNE sanity",
        pca_err < 1e-8 && sep_sit < sep_si && sel.len() == 400,
        format!(
            "PCA rank-2 relative reconstruction error {pca_err:.2e}; t-SNE centroid separation on {} frames \
             (senone 0, 4 speakers, 3 seeds): SI {sep_si:.4}, SIT {sep_sit:.4}",
            sel.len()
        ),
    );
}
