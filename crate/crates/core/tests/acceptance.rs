//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero when any of them fails.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use gesturewire::baseline::{lcss_len, BaselineModel, BaselineParams};
use gesturewire::eval::{
    gwet_ac1, macro_f1, match_f1, ConfusionMatrix, RatedItem, RatingSheet, WindowId,
};
use gesturewire::model::{
    cross_entropy, param_count, pretrain_loss, BoundParams, LossParams, ModelConfig, ParamGroup,
    Strategy, TransformerModel,
};
use gesturewire::serve::{
    replay_tcp, Classifier, ClutchSpan, Outbound, ReplayRate, Server, SessionConfig,
};
use gesturewire::signal::{
    alternating_script, auto_segment, compute_norm_stats, normalize, segment_window,
    slide_labeled_windows, synth_generate, GestureClass, NormStats, Recording, ScriptEntry,
    Segment, SegmentParams, SynthConfig, Window, CHANNELS, IDLE,
};
use gesturewire::tensorad::gradcheck::{central_difference, rel_error};
use gesturewire::tensorad::{Graph, Tensor, Var};
use gesturewire::train::{
    bundle_from_bytes, bundle_to_bytes, confusion, export_bundle, finetune, import_bundle,
    pretrain, BundleMetadata, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 5;
/// Pretraining epochs in the model-vs-baseline comparison.
const HARD_PRETRAIN_EPOCHS: usize = 50;
/// Pretraining epochs per strategy in the low-label comparison.
const LOW_LABEL_PRETRAIN_EPOCHS: usize = 20;
/// Fine-tuning epochs on the hard suite.
const FINETUNE_EPOCHS: usize = 25;
/// Three labels give only a few steps per epoch, so the low-label runs fine-tune longer.
const LOW_LABEL_FINETUNE_EPOCHS: usize = 50;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn main() {
    gesturewire::tune_allocator();
    let criteria: Vec<(&str, Duration, fn() -> Outcome)> = vec![
        ("parameter count", Duration::from_secs(1), param_count_anchor),
        ("gradient suite", Duration::from_secs(120), gradient_suite),
        ("metric oracles", Duration::from_secs(60), metric_oracles),
        ("segmentation", Duration::from_secs(60), segmentation),
        ("transformer vs baseline", Duration::from_secs(480), model_vs_baseline),
        ("pretraining with 3 labels", Duration::from_secs(600), pretraining_benefit),
        ("streaming determinism", Duration::from_secs(60), streaming),
        ("bundle round trip", Duration::from_secs(60), bundle_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let out = check();
        let took = start.elapsed();
        let in_time = took <= budget;
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] {} {name}: {} ({:.1} s{})",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            out.detail,
            took.as_secs_f64(),
            if in_time { String::new() } else { format!(", over the {} s budget", budget.as_secs()) },
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn fmt_all(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

fn param_count_anchor() -> Outcome {
    let n = param_count(&ModelConfig::paper(5));
    let built = TransformerModel::new(ModelConfig::paper(5), 0)
        .map(|m| m.params.total_len(Some(ParamGroup::Classifier)))
        .unwrap_or(0);
    Outcome::new(
        n == 617_093 && built == n && (550_000..=680_000).contains(&n),
        format!("{n} parameters (instantiated classifier {built}), expected 617093"),
    )
}

// ---------------------------------------------------------------- gradients

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Fixed pseudo-random weighting that turns any output into a scalar.
fn weighted_sum(g: &mut Graph, y: Var) -> Var {
    let t = g.value(y);
    let w: Vec<f64> = (0..t.len()).map(|i| ((i * 7 + 3) as f64 * 0.61).sin()).collect();
    let wv = g.constant(Tensor::new(t.shape().to_vec(), w).unwrap());
    let p = g.mul(y, wv).unwrap();
    g.sum(p)
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;

/// Largest relative error over `probes` random coordinates of all inputs.
fn op_gradcheck(inputs: &[Tensor], build: &Build, probes: usize, seed: u64) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).unwrap();
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let (i, j) = coords[rng.random_range(0..coords.len())];
        let analytic = grads.get(vars[i]).data()[j];
        let eval = |x: &[f64]| {
            let mut ins = inputs.to_vec();
            ins[i].data_mut()[j] = x[0];
            let mut g = Graph::new();
            let vs: Vec<Var> = ins.into_iter().map(|t| g.leaf(t, true)).collect();
            let l = build(&mut g, &vs);
            g.value(l).data()[0]
        };
        let numeric = central_difference(eval, &[inputs[i].data()[j]], 0, 1e-5);
        worst = worst.max(rel_error(analytic, numeric));
    }
    worst
}

fn primitive_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<Tensor>, Build)> {
    let m = |rng: &mut ChaCha8Rng, r: usize, c: usize| random_tensor(rng, &[r, c], -1.0, 1.0);
    vec![
        ("add", vec![m(rng, 4, 6), m(rng, 4, 6)], Box::new(|g, v| { let y = g.add(v[0], v[1]).unwrap(); weighted_sum(g, y) })),
        ("sub", vec![m(rng, 4, 6), m(rng, 4, 6)], Box::new(|g, v| { let y = g.sub(v[0], v[1]).unwrap(); weighted_sum(g, y) })),
        ("mul", vec![m(rng, 4, 6), m(rng, 4, 6)], Box::new(|g, v| { let y = g.mul(v[0], v[1]).unwrap(); weighted_sum(g, y) })),
        ("add_bias", vec![m(rng, 4, 6), random_tensor(rng, &[6], -1.0, 1.0)], Box::new(|g, v| { let y = g.add_bias(v[0], v[1]).unwrap(); weighted_sum(g, y) })),
        ("scale", vec![m(rng, 4, 6)], Box::new(|g, v| { let y = g.scale(v[0], -1.7); weighted_sum(g, y) })),
        ("matmul", vec![m(rng, 4, 5), m(rng, 5, 3)], Box::new(|g, v| { let y = g.matmul(v[0], v[1]).unwrap(); weighted_sum(g, y) })),
        ("transpose", vec![m(rng, 4, 6)], Box::new(|g, v| { let y = g.transpose(v[0]).unwrap(); weighted_sum(g, y) })),
        (
            "conv1d_same",
            vec![m(rng, 3, 10), random_tensor(rng, &[4, 3, 4], -1.0, 1.0), random_tensor(rng, &[4], -1.0, 1.0)],
            Box::new(|g, v| { let y = g.conv1d_same(v[0], v[1], v[2]).unwrap(); weighted_sum(g, y) }),
        ),
        ("softmax", vec![m(rng, 4, 6)], Box::new(|g, v| { let y = g.softmax(v[0]); weighted_sum(g, y) })),
        ("log_softmax", vec![m(rng, 4, 6)], Box::new(|g, v| { let y = g.log_softmax(v[0]); weighted_sum(g, y) })),
        (
            "layernorm",
            vec![m(rng, 4, 6), random_tensor(rng, &[6], 0.5, 1.5), random_tensor(rng, &[6], -0.5, 0.5)],
            Box::new(|g, v| { let y = g.layernorm(v[0], v[1], v[2], 1e-5).unwrap(); weighted_sum(g, y) }),
        ),
        ("gelu", vec![m(rng, 4, 6)], Box::new(|g, v| { let y = g.gelu(v[0]); weighted_sum(g, y) })),
        ("relu", vec![m(rng, 4, 6)], Box::new(|g, v| { let y = g.relu(v[0]); weighted_sum(g, y) })),
        ("clamp_log", vec![random_tensor(rng, &[4, 6], 0.05, 2.0)], Box::new(|g, v| { let y = g.clamp_log(v[0], 1e-3); weighted_sum(g, y) })),
        ("mean_rows", vec![m(rng, 4, 6)], Box::new(|g, v| { let y = g.mean_rows(v[0]).unwrap(); weighted_sum(g, y) })),
        ("group_mean_rows", vec![m(rng, 6, 4)], Box::new(|g, v| { let y = g.group_mean_rows(v[0], 2).unwrap(); weighted_sum(g, y) })),
        (
            "attention",
            vec![m(rng, 6, 4), m(rng, 6, 4), m(rng, 6, 4)],
            Box::new(|g, v| { let y = g.attention(v[0], v[1], v[2], 2, 2).unwrap(); weighted_sum(g, y) }),
        ),
        ("sum", vec![m(rng, 4, 6)], Box::new(|g, v| { let y = g.mul(v[0], v[0]).unwrap(); g.sum(y) })),
        ("mean", vec![m(rng, 4, 6)], Box::new(|g, v| { let y = g.mul(v[0], v[0]).unwrap(); g.mean(y) })),
        ("slice_cols", vec![m(rng, 4, 6)], Box::new(|g, v| { let y = g.slice_cols(v[0], 1, 4).unwrap(); weighted_sum(g, y) })),
        ("concat_cols", vec![m(rng, 4, 3), m(rng, 4, 5)], Box::new(|g, v| { let y = g.concat_cols(&[v[1], v[0], v[1]]).unwrap(); weighted_sum(g, y) })),
        ("concat_rows", vec![m(rng, 2, 6), m(rng, 3, 6)], Box::new(|g, v| { let y = g.concat_rows(&[v[1], v[0]]).unwrap(); weighted_sum(g, y) })),
        ("select_rows", vec![m(rng, 4, 6)], Box::new(|g, v| { let y = g.select_rows(v[0], &[3, 0, 3]).unwrap(); weighted_sum(g, y) })),
        ("normalize_rows", vec![m(rng, 4, 6)], Box::new(|g, v| { let y = g.normalize_rows(v[0]).unwrap(); weighted_sum(g, y) })),
        ("row_norms", vec![m(rng, 4, 6)], Box::new(|g, v| { let y = g.row_norms(v[0]).unwrap(); weighted_sum(g, y) })),
        ("reshape", vec![m(rng, 4, 6)], Box::new(|g, v| { let y = g.reshape(v[0], &[3, 8]).unwrap(); weighted_sum(g, y) })),
    ]
}

fn random_window(rng: &mut ChaCha8Rng, t_len: usize) -> Window {
    let data = (0..CHANNELS * t_len).map(|_| rng.random_range(-1.5..1.5)).collect();
    Window::new(data, "rand", 0).unwrap()
}

/// Every tensor random, including those initialized to zero or one.
fn random_model(cfg: ModelConfig, seed: u64) -> TransformerModel {
    let mut m = TransformerModel::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in m.params.values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
    }
    m
}

fn small_config() -> ModelConfig {
    ModelConfig {
        window: 40,
        d_model: 16,
        n_blocks: 2,
        n_heads: 4,
        d_ff: 32,
        proj_dim: 8,
        cpc_horizon: 4,
        ..ModelConfig::paper(5)
    }
}

/// Relative error of a model loss at `probes` random parameter coordinates
/// that the loss depends on.
fn loss_gradcheck(
    model: &TransformerModel,
    loss: &dyn Fn(&TransformerModel, &mut Graph, &BoundParams) -> Var,
    probes: usize,
    seed: u64,
) -> f64 {
    let mut g = Graph::new();
    let p = model.bind(&mut g, true);
    let l = loss(model, &mut g, &p);
    let grads = g.backward(l).unwrap();
    let coords: Vec<(usize, usize)> = model
        .params
        .values()
        .iter()
        .enumerate()
        .filter(|(i, _)| grads.get_ref(p.var(*i)).is_some())
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let (i, j) = coords[rng.random_range(0..coords.len())];
        let analytic = grads.get(p.var(i)).data()[j];
        let eval = |x: &[f64]| {
            let mut m = model.clone();
            m.params.values_mut()[i].data_mut()[j] = x[0];
            let mut g = Graph::new();
            let p = m.bind(&mut g, false);
            let l = loss(&m, &mut g, &p);
            g.value(l).data()[0]
        };
        let numeric = central_difference(eval, &[model.params.values()[i].data()[j]], 0, 1e-5);
        worst = worst.max(rel_error(analytic, numeric));
    }
    worst
}

fn gradient_suite() -> Outcome {
    const PROBES: usize = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut errors: Vec<(String, f64)> = primitive_cases(&mut rng)
        .into_iter()
        .enumerate()
        .map(|(i, (name, inputs, build))| (name.to_string(), op_gradcheck(&inputs, &build, PROBES, i as u64)))
        .collect();

    let model = random_model(small_config(), 7);
    let windows: Vec<Window> = (0..3).map(|_| random_window(&mut rng, 40)).collect();
    let weights = [0.5, 2.0, 1.0, 1.0, 3.0];
    let ce = |m: &TransformerModel, g: &mut Graph, p: &BoundParams| {
        let refs: Vec<&Window> = windows.iter().collect();
        let enc = m.encode_graph(g, p, &refs).unwrap();
        let logits = m.logits_graph(g, p, enc.pooled).unwrap();
        let probs = g.softmax(logits);
        cross_entropy(g, probs, &[0, 1, 4], Some(&weights)).unwrap()
    };
    errors.push(("cross-entropy".into(), loss_gradcheck(&model, &ce, PROBES, 1)));
    for (k, strategy) in [Strategy::NtXent, Strategy::Triplet, Strategy::Cpc, Strategy::MaskedRecon]
        .into_iter()
        .enumerate()
    {
        let loss = |m: &TransformerModel, g: &mut Graph, p: &BoundParams| {
            let refs: Vec<&Window> = windows.iter().collect();
            // identical augmentation, context and mask draws for every evaluation
            let mut draw = ChaCha8Rng::seed_from_u64(100 + k as u64);
            pretrain_loss(m, g, p, &refs, strategy, &LossParams::default(), &mut draw).unwrap()
        };
        errors.push((strategy.to_string(), loss_gradcheck(&model, &loss, PROBES, 10 + k as u64)));
    }

    let bad: Vec<String> = errors
        .iter()
        .filter(|(_, e)| !(*e < 1e-4))
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect();
    let (worst_name, worst) = errors
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, e)| (n.clone(), *e))
        .unwrap();
    Outcome::new(
        bad.is_empty(),
        format!(
            "{} primitives and 5 losses, {PROBES} probes each; worst rel. error {worst:.2e} ({worst_name}), tolerance 1e-4{}",
            errors.len() - 5,
            if bad.is_empty() { String::new() } else { format!("; failing: {}", bad.join(", ")) }
        ),
    )
}

// ------------------------------------------------------------------ metrics

/// Gwet's AC1 for categories {correct, incorrect}, item by item:
/// p_a = mean_i sum_k r_ik (r_ik - 1) / (r_i (r_i - 1)),
/// pi_k = mean_i r_ik / r_i, p_e = sum_k pi_k (1 - pi_k) / (Q - 1).
fn ac1_oracle(items: &[Vec<bool>]) -> f64 {
    let q = 2usize;
    let n = items.len() as f64;
    let mut pa = 0.0;
    let mut pi = [0.0; 2];
    for marks in items {
        let r = marks.len() as f64;
        let counts = [marks.iter().filter(|m| **m).count(), marks.iter().filter(|m| !**m).count()];
        for k in 0..q {
            let c = counts[k] as f64;
            pa += c * (c - 1.0) / (r * (r - 1.0)) / n;
            pi[k] += c / r / n;
        }
    }
    let pe: f64 = pi.iter().map(|p| p * (1.0 - p)).sum::<f64>() / (q as f64 - 1.0);
    (pa - pe) / (1.0 - pe)
}

fn sheet_of(items: &[Vec<bool>]) -> RatingSheet {
    RatingSheet {
        participant: "p".into(),
        items: items
            .iter()
            .enumerate()
            .map(|(i, marks)| RatedItem {
                window_id: WindowId::Number(i as u64),
                predicted: if i % 3 == 0 { IDLE.into() } else { "g".into() },
                ratings: marks.iter().enumerate().map(|(r, m)| (format!("r{r}"), *m)).collect(),
            })
            .collect(),
    }
}

fn lcss_oracle(a: &[u16], b: &[u16]) -> usize {
    match (a.split_first(), b.split_first()) {
        (Some((x, ra)), Some((y, rb))) if x == y => 1 + lcss_oracle(ra, rb),
        (Some((_, ra)), Some((_, rb))) => lcss_oracle(ra, b).max(lcss_oracle(a, rb)),
        _ => 0,
    }
}

/// Every sequence over `alphabet` symbols with length in 1..=max_len.
fn all_sequences(alphabet: u16, max_len: usize) -> Vec<Vec<u16>> {
    let mut out = Vec::new();
    let mut layer = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s: &Vec<u16>| {
                (0..alphabet).map(move |x| {
                    let mut t = s.clone();
                    t.push(x);
                    t
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

/// Macro-F1 from the individual (truth, predicted) pairs.
fn macro_f1_oracle(counts: &[Vec<u64>]) -> f64 {
    let n = counts.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|t| (0..n).flat_map(move |p| std::iter::repeat_n((t, p), counts[t][p] as usize)))
        .collect();
    let mut total = 0.0;
    for c in 0..n {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count() as f64;
        let fneg = pairs.iter().filter(|&&(t, p)| t == c && p != c).count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    total / n as f64
}

fn seg(start: u64, end: u64) -> Segment {
    Segment { recording: "r".into(), start_ms: start, end_ms: end, label: "g".into() }
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut notes = Vec::new();
    let mut pass = true;

    let worked = vec![vec![true, true], vec![true, true], vec![true, true], vec![true, false]];
    let worked_ac1 = gwet_ac1(&sheet_of(&worked)).unwrap_or(f64::NAN);
    pass &= (worked_ac1 - 0.68).abs() < 1e-9 && (ac1_oracle(&worked) - 0.68).abs() < 1e-9;
    let mut ac1_err = 0.0f64;
    for _ in 0..1000 {
        let n_items = rng.random_range(1..=30);
        let items: Vec<Vec<bool>> = (0..n_items)
            .map(|_| {
                let raters = rng.random_range(2..=7);
                let p = rng.random_range(0.0..1.0);
                (0..raters).map(|_| rng.random_bool(p)).collect()
            })
            .collect();
        let got = gwet_ac1(&sheet_of(&items)).unwrap_or(f64::NAN);
        ac1_err = ac1_err.max((got - ac1_oracle(&items)).abs());
    }
    pass &= ac1_err < 1e-9;
    notes.push(format!("AC1 worked example {worked_ac1:.6}, max diff on 1000 sheets {ac1_err:.1e}"));

    let mut lcss_pairs = 0usize;
    let mut lcss_bad = 0usize;
    for (alphabet, max_len) in [(2u16, 8usize), (3, 5)] {
        let seqs = all_sequences(alphabet, max_len);
        for a in &seqs {
            for b in &seqs {
                lcss_pairs += 1;
                if lcss_len(a, b).ok() != Some(lcss_oracle(a, b)) {
                    lcss_bad += 1;
                }
            }
        }
    }
    pass &= lcss_bad == 0;
    notes.push(format!("LCSS {lcss_bad} mismatches in {lcss_pairs} exhaustive pairs"));

    let mut f1_err = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=6);
        let counts: Vec<Vec<u64>> = (0..n)
            .map(|_| (0..n).map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(0..12) }).collect())
            .collect();
        let got = macro_f1(&ConfusionMatrix::from_counts(counts.clone()));
        f1_err = f1_err.max((got - macro_f1_oracle(&counts)).abs());
    }
    pass &= f1_err < 1e-12;
    notes.push(format!("macro-F1 max diff on 1000 matrices {f1_err:.1e}"));

    let m = match_f1(&[seg(0, 10), seg(20, 30)], &[seg(0, 10), seg(40, 50)], 0.5);
    let hand_ok = (m.f1 - 0.5).abs() < 1e-12
        && (m.true_positives, m.false_positives, m.false_negatives) == (1, 1, 1);
    pass &= hand_ok;
    notes.push(format!("match F1 hand example {:.3}", m.f1));
    Outcome::new(pass, notes.join("; "))
}

// ------------------------------------------------------------- segmentation

fn segmentation() -> Outcome {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for seed in 0..50u64 {
        let cfg = SynthConfig::desk(4, 0.2, 1000 + seed);
        let script = alternating_script(&cfg, 2, (1000, 3000), 1000, seed);
        let (rec, gt) = synth_generate(&cfg, &script, &format!("rec{seed}")).unwrap();
        let segs = auto_segment(&rec, (0, rec.end_ms()), "gesture", &SegmentParams::default()).unwrap();
        pred.extend(segs);
        truth.extend(gt);
    }
    let r = match_f1(&pred, &truth, 0.5);
    Outcome::new(
        r.f1 >= 0.95 && r.mean_iou >= 0.85,
        format!(
            "50 recordings: F1 {:.3} (>= 0.95), mean IoU {:.3} (>= 0.85); TP {} FP {} FN {}",
            r.f1, r.mean_iou, r.true_positives, r.false_positives, r.false_negatives
        ),
    )
}

// ------------------------------------------------------- learning problems

/// The hard suite for one seed, with `labeled` instances per class kept for
/// supervision.
struct HardSuite {
    classes: Vec<GestureClass>,
    baseline_f1: f64,
    /// All normalized training windows, for self-supervision.
    unlabeled: Vec<Window>,
    /// Normalized idle windows and windows overlapping a kept instance.
    labeled: Vec<Window>,
    val: Vec<Window>,
}

fn overlaps(rec: &Recording, w: &Window, s: &Segment) -> bool {
    let start = rec.samples[w.start_index].t_ms;
    let end = rec.samples[w.start_index + w.len() - 1].t_ms;
    s.start_ms < end && s.end_ms > start
}

fn hard_suite(seed: u64, labeled: usize) -> HardSuite {
    let cfg = SynthConfig::hard(0.3, seed);
    let script = alternating_script(&cfg, 10, (1000, 3000), 1000, seed);
    let (train, truth) = synth_generate(&cfg, &script, "train").unwrap();
    let vcfg = SynthConfig { seed: seed + 500, ..cfg.clone() };
    let vscript = alternating_script(&vcfg, 5, (1000, 3000), 1000, seed + 500);
    let (val, vtruth) = synth_generate(&vcfg, &vscript, "val").unwrap();
    let tw = slide_labeled_windows(&train, 120, 60, &truth);
    let vw = slide_labeled_windows(&val, 120, 60, &vtruth);
    let norm = compute_norm_stats(&tw).unwrap();

    let gestures: Vec<GestureClass> =
        cfg.classes.iter().map(|c| GestureClass::new(&c.id, &c.message)).collect();
    let kept: Vec<Segment> = gestures
        .iter()
        .flat_map(|g| truth.iter().filter(|s| s.label == g.id).take(labeled).cloned())
        .collect();
    let instances: Vec<Window> = kept.iter().map(|s| segment_window(&train, s).unwrap()).collect();
    let baseline =
        BaselineModel::train(&instances, &tw, &gestures, norm.clone(), &BaselineParams::default()).unwrap();
    let mut classes = gestures;
    classes.push(GestureClass::idle());
    let mut cm = ConfusionMatrix::new(classes.iter().map(|c| c.id.clone()).collect());
    for w in &vw {
        cm.record_labels(w.label.as_deref().unwrap(), &baseline.classify_raw(w).0).unwrap();
    }
    let labeled = tw
        .iter()
        .filter(|w| {
            let l = w.label.as_deref().unwrap();
            l == IDLE || kept.iter().any(|s| s.label == l && overlaps(&train, w, s))
        })
        .map(|w| normalize(w, &norm))
        .collect();
    HardSuite {
        classes,
        baseline_f1: macro_f1(&cm),
        unlabeled: tw.iter().map(|w| normalize(w, &norm)).collect(),
        labeled,
        val: vw.iter().map(|w| normalize(w, &norm)).collect(),
    }
}

/// Validation macro-F1 of a desk model pretrained with `strategy` (none for
/// training from scratch) and fine-tuned on the labeled windows.
fn transformer_f1(
    suite: &HardSuite,
    strategy: Strategy,
    pretrain_epochs: usize,
    finetune_epochs: usize,
    seed: u64,
) -> f64 {
    let mut model = TransformerModel::new(ModelConfig::desk(suite.classes.len()), seed).unwrap();
    let cfg = TrainConfig {
        strategy,
        pretrain_epochs,
        finetune_epochs,
        seed,
        ..TrainConfig::default()
    };
    if strategy != Strategy::None {
        pretrain(&mut model, &suite.unlabeled, &cfg, None).unwrap();
    }
    finetune(&mut model, &suite.labeled, None, &suite.classes, &cfg).unwrap();
    macro_f1(&confusion(&model, &suite.val, &suite.classes).unwrap())
}

fn model_vs_baseline() -> Outcome {
    let (mut tf, mut bl) = (Vec::new(), Vec::new());
    for seed in 0..SEEDS {
        let suite = hard_suite(seed, 10);
        bl.push(suite.baseline_f1);
        tf.push(transformer_f1(&suite, Strategy::MaskedRecon, HARD_PRETRAIN_EPOCHS, FINETUNE_EPOCHS, seed));
    }
    let (mt, mb) = (median(tf.clone()), median(bl.clone()));
    let paired = median(tf.iter().zip(&bl).map(|(t, b)| t - b).collect());
    Outcome::new(
        mt >= 0.85 && mt - mb >= 0.10,
        format!(
            "median val macro-F1 transformer {mt:.3} (>= 0.85) vs baseline {mb:.3}, gap {:.3} (>= 0.10; median paired gap {paired:.3}); transformer [{}] baseline [{}]",
            mt - mb,
            fmt_all(&tf),
            fmt_all(&bl)
        ),
    )
}

fn pretraining_benefit() -> Outcome {
    let strategies = [Strategy::MaskedRecon, Strategy::NtXent, Strategy::Triplet, Strategy::Cpc];
    let mut scratch = Vec::new();
    let mut scores: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for seed in 0..SEEDS {
        let suite = hard_suite(seed, 3);
        scratch.push(transformer_f1(&suite, Strategy::None, 1, LOW_LABEL_FINETUNE_EPOCHS, seed));
        for s in strategies {
            let f1 = transformer_f1(&suite, s, LOW_LABEL_PRETRAIN_EPOCHS, LOW_LABEL_FINETUNE_EPOCHS, seed);
            scores.entry(s.to_string()).or_default().push(f1);
        }
    }
    let base = median(scratch.clone());
    let gains: Vec<(String, f64)> = scores.iter().map(|(s, v)| (s.clone(), median(v.clone()) - base)).collect();
    let all_at_least = gains.iter().all(|(_, g)| *g >= 0.0);
    let best = gains.iter().map(|(_, g)| *g).fold(f64::NEG_INFINITY, f64::max);
    Outcome::new(
        all_at_least && best >= 0.05,
        format!(
            "scratch median {base:.3} [{}]; gains {} (each >= 0, best >= 0.05)",
            fmt_all(&scratch),
            gains
                .iter()
                .map(|(s, g)| format!("{s} {g:+.3} [{}]", fmt_all(&scores[s])))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

// ---------------------------------------------------------------- streaming

fn desk_classifier() -> Classifier {
    let cfg = SynthConfig::desk(4, 0.2, 11);
    let script = alternating_script(&cfg, 10, (1000, 3000), 1000, 11);
    let (rec, truth) = synth_generate(&cfg, &script, "train").unwrap();
    let windows = slide_labeled_windows(&rec, 120, 60, &truth);
    let norm = compute_norm_stats(&windows).unwrap();
    let train: Vec<Window> = windows.iter().map(|w| normalize(w, &norm)).collect();
    let mut classes: Vec<GestureClass> =
        cfg.classes.iter().map(|c| GestureClass::new(&c.id, &c.message)).collect();
    classes.push(GestureClass::idle());
    let mut model = TransformerModel::new(ModelConfig::desk(classes.len()), 11).unwrap();
    let tc = TrainConfig { strategy: Strategy::None, seed: 11, ..TrainConfig::default() };
    finetune(&mut model, &train, None, &classes, &tc).unwrap();
    Classifier::Transformer { model, classes, norm }
}

fn gesture_events(frames: &[Outbound]) -> Vec<(String, u64)> {
    frames
        .iter()
        .filter_map(|f| match f {
            Outbound::Gesture { label, window_end, .. } => Some((label.clone(), *window_end)),
            _ => None,
        })
        .collect()
}

fn streaming() -> Outcome {
    let classifier = Arc::new(desk_classifier());
    let cfg = SynthConfig::desk(4, 0.2, 77);
    let order = ["g0", "g2", "g1", "g3", "g0"];
    let mut script = vec![ScriptEntry::idle(2400)];
    for id in order {
        let class = cfg.class(id).expect("desk class ids");
        script.push(ScriptEntry::gesture(id, class.duration_ms));
        script.push(ScriptEntry::idle(2400));
    }
    let (rec, truth) = synth_generate(&cfg, &script, "stream").unwrap();
    let session = SessionConfig::for_classifier(&classifier);
    let handle = Server::bind("127.0.0.1:0", classifier.clone(), session).unwrap().spawn().unwrap();
    let fast = replay_tcp(handle.addr(), &rec, ReplayRate::MaxSpeed, &[]).unwrap();
    let paced = replay_tcp(handle.addr(), &rec, ReplayRate::RealTime, &[]).unwrap();
    // clutch over the whole of the third gesture
    let held = truth.iter().filter(|s| !s.is_idle()).nth(2).unwrap();
    let span = ClutchSpan { start_ms: held.start_ms.saturating_sub(400), end_ms: held.end_ms + 2000 };
    let clutched = replay_tcp(handle.addr(), &rec, ReplayRate::MaxSpeed, &[span]).unwrap();
    handle.shutdown();

    let events = gesture_events(&fast);
    let labels: Vec<&str> = events.iter().map(|(l, _)| l.as_str()).collect();
    let labels_ok = labels == order;
    let logs_equal = fast.iter().map(Outbound::to_line).eq(paced.iter().map(Outbound::to_line));
    let in_span = gesture_events(&clutched)
        .iter()
        .filter(|(_, end)| {
            let t = rec.samples[*end as usize - 1].t_ms;
            t >= span.start_ms && t < span.end_ms
        })
        .count();

    // soft bound: per-window latency of the full-size model
    let paper = TransformerModel::new(ModelConfig::paper(5), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let probe: Vec<Window> = (0..10).map(|_| random_window(&mut rng, 120)).collect();
    let t = Instant::now();
    for w in &probe {
        paper.forward_classify(w).unwrap();
    }
    let latency_ms = t.elapsed().as_secs_f64() * 1e3 / probe.len() as f64;

    Outcome::new(
        labels_ok && logs_equal && in_span == 0,
        format!(
            "{} events [{}] (expected [{}]); real-time log {} max-speed log; {in_span} events in the clutched span; paper-size latency {latency_ms:.1} ms/window ({} 20 ms soft bound)",
            events.len(),
            labels.join(" "),
            order.join(" "),
            if logs_equal { "identical to" } else { "DIFFERS from" },
            if latency_ms < 20.0 { "within" } else { "over" },
        ),
    )
}

// ------------------------------------------------------------------- bundle

fn bundle_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = random_model(ModelConfig::desk(4), 8);
    let classes = vec![
        GestureClass::new("wave", "Hello, how are you?"),
        GestureClass::new("tap", "I need \"water\", please"),
        GestureClass::new("circle", "Ça va? 🙂"),
        GestureClass::idle(),
    ];
    let raw: Vec<Window> = (0..20).map(|_| random_window(&mut rng, 120)).collect();
    let norm: NormStats = compute_norm_stats(&raw).unwrap();
    let meta = BundleMetadata::new(&model, classes.clone(), norm.clone(), Some(TrainConfig::default()), 8);
    let dir = std::env::temp_dir().join(format!("gesturewire-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.zip");
    export_bundle(&model, &meta, &path).unwrap();
    let (back, back_meta) = import_bundle(&path).unwrap();
    let _ = std::fs::remove_dir_all(&dir);

    let windows: Vec<Window> = (0..100).map(|_| normalize(&random_window(&mut rng, 120), &norm)).collect();
    let refs: Vec<&Window> = windows.iter().collect();
    let before = model.classify(&refs).unwrap();
    let after = back.classify(&refs).unwrap();
    let diff = before
        .iter()
        .flatten()
        .zip(after.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let exact = back_meta.classes == classes && back_meta.norm == norm;
    let stable = bundle_to_bytes(&model, &meta).ok()
        == bundle_from_bytes(&bundle_to_bytes(&model, &meta).unwrap())
            .ok()
            .and_then(|(m, md)| bundle_to_bytes(&m, &md).ok());
    Outcome::new(
        exact && diff <= 1e-5,
        format!(
            "classes, messages and normalization {}; max probability diff on 100 windows {diff:.1e} (<= 1e-5); re-export {}",
            if exact { "identical" } else { "DIFFER" },
            if stable { "byte-identical" } else { "differs" }
        ),
    )
}
