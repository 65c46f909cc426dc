//! Shared oracles for the integration and acceptance tests.

#![allow(dead_code)]

use eda_core::diff::nn::{linear, lstm_cell, LstmVars};
use eda_core::diff::{Graph, Var};
use eda_core::model::{EdaOrder, EendEda, EncoderConfig};
use eda_core::objective::{attractor_existence_loss, graph_total_loss, pit_loss, PitConfig, PROB_EPS};
use eda_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_rows(rows, cols, (0..rows * cols).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

pub fn random_binary(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_rows(rows, cols, (0..rows * cols).map(|_| f64::from(u8::from(r.random_bool(0.5)))).collect()).unwrap()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖, 1e-8)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

/// Largest relative error between backprop and central differences over
/// every input of a scalar function built by `build`.
pub fn check_scalar_fn(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vs: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let out = build(&mut g, &vs).unwrap();
        g.value(out).data()[0]
    };
    let mut g = Graph::new();
    let vs: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let out = build(&mut g, &vs).unwrap();
    let grads = g.backward(out).unwrap();
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.of(vs[i]).map(|t| t.into_data()).unwrap_or_else(|| vec![0.0; x.len()]);
        let mut numeric = vec![0.0; x.len()];
        for j in 0..x.len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] = x.data()[j] + FD_STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] = x.data()[j] - FD_STEP;
            let down = eval(&xs);
            numeric[j] = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Reduces a tensor output to a scalar with fixed random weights so that
/// every output element receives a distinct upstream gradient.
fn weighted_sum(g: &mut Graph<f64>, y: Var, weights: &[f64]) -> Result<Var> {
    let w = weights[..g.value(y).len()].to_vec();
    let m = g.mul_const(y, w)?;
    Ok(g.sum(m))
}

pub struct OpCase {
    pub name: &'static str,
    /// Relative error for one seed.
    pub run: fn(u64) -> f64,
}

fn op_check(seed: u64, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static) -> f64 {
    let mut r = rng(seed ^ 0xABCD);
    let weights: Vec<f64> = (0..4096).map(|_| r.random_range(-1.0..1.0)).collect();
    check_scalar_fn(&inputs, &move |g, v| {
        let y = f(g, v)?;
        weighted_sum(g, y, &weights)
    })
}

fn dims(seed: u64) -> (ChaCha8Rng, usize, usize, usize) {
    let mut r = rng(seed);
    let (m, k, n) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
    (r, m, k, n)
}

/// Keeps values at least `gap` away from zero (for kinks).
fn away_from_zero(t: Tensor<f64>, gap: f64) -> Tensor<f64> {
    t.map(|x| if x.abs() < gap { x.signum() * gap + x } else { x })
}

pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            run: |s| {
                let (mut r, m, k, n) = dims(s);
                let (a, b) = (random_tensor(&mut r, m, k, -1.0, 1.0), random_tensor(&mut r, k, n, -1.0, 1.0));
                op_check(s, vec![a, b], |g, v| g.matmul(v[0], v[1]))
            },
        },
        OpCase {
            name: "matmul_nt",
            run: |s| {
                let (mut r, m, k, n) = dims(s);
                let (a, b) = (random_tensor(&mut r, m, k, -1.0, 1.0), random_tensor(&mut r, n, k, -1.0, 1.0));
                op_check(s, vec![a, b], |g, v| g.matmul_nt(v[0], v[1]))
            },
        },
        OpCase {
            name: "transpose",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                op_check(s, vec![random_tensor(&mut r, m, k, -1.0, 1.0)], |g, v| Ok(g.transpose(v[0])))
            },
        },
        OpCase {
            name: "add",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                let (a, b) = (random_tensor(&mut r, m, k, -1.0, 1.0), random_tensor(&mut r, m, k, -1.0, 1.0));
                op_check(s, vec![a, b], |g, v| g.add(v[0], v[1]))
            },
        },
        OpCase {
            name: "sub",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                let (a, b) = (random_tensor(&mut r, m, k, -1.0, 1.0), random_tensor(&mut r, m, k, -1.0, 1.0));
                op_check(s, vec![a, b], |g, v| g.sub(v[0], v[1]))
            },
        },
        OpCase {
            name: "mul",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                let (a, b) = (random_tensor(&mut r, m, k, -1.0, 1.0), random_tensor(&mut r, m, k, -1.0, 1.0));
                op_check(s, vec![a, b], |g, v| g.mul(v[0], v[1]))
            },
        },
        OpCase {
            name: "add_row",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                let (a, b) = (random_tensor(&mut r, m, k, -1.0, 1.0), random_tensor(&mut r, 1, k, -1.0, 1.0));
                op_check(s, vec![a, b], |g, v| g.add_row(v[0], v[1]))
            },
        },
        OpCase {
            name: "mul_const",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                let a = random_tensor(&mut r, m, k, -1.0, 1.0);
                let c = random_tensor(&mut r, m, k, -2.0, 2.0).into_data();
                op_check(s, vec![a], move |g, v| g.mul_const(v[0], c.clone()))
            },
        },
        OpCase {
            name: "dropout",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                let a = random_tensor(&mut r, m, k, -1.0, 1.0);
                let keep: Vec<bool> = (0..m * k).map(|_| r.random_bool(0.7)).collect();
                op_check(s, vec![a], move |g, v| g.dropout(v[0], &keep, 0.3))
            },
        },
        OpCase {
            name: "scale",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                let a = random_tensor(&mut r, m, k, -1.0, 1.0);
                op_check(s, vec![a], |g, v| Ok(g.scale(v[0], -1.7)))
            },
        },
        OpCase {
            name: "concat_rows",
            run: |s| {
                let (mut r, m, k, n) = dims(s);
                let (a, b) = (random_tensor(&mut r, m, k, -1.0, 1.0), random_tensor(&mut r, n, k, -1.0, 1.0));
                op_check(s, vec![a, b], |g, v| g.concat_rows(&[v[0], v[1], v[0]]))
            },
        },
        OpCase {
            name: "concat_cols",
            run: |s| {
                let (mut r, m, k, n) = dims(s);
                let (a, b) = (random_tensor(&mut r, m, k, -1.0, 1.0), random_tensor(&mut r, m, n, -1.0, 1.0));
                op_check(s, vec![a, b], |g, v| g.concat_cols(&[v[0], v[1]]))
            },
        },
        OpCase {
            name: "slice_rows",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                let a = random_tensor(&mut r, m + 2, k, -1.0, 1.0);
                let start = r.random_range(0..3);
                op_check(s, vec![a], move |g, v| g.slice_rows(v[0], start, m))
            },
        },
        OpCase {
            name: "slice_cols",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                let a = random_tensor(&mut r, m, k + 2, -1.0, 1.0);
                let start = r.random_range(0..3);
                op_check(s, vec![a], move |g, v| g.slice_cols(v[0], start, k))
            },
        },
        OpCase {
            name: "gather_rows",
            run: |s| {
                let (mut r, m, k, n) = dims(s);
                let a = random_tensor(&mut r, m, k, -1.0, 1.0);
                let idx: Vec<usize> = (0..n + 2).map(|_| r.random_range(0..m)).collect();
                op_check(s, vec![a], move |g, v| g.gather_rows(v[0], &idx))
            },
        },
        OpCase {
            name: "sigmoid",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                op_check(s, vec![random_tensor(&mut r, m, k, -4.0, 4.0)], |g, v| Ok(g.sigmoid(v[0])))
            },
        },
        OpCase {
            name: "tanh",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                op_check(s, vec![random_tensor(&mut r, m, k, -3.0, 3.0)], |g, v| Ok(g.tanh(v[0])))
            },
        },
        OpCase {
            name: "relu",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                let a = away_from_zero(random_tensor(&mut r, m, k, -1.0, 1.0), 1e-3);
                op_check(s, vec![a], |g, v| Ok(g.relu(v[0])))
            },
        },
        OpCase {
            name: "softmax_rows",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                op_check(s, vec![random_tensor(&mut r, m, k + 1, -3.0, 3.0)], |g, v| Ok(g.softmax_rows(v[0])))
            },
        },
        OpCase {
            name: "layer_norm",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                let x = random_tensor(&mut r, m, k + 1, -2.0, 2.0);
                let (gm, bt) = (random_tensor(&mut r, 1, k + 1, 0.5, 1.5), random_tensor(&mut r, 1, k + 1, -0.5, 0.5));
                op_check(s, vec![x, gm, bt], |g, v| g.layer_norm(v[0], v[1], v[2]))
            },
        },
        OpCase {
            name: "sum",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                op_check(s, vec![random_tensor(&mut r, m, k, -1.0, 1.0)], |g, v| Ok(g.sum(v[0])))
            },
        },
        OpCase {
            name: "bce_prob",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                let p = random_tensor(&mut r, m, k, 0.05, 0.95);
                let y = random_binary(&mut r, m, k).into_data();
                op_check(s, vec![p], move |g, v| g.bce_prob(v[0], &y, PROB_EPS))
            },
        },
        OpCase {
            name: "bce_logits",
            run: |s| {
                let (mut r, m, k, _) = dims(s);
                let z = random_tensor(&mut r, m, k, -4.0, 4.0);
                let y = random_binary(&mut r, m, k).into_data();
                op_check(s, vec![z], move |g, v| g.bce_logits(v[0], &y))
            },
        },
        OpCase {
            name: "linear",
            run: |s| {
                let (mut r, m, k, n) = dims(s);
                let x = random_tensor(&mut r, m, k, -1.0, 1.0);
                let (w, b) = (random_tensor(&mut r, k, n, -1.0, 1.0), random_tensor(&mut r, 1, n, -1.0, 1.0));
                op_check(s, vec![x, w, b], |g, v| linear(g, v[0], v[1], v[2]))
            },
        },
        OpCase { name: "lstm_cell", run: lstm_case },
        OpCase { name: "total_loss", run: total_loss_case },
    ]
}

/// An 8-dimensional LSTM cell; both outputs feed the loss.
pub fn lstm_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let d = 8;
    let inputs = vec![
        random_tensor(&mut r, 1, d, -1.0, 1.0),
        random_tensor(&mut r, 1, d, -1.0, 1.0),
        random_tensor(&mut r, 1, d, -1.0, 1.0),
        random_tensor(&mut r, d, 4 * d, -0.5, 0.5),
        random_tensor(&mut r, d, 4 * d, -0.5, 0.5),
        random_tensor(&mut r, 1, 4 * d, -0.5, 0.5),
    ];
    op_check(seed, inputs, |g, v| {
        let p = LstmVars { w_ih: v[3], w_hh: v[4], bias: v[5] };
        let (h, c) = lstm_cell(g, v[0], v[1], v[2], &p)?;
        g.concat_cols(&[h, c])
    })
}

/// `L_d + α·L_a` built from probabilities on the graph, checked against
/// central differences of the value-level objective functions (which
/// re-run the permutation search at every perturbation).
pub fn total_loss_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (s, t) = (r.random_range(1..4), r.random_range(1..6));
    let alpha = r.random_range(0.0..2.0);
    let y_hat = random_tensor(&mut r, s, t, 0.05, 0.95);
    let p = random_tensor(&mut r, s + 1, 1, 0.05, 0.95);
    let labels = random_binary(&mut r, t, s);
    let value = |yh: &Tensor<f64>, p: &Tensor<f64>| -> f64 {
        let (l_d, _) = pit_loss(yh, &labels, &PitConfig::default()).unwrap();
        l_d + alpha * attractor_existence_loss(p.data(), s).unwrap()
    };
    let mut g = Graph::new();
    let yv = g.input(y_hat.clone());
    let pv = g.input(p.clone());
    let (_, perm) = pit_loss(&y_hat, &labels, &PitConfig::default()).unwrap();
    let yt = g.transpose(yv);
    let mut target = Vec::with_capacity(t * s);
    for k in 0..t {
        target.extend(perm.iter().map(|&j| labels.get(k, j)));
    }
    let h = g.bce_prob(yt, &target, PROB_EPS).unwrap();
    let l_d = g.scale(h, 1.0 / (t * s) as f64);
    let mut ex = vec![1.0; s];
    ex.push(0.0);
    let h = g.bce_prob(pv, &ex, PROB_EPS).unwrap();
    let l_a = g.scale(h, alpha / (s + 1) as f64);
    let loss = g.add(l_d, l_a).unwrap();
    assert!((g.value(loss).data()[0] - value(&y_hat, &p)).abs() < 1e-12);
    let grads = g.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (which, base) in [(0, &y_hat), (1, &p)] {
        let analytic = grads.of(if which == 0 { yv } else { pv }).unwrap().into_data();
        let numeric: Vec<f64> = (0..base.len())
            .map(|j| {
                let bump = |d: f64| {
                    let (mut a, mut b) = (y_hat.clone(), p.clone());
                    let tgt = if which == 0 { &mut a } else { &mut b };
                    tgt.data_mut()[j] += d;
                    value(&a, &b)
                };
                (bump(FD_STEP) - bump(-FD_STEP)) / (2.0 * FD_STEP)
            })
            .collect();
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Encoder, attractors and total loss on a tiny model: relative error of
/// the full parameter gradient against central differences.
pub fn composed_model_case(seed: u64) -> f64 {
    let cfg = EncoderConfig { n_blocks: 1, d_model: 8, n_heads: 2, d_ff: 16, input_dim: 5, positional_encoding: false };
    let mut model = EendEda::<f64>::new(cfg, seed).unwrap();
    let mut r = rng(seed ^ 0x77);
    // Perturb initial biases and gains so no parameter sits at a special value.
    for i in 0..model.params().len() {
        let t = model.params_mut().get_mut(i);
        for v in t.data_mut() {
            *v += r.random_range(-0.1..0.1);
        }
    }
    let t = 6;
    let s = r.random_range(1..3);
    let x = random_tensor(&mut r, t, 5, -1.0, 1.0);
    let labels = random_binary(&mut r, t, s);
    let order = EdaOrder::Shuffled(seed).indices(t);
    let loss_of = |m: &EendEda<f64>, grads: bool| -> (f64, Option<Vec<Tensor<f64>>>) {
        let mut g = Graph::new();
        let mv = m.vars(&mut g);
        let xv = g.constant(x.clone());
        let e = m.encode_graph(&mut g, &mv, xv).unwrap();
        let (a, z) = m.eda_graph(&mut g, &mv, e, &order, s + 1).unwrap();
        let a_s = g.slice_rows(a, 0, s).unwrap();
        let logits = g.matmul_nt(e, a_s).unwrap();
        let (loss, _) = graph_total_loss(&mut g, logits, z, &labels, 1.0, &PitConfig::default()).unwrap();
        let val = g.value(loss).data()[0];
        if !grads {
            return (val, None);
        }
        let gr = g.backward(loss).unwrap();
        let mut acc = m.params().zeros_like();
        gr.accumulate_params(&mut acc, 1.0);
        (val, Some(acc))
    };
    let analytic: Vec<f64> = loss_of(&model, true).1.unwrap().into_iter().flat_map(Tensor::into_data).collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..model.params().len() {
        for j in 0..model.params().get(i).len() {
            let orig = model.params().get(i).data()[j];
            model.params_mut().get_mut(i).data_mut()[j] = orig + FD_STEP;
            let up = loss_of(&model, false).0;
            model.params_mut().get_mut(i).data_mut()[j] = orig - FD_STEP;
            let down = loss_of(&model, false).0;
            model.params_mut().get_mut(i).data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    rel_err(&analytic, &numeric)
}

/// Brute-force permutation-invariant loss: every permutation of the label
/// columns, summed frame by frame with an explicit cross-entropy loop.
pub fn pit_brute_force(y_hat: &Tensor<f64>, y: &Tensor<f64>) -> (f64, Vec<usize>) {
    let (s, t) = (y_hat.rows(), y_hat.cols());
    let mut perm: Vec<usize> = (0..s).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let mut total = 0.0;
        for k in 0..t {
            for o in 0..s {
                let p = y_hat.get(o, k).clamp(PROB_EPS, 1.0 - PROB_EPS);
                let lab = y.get(k, perm[o]);
                total += -lab * p.ln() - (1.0 - lab) * (1.0 - p).ln();
            }
        }
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, perm.clone()));
        }
        // Next lexicographic permutation.
        let Some(i) = (1..s).rev().find(|&i| perm[i - 1] < perm[i]) else { break };
        let j = (i..s).rev().find(|&j| perm[j] > perm[i - 1]).unwrap();
        perm.swap(i - 1, j);
        perm[i..].reverse();
    }
    let (total, perm) = best.unwrap();
    (total / (s * t) as f64, perm)
}

/// Direct scan of `max{s : p_s ≥ τ}` (1-based), 0 for an empty set.
pub fn count_scan(p: &[f64], tau: f64) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v >= tau {
            best = i + 1;
        }
    }
    best
}

/// Random segments on a 10 ms grid over `recs` recordings.
pub fn random_rttm(r: &mut ChaCha8Rng, recs: usize, speakers: &[&str], n: usize, span_ms: i64) -> Vec<eda_core::score::RttmSegment> {
    let mut out: Vec<_> = (0..n)
        .map(|_| {
            let on = r.random_range(0..span_ms / 10) * 10;
            let dur = r.random_range(1..=span_ms / 40) * 10;
            eda_core::score::RttmSegment {
                recording_id: format!("rec{}", r.random_range(0..recs)),
                onset_ms: on,
                duration_ms: dur,
                speaker_id: speakers[r.random_range(0..speakers.len())].to_string(),
            }
        })
        .collect();
    out.sort();
    out
}

/// Hypothesis with every speaker renamed by a random bijection.
pub fn relabel(r: &mut ChaCha8Rng, segs: &[eda_core::score::RttmSegment]) -> Vec<eda_core::score::RttmSegment> {
    use rand::seq::SliceRandom;
    let mut names: Vec<String> = segs.iter().map(|s| s.speaker_id.clone()).collect();
    names.sort();
    names.dedup();
    let mut fresh: Vec<String> = (0..names.len()).map(|i| format!("h{i}")).collect();
    fresh.shuffle(r);
    segs.iter()
        .map(|s| {
            let i = names.binary_search(&s.speaker_id).unwrap();
            eda_core::score::RttmSegment { speaker_id: fresh[i].clone(), ..s.clone() }
        })
        .collect()
}

pub fn toy_corpus(n: usize, seed: u64, speakers: (usize, usize), duration_s: f64) -> Vec<eda_core::mixsim::Sample<f32>> {
    use eda_core::mixsim::{generate_corpus, CorpusSpec, MixtureSpec};
    let spec = CorpusSpec {
        n_mixtures: n,
        min_speakers: speakers.0,
        max_speakers: speakers.1,
        template: MixtureSpec { duration_s, ..MixtureSpec::default() },
        seed,
        ..CorpusSpec::default()
    };
    generate_corpus::<f32>(&spec, &eda_core::featfront::FrontendConfig::default())
        .unwrap()
        .into_iter()
        .map(|(s, _)| s)
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct Evaluation {
    pub der: f64,
    pub count_accuracy: f64,
}

/// Pooled DER (0.25 s collar) and speaker-count accuracy over `samples`.
pub fn evaluate(model: &EendEda<f32>, samples: &[eda_core::mixsim::Sample<f32>], cfg: &eda_core::infer::InferConfig, oracle: bool) -> Evaluation {
    use eda_core::infer::{diarize, InferConfig};
    use eda_core::score::{der, ScoreConfig};
    let (mut refs, mut hyps, mut correct) = (Vec::new(), Vec::new(), 0);
    for s in samples {
        let truth = s.labels.n_speakers();
        let c = InferConfig { oracle_speaker_count: oracle.then_some(truth), ..cfg.clone() };
        let d = diarize(&s.features, model, &c).unwrap();
        if d.estimated_count == truth {
            correct += 1;
        }
        refs.extend(s.reference.iter().cloned());
        hyps.extend(d.rttm(&s.id));
    }
    Evaluation {
        der: der(&refs, &hyps, &ScoreConfig::default()).unwrap().der,
        count_accuracy: correct as f64 / samples.len() as f64,
    }
}

pub struct ScoreCase {
    pub name: &'static str,
    pub reference: Vec<eda_core::score::RttmSegment>,
    pub hypothesis: Vec<eda_core::score::RttmSegment>,
    pub collar_s: f64,
    pub score_overlap: bool,
    /// Miss, false alarm, confusion and scored speech in milliseconds,
    /// worked out by hand on the interval endpoints.
    pub expect: (i64, i64, i64, i64),
}

pub fn seg(rec: &str, on: f64, dur: f64, spk: &str) -> eda_core::score::RttmSegment {
    eda_core::score::RttmSegment::from_seconds(rec, on, dur, spk).unwrap()
}

pub fn score_cases() -> Vec<ScoreCase> {
    let case = |name, reference, hypothesis, collar_s, expect| ScoreCase { name, reference, hypothesis, collar_s, score_overlap: true, expect };
    vec![
        case("twenty percent miss", vec![seg("r", 0.0, 10.0, "A")], vec![seg("r", 0.0, 8.0, "x")], 0.0, (2000, 0, 0, 10000)),
        case("false alarm past the end", vec![seg("r", 0.0, 10.0, "A")], vec![seg("r", 0.0, 12.0, "x")], 0.0, (0, 2000, 0, 10000)),
        // x maps to B (11 s shared against 10 s), so A's 10 s are confusion.
        case(
            "one hypothesis speaker for two turns",
            vec![seg("r", 0.0, 10.0, "A"), seg("r", 10.0, 11.0, "B")],
            vec![seg("r", 0.0, 21.0, "x")],
            0.0,
            (0, 0, 10000, 21000),
        ),
        // x ↔ B: [0,5) confusion, [5,10) one miss, [10,16) correct.
        case(
            "overlap counts each reference speaker",
            vec![seg("r", 0.0, 10.0, "A"), seg("r", 5.0, 11.0, "B")],
            vec![seg("r", 0.0, 16.0, "x")],
            0.0,
            (5000, 0, 5000, 21000),
        ),
        case(
            "extra hypothesis speaker",
            vec![seg("r", 0.0, 10.0, "A")],
            vec![seg("r", 0.0, 10.0, "x"), seg("r", 2.0, 2.0, "y")],
            0.0,
            (0, 2000, 0, 10000),
        ),
        // Scored [0.25, 9.75); the hypothesis stops at 8.
        case("collar trims scored time", vec![seg("r", 0.0, 10.0, "A")], vec![seg("r", 0.0, 8.0, "x")], 0.25, (1750, 0, 0, 9500)),
        case("collar forgives jitter", vec![seg("r", 0.0, 10.0, "A")], vec![seg("r", 0.2, 10.0, "x")], 0.25, (0, 0, 0, 9500)),
        // No-score zones at 0, 5 and 10: scored [0.25,4.75) and [5.25,9.75).
        case(
            "collar at inner boundaries",
            vec![seg("r", 0.0, 5.0, "A"), seg("r", 5.0, 5.0, "B")],
            vec![seg("r", 0.0, 5.2, "x"), seg("r", 5.2, 4.8, "y")],
            0.25,
            (0, 0, 0, 9000),
        ),
        case(
            "recordings are pooled",
            vec![seg("a", 0.0, 10.0, "A"), seg("b", 0.0, 10.0, "A")],
            vec![seg("a", 0.0, 10.0, "x")],
            0.0,
            (10000, 0, 0, 20000),
        ),
        case(
            "speech in reference silence",
            vec![seg("r", 0.0, 2.0, "A"), seg("r", 6.0, 2.0, "A")],
            vec![seg("r", 0.0, 8.0, "x")],
            0.0,
            (0, 4000, 0, 4000),
        ),
        // No-score zones at 0, 3, 7 and 10: A scores 8.5 s, B 3.5 s, all B missed.
        case(
            "collar with overlap and a late speaker",
            vec![seg("r", 0.0, 10.0, "A"), seg("r", 3.0, 4.0, "B")],
            vec![seg("r", 0.0, 10.0, "x")],
            0.25,
            (3500, 0, 0, 12000),
        ),
        ScoreCase {
            name: "overlap excluded",
            reference: vec![seg("r", 0.0, 10.0, "A"), seg("r", 5.0, 10.0, "B")],
            hypothesis: vec![seg("r", 0.0, 10.0, "x"), seg("r", 10.0, 5.0, "y")],
            collar_s: 0.0,
            score_overlap: false,
            expect: (0, 0, 0, 10000),
        },
    ]
}
