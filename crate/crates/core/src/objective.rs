//! Training losses: permutation-invariant diarization loss, attractor
//! existence loss and their weighted sum.
//!
//! Posterior matrices are `S×T` (speaker rows), label matrices `T×S`.
//! A permutation `perm` matches output row `s` with label column
//! `perm[s]`.

use crate::assign::{hungarian, permutations};
use crate::diff::{bce_term, Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::scalar::{c, Scalar};
use crate::tensor::Tensor;

/// Probability clamp for every cross-entropy term.
pub const PROB_EPS: f64 = 1e-7;
/// Largest speaker count searched exhaustively.
pub const DEFAULT_PIT_CAP: usize = 8;
/// Existence-loss weight for training on simulated data.
pub const ALPHA_SIMULATED: f64 = 1.0;
/// Existence-loss weight for adaptation on real recordings.
pub const ALPHA_ADAPTATION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PitSolver {
    /// Enumerate all permutations; fails above the cap.
    Exhaustive,
    /// Linear assignment on the time-summed pairwise cost.
    Hungarian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PitConfig {
    pub solver: PitSolver,
    pub exhaustive_cap: usize,
}

impl Default for PitConfig {
    fn default() -> Self {
        Self { solver: PitSolver::Exhaustive, exhaustive_cap: DEFAULT_PIT_CAP }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub l_d: f64,
    pub l_a: f64,
    pub best_permutation: Vec<usize>,
    pub alpha: f64,
}

/// Summed binary cross entropy `Σ −y ln p − (1−y) ln(1−p)` with clamped `p`.
pub fn bce<T: Scalar>(y: &[T], p: &[T]) -> Result<T> {
    if y.len() != p.len() {
        return shape_err(format!("bce length {} vs {}", y.len(), p.len()));
    }
    let eps = c::<T>(PROB_EPS);
    Ok(y.iter().zip(p).map(|(&y, &p)| bce_term(y, p, eps)).sum())
}

fn check_pit_shapes<T: Scalar>(y_hat: &Tensor<T>, y: &Tensor<T>) -> Result<(usize, usize)> {
    let (s, t) = (y_hat.rows(), y_hat.cols());
    if y.rows() != t || y.cols() != s {
        return shape_err(format!("posteriors {s}x{t} vs labels {}x{}", y.rows(), y.cols()));
    }
    Ok((s, t))
}

/// Per-element cost table `cost[(s·S + j)·T + t] = H(y[t][j], ŷ[s][t])`.
fn pair_costs<T: Scalar>(y_hat: &Tensor<T>, y: &Tensor<T>, s: usize, t: usize) -> Vec<T> {
    let eps = c::<T>(PROB_EPS);
    let mut out = Vec::with_capacity(s * s * t);
    for o in 0..s {
        for j in 0..s {
            out.extend((0..t).map(|k| bce_term(y.get(k, j), y_hat.get(o, k), eps)));
        }
    }
    out
}

/// Permutation-invariant diarization loss `(1/TS)·min_φ Σ_t H(y_t^φ, ŷ_t)`
/// and its minimizing permutation. Ties go to the lexicographically
/// smallest permutation.
pub fn pit_loss<T: Scalar>(y_hat: &Tensor<T>, y: &Tensor<T>, cfg: &PitConfig) -> Result<(T, Vec<usize>)> {
    let (s, t) = check_pit_shapes(y_hat, y)?;
    if s == 0 || t == 0 {
        return Ok((T::zero(), Vec::new()));
    }
    let costs = pair_costs(y_hat, y, s, t);
    let at = |o: usize, j: usize, k: usize| costs[(o * s + j) * t + k];
    let norm = c::<T>((t * s) as f64);
    match cfg.solver {
        PitSolver::Exhaustive => {
            if s > cfg.exhaustive_cap {
                return Err(Error::TooManySpeakers { got: s, cap: cfg.exhaustive_cap });
            }
            let mut best: Option<(T, Vec<usize>)> = None;
            for perm in permutations(s) {
                let mut total = T::zero();
                for k in 0..t {
                    for (o, &j) in perm.iter().enumerate() {
                        total += at(o, j, k);
                    }
                }
                if best.as_ref().is_none_or(|(b, _)| total < *b) {
                    best = Some((total, perm));
                }
            }
            let (total, perm) = best.expect("at least one permutation");
            Ok((total / norm, perm))
        }
        PitSolver::Hungarian => {
            let cost: Vec<Vec<f64>> = (0..s)
                .map(|o| (0..s).map(|j| (0..t).map(|k| at(o, j, k).as_f64()).sum()).collect())
                .collect();
            let (perm, total) = hungarian(&cost);
            Ok((c::<T>(total) / norm, perm))
        }
    }
}

/// The loss under a fixed permutation, summed in the same order as
/// [`pit_loss`].
pub fn fixed_permutation_loss<T: Scalar>(y_hat: &Tensor<T>, y: &Tensor<T>, perm: &[usize]) -> Result<T> {
    let (s, t) = check_pit_shapes(y_hat, y)?;
    if perm.len() != s {
        return shape_err(format!("permutation of {} for {s} speakers", perm.len()));
    }
    if s == 0 || t == 0 {
        return Ok(T::zero());
    }
    let eps = c::<T>(PROB_EPS);
    let mut total = T::zero();
    for k in 0..t {
        for (o, &j) in perm.iter().enumerate() {
            total += bce_term(y.get(k, j), y_hat.get(o, k), eps);
        }
    }
    Ok(total / c::<T>((t * s) as f64))
}

/// Existence targets: `n_speakers` ones followed by one zero.
pub fn existence_labels<T: Scalar>(n_speakers: usize) -> Vec<T> {
    let mut l = vec![T::one(); n_speakers];
    l.push(T::zero());
    l
}

/// `(1/(S+1))·H(l, p)` for `S+1` existence probabilities.
pub fn attractor_existence_loss<T: Scalar>(p: &[T], n_speakers: usize) -> Result<T> {
    if p.len() != n_speakers + 1 {
        return shape_err(format!("{} existence probabilities for {n_speakers} speakers", p.len()));
    }
    Ok(bce(&existence_labels::<T>(n_speakers), p)? / c::<T>((n_speakers + 1) as f64))
}

pub fn total_loss<T: Scalar>(l_d: T, l_a: T, alpha: T) -> T {
    l_d + alpha * l_a
}

/// Losses recorded on a graph. `logits` are the `T×(S+1)` (or wider)
/// embedding-attractor products; only the first `S` columns enter the
/// diarization loss. `existence_logits` are `(S+1)×1`.
///
/// The permutation is chosen outside the graph on the current values;
/// the loss is then the cross entropy against the permuted labels, which
/// has the same value and gradient as the minimum.
pub fn graph_total_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    existence_logits: Var,
    labels: &Tensor<T>,
    alpha: f64,
    cfg: &PitConfig,
) -> Result<(Var, LossReport)> {
    let (t, s) = (labels.rows(), labels.cols());
    let z = g.value(logits);
    if z.rows() != t || z.cols() < s {
        return shape_err(format!("logits {}x{} vs labels {t}x{s}", z.rows(), z.cols()));
    }
    let ex = g.value(existence_logits);
    if ex.len() != s + 1 {
        return shape_err(format!("{} existence logits for {s} speakers", ex.len()));
    }
    let mut parts = Vec::new();
    let (mut l_d, mut perm) = (None, Vec::new());
    if s > 0 && t > 0 {
        let z = g.value(logits);
        let mut y_hat = Tensor::zeros(&[s, t]);
        for k in 0..t {
            for o in 0..s {
                y_hat.set(o, k, crate::diff::sigmoid(z.get(k, o)));
            }
        }
        perm = pit_loss(&y_hat, labels, cfg)?.1;
        let mut target = Vec::with_capacity(t * s);
        for k in 0..t {
            target.extend(perm.iter().map(|&j| labels.get(k, j)));
        }
        let zs = if z.cols() == s { logits } else { g.slice_cols(logits, 0, s)? };
        let h = g.bce_logits(zs, &target)?;
        let v = g.scale(h, c::<T>(1.0 / (t * s) as f64));
        l_d = Some(v);
        parts.push(v);
    }
    let h = g.bce_logits(existence_logits, &existence_labels::<T>(s))?;
    let l_a = g.scale(h, c::<T>(alpha / (s + 1) as f64));
    parts.push(l_a);
    let loss = if parts.len() == 2 { g.add(parts[0], parts[1])? } else { parts[0] };
    let l_d_val = l_d.map_or(0.0, |v| g.value(v).data()[0].as_f64());
    let l_a_val = if alpha > 0.0 {
        g.value(l_a).data()[0].as_f64() / alpha
    } else {
        let ex = g.value(existence_logits);
        let p: Vec<T> = ex.data().iter().map(|&v| crate::diff::sigmoid(v)).collect();
        attractor_existence_loss(&p, s)?.as_f64()
    };
    let report = LossReport {
        total: g.value(loss).data()[0].as_f64(),
        l_d: l_d_val,
        l_a: l_a_val,
        best_permutation: perm,
        alpha,
    };
    Ok((loss, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_half_probability() {
        assert!((bce(&[1.0], &[0.5]).unwrap() - 2f64.ln()).abs() < 1e-12);
        let y = Tensor::from_rows(1, 1, vec![1.0]).unwrap();
        let p = Tensor::from_rows(1, 1, vec![0.5]).unwrap();
        let (l, perm) = pit_loss(&p, &y, &PitConfig::default()).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        assert_eq!(perm, vec![0]);
    }

    #[test]
    fn clamped_perfect_prediction_is_tiny() {
        let e = PROB_EPS;
        let v = bce(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0 - e]).unwrap();
        assert!(v <= 3.0 * 2e-7);
        assert!(bce(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn existence_examples() {
        assert!((attractor_existence_loss(&[0.5, 0.5], 1).unwrap() - 2f64.ln()).abs() < 1e-12);
        let e = PROB_EPS;
        assert!(attractor_existence_loss(&[1.0 - e, 1.0 - e, e], 2).unwrap() < 1e-6);
        assert!(attractor_existence_loss(&[0.5], 1).is_err());
    }

    #[test]
    fn total_with_presets() {
        assert_eq!(total_loss(0.3, 0.2, ALPHA_SIMULATED), 0.5);
        assert_eq!(total_loss(0.3, 0.2, 0.0), 0.3);
        assert!((total_loss(0.3, 0.2, ALPHA_ADAPTATION) - 0.302).abs() < 1e-15);
    }

    #[test]
    fn swapped_outputs_pick_swapped_permutation() {
        let y = Tensor::from_row_vecs(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let p = Tensor::from_row_vecs(&[vec![0.1, 0.1, 0.9], vec![0.9, 0.9, 0.1]]).unwrap();
        let (_, perm) = pit_loss(&p, &y, &PitConfig::default()).unwrap();
        assert_eq!(perm, vec![1, 0]);
    }

    #[test]
    fn too_many_speakers() {
        let y = Tensor::<f64>::zeros(&[2, 9]);
        let p = Tensor::full(&[9, 2], 0.5);
        let cfg = PitConfig::default();
        assert!(matches!(pit_loss(&p, &y, &cfg), Err(Error::TooManySpeakers { got: 9, cap: 8 })));
        let h = PitConfig { solver: PitSolver::Hungarian, ..cfg };
        assert!(pit_loss(&p, &y, &h).is_ok());
    }

    #[test]
    fn graph_loss_matches_value_functions() {
        let labels = Tensor::from_row_vecs(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let zt = Tensor::from_row_vecs(&[vec![-1.0, 2.0, 0.3], vec![0.5, -0.2, -3.0], vec![1.5, 1.0, 0.0]]).unwrap();
        let ex = Tensor::from_rows(3, 1, vec![2.0, 1.0, -1.0]).unwrap();
        let mut g = Graph::<f64>::new();
        let z = g.input(zt.clone());
        let e = g.input(ex.clone());
        let (_, rep) = graph_total_loss(&mut g, z, e, &labels, 0.5, &PitConfig::default()).unwrap();
        let y_hat = Tensor::from_row_vecs(&[
            (0..3).map(|k| crate::diff::sigmoid(zt.get(k, 0))).collect(),
            (0..3).map(|k| crate::diff::sigmoid(zt.get(k, 1))).collect(),
        ])
        .unwrap();
        let (l_d, perm) = pit_loss(&y_hat, &labels, &PitConfig::default()).unwrap();
        let p: Vec<f64> = ex.data().iter().map(|&v| crate::diff::sigmoid(v)).collect();
        let l_a = attractor_existence_loss(&p, 2).unwrap();
        assert_eq!(rep.best_permutation, perm);
        assert!((rep.l_d - l_d).abs() < 1e-9);
        assert!((rep.l_a - l_a).abs() < 1e-9);
        assert!((rep.total - (rep.l_d + 0.5 * rep.l_a)).abs() < 1e-9);
    }
}
