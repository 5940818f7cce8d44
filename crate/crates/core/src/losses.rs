//! Objective terms: InfoNCE over the split similarity `s = s^c + s^n` (and its
//! two rearranged forms), the negative-weight coefficients and their
//! closed-form gradient, the swapped equipartition cross-entropy, the
//! confidence-filtered self-labeling loss and the combined objective.
//!
//! Row `i` of every similarity matrix has its positive in column
//! `positive[i]`; the denominator is the sum over every other column (the
//! negatives, including queued keys) plus the positive once.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::model::{Representation, RepresentationVars};
use crate::sinkhorn::AssignmentMatrix;
use crate::tensor::{log_sum_exp, Matrix};

fn check_temperature(field: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("temperature must be positive, got {value}")))
    }
}

/// Query-versus-key similarities split into cluster and instance parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityDecomposition {
    pub s: Matrix,
    pub sc: Matrix,
    pub sn: Matrix,
    pub positive: Vec<usize>,
}

impl SimilarityDecomposition {
    /// Builds from explicit parts; `s = sc + sn`.
    pub fn from_parts(sc: Matrix, sn: Matrix, positive: Vec<usize>) -> Result<Self> {
        if sc.shape() != sn.shape() {
            return Err(Error::Shape {
                op: "SimilarityDecomposition",
                lhs: sc.shape(),
                rhs: sn.shape(),
            });
        }
        if positive.len() != sc.rows() || positive.iter().any(|&p| p >= sc.cols()) {
            return Err(Error::contract("SimilarityDecomposition", "positive index out of range"));
        }
        let s = sc.add(&sn)?;
        Ok(Self { s, sc, sn, positive })
    }

    pub fn rows(&self) -> usize {
        self.s.rows()
    }
}

/// `sc = zc_q·zc_kᵀ`, `sn = zn_q·zn_kᵀ`; query `i` is positive with key `i`.
/// Keys past the first `B` rows (queued keys) are negatives for everyone.
pub fn similarity_decompose(query: &Representation, keys: &Representation) -> Result<SimilarityDecomposition> {
    if query.zc.cols() != keys.zc.cols() || query.zn.cols() != keys.zn.cols() {
        return Err(Error::contract(
            "similarity_decompose",
            format!(
                "widths differ: query K={} C={}, keys K={} C={}",
                query.zc.cols(),
                query.zn.cols(),
                keys.zc.cols(),
                keys.zn.cols()
            ),
        ));
    }
    if keys.len() < query.len() {
        return Err(Error::contract("similarity_decompose", "fewer keys than queries"));
    }
    let sc = query.zc.matmul_transposed(&keys.zc)?;
    let sn = query.zn.matmul_transposed(&keys.zn)?;
    SimilarityDecomposition::from_parts(sc, sn, (0..query.len()).collect())
}

/// Mean over rows of `−s_ii/τ + log Σ_k exp(s_ik/τ)`.
pub fn infonce(dec: &SimilarityDecomposition, tau: f64) -> Result<f64> {
    check_temperature("tau", tau)?;
    let per_row = (0..dec.rows()).map(|i| {
        let row: Vec<f64> = dec.s.row(i).iter().map(|v| v / tau).collect();
        log_sum_exp(&row) - row[dec.positive[i]]
    });
    Ok(per_row.sum::<f64>() / dec.rows() as f64)
}

/// The same loss written two other ways.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecomposedInfoNce {
    /// Instance term with λ-weighted negatives.
    pub weighted_instance: f64,
    /// Cluster term with instance-derived coefficients.
    pub weighted_cluster: f64,
}

pub fn infonce_decomposed(dec: &SimilarityDecomposition, tau: f64) -> Result<DecomposedInfoNce> {
    check_temperature("tau", tau)?;
    let form = |own: &Matrix, other: &Matrix| -> f64 {
        let mut total = 0.0;
        for i in 0..dec.rows() {
            let p = dec.positive[i];
            let (own_row, other_row) = (own.row(i), other.row(i));
            let anchor = own_row[p];
            let terms: Vec<f64> = (0..own_row.len())
                .map(|k| {
                    if k == p {
                        other_row[p] / tau
                    } else {
                        (own_row[k] - anchor + other_row[k]) / tau
                    }
                })
                .collect();
            total += log_sum_exp(&terms) - other_row[p] / tau;
        }
        total / dec.rows() as f64
    };
    Ok(DecomposedInfoNce {
        weighted_instance: form(&dec.sc, &dec.sn),
        weighted_cluster: form(&dec.sn, &dec.sc),
    })
}

/// `λ_ij = exp((s^c_ij − s^c_ii)/τ)`; exactly 1 at the positive.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeWeights {
    pub lambda: Matrix,
}

pub fn negative_weights(dec: &SimilarityDecomposition, tau: f64) -> Result<NegativeWeights> {
    check_temperature("tau", tau)?;
    let mut lambda = dec.sc.clone();
    for i in 0..lambda.rows() {
        let anchor = dec.sc.get(i, dec.positive[i]);
        lambda.row_mut(i).iter_mut().for_each(|v| *v = ((*v - anchor) / tau).exp());
    }
    Ok(NegativeWeights { lambda })
}

/// Closed-form `∂L_i/∂s^n_ij` of the per-sample loss. Negative columns use
/// the λ-weighted softmax; the positive column is `−(1 − p_ii)/τ`, computed
/// on its own rather than as the negated sum of the others.
pub fn analytic_negative_gradient(dec: &SimilarityDecomposition, tau: f64) -> Result<Matrix> {
    check_temperature("tau", tau)?;
    let mut g = Matrix::zeros(dec.s.rows(), dec.s.cols());
    for i in 0..dec.rows() {
        let p = dec.positive[i];
        let sc = dec.sc.row(i);
        let sn = dec.sn.row(i);
        let log_num: Vec<f64> = (0..sc.len())
            .map(|k| if k == p { sn[p] / tau } else { (sc[k] - sc[p]) / tau + sn[k] / tau })
            .collect();
        let log_den = log_sum_exp(&log_num);
        let row = g.row_mut(i);
        for k in 0..row.len() {
            row[k] = if k == p {
                -(1.0 - (log_num[p] - log_den).exp()) / tau
            } else {
                (log_num[k] - log_den).exp() / tau
            };
        }
    }
    Ok(g)
}

/// Row softmax of `zc / t`.
pub fn cluster_probs(zc: &Matrix, t: f64) -> Result<Matrix> {
    check_temperature("t", t)?;
    Ok(zc.scale(1.0 / t)?.softmax_rows())
}

/// InfoNCE on the tape from a `B x M` similarity matrix.
pub fn infonce_var<'t>(s: Var<'t>, positive: &[usize], tau: f64) -> Result<Var<'t>> {
    check_temperature("tau", tau)?;
    let (b, m) = s.shape();
    if positive.len() != b || positive.iter().any(|&p| p >= m) {
        return Err(Error::contract("infonce", "positive index out of range"));
    }
    let mut mask = Matrix::zeros(b, m);
    for (i, &p) in positive.iter().enumerate() {
        mask.set(i, p, 1.0);
    }
    let mask = s.tape().constant(mask);
    s.scale(1.0 / tau)?
        .log_softmax_rows()?
        .mul(mask)?
        .sum()?
        .scale(-1.0 / b as f64)
}

/// InfoNCE of tape-recorded queries against constant keys (batch keys
/// first, then queued negatives).
pub fn infonce_against_keys<'t>(query: RepresentationVars<'t>, keys: &Representation, tau: f64) -> Result<Var<'t>> {
    let tape = query.zc.tape();
    if query.zc.shape().1 != keys.zc.cols() || query.zn.shape().1 != keys.zn.cols() {
        return Err(Error::contract("infonce", "query and key widths differ"));
    }
    let b = query.zc.shape().0;
    if keys.len() < b {
        return Err(Error::contract("infonce", "fewer keys than queries"));
    }
    let kc = tape.constant(keys.zc.transpose());
    let kn = tape.constant(keys.zn.transpose());
    let s = query.zc.matmul(kc)?.add(query.zn.matmul(kn)?)?;
    infonce_var(s, &(0..b).collect::<Vec<_>>(), tau)
}

/// `−Σ_k target_k log softmax(logits/t)_k`, averaged over rows, on the tape.
/// Targets are detached.
pub fn cross_entropy_var<'t>(logits: Var<'t>, targets: Var<'t>, t: f64) -> Result<Var<'t>> {
    check_temperature("t", t)?;
    if logits.shape() != targets.shape() {
        return Err(Error::Shape {
            op: "cross_entropy",
            lhs: logits.shape(),
            rhs: targets.shape(),
        });
    }
    let rows = logits.shape().0 as f64;
    logits
        .scale(1.0 / t)?
        .log_softmax_rows()?
        .mul(targets.stop_gradient())?
        .sum()?
        .scale(-1.0 / rows)
}

/// Swapped equipartition loss,
/// `−½·mean_i[ q_q,i · log p_k,i + q_k,i · log p_q,i ]`, with targets taken
/// as constants.
pub fn equipartition_ce_var<'t>(
    zc_q: Var<'t>,
    zc_k: Var<'t>,
    targets_q: Var<'t>,
    targets_k: Var<'t>,
    t: f64,
) -> Result<Var<'t>> {
    let a = cross_entropy_var(zc_k, targets_q, t)?;
    let b = cross_entropy_var(zc_q, targets_k, t)?;
    a.add(b)?.scale(0.5)
}

/// Plain evaluation of the swapped equipartition loss.
pub fn equipartition_ce(zc_q: &Matrix, zc_k: &Matrix, q_q: &AssignmentMatrix, q_k: &AssignmentMatrix, t: f64) -> Result<f64> {
    let tq = q_q.targets();
    let tk = q_k.targets();
    for (z, tgt) in [(zc_q, &tk), (zc_k, &tq)] {
        if z.shape() != tgt.shape() {
            return Err(Error::Shape {
                op: "equipartition_ce",
                lhs: z.shape(),
                rhs: tgt.shape(),
            });
        }
    }
    check_temperature("t", t)?;
    let lp_q = zc_q.scale(1.0 / t)?.log_softmax_rows();
    let lp_k = zc_k.scale(1.0 / t)?.log_softmax_rows();
    let ce = |target: &Matrix, logp: &Matrix| -> f64 {
        -target.hadamard(logp).map(|m| m.sum()).unwrap_or(f64::NAN) / target.rows() as f64
    };
    Ok(0.5 * (ce(&tq, &lp_k) + ce(&tk, &lp_q)))
}

/// Samples whose weak-view prediction clears `threshold`, with their argmax.
pub fn confident_labels(probs_weak: &Matrix, threshold: f64) -> Vec<(usize, usize)> {
    (0..probs_weak.rows())
        .filter_map(|i| {
            let row = probs_weak.row(i);
            let (arg, &max) = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))?;
            (max > threshold).then_some((i, arg))
        })
        .collect()
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::config("self_label_threshold", format!("{threshold} outside (0, 1]")))
    }
}

/// Mean `−log p_strong[argmax p_weak]` over confident samples; 0 if none.
pub fn self_label_loss(probs_weak: &Matrix, probs_strong: &Matrix, threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    if probs_weak.shape() != probs_strong.shape() {
        return Err(Error::Shape {
            op: "self_label_loss",
            lhs: probs_weak.shape(),
            rhs: probs_strong.shape(),
        });
    }
    let picked = confident_labels(probs_weak, threshold);
    if picked.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = picked.iter().map(|&(i, c)| -probs_strong.get(i, c).ln()).sum();
    Ok(total / picked.len() as f64)
}

/// Self-labeling loss on the tape: pseudo-labels from the (constant) weak
/// probabilities, cross-entropy against `softmax(strong_logits / t)`.
/// Returns `None` when no sample is confident.
pub fn self_label_var<'t>(probs_weak: &Matrix, strong_logits: Var<'t>, t: f64, threshold: f64) -> Result<Option<Var<'t>>> {
    check_threshold(threshold)?;
    check_temperature("t", t)?;
    if probs_weak.shape() != strong_logits.shape() {
        return Err(Error::Shape {
            op: "self_label",
            lhs: probs_weak.shape(),
            rhs: strong_logits.shape(),
        });
    }
    let picked = confident_labels(probs_weak, threshold);
    if picked.is_empty() {
        return Ok(None);
    }
    let (b, k) = probs_weak.shape();
    let mut mask = Matrix::zeros(b, k);
    for &(i, c) in &picked {
        mask.set(i, c, 1.0);
    }
    let mask = strong_logits.tape().constant(mask);
    let loss = strong_logits
        .scale(1.0 / t)?
        .log_softmax_rows()?
        .mul(mask)?
        .sum()?
        .scale(-1.0 / picked.len() as f64)?;
    Ok(Some(loss))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub t: f64,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.15,
            t: 0.10,
            alpha: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LossBreakdown {
    pub infonce: f64,
    pub equipartition_ce: f64,
    pub self_label: Option<f64>,
    pub alpha: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(infonce: f64, equipartition_ce: f64, alpha: f64, self_label: Option<f64>) -> Self {
        let total = infonce + alpha * equipartition_ce + self_label.unwrap_or(0.0);
        Self {
            infonce,
            equipartition_ce,
            self_label,
            alpha,
            total,
        }
    }
}

/// Combined objective on the tape: InfoNCE of the queries against the
/// (constant) keys plus queue, plus `α` times the swapped equipartition
/// cross-entropy with `Q` computed elsewhere and held constant.
pub fn clc_objective<'t>(
    query: RepresentationVars<'t>,
    keys: &Representation,
    queue: Option<&Representation>,
    q_query: &AssignmentMatrix,
    q_key: &AssignmentMatrix,
    cfg: &LossConfig,
) -> Result<(Var<'t>, LossBreakdown)> {
    if cfg.alpha < 0.0 || !cfg.alpha.is_finite() {
        return Err(Error::config("alpha", "alpha must be a finite non-negative weight"));
    }
    let tape = query.zc.tape();
    let all_keys = match queue {
        Some(q) => keys.stack(q)?,
        None => keys.clone(),
    };
    let nce = infonce_against_keys(query, &all_keys, cfg.tau)?;
    let ce = equipartition_ce_var(
        query.zc,
        tape.constant(keys.zc.clone()),
        tape.constant(q_query.targets()),
        tape.constant(q_key.targets()),
        cfg.t,
    )?;
    let total = nce.add(ce.scale(cfg.alpha)?)?;
    let breakdown = LossBreakdown::compose(nce.item()?, ce.item()?, cfg.alpha, None);
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_gradients, Tape};
    use crate::sinkhorn::{solve, SinkhornConfig, SolveMode};
    use crate::tensor::RngState;

    fn unit_rows(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect())
            .unwrap()
            .row_l2_normalize()
            .unwrap()
    }

    fn random_rep(rows: usize, k: usize, c: usize, rng: &mut RngState) -> Representation {
        Representation {
            zc: unit_rows(rows, k, rng),
            zn: unit_rows(rows, c, rng),
        }
    }

    fn random_dec(b: usize, m: usize, rng: &mut RngState) -> SimilarityDecomposition {
        let q = random_rep(b, 4, 5, rng);
        let k = random_rep(m, 4, 5, rng);
        similarity_decompose(&q, &k).unwrap()
    }

    /// Direct `−log(e^pos / Σ e^k)` without any stabilization.
    fn naive_infonce(dec: &SimilarityDecomposition, tau: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..dec.rows() {
            let num = (dec.s.get(i, dec.positive[i]) / tau).exp();
            let den: f64 = dec.s.row(i).iter().map(|v| (v / tau).exp()).sum();
            total += -(num / den).ln();
        }
        total / dec.rows() as f64
    }

    #[test]
    fn self_similarity_is_two_and_orthogonal_is_zero() {
        let mut rng = RngState::new(1);
        let q = random_rep(3, 4, 5, &mut rng);
        let dec = similarity_decompose(&q, &q).unwrap();
        for i in 0..3 {
            assert!((dec.s.get(i, i) - 2.0).abs() < 1e-15);
        }
        let a = Representation {
            zc: Matrix::from_rows(&[[1.0, 0.0]]).unwrap(),
            zn: Matrix::from_rows(&[[0.0, 1.0]]).unwrap(),
        };
        let b = Representation {
            zc: Matrix::from_rows(&[[0.0, 1.0]]).unwrap(),
            zn: Matrix::from_rows(&[[1.0, 0.0]]).unwrap(),
        };
        let dec = similarity_decompose(&a, &b).unwrap();
        assert_eq!(dec.sc.get(0, 0), 0.0);
        assert_eq!(dec.sn.get(0, 0), 0.0);
    }

    #[test]
    fn decomposition_matches_concatenated_dot_product() {
        let mut rng = RngState::new(2);
        let q = random_rep(6, 4, 5, &mut rng);
        let k = random_rep(9, 4, 5, &mut rng);
        let dec = similarity_decompose(&q, &k).unwrap();
        let (qc, kc) = (q.concat().unwrap(), k.concat().unwrap());
        for i in 0..6 {
            for j in 0..9 {
                let direct: f64 = qc.row(i).iter().zip(kc.row(j)).map(|(a, b)| a * b).sum();
                assert!((dec.s.get(i, j) - direct).abs() < 1e-14);
                assert!(dec.sc.get(i, j).abs() <= 1.0 + 1e-15);
                assert!(dec.sn.get(i, j).abs() <= 1.0 + 1e-15);
            }
        }
    }

    #[test]
    fn width_mismatch_is_a_contract_error() {
        let mut rng = RngState::new(3);
        let q = random_rep(2, 4, 5, &mut rng);
        let k = random_rep(2, 3, 5, &mut rng);
        assert!(matches!(similarity_decompose(&q, &k), Err(Error::Contract { .. })));
    }

    #[test]
    fn tied_negative_gives_ln_two() {
        for tau in [0.05, 0.15, 1.0, 3.0] {
            let dec = SimilarityDecomposition::from_parts(
                Matrix::from_rows(&[[0.3, 0.3]]).unwrap(),
                Matrix::from_rows(&[[-0.2, -0.2]]).unwrap(),
                vec![0],
            )
            .unwrap();
            assert!((infonce(&dec, tau).unwrap() - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn dominant_positive_drives_loss_to_zero() {
        let dec = SimilarityDecomposition::from_parts(
            Matrix::from_rows(&[[1.0, -1.0, -1.0]]).unwrap(),
            Matrix::from_rows(&[[1.0, -1.0, -1.0]]).unwrap(),
            vec![0],
        )
        .unwrap();
        let loss = infonce(&dec, 0.01).unwrap();
        assert!((0.0..1e-150).contains(&loss), "{loss}");
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = RngState::new(4);
        for _ in 0..20 {
            let dec = random_dec(4, 4, &mut rng);
            for tau in [0.15, 0.5, 1.0] {
                assert!((infonce(&dec, tau).unwrap() - naive_infonce(&dec, tau)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_positive_tau_is_a_config_error() {
        let mut rng = RngState::new(5);
        let dec = random_dec(3, 3, &mut rng);
        assert!(matches!(infonce(&dec, 0.0), Err(Error::Config(_))));
        assert!(matches!(infonce_decomposed(&dec, -1.0), Err(Error::Config(_))));
        assert!(matches!(cluster_probs(&dec.sc, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn three_forms_agree() {
        let mut rng = RngState::new(6);
        for trial in 0..120 {
            let m = 5 + trial % 4;
            let dec = random_dec(5, m, &mut rng);
            for tau in [0.1, 0.15, 0.4, 1.0] {
                let plain = infonce(&dec, tau).unwrap();
                let d = infonce_decomposed(&dec, tau).unwrap();
                assert!((d.weighted_instance - plain).abs() < 1e-12, "{trial} {tau}");
                assert!((d.weighted_cluster - plain).abs() < 1e-12, "{trial} {tau}");
            }
        }
    }

    #[test]
    fn three_forms_match_high_precision_values() {
        // 3 queries, 4 keys, positives off the diagonal, τ = 0.15;
        // reference from 50-digit evaluation of each form.
        let sc = Matrix::from_rows(&[
            [0.81, -0.12, 0.33, 0.57],
            [0.05, 0.92, -0.64, 0.18],
            [-0.27, 0.44, 0.69, -0.91],
        ])
        .unwrap();
        let sn = Matrix::from_rows(&[
            [0.74, 0.21, -0.38, 0.06],
            [-0.15, 0.88, 0.47, -0.52],
            [0.36, -0.83, 0.95, 0.11],
        ])
        .unwrap();
        let dec = SimilarityDecomposition::from_parts(sc, sn, vec![3, 0, 1]).unwrap();
        let want = 10.778_540_811_504_641;
        let plain = infonce(&dec, 0.15).unwrap();
        let d = infonce_decomposed(&dec, 0.15).unwrap();
        for got in [plain, d.weighted_instance, d.weighted_cluster] {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_cluster_similarity_reduces_to_instance_infonce() {
        let mut rng = RngState::new(7);
        let base = random_dec(4, 6, &mut rng);
        let zeros = Matrix::zeros(4, 6);
        let dec = SimilarityDecomposition::from_parts(zeros.clone(), base.sn.clone(), base.positive.clone()).unwrap();
        let w = negative_weights(&dec, 0.2).unwrap();
        assert!(w.lambda.as_slice().iter().all(|&v| v == 1.0));
        let instance_only = SimilarityDecomposition::from_parts(base.sn.clone(), zeros, base.positive.clone()).unwrap();
        let a = infonce_decomposed(&dec, 0.2).unwrap().weighted_instance;
        let b = infonce(&instance_only, 0.2).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn lambda_examples_and_bounds() {
        let tau = 0.15;
        let dec = SimilarityDecomposition::from_parts(
            Matrix::from_rows(&[[0.2, 0.2, 0.2 + tau, -0.7]]).unwrap(),
            Matrix::zeros(1, 4),
            vec![0],
        )
        .unwrap();
        let w = negative_weights(&dec, tau).unwrap().lambda;
        assert_eq!(w.get(0, 0), 1.0);
        assert_eq!(w.get(0, 1), 1.0);
        assert!((w.get(0, 2) - std::f64::consts::E).abs() < 1e-12);

        let mut rng = RngState::new(8);
        let dec = random_dec(6, 9, &mut rng);
        let w = negative_weights(&dec, tau).unwrap().lambda;
        for i in 0..6 {
            assert_eq!(w.get(i, dec.positive[i]), 1.0);
            for &v in w.row(i) {
                assert!(v >= (-2.0 / tau).exp() && v <= (2.0 / tau).exp());
            }
        }
    }

    #[test]
    fn lambda_increases_with_cluster_similarity() {
        let tau = 0.3;
        let mut last = 0.0;
        for step in 0..20 {
            let x = -1.0 + 0.1 * step as f64;
            let dec = SimilarityDecomposition::from_parts(
                Matrix::from_rows(&[[0.4, x]]).unwrap(),
                Matrix::zeros(1, 2),
                vec![0],
            )
            .unwrap();
            let v = negative_weights(&dec, tau).unwrap().lambda.get(0, 1);
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn positive_gradient_balances_negatives() {
        let mut rng = RngState::new(9);
        for _ in 0..20 {
            let dec = random_dec(5, 8, &mut rng);
            let g = analytic_negative_gradient(&dec, 0.15).unwrap();
            for i in 0..5 {
                let neg: f64 = (0..8).filter(|&j| j != i).map(|j| g.get(i, j)).sum();
                assert!((neg + g.get(i, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_tied_negative_gradient() {
        let tau = 0.15;
        let dec = SimilarityDecomposition::from_parts(Matrix::filled(1, 2, 0.3), Matrix::filled(1, 2, 0.5), vec![0]).unwrap();
        let g = analytic_negative_gradient(&dec, tau).unwrap();
        assert!((g.get(0, 1) - 1.0 / (2.0 * tau)).abs() < 1e-12);
    }

    #[test]
    fn closed_form_gradient_matches_autodiff() {
        let mut rng = RngState::new(10);
        for trial in 0..10 {
            let b = 4 + trial % 3;
            let dec = random_dec(b, b + trial % 4, &mut rng);
            for tau in [0.1, 0.15, 0.5] {
                let tape = Tape::new();
                let sn = tape.param(dec.sn.clone());
                let s = tape.constant(dec.sc.clone()).add(sn).unwrap();
                let loss = infonce_var(s, &dec.positive, tau).unwrap();
                assert!((loss.item().unwrap() - infonce(&dec, tau).unwrap()).abs() < 1e-12);
                let grads = tape.backward(loss).unwrap();
                // The tape differentiates the batch mean; the closed form is per sample.
                let auto = grads.get(sn).unwrap().scale(b as f64).unwrap();
                let closed = analytic_negative_gradient(&dec, tau).unwrap();
                assert!(auto.max_abs_diff(&closed) < 1e-10, "trial {trial} tau {tau}");
            }
        }
    }

    #[test]
    fn cluster_prob_examples() {
        let u = cluster_probs(&Matrix::filled(2, 4, 0.3), 0.1).unwrap();
        assert!(u.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let sharp = cluster_probs(&Matrix::from_rows(&[[1.0, 0.0, -1.0]]).unwrap(), 1e-3).unwrap();
        assert!(sharp.get(0, 0) > 1.0 - 1e-6);
        let mut rng = RngState::new(11);
        let z = unit_rows(3, 4, &mut rng);
        assert!(cluster_probs(&z, 1.0).unwrap().max_abs_diff(&z.softmax_rows()) < 1e-16);
    }

    fn assignment(zc: &Matrix) -> AssignmentMatrix {
        solve(zc, &SinkhornConfig::default(), SolveMode::Fixed).unwrap()
    }

    #[test]
    fn equipartition_examples() {
        let tape = Tape::new();
        // One-hot targets against (numerically) one-hot predictions.
        let big = Matrix::from_rows(&[[60.0, 0.0], [0.0, 60.0]]).unwrap();
        let onehot = Matrix::identity(2);
        let v = equipartition_ce_var(
            tape.constant(big.clone()),
            tape.constant(big),
            tape.constant(onehot.clone()),
            tape.constant(onehot),
            0.1,
        )
        .unwrap();
        assert!(v.item().unwrap() < 1e-200);

        let flat = Matrix::zeros(3, 5);
        let uniform = Matrix::filled(3, 5, 0.2);
        let v = equipartition_ce_var(
            tape.constant(flat.clone()),
            tape.constant(flat),
            tape.constant(uniform.clone()),
            tape.constant(uniform),
            0.1,
        )
        .unwrap();
        assert!((v.item().unwrap() - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn equipartition_matches_direct_sum() {
        let mut rng = RngState::new(12);
        let t = 0.1;
        let zq = unit_rows(8, 3, &mut rng);
        let zk = unit_rows(8, 3, &mut rng);
        let (aq, ak) = (assignment(&zq), assignment(&zk));
        let got = equipartition_ce(&zq, &zk, &aq, &ak, t).unwrap();
        let (tq, tk) = (aq.targets(), ak.targets());
        let (pq, pk) = (cluster_probs(&zq, t).unwrap(), cluster_probs(&zk, t).unwrap());
        let mut direct = 0.0;
        for i in 0..8 {
            for k in 0..3 {
                direct += tq.get(i, k) * pk.get(i, k).ln() + tk.get(i, k) * pq.get(i, k).ln();
            }
        }
        direct *= -0.5 / 8.0;
        assert!((got - direct).abs() < 1e-12);

        let tape = Tape::new();
        let v = equipartition_ce_var(
            tape.constant(zq),
            tape.constant(zk),
            tape.constant(tq),
            tape.constant(tk),
            t,
        )
        .unwrap();
        assert!((v.item().unwrap() - got).abs() < 1e-13);
    }

    #[test]
    fn equipartition_ignores_row_shifts() {
        let mut rng = RngState::new(13);
        let zq = unit_rows(6, 4, &mut rng);
        let zk = unit_rows(6, 4, &mut rng);
        let (aq, ak) = (assignment(&zq), assignment(&zk));
        let base = equipartition_ce(&zq, &zk, &aq, &ak, 0.1).unwrap();
        let mut shifted = zq.clone();
        for r in 0..6 {
            let c = rng.uniform_range(-2.0, 2.0);
            shifted.row_mut(r).iter_mut().for_each(|v| *v += c);
        }
        let moved = equipartition_ce(&shifted, &zk, &aq, &ak, 0.1).unwrap();
        assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn targets_never_receive_gradient() {
        let mut rng = RngState::new(14);
        let tape = Tape::new();
        let zq = tape.param(unit_rows(5, 3, &mut rng));
        let tq = tape.param(Matrix::filled(5, 3, 1.0 / 3.0));
        let tk = tape.param(Matrix::filled(5, 3, 1.0 / 3.0));
        let zk = tape.constant(unit_rows(5, 3, &mut rng));
        let loss = equipartition_ce_var(zq, zk, tq, tk, 0.1).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get_or_zeros(tq).max_abs() == 0.0);
        assert!(g.get_or_zeros(tk).max_abs() == 0.0);
        assert!(g.get(zq).unwrap().max_abs() > 0.0);
    }

    #[test]
    fn self_label_examples() {
        let weak = Matrix::from_rows(&[[0.5, 0.3, 0.2], [0.98, 0.01, 0.01]]).unwrap();
        let strong = Matrix::filled(2, 3, 1.0 / 3.0);
        assert_eq!(self_label_loss(&weak, &strong, 0.99).unwrap(), 0.0);

        let weak = Matrix::from_rows(&[[0.995, 0.004, 0.001], [0.4, 0.3, 0.3]]).unwrap();
        let agree = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.2, 0.2, 0.6]]).unwrap();
        assert_eq!(self_label_loss(&weak, &agree, 0.99).unwrap(), 0.0);
        let loss = self_label_loss(&weak, &strong, 0.99).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);

        let tape = Tape::new();
        let flat = tape.param(Matrix::zeros(2, 3));
        let v = self_label_var(&weak, flat, 0.1, 0.99).unwrap().unwrap();
        assert!((v.item().unwrap() - 3f64.ln()).abs() < 1e-15);
        let none = self_label_var(&Matrix::filled(2, 3, 1.0 / 3.0), flat, 0.1, 0.99).unwrap();
        assert!(none.is_none());
        // Selection is strict, so a unit threshold selects nothing.
        assert_eq!(self_label_loss(&weak, &strong, 1.0).unwrap(), 0.0);
        assert!(self_label_loss(&weak, &strong, 1.5).is_err());
        assert!(self_label_loss(&weak, &strong, 0.0).is_err());
    }

    #[test]
    fn objective_breakdown_adds_up() {
        let mut rng = RngState::new(15);
        let q = random_rep(6, 3, 4, &mut rng);
        let k = random_rep(6, 3, 4, &mut rng);
        let queue = random_rep(5, 3, 4, &mut rng);
        let (aq, ak) = (assignment(&q.zc), assignment(&k.zc));
        for alpha in [0.0, 5.0] {
            let cfg = LossConfig { alpha, ..Default::default() };
            let tape = Tape::new();
            let vars = RepresentationVars {
                zc: tape.param(q.zc.clone()),
                zn: tape.param(q.zn.clone()),
            };
            let (total, br) = clc_objective(vars, &k, Some(&queue), &aq, &ak, &cfg).unwrap();
            let nce = infonce(&similarity_decompose(&q, &k.stack(&queue).unwrap()).unwrap(), cfg.tau).unwrap();
            let ce = equipartition_ce(&q.zc, &k.zc, &aq, &ak, cfg.t).unwrap();
            assert!((br.infonce - nce).abs() < 1e-13);
            assert!((br.equipartition_ce - ce).abs() < 1e-13);
            let summed = br.infonce + alpha * br.equipartition_ce;
            assert!((total.item().unwrap() - summed).abs() < 1e-15);
            assert_eq!(br.total, summed);
            if alpha == 0.0 {
                assert_eq!(total.item().unwrap(), br.infonce);
            }
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut rng = RngState::new(16);
        let q = random_rep(5, 3, 4, &mut rng);
        let k = random_rep(5, 3, 4, &mut rng);
        let (aq, ak) = (assignment(&q.zc), assignment(&k.zc));
        let cfg = LossConfig::default();
        let r = check_gradients(
            |_, v| {
                let vars = RepresentationVars { zc: v[0], zn: v[1] };
                Ok(clc_objective(vars, &k, None, &aq, &ak, &cfg)?.0)
            },
            &[q.zc.clone(), q.zn.clone()],
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
