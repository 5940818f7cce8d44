//! Clustering scores (ACC under optimal matching, NMI, ARI), the
//! cluster-size entropy used to spot collapse, and pairwise similarity
//! statistics of the two representation parts.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::{AugmentationPolicy, Dataset};
use crate::error::{Error, Result};
use crate::model::{Normalization, Params, Representation};
use crate::tensor::RngState;

/// Counts of (predicted, true) label pairs. Labels are arbitrary integers;
/// rows and columns follow their sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

impl ContingencyTable {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::contract(
                "contingency",
                format!("{} predictions for {} labels", pred.len(), truth.len()),
            ));
        }
        if pred.is_empty() {
            return Err(Error::contract("contingency", "empty labelling"));
        }
        let index = |labels: &[usize]| -> BTreeMap<usize, usize> {
            let mut m = BTreeMap::new();
            for &l in labels {
                m.entry(l).or_insert(0);
            }
            for (i, v) in m.values_mut().enumerate() {
                *v = i;
            }
            m
        };
        let (pi, ti) = (index(pred), index(truth));
        let mut counts = vec![vec![0u64; ti.len()]; pi.len()];
        for (p, t) in pred.iter().zip(truth) {
            counts[pi[p]][ti[t]] += 1;
        }
        Ok(Self {
            counts,
            n: pred.len() as u64,
        })
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_totals(&self) -> Vec<u64> {
        let cols = self.counts.first().map_or(0, Vec::len);
        (0..cols).map(|c| self.counts.iter().map(|r| r[c]).sum()).collect()
    }
}

/// Minimum-cost perfect matching on a square cost matrix (shortest
/// augmenting paths with potentials, `O(n³)`). Returns `assign[row] = col`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; index 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[r0 - 1][col - 1] - u[r0] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for col in 1..=n {
        if owner[col] > 0 {
            assign[owner[col] - 1] = col - 1;
        }
    }
    assign
}

/// Best matched fraction over one-to-one cluster↔class maps; the table is
/// zero-padded to a square when the label counts differ.
pub fn hungarian_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let rows = table.counts.len();
    let cols = table.counts[0].len();
    let n = rows.max(cols);
    let max = table.counts.iter().flatten().copied().max().unwrap_or(0) as f64;
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            (0..n)
                .map(|c| {
                    let v = if r < rows && c < cols { table.counts[r][c] } else { 0 };
                    max - v as f64
                })
                .collect()
        })
        .collect();
    let assign = min_cost_assignment(&cost);
    let matched: u64 = assign
        .iter()
        .enumerate()
        .filter(|&(r, &c)| r < rows && c < cols)
        .map(|(r, &c)| table.counts[r][c])
        .sum();
    Ok(matched as f64 / table.n as f64)
}

fn entropy_of_counts(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over the arithmetic mean of the two entropies. Two
/// single-cluster labellings are defined to score 1.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let n = table.n as f64;
    let (rows, cols) = (table.row_totals(), table.col_totals());
    let hp = entropy_of_counts(&rows, n);
    let ht = entropy_of_counts(&cols, n);
    if rows.len() == 1 && cols.len() == 1 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (r, row) in table.counts.iter().enumerate() {
        for (c, &nij) in row.iter().enumerate() {
            if nij == 0 {
                continue;
            }
            let nij = nij as f64;
            mi += nij / n * (n * nij / (rows[r] as f64 * cols[c] as f64)).ln();
        }
    }
    let denom = 0.5 * (hp + ht);
    Ok(if denom > 0.0 { (mi / denom).clamp(0.0, 1.0) } else { 0.0 })
}

fn choose2(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index from pair counts. When the index cannot move
/// (both labellings trivial and identical) it is defined as 1.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() < 2 {
        return Err(Error::contract("ari", "need at least two samples"));
    }
    let table = ContingencyTable::new(pred, truth)?;
    let index: f64 = table.counts.iter().flatten().map(|&c| choose2(c)).sum();
    let a: f64 = table.row_totals().into_iter().map(choose2).sum();
    let b: f64 = table.col_totals().into_iter().map(choose2).sum();
    let expected = a * b / choose2(table.n);
    let max = 0.5 * (a + b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Shannon entropy (nats) of the predicted cluster sizes over `k` clusters.
pub fn assignment_entropy(pred: &[usize], k: usize) -> f64 {
    let mut counts = vec![0u64; k.max(pred.iter().max().map_or(0, |m| m + 1))];
    for &p in pred {
        counts[p] += 1;
    }
    entropy_of_counts(&counts, pred.len().max(1) as f64)
}

/// Mean, spread and size of one sample of similarity scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    /// Standard error of the mean.
    pub stderr: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let std = var.sqrt();
        Some(Self {
            mean,
            std,
            count: values.len(),
            stderr: std / n.sqrt(),
        })
    }
}

/// One representation part, three pair classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartStats {
    /// Two views of the same sample.
    pub augmented: Option<Moments>,
    /// Different samples of the same true class.
    pub same: Option<Moments>,
    /// Samples of different true classes.
    pub different: Option<Moments>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityStats {
    pub zc: PartStats,
    pub zn: PartStats,
    /// `exp((s^c_ij − s^c_ii)/τ)` over same-class negatives.
    pub lambda_intra: Option<Moments>,
    /// The same weight over different-class negatives.
    pub lambda_inter: Option<Moments>,
    /// `exp((s^n_ij − s^n_ii)/τ)` over all negatives; its spread shows how
    /// far it is from a constant.
    pub instance_coefficient: Option<Moments>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws up to `budget` index pairs `(i, j)`, `i != j`, satisfying `keep`.
/// Enumerates when the full set fits, samples with replacement otherwise.
fn pair_sample(
    labels: &[usize],
    same_class: bool,
    budget: usize,
    rng: &mut RngState,
) -> Vec<(usize, usize)> {
    let n = labels.len();
    let keep = |i: usize, j: usize| i != j && (labels[i] == labels[j]) == same_class;
    let mut by_class: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *by_class.entry(l).or_insert(0) += 1;
    }
    let same_pairs: u64 = by_class.values().map(|&c| (c * c.saturating_sub(1)) as u64).sum();
    let total = if same_class {
        same_pairs
    } else {
        (n * n.saturating_sub(1)) as u64 - same_pairs
    };
    if total == 0 {
        return Vec::new();
    }
    if total <= budget as u64 {
        let mut out = Vec::with_capacity(total as usize);
        for i in 0..n {
            for j in 0..n {
                if keep(i, j) {
                    out.push((i, j));
                }
            }
        }
        return out;
    }
    let mut out = Vec::with_capacity(budget);
    while out.len() < budget {
        let (i, j) = (rng.below(n), rng.below(n));
        if keep(i, j) {
            out.push((i, j));
        }
    }
    out
}

/// Statistics from two aligned views' representations and true labels.
/// Same/different pairs compare view `a` of one sample with view `b` of
/// another, mirroring query-versus-key negatives.
pub fn similarity_stats_from_views(
    a: &Representation,
    b: &Representation,
    labels: &[usize],
    tau: f64,
    budget: usize,
    rng: &mut RngState,
) -> Result<SimilarityStats> {
    if a.len() != b.len() || a.len() != labels.len() {
        return Err(Error::contract("similarity_stats", "views and labels must align"));
    }
    let n = labels.len();
    let aug_c: Vec<f64> = (0..n).map(|i| dot(a.zc.row(i), b.zc.row(i))).collect();
    let aug_n: Vec<f64> = (0..n).map(|i| dot(a.zn.row(i), b.zn.row(i))).collect();
    let mut augmented_idx: Vec<usize> = (0..n).collect();
    if n > budget {
        rng.shuffle(&mut augmented_idx);
        augmented_idx.truncate(budget);
    }
    let pick = |v: &[f64]| -> Vec<f64> { augmented_idx.iter().map(|&i| v[i]).collect() };

    let same = pair_sample(labels, true, budget, rng);
    let diff = pair_sample(labels, false, budget, rng);
    let sims = |pairs: &[(usize, usize)], part: fn(&Representation) -> &crate::tensor::Matrix| -> Vec<f64> {
        pairs.iter().map(|&(i, j)| dot(part(a).row(i), part(b).row(j))).collect()
    };
    fn zc_of(r: &Representation) -> &crate::tensor::Matrix {
        &r.zc
    }
    fn zn_of(r: &Representation) -> &crate::tensor::Matrix {
        &r.zn
    }
    let (same_c, same_n) = (sims(&same, zc_of), sims(&same, zn_of));
    let (diff_c, diff_n) = (sims(&diff, zc_of), sims(&diff, zn_of));

    let lambda = |pairs: &[(usize, usize)], s: &[f64]| -> Vec<f64> {
        pairs.iter().zip(s).map(|(&(i, _), sij)| ((sij - aug_c[i]) / tau).exp()).collect()
    };
    let coefficient: Vec<f64> = same
        .iter()
        .zip(&same_n)
        .chain(diff.iter().zip(&diff_n))
        .map(|(&(i, _), sij)| ((sij - aug_n[i]) / tau).exp())
        .collect();

    Ok(SimilarityStats {
        zc: PartStats {
            augmented: Moments::of(&pick(&aug_c)),
            same: Moments::of(&same_c),
            different: Moments::of(&diff_c),
        },
        zn: PartStats {
            augmented: Moments::of(&pick(&aug_n)),
            same: Moments::of(&same_n),
            different: Moments::of(&diff_n),
        },
        lambda_intra: Moments::of(&lambda(&same, &same_c)),
        lambda_inter: Moments::of(&lambda(&diff, &diff_c)),
        instance_coefficient: Moments::of(&coefficient),
    })
}

/// Encodes two augmented views of `dataset` with `params` and summarizes
/// pair similarities. Without labels every sample is its own class, so the
/// `same` cells are absent and `different` covers all pairs of samples.
pub fn similarity_stats(
    params: &Params,
    norm: Normalization,
    dataset: &Dataset,
    policy: &AugmentationPolicy,
    tau: f64,
    budget: usize,
    rng: &mut RngState,
) -> Result<SimilarityStats> {
    let labels = match &dataset.labels {
        Some(l) => l.clone(),
        None => (0..dataset.len()).collect(),
    };
    let (va, vb) = crate::data::two_views(&dataset.features, policy, rng);
    let a = params.forward(&va, norm)?;
    let b = params.forward(&vb, norm)?;
    similarity_stats_from_views(&a, &b, &labels, tau, budget, rng)
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRecord {
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl MetricRecord {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        Self {
            kind: "metric",
            name: name.into(),
            value,
            step: None,
            seed: None,
        }
    }

    pub fn at(mut self, step: u64) -> Self {
        self.step = Some(step);
        self
    }

    pub fn seeded(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// ACC, NMI, ARI and assignment entropy in one go.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterScores {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub entropy: f64,
}

pub fn cluster_scores(pred: &[usize], truth: &[usize], k: usize) -> Result<ClusterScores> {
    Ok(ClusterScores {
        acc: hungarian_accuracy(pred, truth)?,
        nmi: nmi(pred, truth)?,
        ari: ari(pred, truth)?,
        entropy: assignment_entropy(pred, k),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MlpSpec;
    use crate::tensor::Matrix;

    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }

    fn brute_force_acc(pred: &[usize], truth: &[usize], k: usize) -> f64 {
        permutations(k)
            .iter()
            .map(|perm| pred.iter().zip(truth).filter(|(&p, &t)| perm[p] == t).count())
            .max()
            .unwrap() as f64
            / pred.len() as f64
    }

    fn random_labels(n: usize, k: usize, rng: &mut RngState) -> Vec<usize> {
        (0..n).map(|_| rng.below(k)).collect()
    }

    #[test]
    fn accuracy_examples() {
        let t = [0, 1, 2, 2, 1, 0];
        assert_eq!(hungarian_accuracy(&t, &t).unwrap(), 1.0);
        let relabel: Vec<usize> = t.iter().map(|&x| [2, 0, 1][x]).collect();
        assert_eq!(hungarian_accuracy(&relabel, &t).unwrap(), 1.0);
        let acc = hungarian_accuracy(&[0, 0, 1, 1, 2], &[1, 1, 0, 0, 0]).unwrap();
        assert_eq!(acc, 0.8);
        assert_eq!(brute_force_acc(&[0, 0, 1, 1, 2], &[1, 1, 0, 0, 0], 3), 0.8);
        assert!(hungarian_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn accuracy_equals_brute_force() {
        let mut rng = RngState::new(1);
        for trial in 0..300 {
            let k = 2 + trial % 4;
            let n = 5 + rng.below(40);
            let truth = random_labels(n, k, &mut rng);
            let pred = random_labels(n, k, &mut rng);
            let got = hungarian_accuracy(&pred, &truth).unwrap();
            assert_eq!(got, brute_force_acc(&pred, &truth, k), "trial {trial}");
            assert!(got >= 1.0 / k as f64 - 1e-12 || n < k);
        }
    }

    #[test]
    fn accuracy_handles_unequal_label_counts() {
        // Three predicted clusters, two classes: the extra cluster is unmatched.
        let acc = hungarian_accuracy(&[0, 0, 1, 1, 2, 2], &[0, 0, 1, 1, 1, 1]).unwrap();
        assert!((acc - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn assignment_solver_on_hand_case() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = min_cost_assignment(&cost);
        let total: f64 = a.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
        assert_eq!(total, 5.0);
    }

    fn direct_nmi(pred: &[usize], truth: &[usize]) -> f64 {
        let n = pred.len() as f64;
        let kp = pred.iter().max().unwrap() + 1;
        let kt = truth.iter().max().unwrap() + 1;
        let mut joint = vec![vec![0.0; kt]; kp];
        for (&p, &t) in pred.iter().zip(truth) {
            joint[p][t] += 1.0 / n;
        }
        let pp: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
        let pt: Vec<f64> = (0..kt).map(|c| joint.iter().map(|r| r[c]).sum()).collect();
        let mut mi = 0.0;
        for a in 0..kp {
            for b in 0..kt {
                if joint[a][b] > 0.0 {
                    mi += joint[a][b] * (joint[a][b] / (pp[a] * pt[b])).ln();
                }
            }
        }
        let h = |p: &[f64]| -> f64 { p.iter().filter(|&&v| v > 0.0).map(|v| -v * v.ln()).sum() };
        mi / (0.5 * (h(&pp) + h(&pt)))
    }

    #[test]
    fn nmi_examples() {
        let t = [0, 0, 1, 1, 2, 2];
        assert!((nmi(&t, &t).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[4; 6], &t).unwrap(), 0.0);
        assert_eq!(nmi(&[1, 1, 1], &[3, 3, 3]).unwrap(), 1.0);
        let mut rng = RngState::new(2);
        for _ in 0..50 {
            let a = random_labels(30, 3, &mut rng);
            let b = random_labels(30, 4, &mut rng);
            let got = nmi(&a, &b).unwrap();
            assert!((got - direct_nmi(&a, &b)).abs() < 1e-10);
            assert!((got - nmi(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    fn brute_force_ari(pred: &[usize], truth: &[usize]) -> f64 {
        let n = pred.len();
        let (mut both, mut only_p, mut only_t, mut neither) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                match (pred[i] == pred[j], truth[i] == truth[j]) {
                    (true, true) => both += 1.0,
                    (true, false) => only_p += 1.0,
                    (false, true) => only_t += 1.0,
                    (false, false) => neither += 1.0,
                }
            }
        }
        let pairs = both + only_p + only_t + neither;
        let a = both + only_p;
        let b = both + only_t;
        let expected = a * b / pairs;
        (both - expected) / (0.5 * (a + b) - expected)
    }

    #[test]
    fn ari_examples() {
        let t = [0, 0, 1, 1, 2, 2, 2];
        assert_eq!(ari(&t, &t).unwrap(), 1.0);
        assert_eq!(ari(&[0; 7], &t).unwrap(), 0.0);
        assert!(ari(&[0], &[0]).is_err());
        let mut rng = RngState::new(3);
        for _ in 0..50 {
            let a = random_labels(25, 3, &mut rng);
            let b = random_labels(25, 4, &mut rng);
            let got = ari(&a, &b).unwrap();
            assert!((got - brute_force_ari(&a, &b)).abs() < 1e-12);
            assert_eq!(got, ari(&b, &a).unwrap());
        }
    }

    #[test]
    fn metrics_ignore_relabelling() {
        let mut rng = RngState::new(4);
        let a = random_labels(40, 4, &mut rng);
        let b = random_labels(40, 4, &mut rng);
        let ra: Vec<usize> = a.iter().map(|&x| [7, 3, 9, 1][x]).collect();
        assert_eq!(hungarian_accuracy(&a, &b).unwrap(), hungarian_accuracy(&ra, &b).unwrap());
        assert!((nmi(&a, &b).unwrap() - nmi(&ra, &b).unwrap()).abs() < 1e-12);
        assert!((ari(&a, &b).unwrap() - ari(&ra, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        assert!((assignment_entropy(&[0, 1, 2, 0, 1, 2], 3) - 3f64.ln()).abs() < 1e-15);
        assert_eq!(assignment_entropy(&[2, 2, 2], 3), 0.0);
        let want = 0.75 * (4.0f64 / 3.0).ln() + 0.25 * 4f64.ln();
        assert!((assignment_entropy(&[0, 0, 0, 1], 2) - want).abs() < 1e-15);
    }

    #[test]
    fn identical_views_of_duplicates_align_perfectly() {
        let ds = Dataset::new("dup", Matrix::filled(6, 3, 0.7), Some(vec![0, 0, 0, 1, 1, 1])).unwrap();
        let mut rng = RngState::new(5);
        let p = Params::init(&MlpSpec::new(3, vec![8], 2, 4).unwrap(), &mut rng).unwrap();
        let s = similarity_stats(
            &p,
            Normalization::default(),
            &ds,
            &AugmentationPolicy::weak(0.0),
            0.15,
            1000,
            &mut rng,
        )
        .unwrap();
        let aug = s.zn.augmented.unwrap();
        assert!((aug.mean - 1.0).abs() < 1e-12 && aug.std < 1e-12);
        assert_eq!(s.zc.same.unwrap().count, 12);
        assert_eq!(s.zc.different.unwrap().count, 18);
    }

    #[test]
    fn single_member_class_has_no_same_pairs() {
        let ds = Dataset::new("tiny", Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap(), Some(vec![0, 1, 2])).unwrap();
        let mut rng = RngState::new(6);
        let p = Params::init(&MlpSpec::new(1, vec![4], 2, 2).unwrap(), &mut rng).unwrap();
        let s = similarity_stats(&p, Normalization::default(), &ds, &AugmentationPolicy::weak(0.1), 0.15, 100, &mut rng)
            .unwrap();
        assert!(s.zc.same.is_none());
        assert!(s.lambda_intra.is_none());
        assert!(s.zc.different.is_some());
    }

    #[test]
    fn random_linear_model_has_centred_cross_sample_similarities() {
        // A bias-free linear head on symmetric inputs is odd, so similarities
        // between independent samples have mean zero.
        let mut rng = RngState::new(7);
        let n = 2000;
        let x = Matrix::from_vec(n, 6, (0..n * 6).map(|_| rng.normal()).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let ds = Dataset::new("noise", x, Some(labels)).unwrap();
        let mut p = Params::init(&MlpSpec::new(6, vec![], 3, 5).unwrap(), &mut rng).unwrap();
        for layer in p.layers_mut() {
            layer.bias = Matrix::zeros(1, layer.bias.cols());
        }
        let s = similarity_stats(&p, Normalization::default(), &ds, &AugmentationPolicy::weak(0.1), 0.15, 100_000, &mut rng)
            .unwrap();
        for part in [s.zc, s.zn] {
            for m in [part.same.unwrap(), part.different.unwrap()] {
                assert_eq!(m.count, 100_000);
                assert!(m.mean.abs() < 3.0 * m.std / (m.count as f64).sqrt(), "{m:?}");
            }
        }
    }

    #[test]
    fn record_serializes_flat() {
        let r = MetricRecord::new("acc", 0.5).at(3).seeded(9);
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"type":"metric","name":"acc","value":0.5,"step":3,"seed":9}"#);
    }
}
