//! The invariant suite behind `clc gradcheck`: the three InfoNCE forms,
//! the closed-form negative gradient, and finite differences through the
//! whole objective.

use clc::autodiff::{check_gradients_with_fault, Fault, Tape};
use clc::data::{two_views, AugmentationPolicy};
use clc::losses::{
    analytic_negative_gradient, clc_objective, infonce, infonce_decomposed, infonce_var, similarity_decompose,
    LossConfig,
};
use clc::model::{MlpSpec, Normalization, ParamVars, Params, Representation};
use clc::sinkhorn::{solve, SinkhornConfig, SolveMode};
use clc::tensor::{Matrix, RngState};
use clc::Result;

pub const TAUS: [f64; 4] = [0.1, 0.15, 0.4, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub worst: f64,
    pub tolerance: f64,
    pub instances: usize,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

fn random(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.normal()).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn random_rep(rows: usize, k: usize, c: usize, rng: &mut RngState) -> Result<Representation> {
    Ok(Representation {
        zc: random(rows, k, rng).row_l2_normalize()?,
        zn: random(rows, c, rng).row_l2_normalize()?,
    })
}

/// Random query/key pair with 2..=9 queries, up to 8 extra negatives.
fn random_decomposition(rng: &mut RngState) -> Result<clc::losses::SimilarityDecomposition> {
    let b = 2 + rng.below(8);
    let m = b + rng.below(9);
    let (k, c) = (2 + rng.below(5), 2 + rng.below(7));
    similarity_decompose(&random_rep(b, k, c, rng)?, &random_rep(m, k, c, rng)?)
}

pub fn infonce_forms(trials: usize, rng: &mut RngState) -> Result<Check> {
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let dec = random_decomposition(rng)?;
        for tau in TAUS {
            let direct = infonce(&dec, tau)?;
            let d = infonce_decomposed(&dec, tau)?;
            worst = worst
                .max((direct - d.weighted_instance).abs())
                .max((direct - d.weighted_cluster).abs());
        }
    }
    Ok(Check {
        name: "infonce forms agree",
        worst,
        tolerance: 1e-12,
        instances: trials * TAUS.len(),
    })
}

/// Closed-form per-row gradient against the tape (the tape sees the mean,
/// so it is rescaled by the row count), plus the balance between the
/// positive pull and the summed negative pushes.
pub fn negative_gradient(trials: usize, rng: &mut RngState) -> Result<(Check, Check)> {
    let (mut worst, mut balance) = (0.0_f64, 0.0_f64);
    for trial in 0..trials {
        let dec = random_decomposition(rng)?;
        let tau = TAUS[trial % TAUS.len()];
        let analytic = analytic_negative_gradient(&dec, tau)?;
        let tape = Tape::new();
        let s = tape.param(dec.s.clone());
        let loss = infonce_var(s, &dec.positive, tau)?;
        let grads = tape.backward(loss)?;
        let auto = grads.get_or_zeros(s).scale(dec.rows() as f64)?;
        worst = worst.max(analytic.max_abs_diff(&auto));
        for (i, &p) in dec.positive.iter().enumerate() {
            let row = analytic.row(i);
            let negatives: f64 = row.iter().enumerate().filter(|&(k, _)| k != p).map(|(_, v)| v).sum();
            balance = balance.max((row[p] + negatives).abs());
        }
    }
    Ok((
        Check {
            name: "negative gradient matches tape",
            worst,
            tolerance: 1e-10,
            instances: trials,
        },
        Check {
            name: "positive gradient balances negatives",
            worst: balance,
            tolerance: 1e-12,
            instances: trials,
        },
    ))
}

/// Central differences through MLP, split normalization, Sinkhorn targets
/// (held fixed) and the combined loss. B=8, K=3, C=4, two hidden layers.
pub fn objective_fd(seed: u64, fault: Option<Fault>) -> Result<f64> {
    let mut rng = RngState::with_stream(seed, 77);
    let spec = MlpSpec::new(5, vec![6, 6], 3, 4)?;
    let params = Params::init(&spec, &mut rng)?;
    let x = random(8, 5, &mut rng);
    let (vq, vk) = two_views(&x, &AugmentationPolicy::weak(0.5), &mut rng);
    let norm = Normalization::default();
    let keys = params.forward(&vk, norm)?;
    let sk = SinkhornConfig::default();
    let q_query = solve(&params.forward(&vq, norm)?.zc, &sk, SolveMode::Fixed)?;
    let q_key = solve(&keys.zc, &sk, SolveMode::Fixed)?;
    let cfg = LossConfig::default();
    let inputs: Vec<Matrix> = params.matrices().cloned().collect();
    let report = check_gradients_with_fault(
        |tape, vars| {
            let pv = ParamVars {
                layers: vars.chunks(2).map(|c| (c[0], c[1])).collect(),
            };
            let query = pv.forward(tape.constant(vq.clone()), spec.clusters, norm)?;
            Ok(clc_objective(query, &keys, None, &q_query, &q_key, &cfg)?.0)
        },
        &inputs,
        1e-6,
        fault,
    )?;
    Ok(report.max_rel_error)
}

pub fn finite_differences(trials: usize, seed: u64, fault: Option<Fault>) -> Result<Check> {
    let mut worst = 0.0_f64;
    for t in 0..trials {
        worst = worst.max(objective_fd(seed.wrapping_add(t as u64), fault)?);
    }
    Ok(Check {
        name: "objective gradient matches finite differences",
        worst,
        tolerance: 1e-5,
        instances: trials,
    })
}

pub fn run(trials: usize, seed: u64, fault: Option<Fault>) -> Result<Vec<Check>> {
    let mut rng = RngState::new(seed);
    let forms = infonce_forms(trials, &mut rng)?;
    let (grad, balance) = negative_gradient(trials, &mut rng)?;
    let fd = finite_differences(trials, seed, fault)?;
    Ok(vec![forms, grad, balance, fd])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_suite_passes_and_fault_is_caught() {
        let checks = run(3, 1, None).unwrap();
        assert!(checks.iter().all(Check::passed), "{checks:?}");
        let broken = run(3, 1, Some(Fault::FlipNormalizeSign)).unwrap();
        assert!(!broken[3].passed());
    }
}
