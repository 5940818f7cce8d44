//! Entropy-regularized equipartition transport.
//!
//! Given `B x K` cluster logits `Z`, find the `K x B` matrix
//! `Q = Diag(u) · exp(Zᵀ/ε) · Diag(v)` whose rows sum to `1/K` and columns to
//! `1/B`. Scaling runs in the log domain (`log u`, `log v` are kept as
//! additive potentials), so `ε = 0.05` never overflows. Each iteration is a
//! row step followed by a column step, so the per-sample columns are exactly
//! normalized whenever a result is returned.

use log::warn;

use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    /// Iteration count in [`SolveMode::Fixed`].
    pub iterations: usize,
    /// Marginal residual target in [`SolveMode::Converged`].
    pub tolerance: f64,
    /// Safety cap in [`SolveMode::Converged`].
    pub max_iterations: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            iterations: 3,
            tolerance: 1e-9,
            max_iterations: 100_000,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            issues.push(crate::error::ConfigIssue::new("sinkhorn_epsilon", "epsilon must be positive"));
        }
        if self.iterations == 0 {
            issues.push(crate::error::ConfigIssue::new("sinkhorn_iterations", "need at least one iteration"));
        }
        if !(self.tolerance > 0.0) {
            issues.push(crate::error::ConfigIssue::new("sinkhorn_tolerance", "tolerance must be positive"));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMode {
    #[default]
    Fixed,
    Converged,
}

impl std::str::FromStr for SolveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(SolveMode::Fixed),
            "converged" => Ok(SolveMode::Converged),
            other => Err(Error::config("sinkhorn_mode", format!("unknown mode {other:?} (fixed|converged)"))),
        }
    }
}

/// Soft equipartition assignment. Always treated as a constant target: it
/// never enters a tape as anything but a constant.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    q: Matrix,
    row_residual: f64,
    col_residual: f64,
    iterations: usize,
    warnings: Vec<String>,
}

impl AssignmentMatrix {
    /// `K x B`.
    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn into_q(self) -> Matrix {
        self.q
    }

    pub fn clusters(&self) -> usize {
        self.q.rows()
    }

    pub fn samples(&self) -> usize {
        self.q.cols()
    }

    /// `(row, column)` max-abs residuals against `1/K` and `1/B`.
    pub fn residuals(&self) -> (f64, f64) {
        (self.row_residual, self.col_residual)
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Per-sample target distributions, `B x K`: columns of `Q` times `B`.
    pub fn targets(&self) -> Matrix {
        let b = self.q.cols() as f64;
        let mut t = self.q.transpose();
        t.as_mut_slice().iter_mut().for_each(|v| *v *= b);
        t
    }
}

/// Max-abs deviation of the row sums from `1/K` and column sums from `1/B`.
pub fn marginal_residuals(q: &Matrix) -> (f64, f64) {
    let (k, b) = q.shape();
    let row = q
        .row_sums()
        .iter()
        .map(|s| (s - 1.0 / k as f64).abs())
        .fold(0.0, f64::max);
    let col = q
        .col_sums()
        .iter()
        .map(|s| (s - 1.0 / b as f64).abs())
        .fold(0.0, f64::max);
    (row, col)
}

/// Solver state exposed one half-step at a time. `log Q = Zᵀ/ε + a·1ᵀ + 1·bᵀ`.
#[derive(Debug, Clone)]
pub struct SinkhornIterate {
    /// `K x B` log kernel `Zᵀ/ε`.
    kernel: Matrix,
    /// Log row scaling, length `K`.
    a: Vec<f64>,
    /// Log column scaling, length `B`.
    b: Vec<f64>,
    epsilon: f64,
}

impl SinkhornIterate {
    pub fn new(logits: &Matrix, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::config("sinkhorn_epsilon", "epsilon must be positive"));
        }
        if logits.is_empty() {
            return Err(Error::Degenerate {
                op: "sinkhorn",
                detail: "empty logits".into(),
            });
        }
        logits.ensure_finite("sinkhorn")?;
        let mut kernel = logits.transpose();
        kernel.as_mut_slice().iter_mut().for_each(|v| *v /= epsilon);
        let (k, b) = kernel.shape();
        Ok(Self {
            kernel,
            a: vec![0.0; k],
            b: vec![0.0; b],
            epsilon,
        })
    }

    fn log_entry(&self, k: usize, j: usize) -> f64 {
        self.kernel.get(k, j) + self.a[k] + self.b[j]
    }

    /// Rescales every row to sum to `1/K`.
    pub fn row_step(&mut self) {
        let (k, b) = self.kernel.shape();
        let target = -(k as f64).ln();
        let mut buf = vec![0.0; b];
        for r in 0..k {
            for (j, slot) in buf.iter_mut().enumerate() {
                *slot = self.kernel.get(r, j) + self.b[j];
            }
            self.a[r] = target - log_sum_exp(&buf);
        }
    }

    /// Rescales every column to sum to `1/B`.
    pub fn col_step(&mut self) {
        let (k, b) = self.kernel.shape();
        let target = -(b as f64).ln();
        let mut buf = vec![0.0; k];
        for j in 0..b {
            for (r, slot) in buf.iter_mut().enumerate() {
                *slot = self.kernel.get(r, j) + self.a[r];
            }
            self.b[j] = target - log_sum_exp(&buf);
        }
    }

    /// Column-normalized assignment probabilities `p_j(k)` under row
    /// potentials `a`, and the resulting row residuals `Σ_j p_j(k)/B − 1/K`.
    fn column_softmax(&self, a: &[f64]) -> (Matrix, Vec<f64>) {
        let (k, b) = self.kernel.shape();
        let mut p = Matrix::zeros(k, b);
        let mut buf = vec![0.0; k];
        for j in 0..b {
            for (r, slot) in buf.iter_mut().enumerate() {
                *slot = self.kernel.get(r, j) + a[r];
            }
            let lse = log_sum_exp(&buf);
            for (r, v) in buf.iter().enumerate() {
                p.set(r, j, (v - lse).exp());
            }
        }
        let residual = p.row_sums().iter().map(|s| s / b as f64 - 1.0 / k as f64).collect();
        (p, residual)
    }

    /// One damped Newton step on the row potentials with the column
    /// potentials eliminated (columns stay exact), followed by a column step.
    /// This is the same fixed point as the scaling iterations, reached
    /// quadratically where plain scaling crawls (nearly tied samples at
    /// small ε). Returns false, leaving the state untouched, when no step
    /// along the Newton direction shrinks the row residual.
    pub fn newton_step(&mut self) -> bool {
        let (k, b) = self.kernel.shape();
        let (p, g) = self.column_softmax(&self.a);
        let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
        let current = norm(&g);
        // Hessian Σ_j (diag p_j − p_j p_jᵀ)/B is singular along 1 (a shared
        // shift of every potential); adding 11ᵀ/K pins that direction.
        let mut h = nalgebra::DMatrix::from_element(k, k, 1.0 / k as f64);
        for j in 0..b {
            for r in 0..k {
                let pr = p.get(r, j) / b as f64;
                h[(r, r)] += pr;
                for s in 0..k {
                    h[(r, s)] -= pr * p.get(s, j);
                }
            }
        }
        let Some(step) = h.cholesky().map(|c| c.solve(&nalgebra::DVector::from_column_slice(&g))) else {
            return false;
        };
        let mut t = 1.0;
        for _ in 0..40 {
            let trial: Vec<f64> = self.a.iter().zip(step.iter()).map(|(a, d)| a - t * d).collect();
            let (_, r) = self.column_softmax(&trial);
            if norm(&r) < current && trial.iter().all(|v| v.is_finite()) {
                self.a = trial;
                self.col_step();
                return true;
            }
            t *= 0.5;
        }
        false
    }

    pub fn q(&self) -> Matrix {
        let (k, b) = self.kernel.shape();
        let mut data = Vec::with_capacity(k * b);
        for r in 0..k {
            for j in 0..b {
                data.push(self.log_entry(r, j).exp());
            }
        }
        Matrix::from_vec(k, b, data).expect("exp of finite values")
    }

    /// `Tr(QᵀZ) + ε·H(Q)` with `H(Q) = -Σ Q log Q`.
    pub fn primal_objective(&self) -> f64 {
        let (k, b) = self.kernel.shape();
        let mut total = 0.0;
        for r in 0..k {
            for j in 0..b {
                let lq = self.log_entry(r, j);
                let q = lq.exp();
                total += q * self.kernel.get(r, j) * self.epsilon - self.epsilon * q * lq;
            }
        }
        total
    }

    /// Lagrangian dual at the current potentials:
    /// `ε(Σ Q − 1 − Σ_k a_k/K − Σ_j b_j/B)`. It upper-bounds the primal over
    /// the feasible set and each half-step minimizes it exactly over one
    /// block, so it never increases; at the fixed point it equals the
    /// primal optimum.
    pub fn dual_objective(&self) -> f64 {
        let (k, b) = self.kernel.shape();
        let mass: f64 = self.q().sum();
        let a: f64 = self.a.iter().sum::<f64>() / k as f64;
        let bb: f64 = self.b.iter().sum::<f64>() / b as f64;
        self.epsilon * (mass - 1.0 - a - bb)
    }
}

/// Plain scaling iterations before converged mode switches to Newton steps.
const NEWTON_AFTER: usize = 50;

/// Runs the scaling iterations and returns `Q` with its achieved residuals.
pub fn solve(logits: &Matrix, cfg: &SinkhornConfig, mode: SolveMode) -> Result<AssignmentMatrix> {
    cfg.validate()?;
    let mut it = SinkhornIterate::new(logits, cfg.epsilon)?;
    let (b, k) = logits.shape();
    let mut warnings = Vec::new();
    if b < k {
        let msg = format!("batch of {b} is smaller than {k} clusters; exact equipartition of hard labels is impossible");
        warn!("{msg}");
        warnings.push(msg);
    }
    let mut done = 0;
    let q = match mode {
        SolveMode::Fixed => {
            for _ in 0..cfg.iterations {
                it.row_step();
                it.col_step();
            }
            done = cfg.iterations;
            it.q()
        }
        SolveMode::Converged => loop {
            if done < NEWTON_AFTER || !it.newton_step() {
                it.row_step();
                it.col_step();
            }
            done += 1;
            let q = it.q();
            let (r, c) = marginal_residuals(&q);
            if r < cfg.tolerance && c < cfg.tolerance {
                break q;
            }
            if done >= cfg.max_iterations {
                let msg = format!("no convergence after {done} iterations (row residual {r:.3e})");
                warn!("{msg}");
                warnings.push(msg);
                break q;
            }
        },
    };
    let (row_residual, col_residual) = marginal_residuals(&q);
    Ok(AssignmentMatrix {
        q,
        row_residual,
        col_residual,
        iterations: done,
        warnings,
    })
}
