//! Encoder + projection head producing the split representation
//! `(z_c, z_n)`, plus the momentum (key) encoder and the negative queue.
//!
//! The network is a plain MLP, `input -> hidden... -> K + C`, with SiLU on
//! hidden layers and a linear output. The first `K` output columns are the
//! cluster logits and the remaining `C` the instance features; each part is
//! L2-normalized per row on its own, so `‖z_c‖² + ‖z_n‖² = 2`.

use std::collections::VecDeque;
use std::io::{Read, Write};

use crate::autodiff::{silu, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::io::{read_u32, read_u64};
use crate::tensor::{read_matrix, write_matrix, Matrix, RngState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    /// `K`: width of the cluster-logit part.
    pub clusters: usize,
    /// `C`: width of the instance-feature part.
    pub instance: usize,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: Vec<usize>, clusters: usize, instance: usize) -> Result<Self> {
        let spec = Self {
            input,
            hidden,
            clusters,
            instance,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if self.input == 0 {
            issues.push(crate::error::ConfigIssue::new("input", "input width must be positive"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            issues.push(crate::error::ConfigIssue::new("hidden", "hidden widths must be positive"));
        }
        if self.clusters < 2 {
            issues.push(crate::error::ConfigIssue::new("clusters", "K must be at least 2"));
        }
        if self.instance < 1 {
            issues.push(crate::error::ConfigIssue::new("instance_dim", "C must be at least 1"));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }

    pub fn output(&self) -> usize {
        self.clusters + self.instance
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend_from_slice(&self.hidden);
        w.push(self.output());
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in x fan_out`.
    pub weight: Matrix,
    /// `1 x fan_out`.
    pub bias: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

impl Params {
    /// Uniform initialization in `±1/sqrt(fan_in)` for weights and biases.
    pub fn init(spec: &MlpSpec, rng: &mut RngState) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = |n: usize| -> Vec<f64> {
                    (0..n).map(|_| rng.uniform_range(-bound, bound)).collect()
                };
                let weight = Matrix::from_vec(fan_in, fan_out, draw(fan_in * fan_out))?;
                let bias = Matrix::from_vec(1, fan_out, draw(fan_out))?;
                Ok(Layer { weight, bias })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    /// Rebuilds parameters from `[w0, b0, w1, b1, ...]`, checking shapes.
    pub fn from_matrices(spec: &MlpSpec, matrices: Vec<Matrix>) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let expected = 2 * (widths.len() - 1);
        if matrices.len() != expected {
            return Err(Error::contract(
                "Params::from_matrices",
                format!("{} matrices for {} layers", matrices.len(), widths.len() - 1),
            ));
        }
        let mut it = matrices.into_iter();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for w in widths.windows(2) {
            let weight = it.next().expect("counted");
            let bias = it.next().expect("counted");
            if weight.shape() != (w[0], w[1]) {
                return Err(Error::Shape {
                    op: "Params::from_matrices (weight)",
                    lhs: weight.shape(),
                    rhs: (w[0], w[1]),
                });
            }
            if bias.shape() != (1, w[1]) {
                return Err(Error::Shape {
                    op: "Params::from_matrices (bias)",
                    lhs: bias.shape(),
                    rhs: (1, w[1]),
                });
            }
            layers.push(Layer { weight, bias });
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Parameter matrices in `[w0, b0, w1, b1, ...]` order.
    pub fn matrices(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn matrices_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn zeros_like(&self) -> Vec<Matrix> {
        self.matrices().map(|m| Matrix::zeros(m.rows(), m.cols())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().all(Matrix::is_finite)
    }

    /// Registers every parameter on `tape`, as trainable leaves or constants.
    pub fn on_tape<'t>(&self, tape: &'t Tape, trainable: bool) -> ParamVars<'t> {
        let leaf = |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        ParamVars {
            layers: self.layers.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect(),
        }
    }

    /// Evaluates the network without recording anything.
    pub fn forward(&self, x: &Matrix, norm: Normalization) -> Result<Representation> {
        let raw = self.raw_output(x)?;
        split_and_normalize(&raw, self.spec.clusters, norm)
    }

    /// Raw head output before the split, `B x (K + C)`.
    pub fn raw_output(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.spec.input {
            return Err(Error::Shape {
                op: "forward",
                lhs: x.shape(),
                rhs: (x.rows(), self.spec.input),
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.matmul(&layer.weight)?.add_row_vector(&layer.bias)?;
            if i < last {
                h = h.map("silu", silu)?;
            }
        }
        Ok(h)
    }
}

/// Which parts of the head output get row-normalized. Both are on in
/// normal operation; switching the cluster part off reproduces the
/// unnormalized-logit ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Normalization {
    pub cluster: bool,
    pub instance: bool,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            cluster: true,
            instance: true,
        }
    }
}

fn split_and_normalize(raw: &Matrix, k: usize, norm: Normalization) -> Result<Representation> {
    let zc = raw.slice_cols(0, k)?;
    let zn = raw.slice_cols(k, raw.cols())?;
    Ok(Representation {
        zc: if norm.cluster { zc.row_l2_normalize()? } else { zc },
        zn: if norm.instance { zn.row_l2_normalize()? } else { zn },
    })
}

/// Tape handles for every parameter, in layer order.
#[derive(Debug, Clone)]
pub struct ParamVars<'t> {
    pub layers: Vec<(Var<'t>, Var<'t>)>,
}

impl<'t> ParamVars<'t> {
    /// `[w0, b0, w1, b1, ...]`, matching [`Params::matrices`].
    pub fn vars(&self) -> Vec<Var<'t>> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Records the forward pass: hidden SiLU layers, linear head, split at
    /// column `K`, per-part normalization.
    pub fn forward(&self, x: Var<'t>, clusters: usize, norm: Normalization) -> Result<RepresentationVars<'t>> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(w)?.add_row(b)?;
            if i < last {
                h = h.silu()?;
            }
        }
        let width = h.shape().1;
        let mut zc = h.slice_cols(0, clusters)?;
        let mut zn = h.slice_cols(clusters, width)?;
        if norm.cluster {
            zc = zc.row_l2_normalize()?;
        }
        if norm.instance {
            zn = zn.row_l2_normalize()?;
        }
        Ok(RepresentationVars { zc, zn })
    }
}

/// Per-sample `(z_c, z_n)` for a batch: `B x K` and `B x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub zc: Matrix,
    pub zn: Matrix,
}

impl Representation {
    pub fn len(&self) -> usize {
        self.zc.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.zc.rows() == 0
    }

    /// `z_c ‖ z_n`, one row per sample.
    pub fn concat(&self) -> Result<Matrix> {
        self.zc.concat_cols(&self.zn)
    }

    pub fn select(&self, rows: &[usize]) -> Representation {
        Representation {
            zc: self.zc.select_rows(rows),
            zn: self.zn.select_rows(rows),
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn stack(&self, other: &Representation) -> Result<Representation> {
        Ok(Representation {
            zc: self.zc.concat_rows(&other.zc)?,
            zn: self.zn.concat_rows(&other.zn)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RepresentationVars<'t> {
    pub zc: Var<'t>,
    pub zn: Var<'t>,
}

impl RepresentationVars<'_> {
    pub fn value(&self) -> Representation {
        Representation {
            zc: self.zc.value(),
            zn: self.zn.value(),
        }
    }
}

/// Key encoder updated by exponential moving average of the query encoder.
/// It is only ever evaluated, never differentiated.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumEncoder {
    pub params: Params,
    pub momentum: f64,
}

impl MomentumEncoder {
    pub fn new(query: &Params, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::config("ema_momentum", format!("{momentum} outside [0, 1]")));
        }
        Ok(Self {
            params: query.clone(),
            momentum,
        })
    }

    /// `key <- m·key + (1 - m)·query`, elementwise.
    pub fn ema_update(&mut self, query: &Params) -> Result<()> {
        if self.params.spec() != query.spec() {
            return Err(Error::contract("ema_update", "key and query specs differ"));
        }
        let m = self.momentum;
        for (k, q) in self.params.matrices_mut().zip(query.matrices()) {
            if k.shape() != q.shape() {
                return Err(Error::Shape {
                    op: "ema_update",
                    lhs: k.shape(),
                    rhs: q.shape(),
                });
            }
            for (kv, &qv) in k.as_mut_slice().iter_mut().zip(q.as_slice()) {
                *kv = m * *kv + (1.0 - m) * qv;
            }
        }
        Ok(())
    }
}

/// FIFO ring buffer of past key representations used as extra negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQueue {
    capacity: usize,
    clusters: usize,
    instance: usize,
    entries: VecDeque<(Vec<f64>, Vec<f64>)>,
}

impl NegativeQueue {
    pub fn new(capacity: usize, clusters: usize, instance: usize) -> Self {
        Self {
            capacity,
            clusters,
            instance,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends the batch's keys, evicting the oldest entries past capacity.
    pub fn push(&mut self, keys: &Representation) -> Result<()> {
        if keys.zc.cols() != self.clusters || keys.zn.cols() != self.instance {
            return Err(Error::Shape {
                op: "NegativeQueue::push",
                lhs: (keys.zc.cols(), keys.zn.cols()),
                rhs: (self.clusters, self.instance),
            });
        }
        if self.capacity == 0 {
            return Ok(());
        }
        for r in 0..keys.len() {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back((keys.zc.row(r).to_vec(), keys.zn.row(r).to_vec()));
        }
        Ok(())
    }

    /// Queue contents, oldest first; `None` when empty.
    pub fn negatives(&self) -> Option<Representation> {
        if self.entries.is_empty() {
            return None;
        }
        let zc: Vec<f64> = self.entries.iter().flat_map(|(c, _)| c.iter().copied()).collect();
        let zn: Vec<f64> = self.entries.iter().flat_map(|(_, n)| n.iter().copied()).collect();
        Some(Representation {
            zc: Matrix::from_vec(self.entries.len(), self.clusters, zc).ok()?,
            zn: Matrix::from_vec(self.entries.len(), self.instance, zn).ok()?,
        })
    }

    /// Keys to contrast a batch against: the batch's own keys (positives on
    /// the diagonal) followed by every queued negative.
    pub fn keys_with_negatives(&self, batch_keys: &Representation) -> Result<Representation> {
        match self.negatives() {
            Some(q) => batch_keys.stack(&q),
            None => Ok(batch_keys.clone()),
        }
    }

    pub(crate) fn restore(capacity: usize, clusters: usize, instance: usize, contents: &Matrix) -> Result<Self> {
        if contents.rows() > 0 && contents.cols() != clusters + instance {
            return Err(Error::Format("queue width does not match the model".into()));
        }
        let mut q = Self::new(capacity, clusters, instance);
        for r in 0..contents.rows() {
            let row = contents.row(r);
            q.entries.push_back((row[..clusters].to_vec(), row[clusters..].to_vec()));
        }
        Ok(q)
    }

    pub(crate) fn contents(&self) -> Matrix {
        match self.negatives() {
            Some(rep) => rep.concat().expect("same row count"),
            None => Matrix::zeros(0, self.clusters + self.instance),
        }
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes `"CLCK"`, the version, the architecture (input, hidden count, hidden
/// widths, K, C as `u64`) and every parameter matrix in `CLCM` format.
pub fn write_params<W: Write>(w: &mut W, params: &Params) -> Result<()> {
    let spec = params.spec();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(spec.input as u64).to_le_bytes())?;
    w.write_all(&(spec.hidden.len() as u64).to_le_bytes())?;
    for &h in &spec.hidden {
        w.write_all(&(h as u64).to_le_bytes())?;
    }
    w.write_all(&(spec.clusters as u64).to_le_bytes())?;
    w.write_all(&(spec.instance as u64).to_le_bytes())?;
    for m in params.matrices() {
        write_matrix(w, m)?;
    }
    Ok(())
}

pub fn read_params<R: Read>(r: &mut R) -> Result<Params> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let input = read_u64(r)? as usize;
    let n_hidden = read_u64(r)? as usize;
    if n_hidden > 64 {
        return Err(Error::Format(format!("implausible hidden layer count {n_hidden}")));
    }
    let hidden = (0..n_hidden)
        .map(|_| read_u64(r).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let clusters = read_u64(r)? as usize;
    let instance = read_u64(r)? as usize;
    let spec = MlpSpec::new(input, hidden, clusters, instance)?;
    let count = 2 * (spec.widths().len() - 1);
    let matrices = (0..count).map(|_| read_matrix(r)).collect::<Result<Vec<_>>>()?;
    Params::from_matrices(&spec, matrices)
}
