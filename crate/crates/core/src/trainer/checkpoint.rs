//! Checkpoints: the parameter block, then an optional training-state block
//! (epoch, step, SGD velocities, key encoder, queue, config) so a run can be
//! resumed at an epoch boundary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{read_params, write_params, MlpSpec, MomentumEncoder, NegativeQueue, Params};
use crate::tensor::io::read_u64;
use crate::tensor::{read_matrix, write_matrix, Matrix};

use super::config::TrainConfig;
use super::optim::OptimizerState;
use super::Trainer;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub epoch: u64,
    pub step: u64,
    pub velocity: Vec<Matrix>,
    pub key: Option<Params>,
    pub queue: Option<(usize, Matrix)>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Params,
    pub state: Option<TrainingState>,
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn write_checkpoint<W: Write>(w: &mut W, ck: &Checkpoint) -> Result<()> {
    write_params(w, &ck.params)?;
    let Some(s) = &ck.state else {
        w.write_all(&[0])?;
        return Ok(());
    };
    w.write_all(&[1])?;
    write_u64(w, s.epoch)?;
    write_u64(w, s.step)?;
    for v in &s.velocity {
        write_matrix(w, v)?;
    }
    match &s.key {
        Some(k) => {
            w.write_all(&[1])?;
            write_params(w, k)?;
        }
        None => w.write_all(&[0])?,
    }
    match &s.queue {
        Some((cap, m)) => {
            w.write_all(&[1])?;
            write_u64(w, *cap as u64)?;
            write_matrix(w, m)?;
        }
        None => w.write_all(&[0])?,
    }
    let text = s.config.to_text();
    write_u64(w, text.len() as u64)?;
    w.write_all(text.as_bytes())?;
    Ok(())
}

fn read_checkpoint<R: Read>(r: &mut R, origin: &Path) -> Result<Checkpoint> {
    let params = read_params(r)?;
    let state = match read_u8(r)? {
        0 => None,
        1 => {
            let epoch = read_u64(r)?;
            let step = read_u64(r)?;
            let velocity = params
                .matrices()
                .map(|p| {
                    let v = read_matrix(r)?;
                    if v.shape() != p.shape() {
                        return Err(Error::Format("velocity shape does not match the model".into()));
                    }
                    Ok(v)
                })
                .collect::<Result<Vec<_>>>()?;
            let key = match read_u8(r)? {
                0 => None,
                _ => {
                    let k = read_params(r)?;
                    if k.spec() != params.spec() {
                        return Err(Error::Format("key encoder does not match the model".into()));
                    }
                    Some(k)
                }
            };
            let queue = match read_u8(r)? {
                0 => None,
                _ => Some((read_u64(r)? as usize, read_matrix(r)?)),
            };
            let len = read_u64(r)?;
            if len > 1 << 20 {
                return Err(Error::Format(format!("implausible config length {len}")));
            }
            let mut buf = vec![0u8; len as usize];
            r.read_exact(&mut buf)?;
            let text = String::from_utf8(buf).map_err(|_| Error::Format("config block is not UTF-8".into()))?;
            let config = TrainConfig::parse(&text, origin)?;
            Some(TrainingState {
                epoch,
                step,
                velocity,
                key,
                queue,
                config,
            })
        }
        flag => return Err(Error::Format(format!("bad state flag {flag}"))),
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint { params, state })
}

/// Writes the model and its full training state.
pub fn save_checkpoint(path: &Path, trainer: &Trainer) -> Result<()> {
    let ck = Checkpoint::from_trainer(trainer);
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, &ck)?;
    w.flush()?;
    Ok(())
}

/// Writes a model-only checkpoint.
pub fn save_params(path: &Path, params: &Params) -> Result<()> {
    let ck = Checkpoint {
        params: params.clone(),
        state: None,
    };
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, &ck)?;
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint; with `expected`, the stored architecture must match.
pub fn load_checkpoint(path: &Path, expected: Option<&MlpSpec>) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let ck = read_checkpoint(&mut r, path)?;
    if let Some(spec) = expected {
        if ck.params.spec() != spec {
            return Err(Error::Format(format!(
                "checkpoint architecture {:?} does not match the configured {:?}",
                ck.params.spec(),
                spec
            )));
        }
    }
    Ok(ck)
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Self {
            params: t.params.clone(),
            state: Some(TrainingState {
                epoch: t.epoch as u64,
                step: t.opt.step,
                velocity: t.opt.velocity.clone(),
                key: t.key.as_ref().map(|k| k.params.clone()),
                queue: t.queue.as_ref().map(|q| (q.capacity(), q.contents())),
                config: t.cfg.clone(),
            }),
        }
    }

    /// Rebuilds a trainer positioned at the stored epoch boundary.
    pub fn into_trainer(self) -> Result<Trainer> {
        let Some(s) = self.state else {
            return Err(Error::Format("checkpoint holds no training state".into()));
        };
        s.config.validate()?;
        if &s.config.spec(self.params.spec().input)? != self.params.spec() {
            return Err(Error::Format("stored config does not match the stored model".into()));
        }
        let spec = self.params.spec().clone();
        let key = match s.key {
            Some(p) => Some(MomentumEncoder {
                params: p,
                momentum: s.config.ema_momentum,
            }),
            None => None,
        };
        let queue = match s.queue {
            Some((cap, m)) => Some(NegativeQueue::restore(cap, spec.clusters, spec.instance, &m)?),
            None => None,
        };
        Ok(Trainer {
            cfg: s.config,
            params: self.params,
            opt: OptimizerState {
                velocity: s.velocity,
                step: s.step,
            },
            key,
            queue,
            epoch: s.epoch as usize,
            best: None,
        })
    }
}
