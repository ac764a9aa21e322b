//! Per-sample Adam training with best-validation checkpointing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sample::DrapeSample;
use crate::error::{Error, Result};
use crate::loss::{correspondences, gated_pairs, total_term, BodyGeometry, GarmentTarget, LossBreakdown, LossWeights};
use crate::mesh::TriMesh;
use crate::metrics::e_dist;
use crate::model::{forward, Model, ModelConfig, ModelInput, ParamSource};
use crate::tensor::{save_checkpoint, AdamConfig, Graph, Tensor};

pub const BEST_CHECKPOINT: &str = "best.dnck";
pub const LAST_CHECKPOINT: &str = "last.dnck";
pub const TRAIN_LOG: &str = "train_log.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Seeds parameter initialization and the per-epoch sample order.
    pub seed: u64,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    /// Samples whose gradients are averaged per optimizer step.
    pub accumulate: usize,
    pub shuffle: bool,
    /// Optional cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            seed: 0,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            accumulate: 1,
            shuffle: true,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.accumulate == 0 {
            return Err(Error::Config("epochs and accumulate must be positive".into()));
        }
        if !(self.adam.lr >= 0.0) || !(self.adam.eps > 0.0) {
            return Err(Error::Config("adam lr must be nonnegative and eps positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        self.loss.validate()
    }
}

/// Everything about a sample that does not depend on the parameters.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub input: ModelInput,
    pub target: GarmentTarget,
    pub body: BodyGeometry,
    pub skinned: TriMesh,
}

impl PreparedSample {
    pub fn new(cfg: &ModelConfig, sample: &DrapeSample, loss: &LossWeights) -> Result<Self> {
        let expected = cfg.condition_dim;
        let got = sample.condition.as_ref().map_or(0, Vec::len);
        if expected != got {
            return Err(Error::ConditionLength { expected, got });
        }
        Ok(PreparedSample {
            input: ModelInput::new(cfg, &sample.skinned, &sample.body.vertices, sample.condition.clone())?,
            target: GarmentTarget::new(sample.drape.clone()),
            body: BodyGeometry::new(&sample.body, loss.normal_extension_frac)?,
            skinned: sample.skinned.clone(),
        })
    }

    pub fn gt(&self) -> &TriMesh {
        &self.target.gt
    }
}

pub fn prepare_all(cfg: &ModelConfig, samples: &[DrapeSample], loss: &LossWeights) -> Result<Vec<PreparedSample>> {
    samples.par_iter().map(|s| PreparedSample::new(cfg, s, loss)).collect()
}

/// Loss and parameter gradients of one sample. Correspondences and the
/// penetration gate are recomputed from this forward pass.
pub fn sample_gradients(
    model: &Model,
    sample: &PreparedSample,
    w: &LossWeights,
) -> Result<(LossBreakdown, BTreeMap<String, Tensor>)> {
    let mut g = Graph::new();
    let out = forward(&mut g, &mut ParamSource::Use(&model.params), &model.config, &sample.input)?;
    let pred = g.value(out.prediction).to_points()?;
    let corr = correspondences(&sample.body, &pred);
    let pairs = gated_pairs(&corr, &pred, &sample.target.gt.vertices, w.d_tol);
    let loss = total_term(&mut g, out.prediction, &sample.target, &sample.body, &pairs, w)?;
    let breakdown = loss.breakdown(&g);
    let grads = g.backward(loss.total)?.param_grads(&model.params);
    Ok((breakdown, grads))
}

/// Mean e_dist of the model over `samples` (evaluated in parallel, summed in order).
pub fn mean_e_dist(model: &Model, samples: &[PreparedSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let d: Vec<f64> = samples
        .par_iter()
        .map(|s| e_dist(&model.run(&s.input)?, s.gt()))
        .collect::<Result<_>>()?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LogRecord {
    Step {
        epoch: usize,
        step: usize,
        sample: usize,
        loss: LossBreakdown,
    },
    Epoch {
        epoch: usize,
        steps: usize,
        train_loss: f64,
        val_e_dist: f64,
        best: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_e_dist: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs: usize,
    /// Number of times correspondences were recomputed; one per sample visit.
    pub correspondence_updates: usize,
    pub best_epoch: usize,
    pub best_val_e_dist: f64,
    pub history: Vec<EpochRecord>,
}

pub struct TrainOutcome {
    /// Parameters with the best validation e_dist.
    pub best: Model,
    /// Parameters after the last step.
    pub last: Model,
    pub summary: TrainSummary,
}

struct Log {
    out: Option<BufWriter<File>>,
}

impl Log {
    fn new(dir: Option<&Path>) -> Result<Self> {
        let out = match dir {
            Some(d) => {
                let path = d.join(TRAIN_LOG);
                Some(BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?))
            }
            None => None,
        };
        Ok(Log { out })
    }

    fn write(&mut self, r: &LogRecord) -> Result<()> {
        if let Some(out) = &mut self.out {
            let line = serde_json::to_string(r)?;
            writeln!(out, "{line}").map_err(|e| Error::io(TRAIN_LOG, e))?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(out) = &mut self.out {
            out.flush().map_err(|e| Error::io(TRAIN_LOG, e))?;
        }
        Ok(())
    }
}

fn save(model: &Model, dir: Option<&Path>, name: &str) -> Result<()> {
    if let Some(d) = dir {
        save_checkpoint(&model.to_checkpoint()?, d.join(name))?;
    }
    Ok(())
}

fn scale_into(acc: &mut BTreeMap<String, Tensor>, grads: BTreeMap<String, Tensor>) {
    for (name, g) in grads {
        match acc.get_mut(&name) {
            Some(a) => {
                for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                    *x += y;
                }
            }
            None => {
                acc.insert(name, g);
            }
        }
    }
}

/// Trains `model` on `train`, selecting the parameters with the lowest mean
/// validation e_dist (train e_dist when `val` is empty). With `out_dir`, writes
/// the JSONL log and the best and last checkpoints there. A non-finite loss
/// aborts training; the checkpoints already on disk are kept and the
/// parameters from before the failing step are written as the last checkpoint.
pub fn train(
    mut model: Model,
    train: &[PreparedSample],
    val: &[PreparedSample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let out_dir: Option<PathBuf> = out_dir.map(Path::to_path_buf);
    let dir = out_dir.as_deref();
    let mut log = Log::new(dir)?;
    let val_set = if val.is_empty() { train } else { val };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a1);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best = model.clone();
    let mut best_val = mean_e_dist(&model, val_set)?;
    let mut best_epoch = 0;
    save(&best, dir, BEST_CHECKPOINT)?;

    let mut steps = 0;
    let mut visits = 0;
    let mut history = Vec::new();
    'epochs: for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        let mut epoch_visits = 0;
        for chunk in order.chunks(cfg.accumulate) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break 'epochs;
            }
            let mut acc = BTreeMap::new();
            for &i in chunk {
                let (loss, grads) = sample_gradients(&model, &train[i], &cfg.loss)?;
                visits += 1;
                if !loss.is_finite() || grads.values().any(|g| !g.is_finite()) {
                    log.flush()?;
                    save(&model, dir, LAST_CHECKPOINT)?;
                    log::error!("non-finite loss at step {}, sample {i}", steps + 1);
                    return Err(Error::NonFiniteLoss { step: steps + 1 });
                }
                epoch_loss += loss.total;
                epoch_visits += 1;
                log.write(&LogRecord::Step {
                    epoch,
                    step: steps + 1,
                    sample: i,
                    loss,
                })?;
                scale_into(&mut acc, grads);
            }
            if chunk.len() > 1 {
                let k = 1.0 / chunk.len() as f64;
                for g in acc.values_mut() {
                    g.data_mut().iter_mut().for_each(|x| *x *= k);
                }
            }
            model.params.adam_step(&acc, &cfg.adam)?;
            steps += 1;
        }
        let val_e = mean_e_dist(&model, val_set)?;
        let improved = val_e < best_val;
        if improved {
            best = model.clone();
            best_val = val_e;
            best_epoch = epoch;
            save(&best, dir, BEST_CHECKPOINT)?;
        }
        let train_loss = epoch_loss / epoch_visits.max(1) as f64;
        log.write(&LogRecord::Epoch {
            epoch,
            steps,
            train_loss,
            val_e_dist: val_e,
            best: improved,
        })?;
        log.flush()?;
        log::info!("epoch {epoch}: train loss {train_loss:.6e}, val e_dist {val_e:.6e}{}", if improved { " (best)" } else { "" });
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_e_dist: val_e,
        });
    }
    save(&model, dir, LAST_CHECKPOINT)?;
    log.flush()?;
    Ok(TrainOutcome {
        best,
        summary: TrainSummary {
            steps,
            epochs: history.len(),
            correspondence_updates: visits,
            best_epoch,
            best_val_e_dist: best_val,
            history,
        },
        last: model,
    })
}
