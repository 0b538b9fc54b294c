//! Staged training loop: mixed outliers (tail-like, neutral, head-like) for
//! the first part of training, neutral outliers only afterwards.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassProfile, LabeledDataset, OutlierPool};
use crate::error::{Error, Result};
use crate::losses::{rscl_loss, LossBreakdown, LossInputs, LossWeights, Temperatures};
use crate::mining::{mine, MinedPartition, ScoreForm};
use crate::model::{Checkpoint, ModelDims, ModelParams};
use crate::ndcore::optim::cosine_lr;
use crate::ndcore::{Adam, Tape, Tensor};
use crate::rng::stream;
use crate::temperature::{TemperatureSchedule, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Fraction of classes treated as tail.
    pub k: f64,
    pub tau: f64,
    pub variant: Variant,
    /// Fraction of epochs trained with mixed outliers.
    pub stage_split: f64,
    pub lr: f64,
    pub cosine: bool,
    pub seed: u64,
    pub normalize_embeddings: bool,
    pub score_form: ScoreForm,
    /// Re-mine every this many iterations; 1 mines on every iteration.
    pub mine_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch: 48,
            alpha: 0.05,
            beta: 0.05,
            gamma: 0.1,
            k: 0.6,
            tau: 0.1,
            variant: Variant::Sqrt,
            stage_split: 0.75,
            lr: 1e-2,
            cosine: true,
            seed: 0,
            normalize_embeddings: true,
            score_form: ScoreForm::HeadLogProb,
            mine_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch < 3 {
            return bad(format!("batch size must be >= 3, got {}", self.batch));
        }
        if !(0.0..=1.0).contains(&self.stage_split) {
            return bad(format!("stage split must lie in [0, 1], got {}", self.stage_split));
        }
        if self.mixed_epochs() > 0 && !self.batch.is_multiple_of(3) {
            return bad(format!("mixed-outlier stage needs a batch divisible by 3, got {}", self.batch));
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {w}"));
            }
        }
        if !(0.0..=1.0).contains(&self.k) {
            return bad(format!("k must lie in [0, 1], got {}", self.k));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be finite and >= 0, got {}", self.lr));
        }
        if self.mine_every == 0 {
            return bad("mine_every must be >= 1".into());
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    /// Number of leading epochs trained with mixed outliers, `floor(s·E)`.
    pub fn mixed_epochs(&self) -> usize {
        // the small offset keeps products like 0.29·100 from flooring to 28
        ((self.stage_split * self.epochs as f64) + 1e-9).floor() as usize
    }

    pub fn is_mixed(&self, epoch: usize) -> bool {
        epoch < self.mixed_epochs()
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.cosine {
            cosine_lr(self.lr, epoch, self.epochs)
        } else {
            self.lr
        }
    }

    /// True when the auxiliary losses are switched off.
    pub fn is_ocl_baseline(&self) -> bool {
        self.beta == 0.0 && self.gamma == 0.0
    }
}

/// Picks the training outliers (indices into the candidate draw) for one
/// iteration from a mined partition.
pub fn select_outlier_batch<R: Rng + ?Sized>(
    mixed: bool,
    partition: &MinedPartition,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut draw = |from: &[usize], n: usize| -> Result<Vec<usize>> {
        if from.len() < n {
            return Err(Error::invalid(format!("cannot draw {n} outliers from a category of {}", from.len())));
        }
        Ok(index::sample(rng, from.len(), n).into_iter().map(|i| from[i]).collect())
    };
    if mixed {
        if !batch.is_multiple_of(3) {
            return Err(Error::invalid(format!("batch {batch} is not divisible by 3")));
        }
        let third = batch / 3;
        let mut out = draw(&partition.tail_like, third)?;
        out.extend(draw(&partition.neutral, third)?);
        out.extend(draw(&partition.head_like, third)?);
        Ok(out)
    } else {
        draw(&partition.neutral, batch)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub step: usize,
    pub ocl: f64,
    pub tail: f64,
    pub head: f64,
    pub total: f64,
    pub lr: f64,
    pub mixed: bool,
}

/// Dumped when a step produces a non-finite loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub id_indices: Vec<usize>,
    pub outlier_indices: Vec<usize>,
    pub breakdown: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub params: ModelParams,
    pub optimizer: Adam,
    pub last: Option<LossBreakdown>,
}

impl TrainState {
    pub fn new(dims: ModelDims, seed: u64) -> Self {
        let params = ModelParams::init(dims, seed);
        let optimizer = Adam::new(params.tensors().iter().map(Tensor::len));
        Self {
            epoch: 0,
            params,
            optimizer,
            last: None,
        }
    }

    pub fn to_checkpoint(&self, config: &TrainConfig) -> Result<Checkpoint> {
        Ok(Checkpoint {
            params: self.params.clone(),
            optimizer: Some(self.optimizer.clone()),
            seed: config.seed,
            epoch: self.epoch,
            config: serde_json::to_value(config)?,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        let optimizer = ckpt
            .optimizer
            .unwrap_or_else(|| Adam::new(ckpt.params.tensors().iter().map(Tensor::len)));
        Self {
            epoch: ckpt.epoch,
            params: ckpt.params,
            optimizer,
            last: None,
        }
    }
}

/// Builds the full objective for one batch on a fresh tape. Returns the tape,
/// the loss node, the breakdown and the parameter nodes in layout order.
pub fn rscl_objective(
    params: &ModelParams,
    config: &TrainConfig,
    profile: &ClassProfile,
    temps: &Temperatures,
    id_x: &Tensor,
    labels: &[usize],
    out_x: &Tensor,
) -> Result<(Tape, crate::ndcore::Var, LossBreakdown, Vec<crate::ndcore::Var>)> {
    let mut tape = Tape::new();
    let pv = params.record(&mut tape);
    let x = tape.leaf(id_x.clone());
    let f = pv.encode(&mut tape, x)?;
    let logits = pv.classify(&mut tape, f)?;
    let need_embed = config.beta > 0.0 || config.gamma > 0.0;
    let z = if need_embed {
        pv.project(&mut tape, f, config.normalize_embeddings)?
    } else {
        f
    };
    let (ol, oz) = if out_x.is_empty() {
        (None, None)
    } else {
        let o = tape.leaf(out_x.clone());
        let of = pv.encode(&mut tape, o)?;
        let ol = pv.classify(&mut tape, of)?;
        let oz = if need_embed {
            Some(pv.project(&mut tape, of, config.normalize_embeddings)?)
        } else {
            None
        };
        (Some(ol), oz)
    };
    let tail_protos = if config.beta > 0.0 && profile.tail_count() > 0 {
        Some(pv.tail_prototypes(&mut tape, profile)?)
    } else {
        None
    };
    let out_proto = if config.gamma > 0.0 {
        Some(pv.outlier_prototype(&mut tape)?)
    } else {
        None
    };
    let inputs = LossInputs {
        id_logits: logits,
        id_embeddings: z,
        labels,
        outlier_logits: ol,
        outlier_embeddings: oz,
        tail_prototypes: tail_protos,
        outlier_prototype: out_proto,
        profile,
        temps,
    };
    let (loss, breakdown) = rscl_loss(&mut tape, &inputs, &config.weights())?;
    let vars = pv.vars().to_vec();
    Ok((tape, loss, breakdown, vars))
}

/// One optimizer update on the combined objective. Non-finite losses are
/// reported as [`Error::NonFiniteLoss`] carrying only the epoch/step fields
/// the caller fills in; the parameters are left untouched in that case.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    state: &mut TrainState,
    config: &TrainConfig,
    profile: &ClassProfile,
    temps: &Temperatures,
    lr: f64,
    id_x: &Tensor,
    labels: &[usize],
    out_x: &Tensor,
) -> Result<LossBreakdown> {
    // Overflowing activations surface as errors before a loss exists.
    let (tape, loss, breakdown, vars) = match rscl_objective(&state.params, config, profile, temps, id_x, labels, out_x) {
        Err(Error::NonFinite { .. } | Error::LogDomain { .. }) => (Tape::new(), None, LossBreakdown::diverged(), vec![]),
        other => {
            let (t, l, b, v) = other?;
            (t, Some(l), b, v)
        }
    };
    if !breakdown.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: state.epoch,
            step: 0,
            diagnostic: Box::new(Diagnostic {
                epoch: state.epoch,
                step: 0,
                lr,
                id_indices: vec![],
                outlier_indices: vec![],
                breakdown,
            }),
        });
    }
    let grads = tape.backward(loss.expect("finite loss has a node"))?;
    let grads: Vec<Tensor> = vars
        .iter()
        .zip(state.params.tensors())
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();
    state.optimizer.update(state.params.tensors_mut(), &grads, lr);
    state.last = Some(breakdown);
    Ok(breakdown)
}

fn check_inputs(train: &LabeledDataset, aux: &OutlierPool, profile: &ClassProfile) -> Result<()> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if aux.is_empty() {
        return Err(Error::invalid("auxiliary outlier pool is empty"));
    }
    if aux.dim() != train.dim() {
        return Err(Error::ShapeMismatch {
            op: "outlier pool",
            lhs: vec![train.dim()],
            rhs: vec![aux.dim()],
        });
    }
    if profile.classes() != train.classes() {
        return Err(Error::invalid(format!(
            "profile has {} classes, dataset {}",
            profile.classes(),
            train.classes()
        )));
    }
    Ok(())
}

/// Class profile of a training set, with the configured tail fraction.
pub fn train_profile(train: &LabeledDataset, k: f64) -> Result<ClassProfile> {
    ClassProfile::new(train.class_counts(), k)
}

/// Runs one epoch (index `state.epoch`) and advances the state.
pub fn run_epoch(
    state: &mut TrainState,
    config: &TrainConfig,
    train: &LabeledDataset,
    aux: &OutlierPool,
    profile: &ClassProfile,
    schedule: &TemperatureSchedule,
    mut on_record: impl FnMut(&LogRecord),
) -> Result<()> {
    let epoch = state.epoch;
    let mut rng = stream(config.seed, 1_000 + epoch as u64);
    let n = train.len();
    let b = config.batch;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let iters = (n / b).max(1);
    let temps = Temperatures {
        per_class: schedule.at_epoch(epoch)?,
        base: config.tau,
    };
    let lr = config.learning_rate(epoch);
    let mixed = config.is_mixed(epoch);
    let mut cached: Option<(Vec<usize>, MinedPartition)> = None;

    for step in 0..iters {
        let id_idx: Vec<usize> = (0..b).map(|j| perm[(step * b + j) % n]).collect();
        if step % config.mine_every == 0 || cached.is_none() {
            let cand: Vec<usize> = (0..3 * b).map(|_| rng.random_range(0..aux.len())).collect();
            let feats = aux.features().select_rows(&cand);
            let part = match mine(&feats, &state.params, profile, config.score_form) {
                Err(Error::NonFinite { .. } | Error::LogDomain { .. }) => {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step,
                        diagnostic: Box::new(Diagnostic {
                            epoch,
                            step,
                            lr,
                            id_indices: id_idx,
                            outlier_indices: cand,
                            breakdown: LossBreakdown::diverged(),
                        }),
                    })
                }
                other => other?,
            };
            cached = Some((cand, part));
        }
        let (cand, part) = cached.as_ref().expect("mined above");
        let picked = select_outlier_batch(mixed, part, b, &mut rng)?;
        let out_idx: Vec<usize> = picked.iter().map(|&i| cand[i]).collect();

        let id_x = train.features().select_rows(&id_idx);
        let labels: Vec<usize> = id_idx.iter().map(|&i| train.labels()[i]).collect();
        let out_x = aux.features().select_rows(&out_idx);
        let breakdown = match train_step(state, config, profile, &temps, lr, &id_x, &labels, &out_x) {
            Err(Error::NonFiniteLoss { diagnostic, .. }) => {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    diagnostic: Box::new(Diagnostic {
                        epoch,
                        step,
                        id_indices: id_idx,
                        outlier_indices: out_idx,
                        ..*diagnostic
                    }),
                })
            }
            other => other?,
        };
        on_record(&LogRecord {
            epoch,
            step,
            ocl: breakdown.ocl,
            tail: breakdown.tail,
            head: breakdown.head,
            total: breakdown.total,
            lr,
            mixed,
        });
    }
    state.epoch += 1;
    Ok(())
}

pub struct FitOutput {
    pub state: TrainState,
    pub log: Vec<LogRecord>,
    pub profile: ClassProfile,
}

/// Trains from scratch for `config.epochs` epochs.
pub fn fit(config: &TrainConfig, train: &LabeledDataset, aux: &OutlierPool) -> Result<FitOutput> {
    let dims = ModelDims::new(train.dim(), train.classes());
    fit_from(TrainState::new(dims, config.seed), config, train, aux, |_| {})
}

/// Continues training from `state` up to `config.epochs`, calling
/// `on_record` for every log line as it is produced.
pub fn fit_from(
    mut state: TrainState,
    config: &TrainConfig,
    train: &LabeledDataset,
    aux: &OutlierPool,
    mut on_record: impl FnMut(&LogRecord),
) -> Result<FitOutput> {
    config.validate()?;
    let profile = train_profile(train, config.k)?;
    check_inputs(train, aux, &profile)?;
    let schedule = TemperatureSchedule::new(config.tau, config.epochs, config.variant, profile.normalized().to_vec())?;
    let mut log = Vec::new();
    while state.epoch < config.epochs {
        run_epoch(&mut state, config, train, aux, &profile, &schedule, |r| {
            on_record(r);
            log.push(r.clone());
        })?;
    }
    Ok(FitOutput { state, log, profile })
}
