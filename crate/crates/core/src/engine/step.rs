//! One optimization step for every training mode.

use rand_distr::{Distribution, StandardNormal};

use super::config::{Mode, TrainConfig};
use super::ops::{
    adamw_step, deterministic_teacher_target, ema_update, mc_teacher_target_paired, mixup, sample_mix_coefficient,
    unlabeled_pairing, Moments,
};
use crate::backbone::{softmax, DropoutMode, LossEvaluator, ParamSet, ProbMap, Tensor, TinyZoneNet};
use crate::data::LabelMask;
use crate::error::{Error, Result};
use crate::losses::{
    ramp_weight, uncertainty_mask, ConsistencyObjective, LossWeights, SegmentedObjective, SupervisedObjective,
};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub student: ParamSet,
    pub teacher: ParamSet,
    pub moments: Moments,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed iterations; keys every per-iteration random stream.
    pub iteration: u64,
    pub seed: u64,
    pub config_hash: String,
}

impl TrainState {
    /// Fresh student from `cfg.seed` with the teacher as an exact copy.
    pub fn new(net: &TinyZoneNet, cfg: &TrainConfig) -> Self {
        let student = net.init_params(cfg.seed);
        Self::from_params(student.clone(), student, cfg)
    }

    pub fn from_params(student: ParamSet, teacher: ParamSet, cfg: &TrainConfig) -> Self {
        let moments = Moments::zeros(&student);
        Self {
            student,
            teacher,
            moments,
            epoch: 0,
            iteration: 0,
            seed: cfg.seed,
            config_hash: cfg.hash(),
        }
    }
}

/// One iteration's inputs. `labels` are at logit resolution.
#[derive(Debug, Clone)]
pub struct StepBatch {
    pub labeled: Tensor,
    pub labels: Vec<LabelMask>,
    pub unlabeled: Option<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub loss_sup: f64,
    pub loss_con: f64,
    pub ramp_w: f64,
    /// Fraction of unlabeled pixels that enter the consistency loss.
    pub mask_frac: f64,
    pub total: f64,
}

/// Everything the student objective needs, with the teacher already run.
pub struct PreparedStep {
    pub inputs: Tensor,
    pub labels: Vec<LabelMask>,
    pub weights: LossWeights,
    pub target: Option<ProbMap>,
    pub mask: Option<Tensor>,
    pub consistency_weight: f64,
    pub mask_frac: f64,
}

impl PreparedStep {
    pub fn n_labeled(&self) -> usize {
        self.labels.len()
    }

    /// Run `f` with the assembled objective `L_sup + w * L_con`.
    pub fn with_objective<R>(&self, f: impl FnOnce(&SegmentedObjective<'_>) -> R) -> R {
        let sup = SupervisedObjective {
            labels: &self.labels,
            weights: self.weights,
        };
        match &self.target {
            None => f(&SegmentedObjective {
                segments: vec![(self.labels.len(), 1.0, &sup as &dyn LossEvaluator)],
            }),
            Some(target) => {
                let con = ConsistencyObjective {
                    target,
                    mask: self.mask.as_ref(),
                };
                f(&SegmentedObjective {
                    segments: vec![
                        (self.labels.len(), 1.0, &sup as &dyn LossEvaluator),
                        (
                            target.tensor().batch(),
                            self.consistency_weight,
                            &con as &dyn LossEvaluator,
                        ),
                    ],
                })
            }
        }
    }
}

/// Stream for `purpose` at the state's current iteration.
pub fn step_rng(state: &TrainState, purpose: u64) -> rng::StreamRng {
    rng::stream(state.seed, &[purpose, state.iteration])
}

/// Teacher-side work for one step: targets, masks and the student input.
/// `progress` is the (possibly fractional) epoch driving ramp and threshold.
pub fn prepare_step(
    net: &TinyZoneNet,
    cfg: &TrainConfig,
    state: &TrainState,
    batch: &StepBatch,
    progress: f64,
) -> Result<PreparedStep> {
    let w = ramp_weight(progress, &cfg.ramp);
    let mut prepared = PreparedStep {
        inputs: batch.labeled.clone(),
        labels: batch.labels.clone(),
        weights: cfg.loss_weights,
        target: None,
        mask: None,
        consistency_weight: w,
        mask_frac: 0.0,
    };
    if cfg.mode == Mode::Supervised {
        return Ok(prepared);
    }
    let u = batch
        .unlabeled
        .as_ref()
        .ok_or_else(|| Error::EmptySplit("train_unlabeled".into()))?;
    let mut unused = step_rng(state, tag::TEACHER_MC);
    let (student_u, target, mask) = match cfg.mode {
        Mode::Mt | Mode::Uamt => {
            let mut noise = step_rng(state, tag::INPUT_NOISE);
            let mut noisy = u.clone();
            noisy.data_mut().iter_mut().for_each(|v| {
                let z: f64 = StandardNormal.sample(&mut noise);
                *v += cfg.noise_sigma_mt * z;
            });
            if cfg.mode == Mode::Mt {
                let t = softmax(&net.forward(&state.teacher, u, DropoutMode::Off, &mut unused)?);
                (noisy, t, None)
            } else {
                let mut mc = step_rng(state, tag::TEACHER_MC);
                let t = net.mc_mean_probs(&state.teacher, u, cfg.mc_passes, &mut mc)?;
                let m = uncertainty_mask(&crate::losses::entropy_map(&t), progress, &cfg.ramp);
                (noisy, t, Some(m))
            }
        }
        Mode::Ict | Mode::Mcic => {
            let perm = unlabeled_pairing(u.batch(), &mut step_rng(state, tag::PAIRING))?;
            let lambda = sample_mix_coefficient(&mut step_rng(state, tag::MIX), cfg.mix_beta)?;
            let mixed = mixup(u, &u.gather(&perm), lambda)?;
            if cfg.mode == Mode::Ict {
                let t = deterministic_teacher_target(net, &state.teacher, u, &perm, lambda, &mut unused)?;
                (mixed, t, None)
            } else {
                let mut mc = step_rng(state, tag::TEACHER_MC);
                let (t, entropy) =
                    mc_teacher_target_paired(net, &state.teacher, u, &perm, lambda, cfg.mc_passes, &mut mc)?;
                let m = uncertainty_mask(&entropy, progress, &cfg.ramp);
                (mixed, t, Some(m))
            }
        }
        Mode::Supervised => unreachable!(),
    };
    prepared.mask_frac = match &mask {
        Some(m) => m.data().iter().sum::<f64>() / m.data().len() as f64,
        None => 1.0,
    };
    prepared.inputs = Tensor::concat(&[&batch.labeled, &student_u])?;
    prepared.target = Some(target);
    prepared.mask = mask;
    Ok(prepared)
}

/// Full step: student loss and gradient, one AdamW update, one EMA update.
pub fn train_step(
    net: &TinyZoneNet,
    cfg: &TrainConfig,
    state: &mut TrainState,
    batch: &StepBatch,
    progress: f64,
) -> Result<StepLog> {
    let prepared = prepare_step(net, cfg, state, batch, progress)?;
    let mut dropout = step_rng(state, tag::STUDENT_DROPOUT);
    let (logits, cache) = net.forward_train(&state.student, &prepared.inputs, DropoutMode::Stochastic, &mut dropout)?;
    let (parts, total, dlogits) = prepared.with_objective(|obj| obj.evaluate_parts(&logits))?;
    let loss_sup = parts[0];
    let loss_con = parts.get(1).copied().unwrap_or(0.0);
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "iteration {}: loss_sup={loss_sup} loss_con={loss_con} w={}",
            state.iteration, prepared.consistency_weight
        )));
    }
    let grads = net.backward(&state.student, &cache, &dlogits)?;
    adamw_step(
        &mut state.student,
        &grads,
        &mut state.moments,
        cfg.learning_rate,
        &cfg.adamw,
    )?;
    ema_update(&mut state.teacher, &state.student, cfg.ema_alpha)?;
    state.iteration += 1;
    Ok(StepLog {
        loss_sup,
        loss_con,
        ramp_w: prepared.consistency_weight,
        mask_frac: prepared.mask_frac,
        total,
    })
}
