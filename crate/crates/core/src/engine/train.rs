//! Epoch loop, periodic evaluation and the history table.

use super::config::TrainConfig;
use super::step::{train_step, StepBatch, TrainState};
use crate::backbone::{Tensor, TinyZoneNet};
use crate::data::{BatchStreams, Dataset, LabelMask, Sample};
use crate::error::{Error, Result};
use crate::losses::downsample_labels;
use crate::metrics::report::fmt_opt;
use crate::metrics::{evaluate, MetricsReport};

/// Training tensors prepared once per run.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub labeled: Tensor,
    /// Ground truth at logit resolution.
    pub labels: Vec<LabelMask>,
    pub unlabeled: Tensor,
    pub test: Vec<Sample>,
}

impl TrainData {
    pub fn new(ds: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        let labeled = Tensor::from_images(ds.labeled.iter().map(|s| &s.image))?;
        let labels = ds
            .labeled
            .iter()
            .map(|s| {
                let m = s
                    .mask
                    .as_ref()
                    .ok_or_else(|| Error::Manifest(format!("labeled entry `{}` has no mask", s.patient_id)))?;
                downsample_labels(m, cfg.arch.output_stride)
            })
            .collect::<Result<Vec<_>>>()?;
        let unlabeled = Tensor::from_images(ds.unlabeled.iter().map(|s| &s.image))?;
        Ok(Self {
            labeled,
            labels,
            unlabeled,
            test: ds.test.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub iter: u64,
    pub loss_sup: f64,
    pub loss_con: f64,
    pub ramp_w: f64,
    pub mask_frac: f64,
    pub dice_pz: Option<f64>,
    pub dice_tz: Option<f64>,
    pub hd95_pz: Option<f64>,
    pub hd95_tz: Option<f64>,
}

impl HistoryRow {
    pub const CSV_HEADER: &'static str =
        "epoch,iter,loss_sup,loss_con,ramp_w,mask_frac,dice_pz,dice_tz,hd95_pz,hd95_tz";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.iter,
            self.loss_sup,
            self.loss_con,
            self.ramp_w,
            self.mask_frac,
            fmt_opt(self.dice_pz),
            fmt_opt(self.dice_tz),
            fmt_opt(self.hd95_pz),
            fmt_opt(self.hd95_tz)
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 10 {
            return Err(Error::InvalidInput(format!("history row has {} fields", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("bad history value `{s}`")))
        };
        let opt = |s: &str| -> Result<Option<f64>> { num(s).map(|v| (!v.is_nan()).then_some(v)) };
        Ok(Self {
            epoch: f[0]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad epoch `{}`", f[0])))?,
            iter: f[1]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad iter `{}`", f[1])))?,
            loss_sup: num(f[2])?,
            loss_con: num(f[3])?,
            ramp_w: num(f[4])?,
            mask_frac: num(f[5])?,
            dice_pz: opt(f[6])?,
            dice_tz: opt(f[7])?,
            hd95_pz: opt(f[8])?,
            hd95_tz: opt(f[9])?,
        })
    }
}

/// Per-epoch callback: state after the epoch, its history row, and the test
/// report when one was computed.
pub type EpochHook<'a> = dyn FnMut(&TrainState, &HistoryRow, Option<&MetricsReport>) -> Result<()> + 'a;

fn should_eval(cfg: &TrainConfig, epoch: usize) -> bool {
    epoch + 1 == cfg.epochs || (cfg.eval_every > 0 && (epoch + 1).is_multiple_of(cfg.eval_every))
}

/// Evaluate the network selected by `eval_with_teacher` on the test split.
pub fn evaluate_state(
    net: &TinyZoneNet,
    cfg: &TrainConfig,
    state: &TrainState,
    test: &[Sample],
) -> Result<MetricsReport> {
    let params = if cfg.eval_with_teacher {
        &state.teacher
    } else {
        &state.student
    };
    let (report, _) = evaluate(net, params, test, cfg.hd95_spacing)?;
    Ok(report.with_provenance(&state.config_hash, "", state.seed))
}

/// Runs epochs `state.epoch..cfg.epochs`.
pub fn train(
    net: &TinyZoneNet,
    cfg: &TrainConfig,
    data: &TrainData,
    state: &mut TrainState,
    hook: &mut EpochHook<'_>,
) -> Result<Vec<HistoryRow>> {
    cfg.validate()?;
    let streams = BatchStreams::new(
        data.labeled.batch(),
        data.unlabeled.batch(),
        cfg.batch_labeled,
        cfg.batch_unlabeled,
        cfg.seed,
        cfg.mode.uses_unlabeled(),
    )?;
    let mut history = Vec::new();
    for epoch in state.epoch..cfg.epochs {
        let plans = streams.epoch(epoch);
        let iters = plans.len() as f64;
        let (mut sup, mut con, mut frac, mut w) = (0.0, 0.0, 0.0, 0.0);
        for (k, plan) in plans.iter().enumerate() {
            let batch = StepBatch {
                labeled: data.labeled.gather(&plan.labeled),
                labels: plan.labeled.iter().map(|&i| data.labels[i].clone()).collect(),
                unlabeled: (!plan.unlabeled.is_empty()).then(|| data.unlabeled.gather(&plan.unlabeled)),
            };
            let progress = if cfg.ramp_per_iteration {
                epoch as f64 + k as f64 / iters
            } else {
                epoch as f64
            };
            let log = train_step(net, cfg, state, &batch, progress)?;
            sup += log.loss_sup;
            con += log.loss_con;
            frac += log.mask_frac;
            w = log.ramp_w;
        }
        state.epoch = epoch + 1;
        let report = if should_eval(cfg, epoch) && !data.test.is_empty() {
            Some(evaluate_state(net, cfg, state, &data.test)?)
        } else {
            None
        };
        let row = HistoryRow {
            epoch,
            iter: state.iteration,
            loss_sup: sup / iters,
            loss_con: con / iters,
            ramp_w: w,
            mask_frac: frac / iters,
            dice_pz: report.as_ref().map(|r| r.per_class.pz.dice),
            dice_tz: report.as_ref().map(|r| r.per_class.tz.dice),
            hd95_pz: report.as_ref().and_then(|r| r.per_class.pz.hd95),
            hd95_tz: report.as_ref().and_then(|r| r.per_class.tz.hd95),
        };
        hook(state, &row, report.as_ref())?;
        history.push(row);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_line_roundtrip() {
        let row = HistoryRow {
            epoch: 3,
            iter: 12,
            loss_sup: 0.5,
            loss_con: 1e-3,
            ramp_w: 0.1,
            mask_frac: 0.75,
            dice_pz: Some(0.9),
            dice_tz: None,
            hd95_pz: Some(1.5),
            hd95_tz: None,
        };
        let line = row.csv_line();
        assert_eq!(line, "3,12,0.5,0.001,0.1,0.75,0.9,nan,1.5,nan");
        assert_eq!(HistoryRow::parse(&line).unwrap(), row);
        assert_eq!(HistoryRow::CSV_HEADER.split(',').count(), 10);
    }
}
