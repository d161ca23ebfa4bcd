use std::path::Path;

use serde::{Deserialize, Serialize};

use super::distance::hd95_with_spacing;
use super::overlap::dice_score;
use crate::backbone::{softmax, DropoutMode, ParamSet, Tensor, TinyZoneNet};
use crate::data::{LabelMask, Sample};
use crate::error::{Error, Result};
use crate::rng;

pub const PZ: u8 = 1;
pub const TZ: u8 = 2;
const EVAL_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneMetrics {
    pub dice: f64,
    /// `None` when either region is empty.
    pub hd95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub patient_id: String,
    pub pz: ZoneMetrics,
    pub tz: ZoneMetrics,
}

pub fn slice_metrics(pred: &LabelMask, gt: &LabelMask, spacing: f64) -> Result<[ZoneMetrics; 2]> {
    let zone = |class| -> Result<ZoneMetrics> {
        let dice = dice_score(pred, gt, class)?;
        let hd95 = match hd95_with_spacing(pred, gt, class, spacing) {
            Ok(v) => Some(v),
            Err(Error::EmptyMask(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(ZoneMetrics { dice, hd95 })
    };
    Ok([zone(PZ)?, zone(TZ)?])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub dice: f64,
    pub hd95: Option<f64>,
    pub undefined_hd95: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub pz: ClassSummary,
    pub tz: ClassSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub dice: f64,
    pub hd95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: PerClass,
    pub mean: MeanMetrics,
    pub undefined_hd95_count: usize,
    pub sample_count: usize,
    pub hd95_scope: String,
    pub config_hash: String,
    pub checkpoint_id: String,
    pub seed: u64,
}

fn summarize(values: impl Iterator<Item = ZoneMetrics> + Clone) -> ClassSummary {
    let n = values.clone().count();
    let dice = values.clone().map(|z| z.dice).sum::<f64>() / n.max(1) as f64;
    let defined: Vec<f64> = values.clone().filter_map(|z| z.hd95).collect();
    let hd95 = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    ClassSummary {
        dice,
        hd95,
        undefined_hd95: n - defined.len(),
    }
}

impl MetricsReport {
    pub fn from_slices(slices: &[SliceMetrics]) -> Self {
        let pz = summarize(slices.iter().map(|s| s.pz));
        let tz = summarize(slices.iter().map(|s| s.tz));
        let hd: Vec<f64> = [pz.hd95, tz.hd95].into_iter().flatten().collect();
        let mean = MeanMetrics {
            dice: (pz.dice + tz.dice) / 2.0,
            hd95: (!hd.is_empty()).then(|| hd.iter().sum::<f64>() / hd.len() as f64),
        };
        let undefined = pz.undefined_hd95 + tz.undefined_hd95;
        Self {
            per_class: PerClass { pz, tz },
            mean,
            undefined_hd95_count: undefined,
            sample_count: slices.len(),
            hd95_scope: "per_slice".into(),
            config_hash: String::new(),
            checkpoint_id: String::new(),
            seed: 0,
        }
    }

    pub fn with_provenance(mut self, config_hash: &str, checkpoint_id: &str, seed: u64) -> Self {
        self.config_hash = config_hash.into();
        self.checkpoint_id = checkpoint_id.into();
        self.seed = seed;
        self
    }

    pub const CSV_HEADER: &'static str = "dice_pz,dice_tz,hd95_pz,hd95_tz";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.per_class.pz.dice,
            self.per_class.tz.dice,
            fmt_opt(self.per_class.pz.hd95),
            fmt_opt(self.per_class.tz.hd95)
        )
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(json_path, json + "\n").map_err(|e| Error::io(json_path, e))?;
        let csv = format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row());
        std::fs::write(csv_path, csv).map_err(|e| Error::io(csv_path, e))
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

/// Nearest-neighbour upsampling of a label map by an integer factor.
pub fn upsample_labels(labels: &[u8], h: usize, w: usize, factor: usize) -> Vec<u8> {
    if factor == 1 {
        return labels.to_vec();
    }
    let ow = w * factor;
    let mut out = vec![0u8; h * factor * ow];
    for r in 0..h * factor {
        for c in 0..ow {
            out[r * ow + c] = labels[(r / factor) * w + c / factor];
        }
    }
    out
}

/// Deterministic argmax predictions at input resolution.
pub fn predict_masks(net: &TinyZoneNet, params: &ParamSet, images: &Tensor) -> Result<Vec<LabelMask>> {
    let cfg = net.config();
    let stride = cfg.output_stride;
    let so = cfg.output_size();
    let mut out = Vec::with_capacity(images.batch());
    let mut unused = rng::stream(0, &[]);
    let mut start = 0;
    while start < images.batch() {
        let end = (start + EVAL_CHUNK).min(images.batch());
        let idx: Vec<usize> = (start..end).collect();
        let logits = net.forward(params, &images.gather(&idx), DropoutMode::Off, &mut unused)?;
        let probs = softmax(&logits);
        for i in 0..idx.len() {
            let labels = upsample_labels(&probs.argmax(i), so, so, stride);
            out.push(LabelMask::new(so * stride, so * stride, labels)?);
        }
        start = end;
    }
    Ok(out)
}

/// Per-slice and aggregated metrics of `params` on labeled samples.
pub fn evaluate(
    net: &TinyZoneNet,
    params: &ParamSet,
    samples: &[Sample],
    spacing: f64,
) -> Result<(MetricsReport, Vec<SliceMetrics>)> {
    if samples.is_empty() {
        return Err(Error::EmptySplit("evaluation".into()));
    }
    let images = Tensor::from_images(samples.iter().map(|s| &s.image))?;
    let preds = predict_masks(net, params, &images)?;
    let mut slices = Vec::with_capacity(samples.len());
    for (s, pred) in samples.iter().zip(&preds) {
        let gt = s
            .mask
            .as_ref()
            .ok_or_else(|| Error::EmptySplit("evaluation split has unlabeled entries".into()))?;
        let [pz, tz] = slice_metrics(pred, gt, spacing)?;
        slices.push(SliceMetrics {
            patient_id: s.patient_id.clone(),
            pz,
            tz,
        });
    }
    Ok((MetricsReport::from_slices(&slices), slices))
}
