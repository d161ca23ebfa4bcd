use crate::data::LabelMask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn check(pred: &LabelMask, gt: &LabelMask) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// One-vs-rest pixel counts for `class`.
pub fn confusion_counts(pred: &LabelMask, gt: &LabelMask, class: u8) -> Result<Confusion> {
    check(pred, gt)?;
    let mut c = Confusion::default();
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        match (p == class, g == class) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            _ => {}
        }
    }
    Ok(c)
}

/// `2TP / (2TP + FP + FN)`, or 1.0 when the class is absent from both masks.
pub fn dice_from_counts(c: Confusion) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

pub fn dice_score(pred: &LabelMask, gt: &LabelMask, class: u8) -> Result<f64> {
    confusion_counts(pred, gt, class).map(dice_from_counts)
}
