//! Loss terms, uncertainty gating and the consistency ramp.
//!
//! Batch-level conventions: cross-entropy averages over every pixel of every
//! sample; soft Dice sums intersections and volumes over the whole batch per
//! class, then averages the three class losses (background included);
//! consistency MSE averages over pixel-channel entries.

use serde::{Deserialize, Serialize};

use crate::backbone::{softmax, softmax_backward, LossEvaluator, ProbMap, Tensor};
use crate::data::{LabelMask, NUM_CLASSES};
use crate::error::{Error, Result};

pub const CE_EPS: f64 = 1e-12;
pub const DICE_EPS: f64 = 1e-5;
pub const MASK_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.2,
            lambda2: 0.8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0 && self.lambda1 + self.lambda2 > 0.0) {
            return Err(Error::Config(
                "loss weights must be non-negative with a positive sum".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RampSchedule {
    pub w_max: f64,
    pub ramp_epochs: usize,
}

impl Default for RampSchedule {
    fn default() -> Self {
        Self {
            w_max: 0.1,
            ramp_epochs: 100,
        }
    }
}

impl RampSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_max >= 0.0 && self.w_max.is_finite()) || self.ramp_epochs < 1 {
            return Err(Error::Config("ramp needs w_max >= 0 and ramp_epochs >= 1".into()));
        }
        Ok(())
    }

    /// Gaussian ramp `exp(-4 (1 - tau)^2)` with `tau = min(epoch / ramp_epochs, 1)`.
    /// `epoch` may be fractional for per-iteration ramping.
    pub fn ramp(&self, epoch: f64) -> f64 {
        let tau = (epoch.max(0.0) / self.ramp_epochs as f64).min(1.0);
        let one_minus = 1.0 - tau;
        (-4.0 * one_minus * one_minus).exp()
    }
}

pub fn ramp_weight(epoch: f64, schedule: &RampSchedule) -> f64 {
    schedule.w_max * schedule.ramp(epoch)
}

fn check_labels(probs: &Tensor, labels: &[LabelMask]) -> Result<()> {
    let (n, c, h, w) = probs.shape();
    if c != NUM_CLASSES || n != labels.len() || labels.iter().any(|m| m.height() != h || m.width() != w) {
        return Err(Error::ShapeMismatch(format!(
            "probabilities ({n},{c},{h},{w}) vs {} label masks",
            labels.len()
        )));
    }
    Ok(())
}

/// Mean of `-ln(max(p_true, 1e-12))` and its gradient w.r.t. the probabilities.
pub fn cross_entropy_with_grad(probs: &ProbMap, labels: &[LabelMask]) -> Result<(f64, Tensor)> {
    let p = probs.tensor();
    check_labels(p, labels)?;
    let (n, c, h, w) = p.shape();
    let hw = h * w;
    let count = (n * hw) as f64;
    let mut grad = Tensor::zeros(n, c, h, w);
    let mut loss = 0.0;
    for (i, mask) in labels.iter().enumerate() {
        let ps = p.sample(i);
        let gs = grad.sample_mut(i);
        for (px, &y) in mask.labels().iter().enumerate() {
            let k = y as usize * hw + px;
            let v = ps[k];
            if v > CE_EPS {
                loss -= v.ln();
                gs[k] = -1.0 / (v * count);
            } else {
                loss -= CE_EPS.ln();
            }
        }
    }
    Ok((loss / count, grad))
}

pub fn cross_entropy(probs: &ProbMap, labels: &[LabelMask]) -> Result<f64> {
    cross_entropy_with_grad(probs, labels).map(|(l, _)| l)
}

/// Soft Dice loss `mean_c [1 - (2 sum p g + eps) / (sum p + sum g + eps)]`
/// and its gradient w.r.t. the probabilities.
pub fn dice_loss_with_grad(probs: &ProbMap, labels: &[LabelMask]) -> Result<(f64, Tensor)> {
    let p = probs.tensor();
    check_labels(p, labels)?;
    let (n, c, h, w) = p.shape();
    let hw = h * w;
    let mut inter = [0.0; NUM_CLASSES];
    let mut total = [0.0; NUM_CLASSES];
    for (i, mask) in labels.iter().enumerate() {
        let ps = p.sample(i);
        for ch in 0..c {
            let row = &ps[ch * hw..(ch + 1) * hw];
            total[ch] += row.iter().sum::<f64>();
        }
        for (px, &y) in mask.labels().iter().enumerate() {
            inter[y as usize] += ps[y as usize * hw + px];
            total[y as usize] += 1.0;
        }
    }
    let cf = c as f64;
    let mut loss = 0.0;
    let mut d_p = [0.0; NUM_CLASSES];
    let mut d_pg = [0.0; NUM_CLASSES];
    for ch in 0..c {
        let num = 2.0 * inter[ch] + DICE_EPS;
        let den = total[ch] + DICE_EPS;
        loss += 1.0 - num / den;
        // d/dp of -(num/den)/C: from den (every pixel) and num (true-class pixels)
        d_p[ch] = num / (den * den) / cf;
        d_pg[ch] = -2.0 / den / cf;
    }
    let mut grad = Tensor::zeros(n, c, h, w);
    for (i, mask) in labels.iter().enumerate() {
        let gs = grad.sample_mut(i);
        for ch in 0..c {
            gs[ch * hw..(ch + 1) * hw].iter_mut().for_each(|g| *g = d_p[ch]);
        }
        for (px, &y) in mask.labels().iter().enumerate() {
            gs[y as usize * hw + px] += d_pg[y as usize];
        }
    }
    Ok((loss / cf, grad))
}

pub fn dice_loss(probs: &ProbMap, labels: &[LabelMask]) -> Result<f64> {
    dice_loss_with_grad(probs, labels).map(|(l, _)| l)
}

/// Nearest-neighbour subsampling keeping the top-left pixel of each block.
pub fn downsample_labels(mask: &LabelMask, factor: usize) -> Result<LabelMask> {
    let (h, w) = (mask.height(), mask.width());
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::IndivisibleShape {
            height: h,
            width: w,
            factor,
        });
    }
    if factor == 1 {
        return Ok(mask.clone());
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            out.push(mask.get(r * factor, c * factor));
        }
    }
    LabelMask::new(oh, ow, out)
}

/// `lambda1 * CE + lambda2 * Dice` on softmaxed logits, plus the gradient
/// w.r.t. the logits.
pub fn supervised_loss_with_grad(
    logits: &Tensor,
    labels: &[LabelMask],
    weights: &LossWeights,
) -> Result<(f64, Tensor)> {
    let probs = softmax(logits);
    let (ce, mut g) = cross_entropy_with_grad(&probs, labels)?;
    let (dice, gd) = dice_loss_with_grad(&probs, labels)?;
    g.data_mut()
        .iter_mut()
        .zip(gd.data())
        .for_each(|(a, b)| *a = weights.lambda1 * *a + weights.lambda2 * b);
    Ok((
        weights.lambda1 * ce + weights.lambda2 * dice,
        softmax_backward(&probs, &g),
    ))
}

pub fn supervised_loss(logits: &Tensor, labels: &[LabelMask], weights: &LossWeights) -> Result<f64> {
    supervised_loss_with_grad(logits, labels, weights).map(|(l, _)| l)
}

/// Per-pixel predictive entropy `-sum_c p ln p` (`0 ln 0 = 0`), shape `(n,1,h,w)`.
pub fn entropy_map(probs: &ProbMap) -> Tensor {
    let p = probs.tensor();
    let (n, c, h, w) = p.shape();
    let hw = h * w;
    let mut out = Tensor::zeros(n, 1, h, w);
    for i in 0..n {
        let ps = p.sample(i);
        let os = out.sample_mut(i);
        for (px, o) in os.iter_mut().enumerate() {
            let mut e = 0.0;
            for ch in 0..c {
                let v = ps[ch * hw + px];
                if v > 0.0 {
                    e -= v * v.ln();
                }
            }
            *o = e.max(0.0);
        }
    }
    out
}

/// Entropy threshold `(0.75 + 0.25 ramp(epoch)) ln 3`.
pub fn uncertainty_threshold(epoch: f64, schedule: &RampSchedule) -> f64 {
    (0.75 + 0.25 * schedule.ramp(epoch)) * (NUM_CLASSES as f64).ln()
}

/// Slack so a uniform pixel, whose computed entropy can round a few ulps
/// under `ln 3`, still counts as uncertain at the final threshold.
pub const THRESHOLD_SLACK: f64 = 1e-12;

/// 1 where the entropy is strictly below the epoch's threshold, else 0.
pub fn uncertainty_mask(entropy: &Tensor, epoch: f64, schedule: &RampSchedule) -> Tensor {
    let th = uncertainty_threshold(epoch, schedule) - THRESHOLD_SLACK;
    let mut out = entropy.clone();
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = if *v < th { 1.0 } else { 0.0 });
    out
}

fn check_consistency(student: &Tensor, target: &Tensor, mask: Option<&Tensor>) -> Result<()> {
    if !student.same_shape(target) {
        return Err(Error::ShapeMismatch("student/target probability maps".into()));
    }
    if let Some(m) = mask {
        let (n, _, h, w) = student.shape();
        if m.shape() != (n, 1, h, w) {
            return Err(Error::ShapeMismatch("consistency mask".into()));
        }
    }
    Ok(())
}

/// Mean squared difference and its gradient w.r.t. the student map. With a
/// mask the sum runs over kept pixels and divides by `sum(mask) * C`,
/// guarded below by `1e-8`.
pub fn mse_consistency_with_grad(student: &ProbMap, target: &ProbMap, mask: Option<&Tensor>) -> Result<(f64, Tensor)> {
    let (s, t) = (student.tensor(), target.tensor());
    check_consistency(s, t, mask)?;
    let (n, c, h, w) = s.shape();
    let hw = h * w;
    let mut grad = Tensor::zeros(n, c, h, w);
    let (sum, denom) = match mask {
        None => {
            let mut sum = 0.0;
            for ((g, a), b) in grad.data_mut().iter_mut().zip(s.data()).zip(t.data()) {
                let d = a - b;
                sum += d * d;
                *g = d;
            }
            (sum, (n * c * hw) as f64)
        }
        Some(m) => {
            let mut sum = 0.0;
            for i in 0..n {
                let (ss, ts, ms) = (s.sample(i), t.sample(i), m.sample(i));
                let gs = grad.sample_mut(i);
                for ch in 0..c {
                    for px in 0..hw {
                        let k = ch * hw + px;
                        let d = ss[k] - ts[k];
                        sum += ms[px] * d * d;
                        gs[k] = ms[px] * d;
                    }
                }
            }
            // the guard only matters for an empty mask; for any kept pixel the
            // denominator is the plain entry count, so an all-ones mask
            // reproduces the unmasked value bit for bit
            let kept: f64 = m.data().iter().sum();
            (sum, (kept * c as f64).max(MASK_EPS))
        }
    };
    grad.data_mut().iter_mut().for_each(|g| *g *= 2.0 / denom);
    Ok((sum / denom, grad))
}

pub fn mse_consistency(student: &ProbMap, target: &ProbMap, mask: Option<&Tensor>) -> Result<f64> {
    mse_consistency_with_grad(student, target, mask).map(|(l, _)| l)
}

/// Supervised objective over a logit batch.
pub struct SupervisedObjective<'a> {
    pub labels: &'a [LabelMask],
    pub weights: LossWeights,
}

impl LossEvaluator for SupervisedObjective<'_> {
    fn evaluate(&self, logits: &Tensor) -> Result<(f64, Tensor)> {
        supervised_loss_with_grad(logits, self.labels, &self.weights)
    }
}

/// Consistency objective against a constant target map.
pub struct ConsistencyObjective<'a> {
    pub target: &'a ProbMap,
    pub mask: Option<&'a Tensor>,
}

impl LossEvaluator for ConsistencyObjective<'_> {
    fn evaluate(&self, logits: &Tensor) -> Result<(f64, Tensor)> {
        let probs = softmax(logits);
        let (l, g) = mse_consistency_with_grad(&probs, self.target, self.mask)?;
        Ok((l, softmax_backward(&probs, &g)))
    }
}

/// Objective over a batch made of consecutive segments, each scored by its
/// own evaluator and weight: `sum_k weight_k * loss_k(segment_k)`.
pub struct SegmentedObjective<'a> {
    pub segments: Vec<(usize, f64, &'a dyn LossEvaluator)>,
}

impl SegmentedObjective<'_> {
    /// Per-segment unweighted losses and the total, plus the logit gradient.
    pub fn evaluate_parts(&self, logits: &Tensor) -> Result<(Vec<f64>, f64, Tensor)> {
        let total_n: usize = self.segments.iter().map(|s| s.0).sum();
        if total_n != logits.batch() {
            return Err(Error::ShapeMismatch(format!(
                "segments cover {total_n} samples, batch has {}",
                logits.batch()
            )));
        }
        let mut parts = Vec::with_capacity(self.segments.len());
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(self.segments.len());
        let mut rest = logits.clone();
        for &(n, weight, eval) in &self.segments {
            let (seg, tail) = rest.split_at(n);
            rest = tail;
            let (l, mut g) = eval.evaluate(&seg)?;
            g.data_mut().iter_mut().for_each(|v| *v *= weight);
            parts.push(l);
            total += weight * l;
            grads.push(g);
        }
        let refs: Vec<&Tensor> = grads.iter().collect();
        Ok((parts, total, Tensor::concat(&refs)?))
    }
}

impl LossEvaluator for SegmentedObjective<'_> {
    fn evaluate(&self, logits: &Tensor) -> Result<(f64, Tensor)> {
        self.evaluate_parts(logits).map(|(_, t, g)| (t, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pm(n: usize, h: usize, w: usize, data: Vec<f64>) -> ProbMap {
        ProbMap::new(Tensor::from_vec(n, 3, h, w, data).unwrap()).unwrap()
    }

    fn uniform(n: usize, h: usize, w: usize) -> ProbMap {
        pm(n, h, w, vec![1.0 / 3.0; n * 3 * h * w])
    }

    fn one_hot(mask: &LabelMask) -> ProbMap {
        let hw = mask.height() * mask.width();
        let mut d = vec![0.0; 3 * hw];
        for (px, &l) in mask.labels().iter().enumerate() {
            d[l as usize * hw + px] = 1.0;
        }
        pm(1, mask.height(), mask.width(), d)
    }

    fn mask(h: usize, w: usize, l: Vec<u8>) -> LabelMask {
        LabelMask::new(h, w, l).unwrap()
    }

    #[test]
    fn ce_values() {
        let m = mask(2, 2, vec![0, 1, 2, 1]);
        assert!(cross_entropy(&one_hot(&m), std::slice::from_ref(&m)).unwrap().abs() < 1e-9);
        let u = cross_entropy(&uniform(1, 2, 2), std::slice::from_ref(&m)).unwrap();
        assert!((u - 3f64.ln()).abs() < 1e-12);
        // true-class probability 0.5 everywhere
        let mut d = vec![0.25; 12];
        for (px, &l) in m.labels().iter().enumerate() {
            d[l as usize * 4 + px] = 0.5;
        }
        let half = cross_entropy(&pm(1, 2, 2, d), &[m]).unwrap();
        assert!((half - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dice_values() {
        let m = mask(2, 2, vec![0, 1, 2, 1]);
        assert!(dice_loss(&one_hot(&m), std::slice::from_ref(&m)).unwrap() < 1e-5);

        // predict class 0 everywhere, truth is all class 1
        let truth = mask(2, 2, vec![1; 4]);
        let wrong = one_hot(&mask(2, 2, vec![0; 4]));
        let l = dice_loss(&wrong, std::slice::from_ref(&truth)).unwrap();
        let e = DICE_EPS;
        let expect = ((1.0 - e / (4.0 + e)) + (1.0 - e / (4.0 + e)) + 0.0) / 3.0;
        assert!((l - expect).abs() < 1e-12);

        // uniform probabilities on the all-class-1 mask, direct substitution
        let u = dice_loss(&uniform(1, 2, 2), &[truth]).unwrap();
        let c0 = 1.0 - e / (4.0 / 3.0 + e);
        let c1 = 1.0 - (2.0 * 4.0 / 3.0 + e) / (4.0 / 3.0 + 4.0 + e);
        assert!((u - (2.0 * c0 + c1) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn supervised_combines_terms() {
        let truth = mask(2, 2, vec![1; 4]);
        let zeros = Tensor::zeros(1, 3, 2, 2);
        let ce_only = supervised_loss(
            &zeros,
            std::slice::from_ref(&truth),
            &LossWeights {
                lambda1: 1.0,
                lambda2: 0.0,
            },
        )
        .unwrap();
        assert!((ce_only - cross_entropy(&uniform(1, 2, 2), std::slice::from_ref(&truth)).unwrap()).abs() < 1e-12);
        let both = supervised_loss(&zeros, std::slice::from_ref(&truth), &LossWeights::default()).unwrap();
        let expect = 0.2 * 3f64.ln() + 0.8 * dice_loss(&uniform(1, 2, 2), std::slice::from_ref(&truth)).unwrap();
        assert!((both - expect).abs() < 1e-12);
        // near-perfect logits
        let mut big = Tensor::zeros(1, 3, 2, 2);
        big.sample_mut(0)[4..8].iter_mut().for_each(|v| *v = 60.0);
        assert!(supervised_loss(&big, &[truth], &LossWeights::default()).unwrap() < 1e-5);
    }

    #[test]
    fn downsample_rules() {
        let m = mask(4, 4, (0..16).map(|i| ((i / 4 + i % 4) % 2) as u8).collect());
        assert_eq!(downsample_labels(&m, 1).unwrap(), m);
        let d = downsample_labels(&m, 2).unwrap();
        assert_eq!(d.labels(), &[m.get(0, 0), m.get(0, 2), m.get(2, 0), m.get(2, 2)]);
        let c = downsample_labels(&mask(4, 4, vec![2; 16]), 2).unwrap();
        assert_eq!(c.labels(), &[2; 4]);
        assert!(matches!(downsample_labels(&m, 3), Err(Error::IndivisibleShape { .. })));
    }

    #[test]
    fn entropy_values() {
        let p = pm(
            1,
            1,
            3,
            vec![1.0, 1.0 / 3.0, 0.5, 0.0, 1.0 / 3.0, 0.5, 0.0, 1.0 / 3.0, 0.0],
        );
        let e = entropy_map(&p);
        assert_eq!(e.data()[0], 0.0);
        assert!((e.data()[1] - 3f64.ln()).abs() < 1e-12);
        assert!((e.data()[2] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ramp_values() {
        let s = RampSchedule {
            w_max: 0.3,
            ramp_epochs: 100,
        };
        assert!((ramp_weight(0.0, &s) - 0.3 * (-4f64).exp()).abs() < 1e-15);
        assert!((ramp_weight(50.0, &s) - 0.3 * (-1f64).exp()).abs() < 1e-15);
        assert_eq!(ramp_weight(100.0, &s), 0.3);
        assert_eq!(ramp_weight(250.0, &s), 0.3);
    }

    #[test]
    fn mask_threshold_endpoints() {
        let s = RampSchedule::default();
        let ln3 = 3f64.ln();
        assert!((uncertainty_threshold(0.0, &s) - (0.75 + 0.25 * (-4f64).exp()) * ln3).abs() < 1e-15);
        assert!((uncertainty_threshold(0.0, &s) / ln3 - 0.754_579).abs() < 1e-6);
        assert_eq!(uncertainty_threshold(100.0, &s), ln3);
        let uni = entropy_map(&uniform(1, 1, 2));
        assert_eq!(uncertainty_mask(&uni, 100.0, &s).data(), &[0.0, 0.0]);
        let certain = entropy_map(&pm(1, 1, 1, vec![1.0, 0.0, 0.0]));
        assert_eq!(uncertainty_mask(&certain, 0.0, &s).data(), &[1.0]);
    }

    #[test]
    fn mse_values() {
        let a = pm(1, 1, 1, vec![1.0, 0.0, 0.0]);
        let b = pm(1, 1, 1, vec![0.0, 1.0, 0.0]);
        assert_eq!(mse_consistency(&a, &a, None).unwrap(), 0.0);
        assert!((mse_consistency(&a, &b, None).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let zero = Tensor::zeros(1, 1, 1, 1);
        assert_eq!(mse_consistency(&a, &b, Some(&zero)).unwrap(), 0.0);
        let ones = Tensor::from_vec(1, 1, 1, 1, vec![1.0]).unwrap();
        assert_eq!(
            mse_consistency(&a, &b, Some(&ones)).unwrap(),
            mse_consistency(&a, &b, None).unwrap()
        );
    }

    fn arb_probs(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01f64..1.0, 3 * n).prop_map(move |raw| {
            let mut out = raw.clone();
            for px in 0..n {
                let s: f64 = (0..3).map(|c| raw[c * n + px]).sum();
                for c in 0..3 {
                    out[c * n + px] = raw[c * n + px] / s;
                }
            }
            out
        })
    }

    proptest! {
        #[test]
        fn loss_invariants(
            p in arb_probs(6),
            q in arb_probs(6),
            labels in proptest::collection::vec(0u8..3, 6),
            keep in proptest::collection::vec(0u8..2, 6),
            perm_seed in any::<u64>(),
        ) {
            let a = pm(1, 2, 3, p.clone());
            let b = pm(1, 2, 3, q.clone());
            let m = mask(2, 3, labels.clone());
            let mk = Tensor::from_vec(1, 1, 2, 3, keep.iter().map(|&k| k as f64).collect()).unwrap();

            let ce = cross_entropy(&a, std::slice::from_ref(&m)).unwrap();
            prop_assert!(ce >= 0.0);
            let dl = dice_loss(&a, std::slice::from_ref(&m)).unwrap();
            prop_assert!((0.0..=1.0).contains(&dl));

            prop_assert_eq!(mse_consistency(&a, &a, Some(&mk)).unwrap(), 0.0);
            let ab = mse_consistency(&a, &b, Some(&mk)).unwrap();
            let ba = mse_consistency(&b, &a, Some(&mk)).unwrap();
            prop_assert!((ab - ba).abs() < 1e-15);

            // pixel permutation leaves every loss unchanged
            let mut order: Vec<usize> = (0..6).collect();
            let mut s = perm_seed;
            for i in (1..6).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                order.swap(i, (s >> 33) as usize % (i + 1));
            }
            let permute = |v: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; 18];
                for c in 0..3 { for (dst, &src) in order.iter().enumerate() { out[c * 6 + dst] = v[c * 6 + src]; } }
                out
            };
            let ap = pm(1, 2, 3, permute(&p));
            let bp = pm(1, 2, 3, permute(&q));
            let mp = mask(2, 3, order.iter().map(|&i| labels[i]).collect());
            let kp = Tensor::from_vec(1, 1, 2, 3, order.iter().map(|&i| keep[i] as f64).collect()).unwrap();
            prop_assert!((cross_entropy(&ap, std::slice::from_ref(&mp)).unwrap() - ce).abs() < 1e-12);
            prop_assert!((dice_loss(&ap, &[mp]).unwrap() - dl).abs() < 1e-12);
            prop_assert!((mse_consistency(&ap, &bp, Some(&kp)).unwrap() - ab).abs() < 1e-12);

            // entropy is invariant under channel permutation
            let swapped: Vec<f64> = [2usize, 0, 1].iter().flat_map(|&c| p[c * 6..(c + 1) * 6].to_vec()).collect();
            let e1 = entropy_map(&a);
            let e2 = entropy_map(&pm(1, 2, 3, swapped));
            for (x, y) in e1.data().iter().zip(e2.data()) {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!(*x >= 0.0 && *x <= 3f64.ln() + 1e-12);
            }
        }

        #[test]
        fn ramp_monotone_linear_and_mask_monotone(e1 in 0.0f64..300.0, e2 in 0.0f64..300.0, w in 0.0f64..5.0, h in 0.0f64..1.0986) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let s = RampSchedule { w_max: w, ramp_epochs: 100 };
            prop_assert!(ramp_weight(lo, &s) <= ramp_weight(hi, &s));
            let unit = RampSchedule { w_max: 1.0, ramp_epochs: 100 };
            prop_assert!((ramp_weight(lo, &s) - w * ramp_weight(lo, &unit)).abs() < 1e-12);
            let ent = Tensor::from_vec(1, 1, 1, 1, vec![h]).unwrap();
            let m_lo = uncertainty_mask(&ent, lo, &s).data()[0];
            let m_hi = uncertainty_mask(&ent, hi, &s).data()[0];
            prop_assert!(m_hi >= m_lo);
        }
    }
}
