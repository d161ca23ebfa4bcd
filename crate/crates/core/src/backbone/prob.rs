use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-pixel class probabilities; each pixel's channels are non-negative and
/// sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap(Tensor);

impl ProbMap {
    /// Wrap a tensor after checking the simplex constraint within `1e-6`.
    pub fn new(t: Tensor) -> Result<Self> {
        let (n, c, h, w) = t.shape();
        let hw = h * w;
        for i in 0..n {
            let s = t.sample(i);
            for p in 0..hw {
                let mut sum = 0.0;
                for ch in 0..c {
                    let v = s[ch * hw + p];
                    if !(v >= 0.0) {
                        return Err(Error::InvalidInput(format!("negative probability {v}")));
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidInput(format!("probabilities sum to {sum}")));
                }
            }
        }
        Ok(Self(t))
    }

    pub(crate) fn new_unchecked(t: Tensor) -> Self {
        Self(t)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Per-pixel argmax class for sample `i` (lowest class wins ties).
    pub fn argmax(&self, i: usize) -> Vec<u8> {
        argmax_sample(self.0.sample(i), self.0.channels(), self.0.plane())
    }
}

pub(crate) fn argmax_sample(s: &[f64], c: usize, hw: usize) -> Vec<u8> {
    (0..hw)
        .map(|p| {
            let mut best = 0;
            for ch in 1..c {
                if s[ch * hw + p] > s[best * hw + p] {
                    best = ch;
                }
            }
            best as u8
        })
        .collect()
}

/// Channel softmax with max-subtraction.
pub fn softmax(logits: &Tensor) -> ProbMap {
    let (n, c, h, w) = logits.shape();
    let hw = h * w;
    let mut out = logits.clone();
    for i in 0..n {
        let s = out.sample_mut(i);
        for p in 0..hw {
            let mut m = f64::NEG_INFINITY;
            for ch in 0..c {
                m = m.max(s[ch * hw + p]);
            }
            let mut sum = 0.0;
            for ch in 0..c {
                let e = (s[ch * hw + p] - m).exp();
                s[ch * hw + p] = e;
                sum += e;
            }
            for ch in 0..c {
                s[ch * hw + p] /= sum;
            }
        }
    }
    ProbMap(out)
}

/// Chain rule through the channel softmax: given `dL/dp`, return `dL/dz`
/// where `p = softmax(z)`.
pub fn softmax_backward(probs: &ProbMap, dprobs: &Tensor) -> Tensor {
    let p = probs.tensor();
    let (n, c, h, w) = p.shape();
    let hw = h * w;
    let mut out = Tensor::zeros(n, c, h, w);
    for i in 0..n {
        let ps = p.sample(i);
        let gs = dprobs.sample(i);
        let os = out.sample_mut(i);
        for px in 0..hw {
            let mut dot = 0.0;
            for ch in 0..c {
                dot += ps[ch * hw + px] * gs[ch * hw + px];
            }
            for ch in 0..c {
                let k = ch * hw + px;
                os[k] = ps[k] * (gs[k] - dot);
            }
        }
    }
    out
}
