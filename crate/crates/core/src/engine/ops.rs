//! Teacher averaging, interpolation and the optimizer update.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::config::AdamWConfig;
use crate::backbone::{softmax, DropoutMode, ParamSet, ProbMap, Tensor, TinyZoneNet};
use crate::error::{Error, Result};
use crate::losses::entropy_map;

/// `teacher <- alpha * teacher + (1 - alpha) * student` on the trainable subset.
pub fn ema_update(teacher: &mut ParamSet, student: &ParamSet, alpha: f64) -> Result<()> {
    teacher.check_congruent(student)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("ema alpha {alpha} outside (0, 1)")));
    }
    for i in student.trainable_indices() {
        let s = &student.get(i).data;
        let t = &mut teacher.params_mut()[i].data;
        t.iter_mut()
            .zip(s)
            .for_each(|(t, &s)| *t = alpha * *t + (1.0 - alpha) * s);
    }
    Ok(())
}

/// `lambda ~ Beta(beta, beta)`.
pub fn sample_mix_coefficient(rng: &mut impl Rng, beta: f64) -> Result<f64> {
    let dist = Beta::new(beta, beta).map_err(|e| Error::InvalidInput(format!("mix_beta {beta}: {e}")))?;
    Ok(dist.sample(rng).clamp(0.0, 1.0))
}

fn convex(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    if lambda == 1.0 {
        return a.to_vec();
    }
    if lambda == 0.0 {
        return b.to_vec();
    }
    a.iter().zip(b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect()
}

/// `lambda * u1 + (1 - lambda) * u2`; the endpoints return a copy of one input.
pub fn mixup(u1: &Tensor, u2: &Tensor, lambda: f64) -> Result<Tensor> {
    if !u1.same_shape(u2) {
        return Err(Error::ShapeMismatch("mixup operands".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("mix coefficient {lambda} outside [0, 1]")));
    }
    let (n, c, h, w) = u1.shape();
    Tensor::from_vec(n, c, h, w, convex(u1.data(), u2.data(), lambda))
}

pub fn mix_probs(p1: &ProbMap, p2: &ProbMap, lambda: f64) -> Result<ProbMap> {
    let t = mixup(p1.tensor(), p2.tensor(), lambda)?;
    ProbMap::new(t)
}

/// Random cyclic permutation (Sattolo), so no element is paired with itself.
/// `u2[i] = u1[perm[i]]`.
pub fn unlabeled_pairing(n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        perm.swap(i, j);
    }
    Ok(perm)
}

/// Teacher consistency target: the `T`-pass MC-dropout means of `u1` and
/// `u2` mixed with `lambda`, plus the entropy of the mixed map.
pub fn mc_teacher_target(
    net: &TinyZoneNet,
    teacher: &ParamSet,
    u1: &Tensor,
    u2: &Tensor,
    lambda: f64,
    passes: usize,
    rng: &mut impl Rng,
) -> Result<(ProbMap, Tensor)> {
    let p1 = net.mc_mean_probs(teacher, u1, passes, rng)?;
    let p2 = net.mc_mean_probs(teacher, u2, passes, rng)?;
    let target = mix_probs(&p1, &p2, lambda)?;
    let entropy = entropy_map(&target);
    Ok((target, entropy))
}

/// [`mc_teacher_target`] for `u2 = u[perm]`: each distinct slice gets one
/// MC estimate, which is reused for both sides of the mix.
pub fn mc_teacher_target_paired(
    net: &TinyZoneNet,
    teacher: &ParamSet,
    u: &Tensor,
    perm: &[usize],
    lambda: f64,
    passes: usize,
    rng: &mut impl Rng,
) -> Result<(ProbMap, Tensor)> {
    let p = net.mc_mean_probs(teacher, u, passes, rng)?;
    let p2 = ProbMap::new(p.tensor().gather(perm))?;
    let target = mix_probs(&p, &p2, lambda)?;
    let entropy = entropy_map(&target);
    Ok((target, entropy))
}

/// Deterministic mixed teacher prediction, the plain interpolation target.
pub fn deterministic_teacher_target(
    net: &TinyZoneNet,
    teacher: &ParamSet,
    u: &Tensor,
    perm: &[usize],
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<ProbMap> {
    let p = softmax(&net.forward(teacher, u, DropoutMode::Off, rng)?);
    let p2 = ProbMap::new(p.tensor().gather(perm))?;
    mix_probs(&p, &p2, lambda)
}

/// First and second moments per trainable tensor, in trainable order.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl Moments {
    pub fn zeros(params: &ParamSet) -> Self {
        let shapes: Vec<Vec<f64>> = params
            .trainable_indices()
            .into_iter()
            .map(|i| vec![0.0; params.get(i).len()])
            .collect();
        Self {
            m: shapes.clone(),
            v: shapes,
            step: 0,
        }
    }

    pub fn reset(&mut self) {
        self.m
            .iter_mut()
            .chain(self.v.iter_mut())
            .for_each(|t| t.iter_mut().for_each(|x| *x = 0.0));
        self.step = 0;
    }
}

/// One AdamW update with decoupled weight decay on the trainable tensors.
/// Nothing is modified when a gradient entry is non-finite.
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &crate::backbone::Gradients,
    moments: &mut Moments,
    lr: f64,
    hyper: &AdamWConfig,
) -> Result<()> {
    if grads.indices != params.trainable_indices() || grads.values.len() != moments.m.len() {
        return Err(Error::ShapeMismatch(
            "gradients do not align with trainable parameters".into(),
        ));
    }
    for (k, &i) in grads.indices.iter().enumerate() {
        if grads.values[k].len() != params.get(i).len() || moments.m[k].len() != params.get(i).len() {
            return Err(Error::ShapeMismatch(format!("gradient for `{}`", params.get(i).name)));
        }
        if grads.values[k].iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(params.get(i).name.clone()));
        }
    }
    moments.step += 1;
    let t = moments.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (k, &i) in grads.indices.iter().enumerate() {
        let theta = &mut params.params_mut()[i].data;
        let (m, v) = (&mut moments.m[k], &mut moments.v[k]);
        for j in 0..theta.len() {
            let g = grads.values[k][j];
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g;
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g * g;
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            theta[j] -= lr * (mh / (vh.sqrt() + hyper.eps) + hyper.weight_decay * theta[j]);
        }
    }
    Ok(())
}
