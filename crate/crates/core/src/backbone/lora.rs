//! Low-rank adapted linear maps.
//!
//! A frozen `d_out × d_in` matrix `W` gains a trainable low-rank branch:
//! `y = W·x + (alpha / r)·B·(A·x)` with `A: r × d_in` and `B: d_out × r`.
//! Inputs are column batches (`d_in × n`, row-major).

use super::ops::gemm;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LoraShape {
    pub d_in: usize,
    pub d_out: usize,
    pub rank: usize,
}

pub fn lora_scale(alpha: f64, rank: usize) -> f64 {
    alpha / rank as f64
}

fn check(w: &[f64], a: &[f64], b: &[f64], s: LoraShape, x: &[f64], n: usize) -> Result<()> {
    if w.len() != s.d_out * s.d_in || a.len() != s.rank * s.d_in || b.len() != s.d_out * s.rank || x.len() != s.d_in * n
    {
        return Err(Error::ShapeMismatch(format!(
            "lora operands do not conform to d_in={} d_out={} r={} n={n}",
            s.d_in, s.d_out, s.rank
        )));
    }
    if s.rank == 0 {
        return Err(Error::ShapeMismatch("lora rank must be >= 1".into()));
    }
    Ok(())
}

/// Result of [`lora_forward`]: the output plus the `A·x` intermediate kept for
/// the backward pass.
#[derive(Debug, Clone)]
pub struct LoraOutput {
    pub y: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// `W·x + (alpha/r)·B·(A·x)` on an `d_in × n` column batch.
pub fn lora_forward(
    w: &[f64],
    a: &[f64],
    b: &[f64],
    alpha: f64,
    shape: LoraShape,
    x: &[f64],
    n: usize,
) -> Result<LoraOutput> {
    check(w, a, b, shape, x, n)?;
    let LoraShape { d_in, d_out, rank } = shape;
    let mut y = vec![0.0; d_out * n];
    gemm(d_out, d_in, n, 1.0, w, false, x, false, 0.0, &mut y);
    let mut hidden = vec![0.0; rank * n];
    gemm(rank, d_in, n, 1.0, a, false, x, false, 0.0, &mut hidden);
    gemm(
        d_out,
        rank,
        n,
        lora_scale(alpha, rank),
        b,
        false,
        &hidden,
        false,
        1.0,
        &mut y,
    );
    Ok(LoraOutput { y, hidden })
}

/// Convenience wrapper returning only the output.
pub fn lora_apply(
    w: &[f64],
    a: &[f64],
    b: &[f64],
    alpha: f64,
    shape: LoraShape,
    x: &[f64],
    n: usize,
) -> Result<Vec<f64>> {
    lora_forward(w, a, b, alpha, shape, x, n).map(|o| o.y)
}

/// Gradients of a LoRA map. `dw` stays `None`: the base matrix is frozen.
pub struct LoraGrads {
    pub da: Vec<f64>,
    pub db: Vec<f64>,
}

/// Backward pass. Accumulates into `dx` (`d_in × n`) and returns the adapter
/// gradients.
#[allow(clippy::too_many_arguments)]
pub fn lora_backward(
    w: &[f64],
    a: &[f64],
    b: &[f64],
    alpha: f64,
    shape: LoraShape,
    x: &[f64],
    hidden: &[f64],
    dy: &[f64],
    n: usize,
    dx: Option<&mut [f64]>,
) -> LoraGrads {
    let LoraShape { d_in, d_out, rank } = shape;
    let s = lora_scale(alpha, rank);
    let mut db = vec![0.0; d_out * rank];
    gemm(d_out, n, rank, s, dy, false, hidden, true, 0.0, &mut db);
    let mut dh = vec![0.0; rank * n];
    gemm(rank, d_out, n, s, b, true, dy, false, 0.0, &mut dh);
    let mut da = vec![0.0; rank * d_in];
    gemm(rank, n, d_in, 1.0, &dh, false, x, true, 0.0, &mut da);
    if let Some(dx) = dx {
        gemm(d_in, d_out, n, 1.0, w, true, dy, false, 1.0, dx);
        gemm(d_in, rank, n, 1.0, a, true, &dh, false, 1.0, dx);
    }
    LoraGrads { da, db }
}
