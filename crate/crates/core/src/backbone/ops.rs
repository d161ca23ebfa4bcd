//! Single-sample CHW kernels and their adjoints.

/// `c = alpha * op(a) * op(b) + beta * c`, all row-major. `op(a)` is `m×k`,
/// `op(b)` is `k×n`, `c` is `m×n`. `ta`/`tb` select the transposed view of a
/// stored row-major matrix.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: out size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above; strides describe in-bounds row-major views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 3×3, stride 1, zero-pad 1 patch matrix: rows `(ci, ky, kx)`, columns
/// `(y, x)`.
pub fn im2col3(x: &[f64], cin: usize, h: usize, w: usize, col: &mut Vec<f64>) {
    let hw = h * w;
    col.clear();
    col.resize(cin * 9 * hw, 0.0);
    for ci in 0..cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: scatter-add patch gradients back to the input.
pub fn col2im3(col: &[f64], cin: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

fn add_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (row, &b) in out.chunks_exact_mut(plane).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad(dout: &[f64], plane: usize, db: &mut [f64]) {
    for (row, g) in dout.chunks_exact(plane).zip(db.iter_mut()) {
        *g += row.iter().sum::<f64>();
    }
}

/// Scratch buffers reused across kernel calls.
#[derive(Default)]
pub struct Scratch {
    col: Vec<f64>,
    dcol: Vec<f64>,
}

pub struct ConvGrads<'a> {
    pub dx: Option<&'a mut [f64]>,
    pub dw: Option<&'a mut [f64]>,
    pub db: Option<&'a mut [f64]>,
}

/// 3×3 same-padding convolution; `weight` is `cout × (cin·9)`.
#[allow(clippy::too_many_arguments)]
pub fn conv3_forward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
    scratch: &mut Scratch,
) -> Vec<f64> {
    let hw = h * w;
    im2col3(x, cin, h, w, &mut scratch.col);
    let mut out = vec![0.0; cout * hw];
    gemm(
        cout,
        cin * 9,
        hw,
        1.0,
        weight,
        false,
        &scratch.col,
        false,
        0.0,
        &mut out,
    );
    add_bias(&mut out, bias, hw);
    out
}

/// Accumulates into the provided gradient buffers.
#[allow(clippy::too_many_arguments)]
pub fn conv3_backward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    dout: &[f64],
    grads: ConvGrads<'_>,
    scratch: &mut Scratch,
) {
    let hw = h * w;
    if let Some(db) = grads.db {
        bias_grad(dout, hw, db);
    }
    if let Some(dw) = grads.dw {
        im2col3(x, cin, h, w, &mut scratch.col);
        gemm(cout, hw, cin * 9, 1.0, dout, false, &scratch.col, true, 1.0, dw);
    }
    if let Some(dx) = grads.dx {
        scratch.dcol.clear();
        scratch.dcol.resize(cin * 9 * hw, 0.0);
        gemm(
            cin * 9,
            cout,
            hw,
            1.0,
            weight,
            true,
            dout,
            false,
            0.0,
            &mut scratch.dcol,
        );
        col2im3(&scratch.dcol, cin, h, w, dx);
    }
}

/// Pointwise (1×1) convolution; `weight` is `cout × cin`.
pub fn conv1_forward(x: &[f64], cin: usize, hw: usize, weight: &[f64], bias: &[f64], cout: usize) -> Vec<f64> {
    let mut out = vec![0.0; cout * hw];
    gemm(cout, cin, hw, 1.0, weight, false, x, false, 0.0, &mut out);
    add_bias(&mut out, bias, hw);
    out
}

pub fn conv1_backward(
    x: &[f64],
    cin: usize,
    hw: usize,
    weight: &[f64],
    cout: usize,
    dout: &[f64],
    grads: ConvGrads<'_>,
) {
    if let Some(db) = grads.db {
        bias_grad(dout, hw, db);
    }
    if let Some(dw) = grads.dw {
        gemm(cout, hw, cin, 1.0, dout, false, x, true, 1.0, dw);
    }
    if let Some(dx) = grads.dx {
        gemm(cin, cout, hw, 1.0, weight, true, dout, false, 1.0, dx);
    }
}

/// 2×2 average pooling, stride 2.
pub fn avgpool2_forward(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let i0 = base + 2 * y * w + 2 * xx;
                out.push(0.25 * (x[i0] + x[i0 + 1] + x[i0 + w] + x[i0 + w + 1]));
            }
        }
    }
    out
}

pub fn avgpool2_backward(dout: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let g = 0.25 * dout[(ch * oh + y) * ow + xx];
                let i0 = base + 2 * y * w + 2 * xx;
                for i in [i0, i0 + 1, i0 + w, i0 + w + 1] {
                    dx[i] += g;
                }
            }
        }
    }
}

/// 2×2 stride-2 transposed convolution. `weight` is `(cout·4) × cin` with
/// rows ordered `(co, dy, dx)`. Output is `cout × 2h × 2w`.
pub fn upconv2_forward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
) -> Vec<f64> {
    let hw = h * w;
    let mut tmp = vec![0.0; cout * 4 * hw];
    gemm(cout * 4, cin, hw, 1.0, weight, false, x, false, 0.0, &mut tmp);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        for k in 0..4 {
            let (dy, dx) = (k / 2, k % 2);
            let src = &tmp[(co * 4 + k) * hw..][..hw];
            for y in 0..h {
                let row = (co * oh + 2 * y + dy) * ow;
                for xx in 0..w {
                    out[row + 2 * xx + dx] = src[y * w + xx] + bias[co];
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn upconv2_backward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    dout: &[f64],
    grads: ConvGrads<'_>,
) {
    let hw = h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let mut dtmp = vec![0.0; cout * 4 * hw];
    for co in 0..cout {
        for k in 0..4 {
            let (dy, dx) = (k / 2, k % 2);
            let dst = &mut dtmp[(co * 4 + k) * hw..][..hw];
            for y in 0..h {
                let row = (co * oh + 2 * y + dy) * ow;
                for xx in 0..w {
                    dst[y * w + xx] = dout[row + 2 * xx + dx];
                }
            }
        }
    }
    if let Some(db) = grads.db {
        bias_grad(dout, oh * ow, db);
    }
    if let Some(dw) = grads.dw {
        gemm(cout * 4, hw, cin, 1.0, &dtmp, false, x, true, 1.0, dw);
    }
    if let Some(dxs) = grads.dx {
        gemm(cin, cout * 4, hw, 1.0, weight, true, &dtmp, false, 1.0, dxs);
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// SiLU, `x * sigmoid(x)`.
pub fn silu(pre: &[f64]) -> Vec<f64> {
    pre.iter().map(|&x| x * sigmoid(x)).collect()
}

/// Multiply `grad` by the SiLU derivative at the pre-activation `pre`.
pub fn silu_backward_inplace(pre: &[f64], grad: &mut [f64]) {
    for (g, &x) in grad.iter_mut().zip(pre) {
        let s = sigmoid(x);
        *g *= s * (1.0 + x * (1.0 - s));
    }
}
