//! Boundary extraction and the 95th-percentile Hausdorff distance.
//!
//! Boundaries use 4-connectivity: a region pixel is on the boundary when one
//! of its 4 neighbours lies outside the region or outside the image. Directed
//! distances are computed with an exact squared Euclidean distance transform;
//! [`hd95_brute_force`] is the pairwise reference.

use crate::data::LabelMask;
use crate::error::{Error, Result};

/// Region pixels with a 4-neighbour outside the region or on the image border.
pub fn boundary_pixels(region: &[bool], height: usize, width: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in 0..height {
        for c in 0..width {
            if !region[r * width + c] {
                continue;
            }
            let edge = r == 0
                || c == 0
                || r + 1 == height
                || c + 1 == width
                || !region[(r - 1) * width + c]
                || !region[(r + 1) * width + c]
                || !region[r * width + c - 1]
                || !region[r * width + c + 1];
            if edge {
                out.push((r, c));
            }
        }
    }
    out
}

pub fn class_boundary(mask: &LabelMask, class: u8) -> Vec<(usize, usize)> {
    boundary_pixels(&mask.class_indicator(class), mask.height(), mask.width())
}

/// Linear-interpolation percentile at rank `0.95 (n - 1)`.
pub fn percentile95(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let q = 0.95 * (v.len() - 1) as f64;
    let lo = q.floor() as usize;
    let hi = q.ceil() as usize;
    Ok(v[lo] + (q - lo as f64) * (v[hi] - v[lo]))
}

/// One-dimensional lower envelope of parabolas over the finite entries of `f`.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let pf = p as f64;
                    let s = ((fq + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while k + 1 < v.len() && z[k + 1] < qf {
            k += 1;
        }
        let d = qf - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared distance from every pixel to the nearest site (infinite when
/// there are no sites).
pub fn squared_distance_transform(sites: &[bool], height: usize, width: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    let mut col = vec![0.0; height];
    let mut tmp = vec![0.0; height.max(width)];
    for c in 0..width {
        for r in 0..height {
            col[r] = grid[r * width + c];
        }
        edt_1d(&col, &mut tmp[..height], &mut v, &mut z);
        for r in 0..height {
            grid[r * width + c] = tmp[r];
        }
    }
    for r in 0..height {
        let row = grid[r * width..(r + 1) * width].to_vec();
        edt_1d(&row, &mut grid[r * width..(r + 1) * width], &mut v, &mut z);
    }
    grid
}

fn region_boundaries(
    pred: &LabelMask,
    gt: &LabelMask,
    class: u8,
) -> Result<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch("hd95 masks differ in shape".into()));
    }
    let bp = class_boundary(pred, class);
    let bg = class_boundary(gt, class);
    if bp.is_empty() || bg.is_empty() {
        return Err(Error::EmptyMask(class));
    }
    Ok((bp, bg))
}

fn directed(from: &[(usize, usize)], to: &[(usize, usize)], height: usize, width: usize) -> Vec<f64> {
    let mut sites = vec![false; height * width];
    for &(r, c) in to {
        sites[r * width + c] = true;
    }
    let dt = squared_distance_transform(&sites, height, width);
    from.iter().map(|&(r, c)| dt[r * width + c].sqrt()).collect()
}

/// Symmetric HD95 in pixel units times `spacing`.
pub fn hd95_with_spacing(pred: &LabelMask, gt: &LabelMask, class: u8, spacing: f64) -> Result<f64> {
    let (bp, bg) = region_boundaries(pred, gt, class)?;
    let (h, w) = (pred.height(), pred.width());
    let a = percentile95(&directed(&bp, &bg, h, w))?;
    let b = percentile95(&directed(&bg, &bp, h, w))?;
    Ok(a.max(b) * spacing)
}

pub fn hd95(pred: &LabelMask, gt: &LabelMask, class: u8) -> Result<f64> {
    hd95_with_spacing(pred, gt, class, 1.0)
}

fn directed_brute(from: &[(usize, usize)], to: &[(usize, usize)]) -> Vec<f64> {
    from.iter()
        .map(|&(r, c)| {
            to.iter()
                .map(|&(r2, c2)| {
                    let dr = r as f64 - r2 as f64;
                    let dc = c as f64 - c2 as f64;
                    (dr * dr + dc * dc).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Exhaustive pairwise HD95, the reference for [`hd95`].
pub fn hd95_brute_force(pred: &LabelMask, gt: &LabelMask, class: u8) -> Result<f64> {
    let (bp, bg) = region_boundaries(pred, gt, class)?;
    let a = percentile95(&directed_brute(&bp, &bg))?;
    let b = percentile95(&directed_brute(&bg, &bp))?;
    Ok(a.max(b))
}
