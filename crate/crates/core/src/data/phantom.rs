//! Synthetic zone phantoms: an outer elliptical ring (label 1) around an
//! inner ellipse (label 2) on a noisy background, with per-slice affine jitter.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::codec::{write_image, write_mask};
use super::image::{ImageSlice, LabelMask};
use super::manifest::{DatasetManifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Ellipse geometry in the slice's own frame, as fractions of the image side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZoneGeometry {
    /// Outer (PZ) ellipse semi-axes `[x, y]`.
    pub outer_radii: [f64; 2],
    /// Inner (TZ) ellipse semi-axes `[x, y]`.
    pub inner_radii: [f64; 2],
    /// Inner ellipse center offset `[x, y]` relative to the outer center.
    pub inner_offset: [f64; 2],
}

impl Default for ZoneGeometry {
    fn default() -> Self {
        Self {
            outer_radii: [0.30, 0.22],
            inner_radii: [0.18, 0.12],
            inner_offset: [0.0, -0.04],
        }
    }
}

/// Per-slice perturbation bounds; each value is drawn uniformly from
/// `[-bound, bound]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JitterRanges {
    /// Center shift, fraction of the image side.
    pub shift: f64,
    /// Rotation in radians.
    pub rotation: f64,
    /// Relative isotropic scale change.
    pub scale: f64,
    /// Relative change of the y/x aspect ratio.
    pub aspect: f64,
    /// Relative change of both zone intensities.
    pub intensity: f64,
}

impl Default for JitterRanges {
    fn default() -> Self {
        Self {
            shift: 0.08,
            rotation: 0.35,
            scale: 0.15,
            aspect: 0.10,
            intensity: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub num_labeled: usize,
    pub num_unlabeled: usize,
    pub num_test: usize,
    pub image_size: usize,
    pub noise_sigma: f64,
    pub background_intensity: f64,
    /// Mean intensity of the PZ-like ring.
    pub pz_intensity: f64,
    /// Mean intensity of the TZ-like core.
    pub tz_intensity: f64,
    /// Peak amplitude of a random linear intensity ramp across the slice.
    pub bias_field: f64,
    pub geometry: ZoneGeometry,
    pub jitter: JitterRanges,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            num_labeled: 20,
            num_unlabeled: 80,
            num_test: 20,
            image_size: 64,
            noise_sigma: 0.35,
            background_intensity: 0.0,
            pz_intensity: 1.0,
            tz_intensity: 2.0,
            bias_field: 0.0,
            geometry: ZoneGeometry::default(),
            jitter: JitterRanges::default(),
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if ![32, 64, 128, 256].contains(&self.image_size) {
            return Err(Error::Config(format!(
                "phantom image_size {} not in {{32, 64, 128, 256}}",
                self.image_size
            )));
        }
        let finite = [
            self.noise_sigma,
            self.background_intensity,
            self.pz_intensity,
            self.tz_intensity,
            self.bias_field,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("phantom intensities must be finite".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        let j = &self.jitter;
        if [j.shift, j.rotation, j.scale, j.aspect, j.intensity]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Config("jitter bounds must be finite and >= 0".into()));
        }
        if j.scale >= 1.0 || j.aspect >= 1.0 || j.intensity >= 1.0 {
            return Err(Error::Config("scale/aspect/intensity jitter must be < 1".into()));
        }
        let g = &self.geometry;
        if g.outer_radii.iter().chain(&g.inner_radii).any(|&r| !(r > 0.0)) {
            return Err(Error::Config("ellipse radii must be positive".into()));
        }
        if !inner_inside_outer(g) {
            return Err(Error::Config(
                "inner ellipse must lie strictly inside the outer ellipse".into(),
            ));
        }
        // Largest possible extent must stay within the frame.
        let reach = g.outer_radii[0].max(g.outer_radii[1]) * (1.0 + j.scale) * (1.0 + j.aspect) + j.shift;
        if reach >= 0.5 {
            return Err(Error::Config("jittered zones may leave the frame".into()));
        }
        Ok(())
    }
}

/// Dense boundary sampling of the inner ellipse against the outer one.
fn inner_inside_outer(g: &ZoneGeometry) -> bool {
    let [ox, oy] = g.outer_radii;
    let [ix, iy] = g.inner_radii;
    let [cx, cy] = g.inner_offset;
    (0..4096).all(|k| {
        let t = k as f64 / 4096.0 * std::f64::consts::TAU;
        let x = cx + ix * t.cos();
        let y = cy + iy * t.sin();
        (x / ox).powi(2) + (y / oy).powi(2) < 1.0
    })
}

#[derive(Debug, Clone, Copy)]
struct SliceParams {
    shift: [f64; 2],
    rotation: f64,
    scale: f64,
    aspect: f64,
    intensity_gain: f64,
    bias_dir: f64,
}

fn uniform(rng: &mut impl Rng, bound: f64) -> f64 {
    if bound == 0.0 {
        0.0
    } else {
        rng.random_range(-bound..=bound)
    }
}

/// Render one phantom slice. Pure function of `(cfg, split, index)`.
pub fn render_slice(cfg: &PhantomConfig, split: Split, index: usize) -> (ImageSlice, LabelMask) {
    let split_tag = match split {
        Split::TrainLabeled => 1,
        Split::TrainUnlabeled => 2,
        Split::Test => 3,
    };
    let mut rng = rng::stream(cfg.seed, &[tag::PHANTOM, split_tag, index as u64]);
    let j = &cfg.jitter;
    let p = SliceParams {
        shift: [uniform(&mut rng, j.shift), uniform(&mut rng, j.shift)],
        rotation: uniform(&mut rng, j.rotation),
        scale: 1.0 + uniform(&mut rng, j.scale),
        aspect: 1.0 + uniform(&mut rng, j.aspect),
        intensity_gain: 1.0 + uniform(&mut rng, j.intensity),
        bias_dir: rng.random_range(0.0..std::f64::consts::TAU),
    };

    let n = cfg.image_size;
    let size = n as f64;
    let g = &cfg.geometry;
    let center = (size - 1.0) / 2.0;
    let (sin, cos) = p.rotation.sin_cos();
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("sigma >= 0");
    let pz = cfg.pz_intensity * p.intensity_gain;
    let tz = cfg.tz_intensity * p.intensity_gain;

    let mut labels = Vec::with_capacity(n * n);
    let mut values = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            // Pixel in normalized units relative to the jittered center,
            // rotated back into the ellipse frame.
            let dx = (c as f64 - center) / size - p.shift[0];
            let dy = (r as f64 - center) / size - p.shift[1];
            let u = (cos * dx + sin * dy) / p.scale;
            let v = (-sin * dx + cos * dy) / (p.scale * p.aspect);
            let outer = (u / g.outer_radii[0]).powi(2) + (v / g.outer_radii[1]).powi(2);
            let inner = ((u - g.inner_offset[0]) / g.inner_radii[0]).powi(2)
                + ((v - g.inner_offset[1]) / g.inner_radii[1]).powi(2);
            let label = if inner < 1.0 {
                2
            } else if outer < 1.0 {
                1
            } else {
                0
            };
            let base = match label {
                2 => tz,
                1 => pz,
                _ => cfg.background_intensity,
            };
            let bias = if cfg.bias_field != 0.0 {
                cfg.bias_field * 2.0 * (p.bias_dir.cos() * dx + p.bias_dir.sin() * dy)
            } else {
                0.0
            };
            let eps = if cfg.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            labels.push(label);
            values.push((base + bias + eps) as f32);
        }
    }
    (
        ImageSlice::new(n, n, values).expect("finite phantom"),
        LabelMask::new(n, n, labels).expect("labels in range"),
    )
}

/// Write a phantom dataset under `out_dir` and return its manifest (also
/// saved as `out_dir/manifest.json`). Masks are written for labeled splits only.
pub fn generate_phantom_dataset(cfg: &PhantomConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    for sub in ["images", "masks"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let plan = [
        (Split::TrainLabeled, cfg.num_labeled, "lab"),
        (Split::TrainUnlabeled, cfg.num_unlabeled, "unl"),
        (Split::Test, cfg.num_test, "test"),
    ];
    let mut entries = Vec::new();
    for (split, count, prefix) in plan {
        for i in 0..count {
            let id = format!("{prefix}-{i:04}");
            let (image, mask) = render_slice(cfg, split, i);
            let image_rel = format!("images/{id}.img");
            write_image(&out_dir.join(&image_rel), &image)?;
            let mask_rel = if split.is_labeled() {
                let rel = format!("masks/{id}.msk");
                write_mask(&out_dir.join(&rel), &mask)?;
                Some(rel)
            } else {
                None
            };
            entries.push(ManifestEntry {
                image: image_rel,
                mask: mask_rel,
                split,
                patient_id: id,
            });
        }
    }
    let manifest = DatasetManifest::new(entries, out_dir);
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomConfig {
        PhantomConfig {
            num_labeled: 3,
            num_unlabeled: 2,
            num_test: 2,
            image_size: 32,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_phantom_dataset(&small(), a.path()).unwrap();
        generate_phantom_dataset(&small(), b.path()).unwrap();
        for e in &ma.entries {
            let fa = fs::read(a.path().join(&e.image)).unwrap();
            let fb = fs::read(b.path().join(&e.image)).unwrap();
            assert_eq!(fa, fb);
        }
        assert_eq!(
            fs::read(a.path().join("manifest.json")).unwrap(),
            fs::read(b.path().join("manifest.json")).unwrap()
        );
    }

    #[test]
    fn masks_only_for_labeled_splits() {
        let d = tempfile::tempdir().unwrap();
        let m = generate_phantom_dataset(&small(), d.path()).unwrap();
        for e in &m.entries {
            assert_eq!(e.mask.is_some(), e.split != Split::TrainUnlabeled);
        }
        let reloaded = DatasetManifest::load(&d.path().join("manifest.json")).unwrap();
        assert_eq!(reloaded.entries, m.entries);
    }

    #[test]
    fn noiseless_zones_have_exact_intensities() {
        let cfg = PhantomConfig {
            noise_sigma: 0.0,
            pz_intensity: 1.25,
            tz_intensity: -0.5,
            background_intensity: 0.0,
            ..small()
        };
        let (img, mask) = render_slice(&cfg, Split::Test, 0);
        for (&v, &l) in img.values().iter().zip(mask.labels()) {
            let want = [0.0, 1.25, -0.5][l as usize];
            assert_eq!(v, want);
        }
        assert!(mask.labels().contains(&1) && mask.labels().contains(&2));
    }

    #[test]
    fn rejects_bad_size_and_negative_noise() {
        assert!(PhantomConfig {
            image_size: 48,
            ..small()
        }
        .validate()
        .is_err());
        assert!(PhantomConfig {
            noise_sigma: -1.0,
            ..small()
        }
        .validate()
        .is_err());
        let mut g = small();
        g.geometry.inner_radii = [0.4, 0.1];
        assert!(g.validate().is_err());
    }
}
