use crate::data::ImageSlice;
use crate::error::{Error, Result};

/// Dense NCHW tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape ({n},{c},{h},{w})",
                data.len()
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    /// Stack single-channel slices into an `(n, 1, h, w)` batch.
    pub fn from_images<'a, I>(images: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a ImageSlice>,
    {
        let mut data = Vec::new();
        let mut dims: Option<(usize, usize)> = None;
        let mut n = 0;
        for img in images {
            let d = (img.height(), img.width());
            match dims {
                None => dims = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::ShapeMismatch(format!(
                        "batch mixes {}x{} and {}x{} slices",
                        prev.0, prev.1, d.0, d.1
                    )))
                }
                _ => {}
            }
            data.extend(img.values().iter().map(|&v| v as f64));
            n += 1;
        }
        let (h, w) = dims.unwrap_or((0, 0));
        Ok(Self { n, c: 1, h, w, data })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    /// New tensor made of the samples at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Tensor {
            n: indices.len(),
            c: self.c,
            h: self.h,
            w: self.w,
            data,
        }
    }

    /// Concatenate along the batch axis.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::ShapeMismatch("concat of zero tensors".into()))?;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if (p.c, p.h, p.w) != (first.c, first.h, first.w) {
                return Err(Error::ShapeMismatch("concat of incongruent tensors".into()));
            }
            data.extend_from_slice(&p.data);
            n += p.n;
        }
        Ok(Tensor {
            n,
            c: first.c,
            h: first.h,
            w: first.w,
            data,
        })
    }

    /// Split along the batch axis at `at`.
    pub fn split_at(&self, at: usize) -> (Tensor, Tensor) {
        let cut = at * self.sample_len();
        let mk = |n, data: &[f64]| Tensor {
            n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: data.to_vec(),
        };
        (mk(at, &self.data[..cut]), mk(self.n - at, &self.data[cut..]))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
