use super::codec::{read_image, read_mask};
use super::image::{crop_or_pad, zscore_normalize, ImageSlice, LabelMask};
use super::manifest::{DatasetManifest, Split};
use crate::error::Result;

/// A preprocessed slice: cropped/padded to the network input size, then
/// z-score normalized.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: ImageSlice,
    pub mask: Option<LabelMask>,
    pub patient_id: String,
}

/// Crop/pad to `input_size`, then normalize.
pub fn preprocess(
    image: &ImageSlice,
    mask: Option<&LabelMask>,
    input_size: usize,
) -> Result<(ImageSlice, Option<LabelMask>)> {
    let (img, mask) = crop_or_pad(image, mask, input_size)?;
    Ok((zscore_normalize(&img)?, mask))
}

/// All splits of a manifest held in memory, in manifest order.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn load(manifest: &DatasetManifest, input_size: usize) -> Result<Self> {
        let mut ds = Dataset::default();
        for e in &manifest.entries {
            let image = read_image(&manifest.resolve(&e.image))?;
            let mask = match (&e.mask, e.split.is_labeled()) {
                (Some(m), true) => Some(read_mask(&manifest.resolve(m))?),
                _ => None,
            };
            let (image, mask) = preprocess(&image, mask.as_ref(), input_size)?;
            let sample = Sample {
                image,
                mask,
                patient_id: e.patient_id.clone(),
            };
            match e.split {
                Split::TrainLabeled => ds.labeled.push(sample),
                Split::TrainUnlabeled => ds.unlabeled.push(sample),
                Split::Test => ds.test.push(sample),
            }
        }
        Ok(ds)
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::TrainLabeled => &self.labeled,
            Split::TrainUnlabeled => &self.unlabeled,
            Split::Test => &self.test,
        }
    }
}
