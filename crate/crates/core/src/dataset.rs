//! Training data: seeded synthetic Gaussian-like blobs and IDX image files.

use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `(samples, ...sample shape)`
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.rank() < 2 || inputs.shape()[0] != labels.len() {
            return Err(Error::Structural(format!(
                "{} labels for inputs of shape {:?}",
                labels.len(),
                inputs.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Structural(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Reinterprets every sample with a new shape of the same size.
    pub fn reshape_samples(self, sample_shape: &[usize]) -> Result<Self> {
        let mut shape = vec![self.len()];
        shape.extend_from_slice(sample_shape);
        Ok(Self {
            inputs: self.inputs.reshape(shape)?,
            ..self
        })
    }
}

/// Parameters of the synthetic blob generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBlobs {
    pub classes: usize,
    pub dims: usize,
    pub samples: usize,
    pub eval_samples: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticBlobs {
    fn default() -> Self {
        Self {
            classes: 10,
            dims: 32,
            samples: 4096,
            eval_samples: 1024,
            noise: 0.5,
            seed: 0,
        }
    }
}

/// Uniform draw in `[0, 1)` from the top 53 bits of a `u64`.
fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Irwin-Hall approximation of a standard normal: twelve uniforms minus six.
fn approx_normal(rng: &mut ChaCha8Rng) -> f64 {
    let mut sum = 0.0;
    for _ in 0..12 {
        sum += unit(rng);
    }
    sum - 6.0
}

impl SyntheticBlobs {
    /// Generates `(train, eval)`.
    ///
    /// The stream is ChaCha8 seeded with `seed`, and every value is built from
    /// additions and multiplications only, so the output is bit-identical on
    /// every platform:
    ///
    /// 1. class centers, class-major: `2u - 1` per dimension;
    /// 2. training samples: label `i mod classes`, features
    ///    `center + noise * z` with `z` the sum of twelve uniforms minus six;
    /// 3. evaluation samples, generated the same way.
    ///
    /// Uniforms `u` take the top 53 bits of the next `u64`.
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        if self.classes < 2 || self.dims == 0 || self.samples == 0 || self.eval_samples == 0 {
            return Err(Error::Validation(format!(
                "synthetic blobs need >= 2 classes and non-empty dims/samples, got {self:?}"
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::range("noise", self.noise, ">= 0"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let centers: Vec<f64> = (0..self.classes * self.dims)
            .map(|_| 2.0 * unit(&mut rng) - 1.0)
            .collect();
        let mut draw = |count: usize| -> Result<Dataset> {
            let mut data = Vec::with_capacity(count * self.dims);
            let mut labels = Vec::with_capacity(count);
            for i in 0..count {
                let label = i % self.classes;
                let center = &centers[label * self.dims..(label + 1) * self.dims];
                for &c in center {
                    data.push(c + self.noise * approx_normal(&mut rng));
                }
                labels.push(label);
            }
            Dataset::new(
                Tensor::new(vec![count, self.dims], data)?,
                labels,
                self.classes,
            )
        };
        let train = draw(self.samples)?;
        let eval = draw(self.eval_samples)?;
        Ok((train, eval))
    }
}

/// Images and labels read from an IDX pair, with pixels normalized as
/// `(p / 255 - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxData {
    /// `(count, rows, cols)`
    pub images: Tensor,
    pub labels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Parses an IDX image file body (magic `0x00000803`).
pub fn parse_idx_images(bytes: &[u8], mean: f64, std: f64) -> Result<Tensor> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "images: bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let body = &bytes[16..];
    let expected = count * rows * cols;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "images: header promises {expected} pixels, file has {}",
            body.len()
        )));
    }
    if !(std > 0.0) {
        return Err(Error::range("std", std, "> 0"));
    }
    let data = body
        .iter()
        .map(|&p| (p as f64 / 255.0 - mean) / std)
        .collect();
    Tensor::new(vec![count, rows, cols], data).map_err(|e| Error::Format(format!("images: {e}")))
}

/// Parses an IDX label file body (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "labels: bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Format(format!(
            "labels: header promises {count} labels, file has {}",
            body.len()
        )));
    }
    Ok(body.to_vec())
}

/// Loads an IDX image/label pair and checks that their counts agree.
pub fn load_idx(images: &Path, labels: &Path, mean: f64, std: f64) -> Result<IdxData> {
    let image_bytes = fs::read(images).map_err(|e| Error::io(images, e))?;
    let label_bytes = fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let images = parse_idx_images(&image_bytes, mean, std)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if images.shape()[0] != labels.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            images.shape()[0],
            labels.len()
        )));
    }
    Ok(IdxData { images, labels })
}

impl IdxData {
    pub fn into_dataset(self, num_classes: Option<usize>) -> Result<Dataset> {
        let classes = num_classes.unwrap_or_else(|| {
            self.labels
                .iter()
                .map(|&l| l as usize + 1)
                .max()
                .unwrap_or(1)
        });
        let labels = self.labels.into_iter().map(usize::from).collect();
        Dataset::new(self.images, labels, classes)
    }
}
