//! Frame ingestion, splits, and the synthetic corpus generator.

mod manifest;
mod pnm;
mod resize;
mod synth;

use std::fs;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use manifest::{load_manifest, DatasetManifest, Record};
pub use pnm::{decode_image, encode_pgm, encode_ppm, Frame};
pub use resize::{resize_bilinear, resize_to_input, resize_to_input_with, Preprocess};
pub use synth::{positive_count, render_frame, synth_generate, synth_generate_with, SynthOptions, MANIFEST_NAME};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Seeded split. A seeded permutation of all records is cut at
/// `round(train_fraction · n)`; the training side keeps the shuffled order,
/// the test side keeps manifest order.
pub fn split_and_shuffle(
    manifest: &DatasetManifest,
    seed: u64,
    train_fraction: f64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = manifest.len();
    let k = (n as f64 * train_fraction).round() as usize;
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "split of {n} records at {train_fraction} leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = order[k..].to_vec();
    test.sort_unstable();
    Ok((manifest.subset(&order[..k]), manifest.subset(&test)))
}

/// Indexed, labelled network inputs.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, index: usize) -> u8;

    /// One sample as a batch of one.
    fn load(&self, index: usize) -> Result<Tensor4>;

    fn load_batch(&self, indices: &[usize]) -> Result<(Tensor4, Vec<u8>)> {
        let parts = indices.iter().map(|&i| self.load(i)).collect::<Result<Vec<_>>>()?;
        Ok((Tensor4::stack(&parts)?, indices.iter().map(|&i| self.label(i)).collect()))
    }
}

/// Reads, decodes, and resizes manifest images on demand.
#[derive(Debug, Clone)]
pub struct ManifestSource {
    manifest: DatasetManifest,
    preprocess: Preprocess,
}

impl ManifestSource {
    pub fn new(manifest: DatasetManifest) -> Self {
        Self::with_preprocess(manifest, Preprocess::default())
    }

    pub fn with_preprocess(manifest: DatasetManifest, preprocess: Preprocess) -> Self {
        ManifestSource { manifest, preprocess }
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }
}

impl SampleSource for ManifestSource {
    fn len(&self) -> usize {
        self.manifest.len()
    }

    fn label(&self, index: usize) -> u8 {
        self.manifest.records()[index].label
    }

    fn load(&self, index: usize) -> Result<Tensor4> {
        let path = self.manifest.full_path(index);
        let wrap = |e: Error| Error::Sample {
            path: path.clone(),
            source: Box::new(e),
        };
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let frame = decode_image(&bytes).map_err(wrap)?;
        resize_to_input_with(&frame, self.preprocess).map_err(wrap)
    }
}

/// Preloaded samples.
#[derive(Debug, Clone)]
pub struct InMemorySource {
    samples: Tensor4,
    labels: Vec<u8>,
}

impl InMemorySource {
    pub fn new(samples: Tensor4, labels: Vec<u8>) -> Result<Self> {
        if samples.shape().n != labels.len() {
            return Err(Error::shape(
                "InMemorySource::new",
                format!("{} labels", samples.shape().n),
                format!("{}", labels.len()),
            ));
        }
        Ok(InMemorySource { samples, labels })
    }

    /// Loads every sample of another source.
    pub fn collect(source: &dyn SampleSource) -> Result<Self> {
        let idx: Vec<usize> = (0..source.len()).collect();
        let (samples, labels) = source.load_batch(&idx)?;
        Self::new(samples, labels)
    }

    pub fn samples(&self) -> &Tensor4 {
        &self.samples
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

impl SampleSource for InMemorySource {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn label(&self, index: usize) -> u8 {
        self.labels[index]
    }

    fn load(&self, index: usize) -> Result<Tensor4> {
        Ok(self.samples.sample_tensor(index))
    }
}
