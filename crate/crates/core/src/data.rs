//! Labeled image datasets: a procedural face-like renderer, three-way
//! splitting into private / adversary / test data, and batching.
//!
//! Images are stored `H x W x C` with values in `[0, 1]`. Batches convert them
//! to the `[n, c, h, w]` layout the networks consume.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `H x W x C`, row-major, values in `[0, 1]`.
    pub image: Vec<f32>,
    pub attributes: Vec<u8>,
    pub identity: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn square(size: usize, channels: usize) -> Self {
        ImageShape { height: size, width: size, channels }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-sample tensor shape `[c, h, w]`.
    pub fn chw(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub shape: ImageShape,
    pub k_attributes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Validates the sample invariants and builds a dataset.
    pub fn new(shape: ImageShape, k_attributes: usize, samples: Vec<Sample>) -> Result<Self> {
        if k_attributes == 0 {
            return Err(Error::InvalidConfig("k_attributes must be at least 1".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.image.len() != shape.len() {
                return Err(Error::InvalidConfig(format!(
                    "sample {i}: image has {} values, expected {}",
                    s.image.len(),
                    shape.len()
                )));
            }
            if s.attributes.len() != k_attributes {
                return Err(Error::Arity {
                    context: "sample attributes",
                    expected: k_attributes,
                    found: s.attributes.len(),
                });
            }
            if s.attributes.iter().any(|&a| a > 1) {
                return Err(Error::InvalidConfig(format!("sample {i}: attribute not binary")));
            }
            if s.image.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidConfig(format!("sample {i}: pixel outside [0, 1]")));
            }
        }
        Ok(Dataset { shape, k_attributes, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of identity classes (labels are contiguous from 0).
    pub fn identity_count(&self) -> usize {
        self.samples.iter().map(|s| s.identity + 1).max().unwrap_or(0)
    }

    /// Keeps only the listed attribute columns, in the given order.
    pub fn select_attributes(&self, columns: &[usize]) -> Result<Dataset> {
        if columns.is_empty() {
            return Err(Error::Empty("attribute selection"));
        }
        if let Some(&c) = columns.iter().find(|&&c| c >= self.k_attributes) {
            return Err(Error::InvalidConfig(format!(
                "attribute column {c} out of range for k = {}",
                self.k_attributes
            )));
        }
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                image: s.image.clone(),
                attributes: columns.iter().map(|&c| s.attributes[c]).collect(),
                identity: s.identity,
            })
            .collect();
        Ok(Dataset { shape: self.shape, k_attributes: columns.len(), samples })
    }

    /// Appends the samples of `other`, which must share image shape and arity.
    pub fn merge(&mut self, other: &Dataset) -> Result<()> {
        if other.shape != self.shape || other.k_attributes != self.k_attributes {
            return Err(Error::InvalidConfig("merged datasets differ in shape or arity".into()));
        }
        self.samples.extend(other.samples.iter().cloned());
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub k_attributes: usize,
    pub image_size: usize,
    pub channels: usize,
    pub seed: u64,
    /// Brightness added inside an active attribute cue.
    #[serde(default = "default_cue_contrast")]
    pub cue_contrast: f32,
}

fn default_cue_contrast() -> f32 {
    DEFAULT_CUE_CONTRAST
}

pub const DEFAULT_CUE_CONTRAST: f32 = 0.1;

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_identities: 40,
            samples_per_identity: 50,
            k_attributes: 8,
            image_size: 32,
            channels: 3,
            seed: 0,
            cue_contrast: DEFAULT_CUE_CONTRAST,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities == 0 || self.samples_per_identity == 0 || self.channels == 0 {
            return Err(Error::InvalidConfig("synthetic counts must be positive".into()));
        }
        if self.k_attributes == 0 {
            return Err(Error::InvalidConfig("k_attributes must be at least 1".into()));
        }
        if self.image_size < MIN_IMAGE_SIZE {
            return Err(Error::InvalidConfig(format!(
                "image_size {} is below the renderer minimum of {MIN_IMAGE_SIZE}",
                self.image_size
            )));
        }
        if !(self.cue_contrast > 2.0 * PIXEL_NOISE && self.cue_contrast <= 0.5) {
            return Err(Error::InvalidConfig(format!(
                "cue_contrast {} must lie in ({}, 0.5]",
                self.cue_contrast,
                2.0 * PIXEL_NOISE
            )));
        }
        let slots = cue_slots(self.image_size).len();
        if self.k_attributes > slots {
            return Err(Error::InvalidConfig(format!(
                "{} attributes requested but a {}px image has {slots} cue slots",
                self.k_attributes, self.image_size
            )));
        }
        Ok(())
    }
}

pub const MIN_IMAGE_SIZE: usize = 16;

const PIXEL_NOISE: f32 = 0.03;
const BRIGHTNESS_JITTER: f32 = 0.04;

/// Side length of one attribute cue square.
pub fn cue_size(image_size: usize) -> usize {
    (image_size / 10).max(2)
}

/// Top-left corners of the attribute cue squares, ordered around the image
/// border. Cues never overlap each other or the central face region.
pub fn cue_slots(image_size: usize) -> Vec<(usize, usize)> {
    let m = cue_size(image_size);
    let pitch = m + 1;
    let count = (image_size - 1) / pitch;
    if count < 2 {
        return Vec::new();
    }
    let span = count * pitch - 1;
    let start = (image_size - span) / 2;
    let coords: Vec<usize> = (0..count).map(|i| start + i * pitch).collect();
    let (lo, hi) = (coords[0], coords[count - 1]);
    let mut ring = Vec::new();
    // clockwise from the top-left corner
    for &x in &coords {
        ring.push((x, lo));
    }
    for &y in &coords[1..] {
        ring.push((hi, y));
    }
    for &x in coords[..count - 1].iter().rev() {
        ring.push((x, hi));
    }
    for &y in coords[1..count - 1].iter().rev() {
        ring.push((lo, y));
    }
    ring
}

/// Cue slots used for `k` attributes, spread evenly around the ring.
pub fn attribute_slots(image_size: usize, k: usize) -> Vec<(usize, usize)> {
    let ring = cue_slots(image_size);
    (0..k).map(|i| ring[i * ring.len() / k]).collect()
}

/// Pixel rule: an attribute is on iff its cue square is brighter than the
/// one-pixel frame around it by more than half the cue contrast.
pub fn cue_present(image: &[f32], shape: ImageShape, slot: (usize, usize), contrast: f32) -> bool {
    let m = cue_size(shape.height);
    let (x0, y0) = slot;
    let (mut inner, mut n_inner) = (0.0f32, 0usize);
    let (mut frame, mut n_frame) = (0.0f32, 0usize);
    let (ylo, xlo) = (y0.saturating_sub(1), x0.saturating_sub(1));
    let (yhi, xhi) = ((y0 + m + 1).min(shape.height), (x0 + m + 1).min(shape.width));
    for y in ylo..yhi {
        for x in xlo..xhi {
            let inside = (y0..y0 + m).contains(&y) && (x0..x0 + m).contains(&x);
            for c in 0..shape.channels {
                let v = image[(y * shape.width + x) * shape.channels + c];
                if inside {
                    inner += v;
                    n_inner += 1;
                } else {
                    frame += v;
                    n_frame += 1;
                }
            }
        }
    }
    inner / n_inner as f32 - frame / n_frame.max(1) as f32 > contrast / 2.0
}

struct IdentityLook {
    background: Vec<f32>,
    face: Vec<f32>,
    center: (f32, f32),
    radii: (f32, f32),
    stripe_dir: (f32, f32),
    stripe_freq: f32,
    stripe_phase: f32,
}

impl IdentityLook {
    fn draw(seed: u64, identity: usize, size: usize, channels: usize) -> Self {
        let mut r = rng::rng(rng::derive(seed, "identity", identity as u64));
        let s = size as f32;
        let background = (0..channels).map(|_| r.gen_range(0.05f32..0.45)).collect();
        let face = (0..channels).map(|_| r.gen_range(0.30f32..0.72)).collect();
        let off = s / 20.0;
        let center = (
            (s - 1.0) / 2.0 + r.gen_range(-off..off),
            (s - 1.0) / 2.0 + r.gen_range(-off..off),
        );
        let radii = (r.gen_range(0.16 * s..0.25 * s), r.gen_range(0.16 * s..0.25 * s));
        let theta = r.gen_range(0.0f32..core::f32::consts::PI);
        IdentityLook {
            background,
            face,
            center,
            radii,
            stripe_dir: (libm::cosf(theta), libm::sinf(theta)),
            stripe_freq: r.gen_range(0.5f32..1.2),
            stripe_phase: r.gen_range(0.0f32..core::f32::consts::TAU),
        }
    }
}

/// Renders a deterministic labeled dataset. Identity sets the background,
/// face shape, face color and texture; each attribute toggles a cue square at
/// its own border slot, brightened by `cue_contrast` over the background.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let size = config.image_size;
    let ch = config.channels;
    let shape = ImageShape::square(size, ch);
    let slots = attribute_slots(size, config.k_attributes);
    let m = cue_size(size);
    let mut samples = Vec::with_capacity(config.n_identities * config.samples_per_identity);
    for id in 0..config.n_identities {
        let look = IdentityLook::draw(config.seed, id, size, ch);
        for j in 0..config.samples_per_identity {
            let index = id * config.samples_per_identity + j;
            let mut r = rng::rng(rng::derive(config.seed, "sample", index as u64));
            let attributes: Vec<u8> =
                (0..config.k_attributes).map(|_| u8::from(r.gen_bool(0.5))).collect();
            let jitter = r.gen_range(-BRIGHTNESS_JITTER..BRIGHTNESS_JITTER);
            let mut image = vec![0.0f32; shape.len()];
            for y in 0..size {
                for x in 0..size {
                    let dx = (x as f32 - look.center.0) / look.radii.0;
                    let dy = (y as f32 - look.center.1) / look.radii.1;
                    let inside = dx * dx + dy * dy <= 1.0;
                    let stripe = if inside {
                        let t = x as f32 * look.stripe_dir.0 + y as f32 * look.stripe_dir.1;
                        0.15 * libm::sinf(look.stripe_freq * t + look.stripe_phase)
                    } else {
                        0.0
                    };
                    for c in 0..ch {
                        let base = if inside { look.face[c] + stripe } else { look.background[c] };
                        let noise = r.gen_range(-PIXEL_NOISE..PIXEL_NOISE);
                        image[(y * size + x) * ch + c] = (base + jitter + noise).clamp(0.0, 1.0);
                    }
                }
            }
            for (a, &(x0, y0)) in attributes.iter().zip(&slots) {
                if *a == 1 {
                    for y in y0..y0 + m {
                        for x in x0..x0 + m {
                            for c in 0..ch {
                                let v = &mut image[(y * size + x) * ch + c];
                                *v = (*v + config.cue_contrast).min(1.0);
                            }
                        }
                    }
                }
            }
            samples.push(Sample { image, attributes, identity: id });
        }
    }
    Dataset::new(shape, config.k_attributes, samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    /// X1: the protector's private training data.
    Private,
    /// X2: data the adversary owns.
    Adversary,
    /// T: held-out evaluation data.
    Test,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Uniform random permutation of samples; identities are shared.
    #[default]
    Permutation,
    /// Whole identities are assigned to one split each.
    IdentityDisjoint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub role: SplitRole,
    /// Positions of the samples in the source dataset.
    pub source_indices: Vec<usize>,
    pub shape: ImageShape,
    pub k_attributes: usize,
    pub samples: Vec<Sample>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn identities(&self) -> BTreeSet<usize> {
        self.samples.iter().map(|s| s.identity).collect()
    }

    /// Wraps a whole dataset as one split.
    pub fn from_dataset(role: SplitRole, dataset: &Dataset) -> Self {
        DatasetSplit {
            role,
            source_indices: (0..dataset.len()).collect(),
            shape: dataset.shape,
            k_attributes: dataset.k_attributes,
            samples: dataset.samples.clone(),
        }
    }

    pub fn batch<T: Real>(&self, indices: &[usize]) -> Batch<T> {
        Batch::from_samples(self.shape, self.k_attributes, indices.iter().map(|&i| &self.samples[i]))
    }

    /// Every sample in order, as one batch.
    pub fn full_batch<T: Real>(&self) -> Batch<T> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub private: DatasetSplit,
    pub adversary: DatasetSplit,
    pub test: DatasetSplit,
    pub mode: SplitMode,
    /// Whether X1 and X2 share any identity label.
    pub identities_overlap: bool,
}

fn take(dataset: &Dataset, role: SplitRole, indices: Vec<usize>) -> Result<DatasetSplit> {
    if indices.is_empty() {
        return Err(Error::Empty(match role {
            SplitRole::Private => "private split",
            SplitRole::Adversary => "adversary split",
            SplitRole::Test => "test split",
        }));
    }
    let samples = indices.iter().map(|&i| dataset.samples[i].clone()).collect();
    Ok(DatasetSplit {
        role,
        source_indices: indices,
        shape: dataset.shape,
        k_attributes: dataset.k_attributes,
        samples,
    })
}

/// Sizes for three fractions of `n`, each within one of `f * n`.
fn split_sizes(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let mut sizes = fractions.map(|f| libm::round(f * n as f64) as usize);
    while sizes.iter().sum::<usize>() > n {
        let i = (0..3).max_by_key(|&i| sizes[i]).unwrap();
        sizes[i] -= 1;
    }
    sizes
}

/// Partitions a dataset into (X1, X2, T).
pub fn split_dataset(
    dataset: &Dataset,
    fractions: [f64; 3],
    seed: u64,
    mode: SplitMode,
) -> Result<Splits> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::InvalidConfig("split fractions must be positive".into()));
    }
    let total: f64 = fractions.iter().sum();
    if total > 1.0 + 1e-9 {
        return Err(Error::InvalidConfig(format!("split fractions sum to {total} > 1")));
    }
    let mut r = rng::rng(rng::derive(seed, "split", 0));
    let parts: [Vec<usize>; 3] = match mode {
        SplitMode::Permutation => {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(&mut r);
            let [a, b, c] = split_sizes(dataset.len(), fractions);
            [order[..a].to_vec(), order[a..a + b].to_vec(), order[a + b..a + b + c].to_vec()]
        }
        SplitMode::IdentityDisjoint => {
            let mut ids: Vec<usize> = (0..dataset.identity_count()).collect();
            ids.shuffle(&mut r);
            let [a, b, c] = split_sizes(ids.len(), fractions);
            let groups = [&ids[..a], &ids[a..a + b], &ids[a + b..a + b + c]];
            groups.map(|g| {
                let set: BTreeSet<usize> = g.iter().copied().collect();
                (0..dataset.len()).filter(|&i| set.contains(&dataset.samples[i].identity)).collect()
            })
        }
    };
    let [p, a, t] = parts;
    let private = take(dataset, SplitRole::Private, p)?;
    let adversary = take(dataset, SplitRole::Adversary, a)?;
    let test = take(dataset, SplitRole::Test, t)?;
    let identities_overlap = !private.identities().is_disjoint(&adversary.identities());
    Ok(Splits { private, adversary, test, mode, identities_overlap })
}

/// Index batches for one epoch over `n` samples.
pub fn epoch_batches(n: usize, batch_size: usize, shuffle_seed: u64) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng(shuffle_seed));
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Endless stream of index batches; epoch `e` is shuffled with a seed derived
/// from `(seed, e)`.
#[derive(Clone, Debug)]
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    pending: Vec<Vec<usize>>,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        BatchStream { n, batch_size: batch_size.max(1), seed, epoch: 0, pending: Vec::new() }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.n == 0 {
            return None;
        }
        if self.pending.is_empty() {
            let seed = rng::derive(self.seed, "epoch", self.epoch);
            self.epoch += 1;
            self.pending = epoch_batches(self.n, self.batch_size, seed);
            self.pending.reverse();
        }
        self.pending.pop()
    }
}

/// Network-ready batch: images `[n, c, h, w]`, attributes `[n, k]`.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub attributes: Tensor<T>,
    pub identities: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn from_samples<'a>(
        shape: ImageShape,
        k: usize,
        samples: impl Iterator<Item = &'a Sample>,
    ) -> Self {
        let mut pixels = Vec::new();
        let mut attrs = Vec::new();
        let mut identities = Vec::new();
        let (h, w, ch) = (shape.height, shape.width, shape.channels);
        for s in samples {
            for c in 0..ch {
                for y in 0..h {
                    for x in 0..w {
                        pixels.push(T::lit(f64::from(s.image[(y * w + x) * ch + c])));
                    }
                }
            }
            attrs.extend(s.attributes.iter().map(|&a| T::lit(f64::from(a))));
            identities.push(s.identity);
        }
        let n = identities.len();
        Batch {
            images: Tensor::from_vec(&[n, ch, h, w], pixels).expect("consistent image size"),
            attributes: Tensor::from_vec(&[n, k], attrs).expect("consistent arity"),
            identities,
        }
    }
}

/// Converts one `[c, h, w]` tensor row back to an `H x W x C` image.
pub fn chw_to_hwc<T: Real>(chw: &[T], shape: ImageShape) -> Vec<f32> {
    let (h, w, ch) = (shape.height, shape.width, shape.channels);
    let mut out = vec![0.0f32; shape.len()];
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                out[(y * w + x) * ch + c] = chw[(c * h + y) * w + x].as_f64() as f32;
            }
        }
    }
    out
}
