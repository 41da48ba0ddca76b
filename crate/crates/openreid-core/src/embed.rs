//! The embedder boundary: image patch in, descriptor out.
//!
//! Real deployments plug a CNN in here. This crate ships a file-backed lookup
//! for precomputed vectors and a deterministic stub for tests; both honor the
//! same contract: deterministic, dimension-stable, unit-length output.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::descriptor::{normalize_f64, Descriptor, DescriptorError};
use crate::image::GrayImage;

/// Default descriptor width, matching a fc7-style embedding layer.
pub const DEFAULT_EMBED_DIM: usize = 4096;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no precomputed vector for frame {frame}, track {track}")]
    MissingKey { frame: u64, track: u64 },
    #[error("mean image is {mean_w}x{mean_h} but patches are {patch_w}x{patch_h}")]
    MeanImageSize {
        mean_w: u32,
        mean_h: u32,
        patch_w: u32,
        patch_h: u32,
    },
    #[error("expected {expected} patches, got {actual}")]
    PatchCount { expected: usize, actual: usize },
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

/// Identifies the observation a patch came from, for keyed lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedContext {
    pub frame: u64,
    pub track: u64,
}

/// Maps a face patch to a unit-length descriptor.
///
/// Implementations must be deterministic and safe to call concurrently.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, ctx: EmbedContext, patch: &GrayImage) -> Result<Descriptor, EmbedError>;
}

/// Hashes pixel content into a reproducible pseudo-embedding. Test use only;
/// carries no visual meaning beyond "same pixels, same vector".
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    dim: usize,
    seed: u64,
    mean_image: Option<GrayImage>,
}

impl StubEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        StubEmbedder {
            dim,
            seed,
            mean_image: None,
        }
    }

    /// Subtracts a mean image from every patch before hashing.
    pub fn with_mean_image(mut self, mean: GrayImage) -> Self {
        self.mean_image = Some(mean);
        self
    }
}

fn fnv1a64(seed: u64, bytes: impl Iterator<Item = u8>) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes().into_iter().chain(bytes) {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

impl Embedder for StubEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, _ctx: EmbedContext, patch: &GrayImage) -> Result<Descriptor, EmbedError> {
        let hash = match &self.mean_image {
            None => fnv1a64(
                self.seed,
                patch
                    .width()
                    .to_le_bytes()
                    .into_iter()
                    .chain(patch.height().to_le_bytes())
                    .chain(patch.pixels().iter().copied()),
            ),
            Some(mean) => {
                if mean.width() != patch.width() || mean.height() != patch.height() {
                    return Err(EmbedError::MeanImageSize {
                        mean_w: mean.width(),
                        mean_h: mean.height(),
                        patch_w: patch.width(),
                        patch_h: patch.height(),
                    });
                }
                let centered = patch
                    .pixels()
                    .iter()
                    .zip(mean.pixels())
                    .flat_map(|(&p, &m)| (i16::from(p) - i16::from(m)).to_le_bytes());
                fnv1a64(
                    self.seed,
                    patch
                        .width()
                        .to_le_bytes()
                        .into_iter()
                        .chain(patch.height().to_le_bytes())
                        .chain(centered),
                )
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(hash);
        let values: Vec<f64> = (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Ok(normalize_f64(&values)?)
    }
}

/// Serves precomputed descriptors keyed by (frame, track); the patch content
/// is ignored.
#[derive(Debug, Clone)]
pub struct FileBackedEmbedder {
    dim: usize,
    table: BTreeMap<(u64, u64), Descriptor>,
}

impl FileBackedEmbedder {
    pub fn new(dim: usize, entries: impl IntoIterator<Item = ((u64, u64), Descriptor)>) -> Self {
        FileBackedEmbedder {
            dim,
            table: entries.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Embedder for FileBackedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, ctx: EmbedContext, _patch: &GrayImage) -> Result<Descriptor, EmbedError> {
        self.table
            .get(&(ctx.frame, ctx.track))
            .cloned()
            .ok_or(EmbedError::MissingKey {
                frame: ctx.frame,
                track: ctx.track,
            })
    }
}

/// How many crop windows feed one descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractMode {
    /// One central window, one embedding.
    Central,
    /// Five windows embedded separately, then averaged and re-normalized.
    FivePatch,
}

impl ExtractMode {
    pub fn patch_count(self) -> usize {
        match self {
            ExtractMode::Central => 1,
            ExtractMode::FivePatch => 5,
        }
    }
}

/// Embeds the given patches and reduces them to a single unit descriptor.
pub fn extract_descriptor(
    ctx: EmbedContext,
    patches: &[GrayImage],
    embedder: &dyn Embedder,
    mode: ExtractMode,
) -> Result<Descriptor, EmbedError> {
    if patches.len() != mode.patch_count() {
        return Err(EmbedError::PatchCount {
            expected: mode.patch_count(),
            actual: patches.len(),
        });
    }
    match mode {
        ExtractMode::Central => embedder.embed(ctx, &patches[0]),
        ExtractMode::FivePatch => {
            let embedded: Vec<Descriptor> = patches
                .iter()
                .map(|p| embedder.embed(ctx, p))
                .collect::<Result<_, _>>()?;
            Ok(crate::descriptor::mean_descriptor(&embedded)?)
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Full chip-to-descriptor path: optional equalization, resize to 256,
/// crop per mode, embed, reduce.
pub fn face_descriptor(
    img: &GrayImage,
    ctx: EmbedContext,
    embedder: &dyn Embedder,
    equalize: bool,
    mode: ExtractMode,
) -> Result<Descriptor, PipelineError> {
    use crate::image::{crop_central, crop_five, resize_bilinear, RESIZE_SIDE};
    let prepared = if equalize {
        crate::image::histogram_equalize(img)
    } else {
        img.clone()
    };
    let resized = resize_bilinear(&prepared, RESIZE_SIDE, RESIZE_SIDE)?;
    let d = match mode {
        ExtractMode::Central => {
            let patch = crop_central(&resized)?;
            extract_descriptor(ctx, &[patch], embedder, mode)?
        }
        ExtractMode::FivePatch => {
            let patches = crop_five(&resized)?;
            extract_descriptor(ctx, &patches, embedder, mode)?
        }
    };
    Ok(d)
}
