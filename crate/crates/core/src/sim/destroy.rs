//! Feature-destruction transforms: scramble or blank the part of the input
//! that carries the target signal so a model trained on the result can only
//! learn what remains.
//!
//! Vector batches use block permutation — each record keeps its own
//! spurious block but receives the target block of a random other record,
//! which preserves every per-coordinate marginal while severing the
//! feature-label pairing. Square images support patch shuffling, pixel
//! shuffling and center occlusion; token sequences support word shuffling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Input shapes [`destroy`] understands.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Mini-batch of feature vectors, all the same width.
    Batch(Vec<Vec<f64>>),
    /// Square image stored row-major.
    Image { pixels: Vec<f64>, side: usize },
    /// Token sequence.
    Tokens(Vec<String>),
}

/// A destruction transform and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "kebab-case")]
pub enum Transform {
    /// Vectors: permute the `[start, start + len)` slice across the batch.
    BlockPermute { start: usize, len: usize },
    /// Images: cut into `patch x patch` tiles and permute their order.
    PatchShuffle { patch: usize },
    /// Images: permute all pixels.
    PixelShuffle,
    /// Images: zero a centered `side x side` square.
    CenterOcclusion { side: usize },
    /// Tokens: permute token order.
    WordShuffle,
}

fn invalid(reason: String) -> Error {
    Error::InvalidParams { reason }
}

/// Applies `transform` to `payload`, returning the same shape. Permutations
/// are drawn from a dedicated stream of `seed`, so the result is a pure
/// function of (payload, transform, seed).
///
/// # Errors
///
/// `InvalidParams` when the transform does not fit the payload: wrong
/// payload kind, block out of bounds, ragged batch, patch size not dividing
/// the image side, or occlusion larger than the image.
pub fn destroy(payload: Payload, transform: &Transform, seed: u64) -> Result<Payload> {
    let mut rng = Rng::from_seed(seed, rng::stream::DESTROY);
    match (payload, transform) {
        (Payload::Batch(mut rows), &Transform::BlockPermute { start, len }) => {
            if len == 0 {
                return Err(invalid("block length must be at least 1".into()));
            }
            if let Some(short) = rows.iter().find(|r| r.len() < start + len) {
                return Err(invalid(format!(
                    "block [{start}, {}) exceeds a row of width {}",
                    start + len,
                    short.len()
                )));
            }
            let order = rng.permutation(rows.len());
            let blocks: Vec<Vec<f64>> = order
                .iter()
                .map(|&from| rows[from][start..start + len].to_vec())
                .collect();
            for (row, block) in rows.iter_mut().zip(blocks) {
                row[start..start + len].copy_from_slice(&block);
            }
            Ok(Payload::Batch(rows))
        }
        (Payload::Image { pixels, side }, &Transform::PatchShuffle { patch }) => {
            check_square(&pixels, side)?;
            if patch == 0 || side % patch != 0 {
                return Err(invalid(format!(
                    "patch size {patch} must divide the image side {side}"
                )));
            }
            let per_side = side / patch;
            let order = rng.permutation(per_side * per_side);
            let mut out = vec![0.0; pixels.len()];
            for (slot, &from) in order.iter().enumerate() {
                let (dr, dc) = (slot / per_side, slot % per_side);
                let (sr, sc) = (from / per_side, from % per_side);
                for r in 0..patch {
                    for c in 0..patch {
                        out[(dr * patch + r) * side + dc * patch + c] =
                            pixels[(sr * patch + r) * side + sc * patch + c];
                    }
                }
            }
            Ok(Payload::Image { pixels: out, side })
        }
        (Payload::Image { mut pixels, side }, Transform::PixelShuffle) => {
            check_square(&pixels, side)?;
            rng.shuffle(&mut pixels);
            Ok(Payload::Image { pixels, side })
        }
        (Payload::Image { mut pixels, side }, &Transform::CenterOcclusion { side: occ }) => {
            check_square(&pixels, side)?;
            if occ > side {
                return Err(invalid(format!(
                    "occlusion side {occ} exceeds image side {side}"
                )));
            }
            let start = (side - occ) / 2;
            for r in start..start + occ {
                for c in start..start + occ {
                    pixels[r * side + c] = 0.0;
                }
            }
            Ok(Payload::Image { pixels, side })
        }
        (Payload::Tokens(mut tokens), Transform::WordShuffle) => {
            rng.shuffle(&mut tokens);
            Ok(Payload::Tokens(tokens))
        }
        (payload, transform) => Err(invalid(format!(
            "transform {transform:?} does not apply to {} input",
            match payload {
                Payload::Batch(_) => "vector-batch",
                Payload::Image { .. } => "image",
                Payload::Tokens(_) => "token",
            }
        ))),
    }
}

fn check_square(pixels: &[f64], side: usize) -> Result<()> {
    if side == 0 || pixels.len() != side * side {
        return Err(invalid(format!(
            "{} pixels do not form a {side}x{side} image",
            pixels.len()
        )));
    }
    Ok(())
}
