//! Assembly of the clean conditioning for one clip: warped rotary layout,
//! clean latents and the preserved-pixel mask channel.

use alloc::vec::Vec;

use super::codec::Codec;
use super::model::{Conditioning, ModelConfig, ModelError};
use crate::attention::dit::PeState;
use crate::geometry::{CameraPose, DepthMap, Intrinsics};
use crate::image::Image;
use crate::linalg::Real;
use crate::pe_warp::{assemble_condition_set, compute_warp_maps, PeError, TimeAwarePe};

/// A clean frame with the geometry needed to warp it.
#[derive(Debug, Clone, Copy)]
pub struct CondFrame<'a> {
    pub image: &'a Image,
    pub depth: &'a DepthMap,
    pub pose: &'a CameraPose,
    /// Preserved pixels; `None` means all.
    pub mask: Option<&'a [bool]>,
}

/// Builds the conditioning for latent target poses `targets`. Memory `j` is
/// warped into its 1-based frame `assignments[j]`.
pub fn build_conditioning<F: Real>(
    cfg: &ModelConfig,
    codec: &Codec,
    k: &Intrinsics,
    targets: &[CameraPose],
    reference: CondFrame<'_>,
    memories: &[CondFrame<'_>],
    assignments: &[usize],
) -> Result<Conditioning<F>, ModelError> {
    let pe_cfg = cfg.pe_config()?;
    let axes = cfg.rope_axes()?;
    let patch = cfg.codec.patch;
    let (w, h) = (k.width as usize, k.height as usize);
    let n = targets.len();
    let geo = |e| ModelError::Pe(PeError::Geometry(e));
    let ref_maps = targets
        .iter()
        .map(|t| compute_warp_maps(reference.depth, reference.pose, t, k))
        .collect::<Result<Vec<_>, _>>()
        .map_err(geo)?;
    if memories.len() != assignments.len() {
        return Err(PeError::MemoryCount {
            memories: memories.len(),
            assignments: assignments.len(),
        }
        .into());
    }
    let mut mem_maps = Vec::with_capacity(memories.len());
    for (m, &a) in memories.iter().zip(assignments) {
        if a == 0 || a > n {
            return Err(PeError::AssignmentOutOfRange {
                entry: mem_maps.len(),
                value: a,
                frames: n,
            }
            .into());
        }
        mem_maps.push(compute_warp_maps(m.depth, m.pose, &targets[a - 1], k).map_err(geo)?);
    }
    let set = assemble_condition_set(n, &ref_maps, &mem_maps, assignments, patch, &pe_cfg)?;
    let noisy = (1..=n)
        .map(|tau| TimeAwarePe::native(w, h, tau, patch, &pe_cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let pe = PeState::new(&noisy, &set, patch, &pe_cfg, &axes)?;

    let enc = |e: super::CodecError| ModelError::Config(alloc::format!("{e}"));
    let mut clean = Vec::new();
    let mut masks = Vec::new();
    for f in core::iter::once(&reference).chain(memories) {
        clean.extend(codec.encode_image(f.image).map_err(enc)?.into_iter().map(F::of));
        let m = match f.mask {
            Some(m) => codec.patchify_mask(m, w, h).map_err(enc)?,
            None => alloc::vec![1.0; cfg.tokens_per_frame() * codec.mask_dim()],
        };
        masks.extend(m.into_iter().map(F::of));
    }
    Ok(Conditioning { pe, clean, masks })
}
