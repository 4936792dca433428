//! Memory bank of past frames and co-visibility retrieval.

use alloc::vec::Vec;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraPose, DepthMap, Intrinsics, Trajectory};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MemoryError {
    #[error("time index {time} does not follow {last}")]
    TimeOrder { time: u64, last: u64 },
    #[error("degenerate frustum: near {near}, far {far}, {samples} samples")]
    Frustum { near: f64, far: f64, samples: usize },
    #[error("memory bank is empty")]
    EmptyBank,
    #[error("no target frame beyond the first to assign memories to")]
    NoTargets,
    #[error("record size {got:?} does not match bank size {expected:?}")]
    Dims { expected: (usize, usize), got: (usize, usize) },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryRecord {
    pub image: Image,
    pub depth: DepthMap,
    pub pose: CameraPose,
    pub time: u64,
}

/// Append-only store of frames with depth, pose and a strictly increasing
/// global time index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryBank {
    records: Vec<MemoryRecord>,
}

impl MemoryBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, image: Image, depth: DepthMap, pose: CameraPose, time: u64) -> Result<(), MemoryError> {
        if let Some(last) = self.records.last() {
            if time <= last.time {
                return Err(MemoryError::TimeOrder { time, last: last.time });
            }
            let expected = (last.image.width, last.image.height);
            if (image.width, image.height) != expected || (depth.width, depth.height) != expected {
                return Err(MemoryError::Dims {
                    expected,
                    got: (image.width, image.height),
                });
            }
        }
        self.records.push(MemoryRecord { image, depth, pose, time });
        Ok(())
    }

    /// Appends with the next time index.
    pub fn append(&mut self, image: Image, depth: DepthMap, pose: CameraPose) -> Result<u64, MemoryError> {
        let time = self.next_time();
        self.push(image, depth, pose, time)?;
        Ok(time)
    }

    pub fn next_time(&self) -> u64 {
        self.records.last().map_or(0, |r| r.time + 1)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn get(&self, i: usize) -> Option<&MemoryRecord> {
        self.records.get(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrustumParams {
    pub near: f64,
    pub far: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for FrustumParams {
    fn default() -> Self {
        Self {
            near: 0.1,
            far: 20.0,
            samples: 4096,
            seed: 0,
        }
    }
}

/// Stratified unit-cube samples mapped into frusta. The same samples serve
/// both frusta of every pair, which makes the estimate exactly symmetric.
#[derive(Debug, Clone)]
pub struct FrustumSampler {
    pub params: FrustumParams,
    unit: Vec<[f64; 3]>,
}

impl FrustumSampler {
    pub fn new(params: FrustumParams) -> Result<Self, MemoryError> {
        let FrustumParams { near, far, samples, seed } = params;
        if !(near > 0.0 && far > near && far.is_finite()) || samples == 0 {
            return Err(MemoryError::Frustum { near, far, samples });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = libm::round(libm::cbrt(samples as f64)) as usize;
        let unit = if g * g * g == samples {
            let mut pts = Vec::with_capacity(samples);
            for i in 0..g {
                for j in 0..g {
                    for k in 0..g {
                        let c = [i, j, k].map(|c| (c as f64 + rng.random::<f64>()) / g as f64);
                        pts.push(c);
                    }
                }
            }
            pts
        } else {
            // Latin hypercube: every axis stratified independently.
            let axes: [Vec<f64>; 3] = core::array::from_fn(|_| {
                let mut v: Vec<f64> = (0..samples).map(|i| (i as f64 + rng.random::<f64>()) / samples as f64).collect();
                v.shuffle(&mut rng);
                v
            });
            (0..samples).map(|i| [axes[0][i], axes[1][i], axes[2][i]]).collect()
        };
        Ok(Self { params, unit })
    }

    /// Camera-frame point of unit sample `s`, uniform in frustum volume.
    fn point(&self, s: &[f64; 3], k: &Intrinsics) -> Vector3<f64> {
        let (n, f) = (self.params.near, self.params.far);
        let z = libm::cbrt(n * n * n + s[2] * (f * f * f - n * n * n));
        let x = s[0] * k.width as f64 - 0.5;
        let y = s[1] * k.height as f64 - 0.5;
        k.unproject(x, y, z)
    }

    fn inside(&self, p_world: &Vector3<f64>, pose: &CameraPose, k: &Intrinsics) -> bool {
        let pc = pose.apply_inverse(p_world);
        let z = pc.z;
        if !(z >= self.params.near && z <= self.params.far) {
            return false;
        }
        let (u, v) = k.project(&pc);
        u >= -0.5 && u <= k.width as f64 - 0.5 && v >= -0.5 && v <= k.height as f64 - 0.5
    }

    /// Fraction of `a`'s frustum volume that lies inside `b`'s frustum.
    pub fn contained_fraction(&self, a: &CameraPose, b: &CameraPose, k: &Intrinsics) -> f64 {
        let hits = self
            .unit
            .iter()
            .filter(|s| self.inside(&a.apply(&self.point(s, k)), b, k))
            .count();
        hits as f64 / self.unit.len() as f64
    }

    /// Monte-Carlo IoU of two equal-volume frusta.
    pub fn iou(&self, a: &CameraPose, b: &CameraPose, k: &Intrinsics) -> f64 {
        if a == b {
            return 1.0;
        }
        let f = 0.5 * (self.contained_fraction(a, b, k) + self.contained_fraction(b, a, k));
        f / (2.0 - f)
    }
}

/// Frustum IoU between two cameras sharing intrinsics.
pub fn frustum_iou(a: &CameraPose, b: &CameraPose, k: &Intrinsics, params: FrustumParams) -> Result<f64, MemoryError> {
    Ok(FrustumSampler::new(params)?.iou(a, b, k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    /// Bank indices, best first.
    pub indices: Vec<usize>,
    /// Per selected frame, max IoU over targets.
    pub scores: Vec<f64>,
    /// `indices.len() x targets` IoU rows.
    pub iou: Vec<Vec<f64>>,
    /// 1-based target frame of each selected memory; empty when there is no
    /// frame beyond the first.
    pub assignments: Vec<usize>,
}

/// Top-`m` bank frames by best co-visibility with any target pose; ties go
/// to the more recent frame.
pub fn retrieve_top_m(
    bank: &MemoryBank,
    targets: &Trajectory,
    k: &Intrinsics,
    m: usize,
    sampler: &FrustumSampler,
) -> Result<RetrievalResult, MemoryError> {
    if bank.is_empty() {
        return Err(MemoryError::EmptyBank);
    }
    let rows: Vec<Vec<f64>> = bank
        .records()
        .iter()
        .map(|r| targets.poses().iter().map(|t| sampler.iou(&r.pose, t, k)).collect())
        .collect();
    let scores: Vec<f64> = rows.iter().map(|r| r.iter().copied().fold(0.0, f64::max)).collect();
    let mut order: Vec<usize> = (0..bank.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(bank.records()[b].time.cmp(&bank.records()[a].time))
    });
    order.truncate(m);
    let iou: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
    let assignments = if targets.len() >= 2 { assign_viewpoints(&iou)? } else { Vec::new() };
    Ok(RetrievalResult {
        scores: order.iter().map(|&i| scores[i]).collect(),
        indices: order,
        iou,
        assignments,
    })
}

/// `k_j = argmax_i iou[j][i]` over 1-based frames `2..=N`; ties go to the
/// smaller frame.
pub fn assign_viewpoints(iou: &[Vec<f64>]) -> Result<Vec<usize>, MemoryError> {
    iou.iter()
        .map(|row| {
            if row.len() < 2 {
                return Err(MemoryError::NoTargets);
            }
            let mut best = 1;
            for i in 2..row.len() {
                if row[i] > row[best] {
                    best = i;
                }
            }
            Ok(best + 1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn cam() -> Intrinsics {
        Intrinsics::new(32.0, 32.0, 31.5, 31.5, 64, 64).unwrap()
    }

    #[test]
    fn identical_and_disjoint() {
        let s = FrustumSampler::new(FrustumParams::default()).unwrap();
        let a = CameraPose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(s.iou(&a, &a, &cam()), 1.0);
        let b = CameraPose::from_axis_angle(Vector3::y(), PI, Vector3::new(0.0, 0.0, -200.0));
        assert_eq!(s.iou(&CameraPose::identity(), &b, &cam()), 0.0);
    }

    #[test]
    fn degenerate_frusta_rejected() {
        for p in [
            FrustumParams { near: 0.0, ..Default::default() },
            FrustumParams { far: 0.05, ..Default::default() },
            FrustumParams { samples: 0, ..Default::default() },
        ] {
            assert!(FrustumSampler::new(p).is_err());
        }
    }

    #[test]
    fn assignment_skips_first_frame() {
        assert_eq!(assign_viewpoints(&[alloc::vec![1.0, 0.2]]).unwrap(), [2]);
        assert_eq!(assign_viewpoints(&[alloc::vec![0.9, 0.4, 0.4, 0.1]]).unwrap(), [2]);
        assert_eq!(assign_viewpoints(&[alloc::vec![0.3, 0.4, 1.0]]).unwrap(), [3]);
        assert!(assign_viewpoints(&[alloc::vec![1.0]]).is_err());
    }

    #[test]
    fn singleton_bank_and_saturation() {
        let s = FrustumSampler::new(FrustumParams { samples: 512, ..Default::default() }).unwrap();
        let mut bank = MemoryBank::new();
        let far = CameraPose::from_translation(Vector3::new(500.0, 0.0, 0.0));
        bank.append(Image::new(64, 64), DepthMap::constant(64, 64, 1.0), far).unwrap();
        let targets = Trajectory::new(alloc::vec![CameraPose::identity(); 3]).unwrap();
        let r = retrieve_top_m(&bank, &targets, &cam(), 4, &s).unwrap();
        assert_eq!(r.indices, [0]);
        for x in [0.0, 0.5, 0.2] {
            bank.append(Image::new(64, 64), DepthMap::constant(64, 64, 1.0), CameraPose::from_translation(Vector3::new(x, 0.0, 0.0))).unwrap();
        }
        let r = retrieve_top_m(&bank, &targets, &cam(), 10, &s).unwrap();
        assert_eq!(r.indices, [1, 3, 2, 0]);
        assert!(bank.push(Image::new(64, 64), DepthMap::constant(64, 64, 1.0), CameraPose::identity(), 2).is_err());
    }
}
