//! Dataset and memory-bank directory layouts.
//!
//! ```text
//! <root>/dataset.json
//! <root>/scene_000/scene.json
//! <root>/scene_000/clip_000/{clip.json, poses.json}
//! <root>/scene_000/clip_000/frames/00000.png
//! <root>/scene_000/clip_000/depth/00000.f32
//! <root>/scene_000/clip_000/curation/00000.sample/{image.png, mask.png, depth.f32, meta.json}
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ucm_core::curation::{ClipData, CurationSample, DatasetConfig, LoopSpline, SceneData, SceneSpec, VideoClip};
use ucm_core::geometry::{compose, CameraPose, Intrinsics, Trajectory};
use ucm_core::memory::MemoryBank;

use crate::formats::{
    create_dir, read_depth, read_image, read_json, read_mask, read_poses, write_depth, write_image, write_json, write_mask, write_poses,
    IoError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub seed: u64,
    pub config: DatasetConfig,
    pub scenes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipMeta {
    pub class: usize,
    pub frames: usize,
    pub samples: usize,
    pub spline: LoopSpline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    /// Source frame index.
    pub i: usize,
    /// Pose offset applied to the target pose, row-major 4x4.
    pub delta_c: [[f64; 4]; 4],
    /// Temporal shift from source to target frame.
    pub delta_i: i64,
}

pub fn scene_dir(root: &Path, s: usize) -> PathBuf {
    root.join(format!("scene_{s:03}"))
}

pub fn clip_dir(root: &Path, s: usize, c: usize) -> PathBuf {
    scene_dir(root, s).join(format!("clip_{c:03}"))
}

fn frame_name(i: usize, ext: &str) -> String {
    format!("{i:05}.{ext}")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DatasetCounts {
    pub scenes: usize,
    pub clips: usize,
    pub frames: usize,
    pub samples: usize,
}

pub fn write_clip(dir: &Path, data: &ClipData) -> Result<(), IoError> {
    let clip = &data.clip;
    for (i, (img, d)) in clip.frames.iter().zip(&clip.depths).enumerate() {
        write_image(&dir.join("frames").join(frame_name(i, "png")), img)?;
        write_depth(&dir.join("depth").join(frame_name(i, "f32")), d)?;
    }
    write_poses(&dir.join("poses.json"), &clip.intrinsics, &clip.trajectory)?;
    write_json(
        &dir.join("clip.json"),
        &ClipMeta {
            class: clip.class,
            frames: clip.len(),
            samples: data.samples.len(),
            spline: data.spline.clone(),
        },
    )?;
    let (w, h) = (clip.intrinsics.width as usize, clip.intrinsics.height as usize);
    for (j, s) in data.samples.iter().enumerate() {
        let sd = dir.join("curation").join(frame_name(j, "sample"));
        create_dir(&sd)?;
        write_image(&sd.join("image.png"), &s.image)?;
        write_mask(&sd.join("mask.png"), &s.mask, w, h)?;
        write_depth(&sd.join("depth.f32"), &s.depth)?;
        write_json(
            &sd.join("meta.json"),
            &SampleMeta {
                i: s.source,
                delta_c: s.offset.to_rows(),
                delta_i: s.shift,
            },
        )?;
    }
    Ok(())
}

pub fn write_dataset(root: &Path, seed: u64, cfg: &DatasetConfig, scenes: &[SceneData]) -> Result<DatasetCounts, IoError> {
    create_dir(root)?;
    let mut counts = DatasetCounts::default();
    let mut names = Vec::with_capacity(scenes.len());
    for (s, scene) in scenes.iter().enumerate() {
        let sd = scene_dir(root, s);
        create_dir(&sd)?;
        write_json(&sd.join("scene.json"), &scene.spec)?;
        for (c, clip) in scene.clips.iter().enumerate() {
            write_clip(&clip_dir(root, s, c), clip)?;
            counts.clips += 1;
            counts.frames += clip.clip.len();
            counts.samples += clip.samples.len();
        }
        names.push(sd.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        counts.scenes += 1;
    }
    write_json(
        &root.join("dataset.json"),
        &DatasetMeta {
            seed,
            config: cfg.clone(),
            scenes: names,
        },
    )?;
    Ok(counts)
}

fn read_sample(dir: &Path, clip: &VideoClip) -> Result<CurationSample, IoError> {
    let meta: SampleMeta = read_json(&dir.join("meta.json"))?;
    let meta_path = dir.join("meta.json");
    let offset = CameraPose::from_rows(&meta.delta_c).map_err(|e| IoError::format(&meta_path, e.to_string()))?;
    let target = meta.i as i64 + meta.delta_i;
    if meta.i >= clip.len() || target < 0 || target as usize >= clip.len() {
        return Err(IoError::format(&meta_path, "source or target frame out of range"));
    }
    let (mask, w, h) = read_mask(&dir.join("mask.png"))?;
    let image = read_image(&dir.join("image.png"))?;
    let depth = read_depth(&dir.join("depth.f32"))?;
    if (w, h) != (image.width, image.height) || (w, h) != (depth.width, depth.height) {
        return Err(IoError::format(dir, "sample rasters disagree in size"));
    }
    Ok(CurationSample {
        source: meta.i,
        offset,
        shift: meta.delta_i,
        pose: compose(&clip.trajectory[target as usize], &offset),
        image,
        mask,
        depth,
    })
}

pub fn read_clip(dir: &Path) -> Result<ClipData, IoError> {
    let meta: ClipMeta = read_json(&dir.join("clip.json"))?;
    let (k, traj) = read_poses(&dir.join("poses.json"))?;
    if traj.len() != meta.frames {
        return Err(IoError::format(&dir.join("poses.json"), "pose count differs from clip.json"));
    }
    let mut frames = Vec::with_capacity(meta.frames);
    let mut depths = Vec::with_capacity(meta.frames);
    for i in 0..meta.frames {
        frames.push(read_image(&dir.join("frames").join(frame_name(i, "png")))?);
        depths.push(read_depth(&dir.join("depth").join(frame_name(i, "f32")))?);
    }
    let clip = VideoClip::new(frames, traj, depths, k, meta.class).map_err(|e| IoError::format(dir, e.to_string()))?;
    let samples = (0..meta.samples)
        .map(|j| read_sample(&dir.join("curation").join(frame_name(j, "sample")), &clip))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ClipData {
        clip,
        spline: meta.spline,
        samples,
    })
}

pub struct Dataset {
    pub meta: DatasetMeta,
    pub scenes: Vec<SceneData>,
}

impl Dataset {
    pub fn clips(&self) -> impl Iterator<Item = &ClipData> {
        self.scenes.iter().flat_map(|s| s.clips.iter())
    }
}

pub fn read_dataset(root: &Path) -> Result<Dataset, IoError> {
    let meta: DatasetMeta = read_json(&root.join("dataset.json"))?;
    let mut scenes = Vec::with_capacity(meta.scenes.len());
    for name in &meta.scenes {
        let sd = root.join(name);
        let spec: SceneSpec = read_json(&sd.join("scene.json"))?;
        let clips = (0..meta.config.clips_per_scene)
            .map(|c| read_clip(&sd.join(format!("clip_{c:03}"))))
            .collect::<Result<Vec<_>, _>>()?;
        scenes.push(SceneData { spec, clips });
    }
    Ok(Dataset { meta, scenes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankIndex {
    /// Global time index of each stored frame, in storage order.
    pub times: Vec<u64>,
}

/// Bank layout: `frames/`, `depth/`, `poses.json` and `index.json`.
pub fn write_bank(dir: &Path, bank: &MemoryBank, k: &Intrinsics) -> Result<(), IoError> {
    create_dir(dir)?;
    let mut poses = Vec::with_capacity(bank.len());
    for (i, r) in bank.records().iter().enumerate() {
        write_image(&dir.join("frames").join(frame_name(i, "png")), &r.image)?;
        write_depth(&dir.join("depth").join(frame_name(i, "f32")), &r.depth)?;
        poses.push(r.pose);
    }
    write_json(
        &dir.join("index.json"),
        &BankIndex {
            times: bank.records().iter().map(|r| r.time).collect(),
        },
    )?;
    if let Ok(traj) = Trajectory::new(poses) {
        write_poses(&dir.join("poses.json"), k, &traj)?;
    }
    Ok(())
}

pub fn read_bank(dir: &Path) -> Result<MemoryBank, IoError> {
    let index: BankIndex = read_json(&dir.join("index.json"))?;
    let mut bank = MemoryBank::new();
    if index.times.is_empty() {
        return Ok(bank);
    }
    let (_, traj) = read_poses(&dir.join("poses.json"))?;
    if traj.len() != index.times.len() {
        return Err(IoError::format(&dir.join("index.json"), "index and pose counts differ"));
    }
    for (i, &t) in index.times.iter().enumerate() {
        let image = read_image(&dir.join("frames").join(frame_name(i, "png")))?;
        let depth = read_depth(&dir.join("depth").join(frame_name(i, "f32")))?;
        bank.push(image, depth, traj[i], t)
            .map_err(|e| IoError::format(&dir.join("index.json"), e.to_string()))?;
    }
    Ok(bank)
}
