//! Synthetic BEV scene generation and training-clip preparation.
//!
//! Scenes are a deterministic function of `(ScenarioParams, seed)`: objects
//! are born by a per-frame Poisson process, move with constant velocity plus
//! Gaussian positional noise, can be temporarily occluded (flagged, never
//! removed from ground truth), and die either by chance or by leaving the
//! arena. Scenes split into fixed-length clips for sequential training, and
//! clips are drawn class-balanced, with replacement, for episode sampling.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::TrackId;

/// Axis-aligned-free BEV box: center, extent, heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevBox {
    pub cx: f64,
    pub cy: f64,
    pub length: f64,
    pub width: f64,
    /// Heading in radians, normalized to `[-pi, pi)`.
    pub yaw: f64,
}

impl BevBox {
    pub fn new(cx: f64, cy: f64, length: f64, width: f64, yaw: f64) -> Self {
        BevBox {
            cx,
            cy,
            length,
            width,
            yaw: normalize_yaw(yaw),
        }
    }

    /// Euclidean distance between box centers; the only geometric quantity
    /// matching and metrics consume.
    pub fn center_distance(&self, other: &BevBox) -> f64 {
        let dx = self.cx - other.cx;
        let dy = self.cy - other.cy;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Map any angle into `[-pi, pi)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut y = yaw % two_pi;
    if y < -std::f64::consts::PI {
        y += two_pi;
    } else if y >= std::f64::consts::PI {
        y -= two_pi;
    }
    y
}

/// One ground-truth object in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub track_id: TrackId,
    pub class_id: usize,
    #[serde(flatten)]
    pub bev_box: BevBox,
    pub vx: f64,
    pub vy: f64,
    /// False while the object is occluded. Occluded objects stay annotated.
    pub visible: bool,
}

impl GtObject {
    pub fn center(&self) -> (f64, f64) {
        (self.bev_box.cx, self.bev_box.cy)
    }
}

/// All annotations at one timestamp. The timestamp itself is derived:
/// `index / frame_rate_hz`, see [`Scene::timestamp_s`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: usize,
    pub objects: Vec<GtObject>,
}

impl Frame {
    pub fn object(&self, track_id: TrackId) -> Option<&GtObject> {
        self.objects.iter().find(|o| o.track_id == track_id)
    }

    pub fn contains_track(&self, track_id: TrackId) -> bool {
        self.object(track_id).is_some()
    }
}

/// Generation controls. Defaults mirror a 40-frame, 2 Hz annotated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub num_frames: usize,
    pub frame_rate_hz: f64,
    pub initial_objects: usize,
    /// Expected births per frame (Poisson).
    pub birth_rate: f64,
    /// Per-object, per-frame death probability.
    pub death_prob: f64,
    /// Per-object, per-frame probability of an occlusion starting.
    pub occlusion_prob: f64,
    /// Mean occlusion length in frames (geometric, support >= 1).
    pub occlusion_mean_len: f64,
    /// Objects live in `[-e, e] x [-e, e]`; leaving the arena terminates them.
    pub arena_half_extent: f64,
    /// Speeds drawn uniformly from `[min, max]` m/s.
    pub speed_range: (f64, f64),
    /// Std of the per-axis Gaussian position noise added each step (meters).
    pub motion_noise_std: f64,
    pub num_classes: usize,
    /// Optional class sampling weights; uniform when absent.
    pub class_weights: Option<Vec<f64>>,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            num_frames: 40,
            frame_rate_hz: 2.0,
            initial_objects: 4,
            birth_rate: 0.3,
            death_prob: 0.02,
            occlusion_prob: 0.05,
            occlusion_mean_len: 3.0,
            arena_half_extent: 20.0,
            speed_range: (0.5, 3.0),
            motion_noise_std: 0.05,
            num_classes: 7,
            class_weights: None,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames < 1 {
            return Err(Error::parameter("num_frames", "must be >= 1"));
        }
        if !(self.frame_rate_hz > 0.0) {
            return Err(Error::parameter("frame_rate_hz", "must be > 0"));
        }
        if self.birth_rate < 0.0 || !self.birth_rate.is_finite() {
            return Err(Error::parameter("birth_rate", "must be a finite rate >= 0"));
        }
        for (field, p) in [
            ("death_prob", self.death_prob),
            ("occlusion_prob", self.occlusion_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::parameter(field, format!("{p} is outside [0, 1]")));
            }
        }
        if self.occlusion_mean_len < 1.0 {
            return Err(Error::parameter("occlusion_mean_len", "must be >= 1 frame"));
        }
        if !(self.arena_half_extent > 0.0) {
            return Err(Error::parameter("arena_half_extent", "must be > 0"));
        }
        let (lo, hi) = self.speed_range;
        if !(lo >= 0.0 && hi >= lo) {
            return Err(Error::parameter("speed_range", "need 0 <= min <= max"));
        }
        if self.motion_noise_std < 0.0 {
            return Err(Error::parameter("motion_noise_std", "must be >= 0"));
        }
        if self.num_classes < 1 {
            return Err(Error::parameter("num_classes", "must be >= 1"));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.num_classes {
                return Err(Error::parameter(
                    "class_weights",
                    format!("expected {} weights, got {}", self.num_classes, w.len()),
                ));
            }
            if w.iter().any(|x| *x < 0.0 || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::parameter(
                    "class_weights",
                    "weights must be finite, >= 0, with positive sum",
                ));
            }
        }
        Ok(())
    }
}

/// A full generated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    pub seed: u64,
    pub params: ScenarioParams,
    pub frames: Vec<Frame>,
}

impl Scene {
    pub fn timestamp_s(&self, frame_index: usize) -> f64 {
        frame_index as f64 / self.params.frame_rate_hz
    }

    /// First frame index in which `track_id` appears, if it ever does.
    pub fn birth_frame(&self, track_id: TrackId) -> Option<usize> {
        self.frames
            .iter()
            .find(|f| f.contains_track(track_id))
            .map(|f| f.index)
    }

    /// Total object annotations across all frames.
    pub fn total_gt(&self) -> usize {
        self.frames.iter().map(|f| f.objects.len()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Scene> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Contiguous frame window `[start, end)` cut from a scene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clip {
    pub scene_id: u64,
    pub frame_range: (usize, usize),
    pub class_set: BTreeSet<usize>,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.frame_range.1 - self.frame_range.0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct ActiveObject {
    track_id: TrackId,
    class_id: usize,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    length: f64,
    width: f64,
    occluded_left: usize,
}

impl ActiveObject {
    fn snapshot(&self) -> GtObject {
        GtObject {
            track_id: self.track_id,
            class_id: self.class_id,
            bev_box: BevBox::new(
                self.x,
                self.y,
                self.length,
                self.width,
                self.vy.atan2(self.vx),
            ),
            vx: self.vx,
            vy: self.vy,
            visible: self.occluded_left == 0,
        }
    }
}

fn sample_class(rng: &mut rng::Stream, params: &ScenarioParams) -> usize {
    let u: f64 = rng.gen();
    match &params.class_weights {
        None => ((u * params.num_classes as f64) as usize).min(params.num_classes - 1),
        Some(w) => {
            let total: f64 = w.iter().sum();
            let mut acc = 0.0;
            for (i, wi) in w.iter().enumerate() {
                acc += wi / total;
                if u < acc {
                    return i;
                }
            }
            params.num_classes - 1
        }
    }
}

fn spawn_object(rng: &mut rng::Stream, params: &ScenarioParams, track_id: TrackId) -> ActiveObject {
    let class_id = sample_class(rng, params);
    let e = params.arena_half_extent;
    let x = rng.gen_range(-e..e);
    let y = rng.gen_range(-e..e);
    let (lo, hi) = params.speed_range;
    let speed = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let heading = rng.gen_range(0.0..std::f64::consts::TAU);
    let length = rng.gen_range(3.0..5.5);
    let width = rng.gen_range(1.5..2.2);
    ActiveObject {
        track_id,
        class_id,
        x,
        y,
        vx: speed * heading.cos(),
        vy: speed * heading.sin(),
        length,
        width,
        occluded_left: 0,
    }
}

/// Knuth's product method; exact for the small rates used here.
fn sample_poisson(rng: &mut rng::Stream, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    let limit = (-rate).exp();
    let mut product: f64 = rng.gen();
    let mut count = 0;
    while product > limit {
        count += 1;
        product *= rng.gen::<f64>();
    }
    count
}

/// Geometric length with mean `mean_len`, support `>= 1`.
fn sample_occlusion_len(rng: &mut rng::Stream, mean_len: f64) -> usize {
    if mean_len <= 1.0 {
        return 1;
    }
    let p = 1.0 / mean_len;
    let u: f64 = rng.gen();
    let len = ((1.0 - u).ln() / (1.0 - p).ln()).floor() as usize + 1;
    len.max(1)
}

/// Generate a scene deterministically from `(params, seed)`.
///
/// Per frame, in order: existing objects advance (constant velocity plus
/// noise) and may die by chance or by exiting the arena; occlusion state
/// updates; Poisson births spawn new objects. Objects are emitted sorted by
/// `track_id`, and track ids are never reused.
pub fn generate_scenario(params: &ScenarioParams, seed: u64) -> Result<Scene> {
    params.validate()?;
    let mut stream = rng::stream(seed, rng::TAG_SCENE);
    let noise = Normal::new(0.0, params.motion_noise_std.max(f64::MIN_POSITIVE))
        .expect("std validated non-negative");
    let dt = 1.0 / params.frame_rate_hz;
    let e = params.arena_half_extent;

    let mut next_track_id: TrackId = 0;
    let mut active: Vec<ActiveObject> = Vec::new();
    let mut frames = Vec::with_capacity(params.num_frames);

    for _ in 0..params.initial_objects {
        active.push(spawn_object(&mut stream, params, next_track_id));
        next_track_id += 1;
    }

    for frame_index in 0..params.num_frames {
        if frame_index > 0 {
            // Advance and cull in track-id order (spawn order is id order).
            let mut survivors = Vec::with_capacity(active.len());
            for mut obj in active {
                obj.x += obj.vx * dt
                    + if params.motion_noise_std > 0.0 {
                        noise.sample(&mut stream)
                    } else {
                        0.0
                    };
                obj.y += obj.vy * dt
                    + if params.motion_noise_std > 0.0 {
                        noise.sample(&mut stream)
                    } else {
                        0.0
                    };
                let dies = stream.gen::<f64>() < params.death_prob;
                let exits = obj.x.abs() > e || obj.y.abs() > e;
                if !dies && !exits {
                    survivors.push(obj);
                }
            }
            active = survivors;
        }

        for obj in active.iter_mut() {
            if obj.occluded_left > 0 {
                obj.occluded_left -= 1;
            } else if stream.gen::<f64>() < params.occlusion_prob {
                obj.occluded_left = sample_occlusion_len(&mut stream, params.occlusion_mean_len);
            }
        }

        let births = sample_poisson(&mut stream, params.birth_rate);
        for _ in 0..births {
            active.push(spawn_object(&mut stream, params, next_track_id));
            next_track_id += 1;
        }

        let mut objects: Vec<GtObject> = active.iter().map(|o| o.snapshot()).collect();
        objects.sort_by_key(|o| o.track_id);
        frames.push(Frame {
            index: frame_index,
            objects,
        });
    }

    Ok(Scene {
        scene_id: 0,
        seed,
        params: params.clone(),
        frames,
    })
}

/// Partition a scene's frames into clips of at most `max_clip_len` frames.
pub fn split_clips(scene: &Scene, max_clip_len: usize) -> Result<Vec<Clip>> {
    if max_clip_len < 2 {
        return Err(Error::parameter("max_clip_len", "must be >= 2"));
    }
    let n = scene.frames.len();
    let mut clips = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + max_clip_len).min(n);
        let mut class_set = BTreeSet::new();
        for frame in &scene.frames[start..end] {
            for obj in &frame.objects {
                class_set.insert(obj.class_id);
            }
        }
        clips.push(Clip {
            scene_id: scene.scene_id,
            frame_range: (start, end),
            class_set,
        });
        start = end;
    }
    Ok(clips)
}

/// Sample clips class-balanced, with replacement: draw a class uniformly
/// among classes present in at least one clip, then a clip uniformly among
/// clips containing that class.
pub fn class_balanced_clip_sampler(
    clips: &[Clip],
    num_samples: usize,
    seed: u64,
) -> Result<Vec<Clip>> {
    if clips.is_empty() {
        return Err(Error::parameter("clips", "clip list is empty"));
    }
    if num_samples < 1 {
        return Err(Error::parameter("num_samples", "must be >= 1"));
    }
    let mut classes: BTreeSet<usize> = BTreeSet::new();
    for clip in clips {
        classes.extend(clip.class_set.iter().copied());
    }
    let classes: Vec<usize> = classes.into_iter().collect();
    let mut stream = rng::stream(seed, rng::TAG_CLIP_SAMPLER);
    let mut sampled = Vec::with_capacity(num_samples);
    if classes.is_empty() {
        // Degenerate: no clip contains any object; fall back to uniform clips.
        for _ in 0..num_samples {
            let idx = stream.gen_range(0..clips.len());
            sampled.push(clips[idx].clone());
        }
        return Ok(sampled);
    }
    for _ in 0..num_samples {
        let class = classes[stream.gen_range(0..classes.len())];
        let candidates: Vec<&Clip> = clips
            .iter()
            .filter(|c| c.class_set.contains(&class))
            .collect();
        let idx = stream.gen_range(0..candidates.len());
        sampled.push(candidates[idx].clone());
    }
    Ok(sampled)
}
