//! Frozen camera-conditioned teacher: egocentric trajectory sampling,
//! privileged multi-view rendering from oracle geometry, scheduled noise
//! injection, frozen refinement and feature blocks, block-b* capture, and
//! frame pooling. Everything here is pure f64 outside the gradient graph;
//! the student only ever sees the detached pooled feature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{render, CameraPose, SceneSpec, IMAGE_SIZE};
use crate::tensor::{ParamStore, Tensor};

/// Latent grid side after 4x4 average pooling of the 32x32 frame.
pub const LATENT_SIDE: usize = IMAGE_SIZE / 4; // 8
pub const LATENT_PIXELS: usize = LATENT_SIDE * LATENT_SIDE; // 64
/// Teacher feature width; deliberately distinct from the student's d_h.
pub const D_T: usize = 96;
pub const FEATURE_BLOCKS: usize = 5;
const REFINE_HIDDEN: usize = 8;

/// LingBot-Fast denoising schedule positions.
pub const DEFAULT_SIGMA_SCHEDULE: [f64; 4] = [0.9998, 0.9580, 0.8994, 0.7024];

pub const DEFAULT_PROMPT: &str =
    "a slight camera motion with stable object layout and unchanged spatial relations";

#[derive(Debug, Error)]
pub enum TeacherError {
    #[error("non-finite teacher feature at block {block}")]
    NonFinite { block: usize },
    #[error("empty per-frame matrix")]
    EmptyFrames,
    #[error("trajectory has {traj} frames but config wants {cfg}")]
    FrameMismatch { traj: usize, cfg: usize },
    #[error("{0}")]
    Scene(#[from] crate::scene::SceneError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
    Left,
    Right,
    ForwardLeft,
    ForwardRight,
    BackwardLeft,
    BackwardRight,
}

impl Direction {
    pub const ALL: [Direction; 8] = [
        Direction::Forward,
        Direction::Backward,
        Direction::Left,
        Direction::Right,
        Direction::ForwardLeft,
        Direction::ForwardRight,
        Direction::BackwardLeft,
        Direction::BackwardRight,
    ];

    /// Unit vector in the camera frame (x right, z forward).
    pub fn unit(&self) -> [f64; 3] {
        let d = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Direction::Forward => [0.0, 0.0, 1.0],
            Direction::Backward => [0.0, 0.0, -1.0],
            Direction::Left => [-1.0, 0.0, 0.0],
            Direction::Right => [1.0, 0.0, 0.0],
            Direction::ForwardLeft => [-d, 0.0, d],
            Direction::ForwardRight => [d, 0.0, d],
            Direction::BackwardLeft => [-d, 0.0, -d],
            Direction::BackwardRight => [d, 0.0, -d],
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TrajectoryPose {
    /// Offset from the base camera, in the base camera's frame.
    pub translation: [f64; 3],
    pub yaw_delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraTrajectory {
    pub poses: Vec<TrajectoryPose>,
    pub direction: Direction,
    /// Per-step length in world units, constant along the trajectory.
    pub magnitude: f64,
}

/// Uniform direction tag, magnitude uniform in `magnitude_range`; pose 0
/// is always the identity (first frame = input view).
pub fn sample_trajectory(
    seed: u64,
    frame_count: usize,
    magnitude_range: [f64; 2],
) -> Result<CameraTrajectory, TeacherError> {
    if !(magnitude_range[0] > 0.0
        && magnitude_range[0] <= magnitude_range[1]
        && magnitude_range[1] <= 1.0)
    {
        return Err(TeacherError::Invalid(format!(
            "magnitude range {:?} outside (0, 1]",
            magnitude_range
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let direction = Direction::ALL[rng.gen_range(0..Direction::ALL.len())];
    let magnitude = rng.gen_range(magnitude_range[0]..=magnitude_range[1]);
    Ok(zero_or_directed_trajectory(direction, magnitude, frame_count))
}

pub fn zero_or_directed_trajectory(
    direction: Direction,
    magnitude: f64,
    frame_count: usize,
) -> CameraTrajectory {
    let unit = direction.unit();
    let poses = (0..frame_count)
        .map(|k| {
            let s = magnitude * k as f64 / 1.0;
            TrajectoryPose {
                translation: [unit[0] * s, unit[1] * s, unit[2] * s],
                yaw_delta: 0.0,
            }
        })
        .collect();
    CameraTrajectory {
        poses,
        direction,
        magnitude,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    First,
    Last,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    /// 1-based block of the 5-block feature network, in {2, 3, 4}.
    pub block_index: usize,
    pub denoise_steps: usize,
    pub sigma_schedule: Vec<f64>,
    pub frame_count: usize,
    pub pooling: Pooling,
    pub use_camera: bool,
    pub use_prompt: bool,
    pub prompt_text: String,
    /// Seed the frozen weights derive from.
    pub seed: u64,
    /// Noise amplitude multiplying the scheduled sigma; 0.0 disables
    /// injection. The sigma values assume unit-variance latents, while
    /// these latents are pooled renders with standard deviation around
    /// 0.15, so the default matches that scale to keep the intended
    /// noise-to-signal ratio.
    pub noise_scale: f64,
    pub magnitude_range: [f64; 2],
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            block_index: 3,
            denoise_steps: 2,
            sigma_schedule: DEFAULT_SIGMA_SCHEDULE.to_vec(),
            frame_count: 9,
            pooling: Pooling::Mean,
            use_camera: true,
            use_prompt: true,
            prompt_text: DEFAULT_PROMPT.to_string(),
            seed: 7,
            noise_scale: 0.15,
            magnitude_range: [0.1, 0.5],
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<(), TeacherError> {
        if !(2..=4).contains(&self.block_index) {
            return Err(TeacherError::Invalid(format!(
                "block_index {} outside 2..=4",
                self.block_index
            )));
        }
        if self.denoise_steps > self.sigma_schedule.len() {
            return Err(TeacherError::Invalid(format!(
                "denoise_steps {} exceeds schedule length {}",
                self.denoise_steps,
                self.sigma_schedule.len()
            )));
        }
        if !self.sigma_schedule.windows(2).all(|w| w[0] > w[1]) {
            return Err(TeacherError::Invalid(
                "sigma schedule must be strictly decreasing".into(),
            ));
        }
        Ok(())
    }

    /// Stable hash of the full config; keys the feature cache.
    pub fn cache_key(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        hex_lower(&h.finalize()[..8])
    }
}

fn hex_lower(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{:02x}", b)).collect()
}

#[derive(Debug, Clone)]
pub struct TeacherFeature {
    /// Pooled feature g(x_v), length [`D_T`].
    pub pooled: Vec<f64>,
    /// F x d_t pre-pooling matrix, retained for pooling ablations.
    pub per_frame: Vec<Vec<f64>>,
}

/// Frozen teacher weights; derived deterministically from the config seed
/// and never updated.
pub struct Teacher {
    pub config: TeacherConfig,
    pub weights: ParamStore,
}

fn frozen_tensor(seed: u64, name: &str, shape: &[usize], scale: f64) -> Tensor {
    let mut h = seed ^ 0x51_7cc1_b727_220a_95;
    for b in name.as_bytes() {
        h = (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite init")
}

/// FNV-1a over the prompt text; stable across platforms and runs.
pub fn stable_text_hash(text: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in text.as_bytes() {
        h = (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Teacher {
    pub fn new(config: TeacherConfig) -> Result<Self, TeacherError> {
        config.validate()?;
        let seed = config.seed;
        let mut w = ParamStore::new();
        let mut add = |name: &str, shape: &[usize], scale: f64| {
            w.insert(name.to_string(), frozen_tensor(seed, name, shape, scale));
        };
        for k in 0..DEFAULT_SIGMA_SCHEDULE.len() {
            add(&format!("teacher.refine{}.w1", k), &[2, REFINE_HIDDEN], 0.7);
            add(&format!("teacher.refine{}.b1", k), &[REFINE_HIDDEN], 0.3);
            add(&format!("teacher.refine{}.w2", k), &[REFINE_HIDDEN, 1], 0.7);
            add(&format!("teacher.refine{}.b2", k), &[1], 0.3);
        }
        add("teacher.embed.w", &[12, D_T], 0.8);
        add("teacher.embed.b", &[D_T], 0.2);
        add("teacher.cam.w", &[8, D_T], 0.2);
        add("teacher.cam.b", &[D_T], 0.1);
        for i in 0..FEATURE_BLOCKS {
            let s = (1.0 / D_T as f64).sqrt();
            add(&format!("teacher.block{}.w1", i), &[D_T, D_T], s * 0.9);
            add(&format!("teacher.block{}.b1", i), &[D_T], 0.1);
            add(&format!("teacher.block{}.w2", i), &[D_T, D_T], s * 1.8);
            add(&format!("teacher.block{}.b2", i), &[D_T], 0.1);
            add(
                &format!("teacher.block{}.mix", i),
                &[LATENT_PIXELS, LATENT_PIXELS],
                0.5,
            );
        }
        // prompt conditioning vector from a stable hash of the text
        let prompt_seed = stable_text_hash(&config.prompt_text);
        w.insert(
            "teacher.prompt.vec".to_string(),
            frozen_tensor(prompt_seed, "teacher.prompt.vec", &[D_T], 0.2),
        );
        Ok(Teacher { config, weights: w })
    }

    fn w(&self, name: &str) -> &Tensor {
        self.weights
            .get(name)
            .unwrap_or_else(|| panic!("missing teacher weight {}", name))
    }

    /// g(x_v): render privileged frames along the trajectory, pool to
    /// latents, inject scheduled noise, refine, condition, run the frozen
    /// feature network, capture block b*, spatially pool, then pool frames.
    pub fn features(
        &self,
        scene: &SceneSpec,
        traj: &CameraTrajectory,
        noise_seed: u64,
    ) -> Result<TeacherFeature, TeacherError> {
        let cfg = &self.config;
        if traj.poses.len() != cfg.frame_count {
            return Err(TeacherError::FrameMismatch {
                traj: traj.poses.len(),
                cfg: cfg.frame_count,
            });
        }
        // render, pool, inject noise, and refine every frame first; each
        // frame's feature then also consumes its parallax relative to the
        // first frame, so camera-motion cues (and through them depth)
        // survive the frame pooling instead of cancelling out
        let mut latents = Vec::with_capacity(cfg.frame_count);
        for pose in traj.poses.iter() {
            let base = &scene.base_camera;
            let world_offset = base.camera_to_world_dir(pose.translation);
            let camera = CameraPose {
                position: [
                    base.position[0] + world_offset[0],
                    base.position[1] + world_offset[1],
                    base.position[2] + world_offset[2],
                ],
                yaw: base.yaw + pose.yaw_delta,
            };
            let frame = render(scene, &camera)?;
            let mut latent = average_pool_4x4(&frame);

            // noise injection at the first schedule position; the draw is
            // keyed by the pose so identical poses (a zero-motion
            // trajectory) see identical noise and frames stay equal
            let sigma_inj = cfg.sigma_schedule.first().copied().unwrap_or(0.0);
            if cfg.noise_scale != 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(pose_noise_seed(noise_seed, pose));
                for v in latent.iter_mut() {
                    *v += cfg.noise_scale * sigma_inj * gaussian(&mut rng);
                }
            }
            for step in 0..cfg.denoise_steps {
                let sigma = cfg.sigma_schedule[step];
                self.refine(&mut latent, step, sigma);
            }
            latents.push(latent);
        }

        let zeros = vec![0.0; LATENT_PIXELS];
        let mut per_frame = Vec::with_capacity(cfg.frame_count);
        for (latent, pose) in latents.iter().zip(traj.poses.iter()) {
            let diff: Vec<f64> =
                latent.iter().zip(&latents[0]).map(|(a, b)| a - b).collect();
            // subtract the network's response to an empty frame at the
            // same pose: the frozen net's constant and pose-conditioned
            // components otherwise dominate the pooled feature, making
            // every scene's feature point in nearly the same direction
            // for a given trajectory and leaving almost no
            // scene-discriminative signal in the alignment target
            let mut pooled = self.frame_feature(latent, &diff, pose)?;
            let empty = self.frame_feature(&zeros, &zeros, pose)?;
            for (v, b) in pooled.iter_mut().zip(&empty) {
                *v -= *b;
            }
            per_frame.push(pooled);
        }
        let pooled = pool_frames(&per_frame, cfg.pooling)?;
        Ok(TeacherFeature { pooled, per_frame })
    }

    /// Embedding, conditioning, feature blocks, and spatial pooling for
    /// one refined frame latent plus its parallax against the first
    /// frame; shared by feature extraction and the per-pose baseline
    /// computation (which feeds empty latent and parallax at the frame's
    /// pose).
    fn frame_feature(
        &self,
        latent: &[f64],
        diff: &[f64],
        pose: &TrajectoryPose,
    ) -> Result<Vec<f64>, TeacherError> {
        let cfg = &self.config;
        let mut feat = self.embed(latent, diff);
        if cfg.use_camera {
            self.add_camera(&mut feat, pose);
        }
        if cfg.use_prompt {
            let p = self.w("teacher.prompt.vec").data();
            for px in 0..LATENT_PIXELS {
                for c in 0..D_T {
                    feat[px * D_T + c] += p[c];
                }
            }
        }

        let captured = self.run_blocks(&feat)?;
        // spatial mean pool to d_t
        let mut pooled = vec![0.0; D_T];
        for px in 0..LATENT_PIXELS {
            for c in 0..D_T {
                pooled[c] += captured[px * D_T + c];
            }
        }
        for v in pooled.iter_mut() {
            *v /= LATENT_PIXELS as f64;
        }
        Ok(pooled)
    }

    fn refine(&self, latent: &mut [f64], step: usize, sigma: f64) {
        let w1 = self.w(&format!("teacher.refine{}.w1", step)).data().to_vec();
        let b1 = self.w(&format!("teacher.refine{}.b1", step)).data().to_vec();
        let w2 = self.w(&format!("teacher.refine{}.w2", step)).data().to_vec();
        let b2 = self.w(&format!("teacher.refine{}.b2", step)).data()[0];
        for v in latent.iter_mut() {
            let mut acc = b2;
            for j in 0..REFINE_HIDDEN {
                let pre = *v * w1[j] + sigma * w1[REFINE_HIDDEN + j] + b1[j];
                acc += pre.max(0.0) * w2[j];
            }
            *v += acc;
        }
    }

    /// Per-pixel embedding with position-gated latent and parallax
    /// terms. The gated products (lat·x, lat·y, lat·x·y and likewise for
    /// the parallax channel) matter: with a shared latent weight alone,
    /// the spatial mean pool downstream would reduce the first-order
    /// scene response to total occupancy times one fixed direction,
    /// erasing layout from the pooled feature.
    fn embed(&self, latent: &[f64], diff: &[f64]) -> Vec<f64> {
        let w = self.w("teacher.embed.w").data();
        let b = self.w("teacher.embed.b").data();
        let mut feat = vec![0.0; LATENT_PIXELS * D_T];
        for px in 0..LATENT_PIXELS {
            let x = (px % LATENT_SIDE) as f64 / (LATENT_SIDE - 1) as f64 * 2.0 - 1.0;
            let y = (px / LATENT_SIDE) as f64 / (LATENT_SIDE - 1) as f64 * 2.0 - 1.0;
            let l = latent[px];
            let d = diff[px];
            let inp = [l, x, y, l * x, l * y, l * x * y, d, d * x, d * y, l * d, l * d * x, l * d * y];
            for c in 0..D_T {
                let mut acc = b[c];
                for (j, v) in inp.iter().enumerate() {
                    acc += v * w[j * D_T + c];
                }
                feat[px * D_T + c] = acc;
            }
        }
        feat
    }

    fn add_camera(&self, feat: &mut [f64], pose: &TrajectoryPose) {
        let enc = [
            pose.translation[0].sin(),
            pose.translation[0].cos(),
            pose.translation[1].sin(),
            pose.translation[1].cos(),
            pose.translation[2].sin(),
            pose.translation[2].cos(),
            pose.yaw_delta.sin(),
            pose.yaw_delta.cos(),
        ];
        let w = self.w("teacher.cam.w").data();
        let b = self.w("teacher.cam.b").data();
        let mut cam = vec![0.0; D_T];
        for c in 0..D_T {
            let mut acc = b[c];
            for (j, e) in enc.iter().enumerate() {
                acc += e * w[j * D_T + c];
            }
            cam[c] = acc;
        }
        for px in 0..LATENT_PIXELS {
            for c in 0..D_T {
                feat[px * D_T + c] += cam[c];
            }
        }
    }

    /// Five residual blocks (pointwise MLP + spatial mixing); returns the
    /// hidden state captured after 1-based block `block_index`.
    fn run_blocks(&self, feat: &[f64]) -> Result<Vec<f64>, TeacherError> {
        let mut f = feat.to_vec();
        for i in 0..FEATURE_BLOCKS {
            let w1 = self.w(&format!("teacher.block{}.w1", i)).data();
            let b1 = self.w(&format!("teacher.block{}.b1", i)).data();
            let w2 = self.w(&format!("teacher.block{}.w2", i)).data();
            let b2 = self.w(&format!("teacher.block{}.b2", i)).data();
            let mix = self.w(&format!("teacher.block{}.mix", i)).data();
            let mut next = f.clone();
            for px in 0..LATENT_PIXELS {
                let row = &f[px * D_T..(px + 1) * D_T];
                for c in 0..D_T {
                    let mut acc = b1[c];
                    for j in 0..D_T {
                        acc += row[j] * w1[j * D_T + c];
                    }
                    let t = acc.tanh();
                    for j in 0..D_T {
                        next[px * D_T + j] += t * w2[c * D_T + j] / D_T as f64;
                    }
                }
                for j in 0..D_T {
                    next[px * D_T + j] += b2[j];
                }
            }
            // spatial mixing across pixels, per channel
            let mut mixed = next.clone();
            for p in 0..LATENT_PIXELS {
                for q in 0..LATENT_PIXELS {
                    let m = mix[p * LATENT_PIXELS + q] / LATENT_PIXELS as f64;
                    if m != 0.0 {
                        for c in 0..D_T {
                            mixed[p * D_T + c] += m * next[q * D_T + c];
                        }
                    }
                }
            }
            f = mixed;
            if !f.iter().all(|v| v.is_finite()) {
                return Err(TeacherError::NonFinite { block: i + 1 });
            }
            if i + 1 == self.config.block_index {
                return Ok(f);
            }
        }
        Ok(f)
    }
}

pub fn average_pool_4x4(frame: &[f64]) -> Vec<f64> {
    let mut latent = vec![0.0; LATENT_PIXELS];
    for (i, v) in latent.iter_mut().enumerate() {
        let lx = i % LATENT_SIDE;
        let ly = i / LATENT_SIDE;
        let mut acc = 0.0;
        for dy in 0..4 {
            for dx in 0..4 {
                acc += frame[(ly * 4 + dy) * IMAGE_SIZE + lx * 4 + dx];
            }
        }
        *v = acc / 16.0;
    }
    latent
}

/// Noise stream key for one frame: the run-level seed folded with the
/// pose's bit pattern (FNV-1a), so equal poses draw equal noise.
pub fn pose_noise_seed(noise_seed: u64, pose: &TrajectoryPose) -> u64 {
    let mut h = noise_seed ^ 0xcbf2_9ce4_8422_2325;
    for v in pose.translation.iter().chain(std::iter::once(&pose.yaw_delta)) {
        h = (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniforms
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}


/// Arithmetic mean over the frame axis, or the first/last row.
pub fn pool_frames(per_frame: &[Vec<f64>], mode: Pooling) -> Result<Vec<f64>, TeacherError> {
    if per_frame.is_empty() {
        return Err(TeacherError::EmptyFrames);
    }
    Ok(match mode {
        Pooling::First => per_frame[0].clone(),
        Pooling::Last => per_frame[per_frame.len() - 1].clone(),
        Pooling::Mean => {
            let d = per_frame[0].len();
            let mut out = vec![0.0; d];
            for row in per_frame {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += *v;
                }
            }
            for v in out.iter_mut() {
                *v /= per_frame.len() as f64;
            }
            out
        }
    })
}
