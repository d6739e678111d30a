use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::render::{project_point, CameraPose};
use super::vocab::CLASS_LABELS;
use super::IMAGE_SIZE;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("placement failed after {attempts} attempts with config {config}")]
    PlacementFailed { attempts: usize, config: String },
    #[error("object {id} behind camera (depth {depth:.3} <= near plane 0.1)")]
    BehindCamera { id: usize, depth: f64 },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneObject {
    pub id: usize,
    pub class_label: String,
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
    pub base_camera: CameraPose,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    /// World box [x_min, x_max, y_min, y_max, z_min, z_max] in camera frame
    /// of the base camera (camera at origin, yaw 0, looking along +z).
    pub world_box: [f64; 6],
    pub radius_range: [f64; 2],
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            min_objects: 2,
            max_objects: 5,
            world_box: [-2.5, 2.5, -1.8, 1.8, 4.0, 10.0],
            radius_range: [0.35, 0.8],
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.min_objects < 2
            || self.max_objects > CLASS_LABELS.len()
            || self.min_objects > self.max_objects
        {
            return Err(SceneError::Invalid(format!(
                "object count range [{}, {}] invalid",
                self.min_objects, self.max_objects
            )));
        }
        if self.radius_range[0] <= 0.0 || self.radius_range[0] > self.radius_range[1] {
            return Err(SceneError::Invalid("bad radius range".into()));
        }
        for d in 0..3 {
            if self.world_box[2 * d] >= self.world_box[2 * d + 1] {
                return Err(SceneError::Invalid("degenerate world box".into()));
            }
        }
        Ok(())
    }
}

const MAX_ATTEMPTS: usize = 1000;

/// Deterministic in `seed`; rejection-resamples until no two objects
/// interpenetrate and every object projects fully inside the frame.
pub fn sample_scene(seed: u64, config: &SceneConfig) -> Result<SceneSpec, SceneError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = CameraPose::identity();
    let count_range = config.min_objects..=config.max_objects;

    for _attempt in 0..MAX_ATTEMPTS {
        let n = rng.gen_range(count_range.clone());
        // distinct labels per scene
        let mut labels: Vec<usize> = (0..CLASS_LABELS.len()).collect();
        for i in (1..labels.len()).rev() {
            let j = rng.gen_range(0..=i);
            labels.swap(i, j);
        }
        let mut objects: Vec<SceneObject> = Vec::with_capacity(n);
        let mut ok = true;
        for id in 0..n {
            let radius = rng.gen_range(config.radius_range[0]..=config.radius_range[1]);
            let center = [
                rng.gen_range(config.world_box[0]..=config.world_box[1]),
                rng.gen_range(config.world_box[2]..=config.world_box[3]),
                rng.gen_range(config.world_box[4]..=config.world_box[5]),
            ];
            let candidate = SceneObject {
                id,
                class_label: CLASS_LABELS[labels[id]].to_string(),
                center,
                radius,
            };
            if !placement_ok(&candidate, &objects, &camera) {
                ok = false;
                break;
            }
            objects.push(candidate);
        }
        if ok {
            return Ok(SceneSpec {
                objects,
                base_camera: camera,
                seed,
            });
        }
    }
    Err(SceneError::PlacementFailed {
        attempts: MAX_ATTEMPTS,
        config: serde_json::to_string(config).unwrap_or_default(),
    })
}

fn placement_ok(candidate: &SceneObject, placed: &[SceneObject], camera: &CameraPose) -> bool {
    for other in placed {
        let d2: f64 = (0..3)
            .map(|k| (candidate.center[k] - other.center[k]).powi(2))
            .sum();
        let min = candidate.radius + other.radius;
        if d2 <= min * min {
            return false;
        }
    }
    // fully inside the frustum: projected disk stays in frame
    let (u, v, z) = match project_point(candidate.center, camera) {
        Ok(p) => p,
        Err(_) => return false,
    };
    let f = IMAGE_SIZE as f64;
    let pr = candidate.radius * f / z;
    u - pr >= 0.0 && u + pr < f && v - pr >= 0.0 && v + pr < f
}
