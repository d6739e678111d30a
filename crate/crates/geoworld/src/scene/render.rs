use serde::{Deserialize, Serialize};

use super::spec::{SceneError, SceneSpec};
use super::vocab::class_intensity;
use super::IMAGE_SIZE;

const NEAR_PLANE: f64 = 0.1;

/// Camera position + yaw about the world y axis. Yaw 0 looks along +z;
/// positive yaw turns toward +x. Image v grows downward with world y.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CameraPose {
    pub position: [f64; 3],
    pub yaw: f64,
}

impl CameraPose {
    pub fn identity() -> Self {
        CameraPose {
            position: [0.0; 3],
            yaw: 0.0,
        }
    }

    /// World point into this camera's frame.
    pub fn to_camera_frame(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [
            p[0] - self.position[0],
            p[1] - self.position[1],
            p[2] - self.position[2],
        ];
        let (s, c) = self.yaw.sin_cos();
        // inverse of yaw rotation about y
        [c * d[0] - s * d[2], d[1], s * d[0] + c * d[2]]
    }

    /// Offset expressed in this camera's frame into a world translation.
    pub fn camera_to_world_dir(&self, v: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Projection {
    pub object_id: usize,
    /// Image column of the projected center.
    pub u: f64,
    /// Image row of the projected center.
    pub v: f64,
    pub depth: f64,
    /// Projected disk radius in pixels.
    pub radius_px: f64,
}

/// Pinhole with focal length f = image width: (x,y,z) in camera frame maps
/// to (f*x/z + W/2, f*y/z + H/2), depth = z.
pub fn project_point(world: [f64; 3], camera: &CameraPose) -> Result<(f64, f64, f64), SceneError> {
    let p = camera.to_camera_frame(world);
    if p[2] <= NEAR_PLANE {
        return Err(SceneError::BehindCamera {
            id: usize::MAX,
            depth: p[2],
        });
    }
    let f = IMAGE_SIZE as f64;
    Ok((f * p[0] / p[2] + f / 2.0, f * p[1] / p[2] + f / 2.0, p[2]))
}

pub fn project(scene: &SceneSpec, camera: &CameraPose) -> Result<Vec<Projection>, SceneError> {
    let f = IMAGE_SIZE as f64;
    scene
        .objects
        .iter()
        .map(|obj| {
            let (u, v, depth) = project_point(obj.center, camera).map_err(|e| match e {
                SceneError::BehindCamera { depth, .. } => SceneError::BehindCamera {
                    id: obj.id,
                    depth,
                },
                other => other,
            })?;
            Ok(Projection {
                object_id: obj.id,
                u,
                v,
                depth,
                radius_px: obj.radius * f / depth,
            })
        })
        .collect()
}

/// Rasterize objects as filled disks, nearer objects overdrawing farther
/// (painter's order by depth); background 0, borders clip silently.
/// Objects at or behind the near plane are culled, not an error: a moving
/// camera may legitimately pass an object.
pub fn render(scene: &SceneSpec, camera: &CameraPose) -> Result<Vec<f64>, SceneError> {
    let mut image = vec![0.0; IMAGE_SIZE * IMAGE_SIZE];
    let mut projs = Vec::new();
    for obj in &scene.objects {
        match project_point(obj.center, camera) {
            Ok((u, v, depth)) => projs.push(Projection {
                object_id: obj.id,
                u,
                v,
                depth,
                radius_px: obj.radius * IMAGE_SIZE as f64 / depth,
            }),
            Err(SceneError::BehindCamera { .. }) => continue,
            Err(other) => return Err(other),
        }
    }
    projs.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    for p in &projs {
        let intensity = class_intensity(&scene.objects[p.object_id].class_label);
        let r2 = p.radius_px * p.radius_px;
        let lo_y = (p.v - p.radius_px).floor().max(0.0) as usize;
        let hi_y = ((p.v + p.radius_px).ceil() as i64).min(IMAGE_SIZE as i64 - 1);
        let lo_x = (p.u - p.radius_px).floor().max(0.0) as usize;
        let hi_x = ((p.u + p.radius_px).ceil() as i64).min(IMAGE_SIZE as i64 - 1);
        if hi_y < 0 || hi_x < 0 {
            continue;
        }
        for y in lo_y..=hi_y as usize {
            for x in lo_x..=hi_x as usize {
                let dx = x as f64 + 0.5 - p.u;
                let dy = y as f64 + 0.5 - p.v;
                if dx * dx + dy * dy <= r2 {
                    image[y * IMAGE_SIZE + x] = intensity;
                }
            }
        }
    }
    Ok(image)
}
