//! Pinhole camera built from the game's logged pose.
//!
//! Camera frame: +X right, +Y down, +Z forward. The extrinsic matrix maps
//! camera coordinates to world coordinates; projection applies its inverse.
//! With yaw 0 the camera looks along world +Z and yaw 90 degrees looks
//! along -X; positive pitch looks down.

use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::grid::VoxelCoord;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CameraError {
    #[error("field of view {0} rad is outside (0, pi)")]
    InvalidFov(f64),
    #[error("image size {0}x{1} must be positive")]
    InvalidImageSize(u32, u32),
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("pose is not finite")]
    NonFinitePose,
}

/// `tan(fov / 2)`, exact for a 90 degree field of view where the library
/// tangent of pi/4 lands one ulp below 1.
fn tan_half(fov: f64) -> f64 {
    let half = fov / 2.0;
    if (half - std::f64::consts::FRAC_PI_4).abs() <= 4.0 * f64::EPSILON {
        1.0
    } else {
        half.tan()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    /// Square-pixel intrinsics from the horizontal field of view.
    pub fn from_fov(fov_h: f64, width: u32, height: u32) -> Result<Self, CameraError> {
        if !(fov_h > 0.0 && fov_h < std::f64::consts::PI) {
            return Err(CameraError::InvalidFov(fov_h));
        }
        if width == 0 || height == 0 {
            return Err(CameraError::InvalidImageSize(width, height));
        }
        let f = width as f64 / (2.0 * tan_half(fov_h));
        Ok(Self {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        })
    }

    /// Same construction for sources that log the vertical field of view.
    pub fn from_vertical_fov(fov_v: f64, width: u32, height: u32) -> Result<Self, CameraError> {
        if !(fov_v > 0.0 && fov_v < std::f64::consts::PI) {
            return Err(CameraError::InvalidFov(fov_v));
        }
        if width == 0 || height == 0 {
            return Err(CameraError::InvalidImageSize(width, height));
        }
        let f = height as f64 / (2.0 * tan_half(fov_v));
        Ok(Self {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Closed bounds check `[0, W] x [0, H]`.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        (0.0..=self.width as f64).contains(&u) && (0.0..=self.height as f64).contains(&v)
    }
}

/// Camera position in block units plus yaw and pitch in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub yaw: f64,
    pub pitch: f64,
}

impl Pose {
    /// Pitch is clamped to `[-pi/2, pi/2]`.
    pub fn new(position: [f64; 3], yaw: f64, pitch: f64) -> Result<Self, CameraError> {
        if !(position.iter().all(|c| c.is_finite()) && yaw.is_finite() && pitch.is_finite()) {
            return Err(CameraError::NonFinitePose);
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        Ok(Self {
            position: Vector3::from(position),
            yaw,
            pitch: pitch.clamp(-half_pi, half_pi),
        })
    }

    pub fn from_degrees(position: [f64; 3], yaw_deg: f64, pitch_deg: f64) -> Result<Self, CameraError> {
        Self::new(position, yaw_deg.to_radians(), pitch_deg.to_radians())
    }

    /// Block the camera sits in.
    pub fn block(&self) -> VoxelCoord {
        VoxelCoord::floor([self.position.x, self.position.y, self.position.z])
    }
}

/// Rotation about world Y by `yaw + pi` followed by rotation about the
/// camera X axis by `pitch + pi`, written out in closed form.
pub fn rotation_from_yaw_pitch(yaw: f64, pitch: f64) -> Matrix3<f64> {
    let (st, ct) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    Matrix3::new(
        -ct, 0.0, -st,
        st * sp, -cp, -ct * sp,
        -st * cp, -sp, ct * cp,
    )
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Extrinsics {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_pose(pose: &Pose) -> Self {
        Self {
            rotation: rotation_from_yaw_pitch(pose.yaw, pose.pitch),
            translation: pose.position,
        }
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: [f64; 3]) -> Self {
        Self { rotation, translation: Vector3::from(translation) }
    }

    /// Reads the upper 3x4 block of a homogeneous matrix.
    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Self {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn camera_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        (self.rotation * Vector3::from(p) + self.translation).into()
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        (self.rotation.transpose() * (Vector3::from(p) - self.translation)).into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Projects a world point to pixel coordinates.
pub fn project(point: [f64; 3], extrinsics: &Extrinsics, intrinsics: &Intrinsics) -> Result<Projection, CameraError> {
    let [x, y, z] = extrinsics.world_to_camera(point);
    if z <= 0.0 {
        return Err(CameraError::BehindCamera(z));
    }
    Ok(Projection {
        u: intrinsics.fx * x / z + intrinsics.cx,
        v: intrinsics.fy * y / z + intrinsics.cy,
        depth: z,
    })
}

/// Projects the center of a block.
pub fn project_voxel(v: VoxelCoord, extrinsics: &Extrinsics, intrinsics: &Intrinsics) -> Result<Projection, CameraError> {
    project(v.center(), extrinsics, intrinsics)
}

/// One entry of poses.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: String,
    pub pos: [f64; 3],
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    /// Optional explicit camera-to-world matrix (row-major 4x4); overrides
    /// `pos`/`yaw_deg`/`pitch_deg` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<[[f64; 4]; 4]>,
}

fn default_fov() -> f64 {
    70.0
}

impl FrameRecord {
    pub fn pose(&self) -> Result<Pose, CameraError> {
        Pose::from_degrees(self.pos, self.yaw_deg, self.pitch_deg)
    }

    pub fn extrinsics(&self) -> Result<Extrinsics, CameraError> {
        match &self.matrix {
            Some(rows) => {
                let m = Matrix4::from_fn(|r, c| rows[r][c]);
                Ok(Extrinsics::from_matrix(&m))
            }
            None => Ok(Extrinsics::from_pose(&self.pose()?)),
        }
    }

    pub fn intrinsics(&self, width: u32, height: u32, vertical_fov: bool) -> Result<Intrinsics, CameraError> {
        let fov = self.fov_deg.to_radians();
        if vertical_fov {
            Intrinsics::from_vertical_fov(fov, width, height)
        } else {
            Intrinsics::from_fov(fov, width, height)
        }
    }

    /// File stem of the frame name (`0001.png` becomes `0001`).
    pub fn stem(&self) -> &str {
        Path::new(&self.frame)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&self.frame)
    }
}

pub fn parse_poses(text: &str) -> Result<Vec<FrameRecord>, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn load_poses(path: impl AsRef<Path>) -> std::io::Result<Vec<FrameRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_poses(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
