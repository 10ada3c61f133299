use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Pinhole intrinsics. Pixel `(u, v)` has its center at `(u + 0.5, v + 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        Self {
            width,
            height,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }
}

/// Rigid camera-to-world transform. Camera frame: x right, y down, z forward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Row-major rotation; its columns are the camera axes in world frame.
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl Pose {
    /// Camera at `eye` looking at `target`, with world axis 0 as up.
    pub fn look_at(eye: Vec3, target: Vec3) -> Self {
        let forward = normalize(sub(target, eye));
        let up = [1.0, 0.0, 0.0];
        let right = normalize(cross(forward, up));
        let down = cross(forward, right);
        Self {
            rotation: [
                [right[0], down[0], forward[0]],
                [right[1], down[1], forward[1]],
                [right[2], down[2], forward[2]],
            ],
            translation: eye,
        }
    }

    pub fn camera_to_world_dir(&self, d: Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[0][1] * d[1] + r[0][2] * d[2],
            r[1][0] * d[0] + r[1][1] * d[1] + r[1][2] * d[2],
            r[2][0] * d[0] + r[2][1] * d[1] + r[2][2] * d[2],
        ]
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        let q = sub(p, self.translation);
        let r = &self.rotation;
        [
            r[0][0] * q[0] + r[1][0] * q[1] + r[2][0] * q[2],
            r[0][1] * q[0] + r[1][1] * q[1] + r[2][1] * q[2],
            r[0][2] * q[0] + r[1][2] * q[1] + r[2][2] * q[2],
        ]
    }

    pub fn matrix(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = self.translation;
        [
            [r[0][0], r[0][1], r[0][2], t[0]],
            [r[1][0], r[1][1], r[1][2], t[1]],
            [r[2][0], r[2][1], r[2][2], t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_matrix(m: &[[f64; 4]; 4]) -> Self {
        Self {
            rotation: [
                [m[0][0], m[0][1], m[0][2]],
                [m[1][0], m[1][1], m[1][2]],
                [m[2][0], m[2][1], m[2][2]],
            ],
            translation: [m[0][3], m[1][3], m[2][3]],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

/// Where a world point lands in the image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: usize,
    pub v: usize,
    /// Depth along the optical axis.
    pub z: f64,
}

impl Camera {
    /// World-space ray direction through the center of pixel `(u, v)`,
    /// scaled so its camera-frame z component is 1. Ray parameters are
    /// therefore projective depths.
    pub fn pixel_ray(&self, u: usize, v: usize) -> Vec3 {
        let k = &self.intrinsics;
        let d = [
            (u as f64 + 0.5 - k.cx) / k.fx,
            (v as f64 + 0.5 - k.cy) / k.fy,
            1.0,
        ];
        self.pose.camera_to_world_dir(d)
    }

    pub fn project(&self, p: Vec3) -> Option<Projection> {
        let c = self.pose.world_to_camera(p);
        if c[2] <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        let u = k.fx * c[0] / c[2] + k.cx;
        let v = k.fy * c[1] / c[2] + k.cy;
        if !(u >= 0.0 && v >= 0.0 && u < k.width as f64 && v < k.height as f64) {
            return None;
        }
        Some(Projection {
            u: u as usize,
            v: v as usize,
            z: c[2],
        })
    }
}
