//! Procedural indoor scenes: a room shell (floor, two walls, ceiling) with
//! axis-aligned furniture boxes, an analytic depth renderer based on exact
//! voxel traversal, and the observed / occluded / out-of-view partition.

pub mod camera;
pub mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use camera::{Camera, Intrinsics, Pose, Projection, Vec3};

use crate::voxcore::{GridSpec, LabelVolume, Visibility, VoxelError};

pub const FLOOR: u8 = 1;
pub const WALL: u8 = 2;
pub const CEILING: u8 = 3;
/// First furniture class; furniture occupies classes `FURNITURE..C`.
pub const FURNITURE: u8 = 4;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error("could not place {requested} boxes for seed {seed} (placed {placed})")]
    Placement {
        seed: u64,
        requested: usize,
        placed: usize,
    },
    #[error("camera at {0:?} is inside an occupied voxel or outside the grid")]
    CameraBlocked(Vec3),
    #[error("depth image is {got:?} pixels, camera expects {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error(transparent)]
    Voxel(#[from] VoxelError),
}

/// Box size range (meters, per world axis) for one furniture class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    pub class: u8,
    pub size_min: Vec3,
    pub size_max: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub grid: GridSpec,
    /// Room size in meters; must fit inside the grid.
    pub room_extent: Vec3,
    /// Inclusive range of furniture box counts.
    pub box_count: [usize; 2],
    pub priors: Vec<ClassPrior>,
    /// Camera height range in meters above the grid origin.
    pub camera_height: [f64; 2],
    pub image_width: usize,
    pub image_height: usize,
    pub focal_length: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::for_grid(GridSpec::default())
    }
}

impl SceneConfig {
    /// Default room filling the grid, with furniture priors cycling
    /// through low-wide, tall-narrow and cubic shapes for classes 4..C.
    pub fn for_grid(grid: GridSpec) -> Self {
        let shapes: [(Vec3, Vec3); 3] = [
            ([0.3, 0.6, 0.6], [0.6, 1.0, 1.0]),
            ([0.8, 0.3, 0.3], [1.4, 0.5, 0.5]),
            ([0.4, 0.4, 0.4], [0.7, 0.7, 0.7]),
        ];
        let priors = (FURNITURE as usize..grid.num_classes)
            .enumerate()
            .map(|(n, class)| {
                let (size_min, size_max) = shapes[n % shapes.len()];
                ClassPrior {
                    class: class as u8,
                    size_min,
                    size_max,
                }
            })
            .collect::<Vec<_>>();
        let room_extent = grid.extent();
        let box_count = if priors.is_empty() { [0, 0] } else { [2, 4] };
        Self {
            room_extent,
            box_count,
            priors,
            camera_height: [0.45 * room_extent[0], 0.65 * room_extent[0]],
            image_width: 128,
            image_height: 96,
            focal_length: 80.0,
            seed: 0,
            grid,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn room_voxels(&self) -> [usize; 3] {
        let s = self.grid.voxel_size;
        [
            (self.room_extent[0] / s).round() as usize,
            (self.room_extent[1] / s).round() as usize,
            (self.room_extent[2] / s).round() as usize,
        ]
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        self.grid.validate()?;
        if self.grid.num_classes < FURNITURE as usize {
            return Err(SceneError::Config(format!(
                "need at least {} classes for floor, walls and ceiling",
                FURNITURE
            )));
        }
        let room = self.room_voxels();
        let dims = self.grid.dims();
        for a in 0..3 {
            if !(self.room_extent[a] > 0.0) {
                return Err(SceneError::Config("room extent must be positive".into()));
            }
            if room[a] < 4 || room[a] > dims[a] {
                return Err(SceneError::Config(format!(
                    "room of {room:?} voxels does not fit grid {dims:?}"
                )));
            }
        }
        if self.box_count[0] > self.box_count[1] {
            return Err(SceneError::Config("box count range is empty".into()));
        }
        if self.box_count[1] > 0 && self.priors.is_empty() {
            return Err(SceneError::Config("boxes requested but no class priors".into()));
        }
        for p in &self.priors {
            if p.class < FURNITURE || p.class as usize >= self.grid.num_classes {
                return Err(SceneError::Config(format!(
                    "prior class {} outside furniture range",
                    p.class
                )));
            }
            if (0..3).any(|a| !(p.size_min[a] > 0.0 && p.size_min[a] <= p.size_max[a])) {
                return Err(SceneError::Config(format!(
                    "bad size range for class {}",
                    p.class
                )));
            }
        }
        let h = self.camera_height;
        if !(h[0] > 0.0 && h[0] <= h[1] && h[1] < self.room_extent[0]) {
            return Err(SceneError::Config(format!("bad camera height range {h:?}")));
        }
        if self.image_width == 0 || self.image_height == 0 || !(self.focal_length > 0.0) {
            return Err(SceneError::Config("bad image geometry".into()));
        }
        Ok(())
    }
}

/// Per-pixel depths along the optical axis in meters; 0 means no return.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub depths: Vec<f32>,
    pub camera: Camera,
}

impl DepthImage {
    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f32 {
        self.depths[v * self.width + u]
    }
}

/// A generated scene before rendering.
#[derive(Clone, Debug)]
pub struct Scene {
    pub labels: LabelVolume,
    pub camera: Camera,
}

/// A fully prepared sample: labels with visibility, plus the depth image.
#[derive(Clone, Debug)]
pub struct SceneSample {
    pub seed: u64,
    pub labels: LabelVolume,
    pub depth: DepthImage,
}

struct Footprint {
    lo: [usize; 3],
    hi: [usize; 3],
}

impl Footprint {
    fn overlaps(&self, other: &Footprint) -> bool {
        (0..3).all(|a| self.lo[a] < other.hi[a] && other.lo[a] < self.hi[a])
    }
}

/// Builds the label volume and a camera pose, deterministic in `config.seed`.
///
/// Visibility is left all-occluded; see [`synthesize`] for the full sample.
pub fn generate_scene(config: &SceneConfig) -> Result<Scene, SceneError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let spec = config.grid.clone();
    let vs = spec.voxel_size;
    let room = config.room_voxels();
    let mut vol = LabelVolume::empty(spec.clone());

    // Shell: floor and ceiling slabs, far walls along axes 1 and 2.
    for j in 0..room[1] {
        for k in 0..room[2] {
            vol.set(0, j, k, FLOOR);
            vol.set(room[0] - 1, j, k, CEILING);
        }
    }
    for i in 1..room[0] - 1 {
        for k in 0..room[2] {
            vol.set(i, room[1] - 1, k, WALL);
        }
        for j in 0..room[1] {
            vol.set(i, j, room[2] - 1, WALL);
        }
    }

    // Camera near the open corner, looking toward the room center.
    let ext = config.room_extent;
    let height = rng.gen_range(config.camera_height[0]..=config.camera_height[1]);
    let eye = [
        spec.origin[0] + height,
        spec.origin[1] + rng.gen_range(0.12..0.25) * ext[1],
        spec.origin[2] + rng.gen_range(0.12..0.25) * ext[2],
    ];
    let target = [
        spec.origin[0] + 0.3 * ext[0],
        spec.origin[1] + rng.gen_range(0.55..0.7) * ext[1],
        spec.origin[2] + rng.gen_range(0.55..0.7) * ext[2],
    ];
    let camera = Camera {
        intrinsics: Intrinsics::centered(
            config.image_width,
            config.image_height,
            config.focal_length,
        ),
        pose: Pose::look_at(eye, target),
    };
    let cam_j = ((eye[1] - spec.origin[1]) / vs).floor() as isize;
    let cam_k = ((eye[2] - spec.origin[2]) / vs).floor() as isize;
    let keep_out = Footprint {
        lo: [0, (cam_j - 2).max(0) as usize, (cam_k - 2).max(0) as usize],
        hi: [room[0], (cam_j + 3) as usize, (cam_k + 3) as usize],
    };

    let requested = rng.gen_range(config.box_count[0]..=config.box_count[1]);
    let mut placed: Vec<Footprint> = Vec::with_capacity(requested);
    for _ in 0..requested {
        let mut ok = false;
        for _attempt in 0..200 {
            let prior = &config.priors[rng.gen_range(0..config.priors.len())];
            let mut size = [0usize; 3];
            for a in 0..3 {
                let m = rng.gen_range(prior.size_min[a]..=prior.size_max[a]);
                size[a] = ((m / vs).round() as usize).max(1);
            }
            // Stay between floor and ceiling and clear of the far walls.
            if size[0] > room[0] - 2 || size[1] > room[1] - 1 || size[2] > room[2] - 1 {
                continue;
            }
            let j0 = rng.gen_range(0..=room[1] - 1 - size[1]);
            let k0 = rng.gen_range(0..=room[2] - 1 - size[2]);
            let fp = Footprint {
                lo: [1, j0, k0],
                hi: [1 + size[0], j0 + size[1], k0 + size[2]],
            };
            if fp.overlaps(&keep_out) || placed.iter().any(|p| p.overlaps(&fp)) {
                continue;
            }
            for i in fp.lo[0]..fp.hi[0] {
                for j in fp.lo[1]..fp.hi[1] {
                    for k in fp.lo[2]..fp.hi[2] {
                        vol.set(i, j, k, prior.class);
                    }
                }
            }
            placed.push(fp);
            ok = true;
            break;
        }
        if !ok {
            return Err(SceneError::Placement {
                seed: config.seed,
                requested,
                placed: placed.len(),
            });
        }
    }

    Ok(Scene {
        labels: vol,
        camera,
    })
}

fn world_to_grid(spec: &GridSpec, p: Vec3) -> Vec3 {
    [
        (p[0] - spec.origin[0]) / spec.voxel_size,
        (p[1] - spec.origin[1]) / spec.voxel_size,
        (p[2] - spec.origin[2]) / spec.voxel_size,
    ]
}

fn voxel_of(spec: &GridSpec, g: Vec3) -> Option<[usize; 3]> {
    let dims = spec.dims();
    let mut out = [0usize; 3];
    for a in 0..3 {
        let f = g[a].floor();
        if f < 0.0 || f >= dims[a] as f64 {
            return None;
        }
        out[a] = f as usize;
    }
    Some(out)
}

/// Distance parameter at which a ray from inside the grid first enters an
/// occupied voxel, or `None` when it leaves the grid first.
fn traverse(vol: &LabelVolume, start: Vec3, dir: Vec3) -> Option<f64> {
    let spec = &vol.spec;
    let dims = spec.dims();
    let g0 = world_to_grid(spec, start);
    let dg = [
        dir[0] / spec.voxel_size,
        dir[1] / spec.voxel_size,
        dir[2] / spec.voxel_size,
    ];
    let mut cell = voxel_of(spec, g0)?.map(|c| c as isize);
    let mut step = [0isize; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        if dg[a] > 0.0 {
            step[a] = 1;
            t_max[a] = ((cell[a] + 1) as f64 - g0[a]) / dg[a];
            t_delta[a] = 1.0 / dg[a];
        } else if dg[a] < 0.0 {
            step[a] = -1;
            t_max[a] = (cell[a] as f64 - g0[a]) / dg[a];
            t_delta[a] = -1.0 / dg[a];
        }
    }
    loop {
        let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        if !t_max[axis].is_finite() {
            return None;
        }
        let t = t_max[axis];
        cell[axis] += step[axis];
        if cell[axis] < 0 || cell[axis] >= dims[axis] as isize {
            return None;
        }
        if vol.is_occupied(cell[0] as usize, cell[1] as usize, cell[2] as usize) {
            return Some(t);
        }
        t_max[axis] += t_delta[axis];
    }
}

/// Renders projective depth by stepping each pixel ray through the grid.
pub fn render_depth(scene: &LabelVolume, camera: &Camera) -> Result<DepthImage, SceneError> {
    let eye = camera.pose.translation;
    match voxel_of(&scene.spec, world_to_grid(&scene.spec, eye)) {
        Some([i, j, k]) if !scene.is_occupied(i, j, k) => {}
        _ => return Err(SceneError::CameraBlocked(eye)),
    }
    let (w, h) = (camera.intrinsics.width, camera.intrinsics.height);
    let mut depths = vec![0f32; w * h];
    for v in 0..h {
        for u in 0..w {
            let dir = camera.pixel_ray(u, v);
            if let Some(t) = traverse(scene, eye, dir) {
                depths[v * w + u] = t as f32;
            }
        }
    }
    Ok(DepthImage {
        width: w,
        height: h,
        depths,
        camera: camera.clone(),
    })
}

/// Classifies each voxel center against the depth image.
///
/// A voxel is observed when its center's projective depth is at most the
/// pixel depth plus half a voxel (pixels without a return see free space
/// all the way), occluded when it projects into the image but lies further
/// back, and out of view otherwise.
pub fn compute_visibility(
    scene: &LabelVolume,
    depth: &DepthImage,
) -> Result<Vec<Visibility>, SceneError> {
    let k = &depth.camera.intrinsics;
    if depth.width != k.width
        || depth.height != k.height
        || depth.depths.len() != depth.width * depth.height
    {
        return Err(SceneError::ShapeMismatch {
            expected: (k.width, k.height),
            got: (depth.width, depth.height),
        });
    }
    let spec = &scene.spec;
    let half = 0.5 * spec.voxel_size;
    let mut vis = Vec::with_capacity(spec.voxel_count());
    for i in 0..spec.height {
        for j in 0..spec.width {
            for kk in 0..spec.depth {
                let state = match depth.camera.project(spec.voxel_center(i, j, kk)) {
                    None => Visibility::OutOfView,
                    Some(p) => {
                        let d = depth.at(p.u, p.v) as f64;
                        if d <= 0.0 || p.z <= d + half * (1.0 + 1e-9) {
                            Visibility::Observed
                        } else {
                            Visibility::Occluded
                        }
                    }
                };
                vis.push(state);
            }
        }
    }
    Ok(vis)
}

/// Generates, renders, and attaches visibility in one call.
pub fn synthesize(config: &SceneConfig) -> Result<SceneSample, SceneError> {
    let scene = generate_scene(config)?;
    let depth = render_depth(&scene.labels, &scene.camera)?;
    let visibility = compute_visibility(&scene.labels, &depth)?;
    let mut labels = scene.labels;
    labels.visibility = visibility;
    Ok(SceneSample {
        seed: config.seed,
        labels,
        depth,
    })
}
