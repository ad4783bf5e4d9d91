//! Synthetic marker detector.
//!
//! Two square markers sit on the mower's top plane. A pinhole camera at the
//! dock looks back along the approach axis; the detector reports the center
//! of each marker's axis-aligned image bounding box in normalized
//! coordinates, `u` to the right and `v` downward, both in `(-1, 1)` with the
//! principal point at the origin.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DockError, Result};
use crate::sim::{Pose, SimConfig};

const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    pub focal_px: f64,
    pub width_px: u32,
    pub height_px: u32,
    /// Height of the optical center above the mower-top plane (m).
    pub cam_height: f64,
    /// Camera position on the approach axis (m).
    pub cam_y: f64,
    /// Downward pitch of the optical axis below horizontal (rad). When
    /// absent, the camera is aimed at the midpoint of the two markers at
    /// the goal pose.
    pub pitch: Option<f64>,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            focal_px: 1000.0,
            width_px: 1280,
            height_px: 960,
            cam_height: 0.5,
            cam_y: 2.4,
            pitch: None,
        }
    }
}

/// Camera with its pitch resolved, ready for projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub model: CameraModel,
    pub pitch: f64,
    center: [f64; 3],
    right: [f64; 3],
    down: [f64; 3],
    forward: [f64; 3],
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl Camera {
    pub fn new(model: CameraModel, layout: &MarkerLayout, sim: &SimConfig) -> Result<Self> {
        model.validate()?;
        let pitch = match model.pitch {
            Some(p) => p,
            None => {
                let mid = sim.y_goal + 0.5 * (layout.front_offset + layout.rear_offset);
                model.cam_height.atan2(model.cam_y - mid)
            }
        };
        if !pitch.is_finite() {
            return Err(DockError::Config(format!("non-finite camera pitch {pitch}")));
        }
        Ok(Self::with_pitch(model, pitch))
    }

    pub fn with_pitch(model: CameraModel, pitch: f64) -> Self {
        let (s, c) = pitch.sin_cos();
        Camera {
            model,
            pitch,
            center: [0.0, model.cam_y, model.cam_height],
            // Looking back along -y, the camera's right is world -x.
            right: [-1.0, 0.0, 0.0],
            down: [0.0, s, -c],
            forward: [0.0, -c, -s],
        }
    }

    /// Optical center in world coordinates (mower-top plane at z = 0).
    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    /// Camera axes (right, down, forward) in world coordinates.
    pub fn axes(&self) -> [[f64; 3]; 3] {
        [self.right, self.down, self.forward]
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.model.width_px as f64
    }

    pub fn half_height(&self) -> f64 {
        0.5 * self.model.height_px as f64
    }

    /// Pixel offsets from the principal point and the depth of a point on
    /// the marker plane. `None` when the point is not in front of the camera.
    pub fn project_offset(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let q = [x - self.center[0], y - self.center[1], -self.center[2]];
        let depth = dot(self.forward, q);
        if depth <= MIN_DEPTH {
            return None;
        }
        let f = self.model.focal_px;
        Some((f * dot(self.right, q) / depth, f * dot(self.down, q) / depth))
    }

    /// Pixel coordinates (column, row) with pixel centers at half-integers.
    pub fn project_pixel(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        self.project_offset(x, y)
            .map(|(dc, dr)| (self.half_width() + dc, self.half_height() + dr))
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.focal_px.is_finite()
            && self.focal_px > 0.0
            && self.width_px > 0
            && self.height_px > 0
            && self.cam_height.is_finite()
            && self.cam_y.is_finite();
        if ok {
            Ok(())
        } else {
            Err(DockError::Config(format!("invalid camera model {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerLayout {
    /// Distance of marker 1 forward of the rear axle (m).
    pub front_offset: f64,
    /// Distance of marker 2 forward of the rear axle (m).
    pub rear_offset: f64,
    pub marker_half_size: f64,
}

impl Default for MarkerLayout {
    fn default() -> Self {
        MarkerLayout {
            front_offset: 0.55,
            rear_offset: 0.10,
            marker_half_size: 0.04,
        }
    }
}

impl MarkerLayout {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rear_offset >= 0.0
            && self.front_offset > self.rear_offset
            && self.marker_half_size > 0.0
            && self.front_offset.is_finite();
        if ok {
            Ok(())
        } else {
            Err(DockError::Config(format!("invalid marker layout {self:?}")))
        }
    }

    pub fn offsets(&self) -> [f64; 2] {
        [self.front_offset, self.rear_offset]
    }

    /// World-plane centers of marker 1 and marker 2.
    pub fn marker_centers(&self, pose: &Pose) -> [(f64, f64); 2] {
        let (fx, fy) = pose.forward();
        self.offsets().map(|off| (pose.x + off * fx, pose.y + off * fy))
    }

    /// Corners of each marker square, in winding order.
    pub fn marker_corners(&self, pose: &Pose) -> [[(f64, f64); 4]; 2] {
        let (fx, fy) = pose.forward();
        let (lx, ly) = (fy, -fx);
        let h = self.marker_half_size;
        self.marker_centers(pose).map(|(cx, cy)| {
            [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)]
                .map(|(a, b): (f64, f64)| (cx + h * (a * fx + b * lx), cy + h * (a * fy + b * ly)))
        })
    }
}

/// Normalized bounding-box centers of both markers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerObservation {
    pub u1: f64,
    pub v1: f64,
    pub u2: f64,
    pub v2: f64,
    pub in_view: [bool; 2],
}

impl MarkerObservation {
    pub fn new(u1: f64, v1: f64, u2: f64, v2: f64) -> Self {
        MarkerObservation {
            u1,
            v1,
            u2,
            v2,
            in_view: [true, true],
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.u1, self.v1, self.u2, self.v2]
    }

    pub fn marker(&self, i: usize) -> (f64, f64) {
        match i {
            0 => (self.u1, self.v1),
            1 => (self.u2, self.v2),
            _ => panic!("marker index {i} out of range"),
        }
    }

    pub fn set_marker(&mut self, i: usize, (u, v): (f64, f64)) {
        match i {
            0 => (self.u1, self.v1) = (u, v),
            1 => (self.u2, self.v2) = (u, v),
            _ => panic!("marker index {i} out of range"),
        }
    }

    pub fn any_in_view(&self) -> bool {
        self.in_view[0] || self.in_view[1]
    }

    pub fn all_in_view(&self) -> bool {
        self.in_view[0] && self.in_view[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorNoise {
    /// Standard deviation of the center jitter, in pixels.
    pub sigma_px: f64,
    /// Probability that a marker is missed in a frame.
    pub dropout_prob: f64,
}

impl Default for DetectorNoise {
    fn default() -> Self {
        DetectorNoise::NONE
    }
}

impl DetectorNoise {
    pub const NONE: DetectorNoise = DetectorNoise {
        sigma_px: 0.0,
        dropout_prob: 0.0,
    };

    pub fn jitter(sigma_px: f64) -> Self {
        DetectorNoise {
            sigma_px,
            dropout_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_px.is_finite() && self.sigma_px >= 0.0 && (0.0..1.0).contains(&self.dropout_prob) {
            Ok(())
        } else {
            Err(DockError::Config(format!("invalid detector noise {self:?}")))
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_px == 0.0 && self.dropout_prob == 0.0
    }
}

fn bbox_center(cam: &Camera, corners: &[(f64, f64); 4]) -> Option<(f64, f64)> {
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in corners {
        let (dc, dr) = cam.project_offset(x, y)?;
        lo = (lo.0.min(dc), lo.1.min(dr));
        hi = (hi.0.max(dc), hi.1.max(dr));
    }
    // Averaging offsets (not absolute pixels) keeps symmetric boxes exactly centered.
    Some((
        0.5 * (lo.0 + hi.0) / cam.half_width(),
        0.5 * (lo.1 + hi.1) / cam.half_height(),
    ))
}

/// Detects both markers at `pose`. A marker behind the camera or with its
/// box center outside the frame is reported with `in_view = false`.
pub fn project_markers(pose: &Pose, layout: &MarkerLayout, cam: &Camera) -> MarkerObservation {
    let mut obs = MarkerObservation {
        u1: 0.0,
        v1: 0.0,
        u2: 0.0,
        v2: 0.0,
        in_view: [false, false],
    };
    for (i, corners) in layout.marker_corners(pose).iter().enumerate() {
        if let Some((u, v)) = bbox_center(cam, corners) {
            obs.set_marker(i, (u, v));
            obs.in_view[i] = u.abs() < 1.0 && v.abs() < 1.0;
        }
    }
    obs
}

/// Marker `v` coordinates at the goal pose `(0, y_goal, 0)`.
pub fn goal_anchor_values(layout: &MarkerLayout, cam: &Camera, cfg: &SimConfig) -> Result<(f64, f64)> {
    let obs = project_markers(&Pose::new(0.0, cfg.y_goal, 0.0), layout, cam);
    if !obs.all_in_view() {
        return Err(DockError::Config(format!(
            "goal pose is not in view of the camera: {obs:?}"
        )));
    }
    Ok((obs.v1, obs.v2))
}

/// Jitters in-view centers and randomly drops markers.
pub fn apply_noise<R: Rng + ?Sized>(
    obs: &MarkerObservation,
    noise: &DetectorNoise,
    cam: &Camera,
    rng: &mut R,
) -> MarkerObservation {
    if noise.is_zero() {
        return *obs;
    }
    let mut out = *obs;
    let jitter = (noise.sigma_px > 0.0).then(|| {
        (
            Normal::new(0.0, noise.sigma_px / cam.half_width()).expect("sigma validated"),
            Normal::new(0.0, noise.sigma_px / cam.half_height()).expect("sigma validated"),
        )
    });
    for i in 0..2 {
        if !out.in_view[i] {
            continue;
        }
        if let Some((du, dv)) = &jitter {
            let (u, v) = out.marker(i);
            out.set_marker(i, (u + du.sample(rng), v + dv.sample(rng)));
        }
        if noise.dropout_prob > 0.0 && rng.random::<f64>() < noise.dropout_prob {
            out.in_view[i] = false;
        }
    }
    out
}

/// RGB raster of the simulated camera view.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
}

impl Frame {
    pub fn pixel(&self, col: u32, row: u32) -> [u8; 3] {
        let i = 3 * (row as usize * self.width as usize + col as usize);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let write = || -> std::io::Result<()> {
            let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
            write!(f, "P6\n{} {}\n255\n", self.width, self.height)?;
            f.write_all(&self.rgb)?;
            f.flush()
        };
        write().map_err(|e| DockError::io(path, e))
    }
}

pub const MARKER_COLORS: [[u8; 3]; 2] = [[220, 30, 30], [0, 0, 0]];

/// Renders both markers as filled quadrilaterals on a white background.
pub fn render_frame(pose: &Pose, layout: &MarkerLayout, cam: &Camera) -> Frame {
    let (w, h) = (cam.model.width_px, cam.model.height_px);
    let mut rgb = vec![255u8; 3 * w as usize * h as usize];
    for (marker, corners) in layout.marker_corners(pose).iter().enumerate().rev() {
        let Some(quad) = corners
            .iter()
            .map(|&(x, y)| cam.project_pixel(x, y))
            .collect::<Option<Vec<_>>>()
        else {
            continue;
        };
        let (c0, c1) = quad.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.0), hi.max(p.0))
        });
        let (r0, r1) = quad.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.1), hi.max(p.1))
        });
        let col_range = (c0.floor().max(0.0) as u32)..(c1.ceil().min(w as f64).max(0.0) as u32);
        let row_range = (r0.floor().max(0.0) as u32)..(r1.ceil().min(h as f64).max(0.0) as u32);
        for row in row_range {
            for col in col_range.clone() {
                let p = (col as f64 + 0.5, row as f64 + 0.5);
                if inside_convex(&quad, p) {
                    let i = 3 * (row as usize * w as usize + col as usize);
                    rgb[i..i + 3].copy_from_slice(&MARKER_COLORS[marker]);
                }
            }
        }
    }
    Frame {
        width: w,
        height: h,
        rgb,
    }
}

fn inside_convex(quad: &[(f64, f64)], p: (f64, f64)) -> bool {
    let mut sign = 0.0;
    for i in 0..quad.len() {
        let a = quad[i];
        let b = quad[(i + 1) % quad.len()];
        let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        if cross != 0.0 {
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_camera() -> (MarkerLayout, Camera, SimConfig) {
        let layout = MarkerLayout::default();
        let sim = SimConfig::default();
        let cam = Camera::new(CameraModel::default(), &layout, &sim).unwrap();
        (layout, cam, sim)
    }

    #[test]
    fn centerline_poses_project_to_horizontal_center() {
        let (layout, cam, _) = default_camera();
        for i in 0..=60 {
            let y = -0.3 + 0.025 * i as f64;
            let obs = project_markers(&Pose::new(0.0, y, 0.0), &layout, &cam);
            assert!(obs.all_in_view(), "y = {y}");
            assert_eq!(obs.u1, 0.0);
            assert_eq!(obs.u2, 0.0);
        }
    }

    #[test]
    fn mirrored_pose_mirrors_u() {
        let (layout, cam, _) = default_camera();
        let p = Pose::new(0.13, 0.2, 0.3);
        let a = project_markers(&p, &layout, &cam);
        let b = project_markers(&p.mirrored(), &layout, &cam);
        assert!((a.u1 + b.u1).abs() < 1e-12);
        assert!((a.u2 + b.u2).abs() < 1e-12);
        assert!((a.v1 - b.v1).abs() < 1e-12);
        assert!((a.v2 - b.v2).abs() < 1e-12);
    }

    #[test]
    fn v_increases_as_mower_approaches() {
        let (layout, cam, _) = default_camera();
        let mut prev = project_markers(&Pose::new(0.0, -0.3, 0.0), &layout, &cam);
        for i in 1..=70 {
            let obs = project_markers(&Pose::new(0.0, -0.3 + 0.02 * i as f64, 0.0), &layout, &cam);
            assert!(obs.v1 > prev.v1 && obs.v2 > prev.v2);
            prev = obs;
        }
    }

    #[test]
    fn goal_anchors_are_self_consistent() {
        let (layout, cam, sim) = default_camera();
        let (v1, v2) = goal_anchor_values(&layout, &cam, &sim).unwrap();
        let obs = project_markers(&Pose::new(0.0, sim.y_goal, 0.0), &layout, &cam);
        assert_eq!(obs.as_array(), [0.0, v1, 0.0, v2]);
        assert!(v1 > v2);
    }

    #[test]
    fn goal_anchors_follow_camera_height() {
        let (layout, cam, sim) = default_camera();
        let base = goal_anchor_values(&layout, &cam, &sim).unwrap();
        let taller = CameraModel {
            cam_height: 0.6,
            pitch: Some(cam.pitch),
            ..cam.model
        };
        let moved = goal_anchor_values(&layout, &Camera::new(taller, &layout, &sim).unwrap(), &sim).unwrap();
        assert_ne!(base, moved);
    }

    #[test]
    fn goal_out_of_view_is_a_config_error() {
        let (layout, _, sim) = default_camera();
        let model = CameraModel {
            pitch: Some(-0.5),
            ..CameraModel::default()
        };
        let cam = Camera::new(model, &layout, &sim).unwrap();
        assert!(matches!(
            goal_anchor_values(&layout, &cam, &sim),
            Err(DockError::Config(_))
        ));
    }

    #[test]
    fn marker_behind_camera_is_out_of_view() {
        let (layout, cam, _) = default_camera();
        let obs = project_markers(&Pose::new(0.0, 3.0, 0.0), &layout, &cam);
        assert_eq!(obs.in_view, [false, false]);
    }

    #[test]
    fn zero_noise_is_identity() {
        let (layout, cam, _) = default_camera();
        let obs = project_markers(&Pose::new(0.05, 0.1, 0.2), &layout, &cam);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(apply_noise(&obs, &DetectorNoise::NONE, &cam, &mut rng), obs);
    }

    #[test]
    fn jitter_std_matches_sigma() {
        let (_, cam, _) = default_camera();
        let obs = MarkerObservation::new(0.0, 0.0, 0.0, 0.0);
        let noise = DetectorNoise::jitter(2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            sum_sq += apply_noise(&obs, &noise, &cam, &mut rng).u1.powi(2);
        }
        let std = (sum_sq / n as f64).sqrt();
        let expected = 2.0 / 640.0;
        assert!((std / expected - 1.0).abs() < 0.05, "std {std} vs {expected}");
    }

    #[test]
    fn dropout_rate_matches_probability() {
        let (_, cam, _) = default_camera();
        let obs = MarkerObservation::new(0.0, 0.0, 0.0, 0.0);
        let noise = DetectorNoise {
            sigma_px: 0.0,
            dropout_prob: 0.1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let mut dropped = [0usize; 2];
        for _ in 0..n {
            let out = apply_noise(&obs, &noise, &cam, &mut rng);
            for i in 0..2 {
                dropped[i] += usize::from(!out.in_view[i]);
            }
        }
        for d in dropped {
            let rate = d as f64 / n as f64;
            assert!((rate - 0.1).abs() < 0.01, "rate {rate}");
        }
    }

    #[test]
    fn render_paints_both_markers() {
        let (layout, cam, _) = default_camera();
        let pose = Pose::new(0.0, 0.5, 0.0);
        let frame = render_frame(&pose, &layout, &cam);
        let obs = project_markers(&pose, &layout, &cam);
        for (i, color) in MARKER_COLORS.iter().enumerate() {
            let (u, v) = obs.marker(i);
            let col = (cam.half_width() * (1.0 + u)) as u32;
            let row = (cam.half_height() * (1.0 + v)) as u32;
            assert_eq!(&frame.pixel(col, row), color);
        }
        assert_eq!(frame.pixel(0, 0), [255, 255, 255]);
    }
}
