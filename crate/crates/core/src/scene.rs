//! Scene geometry: the reference camera, the display superpixel layout and
//! per-pixel surface points.
//!
//! Everything lives in the reference camera frame (x right, y down, z along
//! the optical axis, meters). Cameras are ideal pinholes; inputs are assumed
//! to be undistorted already.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Mask, Rgb};

pub type Vec3 = Vector3<f64>;

/// Nominal distance between the cameras and the captured object.
pub const OBJECT_DISTANCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CameraJson", try_from = "CameraJson")]
pub struct CameraModel {
    pub focal_px: f64,
    pub principal: [f64; 2],
    pub width: usize,
    pub height: usize,
    /// Camera-from-world rotation.
    pub rotation: Matrix3<f64>,
    /// Camera-from-world translation (meters).
    pub translation: Vec3,
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    focal_px: f64,
    principal: [f64; 2],
    resolution: [usize; 2],
    pose_r: [[f64; 3]; 3],
    pose_t: [f64; 3],
}

impl From<CameraModel> for CameraJson {
    fn from(c: CameraModel) -> Self {
        let r = c.rotation;
        CameraJson {
            focal_px: c.focal_px,
            principal: c.principal,
            resolution: [c.width, c.height],
            pose_r: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            pose_t: [c.translation.x, c.translation.y, c.translation.z],
        }
    }
}

impl TryFrom<CameraJson> for CameraModel {
    type Error = Error;

    fn try_from(j: CameraJson) -> Result<Self> {
        let r = j.pose_r;
        CameraModel::new(
            j.focal_px,
            j.principal,
            (j.resolution[0], j.resolution[1]),
            Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Vec3::from(j.pose_t),
        )
    }
}

impl CameraModel {
    pub fn new(
        focal_px: f64,
        principal: [f64; 2],
        resolution: (usize, usize),
        rotation: Matrix3<f64>,
        translation: Vec3,
    ) -> Result<Self> {
        if !(focal_px > 0.0 && focal_px.is_finite()) {
            return Err(Error::InvalidInput(format!("focal length {focal_px} must be positive")));
        }
        if resolution.0 == 0 || resolution.1 == 0 {
            return Err(Error::InvalidInput("camera resolution must be at least 1x1".into()));
        }
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if orth > 1e-6 || (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(
                "camera rotation must be orthonormal with determinant +1".into(),
            ));
        }
        Ok(Self {
            focal_px,
            principal,
            width: resolution.0,
            height: resolution.1,
            rotation,
            translation,
        })
    }

    /// Identity-pose camera with a given horizontal field of view and the
    /// principal point at the image center.
    pub fn with_fov(width: usize, height: usize, hfov_deg: f64) -> Result<Self> {
        let focal = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self::new(
            focal,
            [(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0],
            (width, height),
            Matrix3::identity(),
            Vec3::zeros(),
        )
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// World-space ray direction (not normalized, unit z in camera frame)
    /// through pixel `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        let cam = Vec3::new(
            (u - self.principal[0]) / self.focal_px,
            (v - self.principal[1]) / self.focal_px,
            1.0,
        );
        self.rotation.transpose() * cam
    }

    /// Point at camera-frame depth `depth` along pixel `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let cam = Vec3::new(
            (u - self.principal[0]) / self.focal_px * depth,
            (v - self.principal[1]) / self.focal_px * depth,
            depth,
        );
        self.rotation.transpose() * (cam - self.translation)
    }

    /// Pixel coordinates and camera-frame depth of a world point.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let cam = self.rotation * p + self.translation;
        if cam.z <= 0.0 {
            return None;
        }
        Some((
            self.focal_px * cam.x / cam.z + self.principal[0],
            self.focal_px * cam.y / cam.z + self.principal[1],
            cam.z,
        ))
    }

    /// Unit vector from `p` towards the camera center.
    pub fn view_dir(&self, p: &Vec3) -> Vec3 {
        (self.center() - p).normalize()
    }
}

/// Back-project a depth map (camera-frame z, 0 = invalid) into world points.
pub fn backproject(camera: &CameraModel, depth: &[f64]) -> Result<Vec<Option<Vec3>>> {
    if depth.len() != camera.width * camera.height {
        return Err(Error::Dimension(format!(
            "depth map has {} pixels, camera is {}x{}",
            depth.len(),
            camera.width,
            camera.height
        )));
    }
    Ok(depth
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            (d > 0.0 && d.is_finite()).then(|| {
                let (u, v) = ((i % camera.width) as f64, (i / camera.width) as f64);
                camera.unproject(u, v, d)
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "DisplayJson", try_from = "DisplayJson")]
pub struct DisplayModel {
    pub positions: Vec<Vec3>,
    /// Global radiance scale.
    pub s: f64,
    /// Pattern-to-radiance exponent.
    pub gamma: f64,
    pub backlight: Vec<Rgb>,
    /// `(cols, rows)`; superpixel `row * cols + col`.
    pub grid: (usize, usize),
}

#[derive(Serialize, Deserialize)]
struct DisplayJson {
    superpixels: Vec<[f64; 3]>,
    s: f64,
    gamma: f64,
    backlight: Vec<[f64; 3]>,
    grid: [usize; 2],
}

impl From<DisplayModel> for DisplayJson {
    fn from(d: DisplayModel) -> Self {
        DisplayJson {
            superpixels: d.positions.iter().map(|p| [p.x, p.y, p.z]).collect(),
            s: d.s,
            gamma: d.gamma,
            backlight: d.backlight,
            grid: [d.grid.0, d.grid.1],
        }
    }
}

impl TryFrom<DisplayJson> for DisplayModel {
    type Error = Error;

    fn try_from(j: DisplayJson) -> Result<Self> {
        DisplayModel::new(
            j.superpixels.into_iter().map(Vec3::from).collect(),
            j.s,
            j.gamma,
            j.backlight,
            (j.grid[0], j.grid[1]),
        )
    }
}

impl DisplayModel {
    pub fn new(
        positions: Vec<Vec3>,
        s: f64,
        gamma: f64,
        backlight: Vec<Rgb>,
        grid: (usize, usize),
    ) -> Result<Self> {
        if positions.len() != grid.0 * grid.1 {
            return Err(Error::Dimension(format!(
                "{} superpixels for a {}x{} grid",
                positions.len(),
                grid.0,
                grid.1
            )));
        }
        if backlight.len() != positions.len() {
            return Err(Error::Dimension(format!(
                "{} backlight entries for {} superpixels",
                backlight.len(),
                positions.len()
            )));
        }
        if !(s > 0.0) || !(gamma > 0.0) {
            return Err(Error::InvalidInput(format!(
                "display scale ({s}) and gamma ({gamma}) must be positive"
            )));
        }
        if backlight.iter().flatten().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::InvalidInput("backlight must lie in [0, 1]".into()));
        }
        Ok(Self {
            positions,
            s,
            gamma,
            backlight,
            grid,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn with_radiometry(mut self, s: f64, gamma: f64, backlight: Vec<Rgb>) -> Result<Self> {
        self.s = s;
        self.gamma = gamma;
        self.backlight = backlight;
        Self::new(self.positions, self.s, self.gamma, self.backlight, self.grid)
    }

    pub fn has_backlight(&self) -> bool {
        self.backlight.iter().flatten().any(|&b| b > 0.0)
    }
}

/// Physical panel size used to lay out superpixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PanelPreset {
    /// 55-inch 16:9 panel, 1.21 m x 0.68 m.
    Inch55,
    /// 32-inch 16:9 panel, 0.708 m x 0.398 m.
    Inch32,
    Custom { width: f64, height: f64 },
}

impl PanelPreset {
    pub fn extent(self) -> (f64, f64) {
        match self {
            PanelPreset::Inch55 => (1.21, 0.68),
            PanelPreset::Inch32 => (0.708, 0.398),
            PanelPreset::Custom { width, height } => (width, height),
        }
    }
}

pub const DEFAULT_GRID: (usize, usize) = (16, 9);

/// Planar display facing the scene.
///
/// Superpixel centers tile the panel extent; the panel plane sits `standoff`
/// meters in front of the nominal object plane (`z = OBJECT_DISTANCE`), so the
/// default standoff puts the panel in the camera plane. Radiometry starts as
/// `s = 1`, `gamma = 1`, no backlight.
pub fn synth_display(
    preset: PanelPreset,
    grid: (usize, usize),
    standoff: f64,
) -> Result<DisplayModel> {
    let (w, h) = preset.extent();
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::InvalidInput(format!("panel extent {w}x{h} must be positive")));
    }
    if grid.0 == 0 || grid.1 == 0 {
        return Err(Error::InvalidInput("display grid must be at least 1x1".into()));
    }
    let (cols, rows) = grid;
    let z = OBJECT_DISTANCE - standoff;
    let mut positions = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            positions.push(Vec3::new(
                -w / 2.0 + (c as f64 + 0.5) * w / cols as f64,
                -h / 2.0 + (r as f64 + 0.5) * h / rows as f64,
                z,
            ));
        }
    }
    let n = positions.len();
    DisplayModel::new(positions, 1.0, 1.0, vec![[0.0; 3]; n], grid)
}

/// Incident light geometry at a surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncidentSample {
    /// Unit vector from the surface point towards the superpixel.
    pub direction: Vec3,
    pub distance: f64,
}

pub fn incident_geometry(point: &Vec3, index: usize, display: &DisplayModel) -> Result<IncidentSample> {
    let pos = display.positions.get(index).ok_or_else(|| {
        Error::InvalidInput(format!(
            "superpixel {index} out of range (N = {})",
            display.len()
        ))
    })?;
    incident_to(point, pos)
}

pub(crate) fn incident_to(point: &Vec3, light: &Vec3) -> Result<IncidentSample> {
    let delta = light - point;
    let distance = delta.norm();
    if !(distance > 1e-12) || !distance.is_finite() {
        return Err(Error::Degenerate(
            "surface point coincides with a superpixel".into(),
        ));
    }
    Ok(IncidentSample {
        direction: delta / distance,
        distance,
    })
}

/// Per-pixel geometry of one camera view.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMaps {
    pub width: usize,
    pub height: usize,
    /// Camera-frame depth, meters; 0 marks invalid pixels.
    pub depth: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub mask: Mask,
    /// World-space points; zero outside the mask.
    pub points: Vec<Vec3>,
    /// Unit vectors towards the camera; zero outside the mask.
    pub view: Vec<Vec3>,
}

impl SceneMaps {
    /// Assemble maps from depth and normals. Pixels with invalid depth are
    /// removed from the mask; masked normals must be unit length.
    pub fn new(camera: &CameraModel, depth: Vec<f64>, normal: Vec<Vec3>, mask: Mask) -> Result<Self> {
        let (w, h) = (camera.width, camera.height);
        if normal.len() != w * h {
            return Err(Error::Dimension(format!(
                "normal map has {} pixels, camera is {w}x{h}",
                normal.len()
            )));
        }
        mask.check_dims(w, h, "scene mask")?;
        let points = backproject(camera, &depth)?;
        let mut mask = mask;
        let center = camera.center();
        let mut pts = vec![Vec3::zeros(); w * h];
        let mut view = vec![Vec3::zeros(); w * h];
        for i in 0..w * h {
            match points[i] {
                Some(p) if mask.data[i] => {
                    if (normal[i].norm() - 1.0).abs() > 1e-5 {
                        return Err(Error::InvalidInput(format!(
                            "normal at pixel {i} has length {}",
                            normal[i].norm()
                        )));
                    }
                    pts[i] = p;
                    view[i] = (center - p).normalize();
                }
                _ => mask.data[i] = false,
            }
        }
        Ok(Self {
            width: w,
            height: h,
            depth,
            normal,
            mask,
            points: pts,
            view,
        })
    }

    /// Same normals and mask, every masked pixel placed at depth `depth`.
    pub fn with_uniform_depth(&self, camera: &CameraModel, depth: f64) -> Result<Self> {
        let d = self
            .mask
            .data
            .iter()
            .map(|&m| if m { depth } else { 0.0 })
            .collect();
        Self::new(camera, d, self.normal.clone(), self.mask.clone())
    }

    pub fn with_normals(&self, normal: Vec<Vec3>) -> Result<Self> {
        if normal.len() != self.normal.len() {
            return Err(Error::Dimension("normal map size changed".into()));
        }
        Ok(Self {
            normal,
            ..self.clone()
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cam(w: usize, h: usize, f: f64) -> CameraModel {
        CameraModel::new(
            f,
            [w as f64 / 2.0, h as f64 / 2.0],
            (w, h),
            Matrix3::identity(),
            Vec3::zeros(),
        )
        .unwrap()
    }

    #[test]
    fn principal_point_backprojects_on_axis() {
        let c = cam(4, 4, 100.0);
        let mut depth = vec![0.0; 16];
        depth[2 * 4 + 2] = 0.5;
        let pts = backproject(&c, &depth).unwrap();
        assert_eq!(pts[2 * 4 + 2], Some(Vec3::new(0.0, 0.0, 0.5)));
        assert_eq!(pts[0], None);
    }

    #[test]
    fn off_axis_pixel_backprojection() {
        // pixel (cx + f, cy) at depth 1 sits at x = 1 by similar triangles
        let c = CameraModel::new(3.0, [1.0, 1.0], (5, 3), Matrix3::identity(), Vec3::zeros()).unwrap();
        let mut depth = vec![0.0; 15];
        depth[4 + 5] = 1.0;
        let p = backproject(&c, &depth).unwrap()[4 + 5].unwrap();
        assert_abs_diff_eq!(p, Vec3::new(1.0, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn depth_dimension_mismatch() {
        assert!(matches!(backproject(&cam(4, 4, 1.0), &[1.0; 3]), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_depth_leaves_mask() {
        let c = cam(2, 1, 10.0);
        let n = vec![Vec3::new(0.0, 0.0, -1.0); 2];
        let s = SceneMaps::new(&c, vec![0.5, 0.0], n, Mask::full(2, 1)).unwrap();
        assert_eq!(s.mask.data, vec![true, false]);
    }

    #[test]
    fn camera_invariants() {
        assert!(CameraModel::new(0.0, [0.0; 2], (1, 1), Matrix3::identity(), Vec3::zeros()).is_err());
        assert!(CameraModel::new(1.0, [0.0; 2], (0, 1), Matrix3::identity(), Vec3::zeros()).is_err());
        let flip = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(CameraModel::new(1.0, [0.0; 2], (1, 1), flip, Vec3::zeros()).is_err());
    }

    #[test]
    fn incident_examples() {
        let mut d = synth_display(PanelPreset::Inch55, (1, 1), 0.5).unwrap();
        d.positions[0] = Vec3::new(0.0, 0.0, 0.5);
        let s = incident_geometry(&Vec3::zeros(), 0, &d).unwrap();
        assert_abs_diff_eq!(s.direction, Vec3::z(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.distance, 0.5);
        d.positions[0] = Vec3::new(0.3, 0.0, 0.4);
        let s = incident_geometry(&Vec3::zeros(), 0, &d).unwrap();
        assert_abs_diff_eq!(s.direction, Vec3::new(0.6, 0.0, 0.8), epsilon = 1e-12);
        assert_abs_diff_eq!(s.distance, 0.5, epsilon = 1e-12);
        assert!(incident_geometry(&Vec3::new(0.3, 0.0, 0.4), 0, &d).is_err());
        assert!(incident_geometry(&Vec3::zeros(), 1, &d).is_err());
    }

    #[test]
    fn display_presets() {
        let one = synth_display(PanelPreset::Inch55, (1, 1), 0.5).unwrap();
        assert_eq!(one.positions, vec![Vec3::new(0.0, 0.0, 0.0)]);
        let full = synth_display(PanelPreset::Inch55, DEFAULT_GRID, 0.5).unwrap();
        assert_eq!(full.len(), 144);
        assert!(synth_display(PanelPreset::Custom { width: -1.0, height: 1.0 }, (2, 2), 0.5).is_err());
        assert!(synth_display(PanelPreset::Inch55, (0, 2), 0.5).is_err());
    }

    /// Largest angle between any two incident directions seen from `p`.
    fn angular_spread(d: &DisplayModel, p: &Vec3) -> f64 {
        let dirs: Vec<Vec3> = (0..d.len())
            .map(|i| incident_geometry(p, i, d).unwrap().direction)
            .collect();
        let mut best: f64 = 0.0;
        for a in &dirs {
            for b in &dirs {
                best = best.max(a.dot(b).clamp(-1.0, 1.0).acos());
            }
        }
        best
    }

    #[test]
    fn smaller_panel_has_smaller_spread() {
        let p = Vec3::new(0.0, 0.0, OBJECT_DISTANCE);
        let big = synth_display(PanelPreset::Inch55, DEFAULT_GRID, 0.5).unwrap();
        let small = synth_display(PanelPreset::Inch32, (10, 5), 0.5).unwrap();
        // independent check: corner-to-corner angle of each panel's outermost centers
        let corner = |w: f64, h: f64, c: usize, r: usize| {
            let hx = w / 2.0 - w / (2.0 * c as f64);
            let hy = h / 2.0 - h / (2.0 * r as f64);
            2.0 * (hx.hypot(hy) / 0.5).atan()
        };
        assert_abs_diff_eq!(angular_spread(&big, &p), corner(1.21, 0.68, 16, 9), epsilon = 1e-9);
        assert_abs_diff_eq!(angular_spread(&small, &p), corner(0.708, 0.398, 10, 5), epsilon = 1e-9);
        assert!(angular_spread(&small, &p) < angular_spread(&big, &p));
    }

    #[test]
    fn display_json_round_trip() {
        let d = synth_display(PanelPreset::Inch32, (3, 2), 0.4).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        assert!(s.contains("\"superpixels\"") && s.contains("\"grid\""));
        let back: DisplayModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        let c = cam(8, 6, 50.0);
        let back: CameraModel = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    proptest! {
        #[test]
        fn project_inverts_unproject(u in 0.0..63.0f64, v in 0.0..47.0f64, d in 0.1..3.0f64,
                                     ax in -0.3..0.3f64, ay in -0.3..0.3f64, tz in -0.2..0.2f64) {
            let r = *nalgebra::Rotation3::from_euler_angles(ax, ay, 0.1).matrix();
            let c = CameraModel::new(80.0, [31.5, 23.5], (64, 48), r, Vec3::new(0.01, -0.02, tz)).unwrap();
            let p = c.unproject(u, v, d);
            let (pu, pv, pd) = c.project(&p).unwrap();
            prop_assert!((pu - u).abs() < 1e-6 && (pv - v).abs() < 1e-6 && (pd - d).abs() < 1e-9);
        }

        #[test]
        fn distance_is_symmetric(a in prop::array::uniform3(-1.0..1.0f64), b in prop::array::uniform3(-1.0..1.0f64)) {
            let (a, b) = (Vec3::from(a), Vec3::from(b));
            prop_assume!((a - b).norm() > 1e-6);
            let ab = incident_to(&a, &b).unwrap();
            let ba = incident_to(&b, &a).unwrap();
            let brute = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt();
            prop_assert_eq!(ab.distance, ba.distance);
            prop_assert!((ab.distance - brute).abs() < 1e-12);
            prop_assert!((ab.direction + ba.direction).norm() < 1e-12);
        }
    }
}
