//! Analytic synthetic scenes with ground-truth reflectance.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::brdf::{BasisBrdfSet, CookTorrance, SvBrdf, WeightMaps};
use crate::error::{Error, Result};
use crate::image::{Mask, Rgb};
use crate::scene::{CameraModel, SceneMaps, Vec3, OBJECT_DISTANCE};

pub const DEFAULT_HFOV_DEG: f64 = 30.0;
pub const SPHERE_RADIUS: f64 = 0.1;
/// Sphere center; its front pole sits 5 cm in front of the object distance.
pub const SPHERE_CENTER: [f64; 3] = [0.0, 0.0, OBJECT_DISTANCE + 0.05];
/// Tilt of the right half of the step-normal scene, degrees about the y axis.
pub const STEP_TILT_DEG: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenePreset {
    Plane,
    Sphere,
    TwoMaterialSphere,
    StepNormal,
}

impl std::str::FromStr for ScenePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(Self::Plane),
            "sphere" => Ok(Self::Sphere),
            "two_material_sphere" => Ok(Self::TwoMaterialSphere),
            "step_normal" => Ok(Self::StepNormal),
            _ => Err(Error::InvalidInput(format!("unknown scene preset {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub camera: CameraModel,
    pub scene: SceneMaps,
    pub brdf: SvBrdf,
    /// Material index per pixel (0 outside the mask).
    pub labels: Vec<usize>,
}

fn jitter(rng: &mut ChaCha8Rng, base: Rgb) -> Rgb {
    base.map(|v| (v + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0))
}

/// Build a preset at `resolution` (at least 16x16) seen by an identity-pose
/// camera with a 30 degree horizontal field of view.
///
/// The seed perturbs the material colours slightly; geometry is analytic.
pub fn synth_scene(preset: ScenePreset, resolution: (usize, usize), seed: u64) -> Result<SynthScene> {
    let (w, h) = resolution;
    if w < 16 || h < 16 {
        return Err(Error::InvalidInput(format!("resolution {w}x{h} is below 16x16")));
    }
    let camera = CameraModel::with_fov(w, h, DEFAULT_HFOV_DEG)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let npix = w * h;
    let mut depth = vec![0.0; npix];
    let mut normal = vec![Vec3::zeros(); npix];
    let mut mask = Mask::empty(w, h);
    let mut labels = vec![0; npix];
    let facing = Vec3::new(0.0, 0.0, -1.0);

    let bases = match preset {
        ScenePreset::Plane | ScenePreset::StepNormal => {
            let tilt = STEP_TILT_DEG.to_radians();
            let tilted = Vec3::new(tilt.sin(), 0.0, -tilt.cos());
            for p in 0..npix {
                depth[p] = OBJECT_DISTANCE;
                mask.data[p] = true;
                let right = p % w >= w / 2;
                normal[p] = if preset == ScenePreset::StepNormal && right { tilted } else { facing };
            }
            vec![CookTorrance::lambertian(jitter(&mut rng, [0.7, 0.5, 0.3]))]
        }
        ScenePreset::Sphere | ScenePreset::TwoMaterialSphere => {
            let c = Vec3::from(SPHERE_CENTER);
            for p in 0..npix {
                let r = camera.ray((p % w) as f64, (p / w) as f64);
                let (a, b) = (r.dot(&r), r.dot(&c));
                let disc = b * b - a * (c.dot(&c) - SPHERE_RADIUS * SPHERE_RADIUS);
                if disc < 0.0 {
                    continue;
                }
                let t = (b - disc.sqrt()) / a;
                let x = r * t;
                depth[p] = x.z;
                normal[p] = (x - c) / SPHERE_RADIUS;
                normal[p].normalize_mut();
                mask.data[p] = true;
                if preset == ScenePreset::TwoMaterialSphere && x.x >= c.x {
                    labels[p] = 1;
                }
            }
            let first = CookTorrance::new(jitter(&mut rng, [0.7, 0.25, 0.2]), [0.5; 3], [0.3; 3])?;
            if preset == ScenePreset::Sphere {
                vec![first]
            } else {
                vec![first, CookTorrance::new(jitter(&mut rng, [0.2, 0.35, 0.7]), [0.3; 3], [0.5; 3])?]
            }
        }
    };
    let count = bases.len();
    let brdf = SvBrdf::new(BasisBrdfSet::new(bases)?, WeightMaps::one_hot(w, h, count, &labels))?;
    let scene = SceneMaps::new(&camera, depth, normal, mask)?;
    Ok(SynthScene {
        camera,
        scene,
        brdf,
        labels,
    })
}
