//! Near-field image formation under display patterns.
//!
//! A pixel observes `clip(sum_i (n.i)+ f(i, o) falloff(d_i) L_i + noise)`
//! where superpixel radiance is `L_i = s (P_i + B_i)^gamma`. Because light
//! transport is linear, a stack of unit-radiance one-light-at-a-time (OLAT)
//! images spans every pattern; [`relight`] recombines it.
//!
//! Cast shadows and interreflections are not modelled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brdf::{Frame, SvBrdf};
use crate::error::{Error, Result};
use crate::image::{Image, Rgb};
use crate::scene::{DisplayModel, SceneMaps, Vec3};

/// Per-superpixel RGB drive values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DisplayPattern {
    pub values: Vec<Rgb>,
}

impl DisplayPattern {
    pub fn new(values: Vec<Rgb>) -> Result<Self> {
        if values.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("pattern values must lie in [0, 1]".into()));
        }
        Ok(Self { values })
    }

    pub fn black(n: usize) -> Self {
        Self {
            values: vec![[0.0; 3]; n],
        }
    }

    pub fn one_hot(n: usize, k: usize) -> Self {
        let mut p = Self::black(n);
        p.values[k] = [1.0; 3];
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check(&self, display: &DisplayModel) -> Result<()> {
        if self.len() != display.len() {
            return Err(Error::Dimension(format!(
                "pattern has {} entries, display has {} superpixels",
                self.len(),
                display.len()
            )));
        }
        Ok(())
    }
}

/// `L_i = s (P_i + B_i)^gamma`, per channel.
#[inline]
pub fn display_intensity(p: &Rgb, display: &DisplayModel, index: usize) -> Rgb {
    let b = display.backlight[index];
    std::array::from_fn(|c| display.s * (p[c] + b[c]).powf(display.gamma))
}

pub fn pattern_radiance(pattern: &DisplayPattern, display: &DisplayModel) -> Result<Vec<Rgb>> {
    pattern.check(display)?;
    Ok(pattern
        .values
        .iter()
        .enumerate()
        .map(|(i, p)| display_intensity(p, display, i))
        .collect())
}

/// Distance attenuation `1 / (a + b d^2) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FalloffParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for FalloffParams {
    /// Pure inverse-square law.
    fn default() -> Self {
        Self { a: 0.0, b: 1.0, c: 0.0 }
    }
}

/// Distances over which falloff parameters must stay well defined.
pub const WORKING_RANGE: (f64, f64) = (0.2, 2.0);

impl FalloffParams {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let p = Self { a, b, c };
        if !p.valid_over(WORKING_RANGE) {
            return Err(Error::InvalidInput(format!(
                "a + b d^2 must stay positive over [{}, {}] m (a = {a}, b = {b})",
                WORKING_RANGE.0, WORKING_RANGE.1
            )));
        }
        Ok(p)
    }

    /// `a + b d^2` is monotone in `d^2`, so the endpoints decide.
    pub fn valid_over(&self, (lo, hi): (f64, f64)) -> bool {
        self.a + self.b * lo * lo > 0.0 && self.a + self.b * hi * hi > 0.0
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, d: f64) -> f64 {
        1.0 / (self.a + self.b * d * d) + self.c
    }
}

pub fn falloff(d: f64, params: &FalloffParams) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidInput(format!("distance {d} must be positive")));
    }
    let den = params.a + params.b * d * d;
    if !(den > 0.0) {
        return Err(Error::InvalidInput(format!(
            "a + b d^2 = {den} is not positive at d = {d}"
        )));
    }
    Ok(1.0 / den + params.c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel { sigma: 0.0, seed: 0 };

    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::InvalidInput(format!("noise sigma {sigma} must be >= 0")));
        }
        Ok(Self { sigma, seed })
    }

    /// Independent, reproducible noise for the `stream`-th image of a batch.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Add Gaussian noise (if any) drawn from `noise.rng(stream)`.
pub fn add_noise(image: &mut Image, noise: &NoiseModel, stream: u64) {
    if noise.sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, noise.sigma).expect("sigma validated");
    let mut rng = noise.rng(stream);
    for v in image.data.iter_mut() {
        *v += normal.sample(&mut rng);
    }
}

pub fn clip(image: &mut Image) {
    for v in image.data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Gaussian noise followed by clamping to the `[0, 1]` dynamic range.
pub fn add_noise_clip(image: &Image, noise: &NoiseModel) -> Image {
    let mut out = image.clone();
    add_noise(&mut out, noise, 0);
    clip(&mut out);
    out
}

/// Per-pixel light transport to each superpixel at unit radiance.
///
/// `out[i]` receives `(n.i)+ f(i, o) falloff(d_i)`; lights whose `active`
/// flag is false are skipped and left at zero.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn pixel_transport(
    p: &Vec3,
    n: &Vec3,
    o: &Vec3,
    lights: &[Vec3],
    active: Option<&[bool]>,
    falloff: &FalloffParams,
    mut shade: impl FnMut(&Frame) -> Rgb,
    out: &mut [Rgb],
) {
    for (k, pos) in lights.iter().enumerate() {
        out[k] = [0.0; 3];
        if active.is_some_and(|a| !a[k]) {
            continue;
        }
        let delta = pos - p;
        let d = delta.norm();
        let i = delta / d;
        let ni = n.dot(&i);
        if ni <= 0.0 {
            continue;
        }
        let fr = Frame::new(&i, o, n);
        let f = shade(&fr);
        let k_geo = ni * falloff.eval_unchecked(d);
        out[k] = [f[0] * k_geo, f[1] * k_geo, f[2] * k_geo];
    }
}

fn check_render_inputs(scene: &SceneMaps, brdf: &SvBrdf, display: &DisplayModel, falloff: &FalloffParams) -> Result<()> {
    if brdf.weights.width != scene.width || brdf.weights.height != scene.height {
        return Err(Error::Dimension(format!(
            "weight maps are {}x{}, scene is {}x{}",
            brdf.weights.width, brdf.weights.height, scene.width, scene.height
        )));
    }
    if brdf.weights.count != brdf.bases.len() {
        return Err(Error::Dimension("weight map count differs from basis count".into()));
    }
    for p in scene.mask.indices() {
        for pos in &display.positions {
            let d = (pos - scene.points[p]).norm();
            if !(d > 1e-12) {
                return Err(Error::Degenerate(format!("pixel {p} coincides with a superpixel")));
            }
            if !(falloff.a + falloff.b * d * d > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "falloff denominator not positive at d = {d}"
                )));
            }
        }
    }
    Ok(())
}

/// Noise-free, unclipped render for explicit per-superpixel radiances.
pub fn render_radiance(
    scene: &SceneMaps,
    display: &DisplayModel,
    brdf: &SvBrdf,
    radiance: &[Rgb],
    falloff: &FalloffParams,
) -> Result<Image> {
    check_render_inputs(scene, brdf, display, falloff)?;
    if radiance.len() != display.len() {
        return Err(Error::Dimension(format!(
            "{} radiances for {} superpixels",
            radiance.len(),
            display.len()
        )));
    }
    let active: Vec<bool> = radiance.iter().map(|l| l.iter().any(|&v| v != 0.0)).collect();
    let w = scene.width;
    let mut img = Image::zeros(w, scene.height, 3);
    img.data
        .par_chunks_mut(3 * w)
        .enumerate()
        .for_each_init(
            || vec![[0.0; 3]; display.len()],
            |buf, (y, row)| {
                for x in 0..w {
                    let p = y * w + x;
                    if !scene.mask.data[p] {
                        continue;
                    }
                    pixel_transport(
                        &scene.points[p],
                        &scene.normal[p],
                        &scene.view[p],
                        &display.positions,
                        Some(&active),
                        falloff,
                        |fr| brdf.eval_at(p, fr),
                        buf,
                    );
                    let mut acc = [0.0; 3];
                    for (t, l) in buf.iter().zip(radiance) {
                        for c in 0..3 {
                            acc[c] += t[c] * l[c];
                        }
                    }
                    row[3 * x..3 * x + 3].copy_from_slice(&acc);
                }
            },
        );
    Ok(img)
}

/// Image of the scene under `pattern` shown on `display`.
#[allow(clippy::too_many_arguments)]
pub fn render_pattern(
    scene: &SceneMaps,
    display: &DisplayModel,
    brdf: &SvBrdf,
    pattern: &DisplayPattern,
    falloff: &FalloffParams,
    noise: &NoiseModel,
    clip_output: bool,
) -> Result<Image> {
    let radiance = pattern_radiance(pattern, display)?;
    let mut img = render_radiance(scene, display, brdf, &radiance, falloff)?;
    add_noise(&mut img, noise, 0);
    if clip_output {
        clip(&mut img);
    }
    Ok(img)
}

/// Unit-radiance OLAT images, one per superpixel.
#[derive(Debug, Clone, PartialEq)]
pub struct OlatStack {
    pub images: Vec<Image>,
    /// Whether each image went through the `[0, 1]` clamp.
    pub clipped: Vec<bool>,
}

impl OlatStack {
    pub fn new(images: Vec<Image>, clipped: Vec<bool>) -> Result<Self> {
        if images.len() != clipped.len() {
            return Err(Error::Dimension("one clip flag per OLAT image".into()));
        }
        if let Some(first) = images.first() {
            for im in &images[1..] {
                first.check_shape(im, "OLAT stack")?;
            }
        }
        if images.iter().any(|im| im.data.iter().any(|&v| !(v >= 0.0))) {
            return Err(Error::InvalidInput("OLAT images must be nonnegative".into()));
        }
        Ok(Self { images, clipped })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Render `I_i = f(i, o) (n.i)+ falloff(d_i)` for every superpixel.
///
/// Backlight is not part of an OLAT image. Stacks are kept unclipped unless
/// `clip_output` asks otherwise, so that [`relight`] clips only once.
pub fn render_olat_stack(
    scene: &SceneMaps,
    display: &DisplayModel,
    brdf: &SvBrdf,
    falloff: &FalloffParams,
    clip_output: bool,
) -> Result<OlatStack> {
    check_render_inputs(scene, brdf, display, falloff)?;
    let n = display.len();
    let w = scene.width;
    let npix = scene.pixel_count();
    // transport[p * n + i]
    let mut transport = vec![[0.0; 3]; npix * n];
    transport
        .par_chunks_mut(n * w)
        .enumerate()
        .for_each(|(y, rows)| {
            for x in 0..w {
                let p = y * w + x;
                if !scene.mask.data[p] {
                    continue;
                }
                pixel_transport(
                    &scene.points[p],
                    &scene.normal[p],
                    &scene.view[p],
                    &display.positions,
                    None,
                    falloff,
                    |fr| brdf.eval_at(p, fr),
                    &mut rows[x * n..(x + 1) * n],
                );
            }
        });
    let images = (0..n)
        .map(|i| {
            let mut img = Image::zeros(w, scene.height, 3);
            for p in 0..npix {
                img.pixel_mut(p).copy_from_slice(&transport[p * n + i]);
            }
            if clip_output {
                clip(&mut img);
            }
            img
        })
        .collect();
    OlatStack::new(images, vec![clip_output; n])
}

/// `clip(sum_i I_i s (P_i + B_i)^gamma + noise)`.
pub fn relight(
    stack: &OlatStack,
    pattern: &DisplayPattern,
    display: &DisplayModel,
    noise: &NoiseModel,
    clip_output: bool,
) -> Result<Image> {
    if stack.len() != display.len() {
        return Err(Error::Dimension(format!(
            "OLAT stack has {} images, display has {} superpixels",
            stack.len(),
            display.len()
        )));
    }
    let radiance = pattern_radiance(pattern, display)?;
    let mut out = combine(stack, &radiance)?;
    add_noise(&mut out, noise, 0);
    if clip_output {
        clip(&mut out);
    }
    Ok(out)
}

/// Weighted sum of OLAT images with per-channel weights.
pub fn combine(stack: &OlatStack, radiance: &[Rgb]) -> Result<Image> {
    let first = stack
        .images
        .first()
        .ok_or_else(|| Error::InvalidInput("empty OLAT stack".into()))?;
    if radiance.len() != stack.len() {
        return Err(Error::Dimension("one radiance per OLAT image".into()));
    }
    let mut out = Image::zeros(first.width, first.height, 3);
    let w = first.width;
    out.data
        .par_chunks_mut(3 * w)
        .enumerate()
        .for_each(|(y, row)| {
            for (img, l) in stack.images.iter().zip(radiance) {
                if l.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let src = &img.data[y * 3 * w..(y + 1) * 3 * w];
                for (k, (dst, s)) in row.iter_mut().zip(src).enumerate() {
                    *dst += s * l[k % 3];
                }
            }
        });
    Ok(out)
}

/// Contribution of the backlight alone (all-black pattern).
pub fn backlight_image(stack: &OlatStack, display: &DisplayModel) -> Result<Image> {
    relight(stack, &DisplayPattern::black(display.len()), display, &NoiseModel::NONE, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brdf::CookTorrance;
    use crate::image::Mask;
    use crate::scene::{synth_display, CameraModel, PanelPreset};
    use approx::assert_relative_eq;

    fn display(s: f64, gamma: f64, b: f64) -> DisplayModel {
        let d = synth_display(PanelPreset::Inch55, (4, 3), 0.5).unwrap();
        let n = d.len();
        d.with_radiometry(s, gamma, vec![[b; 3]; n]).unwrap()
    }

    fn plane(w: usize, h: usize) -> (CameraModel, SceneMaps) {
        let cam = CameraModel::with_fov(w, h, 30.0).unwrap();
        let scene = SceneMaps::new(
            &cam,
            vec![0.5; w * h],
            vec![Vec3::new(0.0, 0.0, -1.0); w * h],
            Mask::full(w, h),
        )
        .unwrap();
        (cam, scene)
    }

    #[test]
    fn display_intensity_examples() {
        let d = display(1.0, 1.0, 0.0);
        assert_eq!(display_intensity(&[0.0; 3], &d, 0), [0.0; 3]);
        let d = display(1.0, 1.0, 0.1);
        assert_relative_eq!(display_intensity(&[0.5; 3], &d, 3)[0], 0.6, max_relative = 1e-15);
        let d = display(2.0, 2.0, 0.0);
        assert_eq!(display_intensity(&[0.5; 3], &d, 0), [0.5; 3]);
    }

    #[test]
    fn falloff_examples() {
        let def = FalloffParams::default();
        assert_eq!(falloff(1.0, &def).unwrap(), 1.0);
        assert_eq!(falloff(0.5, &def).unwrap(), 4.0);
        let p = FalloffParams::new(1.0, 4.0, 0.01).unwrap();
        assert_relative_eq!(falloff(0.5, &p).unwrap(), 0.51, max_relative = 1e-15);
        assert!(falloff(0.5, &FalloffParams { a: -1.0, b: 1.0, c: 0.0 }).is_err());
        assert!(falloff(0.0, &def).is_err());
        assert!(FalloffParams::new(-0.1, 1.0, 0.0).is_err());
    }

    #[test]
    fn noise_examples() {
        let img = Image::from_vec(2, 1, 1, vec![1.5, -0.2]).unwrap();
        let out = add_noise_clip(&img, &NoiseModel::NONE);
        assert_eq!(out.data, vec![1.0, 0.0]);
        let twice = add_noise_clip(&out, &NoiseModel::NONE);
        assert_eq!(twice, out);
        let noisy = NoiseModel::new(0.01, 3).unwrap();
        let mid = Image::filled(1000, 1000, &[0.5]);
        let a = add_noise_clip(&mid, &noisy);
        assert_eq!(a, add_noise_clip(&mid, &noisy));
        let n = a.data.len() as f64;
        let mean = a.data.iter().sum::<f64>() / n;
        let std = (a.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.01).abs() < 0.0002, "std {std}");
        assert!(NoiseModel::new(-1.0, 0).is_err());
    }

    #[test]
    fn black_pattern_renders_black() {
        let (_, scene) = plane(8, 6);
        let d = display(1.0, 1.0, 0.0);
        let brdf = SvBrdf::uniform(8, 6, CookTorrance::new([0.5; 3], [0.5; 3], [0.3; 3]).unwrap());
        let img = render_pattern(&scene, &d, &brdf, &DisplayPattern::black(d.len()), &FalloffParams::default(), &NoiseModel::NONE, true).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lambertian_single_superpixel_by_hand() {
        let (_, scene) = plane(9, 7);
        let d = display(1.0, 1.0, 0.0);
        let rho = [0.3, 0.5, 0.7];
        let brdf = SvBrdf::uniform(9, 7, CookTorrance::lambertian(rho));
        let k = 5;
        let img = render_pattern(&scene, &d, &brdf, &DisplayPattern::one_hot(d.len(), k), &FalloffParams::default(), &NoiseModel::NONE, false).unwrap();
        for p in [0, 8, 31, 54, 62] {
            let x = scene.points[p];
            let l = d.positions[k];
            let (dx, dy, dz) = (l.x - x.x, l.y - x.y, l.z - x.z);
            let dist2 = dx * dx + dy * dy + dz * dz;
            let cos = -dz / dist2.sqrt();
            for c in 0..3 {
                assert_relative_eq!(img.pixel(p)[c], rho[c] * cos / dist2, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn homogeneity_and_olat_sum() {
        let (_, scene) = plane(8, 6);
        let d = display(0.7, 1.0, 0.0);
        let brdf = SvBrdf::uniform(8, 6, CookTorrance::new([0.4; 3], [0.6; 3], [0.35; 3]).unwrap());
        let fo = FalloffParams::default();
        let p = DisplayPattern::new((0..d.len()).map(|i| [0.02 * i as f64, 0.2, 0.3]).collect()).unwrap();
        let p2 = DisplayPattern::new(p.values.iter().map(|v| v.map(|x| 2.0 * x)).collect()).unwrap();
        let a = render_pattern(&scene, &d, &brdf, &p, &fo, &NoiseModel::NONE, false).unwrap();
        let b = render_pattern(&scene, &d, &brdf, &p2, &fo, &NoiseModel::NONE, false).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert_relative_eq!(2.0 * x, *y, max_relative = 1e-12);
        }
        let stack = render_olat_stack(&scene, &d, &brdf, &fo, false).unwrap();
        let ones = render_radiance(&scene, &d, &brdf, &vec![[1.0; 3]; d.len()], &fo).unwrap();
        let sum = combine(&stack, &vec![[1.0; 3]; d.len()]).unwrap();
        for (x, y) in ones.data.iter().zip(&sum.data) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_superpixel_stack_matches_render() {
        let (_, scene) = plane(5, 4);
        let d = synth_display(PanelPreset::Inch55, (1, 1), 0.5).unwrap();
        let brdf = SvBrdf::uniform(5, 4, CookTorrance::new([0.4; 3], [0.6; 3], [0.35; 3]).unwrap());
        let fo = FalloffParams::default();
        let stack = render_olat_stack(&scene, &d, &brdf, &fo, false).unwrap();
        let direct = render_pattern(&scene, &d, &brdf, &DisplayPattern::one_hot(1, 0), &fo, &NoiseModel::NONE, false).unwrap();
        assert_eq!(stack.images[0], direct);
    }

    #[test]
    fn far_superpixels_are_dimmer() {
        // two lights along the same ray from a pixel: identical cosines, only distance differs
        let (cam, scene) = plane(3, 3);
        let p = scene.points[4];
        let dir = Vec3::new(0.2, -0.1, -1.0).normalize();
        let positions = vec![p + dir * 0.3, p + dir * 0.6];
        let d = DisplayModel::new(positions, 1.0, 1.0, vec![[0.0; 3]; 2], (2, 1)).unwrap();
        let brdf = SvBrdf::uniform(3, 3, CookTorrance::new([0.5; 3], [0.3; 3], [0.4; 3]).unwrap());
        let stack = render_olat_stack(&scene, &d, &brdf, &FalloffParams::default(), false).unwrap();
        let near = stack.images[0].pixel(4)[0];
        let far = stack.images[1].pixel(4)[0];
        assert!(far < near);
        assert_relative_eq!(near / far, 4.0, max_relative = 1e-12);
        let _ = cam;
    }

    #[test]
    fn relight_examples() {
        let (_, scene) = plane(6, 5);
        let brdf = SvBrdf::uniform(6, 5, CookTorrance::new([0.3; 3], [0.2; 3], [0.5; 3]).unwrap());
        let fo = FalloffParams::default();
        let d = display(1.0, 1.0, 0.0);
        let stack = render_olat_stack(&scene, &d, &brdf, &fo, false).unwrap();
        let img = relight(&stack, &DisplayPattern::one_hot(d.len(), 7), &d, &NoiseModel::NONE, false).unwrap();
        assert_eq!(img, stack.images[7]);

        let db = display(0.8, 2.2, 0.05);
        let back = relight(&stack, &DisplayPattern::black(d.len()), &db, &NoiseModel::NONE, false).unwrap();
        let k = 0.8 * 0.05f64.powf(2.2);
        let mut expected = Image::zeros(6, 5, 3);
        for im in &stack.images {
            for (e, v) in expected.data.iter_mut().zip(&im.data) {
                *e += v * k;
            }
        }
        for (a, b) in back.data.iter().zip(&expected.data) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        assert!(relight(&stack, &DisplayPattern::black(3), &d, &NoiseModel::NONE, false).is_err());
    }

    #[test]
    fn mismatched_weights_rejected() {
        let (_, scene) = plane(4, 4);
        let d = display(1.0, 1.0, 0.0);
        let brdf = SvBrdf::uniform(3, 4, CookTorrance::lambertian([0.5; 3]));
        assert!(matches!(
            render_olat_stack(&scene, &d, &brdf, &FalloffParams::default(), false),
            Err(Error::Dimension(_))
        ));
    }
}
