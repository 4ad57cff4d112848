//! Lambertian photometric stereo used to initialize inverse rendering.
//!
//! [`woodham_ps`] is the classic distant-light solver. [`nearfield_ps`]
//! handles display illumination: every superpixel has its own direction and
//! falloff at each scene point, so the per-pixel light matrix is assembled
//! from the display model and the (possibly approximate) depth.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, Mask, LUMA};
use crate::render::{pattern_radiance, DisplayPattern, FalloffParams};
use crate::scene::{backproject, CameraModel, DisplayModel, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct PsResult {
    pub normal: Vec<Vec3>,
    /// Per-channel Lambertian albedo.
    pub pseudo_diffuse: Image,
    /// RMS fit residual per pixel.
    pub residual: Image,
    /// Input mask minus the pixels that could not be solved.
    pub mask: Mask,
    pub dropped: usize,
}

/// Shadow and saturation thresholds for measurement selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { low: 0.02, high: 0.98 }
    }
}

/// Validity of every sample: `low <= value <= high`.
///
/// The result is indexed `[measurement][pixel * channels + channel]`.
pub fn shadow_saturation_mask(captures: &[Image], thresholds: Thresholds) -> Result<Vec<Vec<bool>>> {
    let Thresholds { low, high } = thresholds;
    if !(0.0 < low && low < high && high < 1.0) {
        return Err(Error::InvalidInput(format!(
            "thresholds must satisfy 0 < low < high < 1 (got {low}, {high})"
        )));
    }
    Ok(captures
        .iter()
        .map(|im| im.data.iter().map(|&v| low <= v && v <= high).collect())
        .collect())
}

const RANK_TOL: f64 = 1e-10;

fn well_conditioned(m: &Matrix3<f64>) -> bool {
    let eig = m.symmetric_eigen().eigenvalues;
    let max = eig.max();
    max > 0.0 && eig.min() > RANK_TOL * max
}

fn check_stack(images: &[Image], mask: &Mask) -> Result<()> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidInput("no input images".into()))?;
    for im in images {
        first.check_shape(im, "photometric stereo input")?;
    }
    mask.check_dims(first.width, first.height, "photometric stereo")
}

/// Distant-light Lambertian photometric stereo.
///
/// Each image is converted to luma and `I_m = rho (n . l_m) e_m` is solved in
/// least squares; the normal is the normalized solution and albedo its norm.
/// Per-channel solves with the same light matrix give the colour albedo.
/// Measurements that are exactly zero (attached shadows) are left out, and
/// pixels with a rank-deficient remaining light set are dropped.
pub fn woodham_ps(images: &[Image], light_dirs: &[Vec3], light_intensities: &[f64], mask: &Mask) -> Result<PsResult> {
    check_stack(images, mask)?;
    let m = images.len();
    if m < 3 || light_dirs.len() != m || light_intensities.len() != m {
        return Err(Error::InvalidInput(format!(
            "need >= 3 images with one light each (got {m} images, {} lights, {} intensities)",
            light_dirs.len(),
            light_intensities.len()
        )));
    }
    let rows: Vec<Vector3<f64>> = light_dirs
        .iter()
        .zip(light_intensities)
        .map(|(l, e)| l.normalize() * *e)
        .collect();
    let mut all = Matrix3::zeros();
    for r in &rows {
        all += r * r.transpose();
    }
    if !well_conditioned(&all) {
        return Err(Error::Degenerate("light directions are rank deficient".into()));
    }

    let (w, h) = (images[0].width, images[0].height);
    let channels = images[0].channels;
    let mut normal = vec![Vec3::zeros(); w * h];
    let mut albedo = Image::zeros(w, h, 3);
    let mut residual = Image::zeros(w, h, 1);
    let mut out_mask = mask.clone();
    let mut dropped = 0;
    let mut gray = vec![0.0; m];
    for p in mask.indices() {
        for (k, g) in gray.iter_mut().enumerate() {
            let px = images[k].pixel(p);
            *g = if channels == 1 {
                px[0]
            } else {
                LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2]
            };
        }
        let lit: Vec<usize> = (0..m).filter(|&k| gray[k] != 0.0).collect();
        let mut ata = Matrix3::zeros();
        for &k in &lit {
            ata += rows[k] * rows[k].transpose();
        }
        let inv = match (lit.len() >= 3 && well_conditioned(&ata)).then(|| ata.try_inverse()).flatten() {
            Some(inv) => inv,
            None => {
                out_mask.data[p] = false;
                dropped += 1;
                continue;
            }
        };
        let solve = |value: &dyn Fn(usize) -> f64| {
            let mut atb = Vector3::zeros();
            for &k in &lit {
                atb += rows[k] * value(k);
            }
            inv * atb
        };
        let b = solve(&|k| gray[k]);
        let len = b.norm();
        if !(len > 0.0) {
            out_mask.data[p] = false;
            dropped += 1;
            continue;
        }
        normal[p] = b / len;
        let res: f64 = lit.iter().map(|&k| (rows[k].dot(&b) - gray[k]).powi(2)).sum();
        residual.data[p] = (res / lit.len() as f64).sqrt();
        for c in 0..3 {
            let cc = c.min(channels - 1);
            albedo.pixel_mut(p)[c] = solve(&|k| images[k].pixel(p)[cc]).norm();
        }
    }
    Ok(PsResult {
        normal,
        pseudo_diffuse: albedo,
        residual,
        mask: out_mask,
        dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NearfieldOptions {
    /// Drop shadowed or saturated samples; `None` keeps everything.
    pub thresholds: Option<Thresholds>,
}

/// Near-field Lambertian photometric stereo under display patterns.
///
/// For pattern `m` the effective light at a pixel is
/// `a_m = sum_i L_i(P_m) falloff(d_i) i_i`, with `L_i` including the
/// display backlight, so `I_m = rho (n . a_m)` per channel. Each channel is
/// solved for `b_c = rho_c n`; the normal is the normalized luma-weighted
/// sum of the `b_c` and the albedo is `|b_c|`. Pixels whose light matrix is
/// rank deficient after sample selection are dropped from the mask.
#[allow(clippy::too_many_arguments)]
pub fn nearfield_ps(
    captures: &[Image],
    patterns: &[DisplayPattern],
    display: &DisplayModel,
    camera: &CameraModel,
    depth: &[f64],
    falloff: &FalloffParams,
    mask: &Mask,
    options: &NearfieldOptions,
) -> Result<PsResult> {
    check_stack(captures, mask)?;
    let m = captures.len();
    if m < 3 || patterns.len() != m {
        return Err(Error::InvalidInput(format!(
            "need >= 3 captures with one pattern each (got {m} captures, {} patterns)",
            patterns.len()
        )));
    }
    if captures[0].channels != 3 {
        return Err(Error::InvalidInput("near-field PS expects RGB captures".into()));
    }
    let (w, h) = (captures[0].width, captures[0].height);
    if camera.width != w || camera.height != h {
        return Err(Error::Dimension("captures do not match the camera".into()));
    }
    let points = backproject(camera, depth)?;
    let valid = match options.thresholds {
        Some(t) => Some(shadow_saturation_mask(captures, t)?),
        None => None,
    };
    // sparse radiance rows: (superpixel, RGB radiance) with nonzero entries
    let radiance: Vec<Vec<(usize, [f64; 3])>> = patterns
        .iter()
        .map(|p| {
            pattern_radiance(p, display).map(|l| {
                l.into_iter()
                    .enumerate()
                    .filter(|(_, v)| v.iter().any(|&x| x != 0.0))
                    .collect()
            })
        })
        .collect::<Result<_>>()?;

    struct PixelOut {
        normal: Vec3,
        albedo: [f64; 3],
        residual: f64,
        ok: bool,
    }
    let n = display.len();
    let solved: Vec<Option<PixelOut>> = (0..w * h)
        .into_par_iter()
        .map_init(
            || (vec![Vec3::zeros(); n], vec![[Vec3::zeros(); 3]; m]),
            |(dirs, lights), p| {
                if !mask.data[p] {
                    return None;
                }
                let Some(x) = points[p] else {
                    return Some(PixelOut { normal: Vec3::zeros(), albedo: [0.0; 3], residual: 0.0, ok: false });
                };
                for (i, pos) in display.positions.iter().enumerate() {
                    let delta = pos - x;
                    let d = delta.norm();
                    dirs[i] = delta / d * falloff.eval_unchecked(d);
                }
                for (k, row) in radiance.iter().enumerate() {
                    let mut a = [Vec3::zeros(); 3];
                    for (i, l) in row {
                        for c in 0..3 {
                            a[c] += dirs[*i] * l[c];
                        }
                    }
                    lights[k] = a;
                }
                let usable = |k: usize, c: usize| valid.as_ref().is_none_or(|v| v[k][3 * p + c]);
                let mut b = [Vec3::zeros(); 3];
                let mut ok = true;
                for c in 0..3 {
                    let mut ata = Matrix3::zeros();
                    let mut atb = Vec3::zeros();
                    for k in 0..m {
                        if usable(k, c) {
                            let a = &lights[k][c];
                            ata += a * a.transpose();
                            atb += a * captures[k].pixel(p)[c];
                        }
                    }
                    if !well_conditioned(&ata) {
                        ok = false;
                        break;
                    }
                    match ata.cholesky() {
                        Some(ch) => b[c] = ch.solve(&atb),
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                let dir = b[0] * LUMA[0] + b[1] * LUMA[1] + b[2] * LUMA[2];
                let len = dir.norm();
                if !ok || !(len > 0.0) {
                    return Some(PixelOut { normal: Vec3::zeros(), albedo: [0.0; 3], residual: 0.0, ok: false });
                }
                let mut sq = 0.0;
                let mut count = 0usize;
                for k in 0..m {
                    for c in 0..3 {
                        if usable(k, c) {
                            sq += (lights[k][c].dot(&b[c]) - captures[k].pixel(p)[c]).powi(2);
                            count += 1;
                        }
                    }
                }
                Some(PixelOut {
                    normal: dir / len,
                    albedo: [b[0].norm(), b[1].norm(), b[2].norm()],
                    residual: (sq / count.max(1) as f64).sqrt(),
                    ok: true,
                })
            },
        )
        .collect();

    let mut normal = vec![Vec3::zeros(); w * h];
    let mut albedo = Image::zeros(w, h, 3);
    let mut residual = Image::zeros(w, h, 1);
    let mut out_mask = mask.clone();
    let mut dropped = 0;
    for (p, s) in solved.into_iter().enumerate() {
        let Some(s) = s else { continue };
        if !s.ok {
            out_mask.data[p] = false;
            dropped += 1;
            continue;
        }
        normal[p] = s.normal;
        albedo.pixel_mut(p).copy_from_slice(&s.albedo);
        residual.data[p] = s.residual;
    }
    Ok(PsResult {
        normal,
        pseudo_diffuse: albedo,
        residual,
        mask: out_mask,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{olat_patterns, synth_scene, ScenePreset, SynthScene};
    use crate::metrics::normal_mae;
    use crate::render::{backlight_image, render_olat_stack};
    use crate::scene::{synth_display, PanelPreset};

    fn img(values: &[f64]) -> Image {
        Image::from_vec(values.len(), 1, 1, values.to_vec()).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let caps = vec![img(&[1.0, 0.5, 0.01, 0.98])];
        let v = shadow_saturation_mask(&caps, Thresholds::default()).unwrap();
        assert_eq!(v[0], vec![false, true, false, true]);
        assert!(shadow_saturation_mask(&caps, Thresholds { low: 0.5, high: 0.4 }).is_err());
    }

    #[test]
    fn plane_lit_along_normal_and_obliques() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let lights = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.5, 0.0, 1.0).normalize(), Vec3::new(0.0, 0.5, 1.0).normalize()];
        let images: Vec<Image> = lights.iter().map(|l| img(&[0.7 * n.dot(l)])).collect();
        let r = woodham_ps(&images, &lights, &[1.0; 3], &Mask::full(1, 1)).unwrap();
        assert!((r.normal[0] - n).norm() < 1e-4);
        assert!((r.pseudo_diffuse.pixel(0)[0] - 0.7).abs() < 1e-12);
    }

    fn olat_plane(grid: (usize, usize)) -> (SynthScene, DisplayModel, Vec<Image>) {
        let s = synth_scene(ScenePreset::Plane, (24, 24), 0).unwrap();
        let d = synth_display(PanelPreset::Inch55, grid, 0.5).unwrap();
        let stack = render_olat_stack(&s.scene, &d, &s.brdf, &FalloffParams::default(), false).unwrap();
        (s, d, stack.images)
    }

    fn nf(s: &SynthScene, d: &DisplayModel, caps: &[Image], depth: &[f64], opts: NearfieldOptions) -> PsResult {
        nearfield_ps(
            caps,
            &olat_patterns(d.len()),
            d,
            &s.camera,
            depth,
            &FalloffParams::default(),
            &s.scene.mask,
            &opts,
        )
        .unwrap()
    }

    #[test]
    fn nearfield_plane_olat() {
        let (s, d, caps) = olat_plane((4, 3));
        let r = nf(&s, &d, &caps, &s.scene.depth, NearfieldOptions::default());
        assert_eq!(r.dropped, 0);
        assert!(normal_mae(&r.normal, &s.scene.normal, &r.mask).unwrap() < 1e-6);
        for p in r.mask.indices() {
            assert!(r.residual.data[p] < 1e-6);
            for c in 0..3 {
                assert!((r.pseudo_diffuse.pixel(p)[c] - s.brdf.bases.bases[0].diffuse[c]).abs() < 1e-9);
            }
        }
        let uniform = vec![0.5; s.scene.depth.len()];
        let u = nf(&s, &d, &caps, &uniform, NearfieldOptions::default());
        assert_eq!(u.normal, r.normal);
    }

    #[test]
    fn nearfield_ignores_saturated_samples() {
        let (s, d, caps) = olat_plane((4, 3));
        let opts = NearfieldOptions { thresholds: Some(Thresholds { low: 1e-6, high: 0.98 }) };
        let mut scaled: Vec<Image> = caps.iter().map(|im| im.scaled(0.2)).collect();
        let clean = nf(&s, &d, &scaled, &s.scene.depth, opts);
        for k in [0, 5, 7] {
            for p in (0..576).step_by(5) {
                scaled[k].pixel_mut(p).fill(1.0);
            }
        }
        let hit = nf(&s, &d, &scaled, &s.scene.depth, opts);
        assert_eq!(hit.mask, clean.mask);
        for p in clean.mask.indices() {
            assert!((hit.normal[p] - clean.normal[p]).norm() < 1e-9);
        }
    }

    #[test]
    fn nearfield_homogeneity_is_exact() {
        let (s, d, caps) = olat_plane((4, 3));
        let doubled: Vec<Image> = caps.iter().map(|im| im.scaled(2.0)).collect();
        let a = nf(&s, &d, &caps, &s.scene.depth, NearfieldOptions::default());
        let b = nf(&s, &d, &doubled, &s.scene.depth, NearfieldOptions::default());
        assert_eq!(a.normal, b.normal);
        assert_eq!(a.pseudo_diffuse.scaled(2.0), b.pseudo_diffuse);
    }

    #[test]
    fn nearfield_backlight_consistency() {
        let s = synth_scene(ScenePreset::Plane, (24, 24), 0).unwrap();
        let plain = synth_display(PanelPreset::Inch55, (4, 3), 0.5).unwrap();
        let lit = plain
            .clone()
            .with_radiometry(1.0, 1.0, (0..12).map(|i| [0.01 * i as f64; 3]).collect())
            .unwrap();
        let stack = render_olat_stack(&s.scene, &plain, &s.brdf, &FalloffParams::default(), false).unwrap();
        let bl = backlight_image(&stack, &lit).unwrap();
        let with_bl: Vec<Image> = stack
            .images
            .iter()
            .map(|im| Image::from_vec(24, 24, 3, im.data.iter().zip(&bl.data).map(|(a, b)| a + b).collect()).unwrap())
            .collect();
        let a = nf(&s, &plain, &stack.images, &s.scene.depth, NearfieldOptions::default());
        let b = nf(&s, &lit, &with_bl, &s.scene.depth, NearfieldOptions::default());
        for p in a.mask.indices() {
            assert!((a.normal[p] - b.normal[p]).norm() < 1e-4);
        }
    }

    #[test]
    fn valid_fraction_matches_count() {
        let (_, _, caps) = olat_plane((4, 3));
        let clipped: Vec<Image> = caps.iter().map(|im| im.clamped()).collect();
        let v = shadow_saturation_mask(&clipped, Thresholds::default()).unwrap();
        let direct = clipped.iter().flat_map(|im| &im.data).filter(|&&x| (0.02..=0.98).contains(&x)).count();
        assert_eq!(v.iter().flatten().filter(|&&b| b).count(), direct);
    }

    #[test]
    fn woodham_sphere_and_homogeneity() {
        let s = synth_scene(ScenePreset::Sphere, (48, 48), 0).unwrap();
        let lights = [
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(0.5, 0.0, -1.0).normalize(),
            Vec3::new(0.0, 0.5, -1.0).normalize(),
            Vec3::new(-0.4, -0.4, -1.0).normalize(),
        ];
        let rho = [0.6, 0.4, 0.2];
        let images: Vec<Image> = lights
            .iter()
            .map(|l| {
                let mut im = Image::zeros(48, 48, 3);
                for p in s.scene.mask.indices() {
                    let k = s.scene.normal[p].dot(l).max(0.0);
                    im.pixel_mut(p).copy_from_slice(&rho.map(|r| r * k));
                }
                im
            })
            .collect();
        let r = woodham_ps(&images, &lights, &[1.0; 4], &s.scene.mask).unwrap();
        assert!(r.mask.count() > s.scene.mask.count() * 9 / 10);
        assert!(normal_mae(&r.normal, &s.scene.normal, &r.mask).unwrap() < 0.5);
        let doubled: Vec<Image> = images.iter().map(|im| im.scaled(2.0)).collect();
        let r2 = woodham_ps(&doubled, &lights, &[1.0; 4], &s.scene.mask).unwrap();
        assert_eq!(r.normal, r2.normal);
        assert_eq!(r.pseudo_diffuse.scaled(2.0), r2.pseudo_diffuse);
    }

    #[test]
    fn coplanar_lights_rejected() {
        let lights = [Vec3::x(), Vec3::y(), (Vec3::x() + Vec3::y()).normalize()];
        let images = vec![img(&[0.5]); 3];
        assert!(matches!(
            woodham_ps(&images, &lights, &[1.0; 3], &Mask::full(1, 1)),
            Err(Error::Degenerate(_))
        ));
    }
}
