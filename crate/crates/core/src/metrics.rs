//! Evaluation metrics: normal angular error, PSNR, SSIM and coverage of
//! the (theta_h, theta_d) half/difference-angle domain.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::scene::{incident_geometry, DisplayModel, SceneMaps, Vec3};

/// Mean angle between two normal maps over `mask`, in degrees.
///
/// Angles use `atan2(|a x b|, a . b)`, which tolerates slightly
/// non-unit inputs and stays accurate near zero.
pub fn normal_mae(est: &[Vec3], gt: &[Vec3], mask: &Mask) -> Result<f64> {
    if est.len() != gt.len() || est.len() != mask.data.len() {
        return Err(Error::Dimension(format!(
            "normal maps have {} and {} pixels, mask has {}",
            est.len(),
            gt.len(),
            mask.data.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in mask.indices() {
        sum += est[p].cross(&gt[p]).norm().atan2(est[p].dot(&gt[p])).to_degrees();
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty mask".into()));
    }
    Ok(sum / n as f64)
}

/// Values at or above this level count as saturated.
pub const SATURATION_LEVEL: f64 = 1.0;

/// Peak signal-to-noise ratio with peak 1, in dB.
///
/// Only pixels inside `mask` (all pixels when `None`) count; with
/// `exclude_saturated` channels saturated in either image are skipped.
/// Identical selections give `f64::INFINITY`.
pub fn psnr(est: &Image, gt: &Image, mask: Option<&Mask>, exclude_saturated: bool) -> Result<f64> {
    let (sse, count) = squared_error(est, gt, mask, exclude_saturated)?;
    let mse = sse / count as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

fn squared_error(est: &Image, gt: &Image, mask: Option<&Mask>, exclude_saturated: bool) -> Result<(f64, usize)> {
    est.check_shape(gt, "psnr")?;
    if let Some(m) = mask {
        m.check_dims(est.width, est.height, "psnr mask")?;
    }
    let c = est.channels;
    let mut sse = 0.0;
    let mut count = 0usize;
    for p in 0..est.pixel_count() {
        if mask.is_some_and(|m| !m.data[p]) {
            continue;
        }
        for k in 0..c {
            let (a, b) = (est.data[p * c + k], gt.data[p * c + k]);
            if exclude_saturated && (a >= SATURATION_LEVEL || b >= SATURATION_LEVEL) {
                continue;
            }
            sse += (a - b) * (a - b);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput("no pixels selected for PSNR".into()));
    }
    Ok((sse, count))
}

/// PSNR of a set of image pairs, pooling the squared error of all of them.
pub fn psnr_stack(est: &[Image], gt: &[Image], mask: Option<&Mask>, exclude_saturated: bool) -> Result<f64> {
    if est.len() != gt.len() || est.is_empty() {
        return Err(Error::Dimension("PSNR stacks must be nonempty and equally long".into()));
    }
    let mut sse = 0.0;
    let mut count = 0;
    for (a, b) in est.iter().zip(gt) {
        let (s, n) = squared_error(a, b, mask, exclude_saturated)?;
        sse += s;
        count += n;
    }
    let mse = sse / count as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k: [f64; SSIM_WINDOW] = std::array::from_fn(|i| {
        let x = i as f64 - r;
        (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filtering, keeping only fully covered positions.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// dynamic range 1. Multi-channel images average the per-channel values.
pub fn ssim(est: &Image, gt: &Image) -> Result<f64> {
    est.check_shape(gt, "ssim")?;
    let (w, h, c) = (est.width, est.height, est.channels);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "images of {w}x{h} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let k = gaussian_kernel();
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    for ch in 0..c {
        let x: Vec<f64> = est.data.iter().skip(ch).step_by(c).copied().collect();
        let y: Vec<f64> = gt.data.iter().skip(ch).step_by(c).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let (mx, _, _) = filter_valid(&x, w, h, &k);
        let (my, _, _) = filter_valid(&y, w, h, &k);
        let (sxx, _, _) = filter_valid(&xx, w, h, &k);
        let (syy, _, _) = filter_valid(&yy, w, h, &k);
        let (sxy, _, _) = filter_valid(&xy, w, h, &k);
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (a, b) = (mx[i], my[i]);
            let vx = sxx[i] - a * a;
            let vy = syy[i] - b * b;
            let cov = sxy[i] - a * b;
            sum += ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (vx + vy + c2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / c as f64)
}

/// One (theta_h, theta_d) sample in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularSample {
    pub theta_h: f64,
    pub theta_d: f64,
}

/// Half and difference angles of an incident/outgoing pair about `n`.
pub fn half_diff_angles(i: &Vec3, o: &Vec3, n: &Vec3) -> AngularSample {
    let h = (i + o).normalize();
    AngularSample {
        theta_h: n.dot(&h).clamp(-1.0, 1.0).acos(),
        theta_d: h.dot(i).clamp(-1.0, 1.0).acos(),
    }
}

/// Samples for every masked pixel and every superpixel lighting its front side.
pub fn angular_coverage(scene: &SceneMaps, display: &DisplayModel) -> Result<Vec<AngularSample>> {
    let mut out = Vec::new();
    for p in scene.mask.indices() {
        let (n, o) = (scene.normal[p], scene.view[p]);
        if n.dot(&o) <= 0.0 {
            continue;
        }
        for k in 0..display.len() {
            let inc = incident_geometry(&scene.points[p], k, display)?;
            if n.dot(&inc.direction) > 0.0 {
                out.push(half_diff_angles(&inc.direction, &o, &n));
            }
        }
    }
    Ok(out)
}

/// `bins x bins` counts over `[0, pi/2]^2`, indexed `[theta_h][theta_d]`.
pub fn coverage_histogram(samples: &[AngularSample], bins: usize) -> Vec<Vec<usize>> {
    let mut hist = vec![vec![0; bins]; bins];
    let idx = |a: f64| ((a / std::f64::consts::FRAC_PI_2 * bins as f64) as usize).min(bins - 1);
    for s in samples {
        hist[idx(s.theta_h)][idx(s.theta_d)] += 1;
    }
    hist
}

/// Write the histogram as CSV rows `theta_h_deg,theta_d_deg,count` (bin centers).
pub fn write_coverage_csv(path: &Path, samples: &[AngularSample], bins: usize) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["theta_h_deg", "theta_d_deg", "count"]).map_err(csv_err)?;
    let step = 90.0 / bins as f64;
    for (a, row) in coverage_histogram(samples, bins).iter().enumerate() {
        for (b, count) in row.iter().enumerate() {
            w.write_record([
                format!("{}", (a as f64 + 0.5) * step),
                format!("{}", (b as f64 + 0.5) * step),
                count.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn finite_or_inf<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_infinite() => s.serialize_str("inf"),
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_none(),
    }
}

fn parse_finite_or_inf<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Option::<Raw>::deserialize(d)? {
        None => Ok(None),
        Some(Raw::Num(x)) => Ok(Some(x)),
        Some(Raw::Text(t)) if t == "inf" => Ok(Some(f64::INFINITY)),
        Some(Raw::Text(t)) => Err(serde::de::Error::custom(format!("unexpected value {t:?}"))),
    }
}

/// Summary written by the `evaluate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mae_deg: Option<f64>,
    #[serde(serialize_with = "finite_or_inf", deserialize_with = "parse_finite_or_inf")]
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub n_pixels: usize,
    pub saturation_excluded: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{synth_scene, ScenePreset};
    use crate::scene::{synth_display, PanelPreset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_vec(w, h, 3, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn mae_examples() {
        let z = Vec3::z();
        let m = Mask::full(2, 1);
        assert_eq!(normal_mae(&[z, z], &[z, z], &m).unwrap(), 0.0);
        assert!((normal_mae(&[z, z], &[Vec3::x(), Vec3::y()], &m).unwrap() - 90.0).abs() < 1e-12);
        let tilted = Vec3::new(60f64.to_radians().sin(), 0.0, 60f64.to_radians().cos());
        assert!((normal_mae(&[z, tilted], &[z, z], &m).unwrap() - 30.0).abs() < 1e-9);
        assert!(normal_mae(&[z, z], &[z, z], &Mask::empty(2, 1)).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(4, 4, &[0.5, 0.5, 0.5]);
        assert_eq!(psnr(&a, &a, None, false).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, None, false).unwrap() - 20.0).abs() < 1e-9);

        let x = random_image(8, 8, 1);
        let y = random_image(8, 8, 2);
        let mse: f64 = x.data.iter().zip(&y.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.data.len() as f64;
        assert!((psnr(&x, &y, None, false).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-12);
        assert!(psnr(&x, &y, Some(&Mask::empty(8, 8)), false).is_err());
    }

    #[test]
    fn psnr_drops_with_noise() {
        let gt = random_image(16, 16, 3);
        let mut last = f64::INFINITY;
        for sigma in [0.001, 0.01, 0.1] {
            let noisy = gt.map(|v| v + sigma);
            let p = psnr(&noisy, &gt, None, false).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_examples() {
        let x = random_image(24, 24, 4);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        // checkerboard at mid contrast against its inverse
        let board = Image::from_vec(
            24,
            24,
            1,
            (0..576).map(|i| if ((i % 24) / 3 + (i / 24) / 3) % 2 == 0 { 0.3 } else { 0.7 }).collect(),
        )
        .unwrap();
        assert!(ssim(&board, &board.map(|v| 1.0 - v)).unwrap() < 0.5);
        // constant patches: (2ab + c1) / (a^2 + b^2 + c1)
        let (a, b) = (0.2, 0.7);
        let c1 = 1e-4;
        let expect = (2.0 * a * b + c1) / (a * a + b * b + c1);
        let got = ssim(&Image::filled(16, 16, &[a]), &Image::filled(16, 16, &[b])).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert!(ssim(&Image::zeros(8, 20, 1), &Image::zeros(8, 20, 1)).is_err());
    }

    #[test]
    fn half_diff_special_cases() {
        let n = Vec3::z();
        let i = Vec3::new(0.3, 0.1, 1.0).normalize();
        assert!(half_diff_angles(&i, &i, &n).theta_d.abs() < 1e-7);
        let mirror = Vec3::new(-i.x, -i.y, i.z);
        assert!(half_diff_angles(&i, &mirror, &n).theta_h.abs() < 1e-7);
    }

    #[test]
    fn plane_theta_h_span_matches_geometry() {
        let s = synth_scene(ScenePreset::Plane, (16, 16), 0).unwrap();
        let d = synth_display(PanelPreset::Inch32, (4, 3), 0.5).unwrap();
        let samples = angular_coverage(&s.scene, &d).unwrap();
        assert_eq!(samples.len(), 256 * 12);
        let max_h = samples.iter().map(|a| a.theta_h).fold(0.0, f64::max);
        // direct computation: largest half-vector tilt over all pairs
        let mut expect: f64 = 0.0;
        for p in s.scene.mask.indices() {
            for pos in &d.positions {
                let i = (pos - s.scene.points[p]).normalize();
                let h = (i + s.scene.view[p]).normalize();
                expect = expect.max(h.dot(&s.scene.normal[p]).acos());
            }
        }
        assert!((max_h - expect).abs() < 1e-12);
        // bounded by the panel half-diagonal seen from the plane
        let (w, h) = PanelPreset::Inch32.extent();
        assert!(max_h <= (0.5 * (w * w + h * h).sqrt() / 0.5).atan());
        assert!(samples.iter().all(|a| (0.0..=std::f64::consts::FRAC_PI_2).contains(&a.theta_h)));
        let hist = coverage_histogram(&samples, 9);
        assert_eq!(hist.iter().flatten().sum::<usize>(), samples.len());
    }

    #[test]
    fn report_serializes_infinite_psnr() {
        let r = EvaluationReport {
            mae_deg: Some(0.0),
            psnr_db: Some(f64::INFINITY),
            ssim: Some(1.0),
            n_pixels: 4,
            saturation_excluded: false,
        };
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"inf\""));
        assert_eq!(serde_json::from_str::<EvaluationReport>(&text).unwrap(), r);
    }
}
