//! Display calibration: radiometric response, distance falloff and the
//! backlight/scale/exponent triple fitted from OLAT captures of a known
//! object.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::brdf::SvBrdf;
use crate::error::{Error, Result};
use crate::image::Rgb;
use crate::lm::{self, LeastSquares, LmConfig, Residuals};
use crate::render::{render_olat_stack, FalloffParams, OlatStack, WORKING_RANGE};
use crate::scene::{DisplayModel, SceneMaps};

/// Measured response of a gray patch shown at `set_value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiometricSample {
    pub set_value: f64,
    pub measured: Rgb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiometricFit {
    pub s: Rgb,
    pub gamma: Rgb,
    pub rms: Rgb,
}

impl RadiometricFit {
    /// Channel-averaged scale and exponent for the scalar display model.
    pub fn mean(&self) -> (f64, f64) {
        (self.s.iter().sum::<f64>() / 3.0, self.gamma.iter().sum::<f64>() / 3.0)
    }
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Fit `measured = s * set_value^gamma` per channel.
///
/// The log-log regression over strictly positive samples seeds a
/// Levenberg-Marquardt refinement in the linear domain.
pub fn fit_radiometric(samples: &[RadiometricSample]) -> Result<RadiometricFit> {
    if samples.len() < 3 || distinct(samples.iter().map(|s| s.set_value)) < 3 {
        return Err(Error::InvalidInput(
            "radiometric fit needs at least 3 samples at 3 distinct set values".into(),
        ));
    }
    if samples
        .iter()
        .any(|s| !(0.0..=1.0).contains(&s.set_value) || s.measured.iter().any(|&m| !(m >= 0.0)))
    {
        return Err(Error::InvalidInput(
            "set values must lie in [0, 1] and measurements must be nonnegative".into(),
        ));
    }
    let mut fit = RadiometricFit {
        s: [0.0; 3],
        gamma: [0.0; 3],
        rms: [0.0; 3],
    };
    for c in 0..3 {
        let pts: Vec<(f64, f64)> = samples.iter().map(|s| (s.set_value, s.measured[c])).collect();
        let logs: Vec<(f64, f64)> = pts
            .iter()
            .filter(|(v, m)| *v > 0.0 && *m > 0.0)
            .map(|(v, m)| (v.ln(), m.ln()))
            .collect();
        if distinct(logs.iter().map(|l| l.0)) < 2 {
            return Err(Error::Degenerate(format!(
                "channel {c}: fewer than two positive measurements"
            )));
        }
        let n = logs.len() as f64;
        let mx = logs.iter().map(|l| l.0).sum::<f64>() / n;
        let my = logs.iter().map(|l| l.1).sum::<f64>() / n;
        let sxy: f64 = logs.iter().map(|l| (l.0 - mx) * (l.1 - my)).sum();
        let sxx: f64 = logs.iter().map(|l| (l.0 - mx) * (l.0 - mx)).sum();
        let gamma0 = (sxy / sxx).max(1e-3);
        let s0 = (my - gamma0 * mx).exp();

        let prob = Residuals {
            eval: |x: &DVector<f64>| {
                let (s, g) = (x[0], x[1]);
                let r = DVector::from_iterator(pts.len(), pts.iter().map(|(v, m)| s * v.powf(g) - m));
                let j = DMatrix::from_fn(pts.len(), 2, |k, col| {
                    let v = pts[k].0;
                    match (col, v > 0.0) {
                        (0, _) => v.powf(g),
                        (_, true) => s * v.powf(g) * v.ln(),
                        (_, false) => 0.0,
                    }
                });
                Some((r, j))
            },
            project: Some(|x: &mut DVector<f64>| {
                x[0] = x[0].max(1e-12);
                x[1] = x[1].max(1e-6);
            }),
        };
        let out = lm::minimize(&prob, DVector::from_vec(vec![s0, gamma0]), LmConfig::default());
        if !out.converged {
            return Err(Error::NotConverged {
                iterations: out.iterations,
                best_params: out.x.iter().copied().collect(),
                best_rms: (out.cost / pts.len() as f64).sqrt(),
            });
        }
        fit.s[c] = out.x[0];
        fit.gamma[c] = out.x[1];
        fit.rms[c] = (out.cost / pts.len() as f64).sqrt();
    }
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FalloffSample {
    pub distance: f64,
    pub measured: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalloffFit {
    pub params: FalloffParams,
    pub rms: f64,
    /// The data does not pin down all three parameters.
    pub ill_conditioned: bool,
}

/// Fit `measured = 1 / (a + b d^2) + c`, starting from the inverse-square
/// law `(0, 1, 0)`.
pub fn fit_falloff(samples: &[FalloffSample]) -> Result<FalloffFit> {
    if samples.len() < 4 || distinct(samples.iter().map(|s| s.distance)) < 3 {
        return Err(Error::InvalidInput(
            "falloff fit needs at least 4 samples at 3 distinct distances".into(),
        ));
    }
    if samples.iter().any(|s| !(s.distance > 0.0) || !(s.measured > 0.0)) {
        return Err(Error::InvalidInput(
            "falloff samples need positive distance and measurement".into(),
        ));
    }
    let m_max = samples.iter().map(|s| s.measured).fold(0.0, f64::max);
    let m_min = samples.iter().map(|s| s.measured).fold(f64::INFINITY, f64::min);
    if m_max - m_min <= 1e-12 * m_max {
        // flat response: the b = 0 regime, a alone explains the data
        return Ok(FalloffFit {
            params: FalloffParams { a: 1.0 / m_max, b: 0.0, c: 0.0 },
            rms: 0.0,
            ill_conditioned: true,
        });
    }
    let prob = Residuals::<_, fn(&mut DVector<f64>)> {
        eval: |x: &DVector<f64>| {
            let (a, b, c) = (x[0], x[1], x[2]);
            let mut r = DVector::zeros(samples.len());
            let mut j = DMatrix::zeros(samples.len(), 3);
            for (k, s) in samples.iter().enumerate() {
                let d2 = s.distance * s.distance;
                let den = a + b * d2;
                if !(den > 0.0) {
                    return None;
                }
                r[k] = 1.0 / den + c - s.measured;
                j[(k, 0)] = -1.0 / (den * den);
                j[(k, 1)] = -d2 / (den * den);
                j[(k, 2)] = 1.0;
            }
            Some((r, j))
        },
        project: None,
    };
    let out = lm::minimize(&prob, DVector::from_vec(vec![0.0, 1.0, 0.0]), LmConfig::default());
    let rms = (out.cost / samples.len() as f64).sqrt();
    if !out.converged {
        return Err(Error::NotConverged {
            iterations: out.iterations,
            best_params: out.x.iter().copied().collect(),
            best_rms: rms,
        });
    }
    let params = FalloffParams { a: out.x[0], b: out.x[1], c: out.x[2] };
    if !params.valid_over(WORKING_RANGE) {
        return Err(Error::Numerical(format!(
            "fitted falloff {params:?} is not positive over the working range"
        )));
    }
    Ok(FalloffFit {
        params,
        rms,
        ill_conditioned: lm::rcond(&out.jtj) < 1e-14,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacklightOptions {
    /// Fit the exponent jointly; otherwise keep `gamma` fixed.
    pub fit_gamma: bool,
    /// Fixed exponent, and the fallback when the backlight is too weak to
    /// reveal it.
    pub gamma: f64,
    /// Pixels reaching this value in any capture are left out.
    pub saturation: f64,
}

impl Default for BacklightOptions {
    fn default() -> Self {
        Self {
            fit_gamma: true,
            gamma: 2.2,
            saturation: 0.98,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacklightFit {
    pub s: f64,
    pub gamma: f64,
    pub backlight: Vec<Rgb>,
    /// Final mean squared error per pixel-channel-capture.
    pub loss: f64,
    /// MSE after every accepted iteration.
    pub loss_trace: Vec<f64>,
    pub pixels_used: usize,
}

/// Minimum number of unsaturated object pixels required by [`fit_backlight`].
pub const MIN_BACKLIGHT_PIXELS: usize = 16;

/// OLAT calibration loss reduced to the span of the rendered OLAT images.
///
/// Capture `k` (superpixel `k` white, the rest black) is modelled as
/// `T u_k` with `u_k[i] = s (delta_ik + B_i)^gamma` and `T` the rendered
/// unit-radiance OLAT images over the valid pixels. Writing `T^T T = R^T R`
/// and `c_k` for the least-squares coefficients of capture `k`,
/// `|C_k - T u_k|^2 = |R (u_k - c_k)|^2 + floor_k`, so every evaluation costs
/// O(N^3) regardless of the image size and has no cancellation.
struct BacklightProblem {
    n: usize,
    /// Upper Cholesky factor of `T^T T` per channel.
    r: [DMatrix<f64>; 3],
    gram: [DMatrix<f64>; 3],
    /// `coef[c].column(k)` holds `c_k`.
    coef: [DMatrix<f64>; 3],
    /// Residual of the unconstrained projection, summed over captures.
    floor: f64,
    fit_gamma: bool,
    fixed_gamma: f64,
}

impl BacklightProblem {
    fn unpack(&self, x: &DVector<f64>) -> (f64, f64) {
        let s = x[0].exp();
        let g = if self.fit_gamma { x[1].exp() } else { self.fixed_gamma };
        (s, g)
    }

    fn b_offset(&self) -> usize {
        if self.fit_gamma { 2 } else { 1 }
    }

    fn b(&self, x: &DVector<f64>, i: usize, c: usize) -> f64 {
        x[self.b_offset() + 3 * i + c]
    }

    fn base(&self, x: &DVector<f64>, k: usize, c: usize) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| (if i == k { 1.0 } else { 0.0 } + self.b(x, i, c)).max(0.0))
    }
}

impl LeastSquares for BacklightProblem {
    fn cost(&self, x: &DVector<f64>) -> f64 {
        let (s, g) = self.unpack(x);
        let mut total = self.floor;
        for c in 0..3 {
            for k in 0..self.n {
                let u = self.base(x, k, c).map(|b| s * b.powf(g));
                total += (&self.r[c] * (u - self.coef[c].column(k))).norm_squared();
            }
        }
        if total.is_finite() { total } else { f64::INFINITY }
    }

    fn normal_equations(&self, x: &DVector<f64>) -> (f64, DMatrix<f64>, DVector<f64>) {
        let (s, g) = self.unpack(x);
        let off = self.b_offset();
        let dim = off + 3 * self.n;
        let mut jtj = DMatrix::zeros(dim, dim);
        let mut jtr = DVector::zeros(dim);
        for c in 0..3 {
            let q = &self.gram[c];
            for k in 0..self.n {
                let base = self.base(x, k, c);
                let u = base.map(|b| s * b.powf(g));
                let du_dg = DVector::from_fn(self.n, |i, _| if base[i] > 0.0 { u[i] * base[i].ln() * g } else { 0.0 });
                let v = base.map(|b| if b > 0.0 { s * g * b.powf(g - 1.0) } else { 0.0 });
                // gradient of 0.5 |R (u - c_k)|^2 with respect to u
                let resid = q * (&u - self.coef[c].column(k));

                let mut dense = vec![(0usize, u.clone(), q * &u)];
                if self.fit_gamma {
                    let qg = q * &du_dg;
                    dense.push((1, du_dg, qg));
                }
                for (a, ua, qa) in &dense {
                    jtr[*a] += ua.dot(&resid);
                    for (b, ub, _) in &dense {
                        jtj[(*a, *b)] += ub.dot(qa);
                    }
                    for i in 0..self.n {
                        let col = off + 3 * i + c;
                        let val = qa[i] * v[i];
                        jtj[(*a, col)] += val;
                        jtj[(col, *a)] += val;
                    }
                }
                for i in 0..self.n {
                    let row = off + 3 * i + c;
                    jtr[row] += v[i] * resid[i];
                    let vi = v[i];
                    if vi == 0.0 {
                        continue;
                    }
                    for j in 0..self.n {
                        jtj[(row, off + 3 * j + c)] += vi * q[(i, j)] * v[j];
                    }
                }
            }
        }
        (self.cost(x), jtj, jtr)
    }

    fn project(&self, x: &mut DVector<f64>) {
        let off = self.b_offset();
        for v in x.iter_mut().skip(off) {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Closed-form start from the projection coefficients.
///
/// Off-diagonal coefficients estimate `a_i = s B_i^gamma` and diagonal ones
/// `d_i = s (1 + B_i)^gamma`. For a trial exponent each superpixel then gives
/// `B_i = 1 / ((d_i / a_i)^(1/gamma) - 1)` and an implied scale; the exponent
/// whose implied scales agree best is kept.
fn initial_guess(coef: &[DMatrix<f64>; 3], n: usize, options: &BacklightOptions) -> (f64, f64, Vec<f64>) {
    let mut a = vec![0.0; 3 * n];
    let mut d = vec![0.0; 3 * n];
    for c in 0..3 {
        for i in 0..n {
            d[3 * i + c] = coef[c][(i, i)].max(1e-12);
            if n > 1 {
                let off: f64 = (0..n).filter(|&k| k != i).map(|k| coef[c][(i, k)]).sum();
                a[3 * i + c] = (off / (n - 1) as f64).max(0.0);
            }
        }
    }
    let informative: Vec<usize> = (0..3 * n).filter(|&j| a[j] > 1e-9 * d[j]).collect();
    let backlight_at = |g: f64| -> Vec<f64> {
        (0..3 * n)
            .map(|j| {
                if a[j] <= 1e-9 * d[j] {
                    return 0.0;
                }
                let ratio = (d[j] / a[j]).powf(1.0 / g);
                if ratio > 1.0 { (1.0 / (ratio - 1.0)).min(1.0) } else { 1.0 }
            })
            .collect()
    };
    let log_scales = |g: f64, b: &[f64]| -> Vec<f64> {
        (0..3 * n).map(|j| d[j].ln() - g * (1.0 + b[j]).ln()).collect()
    };
    let mut gamma = options.gamma;
    if options.fit_gamma && informative.len() >= 2 {
        let mut best = f64::INFINITY;
        for step in 0..=450 {
            let g = 0.5 + 0.01 * step as f64;
            let b = backlight_at(g);
            let ls = log_scales(g, &b);
            let m = informative.iter().map(|&j| ls[j]).sum::<f64>() / informative.len() as f64;
            let var: f64 = informative.iter().map(|&j| (ls[j] - m).powi(2)).sum();
            if var < best {
                best = var;
                gamma = g;
            }
        }
    }
    let b = backlight_at(gamma);
    let ls = log_scales(gamma, &b);
    let s = (ls.iter().sum::<f64>() / ls.len() as f64).exp();
    (s, gamma, b)
}

/// Fit display scale, exponent and per-superpixel backlight from OLAT
/// captures of an object with known geometry and reflectance.
///
/// `captures.images[k]` must show superpixel `k` at full white with every
/// other superpixel black. Without backlight the exponent has no effect on
/// such captures; it is then reported as `options.gamma`.
pub fn fit_backlight(
    captures: &OlatStack,
    scene: &SceneMaps,
    brdf: &SvBrdf,
    display: &DisplayModel,
    falloff: &FalloffParams,
    options: &BacklightOptions,
) -> Result<BacklightFit> {
    let n = display.len();
    if captures.len() != n {
        return Err(Error::Dimension(format!(
            "{} captures for {} superpixels",
            captures.len(),
            n
        )));
    }
    if captures.images[0].width != scene.width || captures.images[0].height != scene.height {
        return Err(Error::Dimension("captures do not match the scene resolution".into()));
    }
    if !(options.gamma > 0.0) {
        return Err(Error::InvalidInput("gamma must be positive".into()));
    }
    let transport = render_olat_stack(scene, display, brdf, falloff, false)?;
    let valid: Vec<usize> = scene
        .mask
        .indices()
        .filter(|&p| {
            captures
                .images
                .iter()
                .all(|im| im.pixel(p).iter().all(|&v| v < options.saturation))
        })
        .collect();
    if valid.len() < MIN_BACKLIGHT_PIXELS.max(n) {
        return Err(Error::InvalidInput(format!(
            "only {} unsaturated object pixels (need {})",
            valid.len(),
            MIN_BACKLIGHT_PIXELS.max(n)
        )));
    }

    let gather = |imgs: &[crate::image::Image], c: usize| {
        DMatrix::from_fn(valid.len(), imgs.len(), |r, i| imgs[i].pixel(valid[r])[c])
    };
    let mut r: [DMatrix<f64>; 3] = Default::default();
    let mut gram: [DMatrix<f64>; 3] = Default::default();
    let mut coef: [DMatrix<f64>; 3] = Default::default();
    let mut floor = 0.0;
    for c in 0..3 {
        let t = gather(&transport.images, c);
        let cap = gather(&captures.images, c);
        let q = t.transpose() * &t;
        let chol = q.clone().cholesky().ok_or_else(|| {
            Error::Degenerate("rendered OLAT images are linearly dependent over the valid pixels".into())
        })?;
        let ck = chol.solve(&(t.transpose() * &cap));
        floor += (&cap - &t * &ck).norm_squared();
        r[c] = chol.l().transpose();
        gram[c] = q;
        coef[c] = ck;
    }
    let prob = BacklightProblem {
        n,
        r,
        gram,
        coef,
        floor,
        fit_gamma: options.fit_gamma,
        fixed_gamma: options.gamma,
    };
    let (s0, g0, b0) = initial_guess(&prob.coef, n, options);
    let mut x0 = vec![s0.ln()];
    if options.fit_gamma {
        x0.push(g0.ln());
    }
    x0.extend(b0);
    let out = lm::minimize(&prob, DVector::from_vec(x0), LmConfig::default());
    let count = (3 * n * valid.len()) as f64;
    if !out.converged {
        return Err(Error::NotConverged {
            iterations: out.iterations,
            best_params: out.x.iter().copied().collect(),
            best_rms: (out.cost / count).sqrt(),
        });
    }
    let (s, gamma) = prob.unpack(&out.x);
    let off = prob.b_offset();
    let backlight = (0..n)
        .map(|i| std::array::from_fn(|c| out.x[off + 3 * i + c]))
        .collect();
    Ok(BacklightFit {
        s,
        gamma,
        backlight,
        loss: out.cost / count,
        loss_trace: out.trace.iter().map(|c| c / count).collect(),
        pixels_used: valid.len(),
    })
}

/// Load radiometric samples from CSV with columns
/// `set_value,value_r,value_g,value_b`.
pub fn load_radiometric_csv(path: &Path) -> Result<Vec<RadiometricSample>> {
    read_rows(path)?
        .into_iter()
        .map(|r| {
            Ok(RadiometricSample {
                set_value: r[0],
                measured: [r[1], r[2], r[3]],
            })
        })
        .collect()
}

/// Load falloff samples from CSV with columns
/// `distance,value_r,value_g,value_b`; the channels are averaged.
pub fn load_falloff_csv(path: &Path) -> Result<Vec<FalloffSample>> {
    Ok(read_rows(path)?
        .into_iter()
        .map(|r| FalloffSample {
            distance: r[0],
            measured: (r[1] + r[2] + r[3]) / 3.0,
        })
        .collect())
}

fn read_rows(path: &Path) -> Result<Vec<[f64; 4]>> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 4 {
            return Err(Error::InvalidInput(format!(
                "{}: expected 4 columns, found {}",
                path.display(),
                rec.len()
            )));
        }
        let mut row = [0.0; 4];
        for (k, field) in rec.iter().enumerate() {
            row[k] = field.trim().parse().map_err(|_| {
                Error::InvalidInput(format!("{}: bad number {field:?}", path.display()))
            })?;
        }
        rows.push(row);
    }
    Ok(rows)
}
