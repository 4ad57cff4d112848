//! Cook-Torrance reflectance and the basis-BRDF mixture.
//!
//! Each basis is `f = rho_d + rho_s * D F G / (4 (n.i)(n.o))` with
//!
//! * `D`: GGX / Trowbridge-Reitz, `alpha = sigma^2`,
//! * `F`: Schlick with `F0 = rho_s`,
//! * `G`: height-correlated Smith for GGX.
//!
//! All three are symmetric in `i` and `o`, so the model is reciprocal.
//! Roughness is a per-channel quantity and every colour channel is
//! evaluated independently. The diffuse lobe carries no `1/pi`: albedo
//! here is the radiometric factor that multiplies `(n.i) L / d^2` directly.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Mask, Rgb};
use crate::scene::Vec3;

pub const MIN_ROUGHNESS: f64 = 1e-3;
pub const MAX_ROUGHNESS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CookTorrance {
    pub diffuse: Rgb,
    pub specular: Rgb,
    pub roughness: Rgb,
}

impl CookTorrance {
    pub fn new(diffuse: Rgb, specular: Rgb, roughness: Rgb) -> Result<Self> {
        let unit = |v: &Rgb| v.iter().all(|x| (0.0..=1.0).contains(x));
        if !unit(&diffuse) || !unit(&specular) {
            return Err(Error::InvalidInput("albedos must lie in [0, 1]".into()));
        }
        if roughness.iter().any(|&r| !(r > 0.0 && r <= MAX_ROUGHNESS)) {
            return Err(Error::InvalidInput("roughness must lie in (0, 1]".into()));
        }
        Ok(Self {
            diffuse,
            specular,
            roughness: roughness.map(clamp_roughness),
        })
    }

    pub fn lambertian(diffuse: Rgb) -> Self {
        Self {
            diffuse,
            specular: [0.0; 3],
            roughness: [0.5; 3],
        }
    }

    /// Project every parameter back into its admissible range.
    pub fn clamp(&mut self) {
        for c in 0..3 {
            self.diffuse[c] = self.diffuse[c].clamp(0.0, 1.0);
            self.specular[c] = self.specular[c].clamp(0.0, 1.0);
            self.roughness[c] = clamp_roughness(self.roughness[c]);
        }
    }
}

#[inline]
pub fn clamp_roughness(r: f64) -> f64 {
    r.clamp(MIN_ROUGHNESS, MAX_ROUGHNESS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisBrdfSet {
    pub bases: Vec<CookTorrance>,
}

impl BasisBrdfSet {
    pub fn new(bases: Vec<CookTorrance>) -> Result<Self> {
        if bases.is_empty() {
            return Err(Error::InvalidInput("a basis set needs at least one BRDF".into()));
        }
        Ok(Self { bases })
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }
}

/// Per-pixel mixture weights, `height x width x J`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMaps {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    pub data: Vec<f64>,
}

impl WeightMaps {
    pub fn uniform(width: usize, height: usize, count: usize) -> Self {
        Self {
            width,
            height,
            count,
            data: vec![1.0 / count as f64; width * height * count],
        }
    }

    /// Every pixel fully assigned to basis `labels[p]`.
    pub fn one_hot(width: usize, height: usize, count: usize, labels: &[usize]) -> Self {
        let mut data = vec![0.0; width * height * count];
        for (p, &l) in labels.iter().enumerate() {
            data[p * count + l] = 1.0;
        }
        Self {
            width,
            height,
            count,
            data,
        }
    }

    #[inline]
    pub fn at(&self, pixel: usize) -> &[f64] {
        &self.data[pixel * self.count..(pixel + 1) * self.count]
    }

    #[inline]
    pub fn at_mut(&mut self, pixel: usize) -> &mut [f64] {
        &mut self.data[pixel * self.count..(pixel + 1) * self.count]
    }

    /// Check nonnegativity and the sum-to-one constraint on masked pixels.
    pub fn validate(&self, mask: &Mask) -> Result<()> {
        mask.check_dims(self.width, self.height, "weight maps")?;
        for p in mask.indices() {
            let w = self.at(p);
            if w.iter().any(|&x| x < 0.0) {
                return Err(Error::InvalidInput(format!("negative weight at pixel {p}")));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidInput(format!("weights at pixel {p} sum to {s}")));
            }
        }
        Ok(())
    }
}

/// A spatially varying BRDF: shared bases plus per-pixel weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SvBrdf {
    pub bases: BasisBrdfSet,
    pub weights: WeightMaps,
}

impl SvBrdf {
    pub fn new(bases: BasisBrdfSet, weights: WeightMaps) -> Result<Self> {
        if weights.count != bases.len() {
            return Err(Error::Dimension(format!(
                "{} weight maps for {} bases",
                weights.count,
                bases.len()
            )));
        }
        Ok(Self { bases, weights })
    }

    /// The same BRDF everywhere.
    pub fn uniform(width: usize, height: usize, brdf: CookTorrance) -> Self {
        Self {
            bases: BasisBrdfSet { bases: vec![brdf] },
            weights: WeightMaps::uniform(width, height, 1),
        }
    }

    /// Mixture value at a pixel, given precomputed cosines.
    #[inline]
    pub fn eval_at(&self, pixel: usize, fr: &Frame) -> Rgb {
        let mut out = [0.0; 3];
        for (basis, &w) in self.bases.bases.iter().zip(self.weights.at(pixel)) {
            if w == 0.0 {
                continue;
            }
            let f = eval_in_frame(basis, fr).value;
            for c in 0..3 {
                out[c] += w * f[c];
            }
        }
        out
    }
}

/// Shading cosines shared by every lobe evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub ni: f64,
    pub no: f64,
    pub nh: f64,
    pub oh: f64,
    pub h: Vec3,
}

impl Frame {
    #[inline]
    pub fn new(i: &Vec3, o: &Vec3, n: &Vec3) -> Self {
        let sum = i + o;
        let len = sum.norm();
        // i = -o has no half vector; that configuration is always backfacing
        let h = if len > 1e-12 { sum / len } else { *n };
        Self {
            ni: n.dot(i),
            no: n.dot(o),
            nh: n.dot(&h),
            oh: o.dot(&h),
            h,
        }
    }

    #[inline]
    pub fn backfacing(&self) -> bool {
        self.ni <= 0.0 || self.no <= 0.0
    }
}

/// Specular lobe value and its partial derivatives for one channel.
#[derive(Debug, Clone, Copy, Default)]
pub struct LobeGrad {
    pub value: f64,
    pub d_specular: f64,
    pub d_roughness: f64,
    pub d_nh: f64,
    pub d_ni: f64,
    pub d_no: f64,
}

#[inline]
fn schlick_weight(oh: f64) -> f64 {
    let m = (1.0 - oh).clamp(0.0, 1.0);
    let m2 = m * m;
    m2 * m2 * m
}

/// `rho_s * D F G / (4 (n.i)(n.o))` for a single channel; zero if backfacing.
#[inline]
pub fn specular_lobe(rho_s: f64, sigma: f64, fr: &Frame) -> f64 {
    if fr.backfacing() || rho_s == 0.0 {
        return 0.0;
    }
    let sigma = clamp_roughness(sigma);
    let a2 = sigma.powi(4);
    let t = fr.nh * fr.nh * (a2 - 1.0) + 1.0;
    let d = a2 / (PI * t * t);
    let ai = (fr.ni * fr.ni * (1.0 - a2) + a2).sqrt();
    let ao = (fr.no * fr.no * (1.0 - a2) + a2).sqrt();
    let v = 0.5 / (fr.no * ai + fr.ni * ao);
    let f = rho_s + (1.0 - rho_s) * schlick_weight(fr.oh);
    rho_s * f * d * v
}

#[inline]
pub fn specular_lobe_grad(rho_s: f64, sigma: f64, fr: &Frame) -> LobeGrad {
    if fr.backfacing() {
        return LobeGrad::default();
    }
    let inside = (MIN_ROUGHNESS..=MAX_ROUGHNESS).contains(&sigma);
    let sigma = clamp_roughness(sigma);
    let a2 = sigma.powi(4);
    let nh2 = fr.nh * fr.nh;
    let t = nh2 * (a2 - 1.0) + 1.0;
    let pt3 = PI * t * t * t;
    let d = a2 / (PI * t * t);
    let dd_da2 = (t - 2.0 * a2 * nh2) / pt3;
    let dd_dnh = -4.0 * a2 * fr.nh * (a2 - 1.0) / pt3;

    let ai = (fr.ni * fr.ni * (1.0 - a2) + a2).sqrt();
    let ao = (fr.no * fr.no * (1.0 - a2) + a2).sqrt();
    let s = fr.no * ai + fr.ni * ao;
    let v = 0.5 / s;
    let ds_da2 = fr.no * (1.0 - fr.ni * fr.ni) / (2.0 * ai) + fr.ni * (1.0 - fr.no * fr.no) / (2.0 * ao);
    let ds_dni = fr.no * fr.ni * (1.0 - a2) / ai + ao;
    let ds_dno = ai + fr.ni * fr.no * (1.0 - a2) / ao;
    let dv = -v / s;

    let w5 = schlick_weight(fr.oh);
    let f = rho_s + (1.0 - rho_s) * w5;
    let amp = rho_s * f;
    let damp = f + rho_s * (1.0 - w5);

    let da2_dsigma = 4.0 * sigma * sigma * sigma;
    LobeGrad {
        value: amp * d * v,
        d_specular: damp * d * v,
        d_roughness: if inside {
            amp * (dd_da2 * v + d * dv * ds_da2) * da2_dsigma
        } else {
            0.0
        },
        d_nh: amp * dd_dnh * v,
        d_ni: amp * d * dv * ds_dni,
        d_no: amp * d * dv * ds_dno,
    }
}

/// BRDF value with a flag for configurations outside the upper hemisphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shaded {
    pub value: Rgb,
    /// Light or viewer below the surface; only the diffuse term is returned.
    pub backfacing: bool,
}

pub fn eval_cook_torrance(params: &CookTorrance, i: &Vec3, o: &Vec3, n: &Vec3) -> Shaded {
    let fr = Frame::new(i, o, n);
    eval_in_frame(params, &fr)
}

#[inline]
pub fn eval_in_frame(params: &CookTorrance, fr: &Frame) -> Shaded {
    let mut value = params.diffuse;
    for (c, v) in value.iter_mut().enumerate() {
        *v += specular_lobe(params.specular[c], params.roughness[c], fr);
    }
    Shaded {
        value,
        backfacing: fr.backfacing(),
    }
}

fn check_weights(set: &BasisBrdfSet, w: &[f64]) -> Result<()> {
    if w.len() != set.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} bases",
            w.len(),
            set.len()
        )));
    }
    if let Some(x) = w.iter().find(|&&x| x < 0.0) {
        return Err(Error::InvalidInput(format!("negative mixture weight {x}")));
    }
    Ok(())
}

/// `sum_j w_j f_j(i, o)`.
pub fn eval_basis(set: &BasisBrdfSet, w: &[f64], i: &Vec3, o: &Vec3, n: &Vec3) -> Result<Rgb> {
    check_weights(set, w)?;
    let fr = Frame::new(i, o, n);
    let mut out = [0.0; 3];
    for (basis, &wj) in set.bases.iter().zip(w) {
        let f = eval_in_frame(basis, &fr).value;
        for c in 0..3 {
            out[c] += wj * f[c];
        }
    }
    Ok(out)
}

/// Partial derivatives of the mixture BRDF. Channel `c` of `f` depends only
/// on channel `c` of each basis parameter, so per-basis entries are indexed
/// `[j][c]` and mean `d f_c / d param_{j,c}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrdfGrad {
    pub value: Rgb,
    pub d_diffuse: Vec<Rgb>,
    pub d_specular: Vec<Rgb>,
    pub d_roughness: Vec<Rgb>,
    /// `d f_c / d w_j`, i.e. basis `j`'s value.
    pub d_weight: Vec<Rgb>,
    /// `d f_c / d n`, projected onto the tangent plane of `n`.
    pub d_normal: [Vec3; 3],
}

pub fn grad_brdf(set: &BasisBrdfSet, w: &[f64], i: &Vec3, o: &Vec3, n: &Vec3) -> Result<BrdfGrad> {
    check_weights(set, w)?;
    let fr = Frame::new(i, o, n);
    let j = set.len();
    let mut g = BrdfGrad {
        value: [0.0; 3],
        d_diffuse: vec![[0.0; 3]; j],
        d_specular: vec![[0.0; 3]; j],
        d_roughness: vec![[0.0; 3]; j],
        d_weight: vec![[0.0; 3]; j],
        d_normal: [Vec3::zeros(); 3],
    };
    let mut dn = [[0.0; 3]; 3];
    for (k, (basis, &wk)) in set.bases.iter().zip(w).enumerate() {
        for c in 0..3 {
            let lobe = specular_lobe_grad(basis.specular[c], basis.roughness[c], &fr);
            let fk = basis.diffuse[c] + lobe.value;
            g.value[c] += wk * fk;
            g.d_diffuse[k][c] = wk;
            g.d_specular[k][c] = wk * lobe.d_specular;
            g.d_roughness[k][c] = wk * lobe.d_roughness;
            g.d_weight[k][c] = fk;
            dn[c][0] += wk * lobe.d_nh;
            dn[c][1] += wk * lobe.d_ni;
            dn[c][2] += wk * lobe.d_no;
        }
    }
    for c in 0..3 {
        let raw = fr.h * dn[c][0] + i * dn[c][1] + o * dn[c][2];
        g.d_normal[c] = raw - n * n.dot(&raw);
    }
    Ok(g)
}
