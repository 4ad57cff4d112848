//! Basis-BRDF inverse rendering.
//!
//! [`solve`] starts from near-field photometric stereo, clusters the
//! pseudo-diffuse colours into `J` materials and then minimizes
//! `RMSE(rendered, captured) + tv_lambda * (TV(weights) + TV(normals))`.
//! Each iteration takes a damped Gauss-Newton step on the shared basis
//! parameters and an Adam step on the per-pixel normals and weight logits,
//! each accepted only if the objective does not increase. Pixels whose error
//! stays far above the median periodically try a set of discrete normal
//! candidates, which lets them leave local minima around specular highlights.
//!
//! Reductions over pixels run in fixed-size chunks that are combined in
//! order, so results do not depend on the number of worker threads.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::brdf::{clamp_roughness, specular_lobe_grad, BasisBrdfSet, CookTorrance, Frame, LobeGrad, SvBrdf, WeightMaps};
use crate::error::{Error, Result};
use crate::image::{Image, Mask, Rgb};
use crate::metrics::SATURATION_LEVEL;
use crate::photometric_stereo::{nearfield_ps, NearfieldOptions, Thresholds};
use crate::render::{pattern_radiance, DisplayPattern, FalloffParams};
use crate::scene::{CameraModel, DisplayModel, SceneMaps, Vec3};

/// Learning rates per parameter group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    /// Initial Marquardt damping of the Gauss-Newton step on the basis
    /// parameters (diffuse, specular, roughness), relative to the diagonal.
    pub reflectance: f64,
    /// Tangent-plane normal updates, radians per step at most.
    pub normal: f64,
    /// Mixture-weight logits.
    pub weight: f64,
}

impl Default for StepSizes {
    fn default() -> Self {
        Self {
            reflectance: 1e-2,
            normal: 5e-3,
            weight: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig {
    /// Number of basis BRDFs `J`.
    pub bases: usize,
    pub iterations: usize,
    pub steps: StepSizes,
    pub tv_lambda: f64,
    pub seed: u64,
    /// Leave saturated capture samples out of the loss.
    pub saturation_exclude: bool,
    /// Sample selection for the photometric-stereo initialization.
    pub ps_thresholds: Thresholds,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            bases: 2,
            iterations: 500,
            steps: StepSizes::default(),
            tv_lambda: 1e-2,
            seed: 0,
            saturation_exclude: false,
            ps_thresholds: Thresholds::default(),
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bases == 0 {
            return Err(Error::InvalidInput("at least one basis BRDF is required".into()));
        }
        if !(self.tv_lambda >= 0.0) {
            return Err(Error::InvalidInput("tv_lambda must be nonnegative".into()));
        }
        let s = self.steps;
        if [s.reflectance, s.normal, s.weight].iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidInput("step sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Reconstructed scene: normals plus a spatially varying BRDF.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEstimate {
    pub normal: Vec<Vec3>,
    pub brdf: SvBrdf,
    /// Camera-frame depth, held fixed during optimization.
    pub depth: Vec<f64>,
    pub mask: Mask,
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub estimate: SceneEstimate,
    pub initial: SceneEstimate,
    /// Objective at the start and after every accepted step.
    pub loss_trace: Vec<f64>,
    /// Optimizer steps attempted, including rejected ones.
    pub iterations: usize,
    /// Pixels photometric stereo could not solve; they start facing the camera.
    pub ps_dropped: usize,
}

/// Result of [`init_clusters`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterInit {
    pub weights: WeightMaps,
    pub bases: BasisBrdfSet,
    /// Cluster index per pixel (0 outside the mask).
    pub labels: Vec<usize>,
    /// True when fewer than the requested number of clusters survived.
    pub merged: bool,
}

/// Hexcone hue in `[0, 1)` and saturation.
fn hue_saturation(c: &[f64]) -> (f64, f64) {
    let (r, g, b) = (c[0], c[1], c[2]);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if max <= 0.0 || delta <= 0.0 {
        return (0.0, 0.0);
    }
    let h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    (h / 6.0, delta / max)
}

fn embed(c: &[f64]) -> [f64; 2] {
    let (h, s) = hue_saturation(c);
    let a = std::f64::consts::TAU * h;
    [s * a.cos(), s * a.sin()]
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

const KMEANS_MAX_ITERATIONS: usize = 100;
/// Embedded points closer than this count as the same colour.
const DISTINCT_TOL: f64 = 1e-9;

/// K-means on the hue/saturation circle embedding of `pseudo_diffuse`.
///
/// Each cluster becomes a basis with the cluster's mean colour as diffuse
/// albedo and specular albedo and roughness 0.5. Weights are one-hot.
/// Clusters are numbered in order of their first pixel. If fewer than `j`
/// distinct colours exist, or clusters coincide, they are merged and a
/// warning is logged.
pub fn init_clusters(pseudo_diffuse: &Image, mask: &Mask, j: usize, seed: u64) -> Result<ClusterInit> {
    if j == 0 {
        return Err(Error::InvalidInput("J must be at least 1".into()));
    }
    if pseudo_diffuse.channels != 3 {
        return Err(Error::InvalidInput("pseudo-diffuse image must be RGB".into()));
    }
    mask.check_dims(pseudo_diffuse.width, pseudo_diffuse.height, "cluster mask")?;
    let pixels: Vec<usize> = mask.indices().collect();
    if pixels.is_empty() {
        return Err(Error::InvalidInput("empty mask".into()));
    }
    let points: Vec<[f64; 2]> = pixels.iter().map(|&p| embed(pseudo_diffuse.pixel(p))).collect();

    // distinct colours, capped at j
    let mut distinct: Vec<[f64; 2]> = Vec::new();
    for pt in &points {
        if distinct.len() >= j {
            break;
        }
        if distinct.iter().all(|d| dist2(d, pt) > DISTINCT_TOL) {
            distinct.push(*pt);
        }
    }
    let k = distinct.len();

    // k-means++ seeding
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[next]);
        for (d, p) in d2.iter_mut().zip(&points) {
            *d = d.min(dist2(p, &points[next]));
        }
    }

    let nearest = |p: &[f64; 2], centers: &[[f64; 2]]| -> usize {
        let mut best = 0;
        for (c, ctr) in centers.iter().enumerate() {
            if dist2(p, ctr) < dist2(p, &centers[best]) {
                best = c;
            }
        }
        best
    };
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut sums = vec![[0.0; 2]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }

    // relabel by first occurrence, dropping empty clusters
    let mut relabel = vec![usize::MAX; k];
    let mut used = 0;
    for &a in &assign {
        if relabel[a] == usize::MAX {
            relabel[a] = used;
            used += 1;
        }
    }
    let merged = used < j;
    if merged {
        log::warn!("only {used} distinct material clusters found; reducing J from {j} to {used}");
    }
    let mut labels = vec![0; mask.data.len()];
    let mut color_sum = vec![[0.0; 3]; used];
    let mut counts = vec![0usize; used];
    for (&p, &a) in pixels.iter().zip(&assign) {
        let l = relabel[a];
        labels[p] = l;
        let c = pseudo_diffuse.pixel(p);
        for ch in 0..3 {
            color_sum[l][ch] += c[ch];
        }
        counts[l] += 1;
    }
    let bases = color_sum
        .iter()
        .zip(&counts)
        .map(|(s, &n)| CookTorrance::new(s.map(|v| (v / n as f64).clamp(0.0, 1.0)), [0.5; 3], [0.5; 3]))
        .collect::<Result<Vec<_>>>()?;
    let mut weights = WeightMaps::one_hot(pseudo_diffuse.width, pseudo_diffuse.height, used, &labels);
    for p in 0..mask.data.len() {
        if !mask.data[p] {
            weights.at_mut(p).fill(0.0);
        }
    }
    Ok(ClusterInit {
        weights,
        bases: BasisBrdfSet::new(bases)?,
        labels,
        merged,
    })
}

/// Root mean squared difference over valid entries.
///
/// `validity`, when given, is indexed `[image][pixel * channels + channel]`.
pub fn rmse_loss(rendered: &[Image], captured: &[Image], validity: Option<&[Vec<bool>]>) -> Result<f64> {
    if rendered.len() != captured.len() {
        return Err(Error::Dimension(format!(
            "{} rendered images for {} captures",
            rendered.len(),
            captured.len()
        )));
    }
    if validity.is_some_and(|v| v.len() != rendered.len()) {
        return Err(Error::Dimension("one validity map per image".into()));
    }
    let mut sse = 0.0;
    let mut count = 0usize;
    for (k, (a, b)) in rendered.iter().zip(captured).enumerate() {
        a.check_shape(b, "rmse_loss")?;
        let valid = validity.map(|v| &v[k]);
        if valid.is_some_and(|v| v.len() != a.data.len()) {
            return Err(Error::Dimension("validity map size differs from image".into()));
        }
        for (i, (x, y)) in a.data.iter().zip(&b.data).enumerate() {
            if valid.is_none_or(|v| v[i]) {
                sse += (x - y) * (x - y);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput("no valid entries for the loss".into()));
    }
    Ok((sse / count as f64).sqrt())
}

/// Charbonnier smoothing constant of the total-variation norm.
pub const TV_EPSILON: f64 = 1e-6;

/// Masked neighbour pairs (right and down), in raster order.
fn tv_pairs(mask: &Mask) -> impl Iterator<Item = (usize, usize)> + '_ {
    let (w, h) = (mask.width, mask.height);
    (0..w * h).flat_map(move |p| {
        let (x, y) = (p % w, p / w);
        let right = (x + 1 < w).then_some(p + 1);
        let down = (y + 1 < h).then_some(p + w);
        [right, down]
            .into_iter()
            .flatten()
            .filter(move |&q| mask.data[p] && mask.data[q])
            .map(move |q| (p, q))
    })
}

fn charbonnier(d: f64) -> f64 {
    (d * d + TV_EPSILON * TV_EPSILON).sqrt() - TV_EPSILON
}

/// Anisotropic total variation: mean over masked neighbour pairs of the
/// smoothed absolute differences summed over channels.
pub fn tv_norm(map: &Image, mask: &Mask) -> Result<f64> {
    Ok(tv_with_grad(map, mask)?.0)
}

/// [`tv_norm`] and its gradient with respect to every map entry.
pub fn tv_with_grad(map: &Image, mask: &Mask) -> Result<(f64, Image)> {
    mask.check_dims(map.width, map.height, "tv mask")?;
    let c = map.channels;
    let mut grad = Image::zeros(map.width, map.height, c);
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (p, q) in tv_pairs(mask) {
        pairs += 1;
        for k in 0..c {
            let d = map.data[p * c + k] - map.data[q * c + k];
            total += charbonnier(d);
            let g = d / (d * d + TV_EPSILON * TV_EPSILON).sqrt();
            grad.data[p * c + k] += g;
            grad.data[q * c + k] -= g;
        }
    }
    if pairs == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / pairs as f64;
    grad.data.iter_mut().for_each(|g| *g *= inv);
    Ok((total * inv, grad))
}

/// Logit given to the assigned cluster when weights leave one-hot form.
const INITIAL_LOGIT: f64 = 8.0;
const CHUNK: usize = 64;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Learning-rate growth after an accepted step.
const LR_GROWTH: f64 = 1.1;
/// Stop once every learning rate has shrunk below this fraction.
const LR_FLOOR: f64 = 1e-10;
const MIN_DAMPING: f64 = 1e-9;
const MAX_DAMPING: f64 = 1e12;
/// Ridge added to the Gauss-Newton matrix, relative to its largest diagonal.
const DIAGONAL_FLOOR: f64 = 1e-12;
/// Iterations between discrete normal searches at outlier pixels.
const SEARCH_PERIOD: usize = 25;
const OUTLIER_FACTOR: f64 = 10.0;
const SEARCH_ANGLES_DEG: [f64; 5] = [2.0, 5.0, 10.0, 20.0, 35.0];
const SEARCH_AZIMUTHS: usize = 8;
/// Stop when the objective fell by less than `FTOL` (relative) over the
/// last `CONVERGENCE_WINDOW` iterations.
const CONVERGENCE_WINDOW: usize = 25;
const FTOL: f64 = 1e-6;

#[derive(Debug, Clone)]
struct Params {
    normal: Vec<Vec3>,
    /// `pixel * J + j`; unused when `J = 1`.
    logits: Vec<f64>,
    bases: Vec<CookTorrance>,
}

#[derive(Debug, Clone)]
struct Grads {
    normal: Vec<Vec3>,
    logits: Vec<f64>,
    /// Per basis: d diffuse, d specular, d roughness.
    bases: Vec<[Rgb; 3]>,
    /// Unscaled `J^T r` of the data residuals for the basis parameters.
    jtr: Vec<[Rgb; 3]>,
    /// Gauss-Newton matrix per channel over `(basis, parameter)` pairs.
    jtj: [Vec<f64>; 3],
    /// Data-term squared error per pixel.
    pixel_sse: Vec<f64>,
}

fn softmax(z: &[f64], out: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

struct Problem<'a> {
    width: usize,
    height: usize,
    j: usize,
    pixels: Vec<usize>,
    scene: &'a SceneMaps,
    positions: &'a [Vec3],
    falloff: FalloffParams,
    /// Sparse radiance per pattern: `(superpixel, rgb)`.
    radiance: Vec<Vec<(usize, Rgb)>>,
    /// Superpixels lit by at least one pattern.
    active: Vec<usize>,
    captures: &'a [Image],
    saturation_exclude: bool,
    count: usize,
    tv_lambda: f64,
}

struct PixelScratch {
    k: Vec<Rgb>,
    g: Vec<Rgb>,
    lobes: Vec<LobeGrad>,
    geo: Vec<(Vec3, f64, f64, Frame)>,
    w: Vec<f64>,
    /// Jacobian row of one residual over the basis parameters of its channel.
    jr: Vec<f64>,
}

struct ChunkOut {
    sse: f64,
    bases: Vec<[Rgb; 3]>,
    jtj: [Vec<f64>; 3],
    sse_per_pixel: Vec<f64>,
    normal: Vec<Vec3>,
    dw: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn valid(&self, m: usize, p: usize, c: usize) -> bool {
        !self.saturation_exclude || self.captures[m].data[3 * p + c] < SATURATION_LEVEL
    }

    fn scratch(&self) -> PixelScratch {
        let n = self.positions.len();
        PixelScratch {
            k: vec![[0.0; 3]; n],
            g: vec![[0.0; 3]; n],
            lobes: vec![LobeGrad::default(); n * self.j * 3],
            geo: vec![(Vec3::zeros(), 0.0, 0.0, Frame::new(&Vec3::z(), &Vec3::z(), &Vec3::z())); n],
            w: vec![0.0; self.j],
            jr: vec![0.0; 3 * self.j],
        }
    }

    /// Data term for one pixel. Returns the squared error and accumulates
    /// `sum r dI/dtheta` and the basis Gauss-Newton matrices into `out`.
    fn pixel(&self, p: usize, params: &Params, sc: &mut PixelScratch, out: &mut ChunkOut, k: usize) -> f64 {
        let j = self.j;
        let n = params.normal[p];
        let o = self.scene.view[p];
        let x = self.scene.points[p];
        if j == 1 {
            sc.w[0] = 1.0;
        } else {
            softmax(&params.logits[p * j..(p + 1) * j], &mut sc.w);
        }
        for &i in &self.active {
            sc.k[i] = [0.0; 3];
            sc.g[i] = [0.0; 3];
            let delta = self.positions[i] - x;
            let d = delta.norm();
            let dir = delta / d;
            let ni = n.dot(&dir);
            let fo = self.falloff.eval_unchecked(d);
            let fr = Frame::new(&dir, &o, &n);
            sc.geo[i] = (dir, ni, fo, fr);
            if ni <= 0.0 {
                continue;
            }
            let mut f = [0.0; 3];
            for (b, basis) in params.bases.iter().enumerate() {
                for c in 0..3 {
                    let lg = specular_lobe_grad(basis.specular[c], basis.roughness[c], &fr);
                    sc.lobes[(i * j + b) * 3 + c] = lg;
                    f[c] += sc.w[b] * (basis.diffuse[c] + lg.value);
                }
            }
            sc.k[i] = f.map(|v| v * ni * fo);
        }
        let mut sse = 0.0;
        for (m, row) in self.radiance.iter().enumerate() {
            let mut pred = [0.0; 3];
            for (i, l) in row {
                for c in 0..3 {
                    pred[c] += l[c] * sc.k[*i][c];
                }
            }
            let cap = self.captures[m].pixel(p);
            for c in 0..3 {
                if !self.valid(m, p, c) {
                    continue;
                }
                let r = pred[c] - cap[c];
                sse += r * r;
                sc.jr.fill(0.0);
                for (i, l) in row {
                    sc.g[*i][c] += l[c] * r;
                    let (_, ni, fo, _) = sc.geo[*i];
                    if ni <= 0.0 {
                        continue;
                    }
                    let a = l[c] * ni * fo;
                    for b in 0..j {
                        let lg = sc.lobes[(i * j + b) * 3 + c];
                        let s = a * sc.w[b];
                        sc.jr[3 * b] += s;
                        sc.jr[3 * b + 1] += s * lg.d_specular;
                        sc.jr[3 * b + 2] += s * lg.d_roughness;
                    }
                }
                let q = 3 * j;
                let jtj = &mut out.jtj[c];
                for u in 0..q {
                    let ju = sc.jr[u];
                    if ju != 0.0 {
                        for v in u..q {
                            jtj[u * q + v] += ju * sc.jr[v];
                        }
                    }
                }
            }
        }
        let dw = &mut out.dw[k * j..(k + 1) * j];
        let mut dn = Vec3::zeros();
        for &i in &self.active {
            let (dir, ni, fo, fr) = sc.geo[i];
            if ni <= 0.0 {
                continue;
            }
            for c in 0..3 {
                let g = sc.g[i][c];
                if g == 0.0 {
                    continue;
                }
                let a = g * ni * fo;
                let mut f = 0.0;
                let mut lobe_dn = Vec3::zeros();
                for (b, basis) in params.bases.iter().enumerate() {
                    let lg = sc.lobes[(i * j + b) * 3 + c];
                    let wb = sc.w[b];
                    let fb = basis.diffuse[c] + lg.value;
                    f += wb * fb;
                    out.bases[b][0][c] += a * wb;
                    out.bases[b][1][c] += a * wb * lg.d_specular;
                    out.bases[b][2][c] += a * wb * lg.d_roughness;
                    dw[b] += a * fb;
                    lobe_dn += (fr.h * lg.d_nh + dir * lg.d_ni + o * lg.d_no) * wb;
                }
                dn += (dir * f + lobe_dn * ni) * (g * fo);
            }
        }
        out.normal[k] = dn;
        sse
    }

    /// Data-term squared error of pixel `p` with normal `n`.
    fn pixel_sse(&self, p: usize, n: &Vec3, params: &Params, sc: &mut PixelScratch) -> f64 {
        let j = self.j;
        let o = self.scene.view[p];
        let x = self.scene.points[p];
        if j == 1 {
            sc.w[0] = 1.0;
        } else {
            softmax(&params.logits[p * j..(p + 1) * j], &mut sc.w);
        }
        for &i in &self.active {
            sc.k[i] = [0.0; 3];
            let delta = self.positions[i] - x;
            let d = delta.norm();
            let dir = delta / d;
            let ni = n.dot(&dir);
            if ni <= 0.0 {
                continue;
            }
            let fr = Frame::new(&dir, &o, n);
            let fo = self.falloff.eval_unchecked(d);
            let mut f = [0.0; 3];
            for (b, basis) in params.bases.iter().enumerate() {
                for c in 0..3 {
                    let lobe = crate::brdf::specular_lobe(basis.specular[c], basis.roughness[c], &fr);
                    f[c] += sc.w[b] * (basis.diffuse[c] + lobe);
                }
            }
            sc.k[i] = f.map(|v| v * ni * fo);
        }
        let mut sse = 0.0;
        for (m, row) in self.radiance.iter().enumerate() {
            let mut pred = [0.0; 3];
            for (i, l) in row {
                for c in 0..3 {
                    pred[c] += l[c] * sc.k[*i][c];
                }
            }
            let cap = self.captures[m].pixel(p);
            for c in 0..3 {
                if self.valid(m, p, c) {
                    sse += (pred[c] - cap[c]).powi(2);
                }
            }
        }
        sse
    }

    /// Best normal among rotated candidates and the neighbours' normals for
    /// every pixel whose error exceeds `OUTLIER_FACTOR` times the median.
    /// Returns the updated parameters, or `None` when nothing improved.
    fn normal_search(&self, params: &Params, pixel_sse: &[f64]) -> Option<Params> {
        let mut errors: Vec<f64> = self.pixels.iter().map(|&p| pixel_sse[p]).collect();
        errors.sort_by(f64::total_cmp);
        let threshold = OUTLIER_FACTOR * errors[errors.len() / 2];
        let outliers: Vec<usize> = self.pixels.iter().copied().filter(|&p| pixel_sse[p] > threshold).collect();
        if outliers.is_empty() {
            return None;
        }
        let w = self.width;
        let mask = &self.scene.mask;
        let found: Vec<Option<Vec3>> = outliers
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut sc = self.scratch();
                chunk
                    .iter()
                    .map(|&p| {
                        let n = params.normal[p];
                        let mut best = (pixel_sse[p], None);
                        let axis = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
                        let t1 = n.cross(&axis).normalize();
                        let t2 = n.cross(&t1);
                        let mut candidates = Vec::with_capacity(SEARCH_ANGLES_DEG.len() * SEARCH_AZIMUTHS + 8);
                        for &a in &SEARCH_ANGLES_DEG {
                            let (sa, ca) = a.to_radians().sin_cos();
                            for k in 0..SEARCH_AZIMUTHS {
                                let phi = std::f64::consts::TAU * k as f64 / SEARCH_AZIMUTHS as f64;
                                candidates.push(n * ca + (t1 * phi.cos() + t2 * phi.sin()) * sa);
                            }
                        }
                        let (x, y) = ((p % w) as isize, (p / w) as isize);
                        for dy in -1..=1isize {
                            for dx in -1..=1isize {
                                let (qx, qy) = (x + dx, y + dy);
                                if (dx, dy) == (0, 0) || qx < 0 || qy < 0 || qx >= w as isize || qy >= self.height as isize {
                                    continue;
                                }
                                let q = qy as usize * w + qx as usize;
                                if mask.data[q] {
                                    candidates.push(params.normal[q]);
                                }
                            }
                        }
                        for c in candidates {
                            if c.dot(&self.scene.view[p]) <= 0.0 {
                                continue;
                            }
                            let e = self.pixel_sse(p, &c, params, &mut sc);
                            if e < best.0 {
                                best = (e, Some(c));
                            }
                        }
                        best.1
                    })
                    .collect::<Vec<_>>()
            })
            .flatten()
            .collect();
        let mut next = params.clone();
        let mut changed = false;
        for (&p, n) in outliers.iter().zip(found) {
            if let Some(n) = n {
                next.normal[p] = n;
                changed = true;
            }
        }
        changed.then_some(next)
    }

    /// Objective and its gradient.
    fn evaluate(&self, params: &Params) -> Result<(f64, Grads)> {
        let j = self.j;
        let nb = params.bases.len();
        let outs: Vec<ChunkOut> = self
            .pixels
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut sc = self.scratch();
                let q = 3 * j;
                let mut out = ChunkOut {
                    sse: 0.0,
                    bases: vec![[[0.0; 3]; 3]; nb],
                    jtj: std::array::from_fn(|_| vec![0.0; q * q]),
                    sse_per_pixel: vec![0.0; chunk.len()],
                    normal: vec![Vec3::zeros(); chunk.len()],
                    dw: vec![0.0; chunk.len() * j],
                };
                for (k, &p) in chunk.iter().enumerate() {
                    let e = self.pixel(p, params, &mut sc, &mut out, k);
                    out.sse_per_pixel[k] = e;
                    out.sse += e;
                }
                out
            })
            .collect();

        let npix = self.width * self.height;
        let mut sse = 0.0;
        let mut grads = Grads {
            normal: vec![Vec3::zeros(); npix],
            logits: vec![0.0; npix * j],
            bases: vec![[[0.0; 3]; 3]; nb],
            jtr: Vec::new(),
            jtj: std::array::from_fn(|_| vec![0.0; 9 * j * j]),
            pixel_sse: vec![0.0; npix],
        };
        let mut dw_full = vec![0.0; npix * j];
        for (chunk, out) in self.pixels.chunks(CHUNK).zip(&outs) {
            sse += out.sse;
            for (acc, m) in grads.jtj.iter_mut().zip(&out.jtj) {
                acc.iter_mut().zip(m).for_each(|(a, v)| *a += v);
            }
            for (acc, b) in grads.bases.iter_mut().zip(&out.bases) {
                for g in 0..3 {
                    for c in 0..3 {
                        acc[g][c] += b[g][c];
                    }
                }
            }
            for (k, &p) in chunk.iter().enumerate() {
                grads.normal[p] = out.normal[k];
                grads.pixel_sse[p] = out.sse_per_pixel[k];
                dw_full[p * j..(p + 1) * j].copy_from_slice(&out.dw[k * j..(k + 1) * j]);
            }
        }
        let rmse = (sse / self.count as f64).sqrt();
        // d rmse = sum(r dI) / (rmse * count)
        let scale = if rmse > 0.0 { 1.0 / (rmse * self.count as f64) } else { 0.0 };
        grads.jtr = grads.bases.clone();
        for b in &mut grads.bases {
            b.iter_mut().flatten().for_each(|v| *v *= scale);
        }
        for p in &self.pixels {
            grads.normal[*p] *= scale;
        }
        dw_full.iter_mut().for_each(|v| *v *= scale);

        let mut loss = rmse;
        if self.tv_lambda > 0.0 {
            let mask = &self.scene.mask;
            let nimg = Image::from_vec(
                self.width,
                self.height,
                3,
                params.normal.iter().flat_map(|n| [n.x, n.y, n.z]).collect(),
            )?;
            let (tv_n, g_n) = tv_with_grad(&nimg, mask)?;
            loss += self.tv_lambda * tv_n;
            for &p in &self.pixels {
                let g = g_n.pixel(p);
                grads.normal[p] += Vec3::new(g[0], g[1], g[2]) * self.tv_lambda;
            }
            if j > 1 {
                let wimg = Image::from_vec(self.width, self.height, j, self.weights(params))?;
                let (tv_w, g_w) = tv_with_grad(&wimg, mask)?;
                loss += self.tv_lambda * tv_w;
                for (d, g) in dw_full.iter_mut().zip(&g_w.data) {
                    *d += self.tv_lambda * g;
                }
            }
        }
        // project normal gradients onto the tangent planes
        for &p in &self.pixels {
            let n = params.normal[p];
            let g = grads.normal[p];
            grads.normal[p] = g - n * n.dot(&g);
        }
        if j > 1 {
            let mut w = vec![0.0; j];
            for &p in &self.pixels {
                softmax(&params.logits[p * j..(p + 1) * j], &mut w);
                let dwp = &dw_full[p * j..(p + 1) * j];
                let dot: f64 = w.iter().zip(dwp).map(|(a, b)| a * b).sum();
                for b in 0..j {
                    grads.logits[p * j + b] = w[b] * (dwp[b] - dot);
                }
            }
        }
        Ok((loss, grads))
    }

    fn weights(&self, params: &Params) -> Vec<f64> {
        let j = self.j;
        let mut out = vec![0.0; self.width * self.height * j];
        for &p in &self.pixels {
            if j == 1 {
                out[p] = 1.0;
            } else {
                softmax(&params.logits[p * j..(p + 1) * j], &mut out[p * j..(p + 1) * j]);
            }
        }
        out
    }
}

/// First and second moment estimates for one parameter vector.
#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn update(&mut self, grad: &[f64]) {
        for ((m, v), g) in self.m.iter_mut().zip(&mut self.v).zip(grad) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        }
    }

    /// Bias-corrected Adam direction after `t` updates.
    fn direction(&self, t: i32) -> Vec<f64> {
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        self.m
            .iter()
            .zip(&self.v)
            .map(|(m, v)| (m / c1) / ((v / c2).sqrt() + ADAM_EPS))
            .collect()
    }
}

fn flatten_normals(g: &[Vec3], pixels: &[usize]) -> Vec<f64> {
    pixels.iter().flat_map(|&p| [g[p].x, g[p].y, g[p].z]).collect()
}

/// Damped Gauss-Newton step for the basis parameters, laid out like
/// `Grads::bases`. Channels decouple, so each solves a `3J x 3J` system.
fn gauss_newton_step(grads: &Grads, j: usize, damping: f64) -> Vec<[Rgb; 3]> {
    let q = 3 * j;
    let mut step = vec![[[0.0; 3]; 3]; j];
    for c in 0..3 {
        let upper = &grads.jtj[c];
        let a = DMatrix::from_fn(q, q, |u, v| if u <= v { upper[u * q + v] } else { upper[v * q + u] });
        let scale = (0..q).map(|u| a[(u, u)]).fold(0.0, f64::max);
        if !(scale > 0.0) {
            continue;
        }
        let mut m = a.clone();
        for u in 0..q {
            m[(u, u)] += damping * a[(u, u)] + DIAGONAL_FLOOR * scale;
        }
        let rhs = DVector::from_fn(q, |u, _| grads.jtr[u / 3][u % 3][c]);
        if let Some(ch) = m.cholesky() {
            let d = ch.solve(&rhs);
            for u in 0..q {
                step[u / 3][u % 3][c] = d[u];
            }
        }
    }
    step
}

fn apply_basis_step(params: &Params, step: &[[Rgb; 3]]) -> Params {
    let mut next = params.clone();
    for (basis, d) in next.bases.iter_mut().zip(step) {
        for c in 0..3 {
            basis.diffuse[c] = (basis.diffuse[c] - d[0][c]).clamp(0.0, 1.0);
            basis.specular[c] = (basis.specular[c] - d[1][c]).clamp(0.0, 1.0);
            basis.roughness[c] = clamp_roughness(basis.roughness[c] - d[2][c]);
        }
    }
    next
}

fn apply_pixel_step(params: &Params, pixels: &[usize], j: usize, dirs: &[Vec<f64>; 2], lr: &[f64; 2]) -> Params {
    let mut next = params.clone();
    for (k, &p) in pixels.iter().enumerate() {
        let n = next.normal[p];
        let d = Vec3::new(dirs[0][3 * k], dirs[0][3 * k + 1], dirs[0][3 * k + 2]);
        // 2-DoF move in the tangent plane, then back onto the sphere
        let t = d - n * n.dot(&d);
        let moved = n - t * lr[0];
        next.normal[p] = moved.normalize();
    }
    if j > 1 {
        for (k, &p) in pixels.iter().enumerate() {
            for b in 0..j {
                next.logits[p * j + b] -= lr[1] * dirs[1][k * j + b];
            }
        }
    }
    next
}

/// Full inverse-rendering pipeline.
///
/// `captures[m]` is the scene under `patterns[m]`; `depth` gives camera-frame
/// depth per pixel (a constant map is a valid approximation). Pixels with
/// invalid depth leave the mask.
#[allow(clippy::too_many_arguments)]
pub fn solve(
    captures: &[Image],
    patterns: &[DisplayPattern],
    display: &DisplayModel,
    camera: &CameraModel,
    depth: &[f64],
    mask: &Mask,
    falloff: &FalloffParams,
    config: &SolveConfig,
) -> Result<SolveOutput> {
    config.validate()?;
    if captures.is_empty() || captures.len() != patterns.len() {
        return Err(Error::InvalidInput(format!(
            "{} captures for {} patterns",
            captures.len(),
            patterns.len()
        )));
    }
    if mask.count() == 0 {
        return Err(Error::InvalidInput("empty mask".into()));
    }
    let (w, h) = (camera.width, camera.height);
    for c in captures {
        if c.width != w || c.height != h || c.channels != 3 {
            return Err(Error::Dimension(format!(
                "captures must be {w}x{h} RGB, got {}x{}x{}",
                c.width, c.height, c.channels
            )));
        }
    }

    // photometric-stereo initialization
    let ps = nearfield_ps(
        captures,
        patterns,
        display,
        camera,
        depth,
        falloff,
        mask,
        &NearfieldOptions {
            thresholds: Some(config.ps_thresholds),
        },
    )?;
    let placeholder = SceneMaps::new(camera, depth.to_vec(), vec![Vec3::new(0.0, 0.0, -1.0); w * h], mask.clone())?;
    let mut normal = vec![Vec3::new(0.0, 0.0, -1.0); w * h];
    let mut pseudo = ps.pseudo_diffuse.clone();
    for p in placeholder.mask.indices() {
        if ps.mask.data[p] {
            normal[p] = ps.normal[p];
        } else {
            normal[p] = placeholder.view[p];
            // hue survives in the mean capture colour
            let mut mean = [0.0; 3];
            for c in captures {
                for ch in 0..3 {
                    mean[ch] += c.pixel(p)[ch];
                }
            }
            pseudo.pixel_mut(p).copy_from_slice(&mean);
        }
    }
    let scene = placeholder.with_normals(normal.clone())?;
    let clusters = init_clusters(&pseudo.clamped(), &scene.mask, config.bases, config.seed)?;
    let j = clusters.bases.len();
    let initial = SceneEstimate {
        normal,
        brdf: SvBrdf::new(clusters.bases.clone(), clusters.weights.clone())?,
        depth: scene.depth.clone(),
        mask: scene.mask.clone(),
    };
    if config.iterations == 0 {
        return Ok(SolveOutput {
            estimate: initial.clone(),
            initial,
            loss_trace: Vec::new(),
            iterations: 0,
            ps_dropped: ps.dropped,
        });
    }

    let radiance: Vec<Vec<(usize, Rgb)>> = patterns
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
    let mut lit = vec![false; display.len()];
    radiance.iter().flatten().for_each(|(i, _)| lit[*i] = true);
    let active: Vec<usize> = (0..display.len()).filter(|&i| lit[i]).collect();
    let pixels: Vec<usize> = scene.mask.indices().collect();
    let count = pixels
        .iter()
        .map(|&p| {
            (0..captures.len())
                .map(|m| {
                    (0..3)
                        .filter(|&c| !config.saturation_exclude || captures[m].data[3 * p + c] < SATURATION_LEVEL)
                        .count()
                })
                .sum::<usize>()
        })
        .sum::<usize>();
    if count == 0 {
        return Err(Error::InvalidInput("every capture sample is saturated".into()));
    }
    let problem = Problem {
        width: w,
        height: h,
        j,
        pixels: pixels.clone(),
        scene: &scene,
        positions: &display.positions,
        falloff: *falloff,
        radiance,
        active,
        captures,
        saturation_exclude: config.saturation_exclude,
        count,
        tv_lambda: config.tv_lambda,
    };

    let mut logits = vec![0.0; w * h * j];
    if j > 1 {
        for &p in &pixels {
            logits[p * j + clusters.labels[p]] = INITIAL_LOGIT;
        }
    }
    let mut params = Params {
        normal: initial.normal.clone(),
        logits,
        bases: clusters.bases.bases.clone(),
    };
    let (mut loss, mut grads) = problem.evaluate(&params)?;
    let mut trace = vec![loss];
    let base_lr = [config.steps.normal, config.steps.weight];
    let mut lr = base_lr;
    let mut damping = config.steps.reflectance;
    let mut moments = [Moments::new(3 * pixels.len()), Moments::new(pixels.len() * j)];
    let mut t = 0;
    let mut attempts = 0;
    let mut pending: Option<([Moments; 2], [Vec<f64>; 2])> = None;
    let mut history = vec![loss];
    while attempts < config.iterations {
        let stalled = lr.iter().zip(&base_lr).all(|(l, b)| *l < LR_FLOOR * b) && damping > MAX_DAMPING;
        let converged = history.len() > CONVERGENCE_WINDOW && history[history.len() - 1 - CONVERGENCE_WINDOW] - loss <= FTOL * loss;
        if loss == 0.0 || stalled || converged {
            break;
        }
        attempts += 1;
        let mut improved = false;

        // escape local minima at pixels the descent cannot fix
        if attempts % SEARCH_PERIOD == 1 {
            if let Some(candidate) = problem.normal_search(&params, &grads.pixel_sse) {
                let (c_loss, c_grads) = problem.evaluate(&candidate)?;
                if c_loss.is_finite() && c_loss <= loss {
                    for (k, &p) in pixels.iter().enumerate() {
                        if candidate.normal[p] != params.normal[p] {
                            for d in 0..3 {
                                moments[0].m[3 * k + d] = 0.0;
                                moments[0].v[3 * k + d] = 0.0;
                            }
                        }
                    }
                    params = candidate;
                    loss = c_loss;
                    grads = c_grads;
                    pending = None;
                    improved = true;
                }
            }
        }

        // basis parameters: damped Gauss-Newton
        if damping <= MAX_DAMPING {
            let candidate = apply_basis_step(&params, &gauss_newton_step(&grads, j, damping));
            let (c_loss, c_grads) = problem.evaluate(&candidate)?;
            if c_loss.is_finite() && c_loss <= loss {
                params = candidate;
                loss = c_loss;
                grads = c_grads;
                damping = (damping / 3.0).max(MIN_DAMPING);
                improved = true;
            } else {
                damping *= 4.0;
            }
        }

        // per-pixel normals and weight logits: Adam
        let (next_moments, dirs) = match pending.take() {
            Some(x) => x,
            None => {
                let flat = [
                    flatten_normals(&grads.normal, &pixels),
                    pixels.iter().flat_map(|&p| grads.logits[p * j..(p + 1) * j].iter().copied()).collect(),
                ];
                let mut nm = moments.clone();
                for (m, g) in nm.iter_mut().zip(&flat) {
                    m.update(g);
                }
                let dirs = [nm[0].direction(t + 1), nm[1].direction(t + 1)];
                (nm, dirs)
            }
        };
        let candidate = apply_pixel_step(&params, &pixels, j, &dirs, &lr);
        let (c_loss, c_grads) = problem.evaluate(&candidate)?;
        if c_loss.is_finite() && c_loss <= loss {
            params = candidate;
            loss = c_loss;
            grads = c_grads;
            moments = next_moments;
            t += 1;
            for (l, b) in lr.iter_mut().zip(&base_lr) {
                *l = (*l * LR_GROWTH).min(*b);
            }
            improved = true;
        } else {
            lr.iter_mut().for_each(|l| *l *= 0.5);
            // moments computed from the same gradient stay valid
            pending = Some((next_moments, dirs));
        }
        if improved {
            trace.push(loss);
        }
        history.push(loss);
    }

    let weights = WeightMaps {
        width: w,
        height: h,
        count: j,
        data: problem.weights(&params),
    };
    let estimate = SceneEstimate {
        normal: params.normal,
        brdf: SvBrdf::new(BasisBrdfSet::new(params.bases)?, weights)?,
        depth: scene.depth.clone(),
        mask: scene.mask.clone(),
    };
    Ok(SolveOutput {
        estimate,
        initial,
        loss_trace: trace,
        iterations: attempts,
        ps_dropped: ps.dropped,
    })
}
