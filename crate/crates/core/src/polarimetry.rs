//! Linear-polarization Stokes processing and diffuse/specular separation.
//!
//! The display emits linearly polarized light. Specular reflection keeps
//! that state while diffuse reflection depolarizes, so the polarized part of
//! the signal is the specular image and the remainder is diffuse.

use crate::error::{Error, Result};
use crate::image::Image;

/// Intensities behind linear polarizers at 0, 45, 90 and 135 degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizedCapture {
    pub i0: Image,
    pub i45: Image,
    pub i90: Image,
    pub i135: Image,
}

impl PolarizedCapture {
    pub fn new(i0: Image, i45: Image, i90: Image, i135: Image) -> Result<Self> {
        i0.check_shape(&i45, "polarized capture")?;
        i0.check_shape(&i90, "polarized capture")?;
        i0.check_shape(&i135, "polarized capture")?;
        Ok(Self { i0, i45, i90, i135 })
    }

    pub fn planes(&self) -> [&Image; 4] {
        [&self.i0, &self.i45, &self.i90, &self.i135]
    }

    /// `|(I0 + I90) - (I45 + I135)|` per sample. Zero for ideal captures.
    pub fn consistency_residual(&self) -> Image {
        let data = (0..self.i0.data.len())
            .map(|k| {
                ((self.i0.data[k] + self.i90.data[k]) - (self.i45.data[k] + self.i135.data[k])).abs()
            })
            .collect();
        Image { data, ..self.i0.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StokesImage {
    pub s0: Image,
    pub s1: Image,
    pub s2: Image,
}

pub fn stokes_decompose(cap: &PolarizedCapture) -> Result<StokesImage> {
    let [a, b, c, d] = cap.planes();
    a.check_shape(b, "polarized capture")?;
    a.check_shape(c, "polarized capture")?;
    a.check_shape(d, "polarized capture")?;
    let zip4 = |f: &dyn Fn(f64, f64, f64, f64) -> f64| Image {
        data: (0..a.data.len())
            .map(|k| f(a.data[k], b.data[k], c.data[k], d.data[k]))
            .collect(),
        ..a.clone()
    };
    Ok(StokesImage {
        s0: zip4(&|i0, i45, i90, i135| (i0 + i45 + i90 + i135) / 2.0),
        s1: zip4(&|i0, _, i90, _| i0 - i90),
        s2: zip4(&|_, i45, _, i135| i45 - i135),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub diffuse: Image,
    pub specular: Image,
    /// Samples where `s0 - |(s1, s2)|` went negative and diffuse was clamped.
    pub clamped: Vec<bool>,
}

impl Separation {
    pub fn clamped_count(&self) -> usize {
        self.clamped.iter().filter(|&&c| c).count()
    }
}

pub fn separate(st: &StokesImage) -> Separation {
    let n = st.s0.data.len();
    let mut diffuse = st.s0.clone();
    let mut specular = st.s0.clone();
    let mut clamped = vec![false; n];
    for k in 0..n {
        let spec = st.s1.data[k].hypot(st.s2.data[k]);
        let diff = st.s0.data[k] - spec;
        specular.data[k] = spec;
        diffuse.data[k] = diff.max(0.0);
        clamped[k] = diff < 0.0;
    }
    Separation {
        diffuse,
        specular,
        clamped,
    }
}

/// Degree of linear polarization, `|(s1, s2)| / s0` (0 where `s0 = 0`).
pub fn dolp(st: &StokesImage) -> Image {
    let data = (0..st.s0.data.len())
        .map(|k| {
            let s0 = st.s0.data[k];
            if s0 > 0.0 {
                st.s1.data[k].hypot(st.s2.data[k]) / s0
            } else {
                0.0
            }
        })
        .collect();
    Image { data, ..st.s0.clone() }
}

/// Angle of linear polarization, `atan2(s2, s1) / 2`, radians.
pub fn aolp(st: &StokesImage) -> Image {
    let data = (0..st.s0.data.len())
        .map(|k| 0.5 * st.s2.data[k].atan2(st.s1.data[k]))
        .collect();
    Image { data, ..st.s0.clone() }
}

/// Forward model: unpolarized diffuse plus specular fully polarized at
/// angle `specular_aolp`, observed through the four analyzers (Malus' law).
pub fn simulate_polarized_capture(diffuse: &Image, specular: &Image, specular_aolp: f64) -> Result<PolarizedCapture> {
    diffuse.check_shape(specular, "diffuse/specular")?;
    if diffuse.data.iter().chain(&specular.data).any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidInput("diffuse and specular must be nonnegative".into()));
    }
    let plane = |theta_deg: f64| {
        let c = (theta_deg.to_radians() - specular_aolp).cos();
        let c2 = c * c;
        Image {
            data: diffuse
                .data
                .iter()
                .zip(&specular.data)
                .map(|(d, s)| d / 2.0 + s * c2)
                .collect(),
            ..diffuse.clone()
        }
    };
    PolarizedCapture::new(plane(0.0), plane(45.0), plane(90.0), plane(135.0))
}
