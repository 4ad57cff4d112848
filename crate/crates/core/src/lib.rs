//! Forward and inverse rendering for display-camera imaging systems.
//!
//! A display acts as a grid of programmable near-field point lights and a
//! polarization camera records the scene under display patterns. The crate
//! covers the full loop:
//!
//! * [`scene`]: cameras, display layout and per-pixel geometry,
//! * [`brdf`]: Cook-Torrance bases and their analytic gradients,
//! * [`render`]: pattern rendering, OLAT stacks and relighting,
//! * [`polarimetry`]: Stokes decomposition and diffuse/specular separation,
//! * [`calibration`]: radiometric, falloff and backlight fits,
//! * [`photometric_stereo`]: far- and near-field Lambertian normal estimation,
//! * [`solver`]: basis-BRDF inverse rendering,
//! * [`metrics`]: angular error, PSNR, SSIM and angular coverage,
//! * [`io`]: PFM images, manifests, patterns and synthetic scenes.
//!
//! The `book/` directory next to this crate walks through the concepts;
//! its code listings run as doctests of this crate.

// `!(x > 0.0)` deliberately rejects NaN; per-channel loops index several arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod brdf;
pub mod calibration;
pub mod error;
pub mod image;
pub mod io;
pub(crate) mod lm;
pub mod metrics;
pub mod photometric_stereo;
pub mod polarimetry;
pub mod render;
pub mod scene;
pub mod solver;

pub use error::{Error, Result};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use image::{Image, Mask, Rgb};
pub use scene::Vec3;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scene.md")]
    mod scene {}
    #[doc = include_str!("../../../book/src/brdf.md")]
    mod brdf {}
    #[doc = include_str!("../../../book/src/rendering.md")]
    mod rendering {}
    #[doc = include_str!("../../../book/src/polarimetry.md")]
    mod polarimetry {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/photometric_stereo.md")]
    mod photometric_stereo {}
    #[doc = include_str!("../../../book/src/inverse_rendering.md")]
    mod inverse_rendering {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
