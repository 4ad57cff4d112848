//! Command line arguments.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "display-ir", version, about = "Display-camera inverse rendering toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic scene: camera, display, geometry and ground-truth reflectance.
    Synth(SynthArgs),
    /// Render the OLAT stack of a synthetic scene and a dataset of OLAT captures.
    RenderOlat(RenderOlatArgs),
    /// Relight an OLAT stack with an arbitrary display pattern.
    Relight(RelightArgs),
    /// Split four polarizer-angle images into diffuse and specular parts.
    Separate(SeparateArgs),
    /// Fit display scale and exponent from gray-patch measurements.
    CalibrateRadiometric(CalibrateCsvArgs),
    /// Fit the distance falloff from distance sweep measurements.
    CalibrateFalloff(CalibrateCsvArgs),
    /// Fit display scale, exponent and backlight from OLAT captures of a known object.
    CalibrateBacklight(CalibrateBacklightArgs),
    /// Lambertian photometric stereo on a dataset.
    Ps(PsArgs),
    /// Basis-BRDF inverse rendering on the training split of a dataset.
    Solve(SolveArgs),
    /// Normal error and relighting quality of an estimate, or of image pairs.
    Evaluate(EvaluateArgs),
    /// Histogram of half/difference angles sampled by the display.
    Coverage(CoverageArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::RenderOlat(_) => "render-olat",
            Command::Relight(_) => "relight",
            Command::Separate(_) => "separate",
            Command::CalibrateRadiometric(_) => "calibrate-radiometric",
            Command::CalibrateFalloff(_) => "calibrate-falloff",
            Command::CalibrateBacklight(_) => "calibrate-backlight",
            Command::Ps(_) => "ps",
            Command::Solve(_) => "solve",
            Command::Evaluate(_) => "evaluate",
            Command::Coverage(_) => "coverage",
        }
    }

    pub fn out(&self) -> &PathBuf {
        match self {
            Command::Synth(a) => &a.out,
            Command::RenderOlat(a) => &a.out,
            Command::Relight(a) => &a.out,
            Command::Separate(a) => &a.out,
            Command::CalibrateRadiometric(a) | Command::CalibrateFalloff(a) => &a.out,
            Command::CalibrateBacklight(a) => &a.out,
            Command::Ps(a) => &a.out,
            Command::Solve(a) => &a.out,
            Command::Evaluate(a) => &a.out,
            Command::Coverage(a) => &a.out,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::Synth(a) => Some(a.seed),
            Command::RenderOlat(a) => Some(a.noise.seed),
            Command::Relight(a) => Some(a.noise.seed),
            Command::Solve(a) => Some(a.seed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Plane,
    Sphere,
    TwoMaterialSphere,
    StepNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Panel {
    #[value(name = "55")]
    Inch55,
    #[value(name = "32")]
    Inch32,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "sphere")]
    pub preset: Preset,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image size, `WxH` or a single number for square images.
    #[arg(long, default_value = "64")]
    pub resolution: String,
    #[arg(long, value_enum, default_value = "55")]
    pub panel: Panel,
    /// Superpixel grid `COLSxROWS`.
    #[arg(long, default_value = "16x9")]
    pub grid: String,
    /// Distance of the panel in front of the object plane, meters.
    #[arg(long, default_value_t = 0.5)]
    pub standoff: f64,
    /// Display radiance scale.
    #[arg(long, default_value_t = 1.0)]
    pub s: f64,
    /// Display exponent.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Uniform backlight level of every superpixel.
    #[arg(long, default_value_t = 0.0)]
    pub backlight: f64,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of additive Gaussian camera noise.
    #[arg(long = "noise-sigma", default_value_t = 0.0)]
    pub sigma: f64,
    /// Clip outputs to [0, 1] (default).
    #[arg(long, overrides_with = "no_clip")]
    pub clip: bool,
    /// Keep outputs unclipped.
    #[arg(long = "no-clip")]
    pub no_clip: bool,
}

impl NoiseArgs {
    pub fn clip(&self) -> bool {
        !self.no_clip
    }
}

#[derive(Debug, Args)]
pub struct RenderOlatArgs {
    /// Manifest written by `synth`.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth reflectance directory; defaults to `gt/` next to the manifest.
    #[arg(long)]
    pub brdf: Option<PathBuf>,
    /// Falloff parameters JSON (`{"a":..,"b":..,"c":..}`); inverse square by default.
    #[arg(long)]
    pub falloff: Option<PathBuf>,
    #[command(flatten)]
    pub noise: NoiseArgs,
}

#[derive(Debug, Args)]
pub struct RelightArgs {
    /// OLAT directory holding `olat.json` and `olat_NNN.pfm`.
    #[arg(long)]
    pub olat: PathBuf,
    /// Pattern: onehot:k, uniform:v, random:seed, gradient-x|y|z, complement:<pattern>, or a JSON file.
    #[arg(long)]
    pub pattern: String,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub noise: NoiseArgs,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    /// Images behind polarizers at 0, 45, 90 and 135 degrees.
    #[arg(long, num_args = 4, value_names = ["I0", "I45", "I90", "I135"])]
    pub images: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateCsvArgs {
    /// Measurement CSV with a header row.
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset whose display model is updated with the fit.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateBacklightArgs {
    /// Dataset of OLAT captures of an object with known geometry.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Known reflectance directory; defaults to `gt/` next to the manifest.
    #[arg(long)]
    pub brdf: Option<PathBuf>,
    #[arg(long)]
    pub falloff: Option<PathBuf>,
    /// Keep the exponent fixed at this value instead of fitting it.
    #[arg(long = "fix-gamma")]
    pub fix_gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PsMethod {
    Woodham,
    Nearfield,
}

#[derive(Debug, Args)]
pub struct PsArgs {
    #[arg(value_enum)]
    pub method: PsMethod,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub falloff: Option<PathBuf>,
    /// Use every capture instead of the training split.
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of basis BRDFs.
    #[arg(long = "J", default_value_t = 2)]
    pub bases: usize,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    /// Total-variation weight.
    #[arg(long, default_value_t = 1e-2)]
    pub tv: f64,
    /// Replace the dataset depth by this constant, meters.
    #[arg(long = "uniform-depth")]
    pub uniform_depth: Option<f64>,
    /// Leave saturated capture samples out of the loss.
    #[arg(long = "exclude-saturated")]
    pub exclude_saturated: bool,
    #[arg(long)]
    pub falloff: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset whose test split and normals serve as ground truth.
    #[arg(long, requires = "estimate")]
    pub manifest: Option<PathBuf>,
    /// Estimate directory written by `solve`.
    #[arg(long)]
    pub estimate: Option<PathBuf>,
    /// Compare two images directly: PRED TARGET.
    #[arg(long, num_args = 2, value_names = ["PRED", "TARGET"], conflicts_with = "manifest")]
    pub images: Vec<PathBuf>,
    /// Compare two normal maps directly: PRED TARGET.
    #[arg(long, num_args = 2, value_names = ["PRED", "TARGET"], conflicts_with = "manifest")]
    pub normals: Vec<PathBuf>,
    /// Mask PFM for direct comparisons; all pixels by default.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Leave saturated target samples out of PSNR.
    #[arg(long = "exclude-saturated")]
    pub exclude_saturated: bool,
    #[arg(long)]
    pub falloff: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Use the normals of this estimate instead of the dataset's.
    #[arg(long)]
    pub estimate: Option<PathBuf>,
    #[arg(long, default_value_t = 18)]
    pub bins: usize,
}
