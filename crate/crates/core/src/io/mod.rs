//! On-disk formats: PFM images, JSON metadata, dataset manifests, OLAT
//! directories, named patterns and synthetic scenes.

pub mod estimate;
pub mod pattern;
pub mod pfm;
pub mod synth;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::polarimetry::{stokes_decompose, PolarizedCapture};
use crate::render::{DisplayPattern, OlatStack};
use crate::scene::{CameraModel, DisplayModel, SceneMaps, Vec3};

pub use pattern::{default_split, load_pattern, olat_patterns, parse_pattern, save_pattern};
pub use estimate::{load_estimate, read_loss_trace, save_estimate, write_loss_trace};
pub use pfm::{read_pfm, write_pfm};
pub use synth::{synth_scene, ScenePreset, SynthScene};

pub const MANIFEST_VERSION: &str = "1";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn normals_to_image(normal: &[Vec3], width: usize, height: usize) -> Result<Image> {
    Image::from_vec(width, height, 3, normal.iter().flat_map(|n| [n.x, n.y, n.z]).collect())
}

pub fn image_to_normals(img: &Image) -> Result<Vec<Vec3>> {
    if img.channels != 3 {
        return Err(Error::InvalidInput("normal maps need 3 channels".into()));
    }
    Ok(img.data.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
}

fn single_channel(img: Image, what: &str) -> Result<Vec<f64>> {
    if img.channels != 1 {
        return Err(Error::InvalidInput(format!("{what} must be a 1-channel PFM")));
    }
    Ok(img.data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePaths {
    pub depth: PathBuf,
    /// Ground-truth normals, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<PathBuf>,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureEntry {
    /// One image, or four polarizer angles (0, 45, 90, 135) when polarized.
    pub images: Vec<PathBuf>,
    pub pattern: PathBuf,
    #[serde(default)]
    pub polarized: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Dataset description. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub display: PathBuf,
    pub camera: PathBuf,
    pub scene: ScenePaths,
    pub captures: Vec<CaptureEntry>,
    pub split: Split,
}

impl Manifest {
    /// Check split indices and that every referenced file exists under `root`.
    pub fn validate(&self, root: &Path) -> Result<()> {
        let m = self.captures.len();
        let train: HashSet<_> = self.split.train.iter().collect();
        if self.split.train.iter().chain(&self.split.test).any(|&k| k >= m) {
            return Err(Error::InvalidInput(format!("split index out of range for {m} captures")));
        }
        if self.split.test.iter().any(|k| train.contains(k)) {
            return Err(Error::InvalidInput("train and test splits overlap".into()));
        }
        let mut files = vec![&self.display, &self.camera, &self.scene.depth, &self.scene.mask];
        files.extend(self.scene.normal.as_ref());
        for (k, c) in self.captures.iter().enumerate() {
            let expected = if c.polarized { 4 } else { 1 };
            if c.images.len() != expected {
                return Err(Error::InvalidInput(format!(
                    "capture {k} lists {} images, expected {expected}",
                    c.images.len()
                )));
            }
            files.extend(&c.images);
            files.push(&c.pattern);
        }
        for f in files {
            let full = root.join(f);
            if !full.is_file() {
                return Err(Error::io(
                    full,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file is missing"),
                ));
            }
        }
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let m: Manifest = read_json(path)?;
    m.validate(&manifest_root(path))?;
    Ok(m)
}

pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    write_json(path, manifest)
}

fn manifest_root(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Write depth, mask and normals as PFM files in `dir`.
pub fn save_scene_maps(dir: &Path, scene: &SceneMaps) -> Result<ScenePaths> {
    let (w, h) = (scene.width, scene.height);
    write_pfm(&dir.join("depth.pfm"), &Image::from_vec(w, h, 1, scene.depth.clone())?)?;
    write_pfm(&dir.join("mask.pfm"), &scene.mask.to_image())?;
    write_pfm(&dir.join("normal.pfm"), &normals_to_image(&scene.normal, w, h)?)?;
    Ok(ScenePaths {
        depth: "depth.pfm".into(),
        normal: Some("normal.pfm".into()),
        mask: "mask.pfm".into(),
    })
}

/// Everything a manifest points to, loaded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub root: PathBuf,
    pub camera: CameraModel,
    pub display: DisplayModel,
    pub depth: Vec<f64>,
    pub normal: Option<Vec<Vec3>>,
    pub mask: Mask,
    /// Total intensity per capture (`s0` for polarized captures).
    pub captures: Vec<Image>,
    pub patterns: Vec<DisplayPattern>,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest = load_manifest(path)?;
        let root = manifest_root(path);
        let camera: CameraModel = read_json(&root.join(&manifest.camera))?;
        let display: DisplayModel = read_json(&root.join(&manifest.display))?;
        let depth = single_channel(read_pfm(&root.join(&manifest.scene.depth))?, "depth")?;
        let mask = Mask::from_image(&read_pfm(&root.join(&manifest.scene.mask))?);
        mask.check_dims(camera.width, camera.height, "dataset mask")?;
        let normal = match &manifest.scene.normal {
            Some(p) => Some(image_to_normals(&read_pfm(&root.join(p))?)?),
            None => None,
        };
        let mut captures = Vec::with_capacity(manifest.captures.len());
        let mut patterns = Vec::with_capacity(manifest.captures.len());
        for entry in &manifest.captures {
            let img = if entry.polarized {
                let cap = load_polarized(&root, entry)?;
                stokes_decompose(&cap)?.s0
            } else {
                read_pfm(&root.join(&entry.images[0]))?
            };
            if img.width != camera.width || img.height != camera.height {
                return Err(Error::Dimension(format!(
                    "capture {} is {}x{}, camera is {}x{}",
                    entry.images[0].display(),
                    img.width,
                    img.height,
                    camera.width,
                    camera.height
                )));
            }
            let pattern = load_pattern(&root.join(&entry.pattern))?;
            if pattern.len() != display.len() {
                return Err(Error::Dimension(format!(
                    "pattern {} has {} entries, display has {}",
                    entry.pattern.display(),
                    pattern.len(),
                    display.len()
                )));
            }
            captures.push(img);
            patterns.push(pattern);
        }
        Ok(Self {
            manifest,
            root,
            camera,
            display,
            depth,
            normal,
            mask,
            captures,
            patterns,
        })
    }

    pub fn subset(&self, indices: &[usize]) -> (Vec<Image>, Vec<DisplayPattern>) {
        (
            indices.iter().map(|&k| self.captures[k].clone()).collect(),
            indices.iter().map(|&k| self.patterns[k].clone()).collect(),
        )
    }
}

/// Load the four polarizer-angle images of a polarized capture.
pub fn load_polarized(root: &Path, entry: &CaptureEntry) -> Result<PolarizedCapture> {
    if entry.images.len() != 4 {
        return Err(Error::InvalidInput("polarized captures need four images".into()));
    }
    let mut it = entry.images.iter().map(|p| read_pfm(&root.join(p)));
    let mut next = || it.next().expect("four images");
    PolarizedCapture::new(next()?, next()?, next()?, next()?)
}

pub fn capture_file_name(k: usize) -> String {
    format!("capture_{k:03}.pfm")
}

pub fn pattern_file_name(k: usize) -> String {
    format!("pattern_{k:03}.json")
}

/// Write a complete dataset into `dir`: camera, display, scene maps, one
/// PFM and pattern file per capture, and `manifest.json` with the default
/// 5:1 train/test split.
pub fn write_dataset(
    dir: &Path,
    camera: &CameraModel,
    display: &DisplayModel,
    scene: &SceneMaps,
    captures: &[Image],
    patterns: &[DisplayPattern],
) -> Result<Manifest> {
    if captures.len() != patterns.len() {
        return Err(Error::Dimension(format!(
            "{} captures for {} patterns",
            captures.len(),
            patterns.len()
        )));
    }
    create_dir(dir)?;
    write_json(&dir.join("camera.json"), camera)?;
    write_json(&dir.join("display.json"), display)?;
    let scene_paths = save_scene_maps(dir, scene)?;
    let mut entries = Vec::with_capacity(captures.len());
    for (k, (img, pat)) in captures.iter().zip(patterns).enumerate() {
        write_pfm(&dir.join(capture_file_name(k)), img)?;
        save_pattern(&dir.join(pattern_file_name(k)), pat)?;
        entries.push(CaptureEntry {
            images: vec![capture_file_name(k).into()],
            pattern: pattern_file_name(k).into(),
            polarized: false,
        });
    }
    let (train, test) = default_split(captures.len());
    let manifest = Manifest {
        version: MANIFEST_VERSION.into(),
        display: "display.json".into(),
        camera: "camera.json".into(),
        scene: scene_paths,
        captures: entries,
        split: Split { train, test },
    };
    save_manifest(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OlatIndex {
    n: usize,
    grid: (usize, usize),
    clipped_flags: Vec<bool>,
    display: DisplayModel,
}

pub fn olat_file_name(k: usize) -> String {
    format!("olat_{k:03}.pfm")
}

/// Write `olat_000.pfm`, ... and `olat.json` into `dir`.
pub fn save_olat_stack(dir: &Path, stack: &OlatStack, display: &DisplayModel) -> Result<()> {
    if stack.len() != display.len() {
        return Err(Error::Dimension("OLAT stack and display sizes differ".into()));
    }
    create_dir(dir)?;
    for (k, img) in stack.images.iter().enumerate() {
        write_pfm(&dir.join(olat_file_name(k)), img)?;
    }
    write_json(
        &dir.join("olat.json"),
        &OlatIndex {
            n: stack.len(),
            grid: display.grid,
            clipped_flags: stack.clipped.clone(),
            display: display.clone(),
        },
    )
}

pub fn load_olat_stack(dir: &Path) -> Result<(OlatStack, DisplayModel)> {
    let index: OlatIndex = read_json(&dir.join("olat.json"))?;
    if index.n != index.display.len() || index.clipped_flags.len() != index.n {
        return Err(Error::Dimension("olat.json counts are inconsistent".into()));
    }
    let images = (0..index.n)
        .map(|k| read_pfm(&dir.join(olat_file_name(k))))
        .collect::<Result<Vec<_>>>()?;
    Ok((OlatStack::new(images, index.clipped_flags)?, index.display))
}
