//! Estimate directories: `normal.pfm`, `weights_<j>.pfm`, `bases.json`,
//! `depth.pfm`, `mask.pfm` and `loss_trace.csv`.

use std::path::Path;

use crate::brdf::{BasisBrdfSet, SvBrdf, WeightMaps};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::solver::SceneEstimate;

use super::{create_dir, image_to_normals, normals_to_image, read_json, read_pfm, single_channel, write_json, write_pfm};

pub fn weights_file_name(j: usize) -> String {
    format!("weights_{j}.pfm")
}

/// Write `estimate` and its loss trace into `dir`, creating it if needed.
pub fn save_estimate(dir: &Path, estimate: &SceneEstimate, loss_trace: &[f64]) -> Result<()> {
    create_dir(dir)?;
    let weights = &estimate.brdf.weights;
    let (w, h) = (weights.width, weights.height);
    write_pfm(&dir.join("normal.pfm"), &normals_to_image(&estimate.normal, w, h)?)?;
    for j in 0..weights.count {
        let map = (0..w * h).map(|p| weights.at(p)[j]).collect();
        write_pfm(&dir.join(weights_file_name(j)), &Image::from_vec(w, h, 1, map)?)?;
    }
    write_json(&dir.join("bases.json"), &estimate.brdf.bases)?;
    write_pfm(&dir.join("depth.pfm"), &Image::from_vec(w, h, 1, estimate.depth.clone())?)?;
    write_pfm(&dir.join("mask.pfm"), &estimate.mask.to_image())?;
    write_loss_trace(&dir.join("loss_trace.csv"), loss_trace)
}

/// Read an estimate directory written by [`save_estimate`].
pub fn load_estimate(dir: &Path) -> Result<SceneEstimate> {
    let normal_img = read_pfm(&dir.join("normal.pfm"))?;
    let (w, h) = (normal_img.width, normal_img.height);
    let normal = image_to_normals(&normal_img)?;
    let bases: BasisBrdfSet = read_json(&dir.join("bases.json"))?;
    let count = bases.len();
    let mut data = vec![0.0; w * h * count];
    for j in 0..count {
        let path = dir.join(weights_file_name(j));
        let img = read_pfm(&path)?;
        if img.width != w || img.height != h {
            return Err(Error::Dimension(format!("{}: size differs from normal.pfm", path.display())));
        }
        for (p, v) in single_channel(img, "weight map")?.into_iter().enumerate() {
            data[p * count + j] = v;
        }
    }
    let depth_img = read_pfm(&dir.join("depth.pfm"))?;
    if depth_img.width != w || depth_img.height != h {
        return Err(Error::Dimension("depth.pfm: size differs from normal.pfm".into()));
    }
    let mask = Mask::from_image(&read_pfm(&dir.join("mask.pfm"))?);
    mask.check_dims(w, h, "mask.pfm")?;
    let weights = WeightMaps {
        width: w,
        height: h,
        count,
        data,
    };
    Ok(SceneEstimate {
        normal,
        brdf: SvBrdf::new(bases, weights)?,
        depth: single_channel(depth_img, "depth map")?,
        mask,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// CSV with columns `step,loss`; step 0 is the initial objective.
pub fn write_loss_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["step", "loss"]).map_err(csv_err(path))?;
    for (k, v) in trace.iter().enumerate() {
        w.write_record([k.to_string(), format!("{v:e}")]).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_trace(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let field = rec.get(1).ok_or_else(|| Error::InvalidInput(format!("{}: missing loss column", path.display())))?;
        out.push(
            field
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("{}: bad number {field:?}", path.display())))?,
        );
    }
    Ok(out)
}
