//! Subcommand implementations. Every command writes into its `--out`
//! directory and reports the files it read.

use std::path::{Path, PathBuf};

use display_ir::calibration::{
    fit_backlight, fit_falloff, fit_radiometric, load_falloff_csv, load_radiometric_csv, BacklightOptions,
};
use display_ir::image::luminance;
use display_ir::io::{
    create_dir, load_estimate, load_olat_stack, olat_patterns, parse_pattern, read_json, read_pfm,
    save_estimate, save_olat_stack, synth_scene, write_dataset, write_json, write_pfm, Dataset, Manifest,
    ScenePreset, Split, MANIFEST_VERSION,
};
use display_ir::io::{image_to_normals, normals_to_image, save_scene_maps};
use display_ir::metrics::{angular_coverage, normal_mae, psnr_stack, ssim, write_coverage_csv, EvaluationReport};
use display_ir::photometric_stereo::{nearfield_ps, woodham_ps, NearfieldOptions, PsResult, Thresholds};
use display_ir::polarimetry::{aolp, dolp, separate, stokes_decompose, PolarizedCapture};
use display_ir::render::{
    add_noise, clip, combine, display_intensity, pattern_radiance, relight, render_olat_stack, render_pattern, DisplayPattern,
    FalloffParams, NoiseModel, OlatStack,
};
use display_ir::scene::{synth_display, PanelPreset, SceneMaps, Vec3, OBJECT_DISTANCE};
use display_ir::solver::{solve, SceneEstimate, SolveConfig};
use display_ir::{Error, Image, Mask};
use serde::Serialize;

use crate::args::*;
use crate::error::{CliError, CliResult};

/// Files read by a command, recorded in `run.json`.
#[derive(Debug, Default)]
pub struct Inputs(pub Vec<PathBuf>);

impl Inputs {
    fn add(&mut self, p: &Path) {
        self.0.push(p.to_path_buf());
    }

    fn dataset(&mut self, manifest: &Path) -> CliResult<Dataset> {
        self.add(manifest);
        Ok(Dataset::load(manifest)?)
    }

    fn falloff(&mut self, path: Option<&PathBuf>) -> CliResult<FalloffParams> {
        match path {
            Some(p) => {
                self.add(p);
                let f: FalloffParams = read_json(p)?;
                Ok(FalloffParams::new(f.a, f.b, f.c)?)
            }
            None => Ok(FalloffParams::default()),
        }
    }

    fn estimate(&mut self, dir: &Path) -> CliResult<SceneEstimate> {
        self.add(dir);
        Ok(load_estimate(dir)?)
    }

    fn pfm(&mut self, p: &Path) -> CliResult<Image> {
        self.add(p);
        Ok(read_pfm(p)?)
    }
}

pub fn run(cmd: &Command, inputs: &mut Inputs) -> CliResult<()> {
    create_dir(cmd.out())?;
    match cmd {
        Command::Synth(a) => synth(a),
        Command::RenderOlat(a) => render_olat(a, inputs),
        Command::Relight(a) => relight_cmd(a, inputs),
        Command::Separate(a) => separate_cmd(a, inputs),
        Command::CalibrateRadiometric(a) => calibrate_radiometric(a, inputs),
        Command::CalibrateFalloff(a) => calibrate_falloff(a, inputs),
        Command::CalibrateBacklight(a) => calibrate_backlight(a, inputs),
        Command::Ps(a) => ps(a, inputs),
        Command::Solve(a) => solve_cmd(a, inputs),
        Command::Evaluate(a) => evaluate(a, inputs),
        Command::Coverage(a) => coverage(a, inputs),
    }
}

fn parse_pair(s: &str, what: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("{what} {s:?} must be N or WxH"));
    let mut it = s.split('x');
    let w: usize = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    let h: usize = match it.next() {
        Some(v) => v.parse().map_err(|_| bad())?,
        None => w,
    };
    if it.next().is_some() {
        return Err(bad());
    }
    Ok((w, h))
}

/// Ground truth written by `synth` next to the manifest.
fn gt_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default().join("gt")
}

fn gt_scene(ds: &Dataset) -> CliResult<SceneMaps> {
    let normal = ds
        .normal
        .clone()
        .ok_or_else(|| Error::InvalidInput("dataset has no ground-truth normals".into()))?;
    Ok(SceneMaps::new(&ds.camera, ds.depth.clone(), normal, ds.mask.clone())?)
}

fn synth(a: &SynthArgs) -> CliResult<()> {
    let preset = match a.preset {
        Preset::Plane => ScenePreset::Plane,
        Preset::Sphere => ScenePreset::Sphere,
        Preset::TwoMaterialSphere => ScenePreset::TwoMaterialSphere,
        Preset::StepNormal => ScenePreset::StepNormal,
    };
    let panel = match a.panel {
        Panel::Inch55 => PanelPreset::Inch55,
        Panel::Inch32 => PanelPreset::Inch32,
    };
    let s = synth_scene(preset, parse_pair(&a.resolution, "resolution")?, a.seed)?;
    let display = synth_display(panel, parse_pair(&a.grid, "grid")?, a.standoff)?;
    let n = display.len();
    let display = display.with_radiometry(a.s, a.gamma, vec![[a.backlight; 3]; n])?;
    let manifest = Manifest {
        version: MANIFEST_VERSION.into(),
        display: "display.json".into(),
        camera: "camera.json".into(),
        scene: save_scene_maps(&a.out, &s.scene)?,
        captures: Vec::new(),
        split: Split::default(),
    };
    write_json(&a.out.join("camera.json"), &s.camera)?;
    write_json(&a.out.join("display.json"), &display)?;
    write_json(&a.out.join("manifest.json"), &manifest)?;
    let gt = SceneEstimate {
        normal: s.scene.normal.clone(),
        brdf: s.brdf,
        depth: s.scene.depth.clone(),
        mask: s.scene.mask.clone(),
    };
    save_estimate(&a.out.join("gt"), &gt, &[])?;
    Ok(())
}

fn noise_model(n: &NoiseArgs) -> CliResult<NoiseModel> {
    Ok(NoiseModel::new(n.sigma, n.seed)?)
}

fn render_olat(a: &RenderOlatArgs, inputs: &mut Inputs) -> CliResult<()> {
    let ds = inputs.dataset(&a.manifest)?;
    let gt = inputs.estimate(&a.brdf.clone().unwrap_or_else(|| gt_dir(&a.manifest)))?;
    let falloff = inputs.falloff(a.falloff.as_ref())?;
    let noise = noise_model(&a.noise)?;
    let scene = gt_scene(&ds)?;
    let stack = render_olat_stack(&scene, &ds.display, &gt.brdf, &falloff, false)?;
    save_olat_stack(&a.out.join("olat"), &stack, &ds.display)?;
    let patterns = olat_patterns(ds.display.len());
    let mut captures = Vec::with_capacity(patterns.len());
    for (k, pattern) in patterns.iter().enumerate() {
        let mut img = combine(&stack, &pattern_radiance(pattern, &ds.display)?)?;
        add_noise(&mut img, &noise, k as u64);
        if a.noise.clip() {
            clip(&mut img);
        }
        captures.push(img);
    }
    write_dataset(&a.out, &ds.camera, &ds.display, &scene, &captures, &patterns)?;
    save_estimate(&a.out.join("gt"), &gt, &[])?;
    Ok(())
}

fn relight_cmd(a: &RelightArgs, inputs: &mut Inputs) -> CliResult<()> {
    inputs.add(&a.olat);
    let (stack, display) = load_olat_stack(&a.olat)?;
    let pattern = parse_pattern(&a.pattern, &display)?;
    let img = relight(&stack, &pattern, &display, &noise_model(&a.noise)?, a.noise.clip())?;
    write_pfm(&a.out.join("relit.pfm"), &img)?;
    write_json(&a.out.join("pattern.json"), &pattern)?;
    Ok(())
}

fn separate_cmd(a: &SeparateArgs, inputs: &mut Inputs) -> CliResult<()> {
    let planes = a.images.iter().map(|p| inputs.pfm(p)).collect::<CliResult<Vec<_>>>()?;
    let [i0, i45, i90, i135]: [Image; 4] = planes
        .try_into()
        .map_err(|_| CliError::Usage("--images needs four files".into()))?;
    let st = stokes_decompose(&PolarizedCapture::new(i0, i45, i90, i135)?)?;
    let sep = separate(&st);
    if sep.clamped_count() > 0 {
        log::warn!("{} samples had negative diffuse and were clamped", sep.clamped_count());
    }
    let out = &a.out;
    write_pfm(&out.join("s0.pfm"), &st.s0)?;
    write_pfm(&out.join("s1.pfm"), &st.s1)?;
    write_pfm(&out.join("s2.pfm"), &st.s2)?;
    write_pfm(&out.join("diffuse.pfm"), &sep.diffuse)?;
    write_pfm(&out.join("specular.pfm"), &sep.specular)?;
    write_pfm(&out.join("dolp.pfm"), &dolp(&st))?;
    write_pfm(&out.join("aolp.pfm"), &aolp(&st))?;
    Ok(())
}

/// Copy the dataset's manifest and display into `out` with an updated display.
fn update_display(
    manifest: &Path,
    out: &Path,
    inputs: &mut Inputs,
    update: impl FnOnce(&Dataset) -> CliResult<display_ir::scene::DisplayModel>,
) -> CliResult<()> {
    let ds = inputs.dataset(manifest)?;
    write_json(&out.join("display.json"), &update(&ds)?)?;
    Ok(())
}

fn calibrate_radiometric(a: &CalibrateCsvArgs, inputs: &mut Inputs) -> CliResult<()> {
    inputs.add(&a.csv);
    let fit = fit_radiometric(&load_radiometric_csv(&a.csv)?)?;
    write_json(&a.out.join("radiometric.json"), &fit)?;
    if let Some(m) = &a.manifest {
        let (s, gamma) = fit.mean();
        update_display(m, &a.out, inputs, |ds| {
            Ok(ds.display.clone().with_radiometry(s, gamma, ds.display.backlight.clone())?)
        })?;
    }
    Ok(())
}

fn calibrate_falloff(a: &CalibrateCsvArgs, inputs: &mut Inputs) -> CliResult<()> {
    inputs.add(&a.csv);
    let fit = fit_falloff(&load_falloff_csv(&a.csv)?)?;
    if fit.ill_conditioned {
        log::warn!("falloff samples do not determine all three parameters");
    }
    write_json(&a.out.join("falloff_fit.json"), &fit)?;
    write_json(&a.out.join("falloff.json"), &fit.params)?;
    Ok(())
}

fn calibrate_backlight(a: &CalibrateBacklightArgs, inputs: &mut Inputs) -> CliResult<()> {
    let ds = inputs.dataset(&a.manifest)?;
    let gt = inputs.estimate(&a.brdf.clone().unwrap_or_else(|| gt_dir(&a.manifest)))?;
    let falloff = inputs.falloff(a.falloff.as_ref())?;
    let scene = gt_scene(&ds)?;
    let n = ds.display.len();
    if ds.patterns.len() != n || ds.patterns.iter().enumerate().any(|(k, p)| *p != DisplayPattern::one_hot(n, k)) {
        return Err(Error::InvalidInput(format!("backlight calibration needs the {n} OLAT captures in order")).into());
    }
    let captures = OlatStack::new(ds.captures.clone(), vec![true; n])?;
    let mut options = BacklightOptions::default();
    if let Some(g) = a.fix_gamma {
        options.fit_gamma = false;
        options.gamma = g;
    }
    let fit = fit_backlight(&captures, &scene, &gt.brdf, &ds.display, &falloff, &options)?;
    write_json(&a.out.join("backlight.json"), &fit)?;
    let display = ds.display.clone().with_radiometry(fit.s, fit.gamma, fit.backlight.clone())?;
    write_json(&a.out.join("display.json"), &display)?;
    Ok(())
}

fn split_indices(ds: &Dataset, all: bool) -> Vec<usize> {
    if all || ds.manifest.split.train.is_empty() {
        (0..ds.captures.len()).collect()
    } else {
        ds.manifest.split.train.clone()
    }
}

fn ps(a: &PsArgs, inputs: &mut Inputs) -> CliResult<()> {
    let ds = inputs.dataset(&a.manifest)?;
    let falloff = inputs.falloff(a.falloff.as_ref())?;
    let (captures, patterns) = ds.subset(&split_indices(&ds, a.all));
    let result: PsResult = match a.method {
        PsMethod::Woodham => {
            let n = ds.display.len();
            let center = Vec3::new(0.0, 0.0, OBJECT_DISTANCE);
            let mut dirs = Vec::with_capacity(patterns.len());
            let mut intensities = Vec::with_capacity(patterns.len());
            for p in &patterns {
                let k = (0..n)
                    .find(|&k| *p == DisplayPattern::one_hot(n, k))
                    .ok_or_else(|| Error::InvalidInput("Woodham photometric stereo needs one-hot patterns".into()))?;
                dirs.push((ds.display.positions[k] - center).normalize());
                intensities.push(luminance(&display_intensity(&[1.0; 3], &ds.display, k)));
            }
            woodham_ps(&captures, &dirs, &intensities, &ds.mask)?
        }
        PsMethod::Nearfield => nearfield_ps(
            &captures,
            &patterns,
            &ds.display,
            &ds.camera,
            &ds.depth,
            &falloff,
            &ds.mask,
            &NearfieldOptions {
                thresholds: Some(Thresholds::default()),
            },
        )?,
    };
    if result.dropped > 0 {
        log::warn!("{} pixels could not be solved", result.dropped);
    }
    let (w, h) = (ds.camera.width, ds.camera.height);
    write_pfm(&a.out.join("normal.pfm"), &normals_to_image(&result.normal, w, h)?)?;
    write_pfm(&a.out.join("albedo.pfm"), &result.pseudo_diffuse)?;
    write_pfm(&a.out.join("residual.pfm"), &result.residual)?;
    write_pfm(&a.out.join("mask.pfm"), &result.mask.to_image())?;
    Ok(())
}

#[derive(Serialize)]
struct SolveSummary {
    iterations: usize,
    accepted_steps: usize,
    initial_loss: Option<f64>,
    final_loss: Option<f64>,
    ps_dropped: usize,
    train_captures: usize,
}

fn solve_cmd(a: &SolveArgs, inputs: &mut Inputs) -> CliResult<()> {
    let ds = inputs.dataset(&a.manifest)?;
    let falloff = inputs.falloff(a.falloff.as_ref())?;
    let train = split_indices(&ds, false);
    let (captures, patterns) = ds.subset(&train);
    let depth = match a.uniform_depth {
        Some(d) if d > 0.0 => vec![d; ds.depth.len()],
        Some(d) => return Err(CliError::Usage(format!("--uniform-depth {d} must be positive"))),
        None => ds.depth.clone(),
    };
    let config = SolveConfig {
        bases: a.bases,
        iterations: a.iters,
        tv_lambda: a.tv,
        seed: a.seed,
        saturation_exclude: a.exclude_saturated,
        ..SolveConfig::default()
    };
    let out = solve(&captures, &patterns, &ds.display, &ds.camera, &depth, &ds.mask, &falloff, &config)?;
    save_estimate(&a.out, &out.estimate, &out.loss_trace)?;
    save_estimate(&a.out.join("initial"), &out.initial, &[])?;
    write_json(
        &a.out.join("solve.json"),
        &SolveSummary {
            iterations: out.iterations,
            accepted_steps: out.loss_trace.len().saturating_sub(1),
            initial_loss: out.loss_trace.first().copied(),
            final_loss: out.loss_trace.last().copied(),
            ps_dropped: out.ps_dropped,
            train_captures: train.len(),
        },
    )?;
    Ok(())
}

fn direct_mask(a: &EvaluateArgs, w: usize, h: usize, inputs: &mut Inputs) -> CliResult<Mask> {
    match &a.mask {
        Some(p) => {
            let m = Mask::from_image(&inputs.pfm(p)?);
            m.check_dims(w, h, "--mask")?;
            Ok(m)
        }
        None => Ok(Mask::full(w, h)),
    }
}

fn evaluate(a: &EvaluateArgs, inputs: &mut Inputs) -> CliResult<()> {
    let report = match (&a.manifest, &a.estimate) {
        (Some(m), Some(e)) => evaluate_dataset(a, m, e, inputs)?,
        (None, None) if !a.images.is_empty() || !a.normals.is_empty() => evaluate_direct(a, inputs)?,
        _ => {
            return Err(CliError::Usage(
                "evaluate needs --manifest with --estimate, or --images / --normals pairs".into(),
            ))
        }
    };
    write_json(&a.out.join("report.json"), &report)?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(())
}

fn evaluate_direct(a: &EvaluateArgs, inputs: &mut Inputs) -> CliResult<EvaluationReport> {
    let mut report = EvaluationReport {
        mae_deg: None,
        psnr_db: None,
        ssim: None,
        n_pixels: 0,
        saturation_excluded: a.exclude_saturated,
    };
    if let [pred, target] = &a.normals[..] {
        let pred = inputs.pfm(pred)?;
        let target = inputs.pfm(target)?;
        pred.check_shape(&target, "normal maps")?;
        let mask = direct_mask(a, pred.width, pred.height, inputs)?;
        report.mae_deg = Some(normal_mae(&image_to_normals(&pred)?, &image_to_normals(&target)?, &mask)?);
        report.n_pixels = mask.count();
    }
    if let [pred, target] = &a.images[..] {
        let pred = inputs.pfm(pred)?;
        let target = inputs.pfm(target)?;
        pred.check_shape(&target, "images")?;
        let mask = direct_mask(a, pred.width, pred.height, inputs)?;
        report.psnr_db = Some(psnr_stack(
            std::slice::from_ref(&pred),
            std::slice::from_ref(&target),
            Some(&mask),
            a.exclude_saturated,
        )?);
        report.ssim = Some(ssim(&pred, &target)?);
        report.n_pixels = mask.count();
    }
    Ok(report)
}

fn evaluate_dataset(a: &EvaluateArgs, manifest: &Path, est: &Path, inputs: &mut Inputs) -> CliResult<EvaluationReport> {
    let ds = inputs.dataset(manifest)?;
    let est = inputs.estimate(est)?;
    let falloff = inputs.falloff(a.falloff.as_ref())?;
    let mae_deg = match &ds.normal {
        Some(gt) => Some(normal_mae(&est.normal, gt, &ds.mask)?),
        None => None,
    };
    let test = &ds.manifest.split.test;
    let (psnr_db, ssim_mean) = if test.is_empty() {
        (None, None)
    } else {
        let scene = SceneMaps::new(&ds.camera, est.depth.clone(), est.normal.clone(), est.mask.clone())?;
        let (captured, patterns) = ds.subset(test);
        let silent = NoiseModel::new(0.0, 0)?;
        let rendered = patterns
            .iter()
            .map(|p| render_pattern(&scene, &ds.display, &est.brdf, p, &falloff, &silent, true))
            .collect::<display_ir::Result<Vec<_>>>()?;
        let psnr = psnr_stack(&rendered, &captured, Some(&ds.mask), a.exclude_saturated)?;
        let mut total = 0.0;
        for (r, c) in rendered.iter().zip(&captured) {
            total += ssim(r, c)?;
        }
        (Some(psnr), Some(total / rendered.len() as f64))
    };
    Ok(EvaluationReport {
        mae_deg,
        psnr_db,
        ssim: ssim_mean,
        n_pixels: ds.mask.count(),
        saturation_excluded: a.exclude_saturated,
    })
}

fn coverage(a: &CoverageArgs, inputs: &mut Inputs) -> CliResult<()> {
    if a.bins == 0 {
        return Err(CliError::Usage("--bins must be positive".into()));
    }
    let ds = inputs.dataset(&a.manifest)?;
    let scene = match &a.estimate {
        Some(e) => {
            let est = inputs.estimate(e)?;
            SceneMaps::new(&ds.camera, ds.depth.clone(), est.normal, ds.mask.clone())?
        }
        None => gt_scene(&ds)?,
    };
    let samples = angular_coverage(&scene, &ds.display)?;
    write_coverage_csv(&a.out.join("coverage.csv"), &samples, a.bins)?;
    Ok(())
}
