//! Scene construction, endmember resolution and method runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use serde::Serialize;
use twolmm::datagen::{
    dsm_to_geometry, empirical_snr_db, generate_2lmm_scene, generate_grf_abundances, generate_hapke_scene, sun_direction,
    synthetic_endmembers, Dsm, GrfSpec, HapkeGeometry, SceneSpec,
};
use twolmm::endmember::{endmembers_from_pixels, match_endmembers, perspective_project, vca_select, EndmemberMatch, ProjectionSpec};
use twolmm::hsi::io::{load_abundances, load_endmembers, load_image, save_abundances, save_endmembers, save_image, Format};
use twolmm::hsi::{rmse_a, rmse_x, AbundanceMatrix, EndmemberMatrix, HsiImage, ScalingState};
use twolmm::lmm::{unmix_lmm, unmix_slmm};
use twolmm::two_lmm::TwoLmm;
use twolmm::UnmixResult;

use crate::config::{EndmemberSource, ExperimentConfig, Generator, Method};
use crate::error::{BenchError, Result};
use crate::report;

/// An image with whatever ground truth is known about it.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub image: HsiImage,
    /// Noiseless image, for generated scenes.
    pub clean: Option<HsiImage>,
    pub truth_abundances: Option<AbundanceMatrix>,
    /// Reference (unscaled) endmember spectra.
    pub truth_endmembers: Option<EndmemberMatrix>,
    pub scaling: Option<ScalingState>,
    pub geometry: Option<HapkeGeometry>,
    pub snr_db: Option<f64>,
}

pub fn build_scene(cfg: &ExperimentConfig) -> Result<LoadedScene> {
    let s = &cfg.scene;
    let synthetic = || -> Result<(EndmemberMatrix, AbundanceMatrix)> {
        let e0 = synthetic_endmembers(s.bands, s.endmembers, cfg.seed)?;
        let mut grf = GrfSpec::new(s.width, s.height, s.endmembers, cfg.seed);
        grf.correlation_length = s.correlation_length;
        grf.sharpness = s.sharpness;
        Ok((e0, generate_grf_abundances(&grf)?))
    };
    match s.generator {
        Generator::TwoLmm => {
            let (e0, a) = synthetic()?;
            let mut spec = SceneSpec::new(s.width, s.height, cfg.seed);
            spec.s_range = (s.s_min, s.s_max);
            spec.snr_db = s.snr_db;
            let scene = generate_2lmm_scene(&e0, &a, &spec)?;
            Ok(LoadedScene {
                clean: Some(HsiImage::with_shape(scene.clean.clone(), s.width, s.height)?),
                snr_db: Some(empirical_snr_db(&scene.clean, &scene.noise)),
                image: scene.image,
                truth_abundances: Some(a),
                truth_endmembers: Some(e0),
                scaling: Some(scene.scaling),
                geometry: None,
            })
        }
        Generator::Hapke => {
            let (e0, a) = synthetic()?;
            let dsm = Dsm::synthetic(s.width, s.height, s.cell_size, s.relief, s.terrain_correlation, cfg.seed)?;
            let geometry = dsm_to_geometry(&dsm, sun_direction(s.sun_zenith, s.sun_azimuth), Vector3::z())?;
            let scene = generate_hapke_scene(&e0, &a, &geometry, s.snr_db, cfg.seed)?;
            Ok(LoadedScene {
                clean: Some(HsiImage::with_shape(scene.clean.clone(), s.width, s.height)?),
                snr_db: Some(empirical_snr_db(&scene.clean, &scene.noise)),
                image: scene.image,
                truth_abundances: Some(a),
                truth_endmembers: Some(e0),
                scaling: None,
                geometry: Some(scene.geometry),
            })
        }
        Generator::Files => {
            let path = s.image.as_ref().ok_or_else(|| BenchError::Config("scene.image is not set".into()))?;
            let image = load_image(path, Format::from_path(path))?;
            let truth_abundances = s.abundances.as_ref().map(|p| load_abundances(p, Format::from_path(p))).transpose()?;
            let truth_endmembers = s.truth_endmembers.as_ref().map(|p| load_endmembers(p, Format::from_path(p))).transpose()?;
            Ok(LoadedScene { image, clean: None, truth_abundances, truth_endmembers, scaling: None, geometry: None, snr_db: None })
        }
    }
}

/// Endmembers for unmixing, plus their pairing with the reference set
/// when one is known.
#[derive(Debug, Clone)]
pub struct ResolvedEndmembers {
    pub endmembers: EndmemberMatrix,
    pub matching: Option<EndmemberMatch>,
}

/// VCA on the perspective-projected image; the spectra are read from the
/// original image at the selected pixels.
pub fn vca_endmembers(image: &HsiImage, k: usize, seed: u64) -> Result<EndmemberMatrix> {
    let projected = perspective_project(image, &ProjectionSpec::mean_spectrum(image)?)?;
    let picks = vca_select(&projected, k, seed)?;
    Ok(endmembers_from_pixels(image, &picks)?)
}

pub fn resolve_endmembers(cfg: &ExperimentConfig, scene: &LoadedScene) -> Result<ResolvedEndmembers> {
    let endmembers = match cfg.em_source {
        EndmemberSource::File => {
            let p = cfg.em_file.as_ref().ok_or_else(|| BenchError::Config("experiment.em_file is not set".into()))?;
            load_endmembers(p, Format::from_path(p))?
        }
        EndmemberSource::Truth => scene
            .truth_endmembers
            .clone()
            .ok_or_else(|| BenchError::Config("no truth endmembers for this scene".into()))?,
        EndmemberSource::Vca => {
            let k = scene.truth_endmembers.as_ref().map_or(cfg.scene.endmembers, EndmemberMatrix::count);
            let source = match (&scene.clean, cfg.vca_on_clean) {
                (Some(clean), true) => clean,
                (None, true) => return Err(BenchError::Config("no noiseless image for experiment.vca_on_clean".into())),
                (_, false) => &scene.image,
            };
            vca_endmembers(source, k, cfg.seed)?
        }
    };
    let matching = match (&scene.truth_endmembers, cfg.em_source) {
        (Some(truth), EndmemberSource::File | EndmemberSource::Vca) if truth.count() == endmembers.count() => {
            Some(match_endmembers(&endmembers, truth)?)
        }
        _ => None,
    };
    Ok(ResolvedEndmembers { endmembers, matching })
}

/// Ground-truth abundances with rows permuted into the order of the
/// estimated endmembers.
pub fn aligned_truth(scene: &LoadedScene, resolved: &ResolvedEndmembers) -> Result<Option<AbundanceMatrix>> {
    let Some(truth) = &scene.truth_abundances else { return Ok(None) };
    if truth.endmembers() != resolved.endmembers.count() {
        return Ok(None);
    }
    match &resolved.matching {
        None => Ok(Some(truth.clone())),
        Some(m) => {
            let mut order = vec![0; m.permutation.len()];
            for (reference, &estimated) in m.permutation.iter().enumerate() {
                order[estimated] = reference;
            }
            Ok(Some(truth.reordered(&order)?))
        }
    }
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRow {
    pub method: String,
    pub rmse_a: Option<f64>,
    pub rmse_x: Option<f64>,
    pub time_s: Option<f64>,
    pub iters: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub row: MethodRow,
    pub result: Option<UnmixResult>,
}

/// Runs one method; failures end up in the row instead of an `Err`.
pub fn run_method(
    method: Method,
    cfg: &ExperimentConfig,
    image: &HsiImage,
    endmembers: &EndmemberMatrix,
    truth: Option<&AbundanceMatrix>,
) -> MethodRun {
    let start = Instant::now();
    let outcome = match method {
        Method::Lmm => unmix_lmm(image, endmembers),
        Method::Slmm => unmix_slmm(image, endmembers),
        Method::Als2Lmm | Method::Lbfgs2Lmm => TwoLmm::new(image, endmembers, cfg.solver.clone())
            .and_then(|s| match truth {
                Some(t) => s.with_truth(t),
                None => Ok(s),
            })
            .and_then(|s| if method == Method::Als2Lmm { s.solve_als(None) } else { s.solve_lbfgs(None) }),
    };
    let elapsed = start.elapsed().as_secs_f64();
    let mut row = MethodRow { method: method.name().into(), rmse_a: None, rmse_x: None, time_s: None, iters: None, error: None };
    let result = match outcome {
        Ok(r) => r,
        Err(e) => {
            row.error = Some(e.to_string());
            return MethodRun { method, row, result: None };
        }
    };
    row.time_s = Some(elapsed);
    row.iters = Some(result.iterations);
    match rmse_x(image, &result.reconstruction) {
        Ok(v) => row.rmse_x = Some(v),
        Err(e) => row.error = Some(e.to_string()),
    }
    if let Some(t) = truth {
        match rmse_a(t, &result.abundances) {
            Ok(v) => row.rmse_a = Some(v),
            Err(e) => row.error = Some(e.to_string()),
        }
    }
    MethodRun { method, row, result: Some(result) }
}

/// Everything produced by one unmixing experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub scene: LoadedScene,
    pub endmembers: ResolvedEndmembers,
    pub runs: Vec<MethodRun>,
}

impl Experiment {
    pub fn rows(&self) -> Vec<MethodRow> {
        self.runs.iter().map(|r| r.row.clone()).collect()
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.row.error.is_some()).count()
    }

    pub fn run(&self, method: Method) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.method == method)
    }
}

/// Runs every configured method, one after the other, on a prepared scene.
pub fn run_on_scene(cfg: &ExperimentConfig, scene: LoadedScene, endmembers: ResolvedEndmembers) -> Result<Experiment> {
    let truth = aligned_truth(&scene, &endmembers)?;
    let runs = cfg
        .methods
        .iter()
        .map(|&m| run_method(m, cfg, &scene.image, &endmembers.endmembers, truth.as_ref()))
        .collect();
    Ok(Experiment { scene, endmembers, runs })
}

/// Builds the scene, resolves endmembers and runs every method in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let scene = build_scene(cfg)?;
    let endmembers = resolve_endmembers(cfg, &scene)?;
    run_on_scene(cfg, scene, endmembers)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|e| BenchError::io(&path, e))?;
    Ok(path)
}

fn core_io<T>(path: &Path, r: twolmm::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        twolmm::Error::Io(source) => BenchError::io(path, source),
        other => other.into(),
    })
}

/// Writes a synthetic scene and its ground truth; returns the written paths.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if cfg.scene.generator == Generator::Files {
        return Err(BenchError::Config("scene.generator = files has nothing to generate".into()));
    }
    let scene = build_scene(cfg)?;
    create_dir(&cfg.out)?;
    let mut written = Vec::new();

    let image_path = cfg.out.join("image.bin");
    core_io(&image_path, save_image(&image_path, &scene.image, Format::RawF64))?;
    written.push(image_path);

    let abundance_path = cfg.out.join("abundances.bin");
    if let Some(a) = &scene.truth_abundances {
        core_io(&abundance_path, save_abundances(&abundance_path, a, Format::RawF64))?;
        written.push(abundance_path);
    }

    let endmember_path = cfg.out.join("endmembers.bin");
    if let Some(e) = &scene.truth_endmembers {
        core_io(&endmember_path, save_endmembers(&endmember_path, e, Format::RawF64))?;
        written.push(endmember_path);
    }

    let scaling_name = match (&scene.scaling, &scene.geometry) {
        (Some(s), _) => Some(("scalings.csv", report::scalings_csv(s))),
        (None, Some(g)) => Some(("geometry.csv", report::geometry_csv(g))),
        _ => None,
    };
    if let Some((name, text)) = scaling_name {
        written.push(write(cfg.out.join(name), text)?);
    }

    let files: Vec<String> = written.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect();
    let manifest = report::manifest_json(cfg, &scene, &files);
    written.push(write(cfg.out.join("manifest.json"), manifest)?);
    Ok(written)
}

/// Runs the configured methods and writes `results.csv`, `results.json`
/// and one `trace_<method>.csv` per iterative method.
pub fn cmd_unmix(cfg: &ExperimentConfig) -> Result<Experiment> {
    let exp = run_experiment(cfg)?;
    create_dir(&cfg.out)?;
    let rows = exp.rows();
    write(cfg.out.join("results.csv"), report::results_csv(&rows))?;
    write(cfg.out.join("results.json"), report::results_json(cfg, &rows, exp.endmembers.matching.as_ref()))?;
    for run in &exp.runs {
        if let (true, Some(r)) = (run.method.has_trace(), &run.result) {
            write(cfg.out.join(format!("trace_{}.csv", run.method)), report::trace_csv(&r.trace))?;
        }
    }
    Ok(exp)
}

/// One line of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub sweep: String,
    pub value: f64,
    #[serde(flatten)]
    pub row: MethodRow,
}

/// Runs the experiment at every sweep value on the scene fixed by the seed.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut fixed: Option<(LoadedScene, ResolvedEndmembers)> = None;
    for &value in &cfg.sweep.values {
        let point = cfg.at_sweep_point(value)?;
        let (scene, endmembers) = match (&fixed, cfg.sweep.kind) {
            (Some((s, e)), crate::config::SweepKind::BoundsAlpha) => (s.clone(), e.clone()),
            _ => {
                let scene = build_scene(&point)?;
                let endmembers = resolve_endmembers(&point, &scene)?;
                fixed = Some((scene.clone(), endmembers.clone()));
                (scene, endmembers)
            }
        };
        let exp = run_on_scene(&point, scene, endmembers)?;
        rows.extend(exp.rows().into_iter().map(|row| SweepRow { sweep: cfg.sweep.kind.to_string(), value, row }));
    }
    Ok(rows)
}

/// Runs a sweep and writes `sweep.csv` in long format.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let rows = run_sweep(cfg)?;
    create_dir(&cfg.out)?;
    write(cfg.out.join("sweep.csv"), report::sweep_csv(&rows))?;
    Ok(rows)
}
