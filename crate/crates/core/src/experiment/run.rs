//! Executes an experiment: one cell per (seed, method), written to disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::degrade::measure;
use crate::error::{Error, Result};
use crate::image::{ImageTensor, Shape};
use crate::metrics::{psnr, ssim};
use crate::posterior::sub;
use crate::prior::GaussianMixturePrior;
use crate::sampler::{config_hash, run, RunRecord};
use crate::spectral::SpectralOperator;

/// Environment variable that caps the worker-thread count.
pub const THREADS_ENV: &str = "MAS_THREADS";

const STREAM_GROUND_TRUTH: u64 = 0;
const STREAM_MEASUREMENT: u64 = 1;
const STREAM_SAMPLER: u64 = 2;

/// Independent generator per (seed, purpose).
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedMetrics {
    pub seed: u64,
    /// `None` when the restoration equals the ground truth exactly.
    pub psnr_db: Option<f64>,
    /// `None` when the image is smaller than the SSIM window.
    pub ssim: Option<f64>,
    /// `‖y − H x̂‖`.
    pub consistency_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    /// Population mean and standard deviation; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodMetrics {
    pub label: String,
    pub config_hash: String,
    pub runs: Vec<SeedMetrics>,
    pub psnr_db: Option<Summary>,
    pub ssim: Option<Summary>,
    pub consistency_residual: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsTable {
    pub experiment: String,
    pub methods: Vec<MethodMetrics>,
}

impl MetricsTable {
    pub fn method(&self, label: &str) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.label == label)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub metrics: MetricsTable,
    /// Written files relative to the output directory, sorted.
    pub files: Vec<PathBuf>,
}

/// Shared, seed-independent pieces of an experiment.
pub struct Setup {
    pub op: SpectralOperator,
    pub prior: GaussianMixturePrior,
    pub ground_truth_file: Option<ImageTensor>,
}

impl Setup {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            op: cfg.build_operator()?,
            prior: cfg.build_prior()?,
            ground_truth_file: cfg.load_ground_truth_file()?,
        })
    }

    pub fn ground_truth(&self, shape: Shape, seed: u64) -> Result<ImageTensor> {
        match &self.ground_truth_file {
            Some(img) => Ok(img.clone()),
            None => ImageTensor::new(shape, self.prior.sample(&mut stream_rng(seed, STREAM_GROUND_TRUTH))),
        }
    }

    pub fn measurement(&self, cfg: &ExperimentConfig, x0: &ImageTensor, seed: u64) -> Result<Vec<f64>> {
        measure(
            &self.op,
            x0.data(),
            &cfg.task.corruption,
            &mut stream_rng(seed, STREAM_MEASUREMENT),
        )
    }
}

/// Result of one (seed, method) cell.
pub struct Cell {
    pub seed: u64,
    pub method_index: usize,
    pub record: RunRecord,
    pub metrics: SeedMetrics,
}

/// Runs a single cell without touching the filesystem.
pub fn run_cell(cfg: &ExperimentConfig, setup: &Setup, seed: u64, method_index: usize) -> Result<Cell> {
    let entry = &cfg.methods[method_index];
    let schedule = entry.schedule.unwrap_or(cfg.schedule).build()?;
    let x0 = setup.ground_truth(cfg.shape, seed)?;
    let y = setup.measurement(cfg, &x0, seed)?;
    let mut rng = stream_rng(seed, STREAM_SAMPLER);
    let mut record = run(&setup.op, &y, &setup.prior, &schedule, &entry.method, &cfg.options, &mut rng)?;
    record.seed = Some(seed);
    record.config_hash = Some(config_hash(&entry.method, &schedule, &cfg.options)?);
    let residual = sub(&y, &setup.op.apply(&record.final_x0)?)
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    let estimate = ImageTensor::new(cfg.shape, record.final_x0.clone())?.clipped();
    let p = psnr(&x0, &estimate, 1.0)?;
    let metrics = SeedMetrics {
        seed,
        psnr_db: p.is_finite().then_some(p),
        ssim: ssim(&x0, &estimate).ok(),
        consistency_residual: residual,
    };
    Ok(Cell {
        seed,
        method_index,
        record,
        metrics,
    })
}

/// Runs `f` on a pool sized by [`THREADS_ENV`] (all cores when unset).
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs every cell, in parallel, keeping the (method, seed) order.
pub fn run_cells(cfg: &ExperimentConfig, setup: &Setup) -> Result<Vec<Cell>> {
    let jobs: Vec<(usize, u64)> = (0..cfg.methods.len())
        .flat_map(|m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    with_pool(|| {
        jobs.par_iter()
            .map(|&(m, s)| {
                log::debug!("cell method={} seed={s}", cfg.methods[m].label());
                run_cell(cfg, setup, s, m)
            })
            .collect::<Result<Vec<_>>>()
    })?
}

pub fn summarize(cfg: &ExperimentConfig, cells: &[Cell]) -> Result<MetricsTable> {
    let mut methods = Vec::with_capacity(cfg.methods.len());
    for (i, entry) in cfg.methods.iter().enumerate() {
        let runs: Vec<SeedMetrics> = cells
            .iter()
            .filter(|c| c.method_index == i)
            .map(|c| c.metrics.clone())
            .collect();
        let schedule = entry.schedule.unwrap_or(cfg.schedule).build()?;
        let psnrs: Vec<f64> = runs.iter().filter_map(|r| r.psnr_db).collect();
        let ssims: Vec<f64> = runs.iter().filter_map(|r| r.ssim).collect();
        let res: Vec<f64> = runs.iter().map(|r| r.consistency_residual).collect();
        methods.push(MethodMetrics {
            label: entry.label(),
            config_hash: config_hash(&entry.method, &schedule, &cfg.options)?,
            psnr_db: Summary::of(&psnrs),
            ssim: Summary::of(&ssims),
            consistency_residual: Summary::of(&res),
            runs,
        });
    }
    Ok(MetricsTable {
        experiment: cfg.name.clone(),
        methods,
    })
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Image view of a measurement: the operator's own output grid when it has
/// one, otherwise the zero-filled adjoint.
fn measurement_image(op: &SpectralOperator, y: &[f64], shape: Shape) -> Result<ImageTensor> {
    match op.out_shape() {
        Some(s) => ImageTensor::new(s, y.to_vec()),
        None => ImageTensor::new(shape, op.adjoint(y)?),
    }
}

/// Runs the whole experiment and writes images, metrics, trajectories and a
/// manifest of SHA-256 hashes under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let setup = Setup::build(cfg)?;
    let cells = run_cells(cfg, &setup)?;
    let metrics = summarize(cfg, &cells)?;

    let mut outputs: BTreeMap<PathBuf, Vec<u8>> = BTreeMap::new();
    outputs.insert("config.toml".into(), cfg.to_toml()?.into_bytes());
    for &seed in &cfg.seeds {
        let dir = PathBuf::from(format!("seed_{seed}"));
        let x0 = setup.ground_truth(cfg.shape, seed)?;
        let y = setup.measurement(cfg, &x0, seed)?;
        outputs.insert(dir.join(image_name("ground_truth", cfg.shape)), x0.to_pnm()?);
        let meas = measurement_image(&setup.op, &y, cfg.shape)?;
        outputs.insert(dir.join(image_name("measurement", meas.shape())), meas.to_pnm()?);
    }
    for cell in &cells {
        let label = cfg.methods[cell.method_index].label();
        let dir = PathBuf::from(format!("seed_{}", cell.seed));
        let img = ImageTensor::new(cfg.shape, cell.record.final_x0.clone())?;
        outputs.insert(dir.join(image_name(&label, cfg.shape)), img.to_pnm()?);
        outputs.insert(
            PathBuf::from("trajectories").join(format!("{label}_seed_{}.json", cell.seed)),
            json_bytes(&cell.record)?,
        );
    }
    outputs.insert("metrics.json".into(), json_bytes(&metrics)?);

    let manifest: BTreeMap<String, String> = outputs
        .iter()
        .map(|(p, b)| (p.to_string_lossy().replace('\\', "/"), hex::encode(Sha256::digest(b))))
        .collect();
    outputs.insert("manifest.json".into(), json_bytes(&manifest)?);

    for (rel, bytes) in &outputs {
        write_atomic(&out_dir.join(rel), bytes)?;
    }
    Ok(ExperimentOutcome {
        metrics,
        files: outputs.into_keys().collect(),
    })
}

fn image_name(stem: &str, shape: Shape) -> String {
    let ext = if shape.channels == 3 { "ppm" } else { "pgm" };
    format!("{stem}.{ext}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_is_population_statistics() {
        let s = Summary::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std, s.count), (2.0, 1.0, 2));
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn streams_differ() {
        use rand::Rng;
        let a: u64 = stream_rng(1, 0).random();
        let b: u64 = stream_rng(1, 1).random();
        let c: u64 = stream_rng(1, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
