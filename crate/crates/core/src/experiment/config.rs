//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degrade::CorruptionSpec;
use crate::error::{Error, Result};
use crate::image::{ImageTensor, Shape};
use crate::prior::GaussianMixturePrior;
use crate::sampler::{Method, RunOptions};
use crate::schedule::{DiffusionSchedule, Variant};
use crate::spectral::{box_mask, centered_box_mask, random_mask, Kernel, SpectralOperator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub shape: Shape,
    pub ground_truth: GroundTruth,
    pub prior: PriorSpec,
    pub task: TaskSpec,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub options: RunOptions,
    pub methods: Vec<MethodEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroundTruth {
    /// A fresh draw from the prior per seed.
    PriorSample,
    /// A PGM/PPM file, the same for every seed.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    TemplateBank {
        count: usize,
        variance: f64,
        #[serde(default)]
        seed: u64,
    },
    Json {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub operator: OperatorSpec,
    #[serde(default = "no_corruption")]
    pub corruption: CorruptionSpec,
}

fn no_corruption() -> CorruptionSpec {
    CorruptionSpec::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Identity,
    MaskRandom {
        #[serde(default = "default_masked_fraction")]
        masked_fraction: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Without explicit geometry, masks a centered box of half the image side.
    MaskBox {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        top: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        left: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<usize>,
    },
    BlockDownsample {
        factor: usize,
    },
    BlurUniform {
        size: usize,
    },
    Colorization,
}

fn default_masked_fraction() -> f64 {
    0.7
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub steps: usize,
    #[serde(default = "default_variant")]
    pub variant: Variant,
}

fn default_variant() -> Variant {
    Variant::SimpleAncestral
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub method: Method,
    /// Overrides the experiment schedule for this method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSpec>,
}

impl MethodEntry {
    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match self.method {
            Method::Unconditional => "unconditional",
            Method::Ddnm => "ddnm",
            Method::TmpdScalar { .. } => "tmpd_scalar",
            Method::Mas(_) => "mas",
        }
        .to_string()
    }
}

fn config_err(path: impl Into<String>, err: impl std::fmt::Display) -> Error {
    Error::Config {
        path: path.into(),
        message: err.to_string(),
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::vp_linear(self.steps, self.variant)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| "<document>".into());
            config_err(at, e.message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(path.display().to_string(), e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err("<serialize>", e))
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let GroundTruth::File { path } = &mut self.ground_truth {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if let PriorSpec::Json { path } = &mut self.prior {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "at least one seed is required"));
        }
        if self.methods.is_empty() {
            return Err(config_err("methods", "at least one method is required"));
        }
        let Shape {
            channels,
            height,
            width,
        } = self.shape;
        if channels == 0 || height == 0 || width == 0 {
            return Err(config_err("shape", "dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(config_err("shape.channels", "must be 1 or 3"));
        }
        if let PriorSpec::TemplateBank { count, variance, .. } = self.prior {
            if count == 0 {
                return Err(config_err("prior.count", "must be positive"));
            }
            if !(variance >= 0.0) {
                return Err(config_err("prior.variance", "must be >= 0"));
            }
        }
        self.task
            .corruption
            .validate()
            .map_err(|e| config_err("task.corruption", e))?;
        self.schedule.build().map_err(|e| config_err("schedule", e))?;
        let mut labels = std::collections::BTreeSet::new();
        for (i, m) in self.methods.iter().enumerate() {
            m.method
                .validate()
                .map_err(|e| config_err(format!("methods[{i}].method"), e))?;
            if let Some(s) = &m.schedule {
                s.build()
                    .map_err(|e| config_err(format!("methods[{i}].schedule"), e))?;
            }
            if !labels.insert(m.label()) {
                return Err(config_err(
                    format!("methods[{i}].label"),
                    format!("duplicate label {:?}", m.label()),
                ));
            }
        }
        self.build_operator()
            .map_err(|e| config_err("task.operator", e))?;
        Ok(())
    }

    pub fn build_operator(&self) -> Result<SpectralOperator> {
        let shape = self.shape;
        match &self.task.operator {
            OperatorSpec::Identity => SpectralOperator::identity(shape),
            OperatorSpec::MaskRandom {
                masked_fraction,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                SpectralOperator::mask(shape, &random_mask(shape, *masked_fraction, &mut rng)?)
            }
            OperatorSpec::MaskBox {
                top,
                left,
                height,
                width,
            } => {
                let mask = match (top, left, height, width) {
                    (None, None, None, None) => centered_box_mask(shape)?,
                    (Some(t), Some(l), Some(h), Some(w)) => box_mask(shape, *t, *l, *h, *w)?,
                    _ => {
                        return Err(crate::error::invalid(
                            "mask_box needs all of top/left/height/width or none",
                        ))
                    }
                };
                SpectralOperator::mask(shape, &mask)
            }
            OperatorSpec::BlockDownsample { factor } => {
                SpectralOperator::block_downsample(shape.channels, shape.height, shape.width, *factor)
            }
            OperatorSpec::BlurUniform { size } => SpectralOperator::circular_blur(
                shape.channels,
                shape.height,
                shape.width,
                &Kernel::uniform(*size)?,
            ),
            OperatorSpec::Colorization => SpectralOperator::channel_average_for(shape),
        }
    }

    pub fn build_prior(&self) -> Result<GaussianMixturePrior> {
        let prior = match &self.prior {
            PriorSpec::TemplateBank {
                count,
                variance,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                GaussianMixturePrior::template_bank(self.shape, *count, *variance, &mut rng)?
            }
            PriorSpec::Json { path } => GaussianMixturePrior::load_json(path)?,
        };
        if prior.dim() != self.shape.len() {
            return Err(config_err(
                "prior",
                format!("prior dimension {} != image size {}", prior.dim(), self.shape.len()),
            ));
        }
        Ok(prior)
    }

    pub fn load_ground_truth_file(&self) -> Result<Option<ImageTensor>> {
        match &self.ground_truth {
            GroundTruth::PriorSample => Ok(None),
            GroundTruth::File { path } => {
                let img = ImageTensor::read_pnm(path)?;
                if img.shape() != self.shape {
                    return Err(config_err(
                        "ground_truth.path",
                        format!("image shape {:?} != configured {:?}", img.shape(), self.shape),
                    ));
                }
                Ok(Some(img))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
name = "sr"
seeds = [0, 1]
shape = { channels = 1, height = 16, width = 16 }
ground_truth = { source = "prior_sample" }
prior = { kind = "template_bank", count = 4, variance = 0.0025, seed = 3 }
schedule = { steps = 10 }

[task]
operator = { kind = "block_downsample", factor = 4 }
corruption = { kind = "gaussian", sigma_y = 0.05 }

[[methods]]
label = "mas-budget"
method = { name = "mas", eta1 = 0.0, eta2 = 0.0, noise = { kind = "known_gaussian", sigma_y = 0.05 } }

[[methods]]
method = { name = "ddnm" }
schedule = { steps = 10, variant = { kind = "ddim_eta", eta = 0.85 } }
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.methods.len(), 2);
        assert_eq!(cfg.methods[1].label(), "ddnm");
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_method_is_a_config_error() {
        let bad = SAMPLE.replace(r#"name = "ddnm""#, r#"name = "dps""#);
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::Config { .. })));
    }

    #[test]
    fn unknown_key_rejected() {
        let bad = SAMPLE.replace("seeds = [0, 1]", "seeds = [0, 1]\nturbo = true");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::Config { .. })));
    }

    #[test]
    fn semantic_errors_name_their_path() {
        let bad = SAMPLE.replace("factor = 4", "factor = 5");
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "task.operator"),
            other => panic!("{other:?}"),
        }
        let bad = SAMPLE.replace(r#"label = "mas-budget""#, r#"label = "ddnm""#);
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "methods[1].label"),
            other => panic!("{other:?}"),
        }
    }
}
