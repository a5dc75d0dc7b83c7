use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::BackendSpec;
use crate::cell::SamplingConfig;
use crate::error::{Error, Result};
use crate::eval::EvalMode;
use crate::imaging::ChannelRole;
use crate::integration::IntegrationConfig;
use crate::screen::HitvalConfig;
use crate::subcell::SubcellConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    /// Glob for the input images, relative to the config file.
    pub images: String,
    /// Role of each channel plane, in file order. Extra planes are `other`.
    pub roles: Vec<ChannelRole>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub nuclei: BackendSpec,
    pub cell: BackendSpec,
    /// Defaults to the cell backend.
    pub subcellular: Option<BackendSpec>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            nuclei: BackendSpec::Oracle,
            cell: BackendSpec::Oracle,
            subcellular: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: EvalMode,
    /// Directory of ground-truth label images named after the input images.
    pub ground_truth: Option<PathBuf>,
}

/// Everything that determines a run's outputs, plus two operational fields
/// (`workers`, `output_dir`) that are excluded from the config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Run seed; when set it replaces `sampling.rng_seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub input: InputConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub integration: IntegrationConfig,
    #[serde(default)]
    pub subcell: SubcellConfig,
    /// Plate layout CSV.
    #[serde(default)]
    pub layout: Option<PathBuf>,
    #[serde(default)]
    pub hitval: HitvalConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Directory the relative paths above are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_workers() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub backend: Option<BackendSpec>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct HashedView<'a> {
    seed: u64,
    input: &'a InputConfig,
    backend: &'a BackendConfig,
    sampling: &'a SamplingConfig,
    integration: &'a IntegrationConfig,
    subcell: &'a SubcellConfig,
    layout: &'a Option<PathBuf>,
    hitval: &'a HitvalConfig,
    eval: &'a EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    fn normalize(&mut self) {
        let seed = self.seed.unwrap_or(self.sampling.rng_seed);
        self.seed = Some(seed);
        self.sampling.rng_seed = seed;
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = Some(s);
            self.sampling.rng_seed = s;
        }
        if let Some(b) = &o.backend {
            self.backend = BackendConfig {
                nuclei: b.clone(),
                cell: b.clone(),
                subcellular: None,
            };
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let count = |r| self.input.roles.iter().filter(|x| **x == r).count();
        if count(ChannelRole::Nucleus) != 1 {
            return Err(Error::Config("roles need exactly one `nucleus` channel".into()));
        }
        if count(ChannelRole::CellMarker) == 0 {
            return Err(Error::Config("roles need at least one `cell_marker` channel".into()));
        }
        if count(ChannelRole::SubcellularMarker) > 1 {
            return Err(Error::Config("at most one `subcellular_marker` channel".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        glob::Pattern::new(&self.input.images)
            .map_err(|e| Error::Config(format!("bad image glob: {e}")))?;
        self.sampling.validate().map_err(as_config)?;
        self.integration.validate().map_err(as_config)?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.sampling.rng_seed
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn subcellular_backend(&self) -> &BackendSpec {
        self.backend.subcellular.as_ref().unwrap_or(&self.backend.cell)
    }

    /// Input files matching the glob, sorted by path.
    pub fn input_images(&self) -> Result<Vec<PathBuf>> {
        let pattern = self.resolve(Path::new(&self.input.images));
        let pattern = pattern.to_string_lossy();
        let mut files: Vec<PathBuf> = glob::glob(&pattern)
            .map_err(|e| Error::Config(format!("bad image glob: {e}")))?
            .filter_map(|p| p.ok())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        Ok(files)
    }

    /// SHA-256 over the canonical JSON of every output-relevant setting.
    pub fn hash(&self) -> String {
        let view = HashedView {
            seed: self.seed(),
            input: &self.input,
            backend: &self.backend,
            sampling: &self.sampling,
            integration: &self.integration,
            subcell: &self.subcell,
            layout: &self.layout,
            hitval: &self.hitval,
            eval: &self.eval,
        };
        let json = serde_json::to_vec(&view).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
