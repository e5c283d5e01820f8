//! Run options: a TOML file merged under command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use voxify_core::palette::{PaletteOptions, PaletteStrategy, MAX_COLORS, MIN_COLORS};
use voxify_core::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Semantic embedder: in-process or a child process command.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum EmbedderChoice {
    #[default]
    Builtin,
    External(String),
}

impl FromStr for EmbedderChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            _ if s == "builtin" => Ok(EmbedderChoice::Builtin),
            Some(("external", cmd)) if !cmd.trim().is_empty() => Ok(EmbedderChoice::External(cmd.to_string())),
            _ => Err(format!("expected `builtin` or `external:CMD`, got {s:?}")),
        }
    }
}

impl fmt::Display for EmbedderChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbedderChoice::Builtin => f.write_str("builtin"),
            EmbedderChoice::External(c) => write!(f, "external:{c}"),
        }
    }
}

impl Serialize for EmbedderChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EmbedderChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub mesh: PathBuf,
    pub out: PathBuf,
    pub image_width: usize,
    pub cell_size: usize,
    pub colors: usize,
    pub palette_method: PaletteStrategy,
    pub palette_options: PaletteOptions,
    pub seed: u64,
    pub pixel_art_dir: Option<PathBuf>,
    pub embedder: EmbedderChoice,
    pub precision: Precision,
    /// Activated-density occupancy threshold times the voxel edge; `None`
    /// uses ln 2.
    pub occupancy_threshold: Option<f64>,
    pub train: TrainConfig,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            mesh: PathBuf::new(),
            out: PathBuf::new(),
            image_width: 160,
            cell_size: 10,
            colors: 4,
            palette_method: PaletteStrategy::KMeans,
            palette_options: PaletteOptions::default(),
            seed: 0,
            pixel_art_dir: None,
            embedder: EmbedderChoice::Builtin,
            precision: Precision::F32,
            occupancy_threshold: None,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid option: {0}")]
    Invalid(String),
}

/// Values given on the command line; `None` leaves the config/default value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mesh: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub image_width: Option<usize>,
    pub cell_size: Option<usize>,
    pub colors: Option<usize>,
    pub palette_method: Option<PaletteStrategy>,
    pub seed: Option<u64>,
    pub pixel_art_dir: Option<PathBuf>,
    pub embedder: Option<EmbedderChoice>,
    pub precision: Option<Precision>,
    pub stage1_iters: Option<u64>,
    /// Also rescales the Stage-2 schedule breakpoints.
    pub stage2_iters: Option<u64>,
}

impl RunOptions {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    /// Applies flags over `self`. The run seed also seeds training.
    pub fn merged(mut self, o: &Overrides) -> Self {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = &o.$f { self.$f = v.clone(); })* };
        }
        set!(mesh, out, image_width, cell_size, colors, palette_method, seed, embedder, precision);
        if o.pixel_art_dir.is_some() {
            self.pixel_art_dir = o.pixel_art_dir.clone();
        }
        if let Some(n) = o.stage1_iters {
            self.train.stage1_iters = n;
        }
        if let Some(n) = o.stage2_iters {
            self.train = self.train.clone().with_scaled_stage2(n);
        }
        self.train.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(MIN_COLORS..=MAX_COLORS).contains(&self.colors) {
            return bad(format!("colors must lie in {MIN_COLORS}..={MAX_COLORS}, got {}", self.colors));
        }
        if self.cell_size == 0 || self.image_width == 0 || self.image_width % self.cell_size != 0 {
            return bad(format!(
                "image width {} must be a positive multiple of cell size {}",
                self.image_width, self.cell_size
            ));
        }
        if self.mesh.as_os_str().is_empty() {
            return bad("mesh path is required".into());
        }
        if self.out.as_os_str().is_empty() {
            return bad("output directory is required".into());
        }
        if let Some(t) = self.occupancy_threshold {
            if !(t.is_finite() && t >= 0.0) {
                return bad(format!("occupancy threshold must be non-negative, got {t}"));
            }
        }
        if self.train.seed != self.seed {
            return bad("train.seed must equal seed".into());
        }
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
