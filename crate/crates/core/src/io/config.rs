//! Flat `key = value` pipeline configuration.
//!
//! One setting per line, `#` starts a comment, unknown or repeated keys are
//! rejected and every value is range-checked after loading. `preset` is
//! applied before the other keys regardless of where it appears, so
//! individual synthetic settings override it. [`PipelineConfig::to_kv_string`]
//! writes every key with its current value and parses back to the same
//! config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::compose::{InterpolationConfig, Space};
use crate::error::{Error, Result};
use crate::eval::SyntheticSpec;
use crate::infer::MemoryOptions;
use crate::refine::RefinementConfig;
use crate::train::TrainConfig;
use crate::types::RngSeed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Oci,
    Hash,
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oci" => Ok(Strategy::Oci),
            "hash" => Ok(Strategy::Hash),
            _ => Err(Error::InvalidConfig(format!("unknown strategy {s:?} (oci|hash)"))),
        }
    }
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Oci => "oci",
            Strategy::Hash => "hash",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthPreset {
    Easy,
    Hard,
}

impl FromStr for SynthPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(SynthPreset::Easy),
            "hard" => Ok(SynthPreset::Hard),
            _ => Err(Error::InvalidConfig(format!("unknown preset {s:?} (easy|hard)"))),
        }
    }
}

impl SynthPreset {
    pub fn name(self) -> &'static str {
        match self {
            SynthPreset::Easy => "easy",
            SynthPreset::Hard => "hard",
        }
    }

    pub fn spec(self, seed: RngSeed) -> SyntheticSpec {
        match self {
            SynthPreset::Easy => SyntheticSpec::easy(seed),
            SynthPreset::Hard => SyntheticSpec::hard(seed),
        }
    }
}

fn space_name(s: Space) -> &'static str {
    match s {
        Space::Textual => "textual",
        Space::Visual => "visual",
        Space::Latent => "latent",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub preset: SynthPreset,
    /// Synthetic benchmark settings; its seed is derived from `seed`.
    pub synthetic: SyntheticSpec,
    pub enable_generation: bool,
    pub interpolation: InterpolationConfig,
    pub refinement: RefinementConfig,
    pub train: TrainConfig,
    pub memory: MemoryOptions,
    pub strategy: Strategy,
    /// Use these embedding files instead of generating a synthetic benchmark.
    pub support_path: Option<PathBuf>,
    pub query_path: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            preset: SynthPreset::Easy,
            synthetic: SyntheticSpec::easy(RngSeed(0)),
            enable_generation: true,
            interpolation: InterpolationConfig::default(),
            refinement: RefinementConfig { gamma: 0.4 },
            train: TrainConfig::default(),
            memory: MemoryOptions::default(),
            strategy: Strategy::Oci,
            support_path: None,
            query_path: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse(key, value)?;
    if !v.is_finite() {
        return Err(Error::InvalidConfig(format!("{key}: {value} is not finite")));
    }
    Ok(v)
}

fn check(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(what.to_string()))
    }
}

impl PipelineConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", n + 1))
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if pairs.insert(k.clone(), v).is_some() {
                return Err(Error::InvalidConfig(format!("key {k} given twice")));
            }
        }
        let mut cfg = Self::default();
        if let Some(p) = pairs.remove("preset") {
            cfg.set("preset", &p)?;
        }
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Assigns one key. Does not validate cross-field constraints.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut self.synthetic;
        let i = &mut self.interpolation;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "preset" => {
                self.preset = v.parse()?;
                self.synthetic = self.preset.spec(RngSeed(self.seed));
            }
            "dim" => s.dim = parse(key, v)?,
            "known_categories" => s.known_categories = parse(key, v)?,
            "unknown_categories" => s.unknown_categories = parse(key, v)?,
            "samples_per_category" => s.samples_per_category = parse(key, v)?,
            "angular_radius" => s.angular_radius = parse_f64(key, v)?,
            "center_separation" => s.center_separation = parse_f64(key, v)?,
            "enable_generation" => self.enable_generation = parse(key, v)?,
            "lambda_t" => i.lambda_t = parse_f64(key, v)?,
            "lambda_v" => i.lambda_v = parse_f64(key, v)?,
            "lambda_l" => i.lambda_l = parse_f64(key, v)?,
            "primary_space" => i.primary = v.parse()?,
            "pairs_per_epoch" => i.pairs_per_epoch = parse(key, v)?,
            "gamma" => self.refinement.gamma = parse_f64(key, v)?,
            "knn_k" => t.clustering.knn_k = parse(key, v)?,
            "min_similarity" => t.clustering.min_similarity = parse_f64(key, v)?,
            "alpha" => t.alpha = parse_f64(key, v)?,
            "beta" => t.beta = parse_f64(key, v)?,
            "tau" => t.tau = parse_f64(key, v)?,
            "lr" => t.lr = parse_f64(key, v)?,
            "lr_min" => t.lr_min = parse_f64(key, v)?,
            "weight_decay" => t.weight_decay = parse_f64(key, v)?,
            "momentum" => t.momentum = parse_f64(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "batch_categories" => t.batch_categories = parse(key, v)?,
            "batch_per_category" => t.batch_per_category = parse(key, v)?,
            "alpha_warmup_epochs" => t.alpha_warmup_epochs = parse(key, v)?,
            "recluster_every" => t.recluster_every = parse(key, v)?,
            "iters_per_epoch" => t.iters_per_epoch = parse(key, v)?,
            "proj_dim" => t.proj_dim = parse(key, v)?,
            "hash_bits" => t.hash_bits = parse(key, v)?,
            "eta" => self.memory.eta = parse_f64(key, v)?,
            "delta_scale" => self.memory.delta_scale = parse_f64(key, v)?,
            "include_virtual_leaders" => self.memory.include_virtual = parse(key, v)?,
            "strategy" => self.strategy = v.parse()?,
            "support_path" => self.support_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "query_path" => self.query_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (t, s, i) = (&self.train, &self.synthetic, &self.interpolation);
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        vec![
            ("seed", self.seed.to_string()),
            ("preset", self.preset.name().into()),
            ("dim", s.dim.to_string()),
            ("known_categories", s.known_categories.to_string()),
            ("unknown_categories", s.unknown_categories.to_string()),
            ("samples_per_category", s.samples_per_category.to_string()),
            ("angular_radius", s.angular_radius.to_string()),
            ("center_separation", s.center_separation.to_string()),
            ("enable_generation", self.enable_generation.to_string()),
            ("lambda_t", i.lambda_t.to_string()),
            ("lambda_v", i.lambda_v.to_string()),
            ("lambda_l", i.lambda_l.to_string()),
            ("primary_space", space_name(i.primary).into()),
            ("pairs_per_epoch", i.pairs_per_epoch.to_string()),
            ("gamma", self.refinement.gamma.to_string()),
            ("knn_k", t.clustering.knn_k.to_string()),
            ("min_similarity", t.clustering.min_similarity.to_string()),
            ("alpha", t.alpha.to_string()),
            ("beta", t.beta.to_string()),
            ("tau", t.tau.to_string()),
            ("lr", t.lr.to_string()),
            ("lr_min", t.lr_min.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("momentum", t.momentum.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_categories", t.batch_categories.to_string()),
            ("batch_per_category", t.batch_per_category.to_string()),
            ("alpha_warmup_epochs", t.alpha_warmup_epochs.to_string()),
            ("recluster_every", t.recluster_every.to_string()),
            ("iters_per_epoch", t.iters_per_epoch.to_string()),
            ("proj_dim", t.proj_dim.to_string()),
            ("hash_bits", t.hash_bits.to_string()),
            ("eta", self.memory.eta.to_string()),
            ("delta_scale", self.memory.delta_scale.to_string()),
            ("include_virtual_leaders", self.memory.include_virtual.to_string()),
            ("strategy", self.strategy.name().into()),
            ("support_path", path(&self.support_path)),
            ("query_path", path(&self.query_path)),
        ]
    }

    pub fn to_kv_string(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// The synthetic spec with its seed tied to `seed`.
    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            seed: RngSeed(self.seed),
            ..self.synthetic.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.interpolation.validate()?;
        self.train.validate()?;
        let g = self.refinement.gamma;
        check((-1.0..=1.0).contains(&g), "gamma must lie in [-1, 1]")?;
        check(self.train.clustering.knn_k >= 1, "knn_k must be >= 1")?;
        check(
            (-1.0..=1.0).contains(&self.train.clustering.min_similarity),
            "min_similarity must lie in [-1, 1]",
        )?;
        check((0.0..=1.0).contains(&self.memory.eta), "eta must lie in [0, 1]")?;
        check(self.memory.delta_scale > 0.0, "delta_scale must be > 0")?;
        check(
            self.support_path.is_some() == self.query_path.is_some(),
            "support_path and query_path must be given together",
        )?;
        Ok(())
    }
}
