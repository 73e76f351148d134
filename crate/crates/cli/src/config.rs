//! Run configuration: one TOML file per run, every field optional with
//! defaults equal to the published training setup.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use gridnse::dataset::{parse_kinds, NoiseVariances, RecipeSpec, SplitSizes};
use gridnse::gnn::GnnConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// `ieee30`, `ieee118`, or a path to a MATPOWER `.m` / native case file.
    pub case: String,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            case: "ieee30".into(),
            dataset: "data/ieee30".into(),
            checkpoint: "runs/ieee30.ckpt".into(),
            reports: "runs/reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Recipe {
    /// Required for cases other than the two IEEE presets.
    pub legacy_count: Option<usize>,
    pub pmu_count: Option<usize>,
    pub pmu_currents: Option<usize>,
    pub legacy_kinds: Option<Vec<String>>,
    pub variance_phasor: f64,
    pub variance_legacy: f64,
    pub variance_injection: f64,
    pub load_min: f64,
    pub load_max: f64,
    pub noise_scale: f64,
    pub placement_seed: u64,
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for Recipe {
    fn default() -> Self {
        let v = NoiseVariances::default();
        Recipe {
            legacy_count: None,
            pmu_count: None,
            pmu_currents: None,
            legacy_kinds: None,
            variance_phasor: v.phasor,
            variance_legacy: v.legacy,
            variance_injection: v.injection,
            load_min: 0.7,
            load_max: 1.3,
            noise_scale: 1.0,
            placement_seed: 1,
            seed: 7,
            train: 10_000,
            val: 100,
            test: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Model {
    pub embedding: usize,
    pub message: usize,
    pub layers: usize,
    pub message_hidden: usize,
    pub head_hidden: usize,
    /// Largest bus count the index encoding must cover; defaults to the
    /// case's bus count.
    pub n_max: Option<usize>,
}

impl Default for Model {
    fn default() -> Self {
        let g = GnnConfig::default();
        Model {
            embedding: g.embedding,
            message: g.message,
            layers: g.layers,
            message_hidden: g.message_hidden,
            head_hidden: g.head_hidden,
            n_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Training {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Shuffling seed.
    pub seed: u64,
    /// Parameter initialisation seed.
    pub init_seed: u64,
}

impl Default for Training {
    fn default() -> Self {
        let g = GnnConfig::default();
        Training { learning_rate: g.learning_rate, batch_size: g.batch_size, epochs: g.epochs, seed: 0, init_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Eval {
    /// `train`, `val` or `test`.
    pub split: String,
    /// Seed of every randomised scenario.
    pub seed: u64,
    /// Exclusion fractions; defaults to 0, 0.05, …, 0.95.
    pub fractions: Option<Vec<f64>>,
    pub attack_scale: f64,
    /// Sample of the split used by `infer-local`.
    pub sample: usize,
    /// `infer-local` radius in bus hops; defaults to the exact radius.
    pub hops: Option<usize>,
    /// `infer-local` buses; defaults to every bus.
    pub buses: Option<Vec<usize>>,
    pub scaling_sizes: Vec<usize>,
    pub scaling_repeats: usize,
    pub scaling_seconds: f64,
}

impl Default for Eval {
    fn default() -> Self {
        Eval {
            split: "test".into(),
            seed: 0,
            fractions: None,
            attack_scale: 1.0,
            sample: 0,
            hops: None,
            buses: None,
            scaling_sizes: vec![100, 400, 1600],
            scaling_repeats: 5,
            scaling_seconds: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Run {
    /// Worker threads for parallel sections; 0 uses every core.
    pub threads: usize,
    /// Results never depend on thread count; kept so runs record the intent.
    pub deterministic: bool,
}

impl Default for Run {
    fn default() -> Self {
        Run { threads: 0, deterministic: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub recipe: Recipe,
    pub model: Model,
    pub training: Training,
    pub eval: Eval,
    pub run: Run,
}

fn positive(key: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("{key} = {v} is out of range (must be a positive number)");
    }
    Ok(())
}

fn at_least_one(key: &str, v: usize) -> Result<()> {
    if v == 0 {
        bail!("{key} = 0 is out of range (must be >= 1)");
    }
    Ok(())
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).context("invalid config")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn serialize_config(cfg: &RunConfig) -> Result<String> {
    Ok(toml::to_string(cfg)?)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let r = &self.recipe;
        positive("recipe.variance_phasor", r.variance_phasor)?;
        positive("recipe.variance_legacy", r.variance_legacy)?;
        positive("recipe.variance_injection", r.variance_injection)?;
        positive("recipe.load_min", r.load_min)?;
        positive("recipe.load_max", r.load_max)?;
        if r.load_min > r.load_max {
            bail!("recipe.load_min = {} exceeds recipe.load_max = {}", r.load_min, r.load_max);
        }
        if !(r.noise_scale >= 0.0 && r.noise_scale.is_finite()) {
            bail!("recipe.noise_scale = {} is out of range (must be >= 0)", r.noise_scale);
        }
        at_least_one("recipe.train", r.train)?;
        if let Some(kinds) = &r.legacy_kinds {
            parse_kinds(&kinds.join(",")).context("recipe.legacy_kinds")?;
        }
        let m = &self.model;
        for (k, v) in [
            ("model.embedding", m.embedding),
            ("model.message", m.message),
            ("model.layers", m.layers),
            ("model.message_hidden", m.message_hidden),
            ("model.head_hidden", m.head_hidden),
        ] {
            at_least_one(k, v)?;
        }
        if let Some(n) = m.n_max {
            at_least_one("model.n_max", n)?;
        }
        let t = &self.training;
        positive("training.learning_rate", t.learning_rate)?;
        at_least_one("training.batch_size", t.batch_size)?;
        at_least_one("training.epochs", t.epochs)?;
        let e = &self.eval;
        if !["train", "val", "test"].contains(&e.split.as_str()) {
            bail!("eval.split = {:?} is out of range (train, val or test)", e.split);
        }
        if let Some(f) = &e.fractions {
            if let Some(bad) = f.iter().find(|f| !(0.0..=0.95).contains(*f)) {
                bail!("eval.fractions contains {bad}, out of range [0, 0.95]");
            }
        }
        if !(e.attack_scale >= 0.0 && e.attack_scale.is_finite()) {
            bail!("eval.attack_scale = {} is out of range (must be >= 0)", e.attack_scale);
        }
        if e.scaling_sizes.len() < 2 || e.scaling_sizes.iter().any(|&n| n < 2) {
            bail!("eval.scaling_sizes needs at least two sizes of >= 2 buses");
        }
        at_least_one("eval.scaling_repeats", e.scaling_repeats)?;
        if !(e.scaling_seconds >= 0.0 && e.scaling_seconds.is_finite()) {
            bail!("eval.scaling_seconds = {} is out of range (must be >= 0)", e.scaling_seconds);
        }
        Ok(())
    }

    /// Recipe for the configured case, with preset counts for the IEEE cases.
    pub fn recipe_spec(&self) -> Result<RecipeSpec> {
        let r = &self.recipe;
        let base = match self.paths.case.as_str() {
            "ieee30" | "case30" => Some(RecipeSpec::ieee30(r.placement_seed)),
            "ieee118" | "case118" => Some(RecipeSpec::ieee118(r.placement_seed)),
            _ => None,
        };
        let count = |key: &str, v: Option<usize>, preset: Option<usize>| {
            v.or(preset).with_context(|| format!("missing required field recipe.{key} for case {}", self.paths.case))
        };
        let mut spec = RecipeSpec {
            system: self.paths.case.clone(),
            legacy_count: count("legacy_count", r.legacy_count, base.as_ref().map(|b| b.legacy_count))?,
            pmu_count: count("pmu_count", r.pmu_count, base.as_ref().map(|b| b.pmu_count))?,
            pmu_currents: count("pmu_currents", r.pmu_currents, base.as_ref().map(|b| b.pmu_currents))?,
            variances: NoiseVariances { phasor: r.variance_phasor, legacy: r.variance_legacy, injection: r.variance_injection },
            load_min: r.load_min,
            load_max: r.load_max,
            noise_scale: r.noise_scale,
            placement_seed: r.placement_seed,
            ..RecipeSpec::ieee30(r.placement_seed)
        };
        if let Some(kinds) = &r.legacy_kinds {
            spec.legacy_kinds = parse_kinds(&kinds.join(","))?;
        }
        Ok(spec)
    }

    pub fn split_sizes(&self) -> SplitSizes {
        SplitSizes { train: self.recipe.train, val: self.recipe.val, test: self.recipe.test }
    }

    pub fn gnn_config(&self, input_width: usize) -> GnnConfig {
        let (m, t) = (&self.model, &self.training);
        GnnConfig {
            embedding: m.embedding,
            message: m.message,
            layers: m.layers,
            message_hidden: m.message_hidden,
            head_hidden: m.head_hidden,
            input_width,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
        }
    }
}
