//! Config-driven commands behind the `gridnse` binary.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gridnse::dataset::{apply_attack, apply_neighborhood_exclusion, generate_dataset, load_dataset, sample_rng, save_dataset, Dataset, Sample, SampleRecipe};
use gridnse::eval::{
    attack_eval, default_fractions, distributed_infer, evaluate, exclusion_sweep, gn_baseline, locality_report, scaling_probe, sweep_csv,
};
use gridnse::factor_graph::{exact_inference_radius, feature_width};
use gridnse::gnn::{checkpoint_hash, init_model, load_checkpoint, GnnModel, GraphBatch};
use gridnse::grid::PowerSystem;
use gridnse::matpower::load_case;
use gridnse::train::{prepare, train, TrainOptions};
use rand_chacha::ChaCha8Rng;

pub use config::{parse_config, serialize_config, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    Eval,
    SweepExclusion,
    EvalLocality,
    EvalAttack,
    InferLocal,
    ProbeScaling,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Generate,
        Command::Train,
        Command::Eval,
        Command::SweepExclusion,
        Command::EvalLocality,
        Command::EvalAttack,
        Command::InferLocal,
        Command::ProbeScaling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::SweepExclusion => "sweep-exclusion",
            Command::EvalLocality => "eval-locality",
            Command::EvalAttack => "eval-attack",
            Command::InferLocal => "infer-local",
            Command::ProbeScaling => "probe-scaling",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Runs one command and returns the files it wrote.
pub fn dispatch(cmd: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let out = match cmd {
        Command::Generate => generate(cfg),
        Command::Train => train_cmd(cfg),
        Command::Eval => eval_cmd(cfg),
        Command::SweepExclusion => sweep_cmd(cfg),
        Command::EvalLocality => locality_cmd(cfg),
        Command::EvalAttack => attack_cmd(cfg),
        Command::InferLocal => infer_local_cmd(cfg),
        Command::ProbeScaling => scaling_cmd(cfg),
    };
    out.with_context(|| format!("{} failed", cmd.name()))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(())
}

fn n_max(cfg: &RunConfig, sys: &PowerSystem) -> usize {
    cfg.model.n_max.unwrap_or(sys.n_buses())
}

fn load_data(cfg: &RunConfig) -> Result<(PowerSystem, Dataset)> {
    require(&cfg.paths.dataset.join("manifest.txt"), "dataset manifest")?;
    let (sys, ds) = load_dataset(&cfg.paths.dataset).with_context(|| format!("loading dataset {}", cfg.paths.dataset.display()))?;
    Ok((sys, ds))
}

fn load_model(cfg: &RunConfig, sys: &PowerSystem) -> Result<GnnModel> {
    require(&cfg.paths.checkpoint, "checkpoint")?;
    let model = load_checkpoint(&cfg.paths.checkpoint).with_context(|| format!("loading checkpoint {}", cfg.paths.checkpoint.display()))?;
    let want = feature_width(n_max(cfg, sys));
    if model.config.input_width != want {
        bail!("checkpoint input width {} does not match model.n_max (needs {want})", model.config.input_width);
    }
    Ok(model)
}

fn split<'a>(cfg: &RunConfig, ds: &'a Dataset) -> Result<&'a [Sample]> {
    let samples = ds.split(&cfg.eval.split).expect("split name is validated");
    if samples.is_empty() {
        bail!("split `{}` of the dataset is empty", cfg.eval.split);
    }
    Ok(samples)
}

/// Writes `{command}_{scenario}_seed{seed}_{hash}{suffix}` in the report dir.
fn write_report(cfg: &RunConfig, cmd: &str, scenario: &str, seed: u64, hash: &str, suffix: &str, body: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.paths.reports).with_context(|| format!("creating {}", cfg.paths.reports.display()))?;
    let path = cfg.paths.reports.join(format!("{cmd}_{scenario}_seed{seed}_{hash}{suffix}"));
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

fn generate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let sys = load_case(&cfg.paths.case).with_context(|| format!("loading case {}", cfg.paths.case))?;
    let recipe = SampleRecipe::build(&sys, cfg.recipe_spec()?)?;
    log::info!(
        "case {} ({} buses), {} measurements per sample",
        cfg.paths.case,
        sys.n_buses(),
        recipe.measurement_count()
    );
    let ds = generate_dataset(&sys, &recipe, cfg.split_sizes(), cfg.recipe.seed)?;
    save_dataset(&sys, &ds, &cfg.paths.dataset)?;
    log::info!("wrote {} train / {} val / {} test samples to {}", ds.train.len(), ds.val.len(), ds.test.len(), cfg.paths.dataset.display());
    Ok(vec![cfg.paths.dataset.join("manifest.txt")])
}

fn train_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (sys, ds) = load_data(cfg)?;
    let nm = n_max(cfg, &sys);
    let tr = prepare(&sys, &ds.train, nm)?;
    let va = prepare(&sys, &ds.val, nm)?;
    let model = init_model(&cfg.gnn_config(feature_width(nm)), cfg.training.init_seed)?;
    log::info!("training {} parameters on {} samples ({} validation)", model.parameter_count(), tr.len(), va.len());
    if let Some(dir) = cfg.paths.checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let t = &cfg.training;
    let opts = TrainOptions {
        epochs: t.epochs,
        batch_size: t.batch_size,
        learning_rate: t.learning_rate,
        seed: t.seed,
        checkpoint: Some(cfg.paths.checkpoint.clone()),
    };
    let (model, report) = train(model, &tr, &va, &opts)?;
    let hash = checkpoint_hash(&model)?;
    let summary = format!(
        "checkpoint {} ({hash})\nparameters {}\nepochs {}  steps {}\nbest epoch {}  validation mse {:.4e}\n",
        cfg.paths.checkpoint.display(),
        model.parameter_count(),
        report.train_loss.len(),
        report.steps,
        report.best_epoch,
        report.best_val_mse
    );
    print!("{summary}");
    Ok(vec![
        cfg.paths.checkpoint.clone(),
        write_report(cfg, "train", "clean", t.seed, &hash, ".csv", &report.to_csv())?,
        write_report(cfg, "train", "clean", t.seed, &hash, ".txt", &summary)?,
    ])
}

fn eval_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (sys, ds) = load_data(cfg)?;
    let model = load_model(cfg, &sys)?;
    let hash = checkpoint_hash(&model)?;
    let samples = split(cfg, &ds)?;
    let data = prepare(&sys, samples, n_max(cfg, &sys))?;
    let rep = evaluate(&model, &data, sys.n_buses(), "clean", Some(cfg.eval.seed))?;
    let gn = gn_baseline(&sys, samples);
    let mut summary = format!("split {}\n{}", cfg.eval.split, rep.summary());
    let _ = writeln!(summary, "gn mse {:.4e} over {} converged ({} failed)", gn.mse, gn.success, gn.failure);
    print!("{summary}");
    Ok(vec![
        write_report(cfg, "eval", "clean", cfg.eval.seed, &hash, ".txt", &summary)?,
        write_report(cfg, "eval", "clean", cfg.eval.seed, &hash, "_per_bus.csv", &rep.per_bus_csv())?,
    ])
}

fn sweep_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (sys, ds) = load_data(cfg)?;
    let model = load_model(cfg, &sys)?;
    let hash = checkpoint_hash(&model)?;
    let fractions = cfg.eval.fractions.clone().unwrap_or_else(default_fractions);
    let rows = exclusion_sweep(&model, &sys, split(cfg, &ds)?, &fractions, cfg.eval.seed, n_max(cfg, &sys))?;
    let table = sweep_csv(&rows);
    print!("{table}");
    Ok(vec![write_report(cfg, "sweep-exclusion", "exclusion", cfg.eval.seed, &hash, ".csv", &table)?])
}

/// Applies a randomised scenario to each sample with stream `(eval.seed, 0, i)`.
fn transformed(cfg: &RunConfig, samples: &[Sample], f: impl Fn(&Sample, &mut ChaCha8Rng) -> gridnse::Result<Sample>) -> Result<Vec<Sample>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = sample_rng(cfg.eval.seed, 0, i as u64);
            Ok(f(s, &mut rng)?)
        })
        .collect()
}

fn locality_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (sys, ds) = load_data(cfg)?;
    let model = load_model(cfg, &sys)?;
    let hash = checkpoint_hash(&model)?;
    let nm = n_max(cfg, &sys);
    let samples = transformed(cfg, split(cfg, &ds)?, |s, rng| apply_neighborhood_exclusion(s, &sys, rng))?;
    let data = prepare(&sys, &samples, nm)?;
    let rep = evaluate(&model, &data, sys.n_buses(), "neighborhood", Some(cfg.eval.seed))?;
    let loc = locality_report(&model, &sys, &samples, nm)?;
    let mut summary = rep.summary();
    for b in &loc.buckets {
        let _ = writeln!(summary, "hops {:<4} mean bus mse {:.4e} over {}", b.label, b.mean_mse, b.population);
    }
    let _ = writeln!(summary, "near/far ratio {:.3}", loc.ratio());
    print!("{summary}");
    let seed = cfg.eval.seed;
    Ok(vec![
        write_report(cfg, "eval-locality", "neighborhood", seed, &hash, ".txt", &summary)?,
        write_report(cfg, "eval-locality", "neighborhood", seed, &hash, ".csv", &loc.to_csv())?,
        write_report(cfg, "eval-locality", "neighborhood", seed, &hash, "_per_bus.csv", &rep.per_bus_csv())?,
    ])
}

fn attack_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (sys, ds) = load_data(cfg)?;
    let model = load_model(cfg, &sys)?;
    let hash = checkpoint_hash(&model)?;
    let scale = cfg.eval.attack_scale;
    let samples = transformed(cfg, split(cfg, &ds)?, |s, rng| apply_attack(s, &sys, scale, rng))?;
    let rep = attack_eval(&model, &sys, &samples, cfg.eval.seed, n_max(cfg, &sys))?;
    let mut summary = format!("attack scale {scale}\n{}", rep.summary());
    for b in &rep.locality.buckets {
        let _ = writeln!(summary, "hops {:<4} mean bus mse {:.4e} over {}", b.label, b.mean_mse, b.population);
    }
    print!("{summary}");
    let seed = cfg.eval.seed;
    Ok(vec![
        write_report(cfg, "eval-attack", "attack", seed, &hash, ".txt", &summary)?,
        write_report(cfg, "eval-attack", "attack", seed, &hash, ".csv", &rep.locality.to_csv())?,
        write_report(cfg, "eval-attack", "attack", seed, &hash, "_per_bus.csv", &rep.gnn.per_bus_csv())?,
    ])
}

fn infer_local_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (sys, ds) = load_data(cfg)?;
    let model = load_model(cfg, &sys)?;
    let hash = checkpoint_hash(&model)?;
    let samples = split(cfg, &ds)?;
    let Some(sample) = samples.get(cfg.eval.sample) else {
        bail!("eval.sample = {} is out of range ({} samples in split)", cfg.eval.sample, samples.len());
    };
    let g = sample.graph(&sys, n_max(cfg, &sys))?;
    let full = model.forward(&GraphBatch::single(&g)?)?;
    let hops = cfg.eval.hops.unwrap_or_else(|| exact_inference_radius(model.config.layers, g.augmented));
    let buses = cfg.eval.buses.clone().unwrap_or_else(|| (0..sys.n_buses()).collect());
    let mut csv = String::from("bus,hops,V_local,theta_local,V_full,theta_full,V_label,theta_label\n");
    let mut worst = 0.0f64;
    for &bus in &buses {
        if bus >= sys.n_buses() {
            bail!("eval.buses contains {bus}, but the case has {} buses", sys.n_buses());
        }
        let (lm, la) = distributed_infer(&model, &g, bus, Some(hops))?;
        let (m, a) = g.bus_variables(bus).expect("every bus has variables");
        worst = worst.max((lm - full[m]).abs()).max((la - full[a]).abs());
        let _ = writeln!(
            csv,
            "{bus},{hops},{lm},{la},{},{},{},{}",
            full[m], full[a], sample.label.magnitudes[bus], sample.label.angles[bus]
        );
    }
    println!("{} buses, {hops}-hop subgraphs, largest local/full gap {worst:.3e}", buses.len());
    let scenario = format!("sample{}-hops{hops}", cfg.eval.sample);
    Ok(vec![write_report(cfg, "infer-local", &scenario, cfg.eval.seed, &hash, ".csv", &csv)?])
}

fn scaling_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let e = &cfg.eval;
    let largest = *e.scaling_sizes.iter().max().expect("validated");
    // Timing does not depend on the weights, so an untrained model of the
    // configured shape stands in when no checkpoint exists.
    let model = if cfg.paths.checkpoint.exists() {
        load_checkpoint(&cfg.paths.checkpoint)?
    } else {
        log::warn!("no checkpoint at {}, timing an untrained model", cfg.paths.checkpoint.display());
        init_model(&cfg.gnn_config(feature_width(largest)), cfg.training.init_seed)?
    };
    let hash = checkpoint_hash(&model)?;
    let rep = scaling_probe(&model, &e.scaling_sizes, e.scaling_repeats, e.scaling_seconds)?;
    let table = rep.to_csv();
    print!("{table}");
    Ok(vec![write_report(cfg, "probe-scaling", "chain", e.seed, &hash, ".csv", &table)?])
}

/// Reads and validates a config file.
pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}
