//! The four commands behind the `mudiff` binary. Each returns an [`AppError`]
//! carrying the process exit code on failure.

use std::fmt;
use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::config::RunConfig;
use crate::diffusion::{
    apply_limited_3d, load_checkpoint, sample_batch, save_checkpoint, train, DiffusionError, SampleOptions,
    TrainConfig,
};
use crate::metrics::evaluate;
use crate::model::{Mode, Muformer};
use crate::molecule::{load_dataset, make_synthetic_dataset, read_dataset, write_dataset, AtomTable, Molecule};
use crate::rng;
use crate::schedule::{NoiseSchedule, Transitions};
use crate::verify::{self, Suite};

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppError {
    pub code: i32,
    pub message: String,
}

impl AppError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for AppError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Sample,
    Eval,
    Verify,
}

/// Parsed command line, independent of the argument parser.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub command: Command,
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Verify only; empty means every suite.
    pub suites: Vec<Suite>,
}

impl Invocation {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            config: None,
            overrides: Vec::new(),
            seed: None,
            out: None,
            suites: Vec::new(),
        }
    }

    /// Config file, then `--set`, then the dedicated `--seed` and `--out` flags.
    pub fn resolve_config(&self) -> Result<RunConfig, AppError> {
        let mut cfg = RunConfig::resolve(self.config.as_deref(), &self.overrides)
            .map_err(|e| AppError::new(EXIT_CONFIG, e.to_string()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        Ok(cfg)
    }
}

pub fn run(inv: &Invocation) -> Result<(), AppError> {
    let cfg = inv.resolve_config()?;
    match inv.command {
        Command::Train => cmd_train(&cfg),
        Command::Sample => cmd_sample(&cfg),
        Command::Eval => cmd_eval(&cfg),
        Command::Verify => cmd_verify(&cfg, &inv.suites),
    }
}

fn create_out(dir: &Path) -> Result<(), AppError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| AppError::new(EXIT_CONFIG, format!("cannot create output directory {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), AppError> {
    std::fs::write(path, contents).map_err(|e| AppError::new(EXIT_CONFIG, format!("cannot write {}: {e}", path.display())))
}

pub fn load_training_data(cfg: &RunConfig) -> Result<Vec<Molecule>, AppError> {
    let mut data = match &cfg.dataset.path {
        Some(path) => load_dataset(path)
            .map_err(|e| AppError::new(EXIT_DATA, format!("cannot load dataset {}: {e}", path.display())))?,
        None => make_synthetic_dataset(cfg.dataset.synthetic_count, cfg.dataset.synthetic_max_atoms, cfg.seed),
    };
    if data.is_empty() {
        return Err(AppError::new(EXIT_DATA, "the dataset holds no molecules"));
    }
    if let Some(keep) = cfg.dataset.limited_3d {
        data = apply_limited_3d(&data, keep, &mut rng::substream(cfg.seed, "limited-3d"));
        info!("coordinates kept on {} of {} records", data.iter().filter(|m| m.has_3d).count(), data.len());
    }
    Ok(data)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), AppError> {
    let data = load_training_data(cfg)?;
    let mut net = Muformer::new(cfg.model.clone(), &mut rng::substream(cfg.seed, "init"))
        .map_err(|e| AppError::new(EXIT_CONFIG, e.to_string()))?;
    let schedule = NoiseSchedule::cosine(cfg.schedule.steps, cfg.schedule.offset);
    let transitions = Transitions::uniform(&schedule, cfg.model.bond_categories);
    let train_cfg = TrainConfig {
        steps: cfg.training.steps,
        batch_size: cfg.training.batch_size,
        learning_rate: cfg.optimizer.learning_rate,
        optimizer: cfg.optimizer.kind,
        clip_norm: cfg.optimizer.clip_norm,
        mode: cfg.mode,
        seed: cfg.seed,
    };
    info!(
        "training {} parameters on {} molecules for {} steps",
        net.params.scalar_count(),
        data.len(),
        train_cfg.steps
    );
    let report = train(&data, &mut net, &schedule, &transitions, &train_cfg).map_err(|e| match e {
        DiffusionError::NonFinite { .. } | DiffusionError::Tensor(_) => {
            AppError::new(EXIT_NUMERIC, format!("training aborted: {e}"))
        }
        other => AppError::new(EXIT_DATA, format!("training rejected the data: {other}")),
    })?;
    if report.clipped > 0 {
        warn!("{} bond probabilities were clipped in the cross-entropy", report.clipped);
    }

    create_out(&cfg.out)?;
    let ckpt = cfg.out.join("checkpoint.bin");
    save_checkpoint(&ckpt, &net, &schedule, cfg.mode, &report.histogram, &report.bounds)
        .map_err(|e| AppError::new(EXIT_CONFIG, e.to_string()))?;
    write_file(&cfg.out.join("loss.csv"), &report.to_csv())?;
    write_file(&cfg.out.join("config.json"), &cfg.to_json())?;
    let steps = report.rows.len();
    println!(
        "trained {steps} steps: loss {:.4} -> {:.4}; checkpoint {}",
        report.moving_average(10.min(steps), 10),
        report.moving_average(steps, 50),
        ckpt.display()
    );
    Ok(())
}

fn covers(trained: Mode, wanted: Mode) -> bool {
    (!wanted.uses_2d() || trained.uses_2d()) && (!wanted.uses_3d() || trained.uses_3d())
}

pub fn cmd_sample(cfg: &RunConfig) -> Result<(), AppError> {
    let path = cfg.checkpoint_path();
    let ck = load_checkpoint(&path).map_err(|e| AppError::new(EXIT_CONFIG, e.to_string()))?;
    if !covers(ck.header.mode, cfg.mode) {
        return Err(AppError::new(
            EXIT_CONFIG,
            format!(
                "{}: trained in mode {}, which cannot sample mode {}",
                path.display(),
                ck.header.mode,
                cfg.mode
            ),
        ));
    }
    let count = cfg.sampling.count;
    if count > 0 && ck.header.atom_counts.is_empty() {
        return Err(AppError::new(EXIT_CONFIG, format!("{}: no atom-count histogram", path.display())));
    }
    let mut size_rng = rng::substream(cfg.seed, "sizes");
    let sizes: Vec<usize> = (0..count)
        .map(|_| ck.header.atom_counts.draw(&mut size_rng).expect("histogram is non-empty"))
        .collect();
    let transitions = Transitions::uniform(&ck.schedule, ck.header.model.bond_categories);
    let options = SampleOptions::new(cfg.mode, cfg.sampling.decode, cfg.sampling.clip.then(|| ck.header.bounds.clone()));
    let mut samples = Vec::with_capacity(count);
    let (mut max_cog, mut fallbacks, mut symmetric) = (0.0f64, 0usize, true);
    for (k, result) in sample_batch(&ck.model, &ck.schedule, &transitions, &sizes, &options, cfg.seed)
        .into_iter()
        .enumerate()
    {
        let (m, trace) = result.map_err(|e| AppError::new(EXIT_NUMERIC, format!("sample {k}: {e}")))?;
        max_cog = max_cog.max(trace.max_cog);
        fallbacks += trace.fallback_warnings;
        symmetric &= trace.edges_symmetric;
        samples.push(m);
    }
    if fallbacks > 0 {
        warn!("{fallbacks} reverse edge steps fell back to the predicted distribution");
    }
    create_out(&cfg.out)?;
    let out = cfg.out.join("samples.jsonl");
    write_dataset(&out, &samples, &AtomTable::default()).map_err(|e| AppError::new(EXIT_CONFIG, e.to_string()))?;
    println!(
        "wrote {count} molecules to {} (max center drift {max_cog:.2e}, symmetric bonds: {symmetric})",
        out.display()
    );
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<(), AppError> {
    let path = cfg.samples_path();
    let table = AtomTable::default();
    let samples = read_dataset(&path, &table)
        .map_err(|e| AppError::new(EXIT_DATA, format!("cannot read samples {}: {e}", path.display())))?;
    let report = evaluate(&samples, &table);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    create_out(&cfg.out)?;
    write_file(&cfg.out.join("report.json"), &json)?;
    write_file(&cfg.out.join("flags.csv"), &report.flags_csv())?;
    println!("{json}");
    Ok(())
}

pub fn cmd_verify(cfg: &RunConfig, suites: &[Suite]) -> Result<(), AppError> {
    let suites = if suites.is_empty() { &Suite::ALL[..] } else { suites };
    let report = verify::run(suites, cfg.seed);
    for check in &report.checks {
        println!("{check}");
    }
    create_out(&cfg.out)?;
    write_file(
        &cfg.out.join("verify.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    if report.passed() {
        println!("all {} checks passed", report.checks.len());
        Ok(())
    } else {
        Err(AppError::new(
            EXIT_VERIFY,
            format!("{} of {} checks failed", report.failures(), report.checks.len()),
        ))
    }
}
