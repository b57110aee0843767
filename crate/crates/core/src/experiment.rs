//! Multi-seed experiment orchestration: spec loading, per-seed runs,
//! aggregation over env-step bins and plot-data emission.
//!
//! Files written by a suite labelled `L` into the output directory:
//!
//! - `L_seed{s}.csv`: per-episode metrics of seed `s`
//! - `L_seed{s}_ibm.csv`: per-round belief-module loss terms of seed `s`
//! - `L_aggregate.toml`: the [`AggregateReport`]
//! - `L_curve.dat`: `x mean std` rows, whitespace separated
//!
//! `emit_plotdata` with [`PlotKind::Bars`] writes `bars.dat` with
//! `label mean std` rows.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::Ablation;
use crate::envs::{Difficulty, Env, EnvConfig, EnvKind};
use crate::ibm::{write_round_csv, IbmConfig};
use crate::nn::ParamStore;
use crate::trainer::{
    build_models, read_metrics_csv, run_episode, train, write_metrics_csv, Actions, EpisodeMetrics, TrainConfig,
    TrainError, TrainOptions,
};
use crate::trajectory::StepRecord;

/// Environment steps per learning-curve bin.
pub const BIN_STEPS: usize = 1000;
/// Fraction of trailing episodes averaged into a seed's final return.
pub const FINAL_FRACTION: f64 = 0.1;
pub const ALLOWED_BITS: [usize; 3] = [32, 64, 128];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config key `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("at most one ablation flag may be set, found {0:?}")]
    ConflictingAblations(Vec<&'static str>),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: line {line}: {reason}")]
    Csv { path: PathBuf, line: usize, reason: String },
    #[error("no completed seeds for `{0}`")]
    NoCompletedSeeds(String),
    #[error("no reports to plot")]
    NoReports,
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ExperimentError {
    /// Whether the error comes from the configuration rather than a run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            ExperimentError::Parse(_)
                | ExperimentError::Invalid { .. }
                | ExperimentError::ConflictingAblations(_)
                | ExperimentError::Train(TrainError::Config(_))
        )
    }
}

/// Everything one suite needs. Unset keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub env: String,
    pub difficulty: String,
    pub message_bits: usize,
    pub no_comm: bool,
    pub no_ibm: bool,
    pub no_hidden: bool,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub max_env_steps: Option<usize>,
    pub ibm_interval: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub grad_clip: f64,
    pub normalize_advantages: bool,
    pub hidden: usize,
    pub ibm: IbmConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            env: "predator_prey".into(),
            difficulty: "easy".into(),
            message_bits: 128,
            no_comm: false,
            no_ibm: false,
            no_hidden: false,
            seeds: (0..5).collect(),
            episodes: t.episodes,
            max_env_steps: t.max_env_steps,
            ibm_interval: t.ibm_interval,
            gamma: t.gamma,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            entropy_coef: t.entropy_coef,
            value_coef: t.value_coef,
            grad_clip: t.grad_clip,
            normalize_advantages: t.normalize_advantages,
            hidden: t.hidden,
            ibm: t.ibm,
        }
    }
}

/// Resolves `"kind/difficulty"`, e.g. `"traffic_junction/medium"`.
pub fn resolve_preset(name: &str) -> Result<EnvConfig, ExperimentError> {
    let (kind, difficulty) = name.split_once('/').ok_or_else(|| ExperimentError::Invalid {
        key: "env",
        reason: format!("preset `{name}` is not of the form kind/difficulty"),
    })?;
    let kind: EnvKind = kind.parse().map_err(|e| ExperimentError::Invalid {
        key: "env",
        reason: format!("{e}"),
    })?;
    let difficulty: Difficulty = difficulty.parse().map_err(|e| ExperimentError::Invalid {
        key: "difficulty",
        reason: format!("{e}"),
    })?;
    Ok(EnvConfig::preset(kind, difficulty))
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn preset_name(&self) -> String {
        format!("{}/{}", self.env, self.difficulty)
    }

    pub fn env_config(&self) -> Result<EnvConfig, ExperimentError> {
        resolve_preset(&self.preset_name())
    }

    pub fn ablation(&self) -> Result<Ablation, ExperimentError> {
        let set: Vec<&'static str> = [
            ("no_comm", self.no_comm),
            ("no_ibm", self.no_ibm),
            ("no_hidden", self.no_hidden),
        ]
        .into_iter()
        .filter(|(_, on)| *on)
        .map(|(k, _)| k)
        .collect();
        match set.as_slice() {
            [] => Ok(Ablation::Full),
            ["no_comm"] => Ok(Ablation::NoComm),
            ["no_ibm"] => Ok(Ablation::NoIbm),
            ["no_hidden"] => Ok(Ablation::NoHidden),
            _ => Err(ExperimentError::ConflictingAblations(set)),
        }
    }

    /// Clears every ablation flag, then sets the one matching `ablation`.
    pub fn set_ablation(&mut self, ablation: Ablation) {
        self.no_comm = ablation == Ablation::NoComm;
        self.no_ibm = ablation == Ablation::NoIbm;
        self.no_hidden = ablation == Ablation::NoHidden;
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.env_config()?;
        self.ablation()?;
        if !ALLOWED_BITS.contains(&self.message_bits) {
            return Err(ExperimentError::Invalid {
                key: "message_bits",
                reason: format!("{} is not one of {ALLOWED_BITS:?}", self.message_bits),
            });
        }
        if self.seeds.is_empty() {
            return Err(ExperimentError::Invalid {
                key: "seeds",
                reason: "at least one seed is required".into(),
            });
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(ExperimentError::Invalid {
                key: "seeds",
                reason: "seeds must be distinct".into(),
            });
        }
        self.train_config(self.seeds[0])?.validate()?;
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig, ExperimentError> {
        Ok(TrainConfig {
            episodes: self.episodes,
            max_env_steps: self.max_env_steps,
            ibm_interval: self.ibm_interval,
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            entropy_coef: self.entropy_coef,
            value_coef: self.value_coef,
            grad_clip: self.grad_clip,
            normalize_advantages: self.normalize_advantages,
            hidden: self.hidden,
            message_width: self.message_bits,
            ablation: self.ablation()?,
            ibm: self.ibm.clone(),
            seed,
        })
    }

    /// Default file label: the ablation arm plus the message width.
    pub fn label(&self) -> String {
        match self.ablation() {
            Ok(a) => format!("{}_bits{}", a.as_str(), self.message_bits),
            Err(_) => "invalid".into(),
        }
    }
}

/// Cross-seed mean and population standard deviation at one curve point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Upper edge of the env-step bin.
    pub x: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub label: String,
    pub preset: String,
    pub seeds: Vec<u64>,
    pub completed_seeds: Vec<u64>,
    /// Seeds whose run faulted or whose CSV is absent.
    pub missing_seeds: Vec<u64>,
    /// Mean normalized return over each completed seed's final episodes, in
    /// `completed_seeds` order.
    pub final_returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub bin_steps: usize,
    pub curve: Vec<CurvePoint>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean normalized return over the last `FINAL_FRACTION` of episodes (at least one).
pub fn final_return(rows: &[EpisodeMetrics]) -> f64 {
    tail_mean(rows, FINAL_FRACTION)
}

pub fn tail_mean(rows: &[EpisodeMetrics], fraction: f64) -> f64 {
    let k = ((rows.len() as f64 * fraction).ceil() as usize).clamp(1, rows.len().max(1));
    let tail = &rows[rows.len() - k..];
    tail.iter().map(|r| r.normalized_return).sum::<f64>() / k as f64
}

pub fn head_mean(rows: &[EpisodeMetrics], fraction: f64) -> f64 {
    let k = ((rows.len() as f64 * fraction).ceil() as usize).clamp(1, rows.len().max(1));
    rows[..k].iter().map(|r| r.normalized_return).sum::<f64>() / k as f64
}

/// Mean normalized return of the episodes ending in each env-step bin; bin
/// `b` covers `(b * bin, (b + 1) * bin]`. Bins with no finished episode are
/// absent from the map.
pub fn binned_curve(rows: &[EpisodeMetrics], bin: usize) -> Vec<Option<f64>> {
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for r in rows {
        let b = (r.env_steps.max(1) - 1) / bin;
        if sums.len() <= b {
            sums.resize(b + 1, (0.0, 0));
        }
        sums[b].0 += r.normalized_return;
        sums[b].1 += 1;
    }
    sums.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect()
}

impl AggregateReport {
    /// `runs[i]` holds the metrics of `seeds[i]`, or `None` if it is missing.
    pub fn from_runs(
        label: &str,
        preset: &str,
        seeds: &[u64],
        runs: &[Option<Vec<EpisodeMetrics>>],
    ) -> Result<Self, ExperimentError> {
        let mut completed = Vec::new();
        let mut missing = Vec::new();
        let mut finals = Vec::new();
        let mut curves = Vec::new();
        for (&seed, run) in seeds.iter().zip(runs) {
            match run {
                Some(rows) if !rows.is_empty() => {
                    completed.push(seed);
                    finals.push(final_return(rows));
                    curves.push(binned_curve(rows, BIN_STEPS));
                }
                _ => missing.push(seed),
            }
        }
        if completed.is_empty() {
            return Err(ExperimentError::NoCompletedSeeds(label.into()));
        }
        let (mean, std) = mean_std(&finals);
        let shared = curves.iter().map(Vec::len).min().unwrap_or(0);
        let longest = curves.iter().map(Vec::len).max().unwrap_or(0);
        if shared < longest {
            log::info!("{label}: curve cut to the {shared} bins every completed seed reached (longest {longest})");
        }
        let mut curve = Vec::with_capacity(shared);
        for b in 0..shared {
            let column: Vec<f64> = curves.iter().filter_map(|c| c[b]).collect();
            if column.len() < curves.len() {
                log::info!("{label}: bin {b} skipped, not every seed finished an episode in it");
                continue;
            }
            let (m, s) = mean_std(&column);
            curve.push(CurvePoint {
                x: (b + 1) * BIN_STEPS,
                mean: m,
                std: s,
            });
        }
        Ok(Self {
            label: label.into(),
            preset: preset.into(),
            seeds: seeds.to_vec(),
            completed_seeds: completed,
            missing_seeds: missing,
            final_returns: finals,
            mean,
            std,
            bin_steps: BIN_STEPS,
            curve,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), ExperimentError> {
        let text = toml::to_string(self).expect("report serializes");
        fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ExperimentError> {
        Ok(toml::from_str(&fs::read_to_string(path)?)?)
    }

    /// First curve point reaching `threshold`, in env steps.
    pub fn steps_to_reach(&self, threshold: f64) -> Option<usize> {
        self.curve.iter().find(|p| p.mean >= threshold).map(|p| p.x)
    }
}

pub fn seed_csv_path(dir: &Path, label: &str, seed: u64) -> PathBuf {
    dir.join(format!("{label}_seed{seed}.csv"))
}

pub fn ibm_csv_path(dir: &Path, label: &str, seed: u64) -> PathBuf {
    dir.join(format!("{label}_seed{seed}_ibm.csv"))
}

pub fn aggregate_path(dir: &Path, label: &str) -> PathBuf {
    dir.join(format!("{label}_aggregate.toml"))
}

pub fn read_metrics_file(path: &Path) -> Result<Vec<EpisodeMetrics>, ExperimentError> {
    read_metrics_csv(BufReader::new(File::open(path)?)).map_err(|(line, reason)| ExperimentError::Csv {
        path: path.to_path_buf(),
        line,
        reason,
    })
}

/// Trains once per seed, writing each seed's CSV as it completes, then the
/// aggregate recomputed from those files. A failing seed is logged and marked
/// missing; the others still run.
pub fn run_suite(spec: &ExperimentSpec, out_dir: &Path, label: &str) -> Result<AggregateReport, ExperimentError> {
    run_suite_with(spec, out_dir, label, false)
}

/// [`run_suite`], optionally checkpointing seed `s` under `label_seed{s}/`.
pub fn run_suite_with(
    spec: &ExperimentSpec,
    out_dir: &Path,
    label: &str,
    checkpoints: bool,
) -> Result<AggregateReport, ExperimentError> {
    spec.validate()?;
    let env = spec.env_config()?;
    fs::create_dir_all(out_dir)?;
    for &seed in &spec.seeds {
        let path = seed_csv_path(out_dir, label, seed);
        if path.is_file() {
            fs::remove_file(&path)?;
        }
        let options = TrainOptions {
            checkpoint_dir: checkpoints.then(|| out_dir.join(format!("{label}_seed{seed}"))),
        };
        log::info!("{label}: seed {seed} on {}", spec.preset_name());
        let result = spec
            .train_config(seed)
            .and_then(|config| Ok(train(&env, &config, &options)?))
            .and_then(|out| {
                let mut w = BufWriter::new(File::create(&path)?);
                write_metrics_csv(&mut w, &out.metrics)?;
                w.flush()?;
                let mut w = BufWriter::new(File::create(ibm_csv_path(out_dir, label, seed))?);
                write_round_csv(&mut w, &out.ibm_rounds)?;
                w.flush()?;
                Ok(())
            });
        if let Err(e) = result {
            log::error!("{label}: seed {seed} failed: {e}");
        }
    }
    let report = aggregate_dir(out_dir, label, &spec.preset_name(), &spec.seeds)?;
    report.write(&aggregate_path(out_dir, label))?;
    Ok(report)
}

/// Rebuilds a report from the per-seed CSVs in `dir`.
pub fn aggregate_dir(dir: &Path, label: &str, preset: &str, seeds: &[u64]) -> Result<AggregateReport, ExperimentError> {
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let path = seed_csv_path(dir, label, seed);
        runs.push(if path.is_file() { Some(read_metrics_file(&path)?) } else { None });
    }
    AggregateReport::from_runs(label, preset, seeds, &runs)
}

/// Seeds with a CSV for `label` in `dir`, ascending.
pub fn discover_seeds(dir: &Path, label: &str) -> Result<Vec<u64>, ExperimentError> {
    let prefix = format!("{label}_seed");
    let mut seeds = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(s) = name.strip_prefix(&prefix).and_then(|r| r.strip_suffix(".csv")) {
            if let Ok(seed) = s.parse() {
                seeds.push(seed);
            }
        }
    }
    seeds.sort_unstable();
    Ok(seeds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Curve,
    Bars,
}

/// Writes whitespace-separated plot data into `dir`: one `label_curve.dat`
/// per report, or a single `bars.dat` sorted by descending mean.
pub fn emit_plotdata(reports: &[AggregateReport], kind: PlotKind, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    if reports.is_empty() {
        return Err(ExperimentError::NoReports);
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match kind {
        PlotKind::Curve => {
            for r in reports {
                let path = dir.join(format!("{}_curve.dat", r.label));
                let mut w = BufWriter::new(File::create(&path)?);
                writeln!(w, "# x mean std")?;
                for p in &r.curve {
                    writeln!(w, "{} {} {}", p.x, p.mean, p.std)?;
                }
                w.flush()?;
                written.push(path);
            }
        }
        PlotKind::Bars => {
            let mut bars: Vec<&AggregateReport> = reports.iter().collect();
            bars.sort_by(|a, b| b.mean.total_cmp(&a.mean));
            let path = dir.join("bars.dat");
            let mut w = BufWriter::new(File::create(&path)?);
            writeln!(w, "# label mean std")?;
            for r in bars {
                writeln!(w, "{} {} {}", r.label, r.mean, r.std)?;
            }
            w.flush()?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Runs the four ablation arms of `base` (whose own flags are ignored).
pub fn run_ablation(base: &ExperimentSpec, out_dir: &Path) -> Result<Vec<AggregateReport>, ExperimentError> {
    let mut reports = Vec::new();
    for arm in [Ablation::Full, Ablation::NoHidden, Ablation::NoIbm, Ablation::NoComm] {
        let mut spec = base.clone();
        spec.set_ablation(arm);
        reports.push(run_suite(&spec, out_dir, arm.as_str())?);
    }
    Ok(reports)
}

/// One suite per message width, labelled `bits{C}`.
pub fn run_bit_sweep(
    base: &ExperimentSpec,
    bits: &[usize],
    out_dir: &Path,
) -> Result<Vec<AggregateReport>, ExperimentError> {
    let mut reports = Vec::new();
    for &b in bits {
        let spec = ExperimentSpec {
            message_bits: b,
            ..base.clone()
        };
        reports.push(run_suite(&spec, out_dir, &format!("bits{b}"))?);
    }
    Ok(reports)
}

/// Loads `core.bin` and `ibm{j}.bin` from a checkpoint directory and plays
/// greedy episodes, returning their step records and team returns.
pub fn replay(
    spec: &ExperimentSpec,
    checkpoint: &Path,
    episodes: usize,
    seed: u64,
) -> Result<(Vec<StepRecord>, Vec<f64>), ExperimentError> {
    let env_config = spec.env_config()?;
    let config = spec.train_config(seed)?;
    let (mut core, mut ibms) = build_models(&env_config, &config);
    let load = |name: String| -> Result<ParamStore, ExperimentError> {
        let file = File::open(checkpoint.join(&name))?;
        ParamStore::load(BufReader::new(file)).map_err(|e| ExperimentError::Train(e.into()))
    };
    core.store_mut()
        .copy_values_from(&load("core.bin".into())?)
        .map_err(|e| ExperimentError::Train(e.into()))?;
    for (j, m) in ibms.iter_mut().enumerate() {
        m.store_mut()
            .copy_values_from(&load(format!("ibm{j}.bin"))?)
            .map_err(|e| ExperimentError::Train(e.into()))?;
    }
    let mut env = Env::new(env_config, seed).map_err(TrainError::from)?;
    let mut records = Vec::new();
    let mut returns = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let (r, _) = run_episode::<rand_chacha::ChaCha8Rng>(
            &mut env,
            &core,
            &ibms,
            seed.wrapping_add(ep as u64),
            Actions::Greedy,
        )?;
        records.extend(r.step_records(ep));
        returns.push(r.team_return);
    }
    Ok((records, returns))
}
