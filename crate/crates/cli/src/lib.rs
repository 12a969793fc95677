//! Subcommand implementations behind the `repfed` binary.
//!
//! Every command returns a [`CliError`] whose [`CliError::exit_code`] is the
//! process status: 2 for usage and configuration problems, 3 for failures
//! while a run is executing.
//!
//! Sweep layout:
//!
//! ```text
//! <out>/<parameter>=<value>/seed_<s>/   one run directory per pair
//! <out>/summary.csv                     one row per value
//! <out>/reputation_trend.csv            adversary vs honest means per round
//! <out>/summary.gp                      optional gnuplot script
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use repfed::adversary::NoiseKind;
use repfed::experiment::{run_experiment, ExperimentConfig};
use repfed::federation::{Cadence, Federation, Method};
use repfed::output::{mean_std, read_rows, write_rows, write_run, MetricsRow, NodeRow, CONFIG_ECHO_FILE, METRICS_FILE, NODE_REPUTATION_FILE};
use repfed::synthetic::generate_centers;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const TREND_FILE: &str = "reputation_trend.csv";
pub const PLOT_FILE: &str = "summary.gp";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_TXT: &str = "comparison.txt";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config {path}: {source}")]
    Config { path: PathBuf, source: repfed::Error },
    #[error("{0}")]
    Runtime(#[from] repfed::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 2,
            CliError::Runtime(_) | CliError::Io(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub method: Option<Method>,
    pub seed: Option<u64>,
    pub no_dp: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(m) = self.method {
            cfg.federation.method = m;
        }
        if let Some(s) = self.seed {
            cfg.generation.seed = s;
        }
        if self.no_dp {
            cfg.dp.enabled = false;
        }
    }
}

/// Reads and validates an experiment config, mapping every failure to exit 2.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let config_err = |source| CliError::Config { path: path.to_path_buf(), source };
    let mut cfg = ExperimentConfig::load(path).map_err(config_err)?;
    overrides.apply(&mut cfg);
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

/// Writes the synthetic centers and their metadata sidecar. Returns the
/// number of center files.
pub fn cmd_generate(config: &Path, out: &Path, overrides: &Overrides) -> Result<usize> {
    let cfg = load_config(config, overrides)?;
    if cfg.data_dir.is_some() {
        return Err(CliError::Usage(format!("{} reads data from data_dir; nothing to generate", config.display())));
    }
    let fed = generate_centers(&cfg.generation)?;
    fed.write_dir(out, cfg.seed())?;
    Ok(fed.centers.len())
}

pub fn cmd_run(config: &Path, out: &Path, overrides: &Overrides) -> Result<Federation> {
    let cfg = load_config(config, overrides)?;
    run_config(&cfg, out)
}

pub fn run_config(cfg: &ExperimentConfig, out: &Path) -> Result<Federation> {
    let fed = run_experiment(cfg)?;
    write_run(out, &fed, cfg)?;
    Ok(fed)
}

/// Sweep axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    EpsMax,
    Alpha,
    Lambda,
    THonest,
    UpdateFrequency,
    NoiseDistribution,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::EpsMax => "eps_max",
            SweepParameter::Alpha => "alpha",
            SweepParameter::Lambda => "lambda",
            SweepParameter::THonest => "t_honest",
            SweepParameter::UpdateFrequency => "update_frequency",
            SweepParameter::NoiseDistribution => "noise_distribution",
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}

/// One sweep: a base config, an axis and the values it takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<toml::Value>,
    /// Relative paths resolve against the sweep file's directory.
    pub base_config: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let config_err = |source| CliError::Config { path: path.to_path_buf(), source };
        let text = std::fs::read_to_string(path).map_err(|e| config_err(e.into()))?;
        let mut spec: SweepSpec =
            toml::from_str(&text).map_err(|e| config_err(repfed::Error::ConfigParse(e.to_string())))?;
        if spec.base_config.is_relative() {
            spec.base_config = path.parent().unwrap_or(Path::new(".")).join(&spec.base_config);
        }
        spec.validate().map_err(config_err)?;
        Ok(spec)
    }

    pub fn validate(&self) -> repfed::Result<()> {
        let bad = |m: String| Err(repfed::Error::InvalidConfig(m));
        if self.values.is_empty() {
            return bad("sweep values must be non-empty".into());
        }
        if self.seeds.is_empty() {
            return bad("sweep seed list must be non-empty".into());
        }
        let mut probe = ExperimentConfig::default();
        for v in &self.values {
            self.apply(&mut probe, v)?;
        }
        Ok(())
    }

    /// Sets the swept field of `cfg` to `value`.
    pub fn apply(&self, cfg: &mut ExperimentConfig, value: &toml::Value) -> repfed::Result<()> {
        let number = || {
            value
                .as_float()
                .or_else(|| value.as_integer().map(|i| i as f64))
                .ok_or_else(|| repfed::Error::InvalidConfig(format!("{} needs numeric values, got {value}", self.parameter.name())))
        };
        let count = || {
            value
                .as_integer()
                .and_then(|i| usize::try_from(i).ok())
                .ok_or_else(|| repfed::Error::InvalidConfig(format!("{} needs non-negative integers, got {value}", self.parameter.name())))
        };
        match self.parameter {
            SweepParameter::EpsMax => {
                let v = number()?;
                cfg.adversaries.iter_mut().for_each(|a| a.eps_max = v);
            }
            SweepParameter::Alpha => cfg.federation.alpha = number()?,
            SweepParameter::Lambda => cfg.federation.clustering.lambda = number()?,
            SweepParameter::THonest => {
                let v = count()?;
                cfg.adversaries.iter_mut().for_each(|a| a.t_honest = v);
            }
            SweepParameter::UpdateFrequency => {
                cfg.federation.update_frequency = match value.as_str() {
                    Some("never") => Cadence::Never,
                    Some(other) => {
                        return Err(repfed::Error::InvalidConfig(format!("update_frequency `{other}` is not an integer or \"never\"")))
                    }
                    None => Cadence::Every(count()?),
                };
            }
            SweepParameter::NoiseDistribution => {
                let name = value
                    .as_str()
                    .ok_or_else(|| repfed::Error::InvalidConfig(format!("noise_distribution needs names, got {value}")))?;
                let kind = NoiseKind::parse(name)?;
                cfg.adversaries.iter_mut().for_each(|a| a.distribution = kind);
            }
        }
        Ok(())
    }
}

/// Renders a sweep value for directory names and CSV cells.
pub fn value_label(value: &toml::Value) -> String {
    match value {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn run_dir(root: &Path, parameter: SweepParameter, value: &toml::Value, seed: u64) -> PathBuf {
    root.join(format!("{}={}", parameter.name(), value_label(value))).join(format!("seed_{seed}"))
}

/// Per-value aggregate over seeds; recomputed from the run CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub parameter: String,
    pub value: String,
    pub seeds: usize,
    pub final_c_index_mean: f64,
    pub final_c_index_sd: f64,
    pub mean_c_index_mean: f64,
    pub mean_c_index_sd: f64,
    pub final_stability_mean: f64,
    pub final_stability_sd: f64,
    pub total_messages_mean: f64,
    pub total_messages_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub value: String,
    pub seed: u64,
    pub round: usize,
    pub adversary_mean: f64,
    pub honest_mean: f64,
}

/// Final C-index, mean C over rounds 1.., final stability and total messages.
pub fn run_statistics(metrics: &[MetricsRow]) -> Result<(f64, f64, f64, f64)> {
    let last = metrics
        .last()
        .ok_or_else(|| repfed::Error::InvalidData("metrics table is empty".into()))?;
    let later: Vec<f64> = metrics.iter().filter(|m| m.round > 0).map(|m| m.global_c_index).collect();
    let mean_c = if later.is_empty() {
        last.global_c_index
    } else {
        later.iter().sum::<f64>() / later.len() as f64
    };
    Ok((last.global_c_index, mean_c, last.stability, last.cumulative_messages as f64))
}

/// Mean node score of adversarial and honest clients per round.
pub fn reputation_trend(nodes: &[NodeRow]) -> Vec<(usize, f64, f64)> {
    let mut out: Vec<(usize, f64, f64)> = Vec::new();
    let mut i = 0;
    while i < nodes.len() {
        let round = nodes[i].round;
        let (mut a, mut na, mut h, mut nh) = (0.0, 0usize, 0.0, 0usize);
        while i < nodes.len() && nodes[i].round == round {
            if nodes[i].adversarial == 1 {
                a += nodes[i].score;
                na += 1;
            } else {
                h += nodes[i].score;
                nh += 1;
            }
            i += 1;
        }
        let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
        out.push((round, mean(a, na), mean(h, nh)));
    }
    out
}

/// Builds the summary from the run directories already on disk.
pub fn summarize(root: &Path, spec: &SweepSpec) -> Result<Vec<SummaryRow>> {
    spec.values
        .iter()
        .map(|value| {
            let mut stats = Vec::with_capacity(spec.seeds.len());
            for &seed in &spec.seeds {
                let rows: Vec<MetricsRow> = read_rows(&run_dir(root, spec.parameter, value, seed).join(METRICS_FILE))?;
                stats.push(run_statistics(&rows)?);
            }
            let column = |f: fn(&(f64, f64, f64, f64)) -> f64| mean_std(&stats.iter().map(f).collect::<Vec<_>>());
            let (fc, fc_sd) = column(|s| s.0);
            let (mc, mc_sd) = column(|s| s.1);
            let (st, st_sd) = column(|s| s.2);
            let (ms, ms_sd) = column(|s| s.3);
            Ok(SummaryRow {
                parameter: spec.parameter.name().into(),
                value: value_label(value),
                seeds: spec.seeds.len(),
                final_c_index_mean: fc,
                final_c_index_sd: fc_sd,
                mean_c_index_mean: mc,
                mean_c_index_sd: mc_sd,
                final_stability_mean: st,
                final_stability_sd: st_sd,
                total_messages_mean: ms,
                total_messages_sd: ms_sd,
            })
        })
        .collect()
}

fn gnuplot_script(parameter: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key autotitle columnhead");
    let _ = writeln!(s, "set xlabel '{parameter}'");
    let _ = writeln!(s, "set terminal pngcairo size 1200,400");
    let _ = writeln!(s, "set output 'summary.png'");
    let _ = writeln!(s, "set multiplot layout 1,3");
    let _ = writeln!(s, "set ylabel 'final global C-index'");
    let _ = writeln!(s, "plot '{SUMMARY_FILE}' using 0:4:5:xticlabels(2) with yerrorlines notitle");
    let _ = writeln!(s, "set ylabel 'final stability'");
    let _ = writeln!(s, "plot '{SUMMARY_FILE}' using 0:8:9:xticlabels(2) with yerrorlines notitle");
    let _ = writeln!(s, "set ylabel 'total messages'");
    let _ = writeln!(s, "plot '{SUMMARY_FILE}' using 0:10:11:xticlabels(2) with yerrorlines notitle");
    let _ = writeln!(s, "unset multiplot");
    s
}

/// Runs every (value, seed) pair of the sweep, then writes the summary.
pub fn cmd_sweep(spec_path: &Path, out: &Path, overrides: &Overrides, plot: bool) -> Result<Vec<SummaryRow>> {
    let spec = SweepSpec::load(spec_path)?;
    let base = load_config(&spec.base_config, overrides)?;
    sweep(&spec, &base, out, plot)
}

pub fn sweep(spec: &SweepSpec, base: &ExperimentConfig, out: &Path, plot: bool) -> Result<Vec<SummaryRow>> {
    spec.validate().map_err(|source| CliError::Config { path: out.to_path_buf(), source })?;
    let mut jobs = Vec::new();
    for value in &spec.values {
        for &seed in &spec.seeds {
            let mut cfg = base.clone();
            spec.apply(&mut cfg, value)?;
            cfg.generation.seed = seed;
            cfg.validate()
                .map_err(|source| CliError::Config { path: spec.base_config.clone(), source })?;
            jobs.push((run_dir(out, spec.parameter, value, seed), cfg));
        }
    }
    jobs.par_iter().try_for_each(|(dir, cfg)| {
        log::info!("running {}", dir.display());
        run_config(cfg, dir).map(|_| ())
    })?;

    let summary = summarize(out, spec)?;
    write_rows(&out.join(SUMMARY_FILE), &summary)?;
    let mut trend = Vec::new();
    for value in &spec.values {
        for &seed in &spec.seeds {
            let nodes: Vec<NodeRow> = read_rows(&run_dir(out, spec.parameter, value, seed).join(NODE_REPUTATION_FILE))?;
            trend.extend(reputation_trend(&nodes).into_iter().map(|(round, a, h)| TrendRow {
                value: value_label(value),
                seed,
                round,
                adversary_mean: a,
                honest_mean: h,
            }));
        }
    }
    write_rows(&out.join(TREND_FILE), &trend)?;
    if plot {
        std::fs::write(out.join(PLOT_FILE), gnuplot_script(spec.parameter.name()))?;
    }
    Ok(summary)
}

/// Per-round comparison of several runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub labels: Vec<String>,
    /// `rows[r][k]` is run `k`'s global C-index at round `r + 1`.
    pub rows: Vec<Vec<f64>>,
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let width = self.labels.iter().map(String::len).max().unwrap_or(0).max(8);
        let _ = write!(s, "{:>5}", "round");
        for l in &self.labels {
            let _ = write!(s, "  {l:>width$}");
        }
        let _ = writeln!(s);
        for (r, row) in self.rows.iter().enumerate() {
            let _ = write!(s, "{:>5}", r + 1);
            for v in row {
                let _ = write!(s, "  {v:>width$.4}");
            }
            let _ = writeln!(s);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(repfed::Error::from)?;
        let mut header = vec!["round".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).map_err(repfed::Error::from)?;
        for (r, row) in self.rows.iter().enumerate() {
            let mut rec = vec![(r + 1).to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec).map_err(repfed::Error::from)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn run_label(dir: &Path) -> Result<String> {
    let echo = dir.join(CONFIG_ECHO_FILE);
    let cfg = ExperimentConfig::load(&echo).map_err(|source| CliError::Config { path: echo.clone(), source })?;
    Ok(cfg.federation.method.name().to_string())
}

/// Builds the per-round table; columns are labelled by method, falling back
/// to the directory name when two runs share a method.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<Comparison> {
    if dirs.is_empty() {
        return Err(CliError::Usage("report needs at least one run directory".into()));
    }
    let mut series = Vec::with_capacity(dirs.len());
    let mut labels = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let rows: Vec<MetricsRow> = read_rows(&dir.join(METRICS_FILE))
            .map_err(|source| CliError::Config { path: dir.join(METRICS_FILE), source })?;
        series.push(rows.into_iter().filter(|m| m.round > 0).map(|m| m.global_c_index).collect::<Vec<_>>());
        labels.push(run_label(dir)?);
    }
    let expected = series[0].len();
    let offenders: Vec<String> = dirs
        .iter()
        .zip(&series)
        .filter(|(_, s)| s.len() != expected)
        .map(|(d, s)| format!("{} ({} rounds)", d.display(), s.len()))
        .collect();
    if !offenders.is_empty() {
        return Err(CliError::Usage(format!(
            "round counts differ from {} ({expected} rounds): {}",
            dirs[0].display(),
            offenders.join(", ")
        )));
    }
    for k in 0..labels.len() {
        if labels.iter().filter(|l| **l == labels[k]).count() > 1 {
            labels[k] = dirs[k].file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| format!("run{k}"));
        }
    }
    let rows = (0..expected).map(|r| series.iter().map(|s| s[r]).collect()).collect();
    Ok(Comparison { labels, rows })
}

fn summary_text(rows: &[SummaryRow]) -> String {
    let mut s = String::new();
    let Some(first) = rows.first() else { return s };
    let _ = writeln!(
        s,
        "{:>18}  {:>17}  {:>17}  {:>19}  {:>14}",
        first.parameter, "final C", "mean C", "stability", "messages"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>18}  {:>8.4} ± {:<6.4}  {:>8.4} ± {:<6.4}  {:>9.6} ± {:<8.6}  {:>14.1}",
            r.value,
            r.final_c_index_mean,
            r.final_c_index_sd,
            r.mean_c_index_mean,
            r.mean_c_index_sd,
            r.final_stability_mean,
            r.final_stability_sd,
            r.total_messages_mean
        );
    }
    s
}

/// Text report over run directories and sweep roots. Sweep roots (holding a
/// `summary.csv`) contribute their trend table; run directories form the
/// per-round comparison.
pub fn cmd_report(dirs: &[PathBuf], out: Option<&Path>) -> Result<String> {
    let (sweeps, runs): (Vec<PathBuf>, Vec<PathBuf>) = dirs.iter().cloned().partition(|d| d.join(SUMMARY_FILE).exists());
    let mut text = String::new();
    for root in &sweeps {
        let rows: Vec<SummaryRow> = read_rows(&root.join(SUMMARY_FILE))?;
        let _ = writeln!(text, "sweep {}", root.display());
        text.push_str(&summary_text(&rows));
        let _ = writeln!(text);
    }
    if !runs.is_empty() {
        let cmp = compare_runs(&runs)?;
        let _ = writeln!(text, "global C-index per round");
        text.push_str(&cmp.to_text());
        if let Some(dir) = out {
            std::fs::create_dir_all(dir)?;
            cmp.write_csv(&dir.join(COMPARISON_CSV))?;
        }
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(COMPARISON_TXT), &text)?;
    }
    Ok(text)
}
