//! Experiment configs, runners that write CSV and PGM artifacts, and the
//! `summarize` report that re-reads those artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deltamin::{
    assumption_diagnostics, delta_min, ga_optimize, optimal_complexity, sweep, sweep_csv, AccuracyMeasure,
    GaConfig, GaPhase, SweepConfig, SweepResult, SweepRow,
};
use crate::error::{Error, Result};
use crate::gan::{average_records, gan_trials, records_csv, GanConfig, GanRun};
use crate::mlp::{Mlp, OutputActivation};
use crate::numerics::{mean, Rng};
use crate::oracles::{reports_csv, run_oracle_checks, OracleConfig};
use crate::processes::{gen_quadratic, ProcessKind, ProcessSpec};
use crate::ridgegrad::{fig4_experiment, rg_experiment, Fig4Config, RgExperimentConfig};
use crate::trainer::{train, TrainConfig, TrainHistory};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const SUMMARY: &str = "summary.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    Fig1,
    Gan,
    Deltamin,
    Ga,
    Rg,
    OracleChecks,
}

impl ExperimentId {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Fig1 => "fig1",
            ExperimentId::Gan => "gan",
            ExperimentId::Deltamin => "deltamin",
            ExperimentId::Ga => "ga",
            ExperimentId::Rg => "rg",
            ExperimentId::OracleChecks => "oracle-checks",
        }
    }

    /// Name of the config section holding this experiment's parameters.
    fn section(self) -> &'static str {
        match self {
            ExperimentId::OracleChecks => "oracle_checks",
            other => other.name(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub output_dir: PathBuf,
}

/// Quadratic-process comparison of conventional and GI training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig1Config {
    pub sizes: Vec<usize>,
    pub seeds: usize,
    pub hidden: usize,
    pub test_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub alpha: f64,
    /// Leading epochs over which the parameter delta is averaged.
    pub delta_window: usize,
}

impl Default for Fig1Config {
    fn default() -> Self {
        Fig1Config {
            sizes: vec![250, 1000],
            seeds: 5,
            hidden: 32,
            test_size: 1000,
            epochs: 150,
            batch_size: 10,
            lr: 0.003,
            alpha: 0.5,
            delta_window: 50,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RgSection {
    pub fig4: Fig4Config,
    pub sweep: RgExperimentConfig,
}

/// Whole config file: a required `[run]` table plus optional parameter
/// tables, one per experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    #[serde(default)]
    pub fig1: Fig1Config,
    #[serde(default)]
    pub gan: GanConfig,
    #[serde(default)]
    pub deltamin: SweepConfig,
    #[serde(default)]
    pub ga: GaConfig,
    #[serde(default)]
    pub rg: RgSection,
    #[serde(default)]
    pub oracle_checks: OracleConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The `[run]` table and the active experiment's table with every
    /// default filled in.
    pub fn resolved_toml(&self) -> Result<String> {
        let full = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = toml::Table::new();
        for key in ["run", self.run.experiment.section()] {
            if let Some(v) = full.get(key) {
                out.insert(key.to_string(), v.clone());
            }
        }
        toml::to_string(&out).map_err(|e| Error::Config(e.to_string()))
    }
}

/// One scheme at one training size, averaged over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct Fig1Arm {
    pub size: usize,
    pub use_gi: bool,
    pub history: TrainHistory,
    pub final_test_rmse: f64,
    pub early_param_delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fig1Result {
    pub arms: Vec<Fig1Arm>,
}

impl Fig1Result {
    pub fn arm(&self, size: usize, use_gi: bool) -> Option<&Fig1Arm> {
        self.arms.iter().find(|a| a.size == size && a.use_gi == use_gi)
    }

    /// Conventional over GI final test RMSE.
    pub fn improvement_ratio(&self, size: usize) -> Option<f64> {
        Some(self.arm(size, false)?.final_test_rmse / self.arm(size, true)?.final_test_rmse)
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("size,scheme,final_test_rmse,early_param_delta\n");
        for a in &self.arms {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                a.size,
                scheme(a.use_gi),
                a.final_test_rmse,
                a.early_param_delta
            );
        }
        s
    }
}

fn scheme(use_gi: bool) -> &'static str {
    if use_gi {
        "gi"
    } else {
        "conventional"
    }
}

/// Paired conventional and GI training on the noisy quadratic, scored on
/// noiseless test targets. Pairs share data, initial weights and batch order.
pub fn fig1_experiment(cfg: &Fig1Config, seed: u64) -> Result<Fig1Result> {
    if cfg.sizes.is_empty() || cfg.seeds == 0 || cfg.hidden == 0 || cfg.test_size == 0 {
        return Err(Error::Config("fig1 sizes, seeds, hidden and test_size must be nonempty".into()));
    }
    if cfg.delta_window == 0 || cfg.delta_window > cfg.epochs {
        return Err(Error::Config(format!(
            "fig1.delta_window must lie in 1..={}, got {}",
            cfg.epochs, cfg.delta_window
        )));
    }
    let spec = ProcessSpec::new(ProcessKind::Quadratic);
    let jobs: Vec<(usize, usize)> = cfg
        .sizes
        .iter()
        .flat_map(|&n| (0..cfg.seeds).map(move |k| (n, k)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(n, k)| {
            let trial_seed = Rng::derive(seed, k as u64).next_u64();
            let mut data_rng = Rng::derive(trial_seed, 1);
            let train_set = gen_quadratic(n, &mut data_rng, &spec)?;
            let test_set = gen_quadratic(cfg.test_size, &mut data_rng, &spec.noiseless())?;
            let net = Mlp::init(&[1, cfg.hidden, 1], OutputActivation::Identity, &mut Rng::derive(trial_seed, 2))?;
            let mut pair = Vec::with_capacity(2);
            for use_gi in [false, true] {
                let tc = TrainConfig {
                    epochs: cfg.epochs,
                    batch_size: cfg.batch_size,
                    lr: cfg.lr,
                    alpha: cfg.alpha,
                    use_gi,
                    seed: trial_seed,
                    train_size: n,
                    test_size: cfg.test_size,
                };
                pair.push(train(&net, &train_set, &test_set, &tc)?.1);
            }
            Ok(pair)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut arms = Vec::new();
    for &n in &cfg.sizes {
        for (slot, use_gi) in [false, true].into_iter().enumerate() {
            let histories: Vec<TrainHistory> = jobs
                .iter()
                .zip(&runs)
                .filter(|((size, _), _)| *size == n)
                .map(|(_, pair)| pair[slot].clone())
                .collect();
            let finals: Vec<f64> = histories
                .iter()
                .map(|h| h.last().map_or(f64::NAN, |r| r.test_rmse))
                .collect();
            let history = TrainHistory::average(&histories)?;
            let early: Vec<f64> = history.records[..cfg.delta_window]
                .iter()
                .map(|r| r.param_delta)
                .collect();
            arms.push(Fig1Arm {
                size: n,
                use_gi,
                history,
                final_test_rmse: mean(&finals),
                early_param_delta: mean(&early),
            });
        }
    }
    Ok(Fig1Result { arms })
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn gan_summary_csv(source: &str, conv: &[&GanRun], gi: &[&GanRun], window: usize) -> String {
    let mut s = String::from(
        "scheme,data,runs,final_rolling_mean,mean_acc_delta,kl_initial_mean,kl_initial_std,kl_final_mean,kl_final_std\n",
    );
    for (name, runs) in [("conventional", conv), ("gi", gi)] {
        let avg = average_records(runs, window);
        let final_roll = avg.last().map_or(f64::NAN, |r| r.rolling_mean);
        let mean_delta = mean(&avg.iter().map(|r| r.acc_delta).collect::<Vec<_>>());
        let pick = |f: fn(&GanRun) -> f64| mean(&runs.iter().map(|r| f(r)).collect::<Vec<_>>());
        let _ = writeln!(
            s,
            "{name},{source},{},{final_roll},{mean_delta},{},{},{},{}",
            runs.len(),
            pick(|r| r.kl_initial.0),
            pick(|r| r.kl_initial.1),
            pick(|r| r.kl_final.0),
            pick(|r| r.kl_final.1),
        );
    }
    s
}

fn deltamin_bounds_csv(results: &[SweepResult]) -> Result<String> {
    let mut s = String::from(
        "size,optimal_complexity,c_upper,delta_min,bound_holds,monotone_slope,gi_better_below_optimum,gi_slope_flatter_below_optimum\n",
    );
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in results {
        let c_star = optimal_complexity(r)?;
        let (c_up, d) = delta_min(r)?;
        let a = assumption_diagnostics(r)?;
        let _ = writeln!(
            s,
            "{},{c_star},{c_up},{d},{},{},{},{}",
            r.train_size,
            c_star <= c_up,
            opt(a.monotone_slope),
            opt(a.gi_better_below_optimum),
            opt(a.gi_slope_flatter_below_optimum)
        );
    }
    Ok(s)
}

/// Runs the configured experiment, writing the resolved config, artifacts
/// and `summary.txt` into the output directory. Returns the summary text.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<String> {
    let dir = &cfg.run.output_dir;
    fs::create_dir_all(dir)?;
    write(dir, RESOLVED_CONFIG, cfg.resolved_toml()?)?;
    let seed = cfg.run.seed;
    match cfg.run.experiment {
        ExperimentId::Fig1 => {
            let res = fig1_experiment(&cfg.fig1, seed)?;
            for a in &res.arms {
                write(dir, &format!("fig1_n{}_{}.csv", a.size, scheme(a.use_gi)), a.history.to_csv())?;
            }
            write(dir, "fig1_summary.csv", res.summary_csv())?;
        }
        ExperimentId::Gan => {
            let g = &cfg.gan;
            let (data, source) = g.load_data(seed)?;
            let seeds: Vec<u64> = (0..g.trials as u64).map(|k| Rng::derive(seed, k).next_u64()).collect();
            let pairs = gan_trials(g, &seeds, &data)?;
            let conv: Vec<&GanRun> = pairs.iter().map(|p| &p.conventional).collect();
            let gi: Vec<&GanRun> = pairs.iter().map(|p| &p.gradient).collect();
            for (name, runs) in [("conventional", &conv), ("gi", &gi)] {
                let sub = dir.join(name);
                fs::create_dir_all(&sub)?;
                write(&sub, "gan_metrics.csv", records_csv(&average_records(runs, g.rolling_window)))?;
                write(&sub, "samples_initial.pgm", runs[0].initial_samples.to_pgm_grid(4)?)?;
                write(&sub, "samples_final.pgm", runs[0].final_samples.to_pgm_grid(4)?)?;
            }
            write(dir, "gan_summary.csv", gan_summary_csv(source, &conv, &gi, g.rolling_window))?;
        }
        ExperimentId::Deltamin => {
            let results = sweep(&cfg.deltamin, seed)?;
            write(dir, "deltamin_sweep.csv", sweep_csv(&results))?;
            write(dir, "deltamin_bounds.csv", deltamin_bounds_csv(&results)?)?;
        }
        ExperimentId::Ga => {
            let out = ga_optimize(&cfg.ga, seed)?;
            write(dir, "ga_audit.jsonl", out.audit_jsonl())?;
            let opt = |v: Option<String>| v.unwrap_or_default();
            write(
                dir,
                "ga_summary.csv",
                format!(
                    "best_complexity,best_lr,best_fitness,c_upper,delta_min,training_invocations,pruned\n{},{},{},{},{},{},{}\n",
                    out.best.complexity,
                    out.best_lr,
                    out.best_fitness,
                    opt(out.c_upper.map(|c| c.to_string())),
                    opt(out.delta.map(|d| d.to_string())),
                    out.training_invocations,
                    out.pruned_count()
                ),
            )?;
        }
        ExperimentId::Rg => {
            let f4 = fig4_experiment(&cfg.rg.fig4, seed)?;
            write(dir, "fig4_predictions.csv", f4.predictions_csv())?;
            write(
                dir,
                "fig4_summary.csv",
                format!(
                    "rmse_ridge,rmse_rg,output_std,grad_rmse_ridge,grad_rmse_grad\n{},{},{},{},{}\n",
                    f4.rmse_ridge, f4.rmse_rg, f4.output_std, f4.grad_rmse_ridge, f4.grad_rmse_grad
                ),
            )?;
            let rg = rg_experiment(&cfg.rg.sweep, seed)?;
            write(dir, "rg_results.csv", rg.to_csv())?;
        }
        ExperimentId::OracleChecks => {
            let reports = run_oracle_checks(&cfg.oracle_checks, seed)?;
            write(dir, "oracle_checks.csv", reports_csv(&reports))?;
        }
    }
    let summary = summarize(dir)?;
    write(dir, SUMMARY, &summary)?;
    Ok(summary)
}

/// Rows of a comma-separated file keyed by the header names.
fn read_table(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{} is empty", path.display())))?
        .split(',')
        .collect();
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            if cells.len() != header.len() {
                return Err(Error::Parse(format!("ragged row in {}: {l}", path.display())));
            }
            Ok(header.iter().map(|h| h.to_string()).zip(cells.iter().map(|c| c.to_string())).collect())
        })
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    row.get(key)
        .ok_or_else(|| Error::Parse(format!("missing column {key}")))?
        .parse()
        .map_err(|e| Error::Parse(format!("column {key}: {e}")))
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

/// Headline comparisons for every artifact family present in `dir`.
pub fn summarize(dir: &Path) -> Result<String> {
    let mut out = String::new();
    let mut found = false;

    let p = dir.join("fig1_summary.csv");
    if p.is_file() {
        found = true;
        let rows = read_table(&p)?;
        let mut by: BTreeMap<(usize, String), (f64, f64)> = BTreeMap::new();
        out.push_str("quadratic process, conventional vs GI\n");
        for r in &rows {
            let size = num(r, "size")? as usize;
            let (rmse, delta) = (num(r, "final_test_rmse")?, num(r, "early_param_delta")?);
            let _ = writeln!(out, "  N={size:<5} {:<12} test RMSE {rmse:.4}  early param delta {delta:.5}", r["scheme"]);
            by.insert((size, r["scheme"].clone()), (rmse, delta));
        }
        let sizes: Vec<usize> = by.keys().map(|k| k.0).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let get = |n: usize, s: &str| by.get(&(n, s.to_string())).copied();
        if let (Some(&small), Some(&large)) = (sizes.first(), sizes.last()) {
            if let (Some(cs), Some(gs), Some(cl), Some(gl)) =
                (get(small, "conventional"), get(small, "gi"), get(large, "conventional"), get(large, "gi"))
            {
                let (rs, rl) = (cs.0 / gs.0, cl.0 / gl.0);
                let _ = writeln!(out, "  GI RMSE <= conventional at N={small}: {}", verdict(gs.0 <= cs.0));
                let _ = writeln!(
                    out,
                    "  improvement ratio N={small} {rs:.3} > N={large} {rl:.3}: {}",
                    verdict(rs > rl)
                );
                let _ = writeln!(
                    out,
                    "  early param delta GI {:.5} >= conventional {:.5} at N={small}: {}",
                    gs.1,
                    cs.1,
                    verdict(gs.1 >= cs.1)
                );
            }
        }
    }

    let p = dir.join("fig4_summary.csv");
    if p.is_file() {
        found = true;
        let rows = read_table(&p)?;
        let r = rows.first().ok_or_else(|| Error::Parse("fig4_summary.csv has no rows".into()))?;
        let (ridge, rg, sd) = (num(r, "rmse_ridge")?, num(r, "rmse_rg")?, num(r, "output_std")?);
        let (gr, gg) = (num(r, "grad_rmse_ridge")?, num(r, "grad_rmse_grad")?);
        out.push_str("ridge vs ridge-gradients, sine task (12 points, 7 RBFs)\n");
        let _ = writeln!(out, "  ridge RMSE {ridge:.4} (0.35 +/- 0.05): {}", verdict(within(ridge, 0.35, 0.05)));
        let _ = writeln!(out, "  RG RMSE    {rg:.4} (0.31 +/- 0.05): {}", verdict(within(rg, 0.31, 0.05)));
        let _ = writeln!(out, "  output std {sd:.4} (0.69 +/- 0.05): {}", verdict(within(sd, 0.69, 0.05)));
        let _ = writeln!(out, "  gradient RMSE beta_grad {gg:.4} < beta_ridge {gr:.4}: {}", verdict(gg < gr));
        let _ = writeln!(
            out,
            "  gradient RMSE values (0.37 and 0.40 +/- 0.1): {}",
            verdict(within(gg, 0.37, 0.1) && within(gr, 0.40, 0.1))
        );
    }

    let p = dir.join("rg_results.csv");
    if p.is_file() {
        found = true;
        let rows = read_table(&p)?;
        let mut per: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in &rows {
            per.entry(num(r, "size")? as usize).or_default().push(num(r, "pct_diff")?);
        }
        out.push_str("ridge-gradients over training sizes (pct RMSE improvement over ridge)\n");
        for (size, v) in &per {
            let _ = writeln!(out, "  N={size:<4} {:+.2}%", mean(v));
        }
        let all: Vec<f64> = per.values().flatten().copied().collect();
        let m = mean(&all);
        let _ = writeln!(out, "  mean {m:+.2}% > 0: {}", verdict(m > 0.0));
    }

    let p = dir.join("deltamin_sweep.csv");
    if p.is_file() {
        found = true;
        let rows = read_table(&p)?;
        let mut per: BTreeMap<usize, Vec<SweepRow>> = BTreeMap::new();
        for r in &rows {
            per.entry(num(r, "size")? as usize).or_default().push(SweepRow {
                complexity: num(r, "complexity")? as usize,
                a_conv: num(r, "a_conv")?,
                a_gi: num(r, "a_gi")?,
            });
        }
        out.push_str("delta-min bound (size, optimum, upper bound, holds)\n");
        let mut all = true;
        for (size, rows) in per {
            let res = SweepResult {
                process: ProcessKind::Cosine2d,
                train_size: size,
                seeds: 1,
                measure: AccuracyMeasure::Rmse,
                rows,
            };
            let c_star = optimal_complexity(&res)?;
            let (c_up, _) = delta_min(&res)?;
            all &= c_star <= c_up;
            let _ = writeln!(out, "  N={size:<4} {c_star:>4} {c_up:>4}  {}", verdict(c_star <= c_up));
        }
        let _ = writeln!(out, "  bound holds at every size: {}", verdict(all));
    }

    let p = dir.join("ga_summary.csv");
    if p.is_file() {
        found = true;
        let rows = read_table(&p)?;
        let r = rows.first().ok_or_else(|| Error::Parse("ga_summary.csv has no rows".into()))?;
        out.push_str("genetic search\n");
        let _ = writeln!(
            out,
            "  best width {} lr {} test RMSE {:.4}; {} training runs, {} candidates pruned",
            r["best_complexity"], r["best_lr"], num(r, "best_fitness")?, r["training_invocations"], r["pruned"]
        );
        let audit = dir.join("ga_audit.jsonl");
        if let (Ok(c_up), true) = (r["c_upper"].parse::<usize>(), audit.is_file()) {
            let text = fs::read_to_string(audit)?;
            let mut over = 0;
            for line in text.lines() {
                let e: crate::deltamin::AuditEntry =
                    serde_json::from_str(line).map_err(|e| Error::Parse(e.to_string()))?;
                over += usize::from(e.phase == GaPhase::Search && e.trained && e.complexity > c_up);
            }
            let _ = writeln!(out, "  no trained candidate wider than c_upper={c_up}: {}", verdict(over == 0));
        }
    }

    let p = dir.join("gan_summary.csv");
    if p.is_file() {
        found = true;
        let rows = read_table(&p)?;
        out.push_str("gradient-trained GAN\n");
        for r in &rows {
            let roll = num(r, "final_rolling_mean")?;
            let (k0, k1) = (num(r, "kl_initial_mean")?, num(r, "kl_final_mean")?);
            let _ = writeln!(
                out,
                "  {:<12} ({} data, {} runs) rolling accuracy delta {roll:+.4} < 0: {}; KL {k0:.3} -> {k1:.3} decreases: {}",
                r["scheme"],
                r["data"],
                r["runs"],
                verdict(roll < 0.0),
                verdict(k1 < k0)
            );
        }
    }

    let p = dir.join("oracle_checks.csv");
    if p.is_file() {
        found = true;
        let rows = read_table(&p)?;
        out.push_str("oracle checks\n");
        for r in &rows {
            let (t, ok) = (num(r, "trials")?, num(r, "passed")?);
            let _ = writeln!(
                out,
                "  {:<44} {ok:>5}/{t:<5} max err {:>10} tol {:>7}: {}",
                r["check"],
                r["max_error"],
                r["tolerance"],
                verdict(ok == t)
            );
        }
    }

    if !found {
        return Err(Error::MissingArtifacts {
            dir: dir.to_path_buf(),
            what: "no experiment CSVs found".into(),
        });
    }
    Ok(out)
}

/// Process exit status for an error: 1 for config and input problems,
/// 2 for numerical failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Parse(_)
        | Error::Io(_)
        | Error::MissingArtifacts { .. }
        | Error::BadMagic(_)
        | Error::TruncatedFile(_) => 1,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(experiment: &str, dir: &Path) -> String {
        format!(
            "[run]\nexperiment = \"{experiment}\"\nseed = 3\noutput_dir = \"{}\"\n",
            dir.display()
        )
    }

    #[test]
    fn missing_key_is_named() {
        let err = ExperimentConfig::parse("[run]\nexperiment = \"rg\"\noutput_dir = \"x\"\n").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("seed")), "{err}");
        assert_eq!(exit_code(&err), 1);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = Path::new("out");
        let text = base("rg", dir) + "[rg.fig4]\nsample = 3\n";
        assert!(matches!(ExperimentConfig::parse(&text), Err(Error::Config(_))));
        let text = base("rg", dir) + "[extra]\nx = 1\n";
        assert!(ExperimentConfig::parse(&text).is_err());
        let text = base("nope", dir);
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn resolved_config_echoes_defaults_and_round_trips() {
        let dir = Path::new("out");
        let cfg = ExperimentConfig::parse(&(base("deltamin", dir) + "[deltamin]\nseeds = 2\n")).unwrap();
        let echo = cfg.resolved_toml().unwrap();
        assert!(echo.contains("seeds = 2"));
        assert!(echo.contains("complexities = ["));
        assert!(echo.contains("epochs = 200"));
        assert!(!echo.contains("[gan]"));
        let again = ExperimentConfig::parse(&echo).unwrap();
        assert_eq!(again.deltamin, cfg.deltamin);
        assert_eq!(again.run, cfg.run);
    }

    #[test]
    fn oracle_section_name() {
        let text = base("oracle-checks", Path::new("o")) + "[oracle_checks]\ngarch_trials = 5\n";
        let cfg = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(cfg.oracle_checks.garch_trials, 5);
        assert!(cfg.resolved_toml().unwrap().contains("[oracle_checks]"));
    }

    #[test]
    fn summarize_empty_dir_is_missing_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let err = summarize(dir.path()).unwrap_err();
        assert!(matches!(err, Error::MissingArtifacts { .. }));
        assert_eq!(exit_code(&err), 1);
    }

    #[test]
    fn small_fig1_run() {
        let cfg = Fig1Config {
            sizes: vec![20, 40],
            seeds: 2,
            hidden: 4,
            test_size: 30,
            epochs: 6,
            delta_window: 3,
            ..Fig1Config::default()
        };
        let res = fig1_experiment(&cfg, 1).unwrap();
        assert_eq!(res.arms.len(), 4);
        assert!(res.improvement_ratio(20).unwrap() > 0.0);
        assert_eq!(res, fig1_experiment(&cfg, 1).unwrap());
        let bad = Fig1Config {
            delta_window: 7,
            ..cfg
        };
        assert!(matches!(fig1_experiment(&bad, 1), Err(Error::Config(_))));
    }

    #[test]
    fn deltamin_summary_from_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("deltamin_sweep.csv"),
            "size,complexity,a_conv,a_gi,abs_delta\n50,4,0.5,0.3,0.2\n50,8,0.3,0.25,0.05\n50,12,0.4,0.3,0.1\n",
        )
        .unwrap();
        let s = summarize(dir.path()).unwrap();
        assert!(s.contains("N=50      8    8  PASS"), "{s}");
    }
}
