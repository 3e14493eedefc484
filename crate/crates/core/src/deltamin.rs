//! Complexity sweeps with and without gradient information, the delta-min
//! upper bound on useful complexity, and a genetic search that uses the bound
//! to discard oversized candidates before training them.
//!
//! Complexity `c` is the width of each hidden layer of a fixed-depth tanh
//! network.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{GiBatch, Mlp, OutputActivation};
use crate::numerics::{mean, Rng};
use crate::processes::{sample_surrogate, ProcessKind, ProcessSpec};
use crate::trainer::{fit, pearson, rmse, TrainConfig};

const TEST_STREAM: u64 = 0x7E57;
const GA_STREAM: u64 = 0x6A;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMeasure {
    /// Lower is better.
    Rmse,
    /// Higher is better.
    Pearson,
}

impl AccuracyMeasure {
    pub fn evaluate(self, pred: &[f64], truth: &[f64]) -> Result<f64> {
        match self {
            AccuracyMeasure::Rmse => rmse(pred, truth),
            AccuracyMeasure::Pearson => pearson(pred, truth),
        }
    }

    /// Maps a score so that lower always means more accurate.
    pub fn loss(self, score: f64) -> f64 {
        match self {
            AccuracyMeasure::Rmse => score,
            AccuracyMeasure::Pearson => -score,
        }
    }
}

/// Optimiser settings shared by every network in a sweep or search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Target-loss weight for the GI-trained networks.
    pub alpha: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            epochs: 200,
            batch_size: 10,
            lr: 0.05,
            alpha: 0.5,
        }
    }
}

impl FitSettings {
    fn train_config(&self, lr: f64, use_gi: bool, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr,
            alpha: self.alpha,
            use_gi,
            seed,
            ..TrainConfig::default()
        }
    }
}

/// `[d_in, c, …, c, d_out]` with `depth` hidden layers.
pub fn architecture(spec: &ProcessSpec, complexity: usize, depth: usize) -> Vec<usize> {
    let mut sizes = vec![spec.input_dim()];
    sizes.extend(std::iter::repeat_n(complexity, depth));
    sizes.push(spec.output_dim());
    sizes
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub complexity: usize,
    pub a_conv: f64,
    pub a_gi: f64,
}

impl SweepRow {
    pub fn abs_delta(&self) -> f64 {
        (self.a_gi - self.a_conv).abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub process: ProcessKind,
    pub train_size: usize,
    pub seeds: usize,
    pub measure: AccuracyMeasure,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::BadParams("sweep must record ≥ 1 seed".into()));
        }
        if self.rows.windows(2).any(|w| w[1].complexity <= w[0].complexity) {
            return Err(Error::BadParams("sweep complexities must be strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub process: ProcessSpec,
    pub sizes: Vec<usize>,
    pub complexities: Vec<usize>,
    pub seeds: usize,
    pub depth: usize,
    pub test_size: usize,
    pub measure: AccuracyMeasure,
    pub fit: FitSettings,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            process: ProcessSpec::new(ProcessKind::Cosine2d),
            sizes: vec![50, 100, 300],
            complexities: vec![4, 8, 12, 16, 24, 32, 40, 48],
            seeds: 5,
            depth: 4,
            test_size: 1000,
            measure: AccuracyMeasure::Rmse,
            fit: FitSettings::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.complexities.is_empty() {
            return Err(Error::Config("sweep sizes and complexities must be nonempty".into()));
        }
        if self.seeds == 0 || self.depth == 0 || self.test_size == 0 {
            return Err(Error::Config("seeds, depth and test_size must be ≥ 1".into()));
        }
        if self.sizes.contains(&0) || self.complexities.contains(&0) {
            return Err(Error::Config("sizes and complexities must be ≥ 1".into()));
        }
        if self.complexities.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("complexities must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Held-out surrogate data shared by every cell of a sweep.
pub fn test_set(spec: &ProcessSpec, n: usize, seed: u64) -> Result<GiBatch> {
    sample_surrogate(&spec.noiseless(), n, &mut Rng::derive(seed, TEST_STREAM))
}

fn cell_stream(size: usize, complexity: usize, k: usize) -> u64 {
    ((size as u64) << 40) ^ ((complexity as u64) << 20) ^ k as u64
}

/// Trains one network of width `complexity` and scores it on `test`.
#[allow(clippy::too_many_arguments)]
fn score_network(
    spec: &ProcessSpec,
    train: &GiBatch,
    test: &GiBatch,
    complexity: usize,
    depth: usize,
    settings: &FitSettings,
    lr: f64,
    use_gi: bool,
    stream: u64,
    seed: u64,
    measure: AccuracyMeasure,
) -> Result<f64> {
    let mut init_rng = Rng::derive(seed, stream);
    let net = Mlp::init(&architecture(spec, complexity, depth), OutputActivation::Identity, &mut init_rng)?;
    let trained = fit(&net, train, &settings.train_config(lr, use_gi, seed ^ stream))?;
    let pred = trained.forward_rows(test.inputs())?;
    measure.evaluate(pred.data(), test.targets().data())
}

/// Paired conventional and GI accuracies, averaged over `k` seeds, for each
/// size and complexity. Both members of a pair share data, initial weights
/// and minibatch order.
pub fn sweep(cfg: &SweepConfig, seed: u64) -> Result<Vec<SweepResult>> {
    sweep_with(cfg, seed, false)
}

/// With `tolerate_divergence`, a fit that blows up scores infinity instead
/// of aborting the sweep.
fn sweep_with(cfg: &SweepConfig, seed: u64, tolerate_divergence: bool) -> Result<Vec<SweepResult>> {
    cfg.validate()?;
    let test = test_set(&cfg.process, cfg.test_size, seed)?;
    let cells: Vec<(usize, usize, usize, bool)> = cfg
        .sizes
        .iter()
        .flat_map(|&s| {
            cfg.complexities.iter().flat_map(move |&c| {
                (0..cfg.seeds).flat_map(move |k| [false, true].map(|gi| (s, c, k, gi)))
            })
        })
        .collect();
    let scores = cells
        .par_iter()
        .map(|&(size, c, k, gi)| {
            let mut data_rng = Rng::derive(seed, ((size as u64) << 32) | k as u64);
            let train = sample_surrogate(&cfg.process, size, &mut data_rng)?;
            score_network(
                &cfg.process,
                &train,
                &test,
                c,
                cfg.depth,
                &cfg.fit,
                cfg.fit.lr,
                gi,
                cell_stream(size, c, k),
                seed,
                cfg.measure,
            )
            .or_else(|e| match e {
                Error::NonFinite(_) if tolerate_divergence => Ok(f64::INFINITY),
                other => Err(other),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut lookup: HashMap<(usize, usize, bool), Vec<f64>> = HashMap::new();
    for (&(s, c, _, gi), score) in cells.iter().zip(scores) {
        lookup.entry((s, c, gi)).or_default().push(score);
    }
    Ok(cfg
        .sizes
        .iter()
        .map(|&s| SweepResult {
            process: cfg.process.kind,
            train_size: s,
            seeds: cfg.seeds,
            measure: cfg.measure,
            rows: cfg
                .complexities
                .iter()
                .map(|&c| SweepRow {
                    complexity: c,
                    a_conv: mean(&lookup[&(s, c, false)]),
                    a_gi: mean(&lookup[&(s, c, true)]),
                })
                .collect(),
        })
        .collect())
}

/// `(c_upper, δ_min)`: the complexity where conventional and GI accuracies
/// are closest. Ties go to the smaller complexity.
pub fn delta_min(result: &SweepResult) -> Result<(usize, f64)> {
    if result.rows.len() < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            got: result.rows.len(),
        });
    }
    result.validate()?;
    let mut best = &result.rows[0];
    for row in &result.rows[1..] {
        if row.abs_delta() < best.abs_delta() {
            best = row;
        }
    }
    Ok((best.complexity, best.abs_delta()))
}

/// Complexity with the most accurate conventional network. Ties go to the
/// smaller complexity.
pub fn optimal_complexity(result: &SweepResult) -> Result<usize> {
    let first = result.rows.first().ok_or(Error::TooFewRows { needed: 1, got: 0 })?;
    result.validate()?;
    let loss = |r: &SweepRow| result.measure.loss(r.a_conv);
    let mut best = first;
    for row in &result.rows[1..] {
        if loss(row) < loss(best) {
            best = row;
        }
    }
    Ok(best.complexity)
}

/// Fraction of the sweep on which each assumption holds. `None` when the
/// assumption has nothing to check (too few rows below the optimum).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Consecutive conventional slopes that are non-decreasing in loss terms.
    pub monotone_slope: Option<f64>,
    /// Rows with `c ≤ c*` where the GI network is at least as accurate.
    pub gi_better_below_optimum: Option<f64>,
    /// Intervals below `c*` where the GI slope is ≥ the conventional slope in
    /// loss terms (conventional improves at least as fast).
    pub gi_slope_flatter_below_optimum: Option<f64>,
}

fn fraction(hits: impl Iterator<Item = bool>) -> Option<f64> {
    let (mut yes, mut total) = (0usize, 0usize);
    for h in hits {
        total += 1;
        yes += usize::from(h);
    }
    (total > 0).then(|| yes as f64 / total as f64)
}

pub fn assumption_diagnostics(result: &SweepResult) -> Result<AssumptionReport> {
    let c_star = optimal_complexity(result)?;
    let m = result.measure;
    let rows = &result.rows;
    let slope = |a: &SweepRow, b: &SweepRow, pick: fn(&SweepRow) -> f64| {
        (m.loss(pick(b)) - m.loss(pick(a))) / (b.complexity - a.complexity) as f64
    };
    let conv = |r: &SweepRow| r.a_conv;
    let gi = |r: &SweepRow| r.a_gi;
    let conv_slopes: Vec<f64> = rows.windows(2).map(|w| slope(&w[0], &w[1], conv)).collect();
    let below: Vec<&[SweepRow]> = rows.windows(2).filter(|w| w[1].complexity <= c_star).collect();
    Ok(AssumptionReport {
        monotone_slope: fraction(conv_slopes.windows(2).map(|s| s[1] >= s[0])),
        gi_better_below_optimum: fraction(
            rows.iter()
                .filter(|r| r.complexity <= c_star)
                .map(|r| m.loss(r.a_gi) <= m.loss(r.a_conv)),
        ),
        gi_slope_flatter_below_optimum: fraction(
            below.iter().map(|w| slope(&w[0], &w[1], gi) >= slope(&w[0], &w[1], conv)),
        ),
    })
}

pub fn sweep_csv(results: &[SweepResult]) -> String {
    let mut out = String::from("size,complexity,a_conv,a_gi,abs_delta\n");
    for r in results {
        for row in &r.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.train_size,
                row.complexity,
                row.a_conv,
                row.a_gi,
                row.abs_delta()
            )
            .expect("writing to String");
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub process: ProcessSpec,
    pub train_size: usize,
    pub test_size: usize,
    pub population: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    /// Candidate hidden-layer widths.
    pub complexities: Vec<usize>,
    /// Candidate learning rates.
    pub learning_rates: Vec<f64>,
    pub depth: usize,
    /// Epochs, batch size and GI weight; the learning rate comes from the genes
    /// (the estimation phase uses the middle learning rate).
    pub fit: FitSettings,
    pub pruning: bool,
    /// Complexities in the delta-min estimation grid.
    pub estimation_points: usize,
    pub estimation_seeds: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            process: ProcessSpec::new(ProcessKind::Cosine2d),
            train_size: 100,
            test_size: 500,
            population: 40,
            generations: 15,
            mutation_rate: 0.2,
            crossover_rate: 0.7,
            complexities: (1..=24).map(|m| 4 * m).collect(),
            learning_rates: vec![0.02, 0.05, 0.1],
            depth: 4,
            fit: FitSettings::default(),
            pruning: true,
            estimation_points: 5,
            estimation_seeds: 3,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config("population must be ≥ 2".into()));
        }
        for (name, rate) in [("mutation_rate", self.mutation_rate), ("crossover_rate", self.crossover_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {rate}")));
            }
        }
        if self.complexities.is_empty() || self.learning_rates.is_empty() {
            return Err(Error::Config("gene space must be nonempty".into()));
        }
        if self.complexities.windows(2).any(|w| w[1] <= w[0]) || self.complexities[0] == 0 {
            return Err(Error::Config("complexities must be positive and strictly increasing".into()));
        }
        if self.learning_rates.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if self.train_size == 0 || self.test_size == 0 || self.depth == 0 {
            return Err(Error::Config("train_size, test_size and depth must be ≥ 1".into()));
        }
        if self.pruning && (self.estimation_points < 2 || self.estimation_seeds == 0) {
            return Err(Error::Config("estimation needs ≥ 2 points and ≥ 1 seed".into()));
        }
        Ok(())
    }

    /// Evenly spread indices into the complexity genes, ends included.
    fn estimation_grid(&self) -> Vec<usize> {
        let n = self.complexities.len();
        let k = self.estimation_points.min(n);
        let mut grid: Vec<usize> = (0..k)
            .map(|i| self.complexities[if k == 1 { 0 } else { i * (n - 1) / (k - 1) }])
            .collect();
        grid.dedup();
        grid
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Genes {
    pub complexity: usize,
    pub lr_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaPhase {
    Estimate,
    Search,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub phase: GaPhase,
    pub generation: usize,
    pub complexity: usize,
    pub lr: f64,
    /// GI-trained network (estimation phase only).
    pub use_gi: bool,
    pub pruned: bool,
    /// False for pruned candidates and for genes already evaluated.
    pub trained: bool,
    /// Training blew up; the candidate ranks below every finite score.
    pub diverged: bool,
    pub fitness: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaOutcome {
    pub best: Genes,
    pub best_lr: f64,
    pub best_fitness: f64,
    pub c_upper: Option<usize>,
    pub delta: Option<f64>,
    pub training_invocations: usize,
    pub audit: Vec<AuditEntry>,
}

impl GaOutcome {
    pub fn audit_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.audit {
            out.push_str(&serde_json::to_string(e).expect("audit entries serialise"));
            out.push('\n');
        }
        out
    }

    pub fn pruned_count(&self) -> usize {
        self.audit.iter().filter(|e| e.pruned).count()
    }
}

struct GaContext<'a> {
    cfg: &'a GaConfig,
    train: GiBatch,
    test: GiBatch,
    seed: u64,
}

impl GaContext<'_> {
    /// Test RMSE, or infinity when training diverges.
    fn fitness(&self, genes: Genes) -> Result<f64> {
        let lr = self.cfg.learning_rates[genes.lr_index];
        let stream = cell_stream(self.cfg.train_size, genes.complexity, genes.lr_index) ^ GA_STREAM;
        score_network(
            &self.cfg.process,
            &self.train,
            &self.test,
            genes.complexity,
            self.cfg.depth,
            &self.cfg.fit,
            lr,
            false,
            stream,
            self.seed,
            AccuracyMeasure::Rmse,
        )
        .or_else(|e| match e {
            Error::NonFinite(_) => Ok(f64::INFINITY),
            other => Err(other),
        })
    }
}

fn random_genes(cfg: &GaConfig, rng: &mut Rng) -> Genes {
    Genes {
        complexity: cfg.complexities[rng.below(cfg.complexities.len())],
        lr_index: rng.below(cfg.learning_rates.len()),
    }
}

fn tournament(scored: &[(Genes, f64)], rng: &mut Rng) -> Genes {
    let a = &scored[rng.below(scored.len())];
    let b = &scored[rng.below(scored.len())];
    if b.1 < a.1 {
        b.0
    } else {
        a.0
    }
}

/// Genetic search over complexity and learning rate, scored by test RMSE of
/// conventionally trained networks.
///
/// With pruning on, a delta-min estimation phase (a coarse complexity grid,
/// a few seeds, both training schemes) fixes `c_upper` first, and any
/// candidate wider than `c_upper` is rejected without training. Repeated
/// genes reuse their first evaluation. Every decision lands in the audit log.
pub fn ga_optimize(cfg: &GaConfig, seed: u64) -> Result<GaOutcome> {
    cfg.validate()?;
    let mut audit = Vec::new();
    let mut invocations = 0;

    let (c_upper, delta) = if cfg.pruning {
        let mid_lr = cfg.learning_rates[cfg.learning_rates.len() / 2];
        let sweep_cfg = SweepConfig {
            process: cfg.process.clone(),
            sizes: vec![cfg.train_size],
            complexities: cfg.estimation_grid(),
            seeds: cfg.estimation_seeds,
            depth: cfg.depth,
            test_size: cfg.test_size,
            measure: AccuracyMeasure::Rmse,
            fit: FitSettings {
                lr: mid_lr,
                ..cfg.fit.clone()
            },
        };
        let mut result = sweep_with(&sweep_cfg, Rng::derive(seed, GA_STREAM + 1).next_u64(), true)?.remove(0);
        for row in &result.rows {
            for (use_gi, fitness) in [(false, row.a_conv), (true, row.a_gi)] {
                audit.push(AuditEntry {
                    phase: GaPhase::Estimate,
                    generation: 0,
                    complexity: row.complexity,
                    lr: mid_lr,
                    use_gi,
                    pruned: false,
                    trained: true,
                    diverged: !fitness.is_finite(),
                    fitness: fitness.is_finite().then_some(fitness),
                });
                invocations += cfg.estimation_seeds;
            }
        }
        // A width where either scheme diverged has no meaningful gap.
        result.rows.retain(|r| r.a_conv.is_finite() && r.a_gi.is_finite());
        let (c, d) = delta_min(&result)?;
        (Some(c), Some(d))
    } else {
        (None, None)
    };

    let search = ga_search(cfg, seed, c_upper)?;
    audit.extend(search.audit);
    let (best, best_fitness) = search.best.ok_or_else(|| {
        Error::Config("every candidate was pruned or diverged; widen the gene space or disable pruning".into())
    })?;
    Ok(GaOutcome {
        best,
        best_lr: cfg.learning_rates[best.lr_index],
        best_fitness,
        c_upper,
        delta,
        training_invocations: invocations + search.invocations,
        audit,
    })
}

struct SearchOutcome {
    best: Option<(Genes, f64)>,
    audit: Vec<AuditEntry>,
    invocations: usize,
}

/// The generational loop, rejecting complexities above `c_upper` untrained.
fn ga_search(cfg: &GaConfig, seed: u64, c_upper: Option<usize>) -> Result<SearchOutcome> {
    let mut data_rng = Rng::derive(seed, GA_STREAM << 8);
    let ctx = GaContext {
        cfg,
        train: sample_surrogate(&cfg.process, cfg.train_size, &mut data_rng)?,
        test: test_set(&cfg.process, cfg.test_size, seed)?,
        seed,
    };
    let mut audit = Vec::new();
    let mut invocations = 0;
    let mut rng = Rng::derive(seed, GA_STREAM);
    let mut population: Vec<Genes> = (0..cfg.population).map(|_| random_genes(cfg, &mut rng)).collect();
    let mut memo: HashMap<Genes, f64> = HashMap::new();
    let mut best: Option<(Genes, f64)> = None;

    for generation in 0..cfg.generations {
        let mut fresh: Vec<Genes> = Vec::new();
        for g in &population {
            let pruned = c_upper.is_some_and(|c| g.complexity > c);
            if !pruned && !memo.contains_key(g) && !fresh.contains(g) {
                fresh.push(*g);
            }
        }
        let scores = fresh
            .par_iter()
            .map(|&g| ctx.fitness(g))
            .collect::<Result<Vec<_>>>()?;
        invocations += fresh.len();
        for (&g, &s) in fresh.iter().zip(&scores) {
            memo.insert(g, s);
        }

        let mut scored = Vec::with_capacity(population.len());
        let mut newly_trained: HashSet<Genes> = HashSet::new();
        for g in &population {
            let pruned = c_upper.is_some_and(|c| g.complexity > c);
            let score = (!pruned).then(|| memo[g]);
            let diverged = score.is_some_and(|f| f.is_infinite());
            let fitness = score.filter(|f| f.is_finite());
            let trained = !pruned && fresh.contains(g) && newly_trained.insert(*g);
            audit.push(AuditEntry {
                phase: GaPhase::Search,
                generation,
                complexity: g.complexity,
                lr: cfg.learning_rates[g.lr_index],
                use_gi: false,
                pruned,
                trained,
                diverged,
                fitness,
            });
            let f = fitness.unwrap_or(f64::INFINITY);
            if fitness.is_some() && best.is_none_or(|(_, b)| f < b) {
                best = Some((*g, f));
            }
            scored.push((*g, f));
        }

        if generation + 1 == cfg.generations {
            break;
        }
        let elite = scored
            .iter()
            .fold(scored[0], |acc, x| if x.1 < acc.1 { *x } else { acc })
            .0;
        let mut next = vec![elite];
        while next.len() < cfg.population {
            let a = tournament(&scored, &mut rng);
            let b = tournament(&scored, &mut rng);
            let mut child = if rng.next_f64() < cfg.crossover_rate {
                Genes {
                    complexity: if rng.next_f64() < 0.5 { a.complexity } else { b.complexity },
                    lr_index: if rng.next_f64() < 0.5 { a.lr_index } else { b.lr_index },
                }
            } else {
                a
            };
            if rng.next_f64() < cfg.mutation_rate {
                child.complexity = cfg.complexities[rng.below(cfg.complexities.len())];
            }
            if rng.next_f64() < cfg.mutation_rate {
                child.lr_index = rng.below(cfg.learning_rates.len());
            }
            next.push(child);
        }
        population = next;
    }

    Ok(SearchOutcome {
        best,
        audit,
        invocations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn result(measure: AccuracyMeasure, rows: &[(usize, f64, f64)]) -> SweepResult {
        SweepResult {
            process: ProcessKind::Cosine2d,
            train_size: 50,
            seeds: 1,
            measure,
            rows: rows
                .iter()
                .map(|&(complexity, a_conv, a_gi)| SweepRow {
                    complexity,
                    a_conv,
                    a_gi,
                })
                .collect(),
        }
    }

    fn tiny_ga() -> GaConfig {
        GaConfig {
            train_size: 20,
            test_size: 40,
            population: 4,
            generations: 3,
            complexities: vec![2, 4, 6, 8, 12, 16],
            learning_rates: vec![0.02, 0.05],
            depth: 1,
            fit: FitSettings {
                epochs: 5,
                ..FitSettings::default()
            },
            estimation_points: 3,
            estimation_seeds: 1,
            ..GaConfig::default()
        }
    }

    #[test]
    fn delta_min_examples() {
        let r = result(AccuracyMeasure::Rmse, &[(8, 1.0, 0.5), (16, 1.0, 0.8), (24, 1.0, 0.7)]);
        let (c, d) = delta_min(&r).unwrap();
        assert_eq!(c, 16);
        assert!((d - 0.2).abs() < 1e-12);

        let same = result(AccuracyMeasure::Rmse, &[(4, 0.3, 0.3), (8, 0.2, 0.2), (12, 0.1, 0.1)]);
        assert_eq!(delta_min(&same).unwrap(), (4, 0.0));

        let one = result(AccuracyMeasure::Rmse, &[(4, 0.3, 0.2)]);
        assert!(matches!(delta_min(&one), Err(Error::TooFewRows { needed: 2, got: 1 })));
        let unsorted = result(AccuracyMeasure::Rmse, &[(8, 0.3, 0.2), (4, 0.3, 0.2)]);
        assert!(matches!(delta_min(&unsorted), Err(Error::BadParams(_))));
    }

    #[test]
    fn optimal_complexity_respects_measure_direction() {
        let rows = [(4, 0.5, 0.4), (8, 0.2, 0.2), (12, 0.9, 0.1)];
        assert_eq!(optimal_complexity(&result(AccuracyMeasure::Rmse, &rows)).unwrap(), 8);
        assert_eq!(optimal_complexity(&result(AccuracyMeasure::Pearson, &rows)).unwrap(), 12);
        let tie = [(4, 0.2, 0.1), (8, 0.2, 0.1)];
        assert_eq!(optimal_complexity(&result(AccuracyMeasure::Rmse, &tie)).unwrap(), 4);
        assert!(optimal_complexity(&result(AccuracyMeasure::Rmse, &[])).is_err());
    }

    #[test]
    fn assumption_report_on_textbook_sweep() {
        // Conventional RMSE falls with shrinking steps then rises; GI is
        // better below the optimum and improves more slowly.
        let rows = [
            (4, 1.0, 0.6),
            (8, 0.6, 0.4),
            (12, 0.4, 0.3),
            (16, 0.35, 0.3),
            (20, 0.4, 0.45),
        ];
        let r = result(AccuracyMeasure::Rmse, &rows);
        assert_eq!(optimal_complexity(&r).unwrap(), 16);
        let rep = assumption_diagnostics(&r).unwrap();
        assert_eq!(rep.monotone_slope, Some(1.0));
        assert_eq!(rep.gi_better_below_optimum, Some(1.0));
        assert_eq!(rep.gi_slope_flatter_below_optimum, Some(1.0));

        let at_start = result(AccuracyMeasure::Rmse, &[(4, 0.1, 0.2), (8, 0.3, 0.3)]);
        let rep = assumption_diagnostics(&at_start).unwrap();
        assert_eq!(rep.gi_better_below_optimum, Some(0.0));
        assert_eq!(rep.gi_slope_flatter_below_optimum, None);
        assert_eq!(rep.monotone_slope, None);
    }

    #[test]
    fn measures_evaluate_and_rank() {
        let truth = [1.0, 2.0, 3.0];
        assert_eq!(AccuracyMeasure::Rmse.evaluate(&truth, &truth).unwrap(), 0.0);
        assert!((AccuracyMeasure::Pearson.evaluate(&[2.0, 4.0, 6.0], &truth).unwrap() - 1.0).abs() < 1e-12);
        assert!(AccuracyMeasure::Rmse.loss(0.1) < AccuracyMeasure::Rmse.loss(0.2));
        assert!(AccuracyMeasure::Pearson.loss(0.9) < AccuracyMeasure::Pearson.loss(0.5));
    }

    #[test]
    fn architecture_layout() {
        let spec = ProcessSpec::new(ProcessKind::Cosine2d);
        assert_eq!(architecture(&spec, 8, 4), vec![2, 8, 8, 8, 8, 10]);
    }

    #[test]
    fn small_sweep_is_deterministic_and_shaped() {
        let cfg = SweepConfig {
            sizes: vec![10, 20],
            complexities: vec![2, 4],
            seeds: 2,
            depth: 1,
            test_size: 30,
            fit: FitSettings {
                epochs: 3,
                ..FitSettings::default()
            },
            ..SweepConfig::default()
        };
        let a = sweep(&cfg, 7).unwrap();
        assert_eq!(a, sweep(&cfg, 7).unwrap());
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|r| r.rows.len() == 2 && r.seeds == 2));
        let csv = sweep_csv(&a);
        assert!(csv.starts_with("size,complexity,a_conv,a_gi,abs_delta\n10,2,"));
        assert_eq!(csv.lines().count(), 5);
        let bad = SweepConfig {
            complexities: vec![4, 4],
            ..cfg
        };
        assert!(matches!(sweep(&bad, 7), Err(Error::Config(_))));
    }

    #[test]
    fn ga_pruning_audit_invariants() {
        let cfg = tiny_ga();
        let out = ga_optimize(&cfg, 3).unwrap();
        let c_up = out.c_upper.unwrap();
        let estimate: Vec<_> = out.audit.iter().filter(|e| e.phase == GaPhase::Estimate).collect();
        assert_eq!(estimate.len(), 2 * cfg.estimation_grid().len());
        for e in out.audit.iter().filter(|e| e.phase == GaPhase::Search) {
            assert_eq!(e.pruned, e.complexity > c_up);
            if e.trained {
                assert!(e.complexity <= c_up && e.fitness.is_some());
            }
            if e.pruned {
                assert!(!e.trained && e.fitness.is_none());
            }
        }
        let search_trained = out
            .audit
            .iter()
            .filter(|e| e.phase == GaPhase::Search && e.trained)
            .count();
        assert_eq!(
            out.training_invocations,
            search_trained + estimate.len() * cfg.estimation_seeds
        );
        assert!(out.best.complexity <= c_up);
        assert_eq!(out, ga_optimize(&cfg, 3).unwrap());
        for line in out.audit_jsonl().lines() {
            let parsed: AuditEntry = serde_json::from_str(line).unwrap();
            assert!(out.audit.contains(&parsed));
        }
    }

    #[test]
    fn pruning_is_only_a_filter() {
        let cfg = tiny_ga();
        let open = ga_search(&cfg, 5, None).unwrap();
        let loose = ga_search(&cfg, 5, Some(*cfg.complexities.last().unwrap())).unwrap();
        assert_eq!(open.best, loose.best);
        assert_eq!(open.invocations, loose.invocations);
        assert_eq!(open.audit, loose.audit);

        let tight = ga_search(&cfg, 5, Some(4)).unwrap();
        assert!(tight.invocations <= open.invocations);
        assert!(tight.audit.iter().all(|e| !e.trained || e.complexity <= 4));
    }

    #[test]
    fn ga_two_members_one_generation() {
        let cfg = GaConfig {
            population: 2,
            generations: 1,
            pruning: false,
            ..tiny_ga()
        };
        let out = ga_optimize(&cfg, 1).unwrap();
        assert_eq!(out.audit.len(), 2);
        assert!(out.training_invocations >= 1 && out.training_invocations <= 2);
        assert!(out.c_upper.is_none() && out.delta.is_none());
        let scored: Vec<f64> = out.audit.iter().filter_map(|e| e.fitness).collect();
        assert_eq!(out.best_fitness, scored.iter().copied().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn ga_config_validation() {
        let base = tiny_ga();
        assert!(base.validate().is_ok());
        for bad in [
            GaConfig { population: 1, ..base.clone() },
            GaConfig { mutation_rate: 1.5, ..base.clone() },
            GaConfig { complexities: vec![], ..base.clone() },
            GaConfig { complexities: vec![8, 4], ..base.clone() },
            GaConfig { learning_rates: vec![0.0], ..base.clone() },
            GaConfig { estimation_points: 1, ..base.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
        assert_eq!(base.estimation_grid(), vec![2, 6, 16]);
    }

    #[test]
    fn divergence_is_scored_not_fatal() {
        let wild = GaConfig {
            learning_rates: vec![1e200],
            ..tiny_ga()
        };
        // Every estimation fit blows up, leaving no gap to minimise.
        assert!(matches!(ga_optimize(&wild, 3), Err(Error::TooFewRows { got: 0, .. })));
        let unpruned = GaConfig { pruning: false, ..wild };
        let out = ga_search(&unpruned, 3, None).unwrap();
        assert!(out.best.is_none());
        assert!(out.audit.iter().all(|e| e.diverged && e.fitness.is_none()));
        let sweep_cfg = SweepConfig {
            sizes: vec![20],
            complexities: vec![4],
            seeds: 1,
            test_size: 10,
            fit: FitSettings { lr: 1e200, epochs: 5, ..FitSettings::default() },
            ..SweepConfig::default()
        };
        assert!(matches!(sweep(&sweep_cfg, 1), Err(Error::NonFinite(_))));
        assert!(sweep_with(&sweep_cfg, 1, true).unwrap()[0].rows[0].a_conv.is_infinite());
    }

    proptest! {
        #[test]
        fn delta_min_is_the_row_minimum(
            pairs in prop::collection::vec((0.0f64..2.0, 0.0f64..2.0), 2..12)
        ) {
            let rows: Vec<(usize, f64, f64)> =
                pairs.iter().enumerate().map(|(i, &(a, b))| (4 * (i + 1), a, b)).collect();
            let r = result(AccuracyMeasure::Rmse, &rows);
            let (c, d) = delta_min(&r).unwrap();
            let min = rows.iter().map(|&(_, a, b)| (b - a).abs()).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(d, min);
            let first = rows.iter().find(|&&(_, a, b)| (b - a).abs() == min).unwrap().0;
            prop_assert_eq!(c, first);
            prop_assert!(optimal_complexity(&r).is_ok());
        }
    }
}
