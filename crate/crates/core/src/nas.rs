//! Staged, hardware-aware architecture search over the VGG-style grid.
//!
//! A search runs three stages in sequence, each scoring trials with a
//! different objective: accuracy alone, accuracy traded against latency,
//! and finally accuracy per unit of energy (power-delay product). Within a
//! stage, proposals come from a tree-structured Parzen estimator over the
//! stage's observations, with a fixed share of uniform exploration. The best
//! few specs of each stage seed the next.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{mac_count, ModelSpec, SearchSpace};
use crate::rng::{self, Rng};
use crate::train::{accuracy, train, Example, TrainConfig};

#[derive(Debug, Error)]
pub enum NasError {
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("objective undefined: {0}")]
    Objective(String),
    #[error("ledger {path}, line {line}: {detail}")]
    Ledger { path: String, line: usize, detail: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Acc,
    AccLatency,
    AccPdp,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Acc, Stage::AccLatency, Stage::AccPdp];
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Acc => "acc",
            Stage::AccLatency => "acc_latency",
            Stage::AccPdp => "acc_pdp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    /// Test accuracy in percent.
    pub accuracy: f64,
    pub latency_ms: f64,
    pub power_w: f64,
    pub pdp_mj: f64,
}

impl Metrics {
    pub fn new(accuracy: f64, latency_ms: f64, power_w: f64) -> Self {
        Self {
            accuracy,
            latency_ms,
            power_w,
            pdp_mj: power_w * latency_ms,
        }
    }
}

/// Lower is better.
pub fn objective(m: &Metrics, stage: Stage, lambda: f64) -> Result<f64, NasError> {
    match stage {
        Stage::Acc => Ok(-m.accuracy),
        Stage::AccLatency => Ok(-m.accuracy + lambda * m.latency_ms),
        Stage::AccPdp => {
            if m.pdp_mj == 0.0 || !m.pdp_mj.is_finite() {
                return Err(NasError::Objective(format!("power-delay product is {}", m.pdp_mj)));
            }
            Ok(-m.accuracy / m.pdp_mj)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Status {
    Done { metrics: Metrics, objective: f64 },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub stage: Stage,
    pub spec: ModelSpec,
    pub seed: u64,
    /// Whether the spec came from uniform exploration rather than the
    /// estimator.
    pub explored: bool,
    #[serde(flatten)]
    pub status: Status,
}

impl Trial {
    pub fn metrics(&self) -> Option<&Metrics> {
        match &self.status {
            Status::Done { metrics, .. } => Some(metrics),
            Status::Failed { .. } => None,
        }
    }
}

/// Maps a spec to measured or estimated metrics.
pub trait Evaluator {
    fn evaluate(&mut self, spec: &ModelSpec, seed: u64) -> Result<Metrics, String>;
}

impl<F: FnMut(&ModelSpec, u64) -> Result<Metrics, String>> Evaluator for F {
    fn evaluate(&mut self, spec: &ModelSpec, seed: u64) -> Result<Metrics, String> {
        self(spec, seed)
    }
}

/// Closed-form stand-in for a train-and-measure loop. Accuracy is a
/// separable quadratic bowl over the grid, peaking at K1 = 12; latency and
/// power grow with the multiply-accumulate count, depth and FC widths.
#[derive(Debug, Clone, Copy, Default)]
pub struct AnalyticSurrogate;

impl AnalyticSurrogate {
    pub fn metrics(spec: &ModelSpec) -> Metrics {
        let k = |i: usize| spec.kernels.get(i).map(|&k| k as f64);
        let bowl = |v: f64, peak: f64, step: f64, w: f64| w * ((v - peak) / step).powi(2);
        let mut accuracy = 97.5
            - bowl(spec.blocks as f64, 3.0, 1.0, 0.8)
            - bowl(spec.fc[0] as f64, 110.0, 5.0, 2.0)
            - bowl(spec.fc[1] as f64, 90.0, 5.0, 2.0);
        for (i, (peak, step, w)) in [(12.0, 2.0, 3.0), (28.0, 4.0, 2.0), (40.0, 4.0, 2.0), (56.0, 4.0, 2.0)].into_iter().enumerate() {
            if let Some(v) = k(i) {
                accuracy -= bowl(v, peak, step, w);
            }
        }
        let latency_ms = 1.0 + 20.0 * spec.blocks as f64 + mac_count(spec) as f64 / 1.0e7;
        let power_w = 0.6 + 0.08 * spec.blocks as f64 + 0.0005 * (spec.fc[0] + spec.fc[1]) as f64;
        Metrics::new(accuracy, latency_ms, power_w)
    }
}

impl Evaluator for AnalyticSurrogate {
    fn evaluate(&mut self, spec: &ModelSpec, _seed: u64) -> Result<Metrics, String> {
        Ok(Self::metrics(spec))
    }
}

/// Latency and power estimated from the multiply-accumulate count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThroughputModel {
    pub overhead_ms: f64,
    pub macs_per_ms: f64,
    pub power_w: f64,
}

impl Default for ThroughputModel {
    fn default() -> Self {
        Self {
            overhead_ms: 1.0,
            macs_per_ms: 1.0e7,
            power_w: 1.5,
        }
    }
}

/// Trains every proposed spec and scores it on held-out data.
pub struct TrainingEvaluator {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub config: TrainConfig,
    pub cost: ThroughputModel,
}

impl Evaluator for TrainingEvaluator {
    fn evaluate(&mut self, spec: &ModelSpec, seed: u64) -> Result<Metrics, String> {
        let g = crate::model::instantiate(spec, seed).map_err(|e| e.to_string())?;
        let cfg = TrainConfig { seed, ..self.config };
        let (g, _) = train(&g, &self.train, &cfg).map_err(|e| e.to_string())?;
        let acc = accuracy(&g, &self.test).map_err(|e| e.to_string())?;
        let latency_ms = self.cost.overhead_ms + mac_count(spec) as f64 / self.cost.macs_per_ms;
        Ok(Metrics::new(100.0 * acc, latency_ms, self.cost.power_w))
    }
}

fn default_budget() -> usize {
    60
}
fn default_gamma() -> f64 {
    0.25
}
fn default_exploration() -> f64 {
    0.2
}
fn default_lambda() -> f64 {
    0.1
}
fn default_workers() -> usize {
    1
}
fn default_stages() -> [f64; 3] {
    [0.4, 0.3, 0.3]
}
fn default_carry() -> usize {
    5
}
fn default_candidates() -> usize {
    64
}
fn default_startup() -> usize {
    5
}
fn default_bandwidth() -> f64 {
    0.5
}
fn default_contrast() -> f64 {
    0.25
}

/// Contents of `search.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of observations treated as good.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Probability of a uniform draw instead of an estimator proposal.
    #[serde(default = "default_exploration")]
    pub exploration: f64,
    /// Accuracy points per millisecond in the latency stage.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Accepted for compatibility; trials are evaluated in index order.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Budget shares of the three stages.
    #[serde(default = "default_stages")]
    pub stages: [f64; 3],
    /// Best specs of one stage carried into the next.
    #[serde(default = "default_carry")]
    pub carry: usize,
    /// Proposals drawn from the good density per trial.
    #[serde(default = "default_candidates")]
    pub candidates: usize,
    /// Observations needed before the estimator is used.
    #[serde(default = "default_startup")]
    pub startup: usize,
    /// Kernel width, in grid steps, of the per-parameter densities.
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    /// Exponent on the bad density when ranking candidates: 1 is the plain
    /// ratio, 0 ranks by the good density alone.
    #[serde(default = "default_contrast")]
    pub contrast: f64,
    #[serde(default = "SearchSpace::standard")]
    pub space: SearchSpace,
}

impl Default for SearchConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields defaulted")
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), NasError> {
        let bad = |m: String| Err(NasError::Config(m));
        if self.budget == 0 {
            return bad("budget must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.exploration) {
            return bad(format!("exploration {} outside [0, 1]", self.exploration));
        }
        if self.stages.iter().any(|s| !(*s >= 0.0)) || self.stages.iter().sum::<f64>() <= 0.0 {
            return bad(format!("stage shares {:?} must be non-negative and not all zero", self.stages));
        }
        if self.workers == 0 || self.candidates == 0 {
            return bad("workers and candidates must be positive".into());
        }
        if !(self.bandwidth > 0.0) || !self.lambda.is_finite() {
            return bad("bandwidth must be positive and lambda finite".into());
        }
        if !(0.0..=1.0).contains(&self.contrast) {
            return bad(format!("contrast {} outside [0, 1]", self.contrast));
        }
        self.space.validate().map_err(|e| NasError::Config(e.to_string()))
    }

    /// Stage of trial `index`. Shares are normalised and rounded to whole
    /// trials; the last non-empty stage absorbs the remainder.
    pub fn stage_of(&self, index: usize) -> Stage {
        let total: f64 = self.stages.iter().sum();
        let mut end = 0.0;
        for (i, s) in Stage::ALL.iter().enumerate() {
            end += self.stages[i] / total * self.budget as f64;
            if (index as f64) < end.round() {
                return *s;
            }
        }
        Stage::AccPdp
    }
}

/// One draw per parameter on its grid; kernel counts beyond the drawn
/// depth are dropped.
pub fn sample_spec(space: &SearchSpace, r: &mut Rng) -> ModelSpec {
    let ranges = space.ranges();
    let idx: [usize; 7] = std::array::from_fn(|i| r.random_range(0..ranges[i].len()));
    spec_of(space, &idx)
}

fn spec_of(space: &SearchSpace, idx: &[usize; 7]) -> ModelSpec {
    let blocks = space.blocks.value(idx[0]);
    let kernels: Vec<usize> = (0..blocks).map(|i| space.kernels[i].value(idx[1 + i])).collect();
    let mut spec = ModelSpec::new(&kernels, [space.fc1.value(idx[5]), space.fc2.value(idx[6])]);
    spec.strict_grid = true;
    spec
}

/// Grid indices of a spec; `None` for kernels beyond its depth.
fn indices_of(space: &SearchSpace, spec: &ModelSpec) -> [Option<usize>; 7] {
    let mut out = [None; 7];
    out[0] = space.blocks.index_of(spec.blocks);
    for (i, &k) in spec.kernels.iter().enumerate().take(4) {
        out[1 + i] = space.kernels[i].index_of(k);
    }
    out[5] = space.fc1.index_of(spec.fc[0]);
    out[6] = space.fc2.index_of(spec.fc[1]);
    out
}

fn key(spec: &ModelSpec) -> (usize, Vec<usize>, [usize; 2]) {
    (spec.blocks, spec.kernels.clone(), spec.fc)
}

/// Discrete Gaussian kernel over the `n` grid points of one parameter,
/// centred on index `at`, with width in grid steps.
fn kernel(n: usize, at: usize, bandwidth: f64) -> Vec<f64> {
    let bump: Vec<f64> = (0..n).map(|v| (-0.5 * ((v as f64 - at as f64) / bandwidth).powi(2)).exp()).collect();
    let z: f64 = bump.iter().sum();
    bump.into_iter().map(|b| b / z).collect()
}

/// Joint Parzen density over the grid: one product kernel per observation
/// plus a uniform prior component of equal weight. Kernel counts beyond a
/// spec's depth are skipped.
struct Parzen {
    lens: [usize; 7],
    /// Per component, per parameter: the kernel, or `None` for the prior or
    /// an inactive parameter.
    components: Vec<[Option<Vec<f64>>; 7]>,
}

impl Parzen {
    fn new(lens: [usize; 7], points: &[[Option<usize>; 7]], bandwidth: f64) -> Self {
        let mut components = vec![std::array::from_fn(|_| None)];
        for p in points {
            components.push(std::array::from_fn(|d| p[d].map(|at| kernel(lens[d], at, bandwidth))));
        }
        Self { lens, components }
    }

    fn sample(&self, r: &mut Rng) -> [usize; 7] {
        let c = &self.components[r.random_range(0..self.components.len())];
        std::array::from_fn(|d| match &c[d] {
            Some(k) => draw(k, r),
            None => r.random_range(0..self.lens[d]),
        })
    }

    fn log_pdf(&self, x: &[Option<usize>; 7]) -> f64 {
        let p: f64 = self
            .components
            .iter()
            .map(|c| {
                (0..7)
                    .filter_map(|d| x[d].map(|v| c[d].as_ref().map_or(1.0 / self.lens[d] as f64, |k| k[v])))
                    .product::<f64>()
            })
            .sum();
        (p / self.components.len() as f64).ln()
    }
}

fn draw(p: &[f64], r: &mut Rng) -> usize {
    let u: f64 = r.random::<f64>() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Proposes the candidate with the highest tempered good/bad density ratio among
/// `config.candidates` draws from the good density. Returns `None` when
/// there are too few observations to split.
fn tpe_propose(config: &SearchConfig, obs: &[(ModelSpec, f64)], seen: &HashSet<(usize, Vec<usize>, [usize; 2])>, r: &mut Rng) -> Option<ModelSpec> {
    if obs.len() < config.startup.max(2) {
        return None;
    }
    let mut sorted: Vec<&(ModelSpec, f64)> = obs.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let n_good = ((config.gamma * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len() - 1);
    let (good, bad) = sorted.split_at(n_good);
    let space = &config.space;
    let ranges = space.ranges();
    let lens: [usize; 7] = std::array::from_fn(|d| ranges[d].len());
    let points = |set: &[&(ModelSpec, f64)]| -> Vec<[Option<usize>; 7]> { set.iter().map(|(s, _)| indices_of(space, s)).collect() };
    let l = Parzen::new(lens, &points(good), config.bandwidth);
    let g = Parzen::new(lens, &points(bad), config.bandwidth);
    let mut best: Option<(f64, ModelSpec)> = None;
    let mut fallback: Option<(f64, ModelSpec)> = None;
    for _ in 0..config.candidates {
        let spec = spec_of(space, &l.sample(r));
        let x = indices_of(space, &spec);
        let score = l.log_pdf(&x) - config.contrast * g.log_pdf(&x);
        let slot = if seen.contains(&key(&spec)) { &mut fallback } else { &mut best };
        if slot.as_ref().is_none_or(|(s, _)| score > *s) {
            *slot = Some((score, spec));
        }
    }
    best.map(|b| b.1).or_else(|| {
        // Every draw was already evaluated: nudge to an unseen spec.
        (0..64).map(|_| sample_spec(space, r)).find(|s| !seen.contains(&key(s))).or(fallback.map(|f| f.1))
    })
}

/// Append-only trial log, optionally mirrored to a JSON-lines file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchLedger {
    pub trials: Vec<Trial>,
    path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageBest {
    pub stage: Stage,
    pub index: usize,
    pub spec: ModelSpec,
    pub objective: f64,
}

impl SearchLedger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a ledger file, loading the trials it holds.
    pub fn open(path: &Path) -> Result<Self, NasError> {
        let mut trials = Vec::new();
        if path.exists() {
            let f = BufReader::new(File::open(path)?);
            for (i, line) in f.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let t: Trial = serde_json::from_str(&line).map_err(|e| NasError::Ledger {
                    path: path.display().to_string(),
                    line: i + 1,
                    detail: e.to_string(),
                })?;
                if t.index != trials.len() {
                    return Err(NasError::Ledger {
                        path: path.display().to_string(),
                        line: i + 1,
                        detail: format!("trial index {} out of sequence, expected {}", t.index, trials.len()),
                    });
                }
                trials.push(t);
            }
        }
        Ok(Self {
            trials,
            path: Some(path.to_path_buf()),
        })
    }

    fn append(&mut self, t: Trial) -> Result<(), NasError> {
        if let Some(p) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(p)?;
            writeln!(f, "{}", serde_json::to_string(&t)?)?;
            f.sync_data()?;
        }
        self.trials.push(t);
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String, NasError> {
        let mut s = String::new();
        for t in &self.trials {
            s.push_str(&serde_json::to_string(t)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, NasError> {
        let mut trials = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            trials.push(serde_json::from_str(line).map_err(|e| NasError::Ledger {
                path: "<memory>".into(),
                line: i + 1,
                detail: e.to_string(),
            })?);
        }
        Ok(Self { trials, path: None })
    }

    /// The stage's observations: its own completed trials plus the best
    /// `config.carry` specs evaluated in earlier stages, all scored under
    /// the stage's objective.
    pub fn observations(&self, stage: Stage, config: &SearchConfig) -> Vec<(ModelSpec, f64)> {
        let scored = |t: &Trial| t.metrics().and_then(|m| objective(m, stage, config.lambda).ok()).map(|o| (t.spec.clone(), o));
        let mut earlier: Vec<(ModelSpec, f64)> = self.trials.iter().filter(|t| t.stage < stage).filter_map(scored).collect();
        earlier.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut out: Vec<(ModelSpec, f64)> = Vec::new();
        for (spec, o) in earlier {
            if out.len() == config.carry {
                break;
            }
            if !out.iter().any(|(s, _)| key(s) == key(&spec)) {
                out.push((spec, o));
            }
        }
        out.extend(self.trials.iter().filter(|t| t.stage == stage).filter_map(scored));
        out
    }

    /// Best completed trial of each stage that has one, by that stage's
    /// objective; ties go to the earlier trial.
    pub fn best_per_stage(&self) -> Vec<StageBest> {
        Stage::ALL
            .iter()
            .filter_map(|&stage| {
                self.trials
                    .iter()
                    .filter(|t| t.stage == stage)
                    .filter_map(|t| match &t.status {
                        Status::Done { objective, .. } => Some((t, *objective)),
                        Status::Failed { .. } => None,
                    })
                    .fold(None::<(&Trial, f64)>, |acc, (t, o)| match acc {
                        Some((_, bo)) if bo <= o => acc,
                        _ => Some((t, o)),
                    })
                    .map(|(t, o)| StageBest {
                        stage,
                        index: t.index,
                        spec: t.spec.clone(),
                        objective: o,
                    })
            })
            .collect()
    }

    /// Best completed trial overall under `stage`'s objective.
    pub fn best_under(&self, stage: Stage, lambda: f64) -> Option<(&Trial, f64)> {
        self.trials
            .iter()
            .filter_map(|t| t.metrics().and_then(|m| objective(m, stage, lambda).ok()).map(|o| (t, o)))
            .fold(None, |acc, (t, o)| match acc {
                Some((_, bo)) if bo <= o => acc,
                _ => Some((t, o)),
            })
    }
}

/// Runs (or resumes) a search until the ledger holds `config.budget` trials.
/// Trial `i` draws from its own stream derived from `(seed, i)`, so a
/// resumed search proposes exactly what an uninterrupted one would.
pub fn search<E: Evaluator>(config: &SearchConfig, evaluator: &mut E, ledger: &mut SearchLedger) -> Result<(), NasError> {
    config.validate()?;
    if config.workers > 1 {
        log::info!("evaluating sequentially; {} workers requested", config.workers);
    }
    let mut seen: HashSet<_> = ledger.trials.iter().map(|t| key(&t.spec)).collect();
    for index in ledger.trials.len()..config.budget {
        let stage = config.stage_of(index);
        let mut r = rng::seeded(rng::derive_seed(config.seed, index as u64));
        let explore = r.random::<f64>() < config.exploration;
        let proposal = if explore {
            None
        } else {
            tpe_propose(config, &ledger.observations(stage, config), &seen, &mut r)
        };
        let explored = proposal.is_none();
        let spec = proposal.unwrap_or_else(|| sample_spec(&config.space, &mut r));
        let seed = rng::derive_seed(config.seed ^ 0x5eed, index as u64);
        let status = match evaluator.evaluate(&spec, seed) {
            Ok(m) => match objective(&m, stage, config.lambda) {
                Ok(o) => Status::Done { metrics: m, objective: o },
                Err(e) => Status::Failed { error: e.to_string() },
            },
            Err(e) => Status::Failed { error: e },
        };
        if let Status::Failed { error } = &status {
            log::warn!("trial {index} failed: {error}");
        }
        seen.insert(key(&spec));
        ledger.append(Trial {
            index,
            stage,
            spec,
            seed,
            explored,
            status,
        })?;
    }
    Ok(())
}

/// Exhaustive minimum of `stage`'s objective over the whole grid.
pub fn brute_force_optimum(space: &SearchSpace, stage: Stage, lambda: f64, f: impl Fn(&ModelSpec) -> Metrics) -> Option<(ModelSpec, f64)> {
    space
        .enumerate()
        .into_iter()
        .filter_map(|s| objective(&f(&s), stage, lambda).ok().map(|o| (s, o)))
        .fold(None, |acc: Option<(ModelSpec, f64)>, (s, o)| match acc {
            Some((_, bo)) if bo <= o => acc,
            _ => Some((s, o)),
        })
}

/// Index of the first trial that evaluated `target`, if any.
pub fn trials_to(ledger: &SearchLedger, target: &ModelSpec) -> Option<usize> {
    ledger.trials.iter().position(|t| key(&t.spec) == key(target)).map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn surrogate_config(seed: u64) -> SearchConfig {
        SearchConfig { seed, ..Default::default() }
    }

    #[test]
    fn samples_lie_on_the_grid() {
        let space = SearchSpace::standard();
        let mut r = rng::seeded(3);
        for _ in 0..500 {
            let s = sample_spec(&space, &mut r);
            assert!([6, 8, 10, 12, 14, 16].contains(&s.kernels[0]));
            assert!((2..=4).contains(&s.blocks));
            assert_eq!(s.kernels.len(), s.blocks);
            assert!(space.contains(&s));
        }
        let a: Vec<_> = (0..5).map({
            let mut r = rng::seeded(9);
            move |_| sample_spec(&space, &mut r)
        }).collect();
        let mut r = rng::seeded(9);
        assert!(a.iter().all(|s| *s == sample_spec(&space, &mut r)));
    }

    #[test]
    fn objectives_per_stage() {
        let m = Metrics::new(97.46, 1.62, 0.91);
        assert_eq!(objective(&m, Stage::Acc, 0.1).unwrap(), -97.46);
        assert!((objective(&m, Stage::AccLatency, 0.1).unwrap() - (-97.46 + 0.162)).abs() < 1e-12);
        let loihi = Metrics { accuracy: 97.40, latency_ms: 35.0, power_w: 0.0012, pdp_mj: 0.042 };
        assert!((objective(&loihi, Stage::AccPdp, 0.1).unwrap() + 2319.0476).abs() < 1e-3);
        let cheaper = Metrics { pdp_mj: 0.03, ..loihi };
        assert!(objective(&cheaper, Stage::AccPdp, 0.1).unwrap() < objective(&loihi, Stage::AccPdp, 0.1).unwrap());
        let zero = Metrics { pdp_mj: 0.0, ..loihi };
        assert!(matches!(objective(&zero, Stage::AccPdp, 0.1), Err(NasError::Objective(_))));
    }

    #[test]
    fn stage_schedule_splits_budget() {
        let c = SearchConfig { budget: 10, ..Default::default() };
        let stages: Vec<Stage> = (0..10).map(|i| c.stage_of(i)).collect();
        assert_eq!(stages.iter().filter(|s| **s == Stage::Acc).count(), 4);
        assert_eq!(stages.iter().filter(|s| **s == Stage::AccLatency).count(), 3);
        assert_eq!(stages[9], Stage::AccPdp);
    }

    #[test]
    fn budget_one_gives_one_best_trial() {
        let c = SearchConfig { budget: 1, ..Default::default() };
        let mut ledger = SearchLedger::in_memory();
        search(&c, &mut AnalyticSurrogate, &mut ledger).unwrap();
        assert_eq!(ledger.trials.len(), 1);
        let best = ledger.best_per_stage();
        assert_eq!(best.len(), 1);
        assert_eq!(best[0].index, 0);
    }

    #[test]
    fn failed_evaluations_do_not_stop_the_search() {
        let c = SearchConfig { budget: 12, ..Default::default() };
        let mut ledger = SearchLedger::in_memory();
        let mut flaky = |spec: &ModelSpec, _| {
            if spec.blocks == 4 {
                Err("out of memory".to_string())
            } else {
                Ok(AnalyticSurrogate::metrics(spec))
            }
        };
        search(&c, &mut flaky, &mut ledger).unwrap();
        assert_eq!(ledger.trials.len(), 12);
        for t in &ledger.trials {
            assert_eq!(t.metrics().is_none(), t.spec.blocks == 4);
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        let cfg = SearchConfig { budget: 30, seed: 4, ..Default::default() };
        let mut whole = SearchLedger::open(&path).unwrap();
        search(&cfg, &mut AnalyticSurrogate, &mut whole).unwrap();
        let full = std::fs::read_to_string(&path).unwrap();
        // Cut the run short after 13 trials, then resume from the file.
        let head: String = full.lines().take(13).map(|l| format!("{l}\n")).collect();
        std::fs::write(&path, head).unwrap();
        let mut resumed = SearchLedger::open(&path).unwrap();
        assert_eq!(resumed.trials.len(), 13);
        search(&cfg, &mut AnalyticSurrogate, &mut resumed).unwrap();
        assert_eq!(resumed.trials.last().unwrap().index, 29);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), full);
        assert_eq!(resumed.best_per_stage(), whole.best_per_stage());
    }

    #[test]
    fn replay_reproduces_best_picks() {
        let mut ledger = SearchLedger::in_memory();
        search(&surrogate_config(2), &mut AnalyticSurrogate, &mut ledger).unwrap();
        let replayed = SearchLedger::from_jsonl(&ledger.to_jsonl().unwrap()).unwrap();
        assert_eq!(replayed.trials, ledger.trials);
        assert_eq!(replayed.best_per_stage(), ledger.best_per_stage());
    }

    #[test]
    fn ledger_rejects_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.jsonl");
        let mut ledger = SearchLedger::open(&path).unwrap();
        search(&SearchConfig { budget: 3, ..Default::default() }, &mut AnalyticSurrogate, &mut ledger).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let without_first: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        std::fs::write(&path, without_first).unwrap();
        assert!(matches!(SearchLedger::open(&path), Err(NasError::Ledger { line: 1, .. })));
    }

    #[test]
    fn full_exploration_is_grid_random() {
        let c = SearchConfig { budget: 600, exploration: 1.0, ..Default::default() };
        let mut ledger = SearchLedger::in_memory();
        search(&c, &mut AnalyticSurrogate, &mut ledger).unwrap();
        assert!(ledger.trials.iter().all(|t| t.explored));
        let mut blocks = [0usize; 3];
        let mut k1 = [0usize; 6];
        for t in &ledger.trials {
            blocks[t.spec.blocks - 2] += 1;
            k1[(t.spec.kernels[0] - 6) / 2] += 1;
        }
        // Chi-square against uniform: 5.99 and 11.07 are the 5% critical
        // values for 2 and 5 degrees of freedom.
        let chi = |c: &[usize]| {
            let e = 600.0 / c.len() as f64;
            c.iter().map(|&o| (o as f64 - e).powi(2) / e).sum::<f64>()
        };
        assert!(chi(&blocks) < 5.99 * 2.0, "{blocks:?}");
        assert!(chi(&k1) < 11.07 * 2.0, "{k1:?}");
    }

    #[test]
    fn surrogate_peaks_at_k1_twelve() {
        let space = SearchSpace::standard();
        let (best, _) = brute_force_optimum(&space, Stage::Acc, 0.1, AnalyticSurrogate::metrics).unwrap();
        assert_eq!(best.kernels[0], 12);
    }

    #[test]
    fn search_beats_random_on_surrogate() {
        let space = SearchSpace::standard();
        let (target, _) = brute_force_optimum(&space, Stage::AccPdp, 0.1, AnalyticSurrogate::metrics).unwrap();
        let found = (0..20)
            .filter(|&seed| {
                let mut ledger = SearchLedger::in_memory();
                search(&surrogate_config(seed), &mut AnalyticSurrogate, &mut ledger).unwrap();
                trials_to(&ledger, &target).is_some()
            })
            .count();
        assert!(found >= 19, "found the optimum for {found} of 20 seeds");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn best_objective_never_worsens_within_a_stage(seed in 0u64..1000) {
            let mut ledger = SearchLedger::in_memory();
            search(&SearchConfig { budget: 25, seed, ..Default::default() }, &mut AnalyticSurrogate, &mut ledger).unwrap();
            for stage in Stage::ALL {
                let mut best = f64::INFINITY;
                for t in ledger.trials.iter().filter(|t| t.stage == stage) {
                    if let Status::Done { objective, .. } = t.status {
                        let next = best.min(objective);
                        prop_assert!(next <= best);
                        best = next;
                    }
                }
            }
            prop_assert!(ledger.trials.iter().all(|t| SearchSpace::standard().contains(&t.spec)));
        }
    }
}
