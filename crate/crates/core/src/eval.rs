//! Episode-based evaluation, component ablation, parameter sweeps and the
//! hyperbolic-vs-cosine comparison.
//!
//! Every run with the same `(seed, episode, shots)` sees the same support set
//! and the same negative draws, so rows of an ablation or points of a sweep
//! are paired.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{sample_episode, EmbeddingBundle, EpisodeSpec};
use crate::inference::{classify_batch, Component, Components, FusionConfig, Metric};
use crate::poincare::EmbeddingVector;
use crate::prototype::{MeanMode, PrototypeConfig, PrototypeSet, DEFAULT_SCALE};
use crate::seed;
use crate::textbank::{AggregateMode, TextBank};
use crate::{Error, Result};

/// Episodes per shot count unless overridden.
pub const DEFAULT_EPISODES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub shots: Vec<usize>,
    pub episodes: usize,
    pub seed: u64,
    pub fusion: FusionConfig,
    pub scale: f64,
    pub mean_mode: MeanMode,
    pub aggregate: AggregateMode,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            shots: crate::data::PROTOCOL_SHOTS.to_vec(),
            episodes: DEFAULT_EPISODES,
            seed: 1,
            fusion: FusionConfig::default(),
            scale: DEFAULT_SCALE,
            mean_mode: MeanMode::Ambient,
            aggregate: AggregateMode::Normalized,
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        if self.shots.is_empty() || self.shots.contains(&0) {
            return Err(Error::invalid("shot counts must be non-empty and positive"));
        }
        if self.episodes == 0 {
            return Err(Error::invalid("episodes must be at least 1"));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::invalid(format!("scale must be positive, got {}", self.scale)));
        }
        self.fusion.validate()
    }
}

/// Configuration echo written into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub scale: f64,
    pub shots: Vec<usize>,
    pub episodes: usize,
    pub seed: u64,
    pub components: Components,
    pub mean_mode: MeanMode,
    pub metric: Metric,
    pub aggregate: AggregateMode,
}

impl From<&EvalSettings> for ReportConfig {
    fn from(s: &EvalSettings) -> Self {
        Self {
            alpha: s.fusion.alpha,
            epsilon: s.fusion.epsilon,
            tau: s.fusion.tau,
            scale: s.scale,
            shots: s.shots.clone(),
            episodes: s.episodes,
            seed: s.seed,
            components: s.fusion.components,
            mean_mode: s.mean_mode,
            metric: s.fusion.metric,
            aggregate: s.aggregate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSummary {
    pub classes: usize,
    pub dim: usize,
    pub train_items: usize,
    pub test_items: usize,
    /// True when the test split came from a separate bundle.
    pub cross_bundle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_index: u64,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotResult {
    pub shots: usize,
    pub episodes: Vec<EpisodeResult>,
    pub mean: f64,
    /// Sample standard deviation (n − 1); zero for a single episode.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub per_item_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ReportConfig,
    pub bundle: BundleSummary,
    pub results: Vec<ShotResult>,
    pub diagnostics: Vec<String>,
    pub timing: Timing,
}

impl EvalReport {
    pub fn result_for(&self, shots: usize) -> Option<&ShotResult> {
        self.results.iter().find(|r| r.shots == shots)
    }

    /// Mean accuracy over every episode of every shot count.
    pub fn overall_mean(&self) -> f64 {
        let all: Vec<f64> = self.results.iter().flat_map(|r| r.episodes.iter().map(|e| e.accuracy)).collect();
        all.iter().sum::<f64>() / all.len() as f64
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(
            s,
            "components={} metric={} alpha={} epsilon={} tau={} scale={} mean={}",
            c.components, c.metric, c.alpha, c.epsilon, c.tau, c.scale, c.mean_mode
        );
        for r in &self.results {
            let _ = writeln!(s, "{:>3}-shot  acc {:.4} ± {:.4}  ({} episodes)", r.shots, r.mean, r.std, r.episodes.len());
        }
        s
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// The support set, prototypes and negative draws of one episode are keyed
/// only by `(seed, episode_index)`, never by the fusion settings.
fn prototype_seed(seed: u64, episode_index: u64) -> u64 {
    seed::derive(seed, &[episode_index])
}

/// Test data shared by every episode of a run.
struct Prepared {
    bank: TextBank,
    test_features: Vec<EmbeddingVector>,
    test_labels: Vec<usize>,
    summary: BundleSummary,
    diagnostics: Vec<String>,
}

fn prepare(source: &EmbeddingBundle, target: Option<&EmbeddingBundle>, settings: &EvalSettings) -> Result<Prepared> {
    settings.validate()?;
    let test_bundle = target.unwrap_or(source);
    if test_bundle.class_names != source.class_names {
        return Err(Error::invalid("test bundle class names differ from the source bundle"));
    }
    if test_bundle.dim != source.dim {
        return Err(Error::Shape { expected: source.dim, got: test_bundle.dim });
    }
    let bank = source.text_bank(settings.aggregate)?;
    let mut diagnostics = source.warnings();
    diagnostics.extend(bank.diagnostics().iter().cloned());
    Ok(Prepared {
        bank,
        test_features: test_bundle.test.vectors()?,
        test_labels: test_bundle.test.labels.clone(),
        summary: BundleSummary {
            classes: source.class_count(),
            dim: source.dim,
            train_items: source.train.len(),
            test_items: test_bundle.test.len(),
            cross_bundle: target.is_some(),
        },
        diagnostics,
    })
}

fn run_prepared(source: &EmbeddingBundle, prep: &Prepared, settings: &EvalSettings) -> Result<EvalReport> {
    let start = Instant::now();
    let mut diagnostics = prep.diagnostics.clone();
    let mut classified = 0usize;
    let mut results = Vec::with_capacity(settings.shots.len());
    for &shots in &settings.shots {
        let mut episodes = Vec::with_capacity(settings.episodes);
        for e in 0..settings.episodes as u64 {
            let spec = EpisodeSpec { shots, seed: settings.seed, episode_index: e };
            let support = sample_episode(source, &spec)?;
            let protos = PrototypeSet::build(
                &support,
                &PrototypeConfig {
                    scale: settings.scale,
                    seed: prototype_seed(settings.seed, e),
                    mean_mode: settings.mean_mode,
                },
            )?;
            for d in &protos.diagnostics {
                if !diagnostics.contains(d) {
                    diagnostics.push(d.clone());
                }
            }
            let preds = classify_batch(&prep.test_features, &protos, &prep.bank, &settings.fusion, settings.scale)?;
            classified += preds.len();
            let correct = preds.iter().zip(&prep.test_labels).filter(|((p, _), &y)| *p == y).count();
            let total = preds.len();
            let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
            episodes.push(EpisodeResult { episode_index: e, correct, total, accuracy });
        }
        let accs: Vec<f64> = episodes.iter().map(|e| e.accuracy).collect();
        let (mean, std) = mean_std(&accs);
        results.push(ShotResult { shots, episodes, mean, std });
    }
    let total_seconds = start.elapsed().as_secs_f64();
    Ok(EvalReport {
        config: ReportConfig::from(settings),
        bundle: prep.summary.clone(),
        results,
        diagnostics,
        timing: Timing {
            total_seconds,
            per_item_seconds: if classified == 0 { 0.0 } else { total_seconds / classified as f64 },
        },
    })
}

/// Few-shot evaluation: for every shot count and episode, sample a support
/// set from `source`, build prototypes, and classify the test split of
/// `target` (or of `source` when `target` is `None`).
pub fn run_eval(source: &EmbeddingBundle, target: Option<&EmbeddingBundle>, settings: &EvalSettings) -> Result<EvalReport> {
    let prep = prepare(source, target, settings)?;
    run_prepared(source, &prep, settings)
}

/// The cumulative component configurations of the ablation table.
pub fn ablation_configurations() -> Vec<(&'static str, Components)> {
    use Component::*;
    let c = |items: &[Component]| Components::new(items).expect("non-empty");
    vec![
        ("itp+", c(&[ItpPos])),
        ("itp+,itp-", c(&[ItpPos, ItpNeg])),
        ("itp+,itp-,iip+", c(&[ItpPos, ItpNeg, IipPos])),
        ("itp+,itp-,iip+,iip-", c(&[ItpPos, ItpNeg, IipPos, IipNeg])),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledReport {
    pub label: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub kind: String,
    pub rows: Vec<LabeledReport>,
}

impl TableReport {
    pub fn row(&self, label: &str) -> Option<&EvalReport> {
        self.rows.iter().find(|r| r.label == label).map(|r| &r.report)
    }

    pub fn to_markdown(&self) -> String {
        let shots: Vec<usize> = self.rows.first().map(|r| r.report.results.iter().map(|s| s.shots).collect()).unwrap_or_default();
        let mut s = String::from("| configuration |");
        for n in &shots {
            let _ = write!(s, " {n}-shot |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---:|".repeat(shots.len()));
        s.push('\n');
        for row in &self.rows {
            let _ = write!(s, "| {} |", row.label);
            for r in &row.report.results {
                let _ = write!(s, " {:.2} ± {:.2} |", 100.0 * r.mean, 100.0 * r.std);
            }
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("configuration,shots,mean,std,episodes\n");
        for row in &self.rows {
            for r in &row.report.results {
                let _ = writeln!(s, "\"{}\",{},{},{},{}", row.label, r.shots, r.mean, r.std, r.episodes.len());
            }
        }
        s
    }
}

fn run_table(
    kind: &str,
    source: &EmbeddingBundle,
    target: Option<&EmbeddingBundle>,
    settings: &EvalSettings,
    rows: Vec<(String, EvalSettings)>,
) -> Result<TableReport> {
    let prep = prepare(source, target, settings)?;
    let rows = rows
        .into_iter()
        .map(|(label, s)| {
            s.validate()?;
            Ok(LabeledReport { label, report: run_prepared(source, &prep, &s)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TableReport { kind: kind.into(), rows })
}

/// One evaluation per cumulative component configuration, with paired episodes.
pub fn run_ablation(source: &EmbeddingBundle, target: Option<&EmbeddingBundle>, settings: &EvalSettings) -> Result<TableReport> {
    let rows = ablation_configurations()
        .into_iter()
        .map(|(label, components)| {
            let mut s = settings.clone();
            s.fusion.components = components;
            (label.to_string(), s)
        })
        .collect();
    run_table("ablation", source, target, settings, rows)
}

/// Hyperbolic distance versus cosine similarity in the image streams.
pub fn run_metric_comparison(
    source: &EmbeddingBundle,
    target: Option<&EmbeddingBundle>,
    settings: &EvalSettings,
) -> Result<TableReport> {
    let rows = [Metric::Hd, Metric::Ecs]
        .into_iter()
        .map(|m| {
            let mut s = settings.clone();
            s.fusion.metric = m;
            (m.to_string(), s)
        })
        .collect();
    run_table("metric", source, target, settings, rows)
}

/// Positive streams only, negative streams only, and both.
pub fn run_polarity_comparison(
    source: &EmbeddingBundle,
    target: Option<&EmbeddingBundle>,
    settings: &EvalSettings,
) -> Result<TableReport> {
    use Component::*;
    let rows = [
        ("neg", Components::new(&[IipNeg, ItpNeg])?),
        ("pos", Components::new(&[IipPos, ItpPos])?),
        ("pos+neg", Components::FULL),
    ]
    .into_iter()
    .map(|(label, c)| {
        let mut s = settings.clone();
        s.fusion.components = c;
        (label.to_string(), s)
    })
    .collect();
    run_table("polarity", source, target, settings, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Alpha,
    Epsilon,
    Scale,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(Self::Alpha),
            "epsilon" => Ok(Self::Epsilon),
            "scale" => Ok(Self::Scale),
            other => Err(Error::invalid(format!("cannot sweep {other:?} (expected alpha, epsilon or scale)"))),
        }
    }
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Alpha => "alpha",
            Self::Epsilon => "epsilon",
            Self::Scale => "scale",
        }
    }

    fn apply(self, settings: &mut EvalSettings, value: f64) {
        match self {
            Self::Alpha => settings.fusion.alpha = value,
            Self::Epsilon => settings.fusion.epsilon = value,
            Self::Scale => settings.scale = value,
        }
    }
}

/// Grid points `start, start + step, ...` up to and including `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

/// Residual-ratio grid of the sensitivity table: 0.0 to 2.0 in steps of 0.4.
pub const DEFAULT_ALPHA_GRID: &str = "0:2:0.4";

impl Grid {
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, stop, step] = parts.as_slice() else {
            return Err(Error::invalid(format!("grid {spec:?} must look like start:stop:step")));
        };
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::invalid(format!("bad grid number {s:?}")))
        };
        let g = Grid { start: num(start)?, stop: num(stop)?, step: num(step)? };
        if g.step <= 0.0 {
            return Err(Error::invalid(format!("grid step must be positive, got {}", g.step)));
        }
        if g.stop < g.start {
            return Err(Error::invalid(format!("inverted grid: stop {} < start {}", g.stop, g.start)));
        }
        Ok(g)
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| round12(self.start + i as f64 * self.step)).collect()
    }
}

/// Rounds away accumulated representation error such as `0.4 * 3 = 1.2000000000000002`.
fn round12(x: f64) -> f64 {
    let r = (x * 1e12).round() / 1e12;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub results: Vec<ShotResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub parameter: SweepParam,
    pub grid: Vec<f64>,
    pub config: ReportConfig,
    pub points: Vec<SweepPoint>,
    pub timing: Timing,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},shots,mean,std,episodes\n", self.parameter.as_str());
        for p in &self.points {
            for r in &p.results {
                let _ = writeln!(s, "{},{},{},{},{}", p.value, r.shots, r.mean, r.std, r.episodes.len());
            }
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("| {} | shots | accuracy |\n|---:|---:|---:|\n", self.parameter.as_str());
        for p in &self.points {
            for r in &p.results {
                let _ = writeln!(s, "| {} | {} | {:.2} ± {:.2} |", p.value, r.shots, 100.0 * r.mean, 100.0 * r.std);
            }
        }
        s
    }
}

pub fn run_sweep(
    source: &EmbeddingBundle,
    target: Option<&EmbeddingBundle>,
    settings: &EvalSettings,
    param: SweepParam,
    grid: &Grid,
) -> Result<SweepReport> {
    let start = Instant::now();
    let values = grid.points();
    let prep = prepare(source, target, settings)?;
    let points = values
        .iter()
        .map(|&v| {
            let mut s = settings.clone();
            param.apply(&mut s, v);
            s.validate()?;
            Ok(SweepPoint { value: v, results: run_prepared(source, &prep, &s)?.results })
        })
        .collect::<Result<Vec<_>>>()?;
    let total_seconds = start.elapsed().as_secs_f64();
    let items = values.len() * settings.shots.len() * settings.episodes * prep.test_features.len();
    Ok(SweepReport {
        parameter: param,
        grid: values,
        config: ReportConfig::from(settings),
        points,
        timing: Timing {
            total_seconds,
            per_item_seconds: if items == 0 { 0.0 } else { total_seconds / items as f64 },
        },
    })
}
