//! Maps heterogeneous benchmark scores onto 0-100 and aggregates them into
//! an overall average and capability dimensions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error("missing benchmark {0}")]
    MissingBenchmark(Benchmark),
    #[error("benchmark {0} given more than once")]
    DuplicateBenchmark(Benchmark),
    #[error("{benchmark} score {raw} is outside [{min}, {max}]")]
    OutOfDomain { benchmark: Benchmark, raw: f64, min: f64, max: f64 },
    #[error("dimension {dimension} needs a sub-score from {benchmark}")]
    MissingContributor { dimension: Dimension, benchmark: Benchmark },
    #[error("no sub-scores given")]
    MissingSubscores,
}

/// Affine map from a benchmark's native range onto [0, 100].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleSpec {
    /// 0..100, identity.
    Percent,
    /// 0..1, times 100.
    Unit,
    /// 0..10, times 10.
    Ten,
    /// -100..100, plus 100 then halved.
    Signed,
}

impl ScaleSpec {
    pub fn domain(self) -> (f64, f64) {
        match self {
            ScaleSpec::Percent => (0.0, 100.0),
            ScaleSpec::Unit => (0.0, 1.0),
            ScaleSpec::Ten => (0.0, 10.0),
            ScaleSpec::Signed => (-100.0, 100.0),
        }
    }

    /// The map itself, without a domain check.
    pub fn apply(self, raw: f64) -> f64 {
        match self {
            ScaleSpec::Percent => raw,
            ScaleSpec::Unit => raw * 100.0,
            ScaleSpec::Ten => raw * 10.0,
            ScaleSpec::Signed => (raw + 100.0) / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Benchmark {
    CompassArena,
    FoFo,
    AlignBench,
    AlpacaEval,
    ArenaHard,
    FollowBench,
    #[serde(rename = "MTBench101")]
    MtBench101,
    WildBench,
}

impl Benchmark {
    pub const ALL: [Benchmark; 8] = [
        Benchmark::CompassArena,
        Benchmark::FoFo,
        Benchmark::AlignBench,
        Benchmark::AlpacaEval,
        Benchmark::ArenaHard,
        Benchmark::FollowBench,
        Benchmark::MtBench101,
        Benchmark::WildBench,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::CompassArena => "CompassArena",
            Benchmark::FoFo => "FoFo",
            Benchmark::AlignBench => "AlignBench",
            Benchmark::AlpacaEval => "AlpacaEval",
            Benchmark::ArenaHard => "ArenaHard",
            Benchmark::FollowBench => "FollowBench",
            Benchmark::MtBench101 => "MTBench101",
            Benchmark::WildBench => "WildBench",
        }
    }

    pub fn scale(self) -> ScaleSpec {
        match self {
            Benchmark::CompassArena | Benchmark::AlpacaEval | Benchmark::ArenaHard => ScaleSpec::Percent,
            Benchmark::FoFo | Benchmark::FollowBench => ScaleSpec::Unit,
            Benchmark::AlignBench | Benchmark::MtBench101 => ScaleSpec::Ten,
            Benchmark::WildBench => ScaleSpec::Signed,
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn fold(s: &str) -> String {
    s.chars()
        .filter(char::is_ascii_alphanumeric)
        .collect::<String>()
        .to_ascii_lowercase()
}

impl FromStr for Benchmark {
    type Err = EvalError;

    /// Case, punctuation and version suffixes are ignored:
    /// `AlignBenchv1.1`, `alpaca_eval_v2` and `MT-Bench-101` all resolve.
    fn from_str(s: &str) -> Result<Self, EvalError> {
        let b = match fold(s).as_str() {
            "compassarena" => Benchmark::CompassArena,
            "fofo" => Benchmark::FoFo,
            "alignbench" | "alignbenchv11" | "alignbenchv1" => Benchmark::AlignBench,
            "alpacaeval" | "alpacaevalv2" | "alpacaeval2" => Benchmark::AlpacaEval,
            "arenahard" => Benchmark::ArenaHard,
            "followbench" => Benchmark::FollowBench,
            "mtbench101" => Benchmark::MtBench101,
            "wildbench" => Benchmark::WildBench,
            _ => return Err(EvalError::UnknownBenchmark(s.to_owned())),
        };
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Math,
    Task,
    Creation,
    RolePlay,
    #[serde(rename = "QA")]
    Qa,
    Chat,
    #[serde(rename = "IF")]
    If,
    Language,
}

impl Dimension {
    pub const ALL: [Dimension; 8] = [
        Dimension::Math,
        Dimension::Task,
        Dimension::Creation,
        Dimension::RolePlay,
        Dimension::Qa,
        Dimension::Chat,
        Dimension::If,
        Dimension::Language,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Math => "Math",
            Dimension::Task => "Task",
            Dimension::Creation => "Creation",
            Dimension::RolePlay => "RolePlay",
            Dimension::Qa => "QA",
            Dimension::Chat => "Chat",
            Dimension::If => "IF",
            Dimension::Language => "Language",
        }
    }

    /// Benchmarks whose sub-scores feed this dimension.
    pub fn contributors(self) -> &'static [Benchmark] {
        use Benchmark::*;
        match self {
            Dimension::Math => &[AlignBench, CompassArena],
            Dimension::Task => &[AlignBench, ArenaHard, MtBench101],
            Dimension::Creation => &[AlignBench, CompassArena, MtBench101, WildBench],
            Dimension::RolePlay => &[AlignBench, AlpacaEval, WildBench],
            Dimension::Qa => &[AlignBench, CompassArena],
            Dimension::Chat => &[AlignBench, AlpacaEval, ArenaHard, MtBench101, WildBench],
            Dimension::If => &[FoFo, FollowBench],
            Dimension::Language => &[AlignBench, CompassArena],
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dimension {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        let d = match fold(s).as_str() {
            "math" => Dimension::Math,
            "task" => Dimension::Task,
            "creation" => Dimension::Creation,
            "roleplay" | "roleplaying" => Dimension::RolePlay,
            "qa" => Dimension::Qa,
            "chat" => Dimension::Chat,
            "if" | "instructionfollowing" => Dimension::If,
            "language" => Dimension::Language,
            _ => return Err(EvalError::UnknownDimension(s.to_owned())),
        };
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkScore {
    pub benchmark: Benchmark,
    pub raw: f64,
}

impl BenchmarkScore {
    pub fn new(benchmark: Benchmark, raw: f64) -> Self {
        Self { benchmark, raw }
    }
}

/// `raw` mapped onto [0, 100] with the benchmark's scale.
pub fn normalize(score: BenchmarkScore) -> Result<f64, EvalError> {
    let scale = score.benchmark.scale();
    let (min, max) = scale.domain();
    if !(score.raw >= min && score.raw <= max) {
        return Err(EvalError::OutOfDomain {
            benchmark: score.benchmark,
            raw: score.raw,
            min,
            max,
        });
    }
    Ok(scale.apply(score.raw))
}

/// Mean of the normalized scores. Exactly one score per benchmark is
/// required.
pub fn average_normalized(scores: &[BenchmarkScore]) -> Result<f64, EvalError> {
    let mut seen = BTreeMap::new();
    for s in scores {
        if seen.insert(s.benchmark, normalize(*s)?).is_some() {
            return Err(EvalError::DuplicateBenchmark(s.benchmark));
        }
    }
    if let Some(missing) = Benchmark::ALL.into_iter().find(|b| !seen.contains_key(b)) {
        return Err(EvalError::MissingBenchmark(missing));
    }
    Ok(seen.values().sum::<f64>() / seen.len() as f64)
}

/// Unweighted mean of the contributors' normalized sub-scores. Each
/// sub-score is on its parent benchmark's scale; extra benchmarks are
/// ignored.
pub fn aggregate_dimension(dim: Dimension, subscores: &BTreeMap<Benchmark, f64>) -> Result<f64, EvalError> {
    let contributors = dim.contributors();
    let mut total = 0.0;
    for &b in contributors {
        let raw = *subscores.get(&b).ok_or(EvalError::MissingContributor { dimension: dim, benchmark: b })?;
        total += normalize(BenchmarkScore::new(b, raw))?;
    }
    Ok(total / contributors.len() as f64)
}

/// One model's raw scores as read from a report input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreInput {
    pub model: String,
    pub scores: BTreeMap<String, f64>,
    /// `benchmark -> dimension -> raw`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subscores: Option<BTreeMap<String, BTreeMap<String, f64>>>,
    /// A previously published average to compare against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_average: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub model: String,
    pub normalized: BTreeMap<Benchmark, f64>,
    pub average: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_average: Option<f64>,
    /// `average - reference_average`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dimensions: Option<BTreeMap<Dimension, f64>>,
}

fn parse_scores(raw: &BTreeMap<String, f64>) -> Result<Vec<BenchmarkScore>, EvalError> {
    let mut out: Vec<BenchmarkScore> = Vec::with_capacity(raw.len());
    for (name, value) in raw {
        let b: Benchmark = name.parse()?;
        if out.iter().any(|s| s.benchmark == b) {
            return Err(EvalError::DuplicateBenchmark(b));
        }
        out.push(BenchmarkScore::new(b, *value));
    }
    Ok(out)
}

/// Normalized scores, average and, when `dimensions` is set, all eight
/// capability dimensions.
pub fn build_report(input: &ScoreInput, dimensions: bool) -> Result<Report, EvalError> {
    let scores = parse_scores(&input.scores)?;
    let average = average_normalized(&scores)?;
    let normalized = scores
        .iter()
        .map(|s| Ok((s.benchmark, normalize(*s)?)))
        .collect::<Result<BTreeMap<_, _>, EvalError>>()?;
    let dims = if dimensions {
        let subs = input.subscores.as_ref().ok_or(EvalError::MissingSubscores)?;
        let mut by_dim: BTreeMap<Dimension, BTreeMap<Benchmark, f64>> = BTreeMap::new();
        for (bench, per_dim) in subs {
            let b: Benchmark = bench.parse()?;
            for (dim, raw) in per_dim {
                let d: Dimension = dim.parse()?;
                if by_dim.entry(d).or_default().insert(b, *raw).is_some() {
                    return Err(EvalError::DuplicateBenchmark(b));
                }
            }
        }
        let empty = BTreeMap::new();
        Some(
            Dimension::ALL
                .into_iter()
                .map(|d| Ok((d, aggregate_dimension(d, by_dim.get(&d).unwrap_or(&empty))?)))
                .collect::<Result<BTreeMap<_, _>, EvalError>>()?,
        )
    } else {
        None
    };
    Ok(Report {
        model: input.model.clone(),
        normalized,
        average,
        reference_average: input.reference_average,
        residual: input.reference_average.map(|r| average - r),
        dimensions: dims,
    })
}

/// Rounds for display to the two decimals published tables use.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}
