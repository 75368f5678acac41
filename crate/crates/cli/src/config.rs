use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use mpgnn_lab::{Aggregator, Caps, GnnModel, ValueDomain};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// One batch run: shared settings plus the experiment items.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub caps: CapsConfig,
    #[serde(default, rename = "experiment")]
    pub experiments: Vec<Experiment>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Enumeration limits; every field has a safe default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapsConfig {
    pub graph_n: usize,
    pub star_n: usize,
    pub sample_count: u64,
    pub multisets: u64,
}

impl Default for CapsConfig {
    fn default() -> Self {
        let caps = Caps::default();
        CapsConfig {
            graph_n: caps.graph_n,
            star_n: caps.star_n,
            sample_count: caps.sample_count,
            multisets: mpgnn_lab::aggregation::DEFAULT_ENUMERATION_CAP as u64,
        }
    }
}

impl CapsConfig {
    pub fn lab(&self) -> Caps {
        Caps { graph_n: self.graph_n, star_n: self.star_n, sample_count: self.sample_count }
    }
}

/// A list of naturals written as `a`, `a..b` (inclusive), `a,b,c` or
/// `2^a..2^b`; TOML integers and integer arrays are accepted too.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NRange {
    text: String,
    values: Vec<u64>,
}

impl NRange {
    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn usizes(&self) -> Vec<usize> {
        self.values.iter().map(|&v| v as usize).collect()
    }

    pub fn max(&self) -> u64 {
        self.values.iter().copied().max().unwrap_or(0)
    }
}

fn parse_atom(s: &str) -> Result<u64, String> {
    let s = s.trim();
    if let Some(e) = s.strip_prefix("2^") {
        let e: u32 = e.parse().map_err(|_| format!("bad exponent in {s:?}"))?;
        return 1u64.checked_shl(e).filter(|_| e < 64).ok_or_else(|| format!("{s} overflows"));
    }
    s.parse().map_err(|_| format!("{s:?} is not a natural number"))
}

impl FromStr for NRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let text = s.trim();
        let values = if let Some((a, b)) = text.split_once("..") {
            let pow = a.trim().starts_with("2^");
            if pow != b.trim().starts_with("2^") {
                return Err(format!("range {text:?} mixes powers and plain numbers"));
            }
            let (lo, hi) = if pow {
                (parse_atom(&a.trim()[2..])?, parse_atom(&b.trim()[2..])?)
            } else {
                (parse_atom(a)?, parse_atom(b)?)
            };
            if lo > hi {
                return Err(format!("range {text:?} is empty"));
            }
            if pow {
                (lo..=hi).map(|e| parse_atom(&format!("2^{e}"))).collect::<Result<_, _>>()?
            } else {
                (lo..=hi).collect()
            }
        } else {
            text.split(',').map(parse_atom).collect::<Result<Vec<_>, _>>()?
        };
        if values.is_empty() {
            return Err("empty range".to_string());
        }
        Ok(NRange { text: text.to_string(), values })
    }
}

impl fmt::Display for NRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl Serialize for NRange {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for NRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            One(u64),
            Many(Vec<u64>),
            Text(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::One(v) => v.to_string(),
            Raw::Many(vs) => vs.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            Raw::Text(t) => t,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// A built-in model name or a path to a JSON model file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ModelRef {
    Constant(usize),
    NeighbourSum,
    Random(u64),
    File(PathBuf),
}

impl FromStr for ModelRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = |what: &str| format!("bad {what} in model reference {s:?}");
        Ok(match s.split_once(':') {
            _ if s == "constant" => ModelRef::Constant(1),
            _ if s == "neighbour-sum" => ModelRef::NeighbourSum,
            Some(("constant", d)) => ModelRef::Constant(d.parse().map_err(|_| bad("depth"))?),
            Some(("random", seed)) => ModelRef::Random(seed.parse().map_err(|_| bad("seed"))?),
            _ if s.is_empty() => return Err("empty model reference".to_string()),
            _ => ModelRef::File(PathBuf::from(s)),
        })
    }
}

impl TryFrom<String> for ModelRef {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<ModelRef> for String {
    fn from(m: ModelRef) -> String {
        m.to_string()
    }
}

impl fmt::Display for ModelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelRef::Constant(1) => f.write_str("constant"),
            ModelRef::Constant(d) => write!(f, "constant:{d}"),
            ModelRef::NeighbourSum => f.write_str("neighbour-sum"),
            ModelRef::Random(seed) => write!(f, "random:{seed}"),
            ModelRef::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl ModelRef {
    pub fn load(&self, base: &Path) -> Result<GnnModel> {
        match self {
            ModelRef::Constant(d) if *d == 0 => bail!("constant model depth must be at least 1"),
            ModelRef::Constant(d) => Ok(GnnModel::constant(*d)),
            ModelRef::NeighbourSum => Ok(GnnModel::neighbour_sum()),
            ModelRef::Random(seed) => Ok(GnnModel::random(*seed)),
            ModelRef::File(p) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading model file {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing model file {}", path.display()))
            }
        }
    }

    fn file(&self) -> Option<&Path> {
        match self {
            ModelRef::File(p) => Some(p),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Exhaustive,
    Sampled,
    ReciprocalPrimes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Labeled,
    Star,
    Random,
    Complete,
    Path,
    Cycle,
}

fn all_aggregators() -> Vec<Aggregator> {
    Aggregator::ALL.to_vec()
}

fn integer_domain() -> Vec<ValueDomain> {
    vec![ValueDomain::Integer]
}

fn sampled() -> ModeName {
    ModeName::Sampled
}

fn default_agg_samples() -> usize {
    64
}

fn default_k_offset() -> u32 {
    4
}

fn default_dims() -> Vec<usize> {
    vec![2, 3, 1]
}

fn default_weight_bits() -> u32 {
    8
}

fn default_budgets() -> NRange {
    "8,16,32,64".parse().expect("literal range")
}

fn default_probe_samples() -> usize {
    200
}

fn default_compare_model() -> ModelRef {
    ModelRef::Constant(1)
}

fn one() -> u64 {
    1
}

fn half() -> String {
    "1/2".to_string()
}

/// The models of a verification item: `seeds` random models starting at the
/// run seed, then every listed reference.
pub fn model_refs(seeds: Option<u64>, models: &[ModelRef], run_seed: u64) -> Vec<ModelRef> {
    (0..seeds.unwrap_or(0))
        .map(|i| ModelRef::Random(run_seed.wrapping_add(i)))
        .chain(models.iter().cloned())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    AggProfile {
        #[serde(default)]
        name: Option<String>,
        #[serde(default = "all_aggregators")]
        aggregators: Vec<Aggregator>,
        #[serde(default = "integer_domain")]
        domains: Vec<ValueDomain>,
        #[serde(default = "sampled")]
        mode: ModeName,
        #[serde(default = "default_agg_samples")]
        samples: usize,
        n: NRange,
        /// Element budget `ceil(log2 n) + k_offset` unless `k` fixes it.
        #[serde(default = "default_k_offset")]
        k_offset: u32,
        #[serde(default)]
        k: Option<u32>,
    },
    MlpProbe {
        #[serde(default)]
        name: Option<String>,
        /// JSON MLP file; a random MLP with `dims` is sampled otherwise.
        #[serde(default)]
        mlp: Option<PathBuf>,
        #[serde(default = "default_dims")]
        dims: Vec<usize>,
        #[serde(default = "default_weight_bits")]
        weight_bits: u32,
        #[serde(default = "default_budgets")]
        budgets: NRange,
        #[serde(default = "default_probe_samples")]
        samples: usize,
    },
    StarLemma {
        #[serde(default)]
        name: Option<String>,
        n: NRange,
    },
    Expobserve {
        #[serde(default)]
        name: Option<String>,
        #[serde(default)]
        seeds: Option<u64>,
        #[serde(default)]
        models: Vec<ModelRef>,
        n: NRange,
    },
    CrBound {
        #[serde(default)]
        name: Option<String>,
        #[serde(default)]
        seeds: Option<u64>,
        #[serde(default)]
        models: Vec<ModelRef>,
        n: NRange,
    },
    CrRun {
        #[serde(default)]
        name: Option<String>,
        graph: PathBuf,
        #[serde(default)]
        t: Option<usize>,
    },
    GnnEval {
        #[serde(default)]
        name: Option<String>,
        model: ModelRef,
        graphs: Vec<PathBuf>,
    },
    Compare {
        #[serde(default)]
        name: Option<String>,
        #[serde(default = "default_compare_model")]
        model: ModelRef,
        n: NRange,
    },
    Gen {
        #[serde(default)]
        name: Option<String>,
        family: Family,
        n: NRange,
        #[serde(default = "one")]
        count: u64,
        #[serde(default = "half")]
        p: String,
    },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::AggProfile { .. } => "agg-profile",
            Experiment::MlpProbe { .. } => "mlp-probe",
            Experiment::StarLemma { .. } => "star-lemma",
            Experiment::Expobserve { .. } => "expobserve",
            Experiment::CrBound { .. } => "cr-bound",
            Experiment::CrRun { .. } => "cr-run",
            Experiment::GnnEval { .. } => "gnn-eval",
            Experiment::Compare { .. } => "compare",
            Experiment::Gen { .. } => "gen",
        }
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            Experiment::AggProfile { name, .. }
            | Experiment::MlpProbe { name, .. }
            | Experiment::StarLemma { name, .. }
            | Experiment::Expobserve { name, .. }
            | Experiment::CrBound { name, .. }
            | Experiment::CrRun { name, .. }
            | Experiment::GnnEval { name, .. }
            | Experiment::Compare { name, .. }
            | Experiment::Gen { name, .. } => name.as_deref(),
        }
    }

    pub fn set_name(&mut self, value: String) {
        match self {
            Experiment::AggProfile { name, .. }
            | Experiment::MlpProbe { name, .. }
            | Experiment::StarLemma { name, .. }
            | Experiment::Expobserve { name, .. }
            | Experiment::CrBound { name, .. }
            | Experiment::CrRun { name, .. }
            | Experiment::GnnEval { name, .. }
            | Experiment::Compare { name, .. }
            | Experiment::Gen { name, .. } => *name = Some(value),
        }
    }

    fn files(&self) -> Vec<(&'static str, &Path)> {
        match self {
            Experiment::MlpProbe { mlp: Some(p), .. } => vec![("mlp", p.as_path())],
            Experiment::Expobserve { models, .. } | Experiment::CrBound { models, .. } => {
                models.iter().filter_map(ModelRef::file).map(|p| ("models", p)).collect()
            }
            Experiment::CrRun { graph, .. } => vec![("graph", graph.as_path())],
            Experiment::GnnEval { model, graphs, .. } => model
                .file()
                .map(|p| ("model", p))
                .into_iter()
                .chain(graphs.iter().map(|g| ("graphs", g.as_path())))
                .collect(),
            Experiment::Compare { model, .. } => model.file().map(|p| ("model", p)).into_iter().collect(),
            _ => Vec::new(),
        }
    }

    /// Field-level checks that need no computation: caps, referenced files
    /// and parameter sanity.
    fn validate(&self, caps: &CapsConfig, base: &Path) -> Result<()> {
        for (field, path) in self.files() {
            if !base.join(path).is_file() {
                bail!("field `{field}`: file {} not found", base.join(path).display());
            }
        }
        let labeled_cap = |n: &NRange| -> Result<()> {
            if n.max() > caps.graph_n as u64 {
                bail!(
                    "field `n`: n={} exceeds the labeled graph enumeration cap (caps.graph_n = {})",
                    n.max(),
                    caps.graph_n
                );
            }
            Ok(())
        };
        let star_cap = |n: &NRange| -> Result<()> {
            if n.max() > caps.star_n as u64 {
                bail!("field `n`: n={} exceeds the star family cap (caps.star_n = {})", n.max(), caps.star_n);
            }
            Ok(())
        };
        match self {
            Experiment::AggProfile { aggregators, domains, samples, n, .. } => {
                if aggregators.is_empty() {
                    bail!("field `aggregators`: empty list");
                }
                if domains.is_empty() {
                    bail!("field `domains`: empty list");
                }
                if *samples as u64 > caps.sample_count {
                    bail!("field `samples`: {samples} exceeds the sample count cap (caps.sample_count = {})", caps.sample_count);
                }
                if n.values().contains(&0) {
                    bail!("field `n`: multiset sizes start at 1");
                }
            }
            Experiment::MlpProbe { dims, samples, .. } => {
                if dims.len() < 2 || dims.contains(&0) {
                    bail!("field `dims`: need at least two positive dimensions");
                }
                if *samples as u64 > caps.sample_count {
                    bail!("field `samples`: {samples} exceeds the sample count cap (caps.sample_count = {})", caps.sample_count);
                }
            }
            Experiment::StarLemma { n, .. } => star_cap(n)?,
            Experiment::Expobserve { seeds, models, n, .. } | Experiment::CrBound { seeds, models, n, .. } => {
                if seeds.unwrap_or(0) == 0 && models.is_empty() {
                    bail!("field `seeds`: give a positive seed count or a `models` list");
                }
                labeled_cap(n)?;
            }
            Experiment::Compare { n, .. } => labeled_cap(n)?,
            Experiment::Gen { family, n, count, p, .. } => {
                match family {
                    Family::Labeled => labeled_cap(n)?,
                    Family::Star => star_cap(n)?,
                    _ => {}
                }
                if *count > caps.sample_count {
                    bail!("field `count`: {count} exceeds the sample count cap (caps.sample_count = {})", caps.sample_count);
                }
                p.parse::<mpgnn_lab::Rat>().map_err(|e| anyhow!("field `p`: {e}"))?;
            }
            Experiment::CrRun { .. } | Experiment::GnnEval { .. } => {}
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn single(seed: u64, out: PathBuf, experiment: Experiment) -> Self {
        ExperimentConfig { seed, out, jobs: None, caps: CapsConfig::default(), experiments: vec![experiment] }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow!("invalid config: {e}"))
    }

    /// Names every item, then checks each; errors name the item and field.
    pub fn validate(&mut self, base: &Path) -> Result<()> {
        if self.experiments.is_empty() {
            bail!("invalid config: field `experiment`: no experiment items");
        }
        if self.jobs == Some(0) {
            bail!("invalid config: field `jobs`: must be at least 1");
        }
        let mut seen = std::collections::HashSet::new();
        for (i, e) in self.experiments.iter_mut().enumerate() {
            let name = e.name().map_or_else(|| format!("{:02}-{}", i + 1, e.kind()), str::to_string);
            let ok = !name.is_empty()
                && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
            if !ok {
                bail!("invalid config: experiment[{i}] field `name`: {name:?} must be letters, digits, '-' or '_'");
            }
            if !seen.insert(name.clone()) {
                bail!("invalid config: experiment[{i}] field `name`: {name:?} is used twice");
            }
            e.set_name(name);
            e.validate(&self.caps, base)
                .map_err(|err| anyhow!("invalid config: experiment[{i}] ({}): {err}", e.kind()))?;
        }
        Ok(())
    }
}
