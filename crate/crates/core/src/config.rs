//! Run configuration shared across commands, with dotted-key config files
//! and content hashing for reproducibility manifests.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key: {0}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config file is not a JSON object of dotted keys: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Which closed form the affinity kernel uses.
///
/// `AsPrinted` divides the squared distance by the summed squared radii, so
/// larger radii make the kernel larger at fixed distance. The
/// `UncertaintyPenalizing` variant multiplies instead, so inflated radii
/// attenuate affinity. Both are exposed because downstream consumers expect
/// the first while the second matches the "uncertainty discounts confidence"
/// reading; tests assert the monotonicity each variant actually has.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    #[default]
    AsPrinted,
    UncertaintyPenalizing,
}

impl fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelVariant::AsPrinted => write!(f, "as_printed"),
            KernelVariant::UncertaintyPenalizing => write!(f, "uncertainty_penalizing"),
        }
    }
}

impl FromStr for KernelVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "as_printed" => Ok(KernelVariant::AsPrinted),
            "uncertainty_penalizing" => Ok(KernelVariant::UncertaintyPenalizing),
            other => Err(format!(
                "unknown kernel variant {other:?}; expected as_printed or uncertainty_penalizing"
            )),
        }
    }
}

/// Model variants used for component knock-out comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    FixedRadius,
    FixedCurvature,
    NoTransitivity,
    Euclidean,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::FixedRadius,
        Ablation::FixedCurvature,
        Ablation::NoTransitivity,
        Ablation::Euclidean,
    ];

    /// Row label used in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "Full model",
            Ablation::FixedRadius => "Fixed r_i",
            Ablation::FixedCurvature => "Fixed kappa",
            Ablation::NoTransitivity => "No transitivity",
            Ablation::Euclidean => "Euclidean geometry",
        }
    }

    pub fn freezes_radius(self) -> bool {
        matches!(self, Ablation::FixedRadius)
    }

    pub fn freezes_curvature(self) -> bool {
        matches!(self, Ablation::FixedCurvature | Ablation::Euclidean)
    }

    pub fn is_euclidean(self) -> bool {
        matches!(self, Ablation::Euclidean)
    }

    /// Cap on tag hops, when this variant restricts path depth.
    pub fn max_hops_cap(self) -> Option<usize> {
        match self {
            Ablation::NoTransitivity => Some(1),
            _ => None,
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Ablation::Full => "full",
            Ablation::FixedRadius => "fixed_radius",
            Ablation::FixedCurvature => "fixed_curvature",
            Ablation::NoTransitivity => "no_transitivity",
            Ablation::Euclidean => "euclidean",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Ablation::Full),
            "fixed_radius" => Ok(Ablation::FixedRadius),
            "fixed_curvature" => Ok(Ablation::FixedCurvature),
            "no_transitivity" => Ok(Ablation::NoTransitivity),
            "euclidean" => Ok(Ablation::Euclidean),
            other => Err(format!("unknown ablation {other:?}")),
        }
    }
}

/// How calibration confidence/hit pairs are gathered from ranked lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EceMode {
    /// One pair per instance: the top-ranked item's score, hit iff it is
    /// the positive.
    #[default]
    TopOne,
    /// One pair per candidate: its score, hit iff it is the positive.
    PerCandidate,
}

impl FromStr for EceMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "top_one" => Ok(EceMode::TopOne),
            "per_candidate" => Ok(EceMode::PerCandidate),
            other => Err(format!("unknown ece mode {other:?}")),
        }
    }
}

impl fmt::Display for EceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EceMode::TopOne => write!(f, "top_one"),
            EceMode::PerCandidate => write!(f, "per_candidate"),
        }
    }
}

/// Whether list diversity is reported as a fraction of the candidate tag
/// pool or as a raw tag count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiversityMode {
    #[default]
    Normalized,
    Absolute,
}

impl FromStr for DiversityMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normalized" => Ok(DiversityMode::Normalized),
            "absolute" => Ok(DiversityMode::Absolute),
            other => Err(format!("unknown diversity mode {other:?}")),
        }
    }
}

impl fmt::Display for DiversityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiversityMode::Normalized => write!(f, "normalized"),
            DiversityMode::Absolute => write!(f, "absolute"),
        }
    }
}

/// Resolved configuration for a run: defaults, overlaid by a dotted-key
/// JSON config file, overlaid by command-line flags.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub interactions: Option<PathBuf>,
    pub item_tags: Option<PathBuf>,
    pub has_header: bool,
    pub rating_min: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub n_negatives: usize,
    pub cooccur_threshold: usize,
    pub min_tag_items: usize,
    pub min_tag_len: usize,
    pub beam_width: usize,
    pub max_hops: usize,
    pub margin: f64,
    pub reg_weight: f64,
    pub curv_margin: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub dim: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub ablation: Ablation,
    pub kernel_variant: KernelVariant,
    pub eval_k: usize,
    pub ece_bins: usize,
    pub ece_mode: EceMode,
    pub diversity_mode: DiversityMode,
    pub seed: u64,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            interactions: None,
            item_tags: None,
            has_header: false,
            rating_min: 1.0,
            train_frac: 0.8,
            val_frac: 0.1,
            test_frac: 0.1,
            n_negatives: 100,
            cooccur_threshold: 2,
            min_tag_items: 2,
            min_tag_len: 2,
            beam_width: 5,
            max_hops: 3,
            margin: 1.0,
            reg_weight: 0.1,
            curv_margin: 0.1,
            lr: 1e-3,
            batch_size: 1024,
            dim: 20,
            patience: 10,
            max_epochs: 100,
            ablation: Ablation::Full,
            kernel_variant: KernelVariant::AsPrinted,
            eval_k: 10,
            ece_bins: 10,
            ece_mode: EceMode::TopOne,
            diversity_mode: DiversityMode::Normalized,
            seed: 42,
            threads: 0,
        }
    }
}

macro_rules! dotted_keys {
    ($self:ident, $key:ident, $value:ident, { $($name:literal => $setter:expr,)* }) => {
        match $key {
            $($name => $setter,)*
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
    };
}

fn as_f64(key: &str, v: &serde_json::Value) -> Result<f64, ConfigError> {
    v.as_f64().ok_or_else(|| ConfigError::InvalidValue {
        key: key.to_string(),
        reason: format!("expected number, got {v}"),
    })
}

fn as_usize(key: &str, v: &serde_json::Value) -> Result<usize, ConfigError> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| ConfigError::InvalidValue {
            key: key.to_string(),
            reason: format!("expected non-negative integer, got {v}"),
        })
}

fn as_u64(key: &str, v: &serde_json::Value) -> Result<u64, ConfigError> {
    v.as_u64().ok_or_else(|| ConfigError::InvalidValue {
        key: key.to_string(),
        reason: format!("expected non-negative integer, got {v}"),
    })
}

fn as_bool(key: &str, v: &serde_json::Value) -> Result<bool, ConfigError> {
    v.as_bool().ok_or_else(|| ConfigError::InvalidValue {
        key: key.to_string(),
        reason: format!("expected boolean, got {v}"),
    })
}

fn as_str<'v>(key: &str, v: &'v serde_json::Value) -> Result<&'v str, ConfigError> {
    v.as_str().ok_or_else(|| ConfigError::InvalidValue {
        key: key.to_string(),
        reason: format!("expected string, got {v}"),
    })
}

fn parse_enum<T: FromStr<Err = String>>(key: &str, v: &serde_json::Value) -> Result<T, ConfigError> {
    as_str(key, v)?
        .parse()
        .map_err(|reason| ConfigError::InvalidValue {
            key: key.to_string(),
            reason,
        })
}

impl RunConfig {
    /// Applies one dotted key from a config file. Unknown keys are errors.
    pub fn set_dotted(&mut self, key: &str, value: &serde_json::Value) -> Result<(), ConfigError> {
        dotted_keys!(self, key, value, {
            "data.interactions" => self.interactions = Some(PathBuf::from(as_str(key, value)?)),
            "data.item_tags" => self.item_tags = Some(PathBuf::from(as_str(key, value)?)),
            "data.has_header" => self.has_header = as_bool(key, value)?,
            "data.rating_min" => self.rating_min = as_f64(key, value)?,
            "data.train_frac" => self.train_frac = as_f64(key, value)?,
            "data.val_frac" => self.val_frac = as_f64(key, value)?,
            "data.test_frac" => self.test_frac = as_f64(key, value)?,
            "data.n_negatives" => self.n_negatives = as_usize(key, value)?,
            "graph.cooccur_threshold" => self.cooccur_threshold = as_usize(key, value)?,
            "graph.min_tag_items" => self.min_tag_items = as_usize(key, value)?,
            "graph.min_tag_len" => self.min_tag_len = as_usize(key, value)?,
            "beam.width" => self.beam_width = as_usize(key, value)?,
            "beam.max_hops" => self.max_hops = as_usize(key, value)?,
            "train.margin" => self.margin = as_f64(key, value)?,
            "train.reg_weight" => self.reg_weight = as_f64(key, value)?,
            "train.curv_margin" => self.curv_margin = as_f64(key, value)?,
            "train.lr" => self.lr = as_f64(key, value)?,
            "train.batch_size" => self.batch_size = as_usize(key, value)?,
            "train.dim" => self.dim = as_usize(key, value)?,
            "train.patience" => self.patience = as_usize(key, value)?,
            "train.max_epochs" => self.max_epochs = as_usize(key, value)?,
            "train.ablation" => self.ablation = parse_enum(key, value)?,
            "train.kernel_variant" => self.kernel_variant = parse_enum(key, value)?,
            "eval.k" => self.eval_k = as_usize(key, value)?,
            "eval.ece_bins" => self.ece_bins = as_usize(key, value)?,
            "eval.ece_mode" => self.ece_mode = parse_enum(key, value)?,
            "eval.diversity_mode" => self.diversity_mode = parse_enum(key, value)?,
            "seed" => self.seed = as_u64(key, value)?,
            "threads" => self.threads = as_usize(key, value)?,
        });
        Ok(())
    }

    /// Loads overrides from a JSON object of dotted keys, e.g.
    /// `{"train.lr": 0.0005, "beam.width": 8}`.
    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let doc: BTreeMap<String, serde_json::Value> = serde_json::from_str(&text)?;
        for (key, value) in &doc {
            self.set_dotted(key, value)?;
        }
        Ok(())
    }

    /// Canonical dotted-key rendering used for hashing and manifests.
    /// Thread count and file paths are excluded: neither changes what a run
    /// computes, only where inputs come from and how fast.
    pub fn canonical_map(&self) -> BTreeMap<String, serde_json::Value> {
        use serde_json::json;
        let mut m = BTreeMap::new();
        m.insert("data.has_header".into(), json!(self.has_header));
        m.insert("data.rating_min".into(), json!(self.rating_min));
        m.insert("data.train_frac".into(), json!(self.train_frac));
        m.insert("data.val_frac".into(), json!(self.val_frac));
        m.insert("data.test_frac".into(), json!(self.test_frac));
        m.insert("data.n_negatives".into(), json!(self.n_negatives));
        m.insert("graph.cooccur_threshold".into(), json!(self.cooccur_threshold));
        m.insert("graph.min_tag_items".into(), json!(self.min_tag_items));
        m.insert("graph.min_tag_len".into(), json!(self.min_tag_len));
        m.insert("beam.width".into(), json!(self.beam_width));
        m.insert("beam.max_hops".into(), json!(self.max_hops));
        m.insert("train.margin".into(), json!(self.margin));
        m.insert("train.reg_weight".into(), json!(self.reg_weight));
        m.insert("train.curv_margin".into(), json!(self.curv_margin));
        m.insert("train.lr".into(), json!(self.lr));
        m.insert("train.batch_size".into(), json!(self.batch_size));
        m.insert("train.dim".into(), json!(self.dim));
        m.insert("train.patience".into(), json!(self.patience));
        m.insert("train.max_epochs".into(), json!(self.max_epochs));
        m.insert("train.ablation".into(), json!(self.ablation.to_string()));
        m.insert("train.kernel_variant".into(), json!(self.kernel_variant.to_string()));
        m.insert("eval.k".into(), json!(self.eval_k));
        m.insert("eval.ece_bins".into(), json!(self.ece_bins));
        m.insert("eval.ece_mode".into(), json!(self.ece_mode.to_string()));
        m.insert("eval.diversity_mode".into(), json!(self.diversity_mode.to_string()));
        m.insert("seed".into(), json!(self.seed));
        m
    }

    /// Hash of the canonical configuration, hex, 16 chars.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(&self.canonical_map()).expect("config serializes");
        crate::config::short_hash(canon.as_bytes())
    }

    /// Basic cross-field validation shared by all commands.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let sum = self.train_frac + self.val_frac + self.test_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ConfigError::InvalidValue {
                key: "data.train_frac/val_frac/test_frac".into(),
                reason: format!("fractions must sum to 1, got {sum}"),
            });
        }
        if self.train_frac <= 0.0 || self.val_frac < 0.0 || self.test_frac < 0.0 {
            return Err(ConfigError::InvalidValue {
                key: "data.train_frac".into(),
                reason: "train fraction must be positive, val/test non-negative".into(),
            });
        }
        for (key, v) in [
            ("beam.width", self.beam_width),
            ("beam.max_hops", self.max_hops),
            ("train.batch_size", self.batch_size),
            ("train.dim", self.dim),
            ("eval.k", self.eval_k),
            ("eval.ece_bins", self.ece_bins),
        ] {
            if v == 0 {
                return Err(ConfigError::InvalidValue {
                    key: key.into(),
                    reason: "must be positive".into(),
                });
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(ConfigError::InvalidValue {
                key: "train.lr".into(),
                reason: format!("must be positive and finite, got {}", self.lr),
            });
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(ConfigError::InvalidValue {
                key: "train.margin".into(),
                reason: format!("must be non-negative, got {}", self.margin),
            });
        }
        if !(self.reg_weight.is_finite() && self.reg_weight >= 0.0) {
            return Err(ConfigError::InvalidValue {
                key: "train.reg_weight".into(),
                reason: format!("must be non-negative, got {}", self.reg_weight),
            });
        }
        Ok(())
    }
}

/// First 16 hex characters of the SHA-256 of `bytes`.
pub fn short_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    hex_string(&digest[..8])
}

/// Full SHA-256 of a file's contents, hex.
pub fn file_hash(path: &std::path::Path) -> std::io::Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    Ok(hex_string(&Sha256::digest(&bytes)))
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        use std::fmt::Write;
        write!(s, "{b:02x}").unwrap();
    }
    s
}
