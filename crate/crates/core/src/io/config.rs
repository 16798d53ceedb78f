//! Flat `key = value` run configuration.
//!
//! A file starts from the defaults of its task, applies `preset` (graph
//! embedding only) and then every other key. Parsing either yields a fully
//! validated [`RunConfig`] or one error naming the offending line; unknown
//! and repeated keys are errors. [`RunConfig::to_text`] writes every
//! setting back out in a form that parses to the same configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::text::read_text;
use crate::embed::{Fusion, GePreset, ModelSpec, Task, TaskSpec};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::similarity::LatentDistance;
use crate::structure::AlphaSchedule;

pub const KEYS: &[&str] = &[
    "task",
    "preset",
    "seed",
    "epochs",
    "batch_size",
    "base_lr",
    "loss",
    "gamma",
    "nu_x",
    "nu_z",
    "mu_z",
    "sigma_z",
    "sigma_x",
    "fusion",
    "mask_fraction",
    "knn_k",
    "calibration_neighbors",
    "alpha2",
    "alpha2_last",
    "hop_limit",
    "deterministic",
    "model",
    "dim",
    "hidden",
    "tap",
    "latent_distance",
    "clamp_eps",
    "data",
    "labels",
    "features",
    "edges",
    "teacher",
    "out",
    "max_samples",
    "trust_k",
    "knn_eval_k",
    "test_fraction",
    "eval_max_points",
];

/// Input and output locations of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataPaths {
    /// Training inputs: IDX images or a CSV matrix.
    pub data: Option<PathBuf>,
    /// IDX labels or a `node_id label` file.
    pub labels: Option<PathBuf>,
    /// Node features of a graph (CSV).
    pub features: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    /// Teacher representations (CSV), one row per `data` row.
    pub teacher: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub trust_k: usize,
    pub knn_k: usize,
    pub test_fraction: f64,
    pub max_points: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            trust_k: 10,
            knn_k: 5,
            test_fraction: 0.2,
            max_points: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spec: TaskSpec,
    pub preset: Option<GePreset>,
    pub paths: DataPaths,
    /// Use only the first rows of `data`.
    pub max_samples: Option<usize>,
    pub eval: EvalSettings,
}

struct Entry<'a> {
    key: &'a str,
    value: &'a str,
    line: usize,
}

fn entries<'a>(text: &'a str, name: &str) -> Result<Vec<Entry<'a>>> {
    let mut out: Vec<Entry<'a>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::format(
                name,
                format!("line {line}"),
                format!("expected `key = value`, got {content:?}"),
            ));
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(Error::format(
                name,
                format!("line {line}"),
                format!("unknown key `{key}`"),
            ));
        }
        if value.is_empty() {
            return Err(Error::format(
                name,
                format!("line {line}"),
                format!("`{key}` has no value"),
            ));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(Error::format(
                name,
                format!("line {line}"),
                format!("`{key}` already set on line {}", prev.line),
            ));
        }
        out.push(Entry { key, value, line });
    }
    Ok(out)
}

fn parse_task(s: &str) -> Result<Task> {
    match s.to_ascii_lowercase().as_str() {
        "dr" => Ok(Task::Dr),
        "ge" => Ok(Task::Ge),
        "kd" => Ok(Task::Kd),
        other => Err(Error::invalid(format!(
            "unknown task {other:?} (expected dr, ge or kd)"
        ))),
    }
}

pub fn parse_fusion(s: &str) -> Result<Fusion> {
    match s.to_ascii_lowercase().as_str() {
        "static" => Ok(Fusion::Static),
        "dynamic" => Ok(Fusion::Dynamic),
        other => Err(Error::invalid(format!(
            "unknown fusion {other:?} (expected static or dynamic)"
        ))),
    }
}

fn fusion_name(f: Fusion) -> &'static str {
    match f {
        Fusion::Static => "static",
        Fusion::Dynamic => "dynamic",
    }
}

fn parse_latent(s: &str) -> Result<LatentDistance> {
    match s.to_ascii_lowercase().as_str() {
        "euclidean" => Ok(LatentDistance::Euclidean),
        "cosine" => Ok(LatentDistance::OneMinusCosine),
        other => Err(Error::invalid(format!(
            "unknown latent distance {other:?} (expected euclidean or cosine)"
        ))),
    }
}

fn latent_name(l: LatentDistance) -> &'static str {
    match l {
        LatentDistance::Euclidean => "euclidean",
        LatentDistance::OneMinusCosine => "cosine",
    }
}

fn preset_name(p: GePreset) -> &'static str {
    match p {
        GePreset::Cora => "cora",
        GePreset::CiteSeer => "citeseer",
        GePreset::PubMed => "pubmed",
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("`{key}`: cannot parse {value:?} as a number")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!(
            "`{key}`: expected true or false, got {value:?}"
        ))),
    }
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.eq_ignore_ascii_case("none") || value.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

impl RunConfig {
    /// Task defaults with the output directory `out`.
    pub fn defaults(task: Task) -> Self {
        let spec = match task {
            Task::Dr => TaskSpec::dr(),
            Task::Ge => TaskSpec::ge(),
            Task::Kd => TaskSpec::kd(),
        };
        Self {
            spec,
            preset: (task == Task::Ge).then_some(GePreset::Cora),
            paths: DataPaths {
                out: PathBuf::from("out"),
                ..DataPaths::default()
            },
            max_samples: None,
            eval: EvalSettings::default(),
        }
    }

    /// Parses config text for `task`. Relative paths are joined onto `base`.
    pub fn parse(text: &str, name: &str, task: Task, base: &Path) -> Result<Self> {
        let entries = entries(text, name)?;
        let mut cfg = Self::defaults(task);
        let at = |e: &Entry<'_>, err: Error| match err {
            Error::InvalidArgument(msg) => Error::format(name, format!("line {}", e.line), msg),
            other => other,
        };
        // Dimension keys depend on the model kind, so settle it first.
        let mut ordered: Vec<&Entry<'_>> = entries.iter().collect();
        ordered.sort_by_key(|e| match e.key {
            "task" => 0,
            "preset" => 1,
            "model" | "loss" => 2,
            _ => 3,
        });
        for e in ordered {
            cfg.apply(e.key, e.value, base).map_err(|err| at(e, err))?;
        }
        cfg.validate().map_err(|err| match err {
            Error::InvalidArgument(msg) => Error::format(name, "config", msg),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path, task: Task) -> Result<Self> {
        let text = read_text(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, &path.display().to_string(), task, base)
    }

    fn apply(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || Some(base.join(value));
        let s = &mut self.spec;
        match key {
            "task" => {
                let t = parse_task(value)?;
                if t != s.task {
                    return Err(Error::invalid(format!(
                        "config is for task {}, but the {} command was run",
                        t.name(),
                        s.task.name()
                    )));
                }
            }
            "preset" => {
                if s.task != Task::Ge {
                    return Err(Error::invalid("`preset` only applies to graph embedding"));
                }
                let p = GePreset::parse(value)?;
                let v = p.values();
                s.nu_z = v.nu_z;
                s.alpha2 = AlphaSchedule::constant(v.alpha2);
                self.preset = Some(p);
            }
            "seed" => s.seed = num(key, value)?,
            "epochs" => s.epochs = num(key, value)?,
            "batch_size" => s.adam.batch_size = num(key, value)?,
            "base_lr" => s.adam.base_lr = num(key, value)?,
            "loss" => {
                let old = s.loss;
                s.loss = value.parse()?;
                if let (LossKind::Gkl { gamma: g }, LossKind::Gkl { gamma }) = (&mut s.loss, old) {
                    *g = gamma;
                }
            }
            "gamma" => {
                let g: f64 = num(key, value)?;
                match &mut s.loss {
                    LossKind::Gkl { gamma } => *gamma = g,
                    _ => return Err(Error::invalid("`gamma` only applies to the gkl loss")),
                }
            }
            "nu_x" => s.nu_x = num(key, value)?,
            "nu_z" => s.nu_z = num(key, value)?,
            "mu_z" => s.mu_z = num(key, value)?,
            "sigma_z" => s.sigma_z = num(key, value)?,
            "sigma_x" => s.sigma_x = optional(key, value)?,
            "fusion" => s.fusion = parse_fusion(value)?,
            "mask_fraction" => s.pair_mask_fraction = num(key, value)?,
            "knn_k" => s.knn_k = num(key, value)?,
            "calibration_neighbors" => s.calibration_neighbors = num(key, value)?,
            "alpha2" => {
                let a: f64 = num(key, value)?;
                s.alpha2 = AlphaSchedule::linear(a, a);
            }
            "alpha2_last" => s.alpha2.last = num(key, value)?,
            "hop_limit" => s.hop_limit = optional(key, value)?,
            "deterministic" => s.deterministic = parse_bool(key, value)?,
            "model" => {
                let dim = s.model.out_dim();
                s.model = match value.to_ascii_lowercase().as_str() {
                    "free" => ModelSpec::Free { dim },
                    "encoder" => ModelSpec::encoder(dim),
                    other => {
                        return Err(Error::invalid(format!(
                            "unknown model {other:?} (expected free or encoder)"
                        )))
                    }
                };
            }
            "dim" => {
                let d: usize = num(key, value)?;
                match &mut s.model {
                    ModelSpec::Free { dim } => *dim = d,
                    ModelSpec::Encoder { out_dim, .. } => *out_dim = d,
                }
            }
            "hidden" => {
                let widths = value
                    .split(',')
                    .map(|w| num::<usize>(key, w.trim()))
                    .collect::<Result<Vec<_>>>()?;
                match &mut s.model {
                    ModelSpec::Encoder { hidden, .. } => *hidden = widths,
                    ModelSpec::Free { .. } => return Err(Error::invalid("`hidden` only applies to the encoder model")),
                }
            }
            "tap" => {
                let t: usize = num(key, value)?;
                match &mut s.model {
                    ModelSpec::Encoder { tap, .. } => *tap = t,
                    ModelSpec::Free { .. } => return Err(Error::invalid("`tap` only applies to the encoder model")),
                }
            }
            "latent_distance" => s.latent_distance = parse_latent(value)?,
            "clamp_eps" => s.clamp_eps = num(key, value)?,
            "data" => self.paths.data = path(),
            "labels" => self.paths.labels = path(),
            "features" => self.paths.features = path(),
            "edges" => self.paths.edges = path(),
            "teacher" => self.paths.teacher = path(),
            "out" => self.paths.out = base.join(value),
            "max_samples" => self.max_samples = optional(key, value)?,
            "trust_k" => self.eval.trust_k = num(key, value)?,
            "knn_eval_k" => self.eval.knn_k = num(key, value)?,
            "test_fraction" => self.eval.test_fraction = num(key, value)?,
            "eval_max_points" => self.eval.max_points = num(key, value)?,
            _ => unreachable!("key list checked by the caller"),
        }
        Ok(())
    }

    /// Range checks plus the inputs each task needs.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if let ModelSpec::Encoder { hidden, tap, .. } = &self.spec.model {
            if hidden.iter().any(|&w| w == 0) {
                return Err(Error::invalid("hidden widths must be >= 1"));
            }
            if *tap == 0 || *tap > hidden.len() {
                return Err(Error::invalid(format!(
                    "tap must be in 1..={}, got {tap}",
                    hidden.len()
                )));
            }
        }
        if self.spec.knn_k == 0 {
            return Err(Error::invalid("knn_k must be >= 1"));
        }
        if self.spec.calibration_neighbors == 0 {
            return Err(Error::invalid("calibration_neighbors must be >= 1"));
        }
        if !(self.eval.test_fraction > 0.0 && self.eval.test_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.eval.test_fraction
            )));
        }
        if self.eval.trust_k == 0 || self.eval.knn_k == 0 {
            return Err(Error::invalid("evaluation neighbourhood sizes must be >= 1"));
        }
        if self.eval.max_points < 4 {
            return Err(Error::invalid("eval_max_points must be >= 4"));
        }
        if self.max_samples.is_some_and(|m| m < 2) {
            return Err(Error::invalid("max_samples must be >= 2"));
        }
        let require = |p: &Option<PathBuf>, key: &str| {
            if p.is_none() {
                Err(Error::invalid(format!(
                    "missing required key `{key}` for task {}",
                    self.spec.task.name()
                )))
            } else {
                Ok(())
            }
        };
        match self.spec.task {
            Task::Dr => require(&self.paths.data, "data"),
            Task::Ge => require(&self.paths.features, "features"),
            Task::Kd => {
                require(&self.paths.data, "data")?;
                require(&self.paths.teacher, "teacher")
            }
        }
    }

    /// Every setting as config text, keys in a fixed order.
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        put("task", s.task.name().into());
        if let Some(p) = self.preset {
            put("preset", preset_name(p).into());
        }
        put("seed", s.seed.to_string());
        put("epochs", s.epochs.to_string());
        put("batch_size", s.adam.batch_size.to_string());
        put("base_lr", s.adam.base_lr.to_string());
        put("loss", s.loss.name().into());
        if let LossKind::Gkl { gamma } = s.loss {
            put("gamma", gamma.to_string());
        }
        put("nu_x", s.nu_x.to_string());
        put("nu_z", s.nu_z.to_string());
        put("mu_z", s.mu_z.to_string());
        put("sigma_z", s.sigma_z.to_string());
        put("sigma_x", s.sigma_x.map_or_else(|| "auto".into(), |v| v.to_string()));
        put("fusion", fusion_name(s.fusion).into());
        put("mask_fraction", s.pair_mask_fraction.to_string());
        put("knn_k", s.knn_k.to_string());
        put("calibration_neighbors", s.calibration_neighbors.to_string());
        put("alpha2", s.alpha2.initial.to_string());
        put("alpha2_last", s.alpha2.last.to_string());
        put("hop_limit", opt(s.hop_limit.map(|h| h.to_string())));
        put("deterministic", s.deterministic.to_string());
        match &s.model {
            ModelSpec::Free { dim } => {
                put("model", "free".into());
                put("dim", dim.to_string());
            }
            ModelSpec::Encoder { hidden, out_dim, tap } => {
                put("model", "encoder".into());
                put("dim", out_dim.to_string());
                let h: Vec<String> = hidden.iter().map(usize::to_string).collect();
                put("hidden", h.join(","));
                put("tap", tap.to_string());
            }
        }
        put("latent_distance", latent_name(s.latent_distance).into());
        put("clamp_eps", s.clamp_eps.to_string());
        let p = &self.paths;
        for (k, v) in [
            ("data", &p.data),
            ("labels", &p.labels),
            ("features", &p.features),
            ("edges", &p.edges),
            ("teacher", &p.teacher),
        ] {
            if let Some(v) = v {
                put(k, v.display().to_string());
            }
        }
        put("out", p.out.display().to_string());
        put("max_samples", opt(self.max_samples.map(|m| m.to_string())));
        put("trust_k", self.eval.trust_k.to_string());
        put("knn_eval_k", self.eval.knn_k.to_string());
        put("test_fraction", self.eval.test_fraction.to_string());
        put("eval_max_points", self.eval.max_points.to_string());
        out
    }

    /// SHA-256 of [`Self::to_text`] with the output directory left out,
    /// lowercase hex.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths.out = PathBuf::new();
        let digest = Sha256::digest(c.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
