//! Experiment configuration files.
//!
//! A config is a TOML file. Any key may be omitted; the defaults for the
//! experiment kind fill the gaps, and the fully resolved config (every default
//! written out) is what gets stored next to the output.
//!
//! ```
//! use scaled_lora::harness::{ExperimentConfig, Kind};
//! let cfg = ExperimentConfig::from_toml_str("kappa = [1.0, 100.0]\niters = 50", Some(Kind::CondSweep)).unwrap();
//! assert_eq!(cfg.kappa, vec![1.0, 100.0]);
//! assert_eq!(cfg.delta, 1e-6);
//! assert_eq!(cfg.methods[0].name, "scaled_gd");
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::factorized::DEFAULT_DELTA;
use crate::optimizers::{AdamHyper, Mode, Rule, StepConfig, LORA_PLUS_RATIO};
use crate::problems::multiterm::{Design, MultiTermDims, MultiTermSpec};

/// Bumped whenever the CSV columns or the config layout change.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Decomp,
    Multiterm,
    CondSweep,
    WidthSweep,
    Toy,
    Arrangements,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Decomp => "decomp",
            Kind::Multiterm => "multiterm",
            Kind::CondSweep => "cond-sweep",
            Kind::WidthSweep => "width-sweep",
            Kind::Toy => "toy",
            Kind::Arrangements => "arrangements",
        }
    }
}

/// One optimizer in a sweep.
///
/// For a base step size `eta` at width `n`, the learning rates are
/// `lr_r = eta·n^lr_r_exponent` and `lr_l = lr_ratio·eta·n^lr_l_exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    #[serde(default)]
    pub name: String,
    pub mode: Mode,
    pub rule: Rule,
    #[serde(default = "one")]
    pub lr_ratio: f64,
    #[serde(default)]
    pub lr_l_exponent: f64,
    #[serde(default)]
    pub lr_r_exponent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamHyper>,
}

fn one() -> f64 {
    1.0
}

impl MethodConfig {
    pub fn new(mode: Mode, rule: Rule) -> Self {
        Self {
            name: String::new(),
            mode,
            rule,
            lr_ratio: 1.0,
            lr_l_exponent: 0.0,
            lr_r_exponent: 0.0,
            adam: None,
        }
    }

    /// Named presets. `lora_plus` is unscaled AdamW with `lr_l = 16·lr_r`.
    pub fn preset(name: &str) -> Option<Self> {
        let (mode, rule, ratio) = match name {
            "plain_gd" => (Mode::Plain, Rule::Gd, 1.0),
            "scaled_gd" => (Mode::ScaledRaw, Rule::Gd, 1.0),
            "plain_adamw" => (Mode::Plain, Rule::Adamw, 1.0),
            "scaled_adamw" => (Mode::ScaledProcessed, Rule::Adamw, 1.0),
            "scaled_raw_adamw" => (Mode::ScaledRaw, Rule::Adamw, 1.0),
            "plain_sign_adam" => (Mode::Plain, Rule::SignAdam, 1.0),
            "scaled_sign_adam" => (Mode::ScaledProcessed, Rule::SignAdam, 1.0),
            "lora_plus" => (Mode::Plain, Rule::Adamw, LORA_PLUS_RATIO),
            _ => return None,
        };
        let mut m = Self::new(mode, rule);
        m.lr_ratio = ratio;
        m.name = name.to_string();
        Some(m.resolved())
    }

    /// Fills in the name and the Adam hyperparameters.
    pub fn resolved(mut self) -> Self {
        if self.name.is_empty() {
            self.name = format!("{}-{}", self.mode.as_str(), self.rule.as_str());
            if self.lr_ratio != 1.0 {
                self.name.push_str(&format!("-x{:?}", self.lr_ratio));
            }
        }
        if self.rule == Rule::Adamw && self.adam.is_none() {
            self.adam = Some(AdamHyper::preset(self.mode));
        }
        self
    }

    pub fn step_config(&self, eta: f64, width: usize) -> crate::Result<StepConfig> {
        let n = width as f64;
        StepConfig::new(
            self.lr_ratio * eta * n.powf(self.lr_l_exponent),
            eta * n.powf(self.lr_r_exponent),
            self.mode,
            self.rule,
        )
    }
}

/// A method given either by preset name or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MethodSpec {
    Preset(String),
    Full(MethodConfig),
}

/// Everything that determines an experiment's output.
///
/// Fields that a kind does not use are kept (with their defaults) so the
/// resolved file has the same layout for every kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    /// Rows of the decomposition target.
    pub m: usize,
    /// Columns of the decomposition target; rows of the multi-term data.
    pub n: usize,
    /// Features of the multi-term data; columns of the arrangement data.
    pub d: usize,
    /// Outputs of the multi-term problem.
    pub c: usize,
    /// Widths for width sweeps and toy runs.
    pub widths: Vec<usize>,
    pub r: usize,
    /// Number of terms (multiterm).
    pub p: usize,
    pub kappa: Vec<f64>,
    /// Base step sizes; for toy runs, multipliers of `n^exponent`.
    pub eta: Vec<f64>,
    /// Toy step-size exponent `c` in `η = eta·n^c`.
    pub exponent: f64,
    pub iters: usize,
    pub delta: f64,
    /// Early-stop threshold: relative error (decomp) or max aligned distance
    /// (multiterm). Zero disables it.
    pub tol: f64,
    /// Relative size of the perturbation added before decomposition spectral init.
    pub init_noise: f64,
    pub rip_trials: usize,
    /// Sampled directions per arrangement instance.
    pub samples: usize,
    /// Arrangement instances.
    pub instances: usize,
    pub record_wall_time: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub design: Design,
    pub methods: Vec<ResolvedMethod>,
}

/// A method after preset expansion; read from a [`MethodSpec`], written in full.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ResolvedMethod(pub MethodConfig);

impl<'de> Deserialize<'de> for ResolvedMethod {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match MethodSpec::deserialize(d)? {
            MethodSpec::Full(m) => Ok(Self(m.resolved())),
            MethodSpec::Preset(name) => MethodConfig::preset(&name)
                .map(Self)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown method preset `{name}`"))),
        }
    }
}

impl std::ops::Deref for ResolvedMethod {
    type Target = MethodConfig;
    fn deref(&self) -> &MethodConfig {
        &self.0
    }
}

fn presets(names: &[&str]) -> Vec<ResolvedMethod> {
    names
        .iter()
        .map(|n| ResolvedMethod(MethodConfig::preset(n).expect("built-in preset")))
        .collect()
}

fn cfg_err(field: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn defaults(kind: Kind) -> Self {
        let pow2 = |lo: u32, hi: u32| (lo..=hi).map(|k| 1usize << k).collect::<Vec<_>>();
        let mut cfg = Self {
            kind,
            seed: 0,
            m: 50,
            n: 50,
            d: 20,
            c: 20,
            widths: pow2(6, 12),
            r: 5,
            p: 3,
            kappa: vec![10.0],
            eta: vec![0.5],
            exponent: -1.0,
            iters: 1000,
            delta: DEFAULT_DELTA,
            tol: 1e-6,
            init_noise: 1e-3,
            rip_trials: 1000,
            samples: 10_000,
            instances: 1,
            record_wall_time: false,
            out: None,
            design: Design::Orthogonal { tiny: 0.005 },
            methods: presets(&["scaled_gd"]),
        };
        match kind {
            Kind::Decomp => {}
            Kind::CondSweep => cfg.kappa = vec![1.0, 10.0, 100.0],
            Kind::Multiterm => {
                cfg.n = 200;
                cfg.r = 3;
                cfg.iters = 60;
                cfg.tol = 1e-9;
            }
            Kind::WidthSweep => {
                cfg.r = 2;
                cfg.eta = vec![0.01];
                cfg.iters = 2;
                cfg.tol = 0.0;
                cfg.methods = presets(&["scaled_sign_adam", "plain_sign_adam"]);
            }
            Kind::Toy => {
                cfg.eta = vec![1e-4];
                cfg.iters = 5;
                cfg.tol = 0.0;
                cfg.methods = presets(&["plain_gd", "scaled_gd"]);
            }
            Kind::Arrangements => {
                cfg.n = 12;
                cfg.d = 2;
                cfg.r = 2;
                cfg.iters = 0;
                cfg.tol = 0.0;
            }
        }
        cfg
    }

    /// Parses a config, filling omitted keys from the kind's defaults.
    ///
    /// `kind` comes from the file or from `hint` (the CLI subcommand); if both
    /// are present they must agree.
    pub fn from_toml_str(text: &str, hint: Option<Kind>) -> Result<Self, HarnessError> {
        let mut user: toml::Table = toml::from_str(text).map_err(|e| cfg_err("config", e.to_string()))?;
        let file_kind = match user.remove("kind") {
            Some(v) => Some(Kind::deserialize(v).map_err(|e| cfg_err("kind", e.to_string()))?),
            None => None,
        };
        let kind = match (file_kind, hint) {
            (Some(a), Some(b)) if a != b => {
                return Err(cfg_err(
                    "kind",
                    format!("file says `{}` but `{}` was requested", a.as_str(), b.as_str()),
                ))
            }
            (Some(k), _) | (None, Some(k)) => k,
            (None, None) => return Err(cfg_err("kind", "missing; set it in the file or pick a subcommand")),
        };
        let mut table = toml::Table::try_from(Self::defaults(kind)).map_err(|e| cfg_err("config", e.to_string()))?;
        for (k, v) in user {
            table.insert(k, v);
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| cfg_err("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The resolved config as TOML.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    /// Checks every field the kind uses.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(cfg_err(field, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        if self.methods.is_empty() {
            return Err(cfg_err("methods", "list is empty"));
        }
        if self.kind != Kind::Arrangements {
            if self.eta.is_empty() {
                return Err(cfg_err("eta", "list is empty"));
            }
            if let Some(e) = self.eta.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
                return Err(cfg_err(
                    "eta",
                    format!("step sizes must be positive and finite, got {e}"),
                ));
            }
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(cfg_err("delta", format!("must be >= 0, got {}", self.delta)));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(cfg_err("tol", format!("must be >= 0, got {}", self.tol)));
        }
        positive("r", self.r)?;
        match self.kind {
            Kind::Decomp | Kind::CondSweep | Kind::Multiterm => {
                if self.kappa.is_empty() {
                    return Err(cfg_err("kappa", "list is empty"));
                }
                if let Some(k) = self.kappa.iter().find(|k| !(**k >= 1.0 && k.is_finite())) {
                    return Err(cfg_err("kappa", format!("condition numbers must be >= 1, got {k}")));
                }
                positive("iters", self.iters)?;
            }
            Kind::WidthSweep | Kind::Toy => {
                if self.widths.is_empty() {
                    return Err(cfg_err("widths", "list is empty"));
                }
                positive("iters", self.iters)?;
            }
            Kind::Arrangements => {}
        }
        match self.kind {
            Kind::Decomp | Kind::CondSweep => {
                if !(self.init_noise >= 0.0 && self.init_noise.is_finite()) {
                    return Err(cfg_err("init_noise", "must be >= 0"));
                }
                if self.r > self.m.min(self.n) {
                    return Err(cfg_err(
                        "r",
                        format!("rank {} exceeds min(m, n) = {}", self.r, self.m.min(self.n)),
                    ));
                }
            }
            Kind::Multiterm => {
                positive("rip_trials", self.rip_trials)?;
                for &kappa in &self.kappa {
                    self.multiterm_spec(kappa)
                        .validate()
                        .map_err(|e| cfg_err("dims", e.to_string()))?;
                }
            }
            Kind::WidthSweep => {
                if let Some(n) = self.widths.iter().find(|n| **n < self.r) {
                    return Err(cfg_err("widths", format!("width {n} is below the rank {}", self.r)));
                }
                if let Some(m) = self.methods.iter().find(|m| m.rule == Rule::Gd) {
                    return Err(cfg_err(
                        "methods",
                        format!("`{}`: width sweeps use adamw or sign_adam", m.name),
                    ));
                }
            }
            Kind::Toy => {
                if let Some(n) = self.widths.iter().find(|n| **n < 2) {
                    return Err(cfg_err("widths", format!("toy widths must be >= 2, got {n}")));
                }
                if let Some(m) = self
                    .methods
                    .iter()
                    .find(|m| m.rule != Rule::Gd || m.mode == Mode::ScaledProcessed)
                {
                    return Err(cfg_err(
                        "methods",
                        format!("`{}`: toy runs use plain_gd or scaled_gd", m.name),
                    ));
                }
                if !self.exponent.is_finite() {
                    return Err(cfg_err("exponent", "must be finite"));
                }
            }
            Kind::Arrangements => {
                positive("n", self.n)?;
                positive("d", self.d)?;
                positive("samples", self.samples)?;
                positive("instances", self.instances)?;
            }
        }
        if self.kind != Kind::Arrangements {
            let width = match self.kind {
                Kind::WidthSweep | Kind::Toy => self.widths[0],
                _ => self.n,
            };
            for m in self.methods.iter() {
                if let Some(h) = &m.adam {
                    h.validate()
                        .map_err(|e| cfg_err("methods", format!("`{}`: {e}", m.name)))?;
                }
                for &eta in &self.eta {
                    m.step_config(eta, width)
                        .map_err(|e| cfg_err("methods", format!("`{}`: {e}", m.name)))?;
                }
            }
        }
        Ok(())
    }

    pub fn multiterm_spec(&self, kappa: f64) -> MultiTermSpec {
        MultiTermSpec {
            dims: MultiTermDims {
                n: self.n,
                d: self.d,
                c: self.c,
            },
            r: self.r,
            p: self.p,
            kappa,
            sigma_max: 1.0,
            design: self.design,
        }
    }
}
