//! Step rules for factor pairs: plain and scaled gradient descent, AdamW with
//! the preconditioner applied to the raw or the processed gradient, and
//! sign-processed Adam without momentum.
//!
//! Both factors are always updated from the same pre-step values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorized::{precondition, FactorGrad, FactorPair};
use crate::linalg::Mat;

/// Where (and whether) the Gram preconditioner is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// No preconditioning.
    Plain,
    /// Precondition the raw gradient before any further processing.
    ScaledRaw,
    /// Process the gradient first (Adam direction, sign) and precondition the result.
    ScaledProcessed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Gd,
    Adamw,
    SignAdam,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::ScaledRaw => "scaled_raw",
            Mode::ScaledProcessed => "scaled_processed",
        }
    }

    pub fn is_scaled(self) -> bool {
        self != Mode::Plain
    }
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Gd => "gd",
            Rule::Adamw => "adamw",
            Rule::SignAdam => "sign_adam",
        }
    }
}

/// Learning rates and update rule for one optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub lr_l: f64,
    pub lr_r: f64,
    pub mode: Mode,
    pub rule: Rule,
}

/// LoRA+ ratio of the `L` (LoRA `B`) learning rate to the `R` (LoRA `A`) one.
pub const LORA_PLUS_RATIO: f64 = 16.0;

impl StepConfig {
    /// # Errors
    /// Learning rates must be positive and finite; gradient descent has no
    /// processed gradient, so `Gd` with `ScaledProcessed` is rejected.
    pub fn new(lr_l: f64, lr_r: f64, mode: Mode, rule: Rule) -> Result<Self> {
        let cfg = Self { lr_l, lr_r, mode, rule };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("lr_l", self.lr_l), ("lr_r", self.lr_r)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {lr}"
                )));
            }
        }
        if self.rule == Rule::Gd && self.mode == Mode::ScaledProcessed {
            return Err(Error::InvalidArgument(
                "mode scaled_processed needs a processed gradient; use rule adamw or sign_adam".into(),
            ));
        }
        Ok(())
    }

    pub fn plain_gd(lr: f64) -> Result<Self> {
        Self::new(lr, lr, Mode::Plain, Rule::Gd)
    }

    pub fn scaled_gd(lr: f64) -> Result<Self> {
        Self::new(lr, lr, Mode::ScaledRaw, Rule::Gd)
    }

    /// Split learning rates with `lr_l = 16·lr_r`, no preconditioning.
    ///
    /// ```
    /// use scaled_lora::optimizers::{Rule, StepConfig};
    /// let cfg = StepConfig::lora_plus(1e-3, Rule::Adamw).unwrap();
    /// assert_eq!(cfg.lr_l / cfg.lr_r, 16.0);
    /// ```
    pub fn lora_plus(lr_r: f64, rule: Rule) -> Result<Self> {
        Self::new(LORA_PLUS_RATIO * lr_r, lr_r, Mode::Plain, rule)
    }

    /// Short label such as `scaled_raw-adamw`, used to tag output rows.
    pub fn label(&self) -> String {
        format!("{}-{}", self.mode.as_str(), self.rule.as_str())
    }
}

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamHyper {
    /// Preset for unscaled AdamW: `β = (0.9, 0.999)`, `ε = 1e-6`, decay 0.01.
    pub const PLAIN: AdamHyper = AdamHyper {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-6,
        weight_decay: 0.01,
    };

    /// Preset for scaled AdamW: `β = (0.7, 0.8)`, `ε = 1e-6`, decay 0.01.
    pub const SCALED: AdamHyper = AdamHyper {
        beta1: 0.7,
        beta2: 0.8,
        eps: 1e-6,
        weight_decay: 0.01,
    };

    pub fn preset(mode: Mode) -> Self {
        if mode.is_scaled() {
            Self::SCALED
        } else {
            Self::PLAIN
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Moment accumulators and step counter for one factor pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m_l: Mat,
    pub v_l: Mat,
    pub m_r: Mat,
    pub v_r: Mat,
    t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(pair: &FactorPair, hyper: AdamHyper) -> Result<Self> {
        hyper.validate()?;
        let (m, n) = pair.dims();
        let r = pair.rank();
        Ok(Self {
            m_l: Mat::zeros(m, r),
            v_l: Mat::zeros(m, r),
            m_r: Mat::zeros(n, r),
            v_r: Mat::zeros(n, r),
            t: 0,
            hyper,
        })
    }

    /// Number of completed steps.
    pub fn t(&self) -> u64 {
        self.t
    }

    fn check(&self, pair: &FactorPair) -> Result<()> {
        let (m, n) = pair.dims();
        let r = pair.rank();
        if self.m_l.shape() != (m, r) || self.m_r.shape() != (n, r) {
            return Err(crate::error::shape_err(
                "AdamState",
                format!("moments {m}x{r} and {n}x{r}"),
                format!("{} and {}", self.m_l.shape_str(), self.m_r.shape_str()),
            ));
        }
        Ok(())
    }
}

/// One gradient-descent step.
///
/// ```
/// use scaled_lora::{linalg::Mat, factorized::{FactorPair, FactorGrad}};
/// use scaled_lora::optimizers::{gd_step, StepConfig};
/// let pair = FactorPair::new(Mat::identity(2), Mat::identity(2), 0.0).unwrap();
/// let grad = FactorGrad::new(Mat::identity(2), Mat::zeros(2, 2));
/// let next = gd_step(&pair, &grad, &StepConfig::scaled_gd(0.5).unwrap()).unwrap();
/// assert_eq!(next.l(), &Mat::diag(&[0.5, 0.5]));
/// ```
pub fn gd_step(pair: &FactorPair, grad: &FactorGrad, cfg: &StepConfig) -> Result<FactorPair> {
    cfg.validate()?;
    if cfg.rule != Rule::Gd {
        return Err(Error::InvalidArgument(format!(
            "gd_step called with rule {}",
            cfg.rule.as_str()
        )));
    }
    pair.check_grad(grad)?;
    let dir = match cfg.mode {
        Mode::Plain => grad.clone(),
        Mode::ScaledRaw => precondition(pair, grad)?,
        Mode::ScaledProcessed => unreachable!("rejected by validate"),
    };
    Ok(apply(pair, &dir, cfg))
}

fn apply(pair: &FactorPair, dir: &FactorGrad, cfg: &StepConfig) -> FactorPair {
    pair.replace(pair.l().axpy(-cfg.lr_l, &dir.dl), pair.r().axpy(-cfg.lr_r, &dir.dr))
}

/// One AdamW step; `state` is updated in place.
pub fn adamw_step(pair: &FactorPair, grad: &FactorGrad, state: &mut AdamState, cfg: &StepConfig) -> Result<FactorPair> {
    cfg.validate()?;
    if cfg.rule != Rule::Adamw {
        return Err(Error::InvalidArgument(format!(
            "adamw_step called with rule {}",
            cfg.rule.as_str()
        )));
    }
    pair.check_grad(grad)?;
    state.check(pair)?;
    let t = state.t.checked_add(1).ok_or(Error::StepOverflow)?;
    let h = state.hyper;

    let g = match cfg.mode {
        Mode::ScaledRaw => precondition(pair, grad)?,
        Mode::Plain | Mode::ScaledProcessed => grad.clone(),
    };

    let moment = |m: &Mat, g: &Mat| m.scale(h.beta1).axpy(1.0 - h.beta1, g);
    let second = |v: &Mat, g: &Mat| v.scale(h.beta2).axpy(1.0 - h.beta2, &g.hadamard(g));
    let m_l = moment(&state.m_l, &g.dl);
    let m_r = moment(&state.m_r, &g.dr);
    let v_l = second(&state.v_l, &g.dl);
    let v_r = second(&state.v_r, &g.dr);

    let tf = t as f64;
    let c1 = 1.0 - h.beta1.powf(tf);
    let c2 = 1.0 - h.beta2.powf(tf);
    let direction = |m: &Mat, v: &Mat| {
        Mat::from_fn(m.rows(), m.cols(), |i, j| {
            let mh = m[(i, j)] / c1;
            let vh = v[(i, j)] / c2;
            mh / (vh.sqrt() + h.eps)
        })
    };
    let mut dir = FactorGrad::new(direction(&m_l, &v_l), direction(&m_r, &v_r));
    if cfg.mode == Mode::ScaledProcessed {
        dir = precondition(pair, &dir)?;
    }

    // Decoupled decay acts on the parameters and is not preconditioned.
    let decayed_l = pair.l().scale(1.0 - cfg.lr_l * h.weight_decay);
    let decayed_r = pair.r().scale(1.0 - cfg.lr_r * h.weight_decay);
    let next = pair.replace(decayed_l.axpy(-cfg.lr_l, &dir.dl), decayed_r.axpy(-cfg.lr_r, &dir.dr));

    state.m_l = m_l;
    state.m_r = m_r;
    state.v_l = v_l;
    state.v_r = v_r;
    state.t = t;
    Ok(next)
}

/// Entrywise sign with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One sign-processed step (Adam with no momentum).
///
/// `plain` subtracts `lr·sign(g)`, `scaled_processed` subtracts
/// `lr·precondition(sign(g))` and `scaled_raw` subtracts `lr·sign(precondition(g))`.
pub fn sign_adam_step(pair: &FactorPair, grad: &FactorGrad, cfg: &StepConfig) -> Result<FactorPair> {
    cfg.validate()?;
    if cfg.rule != Rule::SignAdam {
        return Err(Error::InvalidArgument(format!(
            "sign_adam_step called with rule {}",
            cfg.rule.as_str()
        )));
    }
    pair.check_grad(grad)?;
    let dir = match cfg.mode {
        Mode::Plain => grad.map(sign),
        Mode::ScaledProcessed => precondition(pair, &grad.map(sign))?,
        Mode::ScaledRaw => precondition(pair, grad)?.map(sign),
    };
    Ok(apply(pair, &dir, cfg))
}

/// A step rule together with whatever state it carries.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: StepConfig,
    adam: Option<AdamState>,
}

impl Optimizer {
    /// `hyper` is only used by AdamW; `None` picks the preset for the mode.
    pub fn new(cfg: StepConfig, hyper: Option<AdamHyper>, pair: &FactorPair) -> Result<Self> {
        cfg.validate()?;
        let adam = match cfg.rule {
            Rule::Adamw => Some(AdamState::new(
                pair,
                hyper.unwrap_or_else(|| AdamHyper::preset(cfg.mode)),
            )?),
            Rule::Gd | Rule::SignAdam => None,
        };
        Ok(Self { cfg, adam })
    }

    pub fn config(&self) -> &StepConfig {
        &self.cfg
    }

    pub fn adam_state(&self) -> Option<&AdamState> {
        self.adam.as_ref()
    }

    pub fn step(&mut self, pair: &FactorPair, grad: &FactorGrad) -> Result<FactorPair> {
        match self.cfg.rule {
            Rule::Gd => gd_step(pair, grad, &self.cfg),
            Rule::SignAdam => sign_adam_step(pair, grad, &self.cfg),
            Rule::Adamw => {
                let state = self.adam.as_mut().expect("adam state is created with the optimizer");
                adamw_step(pair, grad, state, &self.cfg)
            }
        }
    }
}
