//! Parameter update rules: plain SGD, RMSprop, and Adam.
//!
//! RMSprop and Adam keep per-parameter accumulator slots in an
//! [`OptimizerState`], zero-initialized on first use. Every step is a pure
//! function of (params, grads, state, config), so replaying a gradient
//! stream reproduces the parameter trajectory bitwise.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    RmsProp,
    Adam,
}

impl OptimizerKind {
    pub fn all() -> [OptimizerKind; 3] {
        [OptimizerKind::Sgd, OptimizerKind::RmsProp, OptimizerKind::Adam]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!(
                "unknown optimizer '{other}' (expected sgd, rmsprop or adam)"
            ))),
        }
    }
}

/// Update-rule constants. `default_for` pins the widely used defaults:
/// SGD lr 0.01; RMSprop lr 0.001, rho 0.9; Adam lr 0.001, beta1 0.9,
/// beta2 0.999; eps 1e-7 for both adaptive rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// RMSprop decay.
    pub rho: f64,
    /// Adam first-moment decay.
    pub beta1: f64,
    /// Adam second-moment decay.
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn default_for(kind: OptimizerKind) -> Self {
        let lr = match kind {
            OptimizerKind::Sgd => 0.01,
            OptimizerKind::RmsProp | OptimizerKind::Adam => 0.001,
        };
        OptimizerConfig {
            kind,
            lr,
            rho: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }

    pub fn sgd() -> Self {
        Self::default_for(OptimizerKind::Sgd)
    }

    pub fn rmsprop() -> Self {
        Self::default_for(OptimizerKind::RmsProp)
    }

    pub fn adam() -> Self {
        Self::default_for(OptimizerKind::Adam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, v) in [("rho", self.rho), ("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Per-parameter accumulator slots plus the step counter.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Zero-initializes slots on first use, then insists the slot shapes
    /// keep mirroring the parameter shapes.
    fn ensure_slots_for(&mut self, params: &[&mut Tensor], with_m: bool) -> Result<()> {
        if self.v.is_empty() {
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if with_m && self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        let mirrored = self.v.len() == params.len()
            && self.v.iter().zip(params).all(|(s, p)| s.len() == p.len())
            && (!with_m
                || (self.m.len() == params.len()
                    && self.m.iter().zip(params).all(|(s, p)| s.len() == p.len())));
        if !mirrored {
            return Err(Error::Contract(
                "optimizer state slots do not mirror the parameter shapes".into(),
            ));
        }
        Ok(())
    }
}

fn check_pairing(params: &[&mut Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameter tensors vs {} gradient tensors",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        g.ensure_finite("gradient")?;
    }
    Ok(())
}

/// `theta' = theta - lr * g`.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Tensor], cfg: &OptimizerConfig) -> Result<()> {
    check_pairing(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= cfg.lr * gv;
        }
        p.ensure_finite("sgd parameters")?;
    }
    Ok(())
}

/// `v' = rho v + (1 - rho) g^2; theta' = theta - lr g / (sqrt(v') + eps)`.
pub fn rmsprop_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<()> {
    check_pairing(params, grads)?;
    state.ensure_slots_for(params, false)?;
    state.t += 1;
    for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let slot = &mut state.v[idx];
        for (j, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let v = cfg.rho * slot[j] + (1.0 - cfg.rho) * gv * gv;
            slot[j] = v;
            *pv -= cfg.lr * gv / (v.sqrt() + cfg.eps);
        }
        p.ensure_finite("rmsprop parameters")?;
    }
    Ok(())
}

/// Adam with bias correction; the step counter is incremented before
/// correcting, and eps sits outside the square root.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<()> {
    check_pairing(params, grads)?;
    state.ensure_slots_for(params, true)?;
    state.t += 1;
    let m_corr = 1.0 - cfg.beta1.powi(state.t as i32);
    let v_corr = 1.0 - cfg.beta2.powi(state.t as i32);
    for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (ms, vs) = (&mut state.m[idx], &mut state.v[idx]);
        for (j, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let m = cfg.beta1 * ms[j] + (1.0 - cfg.beta1) * gv;
            let v = cfg.beta2 * vs[j] + (1.0 - cfg.beta2) * gv * gv;
            ms[j] = m;
            vs[j] = v;
            let m_hat = m / m_corr;
            let v_hat = v / v_corr;
            *pv -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        p.ensure_finite("adam parameters")?;
    }
    Ok(())
}

/// Stateful wrapper binding one config and one state to a training run.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Optimizer {
            cfg,
            state: OptimizerState::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.state.t
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                sgd_step(params, grads, &self.cfg)?;
                // SGD keeps no slots but the step counter still advances.
                self.state.t += 1;
                Ok(())
            }
            OptimizerKind::RmsProp => rmsprop_step(params, grads, &mut self.state, &self.cfg),
            OptimizerKind::Adam => adam_step(params, grads, &mut self.state, &self.cfg),
        }
    }
}
