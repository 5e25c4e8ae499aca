//! JSON problem description.
//!
//! Matrices are row-major. Drift is `f = A x + B u + f0`, diffusion `sigma` is a constant
//! `d x d` matrix, and the running reward is
//! `ℓ = ½ xᵀ Lxx x + xᵀ Lxu u + ½ uᵀ Luu u + lx·x + lu·u + l0`.

use serde::{Deserialize, Serialize};

use crate::maxplus::FormRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub name: String,
    pub d: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub modes: Vec<ModeConfig>,
    #[serde(default)]
    pub controls: Vec<ControlAxis>,
    pub terminal_forms: Vec<FormRecord>,
    /// Shared underlying diffusion used by every mode without its own override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub underlying: Option<UnderlyingConfig>,
    /// Simulation class of each mode (modes in one class share the underlying diffusion).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<DeclaredBounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditWindow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeConfig {
    pub id: String,
    #[serde(default)]
    pub A: Vec<f64>,
    #[serde(default)]
    pub B: Vec<f64>,
    #[serde(default)]
    pub f0: Vec<f64>,
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub Lxx: Vec<f64>,
    #[serde(default)]
    pub Lxu: Vec<f64>,
    #[serde(default)]
    pub Luu: Vec<f64>,
    #[serde(default)]
    pub lx: Vec<f64>,
    #[serde(default)]
    pub lu: Vec<f64>,
    #[serde(default)]
    pub l0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub underlying: Option<UnderlyingConfig>,
}

/// Choice of the uncontrolled diffusion `(f̲, σ̲)`.
///
/// Either an explicit `sigma` or `reference_mode` (use that mode's `sigma`); the drift
/// `A x + f0` defaults to zero.
#[allow(non_snake_case)]
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UnderlyingConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_mode: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub A: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f0: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlAxis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl ControlAxis {
    pub fn points(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.min],
            n => (0..n)
                .map(|i| self.min + (self.max - self.min) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

/// Sup-norm bounds asserted by the problem author, audited on the audit window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeclaredBounds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_sup: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_sup: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell_sup: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_lower: Option<f64>,
}

/// Cube `[lo, hi]^d` sampled with `n` points per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditWindow {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Default for AuditWindow {
    fn default() -> Self {
        Self { lo: -2.0, hi: 2.0, n: 5 }
    }
}
