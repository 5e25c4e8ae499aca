//! Control problems with finitely many switching modes and a gridded continuum control,
//! their Hamiltonians, a registry of built-in instances and the Riccati oracle.

mod config;
pub mod registry;
mod riccati;

use nalgebra::{DMatrix, DVector};

pub use config::{AuditWindow, ControlAxis, DeclaredBounds, ModeConfig, ProblemConfig, UnderlyingConfig};
pub use riccati::{lq_hamiltonian_sup, riccati_solve, RiccatiSolution};

use crate::error::{HjbError, Result};
use crate::linalg::{self, matrix_from_row_major};
use crate::maxplus::{max_of_forms, QuadraticForm};

/// Coefficients of one switching mode.
#[derive(Clone, Debug)]
pub struct Mode {
    pub name: String,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub f0: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub delta: f64,
    pub lxx: DMatrix<f64>,
    pub lxu: DMatrix<f64>,
    pub luu: DMatrix<f64>,
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub l0: f64,
}

impl Mode {
    pub fn drift(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut f = linalg::matvec(&self.a, x);
        let bu = linalg::matvec(&self.b, u);
        for i in 0..f.len() {
            f[i] += bu[i] + self.f0[i];
        }
        f
    }

    pub fn running_reward(&self, x: &[f64], u: &[f64]) -> f64 {
        0.5 * linalg::quad_form(&self.lxx, x)
            + linalg::dot(x, &linalg::matvec(&self.lxu, u))
            + 0.5 * linalg::quad_form(&self.luu, u)
            + linalg::dot(self.lx.as_slice(), x)
            + linalg::dot(self.lu.as_slice(), u)
            + self.l0
    }

    /// `σ σᵀ`
    pub fn diffusion_cov(&self) -> DMatrix<f64> {
        &self.sigma * self.sigma.transpose()
    }
}

/// Evaluation point `(x, r, p, Γ)` of a Hamiltonian. `Γ` is symmetrized on construction.
#[derive(Clone, Debug)]
pub struct HamiltonianPoint {
    pub x: Vec<f64>,
    pub r: f64,
    pub p: Vec<f64>,
    pub gamma: DMatrix<f64>,
}

impl HamiltonianPoint {
    pub fn new(x: Vec<f64>, r: f64, p: Vec<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        let d = x.len();
        if p.len() != d || gamma.nrows() != d || gamma.ncols() != d {
            return Err(HjbError::Dimension(format!(
                "Hamiltonian point: x has {d} entries, p has {}, Gamma is {}x{}",
                p.len(),
                gamma.nrows(),
                gamma.ncols()
            )));
        }
        Ok(Self {
            x,
            r,
            p,
            gamma: linalg::symmetrize(&gamma),
        })
    }
}

/// Which (mode, control) attained a maximum. Ties go to the first index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Argmax {
    pub mode: usize,
    pub control: usize,
}

#[derive(Clone, Debug)]
pub struct ControlProblem {
    config: ProblemConfig,
    dim: usize,
    control_dim: usize,
    horizon: f64,
    modes: Vec<Mode>,
    controls: Vec<Vec<f64>>,
    terminal_forms: Vec<QuadraticForm>,
    audit: AuditWindow,
}

impl ControlProblem {
    pub fn from_config(config: ProblemConfig) -> Result<Self> {
        let d = config.d;
        if d == 0 {
            return Err(HjbError::Config("d must be positive".into()));
        }
        if !(config.horizon > 0.0) || !config.horizon.is_finite() {
            return Err(HjbError::Config(format!("T must be positive, got {}", config.horizon)));
        }
        if config.modes.is_empty() {
            return Err(HjbError::Config("at least one mode is required".into()));
        }
        for axis in &config.controls {
            if axis.count == 0 || !(axis.max >= axis.min) {
                return Err(HjbError::Config(format!("invalid control axis {axis:?}")));
            }
        }
        let p = config.controls.len();
        let controls = cartesian(&config.controls.iter().map(ControlAxis::points).collect::<Vec<_>>());

        let zeros_or = |v: &Vec<f64>, n: usize| if v.is_empty() { vec![0.0; n] } else { v.clone() };
        let mut modes = Vec::with_capacity(config.modes.len());
        for mc in &config.modes {
            let what = |s: &str| format!("mode {}: {s}", mc.id);
            let mode = Mode {
                name: mc.id.clone(),
                a: matrix_from_row_major(d, d, &zeros_or(&mc.A, d * d), &what("A"))?,
                b: matrix_from_row_major(d, p, &zeros_or(&mc.B, d * p), &what("B"))?,
                f0: vec_checked(&zeros_or(&mc.f0, d), d, &what("f0"))?,
                sigma: matrix_from_row_major(d, d, &mc.sigma, &what("sigma"))?,
                delta: mc.delta,
                lxx: linalg::symmetrize(&matrix_from_row_major(d, d, &zeros_or(&mc.Lxx, d * d), &what("Lxx"))?),
                lxu: matrix_from_row_major(d, p, &zeros_or(&mc.Lxu, d * p), &what("Lxu"))?,
                luu: linalg::symmetrize(&matrix_from_row_major(p, p, &zeros_or(&mc.Luu, p * p), &what("Luu"))?),
                lx: vec_checked(&zeros_or(&mc.lx, d), d, &what("lx"))?,
                lu: vec_checked(&zeros_or(&mc.lu, p), p, &what("lu"))?,
                l0: mc.l0,
            };
            let finite = mode
                .a
                .iter()
                .chain(mode.b.iter())
                .chain(mode.f0.iter())
                .chain(mode.sigma.iter())
                .chain(mode.lxx.iter())
                .chain(mode.lxu.iter())
                .chain(mode.luu.iter())
                .chain(mode.lx.iter())
                .chain(mode.lu.iter())
                .chain([mode.delta, mode.l0].iter())
                .all(|v| v.is_finite());
            if !finite {
                return Err(HjbError::Config(what("non-finite coefficient")));
            }
            modes.push(mode);
        }

        if config.terminal_forms.is_empty() {
            return Err(HjbError::Config("terminal_forms must be nonempty".into()));
        }
        let terminal_forms = config
            .terminal_forms
            .iter()
            .map(|r| r.to_form(d))
            .collect::<Result<Vec<_>>>()?;

        if let Some(pi) = &config.projection {
            if pi.len() != modes.len() {
                return Err(HjbError::Config(format!(
                    "projection has {} entries for {} modes",
                    pi.len(),
                    modes.len()
                )));
            }
        }
        let audit = config.audit.unwrap_or_default();
        if audit.n == 0 || !(audit.hi >= audit.lo) {
            return Err(HjbError::Config(format!("invalid audit window {audit:?}")));
        }

        Ok(Self {
            dim: d,
            control_dim: p,
            horizon: config.horizon,
            modes,
            controls,
            terminal_forms,
            audit,
            config,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_config(serde_json::from_str(text)?)
    }

    pub fn config(&self) -> &ProblemConfig {
        &self.config
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode(&self, m: usize) -> &Mode {
        &self.modes[m]
    }

    pub fn controls(&self) -> &[Vec<f64>] {
        &self.controls
    }

    pub fn terminal_forms(&self) -> &[QuadraticForm] {
        &self.terminal_forms
    }

    pub fn audit_window(&self) -> AuditWindow {
        self.audit
    }

    /// Same problem with a different control grid.
    pub fn with_controls(&self, axes: Vec<ControlAxis>) -> Result<Self> {
        let mut cfg = self.config.clone();
        cfg.controls = axes;
        Self::from_config(cfg)
    }

    /// Terminal reward `ψ(x) = max_z q(x, z)`.
    pub fn terminal(&self, x: &[f64]) -> f64 {
        max_of_forms(&self.terminal_forms, x).unwrap_or(f64::NEG_INFINITY)
    }

    /// Audit points: a tensor grid on the audit window.
    pub fn audit_points(&self) -> Vec<Vec<f64>> {
        let axis = ControlAxis {
            min: self.audit.lo,
            max: self.audit.hi,
            count: self.audit.n,
        }
        .points();
        cartesian(&vec![axis; self.dim])
    }

    /// `ℋ^{m,u}(x, r, p, Γ) = ½ tr(σσᵀΓ) + f·p − δ r + ℓ`.
    pub fn hamiltonian_mu(&self, m: usize, u: &[f64], pt: &HamiltonianPoint) -> Result<f64> {
        self.check_point(pt)?;
        let mode = self.modes.get(m).ok_or_else(|| HjbError::Config(format!("no mode {m}")))?;
        if u.len() != self.control_dim {
            return Err(HjbError::Dimension(format!(
                "control has {} entries, expected {}",
                u.len(),
                self.control_dim
            )));
        }
        let cov = mode.diffusion_cov();
        let second = 0.5 * (&cov * &pt.gamma).trace();
        let f = mode.drift(&pt.x, u);
        let val = second + linalg::dot(&f, &pt.p) - mode.delta * pt.r + mode.running_reward(&pt.x, u);
        if !val.is_finite() {
            let control = self.controls.iter().position(|c| c.as_slice() == u).unwrap_or(usize::MAX);
            return Err(HjbError::Domain {
                mode: m,
                control,
                x: pt.x.clone(),
            });
        }
        Ok(val)
    }

    /// `ℋ^m = max_u ℋ^{m,u}` over the control grid, with the maximizing control index.
    pub fn hamiltonian_m(&self, m: usize, pt: &HamiltonianPoint) -> Result<(f64, usize)> {
        if self.controls.is_empty() {
            return Err(HjbError::Config("empty control grid".into()));
        }
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, u) in self.controls.iter().enumerate() {
            let v = self.hamiltonian_mu(m, u, pt).map_err(|e| match e {
                HjbError::Domain { mode, x, .. } => HjbError::Domain { mode, control: i, x },
                other => other,
            })?;
            if v > best.0 {
                best = (v, i);
            }
        }
        Ok(best)
    }

    /// `ℋ = max_m ℋ^m`, with the maximizing (mode, control).
    pub fn hamiltonian(&self, pt: &HamiltonianPoint) -> Result<(f64, Argmax)> {
        let mut best = (f64::NEG_INFINITY, Argmax { mode: 0, control: 0 });
        for m in 0..self.modes.len() {
            let (v, c) = self.hamiltonian_m(m, pt)?;
            if v > best.0 {
                best = (v, Argmax { mode: m, control: c });
            }
        }
        Ok(best)
    }

    /// Audits the declared coefficient bounds on the audit grid × control grid.
    pub fn audit_bounds(&self) -> BoundsAudit {
        let mut obs = DeclaredBounds {
            f_sup: Some(0.0),
            sigma_sup: Some(0.0),
            ell_sup: Some(0.0),
            delta_lower: Some(f64::INFINITY),
        };
        let mut finite = true;
        for mode in &self.modes {
            let s = mode.sigma.amax();
            obs.sigma_sup = obs.sigma_sup.map(|v| v.max(s));
            obs.delta_lower = obs.delta_lower.map(|v| v.min(mode.delta));
            for x in self.audit_points() {
                for u in &self.controls {
                    let f = mode.drift(&x, u).iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    let l = mode.running_reward(&x, u).abs();
                    finite &= f.is_finite() && l.is_finite();
                    obs.f_sup = obs.f_sup.map(|v| v.max(f));
                    obs.ell_sup = obs.ell_sup.map(|v| v.max(l));
                }
            }
        }
        let mut violations = Vec::new();
        if !finite {
            violations.push("non-finite coefficient on the audit grid".to_string());
        }
        if let Some(decl) = self.config.bounds {
            let check = |name: &str, declared: Option<f64>, seen: Option<f64>, upper: bool, out: &mut Vec<String>| {
                if let (Some(dv), Some(sv)) = (declared, seen) {
                    let bad = if upper { sv > dv } else { sv < dv };
                    if bad {
                        out.push(format!("{name}: declared {dv}, observed {sv}"));
                    }
                }
            };
            check("f_sup", decl.f_sup, obs.f_sup, true, &mut violations);
            check("sigma_sup", decl.sigma_sup, obs.sigma_sup, true, &mut violations);
            check("ell_sup", decl.ell_sup, obs.ell_sup, true, &mut violations);
            check("delta_lower", decl.delta_lower, obs.delta_lower, false, &mut violations);
        }
        BoundsAudit {
            observed: obs,
            violations,
        }
    }

    /// Lower bound of the discount over modes (δ does not depend on (x, u) here).
    pub fn delta_lower(&self) -> f64 {
        self.modes.iter().map(|m| m.delta).fold(f64::INFINITY, f64::min)
    }

    fn check_point(&self, pt: &HamiltonianPoint) -> Result<()> {
        if pt.x.len() != self.dim {
            return Err(HjbError::Dimension(format!(
                "point has dimension {}, problem has {}",
                pt.x.len(),
                self.dim
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BoundsAudit {
    pub observed: DeclaredBounds,
    pub violations: Vec<String>,
}

fn vec_checked(v: &[f64], n: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() != n {
        return Err(HjbError::Dimension(format!("{what}: expected {n} entries, got {}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

/// Cartesian product in lexicographic order (first axis slowest). No axes gives one empty point.
pub fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for &v in axis {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::registry;

    fn scalar_problem(a: f64, b: f64, sigma: f64, delta: f64, l0: f64) -> ControlProblem {
        let cfg = ProblemConfig {
            name: "scalar".into(),
            d: 1,
            horizon: 1.0,
            modes: vec![ModeConfig {
                id: "m".into(),
                A: vec![a],
                B: vec![b],
                f0: vec![0.0],
                sigma: vec![sigma],
                delta,
                Lxx: vec![],
                Lxu: vec![],
                Luu: vec![],
                lx: vec![],
                lu: vec![],
                l0,
                underlying: None,
            }],
            controls: vec![ControlAxis { min: 1.0, max: 1.0, count: 1 }],
            terminal_forms: vec![crate::maxplus::FormRecord { q: vec![0.0], b: vec![0.0], c: 0.0 }],
            underlying: None,
            projection: None,
            bounds: None,
            audit: None,
            seed: None,
        };
        ControlProblem::from_config(cfg).unwrap()
    }

    fn pt1(x: f64, r: f64, p: f64, g: f64) -> HamiltonianPoint {
        HamiltonianPoint::new(vec![x], r, vec![p], DMatrix::from_element(1, 1, g)).unwrap()
    }

    #[test]
    fn pure_diffusion_term() {
        let prob = scalar_problem(0.0, 0.0, 1.0, 0.0, 0.0);
        let v = prob.hamiltonian_mu(0, &[1.0], &pt1(0.0, 0.0, 0.0, 2.0)).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn drift_discount_reward() {
        // f = 1 (B u with u = 1), σ = 0, δ = 1, ℓ = 5, (r, p) = (3, 2): 2 - 3 + 5
        let prob = scalar_problem(0.0, 1.0, 0.0, 1.0, 5.0);
        let v = prob.hamiltonian_mu(0, &[1.0], &pt1(0.7, 3.0, 2.0, 0.0)).unwrap();
        assert_eq!(v, 4.0);
    }

    #[test]
    fn singleton_max_matches_mu() {
        let prob = scalar_problem(0.3, 1.0, 0.5, 0.2, 1.0);
        let pt = pt1(0.4, 1.5, -2.0, 0.7);
        let mu = prob.hamiltonian_mu(0, &[1.0], &pt).unwrap();
        assert_eq!(prob.hamiltonian_m(0, &pt).unwrap(), (mu, 0));
        assert_eq!(prob.hamiltonian(&pt).unwrap().0, mu);
    }

    #[test]
    fn lq_hamiltonian_max_over_controls() {
        // max_u (2u - u²) = 1 at u = 1
        let prob = registry::builtin("lq1d").unwrap();
        let fine = prob.with_controls(vec![ControlAxis { min: -3.0, max: 3.0, count: 601 }]).unwrap();
        let (v, arg) = fine.hamiltonian(&pt1(0.0, 0.0, 2.0, 0.0)).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{v}");
        assert!((fine.controls()[arg.control][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refining_the_control_grid_never_lowers_the_max() {
        let prob = registry::builtin("lq1d").unwrap();
        let coarse = prob.with_controls(vec![ControlAxis { min: -1.0, max: 1.0, count: 3 }]).unwrap();
        let fine = prob.with_controls(vec![ControlAxis { min: -1.0, max: 1.0, count: 21 }]).unwrap();
        for &(x, p) in &[(0.0, 2.0), (0.3, 0.7), (-1.0, -1.3), (0.5, 0.1)] {
            let pt = pt1(x, 0.2, p, -1.0);
            assert!(coarse.hamiltonian(&pt).unwrap().0 <= fine.hamiltonian(&pt).unwrap().0);
        }
    }

    #[test]
    fn larger_mode_wins_and_ties_go_first() {
        let mut cfg = scalar_problem(0.0, 0.0, 1.0, 0.0, 0.0).config().clone();
        let mut second = cfg.modes[0].clone();
        second.l0 = 1.0;
        cfg.modes.push(second);
        let prob = ControlProblem::from_config(cfg.clone()).unwrap();
        let pt = pt1(0.1, 0.0, 0.0, 0.0);
        let (v, arg) = prob.hamiltonian(&pt).unwrap();
        assert_eq!(arg.mode, 1);
        assert_eq!(v, prob.hamiltonian_m(0, &pt).unwrap().0 + 1.0);
        cfg.modes[1].l0 = 0.0;
        let tie = ControlProblem::from_config(cfg).unwrap();
        assert_eq!(tie.hamiltonian(&pt).unwrap().1.mode, 0);
    }

    #[test]
    fn empty_controls_is_a_configuration_error() {
        let mut cfg = scalar_problem(0.0, 0.0, 1.0, 0.0, 0.0).config().clone();
        cfg.controls = vec![ControlAxis { min: 0.0, max: 1.0, count: 0 }];
        assert!(matches!(ControlProblem::from_config(cfg), Err(HjbError::Config(_))));
        let mut cfg = scalar_problem(0.0, 0.0, 1.0, 0.0, 0.0).config().clone();
        cfg.modes.clear();
        assert!(matches!(ControlProblem::from_config(cfg), Err(HjbError::Config(_))));
    }

    #[test]
    fn gamma_is_symmetrized() {
        let pt = HamiltonianPoint::new(vec![0.0; 2], 0.0, vec![0.0; 2], DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).unwrap();
        assert_eq!(pt.gamma[(0, 1)], 1.0);
        assert_eq!(pt.gamma[(1, 0)], 1.0);
    }

    #[test]
    fn declared_bounds_are_audited() {
        let mut cfg = registry::builtin("lq1d").unwrap().config().clone();
        cfg.bounds = Some(DeclaredBounds {
            f_sup: Some(0.5),
            sigma_sup: Some(10.0),
            ell_sup: None,
            delta_lower: Some(0.0),
        });
        let prob = ControlProblem::from_config(cfg).unwrap();
        let audit = prob.audit_bounds();
        assert_eq!(audit.violations.len(), 1, "{:?}", audit.violations);
        assert!(audit.violations[0].starts_with("f_sup"));
    }

    #[test]
    fn cartesian_order_is_lexicographic() {
        let g = cartesian(&[vec![0.0, 1.0], vec![5.0, 6.0]]);
        assert_eq!(g, vec![vec![0.0, 5.0], vec![0.0, 6.0], vec![1.0, 5.0], vec![1.0, 6.0]]);
        assert_eq!(cartesian(&[]), vec![Vec::<f64>::new()]);
    }
}
