//! Splitting of each mode's generator into an uncontrolled linear diffusion and a remainder.
//!
//! For mode `m` the underlying diffusion is `(f̲, σ̲)` with `f̲(x) = A̲ x + f̲0`, `σ̲` constant
//! and invertible, and `a = σ̲σ̲ᵀ`. The residual factor `Σ` satisfies
//! `σ̲ Σ Σᵀ σ̲ᵀ + a = σσᵀ` and the drift residual `g` satisfies `f̲ + σ̲ g = f`.

use nalgebra::{DMatrix, DVector};

use crate::error::{HjbError, Result};
use crate::linalg;
use crate::problem::{ControlProblem, UnderlyingConfig};

/// Tolerated negative eigenvalue of `σσᵀ − a`.
pub const LOEWNER_TOL: f64 = 1e-10;
/// Relative pivot cutoff of the rank-revealing Cholesky factorization.
pub const RANK_TOL: f64 = 1e-12;
/// Headroom applied to the observed `max tr(ΣΣᵀ)`.
pub const A_BAR_HEADROOM: f64 = 1.05;

/// Uncontrolled diffusion `dX = (A x + f0) dt + σ dW` used to simulate one mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Underlying {
    pub a: DMatrix<f64>,
    pub f0: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl Underlying {
    pub fn driftless(sigma: DMatrix<f64>) -> Self {
        let d = sigma.nrows();
        Self {
            a: DMatrix::zeros(d, d),
            f0: DVector::zeros(d),
            sigma,
        }
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut f = linalg::matvec(&self.a, x);
        for (fi, c) in f.iter_mut().zip(self.f0.iter()) {
            *fi += c;
        }
        f
    }
}

#[derive(Clone, Debug)]
struct ModeParts {
    under: Underlying,
    sigma_inv: DMatrix<f64>,
    residual: DMatrix<f64>,
    /// `σ̲⁻¹ (A − A̲)`, `σ̲⁻¹ B`, `σ̲⁻¹ (f0 − f̲0)`: `g` is affine in `(x, u)`.
    g_x: DMatrix<f64>,
    g_u: DMatrix<f64>,
    g_0: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    dim: usize,
    parts: Vec<ModeParts>,
    a_bar: f64,
    projection: Vec<usize>,
}

impl Decomposition {
    /// Uses the underlying choice stored in the problem config, falling back to the default
    /// `σ̲ = ε I`, `f̲ = 0` with the largest admissible `ε` times 0.99.
    pub fn from_problem(prob: &ControlProblem) -> Result<Self> {
        let d = prob.dim();
        let cfg = prob.config();
        let mut default_eps = None;
        let mut unders = Vec::with_capacity(prob.modes().len());
        for (m, mc) in cfg.modes.iter().enumerate() {
            let choice = mc.underlying.as_ref().or(cfg.underlying.as_ref());
            let u = match choice {
                Some(c) => resolve_underlying(prob, m, c)?,
                None => {
                    let eps = match default_eps {
                        Some(e) => e,
                        None => {
                            let e = default_scale(prob)?;
                            default_eps = Some(e);
                            e
                        }
                    };
                    Underlying::driftless(DMatrix::identity(d, d) * eps)
                }
            };
            unders.push(u);
        }
        let projection = cfg.projection.clone().unwrap_or_else(|| (0..prob.modes().len()).collect());
        Self::build(prob, unders, projection)
    }

    /// Builds the decomposition for an explicit per-mode underlying diffusion.
    pub fn build(prob: &ControlProblem, underlying: Vec<Underlying>, projection: Vec<usize>) -> Result<Self> {
        let d = prob.dim();
        let nm = prob.modes().len();
        if underlying.len() != nm {
            return Err(HjbError::Dimension(format!(
                "{} underlying diffusions for {nm} modes",
                underlying.len()
            )));
        }
        if projection.len() != nm {
            return Err(HjbError::Config(format!("projection has {} entries for {nm} modes", projection.len())));
        }
        let mut parts = Vec::with_capacity(nm);
        let mut a_bar: f64 = 0.0;
        for (m, under) in underlying.into_iter().enumerate() {
            let mode = prob.mode(m);
            if under.sigma.shape() != (d, d) || under.a.shape() != (d, d) || under.f0.len() != d {
                return Err(HjbError::Dimension(format!("underlying diffusion of mode {m} is not {d}-dimensional")));
            }
            let sigma_inv = linalg::inverse(&under.sigma)
                .map_err(|_| HjbError::Factorization(format!("underlying sigma of mode {m} is singular")))?;
            let a = &under.sigma * under.sigma.transpose();
            let cov = mode.diffusion_cov();
            let diff = linalg::symmetrize(&(&cov - &a));
            let lowest = linalg::sym_min_eigenvalue(&diff);
            if lowest < -LOEWNER_TOL {
                return Err(HjbError::Decomposition { mode: m, eigenvalue: lowest });
            }
            let scaled = linalg::symmetrize(&(&sigma_inv * &diff * sigma_inv.transpose()));
            let scale = (&sigma_inv * &cov * sigma_inv.transpose()).amax().max(1.0);
            let residual = if scaled.diagonal().max() <= 1e-13 * scale {
                DMatrix::zeros(d, 0)
            } else {
                linalg::pivoted_cholesky(&scaled, RANK_TOL)?
            };
            a_bar = a_bar.max(residual.norm_squared());
            parts.push(ModeParts {
                g_x: &sigma_inv * (&mode.a - &under.a),
                g_u: &sigma_inv * &mode.b,
                g_0: &sigma_inv * (&mode.f0 - &under.f0),
                sigma_inv,
                residual,
                under,
            });
        }
        // modes sharing a simulation class must share the underlying diffusion
        for i in 0..nm {
            for j in 0..i {
                if projection[i] == projection[j] && parts[i].under != parts[j].under {
                    return Err(HjbError::Config(format!(
                        "modes {j} and {i} share simulation class {} but not the underlying diffusion",
                        projection[i]
                    )));
                }
            }
        }
        Ok(Self {
            dim: d,
            parts,
            a_bar: a_bar * A_BAR_HEADROOM,
            projection,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_modes(&self) -> usize {
        self.parts.len()
    }

    pub fn underlying(&self, m: usize) -> &Underlying {
        &self.parts[m].under
    }

    pub fn sigma_under(&self, m: usize) -> &DMatrix<f64> {
        &self.parts[m].under.sigma
    }

    pub fn sigma_under_inv(&self, m: usize) -> &DMatrix<f64> {
        &self.parts[m].sigma_inv
    }

    /// `a = σ̲σ̲ᵀ`
    pub fn a_matrix(&self, m: usize) -> DMatrix<f64> {
        let s = &self.parts[m].under.sigma;
        s * s.transpose()
    }

    /// `Σ^m`, a `d × ℓ` matrix with `ℓ` the numerical rank of `σσᵀ − a`.
    pub fn residual_factor(&self, m: usize) -> &DMatrix<f64> {
        &self.parts[m].residual
    }

    pub fn rank(&self, m: usize) -> usize {
        self.parts[m].residual.ncols()
    }

    /// `tr(Σ^m Σ^mᵀ)`
    pub fn residual_trace(&self, m: usize) -> f64 {
        self.parts[m].residual.norm_squared()
    }

    /// Upper bound of `tr(ΣΣᵀ)` over modes, with 5% headroom.
    pub fn a_bar(&self) -> f64 {
        self.a_bar
    }

    pub fn min_k(&self) -> u32 {
        min_k(self.a_bar)
    }

    /// Simulation class of each mode.
    pub fn projection(&self) -> &[usize] {
        &self.projection
    }

    /// Distinct simulation classes in increasing order.
    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.projection.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// First mode belonging to a simulation class.
    pub fn class_representative(&self, class: usize) -> Option<usize> {
        self.projection.iter().position(|&c| c == class)
    }

    /// `f̲(x)`
    pub fn underlying_drift(&self, m: usize, x: &[f64]) -> Vec<f64> {
        self.parts[m].under.drift(x)
    }

    /// `g^m(x, u) = σ̲⁻¹ (f^m(x, u) − f̲(x))`
    pub fn drift_residual(&self, m: usize, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut g = self.drift_residual_x(m, x);
        let gu = linalg::matvec(&self.parts[m].g_u, u);
        for (gi, v) in g.iter_mut().zip(gu) {
            *gi += v;
        }
        g
    }

    /// Control-free part `σ̲⁻¹ ((A − A̲) x + f0 − f̲0)` of `g`.
    pub fn drift_residual_x(&self, m: usize, x: &[f64]) -> Vec<f64> {
        let p = &self.parts[m];
        let mut g = linalg::matvec(&p.g_x, x);
        for (gi, c) in g.iter_mut().zip(p.g_0.iter()) {
            *gi += c;
        }
        g
    }

    /// `σ̲⁻¹ B`, so that `g(x, u) = g(x, 0) + σ̲⁻¹ B u`.
    pub fn drift_residual_gain(&self, m: usize) -> &DMatrix<f64> {
        &self.parts[m].g_u
    }

    /// `𝒢₁ = (σ̲ g)·p`
    pub fn g1_value(&self, m: usize, x: &[f64], p: &[f64], u: &[f64]) -> Result<f64> {
        self.check_len(x.len(), "x")?;
        self.check_len(p.len(), "p")?;
        let g = self.drift_residual(m, x, u);
        Ok(linalg::dot(&linalg::matvec(self.sigma_under(m), &g), p))
    }

    /// `𝒢₂ = ½ tr(σ̲ ΣΣᵀ σ̲ᵀ Γ)`
    pub fn g2_value(&self, m: usize, x: &[f64], gamma: &DMatrix<f64>, _u: &[f64]) -> Result<f64> {
        self.check_len(x.len(), "x")?;
        if gamma.shape() != (self.dim, self.dim) {
            return Err(HjbError::Dimension(format!("Gamma must be {0}x{0}", self.dim)));
        }
        let s = self.sigma_under(m) * self.residual_factor(m);
        Ok(0.5 * (&s * s.transpose() * gamma).trace())
    }

    /// `ℒ^m(x, p, Γ) = f̲·p + ½ tr(a Γ)`
    pub fn generator_value(&self, m: usize, x: &[f64], p: &[f64], gamma: &DMatrix<f64>) -> f64 {
        linalg::dot(&self.underlying_drift(m, x), p) + 0.5 * (self.a_matrix(m) * gamma).trace()
    }

    /// Largest entry of `|σσᵀ − (σ̲ΣΣᵀσ̲ᵀ + a)|` over modes.
    pub fn reconstruction_error(&self, prob: &ControlProblem) -> f64 {
        (0..self.parts.len())
            .map(|m| {
                let s = self.sigma_under(m) * self.residual_factor(m);
                (prob.mode(m).diffusion_cov() - &s * s.transpose() - self.a_matrix(m)).amax()
            })
            .fold(0.0, f64::max)
    }

    fn check_len(&self, n: usize, what: &str) -> Result<()> {
        if n != self.dim {
            return Err(HjbError::Dimension(format!("{what} has {n} entries, expected {}", self.dim)));
        }
        Ok(())
    }
}

/// Smallest `k ≥ 0` with `a_bar ≤ 4k + 2`.
pub fn min_k(a_bar: f64) -> u32 {
    if a_bar <= 2.0 {
        0
    } else {
        ((a_bar - 2.0) / 4.0).ceil() as u32
    }
}

fn resolve_underlying(prob: &ControlProblem, m: usize, c: &UnderlyingConfig) -> Result<Underlying> {
    let d = prob.dim();
    let sigma = match (&c.sigma, c.reference_mode) {
        (Some(s), _) => linalg::matrix_from_row_major(d, d, s, "underlying sigma")?,
        (None, Some(r)) => {
            if r >= prob.modes().len() {
                return Err(HjbError::Config(format!("reference_mode {r} does not exist (mode {m})")));
            }
            prob.mode(r).sigma.clone()
        }
        (None, None) => {
            return Err(HjbError::Config(format!(
                "underlying diffusion of mode {m} needs `sigma` or `reference_mode`"
            )))
        }
    };
    let a = match &c.A {
        Some(v) => linalg::matrix_from_row_major(d, d, v, "underlying A")?,
        None => DMatrix::zeros(d, d),
    };
    let f0 = match &c.f0 {
        Some(v) if v.len() == d => DVector::from_column_slice(v),
        Some(v) => return Err(HjbError::Dimension(format!("underlying f0: expected {d} entries, got {}", v.len()))),
        None => DVector::zeros(d),
    };
    Ok(Underlying { a, f0, sigma })
}

/// `0.99 · min_m sqrt(λ_min(σ^m σ^mᵀ))`.
fn default_scale(prob: &ControlProblem) -> Result<f64> {
    let mut lo = f64::INFINITY;
    for mode in prob.modes() {
        lo = lo.min(linalg::sym_min_eigenvalue(&mode.diffusion_cov()));
    }
    let eps = 0.99 * lo.max(0.0).sqrt();
    if !(eps > 0.0) {
        return Err(HjbError::Factorization(
            "sigma sigma^T is singular for some mode; the default underlying diffusion is not usable, \
             configure `underlying` explicitly"
                .into(),
        ));
    }
    Ok(eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{registry, HamiltonianPoint};

    fn with_sigma(sigma: f64, under: f64) -> (ControlProblem, Decomposition) {
        let mut cfg = registry::builtin_config("lq1d").unwrap();
        cfg.modes[0].sigma = vec![sigma];
        cfg.underlying = Some(UnderlyingConfig {
            sigma: Some(vec![under]),
            ..Default::default()
        });
        let prob = ControlProblem::from_config(cfg).unwrap();
        let dec = Decomposition::from_problem(&prob).unwrap();
        (prob, dec)
    }

    #[test]
    fn matching_sigma_gives_empty_residual() {
        let (_, dec) = with_sigma(1.0, 1.0);
        assert_eq!(dec.rank(0), 0);
        assert_eq!(dec.a_bar(), 0.0);
        assert_eq!(dec.min_k(), 0);
        let g2 = dec.g2_value(0, &[0.3], &DMatrix::from_element(1, 1, 7.0), &[0.0]).unwrap();
        assert_eq!(g2, 0.0);
    }

    #[test]
    fn scalar_cholesky() {
        let (_, dec) = with_sigma(2f64.sqrt(), 1.0);
        assert_eq!(dec.rank(0), 1);
        assert!((dec.residual_trace(0) - 1.0).abs() < 1e-14);
        let g2 = dec.g2_value(0, &[0.0], &DMatrix::from_element(1, 1, 4.0), &[0.0]).unwrap();
        assert!((g2 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn drift_residual_is_the_control() {
        let (_, dec) = with_sigma(1.0, 1.0);
        for u in [-2.0, 0.0, 0.7] {
            assert_eq!(dec.drift_residual(0, &[0.4], &[u]), vec![u]);
        }
    }

    #[test]
    fn g1_scalar_product() {
        let mut cfg = registry::builtin_config("lq1d").unwrap();
        cfg.modes[0].sigma = vec![3.0];
        cfg.modes[0].B = vec![6.0];
        cfg.underlying = Some(UnderlyingConfig {
            sigma: Some(vec![2.0]),
            ..Default::default()
        });
        let prob = ControlProblem::from_config(cfg).unwrap();
        let dec = Decomposition::from_problem(&prob).unwrap();
        // g = 6u/2 = 3 at u = 1
        assert_eq!(dec.g1_value(0, &[0.0], &[5.0], &[1.0]).unwrap(), 30.0);
    }

    #[test]
    fn min_k_thresholds() {
        assert_eq!(min_k(2.0), 0);
        assert_eq!(min_k(2.5), 1);
        assert_eq!(min_k(0.0), 0);
        assert_eq!(min_k(6.0), 1);
        assert_eq!(min_k(6.1), 2);
    }

    #[test]
    fn loewner_violation_is_reported() {
        let mut cfg = registry::builtin_config("lq1d").unwrap();
        cfg.underlying = Some(UnderlyingConfig {
            sigma: Some(vec![1.5]),
            ..Default::default()
        });
        let prob = ControlProblem::from_config(cfg).unwrap();
        match Decomposition::from_problem(&prob) {
            Err(HjbError::Decomposition { mode, eigenvalue }) => {
                assert_eq!(mode, 0);
                assert!((eigenvalue + 1.25).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn singular_underlying_is_a_factorization_error() {
        let mut cfg = registry::builtin_config("lq1d").unwrap();
        cfg.underlying = Some(UnderlyingConfig {
            sigma: Some(vec![0.0]),
            ..Default::default()
        });
        let prob = ControlProblem::from_config(cfg).unwrap();
        assert!(matches!(Decomposition::from_problem(&prob), Err(HjbError::Factorization(_))));
    }

    #[test]
    fn decomposition_is_exact_on_every_builtin() {
        for name in registry::BUILTIN_NAMES {
            let prob = registry::builtin(name).unwrap();
            let dec = Decomposition::from_problem(&prob).unwrap();
            assert!(dec.reconstruction_error(&prob) < 1e-10, "{name}");
            let d = prob.dim();
            let gamma = DMatrix::from_fn(d, d, |i, j| 0.3 + i as f64 - 0.7 * j as f64);
            for x in prob.audit_points() {
                let p: Vec<f64> = (0..d).map(|i| 0.5 - i as f64).collect();
                let pt = HamiltonianPoint::new(x.clone(), 0.8, p.clone(), gamma.clone()).unwrap();
                for m in 0..prob.modes().len() {
                    let mode = prob.mode(m);
                    for u in prob.controls().iter().step_by(7) {
                        let h = prob.hamiltonian_mu(m, u, &pt).unwrap();
                        let g = dec.generator_value(m, &x, &p, &pt.gamma)
                            + mode.running_reward(&x, u)
                            - mode.delta * pt.r
                            + dec.g1_value(m, &x, &p, u).unwrap()
                            + dec.g2_value(m, &x, &pt.gamma, u).unwrap();
                        assert!((h - g).abs() < 1e-9, "{name}: {h} vs {g}");
                        let f = mode.drift(&x, u);
                        let rebuilt: Vec<f64> = {
                            let sg = linalg::matvec(dec.sigma_under(m), &dec.drift_residual(m, &x, u));
                            dec.underlying_drift(m, &x).iter().zip(sg).map(|(a, b)| a + b).collect()
                        };
                        for (a, b) in f.iter().zip(rebuilt) {
                            assert!((a - b).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn degenerate_builtin_has_rank_one_residual() {
        let prob = registry::builtin("degenerate2d").unwrap();
        let dec = Decomposition::from_problem(&prob).unwrap();
        assert_eq!(dec.rank(0), 1);
        assert!((dec.residual_trace(0) - 2.0).abs() < 1e-12);
        assert_eq!(dec.min_k(), 1);
    }

    #[test]
    fn rebuilding_from_the_reconstruction_is_idempotent() {
        let prob = registry::builtin("lq2d").unwrap();
        let dec = Decomposition::from_problem(&prob).unwrap();
        let s = dec.sigma_under(0) * dec.residual_factor(0);
        let cov = &s * s.transpose() + dec.a_matrix(0);
        let mut cfg = prob.config().clone();
        let chol = cov.clone().cholesky().unwrap().l();
        cfg.modes[0].sigma = linalg::matrix_to_row_major(&chol);
        cfg.underlying = Some(UnderlyingConfig {
            sigma: Some(linalg::matrix_to_row_major(dec.sigma_under(0))),
            ..Default::default()
        });
        let again = Decomposition::from_problem(&ControlProblem::from_config(cfg).unwrap()).unwrap();
        let g1 = dec.residual_factor(0) * dec.residual_factor(0).transpose();
        let g2 = again.residual_factor(0) * again.residual_factor(0).transpose();
        assert!((g1 - g2).amax() < 1e-10);
    }
}
