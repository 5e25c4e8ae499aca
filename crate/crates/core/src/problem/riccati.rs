//! Closed-loop Riccati oracle for single-mode LQ problems.
//!
//! With `v(t,x) = ½ xᵀP x + b·x + c`, maximizing the Hamiltonian over an unconstrained
//! control gives `u* = N (K x + k0)` where `N = −Luu⁻¹`, `K = BᵀP + Lxuᵀ`, `k0 = Bᵀb + lu`,
//! and the coefficients solve, in backward time `τ = T − t`,
//!
//! ```text
//! P' = AᵀP + PA − δP + Lxx + KᵀNK
//! b' = Aᵀb + P f0 − δb + lx + KᵀN k0
//! c' = ½ tr(σσᵀP) + f0·b − δc + l0 + ½ k0ᵀN k0
//! ```

use nalgebra::{DMatrix, DVector};

use super::{ControlProblem, HamiltonianPoint, Mode};
use crate::error::{HjbError, Result};
use crate::linalg;

#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    pub p: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
    pub c: Vec<f64>,
    pub time_step: f64,
}

impl RiccatiSolution {
    pub fn time_index(&self, t: f64) -> Result<usize> {
        let i = (t / self.time_step).round();
        if i < 0.0 || i as usize >= self.times.len() || (self.times[i as usize] - t).abs() > 1e-9 * (1.0 + t.abs()) {
            return Err(HjbError::TimeIndex { t });
        }
        Ok(i as usize)
    }

    pub fn value_at_index(&self, i: usize, x: &[f64]) -> f64 {
        0.5 * linalg::quad_form(&self.p[i], x) + linalg::dot(self.b[i].as_slice(), x) + self.c[i]
    }

    /// `v(t, x)`; `t` must be on the integration grid.
    pub fn value(&self, t: f64, x: &[f64]) -> Result<f64> {
        Ok(self.value_at_index(self.time_index(t)?, x))
    }

    /// `(Dv, D²v)` at grid index `i`.
    pub fn space_derivatives(&self, i: usize, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let mut g = linalg::matvec(&self.p[i], x);
        for (gi, bi) in g.iter_mut().zip(self.b[i].iter()) {
            *gi += bi;
        }
        (g, self.p[i].clone())
    }

    /// `∂_t v` at grid index `i` from the Riccati right-hand side evaluated at the stored
    /// coefficients.
    pub fn time_derivative(&self, prob: &ControlProblem, i: usize, x: &[f64]) -> Result<f64> {
        let mode = prob.mode(0);
        let n = gain_matrix(mode)?;
        let k = rhs(
            mode,
            &n,
            &Coeffs {
                p: self.p[i].clone(),
                b: self.b[i].clone(),
                c: self.c[i],
            },
        );
        // the system runs in backward time τ = T − t
        Ok(-(0.5 * linalg::quad_form(&k.p, x) + linalg::dot(k.b.as_slice(), x) + k.c))
    }

    /// Five-point central difference of the stored path in time at interior index `i`.
    pub fn stencil_time_derivative(&self, i: usize, x: &[f64]) -> Result<f64> {
        if i < 2 || i + 2 >= self.times.len() {
            return Err(HjbError::TimeIndex { t: self.times.get(i).copied().unwrap_or(f64::NAN) });
        }
        let v = |j: usize| self.value_at_index(j, x);
        Ok((-v(i + 2) + 8.0 * v(i + 1) - 8.0 * v(i - 1) + v(i - 2)) / (12.0 * self.time_step))
    }

    /// `|∂_t v + ℋ(x, v, Dv, D²v)|` at grid index `i`, with `ℋ` maximized over the
    /// unconstrained control.
    pub fn residual(&self, prob: &ControlProblem, i: usize, x: &[f64]) -> Result<f64> {
        if i >= self.times.len() {
            return Err(HjbError::TimeIndex { t: f64::NAN });
        }
        let dvdt = self.time_derivative(prob, i, x)?;
        let (p, gamma) = self.space_derivatives(i, x);
        let pt = HamiltonianPoint::new(x.to_vec(), self.value_at_index(i, x), p, gamma)?;
        Ok((dvdt + lq_hamiltonian_sup(prob.mode(0), &pt)?).abs())
    }

    /// Largest residual over interior times and the given points.
    pub fn max_residual(&self, prob: &ControlProblem, points: &[Vec<f64>]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in 0..self.times.len() {
            for x in points {
                worst = worst.max(self.residual(prob, i, x)?);
            }
        }
        Ok(worst)
    }
}

/// `sup_u ℋ^{m,u}` over unconstrained `u` for an LQ mode with `Luu` negative definite.
pub fn lq_hamiltonian_sup(mode: &Mode, pt: &HamiltonianPoint) -> Result<f64> {
    let n = gain_matrix(mode)?;
    let x = &pt.x;
    let cov = mode.diffusion_cov();
    let mut val = 0.5 * (&cov * &pt.gamma).trace();
    let mut fx = linalg::matvec(&mode.a, x);
    for (fi, f0) in fx.iter_mut().zip(mode.f0.iter()) {
        *fi += f0;
    }
    val += linalg::dot(&fx, &pt.p) - mode.delta * pt.r;
    val += 0.5 * linalg::quad_form(&mode.lxx, x) + linalg::dot(mode.lx.as_slice(), x) + mode.l0;
    // r = Bᵀp + Lxuᵀx + lu
    let p = DVector::from_column_slice(&pt.p);
    let xv = DVector::from_column_slice(x);
    let r = mode.b.transpose() * p + mode.lxu.transpose() * xv + &mode.lu;
    val += 0.5 * (r.transpose() * &n * &r)[(0, 0)];
    Ok(val)
}

fn gain_matrix(mode: &Mode) -> Result<DMatrix<f64>> {
    let p = mode.luu.nrows();
    if p == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if linalg::sym_max_eigenvalue(&mode.luu) >= -1e-12 {
        return Err(HjbError::UnsupportedOracle(
            "Luu must be negative definite for the Riccati oracle".into(),
        ));
    }
    Ok(-linalg::inverse(&mode.luu)?)
}

struct Coeffs {
    p: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
}

fn rhs(mode: &Mode, n: &DMatrix<f64>, y: &Coeffs) -> Coeffs {
    let k = mode.b.transpose() * &y.p + mode.lxu.transpose();
    let k0 = mode.b.transpose() * &y.b + &mode.lu;
    let at = mode.a.transpose();
    let dp = &at * &y.p + &y.p * &mode.a - &y.p * mode.delta + &mode.lxx + k.transpose() * n * &k;
    let db = &at * &y.b + &y.p * &mode.f0 - &y.b * mode.delta + &mode.lx + k.transpose() * n * &k0;
    let dc = 0.5 * (mode.diffusion_cov() * &y.p).trace() + mode.f0.dot(&y.b) - mode.delta * y.c
        + mode.l0
        + 0.5 * (k0.transpose() * n * &k0)[(0, 0)];
    Coeffs {
        p: linalg::symmetrize(&dp),
        b: db,
        c: dc,
    }
}

fn axpy(y: &Coeffs, s: f64, k: &Coeffs) -> Coeffs {
    Coeffs {
        p: &y.p + &k.p * s,
        b: &y.b + &k.b * s,
        c: y.c + s * k.c,
    }
}

/// Integrates the Riccati system backward from `T` with classical RK4 steps of `time_step`.
pub fn riccati_solve(prob: &ControlProblem, time_step: f64) -> Result<RiccatiSolution> {
    if prob.modes().len() != 1 {
        return Err(HjbError::UnsupportedOracle(format!(
            "Riccati oracle needs a single mode, problem has {}",
            prob.modes().len()
        )));
    }
    if prob.terminal_forms().len() != 1 {
        return Err(HjbError::UnsupportedOracle(
            "Riccati oracle needs a single quadratic terminal form".into(),
        ));
    }
    let steps_f = prob.horizon() / time_step;
    if !(time_step > 0.0) || (steps_f - steps_f.round()).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(HjbError::StepSize {
            h: time_step,
            reason: format!("T = {} is not an integer multiple of the step", prob.horizon()),
        });
    }
    let steps = steps_f.round() as usize;
    let mode = prob.mode(0);
    let n = gain_matrix(mode)?;
    let term = &prob.terminal_forms()[0];
    let mut y = Coeffs {
        p: term.q.clone(),
        b: term.b.clone(),
        c: term.c,
    };
    let mut ps = vec![y.p.clone()];
    let mut bs = vec![y.b.clone()];
    let mut cs = vec![y.c];
    let dt = time_step;
    for s in 0..steps {
        let k1 = rhs(mode, &n, &y);
        let k2 = rhs(mode, &n, &axpy(&y, 0.5 * dt, &k1));
        let k3 = rhs(mode, &n, &axpy(&y, 0.5 * dt, &k2));
        let k4 = rhs(mode, &n, &axpy(&y, dt, &k3));
        y = Coeffs {
            p: linalg::symmetrize(&(&y.p + (&k1.p + &k2.p * 2.0 + &k3.p * 2.0 + &k4.p) * (dt / 6.0))),
            b: &y.b + (&k1.b + &k2.b * 2.0 + &k3.b * 2.0 + &k4.b) * (dt / 6.0),
            c: y.c + (k1.c + 2.0 * k2.c + 2.0 * k3.c + k4.c) * dt / 6.0,
        };
        let t = prob.horizon() - (s + 1) as f64 * dt;
        let finite = y.p.iter().chain(y.b.iter()).all(|v| v.is_finite()) && y.c.is_finite();
        if !finite {
            return Err(HjbError::RiccatiBlowUp {
                t,
                reason: "non-finite coefficients".into(),
            });
        }
        let top = linalg::sym_max_eigenvalue(&y.p);
        if top > 1e-9 {
            return Err(HjbError::RiccatiBlowUp {
                t,
                reason: format!("P lost negative semidefiniteness (eigenvalue {top:e})"),
            });
        }
        ps.push(y.p.clone());
        bs.push(y.b.clone());
        cs.push(y.c);
    }
    // stored in increasing time
    ps.reverse();
    bs.reverse();
    cs.reverse();
    let times = (0..=steps).map(|i| i as f64 * dt).collect();
    Ok(RiccatiSolution {
        times,
        p: ps,
        b: bs,
        c: cs,
        time_step: dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::registry;
    use crate::problem::ControlAxis;

    #[test]
    fn fixed_point_solution_for_lq1d() {
        let prob = registry::builtin("lq1d").unwrap();
        let sol = riccati_solve(&prob, 0.01).unwrap();
        for (i, &t) in sol.times.iter().enumerate() {
            for &x in &[-2.0, -0.5, 0.0, 1.3] {
                let exact = -x * x - (1.0 - t);
                assert!((sol.value_at_index(i, &[x]) - exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tanh_solution_for_half_terminal_weight() {
        let mut cfg = registry::builtin_config("lq1d").unwrap();
        cfg.terminal_forms[0].q = vec![-1.0];
        let prob = ControlProblem::from_config(cfg).unwrap();
        let sol = riccati_solve(&prob, 0.01).unwrap();
        for (i, &t) in sol.times.iter().enumerate() {
            let half = -((1.0 - t) + 0.5f64.atanh()).tanh();
            assert!((sol.p[i][(0, 0)] - 2.0 * half).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn zero_data_gives_zero_value() {
        let mut cfg = registry::builtin_config("lq1d").unwrap();
        cfg.terminal_forms[0].q = vec![0.0];
        cfg.modes[0].Lxx = vec![0.0];
        cfg.modes[0].B = vec![0.0];
        let prob = ControlProblem::from_config(cfg).unwrap();
        let sol = riccati_solve(&prob, 0.1).unwrap();
        assert!(sol.times.iter().all(|&t| sol.value(t, &[0.7]).unwrap() == 0.0));
    }

    #[test]
    fn residual_within_step_tolerance() {
        for name in ["lq1d", "lq2d"] {
            let prob = registry::builtin(name).unwrap();
            let dt = 0.02;
            let sol = riccati_solve(&prob, dt).unwrap();
            let res = sol.max_residual(&prob, &prob.audit_points()).unwrap();
            assert!(res <= 10.0 * dt.powi(4) + 1e-8, "{name}: {res}");
        }
    }

    #[test]
    fn stored_path_is_fourth_order_accurate() {
        // the stencil derivative of the integrated path approaches the exact one at rate dt⁴
        let prob = registry::builtin("lq2d").unwrap();
        let x = [1.5, -2.0];
        let gap = |dt: f64| {
            let sol = riccati_solve(&prob, dt).unwrap();
            let i = sol.time_index(0.5).unwrap();
            (sol.stencil_time_derivative(i, &x).unwrap() - sol.time_derivative(&prob, i, &x).unwrap()).abs()
        };
        let (coarse, fine) = (gap(0.05), gap(0.025));
        assert!(fine < coarse / 10.0, "{coarse} {fine}");
    }

    #[test]
    fn sup_hamiltonian_matches_fine_control_grid() {
        let prob = registry::builtin("lq1d").unwrap();
        let fine = prob.with_controls(vec![ControlAxis { min: -4.0, max: 4.0, count: 8001 }]).unwrap();
        let pt = HamiltonianPoint::new(vec![0.4], -0.3, vec![1.1], DMatrix::from_element(1, 1, -2.0)).unwrap();
        let exact = lq_hamiltonian_sup(prob.mode(0), &pt).unwrap();
        let grid = fine.hamiltonian(&pt).unwrap().0;
        assert!(grid <= exact + 1e-12 && exact - grid < 1e-6);
    }

    #[test]
    fn rejects_non_lq_inputs() {
        assert!(matches!(
            riccati_solve(&registry::builtin("switch2").unwrap(), 0.1),
            Err(HjbError::UnsupportedOracle(_))
        ));
        assert!(matches!(
            riccati_solve(&registry::builtin("bounded1d").unwrap(), 0.1),
            Err(HjbError::UnsupportedOracle(_))
        ));
    }

    #[test]
    fn blow_up_is_reported_with_time() {
        // positive running reward curvature drives P positive
        let mut cfg = registry::builtin_config("lq1d").unwrap();
        cfg.modes[0].Lxx = vec![4.0];
        let prob = ControlProblem::from_config(cfg).unwrap();
        match riccati_solve(&prob, 0.01) {
            Err(HjbError::RiccatiBlowUp { t, .. }) => assert!((0.0..1.0).contains(&t)),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }
}
