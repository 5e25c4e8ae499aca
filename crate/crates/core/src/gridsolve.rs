//! Backward iteration of a scheme on a truncated tensor grid with multilinear interpolation.
//!
//! The user's rectangle is the core window. It is padded on every side by whole cells so
//! that one Euler step from a core node stays inside the grid up to six standard
//! deviations, and wider still when the diffusion accumulated over the horizon demands it.
//! Outside the padded grid, values are continued linearly from the boundary cell (or
//! clamped).

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;

use crate::decomp::Decomposition;
use crate::error::{HjbError, Result};
use crate::expect::{fit_order, fmt17, Engine};
use crate::problem::{riccati_solve, ControlProblem};
use crate::schemes::{Scheme, SchemeConfig};

/// Largest dimension accepted without [`GridSpec::allow_high_dim`].
pub const DEFAULT_MAX_DIM: usize = 2;
/// Padding in standard deviations of one step.
const PAD_SIGMAS: f64 = 6.0;
/// Padding in standard deviations accumulated over the horizon. Boundary extrapolation
/// errors diffuse inward across all steps, so one-step reach alone is not enough.
const HORIZON_SIGMAS: f64 = 4.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Extrapolation {
    /// Linear continuation of the boundary cell.
    #[default]
    Linear,
    /// Constant continuation of the boundary value.
    Clamp,
}

impl FromStr for Extrapolation {
    type Err = HjbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "clamp" => Ok(Self::Clamp),
            other => Err(HjbError::Config(format!("unknown extrapolation '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Core points per axis, at least 2.
    pub n: Vec<usize>,
    pub extrapolation: Extrapolation,
    /// Padding width overriding the automatic choice.
    pub pad: Option<f64>,
    pub allow_high_dim: bool,
}

impl GridSpec {
    /// `[lo, hi]^d` with `n` points per axis.
    pub fn cube(d: usize, lo: f64, hi: f64, n: usize) -> Self {
        Self {
            lo: vec![lo; d],
            hi: vec![hi; d],
            n: vec![n; d],
            extrapolation: Extrapolation::Linear,
            pad: None,
            allow_high_dim: false,
        }
    }
}

/// Tensor grid with row-major node order (first axis slowest).
#[derive(Clone, Debug)]
pub struct Grid {
    axes: Vec<Vec<f64>>,
    /// Index range `[start, end)` of the core window on each axis.
    core: Vec<(usize, usize)>,
    extrapolation: Extrapolation,
}

impl Grid {
    /// Unpadded grid over uniformly spaced axes; every node belongs to the core.
    pub fn new(axes: Vec<Vec<f64>>, extrapolation: Extrapolation) -> Result<Self> {
        if axes.is_empty() {
            return Err(HjbError::Config("a grid needs at least one axis".into()));
        }
        for (a, ax) in axes.iter().enumerate() {
            let n = ax.len();
            let ok = n >= 2 && ax.iter().all(|v| v.is_finite()) && ax[n - 1] > ax[0] && {
                let dx = (ax[n - 1] - ax[0]) / (n - 1) as f64;
                ax.iter().enumerate().all(|(i, v)| (v - ax[0] - i as f64 * dx).abs() <= 1e-9 * dx)
            };
            if !ok {
                return Err(HjbError::Config(format!(
                    "axis {a} needs at least 2 finite, increasing, uniformly spaced points"
                )));
            }
        }
        let core = axes.iter().map(|ax| (0, ax.len())).collect();
        Ok(Self {
            axes,
            core,
            extrapolation,
        })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn strides(&self) -> Vec<usize> {
        let d = self.dim();
        let mut s = vec![1; d];
        for a in (0..d.saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.axes[a + 1].len();
        }
        s
    }

    /// Coordinates of node `i`.
    pub fn node(&self, i: usize) -> Vec<f64> {
        let strides = self.strides();
        (0..self.dim()).map(|a| self.axes[a][(i / strides[a]) % self.axes[a].len()]).collect()
    }

    /// Flat indices of the core nodes in row-major order.
    pub fn core_indices(&self) -> Vec<usize> {
        let strides = self.strides();
        let mut out = vec![0usize];
        for (a, &(s, e)) in self.core.iter().enumerate() {
            let st = strides[a];
            out = out.iter().flat_map(|base| (s..e).map(move |k| base + k * st)).collect();
        }
        out
    }

    /// Multilinear interpolation of nodal `values`, continued outside the grid.
    pub fn interpolate(&self, values: &[f64], y: &[f64]) -> f64 {
        let d = self.dim();
        let strides = self.strides();
        let mut base = 0usize;
        let mut frac = [0.0f64; 8];
        let mut frac_vec;
        let fr: &mut [f64] = if d <= 8 {
            &mut frac[..d]
        } else {
            frac_vec = vec![0.0; d];
            &mut frac_vec
        };
        for a in 0..d {
            let ax = &self.axes[a];
            let n = ax.len();
            let lo = ax[0];
            let dx = (ax[n - 1] - lo) / (n - 1) as f64;
            let mut ya = y[a];
            if self.extrapolation == Extrapolation::Clamp {
                ya = ya.clamp(lo, ax[n - 1]);
            }
            let pos = (ya - lo) / dx;
            let cell = (pos.floor().max(0.0) as usize).min(n - 2);
            base += cell * strides[a];
            fr[a] = pos - cell as f64;
        }
        let mut v = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base;
            for (a, f) in fr.iter().enumerate() {
                if corner >> a & 1 == 1 {
                    w *= f;
                    idx += strides[a];
                } else {
                    w *= 1.0 - f;
                }
            }
            v += w * values[idx];
        }
        v
    }
}

/// Solution of the backward iteration on a padded grid.
#[derive(Clone, Debug)]
pub struct ValueGrid {
    grid: Grid,
    h: f64,
    times: Vec<f64>,
    /// One layer per time, nodal values on the padded grid.
    layers: Vec<Vec<f64>>,
    pad: f64,
    warnings: Vec<String>,
}

impl ValueGrid {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Times `0, h, …, T`.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn layer(&self, i: usize) -> &[f64] {
        &self.layers[i]
    }

    /// Padding width actually used.
    pub fn pad(&self) -> f64 {
        self.pad
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn time_index(&self, t: f64) -> Result<usize> {
        let k = (t / self.h).round();
        if k < 0.0 || k as usize >= self.times.len() || (t - k * self.h).abs() > 1e-9 * self.h.max(1.0) {
            return Err(HjbError::TimeIndex { t });
        }
        Ok(k as usize)
    }

    /// `v^h(t, x)`, interpolated in space; `t` must lie on the time grid.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(HjbError::Dimension(format!("x has {} entries, expected {}", x.len(), self.dim())));
        }
        let i = self.time_index(t)?;
        Ok(self.grid.interpolate(&self.layers[i], x))
    }

    /// Core nodes and their values at time index `i`.
    pub fn core_values(&self, i: usize) -> Vec<(Vec<f64>, f64)> {
        self.grid
            .core_indices()
            .into_iter()
            .map(|j| (self.grid.node(j), self.layers[i][j]))
            .collect()
    }

    /// Largest `|v^h(t, x) − f(x)|` over core nodes.
    pub fn sup_error<F: Fn(&[f64]) -> f64>(&self, t: f64, f: F) -> Result<f64> {
        let i = self.time_index(t)?;
        Ok(self.core_values(i).iter().map(|(x, v)| (v - f(x)).abs()).fold(0.0, f64::max))
    }

    /// CSV `t,x1,…,xd,v` over core nodes, times ascending.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut s = String::from("t");
        for a in 0..d {
            let _ = write!(s, ",x{}", a + 1);
        }
        s.push_str(",v\n");
        for (i, t) in self.times.iter().enumerate() {
            for (x, v) in self.core_values(i) {
                s.push_str(&fmt17(*t));
                for xi in x {
                    s.push(',');
                    s.push_str(&fmt17(xi));
                }
                s.push(',');
                s.push_str(&fmt17(v));
                s.push('\n');
            }
        }
        s
    }
}

/// Number of steps `T/h`, which must be an integer.
pub fn step_count(horizon: f64, h: f64) -> Result<usize> {
    let n = (horizon / h).round();
    if !(h > 0.0) || n < 1.0 || (n * h - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(HjbError::StepSize {
            h,
            reason: format!("T = {horizon} is not an integer multiple of h"),
        });
    }
    Ok(n as usize)
}

/// Builds the padded grid for a scheme.
pub fn build_grid(scheme: &Scheme, spec: &GridSpec) -> Result<(Grid, f64)> {
    let d = scheme.problem().dim();
    if spec.lo.len() != d || spec.hi.len() != d || spec.n.len() != d {
        return Err(HjbError::Dimension(format!("grid spec is not {d}-dimensional")));
    }
    if d > DEFAULT_MAX_DIM && !spec.allow_high_dim {
        return Err(HjbError::Config(format!(
            "grid solver is limited to d <= {DEFAULT_MAX_DIM} unless high dimensions are allowed"
        )));
    }
    for a in 0..d {
        if spec.n[a] < 2 || !(spec.hi[a] > spec.lo[a]) {
            return Err(HjbError::Config(format!("axis {a} needs lo < hi and at least 2 points")));
        }
    }
    let pad = match spec.pad {
        Some(p) if p >= 0.0 && p.is_finite() => p,
        Some(p) => return Err(HjbError::Config(format!("invalid padding {p}"))),
        None => auto_pad(scheme, spec),
    };
    let mut axes = Vec::with_capacity(d);
    let mut core = Vec::with_capacity(d);
    for a in 0..d {
        let n = spec.n[a];
        let dx = (spec.hi[a] - spec.lo[a]) / (n - 1) as f64;
        let cells = (pad / dx - 1e-9).ceil().max(0.0) as usize;
        let total = n + 2 * cells;
        axes.push((0..total).map(|i| spec.lo[a] + (i as f64 - cells as f64) * dx).collect::<Vec<_>>());
        core.push((cells, cells + n));
    }
    Ok((
        Grid {
            axes,
            core,
            extrapolation: spec.extrapolation,
        },
        pad,
    ))
}

/// Larger of the one-step reach `max(6, z_max) · r · √h + h · max |f̲|` and the horizon
/// spread `4.5 · r · √T + T · max |f̲|`, with `r` the largest row norm of `σ̲` and `f̲`
/// taken over the core corners.
fn auto_pad(scheme: &Scheme, spec: &GridSpec) -> f64 {
    let h = scheme.h();
    let horizon = scheme.problem().horizon();
    let zmax = scheme.measure().max_abs_node().max(PAD_SIGMAS);
    let d = spec.lo.len();
    let corners: Vec<Vec<f64>> = (0..1usize << d)
        .map(|c| (0..d).map(|a| if c >> a & 1 == 1 { spec.hi[a] } else { spec.lo[a] }).collect())
        .collect();
    let decomp = scheme.decomposition();
    (0..decomp.num_modes())
        .map(|m| {
            let st = scheme.stepper(m);
            let row = (0..d).map(|i| st.sigma.row(i).norm()).fold(0.0, f64::max);
            let drift = corners
                .iter()
                .map(|x| decomp.underlying_drift(m, x).iter().fold(0.0f64, |a, v| a.max(v.abs())))
                .fold(0.0, f64::max);
            (zmax * row * h.sqrt() + h * drift).max(HORIZON_SIGMAS * row * horizon.sqrt() + horizon * drift)
        })
        .fold(0.0, f64::max)
}

/// One backward step: `v(t, x_i) = T(v(t+h, ·))(x_i)` at every node.
pub fn backward_step(scheme: &Scheme, grid: &Grid, next: &[f64]) -> Result<Vec<f64>> {
    if next.len() != grid.len() {
        return Err(HjbError::Dimension(format!("layer has {} values for {} nodes", next.len(), grid.len())));
    }
    let phi = |y: &[f64]| grid.interpolate(next, y);
    (0..grid.len())
        .into_par_iter()
        .map(|i| scheme.apply_t(&grid.node(i), &phi).map(|(v, _)| v))
        .collect()
}

/// Iterates the scheme from `ψ` at `T` back to 0.
pub fn solve_grid(scheme: &Scheme, spec: &GridSpec) -> Result<ValueGrid> {
    let prob = scheme.problem();
    let h = scheme.h();
    let steps = step_count(prob.horizon(), h)?;
    let (grid, pad) = build_grid(scheme, spec)?;
    let warnings = truncation_warnings(scheme, &grid);
    let terminal: Vec<f64> = (0..grid.len()).map(|i| prob.terminal(&grid.node(i))).collect();
    let mut layers = vec![Vec::new(); steps + 1];
    layers[steps] = terminal;
    for i in (0..steps).rev() {
        layers[i] = backward_step(scheme, &grid, &layers[i + 1])?;
    }
    let times = (0..=steps).map(|i| i as f64 * h).collect();
    Ok(ValueGrid {
        grid,
        h,
        times,
        layers,
        pad,
        warnings,
    })
}

/// Successors of core nodes that leave the padded grid.
fn truncation_warnings(scheme: &Scheme, grid: &Grid) -> Vec<String> {
    let (lo, hi): (Vec<f64>, Vec<f64>) = grid.axes.iter().map(|a| (a[0], a[a.len() - 1])).unzip();
    let mut worst = 0.0f64;
    let mut count = 0usize;
    for i in grid.core_indices() {
        let x = grid.node(i);
        for m in 0..scheme.decomposition().num_modes() {
            for y in scheme.successor_points(m, &x) {
                let out = y
                    .iter()
                    .enumerate()
                    .map(|(a, v)| (lo[a] - v).max(v - hi[a]).max(0.0))
                    .fold(0.0, f64::max);
                if out > 0.0 {
                    count += 1;
                    worst = worst.max(out);
                }
            }
        }
    }
    if count == 0 {
        Vec::new()
    } else {
        vec![format!(
            "{count} successor states of core nodes leave the padded grid (by up to {worst:.3e}); values there are extrapolated"
        )]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    /// Core points per axis.
    pub n: usize,
    pub sup_error: f64,
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub p_hat: f64,
}

impl ConvergenceReport {
    /// CSV `h,sup_error,p_hat` with `p_hat` on the last row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,sup_error,p_hat\n");
        for (i, r) in self.rows.iter().enumerate() {
            let p = if i + 1 == self.rows.len() { fmt17(self.p_hat) } else { String::new() };
            let _ = writeln!(s, "{},{},{}", fmt17(r.h), fmt17(r.sup_error), p);
        }
        s
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].sup_error < w[0].sup_error)
    }
}

/// Sup error at `t = 0` over the core nodes of `[lo, hi]^d` against the Riccati solution,
/// for each `h`. The grid spacing is `dx_ratio · h`.
pub fn convergence_study(
    prob: &ControlProblem,
    decomp: &Decomposition,
    template: &SchemeConfig,
    engine: &Engine,
    window: (f64, f64),
    dx_ratio: f64,
    h_list: &[f64],
) -> Result<ConvergenceReport> {
    if h_list.len() < 3 {
        return Err(HjbError::Report(format!("an order fit needs at least 3 step sizes, got {}", h_list.len())));
    }
    if !(dx_ratio > 0.0) {
        return Err(HjbError::Config(format!("dx ratio must be positive, got {dx_ratio}")));
    }
    let h_min = h_list.iter().cloned().fold(f64::INFINITY, f64::min);
    let steps = step_count(prob.horizon(), h_min)?;
    let oracle = riccati_solve(prob, prob.horizon() / (steps * 8) as f64)?;
    let d = prob.dim();
    let mut rows = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let scheme = Scheme::new(prob, decomp, SchemeConfig { h, ..template.clone() }, engine)?;
        let n = ((window.1 - window.0) / (dx_ratio * h)).round() as usize + 1;
        let vg = solve_grid(&scheme, &GridSpec::cube(d, window.0, window.1, n.max(2)))?;
        let sup_error = vg.sup_error(0.0, |x| oracle.value(0.0, x).unwrap_or(f64::NAN))?;
        rows.push(ConvergenceRow { h, n, sup_error });
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let es: Vec<f64> = rows.iter().map(|r| r.sup_error).collect();
    let p_hat = fit_order(&hs, &es)?;
    Ok(ConvergenceReport { rows, p_hat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::registry;
    use crate::schemes::Variant;

    fn spec1(lo: f64, hi: f64, n: usize) -> GridSpec {
        GridSpec::cube(1, lo, hi, n)
    }

    fn grid_1d(values: &[f64]) -> Grid {
        Grid {
            axes: vec![(0..values.len()).map(|i| i as f64).collect()],
            core: vec![(0, values.len())],
            extrapolation: Extrapolation::Linear,
        }
    }

    #[test]
    fn interpolation_examples() {
        let g = grid_1d(&[0.0, 1.0, 4.0]);
        let v = [0.0, 1.0, 4.0];
        assert_eq!(g.interpolate(&v, &[1.0]), 1.0);
        assert_eq!(g.interpolate(&v, &[1.5]), 2.5);
        // continuation of the last cell's slope 3
        assert_eq!(g.interpolate(&v, &[3.0]), 7.0);
        assert_eq!(g.interpolate(&v, &[-1.0]), -1.0);
        let c = Grid {
            extrapolation: Extrapolation::Clamp,
            ..g
        };
        assert_eq!(c.interpolate(&v, &[3.0]), 4.0);
    }

    #[test]
    fn bilinear_reproduces_bilinear_functions() {
        let g = Grid {
            axes: vec![vec![0.0, 0.5, 1.0], vec![-1.0, 0.0, 1.0, 2.0]],
            core: vec![(0, 3), (0, 4)],
            extrapolation: Extrapolation::Linear,
        };
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        let vals: Vec<f64> = (0..g.len()).map(|i| f(&g.node(i))).collect();
        for y in [[0.3, 0.7], [0.9, -0.2], [1.4, 2.5], [-0.2, -1.3]] {
            assert!((g.interpolate(&vals, &y) - f(&y)).abs() < 1e-13);
        }
    }

    #[test]
    fn padding_keeps_core_successors_inside() {
        let prob = registry::builtin("lq1d").unwrap();
        let d = Decomposition::from_problem(&prob).unwrap();
        let s = Scheme::new(&prob, &d, SchemeConfig::new(Variant::NewUpwind, 0, 0.1), &Engine::quadrature()).unwrap();
        let (g, pad) = build_grid(&s, &spec1(-2.0, 2.0, 41)).unwrap();
        assert!(pad >= 6.0 * 0.99 * 0.1f64.sqrt());
        assert!(truncation_warnings(&s, &g).is_empty());
        assert_eq!(g.core_indices().len(), 41);
        assert!((g.node(g.core_indices()[0])[0] + 2.0).abs() < 1e-12);
        let tight = GridSpec {
            pad: Some(0.0),
            ..spec1(-2.0, 2.0, 41)
        };
        let (g, _) = build_grid(&s, &tight).unwrap();
        assert_eq!(truncation_warnings(&s, &g).len(), 1);
    }

    #[test]
    fn validation_errors() {
        let prob = registry::builtin("lq1d").unwrap();
        let d = Decomposition::from_problem(&prob).unwrap();
        let s = Scheme::new(&prob, &d, SchemeConfig::new(Variant::NewUpwind, 0, 0.3), &Engine::quadrature()).unwrap();
        assert!(matches!(solve_grid(&s, &spec1(-1.0, 1.0, 5)), Err(HjbError::StepSize { .. })));
        let s = Scheme::new(&prob, &d, SchemeConfig::new(Variant::NewUpwind, 0, 0.25), &Engine::quadrature()).unwrap();
        assert!(solve_grid(&s, &spec1(-1.0, 1.0, 1)).is_err());
        assert!(solve_grid(&s, &GridSpec::cube(2, -1.0, 1.0, 5)).is_err());
        let vg = solve_grid(&s, &spec1(-1.0, 1.0, 5)).unwrap();
        assert!(matches!(vg.eval(0.1, &[0.0]), Err(HjbError::TimeIndex { .. })));
        assert!(vg.eval(0.5, &[0.0]).is_ok());
    }

    #[test]
    fn terminal_layer_and_node_queries() {
        let prob = registry::builtin("lq1d").unwrap();
        let d = Decomposition::from_problem(&prob).unwrap();
        let s = Scheme::new(&prob, &d, SchemeConfig::new(Variant::NewUpwind, 0, 0.25), &Engine::quadrature()).unwrap();
        let vg = solve_grid(&s, &spec1(-1.0, 1.0, 5)).unwrap();
        assert_eq!(vg.eval(1.0, &[0.5]).unwrap(), -0.25);
        let i0 = vg.time_index(0.0).unwrap();
        for (x, v) in vg.core_values(i0) {
            assert_eq!(vg.eval(0.0, &x).unwrap(), v);
        }
        let csv = vg.to_csv();
        assert!(csv.starts_with("t,x1,v\n"));
        assert_eq!(csv.lines().count(), 1 + 5 * 5);
    }
}
