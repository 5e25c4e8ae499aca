//! Probabilistic max-plus approximation: the value function at each time is a finite max of
//! concave quadratic forms, built backward by selection along simulated paths and
//! quadratic regression of the scheme's one-step operator.

mod form;
mod regress;

use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use form::{max_of_forms, FormRecord, QuadraticForm, NSD_TOL};
pub use regress::{basis_size, regress_quadratic, RegressionFit};

use crate::error::{HjbError, Result};
use crate::expect::Measure;
use crate::gridsolve::step_count;
use crate::linalg;
use crate::schemes::Scheme;

/// Where the one-step targets of the regression come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// At each regression point, expectations over the empirical measure of the `N_w`
    /// sampled increments, then the max over controls.
    #[default]
    Sampled,
    /// Expectation over the scheme's quadrature nodes at each regression point.
    Quadrature,
    /// Max over controls at every single `(x_i, W_j)` pair of the product sample. The max
    /// of noisy one-sample values is biased upward, so this mode overestimates the value.
    PerSample,
}

impl FromStr for TargetMode {
    type Err = HjbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(Self::Sampled),
            "quadrature" => Ok(Self::Quadrature),
            "per_sample" => Ok(Self::PerSample),
            other => Err(HjbError::Config(format!("unknown target mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    pub n_in: usize,
    pub n_x: usize,
    pub n_w: usize,
    pub seed: u64,
    /// Initial states are uniform on `[init_lo, init_hi]^d`.
    pub init_lo: f64,
    pub init_hi: f64,
    pub target: TargetMode,
}

impl SamplePlan {
    pub fn new(n_in: usize, n_x: usize, n_w: usize, seed: u64) -> Self {
        Self {
            n_in,
            n_x,
            n_w,
            seed,
            init_lo: -1.5,
            init_hi: 1.5,
            target: TargetMode::Sampled,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.n_in == 0 || self.n_x == 0 || self.n_w == 0 {
            return Err(HjbError::Config("sample sizes must be positive".into()));
        }
        if self.n_x > self.n_in {
            return Err(HjbError::Config(format!("N_x = {} exceeds N_in = {}", self.n_x, self.n_in)));
        }
        if self.n_x < basis_size(d) {
            return Err(HjbError::Config(format!(
                "N_x = {} is below the {} coefficients of a quadratic in dimension {d}",
                self.n_x,
                basis_size(d)
            )));
        }
        if !(self.init_hi >= self.init_lo) || !self.init_lo.is_finite() || !self.init_hi.is_finite() {
            return Err(HjbError::Config("invalid initial-state box".into()));
        }
        Ok(())
    }
}

/// Origin of a stored form: the path index and the mode whose regression produced it.
/// Terminal forms carry neither.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub omega: Option<usize>,
    pub mode: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub t: f64,
    pub forms: Vec<QuadraticForm>,
    pub provenance: Vec<Provenance>,
    /// Largest regression RMS over the forms of this layer.
    pub max_rms: f64,
}

#[derive(Clone, Debug)]
pub struct MaxPlusValue {
    pub h: f64,
    pub horizon: f64,
    pub dim: usize,
    /// Declared sup-distance between `ψ` and the terminal forms.
    pub epsilon: f64,
    /// Layers at `0, h, …, T`.
    pub layers: Vec<Layer>,
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct FormJson {
    #[serde(flatten)]
    form: FormRecord,
    omega: Option<usize>,
    mode: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    t: f64,
    #[serde(default)]
    max_rms: f64,
    forms: Vec<FormJson>,
}

#[derive(Serialize, Deserialize)]
struct ValueJson {
    h: f64,
    #[serde(rename = "T")]
    horizon: f64,
    d: usize,
    epsilon: f64,
    layers: Vec<LayerJson>,
}

impl MaxPlusValue {
    pub fn time_index(&self, t: f64) -> Result<usize> {
        let k = (t / self.h).round();
        if k < 0.0 || k as usize >= self.layers.len() || (t - k * self.h).abs() > 1e-9 * self.h.max(1.0) {
            return Err(HjbError::TimeIndex { t });
        }
        Ok(k as usize)
    }

    /// `max_{z ∈ Z_t} q(x, z)`
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(HjbError::Dimension(format!("x has {} entries, expected {}", x.len(), self.dim)));
        }
        let layer = &self.layers[self.time_index(t)?];
        max_of_forms(&layer.forms, x).ok_or_else(|| HjbError::State(format!("no forms at t = {t}")))
    }

    pub fn max_forms(&self) -> usize {
        self.layers.iter().map(|l| l.forms.len()).max().unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ValueJson {
            h: self.h,
            horizon: self.horizon,
            d: self.dim,
            epsilon: self.epsilon,
            layers: self
                .layers
                .iter()
                .map(|l| LayerJson {
                    t: l.t,
                    max_rms: l.max_rms,
                    forms: l
                        .forms
                        .iter()
                        .zip(&l.provenance)
                        .map(|(f, p)| FormJson {
                            form: f.to_record(),
                            omega: p.omega,
                            mode: p.mode,
                        })
                        .collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ValueJson = serde_json::from_str(text)?;
        if doc.d == 0 || !(doc.h > 0.0) || doc.layers.is_empty() {
            return Err(HjbError::Config("forms file has no layers or an invalid h/d".into()));
        }
        let mut layers = Vec::with_capacity(doc.layers.len());
        for l in doc.layers {
            let mut forms = Vec::with_capacity(l.forms.len());
            let mut provenance = Vec::with_capacity(l.forms.len());
            for f in l.forms {
                forms.push(f.form.to_form(doc.d)?);
                provenance.push(Provenance {
                    omega: f.omega,
                    mode: f.mode,
                });
            }
            layers.push(Layer {
                t: l.t,
                forms,
                provenance,
                max_rms: l.max_rms,
            });
        }
        Ok(Self {
            h: doc.h,
            horizon: doc.horizon,
            dim: doc.d,
            epsilon: doc.epsilon,
            layers,
            warnings: Vec::new(),
        })
    }
}

/// Index of the form attaining the max at each point; ties go to the lowest index.
pub fn select_forms(forms: &[QuadraticForm], points: &[Vec<f64>]) -> Result<Vec<usize>> {
    if forms.is_empty() {
        return Err(HjbError::State("cannot select from an empty set of forms".into()));
    }
    Ok(points.iter().map(|y| argmax_form(forms, y)).collect())
}

fn argmax_form(forms: &[QuadraticForm], y: &[f64]) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, f) in forms.iter().enumerate() {
        let v = f.eval(y);
        if v > best.0 {
            best = (v, i);
        }
    }
    best.1
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributeReport {
    /// `G(max_z φ(·, z))`
    pub g_of_max: f64,
    /// `max` over selections `z̄` of `G(φ(·, z̄(·)))`
    pub best_selection: f64,
    pub selection: Vec<usize>,
    pub brute_force: bool,
}

impl DistributeReport {
    pub fn holds(&self, tol: f64) -> bool {
        (self.g_of_max - self.best_selection).abs() <= tol * (1.0 + self.g_of_max.abs())
    }
}

/// Compares `G` applied to a pointwise max with the best selection.
///
/// `phi[z][j]` is the value of family member `z` at sample `j`, and `g` maps a vector of
/// per-sample values to a number. Selections are enumerated exhaustively when there are at
/// most 10⁴ of them, otherwise the pointwise argmax selection is used.
pub fn distribute_check<G: Fn(&[f64]) -> f64>(g: G, phi: &[Vec<f64>]) -> Result<DistributeReport> {
    let nz = phi.len();
    if nz == 0 {
        return Err(HjbError::State("empty family".into()));
    }
    let nw = phi[0].len();
    if phi.iter().any(|r| r.len() != nw) {
        return Err(HjbError::Dimension("family members have different sample counts".into()));
    }
    let pointwise: Vec<usize> = (0..nw)
        .map(|j| {
            let mut best = 0;
            for z in 1..nz {
                if phi[z][j] > phi[best][j] {
                    best = z;
                }
            }
            best
        })
        .collect();
    let pick = |sel: &[usize]| -> Vec<f64> { sel.iter().enumerate().map(|(j, &z)| phi[z][j]).collect() };
    let g_of_max = g(&pick(&pointwise));
    let count = (nz as f64).powi(nw as i32);
    if count > 1e4 {
        return Ok(DistributeReport {
            g_of_max,
            best_selection: g_of_max,
            selection: pointwise,
            brute_force: false,
        });
    }
    let mut sel = vec![0usize; nw];
    let mut best = (f64::NEG_INFINITY, sel.clone());
    loop {
        let v = g(&pick(&sel));
        if v > best.0 {
            best = (v, sel.clone());
        }
        let mut j = 0;
        while j < nw {
            sel[j] += 1;
            if sel[j] < nz {
                break;
            }
            sel[j] = 0;
            j += 1;
        }
        if j == nw {
            break;
        }
    }
    Ok(DistributeReport {
        g_of_max,
        best_selection: best.0,
        selection: best.1,
        brute_force: true,
    })
}

/// Warnings for problems outside the exact max-of-quadratics representation.
fn representation_warnings(scheme: &Scheme) -> Vec<String> {
    let prob = scheme.problem();
    let mut out = Vec::new();
    for mode in prob.modes() {
        let d = mode.lxx.nrows();
        let p = mode.luu.nrows();
        let mut l = nalgebra::DMatrix::zeros(d + p, d + p);
        l.view_mut((0, 0), (d, d)).copy_from(&mode.lxx);
        l.view_mut((d, d), (p, p)).copy_from(&mode.luu);
        if mode.lxu.len() == d * p {
            l.view_mut((0, d), (d, p)).copy_from(&mode.lxu);
            l.view_mut((d, 0), (p, d)).copy_from(&mode.lxu.transpose());
        }
        if linalg::sym_max_eigenvalue(&l) > NSD_TOL {
            out.push(format!(
                "running reward of mode '{}' is not concave in (x, u); the forms only approximate the scheme",
                mode.name
            ));
        }
    }
    out
}

struct Task {
    omega: usize,
    class: usize,
}

/// Runs the backward max-plus recursion.
pub fn solve_maxplus(scheme: &Scheme, plan: &SamplePlan) -> Result<MaxPlusValue> {
    let prob = scheme.problem();
    let decomp = scheme.decomposition();
    let d = prob.dim();
    plan.validate(d)?;
    let h = scheme.h();
    let sh = h.sqrt();
    let steps = step_count(prob.horizon(), h)?;
    let terminal = prob.terminal_forms().to_vec();
    if terminal.is_empty() {
        return Err(HjbError::Config("the max-plus solver needs terminal quadratic forms".into()));
    }
    let classes = decomp.classes();
    if terminal.len() > classes.len() * plan.n_in {
        return Err(HjbError::Config(format!(
            "{} terminal forms exceed |classes| * N_in = {}",
            terminal.len(),
            classes.len() * plan.n_in
        )));
    }
    let reps: Vec<usize> = classes
        .iter()
        .map(|&c| decomp.class_representative(c).expect("class has a member"))
        .collect();
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| (0..decomp.num_modes()).filter(|&m| decomp.projection()[m] == c).collect())
        .collect();

    // Initial states and standardized increments, one row per ω.
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let x0: Vec<Vec<f64>> = (0..plan.n_in)
        .map(|_| (0..d).map(|_| rng.random_range(plan.init_lo..=plan.init_hi)).collect())
        .collect();
    let incr: Vec<Vec<f64>> = (0..plan.n_in)
        .map(|_| (0..steps * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let z_at = |omega: usize, n: usize| &incr[omega][n * d..(n + 1) * d];

    // paths[c][n][ω]
    let paths: Vec<Vec<Vec<Vec<f64>>>> = reps
        .iter()
        .map(|&r| {
            let st = scheme.stepper(r);
            let mut layers = vec![x0.clone()];
            for n in 0..steps {
                let next = (0..plan.n_in).map(|w| st.step(&layers[n][w], h, z_at(w, n))).collect();
                layers.push(next);
            }
            layers
        })
        .collect();

    let mut layers: Vec<Option<Layer>> = vec![None; steps + 1];
    layers[steps] = Some(Layer {
        t: prob.horizon(),
        provenance: vec![Provenance::default(); terminal.len()],
        forms: terminal,
        max_rms: 0.0,
    });

    for n in (0..steps).rev() {
        let t = n as f64 * h;
        let mut srng = ChaCha8Rng::seed_from_u64(plan.seed);
        srng.set_stream(n as u64 + 1);
        let ix = index::sample(&mut srng, plan.n_in, plan.n_x).into_vec();
        let iw: Vec<usize> = if plan.n_w <= plan.n_in {
            index::sample(&mut srng, plan.n_in, plan.n_w).into_vec()
        } else {
            (0..plan.n_w).map(|_| srng.random_range(0..plan.n_in)).collect()
        };
        // Increment nodes and their measure for the selection step.
        let nodes: Vec<Vec<f64>> = match plan.target {
            TargetMode::Quadrature => (0..scheme.measure().len()).map(|j| scheme.measure().node(j).to_vec()).collect(),
            _ => iw.iter().map(|&w| z_at(w, n).to_vec()).collect(),
        };
        let empirical = match plan.target {
            TargetMode::Quadrature => scheme.measure().clone(),
            _ => Measure::samples(nodes.concat(), d)?,
        };
        let singles: Vec<Measure> = match plan.target {
            TargetMode::PerSample => nodes.iter().map(|z| Measure::samples(z.clone(), d)).collect::<Result<_>>()?,
            _ => Vec::new(),
        };
        let next = layers[n + 1].as_ref().expect("layer computed");
        let tasks: Vec<Task> = (0..plan.n_in)
            .flat_map(|omega| (0..classes.len()).map(move |class| Task { omega, class }))
            .collect();
        let results: Vec<(QuadraticForm, Provenance, f64)> = tasks
            .par_iter()
            .map(|task| {
                let rep = reps[task.class];
                let st = scheme.stepper(rep);
                let xt = &paths[task.class][n][task.omega];
                let succ = |x: &[f64]| -> Vec<Vec<f64>> {
                    let mean = st.mean(x, h);
                    nodes
                        .iter()
                        .map(|z| {
                            let mut y = vec![0.0; d];
                            st.step_from_mean(&mean, sh, z, &mut y);
                            y
                        })
                        .collect()
                };
                let sel = select_forms(&next.forms, &succ(xt))?;
                let xs: Vec<&Vec<f64>> = ix.iter().map(|&i| &paths[task.class][n][i]).collect();
                let mut best: Option<(f64, QuadraticForm, usize, f64)> = None;
                for &m in &members[task.class] {
                    let ctx = |reason: String| HjbError::Regression {
                        t,
                        omega: task.omega,
                        mode: m,
                        reason,
                    };
                    let mut pts = Vec::new();
                    let mut ys = Vec::new();
                    for x in &xs {
                        let vals: Vec<f64> =
                            succ(x).iter().zip(&sel).map(|(y, &s)| next.forms[s].eval(y)).collect();
                        match plan.target {
                            TargetMode::Quadrature | TargetMode::Sampled => {
                                ys.push(scheme.g_operator(m, x, &empirical, &vals).map_err(|e| ctx(e.to_string()))?.0);
                                pts.push((*x).clone());
                            }
                            TargetMode::PerSample => {
                                for (j, v) in vals.iter().enumerate() {
                                    ys.push(scheme.g_operator(m, x, &singles[j], &[*v]).map_err(|e| ctx(e.to_string()))?.0);
                                    pts.push((*x).clone());
                                }
                            }
                        }
                    }
                    let fit = regress_quadratic(&pts, &ys).map_err(ctx)?;
                    let at = fit.form.eval(xt);
                    if best.as_ref().is_none_or(|b| at > b.0) {
                        best = Some((at, fit.form, m, fit.rms));
                    }
                }
                let (_, form, m, rms) = best.expect("class has a member");
                Ok((
                    form,
                    Provenance {
                        omega: Some(task.omega),
                        mode: Some(m),
                    },
                    rms,
                ))
            })
            .collect::<Result<_>>()?;
        let max_rms = results.iter().map(|r| r.2).fold(0.0, f64::max);
        let (forms, provenance) = results.into_iter().map(|(f, p, _)| (f, p)).unzip();
        layers[n] = Some(Layer {
            t,
            forms,
            provenance,
            max_rms,
        });
    }

    Ok(MaxPlusValue {
        h,
        horizon: prob.horizon(),
        dim: d,
        epsilon: 0.0,
        layers: layers.into_iter().map(|l| l.expect("every layer computed")).collect(),
        warnings: representation_warnings(scheme),
    })
}

#[derive(Clone, Debug)]
pub struct BootstrapReport {
    pub seeds: Vec<u64>,
    pub errors: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across replicates: the spread of a single run's error.
    pub std_err: f64,
}

/// Re-runs the solver with `replicates` seeds derived from the plan's seed and summarizes
/// `error(value)` across runs.
pub fn bootstrap<F>(scheme: &Scheme, plan: &SamplePlan, replicates: usize, error: F) -> Result<BootstrapReport>
where
    F: Fn(&MaxPlusValue) -> Result<f64>,
{
    if replicates < 2 {
        return Err(HjbError::Config("bootstrap needs at least 2 replicates".into()));
    }
    let seeds: Vec<u64> = (0..replicates as u64).map(|r| plan.seed.wrapping_add(1 + r)).collect();
    let errors = seeds
        .iter()
        .map(|&seed| error(&solve_maxplus(scheme, &SamplePlan { seed, ..plan.clone() })?))
        .collect::<Result<Vec<_>>>()?;
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let std_err = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(BootstrapReport {
        seeds,
        errors,
        mean,
        std_err,
    })
}
