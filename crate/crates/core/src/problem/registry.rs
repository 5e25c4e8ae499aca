//! Built-in problems, addressable by name from the CLI and the C API.

use crate::error::{HjbError, Result};
use crate::maxplus::FormRecord;

use super::{AuditWindow, ControlAxis, ControlProblem, ModeConfig, ProblemConfig, UnderlyingConfig};

pub const BUILTIN_NAMES: &[&str] = &["lq1d", "lq2d", "switch2", "degenerate2d", "ftw_critical", "bounded1d"];

pub fn describe(name: &str) -> Option<&'static str> {
    Some(match name {
        "lq1d" => "1-d LQ: dx = u dt + dW, l = -x^2 - u^2, psi = -x^2, T = 1 (exact v = -x^2 - (T - t))",
        "lq2d" => "2-d LQ with coupled drift and correlated constant diffusion, psi = -|x|^2",
        "switch2" => "1-d two-mode switching LQ with different diffusions, discounts and a two-form terminal reward",
        "degenerate2d" => "2-d problem whose residual diffusion has rank 1 (second-order G vanishes along x2)",
        "ftw_critical" => "1-d problem violating the critical diffusion-ratio constraint of the FTW scheme",
        "bounded1d" => "1-d problem with bounded reward and negative discount, for stability checks",
        _ => return None,
    })
}

pub fn builtin(name: &str) -> Result<ControlProblem> {
    ControlProblem::from_config(builtin_config(name)?)
}

pub fn builtin_config(name: &str) -> Result<ProblemConfig> {
    let cfg = match name {
        "lq1d" => ProblemConfig {
            name: name.into(),
            d: 1,
            horizon: 1.0,
            modes: vec![ModeConfig {
                B: vec![1.0],
                sigma: vec![1.0],
                Lxx: vec![-2.0],
                Luu: vec![-2.0],
                ..mode("lq")
            }],
            controls: vec![ControlAxis { min: -3.0, max: 3.0, count: 121 }],
            terminal_forms: vec![form(&[-2.0], &[0.0], 0.0)],
            ..base(name, 1)
        },
        "lq2d" => ProblemConfig {
            modes: vec![ModeConfig {
                A: vec![0.0, 0.5, 0.0, 0.0],
                B: vec![1.0, 0.0, 0.0, 1.0],
                sigma: vec![1.0, 0.0, 0.3, 0.8],
                Lxx: vec![-2.0, 0.0, 0.0, -2.0],
                Luu: vec![-2.0, 0.0, 0.0, -2.0],
                ..mode("lq")
            }],
            controls: vec![ControlAxis { min: -3.0, max: 3.0, count: 25 }; 2],
            terminal_forms: vec![form(&[-2.0, 0.0, 0.0, -2.0], &[0.0, 0.0], 0.0)],
            ..base(name, 2)
        },
        "switch2" => ProblemConfig {
            modes: vec![
                ModeConfig {
                    B: vec![1.0],
                    sigma: vec![1.0],
                    Lxx: vec![-2.0],
                    Luu: vec![-2.0],
                    ..mode("calm")
                },
                ModeConfig {
                    A: vec![-0.5],
                    B: vec![1.0],
                    sigma: vec![1.5],
                    delta: 0.1,
                    Lxx: vec![-2.0],
                    Luu: vec![-2.0],
                    l0: 0.3,
                    ..mode("rough")
                },
            ],
            controls: vec![ControlAxis { min: -3.0, max: 3.0, count: 61 }],
            terminal_forms: vec![form(&[-2.0], &[0.0], 0.0), form(&[-2.0], &[2.0], -1.5)],
            ..base(name, 1)
        },
        "degenerate2d" => ProblemConfig {
            modes: vec![ModeConfig {
                B: vec![1.0, 0.0, 0.0, 1.0],
                sigma: vec![3f64.sqrt(), 0.0, 0.0, 1.0],
                Lxx: vec![-2.0, 0.0, 0.0, -2.0],
                Luu: vec![-1.0, 0.0, 0.0, -1.0],
                ..mode("degenerate")
            }],
            controls: vec![ControlAxis { min: -2.0, max: 2.0, count: 9 }; 2],
            terminal_forms: vec![form(&[-2.0, 0.0, 0.0, -2.0], &[0.0, 0.0], 0.0)],
            underlying: Some(UnderlyingConfig {
                sigma: Some(vec![1.0, 0.0, 0.0, 1.0]),
                ..Default::default()
            }),
            ..base(name, 2)
        },
        "ftw_critical" => ProblemConfig {
            modes: vec![ModeConfig {
                B: vec![1.0],
                sigma: vec![5f64.sqrt()],
                Lxx: vec![-2.0],
                Luu: vec![-2.0],
                ..mode("wide")
            }],
            controls: vec![ControlAxis { min: -1.0, max: 1.0, count: 3 }],
            terminal_forms: vec![form(&[-2.0], &[0.0], 0.0)],
            underlying: Some(UnderlyingConfig {
                sigma: Some(vec![1.0]),
                ..Default::default()
            }),
            ..base(name, 1)
        },
        "bounded1d" => ProblemConfig {
            modes: vec![ModeConfig {
                B: vec![1.0],
                sigma: vec![1.0],
                delta: -0.5,
                lu: vec![0.5],
                l0: 1.0,
                ..mode("bounded")
            }],
            controls: vec![ControlAxis { min: -1.0, max: 1.0, count: 5 }],
            terminal_forms: vec![form(&[0.0], &[0.0], 1.0)],
            ..base(name, 1)
        },
        other => return Err(HjbError::Config(format!("unknown problem name '{other}'"))),
    };
    Ok(cfg)
}

fn base(name: &str, d: usize) -> ProblemConfig {
    ProblemConfig {
        name: name.into(),
        d,
        horizon: 1.0,
        modes: Vec::new(),
        controls: Vec::new(),
        terminal_forms: Vec::new(),
        underlying: None,
        projection: None,
        bounds: None,
        audit: Some(AuditWindow { lo: -2.0, hi: 2.0, n: 5 }),
        seed: None,
    }
}

fn mode(id: &str) -> ModeConfig {
    ModeConfig {
        id: id.into(),
        A: Vec::new(),
        B: Vec::new(),
        f0: Vec::new(),
        sigma: Vec::new(),
        delta: 0.0,
        Lxx: Vec::new(),
        Lxu: Vec::new(),
        Luu: Vec::new(),
        lx: Vec::new(),
        lu: Vec::new(),
        l0: 0.0,
        underlying: None,
    }
}

fn form(q: &[f64], b: &[f64], c: f64) -> FormRecord {
    FormRecord {
        q: q.to_vec(),
        b: b.to_vec(),
        c,
    }
}
