use hjb_core::gridsolve::{backward_step, build_grid, convergence_study, Extrapolation};
use hjb_core::{registry, solve_grid, ControlProblem, Decomposition, Engine, GridSpec, Scheme, SchemeConfig, Variant};

fn scheme(prob: &ControlProblem, h: f64) -> Scheme {
    let d = Decomposition::from_problem(prob).unwrap();
    Scheme::new(prob, &d, SchemeConfig::new(Variant::NewUpwind, d.min_k(), h), &Engine::quadrature()).unwrap()
}

fn from_json(text: &str) -> ControlProblem {
    ControlProblem::from_json(text).unwrap()
}

#[test]
fn constant_terminal_data_without_reward_is_preserved() {
    let prob = from_json(
        r#"{"name": "flat", "d": 1, "T": 1.0,
            "modes": [{"id": "m", "B": [1.0], "sigma": [0.8]}],
            "controls": [{"min": -1.0, "max": 1.0, "count": 5}],
            "terminal_forms": [{"Q": [0.0], "b": [0.0], "c": 2.5}]}"#,
    );
    let vg = solve_grid(&scheme(&prob, 0.1), &GridSpec::cube(1, -1.0, 1.0, 11)).unwrap();
    for i in 0..vg.times().len() {
        for v in vg.layer(i) {
            assert!((v - 2.5).abs() < 1e-12, "{v} at layer {i}");
        }
    }
}

#[test]
fn dominated_mode_does_not_change_the_solution() {
    let mode = |id: &str, l0: f64| format!(r#"{{"id": "{id}", "B": [1.0], "sigma": [1.0], "Lxx": [-2.0], "Luu": [-2.0], "l0": {l0}}}"#);
    let body = |modes: String| {
        format!(
            r#"{{"name": "dom", "d": 1, "T": 1.0, "modes": [{modes}],
                "controls": [{{"min": -2.0, "max": 2.0, "count": 21}}],
                "terminal_forms": [{{"Q": [-2.0], "b": [0.0], "c": 0.0}}]}}"#
        )
    };
    let single = from_json(&body(mode("a", 0.0)));
    let pair = from_json(&body(format!("{}, {}", mode("low", -0.5), mode("a", 0.0))));
    let spec = GridSpec::cube(1, -1.5, 1.5, 31);
    let a = solve_grid(&scheme(&single, 0.1), &spec).unwrap();
    let b = solve_grid(&scheme(&pair, 0.1), &spec).unwrap();
    for x in [-1.5, -0.35, 0.0, 0.8, 1.5] {
        assert!((a.eval(0.0, &[x]).unwrap() - b.eval(0.0, &[x]).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn raising_the_next_layer_never_lowers_the_step() {
    for name in ["lq1d", "switch2"] {
        let prob = registry::builtin(name).unwrap();
        let s = scheme(&prob, 0.05);
        let (grid, _) = build_grid(&s, &GridSpec::cube(1, -2.0, 2.0, 41)).unwrap();
        let base: Vec<f64> = (0..grid.len()).map(|i| prob.terminal(&grid.node(i))).collect();
        let raised: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 3 == 0 { 0.2 } else { 0.0 })
            .collect();
        let lo = backward_step(&s, &grid, &base).unwrap();
        let hi = backward_step(&s, &grid, &raised).unwrap();
        // linear continuation weighs the inner neighbour negatively, so only core nodes,
        // whose successors stay inside the padding, are covered
        for i in grid.core_indices() {
            assert!(hi[i] >= lo[i], "{name}: {} < {} at node {i}", hi[i], lo[i]);
        }
    }
}

#[test]
fn padding_refinement_barely_moves_the_core() {
    let prob = registry::builtin("lq1d").unwrap();
    let s = scheme(&prob, 0.1);
    let auto = solve_grid(&s, &GridSpec::cube(1, -2.0, 2.0, 41)).unwrap();
    let wide = GridSpec {
        pad: Some(2.0 * auto.pad()),
        ..GridSpec::cube(1, -2.0, 2.0, 41)
    };
    let wide = solve_grid(&s, &wide).unwrap();
    assert!(auto.warnings().is_empty());
    let i = auto.time_index(0.0).unwrap();
    for ((x, a), (_, b)) in auto.core_values(i).into_iter().zip(wide.core_values(i)) {
        assert!((a - b).abs() <= 1e-4, "{a} vs {b} at {x:?}");
    }
}

#[test]
fn bounded_problem_stays_within_the_stability_bound() {
    // |v_t| ≤ α^n ‖ψ‖ + h ‖ℓ‖ Σ_{j<n} α^j with α = 1 + 2λh, λ = 0.5, ‖ℓ‖ = 1.5, ‖ψ‖ = 1
    let prob = registry::builtin("bounded1d").unwrap();
    let h = 0.1;
    let s = scheme(&prob, h);
    let spec = GridSpec {
        extrapolation: Extrapolation::Clamp,
        ..GridSpec::cube(1, -3.0, 3.0, 31)
    };
    let vg = solve_grid(&s, &spec).unwrap();
    let alpha = 1.0 + 2.0 * 0.5 * h;
    let n_layers = vg.times().len();
    for i in 0..n_layers {
        let n = (n_layers - 1 - i) as i32;
        let bound = alpha.powi(n) + h * 1.5 * (0..n).map(|j| alpha.powi(j)).sum::<f64>();
        let sup = vg.layer(i).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(sup <= bound + 1e-12, "layer {i}: {sup} > {bound}");
    }
}

#[test]
fn lq_errors_shrink_with_the_step() {
    let prob = registry::builtin("lq1d").unwrap();
    let d = Decomposition::from_problem(&prob).unwrap();
    let rep = convergence_study(
        &prob,
        &d,
        &SchemeConfig::new(Variant::PriorFodjo2, 0, 0.1),
        &Engine::quadrature(),
        (-2.0, 2.0),
        1.0,
        &[0.2, 0.1, 0.05],
    )
    .unwrap();
    assert!(rep.strictly_decreasing(), "{rep:?}");
    assert!(rep.p_hat > 0.0);
    let csv = rep.to_csv();
    assert!(csv.starts_with("h,sup_error,p_hat\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn two_dimensional_solve_matches_the_quadratic_oracle_roughly() {
    let prob = registry::builtin("lq2d").unwrap();
    let s = scheme(&prob, 0.25);
    let vg = solve_grid(&s, &GridSpec::cube(2, -1.0, 1.0, 9)).unwrap();
    assert_eq!(vg.dim(), 2);
    let oracle = hjb_core::problem::riccati_solve(&prob, 0.001).unwrap();
    let err = vg.sup_error(0.0, |x| oracle.value(0.0, x).unwrap()).unwrap();
    assert!(err.is_finite() && err < 1.5, "{err}");
    assert!(solve_grid(&s, &GridSpec::cube(3, -1.0, 1.0, 3)).is_err());
}
