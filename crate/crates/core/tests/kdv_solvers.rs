use std::sync::Arc;

use kdvlab::kdv::{kdv_invariants, soliton, solve_kdv, solve_linearized_kdv, ZeroForcing, FnForcing};
use kdvlab::{Grid, GridField, LabError, Preset};

fn grid() -> Arc<Grid> {
    Grid::new(256, 40.0).unwrap()
}

#[test]
fn soliton_travels_at_its_speed() {
    let g = grid();
    for preset in [Preset::Warm, Preset::Cold] {
        let p = preset.params();
        let n0 = soliton(&g, &p, 1.0, -5.0, 0.0);
        let traj = solve_kdv(&n0, 2.0, &p, 2e-3, 100).unwrap();
        let exact = soliton(&g, &p, 1.0, -5.0, 2.0);
        let err = traj.final_state().sub(&exact).max_abs();
        assert!(err < 1e-6, "{preset:?}: {err}");
        assert_eq!(traj.len(), 11);
    }
}

#[test]
fn invariants_are_conserved() {
    let g = grid();
    let p = Preset::Cold.params();
    let n0 = soliton(&g, &p, 1.0, 0.0, 0.0).add(&soliton(&g, &p, 0.4, -10.0, 0.0));
    let traj = solve_kdv(&n0, 4.0, &p, 2e-3, 500).unwrap();
    let a = kdv_invariants(&traj.states[0], &p);
    for s in &traj.states {
        let b = kdv_invariants(s, &p);
        assert!((a.mass - b.mass).abs() < 1e-10 * a.mass.abs().max(1.0));
        assert!((a.momentum - b.momentum).abs() < 1e-7 * a.momentum);
        assert!((a.energy - b.energy).abs() < 1e-6 * a.energy.abs().max(1.0));
    }
}

#[test]
fn time_stepping_is_fourth_order() {
    let g = grid();
    let p = Preset::Cold.params();
    let n0 = soliton(&g, &p, 1.5, 0.0, 0.0).add(&soliton(&g, &p, 0.5, -8.0, 0.0));
    let run = |dt: f64| solve_kdv(&n0, 1.0, &p, dt, (1.0 / dt).round() as usize).unwrap().final_state().clone();
    let reference = run(1e-3);
    let e1 = run(2e-2).sub(&reference).max_abs();
    let e2 = run(1e-2).sub(&reference).max_abs();
    let order = (e1 / e2).log2();
    assert!(order > 3.5, "order {order} ({e1:e}, {e2:e})");
}

#[test]
fn zero_data_and_forcing_stay_zero() {
    let g = grid();
    let p = Preset::Warm.params();
    let z = GridField::zeros(&g);
    let n1 = solve_kdv(&soliton(&g, &p, 1.0, 0.0, 0.0), 1.0, &p, 1e-2, 10).unwrap();
    let m = solve_linearized_kdv(2, &z, &ZeroForcing(g.clone()), &n1, 1.0, &p, 1e-2, 10).unwrap();
    assert!(m.states.iter().all(|s| s.max_abs() == 0.0));
}

#[test]
fn linearized_solver_matches_a_manufactured_solution() {
    // with n1 = 0 the equation is linear Airy with forcing; take m = t·sin(qx)
    let g = grid();
    let p = Preset::Cold.params();
    let q = 2.0 * std::f64::consts::PI / g.length() * 3.0;
    let z = GridField::zeros(&g);
    let n1 = solve_kdv(&z, 1.0, &p, 1e-2, 1).unwrap();
    let d = p.delta();
    let gf = g.clone();
    let forcing = FnForcing(move |t: f64| GridField::from_fn(&gf, |x| (q * x).sin() - d * t * q.powi(3) * (q * x).cos()));
    let m = solve_linearized_kdv(3, &z, &forcing, &n1, 1.0, &p, 1e-2, 10).unwrap();
    let exact = GridField::from_fn(&g, |x| (q * x).sin());
    assert!(m.final_state().sub(&exact).max_abs() < 1e-10);
}

#[test]
fn bad_requests_are_rejected() {
    let g = grid();
    let p = Preset::Cold.params();
    let z = GridField::zeros(&g);
    let n1 = solve_kdv(&z, 1.0, &p, 1e-2, 1).unwrap();
    assert!(matches!(
        solve_linearized_kdv(1, &z, &ZeroForcing(g.clone()), &n1, 1.0, &p, 1e-2, 1),
        Err(LabError::Precondition(_))
    ));
    assert!(solve_linearized_kdv(2, &z, &ZeroForcing(g.clone()), &n1, 2.0, &p, 1e-2, 1).is_err());
    let huge = GridField::constant(&g, 1e6).add(&soliton(&g, &p, 1.0, 0.0, 0.0));
    assert!(solve_kdv(&huge, 1.0, &p, 1e-1, 1).is_err());
    assert!(solve_kdv(&z, -1.0, &p, 1e-2, 1).is_err());
}
