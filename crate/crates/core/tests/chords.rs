mod common;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reeb_chords::action::{DiscretePath, PathCoordinates};
use reeb_chords::chord::{
    evaluate_shooting, newton_shoot, nondegeneracy, shoot, transversality_margin, Chord, ChordGuess, ShootOptions,
};
use reeb_chords::flow::{flow_map, integrate, FlowOptions};
use reeb_chords::systems::BuiltinName;
use reeb_chords::{PhaseState, SystemDescriptor};

const M: f64 = 1e-3;

/// Start on the q1-axis with p1 = 0 and p2 < q1 from the energy.
fn axis_start(q1: f64, jacobi: f64) -> Option<DVector<f64>> {
    let u = -(1.0 - M) / (q1 + M).abs() - M / (q1 - 1.0 + M).abs();
    let disc = q1 * q1 - 2.0 * u - jacobi;
    (disc >= 0.0).then(|| DVector::from_vec(vec![q1, 0.0, 0.0, q1 - disc.sqrt()]))
}

/// `p1` at the first return to `q2 = 0`, the crossing located by bisection in time.
fn recrossing_p1(sys: &SystemDescriptor, q1: f64, jacobi: f64) -> Option<f64> {
    let x0 = PhaseState::from_vector(axis_start(q1, jacobi)?).ok()?;
    let opts = FlowOptions::default();
    let dt = 1e-3;
    let times: Vec<f64> = (1..1000).map(|k| k as f64 * dt).collect();
    let fr = integrate(sys, &x0, jacobi, 1.0, &opts, &times).ok()?;
    let k = fr.states.windows(2).skip(5).position(|w| w[0].1[1] * w[1].1[1] <= 0.0)? + 5;
    let (mut a, mut b) = (fr.states[k].0, fr.states[k + 1].0);
    let qa = fr.states[k].1[1];
    for _ in 0..60 {
        let mid = 0.5 * (a + b);
        let q = flow_map(sys, &x0, jacobi, mid, &opts).ok()?[1];
        if q * qa > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Some(flow_map(sys, &x0, jacobi, 0.5 * (a + b), &opts).ok()?[2])
}

#[test]
fn rtbp_chord_matches_recrossing_bisection() {
    let sys = common::system(BuiltinName::RtbpPlanar);
    let jacobi = 3.5;
    let grid: Vec<f64> = (0..31).map(|k| 0.15 + 0.005 * k as f64).collect();
    let vals: Vec<Option<f64>> = grid.iter().map(|&q| recrossing_p1(&sys, q, jacobi)).collect();
    let k = (0..30)
        .find(|&k| matches!((vals[k], vals[k + 1]), (Some(a), Some(b)) if a * b < 0.0))
        .expect("bracket");
    let (mut a, mut b) = (grid[k], grid[k + 1]);
    let fa = vals[k].unwrap();
    for _ in 0..50 {
        let mid = 0.5 * (a + b);
        if recrossing_p1(&sys, mid, jacobi).unwrap() * fa > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let q1 = 0.5 * (a + b);
    let x = axis_start(q1, jacobi).unwrap();
    let chord = shoot(&sys, jacobi, &ChordGuess::new(&[q1 + 1e-3, x[3] * 0.999], 0.3), &ShootOptions::default()).unwrap();
    assert!((chord.start[0] - q1).abs() < 1e-8, "{} vs {q1}", chord.start[0]);
    assert!((chord.start[1] - x[3]).abs() < 1e-7);
}

fn suite_chords() -> Vec<(SystemDescriptor, Chord)> {
    let opts = ShootOptions::default();
    let rtbp = common::system(BuiltinName::RtbpPlanar);
    let lo = &common::RTBP_LOWER;
    let up = &common::RTBP_UPPER;
    vec![
        common::harmonic_chord(256),
        common::synthetic_seed(0.3, 256),
        (rtbp.clone(), shoot(&rtbp, lo.mu, &ChordGuess::new(&lo.u, lo.tau), &opts).unwrap()),
        (rtbp.clone(), shoot(&rtbp, up.mu, &ChordGuess::new(&up.u, up.tau), &opts).unwrap()),
    ]
}

#[test]
fn converged_chords_meet_their_invariants() {
    for (sys, c) in suite_chords() {
        assert!(c.tau > 0.0);
        assert!(c.boundary_gap <= 1e-9, "{}: gap {:e}", sys.id, c.boundary_gap);
        for x in &c.samples {
            assert!(sys.h(x, c.mu).abs() <= 1e-8, "{}", sys.id);
        }
    }
}

#[test]
fn flow_is_never_tangent_to_the_boundary() {
    for (sys, c) in suite_chords() {
        let a = transversality_margin(&sys, c.mu, c.start_state(), 0);
        let b = transversality_margin(&sys, c.mu, c.end_state(), 1);
        assert!(a > 1e-8 && b > 1e-8, "{}: {a:e} {b:e}", sys.id);
    }
}

#[test]
fn chords_are_critical_points_of_the_discrete_action() {
    for (sys, c) in suite_chords() {
        let mut norms = Vec::new();
        for n in [64usize, 128] {
            let opts = ShootOptions { samples: n, ..Default::default() };
            let cn = shoot(&sys, c.mu, &c.guess(), &opts).unwrap();
            let pc = PathCoordinates::new(&sys, n);
            let g = pc.gradient_norm(c.mu, &pc.to_reduced(&DiscretePath::from_chord(&cn)));
            norms.push((g, cn.residual_norm));
        }
        // second-order consistency: halving h quarters the gradient
        let ratio = norms[1].0 / norms[0].0;
        assert!(ratio < 0.3, "{}: ratio {ratio}", sys.id);
        let c_est = norms[0].0 * 64.0 * 64.0;
        let (g, res) = norms[1];
        assert!(g <= 10.0 * res + c_est / (128.0 * 128.0) * 1.1, "{}", sys.id);
    }
}

#[test]
fn nondegenerate_chords_attract_newton() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (sys, c) in suite_chords() {
        let opts = ShootOptions::default();
        let nd = nondegeneracy(&sys, &c, &opts).unwrap();
        assert!(!nd.degenerate && nd.shooting_jac_det != 0.0, "{}", sys.id);
        for _ in 0..8 {
            // each component within 1e-3 / sqrt(n + 1) keeps the perturbation inside radius 1e-3
            let mut g = c.guess();
            let scale = 1e-3 / ((g.u.len() + 1) as f64).sqrt();
            for v in g.u.iter_mut() {
                *v += rng.gen_range(-scale..scale);
            }
            g.tau += rng.gen_range(-scale..scale);
            let (_, _, iters, _) = newton_shoot(&sys, c.mu, &g, &opts).unwrap();
            assert!(iters <= 6, "{}: {iters} iterations", sys.id);
        }
    }
}

#[test]
fn rtbp_monodromy_columns_match_differences() {
    let chords = suite_chords();
    let (sys, c) = &chords[2];
    let opts = FlowOptions::default();
    let ev = evaluate_shooting(sys, c.mu, &c.start, c.tau, &opts).unwrap();
    let x0 = c.start_state().as_vector().clone();
    let eps = 1e-6;
    for j in 0..4 {
        let mut e = DVector::zeros(4);
        e[j] = 1.0;
        let xp = PhaseState::from_vector(&x0 + &e * eps).unwrap();
        let xm = PhaseState::from_vector(&x0 - &e * eps).unwrap();
        let fd = (flow_map(sys, &xp, c.mu, c.tau, &opts).unwrap().as_vector()
            - flow_map(sys, &xm, c.mu, c.tau, &opts).unwrap().as_vector())
            / (2.0 * eps);
        let col = ev.monodromy.column(j);
        assert!((&fd - col).norm() <= 1e-4 * fd.norm(), "column {j}");
    }
}

#[test]
fn lower_rtbp_family_stays_nondegenerate() {
    let (sys, atlas) = common::rtbp_family(&common::RTBP_LOWER);
    assert!(atlas.events.iter().all(|e| e.kind == reeb_chords::continuation::EventKind::RangeEnd));
    let opts = ShootOptions::default();
    for c in common::row_chords(&sys, &atlas, &common::spread_indices(atlas.rows.len(), 6), 64) {
        assert!(nondegeneracy(&sys, &c, &opts).unwrap().sigma_min > opts.degeneracy_threshold);
    }
}
