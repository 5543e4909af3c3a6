mod common;

use nalgebra::DVector;
use proptest::prelude::*;

use reeb_chords::flow::{flow_map, integrate, integrate_with_variational, FlowOptions};
use reeb_chords::phase::{complex_structure, omega};
use reeb_chords::systems::BuiltinName;
use reeb_chords::{LambdaChoice, PhaseState};

const SYSTEMS: [BuiltinName; 5] = [
    BuiltinName::Harmonic,
    BuiltinName::HarmonicShift,
    BuiltinName::HenonHeiles,
    BuiltinName::RtbpPlanar,
    BuiltinName::SyntheticFold,
];

fn mu_for(name: BuiltinName, t: f64) -> f64 {
    let sys = common::system(name);
    let (lo, hi) = sys.mu_range;
    lo + (hi - lo) * t
}

fn unit4() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hamiltonian_field_is_the_symplectic_gradient(k in 0usize..5, r in unit4(), u in unit4(), t in 0.0f64..1.0) {
        let name = SYSTEMS[k];
        let sys = common::system(name);
        let x = common::regular_state(name, &r);
        let mu = mu_for(name, t);
        let u = DVector::from_column_slice(&u[..2 * sys.n()]);
        let lhs = omega(&u, &sys.x_h(&x, mu));
        let rhs = sys.grad_h(&x, mu).dot(&u);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
    }

    #[test]
    fn liouville_field_recovers_lambda(r in unit4(), u in unit4(), std in any::<bool>()) {
        let l = if std { LambdaChoice::Standard } else { LambdaChoice::Symmetric };
        let x = DVector::from_column_slice(&r);
        let u = DVector::from_column_slice(&u);
        prop_assert!((omega(&l.liouville(&x), &u) - l.eval(&x, &u)).abs() <= 1e-12);
    }

    #[test]
    fn contact_function_is_lambda_of_the_field(k in 0usize..5, r in unit4(), t in 0.0f64..1.0) {
        let name = SYSTEMS[k];
        let sys = common::system(name);
        let x = common::regular_state(name, &r);
        let mu = mu_for(name, t);
        let f = sys.contact_function(&x, mu);
        prop_assert!((omega(&sys.liouville_field(&x), &sys.x_h(&x, mu)) - f).abs() <= 1e-12 * f.abs().max(1.0));
    }

    #[test]
    fn monodromy_is_symplectic(k in 0usize..5, r in unit4(), t in 0.0f64..1.0, tf in 0.05f64..1.0) {
        let name = SYSTEMS[k];
        let sys = common::system(name);
        let x = PhaseState::from_vector(common::regular_state(name, &r)).unwrap();
        let fr = integrate_with_variational(&sys, &x, mu_for(name, t), tf, &FlowOptions::default(), &[]).unwrap();
        let m = fr.monodromy.unwrap();
        let j = complex_structure(sys.n());
        prop_assert!((m.transpose() * &j * &m - j).amax() <= 1e-6);
        prop_assert!((m.determinant() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn flow_is_a_semigroup(k in 0usize..5, r in unit4(), t in 0.0f64..1.0, a in 0.05f64..0.6, b in 0.05f64..0.6) {
        let name = SYSTEMS[k];
        let sys = common::system(name);
        let mu = mu_for(name, t);
        let opts = FlowOptions::default();
        let x = PhaseState::from_vector(common::regular_state(name, &r)).unwrap();
        let whole = flow_map(&sys, &x, mu, a + b, &opts).unwrap();
        let split = flow_map(&sys, &flow_map(&sys, &x, mu, a, &opts).unwrap(), mu, b, &opts).unwrap();
        let err = (whole.as_vector() - split.as_vector()).amax();
        prop_assert!(err <= 10.0 * (opts.rtol * whole.as_vector().amax() + opts.atol), "err {err:e}");
    }

    #[test]
    fn energy_is_conserved(k in 0usize..5, r in unit4(), t in 0.0f64..1.0) {
        let name = SYSTEMS[k];
        let sys = common::system(name);
        let x = PhaseState::from_vector(common::regular_state(name, &r)).unwrap();
        let fr = integrate(&sys, &x, mu_for(name, t), 1.0, &FlowOptions::default(), &[0.25, 0.5, 0.75]).unwrap();
        prop_assert!(fr.max_h_drift <= 1e-8);
    }

    #[test]
    fn period_rescaling_matches(r in unit4(), tau in 0.2f64..2.0) {
        // unit-interval samples of a period-tau trajectory against direct flows
        let sys = common::system(BuiltinName::HenonHeiles);
        let x = PhaseState::from_vector(common::regular_state(BuiltinName::HenonHeiles, &r)).unwrap();
        let opts = FlowOptions::default();
        let times: Vec<f64> = (1..4).map(|k| tau * k as f64 / 4.0).collect();
        let fr = integrate(&sys, &x, 0.1, tau, &opts, &times).unwrap();
        let (unit, tau_back) = reeb_chords::chord::unit_parametrization(&fr.states);
        prop_assert!((tau_back - tau).abs() < 1e-15);
        for (s, y) in unit.iter().skip(1) {
            let direct = flow_map(&sys, &x, 0.1, s * tau, &opts).unwrap();
            prop_assert!((direct.as_vector() - y.as_vector()).amax() < 1e-8);
        }
    }
}
