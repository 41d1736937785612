//! Property-based invariants: structural identities that must hold for
//! arbitrary coefficients, not just hand-picked fixtures.

use std::f64::consts::PI;

use proptest::prelude::*;

use viscowave::kernel::MemoryKernel;
use viscowave::scenario::Scenario;
use viscowave::spectral::{DomainSpec, SpectralField};

fn field(coeffs: &[f64]) -> SpectralField {
    let d = DomainSpec::new(&[PI], &[coeffs.len()]).unwrap();
    let arr = ndarray::ArrayD::from_shape_vec(vec![coeffs.len()], coeffs.to_vec()).unwrap();
    SpectralField::from_coeffs(&d, arr).unwrap()
}

proptest! {
    /// Poincare: ||u||_0^2 <= ||u||_1^2 / lambda_1.
    #[test]
    fn poincare_inequality(coeffs in prop::collection::vec(-10.0f64..10.0, 8)) {
        let u = field(&coeffs);
        let l2 = u.sobolev_norm_sq(0.0);
        let h1 = u.sobolev_norm_sq(1.0);
        prop_assert!(l2 <= h1 / 1.0 + 1e-12 * (1.0 + h1));
    }

    /// Spectral truncation is an orthogonal projection: norms never grow
    /// when coefficients are zeroed.
    #[test]
    fn truncation_contracts(coeffs in prop::collection::vec(-10.0f64..10.0, 8), keep in 1usize..8) {
        let u = field(&coeffs);
        let mut truncated = coeffs.clone();
        for c in truncated.iter_mut().skip(keep) {
            *c = 0.0;
        }
        let v = field(&truncated);
        prop_assert!(v.sobolev_norm_sq(1.0) <= u.sobolev_norm_sq(1.0) + 1e-12);
    }

    /// Prony tails close in closed form: I(s) = sum_j c_j/d_j e^{-d_j s}.
    #[test]
    fn prony_tail_closure(
        terms in prop::collection::vec((0.1f64..2.0, 0.2f64..5.0), 1..4),
        s in 0.0f64..10.0,
    ) {
        let kernel = MemoryKernel::prony(&terms).unwrap();
        let exact: f64 = terms.iter().map(|&(c, d)| c / d * (-d * s).exp()).sum();
        let got = kernel.tail_integral(s);
        prop_assert!((got - exact).abs() <= 1e-12 * (1.0 + exact));
    }

    /// Scenario serialization round-trips: parse -> serialize -> parse
    /// reaches a fixed point.
    #[test]
    fn scenario_roundtrip(dt in 0.001f64..0.1, horizon in 1.0f64..50.0, amp in 0.1f64..2.0) {
        let toml = format!(
            r#"
experiment = "evolve"
rho = 2.0
horizon = {horizon}

[domain]
edge_lengths = [3.141592653589793]
modes_per_axis = [4]

[kernel]
type = "prony"
terms = [[1.0, 1.0]]

[nonlinearity]
coeffs = [0.0, 0.0, 0.0, 1.0]

[initial.u0]
type = "eigenfunction"
mode = [1]
amplitude = {amp}

[step]
dt = {dt}
"#
        );
        let sc = Scenario::from_toml_str(&toml).unwrap();
        let once = sc.to_toml_string().unwrap();
        let sc2 = Scenario::from_toml_str(&once).unwrap();
        let twice = sc2.to_toml_string().unwrap();
        prop_assert_eq!(once, twice);
    }
}
