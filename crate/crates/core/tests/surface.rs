use kwflow_core::builtins::random_smooth;
use kwflow_core::{Grid, ScalarField, Surface};
use proptest::prelude::*;

fn grid() -> Grid {
    Grid::new(32).unwrap()
}

fn surface(seed: u64, amp: f64) -> Surface {
    Surface::new(grid(), &random_smooth(grid(), seed, 3, amp)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn unit_area_after_normalization(seed in any::<u64>(), amp in 0.0..2.0f64) {
        let s = surface(seed, amp);
        let area = s.integrate(&ScalarField::constant(grid(), 1.0)).unwrap();
        prop_assert!((area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_bonnet(seed in any::<u64>(), amp in 0.0..2.0f64) {
        let s = surface(seed, amp);
        prop_assert!(s.integrate(&s.gauss_curvature()).unwrap().abs() < 1e-8);
    }

    #[test]
    fn dirichlet_energy_is_conformally_invariant(seed in any::<u64>(), fseed in any::<u64>(), amp in 0.0..2.0f64) {
        let s = surface(seed, amp);
        let f = random_smooth(grid(), fseed, 4, 1.0);
        let curved = s.integrate(&s.grad_energy_density(&f).unwrap()).unwrap();
        let flat = Surface::flat(grid()).dirichlet_energy(&f).unwrap();
        prop_assert!((curved - flat).abs() <= 1e-10 * flat.max(1.0));
    }

    #[test]
    fn laplace_beltrami_is_self_adjoint(seed in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        let s = surface(seed, 1.0);
        let f = random_smooth(grid(), a, 4, 1.0);
        let g = random_smooth(grid(), b, 4, 1.0);
        let lhs = s.inner(&f, &s.laplace_beltrami(&g).unwrap()).unwrap();
        let rhs = s.inner(&g, &s.laplace_beltrami(&f).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn poisson_round_trip(seed in any::<u64>(), fseed in any::<u64>()) {
        let s = surface(seed, 1.0);
        let f = random_smooth(grid(), fseed, 5, 1.0);
        let v = s.poisson_solve(&f).unwrap();
        let back = s.flat_laplacian(&v).unwrap().scale(-1.0);
        let err = back.values().iter().zip(f.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-11);
        prop_assert!(s.integrate_flat(&v).unwrap().abs() < 1e-12);
    }
}

#[test]
fn poisson_rejects_data_with_nonzero_mean() {
    let s = Surface::flat(grid());
    assert!(s.poisson_solve(&ScalarField::constant(grid(), 1.0)).is_err());
}

#[test]
fn corrupted_laplacian_breaks_the_round_trip() {
    let s = Surface::flat(grid()).with_corrupted_laplacian();
    let f = random_smooth(grid(), 1, 3, 1.0);
    let back = s.flat_laplacian(&s.poisson_solve(&f).unwrap()).unwrap().scale(-1.0);
    assert!((back.at(3, 4) - f.at(3, 4)).abs() > 1e-3);
}
