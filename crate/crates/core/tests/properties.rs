use std::path::Path;

use advection_rom::control::ControlSignal;
use advection_rom::discretization::{central_derivative, SpaceTimeGrid};
use advection_rom::experiments::parse_config_str;
use advection_rom::optimizer::{barzilai_borwein_step, BB_MAX, BB_MIN};
use advection_rom::transform::shift_field;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn field(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.0f64..1.0, n).prop_map(DVector::from_vec)
}

proptest! {
    #[test]
    fn central_derivative_is_skew_adjoint((a, b) in (3usize..80).prop_flat_map(|n| (field(n), field(n))), l in 1.0f64..200.0) {
        let grid = SpaceTimeGrid::new(l, a.len(), 1.0, 1, 1.0).unwrap();
        let da = central_derivative(&a, &grid, 1).unwrap();
        let db = central_derivative(&b, &grid, 1).unwrap();
        let lhs = grid.inner_product(&da, &b).unwrap();
        let rhs = -grid.inner_product(&a, &db).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn aligned_shifts_compose(f in field(37), k1 in -100i64..100, k2 in -100i64..100) {
        let grid = SpaceTimeGrid::new(10.0, 37, 1.0, 1, 1.0).unwrap();
        let dx = grid.dx();
        let once = shift_field(&f, (k1 + k2) as f64 * dx, &grid).unwrap();
        let twice = shift_field(&shift_field(&f, k1 as f64 * dx, &grid).unwrap(), k2 as f64 * dx, &grid).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn bb_step_stays_clamped(s in prop::collection::vec(-10.0f64..10.0, 6), y in prop::collection::vec(-10.0f64..10.0, 6), prev in 1e-6f64..10.0) {
        let s = ControlSignal::from_matrix(DMatrix::from_vec(2, 3, s));
        let y = ControlSignal::from_matrix(DMatrix::from_vec(2, 3, y));
        let w = barzilai_borwein_step(&s, &y, 0.1, prev);
        prop_assert!((BB_MIN..=BB_MAX).contains(&w) || w == prev);
    }

    #[test]
    fn config_text_round_trips(
        n in 2usize..5000,
        n_t in 1usize..5000,
        v in -2.0f64..2.0,
        mu in 1e-8f64..1.0,
        modes in 1usize..200,
        tilt in -1.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let text = format!("n = {n}\nn_t = {n_t}\nv = {v:e}\nmu = {mu:e}\nmodes = {modes}\ntilt_factor = {tilt:e}\nseed = {seed}\n");
        let cfg = parse_config_str(&text, Path::new("p.cfg")).unwrap();
        let again = parse_config_str(&cfg.to_config_string(), Path::new("q.cfg")).unwrap();
        prop_assert_eq!(cfg, again);
    }
}
