//! Property-based invariants for the projection and the operator algebra.

use dcg_core::density_projection::project_density;
use dcg_core::function_space::{inner_product, make_grid, GridFn, QuadratureRule};
use dcg_core::operators::{apply, LinOp};
use ndarray::Array1;
use proptest::prelude::*;

fn grid01(n: usize) -> std::sync::Arc<dcg_core::function_space::Grid> {
    make_grid(0.0, 1.0, n, QuadratureRule::CompositeTrapezoid).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_feasible_and_idempotent(vals in prop::collection::vec(-5.0f64..5.0, 8..40)) {
        let g = grid01(vals.len());
        let theta = GridFn::new(g.clone(), Array1::from(vals)).unwrap();
        let (p, _) = project_density(std::slice::from_ref(&theta), &[0.0], &[1.0]).unwrap();
        let u = p.component(0);
        prop_assert!((u.integral() - 1.0).abs() < 1e-12);
        prop_assert!(u.values().iter().all(|&v| v >= 0.0));
        // projecting a point of the set returns it unchanged
        let (p2, lam) = project_density(std::slice::from_ref(u), &[0.0], &[1.0]).unwrap();
        prop_assert!(p2.component(0).axpy(-1.0, u).unwrap().norm() < 1e-12);
        prop_assert!(lam[0].abs() < 1e-12);
    }

    #[test]
    fn projection_non_expansive(
        v1 in prop::collection::vec(-5.0f64..5.0, 16),
        v2 in prop::collection::vec(-5.0f64..5.0, 16),
    ) {
        let g = grid01(16);
        let t1 = GridFn::new(g.clone(), Array1::from(v1)).unwrap();
        let t2 = GridFn::new(g.clone(), Array1::from(v2)).unwrap();
        let (p1, _) = project_density(std::slice::from_ref(&t1), &[0.0], &[1.0]).unwrap();
        let (p2, _) = project_density(std::slice::from_ref(&t2), &[0.0], &[1.0]).unwrap();
        let dp = p1.distance(&p2).unwrap();
        let dt = t1.axpy(-1.0, &t2).unwrap().norm();
        prop_assert!(dp <= dt * (1.0 + 1e-12));
    }

    #[test]
    fn adjoint_pairing_for_structured_ops(
        m in prop::collection::vec(-2.0f64..2.0, 12),
        u in prop::collection::vec(-2.0f64..2.0, 12),
        v in prop::collection::vec(-2.0f64..2.0, 12),
        c in -2.0f64..2.0,
    ) {
        let g = grid01(12);
        let mf = GridFn::new(g.clone(), Array1::from(m)).unwrap();
        let op = LinOp::sum(vec![
            LinOp::multiplication(mf.clone()),
            LinOp::scale(c, LinOp::rank_one(mf.clone(), GridFn::constant(g.clone(), 1.0)).unwrap()),
        ]).unwrap();
        let uf = GridFn::new(g.clone(), Array1::from(u)).unwrap();
        let vf = GridFn::new(g.clone(), Array1::from(v)).unwrap();
        let lhs = inner_product(&apply(&op, &uf).unwrap(), &vf).unwrap();
        let rhs = inner_product(&uf, &apply(&op.adjoint(), &vf).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
        // involution
        let twice = op.adjoint().adjoint();
        let d = apply(&twice, &uf).unwrap().axpy(-1.0, &apply(&op, &uf).unwrap()).unwrap().norm();
        prop_assert!(d < 1e-12);
    }
}
