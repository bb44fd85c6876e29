//! Shared builders for the integration and acceptance suites.
#![allow(dead_code)] // each test binary uses its own subset

use dcg_core::dynamics::{GameSpec, MarketCoefficients, TimeOpFamily};
use dcg_core::function_space::{make_grid, DensityProfile, Grid, GridFn, QuadratureRule};
use dcg_core::operators::{definiteness_bounds, op_norm, BlockOp, LinOp};
use dcg_core::vi_assembly::AssembledVI;
use dcg_core::Mode;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub fn grid(a: f64, b: f64, n: usize) -> Arc<Grid> {
    make_grid(a, b, n, QuadratureRule::CompositeTrapezoid).unwrap()
}

pub fn random_gridfn(g: &Arc<Grid>, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> GridFn {
    let vals: Array1<f64> = (0..g.len()).map(|_| rng.random_range(lo..hi)).collect();
    GridFn::new(g.clone(), vals).unwrap()
}

/// Random admissible density: positive values normalized to unit mass.
pub fn random_density(g: &Arc<Grid>, rng: &mut ChaCha8Rng) -> GridFn {
    let f = random_gridfn(g, rng, 0.05, 1.0);
    f.scale(1.0 / f.integral())
}

pub fn random_profile(g: &Arc<Grid>, n: usize, rng: &mut ChaCha8Rng) -> DensityProfile {
    DensityProfile::new((0..n).map(|_| random_density(g, rng)).collect()).unwrap()
}

/// Random smooth-ish kernel operator with entries of magnitude ~scale.
pub fn random_kernel(g: &Arc<Grid>, rng: &mut ChaCha8Rng, scale: f64) -> LinOp {
    let n = g.len();
    let mut k = Array2::zeros((n, n));
    // low-order trigonometric mix keeps the kernel smooth across the grid
    let c: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    for (i, &x) in g.nodes().iter().enumerate() {
        for (j, &y) in g.nodes().iter().enumerate() {
            k[[i, j]] = scale
                * (c[0]
                    + c[1] * (x + c[2] * y).sin()
                    + c[3] * (y - c[4] * x).cos()
                    + c[5] * x * y);
        }
    }
    LinOp::kernel(g.clone(), k).unwrap()
}

/// Random structured operator: kernel, multiplication, rank-one, or a sum.
pub fn random_op(g: &Arc<Grid>, rng: &mut ChaCha8Rng, scale: f64) -> LinOp {
    match rng.random_range(0..4) {
        0 => random_kernel(g, rng, scale),
        1 => LinOp::multiplication(random_gridfn(g, rng, -scale, scale)),
        2 => LinOp::rank_one(
            random_gridfn(g, rng, -scale, scale),
            random_gridfn(g, rng, -scale, scale),
        )
        .unwrap(),
        _ => LinOp::sum(vec![
            random_kernel(g, rng, 0.5 * scale),
            LinOp::scaled_identity(g.clone(), rng.random_range(-scale..scale)),
        ])
        .unwrap(),
    }
}

/// Random constant-coefficient game with zero drift, so both value paths are
/// quadrature-exact on the shared timegrid.
pub fn random_game(
    g: &Arc<Grid>,
    n: usize,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> GameSpec {
    let t_end = rng.random_range(0.5..2.0);
    let timegrid = dcg_core::dynamics::uniform_timegrid(0.0, t_end, steps).unwrap();
    let markets = (0..n)
        .map(|_| MarketCoefficients {
            a: TimeOpFamily::constant(timegrid.clone(), LinOp::zero(g.clone())).unwrap(),
            b_row: (0..n)
                .map(|_| {
                    TimeOpFamily::constant(timegrid.clone(), random_op(g, rng, 0.6)).unwrap()
                })
                .collect(),
            e: TimeOpFamily::constant(timegrid.clone(), random_op(g, rng, 0.6)).unwrap(),
            f_payoff: TimeOpFamily::constant(timegrid.clone(), random_op(g, rng, 0.6)).unwrap(),
            g: random_op(g, rng, 0.5),
            forcing: vec![random_gridfn(g, rng, -1.0, 1.0); timegrid.len()],
            xi: random_gridfn(g, rng, -1.0, 1.0),
            alpha: random_gridfn(g, rng, -1.0, 1.0),
        })
        .collect();
    GameSpec::new(markets, timegrid, g.clone()).unwrap()
}

/// Random positive definite VI data: P = δI + K*K (+ a small skew part),
/// certified numerically.
pub fn random_positive_definite_vi(
    g: &Arc<Grid>,
    rng: &mut ChaCha8Rng,
    with_skew: bool,
) -> AssembledVI {
    let k = random_kernel(g, rng, 0.8);
    let mut terms = vec![
        LinOp::scaled_identity(g.clone(), rng.random_range(0.3..1.0)),
        LinOp::compose(k.adjoint(), k).unwrap(),
    ];
    if with_skew {
        let s = random_kernel(g, rng, 0.15);
        terms.push(LinOp::sum(vec![s.clone(), LinOp::scale(-1.0, s.adjoint())]).unwrap());
    }
    let p = LinOp::sum(terms).unwrap();
    let bounds = definiteness_bounds(&p).unwrap();
    assert!(bounds.0 > 1e-8, "generator must produce definite operators");
    let p_norm = op_norm(&p, 500_000).unwrap();
    let eps_p = bounds.0;
    AssembledVI {
        p: BlockOp::from_single(p),
        q: vec![random_gridfn(g, rng, -1.0, 1.0)],
        eps_p,
        p_norm,
        eps0: eps_p / (p_norm * p_norm),
        mode: Mode::Nne,
        bounds,
        p_value: None,
    }
}

/// Exhaustive active-set solve of
/// min ½Σ wⱼ(uⱼ−θⱼ)² s.t. Σ wⱼuⱼ = mass, uⱼ ≥ floor.
///
/// Enumerates all 2^N − 1 candidate active sets, solves the equality-
/// constrained problem on each, and returns the unique KKT point.
pub fn active_set_projection(theta: &GridFn, floor: f64, mass: f64) -> Vec<f64> {
    let w = theta.grid().weights();
    let t = theta.values();
    let n = t.len();
    assert!(n <= 16, "enumeration oracle is exponential");
    let mut solution: Option<Vec<f64>> = None;
    for bits in 1u32..(1 << n) {
        // free set S: indices where u_j = θ_j − λ
        let mut sw = 0.0;
        let mut swt = 0.0;
        let mut cw = 0.0;
        for j in 0..n {
            if bits & (1 << j) != 0 {
                sw += w[j];
                swt += w[j] * t[j];
            } else {
                cw += w[j];
            }
        }
        let lambda = (swt + floor * cw - mass) / sw;
        let mut ok = true;
        let mut u = vec![floor; n];
        for j in 0..n {
            if bits & (1 << j) != 0 {
                u[j] = t[j] - lambda;
                // primal feasibility of the free variables
                if u[j] < floor - 1e-12 {
                    ok = false;
                    break;
                }
            } else {
                // dual feasibility of the clamped variables
                if t[j] - lambda > floor + 1e-12 {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            if let Some(prev) = &solution {
                // KKT point is unique for the strictly convex objective; any
                // duplicates must coincide
                for (a, b) in prev.iter().zip(u.iter()) {
                    assert!((a - b).abs() < 1e-9, "oracle found two distinct KKT points");
                }
            } else {
                solution = Some(u);
            }
        }
    }
    solution.expect("feasible problem must have a KKT point")
}

/// Contraction bound √(1 − 2ε₀ε_P + ε₀²‖P‖²) from the certificate.
pub fn contraction_bound(vi: &AssembledVI) -> f64 {
    (1.0 - 2.0 * vi.eps0 * vi.eps_p + vi.eps0 * vi.eps0 * vi.p_norm * vi.p_norm)
        .max(0.0)
        .sqrt()
}
