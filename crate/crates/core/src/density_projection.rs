//! Projection onto the density constraint sets.
//!
//! The metric projection of θ onto {u : u ≥ floor, ∫u = mass} in the weighted
//! norm clamps pointwise and shifts by a scalar multiplier:
//! u(x) = max(θ(x) − λ, floor), with λ the unique root of the mass equation
//! g(λ) = Σⱼ wⱼ max(θⱼ − λ, floor) = mass. The discrete g is piecewise linear,
//! continuous and non-increasing, so the root is found exactly by sorting the
//! node values as breakpoints; a bisection fallback brackets the root between
//! the analytic lower bound −(1+mass)/(b−a) − ‖θ‖/√(b−a) and maxⱼ θⱼ.

use crate::error::{Error, Result};
use crate::function_space::{DensityProfile, GridFn};

/// Outcome of a scalar multiplier solve.
#[derive(Debug, Clone)]
pub struct MultiplierSolve {
    pub lambda: f64,
    /// |g(λ) − target|.
    pub residual: f64,
    /// Bracket used (or available to) the bisection path.
    pub bracket: (f64, f64),
    /// Breakpoints scanned (sorted solve) or bisection steps.
    pub iterations: usize,
}

/// Evaluates g(λ) = Σⱼ wⱼ max(θⱼ − λ, floor).
fn mass_at(theta: &GridFn, lambda: f64, floor: f64) -> f64 {
    theta
        .grid()
        .weights()
        .iter()
        .zip(theta.values().iter())
        .map(|(w, t)| w * (t - lambda).max(floor))
        .sum()
}

fn analytic_bracket(theta: &GridFn, target: f64) -> (f64, f64) {
    let span = theta.grid().span();
    let lo = -(1.0 + target) / span - theta.norm() / span.sqrt();
    let hi = theta
        .values()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Exact sorted-breakpoint solve of Σⱼ wⱼ max(θⱼ − λ, floor) = mass.
///
/// A node is active (unclamped) iff θⱼ − λ > floor strictly; ties clamp to
/// the floor. Walking the breakpoints cⱼ = θⱼ − floor in decreasing order,
/// g is linear on each segment with slope −(active weight).
fn sorted_solve(theta: &GridFn, floor: f64, mass: f64) -> Result<(f64, usize)> {
    let w = theta.grid().weights();
    let total_w: f64 = w.iter().sum();
    if mass <= floor * total_w {
        return Err(Error::Infeasible(format!(
            "mass {mass} not strictly above floor mass {}",
            floor * total_w
        )));
    }
    let mut order: Vec<usize> = (0..theta.len()).collect();
    order.sort_by(|&i, &j| {
        theta.values()[j]
            .partial_cmp(&theta.values()[i])
            .expect("finite values")
    });

    // active prefix sums over nodes with the largest θ
    let mut active_w = 0.0;
    let mut active_wt = 0.0;
    for (count, &idx) in order.iter().enumerate() {
        active_w += w[idx];
        active_wt += w[idx] * theta.values()[idx];
        // candidate λ assuming exactly these count+1 nodes are active
        let lambda = (active_wt + floor * (total_w - active_w) - mass) / active_w;
        // segment of validity: c_{(next)} <= λ < c_{(current last added)}
        let c_cur = theta.values()[idx] - floor;
        let c_next = if count + 1 < order.len() {
            theta.values()[order[count + 1]] - floor
        } else {
            f64::NEG_INFINITY
        };
        if lambda < c_cur && lambda >= c_next {
            return Ok((lambda, count + 1));
        }
    }
    // numerically flat segments can leave the candidate on a boundary; fall
    // back to the bisection bracket
    Err(Error::Internal(
        "sorted breakpoint scan found no segment".into(),
    ))
}

/// Bisection solve of g(λ) = target over the analytic bracket.
pub fn multiplier_root_bisection(
    theta: &GridFn,
    target: f64,
    floor: f64,
) -> Result<MultiplierSolve> {
    let (mut lo, mut hi) = analytic_bracket(theta, target);
    let g_lo = mass_at(theta, lo, floor);
    let g_hi = mass_at(theta, hi, floor);
    // g is non-increasing: need g(lo) >= target >= g(hi)
    if !(g_lo >= target && target >= g_hi) {
        return Err(Error::Bracket {
            lo,
            hi,
            g_lo,
            g_hi,
        });
    }
    let bracket = (lo, hi);
    let mut iterations = 0;
    for _ in 0..200 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let g = mass_at(theta, mid, floor);
        if g > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
    }
    let lambda = 0.5 * (lo + hi);
    Ok(MultiplierSolve {
        lambda,
        residual: (mass_at(theta, lambda, floor) - target).abs(),
        bracket,
        iterations,
    })
}

/// Solves Σⱼ wⱼ (θⱼ − λ)⁺ = target for the unique λ.
///
/// Sorted-breakpoint solve with bisection fallback.
pub fn multiplier_root(theta: &GridFn, target: f64) -> Result<MultiplierSolve> {
    if !(target > 0.0) {
        return Err(Error::Domain(format!("target must be positive, got {target}")));
    }
    match sorted_solve(theta, 0.0, target) {
        Ok((lambda, iterations)) => Ok(MultiplierSolve {
            lambda,
            residual: (mass_at(theta, lambda, 0.0) - target).abs(),
            bracket: analytic_bracket(theta, target),
            iterations,
        }),
        Err(Error::Infeasible(e)) => Err(Error::Infeasible(e)),
        Err(_) => multiplier_root_bisection(theta, target, 0.0),
    }
}

/// Component-wise metric projection onto {uᵢ ≥ floorᵢ, ∫uᵢ = massᵢ}.
///
/// For floor 0 and mass 1 this is the projection onto the admissible density
/// set. Returns the projected profile and the per-market multipliers.
pub fn project_density(
    theta: &[GridFn],
    floor: &[f64],
    mass: &[f64],
) -> Result<(DensityProfile, Vec<f64>)> {
    if theta.is_empty() || theta.len() != floor.len() || theta.len() != mass.len() {
        return Err(Error::Domain(
            "projection needs matching component/floor/mass counts".into(),
        ));
    }
    let mut comps = Vec::with_capacity(theta.len());
    let mut lambdas = Vec::with_capacity(theta.len());
    for ((t, &f), &m) in theta.iter().zip(floor.iter()).zip(mass.iter()) {
        let span = t.grid().span();
        if !(m > f * span) {
            return Err(Error::Infeasible(format!(
                "mass {m} must exceed floor mass {}",
                f * span
            )));
        }
        let (lambda, _) = match sorted_solve(t, f, m) {
            Ok(res) => res,
            Err(Error::Infeasible(e)) => return Err(Error::Infeasible(e)),
            Err(_) => {
                let ms = multiplier_root_bisection(t, m, f)?;
                (ms.lambda, ms.iterations)
            }
        };
        let values = t.values().mapv(|v| (v - lambda).max(f));
        comps.push(GridFn::new(t.grid().clone(), values)?);
        lambdas.push(lambda);
    }
    Ok((DensityProfile::new(comps)?, lambdas))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_space::{inner_product, make_grid, sample, GridFn, QuadratureRule};
    use ndarray::Array1;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(a: f64, b: f64, n: usize) -> std::sync::Arc<crate::function_space::Grid> {
        make_grid(a, b, n, QuadratureRule::CompositeTrapezoid).unwrap()
    }

    #[test]
    fn zero_theta_unit_target() {
        let g = grid(0.0, 1.0, 401);
        let theta = GridFn::constant(g, 0.0);
        let s = multiplier_root(&theta, 1.0).unwrap();
        assert!((s.lambda + 1.0).abs() < 1e-12);
        assert!(s.residual < 1e-12);
    }

    #[test]
    fn linear_theta_half() {
        let g = grid(0.0, 1.0, 401);
        let theta = sample(|x| x, &g).unwrap();
        let s = multiplier_root(&theta, 1.0).unwrap();
        assert!((s.lambda + 0.5).abs() < 1e-10, "lambda {}", s.lambda);
    }

    #[test]
    fn sorted_and_bisection_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..200 {
            let n = rng.random_range(5..200);
            let g = grid(0.0, 1.0 + (trial % 3) as f64, n);
            let vals: Array1<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let theta = GridFn::new(g, vals).unwrap();
            let target = rng.random_range(0.1..2.0);
            let a = multiplier_root(&theta, target).unwrap();
            let b = multiplier_root_bisection(&theta, target, 0.0).unwrap();
            assert!(
                (a.lambda - b.lambda).abs() < 1e-10,
                "sorted {} vs bisection {}",
                a.lambda,
                b.lambda
            );
            assert!(a.residual < 1e-10);
        }
    }

    #[test]
    fn projection_of_constant_is_uniform() {
        let g = grid(0.0, 2.0, 101);
        let theta = [GridFn::constant(g, 7.3)];
        let (p, _) = project_density(&theta, &[0.0], &[1.0]).unwrap();
        for v in p.component(0).values() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_fixes_feasible_point() {
        let g = grid(0.0, 1.0, 201);
        let u = sample(|x| 2.0 * x, &g).unwrap(); // mass 1, non-negative
        let (p, lam) = project_density(std::slice::from_ref(&u), &[0.0], &[1.0]).unwrap();
        assert!(p.component(0).axpy(-1.0, &u).unwrap().norm() < 1e-12);
        assert!(lam[0].abs() < 1e-12);
    }

    #[test]
    fn projection_feasibility_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.random_range(4..80);
            let g = grid(-1.0, 1.5, n);
            let vals: Array1<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let theta = [GridFn::new(g, vals).unwrap()];
            let floor = rng.random_range(0.0..0.2);
            let mass = rng.random_range(floor * 2.5 + 0.1..3.0);
            let (p, _) = project_density(&theta, &[floor], &[mass]).unwrap();
            let m = p.component(0).integral();
            assert!((m - mass).abs() < 1e-12, "mass {m} vs {mass}");
            assert!(p.component(0).values().iter().all(|&v| v >= floor));
        }
    }

    #[test]
    fn projection_infeasible_rejected() {
        let g = grid(0.0, 1.0, 11);
        let theta = [GridFn::constant(g, 0.0)];
        assert!(project_density(&theta, &[1.0], &[0.5]).is_err());
    }

    #[test]
    fn non_expansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = grid(0.0, 1.0, 64);
        for _ in 0..100 {
            let v1: Array1<f64> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v2: Array1<f64> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t1 = GridFn::new(g.clone(), v1).unwrap();
            let t2 = GridFn::new(g.clone(), v2).unwrap();
            let (p1, _) = project_density(std::slice::from_ref(&t1), &[0.0], &[1.0]).unwrap();
            let (p2, _) = project_density(std::slice::from_ref(&t2), &[0.0], &[1.0]).unwrap();
            let dp = p1.distance(&p2).unwrap();
            let dt = t1.axpy(-1.0, &t2).unwrap().norm();
            assert!(dp <= dt * (1.0 + 1e-12), "{dp} > {dt}");
        }
    }

    #[test]
    fn variational_characterization() {
        // ⟨u − θ, z − u⟩ ≥ 0 for z in the constraint set
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let g = grid(0.0, 1.0, 33);
        let vals: Array1<f64> = (0..33).map(|_| rng.random_range(-2.0..2.0)).collect();
        let theta = GridFn::new(g.clone(), vals).unwrap();
        let (p, _) = project_density(std::slice::from_ref(&theta), &[0.0], &[1.0]).unwrap();
        let u = p.component(0);
        let resid = u.axpy(-1.0, &theta).unwrap();
        for _ in 0..200 {
            let zv: Array1<f64> = (0..33).map(|_| rng.random_range(0.0..1.0)).collect();
            let z = GridFn::new(g.clone(), zv).unwrap();
            let z = z.scale(1.0 / z.integral());
            let dir = z.axpy(-1.0, u).unwrap();
            assert!(inner_product(&resid, &dir).unwrap() >= -1e-10);
        }
    }
}
