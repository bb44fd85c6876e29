//! Forward state dynamics, the backward operator-valued equation, and the two
//! value-function assembly paths.
//!
//! The state of market i solves X′ = A(t)X + Σⱼ B_ij(t) uⱼ + f(t), X(s) = ξ.
//! The backward companion Y′ = −(E(t) + Y A(t)), Y(T) = G eliminates the
//! state from the payoff: both
//!   V = α + ∫(E X + F u) dt + G X(T)                    (direct)
//!   V = α + Y(s)ξ + ∫Y f dt + ∫Y Σ B u dt + ∫F u dt     (via Y)
//! are implemented; the direct path serves as the oracle for the production
//! path used in operator assembly.

use crate::error::{Error, Result};
use crate::function_space::{DensityProfile, Grid, GridFn};
use crate::operators::LinOp;
use ndarray::{Array1, Array2};
use std::sync::Arc;

/// A time-sampled family of operators on a shared timegrid, linearly
/// interpolated between samples.
#[derive(Debug, Clone)]
pub struct TimeOpFamily {
    times: Vec<f64>,
    ops: Vec<Arc<LinOp>>,
}

impl TimeOpFamily {
    pub fn new(times: Vec<f64>, ops: Vec<Arc<LinOp>>) -> Result<Self> {
        if times.len() < 2 || times.len() != ops.len() {
            return Err(Error::Domain(
                "time family needs matching times/ops with at least two samples".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("time nodes must be strictly increasing".into()));
        }
        Ok(Self { times, ops })
    }

    /// Constant-in-time family.
    pub fn constant(times: Vec<f64>, op: LinOp) -> Result<Self> {
        let op = Arc::new(op);
        let ops = vec![op; times.len()];
        Self::new(times, ops)
    }

    /// Family sampled from a closed form t ↦ op(t).
    pub fn from_fn<F: Fn(f64) -> LinOp>(times: Vec<f64>, f: F) -> Result<Self> {
        let ops = times.iter().map(|&t| Arc::new(f(t))).collect();
        Self::new(times, ops)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn ops(&self) -> &[Arc<LinOp>] {
        &self.ops
    }

    pub fn op_at_index(&self, k: usize) -> &LinOp {
        &self.ops[k]
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Sup over samples of the operator norm. Shared samples (constant
    /// families) are measured once.
    pub fn sup_norm(&self, iters: usize) -> Result<f64> {
        let mut sup: f64 = 0.0;
        let mut seen: Vec<*const LinOp> = Vec::new();
        for op in &self.ops {
            let ptr = Arc::as_ptr(op);
            if seen.contains(&ptr) {
                continue;
            }
            seen.push(ptr);
            sup = sup.max(crate::operators::op_norm(op.as_ref(), iters)?);
        }
        Ok(sup)
    }

    /// Applies the linearly interpolated operator at segment k, fraction
    /// theta in [0,1]: ((1−θ)·op_k + θ·op_{k+1}) g.
    fn apply_interp(&self, k: usize, theta: f64, g: &Array1<f64>) -> Array1<f64> {
        if theta == 0.0 {
            return self.ops[k].apply_values(g);
        }
        if theta == 1.0 {
            return self.ops[k + 1].apply_values(g);
        }
        let a = self.ops[k].apply_values(g);
        let b = self.ops[k + 1].apply_values(g);
        a * (1.0 - theta) + &(b * theta)
    }
}

/// All coefficients of one market.
#[derive(Debug, Clone)]
pub struct MarketCoefficients {
    /// Drift A_i(t).
    pub a: TimeOpFamily,
    /// Control couplings B_i1 … B_in.
    pub b_row: Vec<TimeOpFamily>,
    /// Running payoff operator E_i(t) acting on the state.
    pub e: TimeOpFamily,
    /// Running payoff operator F_i(t) acting on the own density.
    pub f_payoff: TimeOpFamily,
    /// Terminal payoff operator G_i.
    pub g: LinOp,
    /// Forcing f_i sampled on the timegrid.
    pub forcing: Vec<GridFn>,
    /// Initial demand ξ_i.
    pub xi: GridFn,
    /// Payoff offset α_i.
    pub alpha: GridFn,
}

impl MarketCoefficients {
    fn validate(&self, timegrid: &[f64]) -> Result<()> {
        let check = |name: &str, times: &[f64]| -> Result<()> {
            if times.len() != timegrid.len()
                || times
                    .iter()
                    .zip(timegrid.iter())
                    .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs()))
            {
                return Err(Error::Domain(format!(
                    "{name} family timegrid differs from the game timegrid"
                )));
            }
            Ok(())
        };
        check("A", self.a.times())?;
        for (j, b) in self.b_row.iter().enumerate() {
            check(&format!("B[{j}]"), b.times())?;
        }
        check("E", self.e.times())?;
        check("F", self.f_payoff.times())?;
        if self.forcing.len() != timegrid.len() {
            return Err(Error::Domain(
                "forcing must be sampled on the timegrid".into(),
            ));
        }
        Ok(())
    }
}

/// One game instance: n markets over a common grid and horizon.
#[derive(Debug, Clone)]
pub struct GameSpec {
    pub n: usize,
    pub markets: Vec<MarketCoefficients>,
    pub timegrid: Vec<f64>,
    pub grid: Arc<Grid>,
}

impl GameSpec {
    pub fn new(markets: Vec<MarketCoefficients>, timegrid: Vec<f64>, grid: Arc<Grid>) -> Result<Self> {
        let n = markets.len();
        if n == 0 {
            return Err(Error::Domain("a game needs at least one market".into()));
        }
        if timegrid.len() < 2 || timegrid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("timegrid must be strictly increasing".into()));
        }
        for m in &markets {
            if m.b_row.len() != n {
                return Err(Error::Domain(format!(
                    "each market needs {n} coupling operators"
                )));
            }
            m.validate(&timegrid)?;
        }
        Ok(Self {
            n,
            markets,
            timegrid,
            grid,
        })
    }

    pub fn horizon(&self) -> (f64, f64) {
        (self.timegrid[0], *self.timegrid.last().unwrap())
    }

    /// Trapezoid weights on the timegrid.
    pub fn time_weights(&self) -> Vec<f64> {
        time_weights(&self.timegrid)
    }
}

pub(crate) fn time_weights(times: &[f64]) -> Vec<f64> {
    let m = times.len();
    let mut w = vec![0.0; m];
    for k in 0..m - 1 {
        let h = times[k + 1] - times[k];
        w[k] += 0.5 * h;
        w[k + 1] += 0.5 * h;
    }
    w
}

/// State trajectory of one market on the timegrid.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<GridFn>,
}

/// Integrates X′ = A(t)X + Σⱼ B_ij(t) uⱼ + f(t), X(s) = ξ with classical RK4.
///
/// Operator samples at half-steps come from linear interpolation of the
/// families; the forcing is interpolated the same way.
pub fn solve_state_forward(
    coeffs: &MarketCoefficients,
    u: &DensityProfile,
    timegrid: &[f64],
) -> Result<StateTrajectory> {
    if u.n() != coeffs.b_row.len() {
        return Err(Error::Domain(format!(
            "density profile has {} markets, expected {}",
            u.n(),
            coeffs.b_row.len()
        )));
    }
    let grid = coeffs.xi.grid().clone();
    let m = timegrid.len() - 1;

    // Σⱼ B_ij(t) uⱼ sampled on the timegrid (u is constant in t)
    let mut bu: Vec<Array1<f64>> = Vec::with_capacity(m + 1);
    for k in 0..=m {
        let mut acc = Array1::zeros(grid.len());
        for (j, fam) in coeffs.b_row.iter().enumerate() {
            acc += &fam.op_at_index(k).apply_values(u.component(j).values());
        }
        acc += coeffs.forcing[k].values();
        bu.push(acc);
    }
    let rhs_interp = |k: usize, theta: f64, x: &Array1<f64>| -> Array1<f64> {
        let mut out = coeffs.a.apply_interp(k, theta, x);
        if theta == 0.0 {
            out += &bu[k];
        } else if theta == 1.0 {
            out += &bu[k + 1];
        } else {
            out += &(&bu[k] * (1.0 - theta));
            out += &(&bu[k + 1] * theta);
        }
        out
    };

    let mut states = Vec::with_capacity(m + 1);
    states.push(coeffs.xi.clone());
    let mut x = coeffs.xi.values().clone();
    for k in 0..m {
        let h = timegrid[k + 1] - timegrid[k];
        let k1 = rhs_interp(k, 0.0, &x);
        let k2 = rhs_interp(k, 0.5, &(&x + &(0.5 * h * &k1)));
        let k3 = rhs_interp(k, 0.5, &(&x + &(0.5 * h * &k2)));
        let k4 = rhs_interp(k, 1.0, &(&x + &(h * &k3)));
        x = &x + &((h / 6.0) * (&k1 + &(2.0 * &k2) + &(2.0 * &k3) + &k4));
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                time: timegrid[k + 1],
            });
        }
        states.push(GridFn::new(grid.clone(), x.clone())?);
    }
    Ok(StateTrajectory {
        times: timegrid.to_vec(),
        states,
    })
}

/// Integration method for the backward operator equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardMethod {
    Rk4,
    /// Fixed-point iteration on the integral form, split into windows of
    /// width ⅓‖A‖⁻¹ with per-window tolerance 1e-12.
    Picard {
        /// Internal timegrid refinement for the cumulative quadrature.
        refine: usize,
    },
}

/// Drift action per time node, with a fast path for scalar multiples of the
/// identity so Y·A avoids dense products.
enum DriftAction {
    Zero,
    Scale(Vec<f64>),
    Dense(Vec<Array2<f64>>),
}

impl DriftAction {
    fn from_family(a: &TimeOpFamily) -> Self {
        let scales: Option<Vec<f64>> = a.ops().iter().map(|op| op.as_scaled_identity()).collect();
        match scales {
            Some(cs) if cs.iter().all(|c| *c == 0.0) => DriftAction::Zero,
            Some(cs) => DriftAction::Scale(cs),
            None => DriftAction::Dense(a.ops().iter().map(|op| op.action_matrix()).collect()),
        }
    }

    /// Y·A at segment k, interpolation fraction theta.
    fn right_multiply(&self, y: &Array2<f64>, k: usize, theta: f64) -> Array2<f64> {
        match self {
            DriftAction::Zero => Array2::zeros(y.raw_dim()),
            DriftAction::Scale(cs) => {
                let c = cs[k] * (1.0 - theta) + cs[(k + 1).min(cs.len() - 1)] * theta;
                y * c
            }
            DriftAction::Dense(ms) => {
                if theta == 0.0 {
                    y.dot(&ms[k])
                } else if theta == 1.0 {
                    y.dot(&ms[k + 1])
                } else {
                    let a = &ms[k] * (1.0 - theta) + &(&ms[k + 1] * theta);
                    y.dot(&a)
                }
            }
        }
    }
}

fn interp_matrices(ms: &[Array2<f64>], k: usize, theta: f64) -> Array2<f64> {
    if theta == 0.0 {
        ms[k].clone()
    } else if theta == 1.0 {
        ms[k + 1].clone()
    } else {
        &ms[k] * (1.0 - theta) + &(&ms[k + 1] * theta)
    }
}

/// Solves Y′ = −(E(t) + Y A(t)), Y(T) = G on the family timegrid.
///
/// Returns the strong solution sampled at the timegrid nodes; `Rk4` steps the
/// matrix ODE backward, `Picard` iterates the defining integral identity
/// Y(t)η = Gη + ∫ₜᵀ (E η + Y A η) dτ to a fixed point.
pub fn solve_operator_backward(
    e: &TimeOpFamily,
    a: &TimeOpFamily,
    g: &LinOp,
    method: BackwardMethod,
) -> Result<TimeOpFamily> {
    if e.times().len() != a.times().len()
        || e.times()
            .iter()
            .zip(a.times().iter())
            .any(|(x, y)| (x - y).abs() > 1e-12 * (1.0 + y.abs()))
    {
        return Err(Error::Domain("E and A families must share a timegrid".into()));
    }
    let grid = g.grid().clone();
    let times = e.times().to_vec();
    match method {
        BackwardMethod::Rk4 => backward_rk4(e, a, g, &grid, &times),
        BackwardMethod::Picard { refine } => backward_picard(e, a, g, &grid, &times, refine.max(1)),
    }
}

fn backward_rk4(
    e: &TimeOpFamily,
    a: &TimeOpFamily,
    g: &LinOp,
    grid: &Arc<Grid>,
    times: &[f64],
) -> Result<TimeOpFamily> {
    let m = times.len() - 1;
    let e_mats: Vec<Array2<f64>> = e.ops().iter().map(|op| op.action_matrix()).collect();
    let drift = DriftAction::from_family(a);
    let rhs = |y: &Array2<f64>, k: usize, theta: f64| -> Array2<f64> {
        let mut out = interp_matrices(&e_mats, k, theta);
        out += &drift.right_multiply(y, k, theta);
        out.mapv_inplace(|v| -v);
        out
    };
    let mut y = g.action_matrix();
    let mut samples = vec![Array2::zeros((grid.len(), grid.len())); m + 1];
    samples[m] = y.clone();
    for k in (0..m).rev() {
        let h = times[k + 1] - times[k]; // step backward by h
        let k1 = rhs(&y, k, 1.0);
        let k2 = rhs(&(&y - &(0.5 * h * &k1)), k, 0.5);
        let k3 = rhs(&(&y - &(0.5 * h * &k2)), k, 0.5);
        let k4 = rhs(&(&y - &(h * &k3)), k, 0.0);
        y = &y - &((h / 6.0) * (&k1 + &(2.0 * &k2) + &(2.0 * &k3) + &k4));
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: times[k] });
        }
        samples[k] = y.clone();
    }
    wrap_backward_samples(grid, times, samples)
}

fn backward_picard(
    e: &TimeOpFamily,
    a: &TimeOpFamily,
    g: &LinOp,
    grid: &Arc<Grid>,
    times: &[f64],
    refine: usize,
) -> Result<TimeOpFamily> {
    let n = grid.len();
    let coarse_m = times.len() - 1;
    // refined timegrid; coarse nodes are every `refine`-th fine node
    let mut fine_times = Vec::with_capacity(coarse_m * refine + 1);
    for k in 0..coarse_m {
        for r in 0..refine {
            let theta = r as f64 / refine as f64;
            fine_times.push(times[k] * (1.0 - theta) + times[k + 1] * theta);
        }
    }
    fine_times.push(times[coarse_m]);
    let fm = fine_times.len() - 1;

    let e_mats: Vec<Array2<f64>> = e.ops().iter().map(|op| op.action_matrix()).collect();
    let drift = DriftAction::from_family(a);
    let fine_e = |idx: usize| -> Array2<f64> {
        let (k, theta) = fine_to_coarse(idx, refine, coarse_m);
        interp_matrices(&e_mats, k, theta)
    };
    let fine_ya = |y: &Array2<f64>, idx: usize| -> Array2<f64> {
        let (k, theta) = fine_to_coarse(idx, refine, coarse_m);
        drift.right_multiply(y, k, theta)
    };

    // window width from the contraction argument: ΔT = ⅓ ‖A‖⁻¹
    let a_norm = a.sup_norm(200_000)?;
    let window = if a_norm == 0.0 {
        f64::INFINITY
    } else {
        (1.0 / 3.0) / a_norm
    };

    let mut y: Vec<Array2<f64>> = vec![Array2::zeros((n, n)); fm + 1];
    y[fm] = g.action_matrix();

    let mut hi = fm; // right end of the current window (fine index)
    while hi > 0 {
        let t_hi = fine_times[hi];
        let mut lo = hi;
        while lo > 0 && t_hi - fine_times[lo - 1] <= window {
            lo -= 1;
        }
        if lo == hi {
            lo = hi - 1;
        }
        // initial guess: terminal value of the window
        for idx in lo..hi {
            y[idx] = y[hi].clone();
        }
        let mut prev_gap = f64::INFINITY;
        let mut grew = 0usize;
        for sweep in 0..500 {
            // integrand at current iterate on [lo, hi]
            let integrands: Vec<Array2<f64>> = (lo..=hi)
                .map(|idx| {
                    let mut v = fine_e(idx);
                    v += &fine_ya(&y[idx], idx);
                    v
                })
                .collect();
            // cumulative trapezoid from the right: Y(t) = Y(t_hi) + ∫ₜ^{t_hi}
            let mut gap: f64 = 0.0;
            let mut acc = y[hi].clone();
            for idx in (lo..hi).rev() {
                let h = fine_times[idx + 1] - fine_times[idx];
                let incr = 0.5 * h * (&integrands[idx - lo] + &integrands[idx + 1 - lo]);
                acc += &incr;
                let d = (&acc - &y[idx]).mapv(|v| v * v).sum().sqrt();
                gap = gap.max(d);
                y[idx] = acc.clone();
            }
            if !gap.is_finite() {
                return Err(Error::Divergence {
                    time: fine_times[lo],
                });
            }
            if gap <= 1e-12 * (1.0 + y[lo].mapv(|v| v * v).sum().sqrt()) {
                break;
            }
            if gap > prev_gap {
                grew += 1;
                if grew > 3 {
                    return Err(Error::Internal(
                        "picard iteration failed to contract".into(),
                    ));
                }
            } else {
                grew = 0;
            }
            prev_gap = gap;
            if sweep == 499 {
                return Err(Error::Internal(
                    "picard iteration exceeded the sweep limit".into(),
                ));
            }
        }
        hi = lo;
    }

    let samples: Vec<Array2<f64>> = (0..=coarse_m).map(|k| y[k * refine].clone()).collect();
    wrap_backward_samples(grid, times, samples)
}

fn fine_to_coarse(idx: usize, refine: usize, coarse_m: usize) -> (usize, f64) {
    let k = (idx / refine).min(coarse_m - 1);
    let r = idx - k * refine;
    (k, r as f64 / refine as f64)
}

fn wrap_backward_samples(
    grid: &Arc<Grid>,
    times: &[f64],
    samples: Vec<Array2<f64>>,
) -> Result<TimeOpFamily> {
    let ops = samples
        .into_iter()
        .map(|m| LinOp::from_action_matrix(grid.clone(), m).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    TimeOpFamily::new(times.to_vec(), ops)
}

/// Sup over the timegrid of the weighted Frobenius distance between two
/// families. The weighted Frobenius norm of √D·M·D^{-1/2} upper-bounds the
/// operator norm in the weighted metric, so this is a conservative distance.
pub fn family_distance_fro(y1: &TimeOpFamily, y2: &TimeOpFamily) -> Result<f64> {
    if y1.times().len() != y2.times().len() {
        return Err(Error::Domain("family lengths differ".into()));
    }
    let w = y1.ops()[0].grid().weights().to_vec();
    let mut sup: f64 = 0.0;
    for (a, b) in y1.ops().iter().zip(y2.ops().iter()) {
        let ma = a.action_matrix();
        let mb = b.action_matrix();
        let mut s = 0.0;
        for i in 0..w.len() {
            for j in 0..w.len() {
                let d = (ma[[i, j]] - mb[[i, j]]) * (w[i] / w[j]).sqrt();
                s += d * d;
            }
        }
        sup = sup.max(s.sqrt());
    }
    Ok(sup)
}

/// Weighted Frobenius distance of one family sample to a reference operator.
pub fn op_distance_fro(a: &LinOp, b: &LinOp) -> f64 {
    let w = a.grid().weights();
    let ma = a.action_matrix();
    let mb = b.action_matrix();
    let mut s = 0.0;
    for i in 0..w.len() {
        for j in 0..w.len() {
            let d = (ma[[i, j]] - mb[[i, j]]) * (w[i] / w[j]).sqrt();
            s += d * d;
        }
    }
    s.sqrt()
}

/// V̂ = α + ∫ (E(t) X(t) + F(t) u) dt + G X(T), trapezoid in t.
pub fn value_function_direct(
    coeffs: &MarketCoefficients,
    x: &StateTrajectory,
    u_own: &GridFn,
) -> Result<GridFn> {
    let grid = coeffs.alpha.grid().clone();
    let wt = time_weights(&x.times);
    let mut acc = coeffs.alpha.values().clone();
    for (k, w) in wt.iter().enumerate() {
        acc += &(*w * &coeffs.e.op_at_index(k).apply_values(x.states[k].values()));
        acc += &(*w * &coeffs.f_payoff.op_at_index(k).apply_values(u_own.values()));
    }
    acc += &coeffs.g.apply_values(x.states.last().unwrap().values());
    GridFn::new(grid, acc)
}

/// V̂ = α + Y(s)ξ + ∫Y f dt + ∫Y Σⱼ B uⱼ dt + ∫F u dt, trapezoid in t.
pub fn value_function_via_y(
    coeffs: &MarketCoefficients,
    y: &TimeOpFamily,
    u: &DensityProfile,
    own_index: usize,
) -> Result<GridFn> {
    let grid = coeffs.alpha.grid().clone();
    let wt = time_weights(y.times());
    let mut acc = coeffs.alpha.values().clone();
    acc += &y.op_at_index(0).apply_values(coeffs.xi.values());
    for (k, w) in wt.iter().enumerate() {
        let yk = y.op_at_index(k);
        acc += &(*w * &yk.apply_values(coeffs.forcing[k].values()));
        let mut bu = Array1::zeros(grid.len());
        for (j, fam) in coeffs.b_row.iter().enumerate() {
            bu += &fam.op_at_index(k).apply_values(u.component(j).values());
        }
        acc += &(*w * &yk.apply_values(&bu));
        acc += &(*w
            * &coeffs
                .f_payoff
                .op_at_index(k)
                .apply_values(u.component(own_index).values()));
    }
    GridFn::new(grid, acc)
}

/// Uniform timegrid with `steps` intervals on [s, t_end].
pub fn uniform_timegrid(s: f64, t_end: f64, steps: usize) -> Result<Vec<f64>> {
    if !(t_end > s) || steps == 0 {
        return Err(Error::Domain(format!(
            "invalid horizon [{s}, {t_end}] with {steps} steps"
        )));
    }
    let h = (t_end - s) / steps as f64;
    Ok((0..=steps)
        .map(|k| if k == steps { t_end } else { s + h * k as f64 })
        .collect())
}
