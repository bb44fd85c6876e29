//! Assembly of the variational-inequality data (P, Q) from a game
//! specification, the spectral certificate with the admissible step size, and
//! the linear-demand market (Cournot) scenario builder with its
//! competition/cooperation regime classifier.
//!
//! Per market the backward companion Y eliminates the state: the payoff field
//! becomes V = P u + Q with diagonal blocks ∫(Y B_ii + F) dt, off-diagonal
//! blocks ∫ Y B_ij dt, and Q_i = α_i + Y_i(s)ξ_i + ∫ Y_i f_i dt. The mixed
//! (cooperative) variant symmetrizes the diagonal: M + M* with
//! M = ∫(Y B_ii + F) dt, which is the derivative of the quadratic payoff.

use crate::dynamics::{
    solve_operator_backward, BackwardMethod, GameSpec, TimeOpFamily,
};
use crate::error::{Error, Mode, Result};
use crate::function_space::{sample, Grid, GridFn};
use crate::operators::{definiteness_bounds, op_norm, BlockOp, LinOp, OpKind};
use ndarray::{Array1, Array2};
use std::sync::Arc;

/// Assembled VI data on Hⁿ with the spectral certificate.
#[derive(Debug, Clone)]
pub struct AssembledVI {
    pub p: BlockOp,
    pub q: Vec<GridFn>,
    /// Definiteness margin: ⟨PZ,Z⟩ ≥ eps_p‖Z‖² (nne) or ≤ −eps_p‖Z‖² (mne).
    pub eps_p: f64,
    pub p_norm: f64,
    /// Iteration step, default eps_p/‖P‖² (midpoint of the admissible range).
    pub eps0: f64,
    pub mode: Mode,
    /// Raw Rayleigh bounds of the symmetrized P.
    pub bounds: (f64, f64),
    /// For the mixed mode: the unsymmetrized payoff operator, so that the
    /// reported value functions are the payoffs ⟨u, J(u)⟩ and not the
    /// first-order field. None means `p` itself is the payoff operator.
    pub p_value: Option<BlockOp>,
}

impl AssembledVI {
    /// Upper end of the admissible open interval (0, 2·eps_p/‖P‖²).
    pub fn eps0_limit(&self) -> f64 {
        2.0 * self.eps_p / (self.p_norm * self.p_norm)
    }

    /// Replaces the step size after validating it against the certificate.
    pub fn with_eps0(mut self, eps0: f64) -> Result<Self> {
        if !(eps0 > 0.0 && eps0 < self.eps0_limit()) {
            return Err(Error::Config(format!(
                "eps0 {eps0} outside the admissible interval (0, {})",
                self.eps0_limit()
            )));
        }
        self.eps0 = eps0;
        Ok(self)
    }
}

/// Right-multiplies an evolved action matrix Y by the action of B, using the
/// structure of B to avoid dense products where possible.
fn compose_action(y: &Array2<f64>, b: &LinOp) -> Array2<f64> {
    let grid = b.grid();
    match b.kind() {
        OpKind::ScaledIdentity(c) => y * *c,
        OpKind::Multiplication(m) => {
            let mut out = y.clone();
            for (j, &mj) in m.values().iter().enumerate() {
                out.column_mut(j).mapv_inplace(|v| v * mj);
            }
            out
        }
        OpKind::RankOne { phi, psi } => {
            // Y·(φ (ψ∘w)ᵀ) = (Yφ)(ψ∘w)ᵀ
            let yphi = y.dot(phi.values());
            let w = grid.weights();
            let n = grid.len();
            let mut out = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    out[[i, j]] = yphi[i] * psi.values()[j] * w[j];
                }
            }
            out
        }
        OpKind::Sum(terms) => {
            let n = grid.len();
            let mut acc = Array2::zeros((n, n));
            for t in terms {
                acc += &compose_action(y, t);
            }
            acc
        }
        OpKind::Composition(outer, inner) => compose_action(&compose_action(y, outer), inner),
        OpKind::Kernel(_) => y.dot(&b.action_matrix()),
    }
}

/// Weighted adjoint of a raw action matrix: D⁻¹ Mᵀ D.
fn adjoint_action(m: &Array2<f64>, w: &[f64]) -> Array2<f64> {
    let n = w.len();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = m[[j, i]] * w[j] / w[i];
        }
    }
    out
}

fn assemble(spec: &GameSpec, mode: Mode) -> Result<AssembledVI> {
    let n = spec.n;
    let grid = spec.grid.clone();
    let wt = spec.time_weights();

    let mut q = Vec::with_capacity(n);
    let mut rows: Vec<Vec<LinOp>> = Vec::with_capacity(n);
    let mut value_rows: Vec<Vec<LinOp>> = Vec::with_capacity(n);
    for market in &spec.markets {
        let y = solve_operator_backward(&market.e, &market.a, &market.g, BackwardMethod::Rk4)?;
        let y_mats: Vec<Array2<f64>> = y.ops().iter().map(|op| op.action_matrix()).collect();

        // Q_i = α + Y(s)ξ + ∫ Y f dt
        let mut qv: Array1<f64> = market.alpha.values().clone();
        qv += &y_mats[0].dot(market.xi.values());
        for (k, w) in wt.iter().enumerate() {
            qv += &(*w * &y_mats[k].dot(market.forcing[k].values()));
        }
        q.push(GridFn::new(grid.clone(), qv)?);

        // blocks: ∫ Y B_ij dt, diagonal plus ∫ F dt (symmetrized for mne)
        let mut row = Vec::with_capacity(n);
        let mut value_row = Vec::with_capacity(n);
        let i = rows.len();
        for (j, b) in market.b_row.iter().enumerate() {
            let mut acc = Array2::zeros((grid.len(), grid.len()));
            for (k, w) in wt.iter().enumerate() {
                acc += &(*w * &compose_action(&y_mats[k], b.op_at_index(k)));
            }
            if j == i {
                for (k, w) in wt.iter().enumerate() {
                    acc += &(*w * &market.f_payoff.op_at_index(k).action_matrix());
                }
                if mode == Mode::Mne {
                    value_row.push(LinOp::from_action_matrix(grid.clone(), acc.clone())?);
                    let adj = adjoint_action(&acc, grid.weights());
                    acc += &adj;
                }
            } else if mode == Mode::Mne {
                value_row.push(LinOp::from_action_matrix(grid.clone(), acc.clone())?);
            }
            row.push(LinOp::from_action_matrix(grid.clone(), acc)?);
        }
        rows.push(row);
        if mode == Mode::Mne {
            value_rows.push(value_row);
        }
    }

    let p = BlockOp::new(rows)?;
    let p_value = if mode == Mode::Mne {
        Some(BlockOp::new(value_rows)?)
    } else {
        None
    };
    let bounds = definiteness_bounds(&p)?;
    let eps_p = match mode {
        Mode::Nne => {
            if bounds.0 <= 1e-8 {
                return Err(Error::Definiteness {
                    lo: bounds.0,
                    hi: bounds.1,
                    mode,
                });
            }
            bounds.0
        }
        Mode::Mne => {
            if bounds.1 >= -1e-8 {
                return Err(Error::Definiteness {
                    lo: bounds.0,
                    hi: bounds.1,
                    mode,
                });
            }
            -bounds.1
        }
    };
    let p_norm = op_norm(&p, 500_000)?;
    let eps0 = eps_p / (p_norm * p_norm);
    Ok(AssembledVI {
        p,
        q,
        eps_p,
        p_norm,
        eps0,
        mode,
        bounds,
        p_value,
    })
}

/// Assembles the noncooperative VI; the certificate requires positive
/// definiteness.
pub fn assemble_nne(spec: &GameSpec) -> Result<AssembledVI> {
    assemble(spec, Mode::Nne)
}

/// Assembles the mixed VI with symmetrized diagonal blocks; the certificate
/// requires negative definiteness.
pub fn assemble_mne(spec: &GameSpec) -> Result<AssembledVI> {
    assemble(spec, Mode::Mne)
}

/// Parameters of the linear-demand market scenario.
///
/// Demand follows X′ = ς₁X − ς₂·(aggregate production) + ς₀ and the price is
/// linear in demand, aggregate production and the density itself; ς₆ is the
/// price offset and ς₇ the unit cost.
#[derive(Debug, Clone)]
pub struct CournotParams {
    pub a: f64,
    pub b: f64,
    pub t_horizon: f64,
    pub sigma0: GridFn,
    pub xi: GridFn,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub sigma4: f64,
    pub sigma5: f64,
    pub sigma6: GridFn,
    pub sigma7: GridFn,
}

impl CournotParams {
    fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(Error::Domain(format!(
                "left endpoint must be positive, got {}",
                self.a
            )));
        }
        if !(self.b > self.a) {
            return Err(Error::Domain("interval must satisfy b > a".into()));
        }
        if !(self.t_horizon > 0.0) {
            return Err(Error::Domain("horizon must be positive".into()));
        }
        Ok(())
    }

    /// θ₁ (ς₁ ≠ 0) or θ₂ (ς₁ = 0), the time-integrated coupling coefficient.
    pub fn theta(&self) -> f64 {
        let t = self.t_horizon;
        if self.sigma1 != 0.0 {
            (self.sigma2 * self.sigma3 / self.sigma1 + self.sigma4) * t
                - self.sigma2 * self.sigma3 / (self.sigma1 * self.sigma1)
                    * ((self.sigma1 * t).exp() - 1.0)
        } else {
            self.sigma4 * t - 0.5 * self.sigma2 * self.sigma3 * t * t
        }
    }

    /// Criterion value (b³−a³)/3·θ + ς₅aT.
    pub fn criterion(&self) -> f64 {
        (self.b.powi(3) - self.a.powi(3)) / 3.0 * self.theta()
            + self.sigma5 * self.a * self.t_horizon
    }

    /// Analytic definiteness margin implied by the criterion, resolved by the
    /// sign of θ. For the competitive operator (ς₅ > 0): ς₅aT when θ ≥ 0,
    /// else the criterion itself. The cooperative operator carries the
    /// symmetrization factor 2 with the inequalities reversed.
    pub fn analytic_margin(&self, mode: Mode) -> f64 {
        let theta = self.theta();
        let edge = self.sigma5 * self.a * self.t_horizon;
        match mode {
            Mode::Nne => {
                if theta >= 0.0 {
                    edge
                } else {
                    self.criterion()
                }
            }
            Mode::Mne => {
                if theta <= 0.0 {
                    -2.0 * edge
                } else {
                    -2.0 * self.criterion()
                }
            }
        }
    }
}

/// Regime classification per the definiteness criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeLabel {
    NneAdmissible,
    MneAdmissible,
    Inconclusive,
}

impl std::fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegimeLabel::NneAdmissible => write!(f, "nne-admissible"),
            RegimeLabel::MneAdmissible => write!(f, "mne-admissible"),
            RegimeLabel::Inconclusive => write!(f, "inconclusive"),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RegimeReport {
    pub theta: f64,
    pub criterion: f64,
    pub label: RegimeLabel,
    /// Numerical Rayleigh bounds of the assembled operator for the queried
    /// mode, when assembly succeeds.
    pub eps_bounds: Option<(f64, f64)>,
}

/// Classifies the market parameters: competitive (unique noncooperative
/// equilibrium), cooperative (unique mixed equilibrium), or inconclusive.
///
/// The ς₅ = 0 case is inconclusive by construction: the operator degenerates
/// to a semidefinite form and the contraction guarantee is lost.
pub fn cournot_regime(
    params: &CournotParams,
    mode: Mode,
    time_steps: usize,
) -> Result<RegimeReport> {
    params.validate()?;
    let theta = params.theta();
    let criterion = params.criterion();
    let label = if params.sigma5 > 0.0 && criterion > 0.0 {
        RegimeLabel::NneAdmissible
    } else if params.sigma5 < 0.0 && criterion < 0.0 {
        RegimeLabel::MneAdmissible
    } else {
        RegimeLabel::Inconclusive
    };
    let eps_bounds = regime_bounds(params, mode, time_steps).ok();
    Ok(RegimeReport {
        theta,
        criterion,
        label,
        eps_bounds,
    })
}

/// Numerically assembles the scenario operator for the given mode on the
/// params' own grid and returns its Rayleigh bounds (without requiring a
/// definiteness certificate).
pub fn regime_bounds(params: &CournotParams, mode: Mode, time_steps: usize) -> Result<(f64, f64)> {
    let grid = params.sigma0.grid().clone();
    let timegrid = crate::dynamics::uniform_timegrid(0.0, params.t_horizon, time_steps)?;
    let spec = build_cournot_spec(params, grid, timegrid)?;
    // same assembly as the solvers, minus the certificate requirement
    let wt = spec.time_weights();
    let market = &spec.markets[0];
    let y = solve_operator_backward(&market.e, &market.a, &market.g, BackwardMethod::Rk4)?;
    let y_mats: Vec<Array2<f64>> = y.ops().iter().map(|op| op.action_matrix()).collect();
    let mut acc = Array2::zeros((spec.grid.len(), spec.grid.len()));
    for (k, w) in wt.iter().enumerate() {
        acc += &(*w * &compose_action(&y_mats[k], market.b_row[0].op_at_index(k)));
        acc += &(*w * &market.f_payoff.op_at_index(k).action_matrix());
    }
    if mode == Mode::Mne {
        let adj = adjoint_action(&acc, spec.grid.weights());
        acc += &adj;
    }
    let p = LinOp::from_action_matrix(spec.grid.clone(), acc)?;
    definiteness_bounds(&p)
}

/// Builds the single-market linear-demand game from its parameters.
///
/// A = ς₁·I, B = −ς₂·F (aggregate production), E = ς₃·W₁, payoff operator
/// ς₄·W₁F + ς₅·W₁, G = 0, forcing ς₀, and α = ∫ W₁(ς₆−ς₇) dt folded from the
/// price offset and unit cost.
pub fn build_cournot_spec(
    params: &CournotParams,
    grid: Arc<Grid>,
    timegrid: Vec<f64>,
) -> Result<GameSpec> {
    params.validate()?;
    if (grid.a() - params.a).abs() > 1e-12 || (grid.b() - params.b).abs() > 1e-12 {
        return Err(Error::Domain("grid interval differs from market interval".into()));
    }
    let x_fn = sample(|x| x, &grid)?;
    let w1 = LinOp::multiplication(x_fn.clone());
    let aggregate = LinOp::rank_one(GridFn::constant(grid.clone(), 1.0), x_fn.clone())?;

    let a_op = LinOp::scaled_identity(grid.clone(), params.sigma1);
    let b_op = LinOp::scale(-params.sigma2, aggregate.clone());
    let e_op = LinOp::scale(params.sigma3, w1.clone());
    let f_op = LinOp::sum(vec![
        LinOp::scale(params.sigma4, LinOp::compose(w1.clone(), aggregate.clone())?),
        LinOp::scale(params.sigma5, w1.clone()),
    ])?;
    let g_op = LinOp::zero(grid.clone());

    // α = T·W₁(ς₆ − ς₇) for time-constant offset and cost
    let alpha = {
        let diff = params.sigma6.axpy(-1.0, &params.sigma7)?;
        crate::operators::apply(&LinOp::scale(params.t_horizon, w1.clone()), &diff)?
    };

    let market = crate::dynamics::MarketCoefficients {
        a: TimeOpFamily::constant(timegrid.clone(), a_op)?,
        b_row: vec![TimeOpFamily::constant(timegrid.clone(), b_op)?],
        e: TimeOpFamily::constant(timegrid.clone(), e_op)?,
        f_payoff: TimeOpFamily::constant(timegrid.clone(), f_op)?,
        g: g_op,
        forcing: vec![params.sigma0.clone(); timegrid.len()],
        xi: params.xi.clone(),
        alpha,
    };
    GameSpec::new(vec![market], timegrid, grid)
}
