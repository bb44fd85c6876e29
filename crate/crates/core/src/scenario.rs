//! Scenario configuration: a JSON schema of closed-form coefficient
//! expressions, the builtin scenario registry, and construction of game
//! specifications from configs.
//!
//! Coefficients are referenced by identifier (`w2_cosine_kernel`,
//! `multiplication_by_x`, `rankone_aggregate`, …) plus numeric parameters;
//! no code is ever embedded in a config.

use crate::dynamics::{uniform_timegrid, GameSpec, MarketCoefficients, TimeOpFamily};
use crate::error::{Error, Mode, Result};
use crate::function_space::{make_grid, sample, Grid, GridFn, QuadratureRule};
use crate::operators::LinOp;
use crate::stability::{CoefficientDeltas, DecaySchedule, PerturbationSchedule};
use crate::vi_assembly::CournotParams;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Closed-form scalar function of x, referenced by identifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case")]
pub enum FnExpr {
    Constant { value: f64 },
    /// amplitude·x
    IdentityX { #[serde(default = "one")] amplitude: f64 },
    /// amplitude·sin(πx)
    SinPi { #[serde(default = "one")] amplitude: f64 },
    /// amplitude·cos(πx)
    CosPi { #[serde(default = "one")] amplitude: f64 },
    /// amplitude·exp(−1/(1−s²)) with s the rescaled coordinate on (a,b)
    Bump { #[serde(default = "one")] amplitude: f64 },
    /// Σ terms
    Sum { terms: Vec<FnExpr> },
}

fn one() -> f64 {
    1.0
}

impl FnExpr {
    pub fn constant(value: f64) -> Self {
        FnExpr::Constant { value }
    }

    pub fn sample_on(&self, grid: &Arc<Grid>) -> Result<GridFn> {
        match self {
            FnExpr::Constant { value } => Ok(GridFn::constant(grid.clone(), *value)),
            FnExpr::IdentityX { amplitude } => sample(|x| amplitude * x, grid),
            FnExpr::SinPi { amplitude } => sample(|x| amplitude * (PI * x).sin(), grid),
            FnExpr::CosPi { amplitude } => sample(|x| amplitude * (PI * x).cos(), grid),
            FnExpr::Bump { amplitude } => Ok(crate::stability::bump(grid).scale(*amplitude)),
            FnExpr::Sum { terms } => {
                let mut acc = GridFn::zeros(grid.clone());
                for t in terms {
                    acc = acc.axpy(1.0, &t.sample_on(grid)?)?;
                }
                Ok(acc)
            }
        }
    }
}

/// Closed-form operator expression, referenced by identifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpExpr {
    Zero,
    ScaledIdentity { c: f64 },
    /// W₁: multiplication by the coordinate.
    MultiplicationByX,
    Multiplication { of: FnExpr },
    /// scale·cos(π(x−y)) kernel.
    W2CosineKernel { #[serde(default = "two")] scale: f64 },
    /// F: g ↦ ∫ y g(y) dy as a constant function (rank-one 1 ⊗ x).
    RankoneAggregate,
    RankOne { phi: FnExpr, psi: FnExpr },
    Scaled { c: f64, of: Box<OpExpr> },
    Sum { terms: Vec<OpExpr> },
    /// outer ∘ inner.
    Compose { outer: Box<OpExpr>, inner: Box<OpExpr> },
}

fn two() -> f64 {
    2.0
}

impl OpExpr {
    pub fn build(&self, grid: &Arc<Grid>) -> Result<LinOp> {
        match self {
            OpExpr::Zero => Ok(LinOp::zero(grid.clone())),
            OpExpr::ScaledIdentity { c } => Ok(LinOp::scaled_identity(grid.clone(), *c)),
            OpExpr::MultiplicationByX => Ok(LinOp::multiplication(sample(|x| x, grid)?)),
            OpExpr::Multiplication { of } => Ok(LinOp::multiplication(of.sample_on(grid)?)),
            OpExpr::W2CosineKernel { scale } => Ok(LinOp::kernel_from_fn(grid.clone(), |x, y| {
                scale * (PI * (x - y)).cos()
            })),
            OpExpr::RankoneAggregate => LinOp::rank_one(
                GridFn::constant(grid.clone(), 1.0),
                sample(|x| x, grid)?,
            ),
            OpExpr::RankOne { phi, psi } => {
                LinOp::rank_one(phi.sample_on(grid)?, psi.sample_on(grid)?)
            }
            OpExpr::Scaled { c, of } => Ok(LinOp::scale(*c, of.build(grid)?)),
            OpExpr::Sum { terms } => LinOp::sum(
                terms
                    .iter()
                    .map(|t| t.build(grid))
                    .collect::<Result<Vec<_>>>()?,
            ),
            OpExpr::Compose { outer, inner } => {
                LinOp::compose(outer.build(grid)?, inner.build(grid)?)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeConfig {
    pub s: f64,
    pub t_end: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketConfig {
    pub a_op: OpExpr,
    pub b_ops: Vec<OpExpr>,
    pub e_op: OpExpr,
    pub f_op: OpExpr,
    pub g_op: OpExpr,
    pub forcing: FnExpr,
    pub xi: FnExpr,
    pub alpha: FnExpr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default)]
    pub eps0: Option<f64>,
    pub tol: f64,
    pub max_iters: usize,
    #[serde(default)]
    pub seed: u64,
    /// Optional initial iterate shape; sampled, then projected onto the
    /// admissible density set. Defaults to the uniform density.
    #[serde(default)]
    pub initial: Option<FnExpr>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps0: None,
            tol: 1e-9,
            max_iters: 200_000,
            seed: 0,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub k_max: usize,
    pub eps1_c: f64,
    pub eps2_c: f64,
    #[serde(default)]
    pub deltas: CoefficientDeltas,
    /// Required bound on the final gaps.
    #[serde(default = "default_final_gap")]
    pub final_gap: f64,
}

fn default_final_gap() -> f64 {
    1e-2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiecewiseConfig {
    /// Interior breakpoints strictly inside (s, t_end).
    pub breakpoints: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeMapConfig {
    pub sigma2: SweepRange,
    pub sigma3: SweepRange,
    pub sigma4: SweepRange,
    /// |ς₅| used at ±: the map is evaluated at ς₅ = +value and −value.
    pub sigma5: f64,
    pub grid_nodes: usize,
    pub time_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRange {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl SweepRange {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        let h = (self.hi - self.lo) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.lo + h * i as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Example31,
    Cournot,
    Custom,
}

/// Parameters of the linear-demand scenario in config form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CournotConfig {
    pub sigma0: FnExpr,
    pub xi: FnExpr,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub sigma4: f64,
    pub sigma5: f64,
    pub sigma6: FnExpr,
    pub sigma7: FnExpr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub mode: Mode,
    pub grid: GridConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub cournot: Option<CournotConfig>,
    #[serde(default)]
    pub markets: Vec<MarketConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub stability: Option<StabilityConfig>,
    #[serde(default)]
    pub piecewise: Option<PiecewiseConfig>,
    #[serde(default)]
    pub regime_map: Option<RegimeMapConfig>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid.b > self.grid.a) || self.grid.n < 2 {
            return Err(Error::Config("invalid grid block".into()));
        }
        if !(self.time.t_end > self.time.s) || self.time.steps == 0 {
            return Err(Error::Config("invalid time block".into()));
        }
        if self.solver.tol <= 0.0 || self.solver.max_iters == 0 {
            return Err(Error::Config("invalid solver block".into()));
        }
        match self.scenario {
            ScenarioKind::Example31 => {
                if self.beta.is_none() {
                    return Err(Error::Config("example31 requires beta".into()));
                }
            }
            ScenarioKind::Cournot => {
                if self.cournot.is_none() {
                    return Err(Error::Config("cournot requires its parameter block".into()));
                }
            }
            ScenarioKind::Custom => {
                if self.markets.is_empty() {
                    return Err(Error::Config("custom scenario requires markets".into()));
                }
                let n = self.markets.len();
                if self.markets.iter().any(|m| m.b_ops.len() != n) {
                    return Err(Error::Config(
                        "each market must provide one coupling operator per market".into(),
                    ));
                }
            }
        }
        if let Some(pw) = &self.piecewise {
            let mut prev = self.time.s;
            for &b in &pw.breakpoints {
                if !(b > prev && b < self.time.t_end) {
                    return Err(Error::Config(
                        "piecewise breakpoints must be strictly increasing inside the horizon"
                            .into(),
                    ));
                }
                prev = b;
            }
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Arc<Grid>> {
        make_grid(
            self.grid.a,
            self.grid.b,
            self.grid.n,
            QuadratureRule::CompositeTrapezoid,
        )
    }

    /// Builds the game spec over the given sub-horizon (defaults to the whole
    /// configured horizon).
    pub fn build_spec_on(&self, s: f64, t_end: f64) -> Result<GameSpec> {
        self.validate()?;
        let grid = self.build_grid()?;
        let frac = (t_end - s) / (self.time.t_end - self.time.s);
        let steps = ((self.time.steps as f64 * frac).round() as usize).max(8);
        let timegrid = uniform_timegrid(s, t_end, steps)?;
        match self.scenario {
            ScenarioKind::Example31 => {
                example31_spec_on(self.beta.unwrap(), grid, timegrid)
            }
            ScenarioKind::Cournot => {
                let params = self.cournot_params(&grid)?;
                crate::vi_assembly::build_cournot_spec(&params, grid, timegrid)
            }
            ScenarioKind::Custom => {
                let mut markets = Vec::with_capacity(self.markets.len());
                for m in &self.markets {
                    markets.push(MarketCoefficients {
                        a: TimeOpFamily::constant(timegrid.clone(), m.a_op.build(&grid)?)?,
                        b_row: m
                            .b_ops
                            .iter()
                            .map(|b| TimeOpFamily::constant(timegrid.clone(), b.build(&grid)?))
                            .collect::<Result<Vec<_>>>()?,
                        e: TimeOpFamily::constant(timegrid.clone(), m.e_op.build(&grid)?)?,
                        f_payoff: TimeOpFamily::constant(
                            timegrid.clone(),
                            m.f_op.build(&grid)?,
                        )?,
                        g: m.g_op.build(&grid)?,
                        forcing: vec![m.forcing.sample_on(&grid)?; timegrid.len()],
                        xi: m.xi.sample_on(&grid)?,
                        alpha: m.alpha.sample_on(&grid)?,
                    });
                }
                GameSpec::new(markets, timegrid, grid)
            }
        }
    }

    pub fn build_spec(&self) -> Result<GameSpec> {
        self.build_spec_on(self.time.s, self.time.t_end)
    }

    pub fn cournot_params(&self, grid: &Arc<Grid>) -> Result<CournotParams> {
        let c = self
            .cournot
            .as_ref()
            .ok_or_else(|| Error::Config("missing cournot block".into()))?;
        Ok(CournotParams {
            a: self.grid.a,
            b: self.grid.b,
            t_horizon: self.time.t_end - self.time.s,
            sigma0: c.sigma0.sample_on(grid)?,
            xi: c.xi.sample_on(grid)?,
            sigma1: c.sigma1,
            sigma2: c.sigma2,
            sigma3: c.sigma3,
            sigma4: c.sigma4,
            sigma5: c.sigma5,
            sigma6: c.sigma6.sample_on(grid)?,
            sigma7: c.sigma7.sample_on(grid)?,
        })
    }

    /// Initial iterate from the solver block, projected onto the densities.
    pub fn initial_profile(
        &self,
        grid: &Arc<Grid>,
        n: usize,
    ) -> Result<Option<crate::function_space::DensityProfile>> {
        match &self.solver.initial {
            None => Ok(None),
            Some(expr) => {
                let shape = expr.sample_on(grid)?;
                let comps = vec![shape; n];
                let (profile, _) = crate::density_projection::project_density(
                    &comps,
                    &vec![0.0; n],
                    &vec![1.0; n],
                )?;
                Ok(Some(profile))
            }
        }
    }

    pub fn perturbation_schedule(&self, n: usize) -> Option<PerturbationSchedule> {
        self.stability.as_ref().map(|s| PerturbationSchedule {
            k_max: s.k_max,
            eps1: DecaySchedule { c: s.eps1_c },
            eps2: vec![DecaySchedule { c: s.eps2_c }; n],
            deltas: s.deltas.clone(),
        })
    }

    /// Segment horizons for a piecewise run: [s, b₁], (b₁, b₂], …, (b_l, T].
    pub fn segment_bounds(&self) -> Vec<(f64, f64)> {
        let mut points = vec![self.time.s];
        if let Some(pw) = &self.piecewise {
            points.extend(pw.breakpoints.iter().copied());
        }
        points.push(self.time.t_end);
        points.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// The closed-form benchmark game: single market on [0,1] with kernel
/// interaction, known equilibrium π·cos(πx)∨0, multiplier −β/3 at step ⅓,
/// and aggregate payoff β.
pub fn example31_spec(beta: f64, grid_nodes: usize, time_steps: usize) -> Result<GameSpec> {
    let grid = make_grid(0.0, 1.0, grid_nodes, QuadratureRule::CompositeTrapezoid)?;
    let timegrid = uniform_timegrid(0.0, 1.0, time_steps)?;
    example31_spec_on(beta, grid, timegrid)
}

fn example31_spec_on(beta: f64, grid: Arc<Grid>, timegrid: Vec<f64>) -> Result<GameSpec> {
    let w2 = LinOp::kernel_from_fn(grid.clone(), |x, y| 2.0 * (PI * (x - y)).cos());
    let market = MarketCoefficients {
        a: TimeOpFamily::constant(timegrid.clone(), LinOp::zero(grid.clone()))?,
        b_row: vec![TimeOpFamily::constant(
            timegrid.clone(),
            LinOp::scaled_identity(grid.clone(), -1.0),
        )?],
        e: TimeOpFamily::constant(timegrid.clone(), LinOp::scale(2.0, w2.clone()))?,
        f_payoff: TimeOpFamily::constant(timegrid.clone(), LinOp::identity(grid.clone()))?,
        g: LinOp::scale(-2.0, w2),
        forcing: vec![sample(|x| 0.5 * (PI * x).sin(), &grid)?; timegrid.len()],
        xi: GridFn::constant(grid.clone(), 1.0),
        // offset chosen so that V̂ = Pû + Q = β on the equilibrium support,
        // pinning the closed-form chain û = πcos(πx)∨0, λ = −β/3, payoff β
        alpha: sample(
            |x| beta - 1.5 * PI * (PI * x).cos() - 0.5 * (PI * x).sin(),
            &grid,
        )?,
    };
    GameSpec::new(vec![market], timegrid, grid)
}

/// Builtin scenario registry.
pub fn builtin_names() -> &'static [&'static str] {
    &[
        "example31",
        "cournot_nne",
        "cournot_mne",
        "regime_map",
        "stability_nne",
        "stability_mne",
        "piecewise",
    ]
}

pub fn builtin_description(name: &str) -> Option<&'static str> {
    match name {
        "example31" => Some(
            "single-market kernel-interaction benchmark with closed-form equilibrium pi*cos(pi x) v 0",
        ),
        "cournot_nne" => Some(
            "linear-demand market game, competitive regime (positive definite operator)",
        ),
        "cournot_mne" => Some(
            "linear-demand market game, cooperative regime (negative definite operator)",
        ),
        "regime_map" => Some(
            "sweep of (sigma2, sigma3, sigma4) classifying competitive/cooperative admissibility",
        ),
        "stability_nne" => Some(
            "perturbation experiment around the competitive equilibrium with a 1/k schedule",
        ),
        "stability_mne" => Some(
            "perturbation experiment around the cooperative equilibrium with a 1/k schedule",
        ),
        "piecewise" => Some(
            "two-segment horizon split of the competitive scenario, solved segment by segment",
        ),
        _ => None,
    }
}

/// Builds a builtin config by name.
pub fn builtin_config(name: &str) -> Option<ScenarioConfig> {
    let cournot_base = |sigma4: f64, sigma5: f64| CournotConfig {
        sigma0: FnExpr::constant(1.5),
        xi: FnExpr::constant(1.0),
        sigma1: 0.0,
        sigma2: 0.5,
        sigma3: 2.0,
        sigma4,
        sigma5,
        sigma6: FnExpr::constant(1.0),
        sigma7: FnExpr::constant(1.0),
    };
    match name {
        "example31" => Some(ScenarioConfig {
            scenario: ScenarioKind::Example31,
            mode: Mode::Nne,
            grid: GridConfig {
                a: 0.0,
                b: 1.0,
                n: 401,
            },
            time: TimeConfig {
                s: 0.0,
                t_end: 1.0,
                steps: 200,
            },
            beta: Some(1.0),
            cournot: None,
            markets: vec![],
            solver: SolverConfig {
                eps0: Some(1.0 / 3.0),
                tol: 1e-9,
                max_iters: 100_000,
                seed: 0,
                initial: None,
            },
            stability: None,
            piecewise: None,
            regime_map: None,
            output_dir: None,
        }),
        "cournot_nne" => Some(ScenarioConfig {
            scenario: ScenarioKind::Cournot,
            mode: Mode::Nne,
            grid: GridConfig {
                a: 1.0,
                b: 2.0,
                n: 401,
            },
            time: TimeConfig {
                s: 0.0,
                t_end: 1.0,
                steps: 200,
            },
            beta: None,
            cournot: Some(cournot_base(0.0, 2.0)),
            markets: vec![],
            solver: SolverConfig::default(),
            stability: None,
            piecewise: None,
            regime_map: None,
            output_dir: None,
        }),
        "cournot_mne" => {
            let mut cfg = builtin_config("cournot_nne")?;
            cfg.mode = Mode::Mne;
            cfg.cournot = Some(cournot_base(-0.5, -0.5));
            Some(cfg)
        }
        "regime_map" => {
            let mut cfg = builtin_config("cournot_nne")?;
            cfg.grid = GridConfig {
                a: 0.5,
                b: 1.0,
                n: 81,
            };
            cfg.regime_map = Some(RegimeMapConfig {
                sigma2: SweepRange {
                    lo: 0.1,
                    hi: 1.0,
                    count: 10,
                },
                sigma3: SweepRange {
                    lo: 0.5,
                    hi: 4.0,
                    count: 10,
                },
                sigma4: SweepRange {
                    lo: -20.0,
                    hi: 20.0,
                    count: 10,
                },
                sigma5: 4.0,
                grid_nodes: 81,
                time_steps: 50,
            });
            Some(cfg)
        }
        "stability_nne" => {
            let mut cfg = builtin_config("cournot_nne")?;
            cfg.grid.n = 201;
            cfg.stability = Some(StabilityConfig {
                k_max: 100,
                eps1_c: 0.1,
                eps2_c: 0.05,
                deltas: CoefficientDeltas {
                    forcing: 0.1,
                    xi: 0.1,
                    ..Default::default()
                },
                final_gap: 1e-2,
            });
            Some(cfg)
        }
        "stability_mne" => {
            let mut cfg = builtin_config("cournot_mne")?;
            cfg.grid.n = 201;
            cfg.stability = Some(StabilityConfig {
                k_max: 100,
                eps1_c: 0.1,
                eps2_c: 0.05,
                deltas: CoefficientDeltas {
                    forcing: 0.1,
                    xi: 0.1,
                    ..Default::default()
                },
                final_gap: 1e-2,
            });
            Some(cfg)
        }
        "piecewise" => {
            let mut cfg = builtin_config("cournot_nne")?;
            cfg.piecewise = Some(PiecewiseConfig {
                breakpoints: vec![0.5],
            });
            Some(cfg)
        }
        _ => None,
    }
}
