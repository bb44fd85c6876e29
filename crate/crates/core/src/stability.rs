//! Perturbation experiments: build perturbed game instances, solve them over
//! the relaxed constraint set (mass 1+ε₁, pointwise floor ε₂), and report the
//! convergence of the perturbed equilibria back to the base equilibrium.
//!
//! Two equivalent solve paths are kept: the affine change of variables
//! v̄ = (v̂ − ε₂)/(1+ε₁) maps the relaxed set onto the base set and shifts the
//! VI data, while the direct path projects with the relaxed floor and mass.
//! Both run on every solve and must agree; disagreement indicates a bug, not
//! a modeling choice.

use crate::dynamics::GameSpec;
use crate::equilibrium::{EquilibriumResult, SolveOptions};
use crate::error::{Error, Mode, Result};
use crate::function_space::{sample, GridFn};
use crate::operators::{op_norm, LinOp};
use crate::vi_assembly::{assemble_mne, assemble_nne, AssembledVI};

/// Decay law c/k for a scalar perturbation magnitude.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct DecaySchedule {
    pub c: f64,
}

impl DecaySchedule {
    pub fn zero() -> Self {
        Self { c: 0.0 }
    }

    pub fn value(&self, k: usize) -> f64 {
        self.c / k as f64
    }
}

/// Which coefficients receive an additive delta, and with what magnitude.
/// Operator coefficients get (c/k)·(multiplication by the bump); grid-function
/// coefficients get (c/k)·bump.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct CoefficientDeltas {
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub e: f64,
    #[serde(default)]
    pub f_payoff: f64,
    #[serde(default)]
    pub g: f64,
    #[serde(default)]
    pub forcing: f64,
    #[serde(default)]
    pub xi: f64,
    #[serde(default)]
    pub alpha: f64,
}

impl CoefficientDeltas {
    /// Does any operator coefficient change (so the VI operator must be
    /// re-certified per k)?
    pub fn perturbs_operator(&self) -> bool {
        self.a != 0.0 || self.b != 0.0 || self.e != 0.0 || self.f_payoff != 0.0 || self.g != 0.0
    }
}

/// Perturbation schedule: constraint relaxations ε₁ₖ (mass) and ε₂ₖ (floor,
/// per market) plus additive coefficient deltas, all decaying like 1/k.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PerturbationSchedule {
    pub k_max: usize,
    pub eps1: DecaySchedule,
    pub eps2: Vec<DecaySchedule>,
    pub deltas: CoefficientDeltas,
}

impl PerturbationSchedule {
    /// Default experiment schedule: ε₁ₖ = 0.1/k, ε₂ₖ = 0.05/k, deltas 0.1/k
    /// on the forcing and the initial demand.
    pub fn default_for(n: usize, k_max: usize) -> Self {
        Self {
            k_max,
            eps1: DecaySchedule { c: 0.1 },
            eps2: vec![DecaySchedule { c: 0.05 }; n],
            deltas: CoefficientDeltas {
                forcing: 0.1,
                xi: 0.1,
                ..Default::default()
            },
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.eps2.len() != n {
            return Err(Error::Domain(format!(
                "schedule has {} floor laws for {n} markets",
                self.eps2.len()
            )));
        }
        if self.eps1.value(1) <= -1.0 {
            return Err(Error::Domain(
                "mass relaxation must satisfy eps1 > -1 for all k".into(),
            ));
        }
        Ok(())
    }
}

/// Smooth compactly supported bump on (a,b), peaking at the midpoint.
pub fn bump(grid: &std::sync::Arc<crate::function_space::Grid>) -> GridFn {
    let (a, b) = (grid.a(), grid.b());
    sample(
        |x| {
            let s = 2.0 * (x - 0.5 * (a + b)) / (b - a);
            if s.abs() < 1.0 {
                (-1.0 / (1.0 - s * s)).exp()
            } else {
                0.0
            }
        },
        grid,
    )
    .expect("bump is finite")
}

/// A perturbed game instance with its constraint relaxations.
#[derive(Debug, Clone)]
pub struct PerturbedInstance {
    pub spec: GameSpec,
    pub eps1: f64,
    pub eps2: Vec<f64>,
    pub k: usize,
}

/// Builds the k-th perturbed instance: every selected coefficient receives an
/// additive delta of magnitude c/k shaped by the bump, and the constraint set
/// parameters ε₁ₖ, ε₂ₖ are attached.
pub fn perturb_spec(
    base: &GameSpec,
    schedule: &PerturbationSchedule,
    k: usize,
) -> Result<PerturbedInstance> {
    if k == 0 || k > schedule.k_max {
        return Err(Error::Domain(format!(
            "k = {k} outside the schedule range 1..={}",
            schedule.k_max
        )));
    }
    schedule.validate(base.n)?;
    let eps1 = schedule.eps1.value(k);
    let eps2: Vec<f64> = schedule.eps2.iter().map(|d| d.value(k)).collect();
    let span = base.grid.span();
    for (i, &e2) in eps2.iter().enumerate() {
        if 1.0 + eps1 <= e2 * span {
            return Err(Error::ScheduleInfeasible {
                k,
                msg: format!(
                    "market {i}: mass {} cannot cover floor mass {}",
                    1.0 + eps1,
                    e2 * span
                ),
            });
        }
    }

    let bump_fn = bump(&base.grid);
    let op_delta = |c: f64| -> Option<LinOp> {
        if c == 0.0 {
            None
        } else {
            Some(LinOp::scale(c / k as f64, LinOp::multiplication(bump_fn.clone())))
        }
    };
    let fn_delta = |c: f64| -> Option<GridFn> {
        if c == 0.0 {
            None
        } else {
            Some(bump_fn.scale(c / k as f64))
        }
    };
    let perturb_family =
        |fam: &crate::dynamics::TimeOpFamily, c: f64| -> Result<crate::dynamics::TimeOpFamily> {
            match op_delta(c) {
                None => Ok(fam.clone()),
                Some(d) => {
                    let ops = fam
                        .ops()
                        .iter()
                        .map(|op| {
                            LinOp::sum(vec![op.as_ref().clone(), d.clone()])
                                .map(std::sync::Arc::new)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    crate::dynamics::TimeOpFamily::new(fam.times().to_vec(), ops)
                }
            }
        };

    let mut markets = Vec::with_capacity(base.n);
    for m in &base.markets {
        let a = perturb_family(&m.a, schedule.deltas.a)?;
        let b_row = m
            .b_row
            .iter()
            .map(|fam| perturb_family(fam, schedule.deltas.b))
            .collect::<Result<Vec<_>>>()?;
        let e = perturb_family(&m.e, schedule.deltas.e)?;
        let f_payoff = perturb_family(&m.f_payoff, schedule.deltas.f_payoff)?;
        let g = match op_delta(schedule.deltas.g) {
            None => m.g.clone(),
            Some(d) => LinOp::sum(vec![m.g.clone(), d])?,
        };
        let forcing = match fn_delta(schedule.deltas.forcing) {
            None => m.forcing.clone(),
            Some(d) => m
                .forcing
                .iter()
                .map(|f| f.axpy(1.0, &d))
                .collect::<Result<Vec<_>>>()?,
        };
        let xi = match fn_delta(schedule.deltas.xi) {
            None => m.xi.clone(),
            Some(d) => m.xi.axpy(1.0, &d)?,
        };
        let alpha = match fn_delta(schedule.deltas.alpha) {
            None => m.alpha.clone(),
            Some(d) => m.alpha.axpy(1.0, &d)?,
        };
        markets.push(crate::dynamics::MarketCoefficients {
            a,
            b_row,
            e,
            f_payoff,
            g,
            forcing,
            xi,
            alpha,
        });
    }
    Ok(PerturbedInstance {
        spec: GameSpec::new(markets, base.timegrid.clone(), base.grid.clone())?,
        eps1,
        eps2,
        k,
    })
}

/// Solves a perturbed instance over the relaxed constraint set.
///
/// Runs both the change-of-variables path and the direct floor/mass path and
/// checks they agree to 1e-8; the direct-path result is returned.
pub fn solve_perturbed(
    instance: &PerturbedInstance,
    mode: Mode,
    opts: &SolveOptions,
    eps0_override: Option<f64>,
) -> Result<EquilibriumResult> {
    let mut vi = match mode {
        Mode::Nne => assemble_nne(&instance.spec)?,
        Mode::Mne => assemble_mne(&instance.spec)?,
    };
    if let Some(eps0) = eps0_override {
        vi = vi.with_eps0(eps0)?;
    }
    solve_perturbed_with(&vi, instance, opts)
}

/// Same as [`solve_perturbed`] but with pre-assembled VI data.
pub fn solve_perturbed_with(
    vi: &AssembledVI,
    instance: &PerturbedInstance,
    opts: &SolveOptions,
) -> Result<EquilibriumResult> {
    let n = instance.spec.n;
    let scale = 1.0 + instance.eps1;

    // both paths converge to the same point; drive them deep enough that the
    // two fixed-point approximations agree to 1e-8 regardless of the caller's
    // stopping tolerance
    let opts = SolveOptions {
        tol: opts.tol.min(1e-11),
        ..opts.clone()
    };

    // direct path: project with the relaxed floor and mass
    let direct_opts = SolveOptions {
        floor: Some(instance.eps2.clone()),
        mass: Some(vec![scale; n]),
        initial: None,
        ..opts.clone()
    };
    let direct = match vi.mode {
        Mode::Nne => crate::equilibrium::solve_nne(vi, &direct_opts)?,
        Mode::Mne => crate::equilibrium::solve_mne(vi, &direct_opts)?,
    };

    // transformed path: the affine bijection v̂ᵢ = mᵢ·v̄ᵢ + ε₂ᵢ with
    // mᵢ = (1+ε₁) − ε₂ᵢ(b−a) maps the base set onto the relaxed set (the
    // constant shift removes ε₂ᵢ(b−a) of mass, so dividing by 1+ε₁ alone
    // would not land back on unit mass). Substituting into the VI gives the
    // congruent data P̃ᵢⱼ = mᵢ Pᵢⱼ mⱼ, Q̃ᵢ = mᵢ((Pε₂)ᵢ + Qᵢ) over the base set.
    let span = instance.spec.grid.span();
    let m_scale: Vec<f64> = instance.eps2.iter().map(|&e2| scale - e2 * span).collect();
    let eps2_fns: Vec<GridFn> = instance
        .eps2
        .iter()
        .map(|&e2| GridFn::constant(instance.spec.grid.clone(), e2))
        .collect();
    let p_eps2 = vi.p.apply_components(&eps2_fns)?;
    let q_scaled: Vec<GridFn> = vi
        .q
        .iter()
        .zip(p_eps2.iter())
        .zip(m_scale.iter())
        .map(|((q, pe), &m)| q.axpy(1.0, pe).map(|f| f.scale(m)))
        .collect::<Result<_>>()?;
    let scale_blocks = |p: &crate::operators::BlockOp| -> Result<crate::operators::BlockOp> {
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::with_capacity(n);
            for j in 0..n {
                row.push(LinOp::scale(m_scale[i] * m_scale[j], p.block(i, j).clone()));
            }
            rows.push(row);
        }
        crate::operators::BlockOp::new(rows)
    };
    let m_min = m_scale.iter().copied().fold(f64::INFINITY, f64::min);
    let m_max = m_scale.iter().copied().fold(0.0_f64, f64::max);
    let eps_p_scaled = vi.eps_p * m_min * m_min;
    let p_norm_scaled = vi.p_norm * m_max * m_max;
    let vi_scaled = AssembledVI {
        p: scale_blocks(&vi.p)?,
        q: q_scaled,
        eps_p: eps_p_scaled,
        p_norm: p_norm_scaled,
        eps0: eps_p_scaled / (p_norm_scaled * p_norm_scaled),
        mode: vi.mode,
        bounds: (vi.bounds.0 * m_min * m_min, vi.bounds.1 * m_max * m_max),
        p_value: vi.p_value.as_ref().map(&scale_blocks).transpose()?,
    };
    let transformed = match vi.mode {
        Mode::Nne => crate::equilibrium::solve_nne(&vi_scaled, &opts)?,
        Mode::Mne => crate::equilibrium::solve_mne(&vi_scaled, &opts)?,
    };
    // undo the change of variables: v̂ᵢ = mᵢ·v̄ᵢ + ε₂ᵢ
    let mapped: Vec<GridFn> = transformed
        .u_hat
        .components()
        .iter()
        .zip(instance.eps2.iter().zip(m_scale.iter()))
        .map(|(v, (&e2, &m))| {
            GridFn::new(
                instance.spec.grid.clone(),
                v.values().mapv(|x| m * x + e2),
            )
        })
        .collect::<Result<_>>()?;
    let mapped = crate::function_space::DensityProfile::new(mapped)?;
    let path_gap = mapped.distance(&direct.u_hat)?;
    if path_gap > 1e-8 {
        return Err(Error::Internal(format!(
            "perturbed solve paths disagree by {path_gap:.3e}"
        )));
    }
    Ok(direct)
}

/// One row of a stability report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StabilityRow {
    pub k: usize,
    pub u_gap: f64,
    pub v_gap: f64,
    pub owap_gap: Vec<f64>,
    pub p_gap: f64,
    pub q_gap: f64,
}

/// Gap columns for k = 1..k_max plus the base solve.
#[derive(Debug)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    pub base: EquilibriumResult,
}

impl StabilityReport {
    /// CSV per the report interface: k,u_gap,v_gap,owap_gap_1..n,p_gap,q_gap.
    pub fn to_csv(&self) -> String {
        let n = self.base.owap.len();
        let mut out = String::from("k,u_gap,v_gap");
        for i in 1..=n {
            out.push_str(&format!(",owap_gap_{i}"));
        }
        out.push_str(",p_gap,q_gap\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}", r.k, r.u_gap, r.v_gap));
            for g in &r.owap_gap {
                out.push_str(&format!(",{g}"));
            }
            out.push_str(&format!(",{},{}\n", r.p_gap, r.q_gap));
        }
        out
    }
}

/// Thresholds checked at the end of a stability run.
#[derive(Debug, Clone, Copy)]
pub struct StabilityThresholds {
    /// Required bound on the final u/v/owap gaps.
    pub final_gap: f64,
}

impl Default for StabilityThresholds {
    fn default() -> Self {
        Self { final_gap: 1e-2 }
    }
}

/// Runs the full stability experiment: solves the base game, then each
/// perturbed instance, and records all gap columns. Fails if the final gaps
/// do not fall below the thresholds or do not improve on k = 1.
pub fn stability_report(
    base: &GameSpec,
    schedule: &PerturbationSchedule,
    mode: Mode,
    opts: &SolveOptions,
    eps0_override: Option<f64>,
    thresholds: StabilityThresholds,
) -> Result<StabilityReport> {
    schedule.validate(base.n)?;
    let mut base_vi = match mode {
        Mode::Nne => assemble_nne(base)?,
        Mode::Mne => assemble_mne(base)?,
    };
    if let Some(eps0) = eps0_override {
        base_vi = base_vi.with_eps0(eps0)?;
    }
    let base_res = match mode {
        Mode::Nne => crate::equilibrium::solve_nne(&base_vi, opts)?,
        Mode::Mne => crate::equilibrium::solve_mne(&base_vi, opts)?,
    };

    let operator_perturbed = schedule.deltas.perturbs_operator();
    let mut rows = Vec::with_capacity(schedule.k_max);
    for k in 1..=schedule.k_max {
        let instance = perturb_spec(base, schedule, k)?;
        let (vi_k, p_gap) = if operator_perturbed {
            let vi_k = match mode {
                Mode::Nne => assemble_nne(&instance.spec)?,
                Mode::Mne => assemble_mne(&instance.spec)?,
            };
            let diff = base_vi.p.sub(&vi_k.p)?;
            let p_gap = op_norm(&diff, 500_000)?;
            let vi_k = match eps0_override {
                Some(e) => vi_k.with_eps0(e)?,
                None => vi_k,
            };
            (vi_k, p_gap)
        } else {
            // operator untouched: reuse the base certificate, recompute Q only
            let q_k = reassemble_q(&instance.spec)?;
            (
                AssembledVI {
                    q: q_k,
                    ..base_vi.clone()
                },
                0.0,
            )
        };
        let q_gap = crate::function_space::stack_norm(
            &base_vi
                .q
                .iter()
                .zip(vi_k.q.iter())
                .map(|(a, b)| a.axpy(-1.0, b))
                .collect::<Result<Vec<_>>>()?,
        );
        let res_k = solve_perturbed_with(&vi_k, &instance, opts)?;
        let u_gap = base_res.u_hat.distance(&res_k.u_hat)?;
        let v_gap = crate::function_space::stack_norm(
            &base_res
                .v_hat
                .iter()
                .zip(res_k.v_hat.iter())
                .map(|(a, b)| a.axpy(-1.0, b))
                .collect::<Result<Vec<_>>>()?,
        );
        let owap_gap: Vec<f64> = base_res
            .owap
            .iter()
            .zip(res_k.owap.iter())
            .map(|(a, b)| (a - b).abs())
            .collect();
        rows.push(StabilityRow {
            k,
            u_gap,
            v_gap,
            owap_gap,
            p_gap,
            q_gap,
        });
    }

    let first = rows.first().expect("k_max >= 1");
    let last = rows.last().expect("k_max >= 1");
    let worst_final = last
        .u_gap
        .max(last.v_gap)
        .max(last.owap_gap.iter().copied().fold(0.0, f64::max));
    // a zero (or already-converged) schedule leaves the gaps at the solver
    // noise floor, where the improvement comparison is meaningless
    let noise_floor = 100.0 * opts.tol.min(1e-11);
    if schedule.k_max > 1 && first.u_gap > noise_floor && last.u_gap >= first.u_gap {
        return Err(Error::StabilityThreshold(format!(
            "u_gap did not improve: k=1 gives {}, k={} gives {}",
            first.u_gap, last.k, last.u_gap
        )));
    }
    if worst_final > thresholds.final_gap {
        return Err(Error::StabilityThreshold(format!(
            "final gaps {worst_final:.3e} above threshold {:.3e}",
            thresholds.final_gap
        )));
    }
    Ok(StabilityReport {
        rows,
        base: base_res,
    })
}

/// Recomputes only the Q vector of an instance (operator coefficients known
/// to be unperturbed).
fn reassemble_q(spec: &GameSpec) -> Result<Vec<GridFn>> {
    let wt = spec.time_weights();
    let mut q = Vec::with_capacity(spec.n);
    for market in &spec.markets {
        let y = crate::dynamics::solve_operator_backward(
            &market.e,
            &market.a,
            &market.g,
            crate::dynamics::BackwardMethod::Rk4,
        )?;
        let mut qv = market.alpha.values().clone();
        qv += &y.op_at_index(0).apply_values(market.xi.values());
        for (k, w) in wt.iter().enumerate() {
            qv += &(*w * &y.op_at_index(k).apply_values(market.forcing[k].values()));
        }
        q.push(GridFn::new(spec.grid.clone(), qv)?);
    }
    Ok(q)
}
