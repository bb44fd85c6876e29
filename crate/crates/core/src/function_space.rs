//! Discretization of H = L²([a,b]) as a weighted quadrature grid.
//!
//! Functions live as node values; the inner product ⟨f,g⟩ = ∫ f g dx becomes
//! the weighted sum Σⱼ wⱼ fⱼ gⱼ. Profiles over n markets stack n grid
//! functions and carry the product-space norm ‖u‖² = Σᵢ ‖uᵢ‖².

use crate::error::{Error, Result};
use ndarray::Array1;
use std::sync::Arc;

/// Quadrature rule used to build the node/weight pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureRule {
    CompositeTrapezoid,
    CompositeMidpoint,
}

/// Spatial grid on [a,b] with positive quadrature weights.
///
/// Immutable after construction; share via [`Arc`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    a: f64,
    b: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    rule: QuadratureRule,
}

impl Grid {
    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rule(&self) -> QuadratureRule {
        self.rule
    }

    /// Interval length b − a.
    pub fn span(&self) -> f64 {
        self.b - self.a
    }
}

/// Builds a grid on [a,b] with `count` nodes.
///
/// Trapezoid weights are h·(½,1,…,1,½) with h = (b−a)/(count−1); midpoint
/// places nodes at cell centers with uniform weight h = (b−a)/count.
pub fn make_grid(a: f64, b: f64, count: usize, rule: QuadratureRule) -> Result<Arc<Grid>> {
    if !(b > a) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!(
            "grid endpoints must satisfy a < b, got [{a}, {b}]"
        )));
    }
    if count < 2 {
        return Err(Error::Domain(format!(
            "grid needs at least 2 nodes, got {count}"
        )));
    }
    let (nodes, weights) = match rule {
        QuadratureRule::CompositeTrapezoid => {
            let h = (b - a) / (count - 1) as f64;
            let nodes: Vec<f64> = (0..count)
                .map(|j| {
                    if j + 1 == count {
                        b
                    } else {
                        a + h * j as f64
                    }
                })
                .collect();
            let mut weights = vec![h; count];
            weights[0] = 0.5 * h;
            weights[count - 1] = 0.5 * h;
            (nodes, weights)
        }
        QuadratureRule::CompositeMidpoint => {
            let h = (b - a) / count as f64;
            let nodes: Vec<f64> = (0..count).map(|j| a + h * (j as f64 + 0.5)).collect();
            (nodes, vec![h; count])
        }
    };
    Ok(Arc::new(Grid {
        a,
        b,
        nodes,
        weights,
        rule,
    }))
}

/// A function sampled on a grid, one value per node.
#[derive(Debug, Clone)]
pub struct GridFn {
    grid: Arc<Grid>,
    values: Array1<f64>,
}

fn same_grid(g1: &Arc<Grid>, g2: &Arc<Grid>) -> bool {
    Arc::ptr_eq(g1, g2) || **g1 == **g2
}

/// Ensures two grid functions live on the same grid.
pub fn check_same_grid(f: &GridFn, g: &GridFn) -> Result<()> {
    if same_grid(&f.grid, &g.grid) {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!(
            "grids differ: [{}, {}] n={} vs [{}, {}] n={}",
            f.grid.a,
            f.grid.b,
            f.grid.len(),
            g.grid.a,
            g.grid.b,
            g.grid.len()
        )))
    }
}

impl GridFn {
    pub fn new(grid: Arc<Grid>, values: Array1<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Domain(format!(
                "value count {} does not match grid node count {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid function values".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: Array1::zeros(n),
        }
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: Array1::from_elem(n, c),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array1<f64> {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// f + c·g on a shared grid.
    pub fn axpy(&self, c: f64, g: &GridFn) -> Result<GridFn> {
        check_same_grid(self, g)?;
        Ok(GridFn {
            grid: self.grid.clone(),
            values: &self.values + &(c * &g.values),
        })
    }

    pub fn scale(&self, c: f64) -> GridFn {
        GridFn {
            grid: self.grid.clone(),
            values: c * &self.values,
        }
    }

    /// ∫ f dx = ⟨f, 1⟩.
    pub fn integral(&self) -> f64 {
        self.grid
            .weights()
            .iter()
            .zip(self.values.iter())
            .map(|(w, v)| w * v)
            .sum()
    }

    /// ‖f‖_H.
    pub fn norm(&self) -> f64 {
        inner_product(self, self).expect("same grid").sqrt()
    }

    /// CSV serialization with header `x,value`, shortest round-trip floats.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,value\n");
        for (x, v) in self.grid.nodes().iter().zip(self.values.iter()) {
            out.push_str(&format!("{x},{v}\n"));
        }
        out
    }
}

/// Weighted inner product ⟨f,g⟩ = Σⱼ wⱼ fⱼ gⱼ.
pub fn inner_product(f: &GridFn, g: &GridFn) -> Result<f64> {
    check_same_grid(f, g)?;
    Ok(f.grid
        .weights()
        .iter()
        .zip(f.values.iter().zip(g.values.iter()))
        .map(|(w, (a, b))| w * a * b)
        .sum())
}

/// Samples a closed-form expression at the grid nodes.
pub fn sample<F: Fn(f64) -> f64>(expr: F, grid: &Arc<Grid>) -> Result<GridFn> {
    let values: Array1<f64> = grid.nodes().iter().map(|&x| expr(x)).collect();
    if let Some((j, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "expression returned {v} at node x = {}",
            grid.nodes()[j]
        )));
    }
    Ok(GridFn {
        grid: grid.clone(),
        values,
    })
}

/// A density per market: each component has unit mass and non-negative values
/// (or the relaxed floor/mass of a perturbed constraint set).
#[derive(Debug, Clone)]
pub struct DensityProfile {
    components: Vec<GridFn>,
}

impl DensityProfile {
    pub fn new(components: Vec<GridFn>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Domain("density profile needs n >= 1 markets".into()));
        }
        for c in &components[1..] {
            check_same_grid(&components[0], c)?;
        }
        Ok(Self { components })
    }

    /// Uniform feasible profile uᵢ ≡ 1/(b−a).
    pub fn uniform(grid: Arc<Grid>, n: usize) -> Self {
        let c = 1.0 / grid.span();
        Self {
            components: (0..n).map(|_| GridFn::constant(grid.clone(), c)).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.components[0].grid()
    }

    pub fn components(&self) -> &[GridFn] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &GridFn {
        &self.components[i]
    }

    /// Membership check for the (possibly perturbed) constraint set:
    /// per-market mass and pointwise floor.
    pub fn validate(&self, mass: f64, floor: f64, tol: f64) -> Result<()> {
        for (i, c) in self.components.iter().enumerate() {
            let m = c.integral();
            if (m - mass).abs() > tol {
                return Err(Error::Infeasible(format!(
                    "market {i}: mass {m} differs from required {mass} beyond {tol}"
                )));
            }
            if let Some(v) = c.values().iter().copied().find(|v| *v < floor - tol) {
                return Err(Error::Infeasible(format!(
                    "market {i}: value {v} below floor {floor}"
                )));
            }
        }
        Ok(())
    }

    /// ‖u − v‖ in the product norm.
    pub fn distance(&self, other: &DensityProfile) -> Result<f64> {
        if self.n() != other.n() {
            return Err(Error::Domain("profile market counts differ".into()));
        }
        let mut s = 0.0;
        for (a, b) in self.components.iter().zip(other.components.iter()) {
            let d = a.axpy(-1.0, b)?;
            s += inner_product(&d, &d)?;
        }
        Ok(s.sqrt())
    }
}

/// Product-space norm of a stack of grid functions.
pub fn stack_norm(fs: &[GridFn]) -> f64 {
    fs.iter()
        .map(|f| {
            let n = f.norm();
            n * n
        })
        .sum::<f64>()
        .sqrt()
}
