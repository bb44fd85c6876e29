//! Discretized bounded linear operators on H and Hⁿ.
//!
//! An operator is stored structurally (kernel, multiplication, rank-one,
//! identity, sums, compositions) and applied through quadrature so that a
//! kernel acts as (Wg)(xᵢ) = Σⱼ wⱼ K(xᵢ,xⱼ) gⱼ → ∫ K(x,y) g(y) dy.
//!
//! Adjoints are always taken in the weighted inner product: for a raw action
//! matrix M the adjoint action is D⁻¹MᵀD with D = diag(w). Eigenvalue
//! estimation works on the similarity-symmetrized operator D^{1/2} M D^{-1/2},
//! whose spectrum equals the weighted Rayleigh spectrum.

use crate::error::{Error, Result};
use crate::function_space::{check_same_grid, Grid, GridFn};
use ndarray::{Array1, Array2};
use std::sync::Arc;

/// Structural form of a discretized operator.
#[derive(Debug, Clone)]
pub enum OpKind {
    /// Dense kernel matrix K; action (Wg)ᵢ = Σⱼ wⱼ K[i,j] gⱼ.
    Kernel(Array2<f64>),
    /// Pointwise multiplication (Wg)(x) = m(x) g(x).
    Multiplication(GridFn),
    /// (Wg)(x) = φ(x)·⟨ψ, g⟩.
    RankOne { phi: GridFn, psi: GridFn },
    /// c·g.
    ScaledIdentity(f64),
    /// Pointwise sum of operators.
    Sum(Vec<LinOp>),
    /// (A∘B)g = A(Bg).
    Composition(Box<LinOp>, Box<LinOp>),
}

/// A bounded linear operator on the discretized H.
#[derive(Debug, Clone)]
pub struct LinOp {
    grid: Arc<Grid>,
    kind: OpKind,
}

impl LinOp {
    pub fn kernel(grid: Arc<Grid>, matrix: Array2<f64>) -> Result<Self> {
        let n = grid.len();
        if matrix.shape() != [n, n] {
            return Err(Error::Domain(format!(
                "kernel matrix shape {:?} does not match grid size {n}",
                matrix.shape()
            )));
        }
        Ok(Self {
            grid,
            kind: OpKind::Kernel(matrix),
        })
    }

    /// Kernel from a closed-form K(x,y).
    pub fn kernel_from_fn<F: Fn(f64, f64) -> f64>(grid: Arc<Grid>, k: F) -> Self {
        let n = grid.len();
        let mut m = Array2::zeros((n, n));
        for (i, &xi) in grid.nodes().iter().enumerate() {
            for (j, &yj) in grid.nodes().iter().enumerate() {
                m[[i, j]] = k(xi, yj);
            }
        }
        Self {
            grid,
            kind: OpKind::Kernel(m),
        }
    }

    pub fn multiplication(m: GridFn) -> Self {
        Self {
            grid: m.grid().clone(),
            kind: OpKind::Multiplication(m),
        }
    }

    pub fn rank_one(phi: GridFn, psi: GridFn) -> Result<Self> {
        check_same_grid(&phi, &psi)?;
        Ok(Self {
            grid: phi.grid().clone(),
            kind: OpKind::RankOne { phi, psi },
        })
    }

    pub fn scaled_identity(grid: Arc<Grid>, c: f64) -> Self {
        Self {
            grid,
            kind: OpKind::ScaledIdentity(c),
        }
    }

    pub fn identity(grid: Arc<Grid>) -> Self {
        Self::scaled_identity(grid, 1.0)
    }

    pub fn zero(grid: Arc<Grid>) -> Self {
        Self::scaled_identity(grid, 0.0)
    }

    pub fn sum(terms: Vec<LinOp>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Domain("operator sum needs at least one term".into()))?;
        let grid = first.grid.clone();
        for t in &terms[1..] {
            if !(Arc::ptr_eq(&grid, &t.grid) || *grid == *t.grid) {
                return Err(Error::GridMismatch("operator sum terms".into()));
            }
        }
        Ok(Self {
            grid,
            kind: OpKind::Sum(terms),
        })
    }

    /// (outer ∘ inner) g = outer(inner(g)).
    pub fn compose(outer: LinOp, inner: LinOp) -> Result<Self> {
        if !(Arc::ptr_eq(&outer.grid, &inner.grid) || *outer.grid == *inner.grid) {
            return Err(Error::GridMismatch("operator composition".into()));
        }
        let grid = outer.grid.clone();
        Ok(Self {
            grid,
            kind: OpKind::Composition(Box::new(outer), Box::new(inner)),
        })
    }

    /// c·W as a composition with a scaled identity.
    pub fn scale(c: f64, op: LinOp) -> Self {
        let grid = op.grid.clone();
        Self {
            grid: grid.clone(),
            kind: OpKind::Composition(
                Box::new(LinOp::scaled_identity(grid, c)),
                Box::new(op),
            ),
        }
    }

    /// Wraps a raw action matrix M (so that (Wg) = M g in coefficients) as a
    /// kernel operator: K = M·diag(1/w). The kernel adjoint Kᵀ then realizes
    /// the weighted adjoint D⁻¹MᵀD.
    pub fn from_action_matrix(grid: Arc<Grid>, action: Array2<f64>) -> Result<Self> {
        let n = grid.len();
        if action.shape() != [n, n] {
            return Err(Error::Domain("action matrix shape mismatch".into()));
        }
        let mut k = action;
        for (j, &w) in grid.weights().iter().enumerate() {
            for i in 0..n {
                k[[i, j]] /= w;
            }
        }
        Ok(Self {
            grid,
            kind: OpKind::Kernel(k),
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn kind(&self) -> &OpKind {
        &self.kind
    }

    /// Returns Some(c) if this operator is structurally c·I.
    pub fn as_scaled_identity(&self) -> Option<f64> {
        match &self.kind {
            OpKind::ScaledIdentity(c) => Some(*c),
            OpKind::Sum(terms) => terms
                .iter()
                .map(|t| t.as_scaled_identity())
                .sum::<Option<f64>>(),
            OpKind::Composition(a, b) => {
                Some(a.as_scaled_identity()? * b.as_scaled_identity()?)
            }
            _ => None,
        }
    }

    /// Applies the operator to grid-function values.
    pub fn apply_values(&self, g: &Array1<f64>) -> Array1<f64> {
        match &self.kind {
            OpKind::Kernel(k) => {
                let w = self.grid.weights();
                let weighted: Array1<f64> =
                    g.iter().zip(w.iter()).map(|(v, w)| v * w).collect();
                k.dot(&weighted)
            }
            OpKind::Multiplication(m) => m.values() * g,
            OpKind::RankOne { phi, psi } => {
                let w = self.grid.weights();
                let ip: f64 = psi
                    .values()
                    .iter()
                    .zip(g.iter().zip(w.iter()))
                    .map(|(p, (v, w))| p * v * w)
                    .sum();
                phi.values() * ip
            }
            OpKind::ScaledIdentity(c) => g * *c,
            OpKind::Sum(terms) => {
                let mut acc = Array1::zeros(g.len());
                for t in terms {
                    acc += &t.apply_values(g);
                }
                acc
            }
            OpKind::Composition(a, b) => a.apply_values(&b.apply_values(g)),
        }
    }

    /// Raw action matrix M with (Wg) = M g in node coefficients.
    pub fn action_matrix(&self) -> Array2<f64> {
        let n = self.grid.len();
        match &self.kind {
            OpKind::Kernel(k) => {
                let mut m = k.clone();
                for (j, &w) in self.grid.weights().iter().enumerate() {
                    for i in 0..n {
                        m[[i, j]] *= w;
                    }
                }
                m
            }
            OpKind::Multiplication(mf) => Array2::from_diag(mf.values()),
            OpKind::RankOne { phi, psi } => {
                let w = self.grid.weights();
                let mut m = Array2::zeros((n, n));
                for i in 0..n {
                    for j in 0..n {
                        m[[i, j]] = phi.values()[i] * psi.values()[j] * w[j];
                    }
                }
                m
            }
            OpKind::ScaledIdentity(c) => Array2::from_diag(&Array1::from_elem(n, *c)),
            OpKind::Sum(terms) => {
                let mut acc = Array2::zeros((n, n));
                for t in terms {
                    acc += &t.action_matrix();
                }
                acc
            }
            OpKind::Composition(a, b) => a.action_matrix().dot(&b.action_matrix()),
        }
    }

    /// Adjoint in the weighted inner product: ⟨Wu, v⟩ = ⟨u, W*v⟩.
    pub fn adjoint(&self) -> LinOp {
        let kind = match &self.kind {
            OpKind::Kernel(k) => OpKind::Kernel(k.t().to_owned()),
            OpKind::Multiplication(m) => OpKind::Multiplication(m.clone()),
            OpKind::RankOne { phi, psi } => OpKind::RankOne {
                phi: psi.clone(),
                psi: phi.clone(),
            },
            OpKind::ScaledIdentity(c) => OpKind::ScaledIdentity(*c),
            OpKind::Sum(terms) => OpKind::Sum(terms.iter().map(|t| t.adjoint()).collect()),
            OpKind::Composition(a, b) => {
                OpKind::Composition(Box::new(b.adjoint()), Box::new(a.adjoint()))
            }
        };
        LinOp {
            grid: self.grid.clone(),
            kind,
        }
    }
}

/// Applies an operator to a grid function.
pub fn apply(op: &LinOp, f: &GridFn) -> Result<GridFn> {
    if !(Arc::ptr_eq(op.grid(), f.grid()) || **op.grid() == **f.grid()) {
        return Err(Error::GridMismatch("operator application".into()));
    }
    GridFn::new(op.grid().clone(), op.apply_values(f.values()))
}

/// n×n block operator on Hⁿ; entry (i,j) maps component j into component i.
#[derive(Debug, Clone)]
pub struct BlockOp {
    n: usize,
    grid: Arc<Grid>,
    blocks: Vec<Vec<LinOp>>,
}

impl BlockOp {
    pub fn new(blocks: Vec<Vec<LinOp>>) -> Result<Self> {
        let n = blocks.len();
        if n == 0 || blocks.iter().any(|row| row.len() != n) {
            return Err(Error::Domain("block operator must be square n×n".into()));
        }
        let grid = blocks[0][0].grid().clone();
        for row in &blocks {
            for b in row {
                if !(Arc::ptr_eq(&grid, b.grid()) || *grid == **b.grid()) {
                    return Err(Error::GridMismatch("block operator entries".into()));
                }
            }
        }
        Ok(Self { n, grid, blocks })
    }

    /// Single-block wrapper for n = 1.
    pub fn from_single(op: LinOp) -> Self {
        Self {
            n: 1,
            grid: op.grid().clone(),
            blocks: vec![vec![op]],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn block(&self, i: usize, j: usize) -> &LinOp {
        &self.blocks[i][j]
    }

    /// Blockwise application to a stacked profile.
    pub fn apply_components(&self, comps: &[GridFn]) -> Result<Vec<GridFn>> {
        if comps.len() != self.n {
            return Err(Error::Domain(format!(
                "block operator of size {} applied to {} components",
                self.n,
                comps.len()
            )));
        }
        let mut out = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut acc = Array1::zeros(self.grid.len());
            for (j, c) in comps.iter().enumerate() {
                check_same_grid(&comps[0], c)?;
                acc += &self.blocks[i][j].apply_values(c.values());
            }
            out.push(GridFn::new(self.grid.clone(), acc)?);
        }
        Ok(out)
    }

    pub fn adjoint(&self) -> BlockOp {
        let blocks = (0..self.n)
            .map(|i| (0..self.n).map(|j| self.blocks[j][i].adjoint()).collect())
            .collect();
        BlockOp {
            n: self.n,
            grid: self.grid.clone(),
            blocks,
        }
    }

    /// Blockwise difference, used for perturbation gaps ‖P − P_k‖.
    pub fn sub(&self, other: &BlockOp) -> Result<BlockOp> {
        if self.n != other.n {
            return Err(Error::Domain("block size mismatch in difference".into()));
        }
        let mut rows = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut row = Vec::with_capacity(self.n);
            for j in 0..self.n {
                row.push(LinOp::sum(vec![
                    self.blocks[i][j].clone(),
                    LinOp::scale(-1.0, other.blocks[i][j].clone()),
                ])?);
            }
            rows.push(row);
        }
        BlockOp::new(rows)
    }
}

/// Uniform view of LinOp / BlockOp for spectral estimation: an operator on a
/// flat coefficient vector of length n·N with tiled quadrature weights.
pub trait FlatOperator {
    fn flat_len(&self) -> usize;
    fn flat_weights(&self) -> Vec<f64>;
    fn apply_flat(&self, x: &Array1<f64>) -> Array1<f64>;
    fn adjoint_apply_flat(&self, x: &Array1<f64>) -> Array1<f64>;
}

impl FlatOperator for LinOp {
    fn flat_len(&self) -> usize {
        self.grid.len()
    }
    fn flat_weights(&self) -> Vec<f64> {
        self.grid.weights().to_vec()
    }
    fn apply_flat(&self, x: &Array1<f64>) -> Array1<f64> {
        self.apply_values(x)
    }
    fn adjoint_apply_flat(&self, x: &Array1<f64>) -> Array1<f64> {
        self.adjoint().apply_values(x)
    }
}

impl FlatOperator for BlockOp {
    fn flat_len(&self) -> usize {
        self.n * self.grid.len()
    }
    fn flat_weights(&self) -> Vec<f64> {
        let w = self.grid.weights();
        let mut out = Vec::with_capacity(self.n * w.len());
        for _ in 0..self.n {
            out.extend_from_slice(w);
        }
        out
    }
    fn apply_flat(&self, x: &Array1<f64>) -> Array1<f64> {
        let nn = self.grid.len();
        let mut out = Array1::zeros(self.n * nn);
        for i in 0..self.n {
            let mut acc = Array1::zeros(nn);
            for j in 0..self.n {
                let xj = x.slice(ndarray::s![j * nn..(j + 1) * nn]).to_owned();
                acc += &self.blocks[i][j].apply_values(&xj);
            }
            out.slice_mut(ndarray::s![i * nn..(i + 1) * nn]).assign(&acc);
        }
        out
    }
    fn adjoint_apply_flat(&self, x: &Array1<f64>) -> Array1<f64> {
        self.adjoint().apply_flat(x)
    }
}

fn flat_dot(w: &[f64], a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    w.iter()
        .zip(a.iter().zip(b.iter()))
        .map(|(w, (x, y))| w * x * y)
        .sum()
}

/// Deterministic start vector: all ones plus a fixed low-frequency ripple.
fn start_vector(len: usize) -> Array1<f64> {
    Array1::from_iter((0..len).map(|j| 1.0 + 0.01 * (0.7 + 2.4 * j as f64 / len as f64).sin()))
}

/// Operator norm in the weighted metric via power iteration on W*∘W.
///
/// The Rayleigh quotient of W*W converges monotonically from below to ‖W‖²;
/// iteration stops when the eigen-residual certifies the estimate.
pub fn op_norm<O: FlatOperator>(op: &O, iters: usize) -> Result<f64> {
    let w = op.flat_weights();
    let mut v = start_vector(op.flat_len());
    let nrm = flat_dot(&w, &v, &v).sqrt();
    v.mapv_inplace(|x| x / nrm);
    let mut lambda = 0.0;
    for it in 0..iters {
        // z = W*W v
        let wv = op.apply_flat(&v);
        let z = op.adjoint_apply_flat(&wv);
        lambda = flat_dot(&w, &v, &z);
        if !lambda.is_finite() {
            return Err(Error::NonFinite("operator norm estimation".into()));
        }
        if lambda <= 0.0 {
            // W*W is PSD; a non-positive Rayleigh quotient means W ≈ 0.
            let znorm = flat_dot(&w, &z, &z).sqrt();
            if znorm < 1e-300 {
                return Ok(0.0);
            }
        }
        // residual ‖z − λv‖ certifies eigenvalue accuracy for symmetric ops
        let mut res = 0.0;
        for ((zi, vi), wi) in z.iter().zip(v.iter()).zip(w.iter()) {
            let r = zi - lambda * vi;
            res += wi * r * r;
        }
        let res = res.sqrt();
        if res <= 5e-8 * lambda.abs() + 1e-30 {
            return Ok(lambda.max(0.0).sqrt());
        }
        let znorm = flat_dot(&w, &z, &z).sqrt();
        if znorm < 1e-300 {
            return Ok(0.0);
        }
        v = z / znorm;
        if it + 1 == iters {
            return Err(Error::Convergence {
                iters,
                last: lambda.max(0.0).sqrt(),
            });
        }
    }
    Ok(lambda.max(0.0).sqrt())
}

/// Symmetric Lanczos with full reorthogonalization on the weighted
/// symmetrization ½(W + W*). Returns the extreme eigenvalues of the
/// tridiagonal restriction once their residuals pass `tol`.
fn lanczos_extremes<O: FlatOperator>(op: &O, tol: f64, max_steps: usize) -> Result<(f64, f64)> {
    let w = op.flat_weights();
    let sqrt_w: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let dim = op.flat_len();
    // H z = √D · ½(W + W*) (z/√D): symmetric matrix with the weighted
    // Rayleigh spectrum of the symmetric part.
    let h_apply = |z: &Array1<f64>| -> Array1<f64> {
        let g: Array1<f64> = z
            .iter()
            .zip(sqrt_w.iter())
            .map(|(zi, s)| zi / s)
            .collect();
        let ag = op.apply_flat(&g);
        let atg = op.adjoint_apply_flat(&g);
        Array1::from_iter(
            ag.iter()
                .zip(atg.iter())
                .zip(sqrt_w.iter())
                .map(|((a, b), s)| 0.5 * (a + b) * s),
        )
    };

    let steps = max_steps.min(dim);
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(steps);
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();

    let mut q = start_vector(dim);
    let nrm = q.dot(&q).sqrt();
    q.mapv_inplace(|x| x / nrm);

    for k in 0..steps {
        let mut z = h_apply(&q);
        let alpha = q.dot(&z);
        if !alpha.is_finite() {
            return Err(Error::NonFinite("eigenvalue estimation".into()));
        }
        alphas.push(alpha);
        z -= &(alpha * &q);
        if let Some(prev) = basis.last() {
            z -= &(betas[k - 1] * prev);
        }
        // full reorthogonalization, twice for stability
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&z);
                z -= &(c * b);
            }
            let c = q.dot(&z);
            z -= &(c * &q);
        }
        basis.push(q.clone());
        let beta = z.dot(&z).sqrt();

        // converged (or exact) when the extremal eigenpairs have small residual
        let (lo, hi, res_lo, res_hi) = tridiag_extremes(&alphas, &betas, beta);
        let scale = lo.abs().max(hi.abs()).max(1e-300);
        if (res_lo <= tol * scale && res_hi <= tol * scale) || beta < 1e-14 * scale || k + 1 == dim
        {
            return Ok((lo, hi));
        }
        betas.push(beta);
        q = z / beta;
    }
    let (lo, hi, _, _) = tridiag_extremes(&alphas, &betas, 0.0);
    Err(Error::Convergence {
        iters: steps,
        last: hi.max(lo.abs()),
    })
}

/// Extreme eigenvalues of the symmetric tridiagonal (alphas, betas) via Sturm
/// bisection, plus residual estimates |β_last · s_k| from the last component
/// of the extremal eigenvectors.
fn tridiag_extremes(alphas: &[f64], betas: &[f64], beta_last: f64) -> (f64, f64, f64, f64) {
    let k = alphas.len();
    debug_assert_eq!(betas.len(), k - 1);
    // Gershgorin bounds
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..k {
        let r = if i > 0 { betas[i - 1].abs() } else { 0.0 }
            + if i < k - 1 { betas[i].abs() } else { 0.0 };
        lo = lo.min(alphas[i] - r);
        hi = hi.max(alphas[i] + r);
    }
    if k == 1 {
        return (alphas[0], alphas[0], beta_last.abs(), beta_last.abs());
    }
    // counts eigenvalues < x
    let count_below = |x: f64| -> usize {
        let mut count = 0usize;
        let mut d = alphas[0] - x;
        if d < 0.0 {
            count += 1;
        }
        for i in 1..k {
            let denom = if d.abs() < 1e-300 {
                1e-300_f64.copysign(if d == 0.0 { 1.0 } else { d })
            } else {
                d
            };
            d = alphas[i] - x - betas[i - 1] * betas[i - 1] / denom;
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    let bisect = |target: usize| -> f64 {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if count_below(m) <= target {
                a = m;
            } else {
                b = m;
            }
            if b - a <= 1e-15 * b.abs().max(a.abs()).max(1.0) {
                break;
            }
        }
        0.5 * (a + b)
    };
    let smallest = bisect(0);
    let largest = bisect(k - 1);
    // residuals via last eigenvector component (inverse-iteration style solve)
    let last_component = |theta: f64| -> f64 {
        // three-term recurrence for the eigenvector of T at theta, with
        // running normalization to avoid overflow
        let mut prev = 0.0_f64;
        let mut cur = 1.0_f64;
        let mut norm_sq = 1.0_f64;
        for i in 0..k - 1 {
            let next = ((theta - alphas[i]) * cur - if i > 0 { betas[i - 1] * prev } else { 0.0 })
                / betas[i];
            prev = cur;
            cur = next;
            norm_sq += cur * cur;
            if norm_sq > 1e280 {
                let s = norm_sq.sqrt();
                prev /= s;
                cur /= s;
                norm_sq = (prev * prev + cur * cur).max(1e-300);
            }
        }
        (cur / norm_sq.sqrt()).abs().min(1.0)
    };
    let res_lo = beta_last.abs() * last_component(smallest);
    let res_hi = beta_last.abs() * last_component(largest);
    (smallest, largest, res_lo, res_hi)
}

/// Bounds on the weighted Rayleigh quotient of ½(W + W*): returns
/// (min, max) eigenvalue estimates of the symmetrized operator.
pub fn definiteness_bounds<O: FlatOperator>(op: &O) -> Result<(f64, f64)> {
    lanczos_extremes(op, 1e-9, 600)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_space::{inner_product, make_grid, sample, QuadratureRule};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid01(n: usize) -> Arc<Grid> {
        make_grid(0.0, 1.0, n, QuadratureRule::CompositeTrapezoid).unwrap()
    }

    fn w2(grid: &Arc<Grid>) -> LinOp {
        LinOp::kernel_from_fn(grid.clone(), |x, y| 2.0 * (PI * (x - y)).cos())
    }

    fn random_fn(grid: &Arc<Grid>, rng: &mut ChaCha8Rng) -> GridFn {
        let vals: Array1<f64> = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        GridFn::new(grid.clone(), vals).unwrap()
    }

    #[test]
    fn identity_application() {
        let g = grid01(33);
        let f = sample(|x| x * x - 0.3, &g).unwrap();
        let out = apply(&LinOp::identity(g.clone()), &f).unwrap();
        assert_eq!(out.values(), f.values());
    }

    #[test]
    fn w2_fixes_half_sine() {
        // ∫₀¹ 2cos(π(x−y))·½sin(πy) dy = ½sin(πx)
        let g = grid01(401);
        let f = sample(|x| 0.5 * (PI * x).sin(), &g).unwrap();
        let out = apply(&w2(&g), &f).unwrap();
        let err = out.axpy(-1.0, &f).unwrap().norm();
        assert!(err < 1e-4, "err {err}");
    }

    #[test]
    fn aggregate_rank_one_on_constant() {
        // (Fg)(x) = ∫ y g(y) dy on [1,2]; F(1) = 3/2
        let g = make_grid(1.0, 2.0, 201, QuadratureRule::CompositeTrapezoid).unwrap();
        let agg = LinOp::rank_one(
            GridFn::constant(g.clone(), 1.0),
            sample(|x| x, &g).unwrap(),
        )
        .unwrap();
        let out = apply(&agg, &GridFn::constant(g.clone(), 1.0)).unwrap();
        for v in out.values() {
            assert!((v - 1.5).abs() < 1e-10);
        }
    }

    #[test]
    fn adjoint_defining_identity() {
        let g = grid01(41);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mult_x = LinOp::multiplication(sample(|x| x, &g).unwrap());
        let ops = vec![
            w2(&g),
            mult_x.clone(),
            LinOp::rank_one(GridFn::constant(g.clone(), 1.0), sample(|x| x, &g).unwrap())
                .unwrap(),
            LinOp::compose(w2(&g), mult_x.clone()).unwrap(),
            LinOp::sum(vec![LinOp::scale(0.7, w2(&g)), mult_x.clone()]).unwrap(),
        ];
        for op in &ops {
            let adj = op.adjoint();
            for _ in 0..5 {
                let u = random_fn(&g, &mut rng);
                let v = random_fn(&g, &mut rng);
                let lhs = inner_product(&apply(op, &u).unwrap(), &v).unwrap();
                let rhs = inner_product(&u, &apply(&adj, &v).unwrap()).unwrap();
                assert!((lhs - rhs).abs() < 1e-10, "adjoint identity failed: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn adjoint_structure() {
        let g = grid01(21);
        let mult = LinOp::multiplication(sample(|x| x, &g).unwrap());
        match mult.adjoint().kind() {
            OpKind::Multiplication(_) => {}
            other => panic!("expected multiplication, got {other:?}"),
        }
        let r = LinOp::rank_one(GridFn::constant(g.clone(), 1.0), sample(|x| x, &g).unwrap())
            .unwrap();
        match r.adjoint().kind() {
            OpKind::RankOne { phi, psi } => {
                assert_eq!(phi.values()[g.len() - 1], 1.0);
                assert_eq!(psi.values()[0], 1.0);
            }
            other => panic!("expected rank-one, got {other:?}"),
        }
        // symmetric kernel is self-adjoint
        let w = w2(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_fn(&g, &mut rng);
        let diff = apply(&w.adjoint(), &u)
            .unwrap()
            .axpy(-1.0, &apply(&w, &u).unwrap())
            .unwrap();
        assert!(diff.norm() < 1e-12);
    }

    #[test]
    fn adjoint_involution() {
        let g = grid01(31);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let op = LinOp::sum(vec![
            LinOp::compose(
                w2(&g),
                LinOp::rank_one(sample(|x| x, &g).unwrap(), sample(|x| 1.0 - x, &g).unwrap())
                    .unwrap(),
            )
            .unwrap(),
            LinOp::scaled_identity(g.clone(), -0.4),
        ])
        .unwrap();
        let twice = op.adjoint().adjoint();
        for _ in 0..5 {
            let u = random_fn(&g, &mut rng);
            let d = apply(&twice, &u)
                .unwrap()
                .axpy(-1.0, &apply(&op, &u).unwrap())
                .unwrap();
            assert!(d.norm() < 1e-12);
        }
    }

    #[test]
    fn linearity_randomized() {
        let g = grid01(25);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let op = LinOp::sum(vec![w2(&g), LinOp::scale(0.3, LinOp::identity(g.clone()))]).unwrap();
        for _ in 0..5 {
            let u = random_fn(&g, &mut rng);
            let v = random_fn(&g, &mut rng);
            let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let lhs = apply(&op, &u.scale(a).axpy(b, &v).unwrap()).unwrap();
            let rhs = apply(&op, &u)
                .unwrap()
                .scale(a)
                .axpy(b, &apply(&op, &v).unwrap())
                .unwrap();
            assert!(lhs.axpy(-1.0, &rhs).unwrap().norm() < 1e-10);
        }
    }

    #[test]
    fn w2_idempotent() {
        let g = grid01(401);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = w2(&g);
        for _ in 0..3 {
            let u = random_fn(&g, &mut rng);
            let once = apply(&w, &u).unwrap();
            let twice = apply(&w, &once).unwrap();
            let err = twice.axpy(-1.0, &once).unwrap().norm();
            assert!(err < 1e-3, "W₂² deviates from W₂ by {err}");
        }
    }

    #[test]
    fn op_norm_scaled_identity() {
        let g = grid01(50);
        let n = op_norm(&LinOp::scaled_identity(g.clone(), -2.5), 1000).unwrap();
        assert!((n - 2.5).abs() < 1e-9);
        let z = op_norm(&LinOp::zero(g), 1000).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn op_norm_i_plus_w2() {
        let g = grid01(401);
        let p = LinOp::sum(vec![LinOp::identity(g.clone()), w2(&g)]).unwrap();
        let n = op_norm(&p, 20000).unwrap();
        assert!((n - 2.0).abs() < 1e-4, "norm {n}");
    }

    #[test]
    fn op_norm_multiplication_sup() {
        let g = make_grid(1.0, 2.0, 401, QuadratureRule::CompositeTrapezoid).unwrap();
        let m = LinOp::multiplication(sample(|x| x, &g).unwrap());
        let n = op_norm(&m, 200_000).unwrap();
        assert!((n - 2.0).abs() < 1e-6, "norm {n}");
    }

    #[test]
    fn norm_bounds_application() {
        let g = grid01(101);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let op = LinOp::sum(vec![
            w2(&g),
            LinOp::multiplication(sample(|x| 0.5 - x, &g).unwrap()),
        ])
        .unwrap();
        let n = op_norm(&op, 100_000).unwrap();
        for _ in 0..10 {
            let u = random_fn(&g, &mut rng);
            let img = apply(&op, &u).unwrap();
            assert!(img.norm() <= n * u.norm() * (1.0 + 1e-6));
        }
    }

    #[test]
    fn definiteness_scaled_identity() {
        let g = grid01(64);
        let (lo, hi) = definiteness_bounds(&LinOp::scaled_identity(g, 0.7)).unwrap();
        assert!((lo - 0.7).abs() < 1e-9);
        assert!((hi - 0.7).abs() < 1e-9);
    }

    #[test]
    fn definiteness_i_plus_w2() {
        let g = grid01(401);
        let p = LinOp::sum(vec![LinOp::identity(g.clone()), w2(&g)]).unwrap();
        let (lo, hi) = definiteness_bounds(&p).unwrap();
        assert!((lo - 1.0).abs() < 1e-4, "lo {lo}");
        assert!((hi - 2.0).abs() < 1e-4, "hi {hi}");
    }

    #[test]
    fn definiteness_brackets_rayleigh_quotients() {
        let g = grid01(81);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let op = LinOp::sum(vec![
            w2(&g),
            LinOp::multiplication(sample(|x| x - 0.2, &g).unwrap()),
        ])
        .unwrap();
        let (lo, hi) = definiteness_bounds(&op).unwrap();
        for _ in 0..50 {
            let u = random_fn(&g, &mut rng);
            let q = inner_product(&apply(&op, &u).unwrap(), &u).unwrap()
                / inner_product(&u, &u).unwrap();
            assert!(q >= lo - 1e-8 && q <= hi + 1e-8, "quotient {q} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn block_op_apply_and_adjoint() {
        let g = grid01(31);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let b = BlockOp::new(vec![
            vec![w2(&g), LinOp::scale(0.5, LinOp::identity(g.clone()))],
            vec![
                LinOp::multiplication(sample(|x| x, &g).unwrap()),
                LinOp::scaled_identity(g.clone(), 2.0),
            ],
        ])
        .unwrap();
        let adj = b.adjoint();
        let u = vec![random_fn(&g, &mut rng), random_fn(&g, &mut rng)];
        let v = vec![random_fn(&g, &mut rng), random_fn(&g, &mut rng)];
        let bu = b.apply_components(&u).unwrap();
        let av = adj.apply_components(&v).unwrap();
        let lhs: f64 = bu
            .iter()
            .zip(v.iter())
            .map(|(x, y)| inner_product(x, y).unwrap())
            .sum();
        let rhs: f64 = u
            .iter()
            .zip(av.iter())
            .map(|(x, y)| inner_product(x, y).unwrap())
            .sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn action_matrix_round_trip() {
        let g = grid01(19);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let op = LinOp::sum(vec![
            w2(&g),
            LinOp::rank_one(sample(|x| x, &g).unwrap(), sample(|x| x * x, &g).unwrap()).unwrap(),
        ])
        .unwrap();
        let m = op.action_matrix();
        let wrapped = LinOp::from_action_matrix(g.clone(), m).unwrap();
        for _ in 0..5 {
            let u = random_fn(&g, &mut rng);
            let d = apply(&wrapped, &u)
                .unwrap()
                .axpy(-1.0, &apply(&op, &u).unwrap())
                .unwrap();
            assert!(d.norm() < 1e-12);
        }
    }
}
