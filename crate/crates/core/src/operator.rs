//! Sparse assembly of `μ² - div(a grad)`, conjugate gradients, and spectral
//! condition-number estimates.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coefficient::CoefficientField;
use crate::grid::{dot, BoundaryKind, Domain, Layout, ScalarField, VectorField};
use crate::linalg::SymMat;
use crate::{Error, Result};

/// Edge conductances on a grid: per-axis diagonal entries on each edge, plus
/// a spatially constant off-diagonal block.
///
/// The flux on edge `(x, x + h e_i)` is `C_ii(x) D_i f(x) + Σ_{j≠i} C_ij D_j f(x)`,
/// which keeps the bilinear form `Σ_x Σ_ij C_ij D_j f D_i g` symmetric.
#[derive(Clone, Debug)]
pub struct Conductance {
    domain: Domain,
    diag: Vec<Vec<f64>>,
    off: [[f64; 3]; 3],
}

impl Conductance {
    pub fn from_field(field: &CoefficientField) -> Self {
        let dom = *field.domain();
        let diag = (0..dom.dim())
            .map(|k| {
                (0..dom.len())
                    .into_par_iter()
                    .map(|i| {
                        if dom.forward(i, dom.multi(i), k).is_some() {
                            field.edge_coefficient(i, k)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Conductance { domain: dom, diag, off: field.offdiagonal() }
    }

    pub fn from_matrix(domain: &Domain, a: &SymMat) -> Self {
        let dom = *domain;
        let mut off = a.as_array();
        let diag = (0..dom.dim())
            .map(|k| {
                off[k][k] = 0.0;
                (0..dom.len())
                    .map(|i| if dom.forward(i, dom.multi(i), k).is_some() { a.get(k, k) } else { 0.0 })
                    .collect()
            })
            .collect();
        Conductance { domain: dom, diag, off }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Diagonal conductances along `axis`, one per edge start node.
    pub fn edges(&self, axis: usize) -> &[f64] {
        &self.diag[axis]
    }

    pub fn offdiagonal(&self) -> [[f64; 3]; 3] {
        self.off
    }

    pub fn has_offdiagonal(&self) -> bool {
        self.off.iter().flatten().any(|&v| v != 0.0)
    }

    /// `a ∇f` for an edge gradient field.
    pub fn flux(&self, grad: &VectorField) -> VectorField {
        assert_eq!(grad.layout(), Layout::Edge);
        let dom = self.domain;
        let d = dom.dim();
        let comps = (0..d)
            .map(|i| {
                (0..dom.len())
                    .map(|x| {
                        let mut q = self.diag[i][x] * grad.component(i)[x];
                        if self.off[i].iter().any(|&v| v != 0.0) && dom.forward(x, dom.multi(x), i).is_some() {
                            for j in (0..d).filter(|&j| j != i) {
                                q += self.off[i][j] * grad.component(j)[x];
                            }
                        }
                        q
                    })
                    .collect()
            })
            .collect();
        VectorField::from_components(&dom, Layout::Edge, comps).expect("shape preserved")
    }

    /// Matrix-free `μ² f - div(a ∇f)` at every node (boundary rows included).
    pub fn apply(&self, f: &ScalarField, mu2: f64) -> ScalarField {
        let q = self.flux(&crate::grid::gradient(f));
        let div = crate::grid::divergence(&q);
        let vals = f.values().iter().zip(div.values()).map(|(a, b)| mu2 * a - b).collect();
        ScalarField::from_values(f.domain(), vals).expect("shape preserved")
    }
}

/// Symmetric sparse matrix in compressed-row form, optionally tied to a grid
/// (unknowns = interior nodes for Dirichlet, all nodes for periodic).
#[derive(Clone, Debug)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
    mu2: f64,
    domain: Option<Domain>,
    node_of: Vec<usize>,
    unknown_of: Vec<usize>,
}

const NONE: usize = usize::MAX;

impl SparseOperator {
    /// Assemble `μ² - div(C ∇·)` on the unknowns of the conductance's grid.
    pub fn assemble(cond: &Conductance, mu2: f64) -> Result<Self> {
        if !(mu2.is_finite() && mu2 >= 0.0) {
            return Err(Error::param(format!("mu^2 = {mu2} must be nonnegative")));
        }
        let dom = cond.domain;
        let d = dom.dim();
        let node_of: Vec<usize> = dom.interior_indices();
        let mut unknown_of = vec![NONE; dom.len()];
        for (u, &x) in node_of.iter().enumerate() {
            unknown_of[x] = u;
        }
        let inv_h2 = (dom.m() * dom.m()) as f64;
        // Only the upper triangle is accumulated so mirrored entries are
        // bit-identical.
        let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(node_of.len() * (4 * d + 1));
        for x in 0..dom.len() {
            let mi = dom.multi(x);
            let fwd: Vec<Option<usize>> = (0..d).map(|k| dom.forward(x, mi, k)).collect();
            for j in 0..d {
                let Some(lj) = fwd[j] else { continue };
                for k in 0..d {
                    let Some(lk) = fwd[k] else { continue };
                    let c = if j == k { cond.diag[j][x] } else { cond.off[j][k] };
                    if c == 0.0 {
                        continue;
                    }
                    let c = c * inv_h2;
                    // K[b][a] += c s_a s_b with a ∈ {lj:+1, x:-1}, b ∈ {lk:+1, x:-1}
                    for (a, sa) in [(lj, 1.0), (x, -1.0)] {
                        for (b, sb) in [(lk, 1.0), (x, -1.0)] {
                            let (ua, ub) = (unknown_of[a], unknown_of[b]);
                            // upper triangle only (row b ≤ col a); mirrored later
                            if ua == NONE || ub == NONE || ub > ua {
                                continue;
                            }
                            trip.push((ub, ua, c * sa * sb));
                        }
                    }
                }
            }
        }
        let n = node_of.len();
        let mut op = Self::from_upper_triplets(n, trip, mu2)?;
        op.domain = Some(dom);
        op.node_of = node_of;
        op.unknown_of = unknown_of;
        Ok(op)
    }

    /// Build from triplets given on the upper triangle (row ≤ col); duplicates are summed.
    fn from_upper_triplets(n: usize, mut trip: Vec<(usize, usize, f64)>, mu2: f64) -> Result<Self> {
        for i in 0..n {
            if mu2 != 0.0 {
                trip.push((i, i, mu2));
            }
        }
        trip.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(trip.len());
        for (r, c, v) in trip {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        let mut full: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * merged.len());
        for &(r, c, v) in &merged {
            full.push((r, c, v));
            if r != c {
                full.push((c, r, v));
            }
        }
        full.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(full.len());
        let mut vals = Vec::with_capacity(full.len());
        let mut diag = vec![0.0; n];
        for &(r, c, v) in &full {
            if r >= n || c >= n {
                return Err(Error::param(format!("entry ({r}, {c}) outside a {n}x{n} matrix")));
            }
            row_ptr[r + 1] += 1;
            cols.push(c);
            vals.push(v);
            if r == c {
                diag[r] = v;
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        if let Some(i) = diag.iter().position(|&v| v <= 0.0) {
            return Err(Error::param(format!("diagonal entry {i} is not positive")));
        }
        Ok(SparseOperator {
            n,
            row_ptr,
            cols,
            vals,
            diag,
            mu2,
            domain: None,
            node_of: (0..n).collect(),
            unknown_of: (0..n).collect(),
        })
    }

    /// Symmetric matrix from arbitrary triplets; rejects asymmetric input.
    pub fn from_triplets(n: usize, trip: &[(usize, usize, f64)]) -> Result<Self> {
        let mut upper = std::collections::BTreeMap::new();
        let mut lower = std::collections::BTreeMap::new();
        for &(r, c, v) in trip {
            let target = if r <= c { &mut upper } else { &mut lower };
            *target.entry((r.min(c), r.max(c))).or_insert(0.0) += v;
        }
        let keys: std::collections::BTreeSet<_> =
            upper.keys().chain(lower.keys()).filter(|k| k.0 != k.1).copied().collect();
        for k in keys {
            if upper.get(&k).copied().unwrap_or(0.0) != lower.get(&k).copied().unwrap_or(0.0) {
                return Err(Error::param("matrix is not symmetric"));
            }
        }
        Self::from_upper_triplets(n, upper.into_iter().map(|((r, c), v)| (r, c, v)).collect(), 0.0)
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut trip = vec![];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::param("dense matrix must be square"));
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, &trip)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_upper_triplets(n, vec![], 1.0).expect("identity is valid")
    }

    pub fn size(&self) -> usize {
        self.n
    }
    pub fn mu2(&self) -> f64 {
        self.mu2
    }
    pub fn domain(&self) -> Option<&Domain> {
        self.domain.as_ref()
    }
    pub fn boundary_kind(&self) -> Option<BoundaryKind> {
        self.domain.map(|d| d.kind())
    }
    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Periodic grid operator without shift: constants are in the kernel.
    pub fn is_singular(&self) -> bool {
        self.domain.is_some_and(|d| d.is_periodic()) && self.mu2 == 0.0
    }

    /// Row `i` as `(col, value)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        let row = |(i, yi): (usize, &mut f64)| {
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut s = 0.0;
            for p in a..b {
                s += self.vals[p] * x[self.cols[p]];
            }
            *yi = s;
        };
        if self.n >= 4096 {
            y.par_iter_mut().enumerate().with_min_len(2048).for_each(row);
        } else {
            y.iter_mut().enumerate().for_each(row);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        out
    }

    /// Values of `f` at the unknowns.
    pub fn restrict(&self, f: &ScalarField) -> Vec<f64> {
        self.node_of.iter().map(|&x| f.get(x)).collect()
    }

    /// Grid field holding `x` at the unknowns and `base` (or 0) elsewhere.
    pub fn extend(&self, x: &[f64], base: Option<&ScalarField>) -> ScalarField {
        let dom = self.domain.expect("grid operator");
        let mut f = match base {
            Some(b) => b.clone(),
            None => ScalarField::zeros(&dom),
        };
        let vals = f.values_mut();
        for (u, &node) in self.node_of.iter().enumerate() {
            vals[node] = x[u];
        }
        f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CgVariant {
    Plain,
    Jacobi,
}

impl std::fmt::Display for CgVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CgVariant::Plain => "plain",
            CgVariant::Jacobi => "jacobi",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub variant: CgVariant,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions { tol: 1e-8, max_iter: 200_000, variant: CgVariant::Jacobi }
    }
}

impl CgOptions {
    pub fn with_tol(tol: f64) -> Self {
        CgOptions { tol, ..Default::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub wall_time: f64,
    pub variant: CgVariant,
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

fn project_mean_zero(x: &mut [f64]) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
}

/// Solve `op x = rhs` by (preconditioned) conjugate gradients from `x = 0`.
///
/// Singular periodic systems are solved in the mean-zero complement: the
/// right-hand side is projected and so is the returned solution.
pub fn cg_solve(op: &SparseOperator, rhs: &[f64], opts: &CgOptions) -> Result<(Vec<f64>, SolveReport)> {
    cg_solve_from(op, rhs, vec![0.0; op.size()], opts)
}

pub fn cg_solve_from(
    op: &SparseOperator,
    rhs: &[f64],
    mut x: Vec<f64>,
    opts: &CgOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let start = Instant::now();
    if !(opts.tol > 0.0 && opts.tol < 1.0) {
        return Err(Error::param(format!("tolerance {} not in (0, 1)", opts.tol)));
    }
    let n = op.size();
    if rhs.len() != n || x.len() != n {
        return Err(Error::param("right-hand side length does not match operator"));
    }
    let singular = op.is_singular();
    let mut b = rhs.to_vec();
    if singular {
        project_mean_zero(&mut b);
        project_mean_zero(&mut x);
    }
    let bnorm = norm(&b);
    let report = |iterations, rel, variant| SolveReport {
        iterations,
        relative_residual: rel,
        wall_time: start.elapsed().as_secs_f64(),
        variant,
    };
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], report(0, 0.0, opts.variant)));
    }
    let target = opts.tol * bnorm;
    let precondition = |r: &[f64], z: &mut [f64]| match opts.variant {
        CgVariant::Plain => z.copy_from_slice(r),
        CgVariant::Jacobi => {
            for ((zi, ri), di) in z.iter_mut().zip(r).zip(&op.diag) {
                *zi = ri / di;
            }
        }
    };

    let mut iterations = 0usize;
    let mut best = x.clone();
    let mut best_res = f64::INFINITY;
    let mut ap = vec![0.0; n];
    let mut z = vec![0.0; n];
    // restart loop guards against drift between recursive and true residuals
    for _restart in 0..4 {
        let mut r = b.clone();
        op.matvec(&x, &mut ap);
        for (ri, a) in r.iter_mut().zip(&ap) {
            *ri -= a;
        }
        if singular {
            project_mean_zero(&mut r);
        }
        let mut rnorm = norm(&r);
        if rnorm <= target {
            if singular {
                project_mean_zero(&mut x);
            }
            return Ok((x, report(iterations, rnorm / bnorm, opts.variant)));
        }
        if rnorm < best_res {
            best_res = rnorm;
            best.copy_from_slice(&x);
        }
        precondition(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while rnorm > target && iterations < opts.max_iter {
            op.matvec(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            rnorm = norm(&r);
            if rnorm < 0.5 * best_res {
                best_res = rnorm;
                best.copy_from_slice(&x);
            }
            precondition(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if iterations >= opts.max_iter {
            break;
        }
    }
    // final check on the true residual
    let mut r = b.clone();
    op.matvec(&x, &mut ap);
    for (ri, a) in r.iter_mut().zip(&ap) {
        *ri -= a;
    }
    if singular {
        project_mean_zero(&mut r);
        project_mean_zero(&mut x);
    }
    let rel = norm(&r) / bnorm;
    if rel <= opts.tol {
        return Ok((x, report(iterations, rel, opts.variant)));
    }
    let (best, rel) = if rel * bnorm <= best_res { (x, rel) } else { (best, best_res / bnorm) };
    Err(Error::NotConverged { report: report(iterations, rel, opts.variant), best })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionEstimate {
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub rho: f64,
}

/// Extremal eigenvalues of an SPD operator: the largest by Lanczos with full
/// reorthogonalization (`power_iters` steps at most), the smallest by inverse
/// iteration with CG inner solves.
pub fn condition_estimate(op: &SparseOperator, power_iters: usize) -> Result<ConditionEstimate> {
    let n = op.size();
    if n == 0 {
        return Err(Error::EstimationFailed("empty operator".into()));
    }
    if op.is_singular() {
        return Err(Error::EstimationFailed("operator is singular".into()));
    }
    let steps = power_iters.clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0de);
    let mut start: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let s = norm(&start);
    start.iter_mut().for_each(|v| *v /= s);

    // Lanczos
    let mut basis: Vec<Vec<f64>> = vec![start.clone()];
    let mut alpha = vec![];
    let mut beta: Vec<f64> = vec![];
    let mut w = vec![0.0; n];
    for j in 0..steps {
        op.matvec(&basis[j], &mut w);
        let a = dot(&w, &basis[j]);
        alpha.push(a);
        for q in &basis {
            let c = dot(&w, q);
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi -= c * qi;
            }
        }
        let b = norm(&w);
        if j + 1 == steps || b <= 1e-13 * a.abs().max(1e-300) {
            break;
        }
        beta.push(b);
        basis.push(w.iter().map(|v| v / b).collect());
    }
    let k = alpha.len();
    let t = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let ritz = SymmetricEigen::new(t).eigenvalues;
    let kappa_max = ritz.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ritz_min = ritz.iter().copied().fold(f64::INFINITY, f64::min);
    drop(basis);

    // a Krylov space spanning everything already has the exact spectrum
    let kappa_min = if k == n {
        ritz_min
    } else {
        let opts = CgOptions { tol: 1e-10, max_iter: 100 * n + 1000, variant: CgVariant::Jacobi };
        let mut x = start;
        let mut prev = f64::INFINITY;
        let mut est = ritz_min;
        for _ in 0..power_iters.max(20) {
            let (y, _) = cg_solve(op, &x, &opts).map_err(|e| Error::EstimationFailed(e.to_string()))?;
            let yy = dot(&y, &y);
            est = dot(&x, &y) / yy;
            let ny = yy.sqrt();
            x = y.into_iter().map(|v| v / ny).collect();
            if (est - prev).abs() <= 1e-10 * est {
                break;
            }
            prev = est;
        }
        est
    };
    if !(kappa_min > 0.0 && kappa_max >= kappa_min) {
        return Err(Error::EstimationFailed(format!("inconsistent extremal values {kappa_min}, {kappa_max}")));
    }
    Ok(ConditionEstimate { kappa_min, kappa_max, rho: kappa_max / kappa_min })
}
