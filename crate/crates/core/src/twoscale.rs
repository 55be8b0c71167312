//! Two-scale expansion `w = v̄ + Σ_k ∂_k(v̄ ⋆ ζ) φ^(λ)_k`, the vector field
//! `F` with `div(a∇w - ā∇v̄) = div F`, the random variables `X₁, X₂, Y₁`, and
//! evaluation of the two-scale error bound.
//!
//! Correctors live on a torus and are read on `U_r` by periodic extension.
//! The work is carried out on `U_r` padded by one unit cell on each side, so
//! that every stencil touching an edge of `U_r` is available.
//!
//! Discretization: `P_k` is the central difference of `ψ = v̄ ⋆ ζ` at nodes,
//! products of node and edge quantities use the average over the edge
//! endpoints, and `S` (plaquette centred) is paired with `P_k` averaged to
//! plaquettes.

use crate::coefficient::CoefficientField;
use crate::grid::{divergence, gradient, BoundaryKind, Domain, Layout, ScalarField, VectorField};
use crate::homogenization::{CorrectorSet, Regularized};
use crate::norms::{convolve, ell_lambda, local_cell_norms, norm_hk, norm_lp, CellNorm, HNeg1, MollifierSpec, Region};
use crate::operator::{cg_solve, CgOptions, Conductance, SparseOperator};
use crate::{Error, Result};

fn regularized(set: &CorrectorSet) -> Result<&Regularized> {
    set.regularized
        .as_ref()
        .ok_or_else(|| Error::param("correctors must be regularized first"))
}

/// Padded copy of a Dirichlet domain plus the index maps to it and to the
/// corrector torus.
struct Workspace {
    ext: Domain,
    pad: usize,
    /// ext node -> torus node
    to_torus: Vec<usize>,
}

impl Workspace {
    fn new(u: &Domain, torus: &Domain) -> Result<Self> {
        if u.kind() != BoundaryKind::Dirichlet {
            return Err(Error::WrongBoundary("Dirichlet"));
        }
        if !torus.is_periodic() || torus.m() != u.m() || torus.dim() != u.dim() {
            return Err(Error::ResolutionMismatch(format!(
                "v̄ grid (d={}, m={}) vs corrector grid (d={}, m={})",
                u.dim(),
                u.m(),
                torus.dim(),
                torus.m()
            )));
        }
        let d = u.dim();
        let m = u.m();
        let mut shift = [0i64; 3];
        shift[..d].fill(-1);
        let ext = Domain::new(d, u.r() + 2.0, m, BoundaryKind::Dirichlet)?.translated(u.origin()).translated(shift);
        let n_t = torus.shape();
        let to_torus = (0..ext.len())
            .map(|e| {
                let mi = ext.multi(e);
                let mut t = [0usize; 3];
                for k in 0..d {
                    let global = mi[k] as i64 + (ext.origin()[k] - torus.origin()[k]) * m as i64;
                    t[k] = global.rem_euclid(n_t[k] as i64) as usize;
                }
                torus.index(t)
            })
            .collect();
        Ok(Workspace { ext, pad: m, to_torus })
    }

    fn ext_of(&self, u: &Domain, idx: usize) -> usize {
        let mut mi = u.multi(idx);
        for v in mi.iter_mut().take(u.dim()) {
            *v += self.pad;
        }
        self.ext.index(mi)
    }

    fn embed(&self, f: &ScalarField) -> ScalarField {
        let mut out = ScalarField::zeros(&self.ext);
        let vals = out.values_mut();
        for i in 0..f.domain().len() {
            vals[self.ext_of(f.domain(), i)] = f.get(i);
        }
        out
    }

    fn from_torus(&self, values: &[f64]) -> Vec<f64> {
        self.to_torus.iter().map(|&t| values[t]).collect()
    }

    fn restrict(&self, f: &[f64], u: &Domain) -> ScalarField {
        let vals = (0..u.len()).map(|i| f[self.ext_of(u, i)]).collect();
        ScalarField::from_values(u, vals).expect("shape")
    }
}

/// `ψ = v̄ ⋆ ζ` on the padded grid and its central differences `P_k`.
fn smoothed_derivatives(ws: &Workspace, vbar_ext: &ScalarField) -> Result<(ScalarField, Vec<Vec<f64>>)> {
    let ext = ws.ext;
    let psi = convolve(vbar_ext, &MollifierSpec::bump(1.0))?;
    let inv_2h = ext.m() as f64 / 2.0;
    let p = (0..ext.dim())
        .map(|k| {
            (0..ext.len())
                .map(|x| {
                    let mi = ext.multi(x);
                    match (ext.forward(x, mi, k), ext.backward(x, mi, k)) {
                        (Some(a), Some(b)) => (psi.get(a) - psi.get(b)) * inv_2h,
                        _ => 0.0,
                    }
                })
                .collect()
        })
        .collect();
    Ok((psi, p))
}

fn check_inputs(vbar: &ScalarField) -> Result<()> {
    if vbar.domain().kind() != BoundaryKind::Dirichlet {
        return Err(Error::WrongBoundary("Dirichlet"));
    }
    if !vbar.is_zero_trace() {
        return Err(Error::param("v̄ must vanish on the boundary"));
    }
    Ok(())
}

/// The two-scale expansion of `v̄` with the regularized correctors of `set`.
pub fn expand(vbar: &ScalarField, set: &CorrectorSet) -> Result<ScalarField> {
    check_inputs(vbar)?;
    let reg = regularized(set)?;
    let ws = Workspace::new(vbar.domain(), set.domain())?;
    let (_, p) = smoothed_derivatives(&ws, &ws.embed(vbar))?;
    let mut w = ws.embed(vbar).into_values();
    for (k, pk) in p.iter().enumerate() {
        let phi = ws.from_torus(reg.phi[k].values());
        for x in 0..w.len() {
            w[x] += pk[x] * phi[x];
        }
    }
    Ok(ws.restrict(&w, vbar.domain()))
}

/// `F` on the edges of `U_r`, such that `div(a∇w - ā∇v̄) = div F` up to the
/// discretization error.
pub fn assemble_f(vbar: &ScalarField, set: &CorrectorSet) -> Result<VectorField> {
    check_inputs(vbar)?;
    let reg = regularized(set)?;
    let u = *vbar.domain();
    let ws = Workspace::new(&u, set.domain())?;
    let ext = ws.ext;
    let d = u.dim();
    let inv_h = u.m() as f64;
    let abar = set.abar;

    let vbar_e = ws.embed(vbar);
    let (psi, p) = smoothed_derivatives(&ws, &vbar_e)?;
    let diff: Vec<f64> = vbar_e.values().iter().zip(psi.values()).map(|(a, b)| a - b).collect();
    let field_ext = set.field().on_domain(&ext)?;
    let cond = Conductance::from_field(&field_ext);
    let off = cond.offdiagonal();

    let phi: Vec<Vec<f64>> = reg.phi.iter().map(|f| ws.from_torus(f.values())).collect();
    // S^(λ)_k,ij for all ordered pairs, as closures over stored entries
    let s_entries: Vec<Vec<Vec<f64>>> = reg
        .flux
        .iter()
        .map(|s| s.entries().iter().map(|e| ws.from_torus(e.values())).collect())
        .collect();
    let s_val = |k: usize, i: usize, j: usize, x: usize| -> f64 {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Less => s_entries[k][crate::homogenization::pair_index(d, i, j)][x],
            Greater => -s_entries[k][crate::homogenization::pair_index(d, j, i)][x],
            Equal => 0.0,
        }
    };
    let grad_phi_s: Vec<Vec<Vec<f64>>> = reg
        .grad_phi_smooth
        .iter()
        .map(|g| (0..d).map(|j| ws.from_torus(g.component(j))).collect())
        .collect();
    let div_s_s: Vec<Vec<Vec<f64>>> = reg
        .div_flux_smooth
        .iter()
        .map(|g| (0..d).map(|j| ws.from_torus(g.component(j))).collect())
        .collect();

    let step = |x: usize, k: usize, s: i64| -> usize {
        let mut off = [0i64; 3];
        off[k] = s;
        ext.offset(ext.multi(x), off).expect("padding covers the stencil")
    };
    // P_k averaged over the plaquette with base b in the (i, j) plane
    let q_val = |k: usize, i: usize, j: usize, b: usize| -> f64 {
        let bi = step(b, i, 1);
        let bj = step(b, j, 1);
        let bij = step(bi, j, 1);
        0.25 * (p[k][b] + p[k][bi] + p[k][bj] + p[k][bij])
    };

    let mut out = VectorField::zeros(&u, Layout::Edge);
    for i in 0..d {
        let comp: Vec<f64> = (0..u.len())
            .map(|ui| {
                if u.forward(ui, u.multi(ui), i).is_none() {
                    return 0.0;
                }
                let x = ws.ext_of(&u, ui);
                let xi = step(x, i, 1);
                let dj = |f: &[f64], j: usize| (f[step(x, j, 1)] - f[x]) * inv_h;
                let avg_i = |f: &[f64]| 0.5 * (f[x] + f[xi]);
                let a_ij = |j: usize| if j == i { cond.edges(i)[x] } else { off[i][j] };

                // (a - ā) ∇(v̄ - ψ)
                let mut t1 = 0.0;
                for j in 0..d {
                    t1 += (a_ij(j) - abar.get(i, j)) * dj(&diff, j);
                }
                // (a φ^(λ)_k - S^(λ)_k) ∂_j ∂_k ψ
                let mut t2 = 0.0;
                for k in 0..d {
                    let phi_avg = avg_i(&phi[k]);
                    for j in 0..d {
                        let a = a_ij(j);
                        if a != 0.0 {
                            t2 += a * phi_avg * dj(&p[k], j);
                        }
                    }
                    for j in (0..d).filter(|&j| j != i) {
                        let xm = step(x, j, -1);
                        let s_avg = 0.5 * (s_val(k, i, j, x) + s_val(k, i, j, xm));
                        let dq = (q_val(k, i, j, x) - q_val(k, i, j, xm)) * inv_h;
                        t2 -= s_avg * dq;
                    }
                }
                // (∇·S_k ⋆ Φ - a ∇φ_k ⋆ Φ) ∂_k ψ
                let mut t3 = 0.0;
                for k in 0..d {
                    let mut smooth = div_s_s[k][i][x];
                    for j in 0..d {
                        smooth -= a_ij(j) * grad_phi_s[k][j][x];
                    }
                    t3 += avg_i(&p[k]) * smooth;
                }
                t1 + t2 + t3
            })
            .collect();
        out.component_mut(i).copy_from_slice(&comp);
    }
    Ok(out)
}

/// Per-cell sums used by `X₁`, `X₂`, `Y₁`.
fn cell_sum(fields: &[ScalarField], region: &Region) -> Result<Vec<CellNorm>> {
    let mut acc: Option<Vec<CellNorm>> = None;
    for f in fields {
        let cells = local_cell_norms(f, 1.0, region)?;
        acc = Some(match acc {
            None => cells,
            Some(mut a) => {
                for (x, c) in a.iter_mut().zip(cells) {
                    x.value += c.value;
                }
                a
            }
        });
    }
    Ok(acc.unwrap_or_default())
}

/// `U_r` in the corrector torus coordinates.
fn region_of(domain: &Domain, torus: &Domain) -> Region {
    let mut reg = Region::whole(domain);
    for k in 0..domain.dim() {
        let s = (domain.origin()[k] - torus.origin()[k]) as f64;
        reg.lo[k] += s;
        reg.hi[k] += s;
    }
    reg
}

fn s_fields(reg: &Regularized, k: usize) -> Vec<ScalarField> {
    // ordered pairs: each stored entry counts for (i, j) and (j, i)
    reg.flux[k].entries().iter().flat_map(|e| [e.clone(), e.clone()]).collect()
}

/// `X₁ = Σ_k max_z (‖φ^(λ)_k‖ + Σ_{i≠j} ‖S^(λ)_k,ij‖)` over unit cells meeting `U_r`.
pub fn compute_x1(set: &CorrectorSet, domain: &Domain) -> Result<f64> {
    let reg = regularized(set)?;
    let region = region_of(domain, set.domain());
    let mut total = 0.0;
    for k in 0..domain.dim() {
        let mut fields = vec![reg.phi[k].clone()];
        fields.extend(s_fields(reg, k));
        total += cell_sum(&fields, &region)?.iter().fold(0.0f64, |a, c| a.max(c.value));
    }
    Ok(total)
}

/// `X₂`: as `X₁` with `∇φ_k ⋆ Φ` and `∇S_k,ij ⋆ Φ`.
pub fn compute_x2(set: &CorrectorSet, domain: &Domain) -> Result<f64> {
    let reg = regularized(set)?;
    let region = region_of(domain, set.domain());
    let mut total = 0.0;
    for k in 0..domain.dim() {
        let mut fields = vec![reg.grad_phi_smooth[k].magnitude()];
        for g in &reg.grad_flux_smooth[k] {
            let m = g.magnitude();
            fields.push(m.clone());
            fields.push(m);
        }
        total += cell_sum(&fields, &region)?.iter().fold(0.0f64, |a, c| a.max(c.value));
    }
    Ok(total)
}

/// Is the unit cell centred at `center` within distance `width` of `∂U_r`
/// (cells are clipped to `U_r`)?
fn in_band(center: &[f64; 3], dim: usize, r: f64, width: f64) -> bool {
    let mut closest = f64::INFINITY;
    let mut meets = true;
    for &c in center.iter().take(dim) {
        let lo = (c - 0.5).max(0.0);
        let hi = (c + 0.5).min(r);
        meets &= lo <= hi;
        closest = closest.min(lo).min(r - hi);
    }
    meets && closest <= width
}

/// `Y₁ = Σ_k max ‖φ^(λ)_k‖` over unit cells meeting the boundary band of
/// width `2ℓ(λ)`.
pub fn compute_y1(set: &CorrectorSet, domain: &Domain) -> Result<f64> {
    let reg = regularized(set)?;
    let width = 2.0 * ell_lambda(reg.lambda, domain.dim());
    let region = region_of(domain, set.domain());
    let shift: Vec<f64> = (0..3).map(|k| region.lo[k]).collect();
    let mut total = 0.0;
    for k in 0..domain.dim() {
        let cells = local_cell_norms(&reg.phi[k], 1.0, &region)?;
        let mut best: Option<f64> = None;
        for c in cells {
            let mut local = c.center;
            for (l, s) in local.iter_mut().zip(&shift) {
                *l -= s;
            }
            if in_band(&local, domain.dim(), domain.r(), width) {
                best = Some(best.unwrap_or(0.0).max(c.value));
            }
        }
        total += best.ok_or(Error::EmptyBand)?;
    }
    Ok(total)
}

/// Solve `(μ² - div a∇) v = (μ² - div ā∇) v̄` with zero boundary values.
pub fn solve_v(vbar: &ScalarField, field: &CoefficientField, set: &CorrectorSet, mu: f64, tol: f64) -> Result<ScalarField> {
    let u = vbar.domain();
    let cond = Conductance::from_field(field);
    let op = SparseOperator::assemble(&cond, mu * mu)?;
    let rhs = Conductance::from_matrix(u, &set.abar).apply(vbar, mu * mu);
    let (x, _) = cg_solve(&op, &op.restrict(&rhs), &CgOptions::with_tol(tol))?;
    Ok(op.extend(&x, None))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoScaleReport {
    pub lambda: f64,
    pub mu: f64,
    /// `‖v - w‖_H¹`.
    pub lhs: f64,
    /// `‖v̄‖_H² + (‖v̄‖_H² + μ‖v̄‖_H¹) X₁`.
    pub rhs_x1: f64,
    /// `(ℓ^{1/2} ‖v̄‖_H²^{1/2} ‖v̄‖_H¹^{1/2} + ‖v̄‖_H¹) X₂`.
    pub rhs_x2: f64,
    /// `(ℓ^{1/2}(μ + 1/r + 1/ℓ) ‖v̄‖_H²^{1/2} ‖v̄‖_H¹^{1/2} + ‖v̄‖_H²) Y₁`.
    pub rhs_y1: f64,
    pub x1: f64,
    pub x2: f64,
    pub y1: f64,
    pub vbar_h1: f64,
    pub vbar_h2: f64,
    /// `‖F‖_L²`.
    pub f_l2: f64,
    /// `‖div F‖_H⁻¹`.
    pub div_f_hneg1: f64,
    /// `‖div(a∇w - ā∇v̄)‖_H⁻¹`.
    pub flux_hneg1: f64,
    /// `‖div(a∇w - ā∇v̄ - F)‖_H⁻¹`.
    pub identity_residual: f64,
    /// `‖w - v̄‖_L²`.
    pub w_minus_vbar_l2: f64,
}

impl TwoScaleReport {
    pub fn rhs(&self) -> f64 {
        self.rhs_x1 + self.rhs_x2 + self.rhs_y1
    }
    /// `lhs / rhs` (0 when both vanish).
    pub fn ratio(&self) -> f64 {
        let r = self.rhs();
        if r == 0.0 {
            0.0
        } else {
            self.lhs / r
        }
    }
}

/// Residual of the identity `div(a∇w - ā∇v̄) = div F`, plus the two sides'
/// `H⁻¹` norms and `‖F‖_L²`.
pub struct IdentityCheck {
    pub residual: f64,
    pub flux_hneg1: f64,
    pub div_f_hneg1: f64,
    pub f_l2: f64,
}

pub fn identity_check(vbar: &ScalarField, w: &ScalarField, set: &CorrectorSet, f: &VectorField) -> Result<IdentityCheck> {
    let u = vbar.domain();
    let field_u = set.field().on_domain(u)?;
    let aw = Conductance::from_field(&field_u).flux(&gradient(w));
    let av = Conductance::from_matrix(u, &set.abar).flux(&gradient(vbar));
    let g = aw.sub(&av);
    let hneg = HNeg1::new(u)?;
    Ok(IdentityCheck {
        residual: hneg.norm(&divergence(&g.sub(f)))?,
        flux_hneg1: hneg.norm(&divergence(&g))?,
        div_f_hneg1: hneg.norm(&divergence(f))?,
        f_l2: norm_lp(&f.magnitude(), &Region::whole(u), 2.0)?,
    })
}

/// Evaluate both sides of the two-scale bound for `v̄` at shift `μ`.
pub fn evaluate_bound(vbar: &ScalarField, set: &CorrectorSet, mu: f64, tol: f64) -> Result<TwoScaleReport> {
    check_inputs(vbar)?;
    let reg = regularized(set)?;
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::param("mu must be nonnegative"));
    }
    let u = *vbar.domain();
    let lambda = reg.lambda;
    let field_u = set.field().on_domain(&u)?;
    let v = solve_v(vbar, &field_u, set, mu, tol)?;
    let w = expand(vbar, set)?;
    let f = assemble_f(vbar, set)?;
    let check = identity_check(vbar, &w, set, &f)?;
    let whole = Region::whole(&u);
    let lhs = norm_hk(&v.sub(&w), &whole, 1)?;
    let h1 = norm_hk(vbar, &whole, 1)?;
    let h2 = norm_hk(vbar, &whole, 2)?;
    let x1 = compute_x1(set, &u)?;
    let x2 = compute_x2(set, &u)?;
    let y1 = compute_y1(set, &u)?;
    let ell = ell_lambda(lambda, u.dim());
    let mixed = (h2 * h1).sqrt();
    Ok(TwoScaleReport {
        lambda,
        mu,
        lhs,
        rhs_x1: h2 + (h2 + mu * h1) * x1,
        rhs_x2: (ell.sqrt() * mixed + h1) * x2,
        rhs_y1: (ell.sqrt() * (mu + 1.0 / u.r() + 1.0 / ell) * mixed + h2) * y1,
        x1,
        x2,
        y1,
        vbar_h1: h1,
        vbar_h2: h2,
        f_l2: check.f_l2,
        div_f_hneg1: check.div_f_hneg1,
        flux_hneg1: check.flux_hneg1,
        identity_residual: check.residual,
        w_minus_vbar_l2: norm_lp(&w.sub(vbar), &whole, 2.0)?,
    })
}

/// `Π_k sin(π x_k / r)`, the default smooth zero-trace test function.
pub fn sine_product(domain: &Domain) -> ScalarField {
    let r = domain.r();
    let d = domain.dim();
    ScalarField::from_fn(domain, |x| {
        (0..d).map(|k| (std::f64::consts::PI * x[k] / r).sin()).product()
    })
    .zero_trace()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{sample_field, LayerProfile, Model};
    use crate::homogenization::{compute_correctors, regularize_correctors, CorrectorOptions};
    use crate::linalg::SymMat;

    fn setup(model: Model, l: f64, m: usize, lambda: f64) -> CorrectorSet {
        let t = Domain::new(2, l, m, BoundaryKind::Periodic).unwrap();
        let f = sample_field(&t, 21, model, 4.0).unwrap();
        regularize_correctors(&compute_correctors(&f, &CorrectorOptions::default()).unwrap(), lambda).unwrap()
    }

    fn dir(r: f64, m: usize) -> Domain {
        Domain::new(2, r, m, BoundaryKind::Dirichlet).unwrap()
    }

    #[test]
    fn zero_inputs() {
        let set = setup(Model::TwoPhase { p: 0.5, a1: 1.0, a2: 4.0 }, 4.0, 2, 0.25);
        let u = dir(4.0, 2);
        let zero = ScalarField::zeros(&u);
        assert!(expand(&zero, &set).unwrap().max_abs() == 0.0);
        let f = assemble_f(&zero, &set).unwrap();
        assert!(f.components().iter().flatten().all(|&v| v == 0.0));
        let rep = evaluate_bound(&zero, &set, 0.0, 1e-10).unwrap();
        assert_eq!(rep.lhs, 0.0);
        assert_eq!(rep.rhs(), 0.0);
    }

    #[test]
    fn zero_correctors_give_vbar() {
        let t = Domain::new(2, 4.0, 4, BoundaryKind::Periodic).unwrap();
        let field = sample_field(&t, 0, Model::constant_scalar(2.0), 2.0).unwrap();
        let set = regularize_correctors(&CorrectorSet::trivial(&field, SymMat::scalar(2, 2.0)).unwrap(), 0.25).unwrap();
        let u = dir(4.0, 4);
        let vbar = sine_product(&u);
        assert_eq!(expand(&vbar, &set).unwrap(), vbar);
        let f = assemble_f(&vbar, &set).unwrap();
        assert!(f.components().iter().flatten().all(|v| v.abs() < 1e-14));
        let rep = evaluate_bound(&vbar, &set, 0.0, 1e-12).unwrap();
        assert!(rep.lhs < 1e-9, "{}", rep.lhs);
        assert_eq!((rep.x1, rep.x2, rep.y1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn expansion_pointwise() {
        let set = setup(Model::TwoPhase { p: 0.5, a1: 1.0, a2: 4.0 }, 4.0, 4, 0.25);
        let u = dir(4.0, 4);
        let vbar = sine_product(&u);
        let w = expand(&vbar, &set).unwrap();
        let reg = set.regularized.as_ref().unwrap();
        let stencil = crate::norms::bump_stencil(2, 1.0, u.h());
        let n = set.domain().shape()[0];
        let v_at = |i: i64, j: i64| -> f64 {
            if (0..=16).contains(&i) && (0..=16).contains(&j) {
                vbar.get(u.index([i as usize, j as usize, 0]))
            } else {
                0.0
            }
        };
        let psi = |i: i64, j: i64| -> f64 { stencil.iter().map(|(t, w)| w * v_at(i - t[0], j - t[1])).sum() };
        for (i, j) in [(3i64, 5i64), (8, 8), (1, 1), (15, 2), (10, 12)] {
            let h = u.h();
            let p1 = (psi(i + 1, j) - psi(i - 1, j)) / (2.0 * h);
            let p2 = (psi(i, j + 1) - psi(i, j - 1)) / (2.0 * h);
            let t = set.domain().index([(i as usize) % n, (j as usize) % n, 0]);
            let expect = p1 * reg.phi[0].get(t) + p2 * reg.phi[1].get(t);
            let idx = u.index([i as usize, j as usize, 0]);
            assert!((w.get(idx) - vbar.get(idx) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_residual_decreases() {
        let model = Model::Layered { axis: 0, profile: LayerProfile::Random { p: 0.5, a1: 1.0, a2: 4.0 } };
        let mut res = vec![];
        for m in [2usize, 4, 8] {
            let set = setup(model.clone(), 8.0, m, 0.25);
            let u = dir(8.0, m);
            let vbar = sine_product(&u);
            let w = expand(&vbar, &set).unwrap();
            let f = assemble_f(&vbar, &set).unwrap();
            let c = identity_check(&vbar, &w, &set, &f).unwrap();
            assert!(c.residual < c.flux_hneg1, "m={m}: {} vs {}", c.residual, c.flux_hneg1);
            res.push(c.residual);
        }
        assert!(res[0] > res[1] && res[1] > res[2], "{res:?}");
        assert!((res[1] / res[2]).log2() >= 0.9, "{res:?}");
    }

    #[test]
    fn random_variables_relations() {
        let set = setup(Model::TwoPhase { p: 0.5, a1: 1.0, a2: 4.0 }, 8.0, 2, 0.25);
        let u = dir(8.0, 2);
        let x1 = compute_x1(&set, &u).unwrap();
        let y1 = compute_y1(&set, &u).unwrap();
        // φ-only part of X₁
        let reg = set.regularized.as_ref().unwrap();
        let region = Region::whole(&u);
        let phi_part: f64 = (0..2)
            .map(|k| crate::norms::max_cell_norm(&reg.phi[k], 1.0, &region).unwrap())
            .sum();
        assert!(y1 <= phi_part + 1e-15);
        assert!(phi_part <= x1);
        // small domain: the band covers everything
        let small = dir(3.0, 2);
        let phi_small: f64 = (0..2)
            .map(|k| crate::norms::max_cell_norm(&reg.phi[k], 1.0, &Region::whole(&small)).unwrap())
            .sum();
        assert!((compute_y1(&set, &small).unwrap() - phi_small).abs() < 1e-15);
        // nested domains
        let big = dir(16.0, 2);
        assert!(compute_x1(&set, &big).unwrap() >= x1);
        assert!(compute_x2(&set, &big).unwrap() >= compute_x2(&set, &u).unwrap());
    }

    #[test]
    fn mismatched_resolution_rejected() {
        let set = setup(Model::TwoPhase { p: 0.5, a1: 1.0, a2: 4.0 }, 4.0, 2, 0.25);
        let u = dir(4.0, 4);
        assert!(matches!(expand(&sine_product(&u), &set), Err(Error::ResolutionMismatch(_))));
    }
}
