//! Volume-normalized norms, mollifiers and local cell norms.
//!
//! All integrals are node-weighted Riemann sums (weight `h^d` per node) and
//! every norm is normalized by the discrete measure of the region, so that
//! `‖c‖ = c` for constants.

use crate::grid::{gradient, BoundaryKind, Domain, ScalarField, VectorField};
use crate::linalg::SymMat;
use crate::operator::{cg_solve, CgOptions, Conductance, SparseOperator};
use crate::{Error, Result};

/// Half-open box `[lo, hi)` in local coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Region {
    /// `[0, r)^d`: every node of a torus, and a Dirichlet domain minus its
    /// upper faces (the zero-trace boundary nodes there carry no mass).
    pub fn whole(domain: &Domain) -> Self {
        let mut hi = [1.0; 3];
        hi[..domain.dim()].fill(domain.r());
        let mut lo = [0.0; 3];
        lo[domain.dim()..].fill(-0.5);
        hi[domain.dim()..].fill(0.5);
        Region { lo, hi }
    }

    /// Cube `center + [-side/2, side/2)^d`.
    pub fn cube(dim: usize, center: [f64; 3], side: f64) -> Self {
        let mut lo = [-0.5; 3];
        let mut hi = [0.5; 3];
        for k in 0..dim {
            lo[k] = center[k] - side / 2.0;
            hi[k] = center[k] + side / 2.0;
        }
        Region { lo, hi }
    }

    /// Node index ranges per axis, clipped to the grid.
    fn node_ranges(&self, domain: &Domain) -> [(usize, usize); 3] {
        let h = domain.h();
        let shape = domain.shape();
        let mut out = [(0, 1); 3];
        for k in 0..domain.dim() {
            let a = (self.lo[k] / h - 1e-9).ceil().max(0.0) as usize;
            let b = ((self.hi[k] / h - 1e-9).ceil().max(0.0) as usize).min(shape[k]);
            out[k] = (a, b.max(a));
        }
        out
    }

    /// Nodes of `domain` inside the region.
    pub fn nodes(&self, domain: &Domain) -> Vec<usize> {
        let r = self.node_ranges(domain);
        let mut out = Vec::with_capacity((r[0].1 - r[0].0) * (r[1].1 - r[1].0) * (r[2].1 - r[2].0));
        for i in r[0].0..r[0].1 {
            for j in r[1].0..r[1].1 {
                for k in r[2].0..r[2].1 {
                    out.push(domain.index([i, j, k]));
                }
            }
        }
        out
    }
}

fn mean_power(values: &[f64], nodes: &[usize], p: f64) -> f64 {
    if p.is_infinite() {
        nodes.iter().fold(0.0f64, |a, &i| a.max(values[i].abs()))
    } else if p == 2.0 {
        (nodes.iter().map(|&i| values[i] * values[i]).sum::<f64>() / nodes.len() as f64).sqrt()
    } else {
        (nodes.iter().map(|&i| values[i].abs().powf(p)).sum::<f64>() / nodes.len() as f64).powf(1.0 / p)
    }
}

/// `|S|^{-1/p} ‖f‖_{L^p(S)}`.
pub fn norm_lp(f: &ScalarField, region: &Region, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::param(format!("p = {p} must be at least 1")));
    }
    let nodes = region.nodes(f.domain());
    if nodes.is_empty() {
        return Err(Error::EmptySubdomain);
    }
    Ok(mean_power(f.values(), &nodes, p))
}

/// Normalized `L²` norm of the pointwise Euclidean length of an edge or node field.
pub fn norm_vector_l2(q: &VectorField, region: &Region) -> Result<f64> {
    norm_lp(&q.magnitude(), region, 2.0)
}

/// `‖∇f‖` in normalized `L²` over the region (forward differences).
pub fn norm_grad_l2(f: &ScalarField, region: &Region) -> Result<f64> {
    norm_vector_l2(&gradient(f), region)
}

/// One term `|S|^{(|β|-k)/d} ‖∂^β f‖` of the `H^k` norm.
#[derive(Clone, Debug, PartialEq)]
pub struct HkTerm {
    pub beta: [usize; 3],
    pub weight: f64,
    pub norm: f64,
}

/// Difference quotients `∂^β f` for all `|β| ≤ k`. First derivatives are
/// forward differences, pure second derivatives centred `D⁻D⁺`, mixed ones
/// `D_i⁺ D_j⁺`; stencils leaving a Dirichlet grid give 0.
fn derivatives(f: &ScalarField, k: usize) -> Vec<([usize; 3], Vec<f64>)> {
    let dom = *f.domain();
    let d = dom.dim();
    let v = f.values();
    let inv_h = dom.m() as f64;
    let mut out = vec![([0; 3], v.to_vec())];
    if k >= 1 {
        let g = gradient(f);
        for a in 0..d {
            let mut beta = [0; 3];
            beta[a] = 1;
            out.push((beta, g.component(a).to_vec()));
        }
    }
    if k >= 2 {
        for a in 0..d {
            for b in a..d {
                let mut beta = [0; 3];
                beta[a] += 1;
                beta[b] += 1;
                let vals = (0..dom.len())
                    .map(|x| {
                        let mi = dom.multi(x);
                        if a == b {
                            match (dom.forward(x, mi, a), dom.backward(x, mi, a)) {
                                (Some(p), Some(q)) => (v[p] - 2.0 * v[x] + v[q]) * inv_h * inv_h,
                                _ => 0.0,
                            }
                        } else {
                            let mut s = [0i64; 3];
                            s[a] = 1;
                            let pa = dom.offset(mi, s);
                            let mut s = [0i64; 3];
                            s[b] = 1;
                            let pb = dom.offset(mi, s);
                            let mut s = [0i64; 3];
                            s[a] = 1;
                            s[b] = 1;
                            let pab = dom.offset(mi, s);
                            match (pa, pb, pab) {
                                (Some(pa), Some(pb), Some(pab)) => {
                                    (v[pab] - v[pa] - v[pb] + v[x]) * inv_h * inv_h
                                }
                                _ => 0.0,
                            }
                        }
                    })
                    .collect();
                out.push((beta, vals));
            }
        }
    }
    out
}

/// The individual terms of [`norm_hk`].
pub fn hk_terms(f: &ScalarField, region: &Region, k: usize) -> Result<Vec<HkTerm>> {
    if !(1..=2).contains(&k) {
        return Err(Error::param(format!("H^{k} norm unsupported (k must be 1 or 2)")));
    }
    let dom = f.domain();
    let nodes = region.nodes(dom);
    if nodes.is_empty() {
        return Err(Error::EmptySubdomain);
    }
    let measure = nodes.len() as f64 * dom.cell_volume();
    let d = dom.dim() as f64;
    Ok(derivatives(f, k)
        .into_iter()
        .map(|(beta, vals)| {
            let order: usize = beta.iter().sum();
            HkTerm {
                beta,
                weight: measure.powf((order as f64 - k as f64) / d),
                norm: mean_power(&vals, &nodes, 2.0),
            }
        })
        .collect())
}

/// `Σ_{|β|≤k} |S|^{(|β|-k)/d} ‖∂^β f‖_{L²(S)}` (normalized norms).
pub fn norm_hk(f: &ScalarField, region: &Region, k: usize) -> Result<f64> {
    Ok(hk_terms(f, region, k)?.iter().map(|t| t.weight * t.norm).sum())
}

/// Riesz realization of the normalized `H⁻¹` norm on a Dirichlet domain.
///
/// The test space is zero-trace fields with the Hilbert inner product
/// `|U|^{-2/d}⟨f,g⟩ + ⟨∇f,∇g⟩` (normalized integrals); the dual pairing is
/// the normalized integral `|U|^{-1}∫fg`.
#[derive(Clone, Debug)]
pub struct HNeg1 {
    op: SparseOperator,
    weight: f64,
    tol: f64,
}

impl HNeg1 {
    pub fn new(domain: &Domain) -> Result<Self> {
        if domain.kind() != BoundaryKind::Dirichlet {
            return Err(Error::WrongBoundary("Dirichlet"));
        }
        let mu2 = domain.volume().powf(-2.0 / domain.dim() as f64);
        let cond = Conductance::from_matrix(domain, &SymMat::identity(domain.dim()));
        let op = SparseOperator::assemble(&cond, mu2)?;
        Ok(HNeg1 { op, weight: domain.cell_volume() / domain.volume(), tol: 1e-12 })
    }

    pub fn norm(&self, f: &ScalarField) -> Result<f64> {
        let rhs = self.op.restrict(f);
        if rhs.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }
        let (y, _) = cg_solve(&self.op, &rhs, &CgOptions::with_tol(self.tol))?;
        let s: f64 = rhs.iter().zip(&y).map(|(a, b)| a * b).sum();
        Ok((self.weight * s.max(0.0)).sqrt())
    }
}

pub fn norm_hneg1(f: &ScalarField) -> Result<f64> {
    HNeg1::new(f.domain())?.norm(f)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MollifierKind {
    /// `Φ_s(x) = (4π s²)^{-d/2} exp(-|x|²/(4s²))`.
    Heat,
    /// `ζ_ε(x) = ε^{-d} ζ(x/ε)` with `ζ ∝ exp(-1/(1/4 - |x|²))` on `|x| < 1/2`.
    Bump,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MollifierSpec {
    pub kind: MollifierKind,
    /// `s` for the heat kernel, `ε` for the bump.
    pub scale: f64,
    /// Heat kernel cut-off in per-axis standard deviations (`√2 s`).
    pub truncation: f64,
}

impl MollifierSpec {
    pub fn heat(scale: f64) -> Self {
        MollifierSpec { kind: MollifierKind::Heat, scale, truncation: 5.0 }
    }
    pub fn bump(eps: f64) -> Self {
        MollifierSpec { kind: MollifierKind::Bump, scale: eps, truncation: 0.0 }
    }
}

/// Normalized 1D heat weights `(offset, weight)`.
fn heat_weights(scale: f64, truncation: f64, h: f64) -> Vec<(i64, f64)> {
    let radius = truncation * std::f64::consts::SQRT_2 * scale;
    let t_max = (radius / h + 1e-9).floor() as i64;
    let mut w: Vec<(i64, f64)> = (-t_max..=t_max)
        .map(|t| {
            let x = t as f64 * h;
            (t, (-x * x / (4.0 * scale * scale)).exp())
        })
        .collect();
    let s: f64 = w.iter().map(|p| p.1).sum();
    w.iter_mut().for_each(|p| p.1 /= s);
    w
}

/// Convolve along one axis with `(offset, weight)` pairs. Periodic grids
/// wrap (kernels longer than the torus are folded), Dirichlet grids
/// extend by zero.
fn convolve_axis(values: &[f64], dom: &Domain, axis: usize, weights: &[(i64, f64)]) -> Vec<f64> {
    let n = dom.shape()[axis] as i64;
    let stride = dom.strides()[axis];
    let weights: Vec<(i64, f64)> = if dom.is_periodic() {
        let mut folded = vec![0.0; n as usize];
        for &(t, w) in weights {
            folded[t.rem_euclid(n) as usize] += w;
        }
        folded.into_iter().enumerate().filter(|p| p.1 != 0.0).map(|(t, w)| (t as i64, w)).collect()
    } else {
        weights.to_vec()
    };
    let mut out = vec![0.0; values.len()];
    for (x, o) in out.iter_mut().enumerate() {
        let i = dom.multi(x)[axis] as i64;
        let base = x - i as usize * stride;
        let mut s = 0.0;
        for &(t, w) in &weights {
            let j = i - t;
            let j = if dom.is_periodic() {
                j.rem_euclid(n)
            } else if (0..n).contains(&j) {
                j
            } else {
                continue;
            };
            s += w * values[base + j as usize * stride];
        }
        *o = s;
    }
    out
}

/// Discrete convolution `f ⋆ K` with a normalized kernel.
pub fn convolve(f: &ScalarField, spec: &MollifierSpec) -> Result<ScalarField> {
    let dom = *f.domain();
    let h = dom.h();
    if !(spec.scale.is_finite() && spec.scale > 0.0) {
        return Err(Error::param(format!("mollifier scale {} must be positive", spec.scale)));
    }
    match spec.kind {
        MollifierKind::Heat => {
            if !(spec.truncation > 0.0) {
                return Err(Error::param("heat kernel truncation must be positive"));
            }
            let w = heat_weights(spec.scale, spec.truncation, h);
            let mut vals = f.values().to_vec();
            for axis in 0..dom.dim() {
                vals = convolve_axis(&vals, &dom, axis, &w);
            }
            ScalarField::from_values(&dom, vals)
        }
        MollifierKind::Bump => {
            let eps = spec.scale;
            if dom.is_periodic() && eps > dom.r() {
                return Err(Error::KernelTooWide { diameter: eps, side: dom.r() });
            }
            let stencil = bump_stencil(dom.dim(), eps, h);
            let v = f.values();
            let vals = (0..dom.len())
                .map(|x| {
                    let mi = dom.multi(x);
                    stencil
                        .iter()
                        .filter_map(|(t, w)| dom.offset(mi, [-t[0], -t[1], -t[2]]).map(|y| w * v[y]))
                        .sum()
                })
                .collect();
            ScalarField::from_values(&dom, vals)
        }
    }
}

/// Normalized bump weights on grid offsets with `|t h| < ε/2`.
pub fn bump_stencil(dim: usize, eps: f64, h: f64) -> Vec<([i64; 3], f64)> {
    let t_max = (eps / (2.0 * h)).ceil() as i64;
    let range = |k: usize| if k < dim { -t_max..=t_max } else { 0..=0 };
    let mut out = vec![];
    for a in range(0) {
        for b in range(1) {
            for c in range(2) {
                let t = [a, b, c];
                let r2 = t.iter().map(|&s| (s as f64 * h / eps).powi(2)).sum::<f64>();
                if r2 < 0.25 {
                    out.push((t, (-1.0 / (0.25 - r2)).exp()));
                }
            }
        }
    }
    let s: f64 = out.iter().map(|p| p.1).sum();
    out.iter_mut().for_each(|p| p.1 /= s);
    out
}

/// `ℓ(λ) = sqrt(log(1 + 1/λ))` in two dimensions, 1 otherwise.
pub fn ell_lambda(lambda: f64, dim: usize) -> f64 {
    assert!(lambda > 0.0, "lambda must be positive");
    if dim == 2 {
        (1.0 / lambda).ln_1p().sqrt()
    } else {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellNorm {
    /// Lattice index `j`; the cell is `jε + □_ε`.
    pub index: [i64; 3],
    pub center: [f64; 3],
    pub value: f64,
}

/// Normalized `L²` norms of `f` on the cells `z + [-ε/2, ε/2)^d`,
/// `z ∈ εZ^d`, that meet `region`.
///
/// Periodic fields are read with wrap-around, so the region may extend past
/// the torus (periodic extension). Dirichlet fields are extended by zero.
pub fn local_cell_norms(f: &ScalarField, eps: f64, region: &Region) -> Result<Vec<CellNorm>> {
    let dom = f.domain();
    let d = dom.dim();
    let h = dom.h();
    let qf = eps / h;
    let q = qf.round();
    if !(q >= 1.0 && (qf - q).abs() <= 1e-9 * qf.max(1.0)) {
        return Err(Error::UnresolvedCell { eps, h });
    }
    let q = q as i64;
    let mut ranges = [(0i64, 0i64); 3];
    for (k, r) in ranges.iter_mut().enumerate().take(d) {
        let a = ((region.lo[k] - eps / 2.0) / eps + 1e-9).floor() as i64 + 1;
        let b = ((region.hi[k] + eps / 2.0) / eps - 1e-9).ceil() as i64 - 1;
        if b < a {
            return Err(Error::EmptySubdomain);
        }
        *r = (a, b);
    }
    let shape = dom.shape();
    let n = shape.map(|s| s as i64);
    let vals = f.values();
    // first node of a cell along an axis: ceil(j q - q/2)
    let first = |j: i64| -> i64 { (2 * j * q - q + 1).div_euclid(2) };
    let map = |k: usize, i: i64| -> Option<usize> {
        if dom.is_periodic() {
            Some(i.rem_euclid(n[k]) as usize)
        } else if (0..n[k]).contains(&i) {
            Some(i as usize)
        } else {
            None
        }
    };
    let count = (q as f64).powi(d as i32);
    let mut out = vec![];
    let span = |k: usize, r: (i64, i64)| if k < d { r.0..=r.1 } else { 0..=0 };
    for j0 in span(0, ranges[0]) {
        for j1 in span(1, ranges[1]) {
            for j2 in span(2, ranges[2]) {
                let j = [j0, j1, j2];
                let mut s = 0.0;
                let sub = |k: usize| if k < d { 0..q } else { 0..1 };
                for a in sub(0) {
                    let Some(i0) = (if d > 0 { map(0, first(j[0]) + a) } else { Some(0) }) else { continue };
                    for b in sub(1) {
                        let Some(i1) = (if d > 1 { map(1, first(j[1]) + b) } else { Some(0) }) else { continue };
                        for c in sub(2) {
                            let Some(i2) = (if d > 2 { map(2, first(j[2]) + c) } else { Some(0) }) else {
                                continue;
                            };
                            let v = vals[dom.index([i0, i1, i2])];
                            s += v * v;
                        }
                    }
                }
                let mut center = [0.0; 3];
                for k in 0..d {
                    center[k] = j[k] as f64 * eps;
                }
                out.push(CellNorm { index: j, center, value: (s / count).sqrt() });
            }
        }
    }
    Ok(out)
}

/// Largest value of [`local_cell_norms`].
pub fn max_cell_norm(f: &ScalarField, eps: f64, region: &Region) -> Result<f64> {
    Ok(local_cell_norms(f, eps, region)?.iter().fold(0.0, |a, c| a.max(c.value)))
}

/// `‖f (g ⋆ ζ_ε)‖_L²(U) / (max_z ‖f‖_L²(z+□_ε) · ‖g‖_L²(U+□_3ε))` for
/// periodic `f, g`; `U + □_3ε` must fit inside the torus.
pub fn mixed_norm_ratio(f: &ScalarField, g: &ScalarField, eps: f64, region: &Region) -> Result<f64> {
    let dom = f.domain();
    if !dom.is_periodic() || g.domain() != dom {
        return Err(Error::WrongBoundary("periodic"));
    }
    let mut wide = *region;
    for k in 0..dom.dim() {
        wide.lo[k] -= 1.5 * eps;
        wide.hi[k] += 1.5 * eps;
        if wide.lo[k] < -1e-12 || wide.hi[k] > dom.r() + 1e-12 {
            return Err(Error::param("enlarged region leaves the torus"));
        }
    }
    let smooth = convolve(g, &MollifierSpec::bump(eps))?;
    let prod = ScalarField::from_values(dom, f.values().iter().zip(smooth.values()).map(|(a, b)| a * b).collect())?;
    let num = norm_lp(&prod, region, 2.0)?;
    let den = max_cell_norm(f, eps, region)? * norm_lp(g, &wide, 2.0)?;
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn dir(d: usize, r: f64, m: usize) -> Domain {
        Domain::new(d, r, m, BoundaryKind::Dirichlet).unwrap()
    }
    fn per(d: usize, r: f64, m: usize) -> Domain {
        Domain::new(d, r, m, BoundaryKind::Periodic).unwrap()
    }

    #[test]
    fn lp_basics() {
        let d = dir(2, 4.0, 2);
        let c = ScalarField::constant(&d, 2.5);
        for p in [1.0, 2.0, 3.0, f64::INFINITY] {
            assert!((norm_lp(&c, &Region::whole(&d), p).unwrap() - 2.5).abs() < 1e-14);
            let sub = Region::cube(2, [1.0, 2.0, 0.0], 1.0);
            assert!((norm_lp(&c, &sub, p).unwrap() - 2.5).abs() < 1e-14);
        }
        let f = ScalarField::from_fn(&d, |x| x[0] - x[1]);
        assert!((norm_lp(&f, &Region::whole(&d), f64::INFINITY).unwrap() - 3.5).abs() < 1e-14);
        let empty = Region::cube(2, [10.0, 10.0, 0.0], 1.0);
        assert!(matches!(norm_lp(&c, &empty, 2.0), Err(Error::EmptySubdomain)));
    }

    #[test]
    fn lp_of_linear_1d() {
        for m in [8usize, 32, 128] {
            let d = dir(1, 1.0, m);
            let f = ScalarField::from_fn(&d, |x| x[0]);
            let v = norm_lp(&f, &Region::whole(&d), 2.0).unwrap();
            assert!((v - (1.0f64 / 3.0).sqrt()).abs() <= 2.0 / m as f64);
        }
    }

    #[test]
    fn h1_of_linear() {
        let r = 8.0;
        let d = dir(2, r, 4);
        let f = ScalarField::from_fn(&d, |x| x[0]);
        let l2 = norm_lp(&f, &Region::whole(&d), 2.0).unwrap();
        let h1 = norm_hk(&f, &Region::whole(&d), 1).unwrap();
        assert!((h1 - (l2 / r + 1.0)).abs() < 1e-12);
        assert_eq!(norm_hk(&ScalarField::zeros(&d), &Region::whole(&d), 2).unwrap(), 0.0);
        assert!(norm_hk(&f, &Region::whole(&d), 3).is_err());
        // k = 2 has 1 + d + d(d+1)/2 terms
        assert_eq!(hk_terms(&f, &Region::whole(&d), 2).unwrap().len(), 6);
    }

    #[test]
    fn zeroth_order_weight_scales_with_domain() {
        let small = per(2, 4.0, 2);
        let big = per(2, 8.0, 2);
        let t1 = hk_terms(&ScalarField::constant(&small, 1.0), &Region::whole(&small), 1).unwrap();
        let t2 = hk_terms(&ScalarField::constant(&big, 1.0), &Region::whole(&big), 1).unwrap();
        assert_eq!(t1[0].weight * t1[0].norm / (t2[0].weight * t2[0].norm), 2.0);
        assert_eq!(t1[0].weight, 0.25);
    }

    #[test]
    fn poincare_constant_is_scale_free() {
        let mut ratios = vec![];
        for r in [8.0, 16.0, 32.0] {
            let d = dir(2, r, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(r as u64);
            let coeffs: Vec<f64> = (0..9).map(|_| rng.random::<f64>() - 0.5).collect();
            let f = ScalarField::from_fn(&d, |x| {
                let mut s = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        s += coeffs[3 * a + b]
                            * ((a + 1) as f64 * PI * x[0] / r).sin()
                            * ((b + 1) as f64 * PI * x[1] / r).sin();
                    }
                }
                s
            })
            .zero_trace();
            let w = Region::whole(&d);
            ratios.push(norm_hk(&f, &w, 1).unwrap() / norm_grad_l2(&f, &w).unwrap());
        }
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |a, &v| (a.0.min(v), a.1.max(v)));
        assert!(hi / lo < 1.2, "{ratios:?}");
        assert!(hi < 3.0);
    }

    #[test]
    fn hneg1_zero_and_duality() {
        let d = dir(2, 4.0, 2);
        assert_eq!(norm_hneg1(&ScalarField::zeros(&d)).unwrap(), 0.0);
        let solver = HNeg1::new(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let f = ScalarField::from_values(&d, (0..d.len()).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
            let g = ScalarField::from_values(&d, (0..d.len()).map(|_| rng.random::<f64>() - 0.5).collect())
                .unwrap()
                .zero_trace();
            // unit norm in the Hilbert version of the normalized H¹ norm
            let w = Region::whole(&d);
            let gn = (norm_lp(&g, &w, 2.0).unwrap().powi(2) / d.volume() + norm_grad_l2(&g, &w).unwrap().powi(2)).sqrt();
            let g = g.scaled(1.0 / gn);
            let pairing = f.inner(&g) / d.volume();
            assert!(pairing <= solver.norm(&f).unwrap() * (1.0 + 1e-8));
            // the sum-form H¹ norm dominates the Hilbert one
            assert!(norm_hk(&g, &w, 1).unwrap() >= 1.0 - 1e-12);
        }
        assert!(HNeg1::new(&per(2, 4.0, 2)).is_err());
    }

    #[test]
    fn hneg1_matches_dense_oracle_1d() {
        let d = dir(1, 5.0, 8); // 39 interior nodes
        let r = d.r();
        let f = ScalarField::from_fn(&d, |x| (PI * x[0] / r).sin()).zero_trace();
        let got = norm_hneg1(&f).unwrap();
        // dense Gram matrix K = W (r^-2 I + L) with W = h/r, mass scaling M = h/r
        let n = d.intervals() - 1;
        let h = d.h();
        let w = h / r;
        let k = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            let lap = if i == j {
                2.0 / (h * h)
            } else if i.abs_diff(j) == 1 {
                -1.0 / (h * h)
            } else {
                0.0
            };
            w * (lap + if i == j { 1.0 / (r * r) } else { 0.0 })
        });
        let fv = nalgebra::DVector::from_fn(n, |i, _| f.get(i + 1));
        let mf = &fv * w;
        let y = k.clone().lu().solve(&mf).unwrap();
        let expect = mf.dot(&y).sqrt();
        assert!((got - expect).abs() <= 1e-10 * expect, "{got} vs {expect}");
    }

    #[test]
    fn heat_preserves_constants_and_mass() {
        let d = per(2, 8.0, 2);
        let c = convolve(&ScalarField::constant(&d, 3.0), &MollifierSpec::heat(1.5)).unwrap();
        assert!(c.values().iter().all(|&v| (v - 3.0).abs() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = ScalarField::from_values(&d, (0..d.len()).map(|_| rng.random::<f64>()).collect()).unwrap();
        // kernel wider than the torus is folded, mass still preserved
        for s in [0.7, 3.0, 20.0] {
            let g = convolve(&f, &MollifierSpec::heat(s)).unwrap();
            let (a, b) = (f.values().iter().sum::<f64>(), g.values().iter().sum::<f64>());
            assert!((a - b).abs() <= 1e-10 * a.abs());
        }
    }

    #[test]
    fn heat_weights_normalized() {
        for s in [0.3, 1.0, 4.0] {
            let w = heat_weights(s, 5.0, 0.25);
            assert!((w.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn heat_semigroup() {
        let d = per(2, 16.0, 4);
        let f = ScalarField::from_fn(&d, |x| (2.0 * PI * x[0] / 16.0).sin() + (2.0 * PI * 2.0 * x[1] / 16.0).cos());
        let (r, s) = (0.8, 1.1);
        let two = convolve(&convolve(&f, &MollifierSpec::heat(s)).unwrap(), &MollifierSpec::heat(r)).unwrap();
        let one = convolve(&f, &MollifierSpec::heat((r * r + s * s as f64).sqrt())).unwrap();
        let w = Region::whole(&d);
        let err = norm_lp(&two.sub(&one), &w, 2.0).unwrap() / norm_lp(&one, &w, 2.0).unwrap();
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn bump_support_and_identity() {
        let st = bump_stencil(2, 1.0, 0.125);
        assert!((st.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
        for (t, _) in &st {
            let r = ((t[0] * t[0] + t[1] * t[1]) as f64).sqrt() * 0.125;
            assert!(r < 0.5);
        }
        // at m = 2 the unit bump only sees its centre
        assert_eq!(bump_stencil(2, 1.0, 0.5).len(), 1);
        let d = per(2, 4.0, 4);
        assert!(matches!(convolve(&ScalarField::zeros(&d), &MollifierSpec::bump(5.0)), Err(Error::KernelTooWide { .. })));
    }

    #[test]
    fn ell_values() {
        assert_eq!(ell_lambda(0.1, 3), 1.0);
        assert!((ell_lambda(1.0, 2) - 0.832_554_611_157_697_7).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for k in 1..20 {
            let v = ell_lambda(k as f64 / 20.0, 2);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn cell_norms() {
        let d = dir(2, 4.0, 4);
        let c = ScalarField::constant(&d, 2.0);
        // cells fully inside the grid see the constant
        for cell in local_cell_norms(&c, 1.0, &Region::cube(2, [2.0, 2.0, 0.0], 2.0)).unwrap() {
            assert!((cell.value - 2.0).abs() < 1e-14);
        }
        let f = ScalarField::from_fn(&d, |x| x[0] * x[1]);
        let cell = Region::cube(2, [2.0, 1.0, 0.0], 1.0);
        let one = local_cell_norms(&f, 1.0, &cell).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one[0].value - norm_lp(&f, &cell, 2.0).unwrap()).abs() < 1e-14);
        assert!(matches!(local_cell_norms(&f, 0.3, &cell), Err(Error::UnresolvedCell { .. })));
    }

    #[test]
    fn cell_norms_brute_force_two_cells() {
        // torus of two unit cells along x
        let d = Domain::new(2, 2.0, 4, BoundaryKind::Periodic).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = ScalarField::from_values(&d, (0..d.len()).map(|_| rng.random::<f64>()).collect()).unwrap();
        let cells = local_cell_norms(&f, 1.0, &Region::cube(2, [0.5, 0.5, 0.0], 1.0)).unwrap();
        // brute force: enumerate nodes in jε + [-1/2, 1/2)^2 with wrap
        for c in &cells {
            let mut s = 0.0;
            let mut n = 0;
            for x in 0..d.len() {
                let p = d.coords(x);
                let mut inside = true;
                for k in 0..2 {
                    let mut rel = p[k] - c.center[k];
                    rel -= 2.0 * ((rel + 1.0) / 2.0).floor(); // wrap into [-1, 1)
                    inside &= (-0.5..0.5).contains(&rel);
                }
                if inside {
                    s += f.get(x).powi(2);
                    n += 1;
                }
            }
            assert_eq!(n, 16);
            assert!((c.value - (s / n as f64).sqrt()).abs() < 1e-14);
        }
        let global = norm_lp(&f, &Region::whole(&d), 2.0).unwrap();
        let max = cells.iter().fold(0.0f64, |a, c| a.max(c.value));
        assert!(max >= global - 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn bump_convolution_of_constant(c in -5.0f64..5.0, m in 2usize..6) {
            let d = per(2, 3.0, m);
            let g = convolve(&ScalarField::constant(&d, c), &MollifierSpec::bump(1.0)).unwrap();
            prop_assert!(g.values().iter().all(|&v| (v - c).abs() < 1e-12));
        }

        #[test]
        fn heat_mass_preserved(seed in any::<u64>(), s in 0.2f64..6.0) {
            let d = per(2, 4.0, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = ScalarField::from_values(&d, (0..d.len()).map(|_| rng.random::<f64>() - 0.3).collect()).unwrap();
            let g = convolve(&f, &MollifierSpec::heat(s)).unwrap();
            let (a, b) = (f.values().iter().sum::<f64>(), g.values().iter().sum::<f64>());
            prop_assert!((a - b).abs() <= 1e-10 * f.values().iter().map(|v| v.abs()).sum::<f64>());
        }
    }
}
