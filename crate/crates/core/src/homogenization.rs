//! Periodic cell problems: first-order correctors `φ_k`, the effective
//! matrix `ā`, gauge-fixed flux correctors `S_k`, and their heat-kernel
//! regularizations.
//!
//! Flux correctors live on a staggered lattice: `S_k,ij` (i < j) sits at the
//! plaquette centre `x + h(e_i + e_j)/2` and is stored at the base node `x`.
//! With that placement the discrete identity `Σ_j D_j⁻ S_k,ij = g_k,i`
//! holds exactly (up to the solver tolerance) on every edge.

use rayon::prelude::*;

use crate::coefficient::CoefficientField;
use crate::grid::{divergence, gradient, Domain, Layout, ScalarField, VectorField};
use crate::linalg::SymMat;
use crate::norms::{convolve, local_cell_norms, norm_lp, MollifierSpec, Region};
use crate::operator::{cg_solve, CgOptions, CgVariant, Conductance, SolveReport, SparseOperator};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrectorOptions {
    /// Relative CG tolerance for the cell problems.
    pub tol: f64,
    pub variant: CgVariant,
}

impl Default for CorrectorOptions {
    fn default() -> Self {
        CorrectorOptions { tol: 1e-10, variant: CgVariant::Jacobi }
    }
}

impl CorrectorOptions {
    fn cg(&self) -> CgOptions {
        CgOptions { tol: self.tol, variant: self.variant, ..Default::default() }
    }
}

/// Position of the pair `i < j` in the list `(0,1), (0,2), (1,2)`.
pub fn pair_index(dim: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < dim);
    match (dim, i, j) {
        (_, 0, 1) => 0,
        (_, 0, 2) => 1,
        _ => 2,
    }
}

pub fn pairs(dim: usize) -> Vec<(usize, usize)> {
    let mut out = vec![];
    for i in 0..dim {
        for j in i + 1..dim {
            out.push((i, j));
        }
    }
    out
}

/// Skew-symmetric `S_ij` for one direction `e_k`; only `i < j` is stored.
#[derive(Clone, Debug, PartialEq)]
pub struct FluxCorrector {
    dim: usize,
    entries: Vec<ScalarField>,
}

impl FluxCorrector {
    pub fn from_entries(dim: usize, entries: Vec<ScalarField>) -> Result<Self> {
        if entries.len() != pairs(dim).len() {
            return Err(Error::param("flux corrector needs d(d-1)/2 entries"));
        }
        Ok(FluxCorrector { dim, entries })
    }

    pub fn zeros(domain: &Domain) -> Self {
        let n = pairs(domain.dim()).len();
        FluxCorrector { dim: domain.dim(), entries: vec![ScalarField::zeros(domain); n] }
    }

    /// Stored entries, ordered as [`pairs`].
    pub fn entries(&self) -> &[ScalarField] {
        &self.entries
    }

    /// `S_ij` at the plaquette based at `node`; `S_ji = -S_ij`, `S_ii = 0`.
    #[inline]
    pub fn value(&self, i: usize, j: usize, node: usize) -> f64 {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Less => self.entries[pair_index(self.dim, i, j)].get(node),
            Greater => -self.entries[pair_index(self.dim, j, i)].get(node),
            Equal => 0.0,
        }
    }

    /// `(div S)_i = Σ_j D_j⁻ S_ij` on the edges of the torus.
    pub fn divergence(&self) -> VectorField {
        let dom = *self.entries.first().map(|e| e.domain()).expect("d >= 2");
        let inv_h = dom.m() as f64;
        let comps = (0..self.dim)
            .map(|i| {
                (0..dom.len())
                    .map(|x| {
                        let mi = dom.multi(x);
                        let mut s = 0.0;
                        for j in (0..self.dim).filter(|&j| j != i) {
                            let back = dom.backward(x, mi, j).expect("periodic");
                            s += (self.value(i, j, x) - self.value(i, j, back)) * inv_h;
                        }
                        s
                    })
                    .collect()
            })
            .collect();
        VectorField::from_components(&dom, Layout::Edge, comps).expect("shape")
    }

    fn map(&self, f: impl Fn(&ScalarField) -> Result<ScalarField>) -> Result<FluxCorrector> {
        Ok(FluxCorrector { dim: self.dim, entries: self.entries.iter().map(f).collect::<Result<_>>()? })
    }
}

/// Heat-kernel regularized correctors at scale `λ⁻¹` and the smoothed
/// gradients entering the error bound.
#[derive(Clone, Debug)]
pub struct Regularized {
    pub lambda: f64,
    /// `φ_k - φ_k ⋆ Φ_{1/λ}`.
    pub phi: Vec<ScalarField>,
    /// `S_k - S_k ⋆ Φ_{1/λ}`.
    pub flux: Vec<FluxCorrector>,
    /// `∇φ_k ⋆ Φ_{1/λ}` (edge layout).
    pub grad_phi_smooth: Vec<VectorField>,
    /// `∇S_k,ij ⋆ Φ_{1/λ}` per direction and stored pair.
    pub grad_flux_smooth: Vec<Vec<VectorField>>,
    /// `(div S_k) ⋆ Φ_{1/λ}` (edge layout).
    pub div_flux_smooth: Vec<VectorField>,
}

#[derive(Clone, Debug)]
pub struct CorrectorSet {
    domain: Domain,
    field: CoefficientField,
    cond: Conductance,
    pub phi: Vec<ScalarField>,
    pub flux: Vec<FluxCorrector>,
    /// `g_k = a(e_k + ∇φ_k) - ā e_k` (edge layout).
    pub g: Vec<VectorField>,
    pub abar: SymMat,
    /// Largest `|ā_ij - ā_ji| / 2` before symmetrization.
    pub asymmetry: f64,
    /// Largest relative CG residual over all cell problems.
    pub residual: f64,
    pub regularized: Option<Regularized>,
}

impl CorrectorSet {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }
    pub fn field(&self) -> &CoefficientField {
        &self.field
    }
    pub fn conductance(&self) -> &Conductance {
        &self.cond
    }
    pub fn lambda(&self) -> Option<f64> {
        self.regularized.as_ref().map(|r| r.lambda)
    }

    /// A set with all correctors zero, e.g. for a constant medium where
    /// `ā = a`.
    pub fn trivial(field: &CoefficientField, abar: SymMat) -> Result<Self> {
        let dom = *field.domain();
        if !dom.is_periodic() {
            return Err(Error::WrongBoundary("periodic"));
        }
        let d = dom.dim();
        Ok(CorrectorSet {
            domain: dom,
            field: field.clone(),
            cond: Conductance::from_field(field),
            phi: vec![ScalarField::zeros(&dom); d],
            flux: vec![FluxCorrector::zeros(&dom); d],
            g: vec![VectorField::zeros(&dom, Layout::Edge); d],
            abar,
            asymmetry: 0.0,
            residual: 0.0,
            regularized: None,
        })
    }
}

fn unit_gradient(dom: &Domain, k: usize) -> VectorField {
    let mut e = VectorField::zeros(dom, Layout::Edge);
    e.component_mut(k).fill(1.0);
    e
}

/// `a(e_k + ∇φ_k)` on the edges of the torus.
pub fn corrector_flux(cond: &Conductance, phi: &ScalarField, k: usize) -> VectorField {
    let mut grad = gradient(phi);
    grad.component_mut(k).iter_mut().for_each(|v| *v += 1.0);
    cond.flux(&grad)
}

fn corrector_with(op: &SparseOperator, cond: &Conductance, k: usize, opts: &CorrectorOptions) -> Result<(ScalarField, SolveReport)> {
    let dom = cond.domain();
    let rhs = divergence(&cond.flux(&unit_gradient(dom, k)));
    let (x, rep) = cg_solve(op, rhs.values(), &opts.cg())?;
    Ok((op.extend(&x, None), rep))
}

/// Mean-zero `φ` with `-div(a(e_k + ∇φ)) = 0` on the torus.
pub fn solve_corrector(field: &CoefficientField, k: usize, opts: &CorrectorOptions) -> Result<(ScalarField, SolveReport)> {
    let dom = field.domain();
    if !dom.is_periodic() {
        return Err(Error::WrongBoundary("periodic"));
    }
    if k >= dom.dim() {
        return Err(Error::param(format!("direction {k} out of range")));
    }
    let cond = Conductance::from_field(field);
    let op = SparseOperator::assemble(&cond, 0.0)?;
    corrector_with(&op, &cond, k, opts)
}

/// Column `k` of `ā` is the torus mean of `a(e_k + ∇φ_k)`; the result is
/// symmetrized and the asymmetry returned alongside.
pub fn effective_matrix(field: &CoefficientField, correctors: &[ScalarField]) -> Result<(SymMat, f64)> {
    let cond = Conductance::from_field(field);
    effective_matrix_with(&cond, correctors)
}

fn effective_matrix_with(cond: &Conductance, correctors: &[ScalarField]) -> Result<(SymMat, f64)> {
    let d = cond.domain().dim();
    if correctors.len() != d {
        return Err(Error::param("need one corrector per direction"));
    }
    let mut rows = vec![vec![0.0; d]; d];
    for (k, phi) in correctors.iter().enumerate() {
        let q = corrector_flux(cond, phi, k);
        for (i, row) in rows.iter_mut().enumerate() {
            let c = q.component(i);
            row[k] = c.iter().sum::<f64>() / c.len() as f64;
        }
    }
    let (abar, asym) = SymMat::symmetrize(&rows);
    if asym > 1e-4 {
        return Err(Error::UnconvergedCorrector(asym));
    }
    Ok((abar, asym))
}

fn flux_with(op: &SparseOperator, g: &VectorField, opts: &CorrectorOptions) -> Result<(FluxCorrector, f64)> {
    let dom = *g.domain();
    let d = dom.dim();
    let mut worst = 0.0f64;
    let entries = pairs(d)
        .into_iter()
        .map(|(i, j)| {
            // -Δ S_ij = -(D_j⁺ g_i - D_i⁺ g_j) at plaquette centres
            let gi = gradient(&g.component_field(i));
            let gj = gradient(&g.component_field(j));
            let rhs: Vec<f64> = gj.component(i).iter().zip(gi.component(j)).map(|(a, b)| a - b).collect();
            let (x, rep) = cg_solve(op, &rhs, &opts.cg())?;
            worst = worst.max(rep.relative_residual);
            Ok(op.extend(&x, None))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((FluxCorrector { dim: d, entries }, worst))
}

/// `g_k = a(e_k + ∇φ_k) - ā e_k`.
pub fn flux_residual(cond: &Conductance, phi: &ScalarField, abar: &SymMat, k: usize) -> VectorField {
    let mut q = corrector_flux(cond, phi, k);
    for i in 0..cond.domain().dim() {
        let c = abar.get(i, k);
        q.component_mut(i).iter_mut().for_each(|v| *v -= c);
    }
    q
}

/// Gauge-fixed flux corrector for direction `k`.
pub fn solve_flux_corrector(
    field: &CoefficientField,
    phi_k: &ScalarField,
    abar: &SymMat,
    k: usize,
    opts: &CorrectorOptions,
) -> Result<FluxCorrector> {
    let dom = field.domain();
    if !dom.is_periodic() {
        return Err(Error::WrongBoundary("periodic"));
    }
    let cond = Conductance::from_field(field);
    let lap = SparseOperator::assemble(&Conductance::from_matrix(dom, &SymMat::identity(dom.dim())), 0.0)?;
    let g = flux_residual(&cond, phi_k, abar, k);
    Ok(flux_with(&lap, &g, opts)?.0)
}

/// All correctors, `ā`, and flux correctors of a periodic sample.
pub fn compute_correctors(field: &CoefficientField, opts: &CorrectorOptions) -> Result<CorrectorSet> {
    let dom = *field.domain();
    if !dom.is_periodic() {
        return Err(Error::WrongBoundary("periodic"));
    }
    let d = dom.dim();
    let cond = Conductance::from_field(field);
    let op = SparseOperator::assemble(&cond, 0.0)?;
    let solved = (0..d)
        .into_par_iter()
        .map(|k| corrector_with(&op, &cond, k, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut residual = solved.iter().fold(0.0f64, |a, s| a.max(s.1.relative_residual));
    let phi: Vec<ScalarField> = solved.into_iter().map(|s| s.0).collect();
    let (abar, asymmetry) = effective_matrix_with(&cond, &phi)?;
    let lambda = field.ellipticity();
    if !abar.is_elliptic(lambda * (1.0 + 1e-9)) {
        return Err(Error::param(format!("effective matrix eigenvalues {:?} violate ellipticity", abar.eigenvalues())));
    }
    let lap = SparseOperator::assemble(&Conductance::from_matrix(&dom, &SymMat::identity(d)), 0.0)?;
    let g: Vec<VectorField> = (0..d).map(|k| flux_residual(&cond, &phi[k], &abar, k)).collect();
    let fluxes = g
        .par_iter()
        .map(|gk| flux_with(&lap, gk, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut flux = vec![];
    for (f, res) in fluxes {
        residual = residual.max(res);
        flux.push(f);
    }
    Ok(CorrectorSet { domain: dom, field: field.clone(), cond, phi, flux, g, abar, asymmetry, residual, regularized: None })
}

fn smooth_vector(q: &VectorField, spec: &MollifierSpec) -> Result<VectorField> {
    let comps = (0..q.domain().dim())
        .map(|i| Ok(convolve(&q.component_field(i), spec)?.into_values()))
        .collect::<Result<Vec<_>>>()?;
    VectorField::from_components(q.domain(), q.layout(), comps)
}

/// Check `λ ∈ [1/L, 1/2]`.
pub fn check_lambda(lambda: f64, side: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 0.5) {
        return Err(Error::param(format!("lambda = {lambda} must lie in (0, 1/2]")));
    }
    if lambda * side < 1.0 - 1e-12 {
        return Err(Error::KernelTooWide { diameter: 1.0 / lambda, side });
    }
    Ok(())
}

/// Subtract the heat-kernel average at scale `λ⁻¹` from every corrector.
pub fn regularize_correctors(set: &CorrectorSet, lambda: f64) -> Result<CorrectorSet> {
    check_lambda(lambda, set.domain.r())?;
    let spec = MollifierSpec::heat(1.0 / lambda);
    let minus_smooth = |f: &ScalarField| -> Result<ScalarField> { Ok(f.sub(&convolve(f, &spec)?)) };
    let phi = set.phi.par_iter().map(minus_smooth).collect::<Result<Vec<_>>>()?;
    let flux = set.flux.par_iter().map(|s| s.map(minus_smooth)).collect::<Result<Vec<_>>>()?;
    let grad_phi_smooth =
        set.phi.par_iter().map(|p| smooth_vector(&gradient(p), &spec)).collect::<Result<Vec<_>>>()?;
    let grad_flux_smooth = set
        .flux
        .par_iter()
        .map(|s| s.entries.iter().map(|e| smooth_vector(&gradient(e), &spec)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let div_flux_smooth =
        set.flux.par_iter().map(|s| smooth_vector(&s.divergence(), &spec)).collect::<Result<Vec<_>>>()?;
    let mut out = set.clone();
    out.regularized = Some(Regularized { lambda, phi, flux, grad_phi_smooth, grad_flux_smooth, div_flux_smooth });
    Ok(out)
}

/// `φ^(λ)_k = φ_k - φ_k ⋆ Φ_{1/λ}` and `∇φ_k ⋆ Φ_{1/λ}` for each direction,
/// without the flux correctors.
pub fn regularize_phi(phi: &[ScalarField], lambda: f64) -> Result<Vec<(ScalarField, VectorField)>> {
    let dom = phi.first().ok_or_else(|| Error::param("no correctors"))?.domain();
    check_lambda(lambda, dom.r())?;
    let spec = MollifierSpec::heat(1.0 / lambda);
    phi.par_iter()
        .map(|p| Ok((p.sub(&convolve(p, &spec)?), smooth_vector(&gradient(p), &spec)?)))
        .collect()
}

/// Scale statistics of one corrector sample: for every `λ` and direction `k`,
/// the mean over unit cells of `|∇φ_k ⋆ Φ_{1/λ}|` and `‖φ^(λ)_k‖²`.
pub fn corrector_scaling(field: &CoefficientField, lambdas: &[f64], opts: &CorrectorOptions) -> Result<Vec<Vec<(f64, f64)>>> {
    let dom = field.domain();
    let phi = (0..dom.dim()).map(|k| Ok(solve_corrector(field, k, opts)?.0)).collect::<Result<Vec<_>>>()?;
    let whole = Region::whole(dom);
    lambdas
        .iter()
        .map(|&lam| {
            regularize_phi(&phi, lam)?
                .iter()
                .map(|(reg, grad)| {
                    let cells = local_cell_norms(&grad.magnitude(), 1.0, &whole)?;
                    let mean = cells.iter().map(|c| c.value).sum::<f64>() / cells.len() as f64;
                    Ok((mean, norm_lp(reg, &whole, 2.0)?.powi(2)))
                })
                .collect()
        })
        .collect()
}
