//! The three-solve iteration for `-div(a∇u) = f` on `U_r` with Dirichlet data
//! `g`, driven by the regularized operator `λ² - div a∇` and the homogenized
//! operator `-div ā∇`.
//!
//! One round maps `v` to `v̂ = v + u₀ + ũ` where
//!
//! ```text
//! (λ² - div a∇) u₀ = f + div a∇v
//!       -div ā∇ ū  = λ² u₀
//! (λ² - div a∇) ũ  = (λ² - div ā∇) ū
//! ```
//!
//! all with zero boundary values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::coefficient::{sample_field, CoefficientField, Model};
use crate::grid::{gradient, BoundaryKind, Domain, ScalarField};
use crate::homogenization::{effective_matrix, solve_corrector, CorrectorOptions};
use crate::linalg::SymMat;
use crate::norms::{norm_hk, norm_lp, norm_vector_l2, Region};
use crate::operator::{cg_solve, CgOptions, Conductance, SolveReport, SparseOperator};
use crate::{Error, Result};

/// Relative CG tolerance of the reference solve.
pub const REFERENCE_TOL: f64 = 1e-10;

fn check_dirichlet(domain: &Domain) -> Result<()> {
    if domain.kind() != BoundaryKind::Dirichlet {
        return Err(Error::WrongBoundary("Dirichlet"));
    }
    Ok(())
}

/// `g` on the boundary, zero inside.
fn lift(g: &ScalarField) -> ScalarField {
    let dom = g.domain();
    let mut out = ScalarField::zeros(dom);
    let vals = out.values_mut();
    for b in dom.boundary_indices() {
        vals[b] = g.get(b);
    }
    out
}

fn solve_with(op: &SparseOperator, cond: &Conductance, f: &ScalarField, g: &ScalarField, opts: &CgOptions) -> Result<(ScalarField, SolveReport)> {
    let base = lift(g);
    let rhs = f.sub(&cond.apply(&base, op.mu2()));
    let (x, rep) = cg_solve(op, &op.restrict(&rhs), opts)?;
    Ok((op.extend(&x, Some(&base)), rep))
}

/// Solve `-div(a∇u) = f` in `U_r`, `u = g` on `∂U_r`.
pub fn solve_dirichlet(field: &CoefficientField, f: &ScalarField, g: &ScalarField, tol: f64) -> Result<(ScalarField, SolveReport)> {
    solve_dirichlet_with(field, f, g, &CgOptions::with_tol(tol))
}

pub fn solve_dirichlet_with(field: &CoefficientField, f: &ScalarField, g: &ScalarField, opts: &CgOptions) -> Result<(ScalarField, SolveReport)> {
    check_dirichlet(field.domain())?;
    if f.domain() != field.domain() || g.domain() != field.domain() {
        return Err(Error::ResolutionMismatch("f, g and the field must share a grid".into()));
    }
    let cond = Conductance::from_field(field);
    let op = SparseOperator::assemble(&cond, 0.0)?;
    solve_with(&op, &cond, f, g, opts)
}

/// `‖f‖_H¹` on the whole domain.
pub fn h1(f: &ScalarField) -> Result<f64> {
    norm_hk(f, &Region::whole(f.domain()), 1)
}

/// `‖v̂ - u‖_H¹ / ‖v - u‖_H¹`.
pub fn measure_contraction(v: &ScalarField, v_hat: &ScalarField, u: &ScalarField) -> Result<f64> {
    let before = h1(&v.sub(u))?;
    if before <= 1e-12 * h1(u)? || before == 0.0 {
        return Err(Error::AlreadyConverged);
    }
    Ok(h1(&v_hat.sub(u))? / before)
}

/// Quantities recorded for one round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// `‖v - u‖_H¹` before the round.
    pub err_before: f64,
    /// `‖v̂ - u‖_H¹` after the round.
    pub err_after: f64,
    pub z: f64,
    /// CG iterations of the three solves.
    pub cg: [usize; 3],
    /// `‖∇(v - u)‖_L²`.
    pub grad_err: f64,
    /// `‖∇u₀‖_L²`.
    pub grad_u0: f64,
    /// `‖u₀‖_L²`.
    pub l2_u0: f64,
    /// `‖∇ū‖_L²`.
    pub grad_ubar: f64,
}

impl RoundRecord {
    /// Energy inequalities of the first two solves, with additive slack
    /// `10·tol`: `‖∇u₀‖ ≤ Λ‖∇(v-u)‖`, `λ‖u₀‖ ≤ Λ‖∇(v-u)‖` and
    /// `‖∇ū‖ ≤ Λ²(‖∇(v-u)‖ + ‖∇u₀‖)`.
    pub fn energy_violations(&self, ellipticity: f64, lambda: f64, tol: f64) -> Vec<&'static str> {
        let slack = 10.0 * tol;
        let bound = ellipticity * self.grad_err + slack;
        let mut out = vec![];
        if self.grad_u0 > bound {
            out.push("grad u0");
        }
        if lambda * self.l2_u0 > bound {
            out.push("lambda u0");
        }
        if self.grad_ubar > ellipticity * ellipticity * (self.grad_err + self.grad_u0) + slack {
            out.push("grad ubar");
        }
        out
    }
}

/// Operators of one problem, assembled once and reused across rounds.
pub struct IterationSolver {
    domain: Domain,
    lambda: f64,
    ellipticity: f64,
    abar: SymMat,
    cond_a: Conductance,
    cond_abar: Conductance,
    op_a: SparseOperator,
    op_reg: SparseOperator,
    op_abar: SparseOperator,
    opts: CgOptions,
}

impl IterationSolver {
    /// `λ` must lie in `[1/r, 1/2]` and `ā` within the ellipticity bounds of
    /// the field.
    pub fn new(field: &CoefficientField, abar: &SymMat, lambda: f64, opts: CgOptions) -> Result<Self> {
        let domain = *field.domain();
        check_dirichlet(&domain)?;
        if !(lambda > 0.0 && lambda <= 0.5 && lambda * domain.r() >= 1.0 - 1e-12) {
            return Err(Error::param(format!("lambda = {lambda} must lie in [1/r, 1/2] with r = {}", domain.r())));
        }
        if abar.dim() != domain.dim() {
            return Err(Error::param("effective matrix dimension differs from the domain"));
        }
        let ellipticity = field.ellipticity();
        if !abar.is_elliptic(ellipticity * (1.0 + 1e-9)) {
            return Err(Error::param(format!("effective matrix eigenvalues {:?} outside [1/Λ, Λ]", abar.eigenvalues())));
        }
        if !(opts.tol > 0.0 && opts.tol < 1.0) {
            return Err(Error::param("tolerance must lie in (0, 1)"));
        }
        let cond_a = Conductance::from_field(field);
        let cond_abar = Conductance::from_matrix(&domain, abar);
        let mu2 = lambda * lambda;
        Ok(IterationSolver {
            domain,
            lambda,
            ellipticity,
            abar: *abar,
            op_a: SparseOperator::assemble(&cond_a, 0.0)?,
            op_reg: SparseOperator::assemble(&cond_a, mu2)?,
            op_abar: SparseOperator::assemble(&cond_abar, 0.0)?,
            cond_a,
            cond_abar,
            opts,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn ellipticity(&self) -> f64 {
        self.ellipticity
    }
    pub fn abar(&self) -> &SymMat {
        &self.abar
    }
    pub fn options(&self) -> &CgOptions {
        &self.opts
    }

    /// Reference solution by CG at [`REFERENCE_TOL`].
    pub fn reference(&self, f: &ScalarField, g: &ScalarField) -> Result<(ScalarField, SolveReport)> {
        solve_with(&self.op_a, &self.cond_a, f, g, &CgOptions { tol: REFERENCE_TOL, ..self.opts })
    }

    /// `-div ā∇v = f`, `v = g` on the boundary.
    pub fn homogenized(&self, f: &ScalarField, g: &ScalarField) -> Result<(ScalarField, SolveReport)> {
        solve_with(&self.op_abar, &self.cond_abar, f, g, &self.opts)
    }

    fn zero_trace_solve(&self, op: &SparseOperator, rhs: &ScalarField) -> Result<(ScalarField, SolveReport)> {
        let (x, rep) = cg_solve(op, &op.restrict(rhs), &self.opts)?;
        Ok((op.extend(&x, None), rep))
    }

    /// One round from `v`; returns `v̂`, the three corrections and the
    /// iteration counts.
    pub fn step(&self, v: &ScalarField, f: &ScalarField) -> Result<Step> {
        let mu2 = self.lambda * self.lambda;
        let rhs1 = f.sub(&self.cond_a.apply(v, 0.0));
        let (u0, r1) = self.zero_trace_solve(&self.op_reg, &rhs1)?;
        let (ubar, r2) = self.zero_trace_solve(&self.op_abar, &u0.scaled(mu2))?;
        let rhs3 = self.cond_abar.apply(&ubar, mu2);
        let (utilde, r3) = self.zero_trace_solve(&self.op_reg, &rhs3)?;
        let v_hat = v.add(&u0).add(&utilde);
        Ok(Step { v_hat, u0, ubar, utilde, reports: [r1, r2, r3] })
    }

    /// One round with diagnostics against the reference solution `u`.
    pub fn iterate_once(&self, round: usize, v: &ScalarField, f: &ScalarField, u: &ScalarField) -> Result<(ScalarField, RoundRecord)> {
        let step = self.step(v, f)?;
        let whole = Region::whole(&self.domain);
        let err = v.sub(u);
        let err_before = h1(&err)?;
        let err_after = h1(&step.v_hat.sub(u))?;
        let record = RoundRecord {
            round,
            err_before,
            err_after,
            z: if err_before > 0.0 { err_after / err_before } else { 0.0 },
            cg: step.reports.each_ref().map(|r| r.iterations),
            grad_err: norm_vector_l2(&gradient(&err), &whole)?,
            grad_u0: norm_vector_l2(&gradient(&step.u0), &whole)?,
            l2_u0: norm_lp(&step.u0, &whole, 2.0)?,
            grad_ubar: norm_vector_l2(&gradient(&step.ubar), &whole)?,
        };
        Ok((step.v_hat, record))
    }

    /// Iterate from `v0` for at most `rounds` rounds, stopping once
    /// `‖v - u‖_H¹ ≤ 100·tol·‖u‖_H¹`.
    pub fn run(&self, v0: &ScalarField, f: &ScalarField, g: &ScalarField, rounds: usize) -> Result<IterationState> {
        self.run_with(v0, f, g, rounds, true)
    }

    /// [`Self::run`], optionally iterating all `rounds` rounds regardless of
    /// convergence.
    pub fn run_with(&self, v0: &ScalarField, f: &ScalarField, g: &ScalarField, rounds: usize, early_stop: bool) -> Result<IterationState> {
        if rounds == 0 {
            return Err(Error::param("rounds must be at least 1"));
        }
        let (u, rep) = self.reference(f, g)?;
        if rep.relative_residual > REFERENCE_TOL {
            return Err(Error::NotConverged { report: rep, best: vec![] });
        }
        let u_h1 = h1(&u)?;
        let mut v = v0.clone();
        let mut records = vec![];
        let stop = 100.0 * self.opts.tol * u_h1;
        for round in 1..=rounds {
            if early_stop && h1(&v.sub(&u))? <= stop {
                break;
            }
            let (v_hat, rec) = self.iterate_once(round, &v, f, &u)?;
            records.push(rec);
            v = v_hat;
        }
        Ok(IterationState { v, u, u_h1, records, reference: rep })
    }
}

pub struct Step {
    pub v_hat: ScalarField,
    pub u0: ScalarField,
    pub ubar: ScalarField,
    pub utilde: ScalarField,
    pub reports: [SolveReport; 3],
}

#[derive(Clone, Debug)]
pub struct IterationState {
    /// Final iterate.
    pub v: ScalarField,
    /// Reference solution.
    pub u: ScalarField,
    pub u_h1: f64,
    pub records: Vec<RoundRecord>,
    pub reference: SolveReport,
}

impl IterationState {
    /// Errors `‖v - u‖_H¹` before the first round and after each round.
    pub fn error_history(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.records.first().map(|r| r.err_before).into_iter().collect();
        out.extend(self.records.iter().map(|r| r.err_after));
        out
    }
}

/// One round followed by [`measure_contraction`].
#[allow(clippy::too_many_arguments)]
pub fn iterate_once(
    v: &ScalarField,
    f: &ScalarField,
    g: &ScalarField,
    field: &CoefficientField,
    abar: &SymMat,
    lambda: f64,
    tol: f64,
) -> Result<(ScalarField, RoundRecord)> {
    let solver = IterationSolver::new(field, abar, lambda, CgOptions::with_tol(tol))?;
    let (u, _) = solver.reference(f, g)?;
    solver.iterate_once(1, v, f, &u)
}

/// Initial iterate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Solution of the homogenized problem.
    Hom,
    /// The boundary data, zero inside.
    Zero,
    /// The boundary data plus random smooth interior modes, scaled to the
    /// size of the homogenized solution.
    Random(u64),
}

impl std::fmt::Display for InitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitMode::Hom => write!(f, "hom"),
            InitMode::Zero => write!(f, "zero"),
            InitMode::Random(_) => write!(f, "random"),
        }
    }
}

/// Number of sine modes per axis in [`InitMode::Random`].
const RANDOM_MODES: usize = 4;

/// `Σ c_p Π_k sin(p_k π x_k / r)` over `p ∈ {1..4}^d` with
/// `c_p ~ N(0,1)/|p|²`.
pub fn random_modes(domain: &Domain, seed: u64) -> ScalarField {
    let d = domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = RANDOM_MODES.pow(d as u32);
    let modes: Vec<([usize; 3], f64)> = (0..count)
        .map(|i| {
            let mut p = [1usize; 3];
            let mut rest = i;
            for pk in p.iter_mut().take(d) {
                *pk = rest % RANDOM_MODES + 1;
                rest /= RANDOM_MODES;
            }
            let norm2: usize = p.iter().take(d).map(|q| q * q).sum();
            let c: f64 = StandardNormal.sample(&mut rng);
            (p, c / norm2 as f64)
        })
        .collect();
    let r = domain.r();
    ScalarField::from_fn(domain, |x| {
        modes
            .iter()
            .map(|(p, c)| c * (0..d).map(|k| (p[k] as f64 * std::f64::consts::PI * x[k] / r).sin()).product::<f64>())
            .sum()
    })
    .zero_trace()
}

pub fn initial_iterate(solver: &IterationSolver, mode: InitMode, f: &ScalarField, g: &ScalarField) -> Result<ScalarField> {
    Ok(match mode {
        InitMode::Hom => solver.homogenized(f, g)?.0,
        InitMode::Zero => lift(g),
        InitMode::Random(seed) => {
            let size = solver.homogenized(f, g)?.0.max_abs().max(1.0);
            let modes = random_modes(solver.domain(), seed);
            let peak = modes.max_abs();
            let scale = if peak > 0.0 { size / peak } else { 0.0 };
            lift(g).add(&modes.scaled(scale))
        }
    })
}

/// Where an effective matrix came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbarSource {
    /// Cell problems solved on the torus carrying the same sample.
    Sample,
    /// Closed form.
    Analytic,
}

impl std::fmt::Display for AbarSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AbarSource::Sample => "sample",
            AbarSource::Analytic => "analytic",
        })
    }
}

/// A sample on `U_r` together with an effective matrix: the constant model
/// uses `a` itself, every other model solves the cell problems on the torus
/// of side `side` carrying the same cells.
pub fn sample_problem(
    domain: &Domain,
    seed: u64,
    model: &Model,
    ellipticity: f64,
    side: f64,
    opts: &CorrectorOptions,
) -> Result<(CoefficientField, SymMat, AbarSource)> {
    check_dirichlet(domain)?;
    let field = sample_field(domain, seed, model.clone(), ellipticity)?;
    if let Model::Constant(a) = model {
        let abar = SymMat::from_array(domain.dim(), *a).ok_or_else(|| Error::param("constant matrix is not symmetric"))?;
        return Ok((field, abar, AbarSource::Analytic));
    }
    let torus = Domain::new(domain.dim(), side, domain.m(), BoundaryKind::Periodic)?;
    let tfield = sample_field(&torus, seed, model.clone(), ellipticity)?;
    let phi = (0..domain.dim()).map(|k| Ok(solve_corrector(&tfield, k, opts)?.0)).collect::<Result<Vec<_>>>()?;
    let (abar, _) = effective_matrix(&tfield, &phi)?;
    Ok((field, abar, AbarSource::Sample))
}
