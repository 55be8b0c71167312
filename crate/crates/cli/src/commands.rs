use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use hetsolve::algorithm::{initial_iterate, sample_problem, solve_dirichlet_with, IterationSolver, InitMode};
use hetsolve::coefficient::{sample_field, Model};
use hetsolve::grid::{write_hfld, BoundaryKind, Domain, ScalarField};
use hetsolve::homogenization::{check_lambda, compute_correctors, corrector_scaling, regularize_correctors, regularize_phi, CorrectorOptions};
use hetsolve::norms::{ell_lambda, norm_lp, Region};
use hetsolve::operator::{cg_solve, condition_estimate, CgOptions, CgVariant, Conductance, SparseOperator};
use hetsolve::stats::{fit_slope, median, os_theta};
use hetsolve::twoscale::{evaluate_bound, sine_product};
use hetsolve::Error;

use crate::config::*;

/// Exit status classes.
#[derive(Debug)]
pub enum Failure {
    /// Bad input: exit 1.
    Validation(String),
    /// Numerical failure: exit 2.
    Solver(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "invalid configuration: {m}"),
            Failure::Solver(m) => write!(f, "solver failure: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotConverged { .. }
            | Error::EstimationFailed(_)
            | Error::UnconvergedCorrector(_)
            | Error::AlreadyConverged
            | Error::Io(_)
            | Error::Format(_) => Failure::Solver(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

fn invalid<T>(msg: impl Into<String>) -> Res<T> {
    Err(Failure::Validation(msg.into()))
}

fn io_err(e: impl std::fmt::Display) -> Failure {
    Failure::Solver(e.to_string())
}

pub type Res<T> = std::result::Result<T, Failure>;

/// Resolved run context.
pub struct Context {
    pub config: Cli,
    pub out: PathBuf,
}

impl Context {
    fn seeds(&self, n: usize) -> Vec<u64> {
        (0..n as u64).map(|i| self.config.seed_base + i).collect()
    }

    /// Write `config.echo`; called once validation has passed.
    fn echo(&self) -> Res<()> {
        fs::create_dir_all(&self.out).map_err(io_err)?;
        let text = toml::to_string(&self.config).map_err(io_err)?;
        fs::write(self.out.join("config.echo"), text).map_err(io_err)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Res<()> {
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(header).map_err(io_err)?;
    for r in rows {
        w.write_record(r).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

struct Sample {
    dim: usize,
    m: usize,
    model: Model,
    ellipticity: f64,
    seeds: usize,
}

fn sample(a: &SampleArgs) -> Res<Sample> {
    if !(1..=3).contains(&a.d) {
        return invalid(format!("d = {} must be 1, 2 or 3", a.d));
    }
    if a.m == 0 {
        return invalid("m must be positive");
    }
    if a.seeds == 0 {
        return invalid("seeds must be positive");
    }
    let model: Model = a.model.parse()?;
    let ellipticity = match a.ellipticity {
        Some(l) => l,
        None => model.natural_ellipticity(a.d)?,
    };
    // validates the model against Λ
    let probe = Domain::new(a.d, 2.0, 1, BoundaryKind::Dirichlet)?;
    sample_field(&probe, 0, model.clone(), ellipticity)?;
    Ok(Sample { dim: a.d, m: a.m, model, ellipticity, seeds: a.seeds })
}

fn check_tol(tol: f64) -> Res<()> {
    if !(tol > 0.0 && tol < 1.0) {
        return invalid(format!("tol = {tol} must lie in (0, 1)"));
    }
    Ok(())
}

fn check_lambda_box(lambda: f64, r: f64) -> Res<()> {
    if !(lambda > 0.0 && lambda <= 0.5 && lambda * r >= 1.0 - 1e-12) {
        return invalid(format!("lambda = {lambda} must lie in [1/r, 1/2] with r = {r}"));
    }
    Ok(())
}

fn torus_side(l: Option<f64>, r: f64) -> Res<f64> {
    let l = l.unwrap_or(r);
    if !(l >= 1.0 && (l - l.round()).abs() < 1e-9) {
        return invalid(format!("torus side L = {l} must be a positive integer"));
    }
    Ok(l.round())
}

fn variant(v: Variant) -> CgVariant {
    match v {
        Variant::Plain => CgVariant::Plain,
        Variant::Jacobi => CgVariant::Jacobi,
    }
}

/// Right-hand side `f ≡ 1` inside with zero boundary data.
fn default_data(dom: &Domain) -> (ScalarField, ScalarField) {
    (ScalarField::constant(dom, 1.0).zero_trace(), ScalarField::zeros(dom))
}

pub fn run(cmd: &Command, ctx: &Context) -> Res<()> {
    match cmd {
        Command::GenerateField(a) => generate(a, ctx),
        Command::Homogenize(a) => homogenize(a, ctx),
        Command::Solve(a) => solve(a, ctx),
        Command::Iterate(a) => iterate(a, ctx),
        Command::ContractionSweep(a) => sweep(a, ctx),
        Command::Twoscale(a) => twoscale(a, ctx),
        Command::CorrectorStats(a) => corrector_stats(a, ctx),
        Command::ConditionNumbers(a) => condition_numbers(a, ctx),
        Command::OsStats(a) => os_stats(a, ctx),
    }
}

fn generate(a: &GenerateArgs, ctx: &Context) -> Res<()> {
    let s = sample(&a.sample)?;
    let kind = if a.periodic { BoundaryKind::Periodic } else { BoundaryKind::Dirichlet };
    let dom = Domain::new(s.dim, a.r, s.m, kind)?;
    if a.periodic && (a.r - a.r.round()).abs() > 1e-9 {
        return invalid("a periodic sample needs an integer side");
    }
    ctx.echo()?;
    let rows = ctx
        .seeds(s.seeds)
        .par_iter()
        .map(|&seed| -> Res<Vec<Vec<String>>> {
            let field = sample_field(&dom, seed, s.model.clone(), s.ellipticity)?;
            let cond = Conductance::from_field(&field);
            let mut rows = vec![];
            for axis in 0..s.dim {
                let edges = cond.edges(axis);
                let dump = ScalarField::from_values(&dom, edges.to_vec())?;
                let file = fs::File::create(ctx.path(&format!("field_seed{seed}_axis{}.hfld", axis + 1))).map_err(io_err)?;
                write_hfld(&dump, std::io::BufWriter::new(file))?;
                let present: Vec<f64> = edges.iter().copied().filter(|&v| v > 0.0).collect();
                let mean = present.iter().sum::<f64>() / present.len() as f64;
                let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = present.iter().copied().fold(0.0, f64::max);
                rows.push(vec![seed.to_string(), (axis + 1).to_string(), fmt(mean), fmt(lo), fmt(hi)]);
            }
            Ok(rows)
        })
        .collect::<Res<Vec<_>>>()?;
    write_csv(&ctx.path("generate-field.csv"), &["seed", "axis", "mean", "min", "max"], &rows.concat())
}

fn homogenize(a: &HomogenizeArgs, ctx: &Context) -> Res<()> {
    let s = sample(&a.sample)?;
    let l = torus_side(Some(a.l), a.l)?;
    let dom = Domain::new(s.dim, l, s.m, BoundaryKind::Periodic)?;
    check_tol(a.tol)?;
    for &lam in &a.lambda_list {
        check_lambda(lam, l)?;
    }
    ctx.echo()?;
    let opts = CorrectorOptions { tol: a.tol, ..Default::default() };
    let results = ctx
        .seeds(s.seeds)
        .par_iter()
        .map(|&seed| -> Res<(Vec<String>, Vec<Vec<String>>)> {
            let field = sample_field(&dom, seed, s.model.clone(), s.ellipticity)?;
            let set = compute_correctors(&field, &opts)?;
            let mut row = vec![seed.to_string(), fmt(l)];
            for i in 0..s.dim {
                for j in i..s.dim {
                    row.push(fmt(set.abar.get(i, j)));
                }
            }
            row.push(fmt(set.residual));
            let mut extra = vec![];
            for &lam in &a.lambda_list {
                for (k, (phi_reg, _)) in regularize_phi(&set.phi, lam)?.iter().enumerate() {
                    let v = norm_lp(phi_reg, &Region::whole(&dom), 2.0)?;
                    extra.push(vec![seed.to_string(), fmt(lam), (k + 1).to_string(), fmt(v)]);
                }
            }
            Ok((row, extra))
        })
        .collect::<Res<Vec<_>>>()?;
    let mut header = vec!["seed".to_string(), "L".to_string()];
    for i in 0..s.dim {
        for j in i..s.dim {
            header.push(format!("abar_{}{}", i + 1, j + 1));
        }
    }
    header.push("residual".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = results.iter().map(|r| r.0.clone()).collect();
    write_csv(&ctx.path("homogenize.csv"), &header, &rows)?;
    if !a.lambda_list.is_empty() {
        let extra: Vec<Vec<String>> = results.into_iter().flat_map(|r| r.1).collect();
        write_csv(&ctx.path("homogenize_lambda.csv"), &["seed", "lambda", "k", "phi_reg_l2"], &extra)?;
    }
    Ok(())
}

fn solve(a: &SolveArgs, ctx: &Context) -> Res<()> {
    let s = sample(&a.sample)?;
    let dom = Domain::new(s.dim, a.r, s.m, BoundaryKind::Dirichlet)?;
    check_tol(a.tol)?;
    ctx.echo()?;
    let opts = CgOptions { tol: a.tol, variant: variant(a.cg), ..Default::default() };
    let rows = ctx
        .seeds(s.seeds)
        .par_iter()
        .map(|&seed| -> Res<Vec<String>> {
            let field = sample_field(&dom, seed, s.model.clone(), s.ellipticity)?;
            let (f, g) = default_data(&dom);
            let (u, rep) = solve_dirichlet_with(&field, &f, &g, &opts)?;
            let file = fs::File::create(ctx.path(&format!("solution_seed{seed}.hfld"))).map_err(io_err)?;
            write_hfld(&u, std::io::BufWriter::new(file))?;
            Ok(vec![
                seed.to_string(),
                fmt(dom.r()),
                dom.m().to_string(),
                rep.iterations.to_string(),
                fmt(rep.relative_residual),
                fmt(hetsolve::algorithm::h1(&u)?),
                fmt(u.max_abs()),
            ])
        })
        .collect::<Res<Vec<_>>>()?;
    write_csv(&ctx.path("solve.csv"), &["seed", "r", "m", "iterations", "residual", "u_h1", "u_max"], &rows)
}

fn init_mode(init: Init, seed: u64) -> InitMode {
    match init {
        Init::Hom => InitMode::Hom,
        Init::Zero => InitMode::Zero,
        Init::Random => InitMode::Random(seed),
    }
}

fn abar_row(seed: u64, source: impl std::fmt::Display, abar: &hetsolve::linalg::SymMat) -> Vec<String> {
    let mut row = vec![seed.to_string(), source.to_string()];
    for i in 0..abar.dim() {
        for j in i..abar.dim() {
            row.push(fmt(abar.get(i, j)));
        }
    }
    row
}

fn abar_header(dim: usize) -> Vec<String> {
    let mut h = vec!["seed".to_string(), "source".to_string()];
    for i in 0..dim {
        for j in i..dim {
            h.push(format!("abar_{}{}", i + 1, j + 1));
        }
    }
    h
}

fn write_abar(ctx: &Context, dim: usize, rows: &[Vec<String>]) -> Res<()> {
    let h = abar_header(dim);
    let h: Vec<&str> = h.iter().map(String::as_str).collect();
    write_csv(&ctx.path("abar.csv"), &h, rows)
}

fn iterate(a: &IterateArgs, ctx: &Context) -> Res<()> {
    let s = sample(&a.sample)?;
    let dom = Domain::new(s.dim, a.r, s.m, BoundaryKind::Dirichlet)?;
    check_lambda_box(a.lambda, dom.r())?;
    check_tol(a.tol)?;
    if a.rounds == 0 {
        return invalid("rounds must be at least 1");
    }
    let l = torus_side(a.l, dom.r())?;
    ctx.echo()?;
    let opts = CgOptions { tol: a.tol, variant: variant(a.cg), ..Default::default() };
    let results = ctx
        .seeds(s.seeds)
        .par_iter()
        .map(|&seed| -> Res<(Vec<Vec<String>>, Vec<String>)> {
            let (field, abar, source) = sample_problem(&dom, seed, &s.model, s.ellipticity, l, &CorrectorOptions::default())?;
            let solver = IterationSolver::new(&field, &abar, a.lambda, opts)?;
            let (f, g) = default_data(&dom);
            let v0 = initial_iterate(&solver, init_mode(a.init, seed), &f, &g)?;
            let state = solver.run_with(&v0, &f, &g, a.rounds, a.early_stop)?;
            let rows = state
                .records
                .iter()
                .map(|r| {
                    vec![
                        seed.to_string(),
                        r.round.to_string(),
                        fmt(r.err_after),
                        fmt(r.z),
                        r.cg[0].to_string(),
                        r.cg[1].to_string(),
                        r.cg[2].to_string(),
                    ]
                })
                .collect();
            Ok((rows, abar_row(seed, source, &abar)))
        })
        .collect::<Res<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = results.iter().flat_map(|r| r.0.clone()).collect();
    write_csv(&ctx.path("iterate.csv"), &["seed", "round", "err_h1", "Z", "cg1", "cg2", "cg3"], &rows)?;
    write_abar(ctx, s.dim, &results.into_iter().map(|r| r.1).collect::<Vec<_>>())
}

fn sweep(a: &SweepArgs, ctx: &Context) -> Res<()> {
    let s = sample(&a.sample)?;
    let dom = Domain::new(s.dim, a.r, s.m, BoundaryKind::Dirichlet)?;
    if a.lambda_list.is_empty() {
        return invalid("lambda-list is empty");
    }
    for &lam in &a.lambda_list {
        check_lambda_box(lam, dom.r())?;
    }
    if s.seeds < 8 {
        return invalid("contraction-sweep needs at least 8 seeds");
    }
    check_tol(a.tol)?;
    if !(a.s > 0.0 && a.s <= 2.0) {
        return invalid("s must lie in (0, 2]");
    }
    let l = torus_side(a.l, dom.r())?;
    ctx.echo()?;
    let opts = CgOptions { tol: a.tol, variant: variant(a.cg), ..Default::default() };
    // per seed: one Z per lambda
    let per_seed = ctx
        .seeds(s.seeds)
        .par_iter()
        .map(|&seed| -> Res<(Vec<(f64, Vec<String>)>, Vec<String>)> {
            let (field, abar, source) = sample_problem(&dom, seed, &s.model, s.ellipticity, l, &CorrectorOptions::default())?;
            let (f, g) = default_data(&dom);
            let mut out = vec![];
            for &lam in &a.lambda_list {
                let solver = IterationSolver::new(&field, &abar, lam, opts)?;
                let (u, _) = solver.reference(&f, &g)?;
                let v0 = initial_iterate(&solver, init_mode(a.init, seed), &f, &g)?;
                let (_, rec) = solver.iterate_once(1, &v0, &f, &u)?;
                out.push((
                    rec.z,
                    vec![
                        fmt(lam),
                        seed.to_string(),
                        fmt(rec.z),
                        fmt(rec.err_before),
                        fmt(rec.err_after),
                        rec.cg[0].to_string(),
                        rec.cg[1].to_string(),
                        rec.cg[2].to_string(),
                    ],
                ));
            }
            Ok((out, abar_row(seed, source, &abar)))
        })
        .collect::<Res<Vec<_>>>()?;
    let mut rows = vec![];
    let mut summary = vec![];
    for (i, &lam) in a.lambda_list.iter().enumerate() {
        let zs: Vec<f64> = per_seed.iter().map(|p| p.0[i].0).collect();
        rows.extend(per_seed.iter().map(|p| p.0[i].1.clone()));
        let med = median(&zs);
        let scale = (ell_lambda(lam, s.dim) * lam).sqrt();
        let est = os_theta(&zs, a.s)?;
        summary.push(vec![fmt(lam), fmt(med), fmt(med / scale), fmt(est.theta), fmt(est.ci), est.n.to_string()]);
    }
    write_csv(
        &ctx.path("contraction-sweep.csv"),
        &["lambda", "seed", "Z", "err_before", "err_after", "cg1", "cg2", "cg3"],
        &rows,
    )?;
    write_csv(
        &ctx.path("contraction-summary.csv"),
        &["lambda", "median_Z", "collapse_ratio", "theta_star", "ci", "n"],
        &summary,
    )?;
    write_abar(ctx, s.dim, &per_seed.into_iter().map(|p| p.1).collect::<Vec<_>>())
}

fn twoscale(a: &TwoScaleArgs, ctx: &Context) -> Res<()> {
    let s = sample(&a.sample)?;
    let dom = Domain::new(s.dim, a.r, s.m, BoundaryKind::Dirichlet)?;
    let l = torus_side(a.l, dom.r())?;
    let torus = Domain::new(s.dim, l, s.m, BoundaryKind::Periodic)?;
    check_lambda(a.lambda, l)?;
    check_lambda_box(a.lambda, dom.r())?;
    if !(a.mu >= 0.0 && a.mu.is_finite()) {
        return invalid("mu must be nonnegative");
    }
    check_tol(a.tol)?;
    if s.m < 2 {
        return invalid("the unit bump needs m >= 2");
    }
    ctx.echo()?;
    let rows = ctx
        .seeds(s.seeds)
        .par_iter()
        .map(|&seed| -> Res<Vec<String>> {
            let field = sample_field(&torus, seed, s.model.clone(), s.ellipticity)?;
            let set = regularize_correctors(&compute_correctors(&field, &CorrectorOptions::default())?, a.lambda)?;
            let rep = evaluate_bound(&sine_product(&dom), &set, a.mu, a.tol)?;
            Ok(vec![
                seed.to_string(),
                fmt(dom.r()),
                dom.m().to_string(),
                fmt(a.lambda),
                fmt(a.mu),
                fmt(rep.lhs),
                fmt(rep.rhs_x1),
                fmt(rep.rhs_x2),
                fmt(rep.rhs_y1),
                fmt(rep.x1),
                fmt(rep.x2),
                fmt(rep.y1),
                fmt(rep.ratio()),
            ])
        })
        .collect::<Res<Vec<_>>>()?;
    write_csv(
        &ctx.path("twoscale.csv"),
        &["seed", "r", "m", "lambda", "mu", "lhs", "rhs_x1", "rhs_x2", "rhs_y1", "X1", "X2", "Y1", "ratio"],
        &rows,
    )
}

fn corrector_stats(a: &CorrectorStatsArgs, ctx: &Context) -> Res<()> {
    let s = sample(&a.sample)?;
    let l = torus_side(Some(a.l), a.l)?;
    let dom = Domain::new(s.dim, l, s.m, BoundaryKind::Periodic)?;
    for &lam in &a.lambda_list {
        check_lambda(lam, l)?;
    }
    check_tol(a.tol)?;
    ctx.echo()?;
    let per_seed = ctx
        .seeds(s.seeds)
        .par_iter()
        .map(|&seed| -> Res<Vec<Vec<(f64, f64)>>> {
            let field = sample_field(&dom, seed, s.model.clone(), s.ellipticity)?;
            Ok(corrector_scaling(&field, &a.lambda_list, &CorrectorOptions { tol: a.tol, ..Default::default() })?)
        })
        .collect::<Res<Vec<_>>>()?;
    let seeds = ctx.seeds(s.seeds);
    let mut rows = vec![];
    let mut summary = vec![];
    let (mut lx, mut lg, mut lp) = (vec![], vec![], vec![]);
    for (i, &lam) in a.lambda_list.iter().enumerate() {
        let (mut g_sum, mut p_sum, mut count) = (0.0, 0.0, 0.0);
        for (seed, data) in seeds.iter().zip(&per_seed) {
            for (k, &(g, p)) in data[i].iter().enumerate() {
                rows.push(vec![seed.to_string(), fmt(l), fmt(lam), (k + 1).to_string(), fmt(g), fmt(p)]);
                g_sum += g;
                p_sum += p;
                count += 1.0;
            }
        }
        summary.push(vec![fmt(lam), fmt(ell_lambda(lam, s.dim)), fmt(g_sum / count), fmt(p_sum / count)]);
        lx.push(lam.ln());
        lg.push((g_sum / count).ln());
        lp.push(p_sum / count);
    }
    write_csv(
        &ctx.path("corrector-stats.csv"),
        &["seed", "L", "lambda", "k", "grad_smooth_cell_mean", "phi_reg_sq"],
        &rows,
    )?;
    write_csv(&ctx.path("corrector-stats-summary.csv"), &["lambda", "ell", "grad_smooth_mean", "phi_reg_sq_mean"], &summary)?;
    if a.lambda_list.len() >= 2 {
        let inv: Vec<f64> = lx.iter().map(|x| -x).collect();
        write_csv(
            &ctx.path("corrector-stats-fit.csv"),
            &["quantity", "slope"],
            &[
                vec!["log_grad_smooth_vs_log_lambda".into(), fmt(fit_slope(&lx, &lg))],
                vec!["phi_reg_sq_vs_log_inv_lambda".into(), fmt(fit_slope(&inv, &lp))],
            ],
        )?;
    }
    Ok(())
}

fn condition_numbers(a: &ConditionArgs, ctx: &Context) -> Res<()> {
    let s = sample(&a.sample)?;
    let mut doms = vec![];
    for &r in &a.r_list {
        doms.push(Domain::new(s.dim, r, s.m, BoundaryKind::Dirichlet)?);
    }
    for &lam in &a.lambda_list {
        if !(lam > 0.0 && lam <= 0.5) {
            return invalid(format!("lambda = {lam} must lie in (0, 1/2]"));
        }
    }
    check_tol(a.tol)?;
    if a.power_iters == 0 {
        return invalid("power-iters must be positive");
    }
    ctx.echo()?;
    let seed = ctx.config.seed_base;
    let opts = CgOptions { tol: a.tol, variant: variant(a.cg), ..Default::default() };
    let mut lambdas = vec![0.0];
    lambdas.extend(a.lambda_list.iter().copied());
    let jobs: Vec<(Domain, f64)> = doms.iter().flat_map(|d| lambdas.iter().map(move |&l| (*d, l))).collect();
    let rows = jobs
        .par_iter()
        .map(|(dom, lam)| -> Res<Vec<String>> {
            let field = sample_field(dom, seed, s.model.clone(), s.ellipticity)?;
            let op = SparseOperator::assemble(&Conductance::from_field(&field), lam * lam)?;
            let est = condition_estimate(&op, a.power_iters)?;
            let (f, _) = default_data(dom);
            let (_, rep) = cg_solve(&op, &op.restrict(&f), &opts)?;
            Ok(vec![
                fmt(dom.r()),
                dom.m().to_string(),
                fmt(*lam),
                fmt(est.kappa_min),
                fmt(est.kappa_max),
                fmt(est.rho),
                rep.iterations.to_string(),
            ])
        })
        .collect::<Res<Vec<_>>>()?;
    write_csv(
        &ctx.path("condition-numbers.csv"),
        &["r", "m", "lambda", "kappa_min", "kappa_max", "rho", "cg_iters"],
        &rows,
    )
}

fn read_column(path: &Path, column: &str) -> Res<Vec<f64>> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))?;
    let records: Vec<csv::StringRecord> = rd
        .records()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Failure::Validation(e.to_string()))?;
    let Some(first) = records.first() else {
        return invalid("input has no rows");
    };
    let header = first.iter().any(|f| f.trim().parse::<f64>().is_err());
    let index = match column.parse::<usize>() {
        Ok(i) => i,
        Err(_) if header => match first.iter().position(|f| f.trim() == column) {
            Some(i) => i,
            None => return invalid(format!("no column named {column}")),
        },
        Err(_) => return invalid(format!("no header to look up column {column}")),
    };
    records
        .iter()
        .skip(usize::from(header))
        .map(|r| {
            let cell = r.get(index).ok_or_else(|| Failure::Validation(format!("row without column {index}")))?;
            cell.trim().parse::<f64>().map_err(|_| Failure::Validation(format!("not a number: {cell}")))
        })
        .collect()
}

fn os_stats(a: &OsStatsArgs, ctx: &Context) -> Res<()> {
    let samples = read_column(&a.input, &a.column)?;
    if samples.len() < 2 {
        return invalid("at least two samples are required");
    }
    for &s in &a.s {
        if !(s > 0.0 && s <= 2.0) {
            return invalid(format!("s = {s} must lie in (0, 2]"));
        }
    }
    ctx.echo()?;
    let rows = a
        .s
        .iter()
        .map(|&s| {
            let est = os_theta(&samples, s)?;
            Ok(vec![fmt(s), fmt(est.theta), fmt(est.ci), est.n.to_string()])
        })
        .collect::<Res<Vec<_>>>()?;
    write_csv(&ctx.path("os-stats.csv"), &["s", "theta_star", "ci", "n"], &rows)
}
