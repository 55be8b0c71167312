//! Seeded random coefficient fields, piecewise constant on unit cells.
//!
//! Cells are `z + □` with `□ = [-1/2, 1/2)^d` and `z ∈ Z^d` in global
//! coordinates. The value in cell `z` is a pure function of `(seed, z)`
//! through a counter-based hash, so sampling is exactly stationary under
//! integer shifts and independent of evaluation order.

use std::fmt;
use std::str::FromStr;

use crate::grid::Domain;
use crate::linalg::SymMat;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum LayerProfile {
    /// Slab `t` takes `values[t mod len]`.
    Cycle(Vec<f64>),
    /// Slab values i.i.d.: `a1` with probability `p`, else `a2`.
    Random { p: f64, a1: f64, a2: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    /// Scalar conductivity, `a1` with probability `p` and `a2` otherwise.
    TwoPhase { p: f64, a1: f64, a2: f64 },
    /// Diagonal entries i.i.d. uniform on `[lo, hi]`.
    UniformDiagonal { lo: f64, hi: f64 },
    /// Scalar conductivity depending only on the coordinate along `axis` (0-based).
    Layered { axis: usize, profile: LayerProfile },
    /// Deterministic constant matrix (upper-left block is used).
    Constant([[f64; 3]; 3]),
}

impl Model {
    pub fn constant_scalar(c: f64) -> Self {
        Model::Constant([[c, 0.0, 0.0], [0.0, c, 0.0], [0.0, 0.0, c]])
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Model::Constant(_))
    }

    /// Smallest `Λ ≥ 1` admitting every value the model can produce.
    pub fn natural_ellipticity(&self, dim: usize) -> Result<f64> {
        let vals: Vec<f64> = match self {
            Model::TwoPhase { a1, a2, .. } => vec![*a1, *a2],
            Model::UniformDiagonal { lo, hi } => vec![*lo, *hi],
            Model::Layered { profile: LayerProfile::Cycle(v), .. } => v.clone(),
            Model::Layered { profile: LayerProfile::Random { a1, a2, .. }, .. } => vec![*a1, *a2],
            Model::Constant(a) => SymMat::from_array(dim, *a)
                .ok_or_else(|| Error::param("constant matrix must be symmetric"))?
                .eigenvalues(),
        };
        if vals.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::param("model values must be positive"));
        }
        Ok(vals.iter().fold(1.0f64, |a, &v| a.max(v).max(1.0 / v)))
    }

    fn validate(&self, dim: usize, lambda: f64) -> Result<()> {
        let lo = 1.0 / lambda;
        let check = |name: &str, v: f64| -> Result<()> {
            // relative slack so that e.g. Λ = 4, a = 1/4 passes
            if v.is_finite() && v >= lo * (1.0 - 1e-12) && v <= lambda * (1.0 + 1e-12) {
                Ok(())
            } else {
                Err(Error::ModelOutOfRange { name: name.into(), value: v, lo, hi: lambda })
            }
        };
        let prob = |p: f64| -> Result<()> {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::ModelOutOfRange { name: "p".into(), value: p, lo: 0.0, hi: 1.0 })
            }
        };
        match self {
            Model::TwoPhase { p, a1, a2 } => {
                prob(*p)?;
                check("a1", *a1)?;
                check("a2", *a2)
            }
            Model::UniformDiagonal { lo: l, hi } => {
                check("lo", *l)?;
                check("hi", *hi)?;
                if l > hi {
                    return Err(Error::param("uniform-diagonal needs lo <= hi"));
                }
                Ok(())
            }
            Model::Layered { axis, profile } => {
                if *axis >= dim {
                    return Err(Error::param(format!("layer axis {} exceeds dimension {dim}", axis + 1)));
                }
                match profile {
                    LayerProfile::Cycle(vals) => {
                        if vals.is_empty() {
                            return Err(Error::param("layered profile needs at least one value"));
                        }
                        vals.iter().try_for_each(|&v| check("value", v))
                    }
                    LayerProfile::Random { p, a1, a2 } => {
                        prob(*p)?;
                        check("a1", *a1)?;
                        check("a2", *a2)
                    }
                }
            }
            Model::Constant(a) => {
                let m = SymMat::from_array(dim, *a)
                    .ok_or_else(|| Error::param("constant matrix must be symmetric"))?;
                let ev = m.eigenvalues();
                check("min eigenvalue", ev[0])?;
                check("max eigenvalue", ev[dim - 1])
            }
        }
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::TwoPhase { p, a1, a2 } => write!(f, "two-phase:p={p},a1={a1},a2={a2}"),
            Model::UniformDiagonal { lo, hi } => write!(f, "uniform-diagonal:lo={lo},hi={hi}"),
            Model::Layered { axis, profile: LayerProfile::Cycle(v) } => {
                write!(f, "layered:axis={},values={}", axis + 1, fmt_list(v))
            }
            Model::Layered { axis, profile: LayerProfile::Random { p, a1, a2 } } => {
                write!(f, "layered:axis={},p={p},a1={a1},a2={a2}", axis + 1)
            }
            Model::Constant(a) => {
                let mut parts = vec![];
                for i in 0..3 {
                    for j in i..3 {
                        parts.push(format!("a{}{}={}", i + 1, j + 1, a[i][j]));
                    }
                }
                write!(f, "constant:{}", parts.join(","))
            }
        }
    }
}

/// Parses the CLI grammar, e.g. `two-phase:p=0.5,a1=1,a2=4`,
/// `uniform-diagonal:lo=0.5,hi=2`, `layered:axis=1,values=1;4`,
/// `layered:axis=2,p=0.5,a1=1,a2=4`, `constant:c=3`, `constant:a11=2,a12=0.5,a22=3`.
/// Layer axes are 1-based.
impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::ModelParse(s.to_string());
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut kv = std::collections::BTreeMap::new();
        for part in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(bad());
            }
        }
        let mut take = |k: &str| kv.remove(k);
        let num = |v: Option<String>| -> Result<f64> { v.ok_or_else(bad)?.parse::<f64>().map_err(|_| bad()) };
        let model = match name.trim() {
            "two-phase" => Model::TwoPhase { p: num(take("p"))?, a1: num(take("a1"))?, a2: num(take("a2"))? },
            "uniform-diagonal" => Model::UniformDiagonal { lo: num(take("lo"))?, hi: num(take("hi"))? },
            "layered" => {
                let axis = take("axis").unwrap_or_else(|| "1".into()).parse::<usize>().map_err(|_| bad())?;
                if axis == 0 {
                    return Err(bad());
                }
                let profile = if let Some(vals) = take("values") {
                    let v = vals
                        .split(';')
                        .map(|x| x.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad())?;
                    LayerProfile::Cycle(v)
                } else {
                    LayerProfile::Random { p: num(take("p"))?, a1: num(take("a1"))?, a2: num(take("a2"))? }
                };
                Model::Layered { axis: axis - 1, profile }
            }
            "constant" => {
                if let Some(c) = take("c") {
                    Model::constant_scalar(num(Some(c))?)
                } else {
                    let mut a = [[0.0; 3]; 3];
                    for i in 0..3 {
                        for j in i..3 {
                            let key = format!("a{}{}", i + 1, j + 1);
                            let default = if i == j { 1.0 } else { 0.0 };
                            let v = match take(&key) {
                                Some(v) => num(Some(v))?,
                                None => default,
                            };
                            a[i][j] = v;
                            a[j][i] = v;
                        }
                    }
                    Model::Constant(a)
                }
            }
            _ => return Err(bad()),
        };
        if !kv.is_empty() {
            return Err(bad());
        }
        Ok(model)
    }
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Uniform variate in `[0, 1)` attached to `(seed, z, stream)`.
pub fn cell_uniform(seed: u64, z: [i64; 3], stream: u64) -> f64 {
    let mut h = splitmix64(seed ^ 0x6A09_E667_F3BC_C908);
    for c in z {
        h = splitmix64(h ^ (c as u64));
    }
    h = splitmix64(h ^ stream);
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    domain: Domain,
    seed: u64,
    model: Model,
    ellipticity: f64,
    period: Option<i64>,
}

/// Sample a field on `domain`. On a periodic domain the cell lattice is
/// wrapped with period `r`, which therefore has to be an integer.
pub fn sample_field(domain: &Domain, seed: u64, model: Model, lambda: f64) -> Result<CoefficientField> {
    if !(lambda.is_finite() && lambda >= 1.0) {
        return Err(Error::param(format!("ellipticity constant {lambda} must be >= 1")));
    }
    model.validate(domain.dim(), lambda)?;
    let period = if domain.is_periodic() {
        let l = domain.r().round();
        if (domain.r() - l).abs() > 1e-9 {
            return Err(Error::param("periodic coefficient fields need an integer torus side"));
        }
        Some(l as i64)
    } else {
        None
    };
    Ok(CoefficientField { domain: *domain, seed, model, ellipticity: lambda, period })
}

impl CoefficientField {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn model(&self) -> &Model {
        &self.model
    }
    pub fn ellipticity(&self) -> f64 {
        self.ellipticity
    }
    pub fn period(&self) -> Option<i64> {
        self.period
    }

    /// The same sample viewed on another grid (same `m`). A periodic sample
    /// placed on a larger domain is its periodic extension.
    pub fn on_domain(&self, domain: &Domain) -> Result<CoefficientField> {
        if domain.m() != self.domain.m() || domain.dim() != self.domain.dim() {
            return Err(Error::ResolutionMismatch("coefficient grid differs".into()));
        }
        let mut out = self.clone();
        out.domain = *domain;
        if domain.is_periodic() && self.period.is_none() {
            return Err(Error::param("a non-periodic sample cannot live on a torus"));
        }
        if let (Some(p), true) = (self.period, domain.is_periodic()) {
            let side = domain.r().round() as i64;
            if side % p != 0 {
                return Err(Error::param("torus side must be a multiple of the field period"));
            }
        }
        Ok(out)
    }

    fn wrap(&self, mut z: [i64; 3]) -> [i64; 3] {
        let d = self.domain.dim();
        for (k, c) in z.iter_mut().enumerate() {
            if k >= d {
                *c = 0;
            } else if let Some(p) = self.period {
                *c = c.rem_euclid(p);
            }
        }
        z
    }

    /// Diagonal entries of `a(z)` for the global cell `z`.
    pub fn cell_diag(&self, z: [i64; 3]) -> [f64; 3] {
        let z = self.wrap(z);
        match &self.model {
            Model::TwoPhase { p, a1, a2 } => {
                let v = if cell_uniform(self.seed, z, 0) < *p { *a1 } else { *a2 };
                [v; 3]
            }
            Model::UniformDiagonal { lo, hi } => {
                let mut out = [0.0; 3];
                for (k, o) in out.iter_mut().enumerate() {
                    *o = lo + (hi - lo) * cell_uniform(self.seed, z, k as u64);
                }
                out
            }
            Model::Layered { axis, profile } => {
                let t = z[*axis];
                let v = match profile {
                    LayerProfile::Cycle(vals) => vals[t.rem_euclid(vals.len() as i64) as usize],
                    LayerProfile::Random { p, a1, a2 } => {
                        if cell_uniform(self.seed, [t, 0, 0], 7) < *p {
                            *a1
                        } else {
                            *a2
                        }
                    }
                };
                [v; 3]
            }
            Model::Constant(a) => [a[0][0], a[1][1], a[2][2]],
        }
    }

    /// Full matrix `a(z)`.
    pub fn cell_matrix(&self, z: [i64; 3]) -> SymMat {
        let d = self.domain.dim();
        match &self.model {
            Model::Constant(a) => SymMat::from_array(d, *a).expect("validated symmetric"),
            _ => SymMat::diagonal(&self.cell_diag(z)[..d]),
        }
    }

    /// Off-diagonal part, which is constant in space (nonzero only for the
    /// constant model).
    pub fn offdiagonal(&self) -> [[f64; 3]; 3] {
        match &self.model {
            Model::Constant(a) => {
                let mut o = *a;
                for (k, row) in o.iter_mut().enumerate() {
                    row[k] = 0.0;
                }
                o
            }
            _ => [[0.0; 3]; 3],
        }
    }

    /// Global cell containing the local point `x` (nodes at half-integers
    /// belong to the upper cell).
    pub fn cell_of_point(&self, x: [f64; 3]) -> [i64; 3] {
        let o = self.domain.origin();
        let mut z = [0; 3];
        for k in 0..self.domain.dim() {
            z[k] = o[k] + (x[k] + 0.5).floor() as i64;
        }
        z
    }

    /// Conductance of the edge `(x, x + h e_axis)` starting at node `idx`.
    ///
    /// Along the edge, the two halves are combined harmonically when the edge
    /// midpoint sits on a cell interface. Across the edge, an edge lying in a
    /// cell face sees the arithmetic mean of the cells sharing that face.
    pub fn edge_coefficient(&self, idx: usize, axis: usize) -> f64 {
        let dom = &self.domain;
        let d = dom.dim();
        let m = dom.m() as i64;
        let origin = dom.origin();
        let mi = dom.multi(idx);
        // positions in units of h/4; cell index = floor((p + 2m) / 4m)
        let cell = |p: i64| (p + 2 * m).div_euclid(4 * m);
        let on_face = |p: i64| (p + 2 * m).rem_euclid(4 * m) == 0;

        let mut transverse: Vec<[i64; 3]> = vec![origin];
        for (k, &ik) in mi.iter().enumerate().take(d) {
            if k == axis {
                continue;
            }
            let p = 4 * ik as i64;
            let c = cell(p);
            let opts: &[i64] = if on_face(p) { &[c - 1, c] } else { &[c] };
            let mut next = Vec::with_capacity(transverse.len() * opts.len());
            for t in &transverse {
                for &o in opts {
                    let mut z = *t;
                    z[k] = origin[k] + o;
                    next.push(z);
                }
            }
            transverse = next;
        }
        let p = 4 * mi[axis] as i64;
        let value_at = |c: i64| -> f64 {
            let s: f64 = transverse
                .iter()
                .map(|t| {
                    let mut z = *t;
                    z[axis] = origin[axis] + c;
                    self.cell_diag(z)[axis]
                })
                .sum();
            s / transverse.len() as f64
        };
        let (ca, cb) = (cell(p + 1), cell(p + 3));
        if ca == cb {
            value_at(ca)
        } else {
            let (x, y) = (value_at(ca), value_at(cb));
            2.0 * x * y / (x + y)
        }
    }
}
