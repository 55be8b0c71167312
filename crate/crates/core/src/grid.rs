//! Rectangular grids over `U_r = (0, r)^d`, grid functions, and the
//! forward/backward difference pair.
//!
//! Nodes sit at `x = i h` with `h = 1/m`. Dirichlet domains carry the two
//! boundary layers (`i = 0` and `i = n`), periodic domains identify `i = n`
//! with `i = 0`. Node storage is row-major with axis 0 slowest.

use std::io::{Read, Write};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryKind {
    Dirichlet,
    Periodic,
}

impl std::fmt::Display for BoundaryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryKind::Dirichlet => f.write_str("dirichlet"),
            BoundaryKind::Periodic => f.write_str("periodic"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    dim: usize,
    r: f64,
    m: usize,
    intervals: usize,
    kind: BoundaryKind,
    shape: [usize; 3],
    strides: [usize; 3],
    origin: [i64; 3],
}

impl Domain {
    /// `U_r` in dimension `dim` with `m` nodes per unit length.
    ///
    /// Besides the usual `d ∈ {2,3}`, one-dimensional domains are accepted
    /// (handy for oracles), as are `m = 1` and `r ≥ 1`.
    pub fn new(dim: usize, r: f64, m: usize, kind: BoundaryKind) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::param(format!("dimension {dim} not in 1..=3")));
        }
        if m == 0 {
            return Err(Error::param("m must be at least 1"));
        }
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::param(format!("side length {r} must be positive")));
        }
        let product = r * m as f64;
        let intervals = product.round();
        if (product - intervals).abs() > 1e-9 {
            return Err(Error::InconsistentResolution { product });
        }
        let intervals = intervals as usize;
        let min_intervals = match kind {
            BoundaryKind::Dirichlet => 2,
            BoundaryKind::Periodic => 1,
        };
        if intervals < min_intervals {
            return Err(Error::param(format!("r*m = {intervals} is too small")));
        }
        let per_axis = match kind {
            BoundaryKind::Dirichlet => intervals + 1,
            BoundaryKind::Periodic => intervals,
        };
        let mut shape = [1; 3];
        shape[..dim].fill(per_axis);
        let strides = [shape[1] * shape[2], shape[2], 1];
        Ok(Domain {
            dim,
            // keep r consistent with the grid to the last bit
            r: intervals as f64 / m as f64,
            m,
            intervals,
            kind,
            shape,
            strides,
            origin: [0; 3],
        })
    }

    /// The same grid, translated by the integer vector `offset` (in unit cells).
    pub fn translated(mut self, offset: [i64; 3]) -> Self {
        for k in 0..self.dim {
            self.origin[k] += offset[k];
        }
        self
    }

    /// Same geometry with a different boundary condition.
    pub fn with_kind(&self, kind: BoundaryKind) -> Result<Self> {
        Ok(Domain::new(self.dim, self.r, self.m, kind)?.translated(self.origin))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn r(&self) -> f64 {
        self.r
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn h(&self) -> f64 {
        1.0 / self.m as f64
    }
    pub fn kind(&self) -> BoundaryKind {
        self.kind
    }
    pub fn is_periodic(&self) -> bool {
        self.kind == BoundaryKind::Periodic
    }
    /// Number of grid intervals per axis, `round(r m)`.
    pub fn intervals(&self) -> usize {
        self.intervals
    }
    /// Nodes per axis; unused axes have extent 1.
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }
    pub fn strides(&self) -> [usize; 3] {
        self.strides
    }
    /// Integer offset of the local origin in the global cell lattice.
    pub fn origin(&self) -> [i64; 3] {
        self.origin
    }
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// `|U_r| = r^d`.
    pub fn volume(&self) -> f64 {
        self.r.powi(self.dim as i32)
    }
    /// `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    pub fn index(&self, multi: [usize; 3]) -> usize {
        multi[0] * self.strides[0] + multi[1] * self.strides[1] + multi[2]
    }

    pub fn multi(&self, idx: usize) -> [usize; 3] {
        let i0 = idx / self.strides[0];
        let rem = idx % self.strides[0];
        [i0, rem / self.strides[1], rem % self.strides[1]]
    }

    /// Local coordinates of a node.
    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let mi = self.multi(idx);
        let h = self.h();
        [mi[0] as f64 * h, mi[1] as f64 * h, mi[2] as f64 * h]
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.is_boundary_multi(self.multi(idx))
    }

    pub fn is_boundary_multi(&self, mi: [usize; 3]) -> bool {
        match self.kind {
            BoundaryKind::Periodic => false,
            BoundaryKind::Dirichlet => (0..self.dim).any(|k| mi[k] == 0 || mi[k] == self.intervals),
        }
    }

    /// Nodes carrying unknowns: all of them on the torus, interior ones otherwise.
    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_boundary(i)).collect()
    }

    pub fn boundary_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_boundary(i)).collect()
    }

    /// Neighbour `x + h e_axis`, if it exists.
    #[inline]
    pub fn forward(&self, idx: usize, mi: [usize; 3], axis: usize) -> Option<usize> {
        let n = self.shape[axis];
        if mi[axis] + 1 < n {
            Some(idx + self.strides[axis])
        } else if self.is_periodic() {
            Some(idx + self.strides[axis] - n * self.strides[axis])
        } else {
            None
        }
    }

    /// Neighbour `x - h e_axis`, if it exists.
    #[inline]
    pub fn backward(&self, idx: usize, mi: [usize; 3], axis: usize) -> Option<usize> {
        if mi[axis] > 0 {
            Some(idx - self.strides[axis])
        } else if self.is_periodic() {
            Some(idx + (self.shape[axis] - 1) * self.strides[axis])
        } else {
            None
        }
    }

    /// Node reached by a signed step vector, wrapping on the torus.
    pub fn offset(&self, mi: [usize; 3], step: [i64; 3]) -> Option<usize> {
        let mut out = [0usize; 3];
        for k in 0..3 {
            let n = self.shape[k] as i64;
            let j = mi[k] as i64 + step[k];
            out[k] = if k >= self.dim {
                if step[k] != 0 {
                    return None;
                }
                0
            } else if self.is_periodic() {
                j.rem_euclid(n) as usize
            } else if (0..n).contains(&j) {
                j as usize
            } else {
                return None;
            };
        }
        Some(self.index(out))
    }

    pub(crate) fn same_grid(&self, other: &Domain) -> bool {
        self.dim == other.dim
            && self.m == other.m
            && self.intervals == other.intervals
            && self.kind == other.kind
    }
}

/// One real value per node.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    domain: Domain,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(domain: &Domain) -> Self {
        ScalarField { domain: *domain, values: vec![0.0; domain.len()] }
    }

    pub fn constant(domain: &Domain, c: f64) -> Self {
        ScalarField { domain: *domain, values: vec![c; domain.len()] }
    }

    pub fn from_values(domain: &Domain, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::param(format!(
                "expected {} values, got {}",
                domain.len(),
                values.len()
            )));
        }
        Ok(ScalarField { domain: *domain, values })
    }

    /// Sample `f` at the local node coordinates.
    pub fn from_fn(domain: &Domain, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..domain.len()).map(|i| f(domain.coords(i))).collect();
        ScalarField { domain: *domain, values }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    /// Reinterpret the values on another domain with the same grid (used to
    /// move between translated copies).
    pub fn on_domain(&self, domain: &Domain) -> Result<Self> {
        if !self.domain.same_grid(domain) {
            return Err(Error::ResolutionMismatch("grids differ".into()));
        }
        Ok(ScalarField { domain: *domain, values: self.values.clone() })
    }

    pub fn is_zero_trace(&self) -> bool {
        self.domain
            .boundary_indices()
            .into_iter()
            .all(|i| self.values[i] == 0.0)
    }

    /// Set boundary values to zero.
    pub fn zero_trace(mut self) -> Self {
        for i in self.domain.boundary_indices() {
            self.values[i] = 0.0;
        }
        self
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Plain grid inner product `h^d Σ f g`.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        self.domain.cell_volume() * dot(&self.values, &other.values)
    }

    pub fn axpy(&mut self, alpha: f64, x: &ScalarField) {
        for (a, b) in self.values.iter_mut().zip(&x.values) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> ScalarField {
        self.map(|v| alpha * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField { domain: self.domain, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        ScalarField { domain: self.domain, values }
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        ScalarField { domain: self.domain, values }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Component k at node x.
    Node,
    /// Component k at node x lives on the edge (x, x + h e_k).
    Edge,
}

/// `d` real values per node or per edge.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    domain: Domain,
    layout: Layout,
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(domain: &Domain, layout: Layout) -> Self {
        VectorField { domain: *domain, layout, comps: vec![vec![0.0; domain.len()]; domain.dim()] }
    }

    pub fn from_components(domain: &Domain, layout: Layout, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != domain.dim() || comps.iter().any(|c| c.len() != domain.len()) {
            return Err(Error::param("component count or length does not match domain"));
        }
        Ok(VectorField { domain: *domain, layout, comps })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }
    pub fn layout(&self) -> Layout {
        self.layout
    }
    pub fn component(&self, k: usize) -> &[f64] {
        &self.comps[k]
    }
    pub fn component_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.comps[k]
    }
    pub fn components(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub fn component_field(&self, k: usize) -> ScalarField {
        ScalarField { domain: self.domain, values: self.comps[k].clone() }
    }

    /// Plain inner product `h^d Σ_k Σ_x q_k p_k`.
    pub fn inner(&self, other: &VectorField) -> f64 {
        let s: f64 = self.comps.iter().zip(&other.comps).map(|(a, b)| dot(a, b)).sum();
        s * self.domain.cell_volume()
    }

    /// Pointwise Euclidean length.
    pub fn magnitude(&self) -> ScalarField {
        let values = (0..self.domain.len())
            .map(|i| self.comps.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
            .collect();
        ScalarField { domain: self.domain, values }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        VectorField { domain: self.domain, layout: self.layout, comps }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Forward-difference gradient, edge layout. Edges leaving a Dirichlet
/// domain do not exist and store 0.
pub fn gradient(f: &ScalarField) -> VectorField {
    let dom = f.domain;
    let inv_h = dom.m as f64;
    let v = &f.values;
    let mut out = VectorField::zeros(&dom, Layout::Edge);
    for (k, comp) in out.comps.iter_mut().enumerate() {
        for (idx, c) in comp.iter_mut().enumerate() {
            let mi = dom.multi(idx);
            if let Some(j) = dom.forward(idx, mi, k) {
                *c = (v[j] - v[idx]) * inv_h;
            }
        }
    }
    out
}

/// Backward-difference divergence of an edge field,
/// `(div q)(x) = Σ_k (q_k(x) - q_k(x - h e_k)) / h` with missing edges read as 0.
///
/// This is exactly minus the adjoint of [`gradient`] for the plain grid inner
/// product on zero-trace fields.
pub fn divergence(q: &VectorField) -> ScalarField {
    assert_eq!(q.layout, Layout::Edge, "divergence needs an edge-centered field");
    let dom = q.domain;
    let inv_h = dom.m as f64;
    let mut out = vec![0.0; dom.len()];
    for (k, comp) in q.comps.iter().enumerate() {
        for (idx, o) in out.iter_mut().enumerate() {
            let mi = dom.multi(idx);
            let here = if dom.forward(idx, mi, k).is_some() { comp[idx] } else { 0.0 };
            let back = match dom.backward(idx, mi, k) {
                Some(j) => comp[j],
                None => 0.0,
            };
            *o += (here - back) * inv_h;
        }
    }
    ScalarField { domain: dom, values: out }
}

const MAGIC: &[u8; 4] = b"HFLD";
const VERSION: u8 = 1;

/// Dump a field: magic `HFLD`, version byte, `d`, per-axis node counts
/// (u64), `r` and `h` (f64), then the values, all little endian.
pub fn write_hfld<W: Write>(field: &ScalarField, mut w: W) -> Result<()> {
    let dom = field.domain();
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, dom.dim() as u8])?;
    for k in 0..dom.dim() {
        w.write_all(&(dom.shape()[k] as u64).to_le_bytes())?;
    }
    w.write_all(&dom.r().to_le_bytes())?;
    w.write_all(&dom.h().to_le_bytes())?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read a field written by [`write_hfld`]. The boundary kind is recovered
/// from the node count: `r/h + 1` nodes is Dirichlet, `r/h` periodic.
pub fn read_hfld<R: Read>(mut rd: R) -> Result<ScalarField> {
    let mut head = [0u8; 6];
    rd.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if head[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", head[4])));
    }
    let dim = head[5] as usize;
    if !(1..=3).contains(&dim) {
        return Err(Error::Format(format!("bad dimension {dim}")));
    }
    let mut b8 = [0u8; 8];
    let mut counts = Vec::with_capacity(dim);
    for _ in 0..dim {
        rd.read_exact(&mut b8)?;
        counts.push(u64::from_le_bytes(b8) as usize);
    }
    rd.read_exact(&mut b8)?;
    let r = f64::from_le_bytes(b8);
    rd.read_exact(&mut b8)?;
    let h = f64::from_le_bytes(b8);
    if counts.iter().any(|&c| c != counts[0]) {
        return Err(Error::Format("non-cubic grids are not supported".into()));
    }
    let m = (1.0 / h).round();
    if !(m >= 1.0 && (m * h - 1.0).abs() < 1e-9) {
        return Err(Error::Format(format!("spacing {h} is not 1/m")));
    }
    let n = counts[0] as f64;
    let kind = if ((n - 1.0) * h - r).abs() <= 1e-9 * r.max(1.0) {
        BoundaryKind::Dirichlet
    } else if (n * h - r).abs() <= 1e-9 * r.max(1.0) {
        BoundaryKind::Periodic
    } else {
        return Err(Error::Format("node count inconsistent with r and h".into()));
    };
    let dom = Domain::new(dim, r, m as usize, kind)?;
    let mut values = Vec::with_capacity(dom.len());
    for _ in 0..dom.len() {
        rd.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    ScalarField::from_values(&dom, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dir(d: usize, r: f64, m: usize) -> Domain {
        Domain::new(d, r, m, BoundaryKind::Dirichlet).unwrap()
    }

    #[test]
    fn node_counts() {
        let d = dir(2, 2.0, 2);
        assert_eq!(d.shape(), [5, 5, 1]);
        assert_eq!(d.interior_indices().len(), 9);
        let p = Domain::new(2, 4.0, 1, BoundaryKind::Periodic).unwrap();
        assert_eq!(p.len(), 16);
        assert_eq!(p.interior_indices().len(), 16);
        assert_eq!(dir(3, 2.0, 2).len(), 125);
        assert!(((d.shape()[0] - 1) as f64 * d.h() - d.r()).abs() < 1e-12);
    }

    #[test]
    fn rejects_fractional_resolution() {
        let e = Domain::new(2, 2.3, 2, BoundaryKind::Dirichlet).unwrap_err();
        assert!(matches!(e, Error::InconsistentResolution { .. }));
        assert!(Domain::new(4, 2.0, 2, BoundaryKind::Dirichlet).is_err());
        assert!(Domain::new(2, 2.0, 0, BoundaryKind::Dirichlet).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let d = dir(3, 2.0, 3);
        for i in 0..d.len() {
            assert_eq!(d.index(d.multi(i)), i);
        }
    }

    #[test]
    fn gradient_of_linear_and_quadratic() {
        let d = dir(2, 3.0, 4);
        let g = gradient(&ScalarField::from_fn(&d, |x| x[0]));
        for i in 0..d.len() {
            let mi = d.multi(i);
            let expect = if mi[0] < d.intervals() { 1.0 } else { 0.0 };
            assert!((g.component(0)[i] - expect).abs() < 1e-12);
            assert_eq!(g.component(1)[i], 0.0);
        }
        let h = d.h();
        let g2 = gradient(&ScalarField::from_fn(&d, |x| x[0] * x[0]));
        for i in 0..d.len() {
            let mi = d.multi(i);
            if mi[0] < d.intervals() {
                let x = d.coords(i)[0];
                assert!((g2.component(0)[i] - (2.0 * x + h)).abs() < 1e-11);
            }
        }
        let c = gradient(&ScalarField::constant(&d, 7.0));
        assert!(c.components().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_of_constant_vanishes_inside() {
        let d = dir(2, 2.0, 4);
        let q = VectorField::from_components(&d, Layout::Edge, vec![vec![3.0; d.len()], vec![-1.0; d.len()]])
            .unwrap();
        let div = divergence(&q);
        for i in d.interior_indices() {
            assert!(div.get(i).abs() < 1e-12);
        }
    }

    #[test]
    fn second_difference_of_quadratic_1d() {
        let d = dir(1, 4.0, 3);
        let lap = divergence(&gradient(&ScalarField::from_fn(&d, |x| x[0] * x[0])));
        for i in d.interior_indices() {
            assert!((lap.get(i) - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn laplacian_converges_quadratically() {
        use std::f64::consts::PI;
        let mut errs = vec![];
        let ms = [2usize, 4, 8, 16];
        for &m in &ms {
            let d = Domain::new(2, 2.0, m, BoundaryKind::Periodic).unwrap();
            let f = ScalarField::from_fn(&d, |x| (PI * x[0]).sin() * (PI * x[1]).cos());
            let lap = divergence(&gradient(&f));
            let exact = ScalarField::from_fn(&d, |x| -2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).cos());
            let e = lap.sub(&exact);
            errs.push((e.inner(&e) / d.volume()).sqrt());
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.9, "{errs:?}");
        }
    }

    #[test]
    fn hfld_roundtrip() {
        for kind in [BoundaryKind::Dirichlet, BoundaryKind::Periodic] {
            let d = Domain::new(2, 3.0, 2, kind).unwrap();
            let f = ScalarField::from_fn(&d, |x| x[0] - 2.0 * x[1]);
            let mut buf = vec![];
            write_hfld(&f, &mut buf).unwrap();
            assert_eq!(&buf[..4], b"HFLD");
            assert_eq!(buf.len(), 6 + 16 + 16 + 8 * d.len());
            let g = read_hfld(&buf[..]).unwrap();
            assert_eq!(g, f);
        }
        assert!(read_hfld(&b"HFLX\x01\x02"[..]).is_err());
    }

    fn field_strategy(d: Domain) -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
        let n = d.len();
        (
            proptest::collection::vec(-1.0f64..1.0, n),
            proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, n), d.dim()),
        )
    }

    proptest! {
        #[test]
        fn adjointness_dirichlet((fv, qv) in field_strategy(dir(2, 3.0, 2))) {
            let d = dir(2, 3.0, 2);
            let f = ScalarField::from_values(&d, fv).unwrap().zero_trace();
            let q = VectorField::from_components(&d, Layout::Edge, qv).unwrap();
            let lhs = gradient(&f).inner(&q);
            let rhs = f.inner(&divergence(&q));
            let scale = f.inner(&f).sqrt() * q.inner(&q).sqrt();
            prop_assert!((lhs + rhs).abs() <= 1e-12 * scale.max(1e-300));
        }

        #[test]
        fn adjointness_periodic((fv, qv) in field_strategy(Domain::new(3, 2.0, 2, BoundaryKind::Periodic).unwrap())) {
            let d = Domain::new(3, 2.0, 2, BoundaryKind::Periodic).unwrap();
            let f = ScalarField::from_values(&d, fv).unwrap();
            let q = VectorField::from_components(&d, Layout::Edge, qv).unwrap();
            let lhs = gradient(&f).inner(&q);
            let rhs = f.inner(&divergence(&q));
            let scale = f.inner(&f).sqrt() * q.inner(&q).sqrt();
            prop_assert!((lhs + rhs).abs() <= 1e-12 * scale.max(1e-300));
        }
    }
}
