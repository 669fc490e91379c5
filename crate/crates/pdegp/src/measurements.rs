//! Measurement taxonomy and measurement orderings.
//!
//! A measurement is a functional `φ = δ_x ∘ L` for a point `x` and a linear
//! differential operator `L` of order at most 2, or a linear combination of
//! such functionals sharing one base point (as produced by linearizing a
//! nonlinear PDE). Layouts group the measurements of one problem together
//! with their base points.

use crate::geometry::{maximin_order, ConditioningSet, Ordering, PointSet};
use crate::kernels::{DiffOp, ExpandedMeasurement, Gamma, MAX_DIM};
use crate::{Error, Result};

/// Which PDE a standard measurement layout describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdeKind {
    /// `-Δu + τ(u) = f` with Dirichlet data; any dimension.
    Elliptic,
    /// One implicit time step of viscous Burgers in 1-D.
    BurgersStep,
    /// Monge-Ampère `det D²u = f` in 2-D.
    MongeAmpere,
}

/// One measurement functional based at `points[point]`.
#[derive(Debug, Clone)]
pub enum Measurement {
    Single {
        point: usize,
        op: DiffOp,
    },
    /// Weighted combination `Σ_a w_a δ_x ∘ L_a`, all at the same base point.
    Combination {
        point: usize,
        terms: Vec<(DiffOp, f64)>,
    },
}

impl Measurement {
    pub fn base_point(&self) -> usize {
        match self {
            Measurement::Single { point, .. } => *point,
            Measurement::Combination { point, .. } => *point,
        }
    }

    pub fn max_order(&self) -> usize {
        match self {
            Measurement::Single { op, .. } => op.order(),
            Measurement::Combination { terms, .. } => {
                terms.iter().map(|(op, _)| op.order()).max().unwrap_or(0)
            }
        }
    }

    pub fn is_dirac(&self) -> bool {
        matches!(
            self,
            Measurement::Single {
                op: DiffOp::Identity,
                ..
            }
        )
    }

    /// Expands into weighted pure partials, merging repeated multi-indices.
    pub fn expand(&self, pts: &PointSet) -> Result<ExpandedMeasurement> {
        let dim = pts.dim();
        let mut acc: Vec<(Gamma, f64)> = Vec::new();
        let mut push = |g: Gamma, w: f64| {
            if let Some(entry) = acc.iter_mut().find(|(h, _)| *h == g) {
                entry.1 += w;
            } else {
                acc.push((g, w));
            }
        };
        match self {
            Measurement::Single { op, .. } => {
                op.validate()?;
                for (g, w) in op.expand(dim) {
                    push(g, w);
                }
            }
            Measurement::Combination { terms, .. } => {
                if terms.is_empty() {
                    return Err(Error::Invalid("empty measurement combination".into()));
                }
                for (op, w) in terms {
                    op.validate()?;
                    for (g, wg) in op.expand(dim) {
                        push(g, w * wg);
                    }
                }
            }
        }
        acc.retain(|(_, w)| *w != 0.0);
        if acc.is_empty() {
            acc.push(([0; MAX_DIM], 0.0));
        }
        Ok(ExpandedMeasurement {
            point: pts.point(self.base_point()).to_vec(),
            terms: acc,
        })
    }
}

/// Measurements of one problem: base points (interior first, then boundary)
/// plus the measurement list over those points.
#[derive(Debug, Clone)]
pub struct MeasurementLayout {
    pub points: PointSet,
    pub n_interior: usize,
    pub measurements: Vec<Measurement>,
}

impl MeasurementLayout {
    /// Total number of measurements `N`.
    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    /// Number of base points `M`.
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn is_boundary_based(&self, i: usize) -> bool {
        self.measurements[i].base_point() >= self.n_interior
    }

    pub fn max_order(&self) -> usize {
        self.measurements.iter().map(|m| m.max_order()).max().unwrap_or(0)
    }

    pub fn expand_all(&self) -> Result<Vec<ExpandedMeasurement>> {
        self.measurements.iter().map(|m| m.expand(&self.points)).collect()
    }

    /// Expanded measurements listed in the order given by `ord`.
    pub fn expand_ordered(&self, ord: &Ordering) -> Result<Vec<ExpandedMeasurement>> {
        ord.perm
            .iter()
            .map(|&i| self.measurements[i].expand(&self.points))
            .collect()
    }

    /// Base points of the measurements in the order given by `ord` (one row
    /// per measurement; repeats base points shared by several measurements).
    pub fn base_points_ordered(&self, ord: &Ordering) -> PointSet {
        let dim = self.points.dim();
        let mut coords = Vec::with_capacity(ord.perm.len() * dim);
        for &i in &ord.perm {
            coords.extend_from_slice(self.points.point(self.measurements[i].base_point()));
        }
        PointSet::new(coords, dim).expect("base point coords are well formed")
    }
}

/// Builds the standard layout for `kind`: one Dirac per interior point, one
/// Dirac per boundary point, then the derivative measurements the PDE needs
/// (blocked by operator, interior points only).
pub fn standard_layout(
    kind: PdeKind,
    interior: &PointSet,
    boundary: &PointSet,
) -> Result<MeasurementLayout> {
    if interior.is_empty() {
        return Err(Error::Invalid("layout needs at least one interior point".into()));
    }
    let dim = interior.dim();
    match kind {
        PdeKind::BurgersStep if dim != 1 => {
            return Err(Error::Invalid("Burgers layout requires 1-D points".into()))
        }
        PdeKind::MongeAmpere if dim != 2 => {
            return Err(Error::Invalid("Monge-Ampère layout requires 2-D points".into()))
        }
        _ => {}
    }
    let points = interior.concat(boundary)?;
    points.check_distinct()?;
    let n_int = interior.len();
    let m = points.len();

    let mut ms: Vec<Measurement> = (0..m)
        .map(|p| Measurement::Single {
            point: p,
            op: DiffOp::Identity,
        })
        .collect();
    let mut block = |op: DiffOp| {
        for p in 0..n_int {
            ms.push(Measurement::Single { point: p, op });
        }
    };
    match kind {
        PdeKind::Elliptic => block(DiffOp::Laplacian),
        PdeKind::BurgersStep => {
            block(DiffOp::Partial([1, 0, 0]));
            block(DiffOp::Partial([2, 0, 0]));
        }
        PdeKind::MongeAmpere => {
            block(DiffOp::Partial([2, 0, 0]));
            block(DiffOp::Partial([0, 2, 0]));
            block(DiffOp::Partial([1, 1, 0]));
        }
    }
    Ok(MeasurementLayout {
        points,
        n_interior: n_int,
        measurements: ms,
    })
}

/// Ordering used for the full measurement set `φ`: all Diracs first in
/// maximin order of their base points (unconditioned), then the derivative
/// measurements sorted by (derivative order, maximin rank of base point).
/// Derivative measurements inherit the finest Dirac lengthscale.
pub fn order_interior_first(layout: &MeasurementLayout) -> Result<Ordering> {
    let m = layout.n_points();
    let n = layout.len();
    for (i, ms) in layout.measurements.iter().take(m).enumerate() {
        if !ms.is_dirac() || ms.base_point() != i {
            return Err(Error::Invalid(
                "interior-first ordering expects one leading Dirac per point".into(),
            ));
        }
    }
    let point_ord = maximin_order(&layout.points, ConditioningSet::Empty)?;
    let ranks = point_ord.ranks();

    let mut perm = point_ord.perm.clone();
    let mut lengthscales = point_ord.lengthscales.clone();
    let l_fine = lengthscales[m - 1];

    let mut derivs: Vec<usize> = (m..n).collect();
    derivs.sort_by_key(|&i| {
        let ms = &layout.measurements[i];
        (ms.max_order(), ranks[ms.base_point()], i)
    });
    perm.extend_from_slice(&derivs);
    lengthscales.extend(std::iter::repeat(l_fine).take(n - m));

    Ok(Ordering {
        perm,
        lengthscales,
        conditioning: ConditioningSet::Empty,
    })
}

/// Ordering used for reduced measurement sets: boundary-based measurements
/// first in maximin order among themselves, then interior-based measurements
/// in maximin order conditioned on the domain boundary `boundary`.
pub fn order_boundary_first(
    layout: &MeasurementLayout,
    boundary: &ConditioningSet,
) -> Result<Ordering> {
    let dim = layout.points.dim();
    let (bdry_ms, int_ms): (Vec<usize>, Vec<usize>) =
        (0..layout.len()).partition(|&i| layout.is_boundary_based(i));

    let sub_points = |idx: &[usize]| -> PointSet {
        let mut coords = Vec::with_capacity(idx.len() * dim);
        for &i in idx {
            coords.extend_from_slice(layout.points.point(layout.measurements[i].base_point()));
        }
        PointSet::new(coords, dim).expect("base point coords are well formed")
    };

    let mut perm = Vec::with_capacity(layout.len());
    let mut lengthscales = Vec::with_capacity(layout.len());
    if !bdry_ms.is_empty() {
        let ord = maximin_order(&sub_points(&bdry_ms), ConditioningSet::Empty)?;
        perm.extend(ord.perm.iter().map(|&q| bdry_ms[q]));
        lengthscales.extend_from_slice(&ord.lengthscales);
    }
    if !int_ms.is_empty() {
        let ord = maximin_order(&sub_points(&int_ms), boundary.clone())?;
        perm.extend(ord.perm.iter().map(|&q| int_ms[q]));
        lengthscales.extend_from_slice(&ord.lengthscales);
    }
    Ok(Ordering {
        perm,
        lengthscales,
        conditioning: boundary.clone(),
    })
}

/// Sparse rows of a linearization `DF`: `rows[m]` holds `(column, weight)`
/// pairs over the full measurement set.
#[derive(Debug, Clone)]
pub struct JacobianRows {
    pub n_cols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl JacobianRows {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// `DF · v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.n_cols);
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * v[j]).sum())
            .collect()
    }

    /// `DFᵀ · v`.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows.len());
        let mut out = vec![0.0; self.n_cols];
        for (row, &vm) in self.rows.iter().zip(v) {
            for &(j, w) in row {
                out[j] += w * vm;
            }
        }
        out
    }
}

/// Forms the reduced measurements `φ' = DF · φ`. Every row must combine
/// measurements sharing one base point; rows that are exactly one original
/// measurement with weight 1 stay as-is (so boundary Diracs keep their role).
pub fn reduce_measurements(
    layout: &MeasurementLayout,
    jac: &JacobianRows,
) -> Result<MeasurementLayout> {
    if jac.n_cols != layout.len() {
        return Err(Error::DimensionMismatch {
            expected: layout.len(),
            got: jac.n_cols,
        });
    }
    let mut ms = Vec::with_capacity(jac.n_rows());
    for row in &jac.rows {
        if row.is_empty() {
            return Err(Error::Invalid("empty reduced measurement row".into()));
        }
        let base = layout.measurements[row[0].0].base_point();
        if row.iter().any(|&(j, _)| layout.measurements[j].base_point() != base) {
            return Err(Error::Invalid(
                "reduced measurement row mixes base points".into(),
            ));
        }
        if row.len() == 1 && row[0].1 == 1.0 {
            ms.push(layout.measurements[row[0].0].clone());
            continue;
        }
        let mut terms = Vec::new();
        for &(j, w) in row {
            match &layout.measurements[j] {
                Measurement::Single { op, .. } => terms.push((*op, w)),
                Measurement::Combination { terms: inner, .. } => {
                    terms.extend(inner.iter().map(|&(op, wi)| (op, w * wi)));
                }
            }
        }
        ms.push(Measurement::Combination { point: base, terms });
    }
    Ok(MeasurementLayout {
        points: layout.points.clone(),
        n_interior: layout.n_interior,
        measurements: ms,
    })
}
