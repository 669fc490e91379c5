//! Point sets, conditioned maximin ordering, and homogeneity diagnostics.

use rayon::prelude::*;

use crate::{Error, Result};

/// A set of points in `R^d`, stored as flattened coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    coords: Vec<f64>,
    dim: usize,
}

impl PointSet {
    pub fn new(coords: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::Invalid(format!(
                "coordinate buffer of length {} is not a multiple of dim {}",
                coords.len(),
                dim
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Invalid("non-finite coordinate".into()));
        }
        Ok(Self { coords, dim })
    }

    /// Builds a point set from per-point slices.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).unwrap_or(1);
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Self::new(coords, dim)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    /// Errors if any two points coincide.
    pub fn check_distinct(&self) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            for j in (i + 1)..n {
                if dist(self.point(i), self.point(j)) == 0.0 {
                    return Err(Error::DuplicatePoints(i, j));
                }
            }
        }
        Ok(())
    }

    /// Largest pairwise distance. Exact; `O(n^2)` but parallel.
    pub fn diameter(&self) -> f64 {
        let n = self.len();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = self.point(i);
                ((i + 1)..n)
                    .map(|j| dist(xi, self.point(j)))
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Concatenates two point sets of the same dimension.
    pub fn concat(&self, other: &PointSet) -> Result<PointSet> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        PointSet::new(coords, self.dim)
    }
}

pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// The set `A` that the maximin ordering conditions on.
#[derive(Debug, Clone, PartialEq)]
pub enum ConditioningSet {
    Empty,
    /// The boundary of the axis-aligned box `[lo, hi]`.
    BoxBoundary { lo: Vec<f64>, hi: Vec<f64> },
    PointList(PointSet),
}

impl ConditioningSet {
    pub fn box_boundary(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| l >= h) {
            return Err(Error::Invalid(
                "BoxBoundary requires lo < hi componentwise".into(),
            ));
        }
        Ok(ConditioningSet::BoxBoundary { lo, hi })
    }
}

/// Euclidean distance from `x` to the conditioning set; `+inf` for `Empty`.
pub fn dist_to_set(x: &[f64], set: &ConditioningSet) -> f64 {
    match set {
        ConditioningSet::Empty => f64::INFINITY,
        ConditioningSet::BoxBoundary { lo, hi } => {
            // Distance to the boundary of a box. For a point inside, this is
            // the smallest distance to any face; outside, the distance to the
            // box surface.
            let inside = x.iter().zip(lo).zip(hi).all(|((xi, l), h)| xi >= l && xi <= h);
            if inside {
                x.iter()
                    .zip(lo)
                    .zip(hi)
                    .map(|((xi, l), h)| (xi - l).min(h - xi))
                    .fold(f64::INFINITY, f64::min)
            } else {
                x.iter()
                    .zip(lo)
                    .zip(hi)
                    .map(|((xi, l), h)| (l - xi).max(0.0).max(xi - h))
                    .map(|d| d * d)
                    .sum::<f64>()
                    .sqrt()
            }
        }
        ConditioningSet::PointList(pts) => pts
            .iter()
            .map(|p| dist(x, p))
            .fold(f64::INFINITY, f64::min),
    }
}

/// A coarse-to-fine ordering of measurements (or points) together with the
/// per-position lengthscales realized when each element was picked.
#[derive(Debug, Clone)]
pub struct Ordering {
    /// `perm[q]` is the original index placed at ordered position `q`.
    pub perm: Vec<usize>,
    /// `lengthscales[q]` is `dist(x_{perm[q]}, {previously picked} ∪ A)`.
    pub lengthscales: Vec<f64>,
    pub conditioning: ConditioningSet,
}

impl Ordering {
    /// Inverse permutation: original index -> ordered position.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0usize; self.perm.len()];
        for (q, &i) in self.perm.iter().enumerate() {
            r[i] = q;
        }
        r
    }
}

/// Conditioned maximin ordering of `pts`.
///
/// The first pick is the point farthest from `A` (index 0 when `A = Empty`);
/// each later pick maximizes the distance to `A` and all previous picks. Ties
/// break toward the smallest index. For `A = Empty` the first lengthscale is
/// the diameter of the point set.
pub fn maximin_order(pts: &PointSet, conditioning: ConditioningSet) -> Result<Ordering> {
    let n = pts.len();
    if n == 0 {
        return Err(Error::Invalid("maximin ordering of empty point set".into()));
    }
    pts.check_distinct()?;

    // dist_left[i] = dist(x_i, {chosen so far} ∪ A); updated incrementally,
    // which reproduces the naive per-step recomputation exactly.
    let mut dist_left: Vec<f64> = (0..n)
        .map(|i| dist_to_set(pts.point(i), &conditioning))
        .collect();
    let mut chosen = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    let mut lengthscales = Vec::with_capacity(n);

    let (first, l1) = match conditioning {
        ConditioningSet::Empty => (0usize, pts.diameter()),
        _ => {
            let mut best = 0usize;
            for i in 1..n {
                if dist_left[i] > dist_left[best] {
                    best = i;
                }
            }
            (best, dist_left[best])
        }
    };
    perm.push(first);
    lengthscales.push(l1);
    chosen[first] = true;
    update_dist(pts, &mut dist_left, first);

    for _ in 1..n {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if !chosen[i] && dist_left[i] > best_d {
                best = i;
                best_d = dist_left[i];
            }
        }
        perm.push(best);
        lengthscales.push(best_d);
        chosen[best] = true;
        update_dist(pts, &mut dist_left, best);
    }

    Ok(Ordering {
        perm,
        lengthscales,
        conditioning,
    })
}

fn update_dist(pts: &PointSet, dist_left: &mut [f64], picked: usize) {
    let xp = pts.point(picked);
    if dist_left.len() > 4096 {
        dist_left.par_iter_mut().enumerate().for_each(|(i, d)| {
            *d = d.min(dist(pts.point(i), xp));
        });
    } else {
        for (i, d) in dist_left.iter_mut().enumerate() {
            *d = d.min(dist(pts.point(i), xp));
        }
    }
}

/// Homogeneity parameter `δ` of the points conditioned on `A` over the domain
/// box `[lo, hi]`: min pairwise-or-A distance over fill distance. The fill
/// distance is estimated on a probe grid of spacing at most a quarter of the
/// min distance (diagnostic only).
pub fn homogeneity(
    pts: &PointSet,
    conditioning: &ConditioningSet,
    lo: &[f64],
    hi: &[f64],
) -> Result<f64> {
    let n = pts.len();
    if n < 2 {
        return Err(Error::Invalid("homogeneity needs at least 2 points".into()));
    }
    let mut min_d = f64::INFINITY;
    for i in 0..n {
        let xi = pts.point(i);
        for j in 0..n {
            if i != j {
                min_d = min_d.min(dist(xi, pts.point(j)));
            }
        }
        let da = dist_to_set(xi, conditioning);
        if da.is_finite() {
            min_d = min_d.min(da);
        }
    }
    if min_d == 0.0 {
        return Ok(0.0);
    }

    let dim = pts.dim();
    // Probe spacing a quarter of the min distance, but capped so the probe
    // grid stays small: a coarse fill estimate only matters when min_d is
    // already comparable to the fill distance.
    let per_axis_cap = (2_000_000f64).powf(1.0 / dim as f64) as usize;
    let steps: Vec<usize> = lo
        .iter()
        .zip(hi)
        .map(|(l, h)| {
            let want = (4.0 * (h - l) / min_d).ceil() as usize + 1;
            want.clamp(2, per_axis_cap)
        })
        .collect();
    let total: usize = steps.iter().product();
    let fill = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut idx = flat;
            let mut x = vec![0.0; dim];
            for k in 0..dim {
                let s = steps[k];
                x[k] = lo[k] + (hi[k] - lo[k]) * (idx % s) as f64 / (s - 1).max(1) as f64;
                idx /= s;
            }
            let mut d = pts.iter().map(|p| dist(&x, p)).fold(f64::INFINITY, f64::min);
            let da = dist_to_set(&x, conditioning);
            if da.is_finite() {
                d = d.min(da);
            }
            d
        })
        .reduce(|| 0.0, f64::max);
    Ok(min_d / fill)
}

/// Interior nodes of an equispaced grid on the box `(lo, hi)` with `n`
/// subdivisions per axis (grid spacing `(hi-lo)/n`), excluding the boundary.
pub fn grid_interior(lo: &[f64], hi: &[f64], n: usize) -> PointSet {
    let dim = lo.len();
    let counts = vec![n - 1; dim];
    let total: usize = counts.iter().product();
    let mut coords = Vec::with_capacity(total * dim);
    for flat in 0..total {
        let mut idx = flat;
        for k in 0..dim {
            let i = idx % (n - 1) + 1;
            idx /= n - 1;
            coords.push(lo[k] + (hi[k] - lo[k]) * i as f64 / n as f64);
        }
    }
    PointSet::new(coords, dim).expect("grid coordinates are finite")
}

/// Equispaced points on the boundary of the box `[lo, hi]` with the same
/// spacing as `grid_interior(lo, hi, n)`. In 1-D these are the two endpoints.
pub fn grid_boundary(lo: &[f64], hi: &[f64], n: usize) -> PointSet {
    let dim = lo.len();
    match dim {
        1 => PointSet::new(vec![lo[0], hi[0]], 1).unwrap(),
        2 => {
            let mut coords = Vec::new();
            let (lx, ly, hx, hy) = (lo[0], lo[1], hi[0], hi[1]);
            let sx = (hx - lx) / n as f64;
            let sy = (hy - ly) / n as f64;
            // Walk the four sides, skipping the end corner of each side so
            // corners are not duplicated.
            for i in 0..n {
                coords.extend_from_slice(&[lx + i as f64 * sx, ly]);
            }
            for i in 0..n {
                coords.extend_from_slice(&[hx, ly + i as f64 * sy]);
            }
            for i in 0..n {
                coords.extend_from_slice(&[hx - i as f64 * sx, hy]);
            }
            for i in 0..n {
                coords.extend_from_slice(&[lx, hy - i as f64 * sy]);
            }
            PointSet::new(coords, 2).unwrap()
        }
        _ => unimplemented!("box boundary grids implemented for d <= 2"),
    }
}
