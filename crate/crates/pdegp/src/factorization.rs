//! Sparse inverse-Cholesky factorization by KL-divergence minimization.
//!
//! Given measurements in a coarse-to-fine ordering, a distance-based sparsity
//! pattern, and supernode aggregation of that pattern, the factor `U` is the
//! upper-triangular matrix supported on the pattern minimizing
//! `KL(N(0, Θ) ‖ N(0, (U Uᵀ)^{-1}))`, so that `Θ^{-1} ≈ U Uᵀ` in the ordered
//! indexing. Columns sharing a supernode reuse one Cholesky factorization of
//! the supernode block.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::geometry::{dist, Ordering, PointSet};
use crate::kernels::{bilinear_entry, ExpandedMeasurement, KernelSpec};
use crate::{Error, Result};

/// Lower-triangular sparsity pattern in the ordered indexing: `columns[j]`
/// lists the ordered positions `i ≤ j` interacting with column `j`, sorted
/// ascending and always containing `j` itself.
#[derive(Debug, Clone)]
pub struct SparsityPattern {
    pub columns: Vec<Vec<u32>>,
    pub rho: f64,
}

impl SparsityPattern {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(|c| c.len()).sum()
    }
}

/// Builds `S_{ρ}`: position `i ≤ j` enters column `j` iff the base points of
/// the measurements at positions `i` and `j` are within `ρ · l_j`. Pass
/// `ordered_base[q]` = base point of the measurement at ordered position `q`
/// and the lengthscales from the same ordering. `rho = ∞` gives the dense
/// lower triangle.
pub fn build_pattern(ordered_base: &PointSet, ord: &Ordering, rho: f64) -> Result<SparsityPattern> {
    let n = ordered_base.len();
    if n != ord.perm.len() {
        return Err(Error::DimensionMismatch {
            expected: ord.perm.len(),
            got: n,
        });
    }
    if !(rho >= 1.0) {
        return Err(Error::Invalid(format!("rho must be >= 1, got {rho}")));
    }
    let columns: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let xj = ordered_base.point(j);
            let cut = rho * ord.lengthscales[j];
            let mut col: Vec<u32> = (0..j)
                .filter(|&i| dist(ordered_base.point(i), xj) <= cut)
                .map(|i| i as u32)
                .collect();
            col.push(j as u32);
            col
        })
        .collect();
    Ok(SparsityPattern { columns, rho })
}

/// Supernodes grouping columns with comparable lengthscales and nearby base
/// points. Each group shares one set of child rows (the union of its members'
/// pattern columns).
#[derive(Debug, Clone)]
pub struct SupernodeSet {
    /// Member columns (ordered positions) of each supernode, ascending.
    pub groups: Vec<Vec<u32>>,
    /// Union of the members' pattern columns, ascending.
    pub children: Vec<Vec<u32>>,
}

impl SupernodeSet {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// One singleton supernode per column; no aggregation.
    pub fn trivial(pattern: &SparsityPattern) -> SupernodeSet {
        SupernodeSet {
            groups: (0..pattern.len() as u32).map(|j| vec![j]).collect(),
            children: pattern.columns.clone(),
        }
    }
}

/// Greedy aggregation: repeatedly take the last unaggregated column `j` and
/// group it with every unaggregated `i ∈ s_j` whose lengthscale satisfies
/// `l_i ≤ λ · l_j`.
pub fn aggregate_supernodes(
    pattern: &SparsityPattern,
    ord: &Ordering,
    lambda: f64,
) -> Result<SupernodeSet> {
    if !(lambda >= 1.0) {
        return Err(Error::Invalid(format!("lambda must be >= 1, got {lambda}")));
    }
    let n = pattern.len();
    let mut taken = vec![false; n];
    let mut groups: Vec<Vec<u32>> = Vec::new();
    for j in (0..n).rev() {
        if taken[j] {
            continue;
        }
        let cut = lambda * ord.lengthscales[j];
        let mut members: Vec<u32> = pattern.columns[j]
            .iter()
            .copied()
            .filter(|&i| !taken[i as usize] && ord.lengthscales[i as usize] <= cut)
            .collect();
        if !members.contains(&(j as u32)) {
            members.push(j as u32);
            members.sort_unstable();
        }
        for &i in &members {
            taken[i as usize] = true;
        }
        groups.push(members);
    }
    groups.reverse();
    let children: Vec<Vec<u32>> = groups
        .par_iter()
        .map(|members| {
            let mut rows: Vec<u32> = members
                .iter()
                .flat_map(|&j| pattern.columns[j as usize].iter().copied())
                .collect();
            rows.sort_unstable();
            rows.dedup();
            rows
        })
        .collect();
    Ok(SupernodeSet { groups, children })
}

/// Upper-triangular sparse factor in CSC layout over ordered positions. Row
/// indices within each column are ascending, so the diagonal entry is last.
#[derive(Debug, Clone)]
pub struct SparseUpperFactor {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<u32>,
    pub vals: Vec<f64>,
}

impl SparseUpperFactor {
    pub fn col(&self, j: usize) -> (&[u32], &[f64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.vals[r])
    }

    pub fn diag(&self, j: usize) -> f64 {
        self.vals[self.col_ptr[j + 1] - 1]
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|j| self.diag(j).ln()).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            let (rows, vals) = self.col(j);
            for (&i, &v) in rows.iter().zip(vals) {
                m[(i as usize, j)] = v;
            }
        }
        m
    }

    /// Writes `(row, col, value)` triplets, zero-based, one per line, in
    /// column order, values with 17 significant digits.
    pub fn write_triplets<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        for j in 0..self.n {
            let (rows, vals) = self.col(j);
            for (&i, &v) in rows.iter().zip(vals) {
                writeln!(w, "{} {} {:.16e}", i, j, v)?;
            }
        }
        Ok(())
    }
}

/// Computes the KL-optimal factor for the ordered measurements `ms` (position
/// `q` holds the measurement at ordered position `q`). Supernodes are
/// processed in parallel; a singular supernode block is retried once with a
/// diagonal jitter of `1e-12 · max diag` before failing.
pub fn kl_factorize(
    k: &KernelSpec,
    ms: &[ExpandedMeasurement],
    sn: &SupernodeSet,
) -> Result<SparseUpperFactor> {
    let n = ms.len();
    let max_order = ms.iter().map(|m| m.max_order()).max().unwrap_or(0);
    if !k.supports_derivative_order(max_order) {
        return Err(Error::UnsupportedDerivative(max_order));
    }

    let results: Vec<Result<(Vec<u32>, Vec<(Vec<f64>, usize)>)>> = sn
        .groups
        .par_iter()
        .zip(&sn.children)
        .enumerate()
        .map(|(sid, (members, children))| {
            let q = children.len();
            let mut block = vec![0.0f64; q * q];
            for a in 0..q {
                for b in a..q {
                    let v = bilinear_entry(
                        k,
                        &ms[children[a] as usize],
                        &ms[children[b] as usize],
                    );
                    block[a * q + b] = v;
                    block[b * q + a] = v;
                }
            }
            let mut chol = block.clone();
            if !cholesky_in_place(&mut chol, q) {
                let max_diag = (0..q).fold(0.0f64, |m, a| m.max(block[a * q + a]));
                chol.copy_from_slice(&block);
                for a in 0..q {
                    chol[a * q + a] += 1e-12 * max_diag;
                }
                if !cholesky_in_place(&mut chol, q) {
                    return Err(Error::NotPositiveDefinite { supernode: sid });
                }
            }
            // For each member j at prefix length m in the child list, the
            // KL-optimal column Θ_m^{-1} e_m / √(e_mᵀ Θ_m^{-1} e_m) reduces
            // to L^{-T} e_m on the leading m×m block of the Cholesky factor.
            let mut cols = Vec::with_capacity(members.len());
            for &j in members {
                let m = children.binary_search(&j).expect("member in own children") + 1;
                let mut v = vec![0.0f64; m];
                v[m - 1] = 1.0 / chol[(m - 1) * q + (m - 1)];
                for i in (0..m - 1).rev() {
                    let mut s = 0.0;
                    for kk in i + 1..m {
                        s += chol[kk * q + i] * v[kk];
                    }
                    v[i] = -s / chol[i * q + i];
                }
                cols.push((v, m));
            }
            Ok((children.clone(), cols))
        })
        .collect();

    let mut col_rows: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut col_vals: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (res, members) in results.into_iter().zip(&sn.groups) {
        let (children, cols) = res?;
        for (&j, (v, m)) in members.iter().zip(cols) {
            col_rows[j as usize] = children[..m].to_vec();
            col_vals[j as usize] = v;
        }
    }

    let mut col_ptr = Vec::with_capacity(n + 1);
    col_ptr.push(0usize);
    let mut row_idx = Vec::new();
    let mut vals = Vec::new();
    for j in 0..n {
        if col_rows[j].is_empty() {
            return Err(Error::Invalid(format!(
                "supernodes do not cover column {j}"
            )));
        }
        row_idx.extend_from_slice(&col_rows[j]);
        vals.extend_from_slice(&col_vals[j]);
        col_ptr.push(row_idx.len());
    }
    let u = SparseUpperFactor {
        n,
        col_ptr,
        row_idx,
        vals,
    };
    for j in 0..n {
        if !(u.diag(j) > 0.0) {
            return Err(Error::ZeroDiagonal(j));
        }
    }
    Ok(u)
}

/// In-place lower Cholesky of a row-major `q × q` matrix; returns false on a
/// non-positive pivot. Only the lower triangle of the result is meaningful.
fn cholesky_in_place(a: &mut [f64], q: usize) -> bool {
    for j in 0..q {
        let mut d = a[j * q + j];
        for k in 0..j {
            d -= a[j * q + k] * a[j * q + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j * q + j] = d;
        for i in j + 1..q {
            let mut s = a[i * q + j];
            for k in 0..j {
                s -= a[i * q + k] * a[j * q + k];
            }
            a[i * q + j] = s / d;
        }
    }
    true
}

/// Exact inverse-Cholesky oracle: the upper-triangular `W` with positive
/// diagonal and `W Wᵀ = Θ^{-1}`, computed densely.
pub fn dense_inverse_cholesky(theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = theta
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefiniteDense)?;
    let n = theta.nrows();
    // W = G^{-T} for the lower Cholesky factor G.
    let ginv = chol.l().solve_lower_triangular(&DMatrix::identity(n, n)).ok_or(Error::NotPositiveDefiniteDense)?;
    Ok(ginv.transpose())
}

/// `KL(N(0, Θ) ‖ N(0, (U Uᵀ)^{-1})) = ½ (tr(UᵀΘU) − log det(UᵀΘU) − n)`,
/// evaluated stably through the Cholesky factor of `Θ`. Diagnostic only;
/// guarded to `n ≤ 4096`.
pub fn kl_divergence(theta: &DMatrix<f64>, u: &SparseUpperFactor) -> Result<f64> {
    let n = u.n;
    if theta.nrows() != n || theta.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: theta.nrows(),
        });
    }
    if n > 4096 {
        return Err(Error::Invalid(format!(
            "kl_divergence is a dense diagnostic, n = {n} > 4096"
        )));
    }
    let chol = theta
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefiniteDense)?;
    let g = chol.l();
    let log_det_theta = 2.0 * (0..n).map(|i| g[(i, i)].ln()).sum::<f64>();
    // tr(UᵀΘU) = ‖Gᵀ U‖_F², one sparse column at a time.
    let trace: f64 = (0..n)
        .into_par_iter()
        .map(|j| {
            let (rows, vals) = u.col(j);
            let mut acc = 0.0;
            // (Gᵀ u_j)_i = Σ_{r ≥ i} G[r, i] u_j[r]; u_j supported on `rows`.
            for i in 0..=(*rows.last().unwrap() as usize) {
                let mut s = 0.0;
                for (&r, &v) in rows.iter().zip(vals) {
                    if (r as usize) >= i {
                        s += g[(r as usize, i)] * v;
                    }
                }
                acc += s * s;
            }
            acc
        })
        .sum();
    let log_det = log_det_theta + 2.0 * u.log_det();
    Ok(0.5 * (trace - log_det - n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{grid_boundary, grid_interior, ConditioningSet};
    use crate::kernels::{dense_kernel_matrix, KernelSpec, MaternNu};
    use crate::measurements::{order_interior_first, standard_layout, Measurement, PdeKind};
    use approx::assert_relative_eq;

    fn elliptic_setup(
        n: usize,
        nu: MaternNu,
        l: f64,
    ) -> (KernelSpec, crate::measurements::MeasurementLayout, Ordering) {
        let lo = [0.0, 0.0];
        let hi = [1.0, 1.0];
        let layout = standard_layout(
            PdeKind::Elliptic,
            &grid_interior(&lo, &hi, n),
            &grid_boundary(&lo, &hi, n),
        )
        .unwrap();
        let ord = order_interior_first(&layout).unwrap();
        (KernelSpec::new(nu, l).unwrap(), layout, ord)
    }

    #[test]
    fn pattern_matches_brute_force() {
        let (_, layout, ord) = elliptic_setup(6, MaternNu::FiveHalves, 0.3);
        let base = layout.base_points_ordered(&ord);
        let pat = build_pattern(&base, &ord, 2.5).unwrap();
        for j in 0..base.len() {
            let expect: Vec<u32> = (0..=j)
                .filter(|&i| {
                    i == j || dist(base.point(i), base.point(j)) <= 2.5 * ord.lengthscales[j]
                })
                .map(|i| i as u32)
                .collect();
            assert_eq!(pat.columns[j], expect, "column {j}");
        }
        // Infinite rho gives the full lower triangle.
        let full = build_pattern(&base, &ord, f64::INFINITY).unwrap();
        assert_eq!(full.nnz(), base.len() * (base.len() + 1) / 2);
    }

    #[test]
    fn supernode_partition_and_children() {
        let (_, layout, ord) = elliptic_setup(8, MaternNu::FiveHalves, 0.3);
        let base = layout.base_points_ordered(&ord);
        let pat = build_pattern(&base, &ord, 3.0).unwrap();
        let sn = aggregate_supernodes(&pat, &ord, 1.5).unwrap();
        // Groups partition the columns.
        let mut seen = vec![false; pat.len()];
        for g in &sn.groups {
            for &j in g {
                assert!(!seen[j as usize]);
                seen[j as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        // Children contain each member's pattern column.
        for (g, c) in sn.groups.iter().zip(&sn.children) {
            for &j in g {
                for &i in &pat.columns[j as usize] {
                    assert!(c.binary_search(&i).is_ok());
                }
            }
            assert!(c.windows(2).all(|w| w[0] < w[1]));
        }
        // λ = 1 with a fresh pattern degenerates to (almost) no aggregation:
        // members must all satisfy l_i ≤ l_j for the seed j.
        for g in &sn.groups {
            let seed = *g.last().unwrap() as usize;
            for &j in g {
                assert!(ord.lengthscales[j as usize] <= 1.5 * ord.lengthscales[seed] + 1e-12);
            }
        }
    }

    #[test]
    fn full_pattern_matches_dense_oracle() {
        for (nu, l) in [(MaternNu::FiveHalves, 0.5), (MaternNu::SevenHalves, 0.3)] {
            let (k, layout, ord) = elliptic_setup(7, nu, l);
            let ms = layout.expand_ordered(&ord).unwrap();
            let base = layout.base_points_ordered(&ord);
            let pat = build_pattern(&base, &ord, f64::INFINITY).unwrap();

            let theta = dense_kernel_matrix(&k, &ms);
            let w = dense_inverse_cholesky(&theta).unwrap();

            for sn in [
                SupernodeSet::trivial(&pat),
                aggregate_supernodes(&pat, &ord, 1.5).unwrap(),
            ] {
                let u = kl_factorize(&k, &ms, &sn).unwrap().to_dense();
                let scale = w.amax();
                for j in 0..ms.len() {
                    for i in 0..ms.len() {
                        assert!(
                            (u[(i, j)] - w[(i, j)]).abs() <= 1e-8 * scale,
                            "entry ({i},{j}): {} vs {}",
                            u[(i, j)],
                            w[(i, j)]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn scalar_case() {
        let k = KernelSpec::new(MaternNu::FiveHalves, 1.0).unwrap();
        let pts = PointSet::from_points(&[vec![0.3, 0.4]]).unwrap();
        let ms = vec![Measurement::Single {
            point: 0,
            op: crate::kernels::DiffOp::Identity,
        }
        .expand(&pts)
        .unwrap()];
        let ord = Ordering {
            perm: vec![0],
            lengthscales: vec![1.0],
            conditioning: ConditioningSet::Empty,
        };
        let pat = build_pattern(&pts, &ord, 2.0).unwrap();
        let u = kl_factorize(&k, &ms, &SupernodeSet::trivial(&pat)).unwrap();
        // Θ = [1] so U = [1].
        assert_relative_eq!(u.diag(0), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn kl_nonnegative_and_monotone_in_rho() {
        let (k, layout, ord) = elliptic_setup(8, MaternNu::FiveHalves, 0.3);
        let ms = layout.expand_ordered(&ord).unwrap();
        let base = layout.base_points_ordered(&ord);
        let theta = dense_kernel_matrix(&k, &ms);
        let mut prev = f64::INFINITY;
        for rho in [1.0, 2.0, 3.0, 5.0] {
            let pat = build_pattern(&base, &ord, rho).unwrap();
            let sn = aggregate_supernodes(&pat, &ord, 1.5).unwrap();
            let u = kl_factorize(&k, &ms, &sn).unwrap();
            let kl = kl_divergence(&theta, &u).unwrap();
            assert!(kl >= -1e-9, "kl = {kl} at rho = {rho}");
            // Aggregated patterns only grow with rho, so KL cannot increase.
            assert!(kl <= prev + 1e-9, "kl = {kl} rose at rho = {rho}");
            prev = kl;
        }
        // Full pattern reaches (numerical) zero.
        let pat = build_pattern(&base, &ord, f64::INFINITY).unwrap();
        let u = kl_factorize(&k, &ms, &SupernodeSet::trivial(&pat)).unwrap();
        let kl = kl_divergence(&theta, &u).unwrap();
        assert!(kl.abs() < 1e-7, "kl = {kl}");
    }

    #[test]
    fn kl_against_naive_formula() {
        let (k, layout, ord) = elliptic_setup(4, MaternNu::FiveHalves, 0.4);
        let ms = layout.expand_ordered(&ord).unwrap();
        let base = layout.base_points_ordered(&ord);
        let theta = dense_kernel_matrix(&k, &ms);
        let pat = build_pattern(&base, &ord, 2.0).unwrap();
        let u = kl_factorize(&k, &ms, &SupernodeSet::trivial(&pat)).unwrap();
        let ud = u.to_dense();
        let a = ud.transpose() * &theta * &ud;
        let n = ms.len() as f64;
        let naive = 0.5
            * (a.trace()
                - a.clone().lu().determinant().ln()
                - n);
        let stable = kl_divergence(&theta, &u).unwrap();
        assert_relative_eq!(stable, naive, epsilon = 1e-8, max_relative = 1e-6);
    }

    // With Θ^{-1} = W Wᵀ and W upper triangular, column j of W encodes the
    // conditional law of y_j given y_{1:j-1}: W[j,j] = 1/σ_j with
    // σ_j² = Var(y_j | y_{1:j-1}), and W[i,j] = −β_i/σ_j where β are the
    // coefficients of E[y_j | y_{1:j-1}] = βᵀ y_{1:j-1}.
    #[test]
    fn conditional_identities_random_spd() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..50 {
            let n = rng.gen_range(2..=12usize);
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let theta = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
            let w = dense_inverse_cholesky(&theta).unwrap();
            for j in 1..n {
                let tjj = theta[(j, j)];
                let tpp = theta.view((0, 0), (j, j)).into_owned();
                let tpj = theta.view((0, j), (j, 1)).into_owned();
                let beta = tpp
                    .clone()
                    .cholesky()
                    .unwrap()
                    .solve(&tpj);
                let var = tjj - (tpj.transpose() * &beta)[(0, 0)];
                let sigma = var.sqrt();
                assert_relative_eq!(w[(j, j)], 1.0 / sigma, epsilon = 1e-8, max_relative = 1e-8);
                for i in 0..j {
                    assert_relative_eq!(
                        w[(i, j)],
                        -beta[(i, 0)] / sigma,
                        epsilon = 1e-8,
                        max_relative = 1e-8
                    );
                }
            }
            let _ = case;
        }
    }

    #[test]
    fn jitter_retry_on_duplicate_like_block() {
        // Two nearly identical measurements make Θ numerically singular; the
        // jitter retry must still produce a finite factor.
        let k = KernelSpec::new(MaternNu::FiveHalves, 1.0).unwrap();
        let pts = PointSet::from_points(&[vec![0.0, 0.0], vec![1e-9, 0.0], vec![0.5, 0.5]]).unwrap();
        let ms: Vec<_> = (0..3)
            .map(|p| {
                Measurement::Single {
                    point: p,
                    op: crate::kernels::DiffOp::Identity,
                }
                .expand(&pts)
                .unwrap()
            })
            .collect();
        let ord = Ordering {
            perm: vec![0, 1, 2],
            lengthscales: vec![1.0, 1.0, 1.0],
            conditioning: ConditioningSet::Empty,
        };
        let pat = build_pattern(&pts, &ord, f64::INFINITY).unwrap();
        let u = kl_factorize(&k, &ms, &SupernodeSet::trivial(&pat)).unwrap();
        assert!((0..3).all(|j| u.diag(j).is_finite() && u.diag(j) > 0.0));
    }
}
