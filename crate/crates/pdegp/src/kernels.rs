//! Matérn covariance family and exact bilinear-form entries between Dirac and
//! derivative measurements.
//!
//! All mixed partial derivatives of the kernel are evaluated in closed form.
//! Writing the kernel as `h(u) = f(|u|^2)` with `u = x - y`, every mixed
//! partial up to order 2 per argument reduces to the radial derivatives
//! `f, f', f'', f''', f''''`, which for half-integer Matérn kernels are short
//! Laurent polynomials in `r` times `exp(-c r)`.

use nalgebra::DMatrix;

use crate::{Error, Result};

pub const MAX_DIM: usize = 3;

/// Derivative multi-index `γ` over at most [`MAX_DIM`] coordinates.
pub type Gamma = [u8; MAX_DIM];

pub fn gamma_order(g: &Gamma) -> usize {
    g.iter().map(|&x| x as usize).sum()
}

/// Smoothness of the Matérn family; half-integer orders only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaternNu {
    FiveHalves,
    SevenHalves,
    NineHalves,
}

impl MaternNu {
    pub fn value(self) -> f64 {
        match self {
            MaternNu::FiveHalves => 2.5,
            MaternNu::SevenHalves => 3.5,
            MaternNu::NineHalves => 4.5,
        }
    }

    pub fn parse(v: f64) -> Result<Self> {
        match v {
            x if x == 2.5 => Ok(MaternNu::FiveHalves),
            x if x == 3.5 => Ok(MaternNu::SevenHalves),
            x if x == 4.5 => Ok(MaternNu::NineHalves),
            _ => Err(Error::Invalid(format!(
                "nu must be one of 5/2, 7/2, 9/2 (got {v})"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KernelSpec {
    pub nu: MaternNu,
    pub lengthscale: f64,
    pub amplitude: f64,
}

impl KernelSpec {
    pub fn new(nu: MaternNu, lengthscale: f64) -> Result<Self> {
        if lengthscale <= 0.0 || !lengthscale.is_finite() {
            return Err(Error::Invalid("lengthscale must be positive".into()));
        }
        Ok(Self {
            nu,
            lengthscale,
            amplitude: 1.0,
        })
    }

    fn decay_rate(&self) -> f64 {
        (2.0 * self.nu.value()).sqrt() / self.lengthscale
    }

    /// Checks the RKHS smoothness condition `s = ν + d/2 > d/2 + J` for the
    /// maximum derivative order `J` appearing in a layout.
    pub fn supports_derivative_order(&self, max_order: usize) -> bool {
        self.nu.value() > max_order as f64
    }

    /// Radial derivatives `f^{(k)}(t)|_{t=r^2}` for `k = 0..=4` where
    /// `K(x,y) = f(|x-y|^2)`. Exact closed forms; at `r = 0` the entries for
    /// `k = 3, 4` are set to 0 (they only ever appear multiplied by vanishing
    /// powers of `u`).
    pub fn radial_derivs(&self, r: f64) -> [f64; 5] {
        let a = self.amplitude;
        let c = self.decay_rate();
        let c2 = c * c;
        let c4 = c2 * c2;
        let at_zero = r < 1e-10 * self.lengthscale;
        let s = c * r;
        let e = if at_zero { 1.0 } else { (-s).exp() };
        match self.nu {
            MaternNu::FiveHalves => {
                let c5 = c4 * c;
                if at_zero {
                    [a, -a * c2 / 6.0, a * c4 / 12.0, 0.0, 0.0]
                } else {
                    [
                        a * e * (1.0 + s + s * s / 3.0),
                        -a * e * c2 / 6.0 * (1.0 + s),
                        a * e * c4 / 12.0,
                        -a * e * c5 / (24.0 * r),
                        a * e * c5 * (s + 1.0) / (48.0 * r * r * r),
                    ]
                }
            }
            MaternNu::SevenHalves => {
                let c6 = c4 * c2;
                if at_zero {
                    [a, -a * c2 / 10.0, a * c4 / 60.0, -a * c6 / 120.0, 0.0]
                } else {
                    [
                        a * e * (1.0 + s + 0.4 * s * s + s * s * s / 15.0),
                        -a * e * c2 / 30.0 * (s * s + 3.0 * s + 3.0),
                        a * e * c4 / 60.0 * (s + 1.0),
                        -a * e * c6 / 120.0,
                        a * e * c6 * c / (240.0 * r),
                    ]
                }
            }
            MaternNu::NineHalves => {
                let c6 = c4 * c2;
                let c8 = c4 * c4;
                if at_zero {
                    [
                        a,
                        -a * c2 / 14.0,
                        a * c4 / 140.0,
                        -a * c6 / 840.0,
                        a * c8 / 1680.0,
                    ]
                } else {
                    [
                        a * e
                            * (1.0
                                + s
                                + 3.0 / 7.0 * s * s
                                + 2.0 / 21.0 * s * s * s
                                + s * s * s * s / 105.0),
                        -a * e * c2 / 210.0 * (s * s * s + 6.0 * s * s + 15.0 * s + 15.0),
                        a * e * c4 / 420.0 * (s * s + 3.0 * s + 3.0),
                        -a * e * c6 / 840.0 * (s + 1.0),
                        a * e * c8 / 1680.0,
                    ]
                }
            }
        }
    }
}

/// Matérn covariance `k(x, y)`.
pub fn covariance(k: &KernelSpec, x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let r = crate::geometry::dist(x, y);
    k.radial_derivs(r)[0]
}

/// Mixed partial `D^γ h(u)` of the radial function `h(u) = f(|u|^2)` from the
/// radial derivatives `f` (total order of `γ` at most 4).
pub fn radial_mixed_deriv(gamma: &Gamma, u: &[f64], f: &[f64; 5]) -> f64 {
    // Expand the multi-index into a list of coordinate indices.
    let mut idx = [0usize; 4];
    let mut m = 0usize;
    for (coord, &rep) in gamma.iter().enumerate() {
        for _ in 0..rep {
            if m == 4 {
                panic!("derivative order exceeds 4");
            }
            idx[m] = coord;
            m += 1;
        }
    }
    let uc = |k: usize| u.get(idx[k]).copied().unwrap_or(0.0);
    let d = |a: usize, b: usize| (idx[a] == idx[b]) as usize as f64;
    match m {
        0 => f[0],
        1 => 2.0 * uc(0) * f[1],
        2 => 2.0 * d(0, 1) * f[1] + 4.0 * uc(0) * uc(1) * f[2],
        3 => {
            4.0 * (d(0, 1) * uc(2) + d(0, 2) * uc(1) + d(1, 2) * uc(0)) * f[2]
                + 8.0 * uc(0) * uc(1) * uc(2) * f[3]
        }
        4 => {
            4.0 * (d(0, 1) * d(2, 3) + d(0, 2) * d(1, 3) + d(0, 3) * d(1, 2)) * f[2]
                + 8.0
                    * (d(0, 1) * uc(2) * uc(3)
                        + d(0, 2) * uc(1) * uc(3)
                        + d(0, 3) * uc(1) * uc(2)
                        + d(1, 2) * uc(0) * uc(3)
                        + d(1, 3) * uc(0) * uc(2)
                        + d(2, 3) * uc(0) * uc(1))
                    * f[3]
                + 16.0 * uc(0) * uc(1) * uc(2) * uc(3) * f[4]
        }
        _ => unreachable!(),
    }
}

/// A differential operator applied to one argument of the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffOp {
    Identity,
    /// `D^γ` for a multi-index `γ` with total order at most 2.
    Partial(Gamma),
    Laplacian,
}

impl DiffOp {
    pub fn order(&self) -> usize {
        match self {
            DiffOp::Identity => 0,
            DiffOp::Partial(g) => gamma_order(g),
            DiffOp::Laplacian => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let DiffOp::Partial(g) = self {
            if gamma_order(g) > 2 {
                return Err(Error::UnsupportedDerivative(gamma_order(g)));
            }
        }
        Ok(())
    }

    /// Expands the operator into weighted pure partials.
    pub fn expand(&self, dim: usize) -> Vec<(Gamma, f64)> {
        match self {
            DiffOp::Identity => vec![([0; MAX_DIM], 1.0)],
            DiffOp::Partial(g) => vec![(*g, 1.0)],
            DiffOp::Laplacian => (0..dim)
                .map(|c| {
                    let mut g = [0u8; MAX_DIM];
                    g[c] = 2;
                    (g, 1.0)
                })
                .collect(),
        }
    }
}

/// A measurement functional expanded into weighted pure partial derivatives
/// at a single base point: `φ = Σ_a w_a δ_x ∘ D^{γ_a}`.
#[derive(Debug, Clone)]
pub struct ExpandedMeasurement {
    pub point: Vec<f64>,
    pub terms: Vec<(Gamma, f64)>,
}

impl ExpandedMeasurement {
    pub fn max_order(&self) -> usize {
        self.terms.iter().map(|(g, _)| gamma_order(g)).max().unwrap_or(0)
    }
}

/// Bilinear form entry `K(φ_i, φ_j)`: `φ_i` differentiates the first kernel
/// argument and `φ_j` the second.
pub fn bilinear_entry(k: &KernelSpec, mi: &ExpandedMeasurement, mj: &ExpandedMeasurement) -> f64 {
    let dim = mi.point.len();
    let mut u = [0.0f64; MAX_DIM];
    let mut r2 = 0.0;
    for c in 0..dim {
        u[c] = mi.point[c] - mj.point[c];
        r2 += u[c] * u[c];
    }
    let mut r = r2.sqrt();
    if r < 1e-10 * k.lengthscale {
        // Co-located measurements: take the exact r = 0 limits.
        r = 0.0;
        u = [0.0; MAX_DIM];
    }
    let f = k.radial_derivs(r);

    let mut acc = 0.0;
    for (ga, wa) in &mi.terms {
        for (gb, wb) in &mj.terms {
            // D_y^β applied to K(x, y) = h(x - y) contributes (-1)^{|β|}.
            let sign = if gamma_order(gb) % 2 == 0 { 1.0 } else { -1.0 };
            let mut g = *ga;
            for (t, s) in g.iter_mut().zip(gb.iter()) {
                *t += s;
            }
            acc += wa * wb * sign * radial_mixed_deriv(&g, &u[..dim], &f);
        }
    }
    acc
}

/// Dense kernel matrix `Θ_{ab} = K(φ_a, φ_b)`; the upper triangle is computed
/// and mirrored.
pub fn dense_kernel_matrix(k: &KernelSpec, ms: &[ExpandedMeasurement]) -> DMatrix<f64> {
    let n = ms.len();
    let mut theta = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v = bilinear_entry(k, &ms[a], &ms[b]);
            theta[(a, b)] = v;
            theta[(b, a)] = v;
        }
    }
    theta
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dirac(point: Vec<f64>) -> ExpandedMeasurement {
        ExpandedMeasurement {
            point,
            terms: vec![([0, 0, 0], 1.0)],
        }
    }

    fn k52() -> KernelSpec {
        KernelSpec::new(MaternNu::FiveHalves, 0.3).unwrap()
    }

    #[test]
    fn covariance_at_zero_lag() {
        assert_relative_eq!(covariance(&k52(), &[0.2, 0.4], &[0.2, 0.4]), 1.0);
    }

    #[test]
    fn covariance_at_one_lengthscale() {
        // (1 + sqrt5 + 5/3) exp(-sqrt5), frozen from high-precision arithmetic
        let v = covariance(&k52(), &[0.0], &[0.3]);
        assert_relative_eq!(v, 0.5239941088318203, epsilon = 1e-14);
    }

    #[test]
    fn covariance_decays() {
        let k = KernelSpec::new(MaternNu::SevenHalves, 0.3).unwrap();
        assert!(covariance(&k, &[0.0], &[50.0]) < 1e-12);
        assert!(covariance(&k, &[0.0], &[50.0]) >= 0.0);
    }

    #[test]
    fn first_derivative_vanishes_at_same_point() {
        let m1 = ExpandedMeasurement {
            point: vec![0.3, 0.3],
            terms: vec![([1, 0, 0], 1.0)],
        };
        let m2 = dirac(vec![0.3, 0.3]);
        assert_relative_eq!(bilinear_entry(&k52(), &m1, &m2), 0.0);
    }

    #[test]
    fn translation_rotation_invariance() {
        let k = k52();
        let a = covariance(&k, &[0.1, 0.2], &[0.3, 0.5]);
        let b = covariance(&k, &[1.1, 1.2], &[1.3, 1.5]);
        assert_relative_eq!(a, b, epsilon = 1e-15);
        // rotated by 90 degrees: same distance
        let c = covariance(&k, &[-0.2, 0.1], &[-0.5, 0.3]);
        assert_relative_eq!(a, c, epsilon = 1e-15);
    }

    fn laplacian(point: Vec<f64>, dim: usize) -> ExpandedMeasurement {
        let mut terms = Vec::new();
        for c in 0..dim {
            let mut g = [0u8; MAX_DIM];
            g[c] = 2;
            terms.push((g, 1.0));
        }
        ExpandedMeasurement { point, terms }
    }

    #[test]
    fn laplacian_laplacian_same_point_value() {
        // 32 f''(0) with f''(0) = c^4/12, c = sqrt5/0.3; frozen value
        let v = bilinear_entry(&k52(), &laplacian(vec![0.5, 0.5], 2), &laplacian(vec![0.5, 0.5], 2));
        assert_relative_eq!(v, 8230.452674897119, epsilon = 1e-9);
    }

    /// Central finite difference of `covariance` for a derivative multi-index
    /// pair, Richardson-extrapolated over a two-step sweep.
    fn fd_entry(k: &KernelSpec, ga: &Gamma, gb: &Gamma, x: &[f64], y: &[f64]) -> f64 {
        fn apply(
            k: &KernelSpec,
            mut ga: Gamma,
            mut gb: Gamma,
            x: &mut Vec<f64>,
            y: &mut Vec<f64>,
            h: f64,
        ) -> f64 {
            for c in 0..MAX_DIM {
                if ga[c] > 0 {
                    ga[c] -= 1;
                    x[c] += h;
                    let plus = apply(k, ga, gb, x, y, h);
                    x[c] -= 2.0 * h;
                    let minus = apply(k, ga, gb, x, y, h);
                    x[c] += h;
                    return (plus - minus) / (2.0 * h);
                }
            }
            for c in 0..MAX_DIM {
                if gb[c] > 0 {
                    gb[c] -= 1;
                    y[c] += h;
                    let plus = apply(k, ga, gb, x, y, h);
                    y[c] -= 2.0 * h;
                    let minus = apply(k, ga, gb, x, y, h);
                    y[c] += h;
                    return (plus - minus) / (2.0 * h);
                }
            }
            covariance(k, x, y)
        }
        let order = gamma_order(ga) + gamma_order(gb);
        if order <= 2 {
            let (h1, h2) = (1e-3, 1e-4);
            let d1 = apply(k, *ga, *gb, &mut x.to_vec(), &mut y.to_vec(), h1);
            let d2 = apply(k, *ga, *gb, &mut x.to_vec(), &mut y.to_vec(), h2);
            // Central differences have O(h^2) error: eliminate the leading term.
            let q = (h1 / h2) * (h1 / h2);
            return (q * d2 - d1) / (q - 1.0);
        }
        // High orders need larger steps to dodge roundoff; two Richardson
        // levels then remove the h^2 and h^4 truncation terms.
        let h = 8e-3;
        let d: Vec<f64> = (0..3)
            .map(|i| {
                apply(
                    k,
                    *ga,
                    *gb,
                    &mut x.to_vec(),
                    &mut y.to_vec(),
                    h / 2f64.powi(i),
                )
            })
            .collect();
        let r1a = (4.0 * d[1] - d[0]) / 3.0;
        let r1b = (4.0 * d[2] - d[1]) / 3.0;
        (16.0 * r1b - r1a) / 15.0
    }

    #[test]
    fn finite_difference_agreement_all_pairs() {
        let dim = 2;
        let ops: Vec<Gamma> = vec![
            [0, 0, 0],
            [1, 0, 0],
            [0, 1, 0],
            [2, 0, 0],
            [0, 2, 0],
            [1, 1, 0],
        ];
        let pairs = [
            ([0.31, 0.47], [0.52, 0.33]),
            ([0.1, 0.9], [0.15, 0.82]),
            ([0.4, 0.4], [0.8, 0.1]),
        ];
        for nu in [MaternNu::FiveHalves, MaternNu::SevenHalves, MaternNu::NineHalves] {
            let k = KernelSpec::new(nu, 0.3).unwrap();
            for (x, y) in pairs {
                for ga in &ops {
                    for gb in &ops {
                        let mi = ExpandedMeasurement {
                            point: x.to_vec(),
                            terms: vec![(*ga, 1.0)],
                        };
                        let mj = ExpandedMeasurement {
                            point: y.to_vec(),
                            terms: vec![(*gb, 1.0)],
                        };
                        let exact = bilinear_entry(&k, &mi, &mj);
                        let fd = fd_entry(&k, ga, gb, &x, &y);
                        let scale = exact.abs().max(fd.abs()).max(1e-6);
                        assert!(
                            (exact - fd).abs() / scale < 1e-5,
                            "nu={:?} ga={:?} gb={:?} exact={exact} fd={fd}",
                            nu.value(),
                            ga,
                            gb
                        );
                    }
                }
                let _ = dim;
            }
        }
    }

    #[test]
    fn laplacian_pair_matches_finite_difference() {
        let k = k52();
        let x = [0.41, 0.37];
        let y = [0.46, 0.31];
        let exact = bilinear_entry(
            &k,
            &laplacian(x.to_vec(), 2),
            &laplacian(y.to_vec(), 2),
        );
        let mut fd = 0.0;
        for ga in [[2, 0, 0], [0, 2, 0]] {
            for gb in [[2, 0, 0], [0, 2, 0]] {
                fd += fd_entry(&k, &ga, &gb, &x, &y);
            }
        }
        assert_relative_eq!(exact, fd, max_relative = 1e-5);
    }

    proptest::proptest! {
        #[test]
        fn bilinear_symmetry(seed in 0u64..64) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let ops: Vec<Gamma> = vec![
                [0,0,0],[1,0,0],[0,1,0],[2,0,0],[0,2,0],[1,1,0],
            ];
            let k = KernelSpec::new(MaternNu::FiveHalves, 0.3).unwrap();
            let x = vec![rng.gen::<f64>(), rng.gen::<f64>()];
            let y = vec![rng.gen::<f64>(), rng.gen::<f64>()];
            let ga = ops[rng.gen_range(0..ops.len())];
            let gb = ops[rng.gen_range(0..ops.len())];
            let mi = ExpandedMeasurement { point: x, terms: vec![(ga, 1.0)] };
            let mj = ExpandedMeasurement { point: y, terms: vec![(gb, 1.0)] };
            let ab = bilinear_entry(&k, &mi, &mj);
            let ba = bilinear_entry(&k, &mj, &mi);
            proptest::prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab.abs()));
        }
    }
}
