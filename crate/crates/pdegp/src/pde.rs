//! Nonlinear PDE solving by Gaussian-process collocation.
//!
//! A PDE is encoded as a nonlinear constraint `F(z) = y` on the vector `z`
//! of measurement values of the unknown `u`. Each Gauss-Newton step solves
//! the linearized system `K(φᵏ, φᵏ) γ = y − F(zᵏ) + DF(zᵏ) zᵏ` with
//! `φᵏ = DF(zᵏ) φ` by pCG, using a sparse factor of the reduced kernel
//! matrix as preconditioner and a sparse factor of the full kernel matrix as
//! the covariance operator in `zᵏ⁺¹ = Θ DF(zᵏ)ᵀ γ`.

use rayon::prelude::*;

use crate::factorization::{
    aggregate_supernodes, build_pattern, kl_factorize, SparseUpperFactor, SupernodeSet,
};
use crate::geometry::{grid_boundary, grid_interior, ConditioningSet, Ordering, PointSet};
use crate::kernels::{bilinear_entry, DiffOp, ExpandedMeasurement, KernelSpec};
use crate::linsolve::{
    apply_covariance, apply_precision, default_max_iters, pcg, ReducedOperator,
};
use crate::measurements::{
    order_boundary_first, order_interior_first, reduce_measurements, standard_layout,
    JacobianRows, MeasurementLayout, PdeKind,
};
use crate::{Error, Result};

/// Nonlinearity `τ` of the elliptic equation `-Δu + τ(u) = f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauFn {
    /// `τ ≡ 0`, making the PDE linear.
    Zero,
    /// `τ(u) = u³`.
    Cubic,
}

impl TauFn {
    pub fn value(self, u: f64) -> f64 {
        match self {
            TauFn::Zero => 0.0,
            TauFn::Cubic => u * u * u,
        }
    }

    pub fn derivative(self, u: f64) -> f64 {
        match self {
            TauFn::Zero => 0.0,
            TauFn::Cubic => 3.0 * u * u,
        }
    }
}

/// The nonlinear constraint kind; see [`f_and_df`] for the equations.
#[derive(Debug, Clone)]
pub enum ProblemKind {
    Elliptic { tau: TauFn },
    BurgersStep { dt: f64, viscosity: f64 },
    MongeAmpere,
}

/// A PDE collocation problem: measurement layout, constraint kind, data
/// vector `y` (one entry per equation row), and the domain boundary used for
/// reduced orderings.
#[derive(Debug, Clone)]
pub struct PdeProblem {
    pub layout: MeasurementLayout,
    pub kind: ProblemKind,
    pub y: Vec<f64>,
    pub boundary: ConditioningSet,
}

/// Evaluates the constraint `F(z)` and its Jacobian rows. Row `m < M_Ω` is
/// the PDE at interior point `m`; rows `M_Ω ≤ m < M` fix the boundary Diracs.
///
/// - Elliptic: `F_m = -z^Δ_m + τ(z_m)`.
/// - BurgersStep (Crank-Nicolson step of `u_t + u u_x = κ u_xx`, with the
///   previous-step half already folded into `y`):
///   `F_m = z_m/Δt + ½ z_m z^∂x_m − (κ/2) z^∂xx_m`.
/// - Monge-Ampère: `F_m = z^11_m z^22_m − (z^12_m)²`.
pub fn f_and_df(problem: &PdeProblem, z: &[f64]) -> Result<(Vec<f64>, JacobianRows)> {
    let layout = &problem.layout;
    let n = layout.len();
    let m = layout.n_points();
    let mi = layout.n_interior;
    if z.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: z.len(),
        });
    }
    let mut f = Vec::with_capacity(m);
    let mut rows = Vec::with_capacity(m);
    for p in 0..mi {
        match &problem.kind {
            ProblemKind::Elliptic { tau } => {
                f.push(-z[m + p] + tau.value(z[p]));
                rows.push(vec![(m + p, -1.0), (p, tau.derivative(z[p]))]);
            }
            ProblemKind::BurgersStep { dt, viscosity } => {
                let (u, ux, uxx) = (z[p], z[m + p], z[m + mi + p]);
                f.push(u / dt + 0.5 * u * ux - 0.5 * viscosity * uxx);
                rows.push(vec![
                    (p, 1.0 / dt + 0.5 * ux),
                    (m + p, 0.5 * u),
                    (m + mi + p, -0.5 * viscosity),
                ]);
            }
            ProblemKind::MongeAmpere => {
                let (z11, z22, z12) = (z[m + p], z[m + mi + p], z[m + 2 * mi + p]);
                f.push(z11 * z22 - z12 * z12);
                rows.push(vec![
                    (m + p, z22),
                    (m + mi + p, z11),
                    (m + 2 * mi + p, -2.0 * z12),
                ]);
            }
        }
    }
    for p in mi..m {
        f.push(z[p]);
        rows.push(vec![(p, 1.0)]);
    }
    Ok((f, JacobianRows { n_cols: n, rows }))
}

/// Gauss-Newton solver configuration.
#[derive(Debug, Clone)]
pub struct GnConfig {
    /// Number of Gauss-Newton steps `t ≥ 1`.
    pub steps: usize,
    /// Sparsity parameter for the full kernel matrix factor.
    pub rho: f64,
    /// Sparsity parameter for the per-step reduced factors.
    pub rho_r: f64,
    /// Supernode aggregation parameter.
    pub lambda: f64,
    pub pcg_tol: f64,
    /// Override for the pCG iteration cap (default `10 √M + 100`).
    pub max_pcg_iters: Option<usize>,
    /// Initial iterate `z⁰` (zeros when absent).
    pub initial_z: Option<Vec<f64>>,
    /// Minimum lengthscale used when building sparsity patterns. Widens the
    /// fine-scale columns, whose literal maximin radii can be far smaller
    /// than the kernel correlation length; values around twice the kernel
    /// lengthscale stabilize derivative-heavy layouts with `lengthscale ≫
    /// grid spacing` (most visibly the 1-D Burgers marching).
    pub lengthscale_floor: Option<f64>,
}

impl Default for GnConfig {
    fn default() -> Self {
        GnConfig {
            steps: 3,
            rho: 4.0,
            rho_r: 4.0,
            lambda: 1.5,
            pcg_tol: (0.5f64).powi(26),
            max_pcg_iters: None,
            initial_z: None,
            lengthscale_floor: None,
        }
    }
}

/// Converged (or final-step) solver state, sufficient to evaluate the
/// surrogate solution anywhere.
#[derive(Debug, Clone)]
pub struct Solution {
    pub kernel: KernelSpec,
    pub layout: MeasurementLayout,
    /// Measurement values of the final iterate, length `N`.
    pub z: Vec<f64>,
    /// Dual weights of the final linear solve, length `M`.
    pub gamma: Vec<f64>,
    /// Evaluation weights `w = DFᵀ γ`, length `N`.
    pub weights: Vec<f64>,
}

/// Per-iteration diagnostics of one Gauss-Newton run.
#[derive(Debug, Clone, Default)]
pub struct GnDiagnostics {
    pub pcg_iterations: Vec<usize>,
    pub pcg_residuals: Vec<f64>,
    /// `‖F(zᵏ⁺¹) − y‖∞` after each step.
    pub equation_residuals: Vec<f64>,
}

/// Precomputed state reusable across Gauss-Newton runs on the same layout
/// and kernel (e.g. all time steps of Burgers marching): the factor of the
/// full kernel matrix, and the geometry-only parts of the reduced factor.
pub struct GnWorkspace {
    pub ord: Ordering,
    pub factor: SparseUpperFactor,
    reduced: Option<(Ordering, SupernodeSet)>,
}

/// Factorizes `K(φ, φ)` once (interior-first ordering, parameter `rho`).
pub fn build_workspace(
    layout: &MeasurementLayout,
    k: &KernelSpec,
    cfg: &GnConfig,
) -> Result<GnWorkspace> {
    let mut ord = order_interior_first(layout)?;
    if let Some(c) = cfg.lengthscale_floor {
        for l in &mut ord.lengthscales {
            *l = l.max(c);
        }
    }
    let ms = layout.expand_ordered(&ord)?;
    let base = layout.base_points_ordered(&ord);
    let pat = build_pattern(&base, &ord, cfg.rho)?;
    let sn = aggregate_supernodes(&pat, &ord, cfg.lambda)?;
    let factor = kl_factorize(k, &ms, &sn)?;
    Ok(GnWorkspace {
        ord,
        factor,
        reduced: None,
    })
}

/// Runs the Gauss-Newton iteration, factorizing the full kernel matrix once.
pub fn gauss_newton(
    problem: &PdeProblem,
    k: &KernelSpec,
    cfg: &GnConfig,
) -> Result<(Solution, GnDiagnostics)> {
    let mut ws = build_workspace(&problem.layout, k, cfg)?;
    gauss_newton_with(problem, k, cfg, &mut ws)
}

/// Gauss-Newton with a caller-provided workspace; the reduced ordering and
/// supernodes are computed on the first call and reused afterwards (they
/// depend only on the geometry, not on the iterate).
pub fn gauss_newton_with(
    problem: &PdeProblem,
    k: &KernelSpec,
    cfg: &GnConfig,
    ws: &mut GnWorkspace,
) -> Result<(Solution, GnDiagnostics)> {
    if cfg.steps == 0 {
        return Err(Error::Invalid("gauss-newton needs at least 1 step".into()));
    }
    let layout = &problem.layout;
    let n = layout.len();
    let m = layout.n_points();
    if problem.y.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: problem.y.len(),
        });
    }
    let mut z = match &cfg.initial_z {
        Some(z0) if z0.len() != n => {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: z0.len(),
            })
        }
        Some(z0) => z0.clone(),
        None => vec![0.0; n],
    };
    let cov = |v: &[f64]| {
        apply_covariance(&ws.factor, &ws.ord, v).expect("factor diagonal validated at build")
    };
    let mut diag = GnDiagnostics::default();
    let mut gamma = vec![0.0; m];
    let mut weights = vec![0.0; n];

    for step in 0..cfg.steps {
        let wrap = |e: Error| Error::GaussNewton {
            iteration: step,
            source: Box::new(e),
        };
        let (fz, jac) = f_and_df(problem, &z)?;
        let red = reduce_measurements(layout, &jac)?;
        if ws.reduced.is_none() {
            let mut rord = order_boundary_first(&red, &problem.boundary)?;
            if let Some(c) = cfg.lengthscale_floor {
                for l in &mut rord.lengthscales {
                    *l = l.max(c);
                }
            }
            let rbase = red.base_points_ordered(&rord);
            let rpat = build_pattern(&rbase, &rord, cfg.rho_r)?;
            let rsn = aggregate_supernodes(&rpat, &rord, cfg.lambda)?;
            ws.reduced = Some((rord, rsn));
        }
        let (rord, rsn) = ws.reduced.as_ref().unwrap();
        let rms = red.expand_ordered(rord)?;
        let rfactor = kl_factorize(k, &rms, rsn).map_err(wrap)?;

        let jz = jac.apply(&z);
        let b: Vec<f64> = (0..m).map(|i| problem.y[i] - fz[i] + jz[i]).collect();
        let op = ReducedOperator {
            jac: &jac,
            cov: &cov,
        };
        let m_inv = |r: &[f64]| apply_precision(&rfactor, rord, r);
        let maxit = cfg.max_pcg_iters.unwrap_or_else(|| default_max_iters(m));
        // TEMP experiment hook: relative nugget on the reduced system.
        let nugget_rel: f64 = std::env::var("PDEGP_NUGGET")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0.0);
        let (g, rep) = if nugget_rel > 0.0 {
            let ab = op.apply(&b);
            let bb: f64 = b.iter().map(|v| v * v).sum();
            let rayleigh = b.iter().zip(&ab).map(|(x, y)| x * y).sum::<f64>() / bb.max(1e-300);
            let eta = nugget_rel * rayleigh;
            let nop = crate::linsolve::FnOperator {
                n: m,
                f: |v: &[f64]| {
                    let mut av = op.apply(v);
                    for (a, x) in av.iter_mut().zip(v) {
                        *a += eta * x;
                    }
                    av
                },
            };
            pcg(&nop, &m_inv, &b, cfg.pcg_tol, maxit).map_err(wrap)?
        } else {
            pcg(&op, &m_inv, &b, cfg.pcg_tol, maxit).map_err(wrap)?
        };
        weights = jac.apply_transpose(&g);
        z = cov(&weights);
        gamma = g;

        diag.pcg_iterations.push(rep.iterations);
        diag.pcg_residuals.push(rep.residual_norm);
        let (fz_new, _) = f_and_df(problem, &z)?;
        let res = fz_new
            .iter()
            .zip(&problem.y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        diag.equation_residuals.push(res);
    }
    Ok((
        Solution {
            kernel: *k,
            layout: layout.clone(),
            z,
            gamma,
            weights,
        },
        diag,
    ))
}

/// Evaluates `L u` at the query points for a differential operator `L`:
/// `Lu(x) = Σ_a w_a K(δ_x ∘ L, φ_a)` with the final evaluation weights.
pub fn evaluate_solution_op(sol: &Solution, query: &PointSet, op: DiffOp) -> Result<Vec<f64>> {
    if query.dim() != sol.layout.points.dim() {
        return Err(Error::DimensionMismatch {
            expected: sol.layout.points.dim(),
            got: query.dim(),
        });
    }
    op.validate()?;
    let ms = sol.layout.expand_all()?;
    let terms = op.expand(query.dim());
    let out: Vec<f64> = (0..query.len())
        .into_par_iter()
        .map(|q| {
            let mq = ExpandedMeasurement {
                point: query.point(q).to_vec(),
                terms: terms.clone(),
            };
            ms.iter()
                .zip(&sol.weights)
                .map(|(ma, &w)| w * bilinear_entry(&sol.kernel, &mq, ma))
                .sum()
        })
        .collect();
    Ok(out)
}

/// Evaluates the solution `u` at the query points.
pub fn evaluate_solution(sol: &Solution, query: &PointSet) -> Result<Vec<f64>> {
    evaluate_solution_op(sol, query, DiffOp::Identity)
}

/// Discrete `(L², L∞)` error norms; `weights` are the quadrature weights of
/// the evaluation grid (summing to the domain measure).
pub fn error_norms(u_num: &[f64], u_true: &[f64], weights: &[f64]) -> Result<(f64, f64)> {
    if u_num.len() != u_true.len() || u_num.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: u_num.len(),
            got: u_true.len().max(weights.len()),
        });
    }
    let mut l2 = 0.0;
    let mut linf = 0.0f64;
    for ((a, b), w) in u_num.iter().zip(u_true).zip(weights) {
        let d = a - b;
        l2 += w * d * d;
        linf = linf.max(d.abs());
    }
    Ok((l2.sqrt(), linf))
}

// ---------------------------------------------------------------------------
// Example problems
// ---------------------------------------------------------------------------

/// Smooth reference solution on the unit square, vanishing on its boundary:
/// `u(x) = Σ_{k=1}^{600} k^{-6} sin(kπx₁) sin(kπx₂)`.
pub fn elliptic_truth(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 1..=600u32 {
        let kp = k as f64 * std::f64::consts::PI;
        s += (k as f64).powi(-6) * (kp * x[0]).sin() * (kp * x[1]).sin();
    }
    s
}

fn elliptic_neg_laplacian_truth(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 1..=600u32 {
        let kp = k as f64 * std::f64::consts::PI;
        s += 2.0 * kp * kp * (k as f64).powi(-6) * (kp * x[0]).sin() * (kp * x[1]).sin();
    }
    s
}

/// Elliptic example `-Δu + τ(u) = f` on the unit square with `n` grid
/// subdivisions per axis (spacing `h = 1/n`) and data manufactured from
/// [`elliptic_truth`].
pub fn elliptic_example(n: usize, tau: TauFn) -> Result<PdeProblem> {
    let lo = [0.0, 0.0];
    let hi = [1.0, 1.0];
    let interior = grid_interior(&lo, &hi, n);
    let bdry = grid_boundary(&lo, &hi, n);
    let layout = standard_layout(PdeKind::Elliptic, &interior, &bdry)?;
    let mut y: Vec<f64> = interior
        .iter()
        .map(|x| elliptic_neg_laplacian_truth(x) + tau.value(elliptic_truth(x)))
        .collect();
    y.extend(bdry.iter().map(elliptic_truth));
    Ok(PdeProblem {
        layout,
        kind: ProblemKind::Elliptic { tau },
        y,
        boundary: ConditioningSet::box_boundary(lo.to_vec(), hi.to_vec())?,
    })
}

/// Monge-Ampère reference `u(x) = exp(½‖x − (½,½)‖²)`, for which
/// `det D²u = u² (1 + a² + b²)` with `(a, b) = x − (½,½)`.
pub fn monge_ampere_truth(x: &[f64]) -> f64 {
    let a = x[0] - 0.5;
    let b = x[1] - 0.5;
    (0.5 * (a * a + b * b)).exp()
}

fn monge_ampere_det(x: &[f64]) -> f64 {
    let a = x[0] - 0.5;
    let b = x[1] - 0.5;
    let u = monge_ampere_truth(x);
    u * u * (1.0 + a * a + b * b)
}

/// Monge-Ampère example `det D²u = f` on the unit square.
pub fn monge_ampere_example(n: usize) -> Result<PdeProblem> {
    let lo = [0.0, 0.0];
    let hi = [1.0, 1.0];
    let interior = grid_interior(&lo, &hi, n);
    let bdry = grid_boundary(&lo, &hi, n);
    let layout = standard_layout(PdeKind::MongeAmpere, &interior, &bdry)?;
    let mut y: Vec<f64> = interior.iter().map(monge_ampere_det).collect();
    y.extend(bdry.iter().map(|x| monge_ampere_truth(x)));
    Ok(PdeProblem {
        layout,
        kind: ProblemKind::MongeAmpere,
        y,
        boundary: ConditioningSet::box_boundary(lo.to_vec(), hi.to_vec())?,
    })
}

/// Initial iterate for Monge-Ampère from the convex seed `u₀ = ½‖x‖²`
/// (`z11 = z22 = 1`, `z12 = 0`).
pub fn monge_ampere_initial_z(layout: &MeasurementLayout) -> Vec<f64> {
    let m = layout.n_points();
    let mi = layout.n_interior;
    let mut z = vec![0.0; layout.len()];
    for p in 0..m {
        let x = layout.points.point(p);
        z[p] = 0.5 * (x[0] * x[0] + x[1] * x[1]);
    }
    for p in 0..mi {
        z[m + p] = 1.0;
        z[m + mi + p] = 1.0;
        z[m + 2 * mi + p] = 0.0;
    }
    z
}

// ---------------------------------------------------------------------------
// Burgers
// ---------------------------------------------------------------------------

/// Field values of the previous Burgers time step at the interior points.
#[derive(Debug, Clone)]
pub struct BurgersFields {
    pub u: Vec<f64>,
    pub ux: Vec<f64>,
    pub uxx: Vec<f64>,
}

/// Samples the initial condition `u(x, 0) = −sin(πx)` and its derivatives.
pub fn burgers_initial_fields(interior: &PointSet) -> BurgersFields {
    let pi = std::f64::consts::PI;
    let u = interior.iter().map(|x| -(pi * x[0]).sin()).collect();
    let ux = interior.iter().map(|x| -pi * (pi * x[0]).cos()).collect();
    let uxx = interior
        .iter()
        .map(|x| pi * pi * (pi * x[0]).sin())
        .collect();
    BurgersFields { u, ux, uxx }
}

/// One Crank-Nicolson step of `u_t + u u_x = κ u_xx` as a [`PdeProblem`]:
/// the previous-step half of the scheme is folded into `y`.
pub fn burgers_step_problem(
    layout: &MeasurementLayout,
    dt: f64,
    viscosity: f64,
    prev: &BurgersFields,
) -> Result<PdeProblem> {
    let mi = layout.n_interior;
    if prev.u.len() != mi || prev.ux.len() != mi || prev.uxx.len() != mi {
        return Err(Error::DimensionMismatch {
            expected: mi,
            got: prev.u.len(),
        });
    }
    let mut y: Vec<f64> = (0..mi)
        .map(|p| prev.u[p] / dt - 0.5 * prev.u[p] * prev.ux[p] + 0.5 * viscosity * prev.uxx[p])
        .collect();
    y.extend(std::iter::repeat(0.0).take(layout.n_points() - mi));
    Ok(PdeProblem {
        layout: layout.clone(),
        kind: ProblemKind::BurgersStep { dt, viscosity },
        y,
        boundary: ConditioningSet::box_boundary(vec![-1.0], vec![1.0])?,
    })
}

/// Configuration of the Burgers time march on `(-1, 1)`.
#[derive(Debug, Clone)]
pub struct BurgersConfig {
    /// Grid subdivisions; `n_domain − 1` interior points.
    pub n_domain: usize,
    pub dt: f64,
    pub t_end: f64,
    pub viscosity: f64,
    pub gn: GnConfig,
}

/// Result of a Burgers march: the final-step solution plus the interior grid.
pub struct BurgersTrajectory {
    pub interior: PointSet,
    pub times: Vec<f64>,
    /// Interior `u` values after each step.
    pub states: Vec<Vec<f64>>,
    pub final_solution: Solution,
    pub diagnostics: Vec<GnDiagnostics>,
}

/// Marches Burgers with Crank-Nicolson steps, each solved by a warm-started
/// Gauss-Newton run; the previous-step fields are evaluated from the step's
/// surrogate solution.
pub fn burgers_march(k: &KernelSpec, cfg: &BurgersConfig) -> Result<BurgersTrajectory> {
    let n_steps = (cfg.t_end / cfg.dt).round() as usize;
    if n_steps == 0 || (n_steps as f64 * cfg.dt - cfg.t_end).abs() > 1e-9 {
        return Err(Error::Invalid("t_end must be a positive multiple of dt".into()));
    }
    let lo = [-1.0];
    let hi = [1.0];
    let interior = grid_interior(&lo, &hi, cfg.n_domain);
    let bdry = grid_boundary(&lo, &hi, cfg.n_domain);
    let layout = standard_layout(PdeKind::BurgersStep, &interior, &bdry)?;
    let m = layout.n_points();
    let mi = layout.n_interior;

    let mut gn_cfg = cfg.gn.clone();
    if gn_cfg.lengthscale_floor.is_none() {
        // Fine-scale maximin lengthscales shrink with the grid while the
        // kernel correlation length stays fixed; without a floor the ρ-ball
        // patterns starve the derivative columns and the march destabilizes.
        gn_cfg.lengthscale_floor = Some(2.0 * k.lengthscale);
    }
    let mut ws = build_workspace(&layout, k, &gn_cfg)?;
    let mut fields = burgers_initial_fields(&interior);
    // Warm start from the previous step's measurement values.
    let mut z = vec![0.0; layout.len()];
    let seed_z = |z: &mut Vec<f64>, f: &BurgersFields| {
        for p in 0..mi {
            z[p] = f.u[p];
            z[m + p] = f.ux[p];
            z[m + mi + p] = f.uxx[p];
        }
    };
    seed_z(&mut z, &fields);

    let mut times = Vec::with_capacity(n_steps);
    let mut states = Vec::with_capacity(n_steps);
    let mut diags = Vec::with_capacity(n_steps);
    let mut final_solution = None;
    for step in 0..n_steps {
        let problem = burgers_step_problem(&layout, cfg.dt, cfg.viscosity, &fields)?;
        let mut gn = gn_cfg.clone();
        gn.initial_z = Some(z.clone());
        let (sol, diag) = gauss_newton_with(&problem, k, &gn, &mut ws)?;
        // The iterate's own measurement values are the next step's fields.
        // Re-evaluating them through the exact kernel mixes the surrogate
        // and exact priors: the dual weights amplify the factor truncation
        // error and the march blows up near shock formation.
        fields = BurgersFields {
            u: sol.z[..mi].to_vec(),
            ux: sol.z[m..m + mi].to_vec(),
            uxx: sol.z[m + mi..m + 2 * mi].to_vec(),
        };
        z = sol.z.clone();
        times.push((step + 1) as f64 * cfg.dt);
        states.push(fields.u.clone());
        diags.push(diag);
        final_solution = Some(sol);
    }
    Ok(BurgersTrajectory {
        interior,
        times,
        states,
        final_solution: final_solution.expect("at least one step"),
        diagnostics: diags,
    })
}

/// Cole-Hopf reference solution of `u_t + u u_x = κ u_xx` on the line with
/// `u(x, 0) = −sin(πx)` (odd and 2-periodic, so it solves the Dirichlet
/// problem on `(-1, 1)`), evaluated by adaptive-free Simpson quadrature of
/// the Whitham integral representation with a stabilizing exponent shift.
pub fn burgers_reference(queries: &PointSet, t: f64, viscosity: f64) -> Vec<f64> {
    assert!(t > 0.0 && viscosity > 0.0);
    let pi = std::f64::consts::PI;
    // Integration window: outside |x − η| ≈ L the heat-kernel exponent
    // dwarfs the bounded potential term.
    let l = (2.0 * t * (800.0 + 2.0 / (pi * viscosity))).sqrt().min(4.0);
    let steps = 40_000usize; // even, Simpson
    (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let x = queries.point(q)[0];
            let h = 2.0 * l / steps as f64;
            let phi = |eta: f64| {
                -((x - eta) * (x - eta) / (2.0 * t) + (pi * eta).cos() / pi) / (2.0 * viscosity)
            };
            let mut max_phi = f64::NEG_INFINITY;
            for i in 0..=steps {
                max_phi = max_phi.max(phi(x - l + i as f64 * h));
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..=steps {
                let eta = x - l + i as f64 * h;
                let w = if i == 0 || i == steps {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let g = w * (phi(eta) - max_phi).exp();
                num += g * (x - eta) / t;
                den += g;
            }
            num / den
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn f_and_df_trivial_cases() {
        // Elliptic at z = 0 with zero data: F = 0.
        let p = elliptic_example(4, TauFn::Cubic).unwrap();
        let z = vec![0.0; p.layout.len()];
        let (f, _) = f_and_df(&p, &z).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));

        // Monge-Ampère at u = ½‖x‖²: interior residual is det(I) = 1.
        let ma = monge_ampere_example(4).unwrap();
        let z = monge_ampere_initial_z(&ma.layout);
        let (f, _) = f_and_df(&ma, &z).unwrap();
        for v in &f[..ma.layout.n_interior] {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for problem in [
            elliptic_example(3, TauFn::Cubic).unwrap(),
            monge_ampere_example(3).unwrap(),
        ] {
            let n = problem.layout.len();
            let z: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let (f0, jac) = f_and_df(&problem, &z).unwrap();
            let h = 1e-6;
            for col in 0..n {
                let mut zp = z.clone();
                zp[col] += h;
                let (fp, _) = f_and_df(&problem, &zp).unwrap();
                let mut zm = z.clone();
                zm[col] -= h;
                let (fm, _) = f_and_df(&problem, &zm).unwrap();
                for row in 0..f0.len() {
                    let fd = (fp[row] - fm[row]) / (2.0 * h);
                    let exact = jac.rows[row]
                        .iter()
                        .find(|&&(c, _)| c == col)
                        .map(|&(_, w)| w)
                        .unwrap_or(0.0);
                    assert!(
                        (fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()),
                        "row {row} col {col}: fd {fd} vs {exact}"
                    );
                }
            }
        }
        // Burgers jacobian on a small 1-D layout.
        let interior = grid_interior(&[-1.0], &[1.0], 6);
        let bdry = grid_boundary(&[-1.0], &[1.0], 6);
        let layout = standard_layout(PdeKind::BurgersStep, &interior, &bdry).unwrap();
        let prev = burgers_initial_fields(&interior);
        let problem = burgers_step_problem(&layout, 0.05, 0.01, &prev).unwrap();
        let n = layout.len();
        let z: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let (f0, jac) = f_and_df(&problem, &z).unwrap();
        let h = 1e-6;
        for col in 0..n {
            let mut zp = z.clone();
            zp[col] += h;
            let (fp, _) = f_and_df(&problem, &zp).unwrap();
            for row in 0..f0.len() {
                let fd = (fp[row] - f0[row]) / h;
                let exact = jac.rows[row]
                    .iter()
                    .find(|&&(c, _)| c == col)
                    .map(|&(_, w)| w)
                    .unwrap_or(0.0);
                assert!((fd - exact).abs() <= 1e-4 * (1.0 + exact.abs()));
            }
        }
    }

    #[test]
    fn linear_elliptic_converges_in_one_step() {
        let problem = elliptic_example(8, TauFn::Zero).unwrap();
        let k = KernelSpec::new(crate::kernels::MaternNu::FiveHalves, 0.3).unwrap();
        let cfg = GnConfig {
            steps: 2,
            rho: f64::INFINITY,
            rho_r: f64::INFINITY,
            pcg_tol: 1e-14,
            ..GnConfig::default()
        };
        let (_, diag) = gauss_newton(&problem, &k, &cfg).unwrap();
        // The constraint is linear, so the residual is at solver tolerance
        // from the first step on.
        assert!(diag.equation_residuals[0] <= 1e-8, "{:?}", diag.equation_residuals);
        assert!(diag.equation_residuals[1] <= 1e-8);
    }

    #[test]
    fn nonlinear_elliptic_small_grid_accuracy() {
        let problem = elliptic_example(10, TauFn::Cubic).unwrap();
        let k = KernelSpec::new(crate::kernels::MaternNu::SevenHalves, 0.3).unwrap();
        let cfg = GnConfig {
            steps: 3,
            rho: 6.0,
            rho_r: 6.0,
            ..GnConfig::default()
        };
        let (sol, diag) = gauss_newton(&problem, &k, &cfg).unwrap();
        // Residuals decrease monotonically on this fixture.
        assert!(diag
            .equation_residuals
            .windows(2)
            .all(|w| w[1] <= w[0] * 1.001));
        let interior = grid_interior(&[0.0, 0.0], &[1.0, 1.0], 10);
        let got = evaluate_solution(&sol, &interior).unwrap();
        let want: Vec<f64> = interior.iter().map(elliptic_truth).collect();
        let wq = vec![1.0 / (interior.len() as f64); interior.len()];
        let (l2, linf) = error_norms(&got, &want, &wq).unwrap();
        // Collocation error on this very coarse grid (h = 0.1, ν = 7/2).
        assert!(l2 < 5e-2 && linf < 1e-1, "l2 {l2} linf {linf}");
        // Boundary values are reproduced (here: zero).
        let mi = sol.layout.n_interior;
        for p in mi..sol.layout.n_points() {
            assert!(sol.z[p].abs() <= 1e-7, "boundary value {}", sol.z[p]);
        }
    }

    #[test]
    fn evaluate_solution_interpolates_and_matches_dense() {
        use nalgebra::{DMatrix, DVector};
        let problem = elliptic_example(5, TauFn::Cubic).unwrap();
        let k = KernelSpec::new(crate::kernels::MaternNu::FiveHalves, 0.4).unwrap();
        let cfg = GnConfig {
            steps: 3,
            rho: f64::INFINITY,
            rho_r: f64::INFINITY,
            pcg_tol: 1e-14,
            ..GnConfig::default()
        };
        let (sol, _) = gauss_newton(&problem, &k, &cfg).unwrap();
        // At Dirac collocation points the evaluation reproduces z.
        let got = evaluate_solution(&sol, &sol.layout.points).unwrap();
        for p in 0..sol.layout.n_points() {
            assert!(
                (got[p] - sol.z[p]).abs() <= 1e-7 * (1.0 + sol.z[p].abs()),
                "point {p}: {} vs {}",
                got[p],
                sol.z[p]
            );
        }
        // And matches the dense K(x,φ)·w evaluation.
        let ms = sol.layout.expand_all().unwrap();
        let queries = PointSet::from_points(&[vec![0.21, 0.33], vec![0.77, 0.18]]).unwrap();
        let dense: Vec<f64> = (0..queries.len())
            .map(|q| {
                let mq = ExpandedMeasurement {
                    point: queries.point(q).to_vec(),
                    terms: vec![([0, 0, 0], 1.0)],
                };
                let kv = DMatrix::from_fn(1, ms.len(), |_, a| bilinear_entry(&k, &mq, &ms[a]));
                (kv * DVector::from_column_slice(&sol.weights))[(0, 0)]
            })
            .collect();
        let fast = evaluate_solution(&sol, &queries).unwrap();
        for q in 0..queries.len() {
            assert_relative_eq!(fast[q], dense[q], epsilon = 1e-12);
        }
    }

    #[test]
    fn error_norms_basics() {
        let a = [1.0, 2.0, 3.0];
        let w = [1.0 / 3.0; 3];
        assert_eq!(error_norms(&a, &a, &w).unwrap(), (0.0, 0.0));
        let b = [1.5, 2.5, 3.5];
        let (l2, linf) = error_norms(&a, &b, &w).unwrap();
        assert_relative_eq!(l2, 0.5, epsilon = 1e-15);
        assert_relative_eq!(linf, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn burgers_reference_sanity() {
        // At small t the solution is close to the initial condition.
        let pts = PointSet::from_points(&[vec![-0.7], vec![-0.2], vec![0.0], vec![0.4]]).unwrap();
        let u = burgers_reference(&pts, 1e-4, 0.01);
        let pi = std::f64::consts::PI;
        for (q, x) in [-0.7, -0.2, 0.0, 0.4].iter().enumerate() {
            assert!((u[q] + (pi * x).sin()).abs() < 1e-2, "x={x}: {}", u[q]);
        }
        // Odd symmetry at all times.
        let pts2 = PointSet::from_points(&[vec![0.35], vec![-0.35]]).unwrap();
        let u2 = burgers_reference(&pts2, 0.5, 0.001);
        assert_relative_eq!(u2[0], -u2[1], epsilon = 1e-10);
    }

    #[test]
    fn burgers_march_small_instance() {
        let k = KernelSpec::new(crate::kernels::MaternNu::SevenHalves, 0.1).unwrap();
        let cfg = BurgersConfig {
            n_domain: 60,
            dt: 0.02,
            t_end: 0.1,
            viscosity: 0.05,
            gn: GnConfig {
                steps: 2,
                rho: 4.0,
                rho_r: 4.0,
                ..GnConfig::default()
            },
        };
        let traj = burgers_march(&k, &cfg).unwrap();
        assert_eq!(traj.states.len(), 5);
        // Boundary measurement values are enforced tightly; the pointwise
        // evaluation additionally carries the ρ-truncation error of the
        // covariance operator.
        let m = traj.final_solution.layout.n_points();
        let mi = traj.final_solution.layout.n_interior;
        for p in mi..m {
            assert!(traj.final_solution.z[p].abs() < 1e-7);
        }
        let bdry = PointSet::from_points(&[vec![-1.0], vec![1.0]]).unwrap();
        let ub = evaluate_solution(&traj.final_solution, &bdry).unwrap();
        assert!(ub.iter().all(|v| v.abs() < 5e-3), "{ub:?}");
        // Agreement with the Cole-Hopf reference at moderate viscosity.
        let want = burgers_reference(&traj.interior, 0.1, 0.05);
        let (l2, linf) = error_norms(
            traj.states.last().unwrap(),
            &want,
            &vec![2.0 / traj.interior.len() as f64; traj.interior.len()],
        )
        .unwrap();
        assert!(l2 < 2e-3 && linf < 1e-2, "l2 {l2} linf {linf}");
        // Determinism.
        let traj2 = burgers_march(&k, &cfg).unwrap();
        assert_eq!(traj.states.last().unwrap(), traj2.states.last().unwrap());
    }
}
