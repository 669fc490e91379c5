//! Python bindings for the sparse inverse-Cholesky GP-PDE solver.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pdegp::factorization::{aggregate_supernodes, build_pattern, kl_factorize};
use pdegp::geometry::PointSet;
use pdegp::kernels::{bilinear_entry, DiffOp, ExpandedMeasurement, Gamma};
use pdegp::linsolve::{apply_covariance, apply_precision};
use pdegp::measurements::{order_interior_first, standard_layout};
use pdegp::pde::{
    burgers_march, burgers_reference, elliptic_example, elliptic_truth, error_norms,
    evaluate_solution, gauss_newton, monge_ampere_example, monge_ampere_initial_z,
    monge_ampere_truth, BurgersConfig, GnConfig, Solution, TauFn,
};
use pdegp::{KernelSpec, MaternNu, Ordering, PdeKind, SparseUpperFactor};

fn err(e: pdegp::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn point_set(points: Vec<Vec<f64>>) -> PyResult<PointSet> {
    PointSet::from_points(&points).map_err(err)
}

fn parse_kernel(nu: f64, lengthscale: f64) -> PyResult<KernelSpec> {
    let nu = MaternNu::parse(nu).map_err(err)?;
    KernelSpec::new(nu, lengthscale).map_err(err)
}

fn parse_pde(kind: &str) -> PyResult<PdeKind> {
    match kind {
        "elliptic" => Ok(PdeKind::Elliptic),
        "burgers" => Ok(PdeKind::BurgersStep),
        "monge-ampere" => Ok(PdeKind::MongeAmpere),
        _ => Err(PyValueError::new_err(format!(
            "unknown pde kind {kind:?}; expected elliptic, burgers or monge-ampere"
        ))),
    }
}

fn parse_gamma(gamma: Option<Vec<u8>>, dim: usize) -> PyResult<DiffOp> {
    match gamma {
        None => Ok(DiffOp::Identity),
        Some(g) => {
            if g.len() != dim {
                return Err(PyValueError::new_err("gamma length must match dimension"));
            }
            let mut arr: Gamma = [0; 3];
            arr[..dim].copy_from_slice(&g);
            Ok(DiffOp::Partial(arr))
        }
    }
}

/// Kernel covariance between two points, optionally differentiated
/// (`gamma_x`, `gamma_y` are per-axis derivative orders, each entry <= 2).
#[pyfunction]
#[pyo3(signature = (nu, lengthscale, x, y, gamma_x=None, gamma_y=None))]
fn covariance(
    nu: f64,
    lengthscale: f64,
    x: Vec<f64>,
    y: Vec<f64>,
    gamma_x: Option<Vec<u8>>,
    gamma_y: Option<Vec<u8>>,
) -> PyResult<f64> {
    if x.len() != y.len() || x.is_empty() || x.len() > 3 {
        return Err(PyValueError::new_err("x and y must share a dimension in 1..=3"));
    }
    let k = parse_kernel(nu, lengthscale)?;
    let dim = x.len();
    let ox = parse_gamma(gamma_x, dim)?;
    let oy = parse_gamma(gamma_y, dim)?;
    let mx = ExpandedMeasurement { point: x, terms: ox.expand(dim) };
    let my = ExpandedMeasurement { point: y, terms: oy.expand(dim) };
    Ok(bilinear_entry(&k, &mx, &my))
}

/// Maximin ordering of a point set; returns `(perm, lengthscales)`.
/// `lo`/`hi` switch on conditioning on the boundary of the box they define.
#[pyfunction]
#[pyo3(signature = (points, lo=None, hi=None))]
fn maximin_ordering(
    points: Vec<Vec<f64>>,
    lo: Option<Vec<f64>>,
    hi: Option<Vec<f64>>,
) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let ps = point_set(points)?;
    let cond = match (lo, hi) {
        (Some(lo), Some(hi)) => {
            pdegp::geometry::ConditioningSet::box_boundary(lo, hi).map_err(err)?
        }
        (None, None) => pdegp::geometry::ConditioningSet::Empty,
        _ => return Err(PyValueError::new_err("give both lo and hi, or neither")),
    };
    let ord = pdegp::geometry::maximin_order(&ps, cond).map_err(err)?;
    Ok((ord.perm.clone(), ord.lengthscales.clone()))
}

/// Sparse factor `U` of `K(phi, phi)^{-1} ~= P^T U U^T P` for the
/// measurement set of one PDE kind on the given points.
#[pyclass]
struct Factorization {
    factor: SparseUpperFactor,
    ord: Ordering,
}

#[pymethods]
impl Factorization {
    #[getter]
    fn n(&self) -> usize {
        self.factor.n
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.factor.nnz()
    }

    /// `log det U` (equals `-1/2 log det Theta` when the factor is exact).
    fn log_det(&self) -> f64 {
        self.factor.log_det()
    }

    /// Ordering permutation: position `q` holds measurement `perm[q]`.
    fn permutation(&self) -> Vec<usize> {
        self.ord.perm.clone()
    }

    /// Nonzeros as parallel lists `(rows, cols, values)` in ordered indices.
    fn triplets(&self) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let mut rows = Vec::with_capacity(self.factor.nnz());
        let mut cols = Vec::with_capacity(self.factor.nnz());
        let mut vals = Vec::with_capacity(self.factor.nnz());
        for j in 0..self.factor.n {
            let (idx, v) = self.factor.col(j);
            for (&i, &x) in idx.iter().zip(v) {
                rows.push(i as usize);
                cols.push(j);
                vals.push(x);
            }
        }
        (rows, cols, vals)
    }

    /// `Theta^{-1} v` in the original measurement indexing.
    fn apply_precision(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        if v.len() != self.factor.n {
            return Err(PyValueError::new_err("vector length mismatch"));
        }
        Ok(apply_precision(&self.factor, &self.ord, &v))
    }

    /// `Theta v` (approximate for truncated patterns) in original indexing.
    fn apply_covariance(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        if v.len() != self.factor.n {
            return Err(PyValueError::new_err("vector length mismatch"));
        }
        apply_covariance(&self.factor, &self.ord, &v).map_err(err)
    }
}

#[pyfunction]
#[pyo3(signature = (pde, interior, boundary, nu, lengthscale, rho=4.0, lam=1.5))]
fn factorize(
    pde: &str,
    interior: Vec<Vec<f64>>,
    boundary: Vec<Vec<f64>>,
    nu: f64,
    lengthscale: f64,
    rho: f64,
    lam: f64,
) -> PyResult<Factorization> {
    let kind = parse_pde(pde)?;
    let k = parse_kernel(nu, lengthscale)?;
    let interior = point_set(interior)?;
    let boundary = point_set(boundary)?;
    let layout = standard_layout(kind, &interior, &boundary).map_err(err)?;
    let ord = order_interior_first(&layout).map_err(err)?;
    let ms = layout.expand_ordered(&ord).map_err(err)?;
    let base = layout.base_points_ordered(&ord);
    let pattern = build_pattern(&base, &ord, rho).map_err(err)?;
    let sn = aggregate_supernodes(&pattern, &ord, lam).map_err(err)?;
    let factor = kl_factorize(&k, &ms, &sn).map_err(err)?;
    Ok(Factorization { factor, ord })
}

fn solution_dict<'py>(
    py: Python<'py>,
    sol: &Solution,
    truth: impl Fn(&[f64]) -> f64,
    cell: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let mi = sol.layout.n_interior;
    let u: Vec<f64> = sol.z[..mi].to_vec();
    let u_true: Vec<f64> = (0..mi).map(|p| truth(sol.layout.points.point(p))).collect();
    let (l2, linf) = error_norms(&u, &u_true, &vec![cell; mi]).map_err(err)?;
    let d = PyDict::new(py);
    let pts: Vec<Vec<f64>> = (0..mi).map(|p| sol.layout.points.point(p).to_vec()).collect();
    d.set_item("points", pts)?;
    d.set_item("u", u)?;
    d.set_item("u_true", u_true)?;
    d.set_item("l2_error", l2)?;
    d.set_item("linf_error", linf)?;
    Ok(d)
}

fn gn_cfg(steps: usize, rho: f64, rho_r: Option<f64>) -> GnConfig {
    GnConfig {
        steps,
        rho,
        rho_r: rho_r.unwrap_or(rho),
        ..Default::default()
    }
}

/// Nonlinear elliptic example `-Delta u + u^3 = f` on the unit square with
/// an `n`-subdivision grid; returns a dict with the solution and errors.
#[pyfunction]
#[pyo3(signature = (n, nu=2.5, lengthscale=0.3, rho=4.0, rho_r=None, steps=3))]
fn solve_elliptic<'py>(
    py: Python<'py>,
    n: usize,
    nu: f64,
    lengthscale: f64,
    rho: f64,
    rho_r: Option<f64>,
    steps: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let problem = elliptic_example(n, TauFn::Cubic).map_err(err)?;
    let k = parse_kernel(nu, lengthscale)?;
    let (sol, diag) = gauss_newton(&problem, &k, &gn_cfg(steps, rho, rho_r)).map_err(err)?;
    let cell = 1.0 / ((n - 1) as f64 * (n - 1) as f64);
    let d = solution_dict(py, &sol, elliptic_truth, cell)?;
    d.set_item("pcg_iterations", diag.pcg_iterations)?;
    Ok(d)
}

/// Monge-Ampere example `det D^2 u = f` on the unit square.
#[pyfunction]
#[pyo3(signature = (n, nu=2.5, lengthscale=0.3, rho=4.0, rho_r=None, steps=3))]
fn solve_monge_ampere<'py>(
    py: Python<'py>,
    n: usize,
    nu: f64,
    lengthscale: f64,
    rho: f64,
    rho_r: Option<f64>,
    steps: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let problem = monge_ampere_example(n).map_err(err)?;
    let k = parse_kernel(nu, lengthscale)?;
    let mut cfg = gn_cfg(steps, rho, rho_r);
    cfg.initial_z = Some(monge_ampere_initial_z(&problem.layout));
    let (sol, diag) = gauss_newton(&problem, &k, &cfg).map_err(err)?;
    let cell = 1.0 / ((n - 1) as f64 * (n - 1) as f64);
    let d = solution_dict(py, &sol, monge_ampere_truth, cell)?;
    d.set_item("pcg_iterations", diag.pcg_iterations)?;
    Ok(d)
}

/// Burgers equation on `(-1, 1)` marched to `t_end` with Crank-Nicolson
/// steps; errors are against the Cole-Hopf reference at `t_end`.
#[pyfunction]
#[pyo3(signature = (n_domain, dt=0.02, t_end=1.0, viscosity=0.001, nu=3.5, lengthscale=0.02, rho=4.0, rho_r=None, steps=2))]
#[allow(clippy::too_many_arguments)]
fn solve_burgers<'py>(
    py: Python<'py>,
    n_domain: usize,
    dt: f64,
    t_end: f64,
    viscosity: f64,
    nu: f64,
    lengthscale: f64,
    rho: f64,
    rho_r: Option<f64>,
    steps: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let k = parse_kernel(nu, lengthscale)?;
    let cfg = BurgersConfig {
        n_domain,
        dt,
        t_end,
        viscosity,
        gn: gn_cfg(steps, rho, rho_r),
    };
    let traj = burgers_march(&k, &cfg).map_err(err)?;
    let u = traj.states.last().expect("at least one step").clone();
    let u_true = burgers_reference(&traj.interior, t_end, viscosity);
    let w = vec![2.0 / n_domain as f64; traj.interior.len()];
    let (l2, linf) = error_norms(&u, &u_true, &w).map_err(err)?;
    let d = PyDict::new(py);
    let x: Vec<f64> = (0..traj.interior.len()).map(|p| traj.interior.point(p)[0]).collect();
    d.set_item("x", x)?;
    d.set_item("u", u)?;
    d.set_item("u_true", u_true)?;
    d.set_item("l2_error", l2)?;
    d.set_item("linf_error", linf)?;
    d.set_item("times", traj.times)?;
    Ok(d)
}

/// Evaluates a surrogate solution at query points. Internal helper used by
/// the smoke test to check interpolation consistency.
#[pyfunction]
fn evaluate_at(
    pde: &str,
    n: usize,
    queries: Vec<Vec<f64>>,
    nu: f64,
    lengthscale: f64,
) -> PyResult<Vec<f64>> {
    let kind = parse_pde(pde)?;
    if kind != PdeKind::Elliptic {
        return Err(PyValueError::new_err("evaluate_at currently supports elliptic only"));
    }
    let problem = elliptic_example(n, TauFn::Cubic).map_err(err)?;
    let k = parse_kernel(nu, lengthscale)?;
    let (sol, _) = gauss_newton(&problem, &k, &GnConfig::default()).map_err(err)?;
    let q = point_set(queries)?;
    evaluate_solution(&sol, &q).map_err(err)
}

#[pymodule]
fn pdegp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(covariance, m)?)?;
    m.add_function(wrap_pyfunction!(maximin_ordering, m)?)?;
    m.add_function(wrap_pyfunction!(factorize, m)?)?;
    m.add_function(wrap_pyfunction!(solve_elliptic, m)?)?;
    m.add_function(wrap_pyfunction!(solve_monge_ampere, m)?)?;
    m.add_function(wrap_pyfunction!(solve_burgers, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_at, m)?)?;
    m.add_class::<Factorization>()?;
    Ok(())
}
