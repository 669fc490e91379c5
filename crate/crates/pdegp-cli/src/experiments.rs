use std::io::Write;
use std::time::Instant;

use pdegp::factorization::{aggregate_supernodes, build_pattern, dense_inverse_cholesky, kl_divergence, kl_factorize};
use pdegp::geometry::{grid_boundary, grid_interior, PointSet};
use pdegp::kernels::dense_kernel_matrix;
use pdegp::measurements::{order_interior_first, standard_layout, PdeKind};
use pdegp::pde::{
    burgers_march, burgers_reference, elliptic_example, elliptic_truth, error_norms, gauss_newton,
    monge_ampere_example, monge_ampere_initial_z, monge_ampere_truth, BurgersConfig, GnConfig,
    GnDiagnostics, PdeProblem, TauFn,
};
use pdegp::KernelSpec;

type RunResult<T> = std::result::Result<T, Box<dyn std::error::Error>>;
use serde_json::{json, Value};

use crate::config::{Config, Experiment};

/// CSV report with the fixed schema
/// `experiment, param_json, metric, value, seconds`.
pub struct Report<W: Write> {
    out: csv::Writer<W>,
    experiment: &'static str,
    started: Instant,
}

fn sig17(v: f64) -> String {
    format!("{v:.16e}")
}

impl<W: Write> Report<W> {
    pub fn new(out: W, experiment: &'static str) -> std::io::Result<Self> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        out.write_record(["experiment", "param_json", "metric", "value", "seconds"])?;
        Ok(Report { out, experiment, started: Instant::now() })
    }

    pub fn row(&mut self, params: &Value, metric: &str, value: f64) -> std::io::Result<()> {
        let secs = self.started.elapsed().as_secs_f64();
        self.out.write_record([
            self.experiment,
            &params.to_string(),
            metric,
            &sig17(value),
            &sig17(secs),
        ])?;
        self.out.flush()
    }
}

fn elliptic_geometry(n: usize) -> (PointSet, PointSet) {
    let lo = [0.0, 0.0];
    let hi = [1.0, 1.0];
    (grid_interior(&lo, &hi, n), grid_boundary(&lo, &hi, n))
}

fn gn_config(cfg: &Config) -> GnConfig {
    GnConfig {
        steps: cfg.gn_steps,
        rho: cfg.rho,
        rho_r: cfg.rho_r,
        lambda: cfg.lambda,
        pcg_tol: cfg.pcg_tol,
        max_pcg_iters: None,
        initial_z: None,
        lengthscale_floor: cfg.lengthscale_floor,
    }
}

fn emit_gn_diagnostics<W: Write>(
    report: &mut Report<W>,
    params: &Value,
    diag: &GnDiagnostics,
) -> std::io::Result<()> {
    for (k, &it) in diag.pcg_iterations.iter().enumerate() {
        let p = with_field(params, "gn_step", json!(k + 1));
        report.row(&p, "pcg_iterations", it as f64)?;
        report.row(&p, "equation_residual_linf", diag.equation_residuals[k])?;
    }
    Ok(())
}

fn with_field(params: &Value, key: &str, v: Value) -> Value {
    let mut p = params.clone();
    p.as_object_mut().expect("object params").insert(key.into(), v);
    p
}

/// Runs the configured experiment, appending rows to `report`.
pub fn run<W: Write>(cfg: &Config, report: &mut Report<W>) -> RunResult<String> {
    match cfg.experiment {
        Experiment::FactorizeKl => factorize_kl(cfg, report),
        Experiment::SolveElliptic => solve_elliptic(cfg, report),
        Experiment::SolveBurgers => solve_burgers(cfg, report),
        Experiment::SolveMa => solve_ma(cfg, report),
        Experiment::BenchScaling => bench_scaling(cfg, report),
        Experiment::ScreeningReport => screening_report(cfg, report),
    }
}

fn factorize_kl<W: Write>(cfg: &Config, report: &mut Report<W>) -> RunResult<String> {
    let (interior, bdry) = elliptic_geometry(cfg.n);
    let layout = standard_layout(PdeKind::Elliptic, &interior, &bdry)?;
    let k = KernelSpec::new(cfg.nu, cfg.lengthscale)?;
    let ord = order_interior_first(&layout)?;
    let ms = layout.expand_ordered(&ord)?;
    let base = layout.base_points_ordered(&ord);
    let theta = dense_kernel_matrix(&k, &ms);

    let base_params = json!({
        "n": cfg.n,
        "n_boundary": bdry.len(),
        "nu": cfg.nu.value(),
        "lengthscale": cfg.lengthscale,
        "lambda": cfg.lambda,
    });
    report.row(&base_params, "n_measurements", ms.len() as f64)?;
    let mut last_kl = f64::NAN;
    for &rho in &cfg.rho_sweep {
        let pattern = build_pattern(&base, &ord, rho)?;
        let sn = aggregate_supernodes(&pattern, &ord, cfg.lambda)?;
        let t0 = Instant::now();
        let u = kl_factorize(&k, &ms, &sn)?;
        let secs = t0.elapsed().as_secs_f64();
        last_kl = kl_divergence(&theta, &u)?;
        let p = with_field(&base_params, "rho", json!(rho));
        report.row(&p, "kl_divergence", last_kl)?;
        report.row(&p, "nnz", u.nnz() as f64)?;
        report.row(&p, "factorize_seconds", secs)?;
    }
    Ok(format!("factorize-kl: N = {}, final KL = {:.3e}", ms.len(), last_kl))
}

fn solve_errors_on_interior(
    problem: &PdeProblem,
    z: &[f64],
    truth: impl Fn(&[f64]) -> f64,
    cell: f64,
) -> RunResult<(f64, f64)> {
    let mi = problem.layout.n_interior;
    let u_true: Vec<f64> = (0..mi).map(|p| truth(problem.layout.points.point(p))).collect();
    let w = vec![cell; mi];
    Ok(error_norms(&z[..mi], &u_true, &w)?)
}

fn solve_elliptic<W: Write>(cfg: &Config, report: &mut Report<W>) -> RunResult<String> {
    let problem = elliptic_example(cfg.n, TauFn::Cubic)?;
    let k = KernelSpec::new(cfg.nu, cfg.lengthscale)?;
    let params = json!({
        "n": cfg.n,
        "n_boundary": problem.layout.n_points() - problem.layout.n_interior,
        "nu": cfg.nu.value(),
        "lengthscale": cfg.lengthscale,
        "rho": cfg.rho,
        "rho_r": cfg.rho_r,
        "gn_steps": cfg.gn_steps,
    });
    let (sol, diag) = gauss_newton(&problem, &k, &gn_config(cfg))?;
    let cell = 1.0 / ((cfg.n - 1) as f64 * (cfg.n - 1) as f64);
    let (l2, linf) = solve_errors_on_interior(&problem, &sol.z, elliptic_truth, cell)?;
    report.row(&params, "l2_error", l2)?;
    report.row(&params, "linf_error", linf)?;
    emit_gn_diagnostics(report, &params, &diag)?;
    Ok(format!("solve-elliptic: L2 = {l2:.3e}, Linf = {linf:.3e}"))
}

fn solve_ma<W: Write>(cfg: &Config, report: &mut Report<W>) -> RunResult<String> {
    let problem = monge_ampere_example(cfg.n)?;
    let k = KernelSpec::new(cfg.nu, cfg.lengthscale)?;
    let params = json!({
        "n": cfg.n,
        "n_boundary": problem.layout.n_points() - problem.layout.n_interior,
        "nu": cfg.nu.value(),
        "lengthscale": cfg.lengthscale,
        "rho": cfg.rho,
        "rho_r": cfg.rho_r,
        "gn_steps": cfg.gn_steps,
    });
    let mut gn = gn_config(cfg);
    gn.initial_z = Some(monge_ampere_initial_z(&problem.layout));
    let (sol, diag) = gauss_newton(&problem, &k, &gn)?;
    let cell = 1.0 / ((cfg.n - 1) as f64 * (cfg.n - 1) as f64);
    let (l2, linf) = solve_errors_on_interior(&problem, &sol.z, monge_ampere_truth, cell)?;
    report.row(&params, "l2_error", l2)?;
    report.row(&params, "linf_error", linf)?;
    emit_gn_diagnostics(report, &params, &diag)?;
    Ok(format!("solve-ma: L2 = {l2:.3e}, Linf = {linf:.3e}"))
}

fn solve_burgers<W: Write>(cfg: &Config, report: &mut Report<W>) -> RunResult<String> {
    let k = KernelSpec::new(cfg.nu, cfg.lengthscale)?;
    let bcfg = BurgersConfig {
        n_domain: cfg.n,
        dt: cfg.dt,
        t_end: cfg.t_end,
        viscosity: cfg.viscosity,
        gn: gn_config(cfg),
    };
    let params = json!({
        "n_domain": cfg.n,
        "n_boundary": 2,
        "nu": cfg.nu.value(),
        "lengthscale": cfg.lengthscale,
        "rho": cfg.rho,
        "rho_r": cfg.rho_r,
        "gn_steps": cfg.gn_steps,
        "dt": cfg.dt,
        "T": cfg.t_end,
        "viscosity": cfg.viscosity,
    });
    let traj = burgers_march(&k, &bcfg)?;
    let truth = burgers_reference(&traj.interior, cfg.t_end, cfg.viscosity);
    let w = vec![2.0 / cfg.n as f64; traj.interior.len()];
    let (l2, linf) = error_norms(traj.states.last().expect("at least one step"), &truth, &w)?;
    report.row(&params, "l2_error", l2)?;
    report.row(&params, "linf_error", linf)?;
    let total_pcg: usize = traj
        .diagnostics
        .iter()
        .flat_map(|d| d.pcg_iterations.iter())
        .sum();
    report.row(&params, "n_time_steps", traj.times.len() as f64)?;
    report.row(&params, "total_pcg_iterations", total_pcg as f64)?;
    Ok(format!("solve-burgers: L2 = {l2:.3e}, Linf = {linf:.3e} at t = {}", cfg.t_end))
}

fn bench_scaling<W: Write>(cfg: &Config, report: &mut Report<W>) -> RunResult<String> {
    let k = KernelSpec::new(cfg.nu, cfg.lengthscale)?;
    let mut summary = String::from("bench-scaling:");
    for &size in &cfg.sizes {
        // Square grid with ~`size` interior points.
        let n = (size as f64).sqrt().round() as usize + 1;
        let (interior, bdry) = elliptic_geometry(n);
        let layout = standard_layout(PdeKind::Elliptic, &interior, &bdry)?;
        let ord = order_interior_first(&layout)?;
        let ms = layout.expand_ordered(&ord)?;
        let base = layout.base_points_ordered(&ord);
        let pattern = build_pattern(&base, &ord, cfg.rho)?;
        let sn = aggregate_supernodes(&pattern, &ord, cfg.lambda)?;
        let t0 = Instant::now();
        let u = kl_factorize(&k, &ms, &sn)?;
        let secs = t0.elapsed().as_secs_f64();
        let params = json!({
            "size": size,
            "n": n,
            "n_boundary": bdry.len(),
            "nu": cfg.nu.value(),
            "lengthscale": cfg.lengthscale,
            "rho": cfg.rho,
            "lambda": cfg.lambda,
        });
        report.row(&params, "n_measurements", ms.len() as f64)?;
        report.row(&params, "nnz", u.nnz() as f64)?;
        report.row(&params, "factorize_seconds", secs)?;
        summary.push_str(&format!(" N={} {:.2}s", ms.len(), secs));
    }
    Ok(summary)
}

fn screening_report<W: Write>(cfg: &Config, report: &mut Report<W>) -> RunResult<String> {
    let (interior, bdry) = elliptic_geometry(cfg.n);
    let layout = standard_layout(PdeKind::Elliptic, &interior, &bdry)?;
    let k = KernelSpec::new(cfg.nu, cfg.lengthscale)?;
    let ord = order_interior_first(&layout)?;
    let ms = layout.expand_ordered(&ord)?;
    let base = layout.base_points_ordered(&ord);
    let theta = dense_kernel_matrix(&k, &ms);
    let w = dense_inverse_cholesky(&theta)?;
    let n = ms.len();
    let params = json!({
        "n": cfg.n,
        "n_boundary": bdry.len(),
        "nu": cfg.nu.value(),
        "lengthscale": cfg.lengthscale,
    });
    let mut rows = 0usize;
    for j in 0..n {
        let lj = ord.lengthscales[j];
        for i in 0..=j {
            let entry = w[(i, j)];
            // Skip entries at double-precision noise level to keep reports small.
            if entry.abs() < 1e-14 * w[(j, j)].abs() {
                continue;
            }
            let d = pdegp::geometry::dist(base.point(i), base.point(j));
            let p = json!({
                "i": i,
                "j": j,
                "dist_over_lj": d / lj,
            });
            report.row(&p, "u_ratio_abs", (entry / w[(j, j)]).abs())?;
            rows += 1;
        }
        let pj = with_field(&params, "j", json!(j));
        report.row(&pj, "u_diag_abs", w[(j, j)].abs())?;
    }
    Ok(format!("screening-report: N = {n}, {rows} entry rows"))
}
