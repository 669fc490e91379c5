use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    FactorizeKl,
    SolveElliptic,
    SolveBurgers,
    SolveMa,
    BenchScaling,
    ScreeningReport,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::FactorizeKl => "factorize-kl",
            Experiment::SolveElliptic => "solve-elliptic",
            Experiment::SolveBurgers => "solve-burgers",
            Experiment::SolveMa => "solve-ma",
            Experiment::BenchScaling => "bench-scaling",
            Experiment::ScreeningReport => "screening-report",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Matérn smoothness, one of 2.5, 3.5, 4.5.
    pub nu: f64,
    pub lengthscale: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub h: Option<f64>,
    pub n_domain: Option<usize>,
}

/// On-disk experiment configuration (JSON). Missing fields fall back to the
/// per-experiment defaults resolved in `Config::resolve`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: Experiment,
    pub kernel: Option<KernelConfig>,
    pub grid: Option<GridConfig>,
    pub rho: Option<f64>,
    /// Optional ρ sweep for `factorize-kl`; overrides `rho`.
    pub rho_sweep: Option<Vec<f64>>,
    pub rho_r: Option<f64>,
    pub lambda: Option<f64>,
    pub gn_steps: Option<usize>,
    pub pcg_tol: Option<f64>,
    /// Pattern lengthscale floor; defaults to twice the kernel lengthscale
    /// for solve-burgers and none otherwise.
    pub lengthscale_floor: Option<f64>,
    pub dt: Option<f64>,
    #[serde(rename = "T")]
    pub t_end: Option<f64>,
    pub viscosity: Option<f64>,
    /// Problem sizes for `bench-scaling` (interior point counts).
    pub sizes: Option<Vec<usize>>,
    pub output_path: Option<String>,
}

#[derive(Debug)]
pub struct Config {
    pub experiment: Experiment,
    pub nu: pdegp::MaternNu,
    pub lengthscale: f64,
    /// Grid subdivisions per axis.
    pub n: usize,
    pub rho: f64,
    pub rho_sweep: Vec<f64>,
    pub rho_r: f64,
    pub lambda: f64,
    pub gn_steps: usize,
    pub pcg_tol: f64,
    pub lengthscale_floor: Option<f64>,
    pub dt: f64,
    pub t_end: f64,
    pub viscosity: f64,
    pub sizes: Vec<usize>,
    pub output_path: Option<String>,
}

impl FileConfig {
    pub fn resolve(self) -> Result<Config, String> {
        let exp = self.experiment;
        let burgers = exp == Experiment::SolveBurgers;
        // Domain extent per axis: (-1, 1) for Burgers, (0, 1) otherwise.
        let extent = if burgers { 2.0 } else { 1.0 };

        let n = match self.grid {
            Some(GridConfig { h: Some(_), n_domain: Some(_) }) => {
                return Err("grid: give exactly one of h / n_domain".into())
            }
            Some(GridConfig { h: Some(h), .. }) => {
                if !(h > 0.0 && h < extent) {
                    return Err(format!("grid.h {h} out of range"));
                }
                (extent / h).round() as usize
            }
            Some(GridConfig { n_domain: Some(nd), .. }) => nd,
            _ => match exp {
                Experiment::FactorizeKl => 20,
                Experiment::SolveElliptic | Experiment::SolveMa => 24,
                Experiment::SolveBurgers => 1000,
                Experiment::BenchScaling => 0, // unused; `sizes` drives it
                Experiment::ScreeningReport => 10,
            },
        };
        if n < 2 && exp != Experiment::BenchScaling {
            return Err(format!("grid too coarse (n = {n})"));
        }

        let (default_nu, default_l) = if burgers { (3.5, 0.02) } else { (2.5, 0.3) };
        let (nu_raw, lengthscale) = match self.kernel {
            Some(kc) => (kc.nu, kc.lengthscale.unwrap_or(default_l)),
            None => (default_nu, default_l),
        };
        let nu = pdegp::MaternNu::parse(nu_raw).map_err(|e| e.to_string())?;
        if !(lengthscale > 0.0) {
            return Err(format!("lengthscale {lengthscale} must be positive"));
        }

        let rho = self.rho.unwrap_or(4.0);
        let rho_r = self.rho_r.unwrap_or(rho);
        let lambda = self.lambda.unwrap_or(1.5);
        if rho < 1.0 || rho_r < 1.0 {
            return Err("rho and rho_r must be >= 1".into());
        }
        if lambda < 1.0 {
            return Err("lambda must be >= 1".into());
        }
        let rho_sweep = match self.rho_sweep {
            Some(v) if exp == Experiment::FactorizeKl => {
                if v.is_empty() || v.iter().any(|&r| r < 1.0) {
                    return Err("rho_sweep must be nonempty with entries >= 1".into());
                }
                v
            }
            Some(_) => return Err("rho_sweep only applies to factorize-kl".into()),
            None => vec![rho],
        };

        let gn_steps = self.gn_steps.unwrap_or(if burgers { 2 } else { 3 });
        if gn_steps == 0 {
            return Err("gn_steps must be >= 1".into());
        }
        let pcg_tol = self.pcg_tol.unwrap_or((0.5f64).powi(26));
        if !(pcg_tol > 0.0 && pcg_tol < 1.0) {
            return Err(format!("pcg_tol {pcg_tol} out of range"));
        }

        let lengthscale_floor = match self.lengthscale_floor {
            Some(c) if !(c >= 0.0 && c.is_finite()) => {
                return Err(format!("lengthscale_floor {c} out of range"));
            }
            Some(c) => Some(c),
            None if burgers => Some(2.0 * lengthscale),
            None => None,
        };

        let dt = self.dt.unwrap_or(0.02);
        let t_end = self.t_end.unwrap_or(1.0);
        let viscosity = self.viscosity.unwrap_or(0.001);
        if burgers && !(dt > 0.0 && t_end > 0.0 && viscosity > 0.0) {
            return Err("dt, T and viscosity must be positive".into());
        }

        let sizes = self.sizes.unwrap_or_else(|| vec![2500, 10000, 40000]);
        if exp == Experiment::BenchScaling && sizes.iter().any(|&s| s < 4) {
            return Err("bench-scaling sizes must be >= 4".into());
        }

        Ok(Config {
            experiment: exp,
            nu,
            lengthscale,
            n,
            rho,
            rho_sweep,
            rho_r,
            lambda,
            gn_steps,
            pcg_tol,
            lengthscale_floor,
            dt,
            t_end,
            viscosity,
            sizes,
            output_path: self.output_path,
        })
    }
}
