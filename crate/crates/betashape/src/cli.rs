//! Command-line front end: `test`, `simulate`, and `fpca` subcommands.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data::{read_curves_only, read_dataset};
use crate::design::Hypothesis;
use crate::error::{Error, Result};
use crate::family::Family;
use crate::fpca::{fit_fpca, FpcaOptions};
use crate::harness::{
    power_mode, run_experiment, write_results_csv, write_summary, CoefficientSpec,
    ExperimentResult, SimConfig,
};
use crate::vctest::{run_test, Method, TestOptions, TestResult, DEFAULT_KU, DEFAULT_NULL_DRAWS};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "betashape", version, about = "Shape tests for the coefficient function of scalar-on-function regression")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a coefficient-shape hypothesis test on a dataset
    Test(TestArgs),
    /// Run a Monte Carlo simulation experiment from a config file
    Simulate(SimulateArgs),
    /// Fit the FPCA predictor decomposition and report its summary
    Fpca(FpcaArgs),
}

#[derive(Debug, Args)]
struct TestArgs {
    /// Long-format curves CSV (header id,t,x)
    curves: PathBuf,
    /// Response CSV (header id,y[,trials])
    response: PathBuf,
    /// Hypothesis: nullity | functionality | linearity
    #[arg(long)]
    hypothesis: String,
    /// Response family: gaussian | bernoulli | binomial | poisson
    #[arg(long, default_value = "gaussian")]
    family: String,
    /// Test method: aRLRT | aScore
    #[arg(long, default_value = "aRLRT")]
    method: String,
    /// Null-distribution Monte Carlo draws
    #[arg(long, default_value_t = DEFAULT_NULL_DRAWS)]
    null_draws: usize,
    /// Spline basis size
    #[arg(long, default_value_t = DEFAULT_KU)]
    ku: usize,
    /// Force the number of FPCA components instead of AIC selection
    #[arg(long)]
    kx: Option<usize>,
    /// Master seed for the null simulation
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Treat curves as already centered
    #[arg(long)]
    pre_centered: bool,
    /// Output JSON path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Key=value config file describing the experiment grid
    config: PathBuf,
    /// Directory for results.csv / results.json
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Override the config file's seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FpcaArgs {
    /// Long-format curves CSV (header id,t,x)
    curves: PathBuf,
    /// Force the number of components instead of AIC selection
    #[arg(long)]
    kx: Option<usize>,
    /// Treat curves as already centered
    #[arg(long)]
    pre_centered: bool,
    /// Output JSON path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ResolvedTestConfig {
    curves: String,
    response: String,
    hypothesis: Hypothesis,
    family: Family,
    method: Method,
    null_draws: usize,
    k_u: usize,
    kx_override: Option<usize>,
    seed: u64,
    pre_centered: bool,
}

#[derive(Debug, Serialize)]
struct TestOutput {
    version: String,
    config: ResolvedTestConfig,
    result: TestResult,
}

#[derive(Debug, Serialize)]
struct FpcaOutput {
    version: String,
    curves: String,
    pre_centered: bool,
    kx_override: Option<usize>,
    k_x: usize,
    noise_var: f64,
    eigenvalues: Vec<f64>,
    grid: Vec<f64>,
    mean: Vec<f64>,
    eigenfunctions: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct SimulateOutput {
    version: String,
    config: SimGrid,
    results: Vec<ExperimentResult>,
}

/// Experiment grid parsed from the key=value config file; list-valued keys
/// expand to a full cross-product of cells.
#[derive(Debug, Clone, Serialize)]
pub struct SimGrid {
    pub family: Family,
    pub coefficient: String,
    pub tabulated_values: Option<Vec<f64>>,
    pub delta: Vec<f64>,
    pub n: Vec<usize>,
    /// None = dense
    pub m: Vec<Option<usize>>,
    pub hypothesis: Vec<Hypothesis>,
    pub method: Vec<Method>,
    pub grid_size: usize,
    pub sigma2_x: f64,
    pub eigenvalues: Vec<f64>,
    pub alpha: f64,
    pub replicates: usize,
    pub null_draws: usize,
    pub trials: u64,
    pub seed: u64,
    /// Power-analysis mode: add a doubled-n companion cell per delta.
    pub power_mode: bool,
}

impl Default for SimGrid {
    fn default() -> Self {
        let base = SimConfig::default();
        Self {
            family: base.family,
            coefficient: "scalar".into(),
            tabulated_values: None,
            delta: vec![0.0],
            n: vec![base.n],
            m: vec![None],
            hypothesis: vec![Hypothesis::Nullity],
            method: vec![Method::Arlrt],
            grid_size: base.grid_size,
            sigma2_x: base.sigma2_x,
            eigenvalues: base.eigenvalues,
            alpha: base.alpha_level,
            replicates: base.replicates,
            null_draws: base.n_null_draws,
            trials: base.trials,
            seed: base.seed,
            power_mode: false,
        }
    }
}

fn config_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config(format!("line {line}: {}", msg.into()))
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, val: &str) -> Result<Vec<T>> {
    val.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| config_err(line, format!("invalid {key} entry '{s}'")))
        })
        .collect()
}

impl SimGrid {
    pub fn parse(text: &str) -> Result<Self> {
        let mut grid = SimGrid::default();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| config_err(line_no, "expected key = value"))?;
            let (key, val) = (key.trim(), val.trim());
            match key {
                "family" => grid.family = Family::parse(val).map_err(|e| config_err(line_no, e.to_string()))?,
                "coefficient" => {
                    if !["scalar", "linear", "trig", "tabulated"].contains(&val) {
                        return Err(config_err(line_no, format!("unknown coefficient form '{val}'")));
                    }
                    grid.coefficient = val.to_string();
                }
                "tabulated_values" => grid.tabulated_values = Some(parse_list(line_no, key, val)?),
                "delta" => grid.delta = parse_list(line_no, key, val)?,
                "n" => grid.n = parse_list(line_no, key, val)?,
                "m" => {
                    grid.m = val
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| {
                            if s == "dense" {
                                Ok(None)
                            } else {
                                s.parse::<usize>()
                                    .map(Some)
                                    .map_err(|_| config_err(line_no, format!("invalid m entry '{s}'")))
                            }
                        })
                        .collect::<Result<_>>()?;
                }
                "hypothesis" => {
                    grid.hypothesis = val
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| Hypothesis::parse(s).map_err(|e| config_err(line_no, e.to_string())))
                        .collect::<Result<_>>()?;
                }
                "method" => {
                    grid.method = val
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| Method::parse(s).map_err(|e| config_err(line_no, e.to_string())))
                        .collect::<Result<_>>()?;
                }
                "grid_size" => grid.grid_size = val.parse().map_err(|_| config_err(line_no, "invalid grid_size"))?,
                "sigma2_x" => grid.sigma2_x = val.parse().map_err(|_| config_err(line_no, "invalid sigma2_x"))?,
                "eigenvalues" => grid.eigenvalues = parse_list(line_no, key, val)?,
                "alpha" => grid.alpha = val.parse().map_err(|_| config_err(line_no, "invalid alpha"))?,
                "replicates" => grid.replicates = val.parse().map_err(|_| config_err(line_no, "invalid replicates"))?,
                "null_draws" => grid.null_draws = val.parse().map_err(|_| config_err(line_no, "invalid null_draws"))?,
                "trials" => grid.trials = val.parse().map_err(|_| config_err(line_no, "invalid trials"))?,
                "seed" => grid.seed = val.parse().map_err(|_| config_err(line_no, "invalid seed"))?,
                "power_mode" => grid.power_mode = val.parse().map_err(|_| config_err(line_no, "invalid power_mode"))?,
                other => return Err(config_err(line_no, format!("unknown key '{other}'"))),
            }
        }
        if grid.coefficient == "tabulated" && grid.tabulated_values.is_none() {
            return Err(Error::Config(
                "coefficient = tabulated requires tabulated_values".into(),
            ));
        }
        Ok(grid)
    }

    fn coefficient_spec(&self, delta: f64) -> CoefficientSpec {
        match self.coefficient.as_str() {
            "scalar" => CoefficientSpec::Scalar { delta },
            "linear" => CoefficientSpec::Linear { delta },
            "trig" => CoefficientSpec::Trig { delta },
            _ => CoefficientSpec::Tabulated {
                values: self.tabulated_values.clone().unwrap_or_default(),
                delta,
            },
        }
    }

    /// Expand the grid into per-cell configs with deterministic per-cell
    /// seeds, ordered lexicographically over (hypothesis, method, n, m,
    /// delta).
    pub fn cells(&self) -> Vec<(SimConfig, Method, Hypothesis)> {
        let mut out = Vec::new();
        let mut cell_idx = 0u64;
        for &hyp in &self.hypothesis {
            for &method in &self.method {
                for &n in &self.n {
                    for &m in &self.m {
                        for &delta in &self.delta {
                            let config = SimConfig {
                                family: self.family,
                                coefficient: self.coefficient_spec(delta),
                                n,
                                m_i: m,
                                grid_size: self.grid_size,
                                sigma2_x: self.sigma2_x,
                                eigenvalues: self.eigenvalues.clone(),
                                alpha_level: self.alpha,
                                replicates: self.replicates,
                                n_null_draws: self.null_draws,
                                trials: self.trials,
                                seed: crate::linalg::derive_seed(self.seed, cell_idx),
                            };
                            out.push((config, method, hyp));
                            cell_idx += 1;
                        }
                    }
                }
            }
        }
        out
    }
}

fn write_json(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(Error::Io),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_test(args: &TestArgs) -> Result<i32> {
    let hypothesis = Hypothesis::parse(&args.hypothesis)?;
    let family = Family::parse(&args.family)?;
    let method = Method::parse(&args.method)?;
    let data = read_dataset(&args.curves, &args.response, family, args.pre_centered)?;
    let opts = TestOptions {
        method,
        n_null_draws: args.null_draws,
        seed: args.seed,
        k_u: args.ku,
        kx_override: args.kx,
        two_fit_null: false,
    };
    let result = run_test(&data, hypothesis, &opts)?;
    let converged = result.converged;
    let output = TestOutput {
        version: VERSION.to_string(),
        config: ResolvedTestConfig {
            curves: args.curves.display().to_string(),
            response: args.response.display().to_string(),
            hypothesis,
            family,
            method,
            null_draws: args.null_draws,
            k_u: args.ku,
            kx_override: args.kx,
            seed: args.seed,
            pre_centered: args.pre_centered,
        },
        result,
    };
    let text = serde_json::to_string_pretty(&output)?;
    write_json(args.out.as_deref(), &text)?;
    Ok(if converged { 0 } else { 2 })
}

fn run_simulation(grid: &SimGrid) -> Result<Vec<ExperimentResult>> {
    let mut results = Vec::new();
    for (config, method, hypothesis) in grid.cells() {
        if grid.power_mode {
            results.extend(power_mode(&config, method, hypothesis, &[config.coefficient.delta()])?);
        } else {
            results.push(run_experiment(&config, method, hypothesis)?);
        }
    }
    Ok(results)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut grid = SimGrid::parse(&text)?;
    if let Some(seed) = args.seed {
        grid.seed = seed;
    }
    let results = match args.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| run_simulation(&grid))?
        }
        None => run_simulation(&grid)?,
    };
    std::fs::create_dir_all(&args.out_dir)?;
    let csv_path = args.out_dir.join("results.csv");
    let json_path = args.out_dir.join("results.json");
    write_results_csv(std::fs::File::create(&csv_path)?, &results)?;
    let output = SimulateOutput {
        version: VERSION.to_string(),
        config: grid,
        results: results.clone(),
    };
    std::fs::write(&json_path, serde_json::to_string_pretty(&output)?)?;
    write_summary(std::io::stdout().lock(), &results)?;
    Ok(0)
}

fn cmd_fpca(args: &FpcaArgs) -> Result<i32> {
    let data = read_curves_only(&args.curves, args.pre_centered)?;
    let opts = FpcaOptions {
        kx_override: args.kx,
        ..FpcaOptions::default()
    };
    let model = fit_fpca(&data, 0, &opts)?;
    let k = model.eigenvalues.len();
    let output = FpcaOutput {
        version: VERSION.to_string(),
        curves: args.curves.display().to_string(),
        pre_centered: args.pre_centered,
        kx_override: args.kx,
        k_x: model.k_x,
        noise_var: model.noise_var,
        eigenvalues: model.eigenvalues.iter().copied().collect(),
        grid: model.grid.clone(),
        mean: model.mean.clone(),
        eigenfunctions: (0..k)
            .map(|j| model.eigenfunctions.column(j).iter().copied().collect())
            .collect(),
    };
    let text = serde_json::to_string_pretty(&output)?;
    write_json(args.out.as_deref(), &text)?;
    Ok(0)
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version as "errors" with exit code 0
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fpca(a) => cmd_fpca(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_lists_and_cross_product() {
        let text = "\
family = bernoulli
coefficient = trig
delta = 0, 0.5, 1
n = 100, 500
m = dense, 10
hypothesis = linearity, nullity
method = aRLRT
replicates = 7
null_draws = 50
seed = 42
";
        let grid = SimGrid::parse(text).unwrap();
        assert_eq!(grid.delta.len(), 3);
        assert_eq!(grid.m, vec![None, Some(10)]);
        let cells = grid.cells();
        assert_eq!(cells.len(), 3 * 2 * 2 * 2);
        // per-cell seeds are distinct
        let mut seeds: Vec<u64> = cells.iter().map(|c| c.0.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), cells.len());
    }

    #[test]
    fn config_rejects_bad_lines_with_line_numbers() {
        let err = SimGrid::parse("family = gaussian\nbogus_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = SimGrid::parse("replicates = many\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        assert!(SimGrid::parse("coefficient = tabulated\n").is_err());
    }

    #[test]
    fn config_comments_and_blank_lines_ok() {
        let grid = SimGrid::parse("# header\n\nn = 50 # subjects\n").unwrap();
        assert_eq!(grid.n, vec![50]);
    }
}
