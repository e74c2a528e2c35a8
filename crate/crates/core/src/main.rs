use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bdhsic::harness::{
    marginal_hsic_test_with, run_experiment_with, run_test_with, write_experiment, EstimatorKind,
    ExperimentConfig, TestConfig,
};
use bdhsic::kernels::KernelSpec;
use bdhsic::ratio::{default_gradient_checks, RatioModel};
use bdhsic::simgen::io::{read_dataset, write_dataset};
use bdhsic::simgen::{generate, Dependence, GenParams, Generator, Sampler};
use bdhsic::{Error, Exec, Result};

#[derive(Parser)]
#[command(name = "bdhsic", version, about = "Backdoor-adjusted HSIC tests of the causal do-null")]
struct Cli {
    /// Worker threads (0 = all cores). Output does not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (CSV plus JSON sidecar).
    Simulate(SimulateArgs),
    /// Run one test on a dataset.
    Test(TestArgs),
    /// Run a parameter sweep from a JSON config.
    Experiment(ExperimentArgs),
    /// Finite-difference gradient checks for the default scorers.
    Gradcheck,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long = "gen", value_enum)]
    generator: Generator,
    /// JSON file with generator parameters; flags override it.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    beta_xy: Option<f64>,
    #[arg(long)]
    beta_xz: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    beta_yz: Option<Vec<f64>>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    d_x: Option<usize>,
    #[arg(long)]
    d_y: Option<usize>,
    #[arg(long)]
    d_z: Option<usize>,
    #[arg(long, value_enum)]
    dependence: Option<DependenceArg>,
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    /// Binary generator: force the alternative (true) or null branch.
    #[arg(long)]
    alternative: Option<bool>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DependenceArg {
    Linear,
    Quadratic,
    Cosine,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Rejection,
    Direct,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Rbf,
    Linear,
}

impl KernelArg {
    fn spec(self) -> KernelSpec {
        match self {
            KernelArg::Rbf => KernelSpec::rbf_median(),
            KernelArg::Linear => KernelSpec::linear(),
        }
    }
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON test configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorKind>,
    /// Kernel for X (and for Y unless --kernel-y is given).
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    #[arg(long, value_enum)]
    kernel_y: Option<KernelArg>,
    #[arg(long)]
    nq: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Plain HSIC of X and Y instead of the weighted test.
    #[arg(long)]
    marginal: bool,
    #[arg(long, conflicts_with = "load_model")]
    save_model: Option<PathBuf>,
    #[arg(long)]
    load_model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&s).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut p: GenParams = match &a.params {
        Some(path) => read_config(path)?,
        None => GenParams::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$( if let Some(v) = a.$field.clone() { p.$field = v; } )*};
    }
    set!(n, beta_xy, beta_xz, beta_yz, theta, phi, d_x, d_y, d_z);
    if let Some(d) = a.dependence {
        p.dependence = match d {
            DependenceArg::Linear => Dependence::Linear,
            DependenceArg::Quadratic => Dependence::Quadratic,
            DependenceArg::Cosine => Dependence::Cosine,
        };
    }
    if let Some(s) = a.sampler {
        p.sampler = match s {
            SamplerArg::Rejection => Sampler::Rejection,
            SamplerArg::Direct => Sampler::Direct,
        };
    }
    if a.alternative.is_some() {
        p.alternative = a.alternative;
    }
    p.seed = a.seed;
    let data = generate(a.generator, &p)?;
    write_dataset(&a.out, &data, Some(a.generator), Some(&p))?;
    println!("wrote {} rows to {}", data.n(), a.out.display());
    Ok(())
}

fn test(a: TestArgs, exec: Exec) -> Result<()> {
    let mut c: TestConfig = match &a.config {
        Some(path) => read_config(path)?,
        None => TestConfig::default(),
    };
    if let Some(e) = a.estimator {
        c.estimator = e;
    }
    if let Some(k) = a.kernel {
        c.kernel_x = k.spec();
        c.kernel_y = k.spec();
    }
    if let Some(k) = a.kernel_y {
        c.kernel_y = k.spec();
    }
    if let Some(nq) = a.nq {
        c.n_q = nq;
    }
    c.seed = a.seed;
    c.validate()?;
    let data = read_dataset(&a.data)?;
    let report = if a.marginal {
        marginal_hsic_test_with(&data, &c, exec)?
    } else {
        let loaded = match &a.load_model {
            Some(path) => Some(RatioModel::from_json(&std::fs::read_to_string(path)?)?),
            None => None,
        };
        let (report, model) = run_test_with(&data, &c, loaded.as_ref(), exec)?;
        if let (Some(path), Some(m)) = (&a.save_model, model) {
            std::fs::write(path, m.to_json()?)?;
        }
        report
    };
    std::fs::write(&a.out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "statistic {:.6e}  p-value {:.4}  ESS {:.1}  n_test {}",
        report.result.statistic, report.result.p_value, report.result.ess, report.result.n_test
    );
    Ok(())
}

fn experiment(a: ExperimentArgs, exec: Exec) -> Result<()> {
    let mut c: ExperimentConfig = read_config(&a.config)?;
    if let Some(s) = a.seed {
        c.seed = s;
    }
    let result = run_experiment_with(&c, exec)?;
    write_experiment(&a.out, &c, &result)?;
    for cell in &result.cells {
        println!(
            "cell {:>3}  rejection {:.3}  ({}/{})  mean ESS {:.1}{}",
            cell.cell,
            cell.rejection_rate,
            cell.rejections,
            cell.completed,
            cell.mean_ess,
            if cell.failed { "  [failures]" } else { "" }
        );
    }
    eprintln!("wall clock {:.1}s", result.wall_clock);
    Ok(())
}

fn gradcheck() -> Result<()> {
    let mut worst: f64 = 0.0;
    for (name, err) in default_gradient_checks()? {
        println!("{name:<30} {err:.3e}");
        worst = worst.max(err);
    }
    println!("max relative error {worst:.3e}");
    Ok(())
}

fn configure_threads(threads: usize) -> Exec {
    if threads == 1 {
        return Exec::Sequential;
    }
    #[cfg(feature = "parallel")]
    if threads > 1 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    Exec::default()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let exec = configure_threads(cli.threads);
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Test(a) => test(a, exec),
        Command::Experiment(a) => experiment(a, exec),
        Command::Gradcheck => gradcheck(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
