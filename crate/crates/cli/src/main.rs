//! `xdecode`: command-line front end for the cross-domain decoding engine.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use xdecode::adaptation::{Method, MethodParams};
use xdecode::exec::{init_global_pool, Execution};
use xdecode::io::{
    bundle::Manifest, experiment::RUN_MANIFEST, generate_synth, inspect, read_results_csv, replay, run_compare,
    run_friedman, run_permtest, run_searchlight_experiment, write_dataset, CompareSpec, RunManifest,
    SearchlightSpec, SynthConfig,
};
use xdecode::linear::FitConfig;
use xdecode::stats::{PermutationConfig, TfceConfig};
use xdecode::Error;

const EXIT_INVALID: u8 = 2;
const EXIT_FAILURES: u8 = 3;
const THREADS_ENV: &str = "XDECODE_THREADS";

#[derive(Parser)]
#[command(name = "xdecode", version, about = "Cross-domain decoding: domain adaptation, searchlight maps and rank statistics")]
struct Cli {
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-domain bundle from a JSON config.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare methods over a grid of partitions and target-sample sizes.
    Compare(CompareArgs),
    /// Whole-volume sphere decoding.
    Searchlight(SearchlightArgs),
    /// Aligned Friedman test and Shaffer post-hoc over result tables.
    Friedman {
        /// Glob matching results CSV files, one table per file.
        #[arg(long)]
        tables: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sign-flip permutation test of TFCE-enhanced score maps.
    Permtest(PermtestArgs),
    /// Describe a bundle.
    Inspect {
        #[arg(long)]
        bundle: PathBuf,
    },
}

#[derive(Args)]
struct FitArgs {
    /// Hyperparameter override, `key=value` (repeatable), e.g. `rtlc.lambda=10`.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// L2 penalty of every logistic fit.
    #[arg(long, default_value_t = 1.0)]
    l2: f64,
    /// Exit with status 3 when more than this fraction of cells fail.
    #[arg(long, default_value_t = 1.0)]
    max_failures: f64,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, required_unless_present = "from_manifest")]
    bundle: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "baseline,naive,bw,rtlc,kmm,tradaboost,fa,pred,ulsif,nnw,rulsif,sa,iwn")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 20)]
    partitions: usize,
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,60,70,80,90,100")]
    nt_list: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Re-run the recorded run in this manifest instead.
    #[arg(long, conflicts_with = "bundle")]
    from_manifest: Option<PathBuf>,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args)]
struct SearchlightArgs {
    #[arg(long, required_unless_present = "from_manifest")]
    bundle: Option<PathBuf>,
    #[arg(long, default_value_t = 12.0)]
    radius_mm: f64,
    #[arg(long, value_delimiter = ',', default_value = "baseline,naive,rtlc")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 20)]
    partitions: usize,
    #[arg(long, default_value_t = 100)]
    nt: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, conflicts_with = "bundle")]
    from_manifest: Option<PathBuf>,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args)]
struct PermtestArgs {
    /// Glob matching score-map bundle directories (or files inside them).
    #[arg(long)]
    maps: String,
    #[arg(long, default_value_t = 10_000)]
    n_perm: usize,
    #[arg(long, default_value_t = 6.0)]
    sigma_mm: f64,
    #[arg(long = "tfce-E", default_value_t = 0.5)]
    tfce_e: f64,
    #[arg(long = "tfce-H", default_value_t = 2.0)]
    tfce_h: f64,
    #[arg(long, default_value_t = 26)]
    connectivity: u8,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Top-level failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_fit_failure() { EXIT_FAILURES } else { EXIT_INVALID };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INVALID,
        message: message.into(),
    }
}

type CliResult<T> = Result<T, Failure>;

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| invalid(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        if !init_global_pool(n) {
            warn!("{THREADS_ENV} ignored: worker pool already initialized or parallelism disabled");
        }
    }
    Ok(())
}

impl FitArgs {
    fn resolve(&self) -> CliResult<(MethodParams, FitConfig)> {
        let params = MethodParams::parse_record(&self.params.join(","))?;
        let fit = FitConfig {
            l2_strength: self.l2,
            ..FitConfig::default()
        };
        fit.validate()?;
        if !(0.0..=1.0).contains(&self.max_failures) {
            return Err(invalid("--max-failures must lie in [0,1]"));
        }
        Ok((params, fit))
    }
}

fn check_failures(m: &RunManifest, max: f64) -> CliResult<()> {
    let frac = m.failure_fraction();
    println!("failed cells: {} of {} ({:.4})", m.n_failed, m.n_cells, frac);
    if frac > max {
        return Err(Failure {
            code: EXIT_FAILURES,
            message: format!("failure fraction {frac:.4} exceeds --max-failures {max}"),
        });
    }
    Ok(())
}

fn parse_methods(ids: &[String]) -> CliResult<Vec<Method>> {
    Ok(ids.iter().map(|s| s.trim().parse()).collect::<Result<Vec<Method>, _>>()?)
}

fn cmd_synth(config: &Path, out: &Path) -> CliResult<()> {
    let text = fs::read_to_string(config).map_err(|e| invalid(format!("{}: {e}", config.display())))?;
    let cfg: SynthConfig = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", config.display())))?;
    let (ds, truth) = generate_synth(&cfg)?;
    let mut extra = Manifest::default();
    extra.set("generator", "synth");
    extra.set("synth_seed", cfg.seed);
    extra.set("bayes_target_accuracy", truth.bayes_target_accuracy);
    write_dataset(&ds, out, &extra)?;
    let pretty = |e: serde_json::Result<String>| e.map(|t| t + "\n").map_err(|e| invalid(e.to_string()));
    fs::write(out.join("synth_config.json"), pretty(serde_json::to_string_pretty(&cfg))?).map_err(Error::from)?;
    fs::write(out.join("ground_truth.json"), pretty(serde_json::to_string_pretty(&truth))?).map_err(Error::from)?;
    println!("{}", inspect(out)?);
    println!("bayes target accuracy: {:.6}", truth.bayes_target_accuracy);
    Ok(())
}

fn cmd_compare(a: &CompareArgs, exec: Execution) -> CliResult<()> {
    let manifest = if let Some(m) = &a.from_manifest {
        replay(m, &a.out, exec)?
    } else {
        let (params, fit) = a.fit.resolve()?;
        let methods = parse_methods(&a.methods)?;
        let bundle = a.bundle.clone().ok_or_else(|| invalid("--bundle is required"))?;
        let mut spec = CompareSpec::new(bundle, &methods, a.partitions, a.nt_list.clone(), a.seed);
        spec.params = params;
        spec.fit = fit;
        let o = run_compare(&spec, &a.out, exec)?;
        if let Some(s) = &o.summary {
            println!("aligned Friedman: T = {:.4}, p = {:.3e}", s.statistic, s.p_value);
            for i in s.order() {
                println!("  {:<12} avg rank {:.3}", s.methods[i], s.avg_ranks[i]);
            }
        }
        o.manifest
    };
    println!("wrote {}", a.out.join(RUN_MANIFEST).display());
    check_failures(&manifest, a.fit.max_failures)
}

fn cmd_searchlight(a: &SearchlightArgs, exec: Execution) -> CliResult<()> {
    let manifest = if let Some(m) = &a.from_manifest {
        replay(m, &a.out, exec)?
    } else {
        let (params, fit) = a.fit.resolve()?;
        parse_methods(&a.methods)?;
        let spec = SearchlightSpec {
            bundle: a.bundle.clone().ok_or_else(|| invalid("--bundle is required"))?,
            radius_mm: a.radius_mm,
            methods: a.methods.iter().map(|s| s.trim().to_string()).collect(),
            partitions: a.partitions,
            nt: a.nt,
            seed: a.seed,
            params,
            fit,
        };
        run_searchlight_experiment(&spec, &a.out, exec)?.manifest
    };
    println!("{}", fs::read_to_string(a.out.join("summary.csv")).map_err(Error::from)?);
    check_failures(&manifest, a.fit.max_failures)
}

fn glob_paths(pattern: &str) -> CliResult<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| invalid(format!("bad glob `{pattern}`: {e}")))?
        .collect::<Result<_, _>>()
        .map_err(|e| invalid(e.to_string()))?;
    if paths.is_empty() {
        return Err(invalid(format!("glob `{pattern}` matched nothing")));
    }
    Ok(paths)
}

fn cmd_friedman(tables: &str, alpha: f64, out: &Path) -> CliResult<()> {
    let mut loaded = Vec::new();
    for p in glob_paths(tables)? {
        info!("reading {}", p.display());
        loaded.push((p.display().to_string(), read_results_csv(&p)?));
    }
    let summaries = run_friedman(&loaded, alpha, out)?;
    for ((label, _), s) in loaded.iter().zip(&summaries) {
        let best = &s.methods[s.best()];
        println!("{label}: T = {:.4}, p = {:.3e}, best = {best}", s.statistic, s.p_value);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_permtest(a: &PermtestArgs, exec: Execution) -> CliResult<()> {
    let mut dirs: Vec<PathBuf> = glob_paths(&a.maps)?
        .into_iter()
        .map(|p| if p.is_file() { p.parent().map(Path::to_path_buf).unwrap_or(p) } else { p })
        .collect();
    dirs.sort();
    dirs.dedup();
    let cfg = PermutationConfig {
        n_perm: a.n_perm,
        sigma_mm: a.sigma_mm,
        seed: a.seed,
    };
    let tfce = TfceConfig {
        e: a.tfce_e,
        h: a.tfce_h,
        connectivity: a.connectivity,
        ..TfceConfig::default()
    };
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(invalid("--alpha must lie in (0,1)"));
    }
    let (_, s) = run_permtest(&dirs, &cfg, tfce, a.alpha, &a.out, exec)?;
    println!(
        "{} test over {} observations, {} sign patterns{}: min p = {:.3e}, {} voxels below alpha",
        s.mode,
        s.n_observations,
        s.n_permutations,
        if s.exhaustive { " (exhaustive)" } else { "" },
        s.min_p,
        s.n_significant
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match &cli.command {
        Command::Synth { config, out } => cmd_synth(config, out),
        Command::Compare(a) => cmd_compare(a, exec),
        Command::Searchlight(a) => cmd_searchlight(a, exec),
        Command::Friedman { tables, alpha, out } => cmd_friedman(tables, *alpha, out),
        Command::Permtest(a) => cmd_permtest(a, exec),
        Command::Inspect { bundle } => {
            print!("{}", inspect(bundle)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
