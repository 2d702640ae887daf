use clap::{Args, Parser, Subcommand};
use iwo::bench::{self, BenchmarkRow};
use iwo::dataset_io::{self, Columns};
use iwo::experiment::{self, Check, ConfigError, ExperimentConfig, RunArchive, ROTATION_TOLERANCE};
use iwo::synth;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "iwo", version, about = "Importance-weighted orthogonality and rank of latent representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Write `.bin` matrices instead of CSV.
        #[arg(long)]
        binary: bool,
    },
    /// Train, extract bases and write a run archive.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Archive path (defaults to the config's `output`, else stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Compare an archive with its ground truth, or with another archive.
    Verify {
        archive: PathBuf,
        /// Absolute tolerance (default: the archive's own, or 0.03 with --compare).
        #[arg(long)]
        tolerance: Option<f64>,
        /// Second archive (e.g. the rotated variant) whose means must agree.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Human-readable summary of an archive.
    Report { archive: PathBuf },
    /// List, export or run the benchmark table.
    Bench {
        /// Include the large latent dimensions.
        #[arg(long)]
        full: bool,
        /// Write one config per row into this directory instead of running.
        #[arg(long)]
        write_configs: Option<PathBuf>,
        /// Run these rows (comma separated ids, or `all`).
        #[arg(long)]
        run: Option<String>,
        /// Directory for run archives.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum Failure {
    Verification,
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verification => 1,
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut c = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        c.seeds = vec![s];
    }
    Ok(c)
}

fn set_jobs(jobs: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Failure::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(runtime)?;
    }
    Ok(())
}

fn read_archive(path: &Path) -> Result<RunArchive, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    RunArchive::from_json(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn cmd_synth(common: &Common, out: &Path, binary: bool) -> Result<(), Failure> {
    let config = load_config(common)?;
    let seed = config.seeds[0];
    let synthetic = config
        .synthetic_for_seed(seed)
        .ok_or_else(|| Failure::Config("synth needs a [synthetic] section".into()))?;
    let ds = synth::generate(&synthetic).map_err(runtime)?;
    std::fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let ext = if binary { "bin" } else { "csv" };
    let codes = out.join(format!("codes.{ext}"));
    let factors = out.join(format!("factors.{ext}"));
    dataset_io::write_matrix(&codes, &ds.codes, Columns::Codes).map_err(runtime)?;
    dataset_io::write_matrix(&factors, &ds.factors, Columns::Factors).map_err(runtime)?;
    let truth = serde_json::json!({
        "config": synthetic,
        "ground_truth": config.ground_truth(),
        "planted": ds.planted,
    });
    write_text(&out.join("ground_truth.json"), &serde_json::to_string_pretty(&truth).map_err(runtime)?)?;
    println!(
        "wrote {} samples (L={}, K={}) to {}",
        ds.len(),
        ds.latent_dim(),
        ds.num_factors(),
        out.display()
    );
    Ok(())
}

fn cmd_eval(common: &Common, out: Option<PathBuf>, jobs: Option<usize>) -> Result<(), Failure> {
    let config = load_config(common)?;
    set_jobs(jobs)?;
    let archive = experiment::run_experiment(&config).map_err(runtime)?;
    let failed: usize = archive.runs.iter().map(|r| r.failed_factors().len()).sum();
    if failed > 0 {
        log::warn!("{failed} factor run(s) failed; see the archive");
    }
    match out.or_else(|| config.output.clone()) {
        Some(path) => {
            write_text(&path, &archive.to_json())?;
            eprintln!("wrote {}", path.display());
        }
        None => println!("{}", archive.to_json()),
    }
    print_summary(&archive);
    Ok(())
}

fn report_checks(checks: &[Check]) -> Result<(), Failure> {
    print!("{}", experiment::format_checks(checks));
    if checks.iter().all(|c| c.pass) {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn cmd_verify(path: &Path, tolerance: Option<f64>, compare: Option<&Path>) -> Result<(), Failure> {
    let archive = read_archive(path)?;
    let checks = match compare {
        Some(other) => experiment::compare(&archive, &read_archive(other)?, tolerance.unwrap_or(ROTATION_TOLERANCE)),
        None => experiment::verify(&archive, tolerance.unwrap_or(archive.config.tolerance))
            .map_err(|e| Failure::Config(e.to_string()))?,
    };
    report_checks(&checks)
}

fn print_summary(archive: &RunArchive) {
    let stat = |s: Option<experiment::Stat>| match s {
        Some(s) => format!("{:.4} (std {})", s.mean, s.std.map_or("-".into(), |v| format!("{v:.4}"))),
        None => "-".into(),
    };
    eprintln!("mean IWO {}", stat(archive.mean_iwo));
    eprintln!("mean IWR {}", stat(archive.mean_iwr));
}

fn cmd_report(path: &Path) -> Result<(), Failure> {
    let a = read_archive(path)?;
    println!("config hash {}", a.provenance.config_hash);
    println!("version     {}", a.provenance.version);
    println!("seeds       {:?}", a.provenance.seeds);
    for run in &a.runs {
        println!("\nseed {}", run.seed);
        for f in &run.factors {
            let rank = f.profile.as_ref().map_or("-".into(), |p| p.effective_rank.to_string());
            let resid = f
                .profile
                .as_ref()
                .map_or("-".into(), |p| format!("{:.4}", p.residual / p.baseline));
            let status = match &f.status {
                iwo::pipeline::FactorStatus::Ok => "ok".to_string(),
                iwo::pipeline::FactorStatus::Failed { reason } => format!("failed: {reason}"),
            };
            println!(
                "  factor {}: rank {rank}, relative residual {resid}, IWR {:.4}, {status}",
                f.factor_index, run.summary.iwr[f.factor_index]
            );
        }
        println!("  pairwise IWO:");
        let m = &run.summary.pairwise_iwo;
        for i in 0..m.rows() {
            let cells: Vec<String> = m.row(i).iter().map(|v| format!("{v:6.3}")).collect();
            println!("   {}", cells.join(" "));
        }
        let opt = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.4}"));
        println!(
            "  mean IWO {}, mean IWR {}",
            opt(run.summary.mean_iwo),
            opt(run.summary.mean_iwr)
        );
    }
    println!();
    print_summary(&a);
    if let Some(gt) = &a.ground_truth {
        println!("expected   IWO {:.4}, IWR {:.4}", gt.expected_mean_iwo, gt.expected_iwr);
    }
    Ok(())
}

fn bench_rows(full: bool, run: Option<&str>) -> Result<Vec<BenchmarkRow>, Failure> {
    let all = bench::list_benchmarks();
    match run {
        None | Some("all") => Ok(all.into_iter().filter(|r| full || r.is_default()).collect()),
        Some(ids) => ids
            .split(',')
            .map(|id| bench::find(id.trim()).ok_or_else(|| Failure::Config(format!("unknown benchmark row {id:?}"))))
            .collect(),
    }
}

fn cmd_bench(
    full: bool,
    write_configs: Option<&Path>,
    run: Option<&str>,
    out: Option<&Path>,
    jobs: Option<usize>,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let rows = bench_rows(full, run)?;
    if let Some(dir) = write_configs {
        for r in &rows {
            write_text(&dir.join(format!("{}.toml", r.id)), &bench::to_toml(r))?;
        }
        println!("wrote {} configs to {}", rows.len(), dir.display());
        return Ok(());
    }
    if run.is_none() {
        println!("{:<22} {:>4} {:>3} {:>9} {:>9} {:>9} {:>9}", "id", "L", "R", "ref IWO", "ref IWR", "exp IWO", "exp IWR");
        for r in &rows {
            let gt = r.oracle();
            println!(
                "{:<22} {:>4} {:>3} {:>9.2} {:>9.2} {:>9.3} {:>9.3}",
                r.id, r.config.latent_dim, r.config.rank, r.reference_iwo, r.reference_iwr, gt.expected_mean_iwo, gt.expected_iwr
            );
        }
        return Ok(());
    }
    set_jobs(jobs)?;
    let mut checks = Vec::new();
    for r in &rows {
        let mut config = r.desk_experiment();
        if let Some(s) = seed {
            config.seeds = vec![s];
        }
        eprintln!("running {}", r.id);
        let archive = experiment::run_experiment(&config).map_err(runtime)?;
        if let Some(dir) = out {
            write_text(&dir.join(format!("{}.json", r.id)), &archive.to_json())?;
        }
        for mut c in experiment::verify(&archive, r.tolerance).map_err(runtime)? {
            c.name = format!("{} {}", r.id, c.name);
            checks.push(c);
        }
    }
    report_checks(&checks)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IWO_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth { common, out, binary } => cmd_synth(common, out, *binary),
        Command::Eval { common, out, jobs } => cmd_eval(common, out.clone(), *jobs),
        Command::Verify {
            archive,
            tolerance,
            compare,
        } => cmd_verify(archive, *tolerance, compare.as_deref()),
        Command::Report { archive } => cmd_report(archive),
        Command::Bench {
            full,
            write_configs,
            run,
            out,
            jobs,
            seed,
        } => cmd_bench(*full, write_configs.as_deref(), run.as_deref(), out.as_deref(), *jobs, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Verification => eprintln!("verification failed"),
                Failure::Config(m) => eprintln!("configuration error: {m}"),
                Failure::Runtime(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
