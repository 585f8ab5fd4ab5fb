use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use isra::config::{Algorithm, Config, ProblemKind};
use isra::experiments::{Provenance, Runner, Suite};
use isra::loss::{ConstraintSet, CreditLoss, LinearLoss, LossModel};
use isra::objective::Decision;
use isra::ra::{
    run_enhanced_ra, run_plain_ra, run_vanilla_ra, validate_schedule, Problem, RaTrace,
};
use isra::rng::SeedStream;
use isra::transform::{invariant_suite, TransformParams};
use isra::Error;

#[derive(Parser)]
#[command(
    name = "isra",
    version,
    about = "CVaR minimization with importance-sampled retrospective approximation"
)]
struct Cli {
    /// TOML configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for replications (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log per-stage progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the transformation on the configured model.
    CheckTransform,
    /// Run one optimization as configured under [run].
    Solve,
    /// Run result suites: fig1b, fig2, fig3a, fig3b, fig4, clt or all.
    Experiment { name: String },
    /// Check the [run] schedule against the sample-size conditions.
    ValidateSchedule,
}

enum Failure {
    Validation(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

fn git_revision() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

fn load(cli: &Cli) -> Result<Config, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_transform(cfg: &Config) -> Result<(), Failure> {
    let t = &cfg.transform_check;
    let (model, order) = match cfg.run.problem {
        ProblemKind::Linear => (cfg.model.build()?, LinearLoss::new(cfg.model.dim)?.order()),
        ProblemKind::Credit => {
            let spec = cfg.credit.build()?;
            let order = CreditLoss::new(spec.clone()).order();
            (spec.factors, order)
        }
    };
    let params = TransformParams::new(t.h, t.beta, order)?;
    let checks = invariant_suite(&model, &params, t.n, cfg.seed)?;
    let mut ok = true;
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        ok &= c.passed;
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Validation("transformation checks failed".into()))
    }
}

fn write_with_header(
    path: &Path,
    prov: &Provenance,
    write: impl FnOnce(&Path) -> isra::Result<()>,
) -> Result<(), Failure> {
    write(path)?;
    let body = std::fs::read_to_string(path).map_err(Error::from)?;
    let header = format!(
        "# isra {} config {} seed {}\n",
        prov.version, prov.config_hash, prov.seed
    );
    std::fs::write(path, header + &body).map_err(Error::from)?;
    Ok(())
}

fn solve(cfg: &Config, out: &Path, prov: &Provenance) -> Result<(), Failure> {
    let r = &cfg.run;
    let schedule = r.schedule()?;
    let seeds = SeedStream::new(cfg.seed);
    let search = cfg.selection.search()?;
    let go = |problem: &Problem| -> isra::Result<RaTrace> {
        let start = Decision::uniform(problem.loss.theta_dim());
        match r.algorithm {
            Algorithm::Plain => {
                run_plain_ra(problem, r.beta, &schedule, &seeds, &start, &cfg.solver)
            }
            Algorithm::Vanilla => {
                run_vanilla_ra(problem, r.beta, r.h, &schedule, &seeds, &start, &cfg.solver)
            }
            Algorithm::Enhanced => run_enhanced_ra(
                problem,
                r.beta,
                r.h,
                &search,
                &schedule,
                &seeds,
                &start,
                &cfg.solver,
            ),
        }
    };
    let trace = match r.problem {
        ProblemKind::Linear => {
            let model = cfg.model.build()?;
            let loss = LinearLoss::new(model.dim())?;
            go(&Problem {
                model: &model,
                loss: &loss,
                constraint: &ConstraintSet::SimplexSum,
            })?
        }
        ProblemKind::Credit => {
            let spec = cfg.credit.build()?;
            let constraint = ConstraintSet::ReturnFloor {
                returns: spec.returns(),
                min_return: spec.min_return,
            };
            let loss = CreditLoss::new(spec.clone());
            go(&Problem {
                model: &spec.factors,
                loss: &loss,
                constraint: &constraint,
            })?
        }
    };
    println!("{}", trace.summary());
    std::fs::create_dir_all(out).map_err(Error::from)?;
    write_with_header(&out.join("trace.csv"), prov, |p| trace.write_csv(p))?;
    let json = serde_json::json!({ "provenance": prov, "config": cfg, "trace": trace });
    std::fs::write(
        out.join("trace.json"),
        serde_json::to_string_pretty(&json).map_err(Error::from)?,
    )
    .map_err(Error::from)?;
    if !trace.all_converged {
        log::warn!("some stages stopped before reaching their tolerance");
    }
    Ok(())
}

fn validate(cfg: &Config) -> Result<(), Failure> {
    let report = validate_schedule(&cfg.run.schedule()?, cfg.solver.method.convergence_class());
    println!("{report}");
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Validation(
            "schedule fails the sample-size conditions".into(),
        ))
    }
}

fn experiment(cfg: &Config, name: &str, out: &Path, prov: Provenance) -> Result<(), Failure> {
    let suites: Vec<Suite> = if name == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![name.parse::<Suite>()?]
    };
    let mut runner = Runner::new(cfg, out, prov)?;
    runner.run(&suites)?;
    info!("results written to {}", out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Failure::Validation("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure::Validation(e.to_string()))?;
    }
    let cfg = load(cli)?;
    let prov = Provenance::new(&cfg, git_revision());
    match &cli.command {
        Command::CheckTransform => check_transform(&cfg),
        Command::Solve => solve(&cfg, &cli.out, &prov),
        Command::Experiment { name } => experiment(&cfg, name, &cli.out, prov),
        Command::ValidateSchedule => validate(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_default_env()
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
    }
}
