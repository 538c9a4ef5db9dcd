//! `reassign`: generate instances, solve the offline LP, simulate policies
//! and run the verification checks.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use reassign::analysis::{verify_instance, write_verification, VerificationRow};
use reassign::fixtures;
use reassign::generate::{gen_synthetic, gen_tiny, SyntheticParams, TinyParams};
use reassign::ingest::{ingest_trip_records, read_trip_records, TaxiParams};
use reassign::lp::{solve_instance, LpSolution, LpSolutionDoc};
use reassign::policy::{PolicyKind, Prepared};
use reassign::sim::{run_policies, write_reports};
use reassign::{normalize_instance, validate_instance, Instance};

/// Exit status when a verification check fails.
const EXIT_CHECK_FAILED: u8 = 1;
/// Exit status for unreadable input, solver failures and similar.
const EXIT_ERROR: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "reassign", version, about = "Online task assignment with reusable agents")]
struct Cli {
    /// Print the command tree as JSON and exit.
    #[arg(long, global = true)]
    help_json: bool,

    /// Worker threads for trials and sweeps (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic, tiny random or built-in fixture instance.
    Gen(GenArgs),
    /// Build an instance from a taxi trip CSV.
    Ingest(IngestArgs),
    /// Solve the offline LP and write the solution.
    Solve(SolveArgs),
    /// Monte Carlo evaluation of policies.
    Simulate(SimulateArgs),
    /// Run the structural and bound checks.
    Verify(VerifyArgs),
    /// Solve, simulate and optionally verify in one go.
    Run(RunArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Fixture {
    /// Single agent, rare valuable last arrival (eps = 0.1).
    DelayedReward,
    /// LP-rounding trap with M = 100.
    Trap,
    /// Two-slot hardness pair (eps = 0.1).
    ProphetPair,
}

impl Fixture {
    fn build(self) -> Instance {
        match self {
            Fixture::DelayedReward => fixtures::delayed_reward(0.1),
            Fixture::Trap => fixtures::lp_rounding_trap(100.0),
            Fixture::ProphetPair => fixtures::prophet_pair(0.1),
        }
    }
}

#[derive(Args, Debug)]
struct SourceArgs {
    /// Instance JSON file.
    #[arg(long, conflicts_with_all = ["params", "fixture"])]
    instance: Option<PathBuf>,
    /// Synthetic generator parameters (JSON); omitted fields take defaults.
    #[arg(long, conflicts_with = "fixture")]
    params: Option<PathBuf>,
    /// Built-in fixture.
    #[arg(long, value_enum)]
    fixture: Option<Fixture>,
}

impl SourceArgs {
    /// Loads the instance. With no source given, synthetic defaults are used.
    fn load(&self, seed: u64) -> Result<Instance> {
        if let Some(path) = &self.instance {
            return read_instance(path);
        }
        if let Some(f) = self.fixture {
            return Ok(f.build());
        }
        let params = synthetic_params(self.params.as_deref(), seed)?;
        Ok(gen_synthetic(&params)?)
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Synthetic generator parameters (JSON).
    #[arg(long, conflicts_with_all = ["tiny", "fixture"])]
    params: Option<PathBuf>,
    /// Draw a tiny random instance instead.
    #[arg(long, conflicts_with = "fixture")]
    tiny: bool,
    /// Write a built-in fixture.
    #[arg(long, value_enum)]
    fixture: Option<Fixture>,
    /// Generator seed; overrides any seed in the parameter file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Trip records CSV.
    #[arg(long)]
    trips: PathBuf,
    /// Ingestion parameters (JSON); omitted fields take defaults.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// LP solution JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimArgs {
    /// Comma-separated policies.
    #[arg(long, value_delimiter = ',', default_value = "proposed,nadap,greedy,random")]
    policies: Vec<PolicyKind>,
    /// Trials per policy.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    /// Master seed for arrivals and policy randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Precomputed LP solution for the instance.
    #[arg(long)]
    solution: Option<PathBuf>,
    #[command(flatten)]
    sim: SimArgs,
    /// Report CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Check this many tiny random instances instead of one instance.
    #[arg(long, conflicts_with_all = ["instance", "params", "fixture"])]
    tiny: Option<u64>,
    /// Also compare against the exact offline optimum where it is tractable.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Verification CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// Report CSV. The LP solution and verification report are written next
    /// to it unless given explicitly.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lp_out: Option<PathBuf>,
    /// Run the verification checks as well.
    #[arg(long)]
    verify: bool,
    #[arg(long)]
    verify_out: Option<PathBuf>,
    /// Include the offline-optimum comparison in verification.
    #[arg(long, requires = "verify")]
    oracle: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    if cli.help_json {
        println!("{}", serde_json::to_string_pretty(&help_json(&Cli::command())).unwrap());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        Cli::command().print_help().ok();
        return ExitCode::from(EXIT_ERROR);
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    }
    match dispatch(command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

/// Runs one subcommand. `Ok(false)` means a verification check failed.
fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Gen(a) => cmd_gen(&a).map(|_| true),
        Command::Ingest(a) => cmd_ingest(&a).map(|_| true),
        Command::Solve(a) => cmd_solve(&a).map(|_| true),
        Command::Simulate(a) => cmd_simulate(&a).map(|_| true),
        Command::Verify(a) => cmd_verify(&a),
        Command::Run(a) => cmd_run(&a),
    }
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(0);
    let inst = if let Some(f) = a.fixture {
        f.build()
    } else if a.tiny {
        gen_tiny(seed, &TinyParams::default())
    } else {
        let mut params = synthetic_params(a.params.as_deref(), 0)?;
        if let Some(s) = a.seed {
            params.seed = s;
        }
        gen_synthetic(&params)?
    };
    write_instance(&a.out, &inst)
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let params: TaxiParams = match &a.params {
        Some(p) => read_json(p)?,
        None => TaxiParams::default(),
    };
    let file = File::open(&a.trips).with_context(|| format!("opening {}", a.trips.display()))?;
    let records = read_trip_records(BufReader::new(file))?;
    let inst = ingest_trip_records(&records, &params, a.seed)?;
    write_instance(&a.out, &inst)
}

fn cmd_solve(a: &SolveArgs) -> Result<()> {
    let inst = prepare_instance(a.source.load(a.seed)?)?;
    let (_, sol) = solve_instance(&inst)?;
    write_solution(&a.out, &sol, &inst)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let inst = a.source.load(a.sim.seed)?;
    let prep = match &a.solution {
        Some(path) => {
            let inst = prepare_instance(inst)?;
            let doc: LpSolutionDoc = read_json(path)?;
            let sol = LpSolution::from_document(&doc, &inst)?;
            let model = reassign::lp::build_offline_lp(&inst)?;
            let resid = model.max_violation(&sol.x);
            ensure!(
                resid <= reassign::lp::FEAS_TOL,
                "solution in {} violates the LP by {resid:e}",
                path.display()
            );
            Prepared::with_solution(inst, model, sol)?
        }
        None => Prepared::new(&inst)?,
    };
    simulate_to(&a.out, &prep, &a.sim)
}

fn cmd_verify(a: &VerifyArgs) -> Result<bool> {
    let instances: Vec<(String, Instance)> = match a.tiny {
        Some(n) => (0..n)
            .map(|i| {
                let seed = a.seed.wrapping_add(i);
                (format!("tiny-{seed}"), gen_tiny(seed, &TinyParams::default()))
            })
            .collect(),
        None => vec![("instance".to_string(), a.source.load(a.seed)?)],
    };
    let rows: Vec<Vec<VerificationRow>> = instances
        .into_par_iter()
        .map(|(id, inst)| {
            let inst = prepare_instance(inst)?;
            let (_, sol) = solve_instance(&inst).with_context(|| format!("solving {id}"))?;
            Ok(verify_instance(&inst, &id, &sol, a.oracle))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<VerificationRow> = rows.into_iter().flatten().collect();
    write_rows(&a.out, &rows)?;
    Ok(report_failures(&rows))
}

fn cmd_run(a: &RunArgs) -> Result<bool> {
    let prep = Prepared::new(&a.source.load(a.sim.seed)?)?;
    let lp_out = a.lp_out.clone().unwrap_or_else(|| sibling(&a.out, "lp.json"));
    write_solution(&lp_out, &prep.lp, &prep.instance)?;
    simulate_to(&a.out, &prep, &a.sim)?;
    if !a.verify {
        return Ok(true);
    }
    let rows = verify_instance(&prep.instance, "instance", &prep.lp, a.oracle);
    let verify_out = a.verify_out.clone().unwrap_or_else(|| sibling(&a.out, "verify.csv"));
    write_rows(&verify_out, &rows)?;
    Ok(report_failures(&rows))
}

fn simulate_to(out: &Path, prep: &Prepared, sim: &SimArgs) -> Result<()> {
    ensure!(!sim.policies.is_empty(), "at least one policy is required");
    let reports = run_policies(prep, &sim.policies, sim.trials, sim.seed)?;
    write_reports(&reports, create(out)?)?;
    Ok(())
}

/// Validates and applies default normalization.
fn prepare_instance(inst: Instance) -> Result<Instance> {
    let violations = validate_instance(&inst);
    if !violations.is_empty() {
        let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
        bail!("invalid instance: {}", msg.join("; "));
    }
    Ok(normalize_instance(&inst))
}

fn report_failures(rows: &[VerificationRow]) -> bool {
    let failed: Vec<&VerificationRow> = rows.iter().filter(|r| !r.pass).collect();
    for r in &failed {
        eprintln!("check failed: {} on {} (slack {:e})", r.check, r.instance, r.slack);
    }
    failed.is_empty()
}

fn synthetic_params(path: Option<&Path>, seed: u64) -> Result<SyntheticParams> {
    match path {
        Some(p) => read_json(p),
        None => Ok(SyntheticParams { seed, ..SyntheticParams::default() }),
    }
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_instance(path: &Path) -> Result<Instance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Instance::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_instance(path: &Path, inst: &Instance) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", inst.to_json()?)?;
    w.flush()?;
    Ok(())
}

fn write_solution(path: &Path, sol: &LpSolution, inst: &Instance) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &sol.to_document(inst))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_rows(path: &Path, rows: &[VerificationRow]) -> Result<()> {
    write_verification(rows, create(path)?)?;
    Ok(())
}

fn help_json(cmd: &clap::Command) -> serde_json::Value {
    let args: Vec<serde_json::Value> = cmd
        .get_arguments()
        .filter(|a| !a.is_hide_set())
        .map(|a| {
            serde_json::json!({
                "name": a.get_id().as_str(),
                "long": a.get_long(),
                "help": a.get_help().map(ToString::to_string),
                "required": a.is_required_set(),
                "takes_value": a.get_action().takes_values(),
                "default": a.get_default_values().iter().map(|v| v.to_string_lossy()).collect::<Vec<_>>(),
                "values": a.get_possible_values().iter().map(|v| v.get_name().to_string()).collect::<Vec<_>>(),
            })
        })
        .collect();
    let subcommands: Vec<serde_json::Value> = cmd.get_subcommands().filter(|c| c.get_name() != "help").map(help_json).collect();
    serde_json::json!({
        "name": cmd.get_name(),
        "version": cmd.get_version(),
        "about": cmd.get_about().map(ToString::to_string),
        "args": args,
        "subcommands": subcommands,
    })
}
