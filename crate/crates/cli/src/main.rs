use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use seqgrasp_core::dataset::{
    export_diffusion_set, generate, plan_sequences, read_records, revalidate, stats, ObjectPool, PlanParams,
    RecordHeader, RecordWriter,
};
use seqgrasp_core::geometry::{default_bps_basis, DEFAULT_RESOLUTION};
use seqgrasp_core::hand::builtin;
use seqgrasp_core::sampler::{AcceptanceRule, SamplerParams, SequenceParams};
use seqgrasp_core::validation::ValidationParams;
use seqgrasp_core::{load_hand_spec, Error, HandSpec};

#[derive(Parser)]
#[command(name = "seqgrasp", version, about = "Sequential multi-object grasp synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate grasp sequences over an object directory.
    Generate(GenerateArgs),
    /// Re-validate a record file and print pass/fail counts.
    Validate(ValidateArgs),
    /// Print per-opposition-space and per-length success tables.
    Stats(StatsArgs),
    /// Build (or refresh) the signed-distance caches of an object directory.
    BuildSdf(BuildSdfArgs),
    /// Export retained grasps as a diffusion training set.
    Export(ExportArgs),
}

#[derive(Args)]
struct HandArgs {
    /// Hand description (TOML), or `builtin:toy_gripper` / `builtin:reference`.
    #[arg(long)]
    hand: String,
}

#[derive(Args)]
struct ObjectArgs {
    /// Directory of OBJ/STL meshes; grids are cached in `.sdf-cache` inside it.
    #[arg(long)]
    objects: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    sdf_res: usize,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    hand: HandArgs,
    #[command(flatten)]
    objects: ObjectArgs,
    /// Record file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Number of sequences to run.
    #[arg(long, default_value_t = 4)]
    sequences: usize,
    #[arg(long, default_value_t = 4)]
    objects_per_set: usize,
    /// Orderings generated per object set.
    #[arg(long, default_value_t = 4)]
    perms: usize,
    /// Rescale objects so the longest bounding-box edge is drawn from LO,HI (m).
    #[arg(long, value_parser = parse_range)]
    extent: Option<(f64, f64)>,
    #[arg(long, default_value_t = 64)]
    chains: usize,
    #[arg(long, default_value_t = 6000)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    p_accept: f64,
    /// Accept when E(proposal)/E(current) >= u instead of the Metropolis rule.
    #[arg(long)]
    compat_eq2_acceptance: bool,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ValidateArgs {
    records: PathBuf,
    #[command(flatten)]
    hand: HandArgs,
    #[command(flatten)]
    objects: ObjectArgs,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct StatsArgs {
    records: PathBuf,
}

#[derive(Args)]
struct BuildSdfArgs {
    #[command(flatten)]
    objects: ObjectArgs,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ExportArgs {
    records: PathBuf,
    #[command(flatten)]
    hand: HandArgs,
    #[command(flatten)]
    objects: ObjectArgs,
    /// Training file to write.
    #[arg(long)]
    out: PathBuf,
    /// Seed of the train/test object split.
    #[arg(long)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::HandSpec { .. } | Error::HandSpecParse(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if !(lo > 0.0 && lo <= hi) {
        return Err("need 0 < LO <= HI".into());
    }
    Ok((lo, hi))
}

fn load_hand(spec: &str) -> Result<Arc<HandSpec>, Failure> {
    let hand = match spec {
        "builtin:toy_gripper" => builtin::toy_gripper(),
        "builtin:reference" => builtin::reference_hand(),
        path => {
            if !Path::new(path).is_file() {
                return Err(Failure::Usage(format!("hand file not found: {path}")));
            }
            load_hand_spec(path).map_err(|e| Failure::Usage(format!("{path}: {e}")))?
        }
    };
    Ok(Arc::new(hand))
}

fn load_pool(args: &ObjectArgs) -> Result<ObjectPool, Failure> {
    if !args.objects.is_dir() {
        return Err(Failure::Usage(format!("object directory not found: {}", args.objects.display())));
    }
    let load = ObjectPool::load(&args.objects, args.sdf_res)?;
    for (path, why) in &load.failures {
        log::warn!("{}: {why}", path.display());
    }
    Ok(load.pool)
}

fn set_jobs(jobs: Option<usize>) -> CliResult {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Failure::Usage("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> CliResult {
    set_jobs(a.jobs)?;
    let hand = load_hand(&a.hand.hand)?;
    let sampler = SamplerParams {
        steps: a.steps,
        chains: a.chains,
        p_accept: a.p_accept,
        acceptance: if a.compat_eq2_acceptance {
            AcceptanceRule::EnergyRatio
        } else {
            AcceptanceRule::Metropolis
        },
        ..Default::default()
    };
    sampler.check()?;
    let params = SequenceParams {
        sampler,
        validation: ValidationParams::default(),
    };
    if a.perms == 0 {
        return Err(Failure::Usage("--perms must be positive".into()));
    }
    let pool = load_pool(&a.objects)?;
    let plan_params = PlanParams {
        sets: a.sequences.div_ceil(a.perms),
        objects_per_set: a.objects_per_set,
        perms_per_set: a.perms,
        extent_range: a.extent,
    };
    let mut plan = if a.sequences == 0 {
        Vec::new()
    } else {
        plan_sequences(&pool, &plan_params, a.seed)?
    };
    plan.truncate(a.sequences);
    log::info!("{} sequences over {} objects", plan.len(), pool.len());
    let mut writer = RecordWriter::create(&a.out, &RecordHeader::new(&hand, a.seed))?;
    let summary = generate(&plan, &pool, &hand, &params, a.seed, &mut writer)?;
    println!("{summary}");
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> CliResult {
    set_jobs(a.jobs)?;
    let hand = load_hand(&a.hand.hand)?;
    let file = read_records(&a.records)?;
    if file.skipped_tail {
        eprintln!("warning: skipped a truncated record at the end of {}", a.records.display());
    }
    if let Some(h) = &file.header {
        if h.dof != hand.dof() {
            return Err(Failure::Data(format!(
                "records were generated with {} joints, hand {} has {}",
                h.dof,
                hand.name,
                hand.dof()
            )));
        }
    }
    let pool = if file.records.is_empty() {
        ObjectPool::default()
    } else {
        load_pool(&a.objects)?
    };
    let s = revalidate(&file.records, &pool, &hand, &ValidationParams::default())?;
    println!("sequences  {}", s.sequences);
    println!("grasps     {}", s.grasps);
    println!("passed     {}", s.passed);
    println!("failed     {}", s.failed);
    if s.mismatched > 0 {
        eprintln!("warning: {} grasps disagree with their stored verdict", s.mismatched);
    }
    if s.skipped_sequences > 0 {
        eprintln!("warning: {} sequences reference objects not in the pool", s.skipped_sequences);
    }
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> CliResult {
    let file = read_records(&a.records)?;
    if file.skipped_tail {
        eprintln!("warning: skipped a truncated record at the end of {}", a.records.display());
    }
    println!("{}", stats(&file.records));
    Ok(())
}

fn cmd_build_sdf(a: BuildSdfArgs) -> CliResult {
    set_jobs(a.jobs)?;
    if !a.objects.objects.is_dir() {
        return Err(Failure::Usage(format!(
            "object directory not found: {}",
            a.objects.objects.display()
        )));
    }
    let load = ObjectPool::load(&a.objects.objects, a.objects.sdf_res)?;
    println!("objects  {}", load.pool.len());
    println!("built    {}", load.rebuilt);
    println!("cached   {}", load.pool.len() - load.rebuilt);
    println!("failed   {}", load.failures.len());
    for (path, why) in &load.failures {
        println!("  {}: {why}", path.display());
    }
    if load.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Data(format!("{} meshes failed", load.failures.len())))
    }
}

fn cmd_export(a: ExportArgs) -> CliResult {
    let hand = load_hand(&a.hand.hand)?;
    let file = read_records(&a.records)?;
    if file.skipped_tail {
        eprintln!("warning: skipped a truncated record at the end of {}", a.records.display());
    }
    let pool = load_pool(&a.objects)?;
    let f = std::fs::File::create(&a.out).map_err(|e| Failure::Data(format!("{}: {e}", a.out.display())))?;
    let mut w = std::io::BufWriter::new(f);
    let s = export_diffusion_set(&file.records, &pool, &hand, &default_bps_basis(), a.seed, &mut w)?;
    std::io::Write::flush(&mut w).map_err(|e| Failure::Data(e.to_string()))?;
    println!("rows          {}", s.rows);
    println!("train rows    {} ({} objects)", s.train_rows, s.train_objects);
    println!("test rows     {} ({} objects)", s.test_rows, s.test_objects);
    println!("skipped       {}", s.skipped);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Stats(a) => cmd_stats(a),
        Command::BuildSdf(a) => cmd_build_sdf(a),
        Command::Export(a) => cmd_export(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
