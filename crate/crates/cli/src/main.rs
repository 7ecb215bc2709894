use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use trajverify::export::{DEFAULT_OUTPUT_FRAMES, DEFAULT_TRACK_FPS};
use trajverify::harness::{
    build_verifier, cmd_export, cmd_make_synthetic, cmd_run, cmd_verify_only, exit, exit_code, write_json, BackendKind,
    CassetteUse, ConfigFile, GeneratorMode, RunConfig, VerifierKind,
};
use trajverify::search::SearchConfig;
use trajverify::sweep::{k_sweep, sweep_csv, SweepConfig, DEFAULT_CLEAN_FRACTION};
use trajverify::synthetic::{Shape, SyntheticSceneSpec};
use trajverify::verify::LocalThresholds;
use trajverify::Error;

/// Like `println!`, but a closed stdout (e.g. `| head`) is ignored instead of panicking.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "trajverify", version, about = "Verifier-guided trajectory search over composited video sketches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan, search and export one scene.
    Run(RunArgs),
    /// Write a seeded synthetic scene bundle.
    MakeSynthetic(SyntheticArgs),
    /// Mean selected-candidate score over seeds for several K.
    KSweep(SweepArgs),
    /// Score one stored candidate.
    VerifyOnly(VerifyArgs),
    /// Rebuild the dense track file from a run trace.
    Export(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Scripted,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifierArg {
    Local,
    Remote,
}

impl From<VerifierArg> for VerifierKind {
    fn from(v: VerifierArg) -> Self {
        match v {
            VerifierArg::Local => VerifierKind::Local,
            VerifierArg::Remote => VerifierKind::Remote,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Square,
    Disc,
}

#[derive(Args)]
struct RemoteArgs {
    /// Replay recorded traffic from this directory instead of calling endpoints.
    #[arg(long, value_name = "DIR", conflicts_with = "record")]
    cassette: Option<PathBuf>,
    /// Call live endpoints and record the traffic into this directory.
    #[arg(long, value_name = "DIR")]
    record: Option<PathBuf>,
}

impl RemoteArgs {
    fn cassettes(&self) -> CassetteUse {
        match (&self.cassette, &self.record) {
            (Some(d), _) => CassetteUse::Replay(d.clone()),
            (None, Some(d)) => CassetteUse::Record(d.clone()),
            (None, None) => CassetteUse::Live,
        }
    }
}

#[derive(Args)]
struct GeneratorArgs {
    /// Write the generator request payload to disk instead of sending it.
    #[arg(long, conflicts_with = "generate")]
    dry_run: bool,
    /// Submit the track to the generator endpoint (GENERATOR_API_URL).
    #[arg(long)]
    generate: bool,
}

impl GeneratorArgs {
    fn mode(&self) -> Option<GeneratorMode> {
        if self.dry_run {
            Some(GeneratorMode::DryRun)
        } else if self.generate {
            Some(GeneratorMode::Remote)
        } else {
            None
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Scene bundle directory.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    prompt: Option<String>,
    /// Planner and verifier pair: scripted planner with the local verifier, or remote models.
    #[arg(long, value_enum)]
    backend: Option<Backend>,
    /// Override the verifier chosen by --backend.
    #[arg(long, value_enum)]
    verifier: Option<VerifierArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Candidates per round.
    #[arg(long)]
    k: Option<usize>,
    /// Quality threshold on the combined score.
    #[arg(long)]
    tau: Option<f64>,
    /// Maximum search rounds per phase.
    #[arg(long)]
    rounds: Option<u32>,
    /// Output root; the run goes to <out>/<run-id>.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
    /// Points per exported track.
    #[arg(long)]
    frames: Option<usize>,
    /// Skip the GIF previews of selected sketches.
    #[arg(long)]
    no_gif: bool,
    #[command(flatten)]
    generator: GeneratorArgs,
    #[command(flatten)]
    remote: RemoteArgs,
}

#[derive(Args)]
struct SyntheticArgs {
    /// Bundle directory to write.
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the spec file's seed, or 0.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON spec; flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    canvas: Option<u32>,
    #[arg(long, value_enum)]
    shape: Option<ShapeArg>,
    #[arg(long)]
    phases: Option<usize>,
    /// Leave out the floating shelf.
    #[arg(long)]
    no_obstacle: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated K values.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 5, 8])]
    ks: Vec<usize>,
    /// Number of seeds per K.
    #[arg(long, default_value_t = 200)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed_start: u64,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    rounds: Option<u32>,
    /// Share of clean candidates drawn by the scripted planner.
    #[arg(long, default_value_t = DEFAULT_CLEAN_FRACTION)]
    clean_fraction: f64,
    /// Also write the CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Candidate directory (with trajectory.json and optional frames/) or a trajectory JSON file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Plan phase whose goal is checked (1-based).
    #[arg(long, default_value_t = 1)]
    phase: usize,
    #[arg(long, value_enum, default_value = "local")]
    verifier: VerifierArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    remote: RemoteArgs,
}

#[derive(Args)]
struct ExportArgs {
    /// trace.json of a run.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_OUTPUT_FRAMES)]
    frames: usize,
    #[arg(long, default_value_t = DEFAULT_TRACK_FPS)]
    fps: f64,
    #[command(flatten)]
    generator: GeneratorArgs,
    #[command(flatten)]
    remote: RemoteArgs,
}

fn run(args: RunArgs) -> Result<u8, Error> {
    let mut config = RunConfig::new(PathBuf::new(), "out");
    if let Some(path) = &args.config {
        config.apply_file(&ConfigFile::load(path)?);
    }
    if let Some(s) = args.scene {
        config.scene = s;
    }
    if config.scene.as_os_str().is_empty() {
        return Err(Error::Config("--scene is required (or `scene` in --config)".into()));
    }
    if let Some(p) = args.prompt {
        config.prompt = Some(p);
    }
    if let Some(b) = args.backend {
        let (p, v) = match b {
            Backend::Scripted => (BackendKind::Scripted, VerifierKind::Local),
            Backend::Remote => (BackendKind::Remote, VerifierKind::Remote),
        };
        config.planner = p;
        config.verifier = v;
    }
    if let Some(v) = args.verifier {
        config.verifier = v.into();
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(k) = args.k {
        config.search.k = k;
    }
    if let Some(t) = args.tau {
        config.search.tau = t;
    }
    if let Some(r) = args.rounds {
        config.search.max_rounds = r;
    }
    if let Some(o) = args.out {
        config.out_dir = o;
    }
    if let Some(id) = args.run_id {
        config.run_id = Some(id);
    }
    if let Some(f) = args.frames {
        config.output_frames = f;
    }
    if args.no_gif {
        config.gif = false;
    }
    if let Some(m) = args.generator.mode() {
        config.generator = m;
    }
    config.cassettes = args.remote.cassettes();

    let summary = cmd_run(&config)?;
    for p in &summary.phases {
        outln!(
            "phase {}: candidate {} combined {:.4} after {} round(s){}",
            p.phase,
            p.selected,
            p.combined,
            p.rounds,
            if p.below_threshold { " [below threshold]" } else { "" }
        );
    }
    outln!("track: {}", summary.run_dir.join("track.json").display());
    if let Some(job) = &summary.job {
        outln!("generator: {job}");
    }
    let stages: Vec<String> = summary.timings.iter().map(|(name, secs)| format!("{name} {secs:.2} s")).collect();
    outln!("wall time: {}", stages.join(", "));
    if summary.below_threshold {
        eprintln!("warning: best-effort result, some phase never reached tau = {}", config.search.tau);
    }
    Ok(summary.exit_code())
}

fn make_synthetic(args: SyntheticArgs) -> Result<u8, Error> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => SyntheticSceneSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(c) = args.canvas {
        spec.canvas = c;
    }
    if let Some(s) = args.shape {
        spec.shape = match s {
            ShapeArg::Square => Shape::Square,
            ShapeArg::Disc => Shape::Disc,
        };
    }
    if let Some(p) = args.phases {
        spec.phases = p;
    }
    if args.no_obstacle {
        spec.obstacle = None;
    }
    let scene = cmd_make_synthetic(&spec, &args.out)?;
    outln!(
        "wrote {} ({}x{}, {} object(s))",
        args.out.display(),
        scene.width,
        scene.height,
        scene.objects.len()
    );
    Ok(exit::OK)
}

/// Bulk stdout output; a closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn sweep(args: SweepArgs) -> Result<u8, Error> {
    let seeds: Vec<u64> = (args.seed_start..args.seed_start + args.seeds).collect();
    let mut config = SweepConfig::new(args.ks, seeds);
    config.clean_fraction = args.clean_fraction;
    if let Some(t) = args.tau {
        config.search.tau = t;
    }
    if let Some(r) = args.rounds {
        config.search.max_rounds = r;
    }
    config.search.validate()?;
    let rows = k_sweep(&config)?;
    let csv = sweep_csv(&rows);
    emit(&csv);
    if let Some(path) = &args.out {
        std::fs::write(path, &csv).map_err(|e| Error::io(path, e))?;
    }
    if let [first, .., last] = rows.as_slice() {
        eprintln!(
            "mean score {:.4} at K={} -> {:.4} at K={}",
            first.mean_score, first.k, last.mean_score, last.k
        );
    }
    Ok(exit::OK)
}

fn verify_only(args: VerifyArgs) -> Result<u8, Error> {
    let mut verifier = build_verifier(args.verifier.into(), LocalThresholds::default(), &args.remote.cassettes())?;
    let report = cmd_verify_only(&args.input, &args.scene, args.phase, verifier.as_mut(), &SearchConfig::default())?;
    match &args.out {
        Some(path) => write_json(path, &report)?,
        None => emit(&format!("{}\n", serde_json::to_string_pretty(&report)?)),
    }
    Ok(exit::OK)
}

fn export(args: ExportArgs) -> Result<u8, Error> {
    let mode = args.generator.mode().unwrap_or(GeneratorMode::Off);
    let job = cmd_export(
        &args.trace,
        &args.scene,
        &args.out,
        args.frames,
        args.fps,
        mode,
        &args.remote.cassettes(),
    )?;
    outln!("track: {}", args.out.display());
    if let Some(job) = job {
        outln!("generator: {job}");
    }
    Ok(exit::OK)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG } else { exit::OK });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::MakeSynthetic(a) => make_synthetic(a),
        Command::KSweep(a) => sweep(a),
        Command::VerifyOnly(a) => verify_only(a),
        Command::Export(a) => export(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
