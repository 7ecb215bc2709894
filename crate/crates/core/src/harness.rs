//! Command implementations behind the CLI: run configuration, output layout, and exit codes.
//!
//! A run writes
//!
//! ```text
//! <out>/<run-id>/plan.json
//! <out>/<run-id>/phase_<i>/candidate_<k>/{frames/, trajectory.json, report.json}
//! <out>/<run-id>/selected/phase_<i>/{frame_000.png.., sketch.gif}
//! <out>/<run-id>/track.json
//! <out>/<run-id>/trace.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::info;

use crate::error::{Error, Result};
use crate::export::{
    dense_tracks, read_track_file, submit_generation, write_track_file, GeneratorTarget, JobHandle, TrackMeta,
    DEFAULT_OUTPUT_FRAMES, DEFAULT_TRACK_FPS,
};
use crate::planner::{parse_plan_value, PlannerBackend, RemotePlanner, ScriptedMode, ScriptedPlanner, TrajectoryCandidate};
use crate::render::{decode_png_sequence, encode_sketch, render_sketch_with, SketchFormat, VideoSketch};
use crate::scene::{load_scene_bundle, save_scene_bundle, SceneBundle, DEFAULT_PLAN_FRAMES};
use crate::search::{run_pipeline, PipelineTrace, SearchConfig, SearchObserver};
use crate::synthetic::{make_synthetic, SyntheticSceneSpec};
use crate::transport::{Cassette, CassetteTransport, EndpointConfig, HttpTransport, ModelClient, Transport};
use crate::verify::{LocalThresholds, LocalVerifier, RemoteVerifier, VerificationReport, Verifier, VerifyInput};

pub const PLANNER_ENV: &str = "PLANNER";
pub const VERIFIER_ENV: &str = "VERIFIER";
pub const GENERATOR_ENV: &str = "GENERATOR";

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    /// Completed, but some phase never reached the quality threshold.
    pub const BEST_EFFORT: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const IO: u8 = 4;
    pub const SCENE: u8 = 5;
    pub const SCHEMA: u8 = 6;
    pub const TRANSPORT: u8 = 7;
    pub const AUTH: u8 = 8;
    pub const PARSE: u8 = 9;
    /// Plan/track consistency failures and empty candidate sets.
    pub const PLAN: u8 = 10;
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Weight(_) => exit::CONFIG,
        Error::Io { .. } | Error::Codec(_) => exit::IO,
        Error::Scene(_) => exit::SCENE,
        Error::Schema(_) => exit::SCHEMA,
        Error::Transport(_) => exit::TRANSPORT,
        Error::Auth(_) => exit::AUTH,
        Error::Parse(_) | Error::Json(_) => exit::PARSE,
        Error::EmptyCandidateSet | Error::BadLength(_) | Error::LengthMismatch(_) | Error::ObjectMismatch(_) => exit::PLAN,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierKind {
    Local,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    Off,
    DryRun,
    Remote,
}

/// How remote traffic is served.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CassetteUse {
    Live,
    /// Replay `planner.json` / `verifier.json` / `generator.json` from this directory.
    Replay(PathBuf),
    /// Send live requests and record them into this directory.
    Record(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scene: PathBuf,
    pub prompt: Option<String>,
    pub planner: BackendKind,
    pub verifier: VerifierKind,
    pub seed: u64,
    pub search: SearchConfig,
    pub thresholds: LocalThresholds,
    pub out_dir: PathBuf,
    pub run_id: Option<String>,
    pub generator: GeneratorMode,
    pub cassettes: CassetteUse,
    pub output_frames: usize,
    pub track_fps: f64,
    pub gif: bool,
}

impl RunConfig {
    pub fn new(scene: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            scene: scene.into(),
            prompt: None,
            planner: BackendKind::Scripted,
            verifier: VerifierKind::Local,
            seed: 0,
            search: SearchConfig::default(),
            thresholds: LocalThresholds::default(),
            out_dir: out_dir.into(),
            run_id: None,
            generator: GeneratorMode::Off,
            cassettes: CassetteUse::Live,
            output_frames: DEFAULT_OUTPUT_FRAMES,
            track_fps: DEFAULT_TRACK_FPS,
            gif: true,
        }
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| format!("seed-{}", self.seed))
    }

    /// Overlay the fields present in a JSON config file.
    pub fn apply_file(&mut self, file: &ConfigFile) {
        if let Some(v) = &file.scene {
            self.scene = v.clone();
        }
        if let Some(v) = &file.prompt {
            self.prompt = Some(v.clone());
        }
        if let Some(v) = file.backend {
            self.planner = v;
            self.verifier = match v {
                BackendKind::Scripted => VerifierKind::Local,
                BackendKind::Remote => VerifierKind::Remote,
            };
        }
        if let Some(v) = file.verifier {
            self.verifier = v;
        }
        if let Some(v) = file.seed {
            self.seed = v;
        }
        if let Some(v) = file.search {
            self.search = v;
        }
        if let Some(v) = file.thresholds {
            self.thresholds = v;
        }
        if let Some(v) = &file.out {
            self.out_dir = v.clone();
        }
        if let Some(v) = &file.run_id {
            self.run_id = Some(v.clone());
        }
        if let Some(v) = file.generator {
            self.generator = v;
        }
        if let Some(v) = file.output_frames {
            self.output_frames = v;
        }
        if let Some(v) = file.track_fps {
            self.track_fps = v;
        }
        if let Some(v) = file.gif {
            self.gif = v;
        }
    }
}

/// JSON run configuration; every field is optional and command-line flags take precedence.
/// Credentials are never read from here, only from the environment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scene: Option<PathBuf>,
    pub prompt: Option<String>,
    pub backend: Option<BackendKind>,
    pub verifier: Option<VerifierKind>,
    pub seed: Option<u64>,
    pub search: Option<SearchConfig>,
    pub thresholds: Option<LocalThresholds>,
    pub out: Option<PathBuf>,
    pub run_id: Option<String>,
    pub generator: Option<GeneratorMode>,
    pub output_frames: Option<usize>,
    pub track_fps: Option<f64>,
    pub gif: Option<bool>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn cassette_file(dir: &Path, role: &str) -> PathBuf {
    dir.join(format!("{}.json", role.to_lowercase()))
}

/// Endpoint for a replayed role: environment first, then whatever the cassette recorded.
fn replay_endpoint(prefix: &str, cassette: &Cassette) -> Result<EndpointConfig> {
    let env = |k: &str| std::env::var(format!("{prefix}_{k}")).ok().filter(|s| !s.is_empty());
    let first = cassette.interactions.first();
    let url = env("API_URL")
        .or_else(|| first.map(|i| i.url.clone()))
        .ok_or_else(|| Error::Transport(format!("{prefix}_API_URL is not set and the cassette is empty")))?;
    let model = env("MODEL")
        .or_else(|| first.and_then(|i| i.request.get("model")?.as_str().map(str::to_string)))
        .unwrap_or_else(|| "default".into());
    let mut ep = EndpointConfig::new(url, model);
    if let Some(t) = first.and_then(|i| i.request.get("temperature")?.as_f64()) {
        ep.temperature = t;
    }
    ep.api_key = env("API_KEY");
    Ok(ep)
}

/// Endpoint and transport for one remote role, honoring the cassette setting.
pub fn remote_transport(prefix: &str, cassettes: &CassetteUse) -> Result<(EndpointConfig, Box<dyn Transport>)> {
    match cassettes {
        CassetteUse::Live => {
            let ep = EndpointConfig::from_env(prefix)?;
            let t = Box::new(HttpTransport::new(ep.timeout));
            Ok((ep, t))
        }
        CassetteUse::Replay(dir) => {
            let path = cassette_file(dir, prefix);
            let cassette = Cassette::load(&path)?;
            let ep = replay_endpoint(prefix, &cassette)?;
            Ok((ep, Box::new(CassetteTransport::replay(cassette))))
        }
        CassetteUse::Record(dir) => {
            let ep = EndpointConfig::from_env(prefix)?;
            let inner = Box::new(HttpTransport::new(ep.timeout));
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Ok((ep, Box::new(CassetteTransport::record(cassette_file(dir, prefix), inner))))
        }
    }
}

pub fn build_planner(config: &RunConfig) -> Result<Box<dyn PlannerBackend>> {
    Ok(match config.planner {
        BackendKind::Scripted => Box::new(ScriptedPlanner::new(config.seed, ScriptedMode::Planted)),
        BackendKind::Remote => {
            let (ep, t) = remote_transport(PLANNER_ENV, &config.cassettes)?;
            Box::new(RemotePlanner::new(ModelClient::new(ep, t)))
        }
    })
}

pub fn build_verifier(kind: VerifierKind, thresholds: LocalThresholds, cassettes: &CassetteUse) -> Result<Box<dyn Verifier>> {
    Ok(match kind {
        VerifierKind::Local => Box::new(LocalVerifier::new(thresholds)),
        VerifierKind::Remote => {
            let (ep, t) = remote_transport(VERIFIER_ENV, cassettes)?;
            Box::new(RemoteVerifier::new(ModelClient::new(ep, t)))
        }
    })
}

/// Persists every scored candidate under `phase_<i>/candidate_<k>/`.
struct CandidateWriter<'a> {
    run_dir: &'a Path,
}

impl SearchObserver for CandidateWriter<'_> {
    fn candidate(
        &mut self,
        phase: usize,
        candidate: &TrajectoryCandidate,
        sketch: &VideoSketch,
        report: &VerificationReport,
    ) -> Result<()> {
        let dir = self
            .run_dir
            .join(format!("phase_{phase}"))
            .join(format!("candidate_{}", candidate.candidate_index));
        encode_sketch(sketch, &dir.join("frames"), SketchFormat::PngSequence)?;
        write_json(&dir.join("trajectory.json"), candidate)?;
        write_json(&dir.join("report.json"), report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseSummary {
    pub phase: usize,
    pub selected: usize,
    pub combined: f64,
    pub rounds: usize,
    pub below_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub phases: Vec<PhaseSummary>,
    pub below_threshold: bool,
    pub job: Option<String>,
    /// Wall time per stage in seconds; reported on the console only, never written to the run.
    pub timings: Vec<(&'static str, f64)>,
}

impl RunSummary {
    pub fn exit_code(&self) -> u8 {
        if self.below_threshold {
            exit::BEST_EFFORT
        } else {
            exit::OK
        }
    }
}

fn generator_target(mode: GeneratorMode, run_dir: &Path, cassettes: &CassetteUse) -> Result<Option<GeneratorTarget>> {
    Ok(match mode {
        GeneratorMode::Off => None,
        GeneratorMode::DryRun => Some(GeneratorTarget::DryRun(run_dir.join("generator_request.json"))),
        GeneratorMode::Remote => {
            let url_missing = std::env::var(format!("{GENERATOR_ENV}_API_URL")).map_or(true, |u| u.is_empty());
            if url_missing && !matches!(cassettes, CassetteUse::Replay(_)) {
                Some(GeneratorTarget::Remote {
                    endpoint: None,
                    transport: Box::new(HttpTransport::new(std::time::Duration::from_secs(1))),
                })
            } else {
                let (ep, transport) = remote_transport(GENERATOR_ENV, cassettes)?;
                Some(GeneratorTarget::Remote {
                    endpoint: Some(ep),
                    transport,
                })
            }
        }
    })
}

fn describe_job(job: JobHandle) -> String {
    match job {
        JobHandle::DryRun { payload } => format!("dry-run payload at {}", payload.display()),
        JobHandle::Submitted { job_id } => format!("job {job_id}"),
    }
}

/// Full pipeline: plan, search every phase, write artifacts and the dense track.
pub fn cmd_run(config: &RunConfig) -> Result<RunSummary> {
    config.search.validate()?;
    let scene = load_scene_bundle(&config.scene)?;
    let prompt = config
        .prompt
        .clone()
        .or_else(|| scene.prompt.clone())
        .ok_or_else(|| Error::Config("no prompt given and the scene manifest has none".into()))?;
    let mut planner = build_planner(config)?;
    let mut verifier = build_verifier(config.verifier, config.thresholds, &config.cassettes)?;
    let run_dir = config.out_dir.join(config.run_id());
    if run_dir.exists() {
        fs::remove_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    }
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;

    let mut writer = CandidateWriter { run_dir: &run_dir };
    let clock = std::time::Instant::now();
    let outcome = match run_pipeline(
        &prompt,
        &scene,
        planner.as_mut(),
        verifier.as_mut(),
        &config.search,
        &mut writer,
    ) {
        Ok(o) => o,
        Err(failure) => {
            write_json(&run_dir.join("trace.json"), &failure.partial)?;
            return Err(failure.error);
        }
    };

    let mut timings = vec![("search", clock.elapsed().as_secs_f64())];
    let clock = std::time::Instant::now();
    let trace = outcome.trace(&prompt);
    write_json(&run_dir.join("plan.json"), trace.plan.as_ref().expect("plan recorded"))?;
    write_json(&run_dir.join("trace.json"), &trace)?;
    let format = if config.gif {
        SketchFormat::PngAndGif
    } else {
        SketchFormat::PngSequence
    };
    for phase in &outcome.phases {
        let dir = run_dir.join("selected").join(format!("phase_{}", phase.trace.phase));
        encode_sketch(&phase.sketch, &dir, format)?;
        write_json(&dir.join("report.json"), &phase.report)?;
    }

    let selected: Vec<TrajectoryCandidate> = outcome.phases.iter().map(|p| p.selected.clone()).collect();
    let tracks = dense_tracks(&outcome.plan, &selected, &scene.initial_boxes(), config.output_frames)?;
    let meta = TrackMeta {
        fps: config.track_fps,
        width: scene.width,
        height: scene.height,
        prompt: prompt.clone(),
    };
    let track = write_track_file(tracks, &run_dir.join("track.json"), &meta)?;

    timings.push(("export", clock.elapsed().as_secs_f64()));
    let clock = std::time::Instant::now();
    let job = match generator_target(config.generator, &run_dir, &config.cassettes)? {
        Some(target) => Some(describe_job(submit_generation(&track, &scene.initial_frame, target)?)),
        None => None,
    };

    let phases: Vec<PhaseSummary> = outcome
        .phases
        .iter()
        .map(|p| PhaseSummary {
            phase: p.trace.phase,
            selected: p.trace.selected_index,
            combined: p.trace.selected_combined,
            rounds: p.trace.rounds.len(),
            below_threshold: p.trace.below_threshold,
        })
        .collect();
    if job.is_some() {
        timings.push(("generation", clock.elapsed().as_secs_f64()));
    }
    info!(run = %run_dir.display(), "run complete");
    Ok(RunSummary {
        run_dir,
        below_threshold: outcome.below_threshold(),
        phases,
        job,
        timings,
    })
}

/// Write a synthetic bundle plus the spec that produced it.
pub fn cmd_make_synthetic(spec: &SyntheticSceneSpec, out: &Path) -> Result<SceneBundle> {
    let scene = make_synthetic(spec)?;
    save_scene_bundle(&scene, out)?;
    write_json(&out.join("synthetic_spec.json"), spec)?;
    Ok(scene)
}

/// Score a stored candidate (a candidate directory or a trajectory JSON file) against phase
/// `phase` of the scene's plan, assuming the scene's initial layout for non-moving objects.
pub fn cmd_verify_only(
    input: &Path,
    scene_dir: &Path,
    phase: usize,
    verifier: &mut dyn Verifier,
    search: &SearchConfig,
) -> Result<VerificationReport> {
    let scene = load_scene_bundle(scene_dir)?;
    let plan_value = scene
        .plan
        .as_ref()
        .ok_or_else(|| Error::Config("the scene manifest has no plan to take the goal from".into()))?;
    let plan = crate::planner::plan_from_manifest(plan_value, DEFAULT_PLAN_FRAMES)?;
    let sub = plan
        .sub_instructions
        .get(phase.wrapping_sub(1))
        .ok_or_else(|| Error::Config(format!("plan has no phase {phase}")))?;
    let (traj_path, frames_dir) = if input.is_dir() {
        (input.join("trajectory.json"), Some(input.join("frames")))
    } else {
        (input.to_path_buf(), None)
    };
    let value = read_json(&traj_path)?;
    let candidate: TrajectoryCandidate =
        serde_json::from_value(value).map_err(|e| Error::Parse(format!("{}: {e}", traj_path.display())))?;
    if candidate.is_empty() {
        return Err(Error::Parse(format!("{}: candidate has no frames", traj_path.display())));
    }
    let held = scene
        .initial_boxes()
        .into_iter()
        .filter(|(id, _)| !sub.moving_ids.contains(id))
        .collect();
    let sketch = match frames_dir.filter(|d| d.is_dir()) {
        Some(dir) => VideoSketch {
            frames: decode_png_sequence(&dir)?,
            candidate_index: candidate.candidate_index,
            fps: crate::render::DEFAULT_SKETCH_FPS,
        },
        None => render_sketch_with(&candidate, &scene, &held),
    };
    verifier.verify(&VerifyInput {
        sketch: &sketch,
        candidate: &candidate,
        sub,
        scene: &scene,
        held: &held,
        weights: &search.weights,
    })
}

/// Selected candidates of every phase, recovered from a trace.
pub fn selected_from_trace(trace: &PipelineTrace) -> Result<Vec<TrajectoryCandidate>> {
    trace
        .phases
        .iter()
        .map(|p| {
            p.rounds
                .iter()
                .flat_map(|r| &r.candidates)
                .find(|c| c.candidate.candidate_index == p.selected_index)
                .map(|c| c.candidate.clone())
                .ok_or_else(|| Error::Parse(format!("trace lacks selected candidate of phase {}", p.phase)))
        })
        .collect()
}

/// Rebuild the dense track from a run's trace, optionally with a different length or fps.
pub fn cmd_export(
    trace_path: &Path,
    scene_dir: &Path,
    out: &Path,
    frames: usize,
    fps: f64,
    generator: GeneratorMode,
    cassettes: &CassetteUse,
) -> Result<Option<String>> {
    let scene = load_scene_bundle(scene_dir)?;
    let value = read_json(trace_path)?;
    let trace: PipelineTrace =
        serde_json::from_value(value).map_err(|e| Error::Parse(format!("{}: {e}", trace_path.display())))?;
    let plan_value = trace
        .plan
        .as_ref()
        .ok_or_else(|| Error::Parse("trace has no plan".into()))?;
    let total = plan_value
        .get("total_frames")
        .and_then(Value::as_u64)
        .unwrap_or(DEFAULT_PLAN_FRAMES as u64) as u32;
    let plan = parse_plan_value(plan_value, total)?;
    let selected = selected_from_trace(&trace)?;
    let tracks = dense_tracks(&plan, &selected, &scene.initial_boxes(), frames)?;
    let meta = TrackMeta {
        fps,
        width: scene.width,
        height: scene.height,
        prompt: trace.prompt.clone(),
    };
    write_track_file(tracks, out, &meta)?;
    let track = read_track_file(out)?;
    let dir = out.parent().unwrap_or(Path::new("."));
    match generator_target(generator, dir, cassettes)? {
        Some(target) => Ok(Some(describe_job(submit_generation(&track, &scene.initial_frame, target)?))),
        None => Ok(None),
    }
}
