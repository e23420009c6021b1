use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use thermoscan_core::acquisition::{self, net, PhantomSource, RecordedSource};
use thermoscan_core::analysis::{AnalysisConfig, AnalysisError, AnalysisReport};
use thermoscan_core::io::{self, IoError};
use thermoscan_core::phantom::{self, PhantomSpec};
use thermoscan_core::radiometry::{counts_to_temperature, fit_calibration, CalibrationSample, SensorSpec};
use thermoscan_core::registration::{align_pair, Foot, FootImage, RegistrationError};
use thermoscan_core::segmentation::Scribble;
use thermoscan_core::session::{self, LandmarkPoints, SessionDocument, SessionError};

#[derive(Parser)]
#[command(name = "thermoscan", version, about = "Plantar thermogram analysis")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON file of analysis settings, merged over the session's own.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Where outputs go; defaults to the input's directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Override for the hotspot threshold, degC.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a calibration line to water-bath samples.
    Calibrate {
        /// JSON list of {reference_temp_c, mean_counts}.
        samples: PathBuf,
    },
    /// Convert a raw frame to a temperature map.
    Convert {
        frame: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
    },
    /// Segment the plantar frame of a session into two foot masks.
    Segment {
        session: PathBuf,
        #[arg(long)]
        scribbles: Option<PathBuf>,
    },
    /// Compute the contralateral transforms of a segmented session.
    Align {
        session: PathBuf,
        #[arg(long)]
        landmarks: Option<PathBuf>,
    },
    /// Run the full analysis of a session.
    Analyze {
        session: PathBuf,
        #[arg(long)]
        landmarks: Option<PathBuf>,
        #[arg(long)]
        scribbles: Option<PathBuf>,
    },
    /// Generate a synthetic plantar scene, periphery views and ground truth.
    Phantom {
        /// Phantom spec JSON; the built-in scene when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Use a seed-dependent variation of the built-in scene.
        #[arg(long)]
        varied: bool,
    },
    /// Serve or receive a capture sequence over TCP.
    Capture {
        #[arg(long, conflicts_with = "connect", required_unless_present = "connect")]
        listen: Option<String>,
        #[arg(long)]
        connect: Option<String>,
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Stop after this many connections.
        #[arg(long)]
        connections: Option<usize>,
        /// Replay recorded frames instead of synthesising them.
        #[arg(long, num_args = 1..)]
        frames: Vec<PathBuf>,
    },
    /// Print the region table of a report as CSV.
    ReportCsv { report: PathBuf },
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Precondition(String),
    Pipeline(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 3,
            Failure::Precondition(_) => 4,
            Failure::Pipeline(_) => 5,
        }
    }

    fn to_json(&self) -> Value {
        let (kind, message) = match self {
            Failure::Input(m) => ("input", m),
            Failure::Precondition(m) => ("precondition", m),
            Failure::Pipeline(m) => ("pipeline", m),
        };
        json!({ "error": { "kind": kind, "code": self.exit_code(), "message": message } })
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        let msg = e.to_string();
        match &e {
            SessionError::Io(_) => Failure::Input(msg),
            SessionError::MissingField(_) | SessionError::SchemaVersion(_) => Failure::Precondition(msg),
            SessionError::Analysis(AnalysisError::InvalidConfig(_)) => Failure::Precondition(msg),
            SessionError::Registration(
                RegistrationError::LandmarkOutOfBounds { .. }
                | RegistrationError::DegenerateLandmarks(_)
                | RegistrationError::CoincidentAxis(_)
                | RegistrationError::SameFoot(_),
            ) => Failure::Precondition(msg),
            _ => Failure::Pipeline(msg),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code())
        }
    }
}

fn run(cli: &Cli) -> CmdResult {
    let g = &cli.global;
    match &cli.command {
        Command::Calibrate { samples } => calibrate(g, samples),
        Command::Convert { frame, calibration } => convert(g, frame, calibration),
        Command::Segment { session, scribbles } => segment(g, session, scribbles.as_deref()),
        Command::Align { session, landmarks } => align(g, session, landmarks.as_deref()),
        Command::Analyze {
            session,
            landmarks,
            scribbles,
        } => analyze(g, session, landmarks.as_deref(), scribbles.as_deref()),
        Command::Phantom { spec, varied } => make_phantom(g, spec.as_deref(), *varied),
        Command::Capture {
            listen,
            connect,
            spec,
            connections,
            frames,
        } => match (listen, connect) {
            (Some(addr), _) => capture_listen(g, addr, spec.as_deref(), *connections, frames),
            (None, Some(addr)) => capture_connect(g, addr),
            (None, None) => Err(Failure::Precondition("one of --listen or --connect is required".into())),
        },
        Command::ReportCsv { report } => report_csv(g, report),
    }
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf()
}

fn out_dir(g: &Global, input: &Path) -> Result<PathBuf, Failure> {
    let dir = g.out_dir.clone().unwrap_or_else(|| parent_dir(input));
    fs::create_dir_all(&dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serialisable"));
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

/// Session settings, then `--config`, then `--threshold`.
fn effective_config(g: &Global, base: &AnalysisConfig) -> Result<AnalysisConfig, Failure> {
    let mut value = serde_json::to_value(base).expect("config serialises");
    if let Some(path) = &g.config {
        let overlay: Value = io::read_json(path)?;
        merge(&mut value, overlay);
    }
    let mut cfg: AnalysisConfig = serde_json::from_value(value).map_err(|e| Failure::Input(format!("config: {e}")))?;
    if let Some(t) = g.threshold {
        cfg.delta_threshold_c = t;
    }
    cfg.validate().map_err(|e| Failure::Precondition(e.to_string()))?;
    Ok(cfg)
}

fn load_session(
    g: &Global,
    path: &Path,
    landmarks: Option<&Path>,
    scribbles: Option<&Path>,
) -> Result<SessionDocument, Failure> {
    let mut doc = SessionDocument::load(path)?;
    if let Some(p) = landmarks {
        doc.landmarks = io::read_json::<LandmarkPoints>(p)?;
    }
    if let Some(p) = scribbles {
        doc.scribbles = io::read_json::<Vec<Scribble>>(p)?;
    }
    doc.config = effective_config(g, &doc.config)?;
    Ok(doc)
}

fn calibrate(g: &Global, samples_path: &Path) -> CmdResult {
    let samples: Vec<CalibrationSample> = io::read_json(samples_path)?;
    let curve = fit_calibration(&samples).map_err(|e| Failure::Precondition(e.to_string()))?;
    io::write_calibration(&out_dir(g, samples_path)?.join("calibration.json"), &curve)?;
    print_json(&curve);
    Ok(())
}

fn convert(g: &Global, frame_path: &Path, calibration: &Path) -> CmdResult {
    let frame = io::read_raw_frame(frame_path)?;
    let curve = io::read_calibration(calibration)?;
    let map = counts_to_temperature(&frame, &curve, &SensorSpec::lepton3())
        .map_err(|e| Failure::Precondition(e.to_string()))?;
    let dir = out_dir(g, frame_path)?;
    let stem = frame_path.file_stem().and_then(|s| s.to_str()).unwrap_or("frame");
    match g.format {
        Format::Json => {
            let path = dir.join(format!("{stem}.f32"));
            io::write_temperature_map(&path, &map)?;
            let range = map.finite_range();
            print_json(
                &json!({ "map": path, "frame_id": map.source_frame, "min_c": range.map(|r| r.0), "max_c": range.map(|r| r.1) }),
            );
        }
        Format::Csv => write_text(&dir.join(format!("{stem}.csv")), &io::temperature_map_csv(&map))?,
    }
    Ok(())
}

fn segment(g: &Global, session_path: &Path, scribbles: Option<&Path>) -> CmdResult {
    let doc = load_session(g, session_path, None, scribbles)?;
    let inputs = session::load_inputs(&doc, &parent_dir(session_path))?;
    let map = counts_to_temperature(&inputs.frame, &inputs.calibration, &SensorSpec::lepton3())
        .map_err(|e| Failure::Precondition(e.to_string()))?;
    let seg = session::segment(&map, &doc.segmentation, &doc.scribbles)?;
    let dir = out_dir(g, session_path)?;
    io::write_mask_png(&dir.join("mask.png"), &seg.grabcut.mask.mask)?;
    write_text(&dir.join("mask.rle"), &io::mask_to_rle(&seg.grabcut.mask.mask))?;
    io::write_mask_png(&dir.join("mask_left.png"), &seg.left.mask)?;
    io::write_mask_png(&dir.join("mask_right.png"), &seg.right.mask)?;
    print_json(&json!({
        "provenance": seg.left.provenance,
        "energies": seg.grabcut.energies,
        "left_area_px": seg.left.mask.count(),
        "right_area_px": seg.right.mask.count(),
    }));
    Ok(())
}

fn align(g: &Global, session_path: &Path, landmarks: Option<&Path>) -> CmdResult {
    let doc = load_session(g, session_path, landmarks, None)?;
    let missing = |f| SessionError::MissingField(f);
    let left = doc.landmarks.get(Foot::Left).ok_or(missing("landmarks.left"))?;
    let right = doc.landmarks.get(Foot::Right).ok_or(missing("landmarks.right"))?;
    let inputs = session::load_inputs(&doc, &parent_dir(session_path))?;
    let map = counts_to_temperature(&inputs.frame, &inputs.calibration, &SensorSpec::lepton3())
        .map_err(|e| Failure::Precondition(e.to_string()))?;
    let seg = session::segment(&map, &doc.segmentation, &doc.scribbles)?;
    let image = |f: Foot| FootImage {
        map: map.clone(),
        mask: seg.mask(f).clone(),
    };
    let dir = out_dir(g, session_path)?;
    let mut summary = Vec::new();
    for (reference, rl, ml) in [(Foot::Left, &left, &right), (Foot::Right, &right, &left)] {
        let pair = align_pair(&image(reference), rl, &image(reference.other()), ml).map_err(SessionError::from)?;
        let name = format!(
            "transform_to_{}.txt",
            if reference == Foot::Left { "left" } else { "right" }
        );
        write_text(&dir.join(&name), &io::transform_to_text(&pair.transform))?;
        summary.push(json!({
            "reference_foot": reference,
            "transform": pair.transform.m,
            "determinant": pair.transform.determinant(),
            "overlap_px": pair.overlap_mask.count(),
        }));
    }
    print_json(&summary);
    Ok(())
}

fn analyze(g: &Global, session_path: &Path, landmarks: Option<&Path>, scribbles: Option<&Path>) -> CmdResult {
    let doc = load_session(g, session_path, landmarks, scribbles)?;
    let out = session::analyze_session(&doc, &parent_dir(session_path))?;
    let dir = out_dir(g, session_path)?;
    io::write_json(&dir.join("report.json"), &out.report)?;
    write_text(&dir.join("roi.csv"), &out.report.roi_stats.to_csv())?;
    io::write_png(&dir.join("overlay.png"), &out.overlay)?;
    match g.format {
        Format::Json => print_json(&out.report),
        Format::Csv => print!("{}", out.report.roi_stats.to_csv()),
    }
    Ok(())
}

fn load_spec(path: Option<&Path>, varied: bool, seed: u64) -> Result<PhantomSpec, Failure> {
    match (path, varied) {
        (Some(p), _) => Ok(io::read_json(p)?),
        (None, true) => Ok(PhantomSpec::varied(seed)),
        (None, false) => Ok(PhantomSpec::default()),
    }
}

fn make_phantom(g: &Global, spec_path: Option<&Path>, varied: bool) -> CmdResult {
    let spec = load_spec(spec_path, varied, g.seed)?;
    let p = phantom::generate(&spec, g.seed).map_err(|e| Failure::Precondition(e.to_string()))?;
    let dir = g.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;

    io::write_raw_frame(&dir.join("plantar.raw"), &p.frame)?;
    for angle in thermoscan_core::radiometry::View::PERIPHERY_ANGLES {
        let f = phantom::generate_periphery(&spec, angle).map_err(|e| Failure::Precondition(e.to_string()))?;
        io::write_raw_frame(&dir.join(format!("periphery-{angle}.raw")), &f)?;
    }
    io::write_calibration(&dir.join("calibration.json"), &spec.calibration)?;
    let samples = phantom::water_bath_samples(&spec.calibration, &spec.sensor, 0.0, g.seed);
    io::write_json(&dir.join("water_bath_samples.json"), &samples)?;
    io::write_json(&dir.join("phantom_spec.json"), &spec)?;
    io::write_json(&dir.join("truth.json"), &p.truth)?;
    io::write_mask_png(&dir.join("truth_mask_left.png"), &p.truth.left_mask)?;
    io::write_mask_png(&dir.join("truth_mask_right.png"), &p.truth.right_mask)?;
    let landmarks = LandmarkPoints::from_sets(p.truth.landmarks(Foot::Left), p.truth.landmarks(Foot::Right));
    io::write_json(&dir.join("landmarks.json"), &landmarks)?;

    let mut doc = SessionDocument::new(&spec.name);
    doc.frames.plantar = Some("plantar.raw".into());
    doc.frames.periphery = thermoscan_core::radiometry::View::PERIPHERY_ANGLES
        .iter()
        .map(|a| format!("periphery-{a}.raw"))
        .collect();
    doc.calibration = Some("calibration.json".into());
    doc.landmarks = landmarks;
    doc.config = effective_config(g, &AnalysisConfig::default())?;
    doc.save(&dir.join("session.json"))?;

    print_json(&json!({
        "frame_id": p.frame.frame_id,
        "out_dir": dir,
        "expected_findings": p.truth.expected_findings(&doc.config),
    }));
    Ok(())
}

fn capture_listen(
    g: &Global,
    addr: &str,
    spec: Option<&Path>,
    connections: Option<usize>,
    frames: &[PathBuf],
) -> CmdResult {
    let listener = std::net::TcpListener::bind(addr).map_err(|e| Failure::Input(format!("{addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| Failure::Input(e.to_string()))?;
    println!("{}", json!({ "listening": local.to_string() }));
    let handle = if frames.is_empty() {
        let spec = load_spec(spec, false, g.seed)?;
        let seed = g.seed;
        PhantomSource::new(spec.clone(), seed).map_err(|e| Failure::Precondition(e.to_string()))?;
        net::serve(
            listener,
            move || PhantomSource::new(spec.clone(), seed).expect("checked above"),
            connections,
        )
    } else {
        let recorded = frames
            .iter()
            .map(|p| io::read_raw_frame(p))
            .collect::<Result<Vec<_>, _>>()?;
        net::serve(listener, move || RecordedSource::new(recorded.clone()), connections)
    };
    handle
        .join()
        .map_err(|_| Failure::Pipeline("capture server panicked".into()))
}

fn capture_connect(g: &Global, addr: &str) -> CmdResult {
    let got = acquisition::fetch_sequence(addr).map_err(|e| Failure::Input(format!("{addr}: {e}")))?;
    let dir = g.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    for f in &got.frames {
        let path = dir.join(format!("{}.raw", f.view.label()));
        io::write_raw_frame(&path, f)?;
        written.push(json!({ "frame_id": f.frame_id, "view": f.view.label(), "path": path }));
    }
    print_json(&json!({
        "frames": written,
        "complete": got.is_complete(),
        "dropped": got.dropped.len(),
        "error": got.error,
    }));
    match (&got.error, got.is_complete()) {
        (Some(e), _) => Err(Failure::Pipeline(format!("capture aborted: {}", e.message))),
        (None, false) => Err(Failure::Pipeline("stream ended before sequence end".into())),
        _ => Ok(()),
    }
}

fn report_csv(g: &Global, report: &Path) -> CmdResult {
    let report: AnalysisReport = io::read_json(report)?;
    let csv = report.roi_stats.to_csv();
    match &g.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
            write_text(&dir.join("roi.csv"), &csv)
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
