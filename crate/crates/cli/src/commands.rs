//! The five subcommands as library functions.

use std::path::{Path, PathBuf};

use netrack_core::evaluation::{
    amota_variant, clear_mot, default_recall_grid, scene_gt_points, DEFAULT_GATE,
};
use netrack_core::simulator::generate_scene;
use netrack_core::tracker::run_frames;
use netrack_core::training::{joint_train, pretrain_motion, EpochLog};
use netrack_core::{
    MeasurementNets, MotionParams, NetworkParams, Rng, Scene, TrackEstimate, TrackPoint,
    TrackerConfig, TrackerMode,
};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::files::{
    read_document, read_scene, read_typed, write_json, write_scene, CurveRow, FileKind, LogRow,
    ReportFile, TracksFile, TrainLogFile, FORMAT_VERSION,
};
use crate::plot;

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

/// Generates one scene and writes it with its feature-map sidecar.
pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let cfg = RunConfig::load_or_default(args.config.as_deref())?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let scene = generate_scene(&cfg.scenario, seed)?;
    write_scene(&args.out, &scene)?;
    log::info!(
        "wrote {} frames to {}",
        scene.frames.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrackArgs {
    pub scene: PathBuf,
    pub weights: Option<PathBuf>,
    pub mode: Option<TrackerMode>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

/// Runs the tracker over every frame of `scene`.
pub fn track_scene(
    scene: &Scene,
    cfg: &TrackerConfig,
    nets: Option<&NetworkParams>,
    seed: u64,
) -> CliResult<Vec<Vec<TrackEstimate>>> {
    let frames = scene
        .frames
        .iter()
        .map(|f| (f.measurements.as_slice(), Some(&f.feature_map)));
    Ok(run_frames(cfg, frames, nets, seed)?)
}

pub fn track(args: &TrackArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    let seed = args.seed.unwrap_or(cfg.seed);
    let weights = args.weights.clone().or_else(|| cfg.paths.weights.clone());
    let nets = match (cfg.mode.needs_weights(), weights) {
        (true, None) => return Err(CliError::MissingWeights(cfg.mode)),
        (true, Some(p)) => Some(NetworkParams::load(&p)?),
        (false, _) => None,
    };
    let scene = read_scene(&args.scene)?;
    let tcfg = cfg.tracker_config(&scene.config);
    let estimates = track_scene(&scene, &tcfg, nets.as_ref(), seed)?;
    write_json(
        &args.out,
        &TracksFile::new(cfg.mode, seed, scene.seed, &estimates),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    /// Motion network alone on perturbed ground-truth tracks.
    Pretrain,
    /// All networks through the tracker.
    Joint,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub scenes: PathBuf,
    pub out: PathBuf,
    pub stage: Stage,
    pub config: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Training log written next to the weights: `w.bin` gets `w.log.json`.
pub fn log_path(weights: &Path) -> PathBuf {
    weights.with_extension("log.json")
}

/// All scene files of a directory in file-name order.
pub fn read_scene_dir(dir: &Path) -> CliResult<Vec<Scene>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json")
            && matches!(read_document(&path), Ok((FileKind::Scene, _)))
        {
            paths.push(path);
        }
    }
    paths.sort();
    paths.iter().map(|p| read_scene(p)).collect()
}

pub fn train(args: &TrainArgs) -> CliResult<()> {
    if args.stage == Stage::Joint && args.init.is_none() {
        return Err(CliError::Usage("--stage joint needs --init weights".into()));
    }
    let cfg = RunConfig::load_or_default(args.config.as_deref())?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let scenes = read_scene_dir(&args.scenes)?;
    let Some(first) = scenes.first() else {
        return Err(CliError::Usage(format!(
            "no scene files in {}",
            args.scenes.display()
        )));
    };
    let scenario = first.config.clone();
    let started = std::time::Instant::now();
    let (params, history, best_epoch): (NetworkParams, Vec<EpochLog>, usize) = match args.stage {
        Stage::Pretrain => {
            let init = MotionParams::linear_mode(
                cfg.motion_config(&scenario),
                &mut Rng::with_stream(seed, 10),
            );
            let r = pretrain_motion(&scenes, init, &cfg.train, seed)?;
            let meas = MeasurementNets::new(cfg.network.meas, &mut Rng::with_stream(seed, 11));
            let params = NetworkParams {
                motion: r.params,
                meas,
            };
            (params, r.history, r.best_epoch)
        }
        Stage::Joint => {
            let init = NetworkParams::load(args.init.as_deref().expect("checked above"))?;
            let tcfg = cfg.tracker_config(&scenario);
            let r = joint_train(&scenes, init, &tcfg, &cfg.train, seed)?;
            (r.params, r.history, r.best_epoch)
        }
    };
    log::info!(
        "{} finished in {:.1} s, best epoch {best_epoch}",
        args.stage.as_str(),
        started.elapsed().as_secs_f64()
    );
    params.save(&args.out)?;
    let log = TrainLogFile {
        version: FORMAT_VERSION.into(),
        kind: FileKind::TrainLog.as_str().into(),
        stage: args.stage.as_str().into(),
        seed,
        scenes: scenes.len(),
        best_epoch,
        epochs: history.iter().map(LogRow::from).collect(),
    };
    write_json(&log_path(&args.out), &log)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub tracks: PathBuf,
    pub scene: PathBuf,
    pub report: PathBuf,
    pub gate: f64,
}

impl EvalArgs {
    pub fn new(tracks: PathBuf, scene: PathBuf, report: PathBuf) -> Self {
        Self {
            tracks,
            scene,
            report,
            gate: DEFAULT_GATE,
        }
    }
}

pub fn track_points(tracks: &TracksFile) -> Vec<Vec<TrackPoint>> {
    tracks
        .frames
        .iter()
        .map(|f| {
            f.tracks
                .iter()
                .map(|t| TrackPoint {
                    id: t.id,
                    position: [t.state[0], t.state[1]],
                    score: t.confidence(),
                })
                .collect()
        })
        .collect()
}

/// CLEAR-MOT and recall-sweep scores of a tracks file against its scene.
pub fn evaluate(tracks: &TracksFile, scene: &Scene, gate: f64) -> CliResult<ReportFile> {
    let est = track_points(tracks);
    let gt = scene_gt_points(scene);
    if est.len() != gt.len() {
        return Err(CliError::Usage(format!(
            "tracks cover {} frames but the scene has {}",
            est.len(),
            gt.len()
        )));
    }
    let c = clear_mot(&est, &gt, gate)?;
    let a = amota_variant(&est, &gt, gate, &default_recall_grid())?;
    Ok(ReportFile {
        version: FORMAT_VERSION.into(),
        kind: FileKind::Report.as_str().into(),
        mode: tracks.mode,
        gate,
        frames: gt.len(),
        gt_count: c.gt_count,
        mota: c.mota,
        motp: c.motp,
        tp: c.tp,
        fp: c.fp,
        fn_: c.fn_,
        ids: c.ids,
        frag: c.frag,
        amota: a.amota,
        amotp: a.amotp,
        curve: a.rows.iter().map(CurveRow::from).collect(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

/// Plain-text summary of a report.
pub fn report_table(r: &ReportFile) -> String {
    let mut s = String::new();
    s.push_str(&format!("mode     {}\n", r.mode));
    s.push_str(&format!("frames   {}\n", r.frames));
    s.push_str(&format!("gt       {}\n", r.gt_count));
    s.push_str(&format!("MOTA     {}\n", fmt_opt(r.mota)));
    s.push_str(&format!("MOTP     {}\n", fmt_opt(r.motp)));
    s.push_str(&format!("AMOTA    {:.4}\n", r.amota));
    s.push_str(&format!("AMOTP    {}\n", fmt_opt(r.amotp)));
    s.push_str(&format!(
        "TP {}  FP {}  FN {}  IDS {}  Frag {}\n",
        r.tp, r.fp, r.fn_, r.ids, r.frag
    ));
    s.push_str("\nrecall  threshold  MOTAR\n");
    for row in &r.curve {
        let t = row
            .threshold
            .map_or_else(|| "-".to_string(), |t| format!("{t:.4}"));
        s.push_str(&format!(
            "{:>6.2}  {:>9}  {:.4}\n",
            row.recall_target, t, row.motar
        ));
    }
    s
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let tracks: TracksFile = read_typed(&args.tracks, FileKind::Tracks)?;
    let scene = read_scene(&args.scene)?;
    let report = evaluate(&tracks, &scene, args.gate)?;
    write_json(&args.report, &report)?;
    let table = report_table(&report);
    let txt = args.report.with_extension("txt");
    std::fs::write(&txt, &table).map_err(|e| CliError::io(&txt, e))?;
    print!("{table}");
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PlotArgs {
    pub input: PathBuf,
    pub out: PathBuf,
    /// Ground truth for a tracks overlay.
    pub scene: Option<PathBuf>,
    /// Frame whose boxes are drawn; defaults to the last.
    pub frame: Option<usize>,
}

/// Writes an SVG overlay or a CSV table depending on the output extension.
pub fn plot(args: &PlotArgs) -> CliResult<()> {
    let ext = args
        .out
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default();
    let (kind, _) = read_document(&args.input)?;
    let text = match (ext, kind) {
        ("csv", FileKind::Report) => plot::curve_csv(&read_typed(&args.input, kind)?),
        ("csv", FileKind::TrainLog) => plot::log_csv(&read_typed(&args.input, kind)?),
        ("csv", FileKind::Tracks) => plot::tracks_csv(&read_typed(&args.input, kind)?),
        ("csv", FileKind::Scene) => plot::gt_csv(&read_scene(&args.input)?),
        ("svg", FileKind::Scene) => plot::overlay_svg(&read_scene(&args.input)?, None, args.frame),
        ("svg", FileKind::Tracks) => {
            let scene = args
                .scene
                .as_deref()
                .ok_or_else(|| CliError::Usage("an SVG overlay of tracks needs --scene".into()))?;
            let tracks: TracksFile = read_typed(&args.input, kind)?;
            plot::overlay_svg(&read_scene(scene)?, Some(&tracks), args.frame)
        }
        ("svg", _) => {
            return Err(CliError::Usage(
                "SVG output needs a scene or tracks file".into(),
            ))
        }
        _ => return Err(CliError::Usage("output must end in .svg or .csv".into())),
    };
    std::fs::write(&args.out, text).map_err(|e| CliError::io(&args.out, e))
}
