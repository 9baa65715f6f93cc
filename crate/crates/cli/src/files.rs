//! On-disk formats. Scenes, tracks, reports and training logs are JSON
//! documents with `kind` and `version` fields; feature maps of a scene live
//! in a binary sidecar (`NTRKFMAP` magic, little-endian header with count,
//! grid size, channels and region, then row-major `f32` values).

use std::io::Write;
use std::path::{Path, PathBuf};

use netrack_core::evaluation::RecallRow;
use netrack_core::feature_map::roi_extract_or_zero;
use netrack_core::training::EpochLog;
use netrack_core::{
    BoxDims, FeatureMap, Frame, GtObject, Measurement, Region, ScenarioConfig, Scene, StateVec,
    TrackEstimate, TrackerMode,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Version written into every file; readers accept any minor of this major.
pub const FORMAT_VERSION: &str = "1.0";
pub const FORMAT_MAJOR: u32 = 1;
pub const FMAP_MAGIC: &[u8; 8] = b"NTRKFMAP";
pub const FMAP_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Scene,
    Tracks,
    Report,
    TrainLog,
}

impl FileKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FileKind::Scene => "scene",
            FileKind::Tracks => "tracks",
            FileKind::Report => "report",
            FileKind::TrainLog => "train_log",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Self::Scene, Self::Tracks, Self::Report, Self::TrainLog]
            .into_iter()
            .find(|k| k.as_str() == s)
    }
}

fn box_array(b: &BoxDims) -> [f64; 3] {
    [b.length, b.width, b.yaw]
}

fn box_from(a: [f64; 3]) -> BoxDims {
    BoxDims {
        length: a[0],
        width: a[1],
        yaw: a[2],
    }
}

fn state_array(x: &StateVec) -> [f64; 4] {
    [x[0], x[1], x[2], x[3]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtRecord {
    pub id: u64,
    pub state: [f64; 4],
    #[serde(rename = "box")]
    pub bbox: [f64; 3],
    pub class: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasRecord {
    pub z: [f64; 4],
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 3],
    pub class: u32,
    /// Ground-truth id behind the detection; `null` for clutter.
    pub origin: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub k: usize,
    pub gt: Vec<GtRecord>,
    pub meas: Vec<MeasRecord>,
    /// Index of the frame's map in the sidecar file.
    pub feature_map: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub version: String,
    pub kind: String,
    pub seed: u64,
    pub config: ScenarioConfig,
    /// Sidecar file name, relative to the scene file.
    pub feature_maps: String,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub id: u64,
    pub state: [f64; 4],
    pub existence: f64,
    pub score: f64,
    pub class: u32,
    #[serde(rename = "box")]
    pub bbox: [f64; 3],
}

impl TrackRecord {
    pub fn confidence(&self) -> f64 {
        self.existence * self.score
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackFrame {
    pub k: usize,
    pub tracks: Vec<TrackRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracksFile {
    pub version: String,
    pub kind: String,
    pub mode: TrackerMode,
    pub seed: u64,
    pub scene_seed: u64,
    pub frames: Vec<TrackFrame>,
}

impl TracksFile {
    pub fn new(
        mode: TrackerMode,
        seed: u64,
        scene_seed: u64,
        estimates: &[Vec<TrackEstimate>],
    ) -> Self {
        let frames = estimates
            .iter()
            .enumerate()
            .map(|(k, est)| TrackFrame {
                k,
                tracks: est
                    .iter()
                    .map(|e| TrackRecord {
                        id: e.id,
                        state: state_array(&e.state),
                        existence: e.existence,
                        score: e.score,
                        class: e.class_id,
                        bbox: box_array(&e.bbox),
                    })
                    .collect(),
            })
            .collect();
        Self {
            version: FORMAT_VERSION.into(),
            kind: FileKind::Tracks.as_str().into(),
            mode,
            seed,
            scene_seed,
            frames,
        }
    }
}

/// One row of the recall sweep; `threshold` is `null` when the target
/// recall is not reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveRow {
    pub recall_target: f64,
    pub threshold: Option<f64>,
    pub recall: f64,
    pub motar: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ids: usize,
}

impl From<&RecallRow> for CurveRow {
    fn from(r: &RecallRow) -> Self {
        Self {
            recall_target: r.recall_target,
            threshold: r.threshold,
            recall: r.recall,
            motar: r.motar,
            tp: r.tp,
            fp: r.fp,
            fn_: r.fn_,
            ids: r.ids,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub version: String,
    pub kind: String,
    pub mode: TrackerMode,
    pub gate: f64,
    pub frames: usize,
    pub gt_count: usize,
    pub mota: Option<f64>,
    pub motp: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ids: usize,
    pub frag: usize,
    pub amota: f64,
    pub amotp: Option<f64>,
    pub curve: Vec<CurveRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_motion: f64,
    pub val_affinity: f64,
    pub val_fpr: f64,
}

impl From<&EpochLog> for LogRow {
    fn from(e: &EpochLog) -> Self {
        Self {
            epoch: e.epoch,
            train_loss: e.train_loss,
            val_loss: e.val_loss,
            val_motion: e.val_motion,
            val_affinity: e.val_affinity,
            val_fpr: e.val_fpr,
        }
    }
}

/// Training log. Wall-clock times are logged but not stored, so the file is
/// reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainLogFile {
    pub version: String,
    pub kind: String,
    pub stage: String,
    pub seed: u64,
    pub scenes: usize,
    pub best_epoch: usize,
    pub epochs: Vec<LogRow>,
}

/// Serializes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::schema(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Reads a JSON document and returns its kind after checking the version.
pub fn read_document(path: &Path) -> CliResult<(FileKind, serde_json::Value)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::schema(path, e.to_string()))?;
    let version = value
        .get("version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| CliError::schema(path, "missing version"))?;
    let major: u32 = version
        .split('.')
        .next()
        .and_then(|m| m.parse().ok())
        .ok_or_else(|| CliError::schema(path, format!("bad version {version:?}")))?;
    if major != FORMAT_MAJOR {
        return Err(CliError::Core(netrack_core::Error::FormatVersionMismatch(
            format!(
                "{}: version {version}, supported {FORMAT_MAJOR}.x",
                path.display()
            ),
        )));
    }
    let kind = value
        .get("kind")
        .and_then(|v| v.as_str())
        .and_then(FileKind::parse)
        .ok_or_else(|| CliError::schema(path, "missing or unknown kind"))?;
    Ok((kind, value))
}

/// Reads a document of the expected kind.
pub fn read_typed<T: DeserializeOwned>(path: &Path, kind: FileKind) -> CliResult<T> {
    let (found, value) = read_document(path)?;
    if found != kind {
        return Err(CliError::schema(
            path,
            format!(
                "expected a {} file, found {}",
                kind.as_str(),
                found.as_str()
            ),
        ));
    }
    serde_json::from_value(value).map_err(|e| CliError::schema(path, e.to_string()))
}

/// Sidecar path next to a scene file: same stem, `.fmap` extension.
pub fn sidecar_path(scene_path: &Path) -> PathBuf {
    scene_path.with_extension("fmap")
}

pub fn encode_feature_maps(maps: &[&FeatureMap]) -> Result<Vec<u8>, String> {
    let (size, channels, region) = match maps.first() {
        Some(m) => (m.size, m.channels, m.region),
        None => (0, 0, Region::square(1.0)),
    };
    if maps
        .iter()
        .any(|m| m.size != size || m.channels != channels || m.region != region)
    {
        return Err("feature maps of one scene must share grid and region".into());
    }
    let mut buf = Vec::with_capacity(64 + maps.len() * size * size * channels * 4);
    buf.extend_from_slice(FMAP_MAGIC);
    for v in [
        FMAP_VERSION,
        maps.len() as u32,
        size as u32,
        channels as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in [region.x_min, region.x_max, region.y_min, region.y_max] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for m in maps {
        for v in &m.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_feature_maps(buf: &[u8]) -> Result<Vec<FeatureMap>, String> {
    const HEADER: usize = 8 + 4 * 4 + 8 * 4;
    if buf.len() < HEADER || &buf[..8] != FMAP_MAGIC {
        return Err("not a feature-map file".into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    if u32_at(8) != FMAP_VERSION {
        return Err(format!("unsupported feature-map version {}", u32_at(8)));
    }
    let (count, size, channels) = (
        u32_at(12) as usize,
        u32_at(16) as usize,
        u32_at(20) as usize,
    );
    let region = Region {
        x_min: f64_at(24),
        x_max: f64_at(32),
        y_min: f64_at(40),
        y_max: f64_at(48),
    };
    let per_map = size * size * channels;
    if buf.len() != HEADER + count * per_map * 4 {
        return Err("feature-map file has the wrong length".into());
    }
    let mut maps = Vec::with_capacity(count);
    for k in 0..count {
        let start = HEADER + k * per_map * 4;
        let data = buf[start..start + per_map * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        maps.push(FeatureMap {
            size,
            channels,
            region,
            data,
        });
    }
    Ok(maps)
}

/// Writes the scene document and its feature-map sidecar.
pub fn write_scene(path: &Path, scene: &Scene) -> CliResult<()> {
    let side = sidecar_path(path);
    let maps: Vec<&FeatureMap> = scene.frames.iter().map(|f| &f.feature_map).collect();
    let bytes = encode_feature_maps(&maps).map_err(|e| CliError::schema(&side, e))?;
    let mut file = std::fs::File::create(&side).map_err(|e| CliError::io(&side, e))?;
    file.write_all(&bytes).map_err(|e| CliError::io(&side, e))?;
    let frames = scene
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| FrameRecord {
            k: f.k,
            gt: f
                .gt
                .iter()
                .map(|g| GtRecord {
                    id: g.id,
                    state: state_array(&g.state),
                    bbox: box_array(&g.bbox),
                    class: g.class_id,
                })
                .collect(),
            meas: f
                .measurements
                .iter()
                .zip(&f.origins)
                .map(|(m, o)| MeasRecord {
                    z: state_array(&m.z),
                    score: m.score,
                    bbox: box_array(&m.bbox),
                    class: m.class_id,
                    origin: *o,
                })
                .collect(),
            feature_map: i,
        })
        .collect();
    let doc = SceneFile {
        version: FORMAT_VERSION.into(),
        kind: FileKind::Scene.as_str().into(),
        seed: scene.seed,
        config: scene.config.clone(),
        feature_maps: side
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        frames,
    };
    write_json(path, &doc)
}

/// Reads a scene and its sidecar. Measurement shape features are rebuilt
/// from the stored maps exactly as the simulator computes them.
pub fn read_scene(path: &Path) -> CliResult<Scene> {
    let doc: SceneFile = read_typed(path, FileKind::Scene)?;
    let side = path
        .parent()
        .map(|p| p.join(&doc.feature_maps))
        .unwrap_or_else(|| PathBuf::from(&doc.feature_maps));
    let bytes = std::fs::read(&side).map_err(|e| CliError::io(&side, e))?;
    let maps = decode_feature_maps(&bytes).map_err(|e| CliError::schema(&side, e))?;
    let mut frames = Vec::with_capacity(doc.frames.len());
    for f in doc.frames {
        let map = maps.get(f.feature_map).cloned().ok_or_else(|| {
            CliError::schema(&side, format!("missing feature map {}", f.feature_map))
        })?;
        let gt =
            f.gt.iter()
                .map(|g| GtObject {
                    id: g.id,
                    state: StateVec::from(g.state),
                    bbox: box_from(g.bbox),
                    class_id: g.class,
                })
                .collect();
        let measurements = f
            .meas
            .iter()
            .map(|m| {
                let z = StateVec::from(m.z);
                let bbox = box_from(m.bbox);
                let (shape_feature, _) = roi_extract_or_zero(&map, z[0], z[1], &bbox);
                Measurement {
                    z,
                    score: m.score,
                    bbox,
                    shape_feature,
                    class_id: m.class,
                }
            })
            .collect();
        frames.push(Frame {
            k: f.k,
            gt,
            measurements,
            origins: f.meas.iter().map(|m| m.origin).collect(),
            feature_map: map,
        });
    }
    Ok(Scene {
        config: doc.config,
        seed: doc.seed,
        frames,
    })
}
