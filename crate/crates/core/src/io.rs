//! File formats: raw bout recordings, manifests, embeddings, annotated touches,
//! model files and transcripts.
//!
//! Line-oriented files (bouts, embeddings, touches, transcripts) are JSON lines
//! whose first line is a header carrying `format` and `schema_version`. Model
//! files are a single JSON envelope whose `content_hash` is the SHA-256 of the
//! serialized payload.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{CalibrationFile, CALIBRATION_SCHEMA_VERSION};
use crate::priority::{attach_lights, LightEvent};
use crate::sim::{Transcript, TRANSCRIPT_SCHEMA_VERSION};
use crate::skills::Featurizer;
use crate::skills::SkillModel;
use crate::strategy::StrategyModel;
use crate::types::{BoutRecord, MotionWindow, Side, WindowSource, ARM_JOINTS, WINDOW_FRAMES};

pub const BOUT_FORMAT: &str = "piste.bout";
pub const BOUT_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FORMAT: &str = "piste.manifest";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const EMBEDDINGS_FORMAT: &str = "piste.embeddings";
pub const EMBEDDINGS_SCHEMA_VERSION: u32 = 1;
pub const TOUCHES_FORMAT: &str = "piste.touches";
pub const TOUCHES_SCHEMA_VERSION: u32 = 1;
pub const TRANSCRIPTS_FORMAT: &str = "piste.transcripts";

/// Hex SHA-256 of the value's JSON serialization.
pub fn content_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(origin: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_string(),
        line,
        message: message.into(),
    }
}

/// Deserializes a parsed value, naming the offending field on failure.
fn from_value<T: DeserializeOwned>(value: Value, origin: &str, line: usize) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        if field == "." {
            parse_error(origin, line, inner.to_string())
        } else {
            parse_error(origin, line, format!("field `{field}`: {inner}"))
        }
    })
}

fn parse_line(text: &str, origin: &str, line: usize) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| parse_error(origin, line, e.to_string()))
}

fn check_format(value: &Value, expected: &'static str, version: u32) -> Result<()> {
    let found = value.get("format").and_then(Value::as_str).unwrap_or("");
    let found_version = value.get("schema_version").and_then(Value::as_u64).unwrap_or(0) as u32;
    if found != expected || found_version != version {
        return Err(Error::IncompatibleVersion {
            expected,
            expected_version: version,
            found: found.to_string(),
            found_version,
        });
    }
    Ok(())
}

/// Non-empty lines with 1-based line numbers.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JsonlHeader<M> {
    format: String,
    schema_version: u32,
    #[serde(flatten)]
    meta: M,
}

fn to_jsonl<M: Serialize, T: Serialize>(format: &str, version: u32, meta: &M, items: &[T]) -> Result<String> {
    let header = JsonlHeader {
        format: format.to_string(),
        schema_version: version,
        meta,
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

fn from_jsonl<M: DeserializeOwned, T: DeserializeOwned>(
    text: &str,
    origin: &str,
    format: &'static str,
    version: u32,
) -> Result<(M, Vec<T>)> {
    let mut lines = numbered_lines(text);
    let (n, first) = lines
        .next()
        .ok_or_else(|| parse_error(origin, 1, "empty file: missing header line"))?;
    let header = parse_line(first, origin, n)?;
    check_format(&header, format, version)?;
    let header: JsonlHeader<M> = from_value(header, origin, n)?;
    let items = lines
        .map(|(n, l)| from_value(parse_line(l, origin, n)?, origin, n))
        .collect::<Result<Vec<T>>>()?;
    Ok((header.meta, items))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct NoMeta {}

// ---------------------------------------------------------------- model files

/// A type persisted as a self-describing JSON envelope.
pub trait ModelFile: Serialize + DeserializeOwned {
    const FORMAT: &'static str;
    const SCHEMA_VERSION: u32;
}

impl ModelFile for SkillModel {
    const FORMAT: &'static str = "piste.skill_model";
    const SCHEMA_VERSION: u32 = 1;
}

impl ModelFile for StrategyModel {
    const FORMAT: &'static str = "piste.strategy_model";
    const SCHEMA_VERSION: u32 = 1;
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format: &'static str,
    schema_version: u32,
    content_hash: String,
    payload: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    content_hash: String,
    payload: Value,
}

pub fn model_to_string<T: ModelFile>(model: &T) -> Result<String> {
    let envelope = EnvelopeOut {
        format: T::FORMAT,
        schema_version: T::SCHEMA_VERSION,
        content_hash: content_hash(model)?,
        payload: model,
    };
    Ok(serde_json::to_string(&envelope)? + "\n")
}

/// Parses an envelope, checking format, version and content hash.
pub fn model_from_str<T: ModelFile>(text: &str, origin: &str) -> Result<T> {
    let value = parse_line(text, origin, 1)?;
    check_format(&value, T::FORMAT, T::SCHEMA_VERSION)?;
    let envelope: EnvelopeIn = from_value(value, origin, 1)?;
    let model: T = from_value(envelope.payload, origin, 1)?;
    let computed = content_hash(&model)?;
    if computed != envelope.content_hash {
        return Err(Error::HashMismatch {
            recorded: envelope.content_hash,
            computed,
        });
    }
    Ok(model)
}

pub fn save_model<T: ModelFile>(path: &Path, model: &T) -> Result<()> {
    write_atomic(path, model_to_string(model)?.as_bytes())
}

pub fn load_model<T: ModelFile>(path: &Path) -> Result<T> {
    model_from_str(&read_text(path)?, &path.display().to_string())
}

// ---------------------------------------------------------------- bout files

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Handedness {
    Left,
    Right,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FencerInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handedness: Option<Handedness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoutHeader {
    pub bout_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
    /// Carried for reference; no computation depends on it.
    pub fps: f64,
    #[serde(default)]
    pub left: FencerInfo,
    #[serde(default)]
    pub right: FencerInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winner: Option<Side>,
}

/// One fencer in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FencerFrame {
    pub root_x: f64,
    /// Elbow then wrist, axis-angle radians.
    pub arm: [[f64; 3]; ARM_JOINTS],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameLine {
    pub frame: usize,
    pub left: FencerFrame,
    pub right: FencerFrame,
}

/// An externally computed embedding for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalEmbedding {
    pub side: Side,
    pub window: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum BoutLine {
    Frame(FrameLine),
    Light(LightEvent),
    ExternalEmbedding(ExternalEmbedding),
}

/// A raw bout recording: per-frame fencer state plus annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct BoutFile {
    pub header: BoutHeader,
    pub frames: Vec<FrameLine>,
    pub lights: Vec<LightEvent>,
    pub external: Vec<ExternalEmbedding>,
}

/// A bout after windowing.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedBout {
    pub header: BoutHeader,
    pub record: BoutRecord,
    pub frames: usize,
    pub warnings: Vec<String>,
}

impl BoutFile {
    pub fn to_jsonl(&self) -> Result<String> {
        let lines: Vec<BoutLine> = self
            .frames
            .iter()
            .copied()
            .map(BoutLine::Frame)
            .chain(self.lights.iter().copied().map(BoutLine::Light))
            .chain(self.external.iter().cloned().map(BoutLine::ExternalEmbedding))
            .collect();
        to_jsonl(BOUT_FORMAT, BOUT_SCHEMA_VERSION, &self.header, &lines)
    }

    pub fn parse(text: &str, origin: &str) -> Result<BoutFile> {
        let mut lines = numbered_lines(text);
        let (n, first) = lines
            .next()
            .ok_or_else(|| parse_error(origin, 1, "empty file: missing header line"))?;
        let header = parse_line(first, origin, n)?;
        check_format(&header, BOUT_FORMAT, BOUT_SCHEMA_VERSION)?;
        let header: JsonlHeader<BoutHeader> = from_value(header, origin, n)?;
        let mut bout = BoutFile {
            header: header.meta,
            frames: Vec::new(),
            lights: Vec::new(),
            external: Vec::new(),
        };
        for (n, text) in lines {
            let value = parse_line(text, origin, n)?;
            let kind = value.get("type").and_then(Value::as_str).unwrap_or_default();
            match kind {
                "frame" => {
                    let f: FrameLine = from_value(value, origin, n)?;
                    if f.frame != bout.frames.len() {
                        return Err(Error::Validation(format!(
                            "{origin}:{n}: frame {} out of order (expected {})",
                            f.frame,
                            bout.frames.len()
                        )));
                    }
                    let finite = [f.left.root_x, f.right.root_x]
                        .into_iter()
                        .chain(f.left.arm.iter().chain(&f.right.arm).flatten().copied())
                        .all(f64::is_finite);
                    if !finite {
                        return Err(Error::Validation(format!(
                            "{origin}:{n}: non-finite value in frame {}",
                            f.frame
                        )));
                    }
                    bout.frames.push(f);
                }
                "light" => bout.lights.push(from_value(value, origin, n)?),
                "external_embedding" => bout.external.push(from_value(value, origin, n)?),
                other => {
                    return Err(parse_error(
                        origin,
                        n,
                        format!(
                            "field `type`: unknown line type {other:?} (expected frame, light or external_embedding)"
                        ),
                    ))
                }
            }
        }
        Ok(bout)
    }

    /// Slices into fixed windows, dropping any trailing partial window.
    pub fn into_loaded(self) -> Result<LoadedBout> {
        let BoutFile {
            header,
            frames,
            lights,
            external,
        } = self;
        let total = frames.len();
        let n = total / WINDOW_FRAMES;
        let mut warnings = Vec::new();
        if n == 0 {
            warnings.push(format!(
                "bout {}: {total} frames is shorter than one {WINDOW_FRAMES}-frame window",
                header.bout_id
            ));
        }
        let window = |side: Side, w: usize| {
            let span = &frames[w * WINDOW_FRAMES..(w + 1) * WINDOW_FRAMES];
            let pick = |f: &FrameLine| match side {
                Side::Left => f.left,
                Side::Right => f.right,
            };
            MotionWindow {
                side,
                arm_rotations: span.iter().flat_map(|f| pick(f).arm).collect(),
                root_x: span.iter().map(|f| pick(f).root_x).collect(),
                scored_light: false,
                source: WindowSource {
                    bout_id: header.bout_id.clone(),
                    start_frame: w * WINDOW_FRAMES,
                },
            }
        };
        let mut windows_left: Vec<_> = (0..n).map(|w| window(Side::Left, w)).collect();
        let mut windows_right: Vec<_> = (0..n).map(|w| window(Side::Right, w)).collect();
        attach_lights(&mut windows_left, &lights, total)?;
        attach_lights(&mut windows_right, &lights, total)?;
        let distances = (0..n)
            .map(|w| {
                let f = &frames[w * WINDOW_FRAMES];
                f.right.root_x - f.left.root_x
            })
            .collect();

        let mut ext: [Vec<Option<Vec<f64>>>; 2] = [vec![None; n], vec![None; n]];
        for e in external {
            let slot = &mut ext[usize::from(e.side == Side::Right)];
            match slot.get_mut(e.window) {
                Some(s @ None) => *s = Some(e.values),
                Some(Some(_)) => {
                    return Err(Error::Validation(format!(
                        "bout {}: duplicate {} external embedding for window {}",
                        header.bout_id, e.side, e.window
                    )))
                }
                None => warnings.push(format!(
                    "bout {}: external embedding for window {} beyond the last full window",
                    header.bout_id, e.window
                )),
            }
        }
        let [ext_left, ext_right] = ext.map(|slots| {
            let have = slots.iter().filter(|s| s.is_some()).count();
            (have, slots)
        });
        let complete = |(have, slots): (usize, Vec<Option<Vec<f64>>>), side: Side| -> Result<Vec<Vec<f64>>> {
            match have {
                0 => Ok(Vec::new()),
                h if h == slots.len() => Ok(slots.into_iter().flatten().collect()),
                h => Err(Error::Validation(format!(
                    "bout {}: {h} of {} {side} windows have external embeddings",
                    header.bout_id,
                    slots.len()
                ))),
            }
        };
        let external_left = complete(ext_left, Side::Left)?;
        let external_right = complete(ext_right, Side::Right)?;

        for w in &warnings {
            warn!("{w}");
        }
        let record = BoutRecord {
            touch_id: header.bout_id.clone(),
            windows_left,
            windows_right,
            priority: None,
            distances,
            winner: header.winner,
            external_left,
            external_right,
        };
        record.validate()?;
        Ok(LoadedBout {
            header,
            record,
            frames: total,
            warnings,
        })
    }
}

pub fn load_bout(path: &Path) -> Result<LoadedBout> {
    BoutFile::parse(&read_text(path)?, &path.display().to_string())?.into_loaded()
}

pub fn save_bout(path: &Path, bout: &BoutFile) -> Result<()> {
    write_atomic(path, bout.to_jsonl()?.as_bytes())
}

/// Loads files in parallel, preserving order.
pub fn load_bouts(paths: &[PathBuf]) -> Result<Vec<LoadedBout>> {
    paths.par_iter().map(|p| load_bout(p)).collect()
}

// ---------------------------------------------------------------- manifests

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Clustering,
    Training,
    Heldout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub schema_version: u32,
    pub bouts: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(bouts: Vec<ManifestEntry>) -> Result<Manifest> {
        let m = Manifest {
            format: MANIFEST_FORMAT.into(),
            schema_version: MANIFEST_SCHEMA_VERSION,
            bouts,
            base_dir: PathBuf::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.bouts {
            if !seen.insert(&e.path) {
                return Err(Error::Validation(format!(
                    "manifest lists {} more than once",
                    e.path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Manifest> {
        let value: Value = serde_json::from_str(text).map_err(|e| parse_error(origin, e.line(), e.to_string()))?;
        check_format(&value, MANIFEST_FORMAT, MANIFEST_SCHEMA_VERSION)?;
        let m: Manifest = from_value(value, origin, 1)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let mut m = Manifest::parse(&read_text(path)?, &path.display().to_string())?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, (serde_json::to_string_pretty(self)? + "\n").as_bytes())
    }

    pub fn paths(&self, role: Role) -> Vec<PathBuf> {
        self.bouts
            .iter()
            .filter(|e| e.role == role)
            .map(|e| self.base_dir.join(&e.path))
            .collect()
    }
}

// ---------------------------------------------------------------- embeddings

/// One embedded window together with the clip it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub values: Vec<f64>,
    pub window: MotionWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingsFile {
    pub featurizer: Featurizer,
    #[serde(skip)]
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingsFile {
    pub fn to_jsonl(&self) -> Result<String> {
        to_jsonl(EMBEDDINGS_FORMAT, EMBEDDINGS_SCHEMA_VERSION, self, &self.records)
    }

    pub fn parse(text: &str, origin: &str) -> Result<EmbeddingsFile> {
        let (mut file, records): (EmbeddingsFile, _) =
            from_jsonl(text, origin, EMBEDDINGS_FORMAT, EMBEDDINGS_SCHEMA_VERSION)?;
        file.records = records;
        let dim = file.featurizer.layout().dim;
        if let Some(r) = file.records.iter().find(|r| r.values.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.values.len(),
            });
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<EmbeddingsFile> {
        EmbeddingsFile::parse(&read_text(path)?, &path.display().to_string())
    }
}

// ---------------------------------------------------------------- touches

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TouchesMeta {
    pub delta: f64,
}

/// Annotated touches, one [`BoutRecord`] per line.
pub fn touches_to_string(delta: f64, touches: &[BoutRecord]) -> Result<String> {
    to_jsonl(TOUCHES_FORMAT, TOUCHES_SCHEMA_VERSION, &TouchesMeta { delta }, touches)
}

pub fn touches_from_str(text: &str, origin: &str) -> Result<(TouchesMeta, Vec<BoutRecord>)> {
    let (meta, touches): (TouchesMeta, Vec<BoutRecord>) =
        from_jsonl(text, origin, TOUCHES_FORMAT, TOUCHES_SCHEMA_VERSION)?;
    touches.iter().try_for_each(BoutRecord::validate)?;
    Ok((meta, touches))
}

pub fn save_touches(path: &Path, delta: f64, touches: &[BoutRecord]) -> Result<()> {
    write_atomic(path, touches_to_string(delta, touches)?.as_bytes())
}

pub fn load_touches(path: &Path) -> Result<(TouchesMeta, Vec<BoutRecord>)> {
    touches_from_str(&read_text(path)?, &path.display().to_string())
}

// ---------------------------------------------------------------- transcripts

/// Transcripts, one touch per line.
pub fn transcripts_to_string(transcripts: &[Transcript]) -> Result<String> {
    to_jsonl(TRANSCRIPTS_FORMAT, TRANSCRIPT_SCHEMA_VERSION, &NoMeta {}, transcripts)
}

pub fn transcripts_from_str(text: &str, origin: &str) -> Result<Vec<Transcript>> {
    let (_, ts): (NoMeta, Vec<Transcript>) = from_jsonl(text, origin, TRANSCRIPTS_FORMAT, TRANSCRIPT_SCHEMA_VERSION)?;
    Ok(ts)
}

pub fn save_transcripts(path: &Path, transcripts: &[Transcript]) -> Result<()> {
    write_atomic(path, transcripts_to_string(transcripts)?.as_bytes())
}

pub fn load_transcripts(path: &Path) -> Result<Vec<Transcript>> {
    transcripts_from_str(&read_text(path)?, &path.display().to_string())
}

// ---------------------------------------------------------------- calibration

pub fn load_calibration(path: &Path) -> Result<CalibrationFile> {
    let origin = path.display().to_string();
    let value: Value =
        serde_json::from_str(&read_text(path)?).map_err(|e| parse_error(&origin, e.line(), e.to_string()))?;
    let found_version = value.get("schema_version").and_then(Value::as_u64).unwrap_or(0) as u32;
    if found_version != CALIBRATION_SCHEMA_VERSION {
        return Err(Error::IncompatibleVersion {
            expected: "calibration",
            expected_version: CALIBRATION_SCHEMA_VERSION,
            found: "calibration".into(),
            found_version,
        });
    }
    from_value(value, &origin, 1)
}
