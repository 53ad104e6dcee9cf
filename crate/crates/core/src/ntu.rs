//! NTU RGB+D `.skeleton` files: parsing, serialisation, blacklists, benchmark
//! splits and conversion into per-body samples.
//!
//! Layout: a frame-count line; per frame a body-count line; per body a line
//! with the body id and 9 tracking values, a joint-count line, then one line
//! of 12 values per joint (x, y, z, depth x/y, colour x/y, orientation
//! w/x/y/z, tracking state).

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::skeleton::{Dataset, LabeledSample, SequenceTensor, SkeletonGraph, Split};

pub const JOINTS_PER_BODY: usize = 25;
pub const BODY_META_VALUES: usize = 9;
pub const JOINT_VALUES: usize = 12;
/// Bodies kept per recording.
pub const MAX_BODIES: usize = 2;

/// Cross-subject training performers (NTU 60).
pub const CS_TRAIN_PERFORMERS: [u32; 20] = [
    1, 2, 4, 5, 8, 9, 13, 14, 15, 16, 17, 18, 19, 25, 27, 28, 31, 34, 35, 38,
];

/// Cross-subject training performers (NTU 120).
pub const CSUB_TRAIN_PERFORMERS: [u32; 53] = [
    1, 2, 4, 5, 8, 9, 13, 14, 15, 16, 17, 18, 19, 25, 27, 28, 31, 34, 35, 38, 45, 46, 47, 49, 50,
    52, 53, 54, 55, 56, 57, 58, 59, 70, 74, 78, 80, 81, 82, 83, 84, 85, 86, 89, 91, 92, 93, 94, 95,
    97, 98, 100, 103,
];

/// Cross-view training cameras; camera 1 is held out.
pub const CV_TRAIN_CAMERAS: [u32; 2] = [2, 3];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NtuError {
    #[error("malformed header on line {line}: {msg}")]
    MalformedHeader { line: usize, msg: String },
    #[error("file ends early at line {line}")]
    TruncatedFile { line: usize },
    #[error("line {line}: declared {declared} {what}, found {actual}")]
    CountMismatch {
        line: usize,
        what: &'static str,
        declared: usize,
        actual: usize,
    },
    #[error("line {line}: expected {expected} fields, found {found}")]
    MalformedLine {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {token:?} is not a finite decimal number")]
    InvalidNumber { line: usize, token: String },
    #[error("unexpected content after the last frame at line {line}")]
    TrailingData { line: usize },
    #[error("file is not valid UTF-8")]
    Encoding,
    #[error("bad sample name {0:?}")]
    BadFilename(String),
    #[error("no body appears in any frame")]
    EmptySequence,
    #[error("graph has {0} joints, NTU bodies have 25")]
    GraphMismatch(usize),
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, NtuError>;

/// Decoded `SsssCcccPpppRrrrAaaa` sample name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleId {
    pub setup: u32,
    pub camera: u32,
    pub performer: u32,
    pub replication: u32,
    pub action: u32,
}

impl SampleId {
    /// Accepts a bare stem or a path ending in `.skeleton`.
    pub fn from_filename(name: &str) -> Result<Self> {
        let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
        let stem = base.strip_suffix(".skeleton").unwrap_or(base);
        stem.parse()
    }
}

impl FromStr for SampleId {
    type Err = NtuError;

    fn from_str(stem: &str) -> Result<Self> {
        let bad = || NtuError::BadFilename(stem.to_string());
        let b = stem.as_bytes();
        if b.len() != 20 || !b.is_ascii() {
            return Err(bad());
        }
        let mut fields = [0u32; 5];
        for (k, tag) in b"SCPRA".iter().enumerate() {
            let chunk = &stem[4 * k..4 * k + 4];
            if chunk.as_bytes()[0] != *tag {
                return Err(bad());
            }
            let digits = &chunk[1..];
            if !digits.bytes().all(|c| c.is_ascii_digit()) {
                return Err(bad());
            }
            fields[k] = digits.parse().map_err(|_| bad())?;
            if fields[k] == 0 {
                return Err(bad());
            }
        }
        let [setup, camera, performer, replication, action] = fields;
        Ok(Self {
            setup,
            camera,
            performer,
            replication,
            action,
        })
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "S{:03}C{:03}P{:03}R{:03}A{:03}",
            self.setup, self.camera, self.performer, self.replication, self.action
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawBody {
    pub body_id: String,
    pub meta: [f64; BODY_META_VALUES],
    pub joints: Vec<[f64; JOINT_VALUES]>,
}

impl RawBody {
    pub fn position(&self, joint: usize) -> [f64; 3] {
        let j = &self.joints[joint];
        [j[0], j[1], j[2]]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawFrame {
    pub bodies: Vec<RawBody>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawNtuSequence {
    pub frames: Vec<RawFrame>,
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, Vec<&'a str>)> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok((i + 1, l.split_whitespace().collect()))
            }
            None => Err(NtuError::TruncatedFile {
                line: self.line + 1,
            }),
        }
    }

    fn count(&mut self) -> Result<(usize, usize)> {
        let (line, toks) = self.next()?;
        if toks.len() != 1 {
            return Err(NtuError::MalformedLine {
                line,
                expected: 1,
                found: toks.len(),
            });
        }
        let n = toks[0].parse().map_err(|_| NtuError::InvalidNumber {
            line,
            token: toks[0].to_string(),
        })?;
        Ok((line, n))
    }
}

fn real(line: usize, tok: &str) -> Result<f64> {
    // Rust's float grammar also takes "inf" and "NaN"; only decimals pass.
    let decimal = tok
        .bytes()
        .all(|c| c.is_ascii_digit() || matches!(c, b'.' | b'-' | b'+' | b'e' | b'E'));
    match tok.parse::<f64>() {
        Ok(x) if decimal && x.is_finite() => Ok(x),
        _ => Err(NtuError::InvalidNumber {
            line,
            token: tok.to_string(),
        }),
    }
}

fn reals<const N: usize>(line: usize, toks: &[&str]) -> Result<[f64; N]> {
    if toks.len() != N {
        return Err(NtuError::MalformedLine {
            line,
            expected: N,
            found: toks.len(),
        });
    }
    let mut out = [0.0; N];
    for (o, t) in out.iter_mut().zip(toks) {
        *o = real(line, t)?;
    }
    Ok(out)
}

/// Parses the body of a `.skeleton` file named `filename`.
pub fn parse_skeleton_text(text: &str, filename: &str) -> Result<(SampleId, RawNtuSequence)> {
    let id = SampleId::from_filename(filename)?;
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    let (_, header) = lines.next()?;
    let num_frames: usize = match header.as_slice() {
        [tok] => tok.parse().map_err(|_| NtuError::MalformedHeader {
            line: 1,
            msg: format!("frame count {tok:?}"),
        })?,
        _ => {
            return Err(NtuError::MalformedHeader {
                line: 1,
                msg: format!("expected one frame count, found {} fields", header.len()),
            })
        }
    };

    let mut frames = Vec::new();
    for _ in 0..num_frames {
        let (_, num_bodies) = lines.count()?;
        let mut bodies = Vec::new();
        for _ in 0..num_bodies {
            let (line, toks) = lines.next()?;
            let Some((body_id, rest)) = toks.split_first() else {
                return Err(NtuError::MalformedLine {
                    line,
                    expected: 1 + BODY_META_VALUES,
                    found: 0,
                });
            };
            if rest.len() != BODY_META_VALUES {
                return Err(NtuError::MalformedLine {
                    line,
                    expected: 1 + BODY_META_VALUES,
                    found: toks.len(),
                });
            }
            let meta = reals(line, rest)?;
            let (line, num_joints) = lines.count()?;
            if num_joints != JOINTS_PER_BODY {
                return Err(NtuError::CountMismatch {
                    line,
                    what: "joints",
                    declared: num_joints,
                    actual: JOINTS_PER_BODY,
                });
            }
            let mut joints = Vec::with_capacity(JOINTS_PER_BODY);
            for _ in 0..JOINTS_PER_BODY {
                let (line, toks) = lines.next()?;
                joints.push(reals(line, &toks)?);
            }
            bodies.push(RawBody {
                body_id: body_id.to_string(),
                meta,
                joints,
            });
        }
        frames.push(RawFrame { bodies });
    }
    while let Ok((line, toks)) = lines.next() {
        if !toks.is_empty() {
            return Err(NtuError::TrailingData { line });
        }
    }
    Ok((id, RawNtuSequence { frames }))
}

pub fn parse_skeleton_bytes(bytes: &[u8], filename: &str) -> Result<(SampleId, RawNtuSequence)> {
    let text = std::str::from_utf8(bytes).map_err(|_| NtuError::Encoding)?;
    parse_skeleton_text(text, filename)
}

/// Writes the text layout back; reparsing yields an identical sequence.
pub fn to_skeleton_text(raw: &RawNtuSequence) -> String {
    use fmt::Write;
    let join = |vals: &[f64]| {
        vals.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut out = String::new();
    let _ = writeln!(out, "{}", raw.frames.len());
    for frame in &raw.frames {
        let _ = writeln!(out, "{}", frame.bodies.len());
        for body in &frame.bodies {
            let _ = writeln!(out, "{} {}", body.body_id, join(&body.meta));
            let _ = writeln!(out, "{}", body.joints.len());
            for j in &body.joints {
                let _ = writeln!(out, "{}", join(j));
            }
        }
    }
    out
}

/// `ids` minus `blacklist`, order preserved.
pub fn apply_blacklist(ids: &[SampleId], blacklist: &[SampleId]) -> Vec<SampleId> {
    let bad: HashSet<_> = blacklist.iter().collect();
    ids.iter().filter(|id| !bad.contains(id)).copied().collect()
}

/// One sample name per line; blank lines and `#` comments are skipped.
pub fn parse_blacklist(text: &str) -> Result<Vec<SampleId>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(SampleId::from_filename)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Benchmark {
    CrossSubject,
    CrossView,
    CrossSubject120,
    CrossSetup,
}

impl FromStr for Benchmark {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "cs" => Ok(Self::CrossSubject),
            "cv" => Ok(Self::CrossView),
            "csub" => Ok(Self::CrossSubject120),
            "cset" => Ok(Self::CrossSetup),
            other => Err(format!("unknown benchmark {other:?} (cs|cv|csub|cset)")),
        }
    }
}

impl Benchmark {
    pub fn split_of(self, id: &SampleId) -> Split {
        let train = match self {
            Self::CrossSubject => CS_TRAIN_PERFORMERS.contains(&id.performer),
            Self::CrossSubject120 => CSUB_TRAIN_PERFORMERS.contains(&id.performer),
            Self::CrossView => CV_TRAIN_CAMERAS.contains(&id.camera),
            Self::CrossSetup => id.setup.is_multiple_of(2),
        };
        if train {
            Split::Train
        } else {
            Split::Eval
        }
    }
}

/// Summed squared frame-to-frame displacement of one body's joints, over
/// consecutive frames in which it is present.
pub fn motion_energy(raw: &RawNtuSequence, body_id: &str) -> f64 {
    fn find<'a>(f: &'a RawFrame, id: &str) -> Option<&'a RawBody> {
        f.bodies.iter().find(|b| b.body_id == id)
    }
    raw.frames
        .windows(2)
        .filter_map(|w| Some((find(&w[0], body_id)?, find(&w[1], body_id)?)))
        .map(|(a, b)| {
            (0..JOINTS_PER_BODY)
                .map(|j| {
                    let (p, q) = (a.position(j), b.position(j));
                    (0..3).map(|c| (q[c] - p[c]).powi(2)).sum::<f64>()
                })
                .sum::<f64>()
        })
        .sum()
}

/// Splits a recording into per-body samples: at most two bodies, ranked by
/// motion energy, xyz only, truncated or padded to `max_frames`.
pub fn raw_to_samples(
    raw: &RawNtuSequence,
    id: &SampleId,
    max_frames: usize,
    graph: &SkeletonGraph,
) -> Result<Vec<LabeledSample>> {
    if graph.num_joints() != JOINTS_PER_BODY {
        return Err(NtuError::GraphMismatch(graph.num_joints()));
    }
    let mut body_ids: Vec<&str> = Vec::new();
    for frame in &raw.frames {
        for b in &frame.bodies {
            if !body_ids.contains(&b.body_id.as_str()) {
                body_ids.push(&b.body_id);
            }
        }
    }
    if body_ids.is_empty() {
        return Err(NtuError::EmptySequence);
    }
    if body_ids.len() > MAX_BODIES {
        let energy: Vec<f64> = body_ids.iter().map(|b| motion_energy(raw, b)).collect();
        let mut order: Vec<usize> = (0..body_ids.len()).collect();
        order.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]).then(a.cmp(&b)));
        let mut keep = order[..MAX_BODIES].to_vec();
        keep.sort_unstable();
        body_ids = keep.into_iter().map(|i| body_ids[i]).collect();
    }

    let real = raw.frames.len().min(max_frames);
    Ok(body_ids
        .into_iter()
        .map(|body_id| {
            let mut seq = SequenceTensor::empty(3, max_frames, JOINTS_PER_BODY);
            for (t, frame) in raw.frames.iter().take(real).enumerate() {
                if let Some(b) = frame.bodies.iter().find(|b| b.body_id == body_id) {
                    for v in 0..JOINTS_PER_BODY {
                        let p = b.position(v);
                        seq.set_joint(t, v, &[p[0] as f32, p[1] as f32, p[2] as f32]);
                    }
                }
            }
            seq.set_num_real_frames(real);
            LabeledSample {
                sequence: seq,
                label: id.action as usize - 1,
                sample_id: id.to_string(),
            }
        })
        .collect())
}

/// Reads every `.skeleton` file under `dir` (sorted by name), drops
/// blacklisted recordings and keeps those in `part` of `benchmark`.
pub fn load_directory(
    dir: &Path,
    blacklist: &[SampleId],
    benchmark: Benchmark,
    part: Split,
    max_frames: usize,
    graph: &SkeletonGraph,
) -> Result<Dataset> {
    let io = |e: std::io::Error| NtuError::Io(format!("{}: {e}", dir.display()));
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "skeleton"))
        .collect();
    paths.sort();
    let bad: HashSet<_> = blacklist.iter().collect();
    let mut samples = Vec::new();
    let mut max_action = 0;
    for path in paths {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let id = SampleId::from_filename(name)?;
        max_action = max_action.max(id.action);
        if bad.contains(&id) || benchmark.split_of(&id) != part {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(io)?;
        let (_, raw) = parse_skeleton_bytes(&bytes, name)?;
        samples.extend(raw_to_samples(&raw, &id, max_frames, graph)?);
    }
    Ok(Dataset {
        samples,
        num_classes: if max_action <= 60 { 60 } else { 120 },
        graph: graph.clone(),
        split: part,
    })
}
