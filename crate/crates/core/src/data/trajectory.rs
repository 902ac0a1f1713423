//! Trajectory record and its on-disk layout.
//!
//! A file is a UTF-8 manifest of `key=value` lines closed by a `---` line,
//! followed by one binary block per stream. Each block is an 8-byte
//! little-endian value count, a dims header (`u64` rank then one `u64` per
//! axis) and the values as little-endian `f64`. The manifest carries a CRC-32
//! of every block's value bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::context::{CameraFrame, VisualObservation};
use crate::data::skills::SkillLabel;
use crate::error::{Error, Result};
use crate::flow::ACTION_DIM;
use crate::geometry::{Pose, Wrench};
use crate::nn::Matrix;

pub const FORMAT_NAME: &str = "foca-trajectory";
pub const FORMAT_VERSION: u32 = 1;
const STREAMS: [&str; 6] = ["timestamps", "frames", "poses", "wrenches", "actions", "progress"];

/// Force factor used when labelling a subtask with the transition model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForceCondition {
    /// Force factor saturated (`f = m`).
    Ignored,
    Range { n: f64, m: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubtaskSegment {
    pub start: usize,
    pub end: usize,
    pub prompt: String,
    pub force: ForceCondition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task: String,
    pub task_prompt: String,
    pub seed: u64,
    pub timestamps: Vec<f64>,
    pub frames: Vec<VisualObservation>,
    pub poses: Vec<Pose>,
    pub wrenches: Vec<Wrench>,
    /// Commanded action per step, packed `[Δp; f; s]`.
    pub actions: Vec<[f64; ACTION_DIM]>,
    /// Transition labels `ŝ` per step.
    pub progress: Vec<f64>,
    pub segments: Vec<SubtaskSegment>,
    pub skills: Vec<SkillLabel>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Index of the segment containing step `k`.
    pub fn segment_at(&self, k: usize) -> Option<usize> {
        self.segments.iter().position(|s| s.start <= k && k < s.end)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::domain("trajectory has no steps"));
        }
        let lens = [
            self.frames.len(),
            self.poses.len(),
            self.wrenches.len(),
            self.actions.len(),
            self.progress.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::dim(format!("per-step arrays have lengths {lens:?}, timestamps {n}")));
        }
        if self.timestamps.windows(2).any(|w| !(w[1] > w[0])) || self.timestamps.iter().any(|t| !t.is_finite()) {
            return Err(Error::domain("timestamps must be finite and strictly increasing"));
        }
        let shape = frame_shape(&self.frames[0])?;
        for f in &self.frames {
            if frame_shape(f)? != shape {
                return Err(Error::dim("visual frames change shape within a trajectory"));
            }
            f.validate(shape.2)?;
        }
        for p in &self.poses {
            p.validate()?;
        }
        if self.wrenches.iter().any(|w| !w.is_finite())
            || self.actions.iter().flatten().any(|v| !v.is_finite())
            || self.progress.iter().any(|v| !v.is_finite())
        {
            return Err(Error::numeric("non-finite trajectory values"));
        }
        let mut cursor = 0;
        for s in &self.segments {
            if s.start != cursor || s.end <= s.start || s.end > n {
                return Err(Error::Annotation(format!(
                    "segment {}..{} breaks the sorted cover of 0..{n}",
                    s.start, s.end
                )));
            }
            if s.prompt.contains('\n') {
                return Err(Error::Annotation("segment prompts must be single-line".into()));
            }
            cursor = s.end;
        }
        if !self.segments.is_empty() && cursor != n {
            return Err(Error::Annotation(format!("segments end at {cursor}, trajectory at {n}")));
        }
        Ok(())
    }
}

fn frame_shape(f: &VisualObservation) -> Result<(usize, usize, usize)> {
    let first = f
        .cameras
        .first()
        .ok_or_else(|| Error::domain("visual frame without cameras"))?;
    let (t, d) = first.features.shape();
    if f.cameras.iter().any(|c| c.features.shape() != (t, d)) {
        return Err(Error::dim("cameras in one frame differ in shape"));
    }
    Ok((f.cameras.len(), t, d))
}

struct Stream {
    dims: Vec<usize>,
    values: Vec<f64>,
}

fn streams(t: &Trajectory) -> Result<Vec<Stream>> {
    let n = t.len();
    let (c, tok, feat) = frame_shape(&t.frames[0])?;
    let mut frames = Vec::with_capacity(n * c * tok * feat);
    for f in &t.frames {
        for cam in &f.cameras {
            frames.extend_from_slice(cam.features.data());
        }
    }
    Ok(vec![
        Stream { dims: vec![n], values: t.timestamps.clone() },
        Stream { dims: vec![n, c, tok, feat], values: frames },
        Stream { dims: vec![n, 7], values: t.poses.iter().flat_map(|p| p.to_array()).collect() },
        Stream { dims: vec![n, 6], values: t.wrenches.iter().flat_map(|w| w.to_array()).collect() },
        Stream { dims: vec![n, ACTION_DIM], values: t.actions.iter().flatten().copied().collect() },
        Stream { dims: vec![n], values: t.progress.clone() },
    ])
}

fn value_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn format_condition(c: ForceCondition) -> String {
    match c {
        ForceCondition::Ignored => "none".into(),
        ForceCondition::Range { n, m } => format!("{n:?},{m:?}"),
    }
}

fn parse_condition(s: &str) -> Result<ForceCondition> {
    if s == "none" {
        return Ok(ForceCondition::Ignored);
    }
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| Error::Format(format!("bad force condition `{s}`")))?;
    Ok(ForceCondition::Range { n: parse_f64(a)?, m: parse_f64(b)? })
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Format(format!("`{s}` is not a number")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::Format(format!("`{s}` is not a count")))
}

/// Serializes a validated trajectory to bytes.
pub fn encode_trajectory(t: &Trajectory) -> Result<Vec<u8>> {
    t.validate()?;
    let streams = streams(t)?;
    let mut m = String::new();
    let _ = writeln!(m, "format={FORMAT_NAME}");
    let _ = writeln!(m, "version={FORMAT_VERSION}");
    let _ = writeln!(m, "task={}", t.task);
    let _ = writeln!(m, "task_prompt={}", t.task_prompt);
    let _ = writeln!(m, "seed={}", t.seed);
    let _ = writeln!(m, "steps={}", t.len());
    let ids: Vec<String> = t.frames[0].cameras.iter().map(|c| c.camera_id.to_string()).collect();
    let _ = writeln!(m, "camera_ids={}", ids.join(","));
    for (i, s) in t.segments.iter().enumerate() {
        let _ = writeln!(m, "segment.{i}={}:{}:{}:{}", s.start, s.end, format_condition(s.force), s.prompt);
    }
    let skills: Vec<&str> = t.skills.iter().map(|s| s.as_str()).collect();
    let _ = writeln!(m, "skills={}", skills.join(","));
    for (name, s) in STREAMS.iter().zip(&streams) {
        let _ = writeln!(m, "crc.{name}={:08x}", crc32fast::hash(&value_bytes(&s.values)));
    }
    m.push_str("---\n");
    let mut out = m.into_bytes();
    for s in &streams {
        out.extend_from_slice(&(s.values.len() as u64).to_le_bytes());
        out.extend_from_slice(&(s.dims.len() as u64).to_le_bytes());
        for d in &s.dims {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        out.extend_from_slice(&value_bytes(&s.values));
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, stream: &str, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Truncated {
            stream: stream.to_string(),
            detail: format!("{what} needs {n} bytes, {} remain", self.bytes.len() - self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, stream: &str, what: &str) -> Result<u64> {
        let b = self.take(8, stream, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

fn read_stream(r: &mut Reader<'_>, name: &str, crc: u32) -> Result<Stream> {
    let len = r.u64(name, "length prefix")?;
    let rank = r.u64(name, "dims header")?;
    if rank == 0 || rank > 8 {
        return Err(Error::Truncated { stream: name.into(), detail: format!("implausible rank {rank}") });
    }
    let dims: Vec<usize> = (0..rank)
        .map(|_| r.u64(name, "dims header").map(|d| d as usize))
        .collect::<Result<_>>()?;
    let product = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
    if product != Some(len) {
        return Err(Error::Truncated {
            stream: name.into(),
            detail: format!("length prefix {len} disagrees with dims {dims:?}"),
        });
    }
    let byte_len = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_mul(8))
        .ok_or_else(|| Error::Truncated { stream: name.into(), detail: format!("length {len} overflows") })?;
    let raw = r.take(byte_len, name, "values")?;
    if crc32fast::hash(raw) != crc {
        return Err(Error::Checksum { stream: name.into() });
    }
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Stream { dims, values })
}

/// Splits a `key=value` manifest from the payload at the `---` line.
pub(crate) fn split_manifest(bytes: &[u8]) -> Result<(BTreeMap<String, String>, &[u8])> {
    let marker = b"---\n";
    let mut start = 0;
    let mut map = BTreeMap::new();
    loop {
        let rel = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("manifest is not terminated by `---`".into()))?;
        let line = &bytes[start..start + rel + 1];
        if line == marker {
            return Ok((map, &bytes[start + rel + 1..]));
        }
        let text = std::str::from_utf8(&line[..line.len() - 1])
            .map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
        if !text.trim().is_empty() {
            let (k, v) = text
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("manifest line `{text}` has no `=`")))?;
            map.insert(k.to_string(), v.to_string());
        }
        start += rel + 1;
    }
}

fn get<'m>(m: &'m BTreeMap<String, String>, key: &str) -> Result<&'m str> {
    m.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Format(format!("manifest lacks `{key}`")))
}

pub fn decode_trajectory(bytes: &[u8]) -> Result<Trajectory> {
    let (m, payload) = split_manifest(bytes)?;
    if get(&m, "format")? != FORMAT_NAME {
        return Err(Error::Format(format!("not a {FORMAT_NAME} file")));
    }
    let version = get(&m, "version")?;
    if version != FORMAT_VERSION.to_string() {
        return Err(Error::Version { expected: FORMAT_VERSION, found: version.to_string() });
    }
    let n = parse_usize(get(&m, "steps")?)?;
    let camera_ids: Vec<u32> = get(&m, "camera_ids")?
        .split(',')
        .map(|s| s.parse().map_err(|_| Error::Format(format!("bad camera id `{s}`"))))
        .collect::<Result<_>>()?;

    let mut r = Reader { bytes: payload, pos: 0 };
    let mut parsed = Vec::with_capacity(STREAMS.len());
    for name in STREAMS {
        let crc = u32::from_str_radix(get(&m, &format!("crc.{name}"))?, 16)
            .map_err(|_| Error::Format(format!("bad checksum for `{name}`")))?;
        parsed.push(read_stream(&mut r, name, crc)?);
    }
    if r.pos != payload.len() {
        return Err(Error::Format(format!("{} trailing bytes", payload.len() - r.pos)));
    }
    let expect = |i: usize, dims: &[usize]| -> Result<()> {
        if parsed[i].dims != dims {
            return Err(Error::Format(format!(
                "stream `{}` has dims {:?}, expected {dims:?}",
                STREAMS[i], parsed[i].dims
            )));
        }
        Ok(())
    };
    expect(0, &[n])?;
    let fd = parsed[1].dims.clone();
    if fd.len() != 4 || fd[0] != n || fd[1] != camera_ids.len() {
        return Err(Error::Format(format!("frames stream has dims {fd:?}")));
    }
    expect(2, &[n, 7])?;
    expect(3, &[n, 6])?;
    expect(4, &[n, ACTION_DIM])?;
    expect(5, &[n])?;

    let (tok, feat) = (fd[2], fd[3]);
    let per_cam = tok * feat;
    let frames = parsed[1]
        .values
        .chunks(camera_ids.len() * per_cam)
        .map(|chunk| {
            Ok(VisualObservation {
                cameras: camera_ids
                    .iter()
                    .zip(chunk.chunks(per_cam))
                    .map(|(&id, v)| Ok(CameraFrame { camera_id: id, features: Matrix::new(tok, feat, v.to_vec())? }))
                    .collect::<Result<_>>()?,
            })
        })
        .collect::<Result<_>>()?;

    let mut segments = Vec::new();
    for i in 0.. {
        let Some(v) = m.get(&format!("segment.{i}")) else { break };
        let mut parts = v.splitn(4, ':');
        let mut next = || parts.next().ok_or_else(|| Error::Format(format!("bad segment `{v}`")));
        let start = parse_usize(next()?)?;
        let end = parse_usize(next()?)?;
        let force = parse_condition(next()?)?;
        let prompt = next()?.to_string();
        segments.push(SubtaskSegment { start, end, prompt, force });
    }
    let skills_raw = get(&m, "skills")?;
    let skills = if skills_raw.is_empty() {
        Vec::new()
    } else {
        skills_raw.split(',').map(str::parse).collect::<Result<_>>()?
    };

    let t = Trajectory {
        task: get(&m, "task")?.to_string(),
        task_prompt: get(&m, "task_prompt")?.to_string(),
        seed: get(&m, "seed")?
            .parse()
            .map_err(|_| Error::Format("bad seed".into()))?,
        timestamps: parsed[0].values.clone(),
        frames,
        poses: parsed[2].values.chunks(7).map(Pose::from_slice).collect::<Result<_>>()?,
        wrenches: parsed[3].values.chunks(6).map(Wrench::from_slice).collect::<Result<_>>()?,
        actions: parsed[4].values.chunks(ACTION_DIM).map(|c| c.try_into().expect("action width")).collect(),
        progress: parsed[5].values.clone(),
        segments,
        skills,
    };
    t.validate()?;
    Ok(t)
}

pub fn write_trajectory(t: &Trajectory, path: &Path) -> Result<()> {
    let bytes = encode_trajectory(t)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_trajectory(&bytes)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::Quaternion;

    pub(crate) fn sample(n: usize) -> Trajectory {
        let frame = |k: usize| VisualObservation {
            cameras: (0..2)
                .map(|c| CameraFrame {
                    camera_id: c,
                    features: Matrix::new(2, 3, (0..6).map(|i| (k * 6 + i) as f64 * 0.1 + c as f64).collect()).unwrap(),
                })
                .collect(),
        };
        Trajectory {
            task: "press".into(),
            task_prompt: "press the bottle".into(),
            seed: 7,
            timestamps: (0..n).map(|k| k as f64 / 30.0).collect(),
            frames: (0..n).map(frame).collect(),
            poses: (0..n)
                .map(|k| Pose::new([k as f64, 0.5, -0.25], Quaternion::from_rotation_vector([0.0, 0.1, 0.0])).unwrap())
                .collect(),
            wrenches: (0..n).map(|k| Wrench::from_force([0.0, 0.0, k as f64])).collect(),
            actions: (0..n).map(|k| [k as f64 * 1e-3; ACTION_DIM]).collect(),
            progress: (0..n).map(|k| k as f64 / n as f64).collect(),
            segments: vec![
                SubtaskSegment { start: 0, end: n / 2, prompt: "approach".into(), force: ForceCondition::Ignored },
                SubtaskSegment {
                    start: n / 2,
                    end: n,
                    prompt: "press: hold".into(),
                    force: ForceCondition::Range { n: 0.0, m: 20.0 },
                },
            ],
            skills: vec![SkillLabel::Explore, SkillLabel::Push],
        }
    }

    #[test]
    fn round_trip_bit_identical() {
        let t = sample(6);
        let bytes = encode_trajectory(&t).unwrap();
        let back = decode_trajectory(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(encode_trajectory(&back).unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.traj");
        write_trajectory(&sample(4), &p).unwrap();
        assert_eq!(read_trajectory(&p).unwrap(), sample(4));
        assert!(matches!(read_trajectory(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn empty_trajectory_rejected() {
        let mut t = sample(4);
        t.timestamps.clear();
        t.frames.clear();
        t.poses.clear();
        t.wrenches.clear();
        t.actions.clear();
        t.progress.clear();
        t.segments.clear();
        assert!(encode_trajectory(&t).is_err());
    }

    fn payload_start(bytes: &[u8]) -> usize {
        bytes.windows(4).position(|w| w == b"---\n").unwrap() + 4
    }

    #[test]
    fn corrupted_length_prefix_is_truncation() {
        let mut bytes = encode_trajectory(&sample(4)).unwrap();
        let p = payload_start(&bytes);
        bytes[p..p + 8].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_trajectory(&bytes), Err(Error::Truncated { .. })));

        let bytes = encode_trajectory(&sample(4)).unwrap();
        assert!(matches!(decode_trajectory(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn flipped_value_is_checksum_error() {
        let mut bytes = encode_trajectory(&sample(4)).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        assert!(matches!(decode_trajectory(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn version_mismatch() {
        let bytes = encode_trajectory(&sample(4)).unwrap();
        let mut changed = bytes.clone();
        let idx = bytes.windows(9).position(|w| w == b"version=1").unwrap();
        changed[idx + 8] = b'9';
        assert!(matches!(decode_trajectory(&changed), Err(Error::Version { expected: 1, .. })));
    }

    #[test]
    fn validation_rules() {
        let mut t = sample(4);
        t.timestamps[2] = t.timestamps[1];
        assert!(t.validate().is_err());
        let mut t = sample(4);
        t.segments[1].start = 3;
        assert!(matches!(t.validate(), Err(Error::Annotation(_))));
        let mut t = sample(4);
        t.poses.pop();
        assert!(matches!(t.validate(), Err(Error::Dimension(_))));
    }
}
