//! Posture-indexed link attenuation traces and the shipped synthetic set.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::handshake::{NodeId, SimTime};

use super::SimError;

pub const NODE_COUNT: usize = 7;
pub const SINK: NodeId = 1;
pub const SOURCES: [NodeId; 6] = [0, 2, 3, 4, 5, 6];
pub const NODE_NAMES: [&str; NODE_COUNT] = ["navel", "chest", "head", "upper_arm", "ankle", "thigh", "wrist"];

/// Frame length used by the shipped traces.
pub const DEFAULT_FRAME_DURATION_MS: u64 = 100;
/// Frames per posture in the shipped traces.
pub const SYNTHETIC_FRAMES: usize = 30;
/// Name of the sidecar file holding `frame_duration_ms`.
pub const TRACE_CONFIG_FILE: &str = "traces.conf";

const NS_PER_MS: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Posture {
    Walk,
    Run,
    Weak,
    Sit,
    Wear,
    Sleep,
    Lie,
}

impl Posture {
    pub const ALL: [Posture; 7] =
        [Posture::Walk, Posture::Run, Posture::Weak, Posture::Sit, Posture::Wear, Posture::Sleep, Posture::Lie];

    pub fn name(self) -> &'static str {
        match self {
            Posture::Walk => "walk",
            Posture::Run => "run",
            Posture::Weak => "weak",
            Posture::Sit => "sit",
            Posture::Wear => "wear",
            Posture::Sleep => "sleep",
            Posture::Lie => "lie",
        }
    }

    pub fn index(self) -> usize {
        Posture::ALL.iter().position(|&p| p == self).expect("listed")
    }
}

impl fmt::Display for Posture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Posture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Posture::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown posture {s}"))
    }
}

/// Mean attenuation and its standard deviation for one directed link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkStats {
    pub mean_db: f64,
    pub std_db: f64,
}

/// Per-frame attenuation for every directed link of the body network.
/// Frames loop continuously at `frame_duration`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkTrace {
    posture: Posture,
    frame_duration: SimTime,
    entries: Vec<Option<LinkStats>>,
    frames: usize,
}

fn slot(frame: usize, src: NodeId, dst: NodeId) -> usize {
    (frame * NODE_COUNT + src as usize) * NODE_COUNT + dst as usize
}

impl LinkTrace {
    /// An empty trace; every entry must be filled before it validates.
    pub fn empty(posture: Posture, frames: usize, frame_duration_ms: u64) -> Self {
        LinkTrace {
            posture,
            frame_duration: frame_duration_ms.max(1) * NS_PER_MS,
            entries: vec![None; frames * NODE_COUNT * NODE_COUNT],
            frames,
        }
    }

    /// Builds a complete trace from a generator `f(frame, src, dst)`.
    pub fn from_fn(
        posture: Posture,
        frames: usize,
        frame_duration_ms: u64,
        mut f: impl FnMut(usize, NodeId, NodeId) -> LinkStats,
    ) -> Result<Self, SimError> {
        let mut t = LinkTrace::empty(posture, frames, frame_duration_ms);
        for frame in 0..frames {
            for (src, dst) in directed_links() {
                t.set(frame, src, dst, f(frame, src, dst))?;
            }
        }
        Ok(t)
    }

    /// Every link at the same attenuation and deviation, for one frame.
    pub fn uniform(posture: Posture, mean_db: f64, std_db: f64) -> Self {
        LinkTrace::from_fn(posture, 1, DEFAULT_FRAME_DURATION_MS, |_, _, _| LinkStats { mean_db, std_db })
            .expect("uniform stats are valid")
    }

    /// 0 dB and no shadowing on every link.
    pub fn perfect(posture: Posture) -> Self {
        LinkTrace::uniform(posture, 0.0, 0.0)
    }

    pub fn set(&mut self, frame: usize, src: NodeId, dst: NodeId, stats: LinkStats) -> Result<(), SimError> {
        if frame >= self.frames || src as usize >= NODE_COUNT || dst as usize >= NODE_COUNT || src == dst {
            return Err(SimError::InvalidTrace(format!("no slot for frame {frame} link {src}->{dst}")));
        }
        if !(stats.std_db >= 0.0) || !stats.mean_db.is_finite() || !stats.std_db.is_finite() {
            return Err(SimError::InvalidTrace(format!("bad stats on frame {frame} link {src}->{dst}")));
        }
        self.entries[slot(frame, src, dst)] = Some(stats);
        Ok(())
    }

    /// Fails with the first directed link that has no entry.
    pub fn validate(&self) -> Result<(), SimError> {
        if self.frames == 0 {
            return Err(SimError::InvalidTrace(format!("{} trace has no frames", self.posture)));
        }
        for frame in 0..self.frames {
            for (src, dst) in directed_links() {
                self.link(frame, src, dst)?;
            }
        }
        Ok(())
    }

    pub fn posture(&self) -> Posture {
        self.posture
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn frame_duration(&self) -> SimTime {
        self.frame_duration
    }

    pub fn frame_duration_ms(&self) -> u64 {
        self.frame_duration / NS_PER_MS
    }

    /// Frame in force at simulated time `now`.
    pub fn frame_at(&self, now: SimTime) -> usize {
        ((now / self.frame_duration) % self.frames.max(1) as u64) as usize
    }

    pub fn link(&self, frame: usize, src: NodeId, dst: NodeId) -> Result<LinkStats, SimError> {
        let missing = SimError::MissingTraceEntry { posture: self.posture, frame, src, dst };
        if frame >= self.frames || src as usize >= NODE_COUNT || dst as usize >= NODE_COUNT || src == dst {
            return Err(missing);
        }
        self.entries[slot(frame, src, dst)].ok_or(missing)
    }

    pub fn link_at(&self, now: SimTime, src: NodeId, dst: NodeId) -> Result<LinkStats, SimError> {
        self.link(self.frame_at(now), src, dst)
    }

    /// Mean attenuation averaged over all frames, with the deviations
    /// combined as a root mean square.
    pub fn average_link(&self, src: NodeId, dst: NodeId) -> Result<LinkStats, SimError> {
        let mut mean = 0.0;
        let mut var = 0.0;
        for frame in 0..self.frames {
            let s = self.link(frame, src, dst)?;
            mean += s.mean_db;
            var += s.std_db * s.std_db;
        }
        let n = self.frames as f64;
        Ok(LinkStats { mean_db: mean / n, std_db: (var / n).sqrt() })
    }

    /// Renders the trace as CSV rows `posture,frame,src,dst,mean_db,std_db`.
    pub fn to_csv(&self) -> Result<String, SimError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["posture", "frame", "src", "dst", "mean_db", "std_db"])?;
        for frame in 0..self.frames {
            for (src, dst) in directed_links() {
                let s = self.link(frame, src, dst)?;
                w.write_record([
                    self.posture.name().to_string(),
                    frame.to_string(),
                    src.to_string(),
                    dst.to_string(),
                    format!("{:.2}", s.mean_db),
                    format!("{:.2}", s.std_db),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| SimError::InvalidTrace(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Parses CSV for `posture`; rows for other postures are rejected.
    pub fn from_csv(text: &str, posture: Posture, frame_duration_ms: u64) -> Result<Self, SimError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut rows = Vec::new();
        let mut frames = 0;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 6 {
                return Err(SimError::InvalidTrace(format!("expected 6 columns, got {}", rec.len())));
            }
            let field = |i: usize| rec.get(i).unwrap_or_default().to_string();
            let row_posture: Posture = field(0).parse().map_err(SimError::InvalidTrace)?;
            if row_posture != posture {
                return Err(SimError::InvalidTrace(format!("row for {row_posture} in the {posture} trace")));
            }
            let num = |i: usize| -> Result<f64, SimError> {
                field(i).parse::<f64>().map_err(|e| SimError::InvalidTrace(format!("column {i}: {e}")))
            };
            let id = |i: usize| -> Result<NodeId, SimError> {
                field(i).parse::<NodeId>().map_err(|e| SimError::InvalidTrace(format!("column {i}: {e}")))
            };
            let frame: usize = field(1).parse().map_err(|e| SimError::InvalidTrace(format!("frame: {e}")))?;
            frames = frames.max(frame + 1);
            rows.push((frame, id(2)?, id(3)?, LinkStats { mean_db: num(4)?, std_db: num(5)? }));
        }
        let mut t = LinkTrace::empty(posture, frames, frame_duration_ms);
        for (frame, src, dst, s) in rows {
            t.set(frame, src, dst, s)?;
        }
        t.validate()?;
        Ok(t)
    }

    /// Loads `<dir>/<posture>.csv` using the directory's sidecar frame
    /// duration.
    pub fn load(dir: &Path, posture: Posture) -> Result<Self, SimError> {
        let path = trace_path(dir, posture);
        let text = fs::read_to_string(&path).map_err(|_| SimError::MissingTrace { posture, path: path.clone() })?;
        LinkTrace::from_csv(&text, posture, read_frame_duration_ms(dir)?)
    }

    /// Writes `<dir>/<posture>.csv`.
    pub fn save(&self, dir: &Path) -> Result<(), SimError> {
        fs::create_dir_all(dir)?;
        fs::write(trace_path(dir, self.posture), self.to_csv()?)?;
        Ok(())
    }

    /// The shipped synthetic trace for `posture`.
    pub fn synthetic(posture: Posture) -> Self {
        LinkTrace::from_fn(posture, SYNTHETIC_FRAMES, DEFAULT_FRAME_DURATION_MS, |frame, src, dst| {
            synthetic_stats(posture, frame, src, dst)
        })
        .expect("generator covers every link")
    }
}

/// All 42 ordered pairs of distinct nodes.
pub fn directed_links() -> impl Iterator<Item = (NodeId, NodeId)> {
    (0..NODE_COUNT as NodeId).flat_map(|s| (0..NODE_COUNT as NodeId).filter(move |&d| d != s).map(move |d| (s, d)))
}

pub fn trace_path(dir: &Path, posture: Posture) -> PathBuf {
    dir.join(format!("{}.csv", posture.name()))
}

/// Reads `frame_duration_ms` from the sidecar, defaulting to 100 ms when
/// the sidecar is absent.
pub fn read_frame_duration_ms(dir: &Path) -> Result<u64, SimError> {
    let Ok(text) = fs::read_to_string(dir.join(TRACE_CONFIG_FILE)) else {
        return Ok(DEFAULT_FRAME_DURATION_MS);
    };
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or_default().trim();
        if let Some((k, v)) = line.split_once('=') {
            if k.trim() == "frame_duration_ms" {
                let ms: u64 =
                    v.trim().parse().map_err(|e| SimError::InvalidTrace(format!("frame_duration_ms: {e}")))?;
                if ms == 0 {
                    return Err(SimError::InvalidTrace("frame_duration_ms must be positive".into()));
                }
                return Ok(ms);
            }
        }
    }
    Ok(DEFAULT_FRAME_DURATION_MS)
}

/// Writes the seven synthetic traces and their sidecar into `dir`.
pub fn write_synthetic_set(dir: &Path) -> Result<(), SimError> {
    for p in Posture::ALL {
        LinkTrace::synthetic(p).save(dir)?;
    }
    fs::write(
        dir.join(TRACE_CONFIG_FILE),
        format!("# Frame length shared by every trace in this directory.\nframe_duration_ms = {DEFAULT_FRAME_DURATION_MS}\n"),
    )?;
    Ok(())
}

/// Standing-posture mean attenuation in dB for each unordered pair. The
/// radio budget is 40 dB, so only short on-body links are usable directly.
const BASE_DB: [[f64; NODE_COUNT]; NODE_COUNT] = [
    //  navel chest head  arm  ankle thigh wrist
    [0.0, 30.0, 42.0, 34.0, 46.0, 30.0, 33.0],
    [30.0, 0.0, 32.0, 31.0, 56.0, 44.0, 42.0],
    [42.0, 32.0, 0.0, 33.0, 60.0, 50.0, 44.0],
    [34.0, 31.0, 33.0, 0.0, 52.0, 42.0, 31.0],
    [46.0, 56.0, 60.0, 52.0, 0.0, 33.0, 46.0],
    [30.0, 44.0, 50.0, 42.0, 33.0, 0.0, 34.0],
    [33.0, 42.0, 44.0, 31.0, 46.0, 34.0, 0.0],
];

const BASE_STD_DB: f64 = 3.0;
const ANKLE: NodeId = 4;
const UPPER_ARM: NodeId = 3;
const WRIST: NodeId = 6;

fn touches(src: NodeId, dst: NodeId, node: NodeId) -> bool {
    src == node || dst == node
}

/// Periodic limb motion in [0, 1] with a per-link phase.
fn swing(frame: usize, period: usize, src: NodeId, dst: NodeId) -> f64 {
    let phase = (src.min(dst) as f64 * 0.9) + (src.max(dst) as f64 * 0.4);
    0.5 + 0.5 * (2.0 * std::f64::consts::PI * frame as f64 / period as f64 + phase).sin()
}

fn synthetic_stats(posture: Posture, frame: usize, src: NodeId, dst: NodeId) -> LinkStats {
    let base = BASE_DB[src as usize][dst as usize];
    // Small deterministic wobble and a slight directional asymmetry.
    let wobble = 0.6 * (frame as f64 * 0.7 + src as f64 * 1.3 + dst as f64 * 0.5).sin();
    let asym = if src > dst { 0.5 } else { 0.0 };
    let edge = touches(src, dst, ANKLE) || touches(src, dst, WRIST);
    let arm = touches(src, dst, UPPER_ARM) || touches(src, dst, WRIST);
    let sink_adjacent = touches(src, dst, SINK);
    let (shift, std) = match posture {
        Posture::Walk if edge => (7.0 * swing(frame, 15, src, dst), 5.0),
        Posture::Run if edge => (10.0 * swing(frame, 8, src, dst), 6.0),
        Posture::Weak if edge => (4.0 * swing(frame, 20, src, dst), 4.0),
        Posture::Wear if arm => (8.0 * swing(frame, 30, src, dst), 5.0),
        Posture::Wear if edge => (3.0 * swing(frame, 30, src, dst), 4.0),
        Posture::Sit => {
            // Bent legs bring the thigh and ankle towards the torso.
            let closer = touches(src, dst, 5) && (touches(src, dst, SINK) || touches(src, dst, 0));
            let ankle_in = touches(src, dst, ANKLE) && (touches(src, dst, 0) || touches(src, dst, 5));
            (if closer || ankle_in { -3.0 } else { 0.0 }, BASE_STD_DB)
        }
        Posture::Sleep if sink_adjacent => (9.0, 5.0),
        Posture::Sleep => (-1.0, BASE_STD_DB),
        Posture::Lie if sink_adjacent => (4.0, 4.0),
        _ => (0.0, BASE_STD_DB),
    };
    LinkStats { mean_db: round2(base + shift + wobble + asym), std_db: std }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_link_has_an_entry() {
        for p in Posture::ALL {
            let t = LinkTrace::synthetic(p);
            t.validate().unwrap();
            assert_eq!(t.frames(), SYNTHETIC_FRAMES);
        }
        assert_eq!(directed_links().count(), 42);
    }

    #[test]
    fn missing_entry_is_reported() {
        let mut t = LinkTrace::empty(Posture::Walk, 1, 100);
        t.set(0, 0, 1, LinkStats { mean_db: 1.0, std_db: 0.0 }).unwrap();
        assert!(matches!(t.validate(), Err(SimError::MissingTraceEntry { .. })));
        assert!(matches!(t.link(0, 2, 3), Err(SimError::MissingTraceEntry { src: 2, dst: 3, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let t = LinkTrace::synthetic(Posture::Run);
        let back = LinkTrace::from_csv(&t.to_csv().unwrap(), Posture::Run, 100).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn frames_loop() {
        let t = LinkTrace::synthetic(Posture::Walk);
        let ns = t.frame_duration();
        assert_eq!(t.frame_at(0), 0);
        assert_eq!(t.frame_at(ns * 29 + 1), 29);
        assert_eq!(t.frame_at(ns * 30), 0);
    }

    #[test]
    fn sleep_impairs_links_to_the_sink() {
        let walk = LinkTrace::synthetic(Posture::Walk);
        let sleep = LinkTrace::synthetic(Posture::Sleep);
        for n in [0, 2, 3] {
            let w = walk.average_link(n, SINK).unwrap();
            let s = sleep.average_link(n, SINK).unwrap();
            assert!(s.mean_db > w.mean_db + 5.0 && s.std_db > w.std_db);
        }
    }
}
