//! ADS-B scene ingestion, airspace filtering, windowing into samples, and
//! the binary canonical dataset container.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, Point3, Trajectory};

pub const FEET_TO_KM: f64 = 0.0003048;
pub const DEFAULT_CEILING_FT: f64 = 6000.0;
pub const DEFAULT_RADIUS_KM: f64 = 5.0;

pub const CANONICAL_MAGIC: &[u8; 4] = b"ASCD";
pub const CANONICAL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0} contains no valid rows")]
    EmptyScene(PathBuf),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Column positions of the fields used from each scene row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub frame: usize,
    pub agent: usize,
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            frame: 0,
            agent: 1,
            x: 2,
            y: 3,
            z: 4,
        }
    }
}

impl ColumnMap {
    fn width(&self) -> usize {
        [self.frame, self.agent, self.x, self.y, self.z]
            .into_iter()
            .max()
            .unwrap_or(0)
            + 1
    }
}

/// One parsed row of a scene file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRecord {
    pub frame_index: i64,
    pub agent_id: i64,
    pub position: Point3,
}

/// Frame-ordered observations of one agent, possibly with gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub agent_id: i64,
    pub frames: Vec<i64>,
    pub points: Vec<Point3>,
}

impl AgentTrack {
    /// Splits the track at frame gaps into uniformly sampled trajectories.
    pub fn segments(&self, frame_dt: f64) -> Vec<Trajectory> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.frames.len() {
            if i == self.frames.len() || self.frames[i] != self.frames[i - 1] + 1 {
                let pts = self.points[start..i].to_vec();
                let t0 = self.frames[start] as f64 * frame_dt;
                out.push(Trajectory::uniform(pts, t0, frame_dt).expect("validated rows"));
                start = i;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRead {
    pub tracks: Vec<AgentTrack>,
    /// Rows that were non-numeric, too short, or out of range.
    pub skipped_rows: usize,
    pub duplicate_rows: usize,
}

fn parse_row(line: &str, columns: &ColumnMap) -> Option<RawRecord> {
    let fields: Vec<f64> = line
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(str::parse::<f64>)
        .collect::<Result<_, _>>()
        .ok()?;
    if fields.len() < columns.width() {
        return None;
    }
    let frame = fields[columns.frame];
    let agent = fields[columns.agent];
    let position = [fields[columns.x], fields[columns.y], fields[columns.z]];
    if frame < 0.0 || frame.fract() != 0.0 || agent.fract() != 0.0 {
        return None;
    }
    if !position.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(RawRecord {
        frame_index: frame as i64,
        agent_id: agent as i64,
        position,
    })
}

/// Parses scene text already in memory; see [`read_scene_file`].
pub fn parse_scene(text: &str, columns: &ColumnMap) -> SceneRead {
    let mut by_agent: BTreeMap<i64, BTreeMap<i64, Point3>> = BTreeMap::new();
    let mut skipped_rows = 0;
    let mut duplicate_rows = 0;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let Some(rec) = parse_row(line, columns) else {
            skipped_rows += 1;
            continue;
        };
        let frames = by_agent.entry(rec.agent_id).or_default();
        if frames.contains_key(&rec.frame_index) {
            duplicate_rows += 1;
        } else {
            frames.insert(rec.frame_index, rec.position);
        }
    }
    let tracks = by_agent
        .into_iter()
        .map(|(agent_id, frames)| AgentTrack {
            agent_id,
            frames: frames.keys().copied().collect(),
            points: frames.into_values().collect(),
        })
        .collect();
    SceneRead {
        tracks,
        skipped_rows,
        duplicate_rows,
    }
}

/// Reads a delimited scene file into per-agent tracks.
///
/// Rows are `frame, agent, x, y, z, …` by default (whitespace or comma
/// separated); trailing columns are ignored. Malformed rows are skipped and
/// counted, and repeated `(frame, agent)` rows keep the first occurrence.
pub fn read_scene_file(path: &Path, columns: &ColumnMap) -> Result<SceneRead, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let read = parse_scene(&text, columns);
    if read.skipped_rows > 0 {
        log::warn!("{}: skipped {} malformed rows", path.display(), read.skipped_rows);
    }
    if read.tracks.is_empty() {
        return Err(DatasetError::EmptyScene(path.to_path_buf()));
    }
    Ok(read)
}

/// Terminal-area bounds: an altitude ceiling and a horizontal radius around
/// either runway endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AirspaceFilter {
    pub ceiling_km: f64,
    pub runway: [Point3; 2],
    pub radius_km: f64,
}

impl AirspaceFilter {
    pub fn new(ceiling_ft: f64, runway: [Point3; 2], radius_km: f64) -> Result<Self, DatasetError> {
        if !(ceiling_ft > 0.0) || !(radius_km > 0.0) {
            return Err(DatasetError::Config(
                "airspace ceiling and radius must be positive".into(),
            ));
        }
        Ok(Self {
            ceiling_km: ceiling_ft * FEET_TO_KM,
            runway,
            radius_km,
        })
    }

    fn horizontal(a: Point3, b: Point3) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    /// Horizontal distance to the nearer runway endpoint.
    pub fn runway_distance(&self, p: Point3) -> f64 {
        Self::horizontal(p, self.runway[0]).min(Self::horizontal(p, self.runway[1]))
    }

    pub fn within_radius(&self, p: Point3) -> bool {
        self.runway_distance(p) <= self.radius_km
    }

    pub fn contains(&self, p: Point3) -> bool {
        p[2] <= self.ceiling_km && self.within_radius(p)
    }
}

/// Drops out-of-bounds points and returns the surviving contiguous runs.
pub fn filter_airspace(traj: &Trajectory, filter: &AirspaceFilter) -> Vec<Trajectory> {
    let keep: Vec<bool> = traj.points().iter().map(|p| filter.contains(*p)).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < keep.len() {
        if !keep[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < keep.len() && keep[i] {
            i += 1;
        }
        out.push(traj.slice(start, i));
    }
    out
}

/// History/future sampling protocol of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSetting {
    pub history_seconds: f64,
    pub history_rate: f64,
    pub future_seconds: f64,
    pub future_rate: f64,
    pub k: usize,
    /// Sampling rate of the source trajectories, Hz.
    #[serde(default = "default_base_rate")]
    pub base_rate: f64,
    /// Overrides the rounded history step count when set.
    #[serde(default)]
    pub history_steps: Option<usize>,
    /// Base steps between consecutive window starts.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_base_rate() -> f64 {
    1.0
}

fn default_stride() -> usize {
    1
}

impl ExperimentSetting {
    /// 11 s at 1 Hz → 120 s at 0.1 Hz, k = 5.
    pub fn trajair_11s() -> Self {
        Self {
            history_seconds: 11.0,
            history_rate: 1.0,
            future_seconds: 120.0,
            future_rate: 0.1,
            k: 5,
            base_rate: 1.0,
            history_steps: None,
            stride: 1,
        }
    }

    /// 16 s → 120 s, both at 0.2 Hz, k = 5.
    pub fn atp_16s() -> Self {
        Self {
            history_seconds: 16.0,
            history_rate: 0.2,
            future_seconds: 120.0,
            future_rate: 0.2,
            ..Self::trajair_11s()
        }
    }

    /// 40 s at 1 Hz → 120 s at 0.1 Hz, k = 20.
    pub fn goodflight_40s() -> Self {
        Self {
            history_seconds: 40.0,
            k: 20,
            ..Self::trajair_11s()
        }
    }

    pub fn named(name: &str) -> Option<Self> {
        match name {
            "trajair-11s" => Some(Self::trajair_11s()),
            "atp-16s" => Some(Self::atp_16s()),
            "goodflight-40s" => Some(Self::goodflight_40s()),
            _ => None,
        }
    }

    pub const NAMES: [&'static str; 3] = ["trajair-11s", "atp-16s", "goodflight-40s"];

    fn base_stride(&self, rate: f64, what: &str) -> Result<usize, DatasetError> {
        let ratio = self.base_rate / rate;
        if !(rate > 0.0) || !ratio.is_finite() || ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(DatasetError::Config(format!(
                "{what} rate {rate} Hz is not an integer divisor of the base rate {} Hz",
                self.base_rate
            )));
        }
        Ok(ratio.round() as usize)
    }

    pub fn history_stride(&self) -> Result<usize, DatasetError> {
        self.base_stride(self.history_rate, "history")
    }

    pub fn future_stride(&self) -> Result<usize, DatasetError> {
        self.base_stride(self.future_rate, "future")
    }

    pub fn history_len(&self) -> usize {
        self.history_steps
            .unwrap_or_else(|| ((self.history_seconds * self.history_rate).round() as usize).max(2))
    }

    pub fn future_len(&self) -> usize {
        ((self.future_seconds * self.future_rate).round() as usize).max(1)
    }

    /// Seconds between future samples.
    pub fn dt_out(&self) -> f64 {
        1.0 / self.future_rate
    }

    /// Base-rate points covered by one window.
    pub fn span(&self) -> Result<usize, DatasetError> {
        Ok((self.history_len() - 1) * self.history_stride()? + self.future_len() * self.future_stride()? + 1)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        self.span()?;
        if self.k == 0 {
            return Err(DatasetError::Config("k must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(DatasetError::Config("window stride must be at least 1".into()));
        }
        if self.history_len() < 2 {
            return Err(DatasetError::Config("history needs at least 2 steps".into()));
        }
        Ok(())
    }
}

/// One prediction instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub history: Trajectory,
    pub future: Trajectory,
    pub agent_id: i64,
    pub scene_id: i64,
    pub history_rate: f64,
    pub future_rate: f64,
}

impl Sample {
    /// Builds a sample whose timestamps are derived from the anchor time
    /// (last history sample) and the two rates.
    pub fn from_parts(
        scene_id: i64,
        agent_id: i64,
        anchor_time: f64,
        history_rate: f64,
        future_rate: f64,
        history: Vec<Point3>,
        future: Vec<Point3>,
    ) -> Result<Self, DatasetError> {
        let th = history.len();
        let h_times = (0..th)
            .map(|i| anchor_time - (th - 1 - i) as f64 / history_rate)
            .collect();
        let f_times = (0..future.len())
            .map(|j| anchor_time + (j + 1) as f64 / future_rate)
            .collect();
        Ok(Self {
            history: Trajectory::new(history, h_times)?,
            future: Trajectory::new(future, f_times)?,
            agent_id,
            scene_id,
            history_rate,
            future_rate,
        })
    }

    pub fn anchor_time(&self) -> f64 {
        *self.history.timestamps().last().expect("non-empty history")
    }
}

/// Slides the setting's window over a gap-free base-rate trajectory.
pub fn window_samples(
    traj: &Trajectory,
    setting: &ExperimentSetting,
    scene_id: i64,
    agent_id: i64,
) -> Result<Vec<Sample>, DatasetError> {
    setting.validate()?;
    let (hs, fs) = (setting.history_stride()?, setting.future_stride()?);
    let (th, tf) = (setting.history_len(), setting.future_len());
    if let Some(dt) = traj.dt() {
        if (dt * setting.base_rate - 1.0).abs() > 1e-6 {
            return Err(DatasetError::Config(format!(
                "trajectory spacing {dt} s does not match base rate {} Hz",
                setting.base_rate
            )));
        }
    }
    let span = setting.span()?;
    if traj.len() < span {
        return Ok(Vec::new());
    }
    let pts = traj.points();
    let mut out = Vec::new();
    for start in (0..=traj.len() - span).step_by(setting.stride) {
        let anchor = start + (th - 1) * hs;
        let history = (0..th).map(|i| pts[start + i * hs]).collect();
        let future = (0..tf).map(|j| pts[anchor + (j + 1) * fs]).collect();
        out.push(Sample::from_parts(
            scene_id,
            agent_id,
            traj.timestamps()[anchor],
            setting.history_rate,
            setting.future_rate,
            history,
            future,
        )?);
    }
    Ok(out)
}

/// Full raw-scene pipeline: gap splitting, optional filtering, windowing.
pub fn scene_samples(
    scene: &SceneRead,
    scene_id: i64,
    frame_dt: f64,
    filter: Option<&AirspaceFilter>,
    setting: &ExperimentSetting,
) -> Result<Vec<Sample>, DatasetError> {
    let mut out = Vec::new();
    for track in &scene.tracks {
        for seg in track.segments(frame_dt) {
            let pieces = match filter {
                Some(f) => filter_airspace(&seg, f),
                None => vec![seg],
            };
            for piece in pieces {
                out.extend(window_samples(&piece, setting, scene_id, track.agent_id)?);
            }
        }
    }
    Ok(out)
}

/// Splits an ordered file list into (outer 50 %, middle 50 %).
///
/// `S1` holds the first and last `⌊n/4⌋` entries, `S2` everything between.
/// The input is sorted first so the split is independent of listing order.
pub fn make_tartan_splits<T: Clone + Ord>(files: &[T]) -> Result<(Vec<T>, Vec<T>), DatasetError> {
    if files.is_empty() {
        return Err(DatasetError::Empty("file list"));
    }
    let mut sorted = files.to_vec();
    sorted.sort();
    let n = sorted.len();
    let q = n / 4;
    let mut s1 = sorted[..q].to_vec();
    s1.extend_from_slice(&sorted[n - q..]);
    Ok((s1, sorted[q..n - q].to_vec()))
}

fn write_f64s(w: &mut impl Write, values: impl IntoIterator<Item = f64>) -> io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Serializes samples into the canonical little-endian container.
pub fn encode_canonical(samples: &[Sample], w: &mut impl Write) -> io::Result<()> {
    w.write_all(CANONICAL_MAGIC)?;
    w.write_all(&CANONICAL_VERSION.to_le_bytes())?;
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    for s in samples {
        w.write_all(&s.scene_id.to_le_bytes())?;
        w.write_all(&s.agent_id.to_le_bytes())?;
        w.write_all(&(s.history.len() as u64).to_le_bytes())?;
        w.write_all(&(s.future.len() as u64).to_le_bytes())?;
        write_f64s(w, [s.history_rate, s.future_rate, s.anchor_time()])?;
        write_f64s(w, s.history.points().iter().flatten().copied())?;
        write_f64s(w, s.future.points().iter().flatten().copied())?;
    }
    Ok(())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], DatasetError> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| DatasetError::Format(format!("truncated container: {e}")))?;
        Ok(buf)
    }
    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64, DatasetError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn i64(&mut self) -> Result<i64, DatasetError> {
        Ok(i64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64, DatasetError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn points(&mut self, n: usize) -> Result<Vec<Point3>, DatasetError> {
        (0..n)
            .map(|_| Ok([self.f64()?, self.f64()?, self.f64()?]))
            .collect()
    }
}

pub fn decode_canonical(r: impl Read) -> Result<Vec<Sample>, DatasetError> {
    let mut c = Cursor { inner: r };
    if &c.bytes::<4>()? != CANONICAL_MAGIC {
        return Err(DatasetError::Format("missing ASCD magic header".into()));
    }
    let version = c.u32()?;
    if version != CANONICAL_VERSION {
        return Err(DatasetError::Format(format!(
            "unsupported dataset version {version}"
        )));
    }
    let count = c.u64()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let scene_id = c.i64()?;
        let agent_id = c.i64()?;
        let th = c.u64()? as usize;
        let tf = c.u64()? as usize;
        let (hr, fr, anchor) = (c.f64()?, c.f64()?, c.f64()?);
        if th > 1 << 24 || tf > 1 << 24 {
            return Err(DatasetError::Format("implausible sample length".into()));
        }
        let history = c.points(th)?;
        let future = c.points(tf)?;
        out.push(
            Sample::from_parts(scene_id, agent_id, anchor, hr, fr, history, future)
                .map_err(|e| DatasetError::Format(e.to_string()))?,
        );
    }
    Ok(out)
}

pub fn write_canonical_dataset(samples: &[Sample], path: &Path) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    encode_canonical(samples, &mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_canonical_dataset(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    decode_canonical(BufReader::new(file))
}
