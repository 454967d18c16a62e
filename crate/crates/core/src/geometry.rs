//! Agent-centric coordinate frames.
//!
//! Positions are in kilometers in a scene frame with `z` up. Yaw is measured
//! from `+y` toward `+x`, so yaw 0 points along `+y`; pitch is the climb
//! angle above the horizontal plane. Normalization translates a history to
//! its latest position, then cancels yaw (rotation about `z`) and pitch
//! (rotation about `x`), leaving the latest displacement along `+y`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Displacements shorter than this are treated as stationary.
pub const MIN_DISPLACEMENT_KM: f64 = 1e-9;

/// Tolerance on uniform timestamp spacing, seconds.
pub const TIME_TOLERANCE_S: f64 = 1e-6;

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("history needs at least {needed} points, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("trajectory has {points} points but {stamps} timestamps")]
    LengthMismatch { points: usize, stamps: usize },
    #[error("trajectory is empty")]
    Empty,
    #[error("timestamps are not uniformly increasing at index {0}")]
    NonUniform(usize),
}

pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn norm(a: Point3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn distance(a: Point3, b: Point3) -> f64 {
    norm(sub(a, b))
}

/// Uniformly sampled 3D track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    points: Vec<Point3>,
    timestamps: Vec<f64>,
}

impl Trajectory {
    pub fn new(points: Vec<Point3>, timestamps: Vec<f64>) -> Result<Self, GeometryError> {
        if points.len() != timestamps.len() {
            return Err(GeometryError::LengthMismatch {
                points: points.len(),
                stamps: timestamps.len(),
            });
        }
        if points.is_empty() {
            return Err(GeometryError::Empty);
        }
        if let Some(bad) = points.iter().flatten().find(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite(*bad));
        }
        if timestamps.len() >= 2 {
            let dt = timestamps[1] - timestamps[0];
            if !(dt > 0.0) {
                return Err(GeometryError::NonUniform(1));
            }
            for i in 1..timestamps.len() {
                let step = timestamps[i] - timestamps[i - 1];
                if (step - dt).abs() > TIME_TOLERANCE_S {
                    return Err(GeometryError::NonUniform(i));
                }
            }
        }
        Ok(Self { points, timestamps })
    }

    /// Trajectory sampled every `dt` seconds starting at `t0`.
    pub fn uniform(points: Vec<Point3>, t0: f64, dt: f64) -> Result<Self, GeometryError> {
        let stamps = (0..points.len()).map(|i| t0 + i as f64 * dt).collect();
        Self::new(points, stamps)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> Point3 {
        *self.points.last().expect("trajectory is never empty")
    }

    /// Sample spacing, or `None` for a single point.
    pub fn dt(&self) -> Option<f64> {
        (self.timestamps.len() >= 2).then(|| self.timestamps[1] - self.timestamps[0])
    }

    /// Contiguous sub-trajectory `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            points: self.points[start..end].to_vec(),
            timestamps: self.timestamps[start..end].to_vec(),
        }
    }

    /// Keeps every `stride`-th point starting at `start`, `count` points total.
    pub fn subsample(&self, start: usize, stride: usize, count: usize) -> Self {
        let idx = (0..count).map(|i| start + i * stride);
        Self {
            points: idx.clone().map(|i| self.points[i]).collect(),
            timestamps: idx.map(|i| self.timestamps[i]).collect(),
        }
    }

    /// Same timestamps, transformed positions.
    pub fn with_points(&self, points: Vec<Point3>) -> Self {
        assert_eq!(points.len(), self.points.len());
        Self {
            points,
            timestamps: self.timestamps.clone(),
        }
    }
}

/// Position and heading defining an agent-centric frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub position: Point3,
    pub yaw: f64,
    pub pitch: f64,
}

impl PoseFrame {
    pub fn identity() -> Self {
        Self {
            position: [0.0; 3],
            yaw: 0.0,
            pitch: 0.0,
        }
    }

    /// Global → local: translate, cancel yaw, cancel pitch.
    pub fn to_local(&self, p: Point3) -> Point3 {
        let d = sub(p, self.position);
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        // Yaw-canceling rotation about z maps heading (sin ψ, cos ψ) onto +y.
        let x1 = d[0] * cy - d[1] * sy;
        let y1 = d[0] * sy + d[1] * cy;
        // Pitch-canceling rotation about x maps (cos θ, sin θ) in (y, z) onto +y.
        let y2 = y1 * cp + d[2] * sp;
        let z2 = -y1 * sp + d[2] * cp;
        [x1, y2, z2]
    }

    /// Local → global, the exact inverse of [`PoseFrame::to_local`].
    pub fn to_global(&self, p: Point3) -> Point3 {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let y1 = p[1] * cp - p[2] * sp;
        let z = p[1] * sp + p[2] * cp;
        let x = p[0] * cy + y1 * sy;
        let y = -p[0] * sy + y1 * cy;
        add([x, y, z], self.position)
    }
}

/// Wraps an angle into `[-π, π]`. `+π` stays `+π`; anything strictly below
/// `-π` wraps upward, and `-π` itself maps to `+π`.
pub fn wrap_angle(a: f64) -> Result<f64, GeometryError> {
    if !a.is_finite() {
        return Err(GeometryError::NonFinite(a));
    }
    let tau = 2.0 * PI;
    let mut r = (a + PI).rem_euclid(tau) - PI;
    if r <= -PI {
        r += tau;
    }
    Ok(r)
}

/// Yaw and pitch of a displacement vector.
pub fn heading_of(d: Point3) -> (f64, f64) {
    let yaw = d[0].atan2(d[1]);
    let pitch = d[2].atan2((d[0] * d[0] + d[1] * d[1]).sqrt());
    (yaw, pitch)
}

/// Heading from the latest non-negligible displacement of a history.
///
/// Scans backward from the final step for a displacement of at least
/// [`MIN_DISPLACEMENT_KM`]; a fully stationary history yields `(0, 0)`.
pub fn estimate_heading(history: &Trajectory) -> Result<(f64, f64), GeometryError> {
    let pts = history.points();
    if pts.len() < 2 {
        return Err(GeometryError::InsufficientHistory {
            needed: 2,
            got: pts.len(),
        });
    }
    for i in (1..pts.len()).rev() {
        let d = sub(pts[i], pts[i - 1]);
        if norm(d) >= MIN_DISPLACEMENT_KM {
            return Ok(heading_of(d));
        }
    }
    Ok((0.0, 0.0))
}

/// Frame anchored at the latest position with the estimated heading.
pub fn frame_of(history: &Trajectory) -> Result<PoseFrame, GeometryError> {
    let (yaw, pitch) = estimate_heading(history)?;
    Ok(PoseFrame {
        position: history.last(),
        yaw,
        pitch,
    })
}

/// Expresses a history in its own agent-centric frame.
pub fn normalize_history(history: &Trajectory) -> Result<(Trajectory, PoseFrame), GeometryError> {
    let frame = frame_of(history)?;
    let local = history
        .points()
        .iter()
        .map(|p| frame.to_local(*p))
        .collect();
    Ok((history.with_points(local), frame))
}

pub fn denormalize_points(local: &[Point3], frame: &PoseFrame) -> Vec<Point3> {
    local.iter().map(|p| frame.to_global(*p)).collect()
}

/// Which parts of the agent-centric normalization are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoordinateMode {
    /// Scene coordinates, no normalization.
    Global,
    /// Translate to the latest position; optionally cancel yaw and pitch.
    Local { angular: bool },
}

impl Default for CoordinateMode {
    fn default() -> Self {
        Self::Local { angular: true }
    }
}

impl CoordinateMode {
    /// Frame used to map model-space coordinates to and from the scene.
    ///
    /// For `Global` this is the identity; without angular normalization
    /// it is a pure translation. The heading carried by `pose` is unchanged.
    pub fn model_frame(self, pose: &PoseFrame) -> PoseFrame {
        match self {
            Self::Global => PoseFrame::identity(),
            Self::Local { angular: true } => *pose,
            Self::Local { angular: false } => PoseFrame {
                position: pose.position,
                yaw: 0.0,
                pitch: 0.0,
            },
        }
    }
}
