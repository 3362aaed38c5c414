//! Occluded-Pong stimulus environment.
//!
//! A ball travels across a rectangular board in degrees of visual angle,
//! reflecting specularly off the top, bottom, and left walls, and is
//! intercepted at a paddle plane on the right. A rectangle flush with the
//! paddle side occludes the final stretch of every trajectory, splitting each
//! condition into a visible epoch and an occluded epoch. Bounces inside a
//! frame step are resolved at their exact continuous-time intersection before
//! re-discretizing, so speed is conserved bit-exactly.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{keyed_rng, stream};
use crate::tensorio::{LatentDataset, LatentSequence, Tensor};

use rand::Rng;

/// Hard ceiling on simulated frames; hitting it means the trajectory cannot
/// reach the paddle (e.g. a vertical launch) and is reported as a failure.
const FRAME_CAP: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }
}

/// Board geometry and kinematics, all lengths in degrees of visual angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardSpec {
    pub width: f64,
    pub height: f64,
    pub occluder: Rect,
    /// Interception plane; trajectories end when the ball center reaches it.
    pub paddle_x: f64,
    pub ball_radius: f64,
    /// Degrees per second. Constant along the whole trajectory.
    pub ball_speed: f64,
    pub frame_rate: f64,
}

impl Default for BoardSpec {
    /// Default geometry: 20°×10° board, occluder over the right 35% of the
    /// width at full height, paddle plane one ball radius inside the right
    /// edge. With starts drawn by [`generate_conditions`], every trajectory
    /// lasts between 92 and 205 frames at 60 frames/s.
    fn default() -> Self {
        BoardSpec {
            width: 20.0,
            height: 10.0,
            occluder: Rect { x0: 13.0, y0: 0.0, x1: 20.0, y1: 10.0 },
            paddle_x: 19.65,
            ball_radius: 0.35,
            ball_speed: 11.0,
            frame_rate: 60.0,
        }
    }
}

impl BoardSpec {
    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let all_finite = [
            self.width, self.height, self.occluder.x0, self.occluder.y0,
            self.occluder.x1, self.occluder.y1, self.paddle_x, self.ball_radius,
            self.ball_speed, self.frame_rate,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return bad("board spec contains non-finite values".into());
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return bad(format!("board {}×{} must be positive", self.width, self.height));
        }
        if self.ball_speed <= 0.0 || self.frame_rate <= 0.0 {
            return bad("ball_speed and frame_rate must be positive".into());
        }
        if self.ball_radius <= 0.0 || 2.0 * self.ball_radius >= self.height.min(self.width) {
            return bad(format!("ball radius {} does not fit the board", self.ball_radius));
        }
        if !(self.ball_radius < self.paddle_x && self.paddle_x <= self.width) {
            return bad(format!("paddle_x {} outside playable range", self.paddle_x));
        }
        let occ = &self.occluder;
        if !(occ.x0 > 0.0 && occ.x0 < occ.x1 && occ.x1 <= self.width) {
            return bad("occluder x-extent must sit strictly inside the left wall and within the board".into());
        }
        if !(occ.y0 >= 0.0 && occ.y0 < occ.y1 && occ.y1 <= self.height) {
            return bad("occluder y-extent must lie within the board".into());
        }
        if occ.x1 < self.paddle_x {
            return bad("occluder must reach the paddle plane".into());
        }
        if occ.width() <= 2.0 * self.ball_radius {
            return bad("occluder must be wider than the ball diameter".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameState {
    pub pos: (f64, f64),
    pub vel: (f64, f64),
}

/// Discrete-time ball path at the board frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct BallTrajectory {
    pub frames: Vec<FrameState>,
    pub dt: f64,
}

impl BallTrajectory {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Index of the last frame whose center is left of the occluder,
    /// or None if the path starts occluded.
    pub fn visible_end(&self, spec: &BoardSpec) -> Option<usize> {
        let first_occluded = self
            .frames
            .iter()
            .position(|f| f.pos.0 >= spec.occluder.x0)?;
        first_occluded.checked_sub(1)
    }
}

/// One reflection step: advance `state` by `dt` with exact sub-step wall
/// intersections. Walls sit one ball radius inside the board so the disk
/// itself stays within bounds.
fn advance(state: &mut FrameState, dt: f64, spec: &BoardSpec) {
    let r = spec.ball_radius;
    let (lo_y, hi_y, lo_x) = (r, spec.height - r, r);
    let mut remaining = dt;
    for _ in 0..16 {
        let (x, y) = state.pos;
        let (vx, vy) = state.vel;
        let mut t_hit = f64::INFINITY;
        if vy > 0.0 {
            t_hit = t_hit.min((hi_y - y) / vy);
        } else if vy < 0.0 {
            t_hit = t_hit.min((lo_y - y) / vy);
        }
        if vx < 0.0 {
            t_hit = t_hit.min((lo_x - x) / vx);
        }
        let t_hit = t_hit.max(0.0);
        if t_hit >= remaining {
            state.pos = (x + vx * remaining, y + vy * remaining);
            return;
        }
        let nx = x + vx * t_hit;
        let ny = y + vy * t_hit;
        let mut nvx = vx;
        let mut nvy = vy;
        if (vy > 0.0 && ny >= hi_y) || (vy < 0.0 && ny <= lo_y) {
            nvy = -nvy;
        }
        if vx < 0.0 && nx <= lo_x {
            nvx = -nvx;
        }
        state.pos = (nx, ny);
        state.vel = (nvx, nvy);
        remaining -= t_hit;
    }
    // 16 reflections inside one frame step means the geometry is thinner
    // than one step of travel; finish the step without further bounces.
    state.pos.0 += state.vel.0 * remaining;
    state.pos.1 += state.vel.1 * remaining;
}

/// Simulate from a start position and launch angle (radians, 0 = rightward)
/// until the ball center reaches the paddle plane.
pub fn simulate_trajectory(
    spec: &BoardSpec,
    start_pos: (f64, f64),
    start_angle: f64,
) -> Result<BallTrajectory> {
    spec.validate()?;
    let r = spec.ball_radius;
    let (x, y) = start_pos;
    if !(x >= r && x <= spec.width - r && y >= r && y <= spec.height - r) {
        return Err(Error::InvalidArgument(format!(
            "start ({x}, {y}) outside board interior"
        )));
    }
    if spec.occluder.contains(x, y) {
        return Err(Error::InvalidArgument(format!(
            "start ({x}, {y}) inside the occluder"
        )));
    }
    let dt = spec.dt();
    let mut state = FrameState {
        pos: start_pos,
        vel: (
            spec.ball_speed * start_angle.cos(),
            spec.ball_speed * start_angle.sin(),
        ),
    };
    let mut frames = vec![state];
    while frames.last().unwrap().pos.0 < spec.paddle_x {
        if frames.len() >= FRAME_CAP {
            return Err(Error::Generation(format!(
                "trajectory from ({x}, {y}) at angle {start_angle} did not reach the paddle within {FRAME_CAP} frames"
            )));
        }
        advance(&mut state, dt, spec);
        frames.push(state);
    }
    Ok(BallTrajectory { frames, dt })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub id: u32,
    pub start_pos: (f64, f64),
    pub start_angle: f64,
    pub n_frames: usize,
    /// Last frame of the visible epoch; frame `visible_end + 1` is the first
    /// whose ball center lies inside the occluder x-extent.
    pub visible_end: usize,
}

impl Condition {
    pub fn visible_len(&self) -> usize {
        self.visible_end + 1
    }

    pub fn occluded_range(&self) -> std::ops::Range<usize> {
        self.visible_end + 1..self.n_frames
    }

    /// Stable string key used to align external datasets with this condition.
    pub fn key(&self) -> String {
        format!("cond_{:03}", self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSet {
    pub spec: BoardSpec,
    pub seed: u64,
    pub conditions: Vec<Condition>,
}

impl ConditionSet {
    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    /// Re-simulate one condition's trajectory (conditions store only the
    /// start state; physics is deterministic).
    pub fn trajectory(&self, idx: usize) -> Result<BallTrajectory> {
        let c = &self.conditions[idx];
        simulate_trajectory(&self.spec, c.start_pos, c.start_angle)
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.conditions.iter().position(|c| c.key() == key)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("condition set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: ConditionSet = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("bad condition set JSON: {e}")))?;
        set.spec.validate()?;
        Ok(set)
    }

    /// Ground-truth ball state per condition, one latent sequence per
    /// condition keyed like the condition itself.
    pub fn oracle_dataset(&self, kind: OracleKind) -> Result<LatentDataset> {
        let mut items = Vec::with_capacity(self.len());
        for (i, cond) in self.conditions.iter().enumerate() {
            let traj = self.trajectory(i)?;
            let mut seq = oracle_latents(&traj, kind);
            seq.id = cond.key();
            items.push(seq);
        }
        Ok(LatentDataset { d: kind.dim(), subsample: 1, items })
    }
}

/// Start-state sampling volume, relative to board size: x in the left
/// 5–15% band, y in the middle 80%, launch angle within ±60° of horizontal
/// (rightward angles guarantee paddle-bound, occluder-crossing paths).
fn sample_start(spec: &BoardSpec, rng: &mut impl Rng) -> ((f64, f64), f64) {
    let x = spec.width * (0.05 + 0.10 * rng.random::<f64>());
    let y = spec.height * (0.10 + 0.80 * rng.random::<f64>());
    let angle = (std::f64::consts::PI / 3.0) * (2.0 * rng.random::<f64>() - 1.0);
    ((x, y), angle)
}

/// Generate `n` conditions with randomized starts. Deterministic in
/// (spec, n, seed); every condition is simulated once here to freeze its
/// frame count and epoch boundary.
pub fn generate_conditions(spec: &BoardSpec, n: usize, seed: u64) -> Result<ConditionSet> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one condition".into()));
    }
    let mut conditions = Vec::with_capacity(n);
    let mut seen = std::collections::HashSet::new();
    for i in 0..n as u64 {
        let mut rng = keyed_rng(seed, &[stream::COND_GEN, i]);
        let mut attempt = 0;
        let condition = loop {
            attempt += 1;
            if attempt > 100 {
                return Err(Error::Generation(format!(
                    "no valid start found for condition {i} after 100 draws"
                )));
            }
            let (start, angle) = sample_start(spec, &mut rng);
            if spec.occluder.contains(start.0, start.1) {
                continue;
            }
            let traj = match simulate_trajectory(spec, start, angle) {
                Ok(t) => t,
                Err(Error::Generation(_)) | Err(Error::InvalidArgument(_)) => continue,
                Err(e) => return Err(e),
            };
            let Some(visible_end) = traj.visible_end(spec) else {
                continue;
            };
            if visible_end + 1 >= traj.n_frames() {
                continue; // no occluded epoch
            }
            break Condition {
                id: i as u32,
                start_pos: start,
                start_angle: angle,
                n_frames: traj.n_frames(),
                visible_end,
            };
        };
        if !seen.insert((
            condition.start_pos.0.to_bits(),
            condition.start_pos.1.to_bits(),
            condition.start_angle.to_bits(),
        )) {
            return Err(Error::Generation(format!("duplicate start drawn for condition {i}")));
        }
        conditions.push(condition);
    }
    Ok(ConditionSet { spec: *spec, seed, conditions })
}

/// Uniformly spaced context-frame indices across the visible epoch:
/// i_k = round(k·(V−1)/(T−1)).
pub fn context_indices(condition: &Condition, t: usize) -> Result<Vec<usize>> {
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "context length must be at least 2, got {t}"
        )));
    }
    let v = condition.visible_len();
    if v < t {
        return Err(Error::InsufficientContext { required: t, available: v });
    }
    let step = (v - 1) as f64 / (t - 1) as f64;
    Ok((0..t).map(|k| (k as f64 * step).round() as usize).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleKind {
    Position,
    Velocity,
    PositionVelocity,
}

impl OracleKind {
    pub fn dim(self) -> usize {
        match self {
            OracleKind::Position | OracleKind::Velocity => 2,
            OracleKind::PositionVelocity => 4,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pos" => Ok(OracleKind::Position),
            "vel" => Ok(OracleKind::Velocity),
            "pos+vel" => Ok(OracleKind::PositionVelocity),
            other => Err(Error::InvalidArgument(format!(
                "unknown oracle kind {other:?}, expected pos | vel | pos+vel"
            ))),
        }
    }
}

/// Per-frame ground-truth ball state in board-native degrees (and
/// degrees/second). The caller assigns the sequence id.
pub fn oracle_latents(trajectory: &BallTrajectory, kind: OracleKind) -> LatentSequence {
    let n = trajectory.n_frames();
    let d = kind.dim();
    let mut m = DMatrix::zeros(n, d);
    for (i, f) in trajectory.frames.iter().enumerate() {
        match kind {
            OracleKind::Position => {
                m[(i, 0)] = f.pos.0;
                m[(i, 1)] = f.pos.1;
            }
            OracleKind::Velocity => {
                m[(i, 0)] = f.vel.0;
                m[(i, 1)] = f.vel.1;
            }
            OracleKind::PositionVelocity => {
                m[(i, 0)] = f.pos.0;
                m[(i, 1)] = f.pos.1;
                m[(i, 2)] = f.vel.0;
                m[(i, 3)] = f.vel.1;
            }
        }
    }
    LatentSequence { id: String::new(), scenario: None, label: None, latents: m }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccluderDraw {
    /// Rectangle visible in every frame (default; the display occluder does
    /// not blink in and out).
    Always,
    /// Rectangle drawn only in occluded-epoch frames.
    OccludedOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    pub width_px: usize,
    pub height_px: usize,
    pub occluder: OccluderDraw,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { width_px: 256, height_px: 128, occluder: OccluderDraw::Always }
    }
}

/// Grayscale raster stack: background 0.0, ball disk 1.0, occluder 0.5.
/// Row 0 is the top of the board.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub n_frames: usize,
    pub height_px: usize,
    pub width_px: usize,
    data: Vec<f32>,
}

impl FrameSequence {
    #[inline]
    pub fn get(&self, frame: usize, row: usize, col: usize) -> f32 {
        self.data[(frame * self.height_px + row) * self.width_px + col]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f32(
            vec![self.n_frames, self.height_px, self.width_px],
            self.data.clone(),
        )
        .expect("frame buffer matches its shape")
    }
}

pub fn render_frames(
    spec: &BoardSpec,
    trajectory: &BallTrajectory,
    opts: &RenderOptions,
) -> Result<FrameSequence> {
    spec.validate()?;
    if opts.width_px < 32 || opts.height_px < 32 {
        return Err(Error::InvalidArgument(format!(
            "resolution {}×{} below the 32×32 minimum",
            opts.width_px, opts.height_px
        )));
    }
    let (w, h) = (opts.width_px, opts.height_px);
    let sx = spec.width / w as f64;
    let sy = spec.height / h as f64;
    let r2 = spec.ball_radius * spec.ball_radius;
    let mut data = vec![0.0f32; trajectory.n_frames() * h * w];
    for (fi, f) in trajectory.frames.iter().enumerate() {
        let occluded_frame = f.pos.0 >= spec.occluder.x0;
        let draw_occluder = occluded_frame || opts.occluder == OccluderDraw::Always;
        let base = fi * h * w;
        for row in 0..h {
            let y = spec.height - (row as f64 + 0.5) * sy;
            for col in 0..w {
                let x = (col as f64 + 0.5) * sx;
                let in_ball = {
                    let dx = x - f.pos.0;
                    let dy = y - f.pos.1;
                    dx * dx + dy * dy <= r2
                };
                let in_occ = draw_occluder && spec.occluder.contains(x, y);
                // While occluded the rectangle covers the ball; while visible
                // the ball is in front of it.
                let v = if occluded_frame {
                    if in_occ { 0.5 } else if in_ball { 1.0 } else { 0.0 }
                } else if in_ball {
                    1.0
                } else if in_occ {
                    0.5
                } else {
                    0.0
                };
                if v != 0.0 {
                    data[base + row * w + col] = v;
                }
            }
        }
    }
    Ok(FrameSequence { n_frames: trajectory.n_frames(), height_px: h, width_px: w, data })
}
