//! Deterministic 2D manipulation world.
//!
//! The unit square holds one articulated object (button, drawer or door) and
//! a point effector confined to [`WORKSPACE`]. The policy sees a 6-dim state vector; the reward
//! pipeline sees rendered RGB frames. Image rows grow with `y`.
//!
//! Rendering convention: the object body is neutral; the actuated part is
//! drawn in the object colour with a task-specific texture (solid disc for
//! the button, horizontal stripes for the drawer, vertical stripes for the
//! door) whose extent is proportional to task progress. A fresh object
//! therefore shows only its body and handle.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Effector displacement per unit action.
pub const STEP_SIZE: f32 = 0.05;
/// Effector-to-handle distance that counts as contact.
pub const CONTACT_RADIUS: f32 = 0.06;
/// Handle travel between the initial and goal configuration.
pub const HANDLE_TRAVEL: f32 = 0.1;
/// Half side of the object body.
pub const BODY_HALF: f32 = 0.1;
/// Weight of the distance-to-handle penalty in the true reward.
pub const DISTANCE_SHAPING: f32 = 0.005;
/// Minimum reset distance between the effector and the handle.
pub const START_CLEARANCE: f32 = 0.3;
/// Required clearance between the object centre and every wall. Keeps every
/// handle position inside [`WORKSPACE`].
pub const WALL_MARGIN: f32 = 0.3;
/// Effector bounds on both axes. The gripper sprite stays inside the centre
/// crop seen by the reward model, so the arm cannot leave the picture.
pub const WORKSPACE: (f32, f32) = (0.1, 0.9);
pub const DEFAULT_HORIZON: usize = 128;
pub const DEFAULT_RENDER_SIZE: usize = 72;
pub const OBS_DIM: usize = 6;
pub const ACTION_DIM: usize = 2;

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($name), " {:?}"), other
                    ))),
                }
            }
        }
    };
}

named_enum!(Task { PressButton => "press-button", CloseDrawer => "close-drawer", OpenDoor => "open-door" });
named_enum!(Color { Red => "red", Green => "green", Blue => "blue", Black => "black", Yellow => "yellow" });
named_enum!(
    /// Effector sprite and palette. `Hand` and `Cartoon` are the out-of-domain looks.
    RenderStyle { Robot => "robot", Hand => "hand", Cartoon => "cartoon" }
);

impl Task {
    /// `object_dof` at reset.
    pub fn initial_dof(self) -> f32 {
        match self {
            Task::PressButton | Task::OpenDoor => 0.0,
            Task::CloseDrawer => 1.0,
        }
    }

    /// Fraction of the way from the initial to the goal configuration.
    pub fn progress(self, dof: f32) -> f32 {
        match self {
            Task::PressButton | Task::OpenDoor => dof,
            Task::CloseDrawer => 1.0 - dof,
        }
    }

    fn dof_from_progress(self, p: f32) -> f32 {
        self.progress(p)
    }

    /// Unit direction the handle must be pushed in.
    pub fn actuation_dir(self) -> [f32; 2] {
        match self {
            Task::PressButton => [0.0, 1.0],
            Task::CloseDrawer => [0.0, -1.0],
            Task::OpenDoor => [1.0, 0.0],
        }
    }

    /// Handle offset from the object centre at zero progress.
    fn handle_base(self) -> [f32; 2] {
        match self {
            Task::PressButton => [0.0, -0.05 - HANDLE_TRAVEL],
            Task::CloseDrawer => [0.0, 0.05 + HANDLE_TRAVEL],
            Task::OpenDoor => [0.05, 0.0],
        }
    }

    pub fn handle_position(self, center: [f32; 2], dof: f32) -> [f32; 2] {
        let p = self.progress(dof);
        let b = self.handle_base();
        let d = self.actuation_dir();
        [center[0] + b[0] + d[0] * HANDLE_TRAVEL * p, center[1] + b[1] + d[1] * HANDLE_TRAVEL * p]
    }

    /// Closed success thresholds on `object_dof`.
    pub fn is_success(self, dof: f32) -> bool {
        match self {
            Task::PressButton | Task::OpenDoor => dof >= 0.9,
            Task::CloseDrawer => dof <= 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub task: Task,
    pub object_color: Color,
    pub object_position: [f32; 2],
    pub render_style: RenderStyle,
    pub horizon: usize,
    pub render_size: usize,
}

impl WorldConfig {
    pub fn new(task: Task, object_color: Color, object_position: [f32; 2], render_style: RenderStyle) -> Self {
        Self {
            task,
            object_color,
            object_position,
            render_style,
            horizon: DEFAULT_HORIZON,
            render_size: DEFAULT_RENDER_SIZE,
        }
    }

    /// Config with the object placed by `seed`.
    pub fn sampled(task: Task, object_color: Color, render_style: RenderStyle, seed: u64) -> Self {
        let mut r = rng::stream(seed, "world/object");
        let range = WALL_MARGIN..=1.0 - WALL_MARGIN;
        let pos = [r.random_range(range.clone()), r.random_range(range)];
        Self::new(task, object_color, pos, render_style)
    }

    pub fn validate(&self) -> Result<()> {
        let [x, y] = self.object_position;
        let ok = |v: f32| (WALL_MARGIN..=1.0 - WALL_MARGIN).contains(&v);
        if !ok(x) || !ok(y) {
            return Err(Error::InvalidArgument(format!(
                "object position ({x}, {y}) closer than {WALL_MARGIN} to a wall"
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        if self.render_size < 16 {
            return Err(Error::InvalidArgument(format!("render size {} too small", self.render_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub effector: [f32; 2],
    pub object_dof: f32,
    pub step_count: usize,
    pub config: WorldConfig,
}

impl EnvState {
    pub fn handle(&self) -> [f32; 2] {
        self.config.task.handle_position(self.config.object_position, self.object_dof)
    }

    pub fn progress(&self) -> f32 {
        self.config.task.progress(self.object_dof)
    }

    pub fn is_done(&self) -> bool {
        self.step_count >= self.config.horizon
    }

    pub fn observation(&self) -> Observation {
        let h = self.handle();
        let e = self.effector;
        Observation([
            e[0],
            e[1],
            self.object_dof,
            h[0] - e[0],
            h[1] - e[1],
            if success(self) { 1.0 } else { 0.0 },
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub delta: [f32; 2],
}

impl Action {
    pub fn new(dx: f32, dy: f32) -> Self {
        Self { delta: [dx, dy] }
    }

    pub const IDLE: Action = Action { delta: [0.0, 0.0] };

    pub fn clipped(self) -> Self {
        Self { delta: self.delta.map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) }) }
    }
}

/// Policy input: effector x/y, object dof, effector-to-handle dx/dy, goal flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f32; OBS_DIM]);

fn dist(a: [f32; 2], b: [f32; 2]) -> f32 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn overlaps_object(config: &WorldConfig, p: [f32; 2]) -> bool {
    let c = config.object_position;
    let reach = BODY_HALF + CONTACT_RADIUS;
    let near_body = (p[0] - c[0]).abs() <= reach && (p[1] - c[1]).abs() <= reach;
    let h = config.task.handle_position(c, config.task.initial_dof());
    near_body || dist(p, h) < START_CLEARANCE
}

pub fn reset(config: &WorldConfig, seed: u64) -> Result<EnvState> {
    config.validate()?;
    let mut r = rng::stream(seed, "world/effector");
    let effector = loop {
        let (lo, hi) = WORKSPACE;
        let p = [r.random_range(lo..=hi), r.random_range(lo..=hi)];
        if !overlaps_object(config, p) {
            break p;
        }
    };
    Ok(EnvState { effector, object_dof: config.task.initial_dof(), step_count: 0, config: config.clone() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: EnvState,
    pub obs: Observation,
    pub true_reward: f32,
    pub done: bool,
}

pub fn step(state: &EnvState, action: Action) -> Result<StepOutcome> {
    if state.is_done() {
        return Err(Error::Contract(format!(
            "step after episode end (step_count {} = horizon)",
            state.step_count
        )));
    }
    let task = state.config.task;
    let a = action.clipped();
    let old = state.effector;
    let eff = [
        (old[0] + STEP_SIZE * a.delta[0]).clamp(WORKSPACE.0, WORKSPACE.1),
        (old[1] + STEP_SIZE * a.delta[1]).clamp(WORKSPACE.0, WORKSPACE.1),
    ];
    let old_progress = state.progress();
    let mut progress = old_progress;
    let h = state.handle();
    let d = task.actuation_dir();
    // Pushing needs contact from behind the handle.
    let behind = (old[0] - h[0]) * d[0] + (old[1] - h[1]) * d[1] <= 0.0;
    if behind && dist(old, h) <= CONTACT_RADIUS {
        let push = (eff[0] - old[0]) * d[0] + (eff[1] - old[1]) * d[1];
        if push > 0.0 {
            progress = (progress + push / HANDLE_TRAVEL).clamp(0.0, 1.0);
        }
    }
    let next = EnvState {
        effector: eff,
        object_dof: task.dof_from_progress(progress).clamp(0.0, 1.0),
        step_count: state.step_count + 1,
        config: state.config.clone(),
    };
    let true_reward = (progress - old_progress) - DISTANCE_SHAPING * dist(eff, next.handle());
    let done = next.is_done();
    Ok(StepOutcome { obs: next.observation(), next, true_reward, done })
}

pub fn success(state: &EnvState) -> bool {
    state.config.task.is_success(state.object_dof)
}

/// RGB raster, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

type Rgb = [u8; 3];

impl Frame {
    pub fn filled(width: usize, height: usize, rgb: Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: Rgb) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Centre crop to `size × size`; odd margins put the extra pixel on the far side.
    pub fn center_crop(&self, size: usize) -> Result<Frame> {
        if size > self.width || size > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {size} larger than {}x{}",
                self.width, self.height
            )));
        }
        let x0 = (self.width - size) / 2;
        let y0 = (self.height - size) / 2;
        let mut data = Vec::with_capacity(size * size * 3);
        for y in y0..y0 + size {
            let s = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[s..s + size * 3]);
        }
        Ok(Frame { width: size, height: size, data })
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Frame> {
        // Header: magic, width, height, maxval separated by whitespace, then one byte.
        let mut fields = Vec::new();
        let mut i = 0;
        while fields.len() < 4 {
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if start == i {
                return Err(Error::format("ppm", "truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| Error::format("ppm", "bad header"))?);
        }
        if fields[0] != "P6" {
            return Err(Error::format("ppm", format!("magic {:?}", fields[0])));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format("ppm", format!("bad number {s:?}")));
        let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval != 255 {
            return Err(Error::format("ppm", format!("maxval {maxval}")));
        }
        let data = bytes.get(i + 1..).unwrap_or_default();
        if data.len() != w * h * 3 {
            return Err(Error::format("ppm", format!("expected {} bytes of pixels, got {}", w * h * 3, data.len())));
        }
        Ok(Frame { width: w, height: h, data: data.to_vec() })
    }
}

struct Palette {
    background: Rgb,
    floor: Option<Rgb>,
    body: Rgb,
    handle: Rgb,
}

fn palette(style: RenderStyle) -> Palette {
    match style {
        RenderStyle::Robot | RenderStyle::Hand => {
            Palette { background: [226, 226, 220], floor: None, body: [158, 158, 164], handle: [60, 60, 64] }
        }
        RenderStyle::Cartoon => Palette {
            background: [186, 218, 246],
            floor: Some([238, 214, 160]),
            body: [176, 128, 86],
            handle: [48, 36, 96],
        },
    }
}

fn object_rgb(color: Color, style: RenderStyle) -> Rgb {
    let base = match color {
        Color::Red => [214, 40, 40],
        Color::Green => [40, 168, 64],
        Color::Blue => [40, 76, 214],
        Color::Black => [22, 22, 22],
        Color::Yellow => [240, 206, 30],
    };
    match style {
        RenderStyle::Cartoon => base.map(|c| (c as u16 / 2 + 100).min(255) as u8),
        _ => base,
    }
}

struct Canvas {
    frame: Frame,
    scale: f32,
}

impl Canvas {
    fn px(&self, v: f32) -> f32 {
        v * self.scale
    }

    /// Fill pixels whose centres fall inside `[x0,x1]×[y0,y1]` (world units)
    /// and satisfy `keep(px, py)`.
    fn rect_where(&mut self, x0: f32, y0: f32, x1: f32, y1: f32, rgb: Rgb, keep: impl Fn(usize, usize) -> bool) {
        let (w, h) = (self.frame.width as i64, self.frame.height as i64);
        let lo = |v: f32| ((v - 0.5).ceil() as i64).max(0);
        let hi = |v: f32, m: i64| ((v - 0.5).floor() as i64).min(m - 1);
        let (px0, px1) = (lo(self.px(x0)), hi(self.px(x1), w));
        let (py0, py1) = (lo(self.px(y0)), hi(self.px(y1), h));
        for y in py0..=py1 {
            for x in px0..=px1 {
                if keep(x as usize, y as usize) {
                    self.frame.set(x as usize, y as usize, rgb);
                }
            }
        }
    }

    fn rect(&mut self, x0: f32, y0: f32, x1: f32, y1: f32, rgb: Rgb) {
        self.rect_where(x0, y0, x1, y1, rgb, |_, _| true);
    }

    fn disc(&mut self, c: [f32; 2], r: f32, rgb: Rgb) {
        let (cx, cy, rp) = (self.px(c[0]), self.px(c[1]), self.px(r));
        self.rect_where(c[0] - r, c[1] - r, c[0] + r, c[1] + r, rgb, |x, y| {
            let dx = x as f32 + 0.5 - cx;
            let dy = y as f32 + 0.5 - cy;
            dx * dx + dy * dy <= rp * rp
        });
    }
}

fn draw_object(cv: &mut Canvas, state: &EnvState, pal: &Palette) {
    let cfg = &state.config;
    let c = cfg.object_position;
    let b = BODY_HALF;
    cv.rect(c[0] - b, c[1] - b, c[0] + b, c[1] + b, pal.body);
    let rgb = object_rgb(cfg.object_color, cfg.render_style);
    let p = state.progress();
    if p > 0.0 {
        let ext = 0.085 * p;
        match cfg.task {
            Task::PressButton => cv.disc(c, 0.075 * p, rgb),
            Task::CloseDrawer => {
                cv.rect_where(c[0] - ext, c[1] - 0.05, c[0] + ext, c[1] + 0.05, rgb, |_, y| y % 2 == 0)
            }
            Task::OpenDoor => {
                cv.rect_where(c[0] - 0.05, c[1] - ext, c[0] + 0.05, c[1] + ext, rgb, |x, _| x % 2 == 0)
            }
        }
    }
    let h = state.handle();
    let hs = 0.02;
    cv.rect(h[0] - hs, h[1] - hs, h[0] + hs, h[1] + hs, pal.handle);
}

fn draw_effector(cv: &mut Canvas, e: [f32; 2], style: RenderStyle) {
    match style {
        RenderStyle::Robot => {
            // Gripper: wrist block with two fingers pointing down.
            cv.rect(e[0] - 0.03, e[1] - 0.045, e[0] + 0.03, e[1] - 0.005, [70, 92, 124]);
            cv.rect(e[0] - 0.03, e[1] - 0.005, e[0] - 0.015, e[1] + 0.035, [44, 44, 50]);
            cv.rect(e[0] + 0.015, e[1] - 0.005, e[0] + 0.03, e[1] + 0.035, [44, 44, 50]);
        }
        RenderStyle::Hand => {
            let skin = [232, 184, 142];
            cv.disc([e[0], e[1] - 0.01], 0.032, skin);
            for k in 0..3 {
                let x = e[0] - 0.022 + 0.022 * k as f32;
                cv.rect(x - 0.007, e[1] + 0.01, x + 0.007, e[1] + 0.045, skin);
            }
        }
        RenderStyle::Cartoon => {
            cv.disc(e, 0.04, [90, 40, 120]);
            cv.disc(e, 0.03, [255, 150, 206]);
            cv.rect(e[0] - 0.006, e[1] + 0.02, e[0] + 0.006, e[1] + 0.05, [255, 150, 206]);
        }
    }
}

/// Rasterize the scene; depends only on `(state, style)`.
pub fn render(state: &EnvState, style: RenderStyle) -> Frame {
    let size = state.config.render_size;
    let pal = palette(style);
    let mut cv = Canvas { frame: Frame::filled(size, size, pal.background), scale: size as f32 };
    if let Some(floor) = pal.floor {
        cv.rect(0.0, 0.6, 1.0, 1.0, floor);
    }
    draw_object(&mut cv, state, &pal);
    draw_effector(&mut cv, state.effector, style);
    cv.frame
}

/// One row of an episode trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub effector: [f32; 2],
    pub object_dof: f32,
    pub true_reward: f32,
    pub done: bool,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "step,effector_x,effector_y,object_dof,true_reward,done")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step,
            r.effector[0],
            r.effector[1],
            r.object_dof,
            r.true_reward,
            u8::from(r.done)
        )?;
    }
    Ok(())
}

/// Full rollout of an action sequence from a seeded reset.
#[derive(Debug, Clone)]
pub struct Episode {
    pub states: Vec<EnvState>,
    pub trace: Vec<TraceRow>,
    pub true_return: f32,
}

impl Episode {
    pub fn final_state(&self) -> &EnvState {
        self.states.last().expect("episode has a reset state")
    }

    /// Frames of every post-step state, in `style`.
    pub fn frames(&self, style: RenderStyle) -> Vec<Frame> {
        self.states[1..].iter().map(|s| render(s, style)).collect()
    }
}

pub fn run_actions(config: &WorldConfig, seed: u64, actions: &[Action]) -> Result<Episode> {
    let mut state = reset(config, seed)?;
    let mut states = vec![state.clone()];
    let mut trace = Vec::with_capacity(actions.len());
    let mut ret = 0.0;
    for &a in actions {
        let out = step(&state, a)?;
        ret += out.true_reward;
        trace.push(TraceRow {
            step: out.next.step_count,
            effector: out.next.effector,
            object_dof: out.next.object_dof,
            true_reward: out.true_reward,
            done: out.done,
        });
        state = out.next;
        states.push(state.clone());
    }
    Ok(Episode { states, trace, true_return: ret })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(task: Task) -> WorldConfig {
        WorldConfig::new(task, Color::Red, [0.5, 0.5], RenderStyle::Robot)
    }

    #[test]
    fn reset_is_deterministic_and_sets_initial_dof() {
        let c = cfg(Task::CloseDrawer);
        assert_eq!(reset(&c, 3).unwrap(), reset(&c, 3).unwrap());
        assert_eq!(reset(&c, 3).unwrap().object_dof, 1.0);
        assert_eq!(reset(&cfg(Task::PressButton), 3).unwrap().object_dof, 0.0);
        assert_eq!(reset(&cfg(Task::OpenDoor), 3).unwrap().object_dof, 0.0);
    }

    #[test]
    fn seeded_resets_stay_inside_and_off_the_object() {
        for seed in 0..1000u64 {
            let task = Task::ALL[(seed % 3) as usize];
            let c = WorldConfig::sampled(task, Color::Blue, RenderStyle::Robot, seed);
            c.validate().unwrap();
            let s = reset(&c, seed).unwrap();
            let [x, y] = s.effector;
            assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
            let o = c.object_position;
            let on_body = (x - o[0]).abs() <= BODY_HALF && (y - o[1]).abs() <= BODY_HALF;
            assert!(!on_body);
            assert!(dist(s.effector, s.handle()) > CONTACT_RADIUS);
        }
    }

    #[test]
    fn invalid_position_is_rejected() {
        let mut c = cfg(Task::OpenDoor);
        c.object_position = [0.1, 0.5];
        assert!(reset(&c, 0).is_err());
    }

    #[test]
    fn zero_action_makes_no_progress() {
        let s = reset(&cfg(Task::PressButton), 1).unwrap();
        let out = step(&s, Action::IDLE).unwrap();
        assert_eq!(out.next.object_dof, s.object_dof);
        assert!(out.true_reward <= 0.0);
    }

    #[test]
    fn step_is_bit_deterministic() {
        let s = reset(&cfg(Task::OpenDoor), 2).unwrap();
        let a = Action::new(0.37, -0.81);
        assert_eq!(step(&s, a).unwrap(), step(&s, a).unwrap());
    }

    #[test]
    fn stepping_past_horizon_is_an_error() {
        let mut c = cfg(Task::PressButton);
        c.horizon = 2;
        let mut s = reset(&c, 0).unwrap();
        for _ in 0..2 {
            s = step(&s, Action::IDLE).unwrap().next;
        }
        assert!(s.is_done());
        assert!(matches!(step(&s, Action::IDLE), Err(Error::Contract(_))));
    }

    #[test]
    fn pushing_in_contact_advances_monotonically() {
        for task in Task::ALL.iter().copied() {
            let c = cfg(task);
            let mut s = reset(&c, 0).unwrap();
            let d = task.actuation_dir();
            s.effector = s.handle();
            let mut last = s.progress();
            for _ in 0..4 {
                s = step(&s, Action::new(d[0], d[1])).unwrap().next;
                assert!(s.progress() >= last);
                assert!((0.0..=1.0).contains(&s.object_dof));
                last = s.progress();
            }
            assert!(success(&s), "{task}");
            // Pushing against the actuation direction never undoes progress.
            let back = step(&s, Action::new(-d[0], -d[1])).unwrap().next;
            assert_eq!(back.progress(), s.progress());
        }
    }

    #[test]
    fn success_thresholds_are_closed() {
        assert!(Task::PressButton.is_success(0.9));
        assert!(!Task::PressButton.is_success(0.899));
        assert!(Task::CloseDrawer.is_success(0.1));
        assert!(!Task::CloseDrawer.is_success(0.1001));
        assert!(Task::OpenDoor.is_success(0.9));
        for task in Task::ALL.iter().copied() {
            assert!(!success(&reset(&cfg(task), 0).unwrap()));
        }
    }

    #[test]
    fn render_is_pure() {
        let s = reset(&cfg(Task::CloseDrawer), 5).unwrap();
        assert_eq!(render(&s, RenderStyle::Robot), render(&s, RenderStyle::Robot));
        assert_eq!(render(&s, RenderStyle::Robot).data.len(), 72 * 72 * 3);
    }

    fn diff_box(a: &Frame, b: &Frame) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..a.height {
            for x in 0..a.width {
                if a.pixel(x, y) != b.pixel(x, y) {
                    let e = bbox.get_or_insert((x, y, x, y));
                    *e = (e.0.min(x), e.1.min(y), e.2.max(x), e.3.max(y));
                }
            }
        }
        bbox
    }

    #[test]
    fn drawer_state_only_changes_drawer_pixels() {
        let mut s = reset(&cfg(Task::CloseDrawer), 5).unwrap();
        s.effector = [0.1, 0.1];
        let open = render(&s, RenderStyle::Robot);
        s.object_dof = 0.0;
        let closed = render(&s, RenderStyle::Robot);
        let (x0, y0, x1, y1) = diff_box(&open, &closed).expect("states must render differently");
        // Body spans 0.4..0.6, the open handle reaches y = 0.67 (plus nub).
        let lo = (0.39 * 72.0) as usize;
        let hi = (0.70 * 72.0) as usize;
        assert!(x0 >= lo && x1 <= hi && y0 >= lo && y1 <= hi, "{x0},{y0},{x1},{y1}");
    }

    #[test]
    fn robot_and_hand_differ_only_at_the_effector() {
        let mut s = reset(&cfg(Task::PressButton), 5).unwrap();
        s.effector = [0.15, 0.85];
        s.object_dof = 0.6;
        let robot = render(&s, RenderStyle::Robot);
        let hand = render(&s, RenderStyle::Hand);
        let (x0, y0, x1, y1) = diff_box(&robot, &hand).expect("sprites differ");
        let (ex, ey) = (0.15 * 72.0, 0.85 * 72.0);
        let r = 0.06 * 72.0;
        assert!(x0 as f32 >= ex - r && x1 as f32 <= ex + r && y0 as f32 >= ey - r && y1 as f32 <= ey + r);
        // object region identical
        for y in 25..47 {
            for x in 25..47 {
                assert_eq!(robot.pixel(x, y), hand.pixel(x, y));
            }
        }
    }

    #[test]
    fn crop_keeps_the_center_pixel() {
        let mut f = Frame::filled(72, 72, [0, 0, 0]);
        f.set(36, 36, [255, 1, 2]);
        let c = f.center_crop(64).unwrap();
        assert_eq!((c.width, c.height), (64, 64));
        assert_eq!(c.pixel(32, 32), [255, 1, 2]);
    }

    #[test]
    fn ppm_round_trip() {
        let s = reset(&cfg(Task::OpenDoor), 9).unwrap();
        let f = render(&s, RenderStyle::Cartoon);
        let bytes = f.to_ppm();
        assert!(bytes.starts_with(b"P6\n72 72\n255\n"));
        assert_eq!(Frame::from_ppm(&bytes).unwrap(), f);
        assert!(Frame::from_ppm(b"P5\n1 1\n255\n\0").is_err());
    }

    #[test]
    fn trace_csv_has_expected_header() {
        let ep = run_actions(&cfg(Task::PressButton), 0, &[Action::IDLE; 3]).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&ep.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("step,effector_x,effector_y,object_dof,true_reward,done"));
        assert_eq!(lines.count(), 3);
    }
}
