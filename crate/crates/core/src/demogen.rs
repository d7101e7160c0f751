//! Captioned demonstration clips and the scripted experts that produce them.
//!
//! Vocabulary (id: word):
//!
//! ```text
//!  0 <pad>   1 robot    2 hand     3 gripper  4 human    5 arm
//!  6 pushing 7 closing  8 opening  9 pressing 10 pulling 11 sliding
//! 12 turning 13 red    14 green   15 blue    16 black   17 yellow
//! 18 white  19 button  20 drawer  21 door    22 box     23 cabinet
//! 24 handle 25 light   26 a       27 the     28 is      29 an
//! 30 of     31 to      32 and     33 on      34 in      35 with
//! 36 slowly 37 quickly 38 shut    39 open
//! ```
//!
//! Captions follow `<actor> <verb> <color> <object>` or
//! `a <actor> is <verb> the <color> <object>`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::simworld::{self, Action, Color, Frame, RenderStyle, Task, WorldConfig, STEP_SIZE};

pub const VOCAB: [&str; 40] = [
    "<pad>", "robot", "hand", "gripper", "human", "arm", "pushing", "closing", "opening", "pressing",
    "pulling", "sliding", "turning", "red", "green", "blue", "black", "yellow", "white", "button",
    "drawer", "door", "box", "cabinet", "handle", "light", "a", "the", "is", "an", "of", "to", "and",
    "on", "in", "with", "slowly", "quickly", "shut", "open",
];
pub const VOCAB_SIZE: usize = VOCAB.len();
pub const PAD: u16 = 0;
pub const MAX_CAPTION_LEN: usize = 8;

/// Token ids over [`VOCAB`]; may carry trailing padding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Caption {
    tokens: Vec<u16>,
}

impl Caption {
    pub fn from_tokens(tokens: Vec<u16>) -> Result<Self> {
        if tokens.len() > MAX_CAPTION_LEN {
            return Err(Error::InvalidArgument(format!(
                "caption has {} tokens, limit is {MAX_CAPTION_LEN}",
                tokens.len()
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= VOCAB_SIZE) {
            return Err(Error::InvalidArgument(format!("token id {bad} outside vocabulary")));
        }
        Ok(Self { tokens })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let tokens = text
            .split_whitespace()
            .map(|w| {
                let lw = w.to_ascii_lowercase();
                VOCAB
                    .iter()
                    .position(|v| *v == lw && lw != "<pad>")
                    .map(|i| i as u16)
                    .ok_or(Error::UnknownToken(w.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_tokens(tokens)
    }

    pub fn tokens(&self) -> &[u16] {
        &self.tokens
    }

    /// Tokens with padding removed.
    pub fn content(&self) -> impl Iterator<Item = u16> + '_ {
        self.tokens.iter().copied().filter(|&t| t != PAD)
    }

    pub fn is_empty(&self) -> bool {
        self.content().next().is_none()
    }

    pub fn padded(&self, len: usize) -> Result<Self> {
        let mut tokens = self.tokens.clone();
        tokens.resize(len.max(tokens.len()), PAD);
        Self::from_tokens(tokens)
    }

    pub fn text(&self) -> String {
        self.content().map(|t| VOCAB[t as usize]).collect::<Vec<_>>().join(" ")
    }
}

impl fmt::Display for Caption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

pub fn actor_word(style: RenderStyle) -> &'static str {
    match style {
        RenderStyle::Robot => "robot",
        RenderStyle::Hand | RenderStyle::Cartoon => "hand",
    }
}

pub fn verb_object(task: Task) -> (&'static str, &'static str) {
    match task {
        Task::PressButton => ("pushing", "button"),
        Task::CloseDrawer => ("closing", "drawer"),
        Task::OpenDoor => ("opening", "door"),
    }
}

/// Template 0 caption, e.g. "robot closing green drawer".
pub fn canonical_caption(task: Task, color: Color, style: RenderStyle) -> Caption {
    caption_for(task, color, style, 0)
}

/// Caption for a clip; the seed's parity picks the paraphrase template.
pub fn caption_for(task: Task, color: Color, style: RenderStyle, seed: u64) -> Caption {
    let (verb, object) = verb_object(task);
    let actor = actor_word(style);
    let text = if seed.is_multiple_of(2) {
        format!("{actor} {verb} {color} {object}")
    } else {
        format!("a {actor} is {verb} the {color} {object}")
    };
    Caption::parse(&text).expect("templates use vocabulary words")
}

/// Waypoint controller: approach the handle from behind, push along the
/// actuation direction until solved, then hold still.
pub fn scripted_policy(config: &WorldConfig, seed: u64) -> Result<Vec<Action>> {
    scripted_policy_truncated(config, seed, None)
}

/// [`scripted_policy`] whose actions after `cutoff` steps are idle.
/// Only the untruncated form is required to solve the task.
pub fn scripted_policy_truncated(config: &WorldConfig, seed: u64, cutoff: Option<usize>) -> Result<Vec<Action>> {
    let mut r = rng::stream(seed, "demogen/expert");
    let speed: f32 = r.random_range(0.25..0.4);
    let mut state = simworld::reset(config, seed)?;
    let task = config.task;
    let dir = task.actuation_dir();
    let mut actions = Vec::with_capacity(config.horizon);
    let mut pushing = false;
    for t in 0..config.horizon {
        let a = if cutoff.is_some_and(|c| t >= c) || simworld::success(&state) {
            Action::IDLE
        } else {
            let h = state.handle();
            let target = [h[0] - dir[0] * 0.04, h[1] - dir[1] * 0.04];
            let (dx, dy) = (target[0] - state.effector[0], target[1] - state.effector[1]);
            let d = (dx * dx + dy * dy).sqrt();
            if d < 0.015 {
                pushing = true;
            }
            if pushing {
                Action::new(dir[0] * speed, dir[1] * speed)
            } else {
                let jitter = [r.random_range(-0.05..0.05), r.random_range(-0.05..0.05)];
                let k = (d / STEP_SIZE).min(speed) / d.max(1e-6);
                Action::new(dx * k + jitter[0], dy * k + jitter[1])
            }
        }
        .clipped();
        state = simworld::step(&state, a)?.next;
        actions.push(a);
    }
    if cutoff.is_none() && !simworld::success(&state) {
        return Err(Error::ScriptFailure(format!("{} (seed {seed})", config.task)));
    }
    Ok(actions)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoClip {
    pub frames: Vec<Frame>,
    pub caption: Caption,
    pub task: Task,
    pub color: Color,
    pub style: RenderStyle,
    pub seed: u64,
    pub achieved_success: bool,
}

pub fn generate_clip(task: Task, color: Color, style: RenderStyle, seed: u64) -> Result<DemoClip> {
    let config = WorldConfig::sampled(task, color, style, seed);
    let actions = scripted_policy(&config, seed)?;
    let episode = simworld::run_actions(&config, seed, &actions)?;
    Ok(DemoClip {
        frames: episode.frames(style),
        caption: caption_for(task, color, style, seed),
        task,
        color,
        style,
        seed,
        achieved_success: simworld::success(episode.final_state()),
    })
}

/// The scripted expert's `(observation, action)` pairs for one episode.
pub fn expert_trajectory(config: &WorldConfig, seed: u64) -> Result<Vec<(simworld::Observation, Action)>> {
    let actions = scripted_policy(config, seed)?;
    let ep = simworld::run_actions(config, seed, &actions)?;
    Ok(ep.states.iter().zip(actions).map(|(s, a)| (s.observation(), a)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    HeldOut,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::HeldOut => "held-out",
        }
    }
}

/// Sampling weights over tasks, colours and styles.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub tasks: [f64; 3],
    pub colors: [f64; 5],
    pub styles: [f64; 3],
}

impl Default for Mixture {
    /// Uniform over tasks and colours; robot-heavy styles.
    fn default() -> Self {
        Self { tasks: [1.0; 3], colors: [1.0; 5], styles: [2.0, 1.0, 1.0] }
    }
}

impl Mixture {
    pub fn uniform() -> Self {
        Self { tasks: [1.0; 3], colors: [1.0; 5], styles: [1.0; 3] }
    }

    fn validate(&self) -> Result<()> {
        let check = |name: &str, w: &[f64]| {
            if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
                Err(Error::InvalidArgument(format!("{name} weights {w:?} must be nonnegative and not all zero")))
            } else {
                Ok(())
            }
        };
        check("task", &self.tasks)?;
        check("color", &self.colors)?;
        check("style", &self.styles)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub clip: DemoClip,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub entries: Vec<DatasetEntry>,
    pub seed: u64,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &DemoClip> {
        self.entries.iter().filter(move |e| e.split == split).map(|e| &e.clip)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Clip parameters drawn for dataset slot `index`.
pub fn sample_clip_params(mixture: &Mixture, seed: u64, index: usize) -> Result<(Task, Color, RenderStyle, u64)> {
    mixture.validate()?;
    let mut r = rng::indexed_stream(seed, "demogen/mixture", index as u64);
    let pick = |w: &[f64], r: &mut rng::StreamRng| -> Result<usize> {
        Ok(WeightedIndex::new(w).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(r))
    };
    let task = Task::ALL[pick(&mixture.tasks, &mut r)?];
    let color = Color::ALL[pick(&mixture.colors, &mut r)?];
    let style = RenderStyle::ALL[pick(&mixture.styles, &mut r)?];
    Ok((task, color, style, rng::derive_seed(seed, "demogen/clip", index as u64)))
}

/// Held-out indices: the `round(n/10)` indices with the smallest hash.
pub fn held_out_indices(n: usize, seed: u64) -> Vec<bool> {
    let mut order: Vec<(u64, usize)> =
        (0..n).map(|i| (rng::derive_seed(seed, "demogen/split", i as u64), i)).collect();
    order.sort_unstable();
    let k = ((n as f64) / 10.0).round() as usize;
    let mut held = vec![false; n];
    for &(_, i) in order.iter().take(k) {
        held[i] = true;
    }
    held
}

pub fn build_dataset(n_clips: usize, mixture: &Mixture, seed: u64) -> Result<Dataset> {
    if n_clips == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one clip".into()));
    }
    mixture.validate()?;
    let held = held_out_indices(n_clips, seed);
    let mut entries = Vec::with_capacity(n_clips);
    for (i, &h) in held.iter().enumerate() {
        let (task, color, style, clip_seed) = sample_clip_params(mixture, seed, i)?;
        let clip = generate_clip(task, color, style, clip_seed)?;
        entries.push(DatasetEntry { clip, split: if h { Split::HeldOut } else { Split::Train } });
    }
    Ok(Dataset { entries, seed })
}

pub const INDEX_FILE: &str = "index.txt";
pub const META_FILE: &str = "meta.txt";

fn clip_dir_name(index: usize) -> String {
    format!("clip_{index:05}")
}

pub fn write_clip(dir: &Path, clip: &DemoClip) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, f) in clip.frames.iter().enumerate() {
        fs::write(dir.join(format!("frame_{i:03}.ppm")), f.to_ppm())?;
    }
    let meta = format!(
        "task={}\ncolor={}\nstyle={}\nseed={}\ncaption={}\nsuccess={}\n",
        clip.task, clip.color, clip.style, clip.seed, clip.caption, clip.achieved_success
    );
    fs::write(dir.join(META_FILE), meta)?;
    Ok(())
}

pub fn read_clip(dir: &Path) -> Result<DemoClip> {
    let meta_path = dir.join(META_FILE);
    if !meta_path.exists() {
        return Err(Error::MissingArtifact(meta_path));
    }
    let text = fs::read_to_string(&meta_path)?;
    let get = |key: &str| -> Result<String> {
        text.lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .map(str::to_string)
            .ok_or_else(|| Error::format("clip metadata", format!("missing {key} in {}", meta_path.display())))
    };
    let task: Task = get("task")?.parse()?;
    let color: Color = get("color")?.parse()?;
    let style: RenderStyle = get("style")?.parse()?;
    let seed = get("seed")?.parse().map_err(|_| Error::format("clip metadata", "bad seed"))?;
    let caption = Caption::parse(&get("caption")?)?;
    let achieved_success = get("success")? == "true";
    let mut frames = Vec::new();
    loop {
        let p = dir.join(format!("frame_{:03}.ppm", frames.len()));
        if !p.exists() {
            break;
        }
        frames.push(Frame::from_ppm(&fs::read(&p)?)?);
    }
    if frames.is_empty() {
        return Err(Error::format("clip", format!("no frames in {}", dir.display())));
    }
    Ok(DemoClip { frames, caption, task, color, style, seed, achieved_success })
}

/// Materialize a dataset: one directory per clip, index file last.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = String::new();
    for (i, e) in ds.entries.iter().enumerate() {
        let name = clip_dir_name(i);
        write_clip(&dir.join(&name), &e.clip)?;
        index.push_str(&format!("{name} {}\n", e.split.as_str()));
    }
    crate::nncore::checkpoint::write_atomic(&dir.join(INDEX_FILE), index.as_bytes())
}

pub fn read_index(dir: &Path) -> Result<Vec<(PathBuf, Split)>> {
    let path = dir.join(INDEX_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    fs::read_to_string(&path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split_whitespace();
            let name = it.next().unwrap_or_default();
            let split = match it.next() {
                Some("train") => Split::Train,
                Some("held-out") => Split::HeldOut,
                other => return Err(Error::format("dataset index", format!("bad split {other:?}"))),
            };
            Ok((dir.join(name), split))
        })
        .collect()
}

pub fn read_dataset(dir: &Path, seed: u64) -> Result<Dataset> {
    let entries = read_index(dir)?
        .into_iter()
        .map(|(p, split)| Ok(DatasetEntry { clip: read_clip(&p)?, split }))
        .collect::<Result<_>>()?;
    Ok(Dataset { entries, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_captions_tokenize() {
        let c = caption_for(Task::PressButton, Color::Red, RenderStyle::Robot, 0);
        assert_eq!(c, Caption::parse("robot pushing red button").unwrap());
        assert_eq!(c.tokens(), &[1, 6, 13, 19]);
        let c = caption_for(Task::CloseDrawer, Color::Green, RenderStyle::Robot, 0);
        assert_eq!(c.text(), "robot closing green drawer");
        let c = caption_for(Task::OpenDoor, Color::Blue, RenderStyle::Hand, 1);
        assert_eq!(c.text(), "a hand is opening the blue door");
    }

    #[test]
    fn unknown_words_and_long_captions_fail() {
        assert!(matches!(Caption::parse("robot juggling"), Err(Error::UnknownToken(w)) if w == "juggling"));
        assert!(Caption::parse("a a a a a a a a a").is_err());
        assert!(Caption::parse("<pad>").is_err());
    }

    proptest! {
        #[test]
        fn captions_round_trip(t in 0usize..3, c in 0usize..5, s in 0usize..3, seed: u64) {
            let cap = caption_for(Task::ALL[t], Color::ALL[c], RenderStyle::ALL[s], seed);
            prop_assert!(cap.tokens().len() <= MAX_CAPTION_LEN);
            prop_assert_eq!(Caption::parse(&cap.text()).unwrap(), cap.clone());
            prop_assert_eq!(cap.padded(8).unwrap().text(), cap.text());
        }
    }

    #[test]
    fn experts_solve_every_task() {
        for seed in 0..60u64 {
            let task = Task::ALL[(seed % 3) as usize];
            let cfg = WorldConfig::sampled(task, Color::Red, RenderStyle::Robot, seed);
            let a = scripted_policy(&cfg, seed).unwrap();
            assert_eq!(a.len(), 128);
            assert!(a.iter().all(|x| x.delta.iter().all(|v| (-1.0..=1.0).contains(v))));
            assert_eq!(a, scripted_policy(&cfg, seed).unwrap());
            let ep = simworld::run_actions(&cfg, seed, &a).unwrap();
            assert!(simworld::success(ep.final_state()));
            // First success lands inside the idle-tail window.
            let t = ep.states.iter().position(simworld::success).unwrap();
            assert!((15..=80).contains(&t), "{task} seed {seed} solved at {t}");
        }
    }

    #[test]
    fn clips_are_successful_and_deterministic() {
        let a = generate_clip(Task::OpenDoor, Color::Yellow, RenderStyle::Cartoon, 11).unwrap();
        assert!(a.achieved_success);
        assert_eq!(a.frames.len(), 128);
        assert_eq!(a, generate_clip(Task::OpenDoor, Color::Yellow, RenderStyle::Cartoon, 11).unwrap());
        assert_eq!(a.caption.text(), caption_for(Task::OpenDoor, Color::Yellow, RenderStyle::Cartoon, 11).text());
    }

    #[test]
    fn split_is_exact_and_disjoint() {
        for n in [1usize, 9, 10, 600, 601] {
            let held = held_out_indices(n, 4);
            assert_eq!(held.iter().filter(|&&h| h).count(), ((n as f64) / 10.0).round() as usize);
        }
        let ds = build_dataset(12, &Mixture::uniform(), 3).unwrap();
        let train: Vec<u64> = ds.split(Split::Train).map(|c| c.seed).collect();
        let held: Vec<u64> = ds.split(Split::HeldOut).map(|c| c.seed).collect();
        assert!(train.iter().all(|s| !held.contains(s)));
        assert_eq!(train.len() + held.len(), 12);
        assert_eq!(build_dataset(1, &Mixture::uniform(), 0).unwrap().len(), 1);
    }

    #[test]
    fn mixture_cells_are_balanced() {
        let n = 600;
        let mut counts = [[0usize; 5]; 3];
        for i in 0..n {
            let (t, c, _, _) = sample_clip_params(&Mixture::uniform(), 1, i).unwrap();
            counts[t as usize][c as usize] += 1;
        }
        let expect = n as f64 / 15.0;
        for row in counts {
            for k in row {
                assert!((k as f64 - expect).abs() <= 0.5 * expect, "{counts:?}");
            }
        }
    }

    #[test]
    fn bad_mixture_is_rejected() {
        let mut m = Mixture::uniform();
        m.tasks = [0.0; 3];
        assert!(build_dataset(3, &m, 0).is_err());
        m.tasks = [1.0, -1.0, 1.0];
        assert!(build_dataset(3, &m, 0).is_err());
    }

    #[test]
    fn metadata_matches_caption() {
        let ds = build_dataset(15, &Mixture::default(), 9).unwrap();
        for e in &ds.entries {
            let c = &e.clip;
            let words: Vec<&str> = c.caption.content().map(|t| VOCAB[t as usize]).collect();
            assert!(words.contains(&c.color.as_str()));
            assert!(words.contains(&verb_object(c.task).1));
            assert!(words.contains(&actor_word(c.style)));
            assert!(c.achieved_success);
        }
    }

    #[test]
    fn dataset_disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_dataset(3, &Mixture::uniform(), 2).unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let back = read_dataset(dir.path(), 2).unwrap();
        assert_eq!(back, ds);
        assert_eq!(read_index(dir.path()).unwrap().len(), 3);
    }
}
