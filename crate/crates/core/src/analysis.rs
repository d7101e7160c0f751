//! Evaluation tooling: the task×caption alignment matrix, zero-shot
//! evaluation, the ablation harness and report writers.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::demogen::{self, Caption, DemoClip};
use crate::error::{Error, Result};
use crate::nncore::checkpoint::write_atomic;
use crate::ppo::{self, EnvSpec, PPOConfig, PolicyParams, RewardSource};
use crate::reward::{EpisodeBuffer, RoboclipReward, TaskSpecifier};
use crate::rng;
use crate::simworld::{self, Action, Color, Frame, RenderStyle, Task, WorldConfig};
use crate::vlm::{self, EncoderParams};

/// Pearson correlation (two-pass). `None` if either series has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "series lengths differ");
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Rows are video tasks, columns are captions.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Row-major; `None` marks an undefined (zero-variance) entry.
    pub values: Vec<Option<f64>>,
}

impl AlignmentMatrix {
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>, values: Vec<Option<f64>>) -> Result<Self> {
        if row_labels.len() != col_labels.len() || values.len() != row_labels.len() * col_labels.len() {
            return Err(Error::InvalidArgument("alignment matrix must be square".into()));
        }
        if values.iter().flatten().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("correlations must lie in [-1, 1]".into()));
        }
        Ok(Self { row_labels, col_labels, values })
    }

    pub fn size(&self) -> usize {
        self.row_labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.size() + j]
    }

    /// Column index of each row's largest defined entry.
    pub fn row_argmax(&self) -> Vec<Option<usize>> {
        (0..self.size())
            .map(|i| {
                (0..self.size())
                    .filter_map(|j| self.get(i, j).map(|v| (j, v)))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(j, _)| j)
            })
            .collect()
    }

    pub fn diagonal_dominant(&self) -> bool {
        self.row_argmax().iter().enumerate().all(|(i, j)| *j == Some(i))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("video_task");
        for c in &self.col_labels {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (i, r) in self.row_labels.iter().enumerate() {
            s.push_str(r);
            for j in 0..self.size() {
                match self.get(i, j) {
                    Some(v) => {
                        let _ = write!(s, ",{v}");
                    }
                    None => s.push_str(",undefined"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Truncation points of the scripted policy used for varying-return videos.
pub fn truncation_points(n: usize) -> Vec<usize> {
    (1..=n).map(|k| 8 * k).collect()
}

/// One alignment video: the scripted expert cut off after `cutoff` steps.
pub fn truncated_episode(config: &WorldConfig, seed: u64, cutoff: usize) -> Result<(Vec<Frame>, f32)> {
    let actions = demogen::scripted_policy_truncated(config, seed, Some(cutoff))?;
    let ep = simworld::run_actions(config, seed, &actions)?;
    Ok((ep.frames(config.render_style), ep.true_return))
}

/// Entry (i, j): correlation over task-i videos between true return and the
/// similarity to the task-j caption. Videos use `color` and the robot style.
pub fn alignment_matrix(
    params: &EncoderParams,
    tasks: &[Task],
    n_videos_per_task: usize,
    color: Color,
    seed: u64,
) -> Result<AlignmentMatrix> {
    if n_videos_per_task < 2 {
        return Err(Error::InvalidArgument("need at least 2 videos per task".into()));
    }
    let captions: Vec<Caption> =
        tasks.iter().map(|&t| demogen::canonical_caption(t, color, RenderStyle::Robot)).collect();
    let text = vlm::encode_texts(params, &captions)?;
    let mut values = Vec::with_capacity(tasks.len() * tasks.len());
    for (ti, &task) in tasks.iter().enumerate() {
        let mut buffers = Vec::new();
        let mut returns = Vec::new();
        for (k, cutoff) in truncation_points(n_videos_per_task).into_iter().enumerate() {
            let s = rng::derive_seed(seed, "analysis/align", (ti * 1000 + k) as u64);
            let config = WorldConfig::sampled(task, color, RenderStyle::Robot, s);
            let (frames, ret) = truncated_episode(&config, s, cutoff)?;
            buffers.push(EpisodeBuffer::from_frames(frames)?);
            returns.push(f64::from(ret));
        }
        for z in &text {
            let r = RoboclipReward::with_target(params.clone(), z.clone());
            let sims: Vec<f64> = r.score_many(&buffers)?.into_iter().map(f64::from).collect();
            values.push(pearson(&returns, &sims));
        }
    }
    let labels: Vec<String> = tasks.iter().map(|t| t.to_string()).collect();
    AlignmentMatrix::new(labels.clone(), captions.iter().map(|c| c.text()).collect(), values)
}

const CELL: usize = 16;
const UNDEFINED_RGB: [u8; 3] = [128, 128, 128];

/// −1 → blue, +1 → red, linear in between.
pub fn color_map(v: f64) -> [u8; 3] {
    let t = ((v.clamp(-1.0, 1.0) + 1.0) / 2.0).clamp(0.0, 1.0);
    [(255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8]
}

pub fn inverse_color_map(rgb: [u8; 3]) -> Option<f64> {
    if rgb == UNDEFINED_RGB {
        return None;
    }
    Some(f64::from(rgb[0]) / 255.0 * 2.0 - 1.0)
}

pub fn heatmap_frame(m: &AlignmentMatrix) -> Frame {
    let n = m.size();
    let mut f = Frame::filled(n * CELL, n * CELL, UNDEFINED_RGB);
    for i in 0..n {
        for j in 0..n {
            let rgb = m.get(i, j).map_or(UNDEFINED_RGB, color_map);
            for y in i * CELL..(i + 1) * CELL {
                for x in j * CELL..(j + 1) * CELL {
                    f.set(x, y, rgb);
                }
            }
        }
    }
    f
}

/// Write `path` (PPM) and `path.txt` describing row and column order.
pub fn emit_heatmap(m: &AlignmentMatrix, path: &Path) -> Result<()> {
    write_atomic(path, &heatmap_frame(m).to_ppm())?;
    let mut side = format!(
        "{CELL}x{CELL} pixel cells; row i = videos of a task, column j = caption.\n\
         colour: red = round(255 t), blue = round(255 (1 - t)), t = (v + 1) / 2; gray = undefined\n"
    );
    for (i, r) in m.row_labels.iter().enumerate() {
        let _ = writeln!(side, "row {i}: {r}");
    }
    for (j, c) in m.col_labels.iter().enumerate() {
        let _ = writeln!(side, "col {j}: {c}");
    }
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".txt");
    write_atomic(Path::new(&sidecar), side.as_bytes())
}

/// Values recovered from an emitted heatmap (quantized to 1/255 of the range).
pub fn read_heatmap(path: &Path) -> Result<Vec<Option<f64>>> {
    let f = Frame::from_ppm(&std::fs::read(path)?)?;
    if f.width != f.height || f.width % CELL != 0 {
        return Err(Error::format("heatmap", "image is not a square grid of cells"));
    }
    let n = f.width / CELL;
    Ok((0..n * n).map(|k| inverse_color_map(f.pixel((k % n) * CELL + CELL / 2, (k / n) * CELL + CELL / 2))).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub success_rate: f64,
    pub mean_return: f64,
    pub std_return: f64,
    pub n_episodes: usize,
    pub seeds: Vec<u64>,
}

impl EvalReport {
    fn from_episodes(returns: &[f32], successes: &[bool], seeds: Vec<u64>) -> Result<Self> {
        let n = returns.len();
        if n == 0 {
            return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
        }
        let mean = returns.iter().map(|&r| f64::from(r)).sum::<f64>() / n as f64;
        let var = returns.iter().map(|&r| (f64::from(r) - mean).powi(2)).sum::<f64>() / n as f64;
        Ok(Self {
            success_rate: successes.iter().filter(|&&s| s).count() as f64 / n as f64,
            mean_return: mean,
            std_return: var.sqrt(),
            n_episodes: n,
            seeds,
        })
    }
}

/// Episode seeds used by every evaluation with base `seed`.
pub fn eval_seeds(n_episodes: usize, seed: u64) -> Vec<u64> {
    (0..n_episodes).map(|i| rng::derive_seed(seed, "ppo/episode", i as u64)).collect()
}

/// Mean-action rollouts on fresh environment seeds.
pub fn zero_shot_eval(policy: &PolicyParams, env: &EnvSpec, n_episodes: usize, seed: u64) -> Result<EvalReport> {
    let b = ppo::collect_rollouts(env, policy, &RewardSource::TrueTask, n_episodes, seed, true)?;
    EvalReport::from_episodes(&b.true_returns, &b.successes, eval_seeds(n_episodes, seed))
}

/// Non-learned reference controllers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Uniform actions in `[−1, 1]²`.
    Random,
    Scripted,
}

/// [`zero_shot_eval`] for a baseline on the same episode seeds.
pub fn baseline_eval(baseline: Baseline, env: &EnvSpec, n_episodes: usize, seed: u64) -> Result<EvalReport> {
    let seeds = eval_seeds(n_episodes, seed);
    let mut returns = Vec::with_capacity(n_episodes);
    let mut successes = Vec::with_capacity(n_episodes);
    for &s in &seeds {
        let config = env.config(s);
        let actions = match baseline {
            Baseline::Scripted => demogen::scripted_policy(&config, s)?,
            Baseline::Random => {
                let mut r = rng::stream(s, "analysis/random-policy");
                (0..config.horizon).map(|_| Action::new(r.random_range(-1.0..=1.0), r.random_range(-1.0..=1.0))).collect()
            }
        };
        let ep = simworld::run_actions(&config, s, &actions)?;
        returns.push(ep.true_return);
        successes.push(simworld::success(ep.final_state()));
    }
    EvalReport::from_episodes(&returns, &successes, seeds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    /// Blend of the first k demos under the trained video encoder.
    Demos(usize),
    /// One demo under an untrained encoder.
    RandomEncoder,
    /// Text specifier under the final-frame encoder.
    ImageEncoder,
    /// Text specifier under the trained video encoder.
    TextBaseline,
}

impl Arm {
    pub const ALL: [Arm; 6] = [Arm::Demos(1), Arm::Demos(2), Arm::Demos(5), Arm::RandomEncoder, Arm::ImageEncoder, Arm::TextBaseline];

    pub fn label(&self) -> String {
        match self {
            Arm::Demos(k) => format!("demos-{k}"),
            Arm::RandomEncoder => "random-encoder".into(),
            Arm::ImageEncoder => "image-encoder".into(),
            Arm::TextBaseline => "text-baseline".into(),
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-encoder" => Ok(Arm::RandomEncoder),
            "image-encoder" => Ok(Arm::ImageEncoder),
            "text-baseline" => Ok(Arm::TextBaseline),
            _ => s
                .strip_prefix("demos-")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k > 0)
                .map(Arm::Demos)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation arm {s:?}"))),
        }
    }
}

/// Everything the arms share.
pub struct AblationSetup<'a> {
    pub env: EnvSpec,
    pub ppo: PPOConfig,
    pub video_encoder: &'a EncoderParams,
    pub image_encoder: &'a EncoderParams,
    pub random_encoder: &'a EncoderParams,
    pub demos: &'a [DemoClip],
    pub caption: Caption,
    pub eval_episodes: usize,
    pub eval_seed: u64,
}

impl AblationSetup<'_> {
    /// Frozen reward for an arm.
    pub fn reward(&self, arm: Arm) -> Result<RoboclipReward> {
        let need = |k: usize| {
            if self.demos.len() < k {
                Err(Error::InvalidArgument(format!("arm needs {k} demos, {} available", self.demos.len())))
            } else {
                Ok(&self.demos[..k])
            }
        };
        let (enc, spec) = match arm {
            Arm::Demos(1) => (self.video_encoder, TaskSpecifier::Video(need(1)?[0].clone())),
            Arm::Demos(k) => (self.video_encoder, TaskSpecifier::Blend(need(k)?.to_vec())),
            Arm::RandomEncoder => (self.random_encoder, TaskSpecifier::Video(need(1)?[0].clone())),
            Arm::ImageEncoder => (self.image_encoder, TaskSpecifier::Text(self.caption.clone())),
            Arm::TextBaseline => (self.video_encoder, TaskSpecifier::Text(self.caption.clone())),
        };
        RoboclipReward::new(enc.clone(), &spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub arm: Arm,
    pub train_seed: u64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub results: Vec<ArmResult>,
}

pub fn median(v: &mut [f64]) -> f64 {
    assert!(!v.is_empty(), "median of an empty list");
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl AblationReport {
    pub fn arm(&self, arm: Arm) -> impl Iterator<Item = &ArmResult> {
        self.results.iter().filter(move |r| r.arm == arm)
    }

    pub fn median_return(&self, arm: Arm) -> Option<f64> {
        let mut v: Vec<f64> = self.arm(arm).map(|r| r.report.mean_return).collect();
        (!v.is_empty()).then(|| median(&mut v))
    }

    pub fn median_success(&self, arm: Arm) -> Option<f64> {
        let mut v: Vec<f64> = self.arm(arm).map(|r| r.report.success_rate).collect();
        (!v.is_empty()).then(|| median(&mut v))
    }

    /// True when every result was evaluated on the same episode seeds.
    pub fn paired(&self) -> bool {
        self.results.windows(2).all(|w| w[0].report.seeds == w[1].report.seeds)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "arm,train_seed,eval_seeds,n_episodes,success_rate,mean_return,std_return")?;
        for r in &self.results {
            let seeds = r.report.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ");
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.arm.label(),
                r.train_seed,
                seeds,
                r.report.n_episodes,
                r.report.success_rate,
                r.report.mean_return,
                r.report.std_return
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let mut seen = Vec::new();
        for r in &self.results {
            if !seen.contains(&r.arm) {
                seen.push(r.arm);
            }
        }
        for arm in seen {
            let _ = writeln!(
                s,
                "{:<15} median return {:+.4}  median success {:.3}  seeds {}",
                arm.label(),
                self.median_return(arm).unwrap_or(f64::NAN),
                self.median_success(arm).unwrap_or(f64::NAN),
                self.arm(arm).count()
            );
        }
        s
    }
}

/// Train one policy per arm per seed with identical budgets and evaluate
/// each on the same episode seeds.
pub fn run_ablation(
    arms: &[Arm],
    setup: &AblationSetup<'_>,
    seeds: &[u64],
    mut on_result: impl FnMut(&ArmResult),
) -> Result<AblationReport> {
    let mut results = Vec::new();
    for &arm in arms {
        let reward = setup.reward(arm)?;
        for &seed in seeds {
            let cfg = PPOConfig { seed, ..setup.ppo };
            let out = ppo::train(&setup.env, &RewardSource::Roboclip(&reward), &cfg, None, |_| {})?;
            let report = zero_shot_eval(&out.policy, &setup.env, setup.eval_episodes, setup.eval_seed)?;
            let r = ArmResult { arm, train_seed: seed, report };
            on_result(&r);
            results.push(r);
        }
    }
    Ok(AblationReport { results })
}
