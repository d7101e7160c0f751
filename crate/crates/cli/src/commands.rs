use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use roboclip_core::analysis::{self, AblationSetup, Arm, Baseline};
use roboclip_core::demogen::{self, Mixture};
use roboclip_core::ppo::{self, PolicyParams, RewardSource};
use roboclip_core::reward::RoboclipReward;
use roboclip_core::rng::derive_seed;
use roboclip_core::simworld::{RenderStyle, Task, WorldConfig};
use roboclip_core::vlm::{self, EncoderParams};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "roboclip", version, about = "Video-language rewards for sparse-reward policy learning")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// INI run configuration.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set ppo.lr=1e-4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Validate config and inputs, then stop without computing or writing.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Exit with status 5 when the command's quality gate fails.
    #[arg(long, global = true)]
    pub gate: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the captioned clip dataset.
    GenData,
    /// Contrastively pretrain the video/text encoder.
    PretrainVlm {
        /// Existing dataset directory; generated in memory when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train a policy on the similarity reward.
    Train {
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Starting policy, required for `--finetune`.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// `task` for true-reward finetuning or `bc:<demo_dir>` for behaviour cloning.
        #[arg(long)]
        finetune: Option<String>,
    },
    /// Zero-shot evaluation of a trained policy.
    Eval {
        #[arg(long)]
        policy: PathBuf,
    },
    /// Task/caption alignment matrix and heatmap.
    Align {
        #[arg(long)]
        encoder: PathBuf,
    },
    /// Train and evaluate every ablation arm.
    Ablate {
        #[arg(long)]
        encoder: PathBuf,
        /// Final-frame encoder for the image-encoder arm.
        #[arg(long)]
        image_encoder: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::PretrainVlm { .. } => "pretrain-vlm",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Align { .. } => "align",
            Command::Ablate { .. } => "ablate",
        }
    }
}

enum Finetune {
    Task,
    Bc(PathBuf),
}

fn parse_finetune(s: &str) -> Result<Finetune, CliError> {
    match s {
        "task" => Ok(Finetune::Task),
        _ => match s.strip_prefix("bc:") {
            Some(dir) if !dir.is_empty() => Ok(Finetune::Bc(dir.into())),
            _ => Err(CliError::Config(format!("--finetune {s:?}: expected task or bc:<demo_dir>"))),
        },
    }
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(path.to_path_buf()))
    }
}

fn gate(enabled: bool, ok: bool, what: impl FnOnce() -> String) -> Result<(), CliError> {
    let msg = what();
    println!("gate {}: {msg}", if ok { "pass" } else { "FAIL" });
    if enabled && !ok {
        return Err(CliError::Gate(msg));
    }
    Ok(())
}

/// Inputs every command checks before touching the output directory.
fn preflight(cfg: &RunConfig, command: &Command) -> Result<(), CliError> {
    match command {
        Command::GenData => {}
        Command::PretrainVlm { data } => {
            if let Some(d) = data {
                require(&d.join(demogen::INDEX_FILE))?;
            }
        }
        Command::Train { encoder, policy, finetune } => {
            let ft = finetune.as_deref().map(parse_finetune).transpose()?;
            match &ft {
                Some(_) => {
                    let p = policy.as_ref().ok_or_else(|| CliError::Config("--finetune needs --policy".into()))?;
                    require(p)?;
                }
                None => {
                    let e = encoder.as_ref().ok_or_else(|| CliError::Config("train needs --encoder".into()))?;
                    require(e)?;
                }
            }
            if let Some(Finetune::Bc(dir)) = &ft {
                require(dir)?;
            }
        }
        Command::Eval { policy } => require(policy)?,
        Command::Align { encoder } => require(encoder)?,
        Command::Ablate { encoder, image_encoder } => {
            require(encoder)?;
            let arms = cfg.arms()?;
            match image_encoder {
                Some(p) => require(p)?,
                None if arms.contains(&Arm::ImageEncoder) => {
                    return Err(CliError::Config("the image-encoder arm needs --image-encoder".into()))
                }
                None => {}
            }
        }
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(cli.common.config.as_deref(), &cli.common.overrides)?;
    preflight(&cfg, &cli.command)?;
    if cli.common.dry_run {
        print!("{}", cfg.to_ini());
        println!("# config hash {}", cfg.hash());
        println!("# dry run: {} would write to {}", cli.command.name(), cfg.out_dir().display());
        return Ok(());
    }
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.ini"), cfg.to_ini())?;
    let mut manifest = Manifest::start(cli.command.name(), cfg.hash());
    let gated = cli.common.gate;
    let result = match &cli.command {
        Command::GenData => gen_data(&cfg, &out, &mut manifest),
        Command::PretrainVlm { data } => pretrain_vlm(&cfg, &out, data.as_deref(), gated, &mut manifest),
        Command::Train { encoder, policy, finetune } => {
            let ft = finetune.as_deref().map(parse_finetune).transpose()?;
            train(&cfg, &out, encoder.as_deref(), policy.as_deref(), ft, gated, &mut manifest)
        }
        Command::Eval { policy } => eval(&cfg, &out, policy, gated, &mut manifest),
        Command::Align { encoder } => align(&cfg, &out, encoder, gated, &mut manifest),
        Command::Ablate { encoder, image_encoder } => {
            ablate(&cfg, &out, encoder, image_encoder.as_deref(), gated, &mut manifest)
        }
    };
    // Gate failures keep their artifacts and manifest.
    if result.is_ok() || matches!(result, Err(CliError::Gate(_))) {
        manifest.write(&out)?;
    }
    result
}

fn gen_data(cfg: &RunConfig, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    let n: usize = cfg.parse("vlm", "n_clips")?;
    let ds = demogen::build_dataset(n, &Mixture::default(), cfg.seed()?)?;
    let dir = out.join("data");
    demogen::write_dataset(&dir, &ds)?;
    let ok = ds.entries.iter().filter(|e| e.clip.achieved_success).count();
    println!("wrote {} clips ({} successful) to {}", ds.len(), ok, dir.display());
    manifest.checkpoint("dataset", "data");
    manifest.metric("n_clips", ds.len() as f64);
    manifest.metric("successful_clips", ok as f64);
    Ok(())
}

fn pretrain_vlm(
    cfg: &RunConfig,
    out: &Path,
    data: Option<&Path>,
    gated: bool,
    manifest: &mut Manifest,
) -> Result<(), CliError> {
    let seed = cfg.seed()?;
    let ds = match data {
        Some(d) => demogen::read_dataset(d, seed)?,
        None => demogen::build_dataset(cfg.parse("vlm", "n_clips")?, &Mixture::default(), seed)?,
    };
    let encoder = cfg.encoder()?;
    let pc = cfg.pretrain()?;
    let train = vlm::prepare_clips(encoder.kind, ds.split(demogen::Split::Train))?;
    let held = vlm::prepare_clips(encoder.kind, ds.split(demogen::Split::HeldOut))?;
    let chance = vlm::retrieval_chance(&held);
    let outcome = vlm::pretrain_prepared(&train, &held, &pc, encoder, |s| {
        println!("epoch {:>3}  loss {:.4}  retrieval {:.3}", s.epoch, s.train_loss, s.retrieval);
    })?;
    outcome.params.save(&out.join("encoder.rclp"))?;
    let mut csv = String::from("epoch,train_loss,retrieval\n");
    for s in &outcome.curve {
        csv.push_str(&format!("{},{},{}\n", s.epoch, s.train_loss, s.retrieval));
    }
    std::fs::write(out.join("pretrain_curve.csv"), csv)?;
    let best = outcome.curve.iter().find(|s| s.epoch == outcome.best_epoch).map_or(0.0, |s| s.retrieval);
    manifest.checkpoint("encoder", "encoder.rclp");
    manifest.metric("best_epoch", outcome.best_epoch as f64);
    manifest.metric("retrieval", best);
    manifest.metric("retrieval_chance", chance);
    gate(gated, best >= 0.8, || format!("held-out retrieval {best:.3} (need >= 0.80, chance {chance:.3})"))
}

fn train(
    cfg: &RunConfig,
    out: &Path,
    encoder: Option<&Path>,
    policy: Option<&Path>,
    finetune: Option<Finetune>,
    gated: bool,
    manifest: &mut Manifest,
) -> Result<(), CliError> {
    let env = cfg.env()?;
    let mut pc = cfg.ppo()?;
    let init = policy.map(PolicyParams::load).transpose()?;
    let log = |r: &ppo::CurveRow| {
        println!(
            "update {:>4}  steps {:>7}  reward {:+.4}  true {:+.3}  success {:.2}",
            r.update_index, r.env_steps, r.mean_roboclip_reward, r.mean_true_return, r.success_rate
        )
    };
    let (trained, curve) = match finetune {
        None => {
            let enc = EncoderParams::load(encoder.expect("checked in preflight"))?;
            let spec = cfg.specifier()?.resolve(Path::new("."))?;
            let reward = RoboclipReward::new(enc, &spec)?;
            let o = ppo::train(&env, &RewardSource::Roboclip(&reward), &pc, init, log)?;
            (o.policy, o.curve)
        }
        Some(Finetune::Task) => {
            pc.total_env_steps = cfg.parse("ppo", "finetune_env_steps")?;
            let start = init.expect("checked in preflight");
            let o = ppo::train(&env, &RewardSource::TrueTask, &pc, Some(start), log)?;
            (o.policy, o.curve)
        }
        Some(Finetune::Bc(dir)) => {
            let clip = demogen::read_clip(&dir)?;
            let wc = WorldConfig::sampled(clip.task, clip.color, clip.style, clip.seed);
            let demo = demogen::expert_trajectory(&wc, clip.seed)?;
            let (p, mse) =
                ppo::bc_finetune(&init.expect("checked in preflight"), &demo, cfg.parse("ppo", "bc_epochs")?, cfg.parse("ppo", "bc_lr")?)?;
            println!("behaviour cloning mse {mse:.6}");
            manifest.metric("bc_mse", mse);
            (p, Vec::new())
        }
    };
    trained.save(&out.join("policy.rclp"))?;
    ppo::write_curve_csv(&curve, BufWriter::new(File::create(out.join("curve.csv"))?))?;
    manifest.checkpoint("policy", "policy.rclp");
    let n = cfg.parse("analysis", "eval_episodes")?;
    let seed = cfg.parse("analysis", "eval_seed")?;
    let report = analysis::zero_shot_eval(&trained, &env, n, seed)?;
    let floor = analysis::baseline_eval(Baseline::Random, &env, n, seed)?;
    record_eval(manifest, &report);
    println!("zero-shot success {:.3}  return {:+.4}", report.success_rate, report.mean_return);
    gate(gated, report.success_rate > floor.success_rate, || {
        format!("zero-shot success {:.3} vs random floor {:.3}", report.success_rate, floor.success_rate)
    })
}

fn record_eval(manifest: &mut Manifest, r: &analysis::EvalReport) {
    manifest.metric("success_rate", r.success_rate);
    manifest.metric("mean_return", r.mean_return);
    manifest.metric("std_return", r.std_return);
    manifest.metric("n_episodes", r.n_episodes as f64);
}

fn eval(cfg: &RunConfig, out: &Path, policy: &Path, gated: bool, manifest: &mut Manifest) -> Result<(), CliError> {
    let env = cfg.env()?;
    let p = PolicyParams::load(policy)?;
    let n = cfg.parse("analysis", "eval_episodes")?;
    let seed = cfg.parse("analysis", "eval_seed")?;
    let report = analysis::zero_shot_eval(&p, &env, n, seed)?;
    let floor = analysis::baseline_eval(Baseline::Random, &env, n, seed)?;
    let mut csv = String::from("episode_seed\n");
    for s in &report.seeds {
        csv.push_str(&format!("{s}\n"));
    }
    std::fs::write(out.join("eval_seeds.csv"), csv)?;
    std::fs::write(
        out.join("eval.csv"),
        format!(
            "n_episodes,success_rate,mean_return,std_return\n{},{},{},{}\n",
            report.n_episodes, report.success_rate, report.mean_return, report.std_return
        ),
    )?;
    record_eval(manifest, &report);
    manifest.metric("random_success_rate", floor.success_rate);
    println!(
        "success {:.3}  return {:+.4} ± {:.4}  over {} episodes",
        report.success_rate, report.mean_return, report.std_return, report.n_episodes
    );
    gate(gated, report.success_rate > floor.success_rate, || {
        format!("success {:.3} vs random floor {:.3}", report.success_rate, floor.success_rate)
    })
}

fn align(cfg: &RunConfig, out: &Path, encoder: &Path, gated: bool, manifest: &mut Manifest) -> Result<(), CliError> {
    let enc = EncoderParams::load(encoder)?;
    let m = analysis::alignment_matrix(
        &enc,
        Task::ALL,
        cfg.parse("analysis", "videos_per_task")?,
        cfg.parse("analysis", "align_color")?,
        cfg.seed()?,
    )?;
    std::fs::write(out.join("alignment.csv"), m.to_csv())?;
    analysis::emit_heatmap(&m, &out.join("alignment.ppm"))?;
    manifest.checkpoint("alignment", "alignment.csv");
    manifest.checkpoint("heatmap", "alignment.ppm");
    print!("{}", m.to_csv());
    let dominant = m.diagonal_dominant();
    manifest.metric("diagonal_dominant", f64::from(u8::from(dominant)));
    gate(gated, dominant, || format!("row argmax on the diagonal: {:?}", m.row_argmax()))
}

fn ablate(
    cfg: &RunConfig,
    out: &Path,
    encoder: &Path,
    image_encoder: Option<&Path>,
    gated: bool,
    manifest: &mut Manifest,
) -> Result<(), CliError> {
    let env = cfg.env()?;
    let video = EncoderParams::load(encoder)?;
    let image = match image_encoder {
        Some(p) => EncoderParams::load(p)?,
        None => video.clone(),
    };
    let random = vlm::random_params(cfg.parse("analysis", "random_encoder_seed")?)?;
    let arms = cfg.arms()?;
    let max_demos = arms.iter().filter_map(|a| if let Arm::Demos(k) = a { Some(*k) } else { None }).max().unwrap_or(1);
    let demo_seed: u64 = cfg.parse("analysis", "demo_seed")?;
    let demos = (0..max_demos as u64)
        .map(|i| demogen::generate_clip(env.task, env.color, RenderStyle::Robot, derive_seed(demo_seed, "ablate/demo", i)))
        .collect::<Result<Vec<_>, _>>()?;
    let setup = AblationSetup {
        env,
        ppo: cfg.ppo()?,
        video_encoder: &video,
        image_encoder: &image,
        random_encoder: &random,
        demos: &demos,
        caption: demogen::canonical_caption(env.task, env.color, RenderStyle::Robot),
        eval_episodes: cfg.parse("analysis", "eval_episodes")?,
        eval_seed: cfg.parse("analysis", "eval_seed")?,
    };
    let report = analysis::run_ablation(&arms, &setup, &cfg.seeds()?, |r| {
        println!(
            "{:<15} seed {:>3}  success {:.3}  return {:+.4}",
            r.arm.label(),
            r.train_seed,
            r.report.success_rate,
            r.report.mean_return
        );
    })?;
    report.write_csv(BufWriter::new(File::create(out.join("ablation.csv"))?))?;
    print!("{}", report.summary());
    manifest.checkpoint("ablation", "ablation.csv");
    for &arm in &arms {
        if let Some(m) = report.median_return(arm) {
            manifest.metric(&format!("{}.median_return", arm.label()), m);
        }
    }
    let med = |a: Arm| report.median_return(a);
    let mut checks = Vec::new();
    for (hi, lo, strict) in [
        (Arm::Demos(1), Arm::Demos(5), false),
        (Arm::Demos(1), Arm::RandomEncoder, true),
        (Arm::TextBaseline, Arm::ImageEncoder, true),
    ] {
        if let (Some(h), Some(l)) = (med(hi), med(lo)) {
            let ok = if strict { h > l } else { h >= l };
            checks.push((format!("{} {} {}", hi.label(), if strict { ">" } else { ">=" }, lo.label()), ok));
        }
    }
    let all = checks.iter().all(|c| c.1);
    gate(gated, all, || {
        checks.iter().map(|(s, ok)| format!("{s}: {}", if *ok { "ok" } else { "violated" })).collect::<Vec<_>>().join("; ")
    })
}
