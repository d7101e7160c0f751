//! Dual video/text encoder and its contrastive pretraining.
//!
//! Video branch: per-frame `conv → ReLU → conv → ReLU → global mean-pool →
//! affine → ReLU`, temporal mean over frames, affine projection, L2 norm.
//! Text branch: token embedding table, mean over non-pad tokens, two-layer
//! MLP, L2 norm. Both land in the same `dim`-dimensional unit sphere.
//!
//! The final-frame variant ([`EncoderKind::FinalFrame`]) is the same network
//! fed a single frame.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::demogen::{self, Caption, Dataset, DemoClip, Split, VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::nncore::{
    adam_step, backward_mlp, backward_params, checkpoint, forward_mlp, init_stack, softmax_cross_entropy, AdamConfig,
    AdamState, LayerSpec, ParamSet, Scalar, Tape, Tensor,
};
use crate::reward;
use crate::rng;
use crate::simworld::{Color, Frame, RenderStyle, Task};

/// Frames per encoded clip.
pub const CLIP_LEN: usize = 32;
/// Side of every encoder input frame.
pub const FRAME_SIZE: usize = 64;
const UNIT_TOL: f32 = 1e-5;

/// Unit-norm latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// Normalize `v`; fails if its norm is below `1e-6`.
    pub fn normalized(v: Vec<f32>) -> Result<Self> {
        let n = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        if !n.is_finite() {
            return Err(Error::NonFinite("embedding".into()));
        }
        if n < 1e-6 {
            return Err(Error::DegenerateSpecifier(format!("vector norm {n:.3e} below 1e-6")));
        }
        Ok(Self(v.into_iter().map(|x| (f64::from(x) / n) as f32).collect()))
    }

    /// Wrap an already unit-norm vector.
    pub fn from_unit(v: Vec<f32>) -> Result<Self> {
        let e = Self(v);
        if (e.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidArgument(format!("embedding norm {} is not 1", e.norm())));
        }
        Ok(e)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f32 {
        self.0.iter().map(|x| x * x).sum::<f32>().sqrt()
    }
}

/// Dot product of two unit embeddings.
pub fn similarity(a: &Embedding, b: &Embedding) -> f32 {
    let s: f64 = a.0.iter().zip(&b.0).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    (s as f32).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// 32-frame clips.
    Video,
    /// The last frame of an episode only.
    FinalFrame,
}

impl EncoderKind {
    pub fn tag(self) -> &'static str {
        match self {
            EncoderKind::Video => "video-meanpool-v1",
            EncoderKind::FinalFrame => "final-frame-v1",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "video-meanpool-v1" => Ok(EncoderKind::Video),
            "final-frame-v1" => Ok(EncoderKind::FinalFrame),
            other => Err(Error::format("encoder checkpoint", format!("unknown architecture {other:?}"))),
        }
    }

    pub fn frames(self) -> usize {
        match self {
            EncoderKind::Video => CLIP_LEN,
            EncoderKind::FinalFrame => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub dim: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub kernel: usize,
    pub text_embed: usize,
    pub text_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { kind: EncoderKind::Video, dim: 32, conv1: 8, conv2: 16, kernel: 3, text_embed: 32, text_hidden: 64 }
    }
}

impl EncoderConfig {
    pub fn final_frame() -> Self {
        Self { kind: EncoderKind::FinalFrame, ..Self::default() }
    }

    fn frame_layers(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv("v.conv1", 3, self.conv1, self.kernel),
            LayerSpec::Relu,
            LayerSpec::conv("v.conv2", self.conv1, self.conv2, self.kernel),
            LayerSpec::Relu,
            LayerSpec::GlobalMeanPool,
            LayerSpec::affine("v.frame", self.conv2, self.dim),
            LayerSpec::Relu,
        ]
    }

    fn proj_layers(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::affine("v.proj", self.dim, self.dim)]
    }

    fn text_layers(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::affine("t.fc1", self.text_embed, self.text_hidden),
            LayerSpec::Relu,
            LayerSpec::affine("t.fc2", self.text_hidden, self.dim),
        ]
    }

    fn meta(&self) -> checkpoint::Meta {
        [
            ("arch", self.kind.tag().to_string()),
            ("dim", self.dim.to_string()),
            ("vocab_size", VOCAB_SIZE.to_string()),
            ("conv1", self.conv1.to_string()),
            ("conv2", self.conv2.to_string()),
            ("kernel", self.kernel.to_string()),
            ("text_embed", self.text_embed.to_string()),
            ("text_hidden", self.text_hidden.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn from_meta(meta: &checkpoint::Meta) -> Result<Self> {
        let get = |k: &str| checkpoint::meta_get(meta, k).ok_or_else(|| Error::format("encoder checkpoint", format!("missing {k}")));
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::format("encoder checkpoint", format!("bad {k}")))
        };
        if num("vocab_size")? != VOCAB_SIZE {
            return Err(Error::format("encoder checkpoint", "vocabulary size mismatch"));
        }
        Ok(Self {
            kind: EncoderKind::from_tag(get("arch")?)?,
            dim: num("dim")?,
            conv1: num("conv1")?,
            conv2: num("conv2")?,
            kernel: num("kernel")?,
            text_embed: num("text_embed")?,
            text_hidden: num("text_hidden")?,
        })
    }
}

/// Trained or freshly initialized encoder weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub params: ParamSet<f32>,
}

pub fn init_params(config: EncoderConfig, seed: u64) -> Result<EncoderParams> {
    let mut params = ParamSet::new();
    let mut r = rng::stream(seed, "vlm/init");
    init_stack(&config.frame_layers(), &mut params, &mut r)?;
    init_stack(&config.proj_layers(), &mut params, &mut r)?;
    let lim = (6.0 / (VOCAB_SIZE + config.text_embed) as f64).sqrt() as f32;
    let table = (0..VOCAB_SIZE * config.text_embed).map(|_| rand::Rng::random_range(&mut r, -lim..=lim)).collect();
    params.insert("t.embed", Tensor::new(vec![VOCAB_SIZE, config.text_embed], table)?)?;
    init_stack(&config.text_layers(), &mut params, &mut r)?;
    Ok(EncoderParams { config, params })
}

/// Untrained video encoder (the random-init ablation).
pub fn random_params(seed: u64) -> Result<EncoderParams> {
    init_params(EncoderConfig::default(), seed)
}

impl EncoderParams {
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.params, &self.config.meta())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = checkpoint::load(path)?;
        let config = EncoderConfig::from_meta(&meta)?;
        let fresh = init_params(config, 0)?;
        if fresh.params.names().ne(params.names()) {
            return Err(Error::format("encoder checkpoint", "parameter table does not match architecture"));
        }
        Ok(Self { config, params })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }
}

fn l2_normalize_rows<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, Vec<S>) {
    let mut y = x.clone();
    let c = x.cols();
    let mut norms = Vec::with_capacity(x.rows());
    for row in y.data_mut().chunks_mut(c) {
        let n = row.iter().map(|&v| v * v).sum::<S>().sqrt().max(S::of(1e-12));
        row.iter_mut().for_each(|v| *v = *v / n);
        norms.push(n);
    }
    (y, norms)
}

fn l2_normalize_backward<S: Scalar>(y: &Tensor<S>, norms: &[S], dy: &Tensor<S>) -> Tensor<S> {
    let c = y.cols();
    let mut dx = dy.clone();
    for (i, row) in dx.data_mut().chunks_mut(c).enumerate() {
        let yr = &y.data()[i * c..(i + 1) * c];
        let proj: S = yr.iter().zip(row.iter()).map(|(&a, &b)| a * b).sum();
        for (d, &yv) in row.iter_mut().zip(yr) {
            *d = (*d - yv * proj) / norms[i];
        }
    }
    dx
}

/// Activations of a batched video forward pass.
pub struct VideoTape<S> {
    frame_tape: Tape<S>,
    proj_tape: Tape<S>,
    out: Tensor<S>,
    norms: Vec<S>,
    frames: usize,
}

/// `pixels`: `[B*T, 3, H, W]`, clip-major. Returns unit rows `[B, dim]`.
pub fn video_forward<S: Scalar>(
    params: &ParamSet<S>,
    config: &EncoderConfig,
    pixels: &Tensor<S>,
    frames: usize,
) -> Result<(Tensor<S>, VideoTape<S>)> {
    let n = pixels.shape()[0];
    if frames == 0 || n % frames != 0 {
        return Err(Error::shape(format!("{n} frames do not split into clips of {frames}")));
    }
    let b = n / frames;
    let (per_frame, frame_tape) = forward_mlp(params, pixels, &config.frame_layers())?;
    let d = config.dim;
    let mut pooled = vec![S::zero(); b * d];
    let inv = S::of(1.0 / frames as f64);
    for (i, row) in per_frame.data().chunks(d).enumerate() {
        let dst = &mut pooled[(i / frames) * d..(i / frames + 1) * d];
        for (p, &v) in dst.iter_mut().zip(row) {
            *p += v * inv;
        }
    }
    let (raw, proj_tape) = forward_mlp(params, &Tensor::new(vec![b, d], pooled)?, &config.proj_layers())?;
    let (out, norms) = l2_normalize_rows(&raw);
    Ok((out.clone(), VideoTape { frame_tape, proj_tape, out, norms, frames }))
}

pub fn video_backward<S: Scalar>(params: &mut ParamSet<S>, tape: &VideoTape<S>, d_emb: &Tensor<S>) -> Result<()> {
    let d_raw = l2_normalize_backward(&tape.out, &tape.norms, d_emb);
    let d_pooled = backward_mlp(params, &tape.proj_tape, &d_raw)?;
    let d = d_pooled.cols();
    let inv = S::of(1.0 / tape.frames as f64);
    let b = d_pooled.rows();
    let mut d_frames = Vec::with_capacity(b * tape.frames * d);
    for row in d_pooled.data().chunks(d) {
        for _ in 0..tape.frames {
            d_frames.extend(row.iter().map(|&v| v * inv));
        }
    }
    backward_params(params, &tape.frame_tape, &Tensor::new(vec![b * tape.frames, d], d_frames)?)
}

pub struct TextTape<S> {
    tokens: Vec<Vec<u16>>,
    mlp_tape: Tape<S>,
    out: Tensor<S>,
    norms: Vec<S>,
}

pub fn text_forward<S: Scalar>(
    params: &ParamSet<S>,
    config: &EncoderConfig,
    captions: &[Caption],
) -> Result<(Tensor<S>, TextTape<S>)> {
    let e = config.text_embed;
    let table = params.value("t.embed")?;
    let mut means = Vec::with_capacity(captions.len() * e);
    let mut tokens = Vec::with_capacity(captions.len());
    for cap in captions {
        let toks: Vec<u16> = cap.content().collect();
        if toks.is_empty() {
            return Err(Error::InvalidArgument("empty caption".into()));
        }
        let inv = S::of(1.0 / toks.len() as f64);
        let mut m = vec![S::zero(); e];
        for &t in &toks {
            for (acc, &v) in m.iter_mut().zip(table.row(t as usize)) {
                *acc += v;
            }
        }
        means.extend(m.into_iter().map(|v| v * inv));
        tokens.push(toks);
    }
    let (raw, mlp_tape) = forward_mlp(params, &Tensor::new(vec![captions.len(), e], means)?, &config.text_layers())?;
    let (out, norms) = l2_normalize_rows(&raw);
    Ok((out.clone(), TextTape { tokens, mlp_tape, out, norms }))
}

pub fn text_backward<S: Scalar>(params: &mut ParamSet<S>, tape: &TextTape<S>, d_emb: &Tensor<S>) -> Result<()> {
    let d_raw = l2_normalize_backward(&tape.out, &tape.norms, d_emb);
    let d_mean = backward_mlp(params, &tape.mlp_tape, &d_raw)?;
    let e = d_mean.cols();
    let g = params.grad_mut("t.embed")?;
    for (i, toks) in tape.tokens.iter().enumerate() {
        let inv = S::of(1.0 / toks.len() as f64);
        let src = &d_mean.data()[i * e..(i + 1) * e];
        for &t in toks {
            for (dst, &v) in g.row_mut(t as usize).iter_mut().zip(src) {
                *dst += v * inv;
            }
        }
    }
    Ok(())
}

/// Symmetric InfoNCE over `video · textᵀ / τ`; rows are paired by index.
/// Returns the loss and its gradients w.r.t. both embedding batches.
pub fn info_nce_loss<S: Scalar>(video: &Tensor<S>, text: &Tensor<S>, tau: S) -> Result<(S, Tensor<S>, Tensor<S>)> {
    if !(tau > S::zero()) {
        return Err(Error::InvalidArgument(format!("temperature {tau:?} must be positive")));
    }
    if video.shape() != text.shape() || video.rank() != 2 {
        return Err(Error::shape(format!("video {:?} vs text {:?}", video.shape(), text.shape())));
    }
    let (n, d) = (video.rows(), video.cols());
    if n < 2 {
        return Err(Error::InvalidArgument("InfoNCE needs a batch of at least 2".into()));
    }
    let inv_tau = S::one() / tau;
    let mut logits = vec![S::zero(); n * n];
    let mut logits_t = vec![S::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            let s = crate::nncore::dot(video.row(i), text.row(j)) * inv_tau;
            logits[i * n + j] = s;
            logits_t[j * n + i] = s;
        }
    }
    let targets: Vec<usize> = (0..n).collect();
    let (l1, g1) = softmax_cross_entropy(&Tensor::new(vec![n, n], logits)?, &targets)?;
    let (l2, g2) = softmax_cross_entropy(&Tensor::new(vec![n, n], logits_t)?, &targets)?;
    let half = S::of(0.5);
    // dL/dS[i][j] = ½ (g1[i][j] + g2[j][i]), then through S = V·Tᵀ/τ.
    let mut ds = vec![S::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            ds[i * n + j] = half * (g1.data()[i * n + j] + g2.data()[j * n + i]) * inv_tau;
        }
    }
    let mut dv = vec![S::zero(); n * d];
    let mut dt = vec![S::zero(); n * d];
    for i in 0..n {
        for j in 0..n {
            let g = ds[i * n + j];
            for k in 0..d {
                dv[i * d + k] += g * text.row(j)[k];
                dt[j * d + k] += g * video.row(i)[k];
            }
        }
    }
    Ok((half * (l1 + l2), Tensor::new(vec![n, d], dv)?, Tensor::new(vec![n, d], dt)?))
}

fn check_frames(frames: &[Frame], expected: usize) -> Result<()> {
    if frames.len() != expected {
        return Err(Error::Contract(format!("clip has {} frames, expected {expected}", frames.len())));
    }
    if let Some(f) = frames.iter().find(|f| f.width != FRAME_SIZE || f.height != FRAME_SIZE) {
        return Err(Error::Contract(format!(
            "frame is {}x{}, expected {FRAME_SIZE}x{FRAME_SIZE}",
            f.width, f.height
        )));
    }
    Ok(())
}

/// Append `[3, H, W]` planes scaled to `[-0.5, 0.5]`.
pub fn push_frame_chw(out: &mut Vec<f32>, f: &Frame) {
    let hw = f.width * f.height;
    let start = out.len();
    out.resize(start + 3 * hw, 0.0);
    let dst = &mut out[start..];
    for (p, px) in f.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            dst[c * hw + p] = f32::from(px[c]) / 255.0 - 0.5;
        }
    }
}

fn pixels_tensor(clips: &[&[Frame]]) -> Result<Tensor> {
    let n: usize = clips.iter().map(|c| c.len()).sum();
    let mut data = Vec::with_capacity(n * 3 * FRAME_SIZE * FRAME_SIZE);
    for clip in clips {
        for f in clip.iter() {
            push_frame_chw(&mut data, f);
        }
    }
    Tensor::new(vec![n, 3, FRAME_SIZE, FRAME_SIZE], data)
}

fn rows_to_embeddings(t: Tensor) -> Result<Vec<Embedding>> {
    let d = t.cols();
    t.check_finite("encoder output")?;
    t.data().chunks(d).map(|r| Embedding::from_unit(r.to_vec())).collect()
}

/// Encode one preprocessed clip (`kind.frames()` frames of 64×64).
pub fn encode_video(params: &EncoderParams, clip: &[Frame]) -> Result<Embedding> {
    Ok(encode_videos(params, &[clip])?.remove(0))
}

/// Batched [`encode_video`].
pub fn encode_videos(params: &EncoderParams, clips: &[&[Frame]]) -> Result<Vec<Embedding>> {
    let t = params.config.kind.frames();
    let mut out = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(16) {
        for c in chunk {
            check_frames(c, t)?;
        }
        let px = pixels_tensor(chunk)?;
        let (emb, _) = video_forward(&params.params, &params.config, &px, t)?;
        out.extend(rows_to_embeddings(emb)?);
    }
    Ok(out)
}

pub fn encode_text(params: &EncoderParams, caption: &Caption) -> Result<Embedding> {
    Ok(encode_texts(params, std::slice::from_ref(caption))?.remove(0))
}

pub fn encode_texts(params: &EncoderParams, captions: &[Caption]) -> Result<Vec<Embedding>> {
    let (emb, _) = text_forward(&params.params, &params.config, captions)?;
    rows_to_embeddings(emb)
}

/// Encoder input for a full demo clip, according to the encoder kind.
pub fn clip_input(kind: EncoderKind, frames: &[Frame]) -> Result<Vec<Frame>> {
    match kind {
        EncoderKind::Video => reward::downsample_and_crop(frames),
        EncoderKind::FinalFrame => {
            let last = frames.last().ok_or_else(|| Error::InvalidArgument("empty clip".into()))?;
            Ok(vec![last.center_crop(FRAME_SIZE)?])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub temperature: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { temperature: 0.07, batch_size: 32, epochs: 20, lr: 2e-3, seed: 0 }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature {} must be positive", self.temperature)));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Caption class of a clip: what its caption asserts.
pub type CaptionClass = (Task, Color, &'static str);

pub fn caption_class(clip: &DemoClip) -> CaptionClass {
    (clip.task, clip.color, demogen::actor_word(clip.style))
}

/// Preprocessed clip kept compactly as bytes.
#[derive(Debug, Clone)]
pub struct TrainingClip {
    pub frames: Vec<Frame>,
    pub caption: Caption,
    pub class: CaptionClass,
}

pub fn prepare_clips<'a>(kind: EncoderKind, clips: impl IntoIterator<Item = &'a DemoClip>) -> Result<Vec<TrainingClip>> {
    clips
        .into_iter()
        .map(|c| Ok(TrainingClip { frames: clip_input(kind, &c.frames)?, caption: c.caption.clone(), class: caption_class(c) }))
        .collect()
}

/// Caption→video top-1 retrieval: for every clip, its caption queries all
/// clips; a hit is a top video with the same caption class.
pub fn retrieval_accuracy(params: &EncoderParams, clips: &[TrainingClip]) -> Result<f64> {
    if clips.is_empty() {
        return Err(Error::InvalidArgument("no clips to evaluate".into()));
    }
    let videos = encode_videos(params, &clips.iter().map(|c| c.frames.as_slice()).collect::<Vec<_>>())?;
    let texts = encode_texts(params, &clips.iter().map(|c| c.caption.clone()).collect::<Vec<_>>())?;
    let hits = texts
        .iter()
        .zip(clips)
        .filter(|(t, c)| {
            let best = videos
                .iter()
                .enumerate()
                .max_by(|a, b| similarity(t, a.1).total_cmp(&similarity(t, b.1)).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            clips[best].class == c.class
        })
        .count();
    Ok(hits as f64 / clips.len() as f64)
}

/// Expected [`retrieval_accuracy`] of a uniformly random ranking.
pub fn retrieval_chance(clips: &[TrainingClip]) -> f64 {
    let mut counts: HashMap<CaptionClass, usize> = HashMap::new();
    for c in clips {
        *counts.entry(c.class).or_default() += 1;
    }
    let n = clips.len() as f64;
    clips.iter().map(|c| counts[&c.class] as f64 / n).sum::<f64>() / n
}

/// Canonical captions for every caption class, for nearest-caption lookups.
pub fn all_class_captions() -> Vec<(CaptionClass, Caption)> {
    let mut out = Vec::new();
    for &task in Task::ALL {
        for &color in Color::ALL {
            for style in [RenderStyle::Robot, RenderStyle::Hand] {
                out.push(((task, color, demogen::actor_word(style)), demogen::canonical_caption(task, color, style)));
            }
        }
    }
    out
}

/// Index of the caption most similar to `emb`.
pub fn nearest(emb: &Embedding, candidates: &[Embedding]) -> usize {
    candidates
        .iter()
        .enumerate()
        .max_by(|a, b| similarity(emb, a.1).total_cmp(&similarity(emb, b.1)))
        .map(|(i, _)| i)
        .expect("non-empty candidates")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub retrieval: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: EncoderParams,
    /// Entry 0 is the untrained model (loss of one pass without updates).
    pub curve: Vec<EpochStats>,
    pub best_epoch: usize,
}

fn batch_pixels(clips: &[&TrainingClip]) -> Result<Tensor> {
    pixels_tensor(&clips.iter().map(|c| c.frames.as_slice()).collect::<Vec<_>>())
}

fn batch_loss(
    enc: &mut EncoderParams,
    batch: &[&TrainingClip],
    tau: f32,
    train: bool,
) -> Result<f32> {
    let t = enc.config.kind.frames();
    let px = batch_pixels(batch)?;
    let caps: Vec<Caption> = batch.iter().map(|c| c.caption.clone()).collect();
    let (v, vt) = video_forward(&enc.params, &enc.config, &px, t)?;
    let (x, tt) = text_forward(&enc.params, &enc.config, &caps)?;
    let (loss, dv, dt) = info_nce_loss(&v, &x, tau)?;
    if train {
        video_backward(&mut enc.params, &vt, &dv)?;
        text_backward(&mut enc.params, &tt, &dt)?;
    }
    Ok(loss)
}

/// Minibatch Adam on InfoNCE; keeps the checkpoint with the best held-out retrieval.
pub fn pretrain(dataset: &Dataset, config: &PretrainConfig, encoder: EncoderConfig) -> Result<PretrainOutcome> {
    let train = prepare_clips(encoder.kind, dataset.split(Split::Train))?;
    let held = prepare_clips(encoder.kind, dataset.split(Split::HeldOut))?;
    pretrain_prepared(&train, &held, config, encoder, |_| {})
}

/// [`pretrain`] over already preprocessed clips, reporting each epoch.
pub fn pretrain_prepared(
    train: &[TrainingClip],
    held: &[TrainingClip],
    config: &PretrainConfig,
    encoder: EncoderConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<PretrainOutcome> {
    config.validate()?;
    if train.len() < config.batch_size {
        return Err(Error::InvalidArgument(format!(
            "{} training clips is fewer than one batch of {}",
            train.len(),
            config.batch_size
        )));
    }
    let eval_set = if held.is_empty() { train } else { held };
    let mut enc = init_params(encoder, config.seed)?;
    let mut adam = AdamState::new();
    let adam_cfg = AdamConfig::with_lr(config.lr);
    let mut curve = Vec::with_capacity(config.epochs + 1);
    let mut best = (retrieval_accuracy(&enc, eval_set)?, 0usize, enc.clone());

    let mut indices: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..=config.epochs {
        let mut r = rng::indexed_stream(config.seed, "vlm/shuffle", epoch as u64);
        indices.shuffle(&mut r);
        let mut total = 0.0f64;
        let mut batches = 0usize;
        for (bi, chunk) in indices.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&TrainingClip> = chunk.iter().map(|&i| &train[i]).collect();
            // Epoch 0 only measures the untrained model.
            let loss = batch_loss(&mut enc, &batch, config.temperature, epoch > 0)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("InfoNCE loss at epoch {epoch}, batch {bi}")));
            }
            if epoch > 0 {
                adam_step(&mut enc.params, &mut adam, &adam_cfg)?;
            }
            total += f64::from(loss);
            batches += 1;
        }
        let retrieval = if epoch == 0 { best.0 } else { retrieval_accuracy(&enc, eval_set)? };
        let stats = EpochStats { epoch, train_loss: total / batches.max(1) as f64, retrieval };
        on_epoch(&stats);
        curve.push(stats);
        if retrieval > best.0 {
            best = (retrieval, epoch, enc.clone());
        }
    }
    Ok(PretrainOutcome { params: best.2, curve, best_epoch: best.1 })
}
