//! Sparse end-of-episode reward from embedding similarity.
//!
//! Frames are buffered for the whole episode; at the final step the buffer
//! is downsampled by uniform stride, center-cropped and encoded, and the
//! cosine against the task specifier's embedding is the only nonzero reward.

use std::path::{Path, PathBuf};

use crate::demogen::{self, Caption, DemoClip};
use crate::error::{Error, Result};
use crate::simworld::Frame;
use crate::vlm::{self, EncoderKind, EncoderParams, Embedding, CLIP_LEN, FRAME_SIZE};

pub const BUFFER_CAPACITY: usize = 128;
/// Pre-normalization norm below which a blend or edit is rejected.
pub const DEGENERATE_NORM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub capacity: usize,
    pub clip_len: usize,
    pub crop: usize,
    pub scale: f32,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { capacity: BUFFER_CAPACITY, clip_len: CLIP_LEN, crop: FRAME_SIZE, scale: 1.0 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_len == 0 || self.capacity % self.clip_len != 0 {
            return Err(Error::InvalidArgument(format!(
                "clip length {} must divide buffer capacity {}",
                self.clip_len, self.capacity
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.capacity / self.clip_len
    }
}

/// Frames of one episode, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBuffer {
    frames: Vec<Frame>,
    capacity: usize,
    padded: usize,
}

impl Default for EpisodeBuffer {
    fn default() -> Self {
        Self::new()
    }
}

impl EpisodeBuffer {
    pub fn new() -> Self {
        Self::with_capacity(BUFFER_CAPACITY)
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self { frames: Vec::with_capacity(capacity), capacity, padded: 0 }
    }

    pub fn from_frames(frames: Vec<Frame>) -> Result<Self> {
        let mut b = Self::new();
        for f in frames {
            b.push(f)?;
        }
        Ok(b)
    }

    pub fn push(&mut self, frame: Frame) -> Result<()> {
        if self.is_full() {
            return Err(Error::Contract(format!("episode buffer already holds {} frames", self.capacity)));
        }
        self.frames.push(frame);
        Ok(())
    }

    /// Fill the remaining slots with copies of the last frame.
    pub fn pad_with_last(&mut self) -> Result<()> {
        let last = self.frames.last().cloned().ok_or_else(|| Error::Contract("cannot pad an empty buffer".into()))?;
        while !self.is_full() {
            self.frames.push(last.clone());
            self.padded += 1;
        }
        Ok(())
    }

    /// Number of frames added by [`pad_with_last`](Self::pad_with_last).
    pub fn padded_frames(&self) -> usize {
        self.padded
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.frames.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn clear(&mut self) {
        self.frames.clear();
        self.padded = 0;
    }
}

/// Indices `0, s, 2s, …` of a full buffer, each center-cropped.
pub fn preprocess(buffer: &EpisodeBuffer, config: &RewardConfig) -> Result<Vec<Frame>> {
    config.validate()?;
    if buffer.capacity != config.capacity || !buffer.is_full() {
        return Err(Error::Contract(format!(
            "buffer holds {} of {} frames; pad it or wait for the episode to end",
            buffer.len(),
            config.capacity
        )));
    }
    select_and_crop(&buffer.frames, config)
}

fn select_and_crop(frames: &[Frame], config: &RewardConfig) -> Result<Vec<Frame>> {
    frames.iter().step_by(config.stride()).map(|f| f.center_crop(config.crop)).collect()
}

/// [`preprocess`] on a raw 128-frame sequence with the default config.
pub fn downsample_and_crop(frames: &[Frame]) -> Result<Vec<Frame>> {
    let cfg = RewardConfig::default();
    if frames.len() != cfg.capacity {
        return Err(Error::Contract(format!("clip has {} frames, expected {}", frames.len(), cfg.capacity)));
    }
    select_and_crop(frames, &cfg)
}

/// Encoder input for a full buffer: the 32-frame clip, or the last frame
/// for the final-frame encoder.
pub fn encoder_input(buffer: &EpisodeBuffer, kind: EncoderKind, config: &RewardConfig) -> Result<Vec<Frame>> {
    let clip = preprocess(buffer, config)?;
    Ok(match kind {
        EncoderKind::Video => clip,
        EncoderKind::FinalFrame => vec![buffer.frames.last().expect("full buffer").center_crop(config.crop)?],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskSpecifier {
    Text(Caption),
    Video(DemoClip),
    /// `z(base) − z(minus) + z(plus)`.
    Edited { base: DemoClip, minus: Caption, plus: Caption },
    Blend(Vec<DemoClip>),
}

impl TaskSpecifier {
    pub fn kind_name(&self) -> &'static str {
        match self {
            TaskSpecifier::Text(_) => "text",
            TaskSpecifier::Video(_) => "video",
            TaskSpecifier::Edited { .. } => "edited",
            TaskSpecifier::Blend(_) => "blend",
        }
    }
}

fn encode_clip(clip: &DemoClip, params: &EncoderParams) -> Result<Embedding> {
    vlm::encode_video(params, &vlm::clip_input(params.config.kind, &clip.frames)?)
}

pub fn encode_specifier(spec: &TaskSpecifier, params: &EncoderParams) -> Result<Embedding> {
    match spec {
        TaskSpecifier::Text(c) => vlm::encode_text(params, c),
        TaskSpecifier::Video(clip) => encode_clip(clip, params),
        TaskSpecifier::Edited { base, minus, plus } => edit_latent(
            &encode_clip(base, params)?,
            &vlm::encode_text(params, minus)?,
            &vlm::encode_text(params, plus)?,
        ),
        TaskSpecifier::Blend(clips) => {
            if clips.is_empty() {
                return Err(Error::InvalidArgument("blend needs at least one clip".into()));
            }
            let embs = clips.iter().map(|c| encode_clip(c, params)).collect::<Result<Vec<_>>>()?;
            blend(&embs)
        }
    }
}

/// Mean of unit embeddings, renormalized.
pub fn blend(embs: &[Embedding]) -> Result<Embedding> {
    let d = embs.first().ok_or_else(|| Error::InvalidArgument("empty blend".into()))?.dim();
    let mut acc = vec![0f64; d];
    for e in embs {
        for (a, &v) in acc.iter_mut().zip(e.as_slice()) {
            *a += f64::from(v);
        }
    }
    renormalize(acc.into_iter().map(|a| a / embs.len() as f64).collect(), "blend")
}

pub fn edit_latent(base: &Embedding, minus: &Embedding, plus: &Embedding) -> Result<Embedding> {
    let raw = base
        .as_slice()
        .iter()
        .zip(minus.as_slice())
        .zip(plus.as_slice())
        .map(|((&b, &m), &p)| f64::from(b) - f64::from(m) + f64::from(p))
        .collect();
    renormalize(raw, "edited latent")
}

fn renormalize(v: Vec<f64>, what: &str) -> Result<Embedding> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !n.is_finite() || n < DEGENERATE_NORM {
        return Err(Error::DegenerateSpecifier(format!("{what} has norm {n:.3e} before renormalization")));
    }
    Embedding::from_unit(v.into_iter().map(|x| (x / n) as f32).collect())
}

/// Frozen encoder plus the cached specifier embedding for a run.
#[derive(Debug, Clone)]
pub struct RoboclipReward {
    pub params: EncoderParams,
    pub target: Embedding,
    pub config: RewardConfig,
}

impl RoboclipReward {
    pub fn new(params: EncoderParams, spec: &TaskSpecifier) -> Result<Self> {
        let target = encode_specifier(spec, &params)?;
        Ok(Self { params, target, config: RewardConfig::default() })
    }

    pub fn with_target(params: EncoderParams, target: Embedding) -> Self {
        Self { params, target, config: RewardConfig::default() }
    }

    /// Similarity of a finished episode to the specifier.
    pub fn score(&self, buffer: &EpisodeBuffer) -> Result<f32> {
        let input = encoder_input(buffer, self.params.config.kind, &self.config)?;
        let z = vlm::encode_video(&self.params, &input)?;
        Ok(self.config.scale * vlm::similarity(&self.target, &z))
    }

    /// Batched [`score`](Self::score).
    pub fn score_many(&self, buffers: &[EpisodeBuffer]) -> Result<Vec<f32>> {
        let inputs =
            buffers.iter().map(|b| encoder_input(b, self.params.config.kind, &self.config)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[Frame]> = inputs.iter().map(|v| v.as_slice()).collect();
        let zs = vlm::encode_videos(&self.params, &refs)?;
        Ok(zs.iter().map(|z| self.config.scale * vlm::similarity(&self.target, z)).collect())
    }
}

/// Zero before the final step; the similarity at step `horizon`.
pub fn episode_reward(buffer: &EpisodeBuffer, reward: &RoboclipReward, t: usize, horizon: usize) -> Result<f32> {
    if t > horizon {
        return Err(Error::Contract(format!("step {t} is past horizon {horizon}")));
    }
    if t < horizon {
        return Ok(0.0);
    }
    reward.score(buffer)
}

/// Specifier as written in a run config (`spec.*` keys).
#[derive(Debug, Clone, PartialEq)]
pub enum SpecifierDesc {
    Text(String),
    Video(PathBuf),
    Edited { video: PathBuf, minus: String, plus: String },
    Blend(Vec<PathBuf>),
}

impl SpecifierDesc {
    /// Build from a `spec.<key>` lookup.
    pub fn from_lookup<'a>(get: impl Fn(&str) -> Option<&'a str>) -> Result<Self> {
        let need = |k: &str| get(k).ok_or_else(|| Error::InvalidArgument(format!("spec.{k} is required")));
        let kind = need("kind")?;
        Ok(match kind {
            "text" => SpecifierDesc::Text(need("text")?.to_string()),
            "video" => SpecifierDesc::Video(need("video")?.into()),
            "edited" => SpecifierDesc::Edited {
                video: need("video")?.into(),
                minus: need("minus")?.to_string(),
                plus: need("plus")?.to_string(),
            },
            "blend" => {
                let dirs: Vec<PathBuf> =
                    need("blend")?.split([',', ' ']).filter(|s| !s.is_empty()).map(PathBuf::from).collect();
                if dirs.is_empty() {
                    return Err(Error::InvalidArgument("spec.blend lists no clips".into()));
                }
                SpecifierDesc::Blend(dirs)
            }
            other => return Err(Error::InvalidArgument(format!("unknown spec.kind {other:?}"))),
        })
    }

    /// Load referenced clips; relative paths resolve against `base`.
    pub fn resolve(&self, base: &Path) -> Result<TaskSpecifier> {
        let clip = |p: &Path| demogen::read_clip(&base.join(p));
        Ok(match self {
            SpecifierDesc::Text(t) => TaskSpecifier::Text(Caption::parse(t)?),
            SpecifierDesc::Video(p) => TaskSpecifier::Video(clip(p)?),
            SpecifierDesc::Edited { video, minus, plus } => TaskSpecifier::Edited {
                base: clip(video)?,
                minus: Caption::parse(minus)?,
                plus: Caption::parse(plus)?,
            },
            SpecifierDesc::Blend(ps) => TaskSpecifier::Blend(ps.iter().map(|p| clip(p)).collect::<Result<_>>()?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::{Color, RenderStyle, Task};
    use proptest::prelude::*;

    fn numbered_frames(n: usize) -> Vec<Frame> {
        (0..n).map(|i| Frame::filled(72, 72, [i as u8, 0, 0])).collect()
    }

    fn unit(v: &[f32]) -> Embedding {
        Embedding::normalized(v.to_vec()).unwrap()
    }

    #[test]
    fn preprocess_picks_every_fourth_frame() {
        let buf = EpisodeBuffer::from_frames(numbered_frames(128)).unwrap();
        let out = preprocess(&buf, &RewardConfig::default()).unwrap();
        assert_eq!(out.len(), 32);
        for (k, f) in out.iter().enumerate() {
            assert_eq!((f.width, f.height), (64, 64));
            assert_eq!(f.pixel(0, 0)[0] as usize, 4 * k);
        }
        assert_eq!(out, preprocess(&buf, &RewardConfig::default()).unwrap());
    }

    #[test]
    fn crop_keeps_center_pixel() {
        let mut f = Frame::filled(72, 72, [0, 0, 0]);
        f.set(36, 36, [9, 8, 7]);
        let c = f.center_crop(64).unwrap();
        assert_eq!(c.pixel(32, 32), [9, 8, 7]);
    }

    #[test]
    fn partial_buffer_is_rejected_until_padded() {
        let mut buf = EpisodeBuffer::from_frames(numbered_frames(100)).unwrap();
        let err = preprocess(&buf, &RewardConfig::default()).unwrap_err();
        assert!(err.to_string().contains("pad"));
        buf.pad_with_last().unwrap();
        assert_eq!(buf.padded_frames(), 28);
        let out = preprocess(&buf, &RewardConfig::default()).unwrap();
        assert_eq!(out[31].pixel(0, 0)[0], 99);
        assert!(buf.push(Frame::filled(72, 72, [0; 3])).is_err());
    }

    #[test]
    fn edit_cancellation_and_arithmetic() {
        let e1 = unit(&[1.0, 0.0, 0.0, 0.0]);
        let e2 = unit(&[0.0, 1.0, 0.0, 0.0]);
        let e3 = unit(&[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(edit_latent(&e1, &e2, &e2).unwrap(), e1);
        let r = 1.0 / 3f32.sqrt();
        let got = edit_latent(&e1, &e2, &e3).unwrap();
        for (g, w) in got.as_slice().iter().zip([r, -r, r, 0.0]) {
            assert!((g - w).abs() < 1e-6);
        }
        let h = 3f32.sqrt() / 2.0;
        let base = unit(&[0.5, h]);
        let err = edit_latent(&base, &unit(&[1.0, 0.0]), &unit(&[0.5, -h])).unwrap_err();
        assert!(matches!(err, Error::DegenerateSpecifier(_)));
    }

    #[test]
    fn degenerate_blend_is_rejected() {
        let a = unit(&[1.0, 0.0]);
        let b = unit(&[-1.0, 0.0]);
        assert!(matches!(blend(&[a.clone(), b]), Err(Error::DegenerateSpecifier(_))));
        assert_eq!(blend(&[a.clone(), a.clone(), a.clone()]).unwrap(), a);
    }

    proptest! {
        #[test]
        fn edit_with_equal_terms_is_identity(
            z in prop::collection::vec(-1.0f32..1.0, 8),
            t in prop::collection::vec(-1.0f32..1.0, 8),
        ) {
            prop_assume!(z.iter().map(|v| v * v).sum::<f32>() > 1e-3);
            prop_assume!(t.iter().map(|v| v * v).sum::<f32>() > 1e-3);
            let (z, t) = (unit(&z), unit(&t));
            let got = edit_latent(&z, &t, &t).unwrap();
            for (a, b) in got.as_slice().iter().zip(z.as_slice()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn reward_is_sparse_and_self_similar() {
        let params = vlm::random_params(1).unwrap();
        let clip = demogen::generate_clip(Task::CloseDrawer, Color::Green, RenderStyle::Robot, 3).unwrap();
        let spec = TaskSpecifier::Video(clip.clone());
        let r = RoboclipReward::new(params.clone(), &spec).unwrap();
        let buf = EpisodeBuffer::from_frames(clip.frames.clone()).unwrap();
        for t in [0, 1, 64, 127] {
            assert_eq!(episode_reward(&buf, &r, t, 128).unwrap(), 0.0);
        }
        let full = episode_reward(&buf, &r, 128, 128).unwrap();
        assert!((full - 1.0).abs() < 1e-5, "{full}");
        assert!(episode_reward(&buf, &r, 129, 128).is_err());
        let short = EpisodeBuffer::from_frames(clip.frames[..50].to_vec()).unwrap();
        assert!(episode_reward(&short, &r, 128, 128).is_err());

        let one = encode_specifier(&TaskSpecifier::Blend(vec![clip.clone()]), &params).unwrap();
        assert_eq!(one, r.target);
        let text = Caption::parse("robot pushing red button").unwrap();
        assert_eq!(
            encode_specifier(&TaskSpecifier::Text(text.clone()), &params).unwrap(),
            vlm::encode_text(&params, &text).unwrap()
        );
    }

    #[test]
    fn specifier_desc_parsing() {
        let kv = [("kind", "edited"), ("video", "clip_00001"), ("minus", "button"), ("plus", "drawer")];
        let get = |k: &str| kv.iter().find(|(a, _)| *a == k).map(|(_, v)| *v);
        let d = SpecifierDesc::from_lookup(get).unwrap();
        assert_eq!(
            d,
            SpecifierDesc::Edited { video: "clip_00001".into(), minus: "button".into(), plus: "drawer".into() }
        );
        let blend = [("kind", "blend"), ("blend", "a, b c")];
        let get = |k: &str| blend.iter().find(|(a, _)| *a == k).map(|(_, v)| *v);
        assert_eq!(SpecifierDesc::from_lookup(get).unwrap(), SpecifierDesc::Blend(vec!["a".into(), "b".into(), "c".into()]));
        assert!(SpecifierDesc::from_lookup(|k| (k == "kind").then_some("text")).is_err());
        assert!(SpecifierDesc::from_lookup(|k| (k == "kind").then_some("smell")).is_err());
    }
}
