//! Sparse video-language similarity rewards for online reinforcement learning.
//!
//! A small 2D manipulation world renders pixel frames while the policy acts
//! on low-dimensional state. A dual video/text encoder, trained
//! contrastively on procedurally generated captioned clips, embeds episode
//! videos and task specifiers (a caption, a demo video, an edited latent, or
//! a blend of demos) into one space; the dot product of the two embeddings is
//! handed to PPO as the only reward, once, at the end of each episode.
//!
//! Modules, bottom up: [`nncore`] (tensors, gradients, Adam), [`simworld`],
//! [`demogen`], [`vlm`], [`reward`], [`ppo`], [`analysis`].

pub mod analysis;
pub mod demogen;
mod error;
pub mod nncore;
pub mod ppo;
pub mod reward;
pub mod rng;
pub mod simworld;
pub mod vlm;

pub use error::{Error, Result};
