//! Critique-guided refinement of latent diffusion samples.

pub mod agents;
pub mod cadr;
pub mod cli;
pub mod criticore;
pub mod diffusion;
pub mod latents;
pub mod lexicon;
pub mod pipeline;
pub mod rng;
pub mod spectral;
