//! Meme generation from a single sentence: an emotion classifier picks a
//! template, an attention encoder–decoder rewrites the sentence into a
//! caption, and the caption is drawn onto the template image.
//!
//! Every trainable component runs on the small reverse-mode autodiff engine
//! in [`tensor`].

pub mod assets;
pub mod caption;
pub mod compose;
pub mod emotion;
pub mod error;
pub mod neural;
pub mod par;
pub mod tensor;
pub mod textproc;

pub use error::{Error, Result};
