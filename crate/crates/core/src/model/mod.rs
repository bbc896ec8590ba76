//! Two-class 1-D convolutional classifier over windows.
//!
//! Probabilities come from a max-shifted softmax over the two logits, the
//! uncertainty score is the Shannon entropy in nats (so it lies in
//! `[0, ln 2]`), and the predicted label is the argmax with ties going to
//! class 0.

mod arch;
pub mod checkpoint;
mod classifier;
mod layers;

use serde::{Deserialize, Serialize};

pub use arch::{Architecture, BlockLayout, ConvBlock, Layout};
pub use classifier::{BatchStats, Classifier, Gradients, Mode};

/// Inference output for one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logits: [f64; 2],
    pub probs: [f64; 2],
    /// Entropy of `probs` in nats.
    pub entropy: f64,
    pub label: u8,
}

impl Prediction {
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let probs = softmax(logits);
        Self { logits, probs, entropy: entropy(probs), label: predict_label(probs) }
    }
}

/// Numerically stable two-class softmax.
pub fn softmax(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(probs: [f64; 2]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Argmax; an exact tie goes to class 0.
pub fn predict_label(probs: [f64; 2]) -> u8 {
    u8::from(probs[1] > probs[0])
}
