use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convolution (+ optional batch norm and ReLU) followed by max pooling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Max-pool width (and stride); 1 disables pooling.
    pub pool: usize,
    #[serde(default = "yes")]
    pub batch_norm: bool,
    #[serde(default = "yes")]
    pub relu: bool,
}

fn yes() -> bool {
    true
}

impl ConvBlock {
    pub fn new(out_channels: usize, kernel: usize, stride: usize, pool: usize) -> Self {
        Self { out_channels, kernel, stride, pool, batch_norm: true, relu: true }
    }

    pub(crate) fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub(crate) fn conv_len(&self, len: usize) -> usize {
        (len + 2 * self.pad()).saturating_sub(self.kernel) / self.stride + 1
    }
}

/// Architecture descriptor: conv blocks, then two 1x1 convolutions and a
/// global average over time producing two logits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    pub input_len: usize,
    pub blocks: Vec<ConvBlock>,
    pub head_hidden: usize,
    #[serde(default = "yes")]
    pub head_relu: bool,
}

impl Architecture {
    /// The desk-scale reference network: 8, 16, 16 channels, kernel 5, pool 2.
    pub fn desk(in_channels: usize, input_len: usize) -> Self {
        Self {
            in_channels,
            input_len,
            blocks: vec![ConvBlock::new(8, 5, 1, 2), ConvBlock::new(16, 5, 1, 2), ConvBlock::new(16, 5, 1, 2)],
            head_hidden: 32,
            head_relu: true,
        }
    }

    /// A full-size configuration, roughly 300K parameters for 18 channels of 4 s at 256 Hz.
    pub fn full(in_channels: usize, input_len: usize) -> Self {
        Self {
            in_channels,
            input_len,
            blocks: vec![ConvBlock::new(64, 7, 1, 2), ConvBlock::new(128, 7, 1, 2), ConvBlock::new(128, 7, 1, 2)],
            head_hidden: 1024,
            head_relu: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.input_len == 0 || self.head_hidden == 0 {
            return Err(Error::config("architecture needs input channels, input length, and a head width"));
        }
        let mut len = self.input_len;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.out_channels == 0 || b.kernel == 0 || b.stride == 0 || b.pool == 0 {
                return Err(Error::config(format!("block {i} has a zero-sized dimension")));
            }
            len = b.conv_len(len) / b.pool;
            if len == 0 {
                return Err(Error::config(format!("input of length {} collapses to nothing at block {i}", self.input_len)));
            }
        }
        Ok(())
    }

    /// Sequence lengths (input, after each conv, after each pool).
    pub(crate) fn lengths(&self) -> Vec<(usize, usize, usize)> {
        let mut len = self.input_len;
        self.blocks
            .iter()
            .map(|b| {
                let c = b.conv_len(len);
                let p = c / b.pool;
                let out = (len, c, p);
                len = p;
                out
            })
            .collect()
    }

    pub(crate) fn final_channels(&self) -> usize {
        self.blocks.last().map_or(self.in_channels, |b| b.out_channels)
    }

    pub(crate) fn final_len(&self) -> usize {
        self.lengths().last().map_or(self.input_len, |l| l.2)
    }

    pub fn layout(&self) -> Layout {
        let mut p = 0;
        let mut r = 0;
        fn take(n: usize, cursor: &mut usize) -> Range<usize> {
            let range = *cursor..*cursor + n;
            *cursor += n;
            range
        }
        let mut cin = self.in_channels;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let co = b.out_channels;
            let conv_w = take(co * cin * b.kernel, &mut p);
            let conv_b = take(co, &mut p);
            let (bn_gamma, bn_beta, running_mean, running_var) = if b.batch_norm {
                (Some(take(co, &mut p)), Some(take(co, &mut p)), Some(take(co, &mut r)), Some(take(co, &mut r)))
            } else {
                (None, None, None, None)
            };
            blocks.push(BlockLayout { conv_w, conv_b, bn_gamma, bn_beta, running_mean, running_var });
            cin = co;
        }
        let h = self.head_hidden;
        let head_w1 = take(h * cin, &mut p);
        let head_b1 = take(h, &mut p);
        let head_w2 = take(2 * h, &mut p);
        let head_b2 = take(2, &mut p);
        Layout { blocks, head_w1, head_b1, head_w2, head_b2, n_params: p, n_running: r }
    }

    pub fn param_count(&self) -> usize {
        self.layout().n_params
    }
}

/// Where each tensor lives in the flat parameter and running-statistics vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub conv_w: Range<usize>,
    pub conv_b: Range<usize>,
    pub bn_gamma: Option<Range<usize>>,
    pub bn_beta: Option<Range<usize>>,
    pub running_mean: Option<Range<usize>>,
    pub running_var: Option<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub blocks: Vec<BlockLayout>,
    pub head_w1: Range<usize>,
    pub head_b1: Range<usize>,
    pub head_w2: Range<usize>,
    pub head_b2: Range<usize>,
    pub n_params: usize,
    pub n_running: usize,
}

impl Layout {
    /// Ranges of every bias vector (conv, batch-norm shift, head).
    pub fn bias_ranges(&self) -> Vec<Range<usize>> {
        let mut out: Vec<Range<usize>> = Vec::new();
        for b in &self.blocks {
            out.push(b.conv_b.clone());
            out.extend(b.bn_beta.clone());
        }
        out.push(self.head_b1.clone());
        out.push(self.head_b2.clone());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_network_shapes() {
        let a = Architecture::desk(4, 256);
        a.validate().unwrap();
        assert_eq!(a.lengths(), vec![(256, 256, 128), (128, 128, 64), (64, 64, 32)]);
        // 8*4*5+8 + 16 | 16*8*5+16 + 32 | 16*16*5+16 + 32 | 32*16+32 + 64+2
        assert_eq!(a.param_count(), (168 + 16) + (656 + 32) + (1296 + 32) + (544 + 66));
        assert_eq!(a.layout().n_running, 2 * (8 + 16 + 16));
    }

    #[test]
    fn full_network_is_about_300k() {
        let a = Architecture::full(18, 1024);
        a.validate().unwrap();
        let n = a.param_count();
        assert!((250_000..350_000).contains(&n), "{n}");
    }

    #[test]
    fn collapsing_input_is_rejected() {
        let a = Architecture::desk(1, 4);
        assert!(a.validate().is_err());
    }

    #[test]
    fn strided_lengths() {
        let b = ConvBlock::new(1, 5, 2, 1);
        assert_eq!(b.conv_len(256), 128);
        assert_eq!(ConvBlock::new(1, 4, 1, 1).conv_len(10), 11);
    }
}
