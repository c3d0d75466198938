use super::{conv_relu, Conv, Initializer};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::param::ParameterRegistry;

/// Conv layers per VGG16 stage.
pub const VGG16_LAYERS: [usize; 5] = [2, 2, 3, 3, 3];
/// Output channels per VGG16 stage.
pub const VGG16_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];

/// One stage of 3x3 conv + ReLU layers.
#[derive(Clone, Debug)]
pub struct EncoderStage {
    pub index: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub convs: Vec<Conv>,
}

impl EncoderStage {
    pub fn new(
        reg: &mut ParameterRegistry,
        init: &mut Initializer,
        index: usize,
        in_channels: usize,
        out_channels: usize,
        layers: usize,
    ) -> Result<Self> {
        let mut convs = Vec::with_capacity(layers);
        for j in 0..layers {
            let cin = if j == 0 { in_channels } else { out_channels };
            convs.push(Conv::new(reg, init, &format!("enc{index}.conv{j}"), cin, out_channels, 3, 1)?);
        }
        Ok(EncoderStage {
            index,
            in_channels,
            out_channels,
            convs,
        })
    }

    pub fn forward(&self, tape: &mut Tape, reg: &ParameterRegistry, x: &Var) -> Result<Var> {
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv_relu(tape, reg, conv, &h)?;
        }
        Ok(h)
    }
}

/// Five VGG16 stages; feature `F_i` is tapped after stage `i`, before pooling.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub stages: Vec<EncoderStage>,
}

impl Encoder {
    pub fn new(reg: &mut ParameterRegistry, init: &mut Initializer, in_channels: usize, widths: &[usize; 5]) -> Result<Self> {
        let mut stages = Vec::with_capacity(5);
        let mut cin = in_channels;
        for (i, (&layers, &width)) in VGG16_LAYERS.iter().zip(widths).enumerate() {
            stages.push(EncoderStage::new(reg, init, i + 1, cin, width, layers)?);
            cin = width;
        }
        Ok(Encoder { stages })
    }

    /// Returns `[F_1, .., F_5]` with `F_i` at `H / 2^(i-1)`.
    pub fn forward(&self, tape: &mut Tape, reg: &ParameterRegistry, image: &Var) -> Result<Vec<Var>> {
        let d = image.dims();
        if !d.h().is_multiple_of(16) || !d.w().is_multiple_of(16) || d.h() == 0 || d.w() == 0 {
            return Err(Error::Shape(format!("encoder input {d} must have H and W divisible by 16")));
        }
        let mut feats = Vec::with_capacity(self.stages.len());
        let mut x = image.clone();
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                x = tape.maxpool2(&x)?;
            }
            x = stage.forward(tape, reg, &x)?;
            feats.push(x.clone());
        }
        Ok(feats)
    }
}
