use super::{Conv, Initializer};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::param::ParameterRegistry;

/// CBAM-style spatial attention: a 7x7 conv over the channel-wise max and mean
/// maps produces a sigmoid gate shared by all channels. Returns `x * gate`.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub conv: Conv,
}

impl SpatialAttention {
    pub fn new(reg: &mut ParameterRegistry, init: &mut Initializer, prefix: &str) -> Result<Self> {
        Ok(SpatialAttention {
            conv: Conv::new(reg, init, &format!("{prefix}.conv"), 2, 1, 7, 3)?,
        })
    }

    /// The `[N, 1, H, W]` gate.
    pub fn gate(&self, tape: &mut Tape, reg: &ParameterRegistry, x: &Var) -> Result<Var> {
        let mx = tape.channel_max(x);
        let mean = tape.channel_mean(x);
        let stacked = tape.concat_channels(&mx, &mean)?;
        let logits = self.conv.forward(tape, reg, &stacked)?;
        Ok(tape.sigmoid(&logits))
    }

    pub fn forward(&self, tape: &mut Tape, reg: &ParameterRegistry, x: &Var) -> Result<Var> {
        let gate = self.gate(tape, reg, x)?;
        tape.mul(x, &gate)
    }
}
