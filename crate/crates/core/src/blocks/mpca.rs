use super::{Conv, ConvTranspose, Initializer};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::param::ParameterRegistry;

/// Cross-scale channel attention between adjacent encoder levels.
///
/// Both levels are pooled to channel descriptors and passed through their own
/// 1x1 conv; the concatenation is fused by another 1x1 conv into a sigmoid map
/// `A` with `C_i + C_next` channels. `A` is split back per level and reweights
/// each feature; the reweighted deeper feature is upsampled by a 2x2/stride-2
/// transposed conv and added to the shallower one.
#[derive(Clone, Debug)]
pub struct MpcaBlock {
    pub level: usize,
    pub channels: usize,
    pub next_channels: usize,
    pub gap_cur: Conv,
    pub gap_next: Conv,
    pub fuse: Conv,
    pub up: ConvTranspose,
}

/// Block output plus the attention map it applied.
pub struct MpcaOutput {
    pub output: Var,
    pub attention: Var,
}

impl MpcaBlock {
    pub fn new(
        reg: &mut ParameterRegistry,
        init: &mut Initializer,
        level: usize,
        channels: usize,
        next_channels: usize,
    ) -> Result<Self> {
        let p = format!("mpca{level}");
        let both = channels + next_channels;
        Ok(MpcaBlock {
            level,
            channels,
            next_channels,
            gap_cur: Conv::new(reg, init, &format!("{p}.gap_cur"), channels, channels, 1, 0)?,
            gap_next: Conv::new(reg, init, &format!("{p}.gap_next"), next_channels, next_channels, 1, 0)?,
            fuse: Conv::new(reg, init, &format!("{p}.fuse"), both, both, 1, 0)?,
            up: ConvTranspose::new(reg, init, &format!("{p}.up"), next_channels, channels)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, reg: &ParameterRegistry, cur: &Var, next: &Var) -> Result<Var> {
        Ok(self.forward_with_attention(tape, reg, cur, next)?.output)
    }

    pub fn forward_with_attention(
        &self,
        tape: &mut Tape,
        reg: &ParameterRegistry,
        cur: &Var,
        next: &Var,
    ) -> Result<MpcaOutput> {
        let (cd, nd) = (cur.dims(), next.dims());
        if cd.c() != self.channels || nd.c() != self.next_channels {
            return Err(Error::Shape(format!(
                "mpca{}: expected {} and {} channels, got {cd} and {nd}",
                self.level, self.channels, self.next_channels
            )));
        }
        if nd.n() != cd.n() || 2 * nd.h() != cd.h() || 2 * nd.w() != cd.w() {
            return Err(Error::Shape(format!(
                "mpca{}: deeper feature {nd} must be exactly half the resolution of {cd}",
                self.level
            )));
        }
        let pooled_cur = tape.global_avg_pool(cur);
        let pooled_cur = self.gap_cur.forward(tape, reg, &pooled_cur)?;
        let pooled_next = tape.global_avg_pool(next);
        let pooled_next = self.gap_next.forward(tape, reg, &pooled_next)?;
        let joined = tape.concat_channels(&pooled_cur, &pooled_next)?;
        let fused = self.fuse.forward(tape, reg, &joined)?;
        let attention = tape.sigmoid(&fused);
        let (a_cur, a_next) = tape.split_channels(&attention, self.channels)?;
        let weighted_cur = tape.mul(cur, &a_cur)?;
        let weighted_next = tape.mul(next, &a_next)?;
        let upsampled = self.up.forward(tape, reg, &weighted_next)?;
        let output = tape.add(&weighted_cur, &upsampled)?;
        Ok(MpcaOutput { output, attention })
    }
}
