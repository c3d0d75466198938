//! Composite building blocks: VGG16-style encoder, multi-scale progressive
//! channel attention (MPCA), spatial attention, frequency-spatial attention
//! (FSA), decoder blocks and the prediction head.

mod attention;
mod decoder;
mod encoder;
mod fsa;
mod mpca;

pub use attention::SpatialAttention;
pub use decoder::{DecoderBlock, PredictionHead};
pub use encoder::{Encoder, EncoderStage, VGG16_LAYERS, VGG16_WIDTHS};
pub use fsa::FsaBlock;
pub use mpca::{MpcaBlock, MpcaOutput};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::param::{ParamId, ParameterRegistry};
use crate::tensor::RealTensor4;

/// Seeded weight initializer: Kaiming-uniform on fan-in for weights, zeros
/// for biases. Parameters draw from one stream in registration order.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn kaiming_uniform(&mut self, dims: [usize; 4], fan_in: usize) -> RealTensor4 {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        RealTensor4::from_fn(dims, |_| self.rng.gen_range(-bound..bound))
    }
}

/// A 2D convolution layer with its own weight and bias parameters.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new(
        reg: &mut ParameterRegistry,
        init: &mut Initializer,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        pad: usize,
    ) -> Result<Self> {
        let w = init.kaiming_uniform([cout, cin, kernel, kernel], cin * kernel * kernel);
        let weight = reg.register(format!("{name}.weight"), w)?;
        let bias = reg.register(format!("{name}.bias"), RealTensor4::zeros([1, cout, 1, 1]))?;
        Ok(Conv { weight, bias, stride: 1, pad })
    }

    pub fn forward(&self, tape: &mut Tape, reg: &ParameterRegistry, x: &Var) -> Result<Var> {
        let w = tape.param(reg, self.weight);
        let b = tape.param(reg, self.bias);
        tape.conv2d(x, &w, &b, self.stride, self.pad)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Transposed convolution, kernel 2x2, stride 2.
#[derive(Clone, Debug)]
pub struct ConvTranspose {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvTranspose {
    pub fn new(reg: &mut ParameterRegistry, init: &mut Initializer, name: &str, cin: usize, cout: usize) -> Result<Self> {
        // each output pixel receives exactly one tap per input channel
        let w = init.kaiming_uniform([cin, cout, 2, 2], cin);
        let weight = reg.register(format!("{name}.weight"), w)?;
        let bias = reg.register(format!("{name}.bias"), RealTensor4::zeros([1, cout, 1, 1]))?;
        Ok(ConvTranspose { weight, bias })
    }

    pub fn forward(&self, tape: &mut Tape, reg: &ParameterRegistry, x: &Var) -> Result<Var> {
        let w = tape.param(reg, self.weight);
        let b = tape.param(reg, self.bias);
        tape.conv_transpose2x2(x, &w, &b)
    }
}

/// `relu(conv3x3(x))`
pub(crate) fn conv_relu(tape: &mut Tape, reg: &ParameterRegistry, conv: &Conv, x: &Var) -> Result<Var> {
    let y = conv.forward(tape, reg, x)?;
    Ok(tape.relu(&y))
}
