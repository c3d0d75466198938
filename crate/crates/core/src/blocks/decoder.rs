use super::{conv_relu, Conv, Initializer};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::param::ParameterRegistry;

/// `relu(conv(relu(conv(concat(skip, up2(below))))))`
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub level: usize,
    pub skip_channels: usize,
    pub below_channels: usize,
    pub convs: [Conv; 2],
}

impl DecoderBlock {
    pub fn new(
        reg: &mut ParameterRegistry,
        init: &mut Initializer,
        level: usize,
        skip_channels: usize,
        below_channels: usize,
    ) -> Result<Self> {
        let p = format!("dec{level}");
        let c0 = Conv::new(reg, init, &format!("{p}.conv0"), skip_channels + below_channels, skip_channels, 3, 1)?;
        let c1 = Conv::new(reg, init, &format!("{p}.conv1"), skip_channels, skip_channels, 3, 1)?;
        Ok(DecoderBlock {
            level,
            skip_channels,
            below_channels,
            convs: [c0, c1],
        })
    }

    pub fn forward(&self, tape: &mut Tape, reg: &ParameterRegistry, skip: &Var, below: &Var) -> Result<Var> {
        let (s, b) = (skip.dims(), below.dims());
        if s.c() != self.skip_channels || b.c() != self.below_channels || s.n() != b.n() || s.h() != 2 * b.h() || s.w() != 2 * b.w() {
            return Err(Error::Shape(format!(
                "dec{}: skip {s} and below {b} do not match ({} + {} channels, below at half resolution)",
                self.level, self.skip_channels, self.below_channels
            )));
        }
        let up = tape.interpolate2x(below);
        let x = tape.concat_channels(skip, &up)?;
        let x = conv_relu(tape, reg, &self.convs[0], &x)?;
        conv_relu(tape, reg, &self.convs[1], &x)
    }
}

/// `conv(relu(conv(x)))` producing per-class logits.
#[derive(Clone, Debug)]
pub struct PredictionHead {
    pub n_classes: usize,
    pub convs: [Conv; 2],
}

impl PredictionHead {
    pub fn new(reg: &mut ParameterRegistry, init: &mut Initializer, channels: usize, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Config(format!("n_classes must be at least 2, got {n_classes}")));
        }
        let c0 = Conv::new(reg, init, "head.conv0", channels, channels, 3, 1)?;
        let c1 = Conv::new(reg, init, "head.conv1", channels, n_classes, 3, 1)?;
        Ok(PredictionHead { n_classes, convs: [c0, c1] })
    }

    pub fn forward(&self, tape: &mut Tape, reg: &ParameterRegistry, x: &Var) -> Result<Var> {
        let h = conv_relu(tape, reg, &self.convs[0], x)?;
        self.convs[1].forward(tape, reg, &h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RealTensor4;

    fn conv3x3(x: &[Vec<f64>], w: &RealTensor4, bias: f64, o: usize) -> Vec<f64> {
        let mut out = vec![bias; 4];
        for (ci, plane) in x.iter().enumerate() {
            for r in 0..2 {
                for q in 0..2 {
                    for ki in 0..3 {
                        for kj in 0..3 {
                            let (rr, qq) = (r as isize + ki as isize - 1, q as isize + kj as isize - 1);
                            if (0..2).contains(&rr) && (0..2).contains(&qq) {
                                out[r * 2 + q] += w.at(o, ci, ki, kj) * plane[rr as usize * 2 + qq as usize];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn scalar_channel_hand_evaluation() {
        let mut reg = ParameterRegistry::new();
        let dec = DecoderBlock::new(&mut reg, &mut Initializer::new(6), 1, 1, 1).unwrap();
        reg.get_mut(dec.convs[0].bias).value_mut().data_mut()[0] = 0.1;
        reg.get_mut(dec.convs[1].bias).value_mut().data_mut()[0] = -0.05;
        let skip = vec![0.3, -0.7, 1.2, 0.4];
        let below = 0.9;
        let mut tape = Tape::inference();
        let sv = tape.constant(RealTensor4::from_vec([1, 1, 2, 2], skip.clone()).unwrap());
        let bv = tape.constant(RealTensor4::full([1, 1, 1, 1], below));
        let out = dec.forward(&mut tape, &reg, &sv, &bv).unwrap();

        let w0 = reg.get(dec.convs[0].weight).value();
        let w1 = reg.get(dec.convs[1].weight).value();
        let relu = |v: Vec<f64>| v.into_iter().map(|a: f64| a.max(0.0)).collect::<Vec<_>>();
        let h = relu(conv3x3(&[skip, vec![below; 4]], w0, 0.1, 0));
        let want = relu(conv3x3(&[h], w1, -0.05, 0));
        for k in 0..4 {
            assert!((out.value().data()[k] - want[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_weights_zero_output_and_shapes() {
        let mut reg = ParameterRegistry::new();
        let mut init = Initializer::new(1);
        let dec = DecoderBlock::new(&mut reg, &mut init, 2, 4, 6).unwrap();
        let head = PredictionHead::new(&mut reg, &mut init, 4, 3).unwrap();
        let mut tape = Tape::inference();
        let s = tape.constant(RealTensor4::full([2, 4, 8, 8], 1.0));
        let b = tape.constant(RealTensor4::full([2, 6, 4, 4], 1.0));
        let d = dec.forward(&mut tape, &reg, &s, &b).unwrap();
        assert_eq!(d.dims().0, [2, 4, 8, 8]);
        assert_eq!(head.forward(&mut tape, &reg, &d).unwrap().dims().0, [2, 3, 8, 8]);
        for p in reg.iter_mut() {
            p.value_mut().fill(0.0);
        }
        let d = dec.forward(&mut tape, &reg, &s, &b).unwrap();
        assert!(d.value().data().iter().all(|&v| v == 0.0));
        assert!(head.forward(&mut tape, &reg, &d).unwrap().value().data().iter().all(|&v| v == 0.0));
        assert!(dec.forward(&mut tape, &reg, &s, &s).is_err());
        assert!(PredictionHead::new(&mut reg, &mut init, 4, 1).is_err());
    }
}
