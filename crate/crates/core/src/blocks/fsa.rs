use super::{Initializer, SpatialAttention};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::fourier::{frequency_branch, FilterMode, FreqMaskPair, GlobalFilter};
use crate::param::ParameterRegistry;

/// Frequency-spatial attention at one decoder level, bound to a fixed
/// feature resolution.
///
/// Output = Re(IDFT(M_high * F + N * (M_low * F))) + SA(x), with F = DFT(x).
#[derive(Clone, Debug)]
pub struct FsaBlock {
    pub level: usize,
    pub channels: usize,
    pub masks: FreqMaskPair,
    pub filter: GlobalFilter,
    pub sa: SpatialAttention,
}

impl FsaBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        reg: &mut ParameterRegistry,
        init: &mut Initializer,
        level: usize,
        channels: usize,
        h: usize,
        w: usize,
        rho: f64,
        mode: FilterMode,
    ) -> Result<Self> {
        let p = format!("fsa{level}");
        Ok(FsaBlock {
            level,
            channels,
            masks: FreqMaskPair::build(h, w, rho)?,
            filter: GlobalFilter::register(reg, &format!("{p}.filter"), mode, channels, h, w)?,
            sa: SpatialAttention::new(reg, init, &format!("{p}.sa"))?,
        })
    }

    fn check(&self, x: &Var) -> Result<()> {
        let d = x.dims();
        if d.c() != self.channels || d.h() != self.masks.h() || d.w() != self.masks.w() {
            return Err(Error::Shape(format!(
                "fsa{} was built for {} channels at {}x{}, got {d}",
                self.level,
                self.channels,
                self.masks.h(),
                self.masks.w()
            )));
        }
        Ok(())
    }

    pub fn frequency(&self, tape: &mut Tape, reg: &ParameterRegistry, x: &Var) -> Result<Var> {
        self.check(x)?;
        let filt = tape.param(reg, self.filter.param());
        frequency_branch(tape, x, &self.masks, &filt)
    }

    pub fn forward(&self, tape: &mut Tape, reg: &ParameterRegistry, x: &Var) -> Result<Var> {
        let freq = self.frequency(tape, reg, x)?;
        let spatial = self.sa.forward(tape, reg, x)?;
        tape.add(&freq, &spatial)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::dft2_direct;
    use crate::tensor::RealTensor4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random(dims: [usize; 4], seed: u64) -> RealTensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealTensor4::from_fn(dims, |_| rng.gen_range(-1.0..1.0))
    }

    fn block(reg: &mut ParameterRegistry, c: usize, h: usize, w: usize) -> FsaBlock {
        FsaBlock::new(reg, &mut Initializer::new(4), 1, c, h, w, 0.5, FilterMode::Broadcast).unwrap()
    }

    #[test]
    fn identity_filter_and_zero_sa_give_one_and_a_half() {
        let mut reg = ParameterRegistry::new();
        let b = block(&mut reg, 3, 8, 6);
        reg.get_mut(b.sa.conv.weight).value_mut().fill(0.0);
        let x = random([2, 3, 8, 6], 1);
        let mut tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let y = b.forward(&mut tape, &reg, &xv).unwrap();
        assert!(y.value().max_abs_diff(&x.map(|v| 1.5 * v)) < 1e-10);
        let z = tape.constant(RealTensor4::zeros([1, 3, 8, 6]));
        assert!(b.forward(&mut tape, &reg, &z).unwrap().value().data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn frequency_branch_matches_direct_sums() {
        let mut reg = ParameterRegistry::new();
        let b = block(&mut reg, 1, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let filt: Vec<f64> = (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect();
        reg.get_mut(b.filter.param()).value_mut().data_mut().copy_from_slice(&filt);
        let x = random([1, 1, 4, 4], 2);
        let mut tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let got = b.frequency(&mut tape, &reg, &xv).unwrap();

        let f = dft2_direct(&x);
        let (low, high) = (b.masks.low(), b.masks.high());
        let mut g = vec![crate::tensor::Complex::ZERO; 16];
        for u in 0..4 {
            for v in 0..4 {
                let c = ((u + 2) % 4) * 4 + (v + 2) % 4;
                g[u * 4 + v] = f.at(0, 0, u, v).scale(high[c] + filt[c] * low[c]);
            }
        }
        for r in 0..4 {
            for q in 0..4 {
                let mut acc = 0.0;
                for u in 0..4 {
                    for v in 0..4 {
                        let phase = 2.0 * PI * ((u * r) as f64 / 4.0 + (v * q) as f64 / 4.0);
                        let z = g[u * 4 + v];
                        acc += z.re * phase.cos() - z.im * phase.sin();
                    }
                }
                assert!((got.value().at(0, 0, r, q) - acc / 16.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn other_resolutions_rejected() {
        let mut reg = ParameterRegistry::new();
        let b = block(&mut reg, 2, 8, 8);
        let mut tape = Tape::inference();
        let x = tape.constant(RealTensor4::zeros([1, 2, 16, 16]));
        assert!(b.forward(&mut tape, &reg, &x).is_err());
        let x = tape.constant(RealTensor4::zeros([1, 3, 8, 8]));
        assert!(b.forward(&mut tape, &reg, &x).is_err());
    }
}
