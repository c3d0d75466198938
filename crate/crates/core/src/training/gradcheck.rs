//! Central finite-difference checks of tape gradients.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::blocks::{DecoderBlock, FsaBlock, Initializer, MpcaBlock, PredictionHead, SpatialAttention};
use crate::error::{Error, Result};
use crate::fourier::FilterMode;
use crate::param::{ParamId, ParameterRegistry};
use crate::tensor::{LabelMap, RealTensor4};

use super::loss::{dice, softmax_ce, DICE_EPSILON};

pub const FD_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Gradient magnitudes below this are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

pub const BLOCKS: [&str; 8] = ["mpca", "fsa", "fsa-per-channel", "sa", "decoder", "head", "ce", "dice"];

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub block: String,
    pub tolerance: f64,
    pub checks: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{}\t{}\t{:.3e}\t{}",
                self.block,
                c.name,
                c.max_rel_error,
                if c.passed { "pass" } else { "FAIL" }
            )?;
        }
        write!(f, "{}\t{}", self.block, if self.passed() { "pass" } else { "FAIL" })
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn scalar(tape_fn: &mut impl FnMut(&mut Tape, &ParameterRegistry) -> Result<Var>, reg: &ParameterRegistry) -> Result<f64> {
    let mut tape = Tape::inference();
    tape_fn(&mut tape, reg)?.value().item()
}

/// Compare tape gradients of the scalar built by `f` against central
/// differences for every element of the listed parameters.
pub fn check_parameters(
    block: &str,
    reg: &mut ParameterRegistry,
    ids: &[ParamId],
    tolerance: f64,
    mut f: impl FnMut(&mut Tape, &ParameterRegistry) -> Result<Var>,
) -> Result<GradcheckReport> {
    reg.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, reg)?;
    if !ids.is_empty() {
        tape.backward(&out, reg)?;
    }
    drop(tape);
    let mut checks = Vec::with_capacity(ids.len());
    for &id in ids {
        let analytic = reg.get(id).grad().clone();
        let mut worst: f64 = 0.0;
        for i in 0..analytic.len() {
            let orig = reg.get(id).value().data()[i];
            reg.get_mut(id).value_mut().data_mut()[i] = orig + FD_STEP;
            let up = scalar(&mut f, reg)?;
            reg.get_mut(id).value_mut().data_mut()[i] = orig - FD_STEP;
            let down = scalar(&mut f, reg)?;
            reg.get_mut(id).value_mut().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
        let p = reg.get(id);
        checks.push(ParamCheck {
            name: p.name().to_string(),
            numel: p.numel(),
            max_rel_error: worst,
            passed: worst < tolerance,
        });
    }
    Ok(GradcheckReport {
        block: block.to_string(),
        tolerance,
        checks,
    })
}

fn random(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> RealTensor4 {
    RealTensor4::from_fn(dims, |_| rng.gen_range(-1.0..1.0))
}

/// Randomize every parameter so biases and filters are not at special values.
fn perturb_all(reg: &mut ParameterRegistry, rng: &mut ChaCha8Rng) {
    for p in reg.iter_mut() {
        p.value_mut().data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
    }
}

/// `sum(r * out)` with a fixed random `r`, making every output element matter.
fn project(tape: &mut Tape, out: &Var, r: &RealTensor4) -> Result<Var> {
    let rv = tape.constant(r.clone());
    let prod = tape.mul(out, &rv)?;
    Ok(tape.sum(&prod))
}

fn check_loss(
    name: &str,
    n_classes: usize,
    hw: (usize, usize),
    tolerance: f64,
    rng: &mut ChaCha8Rng,
    loss: impl Fn(&mut Tape, &Var, &LabelMap) -> Result<Var>,
) -> Result<GradcheckReport> {
    let (h, w) = hw;
    let mut reg = ParameterRegistry::new();
    let id = reg.register("logits", random(rng, [2, n_classes, h, w]).map(|v| 2.0 * v))?;
    let target = LabelMap::from_vec(2, h, w, (0..2 * h * w).map(|_| rng.gen_range(0..n_classes as u8)).collect())?;
    check_parameters(name, &mut reg, &[id], tolerance, |tape, reg| {
        let x = tape.param(reg, id);
        loss(tape, &x, &target)
    })
}

/// Run the finite-difference check for one named block on `hw`-sized inputs.
pub fn gradcheck(block: &str, hw: (usize, usize), tolerance: f64, seed: u64) -> Result<GradcheckReport> {
    let (h, w) = hw;
    if h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidArgument(format!("gradcheck dims must be even and at least 2, got {h}x{w}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reg = ParameterRegistry::new();
    let mut init = Initializer::new(seed);
    let n = 2;
    match block {
        "mpca" => {
            let b = MpcaBlock::new(&mut reg, &mut init, 1, 3, 4)?;
            perturb_all(&mut reg, &mut rng);
            let cur = random(&mut rng, [n, 3, h, w]);
            let next = random(&mut rng, [n, 4, h / 2, w / 2]);
            let r = random(&mut rng, [n, 3, h, w]);
            let ids: Vec<ParamId> = reg.ids().collect();
            check_parameters(block, &mut reg, &ids, tolerance, |tape, reg| {
                let (a, c) = (tape.constant(cur.clone()), tape.constant(next.clone()));
                let out = b.forward(tape, reg, &a, &c)?;
                project(tape, &out, &r)
            })
        }
        "fsa" | "fsa-per-channel" => {
            let mode = if block == "fsa" { FilterMode::Broadcast } else { FilterMode::PerChannel };
            let b = FsaBlock::new(&mut reg, &mut init, 1, 3, h, w, 0.5, mode)?;
            perturb_all(&mut reg, &mut rng);
            let x = random(&mut rng, [n, 3, h, w]);
            let r = random(&mut rng, [n, 3, h, w]);
            let ids: Vec<ParamId> = reg.ids().collect();
            check_parameters(block, &mut reg, &ids, tolerance, |tape, reg| {
                let xv = tape.constant(x.clone());
                let out = b.forward(tape, reg, &xv)?;
                project(tape, &out, &r)
            })
        }
        "sa" => {
            let b = SpatialAttention::new(&mut reg, &mut init, "sa")?;
            perturb_all(&mut reg, &mut rng);
            let x = random(&mut rng, [n, 3, h, w]);
            let r = random(&mut rng, [n, 3, h, w]);
            let ids: Vec<ParamId> = reg.ids().collect();
            check_parameters(block, &mut reg, &ids, tolerance, |tape, reg| {
                let xv = tape.constant(x.clone());
                let out = b.forward(tape, reg, &xv)?;
                project(tape, &out, &r)
            })
        }
        "decoder" => {
            let b = DecoderBlock::new(&mut reg, &mut init, 1, 3, 4)?;
            perturb_all(&mut reg, &mut rng);
            let skip = random(&mut rng, [n, 3, h, w]);
            let below = random(&mut rng, [n, 4, h / 2, w / 2]);
            let r = random(&mut rng, [n, 3, h, w]);
            let ids: Vec<ParamId> = reg.ids().collect();
            check_parameters(block, &mut reg, &ids, tolerance, |tape, reg| {
                let (s, bl) = (tape.constant(skip.clone()), tape.constant(below.clone()));
                let out = b.forward(tape, reg, &s, &bl)?;
                project(tape, &out, &r)
            })
        }
        "head" => {
            let b = PredictionHead::new(&mut reg, &mut init, 4, 3)?;
            perturb_all(&mut reg, &mut rng);
            let x = random(&mut rng, [n, 4, h, w]);
            let r = random(&mut rng, [n, 3, h, w]);
            let ids: Vec<ParamId> = reg.ids().collect();
            check_parameters(block, &mut reg, &ids, tolerance, |tape, reg| {
                let xv = tape.constant(x.clone());
                let out = b.forward(tape, reg, &xv)?;
                project(tape, &out, &r)
            })
        }
        "ce" => check_loss(block, 3, hw, tolerance, &mut rng, softmax_ce),
        "dice" => check_loss(block, 3, hw, tolerance, &mut rng, |t, x, g| dice(t, x, g, DICE_EPSILON)),
        other => Err(Error::InvalidArgument(format!(
            "unknown block {other:?}; expected one of {}",
            BLOCKS.join(", ")
        ))),
    }
}

/// Every block in [`BLOCKS`].
pub fn gradcheck_all(hw: (usize, usize), tolerance: f64, seed: u64) -> Result<Vec<GradcheckReport>> {
    BLOCKS.iter().map(|b| gradcheck(b, hw, tolerance, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Backward, Grad};

    #[test]
    fn all_blocks_pass_at_4x4() {
        for report in gradcheck_all((4, 4), DEFAULT_TOLERANCE, 0).unwrap() {
            assert!(report.passed(), "{report}");
            assert!(!report.checks.is_empty());
        }
    }

    struct WrongDouble;

    impl Backward for WrongDouble {
        fn name(&self) -> &'static str {
            "wrong_double"
        }
        fn backward(&self, g: &Grad, _need: &[bool]) -> Result<Vec<Option<Grad>>> {
            Ok(vec![Some(Grad::Real(g.real()?.map(|v| 3.0 * v)))])
        }
    }

    #[test]
    fn corrupted_backward_fails() {
        let mut reg = ParameterRegistry::new();
        let id = reg.register("w", RealTensor4::full([1, 1, 2, 2], 0.7)).unwrap();
        let report = check_parameters("fixture", &mut reg, &[id], DEFAULT_TOLERANCE, |tape, reg| {
            let w = tape.param(reg, id);
            let node = tape.record(&[w.node()], WrongDouble);
            let doubled = tape.wrap(w.value().map(|v| 2.0 * v), node);
            Ok(tape.sum(&doubled))
        })
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn empty_parameter_list_passes() {
        let mut reg = ParameterRegistry::new();
        let report = check_parameters("none", &mut reg, &[], DEFAULT_TOLERANCE, |tape, _| {
            Ok(tape.constant(RealTensor4::scalar(1.0)))
        })
        .unwrap();
        assert!(report.checks.is_empty() && report.passed());
    }

    #[test]
    fn unknown_block_rejected() {
        assert!(gradcheck("encoder9", (4, 4), DEFAULT_TOLERANCE, 0).is_err());
    }
}
