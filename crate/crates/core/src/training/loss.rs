//! Cross-entropy and soft Dice losses as tape operations.

use crate::autodiff::{Backward, Grad, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{LabelMap, RealTensor4};

pub const DICE_EPSILON: f64 = 1e-5;

fn check_target(logits: &RealTensor4, target: &LabelMap) -> Result<()> {
    let d = logits.dims();
    if (d.n(), d.h(), d.w()) != (target.n(), target.h(), target.w()) {
        return Err(Error::Shape(format!(
            "logits {d} do not match target [{}, {}, {}]",
            target.n(),
            target.h(),
            target.w()
        )));
    }
    if let Some(max) = target.max_label() {
        if max as usize >= d.c() {
            return Err(Error::Data(format!("target class {max} out of range for {} classes", d.c())));
        }
    }
    Ok(())
}

/// Softmax over the class axis with max subtraction.
pub fn softmax(logits: &RealTensor4) -> RealTensor4 {
    let d = logits.dims();
    let (k, plane) = (d.c(), d.plane());
    let mut out = logits.clone();
    let data = out.data_mut();
    for n in 0..d.n() {
        let base = n * k * plane;
        for p in 0..plane {
            let at = |c: usize| base + c * plane + p;
            let m = (0..k).map(|c| data[at(c)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..k {
                let e = (data[at(c)] - m).exp();
                data[at(c)] = e;
                z += e;
            }
            for c in 0..k {
                data[at(c)] /= z;
            }
        }
    }
    out
}

fn one_hot_index(target: &LabelMap, n: usize, p: usize) -> usize {
    target.mask(n)[p] as usize
}

struct CeOp {
    probs: RealTensor4,
    target: LabelMap,
}

impl Backward for CeOp {
    fn name(&self) -> &'static str {
        "softmax_ce"
    }
    fn backward(&self, g: &Grad, _need: &[bool]) -> Result<Vec<Option<Grad>>> {
        let g = g.real()?.item()?;
        let d = self.probs.dims();
        let scale = g / (d.n() * d.plane()) as f64;
        let mut grad = self.probs.map(|p| p * scale);
        for n in 0..d.n() {
            for p in 0..d.plane() {
                let c = one_hot_index(&self.target, n, p);
                grad.plane_mut(n, c)[p] -= scale;
            }
        }
        Ok(vec![Some(Grad::Real(grad))])
    }
}

/// Mean over pixels of `-log softmax(logits)[target]`.
pub fn softmax_ce(tape: &mut Tape, logits: &Var, target: &LabelMap) -> Result<Var> {
    let x = logits.value();
    check_target(x, target)?;
    let d = x.dims();
    let (k, plane) = (d.c(), d.plane());
    let mut total = 0.0;
    for n in 0..d.n() {
        for p in 0..plane {
            let at = |c: usize| x.plane(n, c)[p];
            let m = (0..k).map(at).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..k).map(|c| (at(c) - m).exp()).sum::<f64>().ln();
            total += lse - at(one_hot_index(target, n, p));
        }
    }
    let value = RealTensor4::scalar(total / (d.n() * plane) as f64);
    let node = tape.record(
        &[logits.node()],
        CeOp {
            probs: softmax(x),
            target: target.clone(),
        },
    );
    Ok(tape.wrap(value, node))
}

struct DiceOp {
    probs: RealTensor4,
    target: LabelMap,
    inter: Vec<f64>,
    denom: Vec<f64>,
    eps: f64,
}

impl Backward for DiceOp {
    fn name(&self) -> &'static str {
        "dice"
    }
    fn backward(&self, g: &Grad, _need: &[bool]) -> Result<Vec<Option<Grad>>> {
        let g = g.real()?.item()?;
        let d = self.probs.dims();
        let (k, plane) = (d.c(), d.plane());
        let kf = k as f64;
        let mut grad = RealTensor4::zeros(d);
        let mut dl_dp = vec![0.0; k];
        for n in 0..d.n() {
            for p in 0..plane {
                let t = one_hot_index(&self.target, n, p);
                for (c, a) in dl_dp.iter_mut().enumerate() {
                    let gk = (c == t) as u8 as f64;
                    let den = self.denom[c];
                    *a = -g / kf * (2.0 * gk * den - (2.0 * self.inter[c] + self.eps)) / (den * den);
                }
                let dot: f64 = (0..k).map(|c| self.probs.plane(n, c)[p] * dl_dp[c]).sum();
                for c in 0..k {
                    let pc = self.probs.plane(n, c)[p];
                    grad.plane_mut(n, c)[p] = pc * (dl_dp[c] - dot);
                }
            }
        }
        Ok(vec![Some(Grad::Real(grad))])
    }
}

/// `1 - mean_k (2 sum p_k g_k + eps) / (sum p_k + sum g_k + eps)` over all classes,
/// sums running over batch and pixels.
pub fn dice(tape: &mut Tape, logits: &Var, target: &LabelMap, eps: f64) -> Result<Var> {
    let x = logits.value();
    check_target(x, target)?;
    let d = x.dims();
    let k = d.c();
    let probs = softmax(x);
    let mut inter = vec![0.0; k];
    let mut psum = vec![0.0; k];
    let mut gsum = vec![0.0; k];
    for n in 0..d.n() {
        for p in 0..d.plane() {
            let t = one_hot_index(target, n, p);
            gsum[t] += 1.0;
            inter[t] += probs.plane(n, t)[p];
            for (c, s) in psum.iter_mut().enumerate() {
                *s += probs.plane(n, c)[p];
            }
        }
    }
    let denom: Vec<f64> = (0..k).map(|c| psum[c] + gsum[c] + eps).collect();
    let mean_dice = (0..k).map(|c| (2.0 * inter[c] + eps) / denom[c]).sum::<f64>() / k as f64;
    let node = tape.record(
        &[logits.node()],
        DiceOp {
            probs,
            target: target.clone(),
            inter,
            denom,
            eps,
        },
    );
    Ok(tape.wrap(RealTensor4::scalar(1.0 - mean_dice), node))
}

/// Weights of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub ce: f64,
    pub dice: f64,
    pub dice_epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            ce: 1.0,
            dice: 1.0,
            dice_epsilon: DICE_EPSILON,
        }
    }
}

/// `w_ce * CE + w_dice * Dice`.
pub fn total_loss(tape: &mut Tape, logits: &Var, target: &LabelMap, w: &LossWeights) -> Result<Var> {
    let ce = softmax_ce(tape, logits, target)?;
    let dl = dice(tape, logits, target, w.dice_epsilon)?;
    let a = tape.scale(&ce, w.ce);
    let b = tape.scale(&dl, w.dice);
    tape.add(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn balanced(n: usize, h: usize, w: usize) -> LabelMap {
        LabelMap::from_vec(n, h, w, (0..n * h * w).map(|i| (i % 2) as u8).collect()).unwrap()
    }

    fn value(f: impl FnOnce(&mut Tape, &Var) -> Result<Var>, logits: RealTensor4) -> f64 {
        let mut tape = Tape::inference();
        let x = tape.constant(logits);
        f(&mut tape, &x).unwrap().value().item().unwrap()
    }

    #[test]
    fn uniform_logits() {
        let t = balanced(2, 4, 4);
        let z = RealTensor4::zeros([2, 2, 4, 4]);
        let ce = value(|tp, x| softmax_ce(tp, x, &t), z.clone());
        assert!((ce - LN_2).abs() < 1e-12);
        let dl = value(|tp, x| dice(tp, x, &t, DICE_EPSILON), z.clone());
        assert!((dl - 0.5).abs() < 1e-6);
        let both = value(|tp, x| total_loss(tp, x, &t, &LossWeights::default()), z.clone());
        assert!((both - (LN_2 + 0.5)).abs() < 1e-6);
        let only_ce = LossWeights { dice: 0.0, ..LossWeights::default() };
        assert_eq!(value(|tp, x| total_loss(tp, x, &t, &only_ce), z.clone()), ce);
        let only_dice = LossWeights { ce: 0.0, ..LossWeights::default() };
        assert_eq!(value(|tp, x| total_loss(tp, x, &t, &only_dice), z), dl);
    }

    #[test]
    fn saturated_correct_logits() {
        let t = balanced(1, 2, 2);
        let logits = RealTensor4::from_fn([1, 2, 2, 2], |[_, c, h, w]| {
            if c as u8 == t.at(0, h, w) {
                1000.0
            } else {
                0.0
            }
        });
        assert!(value(|tp, x| softmax_ce(tp, x, &t), logits.clone()) < 1e-12);
        assert!(value(|tp, x| dice(tp, x, &t, DICE_EPSILON), logits) < 1e-9);
    }

    #[test]
    fn ce_matches_per_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = RealTensor4::from_fn([1, 3, 2, 2], |_| rng.gen_range(-3.0..3.0));
        let t = LabelMap::from_vec(1, 2, 2, vec![2, 0, 1, 2]).unwrap();
        let mut want = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                let z: f64 = (0..3).map(|k| logits.at(0, k, r, c).exp()).sum();
                want -= (logits.at(0, t.at(0, r, c) as usize, r, c).exp() / z).ln();
            }
        }
        let got = value(|tp, x| softmax_ce(tp, x, &t), logits);
        assert!((got - want / 4.0).abs() < 1e-10);
    }

    #[test]
    fn dice_in_unit_range_and_rejects_bad_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let logits = RealTensor4::from_fn([2, 3, 3, 3], |_| rng.gen_range(-4.0..4.0));
            let t = LabelMap::from_vec(2, 3, 3, (0..18).map(|_| rng.gen_range(0..3)).collect()).unwrap();
            let v = value(|tp, x| dice(tp, x, &t, DICE_EPSILON), logits);
            assert!((0.0..=1.0).contains(&v));
        }
        let bad = LabelMap::from_vec(1, 1, 2, vec![0, 2]).unwrap();
        let mut tape = Tape::inference();
        let x = tape.constant(RealTensor4::zeros([1, 2, 1, 2]));
        assert!(softmax_ce(&mut tape, &x, &bad).is_err());
        assert!(dice(&mut tape, &x, &bad, DICE_EPSILON).is_err());
    }
}
