//! Adam with optional decoupled weight decay, and the poly schedule.

use crate::checkpoint::{DType, NamedTensor};
use crate::error::{Error, Result};
use crate::param::ParameterRegistry;
use crate::tensor::RealTensor4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments per parameter, in registry order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<RealTensor4>,
    pub v: Vec<RealTensor4>,
}

impl OptimizerState {
    pub fn new(reg: &ParameterRegistry) -> Self {
        let zeros = || reg.iter().map(|p| RealTensor4::zeros(p.dims())).collect();
        OptimizerState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Tensor table for a checkpoint: `adam.step`, then `adam.m.<name>` and
    /// `adam.v.<name>` per parameter.
    pub fn to_table(&self, reg: &ParameterRegistry) -> Vec<NamedTensor> {
        let mut out = vec![NamedTensor::from_tensor("adam.step", &RealTensor4::scalar(self.step as f64), DType::F64)];
        for (p, (m, v)) in reg.iter().zip(self.m.iter().zip(&self.v)) {
            out.push(NamedTensor::from_tensor(format!("adam.m.{}", p.name()), m, DType::F64));
            out.push(NamedTensor::from_tensor(format!("adam.v.{}", p.name()), v, DType::F64));
        }
        out
    }

    pub fn from_table(table: &[NamedTensor], reg: &ParameterRegistry) -> Result<Self> {
        let find = |name: &str| -> Result<RealTensor4> {
            table
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::CheckpointTensorMismatch(format!("optimizer state lacks {name}")))?
                .to_tensor()
        };
        let step = find("adam.step")?.item()? as u64;
        let mut state = OptimizerState::new(reg);
        state.step = step;
        for (i, p) in reg.iter().enumerate() {
            for (prefix, slot) in [("m", &mut state.m[i]), ("v", &mut state.v[i])] {
                let t = find(&format!("adam.{prefix}.{}", p.name()))?;
                if t.dims() != p.dims() {
                    return Err(Error::CheckpointTensorMismatch(format!(
                        "adam.{prefix}.{}: dims {} vs {}",
                        p.name(),
                        t.dims(),
                        p.dims()
                    )));
                }
                *slot = t;
            }
        }
        Ok(state)
    }
}

/// One bias-corrected Adam update of every trainable parameter from its
/// accumulated gradient. Gradients are left for the caller to zero.
pub fn adam_step(reg: &mut ParameterRegistry, state: &mut OptimizerState, cfg: &AdamConfig, lr: f64) -> Result<()> {
    if reg.is_empty() || !reg.iter().any(|p| p.trainable) {
        return Err(Error::Tape("optimizer step with no trainable gradients".into()));
    }
    if state.m.len() != reg.len() {
        return Err(Error::Tape(format!(
            "optimizer state covers {} parameters, registry holds {}",
            state.m.len(),
            reg.len()
        )));
    }
    if let Some(p) = reg.iter().find(|p| !p.grad().all_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient in {}", p.name())));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in reg.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let (value, grad) = p.value_and_grad();
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (((x, mi), vi), &gi) in value.data_mut().iter_mut().zip(m).zip(v).zip(grad.data()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let update = (*mi / bc1) / ((*vi / bc2).sqrt() + cfg.eps);
            *x -= lr * update + lr * cfg.weight_decay * *x;
        }
    }
    Ok(())
}

/// `lr0 * (1 - iter / max_iter)^power`.
pub fn poly_lr(iter: usize, max_iter: usize, lr0: f64, power: f64) -> Result<f64> {
    if max_iter == 0 {
        return Err(Error::InvalidArgument("poly_lr: max_iter must be positive".into()));
    }
    if iter > max_iter {
        return Err(Error::InvalidArgument(format!("poly_lr: iter {iter} exceeds max_iter {max_iter}")));
    }
    Ok(lr0 * (1.0 - iter as f64 / max_iter as f64).powf(power))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_registry(v: f64, g: f64) -> ParameterRegistry {
        let mut reg = ParameterRegistry::new();
        let id = reg.register("p", RealTensor4::scalar(v)).unwrap();
        reg.get_mut(id).grad_mut().fill(g);
        reg
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut reg = scalar_registry(0.5, 1.0);
        let mut st = OptimizerState::new(&reg);
        adam_step(&mut reg, &mut st, &AdamConfig::default(), 1e-3).unwrap();
        let p = reg.iter().next().unwrap().value().item().unwrap();
        assert!((p - (0.5 - 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut reg = scalar_registry(0.5, 0.0);
        let mut st = OptimizerState::new(&reg);
        for _ in 0..5 {
            adam_step(&mut reg, &mut st, &AdamConfig::default(), 1e-2).unwrap();
        }
        assert_eq!(reg.iter().next().unwrap().value().item().unwrap(), 0.5);
    }

    #[test]
    fn decoupled_decay_shrinks() {
        let mut reg = scalar_registry(2.0, 0.0);
        let mut st = OptimizerState::new(&reg);
        let cfg = AdamConfig {
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        adam_step(&mut reg, &mut st, &cfg, 0.5).unwrap();
        assert!((reg.iter().next().unwrap().value().item().unwrap() - 1.9).abs() < 1e-15);
    }

    #[test]
    fn empty_and_nonfinite_rejected() {
        let mut empty = ParameterRegistry::new();
        let mut st = OptimizerState::new(&empty);
        assert!(adam_step(&mut empty, &mut st, &AdamConfig::default(), 1e-3).is_err());
        let mut reg = scalar_registry(0.0, f64::NAN);
        let mut st = OptimizerState::new(&reg);
        assert!(matches!(
            adam_step(&mut reg, &mut st, &AdamConfig::default(), 1e-3),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn poly_schedule() {
        assert_eq!(poly_lr(0, 100, 1e-4, 0.9).unwrap(), 1e-4);
        assert_eq!(poly_lr(100, 100, 1e-4, 0.9).unwrap(), 0.0);
        assert!((poly_lr(50, 100, 1e-4, 0.9).unwrap() / 1e-4 - 0.5f64.powf(0.9)).abs() < 1e-15);
        assert!((0.5f64.powf(0.9) - 0.5359).abs() < 1e-4);
        assert!(poly_lr(0, 0, 1e-4, 0.9).is_err());
    }

    #[test]
    fn state_table_roundtrip() {
        let mut reg = scalar_registry(0.5, 0.3);
        let mut st = OptimizerState::new(&reg);
        adam_step(&mut reg, &mut st, &AdamConfig::default(), 1e-3).unwrap();
        let back = OptimizerState::from_table(&st.to_table(&reg), &reg).unwrap();
        assert_eq!(back, st);
    }
}
