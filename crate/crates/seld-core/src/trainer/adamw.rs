//! AdamW with decoupled weight decay.

use crate::config::TrainConfig;
use crate::diffcore::{Element, ParamStore};
use crate::error::{Result, SeldError};

struct Moments<E> {
    m: Vec<E>,
    v: Vec<E>,
}

pub struct AdamW<E: Element> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step_count: u64,
    slots: Vec<Option<Moments<E>>>,
}

impl<E: Element> AdamW<E> {
    pub fn new(cfg: &TrainConfig, n_params: usize) -> Self {
        AdamW {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step_count: 0,
            slots: (0..n_params).map(|_| None).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update: decoupled decay `p -= lr * wd * p` first, then the
    /// bias-corrected Adam step on the gradients.
    pub fn step(
        &mut self,
        store: &mut ParamStore<E>,
        grads: &[(usize, Vec<E>)],
        lr: f64,
    ) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (E::from_f64(self.beta1), E::from_f64(self.beta2));
        let one_m_b1 = E::from_f64(1.0 - self.beta1);
        let one_m_b2 = E::from_f64(1.0 - self.beta2);
        let lr_e = E::from_f64(lr);
        let decay = E::from_f64(lr * self.weight_decay);
        let eps = E::from_f64(self.eps);
        let inv_bc1 = E::from_f64(1.0 / bc1);
        let inv_bc2 = E::from_f64(1.0 / bc2);

        for &(idx, ref grad) in grads {
            let param = store.get_mut(idx);
            if !param.trainable {
                return Err(SeldError::Contract(format!(
                    "gradient supplied for non-trainable parameter {}",
                    param.name
                )));
            }
            if grad.len() != param.value.numel() {
                return Err(SeldError::Shape(format!(
                    "gradient length {} does not match parameter {} ({})",
                    grad.len(),
                    param.name,
                    param.value.numel()
                )));
            }
            let slot = self.slots[idx].get_or_insert_with(|| Moments {
                m: vec![E::ZERO; grad.len()],
                v: vec![E::ZERO; grad.len()],
            });
            for (i, p) in param.value.data.iter_mut().enumerate() {
                let g = grad[i];
                *p = *p - decay * *p;
                slot.m[i] = b1 * slot.m[i] + one_m_b1 * g;
                slot.v[i] = b2 * slot.v[i] + one_m_b2 * g * g;
                let m_hat = slot.m[i] * inv_bc1;
                let v_hat = slot.v[i] * inv_bc2;
                *p = *p - lr_e * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Serialized moments for run-state checkpoints, in param-index order.
    pub fn export(&self) -> Vec<(usize, Vec<E>, Vec<E>)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|s| (i, s.m.clone(), s.v.clone())))
            .collect()
    }

    pub fn import(&mut self, step_count: u64, slots: Vec<(usize, Vec<E>, Vec<E>)>) {
        self.step_count = step_count;
        for (idx, m, v) in slots {
            self.slots[idx] = Some(Moments { m, v });
        }
    }
}
