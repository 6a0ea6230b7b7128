//! Adam with bias correction and optional lazy (row-sparse) moment updates.

use thiserror::Error;

use crate::model::{EmbeddingState, Gradients};
use crate::real::{Matrix, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Skip rows whose gradient is entirely zero: no parameter change and no moment decay.
    pub lazy: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lazy: true,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("non-finite parameter after Adam step {step}")]
pub struct AdamError {
    pub step: u64,
}

/// First and second moments for both tables plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub entity_m: Matrix<T>,
    pub entity_v: Matrix<T>,
    pub relation_m: Matrix<T>,
    pub relation_v: Matrix<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &EmbeddingState<T>) -> Self {
        let (ne, nr, d) = (params.entities.rows(), params.relations.rows(), params.dim());
        Self {
            entity_m: Matrix::zeros(ne, d),
            entity_v: Matrix::zeros(ne, d),
            relation_m: Matrix::zeros(nr, d),
            relation_v: Matrix::zeros(nr, d),
            step: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entity_m.is_finite() && self.entity_v.is_finite() && self.relation_m.is_finite() && self.relation_v.is_finite()
    }

    /// One Adam update of both tables. The step counter advances once per call.
    pub fn step(&mut self, params: &mut EmbeddingState<T>, grads: &Gradients<T>, config: &AdamConfig) -> Result<(), AdamError> {
        self.step += 1;
        let t = self.step;
        let ok_e = adam_table(&mut params.entities, &grads.entities, &mut self.entity_m, &mut self.entity_v, t, config);
        let ok_r = adam_table(&mut params.relations, &grads.relations, &mut self.relation_m, &mut self.relation_v, t, config);
        if ok_e && ok_r {
            Ok(())
        } else {
            Err(AdamError { step: t })
        }
    }
}

/// Updates one table in place; returns `false` if any updated entry became non-finite.
pub fn adam_table<T: Real>(
    param: &mut Matrix<T>,
    grad: &Matrix<T>,
    m: &mut Matrix<T>,
    v: &mut Matrix<T>,
    step: u64,
    config: &AdamConfig,
) -> bool {
    assert_eq!(param.rows(), grad.rows(), "gradient shape mismatch");
    assert_eq!(param.dim(), grad.dim(), "gradient shape mismatch");
    let t = step as f64;
    let b1 = T::from_f64(config.beta1);
    let b2 = T::from_f64(config.beta2);
    let one = T::one();
    let bc1 = T::from_f64(1.0 - num_traits::Float::powf(config.beta1, t));
    let bc2 = T::from_f64(1.0 - num_traits::Float::powf(config.beta2, t));
    let lr = T::from_f64(config.learning_rate);
    let eps = T::from_f64(config.eps);
    let mut finite = true;
    for i in 0..param.rows() {
        if config.lazy && grad.row_is_zero(i) {
            continue;
        }
        let g = grad.row(i);
        let (mr, vr, pr) = (m.row_mut(i), v.row_mut(i), param.row_mut(i));
        for (((p, mi), vi), &gi) in pr.iter_mut().zip(mr.iter_mut()).zip(vr.iter_mut()).zip(g) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            finite &= p.is_finite();
        }
    }
    finite
}
