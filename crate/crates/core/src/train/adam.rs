use crate::model::ParamStore;
use crate::tensorad::{Gradients, Var};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction. Each tensor keeps its own step count, so a
/// tensor that received no gradient in a step is left untouched, moments
/// included.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: Vec<u32>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.values().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            steps: vec![0; params.values().len()],
        }
    }

    /// Updates every tensor whose graph handle received a gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, vars: &[Var], lr: f64) {
        let vars: Vec<Option<Var>> = vars.iter().copied().map(Some).collect();
        self.step_some(params, grads, &vars, lr);
    }

    /// Like [`step`](Self::step), skipping tensors whose handle is `None`.
    pub fn step_some(&mut self, params: &mut ParamStore, grads: &Gradients, vars: &[Option<Var>], lr: f64) {
        for (i, (value, var)) in params.values_mut().iter_mut().zip(vars).enumerate() {
            let Some(grad) = var.and_then(|v| grads.get_ref(v)) else {
                continue;
            };
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let c1 = 1.0 - ADAM_BETA1.powi(t);
            let c2 = 1.0 - ADAM_BETA2.powi(t);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((x, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *x -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}
