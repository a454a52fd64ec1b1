use super::Tensor;
use crate::error::{Error, Result};

/// Adam moment buffers and hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step_count: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub lr: f32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_lens: impl IntoIterator<Item = usize>, lr: f32) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = param_lens
            .into_iter()
            .map(|n| (vec![0.0; n], vec![0.0; n]))
            .unzip();
        Self {
            step_count: 0,
            m,
            v,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` from their accumulated
/// gradients. Parameters without a gradient are left alone (their moments
/// still decay as if the gradient were zero).
///
/// If any gradient holds a NaN or infinity nothing is modified and
/// [`Error::NonFinite`] is returned.
pub fn adam_step(params: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam: {} parameters but {} moment buffers",
            params.len(),
            state.m.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if state.m[i].len() != p.len() {
            return Err(Error::shape(format!(
                "adam: parameter {i} has shape {:?} but moments hold {} values",
                p.shape(),
                state.m[i].len()
            )));
        }
        if let Some(g) = p.grad_ref().as_ref() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {i} (shape {:?})",
                    p.shape()
                )));
            }
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.lr as f64;
    for (i, p) in params.iter().enumerate() {
        let grad = p.grad_ref();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        match grad.as_ref() {
            Some(g) => {
                let mut upd = vec![0.0f32; g.len()];
                for j in 0..g.len() {
                    let gj = g[j] as f64;
                    let mj = b1 * m[j] as f64 + (1.0 - b1) * gj;
                    let vj = b2 * v[j] as f64 + (1.0 - b2) * gj * gj;
                    m[j] = mj as f32;
                    v[j] = vj as f32;
                    upd[j] = (lr * (mj / c1) / ((vj / c2).sqrt() + state.eps)) as f32;
                }
                drop(grad);
                p.update_data(|d| d.iter_mut().zip(&upd).for_each(|(x, u)| *x -= u));
            }
            None => {
                drop(grad);
                let mut upd = vec![0.0f32; m.len()];
                for j in 0..m.len() {
                    let mj = b1 * m[j] as f64;
                    let vj = b2 * v[j] as f64;
                    m[j] = mj as f32;
                    v[j] = vj as f32;
                    upd[j] = (lr * (mj / c1) / ((vj / c2).sqrt() + state.eps)) as f32;
                }
                p.update_data(|d| d.iter_mut().zip(&upd).for_each(|(x, u)| *x -= u));
            }
        }
    }
    Ok(())
}

/// Adam bound to a fixed parameter list.
#[derive(Debug)]
pub struct Adam {
    params: Vec<Tensor>,
    state: AdamState,
}

impl Adam {
    pub fn new(params: Vec<Tensor>, lr: f32) -> Self {
        let state = AdamState::new(params.iter().map(Tensor::len), lr);
        Self { params, state }
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn lr(&self) -> f32 {
        self.state.lr
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.state.lr = lr;
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(Tensor::zero_grad);
    }

    pub fn step(&mut self) -> Result<()> {
        adam_step(&self.params, &mut self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_grad(p: &Tensor, g: &[f32]) {
        p.zero_grad();
        p.accumulate_grad(g);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let p = Tensor::param(vec![0.3, -1.2], &[2]).unwrap();
        let mut opt = Adam::new(vec![p.clone()], 1e-3);
        with_grad(&p, &[0.0, 0.0]);
        opt.step().unwrap();
        assert_eq!(p.to_vec(), vec![0.3, -1.2]);
        assert_eq!(opt.state().step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let p = Tensor::param(vec![0.0], &[1]).unwrap();
        let mut opt = Adam::new(vec![p.clone()], 0.001);
        with_grad(&p, &[1.0]);
        opt.step().unwrap();
        assert_eq!(p.item(), -0.001);
    }

    #[test]
    fn identical_params_stay_identical() {
        let a = Tensor::param(vec![0.7], &[1]).unwrap();
        let b = Tensor::param(vec![0.7], &[1]).unwrap();
        let mut opt = Adam::new(vec![a.clone(), b.clone()], 0.01);
        for k in 0..50 {
            let g = [(k as f32 * 0.37).sin()];
            with_grad(&a, &g);
            with_grad(&b, &g);
            opt.step().unwrap();
            assert_eq!(a.to_vec(), b.to_vec());
        }
    }

    #[test]
    fn non_finite_gradient_rejected_without_update() {
        let a = Tensor::param(vec![1.0], &[1]).unwrap();
        let b = Tensor::param(vec![2.0], &[1]).unwrap();
        let mut opt = Adam::new(vec![a.clone(), b.clone()], 0.1);
        with_grad(&a, &[1.0]);
        with_grad(&b, &[f32::NAN]);
        assert!(matches!(opt.step(), Err(Error::NonFinite(_))));
        assert_eq!(a.item(), 1.0);
        assert_eq!(opt.state().step_count, 0);
    }
}
