use super::config::AdamConfig;
use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam step, in place.
pub fn adam_update(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::validation("adam_update: parameter, gradient and moment counts differ"));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "adam_update",
                left: p.shape(),
                right: g.shape(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (k, x) in p.data_mut().iter_mut().enumerate() {
            let gk = g.data()[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *x -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        if !p.is_finite() {
            return Err(Error::NonFinite { op: "adam_update" });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::scalar(v).unwrap()
    }

    #[test]
    fn zero_gradient_from_fresh_state_keeps_params() {
        let mut p = vec![scalar(1.5)];
        let mut s = AdamState::new(&p);
        adam_update(&mut p, &[scalar(0.0)], &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p[0].data(), &[1.5]);
        assert_eq!(s.m[0].data(), &[0.0]);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let cfg = AdamConfig::default();
        let mut p = vec![scalar(1.0)];
        let mut s = AdamState::new(&p);
        adam_update(&mut p, &[scalar(2.0)], &mut s, &cfg).unwrap();
        let (m, v) = (s.m[0].data()[0], s.v[0].data()[0]);
        adam_update(&mut p, &[scalar(0.0)], &mut s, &cfg).unwrap();
        assert_eq!(s.m[0].data()[0], cfg.beta1 * m);
        assert_eq!(s.v[0].data()[0], cfg.beta2 * v);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        for g in [1e-3, 1.0, 250.0] {
            let mut p = vec![scalar(0.0)];
            let mut s = AdamState::new(&p);
            adam_update(&mut p, &[scalar(g)], &mut s, &cfg).unwrap();
            assert!((p[0].data()[0] + 0.01).abs() < 1e-6, "g={g}: {}", p[0].data()[0]);
        }
    }

    #[test]
    fn minimizes_a_parabola() {
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut p = vec![scalar(1.0)];
        let mut s = AdamState::new(&p);
        let mut hit = None;
        for step in 0..500 {
            let x = p[0].data()[0];
            if x.abs() < 1e-3 && hit.is_none() {
                hit = Some(step);
            }
            adam_update(&mut p, &[scalar(2.0 * x)], &mut s, &cfg).unwrap();
        }
        assert!(hit.is_some(), "final x = {}", p[0].data()[0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![Tensor::zeros(1, 2)];
        let mut s = AdamState::new(&p);
        assert!(adam_update(&mut p, &[Tensor::zeros(2, 1)], &mut s, &AdamConfig::default()).is_err());
    }
}
