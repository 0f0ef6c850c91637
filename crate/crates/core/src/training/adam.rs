use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment per parameter tensor plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    hp: &AdamParams,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::dim(format!(
                "adam_step: param {:?}, grad {:?}, moment {:?}",
                p.shape(),
                g.shape(),
                m.shape()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * gi;
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            let step = lr * m_hat / (v_hat.sqrt() + hp.eps);
            // a zero step must not flip the sign of a -0.0 parameter
            if step != 0.0 {
                p[i] -= step;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<Tensor> {
        vec![Tensor::new(&[1], vec![v]).unwrap()]
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::new(&[3], vec![0.5, -2.0, 0.0]).unwrap()];
        let before = p.clone();
        let mut s = AdamState::new(&p);
        adam_step(
            &mut p,
            &[Tensor::zeros(&[3])],
            &mut s,
            &AdamParams::default(),
            1e-3,
        )
        .unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &scalar(0.5), &mut s, &AdamParams::default(), 1e-4).unwrap();
        let expect = -1e-4 * 0.5 / (0.5 + 1e-8);
        assert!((p[0].item() - expect).abs() < 1e-18);
        assert!((p[0].item() + 9.9999998e-5).abs() < 1e-12);
    }

    #[test]
    fn two_steps_match_hand_rolled() {
        let (b1, b2, eps, lr, g) = (0.9f64, 0.999f64, 1e-8, 1e-3, -0.3f64);
        let (mut theta, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            theta -= lr * mh / (vh.sqrt() + eps);
        }
        let mut p = scalar(0.7);
        let mut s = AdamState::new(&p);
        for _ in 0..2 {
            adam_step(&mut p, &scalar(g), &mut s, &AdamParams::default(), lr).unwrap();
        }
        assert!((p[0].item() - theta).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_bit_identical() {
        let mut p = vec![Tensor::new(&[2], vec![0.25, -0.0]).unwrap()];
        let before = p.clone();
        let mut s = AdamState::new(&p);
        adam_step(
            &mut p,
            &[Tensor::new(&[2], vec![3.0, -1.0]).unwrap()],
            &mut s,
            &AdamParams::default(),
            0.0,
        )
        .unwrap();
        assert_eq!(
            p[0].data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            before[0]
                .data()
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&p);
        assert!(adam_step(
            &mut p,
            &[Tensor::zeros(&[2])],
            &mut s,
            &AdamParams::default(),
            0.1
        )
        .is_err());
    }
}
