use crate::error::{Error, Result};
use crate::model::ForwardVars;
use crate::tensor::{smooth_l1_value, Graph, Tensor, Var};

fn check_lengths(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(Error::contract(format!(
            "{what}: prediction has {a} values, target {b}; need equal nonzero lengths"
        )));
    }
    Ok(())
}

/// `sqrt(mean((pred - target)²))` on the graph; the gradient at an exact
/// zero residual is 0.
pub fn rmse_loss(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    check_lengths("rmse_loss", g.value(pred).len(), g.value(target).len())?;
    let target = if g.shape(target) == g.shape(pred) {
        target
    } else {
        let shape = g.shape(pred).to_vec();
        g.reshape(target, &shape)?
    };
    let d = g.sub(pred, target)?;
    let sq = g.square(d);
    let m = g.mean(sq);
    g.sqrt(m)
}

/// Mean Smooth-L1 with knee `beta` on the graph.
pub fn smooth_l1_loss(g: &mut Graph, pred: Var, target: Var, beta: f64) -> Result<Var> {
    check_lengths("smooth_l1_loss", g.value(pred).len(), g.value(target).len())?;
    g.smooth_l1(pred, target, beta)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths("rmse", pred.len(), target.len())?;
    let ss: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((ss / pred.len() as f64).sqrt())
}

pub fn smooth_l1(pred: &[f64], target: &[f64], beta: f64) -> Result<f64> {
    check_lengths("smooth_l1", pred.len(), target.len())?;
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::contract(format!(
            "smooth_l1 beta must be > 0, got {beta}"
        )));
    }
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| smooth_l1_value(t - p, beta))
        .sum();
    Ok(total / pred.len() as f64)
}

/// Loss terms of one batch; `total = angle + λ·speed`.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub angle: Var,
    pub speed: Option<Var>,
}

/// RMSE on the angle plus `speed_weight` × Smooth-L1 on the speed, averaged
/// over every timestep. The speed term is skipped when the model has no
/// speed head or `speed_weight` is 0.
pub fn combined_loss(
    g: &mut Graph,
    out: &ForwardVars,
    angle_target: &Tensor,
    speed_target: Option<&Tensor>,
    speed_weight: f64,
    beta: f64,
) -> Result<LossVars> {
    if speed_weight.is_nan() || speed_weight < 0.0 {
        return Err(Error::contract(format!(
            "speed loss weight must be >= 0, got {speed_weight}"
        )));
    }
    let at = g.constant(angle_target.clone());
    let angle = rmse_loss(g, out.angle, at)?;
    let speed = match (out.speed, speed_weight > 0.0) {
        (Some(pred), true) => {
            let st = speed_target.ok_or_else(|| {
                Error::contract("speed loss weight > 0 but no speed labels were given")
            })?;
            let st = g.constant(st.clone());
            Some(smooth_l1_loss(g, pred, st, beta)?)
        }
        _ => None,
    };
    let total = match speed {
        Some(s) => {
            let weighted = g.scale(s, speed_weight);
            g.add(angle, weighted)?
        }
        None => angle,
    };
    Ok(LossVars {
        total,
        angle,
        speed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check_many, smooth_l1_slope};

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    fn graph_rmse(p: &[f64], q: &[f64]) -> f64 {
        let mut g = Graph::new();
        let (a, b) = (g.constant(t(p)), g.constant(t(q)));
        let l = rmse_loss(&mut g, a, b).unwrap();
        g.value(l).item()
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(graph_rmse(&[0.3, -0.2], &[0.3, -0.2]), 0.0);
        assert_eq!(graph_rmse(&[1.0; 4], &[0.0; 4]), 1.0);
        assert!((graph_rmse(&[1.0, 3.0], &[0.0, 1.0]) - 2.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(
            rmse(&[1.0, 3.0], &[0.0, 1.0]).unwrap(),
            graph_rmse(&[1.0, 3.0], &[0.0, 1.0])
        );
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        let mut g = Graph::new();
        let (a, b) = (g.constant(t(&[1.0, 2.0])), g.constant(t(&[1.0])));
        assert!(matches!(rmse_loss(&mut g, a, b), Err(Error::Contract(_))));
        assert!(matches!(rmse(&[], &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn rmse_gradient_is_zero_at_perfect_fit() {
        let mut g = Graph::new();
        let a = g.param(t(&[0.5, -1.0]));
        let b = g.constant(t(&[0.5, -1.0]));
        let l = rmse_loss(&mut g, a, b).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn smooth_l1_examples_and_knee() {
        assert_eq!(smooth_l1(&[0.0], &[0.0], 1.0).unwrap(), 0.0);
        assert_eq!(smooth_l1(&[0.0], &[0.5], 1.0).unwrap(), 0.125);
        assert_eq!(smooth_l1(&[0.0], &[2.0], 1.0).unwrap(), 1.5);
        for beta in [0.5f64, 1.0, 3.0] {
            let below = 0.5 * beta * beta / beta;
            let above = beta - 0.5 * beta;
            assert!((below - above).abs() < 1e-12);
            assert!((smooth_l1_value(beta, beta) - 0.5 * beta).abs() < 1e-12);
            assert!((smooth_l1_slope(beta * (1.0 - 1e-15), beta) - 1.0).abs() < 1e-12);
            assert_eq!(smooth_l1_slope(beta, beta), 1.0);
        }
    }

    #[test]
    fn loss_gradients_match_differences() {
        let p = t(&[0.3, -1.2, 2.0, 0.05]);
        let q = t(&[0.1, 0.4, -0.5, 0.0]);
        let err = grad_check_many(
            |g, v| rmse_loss(g, v[0], v[1]),
            &[p.clone(), q.clone()],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
        let err =
            grad_check_many(|g, v| smooth_l1_loss(g, v[0], v[1], 1.0), &[p, q], 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    fn outputs(g: &mut Graph, angle: &[f64], speed: Option<&[f64]>) -> ForwardVars {
        ForwardVars {
            angle: g.constant(t(angle)),
            speed: speed.map(|s| g.constant(t(s))),
            attention: Vec::new(),
        }
    }

    #[test]
    fn combined_examples() {
        let mut g = Graph::new();
        let out = outputs(&mut g, &[0.3, 0.1], Some(&[5.0, 5.0]));
        let at = t(&[0.0, 0.2]);
        let st = t(&[5.5, 4.0]);
        let zero = combined_loss(&mut g, &out, &at, Some(&st), 0.0, 1.0).unwrap();
        let a = rmse(&[0.3, 0.1], &[0.0, 0.2]).unwrap();
        assert_eq!(g.value(zero.total).item(), a);
        assert!(zero.speed.is_none());

        let one = combined_loss(&mut g, &out, &at, Some(&st), 1.0, 1.0).unwrap();
        let s = smooth_l1(&[5.0, 5.0], &[5.5, 4.0], 1.0).unwrap();
        assert!((g.value(one.total).item() - (a + s)).abs() < 1e-15);

        let perfect = combined_loss(
            &mut g,
            &out,
            &t(&[0.3, 0.1]),
            Some(&t(&[5.0, 5.0])),
            0.1,
            1.0,
        )
        .unwrap();
        assert_eq!(g.value(perfect.total).item(), 0.0);

        assert!(matches!(
            combined_loss(&mut g, &out, &at, None, 0.1, 1.0),
            Err(Error::Contract(_))
        ));
        let no_head = outputs(&mut g, &[0.3, 0.1], None);
        let l = combined_loss(&mut g, &no_head, &at, None, 0.1, 1.0).unwrap();
        assert_eq!(g.value(l.total).item(), a);
    }
}
