use crate::autograd::{ParamKind, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// One momentum SGD update with coupled L2 decay on weights:
/// `v ← μv + g + 2λw`, `w ← w − lr·v`. Gradients are zeroed afterwards.
pub fn sgd_step<T: Scalar>(
    params: &mut ParamSet<T>,
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !params.grads_ready() {
        return Err(Error::MissingGradients);
    }
    let (lr, mu, decay) = (
        T::of(learning_rate),
        T::of(momentum),
        T::of(2.0 * weight_decay),
    );
    for p in params.iter_mut() {
        let decay = if p.kind == ParamKind::Weight {
            decay
        } else {
            T::zero()
        };
        let w = p.value.data_mut();
        let v = p.momentum.data_mut();
        for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(p.grad.data()) {
            *v = mu * *v + g + decay * *w;
            *w -= lr * *v;
        }
    }
    params.zero_grads();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Param;
    use crate::tensor::{Shape, Tensor};

    fn set(w: f64, g: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.push(Param::new(
            "w",
            ParamKind::Weight,
            Tensor::filled(Shape::new(1, 1, 1, 1), w),
        ))
        .unwrap();
        ps.push(Param::new(
            "b",
            ParamKind::Bias,
            Tensor::filled(Shape::new(1, 1, 1, 1), w),
        ))
        .unwrap();
        for p in ps.iter_mut() {
            p.grad.fill(g);
        }
        ps.mark_grads_ready();
        ps
    }

    fn values(ps: &ParamSet<f64>) -> Vec<f64> {
        ps.iter().map(|p| p.value.data()[0]).collect()
    }

    #[test]
    fn vanilla_step() {
        let mut ps = set(1.0, 0.5);
        sgd_step(&mut ps, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(values(&ps), vec![1.0 - 0.05, 1.0 - 0.05]);
        assert!(ps.iter().all(|p| p.grad.data()[0] == 0.0));
    }

    #[test]
    fn missing_grads() {
        let mut ps = set(1.0, 0.5);
        ps.zero_grads();
        assert!(matches!(
            sgd_step(&mut ps, 0.1, 0.0, 0.0),
            Err(Error::MissingGradients)
        ));
    }

    #[test]
    fn momentum_unrolls() {
        let (lr, g) = (0.01, 2.0);
        let mut ps = set(0.0, g);
        sgd_step(&mut ps, lr, 0.9, 0.0).unwrap();
        for p in ps.iter_mut() {
            p.grad.fill(g);
        }
        ps.mark_grads_ready();
        sgd_step(&mut ps, lr, 0.9, 0.0).unwrap();
        for v in values(&ps) {
            assert!((v + lr * g * 2.9).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_grad_decays_momentum() {
        let mut ps = set(1.0, 0.0);
        for p in ps.iter_mut() {
            p.momentum.fill(1.0);
        }
        sgd_step(&mut ps, 0.1, 0.5, 0.0).unwrap();
        assert!(ps.iter().all(|p| p.momentum.data()[0] == 0.5));
    }

    #[test]
    fn decay_skips_biases() {
        let mut ps = set(2.0, 0.0);
        sgd_step(&mut ps, 0.1, 0.0, 0.25).unwrap();
        assert_eq!(values(&ps), vec![2.0 - 0.1 * 2.0 * 0.25 * 2.0, 2.0]);
    }
}
