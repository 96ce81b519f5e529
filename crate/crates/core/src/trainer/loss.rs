use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::gradcheck::{relative_error, GradCheckConfig, GradCheckReport};
use crate::autograd::kernels::SIGMOID_OUTPUT_EPS;
use crate::autograd::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNormalization {
    Sum,
    #[default]
    MeanPerPixel,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    /// Cross-entropy term.
    pub data: f64,
    /// `λ‖W‖²` over weights only.
    pub penalty: f64,
    pub full: f64,
}

fn check_binary<T: Scalar>(gt: &Tensor<T>) -> Result<()> {
    match gt
        .data()
        .iter()
        .position(|&g| g != T::zero() && g != T::one())
    {
        Some(index) => Err(Error::NonBinaryTarget {
            value: gt.data()[index].f64(),
            index,
        }),
        None => Ok(()),
    }
}

/// Binary cross-entropy of `pred` against binary `gt` plus `λ‖W‖²`, with the
/// gradient of the data term with respect to `pred`.
pub fn bce_loss<T: Scalar>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    params: &ParamSet<T>,
    weight_decay: f64,
    normalization: LossNormalization,
) -> Result<(LossValue, Tensor<T>)> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape("bce_loss", pred.shape(), gt.shape()));
    }
    check_binary(gt)?;
    let scale = match normalization {
        LossNormalization::Sum => 1.0,
        LossNormalization::MeanPerPixel => 1.0 / pred.len() as f64,
    };
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let p = p.f64().clamp(SIGMOID_OUTPUT_EPS, 1.0 - SIGMOID_OUTPUT_EPS);
        let g = g.f64();
        sum -= g * p.ln() + (1.0 - g) * (1.0 - p).ln();
        grad.push(T::of(scale * ((1.0 - g) / (1.0 - p) - g / p)));
    }
    let data = sum * scale;
    let penalty = weight_decay * params.weight_norm_sq();
    let value = LossValue {
        data,
        penalty,
        full: data + penalty,
    };
    if !value.full.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((value, Tensor::from_vec(pred.shape(), grad)?))
}

/// Central-difference check of the loss gradient on a random `1×1×4×4` case.
pub fn check_bce(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xbce);
    let shape = Shape::new(1, 1, 4, 4);
    let pred = Tensor::<f64>::from_vec(
        shape,
        (0..16).map(|_| rng.random_range(0.05..0.95)).collect(),
    )?;
    let gt = Tensor::<f64>::from_vec(
        shape,
        (0..16).map(|_| rng.random_bool(0.5) as u8 as f64).collect(),
    )?;
    let params = ParamSet::new();
    let mut report = GradCheckReport::default();
    for norm in [LossNormalization::Sum, LossNormalization::MeanPerPixel] {
        let (_, grad) = bce_loss(&pred, &gt, &params, 0.0, norm)?;
        for i in 0..pred.len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut p = pred.clone();
                p.data_mut()[i] += delta;
                Ok(bce_loss(&p, &gt, &params, 0.0, norm)?.0.data)
            };
            let numeric = (eval(cfg.step)? - eval(-cfg.step)?) / (2.0 * cfg.step);
            let err = relative_error(grad.data()[i], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((format!("bce/{norm:?}"), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn none() -> ParamSet<f64> {
        ParamSet::new()
    }

    #[test]
    fn half_everywhere_is_ln2() {
        let s = Shape::new(2, 1, 3, 3);
        let gt = Tensor::from_vec(s, (0..18).map(|i| (i % 2) as f64).collect()).unwrap();
        let (l, _) = bce_loss(
            &Tensor::filled(s, 0.5),
            &gt,
            &none(),
            0.0,
            LossNormalization::MeanPerPixel,
        )
        .unwrap();
        assert!((l.data - std::f64::consts::LN_2).abs() < 1e-12);
        let (l, _) = bce_loss(
            &Tensor::filled(s, 0.5),
            &gt,
            &none(),
            0.0,
            LossNormalization::Sum,
        )
        .unwrap();
        assert!((l.data - 18.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let s = Shape::new(1, 1, 2, 2);
        let gt = Tensor::from_vec(s, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let (l, _) = bce_loss(&gt, &gt, &none(), 0.0, LossNormalization::MeanPerPixel).unwrap();
        assert!(l.data <= 1e-6 && l.data >= 0.0);
    }

    #[test]
    fn rejects_non_binary_target() {
        let s = Shape::new(1, 1, 1, 2);
        let err = bce_loss(
            &Tensor::filled(s, 0.5),
            &Tensor::from_vec(s, vec![0.0, 0.5]).unwrap(),
            &none(),
            0.0,
            LossNormalization::Sum,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonBinaryTarget { index: 1, .. }));
    }

    #[test]
    fn gradient_matches_differences() {
        let r = check_bce(&GradCheckConfig::default()).unwrap();
        assert_eq!(r.checked, 32);
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn penalty_counts_weights_only() {
        use crate::autograd::{Param, ParamKind};
        let mut ps = ParamSet::new();
        ps.push(Param::new(
            "w",
            ParamKind::Weight,
            Tensor::filled(Shape::new(1, 1, 1, 2), 3.0),
        ))
        .unwrap();
        ps.push(Param::new(
            "b",
            ParamKind::Bias,
            Tensor::filled(Shape::new(2, 1, 1, 1), 100.0),
        ))
        .unwrap();
        let s = Shape::new(1, 1, 1, 1);
        let (l, _) = bce_loss(
            &Tensor::filled(s, 0.5),
            &Tensor::zeros(s),
            &ps,
            0.5,
            LossNormalization::Sum,
        )
        .unwrap();
        assert!((l.penalty - 9.0).abs() < 1e-12);
        assert!((l.full - l.data - 9.0).abs() < 1e-12);
    }
}
