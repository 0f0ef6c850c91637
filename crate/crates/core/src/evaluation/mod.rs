//! Test-set scoring, prediction smoothing and export of predictions and
//! attention maps.

mod attention;
mod plot;

pub use attention::export_attention;
pub use plot::{read_plot_data, write_plot_data, PLOT_HEADER};

use crate::dataset::{batch_input, batch_targets, SequenceSample};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::rmse;

/// One evaluated frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionPoint {
    pub timestamp: i64,
    pub predicted: f64,
    pub target: f64,
    pub speed: Option<f64>,
}

/// Per-frame predictions in timestamp order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionSeries {
    pub points: Vec<PredictionPoint>,
}

impl PredictionSeries {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn predicted(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.predicted).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.target).collect()
    }

    pub fn has_speed(&self) -> bool {
        self.points.first().is_some_and(|p| p.speed.is_some())
    }

    pub fn rmse(&self) -> Result<f64> {
        rmse(&self.predicted(), &self.targets())
    }

    /// RMSE after [`exp_smooth`] of the predictions.
    pub fn smoothed_rmse(&self, factor: f64) -> Result<f64> {
        rmse(&exp_smooth(&self.predicted(), factor)?, &self.targets())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub series: PredictionSeries,
    pub rmse: f64,
}

/// Scores `model` on `samples` without augmentation. Each window contributes
/// its last-step prediction, assigned to the window's last frame.
pub fn evaluate(
    model: &Model,
    samples: &[SequenceSample],
    batch_size: usize,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::contract("evaluate on an empty sample list"));
    }
    let mc = model.config();
    let mut points = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&SequenceSample> = chunk.iter().collect();
        let out = model.predict(&batch_input(&refs, mc)?)?;
        let (targets, _) = batch_targets(&refs, mc)?;
        let steps = out.angle.shape()[1];
        for (b, s) in chunk.iter().enumerate() {
            let last = b * steps + steps - 1;
            points.push(PredictionPoint {
                timestamp: *s.timestamps.last().expect("nonempty window"),
                predicted: out.angle.data()[last],
                target: targets.data()[last],
                speed: out.speed.as_ref().map(|t| t.data()[last]),
            });
        }
    }
    if let Some(w) = points.windows(2).find(|w| w[1].timestamp <= w[0].timestamp) {
        return Err(Error::contract(format!(
            "evaluated frames must have strictly increasing timestamps ({} then {})",
            w[0].timestamp, w[1].timestamp
        )));
    }
    let series = PredictionSeries { points };
    let rmse = series.rmse()?;
    Ok(Evaluation { series, rmse })
}

/// First-order recursive smoothing, `s_0 = y_0`, `s_t = f·y_t + (1−f)·s_{t−1}`.
/// `f` weights the newest value; `f = 1` returns the input unchanged.
pub fn exp_smooth(series: &[f64], factor: f64) -> Result<Vec<f64>> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::contract(format!(
            "smoothing factor {factor} outside (0, 1]"
        )));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut prev = None;
    for &y in series {
        let s = match prev {
            None => y,
            Some(_) if factor == 1.0 => y,
            Some(p) => factor * y + (1.0 - factor) * p,
        };
        out.push(s);
        prev = Some(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smoothing_examples() {
        assert_eq!(exp_smooth(&[0.0, 1.0], 0.35).unwrap(), vec![0.0, 0.35]);
        let c = vec![0.2; 6];
        assert_eq!(exp_smooth(&c, 0.35).unwrap(), c);
        assert!(exp_smooth(&[], 0.5).unwrap().is_empty());
        for f in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(exp_smooth(&[1.0], f).is_err());
        }
    }

    proptest! {
        #[test]
        fn unit_factor_is_identity(v in proptest::collection::vec(-1e6f64..1e6, 0..40)) {
            prop_assert_eq!(exp_smooth(&v, 1.0).unwrap(), v);
        }

        #[test]
        fn output_stays_in_input_range(v in proptest::collection::vec(-10f64..10.0, 1..40), f in 0.01f64..1.0) {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for s in exp_smooth(&v, f).unwrap() {
                prop_assert!(s >= lo - 1e-12 && s <= hi + 1e-12);
            }
        }
    }
}
