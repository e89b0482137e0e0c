//! Linear IoU-quality regressor trained with an L1 loss.
//!
//! The regressor maps hand-built mask/image features to a raw value that
//! targets either the IoU itself or its square root. Predictions are the raw
//! value clamped to [0, 1], squared again in the square-root case.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::InstancePrediction;

pub const FEATURE_LEN: usize = 6;

/// `[bias, normalized area, normalized object count, compactness,
/// boundary-noise estimate, clutter index]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_LEN]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Image-level context available at pseudo-annotation time: the instance
/// count comes from the image-level-plus-counts labels, the coverage from the
/// predicted masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageContext {
    pub n_objects: usize,
    /// Summed predicted foreground area over the raster area.
    pub coverage: f64,
}

impl ImageContext {
    pub fn from_predictions(n_objects: usize, predictions: &[InstancePrediction]) -> Self {
        let coverage = predictions.iter().map(|p| p.mask.area_fraction()).sum();
        ImageContext {
            n_objects,
            coverage,
        }
    }
}

/// Object counts are divided by this before entering the feature vector.
pub const OBJECT_COUNT_SCALE: f64 = 10.0;

pub fn extract_features(
    ctx: &ImageContext,
    prediction: &InstancePrediction,
) -> Result<FeatureVector> {
    let mask = &prediction.mask;
    let area = mask.area();
    if area == 0 {
        return Err(Error::Empty("feature extraction needs a non-empty mask"));
    }
    let perimeter = mask.perimeter() as f64;
    // isoperimetric quotient, 1 for a disc
    let compactness = (4.0 * std::f64::consts::PI * area as f64 / (perimeter * perimeter)).min(1.0);
    Ok(FeatureVector([
        1.0,
        mask.area_fraction().sqrt(),
        ctx.n_objects as f64 / OBJECT_COUNT_SCALE,
        compactness,
        1.0 - prediction.confidence,
        ctx.coverage,
    ]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    Identity,
    Sqrt,
}

impl TargetTransform {
    pub fn forward(self, iou: f64) -> f64 {
        match self {
            TargetTransform::Identity => iou,
            TargetTransform::Sqrt => iou.sqrt(),
        }
    }

    pub fn inverse(self, raw: f64) -> f64 {
        let raw = raw.clamp(0.0, 1.0);
        match self {
            TargetTransform::Identity => raw,
            TargetTransform::Sqrt => raw * raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorModel {
    pub weights: Vec<f64>,
    pub target_transform: TargetTransform,
}

impl RegressorModel {
    pub fn zeros(target_transform: TargetTransform) -> Self {
        RegressorModel {
            weights: vec![0.0; FEATURE_LEN],
            target_transform,
        }
    }

    pub fn raw(&self, features: &FeatureVector) -> Result<f64> {
        if self.weights.len() != FEATURE_LEN {
            return Err(Error::Dimension(format!(
                "model has {} weights, features have {FEATURE_LEN}",
                self.weights.len()
            )));
        }
        Ok(dot(&self.weights, features.as_slice()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: RegressorModel = serde_json::from_str(text)?;
        if model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidValue("non-finite weight".into()));
        }
        Ok(model)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn predict_iou(model: &RegressorModel, features: &FeatureVector) -> Result<f64> {
    Ok(model.target_transform.inverse(model.raw(features)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingPhase {
    /// IoU branch trained alongside the still-converging segmenter.
    Joint,
    /// Segmenter frozen after its phase, then only the IoU branch trains.
    FrozenThenIou,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub phase: TrainingPhase,
    pub segmentation_phase_epochs: usize,
    pub iou_phase_epochs: usize,
    pub learning_rate: f64,
    /// Samples per subgradient step; `0` means full batch.
    #[serde(default)]
    pub batch_size: usize,
    /// Halve the learning rate every this many epochs; `0` disables.
    #[serde(default)]
    pub halve_every: usize,
    pub seed: u64,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        TrainingSchedule {
            phase: TrainingPhase::FrozenThenIou,
            segmentation_phase_epochs: 150,
            iou_phase_epochs: 100,
            learning_rate: 0.05,
            batch_size: 16,
            halve_every: 20,
            seed: 0,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.segmentation_phase_epochs == 0 || self.iou_phase_epochs == 0 {
            return Err(Error::Config("epoch counts must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// Epochs during which the regressor is updated.
    pub fn regressor_epochs(&self) -> usize {
        match self.phase {
            TrainingPhase::Joint => self.segmentation_phase_epochs + self.iou_phase_epochs,
            TrainingPhase::FrozenThenIou => self.iou_phase_epochs,
        }
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.halve_every {
            0 => self.learning_rate,
            k => self.learning_rate * 0.5f64.powi((epoch / k) as i32),
        }
    }
}

/// A training pair: features and the achieved IoU in [0, 1].
pub type Sample = (FeatureVector, f64);

/// Mean L1 loss of the raw output against the transformed targets.
pub fn l1_loss(weights: &[f64], samples: &[Sample], transform: TargetTransform) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|(x, y)| (dot(weights, x.as_slice()) - transform.forward(*y)).abs())
        .sum();
    total / samples.len() as f64
}

/// A subgradient of [`l1_loss`]; `sign(0)` is taken as 0.
pub fn l1_subgradient(weights: &[f64], samples: &[Sample], transform: TargetTransform) -> Vec<f64> {
    let mut g = vec![0.0; weights.len()];
    accumulate_subgradient(&mut g, weights, samples.iter(), transform);
    let n = samples.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

fn accumulate_subgradient<'a>(
    g: &mut [f64],
    weights: &[f64],
    samples: impl Iterator<Item = &'a Sample>,
    transform: TargetTransform,
) {
    for (x, y) in samples {
        let r = dot(weights, x.as_slice()) - transform.forward(*y);
        let s = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        for (gi, xi) in g.iter_mut().zip(x.as_slice()) {
            *gi += s * xi;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedRegressor {
    pub model: RegressorModel,
    /// Full-dataset loss after each epoch.
    pub loss_per_epoch: Vec<f64>,
}

impl TrainedRegressor {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (e, l) in self.loss_per_epoch.iter().enumerate() {
            let _ = writeln!(out, "{},{l:.9}", e + 1);
        }
        out
    }
}

/// Seeded stochastic subgradient descent on the L1 loss, starting from zero
/// weights.
pub fn train(
    samples: &[Sample],
    schedule: &TrainingSchedule,
    transform: TargetTransform,
) -> Result<TrainedRegressor> {
    if samples.is_empty() {
        return Err(Error::Empty("regressor training set"));
    }
    schedule.validate()?;
    if let Some((_, y)) = samples.iter().find(|(_, y)| !(0.0..=1.0).contains(y)) {
        return Err(Error::InvalidValue(format!(
            "target IoU {y} outside [0, 1]"
        )));
    }
    let mut weights = vec![0.0; FEATURE_LEN];
    let batch = match schedule.batch_size {
        0 => samples.len(),
        b => b.min(samples.len()),
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = Vec::with_capacity(schedule.regressor_epochs());
    let mut grad = vec![0.0; FEATURE_LEN];

    for epoch in 0..schedule.regressor_epochs() {
        let lr = schedule.learning_rate_at(epoch);
        if batch < samples.len() {
            let mut rng = crate::seed::rng(schedule.seed, "regressor_epoch", &[epoch as u64]);
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            accumulate_subgradient(
                &mut grad,
                &weights,
                chunk.iter().map(|&i| &samples[i]),
                transform,
            );
            let scale = lr / chunk.len() as f64;
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w -= scale * g;
            }
        }
        losses.push(l1_loss(&weights, samples, transform));
    }
    Ok(TrainedRegressor {
        model: RegressorModel {
            weights,
            target_transform: transform,
        },
        loss_per_epoch: losses,
    })
}

/// Mean absolute error of predicted IoU against true IoU, in percentage points.
pub fn evaluate_mae(model: &RegressorModel, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut total = 0.0;
    for (x, y) in samples {
        total += (predict_iou(model, x)? - y).abs();
    }
    Ok(100.0 * total / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::encode_rle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(rng: &mut ChaCha8Rng) -> FeatureVector {
        let mut f = [1.0; FEATURE_LEN];
        for v in f.iter_mut().skip(1) {
            *v = rng.random_range(0.0..1.0);
        }
        FeatureVector(f)
    }

    #[test]
    fn full_image_mask_has_unit_area_feature() {
        let mask = encode_rle(4, 4, &[true; 16]).unwrap();
        let pred = InstancePrediction::new(0, mask, 0.8).unwrap();
        let ctx = ImageContext::from_predictions(1, std::slice::from_ref(&pred));
        let f = extract_features(&ctx, &pred).unwrap();
        assert_eq!(f.0[1], 1.0);
        assert_eq!(f.0[5], 1.0);
        assert!((f.0[4] - 0.2).abs() < 1e-12);
        assert_eq!(f, extract_features(&ctx, &pred).unwrap());
    }

    #[test]
    fn empty_mask_rejected() {
        let pred =
            InstancePrediction::new(0, crate::mask::BinaryMask::empty(4, 4).unwrap(), 0.5).unwrap();
        let ctx = ImageContext {
            n_objects: 1,
            coverage: 0.0,
        };
        assert!(extract_features(&ctx, &pred).is_err());
    }

    #[test]
    fn prediction_examples() {
        let x = FeatureVector([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            predict_iou(&RegressorModel::zeros(TargetTransform::Sqrt), &x).unwrap(),
            0.0
        );
        let half = RegressorModel {
            weights: vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0],
            target_transform: TargetTransform::Sqrt,
        };
        assert_eq!(predict_iou(&half, &x).unwrap(), 0.25);
        for t in [TargetTransform::Identity, TargetTransform::Sqrt] {
            let big = RegressorModel {
                weights: vec![3.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                target_transform: t,
            };
            assert_eq!(predict_iou(&big, &x).unwrap(), 1.0);
        }
        let short = RegressorModel {
            weights: vec![1.0; 3],
            target_transform: TargetTransform::Identity,
        };
        assert!(matches!(predict_iou(&short, &x), Err(Error::Dimension(_))));
    }

    #[test]
    fn single_sample_converges() {
        let x = FeatureVector([1.0, 0.3, 0.2, 0.7, 0.4, 0.5]);
        let schedule = TrainingSchedule {
            iou_phase_epochs: 400,
            batch_size: 0,
            halve_every: 25,
            ..TrainingSchedule::default()
        };
        for t in [TargetTransform::Identity, TargetTransform::Sqrt] {
            let trained = train(&[(x, 0.42)], &schedule, t).unwrap();
            assert!((predict_iou(&trained.model, &x).unwrap() - 0.42).abs() < 1e-3);
        }
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(matches!(
            train(&[], &TrainingSchedule::default(), TargetTransform::Sqrt),
            Err(Error::Empty(_))
        ));
        let bad = [(FeatureVector([1.0; FEATURE_LEN]), 1.5)];
        assert!(train(&bad, &TrainingSchedule::default(), TargetTransform::Sqrt).is_err());
        let zero_lr = TrainingSchedule {
            learning_rate: 0.0,
            ..TrainingSchedule::default()
        };
        let ok = [(FeatureVector([1.0; FEATURE_LEN]), 0.5)];
        assert!(train(&ok, &zero_lr, TargetTransform::Sqrt).is_err());
    }

    #[test]
    fn deterministic_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<Sample> = (0..50)
            .map(|_| (random_features(&mut rng), rng.random_range(0.0..1.0)))
            .collect();
        let s = TrainingSchedule::default();
        let a = train(&samples, &s, TargetTransform::Sqrt).unwrap();
        let b = train(&samples, &s, TargetTransform::Sqrt).unwrap();
        assert_eq!(a, b);
        let c = train(
            &samples,
            &TrainingSchedule { seed: 1, ..s },
            TargetTransform::Sqrt,
        )
        .unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn joint_schedule_trains_longer() {
        let s = TrainingSchedule {
            phase: TrainingPhase::Joint,
            ..TrainingSchedule::default()
        };
        assert_eq!(s.regressor_epochs(), 250);
        assert_eq!(TrainingSchedule::default().regressor_epochs(), 100);
    }

    #[test]
    fn mae_examples() {
        let x = FeatureVector([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let half = RegressorModel {
            weights: vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0],
            target_transform: TargetTransform::Identity,
        };
        assert!((evaluate_mae(&half, &[(x, 0.0), (x, 1.0)]).unwrap() - 50.0).abs() < 1e-12);
        assert_eq!(evaluate_mae(&half, &[(x, 0.5)]).unwrap(), 0.0);
        assert!(evaluate_mae(&half, &[]).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let m = RegressorModel {
            weights: vec![0.1, -0.2, 0.3, 0.0, 1.0, 2.0],
            target_transform: TargetTransform::Sqrt,
        };
        let s = m.to_json().unwrap();
        assert!(s.contains(r#""target_transform":"sqrt""#));
        assert_eq!(RegressorModel::from_json(&s).unwrap(), m);
    }

    #[test]
    fn curve_csv_has_one_row_per_epoch() {
        let x = FeatureVector([1.0, 0.3, 0.2, 0.7, 0.4, 0.5]);
        let s = TrainingSchedule {
            iou_phase_epochs: 3,
            ..TrainingSchedule::default()
        };
        let t = train(&[(x, 0.4)], &s, TargetTransform::Identity).unwrap();
        let csv = t.curve_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("epoch,loss\n1,"));
    }
}
