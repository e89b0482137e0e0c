//! Seeded synthetic benchmark and a surrogate segmenter.
//!
//! Scenes hold 1 + Poisson objects (mean 2.8 per image) drawn as jittered
//! rectangles and ellipses with log-uniform area fractions. The surrogate
//! segmenter reproduces ground truth up to a perturbation whose magnitude
//! shrinks as the segmenter's skill in the instance's (size, clutter) bin
//! grows. Perturbations are in absolute pixels, so small objects suffer most.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{
    decode_rle, encode_rle, image_iou_score, iou, ImagePrediction, InstanceAnnotation,
    InstancePrediction,
};
use crate::selection::ScoredPool;
use crate::{seed, ImageId};

pub const SIZE_BINS: usize = 4;
pub const CLUTTER_BINS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub num_images: usize,
    pub height: u32,
    pub width: u32,
    pub num_classes: u32,
    /// Mean objects per image; counts are `objects_min` plus a Poisson draw.
    pub objects_mean: f64,
    pub objects_min: usize,
    pub objects_max: usize,
    /// Target mean number of distinct classes per image.
    pub classes_mean: f64,
    pub area_min: f64,
    pub area_max: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            num_images: 1000,
            height: 64,
            width: 64,
            num_classes: 20,
            objects_mean: 2.8,
            objects_min: 1,
            objects_max: 12,
            classes_mean: 1.5,
            area_min: 0.002,
            area_max: 0.25,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_images == 0 || self.height == 0 || self.width == 0 || self.num_classes == 0 {
            return bad("image count, raster size and class count must be positive");
        }
        if self.objects_min == 0 || self.objects_max < self.objects_min {
            return bad("need 1 <= objects_min <= objects_max");
        }
        if !(self.objects_mean >= self.objects_min as f64
            && self.objects_mean <= self.objects_max as f64)
        {
            return bad("objects_mean must lie in [objects_min, objects_max]");
        }
        if !(self.classes_mean >= 1.0 && self.classes_mean <= self.objects_mean) {
            return bad("classes_mean must lie in [1, objects_mean]");
        }
        if !(self.area_min > 0.0 && self.area_min < self.area_max && self.area_max <= 1.0) {
            return bad("need 0 < area_min < area_max <= 1");
        }
        let pixels = self.height as f64 * self.width as f64;
        if self.area_min * pixels < 1.0 {
            return Err(Error::Dimension(format!(
                "a {}x{} raster cannot hold objects of area fraction {}",
                self.height, self.width, self.area_min
            )));
        }
        Ok(())
    }

    /// Probability that an additional object introduces a new class.
    fn new_class_probability(&self) -> f64 {
        if self.objects_mean <= 1.0 {
            return 0.0;
        }
        ((self.classes_mean - 1.0) / (self.objects_mean - 1.0)).clamp(0.0, 1.0)
    }

    /// Log-space quartile edges of the object-size distribution.
    pub fn size_edges(&self) -> [f64; SIZE_BINS - 1] {
        let ratio = self.area_max / self.area_min;
        std::array::from_fn(|k| self.area_min * ratio.powf((k + 1) as f64 / SIZE_BINS as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageStats {
    pub n_objects: usize,
    pub n_classes: usize,
    pub mean_area_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticImage {
    pub image_id: ImageId,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<InstanceAnnotation>,
    pub stats: ImageStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub config: WorldConfig,
    pub images: Vec<SyntheticImage>,
}

impl SyntheticDataset {
    pub fn image(&self, id: ImageId) -> Option<&SyntheticImage> {
        // images are stored in id order
        self.images
            .binary_search_by_key(&id, |im| im.image_id)
            .ok()
            .map(|i| &self.images[i])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ds: SyntheticDataset = serde_json::from_str(text)?;
        if ds.images.windows(2).any(|w| w[0].image_id >= w[1].image_id) {
            return Err(Error::InvalidValue(
                "image ids must be strictly increasing".into(),
            ));
        }
        Ok(ds)
    }

    /// `image_id,n_objects,mean_area_fraction` sidecar.
    pub fn stats_csv(&self) -> String {
        let mut out = String::from("image_id,n_objects,mean_area_fraction\n");
        for im in &self.images {
            let _ = writeln!(
                out,
                "{},{},{:.6}",
                im.image_id, im.stats.n_objects, im.stats.mean_area_fraction
            );
        }
        out
    }
}

pub fn generate_dataset(config: &WorldConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let images = (0..config.num_images as u64)
        .into_par_iter()
        .map(|id| generate_image(config, ImageId(id)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset {
        config: *config,
        images,
    })
}

fn generate_image(config: &WorldConfig, image_id: ImageId) -> Result<SyntheticImage> {
    let mut rng = seed::rng(config.seed, "image", &[image_id.0]);
    let extra_mean = config.objects_mean - config.objects_min as f64;
    let extra = if extra_mean > 0.0 {
        Poisson::new(extra_mean)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let n_objects = (config.objects_min + extra).min(config.objects_max);

    let p_new = config.new_class_probability();
    let mut classes: Vec<u32> = Vec::new();
    let mut instances = Vec::with_capacity(n_objects);
    for k in 0..n_objects {
        let class_id =
            if k == 0 || (rng.random_bool(p_new) && classes.len() < config.num_classes as usize) {
                loop {
                    let c = rng.random_range(0..config.num_classes);
                    if !classes.contains(&c) {
                        classes.push(c);
                        break c;
                    }
                }
            } else {
                classes[rng.random_range(0..classes.len())]
            };
        let mask = draw_shape(config, &mut rng)?;
        instances.push(InstanceAnnotation { class_id, mask });
    }
    let mean_area_fraction = instances
        .iter()
        .map(|i| i.mask.area_fraction())
        .sum::<f64>()
        / n_objects as f64;
    Ok(SyntheticImage {
        image_id,
        width: config.width,
        height: config.height,
        instances,
        stats: ImageStats {
            n_objects,
            n_classes: classes.len(),
            mean_area_fraction,
        },
    })
}

fn draw_shape(config: &WorldConfig, rng: &mut impl Rng) -> Result<crate::mask::BinaryMask> {
    let (h, w) = (config.height as f64, config.width as f64);
    let fraction = (rng.random_range(config.area_min.ln()..config.area_max.ln())).exp();
    let area = fraction * h * w;
    let aspect = rng.random_range(0.5f64.ln()..2.0f64.ln()).exp();
    let ellipse = rng.random_bool(0.5);

    let (half_w, half_h) = if ellipse {
        let ax = (area * aspect / std::f64::consts::PI).sqrt();
        (ax, area / (std::f64::consts::PI * ax))
    } else {
        let bw = (area * aspect).sqrt();
        (bw / 2.0, area / bw / 2.0)
    };
    let half_w = half_w.min(w / 2.0);
    let half_h = half_h.min(h / 2.0);
    let cx = rng.random_range(half_w..=(w - half_w));
    let cy = rng.random_range(half_h..=(h - half_h));

    let lobes = rng.random_range(3..=6) as f64;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let wobble = 0.08;
    let row_jitter: Vec<(i32, i32)> = (0..config.height)
        .map(|_| {
            let j = |rng: &mut dyn rand::RngCore| -> i32 {
                if rng.random_bool(0.3) {
                    if rng.random_bool(0.5) {
                        1
                    } else {
                        -1
                    }
                } else {
                    0
                }
            };
            (j(rng), j(rng))
        })
        .collect();

    let mut px = vec![false; (config.height * config.width) as usize];
    for r in 0..config.height {
        let y = r as f64 + 0.5;
        for c in 0..config.width {
            let x = c as f64 + 0.5;
            let inside = if ellipse {
                let (dx, dy) = ((x - cx) / half_w, (y - cy) / half_h);
                let theta = dy.atan2(dx);
                let radius = 1.0 + wobble * (lobes * theta + phase).sin();
                dx * dx + dy * dy <= radius * radius
            } else {
                let (jl, jr) = if half_w >= 1.5 {
                    row_jitter[r as usize]
                } else {
                    (0, 0)
                };
                (y - cy).abs() <= half_h
                    && x >= cx - half_w + jl as f64
                    && x <= cx + half_w + jr as f64
            };
            px[(r * config.width + c) as usize] = inside;
        }
    }
    let center = (cy.floor() as u32).min(config.height - 1) * config.width
        + (cx.floor() as u32).min(config.width - 1);
    px[center as usize] = true;
    encode_rle(config.height, config.width, &px)
}

/// Bin edges shared by training and segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    /// Ascending area-fraction edges between the four size bins.
    pub size_edges: [f64; SIZE_BINS - 1],
}

impl BinSpec {
    pub fn for_world(world: &WorldConfig) -> Self {
        BinSpec {
            size_edges: world.size_edges(),
        }
    }

    pub fn size_bin(&self, area_fraction: f64) -> usize {
        self.size_edges
            .iter()
            .filter(|&&e| area_fraction >= e)
            .count()
    }

    /// Clutter bins: 1 object, 2-3 objects, 4 or more.
    pub fn clutter_bin(n_objects: usize) -> usize {
        match n_objects {
            0 | 1 => 0,
            2 | 3 => 1,
            _ => 2,
        }
    }
}

/// Saturating skill law `s_min + (s_max - s_min) * (1 - exp(-n / tau))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillLaw {
    pub s_min: f64,
    pub s_max: f64,
    pub tau: f64,
}

impl Default for SkillLaw {
    fn default() -> Self {
        SkillLaw {
            s_min: 0.15,
            s_max: 0.95,
            tau: 8.0,
        }
    }
}

impl SkillLaw {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.s_min && self.s_min <= self.s_max && self.s_max <= 1.0 && self.tau > 0.0) {
            return Err(Error::Config(format!("invalid skill law {self:?}")));
        }
        Ok(())
    }

    pub fn skill(&self, count: f64) -> f64 {
        self.s_min + (self.s_max - self.s_min) * (1.0 - (-count / self.tau).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Perturbation scale in pixels at zero skill.
    pub scale_px: f64,
    pub p_miss: f64,
    /// Perturbation multiplier per clutter bin.
    pub clutter_factor: [f64; CLUTTER_BINS],
    /// Standard deviation of the confidence jitter around the skill.
    pub confidence_jitter: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            scale_px: 4.0,
            p_miss: 0.15,
            clutter_factor: [1.0, 1.5, 2.25],
            confidence_jitter: 0.05,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_px >= 0.0
            && (0.0..=1.0).contains(&self.p_miss)
            && self.confidence_jitter >= 0.0
            && self.clutter_factor.iter().all(|f| *f >= 0.0))
        {
            return Err(Error::Config(format!("invalid noise model {self:?}")));
        }
        Ok(())
    }
}

/// Weighted instance counts per (clutter, size) bin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BinCounts(pub [[f64; SIZE_BINS]; CLUTTER_BINS]);

impl BinCounts {
    pub fn add_instances<'a>(
        &mut self,
        bins: &BinSpec,
        n_objects: usize,
        masks: impl IntoIterator<Item = &'a crate::mask::BinaryMask>,
        weight: f64,
    ) {
        let c = BinSpec::clutter_bin(n_objects);
        for m in masks {
            self.0[c][bins.size_bin(m.area_fraction())] += weight;
        }
    }

    pub fn add_image(&mut self, bins: &BinSpec, image: &SyntheticImage) {
        self.add_instances(
            bins,
            image.stats.n_objects,
            image.instances.iter().map(|i| &i.mask),
            1.0,
        );
    }

    pub fn total(&self) -> f64 {
        self.0.iter().flatten().sum()
    }

    pub fn merged(&self, other: &BinCounts) -> BinCounts {
        let mut out = *self;
        for (row, orow) in out.0.iter_mut().zip(&other.0) {
            for (v, o) in row.iter_mut().zip(orow) {
                *v += o;
            }
        }
        out
    }
}

/// Skill-parameterized stand-in for a trained segmentation network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSegmenter {
    /// `skills[clutter_bin][size_bin]`, each in [0, 1].
    pub skills: [[f64; SIZE_BINS]; CLUTTER_BINS],
    pub bins: BinSpec,
    pub noise: NoiseModel,
    pub noise_seed: u64,
}

impl SurrogateSegmenter {
    pub fn uniform(skill: f64, bins: BinSpec, noise: NoiseModel, noise_seed: u64) -> Self {
        SurrogateSegmenter {
            skills: [[skill.clamp(0.0, 1.0); SIZE_BINS]; CLUTTER_BINS],
            bins,
            noise,
            noise_seed,
        }
    }

    pub fn from_counts(
        counts: &BinCounts,
        law: &SkillLaw,
        bins: BinSpec,
        noise: NoiseModel,
        noise_seed: u64,
    ) -> Self {
        let skills = counts.0.map(|row| row.map(|n| law.skill(n)));
        SurrogateSegmenter {
            skills,
            bins,
            noise,
            noise_seed,
        }
    }

    pub fn skill_for(&self, n_objects: usize, area_fraction: f64) -> f64 {
        self.skills[BinSpec::clutter_bin(n_objects)][self.bins.size_bin(area_fraction)]
    }

    /// The same segmenter partway through training: skills move linearly
    /// from `s_min` (progress 0) to their converged values (progress 1).
    pub fn snapshot(&self, s_min: f64, progress: f64) -> Self {
        let p = progress.clamp(0.0, 1.0);
        let mut out = self.clone();
        out.skills = self.skills.map(|row| row.map(|s| s_min + p * (s - s_min)));
        out
    }
}

/// Skills from strong instance counts per bin.
pub fn train_surrogate(
    strong: &[&SyntheticImage],
    law: &SkillLaw,
    bins: BinSpec,
    noise: NoiseModel,
    noise_seed: u64,
) -> Result<SurrogateSegmenter> {
    if strong.is_empty() {
        return Err(Error::Empty("surrogate training set"));
    }
    law.validate()?;
    noise.validate()?;
    let mut counts = BinCounts::default();
    for im in strong {
        counts.add_image(&bins, im);
    }
    Ok(SurrogateSegmenter::from_counts(
        &counts, law, bins, noise, noise_seed,
    ))
}

/// Predicts every instance of `image` by perturbing its ground truth.
pub fn segment(model: &SurrogateSegmenter, image: &SyntheticImage) -> ImagePrediction {
    let n_objects = image.stats.n_objects;
    let clutter = BinSpec::clutter_bin(n_objects);
    let instances = image
        .instances
        .iter()
        .enumerate()
        .filter_map(|(i, truth)| {
            let mut rng = seed::rng(model.noise_seed, "segment", &[image.image_id.0, i as u64]);
            let skill = model.skill_for(n_objects, truth.mask.area_fraction());
            let miss = rng.random::<f64>();
            let magnitude =
                (1.0 - skill) * model.noise.scale_px * model.noise.clutter_factor[clutter];
            let mut draw = || -> i32 {
                let z: f64 = StandardNormal.sample(&mut rng);
                (z * magnitude).round() as i32
            };
            let (dx, dy, depth) = (draw(), draw(), draw());
            let z: f64 = StandardNormal.sample(&mut rng);
            if miss < (1.0 - skill) * model.noise.p_miss {
                return None;
            }
            let mask = perturb(&truth.mask, dx, dy, depth);
            if mask.is_empty() {
                return None;
            }
            let confidence = (skill + model.noise.confidence_jitter * z).clamp(0.0, 1.0);
            Some(InstancePrediction {
                class_id: truth.class_id,
                mask,
                confidence,
                predicted_iou: None,
                source: Some(i),
            })
        })
        .collect();
    ImagePrediction {
        image_id: image.image_id,
        instances,
    }
}

pub fn segment_all(model: &SurrogateSegmenter, images: &[&SyntheticImage]) -> Vec<ImagePrediction> {
    images.par_iter().map(|im| segment(model, im)).collect()
}

/// Translates by `(dx, dy)` then dilates (`depth > 0`) or erodes
/// (`depth < 0`) with a 4-neighbourhood, `|depth|` times.
fn perturb(
    mask: &crate::mask::BinaryMask,
    dx: i32,
    dy: i32,
    depth: i32,
) -> crate::mask::BinaryMask {
    if dx == 0 && dy == 0 && depth == 0 {
        return mask.clone();
    }
    let (h, w) = (mask.height() as i32, mask.width() as i32);
    let src = decode_rle(mask);
    let mut px = vec![false; src.len()];
    for r in 0..h {
        for c in 0..w {
            if src[(r * w + c) as usize] {
                let (nr, nc) = (r + dy, c + dx);
                if nr >= 0 && nr < h && nc >= 0 && nc < w {
                    px[(nr * w + nc) as usize] = true;
                }
            }
        }
    }
    let dilate = depth > 0;
    for _ in 0..depth.unsigned_abs() {
        let prev = px.clone();
        let at = |r: i32, c: i32| -> bool {
            if r < 0 || r >= h || c < 0 || c >= w {
                // outside counts as background for both operations
                false
            } else {
                prev[(r * w + c) as usize]
            }
        };
        for r in 0..h {
            for c in 0..w {
                let nbrs = [at(r - 1, c), at(r + 1, c), at(r, c - 1), at(r, c + 1)];
                let here = at(r, c);
                px[(r * w + c) as usize] = if dilate {
                    here || nbrs.iter().any(|&b| b)
                } else {
                    here && nbrs.iter().all(|&b| b)
                };
            }
        }
    }
    encode_rle(mask.height(), mask.width(), &px).expect("raster shape preserved")
}

/// Per-instance IoU of each prediction against the instance it was generated from.
pub fn prediction_ious(prediction: &ImagePrediction, truth: &SyntheticImage) -> Result<Vec<f64>> {
    prediction
        .instances
        .iter()
        .map(|p| {
            let src = p.source.ok_or_else(|| {
                Error::InvalidValue(format!(
                    "prediction in image {} has no source instance",
                    truth.image_id
                ))
            })?;
            let gt = truth.instances.get(src).ok_or_else(|| {
                Error::InvalidValue(format!(
                    "source {src} out of range in image {}",
                    truth.image_id
                ))
            })?;
            iou(&p.mask, &gt.mask)
        })
        .collect()
}

/// Ground-truth IoU score per image; images with no surviving prediction score 0.
pub fn oracle_scores(
    predictions: &[ImagePrediction],
    truths: &[&SyntheticImage],
) -> Result<ScoredPool> {
    if predictions.len() != truths.len()
        || predictions
            .iter()
            .zip(truths)
            .any(|(p, t)| p.image_id != t.image_id)
    {
        return Err(Error::KeyMismatch(
            "predictions and truths cover different images".into(),
        ));
    }
    let mut entries = BTreeMap::new();
    for (p, t) in predictions.iter().zip(truths) {
        let ious = prediction_ious(p, t)?;
        let score = if ious.is_empty() {
            0.0
        } else {
            image_iou_score(&ious)?
        };
        entries.insert(p.image_id, score);
    }
    ScoredPool::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(n: usize, seed: u64) -> WorldConfig {
        WorldConfig {
            num_images: n,
            seed,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_dataset(&world(50, 3)).unwrap();
        let b = generate_dataset(&world(50, 3)).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = generate_dataset(&world(50, 4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forced_single_object() {
        let cfg = WorldConfig {
            num_images: 1,
            objects_mean: 1.0,
            objects_min: 1,
            objects_max: 1,
            classes_mean: 1.0,
            ..WorldConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.images.len(), 1);
        assert_eq!(ds.images[0].instances.len(), 1);
    }

    #[test]
    fn instances_valid() {
        let ds = generate_dataset(&world(200, 1)).unwrap();
        for im in &ds.images {
            assert!(!im.instances.is_empty());
            assert_eq!(im.stats.n_objects, im.instances.len());
            for inst in &im.instances {
                assert!(inst.mask.area() >= 1);
                assert_eq!(
                    (inst.mask.height(), inst.mask.width()),
                    (im.height, im.width)
                );
                assert!(inst.class_id < 20);
            }
        }
    }

    #[test]
    fn tiny_raster_rejected() {
        let cfg = WorldConfig {
            height: 8,
            width: 8,
            ..WorldConfig::default()
        };
        assert!(matches!(generate_dataset(&cfg), Err(Error::Dimension(_))));
    }

    #[test]
    fn skill_law_limits() {
        let law = SkillLaw::default();
        assert_eq!(law.skill(0.0), 0.15);
        assert!((law.skill(1e6) - 0.95).abs() < 1e-12);
        assert!(law.skill(5.0) < law.skill(6.0));
    }

    #[test]
    fn bins() {
        let w = WorldConfig::default();
        let b = BinSpec::for_world(&w);
        assert_eq!(b.size_bin(0.002), 0);
        assert_eq!(b.size_bin(0.25), 3);
        assert_eq!(b.size_bin(0.01), 1);
        assert_eq!(b.size_bin(0.05), 2);
        assert_eq!(BinSpec::clutter_bin(1), 0);
        assert_eq!(BinSpec::clutter_bin(3), 1);
        assert_eq!(BinSpec::clutter_bin(4), 2);
    }

    #[test]
    fn perfect_skill_reproduces_ground_truth() {
        let ds = generate_dataset(&world(30, 2)).unwrap();
        let noise = NoiseModel {
            p_miss: 0.0,
            ..NoiseModel::default()
        };
        let model = SurrogateSegmenter::uniform(1.0, BinSpec::for_world(&ds.config), noise, 9);
        let refs: Vec<&SyntheticImage> = ds.images.iter().collect();
        let preds = segment_all(&model, &refs);
        for (p, t) in preds.iter().zip(&ds.images) {
            assert_eq!(p.instances.len(), t.instances.len());
            for (pi, ti) in p.instances.iter().zip(&t.instances) {
                assert_eq!(pi.mask, ti.mask);
            }
        }
        let scores = oracle_scores(&preds, &refs).unwrap();
        assert!(scores.entries().values().all(|&s| s == 1.0));
    }

    #[test]
    fn all_dropped_scores_zero() {
        let ds = generate_dataset(&world(20, 2)).unwrap();
        let noise = NoiseModel {
            p_miss: 1.0,
            ..NoiseModel::default()
        };
        let model = SurrogateSegmenter::uniform(0.0, BinSpec::for_world(&ds.config), noise, 9);
        let refs: Vec<&SyntheticImage> = ds.images.iter().collect();
        let preds = segment_all(&model, &refs);
        assert!(preds.iter().all(|p| p.instances.is_empty()));
        let scores = oracle_scores(&preds, &refs).unwrap();
        assert!(scores.entries().values().all(|&s| s == 0.0));
    }

    #[test]
    fn segmentation_is_deterministic() {
        let ds = generate_dataset(&world(10, 2)).unwrap();
        let model = SurrogateSegmenter::uniform(
            0.4,
            BinSpec::for_world(&ds.config),
            NoiseModel::default(),
            5,
        );
        for im in &ds.images {
            assert_eq!(segment(&model, im), segment(&model, im));
        }
        let other = SurrogateSegmenter {
            noise_seed: 6,
            ..model.clone()
        };
        let differs = ds
            .images
            .iter()
            .any(|im| segment(&model, im) != segment(&other, im));
        assert!(differs);
    }

    #[test]
    fn training_uses_formula_per_bin() {
        let ds = generate_dataset(&world(40, 8)).unwrap();
        let bins = BinSpec::for_world(&ds.config);
        let refs: Vec<&SyntheticImage> = ds.images.iter().collect();
        let law = SkillLaw::default();
        let model = train_surrogate(&refs, &law, bins, NoiseModel::default(), 0).unwrap();
        let mut counts = [[0usize; SIZE_BINS]; CLUTTER_BINS];
        for im in &ds.images {
            for inst in &im.instances {
                counts[BinSpec::clutter_bin(im.stats.n_objects)]
                    [bins.size_bin(inst.mask.area_fraction())] += 1;
            }
        }
        for (srow, crow) in model.skills.iter().zip(&counts) {
            for (skill, &n) in srow.iter().zip(crow) {
                let expected = 0.15 + 0.8 * (1.0 - (-(n as f64) / 8.0).exp());
                assert!((skill - expected).abs() < 1e-12);
            }
        }
        assert!(train_surrogate(&[], &law, bins, NoiseModel::default(), 0).is_err());
    }

    #[test]
    fn perturb_shifts_and_morphs() {
        let m = encode_rle(
            5,
            5,
            &[
                false, false, false, false, false, false, true, true, true, false, false, true,
                true, true, false, false, true, true, true, false, false, false, false, false,
                false,
            ],
        )
        .unwrap();
        assert_eq!(perturb(&m, 0, 0, 0), m);
        assert_eq!(perturb(&m, 1, 0, 0).area(), 9);
        assert_eq!(perturb(&m, 0, 0, -1).area(), 1);
        assert_eq!(perturb(&m, 0, 0, 1).area(), 21);
        assert_eq!(perturb(&m, 3, 0, 0).area(), 3);
        assert_eq!(perturb(&m, 4, 0, 0).area(), 0);
    }

    #[test]
    fn stats_sidecar() {
        let ds = generate_dataset(&world(3, 1)).unwrap();
        let csv = ds.stats_csv();
        assert!(csv.starts_with("image_id,n_objects,mean_area_fraction\n0,"));
        assert_eq!(csv.lines().count(), 4);
    }
}
