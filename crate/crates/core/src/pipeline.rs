//! Two-stage semi-supervised harness with one selection round.
//!
//! Per run seed: a random bootstrap set trains the annotation segmenter and
//! its IoU regressor; the remaining strong pool is scored and `N'` images are
//! selected; the annotation stage is retrained on all `N` strong images and
//! pseudo-annotates the weak pool; the segmentation surrogate is trained on
//! strong counts plus score-weighted pseudo counts; both are evaluated on a
//! held-out test split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::{seconds_to_days, BudgetModel, BudgetStrategy, CampaignPlan};
use crate::error::{Error, Result};
use crate::mask::ImagePrediction;
use crate::metrics::{mae_iou, mean_ap};
use crate::regressor::{
    extract_features, predict_iou, train, ImageContext, RegressorModel, Sample, TargetTransform,
    TrainingPhase, TrainingSchedule,
};
use crate::selection::{select_random, ScoredPool, SelectionConfig, Strategy};
use crate::simulator::{
    generate_dataset, oracle_scores, prediction_ious, segment, BinCounts, BinSpec, NoiseModel,
    SkillLaw, SurrogateSegmenter, SyntheticDataset, SyntheticImage, WorldConfig,
};
use crate::{seed, ImageId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    Oracle,
    Predicted,
}

impl ScoreSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreSource::Oracle => "oracle",
            ScoreSource::Predicted => "predicted",
        }
    }
}

/// How the generated images are split: ids `[0, strong_pool)` form the
/// strong pool, the next `weak_pool` ids the weak pool, the rest the test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub strong_pool: usize,
    pub weak_pool: usize,
    pub test: usize,
}

impl Splits {
    pub fn total(&self) -> usize {
        self.strong_pool + self.weak_pool + self.test
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub schedule: TrainingSchedule,
    pub transform: TargetTransform,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig {
            schedule: TrainingSchedule::default(),
            transform: TargetTransform::Sqrt,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub law: SkillLaw,
    pub noise: NoiseModel,
}

fn default_n_initial() -> usize {
    100
}

fn default_num_seeds() -> usize {
    5
}

fn default_weak_fraction() -> f64 {
    1.0
}

fn default_iou_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub splits: Splits,
    #[serde(default = "default_n_initial")]
    pub n_initial: usize,
    pub n_total: usize,
    /// `n_prime` is overwritten with `n_total - n_initial`.
    pub selection: SelectionConfig,
    pub score_source: ScoreSource,
    #[serde(default = "default_weak_fraction")]
    pub weak_fraction: f64,
    #[serde(default = "default_num_seeds")]
    pub num_seeds: usize,
    /// Base seed of the run seeds; the world has its own seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub regressor: RegressorConfig,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    #[serde(default)]
    pub budget: BudgetModel,
    #[serde(default = "default_iou_threshold")]
    pub iou_threshold: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_prime(&self) -> usize {
        self.n_total.saturating_sub(self.n_initial)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.surrogate.law.validate()?;
        self.surrogate.noise.validate()?;
        self.regressor.schedule.validate()?;
        if self.world.num_images != self.splits.total() {
            return Err(Error::Config(format!(
                "world has {} images but splits need {}",
                self.world.num_images,
                self.splits.total()
            )));
        }
        if self.splits.test == 0 {
            return Err(Error::Config("test split is empty".into()));
        }
        if self.n_initial == 0
            || self.n_initial > self.n_total
            || self.n_total > self.splits.strong_pool
        {
            return Err(Error::Config(format!(
                "need 0 < n_initial ({}) <= n_total ({}) <= strong pool ({})",
                self.n_initial, self.n_total, self.splits.strong_pool
            )));
        }
        if !(0.0..=1.0).contains(&self.weak_fraction) {
            return Err(Error::Config(format!(
                "weak_fraction {} outside [0, 1]",
                self.weak_fraction
            )));
        }
        if self.num_seeds == 0 {
            return Err(Error::Config("num_seeds must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.selection.beta) {
            return Err(Error::Config(format!(
                "beta {} outside [0, 1]",
                self.selection.beta
            )));
        }
        Ok(())
    }

    pub fn beta(&self) -> Option<f64> {
        (self.selection.strategy == Strategy::BetaProximity).then_some(self.selection.beta)
    }
}

/// Generated images plus the split id lists.
#[derive(Debug, Clone)]
pub struct World {
    pub dataset: SyntheticDataset,
    pub bins: BinSpec,
    pub strong_pool: Vec<ImageId>,
    pub weak_pool: Vec<ImageId>,
    pub test: Vec<ImageId>,
}

impl World {
    pub fn build(world: &WorldConfig, splits: &Splits) -> Result<Self> {
        if world.num_images != splits.total() {
            return Err(Error::Config("world size does not match splits".into()));
        }
        let dataset = generate_dataset(world)?;
        let ids = |lo: usize, hi: usize| (lo as u64..hi as u64).map(ImageId).collect::<Vec<_>>();
        let a = splits.strong_pool;
        let b = a + splits.weak_pool;
        Ok(World {
            bins: BinSpec::for_world(world),
            strong_pool: ids(0, a),
            weak_pool: ids(a, b),
            test: ids(b, splits.total()),
            dataset,
        })
    }

    pub fn images(&self, ids: &[ImageId]) -> Result<Vec<&SyntheticImage>> {
        ids.iter()
            .map(|&id| {
                self.dataset
                    .image(id)
                    .ok_or_else(|| Error::InvalidValue(format!("unknown image id {id}")))
            })
            .collect()
    }
}

/// The annotation network of one stage: segmenter plus IoU regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationModel {
    pub segmenter: SurrogateSegmenter,
    pub regressor: RegressorModel,
}

/// (features, achieved IoU) pairs for every surviving prediction.
pub fn regressor_samples(
    segmenter: &SurrogateSegmenter,
    images: &[&SyntheticImage],
) -> Result<Vec<Sample>> {
    let per_image = images
        .par_iter()
        .map(|im| {
            let pred = segment(segmenter, im);
            let ious = prediction_ious(&pred, im)?;
            let ctx = ImageContext::from_predictions(im.stats.n_objects, &pred.instances);
            pred.instances
                .iter()
                .zip(ious)
                .map(|(p, v)| Ok((extract_features(&ctx, p)?, v)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

const JOINT_CHECKPOINTS: usize = 5;

/// Regressor training data under a schedule. With the frozen schedule all
/// samples come from the converged segmenter; with joint training they come
/// from evenly spaced checkpoints of the segmenter while it converges.
pub fn schedule_samples(
    segmenter: &SurrogateSegmenter,
    law: &SkillLaw,
    schedule: &TrainingSchedule,
    images: &[&SyntheticImage],
) -> Result<Vec<Sample>> {
    match schedule.phase {
        TrainingPhase::FrozenThenIou => regressor_samples(segmenter, images),
        TrainingPhase::Joint => {
            let total = schedule.regressor_epochs() as f64;
            let mut out = Vec::new();
            for j in 1..=JOINT_CHECKPOINTS {
                let epoch = total * j as f64 / JOINT_CHECKPOINTS as f64;
                let progress = epoch / schedule.segmentation_phase_epochs as f64;
                let mut snap = segmenter.snapshot(law.s_min, progress);
                snap.noise_seed = seed::derive(segmenter.noise_seed, "checkpoint", &[j as u64]);
                out.extend(regressor_samples(&snap, images)?);
            }
            Ok(out)
        }
    }
}

/// Trains the annotation segmenter on the strong set, then its IoU regressor
/// on the segmenter's own predictions of that set.
pub fn run_annotation_stage(
    world: &World,
    config: &ExperimentConfig,
    strong_ids: &[ImageId],
    stage_seed: u64,
) -> Result<AnnotationModel> {
    if strong_ids.is_empty() {
        return Err(Error::Empty("strong set"));
    }
    let pool: BTreeSet<ImageId> = world.strong_pool.iter().copied().collect();
    if let Some(id) = strong_ids.iter().find(|id| !pool.contains(id)) {
        return Err(Error::InvalidValue(format!(
            "image {id} is not in the strong pool"
        )));
    }
    let images = world.images(strong_ids)?;
    let law = &config.surrogate.law;
    let segmenter = crate::simulator::train_surrogate(
        &images,
        law,
        world.bins,
        config.surrogate.noise,
        seed::derive(stage_seed, "segmenter", &[]),
    )?;
    let schedule = TrainingSchedule {
        seed: seed::derive(stage_seed, "regressor", &[]),
        ..config.regressor.schedule
    };
    let mut sample_source = segmenter.clone();
    sample_source.noise_seed = seed::derive(stage_seed, "regressor_samples", &[]);
    let samples = schedule_samples(&sample_source, law, &schedule, &images)?;
    let regressor = if samples.is_empty() {
        RegressorModel::zeros(config.regressor.transform)
    } else {
        train(&samples, &schedule, config.regressor.transform)?.model
    };
    Ok(AnnotationModel {
        segmenter,
        regressor,
    })
}

/// Pseudo-labels and per-image scores for a pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub predictions: Vec<ImagePrediction>,
    pub oracle: ScoredPool,
    pub predicted: ScoredPool,
}

impl PseudoLabels {
    pub fn scores(&self, source: ScoreSource) -> &ScoredPool {
        match source {
            ScoreSource::Oracle => &self.oracle,
            ScoreSource::Predicted => &self.predicted,
        }
    }
}

/// Mean predicted IoU per image; 0 when nothing survived.
fn predicted_scores(
    predictions: &mut [ImagePrediction],
    images: &[&SyntheticImage],
    regressor: &RegressorModel,
) -> Result<ScoredPool> {
    let mut entries = BTreeMap::new();
    for (pred, im) in predictions.iter_mut().zip(images) {
        let ctx = ImageContext::from_predictions(im.stats.n_objects, &pred.instances);
        let mut total = 0.0;
        for inst in pred.instances.iter_mut() {
            let v = predict_iou(regressor, &extract_features(&ctx, inst)?)?;
            inst.predicted_iou = Some(v);
            total += v;
        }
        let score = if pred.instances.is_empty() {
            0.0
        } else {
            total / pred.instances.len() as f64
        };
        entries.insert(pred.image_id, score);
    }
    ScoredPool::new(entries)
}

/// Segments the pool with the annotation model and scores every image both
/// ways. `score_source` only decides which score becomes the pseudo-label
/// weight downstream; both are returned.
pub fn pseudo_annotate(
    world: &World,
    model: &AnnotationModel,
    pool_ids: &[ImageId],
    strong_ids: &[ImageId],
) -> Result<PseudoLabels> {
    let strong: BTreeSet<ImageId> = strong_ids.iter().copied().collect();
    if let Some(id) = pool_ids.iter().find(|id| strong.contains(id)) {
        return Err(Error::InvalidValue(format!(
            "pool image {id} is already strongly annotated"
        )));
    }
    let images = world.images(pool_ids)?;
    let mut predictions: Vec<ImagePrediction> = images
        .par_iter()
        .map(|im| segment(&model.segmenter, im))
        .collect();
    let oracle = oracle_scores(&predictions, &images)?;
    let predicted = predicted_scores(&mut predictions, &images, &model.regressor)?;
    Ok(PseudoLabels {
        predictions,
        oracle,
        predicted,
    })
}

/// Bin counts of the strong set plus pseudo instances weighted by their
/// image score.
pub fn segmentation_counts(
    world: &World,
    strong_ids: &[ImageId],
    pseudo: &PseudoLabels,
    source: ScoreSource,
) -> Result<BinCounts> {
    let strong: BTreeSet<ImageId> = strong_ids.iter().copied().collect();
    if let Some(p) = pseudo
        .predictions
        .iter()
        .find(|p| strong.contains(&p.image_id))
    {
        return Err(Error::InvalidValue(format!(
            "image {} is both strong and pseudo-labelled",
            p.image_id
        )));
    }
    if strong_ids.is_empty() && pseudo.predictions.is_empty() {
        return Err(Error::Empty("segmentation training set"));
    }
    let mut counts = BinCounts::default();
    for im in world.images(strong_ids)? {
        counts.add_image(&world.bins, im);
    }
    let scores = pseudo.scores(source).entries();
    for pred in &pseudo.predictions {
        let im = world.images(&[pred.image_id])?[0];
        let weight = scores.get(&pred.image_id).copied().unwrap_or(0.0);
        counts.add_instances(
            &world.bins,
            im.stats.n_objects,
            pred.instances.iter().map(|i| &i.mask),
            weight,
        );
    }
    Ok(counts)
}

/// Trains the segmentation surrogate on strong plus weighted pseudo labels.
pub fn run_segmentation_stage(
    world: &World,
    config: &ExperimentConfig,
    strong_ids: &[ImageId],
    pseudo: &PseudoLabels,
    noise_seed: u64,
) -> Result<SurrogateSegmenter> {
    let counts = segmentation_counts(world, strong_ids, pseudo, config.score_source)?;
    Ok(SurrogateSegmenter::from_counts(
        &counts,
        &config.surrogate.law,
        world.bins,
        config.surrogate.noise,
        noise_seed,
    ))
}

/// Mean AP of a segmenter on the given images.
pub fn evaluate_ap(
    world: &World,
    segmenter: &SurrogateSegmenter,
    ids: &[ImageId],
    iou_threshold: f64,
) -> Result<f64> {
    let images = world.images(ids)?;
    let predictions: Vec<ImagePrediction> =
        images.par_iter().map(|im| segment(segmenter, im)).collect();
    let preds: BTreeMap<ImageId, Vec<_>> = predictions
        .into_iter()
        .map(|p| (p.image_id, p.instances))
        .collect();
    let truths: BTreeMap<ImageId, Vec<_>> = images
        .iter()
        .map(|im| (im.image_id, im.instances.clone()))
        .collect();
    Ok(mean_ap(&preds, &truths, iou_threshold)?.mean_ap)
}

/// Regressor MAE (percentage points) of predicted against oracle image
/// scores on the given images.
pub fn evaluate_score_mae(world: &World, model: &AnnotationModel, ids: &[ImageId]) -> Result<f64> {
    let labels = pseudo_annotate(world, model, ids, &[])?;
    mae_iou(labels.predicted.entries(), labels.oracle.entries())
}

/// Outcome of one run seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed_index: usize,
    pub bootstrap: Vec<ImageId>,
    pub selected: Vec<ImageId>,
    /// AP at the configured threshold, in percent.
    pub ap_annotation: f64,
    pub ap_segmentation: f64,
    pub mae_pp: f64,
    pub plan: CampaignPlan,
    pub budget_strategy: BudgetStrategy,
    pub budget_seconds: f64,
}

impl SeedResult {
    pub fn budget_days(&self) -> f64 {
        seconds_to_days(self.budget_seconds)
    }

    pub fn strong_ids(&self) -> Vec<ImageId> {
        let mut v: Vec<ImageId> = self
            .bootstrap
            .iter()
            .chain(&self.selected)
            .copied()
            .collect();
        v.sort();
        v
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Summary {
    pub ap_annotation: f64,
    pub ap_segmentation: f64,
    pub mae_pp: f64,
    pub budget_days: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub n_total: usize,
    pub beta: Option<f64>,
    pub score_source: ScoreSource,
    pub per_seed: Vec<SeedResult>,
    pub mean: Summary,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std: Summary,
}

fn summarize(rows: &[SeedResult]) -> (Summary, Summary) {
    let n = rows.len() as f64;
    let col = |f: &dyn Fn(&SeedResult) -> f64| -> (f64, f64) {
        let mean = rows.iter().map(f).sum::<f64>() / n;
        let var = if rows.len() > 1 {
            rows.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, var.sqrt())
    };
    let (a_m, a_s) = col(&|r| r.ap_annotation);
    let (s_m, s_s) = col(&|r| r.ap_segmentation);
    let (m_m, m_s) = col(&|r| r.mae_pp);
    let (b_m, b_s) = col(&|r| r.budget_days());
    (
        Summary {
            ap_annotation: a_m,
            ap_segmentation: s_m,
            mae_pp: m_m,
            budget_days: b_m,
        },
        Summary {
            ap_annotation: a_s,
            ap_segmentation: s_s,
            mae_pp: m_s,
            budget_days: b_s,
        },
    )
}

pub const REPORT_CSV_HEADER: &str =
    "seed,stage,n_total,beta,score_source,ap_annotation,ap_segmentation,mae_pp,budget_days";

impl ExperimentReport {
    fn beta_str(&self) -> String {
        self.beta.map(|b| format!("{b:.2}")).unwrap_or_default()
    }

    fn row(&self, seed: &str, stage: &str, s: &Summary) -> String {
        format!(
            "{seed},{stage},{},{},{},{:.4},{:.4},{:.4},{:.2}",
            self.n_total,
            self.beta_str(),
            self.score_source.as_str(),
            s.ap_annotation,
            s.ap_segmentation,
            s.mae_pp,
            s.budget_days
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for r in &self.per_seed {
            let s = Summary {
                ap_annotation: r.ap_annotation,
                ap_segmentation: r.ap_segmentation,
                mae_pp: r.mae_pp,
                budget_days: r.budget_days(),
            };
            let _ = writeln!(out, "{}", self.row(&r.seed_index.to_string(), "seed", &s));
        }
        let _ = writeln!(out, "{}", self.row("all", "mean", &self.mean));
        let _ = writeln!(out, "{}", self.row("all", "std", &self.std));
        out
    }

    /// Selected (non-bootstrap) images pooled over seeds.
    pub fn selections(&self) -> Vec<ImageId> {
        self.per_seed
            .iter()
            .flat_map(|r| r.selected.iter().copied())
            .collect()
    }
}

pub const SWEEP_CSV_HEADER: &str =
    "n_total,beta,score_source,ap_annotation_mean,ap_annotation_std,\
ap_segmentation_mean,ap_segmentation_std,mae_pp_mean,mae_pp_std,budget_days";

/// One line per report: mean and standard deviation of each column.
pub fn sweep_csv(reports: &[ExperimentReport]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.2}",
            r.n_total,
            r.beta_str(),
            r.score_source.as_str(),
            r.mean.ap_annotation,
            r.std.ap_annotation,
            r.mean.ap_segmentation,
            r.std.ap_segmentation,
            r.mean.mae_pp,
            r.std.mae_pp,
            r.mean.budget_days
        );
    }
    out
}

/// Seed of run `k`.
pub fn run_seed(base: u64, k: usize) -> u64 {
    seed::derive(base, "run", &[k as u64])
}

/// Random bootstrap of seed `seed_index` and the stage-one labels of the
/// rest of the strong pool. Independent of the selection settings.
pub fn bootstrap_round(
    world: &World,
    config: &ExperimentConfig,
    seed_index: usize,
) -> Result<(Vec<ImageId>, PseudoLabels)> {
    let rs = run_seed(config.seed, seed_index);
    let bootstrap = select_random(
        &world.strong_pool,
        config.n_initial,
        seed::derive(rs, "bootstrap", &[]),
    )?;
    let stage1 = run_annotation_stage(world, config, &bootstrap, seed::derive(rs, "stage1", &[]))?;
    let taken: BTreeSet<ImageId> = bootstrap.iter().copied().collect();
    let pool: Vec<ImageId> = world
        .strong_pool
        .iter()
        .copied()
        .filter(|id| !taken.contains(id))
        .collect();
    let labels = pseudo_annotate(world, &stage1, &pool, &bootstrap)?;
    Ok((bootstrap, labels))
}

/// The `N'` images a seed's selection picks from its stage-one labels.
pub fn select_from_labels(
    config: &ExperimentConfig,
    seed_index: usize,
    labels: &PseudoLabels,
    source: ScoreSource,
) -> Result<Vec<ImageId>> {
    let selection = SelectionConfig {
        n_prime: config.n_prime(),
        seed: seed::derive(run_seed(config.seed, seed_index), "select", &[]),
        ..config.selection
    };
    selection.select(labels.scores(source))
}

/// Bootstrap and selected ids of one seed.
pub fn select_strong_set(
    world: &World,
    config: &ExperimentConfig,
    seed_index: usize,
) -> Result<(Vec<ImageId>, Vec<ImageId>)> {
    if config.n_prime() == 0 {
        let rs = run_seed(config.seed, seed_index);
        let bootstrap = select_random(
            &world.strong_pool,
            config.n_initial,
            seed::derive(rs, "bootstrap", &[]),
        )?;
        return Ok((bootstrap, Vec::new()));
    }
    let (bootstrap, labels) = bootstrap_round(world, config, seed_index)?;
    let selected = select_from_labels(config, seed_index, &labels, config.score_source)?;
    Ok((bootstrap, selected))
}

/// Selections of every seed at each beta (and for random selection first),
/// summarized per row. Stage-one labels are shared across the grid.
pub fn analyze_betas(
    world: &World,
    config: &ExperimentConfig,
    betas: &[f64],
) -> Result<SelectionAnalysis> {
    config.validate()?;
    if config.n_prime() == 0 {
        return Err(Error::Config(
            "nothing to select when n_total equals n_initial".into(),
        ));
    }
    let labels = (0..config.num_seeds)
        .into_par_iter()
        .map(|k| bootstrap_round(world, config, k).map(|(_, l)| l))
        .collect::<Result<Vec<_>>>()?;
    let mut grid: Vec<(Option<f64>, SelectionConfig)> = vec![(
        None,
        SelectionConfig {
            strategy: Strategy::Random,
            ..config.selection
        },
    )];
    for &b in betas {
        grid.push((
            Some(b),
            SelectionConfig {
                strategy: Strategy::BetaProximity,
                beta: b,
                ..config.selection
            },
        ));
    }
    let mut selections = Vec::with_capacity(grid.len());
    for (beta, sel) in grid {
        let c = ExperimentConfig {
            selection: sel,
            ..config.clone()
        };
        let mut ids = Vec::new();
        for (k, l) in labels.iter().enumerate() {
            ids.extend(select_from_labels(&c, k, l, config.score_source)?);
        }
        selections.push((beta, ids));
    }
    analyze_selection(&world.dataset, &selections)
}

/// Per-seed Jaccard overlap of oracle-score and predicted-score selections
/// at the configured beta.
pub fn score_source_overlap(world: &World, config: &ExperimentConfig) -> Result<Vec<f64>> {
    config.validate()?;
    (0..config.num_seeds)
        .into_par_iter()
        .map(|k| {
            let (_, labels) = bootstrap_round(world, config, k)?;
            let a = select_from_labels(config, k, &labels, ScoreSource::Oracle)?;
            let b = select_from_labels(config, k, &labels, ScoreSource::Predicted)?;
            Ok(crate::selection::jaccard(&a, &b))
        })
        .collect()
}

fn run_seed_once(
    world: &World,
    config: &ExperimentConfig,
    seed_index: usize,
) -> Result<SeedResult> {
    let rs = run_seed(config.seed, seed_index);
    let (bootstrap, selected) = select_strong_set(world, config, seed_index)?;
    let mut strong: Vec<ImageId> = bootstrap.iter().chain(&selected).copied().collect();
    strong.sort();

    let annotation = run_annotation_stage(world, config, &strong, seed::derive(rs, "stage2", &[]))?;
    let n_weak = (config.weak_fraction * world.weak_pool.len() as f64).round() as usize;
    let weak = &world.weak_pool[..n_weak];
    let pseudo = pseudo_annotate(world, &annotation, weak, &strong)?;
    let segmentation = run_segmentation_stage(
        world,
        config,
        &strong,
        &pseudo,
        seed::derive(rs, "g_phi", &[]),
    )?;

    let mut test_annotation = annotation.segmenter.clone();
    test_annotation.noise_seed = seed::derive(rs, "test_annotation", &[]);
    let ap_annotation =
        100.0 * evaluate_ap(world, &test_annotation, &world.test, config.iou_threshold)?;
    let ap_segmentation =
        100.0 * evaluate_ap(world, &segmentation, &world.test, config.iou_threshold)?;
    let mae_pp = evaluate_score_mae(
        world,
        &AnnotationModel {
            segmenter: test_annotation,
            regressor: annotation.regressor.clone(),
        },
        &world.test,
    )?;

    let mask_guided = config.selection.strategy == Strategy::BetaProximity && !selected.is_empty();
    let (budget_strategy, selection_pool) = if mask_guided {
        (BudgetStrategy::MaskGuided, world.strong_pool.len() as u64)
    } else {
        (BudgetStrategy::Random, 0)
    };
    let plan = CampaignPlan {
        n_strong: strong.len() as u64,
        selection_pool,
        n_weak: n_weak as u64,
    };
    let budget_seconds = config.budget.campaign_cost(&plan, budget_strategy)?;
    Ok(SeedResult {
        seed_index,
        bootstrap,
        selected,
        ap_annotation,
        ap_segmentation,
        mae_pp,
        plan,
        budget_strategy,
        budget_seconds,
    })
}

/// Runs every seed on an already generated world.
pub fn run_experiment_in(world: &World, config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let per_seed = (0..config.num_seeds)
        .into_par_iter()
        .map(|k| run_seed_once(world, config, k))
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = summarize(&per_seed);
    Ok(ExperimentReport {
        n_total: config.n_total,
        beta: config.beta(),
        score_source: config.score_source,
        per_seed,
        mean,
        std,
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let world = World::build(&config.world, &config.splits)?;
    run_experiment_in(&world, config)
}

/// Beta-proximity runs over a grid, optionally preceded by a random baseline.
pub fn run_sweep_in(
    world: &World,
    config: &ExperimentConfig,
    betas: &[f64],
    with_random: bool,
) -> Result<Vec<ExperimentReport>> {
    let mut configs = Vec::new();
    if with_random {
        let mut c = config.clone();
        c.selection.strategy = Strategy::Random;
        configs.push(c);
    }
    for &b in betas {
        let mut c = config.clone();
        c.selection.strategy = Strategy::BetaProximity;
        c.selection.beta = b;
        configs.push(c);
    }
    configs
        .iter()
        .map(|c| run_experiment_in(world, c))
        .collect()
}

/// Parses `start:stop:step` (inclusive stop) or a comma-separated list.
pub fn parse_beta_grid(grid: &str) -> Result<Vec<f64>> {
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("beta '{s}': {e}")))
    };
    let betas: Vec<f64> = if grid.contains(':') {
        let parts: Vec<&str> = grid.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!(
                "expected start:stop:step, got '{grid}'"
            )));
        }
        let (start, stop, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
        if step.is_nan() || step <= 0.0 || stop < start {
            return Err(Error::Parse(format!("empty beta grid '{grid}'")));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        // snap to the step's decimal grid so 0.1 * 3 prints as 0.3
        (0..=n)
            .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
            .collect()
    } else {
        grid.split(',').map(parse).collect::<Result<_>>()?
    };
    if let Some(b) = betas.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(Error::Parse(format!("beta {b} outside [0, 1]")));
    }
    Ok(betas)
}

/// Mean object count and object size of each selected set.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionAnalysis {
    pub rows: Vec<AnalysisRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRow {
    /// `None` for random selection.
    pub beta: Option<f64>,
    pub n_selected: usize,
    pub mean_objects: f64,
    pub mean_area_fraction: f64,
}

pub fn analyze_selection(
    dataset: &SyntheticDataset,
    selections: &[(Option<f64>, Vec<ImageId>)],
) -> Result<SelectionAnalysis> {
    if selections.is_empty() {
        return Err(Error::Empty("no selections to analyze"));
    }
    let mut rows = Vec::with_capacity(selections.len());
    for (beta, ids) in selections {
        if ids.is_empty() {
            return Err(Error::Empty("selection is empty"));
        }
        let mut objects = 0.0;
        let mut area = 0.0;
        for id in ids {
            let im = dataset
                .image(*id)
                .ok_or_else(|| Error::InvalidValue(format!("unknown image id {id}")))?;
            objects += im.stats.n_objects as f64;
            area += im.stats.mean_area_fraction;
        }
        let n = ids.len() as f64;
        rows.push(AnalysisRow {
            beta: *beta,
            n_selected: ids.len(),
            mean_objects: objects / n,
            mean_area_fraction: area / n,
        });
    }
    Ok(SelectionAnalysis { rows })
}

impl SelectionAnalysis {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("selection,beta,n_selected,mean_objects,mean_area_fraction\n");
        for r in &self.rows {
            let (kind, beta) = match r.beta {
                Some(b) => ("beta", format!("{b:.2}")),
                None => ("random", String::new()),
            };
            let _ = writeln!(
                out,
                "{kind},{beta},{},{:.4},{:.6}",
                r.n_selected, r.mean_objects, r.mean_area_fraction
            );
        }
        out
    }
}
