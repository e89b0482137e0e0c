//! Annotation-cost model and campaign budgets.
//!
//! Per-image costs are kept as integer centiseconds so campaign totals are
//! exact; conversion to days happens only for presentation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Supervision {
    /// Image-level class labels.
    #[serde(rename = "IL")]
    ImageLevel,
    /// Image-level labels plus per-class instance counts.
    #[serde(rename = "IL+C")]
    ImageLevelCounts,
    /// Full instance masks.
    #[serde(rename = "Full")]
    Full,
    /// Bounding boxes.
    #[serde(rename = "BB")]
    BoundingBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetStrategy {
    Random,
    MaskGuided,
}

impl BudgetStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            BudgetStrategy::Random => "random",
            BudgetStrategy::MaskGuided => "mask_guided",
        }
    }
}

/// Per-image annotation costs in centiseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetModel {
    pub image_level_cs: u64,
    pub image_level_counts_cs: u64,
    pub full_cs: u64,
    pub bounding_box_cs: u64,
}

impl Default for BudgetModel {
    /// Pascal VOC figures: 20 s, 22.22 s, 239.7 s and 38.1 s per image.
    fn default() -> Self {
        BudgetModel {
            image_level_cs: 2_000,
            image_level_counts_cs: 2_222,
            full_cs: 23_970,
            bounding_box_cs: 3_810,
        }
    }
}

fn to_centis(seconds: f64) -> Result<u64> {
    if !(seconds.is_finite() && seconds > 0.0) {
        return Err(Error::InvalidValue(format!(
            "cost {seconds} s must be positive"
        )));
    }
    Ok((seconds * 100.0).round() as u64)
}

impl BudgetModel {
    /// Costs given in seconds per image, rounded to centiseconds.
    pub fn from_seconds(il: f64, ilc: f64, full: f64, bb: f64) -> Result<Self> {
        Ok(BudgetModel {
            image_level_cs: to_centis(il)?,
            image_level_counts_cs: to_centis(ilc)?,
            full_cs: to_centis(full)?,
            bounding_box_cs: to_centis(bb)?,
        })
    }

    pub fn cost_centis(&self, supervision: Supervision) -> u64 {
        match supervision {
            Supervision::ImageLevel => self.image_level_cs,
            Supervision::ImageLevelCounts => self.image_level_counts_cs,
            Supervision::Full => self.full_cs,
            Supervision::BoundingBox => self.bounding_box_cs,
        }
    }

    pub fn cost_per_image(&self, supervision: Supervision) -> f64 {
        self.cost_centis(supervision) as f64 / 100.0
    }

    pub fn campaign_centis(&self, plan: &CampaignPlan, strategy: BudgetStrategy) -> Result<u64> {
        let strong = plan.n_strong * self.full_cs;
        let weak = plan.n_weak * self.image_level_counts_cs;
        match strategy {
            BudgetStrategy::Random => Ok(strong + weak),
            BudgetStrategy::MaskGuided => {
                if plan.selection_pool < plan.n_strong {
                    return Err(Error::InvalidValue(format!(
                        "selection pool {} smaller than strong set {}",
                        plan.selection_pool, plan.n_strong
                    )));
                }
                let overhead = (plan.selection_pool - plan.n_strong) * self.image_level_counts_cs;
                Ok(strong + overhead + weak)
            }
        }
    }

    /// Total annotation time of a campaign in seconds.
    pub fn campaign_cost(&self, plan: &CampaignPlan, strategy: BudgetStrategy) -> Result<f64> {
        Ok(self.campaign_centis(plan, strategy)? as f64 / 100.0)
    }
}

/// Image counts of an annotation campaign.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignPlan {
    pub n_strong: u64,
    /// Images that need IL+C labels to be scored for selection.
    pub selection_pool: u64,
    pub n_weak: u64,
}

impl std::ops::Add for CampaignPlan {
    type Output = CampaignPlan;

    fn add(self, rhs: CampaignPlan) -> CampaignPlan {
        CampaignPlan {
            n_strong: self.n_strong + rhs.n_strong,
            selection_pool: self.selection_pool + rhs.selection_pool,
            n_weak: self.n_weak + rhs.n_weak,
        }
    }
}

pub fn seconds_to_days(seconds: f64) -> f64 {
    seconds / SECONDS_PER_DAY
}

/// One CSV row: strategy, n_strong, pool, n_weak, seconds, days.
pub fn budget_csv_row(
    model: &BudgetModel,
    plan: &CampaignPlan,
    strategy: BudgetStrategy,
) -> Result<String> {
    let centis = model.campaign_centis(plan, strategy)?;
    let seconds = centis as f64 / 100.0;
    Ok(format!(
        "{},{},{},{},{}.{:02},{:.2}",
        strategy.as_str(),
        plan.n_strong,
        plan.selection_pool,
        plan.n_weak,
        centis / 100,
        centis % 100,
        seconds_to_days(seconds)
    ))
}

pub const BUDGET_CSV_HEADER: &str = "strategy,n_strong,pool,n_weak,seconds,days";
