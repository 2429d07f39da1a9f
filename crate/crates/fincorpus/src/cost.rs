//! GPU training-cost arithmetic.
//!
//! Costs are estimated from a cloud instance's hourly price divided across
//! its GPUs. The default rounding mode snaps that per-GPU-hour rate to whole
//! cents (half-up) before multiplying, because the published estimates this
//! module reproduces were computed from the rounded rate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("invalid cost model: {0}")]
    BadModel(String),
    #[error("invalid training run: {0}")]
    BadRun(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// Round the per-GPU-hour rate to cents, half-up, before multiplying.
    Cents,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuCostModel {
    pub instance_hourly_usd: f64,
    pub gpus_per_instance: u32,
    pub rounding: Rounding,
}

impl GpuCostModel {
    pub fn new(instance_hourly_usd: f64, gpus_per_instance: u32, rounding: Rounding) -> Result<Self, CostError> {
        if !instance_hourly_usd.is_finite() || instance_hourly_usd <= 0.0 {
            return Err(CostError::BadModel(format!(
                "instance_hourly_usd {instance_hourly_usd} not a positive number"
            )));
        }
        if gpus_per_instance < 1 {
            return Err(CostError::BadModel("gpus_per_instance must be >= 1".into()));
        }
        Ok(GpuCostModel { instance_hourly_usd, gpus_per_instance, rounding })
    }
}

fn round_half_up_cents(x: f64) -> f64 {
    ((x * 100.0) + 0.5).floor() / 100.0
}

/// Per-GPU-hour rate under the model's rounding mode.
pub fn rate_per_gpu_hour(model: &GpuCostModel) -> f64 {
    let raw = model.instance_hourly_usd / model.gpus_per_instance as f64;
    match model.rounding {
        Rounding::Cents => round_half_up_cents(raw),
        Rounding::Exact => raw,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub name: String,
    pub gpu_count: u64,
    pub duration_hours: f64,
}

impl TrainRun {
    pub fn hours(name: impl Into<String>, gpu_count: u64, hours: f64) -> Result<Self, CostError> {
        if gpu_count < 1 {
            return Err(CostError::BadRun("gpu_count must be >= 1".into()));
        }
        if !hours.is_finite() || hours <= 0.0 {
            return Err(CostError::BadRun(format!("duration {hours} not a positive number")));
        }
        Ok(TrainRun { name: name.into(), gpu_count, duration_hours: hours })
    }

    pub fn days(name: impl Into<String>, gpu_count: u64, days: f64) -> Result<Self, CostError> {
        Self::hours(name, gpu_count, days * 24.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingCost {
    pub gpu_hours: f64,
    pub cost_usd: f64,
}

pub fn training_cost(run: &TrainRun, model: &GpuCostModel) -> TrainingCost {
    let gpu_hours = run.gpu_count as f64 * run.duration_hours;
    TrainingCost { gpu_hours, cost_usd: gpu_hours * rate_per_gpu_hour(model) }
}

/// One row of the reference cost table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub run: TrainRun,
    pub model: GpuCostModel,
    pub cost: TrainingCost,
}

/// Published training-cost estimates for several LLMs, from AWS list
/// prices: p4d.24xlarge ($32.77/h, 8×A100) and p3dn.24xlarge ($31.218/h,
/// 8×V100). The first row is a LoRA fine-tune; the rest are full training
/// runs reported by or estimated for the named models.
pub fn reference_cost_table() -> Vec<CostRow> {
    let a100 = GpuCostModel::new(32.77, 8, Rounding::Cents).expect("valid model");
    let v100 = GpuCostModel::new(31.218, 8, Rounding::Cents).expect("valid model");
    let rows = vec![
        (TrainRun::hours("lora_finetune", 8, 8.0), &a100),
        (TrainRun::days("bloomberggpt", 512, 53.0), &a100),
        (TrainRun::days("chatglm2", 64, 2.5), &v100),
        (TrainRun::hours("gpt_neox", 96, 1830.0), &a100),
        (TrainRun::days("bloom", 384, 105.0), &a100),
        (TrainRun::days("llama", 2048, 21.0), &a100),
    ];
    rows.into_iter()
        .map(|(run, model)| {
            let run = run.expect("valid run");
            let cost = training_cost(&run, model);
            CostRow { run, model: model.clone(), cost }
        })
        .collect()
}

/// Whole cents of a dollar amount, for exact comparisons.
pub fn to_cents(usd: f64) -> i64 {
    (usd * 100.0).round() as i64
}
