//! Effect of the entropy-model scale lower bound during joint training.
//!
//! Each grid point trains a linear system under an annealed smooth forward
//! with the swept bound in place, then post-trains with a tiny bound and
//! evaluates the rounded loss. Seed streams are keyed by the lambda index
//! alone, so two bounds lying below the scale trajectory produce bitwise
//! identical rows and sweeps differ only where the bound actually binds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::LabError;
use crate::table::ResultTable;
use quantlab_core::backward::GradRule;
use quantlab_core::entropy_model::Family;
use quantlab_core::numerics::Seed;
use quantlab_core::sources::Gaussian1D;
use quantlab_core::surrogates::{AnnealSchedule, SurrogateSpec};
use quantlab_core::tinynet::{
    post_train, softplus, train_joint, true_loss, JointSystem, RdSource, TinynetError, TrainConfig,
    TransformKind,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Scale lower bounds applied during joint training.
    pub floors: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub alpha_start: f64,
    pub alpha_max: f64,
    pub steps: usize,
    pub post_steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Scale lower bound during post-training.
    pub post_floor: f64,
    pub n_eval: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            floors: vec![1e-6, 0.05, 0.11, 0.16, 0.25],
            lambda_grid: vec![1.0, 2.0],
            alpha_start: 2.0,
            alpha_max: 25.0,
            steps: 6000,
            post_steps: 4000,
            batch: 64,
            learning_rate: 1e-3,
            post_floor: 1e-6,
            n_eval: 100_000,
        }
    }
}

struct Point {
    lambda: f64,
    floor: f64,
    /// Lambda index; keys every seed stream.
    li: u64,
}

pub fn run(p: &Params, seed: u64, resolved: &str) -> Result<ResultTable, LabError> {
    if p.floors.is_empty() || p.lambda_grid.is_empty() {
        return Err(LabError::Config("floors and lambda_grid must be nonempty".to_string()));
    }
    let anneal = AnnealSchedule::new(p.alpha_start, p.alpha_max, p.steps)
        .map_err(|e| LabError::Config(e.to_string()))?;
    let forward = SurrogateSpec::sua(p.alpha_start).map_err(|e| LabError::Config(e.to_string()))?;
    let points: Vec<Point> = p
        .lambda_grid
        .iter()
        .enumerate()
        .flat_map(|(li, &lambda)| {
            p.floors.iter().map(move |&floor| Point { lambda, floor, li: li as u64 })
        })
        .collect();
    let evals: Vec<Result<(quantlab_core::tinynet::TrueLoss, f64, i64), LabError>> = points
        .par_iter()
        .map(|pt| {
            let source = RdSource::Gaussian(Gaussian1D::new(0.0, 1.0)?);
            let mut sys = JointSystem::new(
                TransformKind::Linear,
                Family::Gaussian,
                pt.floor,
                Seed::new(seed).stream(10_000 + pt.li),
            )?;
            let cfg = TrainConfig {
                steps: p.steps,
                batch: p.batch,
                learning_rate: p.learning_rate,
                lambda: pt.lambda,
                anneal: Some(anneal),
                seed: Seed::new(seed).stream(20_000 + pt.li),
                stop_gradient_mu: false,
            };
            let mut converged = 1i64;
            match train_joint(&mut sys, &forward, GradRule::Pge, &source, &cfg) {
                Ok(_) => {}
                Err(TinynetError::NonConvergence(_)) => converged = 0,
                Err(e) => return Err(e.into()),
            }
            let joint_scale = softplus(sys.model_theta);
            let post_cfg = TrainConfig {
                steps: p.post_steps,
                anneal: None,
                seed: Seed::new(seed).stream(30_000 + pt.li),
                ..cfg
            };
            match post_train(&mut sys, &source, &post_cfg, p.post_floor) {
                Ok(_) => {}
                Err(TinynetError::NonConvergence(_)) => converged = 0,
                Err(e) => return Err(e.into()),
            }
            let tl = true_loss(
                &sys,
                &source,
                pt.lambda,
                p.n_eval,
                Seed::new(seed).stream(40_000 + pt.li),
            )?;
            Ok((tl, joint_scale, converged))
        })
        .collect();
    let mut table = ResultTable::new(
        "lower-bound-sweep",
        seed,
        resolved,
        &["lambda", "sigma0", "loss", "loss_se", "rate_bits", "mse", "joint_scale", "converged"],
    );
    for (pt, ev) in points.iter().zip(evals) {
        let (tl, joint_scale, converged) = ev?;
        table.push_row(vec![
            pt.lambda.into(),
            pt.floor.into(),
            tl.loss.into(),
            tl.loss_se.into(),
            tl.rate_bits.into(),
            tl.mse.into(),
            joint_scale.into(),
            converged.into(),
        ])?;
    }
    Ok(table)
}
