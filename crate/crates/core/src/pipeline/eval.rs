//! Model-versus-baseline evaluation over a dataset split.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::PreparedSample;
use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::metrics::{
    curve, default_angle_thresholds, default_distance_thresholds, normal_angles, normalized_l2_percent,
    vertex_distances, write_curve_csv, Curve,
};
use crate::model::Model;

pub const REPORT_FILE: &str = "eval_report.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    /// Mean vertex distance, meters.
    pub e_dist: f64,
    /// Mean facet-normal angle, degrees.
    pub e_norm: f64,
    pub normalized_l2_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub id: String,
    pub model: Scores,
    pub baseline: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub distance: Curve,
    pub normal: Curve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub split: String,
    pub samples: Vec<SampleScores>,
    /// Means of the per-sample scores.
    pub model: Scores,
    pub baseline: Scores,
    /// Precision curves over every vertex (distance) and facet (normal) of the split.
    pub model_curves: CurveSet,
    pub baseline_curves: CurveSet,
}

struct Errors {
    scores: Scores,
    distances: Vec<f64>,
    angles: Vec<f64>,
}

fn errors(pred: &TriMesh, gt: &TriMesh) -> Result<Errors> {
    let distances = vertex_distances(pred, gt)?;
    let angles = normal_angles(pred, gt)?;
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(Errors {
        scores: Scores {
            e_dist: mean(&distances),
            e_norm: mean(&angles),
            normalized_l2_percent: normalized_l2_percent(pred, gt)?,
        },
        distances,
        angles,
    })
}

fn mean_scores(all: &[Scores]) -> Scores {
    let n = all.len().max(1) as f64;
    Scores {
        e_dist: all.iter().map(|s| s.e_dist).sum::<f64>() / n,
        e_norm: all.iter().map(|s| s.e_norm).sum::<f64>() / n,
        normalized_l2_percent: all.iter().map(|s| s.normalized_l2_percent).sum::<f64>() / n,
    }
}

fn pooled_curves(errs: &[&Errors]) -> CurveSet {
    let d: Vec<f64> = errs.iter().flat_map(|e| e.distances.iter().copied()).collect();
    let a: Vec<f64> = errs.iter().flat_map(|e| e.angles.iter().copied()).collect();
    CurveSet {
        distance: curve(&d, &default_distance_thresholds()),
        normal: curve(&a, &default_angle_thresholds()),
    }
}

/// Scores precomputed predictions against their ground truth, alongside the
/// skinned-garment baseline.
pub fn evaluate_predictions(
    split: &str,
    ids: &[String],
    preds: &[TriMesh],
    samples: &[PreparedSample],
) -> Result<EvaluationReport> {
    if ids.len() != samples.len() || preds.len() != samples.len() {
        return Err(Error::CountMismatch(samples.len(), preds.len()));
    }
    let per: Vec<(Errors, Errors)> = preds
        .par_iter()
        .zip(samples.par_iter())
        .map(|(p, s)| Ok((errors(p, s.gt())?, errors(&s.skinned, s.gt())?)))
        .collect::<Result<_>>()?;
    let model_scores: Vec<Scores> = per.iter().map(|(m, _)| m.scores).collect();
    let base_scores: Vec<Scores> = per.iter().map(|(_, b)| b.scores).collect();
    Ok(EvaluationReport {
        split: split.to_string(),
        samples: ids
            .iter()
            .zip(&per)
            .map(|(id, (m, b))| SampleScores {
                id: id.clone(),
                model: m.scores,
                baseline: b.scores,
            })
            .collect(),
        model: mean_scores(&model_scores),
        baseline: mean_scores(&base_scores),
        model_curves: pooled_curves(&per.iter().map(|(m, _)| m).collect::<Vec<_>>()),
        baseline_curves: pooled_curves(&per.iter().map(|(_, b)| b).collect::<Vec<_>>()),
    })
}

/// Runs the model on every sample and scores it.
pub fn evaluate(model: &Model, split: &str, ids: &[String], samples: &[PreparedSample]) -> Result<EvaluationReport> {
    let preds: Vec<TriMesh> = samples.par_iter().map(|s| model.run(&s.input)).collect::<Result<_>>()?;
    evaluate_predictions(split, ids, &preds, samples)
}

impl EvaluationReport {
    /// Writes the JSON report and four CSV curves into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let path = dir.join(REPORT_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        write_curve_csv(dir.join("model_distance_curve.csv"), &self.model_curves.distance)?;
        write_curve_csv(dir.join("model_normal_curve.csv"), &self.model_curves.normal)?;
        write_curve_csv(dir.join("baseline_distance_curve.csv"), &self.baseline_curves.distance)?;
        write_curve_csv(dir.join("baseline_normal_curve.csv"), &self.baseline_curves.normal)?;
        Ok(())
    }
}
