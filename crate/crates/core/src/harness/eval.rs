use super::HarnessError;
use crate::affordance::{f1_score, predict_affordance_with, AffordanceDataset, AffordanceModel, Archetype};
use crate::grounding::{mask_iou, run_chain, ImageRef, Mask, Providers, SceneMeta};
use crate::parallel::{map_slice, Execution};
use crate::program::TaskSpec;
use crate::scene::{build_object_with, render_observation_with, CameraModel, Category, TemplateConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceEvalRow {
    pub archetype: Archetype,
    pub parts: usize,
    /// F1 over all points of the archetype's parts.
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceEval {
    pub rows: Vec<AffordanceEvalRow>,
    pub overall_f1: f64,
}

/// Point-level F1 of `model` on `data` at `threshold`.
pub fn evaluate_affordance(
    model: &AffordanceModel,
    data: &AffordanceDataset,
    threshold: f64,
    exec: Execution,
) -> Result<AffordanceEval, HarnessError> {
    let predictions =
        map_slice(exec, &data.entries, |e| predict_affordance_with(model, &e.cloud, Execution::Sequential).map(|m| m.threshold(threshold)));
    let predictions = predictions.into_iter().collect::<Result<Vec<_>, _>>()?;
    let pooled = |filter: &dyn Fn(Archetype) -> bool| -> Result<(usize, f64), HarnessError> {
        let (mut pred, mut truth, mut parts) = (Vec::new(), Vec::new(), 0);
        for (e, p) in data.entries.iter().zip(&predictions) {
            if filter(e.archetype) {
                pred.extend_from_slice(p);
                truth.extend_from_slice(&e.labels);
                parts += 1;
            }
        }
        Ok((parts, f1_score(&pred, &truth)?))
    };
    let mut rows = Vec::new();
    for (archetype, _) in data.stats() {
        let (parts, f1) = pooled(&|a| a == archetype)?;
        rows.push(AffordanceEvalRow { archetype, parts, f1 });
    }
    let (_, overall_f1) = pooled(&|_| true)?;
    Ok(AffordanceEval { rows, overall_f1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingRow {
    pub category: Category,
    pub episodes: usize,
    /// Episodes whose chain returned an error; they count as IoU 0.
    pub failures: usize,
    pub mean_iou: f64,
}

/// Mask IoU of the describe → ground → segment chain per category.
pub fn evaluate_grounding(providers: &Providers, categories: &[Category], seeds: std::ops::Range<u64>, exec: Execution) -> Vec<GroundingRow> {
    let jobs: Vec<(Category, u64)> = categories.iter().flat_map(|&c| seeds.clone().map(move |s| (c, s))).collect();
    let ious = map_slice(exec, &jobs, |&(c, s)| -> Option<f64> {
        let obj = build_object_with(TemplateConfig::builtin(), c, s).ok()?;
        let frame = render_observation_with(&obj, &CameraModel::for_object(&obj), Execution::Sequential);
        let image = ImageRef::new(&frame, SceneMeta::from_object(&obj)).ok()?;
        let out = run_chain(providers, &image, &TaskSpec::open(c).goal).ok()?;
        mask_iou(&out.mask, &Mask::of_part(&frame, obj.target_part().id)).ok()
    });
    categories
        .iter()
        .map(|&category| {
            let mine: Vec<Option<f64>> = jobs.iter().zip(&ious).filter(|((c, _), _)| *c == category).map(|(_, v)| *v).collect();
            let n = mine.len();
            GroundingRow {
                category,
                episodes: n,
                failures: mine.iter().filter(|v| v.is_none()).count(),
                mean_iou: if n == 0 { 0.0 } else { mine.iter().map(|v| v.unwrap_or(0.0)).sum::<f64>() / n as f64 },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affordance::{generate_part_library, Hyperparameters};
    use crate::grounding::Perturbed;
    use std::sync::Arc;

    #[test]
    fn ground_truth_grounding_is_exact() {
        let rows = evaluate_grounding(&Providers::ground_truth(), &Category::ALL, 0..3, Execution::default());
        for r in rows {
            assert_eq!((r.episodes, r.failures, r.mean_iou), (3, 0, 1.0), "{r:?}");
        }
        let p = Perturbed { dilation: 0.25 };
        let noisy = Providers { grounder: Arc::new(p), segmenter: Arc::new(p), ..Providers::ground_truth() };
        let rows = evaluate_grounding(&noisy, &[Category::Bottle], 0..3, Execution::Sequential);
        assert!(rows[0].mean_iou < 1.0);
    }

    #[test]
    fn affordance_eval_rows() {
        let data = generate_part_library(&[Archetype::Cap, Archetype::Knob], 3, 11).unwrap();
        let hyper = Hyperparameters { epochs: 3, ..Hyperparameters::default() };
        let (model, _) = crate::affordance::train_affordance(&data, hyper, 1).unwrap();
        let eval = evaluate_affordance(&model, &data, 0.5, Execution::default()).unwrap();
        assert_eq!(eval.rows.len(), 2);
        assert!(eval.rows.iter().all(|r| r.parts == 3 && (0.0..=1.0).contains(&r.f1)));
        assert_eq!(evaluate_affordance(&model, &data, 0.5, Execution::Sequential).unwrap(), eval);
    }
}
