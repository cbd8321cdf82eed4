use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};

use super::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub name: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub per_class: Vec<ClassReport>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Overall and per-class accuracy from a confusion matrix.
pub fn report_from_predictions(labels: &[usize], predictions: &[usize], class_names: &[String]) -> Result<EvalReport> {
    if labels.len() != predictions.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: predictions.len(),
            context: "predictions",
        });
    }
    let c = class_names.len();
    let mut confusion = vec![vec![0usize; c]; c];
    for (&y, &p) in labels.iter().zip(predictions) {
        if y >= c || p >= c {
            return Err(Error::invalid("class id out of range"));
        }
        confusion[y][p] += 1;
    }
    let correct: usize = (0..c).map(|i| confusion[i][i]).sum();
    let total = labels.len();
    let per_class = class_names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let t: usize = confusion[i].iter().sum();
            ClassReport {
                name: name.clone(),
                correct: confusion[i][i],
                total: t,
                accuracy: if t == 0 { 0.0 } else { confusion[i][i] as f64 / t as f64 },
            }
        })
        .collect();
    Ok(EvalReport {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        correct,
        total,
        per_class,
        confusion,
    })
}

/// Classifies every cloud of `data`.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    if data.num_classes() != model.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: model.num_classes(),
            actual: data.num_classes(),
            context: "dataset classes vs model outputs",
        });
    }
    let labels = data.labels()?;
    let predictor = model.predictor()?;
    let predictions = data
        .clouds
        .par_iter()
        .map(|c| predictor.predict(c))
        .collect::<Result<Vec<_>>>()?;
    report_from_predictions(&labels, &predictions, &data.class_names)
}
