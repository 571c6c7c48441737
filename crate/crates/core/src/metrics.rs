//! Evaluation metrics.

use crate::data::Task;

/// Coefficient of determination. Returns 0 when the targets are constant
/// and the fit is exact, `-inf` when constant and inexact.
pub fn r2(y: &[f64], pred: &[f64]) -> f64 {
    assert_eq!(y.len(), pred.len());
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    1.0 - ss_res / ss_tot
}

/// Label rule for binary outputs.
pub fn label(value: f64) -> f64 {
    if value >= 0.5 {
        1.0
    } else {
        0.0
    }
}

/// Fraction of rows where the thresholded prediction equals the 0/1 target.
pub fn accuracy(y: &[f64], pred: &[f64]) -> f64 {
    assert_eq!(y.len(), pred.len());
    let hits = y.iter().zip(pred).filter(|(a, b)| **a == label(**b)).count();
    hits as f64 / y.len() as f64
}

/// R² for regression, accuracy for classification.
pub fn score(task: Task, y: &[f64], pred: &[f64]) -> f64 {
    match task {
        Task::Regression => r2(y, pred),
        Task::BinaryClassification => accuracy(y, pred),
    }
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Regression => "r2",
        Task::BinaryClassification => "accuracy",
    }
}

pub fn mse(y: &[f64], pred: &[f64]) -> f64 {
    y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
}
