//! Early-dropout filtering.
//!
//! Students who quit in the first weeks are trivial to classify and would
//! inflate every downstream metric, so they are removed before training. A
//! per-course logistic regression on early assignment grades estimates the
//! failure probability; students above a selected threshold are dropped.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    Action, CourseIteration, ItemKind, Label, StudentId, WEEK_SECONDS,
};
use crate::error::{CoreError, Result};
use crate::experiments::{balanced_accuracy, stratified_split};
use crate::nn::act::sigmoid;
use crate::nn::Tensor;
use crate::rng::derive_seed;

/// Weeks of grades the filter sees.
pub const GRADE_WEEKS: usize = 2;

/// Candidate removal thresholds, ascending. Ties in validation BAC resolve
/// to the largest, i.e. the most conservative filter.
pub const THRESHOLD_GRID: [f64; 5] = [0.96, 0.97, 0.98, 0.99, 0.999];

/// Per-student average best grades over the first weeks, one column per
/// week. A quiz that was never attempted counts as zero.
#[derive(Clone, Debug)]
pub struct GradeMatrix {
    pub students: Vec<StudentId>,
    pub values: Tensor,
}

/// Builds the grade matrix over the full labeled population. Column `j`
/// averages each student's best submitted grade per graded quiz released in
/// week `j`, over all such quizzes; only submissions inside the first
/// `weeks` weeks count. A week without graded quizzes yields a zero column.
pub fn grade_matrix(course: &CourseIteration, weeks: usize) -> GradeMatrix {
    let students: Vec<StudentId> = course.student_ids().cloned().collect();
    let cutoff = course.start_time() + weeks as i64 * WEEK_SECONDS;
    // Graded quizzes by week.
    let mut quizzes_per_week: Vec<Vec<&str>> = alloc::vec![Vec::new(); weeks];
    for item in &course.schedule {
        if item.kind == ItemKind::Quiz && item.graded && (item.release_week as usize) < weeks {
            quizzes_per_week[item.release_week as usize].push(&item.object);
        }
    }
    let mut values = Tensor::zeros(students.len(), weeks);
    for (i, student) in students.iter().enumerate() {
        // Best grade per quiz within the window.
        let mut best: BTreeMap<&str, f64> = BTreeMap::new();
        for e in course.events_of(student) {
            if e.action == Action::QuizSubmit && e.t < cutoff {
                if let Some(g) = e.grade {
                    let slot = best.entry(e.object.as_str()).or_insert(0.0);
                    if g > *slot {
                        *slot = g;
                    }
                }
            }
        }
        for (j, quizzes) in quizzes_per_week.iter().enumerate() {
            if quizzes.is_empty() {
                continue;
            }
            let sum: f64 = quizzes
                .iter()
                .map(|q| best.get(q).copied().unwrap_or(0.0))
                .sum();
            values.set(i, j, sum / quizzes.len() as f64);
        }
    }
    GradeMatrix { students, values }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub lr: f64,
    /// L2 strength; applies to the weights only, never the bias.
    pub l2: f64,
    /// Stop when the gradient infinity norm falls below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            lr: 2.0,
            l2: 1e-4,
            tol: 1e-6,
            max_iters: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    /// P(fail) for one grade row.
    pub fn fail_prob(&self, row: &[f64]) -> f64 {
        let z: f64 = self
            .weights
            .iter()
            .zip(row)
            .map(|(w, g)| w * g)
            .sum::<f64>()
            + self.bias;
        sigmoid(z)
    }
}

#[derive(Clone, Debug)]
pub struct LogisticFit {
    pub model: LogisticModel,
    pub iterations: usize,
    pub converged: bool,
}

/// Full-batch gradient descent on mean cross entropy plus `l2/2 * ||w||^2`,
/// from zero initialization. `y` is 1.0 for fail.
pub fn fit_logistic(rows: &Tensor, y: &[f64], cfg: &LogisticConfig) -> Result<LogisticFit> {
    let n = rows.rows();
    if n == 0 {
        return Err(CoreError::data("logistic fit on an empty population"));
    }
    assert_eq!(n, y.len(), "label length mismatch");
    let d = rows.cols();
    let mut w = alloc::vec![0.0; d];
    let mut b = 0.0;
    let inv_n = 1.0 / n as f64;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        let mut gw = alloc::vec![0.0; d];
        let mut gb = 0.0;
        for i in 0..n {
            let row = rows.row(i);
            let z: f64 = w.iter().zip(row).map(|(wj, gj)| wj * gj).sum::<f64>() + b;
            let r = (sigmoid(z) - y[i]) * inv_n;
            for (gwj, &gj) in gw.iter_mut().zip(row) {
                *gwj += r * gj;
            }
            gb += r;
        }
        for (gwj, &wj) in gw.iter_mut().zip(w.iter()) {
            *gwj += cfg.l2 * wj;
        }
        let max_grad = gw
            .iter()
            .chain(core::iter::once(&gb))
            .fold(0.0f64, |m, g| m.max(g.abs()));
        if !max_grad.is_finite() {
            return Err(CoreError::numeric("logistic gradient diverged"));
        }
        if max_grad < cfg.tol {
            converged = true;
            break;
        }
        for (wj, gwj) in w.iter_mut().zip(gw.iter()) {
            *wj -= cfg.lr * gwj;
        }
        b -= cfg.lr * gb;
        iterations += 1;
    }
    Ok(LogisticFit {
        model: LogisticModel { weights: w, bias: b },
        iterations,
        converged,
    })
}

/// Sweeps the threshold grid on a validation set, scoring "removed iff
/// p > t" as a fail prediction, and returns the BAC argmax (ties toward the
/// largest threshold). A single-class validation set cannot rank thresholds;
/// the largest, most conservative one is returned.
pub fn select_threshold(fail_probs: &[f64], labels: &[Label], grid: &[f64]) -> f64 {
    assert!(!grid.is_empty());
    let single_class =
        labels.iter().all(|l| l.is_fail()) || labels.iter().all(|l| !l.is_fail());
    if single_class {
        return *grid.last().unwrap();
    }
    let mut best_t = grid[0];
    let mut best_bac = f64::NEG_INFINITY;
    for &t in grid {
        let preds: Vec<bool> = fail_probs.iter().map(|&p| p > t).collect();
        let bac = balanced_accuracy(&preds, labels).expect("both classes present");
        if bac >= best_bac {
            best_bac = bac;
            best_t = t;
        }
    }
    best_t
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DropoutFilter {
    pub course_id: String,
    pub model: LogisticModel,
    pub threshold: f64,
    pub fail_probs: BTreeMap<StudentId, f64>,
    pub removed: BTreeSet<StudentId>,
    pub kept: BTreeSet<StudentId>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilterConfig {
    pub weeks: usize,
    pub logistic: LogisticConfig,
    pub grid: Vec<f64>,
    /// Fraction held out for threshold selection.
    pub validation_fraction: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            weeks: GRADE_WEEKS,
            logistic: LogisticConfig::default(),
            grid: THRESHOLD_GRID.to_vec(),
            validation_fraction: 0.1,
        }
    }
}

/// Fits the filter for one course: grade matrix over everyone, logistic fit
/// on a stratified 90%, threshold selection on the held-out 10%, removal
/// `p > t` applied to the full population.
pub fn filter_course(
    course: &CourseIteration,
    cfg: &FilterConfig,
    seed: u64,
) -> Result<DropoutFilter> {
    let matrix = grade_matrix(course, cfg.weeks);
    if matrix.students.is_empty() {
        return Err(CoreError::data(format!(
            "{}: no labeled students to filter",
            course.id()
        )));
    }
    let indexed: Vec<usize> = (0..matrix.students.len()).collect();
    let split_seed = derive_seed(seed, "dropout-filter-split");
    let parts = stratified_split(
        &indexed,
        |&i| course.labels[&matrix.students[i]],
        &[1.0 - cfg.validation_fraction, cfg.validation_fraction],
        split_seed,
    );
    let (train_idx, val_idx) = (&parts[0], &parts[1]);

    let gather = |idx: &[usize]| -> (Tensor, Vec<f64>, Vec<Label>) {
        let mut rows = Tensor::zeros(idx.len(), matrix.values.cols());
        let mut y = Vec::with_capacity(idx.len());
        let mut labels = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            rows.row_mut(r).copy_from_slice(matrix.values.row(i));
            let label = course.labels[&matrix.students[i]];
            y.push(if label.is_fail() { 1.0 } else { 0.0 });
            labels.push(label);
        }
        (rows, y, labels)
    };

    let (train_rows, train_y, _) = gather(train_idx);
    let fit = fit_logistic(&train_rows, &train_y, &cfg.logistic)?;

    let (val_rows, _, val_labels) = gather(val_idx);
    let val_probs: Vec<f64> = (0..val_rows.rows())
        .map(|i| fit.model.fail_prob(val_rows.row(i)))
        .collect();
    let threshold = select_threshold(&val_probs, &val_labels, &cfg.grid);

    let mut fail_probs = BTreeMap::new();
    let mut removed = BTreeSet::new();
    let mut kept = BTreeSet::new();
    for (i, student) in matrix.students.iter().enumerate() {
        let p = fit.model.fail_prob(matrix.values.row(i));
        fail_probs.insert(student.clone(), p);
        if p > threshold {
            removed.insert(student.clone());
        } else {
            kept.insert(student.clone());
        }
    }
    Ok(DropoutFilter {
        course_id: course.id(),
        model: fit.model,
        threshold,
        fail_probs,
        removed,
        kept,
    })
}

/// A copy of the course restricted to the kept students.
pub fn apply_filter(course: &CourseIteration, filter: &DropoutFilter) -> CourseIteration {
    let mut filtered = course.clone();
    filtered.events.retain(|s, _| filter.kept.contains(s));
    filtered.labels.retain(|s, _| filter.kept.contains(s));
    filtered
}
