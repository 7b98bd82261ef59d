//! Transfer settings: which courses train a model, which course it is scored
//! on, and the bookkeeping that makes a run reproducible.
//!
//! Every runner fans its randomness out of one master seed. Removal filters
//! are seeded per course (`"filter/<id>"`) so all settings agree on who gets
//! filtered; everything downstream (model init, epoch shuffles, validation
//! splits) hangs off a per-setting seed. Rerunning with the same corpus and
//! config reproduces every report byte for byte.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datamodel::{CourseIteration, CourseMeta, Label, StudentId};
use crate::dropout::{apply_filter, filter_course, FilterConfig};
use crate::error::{CoreError, Result};
use crate::features::{
    compute_raw, normalize_and_pad, FeatureConfig, NormStats, RawFeatures, N_FEATURES,
};
use crate::meta::{assemble_meta, MetaConfig, MetaStats, MetaVector, META_SLICE_NAMES, N_META_SLICES};
use crate::models::{
    build_model, course_label_split, extract_attention, fine_tune, grid_search, predict, train,
    ArchKind, ArchitectureSpec, CandidateData, CandidateScore, Dataset, FineTuneConfig, Model,
    SearchGrid, TrainConfig,
};
use crate::rng::{derive_seed, derive_seed_indexed};

use super::metrics::{balanced_accuracy, predict_labels, Confusion};
use super::split::{stratified_kfold, stratified_split};

/// Report schema version, bumped on breaking layout changes.
pub const REPORT_VERSION: u32 = 1;

/// Folds used by the within-course protocol.
pub const CV_FOLDS: usize = 10;

/// Fraction of the training rows held out for model selection in the
/// transfer settings.
pub const VAL_FRACTION: f64 = 0.1;

/// The six ways of pairing training courses with an evaluation course.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SettingKind {
    /// Cross-validation inside one course iteration.
    #[serde(rename = "1-1-same")]
    OneOneSame,
    /// Earlier iterations of the same course predict the newest one.
    #[serde(rename = "n-1-same")]
    NOneSame,
    /// Each foreign course's newest iteration predicts the target alone.
    #[serde(rename = "1-1-diff")]
    OneOneDiff,
    /// All foreign iterations pooled predict the target.
    #[serde(rename = "n-1-diff")]
    NOneDiff,
    /// Like the pooled setting, but the target must be the newest iteration
    /// of its course, mirroring a live deployment.
    #[serde(rename = "n-c-diff")]
    NCDiff,
    /// The deployment setting plus fine-tuning on the target's own history.
    #[serde(rename = "n-c-diff-ft")]
    NCDiffFt,
}

pub const SETTINGS: [SettingKind; 6] = [
    SettingKind::OneOneSame,
    SettingKind::NOneSame,
    SettingKind::OneOneDiff,
    SettingKind::NOneDiff,
    SettingKind::NCDiff,
    SettingKind::NCDiffFt,
];

impl SettingKind {
    /// Stable machine name; doubles as the seed tag of the setting.
    pub fn name(&self) -> &'static str {
        match self {
            SettingKind::OneOneSame => "1-1-same",
            SettingKind::NOneSame => "n-1-same",
            SettingKind::OneOneDiff => "1-1-diff",
            SettingKind::NOneDiff => "n-1-diff",
            SettingKind::NCDiff => "n-c-diff",
            SettingKind::NCDiffFt => "n-c-diff-ft",
        }
    }
}

impl fmt::Display for SettingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self {
            SettingKind::OneOneSame => "1-1 Same",
            SettingKind::NOneSame => "N-1 Same",
            SettingKind::OneOneDiff => "1-1 Diff",
            SettingKind::NOneDiff => "N-1 Diff",
            SettingKind::NCDiff => "N-C Diff",
            SettingKind::NCDiffFt => "N-C Diff FT",
        };
        f.write_str(label)
    }
}

impl FromStr for SettingKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        SETTINGS
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                CoreError::config(format!(
                    "unknown setting {s:?}; expected one of 1-1-same, n-1-same, 1-1-diff, \
                     n-1-diff, n-c-diff, n-c-diff-ft"
                ))
            })
    }
}

/// A transfer setting bound to the architecture it should train.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransferSetting {
    pub kind: SettingKind,
    /// Architecture template; its seed is ignored, runners derive their own.
    pub template: ArchitectureSpec,
}

/// Everything a runner needs besides the corpus: the early horizon, the
/// master seed, and the knobs of each pipeline stage.
#[derive(Clone, Debug)]
pub struct RunConfig {
    /// Early fraction of each course fed to the models.
    pub level: f64,
    pub seed: u64,
    pub train: TrainConfig,
    pub fine_tune: FineTuneConfig,
    pub filter: FilterConfig,
    pub features: FeatureConfig,
    /// Architecture search space; `None` trains the template as-is.
    pub grid: Option<SearchGrid>,
}

impl RunConfig {
    pub fn new(level: f64, seed: u64) -> Self {
        RunConfig {
            level,
            seed,
            train: TrainConfig::default(),
            fine_tune: FineTuneConfig::default(),
            filter: FilterConfig::default(),
            features: FeatureConfig::default(),
            grid: None,
        }
    }
}

/// Who a model is scored on: the population that survived the removal
/// filter, or everyone with a label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Population {
    Filtered,
    Full,
}

impl fmt::Display for Population {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Population::Filtered => "filtered",
            Population::Full => "full",
        })
    }
}

/// One scored evaluation. Stores every per-student probability so the
/// summary numbers can be re-derived without rerunning the model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalResult {
    pub population: Population,
    /// Sub-run marker: `fold-3` for cross-validation, the source course id
    /// for per-source transfer. `None` for single-model settings.
    pub segment: Option<String>,
    /// The course the scored students belong to.
    pub course_id: String,
    pub n: usize,
    pub confusion: Confusion,
    pub bac: f64,
    pub accuracy: f64,
    /// Failure probability per scored student.
    pub predictions: BTreeMap<StudentId, f64>,
}

impl EvalResult {
    /// Recomputes the balanced accuracy from the stored predictions and
    /// independent labels. Audits that the summary matches the raw scores.
    pub fn recheck_bac(&self, labels: &BTreeMap<StudentId, Label>) -> Result<f64> {
        let mut preds = Vec::with_capacity(self.predictions.len());
        let mut truth = Vec::with_capacity(self.predictions.len());
        for (student, &p) in &self.predictions {
            let label = labels.get(student).ok_or_else(|| {
                CoreError::data(format!("no label for {student} in {}", self.course_id))
            })?;
            preds.push(p);
            truth.push(*label);
        }
        balanced_accuracy(&predict_labels(&preds), &truth)
    }
}

/// One line of the transfer table: a setting applied to one target course.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SettingRow {
    pub setting: SettingKind,
    pub arch: ArchKind,
    pub course_id: String,
    pub level: f64,
    pub train_courses: Vec<String>,
    pub fine_tune_courses: Vec<String>,
    /// Winning spec when the setting trains a single model; per-fold and
    /// per-source settings train many and leave this empty.
    pub spec: Option<ArchitectureSpec>,
    /// Validation score of the winning candidate, where one exists.
    pub val_bac: Option<f64>,
    /// Every architecture candidate tried, in enumeration order.
    pub grid_scores: Vec<CandidateScore>,
    pub evals: Vec<EvalResult>,
    /// Mean balanced accuracy over the filtered-population evaluations.
    pub mean_filtered_bac: Option<f64>,
    /// Mean balanced accuracy over the full-population evaluations.
    pub mean_full_bac: Option<f64>,
}

impl SettingRow {
    fn finish(mut self) -> Self {
        self.mean_filtered_bac = mean_bac(&self.evals, Population::Filtered);
        self.mean_full_bac = mean_bac(&self.evals, Population::Full);
        self
    }
}

fn mean_bac(evals: &[EvalResult], pop: Population) -> Option<f64> {
    let bacs: Vec<f64> = evals
        .iter()
        .filter(|e| e.population == pop)
        .map(|e| e.bac)
        .collect();
    if bacs.is_empty() {
        None
    } else {
        Some(bacs.iter().sum::<f64>() / bacs.len() as f64)
    }
}

/// A full experiment: many setting rows under one seed and horizon.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: u32,
    pub seed: u64,
    pub level: f64,
    pub rows: Vec<SettingRow>,
}

impl ExperimentReport {
    pub fn new(seed: u64, level: f64) -> Self {
        ExperimentReport {
            version: REPORT_VERSION,
            seed,
            level,
            rows: Vec::new(),
        }
    }
}

/// Course ids a setting trains on and, for the fine-tuned setting, adapts on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    pub train: Vec<String>,
    pub fine_tune: Vec<String>,
}

/// Picks the training courses for `kind` around `target_id`.
///
/// Train ids come out sorted (per-source order for the 1-1 setting, id order
/// otherwise); fine-tune ids are the target's earlier iterations, oldest
/// first. Selections that would be empty are rejected with a
/// "setting inapplicable" error.
pub fn select_courses(
    kind: SettingKind,
    corpus: &[CourseIteration],
    target_id: &str,
) -> Result<Selection> {
    let target = corpus
        .iter()
        .find(|c| c.meta.id() == target_id)
        .ok_or_else(|| CoreError::config(format!("course {target_id} is not in the corpus")))?;
    let set = &target.meta.course_set;

    let mut priors: Vec<&CourseMeta> = corpus
        .iter()
        .map(|c| &c.meta)
        .filter(|m| &m.course_set == set && m.iteration < target.meta.iteration)
        .collect();
    priors.sort_by_key(|m| m.iteration);

    let mut others: Vec<&CourseMeta> = corpus
        .iter()
        .map(|c| &c.meta)
        .filter(|m| &m.course_set != set)
        .collect();
    others.sort_by_key(|m| m.id());

    let inapplicable = |why: &str| {
        CoreError::config(format!("setting {} inapplicable to {target_id}: {why}", kind))
    };
    let need_last_iteration = || -> Result<()> {
        let newest = corpus
            .iter()
            .filter(|c| &c.meta.course_set == set)
            .map(|c| c.meta.iteration)
            .max()
            .unwrap_or(target.meta.iteration);
        if target.meta.iteration != newest {
            return Err(inapplicable(&format!(
                "iteration {newest} of {set} is newer; the deployment settings score only the \
                 latest iteration"
            )));
        }
        Ok(())
    };

    let selection = match kind {
        SettingKind::OneOneSame => Selection {
            train: vec![target_id.to_string()],
            fine_tune: Vec::new(),
        },
        SettingKind::NOneSame => {
            if priors.is_empty() {
                return Err(inapplicable(&format!("no earlier iterations of {set}")));
            }
            Selection {
                train: priors.iter().map(|m| m.id()).collect(),
                fine_tune: Vec::new(),
            }
        }
        SettingKind::OneOneDiff | SettingKind::NOneDiff | SettingKind::NCDiff
        | SettingKind::NCDiffFt => {
            if others.is_empty() {
                return Err(inapplicable("no courses outside the target's course set"));
            }
            if matches!(kind, SettingKind::NCDiff | SettingKind::NCDiffFt) {
                need_last_iteration()?;
            }
            let train = if kind == SettingKind::OneOneDiff {
                // Newest iteration of each foreign set, one source per set.
                let mut newest: BTreeMap<&String, &CourseMeta> = BTreeMap::new();
                for m in &others {
                    let slot = newest.entry(&m.course_set).or_insert(m);
                    if m.iteration > slot.iteration {
                        *slot = m;
                    }
                }
                newest.values().map(|m| m.id()).collect()
            } else {
                others.iter().map(|m| m.id()).collect()
            };
            let fine_tune = if kind == SettingKind::NCDiffFt {
                if priors.is_empty() {
                    return Err(inapplicable(&format!(
                        "no earlier iterations of {set} to fine-tune on"
                    )));
                }
                priors.iter().map(|m| m.id()).collect()
            } else {
                Vec::new()
            };
            Selection { train, fine_tune }
        }
    };
    Ok(selection)
}

/// A course after filtering and featurization, ready for dataset assembly.
struct PrepCourse {
    id: String,
    meta: CourseMeta,
    filtered_raw: RawFeatures,
    full_raw: RawFeatures,
    filtered_labels: BTreeMap<StudentId, Label>,
    full_labels: BTreeMap<StudentId, Label>,
}

impl PrepCourse {
    fn raw(&self, pop: Population) -> &RawFeatures {
        match pop {
            Population::Filtered => &self.filtered_raw,
            Population::Full => &self.full_raw,
        }
    }

    fn labels(&self, pop: Population) -> &BTreeMap<StudentId, Label> {
        match pop {
            Population::Filtered => &self.filtered_labels,
            Population::Full => &self.full_labels,
        }
    }
}

/// Filters and featurizes the listed courses, preserving order.
///
/// Filter seeds depend only on the course id, so every setting removes the
/// same students from a given course.
fn prepare(
    corpus: &[CourseIteration],
    ids: &[String],
    cfg: &RunConfig,
) -> Result<Vec<PrepCourse>> {
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let course = corpus
            .iter()
            .find(|c| &c.meta.id() == id)
            .ok_or_else(|| CoreError::config(format!("course {id} is not in the corpus")))?;
        let filter = filter_course(course, &cfg.filter, derive_seed(cfg.seed, &format!("filter/{id}")))?;
        let filtered = apply_filter(course, &filter);
        out.push(PrepCourse {
            id: id.clone(),
            meta: course.meta.clone(),
            filtered_raw: compute_raw(&filtered, cfg.level, &cfg.features)?,
            full_raw: compute_raw(course, cfg.level, &cfg.features)?,
            filtered_labels: filtered.labels.clone(),
            full_labels: course.labels.clone(),
        });
    }
    Ok(out)
}

fn find<'a>(prepared: &'a [PrepCourse], id: &str) -> &'a PrepCourse {
    prepared
        .iter()
        .find(|p| p.id == id)
        .expect("course was prepared")
}

/// Longest early horizon among the prepared courses; every tensor is padded
/// to it so one model fits all of them.
fn week_span(prepared: &[PrepCourse]) -> usize {
    prepared
        .iter()
        .map(|p| p.filtered_raw.weeks)
        .max()
        .expect("at least one course")
}

/// Keeps only the listed students of a raw feature block. Used to fit
/// normalization bounds on training rows alone.
fn subset_raw(raw: &RawFeatures, keep: &BTreeSet<usize>) -> RawFeatures {
    let stride = raw.weeks * N_FEATURES;
    let mut students = Vec::with_capacity(keep.len());
    let mut values = Vec::with_capacity(keep.len() * stride);
    for &si in keep {
        students.push(raw.students[si].clone());
        values.extend_from_slice(&raw.values[si * stride..(si + 1) * stride]);
    }
    RawFeatures {
        course_id: raw.course_id.clone(),
        students,
        weeks: raw.weeks,
        values,
    }
}

/// Concatenates the enabled slices of a normalized meta vector.
fn project_meta(values: &[f64], cfg: &MetaConfig, slices: &[bool; N_META_SLICES]) -> Vec<f64> {
    let mut out = Vec::new();
    for (on, range) in slices.iter().zip(cfg.slice_ranges()) {
        if *on {
            out.extend_from_slice(&values[range]);
        }
    }
    out
}

/// Builds the per-course meta rows for one candidate layout. Normalization
/// bounds come from the training courses only; every prepared course is then
/// normalized and projected with them.
fn meta_table(
    prepared: &[PrepCourse],
    train_ids: &BTreeSet<String>,
    cfg: &MetaConfig,
    slices: &[bool; N_META_SLICES],
) -> Result<(BTreeMap<String, Vec<f64>>, usize)> {
    let vectors: Vec<MetaVector> = prepared
        .iter()
        .map(|p| assemble_meta(&p.meta, cfg, None))
        .collect::<Result<_>>()?;
    let train_vectors: Vec<MetaVector> = vectors
        .iter()
        .filter(|v| train_ids.contains(&v.course_id))
        .cloned()
        .collect();
    let stats = MetaStats::fit(&train_vectors)?;
    let mut table = BTreeMap::new();
    let mut dim = 0;
    for v in &vectors {
        let normed = stats.normalize(v)?;
        let projected = project_meta(&normed.values, cfg, slices);
        dim = projected.len();
        table.insert(v.course_id.clone(), projected);
    }
    Ok((table, dim))
}

/// Meta rows for the given layout, or an empty table for the behavior-only
/// architecture, which consumes no meta input.
fn meta_for(
    kind: ArchKind,
    prepared: &[PrepCourse],
    train_ids: &BTreeSet<String>,
    cfg: &MetaConfig,
    slices: &[bool; N_META_SLICES],
) -> Result<(BTreeMap<String, Vec<f64>>, usize)> {
    if kind == ArchKind::Bo {
        return Ok((BTreeMap::new(), 0));
    }
    meta_table(prepared, train_ids, cfg, slices)
}

/// Assembles one dataset over the listed courses and population.
fn build_dataset(
    prepared: &[PrepCourse],
    ids: &[String],
    pop: Population,
    stats: &NormStats,
    week_count: usize,
    meta: &BTreeMap<String, Vec<f64>>,
    meta_dim: usize,
) -> Result<Dataset> {
    let mut data = Dataset::new(week_count, meta_dim)?;
    let empty = Vec::new();
    for id in ids {
        let p = find(prepared, id);
        let tensor = normalize_and_pad(p.raw(pop), stats, week_count)?;
        let row = meta.get(id).unwrap_or(&empty);
        data.extend_from_course(&tensor, row, p.labels(pop))?;
    }
    Ok(data)
}

/// Scores `idxs` of `data` and packages the result with its raw predictions.
fn eval_rows(
    model: &Model,
    data: &Dataset,
    idxs: &[usize],
    population: Population,
    segment: Option<String>,
    course_id: &str,
) -> Result<EvalResult> {
    let probs = predict(model, data, idxs)?;
    let labels = data.labels(idxs);
    let predicted_fail = predict_labels(&probs);
    let confusion = Confusion::count(&predicted_fail, &labels);
    let bac = balanced_accuracy(&predicted_fail, &labels)?;
    let mut predictions = BTreeMap::new();
    for (k, &row) in idxs.iter().enumerate() {
        predictions.insert(data.student(row).clone(), probs[k]);
    }
    Ok(EvalResult {
        population,
        segment,
        course_id: course_id.to_string(),
        n: idxs.len(),
        accuracy: confusion.accuracy(),
        confusion,
        bac,
        predictions,
    })
}

fn eval_all(
    model: &Model,
    data: &Dataset,
    population: Population,
    segment: Option<String>,
    course_id: &str,
) -> Result<EvalResult> {
    let idxs: Vec<usize> = (0..data.len()).collect();
    eval_rows(model, data, &idxs, population, segment, course_id)
}

/// Grid with exactly one candidate: the template itself.
fn single_grid(template: &ArchitectureSpec) -> SearchGrid {
    SearchGrid {
        bilstm_layers: vec![template.bilstm_layers],
        bilstm_units: vec![template.bilstm_units],
        head_dense: vec![template.head_dense.clone()],
        embedding_dims: vec![(
            template.meta_config.title_dim,
            template.meta_config.short_dim,
            template.meta_config.long_dim,
        )],
        meta_slices: vec![template.meta_slices],
    }
}

fn empty_row(
    setting: SettingKind,
    template: &ArchitectureSpec,
    course_id: &str,
    level: f64,
    sel: &Selection,
) -> SettingRow {
    SettingRow {
        setting,
        arch: template.kind,
        course_id: course_id.to_string(),
        level,
        train_courses: sel.train.clone(),
        fine_tune_courses: sel.fine_tune.clone(),
        spec: None,
        val_bac: None,
        grid_scores: Vec::new(),
        evals: Vec::new(),
        mean_filtered_bac: None,
        mean_full_bac: None,
    }
}

/// Cross-validation inside a single course: ten stratified folds, each
/// scored once while its successor fold serves as the validation set.
///
/// Normalization bounds are refitted on each fold's training rows so no test
/// statistics leak into the inputs. Only the filtered population is scored;
/// every student of the course appears in exactly one test fold.
pub fn run_one_one_same(
    corpus: &[CourseIteration],
    target_id: &str,
    template: &ArchitectureSpec,
    cfg: &RunConfig,
) -> Result<SettingRow> {
    let sel = select_courses(SettingKind::OneOneSame, corpus, target_id)?;
    let setting_seed = derive_seed(cfg.seed, SettingKind::OneOneSame.name());
    let prepared = prepare(corpus, &sel.train, cfg)?;
    let p = &prepared[0];
    let train_ids: BTreeSet<String> = sel.train.iter().cloned().collect();

    let rows: Vec<usize> = (0..p.filtered_raw.students.len()).collect();
    let folds = stratified_kfold(
        &rows,
        |&i| p.filtered_labels[&p.filtered_raw.students[i]],
        CV_FOLDS,
        derive_seed(setting_seed, "folds"),
    );

    // A single course normalizes its own meta vector to all zeros, which is
    // exactly right: there is no cross-course signal to learn here.
    let (meta, meta_dim) = meta_for(
        template.kind,
        &prepared,
        &train_ids,
        &template.meta_config,
        &template.meta_slices,
    )?;

    let mut row = empty_row(SettingKind::OneOneSame, template, target_id, cfg.level, &sel);
    for f in 0..CV_FOLDS {
        let test = &folds[f];
        let val = &folds[(f + 1) % CV_FOLDS];
        let held: BTreeSet<usize> = test.iter().chain(val).copied().collect();
        assert_eq!(
            held.len(),
            test.len() + val.len(),
            "test and validation folds overlap"
        );
        let train_rows: Vec<usize> = rows.iter().copied().filter(|i| !held.contains(i)).collect();
        let train_set: BTreeSet<usize> = train_rows.iter().copied().collect();

        let sub = subset_raw(&p.filtered_raw, &train_set);
        let stats = NormStats::fit([&sub])?;
        let data = build_dataset(
            &prepared,
            &sel.train,
            Population::Filtered,
            &stats,
            p.filtered_raw.weeks,
            &meta,
            meta_dim,
        )?;

        let mut spec = template.clone();
        spec.seed = derive_seed_indexed(setting_seed, "fold-model", f as u64);
        let mut model = build_model(&spec)?;
        let mut tc = cfg.train.clone();
        tc.seed = derive_seed_indexed(setting_seed, "fold-train", f as u64);
        train(&mut model, &data, &train_rows, val, &tc)?;

        row.evals.push(eval_rows(
            &model,
            &data,
            test,
            Population::Filtered,
            Some(format!("fold-{f}")),
            target_id,
        )?);
    }
    Ok(row.finish())
}

/// Runs one transfer setting against one target course and returns its
/// report row. The within-course setting delegates to [`run_one_one_same`].
pub fn run_transfer(
    corpus: &[CourseIteration],
    target_id: &str,
    setting: &TransferSetting,
    cfg: &RunConfig,
) -> Result<SettingRow> {
    if setting.kind == SettingKind::OneOneSame {
        return run_one_one_same(corpus, target_id, &setting.template, cfg);
    }
    let sel = select_courses(setting.kind, corpus, target_id)?;
    assert!(
        !sel.train.iter().any(|id| id == target_id)
            && !sel.fine_tune.iter().any(|id| id == target_id),
        "target course leaked into the training selection"
    );
    let setting_seed = derive_seed(cfg.seed, setting.kind.name());

    let mut ids = sel.train.clone();
    ids.extend(sel.fine_tune.iter().cloned());
    ids.push(target_id.to_string());
    let prepared = prepare(corpus, &ids, cfg)?;
    let week_count = week_span(&prepared);

    let mut row = empty_row(setting.kind, &setting.template, target_id, cfg.level, &sel);
    if setting.kind == SettingKind::OneOneDiff {
        // One model per source course, each scored on the target alone.
        for src_id in &sel.train {
            let src_seed = derive_seed(setting_seed, src_id);
            let outcome = fit_transfer_model(
                &prepared,
                core::slice::from_ref(src_id),
                &setting.template,
                cfg,
                week_count,
                src_seed,
            )?;
            row.evals.extend(eval_target(
                &outcome,
                &prepared,
                target_id,
                week_count,
                Some(src_id.clone()),
            )?);
        }
    } else {
        let outcome = fit_transfer_model(
            &prepared,
            &sel.train,
            &setting.template,
            cfg,
            week_count,
            setting_seed,
        )?;
        let mut fitted = outcome;
        if !sel.fine_tune.is_empty() {
            let meta = meta_rows_for(&fitted, &prepared, &sel.fine_tune)?;
            let ft_data = build_dataset(
                &prepared,
                &sel.fine_tune,
                Population::Filtered,
                &fitted.norm_stats,
                week_count,
                &meta,
                fitted.meta_dim(),
            )?;
            let ft_rows: Vec<usize> = (0..ft_data.len()).collect();
            let mut fc = cfg.fine_tune.clone();
            fc.seed = derive_seed(setting_seed, "fine-tune");
            fine_tune(&mut fitted.model, &ft_data, &ft_rows, &fc)?;
        }
        row.spec = Some(fitted.spec().clone());
        row.val_bac = Some(fitted.val_bac);
        row.grid_scores = fitted.scores.clone();
        row.evals = eval_target(&fitted, &prepared, target_id, week_count, None)?;
    }
    Ok(row.finish())
}

/// A trained transfer model bundled with everything needed to featurize a
/// new course exactly the way its training data was featurized.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransferModel {
    pub model: Model,
    /// Validation score of the winning candidate.
    pub val_bac: f64,
    /// Every architecture candidate tried, in enumeration order.
    pub scores: Vec<CandidateScore>,
    /// Behavior normalization bounds, fitted on the training courses.
    pub norm_stats: NormStats,
    /// Meta normalization bounds; `None` for the behavior-only model.
    pub meta_stats: Option<MetaStats>,
    /// Week padding of the training tensors.
    pub week_count: usize,
    /// Early horizon the features were computed at.
    pub level: f64,
    pub features: FeatureConfig,
}

impl TransferModel {
    pub fn spec(&self) -> &ArchitectureSpec {
        &self.model.spec
    }

    /// Width of the projected meta rows this model consumes.
    pub fn meta_dim(&self) -> usize {
        if self.meta_stats.is_none() {
            return 0;
        }
        let spec = self.spec();
        spec.meta_slices
            .iter()
            .zip(spec.meta_config.slice_ranges())
            .filter(|(on, _)| **on)
            .map(|(_, r)| r.len())
            .sum()
    }

    /// Normalized, slice-projected meta row for one course.
    pub fn meta_row(&self, meta: &CourseMeta) -> Result<Vec<f64>> {
        let Some(stats) = &self.meta_stats else {
            return Ok(Vec::new());
        };
        let spec = self.spec();
        let v = assemble_meta(meta, &spec.meta_config, None)?;
        let normed = stats.normalize(&v)?;
        Ok(project_meta(
            &normed.values,
            &spec.meta_config,
            &spec.meta_slices,
        ))
    }

    /// Scores every labeled student of a course at the model's horizon.
    /// Courses longer than the training padding simply pad further; masked
    /// weeks never change a prediction.
    pub fn predict_course(
        &self,
        course: &CourseIteration,
    ) -> Result<BTreeMap<StudentId, f64>> {
        let raw = compute_raw(course, self.level, &self.features)?;
        let week_count = self.week_count.max(raw.weeks);
        let tensor = normalize_and_pad(&raw, &self.norm_stats, week_count)?;
        let mut data = Dataset::new(week_count, self.meta_dim())?;
        data.extend_from_course(&tensor, &self.meta_row(&course.meta)?, &course.labels)?;
        let idxs: Vec<usize> = (0..data.len()).collect();
        let probs = predict(&self.model, &data, &idxs)?;
        Ok(idxs
            .iter()
            .map(|&i| (data.student(i).clone(), probs[i]))
            .collect())
    }
}

/// Grid-searches (or plainly trains) the template on the given training
/// courses. Normalization and meta bounds are fitted on those courses only.
fn fit_transfer_model(
    prepared: &[PrepCourse],
    train_courses: &[String],
    template: &ArchitectureSpec,
    cfg: &RunConfig,
    week_count: usize,
    seed: u64,
) -> Result<TransferModel> {
    let train_ids: BTreeSet<String> = train_courses.iter().cloned().collect();
    let norm_stats = NormStats::fit(
        prepared
            .iter()
            .filter(|p| train_ids.contains(&p.id))
            .map(|p| &p.filtered_raw),
    )?;
    let grid = cfg.grid.clone().unwrap_or_else(|| single_grid(template));
    let mut spec = template.clone();
    spec.seed = derive_seed(seed, "model");
    let mut tc = cfg.train.clone();
    tc.seed = derive_seed(seed, "train");
    let val_seed = derive_seed(seed, "val-split");

    let outcome = grid_search(&spec, &grid, &tc, |meta_cfg, slices| {
        let (meta, meta_dim) = meta_for(spec.kind, prepared, &train_ids, meta_cfg, slices)?;
        let data = build_dataset(
            prepared,
            train_courses,
            Population::Filtered,
            &norm_stats,
            week_count,
            &meta,
            meta_dim,
        )?;
        let rows: Vec<usize> = (0..data.len()).collect();
        let (train_idx, val_idx) = course_label_split(&data, &rows, VAL_FRACTION, val_seed)?;
        Ok(CandidateData {
            data,
            train_idx,
            val_idx,
        })
    })?;

    // Refit the meta bounds for the winning layout; `meta_row` then
    // reproduces exactly the rows the candidate trained on.
    let meta_stats = if outcome.spec.kind == ArchKind::Bo {
        None
    } else {
        let train_vectors: Vec<MetaVector> = prepared
            .iter()
            .filter(|p| train_ids.contains(&p.id))
            .map(|p| assemble_meta(&p.meta, &outcome.spec.meta_config, None))
            .collect::<Result<_>>()?;
        Some(MetaStats::fit(&train_vectors)?)
    };
    Ok(TransferModel {
        model: outcome.model,
        val_bac: outcome.report.best_val_bac,
        scores: outcome.scores,
        norm_stats,
        meta_stats,
        week_count,
        level: cfg.level,
        features: cfg.features.clone(),
    })
}

/// Meta rows of the listed prepared courses under a fitted model's layout.
fn meta_rows_for(
    fitted: &TransferModel,
    prepared: &[PrepCourse],
    ids: &[String],
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut map = BTreeMap::new();
    for id in ids {
        map.insert(id.clone(), fitted.meta_row(&find(prepared, id).meta)?);
    }
    Ok(map)
}

/// Scores a fitted model on the target course, once per population.
fn eval_target(
    fitted: &TransferModel,
    prepared: &[PrepCourse],
    target_id: &str,
    week_count: usize,
    segment: Option<String>,
) -> Result<Vec<EvalResult>> {
    let target = [target_id.to_string()];
    let meta = meta_rows_for(fitted, prepared, &target)?;
    let mut evals = Vec::with_capacity(2);
    for pop in [Population::Filtered, Population::Full] {
        let data = build_dataset(
            prepared,
            &target,
            pop,
            &fitted.norm_stats,
            week_count,
            &meta,
            fitted.meta_dim(),
        )?;
        evals.push(eval_all(
            &fitted.model,
            &data,
            pop,
            segment.clone(),
            target_id,
        )?);
    }
    Ok(evals)
}

/// Trains the single model a transfer setting prescribes for `target_id`
/// without scoring it, so it can be checkpointed and applied to any course
/// later. The per-fold and per-source settings train many models and are
/// rejected; for the fine-tuned setting the returned model is already
/// adapted to the target's history.
pub fn train_transfer(
    corpus: &[CourseIteration],
    target_id: &str,
    setting: &TransferSetting,
    cfg: &RunConfig,
) -> Result<TransferModel> {
    if matches!(
        setting.kind,
        SettingKind::OneOneSame | SettingKind::OneOneDiff
    ) {
        return Err(CoreError::config(format!(
            "setting {} trains one model per {}; checkpoint a pooled setting instead",
            setting.kind,
            if setting.kind == SettingKind::OneOneSame {
                "fold"
            } else {
                "source course"
            }
        )));
    }
    let sel = select_courses(setting.kind, corpus, target_id)?;
    let setting_seed = derive_seed(cfg.seed, setting.kind.name());
    let mut ids = sel.train.clone();
    ids.extend(sel.fine_tune.iter().cloned());
    let prepared = prepare(corpus, &ids, cfg)?;
    let week_count = week_span(&prepared);
    let mut fitted = fit_transfer_model(
        &prepared,
        &sel.train,
        &setting.template,
        cfg,
        week_count,
        setting_seed,
    )?;
    if !sel.fine_tune.is_empty() {
        let meta = meta_rows_for(&fitted, &prepared, &sel.fine_tune)?;
        let ft_data = build_dataset(
            &prepared,
            &sel.fine_tune,
            Population::Filtered,
            &fitted.norm_stats,
            week_count,
            &meta,
            fitted.meta_dim(),
        )?;
        let ft_rows: Vec<usize> = (0..ft_data.len()).collect();
        let mut fc = cfg.fine_tune.clone();
        fc.seed = derive_seed(setting_seed, "fine-tune");
        fine_tune(&mut fitted.model, &ft_data, &ft_rows, &fc)?;
    }
    Ok(fitted)
}

/// One line of the meta ablation: a model restricted to a single meta slice.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    /// Slice name, or `behavior-only` for the no-meta baseline.
    pub name: String,
    pub val_bac: f64,
    pub test_bac: f64,
    pub n_test: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationTable {
    pub course_id: String,
    pub level: f64,
    pub train_courses: Vec<String>,
    pub rows: Vec<AblationRow>,
}

/// Measures each meta slice on its own: the late-concat model is retrained
/// once per slice on the pooled foreign courses and scored on a held-out
/// fifth of their students, alongside a behavior-only baseline.
///
/// The pool is split 80/10/10 stratified by course and label; all seven rows
/// share the split, the week padding, and the normalization bounds, so the
/// only thing that varies is the meta input.
pub fn run_ablation(
    corpus: &[CourseIteration],
    target_id: &str,
    template: &ArchitectureSpec,
    cfg: &RunConfig,
) -> Result<AblationTable> {
    if template.kind != ArchKind::Btm {
        return Err(CoreError::config(format!(
            "the ablation varies the meta slices of the late-concat architecture; got {:?}",
            template.kind
        )));
    }
    let sel = select_courses(SettingKind::NOneDiff, corpus, target_id)?;
    let seed = derive_seed(cfg.seed, "ablation");
    let prepared = prepare(corpus, &sel.train, cfg)?;
    let week_count = week_span(&prepared);
    let train_ids: BTreeSet<String> = sel.train.iter().cloned().collect();

    // Items are (course position, student position); stratifying on
    // (course, label) keeps every course and both labels in every part.
    let mut items: Vec<(usize, usize)> = Vec::new();
    for (ci, id) in sel.train.iter().enumerate() {
        let p = find(&prepared, id);
        for si in 0..p.filtered_raw.students.len() {
            items.push((ci, si));
        }
    }
    let parts = stratified_split(
        &items,
        |&(ci, si)| {
            let p = find(&prepared, &sel.train[ci]);
            (ci, p.filtered_labels[&p.filtered_raw.students[si]])
        },
        &[0.8, 0.1, 0.1],
        derive_seed(seed, "split"),
    );

    // Dataset rows follow course order, students in course order.
    let mut offsets = Vec::with_capacity(sel.train.len());
    let mut at = 0;
    for id in &sel.train {
        offsets.push(at);
        at += find(&prepared, id).filtered_raw.students.len();
    }
    let to_rows = |part: &[(usize, usize)]| -> Vec<usize> {
        let mut rows: Vec<usize> = part.iter().map(|&(ci, si)| offsets[ci] + si).collect();
        rows.sort_unstable();
        rows
    };
    let train_rows = to_rows(&parts[0]);
    let val_rows = to_rows(&parts[1]);
    let test_rows = to_rows(&parts[2]);

    let mut keep: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); sel.train.len()];
    for &(ci, si) in &parts[0] {
        keep[ci].insert(si);
    }
    let subs: Vec<RawFeatures> = sel
        .train
        .iter()
        .zip(&keep)
        .map(|(id, k)| subset_raw(&find(&prepared, id).filtered_raw, k))
        .collect();
    let stats = NormStats::fit(subs.iter())?;

    let mut table = AblationTable {
        course_id: target_id.to_string(),
        level: cfg.level,
        train_courses: sel.train.clone(),
        rows: Vec::new(),
    };
    let mut run_variant = |name: &str, spec: &ArchitectureSpec| -> Result<()> {
        let (meta, meta_dim) = meta_for(
            spec.kind,
            &prepared,
            &train_ids,
            &spec.meta_config,
            &spec.meta_slices,
        )?;
        let data = build_dataset(
            &prepared,
            &sel.train,
            Population::Filtered,
            &stats,
            week_count,
            &meta,
            meta_dim,
        )?;
        let mut spec = spec.clone();
        spec.seed = derive_seed(seed, &format!("model/{name}"));
        let mut model = build_model(&spec)?;
        let mut tc = cfg.train.clone();
        tc.seed = derive_seed(seed, &format!("train/{name}"));
        let report = train(&mut model, &data, &train_rows, &val_rows, &tc)?;
        let eval = eval_rows(
            &model,
            &data,
            &test_rows,
            Population::Filtered,
            None,
            target_id,
        )?;
        table.rows.push(AblationRow {
            name: name.to_string(),
            val_bac: report.best_val_bac,
            test_bac: eval.bac,
            n_test: test_rows.len(),
        });
        Ok(())
    };

    for (m, name) in META_SLICE_NAMES.iter().enumerate() {
        let mut slices = [false; N_META_SLICES];
        slices[m] = true;
        let mut spec = template.clone();
        spec.meta_slices = slices;
        run_variant(name, &spec)?;
    }
    let baseline = ArchitectureSpec {
        kind: ArchKind::Bo,
        meta_slices: [false; N_META_SLICES],
        ..template.clone()
    };
    run_variant("behavior-only", &baseline)?;
    Ok(table)
}

/// Distribution summary of one attention column.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionRow {
    pub name: String,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Where the dual-attention model looks: one row per enabled meta slice for
/// the first attention, plus the branch masses of the second.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub n: usize,
    pub slice_rows: Vec<AttentionRow>,
    pub branch_rows: Vec<AttentionRow>,
}

/// Quartiles by linear interpolation over the sorted sample.
fn quartile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h as usize;
    let frac = h - lo as f64;
    if lo + 1 == n {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[lo + 1] - sorted[lo]) * frac
    }
}

fn summarize(name: &str, values: &[f64]) -> AttentionRow {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("attention weights are finite"));
    AttentionRow {
        name: name.to_string(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        q1: quartile(&sorted, 0.25),
        median: quartile(&sorted, 0.5),
        q3: quartile(&sorted, 0.75),
    }
}

/// Summarizes the attention weights of a dual-attention model over the given
/// rows. Errors on other architectures and on empty selections.
pub fn attention_report(model: &Model, data: &Dataset, idxs: &[usize]) -> Result<AttentionSummary> {
    if idxs.is_empty() {
        return Err(CoreError::config("attention summary needs at least one row"));
    }
    let breakdown = extract_attention(model, data, idxs)?;
    let mut slice_rows = Vec::with_capacity(breakdown.slices.len());
    for (j, name) in breakdown.slices.iter().enumerate() {
        let column: Vec<f64> = breakdown.slice_weights.iter().map(|row| row[j]).collect();
        slice_rows.push(summarize(name, &column));
    }
    let branch_rows = vec![
        summarize("behavior", &breakdown.behavior_mass),
        summarize("meta", &breakdown.meta_mass),
    ];
    Ok(AttentionSummary {
        n: idxs.len(),
        slice_rows,
        branch_rows,
    })
}
