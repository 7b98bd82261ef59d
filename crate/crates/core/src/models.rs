//! The three outcome-prediction architectures and their training loop.
//!
//! All three consume the same normalized weekly behavior matrix, padded to a
//! fixed week count with the mask value. `Bo` runs it through a BiLSTM stack
//! into a single sigmoid unit. `Btm` appends the course meta vector to every
//! week before the recurrence (early fusion). `Bsm` keeps two branches:
//! behavior through the BiLSTM, meta through scalar attention, each projected
//! to a common width, concatenated, re-attended and classified by a dense
//! cascade (late fusion).
//!
//! Everything here is seeded and single threaded: rebuilding and retraining
//! with the same seeds reproduces parameters bit for bit.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Label, StudentId};
use crate::error::{CoreError, Result};
use crate::experiments::metrics::{balanced_accuracy, predict_labels};
use crate::experiments::split::stratified_split;
use crate::features::{BehaviorTensor, MASK_VALUE, N_FEATURES};
use crate::meta::{MetaConfig, META_SLICE_NAMES, N_META_SLICES};
use crate::nn::layers::{
    activity_masks, bilstm_windowed, dense, init_bilstm, init_dense, init_projection,
    init_scalar_attention, projection, scalar_attention, Activation, Phase,
};
use crate::nn::{AdamConfig, Bindings, ParamStore, Tape, Var};
use crate::nn::tensor::Tensor;
use crate::rng::{derive_seed, rng_from_seed};

/// Rows per forward pass at evaluation time. Outputs are row-independent, so
/// the chunk size never changes a prediction; it only bounds tape memory.
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    /// Behavior only.
    Bo,
    /// Behavior with the meta vector repeated into every week.
    Btm,
    /// Separate behavior and meta branches fused by attention.
    Bsm,
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ArchKind::Bo => "BO",
            ArchKind::Btm => "BTM",
            ArchKind::Bsm => "BSM",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub kind: ArchKind,
    pub bilstm_layers: usize,
    pub bilstm_units: usize,
    /// Hidden widths of the classifier cascade between fusion and the final
    /// sigmoid unit. Only the late-fusion model reads it.
    pub head_dense: Vec<usize>,
    /// Which meta slices the model consumes, in [`META_SLICE_NAMES`] order.
    pub meta_slices: [bool; N_META_SLICES],
    /// Layout the meta vectors were assembled with (text embedding widths).
    pub meta_config: MetaConfig,
    /// Hidden width of both attention scorers.
    pub attention_hidden: usize,
    /// Output width of each branch projection.
    pub projection_width: usize,
    pub dropout: f64,
    /// Optional truncated-BPTT window; `None` backpropagates through the
    /// whole sequence.
    pub bptt_window: Option<usize>,
    pub seed: u64,
}

impl ArchitectureSpec {
    pub fn bo(bilstm_layers: usize, bilstm_units: usize, seed: u64) -> Self {
        ArchitectureSpec {
            kind: ArchKind::Bo,
            bilstm_layers,
            bilstm_units,
            head_dense: Vec::new(),
            meta_slices: [false; N_META_SLICES],
            meta_config: MetaConfig::default(),
            attention_hidden: 64,
            projection_width: 256,
            dropout: 0.1,
            bptt_window: None,
            seed,
        }
    }

    pub fn btm(bilstm_layers: usize, bilstm_units: usize, seed: u64) -> Self {
        ArchitectureSpec {
            kind: ArchKind::Btm,
            meta_slices: [true; N_META_SLICES],
            ..ArchitectureSpec::bo(bilstm_layers, bilstm_units, seed)
        }
    }

    pub fn bsm(
        bilstm_layers: usize,
        bilstm_units: usize,
        head_dense: Vec<usize>,
        seed: u64,
    ) -> Self {
        ArchitectureSpec {
            kind: ArchKind::Bsm,
            head_dense,
            meta_slices: [true; N_META_SLICES],
            ..ArchitectureSpec::bo(bilstm_layers, bilstm_units, seed)
        }
    }

    /// Width of the meta vector the model consumes; zero for behavior-only.
    pub fn meta_dim(&self) -> usize {
        if self.kind == ArchKind::Bo {
            return 0;
        }
        let ranges = self.meta_config.slice_ranges();
        self.meta_slices
            .iter()
            .zip(ranges.iter())
            .filter(|(on, _)| **on)
            .map(|(_, r)| r.len())
            .sum()
    }

    /// Width of each week tensor fed to the recurrence.
    pub fn input_width(&self) -> usize {
        match self.kind {
            ArchKind::Bo | ArchKind::Bsm => N_FEATURES,
            ArchKind::Btm => N_FEATURES + self.meta_dim(),
        }
    }

    /// Names and ranges of the enabled slices inside the meta vector the
    /// model consumes (after disabled slices are dropped).
    pub fn meta_layout(&self) -> Vec<(&'static str, Range<usize>)> {
        let ranges = self.meta_config.slice_ranges();
        let mut out = Vec::new();
        let mut base = 0;
        for (k, r) in ranges.iter().enumerate() {
            if self.meta_slices[k] {
                out.push((META_SLICE_NAMES[k], base..base + r.len()));
                base += r.len();
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.bilstm_layers == 0 {
            return Err(CoreError::config("need at least one BiLSTM layer"));
        }
        if self.bilstm_units == 0 {
            return Err(CoreError::config("BiLSTM units must be at least one"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.bptt_window == Some(0) {
            return Err(CoreError::config(
                "truncation window must be at least one step",
            ));
        }
        if self.kind != ArchKind::Bo {
            self.meta_config.validate()?;
            if self.meta_dim() == 0 {
                return Err(CoreError::config(format!(
                    "{} needs at least one enabled meta slice",
                    self.kind
                )));
            }
        }
        if self.kind == ArchKind::Bsm {
            if self.attention_hidden == 0 {
                return Err(CoreError::config("attention hidden width must be at least one"));
            }
            if self.projection_width == 0 {
                return Err(CoreError::config("projection width must be at least one"));
            }
            if self.head_dense.contains(&0) {
                return Err(CoreError::config("classifier cascade has a zero-width layer"));
            }
        }
        Ok(())
    }
}

/// One student ready for the network: behavior weeks normalized and padded to
/// the dataset week count, the meta vector the model will consume, and the
/// outcome.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Row {
    course: String,
    student: StudentId,
    /// Unpadded prefix length actually backed by data.
    kept_weeks: usize,
    behavior: Vec<f64>,
    meta: Vec<f64>,
    label: Label,
}

/// A fixed-width design matrix. Rows from several courses can live side by
/// side as long as they share the padded week count and the meta width.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dataset {
    week_count: usize,
    meta_dim: usize,
    rows: Vec<Row>,
}

impl Dataset {
    pub fn new(week_count: usize, meta_dim: usize) -> Result<Self> {
        if week_count == 0 {
            return Err(CoreError::config("dataset needs at least one week"));
        }
        Ok(Dataset {
            week_count,
            meta_dim,
            rows: Vec::new(),
        })
    }

    pub fn push(
        &mut self,
        course: impl Into<String>,
        student: impl Into<StudentId>,
        kept_weeks: usize,
        behavior: Vec<f64>,
        meta: Vec<f64>,
        label: Label,
    ) -> Result<()> {
        if behavior.len() != self.week_count * N_FEATURES {
            return Err(CoreError::config(format!(
                "behavior row has {} values, expected {} ({} weeks x {})",
                behavior.len(),
                self.week_count * N_FEATURES,
                self.week_count,
                N_FEATURES
            )));
        }
        if meta.len() != self.meta_dim {
            return Err(CoreError::config(format!(
                "meta row has {} values, expected {}",
                meta.len(),
                self.meta_dim
            )));
        }
        if kept_weeks == 0 || kept_weeks > self.week_count {
            return Err(CoreError::config(format!(
                "kept weeks {} outside 1..={}",
                kept_weeks, self.week_count
            )));
        }
        self.rows.push(Row {
            course: course.into(),
            student: student.into(),
            kept_weeks,
            behavior,
            meta,
            label,
        });
        Ok(())
    }

    /// Appends every student of a featurized course, sharing one meta vector.
    pub fn extend_from_course(
        &mut self,
        tensor: &BehaviorTensor,
        meta: &[f64],
        labels: &BTreeMap<StudentId, Label>,
    ) -> Result<()> {
        if tensor.week_count != self.week_count {
            return Err(CoreError::config(format!(
                "course {} is padded to {} weeks, dataset holds {}",
                tensor.course_id, tensor.week_count, self.week_count
            )));
        }
        for (i, student) in tensor.students.iter().enumerate() {
            let label = labels.get(student).ok_or_else(|| {
                CoreError::data(format!("no label for {student} in {}", tensor.course_id))
            })?;
            self.push(
                tensor.course_id.clone(),
                student.clone(),
                tensor.kept_weeks,
                tensor.student_rows(i).to_vec(),
                meta.to_vec(),
                *label,
            )?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn week_count(&self) -> usize {
        self.week_count
    }

    pub fn meta_dim(&self) -> usize {
        self.meta_dim
    }

    pub fn course(&self, row: usize) -> &str {
        &self.rows[row].course
    }

    pub fn student(&self, row: usize) -> &StudentId {
        &self.rows[row].student
    }

    pub fn label(&self, row: usize) -> Label {
        self.rows[row].label
    }

    pub fn labels(&self, idxs: &[usize]) -> Vec<Label> {
        idxs.iter().map(|&i| self.rows[i].label).collect()
    }

    /// Builds the week tensors for a batch, trimmed to the longest unpadded
    /// prefix among its rows. Early fusion appends the meta vector to active
    /// weeks and the mask value to padded ones; late fusion gets the meta
    /// rows as a separate matrix.
    fn batch(&self, idxs: &[usize], kind: ArchKind) -> Batch {
        let weeks = idxs
            .iter()
            .map(|&i| self.rows[i].kept_weeks)
            .max()
            .expect("nonempty batch");
        let width = match kind {
            ArchKind::Btm => N_FEATURES + self.meta_dim,
            _ => N_FEATURES,
        };
        let mut steps = Vec::with_capacity(weeks);
        for j in 0..weeks {
            let mut t = Tensor::zeros(idxs.len(), width);
            for (r, &i) in idxs.iter().enumerate() {
                let row = &self.rows[i];
                let out = t.row_mut(r);
                out[..N_FEATURES]
                    .copy_from_slice(&row.behavior[j * N_FEATURES..(j + 1) * N_FEATURES]);
                if kind == ArchKind::Btm {
                    if j < row.kept_weeks {
                        out[N_FEATURES..].copy_from_slice(&row.meta);
                    } else {
                        out[N_FEATURES..].fill(MASK_VALUE);
                    }
                }
            }
            steps.push(t);
        }
        let meta = (kind == ArchKind::Bsm).then(|| {
            let mut m = Tensor::zeros(idxs.len(), self.meta_dim);
            for (r, &i) in idxs.iter().enumerate() {
                m.row_mut(r).copy_from_slice(&self.rows[i].meta);
            }
            m
        });
        let targets = idxs.iter().map(|&i| self.rows[i].label.target()).collect();
        Batch {
            steps,
            meta,
            targets: Rc::new(targets),
        }
    }
}

struct Batch {
    steps: Vec<Tensor>,
    meta: Option<Tensor>,
    targets: Rc<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Model {
    pub spec: ArchitectureSpec,
    pub store: ParamStore,
}

fn layer_prefix(l: usize) -> String {
    format!("bilstm{l}")
}

pub fn build_model(spec: &ArchitectureSpec) -> Result<Model> {
    spec.validate()?;
    let mut store = ParamStore::new();
    let mut rng = rng_from_seed(derive_seed(spec.seed, "model-init"));
    let mut in_dim = spec.input_width();
    for l in 0..spec.bilstm_layers {
        init_bilstm(&mut store, &mut rng, &layer_prefix(l), in_dim, spec.bilstm_units);
        in_dim = 2 * spec.bilstm_units;
    }
    match spec.kind {
        ArchKind::Bo | ArchKind::Btm => {
            init_dense(&mut store, &mut rng, "out", 2 * spec.bilstm_units, 1);
        }
        ArchKind::Bsm => {
            let meta_dim = spec.meta_dim();
            init_scalar_attention(&mut store, &mut rng, "meta_att", spec.attention_hidden);
            init_projection(
                &mut store,
                &mut rng,
                "proj_behavior",
                2 * spec.bilstm_units,
                spec.projection_width,
            );
            init_projection(
                &mut store,
                &mut rng,
                "proj_meta",
                2 * meta_dim,
                spec.projection_width,
            );
            init_scalar_attention(&mut store, &mut rng, "fuse_att", spec.attention_hidden);
            let mut width = 4 * spec.projection_width;
            for (k, &h) in spec.head_dense.iter().enumerate() {
                init_dense(&mut store, &mut rng, &format!("head{k}"), width, h);
                width = h;
            }
            init_dense(&mut store, &mut rng, "out", width, 1);
        }
    }
    Ok(Model {
        spec: spec.clone(),
        store,
    })
}

struct ForwardOut {
    prob: Var,
    meta_weights: Option<Var>,
    fuse_weights: Option<Var>,
}

fn forward(
    tape: &mut Tape,
    b: &Bindings,
    spec: &ArchitectureSpec,
    batch: &Batch,
    phase: &mut Phase,
) -> ForwardOut {
    let (active, inactive) = activity_masks(&batch.steps, MASK_VALUE);
    let mut xs: Vec<Var> = batch
        .steps
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    let mut final_state = None;
    for l in 0..spec.bilstm_layers {
        let out = bilstm_windowed(
            tape,
            b,
            &layer_prefix(l),
            spec.bilstm_units,
            &xs,
            &active,
            &inactive,
            spec.bptt_window,
        );
        final_state = Some(out.final_state);
        xs = out.outputs;
    }
    let behavior = final_state.expect("at least one layer");
    match spec.kind {
        ArchKind::Bo | ArchKind::Btm => ForwardOut {
            prob: dense(tape, b, "out", behavior, Activation::Sigmoid),
            meta_weights: None,
            fuse_weights: None,
        },
        ArchKind::Bsm => {
            let meta = tape.constant(batch.meta.clone().expect("meta matrix"));
            let att1 = scalar_attention(tape, b, "meta_att", meta);
            let pb = projection(tape, b, "proj_behavior", behavior, spec.dropout, phase);
            let pm = projection(tape, b, "proj_meta", att1.concat, spec.dropout, phase);
            let fused = tape.concat_cols(pb, pm);
            let att2 = scalar_attention(tape, b, "fuse_att", fused);
            let mut x = att2.concat;
            for k in 0..spec.head_dense.len() {
                x = dense(tape, b, &format!("head{k}"), x, Activation::Gelu);
            }
            ForwardOut {
                prob: dense(tape, b, "out", x, Activation::Sigmoid),
                meta_weights: Some(att1.weights),
                fuse_weights: Some(att2.weights),
            }
        }
    }
}

fn check_compat(spec: &ArchitectureSpec, data: &Dataset) -> Result<()> {
    if spec.kind != ArchKind::Bo && data.meta_dim != spec.meta_dim() {
        return Err(CoreError::config(format!(
            "model consumes a {}-wide meta vector, dataset carries {}",
            spec.meta_dim(),
            data.meta_dim
        )));
    }
    Ok(())
}

fn check_indices(data: &Dataset, idxs: &[usize]) -> Result<()> {
    match idxs.iter().find(|&&i| i >= data.rows.len()) {
        Some(&i) => Err(CoreError::config(format!(
            "row index {i} out of range for {} rows",
            data.rows.len()
        ))),
        None => Ok(()),
    }
}

/// Fail probabilities for the requested rows. Deterministic: dropout is off
/// and every row's output is independent of its batch companions.
pub fn predict(model: &Model, data: &Dataset, idxs: &[usize]) -> Result<Vec<f64>> {
    check_compat(&model.spec, data)?;
    check_indices(data, idxs)?;
    let mut probs = Vec::with_capacity(idxs.len());
    for chunk in idxs.chunks(EVAL_CHUNK) {
        let batch = data.batch(chunk, model.spec.kind);
        let mut tape = Tape::new();
        let b = model.store.bind(&mut tape);
        let out = forward(&mut tape, &b, &model.spec, &batch, &mut Phase::Eval);
        let p = tape.value(out.prob);
        for (r, &i) in chunk.iter().enumerate() {
            let v = p.at(r, 0);
            if !v.is_finite() {
                return Err(CoreError::numeric(format!(
                    "non-finite probability for {}:{}",
                    data.rows[i].course, data.rows[i].student
                )));
            }
            probs.push(v);
        }
    }
    Ok(probs)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs allowed past the best validation score before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lr: 1e-3,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_bac: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<EpochRecord>,
    /// Validation score of the untouched model, epoch zero of the race.
    pub initial_val_bac: f64,
    /// Epoch whose parameters the model kept; zero means no epoch beat the
    /// starting point.
    pub best_epoch: usize,
    pub best_val_bac: f64,
    pub stopped_early: bool,
}

fn validation_bac(model: &Model, data: &Dataset, idxs: &[usize], labels: &[Label]) -> Result<f64> {
    let probs = predict(model, data, idxs)?;
    balanced_accuracy(&predict_labels(&probs), labels)
}

/// Minibatch BCE/Adam with early stopping on validation balanced accuracy.
/// The model keeps the parameters of its best validation epoch.
pub fn train(
    model: &mut Model,
    data: &Dataset,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    check_compat(&model.spec, data)?;
    check_indices(data, train_idx)?;
    check_indices(data, val_idx)?;
    if cfg.batch_size == 0 {
        return Err(CoreError::config("batch size must be at least one"));
    }
    if cfg.patience == 0 {
        return Err(CoreError::config("patience must be at least one epoch"));
    }
    if train_idx.is_empty() {
        return Err(CoreError::config("no training rows"));
    }
    let train_set: BTreeSet<usize> = train_idx.iter().copied().collect();
    if train_set.len() != train_idx.len() {
        return Err(CoreError::config("duplicate training row"));
    }
    if let Some(&i) = val_idx.iter().find(|i| train_set.contains(i)) {
        return Err(CoreError::config(format!(
            "{}:{} appears in both training and validation",
            data.rows[i].course, data.rows[i].student
        )));
    }
    let val_labels = data.labels(val_idx);
    if !(val_labels.contains(&Label::Pass) && val_labels.contains(&Label::Fail)) {
        return Err(CoreError::config(
            "validation slice needs both outcomes to score balanced accuracy",
        ));
    }

    let adam = AdamConfig::with_lr(cfg.lr);
    let mut shuffle_rng = rng_from_seed(derive_seed(cfg.seed, "epoch-shuffle"));
    let mut dropout_rng = rng_from_seed(derive_seed(cfg.seed, "dropout"));

    let initial_val_bac = validation_bac(model, data, val_idx, &val_labels)?;
    let mut best_snapshot = model.store.snapshot();
    let mut best_epoch = 0usize;
    let mut best_val_bac = initial_val_bac;
    let mut stopped_early = false;
    let mut log = Vec::new();
    let mut order: Vec<usize> = train_idx.to_vec();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.batch(chunk, model.spec.kind);
            let mut tape = Tape::new();
            let bindings = model.store.bind(&mut tape);
            let out = {
                let mut phase = Phase::Train {
                    rng: &mut dropout_rng,
                };
                forward(&mut tape, &bindings, &model.spec, &batch, &mut phase)
            };
            let loss = tape.mean_bce(out.prob, batch.targets.clone());
            let loss_value = tape.value(loss).at(0, 0);
            if !loss_value.is_finite() {
                return Err(CoreError::numeric(format!(
                    "loss became {loss_value} at epoch {epoch}, batch {bi}"
                )));
            }
            loss_sum += loss_value * chunk.len() as f64;
            let grads = tape.backward(loss);
            model.store.take_grads(&bindings, &grads);
            model.store.adam_step(&adam).map_err(|e| match e {
                CoreError::Numeric(m) => {
                    CoreError::numeric(format!("epoch {epoch}, batch {bi}: {m}"))
                }
                other => other,
            })?;
        }
        let train_loss = loss_sum / order.len() as f64;
        let val_bac = validation_bac(model, data, val_idx, &val_labels)?;
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_bac,
        });
        if val_bac > best_val_bac {
            best_val_bac = val_bac;
            best_epoch = epoch;
            best_snapshot = model.store.snapshot();
        }
        if epoch - best_epoch >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    model.store.restore(&best_snapshot);
    Ok(TrainReport {
        log,
        initial_val_bac,
        best_epoch,
        best_val_bac,
        stopped_early,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FineTuneConfig {
    /// A tenth of the training default.
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Fraction of the fine-tune rows held out for early stopping.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            lr: 1e-4,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            holdout: 0.1,
            seed: 0,
        }
    }
}

/// Continues training every parameter on new rows with a reduced learning
/// rate and fresh optimizer moments. A stratified slice of the fine-tune set
/// is held out to drive early stopping; with `max_epochs` zero the model is
/// returned untouched.
pub fn fine_tune(
    model: &mut Model,
    data: &Dataset,
    idxs: &[usize],
    cfg: &FineTuneConfig,
) -> Result<TrainReport> {
    check_compat(&model.spec, data)?;
    check_indices(data, idxs)?;
    if !(cfg.holdout > 0.0 && cfg.holdout < 1.0) {
        return Err(CoreError::config(format!(
            "holdout fraction must be in (0, 1), got {}",
            cfg.holdout
        )));
    }
    let parts = stratified_split(
        idxs,
        |i| data.rows[*i].label,
        &[1.0 - cfg.holdout, cfg.holdout],
        derive_seed(cfg.seed, "fine-tune-holdout"),
    );
    let (fit, held) = (&parts[0], &parts[1]);
    if fit.is_empty() || held.is_empty() {
        return Err(CoreError::config(
            "fine-tune set too small to hold out an early-stopping slice",
        ));
    }
    model.store.reset_optimizer();
    train(
        model,
        data,
        fit,
        held,
        &TrainConfig {
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            max_epochs: cfg.max_epochs,
            patience: cfg.patience,
            seed: cfg.seed,
        },
    )
}

/// Splits rows into a training part and a validation part, holding out the
/// given fraction of every course stratified by course and outcome.
pub fn course_label_split(
    data: &Dataset,
    idxs: &[usize],
    holdout: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    check_indices(data, idxs)?;
    if !(holdout > 0.0 && holdout < 1.0) {
        return Err(CoreError::config(format!(
            "holdout fraction must be in (0, 1), got {holdout}"
        )));
    }
    let parts = stratified_split(
        idxs,
        |i| (data.rows[*i].course.clone(), data.rows[*i].label),
        &[1.0 - holdout, holdout],
        seed,
    );
    Ok((parts[0].clone(), parts[1].clone()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchGrid {
    pub bilstm_layers: Vec<usize>,
    pub bilstm_units: Vec<usize>,
    /// Classifier cascade candidates, read by the late-fusion model only.
    pub head_dense: Vec<Vec<usize>>,
    /// Text embedding widths (title, short description, long description).
    pub embedding_dims: Vec<(usize, usize, usize)>,
    /// Meta slice subsets to try; everything enabled by default.
    pub meta_slices: Vec<[bool; N_META_SLICES]>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            bilstm_layers: vec![1, 2],
            bilstm_units: vec![32, 64, 128],
            head_dense: vec![vec![256, 64], vec![128, 32]],
            embedding_dims: vec![(30, 30, 58), (60, 60, 60)],
            meta_slices: vec![[true; N_META_SLICES]],
        }
    }
}

/// The rows a grid candidate trains and validates on. Suppliers rebuild the
/// meta side when the candidate's embedding widths or slice subset change.
pub struct CandidateData {
    pub data: Dataset,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateScore {
    pub spec: ArchitectureSpec,
    pub val_bac: f64,
}

pub struct GridOutcome {
    pub spec: ArchitectureSpec,
    pub model: Model,
    pub report: TrainReport,
    /// Every candidate in evaluation order.
    pub scores: Vec<CandidateScore>,
}

/// Trains every combination in the grid and keeps the candidate with the
/// highest validation balanced accuracy; ties keep the earliest candidate in
/// enumeration order (layers, units, cascade, embedding widths, slices).
///
/// `supply` maps a meta layout to the rows and the train/validation split for
/// it; results are cached, so it runs once per distinct layout.
pub fn grid_search<F>(
    template: &ArchitectureSpec,
    grid: &SearchGrid,
    train_cfg: &TrainConfig,
    mut supply: F,
) -> Result<GridOutcome>
where
    F: FnMut(&MetaConfig, &[bool; N_META_SLICES]) -> Result<CandidateData>,
{
    if grid.bilstm_layers.is_empty() || grid.bilstm_units.is_empty() {
        return Err(CoreError::config("empty architecture grid"));
    }
    let head_opts: Vec<Vec<usize>> = if template.kind == ArchKind::Bsm {
        if grid.head_dense.is_empty() {
            return Err(CoreError::config("empty classifier cascade grid"));
        }
        grid.head_dense.clone()
    } else {
        vec![template.head_dense.clone()]
    };
    let (dim_opts, slice_opts) = if template.kind == ArchKind::Bo {
        let c = &template.meta_config;
        (
            vec![(c.title_dim, c.short_dim, c.long_dim)],
            vec![template.meta_slices],
        )
    } else {
        if grid.embedding_dims.is_empty() || grid.meta_slices.is_empty() {
            return Err(CoreError::config("empty meta grid"));
        }
        (grid.embedding_dims.clone(), grid.meta_slices.clone())
    };

    type LayoutKey = ((usize, usize, usize), [bool; N_META_SLICES]);
    let mut cache: BTreeMap<LayoutKey, CandidateData> = BTreeMap::new();
    let mut best: Option<(ArchitectureSpec, Model, TrainReport)> = None;
    let mut best_bac = f64::NEG_INFINITY;
    let mut scores = Vec::new();

    for &bilstm_layers in &grid.bilstm_layers {
        for &bilstm_units in &grid.bilstm_units {
            for head in &head_opts {
                for &dims in &dim_opts {
                    for &slices in &slice_opts {
                        let spec = ArchitectureSpec {
                            bilstm_layers,
                            bilstm_units,
                            head_dense: head.clone(),
                            meta_slices: slices,
                            meta_config: MetaConfig {
                                title_dim: dims.0,
                                short_dim: dims.1,
                                long_dim: dims.2,
                                embed_seed: template.meta_config.embed_seed,
                            },
                            ..template.clone()
                        };
                        let key = (dims, slices);
                        if !cache.contains_key(&key) {
                            cache.insert(key, supply(&spec.meta_config, &slices)?);
                        }
                        let cand = &cache[&key];
                        let mut model = build_model(&spec)?;
                        let report =
                            train(&mut model, &cand.data, &cand.train_idx, &cand.val_idx, train_cfg)?;
                        scores.push(CandidateScore {
                            spec: spec.clone(),
                            val_bac: report.best_val_bac,
                        });
                        if report.best_val_bac > best_bac {
                            best_bac = report.best_val_bac;
                            best = Some((spec, model, report));
                        }
                    }
                }
            }
        }
    }
    let (spec, model, report) = best.expect("grid enumerated at least one candidate");
    Ok(GridOutcome {
        spec,
        model,
        report,
        scores,
    })
}

/// Attention read-outs of the late-fusion model: the first layer's weight per
/// enabled meta slice and the second layer's split between the behavior and
/// meta projections.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionBreakdown {
    /// `course:student` per requested row, in request order.
    pub ids: Vec<String>,
    /// Enabled slice names, layout order.
    pub slices: Vec<String>,
    /// Per row: summed first-attention weight per enabled slice.
    pub slice_weights: Vec<Vec<f64>>,
    /// Per row: second-attention mass on the behavior projection.
    pub behavior_mass: Vec<f64>,
    /// Per row: second-attention mass on the meta projection.
    pub meta_mass: Vec<f64>,
}

impl AttentionBreakdown {
    /// Column means of the per-row slice weights.
    pub fn mean_slice_weights(&self) -> Vec<f64> {
        let n = self.slice_weights.len();
        let mut out = vec![0.0; self.slices.len()];
        for row in &self.slice_weights {
            for (o, v) in out.iter_mut().zip(row.iter()) {
                *o += v;
            }
        }
        if n > 0 {
            for o in out.iter_mut() {
                *o /= n as f64;
            }
        }
        out
    }

    pub fn mean_masses(&self) -> (f64, f64) {
        let n = self.behavior_mass.len();
        if n == 0 {
            return (0.0, 0.0);
        }
        let b: f64 = self.behavior_mass.iter().sum();
        let m: f64 = self.meta_mass.iter().sum();
        (b / n as f64, m / n as f64)
    }
}

pub fn extract_attention(
    model: &Model,
    data: &Dataset,
    idxs: &[usize],
) -> Result<AttentionBreakdown> {
    if model.spec.kind != ArchKind::Bsm {
        return Err(CoreError::config(format!(
            "attention extraction needs the late-fusion model, got {}",
            model.spec.kind
        )));
    }
    check_compat(&model.spec, data)?;
    check_indices(data, idxs)?;
    let layout = model.spec.meta_layout();
    let split = model.spec.projection_width;
    let mut out = AttentionBreakdown {
        ids: Vec::with_capacity(idxs.len()),
        slices: layout.iter().map(|(name, _)| name.to_string()).collect(),
        slice_weights: Vec::with_capacity(idxs.len()),
        behavior_mass: Vec::with_capacity(idxs.len()),
        meta_mass: Vec::with_capacity(idxs.len()),
    };
    for chunk in idxs.chunks(EVAL_CHUNK) {
        let batch = data.batch(chunk, ArchKind::Bsm);
        let mut tape = Tape::new();
        let b = model.store.bind(&mut tape);
        let fwd = forward(&mut tape, &b, &model.spec, &batch, &mut Phase::Eval);
        let meta_w = tape.value(fwd.meta_weights.expect("late fusion"));
        let fuse_w = tape.value(fwd.fuse_weights.expect("late fusion"));
        for (r, &i) in chunk.iter().enumerate() {
            let row = &data.rows[i];
            out.ids.push(format!("{}:{}", row.course, row.student));
            let weights = meta_w.row(r);
            out.slice_weights.push(
                layout
                    .iter()
                    .map(|(_, range)| weights[range.clone()].iter().sum())
                    .collect(),
            );
            let fused = fuse_w.row(r);
            out.behavior_mass.push(fused[..split].iter().sum());
            out.meta_mass.push(fused[split..].iter().sum());
        }
    }
    Ok(out)
}

/// A model bundled with the statistics needed to featurize unseen courses
/// exactly the way its training data was featurized.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: Model,
    pub behavior_stats: crate::features::NormStats,
    pub meta_stats: Option<crate::meta::MetaStats>,
    pub report: TrainReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckConfig};
    use rand::Rng as _;

    fn spec_bo(layers: usize, units: usize, seed: u64) -> ArchitectureSpec {
        ArchitectureSpec::bo(layers, units, seed)
    }

    /// Random rows in [0, 1] with the padded tail masked; labels alternate
    /// unless a separation is requested, in which case failing rows live
    /// near 0.9 and passing rows near 0.1.
    fn random_dataset(
        n: usize,
        week_count: usize,
        meta_dim: usize,
        separable: bool,
        seed: u64,
    ) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let mut data = Dataset::new(week_count, meta_dim).unwrap();
        for i in 0..n {
            let label = if i % 2 == 0 { Label::Fail } else { Label::Pass };
            let kept = 1 + rng.gen_range(0..week_count);
            let mut behavior = alloc::vec![MASK_VALUE; week_count * N_FEATURES];
            for j in 0..kept * N_FEATURES {
                behavior[j] = if separable {
                    let center: f64 = if label == Label::Fail { 0.9 } else { 0.1 };
                    (center + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0)
                } else {
                    rng.gen_range(0.0..1.0)
                };
            }
            let meta: Vec<f64> = (0..meta_dim).map(|_| rng.gen_range(0.0..1.0)).collect();
            data.push("course-01", format!("s{i}"), kept, behavior, meta, label)
                .unwrap();
        }
        data
    }

    fn small_meta_spec(kind: ArchKind) -> ArchitectureSpec {
        let mut spec = match kind {
            ArchKind::Bo => ArchitectureSpec::bo(1, 3, 5),
            ArchKind::Btm => ArchitectureSpec::btm(1, 3, 5),
            ArchKind::Bsm => ArchitectureSpec::bsm(1, 2, alloc::vec![5], 5),
        };
        // Duration + level + language only: a 6-wide meta vector keeps the
        // attention and projection tensors small.
        spec.meta_slices = [true, true, true, false, false, false];
        spec.attention_hidden = 4;
        spec.projection_width = 6;
        spec
    }

    #[test]
    fn behavior_only_widths_follow_the_recipe() {
        let model = build_model(&spec_bo(2, 32, 1)).unwrap();
        assert_eq!(model.store.get("bilstm0/fw/wx").shape(), (45, 128));
        assert_eq!(model.store.get("bilstm0/bw/wh").shape(), (32, 128));
        assert_eq!(model.store.get("bilstm1/fw/wx").shape(), (64, 128));
        assert_eq!(model.store.get("out/w").shape(), (64, 1));
        assert!(!model.store.contains("meta_att/w"));
    }

    #[test]
    fn early_fusion_widens_the_input_by_the_meta_vector() {
        let spec = ArchitectureSpec::btm(1, 32, 1);
        assert_eq!(spec.meta_dim(), 124);
        assert_eq!(spec.input_width(), 169);
        let model = build_model(&spec).unwrap();
        assert_eq!(model.store.get("bilstm0/fw/wx").shape(), (169, 128));
    }

    #[test]
    fn late_fusion_widths_follow_the_recipe() {
        let spec = ArchitectureSpec::bsm(1, 32, alloc::vec![256, 64], 1);
        let model = build_model(&spec).unwrap();
        // Meta branch: attention concat doubles 124, projections meet at 256,
        // the fused pair re-attends to 2 x 512 = 1024.
        assert_eq!(model.store.get("proj_meta/d1/w").shape(), (248, 256));
        assert_eq!(model.store.get("proj_behavior/d1/w").shape(), (64, 256));
        assert_eq!(model.store.get("head0/w").shape(), (1024, 256));
        assert_eq!(model.store.get("head1/w").shape(), (256, 64));
        assert_eq!(model.store.get("out/w").shape(), (64, 1));
    }

    #[test]
    fn meta_models_reject_an_empty_slice_set() {
        for kind in [ArchKind::Btm, ArchKind::Bsm] {
            let mut spec = small_meta_spec(kind);
            spec.meta_slices = [false; N_META_SLICES];
            assert!(matches!(build_model(&spec), Err(CoreError::Config(_))));
        }
    }

    #[test]
    fn spec_validation_rejects_degenerate_settings() {
        assert!(build_model(&spec_bo(0, 4, 1)).is_err());
        assert!(build_model(&spec_bo(1, 0, 1)).is_err());
        let mut bad_dropout = spec_bo(1, 4, 1);
        bad_dropout.dropout = 1.0;
        assert!(build_model(&bad_dropout).is_err());
        let mut zero_window = spec_bo(1, 4, 1);
        zero_window.bptt_window = Some(0);
        assert!(build_model(&zero_window).is_err());
    }

    #[test]
    fn one_week_input_yields_a_probability() {
        let model = build_model(&spec_bo(1, 4, 9)).unwrap();
        let mut data = Dataset::new(1, 0).unwrap();
        data.push(
            "c",
            "s0",
            1,
            alloc::vec![0.5; N_FEATURES],
            Vec::new(),
            Label::Pass,
        )
        .unwrap();
        let p = predict(&model, &data, &[0]).unwrap();
        assert!(p[0] > 0.0 && p[0] < 1.0);
    }

    #[test]
    fn early_fusion_extends_behavior_only_exactly() {
        // With an all-zero meta vector and zeroed meta input weights, the
        // early-fusion net is the behavior-only net bit for bit.
        let bo = build_model(&spec_bo(2, 4, 11)).unwrap();
        let mut spec = ArchitectureSpec::btm(2, 4, 12);
        spec.meta_slices = [true, true, false, false, false, false];
        let mut btm = build_model(&spec).unwrap();
        let m = spec.meta_dim();
        assert_eq!(m, 4);

        for name in bo.store.names().map(String::from).collect::<Vec<_>>() {
            let src = bo.store.get(&name).clone();
            let dst = btm.store.get_mut(&name);
            if name.starts_with("bilstm0") && name.ends_with("/wx") {
                // First 45 input rows from the behavior net, meta rows zero.
                for i in 0..N_FEATURES {
                    for j in 0..src.cols() {
                        dst.set(i, j, src.at(i, j));
                    }
                }
                for i in N_FEATURES..N_FEATURES + m {
                    for j in 0..src.cols() {
                        dst.set(i, j, 0.0);
                    }
                }
            } else {
                *dst = src;
            }
        }

        let mut data = random_dataset(6, 3, m, false, 13);
        // Zero every meta value so the extra columns carry nothing.
        for row in data.rows.iter_mut() {
            row.meta.fill(0.0);
        }
        let p_bo = predict(&bo, &data, &[0, 1, 2, 3, 4, 5]).unwrap();
        let p_btm = predict(&btm, &data, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(p_bo, p_btm);
    }

    #[test]
    fn early_fusion_masks_meta_on_padded_weeks() {
        let mut data = Dataset::new(3, 2).unwrap();
        let mut behavior = alloc::vec![MASK_VALUE; 3 * N_FEATURES];
        for v in behavior.iter_mut().take(N_FEATURES) {
            *v = 0.4;
        }
        data.push("c", "s0", 1, behavior, alloc::vec![0.7, 0.2], Label::Pass)
            .unwrap();
        let mut full = alloc::vec![0.3; 3 * N_FEATURES];
        full[2] = 0.9;
        data.push("c", "s1", 3, full, alloc::vec![0.1, 0.8], Label::Fail)
            .unwrap();

        let batch = data.batch(&[0, 1], ArchKind::Btm);
        assert_eq!(batch.steps.len(), 3);
        assert_eq!(batch.steps[0].shape(), (2, N_FEATURES + 2));
        // Active week: meta appended.
        assert_eq!(batch.steps[0].at(0, N_FEATURES), 0.7);
        // Padded week: the whole row is the mask value, meta included.
        assert!(batch.steps[1].row(0).iter().all(|&v| v == MASK_VALUE));
        assert_eq!(batch.steps[1].at(1, N_FEATURES + 1), 0.8);
        assert_eq!(*batch.targets, alloc::vec![0.0, 1.0]);
    }

    #[test]
    fn batches_trim_to_the_longest_kept_prefix() {
        let data = random_dataset(5, 8, 0, false, 17);
        let weeks = (0..5).map(|i| data.rows[i].kept_weeks).max().unwrap();
        assert!(weeks < 8, "fixture should not fill all weeks");
        let batch = data.batch(&[0, 1, 2, 3, 4], ArchKind::Bo);
        assert_eq!(batch.steps.len(), weeks);
    }

    #[test]
    fn predictions_ignore_batch_companions() {
        for kind in [ArchKind::Bo, ArchKind::Btm, ArchKind::Bsm] {
            let spec = small_meta_spec(kind);
            let model = build_model(&spec).unwrap();
            let data = random_dataset(7, 5, spec.meta_dim(), false, 19);
            let idxs: Vec<usize> = (0..7).collect();
            let together = predict(&model, &data, &idxs).unwrap();
            for (i, &expected) in together.iter().enumerate() {
                let alone = predict(&model, &data, &[i]).unwrap();
                assert_eq!(alone[0], expected, "{kind} row {i}");
            }
        }
    }

    #[test]
    fn appending_padded_weeks_changes_nothing() {
        let spec = small_meta_spec(ArchKind::Bsm);
        let model = build_model(&spec).unwrap();
        let short = random_dataset(4, 3, spec.meta_dim(), false, 23);
        let mut long = Dataset::new(6, spec.meta_dim()).unwrap();
        for row in &short.rows {
            let mut behavior = alloc::vec![MASK_VALUE; 6 * N_FEATURES];
            behavior[..3 * N_FEATURES].copy_from_slice(&row.behavior);
            long.push(
                row.course.clone(),
                row.student.clone(),
                row.kept_weeks,
                behavior,
                row.meta.clone(),
                row.label,
            )
            .unwrap();
        }
        let idxs = [0, 1, 2, 3];
        assert_eq!(
            predict(&model, &short, &idxs).unwrap(),
            predict(&model, &long, &idxs).unwrap()
        );
    }

    #[test]
    fn mismatched_meta_width_is_rejected() {
        let spec = small_meta_spec(ArchKind::Bsm);
        let model = build_model(&spec).unwrap();
        let data = random_dataset(3, 2, spec.meta_dim() + 1, false, 29);
        assert!(matches!(
            predict(&model, &data, &[0]),
            Err(CoreError::Config(_))
        ));
    }

    #[test]
    fn gradients_match_numeric_for_all_architectures() {
        for kind in [ArchKind::Bo, ArchKind::Btm, ArchKind::Bsm] {
            let mut spec = small_meta_spec(kind);
            spec.bilstm_layers = 2;
            let mut model = build_model(&spec).unwrap();
            // Varied kept weeks exercise the masked paths of the recurrence.
            let data = random_dataset(3, 3, spec.meta_dim(), false, 31);
            let batch = data.batch(&[0, 1, 2], spec.kind);
            let spec_c = spec.clone();
            let report = grad_check(&mut model.store, &GradCheckConfig::default(), |tape, b| {
                let out = forward(tape, b, &spec_c, &batch, &mut Phase::Eval);
                tape.mean_bce(out.prob, batch.targets.clone())
            });
            assert!(
                report.max_rel_err < 1e-4,
                "{kind} err {} at {}[{}]",
                report.max_rel_err,
                report.worst_param,
                report.worst_coord
            );
        }
    }

    #[test]
    fn training_is_reproducible_and_seed_sensitive() {
        let data = random_dataset(16, 3, 0, true, 37);
        let train_idx: Vec<usize> = (0..12).collect();
        let val_idx: Vec<usize> = (12..16).collect();
        let cfg = TrainConfig {
            batch_size: 4,
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let run = |seed: u64| {
            let mut model = build_model(&spec_bo(1, 3, seed)).unwrap();
            let report = train(&mut model, &data, &train_idx, &val_idx, &cfg).unwrap();
            (model.store.snapshot(), report)
        };
        let (params_a, report_a) = run(7);
        let (params_b, report_b) = run(7);
        assert_eq!(params_a, params_b);
        for (a, b) in report_a.log.iter().zip(report_b.log.iter()) {
            assert_eq!(a.train_loss, b.train_loss);
            assert_eq!(a.val_bac, b.val_bac);
        }
        let (params_c, _) = run(8);
        assert_ne!(params_a, params_c);
    }

    #[test]
    fn patience_counts_epochs_past_the_best() {
        // Zero learning rate freezes the score at its starting value, so no
        // epoch ever improves on epoch zero and the run stops at `patience`.
        let data = random_dataset(12, 2, 0, false, 41);
        let mut model = build_model(&spec_bo(1, 2, 43)).unwrap();
        let before = model.store.snapshot();
        let cfg = TrainConfig {
            batch_size: 4,
            lr: 0.0,
            max_epochs: 50,
            patience: 5,
            seed: 1,
        };
        let report = train(&mut model, &data, &[0, 1, 2, 3, 4, 5, 6, 7], &[8, 9, 10, 11], &cfg)
            .unwrap();
        assert_eq!(report.log.len(), 5);
        assert!(report.stopped_early);
        assert_eq!(report.best_epoch, 0);
        assert_eq!(model.store.snapshot(), before);
    }

    #[test]
    fn overlapping_train_and_validation_rows_are_rejected() {
        let data = random_dataset(6, 2, 0, false, 47);
        let mut model = build_model(&spec_bo(1, 2, 1)).unwrap();
        let err = train(
            &mut model,
            &data,
            &[0, 1, 2],
            &[2, 3],
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Config(_)));
    }

    #[test]
    fn single_class_validation_is_rejected() {
        let data = random_dataset(6, 2, 0, false, 53);
        let mut model = build_model(&spec_bo(1, 2, 1)).unwrap();
        // Rows 0, 2 both fail.
        let err = train(
            &mut model,
            &data,
            &[1, 3, 4, 5],
            &[0, 2],
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Config(_)));
    }

    #[test]
    fn nan_parameters_surface_as_numeric_errors() {
        let mut model = build_model(&spec_bo(1, 2, 1)).unwrap();
        model.store.get_mut("out/w").set(0, 0, f64::NAN);
        let data = random_dataset(6, 2, 0, false, 59);
        assert!(matches!(
            predict(&model, &data, &[0]),
            Err(CoreError::Numeric(_))
        ));
        let err = train(
            &mut model,
            &data,
            &[0, 1, 2, 3],
            &[4, 5],
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Numeric(_)));
    }

    #[test]
    fn separable_classes_reach_a_perfect_score() {
        let data = random_dataset(40, 2, 0, true, 61);
        let (train_idx, val_idx) = course_label_split(
            &data,
            &(0..40).collect::<Vec<_>>(),
            0.2,
            derive_seed(61, "val"),
        )
        .unwrap();
        let mut model = build_model(&spec_bo(1, 4, 67)).unwrap();
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 120,
            patience: 120,
            seed: 3,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &data, &train_idx, &val_idx, &cfg).unwrap();
        assert_eq!(report.best_val_bac, 1.0, "log: {:?}", report.log.last());
        // The kept parameters really score 1.0 on both slices.
        let probs = predict(&model, &data, &val_idx).unwrap();
        let bac = balanced_accuracy(&predict_labels(&probs), &data.labels(&val_idx)).unwrap();
        assert_eq!(bac, 1.0);
        let probs = predict(&model, &data, &train_idx).unwrap();
        let bac = balanced_accuracy(&predict_labels(&probs), &data.labels(&train_idx)).unwrap();
        assert_eq!(bac, 1.0);
    }

    #[test]
    fn zero_epoch_fine_tune_is_the_identity() {
        let spec = small_meta_spec(ArchKind::Bsm);
        let mut model = build_model(&spec).unwrap();
        let data = random_dataset(12, 3, spec.meta_dim(), false, 71);
        let idxs: Vec<usize> = (0..12).collect();
        let before = predict(&model, &data, &idxs).unwrap();
        let report = fine_tune(
            &mut model,
            &data,
            &idxs,
            &FineTuneConfig {
                max_epochs: 0,
                ..FineTuneConfig::default()
            },
        )
        .unwrap();
        assert!(report.log.is_empty());
        assert_eq!(predict(&model, &data, &idxs).unwrap(), before);
    }

    #[test]
    fn fine_tune_restarts_the_optimizer() {
        let data = random_dataset(20, 2, 0, true, 73);
        let idxs: Vec<usize> = (0..20).collect();
        let (train_idx, val_idx) = course_label_split(&data, &idxs, 0.2, 1).unwrap();
        let mut model = build_model(&spec_bo(1, 2, 79)).unwrap();
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 4,
            ..TrainConfig::default()
        };
        train(&mut model, &data, &train_idx, &val_idx, &cfg).unwrap();
        let steps_before = model.store.step_count();
        assert!(steps_before > 0);
        let report = fine_tune(
            &mut model,
            &data,
            &idxs,
            &FineTuneConfig {
                batch_size: 8,
                max_epochs: 2,
                patience: 2,
                ..FineTuneConfig::default()
            },
        )
        .unwrap();
        // Fresh moments: the counter restarted from zero.
        let batches_per_epoch = (18 + 7) / 8;
        assert_eq!(
            model.store.step_count(),
            (report.log.len() * batches_per_epoch) as u64
        );
    }

    #[test]
    fn grid_search_caches_layouts_and_keeps_the_best() {
        let mut template = small_meta_spec(ArchKind::Bsm);
        template.head_dense = alloc::vec![4];
        let grid = SearchGrid {
            bilstm_layers: alloc::vec![1],
            bilstm_units: alloc::vec![2, 3],
            head_dense: alloc::vec![alloc::vec![4]],
            embedding_dims: alloc::vec![(30, 30, 58)],
            meta_slices: alloc::vec![template.meta_slices],
        };
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let mut calls = 0usize;
        let outcome = grid_search(&template, &grid, &cfg, |meta_config, slices| {
            calls += 1;
            assert_eq!(meta_config.title_dim, 30);
            let mut spec = template.clone();
            spec.meta_slices = *slices;
            let data = random_dataset(20, 3, spec.meta_dim(), true, 83);
            let (train_idx, val_idx) =
                course_label_split(&data, &(0..20).collect::<Vec<_>>(), 0.2, 2)?;
            Ok(CandidateData {
                data,
                train_idx,
                val_idx,
            })
        })
        .unwrap();
        // Two candidates share one meta layout, so the supplier ran once.
        assert_eq!(calls, 1);
        assert_eq!(outcome.scores.len(), 2);
        assert_eq!(outcome.scores[0].spec.bilstm_units, 2);
        assert_eq!(outcome.scores[1].spec.bilstm_units, 3);
        let best_score = outcome
            .scores
            .iter()
            .map(|s| s.val_bac)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(outcome.report.best_val_bac, best_score);
    }

    #[test]
    fn grid_search_is_reproducible() {
        let template = spec_bo(1, 2, 89);
        let grid = SearchGrid {
            bilstm_layers: alloc::vec![1],
            bilstm_units: alloc::vec![2, 3],
            ..SearchGrid::default()
        };
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let run = || {
            grid_search(&template, &grid, &cfg, |_, _| {
                let data = random_dataset(16, 2, 0, false, 97);
                let (train_idx, val_idx) =
                    course_label_split(&data, &(0..16).collect::<Vec<_>>(), 0.25, 3)?;
                Ok(CandidateData {
                    data,
                    train_idx,
                    val_idx,
                })
            })
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.spec, b.spec);
        assert_eq!(a.model.store.snapshot(), b.model.store.snapshot());
    }

    #[test]
    fn attention_masses_partition_the_distribution() {
        let spec = small_meta_spec(ArchKind::Bsm);
        let model = build_model(&spec).unwrap();
        let data = random_dataset(5, 3, spec.meta_dim(), false, 101);
        let idxs: Vec<usize> = (0..5).collect();
        let att = extract_attention(&model, &data, &idxs).unwrap();
        assert_eq!(att.slices, alloc::vec!["Duration", "Level", "Language"]);
        for r in 0..5 {
            let total: f64 = att.slice_weights[r].iter().sum();
            assert!((total - 1.0).abs() < 1e-9, "row {r} sums to {total}");
            let split = att.behavior_mass[r] + att.meta_mass[r];
            assert!((split - 1.0).abs() < 1e-9);
        }
        let means = att.mean_slice_weights();
        assert_eq!(means.len(), 3);
        let total: f64 = means.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);

        let bo = build_model(&spec_bo(1, 2, 1)).unwrap();
        assert!(matches!(
            extract_attention(&bo, &data, &idxs),
            Err(CoreError::Config(_))
        ));
    }

    #[test]
    fn truncated_backprop_changes_training_but_not_inference() {
        let mut data = random_dataset(8, 4, 0, false, 103);
        // Every sequence runs the full four weeks so a window of two has
        // boundaries to cut.
        for row in data.rows.iter_mut() {
            row.kept_weeks = 4;
            for v in row.behavior.iter_mut() {
                if *v == MASK_VALUE {
                    *v = 0.5;
                }
            }
        }
        let idxs: Vec<usize> = (0..8).collect();
        let mut spec = spec_bo(1, 2, 107);
        let full = build_model(&spec).unwrap();
        spec.bptt_window = Some(2);
        let windowed = build_model(&spec).unwrap();
        // Identical parameters, identical forward pass.
        assert_eq!(
            predict(&full, &data, &idxs).unwrap(),
            predict(&windowed, &data, &idxs).unwrap()
        );
        // But the window cuts gradient paths through the recurrence.
        let grads_of = |model: &Model| {
            let batch = data.batch(&idxs, ArchKind::Bo);
            let mut tape = Tape::new();
            let b = model.store.bind(&mut tape);
            let out = forward(&mut tape, &b, &model.spec, &batch, &mut Phase::Eval);
            let loss = tape.mean_bce(out.prob, batch.targets.clone());
            let grads = tape.backward(loss);
            grads.get(b.var("bilstm0/fw/wx")).unwrap().clone()
        };
        assert_ne!(grads_of(&full), grads_of(&windowed));
    }
}
