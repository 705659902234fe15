//! From-scratch trainable classifiers with lossless weight export/import.
//!
//! Three model kinds cover the feedforward end of the capacity experiments:
//! multinomial logistic regression, a linear one-vs-rest SVM trained by
//! hinge subgradient descent, and an MLP with logistic hidden layers trained
//! by Adam. All training runs in f64 and is bit-deterministic: trainers
//! canonicalize sample order on entry (so shuffled inputs cannot change the
//! result) and round every parameter to f32 precision on exit, which makes
//! the export/import round trip through a [`WeightStore`] exact.
//!
//! Weight counts follow the convention of the capacity experiments: bias
//! vectors exist, train, and serialize, but are neither counted nor used as
//! embedding targets (their tensors carry the `.bias` name suffix the
//! selectors skip).

mod lr;
mod mlp;
mod svm;

pub use lr::{train_lr, LrObjective};
pub use mlp::{train_mlp, MlpObjective};
pub use svm::{train_svm_linear, SvmObjective};

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1};

use crate::corpus::Dataset;
use crate::weightstore::{Role, StoreError, TensorRecord, WeightStore};

pub const CLASS_COUNT: usize = 10;

#[derive(Debug)]
pub enum ModelError {
    NonFiniteLoss { epoch: usize },
    DimMismatch { expected: usize, actual: usize },
    EmptyTestSet,
    MissingTensor(String),
    ShapeMismatch { name: String, detail: String },
    RoleMismatch { name: String, expected: Role },
    InvalidHyperparameters(String),
    EmptyGrid,
    AllCellsFailed,
    Store(StoreError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonFiniteLoss { epoch } => {
                write!(f, "loss became non-finite at epoch {epoch} (divergent step?)")
            }
            Self::DimMismatch { expected, actual } => {
                write!(f, "feature dim {actual} does not match model dim {expected}")
            }
            Self::EmptyTestSet => write!(f, "cannot evaluate on an empty test set"),
            Self::MissingTensor(name) => write!(f, "store is missing tensor {name:?}"),
            Self::ShapeMismatch { name, detail } => {
                write!(f, "tensor {name:?} shape mismatch: {detail}")
            }
            Self::RoleMismatch { name, expected } => {
                write!(f, "tensor {name:?} must have role {expected:?}")
            }
            Self::InvalidHyperparameters(msg) => write!(f, "invalid hyperparameters: {msg}"),
            Self::EmptyGrid => write!(f, "grid search needs at least one cell"),
            Self::AllCellsFailed => write!(f, "every grid cell failed to train"),
            Self::Store(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<StoreError> for ModelError {
    fn from(e: StoreError) -> Self {
        ModelError::Store(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Lr,
    SvmLinear,
    Mlp,
}

impl ModelKind {
    /// CLI spelling: `lr`, `svm`, or `mlp`.
    pub fn parse(spec: &str) -> Result<Self, ModelError> {
        match spec {
            "lr" => Ok(ModelKind::Lr),
            "svm" => Ok(ModelKind::SvmLinear),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(ModelError::InvalidHyperparameters(format!(
                "unknown model kind {other:?} (expected lr, svm, or mlp)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::SvmLinear => "svm",
            ModelKind::Mlp => "mlp",
        }
    }
}

/// Trainer knobs. `epochs` plays the role of `max_iter`; `l2` is the
/// regularization strength (a C-equivalent maps through `l2 = 1/C` scaling
/// in the default grids); `batch_size = 0` means full batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub kind: ModelKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub hidden_sizes: Vec<usize>,
    pub batch_size: usize,
    pub seed: u64,
}

impl Hyperparameters {
    pub fn lr_defaults(seed: u64) -> Self {
        Hyperparameters {
            kind: ModelKind::Lr,
            learning_rate: 500.0,
            epochs: 300,
            l2: 1e-6,
            hidden_sizes: vec![],
            batch_size: 0,
            seed,
        }
    }

    pub fn svm_defaults(seed: u64) -> Self {
        Hyperparameters {
            kind: ModelKind::SvmLinear,
            learning_rate: 100.0,
            epochs: 400,
            l2: 1e-4,
            hidden_sizes: vec![],
            batch_size: 0,
            seed,
        }
    }

    pub fn mlp_defaults(seed: u64) -> Self {
        Hyperparameters {
            kind: ModelKind::Mlp,
            learning_rate: 3e-3,
            epochs: 300,
            l2: 1e-5,
            hidden_sizes: vec![128, 10],
            batch_size: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate > 0.0) {
            return Err(ModelError::InvalidHyperparameters(
                "learning rate must be positive".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(ModelError::InvalidHyperparameters(
                "epochs must be positive".into(),
            ));
        }
        if self.l2 < 0.0 || !self.l2.is_finite() {
            return Err(ModelError::InvalidHyperparameters(
                "l2 strength must be a finite non-negative real".into(),
            ));
        }
        if self.kind == ModelKind::Mlp && self.hidden_sizes.is_empty() {
            return Err(ModelError::InvalidHyperparameters(
                "MLP needs at least one hidden layer".into(),
            ));
        }
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(ModelError::InvalidHyperparameters(
                "hidden sizes must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The grid shapes used by `train --grid`, mirroring the published search
/// spaces (solvers collapsed onto the one implementation per kind).
pub fn default_grid(kind: ModelKind, seed: u64) -> Vec<Hyperparameters> {
    match kind {
        // 5 C values x 6 max_iter values = 30 cells.
        ModelKind::Lr => {
            let mut grid = Vec::new();
            for c in [0.2, 0.3, 0.5, 0.7, 0.8] {
                for max_iter in [50usize, 80, 100, 120, 200, 500] {
                    let mut hp = Hyperparameters::lr_defaults(seed);
                    hp.l2 = 1e-6 / c;
                    hp.epochs = max_iter;
                    grid.push(hp);
                }
            }
            grid
        }
        // 3 C values; the linear kernel is the implementation.
        ModelKind::SvmLinear => [0.1, 1.0, 10.0]
            .iter()
            .map(|&c| {
                let mut hp = Hyperparameters::svm_defaults(seed);
                hp.l2 = 1e-4 / c;
                hp
            })
            .collect(),
        // First hidden width x alpha; the second hidden layer stays at 10.
        ModelKind::Mlp => {
            let mut grid = Vec::new();
            for width in [64usize, 96, 128] {
                for alpha in [0.0001, 0.05] {
                    let mut hp = Hyperparameters::mlp_defaults(seed);
                    hp.hidden_sizes = vec![width, 10];
                    hp.l2 = alpha;
                    grid.push(hp);
                }
            }
            grid
        }
    }
}

/// A single coefficient layer: `coef` is `CLASS_COUNT x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coef: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearModel {
    fn scores(&self, x: ArrayView1<f64>) -> Vec<f64> {
        (0..CLASS_COUNT)
            .map(|k| self.coef.row(k).dot(&x) + self.bias[k])
            .collect()
    }
}

/// Logistic hidden layers feeding a softmax output layer. Matrices are
/// stored input-major (`in x out`).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub hidden: Vec<(Array2<f64>, Array1<f64>)>,
    pub output: (Array2<f64>, Array1<f64>),
}

impl MlpModel {
    fn scores(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let mut activation = x.to_owned();
        for (w, b) in &self.hidden {
            let mut z = activation.dot(w) + b;
            z.mapv_inplace(logistic);
            activation = z;
        }
        let (w, b) = &self.output;
        (activation.dot(w) + b).to_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Lr(LinearModel),
    Svm(LinearModel),
    Mlp(MlpModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Lr(_) => ModelKind::Lr,
            TrainedModel::Svm(_) => ModelKind::SvmLinear,
            TrainedModel::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            TrainedModel::Lr(m) | TrainedModel::Svm(m) => m.coef.ncols(),
            TrainedModel::Mlp(m) => m.hidden[0].0.nrows(),
        }
    }

    /// Coefficient-matrix weight count, biases excluded, matching the
    /// published per-model counts.
    pub fn weight_count(&self) -> u64 {
        match self {
            TrainedModel::Lr(m) | TrainedModel::Svm(m) => m.coef.len() as u64,
            TrainedModel::Mlp(m) => {
                m.hidden.iter().map(|(w, _)| w.len() as u64).sum::<u64>()
                    + m.output.0.len() as u64
            }
        }
    }

    /// Raw per-class decision scores for one sample.
    pub fn decision_scores(&self, x: ArrayView1<f64>) -> Vec<f64> {
        match self {
            TrainedModel::Lr(m) | TrainedModel::Svm(m) => m.scores(x),
            TrainedModel::Mlp(m) => m.scores(x),
        }
    }

    /// Softmax class probabilities; `None` for the margin-based SVM.
    pub fn predict_proba(&self, x: ArrayView1<f64>) -> Option<Vec<f64>> {
        match self {
            TrainedModel::Svm(_) => None,
            _ => Some(softmax(&self.decision_scores(x))),
        }
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> usize {
        argmax_nan_aware(&self.decision_scores(x))
    }
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Max-subtracted softmax. NaN scores propagate to NaN probabilities;
/// downstream argmax handles them.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // All -inf, or a NaN/Inf present: fall back to the direct form so
        // NaN propagates rather than poisoning everything via `max`.
        let exps: Vec<f64> = scores.iter().map(|&z| z.exp()).collect();
        let sum: f64 = exps.iter().sum();
        return exps.iter().map(|&e| e / sum).collect();
    }
    let exps: Vec<f64> = scores.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Deterministic argmax under the NaN rule: any NaN score loses to any
/// non-NaN score; if every score is NaN the fallback is class 0. Ties go to
/// the lower index.
pub fn argmax_nan_aware(scores: &[f64]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map_or(0, |(i, _)| i)
}

/// Accuracy plus the 10x10 confusion matrix (`confusion[true][predicted]`).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: [[u64; CLASS_COUNT]; CLASS_COUNT],
}

impl EvalReport {
    pub fn test_size(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..CLASS_COUNT).map(|i| self.confusion[i][i]).sum()
    }
}

/// Scores the model on a labeled test set. Non-finite weights never crash:
/// NaN scores lose under [`argmax_nan_aware`], so accuracy stays in [0, 1]
/// for any store the codec can produce, including n = 32.
pub fn evaluate(model: &TrainedModel, test: &Dataset) -> Result<EvalReport, ModelError> {
    if test.is_empty() {
        return Err(ModelError::EmptyTestSet);
    }
    if test.feature_dim() != model.feature_dim() {
        return Err(ModelError::DimMismatch {
            expected: model.feature_dim(),
            actual: test.feature_dim(),
        });
    }
    let mut confusion = [[0u64; CLASS_COUNT]; CLASS_COUNT];
    for (row, &label) in test.features.rows().into_iter().zip(&test.labels) {
        let predicted = argmax_nan_aware(&model.decision_scores(row));
        confusion[label][predicted] += 1;
    }
    let total: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..CLASS_COUNT).map(|i| confusion[i][i]).sum();
    Ok(EvalReport {
        accuracy: correct as f64 / total as f64,
        confusion,
    })
}

/// Loss surface abstraction shared by the trainers and the
/// finite-difference gradient checks.
pub trait Objective {
    fn dim(&self) -> usize;
    fn loss(&self, params: &[f64]) -> f64;
    fn grad(&self, params: &[f64]) -> Vec<f64>;
}

/// Training is invariant to input row order: rows are re-sorted into a
/// canonical order (label, then feature bit patterns) before any arithmetic,
/// so permuted datasets produce bit-identical models.
pub(crate) fn canonicalize(ds: &Dataset) -> Dataset {
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.sort_by(|&a, &b| {
        ds.labels[a].cmp(&ds.labels[b]).then_with(|| {
            let ra = ds.features.row(a);
            let rb = ds.features.row(b);
            for (x, y) in ra.iter().zip(rb.iter()) {
                match x.to_bits().cmp(&y.to_bits()) {
                    std::cmp::Ordering::Equal => continue,
                    ord => return ord,
                }
            }
            std::cmp::Ordering::Equal
        })
    });
    let mut features = Array2::zeros((ds.len(), ds.feature_dim()));
    let mut labels = Vec::with_capacity(ds.len());
    for (out_r, &r) in idx.iter().enumerate() {
        features.row_mut(out_r).assign(&ds.features.row(r));
        labels.push(ds.labels[r]);
    }
    Dataset {
        features,
        labels,
        class_names: ds.class_names.clone(),
    }
}

/// Rounds every parameter through f32 so serialization is lossless.
pub(crate) fn round_to_f32(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v as f32 as f64);
}

pub(crate) fn round_to_f32_vec(a: &mut Array1<f64>) {
    a.mapv_inplace(|v| v as f32 as f64);
}

/// Per-column standardization applied inside the trainers.
///
/// Raw feature columns (histogram entries near 1/256) leave gradient
/// descent hopelessly ill-conditioned, so trainers optimize in standardized
/// coordinates and fold the affine transform back into the learned
/// parameters on exit: `w x' + b = (w / s) x + (b - w m / s)`. The exported
/// model operates on raw features; the fold-back is exact algebra.
pub(crate) struct Standardizer {
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl Standardizer {
    pub(crate) fn fit(features: &Array2<f64>) -> Self {
        let n = features.nrows() as f64;
        let mean = features.sum_axis(ndarray::Axis(0)) / n;
        let mut scale = Array1::zeros(features.ncols());
        for (j, col) in features.columns().into_iter().enumerate() {
            let var: f64 = col.iter().map(|&v| (v - mean[j]) * (v - mean[j])).sum::<f64>() / n;
            scale[j] = var.sqrt().max(1e-12);
        }
        Standardizer { mean, scale }
    }

    pub(crate) fn transform(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut out = features.clone();
        for mut row in out.rows_mut() {
            for j in 0..row.len() {
                row[j] = (row[j] - self.mean[j]) / self.scale[j];
            }
        }
        out
    }

    /// Rewrites a linear layer trained on standardized inputs so it acts on
    /// raw inputs: divides each input coordinate's weights by its scale and
    /// shifts the bias by the folded mean term.
    ///
    /// `weights_by_class` is class-major (`K x D`, as in [`LinearModel`]).
    pub(crate) fn fold_into_linear(&self, coef: &mut Array2<f64>, bias: &mut Array1<f64>) {
        for (mut row, b) in coef.rows_mut().into_iter().zip(bias.iter_mut()) {
            let mut shift = 0.0;
            for j in 0..row.len() {
                row[j] /= self.scale[j];
                shift += row[j] * self.mean[j];
            }
            *b -= shift;
        }
    }

    /// Same fold-back for an input-major layer (`D x H`, as in the MLP's
    /// first hidden layer).
    pub(crate) fn fold_into_input_layer(&self, weights: &mut Array2<f64>, bias: &mut Array1<f64>) {
        for (j, mut row) in weights.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|w| w / self.scale[j]);
        }
        for h in 0..bias.len() {
            let shift: f64 = (0..weights.nrows())
                .map(|j| weights[(j, h)] * self.mean[j])
                .sum();
            bias[h] -= shift;
        }
    }
}

fn tensor_from_matrix(name: &str, role: Role, m: &Array2<f64>) -> TensorRecord {
    let dims = vec![m.nrows() as u32, m.ncols() as u32];
    let data: Vec<f32> = m.iter().map(|&v| v as f32).collect();
    TensorRecord::new(name, role, dims, data).expect("valid tensor by construction")
}

fn tensor_from_vector(name: &str, role: Role, v: &Array1<f64>) -> TensorRecord {
    let data: Vec<f32> = v.iter().map(|&x| x as f32).collect();
    TensorRecord::new(name, role, vec![v.len() as u32], data)
        .expect("valid tensor by construction")
}

/// Serializes a trained model into a weight store. Coefficient matrices
/// carry the role selectors target; bias vectors take the `.bias` suffix.
pub fn export_weights(model: &TrainedModel) -> WeightStore {
    let tensors = match model {
        TrainedModel::Lr(m) | TrainedModel::Svm(m) => vec![
            tensor_from_matrix("coef", Role::Output, &m.coef),
            tensor_from_vector("coef.bias", Role::Output, &m.bias),
        ],
        TrainedModel::Mlp(m) => {
            let mut tensors = Vec::new();
            for (i, (w, b)) in m.hidden.iter().enumerate() {
                tensors.push(tensor_from_matrix(&format!("hidden{i}"), Role::Hidden, w));
                tensors.push(tensor_from_vector(
                    &format!("hidden{i}.bias"),
                    Role::Hidden,
                    b,
                ));
            }
            tensors.push(tensor_from_matrix("output", Role::Output, &m.output.0));
            tensors.push(tensor_from_vector("output.bias", Role::Output, &m.output.1));
            tensors
        }
    };
    WeightStore::new(tensors).expect("exporter emits unique names")
}

fn fetch_matrix(
    store: &WeightStore,
    name: &str,
    role: Role,
) -> Result<Array2<f64>, ModelError> {
    let t = store
        .tensor_by_name(name)
        .ok_or_else(|| ModelError::MissingTensor(name.into()))?;
    if t.role() != role {
        return Err(ModelError::RoleMismatch {
            name: name.into(),
            expected: role,
        });
    }
    let dims = t.dims();
    if dims.len() != 2 {
        return Err(ModelError::ShapeMismatch {
            name: name.into(),
            detail: format!("expected rank 2, got {:?}", dims),
        });
    }
    let (r, c) = (dims[0] as usize, dims[1] as usize);
    let data: Vec<f64> = t.data().iter().map(|&v| v as f64).collect();
    Array2::from_shape_vec((r, c), data).map_err(|e| ModelError::ShapeMismatch {
        name: name.into(),
        detail: e.to_string(),
    })
}

fn fetch_vector(
    store: &WeightStore,
    name: &str,
    role: Role,
    expected_len: usize,
) -> Result<Array1<f64>, ModelError> {
    let t = store
        .tensor_by_name(name)
        .ok_or_else(|| ModelError::MissingTensor(name.into()))?;
    if t.role() != role {
        return Err(ModelError::RoleMismatch {
            name: name.into(),
            expected: role,
        });
    }
    if t.dims().len() != 1 || t.len() != expected_len {
        return Err(ModelError::ShapeMismatch {
            name: name.into(),
            detail: format!("expected [{exp}], got {:?}", t.dims(), exp = expected_len),
        });
    }
    Ok(Array1::from_iter(t.data().iter().map(|&v| v as f64)))
}

/// Rebuilds a model from an exported (or embedded) store. The inverse of
/// [`export_weights`]: the reconstructed model predicts identically to the
/// model that produced the store.
pub fn import_weights(kind: ModelKind, store: &WeightStore) -> Result<TrainedModel, ModelError> {
    match kind {
        ModelKind::Lr | ModelKind::SvmLinear => {
            let coef = fetch_matrix(store, "coef", Role::Output)?;
            if coef.nrows() != CLASS_COUNT {
                return Err(ModelError::ShapeMismatch {
                    name: "coef".into(),
                    detail: format!("expected {CLASS_COUNT} rows, got {}", coef.nrows()),
                });
            }
            let bias = fetch_vector(store, "coef.bias", Role::Output, CLASS_COUNT)?;
            let model = LinearModel { coef, bias };
            Ok(match kind {
                ModelKind::Lr => TrainedModel::Lr(model),
                _ => TrainedModel::Svm(model),
            })
        }
        ModelKind::Mlp => {
            let mut hidden = Vec::new();
            let mut layer = 0;
            while store.tensor_by_name(&format!("hidden{layer}")).is_some() {
                let w = fetch_matrix(store, &format!("hidden{layer}"), Role::Hidden)?;
                let b = fetch_vector(
                    store,
                    &format!("hidden{layer}.bias"),
                    Role::Hidden,
                    w.ncols(),
                )?;
                if let Some((prev_w, _)) = hidden.last() {
                    let prev: &Array2<f64> = prev_w;
                    if prev.ncols() != w.nrows() {
                        return Err(ModelError::ShapeMismatch {
                            name: format!("hidden{layer}"),
                            detail: format!(
                                "input dim {} does not chain from previous output {}",
                                w.nrows(),
                                prev.ncols()
                            ),
                        });
                    }
                }
                hidden.push((w, b));
                layer += 1;
            }
            if hidden.is_empty() {
                return Err(ModelError::MissingTensor("hidden0".into()));
            }
            let w_out = fetch_matrix(store, "output", Role::Output)?;
            if w_out.nrows() != hidden.last().unwrap().0.ncols() || w_out.ncols() != CLASS_COUNT
            {
                return Err(ModelError::ShapeMismatch {
                    name: "output".into(),
                    detail: format!(
                        "expected [{}, {CLASS_COUNT}], got [{}, {}]",
                        hidden.last().unwrap().0.ncols(),
                        w_out.nrows(),
                        w_out.ncols()
                    ),
                });
            }
            let b_out = fetch_vector(store, "output.bias", Role::Output, CLASS_COUNT)?;
            Ok(TrainedModel::Mlp(MlpModel {
                hidden,
                output: (w_out, b_out),
            }))
        }
    }
}

/// Dispatches to the right trainer for `hp.kind`.
pub fn train(train_set: &Dataset, hp: &Hyperparameters) -> Result<TrainedModel, ModelError> {
    match hp.kind {
        ModelKind::Lr => train_lr(train_set, hp),
        ModelKind::SvmLinear => train_svm_linear(train_set, hp),
        ModelKind::Mlp => train_mlp(train_set, hp),
    }
}

/// One evaluated grid cell; training failures are recorded, not fatal.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub hp: Hyperparameters,
    pub outcome: Result<f64, String>,
}

/// Exhaustive grid search. Best cell is the highest validation accuracy;
/// ties break toward the earlier cell in grid order.
pub fn grid_search(
    train_set: &Dataset,
    val_set: &Dataset,
    grid: &[Hyperparameters],
) -> Result<(Hyperparameters, Vec<GridCell>), ModelError> {
    if grid.is_empty() {
        return Err(ModelError::EmptyGrid);
    }
    let mut cells = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, hp) in grid.iter().enumerate() {
        let outcome = train(train_set, hp)
            .and_then(|m| evaluate(&m, val_set))
            .map(|r| r.accuracy)
            .map_err(|e| e.to_string());
        if let Ok(acc) = outcome {
            if best.map_or(true, |(_, b)| acc > b) {
                best = Some((i, acc));
            }
        }
        cells.push(GridCell {
            hp: hp.clone(),
            outcome,
        });
    }
    match best {
        Some((i, _)) => Ok((grid[i].clone(), cells)),
        None => Err(ModelError::AllCellsFailed),
    }
}
