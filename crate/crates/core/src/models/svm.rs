//! Linear one-vs-rest SVM: ten independent binary hinge-loss classifiers
//! trained by full-batch subgradient descent with an L2 penalty on the
//! weight vector. Prediction takes the argmax of the decision values.

use ndarray::{Array1, Array2};

use crate::corpus::Dataset;
use crate::models::{
    canonicalize, round_to_f32, round_to_f32_vec, Hyperparameters, LinearModel, ModelError,
    ModelKind, Objective, Standardizer, TrainedModel, CLASS_COUNT,
};

/// Binary hinge objective for one one-vs-rest problem over flattened
/// `[w (D), b]` parameters. Labels are +/-1.
pub struct SvmObjective {
    pub features: Array2<f64>,
    pub signs: Vec<f64>,
    pub l2: f64,
}

impl SvmObjective {
    fn margins(&self, w: &Array1<f64>, b: f64) -> Array1<f64> {
        let mut m = self.features.dot(w);
        m.mapv_inplace(|f| f + b);
        m
    }

    fn loss_arrays(&self, w: &Array1<f64>, b: f64) -> f64 {
        let n = self.features.nrows() as f64;
        let decisions = self.margins(w, b);
        let hinge: f64 = decisions
            .iter()
            .zip(&self.signs)
            .map(|(&f, &y)| (1.0 - y * f).max(0.0))
            .sum();
        hinge / n + 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>()
    }

    /// Subgradient: violations (`1 - y f > 0`) contribute `-y x`; exactly at
    /// the kink the contribution is zero.
    fn grad_arrays(&self, w: &Array1<f64>, b: f64) -> (Array1<f64>, f64) {
        let n = self.features.nrows() as f64;
        let decisions = self.margins(w, b);
        let mut grad_w = w * self.l2;
        let mut grad_b = 0.0;
        for ((row, &f), &y) in self
            .features
            .rows()
            .into_iter()
            .zip(decisions.iter())
            .zip(&self.signs)
        {
            if 1.0 - y * f > 0.0 {
                grad_w.scaled_add(-y / n, &row);
                grad_b += -y / n;
            }
        }
        (grad_w, grad_b)
    }
}

impl Objective for SvmObjective {
    fn dim(&self) -> usize {
        self.features.ncols() + 1
    }

    fn loss(&self, params: &[f64]) -> f64 {
        let d = self.features.ncols();
        let w = Array1::from_vec(params[..d].to_vec());
        self.loss_arrays(&w, params[d])
    }

    fn grad(&self, params: &[f64]) -> Vec<f64> {
        let d = self.features.ncols();
        let w = Array1::from_vec(params[..d].to_vec());
        let (gw, gb) = self.grad_arrays(&w, params[d]);
        gw.iter().copied().chain(std::iter::once(gb)).collect()
    }
}

/// Trains the ten one-vs-rest hinge classifiers on standardized features,
/// folding back to raw coordinates on exit. Same determinism contract as
/// the other trainers.
pub fn train_svm_linear(
    train_set: &Dataset,
    hp: &Hyperparameters,
) -> Result<TrainedModel, ModelError> {
    debug_assert_eq!(hp.kind, ModelKind::SvmLinear);
    hp.validate()?;
    let ds = canonicalize(train_set);
    let standardizer = Standardizer::fit(&ds.features);
    let features = standardizer.transform(&ds.features);
    let d = ds.feature_dim();
    let mut coef = Array2::zeros((CLASS_COUNT, d));
    let mut bias = Array1::zeros(CLASS_COUNT);
    for class in 0..CLASS_COUNT {
        let objective = SvmObjective {
            features: features.clone(),
            signs: ds
                .labels
                .iter()
                .map(|&l| if l == class { 1.0 } else { -1.0 })
                .collect(),
            l2: hp.l2,
        };
        let mut w = Array1::zeros(d);
        let mut b = 0.0;
        for epoch in 0..hp.epochs {
            let loss = objective.loss_arrays(&w, b);
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch });
            }
            let (gw, gb) = objective.grad_arrays(&w, b);
            w.scaled_add(-hp.learning_rate, &gw);
            b -= hp.learning_rate * gb;
        }
        coef.row_mut(class).assign(&w);
        bias[class] = b;
    }
    standardizer.fold_into_linear(&mut coef, &mut bias);
    round_to_f32(&mut coef);
    round_to_f32_vec(&mut bias);
    Ok(TrainedModel::Svm(LinearModel { coef, bias }))
}
