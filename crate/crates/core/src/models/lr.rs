//! Multinomial logistic regression: softmax cross-entropy, full-batch
//! gradient descent, L2 penalty on the coefficient matrix (bias
//! unregularized). The single coefficient layer carries the Output role.

use ndarray::{Array1, Array2, Axis};

use crate::corpus::Dataset;
use crate::models::{
    canonicalize, round_to_f32, round_to_f32_vec, Hyperparameters, LinearModel, ModelError,
    ModelKind, Objective, Standardizer, TrainedModel, CLASS_COUNT,
};

/// Softmax cross-entropy objective over flattened `[coef (K x D), bias (K)]`
/// parameters. Shared by the trainer and the gradient checks.
pub struct LrObjective {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub l2: f64,
}

impl LrObjective {
    fn unflatten(&self, params: &[f64]) -> (Array2<f64>, Array1<f64>) {
        let d = self.features.ncols();
        let coef = Array2::from_shape_vec((CLASS_COUNT, d), params[..CLASS_COUNT * d].to_vec())
            .expect("param layout");
        let bias = Array1::from_vec(params[CLASS_COUNT * d..].to_vec());
        (coef, bias)
    }

    fn flatten(coef: &Array2<f64>, bias: &Array1<f64>) -> Vec<f64> {
        coef.iter().chain(bias.iter()).copied().collect()
    }

    /// Mean cross-entropy plus the ridge term, with the row-softmax
    /// probabilities as a byproduct.
    fn loss_and_probs(&self, coef: &Array2<f64>, bias: &Array1<f64>) -> (f64, Array2<f64>) {
        let n = self.features.nrows() as f64;
        let mut logits = self.features.dot(&coef.t());
        logits += bias;
        let mut ce = 0.0;
        for (mut row, &label) in logits.rows_mut().into_iter().zip(&self.labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|z| (z - max).exp());
            let sum: f64 = row.sum();
            ce -= (row[label] / sum).ln();
            row.mapv_inplace(|e| e / sum);
        }
        let ridge = 0.5 * self.l2 * coef.iter().map(|w| w * w).sum::<f64>();
        (ce / n + ridge, logits)
    }

    fn grad_arrays(&self, coef: &Array2<f64>, bias: &Array1<f64>) -> (f64, Array2<f64>, Array1<f64>) {
        let n = self.features.nrows() as f64;
        let (loss, mut probs) = self.loss_and_probs(coef, bias);
        for (mut row, &label) in probs.rows_mut().into_iter().zip(&self.labels) {
            row[label] -= 1.0;
        }
        let grad_coef = probs.t().dot(&self.features) / n + &(coef * self.l2);
        let grad_bias = probs.sum_axis(Axis(0)) / n;
        (loss, grad_coef, grad_bias)
    }
}

impl Objective for LrObjective {
    fn dim(&self) -> usize {
        CLASS_COUNT * self.features.ncols() + CLASS_COUNT
    }

    fn loss(&self, params: &[f64]) -> f64 {
        let (coef, bias) = self.unflatten(params);
        self.loss_and_probs(&coef, &bias).0
    }

    fn grad(&self, params: &[f64]) -> Vec<f64> {
        let (coef, bias) = self.unflatten(params);
        let (_, gc, gb) = self.grad_arrays(&coef, &bias);
        Self::flatten(&gc, &gb)
    }
}

/// Trains the multinomial LR model. Deterministic: zero init, full-batch
/// steps over standardized features, canonical row order, fold-back to raw
/// coordinates and f32-rounded parameters on exit.
pub fn train_lr(train_set: &Dataset, hp: &Hyperparameters) -> Result<TrainedModel, ModelError> {
    debug_assert_eq!(hp.kind, ModelKind::Lr);
    hp.validate()?;
    let ds = canonicalize(train_set);
    let standardizer = Standardizer::fit(&ds.features);
    let objective = LrObjective {
        features: standardizer.transform(&ds.features),
        labels: ds.labels,
        l2: hp.l2,
    };
    let d = objective.features.ncols();
    let mut coef = Array2::zeros((CLASS_COUNT, d));
    let mut bias = Array1::zeros(CLASS_COUNT);
    for epoch in 0..hp.epochs {
        let (loss, grad_coef, grad_bias) = objective.grad_arrays(&coef, &bias);
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        coef.scaled_add(-hp.learning_rate, &grad_coef);
        bias.scaled_add(-hp.learning_rate, &grad_bias);
    }
    standardizer.fold_into_linear(&mut coef, &mut bias);
    round_to_f32(&mut coef);
    round_to_f32_vec(&mut bias);
    Ok(TrainedModel::Lr(LinearModel { coef, bias }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::evaluate;
    use crate::models::test_support::{gradient_check, random_instance, random_params};
    use crate::weightstore::Role;
    use ndarray::Array2;

    #[test]
    fn coefficient_count_matches_published_shape() {
        // D = 256 histogram features -> one 10x256 Output tensor, 2560 weights.
        let ds = random_instance(1, 40, 256);
        let hp = Hyperparameters {
            epochs: 3,
            ..Hyperparameters::lr_defaults(1)
        };
        let model = train_lr(&ds, &hp).unwrap();
        assert_eq!(model.weight_count(), 2560);
        let store = crate::models::export_weights(&model);
        assert_eq!(store.tensors()[0].dims(), &[10, 256]);
        assert_eq!(store.tensors()[0].role(), Role::Output);
    }

    #[test]
    fn separable_toy_set_reaches_perfect_training_accuracy() {
        // One sample per class at distinct one-hot corners.
        let mut features = Array2::zeros((CLASS_COUNT, CLASS_COUNT));
        for k in 0..CLASS_COUNT {
            features[(k, k)] = 1.0;
        }
        let ds = Dataset::new(
            features,
            (0..CLASS_COUNT).collect(),
            (0..CLASS_COUNT).map(|c| format!("c{c}")).collect(),
        )
        .unwrap();
        let hp = Hyperparameters {
            learning_rate: 5.0,
            epochs: 400,
            l2: 0.0,
            ..Hyperparameters::lr_defaults(0)
        };
        let model = train_lr(&ds, &hp).unwrap();
        let report = evaluate(&model, &ds).unwrap();
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for seed in 0..5u64 {
            let ds = random_instance(seed, 5, 6);
            let objective = LrObjective {
                features: ds.features,
                labels: ds.labels,
                l2: 0.01,
            };
            let params = random_params(seed + 100, objective.dim(), 0.5);
            let err = gradient_check(&objective, &params);
            assert!(err < 1e-4, "seed {seed}: rel error {err}");
        }
    }

    #[test]
    fn divergent_learning_rate_reports_non_finite_loss() {
        let ds = random_instance(3, 20, 8);
        let hp = Hyperparameters {
            learning_rate: 1e300,
            epochs: 50,
            ..Hyperparameters::lr_defaults(3)
        };
        assert!(matches!(
            train_lr(&ds, &hp),
            Err(ModelError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn training_is_deterministic_and_row_order_invariant() {
        let ds = random_instance(5, 30, 12);
        let hp = Hyperparameters {
            epochs: 50,
            ..Hyperparameters::lr_defaults(5)
        };
        let a = train_lr(&ds, &hp).unwrap();
        let b = train_lr(&ds, &hp).unwrap();
        assert_eq!(a, b);

        // Reverse the rows; the canonical ordering must absorb it exactly.
        let rows: Vec<usize> = (0..ds.len()).rev().collect();
        let mut features = Array2::zeros((ds.len(), ds.feature_dim()));
        let mut labels = Vec::new();
        for (out_r, &r) in rows.iter().enumerate() {
            features.row_mut(out_r).assign(&ds.features.row(r));
            labels.push(ds.labels[r]);
        }
        let permuted = Dataset::new(features, labels, ds.class_names.clone()).unwrap();
        let c = train_lr(&permuted, &hp).unwrap();
        assert_eq!(a, c);
    }
}
