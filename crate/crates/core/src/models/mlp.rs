//! Multilayer perceptron: logistic hidden layers, softmax cross-entropy
//! output, Adam updates (full-batch or mini-batch). Hidden weight matrices
//! carry the Hidden role; the final layer carries Output.

use ndarray::{Array1, Array2, Axis};

use crate::corpus::Dataset;
use crate::models::{
    canonicalize, logistic, round_to_f32, round_to_f32_vec, Hyperparameters, MlpModel,
    ModelError, ModelKind, Objective, Standardizer, TrainedModel, CLASS_COUNT,
};
use crate::rng::SplitMix64;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Layer parameters as `(weights in x out, bias out)` pairs, hidden layers
/// first, output layer last.
type Layers = Vec<(Array2<f64>, Array1<f64>)>;

fn layer_sizes(input_dim: usize, hidden_sizes: &[usize]) -> Vec<(usize, usize)> {
    let mut sizes = Vec::new();
    let mut fan_in = input_dim;
    for &h in hidden_sizes {
        sizes.push((fan_in, h));
        fan_in = h;
    }
    sizes.push((fan_in, CLASS_COUNT));
    sizes
}

fn glorot_init(input_dim: usize, hidden_sizes: &[usize], seed: u64) -> Layers {
    let mut rng = SplitMix64::new(seed);
    layer_sizes(input_dim, hidden_sizes)
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut w = Array2::zeros((fan_in, fan_out));
            for v in w.iter_mut() {
                *v = (2.0 * rng.next_f64() - 1.0) * limit;
            }
            (w, Array1::zeros(fan_out))
        })
        .collect()
}

/// Forward + backward over one batch. Returns the regularized mean loss and
/// the per-layer gradients (same shapes as `layers`).
fn forward_backward(
    layers: &Layers,
    x: &Array2<f64>,
    labels: &[usize],
    l2: f64,
) -> (f64, Layers) {
    let n = x.nrows() as f64;
    let hidden_count = layers.len() - 1;

    // Forward, keeping each layer's activation for the backward pass.
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(hidden_count);
    let mut current = x.clone();
    for (w, b) in &layers[..hidden_count] {
        let mut z = current.dot(w) + b;
        z.mapv_inplace(logistic);
        activations.push(z.clone());
        current = z;
    }
    let (w_out, b_out) = &layers[hidden_count];
    let mut probs = current.dot(w_out) + b_out;

    let mut ce = 0.0;
    for (mut row, &label) in probs.rows_mut().into_iter().zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let sum: f64 = row.sum();
        ce -= (row[label] / sum).ln();
        row.mapv_inplace(|e| e / sum);
    }
    let ridge: f64 = layers
        .iter()
        .map(|(w, _)| w.iter().map(|v| v * v).sum::<f64>())
        .sum();
    let loss = ce / n + 0.5 * l2 * ridge;

    // Backward.
    let mut delta = probs; // becomes (P - Y) / n
    for (mut row, &label) in delta.rows_mut().into_iter().zip(labels) {
        row[label] -= 1.0;
    }
    delta.mapv_inplace(|v| v / n);

    let mut grads: Layers = vec![Default::default(); layers.len()];
    let last_activation = activations.last().unwrap_or(x);
    grads[hidden_count] = (
        last_activation.t().dot(&delta) + &(w_out * l2),
        delta.sum_axis(Axis(0)),
    );
    let mut upstream = delta.dot(&w_out.t());
    for k in (0..hidden_count).rev() {
        let a = &activations[k];
        let mut dz = upstream;
        dz.zip_mut_with(a, |d, &act| *d *= act * (1.0 - act));
        let below = if k == 0 { x } else { &activations[k - 1] };
        grads[k] = (
            below.t().dot(&dz) + &(&layers[k].0 * l2),
            dz.sum_axis(Axis(0)),
        );
        upstream = dz.dot(&layers[k].0.t());
    }
    (loss, grads)
}

/// Full-batch MLP objective over flattened parameters, layer by layer,
/// weights then bias, row-major. Shared with the gradient checks.
pub struct MlpObjective {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub hidden_sizes: Vec<usize>,
    pub l2: f64,
}

impl MlpObjective {
    fn shapes(&self) -> Vec<(usize, usize)> {
        layer_sizes(self.features.ncols(), &self.hidden_sizes)
    }

    fn unflatten(&self, params: &[f64]) -> Layers {
        let mut layers = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in self.shapes() {
            let w = Array2::from_shape_vec(
                (fan_in, fan_out),
                params[offset..offset + fan_in * fan_out].to_vec(),
            )
            .expect("param layout");
            offset += fan_in * fan_out;
            let b = Array1::from_vec(params[offset..offset + fan_out].to_vec());
            offset += fan_out;
            layers.push((w, b));
        }
        layers
    }

    fn flatten(layers: &Layers) -> Vec<f64> {
        layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>())
            .collect()
    }
}

impl Objective for MlpObjective {
    fn dim(&self) -> usize {
        self.shapes()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }

    fn loss(&self, params: &[f64]) -> f64 {
        let layers = self.unflatten(params);
        forward_backward(&layers, &self.features, &self.labels, self.l2).0
    }

    fn grad(&self, params: &[f64]) -> Vec<f64> {
        let layers = self.unflatten(params);
        let (_, grads) = forward_backward(&layers, &self.features, &self.labels, self.l2);
        Self::flatten(&grads)
    }
}

struct AdamState {
    m: Layers,
    v: Layers,
    t: u64,
}

impl AdamState {
    fn new(layers: &Layers) -> Self {
        let zeros = |l: &Layers| -> Layers {
            l.iter()
                .map(|(w, b)| (Array2::zeros(w.dim()), Array1::zeros(b.len())))
                .collect()
        };
        AdamState {
            m: zeros(layers),
            v: zeros(layers),
            t: 0,
        }
    }

    fn step(&mut self, layers: &mut Layers, grads: &Layers, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (k, (gw, gb)) in grads.iter().enumerate() {
            let (mw, mb) = &mut self.m[k];
            let (vw, vb) = &mut self.v[k];
            mw.zip_mut_with(gw, |m, &g| *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g);
            mb.zip_mut_with(gb, |m, &g| *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g);
            vw.zip_mut_with(gw, |v, &g| *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g);
            vb.zip_mut_with(gb, |v, &g| *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g);
            let (w, b) = &mut layers[k];
            ndarray::Zip::from(&mut *w)
                .and(&*mw)
                .and(&*vw)
                .for_each(|w, &m, &v| {
                    *w -= lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
                });
            ndarray::Zip::from(&mut *b)
                .and(&*mb)
                .and(&*vb)
                .for_each(|b, &m, &v| {
                    *b -= lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
                });
        }
    }
}

fn batch_rows(x: &Array2<f64>, labels: &[usize], rows: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let mut bx = Array2::zeros((rows.len(), x.ncols()));
    let mut by = Vec::with_capacity(rows.len());
    for (out_r, &r) in rows.iter().enumerate() {
        bx.row_mut(out_r).assign(&x.row(r));
        by.push(labels[r]);
    }
    (bx, by)
}

/// Trains the MLP. Weight init is seeded Glorot uniform; features are
/// standardized for the optimizer and folded back into the first hidden
/// layer on exit; mini-batch order is a seeded shuffle over the canonical
/// row order. Training is bit-deterministic and input-row-order invariant
/// for any batch size.
pub fn train_mlp(train_set: &Dataset, hp: &Hyperparameters) -> Result<TrainedModel, ModelError> {
    debug_assert_eq!(hp.kind, ModelKind::Mlp);
    hp.validate()?;
    let ds = canonicalize(train_set);
    let standardizer = Standardizer::fit(&ds.features);
    let features = standardizer.transform(&ds.features);
    let mut layers = glorot_init(ds.feature_dim(), &hp.hidden_sizes, hp.seed);
    let mut adam = AdamState::new(&layers);
    let mut shuffle_rng = SplitMix64::new(hp.seed ^ 0x9E37_79B9_7F4A_7C15);

    for epoch in 0..hp.epochs {
        if hp.batch_size == 0 || hp.batch_size >= ds.len() {
            let (loss, grads) = forward_backward(&layers, &features, &ds.labels, hp.l2);
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch });
            }
            adam.step(&mut layers, &grads, hp.learning_rate);
        } else {
            let mut order: Vec<usize> = (0..ds.len()).collect();
            shuffle_rng.shuffle(&mut order);
            for chunk in order.chunks(hp.batch_size) {
                let (bx, by) = batch_rows(&features, &ds.labels, chunk);
                let (loss, grads) = forward_backward(&layers, &bx, &by, hp.l2);
                if !loss.is_finite() {
                    return Err(ModelError::NonFiniteLoss { epoch });
                }
                adam.step(&mut layers, &grads, hp.learning_rate);
            }
        }
    }

    let output = layers.pop().expect("at least one layer");
    let mut model = MlpModel {
        hidden: layers,
        output,
    };
    let (first_w, first_b) = &mut model.hidden[0];
    standardizer.fold_into_input_layer(first_w, first_b);
    for (w, b) in &mut model.hidden {
        round_to_f32(w);
        round_to_f32_vec(b);
    }
    round_to_f32(&mut model.output.0);
    round_to_f32_vec(&mut model.output.1);
    Ok(TrainedModel::Mlp(model))
}
