//! Clipped-SGD training of Lipschitz networks and the FCN/LRN baselines.
//!
//! Each epoch takes its learning rate from a step schedule, sweeps shuffled
//! mini-batches, clips the global gradient norm and takes a plain gradient
//! step. The parameters with the lowest selection MSE (test MSE by default)
//! are kept.

mod dataset;

use alloc::format;
use alloc::vec::Vec;

pub use dataset::{split_dataset, Dataset, DatasetMeta, Sample};

use crate::diffcore::{Matrix, Tape};
use crate::error::{Error, Result};
use crate::math;
use crate::networks::{LipschitzNet, Mlp, Model, Trainable, PAIR_MIN_DIST};
use crate::rng;

/// Hyperparameters of the training loop.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Epochs between learning-rate decays.
    pub step_size: usize,
    pub lr_decay: f64,
    pub clip_norm: f64,
    /// Seeds initialization and batch order.
    pub seed: u64,
    /// Seeds the train/test split; kept fixed across trials so runs compare
    /// on identical data.
    pub split_seed: u64,
    pub split_fraction: f64,
    pub train_subsample: f64,
    /// FCN `ℓ₂` penalty on weight matrices.
    pub weight_decay: f64,
    /// LRN weight on the batch Lipschitz estimate.
    pub beta: f64,
    /// When positive, this share of the training set is held out and used
    /// for checkpoint selection instead of the test set.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 256,
            lr0: 1e-2,
            step_size: 50,
            lr_decay: 0.5,
            clip_norm: 1.0,
            seed: 0,
            split_seed: 0,
            split_fraction: 0.8,
            train_subsample: 1.0,
            weight_decay: 0.0,
            beta: 0.0,
            validation_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidArgument(format!("{what} out of range: {v}")))
        };
        if self.epochs == 0 || self.batch_size == 0 || self.step_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch_size and step_size must be positive".into(),
            ));
        }
        if !(self.lr0 > 0.0) {
            return bad("lr0", self.lr0);
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay", self.lr_decay);
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm", self.clip_norm);
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad("split_fraction", self.split_fraction);
        }
        if !(self.train_subsample > 0.0 && self.train_subsample <= 1.0) {
            return bad("train_subsample", self.train_subsample);
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", self.weight_decay);
        }
        if !(self.beta >= 0.0) {
            return bad("beta", self.beta);
        }
        if !(self.validation_fraction >= 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction", self.validation_fraction);
        }
        Ok(())
    }

    /// Step schedule: `lr0 · lr_decay^⌊epoch / step_size⌋` (epochs from 0).
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let k = (epoch / self.step_size) as i32;
        self.lr0 * libm::pow(self.lr_decay, k as f64)
    }
}

/// The grid swept for weight decay and LRN `β`.
pub const REGULARIZATION_GRID: [f64; 8] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

/// Extra loss terms on top of the batch MSE.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Regularizer {
    /// Coefficient of `Σ‖W‖_F²` over weight matrices.
    pub weight_decay: f64,
    /// Coefficient of the batch Lipschitz estimate.
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub test_mse: f64,
    /// MSE on the held-out validation set, when one is used.
    pub validation_mse: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport<M> {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Test MSE of the selected checkpoint.
    pub best_test_mse: f64,
    pub final_model: M,
    pub best_model: M,
}

/// `(1/|S|) Σ ‖y_i − Φ(x_i)‖₂²`.
pub fn mse<M: Model + ?Sized>(samples: &Dataset, model: &M) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("MSE sample set"));
    }
    const CHUNK: usize = 4096;
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(CHUNK) {
        let pred = model.forward_columns(&samples.input_columns(chunk))?;
        let labels = samples.label_columns(chunk);
        total += pred
            .as_slice()
            .iter()
            .zip(labels.as_slice())
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>();
    }
    Ok(total / samples.len() as f64)
}

/// Loss on one batch and its gradient, one matrix per parameter block in
/// [`Trainable::params`] order (row-major, matching the parameter slices).
pub fn loss_and_grad<M: Trainable>(
    model: &M,
    xs: &Matrix,
    ys: &Matrix,
    reg: Regularizer,
) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let rec = model.record(&mut tape, xs)?;
    let mut loss = tape.mse(rec.output, ys);
    if reg.weight_decay > 0.0 {
        for &w in &rec.decay {
            let s = tape.sum_squares(w);
            let s = tape.scale(s, reg.weight_decay);
            loss = tape.add(loss, s);
        }
    }
    if reg.beta > 0.0 {
        let q = tape.pair_quotient(rec.output, xs, PAIR_MIN_DIST);
        let q = tape.scale(q, reg.beta);
        loss = tape.add(loss, q);
    }
    let value = tape.value(loss)[(0, 0)];
    let mut grads = tape.backward(loss);
    let shapes: Vec<(usize, usize)> = rec.params.iter().map(|&p| tape.value(p).shape()).collect();
    let g = rec
        .params
        .iter()
        .zip(shapes)
        .map(|(&p, (r, c))| grads.take_or_zeros(p, r, c))
        .collect();
    Ok((value, g))
}

/// Rescales `grads` in place so their joint ℓ₂ norm is at most `clip_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], clip_norm: f64) -> f64 {
    let norm = math::sqrt(grads.iter().map(Matrix::sum_squares).sum());
    if norm > clip_norm {
        let s = clip_norm / norm;
        for g in grads.iter_mut() {
            g.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// `θ ← θ − lr·g` for every parameter block.
pub fn sgd_step<M: Trainable>(model: &mut M, grads: &[Matrix], lr: f64) {
    for (p, g) in model.params_mut().into_iter().zip(grads) {
        for (v, d) in p.iter_mut().zip(g.as_slice()) {
            *v -= lr * d;
        }
    }
}

/// Runs the training loop on pre-split data.
pub fn fit<M: Trainable>(
    mut model: M,
    train: &Dataset,
    test: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
    reg: Regularizer,
) -> Result<TrainReport<M>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut order_rng = rng::stream(cfg.seed, rng::STREAM_BATCH);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, f64, M)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        let order = rng::permutation(&mut order_rng, train.len());
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let xs = train.input_columns(idx);
            let ys = train.label_columns(idx);
            let (loss, mut grads) = loss_and_grad(&model, &xs, &ys, reg)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch, lr });
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            sgd_step(&mut model, &grads, lr);
        }
        let train_mse = mse(train, &model)?;
        let test_mse = mse(test, &model)?;
        let validation_mse = validation.map(|v| mse(v, &model)).transpose()?;
        let selector = validation_mse.unwrap_or(test_mse);
        if !selector.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: usize::MAX, lr });
        }
        if best.as_ref().map_or(true, |b| selector < b.0) {
            best = Some((selector, epoch, test_mse, model.clone()));
        }
        log::debug!("epoch {epoch}: lr {lr:.3e} train {train_mse:.6e} test {test_mse:.6e}");
        epochs.push(EpochRecord {
            epoch,
            lr,
            train_mse,
            test_mse,
            validation_mse,
        });
    }
    let (_, best_epoch, best_test_mse, best_model) = best.expect("at least one epoch");
    Ok(TrainReport {
        epochs,
        best_epoch,
        best_test_mse,
        final_model: model,
        best_model,
    })
}

/// Splits `d` per `cfg` (optionally carving a validation set out of the
/// training part) and trains.
pub fn train_with<M: Trainable>(
    model: M,
    d: &Dataset,
    cfg: &TrainConfig,
    reg: Regularizer,
) -> Result<TrainReport<M>> {
    cfg.validate()?;
    let (train, test) = split_dataset(d, cfg.split_fraction, cfg.train_subsample, cfg.split_seed)?;
    if cfg.validation_fraction > 0.0 {
        let (fit_part, val) = split_dataset(
            &train,
            1.0 - cfg.validation_fraction,
            1.0,
            cfg.split_seed.wrapping_add(1),
        )?;
        fit(model, &fit_part, &test, Some(&val), cfg, reg)
    } else {
        fit(model, &train, &test, None, cfg, reg)
    }
}

/// Trains a Lipschitz network on the plain MSE loss.
///
/// The normalizer must already be fitted on the full dataset.
pub fn train(model: LipschitzNet, d: &Dataset, cfg: &TrainConfig) -> Result<TrainReport<LipschitzNet>> {
    train_with(model, d, cfg, Regularizer::default())
}

/// FCN baseline: MSE plus `weight_decay · Σ‖W‖_F²`.
pub fn train_fcn(model: Mlp, d: &Dataset, cfg: &TrainConfig) -> Result<TrainReport<Mlp>> {
    train_with(
        model,
        d,
        cfg,
        Regularizer {
            weight_decay: cfg.weight_decay,
            beta: 0.0,
        },
    )
}

/// LRN baseline: MSE plus `β ·` the batch Lipschitz estimate.
pub fn train_lrn(model: Mlp, d: &Dataset, cfg: &TrainConfig) -> Result<TrainReport<Mlp>> {
    train_with(
        model,
        d,
        cfg,
        Regularizer {
            weight_decay: 0.0,
            beta: cfg.beta,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Activation;
    use crate::networks::{AffineNormalizer, DenseLayer};
    use alloc::vec;

    fn scalar_mlp(w: f64) -> Mlp {
        Mlp::from_layers(
            AffineNormalizer::identity(1),
            vec![DenseLayer {
                weight: Matrix::column(&[w]),
                bias: vec![0.0],
            }],
            Activation::Identity,
        )
        .unwrap()
    }

    fn one_sample(x: f64, y: f64) -> Dataset {
        Dataset::new(
            vec![Sample {
                traj: 0,
                t: 0.0,
                x: vec![x],
                y: vec![y],
            }],
            DatasetMeta::default(),
        )
        .unwrap()
    }

    #[test]
    fn step_schedule() {
        let cfg = TrainConfig {
            lr0: 0.1,
            lr_decay: 0.5,
            step_size: 10,
            ..Default::default()
        };
        assert!((cfg.learning_rate(25) - 0.025).abs() < 1e-15);
        assert_eq!(cfg.learning_rate(9), 0.1);
        assert_eq!(cfg.learning_rate(10), 0.05);
    }

    #[test]
    fn mse_by_hand() {
        let m = scalar_mlp(0.0);
        // y = 1, Φ = 0
        assert_eq!(mse(&one_sample(3.0, 1.0), &m).unwrap(), 1.0);
        // squared errors 1 and 3 average to 2
        let two = Dataset::new(
            vec![
                Sample { traj: 0, t: 0.0, x: vec![1.0], y: vec![1.0] },
                Sample { traj: 0, t: 1.0, x: vec![1.0], y: vec![3f64.sqrt()] },
            ],
            DatasetMeta::default(),
        )
        .unwrap();
        assert!((mse(&two, &m).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(mse(&one_sample(2.0, 4.0), &scalar_mlp(2.0)).unwrap(), 0.0);
        assert!(mse(&Dataset::default(), &m).is_err());
    }

    #[test]
    fn single_gradient_step_by_hand() {
        // loss (w·1 − 1)² at w = 0 has gradient −2; lr 0.5 moves w to 1.
        let mut m = scalar_mlp(0.0);
        let xs = Matrix::column(&[1.0]);
        let ys = Matrix::column(&[1.0]);
        let (loss, mut g) = loss_and_grad(&m, &xs, &ys, Regularizer::default()).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(g[0].as_slice(), &[-2.0]);
        clip_global_norm(&mut g, 10.0);
        sgd_step(&mut m, &g, 0.5);
        assert_eq!(m.layers[0].weight.as_slice(), &[1.0]);
    }

    #[test]
    fn clipping_normalizes_large_gradients() {
        let mut g = vec![Matrix::column(&[3.0]), Matrix::column(&[4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((g[1].as_slice()[0] - 0.8).abs() < 1e-15);
        let mut small = vec![Matrix::column(&[0.3])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].as_slice(), &[0.3]);
    }

    #[test]
    fn weight_decay_adds_two_lambda_w() {
        let m = scalar_mlp(0.5);
        let xs = Matrix::column(&[1.0]);
        let ys = Matrix::column(&[1.0]);
        let (_, plain) = loss_and_grad(&m, &xs, &ys, Regularizer::default()).unwrap();
        let reg = Regularizer { weight_decay: 1e-4, beta: 0.0 };
        let (_, decayed) = loss_and_grad(&m, &xs, &ys, reg).unwrap();
        let diff = decayed[0].as_slice()[0] - plain[0].as_slice()[0];
        assert!((diff - 2e-4 * 0.5).abs() < 1e-15);
        // biases are not decayed
        assert_eq!(decayed[1], plain[1]);
    }

    #[test]
    fn zero_regularization_matches_plain_loss() {
        let m = Mlp::new(AffineNormalizer::identity(2), &[4, 2], Activation::LeakyRelu(0.01), 3).unwrap();
        let xs = Matrix::from_rows(&[&[0.1, 0.5, -1.0], &[1.0, -0.3, 0.2]]).unwrap();
        let ys = Matrix::from_rows(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.5]]).unwrap();
        let a = loss_and_grad(&m, &xs, &ys, Regularizer::default()).unwrap();
        let b = loss_and_grad(&m, &xs, &ys, Regularizer { weight_decay: 0.0, beta: 0.0 }).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn constant_model_has_zero_lipschitz_penalty() {
        let mut m = scalar_mlp(0.0);
        m.layers[0].bias = vec![2.0];
        let xs = Matrix::from_rows(&[&[0.0, 1.0, 2.0]]).unwrap();
        let ys = Matrix::from_rows(&[&[2.0, 2.0, 2.0]]).unwrap();
        let (loss, g) = loss_and_grad(&m, &xs, &ys, Regularizer { weight_decay: 0.0, beta: 1.0 }).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|g| g.sum_squares() == 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { split_fraction: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { lr_decay: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
