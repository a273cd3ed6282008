//! L1-loss training with Adam, the per-epoch loop with thumbnail test-set
//! model selection, and k-fold cross-validation.
//!
//! Each epoch draws one augmented 48x32 patch per training image, runs
//! minibatches of 16 (the last partial batch is kept), and evaluates the
//! mean angular error on the uncropped-thumbnail test set. The returned
//! model is the epoch with the minimum test error, or the final epoch when
//! selection is disabled.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{self, Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::metrics::{self, ErrorStats};
use crate::model::{self, CmParams, ParamGrads, Variant};

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f32,
    pub batch: usize,
    pub epochs: usize,
    pub beta1: f32,
    pub beta2: f32,
    pub eps_adam: f32,
    pub seed: u64,
    pub variant: Variant,
    /// Keep the epoch with the lowest test error; turning this off
    /// reproduces the no-test-set ablation.
    pub select_on_test: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch: 16,
            epochs: 2000,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            seed: 0,
            variant: Variant::Cm,
            select_on_test: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Data(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Data(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.batch < 1 || self.epochs < 1 {
            return Err(Error::Data("batch and epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Adam moment accumulators, flattened in the parameters' canonical order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState { m: vec![0.0; param_count], v: vec![0.0; param_count], t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// L1 loss between two unit vectors and its gradient w.r.t. the estimate:
/// `loss = sum_c |e_c - g_c|`, `grad_c = sign(e_c - g_c)` with `sign(0) = 0`.
pub fn l1_loss(estimate: [f32; 3], gt: [f32; 3]) -> (f64, [f32; 3]) {
    let mut loss = 0.0f64;
    let mut grad = [0.0f32; 3];
    for c in 0..3 {
        let d = estimate[c] as f64 - gt[c] as f64;
        loss += d.abs();
        grad[c] = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
    }
    (loss, grad)
}

/// One bias-corrected Adam update. Rejects non-finite gradients without
/// touching the parameters.
pub fn adam_step(
    params: &mut CmParams,
    grads: &ParamGrads,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    let n = params.param_count();
    if state.m.len() != n || grads.flat_iter().count() != n {
        return Err(Error::Shape("optimizer state does not match the parameter count".into()));
    }
    if !grads.all_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    state.t += 1;
    let bias1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bias2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (((w, g), m), v) in params
        .flat_iter_mut()
        .zip(grads.flat_iter())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps_adam);
    }
    Ok(())
}

/// Per-image angular errors of a model over a set of working-resolution
/// images, in input order.
pub fn evaluate_model(params: &CmParams, images: &[LabeledImage]) -> Result<Vec<f64>> {
    images
        .iter()
        .map(|img| {
            let (est, _) = model::estimate_image(params, img)?;
            metrics::angular_error(est.map(f64::from), img.gt.map(f64::from))
        })
        .collect()
}

/// One epoch row of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub test_mean_deg: f64,
}

/// Outcome of a training run: the per-epoch history, which epoch was
/// selected, and that epoch's parameters.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub params: CmParams,
}

impl TrainReport {
    pub fn selected_test_mean(&self) -> f64 {
        self.epochs[self.selected_epoch].test_mean_deg
    }

    /// Per-epoch CSV: `epoch,train_loss,test_mean_deg` (1-based epochs).
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,test_mean_deg")?;
        for (i, rec) in self.epochs.iter().enumerate() {
            writeln!(out, "{},{:.6},{:.6}", i + 1, rec.train_loss, rec.test_mean_deg)?;
        }
        Ok(())
    }
}

/// An augmented patch can land entirely inside a masked region; redraw a few
/// times and skip the image for this epoch if it keeps happening.
fn draw_patch<R: Rng>(img: &LabeledImage, rng: &mut R) -> Result<Option<LabeledImage>> {
    for _ in 0..8 {
        let patch = data::augment_patch(img, rng)?;
        if patch.pixels.iter().any(|&p| p != 0) {
            return Ok(Some(patch));
        }
    }
    Ok(None)
}

/// Train on augmented patches of `train`, evaluating each epoch on `test`
/// (the uncropped thumbnails). Deterministic for a given config.
pub fn train_fold(train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if test.is_empty() {
        return Err(Error::Data("test set is empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = CmParams::init_kaiming(cfg.seed, cfg.variant);
    let mut adam = AdamState::new(params.param_count());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, CmParams)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut seen = 0usize;

        for (batch_index, chunk) in order.chunks(cfg.batch).enumerate() {
            let mut batch_grads = ParamGrads::zeros_like(&params);
            let mut batch_n = 0usize;
            for &img_idx in chunk {
                let img = &train.images[img_idx];
                let patch = match draw_patch(img, &mut rng)? {
                    Some(p) => p,
                    None => continue,
                };
                let input = model::prepare_input(cfg.variant, data::normalize_input(&patch)?);
                let fwd = model::forward(&params, &input)?;
                let (loss, d_est) = l1_loss(fwd.estimate, img.gt);
                epoch_loss += loss;
                seen += 1;
                let g = model::backward(&params, &fwd.cache, d_est)?;
                batch_grads.add_assign(&g);
                batch_n += 1;
            }
            if batch_n == 0 {
                continue;
            }
            batch_grads.scale(1.0 / batch_n as f32);
            adam_step(&mut params, &batch_grads, &mut adam, cfg).map_err(|e| {
                Error::Numeric(format!("epoch {}, batch {batch_index}: {e}", epoch + 1))
            })?;
        }

        let errors = evaluate_model(&params, &test.images)?;
        let test_mean = errors.iter().sum::<f64>() / errors.len() as f64;
        history.push(EpochRecord { train_loss: epoch_loss / seen.max(1) as f64, test_mean_deg: test_mean });
        // strict '<' keeps the earliest epoch on ties
        if best.as_ref().is_none_or(|(_, b, _)| test_mean < *b) {
            best = Some((epoch, test_mean, params.clone()));
        }
    }

    let (selected_epoch, params) = if cfg.select_on_test {
        let (epoch, _, best_params) = best.expect("at least one epoch ran");
        (epoch, best_params)
    } else {
        (cfg.epochs - 1, params)
    };
    Ok(TrainReport { epochs: history, selected_epoch, params })
}

/// Error of one held-out image.
#[derive(Debug, Clone)]
pub struct PerImageError {
    pub id: String,
    pub camera: Option<String>,
    pub degrees: f64,
}

/// Cross-validation outcome: concatenated held-out errors plus their
/// summary, and one training report per fold.
#[derive(Debug)]
pub struct CvReport {
    pub per_image: Vec<PerImageError>,
    pub stats: ErrorStats,
    pub folds: Vec<TrainReport>,
}

/// Deterministic k-fold cross-validation: contiguous folds over sorted ids;
/// each fold trains on the remainder (with those images' thumbnails as the
/// selection test set) and is evaluated on the held-out thumbnails. Errors
/// are concatenated across folds before the statistics.
pub fn cross_validate(dataset: &Dataset, k: usize, cfg: &TrainConfig) -> Result<CvReport> {
    if k < 2 {
        return Err(Error::Data(format!("cross-validation needs k >= 2, got {k}")));
    }
    if dataset.len() < k {
        return Err(Error::Data(format!(
            "dataset of {} images cannot be split into {k} folds",
            dataset.len()
        )));
    }
    let mut sorted: Vec<&LabeledImage> = dataset.images.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let n = sorted.len();

    let mut per_image = Vec::with_capacity(n);
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let lo = fold * n / k;
        let hi = (fold + 1) * n / k;
        if lo == hi {
            return Err(Error::Data(format!("fold {fold} is empty")));
        }
        let train_images: Vec<LabeledImage> = sorted[..lo]
            .iter()
            .chain(sorted[hi..].iter())
            .map(|img| (*img).clone())
            .collect();
        let test_thumbs: Vec<LabeledImage> =
            train_images.iter().map(data::make_thumbnail).collect::<Result<_>>()?;
        let fold_cfg = TrainConfig { seed: cfg.seed.wrapping_add(fold as u64), ..cfg.clone() };
        let report = train_fold(
            &Dataset { images: train_images },
            &Dataset { images: test_thumbs },
            &fold_cfg,
        )?;
        for img in &sorted[lo..hi] {
            let thumb = data::make_thumbnail(img)?;
            let (est, _) = model::estimate_image(&report.params, &thumb)?;
            per_image.push(PerImageError {
                id: img.id.clone(),
                camera: img.camera.clone(),
                degrees: metrics::angular_error(est.map(f64::from), img.gt.map(f64::from))?,
            });
        }
        folds.push(report);
    }
    let errors: Vec<f64> = per_image.iter().map(|e| e.degrees).collect();
    Ok(CvReport { stats: metrics::error_stats(&errors)?, per_image, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::MondrianSpec;

    fn small_synth(n: usize) -> Dataset {
        let spec = MondrianSpec { width: 96, height: 64, min_rects: 10, max_rects: 20 };
        data::synth_generate(31, n, &spec).unwrap()
    }

    fn thumbs_of(ds: &Dataset) -> Dataset {
        Dataset {
            images: ds.images.iter().map(|i| data::make_thumbnail(i).unwrap()).collect(),
        }
    }

    #[test]
    fn l1_loss_trivial_cases() {
        let (loss, grad) = l1_loss([0.6, 0.0, 0.8], [0.6, 0.0, 0.8]);
        assert_eq!(loss, 0.0);
        assert_eq!(grad, [0.0; 3]);

        let (loss, grad) = l1_loss([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert_eq!(loss, 2.0);
        assert_eq!(grad, [1.0, -1.0, 0.0]);
    }

    #[test]
    fn l1_loss_matches_direct_summation() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let a: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0f32..1.0));
            let b: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0f32..1.0));
            let (loss, _) = l1_loss(a, b);
            let oracle: f64 =
                (0..3).map(|c| (a[c] as f64 - b[c] as f64).abs()).sum();
            assert!((loss - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn first_adam_step_moves_by_about_the_learning_rate() {
        let cfg = TrainConfig::default();
        let mut params = CmParams::init_kaiming(1, Variant::Cm);
        let before: Vec<f32> = params.flat_iter().collect();
        let mut grads = ParamGrads::zeros_like(&params);
        for g in grads.flat_iter_mut() {
            *g = 1.0;
        }
        let mut state = AdamState::new(params.param_count());
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        for (w, b) in params.flat_iter().zip(before) {
            let update = (b - w).abs();
            assert!(
                (update - cfg.lr).abs() < 0.01 * cfg.lr,
                "first-step update {update} should be ~lr"
            );
        }
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let cfg = TrainConfig::default();
        let mut params = CmParams::init_kaiming(2, Variant::Cm);
        let before: Vec<u32> = params.flat_iter().map(f32::to_bits).collect();
        let grads = ParamGrads::zeros_like(&params);
        let mut state = AdamState::new(params.param_count());
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        }
        let after: Vec<u32> = params.flat_iter().map(f32::to_bits).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn adam_with_zero_lr_is_the_identity() {
        let cfg = TrainConfig { lr: 0.0, ..TrainConfig::default() };
        let mut params = CmParams::init_kaiming(3, Variant::Cm);
        let before: Vec<u32> = params.flat_iter().map(f32::to_bits).collect();
        let mut grads = ParamGrads::zeros_like(&params);
        for (i, g) in grads.flat_iter_mut().enumerate() {
            *g = (i % 7) as f32 - 3.0;
        }
        let mut state = AdamState::new(params.param_count());
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        let after: Vec<u32> = params.flat_iter().map(f32::to_bits).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn non_finite_gradients_are_rejected() {
        let cfg = TrainConfig::default();
        let mut params = CmParams::init_kaiming(4, Variant::Cm);
        let before: Vec<u32> = params.flat_iter().map(f32::to_bits).collect();
        let mut grads = ParamGrads::zeros_like(&params);
        *grads.flat_iter_mut().next().unwrap() = f32::NAN;
        let mut state = AdamState::new(params.param_count());
        let err = adam_step(&mut params, &grads, &mut state, &cfg).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        let after: Vec<u32> = params.flat_iter().map(f32::to_bits).collect();
        assert_eq!(before, after, "a rejected step must not touch the parameters");
    }

    #[test]
    fn training_reduces_the_loss_and_selection_hits_the_minimum() {
        let train = small_synth(20);
        let test = thumbs_of(&train);
        let cfg = TrainConfig { epochs: 50, seed: 5, ..TrainConfig::default() };
        let report = train_fold(&train, &test, &cfg).unwrap();
        assert_eq!(report.epochs.len(), 50);
        assert!(
            report.epochs[49].train_loss < report.epochs[0].train_loss,
            "loss should trend down: {} -> {}",
            report.epochs[0].train_loss,
            report.epochs[49].train_loss
        );
        let min = report
            .epochs
            .iter()
            .map(|e| e.test_mean_deg)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report.selected_test_mean(), min);
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_config() {
        let train = small_synth(8);
        let test = thumbs_of(&train);
        let cfg = TrainConfig { epochs: 5, seed: 9, ..TrainConfig::default() };
        let a = train_fold(&train, &test, &cfg).unwrap();
        let b = train_fold(&train, &test, &cfg).unwrap();
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.selected_epoch, b.selected_epoch);
        assert!(a
            .params
            .flat_iter()
            .zip(b.params.flat_iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn disabling_selection_returns_the_final_epoch() {
        let train = small_synth(8);
        let test = thumbs_of(&train);
        let cfg =
            TrainConfig { epochs: 6, seed: 2, select_on_test: false, ..TrainConfig::default() };
        let report = train_fold(&train, &test, &cfg).unwrap();
        assert_eq!(report.selected_epoch, 5);
        // selected model's error can only be at least the recorded minimum
        let min = report.epochs.iter().map(|e| e.test_mean_deg).fold(f64::INFINITY, f64::min);
        assert!(report.selected_test_mean() >= min);
    }

    #[test]
    fn per_image_loss_is_exposure_invariant() {
        use rand::{Rng, SeedableRng};
        // even 8-bit values halve exactly, so the max-normalized inputs agree
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pixels: Vec<u8> = (0..48 * 32 * 3).map(|_| rng.random_range(0u8..=127) * 2).collect();
        let gt = [0.5f32, 0.7, 0.5];
        let img = LabeledImage {
            id: "full".into(),
            camera: None,
            width: 48,
            height: 32,
            pixels: pixels.clone(),
            gt,
        };
        let half = LabeledImage {
            id: "half".into(),
            camera: None,
            width: 48,
            height: 32,
            pixels: pixels.iter().map(|&p| p / 2).collect(),
            gt,
        };
        let params = CmParams::init_kaiming(8, Variant::Cm);
        let (e1, _) = model::estimate_image(&params, &img).unwrap();
        let (e2, _) = model::estimate_image(&params, &half).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(l1_loss(e1, gt), l1_loss(e2, gt));
    }

    #[test]
    fn cross_validation_partitions_the_dataset() {
        let ds = small_synth(9);
        let cfg = TrainConfig { epochs: 3, seed: 1, ..TrainConfig::default() };
        let report = cross_validate(&ds, 3, &cfg).unwrap();
        assert_eq!(report.per_image.len(), ds.len());
        assert_eq!(report.stats.n, ds.len());
        let mut held_ids: Vec<&str> = report.per_image.iter().map(|e| e.id.as_str()).collect();
        held_ids.sort();
        let mut all_ids: Vec<&str> = ds.images.iter().map(|i| i.id.as_str()).collect();
        all_ids.sort();
        assert_eq!(held_ids, all_ids, "every image held out exactly once");
        assert_eq!(report.folds.len(), 3);
    }

    #[test]
    fn cross_validation_rejects_bad_fold_counts() {
        let ds = small_synth(3);
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        assert!(cross_validate(&ds, 1, &cfg).is_err());
        assert!(cross_validate(&ds, 4, &cfg).is_err());
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let test = thumbs_of(&small_synth(2));
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        assert!(train_fold(&Dataset::default(), &test, &cfg).is_err());
    }
}
