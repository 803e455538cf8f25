//! Distillation training: MSE on whole rendered images, Adam with linear
//! warmup and linear decay, one optimizer over grids and decoder together.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ImageBuffer, Scene, TrainSample};
use crate::decoder::{BatchStats, RUNNING_MOMENTUM};
use crate::error::{Error, Result};
use crate::geometry::{Ray4, RayBundle};
use crate::metrics::psnr_from_mse;
use crate::model::{LightFieldModel, ModelSpec, SceneModel};
use crate::partition::PartitionConfig;
use crate::real::Real;
use crate::tensor::FeatureMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_steps: usize,
    /// Whole images per optimizer step.
    pub batch_bundles: usize,
    pub lr_init: f64,
    pub lr_peak: f64,
    pub warmup_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Steps between checkpoint callbacks; 0 disables them.
    pub checkpoint_every: usize,
    /// Steps between held-out evaluations; 0 disables them.
    pub eval_every: usize,
    /// Recompute normalization statistics over the training set before each
    /// held-out evaluation and once training ends.
    pub recalibrate_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 2000,
            batch_bundles: 1,
            lr_init: 1e-5,
            lr_peak: 5e-4,
            warmup_steps: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            recalibrate_norm: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps > 0 && self.warmup_steps >= self.max_steps {
            return Err(Error::config(format!(
                "warmup_steps ({}) must be below max_steps ({})",
                self.warmup_steps, self.max_steps
            )));
        }
        if !(self.lr_init > 0.0 && self.lr_peak > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.batch_bundles == 0 {
            return Err(Error::config("batch_bundles must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::config("Adam betas must lie in [0, 1) and eps must be positive"));
        }
        Ok(())
    }
}

/// Linear warmup from `lr_init` to `lr_peak`, then linear decay to zero at `max_steps`.
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    let w = config.warmup_steps;
    if step <= w {
        if w == 0 {
            return config.lr_peak;
        }
        let t = step as f64 / w as f64;
        return config.lr_init + (config.lr_peak - config.lr_init) * t;
    }
    let rest = config.max_steps.saturating_sub(w).max(1) as f64;
    let t = ((step - w) as f64 / rest).min(1.0);
    config.lr_peak * (1.0 - t)
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss<T: Real>(pred: &FeatureMap<T>, target: &FeatureMap<T>) -> Result<(f64, FeatureMap<T>)> {
    if !pred.same_shape(target) {
        return Err(Error::invalid(format!(
            "prediction shape {:?} does not match target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.data.len() as f64;
    let loss = pred.data.iter().zip(&target.data).map(|(&p, &t)| (p - t).as_f64().powi(2)).sum::<f64>() / n;
    let scale = T::of(2.0 / n);
    let grad = pred.data.iter().zip(&target.data).map(|(&p, &t)| (p - t) * scale).collect();
    Ok((loss, FeatureMap::from_vec(pred.batch, pred.height, pred.width, pred.channels, grad)?))
}

/// Adam moments for a list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }
}

/// One Adam update. All gradients are checked before anything is modified.
pub fn adam_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid("parameter, gradient and optimizer state lists differ in length"));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::invalid(format!("tensor {i}: parameter and gradient sizes differ")));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { tensor: i, index: j });
        }
    }
    state.t += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            let g = grads[i][j].as_f64();
            let mj = b1 * m[j].as_f64() + (1.0 - b1) * g;
            let vj = b2 * v[j].as_f64() + (1.0 - b2) * g * g;
            m[j] = T::of(mj);
            v[j] = T::of(vj);
            let update = lr * (mj / c1) / ((vj / c2).sqrt() + config.adam_eps);
            p[j] = T::of(p[j].as_f64() - update);
        }
    }
    Ok(())
}

/// Loss, gradients and normalization statistics of one training-mode pass.
pub struct StepResult<T> {
    pub loss: f64,
    /// Encoder parameters first (if any), then decoder trainable tensors.
    pub grads: Vec<Vec<T>>,
    pub stats: Vec<BatchStats<T>>,
}

/// A ray bundle with its target image, both ready for the network.
#[derive(Clone, Debug)]
pub struct PreparedSample<T> {
    pub rays: RayBundle<Ray4>,
    pub target: FeatureMap<T>,
}

pub fn image_to_map<T: Real>(img: &ImageBuffer) -> FeatureMap<T> {
    FeatureMap {
        batch: 1,
        height: img.height,
        width: img.width,
        channels: 3,
        data: img.data.iter().map(|&v| T::of(v as f64)).collect(),
    }
}

pub fn prepare_samples<T: Real>(model: &LightFieldModel<T>, samples: &[TrainSample]) -> Result<Vec<PreparedSample<T>>> {
    samples
        .iter()
        .map(|s| {
            let (h, w) = model.output_shape();
            if (s.target.height, s.target.width) != (h, w) {
                return Err(Error::invalid(format!(
                    "target is {}x{}, model renders {h}x{w}",
                    s.target.height, s.target.width
                )));
            }
            Ok(PreparedSample { rays: model.ray_bundle(&s.pose)?, target: image_to_map(&s.target) })
        })
        .collect()
}

/// Composed forward and backward pass over a batch of whole images.
pub fn compute_gradients<T: Real>(model: &LightFieldModel<T>, batch: &[&PreparedSample<T>]) -> Result<StepResult<T>> {
    let features = batch.iter().map(|s| model.encoder.encode_bundle(&s.rays)).collect::<Result<Vec<_>>>()?;
    let x = FeatureMap::stack(&features)?;
    let targets = FeatureMap::stack(&batch.iter().map(|s| s.target.clone()).collect::<Vec<_>>())?;
    let (y, tape) = model.decoder.forward_train(&x)?;
    let (loss, dy) = mse_loss(&y, &targets)?;
    let stats = tape.batch_stats().to_vec();
    let (dec, dx) = model.decoder.backward(tape, &dy)?;
    let mut grads = Vec::new();
    if !model.encoder.params().is_empty() {
        let mut enc = vec![T::zero(); model.encoder.params().len()];
        for (i, s) in batch.iter().enumerate() {
            model.encoder.accumulate_backward(&s.rays, &dx.item(i), &mut enc)?;
        }
        grads.push(enc);
    }
    grads.extend(dec.trainable().into_iter().map(|t| t.to_vec()));
    Ok(StepResult { loss, grads, stats })
}

/// Mutable views of every trainable tensor in [`StepResult::grads`] order.
pub fn trainable_mut<T: Real>(model: &mut LightFieldModel<T>) -> Vec<&mut [T]> {
    let mut out: Vec<&mut [T]> = Vec::new();
    let enc = model.encoder.params_mut();
    if !enc.is_empty() {
        out.push(enc);
    }
    out.extend(model.decoder.trainable_mut());
    out
}

/// Replaces the running normalization statistics with the average batch
/// statistics of training-mode passes over `samples`, `batch` images at a
/// time. Removes the lag of the momentum average behind changing weights.
pub fn recalibrate_norm_stats<T: Real>(
    model: &mut LightFieldModel<T>,
    samples: &[PreparedSample<T>],
    batch: usize,
) -> Result<()> {
    if samples.is_empty() {
        return Ok(());
    }
    let mut sum: Option<Vec<BatchStats<f64>>> = None;
    let mut chunks = 0usize;
    for chunk in samples.chunks(batch.max(1)) {
        let features = chunk.iter().map(|s| model.encoder.encode_bundle(&s.rays)).collect::<Result<Vec<_>>>()?;
        let (_, tape) = model.decoder.forward_train(&FeatureMap::stack(&features)?)?;
        let acc = sum.get_or_insert_with(|| {
            tape.batch_stats()
                .iter()
                .map(|st| BatchStats { mean: vec![0.0; st.mean.len()], var: vec![0.0; st.var.len()] })
                .collect()
        });
        for (a, st) in acc.iter_mut().zip(tape.batch_stats()) {
            a.mean.iter_mut().zip(&st.mean).for_each(|(a, &v)| *a += v.as_f64());
            a.var.iter_mut().zip(&st.var).for_each(|(a, &v)| *a += v.as_f64());
        }
        chunks += 1;
    }
    let n = chunks as f64;
    let avg: Vec<BatchStats<T>> = sum
        .unwrap_or_default()
        .into_iter()
        .map(|st| BatchStats {
            mean: st.mean.into_iter().map(|v| T::of(v / n)).collect(),
            var: st.var.into_iter().map(|v| T::of(v / n)).collect(),
        })
        .collect();
    model.decoder.update_running_from(&avg, 0.0)
}

/// Mean eval-mode PSNR over prepared samples.
pub fn evaluate_psnr<T: Real>(model: &LightFieldModel<T>, samples: &[PreparedSample<T>]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let y = model.decoder.forward_eval(&model.encoder.encode_bundle(&s.rays)?)?;
        let (mse, _) = mse_loss(&y, &s.target)?;
        total += psnr_from_mse(mse);
    }
    Ok(total / samples.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub psnr_on_holdout: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,lr,psnr_on_holdout\n");
        for r in &self.rows {
            let p = r.psnr_on_holdout.map(|p| format!("{p:.6}")).unwrap_or_default();
            writeln!(out, "{},{:e},{:e},{}", r.step, r.loss, r.lr, p).expect("write to string");
        }
        out
    }
}

/// Called every `checkpoint_every` steps with the number of completed steps.
pub type CheckpointHook<'a, T> = dyn FnMut(usize, &LightFieldModel<T>) -> Result<()> + 'a;

/// Trains `model` in place. On a non-finite loss or gradient the step is
/// abandoned and the error returned, leaving the model at its last good state.
pub fn train<T: Real>(
    model: &mut LightFieldModel<T>,
    samples: &[TrainSample],
    holdout: &[TrainSample],
    config: &TrainConfig,
    mut on_checkpoint: Option<&mut CheckpointHook<'_, T>>,
) -> Result<TrainHistory> {
    config.validate()?;
    let mut history = TrainHistory::default();
    if config.max_steps == 0 {
        return Ok(history);
    }
    if samples.is_empty() {
        return Err(Error::invalid("training needs at least one sample"));
    }
    let prepared = prepare_samples(model, samples)?;
    let held = prepare_samples(model, holdout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shapes: Vec<usize> = trainable_mut(model).iter().map(|t| t.len()).collect();
    let mut adam = AdamState::<T>::new(&shapes);

    for step in 0..config.max_steps {
        let batch: Vec<&PreparedSample<T>> =
            (0..config.batch_bundles).map(|_| &prepared[rng.random_range(0..prepared.len())]).collect();
        let result = compute_gradients(model, &batch)?;
        if !result.loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let lr = lr_at(step, config);
        adam_step(&mut trainable_mut(model), &result.grads, &mut adam, lr, config)?;
        model.decoder.update_running_from(&result.stats, RUNNING_MOMENTUM)?;

        let done = step + 1;
        let last = done == config.max_steps;
        if last && config.recalibrate_norm {
            recalibrate_norm_stats(model, &prepared, config.batch_bundles)?;
        }
        let evaluate = config.eval_every > 0 && !held.is_empty() && (done % config.eval_every == 0 || last);
        let checkpoint =
            on_checkpoint.is_some() && config.checkpoint_every > 0 && (done % config.checkpoint_every == 0 || last);
        // Intermediate evaluations and checkpoints see recalibrated statistics
        // without disturbing the running averages training continues with.
        let probe = if (evaluate || checkpoint) && config.recalibrate_norm && !last {
            let mut p = model.clone();
            recalibrate_norm_stats(&mut p, &prepared, config.batch_bundles)?;
            Some(p)
        } else {
            None
        };
        let snapshot = probe.as_ref().unwrap_or(model);
        let psnr_on_holdout = if evaluate { Some(evaluate_psnr(snapshot, &held)?) } else { None };
        if let Some(p) = psnr_on_holdout {
            log::info!("step {done}/{}: loss {:.3e}, held-out PSNR {p:.2} dB", config.max_steps, result.loss);
        }
        history.rows.push(HistoryRow { step, loss: result.loss, lr, psnr_on_holdout });
        if checkpoint {
            if let Some(hook) = on_checkpoint.as_mut() {
                hook(done, snapshot)?;
            }
        }
    }
    Ok(history)
}

/// Work for one sub-scene in [`train_partitioned`].
pub struct SubSceneJob<'a, T> {
    pub model: LightFieldModel<T>,
    pub samples: &'a [TrainSample],
    pub holdout: &'a [TrainSample],
    pub config: TrainConfig,
}

/// Trains each sub-scene model on its own thread. Models share nothing, so
/// results equal sequential training; a failure only affects its own entry.
pub fn train_partitioned<T: Real>(
    jobs: Vec<SubSceneJob<'_, T>>,
    parallel: bool,
) -> Vec<Result<(LightFieldModel<T>, TrainHistory)>> {
    let run = |mut job: SubSceneJob<'_, T>| {
        let history = train(&mut job.model, job.samples, job.holdout, &job.config, None)?;
        Ok((job.model, history))
    };
    if !parallel {
        return jobs.into_iter().map(run).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs.into_iter().map(|job| s.spawn(move || run(job))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidState("sub-scene training panicked".into()))))
            .collect()
    })
}

/// Everything needed to train a scene from a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    #[serde(default)]
    pub train: TrainConfig,
    pub model: ModelSpec,
    #[serde(default)]
    pub partition: PartitionConfig,
    /// Train sub-scenes on separate threads.
    #[serde(default = "yes")]
    pub parallel: bool,
}

fn yes() -> bool {
    true
}

/// Partitions the scene, trains one model per sub-scene and assembles the
/// result. Sub-scene `i` trains with seed `train.seed + i`; held-out frames
/// go to the sub-scene they route to.
pub fn train_scene(scene: &Scene, config: &SceneConfig) -> Result<(SceneModel, Vec<TrainHistory>)> {
    let poses: Vec<_> = scene.train.iter().map(|s| s.pose).collect();
    let partition = config.partition.build(&poses)?;
    let members = partition.assign_all(&poses)?.members();
    let mut train_sets = Vec::with_capacity(members.len());
    let mut hold_sets = vec![Vec::new(); members.len()];
    for (id, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            return Err(Error::invalid(format!("sub-scene {id} has no training frames")));
        }
        train_sets.push(idx.iter().map(|&i| scene.train[i].clone()).collect::<Vec<_>>());
    }
    for s in &scene.holdout {
        hold_sets[partition.route(&s.pose)].push(s.clone());
    }
    let mut jobs = Vec::with_capacity(members.len());
    for (id, samples) in train_sets.iter().enumerate() {
        let sub_poses: Vec<_> = samples.iter().map(|s| s.pose).collect();
        let seed = config.train.seed.wrapping_add(id as u64);
        let model = LightFieldModel::fit(&config.model, partition.ray_space(id)?, scene.camera, &sub_poses, seed)?;
        let train = TrainConfig { seed, ..config.train.clone() };
        jobs.push(SubSceneJob { model, samples, holdout: &hold_sets[id], config: train });
    }
    let mut models = Vec::with_capacity(jobs.len());
    let mut histories = Vec::with_capacity(jobs.len());
    for (id, r) in train_partitioned(jobs, config.parallel).into_iter().enumerate() {
        let (m, h) = r.map_err(|e| Error::InvalidState(format!("sub-scene {id}: {e}")))?;
        models.push(m);
        histories.push(h);
    }
    Ok((SceneModel::new(partition, models)?, histories))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_examples() {
        let c = TrainConfig { max_steps: 1000, ..Default::default() };
        assert_eq!(lr_at(0, &c), 1e-5);
        assert_eq!(lr_at(100, &c), 5e-4);
        assert_eq!(lr_at(1000, &c), 0.0);
        assert!((lr_at(50, &c) - (1e-5 + 0.5 * (5e-4 - 1e-5))).abs() < 1e-18);
        assert!((lr_at(550, &c) - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn lr_is_continuous() {
        let c = TrainConfig { max_steps: 300, warmup_steps: 30, ..Default::default() };
        let slope_up = (c.lr_peak - c.lr_init) / 30.0;
        let slope_down = c.lr_peak / 270.0;
        for s in 0..300 {
            let d = (lr_at(s + 1, &c) - lr_at(s, &c)).abs();
            assert!(d <= slope_up.max(slope_down) * (1.0 + 1e-9));
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { max_steps: 100, warmup_steps: 100, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr_peak: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { max_steps: 0, ..Default::default() }.validate().is_ok());
        let json = r#"{"max_steps": 50, "warmup_steps": 5}"#;
        let c: TrainConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.max_steps, 50);
        assert_eq!(c.lr_init, 1e-5);
    }

    fn map(data: Vec<f64>) -> FeatureMap<f64> {
        let n = data.len() / 3;
        FeatureMap::from_vec(1, 1, n, 3, data).unwrap()
    }

    #[test]
    fn mse_examples() {
        let (l, g) = mse_loss(&map(vec![0.2, 0.4, 0.6]), &map(vec![0.2, 0.4, 0.6])).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|&v| v == 0.0));
        let (l, _) = mse_loss(&map(vec![1.0; 6]), &map(vec![0.0; 6])).unwrap();
        assert_eq!(l, 1.0);
        let (l, g) = mse_loss(&map(vec![0.5; 3]), &map(vec![0.0; 3])).unwrap();
        assert_eq!(l, 0.25);
        for v in g.data {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(mse_loss(&map(vec![0.0; 3]), &map(vec![0.0; 6])).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let c = TrainConfig::default();
        let mut p = [1.0f64, -2.0];
        let mut st = AdamState::new(&[2]);
        adam_step(&mut [&mut p[..]], &[vec![1.0, 1.0]], &mut st, 0.1, &c).unwrap();
        let step = 0.1 / (1.0 + 1e-8);
        assert!((p[0] - (1.0 - step)).abs() < 1e-15);
        assert!((p[1] - (-2.0 - step)).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let c = TrainConfig::default();
        let mut p = vec![0.3f64];
        let mut st = AdamState::new(&[1]);
        st.m[0][0] = 0.5;
        st.v[0][0] = 0.25;
        st.t = 3;
        let before = p.clone();
        adam_step(&mut [&mut p[..]], &[vec![0.0]], &mut st, 0.0, &c).unwrap();
        assert_eq!(p, before);
        assert!((st.m[0][0] - 0.45).abs() < 1e-15);
        assert!((st.v[0][0] - 0.25 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn adam_two_steps_match_recursion() {
        let c = TrainConfig::default();
        let g = 0.7;
        let lr = 0.01;
        let mut p = [2.0f64];
        let mut st = AdamState::new(&[1]);
        adam_step(&mut [&mut p[..]], &[vec![g]], &mut st, lr, &c).unwrap();
        adam_step(&mut [&mut p[..]], &[vec![g]], &mut st, lr, &c).unwrap();
        // hand-unrolled recursion
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut expect = 2.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            expect -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((p[0] - expect).abs() < 1e-15);
        assert_eq!(st.t, 2);
    }

    #[test]
    fn adam_rejects_non_finite_without_mutation() {
        let c = TrainConfig::default();
        let mut a = vec![1.0f64, 2.0];
        let mut b = [3.0f64];
        let mut st = AdamState::new(&[2, 1]);
        let err =
            adam_step(&mut [&mut a[..], &mut b[..]], &[vec![0.1, 0.2], vec![f64::NAN]], &mut st, 0.1, &c).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { tensor: 1, index: 0 }));
        assert_eq!(a, vec![1.0, 2.0]);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn history_csv_layout() {
        let h = TrainHistory {
            rows: vec![
                HistoryRow { step: 0, loss: 0.5, lr: 1e-5, psnr_on_holdout: None },
                HistoryRow { step: 1, loss: 0.25, lr: 2e-5, psnr_on_holdout: Some(12.5) },
            ],
        };
        let csv = h.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,loss,lr,psnr_on_holdout");
        assert_eq!(lines[1], "0,5e-1,1e-5,");
        assert_eq!(lines[2], "1,2.5e-1,2e-5,12.500000");
    }
}
