use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{attention_loss_var, forward_noise, mse_loss_var, AdamW, DenoiserOutput, Model};
use crate::attention::{collect_maps, AttentionMapSet, MapCollector, SuppressionConfig};
use crate::error::{Error, Result};
use crate::evalkit::SyntheticSample;
use crate::numerics::{Gradients, ParamVars, Real, Tape, Tensor, Var};
use crate::rng;
use crate::trajgen::{ComponentMask, PointTrajectoryTensor};

/// One training clip in model space.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch<T: Real = f32> {
    /// Clip scaled to `[-1, 1]`, `[L, 3, H, W]`.
    pub z0: Tensor<T>,
    /// Point-trajectory maps, `[L, 3, H, W]` in `[0, 1]`.
    pub p: Tensor<T>,
    /// Per-frame union of moving components.
    pub masks: Vec<ComponentMask>,
    /// First frame of `z0`, `[3, H, W]`.
    pub first: Tensor<T>,
}

/// `[0, 1]` pixels to model space.
pub fn to_model_space<T: Real>(x: &Tensor<f32>) -> Tensor<T> {
    Tensor::from_fn(x.shape(), |i| T::from_f64(x.data()[i] as f64 * 2.0 - 1.0))
}

impl<T: Real> TrainBatch<T> {
    pub fn from_sample(sample: &SyntheticSample, p: &PointTrajectoryTensor) -> Result<Self> {
        if (p.frames(), p.height(), p.width()) != (sample.frames, sample.height, sample.width) {
            return Err(Error::shape(
                "train batch",
                format!("clip {}: trajectories {:?} vs clip {}x{}x{}", sample.id, p.0.shape(), sample.frames, sample.height, sample.width),
            ));
        }
        let z0 = to_model_space::<T>(&sample.clip);
        let n = 3 * sample.height * sample.width;
        let first = Tensor::new(&[3, sample.height, sample.width], z0.data()[..n].to_vec())?;
        Ok(Self {
            z0,
            p: p.to_channels_first().cast(),
            masks: (0..sample.frames).map(|i| sample.motion_mask(i)).collect(),
            first,
        })
    }
}

/// Loss values of one step, as logged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: u64,
    pub mse: f64,
    pub attn: f64,
    pub total: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct ObjectiveVars {
    pub mse: Var,
    pub attn: Var,
    pub total: Var,
    pub output: DenoiserOutput,
}

/// Records `mse(eps_hat, eps) + lambda * attn` for one clip at diffusion time `t`.
#[allow(clippy::too_many_arguments)]
pub fn objective_var<T: Real>(
    tape: &mut Tape<T>,
    model: &Model<T>,
    vars: &ParamVars,
    batch: &TrainBatch<T>,
    t: f64,
    eps: &Tensor<T>,
    lambda: f64,
    sup: &SuppressionConfig,
) -> Result<ObjectiveVars> {
    let z_t = tape.constant(forward_noise(&batch.z0, t, eps)?);
    let p = tape.constant(batch.p.clone());
    let f = model.encode(tape, vars, p)?;
    let output = model.denoise(tape, vars, z_t, t, f, &batch.first, sup)?;
    let target = tape.constant(eps.clone());
    let mse = mse_loss_var(tape, output.eps, target)?;
    let maps: Vec<_> = output.blocks.iter().map(|b| (b.attn, b.grid)).collect();
    let attn = attention_loss_var(tape, &maps, &batch.masks)?;
    let weighted = tape.scale(attn, lambda);
    let total = tape.add(mse, weighted)?;
    Ok(ObjectiveVars { mse, attn, total, output })
}

/// Loss values and original-branch maps with fixed parameters; nothing is updated.
pub fn evaluate_objective<T: Real>(
    model: &Model<T>,
    batch: &TrainBatch<T>,
    t: f64,
    eps: &Tensor<T>,
    lambda: f64,
    alpha: f64,
) -> Result<(LossBreakdown, AttentionMapSet)> {
    let mut tape = Tape::new();
    let vars = model.params.register(&mut tape, false);
    let o = objective_var(&mut tape, model, &vars, batch, t, eps, lambda, &SuppressionConfig::training(alpha))?;
    let mut col = MapCollector::default();
    for b in &o.output.blocks {
        col.push(tape.value(b.attn), b.adapter.map(|a| tape.value(a)), b.grid);
    }
    let v = |x: Var| tape.value(x).item().to_f64();
    Ok((LossBreakdown { step: 0, mse: v(o.mse), attn: v(o.attn), total: v(o.total), lambda }, collect_maps(&col)?))
}

/// Optimizer and loss hyperparameters of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub lambda: f64,
    pub alpha: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { lambda: 0.1, alpha: 0.35, lr: 1e-3, weight_decay: 1e-2, batch: 1, seed: 0 }
    }
}

/// Everything that evolves during training. The step counter lives in the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T: Real = f32> {
    pub settings: TrainSettings,
    pub model: Model<T>,
    pub opt: AdamW<T>,
}

impl<T: Real> TrainState<T> {
    pub fn new(model: Model<T>, settings: TrainSettings) -> Self {
        let opt = AdamW::new(&model.params, settings.lr, settings.weight_decay);
        Self { settings, model, opt }
    }

    pub fn step(&self) -> u64 {
        self.opt.step
    }
}

/// Diffusion time and noise for item `item` of step `step`.
pub fn step_noise<T: Real>(seed: u64, step: u64, item: usize, shape: &[usize]) -> (f64, Tensor<T>) {
    let mut r = rng::stream(rng::derive(seed, "noise", step), "item", item as u64);
    let t: f64 = r.random();
    let eps = Tensor::from_fn(shape, |_| T::from_f64(r.sample::<f64, _>(StandardNormal)));
    (t, eps)
}

/// Clip indices drawn for step `step`.
pub fn step_indices(seed: u64, step: u64, batch: usize, n: usize) -> Vec<usize> {
    let mut r = rng::stream(seed, "batch", step);
    (0..batch).map(|_| r.random_range(0..n)).collect()
}

/// One optimizer update on a seeded minibatch drawn from `data`.
pub fn train_step<T: Real>(state: &mut TrainState<T>, data: &[TrainBatch<T>]) -> Result<LossBreakdown> {
    if data.is_empty() || state.settings.batch == 0 {
        return Err(Error::invalid("training needs at least one clip and a positive batch size"));
    }
    let s = state.settings;
    let step = state.opt.step;
    let sup = SuppressionConfig::training(s.alpha);
    let scale = 1.0 / s.batch as f64;
    let mut grads: Option<Gradients<T>> = None;
    let (mut mse, mut attn) = (0.0, 0.0);
    for (item, idx) in step_indices(s.seed, step, s.batch, data.len()).into_iter().enumerate() {
        let batch = &data[idx];
        let (t, eps) = step_noise::<T>(s.seed, step, item, batch.z0.shape());
        let mut tape = Tape::new();
        let vars = state.model.params.register(&mut tape, true);
        let o = objective_var(&mut tape, &state.model, &vars, batch, t, &eps, s.lambda, &sup)?;
        mse += tape.value(o.mse).item().to_f64() * scale;
        attn += tape.value(o.attn).item().to_f64() * scale;
        let loss = tape.scale(o.total, scale);
        let g = tape.backward(loss)?;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => {
                for (name, gi) in g {
                    if let Some(a) = acc.get_mut(&name) {
                        a.add_assign(&gi);
                    }
                }
            }
        }
    }
    let total = mse + s.lambda * attn;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss { step, mse, attn });
    }
    let grads = grads.expect("batch is non-empty");
    state.opt.update(&mut state.model.params, &grads)?;
    Ok(LossBreakdown { step, mse, attn, total, lambda: s.lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ModelConfig;
    use crate::evalkit::{gen_dataset, DatasetConfig};
    use crate::trajgen::{rasterize, sample_trajectories};

    fn tiny_data(count: usize) -> (ModelConfig, Vec<TrainBatch<f32>>) {
        let cfg = ModelConfig { frames: 4, height: 16, width: 16, c_f: 8, d: 8, d_model: 16, blocks: 2, adapter: true, anchor_var: 0.1 };
        let ds = DatasetConfig {
            count,
            frames: 4,
            height: 16,
            width: 16,
            components: vec![1],
            size_range: [2.0, 2.5],
            speed_range: [0.75, 1.0],
            ..Default::default()
        };
        let data = gen_dataset(&ds)
            .unwrap()
            .iter()
            .map(|s| {
                let tr = sample_trajectories(s, 4, 0).unwrap();
                TrainBatch::from_sample(s, &rasterize(&tr, 4, 16, 16, 1.0).unwrap()).unwrap()
            })
            .collect();
        (cfg, data)
    }

    #[test]
    fn same_seed_same_parameters() {
        let (cfg, data) = tiny_data(2);
        let run = || {
            let mut st = TrainState::new(Model::<f32>::new(cfg, 5).unwrap(), TrainSettings { seed: 9, ..Default::default() });
            for _ in 0..3 {
                train_step(&mut st, &data).unwrap();
            }
            st
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.step(), 3);
    }

    #[test]
    fn initial_loss_matches_closed_form_estimate() {
        // At init both heads output zero, so eps_hat = sigma (z_t - alpha I) / (alpha^2 v + sigma^2).
        let (cfg, data) = tiny_data(1);
        let st = TrainState::new(Model::<f32>::new(cfg, 0).unwrap(), TrainSettings { lambda: 0.0, ..Default::default() });
        let b = &data[0];
        let (_, eps) = step_noise::<f32>(0, 0, 0, b.z0.shape());
        let t = 0.4;
        let (l, _) = evaluate_objective(&st.model, b, t, &eps, 0.0, 0.35).unwrap();
        let (a, s) = crate::diffusion::schedule_at(t).unwrap();
        let n = b.first.len();
        let direct = (0..eps.len())
            .map(|i| {
                let z = a * b.z0.data()[i] as f64 + s * eps.data()[i] as f64;
                (s * (z - a * b.first.data()[i % n] as f64) / (a * a * cfg.anchor_var + s * s + 1e-6) - eps.data()[i] as f64).powi(2)
            })
            .sum::<f64>()
            / eps.len() as f64;
        assert!((l.total - direct).abs() < 1e-5, "{} vs {direct}", l.total);
    }
}
