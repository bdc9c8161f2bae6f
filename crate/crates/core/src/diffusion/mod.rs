//! Pixel-space video diffusion: noise schedule, losses, the conditional
//! denoiser, training and sampling.

mod checkpoint;
mod denoiser;
mod optim;
mod sampler;
mod train;

pub use checkpoint::Checkpoint;
pub use denoiser::{predict_noise, BlockTrace, DenoiserConfig, DenoiserOutput, Model, ModelConfig};
pub use optim::AdamW;
pub use sampler::{sample, sample_with, ModelPredictor, NoisePredictor, MIN_ALPHA};
pub use train::{
    evaluate_objective, objective_var, step_indices, step_noise, to_model_space, train_step, LossBreakdown, ObjectiveVars,
    TrainBatch, TrainSettings, TrainState,
};

use crate::attention::{mask_grid, AttentionMapSet};
use crate::error::{Error, Result};
use crate::numerics::{Real, Tape, Tensor, Var};
use crate::trajgen::ComponentMask;

/// Cosine variance-preserving schedule: `(cos(pi t / 2), sin(pi t / 2))`.
pub fn schedule_at(t: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("diffusion time {t} outside [0, 1]")));
    }
    if t == 1.0 {
        return Ok((0.0, 1.0));
    }
    let a = std::f64::consts::FRAC_PI_2 * t;
    Ok((a.cos(), a.sin()))
}

/// `z_t = alpha_t z_0 + sigma_t eps`.
pub fn forward_noise<T: Real>(z0: &Tensor<T>, t: f64, eps: &Tensor<T>) -> Result<Tensor<T>> {
    let (a, s) = schedule_at(t)?;
    let (a, s) = (T::from_f64(a), T::from_f64(s));
    z0.zip_map(eps, |x, e| a * x + s * e)
}

/// Mean squared error over all elements.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mse_loss", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let s: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a.to_f64() - b.to_f64()).powi(2)).sum();
    Ok(s / pred.len() as f64)
}

pub fn mse_loss_var<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// Squared diagonal attention weights inside the pooled motion masks, summed
/// over positions, frames and maps.
pub fn attention_loss(maps: &AttentionMapSet, masks: &[ComponentMask]) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<(Var, (usize, usize))> =
        maps.maps.iter().zip(&maps.grids).map(|(m, &g)| (tape.constant(m.cast()), g)).collect();
    let loss = attention_loss_var(&mut tape, &vars, masks)?;
    Ok(tape.value(loss).item())
}

pub fn attention_loss_var<T: Real>(tape: &mut Tape<T>, maps: &[(Var, (usize, usize))], masks: &[ComponentMask]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &(map, grid) in maps {
        let w = mask_grid::<T>(masks, grid)?;
        let diag = tape.diagonal(map)?;
        if tape.shape(diag) != w.shape() {
            return Err(Error::shape("attention_loss", format!("diagonal {:?} vs masks {:?}", tape.shape(diag), w.shape())));
        }
        let w = tape.constant(w);
        let prod = tape.mul(diag, w)?;
        let sq = tape.square(prod);
        let s = tape.sum(sq);
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    total.ok_or_else(|| Error::invalid("attention loss needs at least one attention map"))
}

/// `mse + lambda * attn`.
pub fn total_loss(mse: f64, attn: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(mse + lambda * attn)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_boundaries() {
        assert_eq!(schedule_at(0.0).unwrap(), (1.0, 0.0));
        assert_eq!(schedule_at(1.0).unwrap(), (0.0, 1.0));
        let (a, s) = schedule_at(0.5).unwrap();
        assert!((a - 0.5f64.sqrt()).abs() < 1e-15 && (s - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(schedule_at(1.01).is_err() && schedule_at(-0.1).is_err());
    }

    #[test]
    fn forward_noise_examples() {
        let z = Tensor::<f64>::full(&[2, 2], 2.0);
        let e = Tensor::<f64>::full(&[2, 2], -0.5);
        assert_eq!(forward_noise(&z, 0.0, &e).unwrap(), z);
        assert_eq!(forward_noise(&z, 1.0, &e).unwrap(), e);
        let zero = Tensor::zeros(&[2, 2]);
        let half = forward_noise(&z, 0.5, &zero).unwrap();
        assert!(half.data().iter().all(|&v| (v - 2f64.sqrt()).abs() < 1e-12));
        assert!(forward_noise(&z, 0.5, &Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn mse_examples() {
        let a = Tensor::<f64>::from_fn(&[3, 4], |i| i as f64);
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_loss(&a.map(|v| v + 2.0), &a).unwrap(), 4.0);
        assert!(mse_loss(&a, &Tensor::zeros(&[12])).is_err());
    }

    fn uniform_set(l: usize) -> AttentionMapSet {
        AttentionMapSet {
            maps: vec![Tensor::full(&[4, l, l], 1.0 / l as f32)],
            adapter_maps: vec![],
            grids: vec![(2, 2)],
        }
    }

    #[test]
    fn attention_loss_examples() {
        let full = vec![ComponentMask::full(0, 2, 2); 2];
        assert!((attention_loss(&uniform_set(2), &full).unwrap() - 2.0).abs() < 1e-12);
        let empty = vec![ComponentMask::from_fn(0, 2, 2, |_, _| false); 2];
        assert_eq!(attention_loss(&uniform_set(2), &empty).unwrap(), 0.0);
        // Zero diagonal: entries (i, j != i) only.
        let off = Tensor::from_fn(&[4, 2, 2], |i| if (i % 4) == 1 || (i % 4) == 2 { 1.0 } else { 0.0 });
        let set = AttentionMapSet { maps: vec![off], adapter_maps: vec![], grids: vec![(2, 2)] };
        assert_eq!(attention_loss(&set, &full).unwrap(), 0.0);
        let none = AttentionMapSet { maps: vec![], adapter_maps: vec![], grids: vec![] };
        assert!(attention_loss(&none, &full).is_err());
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_loss(1.5, 7.0, 0.0).unwrap(), 1.5);
        assert_eq!(total_loss(1.0, 2.0, 0.5).unwrap(), 2.0);
        assert!(total_loss(1.0, 2.0, -0.1).is_err());
    }
}
