use rand_distr::{Distribution, StandardNormal};

use super::{predict_noise, schedule_at, Model};
use crate::attention::{MapCollector, SuppressionConfig};
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;
use crate::trajgen::PointTrajectoryTensor;

/// Floor on `alpha_t` when recovering `z_0` near `t = 1`.
pub const MIN_ALPHA: f64 = 1e-3;

/// Anything that maps `(z_t, t)` to a noise estimate.
pub trait NoisePredictor {
    fn predict(&mut self, z: &Tensor<f32>, t: f64) -> Result<Tensor<f32>>;
}

/// Deterministic sampler on the uniform grid `1 = t_N > ... > t_0 = 0`, starting
/// from seeded Gaussian noise. Returns `z` in model space.
pub fn sample_with<P: NoisePredictor + ?Sized>(predictor: &mut P, shape: &[usize], steps: usize, seed: u64) -> Result<Tensor<f32>> {
    if steps == 0 {
        return Err(Error::invalid("sampling needs at least one step"));
    }
    let mut r = rng::stream(seed, "sample", 0);
    let mut z = Tensor::from_fn(shape, |_| StandardNormal.sample(&mut r));
    for k in (1..=steps).rev() {
        let (t, s) = (k as f64 / steps as f64, (k - 1) as f64 / steps as f64);
        let eps = predictor.predict(&z, t)?;
        if eps.shape() != z.shape() {
            return Err(Error::shape("sample", format!("predictor returned {:?} for {:?}", eps.shape(), z.shape())));
        }
        let (a_t, s_t) = schedule_at(t)?;
        let (a_s, s_s) = schedule_at(s)?;
        z = z.zip_map(&eps, |zi, ei| {
            let (zi, ei) = (zi as f64, ei as f64);
            let x0 = (zi - s_t * ei) / a_t.max(MIN_ALPHA);
            (a_s * x0 + s_s * ei) as f32
        })?;
    }
    Ok(z)
}

/// The trained denoiser with its conditioning fixed for one video.
pub struct ModelPredictor<'a> {
    pub model: &'a Model<f32>,
    /// Encoded trajectories, computed once.
    pub features: Tensor<f32>,
    /// Conditioning frame in model space.
    pub first: Tensor<f32>,
    pub suppression: SuppressionConfig,
    /// Records maps of every call when set.
    pub collector: Option<MapCollector>,
}

impl<'a> ModelPredictor<'a> {
    /// `first_frame` is `[3, H, W]` in `[0, 1]`.
    pub fn new(model: &'a Model<f32>, first_frame: &Tensor<f32>, p: &PointTrajectoryTensor, suppression: SuppressionConfig) -> Result<Self> {
        let cfg = &model.config;
        if first_frame.shape() != [3, cfg.height, cfg.width] || (p.frames(), p.height(), p.width()) != (cfg.frames, cfg.height, cfg.width) {
            return Err(Error::shape(
                "infer",
                format!(
                    "first frame {:?} and trajectories {:?} for a model trained at L={}, {}x{}",
                    first_frame.shape(),
                    p.0.shape(),
                    cfg.frames,
                    cfg.height,
                    cfg.width
                ),
            ));
        }
        let features = encode(&p.to_channels_first(), &model.params, "enc.", &cfg.encoder())?;
        Ok(Self { model, features, first: first_frame.map(|v| v * 2.0 - 1.0), suppression, collector: None })
    }
}

impl NoisePredictor for ModelPredictor<'_> {
    fn predict(&mut self, z: &Tensor<f32>, t: f64) -> Result<Tensor<f32>> {
        predict_noise(self.model, z, t, &self.features, &self.first, &self.suppression, self.collector.as_mut())
    }
}

/// Generates `[L, 3, H, W]` frames in `[0, 1]` with inference fill `tau`.
#[allow(clippy::too_many_arguments)]
pub fn sample(
    model: &Model<f32>,
    first_frame: &Tensor<f32>,
    p: &PointTrajectoryTensor,
    steps: usize,
    alpha: f64,
    tau: f64,
    seed: u64,
) -> Result<Tensor<f32>> {
    let mut pred = ModelPredictor::new(model, first_frame, p, SuppressionConfig::inference(alpha, tau))?;
    let cfg = &model.config;
    let z = sample_with(&mut pred, &[cfg.frames, 3, cfg.height, cfg.width], steps, seed)?;
    Ok(z.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)))
}
