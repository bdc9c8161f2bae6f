//! Per-frame convolutional encoder for point-trajectory maps.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, ParamVars, Real, Tape, Tensor, Var};
use crate::rng::Rng;

/// `(name, in, out)` of the six 3x3 convolutions; pooling follows conv 2 and conv 4.
fn conv_layers(c_f: usize) -> [(&'static str, usize, usize); 6] {
    [("c1", 3, 16), ("c2", 16, 16), ("c3", 16, 32), ("c4", 32, 32), ("c5", 32, c_f), ("c6", c_f, c_f)]
}

/// Output channels of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub c_f: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { c_f: 32 }
    }
}

impl EncoderConfig {
    /// Kaiming-uniform convolutions, zero biases, identity final linear.
    pub fn init<T: Real>(&self, rng: &mut Rng, prefix: &str, store: &mut ParamStore<T>) {
        for (name, cin, cout) in conv_layers(self.c_f) {
            let bound = (6.0 / (cin * 9) as f64).sqrt();
            let w = Tensor::from_fn(&[cout, cin, 3, 3], |_| T::from_f64(rng.random_range(-bound..bound)));
            store.insert(format!("{prefix}{name}.w"), w);
            store.insert(format!("{prefix}{name}.b"), Tensor::zeros(&[cout]));
        }
        let c = self.c_f;
        store.insert(format!("{prefix}fc.w"), Tensor::from_fn(&[c, c], |i| if i / c == i % c { T::ONE } else { T::ZERO }));
        store.insert(format!("{prefix}fc.b"), Tensor::zeros(&[c]));
    }

    /// Records the encoder on `tape`: `[L, 3, H, W]` in, `[L, c_f, H/4, W/4]` out.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, vars: &ParamVars, prefix: &str, p: Var) -> Result<Var> {
        let shape = tape.shape(p).to_vec();
        match shape[..] {
            [_, 3, h, w] if h % 4 == 0 && w % 4 == 0 => {}
            _ => return Err(Error::shape("encode", format!("expected [L, 3, H, W] with H, W divisible by 4, got {shape:?}"))),
        }
        let mut x = p;
        for (i, (name, _, _)) in conv_layers(self.c_f).into_iter().enumerate() {
            x = tape.conv2d(x, vars.get(&format!("{prefix}{name}.w"))?, 1, 1)?;
            x = tape.add_axis(x, vars.get(&format!("{prefix}{name}.b"))?, 1)?;
            x = tape.silu(x);
            if i == 1 || i == 3 {
                x = tape.avgpool2d(x, 2, 2)?;
            }
        }
        x = tape.permute(x, &[0, 2, 3, 1])?;
        x = tape.linear(x, vars.get(&format!("{prefix}fc.w"))?, Some(vars.get(&format!("{prefix}fc.b"))?))?;
        tape.permute(x, &[0, 3, 1, 2])
    }
}

/// Encodes `[L, 3, H, W]` trajectory maps with fixed parameters.
pub fn encode<T: Real>(p: &Tensor<T>, params: &ParamStore<T>, prefix: &str, cfg: &EncoderConfig) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let x = tape.constant(p.clone());
    let f = cfg.forward(&mut tape, &vars, prefix, x)?;
    Ok(tape.value(f).clone())
}

/// Records pooling of `[L, c_f, h, w]` features to `(th, tw)` and rearrangement to
/// `[th * tw, L, c_f]` per-position sequences.
pub fn downsample_features_var<T: Real>(tape: &mut Tape<T>, f: Var, th: usize, tw: usize) -> Result<Var> {
    let shape = tape.shape(f).to_vec();
    let [l, c, h, w] = shape[..] else {
        return Err(Error::shape("downsample_features", format!("expected [L, C, h, w], got {shape:?}")));
    };
    if th == 0 || tw == 0 || h % th != 0 || w % tw != 0 || h / th != w / tw {
        return Err(Error::shape("downsample_features", format!("{h}x{w} does not pool evenly to {th}x{tw}")));
    }
    let pooled = if h == th { f } else { tape.avgpool2d(f, h / th, h / th)? };
    let seq = tape.permute(pooled, &[2, 3, 0, 1])?;
    tape.reshape(seq, &[th * tw, l, c])
}

pub fn downsample_features<T: Real>(f: &Tensor<T>, th: usize, tw: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(f.clone());
    let y = downsample_features_var(&mut tape, x, th, tw)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn params(c_f: usize) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        EncoderConfig { c_f }.init(&mut rng::stream(0, "init", 0), "", &mut s);
        s
    }

    #[test]
    fn zero_input_zero_output() {
        let cfg = EncoderConfig { c_f: 8 };
        let f = encode(&Tensor::zeros(&[2, 3, 8, 8]), &params(8), "", &cfg).unwrap();
        assert_eq!(f.shape(), &[2, 8, 2, 2]);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_and_rejection() {
        let cfg = EncoderConfig::default();
        let p = Tensor::from_fn(&[2, 3, 32, 32], |i| ((i % 7) as f64) / 7.0);
        assert_eq!(encode(&p, &params(32), "", &cfg).unwrap().shape(), &[2, 32, 8, 8]);
        assert!(encode(&Tensor::zeros(&[2, 3, 30, 32]), &params(32), "", &cfg).is_err());
    }

    #[test]
    fn frame_equivariance() {
        let cfg = EncoderConfig { c_f: 4 };
        let ps = params(4);
        let p = Tensor::from_fn(&[3, 3, 8, 8], |i| ((i * 31 % 11) as f64) / 11.0);
        let f = encode(&p, &ps, "", &cfg).unwrap();
        let swapped = Tensor::from_fn(&[3, 3, 8, 8], |i| {
            let (frame, rest) = (i / 192, i % 192);
            p.data()[[2, 0, 1][frame] * 192 + rest]
        });
        let g = encode(&swapped, &ps, "", &cfg).unwrap();
        let n = 4 * 2 * 2;
        for (frame, src) in [2, 0, 1].into_iter().enumerate() {
            assert_eq!(&g.data()[frame * n..(frame + 1) * n], &f.data()[src * n..(src + 1) * n]);
        }
    }

    #[test]
    fn downsample_identity_constant_and_ramp() {
        let f = Tensor::from_fn(&[2, 3, 4, 4], |i| i as f64);
        let same = downsample_features(&f, 4, 4).unwrap();
        assert_eq!(same.shape(), &[16, 2, 3]);
        // Position p, frame l, channel c reads f[l, c, p / 4, p % 4].
        assert_eq!(same.at(&[5, 1, 2]), f.at(&[1, 2, 1, 1]));
        let c = downsample_features(&Tensor::full(&[2, 3, 8, 8], 0.7f64), 2, 2).unwrap();
        assert!(c.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let ramp = Tensor::from_fn(&[1, 1, 8, 8], |i| (i % 8) as f64);
        let r = downsample_features(&ramp, 4, 4).unwrap();
        for p in 0..16 {
            assert_eq!(r.data()[p], (p % 4) as f64 * 2.0 + 0.5);
        }
        assert!(downsample_features(&f, 3, 3).is_err());
    }
}
