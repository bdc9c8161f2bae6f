use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attention::{fused_block_var, AttentionDims, MapCollector, SuppressionConfig};
use crate::encoder::{downsample_features_var, EncoderConfig};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, ParamVars, Real, Tape, Tensor, Var};
use crate::rng::{self, Rng};

/// Side length of the patches folded into channels at the input.
pub const PATCH: usize = 4;

/// Geometry of the denoiser and its conditioning path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub c_f: usize,
    pub d: usize,
    pub d_model: usize,
    pub blocks: usize,
    /// False builds the ablation without the adapter branch.
    pub adapter: bool,
    /// Variance of the clip around its first frame assumed by the output skip.
    pub anchor_var: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { frames: 8, height: 32, width: 32, c_f: 32, d: 32, d_model: 32, blocks: 4, adapter: true, anchor_var: 0.1 }
    }
}

/// Alias kept for call sites that only care about the denoiser half.
pub type DenoiserConfig = ModelConfig;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.blocks == 0 || self.d == 0 || self.d_model == 0 || self.c_f == 0 {
            return Err(Error::invalid("frames, blocks, d, d_model and c_f must be positive"));
        }
        if !(self.anchor_var > 0.0 && self.anchor_var.is_finite()) {
            return Err(Error::invalid(format!("anchor_var must be positive, got {}", self.anchor_var)));
        }
        if self.height % PATCH != 0 || self.width % PATCH != 0 {
            return Err(Error::invalid(format!("{}x{} is not divisible by {PATCH}", self.height, self.width)));
        }
        let (gh, gw) = self.grid();
        if self.blocks > 2 && (gh % 2 != 0 || gw % 2 != 0) {
            return Err(Error::invalid(format!("token grid {gh}x{gw} cannot be halved for the middle blocks")));
        }
        Ok(())
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig { c_f: self.c_f }
    }

    pub fn attention(&self) -> AttentionDims {
        AttentionDims { d_model: self.d_model, d: self.d, c_f: self.c_f, adapter: self.adapter }
    }

    /// Token grid after patchifying.
    pub fn grid(&self) -> (usize, usize) {
        (self.height / PATCH, self.width / PATCH)
    }

    /// Token grid seen by block `k`: full at both ends, halved in between.
    pub fn block_grid(&self, k: usize) -> (usize, usize) {
        let (h, w) = self.grid();
        if k == 0 || k + 1 == self.blocks { (h, w) } else { (h / 2, w / 2) }
    }

    /// Fresh parameters. Encoder names start with `enc.`, denoiser names with `den.`.
    pub fn init<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.validate()?;
        let mut store = ParamStore::new();
        self.encoder().init(&mut rng::stream(seed, "init.encoder", 0), "enc.", &mut store);
        let mut r = rng::stream(seed, "init.denoiser", 0);
        let dm = self.d_model;
        let uniform = |r: &mut Rng, shape: &[usize], fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            Tensor::<T>::from_fn(shape, |_| T::from_f64(r.random_range(-bound..bound)))
        };
        store.insert("den.in.w", uniform(&mut r, &[dm, 6, PATCH, PATCH], 6 * PATCH * PATCH));
        store.insert("den.in.b", Tensor::zeros(&[dm]));
        store.insert("den.t1.w", uniform(&mut r, &[dm, dm], dm));
        store.insert("den.t1.b", Tensor::zeros(&[dm]));
        store.insert("den.t2.w", uniform(&mut r, &[dm, dm], dm));
        store.insert("den.t2.b", Tensor::zeros(&[dm]));
        for k in 0..self.blocks {
            store.insert(format!("den.b{k}.temb.w"), uniform(&mut r, &[dm, dm], dm));
            store.insert(format!("den.b{k}.temb.b"), Tensor::zeros(&[dm]));
            for c in ["conv1", "conv2"] {
                store.insert(format!("den.b{k}.{c}.w"), uniform(&mut r, &[dm, dm, 3, 3], dm * 9));
                store.insert(format!("den.b{k}.{c}.b"), Tensor::zeros(&[dm]));
            }
            self.attention().init(&mut r, &format!("den.b{k}.attn."), &mut store);
        }
        store.insert("den.out.w", Tensor::zeros(&[3 * PATCH * PATCH, dm, 1, 1]));
        store.insert("den.out.b", Tensor::zeros(&[3 * PATCH * PATCH]));
        store.insert("den.var.w", Tensor::zeros(&[3 * PATCH * PATCH, dm, 1, 1]));
        store.insert("den.var.b", Tensor::zeros(&[3 * PATCH * PATCH]));
        Ok(store)
    }
}

/// Sinusoidal features of `x` over `dim` channels: `[sin(x w_k)..., cos(x w_k)...]`.
fn sinusoid(x: f64, dim: usize) -> impl Iterator<Item = f64> {
    let half = dim / 2;
    (0..dim).map(move |c| {
        let k = c % half.max(1);
        let freq = (-(10000f64.ln()) * k as f64 / half.max(1) as f64).exp();
        if c < half { (x * freq).sin() } else { (x * freq).cos() }
    })
}

/// Frame-index embedding broadcast over `positions`, `[P, L, d_model]`.
fn frame_embedding<T: Real>(positions: usize, frames: usize, dim: usize) -> Tensor<T> {
    let table: Vec<f64> = (0..frames).flat_map(|i| sinusoid(i as f64, dim)).collect();
    Tensor::from_fn(&[positions, frames, dim], |i| T::from_f64(table[i % (frames * dim)]))
}

/// Handles to one temporal block's maps.
#[derive(Debug, Clone, Copy)]
pub struct BlockTrace {
    pub attn: Var,
    pub adapter: Option<Var>,
    pub grid: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct DenoiserOutput {
    pub eps: Var,
    pub blocks: Vec<BlockTrace>,
}

/// Parameters plus the geometry they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Ok(Self { config, params: config.init(seed)? })
    }

    pub fn encode(&self, tape: &mut Tape<T>, vars: &ParamVars, p: Var) -> Result<Var> {
        let shape = tape.shape(p);
        let want = [self.config.frames, 3, self.config.height, self.config.width];
        if shape != want {
            return Err(Error::shape("encode", format!("trajectory maps {shape:?}, model expects {want:?}")));
        }
        self.config.encoder().forward(tape, vars, "enc.", p)
    }

    /// Records the denoiser. `first` is the conditioning frame `[3, H, W]`.
    pub fn denoise(
        &self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        z_t: Var,
        t: f64,
        f: Var,
        first: &Tensor<T>,
        sup: &SuppressionConfig,
    ) -> Result<DenoiserOutput> {
        let cfg = &self.config;
        let (l, h, w, dm) = (cfg.frames, cfg.height, cfg.width, cfg.d_model);
        if tape.shape(z_t) != [l, 3, h, w] || first.shape() != [3, h, w] {
            return Err(Error::shape(
                "predict_noise",
                format!("z_t {:?} and first frame {:?} for a {l}x3x{h}x{w} model", tape.shape(z_t), first.shape()),
            ));
        }
        let (gh, gw) = cfg.grid();
        if tape.shape(f) != [l, cfg.c_f, gh, gw] {
            return Err(Error::shape("predict_noise", format!("features {:?} do not match the {gh}x{gw} token grid", tape.shape(f))));
        }
        let p = |name: &str| vars.get(&format!("den.{name}"));

        let reps: Vec<T> = (0..l).flat_map(|_| first.data().iter().copied()).collect();
        let cond = tape.constant(Tensor::new(&[l, 3, h, w], reps)?);
        let x = tape.concat(&[z_t, cond], 1)?;
        let mut hid = tape.conv2d(x, p("in.w")?, PATCH, 0)?;
        hid = tape.add_axis(hid, p("in.b")?, 1)?;

        let temb = tape.constant(Tensor::new(&[1, dm], sinusoid(t * 1000.0, dm).map(T::from_f64).collect())?);
        let mut temb = tape.linear(temb, p("t1.w")?, Some(p("t1.b")?))?;
        temb = tape.silu(temb);
        temb = tape.linear(temb, p("t2.w")?, Some(p("t2.b")?))?;
        temb = tape.silu(temb);

        let mut skip = None;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        let mut grid = cfg.grid();
        for k in 0..cfg.blocks {
            let target = cfg.block_grid(k);
            if target.0 < grid.0 {
                hid = tape.avgpool2d(hid, 2, 2)?;
            } else if target.0 > grid.0 {
                hid = tape.upsample_nearest(hid, 2)?;
                hid = tape.add(hid, skip.expect("skip recorded by block 0"))?;
            }
            grid = target;
            let pre = format!("b{k}.");

            let e = tape.linear(temb, p(&format!("{pre}temb.w"))?, Some(p(&format!("{pre}temb.b"))?))?;
            let e = tape.reshape(e, &[dm])?;
            let mut r = tape.silu(hid);
            r = tape.conv2d(r, p(&format!("{pre}conv1.w"))?, 1, 1)?;
            r = tape.add_axis(r, p(&format!("{pre}conv1.b"))?, 1)?;
            r = tape.add_axis(r, e, 1)?;
            r = tape.silu(r);
            r = tape.conv2d(r, p(&format!("{pre}conv2.w"))?, 1, 1)?;
            r = tape.add_axis(r, p(&format!("{pre}conv2.b"))?, 1)?;
            hid = tape.add(hid, r)?;

            let (bh, bw) = grid;
            let positions = bh * bw;
            let seq = tape.permute(hid, &[2, 3, 0, 1])?;
            let seq = tape.reshape(seq, &[positions, l, dm])?;
            let pos = tape.constant(frame_embedding(positions, l, dm));
            let seq = tape.add(seq, pos)?;
            let f_seq = downsample_features_var(tape, f, bh, bw)?;
            let out = fused_block_var(tape, vars, &format!("den.{pre}attn."), seq, f_seq, &cfg.attention(), sup)?;
            let o = tape.reshape(out.out, &[bh, bw, l, dm])?;
            let o = tape.permute(o, &[2, 3, 0, 1])?;
            hid = tape.add(hid, o)?;
            blocks.push(BlockTrace { attn: out.attn, adapter: out.adapter, grid });
            if k == 0 {
                skip = Some(hid);
            }
        }

        hid = tape.silu(hid);
        let net = unpatchify(tape, hid, p("out.w")?, p("out.b")?, (l, h, w))?;
        let log_var = unpatchify(tape, hid, p("var.w")?, p("var.b")?, (l, h, w))?;
        // Noise estimate sigma_t (z_t - alpha_t I) / (alpha_t^2 v + sigma_t^2) + alpha_t net
        // with per-pixel v = anchor_var exp(log_var). With net = 0 this is the
        // posterior mean under x_0 ~ N(I, v), so static pixels can settle on the first
        // frame exactly while the narrow body only refines the moving ones.
        let (alpha, sigma) = super::schedule_at(t)?;
        let v = tape.exp(log_var);
        let v = tape.scale(v, alpha * alpha * cfg.anchor_var);
        let floor = tape.constant(Tensor::full(&[l, 3, h, w], T::from_f64(sigma * sigma + 1e-6)));
        let denom = tape.add(v, floor)?;
        let gain = tape.recip(denom);
        let anchored = tape.scale(cond, alpha);
        let centered = tape.sub(z_t, anchored)?;
        let skip = tape.mul(centered, gain)?;
        let skip = tape.scale(skip, sigma);
        let net = tape.scale(net, alpha);
        let eps = tape.add(skip, net)?;
        Ok(DenoiserOutput { eps, blocks })
    }
}

/// 1x1 convolution to `3 * PATCH^2` channels folded back to `[L, 3, H, W]`.
fn unpatchify<T: Real>(tape: &mut Tape<T>, hid: Var, w: Var, b: Var, (l, h, wd): (usize, usize, usize)) -> Result<Var> {
    let out = tape.conv2d(hid, w, 1, 0)?;
    let out = tape.add_axis(out, b, 1)?;
    let out = tape.reshape(out, &[l, 3, PATCH, PATCH, h / PATCH, wd / PATCH])?;
    let out = tape.permute(out, &[0, 1, 4, 2, 5, 3])?;
    tape.reshape(out, &[l, 3, h, wd])
}

/// `eps_hat(z_t; f, I, t)` with fixed parameters; maps are appended to `collector`.
pub fn predict_noise<T: Real>(
    model: &Model<T>,
    z_t: &Tensor<T>,
    t: f64,
    f: &Tensor<T>,
    first: &Tensor<T>,
    sup: &SuppressionConfig,
    collector: Option<&mut MapCollector>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vars = model.params.register(&mut tape, false);
    let (z, fv) = (tape.constant(z_t.clone()), tape.constant(f.clone()));
    let out = model.denoise(&mut tape, &vars, z, t, fv, first, sup)?;
    if let Some(c) = collector {
        for b in &out.blocks {
            c.push(tape.value(b.attn), b.adapter.map(|a| tape.value(a)), b.grid);
        }
    }
    Ok(tape.value(out.eps).clone())
}
