//! Temporal self-attention with a trajectory-driven adapter branch.
//!
//! At every spatial position the block attends across the `L` frames. The
//! adapter branch computes its own attention map `A'` from the encoded
//! trajectories; entries of `A'` at or above a threshold become an additive
//! mask on the original branch's logits. The two maps are summed before they
//! weight the shared values: `O = (A + A') V`.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, ParamVars, Real, Tape, Tensor, Var, NEG};

/// Whether the mask fill is the training clamp or the inference knob.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    Training,
    Inference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuppressionConfig {
    /// Threshold on `A'`; entries `>= alpha` are masked.
    pub alpha: f64,
    /// Fill used in inference mode. `0` leaves the original branch untouched.
    pub tau: f64,
    pub mode: MaskMode,
}

impl SuppressionConfig {
    pub fn training(alpha: f64) -> Self {
        Self { alpha, tau: 0.0, mode: MaskMode::Training }
    }

    pub fn inference(alpha: f64, tau: f64) -> Self {
        Self { alpha, tau, mode: MaskMode::Inference }
    }

    pub fn fill(&self) -> f64 {
        match self.mode {
            MaskMode::Training => NEG,
            MaskMode::Inference => self.tau,
        }
    }
}

/// Shape of one attention block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionDims {
    pub d_model: usize,
    /// Query/key/value width of the single head.
    pub d: usize,
    /// Channels of the trajectory features.
    pub c_f: usize,
    /// When false, `A'` is replaced by zeros and no mask is applied.
    pub adapter: bool,
}

impl AttentionDims {
    pub fn scale(&self) -> f64 {
        1.0 / (self.d as f64).sqrt()
    }

    /// Query, key and value projections with Xavier-uniform weights; adapter
    /// query/key start as copies of the original ones, truncated or zero-padded
    /// to `c_f` rows. The output projection starts at zero so each block begins
    /// as an identity residual.
    pub fn init<T: Real>(&self, rng: &mut crate::rng::Rng, prefix: &str, store: &mut ParamStore<T>) {
        let mut xavier = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Tensor::<T>::from_fn(&[rows, cols], |_| T::from_f64(rng.random_range(-bound..bound)))
        };
        let wq = xavier(self.d_model, self.d);
        let wk = xavier(self.d_model, self.d);
        let wv = xavier(self.d_model, self.d);
        let adapt = |w: &Tensor<T>| {
            Tensor::from_fn(&[self.c_f, self.d], |i| {
                let (r, c) = (i / self.d, i % self.d);
                if r < self.d_model { w.at(&[r, c]) } else { T::ZERO }
            })
        };
        store.insert(format!("{prefix}aq"), adapt(&wq));
        store.insert(format!("{prefix}ak"), adapt(&wk));
        store.insert(format!("{prefix}wq"), wq);
        store.insert(format!("{prefix}wk"), wk);
        store.insert(format!("{prefix}wv"), wv);
        store.insert(format!("{prefix}wo"), Tensor::zeros(&[self.d, self.d_model]));
        store.insert(format!("{prefix}bo"), Tensor::zeros(&[self.d_model]));
    }
}

/// Additive mask from the adapter map: `fill` where `A' >= alpha`, else `0`.
///
/// A row whose every entry meets the threshold keeps its largest entry unmasked.
pub fn build_mask<T: Real>(adapter_map: &Tensor<T>, cfg: &SuppressionConfig) -> Tensor<T> {
    let (rows, n) = adapter_map.rows();
    let fill = T::from_f64(cfg.fill());
    let alpha = T::from_f64(cfg.alpha);
    let src = adapter_map.data();
    let mut out = vec![T::ZERO; src.len()];
    for r in 0..rows {
        let row = &src[r * n..(r + 1) * n];
        let dst = &mut out[r * n..(r + 1) * n];
        let mut all = true;
        for (d, &a) in dst.iter_mut().zip(row) {
            if a >= alpha {
                *d = fill;
            } else {
                all = false;
            }
        }
        if all {
            let mut best = 0;
            for j in 1..n {
                if row[j] > row[best] {
                    best = j;
                }
            }
            dst[best] = T::ZERO;
        }
    }
    Tensor::from_parts(adapter_map.shape().to_vec(), out)
}

/// Tape handles produced by one block.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    /// Block output after the output projection, `[P, L, d_model]`.
    pub out: Var,
    /// `(A + A') V` before the output projection, `[P, L, d]`.
    pub mixed: Var,
    /// Original-branch map `A` after masking, `[P, L, L]`.
    pub attn: Var,
    /// Adapter map `A'`, absent when the adapter is disabled.
    pub adapter: Option<Var>,
}

/// Records `A' = softmax(Q' K'^T / sqrt(d))` with `Q' = f W'_q`, `K' = f W'_k`.
pub fn adapter_map_var<T: Real>(tape: &mut Tape<T>, f_seq: Var, aq: Var, ak: Var, dims: &AttentionDims) -> Result<Var> {
    let q = tape.linear(f_seq, aq, None)?;
    let k = tape.linear(f_seq, ak, None)?;
    let logits = tape.bmm(q, k, false, true)?;
    Ok(tape.softmax_rows(logits, dims.scale()))
}

/// Records `A = softmax(Q K^T / sqrt(d) + A_M)`.
pub fn masked_attention_var<T: Real>(tape: &mut Tape<T>, x_seq: Var, wq: Var, wk: Var, mask: Option<Var>, dims: &AttentionDims) -> Result<Var> {
    let q = tape.linear(x_seq, wq, None)?;
    let k = tape.linear(x_seq, wk, None)?;
    let mut logits = tape.bmm(q, k, false, true)?;
    logits = tape.scale(logits, dims.scale());
    if let Some(m) = mask {
        logits = tape.add(logits, m)?;
    }
    Ok(tape.softmax_rows(logits, 1.0))
}

/// Full block on per-position sequences: `x_seq [P, L, d_model]`, `f_seq [P, L, c_f]`.
pub fn fused_block_var<T: Real>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    prefix: &str,
    x_seq: Var,
    f_seq: Var,
    dims: &AttentionDims,
    cfg: &SuppressionConfig,
) -> Result<BlockVars> {
    let (xs, fs) = (tape.shape(x_seq).to_vec(), tape.shape(f_seq).to_vec());
    if xs.len() != 3 || fs.len() != 3 || xs[0] != fs[0] || xs[1] != fs[1] {
        return Err(Error::shape("fused_block", format!("x {xs:?} vs f {fs:?}")));
    }
    let p = |name: &str| vars.get(&format!("{prefix}{name}"));
    let (adapter, mask) = if dims.adapter {
        let a = adapter_map_var(tape, f_seq, p("aq")?, p("ak")?, dims)?;
        let m = build_mask(tape.value(a), cfg);
        (Some(a), Some(tape.constant(m)))
    } else {
        (None, None)
    };
    let attn = masked_attention_var(tape, x_seq, p("wq")?, p("wk")?, mask, dims)?;
    let weights = match adapter {
        Some(a) => tape.add(attn, a)?,
        _ => attn,
    };
    let v = tape.linear(x_seq, p("wv")?, None)?;
    let mixed = tape.bmm(weights, v, false, false)?;
    let out = tape.linear(mixed, p("wo")?, Some(p("bo")?))?;
    Ok(BlockVars { out, mixed, attn, adapter })
}

fn with_constants<T: Real, R>(f: impl FnOnce(&mut Tape<T>) -> Result<R>) -> Result<R> {
    let mut tape = Tape::new();
    f(&mut tape)
}

/// `A'` for per-position trajectory sequences `[P, L, c_f]`.
pub fn adapter_map<T: Real>(f_seq: &Tensor<T>, aq: &Tensor<T>, ak: &Tensor<T>, dims: &AttentionDims) -> Result<Tensor<T>> {
    with_constants(|tape| {
        let (f, q, k) = (tape.constant(f_seq.clone()), tape.constant(aq.clone()), tape.constant(ak.clone()));
        let a = adapter_map_var(tape, f, q, k, dims)?;
        Ok(tape.value(a).clone())
    })
}

/// Original-branch map under an additive mask.
pub fn masked_original_attention<T: Real>(x_seq: &Tensor<T>, wq: &Tensor<T>, wk: &Tensor<T>, mask: &Tensor<T>, dims: &AttentionDims) -> Result<Tensor<T>> {
    with_constants(|tape| {
        let (x, q, k, m) = (tape.constant(x_seq.clone()), tape.constant(wq.clone()), tape.constant(wk.clone()), tape.constant(mask.clone()));
        let a = masked_attention_var(tape, x, q, k, Some(m), dims)?;
        Ok(tape.value(a).clone())
    })
}

/// Values of one block evaluated outside training.
#[derive(Debug, Clone)]
pub struct BlockOutput<T: Real> {
    pub out: Tensor<T>,
    pub mixed: Tensor<T>,
    pub attn: Tensor<T>,
    pub adapter: Option<Tensor<T>>,
}

pub fn fused_block<T: Real>(
    x_seq: &Tensor<T>,
    f_seq: &Tensor<T>,
    params: &ParamStore<T>,
    prefix: &str,
    dims: &AttentionDims,
    cfg: &SuppressionConfig,
) -> Result<BlockOutput<T>> {
    with_constants(|tape| {
        let vars = params.register(tape, false);
        let (x, f) = (tape.constant(x_seq.clone()), tape.constant(f_seq.clone()));
        let b = fused_block_var(tape, &vars, prefix, x, f, dims, cfg)?;
        Ok(BlockOutput {
            out: tape.value(b.out).clone(),
            mixed: tape.value(b.mixed).clone(),
            attn: tape.value(b.attn).clone(),
            adapter: b.adapter.map(|a| tape.value(a).clone()),
        })
    })
}

/// Original-branch maps of one forward pass, one per temporal block in block order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMapSet {
    /// `[P_q, L, L]` per block.
    pub maps: Vec<Tensor<f32>>,
    /// Adapter maps in the same order, when the adapter is enabled.
    pub adapter_maps: Vec<Tensor<f32>>,
    /// Position grid `(h, w)` of each block.
    pub grids: Vec<(usize, usize)>,
}

/// Appends maps in block order as the forward pass produces them.
#[derive(Debug, Default)]
pub struct MapCollector {
    maps: Vec<Tensor<f32>>,
    adapter_maps: Vec<Tensor<f32>>,
    grids: Vec<(usize, usize)>,
}

impl MapCollector {
    pub fn push<T: Real>(&mut self, attn: &Tensor<T>, adapter: Option<&Tensor<T>>, grid: (usize, usize)) {
        self.maps.push(attn.cast());
        if let Some(a) = adapter {
            self.adapter_maps.push(a.cast());
        }
        self.grids.push(grid);
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

/// The collected set; rejected when no forward pass has recorded a block yet.
pub fn collect_maps(collector: &MapCollector) -> Result<AttentionMapSet> {
    if collector.is_empty() {
        return Err(Error::invalid("no attention maps recorded: run a forward pass first"));
    }
    Ok(AttentionMapSet {
        maps: collector.maps.clone(),
        adapter_maps: collector.adapter_maps.clone(),
        grids: collector.grids.clone(),
    })
}

/// Per-frame masks average-pooled to a block's position grid, laid out `[h * w, L]`
/// to line up with the diagonal of a `[P, L, L]` map.
pub fn mask_grid<T: Real>(masks: &[crate::trajgen::ComponentMask], grid: (usize, usize)) -> Result<Tensor<T>> {
    let Some(first) = masks.first() else {
        return Err(Error::invalid("no masks"));
    };
    let (mh, mw) = (first.height, first.width);
    let (h, w) = grid;
    if h == 0 || w == 0 || mh % h != 0 || mw % w != 0 || mh / h != mw / w {
        return Err(Error::shape("mask_grid", format!("{mh}x{mw} masks onto a {h}x{w} grid")));
    }
    let win = mh / h;
    let l = masks.len();
    let mut out = vec![0.0f64; h * w * l];
    for (i, m) in masks.iter().enumerate() {
        if (m.height, m.width) != (mh, mw) {
            return Err(Error::shape("mask_grid", "masks differ in size"));
        }
        for row in 0..mh {
            for col in 0..mw {
                if m.get(col, row) {
                    let p = (row / win) * w + col / win;
                    out[p * l + i] += 1.0;
                }
            }
        }
    }
    let norm = 1.0 / (win * win) as f64;
    Ok(Tensor::from_parts(vec![h * w, l], out.into_iter().map(|v| T::from_f64(v * norm)).collect()))
}
