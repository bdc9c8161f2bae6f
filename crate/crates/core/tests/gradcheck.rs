//! Tape gradients against central finite differences in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trackctl::attention::SuppressionConfig;
use trackctl::diffusion::{objective_var, Model, ModelConfig, TrainBatch};
use trackctl::numerics::Gradients;
use trackctl::trajgen::ComponentMask;
use trackctl::{ParamStore, Tape, Tensor};

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
/// Central-difference roundoff at this step size is about 1e-16 / STEP; the
/// absolute slack covers it for gradients too small for a relative test.
const ABS_TOL: f64 = 1e-10;

fn agrees(a: f64, b: f64) -> bool {
    (a - b).abs() <= REL_TOL * a.abs().max(b.abs()) + ABS_TOL
}

fn tiny(adapter: bool) -> ModelConfig {
    ModelConfig { frames: 2, height: 8, width: 8, c_f: 4, d: 4, d_model: 8, blocks: 1, adapter, anchor_var: 0.1 }
}

fn batch(rng: &mut ChaCha8Rng) -> TrainBatch<f64> {
    let z0 = Tensor::from_fn(&[2, 3, 8, 8], |_| rng.random_range(-1.0..1.0));
    let p = Tensor::from_fn(&[2, 3, 8, 8], |_| if rng.random_bool(0.2) { rng.random_range(0.0..1.0) } else { 0.0 });
    let masks = (0..2).map(|i| ComponentMask::from_fn(1, 8, 8, |x, y| x >= 2 + i && x < 6 + i && y >= 3 && y < 7)).collect();
    let first = Tensor::new(&[3, 8, 8], z0.data()[..192].to_vec()).unwrap();
    TrainBatch { z0, p, masks, first }
}

/// Parameters moved off their initialization so zero-initialized heads do not
/// hide the gradient of everything upstream.
fn jittered(model: &mut Model<f64>, rng: &mut ChaCha8Rng) {
    for (_, t) in model.params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
}

struct Setup {
    model: Model<f64>,
    batch: TrainBatch<f64>,
    eps: Tensor<f64>,
    t: f64,
    lambda: f64,
}

impl Setup {
    fn new(adapter: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Model::<f64>::new(tiny(adapter), seed).unwrap();
        jittered(&mut model, &mut rng);
        let batch = batch(&mut rng);
        let eps = Tensor::from_fn(&[2, 3, 8, 8], |_| rng.random_range(-1.5..1.5));
        Self { model, batch, eps, t: 0.37, lambda: 0.5 }
    }

    fn loss(&self, params: &ParamStore<f64>) -> f64 {
        let model = Model { config: self.model.config, params: params.clone() };
        let mut tape = Tape::new();
        let vars = model.params.register(&mut tape, false);
        let o = objective_var(&mut tape, &model, &vars, &self.batch, self.t, &self.eps, self.lambda, &SuppressionConfig::training(0.35)).unwrap();
        tape.value(o.total).item()
    }

    fn grads(&self) -> Gradients<f64> {
        let mut tape = Tape::new();
        let vars = self.model.params.register(&mut tape, true);
        let o = objective_var(&mut tape, &self.model, &vars, &self.batch, self.t, &self.eps, self.lambda, &SuppressionConfig::training(0.35)).unwrap();
        tape.backward(o.total).unwrap()
    }

    fn numeric(&self, name: &str, idx: usize) -> f64 {
        let mut plus = self.model.params.clone();
        plus.get_mut(name).unwrap().data_mut()[idx] += STEP;
        let mut minus = self.model.params.clone();
        minus.get_mut(name).unwrap().data_mut()[idx] -= STEP;
        (self.loss(&plus) - self.loss(&minus)) / (2.0 * STEP)
    }
}

fn probe(adapter: bool, seed: u64, probes: usize) -> Vec<(String, usize, f64, f64)> {
    let s = Setup::new(adapter, seed);
    let g = s.grads();
    let names: Vec<String> = s.model.params.names().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    (0..probes)
        .map(|i| {
            // Cycle through tensors so every parameter group is probed.
            let name = &names[i % names.len()];
            let idx = rng.random_range(0..s.model.params.get(name).unwrap().len());
            (name.clone(), idx, g[name].data()[idx], s.numeric(name, idx))
        })
        .collect()
}

#[test]
fn full_objective_matches_finite_differences() {
    let results = probe(true, 11, 120);
    let bad: Vec<_> = results.iter().filter(|(_, _, a, n)| !agrees(*a, *n)).collect();
    assert!(bad.is_empty(), "{} of {} probes disagree: {bad:?}", bad.len(), results.len());
    // Enough probes must be large enough that only the relative bound matters.
    let strong = results.iter().filter(|(_, _, a, _)| a.abs() > 10.0 * ABS_TOL / REL_TOL).count();
    assert!(strong >= 50, "only {strong} probes carried a sizeable gradient");
}

#[test]
fn ablation_objective_matches_finite_differences() {
    let results = probe(false, 12, 60);
    for (name, idx, a, n) in &results {
        assert!(agrees(*a, *n), "{name}[{idx}]: tape {a} vs numeric {n}");
    }
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = Tensor::from_fn(&[2, 3, 4, 4], |_| rng.random_range(0.2..1.5));
    let k = Tensor::from_fn(&[3, 3, 3, 3], |_| rng.random_range(-1.0..1.0));
    let f = |tape: &mut Tape<f64>, x| {
        let kv = tape.constant(k.clone());
        let c = tape.conv2d(x, kv, 1, 1).unwrap();
        let e = tape.exp(c);
        let r = tape.recip(x);
        let p = tape.avgpool2d(e, 2, 2).unwrap();
        let u = tape.upsample_nearest(p, 2).unwrap();
        let s = tape.silu(u);
        let m = tape.mul(s, r).unwrap();
        let sq = tape.square(m);
        tape.mean(sq)
    };
    let mut tape = Tape::new();
    let x = tape.param("x", x0.clone());
    let y = f(&mut tape, x);
    let g = tape.backward(y).unwrap();
    for idx in 0..x0.len() {
        let eval = |delta: f64| {
            let mut xs = x0.clone();
            xs.data_mut()[idx] += delta;
            let mut t = Tape::new();
            let v = t.constant(xs);
            let y = f(&mut t, v);
            t.value(y).item()
        };
        let n = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        let a = g["x"].data()[idx];
        assert!(agrees(a, n), "x[{idx}]: tape {a} vs numeric {n}");
    }
}
