use std::path::Path;

use super::{AdamW, Model, ModelConfig, TrainSettings, TrainState};
use crate::error::{Error, Result};
use crate::numerics::io::{self, NamedTensors};
use crate::numerics::ParamStore;
use crate::rng;

/// Training state on disk: parameters, optimizer moments, step counter and the
/// seed from which every later random draw is derived.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState<f32>,
    /// Opaque run configuration echoed for provenance.
    pub run_config: String,
}

fn json_entry(named: &NamedTensors, key: &str) -> Result<String> {
    let t = named.get(key).ok_or_else(|| Error::format("checkpoint", format!("missing {key}")))?;
    String::from_utf8(io::tensor_to_bytes(t)?).map_err(|e| Error::format("checkpoint", format!("{key}: {e}")))
}

fn u64_entry(named: &NamedTensors, key: &str) -> Result<u64> {
    io::tensor_to_u64(named.get(key).ok_or_else(|| Error::format("checkpoint", format!("missing {key}")))?)
}

impl Checkpoint {
    pub fn to_named(&self) -> Result<NamedTensors> {
        let st = &self.state;
        let mut named = NamedTensors::new();
        st.model.params.write_named(&mut named, "param.");
        st.opt.m.write_named(&mut named, "opt.m.");
        st.opt.v.write_named(&mut named, "opt.v.");
        named.insert("meta.model".into(), io::bytes_to_tensor(&serde_json::to_vec(&st.model.config)?));
        named.insert("meta.train".into(), io::bytes_to_tensor(&serde_json::to_vec(&st.settings)?));
        named.insert("meta.run".into(), io::bytes_to_tensor(self.run_config.as_bytes()));
        named.insert("state.step".into(), io::u64_to_tensor(st.opt.step));
        named.insert("state.rng".into(), io::u64_to_tensor(rng::derive(st.settings.seed, "noise", st.opt.step)));
        Ok(named)
    }

    pub fn from_named(named: &NamedTensors) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(&json_entry(named, "meta.model")?)?;
        let settings: TrainSettings = serde_json::from_str(&json_entry(named, "meta.train")?)?;
        let step = u64_entry(named, "state.step")?;
        if u64_entry(named, "state.rng")? != rng::derive(settings.seed, "noise", step) {
            return Err(Error::format("checkpoint", "random state does not match seed and step"));
        }
        let params = ParamStore::from_named(named, "param.");
        let fresh: ParamStore<f32> = config.init(0)?;
        for (name, t) in fresh.iter() {
            let got = params.get(name).map_err(|_| Error::format("checkpoint", format!("missing parameter {name}")))?;
            if got.shape() != t.shape() {
                return Err(Error::format("checkpoint", format!("{name}: shape {:?}, expected {:?}", got.shape(), t.shape())));
            }
        }
        if params.len() != fresh.len() {
            return Err(Error::format("checkpoint", "unexpected parameters"));
        }
        let mut opt = AdamW::new(&params, settings.lr, settings.weight_decay);
        opt.m = ParamStore::from_named(named, "opt.m.");
        opt.v = ParamStore::from_named(named, "opt.v.");
        opt.step = step;
        if opt.m.len() != params.len() || opt.v.len() != params.len() {
            return Err(Error::format("checkpoint", "optimizer moments do not match parameters"));
        }
        Ok(Self { state: TrainState { settings, model: Model { config, params }, opt }, run_config: json_entry(named, "meta.run")? })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_container(path, &self.to_named()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_named(&io::read_container(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let cfg = ModelConfig { frames: 2, height: 8, width: 8, c_f: 4, d: 4, d_model: 8, blocks: 1, adapter: true, anchor_var: 0.1 };
        let model = Model::<f32>::new(cfg, 3).unwrap();
        let mut state = TrainState::new(model, TrainSettings::default());
        state.opt.step = 17;
        let ck = Checkpoint { state, run_config: "{\"x\":1}".into() };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.tgc");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }
}
