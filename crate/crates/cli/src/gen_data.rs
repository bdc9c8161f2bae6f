use std::path::Path;

use anyhow::{bail, Context, Result};
use trackctl::evalkit::{gen_dataset, save_dataset};

use crate::config::RunConfig;

/// Renders the synthetic dataset into `out`. A non-empty `out` is refused unless `force`.
pub fn gen_data(cfg: &RunConfig, out: &Path, force: bool) -> Result<usize> {
    if out.exists() && std::fs::read_dir(out).with_context(|| format!("reading {}", out.display()))?.next().is_some() {
        if !force {
            bail!("{} is not empty; pass --force to overwrite", out.display());
        }
        std::fs::remove_dir_all(out).with_context(|| format!("clearing {}", out.display()))?;
    }
    let samples = gen_dataset(&cfg.dataset())?;
    save_dataset(out, &samples)?;
    cfg.echo_into(out)?;
    log::info!("wrote {} clips to {}", samples.len(), out.display());
    Ok(samples.len())
}
