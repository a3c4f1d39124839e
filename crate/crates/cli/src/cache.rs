//! Optional on-disk cache of manifold nets under `PBDW_CACHE_DIR`, keyed by
//! the model configuration and the grid resolution. Cached nets are
//! bit-identical to freshly computed ones, so caching never changes outputs.

use std::path::PathBuf;

use pbdw::oracle::ManifoldNet;
use pbdw::{ModelConfig, ParametricModel};

use crate::error::Result;
use crate::output::sha256_hex;

pub const CACHE_ENV: &str = "PBDW_CACHE_DIR";

fn cache_path(config: &ModelConfig, per_dim: usize) -> Result<Option<PathBuf>> {
    let Some(dir) = std::env::var_os(CACHE_ENV) else {
        return Ok(None);
    };
    let mut key = serde_json::to_vec(config)?;
    key.extend_from_slice(format!("/tensor-net/{per_dim}").as_bytes());
    Ok(Some(PathBuf::from(dir).join(format!("net-{}.json", sha256_hex(&key)))))
}

pub fn tensor_net(model: &ParametricModel, per_dim: usize) -> Result<ManifoldNet> {
    let path = cache_path(model.config(), per_dim)?;
    if let Some(p) = &path {
        if let Ok(bytes) = std::fs::read(p) {
            match serde_json::from_slice::<ManifoldNet>(&bytes) {
                Ok(net) if !net.is_empty() && net.states[0].len() == model.dim() => {
                    log::info!("net loaded from {}", p.display());
                    return Ok(net);
                }
                _ => log::warn!("ignoring unreadable cache entry {}", p.display()),
            }
        }
    }
    let net = ManifoldNet::tensor(model, per_dim)?;
    if let Some(p) = &path {
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        // write then rename so concurrent runs never read a partial file
        let tmp = p.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(&net)?)?;
        std::fs::rename(&tmp, p)?;
    }
    Ok(net)
}
