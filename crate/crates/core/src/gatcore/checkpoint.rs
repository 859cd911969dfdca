//! Versioned checkpoint: a text manifest followed by raw little-endian f64
//! tensors in manifest order, each row-major.

use std::path::Path;

use super::params::{Activation, Layout, ModelConfig, ModelParams};
use super::GatError;
use crate::fsutil;

const MAGIC: &str = "PHASEFORGE-CKPT v1";

pub fn to_bytes(p: &ModelParams) -> Vec<u8> {
    let c = &p.cfg;
    let act = match c.node_activation {
        Activation::Elu => "elu",
        Activation::Identity => "identity",
    };
    let mut head = format!(
        "{MAGIC}\nconfig d_in={} layers={} heads={} d_head={} mlp_hidden={} n_out={} activation={act}\n",
        c.d_in, c.layers, c.heads, c.d_head, c.mlp_hidden, c.n_out
    );
    for t in &p.layout.tensors {
        head.push_str(&format!("tensor {} {} {}\n", t.name, t.rows, t.cols));
    }
    head.push_str("end\n");
    let mut out = head.into_bytes();
    out.reserve(p.data.len() * 8);
    for v in &p.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams, GatError> {
    let bad = |m: &str| GatError::Checkpoint(m.to_string());
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| bad("header is not UTF-8"))?;
        pos += nl + 1;
        if line == "end" {
            break;
        }
        lines.push(line.to_string());
        if lines.len() > 10_000 {
            return Err(bad("header too long"));
        }
    }
    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err(bad("not a phaseforge checkpoint"));
    }
    let cfg_line = lines.get(1).ok_or_else(|| bad("missing config line"))?;
    let mut cfg = ModelConfig::default();
    for kv in cfg_line.split_whitespace().skip(1) {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad("bad config field"))?;
        let num = || v.parse::<usize>().map_err(|_| bad("bad config value"));
        match k {
            "d_in" => cfg.d_in = num()?,
            "layers" => cfg.layers = num()?,
            "heads" => cfg.heads = num()?,
            "d_head" => cfg.d_head = num()?,
            "mlp_hidden" => cfg.mlp_hidden = num()?,
            "n_out" => cfg.n_out = num()?,
            "activation" => {
                cfg.node_activation = match v {
                    "elu" => Activation::Elu,
                    "identity" => Activation::Identity,
                    _ => return Err(bad("unknown activation")),
                }
            }
            _ => return Err(bad("unknown config key")),
        }
    }
    cfg.validate()?;
    let layout = Layout::new(&cfg);
    let manifest: Vec<&String> = lines[2..].iter().collect();
    if manifest.len() != layout.tensors.len() {
        return Err(bad("tensor manifest does not match the config"));
    }
    for (line, t) in manifest.iter().zip(&layout.tensors) {
        if **line != format!("tensor {} {} {}", t.name, t.rows, t.cols) {
            return Err(GatError::Checkpoint(format!("unexpected manifest entry {line:?}")));
        }
    }
    let body = &bytes[pos..];
    if body.len() != layout.total * 8 {
        return Err(GatError::Checkpoint(format!(
            "expected {} data bytes, found {}",
            layout.total * 8,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(ModelParams { cfg, layout, data })
}

pub fn save(p: &ModelParams, path: &Path) -> Result<(), GatError> {
    fsutil::write_atomic(path, &to_bytes(p))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams, GatError> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let p = ModelParams::init(ModelConfig::default(), 3).unwrap();
        let b = to_bytes(&p);
        let q = from_bytes(&b).unwrap();
        assert_eq!(p, q);
        assert_eq!(b, to_bytes(&q));
    }

    #[test]
    fn truncated_body_is_rejected() {
        let p = ModelParams::init(ModelConfig::default(), 3).unwrap();
        let b = to_bytes(&p);
        assert!(from_bytes(&b[..b.len() - 8]).is_err());
        assert!(from_bytes(b"garbage").is_err());
    }
}
