use std::path::{Path, PathBuf};

use super::{parse_kv, read_file, write_atomic, KvMap, Reader};
use crate::error::{GlfcError, Result};
use crate::model::{Meunet, MeunetConfig, ParamStore};
use crate::real::Real;

pub const CKPT_MAGIC: &[u8; 6] = b"GCKPT1";

/// `(name, shape, values)` of one stored tensor.
pub type CheckpointRecord = (String, Vec<usize>, Vec<f32>);

/// Exact encoded size of `store`.
pub fn checkpoint_size<T: Real>(store: &ParamStore<T>) -> usize {
    CKPT_MAGIC.len()
        + 4
        + store
            .iter()
            .map(|(name, shape, vals)| 8 + name.len() + 4 * shape.len() + 4 * vals.len())
            .sum::<usize>()
}

pub fn encode_checkpoint<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(checkpoint_size(store));
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, shape, vals) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in vals {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<CheckpointRecord>> {
    let mut r = Reader::new(bytes);
    if r.take(CKPT_MAGIC.len(), "magic")? != CKPT_MAGIC {
        return Err(GlfcError::format(0, "bad magic, expected \"GCKPT1\""));
    }
    let count = r.u32("tensor count")? as usize;
    // every record needs at least 8 bytes; refuse absurd counts before allocating
    if count > r.remaining() / 8 {
        return Err(GlfcError::format(
            CKPT_MAGIC.len() as u64,
            format!("tensor count {count} cannot fit in {} remaining bytes", r.remaining()),
        ));
    }
    let mut records = Vec::with_capacity(count);
    for t in 0..count {
        let len = r.u32("name length")? as usize;
        let at = r.pos();
        let raw = r.take(len, "tensor name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| GlfcError::format(at, format!("tensor {t} name is not UTF-8")))?
            .to_string();
        let at = r.pos();
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(GlfcError::format(at, format!("tensor `{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut n: usize = 1;
        for _ in 0..rank {
            let at = r.pos();
            let d = r.u32("dimension")? as usize;
            if d == 0 {
                return Err(GlfcError::format(at, format!("tensor `{name}` has a zero extent")));
            }
            n = n
                .checked_mul(d)
                .ok_or_else(|| GlfcError::format(at, "element count overflows"))?;
            shape.push(d);
        }
        let vals = r.f32_payload(n, "tensor payload")?;
        records.push((name, shape, vals));
    }
    r.finish()?;
    Ok(records)
}

/// Sidecar path holding the architecture of a checkpoint.
pub fn arch_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".arch");
    PathBuf::from(s)
}

fn pair(s: &str, key: &str) -> Result<(usize, usize)> {
    let v = list(s, key)?;
    match v[..] {
        [a, b] => Ok((a, b)),
        _ => Err(GlfcError::config(format!("`{key}` needs two values, got `{s}`"))),
    }
}

fn list(s: &str, key: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| GlfcError::config(format!("`{key}` has a non-integer entry `{p}`")))
        })
        .collect()
}

fn num(m: &KvMap, key: &str) -> Result<usize> {
    let v = m
        .get(key)
        .ok_or_else(|| GlfcError::config(format!("architecture file lacks `{key}`")))?;
    v.parse()
        .map_err(|_| GlfcError::config(format!("`{key}` is not an integer: `{v}`")))
}

fn get<'m>(m: &'m KvMap, key: &str) -> Result<&'m str> {
    m.get(key)
        .map(String::as_str)
        .ok_or_else(|| GlfcError::config(format!("architecture file lacks `{key}`")))
}

pub fn arch_to_text(cfg: &MeunetConfig) -> String {
    let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
    format!(
        "variant={}\nchannels={}\ntoken_count={}\nvss_depths={},{}\nembed_dims={},{}\nstate_dim={}\ninput_size={}\nfixed_patch={}\n",
        cfg.variant,
        join(&cfg.channels),
        cfg.token_count,
        cfg.vss_depths.0,
        cfg.vss_depths.1,
        cfg.embed_dims.0,
        cfg.embed_dims.1,
        cfg.state_dim,
        cfg.input_size,
        cfg.fixed_patch
    )
}

pub fn arch_from_text(text: &str) -> Result<MeunetConfig> {
    let m = parse_kv(text)?;
    let cfg = MeunetConfig {
        variant: get(&m, "variant")?.parse()?,
        channels: list(get(&m, "channels")?, "channels")?,
        token_count: num(&m, "token_count")?,
        vss_depths: pair(get(&m, "vss_depths")?, "vss_depths")?,
        embed_dims: pair(get(&m, "embed_dims")?, "embed_dims")?,
        state_dim: num(&m, "state_dim")?,
        input_size: num(&m, "input_size")?,
        fixed_patch: num(&m, "fixed_patch")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_arch(ckpt: &Path, cfg: &MeunetConfig) -> Result<()> {
    write_atomic(&arch_path(ckpt), arch_to_text(cfg).as_bytes())
}

pub fn read_arch(ckpt: &Path) -> Result<MeunetConfig> {
    let p = arch_path(ckpt);
    let text = String::from_utf8(read_file(&p)?)
        .map_err(|_| GlfcError::config(format!("{} is not UTF-8", p.display())))?;
    arch_from_text(&text)
}

/// Writes the weights and the architecture sidecar.
pub fn save_checkpoint<T: Real>(path: &Path, model: &Meunet<T>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model.params()))?;
    write_arch(path, model.config())
}

/// Loads a checkpoint written by [`save_checkpoint`], building the model
/// from its sidecar. With `expect` set, the stored architecture must match.
pub fn load_checkpoint<T: Real>(path: &Path, expect: Option<&MeunetConfig>) -> Result<Meunet<T>> {
    let cfg = match expect {
        Some(c) => c.clone(),
        None => read_arch(path)?,
    };
    let mut model = Meunet::new(cfg, 0)?;
    model.params_mut().load_named(decode_checkpoint(&read_file(path)?)?)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn size_matches_encoding() {
        let m = Meunet::<f32>::new(MeunetConfig::miniature(Variant::Meunet), 3).unwrap();
        assert_eq!(encode_checkpoint(m.params()).len(), checkpoint_size(m.params()));
    }

    #[test]
    fn arch_text_round_trip() {
        for v in Variant::ALL {
            let c = MeunetConfig::desk(v);
            assert_eq!(arch_from_text(&arch_to_text(&c)).unwrap(), c);
        }
    }

    #[test]
    fn unet_into_meunet_names_first_missing() {
        let un = Meunet::<f32>::new(MeunetConfig::miniature(Variant::UnetD2), 0).unwrap();
        let mut me = Meunet::<f32>::new(MeunetConfig::miniature(Variant::Meunet), 0).unwrap();
        let recs = decode_checkpoint(&encode_checkpoint(un.params())).unwrap();
        match me.params_mut().load_named(recs) {
            Err(GlfcError::Checkpoint { tensor, .. }) => assert_eq!(tensor, "skip0.embed.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
