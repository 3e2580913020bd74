//! Checkpoint container: named tensors with a config header and seed.
//!
//! Layout (little endian): magic `MBCKPT\0` + version u32, a kind tag,
//! a length-prefixed UTF-8 config block (key=value lines), then the
//! tensor table. Loading validates magic, version and that the stored
//! tensors exactly match the topology the config describes; a mismatch is
//! rejected rather than silently reinterpreted.

use std::io::{Read, Write};
use std::path::Path;

use crate::am::AmConfig;
use crate::error::{Error, Result};
use crate::maskestim::{self, MaskNetConfig};
use crate::nn::{ParamStore, Tensor};

const MAGIC: &[u8; 7] = b"MBCKPT\0";
const VERSION: u32 = 1;

const KIND_MASKNET: u8 = 0;
const KIND_AM: u8 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(Error::Checkpoint("unreasonable string length".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn write_store(w: &mut impl Write, store: &ParamStore) -> Result<()> {
    write_u32(w, store.len() as u32)?;
    for name in store.names().map(str::to_owned).collect::<Vec<_>>() {
        let t = store.value(&name)?;
        write_str(w, &name)?;
        write_u32(w, t.dims.len() as u32)?;
        for &d in &t.dims {
            write_u64(w, d as u64)?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_store(r: &mut impl Read) -> Result<ParamStore> {
    let count = read_u32(r)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = read_str(r)?;
        let ndims = read_u32(r)? as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(read_u64(r)? as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        store.insert(&name, Tensor { dims, data });
    }
    Ok(store)
}

fn header(w: &mut impl Write, kind: u8) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    w.write_all(&[kind])?;
    Ok(())
}

fn check_header(r: &mut impl Read, expected_kind: u8) -> Result<()> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic number".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    if kind[0] != expected_kind {
        return Err(Error::Checkpoint(format!(
            "checkpoint kind {} does not match expected {expected_kind}",
            kind[0]
        )));
    }
    Ok(())
}

fn masknet_config_block(cfg: &MaskNetConfig) -> String {
    let dims: Vec<String> = cfg.hidden_dims.iter().map(|d| d.to_string()).collect();
    format!(
        "input_dim={}\nhidden_dims={}\nrecurrent_first_layer={}\nseed={}\n",
        cfg.input_dim,
        dims.join(","),
        cfg.recurrent_first_layer,
        cfg.seed
    )
}

fn parse_kv_block(block: &str) -> Result<std::collections::BTreeMap<String, String>> {
    let mut map = std::collections::BTreeMap::new();
    for line in block.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad config line {line:?}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn parse_usize(map: &std::collections::BTreeMap<String, String>, key: &str) -> Result<usize> {
    map.get(key)
        .ok_or_else(|| Error::Checkpoint(format!("missing config key {key}")))?
        .parse()
        .map_err(|e| Error::Checkpoint(format!("bad value for {key}: {e}")))
}

fn parse_u64(map: &std::collections::BTreeMap<String, String>, key: &str) -> Result<u64> {
    map.get(key)
        .ok_or_else(|| Error::Checkpoint(format!("missing config key {key}")))?
        .parse()
        .map_err(|e| Error::Checkpoint(format!("bad value for {key}: {e}")))
}

fn parse_dims(map: &std::collections::BTreeMap<String, String>, key: &str) -> Result<Vec<usize>> {
    map.get(key)
        .ok_or_else(|| Error::Checkpoint(format!("missing config key {key}")))?
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| Error::Checkpoint(format!("bad value in {key}: {e}")))
        })
        .collect()
}

pub fn save_masknet(path: &Path, cfg: &MaskNetConfig, store: &ParamStore) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    header(&mut w, KIND_MASKNET)?;
    write_str(&mut w, &masknet_config_block(cfg))?;
    write_store(&mut w, store)
}

pub fn load_masknet(path: &Path) -> Result<(MaskNetConfig, ParamStore)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    check_header(&mut r, KIND_MASKNET)?;
    let map = parse_kv_block(&read_str(&mut r)?)?;
    let cfg = MaskNetConfig {
        input_dim: parse_usize(&map, "input_dim")?,
        hidden_dims: parse_dims(&map, "hidden_dims")?,
        recurrent_first_layer: map.get("recurrent_first_layer").map(|s| s == "true")
            .unwrap_or(false),
        seed: parse_u64(&map, "seed")?,
    };
    let store = read_store(&mut r)?;
    // topology check: the stored tensors must be exactly the ones a fresh
    // initialization of this config would create
    let reference = maskestim::init_params(&cfg)?;
    validate_same_topology(&reference, &store)?;
    Ok((cfg, store))
}

fn am_config_block(cfg: &AmConfig) -> String {
    let dims: Vec<String> = cfg.hidden_dims.iter().map(|d| d.to_string()).collect();
    format!(
        "n_states={}\ncontext={}\nhidden_dims={}\nfeat_dim={}\nseed={}\n",
        cfg.n_states,
        cfg.context,
        dims.join(","),
        cfg.feat_dim,
        cfg.seed
    )
}

pub fn save_am(path: &Path, cfg: &AmConfig, store: &ParamStore) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    header(&mut w, KIND_AM)?;
    write_str(&mut w, &am_config_block(cfg))?;
    write_store(&mut w, store)
}

pub fn load_am(path: &Path) -> Result<(AmConfig, ParamStore)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    check_header(&mut r, KIND_AM)?;
    let map = parse_kv_block(&read_str(&mut r)?)?;
    let cfg = AmConfig {
        n_states: parse_usize(&map, "n_states")?,
        context: parse_usize(&map, "context")?,
        hidden_dims: parse_dims(&map, "hidden_dims")?,
        feat_dim: parse_usize(&map, "feat_dim")?,
        seed: parse_u64(&map, "seed")?,
    };
    let store = read_store(&mut r)?;
    let reference = cfg.init_params()?;
    validate_same_topology(&reference, &store)?;
    Ok((cfg, store))
}

fn validate_same_topology(reference: &ParamStore, loaded: &ParamStore) -> Result<()> {
    if reference.len() != loaded.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, topology wants {}",
            loaded.len(),
            reference.len()
        )));
    }
    for name in reference.names() {
        let expect = reference.value(name)?;
        let got = loaded.value(name).map_err(|_| {
            Error::Checkpoint(format!("checkpoint is missing tensor {name}"))
        })?;
        if expect.dims != got.dims {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has dims {:?}, topology wants {:?}",
                got.dims, expect.dims
            )));
        }
    }
    Ok(())
}
