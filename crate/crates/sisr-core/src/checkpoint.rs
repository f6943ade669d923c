//! Self-describing weight files.
//!
//! Layout: magic bytes, a format version, a length-prefixed TOML header
//! (model configuration, normalization mean, step counts, optimizer
//! hyperparameters), then named shape-tagged blobs of little-endian f32 in
//! layer order. Optimizer moment buffers, when present, follow the weights
//! as `opt.m.*` / `opt.v.*` blobs so a resumed run continues bit-exactly.

use crate::model::{Model, ModelConfig};
use crate::net::{Adam, AdamConfig, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 8] = b"SISRCKPT";
const VERSION: u32 = 1;
/// Upper bounds a reader will accept before declaring the file corrupt.
const MAX_NAME: usize = 1 << 10;
const MAX_DIMS: usize = 8;
const MAX_ELEMS: u64 = 1 << 31;

/// Everything the header records about a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Global mean subtracted from inputs during training; inference must
    /// subtract and re-add the same constant.
    pub mean: f64,
    /// Training steps completed when the file was written.
    pub steps: u64,
    pub model: ModelConfig,
    pub optimizer: Option<OptimizerMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub steps: u64,
    pub adam: AdamConfig,
}

/// A fully materialized checkpoint.
pub struct LoadedCheckpoint {
    pub model: Model<f32>,
    pub meta: CheckpointMeta,
    pub adam: Option<Adam<f32>>,
}

impl std::fmt::Debug for LoadedCheckpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LoadedCheckpoint").field("meta", &self.meta).finish_non_exhaustive()
    }
}

/// Writes `model` (and optionally the optimizer state) to `path`.
pub fn save(
    path: &Path,
    model: &Model<f32>,
    mean: f64,
    steps: u64,
    adam: Option<&Adam<f32>>,
) -> Result<()> {
    let meta = CheckpointMeta {
        mean,
        steps,
        model: model.config().clone(),
        optimizer: adam.map(|a| OptimizerMeta { steps: a.steps(), adam: *a.config() }),
    };
    let header = toml::to_string(&meta)
        .map_err(|e| Error::Checkpoint { path: path.into(), detail: format!("header: {e}") })?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(header.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(header.as_bytes()).map_err(io)?;

    for name in model.param_names() {
        write_blob(&mut w, &name, model.param_tensor(&name).unwrap()).map_err(io)?;
    }
    if let Some(adam) = adam {
        // Moments are keyed by parameter name; the optimizer itself stores
        // them in graph declaration order.
        let names = graph_order_names(model);
        if !adam.moments().is_empty() {
            debug_assert_eq!(adam.moments().len(), names.len());
            for (name, (m, v)) in names.iter().zip(adam.moments()) {
                write_blob(&mut w, &format!("opt.m.{name}"), m).map_err(io)?;
                write_blob(&mut w, &format!("opt.v.{name}"), v).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Reads a checkpoint, rebuilding the model the header describes.
pub fn load(path: &Path) -> Result<LoadedCheckpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let meta = read_header(&mut r, path)?;
    meta.model.validate()?;
    let mut model: Model<f32> = Model::build(meta.model.clone())?;

    let mut blobs: HashMap<String, Tensor<f32>> = HashMap::new();
    while let Some((name, tensor)) = read_blob(&mut r, path)? {
        if blobs.insert(name.clone(), tensor).is_some() {
            return Err(corrupt(path, format!("duplicate blob {name}")));
        }
    }

    for name in model.param_names() {
        let slot = model.param_tensor_mut(&name).unwrap();
        let found = blobs
            .remove(&name)
            .ok_or_else(|| corrupt(path, format!("missing weights for layer {name}")))?;
        if found.dims() != slot.dims() {
            return Err(Error::CheckpointShape {
                layer: name,
                expected: format!("{:?}", slot.dims()),
                found: format!("{:?}", found.dims()),
            });
        }
        *slot = found;
    }

    let adam = match &meta.optimizer {
        None => None,
        Some(om) => {
            let names = graph_order_names(&model);
            let have_any = names.iter().any(|n| blobs.contains_key(&format!("opt.m.{n}")));
            let moments = if have_any {
                names
                    .iter()
                    .map(|name| {
                        let mut take = |prefix: &str| {
                            blobs.remove(&format!("{prefix}.{name}")).ok_or_else(|| {
                                corrupt(path, format!("missing optimizer moment {prefix}.{name}"))
                            })
                        };
                        Ok((take("opt.m")?, take("opt.v")?))
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            Some(Adam::from_parts(om.adam, om.steps, moments)?)
        }
    };
    if let Some(name) = blobs.keys().next() {
        return Err(corrupt(path, format!("unexpected blob {name}")));
    }
    Ok(LoadedCheckpoint { model, meta, adam })
}

/// Loads and additionally requires the stored config to equal `expected`.
pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<LoadedCheckpoint> {
    let loaded = load(path)?;
    if loaded.meta.model != *expected {
        return Err(corrupt(
            path,
            format!(
                "stored model has {} unit(s) (dense={}), expected {} unit(s) (dense={})",
                loaded.meta.model.units.len(),
                loaded.meta.model.dense,
                expected.units.len(),
                expected.dense
            ),
        ));
    }
    Ok(loaded)
}

/// Reads only the header: cheap inspection without reconstructing weights.
pub fn peek(path: &Path) -> Result<CheckpointMeta> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_header(&mut BufReader::new(file), path)
}

/// Parameter names in the order the optimizer's moment list uses.
fn graph_order_names(model: &Model<f32>) -> Vec<String> {
    model
        .graph()
        .param_ids()
        .iter()
        .map(|&id| model.graph().param_name(id).unwrap().to_string())
        .collect()
}

fn corrupt(path: &Path, detail: String) -> Error {
    Error::Checkpoint { path: path.into(), detail }
}

fn write_blob<W: Write>(w: &mut W, name: &str, t: &Tensor<f32>) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.dims().len() as u32).to_le_bytes())?;
    for &d in t.dims() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 4);
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_header<R: Read>(r: &mut R, path: &Path) -> Result<CheckpointMeta> {
    let mut magic = [0u8; 8];
    read_all(r, &mut magic, path, "magic")?;
    if &magic != MAGIC {
        return Err(corrupt(path, "not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(r, path, "version")?;
    if version != VERSION {
        return Err(corrupt(path, format!("format version {version}, supported: {VERSION}")));
    }
    let len = read_u32(r, path, "header length")? as usize;
    if len > 1 << 20 {
        return Err(corrupt(path, format!("implausible header length {len}")));
    }
    let mut header = vec![0u8; len];
    read_all(r, &mut header, path, "header")?;
    let text = std::str::from_utf8(&header)
        .map_err(|_| corrupt(path, "header is not UTF-8".into()))?;
    toml::from_str(text).map_err(|e| corrupt(path, format!("header: {e}")))
}

/// Reads one blob; `None` at a clean end of file.
fn read_blob<R: Read>(r: &mut R, path: &Path) -> Result<Option<(String, Tensor<f32>)>> {
    let mut len4 = [0u8; 4];
    match r.read(&mut len4).map_err(|e| Error::io(path, e))? {
        0 => return Ok(None),
        4 => {}
        n => {
            r.read_exact(&mut len4[n..])
                .map_err(|e| Error::io(path, truncated(e, "blob name length")))?;
        }
    }
    let name_len = u32::from_le_bytes(len4) as usize;
    if name_len == 0 || name_len > MAX_NAME {
        return Err(corrupt(path, format!("implausible blob name length {name_len}")));
    }
    let mut name = vec![0u8; name_len];
    read_all(r, &mut name, path, "blob name")?;
    let name = String::from_utf8(name)
        .map_err(|_| corrupt(path, "blob name is not UTF-8".into()))?;
    let ndims = read_u32(r, path, "blob rank")? as usize;
    if ndims == 0 || ndims > MAX_DIMS {
        return Err(corrupt(path, format!("blob {name}: implausible rank {ndims}")));
    }
    let mut dims = Vec::with_capacity(ndims);
    let mut total = 1u64;
    for _ in 0..ndims {
        let mut b = [0u8; 8];
        read_all(r, &mut b, path, "blob dims")?;
        let d = u64::from_le_bytes(b);
        total = total.saturating_mul(d.max(1));
        dims.push(d as usize);
    }
    if total > MAX_ELEMS {
        return Err(corrupt(path, format!("blob {name}: implausible size {total}")));
    }
    let count = dims.iter().product::<usize>();
    let mut bytes = vec![0u8; count * 4];
    read_all(r, &mut bytes, path, "blob data")?;
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let tensor = Tensor::from_vec(&dims, data)
        .map_err(|_| corrupt(path, format!("blob {name}: inconsistent dims {dims:?}")))?;
    Ok(Some((name, tensor)))
}

fn read_all<R: Read>(r: &mut R, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::io(PathBuf::from(path), truncated(e, what)))
}

fn read_u32<R: Read>(r: &mut R, path: &Path, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_all(r, &mut b, path, what)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error, what: &str) -> std::io::Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        std::io::Error::new(e.kind(), format!("file truncated while reading {what}"))
    } else {
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Graph;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn tiny_model(seed: u64) -> Model<f32> {
        let mut m = Model::build(ModelConfig::from_shapes(&[(3, 1), (4, 2)], true).unwrap()).unwrap();
        m.init_random(seed);
        m
    }

    fn rand_input(dims: &[usize], seed: u64) -> Tensor<f32> {
        let mut rng = StdRng::seed_from_u64(seed);
        let data = (0..dims.iter().product::<usize>()).map(|_| rng.random::<f32>()).collect();
        Tensor::from_vec(dims, data).unwrap()
    }

    fn step_once(m: &mut Model<f32>, adam: &mut Adam<f32>, seed: u64) {
        let (input, target, loss) = (m.input_id(), m.target_id(), m.loss_id());
        let g: &mut Graph<f32> = m.graph_mut();
        g.bind(input, rand_input(&[1, 1, 8, 8], seed)).unwrap();
        g.bind(target, rand_input(&[1, 1, 8, 8], seed + 1)).unwrap();
        g.forward(&[loss]).unwrap();
        g.backward(loss).unwrap();
        adam.step(g).unwrap();
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut m = tiny_model(42);
        save(&path, &m, 0.4107, 77, None).unwrap();

        let mut loaded = load(&path).unwrap();
        assert_eq!(loaded.meta.mean, 0.4107);
        assert_eq!(loaded.meta.steps, 77);
        assert_eq!(loaded.meta.model, *m.config());
        assert!(loaded.meta.optimizer.is_none() && loaded.adam.is_none());
        for name in m.param_names() {
            let a: Vec<u32> = m.param_tensor(&name).unwrap().data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> =
                loaded.model.param_tensor(&name).unwrap().data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "layer {name}");
        }
        let x = rand_input(&[1, 1, 9, 9], 7);
        assert_eq!(m.forward(x.clone()).unwrap().data(), loaded.model.forward(x).unwrap().data());
    }

    #[test]
    fn optimizer_state_resumes_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resume.ckpt");
        let mut m = tiny_model(1);
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        step_once(&mut m, &mut adam, 100);
        step_once(&mut m, &mut adam, 200);
        save(&path, &m, 0.0, 2, Some(&adam)).unwrap();

        let LoadedCheckpoint { mut model, meta, adam: restored } = load(&path).unwrap();
        let mut restored = restored.expect("optimizer state present");
        assert_eq!(meta.optimizer.as_ref().unwrap().steps, 2);
        assert_eq!(restored.steps(), 2);

        // the original and the resumed run must stay in lockstep
        step_once(&mut m, &mut adam, 300);
        step_once(&mut model, &mut restored, 300);
        for name in m.param_names() {
            assert_eq!(
                m.param_tensor(&name).unwrap().data(),
                model.param_tensor(&name).unwrap().data(),
                "layer {name} diverged after resume"
            );
        }
    }

    #[test]
    fn fresh_optimizer_roundtrips_without_moment_blobs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fresh.ckpt");
        let m = tiny_model(3);
        let adam: Adam<f32> = Adam::new(AdamConfig::default()).unwrap();
        save(&path, &m, 0.0, 0, Some(&adam)).unwrap();
        let loaded = load(&path).unwrap();
        assert!(loaded.adam.unwrap().moments().is_empty());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("future.ckpt");
        save(&path, &tiny_model(9), 0.0, 0, None).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
        assert!(!err.is_precondition());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.ckpt");
        save(&path, &tiny_model(9), 0.0, 0, None).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn garbage_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("noise.ckpt");
        std::fs::write(&path, b"PNG\x0d\x0a\x1a\x0adata").unwrap();
        assert!(load(&path).unwrap_err().to_string().contains("bad magic"));
    }

    #[test]
    fn shape_mismatch_names_the_offending_layer() {
        // Hand-written file: header says (1 filter, 1 layer) but the first
        // weight blob carries two output channels.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad-shape.ckpt");
        let meta = CheckpointMeta {
            mean: 0.0,
            steps: 0,
            model: ModelConfig::from_shapes(&[(1, 1)], false).unwrap(),
            optimizer: None,
        };
        let header = toml::to_string(&meta).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        let name = b"u1.enc.0.w";
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name);
        bytes.extend_from_slice(&4u32.to_le_bytes());
        for d in [2u64, 1, 3, 3] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        bytes.extend_from_slice(&[0u8; 18 * 4]);
        std::fs::write(&path, bytes).unwrap();

        match load(&path).unwrap_err() {
            Error::CheckpointShape { layer, expected, found } => {
                assert_eq!(layer, "u1.enc.0.w");
                assert_eq!(expected, "[1, 1, 3, 3]");
                assert_eq!(found, "[2, 1, 3, 3]");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn config_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("small.ckpt");
        let m = tiny_model(5);
        save(&path, &m, 0.0, 0, None).unwrap();
        let other = ModelConfig::from_shapes(&[(3, 1)], true).unwrap();
        let err = load_expecting(&path, &other).unwrap_err();
        assert!(err.to_string().contains("expected 1 unit"), "{err}");
        assert!(load_expecting(&path, m.config()).is_ok());
    }

    #[test]
    fn peek_reads_the_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("peek.ckpt");
        let m = tiny_model(8);
        save(&path, &m, 0.25, 123, None).unwrap();
        let meta = peek(&path).unwrap();
        assert_eq!(meta.steps, 123);
        assert_eq!(meta.mean, 0.25);
        assert_eq!(meta.model, *m.config());
    }
}
