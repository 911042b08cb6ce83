//! Binary checkpoints: magic, version, a JSON header with the
//! hyper-parameters and dimensions, then every tensor by name in layout
//! order. All integers and floats are little-endian, so a round trip is
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HyperParams, Model, ModelDims, ModelError, ModelParams};
use crate::numerics::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CARCACKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    hyper: HyperParams,
    dims: ModelDims,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io { path: path.to_path_buf(), source }
}

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> std::io::Result<()> {
    let header = serde_json::to_vec(&Header { hyper: model.hp.clone(), dims: model.dims }).map_err(std::io::Error::other)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    let params = &model.params;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rows() as u64).to_le_bytes())?;
        w.write_all(&(t.cols() as u64).to_le_bytes())?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>, ModelError> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| ModelError::Format(format!("truncated while reading {what}: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Model, ModelError> {
    let mut r = Reader { inner: r };
    if r.bytes(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(ModelError::Format("not a checkpoint file".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(&r.bytes(len, "header")?).map_err(|e| ModelError::Format(format!("header: {e}")))?;
    let skeleton = Model::init(header.hyper, header.dims, 0)?;
    let count = r.u32("tensor count")? as usize;
    if count != skeleton.layout.len() {
        return Err(ModelError::Incompatible(format!("checkpoint holds {count} tensors, configuration needs {}", skeleton.layout.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for spec in &skeleton.layout.specs {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.bytes(name_len, "name")?).map_err(|_| ModelError::Format("tensor name is not UTF-8".into()))?;
        if name != spec.name {
            return Err(ModelError::Incompatible(format!("found tensor {name}, expected {}", spec.name)));
        }
        let rows = r.u64("rows")? as usize;
        let cols = r.u64("cols")? as usize;
        if (rows, cols) != (spec.rows, spec.cols) {
            return Err(ModelError::Incompatible(format!("{name} is {rows}x{cols}, expected {}x{}", spec.rows, spec.cols)));
        }
        let raw = r.bytes(rows * cols * 8, &name)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Matrix::from_vec(rows, cols, data)?);
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing).map_err(|e| ModelError::Format(e.to_string()))? != 0 {
        return Err(ModelError::Format("trailing bytes after last tensor".into()));
    }
    let params: ModelParams = skeleton.params.with_tensors(tensors)?;
    Ok(Model { params, ..skeleton })
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), ModelError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_checkpoint(model, BufWriter::new(file)).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_checkpoint(BufReader::new(file))
}
