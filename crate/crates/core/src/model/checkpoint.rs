//! Little-endian binary checkpoint: magic, version, model config, then named
//! parameter blocks (name, shape, f64 data).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Ascent, ModelConfig, ModelError, OutputMode, ParamStore, SpeedActivation};
use crate::autograd::Tensor;
use crate::geometry::CoordinateMode;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ASCW";
pub const CHECKPOINT_VERSION: u32 = 1;

fn coord_code(c: CoordinateMode) -> u8 {
    match c {
        CoordinateMode::Global => 0,
        CoordinateMode::Local { angular: false } => 1,
        CoordinateMode::Local { angular: true } => 2,
    }
}

pub fn encode_checkpoint(model: &Ascent, w: &mut impl Write) -> std::io::Result<()> {
    let c = model.config();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for v in [c.d_model, c.n_blocks, c.n_heads, c.k, c.history_len, c.future_len] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for v in [c.dt_out, c.pose_scale, c.speed_scale] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&[
        (c.speed_activation == SpeedActivation::Linear) as u8,
        (c.output == OutputMode::DirectXyz) as u8,
        coord_code(c.coordinates),
        c.pose_embedding as u8,
    ])?;
    let params = model.params();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|e| ModelError::Checkpoint(format!("truncated checkpoint: {e}")))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn usize(&mut self) -> Result<usize, ModelError> {
        usize::try_from(self.u64()?).map_err(|_| ModelError::Checkpoint("size overflow".into()))
    }
    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn decode_checkpoint(r: impl Read) -> Result<Ascent, ModelError> {
    let mut r = Reader(r);
    if &r.take::<4>()? != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("missing ASCW magic header".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let mut config = ModelConfig {
        d_model: r.usize()?,
        n_blocks: r.usize()?,
        n_heads: r.usize()?,
        k: r.usize()?,
        history_len: r.usize()?,
        future_len: r.usize()?,
        dt_out: r.f64()?,
        pose_scale: r.f64()?,
        speed_scale: r.f64()?,
        ..ModelConfig::default()
    };
    config.speed_activation = if r.u8()? == 1 { SpeedActivation::Linear } else { SpeedActivation::Softplus };
    config.output = if r.u8()? == 1 { OutputMode::DirectXyz } else { OutputMode::FlightParams };
    config.coordinates = match r.u8()? {
        0 => CoordinateMode::Global,
        1 => CoordinateMode::Local { angular: false },
        2 => CoordinateMode::Local { angular: true },
        other => return Err(ModelError::Checkpoint(format!("unknown coordinate mode {other}"))),
    };
    config.pose_embedding = r.u8()? != 0;
    let mut model = Ascent::new(config, 0)?;
    let count = r.usize()?;
    if count != model.params().len() {
        return Err(ModelError::Checkpoint(format!(
            "config implies {} parameter tensors, file has {count}",
            model.params().len()
        )));
    }
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        if len > 4096 {
            return Err(ModelError::Checkpoint("implausible parameter name length".into()));
        }
        let mut name = vec![0u8; len];
        r.0.read_exact(&mut name)
            .map_err(|e| ModelError::Checkpoint(format!("truncated checkpoint: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| ModelError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
        let expected = model
            .params()
            .index_of(&name)
            .map(|i| model.params().get(i).shape().to_vec());
        if expected.as_deref() != Some(shape.as_slice()) {
            return Err(ModelError::Checkpoint(format!("unexpected parameter {name} {shape:?}")));
        }
        let n = shape.iter().product();
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        store.push(name, Tensor::new(shape, data)?);
    }
    model.load_params(store)?;
    Ok(model)
}

pub fn save_checkpoint(model: &Ascent, path: &Path) -> Result<(), ModelError> {
    let io = |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    encode_checkpoint(model, &mut w).map_err(io)?;
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Ascent, ModelError> {
    let f = File::open(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(BufReader::new(f))
}
