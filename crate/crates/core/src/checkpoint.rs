//! Binary checkpoint format.
//!
//! Layout (little-endian): `"SFUN"`, `u32` version, `u32` config length and
//! UTF-8 config text, then one or two tensor tables. A table is a `u32` count
//! followed by entries of `u16` name length, UTF-8 name, `u8` dtype
//! (0 = f32, 1 = f64), `u8` rank, `rank x u32` dims and raw scalars. The
//! optional second table carries optimizer state.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Model, ModelConfig, Precision};
use crate::tensor::RealTensor4;

pub const MAGIC: &[u8; 4] = b"SFUN";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn of(p: Precision) -> Self {
        match p {
            Precision::Single => DType::F32,
            Precision::Double => DType::F64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn from_tensor(name: impl Into<String>, t: &RealTensor4, dtype: DType) -> Self {
        NamedTensor {
            name: name.into(),
            dtype,
            dims: t.dims().0.to_vec(),
            data: t.data().to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Result<RealTensor4> {
        let dims: [usize; 4] = self.dims.as_slice().try_into().map_err(|_| {
            Error::CheckpointTensorMismatch(format!("{} has rank {}, expected 4", self.name, self.dims.len()))
        })?;
        RealTensor4::from_vec(dims, self.data.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub tensors: Vec<NamedTensor>,
    pub optimizer: Option<Vec<NamedTensor>>,
}

fn write_table(out: &mut Vec<u8>, table: &[NamedTensor]) -> Result<()> {
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for t in table {
        let name = t.name.as_bytes();
        let name_len: u16 = name
            .len()
            .try_into()
            .map_err(|_| Error::InvalidArgument(format!("tensor name {:?} is too long", t.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.dtype.tag());
        out.push(t.dims.len() as u8);
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match t.dtype {
            DType::F32 => t.data.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            DType::F64 => t.data.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CheckpointTruncated(format!(
                "needed {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn utf8(&mut self, n: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| Error::NotACheckpoint(format!("{what} is not valid UTF-8")))
    }
    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn read_table(r: &mut Reader) -> Result<Vec<NamedTensor>> {
    let count = r.u32("tensor count")? as usize;
    let mut table = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = r.utf8(len, "tensor name")?;
        let dtype = match r.u8("dtype")? {
            0 => DType::F32,
            1 => DType::F64,
            t => return Err(Error::NotACheckpoint(format!("tensor {name}: unknown dtype tag {t}"))),
        };
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        let numel: usize = dims.iter().product();
        let data = match dtype {
            DType::F32 => r
                .take(4 * numel, &name)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => r
                .take(8 * numel, &name)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        };
        table.push(NamedTensor { name, dtype, dims, data });
    }
    Ok(table)
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_text.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        write_table(&mut out, &self.tensors)?;
        if let Some(opt) = &self.optimizer {
            write_table(&mut out, opt)?;
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::NotACheckpoint(format!(
                "bad magic bytes {:?}",
                String::from_utf8_lossy(&bytes[..bytes.len().min(4)])
            )));
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::CheckpointVersion(version));
        }
        let len = r.u32("config length")? as usize;
        let config_text = r.utf8(len, "config text")?;
        let tensors = read_table(&mut r)?;
        let optimizer = if r.done() { None } else { Some(read_table(&mut r)?) };
        if !r.done() {
            return Err(Error::NotACheckpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config_text,
            tensors,
            optimizer,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes)
    }

    pub fn config(&self) -> Result<ModelConfig> {
        ModelConfig::from_text(&self.config_text)
    }

    pub fn from_model(model: &Model) -> Self {
        let dtype = DType::of(model.config.precision);
        Checkpoint {
            config_text: model.config.to_text(),
            tensors: model
                .registry
                .iter()
                .map(|p| NamedTensor::from_tensor(p.name(), p.value(), dtype))
                .collect(),
            optimizer: None,
        }
    }

    /// Rebuild the model the checkpoint was saved from.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::build(&self.config()?)?;
        self.restore_into(&mut model)?;
        Ok(model)
    }

    /// Copy stored values into `model`, whose architecture must match.
    pub fn restore_into(&self, model: &mut Model) -> Result<()> {
        let saved = self.config()?;
        if let Some(diff) = saved.architecture_mismatch(&model.config) {
            return Err(Error::CheckpointConfigMismatch(diff));
        }
        if self.tensors.len() != model.registry.len() {
            return Err(Error::CheckpointTensorMismatch(format!(
                "checkpoint holds {} tensors, model has {}",
                self.tensors.len(),
                model.registry.len()
            )));
        }
        let want = DType::of(model.config.precision);
        for t in &self.tensors {
            let id = model
                .registry
                .id(&t.name)
                .ok_or_else(|| Error::CheckpointTensorMismatch(format!("unknown tensor {}", t.name)))?;
            let param = model.registry.get_mut(id);
            if t.dims != param.dims().0 {
                return Err(Error::CheckpointTensorMismatch(format!(
                    "{}: stored dims {:?}, model expects {}",
                    t.name,
                    t.dims,
                    param.dims()
                )));
            }
            if t.dtype != want {
                return Err(Error::CheckpointTensorMismatch(format!(
                    "{}: stored as {:?}, model precision is {}",
                    t.name,
                    t.dtype,
                    model.config.precision.as_str()
                )));
            }
            param.set_value(t.to_tensor()?)?;
        }
        Ok(())
    }
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    Checkpoint::from_model(model).write(path)
}

pub fn load_model(path: &Path) -> Result<Model> {
    Checkpoint::read(path)?.to_model()
}

/// Load a checkpoint and require it to match `expected`'s architecture.
pub fn load_model_for(path: &Path, expected: &ModelConfig) -> Result<Model> {
    let ckpt = Checkpoint::read(path)?;
    let saved = ckpt.config()?;
    if let Some(diff) = saved.architecture_mismatch(expected) {
        return Err(Error::CheckpointConfigMismatch(diff));
    }
    ckpt.to_model()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Model {
        let mut model = Model::build(&ModelConfig::toy(2)).unwrap();
        // make values distinguishable from a fresh build
        for p in model.registry.iter_mut() {
            p.value_mut().data_mut().iter_mut().for_each(|v| *v = *v * 1.25 + 1e-3);
        }
        model
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let model = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.sfun");
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        for (a, b) in model.registry.iter().zip(back.registry.iter()) {
            assert_eq!(a.name(), b.name());
            assert!(a.value().data().iter().zip(b.value().data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn header_bytes() {
        let bytes = Checkpoint::from_model(&toy()).encode().unwrap();
        assert_eq!(&bytes[..4], b"SFUN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn distinct_errors() {
        let bytes = Checkpoint::from_model(&toy()).encode().unwrap();
        assert!(matches!(Checkpoint::decode(b"PK\x03\x04rest"), Err(Error::NotACheckpoint(_))));
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 3]), Err(Error::CheckpointTruncated(_))));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(Checkpoint::decode(&v2), Err(Error::CheckpointVersion(2))));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.sfun");
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_model_for(&path, &ModelConfig::toy(4)),
            Err(Error::CheckpointConfigMismatch(_))
        ));
        let mut ckpt = Checkpoint::decode(&bytes).unwrap();
        ckpt.tensors[0].dims[0] += 1;
        ckpt.tensors[0].data.extend(vec![0.0; 9]);
        assert!(matches!(ckpt.to_model(), Err(Error::CheckpointTensorMismatch(_))));
    }

    #[test]
    fn single_precision_stored_as_f32() {
        let cfg = ModelConfig {
            precision: Precision::Single,
            ..ModelConfig::toy(2)
        };
        let model = Model::build(&cfg).unwrap();
        let single = Checkpoint::from_model(&model).encode().unwrap();
        let double = Checkpoint::from_model(&Model::build(&ModelConfig::toy(2)).unwrap()).encode().unwrap();
        assert!(single.len() < double.len());
        let back = Checkpoint::decode(&single).unwrap().to_model().unwrap();
        for (a, b) in model.registry.iter().zip(back.registry.iter()) {
            assert_eq!(a.value(), b.value());
        }
    }
}
