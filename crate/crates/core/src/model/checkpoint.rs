//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "SCRCKPT\n"
//! version    u32
//! config     u64 length + UTF-8 JSON of ModelConfig
//! sections   u32 count, then per section:
//!   name     u32 length + UTF-8
//!   tensors  u32 count, then per tensor:
//!     name   u32 length + UTF-8
//!     rows   u64
//!     cols   u64
//!     data   rows*cols f64 (IEEE-754 bits)
//! ```
//!
//! Section `model` holds the transformer weights. Section `scr_gates` holds
//! `<layer>.w_p` and a `1×1` `<layer>.epsilon` per layer and is omitted for
//! models without gates.

use std::collections::BTreeMap;
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::error::{Result, ScrError};
use crate::scr::GateParams;
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 8] = b"SCRCKPT\n";
pub const FORMAT_VERSION: u32 = 1;
const MODEL_SECTION: &str = "model";
const GATE_SECTION: &str = "scr_gates";

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, m: &Matrix) {
    put_str(out, name);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
}

pub fn to_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&params.config)?;
    out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    out.extend_from_slice(&cfg);

    let model: Vec<(String, &Matrix)> =
        params.named_tensors().into_iter().filter(|(n, _)| !n.starts_with("scr_gates.")).collect();
    let sections = if params.has_gates() { 2u32 } else { 1 };
    out.extend_from_slice(&sections.to_le_bytes());

    put_str(&mut out, MODEL_SECTION);
    out.extend_from_slice(&(model.len() as u32).to_le_bytes());
    for (name, t) in &model {
        put_tensor(&mut out, name, t);
    }
    if params.has_gates() {
        put_str(&mut out, GATE_SECTION);
        out.extend_from_slice(&(2 * params.scr_gates.len() as u32).to_le_bytes());
        for (l, g) in params.scr_gates.iter().enumerate() {
            put_tensor(&mut out, &format!("{l}.w_p"), &g.w_p);
            put_tensor(&mut out, &format!("{l}.epsilon"), &Matrix::filled(1, 1, g.epsilon));
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(ScrError::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| ScrError::Format(e.to_string()))
    }

    fn tensor(&mut self) -> Result<(String, Matrix)> {
        let name = self.string()?;
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let count = rows.checked_mul(cols).ok_or_else(|| ScrError::Format(format!("{name}: shape overflow")))?;
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| ScrError::Format("size overflow".into()))?)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap()))).collect();
        Ok((name, Matrix::from_vec(rows, cols, data)?))
    }
}

fn take_tensor(map: &mut BTreeMap<String, Matrix>, name: &str) -> Result<Matrix> {
    map.remove(name).ok_or_else(|| ScrError::Format(format!("checkpoint is missing tensor {name}")))
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(ScrError::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ScrError::Format(format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = r.u64()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)?;
    config.validate()?;

    let mut sections: BTreeMap<String, BTreeMap<String, Matrix>> = BTreeMap::new();
    for _ in 0..r.u32()? {
        let name = r.string()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..r.u32()? {
            let (n, t) = r.tensor()?;
            tensors.insert(n, t);
        }
        sections.insert(name, tensors);
    }
    if r.pos != bytes.len() {
        return Err(ScrError::Format("trailing bytes after checkpoint".into()));
    }

    let mut model =
        sections.remove(MODEL_SECTION).ok_or_else(|| ScrError::Format("checkpoint has no model section".into()))?;
    let mut params = ModelParams::zeros(&config);
    params.scr_gates.clear();
    for (name, slot) in params.named_tensors_mut() {
        *slot = take_tensor(&mut model, &name)?;
    }
    if let Some(extra) = model.keys().next() {
        return Err(ScrError::Format(format!("unexpected tensor {extra}")));
    }
    if let Some(mut gates) = sections.remove(GATE_SECTION) {
        for l in 0..config.n_layers {
            let w_p = take_tensor(&mut gates, &format!("{l}.w_p"))?;
            let eps = take_tensor(&mut gates, &format!("{l}.epsilon"))?;
            eps.ensure_shape(1, 1, "gate epsilon")?;
            params.scr_gates.push(GateParams { w_p, epsilon: eps[(0, 0)] });
        }
    }
    params.validate()?;
    Ok(params)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(params)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    from_bytes(&std::fs::read(path)?)
}
