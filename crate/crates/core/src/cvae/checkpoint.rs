//! Little-endian checkpoint: `"CVAE"`, version `u32 = 1`, `κ: f64`,
//! `α: u32`, `d: u32`, tensor count `u32`, then per tensor the name length,
//! UTF-8 name, rank, dims and row-major `f64` payload.

use std::path::Path;

use super::CvaeModel;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CVAE";
const VERSION: u32 = 1;
const SIGMA_NAME: &str = "dec.sigma_xz";

pub fn checkpoint_to_bytes(model: &CvaeModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&model.kappa().to_le_bytes());
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(model.latent_dim() as u32).to_le_bytes());
    let sigma = Tensor::scalar(model.sigma_xz());
    let tensors: Vec<(&str, &Tensor)> =
        model.params().iter().map(|(n, t)| (n.as_str(), t)).chain(std::iter::once((SIGMA_NAME, &sigma))).collect();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<CvaeModel> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a CVAE checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let kappa = r.f64()?;
    let alpha = r.u32()?;
    let dim = r.u32()?;
    if alpha != 2 {
        return Err(Error::Format(format!("checkpoint alpha {alpha}, expected 2")));
    }
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(1024));
    let mut sigma = None;
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Format(format!("tensor name: {e}")))?.to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= buf.len()))
            .ok_or_else(|| Error::Format(format!("tensor {name} is larger than the file")))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64()?);
        }
        let t = Tensor::new(shape, data)?;
        if name == SIGMA_NAME {
            sigma = Some(t.item());
        } else {
            params.push((name, t));
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", buf.len() - r.pos)));
    }
    let sigma = sigma.ok_or_else(|| Error::Format(format!("missing tensor {SIGMA_NAME}")))?;
    let model = CvaeModel::from_params(kappa, sigma, params)?;
    if model.latent_dim() != dim as usize {
        return Err(Error::Format(format!("header d = {dim} but tensors give {}", model.latent_dim())));
    }
    Ok(model)
}

pub fn checkpoint_save(model: &CvaeModel, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(model))?;
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<CvaeModel> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}
