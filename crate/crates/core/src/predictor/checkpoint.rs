//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! b"GRGC"  version: u16
//! matrix*  where matrix = rows: u32, cols: u32, rows*cols f64 row-major
//! ```
//!
//! Matrices appear in this order: the GCN weights of every layer, the head
//! weights as a `1 x 2E` row, the head bias as `1 x 1`; then the Adagrad
//! accumulators in the same order; then one `1 x 12` row of hyperparameters
//! `[lr, weight_decay, eps, units, layers, readout, head, vertex_shapes,
//! adjacency, max_channels, max_height, max_width]`, where the enum fields
//! are stored as `0`/`1` (`Final`/`DenseSkip`, `Antisymmetric`/`Concat`,
//! off/on, `Symmetric`/`Directed`).

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::encode::{AdjacencyNorm, EncoderConfig};
use super::model::{HeadKind, Hyper, ModelConfig, Params, PredictorModel, Readout};
use super::{PredictorError, Result};
use crate::shapes::ShapeNormalizer;

pub const MAGIC: &[u8; 4] = b"GRGC";
pub const VERSION: u16 = 1;
const HYPER_LEN: usize = 12;

fn write_matrix<W: Write>(w: &mut W, rows: usize, cols: usize, data: impl Iterator<Item = f64>) -> Result<()> {
    w.write_all(&(rows as u32).to_le_bytes())?;
    w.write_all(&(cols as u32).to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_params<W: Write>(w: &mut W, p: &Params) -> Result<()> {
    for m in &p.gcn {
        write_matrix(w, m.nrows(), m.ncols(), m.iter().copied())?;
    }
    write_matrix(w, 1, p.head_w.len(), p.head_w.iter().copied())?;
    write_matrix(w, 1, 1, std::iter::once(p.head_b))
}

pub fn write_model<W: Write>(mut w: W, model: &PredictorModel) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_params(&mut w, &model.params)?;
    write_params(&mut w, &model.accumulators)?;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let norm = model.encoder.normalizer;
    let hyper = [
        model.hyper.lr,
        model.hyper.weight_decay,
        model.hyper.eps,
        model.config.units as f64,
        model.config.layers as f64,
        flag(model.config.readout == Readout::DenseSkip),
        flag(model.config.head == HeadKind::Concat),
        flag(model.encoder.vertex_shapes),
        flag(model.encoder.adjacency == AdjacencyNorm::Directed),
        norm.max_channels as f64,
        norm.max_height as f64,
        norm.max_width as f64,
    ];
    write_matrix(&mut w, 1, HYPER_LEN, hyper.into_iter())?;
    w.flush()?;
    Ok(())
}

pub fn to_bytes(model: &PredictorModel) -> Vec<u8> {
    let mut buf = Vec::new();
    write_model(&mut buf, model).expect("writing to memory cannot fail");
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(PredictorError::Checkpoint("unexpected end of file".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn matrix(&mut self) -> Result<Array2<f64>> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let len = rows
            .checked_mul(cols)
            .filter(|&l| l.checked_mul(8).is_some_and(|b| b <= self.bytes.len() - self.pos))
            .ok_or_else(|| PredictorError::Checkpoint(format!("bad matrix size {rows}x{cols}")))?;
        let raw = self.take(len * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), data).expect("consistent size"))
    }
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(PredictorError::Checkpoint(format!("invalid {what}: {v}")))
    }
}

fn as_flag(v: f64, what: &str) -> Result<bool> {
    match v {
        0.0 => Ok(false),
        1.0 => Ok(true),
        _ => Err(PredictorError::Checkpoint(format!("invalid {what} flag: {v}"))),
    }
}

fn params_from(mats: &mut std::vec::IntoIter<Array2<f64>>, layers: usize) -> Result<Params> {
    let missing = || PredictorError::Checkpoint("missing matrix".into());
    let gcn = (0..layers)
        .map(|_| mats.next().ok_or_else(missing))
        .collect::<Result<Vec<_>>>()?;
    let head = mats.next().ok_or_else(missing)?;
    let bias = mats.next().ok_or_else(missing)?;
    if head.nrows() != 1 || bias.dim() != (1, 1) {
        return Err(PredictorError::Checkpoint("malformed head matrices".into()));
    }
    Ok(Params {
        gcn,
        head_w: Array1::from_iter(head.iter().copied()),
        head_b: bias[[0, 0]],
    })
}

pub fn from_bytes(bytes: &[u8]) -> Result<PredictorModel> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(PredictorError::Checkpoint("bad magic bytes".into()));
    }
    let version = u16::from_le_bytes(cur.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(PredictorError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut mats = Vec::new();
    while cur.pos < bytes.len() {
        mats.push(cur.matrix()?);
    }
    let hyper = mats
        .pop()
        .filter(|h| h.dim() == (1, HYPER_LEN))
        .ok_or_else(|| PredictorError::Checkpoint("missing hyperparameter row".into()))?;
    let h: Vec<f64> = hyper.iter().copied().collect();
    let units = as_count(h[3], "units")?;
    let layers = as_count(h[4], "layers")?;
    if mats.len() != 2 * (layers + 2) {
        return Err(PredictorError::Checkpoint(format!(
            "expected {} matrices for {layers} layers, found {}",
            2 * (layers + 2),
            mats.len()
        )));
    }
    let config = ModelConfig {
        units,
        layers,
        readout: if as_flag(h[5], "readout")? { Readout::DenseSkip } else { Readout::Final },
        head: if as_flag(h[6], "head")? { HeadKind::Concat } else { HeadKind::Antisymmetric },
    };
    let encoder = EncoderConfig {
        vertex_shapes: as_flag(h[7], "vertex shapes")?,
        adjacency: if as_flag(h[8], "adjacency")? {
            AdjacencyNorm::Directed
        } else {
            AdjacencyNorm::Symmetric
        },
        normalizer: ShapeNormalizer {
            max_channels: as_count(h[9], "max channels")?,
            max_height: as_count(h[10], "max height")?,
            max_width: as_count(h[11], "max width")?,
        },
    };
    let hyper = Hyper {
        lr: h[0],
        weight_decay: h[1],
        eps: h[2],
    };
    let mut it = mats.into_iter();
    let params = params_from(&mut it, layers)?;
    let accumulators = params_from(&mut it, layers)?;
    PredictorModel::from_parts(config, hyper, encoder, params, accumulators)
        .map_err(|e| PredictorError::Checkpoint(e.to_string()))
}

pub fn read_model<R: Read>(mut r: R) -> Result<PredictorModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
