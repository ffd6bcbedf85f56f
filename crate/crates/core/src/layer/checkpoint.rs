//! Flat little-endian binary records for layer checkpoints and statistic
//! sequences.
//!
//! Layer record (`BWL1`), all integers and floats little-endian:
//!
//! ```text
//! magic      4 bytes  "BWL1"
//! kind       u32      0 bn, 1 pca, 2 zca, 3 cd, 4 itn
//! d          u64
//! g          u64
//! T          u64      ItN iterations
//! momentum   f64
//! epsilon    f64
//! recovery   u32      0 scale-shift, 1 coloring
//! estimation u32      0 covariance, 1 whitening matrix
//! mode       u32      0 training, 1 inference
//! steps      u64
//! finalized  u32      0 absent, 1 present
//! running_mean        d × f64
//! running_stat        (d/g) × g×g f64, row-major
//! recovery params     γ, β (2d f64) or W_color (d×d) then b (d)
//! finalized_w         (d/g) × g×g f64 when present
//! ```
//!
//! Sequence record (`BWS1`): magic, count u64, rows u64, cols u64, then
//! `count` row-major matrices of f64.

use std::io::{Read, Write};

use super::{BwLayer, Mode, Recovery};
use crate::error::{Error, Result};
use crate::gradients::BackwardOptions;
use crate::linalg::Matrix;
use crate::transforms::{EstimationObject, RecoveryKind, TransformKind, WhiteningSpec};

pub const LAYER_MAGIC: &[u8; 4] = b"BWL1";
pub const SEQUENCE_MAGIC: &[u8; 4] = b"BWS1";

struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|_| Error::Parse {
            offset: self.offset,
            message: format!("truncated record while reading {what}"),
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(what)?))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let offset = self.offset;
        usize::try_from(self.u64(what)?).map_err(|_| Error::Parse {
            offset,
            message: format!("{what} does not fit in memory"),
        })
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(what)?))
    }

    fn vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64(what)).collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
        let offset = self.offset;
        let data = self.vec(rows * cols, what)?;
        Matrix::new(rows, cols, data).map_err(|e| Error::Parse {
            offset,
            message: format!("{what}: {e}"),
        })
    }

    fn bad(&self, message: String) -> Error {
        Error::Parse {
            offset: self.offset,
            message,
        }
    }
}

fn put_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

impl BwLayer {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let spec = &self.spec;
        w.write_all(LAYER_MAGIC)?;
        w.write_all(&u32::from(spec.kind.tag()).to_le_bytes())?;
        for v in [self.dim, self.group_size, spec.itn_iterations] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        put_f64s(&mut w, &[spec.momentum, spec.epsilon])?;
        let recovery_tag: u32 = match self.recovery.kind() {
            RecoveryKind::ScaleShift => 0,
            RecoveryKind::Coloring => 1,
        };
        let estimation_tag: u32 = match spec.estimation_object {
            EstimationObject::Covariance => 0,
            EstimationObject::Whitening => 1,
        };
        let mode_tag: u32 = match self.mode {
            Mode::Training => 0,
            Mode::Inference => 1,
        };
        for v in [recovery_tag, estimation_tag, mode_tag] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.steps.to_le_bytes())?;
        w.write_all(&u32::from(self.finalized.is_some()).to_le_bytes())?;
        put_f64s(&mut w, &self.running_mean)?;
        for s in &self.running_stat {
            put_f64s(&mut w, s.as_slice())?;
        }
        match &self.recovery {
            Recovery::ScaleShift { gamma, beta } => {
                put_f64s(&mut w, gamma)?;
                put_f64s(&mut w, beta)?;
            }
            Recovery::Coloring { weight, bias } => {
                put_f64s(&mut w, weight.as_slice())?;
                put_f64s(&mut w, bias)?;
            }
        }
        if let Some(ws) = &self.finalized {
            for m in ws {
                put_f64s(&mut w, m.as_slice())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader { inner: r, offset: 0 };
        let magic: [u8; 4] = r.bytes("magic")?;
        if &magic != LAYER_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "bad magic".into(),
            });
        }
        let kind_tag = r.u32("kind")?;
        let kind = u8::try_from(kind_tag)
            .ok()
            .and_then(TransformKind::from_tag)
            .ok_or_else(|| r.bad(format!("unknown transform tag {kind_tag}")))?;
        let dim = r.usize("d")?;
        let group = r.usize("g")?;
        let itn_iterations = r.usize("T")?;
        let momentum = r.f64("momentum")?;
        let epsilon = r.f64("epsilon")?;
        let recovery = match r.u32("recovery tag")? {
            0 => RecoveryKind::ScaleShift,
            1 => RecoveryKind::Coloring,
            t => return Err(r.bad(format!("unknown recovery tag {t}"))),
        };
        let estimation_object = match r.u32("estimation tag")? {
            0 => EstimationObject::Covariance,
            1 => EstimationObject::Whitening,
            t => return Err(r.bad(format!("unknown estimation tag {t}"))),
        };
        let mode = match r.u32("mode")? {
            0 => Mode::Training,
            1 => Mode::Inference,
            t => return Err(r.bad(format!("unknown mode tag {t}"))),
        };
        let steps = r.u64("steps")?;
        let has_finalized = r.u32("finalized flag")? == 1;
        let spec = WhiteningSpec {
            kind,
            group_size: Some(group),
            epsilon,
            itn_iterations,
            estimation_object,
            recovery,
            momentum,
        };
        let group_size = spec.resolve(dim).map_err(|e| r.bad(e.to_string()))?;
        let groups = dim / group_size;
        let running_mean = r.vec(dim, "running mean")?;
        let running_stat = (0..groups)
            .map(|_| r.matrix(group_size, group_size, "running statistic"))
            .collect::<Result<Vec<_>>>()?;
        let recovery = match recovery {
            RecoveryKind::ScaleShift => Recovery::ScaleShift {
                gamma: r.vec(dim, "gamma")?,
                beta: r.vec(dim, "beta")?,
            },
            RecoveryKind::Coloring => Recovery::Coloring {
                weight: r.matrix(dim, dim, "coloring weight")?,
                bias: r.vec(dim, "coloring bias")?,
            },
        };
        let finalized = if has_finalized {
            Some(
                (0..groups)
                    .map(|_| r.matrix(group_size, group_size, "finalized whitening matrix"))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(BwLayer {
            spec,
            dim,
            group_size,
            running_mean,
            running_stat,
            recovery,
            mode,
            finalized,
            steps,
            backward_opts: BackwardOptions::default(),
        })
    }
}

/// Writes equally shaped matrices as one `BWS1` record.
pub fn write_sequence<W: Write>(mut w: W, sequence: &[Matrix]) -> Result<()> {
    let (rows, cols) = sequence.first().map(|m| m.shape()).unwrap_or((0, 0));
    if sequence.iter().any(|m| m.shape() != (rows, cols)) {
        return Err(Error::Validation("sequence matrices differ in shape".into()));
    }
    w.write_all(SEQUENCE_MAGIC)?;
    for v in [sequence.len(), rows, cols] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for m in sequence {
        put_f64s(&mut w, m.as_slice())?;
    }
    Ok(())
}

pub fn read_sequence<R: Read>(r: R) -> Result<Vec<Matrix>> {
    let mut r = Reader { inner: r, offset: 0 };
    let magic: [u8; 4] = r.bytes("magic")?;
    if &magic != SEQUENCE_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    let count = r.usize("count")?;
    let rows = r.usize("rows")?;
    let cols = r.usize("cols")?;
    (0..count).map(|_| r.matrix(rows, cols, "sequence entry")).collect()
}
