//! Part-wise color histograms.
//!
//! A descriptor has 144 entries laid out part-major, channel-middle, bin-minor:
//! index `part * 48 + channel * 16 + bin` with parts (head, torso, leg) and
//! channels (R, G, B). Every 16-bin block is a frequency histogram of that part's
//! foreground pixels, or all zeros when the part has no foreground.
//!
//! # Table file
//!
//! Descriptor tables serialize little-endian:
//!
//! ```text
//! magic   b"HRDT"
//! version u32 (= 1)
//! rows    u64
//! dim     u32 (= 144)
//! per row:
//!   id_len   u32, id bytes (UTF-8)
//!   n_frames u64
//!   values   dim x f64
//! ```

use std::collections::HashSet;
use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::silhouette::{split_parts, NormalizedSilhouette, CHANNELS};

pub const BINS: usize = 16;
pub const PARTS: usize = 3;
pub const BLOCK: usize = BINS;
pub const DESCRIPTOR_LEN: usize = PARTS * CHANNELS * BINS;

const TABLE_MAGIC: &[u8; 4] = b"HRDT";
const TABLE_VERSION: u32 = 1;

/// Averaged color appearance descriptor of one subject sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorDescriptor<T> {
    pub values: Vec<T>,
    pub subject_id: String,
    pub n_frames: usize,
}

impl<T: Scalar> ColorDescriptor<T> {
    pub fn blocks(&self) -> impl Iterator<Item = &[T]> {
        self.values.chunks(BLOCK)
    }
}

/// Bin index of an intensity in `[0,1]`; the last bin is closed.
#[inline]
pub fn bin_of<T: Scalar>(v: T) -> usize {
    let b = (v * T::of(BINS as f64)).floor().to_usize().unwrap_or(0);
    b.min(BINS - 1)
}

/// Histogram descriptor of a single normalized silhouette.
pub fn frame_descriptor<T: Scalar>(sil: &NormalizedSilhouette<T>) -> Result<Vec<T>> {
    let parts = split_parts(sil)?;
    let mut out = vec![T::zero(); DESCRIPTOR_LEN];
    for (p, part) in parts.parts().into_iter().enumerate() {
        let fg = part.foreground_count();
        if fg == 0 {
            continue;
        }
        for c in 0..CHANNELS {
            let mut counts = [0usize; BINS];
            for (&v, _) in part.plane(c).iter().zip(&part.mask).filter(|(_, &m)| m) {
                counts[bin_of(v)] += 1;
            }
            let block = &mut out[(p * CHANNELS + c) * BINS..][..BINS];
            let total = T::of(fg as f64);
            for (dst, &n) in block.iter_mut().zip(&counts) {
                *dst = T::of(n as f64) / total;
            }
        }
    }
    Ok(out)
}

fn lexicographic<T: Scalar>(a: &[T], b: &[T]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.f64().total_cmp(&y.f64()))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Averages per-frame descriptors over a sequence.
///
/// Each block is the mean over the frames in which that block is non-empty, so
/// every non-zero block still sums to one when parts vanish in some frames.
/// Frames are accumulated in canonical order, making the result independent of
/// the input order.
pub fn sequence_descriptor<T: Scalar>(
    seq: &[NormalizedSilhouette<T>],
    subject_id: impl Into<String>,
) -> Result<ColorDescriptor<T>> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut frames = seq
        .iter()
        .map(frame_descriptor)
        .collect::<Result<Vec<_>>>()?;
    frames.sort_by(|a, b| lexicographic(a, b));

    let mut values = vec![T::zero(); DESCRIPTOR_LEN];
    for (blk, out) in values.chunks_mut(BLOCK).enumerate() {
        let mut present = 0usize;
        for f in &frames {
            let src = &f[blk * BLOCK..(blk + 1) * BLOCK];
            if src.iter().any(|v| *v > T::zero()) {
                present += 1;
                for (o, &v) in out.iter_mut().zip(src) {
                    *o += v;
                }
            }
        }
        if present > 1 {
            let n = T::of(present as f64);
            out.iter_mut().for_each(|o| *o /= n);
        }
    }
    Ok(ColorDescriptor {
        values,
        subject_id: subject_id.into(),
        n_frames: seq.len(),
    })
}

/// Row-major `N x 144` descriptor matrix with subject labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    data: Vec<T>,
    dim: usize,
    ids: Vec<String>,
    n_frames: Vec<usize>,
}

impl<T: Scalar> FeatureMatrix<T> {
    /// Raw constructor for arbitrary-width matrices; ids must be unique.
    pub fn from_rows(rows: Vec<Vec<T>>, ids: Vec<String>) -> Result<Self> {
        let n_frames = vec![1; rows.len()];
        Self::assemble(rows, ids, n_frames)
    }

    fn assemble(rows: Vec<Vec<T>>, ids: Vec<String>, n_frames: Vec<usize>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptySequence);
        }
        if rows.len() != ids.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} ids", rows.len()),
                got: format!("{} ids", ids.len()),
            });
        }
        let dim = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: format!("row width {dim}"),
                got: format!("row width {}", r.len()),
            });
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::DuplicateId(dup.clone()));
        }
        Ok(Self {
            data: rows.into_iter().flatten().collect(),
            dim,
            ids,
            n_frames,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.dim)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn descriptor(&self, i: usize) -> ColorDescriptor<T> {
        ColorDescriptor {
            values: self.row(i).to_vec(),
            subject_id: self.ids[i].clone(),
            n_frames: self.n_frames[i],
        }
    }

    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TABLE_MAGIC)?;
        w.write_u32::<LE>(TABLE_VERSION)?;
        w.write_u64::<LE>(self.len() as u64)?;
        w.write_u32::<LE>(self.dim as u32)?;
        for (i, row) in self.rows().enumerate() {
            write_str(&mut w, &self.ids[i])?;
            w.write_u64::<LE>(self.n_frames[i] as u64)?;
            for v in row {
                w.write_f64::<LE>(v.f64())?;
            }
        }
        Ok(())
    }

    pub fn read_table<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TABLE_MAGIC {
            return Err(Error::format("descriptor table", "bad magic"));
        }
        let version = r.read_u32::<LE>()?;
        if version != TABLE_VERSION {
            return Err(Error::format(
                "descriptor table",
                format!("unsupported version {version}"),
            ));
        }
        let n = r.read_u64::<LE>()? as usize;
        let dim = r.read_u32::<LE>()? as usize;
        let mut rows = Vec::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        let mut n_frames = Vec::with_capacity(n);
        for _ in 0..n {
            ids.push(read_str(&mut r)?);
            n_frames.push(r.read_u64::<LE>()? as usize);
            let row = (0..dim)
                .map(|_| r.read_f64::<LE>().map(T::of))
                .collect::<std::io::Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::assemble(rows, ids, n_frames)
    }
}

/// Stacks descriptors in input order.
pub fn build_feature_matrix<T: Scalar>(descs: &[ColorDescriptor<T>]) -> Result<FeatureMatrix<T>> {
    FeatureMatrix::assemble(
        descs.iter().map(|d| d.values.clone()).collect(),
        descs.iter().map(|d| d.subject_id.clone()).collect(),
        descs.iter().map(|d| d.n_frames).collect(),
    )
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LE>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::format("string", e.to_string()))
}
