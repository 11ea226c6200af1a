//! Named parameter collections and their binary checkpoint format.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! u32 entry_count
//! repeat entry_count times:
//!     u32 name_len, name_len bytes of UTF-8 name,
//!     u32 rows, u32 cols, rows*cols f64 (LE, row-major)
//! ```

use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
    /// Buffers such as batch-norm running statistics are carried and
    /// aggregated like parameters but never touched by an optimizer.
    pub trainable: bool,
}

/// Ordered map from name to parameter. Iteration order is insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: IndexMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.insert_entry(name, value, true);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Matrix) {
        self.insert_entry(name, value, false);
    }

    fn insert_entry(&mut self, name: impl Into<String>, value: Matrix, trainable: bool) {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.entries.insert(
            name.into(),
            Param {
                value,
                grad,
                trainable,
            },
        );
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    /// Value of a parameter known to exist. Panics otherwise; components use
    /// this with their own fixed names.
    pub fn value(&self, name: &str) -> &Matrix {
        &self.entries[name].value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Matrix {
        &mut self.entries[name].value
    }

    pub fn grad(&self, name: &str) -> &Matrix {
        &self.entries[name].grad
    }

    /// Adds `g` into the gradient buffer of `name`.
    pub fn accumulate(&mut self, name: &str, g: &Matrix) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::shape("ParamSet::accumulate", format!("no entry {name}")))?;
        p.grad.add_assign(g)
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((a, pa), (b, pb))| a == b && pa.value.shape() == pb.value.shape())
    }

    fn ensure_layout(&self, other: &ParamSet, op: &'static str) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::shape(op, "parameter sets differ in names or shapes"));
        }
        Ok(())
    }

    /// Copies every value from `other`, which must share names and shapes.
    /// Gradients are left alone.
    pub fn copy_values_from(&mut self, other: &ParamSet) -> Result<()> {
        self.ensure_layout(other, "copy_values_from")?;
        for (p, q) in self.entries.values_mut().zip(other.entries.values()) {
            p.value.clone_from(&q.value);
        }
        Ok(())
    }

    /// `self - other` as a fresh set with zero gradients and the same
    /// trainable flags as `self`.
    pub fn value_diff(&self, other: &ParamSet) -> Result<ParamSet> {
        self.ensure_layout(other, "value_diff")?;
        let mut out = ParamSet::new();
        for ((name, p), q) in self.entries.iter().zip(other.entries.values()) {
            out.insert_entry(name.clone(), p.value.sub(&q.value)?, p.trainable);
        }
        Ok(out)
    }

    /// Elementwise `self.value += other.value`.
    pub fn add_values(&mut self, other: &ParamSet) -> Result<()> {
        self.ensure_layout(other, "add_values")?;
        for (p, q) in self.entries.values_mut().zip(other.entries.values()) {
            p.value.add_assign(&q.value)?;
        }
        Ok(())
    }

    pub fn scale_values(&mut self, s: f64) {
        for p in self.entries.values_mut() {
            p.value = p.value.scale(s);
        }
    }

    /// Largest absolute difference between corresponding values.
    pub fn max_abs_diff(&self, other: &ParamSet) -> Result<f64> {
        self.ensure_layout(other, "max_abs_diff")?;
        Ok(self
            .entries
            .values()
            .zip(other.entries.values())
            .map(|(p, q)| p.value.max_abs_diff(&q.value))
            .fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|p| p.value.is_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.num_scalars() * 8 + self.len() * 32);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, p) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
            for v in p.value.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Decodes the binary format. Every entry comes back trainable with a
    /// zero gradient; use [`ParamSet::copy_values_from`] to load into a
    /// component that has buffers.
    pub fn from_bytes(bytes: &[u8]) -> Result<ParamSet> {
        let mut cur = Cursor { bytes, pos: 0 };
        let count = cur.u32()? as usize;
        let mut out = ParamSet::new();
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|e| Error::Format(format!("entry name is not UTF-8: {e}")))?
                .to_string();
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Format(format!("{name}: {rows}x{cols} overflows")))?;
            let raw = cur.take(
                n.checked_mul(8)
                    .ok_or_else(|| Error::Format(format!("{name}: payload size overflows")))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            if out.entries.contains_key(&name) {
                return Err(Error::Format(format!("duplicate entry {name}")));
            }
            out.insert(name, Matrix::from_vec(rows, cols, data)?);
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                bytes.len() - cur.pos
            )));
        }
        Ok(out)
    }

    /// SHA-256 of the binary encoding, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}
