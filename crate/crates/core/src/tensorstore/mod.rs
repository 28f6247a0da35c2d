//! Named-tensor checkpoints.
//!
//! A [`Checkpoint`] is an ordered list of flat `f32` tensors plus string
//! metadata. It is the unit that gets interpolated, digested, and written to
//! disk (see [`format`] for the byte layout).

mod format;

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use format::{load, save, FORMAT_VERSION, MAGIC};

/// Meta keys written by [`interpolate`].
pub const META_ALPHA: &str = "alpha";
pub const META_PARENT_A: &str = "parent_a";
pub const META_PARENT_B: &str = "parent_b";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let invalid = |reason: String| Error::InvalidTensor {
            name: name.clone(),
            reason,
        };
        if name.is_empty() {
            return Err(invalid("empty tensor name".into()));
        }
        if shape.contains(&0) {
            return Err(invalid(format!("shape {shape:?} has a zero dimension")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(invalid(format!(
                "shape {shape:?} holds {numel} elements but data has {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(invalid(format!("non-finite value at index {pos}")));
        }
        Ok(Tensor { name, shape, data })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Result<Self> {
        let numel = shape.iter().product();
        Tensor::new(name, shape, vec![0.0; numel])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Bitwise equality of the float payload (distinguishes `0.0` from `-0.0`).
    pub fn bits_eq(&self, other: &Tensor) -> bool {
        self.name == other.name
            && self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    tensors: Vec<Tensor>,
    meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tensors(tensors: impl IntoIterator<Item = Tensor>) -> Result<Self> {
        let mut ckpt = Checkpoint::new();
        for t in tensors {
            ckpt.push(t)?;
        }
        Ok(ckpt)
    }

    pub fn push(&mut self, tensor: Tensor) -> Result<()> {
        if self.get(tensor.name()).is_some() {
            return Err(Error::InvalidTensor {
                name: tensor.name,
                reason: "duplicate tensor name".into(),
            });
        }
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.set_meta(key, value);
        self
    }

    /// Checks that `other` has the same tensor names (in any order) and the
    /// same shape for each name.
    pub fn check_compatible(&self, other: &Checkpoint) -> Result<()> {
        for t in &self.tensors {
            match other.get(&t.name) {
                None => {
                    return Err(Error::IncompatibleCheckpoints {
                        name: t.name.clone(),
                        reason: "missing from second checkpoint".into(),
                    })
                }
                Some(o) if o.shape != t.shape => {
                    return Err(Error::IncompatibleCheckpoints {
                        name: t.name.clone(),
                        reason: format!("shape {:?} vs {:?}", t.shape, o.shape),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = other.tensors.iter().find(|o| self.get(&o.name).is_none()) {
            return Err(Error::IncompatibleCheckpoints {
                name: extra.name.clone(),
                reason: "missing from first checkpoint".into(),
            });
        }
        Ok(())
    }

    pub fn is_compatible(&self, other: &Checkpoint) -> bool {
        self.check_compatible(other).is_ok()
    }

    /// Bitwise equality of all tensors, ignoring meta.
    pub fn tensors_bits_eq(&self, other: &Checkpoint) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.bits_eq(b))
    }

    /// SHA-256 over tensor names, shapes and raw little-endian float bytes,
    /// in iteration order. Meta is not hashed.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        self.hash_tensors(&mut h);
        hex::encode(h.finalize())
    }

    /// Like [`Checkpoint::digest`] but also covers every meta entry.
    pub fn full_digest(&self) -> String {
        let mut h = Sha256::new();
        self.hash_tensors(&mut h);
        h.update((self.meta.len() as u64).to_le_bytes());
        for (k, v) in &self.meta {
            hash_str(&mut h, k);
            hash_str(&mut h, v);
        }
        hex::encode(h.finalize())
    }

    fn hash_tensors(&self, h: &mut Sha256) {
        h.update((self.tensors.len() as u64).to_le_bytes());
        for t in &self.tensors {
            hash_str(h, &t.name);
            h.update((t.shape.len() as u64).to_le_bytes());
            for &d in &t.shape {
                h.update((d as u64).to_le_bytes());
            }
            for x in &t.data {
                h.update(x.to_le_bytes());
            }
        }
    }

    /// Replaces the data of tensor `name`, keeping its shape.
    pub(crate) fn replace_data(&mut self, name: &str, data: Vec<f32>) -> Result<()> {
        let t = self
            .tensors
            .iter_mut()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::ShapeMismatch(format!("no tensor named `{name}`")))?;
        *t = Tensor::new(name, t.shape.clone(), data)?;
        Ok(())
    }
}

fn hash_str(h: &mut Sha256, s: &str) {
    h.update((s.len() as u64).to_le_bytes());
    h.update(s.as_bytes());
}

/// The two 32-bit coefficients used for `alpha·a + (1−alpha)·b`.
///
/// The complement is taken in f64 and rounded once, so the pair for `1 − alpha`
/// is the swapped pair for `alpha`.
pub fn interpolation_weights(alpha: f64) -> (f32, f32) {
    (alpha as f32, (1.0 - alpha) as f32)
}

/// Elementwise `alpha·a + (1−alpha)·b` over every tensor, in `f32`.
///
/// The result keeps `a`'s tensor order and meta, and records `alpha` and the
/// tensor digests of both parents. At `alpha = 1` (resp. `0`) the tensors are
/// copied bit for bit from `a` (resp. `b`).
pub fn interpolate(a: &Checkpoint, b: &Checkpoint, alpha: f64) -> Result<Checkpoint> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    a.check_compatible(b)?;
    let (wa, wb) = interpolation_weights(alpha);

    let mut out = Checkpoint {
        tensors: Vec::with_capacity(a.tensors.len()),
        meta: a.meta.clone(),
    };
    for ta in &a.tensors {
        let tb = b.get(&ta.name).expect("checked compatible");
        let data: Vec<f32> = if alpha == 1.0 {
            ta.data.clone()
        } else if alpha == 0.0 {
            tb.data.clone()
        } else {
            ta.data
                .iter()
                .zip(&tb.data)
                .map(|(&xa, &xb)| wa * xa + wb * xb)
                .collect()
        };
        out.tensors.push(Tensor::new(ta.name.clone(), ta.shape.clone(), data)?);
    }
    out.set_meta(META_ALPHA, alpha.to_string());
    out.set_meta(META_PARENT_A, a.digest());
    out.set_meta(META_PARENT_B, b.digest());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt(w: &[f32]) -> Checkpoint {
        Checkpoint::from_tensors([Tensor::new("w", vec![w.len()], w.to_vec()).unwrap()]).unwrap()
    }

    #[test]
    fn midpoint() {
        let out = interpolate(&ckpt(&[2.0, -4.0]), &ckpt(&[4.0, 0.0]), 0.5).unwrap();
        assert_eq!(out.get("w").unwrap().data(), &[3.0, -2.0]);
        assert_eq!(out.meta_value(META_ALPHA), Some("0.5"));
    }

    #[test]
    fn endpoints_copy_negative_zero() {
        let a = ckpt(&[-0.0, 1.5]);
        let b = ckpt(&[3.0, -0.0]);
        assert!(interpolate(&a, &b, 1.0).unwrap().tensors_bits_eq(&a));
        assert!(interpolate(&a, &b, 0.0).unwrap().tensors_bits_eq(&b));
    }

    #[test]
    fn records_parents() {
        let a = ckpt(&[1.0]);
        let b = ckpt(&[2.0]);
        let out = interpolate(&a, &b, 0.25).unwrap();
        assert_eq!(out.meta_value(META_PARENT_A), Some(a.digest().as_str()));
        assert_eq!(out.meta_value(META_PARENT_B), Some(b.digest().as_str()));
        assert_eq!(interpolate(&a, &b, 1.0).unwrap().digest(), a.digest());
    }

    #[test]
    fn rejects_bad_alpha() {
        let a = ckpt(&[1.0]);
        assert!(matches!(interpolate(&a, &a, 1.5), Err(Error::AlphaOutOfRange(_))));
        assert!(matches!(interpolate(&a, &a, -0.1), Err(Error::AlphaOutOfRange(_))));
        assert!(matches!(interpolate(&a, &a, f64::NAN), Err(Error::AlphaOutOfRange(_))));
    }

    #[test]
    fn incompatible_reports_first_offender() {
        let a = Checkpoint::from_tensors([
            Tensor::new("w", vec![2], vec![0.0; 2]).unwrap(),
            Tensor::new("b", vec![1], vec![0.0]).unwrap(),
        ])
        .unwrap();
        let shape = Checkpoint::from_tensors([
            Tensor::new("w", vec![1, 2], vec![0.0; 2]).unwrap(),
            Tensor::new("b", vec![1], vec![0.0]).unwrap(),
        ])
        .unwrap();
        match interpolate(&a, &shape, 0.5) {
            Err(Error::IncompatibleCheckpoints { name, .. }) => assert_eq!(name, "w"),
            other => panic!("{other:?}"),
        }
        let names = ckpt(&[0.0, 0.0]);
        match interpolate(&a, &names, 0.5) {
            Err(Error::IncompatibleCheckpoints { name, .. }) => assert_eq!(name, "b"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tensor_invariants() {
        assert!(Tensor::new("", vec![1], vec![0.0]).is_err());
        assert!(Tensor::new("x", vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new("x", vec![0], vec![]).is_err());
        assert!(Tensor::new("x", vec![1], vec![f32::NAN]).is_err());
        let mut c = ckpt(&[1.0]);
        assert!(c.push(Tensor::new("w", vec![1], vec![0.0]).unwrap()).is_err());
    }

    #[test]
    fn digest_sensitive_to_one_bit() {
        let a = ckpt(&[1.0, 2.0]);
        let flipped = f32::from_bits(2.0f32.to_bits() ^ 1);
        let b = ckpt(&[1.0, flipped]);
        assert_ne!(a.digest(), b.digest());
        let c = a.clone().with_meta("k", "v");
        assert_eq!(a.digest(), c.digest());
        assert_ne!(a.full_digest(), c.full_digest());
    }
}
