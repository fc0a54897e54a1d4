//! Named parameter tensors, freezing, Adam updates and the checkpoint format.
//!
//! # Checkpoint layout
//!
//! All integers are little-endian.
//!
//! ```text
//! magic      8 bytes   "CHOREOCK"
//! version    u32       1
//! count      u32       number of tensors
//! count x {
//!   name_len u32
//!   name     name_len bytes, UTF-8
//!   frozen   u8        0 or 1
//!   rows     u32
//!   cols     u32
//!   values   rows*cols x f64 (IEEE-754 binary64, little-endian), row-major
//! }
//! ```
//!
//! Tensors are written in registration order. Optimizer moments are not
//! part of a checkpoint.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CHOREOCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Matrix,
    frozen: bool,
    first_moment: Matrix,
    second_moment: Matrix,
    steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
    adam: AdamConfig,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        let (rows, cols) = value.shape();
        self.params.push(Param {
            name: name.clone(),
            value,
            frozen: false,
            first_moment: Matrix::zeros(rows, cols),
            second_moment: Matrix::zeros(rows, cols),
            steps: 0,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    /// Registers a weight matrix drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn register_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        self.register(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[id.0].frozen
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn set_adam(&mut self, adam: AdamConfig) {
        self.adam = adam;
    }

    pub fn freeze(&mut self, prefix: &str) -> Result<()> {
        self.set_frozen(prefix, true)
    }

    pub fn unfreeze(&mut self, prefix: &str) -> Result<()> {
        self.set_frozen(prefix, false)
    }

    fn set_frozen(&mut self, prefix: &str, frozen: bool) -> Result<()> {
        let mut matched = false;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
            matched = true;
        }
        if matched {
            Ok(())
        } else {
            Err(Error::NoSuchParameter(prefix.to_string()))
        }
    }

    /// One Adam step over every non-frozen parameter that has a gradient.
    ///
    /// All gradients are validated before anything is written, so a
    /// non-finite entry leaves the store untouched.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        for (id, g) in &grads.entries {
            let p = &self.params[id.0];
            if g.shape() != p.value.shape() {
                return Err(Error::DimensionMismatch {
                    context: "apply_gradients",
                    expected: p.value.len(),
                    got: g.len(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        for (id, g) in &grads.entries {
            let p = &mut self.params[id.0];
            if p.frozen {
                continue;
            }
            p.steps += 1;
            let bc1 = 1.0 - beta1.powi(p.steps as i32);
            let bc2 = 1.0 - beta2.powi(p.steps as i32);
            let m = p.first_moment.data_mut();
            let v = p.second_moment.data_mut();
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Copies values (and frozen flags) of every tensor whose name starts
    /// with `prefix` from `other`, registering missing ones.
    pub fn copy_from(&mut self, other: &ParamStore, prefix: &str) -> Result<()> {
        let mut matched = false;
        for p in other.params.iter().filter(|p| p.name.starts_with(prefix)) {
            matched = true;
            match self.id(&p.name) {
                Some(id) => {
                    if self.params[id.0].value.shape() != p.value.shape() {
                        return Err(Error::DimensionMismatch {
                            context: "copy_from",
                            expected: self.params[id.0].value.len(),
                            got: p.value.len(),
                        });
                    }
                    self.params[id.0].value = p.value.clone();
                }
                None => {
                    self.register(p.name.clone(), p.value.clone())?;
                }
            }
        }
        if matched {
            Ok(())
        } else {
            Err(Error::NoSuchParameter(prefix.to_string()))
        }
    }

    /// Serialises all tensors whose name starts with `prefix` ("" for all).
    pub fn checkpoint_bytes(&self, prefix: &str) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_checkpoint(&mut out, prefix)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W, prefix: &str) -> Result<()> {
        let selected: Vec<&Param> = self
            .params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .collect();
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(selected.len() as u32).to_le_bytes())?;
        for p in selected {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[u8::from(p.frozen)])?;
            w.write_all(&(p.value.rows() as u32).to_le_bytes())?;
            w.write_all(&(p.value.cols() as u32).to_le_bytes())?;
            for x in p.value.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            let id = store.register(name, Matrix::from_vec(rows, cols, data))?;
            store.params[id.0].frozen = match flag[0] {
                0 => false,
                1 => true,
                other => return Err(Error::Checkpoint(format!("bad frozen flag {other}"))),
            };
        }
        Ok(store)
    }

    /// Overwrites values of tensors present in `checkpoint` (matched by name).
    pub fn load_values(&mut self, checkpoint: &ParamStore) -> Result<()> {
        self.copy_from(checkpoint, "")
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Gradients produced by a backward pass, keyed by parameter.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    entries: BTreeMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.entries.get(&id)
    }

    pub fn by_name<'a>(&'a self, store: &ParamStore, name: &str) -> Option<&'a Matrix> {
        store.id(name).and_then(|id| self.entries.get(&id))
    }

    pub fn insert(&mut self, id: ParamId, grad: Matrix) {
        self.entries.insert(id, grad);
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Matrix) {
        match self.entries.get_mut(&id) {
            Some(g) => g.add_assign(grad),
            None => {
                self.entries.insert(id, grad.clone());
            }
        }
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.entries.iter().map(|(id, g)| (*id, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(names: &[&str]) -> ParamStore {
        let mut s = ParamStore::new();
        for (i, n) in names.iter().enumerate() {
            s.register(*n, Matrix::filled(2, 3, i as f64 + 1.0)).unwrap();
        }
        s
    }

    fn grads_for(store: &ParamStore, value: f64) -> Gradients {
        let mut g = Gradients::new();
        for id in store.ids() {
            let (r, c) = store.value(id).shape();
            g.insert(id, Matrix::filled(r, c, value));
        }
        g
    }

    #[test]
    fn frozen_parameter_ignores_gradient() {
        let mut s = store_with(&["features.l1.w", "head.w"]);
        s.freeze("features").unwrap();
        let before = s.value(ParamId(0)).clone();
        let g = grads_for(&s, 0.7);
        for _ in 0..10 {
            s.apply_gradients(&g, 0.1).unwrap();
        }
        assert_eq!(s.value(ParamId(0)), &before);
        assert_ne!(s.value(ParamId(1)), &Matrix::filled(2, 3, 2.0));
    }

    #[test]
    fn unfreeze_resumes_updates() {
        let mut s = store_with(&["features.l1.w"]);
        s.freeze("features").unwrap();
        s.unfreeze("features").unwrap();
        let g = grads_for(&s, 1.0);
        s.apply_gradients(&g, 0.1).unwrap();
        assert!(s.value(ParamId(0)).data().iter().all(|&x| x < 1.0));
    }

    #[test]
    fn freeze_unknown_prefix_is_error() {
        let mut s = store_with(&["features.l1.w"]);
        assert!(matches!(s.freeze("no_such"), Err(Error::NoSuchParameter(_))));
        assert!(matches!(s.unfreeze("no_such"), Err(Error::NoSuchParameter(_))));
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters_unchanged() {
        let mut s = store_with(&["a", "b"]);
        let before = s.checkpoint_bytes("");
        s.apply_gradients(&grads_for(&s, 0.0), 0.1).unwrap();
        assert_eq!(s.checkpoint_bytes(""), before);
    }

    #[test]
    fn adam_step_on_square_decreases_weight() {
        // f(w) = w^2 at w = 1: g = 2, m = 0.2, v = 0.004, bias-corrected
        // m_hat = 2, v_hat = 4, step = 0.1 * 2 / (2 + 1e-8).
        let mut s = ParamStore::new();
        let id = s.register("w", Matrix::scalar(1.0)).unwrap();
        let mut g = Gradients::new();
        g.insert(id, Matrix::scalar(2.0));
        s.apply_gradients(&g, 0.1).unwrap();
        let w = s.value(id).item();
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!(w < 1.0);
        assert!((w - expected).abs() < 1e-12, "{w} vs {expected}");
    }

    #[test]
    fn non_finite_gradient_rejected_without_side_effects() {
        let mut s = store_with(&["a", "b"]);
        let before = s.checkpoint_bytes("");
        let mut g = grads_for(&s, 0.5);
        g.insert(ParamId(1), Matrix::filled(2, 3, f64::NAN));
        assert!(matches!(
            s.apply_gradients(&g, 0.1),
            Err(Error::NonFiniteGradient(name)) if name == "b"
        ));
        assert_eq!(s.checkpoint_bytes(""), before);
    }

    #[test]
    fn checkpoint_round_trip_preserves_bits() {
        let mut s = store_with(&["features.l1.w", "head.b"]);
        s.value_mut(ParamId(0)).set(0, 1, -0.1234567890123);
        s.freeze("features").unwrap();
        let bytes = s.checkpoint_bytes("");
        let back = ParamStore::read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back.is_frozen(ParamId(0)));
        assert!(!back.is_frozen(ParamId(1)));
        assert_eq!(back.checkpoint_bytes(""), bytes);
    }

    #[test]
    fn checkpoint_header_layout() {
        let mut s = ParamStore::new();
        s.register("w", Matrix::from_vec(1, 2, vec![1.0, -2.0])).unwrap();
        let bytes = s.checkpoint_bytes("");
        assert_eq!(&bytes[..8], b"CHOREOCK");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1u32.to_le_bytes());
        assert_eq!(bytes[20], b'w');
        assert_eq!(bytes[21], 0);
        assert_eq!(&bytes[22..26], &1u32.to_le_bytes());
        assert_eq!(&bytes[26..30], &2u32.to_le_bytes());
        assert_eq!(&bytes[30..38], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[38..46], &(-2.0f64).to_le_bytes());
        assert_eq!(bytes.len(), 46);
    }

    #[test]
    fn checkpoint_prefix_selects_subset() {
        let s = store_with(&["features.l1.w", "features.l1.b", "head.w"]);
        let back = ParamStore::read_checkpoint(s.checkpoint_bytes("features").as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back.id("head.w").is_none());
    }

    #[test]
    fn corrupt_checkpoint_rejected() {
        assert!(ParamStore::read_checkpoint(&b"NOTACKPT\x01\0\0\0"[..]).is_err());
        let s = store_with(&["a"]);
        let bytes = s.checkpoint_bytes("");
        assert!(ParamStore::read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    }
}
