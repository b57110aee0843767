use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::error::NnError;
use super::graph::Graph;

static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

fn fresh_tag() -> u64 {
    NEXT_TAG.fetch_add(1, Ordering::Relaxed)
}

/// A named parameter tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
}

impl ParamTensor {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Owns a model's parameters. Each store carries a process-unique tag so a
/// [`Graph`] can tell which leaves belong to it; clones get a new tag.
#[derive(Debug)]
pub struct ParamStore {
    tag: u64,
    tensors: Vec<ParamTensor>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            tag: fresh_tag(),
            tensors: self.tensors.clone(),
        }
    }
}

impl PartialEq for ParamStore {
    /// Compares contents; tags are identity, not value.
    fn eq(&self, other: &Self) -> bool {
        self.tensors == other.tensors
    }
}

/// Weight initialisation scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot,
    Zeros,
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            tag: fresh_tag(),
            tensors: Vec::new(),
        }
    }

    pub fn tag(&self) -> u64 {
        self.tag
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> ParamId {
        assert!(shape.iter().all(|&d| d > 0), "parameter dims must be positive");
        assert_eq!(shape.iter().product::<usize>(), values.len());
        let grad = vec![0.0; values.len()];
        self.tensors.push(ParamTensor {
            name: name.into(),
            shape,
            values,
            grad,
        });
        ParamId(self.tensors.len() - 1)
    }

    /// Adds an `(rows, cols)` weight matrix initialised per `init`.
    pub fn add_matrix<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let values = match init {
            Init::Zeros => vec![0.0; rows * cols],
            Init::Glorot => {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect()
            }
        };
        self.add(name, vec![rows, cols], values)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Adds this store's gradients from the last backward pass on `g`.
    /// Tensors the loss did not reach are left untouched.
    pub fn accumulate_grads(&mut self, g: &Graph) {
        for (idx, var) in g.bound_params(self.tag) {
            if let Some(gr) = g.grad(var) {
                for (acc, v) in self.tensors[idx].grad.iter_mut().zip(gr) {
                    *acc += v;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scale_grads(&mut self, k: f64) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g *= k);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            self.scale_grads(max_norm / norm);
        }
        norm
    }

    /// First tensor holding a NaN or infinite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|t| !t.is_finite())
            .map(|t| t.name.as_str())
    }

    /// Writes the checkpoint layout:
    ///
    /// ```text
    /// magic    8 bytes  "IECPARAM"
    /// version  u32 LE   (1)
    /// count    u32 LE   number of tensors
    /// repeated count times:
    ///   name_len u32 LE, name UTF-8 bytes
    ///   rank     u32 LE, dims u64 LE x rank
    ///   values   f64 LE x product(dims)
    /// ```
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            w.write_all(&(t.name.len() as u32).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in &t.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint into a fresh store (gradients zeroed).
    pub fn load<R: Read>(mut r: R) -> Result<Self, NnError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| NnError::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            if shape.contains(&0) {
                return Err(NnError::Checkpoint(format!("tensor {name} has a zero dim")));
            }
            let n: usize = shape.iter().product();
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                values.push(f64::from_le_bytes(b));
            }
            store.add(name, shape, values);
        }
        Ok(store)
    }

    /// Overwrites values from `other`, which must have the same names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<(), NnError> {
        if self.tensors.len() != other.tensors.len() {
            return Err(NnError::Checkpoint(format!(
                "tensor count {} does not match {}",
                other.tensors.len(),
                self.tensors.len()
            )));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.name != src.name || dst.shape != src.shape {
                return Err(NnError::Checkpoint(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    src.name, src.shape, dst.name, dst.shape
                )));
            }
            dst.values.copy_from_slice(&src.values);
        }
        Ok(())
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"IECPARAM";
const CHECKPOINT_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
