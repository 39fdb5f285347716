//! Named trainable parameters with Adam state, plus a simple binary
//! container format for checkpoints.
//!
//! Container layout: magic `NTC1`, u32 tensor count, then per tensor
//! u32 name length, UTF-8 name, u32 rows, u32 cols, row-major f64
//! values. All integers and floats little-endian.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"NTC1";

struct Param {
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Ordered collection of named parameters. Order is insertion order and is
/// part of the determinism contract: gradient accumulation and Adam updates
/// always walk parameters in the same order.
#[derive(Default)]
pub struct ParameterSet {
    names: Vec<String>,
    index: HashMap<String, usize>,
    params: Vec<Param>,
    step: u64,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter {name}"
        );
        let (r, c) = (value.rows(), value.cols());
        self.index.insert(name.to_string(), self.params.len());
        self.names.push(name.to_string());
        self.params.push(Param {
            value,
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
        });
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn value(&self, name: &str) -> &Tensor {
        &self.params[self.index[name]].value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Tensor {
        let i = self.index[name];
        &mut self.params[i].value
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        &self.params[self.index[name]].grad
    }

    pub fn set_grad(&mut self, name: &str, grad: Tensor) {
        let i = self.index[name];
        debug_assert!(self.params[i].value.same_shape(&grad));
        self.params[i].grad = grad;
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor) {
        let i = self.index[name];
        self.params[i].grad.add_assign(grad);
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, k: f64) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g *= k;
            }
        }
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Scale gradients so the global norm does not exceed `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm {
            self.scale_grads(max_norm / norm);
        }
    }

    /// One Adam update with bias correction over every parameter.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
        for (name, p) in self.names.iter().zip(&self.params) {
            if !p.grad.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {name}")));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - beta1.powf(t);
        let bc2 = 1.0 - beta2.powf(t);
        for p in &mut self.params {
            for i in 0..p.value.len() {
                let g = p.grad.data()[i];
                let m = beta1 * p.m.data()[i] + (1.0 - beta1) * g;
                let v = beta2 * p.v.data()[i] + (1.0 - beta2) * g * g;
                p.m.data_mut()[i] = m;
                p.v.data_mut()[i] = v;
                let mhat = m / bc1;
                let vhat = v / bc2;
                p.value.data_mut()[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, p) in self.names.iter().zip(&self.params) {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
            buf.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
            for v in p.value.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(&buf)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut data = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut data))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > data.len() {
                return Err(Error::validation("truncated parameter container"));
            }
            let s = &data[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != MAGIC {
            return Err(Error::validation("bad parameter container magic"));
        }
        let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut set = ParameterSet::new();
        for _ in 0..count {
            let nlen = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, nlen)?.to_vec())
                .map_err(|_| Error::validation("non-UTF-8 parameter name"))?;
            let rows = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let cols = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                values.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            set.insert(&name, Tensor::from_vec(rows, cols, values)?);
        }
        Ok(set)
    }
}
