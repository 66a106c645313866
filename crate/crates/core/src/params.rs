//! Named parameter tensors, the Adam optimizer and safetensors persistence.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, Zip};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{Error, Result};

/// A fixed set of named `f64` tensors. Gradients are stored in a value of the same type.
pub trait Parameterized {
    fn visit(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, f64>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>));

    fn num_parameters(&self) -> usize {
        let mut total = 0;
        self.visit(&mut |_, t| total += t.len());
        total
    }

    fn zero(&mut self) {
        self.visit_mut(&mut |_, mut t| t.fill(0.0));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }

    /// Owned copies of every tensor, in visiting order.
    fn snapshot(&self) -> Vec<(String, ArrayD<f64>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name.to_string(), t.to_owned())));
        out
    }

    /// Overwrites every tensor from `tensors`, matching by name and shape.
    fn restore(&mut self, tensors: &HashMap<String, ArrayD<f64>>) -> Result<()> {
        let mut failure = None;
        self.visit_mut(&mut |name, mut t| {
            if failure.is_some() {
                return;
            }
            match tensors.get(name) {
                Some(src) if src.shape() == t.shape() => t.assign(src),
                Some(src) => {
                    failure = Some(format!(
                        "tensor {name}: shape {:?} does not match expected {:?}",
                        src.shape(),
                        t.shape()
                    ))
                }
                None => failure = Some(format!("tensor {name} missing")),
            }
        });
        failure.map_or(Ok(()), |m| Err(Error::Checkpoint(m)))
    }
}

/// Adam with bias correction. Moment buffers are allocated on the first step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Adam {
    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step<P: Parameterized + ?Sized>(&mut self, params: &mut P, grads: &P, lr: f64) {
        let mut g = Vec::new();
        grads.visit(&mut |_, t| g.push(t.to_owned()));
        if self.m.is_empty() {
            self.m = g.iter().map(|t| ArrayD::zeros(t.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let mut i = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        params.visit_mut(&mut |_, p| {
            Zip::from(p)
                .and(&mut m[i])
                .and(&mut v[i])
                .and(&g[i])
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
            i += 1;
        });
    }
}

/// Writes the tensors of several parameter groups to one safetensors file,
/// each name prefixed with its group.
pub fn save_safetensors(path: &Path, groups: &[(&str, &dyn Parameterized)]) -> Result<()> {
    let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    for (prefix, group) in groups {
        group.visit(&mut |name, t| {
            let bytes = t.iter().flat_map(|v| v.to_le_bytes()).collect();
            buffers.push((format!("{prefix}.{name}"), t.shape().to_vec(), bytes));
        });
    }
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F64, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize_to_file(views, None, path).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Reads every `f64` tensor in a safetensors file.
pub fn read_safetensors(path: &Path) -> Result<HashMap<String, ArrayD<f64>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = HashMap::new();
    for name in st.names() {
        let view = st.tensor(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if view.dtype() != Dtype::F64 {
            return Err(Error::Checkpoint(format!("tensor {name} is not f64")));
        }
        let values: Vec<f64> = view
            .data()
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let array = ArrayD::from_shape_vec(view.shape().to_vec(), values)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        out.insert(name.to_string(), array);
    }
    Ok(out)
}

/// Restores one group written by [`save_safetensors`].
pub fn restore_group(
    tensors: &HashMap<String, ArrayD<f64>>,
    prefix: &str,
    group: &mut dyn Parameterized,
) -> Result<()> {
    let strip = format!("{prefix}.");
    let local: HashMap<String, ArrayD<f64>> = tensors
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(&strip).map(|s| (s.to_string(), v.clone())))
        .collect();
    group.restore(&local)
}
