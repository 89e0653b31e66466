use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named parameters in a fixed order, with Adam moments and step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
}

impl Default for ParamSet {
    fn default() -> Self {
        ParamSet::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        }
    }

    /// Appends a parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.first_moment.push(Tensor::zeros(value.shape()));
        self.second_moment.push(Tensor::zeros(value.shape()));
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, index: usize) -> &Tensor {
        &self.values[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.values[index]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &Tensor {
        &self.first_moment[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor {
        &self.second_moment[index]
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// All parameters concatenated into one vector in index order.
    pub fn flatten(&self) -> Tensor {
        let data: Vec<f64> = self
            .values
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect();
        let n = data.len();
        Tensor::new(vec![n.max(1)], if n == 0 { vec![0.0] } else { data })
            .expect("parameters are finite")
    }

    pub fn set_from_flat(&mut self, flat: &Tensor) -> Result<()> {
        if flat.len() != self.scalar_count() {
            return Err(Error::Shape(format!(
                "flat vector of {} for {} parameters",
                flat.len(),
                self.scalar_count()
            )));
        }
        let mut offset = 0;
        for v in &mut self.values {
            let n = v.len();
            v.data_mut()
                .copy_from_slice(&flat.data()[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Same-shaped zero gradients for every parameter.
    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.values
            .iter()
            .map(|v| Tensor::zeros(v.shape()))
            .collect()
    }

    /// One bias-corrected Adam update.
    pub fn adam_step(&mut self, grads: &[Tensor], cfg: &AdamConfig) -> Result<()> {
        if !(cfg.lr > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate {} must be > 0",
                cfg.lr
            )));
        }
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if grads.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.values.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != self.values[i].shape() {
                return Err(Error::Shape(format!(
                    "gradient of {} is {:?}, parameter is {:?}",
                    self.names[i],
                    g.shape(),
                    self.values[i].shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", self.names[i])));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let p = self.values[i].data_mut();
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

/// Uniform on `±sqrt(6 / (fan_in + fan_out))` for a `[fan_in, fan_out]` matrix.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::matrix(rows, cols, data).expect("finite init")
}
