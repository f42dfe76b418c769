//! Named parameter arrays and the flat [`ParameterSet`] view used for
//! checkpoints, federated exchange and aggregation.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::tensor::Scalar;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub shape: Vec<usize>,
    /// Buffers (normalization running statistics) are carried and averaged
    /// like weights but are not optimized.
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Param {
            value: vec![T::zero(); n],
            grad: vec![T::zero(); n],
            shape: shape.to_vec(),
            trainable: true,
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let mut p = Self::zeros(shape);
        p.value.iter_mut().for_each(|x| *x = v);
        p
    }

    pub fn buffer(shape: &[usize], v: T) -> Self {
        let mut p = Self::filled(shape, v);
        p.trainable = false;
        p
    }

    /// Truncated normal (±2σ) with `σ = gain / sqrt(fan_in)`.
    pub fn trunc_normal(shape: &[usize], fan_in: usize, gain: f64, rng: &mut Rng) -> Self {
        let std = gain / (fan_in as f64).sqrt();
        let mut p = Self::zeros(shape);
        for v in p.value.iter_mut() {
            let z = loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 2.0 {
                    break z;
                }
            };
            *v = T::lit(z * std);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything that owns parameters exposes them in a stable, named order.
pub trait Module<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>));
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub data: Vec<T>,
}

/// Ordered named arrays of a model (weights, biases, normalization
/// scale/shift and running statistics).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet<T = f32> {
    pub entries: Vec<NamedArray<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn from_module<M: Module<T> + ?Sized>(m: &M) -> Self {
        let mut entries = Vec::new();
        m.visit("", &mut |name, p| {
            entries.push(NamedArray {
                name,
                shape: p.shape.clone(),
                trainable: p.trainable,
                data: p.value.clone(),
            })
        });
        ParameterSet { entries }
    }

    /// Copy values into a module with an identical layout.
    pub fn load_into<M: Module<T> + ?Sized>(&self, m: &mut M) -> Result<()> {
        let mut idx = 0;
        let mut err = None;
        m.visit_mut("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            match self.entries.get(idx) {
                Some(e) if e.name == name && e.shape == p.shape => {
                    p.value.copy_from_slice(&e.data);
                }
                Some(e) => {
                    err = Some(Error::shape(
                        format!("{name} {:?}", p.shape),
                        format!("{} {:?}", e.name, e.shape),
                    ))
                }
                None => err = Some(Error::shape(name.clone(), "missing entry")),
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if idx != self.entries.len() {
            return Err(Error::shape(idx, self.entries.len()));
        }
        Ok(())
    }

    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.data.len()).sum()
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray<T>> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.data.iter().all(|v| v.is_finite()))
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.data.len() == b.data.len())
    }

    /// Euclidean distance over every array (weights and buffers).
    pub fn l2_distance(&self, other: &Self) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data))
            .map(|(&x, &y)| {
                let d = x.as_f64() - y.as_f64();
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|e| NamedArray {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    trainable: e.trainable,
                    data: e.data.iter().map(|v| U::lit(v.as_f64())).collect(),
                })
                .collect(),
        }
    }
}
