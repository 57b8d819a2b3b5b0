use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Index of a trainable parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable matrices plus non-trainable running-statistic buffers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    #[serde(with = "super::serde_mats")]
    values: Vec<Array2<f64>>,
    buffers: Vec<Buffer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buffer {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, width: usize) -> usize {
        self.buffers.push(Buffer { name: name.into(), mean: vec![0.0; width], var: vec![1.0; width] });
        self.buffers.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn buffer(&self, idx: usize) -> &Buffer {
        &self.buffers[idx]
    }

    pub fn buffers(&self) -> &[Buffer] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Buffer] {
        &mut self.buffers
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    /// `running ← momentum·running + (1−momentum)·batch`.
    pub fn update_running(&mut self, stats: &[super::tape::BatchStats], momentum: f64) {
        for st in stats {
            let buf = &mut self.buffers[st.buffer];
            for (r, b) in buf.mean.iter_mut().zip(st.mean.iter()) {
                *r = momentum * *r + (1.0 - momentum) * b;
            }
            for (r, b) in buf.var.iter_mut().zip(st.var_unbiased.iter()) {
                *r = momentum * *r + (1.0 - momentum) * b;
            }
        }
    }
}
