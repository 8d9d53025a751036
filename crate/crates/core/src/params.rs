//! Named parameter storage.

use std::collections::HashMap;

use numkit::{Gradients, Matrix, NodeId, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    value: Matrix,
}

/// Parameters in insertion order, addressable by id or name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Entry>", into = "Vec<Entry>")]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl From<Vec<Entry>> for ParamStore {
    fn from(entries: Vec<Entry>) -> Self {
        let index = entries.iter().enumerate().map(|(i, e)| (e.name.clone(), i)).collect();
        Self { entries, index }
    }
}

impl From<ParamStore> for Vec<Entry> {
    fn from(s: ParamStore) -> Self {
        s.entries
    }
}

/// Rng for initialising the parameter called `name`.
///
/// Independent of insertion order, so parameters common to two variants
/// start from identical values.
pub fn init_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(name.as_bytes());
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(seed ^ u64::from_le_bytes(word))
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e.name.as_str(), &e.value))
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Matrix) -> Result<()> {
        let cur = &mut self.entries[id.0];
        if cur.value.shape() != value.shape() {
            return Err(ModelError::Shape(format!(
                "parameter `{}` is {:?}, got {:?}",
                cur.name,
                cur.value.shape(),
                value.shape()
            )));
        }
        cur.value = value;
        Ok(())
    }

    /// Copies every parameter into the tape, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let nodes = self
            .entries
            .iter()
            .map(|e| if trainable { tape.leaf(e.value.clone()) } else { tape.constant(e.value.clone()) })
            .collect();
        Bound { nodes }
    }

    /// Same names and shapes as `other`.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }
}

/// Tape handles of a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    nodes: Vec<NodeId>,
}

impl Bound {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }

    /// Gradient per parameter; parameters the seed does not depend on get zeros.
    pub fn gradients(&self, store: &ParamStore, grads: &Gradients) -> Vec<Matrix> {
        store
            .ids()
            .map(|id| {
                grads.get(self.node(id)).cloned().unwrap_or_else(|| {
                    let (r, c) = store.get(id).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn init_rng_depends_on_name_and_seed() {
        let a: f64 = init_rng(1, "layer0.attn.q").gen();
        let b: f64 = init_rng(1, "layer0.attn.q").gen();
        let c: f64 = init_rng(1, "layer0.attn.k").gen();
        let d: f64 = init_rng(2, "layer0.attn.q").gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn store_round_trips_through_json() {
        let mut s = ParamStore::new();
        s.insert("a", Matrix::from_raw(1, 2, vec![0.1, 1.0 / 3.0]));
        s.insert("b", Matrix::identity(2));
        let text = serde_json::to_string(&s).unwrap();
        let back: ParamStore = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.id("b"), Some(ParamId(1)));
    }
}
