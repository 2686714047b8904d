//! Flat parameter storage with named, fixed-shape blocks.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockId(pub usize);

/// Role of a block, used to pick its prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Weight,
    Bias,
    ObsNoise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered block table. Offsets are assigned in insertion order and never
/// change afterwards.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    blocks: Vec<Block>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, kind: BlockKind, rows: usize, cols: usize) -> BlockId {
        let id = BlockId(self.blocks.len());
        self.blocks.push(Block { name: name.into(), kind, offset: self.total, rows, cols });
        self.total += rows * cols;
        id
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id.0]
    }

    pub fn find(&self, name: &str) -> Option<BlockId> {
        self.blocks.iter().position(|b| b.name == name).map(BlockId)
    }

    /// Block that owns flat index `i`.
    pub fn owner(&self, i: usize) -> Option<&Block> {
        self.blocks.iter().find(|b| b.range().contains(&i))
    }
}

/// Parameter values plus a gradient buffer of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layout: ParamLayout,
    values: Vec<f64>,
    grads: Vec<f64>,
}

impl ParamSet {
    pub fn zeros(layout: ParamLayout) -> Self {
        let n = layout.len();
        Self { layout, values: vec![0.0; n], grads: vec![0.0; n] }
    }

    pub fn from_values(layout: ParamLayout, values: Vec<f64>) -> crate::Result<Self> {
        if values.len() != layout.len() {
            return Err(crate::Error::Dimension {
                what: "parameter vector",
                expected: layout.len(),
                found: values.len(),
            });
        }
        let n = values.len();
        Ok(Self { layout, values, grads: vec![0.0; n] })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn block(&self, id: BlockId) -> &[f64] {
        &self.values[self.layout.block(id).range()]
    }

    pub fn block_mut(&mut self, id: BlockId) -> &mut [f64] {
        let r = self.layout.block(id).range();
        &mut self.values[r]
    }

    pub fn block_grad(&self, id: BlockId) -> &[f64] {
        &self.grads[self.layout.block(id).range()]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}
