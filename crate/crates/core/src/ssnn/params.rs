//! Flat parameter vector `θ` and its block layout.
//!
//! Blocks are stored row-major, one after the other, in a fixed order:
//! the linear part first (residual structure only), then the state branch,
//! then the output branch, then the optional initial state.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Activation, Branch, Dims, GrSsnnModel, Model, SsnnModel, Structure};
use crate::lti::LtiStateSpace;
use crate::{Error, Result};

pub const LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockName {
    A,
    B,
    C,
    D,
    #[serde(rename = "W_x")]
    Wx,
    #[serde(rename = "W_fx")]
    Wfx,
    #[serde(rename = "W_fu")]
    Wfu,
    #[serde(rename = "b_f")]
    Bf,
    #[serde(rename = "b_x")]
    Bx,
    #[serde(rename = "W_y")]
    Wy,
    #[serde(rename = "W_gx")]
    Wgx,
    #[serde(rename = "W_gu")]
    Wgu,
    #[serde(rename = "b_g")]
    Bg,
    #[serde(rename = "b_y")]
    By,
    #[serde(rename = "x0")]
    X0,
}

impl BlockName {
    pub fn symbol(self) -> &'static str {
        match self {
            BlockName::A => "A",
            BlockName::B => "B",
            BlockName::C => "C",
            BlockName::D => "D",
            BlockName::Wx => "W_x",
            BlockName::Wfx => "W_fx",
            BlockName::Wfu => "W_fu",
            BlockName::Bf => "b_f",
            BlockName::Bx => "b_x",
            BlockName::Wy => "W_y",
            BlockName::Wgx => "W_gx",
            BlockName::Wgu => "W_gu",
            BlockName::Bg => "b_g",
            BlockName::By => "b_y",
            BlockName::X0 => "x0",
        }
    }

    pub fn from_symbol(s: &str) -> Option<BlockName> {
        BlockName::ALL.iter().copied().find(|b| b.symbol() == s)
    }

    pub const ALL: [BlockName; 15] = [
        BlockName::A,
        BlockName::B,
        BlockName::C,
        BlockName::D,
        BlockName::Wx,
        BlockName::Wfx,
        BlockName::Wfu,
        BlockName::Bf,
        BlockName::Bx,
        BlockName::Wy,
        BlockName::Wgx,
        BlockName::Wgu,
        BlockName::Bg,
        BlockName::By,
        BlockName::X0,
    ];

    const LINEAR: [BlockName; 4] = [BlockName::A, BlockName::B, BlockName::C, BlockName::D];

    const NEURAL: [BlockName; 10] = [
        BlockName::Wx,
        BlockName::Wfx,
        BlockName::Wfu,
        BlockName::Bf,
        BlockName::Bx,
        BlockName::Wy,
        BlockName::Wgx,
        BlockName::Wgu,
        BlockName::Bg,
        BlockName::By,
    ];

    fn shape(self, d: Dims) -> (usize, usize) {
        match self {
            BlockName::A => (d.nx, d.nx),
            BlockName::B => (d.nx, d.nu),
            BlockName::C => (d.ny, d.nx),
            BlockName::D => (d.ny, d.nu),
            BlockName::Wx => (d.nx, d.nn),
            BlockName::Wfx | BlockName::Wgx => (d.nn, d.nx),
            BlockName::Wfu | BlockName::Wgu => (d.nn, d.nu),
            BlockName::Bf | BlockName::Bg => (d.nn, 1),
            BlockName::Bx | BlockName::X0 => (d.nx, 1),
            BlockName::Wy => (d.ny, d.nn),
            BlockName::By => (d.ny, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: BlockName,
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

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Index in `θ` of entry `(r, c)`.
    #[inline]
    pub fn index(&self, r: usize, c: usize) -> usize {
        self.offset + r * self.cols + c
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub version: u32,
    pub structure: Structure,
    pub dims: Dims,
    pub activation: Activation,
    pub blocks: Vec<Block>,
}

impl ParamLayout {
    pub fn new(structure: Structure, dims: Dims, activation: Activation, with_x0: bool) -> Self {
        let mut names: Vec<BlockName> = Vec::new();
        if structure == Structure::GrSsnn {
            names.extend(BlockName::LINEAR);
        }
        names.extend(BlockName::NEURAL);
        if with_x0 {
            names.push(BlockName::X0);
        }
        let mut offset = 0;
        let blocks = names
            .into_iter()
            .map(|name| {
                let (rows, cols) = name.shape(dims);
                let b = Block {
                    name,
                    offset,
                    rows,
                    cols,
                };
                offset += rows * cols;
                b
            })
            .collect();
        ParamLayout {
            version: LAYOUT_VERSION,
            structure,
            dims,
            activation,
            blocks,
        }
    }

    pub fn for_model(model: &Model, with_x0: bool) -> Self {
        ParamLayout::new(model.structure(), model.dims(), model.activation(), with_x0)
    }

    pub fn len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block(&self, name: BlockName) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn has_x0(&self) -> bool {
        self.block(BlockName::X0).is_some()
    }

    /// Indices of `θ` belonging to the named blocks, in layout order.
    pub fn indices_of(&self, names: &[BlockName]) -> Vec<usize> {
        self.blocks
            .iter()
            .filter(|b| names.contains(&b.name))
            .flat_map(|b| b.range())
            .collect()
    }

    /// `(block, row, col)` owning index `i` of `θ`.
    pub fn locate(&self, i: usize) -> Option<(BlockName, usize, usize)> {
        self.blocks
            .iter()
            .find(|b| b.range().contains(&i))
            .map(|b| (b.name, (i - b.offset) / b.cols, (i - b.offset) % b.cols))
    }
}

/// `θ` together with the layout that gives it meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub theta: DVector<f64>,
    pub layout: ParamLayout,
}

fn write_block(theta: &mut DVector<f64>, block: &Block, m: &DMatrix<f64>) {
    debug_assert_eq!(m.shape(), (block.rows, block.cols));
    for r in 0..block.rows {
        for c in 0..block.cols {
            theta[block.index(r, c)] = m[(r, c)];
        }
    }
}

fn write_vector(theta: &mut DVector<f64>, block: &Block, v: &DVector<f64>) {
    debug_assert_eq!(v.len(), block.rows);
    for r in 0..block.rows {
        theta[block.index(r, 0)] = v[r];
    }
}

fn read_block(theta: &DVector<f64>, block: &Block) -> DMatrix<f64> {
    DMatrix::from_fn(block.rows, block.cols, |r, c| theta[block.index(r, c)])
}

fn read_vector(theta: &DVector<f64>, block: &Block) -> DVector<f64> {
    DVector::from_fn(block.rows, |r, _| theta[block.index(r, 0)])
}

/// Flatten a model (and optionally its initial state) into `θ`.
pub fn pack(model: &Model, x0: Option<&DVector<f64>>) -> ParamVector {
    let layout = ParamLayout::for_model(model, x0.is_some());
    let mut theta = DVector::zeros(layout.len());
    let f = model.state_branch();
    let g = model.output_branch();
    for block in &layout.blocks {
        match block.name {
            BlockName::A => write_block(&mut theta, block, &model.linear().unwrap().a),
            BlockName::B => write_block(&mut theta, block, &model.linear().unwrap().b),
            BlockName::C => write_block(&mut theta, block, &model.linear().unwrap().c),
            BlockName::D => write_block(&mut theta, block, &model.linear().unwrap().d),
            BlockName::Wx => write_block(&mut theta, block, &f.w_out),
            BlockName::Wfx => write_block(&mut theta, block, &f.w_in_x),
            BlockName::Wfu => write_block(&mut theta, block, &f.w_in_u),
            BlockName::Bf => write_vector(&mut theta, block, &f.b_hidden),
            BlockName::Bx => write_vector(&mut theta, block, &f.b_out),
            BlockName::Wy => write_block(&mut theta, block, &g.w_out),
            BlockName::Wgx => write_block(&mut theta, block, &g.w_in_x),
            BlockName::Wgu => write_block(&mut theta, block, &g.w_in_u),
            BlockName::Bg => write_vector(&mut theta, block, &g.b_hidden),
            BlockName::By => write_vector(&mut theta, block, &g.b_out),
            BlockName::X0 => write_vector(&mut theta, block, x0.unwrap()),
        }
    }
    ParamVector { theta, layout }
}

/// Rebuild the model (and initial state, if the layout has one) from `θ`.
pub fn unpack(theta: &DVector<f64>, layout: &ParamLayout) -> Result<(Model, Option<DVector<f64>>)> {
    if theta.len() != layout.len() {
        return Err(Error::dim(format!(
            "theta has {} entries, layout expects {}",
            theta.len(),
            layout.len()
        )));
    }
    let get = |name: BlockName| layout.block(name).expect("layout holds every block of its structure");
    let branch = |w_out, w_in_x, w_in_u, b_hidden, b_out| Branch {
        w_out: read_block(theta, get(w_out)),
        w_in_x: read_block(theta, get(w_in_x)),
        w_in_u: read_block(theta, get(w_in_u)),
        b_hidden: read_vector(theta, get(b_hidden)),
        b_out: read_vector(theta, get(b_out)),
    };
    let state = branch(BlockName::Wx, BlockName::Wfx, BlockName::Wfu, BlockName::Bf, BlockName::Bx);
    let output = branch(BlockName::Wy, BlockName::Wgx, BlockName::Wgu, BlockName::Bg, BlockName::By);
    let model = match layout.structure {
        Structure::Ssnn => Model::Ssnn(SsnnModel {
            dims: layout.dims,
            activation: layout.activation,
            state,
            output,
        }),
        Structure::GrSsnn => Model::GrSsnn(GrSsnnModel {
            dims: layout.dims,
            activation: layout.activation,
            linear: LtiStateSpace::new(
                read_block(theta, get(BlockName::A)),
                read_block(theta, get(BlockName::B)),
                read_block(theta, get(BlockName::C)),
                read_block(theta, get(BlockName::D)),
            )?,
            state,
            output,
        }),
    };
    let x0 = layout.block(BlockName::X0).map(|b| read_vector(theta, b));
    Ok((model, x0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssnn::testutil::random_model;
    use proptest::prelude::*;

    #[test]
    fn layout_sizes() {
        let dims = Dims::new(3, 1, 1, 15).unwrap();
        let l = ParamLayout::new(Structure::Ssnn, dims, Activation::Tanh, false);
        // 45 + 45 + 15 + 15 + 3 + 15 + 45 + 15 + 15 + 1
        assert_eq!(l.len(), 214);
        let l = ParamLayout::new(Structure::GrSsnn, dims, Activation::Tanh, true);
        assert_eq!(l.len(), 214 + 9 + 3 + 3 + 1 + 3);
        assert_eq!(l.blocks[0].name, BlockName::A);
        assert_eq!(l.blocks.last().unwrap().name, BlockName::X0);
        assert!(l.has_x0());
    }

    #[test]
    fn wrong_length_is_rejected() {
        let dims = Dims::new(2, 1, 1, 3).unwrap();
        let l = ParamLayout::new(Structure::Ssnn, dims, Activation::Tanh, false);
        assert!(unpack(&DVector::zeros(l.len() + 1), &l).is_err());
    }

    #[test]
    fn single_weight_change_moves_single_slot() {
        let dims = Dims::new(2, 2, 2, 3).unwrap();
        let base = random_model(Structure::GrSsnn, dims, Activation::Tanh, 1, 1.0);
        let p0 = pack(&base, None);
        // Perturb each parameter in turn through the model fields and check
        // that exactly the matching slot of θ changes.
        for i in 0..p0.layout.len() {
            let (name, r, c) = p0.layout.locate(i).unwrap();
            let mut m = base.clone();
            if let Model::GrSsnn(g) = &mut m {
                let slot = match name {
                    BlockName::A => &mut g.linear.a[(r, c)],
                    BlockName::B => &mut g.linear.b[(r, c)],
                    BlockName::C => &mut g.linear.c[(r, c)],
                    BlockName::D => &mut g.linear.d[(r, c)],
                    BlockName::Wx => &mut g.state.w_out[(r, c)],
                    BlockName::Wfx => &mut g.state.w_in_x[(r, c)],
                    BlockName::Wfu => &mut g.state.w_in_u[(r, c)],
                    BlockName::Bf => &mut g.state.b_hidden[r],
                    BlockName::Bx => &mut g.state.b_out[r],
                    BlockName::Wy => &mut g.output.w_out[(r, c)],
                    BlockName::Wgx => &mut g.output.w_in_x[(r, c)],
                    BlockName::Wgu => &mut g.output.w_in_u[(r, c)],
                    BlockName::Bg => &mut g.output.b_hidden[r],
                    BlockName::By => &mut g.output.b_out[r],
                    BlockName::X0 => unreachable!(),
                };
                *slot += 1.0;
            }
            let p1 = pack(&m, None);
            let changed: Vec<usize> = (0..p0.theta.len()).filter(|&k| p0.theta[k] != p1.theta[k]).collect();
            assert_eq!(changed, vec![i]);
        }
    }

    #[test]
    fn block_symbols_round_trip() {
        for b in BlockName::ALL {
            assert_eq!(BlockName::from_symbol(b.symbol()), Some(b));
        }
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(seed in any::<u64>(), gr in any::<bool>(), nx in 1usize..4, nn in 1usize..5) {
            let dims = Dims::new(nx, 2, 1, nn).unwrap();
            let structure = if gr { Structure::GrSsnn } else { Structure::Ssnn };
            let m = random_model(structure, dims, Activation::Relu, seed, 2.0);
            let x0 = DVector::from_fn(nx, |i, _| i as f64 - 0.5);
            let p = pack(&m, Some(&x0));
            let (m2, x02) = unpack(&p.theta, &p.layout).unwrap();
            prop_assert_eq!(&m2, &m);
            prop_assert_eq!(x02.unwrap(), x0);
            let p2 = pack(&m2, Some(&p.theta.rows(p.layout.block(BlockName::X0).unwrap().offset, nx).into_owned()));
            prop_assert_eq!(p2.theta, p.theta);
        }
    }
}
