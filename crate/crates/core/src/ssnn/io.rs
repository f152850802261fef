use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::params::{pack, unpack, BlockName, ParamLayout, LAYOUT_VERSION};
use super::{Activation, Dims, Model, Structure};
use crate::signal::Normalization;
use crate::{Error, Result};

const FORMAT: &str = "ssnn-model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixBlock {
    pub name: BlockName,
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

/// JSON form of a trained or initialized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub layout_version: u32,
    pub structure: Structure,
    pub dims: Dims,
    pub activation: Activation,
    pub blocks: Vec<MatrixBlock>,
    pub x0: Option<Vec<f64>>,
    /// Signal scaling the model was trained under, if any.
    pub normalization: Option<Normalization>,
}

impl ModelFile {
    pub fn new(model: &Model, x0: Option<&DVector<f64>>, normalization: Option<Normalization>) -> Self {
        let p = pack(model, None);
        let blocks = p
            .layout
            .blocks
            .iter()
            .map(|b| MatrixBlock {
                name: b.name,
                rows: b.rows,
                cols: b.cols,
                data: p.theta.as_slice()[b.range()].to_vec(),
            })
            .collect();
        ModelFile {
            format: FORMAT.to_string(),
            layout_version: LAYOUT_VERSION,
            structure: model.structure(),
            dims: model.dims(),
            activation: model.activation(),
            blocks,
            x0: x0.map(|v| v.iter().copied().collect()),
            normalization,
        }
    }

    pub fn to_model(&self) -> Result<(Model, Option<DVector<f64>>)> {
        if self.format != FORMAT {
            return Err(Error::arg(format!("unknown model format {:?}", self.format)));
        }
        if self.layout_version != LAYOUT_VERSION {
            return Err(Error::arg(format!(
                "model file layout version {} is not supported (expected {LAYOUT_VERSION})",
                self.layout_version
            )));
        }
        self.dims.validate()?;
        let layout = ParamLayout::new(self.structure, self.dims, self.activation, false);
        if layout.blocks.len() != self.blocks.len() {
            return Err(Error::dim(format!(
                "expected {} blocks, file has {}",
                layout.blocks.len(),
                self.blocks.len()
            )));
        }
        let mut theta = Vec::with_capacity(layout.len());
        for (want, got) in layout.blocks.iter().zip(&self.blocks) {
            if want.name != got.name || want.rows != got.rows || want.cols != got.cols || got.data.len() != want.len() {
                return Err(Error::dim(format!(
                    "block {} should be {}x{}",
                    want.name.symbol(),
                    want.rows,
                    want.cols
                )));
            }
            theta.extend_from_slice(&got.data);
        }
        let (model, _) = unpack(&DVector::from_vec(theta), &layout)?;
        let x0 = match &self.x0 {
            Some(v) if v.len() != self.dims.nx => return Err(Error::dim("x0 length differs from n_x")),
            Some(v) => Some(DVector::from_column_slice(v)),
            None => None,
        };
        Ok((model, x0))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
