//! Self-describing JSON checkpoint. Every tensor is stored row-major as
//! little-endian 64-bit floats, base64-encoded.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::oracle::SegLabelConvention;
use crate::trainer::Variant;

pub const FORMAT_NAME: &str = "segsum-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Labeling convention the segmentation head was trained with.
    pub seg_convention: SegLabelConvention,
    pub variant: Variant,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    config: ModelConfig,
    seg_convention: SegLabelConvention,
    variant: Variant,
    tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let mut tensors = Vec::new();
        self.params.visit(&mut |name, shape, data| {
            let mut bytes = Vec::with_capacity(data.len() * 8);
            for v in data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            tensors.push(TensorRecord {
                name: name.to_string(),
                shape: shape.to_vec(),
                data: STANDARD.encode(bytes),
            });
        });
        let c = Container {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            config: self.params.config.clone(),
            seg_convention: self.seg_convention,
            variant: self.variant,
            tensors,
        };
        serde_json::to_string_pretty(&c).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Container =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if c.format != FORMAT_NAME {
            return Err(Error::Checkpoint(format!("unknown format {:?}", c.format)));
        }
        if c.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                c.version
            )));
        }
        c.config.validate()?;
        let mut params = ModelParams::zeros(&c.config);
        let mut expected = Vec::new();
        params.visit(&mut |name, shape, _| expected.push((name.to_string(), shape.to_vec())));
        if expected.len() != c.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                c.tensors.len()
            )));
        }
        let mut decoded = Vec::with_capacity(c.tensors.len());
        for (t, (name, shape)) in c.tensors.iter().zip(&expected) {
            if &t.name != name || &t.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, name, shape
                )));
            }
            let bytes = STANDARD
                .decode(&t.data)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            let count = shape.iter().product::<usize>();
            if bytes.len() != count * 8 {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: wrong byte length"
                )));
            }
            decoded.push(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect::<Vec<f64>>(),
            );
        }
        let mut it = decoded.into_iter();
        params.visit_mut(&mut |_, dst| dst.copy_from_slice(&it.next().unwrap()));
        if !params.all_finite() {
            return Err(Error::Checkpoint("non-finite weights".into()));
        }
        Ok(Checkpoint {
            params,
            seg_convention: c.seg_convention,
            variant: c.variant,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
