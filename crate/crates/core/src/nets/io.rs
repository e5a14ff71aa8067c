//! Self-describing parameter container.
//!
//! A container stores the network spec, a format version, and every array by name
//! with its shape. Values are written as their `f64` representation, which round
//! trips `f32` and `f64` exactly, so save -> load -> save reproduces the same bytes.

use serde::{Deserialize, Serialize};

use super::{MlpSpec, NetError, ParamSet};
use crate::Scalar;

pub const PARAM_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamContainer {
    pub format_version: u32,
    pub spec: MlpSpec,
    pub tensors: Vec<NamedTensor>,
}

impl ParamContainer {
    pub fn pack<F: Scalar>(spec: &MlpSpec, params: &ParamSet<F>) -> Self {
        let tensors = params
            .named()
            .into_iter()
            .map(|(name, shape, data)| NamedTensor { name, shape, data: data.iter().map(|v| v.as_f64()).collect() })
            .collect();
        Self { format_version: PARAM_FORMAT_VERSION, spec: spec.clone(), tensors }
    }

    /// Rebuilds the parameter set, checking version, names, and shapes against the spec.
    pub fn unpack<F: Scalar>(&self) -> Result<ParamSet<F>, NetError> {
        if self.format_version != PARAM_FORMAT_VERSION {
            return Err(NetError::FormatVersion { found: self.format_version, expected: PARAM_FORMAT_VERSION });
        }
        self.spec.validate()?;
        let mut params: ParamSet<F> = self.spec.init();
        let expected: Vec<(String, Vec<usize>)> =
            params.named().into_iter().map(|(n, s, _)| (n, s)).collect();
        if expected.len() != self.tensors.len() {
            return Err(NetError::Corrupt(format!("expected {} tensors, found {}", expected.len(), self.tensors.len())));
        }
        for ((name, shape), t) in expected.iter().zip(&self.tensors) {
            let n: usize = t.shape.iter().product();
            if *name != t.name || *shape != t.shape || n != t.data.len() {
                return Err(NetError::Corrupt(format!("tensor {} does not match the spec", t.name)));
            }
        }
        for (slot, t) in params.slices_mut().into_iter().zip(&self.tensors) {
            for (dst, &src) in slot.iter_mut().zip(&t.data) {
                *dst = F::lit(src);
            }
        }
        if !params.is_finite() {
            return Err(NetError::Corrupt("non-finite parameter".into()));
        }
        Ok(params)
    }
}
