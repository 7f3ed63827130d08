//! Model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `FAGCKPT1` |
//! | 4     | u32 model kind: 0 linear-softmax, 1 mlp-1hidden |
//! | 8 x 3 | u64 input_dim, hidden_dim, num_classes |
//! | 8     | u64 parameter count d |
//! | 8 x d | f64 parameters in layer order, each layer `out x (in + 1)` row-major with the bias last |

use std::path::Path;

use fedagg_core::{F64Params, ModelKind, ModelSpec};

use crate::error::CliError;

const MAGIC: &[u8; 8] = b"FAGCKPT1";

pub fn encode_checkpoint(spec: &ModelSpec, params: &F64Params) -> Result<Vec<u8>, CliError> {
    let kind: u32 = match spec.kind {
        ModelKind::LinearSoftmax => 0,
        ModelKind::Mlp1Hidden => 1,
        ModelKind::ScalarQuadratic => return Err(CliError::Config("test-only model cannot be checkpointed".into())),
    };
    if params.len() != spec.param_count() {
        return Err(CliError::Config("parameter count does not match model".into()));
    }
    let mut out = Vec::with_capacity(44 + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&kind.to_le_bytes());
    for v in [spec.input_dim, spec.hidden_dim, spec.num_classes, params.len()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for &p in params.iter() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelSpec, F64Params), CliError> {
    let bad = |m: &str| CliError::Io(format!("checkpoint: {m}"));
    if bytes.len() < 44 || &bytes[..8] != MAGIC {
        return Err(bad("missing header"));
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes")) as usize;
    let kind = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let (input_dim, hidden_dim, num_classes, d) = (u64_at(12), u64_at(20), u64_at(28), u64_at(36));
    let spec = match kind {
        0 => ModelSpec::linear(input_dim, num_classes),
        1 => ModelSpec::mlp(input_dim, hidden_dim, num_classes),
        _ => return Err(bad("unknown model kind")),
    };
    if spec.param_count() != d || bytes.len() != 44 + 8 * d {
        return Err(bad("length does not match header"));
    }
    let params = bytes[44..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect::<Vec<_>>();
    Ok((spec, params.into()))
}

pub fn write_checkpoint(path: &Path, spec: &ModelSpec, params: &F64Params) -> Result<(), CliError> {
    std::fs::write(path, encode_checkpoint(spec, params)?).map_err(|e| CliError::io(path.display(), e))
}

pub fn read_checkpoint(path: &Path) -> Result<(ModelSpec, F64Params), CliError> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| CliError::io(path.display(), e))?)
}
