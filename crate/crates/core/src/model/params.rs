//! Named-parameter serialization shared by checkpoints and weight archives.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One parameter tensor: shape plus little-endian f32 bytes in base64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

impl ParamEntry {
    pub fn from_values(name: &str, shape: &[usize], values: &[f32]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: BASE64.encode(bytes),
        }
    }

    pub fn values(&self) -> Result<Vec<f32>> {
        let bytes = BASE64.decode(&self.data).map_err(|e| {
            Error::InvalidArgument(format!("param {}: bad base64: {e}", self.name))
        })?;
        if bytes.len() % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "param {}: byte length {} not a multiple of 4",
                self.name,
                bytes.len()
            )));
        }
        let expected: usize = self.shape.iter().product();
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "param {}: shape {:?} wants {} values, data holds {}",
                self.name,
                self.shape,
                expected,
                values.len()
            )));
        }
        Ok(values)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_bits() {
        let values = [0.0f32, -1.5, f32::MIN_POSITIVE, 3.25e7];
        let entry = ParamEntry::from_values("w", &[2, 2], &values);
        let back = entry.values().unwrap();
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn shape_mismatch_detected() {
        let entry = ParamEntry::from_values("w", &[3], &[1.0, 2.0]);
        assert!(entry.values().is_err());
    }
}
