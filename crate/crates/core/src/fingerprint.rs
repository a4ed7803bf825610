//! SHA-256 fingerprints of files, frames and models.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dataset::{write_csv, Frame};

pub fn bytes(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

pub fn file(path: impl AsRef<Path>) -> std::io::Result<String> {
    Ok(bytes(&std::fs::read(path)?))
}

/// Fingerprint of a frame's CSV rendering.
pub fn frame(frame: &Frame) -> String {
    let mut buf = Vec::new();
    write_csv(frame, &mut buf).expect("in-memory CSV write");
    bytes(&buf)
}

/// Fingerprint of a dense training set: feature columns then labels, all
/// little-endian.
pub fn training_data(columns: &[Vec<f64>], labels: &[u8]) -> String {
    let mut hasher = Sha256::new();
    for column in columns {
        for x in column {
            hasher.update(x.to_le_bytes());
        }
    }
    hasher.update(labels);
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    #[test]
    fn known_digest() {
        assert_eq!(
            super::bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
