use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::PlantError;

/// 64-bit FNV-1a over the little-endian bytes of `words`.
pub fn digest(words: &[u32]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for w in words {
        for b in w.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirmwareImage {
    pub base_address: u32,
    words: Vec<u32>,
    digest: u64,
}

impl FirmwareImage {
    pub fn new(base_address: u32, words: Vec<u32>) -> Self {
        let digest = digest(&words);
        FirmwareImage { base_address, words, digest }
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn end_address(&self) -> u32 {
        self.base_address + 4 * self.words.len() as u32
    }

    /// Parses a flat little-endian binary.
    pub fn from_bytes(base_address: u32, bytes: &[u8]) -> Result<Self, PlantError> {
        if !bytes.len().is_multiple_of(4) {
            return Err(PlantError::Image(format!("length {} is not a multiple of 4", bytes.len())));
        }
        if bytes.is_empty() {
            return Err(PlantError::Image("empty image".into()));
        }
        let words = bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(FirmwareImage::new(base_address, words))
    }

    pub fn load(base_address: u32, path: &Path) -> Result<Self, PlantError> {
        let bytes = std::fs::read(path).map_err(|e| PlantError::Image(format!("{}: {e}", path.display())))?;
        Self::from_bytes(base_address, &bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }
}

/// Result of comparing a live image against the reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirmwareCheck {
    pub ok: bool,
    pub live_digest: u64,
    pub reference_digest: u64,
    /// Address of the first differing word, if any.
    pub first_difference: Option<u32>,
}

/// Compares digests and then every word, so a digest collision cannot hide
/// a modification.
pub fn compare(live_base: u32, live: &[u32], reference: &FirmwareImage) -> FirmwareCheck {
    let live_digest = digest(live);
    let first_difference = if live_base != reference.base_address {
        Some(live_base)
    } else if live.len() != reference.words().len() {
        Some(live_base + 4 * live.len().min(reference.words().len()) as u32)
    } else {
        live.iter()
            .zip(reference.words())
            .position(|(a, b)| a != b)
            .map(|i| live_base + 4 * i as u32)
    };
    FirmwareCheck {
        ok: first_difference.is_none() && live_digest == reference.digest(),
        live_digest,
        reference_digest: reference.digest(),
        first_difference,
    }
}
