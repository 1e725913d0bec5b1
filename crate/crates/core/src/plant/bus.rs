//! UART line model: 8 data bits, no parity, one stop bit, idle high.

use serde::{Deserialize, Serialize};

use crate::ec::Tick;
use crate::error::PlantError;

pub const NOMINAL_BAUD: u32 = 57_600;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusConfig {
    pub bus_id: String,
    pub baud: u32,
    pub data_bits: u8,
    pub stop_bits: u8,
}

impl BusConfig {
    pub fn new(bus_id: impl Into<String>, baud: u32) -> Result<Self, PlantError> {
        if baud == 0 {
            return Err(PlantError::InvalidConfig("baud must be positive".into()));
        }
        Ok(BusConfig { bus_id: bus_id.into(), baud, data_bits: 8, stop_bits: 1 })
    }

    /// `round(tick_rate / baud)`, at least 1.
    pub fn bit_period_ticks(&self, tick_rate: u64) -> u64 {
        let b = self.baud as u64;
        ((tick_rate + b / 2) / b).max(1)
    }
}

/// Line levels for `bytes`: per byte a start bit, eight data bits LSB
/// first, and a stop bit.
pub fn frame_bits(bytes: &[u8]) -> Vec<bool> {
    let mut bits = Vec::with_capacity(bytes.len() * 10);
    for &b in bytes {
        bits.push(false);
        bits.extend((0..8).map(|i| (b >> i) & 1 == 1));
        bits.push(true);
    }
    bits
}

/// One message in flight on a bus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transmission {
    pub start: Tick,
    pub bit_period: u64,
    pub bytes: Vec<u8>,
    /// `(tick, new level)` for every level change.
    pub edges: Vec<(Tick, bool)>,
    /// First tick after the last stop bit.
    pub end: Tick,
}

impl Transmission {
    pub fn new(start: Tick, bit_period: u64, bytes: Vec<u8>) -> Self {
        let bits = frame_bits(&bytes);
        let mut edges = Vec::new();
        let mut level = true;
        for (i, &b) in bits.iter().enumerate() {
            if b != level {
                edges.push((start + i as u64 * bit_period, b));
                level = b;
            }
        }
        let end = start + bits.len() as u64 * bit_period;
        Transmission { start, bit_period, bytes, edges, end }
    }

    /// Line level at `t` (idle high outside the transmission).
    pub fn level_at(&self, t: Tick) -> bool {
        if t < self.start || t >= self.end {
            return true;
        }
        let i = self.edges.partition_point(|(et, _)| *et <= t);
        if i == 0 {
            true
        } else {
            self.edges[i - 1].1
        }
    }
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Bit period implied by a run of edge ticks: the greatest common divisor of
/// the gaps between consecutive edges. Runs of equal bits make individual
/// gaps whole multiples of the period, so the divisor recovers the period
/// where the most frequent gap would not.
pub fn measure_bit_period(bus_id: &str, edges: &[Tick]) -> Result<u64, PlantError> {
    if edges.len() < 2 {
        return Err(PlantError::InsufficientEdges(bus_id.to_string()));
    }
    Ok(edges.windows(2).map(|w| w[1] - w[0]).fold(0, gcd))
}

/// Whether a measured period is within `tol * expected` of `expected`.
pub fn period_matches(measured: u64, expected: u64, tol: f64) -> bool {
    (measured as f64 - expected as f64).abs() <= tol * expected as f64
}

/// Whether a partial measurement is still consistent with `expected`: some
/// positive multiple of `expected` lies within tolerance of it.
pub fn period_consistent(measured: u64, expected: u64, tol: f64) -> bool {
    if measured == 0 {
        return true;
    }
    let k = ((measured as f64 / expected as f64).round() as u64).max(1);
    (measured as f64 - (k * expected) as f64).abs() <= tol * expected as f64
}
