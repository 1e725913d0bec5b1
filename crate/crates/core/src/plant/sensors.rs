//! Sensor models and their frame formats.
//!
//! GPS frames are ASCII sentences `$GPGGA,<seq>,<lat>,<lon>,<alt>*HH\r\n`
//! with an XOR checksum over the characters between `$` and `*`. Barometer
//! frames are eight bytes `[0xB5, seq, p2, p1, p0, t1, t0, sum]` where `sum`
//! is the byte sum of the first seven.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bus::BusConfig;
use crate::ec::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Gps,
    Baro,
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensorKind::Gps => "gps",
            SensorKind::Baro => "baro",
        })
    }
}

impl FromStr for SensorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gps" => Ok(SensorKind::Gps),
            "baro" => Ok(SensorKind::Baro),
            other => Err(format!("unknown sensor kind {other}")),
        }
    }
}

pub const BARO_SYNC: u8 = 0xB5;
pub const BARO_LEN: usize = 8;
pub const PRESSURE_RANGE: std::ops::RangeInclusive<i64> = 30_000..=110_000;
pub const TEMP_RANGE: std::ops::RangeInclusive<i64> = -4_000..=8_500;
pub const LAT_RANGE: std::ops::RangeInclusive<i64> = -900_000..=900_000;
pub const LON_RANGE: std::ops::RangeInclusive<i64> = -1_800_000..=1_800_000;
pub const ALT_RANGE: std::ops::RangeInclusive<i64> = -5_000..=200_000;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn jitter(h: u64, span: i64) -> i64 {
    (h % (2 * span as u64 + 1)) as i64 - span
}

pub fn nmea_checksum(body: &[u8]) -> u8 {
    body.iter().fold(0, |a, b| a ^ b)
}

/// Frame bytes for `kind` at emission index `seq`. Pure in its arguments.
pub fn generate_frame(kind: SensorKind, tick: Tick, seed: u64, seq: u64) -> Vec<u8> {
    let salt = match kind {
        SensorKind::Gps => 0x6770_7300,
        SensorKind::Baro => 0x6261_726f,
    };
    let h = splitmix64(seed ^ salt ^ splitmix64(tick));
    match kind {
        SensorKind::Gps => {
            let lat = 473_977 + jitter(h, 40);
            let lon = 85_456 + jitter(h >> 16, 40);
            let alt = 4_880 + jitter(h >> 32, 25);
            let body = format!("GPGGA,{},{},{},{}", seq % 1000, lat, lon, alt);
            format!("${}*{:02X}\r\n", body, nmea_checksum(body.as_bytes())).into_bytes()
        }
        SensorKind::Baro => {
            let p = (101_325 + jitter(h, 200)) as u32;
            let t = (2_000 + jitter(h >> 24, 100)) as i16 as u16;
            let mut f = vec![
                BARO_SYNC,
                (seq & 0xFF) as u8,
                (p >> 16) as u8,
                (p >> 8) as u8,
                p as u8,
                (t >> 8) as u8,
                t as u8,
            ];
            f.push(f.iter().fold(0u8, |a, b| a.wrapping_add(*b)));
            f
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFault {
    Checksum,
    Range,
    Format,
}

impl fmt::Display for FrameFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameFault::Checksum => "checksum",
            FrameFault::Range => "range",
            FrameFault::Format => "format",
        })
    }
}

/// Decoded physical quantities of one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reading {
    Gps { seq: u64, lat_e4: i64, lon_e4: i64, alt_dm: i64 },
    Baro { seq: u64, pressure_pa: i64, temp_centi: i64 },
}

/// Decodes a frame. Checksum and range checks can be switched off; format
/// errors are always reported.
pub fn parse_frame(kind: SensorKind, bytes: &[u8], check_sum: bool, check_range: bool) -> Result<Reading, FrameFault> {
    match kind {
        SensorKind::Gps => parse_gps(bytes, check_sum, check_range),
        SensorKind::Baro => parse_baro(bytes, check_sum, check_range),
    }
}

fn parse_gps(bytes: &[u8], check_sum: bool, check_range: bool) -> Result<Reading, FrameFault> {
    let s = std::str::from_utf8(bytes).map_err(|_| FrameFault::Format)?;
    let s = s.strip_prefix('$').and_then(|s| s.strip_suffix("\r\n")).ok_or(FrameFault::Format)?;
    let (body, sum) = s.split_once('*').ok_or(FrameFault::Format)?;
    let sum = u8::from_str_radix(sum, 16).map_err(|_| FrameFault::Format)?;
    if check_sum && nmea_checksum(body.as_bytes()) != sum {
        return Err(FrameFault::Checksum);
    }
    let f: Vec<&str> = body.split(',').collect();
    if f.len() != 5 || f[0] != "GPGGA" {
        return Err(FrameFault::Format);
    }
    let num = |s: &str| s.parse::<i64>().map_err(|_| FrameFault::Format);
    let (seq, lat, lon, alt) = (num(f[1])?, num(f[2])?, num(f[3])?, num(f[4])?);
    if check_range && !(LAT_RANGE.contains(&lat) && LON_RANGE.contains(&lon) && ALT_RANGE.contains(&alt)) {
        return Err(FrameFault::Range);
    }
    Ok(Reading::Gps { seq: seq as u64, lat_e4: lat, lon_e4: lon, alt_dm: alt })
}

fn parse_baro(b: &[u8], check_sum: bool, check_range: bool) -> Result<Reading, FrameFault> {
    if b.len() != BARO_LEN || b[0] != BARO_SYNC {
        return Err(FrameFault::Format);
    }
    if check_sum && b[..7].iter().fold(0u8, |a, x| a.wrapping_add(*x)) != b[7] {
        return Err(FrameFault::Checksum);
    }
    let p = (b[2] as i64) << 16 | (b[3] as i64) << 8 | b[4] as i64;
    let t = i16::from_be_bytes([b[5], b[6]]) as i64;
    if check_range && !(PRESSURE_RANGE.contains(&p) && TEMP_RANGE.contains(&t)) {
        return Err(FrameFault::Range);
    }
    Ok(Reading::Baro { seq: b[1] as u64, pressure_pa: p, temp_centi: t })
}

/// Frame-level fault injected into a sensor's output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameInjection {
    /// Repeat this payload instead of fresh frames; `None` freezes the next
    /// generated frame.
    Stuck(Option<Vec<u8>>),
    /// XOR the byte at `offset` with `mask` in every frame.
    Corrupt { offset: usize, mask: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorModel {
    pub id: String,
    pub kind: SensorKind,
    pub emit_period: Tick,
    pub offset: Tick,
    pub config: BusConfig,
    pub nominal: BusConfig,
    pub injection: Option<(FrameInjection, bool)>,
}

impl SensorModel {
    pub fn new(id: impl Into<String>, kind: SensorKind, emit_period: Tick, offset: Tick, config: BusConfig) -> Self {
        SensorModel {
            id: id.into(),
            kind,
            emit_period,
            offset,
            nominal: config.clone(),
            config,
            injection: None,
        }
    }

    /// Emission index if the sensor is due at `tick`.
    pub fn due(&self, tick: Tick) -> Option<u64> {
        (tick >= self.offset && (tick - self.offset).is_multiple_of(self.emit_period))
            .then(|| (tick - self.offset) / self.emit_period)
    }

    /// The bytes this sensor puts on the wire at `tick`, with any injection
    /// applied.
    pub fn emit(&mut self, tick: Tick, seed: u64, seq: u64) -> Vec<u8> {
        let fresh = generate_frame(self.kind, tick, seed, seq);
        match &mut self.injection {
            None => fresh,
            Some((FrameInjection::Stuck(payload), _)) => payload.get_or_insert(fresh).clone(),
            Some((FrameInjection::Corrupt { offset, mask }, _)) => {
                let mut f = fresh;
                let i = *offset % f.len();
                f[i] ^= *mask;
                f
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_frames_parse() {
        for seq in 0..50 {
            let t = 1000 + seq * 20_000;
            let g = generate_frame(SensorKind::Gps, t, 7, seq);
            assert!(matches!(parse_frame(SensorKind::Gps, &g, true, true), Ok(Reading::Gps { .. })), "{:?}", String::from_utf8_lossy(&g));
            let b = generate_frame(SensorKind::Baro, t, 7, seq);
            assert_eq!(b.len(), BARO_LEN);
            assert!(matches!(parse_frame(SensorKind::Baro, &b, true, true), Ok(Reading::Baro { .. })));
        }
    }

    #[test]
    fn checksum_and_range_faults() {
        let mut g = generate_frame(SensorKind::Gps, 5, 1, 3);
        g[8] ^= 0x01;
        assert_eq!(parse_frame(SensorKind::Gps, &g, true, true), Err(FrameFault::Checksum));
        let mut b = vec![BARO_SYNC, 0, 0, 0x10, 0, 0, 0];
        b.push(b.iter().fold(0u8, |a, x| a.wrapping_add(*x)));
        assert_eq!(parse_frame(SensorKind::Baro, &b, true, true), Err(FrameFault::Range));
        assert!(parse_frame(SensorKind::Baro, &b, true, false).is_ok());
    }

    #[test]
    fn emission_schedule() {
        let s = SensorModel::new("gps", SensorKind::Gps, 100, 0, BusConfig::new("gps", 57_600).unwrap());
        assert_eq!(s.due(200), Some(2));
        assert_eq!(s.due(250), None);
    }

    #[test]
    fn stuck_repeats_first_frame() {
        let mut s = SensorModel::new("baro", SensorKind::Baro, 10, 0, BusConfig::new("baro", 57_600).unwrap());
        s.injection = Some((FrameInjection::Stuck(None), true));
        let a = s.emit(0, 1, 0);
        let b = s.emit(10, 1, 1);
        assert_eq!(a, b);
    }
}
