//! Scenario files: TOML documents describing one deterministic run.
//!
//! ```toml
//! name = "baud_attack"          # required
//! description = "..."           # optional
//! horizon = 120000              # required, ticks
//! seed = 7                      # optional, default 1
//!
//! [plant]                       # optional
//! insn_period = 100
//! firmware = "fcs.bin"          # relative to the scenario file; default: built-in image
//! reference_cfg = "fcs.cfg"     # default: built-in table
//!
//! [[plant.sensors]]             # optional; default gps + baro
//! id = "gps"
//! kind = "gps"
//! baud = 57600
//! emit_period = 20000
//! offset = 1000
//!
//! [hrim]
//! baud_tolerance = 0.05
//!
//! [i2m]
//! r_max = 5
//! retries = 3
//! checksum = true
//! range = true
//! repetition = true
//! t_d = { gps = 60000 }         # default 3 x emit period
//!
//! [eim]
//! failsafe_address = "0x08006168"
//! recheck_ticks = [50000]
//! continuous = false
//!
//! [[attacks]]
//! kind = "baud_change"
//! target = "gps"
//! at_tick = 5000
//! recoverable = true
//! params = { baud = 115200 }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::attack::{AttackSpec, ObservationModel};
use crate::ec::Tick;
use crate::eim::{EimConfig, ReferenceControlFlow};
use crate::error::ScenarioError;
use crate::hrim::{HrimConfig, DEFAULT_TOLERANCE};
use crate::i2m::{Checks, I2mConfig, I2mSensorConfig, DEFAULT_RETRIES, DEFAULT_R_MAX};
use crate::plant::bus::BusConfig;
use crate::plant::firmware::FirmwareImage;
use crate::plant::isa::CODE_BASE;
use crate::plant::program::{parse_u32, ReferenceCfg, FAILSAFE, MAIN};
use crate::plant::sensors::SensorKind;
use crate::plant::{builtin_firmware, default_sensors, PlantConfig, SensorSpec, TICK_RATE};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    name: String,
    #[serde(default)]
    description: String,
    horizon: Tick,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default)]
    plant: PlantSection,
    #[serde(default)]
    hrim: HrimSection,
    #[serde(default)]
    i2m: I2mSection,
    #[serde(default)]
    eim: EimSection,
    #[serde(default)]
    attacks: Vec<AttackSpec>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlantSection {
    insn_period: Option<Tick>,
    firmware: Option<PathBuf>,
    reference_cfg: Option<PathBuf>,
    sensors: Option<Vec<SensorEntry>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensorEntry {
    id: String,
    kind: SensorKind,
    baud: u32,
    emit_period: Tick,
    #[serde(default)]
    offset: Tick,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct HrimSection {
    baud_tolerance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct I2mSection {
    r_max: Option<u32>,
    retries: Option<u32>,
    checksum: Option<bool>,
    range: Option<bool>,
    repetition: Option<bool>,
    #[serde(default)]
    t_d: BTreeMap<String, Tick>,
}

/// Addresses may be written as integers or as `"0x..."` strings.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Address {
    Int(u32),
    Text(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EimSection {
    failsafe_address: Option<Address>,
    #[serde(default)]
    recheck_ticks: Vec<Tick>,
    #[serde(default)]
    continuous: bool,
}

/// A validated scenario with every monitor configuration resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub horizon: Tick,
    pub plant: PlantConfig,
    pub hrim: HrimConfig,
    pub i2m: I2mConfig,
    pub eim: EimConfig,
    pub attacks: Vec<AttackSpec>,
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), message: message.into() }
}

/// 1-based line and column of byte `offset` in `text`.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, col)
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text, path.parent())
    }

    /// Parses scenario text; relative file references resolve against
    /// `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self, ScenarioError> {
        let file: File = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            ScenarioError::Parse { line, column, message: e.message().to_string() }
        })?;
        Self::build(file, base_dir)
    }

    fn build(f: File, base: Option<&Path>) -> Result<Self, ScenarioError> {
        if f.horizon == 0 {
            return Err(invalid("horizon", "must be positive"));
        }
        let sensors: Vec<SensorSpec> = match f.plant.sensors {
            None => default_sensors(),
            Some(list) => list
                .into_iter()
                .map(|s| SensorSpec { id: s.id, kind: s.kind, baud: s.baud, emit_period: s.emit_period, offset: s.offset })
                .collect(),
        };
        let mut ids = BTreeSet::new();
        for (i, s) in sensors.iter().enumerate() {
            if !ids.insert(s.id.clone()) {
                return Err(invalid(format!("plant.sensors[{i}].id"), format!("duplicate sensor {}", s.id)));
            }
            if s.emit_period == 0 {
                return Err(invalid(format!("plant.sensors[{i}].emit_period"), "must be positive"));
            }
            BusConfig::new(s.id.clone(), s.baud).map_err(|e| invalid(format!("plant.sensors[{i}].baud"), e.to_string()))?;
        }
        let firmware = match &f.plant.firmware {
            None => builtin_firmware(),
            Some(p) => FirmwareImage::load(CODE_BASE, &resolve(base, p)).map_err(|e| invalid("plant.firmware", e.to_string()))?,
        };
        let table = match &f.plant.reference_cfg {
            None => ReferenceCfg::builtin(),
            Some(p) => {
                let path = resolve(base, p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
                ReferenceCfg::parse(&text).map_err(|m| invalid("plant.reference_cfg", m))?
            }
        };
        let insn_period = f.plant.insn_period.unwrap_or(100);
        if insn_period == 0 {
            return Err(invalid("plant.insn_period", "must be positive"));
        }
        let plant = PlantConfig {
            tick_rate: TICK_RATE,
            seed: f.seed,
            insn_period,
            sensors: sensors.clone(),
            firmware: firmware.clone(),
            entry: MAIN,
        };

        let hrim = HrimConfig {
            tick_rate: TICK_RATE,
            baud_tolerance: f.hrim.baud_tolerance.unwrap_or(DEFAULT_TOLERANCE),
            expected: sensors.iter().map(|s| BusConfig::new(s.id.clone(), s.baud).expect("checked above")).collect(),
            horizon: f.horizon,
        };
        hrim.validate().map_err(|m| invalid("hrim", m))?;

        if let Some(unknown) = f.i2m.t_d.keys().find(|k| !ids.contains(*k)) {
            return Err(invalid(format!("i2m.t_d.{unknown}"), "no such sensor"));
        }
        let defaults = Checks::default();
        let i2m = I2mConfig {
            horizon: f.horizon,
            r_max: f.i2m.r_max.unwrap_or(DEFAULT_R_MAX),
            checks: Checks {
                checksum: f.i2m.checksum.unwrap_or(defaults.checksum),
                range: f.i2m.range.unwrap_or(defaults.range),
                repetition: f.i2m.repetition.unwrap_or(defaults.repetition),
            },
            retries: f.i2m.retries.unwrap_or(DEFAULT_RETRIES),
            sensors: sensors
                .iter()
                .map(|s| I2mSensorConfig {
                    id: s.id.clone(),
                    kind: s.kind,
                    emit_period: s.emit_period,
                    t_d: f.i2m.t_d.get(&s.id).copied().unwrap_or(3 * s.emit_period),
                    nominal_baud: s.baud,
                })
                .collect(),
        };
        i2m.validate().map_err(|m| invalid("i2m", m))?;

        let failsafe_address = match f.eim.failsafe_address {
            None => FAILSAFE,
            Some(Address::Int(a)) => a,
            Some(Address::Text(s)) => parse_u32(&s).map_err(|m| invalid("eim.failsafe_address", m))?,
        };
        if let Some(t) = f.eim.recheck_ticks.iter().find(|t| **t > f.horizon) {
            return Err(invalid("eim.recheck_ticks", format!("tick {t} beyond horizon {}", f.horizon)));
        }
        let eim = EimConfig {
            reference_firmware: firmware,
            control_flow: ReferenceControlFlow { table, failsafe_address },
            recheck_ticks: f.eim.recheck_ticks.into_iter().collect(),
            continuous: f.eim.continuous,
            horizon: f.horizon,
        };
        eim.validate().map_err(|m| invalid("eim.failsafe_address", m))?;

        for (i, a) in f.attacks.iter().enumerate() {
            a.validate(&sensors, f.horizon).map_err(|e| invalid(format!("attacks[{i}]"), e.to_string()))?;
        }

        Ok(Scenario {
            name: f.name,
            description: f.description,
            horizon: f.horizon,
            plant,
            hrim,
            i2m,
            eim,
            attacks: f.attacks,
        })
    }

    pub fn seed(&self) -> u64 {
        self.plant.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.plant.seed = seed;
    }

    /// Changes the run length; fails if a scheduled attack or firmware
    /// re-check would fall outside it.
    pub fn set_horizon(&mut self, horizon: Tick) -> Result<(), ScenarioError> {
        if horizon == 0 {
            return Err(invalid("horizon", "must be positive"));
        }
        for (i, a) in self.attacks.iter().enumerate() {
            a.validate(&self.plant.sensors, horizon).map_err(|e| invalid(format!("attacks[{i}]"), e.to_string()))?;
        }
        if let Some(t) = self.eim.recheck_ticks.iter().find(|t| **t > horizon) {
            return Err(invalid("eim.recheck_ticks", format!("tick {t} beyond horizon {horizon}")));
        }
        self.horizon = horizon;
        self.hrim.horizon = horizon;
        self.i2m.horizon = horizon;
        self.eim.horizon = horizon;
        Ok(())
    }

    pub fn observation_model(&self) -> ObservationModel {
        ObservationModel {
            tick_rate: self.plant.tick_rate,
            baud_tolerance: self.hrim.baud_tolerance,
            horizon: self.horizon,
            sensors: self.plant.sensors.clone(),
            r_max: self.i2m.r_max,
            repetition_check: self.i2m.checks.repetition,
            reference_cfg: self.eim.control_flow.table.clone(),
            firmware_recheck: self.eim.recheck_ticks.clone(),
            continuous_firmware: self.eim.continuous,
        }
    }
}
