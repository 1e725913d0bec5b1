use thiserror::Error;

use crate::ec::Tick;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EcError {
    #[error("action {action} both initiates and terminates {fluent} under the same guard")]
    ConflictingRule { action: String, fluent: String },
    #[error("tick {tick} is beyond the timeline horizon {horizon}")]
    TickBeyondHorizon { tick: Tick, horizon: Tick },
    #[error("{action} already recorded at tick {tick}")]
    DuplicateOccurrence { action: String, tick: Tick },
    #[error("fluent {0} is not declared")]
    UnknownFluent(String),
    #[error("interval ({from}, {to}] is empty")]
    InvalidInterval { from: Tick, to: Tick },
    #[error("malformed pattern: {0}")]
    MalformedPattern(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StreamError {
    #[error("stream {stream}: tick {tick} does not follow last buffered tick {last}")]
    NonMonotonicTick { stream: String, tick: Tick, last: Tick },
    #[error("expected tick {expected}, got {got}")]
    SkippedTick { expected: Tick, got: Tick },
    #[error("stream {0} is not registered")]
    UnregisteredStream(String),
    #[error("stream {0} has no samples")]
    EmptyWindow(String),
    #[error("transition at tick {tick} leaves {from} but the previous one entered {expected}")]
    BrokenTransitionChain { tick: Tick, from: String, expected: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MonitorError {
    #[error("predicate {predicate} reads stream {stream} outside the monitor language")]
    UnregisteredStream { predicate: String, stream: String },
    #[error("monitor {0} is frozen; predicates and patterns cannot change after start")]
    Frozen(String),
    #[error("monitor configuration: {0}")]
    Config(String),
    #[error("unknown graph vertex {0}")]
    UnknownVertex(String),
    #[error("no route from {from} for {label}")]
    NoRoute { from: String, label: String },
    #[error("edge {from} -> {to} ({kind}) does not fit the vertex kinds")]
    InvalidEdge { from: String, to: String, kind: String },
    #[error("firmware images differ in shape: live {live_base:#010x}+{live_len} words, reference {reference_base:#010x}+{reference_len} words")]
    ShapeMismatch { live_base: u32, live_len: usize, reference_base: u32, reference_len: usize },
    #[error("event edges form a cycle without delay: {0:?}")]
    CycleWithoutDelay(Vec<String>),
    #[error(transparent)]
    Ec(#[from] EcError),
    #[error(transparent)]
    Stream(#[from] StreamError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlantError {
    #[error("unknown sensor {0}")]
    UnknownSensor(String),
    #[error("address {addr:#010x} is outside the image and RAM")]
    AddressOutOfRange { addr: u32 },
    #[error("address {addr:#010x} is not word aligned")]
    Misaligned { addr: u32 },
    #[error("bus {0}: fewer than two edges in window")]
    InsufficientEdges(String),
    #[error("invalid bus configuration: {0}")]
    InvalidConfig(String),
    #[error("firmware image: {0}")]
    Image(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MitigationError {
    #[error("sensor {0} is connected; nothing to mitigate")]
    SensorConnected(String),
    #[error("mitigation already running for {0}")]
    AlreadyRunning(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttackError {
    #[error("attack target {0} does not exist")]
    UnknownTarget(String),
    #[error("unknown attack kind {0}")]
    UnknownKind(String),
    #[error("attack {kind}: {reason}")]
    InvalidParams { kind: String, reason: String },
    #[error(transparent)]
    Plant(#[from] PlantError),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("field {field}: {message}")]
    Invalid { field: String, message: String },
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Ec(#[from] EcError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Mitigation(#[from] MitigationError),
    #[error(transparent)]
    Log(#[from] LogError),
}
