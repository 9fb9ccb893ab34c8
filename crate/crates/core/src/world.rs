//! Entity records shared by every subsystem: services, vehicles (SDVs),
//! roadside units (RSUs), the cloud datacenter (CDC) and connections.
//!
//! All coordinates are meters on a flat 2-D canvas. The records are plain
//! data; behavior lives in the modules that own each concern (`cache`,
//! `offload`, `mobility`, ...) and all mutation happens inside the engine's
//! tick loop.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::cache::CacheStore;

/// Simulation time index.
pub type Tick = u64;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident($inner:ty), $prefix:literal) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// Index of a service in the CDC catalog.
    ServiceId(u32),
    "s"
);
id_type!(SdvId(u32), "v");
id_type!(RsuId(u32), "r");
id_type!(ConnId(u64), "c");
id_type!(TaskId(u64), "t");

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_to(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Rectangular simulation area `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Canvas {
    pub width: f64,
    pub height: f64,
}

impl Canvas {
    pub fn contains(&self, p: Position) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn clamp(&self, p: Position) -> Position {
        Position::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.height))
    }
}

impl Default for Canvas {
    fn default() -> Self {
        Self { width: 10_000.0, height: 10_000.0 }
    }
}

/// Anything with a location on the canvas.
pub trait Positioned {
    fn position(&self) -> Position;
}

impl Positioned for Position {
    fn position(&self) -> Position {
        *self
    }
}

/// Euclidean distance between two positioned entities, in meters.
pub fn distance(a: &impl Positioned, b: &impl Positioned) -> f64 {
    a.position().distance_to(&b.position())
}

/// Whether the vehicle lies strictly inside the RSU's coverage disc.
pub fn in_range(v: &SdvState, r: &RsuState) -> bool {
    distance(v, r) < r.coverage_radius
}

/// Both RSUs lie strictly inside each other's coverage radius.
pub fn mutually_in_range(a: &RsuState, b: &RsuState) -> bool {
    let d = distance(a, b);
    d < a.coverage_radius && d < b.coverage_radius
}

/// One cacheable, executable service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub id: ServiceId,
    pub size_bytes: u64,
    /// Attractiveness scalar, strictly positive.
    pub charm: f64,
    /// Required compute in floating-point operations.
    pub cpu_demand: f64,
    pub feature: Vec<f64>,
    pub cluster_id: u32,
    /// Maximum tolerated latency in seconds.
    pub timeout_s: f64,
}

impl ServiceSpec {
    pub fn feature_norm(&self) -> f64 {
        norm(&self.feature)
    }

    pub fn validate(&self, dims: usize) -> Result<(), EntityError> {
        if self.size_bytes == 0 {
            return Err(EntityError::Invalid(format!("{}: size_bytes must be > 0", self.id)));
        }
        if !(self.cpu_demand > 0.0) {
            return Err(EntityError::Invalid(format!("{}: cpu_demand must be > 0", self.id)));
        }
        if !(self.charm > 0.0) {
            return Err(EntityError::Invalid(format!("{}: charm must be > 0", self.id)));
        }
        if self.feature.len() != dims {
            return Err(EntityError::Invalid(format!(
                "{}: feature has {} dims, expected {dims}",
                self.id,
                self.feature.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Active,
    Sleeping { until: Tick },
}

/// A software-defined vehicle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdvState {
    pub id: SdvId,
    pub position: Position,
    /// Heading in radians, counter-clockwise from +x.
    pub heading: f64,
    /// Speed in m/s (the velocity setting used by the sleep model).
    pub velocity: f64,
    /// Longitudinal acceleration in m/s^2.
    pub acceleration: f64,
    /// FLOPS available for local execution.
    pub compute_capacity: f64,
    /// Transmit power in watts.
    pub tx_power: f64,
    pub cache: CacheStore,
    pub preference: Vec<f64>,
    pub activity: Activity,
    /// Services this vehicle has requested, with the tick of the last request.
    pub accessed: BTreeMap<ServiceId, Tick>,
    pub requests_issued: u64,
    /// Cluster of the center the preference vector was drawn around.
    pub home_cluster: u32,
}

impl SdvState {
    pub fn is_active(&self) -> bool {
        matches!(self.activity, Activity::Active)
    }
}

impl Positioned for SdvState {
    fn position(&self) -> Position {
        self.position
    }
}

/// A task executing on one of an RSU's `concurrency_limit` slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningTask {
    pub task: TaskId,
    /// Remaining compute time in seconds at this RSU's capacity.
    pub remaining_s: f64,
}

/// A task waiting for a free slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueuedTask {
    pub task: TaskId,
    /// Full compute time in seconds at this RSU's capacity.
    pub duration_s: f64,
}

/// A roadside unit with an edge server.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RsuState {
    pub id: RsuId,
    pub position: Position,
    pub coverage_radius: f64,
    pub compute_capacity: f64,
    pub tx_power: f64,
    /// Maximum number of concurrently running tasks.
    pub concurrency_limit: usize,
    pub queue: VecDeque<QueuedTask>,
    pub running: Vec<RunningTask>,
    pub cache: CacheStore,
    pub alive: bool,
}

impl RsuState {
    pub fn has_free_slot(&self) -> bool {
        self.running.len() < self.concurrency_limit
    }

    /// Fraction of compute slots busy right now.
    pub fn busy_fraction(&self) -> f64 {
        if self.concurrency_limit == 0 {
            return 0.0;
        }
        self.running.len() as f64 / self.concurrency_limit as f64
    }
}

impl Positioned for RsuState {
    fn position(&self) -> Position {
        self.position
    }
}

/// How the CDC divides its capacity between concurrent tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "flops")]
pub enum CdcAllocation {
    /// Every active task receives `compute_capacity / active_tasks`.
    FairShare,
    /// Every task receives a fixed number of FLOPS.
    Fixed(f64),
}

/// The cloud datacenter: service repository and compute tier of last resort.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CdcState {
    /// Full service catalog, indexed by `ServiceId`.
    pub disk: Vec<ServiceSpec>,
    pub compute_capacity: f64,
    pub allocation: CdcAllocation,
    pub position: Position,
    pub active_tasks: usize,
}

impl CdcState {
    pub fn service(&self, id: ServiceId) -> Option<&ServiceSpec> {
        self.disk.get(id.0 as usize)
    }

    /// FLOPS granted to one task when `active` tasks share the CDC.
    pub fn per_task_flops(&self, active: usize) -> f64 {
        match self.allocation {
            CdcAllocation::FairShare => self.compute_capacity / active.max(1) as f64,
            CdcAllocation::Fixed(f) => f.min(self.compute_capacity),
        }
    }
}

impl Positioned for CdcState {
    fn position(&self) -> Position {
        self.position
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnKind {
    V2R,
    V2V,
    R2C,
    R2R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Sdv(SdvId),
    Rsu(RsuId),
    Cdc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnStatus {
    Pending,
    Established,
    Transmitting,
    Computing,
    Finished,
    Failed,
}

impl ConnStatus {
    pub const ALL: [ConnStatus; 6] = [
        ConnStatus::Pending,
        ConnStatus::Established,
        ConnStatus::Transmitting,
        ConnStatus::Computing,
        ConnStatus::Finished,
        ConnStatus::Failed,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, ConnStatus::Finished | ConnStatus::Failed)
    }
}

/// Inputs to the connection state machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnEvent {
    Establish,
    BeginTransmit,
    BeginCompute,
    Finish,
    Fail,
}

impl ConnEvent {
    pub const ALL: [ConnEvent; 5] = [
        ConnEvent::Establish,
        ConnEvent::BeginTransmit,
        ConnEvent::BeginCompute,
        ConnEvent::Finish,
        ConnEvent::Fail,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal connection transition: {event:?} in state {from:?}")]
pub struct IllegalTransition {
    pub from: ConnStatus,
    pub event: ConnEvent,
}

/// The connection lifecycle: `Pending -> Established -> Transmitting ->
/// (Computing) -> Finished`, with `Failed` reachable from any non-terminal
/// state.
pub fn transition(from: ConnStatus, event: ConnEvent) -> Result<ConnStatus, IllegalTransition> {
    use ConnEvent as E;
    use ConnStatus as S;
    let next = match (from, event) {
        (S::Pending, E::Establish) => S::Established,
        (S::Established, E::BeginTransmit) => S::Transmitting,
        (S::Transmitting, E::BeginCompute) => S::Computing,
        (S::Transmitting | S::Computing, E::Finish) => S::Finished,
        (s, E::Fail) if !s.is_terminal() => S::Failed,
        _ => return Err(IllegalTransition { from, event }),
    };
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    Timeout,
    OutOfRange,
    EndpointDown,
    Unreachable,
}

/// What the engine does when a connection reaches a terminal state.
///
/// Stored as data so completions replay in connection-id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "purpose")]
pub enum ConnPurpose {
    /// Offloading-policy request relayed to the CDC.
    PolicyQuery,
    /// Task input upload to the execution target.
    Upload,
    /// Service image transfer from a peer RSU or the CDC into `rsu`.
    ImageFetch { rsu: RsuId, service: ServiceId, source: Option<RsuId> },
    /// Task forwarded over the backhaul to the CDC and executed there.
    CdcExecute,
}

/// Store-and-forward legs appended after the radio transfer when a
/// connection is relayed through other RSUs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayLeg {
    pub via: RsuId,
    pub path: Vec<RsuId>,
    pub remaining_s: f64,
}

/// A live connection's lifecycle record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Conn {
    pub id: ConnId,
    pub kind: ConnKind,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub total_bytes: u64,
    pub remaining_bytes: f64,
    pub status: ConnStatus,
    pub created_tick: Tick,
    /// Propagation countdown consumed while `Established`.
    pub propagation_s: f64,
    pub relay: Option<RelayLeg>,
    pub task: Option<TaskId>,
    pub purpose: ConnPurpose,
    /// Whether the conn parks in `Computing` after its transfer.
    pub computes: bool,
    /// Current Rayleigh power gain and the tick it was drawn.
    pub fading_gain: f64,
    pub fading_tick: Option<Tick>,
    pub failure: Option<FailReason>,
}

impl Conn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: ConnId,
        kind: ConnKind,
        src: Endpoint,
        dst: Endpoint,
        total_bytes: u64,
        propagation_s: f64,
        created_tick: Tick,
        purpose: ConnPurpose,
    ) -> Self {
        Self {
            id,
            kind,
            src,
            dst,
            total_bytes,
            remaining_bytes: total_bytes as f64,
            status: ConnStatus::Pending,
            created_tick,
            propagation_s: propagation_s.max(0.0),
            relay: None,
            task: None,
            purpose,
            computes: false,
            fading_gain: 1.0,
            fading_tick: None,
            failure: None,
        }
    }

    /// Apply a lifecycle event, rejecting illegal transitions.
    pub fn apply(&mut self, event: ConnEvent) -> Result<ConnStatus, IllegalTransition> {
        self.status = transition(self.status, event)?;
        Ok(self.status)
    }

    pub fn fail(&mut self, reason: FailReason) -> Result<(), IllegalTransition> {
        self.apply(ConnEvent::Fail)?;
        self.failure = Some(reason);
        Ok(())
    }

    /// The RSU whose radio carries this connection, if any.
    pub fn radio_owner(&self) -> Option<RsuId> {
        match (self.kind, self.src, self.dst) {
            (ConnKind::V2R, _, Endpoint::Rsu(r)) | (ConnKind::V2R, Endpoint::Rsu(r), _) => Some(r),
            (ConnKind::R2R, Endpoint::Rsu(r), _) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EntityError {
    #[error("invalid entity: {0}")]
    Invalid(String),
}
