//! Three-tier computation model (local SDV, RSU, CDC), the RSU queue wait,
//! and the pluggable offloading-policy interface.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, find_relay_path, hops_along, mesh_path_time, ChannelParams};
use crate::world::{
    in_range, CdcState, Position, RsuId, RsuState, SdvId, SdvState, ServiceId, TaskId, Tick,
};

/// One offloading task issued by an SDV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub id: TaskId,
    pub origin: SdvId,
    pub service: ServiceId,
    /// Workload, FLOP.
    pub cpu_flops: f64,
    /// Input payload, bytes.
    pub input_bytes: u64,
    /// Size of the service image the task needs, bytes.
    pub image_bytes: u64,
    pub timeout_s: f64,
    pub issue_tick: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "tier", content = "rsu")]
pub enum OffloadTarget {
    Local,
    Rsu(RsuId),
    Cdc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffloadDecision {
    pub target: OffloadTarget,
}

impl OffloadDecision {
    pub fn new(target: OffloadTarget) -> Self {
        Self { target }
    }

    /// 1 for local execution.
    pub fn alpha(&self) -> f64 {
        matches!(self.target, OffloadTarget::Local) as u8 as f64
    }

    /// 1 for RSU execution.
    pub fn beta(&self) -> f64 {
        matches!(self.target, OffloadTarget::Rsu(_)) as u8 as f64
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Infeasible {
    #[error("SDV storage cannot hold the service image")]
    LocalStorage,
    #[error("no RSU in range of the requester")]
    NoCoverage,
    #[error("RSU {0} is down or unknown")]
    RsuDown(RsuId),
    #[error("RSU {0} is not reachable from the access RSU")]
    Unreachable(RsuId),
}

/// Per-component times of one placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub upload_s: f64,
    pub queue_s: f64,
    pub compute_s: f64,
    pub rtt_s: f64,
    pub total_s: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Local execution time `delta / f_v`.
pub fn time_local(cpu_flops: f64, sdv_flops: f64) -> f64 {
    cpu_flops / sdv_flops
}

/// Wait before a newly submitted task starts on `r`.
///
/// Zero while a slot is free. Otherwise slots are replayed: each queued
/// task takes the earliest-freeing slot, and the new task waits for the
/// earliest slot after the whole queue. With one slot this is the remaining
/// time of the running task plus every queued duration.
pub fn queue_time(r: &RsuState) -> f64 {
    if r.has_free_slot() {
        return 0.0;
    }
    let mut slots: Vec<f64> = r.running.iter().map(|t| t.remaining_s.max(0.0)).collect();
    if slots.is_empty() {
        return 0.0;
    }
    for q in &r.queue {
        let i = argmin(&slots);
        slots[i] += q.duration_s;
    }
    slots[argmin(&slots)]
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// RSU-tier time: upload, queue wait, then compute at `f_r`.
pub fn time_rsu(upload_s: f64, queue_s: f64, cpu_flops: f64, rsu_flops: f64) -> TimingBreakdown {
    let compute_s = cpu_flops / rsu_flops;
    TimingBreakdown {
        upload_s,
        queue_s,
        compute_s,
        rtt_s: 0.0,
        total_s: upload_s + queue_s + compute_s,
        alpha: 0.0,
        beta: 1.0,
    }
}

/// CDC-tier time: upload to the access RSU, compute at the granted share,
/// and the backhaul round trip.
pub fn time_cdc(upload_s: f64, cpu_flops: f64, granted_flops: f64, rtt_s: f64) -> TimingBreakdown {
    let compute_s = cpu_flops / granted_flops;
    TimingBreakdown {
        upload_s,
        queue_s: 0.0,
        compute_s,
        rtt_s,
        total_s: upload_s + compute_s + rtt_s,
        alpha: 0.0,
        beta: 0.0,
    }
}

/// Read-only view of the requesting SDV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequesterView {
    pub id: SdvId,
    pub position: Position,
    pub compute_capacity: f64,
    pub cache_capacity_bytes: u64,
    pub has_image: bool,
}

/// Read-only view of one RSU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsuView {
    pub id: RsuId,
    pub position: Position,
    pub alive: bool,
    pub in_range_of_requester: bool,
    pub compute_capacity: f64,
    pub concurrency_limit: usize,
    pub running: usize,
    pub queued: usize,
    pub queue_time_s: f64,
    pub has_image: bool,
    /// Connections transmitting on this RSU's radio.
    pub transmitting: usize,
    /// Relay path from the access RSU, if any.
    pub relay_path: Option<Vec<RsuId>>,
    /// Store-and-forward time of the task input over `relay_path`.
    pub relay_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdcView {
    pub active_tasks: usize,
    /// FLOPS one more task would receive.
    pub next_task_flops: f64,
    /// Round trip from the access RSU.
    pub rtt_s: f64,
}

/// Everything a policy may look at, captured at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyContext {
    pub tick: Tick,
    pub task: TaskRequest,
    pub requester: RequesterView,
    /// Access RSU the request came through.
    pub hop: Option<RsuId>,
    /// Full V2R rate between the requester and the access RSU.
    pub uplink_rate_bps: f64,
    pub rsus: Vec<RsuView>,
    pub cdc: CdcView,
}

/// World state needed to build a [`PolicyContext`].
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub tick: Tick,
    pub sdv: &'a SdvState,
    pub hop: Option<RsuId>,
    pub rsus: &'a [RsuState],
    pub cdc: &'a CdcState,
    pub params: &'a ChannelParams,
    /// Fading gain assumed for estimates.
    pub fading_gain: f64,
    /// Transmitting connections per RSU radio.
    pub transmitting: &'a BTreeMap<RsuId, usize>,
}

impl PolicyContext {
    pub fn build(task: &TaskRequest, snap: &Snapshot<'_>) -> Self {
        let hop = snap.hop.and_then(|h| snap.rsus.iter().find(|r| r.id == h && r.alive));
        let uplink_rate_bps = hop.map_or(0.0, |h| channel::link_rate(snap.sdv, h, snap.params, snap.fading_gain));
        let rsus = snap
            .rsus
            .iter()
            .map(|r| {
                let relay_path = hop.and_then(|h| find_relay_path(h.id, r.id, snap.rsus));
                let relay_s = relay_path
                    .as_ref()
                    .filter(|p| p.len() > 1)
                    .and_then(|p| hops_along(p, snap.rsus).ok())
                    .and_then(|hops| mesh_path_time(&hops, task.input_bytes, snap.params, snap.fading_gain).ok())
                    .unwrap_or(0.0);
                RsuView {
                    id: r.id,
                    position: r.position,
                    alive: r.alive,
                    in_range_of_requester: in_range(snap.sdv, r),
                    compute_capacity: r.compute_capacity,
                    concurrency_limit: r.concurrency_limit,
                    running: r.running.len(),
                    queued: r.queue.len(),
                    queue_time_s: queue_time(r),
                    has_image: r.cache.contains(task.service),
                    transmitting: snap.transmitting.get(&r.id).copied().unwrap_or(0),
                    relay_path,
                    relay_s,
                }
            })
            .collect();
        let cdc = CdcView {
            active_tasks: snap.cdc.active_tasks,
            next_task_flops: snap.cdc.per_task_flops(snap.cdc.active_tasks + 1),
            rtt_s: hop.map_or(0.0, |h| channel::rtt_backhaul(h, snap.cdc, snap.params)),
        };
        Self {
            tick: snap.tick,
            task: task.clone(),
            requester: RequesterView {
                id: snap.sdv.id,
                position: snap.sdv.position,
                compute_capacity: snap.sdv.compute_capacity,
                cache_capacity_bytes: snap.sdv.cache.capacity_bytes(),
                has_image: snap.sdv.cache.contains(task.service),
            },
            hop: hop.map(|h| h.id),
            uplink_rate_bps,
            rsus,
            cdc,
        }
    }

    pub fn rsu(&self, id: RsuId) -> Option<&RsuView> {
        self.rsus.iter().find(|r| r.id == id)
    }

    /// Upload of the task input to the access RSU at its current share.
    pub fn v2r_upload_s(&self) -> Result<f64, Infeasible> {
        let hop = self.hop.ok_or(Infeasible::NoCoverage)?;
        let share = self.rsu(hop).map_or(0, |r| r.transmitting) + 1;
        let rate = channel::effective_rate(self.uplink_rate_bps, share);
        Ok(self.task.input_bytes as f64 * 8.0 / rate)
    }

    /// Analytical time of running the task at `target`.
    pub fn estimate(&self, target: OffloadTarget) -> Result<TimingBreakdown, Infeasible> {
        match target {
            OffloadTarget::Local => {
                if self.requester.cache_capacity_bytes < self.task.image_bytes {
                    return Err(Infeasible::LocalStorage);
                }
                let t = time_local(self.task.cpu_flops, self.requester.compute_capacity);
                Ok(TimingBreakdown { upload_s: 0.0, queue_s: 0.0, compute_s: t, rtt_s: 0.0, total_s: t, alpha: 1.0, beta: 0.0 })
            }
            OffloadTarget::Rsu(id) => {
                let upload = self.v2r_upload_s()?;
                let r = self.rsu(id).filter(|r| r.alive).ok_or(Infeasible::RsuDown(id))?;
                if r.relay_path.is_none() {
                    return Err(Infeasible::Unreachable(id));
                }
                Ok(time_rsu(upload + r.relay_s, r.queue_time_s, self.task.cpu_flops, r.compute_capacity))
            }
            OffloadTarget::Cdc => {
                let upload = self.v2r_upload_s()?;
                Ok(time_cdc(upload, self.task.cpu_flops, self.cdc.next_task_flops, self.cdc.rtt_s))
            }
        }
    }

    /// Every feasible placement with its estimate, in a stable order.
    pub fn feasible(&self) -> Vec<(OffloadTarget, TimingBreakdown)> {
        std::iter::once(OffloadTarget::Local)
            .chain(self.rsus.iter().map(|r| OffloadTarget::Rsu(r.id)))
            .chain(std::iter::once(OffloadTarget::Cdc))
            .filter_map(|t| self.estimate(t).ok().map(|b| (t, b)))
            .collect()
    }
}

/// Overall task time for a decision: the local, RSU or CDC time selected
/// by the decision's `(alpha, beta)`.
pub fn total_task_time(decision: &OffloadDecision, ctx: &PolicyContext) -> Result<TimingBreakdown, Infeasible> {
    ctx.estimate(decision.target)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("policy `{policy}` failed: {message}")]
    Failed { policy: String, message: String },
    #[error("unknown offload policy `{0}`")]
    Unknown(String),
}

/// An offloading policy. Must be a pure function of the context.
pub trait OffloadPolicy: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn decide(&self, ctx: &PolicyContext) -> Result<OffloadDecision, PolicyError>;
}

/// Fastest feasible placement by estimated time; ties go to the local tier,
/// then RSUs nearer the requester, then lower ids.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferencePolicy;

impl OffloadPolicy for ReferencePolicy {
    fn name(&self) -> &str {
        "reference"
    }

    fn decide(&self, ctx: &PolicyContext) -> Result<OffloadDecision, PolicyError> {
        let dist = |t: &OffloadTarget| match t {
            OffloadTarget::Rsu(id) => ctx.rsu(*id).map_or(f64::INFINITY, |r| r.position.distance_to(&ctx.requester.position)),
            _ => 0.0,
        };
        ctx.feasible()
            .into_iter()
            .min_by(|(ta, a), (tb, b)| {
                a.total_s
                    .total_cmp(&b.total_s)
                    .then_with(|| dist(ta).total_cmp(&dist(tb)))
                    .then_with(|| ta.cmp(tb))
            })
            .map(|(t, _)| OffloadDecision::new(t))
            .ok_or_else(|| PolicyError::Failed { policy: self.name().into(), message: "no feasible placement".into() })
    }
}

/// Run on the access RSU whenever there is one.
#[derive(Debug, Clone, Copy, Default)]
pub struct NearestRsuPolicy;

impl OffloadPolicy for NearestRsuPolicy {
    fn name(&self) -> &str {
        "nearest-rsu"
    }

    fn decide(&self, ctx: &PolicyContext) -> Result<OffloadDecision, PolicyError> {
        Ok(OffloadDecision::new(ctx.hop.map_or(OffloadTarget::Cdc, OffloadTarget::Rsu)))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysLocalPolicy;

impl OffloadPolicy for AlwaysLocalPolicy {
    fn name(&self) -> &str {
        "always-local"
    }

    fn decide(&self, _ctx: &PolicyContext) -> Result<OffloadDecision, PolicyError> {
        Ok(OffloadDecision::new(OffloadTarget::Local))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysCdcPolicy;

impl OffloadPolicy for AlwaysCdcPolicy {
    fn name(&self) -> &str {
        "always-cdc"
    }

    fn decide(&self, _ctx: &PolicyContext) -> Result<OffloadDecision, PolicyError> {
        Ok(OffloadDecision::new(OffloadTarget::Cdc))
    }
}

/// Name-to-policy registry, preloaded with the built-in policies.
#[derive(Debug, Clone)]
pub struct OffloadRegistry {
    policies: BTreeMap<String, Arc<dyn OffloadPolicy>>,
}

impl Default for OffloadRegistry {
    fn default() -> Self {
        let mut reg = Self { policies: BTreeMap::new() };
        reg.register(Arc::new(ReferencePolicy));
        reg.register(Arc::new(NearestRsuPolicy));
        reg.register(Arc::new(AlwaysLocalPolicy));
        reg.register(Arc::new(AlwaysCdcPolicy));
        reg
    }
}

impl OffloadRegistry {
    pub fn register(&mut self, policy: Arc<dyn OffloadPolicy>) {
        self.policies.insert(policy.name().to_string(), policy);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn OffloadPolicy>, PolicyError> {
        self.policies.get(name).cloned().ok_or_else(|| PolicyError::Unknown(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.policies.keys().map(String::as_str)
    }
}
