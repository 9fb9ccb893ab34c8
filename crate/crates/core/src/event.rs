//! The append-only simulation event log.
//!
//! Every metric in a report can be re-derived from these records, and the
//! log is written as newline-delimited JSON.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::cache::CacheEvent;
use crate::offload::OffloadTarget;
use crate::scenario::Command;
use crate::world::{ConnId, ConnKind, ConnPurpose, ConnStatus, Endpoint, FailReason, RsuId, SdvId, ServiceId, TaskId, Tick};

/// Static RSU facts needed by metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsuInfo {
    pub id: RsuId,
    pub tx_power: f64,
    pub concurrency_limit: usize,
    pub cache_capacity_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Event {
    WorldBuilt {
        tick: Tick,
        rsus: Vec<RsuInfo>,
        sdvs: usize,
        services: usize,
        dt: f64,
    },
    RequestIssued {
        tick: Tick,
        task: TaskId,
        sdv: SdvId,
        service: ServiceId,
        hop: Option<RsuId>,
        input_bytes: u64,
        image_bytes: u64,
    },
    ConnOpened {
        tick: Tick,
        conn: ConnId,
        kind: ConnKind,
        src: Endpoint,
        dst: Endpoint,
        bytes: u64,
        purpose: ConnPurpose,
        task: Option<TaskId>,
    },
    ConnClosed {
        tick: Tick,
        conn: ConnId,
        status: ConnStatus,
        reason: Option<FailReason>,
    },
    PolicyDecision {
        tick: Tick,
        task: TaskId,
        policy: String,
        target: OffloadTarget,
        /// The policy's own choice was infeasible or errored.
        fallback: bool,
        estimate_s: Option<f64>,
    },
    CacheLookup {
        task: TaskId,
        cache: CacheEvent,
    },
    Deployed {
        tick: Tick,
        task: TaskId,
        target: OffloadTarget,
    },
    ComputeStart {
        tick: Tick,
        task: TaskId,
        target: OffloadTarget,
    },
    ComputeEnd {
        tick: Tick,
        task: TaskId,
        target: OffloadTarget,
        completed: bool,
    },
    TaskFinished {
        tick: Tick,
        task: TaskId,
        /// RSU the request is attributed to in per-RSU metrics.
        routed: Option<RsuId>,
        target: OffloadTarget,
        latency_s: f64,
        image_bytes: u64,
    },
    TaskFailed {
        tick: Tick,
        task: TaskId,
        routed: Option<RsuId>,
        reason: FailReason,
    },
    /// A cache entry whose image transfer failed was discarded.
    CacheDropped {
        tick: Tick,
        rsu: RsuId,
        service: ServiceId,
        size_bytes: u64,
    },
    ServicesUploaded {
        tick: Tick,
        first: ServiceId,
        count: u64,
    },
    CommandApplied {
        tick: Tick,
        command: Command,
        /// Came from the live control queue rather than the scenario.
        live: bool,
    },
}

impl Event {
    pub fn tick(&self) -> Tick {
        match self {
            Event::WorldBuilt { tick, .. }
            | Event::RequestIssued { tick, .. }
            | Event::ConnOpened { tick, .. }
            | Event::ConnClosed { tick, .. }
            | Event::PolicyDecision { tick, .. }
            | Event::Deployed { tick, .. }
            | Event::ComputeStart { tick, .. }
            | Event::ComputeEnd { tick, .. }
            | Event::TaskFinished { tick, .. }
            | Event::TaskFailed { tick, .. }
            | Event::CacheDropped { tick, .. }
            | Event::ServicesUploaded { tick, .. }
            | Event::CommandApplied { tick, .. } => *tick,
            Event::CacheLookup { cache, .. } => cache.tick,
        }
    }
}

pub fn write_ndjson<W: Write>(events: &[Event], mut out: W) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_ndjson<R: BufRead>(input: R) -> io::Result<Vec<Event>> {
    let mut events = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
    }
    Ok(events)
}
