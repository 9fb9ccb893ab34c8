//! Hit rate, response time, QoS, load balancing and space utilization,
//! computed at anchor ticks by folding the event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cache::CacheOutcome;
use crate::event::{Event, RsuInfo};
use crate::world::{FailReason, RsuId, TaskId, Tick};

/// Added to the standard deviation before inverting it.
pub const LOAD_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "ticks")]
pub enum Window {
    /// Everything since tick 0.
    Cumulative,
    /// Only the trailing number of ticks.
    Sliding(u64),
}

/// Which quantity stands for an RSU's power in the QoS metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerStat {
    /// Mean transmit power in watts.
    MeanTxPower,
    /// Transmit energy per megabyte served, joules/MB.
    EnergyPerMegabyte,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub anchor_every: u64,
    pub window: Window,
    pub power_stat: PowerStat,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { anchor_every: 100, window: Window::Cumulative, power_stat: PowerStat::MeanTxPower }
    }
}

/// Fraction of hits; `None` for an empty denominator.
pub fn hit_rate(hits: u64, requests: u64) -> Option<f64> {
    (requests > 0).then(|| hits as f64 / requests as f64)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// `ln(1 + size/time) / P^2`; `None` for zero total time.
pub fn qos(total_megabytes: f64, total_time_s: f64, power: f64) -> Option<f64> {
    (total_time_s > 0.0 && power > 0.0).then(|| (1.0 + total_megabytes / total_time_s).ln() / (power * power))
}

/// Population standard deviation of the loads and its guarded inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadBalance {
    pub stddev: f64,
    pub factor: f64,
    /// Loads were identical, so the factor is the guard cap.
    pub capped: bool,
}

pub fn load_balancing(loads: &[f64]) -> LoadBalance {
    let Some(m) = mean(loads) else {
        return LoadBalance { stddev: 0.0, factor: 1.0 / LOAD_GUARD, capped: true };
    };
    if loads.iter().all(|w| *w == loads[0]) {
        return LoadBalance { stddev: 0.0, factor: 1.0 / LOAD_GUARD, capped: true };
    }
    let var = loads.iter().map(|w| (w - m) * (w - m)).sum::<f64>() / loads.len() as f64;
    let stddev = var.sqrt();
    LoadBalance { stddev, factor: 1.0 / (stddev + LOAD_GUARD), capped: false }
}

/// Occupied over total capacity, in percent.
pub fn space_utilization(stores: &[(u64, u64)]) -> f64 {
    let cap: u64 = stores.iter().map(|s| s.1).sum();
    if cap == 0 {
        return 0.0;
    }
    stores.iter().map(|s| s.0).sum::<u64>() as f64 / cap as f64 * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsuMetrics {
    pub rsu: RsuId,
    pub requests: u64,
    pub hits: u64,
    pub peer_hits: u64,
    pub misses: u64,
    /// Zero when there were no requests (`hit_rate_defined` is false).
    pub hit_rate: f64,
    pub hit_rate_defined: bool,
    pub peer_hit_rate: f64,
    pub completed: u64,
    pub avg_response_time_s: Option<f64>,
    pub qos: Option<f64>,
    pub avg_load: f64,
    pub power_stat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMetrics {
    pub issued: u64,
    pub finished: u64,
    pub failed: u64,
    pub in_flight: u64,
    pub failures: BTreeMap<FailReason, u64>,
    pub requests: u64,
    pub hits: u64,
    pub peer_hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
    pub avg_response_time_s: Option<f64>,
    pub qos: Option<f64>,
    pub load_stddev: f64,
    pub load_balancing: f64,
    pub load_balancing_capped: bool,
    pub space_utilization_pct: f64,
}

/// Snapshot of all metrics at one anchor tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFrame {
    pub tick: Tick,
    pub rsus: Vec<RsuMetrics>,
    pub global: GlobalMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Completion {
    tick: Tick,
    routed: Option<RsuId>,
    latency_s: f64,
    megabytes: f64,
}

/// Incremental event-log fold.
#[derive(Debug, Clone, Default)]
pub struct MetricsCollector {
    config: MetricsConfig,
    rsus: BTreeMap<RsuId, RsuInfo>,
    issued: Vec<Tick>,
    lookups: Vec<(Tick, RsuId, CacheOutcome)>,
    completions: Vec<Completion>,
    failures: Vec<(Tick, FailReason)>,
    /// Compute occupancy intervals `[start, end)` per RSU task.
    intervals: Vec<(RsuId, Tick, Option<Tick>)>,
    open: BTreeMap<TaskId, usize>,
    used: BTreeMap<RsuId, u64>,
}

impl MetricsCollector {
    pub fn new(config: MetricsConfig) -> Self {
        Self { config, ..Self::default() }
    }

    pub fn config(&self) -> &MetricsConfig {
        &self.config
    }

    pub fn observe(&mut self, event: &Event) {
        use crate::offload::OffloadTarget;
        match event {
            Event::WorldBuilt { rsus, .. } => {
                for r in rsus {
                    self.rsus.insert(r.id, r.clone());
                    self.used.entry(r.id).or_insert(0);
                }
            }
            Event::RequestIssued { tick, .. } => self.issued.push(*tick),
            Event::CacheLookup { cache, .. } => {
                self.lookups.push((cache.tick, cache.rsu, cache.outcome));
                let used = self.used.entry(cache.rsu).or_insert(0);
                if cache.outcome != CacheOutcome::Hit && cache.admitted {
                    *used += cache.size_bytes;
                }
                for e in &cache.evicted {
                    *used -= e.size_bytes;
                }
            }
            Event::CacheDropped { rsu, size_bytes, .. } => {
                *self.used.entry(*rsu).or_insert(0) -= size_bytes;
            }
            Event::ComputeStart { tick, task, target: OffloadTarget::Rsu(r) } => {
                self.open.insert(*task, self.intervals.len());
                self.intervals.push((*r, *tick, None));
            }
            Event::ComputeEnd { tick, task, target: OffloadTarget::Rsu(_), .. } => {
                if let Some(i) = self.open.remove(task) {
                    self.intervals[i].2 = Some(*tick);
                }
            }
            Event::TaskFinished { tick, routed, latency_s, image_bytes, .. } => self.completions.push(Completion {
                tick: *tick,
                routed: *routed,
                latency_s: *latency_s,
                megabytes: *image_bytes as f64 / 1e6,
            }),
            Event::TaskFailed { tick, reason, .. } => self.failures.push((*tick, *reason)),
            _ => {}
        }
    }

    fn in_window(&self, t: Tick, now: Tick) -> bool {
        match self.config.window {
            Window::Cumulative => t <= now,
            Window::Sliding(w) => t <= now && t + w > now,
        }
    }

    fn window_start(&self, now: Tick) -> Tick {
        match self.config.window {
            Window::Cumulative => 0,
            Window::Sliding(w) => (now + 1).saturating_sub(w),
        }
    }

    fn power(&self, info: &RsuInfo, mb: f64, time_s: f64) -> f64 {
        match self.config.power_stat {
            PowerStat::MeanTxPower => info.tx_power,
            PowerStat::EnergyPerMegabyte if mb > 0.0 => info.tx_power * time_s / mb,
            PowerStat::EnergyPerMegabyte => 0.0,
        }
    }

    /// Metrics as of the end of tick `now`.
    pub fn frame(&self, now: Tick) -> MetricsFrame {
        let lo = self.window_start(now);
        let span = (now + 1 - lo) as f64;
        let mut rsus = Vec::with_capacity(self.rsus.len());
        let mut loads = Vec::with_capacity(self.rsus.len());
        let mut powers = Vec::new();
        for (id, info) in &self.rsus {
            let (mut hits, mut peer, mut miss) = (0, 0, 0);
            for (t, r, o) in &self.lookups {
                if r == id && self.in_window(*t, now) {
                    match o {
                        CacheOutcome::Hit => hits += 1,
                        CacheOutcome::PeerHit { .. } => peer += 1,
                        CacheOutcome::MissCdc => miss += 1,
                    }
                }
            }
            let requests = hits + peer + miss;
            let done: Vec<&Completion> = self
                .completions
                .iter()
                .filter(|c| c.routed == Some(*id) && self.in_window(c.tick, now))
                .collect();
            let latencies: Vec<f64> = done.iter().map(|c| c.latency_s).collect();
            let mb: f64 = done.iter().map(|c| c.megabytes).sum();
            let time: f64 = latencies.iter().sum();
            let power = self.power(info, mb, time);
            let busy: u64 = self
                .intervals
                .iter()
                .filter(|(r, ..)| r == id)
                .map(|(_, s, e)| {
                    let end = e.unwrap_or(now + 1).min(now + 1);
                    end.saturating_sub((*s).max(lo))
                })
                .sum();
            let avg_load = if info.concurrency_limit == 0 {
                0.0
            } else {
                busy as f64 / (span * info.concurrency_limit as f64)
            };
            loads.push(avg_load);
            powers.push(power);
            rsus.push(RsuMetrics {
                rsu: *id,
                requests,
                hits,
                peer_hits: peer,
                misses: miss,
                hit_rate: hit_rate(hits, requests).unwrap_or(0.0),
                hit_rate_defined: requests > 0,
                peer_hit_rate: hit_rate(peer, requests).unwrap_or(0.0),
                completed: done.len() as u64,
                avg_response_time_s: mean(&latencies),
                qos: qos(mb, time, power),
                avg_load,
                power_stat: power,
            });
        }

        let issued = self.issued.iter().filter(|t| self.in_window(**t, now)).count() as u64;
        let done: Vec<&Completion> = self.completions.iter().filter(|c| self.in_window(c.tick, now)).collect();
        let mut failures: BTreeMap<FailReason, u64> = BTreeMap::new();
        for (t, r) in &self.failures {
            if self.in_window(*t, now) {
                *failures.entry(*r).or_default() += 1;
            }
        }
        let failed: u64 = failures.values().sum();
        let latencies: Vec<f64> = done.iter().map(|c| c.latency_s).collect();
        let mb: f64 = done.iter().map(|c| c.megabytes).sum();
        let time: f64 = latencies.iter().sum();
        let (requests, hits, peer_hits, misses) = rsus.iter().fold((0, 0, 0, 0), |a, r| {
            (a.0 + r.requests, a.1 + r.hits, a.2 + r.peer_hits, a.3 + r.misses)
        });
        let lb = load_balancing(&loads);
        let stores: Vec<(u64, u64)> = self
            .rsus
            .iter()
            .map(|(id, info)| (self.used.get(id).copied().unwrap_or(0), info.cache_capacity_bytes))
            .collect();
        let global = GlobalMetrics {
            issued,
            finished: done.len() as u64,
            failed,
            in_flight: issued.saturating_sub(done.len() as u64 + failed),
            failures,
            requests,
            hits,
            peer_hits,
            misses,
            hit_rate: hit_rate(hits, requests).unwrap_or(0.0),
            avg_response_time_s: mean(&latencies),
            qos: mean(&powers).and_then(|p| qos(mb, time, p)),
            load_stddev: lb.stddev,
            load_balancing: lb.factor,
            load_balancing_capped: lb.capped,
            space_utilization_pct: space_utilization(&stores),
        };
        MetricsFrame { tick: now, rsus, global }
    }
}

/// Anchor ticks for a run of `horizon` ticks: every `every` ticks plus the
/// final tick.
pub fn anchor_ticks(horizon: u64, every: u64) -> Vec<Tick> {
    if horizon == 0 {
        return Vec::new();
    }
    let mut ticks: Vec<Tick> = (0..horizon).filter(|t| every > 0 && (t + 1) % every == 0).collect();
    if ticks.last() != Some(&(horizon - 1)) {
        ticks.push(horizon - 1);
    }
    ticks
}

/// Re-derive every anchor frame from an event log alone.
pub fn recompute(events: &[Event], config: &MetricsConfig, anchors: &[Tick]) -> Vec<MetricsFrame> {
    let mut collector = MetricsCollector::new(config.clone());
    let mut frames = Vec::with_capacity(anchors.len());
    let mut i = 0;
    for &a in anchors {
        while i < events.len() && events[i].tick() <= a {
            collector.observe(&events[i]);
            i += 1;
        }
        frames.push(collector.frame(a));
    }
    frames
}
