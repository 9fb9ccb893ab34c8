//! Service-image caches, eviction policies and the cache-hit/miss request
//! flow with inter-RSU collaboration.
//!
//! Every [`CacheStore`] keeps the bookkeeping of all baseline policies
//! (recency, frequency, insertion order, CLOCK reference bits) regardless of
//! which policy drives it, so policies can be swapped between runs.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, find_relay_path, hops_along, mesh_path_time, ChannelParams};
use crate::world::{mutually_in_range, CdcState, RsuId, RsuState, ServiceId, ServiceSpec, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub size_bytes: u64,
    pub last_used_tick: Tick,
    /// Store-local access sequence number; orders accesses within a tick.
    pub last_used_seq: u64,
    pub frequency: u64,
    pub inserted_seq: u64,
    pub referenced: bool,
    /// Outstanding transfers depending on this entry; pinned entries are
    /// never evicted.
    pub pins: u32,
}

/// Byte-capacity store of service images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheStore {
    capacity_bytes: u64,
    used_bytes: u64,
    entries: BTreeMap<ServiceId, CacheEntry>,
    /// CLOCK ring in circular order; `hand` indexes the next entry examined.
    ring: Vec<ServiceId>,
    hand: usize,
    seq: u64,
}

impl CacheStore {
    pub fn new(capacity_bytes: u64) -> Self {
        Self {
            capacity_bytes,
            used_bytes: 0,
            entries: BTreeMap::new(),
            ring: Vec::new(),
            hand: 0,
            seq: 0,
        }
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_bytes
    }

    pub fn used_bytes(&self) -> u64 {
        self.used_bytes
    }

    pub fn free_bytes(&self) -> u64 {
        self.capacity_bytes - self.used_bytes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: ServiceId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn entry(&self, id: ServiceId) -> Option<&CacheEntry> {
        self.entries.get(&id)
    }

    pub fn entries(&self) -> impl Iterator<Item = (ServiceId, &CacheEntry)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    /// Entries in CLOCK order starting at the hand.
    pub fn clock_order(&self) -> Vec<ServiceId> {
        let n = self.ring.len();
        (0..n).map(|i| self.ring[(self.hand + i) % n]).collect()
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    /// Record an access: recency, frequency and the CLOCK reference bit.
    pub fn touch(&mut self, id: ServiceId, tick: Tick) -> bool {
        let seq = self.next_seq();
        match self.entries.get_mut(&id) {
            Some(e) => {
                e.last_used_tick = tick;
                e.last_used_seq = seq;
                e.frequency += 1;
                e.referenced = true;
                true
            }
            None => false,
        }
    }

    pub fn pin(&mut self, id: ServiceId) -> bool {
        match self.entries.get_mut(&id) {
            Some(e) => {
                e.pins += 1;
                true
            }
            None => false,
        }
    }

    pub fn unpin(&mut self, id: ServiceId) {
        if let Some(e) = self.entries.get_mut(&id) {
            e.pins = e.pins.saturating_sub(1);
        }
    }

    pub fn is_pinned(&self, id: ServiceId) -> bool {
        self.entries.get(&id).is_some_and(|e| e.pins > 0)
    }

    /// Bytes that could be freed by evicting every unpinned entry.
    pub fn evictable_bytes(&self) -> u64 {
        self.entries.values().filter(|e| e.pins == 0).map(|e| e.size_bytes).sum()
    }

    fn insert(&mut self, id: ServiceId, size_bytes: u64, tick: Tick) {
        debug_assert!(size_bytes <= self.free_bytes());
        let seq = self.next_seq();
        self.entries.insert(
            id,
            CacheEntry {
                size_bytes,
                last_used_tick: tick,
                last_used_seq: seq,
                frequency: 1,
                inserted_seq: seq,
                referenced: true,
                pins: 0,
            },
        );
        self.used_bytes += size_bytes;
        // New entries sit just behind the hand: examined last.
        if self.ring.is_empty() {
            self.ring.push(id);
            self.hand = 0;
        } else {
            self.ring.insert(self.hand, id);
            self.hand = (self.hand + 1) % self.ring.len();
        }
    }

    /// Remove an entry regardless of pins. Returns its size.
    pub fn remove(&mut self, id: ServiceId) -> Option<u64> {
        let entry = self.entries.remove(&id)?;
        self.used_bytes -= entry.size_bytes;
        if let Some(i) = self.ring.iter().position(|x| *x == id) {
            self.ring.remove(i);
            if i < self.hand {
                self.hand -= 1;
            }
            if self.hand >= self.ring.len() {
                self.hand = 0;
            }
        }
        Some(entry.size_bytes)
    }

    /// Drop every entry (cold restart).
    pub fn clear(&mut self) {
        self.entries.clear();
        self.ring.clear();
        self.hand = 0;
        self.used_bytes = 0;
    }

    /// Advance the CLOCK hand to the first unpinned entry whose reference bit
    /// is clear, clearing bits on the way. The victim is left under the hand.
    fn clock_sweep(&mut self) -> Option<ServiceId> {
        if !self.entries.values().any(|e| e.pins == 0) {
            return None;
        }
        loop {
            let id = self.ring[self.hand];
            let entry = self.entries.get_mut(&id).expect("ring and entries agree");
            if entry.pins == 0 {
                if !entry.referenced {
                    return Some(id);
                }
                entry.referenced = false;
            }
            self.hand = (self.hand + 1) % self.ring.len();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lookup {
    Hit,
    Miss,
}

/// Check for a cached image, updating policy metadata on a hit.
pub fn lookup(store: &mut CacheStore, id: ServiceId, tick: Tick) -> Lookup {
    if store.touch(id, tick) {
        Lookup::Hit
    } else {
        Lookup::Miss
    }
}

/// An eviction/admission policy. Policy state lives in the store metadata.
pub trait CachePolicy: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Whether to cache a missed image. Baseline policies always admit.
    fn admits(&self, _store: &CacheStore, _candidate: ServiceId, _size_bytes: u64) -> bool {
        true
    }

    /// Pick an unpinned entry to evict. `None` only when nothing is evictable.
    fn choose_victim(&self, store: &mut CacheStore, rng: &mut dyn RngCore) -> Option<ServiceId>;
}

fn min_unpinned_by<K: Ord>(store: &CacheStore, key: impl Fn(&CacheEntry) -> K) -> Option<ServiceId> {
    store
        .entries
        .iter()
        .filter(|(_, e)| e.pins == 0)
        .min_by_key(|(id, e)| (key(e), **id))
        .map(|(id, _)| *id)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;
#[derive(Debug, Clone, Copy, Default)]
pub struct FifoPolicy;
#[derive(Debug, Clone, Copy, Default)]
pub struct LruPolicy;
#[derive(Debug, Clone, Copy, Default)]
pub struct LfuPolicy;
#[derive(Debug, Clone, Copy, Default)]
pub struct ClockPolicy;

impl CachePolicy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    /// Uniform over unpinned entries in ascending id order.
    fn choose_victim(&self, store: &mut CacheStore, rng: &mut dyn RngCore) -> Option<ServiceId> {
        let candidates: Vec<ServiceId> =
            store.entries.iter().filter(|(_, e)| e.pins == 0).map(|(id, _)| *id).collect();
        if candidates.is_empty() {
            return None;
        }
        Some(candidates[rng.random_range(0..candidates.len())])
    }
}

impl CachePolicy for FifoPolicy {
    fn name(&self) -> &str {
        "fifo"
    }

    fn choose_victim(&self, store: &mut CacheStore, _rng: &mut dyn RngCore) -> Option<ServiceId> {
        min_unpinned_by(store, |e| e.inserted_seq)
    }
}

impl CachePolicy for LruPolicy {
    fn name(&self) -> &str {
        "lru"
    }

    fn choose_victim(&self, store: &mut CacheStore, _rng: &mut dyn RngCore) -> Option<ServiceId> {
        min_unpinned_by(store, |e| e.last_used_seq)
    }
}

impl CachePolicy for LfuPolicy {
    fn name(&self) -> &str {
        "lfu"
    }

    fn choose_victim(&self, store: &mut CacheStore, _rng: &mut dyn RngCore) -> Option<ServiceId> {
        min_unpinned_by(store, |e| (e.frequency, e.inserted_seq))
    }
}

impl CachePolicy for ClockPolicy {
    fn name(&self) -> &str {
        "clock"
    }

    fn choose_victim(&self, store: &mut CacheStore, _rng: &mut dyn RngCore) -> Option<ServiceId> {
        store.clock_sweep()
    }
}

/// Policy selector used in scenario files.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CachePolicyKind {
    Random,
    Fifo,
    Lru,
    Lfu,
    Clock,
    UserDefined(String),
}

impl CachePolicyKind {
    pub const BASELINES: [CachePolicyKind; 5] = [
        CachePolicyKind::Random,
        CachePolicyKind::Fifo,
        CachePolicyKind::Lru,
        CachePolicyKind::Lfu,
        CachePolicyKind::Clock,
    ];

    pub fn label(&self) -> &str {
        match self {
            CachePolicyKind::Random => "random",
            CachePolicyKind::Fifo => "fifo",
            CachePolicyKind::Lru => "lru",
            CachePolicyKind::Lfu => "lfu",
            CachePolicyKind::Clock => "clock",
            CachePolicyKind::UserDefined(name) => name,
        }
    }
}

impl fmt::Display for CachePolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CacheError {
    #[error("unknown cache policy `{0}`")]
    UnknownPolicy(String),
}

/// Name-to-policy registry for baseline and user-defined policies.
#[derive(Debug, Clone)]
#[derive(Default)]
pub struct CachePolicyRegistry {
    user: BTreeMap<String, Arc<dyn CachePolicy>>,
}


impl CachePolicyRegistry {
    pub fn register(&mut self, policy: Arc<dyn CachePolicy>) {
        self.user.insert(policy.name().to_string(), policy);
    }

    pub fn contains(&self, kind: &CachePolicyKind) -> bool {
        match kind {
            CachePolicyKind::UserDefined(name) => self.user.contains_key(name),
            _ => true,
        }
    }

    pub fn resolve(&self, kind: &CachePolicyKind) -> Result<Arc<dyn CachePolicy>, CacheError> {
        Ok(match kind {
            CachePolicyKind::Random => Arc::new(RandomPolicy),
            CachePolicyKind::Fifo => Arc::new(FifoPolicy),
            CachePolicyKind::Lru => Arc::new(LruPolicy),
            CachePolicyKind::Lfu => Arc::new(LfuPolicy),
            CachePolicyKind::Clock => Arc::new(ClockPolicy),
            CachePolicyKind::UserDefined(name) => self
                .user
                .get(name)
                .cloned()
                .ok_or_else(|| CacheError::UnknownPolicy(name.clone()))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evicted {
    pub service: ServiceId,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Admission {
    pub admitted: bool,
    pub evicted: Vec<Evicted>,
}

/// Cache a missed image, evicting per policy until it fits.
///
/// Oversized candidates and candidates that cannot fit even after evicting
/// every unpinned entry are rejected without evicting anything.
pub fn admit(
    policy: &dyn CachePolicy,
    store: &mut CacheStore,
    candidate: ServiceId,
    size_bytes: u64,
    tick: Tick,
    rng: &mut dyn RngCore,
) -> Admission {
    if store.contains(candidate) {
        return Admission { admitted: true, evicted: Vec::new() };
    }
    if size_bytes > store.capacity_bytes
        || size_bytes > store.free_bytes() + store.evictable_bytes()
        || !policy.admits(store, candidate, size_bytes)
    {
        return Admission::default();
    }
    let mut evicted = Vec::new();
    while store.free_bytes() < size_bytes {
        let victim = policy
            .choose_victim(store, rng)
            .expect("evictable bytes cover the shortfall");
        debug_assert!(!store.is_pinned(victim), "policy chose a pinned entry");
        let size = store.remove(victim).expect("victim is cached");
        evicted.push(Evicted { service: victim, size_bytes: size });
    }
    store.insert(candidate, size_bytes, tick);
    Admission { admitted: true, evicted }
}

/// Deployment delay of a service image once it is present at the target;
/// `deploy_rate` is in bytes/s.
pub fn deploy_time(size_bytes: u64, deploy_rate: f64) -> f64 {
    size_bytes as f64 / deploy_rate
}

/// How far an RSU looks for collaborating peers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "max_hops")]
#[derive(Default)]
pub enum CollaborationReach {
    /// Only direct R2R neighbours (mutual range).
    #[default]
    Direct,
    /// Any peer reachable through at most this many relay hops.
    MultiHop(usize),
    Disabled,
}


/// A peer RSU holding a requested image.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerCandidate {
    pub rsu: RsuId,
    /// Node path from the peer to the target.
    pub path: Vec<RsuId>,
    /// Estimated transfer plus propagation time over the path.
    pub fetch_time_s: f64,
}

/// Peers that hold `service`, ordered by estimated fetch time, then id.
pub fn collaboration_peers(
    target: RsuId,
    service: &ServiceSpec,
    rsus: &[RsuState],
    params: &ChannelParams,
    reach: CollaborationReach,
) -> Vec<PeerCandidate> {
    let Some(t) = rsus.iter().find(|r| r.id == target) else {
        return Vec::new();
    };
    let mut peers: Vec<PeerCandidate> = rsus
        .iter()
        .filter(|p| p.id != target && p.alive && p.cache.contains(service.id))
        .filter_map(|p| {
            let path = match reach {
                CollaborationReach::Disabled => return None,
                CollaborationReach::Direct => {
                    if !mutually_in_range(p, t) {
                        return None;
                    }
                    vec![p.id, target]
                }
                CollaborationReach::MultiHop(max) => {
                    let path = find_relay_path(p.id, target, rsus)?;
                    if path.len() - 1 > max {
                        return None;
                    }
                    path
                }
            };
            let hops = hops_along(&path, rsus).ok()?;
            let fetch_time_s = mesh_path_time(&hops, service.size_bytes, params, params.fading_scale).ok()?;
            Some(PeerCandidate { rsu: p.id, path, fetch_time_s })
        })
        .collect();
    peers.sort_by(|a, b| a.fetch_time_s.total_cmp(&b.fetch_time_s).then(a.rsu.cmp(&b.rsu)));
    peers
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum ImageSource {
    Local,
    Peer { rsu: RsuId, path: Vec<RsuId> },
    Cdc,
}

/// Request-time breakdown: `rtt + transfer + deploy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FetchTiming {
    pub rtt_s: f64,
    /// Image transfer (peer relay or CDC pull), zero on a local hit.
    pub transfer_s: f64,
    pub deploy_s: f64,
}

impl FetchTiming {
    pub fn total(&self) -> f64 {
        self.rtt_s + self.transfer_s + self.deploy_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub source: ImageSource,
    pub timing: FetchTiming,
}

/// Where the target RSU gets a service image from, and how long it takes.
///
/// A collaborating peer is used only when its transfer beats a CDC pull, so
/// more image availability never lengthens the request.
pub fn resolve(
    target: &RsuState,
    service: &ServiceSpec,
    rsus: &[RsuState],
    cdc: &CdcState,
    params: &ChannelParams,
    reach: CollaborationReach,
    deploy_rate: f64,
) -> Resolution {
    let rtt_s = channel::rtt_backhaul(target, cdc, params);
    let deploy_s = deploy_time(service.size_bytes, deploy_rate);
    if target.cache.contains(service.id) {
        return Resolution {
            source: ImageSource::Local,
            timing: FetchTiming { rtt_s, transfer_s: 0.0, deploy_s },
        };
    }
    let cdc_pull_s = rtt_s + channel::backhaul_transfer_time(service.size_bytes, params);
    let peers = collaboration_peers(target.id, service, rsus, params, reach);
    match peers.into_iter().next() {
        Some(best) if best.fetch_time_s <= cdc_pull_s => Resolution {
            source: ImageSource::Peer { rsu: best.rsu, path: best.path },
            timing: FetchTiming { rtt_s, transfer_s: best.fetch_time_s, deploy_s },
        },
        _ => Resolution {
            source: ImageSource::Cdc,
            timing: FetchTiming { rtt_s, transfer_s: cdc_pull_s, deploy_s },
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CacheOutcome {
    Hit,
    PeerHit { src: RsuId },
    MissCdc,
}

/// One cache resolution at an RSU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEvent {
    pub tick: Tick,
    pub rsu: RsuId,
    pub service: ServiceId,
    pub size_bytes: u64,
    pub outcome: CacheOutcome,
    pub bytes_moved: u64,
    pub admitted: bool,
    pub evicted: Vec<Evicted>,
}

/// Full request handling at `target`: lookup, source resolution and
/// admission of a missed image.
#[allow(clippy::too_many_arguments)]
pub fn serve(
    policy: &dyn CachePolicy,
    target: RsuId,
    service: &ServiceSpec,
    rsus: &mut [RsuState],
    cdc: &CdcState,
    params: &ChannelParams,
    reach: CollaborationReach,
    deploy_rate: f64,
    tick: Tick,
    rng: &mut dyn RngCore,
) -> (Resolution, CacheEvent) {
    let idx = rsus.iter().position(|r| r.id == target).expect("target RSU exists");
    lookup(&mut rsus[idx].cache, service.id, tick);
    let resolution = resolve(&rsus[idx], service, rsus, cdc, params, reach, deploy_rate);
    let (outcome, bytes_moved) = match &resolution.source {
        ImageSource::Local => (CacheOutcome::Hit, 0),
        ImageSource::Peer { rsu, .. } => (CacheOutcome::PeerHit { src: *rsu }, service.size_bytes),
        ImageSource::Cdc => (CacheOutcome::MissCdc, service.size_bytes),
    };
    let admission = match outcome {
        CacheOutcome::Hit => Admission { admitted: true, evicted: Vec::new() },
        _ => admit(policy, &mut rsus[idx].cache, service.id, service.size_bytes, tick, rng),
    };
    let event = CacheEvent {
        tick,
        rsu: target,
        service: service.id,
        size_bytes: service.size_bytes,
        outcome,
        bytes_moved,
        admitted: admission.admitted,
        evicted: admission.evicted,
    };
    (resolution, event)
}
