//! The time-slice loop.
//!
//! Every tick runs, in order: scripted commands, all RSUs (inbox lookups,
//! deployments, running tasks, slot filling), all connections, the timeout
//! sweep, all SDVs (motion, drift, request issue, sleep), service arrivals,
//! and finally the metric anchor. Within each class entities go in
//! ascending id order, and every random draw comes from a named stream, so
//! a scenario and seed fully determine the event log.

use std::collections::{BTreeMap, VecDeque};
use std::sync::mpsc::{Receiver, RecvTimeoutError, TryRecvError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cache::{self, admit, deploy_time, lookup, CacheError, CacheOutcome, CachePolicy, CachePolicyRegistry, ImageSource, Lookup};
use crate::channel::{self, find_relay_path, hops_along, mesh_path_time, sample_fading, ChannelParams};
use crate::demand::{self, drift_preferences, select_service, sleep_duration, HotRanking};
use crate::event::{Event, RsuInfo};
use crate::metrics::{MetricsCollector, MetricsFrame};
use crate::mobility::{Kinematic, MobilityModel};
use crate::offload::{time_local, OffloadPolicy, OffloadRegistry, OffloadTarget, PolicyContext, PolicyError, Snapshot, TaskRequest};
use crate::rng::RngStreams;
use crate::scenario::{Command, Scenario, ScenarioError, ScriptedEvent};
use crate::synthgen::{self, AttributeSampler, SynthError};
use crate::world::{
    distance, in_range, mutually_in_range, CdcState, Conn, ConnEvent, ConnId, ConnKind, ConnPurpose, ConnStatus, Endpoint,
    FailReason, QueuedTask, RelayLeg, RsuId, RsuState, RunningTask, SdvState, ServiceId, TaskId, Tick,
};

/// Largest feature-vector catalog the engine will allocate, bytes.
pub const MAX_CATALOG_BYTES: u64 = 8 << 30;

const EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("catalog of {services} services x {dims} dims needs {gib:.1} GiB of feature vectors")]
    TooLarge { services: usize, dims: usize, gib: f64 },
}

/// Whether stepped recomputations run on `tick`.
pub fn apply_stepping(tick: Tick, stepping: u64) -> bool {
    stepping <= 1 || tick.is_multiple_of(stepping)
}

/// Live controls, applied between ticks.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    /// Freeze the loop until `Resume`.
    Pause,
    Resume,
    Command(Command),
}

/// What a status reader sees.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub tick: Tick,
    pub horizon: Tick,
    pub paused: bool,
    pub finished: bool,
    pub sdvs: usize,
    pub rsus: usize,
    pub rsus_alive: usize,
    pub services: usize,
    pub open_conns: usize,
    pub live_tasks: usize,
    /// Latest anchor frame.
    pub frame: Option<MetricsFrame>,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub scenario_hash: String,
    pub scenario_echo: String,
    pub ticks: Tick,
    pub frames: Vec<MetricsFrame>,
    pub events: Vec<Event>,
    /// Tasks the engine still tracked at each anchor.
    pub live_tasks: Vec<(Tick, u64)>,
}

impl RunReport {
    pub fn final_frame(&self) -> Option<&MetricsFrame> {
        self.frames.last()
    }

    /// Hex SHA-256 of the NDJSON event log.
    pub fn log_hash(&self) -> String {
        let mut buf = Vec::new();
        crate::event::write_ndjson(&self.events, &mut buf).expect("write to memory");
        Sha256::digest(&buf).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stage {
    Query(ConnId),
    Upload(ConnId),
    Inbox(RsuId),
    AwaitImage(ConnId),
    Deploying(RsuId),
    Queued(RsuId),
    Running(RsuId),
    CdcExec(ConnId),
    Local,
}

#[derive(Debug, Clone)]
struct TaskRec {
    req: TaskRequest,
    hop: RsuId,
    target: Option<OffloadTarget>,
    stage: Stage,
}

impl TaskRec {
    fn routed(&self) -> Option<RsuId> {
        match self.target {
            Some(OffloadTarget::Rsu(r)) => Some(r),
            _ => Some(self.hop),
        }
    }
}

/// An image transfer into an RSU and the tasks waiting on it.
#[derive(Debug, Clone)]
struct Fetch {
    rsu: RsuId,
    service: ServiceId,
    size_bytes: u64,
    source: Option<RsuId>,
    admitted: bool,
    waiters: Vec<TaskId>,
}

enum Progress {
    Continue,
    Finished,
    Failed(FailReason),
}

/// One simulation run.
pub struct Simulation {
    scenario: Scenario,
    hash: String,
    tick: Tick,
    rsus: Vec<RsuState>,
    sdvs: Vec<SdvState>,
    cdc: CdcState,
    centers: Vec<Vec<f64>>,
    sampler: AttributeSampler,
    mobility: Box<dyn MobilityModel>,
    cache_policy: Arc<dyn CachePolicy>,
    sdv_policy: Arc<dyn CachePolicy>,
    offload: Arc<dyn OffloadPolicy>,
    streams: RngStreams,
    conns: BTreeMap<ConnId, Conn>,
    /// Remaining FLOP of tasks computing at the CDC, by connection.
    cdc_work: BTreeMap<ConnId, f64>,
    tasks: BTreeMap<TaskId, TaskRec>,
    inbox: Vec<VecDeque<TaskId>>,
    deploys: Vec<Vec<(TaskId, f64)>>,
    fetches: BTreeMap<ConnId, Fetch>,
    fetching: BTreeMap<(RsuId, ServiceId), ConnId>,
    locals: BTreeMap<TaskId, f64>,
    hot: HotRanking,
    hot_list: Vec<ServiceId>,
    last_drift: Option<Tick>,
    requests_paused: bool,
    trend: Option<(f64, Tick)>,
    script: Vec<ScriptedEvent>,
    script_pos: usize,
    control: Option<Receiver<Control>>,
    frozen: bool,
    status: Option<Arc<Mutex<Status>>>,
    next_conn: u64,
    next_task: u64,
    events: Vec<Event>,
    collector: MetricsCollector,
    frames: Vec<MetricsFrame>,
    live_at_anchors: Vec<(Tick, u64)>,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self, EngineError> {
        Self::with_registries(scenario, &CachePolicyRegistry::default(), &OffloadRegistry::default())
    }

    /// Validate the scenario and build the world at tick 0.
    pub fn with_registries(
        scenario: &Scenario,
        caches: &CachePolicyRegistry,
        offloads: &OffloadRegistry,
    ) -> Result<Self, EngineError> {
        scenario.check(caches, offloads)?;
        let w = &scenario.world;
        let catalog_bytes = w.service_count as u64 * w.vector_len as u64 * 8;
        if catalog_bytes > MAX_CATALOG_BYTES {
            return Err(EngineError::TooLarge {
                services: w.service_count,
                dims: w.vector_len,
                gib: catalog_bytes as f64 / (1u64 << 30) as f64,
            });
        }
        let mut streams = RngStreams::new(scenario.seed);
        let topo = synthgen::generate_topology(w, &mut streams.topology);
        let catalog = synthgen::generate_services(w, &mut streams.services)?;
        let mut sdvs = topo.sdvs;
        if !catalog.centers.is_empty() {
            synthgen::assign_preferences(&mut sdvs, &catalog.centers, w.dispersion, &mut streams.services);
        }
        for v in &mut sdvs {
            v.velocity = scenario.mobility.target_speed;
        }
        let rsus = topo.rsus;
        let cdc = CdcState {
            disk: catalog.services,
            compute_capacity: scenario.cdc.compute_flops,
            allocation: scenario.cdc.allocation,
            position: scenario.cdc.position,
            active_tasks: 0,
        };
        let mut script = scenario.events.clone();
        script.sort_by_key(|e| e.tick);
        let mut sim = Self {
            hash: scenario.hash(),
            tick: 0,
            inbox: vec![VecDeque::new(); rsus.len()],
            deploys: vec![Vec::new(); rsus.len()],
            rsus,
            sdvs,
            cdc,
            centers: catalog.centers,
            sampler: AttributeSampler::new(w)?,
            mobility: Box::new(Kinematic { params: scenario.mobility.clone() }),
            cache_policy: caches.resolve(&scenario.cache.policy)?,
            sdv_policy: caches.resolve(&scenario.cache.sdv_policy)?,
            offload: offloads.get(&scenario.offload.policy)?,
            streams,
            conns: BTreeMap::new(),
            cdc_work: BTreeMap::new(),
            tasks: BTreeMap::new(),
            fetches: BTreeMap::new(),
            fetching: BTreeMap::new(),
            locals: BTreeMap::new(),
            hot: HotRanking::new(scenario.demand.hot_window_ticks, scenario.demand.hot_list_len),
            hot_list: Vec::new(),
            last_drift: None,
            requests_paused: false,
            trend: None,
            script,
            script_pos: 0,
            control: None,
            frozen: false,
            status: None,
            next_conn: 0,
            next_task: 0,
            events: Vec::new(),
            collector: MetricsCollector::new(scenario.metrics.clone()),
            frames: Vec::new(),
            live_at_anchors: Vec::new(),
            scenario: scenario.clone(),
        };
        let rsu_info = sim
            .rsus
            .iter()
            .map(|r| RsuInfo {
                id: r.id,
                tx_power: r.tx_power,
                concurrency_limit: r.concurrency_limit,
                cache_capacity_bytes: r.cache.capacity_bytes(),
            })
            .collect();
        sim.emit(Event::WorldBuilt {
            tick: 0,
            rsus: rsu_info,
            sdvs: sim.sdvs.len(),
            services: sim.cdc.disk.len(),
            dt: scenario.clock.dt,
        });
        Ok(sim)
    }

    /// Receive live controls between ticks.
    pub fn attach_control(&mut self, rx: Receiver<Control>) {
        self.control = Some(rx);
    }

    /// Publish progress into `status` after every tick.
    pub fn attach_status(&mut self, status: Arc<Mutex<Status>>) {
        self.status = Some(status);
        self.publish(false);
    }

    pub fn tick(&self) -> Tick {
        self.tick
    }

    pub fn horizon(&self) -> Tick {
        self.scenario.clock.horizon
    }

    pub fn is_done(&self) -> bool {
        self.tick >= self.horizon()
    }

    pub fn rsus(&self) -> &[RsuState] {
        &self.rsus
    }

    pub fn sdvs(&self) -> &[SdvState] {
        &self.sdvs
    }

    /// Mutable SDV access for scripted test setups.
    pub fn sdvs_mut(&mut self) -> &mut [SdvState] {
        &mut self.sdvs
    }

    pub fn rsus_mut(&mut self) -> &mut [RsuState] {
        &mut self.rsus
    }

    pub fn cdc(&self) -> &CdcState {
        &self.cdc
    }

    pub fn conns(&self) -> impl Iterator<Item = &Conn> {
        self.conns.values()
    }

    pub fn live_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn frames(&self) -> &[MetricsFrame] {
        &self.frames
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Metrics as of the end of the last completed tick.
    pub fn current_frame(&self) -> MetricsFrame {
        self.collector.frame(self.tick.saturating_sub(1))
    }

    fn dt(&self) -> f64 {
        self.scenario.clock.dt
    }

    fn params(&self) -> &ChannelParams {
        &self.scenario.channel
    }

    fn emit(&mut self, e: Event) {
        self.collector.observe(&e);
        self.events.push(e);
    }

    /// Apply a command now, logging it.
    pub fn apply(&mut self, command: Command, live: bool) {
        let tick = self.tick;
        match &command {
            Command::InjectServices { count, cluster } => {
                if !self.centers.is_empty() {
                    let first = ServiceId(self.cdc.disk.len() as u32);
                    let new = demand::make_services(
                        *count,
                        first.0,
                        *cluster,
                        &self.centers,
                        self.scenario.world.dispersion,
                        &self.sampler,
                        &mut self.streams.uploads,
                    );
                    let n = new.len() as u64;
                    self.cdc.disk.extend(new);
                    self.emit(Event::ServicesUploaded { tick, first, count: n });
                }
            }
            Command::TrendBurst { multiplier, duration } => self.trend = Some((*multiplier, tick + duration)),
            Command::Pause => self.requests_paused = true,
            Command::Resume => self.requests_paused = false,
            Command::KillRsu { rsu } => self.kill_rsu(*rsu),
            Command::ReviveRsu { rsu } => {
                if let Some(r) = self.rsus.get_mut(rsu.0 as usize) {
                    r.alive = true;
                }
            }
        }
        self.emit(Event::CommandApplied { tick, command, live });
    }

    /// Drain the control queue; while frozen, block until resumed.
    fn poll_controls(&mut self) {
        loop {
            let Some(rx) = self.control.as_ref() else { return };
            let msg = if self.frozen {
                match rx.recv_timeout(Duration::from_millis(50)) {
                    Ok(m) => Some(m),
                    Err(RecvTimeoutError::Timeout) => continue,
                    Err(RecvTimeoutError::Disconnected) => {
                        self.frozen = false;
                        None
                    }
                }
            } else {
                match rx.try_recv() {
                    Ok(m) => Some(m),
                    Err(TryRecvError::Empty) => None,
                    Err(TryRecvError::Disconnected) => {
                        self.control = None;
                        None
                    }
                }
            };
            match msg {
                Some(Control::Pause) => {
                    self.frozen = true;
                    self.publish(false);
                }
                Some(Control::Resume) => {
                    self.frozen = false;
                    self.publish(false);
                }
                Some(Control::Command(c)) => self.apply(c, true),
                None if !self.frozen => return,
                None => {}
            }
        }
    }

    fn publish(&self, finished: bool) {
        let Some(status) = &self.status else { return };
        let mut s = status.lock().expect("status lock");
        s.tick = self.tick;
        s.horizon = self.horizon();
        s.paused = self.frozen;
        s.finished = finished;
        s.sdvs = self.sdvs.len();
        s.rsus = self.rsus.len();
        s.rsus_alive = self.rsus.iter().filter(|r| r.alive).count();
        s.services = self.cdc.disk.len();
        s.open_conns = self.conns.len();
        s.live_tasks = self.tasks.len();
        if let Some(f) = self.frames.last() {
            if s.frame.as_ref().is_none_or(|old| old.tick != f.tick) {
                s.frame = Some(f.clone());
            }
        }
    }

    /// Run to the horizon.
    pub fn run(mut self) -> RunReport {
        while !self.is_done() {
            self.poll_controls();
            self.step();
        }
        self.finish()
    }

    /// Close out the run into a report.
    pub fn finish(mut self) -> RunReport {
        if self.frames.is_empty() {
            let f = self.collector.frame(self.tick.saturating_sub(1));
            self.live_at_anchors.push((f.tick, self.tasks.len() as u64));
            self.frames.push(f);
        }
        self.publish(true);
        RunReport {
            name: self.scenario.name.clone(),
            seed: self.scenario.seed,
            scenario_hash: self.hash,
            scenario_echo: self.scenario.echo(),
            ticks: self.tick,
            frames: self.frames,
            events: self.events,
            live_tasks: self.live_at_anchors,
        }
    }

    /// Execute one tick.
    pub fn step(&mut self) {
        if self.is_done() {
            return;
        }
        while self.script_pos < self.script.len() && self.script[self.script_pos].tick <= self.tick {
            let cmd = self.script[self.script_pos].command.clone();
            self.script_pos += 1;
            self.apply(cmd, false);
        }
        self.rsu_phase();
        self.conn_phase();
        self.timeout_sweep();
        self.sdv_phase();
        self.service_phase();

        let tick = self.tick;
        let horizon = self.horizon();
        let every = self.scenario.metrics.anchor_every.max(1);
        if (tick + 1).is_multiple_of(every) || tick + 1 == horizon {
            self.frames.push(self.collector.frame(tick));
            self.live_at_anchors.push((tick, self.tasks.len() as u64));
        }
        self.tick += 1;
        self.publish(false);
    }

    // ---- RSUs ----

    fn rsu_phase(&mut self) {
        let dt = self.dt();
        for i in 0..self.rsus.len() {
            if !self.rsus[i].alive {
                continue;
            }
            while let Some(task) = self.inbox[i].pop_front() {
                self.serve_task(i, task);
            }

            let mut ready = Vec::new();
            self.deploys[i].retain_mut(|(task, rem)| {
                *rem -= dt;
                if *rem <= EPS {
                    ready.push(*task);
                    false
                } else {
                    true
                }
            });
            for task in ready {
                let r = self.rsus[i].id;
                let Some(rec) = self.tasks.get_mut(&task) else { continue };
                rec.stage = Stage::Queued(r);
                let duration_s = rec.req.cpu_flops / self.rsus[i].compute_capacity;
                self.rsus[i].queue.push_back(QueuedTask { task, duration_s });
                self.emit(Event::Deployed { tick: self.tick, task, target: OffloadTarget::Rsu(r) });
            }

            let mut done = Vec::new();
            self.rsus[i].running.retain_mut(|t| {
                t.remaining_s -= dt;
                if t.remaining_s <= EPS {
                    done.push(t.task);
                    false
                } else {
                    true
                }
            });
            let r = self.rsus[i].id;
            for task in done {
                self.emit(Event::ComputeEnd { tick: self.tick, task, target: OffloadTarget::Rsu(r), completed: true });
                self.finish_task(task, OffloadTarget::Rsu(r));
            }

            while self.rsus[i].has_free_slot() {
                let Some(q) = self.rsus[i].queue.pop_front() else { break };
                self.rsus[i].running.push(RunningTask { task: q.task, remaining_s: q.duration_s });
                if let Some(rec) = self.tasks.get_mut(&q.task) {
                    rec.stage = Stage::Running(r);
                }
                self.emit(Event::ComputeStart { tick: self.tick, task: q.task, target: OffloadTarget::Rsu(r) });
            }
        }
    }

    fn serve_task(&mut self, idx: usize, task: TaskId) {
        let Some(rec) = self.tasks.get(&task) else { return };
        let service = rec.req.service;
        let r = self.rsus[idx].id;
        let tick = self.tick;
        let Self { scenario, rsus, cdc, streams, cache_policy, .. } = self;
        let svc = &cdc.disk[service.0 as usize];
        let (res, ev) = cache::serve(
            cache_policy.as_ref(),
            r,
            svc,
            rsus,
            cdc,
            &scenario.channel,
            scenario.cache.collaboration,
            scenario.cache.deploy_rate,
            tick,
            &mut streams.cache,
        );
        let size = svc.size_bytes;
        let admitted = ev.admitted && ev.outcome != CacheOutcome::Hit;
        let outcome = ev.outcome;
        self.emit(Event::CacheLookup { task, cache: ev });

        if let Some(&fc) = self.fetching.get(&(r, service)) {
            self.fetches.get_mut(&fc).expect("fetch record").waiters.push(task);
            self.tasks.get_mut(&task).expect("live task").stage = Stage::AwaitImage(fc);
            return;
        }
        let (conn, source) = match (outcome, res.source) {
            (CacheOutcome::Hit, _) | (_, ImageSource::Local) => {
                self.start_deploy(idx, task);
                return;
            }
            (_, ImageSource::Peer { rsu: peer, path }) => {
                let mut c = Conn::new(
                    self.conn_id(),
                    ConnKind::R2R,
                    Endpoint::Rsu(peer),
                    Endpoint::Rsu(path[1]),
                    size,
                    0.0,
                    tick,
                    ConnPurpose::ImageFetch { rsu: r, service, source: Some(peer) },
                );
                if path.len() > 2 {
                    c.relay = Some(self.relay_leg(&path[1..], size));
                }
                self.rsus[peer.0 as usize].cache.pin(service);
                (c, Some(peer))
            }
            (_, ImageSource::Cdc) => {
                let rtt = channel::rtt_backhaul(&self.rsus[idx], &self.cdc, self.params());
                let c = Conn::new(
                    self.conn_id(),
                    ConnKind::R2C,
                    Endpoint::Cdc,
                    Endpoint::Rsu(r),
                    size,
                    rtt,
                    tick,
                    ConnPurpose::ImageFetch { rsu: r, service, source: None },
                );
                (c, None)
            }
        };
        if admitted {
            self.rsus[idx].cache.pin(service);
        }
        let id = c_id(&conn);
        self.fetches.insert(id, Fetch { rsu: r, service, size_bytes: size, source, admitted, waiters: vec![task] });
        self.fetching.insert((r, service), id);
        self.tasks.get_mut(&task).expect("live task").stage = Stage::AwaitImage(id);
        self.open_conn(conn, None);
    }

    fn start_deploy(&mut self, idx: usize, task: TaskId) {
        let Some(rec) = self.tasks.get_mut(&task) else { return };
        rec.stage = Stage::Deploying(self.rsus[idx].id);
        let t = deploy_time(rec.req.image_bytes, self.scenario.cache.deploy_rate);
        self.deploys[idx].push((task, t));
    }

    fn relay_leg(&self, path: &[RsuId], payload: u64) -> RelayLeg {
        let p = self.params();
        let remaining_s = hops_along(path, &self.rsus)
            .ok()
            .and_then(|h| mesh_path_time(&h, payload, p, p.fading_scale).ok())
            .unwrap_or(f64::INFINITY);
        RelayLeg { via: path[0], path: path.to_vec(), remaining_s }
    }

    fn conn_id(&mut self) -> ConnId {
        let id = ConnId(self.next_conn);
        self.next_conn += 1;
        id
    }

    fn open_conn(&mut self, mut c: Conn, task: Option<TaskId>) -> ConnId {
        c.task = task;
        let id = c.id;
        self.emit(Event::ConnOpened {
            tick: self.tick,
            conn: id,
            kind: c.kind,
            src: c.src,
            dst: c.dst,
            bytes: c.total_bytes,
            purpose: c.purpose,
            task,
        });
        self.conns.insert(id, c);
        id
    }

    fn close_conn(&mut self, c: &Conn) {
        self.emit(Event::ConnClosed { tick: self.tick, conn: c.id, status: c.status, reason: c.failure });
    }

    // ---- connections ----

    fn transmitting(&self) -> BTreeMap<RsuId, usize> {
        let mut share = BTreeMap::new();
        for c in self.conns.values() {
            if c.status == ConnStatus::Transmitting && c.remaining_bytes > 0.0 {
                if let Some(r) = c.radio_owner() {
                    *share.entry(r).or_insert(0) += 1;
                }
            }
        }
        share
    }

    fn conn_phase(&mut self) {
        let share = self.transmitting();
        let active = self.conns.values().filter(|c| c.status == ConnStatus::Computing).count();
        self.cdc.active_tasks = active;
        let per_task = self.cdc.per_task_flops(active.max(1));
        let mut last: Option<ConnId> = None;
        loop {
            let next = match last {
                None => self.conns.keys().next().copied(),
                Some(l) => self.conns.range(ConnId(l.0 + 1)..).next().map(|(k, _)| *k),
            };
            let Some(id) = next else { break };
            last = Some(id);
            let mut c = self.conns.remove(&id).expect("listed conn");
            match self.advance(&mut c, &share, per_task) {
                Progress::Continue => {
                    self.conns.insert(id, c);
                }
                Progress::Finished => {
                    self.close_conn(&c);
                    self.on_finished(c);
                }
                Progress::Failed(reason) => {
                    c.fail(reason).expect("non-terminal conn");
                    self.close_conn(&c);
                    self.on_failed(c, reason);
                }
            }
        }
    }

    fn advance(&mut self, c: &mut Conn, share: &BTreeMap<RsuId, usize>, per_task: f64) -> Progress {
        let mut budget = self.dt();
        loop {
            match c.status {
                ConnStatus::Pending => {
                    c.apply(ConnEvent::Establish).expect("legal");
                }
                ConnStatus::Established => {
                    let used = c.propagation_s.min(budget);
                    c.propagation_s -= used;
                    budget -= used;
                    if c.propagation_s > EPS {
                        return Progress::Continue;
                    }
                    c.apply(ConnEvent::BeginTransmit).expect("legal");
                }
                ConnStatus::Transmitting => {
                    if c.remaining_bytes > 0.0 {
                        let rate = match self.conn_rate(c, share) {
                            Ok(r) => r,
                            Err(reason) => return Progress::Failed(reason),
                        };
                        if rate <= 0.0 {
                            return Progress::Continue;
                        }
                        let need = c.remaining_bytes * 8.0 / rate;
                        if need > budget + EPS {
                            c.remaining_bytes = (c.remaining_bytes - rate * budget / 8.0).max(0.0);
                            return Progress::Continue;
                        }
                        c.remaining_bytes = 0.0;
                        budget = (budget - need).max(0.0);
                    }
                    if let Some(relay) = &mut c.relay {
                        if !relay.path.iter().all(|r| self.rsus[r.0 as usize].alive) {
                            return Progress::Failed(FailReason::EndpointDown);
                        }
                        if relay.remaining_s > budget + EPS {
                            relay.remaining_s -= budget;
                            return Progress::Continue;
                        }
                        budget = (budget - relay.remaining_s).max(0.0);
                        relay.remaining_s = 0.0;
                    }
                    if c.computes {
                        c.apply(ConnEvent::BeginCompute).expect("legal");
                        if let Some(task) = c.task {
                            self.emit(Event::ComputeStart { tick: self.tick, task, target: OffloadTarget::Cdc });
                        }
                    } else {
                        c.apply(ConnEvent::Finish).expect("legal");
                        return Progress::Finished;
                    }
                }
                ConnStatus::Computing => {
                    let work = self.cdc_work.entry(c.id).or_insert(0.0);
                    let need = *work / per_task;
                    if need > budget + EPS {
                        *work -= per_task * budget;
                        return Progress::Continue;
                    }
                    *work = 0.0;
                    c.apply(ConnEvent::Finish).expect("legal");
                    return Progress::Finished;
                }
                ConnStatus::Finished | ConnStatus::Failed => unreachable!("terminal conns are removed"),
            }
        }
    }

    fn rsu_alive(&self, e: Endpoint) -> bool {
        match e {
            Endpoint::Rsu(r) => self.rsus.get(r.0 as usize).is_some_and(|r| r.alive),
            _ => true,
        }
    }

    fn conn_rate(&mut self, c: &mut Conn, share: &BTreeMap<RsuId, usize>) -> Result<f64, FailReason> {
        if !self.rsu_alive(c.src) || !self.rsu_alive(c.dst) {
            return Err(FailReason::EndpointDown);
        }
        if c.kind == ConnKind::R2C {
            return Ok(self.params().backhaul_rate_bps);
        }
        let tick = self.tick;
        let every = self.params().resample_fading_every.max(1);
        let due = c.fading_tick.is_none_or(|t| {
            tick - t >= every && apply_stepping(tick, self.scenario.clock.stepping)
        });
        if due {
            c.fading_gain = sample_fading(&mut self.streams.fading, &self.scenario.channel);
            c.fading_tick = Some(tick);
        }
        let n = c.radio_owner().map_or(1, |r| share.get(&r).copied().unwrap_or(0).max(1));
        let rate = match (c.src, c.dst) {
            (Endpoint::Sdv(v), Endpoint::Rsu(_)) | (Endpoint::Rsu(_), Endpoint::Sdv(v)) => {
                let mut r = match (c.src, c.dst) {
                    (_, Endpoint::Rsu(r)) | (Endpoint::Rsu(r), _) => r,
                    _ => unreachable!(),
                };
                if !in_range(&self.sdvs[v.0 as usize], &self.rsus[r.0 as usize]) {
                    r = self.reroute(c)?;
                }
                let p = &self.scenario.channel;
                channel::link_rate(&self.sdvs[v.0 as usize], &self.rsus[r.0 as usize], p, c.fading_gain)
            }
            (Endpoint::Rsu(a), Endpoint::Rsu(b)) => {
                let (a, b) = (&self.rsus[a.0 as usize], &self.rsus[b.0 as usize]);
                if !mutually_in_range(a, b) {
                    return Err(FailReason::OutOfRange);
                }
                channel::link_rate(a, b, &self.scenario.channel, c.fading_gain)
            }
            (Endpoint::Sdv(a), Endpoint::Sdv(b)) => {
                channel::link_rate(&self.sdvs[a.0 as usize], &self.sdvs[b.0 as usize], &self.scenario.channel, c.fading_gain)
            }
            _ => return Ok(self.scenario.channel.backhaul_rate_bps),
        };
        Ok(channel::effective_rate(rate, n))
    }

    /// Move an uplink whose SDV left coverage to another in-range RSU that
    /// can relay to the original destination.
    fn reroute(&mut self, c: &mut Conn) -> Result<RsuId, FailReason> {
        let Endpoint::Sdv(v) = c.src else { return Err(FailReason::OutOfRange) };
        let Endpoint::Rsu(dst) = c.dst else { return Err(FailReason::OutOfRange) };
        let cdc_bound = c.task.and_then(|t| self.tasks.get(&t)).and_then(|t| t.target) == Some(OffloadTarget::Cdc);
        let last = c.relay.as_ref().and_then(|r| r.path.last().copied()).unwrap_or(dst);
        let sdv = &self.sdvs[v.0 as usize];
        let mut options: Vec<&RsuState> =
            self.rsus.iter().filter(|r| r.alive && r.id != dst && in_range(sdv, r)).collect();
        options.sort_by(|a, b| distance(sdv, *a).total_cmp(&distance(sdv, *b)).then(a.id.cmp(&b.id)));
        for cand in options {
            if cdc_bound {
                c.dst = Endpoint::Rsu(cand.id);
                c.relay = None;
                return Ok(cand.id);
            }
            if let Some(path) = find_relay_path(cand.id, last, &self.rsus) {
                let id = cand.id;
                c.dst = Endpoint::Rsu(id);
                c.relay = (path.len() > 1).then(|| self.relay_leg(&path, c.total_bytes));
                return Ok(id);
            }
        }
        Err(FailReason::OutOfRange)
    }

    fn on_finished(&mut self, c: Conn) {
        match c.purpose {
            ConnPurpose::ImageFetch { .. } => self.fetch_done(c.id, None),
            ConnPurpose::PolicyQuery => {
                if let Some(task) = c.task {
                    self.decide(task);
                }
            }
            ConnPurpose::Upload => {
                let Some(task) = c.task else { return };
                let Endpoint::Rsu(dst) = c.dst else { return };
                let at = c.relay.as_ref().and_then(|r| r.path.last().copied()).unwrap_or(dst);
                let Some(rec) = self.tasks.get_mut(&task) else { return };
                match rec.target {
                    Some(OffloadTarget::Cdc) => {
                        let bytes = rec.req.input_bytes;
                        let flops = rec.req.cpu_flops;
                        let rtt = channel::rtt_backhaul(&self.rsus[at.0 as usize], &self.cdc, self.params());
                        let mut conn = Conn::new(
                            self.conn_id(),
                            ConnKind::R2C,
                            Endpoint::Rsu(at),
                            Endpoint::Cdc,
                            bytes,
                            rtt,
                            self.tick,
                            ConnPurpose::CdcExecute,
                        );
                        conn.computes = true;
                        self.cdc_work.insert(conn.id, flops);
                        let id = self.open_conn(conn, Some(task));
                        self.tasks.get_mut(&task).expect("live task").stage = Stage::CdcExec(id);
                    }
                    _ => {
                        rec.stage = Stage::Inbox(at);
                        self.inbox[at.0 as usize].push_back(task);
                    }
                }
            }
            ConnPurpose::CdcExecute => {
                self.cdc_work.remove(&c.id);
                if let Some(task) = c.task {
                    self.emit(Event::ComputeEnd { tick: self.tick, task, target: OffloadTarget::Cdc, completed: true });
                    self.finish_task(task, OffloadTarget::Cdc);
                }
            }
        }
    }

    fn on_failed(&mut self, c: Conn, reason: FailReason) {
        if let ConnPurpose::ImageFetch { .. } = c.purpose {
            self.fetch_done(c.id, Some(reason));
            return;
        }
        if self.cdc_work.remove(&c.id).is_some() && c.kind == ConnKind::R2C && c.computes {
            // Only a conn that reached Computing emitted ComputeStart.
            if c.remaining_bytes <= 0.0 && c.relay.as_ref().is_none_or(|r| r.remaining_s <= 0.0) {
                if let Some(task) = c.task {
                    self.emit(Event::ComputeEnd { tick: self.tick, task, target: OffloadTarget::Cdc, completed: false });
                }
            }
        }
        if let Some(task) = c.task {
            self.abort_task(task, reason);
        }
    }

    fn fetch_done(&mut self, conn: ConnId, failure: Option<FailReason>) {
        let Some(f) = self.fetches.remove(&conn) else { return };
        self.fetching.remove(&(f.rsu, f.service));
        let idx = f.rsu.0 as usize;
        if f.admitted {
            self.rsus[idx].cache.unpin(f.service);
        }
        if let Some(src) = f.source {
            self.rsus[src.0 as usize].cache.unpin(f.service);
        }
        match failure {
            None => {
                for task in f.waiters {
                    self.start_deploy(idx, task);
                }
            }
            Some(reason) => {
                if f.admitted && self.rsus[idx].cache.remove(f.service).is_some() {
                    self.emit(Event::CacheDropped {
                        tick: self.tick,
                        rsu: f.rsu,
                        service: f.service,
                        size_bytes: f.size_bytes,
                    });
                }
                for task in f.waiters {
                    self.abort_task(task, reason);
                }
            }
        }
    }

    // ---- tasks ----

    fn decide(&mut self, task: TaskId) {
        let Some(rec) = self.tasks.get(&task) else { return };
        let hop = rec.hop;
        if !self.rsus[hop.0 as usize].alive {
            self.abort_task(task, FailReason::EndpointDown);
            return;
        }
        let req = rec.req.clone();
        let share = self.transmitting();
        let p = &self.scenario.channel;
        let snap = Snapshot {
            tick: self.tick,
            sdv: &self.sdvs[req.origin.0 as usize],
            hop: Some(hop),
            rsus: &self.rsus,
            cdc: &self.cdc,
            params: p,
            fading_gain: p.fading_scale,
            transmitting: &share,
        };
        let ctx = PolicyContext::build(&req, &snap);
        let (target, fallback) = match self.offload.decide(&ctx) {
            Ok(d) if ctx.estimate(d.target).is_ok() => (d.target, false),
            _ => (OffloadTarget::Cdc, true),
        };
        let estimate = ctx.estimate(target);
        self.emit(Event::PolicyDecision {
            tick: self.tick,
            task,
            policy: self.offload.name().to_string(),
            target,
            fallback,
            estimate_s: estimate.as_ref().ok().map(|b| b.total_s),
        });
        if estimate.is_err() {
            self.abort_task(task, FailReason::Unreachable);
            return;
        }
        self.tasks.get_mut(&task).expect("live task").target = Some(target);
        match target {
            OffloadTarget::Local => self.start_local(task),
            OffloadTarget::Rsu(_) | OffloadTarget::Cdc => {
                let mut c = Conn::new(
                    self.conn_id(),
                    ConnKind::V2R,
                    Endpoint::Sdv(req.origin),
                    Endpoint::Rsu(hop),
                    req.input_bytes,
                    0.0,
                    self.tick,
                    ConnPurpose::Upload,
                );
                if let OffloadTarget::Rsu(r) = target {
                    if r != hop {
                        let path = ctx.rsu(r).and_then(|v| v.relay_path.clone()).expect("feasible target has a path");
                        c.relay = Some(self.relay_leg(&path, req.input_bytes));
                    }
                }
                let id = self.open_conn(c, Some(task));
                self.tasks.get_mut(&task).expect("live task").stage = Stage::Upload(id);
            }
        }
    }

    fn start_local(&mut self, task: TaskId) {
        let rec = self.tasks.get_mut(&task).expect("live task");
        rec.stage = Stage::Local;
        let req = rec.req.clone();
        let hop = &self.rsus[rec.hop.0 as usize];
        let p = &self.scenario.channel;
        let sdv = &mut self.sdvs[req.origin.0 as usize];
        let mut t = 0.0;
        if lookup(&mut sdv.cache, req.service, self.tick) == Lookup::Miss {
            t += channel::rtt_backhaul(hop, &self.cdc, p)
                + channel::backhaul_transfer_time(req.image_bytes, p)
                + req.image_bytes as f64 * 8.0 / channel::link_rate(&*sdv, hop, p, p.fading_scale);
            admit(self.sdv_policy.as_ref(), &mut sdv.cache, req.service, req.image_bytes, self.tick, &mut self.streams.cache);
        }
        t += deploy_time(req.image_bytes, self.scenario.cache.deploy_rate) + time_local(req.cpu_flops, sdv.compute_capacity);
        self.locals.insert(task, t);
        self.emit(Event::ComputeStart { tick: self.tick, task, target: OffloadTarget::Local });
    }

    fn finish_task(&mut self, task: TaskId, target: OffloadTarget) {
        let Some(rec) = self.tasks.remove(&task) else { return };
        let latency_s = (self.tick - rec.req.issue_tick) as f64 * self.dt();
        if latency_s > rec.req.timeout_s + EPS {
            self.emit(Event::TaskFailed { tick: self.tick, task, routed: rec.routed(), reason: FailReason::Timeout });
            return;
        }
        self.emit(Event::TaskFinished {
            tick: self.tick,
            task,
            routed: rec.routed(),
            target,
            latency_s,
            image_bytes: rec.req.image_bytes,
        });
    }

    /// Fail a task wherever it currently is.
    fn abort_task(&mut self, task: TaskId, reason: FailReason) {
        let Some(rec) = self.tasks.remove(&task) else { return };
        let tick = self.tick;
        match rec.stage {
            Stage::Query(c) | Stage::Upload(c) | Stage::CdcExec(c) => {
                if let Some(mut conn) = self.conns.remove(&c) {
                    let computing = conn.status == ConnStatus::Computing;
                    conn.fail(reason).expect("live conn is non-terminal");
                    self.close_conn(&conn);
                    self.cdc_work.remove(&c);
                    if computing {
                        self.emit(Event::ComputeEnd { tick, task, target: OffloadTarget::Cdc, completed: false });
                    }
                }
            }
            Stage::Inbox(r) => self.inbox[r.0 as usize].retain(|t| *t != task),
            Stage::AwaitImage(c) => {
                if let Some(f) = self.fetches.get_mut(&c) {
                    f.waiters.retain(|t| *t != task);
                }
            }
            Stage::Deploying(r) => self.deploys[r.0 as usize].retain(|(t, _)| *t != task),
            Stage::Queued(r) => self.rsus[r.0 as usize].queue.retain(|q| q.task != task),
            Stage::Running(r) => {
                self.rsus[r.0 as usize].running.retain(|q| q.task != task);
                self.emit(Event::ComputeEnd { tick, task, target: OffloadTarget::Rsu(r), completed: false });
            }
            Stage::Local => {
                self.locals.remove(&task);
                self.emit(Event::ComputeEnd { tick, task, target: OffloadTarget::Local, completed: false });
            }
        }
        self.emit(Event::TaskFailed { tick, task, routed: rec.routed(), reason });
    }

    fn timeout_sweep(&mut self) {
        let dt = self.dt();
        let tick = self.tick;
        let expired: Vec<TaskId> = self
            .tasks
            .iter()
            .filter(|(_, r)| (tick - r.req.issue_tick) as f64 * dt > r.req.timeout_s + EPS)
            .map(|(id, _)| *id)
            .collect();
        for task in expired {
            self.abort_task(task, FailReason::Timeout);
        }
    }

    fn kill_rsu(&mut self, rsu: RsuId) {
        let Some(r) = self.rsus.get_mut(rsu.0 as usize) else { return };
        r.alive = false;
        let touches = |c: &Conn| {
            c.src == Endpoint::Rsu(rsu)
                || c.dst == Endpoint::Rsu(rsu)
                || c.relay.as_ref().is_some_and(|l| l.path.contains(&rsu))
        };
        let doomed: Vec<ConnId> = self.conns.values().filter(|c| touches(c)).map(|c| c.id).collect();
        for id in doomed {
            let Some(mut c) = self.conns.remove(&id) else { continue };
            c.fail(FailReason::EndpointDown).expect("live conn is non-terminal");
            self.close_conn(&c);
            self.on_failed(c, FailReason::EndpointDown);
        }
        let stranded: Vec<TaskId> = self
            .tasks
            .iter()
            .filter(|(_, t)| {
                matches!(t.stage, Stage::Inbox(r) | Stage::Deploying(r) | Stage::Queued(r) | Stage::Running(r) if r == rsu)
            })
            .map(|(id, _)| *id)
            .collect();
        for task in stranded {
            self.abort_task(task, FailReason::EndpointDown);
        }
    }

    // ---- SDVs ----

    fn nearest_hop(&self, v: &SdvState) -> Option<RsuId> {
        self.rsus
            .iter()
            .filter(|r| r.alive && in_range(v, r))
            .min_by(|a, b| distance(v, *a).total_cmp(&distance(v, *b)).then(a.id.cmp(&b.id)))
            .map(|r| r.id)
    }

    /// Standard deviation of this tick's preference drift, zero when none is due.
    fn drift_std(&mut self) -> f64 {
        let tick = self.tick;
        let d = &self.scenario.demand;
        if !apply_stepping(tick, self.scenario.clock.stepping) || d.drift_std <= 0.0 {
            return 0.0;
        }
        let every = d.drift_every.max(1);
        let due = match self.last_drift {
            None => tick / every + 1,
            Some(last) => tick / every - last / every,
        };
        if due == 0 {
            return 0.0;
        }
        self.last_drift = Some(tick);
        let mult = match self.trend {
            Some((m, until)) if tick < until => m,
            _ => 1.0,
        };
        d.drift_std * mult * (due as f64).sqrt()
    }

    fn sdv_phase(&mut self) {
        let dt = self.dt();
        let tick = self.tick;
        if apply_stepping(tick, self.scenario.clock.stepping) {
            self.hot_list = self.hot.ranking(tick);
        }

        let mut done = Vec::new();
        for (task, rem) in self.locals.iter_mut() {
            *rem -= dt;
            if *rem <= EPS {
                done.push(*task);
            }
        }
        for task in done {
            self.locals.remove(&task);
            self.emit(Event::ComputeEnd { tick, task, target: OffloadTarget::Local, completed: true });
            self.finish_task(task, OffloadTarget::Local);
        }

        let drift = self.drift_std();
        let canvas = self.scenario.world.canvas;
        for i in 0..self.sdvs.len() {
            self.mobility.step(&mut self.sdvs[i], &canvas, dt, &mut self.streams.mobility);
            if drift > 0.0 {
                drift_preferences(&mut self.sdvs[i].preference, drift, &mut self.streams.demand);
            }
            if let crate::world::Activity::Sleeping { until } = self.sdvs[i].activity {
                if until <= tick {
                    self.sdvs[i].activity = crate::world::Activity::Active;
                }
            }
            if self.sdvs[i].is_active() && !self.requests_paused && !self.cdc.disk.is_empty() {
                self.issue(i);
            }
        }
    }

    fn issue(&mut self, i: usize) {
        let tick = self.tick;
        let d = &self.scenario.demand;
        let sdv = &self.sdvs[i];
        let service = select_service(&sdv.preference, &sdv.accessed, &self.cdc.disk, &self.hot_list, d, &mut self.streams.demand);
        let input_bytes = self.streams.demand.random_range(d.input_bytes.min..=d.input_bytes.max).round() as u64;
        let hop = self.nearest_hop(sdv);
        let svc = &self.cdc.disk[service.0 as usize];
        let task = TaskId(self.next_task);
        self.next_task += 1;
        let req = TaskRequest {
            id: task,
            origin: sdv.id,
            service,
            cpu_flops: svc.cpu_demand,
            input_bytes,
            image_bytes: svc.size_bytes,
            timeout_s: svc.timeout_s,
            issue_tick: tick,
        };
        let sdv = &mut self.sdvs[i];
        sdv.accessed.insert(service, tick);
        sdv.requests_issued += 1;
        let issued = sdv.requests_issued;
        let origin = sdv.id;
        self.hot.record(tick, service);
        self.emit(Event::RequestIssued {
            tick,
            task,
            sdv: origin,
            service,
            hop,
            input_bytes,
            image_bytes: req.image_bytes,
        });
        match hop {
            None => self.emit(Event::TaskFailed { tick, task, routed: None, reason: FailReason::Unreachable }),
            Some(h) => {
                let rtt = channel::rtt_backhaul(&self.rsus[h.0 as usize], &self.cdc, self.params());
                let c = Conn::new(self.conn_id(), ConnKind::R2C, Endpoint::Rsu(h), Endpoint::Cdc, 0, rtt, tick, ConnPurpose::PolicyQuery);
                let id = self.open_conn(c, Some(task));
                self.tasks.insert(task, TaskRec { req, hop: h, target: None, stage: Stage::Query(id) });
            }
        }

        let d = &self.scenario.demand;
        let draw: f64 = self.streams.demand.random();
        let sleep = draw < d.sleep_probability || d.sleep_every_n_requests.is_some_and(|n| issued.is_multiple_of(n));
        if sleep {
            let v = &self.sdvs[i];
            let ticks = sleep_duration(v.acceleration, v.velocity, d, self.scenario.clock.dt, &mut self.streams.demand);
            if ticks > 0 {
                self.sdvs[i].activity = crate::world::Activity::Sleeping { until: tick + ticks };
            }
        }
    }

    // ---- services ----

    fn service_phase(&mut self) {
        let d = &self.scenario.demand;
        if d.upload_rate <= 0.0 || self.centers.is_empty() {
            return;
        }
        let first = ServiceId(self.cdc.disk.len() as u32);
        let new = demand::upload_services(
            first.0,
            &self.centers,
            self.scenario.world.dispersion,
            &self.sampler,
            d,
            &mut self.streams.uploads,
        );
        if !new.is_empty() {
            let count = new.len() as u64;
            self.cdc.disk.extend(new);
            self.emit(Event::ServicesUploaded { tick: self.tick, first, count });
        }
    }
}

fn c_id(c: &Conn) -> ConnId {
    c.id
}

/// Build and run a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<RunReport, EngineError> {
    Ok(Simulation::new(scenario)?.run())
}
