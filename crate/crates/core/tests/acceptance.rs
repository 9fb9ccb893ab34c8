//! Acceptance checks. Runs as a plain binary and prints one PASS/FAIL line
//! per criterion; exits nonzero if any criterion fails.

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use vecsim::cache::{self, admit, lookup, CachePolicy, CachePolicyKind, CachePolicyRegistry, CacheStore, CollaborationReach};
use vecsim::channel::ChannelParams;
use vecsim::demand::{sleep_bounds, sleep_seconds, DemandParams};
use vecsim::engine::{self, RunReport};
use vecsim::event::{write_ndjson, Event};
use vecsim::offload::{total_task_time, OffloadDecision, OffloadTarget, PolicyContext, Snapshot, TaskRequest};
use vecsim::scenario::Scenario;
use vecsim::synthgen::{self, cosine, zipf_pmf, GenConfig, ZipfParams, ZipfSampler, GB};
use vecsim::world::{
    transition, CdcAllocation, CdcState, ConnEvent, ConnStatus, Position, QueuedTask, RsuId, RsuState, RunningTask,
    SdvState, ServiceId, ServiceSpec, TaskId,
};

// Tolerances and sizes.
const SEEDS: u64 = 10;
const MIN_ORDERED_SEEDS: usize = 9;
const RUN_BUDGET: Duration = Duration::from_secs(60);
const ZIPF_DRAWS: usize = 1_000_000;
const P_MIN: f64 = 0.01;
const PMF_TOL: f64 = 1e-12;
const APPORTION_CONFIGS: usize = 50;
const CLUSTER_SEEDS: u64 = 20;
const CLUSTER_MARGIN: f64 = 0.05;
const TRACES: usize = 1000;
const SNAPSHOTS: usize = 10_000;
const TIMING_REL_TOL: f64 = 1e-12;
const FUZZ_SEQUENCES: usize = 100_000;
const STEPPING_REL_TOL: f64 = 0.05;
const STEPPING_SEEDS: u64 = 3;
const SLEEP_DRAWS: usize = 100_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn desk() -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/desk.toml");
    Scenario::load(&path).expect("shipped desk scenario loads")
}

/// Every run the acceptance suite performs, kept for the conservation audit.
#[derive(Default)]
struct Runs {
    reports: Vec<(String, RunReport)>,
}

impl Runs {
    fn run(&mut self, label: String, s: &Scenario) -> (RunReport, Duration) {
        let start = Instant::now();
        let r = engine::run(s).expect("scenario runs");
        let took = start.elapsed();
        self.reports.push((label, r.clone()));
        (r, took)
    }
}

fn main() {
    let mut runs = Runs::default();
    let checks: Vec<(&str, Box<dyn FnOnce(&mut Runs) -> Outcome>)> = vec![
        ("1 cache policy ordering", Box::new(policy_ordering)),
        ("2 zipf fidelity", Box::new(|_: &mut Runs| zipf_fidelity())),
        ("3 apportionment", Box::new(|_: &mut Runs| apportionment())),
        ("4 cluster structure", Box::new(|_: &mut Runs| cluster_structure())),
        ("5 eviction oracles", Box::new(|_: &mut Runs| eviction_oracles())),
        ("6 timing algebra", Box::new(|_: &mut Runs| timing_algebra())),
        ("7 determinism", Box::new(determinism)),
        ("9 stepping tolerance", Box::new(stepping_tolerance)),
        ("10 sleep model", Box::new(|_: &mut Runs| sleep_model())),
    ];
    let mut results = Vec::new();
    for (name, check) in checks {
        let start = Instant::now();
        let o = check(&mut runs);
        results.push((name, o, start.elapsed()));
    }
    // Conservation is audited over every run above, so it goes last.
    let start = Instant::now();
    let c8 = conn_machine(&runs);
    results.insert(7, ("8 conn machine and conservation", c8, start.elapsed()));

    let mut failed = 0;
    for (name, o, took) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("{tag} {name}: {} [{:.1}s]", o.detail, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// 1 -------------------------------------------------------------------------

fn policy_ordering(runs: &mut Runs) -> Outcome {
    let base = desk();
    let sizes = [4u64, 8, 16];
    let mut ordered = 0;
    let mut monotone = true;
    let mut slowest = Duration::ZERO;
    let mut notes = Vec::new();
    for seed in 1..=SEEDS {
        let mut hr: BTreeMap<(String, u64), f64> = BTreeMap::new();
        for gb in sizes {
            for policy in CachePolicyKind::BASELINES {
                let mut s = base.clone();
                s.seed = seed;
                s.world.rsu_cache_bytes = gb * GB;
                s.cache.policy = policy.clone();
                let (r, took) = runs.run(format!("{} {gb}GB seed {seed}", policy.label()), &s);
                slowest = slowest.max(took);
                hr.insert((policy.label().to_string(), gb), r.final_frame().unwrap().global.hit_rate);
            }
        }
        let h = |p: &str, gb: u64| hr[&(p.to_string(), gb)];
        let seed_ok = sizes.iter().all(|&gb| {
            h("lfu", gb) >= h("lru", gb)
                && h("lru", gb) >= h("clock", gb).max(h("fifo", gb))
                && h("clock", gb).max(h("fifo", gb)) > h("random", gb)
        });
        if seed_ok {
            ordered += 1;
        } else {
            notes.push(format!("seed {seed} out of order"));
        }
        for p in ["random", "fifo", "lru", "lfu", "clock"] {
            if !(h(p, 4) <= h(p, 8) && h(p, 8) <= h(p, 16)) {
                monotone = false;
                notes.push(format!("seed {seed} {p} not monotone"));
            }
        }
    }
    let pass = ordered >= MIN_ORDERED_SEEDS && monotone && slowest <= RUN_BUDGET;
    outcome(
        pass,
        format!(
            "ordered in {ordered}/{SEEDS} seeds (need {MIN_ORDERED_SEEDS}), monotone={monotone}, slowest run {:.2}s{}{}",
            slowest.as_secs_f64(),
            if notes.is_empty() { "" } else { "; " },
            notes.join(", ")
        ),
    )
}

// 2 -------------------------------------------------------------------------

fn zipf_fidelity() -> Outcome {
    let params = ZipfParams::new(100, 1.0);
    let pmf: Vec<f64> = (1..=100).map(|k| zipf_pmf(params, k).unwrap()).collect();
    let sum: f64 = pmf.iter().sum();
    let sampler = ZipfSampler::new(params);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut counts = vec![0u64; 100];
    for _ in 0..ZIPF_DRAWS {
        counts[sampler.sample(&mut rng) as usize - 1] += 1;
    }
    // Oracle PMF straight from k^-alpha / sum_j j^-alpha.
    let h: f64 = (1..=100).map(|j| 1.0 / j as f64).sum();
    let stat: f64 = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let e = ZIPF_DRAWS as f64 / ((i + 1) as f64 * h);
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let p = 1.0 - ChiSquared::new(99.0).unwrap().cdf(stat);
    let pass = p > P_MIN && (sum - 1.0).abs() <= PMF_TOL;
    outcome(pass, format!("chi2={stat:.1} p={p:.3}, pmf sum-1={:.1e}", sum - 1.0))
}

// 3 -------------------------------------------------------------------------

fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let mut seats: Vec<(usize, f64)> = weights
        .iter()
        .map(|w| {
            let q = total as f64 * w / sum;
            (q.floor() as usize, q - q.floor())
        })
        .collect();
    let mut left = total - seats.iter().map(|s| s.0).sum::<usize>();
    while left > 0 {
        let mut best = 0;
        for i in 1..seats.len() {
            if seats[i].1 > seats[best].1 {
                best = i;
            }
        }
        seats[best].0 += 1;
        seats[best].1 = -1.0;
        left -= 1;
    }
    seats.into_iter().map(|s| s.0).collect()
}

fn apportionment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut outside = 0;
    let mut sdvs = 0;
    for _ in 0..APPORTION_CONFIGS {
        let rsu_count = rng.random_range(1..=12);
        let density: Vec<f64> = (0..rsu_count).map(|_| rng.random_range(0.05..5.0)).collect();
        let cfg = GenConfig {
            sdv_count: rng.random_range(1..=500),
            rsu_count,
            density: density.clone(),
            service_count: 10,
            ..GenConfig::default()
        };
        let topo = synthgen::generate_topology(&cfg, &mut rng);
        let expect = largest_remainder(cfg.sdv_count, &density);
        if topo.cluster_counts != expect || topo.sdvs.len() != cfg.sdv_count {
            mismatches += 1;
        }
        for (raw, &c) in topo.raw_positions.iter().zip(&topo.cluster_of) {
            let r = &topo.rsus[c];
            let d = ((raw.x - r.position.x).powi(2) + (raw.y - r.position.y).powi(2)).sqrt();
            if d > r.coverage_radius + 1e-9 {
                outside += 1;
            }
            sdvs += 1;
        }
    }
    outcome(
        mismatches == 0 && outside == 0,
        format!("{mismatches}/{APPORTION_CONFIGS} configs differ from largest remainder, {outside}/{sdvs} SDVs outside coverage"),
    )
}

// 4 -------------------------------------------------------------------------

fn cluster_structure() -> Outcome {
    let mut worst = f64::INFINITY;
    for seed in 0..CLUSTER_SEEDS {
        let cfg = GenConfig { cluster_count: 5, service_count: 1000, vector_len: 128, ..GenConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fs = synthgen::generate_feature_vectors(&cfg, &mut rng);
        let (mut within, mut nw, mut cross, mut nc) = (0.0, 0u64, 0.0, 0u64);
        for i in 0..fs.vectors.len() {
            for j in i + 1..fs.vectors.len() {
                let c = cosine(&fs.vectors[i], &fs.vectors[j]);
                if fs.clusters[i] == fs.clusters[j] {
                    within += c;
                    nw += 1;
                } else {
                    cross += c;
                    nc += 1;
                }
            }
        }
        worst = worst.min(within / nw as f64 - cross / nc as f64);
    }
    outcome(worst > CLUSTER_MARGIN, format!("smallest within-minus-cross margin {worst:.4} over {CLUSTER_SEEDS} seeds"))
}

// 5 -------------------------------------------------------------------------

/// Reference caches over unit-size items, written without the store.
enum Reference {
    Fifo(VecDeque<u32>),
    Lru(Vec<u32>),
    Lfu(Vec<(u32, u64, u64)>),
    Clock(VecDeque<(u32, bool)>),
    Random(Vec<u32>, ChaCha8Rng),
}

impl Reference {
    fn new(kind: &CachePolicyKind, rng: ChaCha8Rng) -> Self {
        match kind {
            CachePolicyKind::Fifo => Reference::Fifo(VecDeque::new()),
            CachePolicyKind::Lru => Reference::Lru(Vec::new()),
            CachePolicyKind::Lfu => Reference::Lfu(Vec::new()),
            CachePolicyKind::Clock => Reference::Clock(VecDeque::new()),
            CachePolicyKind::Random => Reference::Random(Vec::new(), rng),
            CachePolicyKind::UserDefined(_) => unreachable!(),
        }
    }

    /// Serve one request; returns the evicted item, if any.
    fn request(&mut self, s: u32, cap: usize, seq: u64) -> Option<u32> {
        match self {
            Reference::Fifo(q) => {
                if q.contains(&s) {
                    return None;
                }
                let out = if q.len() == cap { q.pop_front() } else { None };
                q.push_back(s);
                out
            }
            Reference::Lru(order) => {
                if let Some(i) = order.iter().position(|x| *x == s) {
                    order.remove(i);
                    order.push(s);
                    return None;
                }
                let out = if order.len() == cap { Some(order.remove(0)) } else { None };
                order.push(s);
                out
            }
            Reference::Lfu(items) => {
                if let Some(e) = items.iter_mut().find(|e| e.0 == s) {
                    e.1 += 1;
                    return None;
                }
                let mut out = None;
                if items.len() == cap {
                    let i = (0..items.len()).min_by_key(|&i| (items[i].1, items[i].2)).unwrap();
                    out = Some(items.remove(i).0);
                }
                items.push((s, 1, seq));
                out
            }
            Reference::Clock(ring) => {
                if let Some(e) = ring.iter_mut().find(|e| e.0 == s) {
                    e.1 = true;
                    return None;
                }
                let mut out = None;
                if ring.len() == cap {
                    loop {
                        let (id, referenced) = ring.pop_front().unwrap();
                        if referenced {
                            ring.push_back((id, false));
                        } else {
                            out = Some(id);
                            break;
                        }
                    }
                }
                ring.push_back((s, true));
                out
            }
            Reference::Random(items, rng) => {
                if items.contains(&s) {
                    return None;
                }
                let mut out = None;
                if items.len() == cap {
                    items.sort_unstable();
                    let i = rng.random_range(0..items.len());
                    out = Some(items.remove(i));
                }
                items.push(s);
                out
            }
        }
    }
}

fn eviction_oracles() -> Outcome {
    let registry = CachePolicyRegistry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut divergent = BTreeMap::new();
    for kind in CachePolicyKind::BASELINES {
        let policy = registry.resolve(&kind).unwrap();
        let mut bad = 0;
        for _ in 0..TRACES {
            let len = rng.random_range(1..=50);
            let services = rng.random_range(1..=8u32);
            let cap = rng.random_range(1..=4usize);
            let trace: Vec<u32> = (0..len).map(|_| rng.random_range(0..services)).collect();
            let stream_seed = rng.next_u64();
            let mut store = CacheStore::new(cap as u64);
            let mut policy_rng = ChaCha8Rng::seed_from_u64(stream_seed);
            let mut reference = Reference::new(&kind, ChaCha8Rng::seed_from_u64(stream_seed));
            for (t, &s) in trace.iter().enumerate() {
                let got = serve_unit(policy.as_ref(), &mut store, s, t as u64, &mut policy_rng);
                let want = reference.request(s, cap, t as u64);
                if got != want {
                    bad += 1;
                    break;
                }
            }
        }
        divergent.insert(kind.label().to_string(), bad);
    }
    let total: usize = divergent.values().sum();
    outcome(total == 0, format!("divergent traces per policy {divergent:?} over {TRACES} traces each"))
}

fn serve_unit(policy: &dyn CachePolicy, store: &mut CacheStore, s: u32, t: u64, rng: &mut ChaCha8Rng) -> Option<u32> {
    if lookup(store, ServiceId(s), t) == cache::Lookup::Hit {
        return None;
    }
    let a = admit(policy, store, ServiceId(s), 1, t, rng);
    assert!(a.admitted && a.evicted.len() <= 1);
    a.evicted.first().map(|e| e.service.0)
}

// 6 -------------------------------------------------------------------------

fn rate_oracle(pa: f64, pb: f64, d: f64, p: &ChannelParams, gain: f64) -> f64 {
    let snr = pa.min(pb) * d.max(p.min_distance).powf(-p.pathloss_exp) * gain / p.noise;
    p.bandwidth_hz * (1.0 + snr).log2()
}

fn dist(a: Position, b: Position) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

fn queue_oracle(r: &RsuState) -> f64 {
    if r.running.len() < r.concurrency_limit {
        return 0.0;
    }
    let mut free: Vec<f64> = r.running.iter().map(|t| t.remaining_s).collect();
    for q in &r.queue {
        free.sort_by(f64::total_cmp);
        free[0] += q.duration_s;
    }
    free.into_iter().fold(f64::INFINITY, f64::min)
}

fn service(id: u32, size: u64) -> ServiceSpec {
    ServiceSpec {
        id: ServiceId(id),
        size_bytes: size,
        charm: 1.0,
        cpu_demand: 1e9,
        feature: vec![1.0; 4],
        cluster_id: 0,
        timeout_s: 30.0,
    }
}

fn random_world(rng: &mut ChaCha8Rng, svc: &ServiceSpec) -> (Vec<RsuState>, SdvState, CdcState) {
    let n = rng.random_range(1..=6);
    let rsus: Vec<RsuState> = (0..n)
        .map(|i| {
            let limit: usize = rng.random_range(1..=4);
            let running = (0..rng.random_range(0..=limit))
                .map(|k| RunningTask { task: TaskId(k as u64), remaining_s: rng.random_range(0.0..5.0) })
                .collect();
            let queue = (0..rng.random_range(0..4))
                .map(|k| QueuedTask { task: TaskId(100 + k as u64), duration_s: rng.random_range(0.01..5.0) })
                .collect();
            RsuState {
                id: RsuId(i),
                position: Position::new(rng.random_range(0.0..3000.0), rng.random_range(0.0..3000.0)),
                coverage_radius: rng.random_range(500.0..2500.0),
                compute_capacity: rng.random_range(1e10..1e12),
                tx_power: rng.random_range(0.5..2.0),
                concurrency_limit: limit,
                queue,
                running,
                cache: CacheStore::new(4 * svc.size_bytes),
                alive: rng.random_bool(0.9),
            }
        })
        .collect();
    let sdv = SdvState {
        id: vecsim::world::SdvId(0),
        position: Position::new(rng.random_range(0.0..3000.0), rng.random_range(0.0..3000.0)),
        heading: 0.0,
        velocity: 10.0,
        acceleration: 0.0,
        compute_capacity: rng.random_range(1e9..1e11),
        tx_power: rng.random_range(0.1..0.5),
        cache: CacheStore::new(if rng.random_bool(0.8) { 16 * GB } else { 1 }),
        preference: Vec::new(),
        activity: vecsim::world::Activity::Active,
        accessed: BTreeMap::new(),
        requests_issued: 0,
        home_cluster: 0,
    };
    let cdc = CdcState {
        disk: vec![svc.clone()],
        compute_capacity: rng.random_range(1e12..1e14),
        allocation: CdcAllocation::FairShare,
        position: Position::new(0.0, rng.random_range(1e4..1e6)),
        active_tasks: rng.random_range(0..20),
    };
    (rsus, sdv, cdc)
}

fn timing_algebra() -> Outcome {
    let p = ChannelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut checked, mut worst, mut order_violations, mut peer_cases) = (0usize, 0.0f64, 0usize, 0usize);
    for _ in 0..SNAPSHOTS {
        let svc = service(0, rng.random_range(1_000_000..1_000_000_000));
        let (mut rsus, sdv, cdc) = random_world(&mut rng, &svc);
        let hop = rsus
            .iter()
            .filter(|r| r.alive && dist(r.position, sdv.position) < r.coverage_radius)
            .min_by(|a, b| dist(a.position, sdv.position).total_cmp(&dist(b.position, sdv.position)))
            .map(|r| r.id);
        let transmitting: BTreeMap<RsuId, usize> =
            rsus.iter().map(|r| (r.id, rng.random_range(0..4usize))).collect();
        let gain = rng.random_range(0.2..2.0);
        let task = TaskRequest {
            id: TaskId(0),
            origin: sdv.id,
            service: svc.id,
            cpu_flops: rng.random_range(1e8..1e12),
            input_bytes: rng.random_range(1_000_000..10_000_000),
            image_bytes: svc.size_bytes,
            timeout_s: 30.0,
            issue_tick: 0,
        };
        let snap = Snapshot { tick: 0, sdv: &sdv, hop, rsus: &rsus, cdc: &cdc, params: &p, fading_gain: gain, transmitting: &transmitting };
        let ctx = PolicyContext::build(&task, &snap);

        let upload = hop.map(|h| {
            let r = &rsus[h.0 as usize];
            let rate = rate_oracle(sdv.tx_power, r.tx_power, dist(sdv.position, r.position), &p, gain);
            task.input_bytes as f64 * 8.0 / (rate / (transmitting[&h] + 1) as f64)
        });
        let mut targets = vec![OffloadTarget::Local, OffloadTarget::Cdc];
        targets.extend(rsus.iter().map(|r| OffloadTarget::Rsu(r.id)));
        let mut branch = BTreeMap::new();
        for t in targets {
            let Ok(b) = total_task_time(&OffloadDecision::new(t), &ctx) else { continue };
            let expect = match t {
                OffloadTarget::Local => task.cpu_flops / sdv.compute_capacity,
                OffloadTarget::Cdc => {
                    let h = &rsus[hop.unwrap().0 as usize];
                    upload.unwrap()
                        + task.cpu_flops / (cdc.compute_capacity / (cdc.active_tasks + 1) as f64)
                        + 2.0 * dist(h.position, cdc.position) / (p.prop_speed * p.attenuation)
                }
                OffloadTarget::Rsu(id) => {
                    let r = &rsus[id.0 as usize];
                    let path = ctx.rsu(id).unwrap().relay_path.clone().unwrap();
                    let relay: f64 = path
                        .windows(2)
                        .map(|w| {
                            let (a, b) = (&rsus[w[0].0 as usize], &rsus[w[1].0 as usize]);
                            let d = dist(a.position, b.position);
                            task.input_bytes as f64 * 8.0 / rate_oracle(a.tx_power, b.tx_power, d, &p, gain)
                                + d / (p.prop_speed * p.attenuation)
                        })
                        .sum();
                    upload.unwrap() + relay + queue_oracle(r) + task.cpu_flops / r.compute_capacity
                }
            };
            let terms = b.upload_s + b.queue_s + b.compute_s + b.rtt_s;
            // Selection by (alpha, beta): exactly one tier indicator is set.
            let selected = b.alpha * ctx.estimate(OffloadTarget::Local).map_or(0.0, |x| x.total_s)
                + b.beta * b.total_s
                + (1.0 - b.alpha - b.beta) * ctx.estimate(OffloadTarget::Cdc).map_or(0.0, |x| x.total_s);
            for got in [b.total_s, terms, selected] {
                worst = worst.max((got - expect).abs() / expect.abs().max(f64::MIN_POSITIVE));
            }
            branch.insert(t, b.total_s);
            checked += 1;
        }

        // Image fetch branches on the same snapshot: cached, peer-held, CDC.
        let Some(h) = hop else { continue };
        let t = h.0 as usize;
        let reach = CollaborationReach::MultiHop(rsus.len());
        let lru = registry_lru();
        let cdc_only = cache::resolve(&rsus[t], &svc, &rsus, &cdc, &p, reach, 1e9).timing.total();
        let peer = rsus.iter().position(|r| r.id != h && r.alive);
        let peer_time = match peer {
            Some(i) => {
                admit(lru.as_ref(), &mut rsus[i].cache, svc.id, svc.size_bytes, 0, &mut rng);
                let res = cache::resolve(&rsus[t], &svc, &rsus, &cdc, &p, reach, 1e9);
                if matches!(res.source, cache::ImageSource::Peer { .. }) {
                    peer_cases += 1;
                }
                res.timing.total()
            }
            None => cdc_only,
        };
        admit(lru.as_ref(), &mut rsus[t].cache, svc.id, svc.size_bytes, 0, &mut rng);
        let cached = cache::resolve(&rsus[t], &svc, &rsus, &cdc, &p, reach, 1e9).timing.total();
        if !(cached <= peer_time && peer_time <= cdc_only) {
            order_violations += 1;
        }
    }
    outcome(
        worst <= TIMING_REL_TOL && order_violations == 0 && checked > SNAPSHOTS,
        format!(
            "{checked} placements, worst relative error {worst:.1e}; cached<=peer<=cdc violated {order_violations} times ({peer_cases} real peer fetches)"
        ),
    )
}

fn registry_lru() -> std::sync::Arc<dyn CachePolicy> {
    CachePolicyRegistry::default().resolve(&CachePolicyKind::Lru).unwrap()
}

// 7 -------------------------------------------------------------------------

fn frames_bytes(r: &RunReport) -> Vec<u8> {
    let mut out = Vec::new();
    for f in &r.frames {
        out.extend(serde_json::to_vec(f).unwrap());
        out.push(b'\n');
    }
    out
}

fn log_bytes(events: &[Event]) -> Vec<u8> {
    let mut out = Vec::new();
    write_ndjson(events, &mut out).unwrap();
    out
}

fn determinism(runs: &mut Runs) -> Outcome {
    let s = desk();
    let (a, _) = runs.run("determinism a".into(), &s);
    let (b, _) = runs.run("determinism b".into(), &s);
    let mut other = s.clone();
    other.seed += 1;
    let (c, _) = runs.run("determinism other seed".into(), &other);
    let same_log = log_bytes(&a.events) == log_bytes(&b.events);
    let same_report = frames_bytes(&a) == frames_bytes(&b) && a.scenario_hash == b.scenario_hash;
    let differs = a.log_hash() != c.log_hash();
    outcome(
        same_log && same_report && differs,
        format!("identical log={same_log}, identical report={same_report}, other seed changes hash={differs}"),
    )
}

// 8 -------------------------------------------------------------------------

fn legal(from: ConnStatus, e: ConnEvent) -> Option<ConnStatus> {
    use ConnEvent as E;
    use ConnStatus as S;
    match (from, e) {
        (S::Pending, E::Establish) => Some(S::Established),
        (S::Established, E::BeginTransmit) => Some(S::Transmitting),
        (S::Transmitting, E::BeginCompute) => Some(S::Computing),
        (S::Transmitting, E::Finish) | (S::Computing, E::Finish) => Some(S::Finished),
        (S::Pending | S::Established | S::Transmitting | S::Computing, E::Fail) => Some(S::Failed),
        _ => None,
    }
}

fn conn_machine(runs: &Runs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut illegal = 0usize;
    for _ in 0..FUZZ_SEQUENCES {
        let mut state = ConnStatus::Pending;
        for _ in 0..rng.random_range(1..=12) {
            let e = *ConnEvent::ALL.choose(&mut rng).unwrap();
            match (transition(state, e), legal(state, e)) {
                (Ok(next), Some(want)) if next == want => state = next,
                (Err(_), None) => {}
                _ => illegal += 1,
            }
        }
    }

    let mut broken = Vec::new();
    let mut anchors = 0usize;
    let mut closes = 0usize;
    for (label, r) in &runs.reports {
        for (f, (tick, live)) in r.frames.iter().zip(&r.live_tasks) {
            anchors += 1;
            let g = &f.global;
            if f.tick != *tick || g.issued != g.finished + g.failed + g.in_flight || g.in_flight != *live {
                broken.push(format!("{label} at tick {tick}"));
            }
        }
        let mut open = BTreeMap::new();
        for e in &r.events {
            match e {
                Event::ConnOpened { conn, .. } => {
                    open.insert(*conn, ());
                }
                Event::ConnClosed { conn, status, .. } => {
                    closes += 1;
                    if open.remove(conn).is_none() || !status.is_terminal() {
                        broken.push(format!("{label} conn {conn}"));
                    }
                }
                _ => {}
            }
        }
    }
    outcome(
        illegal == 0 && broken.is_empty() && anchors > 0,
        format!(
            "{illegal} illegal transitions in {FUZZ_SEQUENCES} sequences; conservation held at {} of {anchors} anchors over {} runs; {closes} conn closes audited{}",
            anchors - broken.len().min(anchors),
            runs.reports.len(),
            broken.first().map(|b| format!("; first break: {b}")).unwrap_or_default()
        ),
    )
}

// 9 -------------------------------------------------------------------------

fn stepping_tolerance(runs: &mut Runs) -> Outcome {
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for seed in 1..=STEPPING_SEEDS {
        let mut s = desk();
        s.seed = seed;
        s.clock.stepping = 1;
        let (a, _) = runs.run(format!("stepping 1 seed {seed}"), &s);
        s.clock.stepping = 10;
        let (b, _) = runs.run(format!("stepping 10 seed {seed}"), &s);
        let (ha, hb) = (a.final_frame().unwrap().global.hit_rate, b.final_frame().unwrap().global.hit_rate);
        let rel = (ha - hb).abs() / ha;
        worst = worst.max(rel);
        parts.push(format!("seed {seed}: {:.2}% vs {:.2}%", ha * 100.0, hb * 100.0));
    }
    outcome(worst <= STEPPING_REL_TOL, format!("worst relative gap {:.2}% ({})", worst * 100.0, parts.join(", ")))
}

// 10 ------------------------------------------------------------------------

/// Two-sided Kolmogorov-Smirnov p-value (asymptotic, with the usual
/// small-sample correction).
fn ks_p(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for j in 1..=100 {
        let term = 2.0 * (-1f64).powi(j - 1) * (-2.0 * (j as f64).powi(2) * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

fn sleep_model() -> Outcome {
    let params = DemandParams::default();
    let k = params.sleep_k;
    let v = 1.0 + params.sleep_sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut xs: Vec<f64> = (0..SLEEP_DRAWS).map(|_| sleep_seconds(0.0, v, &params, &mut rng)).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = ((x - k) / k).clamp(0.0, 1.0);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    let p = ks_p(d, xs.len());
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.25).collect();
    let increasing = grid.windows(2).all(|w| {
        let lo = |a: f64| sleep_bounds(a, v, params.sleep_sigma).0;
        lo(w[1]) > lo(w[0]) && lo(-w[1]) > lo(-w[0])
    });
    let in_range = xs.first().is_some_and(|x| *x >= k) && xs.last().is_some_and(|x| *x <= 2.0 * k);
    outcome(
        p > P_MIN && increasing && in_range,
        format!("KS D={d:.5} p={p:.3}, draws within [k, 2k]={in_range}, lower bound increasing in |accel|={increasing}"),
    )
}
