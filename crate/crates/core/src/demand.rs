//! SDV request behavior: candidate sampling and interest scoring, the
//! hot-ranking list, the sleep model, preference drift and new-service
//! arrivals.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::synthgen::{band_vector, cosine, AttributeSampler, ValueRange};
use crate::world::{ServiceId, ServiceSpec, Tick};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemandParams {
    /// Random candidates drawn per selection.
    pub window: usize,
    /// Score multiplier for services the SDV has requested before.
    pub discount: f64,
    pub hot_list_len: usize,
    pub hot_window_ticks: u64,
    /// Sleep scale `k`, seconds.
    pub sleep_k: f64,
    /// Log base offset `sigma` of the sleep model.
    pub sleep_sigma: f64,
    /// Probability of sleeping right after a request.
    pub sleep_probability: f64,
    /// Also sleep after every n-th request when the probabilistic trigger
    /// did not fire.
    pub sleep_every_n_requests: Option<u64>,
    pub drift_std: f64,
    pub drift_every: u64,
    /// Mean new services per tick.
    pub upload_rate: f64,
    /// Task input payload size range, bytes.
    pub input_bytes: ValueRange,
}

impl Default for DemandParams {
    fn default() -> Self {
        Self {
            window: 50,
            discount: 0.8,
            hot_list_len: 10,
            hot_window_ticks: 500,
            sleep_k: 1.5,
            sleep_sigma: 1.0,
            sleep_probability: 1.0,
            sleep_every_n_requests: None,
            drift_std: 0.01,
            drift_every: 10,
            upload_rate: 0.0,
            input_bytes: ValueRange::new(1e6, 10e6),
        }
    }
}

/// Charm-weighted cosine similarity between a preference and a service.
/// Zero-norm vectors score 0.
pub fn interest_score(preference: &[f64], service: &ServiceSpec) -> f64 {
    service.charm * cosine(preference, &service.feature)
}

/// Pick the highest-scoring service among `window` random catalog entries
/// and the hot list. Previously accessed services are discounted; ties go
/// to the lower id.
pub fn select_service<R: Rng + ?Sized>(
    preference: &[f64],
    accessed: &BTreeMap<ServiceId, Tick>,
    catalog: &[ServiceSpec],
    hot: &[ServiceId],
    params: &DemandParams,
    rng: &mut R,
) -> ServiceId {
    assert!(!catalog.is_empty(), "empty catalog");
    let mut candidates: BTreeSet<ServiceId> = index::sample(rng, catalog.len(), params.window.min(catalog.len()))
        .into_iter()
        .map(|i| catalog[i].id)
        .collect();
    candidates.extend(hot.iter().copied().filter(|s| (s.0 as usize) < catalog.len()));
    let mut best = None;
    for id in candidates {
        let mut score = interest_score(preference, &catalog[id.0 as usize]);
        if accessed.contains_key(&id) {
            score *= params.discount;
        }
        // Ascending id order: strict comparison keeps the lower id on ties.
        match best {
            Some((_, s)) if score <= s => {}
            _ => best = Some((id, score)),
        }
    }
    best.expect("at least one candidate").0
}

/// Bounds `[lo, hi]` of the uniform sleep factor for the given motion state.
pub fn sleep_bounds(acceleration: f64, velocity: f64, sigma: f64) -> (f64, f64) {
    let lo = acceleration.abs().exp();
    let log_term = if velocity > 0.0 { (velocity.ln() / (1.0 + sigma).ln()).max(0.0) } else { 0.0 };
    (lo, lo + log_term)
}

/// Sleep length in seconds.
pub fn sleep_seconds<R: Rng + ?Sized>(acceleration: f64, velocity: f64, params: &DemandParams, rng: &mut R) -> f64 {
    let (lo, hi) = sleep_bounds(acceleration, velocity, params.sleep_sigma);
    params.sleep_k * (lo + (hi - lo) * rng.random::<f64>())
}

/// Sleep length in ticks, rounded up.
pub fn sleep_duration<R: Rng + ?Sized>(
    acceleration: f64,
    velocity: f64,
    params: &DemandParams,
    dt: f64,
    rng: &mut R,
) -> u64 {
    (sleep_seconds(acceleration, velocity, params, rng) / dt).ceil() as u64
}

/// Add Gaussian noise to each coordinate, clamped to `[0, 10]`.
pub fn drift_preferences<R: Rng + ?Sized>(preference: &mut [f64], std: f64, rng: &mut R) {
    if std <= 0.0 {
        return;
    }
    let noise = Normal::new(0.0, std).expect("finite std");
    for x in preference.iter_mut() {
        *x = (*x + noise.sample(rng)).clamp(0.0, 10.0);
    }
}

/// Poisson count with mean `rate`; zero rate never fires.
pub fn poisson_count<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("positive rate").sample(rng) as u64
}

/// Create `count` new services with ids starting at `next_id`, each around a
/// uniformly chosen center (or a fixed `cluster`).
pub fn make_services<R: Rng + ?Sized>(
    count: u64,
    next_id: u32,
    cluster: Option<u32>,
    centers: &[Vec<f64>],
    dispersion: f64,
    sampler: &AttributeSampler,
    rng: &mut R,
) -> Vec<ServiceSpec> {
    (0..count)
        .map(|i| {
            let c = cluster.map_or_else(|| rng.random_range(0..centers.len()), |c| c as usize);
            let feature = band_vector(&centers[c], dispersion, rng);
            sampler.make(ServiceId(next_id + i as u32), c as u32, feature, rng)
        })
        .collect()
}

/// This tick's Poisson batch of uploaded services.
pub fn upload_services<R: Rng + ?Sized>(
    next_id: u32,
    centers: &[Vec<f64>],
    dispersion: f64,
    sampler: &AttributeSampler,
    params: &DemandParams,
    rng: &mut R,
) -> Vec<ServiceSpec> {
    let count = poisson_count(params.upload_rate, rng);
    make_services(count, next_id, None, centers, dispersion, sampler, rng)
}

/// Top `len` services by request count among log entries with
/// `tick > now - window`, ties by lower id.
pub fn hot_ranking(log: &[(Tick, ServiceId)], len: usize, window: u64, now: Tick) -> Vec<ServiceId> {
    let mut counts: BTreeMap<ServiceId, u64> = BTreeMap::new();
    for (t, s) in log {
        if *t + window > now && *t <= now {
            *counts.entry(*s).or_default() += 1;
        }
    }
    top_n(&counts, len)
}

fn top_n(counts: &BTreeMap<ServiceId, u64>, len: usize) -> Vec<ServiceId> {
    let mut ranked: Vec<(ServiceId, u64)> = counts.iter().filter(|(_, c)| **c > 0).map(|(s, c)| (*s, *c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(len).map(|(s, _)| s).collect()
}

/// Incremental trailing-window request counter.
#[derive(Debug, Clone, Default)]
pub struct HotRanking {
    window: u64,
    len: usize,
    log: VecDeque<(Tick, ServiceId)>,
    counts: BTreeMap<ServiceId, u64>,
}

impl HotRanking {
    pub fn new(window: u64, len: usize) -> Self {
        Self { window, len, ..Self::default() }
    }

    pub fn record(&mut self, tick: Tick, service: ServiceId) {
        self.log.push_back((tick, service));
        *self.counts.entry(service).or_default() += 1;
    }

    /// Current ranking as of `now`.
    pub fn ranking(&mut self, now: Tick) -> Vec<ServiceId> {
        while let Some((t, s)) = self.log.front().copied() {
            if t + self.window > now {
                break;
            }
            self.log.pop_front();
            if let Some(c) = self.counts.get_mut(&s) {
                *c -= 1;
                if *c == 0 {
                    self.counts.remove(&s);
                }
            }
        }
        top_n(&self.counts, self.len)
    }
}
