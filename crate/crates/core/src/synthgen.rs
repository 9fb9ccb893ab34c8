//! Initial world synthesis: Zipf-distributed service attributes, clustered
//! RSU/SDV placement and clustered service feature vectors.
//!
//! Every function here is a pure function of its config and the RNG handed
//! in.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::CacheStore;
use crate::world::{
    Activity, Canvas, Position, RsuId, RsuState, SdvId, SdvState, ServiceId, ServiceSpec,
};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("rank {k} outside [1, {n}]")]
    RankOutOfRange { k: u64, n: u64 },
    #[error("empty value range [{min}, {max}]")]
    EmptyRange { min: f64, max: f64 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Zipf law over ranks `1..=n` with exponent `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZipfParams {
    pub n: u64,
    pub alpha: f64,
}

impl ZipfParams {
    pub fn new(n: u64, alpha: f64) -> Self {
        Self { n, alpha }
    }

    /// Generalized harmonic number `H_{n,alpha}`.
    pub fn harmonic(&self) -> f64 {
        (1..=self.n).map(|k| (k as f64).powf(-self.alpha)).sum()
    }
}

pub fn zipf_pmf(params: ZipfParams, k: u64) -> Result<f64, SynthError> {
    if k == 0 || k > params.n {
        return Err(SynthError::RankOutOfRange { k, n: params.n });
    }
    Ok((k as f64).powf(-params.alpha) / params.harmonic())
}

/// Inverse-CDF Zipf sampler with a precomputed table.
#[derive(Debug, Clone)]
pub struct ZipfSampler {
    cdf: Vec<f64>,
}

impl ZipfSampler {
    pub fn new(params: ZipfParams) -> Self {
        let h = params.harmonic();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (1..=params.n)
            .map(|k| {
                acc += (k as f64).powf(-params.alpha) / h;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Self { cdf }
    }

    pub fn n(&self) -> u64 {
        self.cdf.len() as u64
    }

    /// A rank in `1..=n`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        let i = self.cdf.partition_point(|c| *c <= u);
        i.min(self.cdf.len() - 1) as u64 + 1
    }
}

/// One Zipf draw. Builds the table each call; prefer [`ZipfSampler`] in loops.
pub fn sample_zipf<R: Rng + ?Sized>(params: ZipfParams, rng: &mut R) -> u64 {
    ZipfSampler::new(params).sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
}

impl ValueRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn is_valid(&self) -> bool {
        self.min > 0.0 && self.min <= self.max && self.max.is_finite()
    }
}

/// Log-spaced rank-to-magnitude map: rank 1 is the maximum, rank `n` the
/// minimum.
pub fn rank_to_value(rank: u64, n: u64, range: ValueRange) -> f64 {
    if n <= 1 {
        return range.max;
    }
    let frac = (rank - 1) as f64 / (n - 1) as f64;
    (range.max * (range.min / range.max).powf(frac)).clamp(range.min, range.max)
}

/// RSU coverage radius distribution: normal, clipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageDist {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl CoverageDist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let raw = if self.std > 0.0 {
            Normal::new(self.mean, self.std).expect("finite std").sample(rng)
        } else {
            self.mean
        };
        raw.clamp(self.min, self.max)
    }
}

/// World synthesis settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub canvas: Canvas,
    pub sdv_count: usize,
    pub rsu_count: usize,
    /// Relative SDV density per RSU cluster. Empty means equal weights.
    pub density: Vec<f64>,
    pub service_count: usize,
    pub cluster_count: usize,
    pub dispersion: f64,
    pub vector_len: usize,
    pub size_range: ValueRange,
    pub size_zipf: ZipfParams,
    pub cpu_range: ValueRange,
    pub cpu_zipf: ZipfParams,
    pub charm_range: ValueRange,
    pub charm_zipf: ZipfParams,
    /// Maximum tolerated task latency for every service, seconds.
    pub timeout_s: f64,
    pub coverage: CoverageDist,
    pub rsu_compute_flops: f64,
    pub rsu_tx_power_w: f64,
    pub rsu_concurrency: usize,
    pub rsu_cache_bytes: u64,
    pub sdv_compute_flops: f64,
    pub sdv_tx_power_w: f64,
    /// Each SDV's cache size is drawn uniformly from this list.
    pub sdv_cache_bytes: Vec<u64>,
}

pub const MB: f64 = 1e6;
pub const GB: u64 = 1_000_000_000;

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            canvas: Canvas { width: 5_000.0, height: 5_000.0 },
            sdv_count: 100,
            rsu_count: 5,
            density: Vec::new(),
            service_count: 10_000,
            cluster_count: 5,
            dispersion: 0.3,
            vector_len: 128,
            size_range: ValueRange::new(MB, 1000.0 * MB),
            size_zipf: ZipfParams::new(1000, 1.0),
            cpu_range: ValueRange::new(1e9, 1e11),
            cpu_zipf: ZipfParams::new(1000, 1.0),
            charm_range: ValueRange::new(1.0, 100.0),
            charm_zipf: ZipfParams::new(10_000, 0.3),
            timeout_s: 30.0,
            coverage: CoverageDist { mean: 1750.0, std: 500.0, min: 500.0, max: 3000.0 },
            rsu_compute_flops: 100e9,
            rsu_tx_power_w: 1.0,
            rsu_concurrency: 8,
            rsu_cache_bytes: 16 * GB,
            sdv_compute_flops: 10e9,
            sdv_tx_power_w: 0.2,
            sdv_cache_bytes: vec![4 * GB, 8 * GB, 16 * GB],
        }
    }
}

impl GenConfig {
    pub fn density_weights(&self) -> Vec<f64> {
        if self.density.is_empty() {
            vec![1.0; self.rsu_count]
        } else {
            self.density.clone()
        }
    }
}

/// Largest-remainder apportionment of `total` over `weights`.
///
/// Remainder seats go to the largest fractional parts, ties to lower index.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Generated RSUs and SDVs plus the placement bookkeeping.
#[derive(Debug, Clone)]
pub struct Topology {
    pub rsus: Vec<RsuState>,
    pub sdvs: Vec<SdvState>,
    /// Index of each SDV's cluster RSU.
    pub cluster_of: Vec<usize>,
    /// SDV positions before clamping to the canvas.
    pub raw_positions: Vec<Position>,
    pub cluster_counts: Vec<usize>,
}

pub fn generate_topology<R: Rng + ?Sized>(cfg: &GenConfig, rng: &mut R) -> Topology {
    let rsus: Vec<RsuState> = (0..cfg.rsu_count)
        .map(|i| {
            let position = Position::new(
                rng.random::<f64>() * cfg.canvas.width,
                rng.random::<f64>() * cfg.canvas.height,
            );
            RsuState {
                id: RsuId(i as u32),
                position,
                coverage_radius: cfg.coverage.sample(rng),
                compute_capacity: cfg.rsu_compute_flops,
                tx_power: cfg.rsu_tx_power_w,
                concurrency_limit: cfg.rsu_concurrency,
                queue: VecDeque::new(),
                running: Vec::new(),
                cache: CacheStore::new(cfg.rsu_cache_bytes),
                alive: true,
            }
        })
        .collect();

    let cluster_counts = apportion(cfg.sdv_count, &cfg.density_weights());
    let mut sdvs = Vec::with_capacity(cfg.sdv_count);
    let mut cluster_of = Vec::with_capacity(cfg.sdv_count);
    let mut raw_positions = Vec::with_capacity(cfg.sdv_count);
    for (c, count) in cluster_counts.iter().enumerate() {
        let center = &rsus[c];
        for _ in 0..*count {
            let radius = rng.random::<f64>() * center.coverage_radius;
            let angle = rng.random::<f64>() * 2.0 * PI;
            let raw = Position::new(
                center.position.x + radius * angle.cos(),
                center.position.y + radius * angle.sin(),
            );
            let cache_bytes = if cfg.sdv_cache_bytes.is_empty() {
                0
            } else {
                cfg.sdv_cache_bytes[rng.random_range(0..cfg.sdv_cache_bytes.len())]
            };
            let heading = rng.random::<f64>() * 2.0 * PI;
            sdvs.push(SdvState {
                id: SdvId(sdvs.len() as u32),
                position: cfg.canvas.clamp(raw),
                heading,
                velocity: 0.0,
                acceleration: 0.0,
                compute_capacity: cfg.sdv_compute_flops,
                tx_power: cfg.sdv_tx_power_w,
                cache: CacheStore::new(cache_bytes),
                preference: Vec::new(),
                activity: Activity::Active,
                accessed: BTreeMap::new(),
                requests_issued: 0,
                home_cluster: 0,
            });
            cluster_of.push(c);
            raw_positions.push(raw);
        }
    }
    Topology { rsus, sdvs, cluster_of, raw_positions, cluster_counts }
}

/// Bounds of the uniform `p` draw in the band construction; the upper bound
/// keeps `sqrt(2*pi*m^2) * p < 1`.
pub fn band_p_bounds(dispersion: f64) -> (f64, f64) {
    let s = (2.0 * PI * dispersion * dispersion).sqrt();
    let hi = if s > 0.0 { (0.999 / s).min(1.0) } else { 1.0 };
    (0.8f64.min(hi), hi)
}

/// Half-width of the band for a given `p`.
pub fn band_half_width(dispersion: f64, p: f64) -> f64 {
    if dispersion == 0.0 {
        return 0.0;
    }
    let s = (2.0 * PI * dispersion * dispersion).sqrt();
    (-2.0 * dispersion * dispersion * (s * p).ln()).max(0.0).sqrt()
}

/// One vector drawn around `center` with the Gaussian-band construction.
pub fn band_vector<R: Rng + ?Sized>(center: &[f64], dispersion: f64, rng: &mut R) -> Vec<f64> {
    let (lo, hi) = band_p_bounds(dispersion);
    center
        .iter()
        .map(|c| {
            let p = lo + (hi - lo) * rng.random::<f64>();
            let t = band_half_width(dispersion, p);
            c - t + 2.0 * t * rng.random::<f64>()
        })
        .collect()
}

/// Cluster centers and per-service vectors, ordered by cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub centers: Vec<Vec<f64>>,
    pub vectors: Vec<Vec<f64>>,
    pub clusters: Vec<u32>,
}

/// Services per cluster; the last cluster absorbs the remainder.
pub fn cluster_sizes(services: usize, clusters: usize) -> Vec<usize> {
    let base = services / clusters;
    let mut sizes = vec![base; clusters];
    sizes[clusters - 1] += services - base * clusters;
    sizes
}

pub fn generate_centers<R: Rng + ?Sized>(count: usize, len: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..len).map(|_| rng.random::<f64>() * 10.0).collect())
        .collect()
}

pub fn generate_feature_vectors<R: Rng + ?Sized>(cfg: &GenConfig, rng: &mut R) -> FeatureSet {
    let centers = generate_centers(cfg.cluster_count, cfg.vector_len, rng);
    let mut vectors = Vec::with_capacity(cfg.service_count);
    let mut clusters = Vec::with_capacity(cfg.service_count);
    for (c, size) in cluster_sizes(cfg.service_count, cfg.cluster_count).into_iter().enumerate() {
        for _ in 0..size {
            vectors.push(band_vector(&centers[c], cfg.dispersion, rng));
            clusters.push(c as u32);
        }
    }
    FeatureSet { centers, vectors, clusters }
}

/// Draws size, compute demand and charm for new services.
#[derive(Debug, Clone)]
pub struct AttributeSampler {
    size: ZipfSampler,
    cpu: ZipfSampler,
    charm: ZipfSampler,
    size_range: ValueRange,
    cpu_range: ValueRange,
    charm_range: ValueRange,
    timeout_s: f64,
}

impl AttributeSampler {
    pub fn new(cfg: &GenConfig) -> Result<Self, SynthError> {
        for r in [cfg.size_range, cfg.cpu_range, cfg.charm_range] {
            if !r.is_valid() {
                return Err(SynthError::EmptyRange { min: r.min, max: r.max });
            }
        }
        Ok(Self {
            size: ZipfSampler::new(cfg.size_zipf),
            cpu: ZipfSampler::new(cfg.cpu_zipf),
            charm: ZipfSampler::new(cfg.charm_zipf),
            size_range: cfg.size_range,
            cpu_range: cfg.cpu_range,
            charm_range: cfg.charm_range,
            timeout_s: cfg.timeout_s,
        })
    }

    pub fn make<R: Rng + ?Sized>(
        &self,
        id: ServiceId,
        cluster_id: u32,
        feature: Vec<f64>,
        rng: &mut R,
    ) -> ServiceSpec {
        let size = rank_to_value(self.size.sample(rng), self.size.n(), self.size_range);
        let cpu = rank_to_value(self.cpu.sample(rng), self.cpu.n(), self.cpu_range);
        let charm = rank_to_value(self.charm.sample(rng), self.charm.n(), self.charm_range);
        ServiceSpec {
            id,
            size_bytes: (size.round() as u64).max(1),
            charm,
            cpu_demand: cpu,
            feature,
            cluster_id,
            timeout_s: self.timeout_s,
        }
    }
}

/// The initial catalog and the cluster centers it was drawn around.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub services: Vec<ServiceSpec>,
    pub centers: Vec<Vec<f64>>,
}

pub fn generate_services<R: Rng + ?Sized>(cfg: &GenConfig, rng: &mut R) -> Result<Catalog, SynthError> {
    if cfg.cluster_count == 0 || cfg.vector_len == 0 {
        return Err(SynthError::Invalid("cluster_count and vector_len must be >= 1".into()));
    }
    let sampler = AttributeSampler::new(cfg)?;
    let features = generate_feature_vectors(cfg, rng);
    let services = features
        .vectors
        .into_iter()
        .zip(features.clusters)
        .enumerate()
        .map(|(i, (feature, cluster))| sampler.make(ServiceId(i as u32), cluster, feature, rng))
        .collect();
    Ok(Catalog { services, centers: features.centers })
}

/// Give every SDV a preference vector drawn around a random cluster center.
pub fn assign_preferences<R: Rng + ?Sized>(
    sdvs: &mut [SdvState],
    centers: &[Vec<f64>],
    dispersion: f64,
    rng: &mut R,
) {
    for v in sdvs {
        let c = rng.random_range(0..centers.len());
        v.preference = band_vector(&centers[c], dispersion, rng);
        v.home_cluster = c as u32;
    }
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = crate::world::norm(a);
    let nb = crate::world::norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    crate::world::dot(a, b) / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::distance;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pmf_examples() {
        assert!((zipf_pmf(ZipfParams::new(3, 1.0), 1).unwrap() - 6.0 / 11.0).abs() < 1e-15);
        assert_eq!(zipf_pmf(ZipfParams::new(1, 2.5), 1).unwrap(), 1.0);
        assert!((zipf_pmf(ZipfParams::new(3, 0.0), 2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            zipf_pmf(ZipfParams::new(3, 1.0), 4),
            Err(SynthError::RankOutOfRange { k: 4, n: 3 })
        );
        assert!(zipf_pmf(ZipfParams::new(3, 1.0), 0).is_err());
    }

    #[test]
    fn pmf_sums_to_one() {
        for (n, a) in [(1, 1.0), (100, 1.0), (10_000, 0.7), (100_000, 1.2)] {
            let p = ZipfParams::new(n, a);
            let h = p.harmonic();
            let total: f64 = (1..=n).map(|k| (k as f64).powf(-a) / h).sum();
            assert!((total - 1.0).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn sampler_frequencies() {
        let s = ZipfSampler::new(ZipfParams::new(3, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0u32; 3];
        let draws = 1_000_000;
        for _ in 0..draws {
            counts[s.sample(&mut rng) as usize - 1] += 1;
        }
        for (c, want) in counts.iter().zip([6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0]) {
            assert!((*c as f64 / draws as f64 - want).abs() < 0.01);
        }
        let one = ZipfSampler::new(ZipfParams::new(1, 1.0));
        assert!((0..100).all(|_| one.sample(&mut rng) == 1));
    }

    #[test]
    fn sampler_is_deterministic() {
        let p = ZipfParams::new(50, 0.9);
        let a: Vec<u64> = {
            let mut r = ChaCha8Rng::seed_from_u64(5);
            (0..100).map(|_| sample_zipf(p, &mut r)).collect()
        };
        let b: Vec<u64> = {
            let mut r = ChaCha8Rng::seed_from_u64(5);
            (0..100).map(|_| sample_zipf(p, &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn rank_map_endpoints() {
        let r = ValueRange::new(1e6, 1e9);
        assert_eq!(rank_to_value(1, 1000, r), 1e9);
        assert!((rank_to_value(1000, 1000, r) - 1e6).abs() < 1e-3);
        assert_eq!(rank_to_value(1, 1, r), 1e9);
        // Midpoint rank is the geometric mean.
        assert!((rank_to_value(2, 3, r) - (1e6f64 * 1e9).sqrt()).abs() < 1e-3);
    }

    #[test]
    fn services_within_ranges() {
        let cfg = GenConfig { service_count: 2000, ..GenConfig::default() };
        let cat = generate_services(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(cat.services.len(), 2000);
        for s in &cat.services {
            assert!(s.validate(128).is_ok());
            assert!((1e6..=1e9).contains(&(s.size_bytes as f64)));
            assert!((cfg.cpu_range.min..=cfg.cpu_range.max).contains(&s.cpu_demand));
            assert!((1.0..=100.0).contains(&s.charm));
        }
        let single = GenConfig { service_count: 1, cluster_count: 1, ..cfg.clone() };
        let one = GenConfig {
            size_zipf: ZipfParams::new(1, 1.0),
            cpu_zipf: ZipfParams::new(1, 1.0),
            charm_zipf: ZipfParams::new(1, 1.0),
            ..single
        };
        let cat = generate_services(&one, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(cat.services[0].size_bytes, 1_000_000_000);
        assert_eq!(cat.services[0].cpu_demand, one.cpu_range.max);
        let bad = GenConfig { size_range: ValueRange::new(5.0, 1.0), ..GenConfig::default() };
        assert!(generate_services(&bad, &mut ChaCha8Rng::seed_from_u64(2)).is_err());
    }

    #[test]
    fn apportion_examples() {
        assert_eq!(apportion(100, &[1.0, 1.0]), vec![50, 50]);
        assert_eq!(apportion(100, &[3.0, 1.0]), vec![75, 25]);
        assert_eq!(apportion(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(apportion(0, &[1.0]), vec![0]);
    }

    #[test]
    fn topology_places_sdvs_in_coverage() {
        let cfg = GenConfig { density: vec![3.0, 1.0], rsu_count: 2, ..GenConfig::default() };
        let topo = generate_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(topo.cluster_counts, vec![75, 25]);
        assert_eq!(topo.sdvs.len(), 100);
        for (i, v) in topo.sdvs.iter().enumerate() {
            let r = &topo.rsus[topo.cluster_of[i]];
            assert!(distance(&topo.raw_positions[i], r) <= r.coverage_radius + 1e-9);
            assert!(cfg.canvas.contains(v.position));
            assert!((500.0..=3000.0).contains(&r.coverage_radius));
        }
    }

    #[test]
    fn band_collapses_at_zero_dispersion() {
        let c = vec![1.0, 2.0, 3.0];
        let v = band_vector(&c, 0.0, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(v, c);
        let tiny = band_vector(&c, 1e-6, &mut ChaCha8Rng::seed_from_u64(4));
        assert!(tiny.iter().zip(&c).all(|(a, b)| (a - b).abs() < 1e-4));
    }

    #[test]
    fn band_bounds_keep_log_negative() {
        for m in [0.01, 0.1, 0.3, 0.4, 1.0, 5.0] {
            let (lo, hi) = band_p_bounds(m);
            assert!(lo <= hi && hi <= 1.0);
            let s = (2.0 * PI * m * m).sqrt();
            assert!(s * hi < 1.0, "m={m}");
            assert!(band_half_width(m, lo).is_finite());
        }
    }

    #[test]
    fn feature_clusters() {
        let cfg = GenConfig { service_count: 1000, ..GenConfig::default() };
        let fs = generate_feature_vectors(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(fs.centers.len(), 5);
        for c in 0..5u32 {
            assert_eq!(fs.clusters.iter().filter(|x| **x == c).count(), 200);
        }
        assert!(fs.vectors.iter().all(|v| v.len() == 128));
        assert_eq!(cluster_sizes(10, 3), vec![3, 3, 4]);
    }

    proptest! {
        #[test]
        fn apportion_total_is_exact(m in 0usize..5000, ws in prop::collection::vec(0.01f64..10.0, 1..12)) {
            let counts = apportion(m, &ws);
            prop_assert_eq!(counts.iter().sum::<usize>(), m);
            let sum: f64 = ws.iter().sum();
            for (c, w) in counts.iter().zip(&ws) {
                prop_assert!((*c as f64 - m as f64 * w / sum).abs() < 1.0 + 1e-9);
            }
        }
    }
}
