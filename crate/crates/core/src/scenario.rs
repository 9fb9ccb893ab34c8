//! Scenario files: every tunable of a run in one TOML document.
//!
//! Unknown keys are rejected and validation reports every violation with
//! the dotted path of the offending field. The TOML echo of a loaded
//! scenario loads back to the same scenario, and its SHA-256 is the
//! scenario hash recorded in reports.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cache::{CachePolicyKind, CachePolicyRegistry, CollaborationReach};
use crate::channel::ChannelParams;
use crate::demand::DemandParams;
use crate::metrics::{MetricsConfig, Window};
use crate::mobility::MobilityParams;
use crate::offload::OffloadRegistry;
use crate::synthgen::{GenConfig, ValueRange, ZipfParams, GB};
use crate::world::{CdcAllocation, Position, RsuId, Tick};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockConfig {
    /// Seconds per tick.
    pub dt: f64,
    /// Number of ticks to run.
    pub horizon: u64,
    /// Expensive recomputations run every this many ticks.
    pub stepping: u64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self { dt: 0.1, horizon: 2000, stepping: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheConfig {
    /// Replacement policy of every RSU cache.
    pub policy: CachePolicyKind,
    pub collaboration: CollaborationReach,
    /// Image deployment rate, bytes/s.
    pub deploy_rate: f64,
    /// Replacement policy of SDV caches for locally executed tasks.
    pub sdv_policy: CachePolicyKind,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            policy: CachePolicyKind::Lru,
            collaboration: CollaborationReach::Direct,
            deploy_rate: 1e9,
            sdv_policy: CachePolicyKind::Lru,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OffloadConfig {
    /// Registered offloading-policy name.
    pub policy: String,
}

impl Default for OffloadConfig {
    fn default() -> Self {
        Self { policy: "nearest-rsu".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CdcConfig {
    pub compute_flops: f64,
    pub allocation: CdcAllocation,
    pub position: Position,
}

impl Default for CdcConfig {
    fn default() -> Self {
        Self { compute_flops: 1e13, allocation: CdcAllocation::FairShare, position: Position::new(0.0, 300_000.0) }
    }
}

/// A controller command, scripted or sent live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Command {
    /// Add `count` services to the catalog, around `cluster` or random centers.
    InjectServices {
        count: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cluster: Option<u32>,
    },
    /// Multiply the preference drift by `multiplier` for `duration` ticks.
    TrendBurst { multiplier: f64, duration: u64 },
    /// Stop SDVs from issuing new requests.
    Pause,
    Resume,
    KillRsu { rsu: RsuId },
    ReviveRsu { rsu: RsuId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedEvent {
    pub tick: Tick,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub clock: ClockConfig,
    pub world: GenConfig,
    pub channel: ChannelParams,
    pub demand: DemandParams,
    pub mobility: MobilityParams,
    pub cache: CacheConfig,
    pub offload: OffloadConfig,
    pub cdc: CdcConfig,
    pub metrics: MetricsConfig,
    pub events: Vec<ScriptedEvent>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::desk()
    }
}

/// One failed check, addressed by field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{} violation(s):\n{}", .0.len(), .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
}

impl Scenario {
    /// The desk-scale scenario: 100 SDVs, 5 RSUs, 10^4 services, 4000 ticks.
    ///
    /// Images span 10 MB to 1 GB with flat size ranks; hot lists look back
    /// 2000 ticks.
    pub fn desk() -> Self {
        let mut s = Self {
            name: "desk".into(),
            seed: 1,
            clock: ClockConfig::default(),
            world: GenConfig::default(),
            channel: ChannelParams::default(),
            demand: DemandParams::default(),
            mobility: MobilityParams::default(),
            cache: CacheConfig::default(),
            offload: OffloadConfig::default(),
            cdc: CdcConfig::default(),
            metrics: MetricsConfig::default(),
            events: Vec::new(),
        };
        s.clock.horizon = 4000;
        s.world.size_range = ValueRange::new(1e7, 1e9);
        s.world.size_zipf = ZipfParams::new(1000, 0.0);
        s.demand.hot_window_ticks = 2000;
        s
    }

    /// Full-scale parameters: 1000 SDVs, 20 RSUs, 10^7 services, 500 Mbit/s.
    pub fn table2() -> Self {
        let mut s = Self::desk();
        s.name = "table2".into();
        s.clock = ClockConfig::default();
        s.world.size_range = GenConfig::default().size_range;
        s.world.size_zipf = GenConfig::default().size_zipf;
        s.demand.hot_window_ticks = DemandParams::default().hot_window_ticks;
        s.world.canvas.width = 20_000.0;
        s.world.canvas.height = 20_000.0;
        s.world.sdv_count = 1000;
        s.world.rsu_count = 20;
        s.world.service_count = 10_000_000;
        s.world.cpu_range = ValueRange::new(1e9, 1e13);
        s.world.cpu_zipf = ZipfParams::new(1000, 1.0);
        s.world.rsu_cache_bytes = 16 * GB;
        s.channel.bandwidth_hz = 500e6;
        s
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    /// Parse and validate against the built-in policy registries.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        let s = Self::from_toml_str(&text)?;
        s.check(&CachePolicyRegistry::default(), &OffloadRegistry::default())?;
        Ok(s)
    }

    /// The canonical TOML form of this scenario.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    /// Hex SHA-256 of [`Scenario::echo`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.echo().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn check(&self, caches: &CachePolicyRegistry, offloads: &OffloadRegistry) -> Result<(), ScenarioError> {
        let v = self.validate(caches, offloads);
        if v.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(v))
        }
    }

    /// Every range, reference and registry violation.
    pub fn validate(&self, caches: &CachePolicyRegistry, offloads: &OffloadRegistry) -> Vec<Violation> {
        let mut c = Checker::default();
        c.check(self.seed <= i64::MAX as u64, "seed", "must be at most 2^63 - 1");

        let k = &self.clock;
        c.positive("clock.dt", k.dt);
        c.check(k.stepping >= 1, "clock.stepping", "must be >= 1");

        let w = &self.world;
        c.positive("world.canvas.width", w.canvas.width);
        c.positive("world.canvas.height", w.canvas.height);
        c.check(w.sdv_count == 0 || w.rsu_count >= 1, "world.rsu_count", "must be >= 1 when there are SDVs");
        c.check(w.sdv_count == 0 || w.service_count >= 1, "world.service_count", "must be >= 1 when there are SDVs");
        c.check(w.service_count <= u32::MAX as usize, "world.service_count", "exceeds the service id space");
        if !w.density.is_empty() {
            c.check(w.density.len() == w.rsu_count, "world.density", "needs one weight per RSU");
            c.check(
                w.density.iter().all(|d| d.is_finite() && *d >= 0.0) && w.density.iter().sum::<f64>() > 0.0,
                "world.density",
                "weights must be finite, non-negative and not all zero",
            );
        }
        c.check(w.cluster_count >= 1, "world.cluster_count", "must be >= 1");
        c.check(w.vector_len >= 1, "world.vector_len", "must be >= 1");
        c.non_negative("world.dispersion", w.dispersion);
        c.range("world.size_range", w.size_range);
        c.range("world.cpu_range", w.cpu_range);
        c.range("world.charm_range", w.charm_range);
        c.zipf("world.size_zipf", w.size_zipf);
        c.zipf("world.cpu_zipf", w.cpu_zipf);
        c.zipf("world.charm_zipf", w.charm_zipf);
        c.positive("world.timeout_s", w.timeout_s);
        c.positive("world.coverage.min", w.coverage.min);
        c.non_negative("world.coverage.std", w.coverage.std);
        c.check(w.coverage.min <= w.coverage.max, "world.coverage.max", "must be >= min");
        c.check(w.coverage.mean.is_finite(), "world.coverage.mean", "must be finite");
        c.positive("world.rsu_compute_flops", w.rsu_compute_flops);
        c.positive("world.rsu_tx_power_w", w.rsu_tx_power_w);
        c.check(w.rsu_concurrency >= 1, "world.rsu_concurrency", "must be >= 1");
        c.positive("world.sdv_compute_flops", w.sdv_compute_flops);
        c.positive("world.sdv_tx_power_w", w.sdv_tx_power_w);

        let ch = &self.channel;
        c.positive("channel.bandwidth_hz", ch.bandwidth_hz);
        c.positive("channel.pathloss_exp", ch.pathloss_exp);
        c.positive("channel.noise", ch.noise);
        c.positive("channel.fading_scale", ch.fading_scale);
        c.positive("channel.prop_speed", ch.prop_speed);
        c.check(ch.attenuation > 0.0 && ch.attenuation <= 1.0, "channel.attenuation", "must be in (0, 1]");
        c.check(ch.resample_fading_every >= 1, "channel.resample_fading_every", "must be >= 1");
        c.positive("channel.min_distance", ch.min_distance);
        c.check(ch.backhaul_rate_bps > 0.0, "channel.backhaul_rate_bps", "must be > 0");

        let d = &self.demand;
        c.check(d.window >= 1, "demand.window", "must be >= 1");
        c.check((0.0..=1.0).contains(&d.discount), "demand.discount", "must be in [0, 1]");
        c.check(d.hot_window_ticks >= 1, "demand.hot_window_ticks", "must be >= 1");
        c.non_negative("demand.sleep_k", d.sleep_k);
        c.positive("demand.sleep_sigma", d.sleep_sigma);
        c.check((0.0..=1.0).contains(&d.sleep_probability), "demand.sleep_probability", "must be in [0, 1]");
        c.check(d.sleep_every_n_requests != Some(0), "demand.sleep_every_n_requests", "must be >= 1");
        c.non_negative("demand.drift_std", d.drift_std);
        c.check(d.drift_every >= 1, "demand.drift_every", "must be >= 1");
        c.non_negative("demand.upload_rate", d.upload_rate);
        c.range("demand.input_bytes", d.input_bytes);

        let m = &self.mobility;
        c.non_negative("mobility.target_speed", m.target_speed);
        c.non_negative("mobility.speed_noise_std", m.speed_noise_std);
        c.non_negative("mobility.turn_rate_max", m.turn_rate_max);
        c.non_negative("mobility.maneuver_freq", m.maneuver_freq);
        c.non_negative("mobility.reversion_rate", m.reversion_rate);
        c.positive("mobility.accel_cap", m.accel_cap);

        c.positive("cache.deploy_rate", self.cache.deploy_rate);
        c.check(caches.contains(&self.cache.policy), "cache.policy", &format!("unknown policy `{}`", self.cache.policy));
        c.check(
            caches.contains(&self.cache.sdv_policy),
            "cache.sdv_policy",
            &format!("unknown policy `{}`", self.cache.sdv_policy),
        );
        if let CollaborationReach::MultiHop(h) = self.cache.collaboration {
            c.check(h >= 1, "cache.collaboration.max_hops", "must be >= 1");
        }
        c.check(
            offloads.get(&self.offload.policy).is_ok(),
            "offload.policy",
            &format!("unknown policy `{}`", self.offload.policy),
        );

        c.positive("cdc.compute_flops", self.cdc.compute_flops);
        if let CdcAllocation::Fixed(f) = self.cdc.allocation {
            c.positive("cdc.allocation.flops", f);
        }
        c.check(self.cdc.position.is_finite(), "cdc.position", "must be finite");

        c.check(self.metrics.anchor_every >= 1, "metrics.anchor_every", "must be >= 1");
        if let Window::Sliding(t) = self.metrics.window {
            c.check(t >= 1, "metrics.window.ticks", "must be >= 1");
        }

        for (i, e) in self.events.iter().enumerate() {
            let at = format!("events[{i}]");
            c.check(e.tick < k.horizon, &format!("{at}.tick"), &format!("tick {} is past the horizon {}", e.tick, k.horizon));
            let cmd = format!("{at}.command");
            match &e.command {
                Command::InjectServices { count, cluster } => {
                    c.check(*count >= 1, &format!("{cmd}.count"), "must be >= 1");
                    if let Some(cl) = cluster {
                        c.check(
                            (*cl as usize) < w.cluster_count,
                            &format!("{cmd}.cluster"),
                            &format!("no cluster {cl} (cluster_count = {})", w.cluster_count),
                        );
                    }
                }
                Command::TrendBurst { multiplier, duration } => {
                    c.non_negative(&format!("{cmd}.multiplier"), *multiplier);
                    c.check(*duration >= 1, &format!("{cmd}.duration"), "must be >= 1");
                }
                Command::KillRsu { rsu } | Command::ReviveRsu { rsu } => c.check(
                    (rsu.0 as usize) < w.rsu_count,
                    &format!("{cmd}.rsu"),
                    &format!("no RSU {} (rsu_count = {})", rsu.0, w.rsu_count),
                ),
                Command::Pause | Command::Resume => {}
            }
        }
        c.out
    }
}

#[derive(Default)]
struct Checker {
    out: Vec<Violation>,
}

impl Checker {
    fn check(&mut self, ok: bool, path: &str, message: &str) {
        if !ok {
            self.out.push(Violation { path: path.into(), message: message.into() });
        }
    }

    fn positive(&mut self, path: &str, x: f64) {
        self.check(x > 0.0 && x.is_finite(), path, &format!("must be finite and > 0 (got {x})"));
    }

    fn non_negative(&mut self, path: &str, x: f64) {
        self.check(x >= 0.0 && x.is_finite(), path, &format!("must be finite and >= 0 (got {x})"));
    }

    fn range(&mut self, path: &str, r: ValueRange) {
        self.check(r.is_valid(), path, &format!("needs 0 < min <= max < inf (got {}..{})", r.min, r.max));
    }

    fn zipf(&mut self, path: &str, z: ZipfParams) {
        self.check(z.n >= 1, &format!("{path}.n"), "must be >= 1");
        self.non_negative(&format!("{path}.alpha"), z.alpha);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn regs() -> (CachePolicyRegistry, OffloadRegistry) {
        (CachePolicyRegistry::default(), OffloadRegistry::default())
    }

    #[test]
    fn builtins_validate() {
        let (c, o) = regs();
        assert!(Scenario::desk().validate(&c, &o).is_empty());
        assert!(Scenario::table2().validate(&c, &o).is_empty());
    }

    #[test]
    fn echo_round_trips() {
        let mut s = Scenario::desk();
        s.events.push(ScriptedEvent { tick: 5, command: Command::KillRsu { rsu: RsuId(1) } });
        s.events.push(ScriptedEvent { tick: 6, command: Command::InjectServices { count: 3, cluster: None } });
        s.cache.policy = CachePolicyKind::UserDefined("mine".into());
        s.cache.collaboration = CollaborationReach::MultiHop(2);
        s.channel.backhaul_rate_bps = f64::INFINITY;
        s.demand.sleep_every_n_requests = Some(4);
        s.metrics.window = Window::Sliding(50);
        let echo = s.echo();
        let back = Scenario::from_toml_str(&echo).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.echo(), echo);
        assert_eq!(back.hash(), s.hash());
        assert_eq!(s.hash().len(), 64);
    }

    #[test]
    fn collects_all_violations() {
        let (c, o) = regs();
        let mut s = Scenario::desk();
        s.channel.bandwidth_hz = -1.0;
        s.clock.stepping = 0;
        s.events.push(ScriptedEvent { tick: 5000, command: Command::Pause });
        s.events.push(ScriptedEvent { tick: 1, command: Command::KillRsu { rsu: RsuId(99) } });
        let v = s.validate(&c, &o);
        let paths: Vec<&str> = v.iter().map(|v| v.path.as_str()).collect();
        assert_eq!(paths, ["clock.stepping", "channel.bandwidth_hz", "events[0].tick", "events[1].command.rsu"]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = Scenario::from_toml_str("name = 'x'\n[channel]\nbandwith_hz = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("bandwith_hz"), "{err}");
        assert!(Scenario::from_toml_str("colour = 1\n").is_err());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let s = Scenario::from_toml_str("seed = 9\n[clock]\nhorizon = 10\n").unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.clock.horizon, 10);
        assert_eq!(s.clock.dt, 0.1);
        assert_eq!(s.world, Scenario::desk().world);
    }
}
