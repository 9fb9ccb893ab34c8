//! Radio and backhaul link model.
//!
//! Link rates follow the Shannon capacity of a Rayleigh-faded channel with
//! distance path loss. Backhaul round trips are propagation-only. Multi-hop
//! RSU relaying is store-and-forward.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{distance, mutually_in_range, Positioned, RsuId, RsuState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    /// Rate prefactor in bit/s: an SNR of 1 yields exactly this rate.
    pub bandwidth_hz: f64,
    pub pathloss_exp: f64,
    /// Background noise power, same units as `tx_power * dist^-pathloss_exp`.
    pub noise: f64,
    /// Mean of the exponentially distributed Rayleigh power gain |h|^2.
    pub fading_scale: f64,
    /// Signal propagation speed in m/s.
    pub prop_speed: f64,
    /// Medium attenuation factor on propagation speed, in (0, 1].
    pub attenuation: f64,
    /// Fading gains are redrawn every this many ticks.
    pub resample_fading_every: u64,
    /// Distances below this floor are treated as the floor.
    pub min_distance: f64,
    /// Backhaul transfer rate for image pulls from the CDC, bit/s.
    /// Infinity makes transfers instantaneous so only the RTT counts.
    pub backhaul_rate_bps: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            bandwidth_hz: 500e6,
            pathloss_exp: 3.0,
            noise: 1.6e-10,
            fading_scale: 1.0,
            prop_speed: 3e8,
            attenuation: 0.67,
            resample_fading_every: 1,
            min_distance: 1.0,
            backhaul_rate_bps: 1e9,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("relay path is empty")]
    EmptyPath,
    #[error("hop {index} is out of range")]
    HopOutOfRange { index: usize },
    #[error("unknown RSU {0}")]
    UnknownRsu(RsuId),
}

/// An entity with a radio.
pub trait Radio: Positioned {
    fn tx_power(&self) -> f64;
}

impl Radio for RsuState {
    fn tx_power(&self) -> f64 {
        self.tx_power
    }
}

impl Radio for crate::world::SdvState {
    fn tx_power(&self) -> f64 {
        self.tx_power
    }
}

/// Signal-to-noise ratio at `dist` meters for the weaker of two transmitters.
pub fn snr(min_power: f64, dist: f64, fading_gain: f64, params: &ChannelParams) -> f64 {
    let d = dist.max(params.min_distance);
    min_power * d.powf(-params.pathloss_exp) * fading_gain.max(0.0) / params.noise
}

/// Shannon rate in bit/s for a link of the given geometry.
pub fn rate_at(min_power: f64, dist: f64, fading_gain: f64, params: &ChannelParams) -> f64 {
    params.bandwidth_hz * (1.0 + snr(min_power, dist, fading_gain, params)).log2()
}

/// Rate of the link between `a` and `b` under the given fading gain.
pub fn link_rate(a: &impl Radio, b: &impl Radio, params: &ChannelParams, fading_gain: f64) -> f64 {
    rate_at(a.tx_power().min(b.tx_power()), distance(a, b), fading_gain, params)
}

/// One-way propagation delay over `dist` meters.
pub fn propagation_delay(dist: f64, params: &ChannelParams) -> f64 {
    dist / (params.prop_speed * params.attenuation)
}

/// Round trip between an RSU and the CDC over the backhaul.
pub fn rtt_backhaul(r: &impl Positioned, cdc: &impl Positioned, params: &ChannelParams) -> f64 {
    2.0 * propagation_delay(distance(r, cdc), params)
}

/// Transfer time of `bytes` over the backhaul (excluding propagation).
pub fn backhaul_transfer_time(bytes: u64, params: &ChannelParams) -> f64 {
    bytes as f64 * 8.0 / params.backhaul_rate_bps
}

/// Draw a Rayleigh power gain.
pub fn sample_fading<R: Rng + ?Sized>(rng: &mut R, params: &ChannelParams) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e * params.fading_scale
}

/// Equal split of a radio among its concurrently transmitting connections.
pub fn effective_rate(link_rate: f64, transmitting_on_radio: usize) -> f64 {
    link_rate / transmitting_on_radio.max(1) as f64
}

/// Geometry of one relay hop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopLink {
    pub distance: f64,
    pub min_power: f64,
    pub in_range: bool,
}

impl HopLink {
    pub fn between(a: &RsuState, b: &RsuState) -> Self {
        Self {
            distance: distance(a, b),
            min_power: a.tx_power.min(b.tx_power),
            in_range: mutually_in_range(a, b),
        }
    }

    /// Transfer plus propagation time of `payload_bytes` over this hop.
    pub fn time(&self, payload_bytes: u64, params: &ChannelParams, fading_gain: f64) -> f64 {
        let rate = rate_at(self.min_power, self.distance, fading_gain, params);
        payload_bytes as f64 * 8.0 / rate + propagation_delay(self.distance, params)
    }
}

/// Store-and-forward completion time of a payload over a relay path.
pub fn mesh_path_time(
    hops: &[HopLink],
    payload_bytes: u64,
    params: &ChannelParams,
    fading_gain: f64,
) -> Result<f64, ChannelError> {
    if hops.is_empty() {
        return Err(ChannelError::EmptyPath);
    }
    if let Some(index) = hops.iter().position(|h| !h.in_range) {
        return Err(ChannelError::HopOutOfRange { index });
    }
    Ok(hops.iter().map(|h| h.time(payload_bytes, params, fading_gain)).sum())
}

/// Hop geometry along a node path of RSU ids.
pub fn hops_along(path: &[RsuId], rsus: &[RsuState]) -> Result<Vec<HopLink>, ChannelError> {
    let lookup = |id: RsuId| rsus.iter().find(|r| r.id == id).ok_or(ChannelError::UnknownRsu(id));
    path.windows(2)
        .map(|w| Ok(HopLink::between(lookup(w[0])?, lookup(w[1])?)))
        .collect()
}

/// Minimum-hop relay path between two RSUs over the mutual-range graph of
/// alive RSUs. Ties go to the lower total distance, then to the
/// lexicographically smaller id sequence. Returns the node sequence
/// including both endpoints.
pub fn find_relay_path(src: RsuId, dst: RsuId, rsus: &[RsuState]) -> Option<Vec<RsuId>> {
    let by_id: BTreeMap<RsuId, &RsuState> =
        rsus.iter().filter(|r| r.alive).map(|r| (r.id, r)).collect();
    by_id.get(&src)?;
    by_id.get(&dst)?;
    if src == dst {
        return Some(vec![src]);
    }

    // Layered BFS keeping, per node, the best (distance, path) among the
    // minimum-hop paths that reach it.
    let mut settled: BTreeMap<RsuId, (f64, Vec<RsuId>)> = BTreeMap::new();
    settled.insert(src, (0.0, vec![src]));
    let mut frontier = vec![src];
    while !frontier.is_empty() {
        let mut next: BTreeMap<RsuId, (f64, Vec<RsuId>)> = BTreeMap::new();
        for u in &frontier {
            let (du, pu) = settled[u].clone();
            let ru = by_id[u];
            for (v, rv) in &by_id {
                if settled.contains_key(v) || !mutually_in_range(ru, rv) {
                    continue;
                }
                let dv = du + distance(ru, *rv);
                let mut pv = pu.clone();
                pv.push(*v);
                let better = match next.get(v) {
                    None => true,
                    Some((d, p)) => (dv, &pv) < (*d, p),
                };
                if better {
                    next.insert(*v, (dv, pv));
                }
            }
        }
        if let Some((_, path)) = next.get(&dst) {
            return Some(path.clone());
        }
        frontier = next.keys().copied().collect();
        settled.extend(next);
    }
    None
}
