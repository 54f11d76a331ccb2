//! Synthetic road network, trips, and weather with a known ground truth.
//!
//! The generator exists so the learning components can be validated without
//! proprietary order data. Trips are random walks on a generated network and
//! the label is an exact, documented function of the emitted steps:
//!
//! ```text
//! ata = (sum_i link_time_i * m(status_i) * g(slice_id) + sum_j cross_time_j)
//!       * lognormal(0, noise_sd)
//! ```
//!
//! with congestion multipliers `m = (1.0, 1.0, 1.4, 2.0)` for statuses
//! 0..=3 and `g` the daily congestion profile below. The naive estimate is
//! `simple_eta = sum link_time + sum cross_time`: it deliberately ignores
//! congestion, so any model that reads statuses and departure slices has
//! headroom over it.
//!
//! Everything is a pure function of `(config, seed)`; per-trip RNG streams
//! are derived independently, so generation order never matters.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Uniform};
use thiserror::Error;

use crate::derive_seed;
use crate::trip::{CrossStep, LinkStep, RoadNetwork, Trip, TripHeader, WeatherRecord};

/// Multiplicative travel-time factor per link status.
pub const STATUS_MULTIPLIER: [f64; 4] = [1.0, 1.0, 1.4, 2.0];

const MORNING_PEAK: f64 = 102.0; // 08:30
const MORNING_HALF_WIDTH: f64 = 30.0; // 2.5 h each side
const MORNING_AMPLITUDE: f64 = 0.45;
const EVENING_PEAK: f64 = 216.0; // 18:00
const EVENING_HALF_WIDTH: f64 = 36.0; // 3 h each side
const EVENING_AMPLITUDE: f64 = 0.40;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_links: u64,
    pub n_drivers: u64,
    pub n_trips: usize,
    /// Relative standard deviation of the multiplicative label noise.
    pub noise_sd: f64,
    pub seed: u64,
    pub date_start: NaiveDate,
    pub date_end: NaiveDate,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_links < 4 {
            return Err(SynthError::Config("n_links must be >= 4".into()));
        }
        if self.n_drivers == 0 {
            return Err(SynthError::Config("n_drivers must be >= 1".into()));
        }
        if self.n_trips == 0 {
            return Err(SynthError::Config("n_trips must be >= 1".into()));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(SynthError::Config(
                "noise_sd must be finite and >= 0".into(),
            ));
        }
        if self.date_start > self.date_end {
            return Err(SynthError::Config("date_start after date_end".into()));
        }
        Ok(())
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_links: 2000,
            n_drivers: 500,
            n_trips: 20_000,
            noise_sd: 0.05,
            seed: 0,
            date_start: NaiveDate::from_ymd_opt(2020, 8, 1).unwrap(),
            date_end: NaiveDate::from_ymd_opt(2020, 8, 28).unwrap(),
        }
    }
}

fn raised_cosine(x: f64, center: f64, half_width: f64, amplitude: f64) -> f64 {
    let d = (x - center).abs();
    if d >= half_width {
        0.0
    } else {
        amplitude * 0.5 * (1.0 + (std::f64::consts::PI * d / half_width).cos())
    }
}

/// Daily congestion profile over departure slices.
///
/// Exactly 1.0 outside the two compactly-supported rush bumps (morning
/// centered on slice 102, evening on slice 216), smooth inside them.
pub fn daily_profile(slice_id: u16) -> f64 {
    let x = f64::from(slice_id);
    1.0 + raised_cosine(x, MORNING_PEAK, MORNING_HALF_WIDTH, MORNING_AMPLITUDE)
        + raised_cosine(x, EVENING_PEAK, EVENING_HALF_WIDTH, EVENING_AMPLITUDE)
}

/// Noise-free re-evaluation of the ground-truth label over an emitted trip.
pub fn ground_truth_ata(trip: &Trip) -> f64 {
    let g = daily_profile(trip.header.slice_id);
    let link_part: f64 = trip
        .links
        .iter()
        .map(|l| l.link_time * STATUS_MULTIPLIER[l.link_status as usize] * g)
        .sum();
    let cross_part: f64 = trip.crosses.iter().map(|c| c.cross_time).sum();
    link_part + cross_part
}

/// Generates a strongly connected directed graph over `n_links` links in
/// which every link has 1..=4 successors. Deterministic for a fixed seed.
pub fn generate_network(config: &SynthConfig) -> Result<RoadNetwork, SynthError> {
    config.validate()?;
    let n = config.n_links;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "synth/network"));
    let mut successors: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for link in 0..n {
        // ring edge keeps the graph strongly connected
        let mut succs = vec![(link + 1) % n];
        let extras = rng.random_range(0..=3u32);
        for _ in 0..extras {
            for _attempt in 0..8 {
                let cand = rng.random_range(0..n);
                if cand != link && !succs.contains(&cand) {
                    succs.push(cand);
                    break;
                }
            }
        }
        successors.insert(link, succs);
    }
    Ok(RoadNetwork::from_successors(successors))
}

struct StatusSampler {
    thresholds: [f64; 3],
}

impl StatusSampler {
    /// Congestion probabilities rise with the rush excess `q = g(slice) - 1`.
    fn new(slice_id: u16) -> Self {
        let q = daily_profile(slice_id) - 1.0;
        let p0 = 0.05;
        let p2 = 0.15 + 0.6 * q;
        let p3 = 0.06 + 0.5 * q;
        let p1 = 1.0 - p0 - p2 - p3;
        StatusSampler {
            thresholds: [p0, p0 + p1, p0 + p1 + p2],
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u8 {
        let u: f64 = rng.random();
        if u < self.thresholds[0] {
            0
        } else if u < self.thresholds[1] {
            1
        } else if u < self.thresholds[2] {
            2
        } else {
            3
        }
    }
}

/// Generates `n_trips` random-walk trips on the network.
///
/// Walk lengths are 5 + min(295, Exp(mean 90)), so sequences span 5..=300
/// with a realistic short-heavy distribution. Each trip's RNG stream is
/// derived from (seed, trip index) alone.
pub fn generate_trips(
    network: &RoadNetwork,
    config: &SynthConfig,
) -> Result<Vec<Trip>, SynthError> {
    config.validate()?;
    let base = derive_seed(config.seed, "synth/trips");
    let n_days = (config.date_end - config.date_start).num_days() + 1;
    let link_time_dist = LogNormal::new(18.0f64.ln(), 0.55).expect("valid lognormal");
    let cross_time_dist = LogNormal::new(4.0f64.ln(), 0.5).expect("valid lognormal");
    let length_dist = Exp::new(1.0 / 90.0).expect("valid exp");
    let ratio_dist = Uniform::new(0.3, 1.0).expect("valid uniform");
    let speed_dist = Uniform::new(6.0, 14.0).expect("valid uniform");
    let noise_dist = if config.noise_sd > 0.0 {
        Some(LogNormal::new(0.0, config.noise_sd).expect("valid lognormal"))
    } else {
        None
    };

    let mut trips = Vec::with_capacity(config.n_trips);
    for idx in 0..config.n_trips {
        let mut rng = ChaCha8Rng::seed_from_u64(
            base.wrapping_add((idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );

        let date = config.date_start + chrono::Days::new(rng.random_range(0..n_days) as u64);
        let slice_id = rng.random_range(0..crate::trip::SLICES_PER_DAY);
        let driver_id = rng.random_range(0..config.n_drivers);
        let statuses = StatusSampler::new(slice_id);
        let g = daily_profile(slice_id);

        let sampled: f64 = length_dist.sample(&mut rng);
        let len = 5 + sampled.min(295.0) as usize;
        let mut current = rng.random_range(0..config.n_links);
        let mut links = Vec::with_capacity(len);
        let mut crosses = Vec::new();
        let mut link_time_sum = 0.0;
        let mut cross_time_sum = 0.0;
        let mut truth = 0.0;
        for step in 0..len {
            let link_time = link_time_dist.sample(&mut rng);
            let link_status = statuses.sample(&mut rng);
            let link_ratio = if step == 0 || step == len - 1 {
                ratio_dist.sample(&mut rng)
            } else {
                1.0
            };
            links.push(LinkStep {
                link_id: current,
                link_time,
                link_ratio,
                link_status,
            });
            link_time_sum += link_time;
            truth += link_time * STATUS_MULTIPLIER[link_status as usize] * g;

            let succs = network.successors(current);
            debug_assert!(
                !succs.is_empty(),
                "generated network link with no successors"
            );
            current = succs[rng.random_range(0..succs.len())];

            // an intersection delay between this link and the next
            if step + 1 < len && rng.random::<f64>() < 0.5 {
                let cross_time = cross_time_dist.sample(&mut rng);
                crosses.push(CrossStep {
                    cross_id: rng.random_range(0..config.n_links),
                    cross_time,
                });
                cross_time_sum += cross_time;
                truth += cross_time;
            }
        }

        let noise = match &noise_dist {
            Some(d) => d.sample(&mut rng),
            None => 1.0,
        };
        let simple_eta = link_time_sum + cross_time_sum;
        let speed = speed_dist.sample(&mut rng);
        trips.push(Trip {
            header: TripHeader {
                order_id: format!("s{idx:06}"),
                ata: truth * noise,
                distance: link_time_sum * speed,
                simple_eta,
                driver_id,
                slice_id,
                date,
            },
            links,
            crosses,
        });
    }
    Ok(trips)
}

/// One weather record per date in the configured range.
pub fn generate_weather(
    config: &SynthConfig,
) -> Result<BTreeMap<NaiveDate, WeatherRecord>, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "synth/weather"));
    let mut out = BTreeMap::new();
    let mut date = config.date_start;
    while date <= config.date_end {
        let temp_low: f64 = rng.random_range(18.0..26.0);
        let temp_high: f64 = temp_low + rng.random_range(2.0..10.0);
        out.insert(
            date,
            WeatherRecord {
                date,
                weather_code: rng.random_range(0..5),
                temp_low: (temp_low * 10.0).round() / 10.0,
                temp_high: (temp_high * 10.0).round() / 10.0,
            },
        );
        date = date + chrono::Days::new(1);
    }
    Ok(out)
}
