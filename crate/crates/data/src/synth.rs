use std::f64::consts::PI;

use dsse_grid::{
    add_relative_noise, measurement_function, solve_power_flow, validate_descriptors, InjectionConvention,
    MeasurementDescriptor, Network, PowerFlowOptions,
};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Calendar, TimeSeriesDataset, DEFAULT_START_UNIX, DEFAULT_STEP_SECONDS};
use crate::error::{DataError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileConfig {
    /// Range of per-bus peak active demand (pu).
    pub base_load: (f64, f64),
    /// Range of per-bus lagging power factor.
    pub power_factor: (f64, f64),
    /// Multiplier on every demand; 0 gives an unloaded network.
    pub load_scale: f64,
    /// Share of non-slack buses hosting PV.
    pub generator_fraction: f64,
    /// PV capacity relative to the host bus peak demand.
    pub pv_ratio: f64,
    pub weekend_factor: f64,
    /// AR(1) coefficient and innovation std of the feeder-wide demand factor.
    pub common_ar: (f64, f64),
    /// AR(1) coefficient and innovation std of per-bus demand noise.
    pub bus_ar: (f64, f64),
    /// Relative Gaussian noise on measurements; 0 keeps them ideal.
    pub measurement_noise: f64,
    pub convention: InjectionConvention,
    pub power_flow: PowerFlowOptions,
    pub start_unix: i64,
    pub step_seconds: i64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            base_load: (0.01, 0.04),
            power_factor: (0.9, 0.98),
            load_scale: 1.0,
            generator_fraction: 0.3,
            pv_ratio: 1.2,
            weekend_factor: 0.85,
            common_ar: (0.97, 0.02),
            bus_ar: (0.9, 0.04),
            measurement_noise: 0.0,
            convention: InjectionConvention::Physical,
            power_flow: PowerFlowOptions::default(),
            start_unix: DEFAULT_START_UNIX,
            step_seconds: DEFAULT_STEP_SECONDS,
        }
    }
}

/// Residential-style daily shape with a morning shoulder and an evening peak; mean near 1.
pub fn daily_shape(hour: f64) -> f64 {
    0.8 + 0.3 * (2.0 * PI * (hour - 19.0) / 24.0).cos() + 0.12 * (4.0 * PI * (hour - 8.0) / 24.0).cos()
}

/// Clear-sky PV output in [0, 1].
pub fn solar_shape(hour: f64) -> f64 {
    if (6.0..18.0).contains(&hour) {
        (PI * (hour - 6.0) / 12.0).sin().powf(1.5)
    } else {
        0.0
    }
}

/// Per-step net injections and the bus roles used to build them.
#[derive(Clone, Debug)]
pub struct InjectionProfile {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub generator_buses: Vec<usize>,
}

/// Seeded net injection time series: PV minus demand at every non-slack bus.
pub fn synthesize_injections(net: &Network, steps: usize, seed: u64, cfg: &ProfileConfig) -> Result<InjectionProfile> {
    validate_config(cfg)?;
    let n = net.bus_count();
    let slack = net.slack();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let base: Vec<f64> = (0..n).map(|_| rng.random_range(cfg.base_load.0..=cfg.base_load.1)).collect();
    let tan_phi: Vec<f64> = (0..n)
        .map(|_| {
            let pf: f64 = rng.random_range(cfg.power_factor.0..=cfg.power_factor.1);
            (1.0 - pf * pf).sqrt() / pf
        })
        .collect();
    let others: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let gen_count = ((cfg.generator_fraction * others.len() as f64).round() as usize).min(others.len());
    let mut generator_buses: Vec<usize> = sample(&mut rng, others.len(), gen_count)
        .into_iter()
        .map(|k| others[k])
        .collect();
    generator_buses.sort_unstable();

    let common = Normal::new(0.0, cfg.common_ar.1).map_err(|e| DataError::InvalidArgument(e.to_string()))?;
    let idio = Normal::new(0.0, cfg.bus_ar.1).map_err(|e| DataError::InvalidArgument(e.to_string()))?;
    let mut common_state = 0.0;
    let mut bus_state = vec![0.0; n];
    let mut cloud = 1.0;

    let mut p = Vec::with_capacity(steps);
    let mut q = Vec::with_capacity(steps);
    for t in 0..steps {
        let cal = Calendar::from_unix(cfg.start_unix + t as i64 * cfg.step_seconds);
        if t == 0 || (cal.hour == 0 && cal.minute == 0) {
            cloud = rng.random_range(0.4..1.0);
        }
        common_state = cfg.common_ar.0 * common_state + common.sample(&mut rng);
        let hour = cal.hour_of_day();
        let week = if cal.is_weekend() { cfg.weekend_factor } else { 1.0 };
        let level = daily_shape(hour) * week;
        let sun = solar_shape(hour) * cloud;

        let mut pt = vec![0.0; n];
        let mut qt = vec![0.0; n];
        for i in 0..n {
            bus_state[i] = cfg.bus_ar.0 * bus_state[i] + idio.sample(&mut rng);
            if i == slack {
                continue;
            }
            let demand = cfg.load_scale * base[i] * (level * (1.0 + common_state + bus_state[i])).max(0.0);
            pt[i] = -demand;
            qt[i] = -demand * tan_phi[i];
        }
        for &g in &generator_buses {
            pt[g] += cfg.load_scale * cfg.pv_ratio * base[g] * sun;
        }
        p.push(pt);
        q.push(qt);
    }
    Ok(InjectionProfile { p, q, generator_buses })
}

/// Runs a power flow per step and records the true state and the measurements.
pub fn synthesize_profiles(
    net: &Network,
    descriptors: &[MeasurementDescriptor],
    steps: usize,
    seed: u64,
    cfg: &ProfileConfig,
) -> Result<TimeSeriesDataset> {
    if steps == 0 {
        return Err(DataError::InvalidArgument("steps must be at least 1".into()));
    }
    validate_descriptors(net, descriptors)?;
    let profile = synthesize_injections(net, steps, seed, cfg)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let mut frames = Vec::with_capacity(steps);
    let mut states = Vec::with_capacity(steps);
    for t in 0..steps {
        let sol = solve_power_flow(net, &profile.p[t], &profile.q[t], &cfg.power_flow)
            .map_err(|source| DataError::PowerFlow { step: t, source })?;
        let mut frame = measurement_function(net, &sol.state, descriptors, cfg.convention)?;
        add_relative_noise(&mut frame, cfg.measurement_noise, &mut noise_rng)?;
        frames.push(frame);
        states.push(sol.state);
    }
    let mut ds = TimeSeriesDataset::new(descriptors.to_vec(), frames, states)?;
    ds.start_unix = cfg.start_unix;
    ds.step_seconds = cfg.step_seconds;
    Ok(ds)
}

fn validate_config(cfg: &ProfileConfig) -> Result<()> {
    let bad = |m: &str| Err(DataError::InvalidArgument(m.to_string()));
    let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
    if !range_ok(cfg.base_load) || cfg.base_load.0 < 0.0 {
        return bad("base_load range");
    }
    if !range_ok(cfg.power_factor) || cfg.power_factor.0 <= 0.0 || cfg.power_factor.1 > 1.0 {
        return bad("power_factor range");
    }
    if !(0.0..=1.0).contains(&cfg.generator_fraction) {
        return bad("generator_fraction outside [0, 1]");
    }
    if !(cfg.load_scale >= 0.0 && cfg.pv_ratio >= 0.0 && cfg.weekend_factor >= 0.0) {
        return bad("negative scale factor");
    }
    for (phi, std) in [cfg.common_ar, cfg.bus_ar] {
        if !(phi.abs() < 1.0 && std >= 0.0) {
            return bad("AR coefficient must be in (-1, 1) with nonnegative std");
        }
    }
    if cfg.step_seconds <= 0 {
        return bad("step_seconds must be positive");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn daily_shape_peaks_in_the_evening() {
        let peak = (0..96).map(|k| k as f64 / 4.0).fold((0.0, f64::MIN), |acc, h| {
            let v = daily_shape(h);
            if v > acc.1 { (h, v) } else { acc }
        });
        assert!((17.0..=21.0).contains(&peak.0), "peak at {}", peak.0);
        assert_eq!(solar_shape(3.0), 0.0);
        assert!((solar_shape(12.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let net = dsse_grid::generate_feeder(3, 0, &Default::default()).unwrap();
        let cfg = ProfileConfig { generator_fraction: 2.0, ..Default::default() };
        assert!(synthesize_injections(&net, 4, 0, &cfg).is_err());
        let cfg = ProfileConfig { common_ar: (1.0, 0.1), ..Default::default() };
        assert!(synthesize_injections(&net, 4, 0, &cfg).is_err());
    }
}
