use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GridError, Result};
use crate::measurement::{MeasurementDescriptor, MeasurementKind};
use crate::network::{Line, Network};

/// Per-unit series resistance and reactance ranges for generated lines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImpedanceRanges {
    pub r: (f64, f64),
    pub x: (f64, f64),
}

impl Default for ImpedanceRanges {
    fn default() -> Self {
        Self {
            r: (0.02, 0.06),
            x: (0.02, 0.05),
        }
    }
}

impl ImpedanceRanges {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("r", self.r), ("x", self.x)] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(GridError::InvalidArgument(format!("{name} range [{lo}, {hi}]")));
            }
        }
        if self.r.1 == 0.0 && self.x.1 == 0.0 {
            return Err(GridError::InvalidArgument("impedance ranges are identically zero".into()));
        }
        Ok(())
    }
}

/// Random radial feeder rooted at bus 0 (the slack).
///
/// Each new bus attaches to one of the three most recently added buses, which
/// yields long laterals rather than a star.
pub fn generate_feeder(bus_count: usize, seed: u64, ranges: &ImpedanceRanges) -> Result<Network> {
    if bus_count < 2 {
        return Err(GridError::InvalidArgument(format!("bus_count {bus_count} < 2")));
    }
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::with_capacity(bus_count - 1);
    for bus in 1..bus_count {
        let parent = rng.random_range(bus.saturating_sub(3)..bus);
        let (g, b) = loop {
            let r = draw(&mut rng, ranges.r);
            let x = draw(&mut rng, ranges.x);
            let z2 = r * r + x * x;
            if z2 > 0.0 {
                break (r / z2, -x / z2);
            }
        };
        lines.push(Line { from: parent, to: bus, g, b });
    }
    Network::new(format!("feeder{bus_count}-s{seed}"), bus_count, 0, lines)
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Number of instrumented buses for a sensor fraction.
pub fn sensor_count(bus_count: usize, fraction: f64) -> usize {
    // The epsilon keeps exact products such as 0.29 * 100 from flooring down.
    (fraction * bus_count as f64 + 1e-9).floor() as usize
}

/// Seeded sensor placement: a random subset of buses gets `P_inj`/`Q_inj`, and
/// every line touching a selected bus gets `P_flow`/`Q_flow` in its stored direction.
pub fn place_sensors(net: &Network, fraction: f64, seed: u64) -> Result<Vec<MeasurementDescriptor>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(GridError::InvalidArgument(format!("sensor fraction {fraction} outside (0, 1]")));
    }
    let n = net.bus_count();
    let count = sensor_count(n, fraction);
    if count == 0 {
        return Err(GridError::InvalidArgument(format!(
            "fraction {fraction} of {n} buses places no sensors"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buses: Vec<usize> = sample(&mut rng, n, count).into_vec();
    buses.sort_unstable();

    let mut out = Vec::with_capacity(2 * count);
    let mut lines = BTreeSet::new();
    for &bus in &buses {
        out.push(MeasurementDescriptor::new(MeasurementKind::PInj, bus));
        out.push(MeasurementDescriptor::new(MeasurementKind::QInj, bus));
        lines.extend(net.neighbors(bus).iter().map(|&(id, _)| id));
    }
    for id in lines {
        out.push(MeasurementDescriptor::new(MeasurementKind::PFlow, id));
        out.push(MeasurementDescriptor::new(MeasurementKind::QFlow, id));
    }
    Ok(out)
}

/// Buses carrying an injection descriptor.
pub fn instrumented_buses(descriptors: &[MeasurementDescriptor]) -> Vec<usize> {
    let set: BTreeSet<usize> = descriptors
        .iter()
        .filter(|d| !d.kind.is_flow())
        .map(|d| d.location)
        .collect();
    set.into_iter().collect()
}
