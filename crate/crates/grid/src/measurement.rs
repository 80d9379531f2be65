use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{GridError, Result};
use crate::network::{Line, Network, StateVector};

/// How bus injections are assembled from the directed line flows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InjectionConvention {
    /// `P_i = Σ_j P_ij`, the power leaving bus `i` into its lines. Equals the
    /// Y-bus injection, so power-flow solutions reproduce their specified values.
    #[default]
    Physical,
    /// `P_i = Σ_j (P_ji − P_ij)` taken literally.
    AsPrinted,
}

impl FromStr for InjectionConvention {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "physical" => Ok(Self::Physical),
            "as_printed" | "as-printed" => Ok(Self::AsPrinted),
            other => Err(GridError::InvalidArgument(format!("unknown injection convention {other:?}"))),
        }
    }
}

/// Flow from `i` to `j` over a branch with admittance `g + jb`.
pub fn directed_flow(g: f64, b: f64, vi: f64, vj: f64, ti: f64, tj: f64) -> (f64, f64) {
    let d = ti - tj;
    let (s, c) = d.sin_cos();
    let p = vi * vi * g - vi * vj * (g * c + b * s);
    let q = -vi * vi * b - vi * vj * (g * s - b * c);
    (p, q)
}

fn flow_from(line: &Line, from: usize, x: &StateVector) -> (f64, f64) {
    let to = if from == line.from { line.to } else { line.from };
    directed_flow(line.g, line.b, x.v[from], x.v[to], x.theta[from], x.theta[to])
}

/// `(P_ij, Q_ij)` in the line's stored direction.
pub fn line_flows(net: &Network, x: &StateVector, line: usize) -> Result<(f64, f64)> {
    let l = net
        .line(line)
        .ok_or_else(|| GridError::InvalidArgument(format!("no line {line}")))?;
    Ok(flow_from(l, l.from, x))
}

/// Active and reactive injection at every bus.
pub fn bus_injections(net: &Network, x: &StateVector, convention: InjectionConvention) -> (Vec<f64>, Vec<f64>) {
    let n = net.bus_count();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for (bus, (pi, qi)) in p.iter_mut().zip(q.iter_mut()).enumerate() {
        for &(id, nb) in net.neighbors(bus) {
            let line = &net.lines()[id];
            let (p_out, q_out) = flow_from(line, bus, x);
            match convention {
                InjectionConvention::Physical => {
                    *pi += p_out;
                    *qi += q_out;
                }
                InjectionConvention::AsPrinted => {
                    let (p_in, q_in) = flow_from(line, nb, x);
                    *pi += p_in - p_out;
                    *qi += q_in - q_out;
                }
            }
        }
    }
    (p, q)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MeasurementKind {
    PFlow,
    QFlow,
    PInj,
    QInj,
}

impl MeasurementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PFlow => "p_flow",
            Self::QFlow => "q_flow",
            Self::PInj => "p_inj",
            Self::QInj => "q_inj",
        }
    }

    pub fn is_flow(self) -> bool {
        matches!(self, Self::PFlow | Self::QFlow)
    }
}

impl FromStr for MeasurementKind {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p_flow" => Ok(Self::PFlow),
            "q_flow" => Ok(Self::QFlow),
            "p_inj" => Ok(Self::PInj),
            "q_inj" => Ok(Self::QInj),
            other => Err(GridError::InvalidDescriptor(format!("unknown kind {other:?}"))),
        }
    }
}

/// One measured quantity. `location` is a line id for flows and a bus id for injections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MeasurementDescriptor {
    pub kind: MeasurementKind,
    pub location: usize,
}

impl MeasurementDescriptor {
    pub fn new(kind: MeasurementKind, location: usize) -> Self {
        Self { kind, location }
    }

    /// Column id such as `p_inj:5`.
    pub fn id(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for MeasurementDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.location)
    }
}

impl FromStr for MeasurementDescriptor {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, loc) = s
            .split_once(':')
            .ok_or_else(|| GridError::InvalidDescriptor(format!("expected kind:location, got {s:?}")))?;
        let location = loc
            .trim()
            .parse()
            .map_err(|_| GridError::InvalidDescriptor(format!("bad location in {s:?}")))?;
        Ok(Self::new(kind.trim().parse()?, location))
    }
}

/// Checks locations against the network and rejects duplicates.
pub fn validate_descriptors(net: &Network, descriptors: &[MeasurementDescriptor]) -> Result<()> {
    let mut seen = HashSet::new();
    for d in descriptors {
        let limit = if d.kind.is_flow() { net.lines().len() } else { net.bus_count() };
        if d.location >= limit {
            return Err(GridError::InvalidDescriptor(format!("{d} is out of range")));
        }
        if !seen.insert(*d) {
            return Err(GridError::InvalidDescriptor(format!("duplicate descriptor {d}")));
        }
    }
    Ok(())
}

/// One timestep of measurements. `mask[i] == false` marks a missing entry.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementFrame {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl MeasurementFrame {
    pub fn observed(values: Vec<f64>) -> Self {
        let mask = vec![true; values.len()];
        Self { values, mask }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }

    /// Values with missing entries replaced by zero.
    pub fn zero_filled(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect()
    }
}

/// Evaluates `h(x)` for the given descriptors. Every entry is marked observed.
pub fn measurement_function(
    net: &Network,
    x: &StateVector,
    descriptors: &[MeasurementDescriptor],
    convention: InjectionConvention,
) -> Result<MeasurementFrame> {
    x.validate(net)?;
    validate_descriptors(net, descriptors)?;
    let needs_inj = descriptors.iter().any(|d| !d.kind.is_flow());
    let (p_inj, q_inj) = if needs_inj {
        bus_injections(net, x, convention)
    } else {
        (Vec::new(), Vec::new())
    };
    let values = descriptors
        .iter()
        .map(|d| match d.kind {
            MeasurementKind::PFlow => line_flows(net, x, d.location).map(|f| f.0),
            MeasurementKind::QFlow => line_flows(net, x, d.location).map(|f| f.1),
            MeasurementKind::PInj => Ok(p_inj[d.location]),
            MeasurementKind::QInj => Ok(q_inj[d.location]),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasurementFrame::observed(values))
}

/// Multiplies each value by `1 + rel_std·ε` with `ε ~ N(0, 1)`.
pub fn add_relative_noise<R: Rng>(frame: &mut MeasurementFrame, rel_std: f64, rng: &mut R) -> Result<()> {
    if !(rel_std >= 0.0 && rel_std.is_finite()) {
        return Err(GridError::InvalidArgument(format!("noise std {rel_std}")));
    }
    if rel_std == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, rel_std).expect("std checked above");
    for v in &mut frame.values {
        *v *= 1.0 + normal.sample(rng);
    }
    Ok(())
}
