use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};

/// A series branch with per-unit admittance `g + jb`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub g: f64,
    pub b: f64,
}

/// Feeder topology. Lines are indexed by their position in `lines`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    name: String,
    bus_count: usize,
    slack: usize,
    lines: Vec<Line>,
    /// Per bus: (line id, neighbouring bus).
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Network {
    pub fn new(name: impl Into<String>, bus_count: usize, slack: usize, lines: Vec<Line>) -> Result<Self> {
        let bad = |msg: String| Err(GridError::InvalidNetwork(msg));
        if bus_count == 0 {
            return bad("network has no buses".into());
        }
        if slack >= bus_count {
            return bad(format!("slack bus {slack} out of range for {bus_count} buses"));
        }
        let mut adjacency = vec![Vec::new(); bus_count];
        for (id, line) in lines.iter().enumerate() {
            if line.from >= bus_count || line.to >= bus_count {
                return bad(format!("line {id} references a bus outside 0..{bus_count}"));
            }
            if line.from == line.to {
                return bad(format!("line {id} is a self-loop at bus {}", line.from));
            }
            if !line.g.is_finite() || !line.b.is_finite() {
                return bad(format!("line {id} has a non-finite admittance"));
            }
            adjacency[line.from].push((id, line.to));
            adjacency[line.to].push((id, line.from));
        }

        let mut seen = vec![false; bus_count];
        let mut queue = VecDeque::from([slack]);
        seen[slack] = true;
        while let Some(bus) = queue.pop_front() {
            for &(_, nb) in &adjacency[bus] {
                if !seen[nb] {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
        if let Some(island) = seen.iter().position(|s| !s) {
            return bad(format!("bus {island} is not connected to the slack bus"));
        }

        Ok(Self {
            name: name.into(),
            bus_count,
            slack,
            lines,
            adjacency,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bus_count(&self) -> usize {
        self.bus_count
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn line(&self, id: usize) -> Option<&Line> {
        self.lines.get(id)
    }

    /// Incident `(line id, neighbour)` pairs of `bus`.
    pub fn neighbors(&self, bus: usize) -> &[(usize, usize)] {
        &self.adjacency[bus]
    }

    /// A radial network has exactly `n - 1` lines (it is known to be connected).
    pub fn is_radial(&self) -> bool {
        self.lines.len() + 1 == self.bus_count
    }
}

/// Bus voltage magnitudes (pu) and angles (rad).
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
}

impl StateVector {
    pub fn new(v: Vec<f64>, theta: Vec<f64>) -> Self {
        Self { v, theta }
    }

    /// `V = magnitude`, `θ = 0` everywhere.
    pub fn flat(bus_count: usize, magnitude: f64) -> Self {
        Self {
            v: vec![magnitude; bus_count],
            theta: vec![0.0; bus_count],
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        let n = net.bus_count();
        if self.v.len() != n || self.theta.len() != n {
            return Err(GridError::InvalidState(format!(
                "expected {n} buses, got {} magnitudes and {} angles",
                self.v.len(),
                self.theta.len()
            )));
        }
        if let Some(i) = self.v.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(GridError::InvalidState(format!("bus {i} has magnitude {}", self.v[i])));
        }
        if let Some(i) = self.theta.iter().position(|t| !t.is_finite()) {
            return Err(GridError::InvalidState(format!("bus {i} has a non-finite angle")));
        }
        Ok(())
    }

    /// `[V_0..V_{n-1}, θ_0..θ_{n-1}]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.v.iter().chain(&self.theta).copied().collect()
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() % 2 != 0 {
            return Err(GridError::InvalidState(format!("odd state length {}", values.len())));
        }
        let n = values.len() / 2;
        Ok(Self::new(values[..n].to_vec(), values[n..].to_vec()))
    }
}
