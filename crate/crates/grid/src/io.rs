//! Network TOML files and measurement descriptor CSV files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};
use crate::measurement::{validate_descriptors, MeasurementDescriptor};
use crate::network::{Line, Network};

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    name: String,
    bus_count: usize,
    slack: usize,
    lines: Vec<Line>,
}

pub fn network_to_toml(net: &Network) -> Result<String> {
    let file = NetworkFile {
        name: net.name().to_string(),
        bus_count: net.bus_count(),
        slack: net.slack(),
        lines: net.lines().to_vec(),
    };
    toml::to_string(&file).map_err(|e| GridError::Parse(e.to_string()))
}

pub fn network_from_toml(text: &str) -> Result<Network> {
    let file: NetworkFile = toml::from_str(text).map_err(|e| GridError::Parse(e.to_string()))?;
    Network::new(file.name, file.bus_count, file.slack, file.lines)
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, network_to_toml(net)?)?;
    Ok(())
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    network_from_toml(&fs::read_to_string(path)?)
}

/// Writes `kind,location` rows in column order.
pub fn save_descriptors(descriptors: &[MeasurementDescriptor], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["kind", "location"]).map_err(csv_err)?;
    for d in descriptors {
        w.write_record([d.kind.as_str(), &d.location.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_descriptors(path: impl AsRef<Path>) -> Result<Vec<MeasurementDescriptor>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 2 {
            return Err(GridError::Parse(format!("descriptor row {row}: expected 2 fields")));
        }
        out.push(format!("{}:{}", &rec[0], &rec[1]).parse()?);
    }
    Ok(out)
}

/// Loads descriptors and checks them against `net`.
pub fn load_descriptors_for(net: &Network, path: impl AsRef<Path>) -> Result<Vec<MeasurementDescriptor>> {
    let d = load_descriptors(path)?;
    validate_descriptors(net, &d)?;
    Ok(d)
}

fn csv_err(e: csv::Error) -> GridError {
    GridError::Parse(e.to_string())
}
