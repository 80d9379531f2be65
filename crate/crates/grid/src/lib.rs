//! Radial distribution feeders, Newton-Raphson AC power flow and the
//! measurement function mapping bus states to line flows and injections.

mod error;
pub mod feeder;
pub mod io;
mod measurement;
mod network;
mod powerflow;

pub use error::{GridError, Result};
pub use feeder::{generate_feeder, instrumented_buses, place_sensors, sensor_count, ImpedanceRanges};
pub use measurement::{
    add_relative_noise, bus_injections, directed_flow, line_flows, measurement_function, validate_descriptors,
    InjectionConvention, MeasurementDescriptor, MeasurementFrame, MeasurementKind,
};
pub use network::{Line, Network, StateVector};
pub use powerflow::{
    admittance_matrix, calc_injections, jacobian, solve_power_flow, PowerFlowOptions, PowerFlowSolution,
};
