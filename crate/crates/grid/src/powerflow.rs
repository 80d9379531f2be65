use nalgebra::{DMatrix, DVector};

use crate::error::{GridError, Result};
use crate::network::{Network, StateVector};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerFlowOptions {
    pub slack_voltage: f64,
    /// Converged when the largest absolute injection mismatch drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            slack_voltage: 1.0,
            tolerance: 1e-8,
            max_iterations: 30,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PowerFlowSolution {
    pub state: StateVector,
    /// Newton updates applied before convergence.
    pub iterations: usize,
    /// Max-norm mismatch at each evaluated point, starting from flat start.
    pub mismatch_history: Vec<f64>,
}

impl PowerFlowSolution {
    pub fn final_mismatch(&self) -> f64 {
        *self.mismatch_history.last().expect("history is never empty")
    }
}

/// Dense bus admittance matrix split into `(G, B)`.
pub fn admittance_matrix(net: &Network) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = net.bus_count();
    let mut g = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    for l in net.lines() {
        g[(l.from, l.from)] += l.g;
        g[(l.to, l.to)] += l.g;
        g[(l.from, l.to)] -= l.g;
        g[(l.to, l.from)] -= l.g;
        b[(l.from, l.from)] += l.b;
        b[(l.to, l.to)] += l.b;
        b[(l.from, l.to)] -= l.b;
        b[(l.to, l.from)] -= l.b;
    }
    (g, b)
}

/// Injections computed from the admittance matrix.
pub fn calc_injections(g: &DMatrix<f64>, b: &DMatrix<f64>, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        for k in 0..n {
            let (gik, bik) = (g[(i, k)], b[(i, k)]);
            if gik == 0.0 && bik == 0.0 {
                continue;
            }
            let (s, c) = (theta[i] - theta[k]).sin_cos();
            p[i] += v[i] * v[k] * (gik * c + bik * s);
            q[i] += v[i] * v[k] * (gik * s - bik * c);
        }
    }
    (p, q)
}

/// Polar-form Jacobian of `[P; Q]` with respect to `[θ; V]` over the non-slack buses.
pub fn jacobian(
    g: &DMatrix<f64>,
    b: &DMatrix<f64>,
    v: &[f64],
    theta: &[f64],
    pq: &[usize],
) -> DMatrix<f64> {
    let (p, q) = calc_injections(g, b, v, theta);
    let m = pq.len();
    let mut jac = DMatrix::zeros(2 * m, 2 * m);
    for (r, &i) in pq.iter().enumerate() {
        for (c, &k) in pq.iter().enumerate() {
            let (gik, bik) = (g[(i, k)], b[(i, k)]);
            if i == k {
                jac[(r, c)] = -q[i] - bik * v[i] * v[i];
                jac[(r, m + c)] = p[i] / v[i] + gik * v[i];
                jac[(m + r, c)] = p[i] - gik * v[i] * v[i];
                jac[(m + r, m + c)] = q[i] / v[i] - bik * v[i];
            } else {
                let (s, co) = (theta[i] - theta[k]).sin_cos();
                jac[(r, c)] = v[i] * v[k] * (gik * s - bik * co);
                jac[(r, m + c)] = v[i] * (gik * co + bik * s);
                jac[(m + r, c)] = -v[i] * v[k] * (gik * co + bik * s);
                jac[(m + r, m + c)] = v[i] * (gik * s - bik * co);
            }
        }
    }
    jac
}

/// Newton-Raphson from a flat start. `p_spec`/`q_spec` are the net injections
/// (generation minus demand) at every bus; entries at the slack bus are ignored.
pub fn solve_power_flow(
    net: &Network,
    p_spec: &[f64],
    q_spec: &[f64],
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    let n = net.bus_count();
    if p_spec.len() != n || q_spec.len() != n {
        return Err(GridError::InvalidArgument(format!(
            "expected {n} injections, got {} and {}",
            p_spec.len(),
            q_spec.len()
        )));
    }
    if p_spec.iter().chain(q_spec).any(|x| !x.is_finite()) {
        return Err(GridError::InvalidArgument("non-finite injection".into()));
    }
    if !(opts.slack_voltage > 0.0 && opts.slack_voltage.is_finite()) {
        return Err(GridError::InvalidArgument(format!("slack voltage {}", opts.slack_voltage)));
    }

    let slack = net.slack();
    let pq: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = pq.len();
    let (g, b) = admittance_matrix(net);
    let mut v = vec![1.0; n];
    v[slack] = opts.slack_voltage;
    let mut theta = vec![0.0; n];

    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let (p, q) = calc_injections(&g, &b, &v, &theta);
        let mut f = DVector::zeros(2 * m);
        for (r, &i) in pq.iter().enumerate() {
            f[r] = p_spec[i] - p[i];
            f[m + r] = q_spec[i] - q[i];
        }
        let mismatch = f.amax();
        history.push(mismatch);
        if !mismatch.is_finite() {
            return Err(GridError::NonConvergence { iterations, mismatch });
        }
        if mismatch < opts.tolerance {
            break;
        }
        if iterations == opts.max_iterations {
            return Err(GridError::NonConvergence { iterations, mismatch });
        }

        let jac = jacobian(&g, &b, &v, &theta, &pq);
        let dx = jac
            .lu()
            .solve(&f)
            .ok_or(GridError::SingularJacobian { iteration: iterations })?;
        if dx.iter().any(|x| !x.is_finite()) {
            return Err(GridError::SingularJacobian { iteration: iterations });
        }
        for (r, &i) in pq.iter().enumerate() {
            theta[i] += dx[r];
            v[i] += dx[m + r];
        }
        iterations += 1;
    }

    Ok(PowerFlowSolution {
        state: StateVector::new(v, theta),
        iterations,
        mismatch_history: history,
    })
}
