use dsse_grid::{
    bus_injections, generate_feeder, line_flows, measurement_function, place_sensors, solve_power_flow,
    ImpedanceRanges, InjectionConvention, Line, MeasurementKind, Network, PowerFlowOptions, StateVector,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Injection at the load bus of a two-bus system with `V_0 = 1, θ_0 = 0`.
fn two_bus_residual(g: f64, b: f64, v: f64, th: f64, p: f64, q: f64) -> (f64, f64) {
    let pc = v * v * g - v * (g * th.cos() + b * th.sin());
    let qc = -v * v * b - v * (g * th.sin() - b * th.cos());
    (pc - p, qc - q)
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut flo = f(lo);
    assert!(flo * f(hi) <= 0.0, "no sign change in [{lo}, {hi}]");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm * flo <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    0.5 * (lo + hi)
}

/// Coarse grid over (V, θ), then nested bisection: θ(V) zeroes the P residual,
/// V zeroes the Q residual along that curve.
fn brute_force_two_bus(g: f64, b: f64, p: f64, q: f64) -> (f64, f64) {
    let step = 1e-3;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for iv in 0..=400 {
        let v = 0.8 + iv as f64 * step;
        for it in 0..=600 {
            let th = -0.3 + it as f64 * step;
            let (rp, rq) = two_bus_residual(g, b, v, th, p, q);
            let r = rp.abs() + rq.abs();
            if r < best.0 {
                best = (r, v, th);
            }
        }
    }
    let (_, v0, t0) = best;
    let theta_of = |v: f64| bisect(t0 - 0.05, t0 + 0.05, |th| two_bus_residual(g, b, v, th, p, q).0);
    let v = bisect(v0 - 0.01, v0 + 0.01, |v| two_bus_residual(g, b, v, theta_of(v), p, q).1);
    (v, theta_of(v))
}

#[test]
fn two_bus_matches_brute_force_oracle() {
    let cases = [(4.0, -8.0, -0.2, -0.05), (1.5, -2.0, -0.3, -0.1), (10.0, -12.0, -0.5, -0.2), (3.0, -6.0, 0.1, 0.02)];
    for (g, b, p, q) in cases {
        let net = Network::new("two", 2, 0, vec![Line { from: 0, to: 1, g, b }]).unwrap();
        let sol = solve_power_flow(&net, &[0.0, p], &[0.0, q], &PowerFlowOptions::default()).unwrap();
        let (v, th) = brute_force_two_bus(g, b, p, q);
        assert!((sol.state.v[1] - v).abs() < 1e-6, "V {} vs {v}", sol.state.v[1]);
        assert!((sol.state.theta[1] - th).abs() < 1e-6, "θ {} vs {th}", sol.state.theta[1]);
    }
}

fn assert_tree(net: &Network) {
    let n = net.bus_count();
    assert_eq!(net.lines().len(), n - 1);
    // Union-find over the raw line list: a cycle would join two already-joined buses.
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for l in net.lines() {
        let (a, b) = (root(&mut parent, l.from), root(&mut parent, l.to));
        assert_ne!(a, b, "cycle through line {l:?}");
        parent[a] = b;
    }
    let r = root(&mut parent, 0);
    assert!((0..n).all(|i| root(&mut parent, i) == r));
}

#[test]
fn generated_feeders_are_trees_and_deterministic() {
    for n in [2, 3, 15, 40, 144] {
        for seed in 0..5 {
            let net = generate_feeder(n, seed, &ImpedanceRanges::default()).unwrap();
            assert_tree(&net);
            assert_eq!(net, generate_feeder(n, seed, &ImpedanceRanges::default()).unwrap());
        }
    }
}

#[test]
fn sensor_placement_counts_and_determinism() {
    let net = generate_feeder(144, 7, &ImpedanceRanges::default()).unwrap();
    let d = place_sensors(&net, 0.6, 3).unwrap();
    let buses: Vec<usize> = d.iter().filter(|d| d.kind == MeasurementKind::PInj).map(|d| d.location).collect();
    assert_eq!(buses.len(), 86);
    assert_eq!(d, place_sensors(&net, 0.6, 3).unwrap());
    for f in d.iter().filter(|d| d.kind == MeasurementKind::PFlow) {
        let l = net.lines()[f.location];
        assert!(buses.contains(&l.from) || buses.contains(&l.to));
    }
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> StateVector {
    let v = (0..n).map(|_| rng.random_range(0.9..1.1)).collect();
    let mut theta: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
    theta[0] = 0.0;
    StateVector::new(v, theta)
}

#[test]
fn injections_equal_brute_force_line_walk() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..10 {
        let net = generate_feeder(12, seed, &ImpedanceRanges::default()).unwrap();
        let x = random_state(&mut rng, 12);
        let flow = |i: usize, j: usize, l: &Line| {
            let d = x.theta[i] - x.theta[j];
            let p = x.v[i] * x.v[i] * l.g - x.v[i] * x.v[j] * (l.g * d.cos() + l.b * d.sin());
            let q = -x.v[i] * x.v[i] * l.b - x.v[i] * x.v[j] * (l.g * d.sin() - l.b * d.cos());
            (p, q)
        };
        let (pp, qp) = bus_injections(&net, &x, InjectionConvention::Physical);
        let (pa, qa) = bus_injections(&net, &x, InjectionConvention::AsPrinted);
        for bus in 0..12 {
            let (mut sp, mut sq, mut ap, mut aq) = (0.0, 0.0, 0.0, 0.0);
            for l in net.lines() {
                let other = if l.from == bus {
                    l.to
                } else if l.to == bus {
                    l.from
                } else {
                    continue;
                };
                let (p_out, q_out) = flow(bus, other, l);
                let (p_in, q_in) = flow(other, bus, l);
                sp += p_out;
                sq += q_out;
                ap += p_in - p_out;
                aq += q_in - q_out;
            }
            assert!((pp[bus] - sp).abs() < 1e-12 && (qp[bus] - sq).abs() < 1e-12);
            assert!((pa[bus] - ap).abs() < 1e-12 && (qa[bus] - aq).abs() < 1e-12);
        }
    }
}

#[test]
fn flat_states_carry_no_power() {
    let net = generate_feeder(15, 1, &ImpedanceRanges::default()).unwrap();
    for c in [0.9, 1.0, 1.05] {
        let x = StateVector::flat(15, c);
        for conv in [InjectionConvention::Physical, InjectionConvention::AsPrinted] {
            let (p, q) = bus_injections(&net, &x, conv);
            assert!(p.iter().chain(&q).all(|&v| v == 0.0));
        }
        for id in 0..net.lines().len() {
            assert_eq!(line_flows(&net, &x, id).unwrap(), (0.0, 0.0));
        }
    }
}

fn loads(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut p: Vec<f64> = (0..n).map(|_| -rng.random_range(0.0..0.05)).collect();
    let mut q: Vec<f64> = p.iter().map(|&p| p * rng.random_range(0.1..0.5)).collect();
    p[0] = 0.0;
    q[0] = 0.0;
    (p, q)
}

#[test]
fn measurement_round_trip_on_random_loads() {
    let net = generate_feeder(15, 5, &ImpedanceRanges::default()).unwrap();
    let d = place_sensors(&net, 1.0, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (p, q) = loads(&mut rng, 15);
        let sol = solve_power_flow(&net, &p, &q, &PowerFlowOptions::default()).unwrap();
        assert!(sol.final_mismatch() < 1e-8);
        let frame = measurement_function(&net, &sol.state, &d, InjectionConvention::Physical).unwrap();
        for (desc, &val) in d.iter().zip(&frame.values) {
            match desc.kind {
                MeasurementKind::PInj if desc.location != 0 => assert!((val - p[desc.location]).abs() < 1e-8),
                MeasurementKind::QInj if desc.location != 0 => assert!((val - q[desc.location]).abs() < 1e-8),
                _ => {}
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn line_losses_are_nonnegative(
        g in 0.0f64..20.0, b in -20.0f64..20.0,
        vi in 0.8f64..1.2, vj in 0.8f64..1.2,
        ti in -0.5f64..0.5, tj in -0.5f64..0.5,
    ) {
        let net = Network::new("p", 2, 0, vec![Line { from: 0, to: 1, g, b }]).unwrap();
        let x = StateVector::new(vec![vi, vj], vec![ti, tj]);
        let (pij, _) = line_flows(&net, &x, 0).unwrap();
        let (p, _) = bus_injections(&net, &x, InjectionConvention::Physical);
        prop_assert!((p[0] - pij).abs() < 1e-12);
        prop_assert!(p[0] + p[1] >= -1e-12);
    }

    #[test]
    fn solved_states_reproduce_specified_injections(seed in 0u64..1000, n in 2usize..20) {
        let net = generate_feeder(n, seed, &ImpedanceRanges::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, q) = loads(&mut rng, n);
        let sol = solve_power_flow(&net, &p, &q, &PowerFlowOptions::default()).unwrap();
        prop_assert_eq!(sol.state.theta[0], 0.0);
        prop_assert_eq!(sol.state.v[0], 1.0);
        let (pc, qc) = bus_injections(&net, &sol.state, InjectionConvention::Physical);
        for i in 1..n {
            prop_assert!((pc[i] - p[i]).abs() < 1e-8 && (qc[i] - q[i]).abs() < 1e-8);
        }
    }
}
