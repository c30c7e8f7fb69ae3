//! Shared test fixtures: the bundled 14-bus case, an independent reference
//! power-flow solver, and finite-difference helpers.
//!
//! The reference solver shares only the parsed case with the production
//! code. It builds its own admittance matrix with a complex tap, derives
//! the Jacobian through the complex-matrix identities for dS/dVa and
//! dS/dVm rather than per-entry polar partials, and solves its linear
//! systems with a hand-rolled Gaussian elimination.

#![allow(dead_code)]

use num_complex::Complex64;
use vsa_core::model::{BusKind, NetworkCase};

pub fn ieee14() -> NetworkCase {
    vsa_core::cases::ieee14()
}

pub const LOAD_BUSES: [u32; 8] = [4, 5, 9, 10, 11, 12, 13, 14];

pub struct OracleSolution {
    /// Complex bus voltages.
    pub v: Vec<Complex64>,
    pub iterations: usize,
}

/// Straight-line Newton-Raphson: flat start, fixed bus kinds, no reactive
/// limit handling.
pub fn oracle_solve(case: &NetworkCase, tol: f64, max_iter: usize) -> Option<OracleSolution> {
    let n = case.n_buses();
    let y = oracle_ybus(case);

    // Scheduled complex injections, per unit.
    let mut s_sched = vec![Complex64::new(0.0, 0.0); n];
    for (i, bus) in case.buses.iter().enumerate() {
        s_sched[i] = Complex64::new(-bus.p_load, -bus.q_load) / case.base_mva;
    }
    for g in &case.generators {
        let i = case.bus_index(g.bus).unwrap();
        s_sched[i] += Complex64::new(g.p_gen, 0.0) / case.base_mva;
    }

    // Flat start.
    let mut v: Vec<Complex64> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, bus)| match bus.kind {
            BusKind::Pq => Complex64::new(1.0, 0.0),
            _ => {
                let vset = case
                    .generators
                    .iter()
                    .find(|g| g.bus == bus.id)
                    .map(|g| g.v_setpoint)
                    .unwrap_or(bus.v_mag);
                Complex64::from_polar(vset, case.buses[i].v_ang)
            }
        })
        .collect();

    let pvpq: Vec<usize> = (0..n)
        .filter(|&i| case.buses[i].kind != BusKind::Slack)
        .collect();
    let pq: Vec<usize> = (0..n)
        .filter(|&i| case.buses[i].kind == BusKind::Pq)
        .collect();
    let n_state = pvpq.len() + pq.len();

    for iteration in 0..=max_iter {
        // Mismatch f = S_calc - S_sched.
        let i_inj: Vec<Complex64> = (0..n)
            .map(|r| (0..n).map(|c| y[r][c] * v[c]).sum())
            .collect();
        let s_calc: Vec<Complex64> = (0..n).map(|r| v[r] * i_inj[r].conj()).collect();

        let mut g = vec![0.0; n_state];
        for (r, &i) in pvpq.iter().enumerate() {
            g[r] = (s_calc[i] - s_sched[i]).re;
        }
        for (r, &i) in pq.iter().enumerate() {
            g[pvpq.len() + r] = (s_calc[i] - s_sched[i]).im;
        }
        let norm = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if norm <= tol {
            return Some(OracleSolution {
                v,
                iterations: iteration,
            });
        }
        if iteration == max_iter {
            return None;
        }

        // dS/dVa = j diag(V) (diag(I_inj) - Y diag(V))^*
        // dS/dVm = diag(V/|V|) diag(I_inj)^* + diag(V) (Y diag(V/|V|))^*
        let mut ds_dva = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        let mut ds_dvm = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for r in 0..n {
            let e_r = v[r] / v[r].norm();
            for c in 0..n {
                let delta = if r == c {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                let t = delta * i_inj[r] - y[r][c] * v[c];
                ds_dva[r][c] = Complex64::i() * v[r] * t.conj();
                let e_c = v[c] / v[c].norm();
                ds_dvm[r][c] = delta * e_r * i_inj[r].conj() + v[r] * (y[r][c] * e_c).conj();
            }
        }

        let mut jac = vec![vec![0.0; n_state]; n_state];
        for (r, &i) in pvpq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                jac[r][c] = ds_dva[i][k].re;
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[r][pvpq.len() + c] = ds_dvm[i][k].re;
            }
        }
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                jac[pvpq.len() + r][c] = ds_dva[i][k].im;
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[pvpq.len() + r][pvpq.len() + c] = ds_dvm[i][k].im;
            }
        }

        let neg_g: Vec<f64> = g.iter().map(|x| -x).collect();
        let dx = gaussian_solve(jac, neg_g)?;

        for (r, &i) in pvpq.iter().enumerate() {
            let mag = v[i].norm();
            let ang = v[i].arg() + dx[r];
            v[i] = Complex64::from_polar(mag, ang);
        }
        for (r, &i) in pq.iter().enumerate() {
            let mag = v[i].norm() + dx[pvpq.len() + r];
            let ang = v[i].arg();
            v[i] = Complex64::from_polar(mag, ang);
        }
    }
    None
}

fn oracle_ybus(case: &NetworkCase) -> Vec<Vec<Complex64>> {
    let n = case.n_buses();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for br in &case.branches {
        if !br.in_service {
            continue;
        }
        let f = case.bus_index(br.from_bus).unwrap();
        let t = case.bus_index(br.to_bus).unwrap();
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let bc = Complex64::new(0.0, br.b_charging / 2.0);
        let tap = Complex64::from_polar(br.tap_ratio, br.phase_shift);
        y[f][f] += (ys + bc) / (tap * tap.conj());
        y[f][t] += -ys / tap.conj();
        y[t][f] += -ys / tap;
        y[t][t] += ys + bc;
    }
    for (i, bus) in case.buses.iter().enumerate() {
        y[i][i] += Complex64::new(bus.shunt_g, bus.shunt_b);
    }
    y
}

/// Dense Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn gaussian_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let pivot = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[pivot][k].abs() < 1e-14 {
            return None;
        }
        a.swap(k, pivot);
        b.swap(k, pivot);
        for i in k + 1..n {
            let factor = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= factor * a[k][j];
            }
            b[i] -= factor * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = b[i];
        for j in i + 1..n {
            acc -= a[i][j] * x[j];
        }
        x[i] = acc / a[i][i];
    }
    Some(x)
}

/// Case with every load and every generator dispatch scaled by `1 + lambda`
/// (the continuation path the index is defined under).
pub fn stressed_case(case: &NetworkCase, lambda: f64) -> NetworkCase {
    let mut buses = case.buses.clone();
    for b in &mut buses {
        b.p_load *= 1.0 + lambda;
        b.q_load *= 1.0 + lambda;
    }
    let mut gens = case.generators.clone();
    for g in &mut gens {
        g.p_gen *= 1.0 + lambda;
    }
    NetworkCase::new(case.base_mva, buses, case.branches.clone(), gens).unwrap()
}

/// Nominal-PV buses that ended up switched to PQ in a solved point.
pub fn switched_buses(case: &NetworkCase, point: &vsa_core::pf::OperatingPoint) -> Vec<u32> {
    case.buses
        .iter()
        .enumerate()
        .filter(|(i, b)| b.kind == BusKind::Pv && point.bus_kinds[*i] == BusKind::Pq)
        .map(|(_, b)| b.id)
        .collect()
}
