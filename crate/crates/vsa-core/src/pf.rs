//! Newton-Raphson AC power flow in polar coordinates, with optional
//! enforcement of generator reactive limits via PV-to-PQ switching.
//!
//! Sign conventions, fixed once and used everywhere:
//! - bus injections are generation minus load, per unit;
//! - the Jacobian blocks hold partials of the *computed* injections, so a
//!   Newton step solves `J * dx = mismatch` with `mismatch = scheduled -
//!   computed` and updates `x += dx`, where `x = (theta, V)`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{DivergenceReason, DivergenceReport, Error, Result};
use crate::model::{BusKind, NetworkCase};
use crate::ybus::{
    branch_elements, build_admittance, check_connectivity, AdmittanceMatrix, Connectivity,
};

/// Solver state: voltages plus the live bus-kind assignment, which may
/// differ from the case's nominal kinds after Q-limit switching.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    /// Voltage magnitude per bus, per unit.
    pub v_mag: DVector<f64>,
    /// Voltage angle per bus, radians.
    pub v_ang: DVector<f64>,
    /// Reactive output per generator, MVAr (aligned with `case.generators`).
    pub q_gen: Vec<f64>,
    pub bus_kinds: Vec<BusKind>,
}

impl OperatingPoint {
    /// Flat start: unit magnitude at PQ buses, setpoints at generator buses,
    /// all angles at the slack reference.
    pub fn flat_start(case: &NetworkCase) -> Self {
        let n = case.n_buses();
        let slack_ang = case.buses[case.slack_index()].v_ang;
        let mut v_mag = DVector::from_element(n, 1.0);
        for (i, bus) in case.buses.iter().enumerate() {
            if bus.kind != BusKind::Pq {
                v_mag[i] = case.v_setpoint_at(i).unwrap_or(bus.v_mag);
            }
        }
        Self {
            v_mag,
            v_ang: DVector::from_element(n, slack_ang),
            q_gen: case.generators.iter().map(|g| g.q_gen).collect(),
            bus_kinds: case.buses.iter().map(|b| b.kind).collect(),
        }
    }

    /// Start from the voltages stored in the case file.
    pub fn from_case(case: &NetworkCase) -> Self {
        Self {
            v_mag: DVector::from_iterator(case.n_buses(), case.buses.iter().map(|b| b.v_mag)),
            v_ang: DVector::from_iterator(case.n_buses(), case.buses.iter().map(|b| b.v_ang)),
            q_gen: case.generators.iter().map(|g| g.q_gen).collect(),
            bus_kinds: case.buses.iter().map(|b| b.kind).collect(),
        }
    }

    pub fn complex_voltage(&self, i: usize) -> Complex64 {
        Complex64::from_polar(self.v_mag[i], self.v_ang[i])
    }

    pub fn voltages(&self) -> DVector<Complex64> {
        DVector::from_iterator(
            self.v_mag.len(),
            (0..self.v_mag.len()).map(|i| self.complex_voltage(i)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfOptions {
    /// Per-unit mismatch tolerance (max norm).
    pub tol: f64,
    /// Newton iteration cap per inner solve.
    pub max_iter: usize,
    /// Switch PV buses to PQ when generator reactive limits are violated.
    pub enforce_q_limits: bool,
    /// Start from a flat profile rather than the case-file voltages.
    pub flat_start: bool,
}

impl Default for PfOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20,
            enforce_q_limits: false,
            flat_start: true,
        }
    }
}

/// Converged solve plus its iteration record.
#[derive(Debug, Clone, PartialEq)]
pub struct PfSolution {
    pub point: OperatingPoint,
    /// Newton iterations in the final inner solve.
    pub iterations: usize,
    /// Outer PV/PQ switching rounds taken (1 when no switching happened).
    pub outer_rounds: usize,
    /// Max-norm mismatch per iteration of the final inner solve, including
    /// the converged value.
    pub mismatch_trace: Vec<f64>,
}

/// Partials of the computed injections under a bus-kind partition.
/// Rows and columns follow `ang_buses` (all non-slack) and `pq_buses`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlocks {
    pub f_theta: DMatrix<f64>,
    pub f_v: DMatrix<f64>,
    pub g_theta: DMatrix<f64>,
    pub g_v: DMatrix<f64>,
    pub ang_buses: Vec<usize>,
    pub pq_buses: Vec<usize>,
}

impl JacobianBlocks {
    /// Full Newton matrix `[[f_theta, f_v], [g_theta, g_v]]`.
    pub fn assemble(&self) -> DMatrix<f64> {
        let na = self.ang_buses.len();
        let np = self.pq_buses.len();
        let mut full = DMatrix::zeros(na + np, na + np);
        full.view_mut((0, 0), (na, na)).copy_from(&self.f_theta);
        full.view_mut((0, na), (na, np)).copy_from(&self.f_v);
        full.view_mut((na, 0), (np, na)).copy_from(&self.g_theta);
        full.view_mut((na, na), (np, np)).copy_from(&self.g_v);
        full
    }
}

pub(crate) fn ang_buses(kinds: &[BusKind]) -> Vec<usize> {
    kinds
        .iter()
        .enumerate()
        .filter(|(_, k)| **k != BusKind::Slack)
        .map(|(i, _)| i)
        .collect()
}

pub(crate) fn pq_buses(kinds: &[BusKind]) -> Vec<usize> {
    kinds
        .iter()
        .enumerate()
        .filter(|(_, k)| **k == BusKind::Pq)
        .map(|(i, _)| i)
        .collect()
}

/// Computed complex injections S = V .* conj(Y V), split into (P, Q), per unit.
pub fn computed_injections(
    y: &AdmittanceMatrix,
    point: &OperatingPoint,
) -> (DVector<f64>, DVector<f64>) {
    let v = point.voltages();
    let i_inj = &y.matrix * &v;
    let n = v.len();
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    for k in 0..n {
        let s = v[k] * i_inj[k].conj();
        p[k] = s.re;
        q[k] = s.im;
    }
    (p, q)
}

/// Scheduled active injection per bus, per unit.
fn scheduled_p(case: &NetworkCase) -> DVector<f64> {
    DVector::from_iterator(
        case.n_buses(),
        case.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (case.p_gen_at(i) - b.p_load) / case.base_mva),
    )
}

/// Scheduled reactive injection per bus, per unit. Generator outputs come
/// from the operating point so that pinned machines hold their limit value.
fn scheduled_q(case: &NetworkCase, point: &OperatingPoint) -> DVector<f64> {
    let mut q = DVector::zeros(case.n_buses());
    for (i, bus) in case.buses.iter().enumerate() {
        let gen: f64 = case.generators_at(i).map(|(gi, _)| point.q_gen[gi]).sum();
        q[i] = (gen - bus.q_load) / case.base_mva;
    }
    q
}

/// Per-unit mismatch vector: scheduled minus computed injections, P rows at
/// non-slack buses followed by Q rows at PQ buses (per the point's kinds).
pub fn compute_mismatch(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    point: &OperatingPoint,
) -> Result<DVector<f64>> {
    check_dimensions(case, point)?;
    let (p_calc, q_calc) = computed_injections(y, point);
    let p_sched = scheduled_p(case);
    let q_sched = scheduled_q(case, point);

    let ang = ang_buses(&point.bus_kinds);
    let pq = pq_buses(&point.bus_kinds);
    let mut m = DVector::zeros(ang.len() + pq.len());
    for (r, &i) in ang.iter().enumerate() {
        m[r] = p_sched[i] - p_calc[i];
    }
    for (r, &i) in pq.iter().enumerate() {
        m[ang.len() + r] = q_sched[i] - q_calc[i];
    }
    Ok(m)
}

fn check_dimensions(case: &NetworkCase, point: &OperatingPoint) -> Result<()> {
    let n = case.n_buses();
    if point.v_mag.len() != n || point.v_ang.len() != n || point.bus_kinds.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: point.v_mag.len(),
        });
    }
    if point.q_gen.len() != case.generators.len() {
        return Err(Error::DimensionMismatch {
            expected: case.generators.len(),
            got: point.q_gen.len(),
        });
    }
    Ok(())
}

/// Analytic Jacobian at the point, under the point's bus-kind partition.
pub fn build_jacobian(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    point: &OperatingPoint,
) -> Result<JacobianBlocks> {
    check_dimensions(case, point)?;
    Ok(build_jacobian_partitioned(
        y,
        &point.v_mag,
        &point.v_ang,
        &point.bus_kinds,
    ))
}

/// Jacobian under an explicit bus-kind partition (used by the sensitivity
/// solve, where transitions override the nominal kinds).
pub(crate) fn build_jacobian_partitioned(
    y: &AdmittanceMatrix,
    v_mag: &DVector<f64>,
    v_ang: &DVector<f64>,
    kinds: &[BusKind],
) -> JacobianBlocks {
    let n = v_mag.len();
    let ang = ang_buses(kinds);
    let pq = pq_buses(kinds);

    // Computed P, Q at the point.
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let mut sp = 0.0;
        let mut sq = 0.0;
        for k in 0..n {
            let g = y.g(i, k);
            let b = y.b(i, k);
            let th = v_ang[i] - v_ang[k];
            sp += v_mag[i] * v_mag[k] * (g * th.cos() + b * th.sin());
            sq += v_mag[i] * v_mag[k] * (g * th.sin() - b * th.cos());
        }
        p[i] = sp;
        q[i] = sq;
    }

    let dp_dth = |i: usize, k: usize| -> f64 {
        if i == k {
            -q[i] - y.b(i, i) * v_mag[i] * v_mag[i]
        } else {
            let th = v_ang[i] - v_ang[k];
            v_mag[i] * v_mag[k] * (y.g(i, k) * th.sin() - y.b(i, k) * th.cos())
        }
    };
    let dp_dv = |i: usize, k: usize| -> f64 {
        if i == k {
            p[i] / v_mag[i] + y.g(i, i) * v_mag[i]
        } else {
            let th = v_ang[i] - v_ang[k];
            v_mag[i] * (y.g(i, k) * th.cos() + y.b(i, k) * th.sin())
        }
    };
    let dq_dth = |i: usize, k: usize| -> f64 {
        if i == k {
            p[i] - y.g(i, i) * v_mag[i] * v_mag[i]
        } else {
            let th = v_ang[i] - v_ang[k];
            -v_mag[i] * v_mag[k] * (y.g(i, k) * th.cos() + y.b(i, k) * th.sin())
        }
    };
    let dq_dv = |i: usize, k: usize| -> f64 {
        if i == k {
            q[i] / v_mag[i] - y.b(i, i) * v_mag[i]
        } else {
            let th = v_ang[i] - v_ang[k];
            v_mag[i] * (y.g(i, k) * th.sin() - y.b(i, k) * th.cos())
        }
    };

    let f_theta = DMatrix::from_fn(ang.len(), ang.len(), |r, c| dp_dth(ang[r], ang[c]));
    let f_v = DMatrix::from_fn(ang.len(), pq.len(), |r, c| dp_dv(ang[r], pq[c]));
    let g_theta = DMatrix::from_fn(pq.len(), ang.len(), |r, c| dq_dth(pq[r], ang[c]));
    let g_v = DMatrix::from_fn(pq.len(), pq.len(), |r, c| dq_dv(pq[r], pq[c]));

    JacobianBlocks {
        f_theta,
        f_v,
        g_theta,
        g_v,
        ang_buses: ang,
        pq_buses: pq,
    }
}

/// Reactive generation per bus (MVAr): network-equation injection plus load.
/// Only meaningful at generator buses.
pub(crate) fn bus_reactive_generation(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    point: &OperatingPoint,
) -> DVector<f64> {
    let (_, q_calc) = computed_injections(y, point);
    DVector::from_iterator(
        case.n_buses(),
        case.buses
            .iter()
            .enumerate()
            .map(|(i, b)| q_calc[i] * case.base_mva + b.q_load),
    )
}

/// Split a bus's reactive generation across its machines, proportional to
/// their reactive range (equal shares when all ranges are zero).
pub(crate) fn split_bus_q(case: &NetworkCase, bus_idx: usize, q_bus: f64, q_gen: &mut [f64]) {
    let gens: Vec<usize> = case.generators_at(bus_idx).map(|(gi, _)| gi).collect();
    if gens.is_empty() {
        return;
    }
    let total_range: f64 = gens
        .iter()
        .map(|&gi| case.generators[gi].q_max - case.generators[gi].q_min)
        .sum();
    for &gi in &gens {
        let g = &case.generators[gi];
        let share = if total_range > 0.0 {
            (g.q_max - g.q_min) / total_range
        } else {
            1.0 / gens.len() as f64
        };
        q_gen[gi] = q_bus * share;
    }
}

/// Which limit a switched generator bus is pinned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PinnedLimit {
    QMin,
    QMax,
}

/// Newton-Raphson power flow. With `enforce_q_limits`, an outer loop
/// switches every PV bus whose reactive generation exits its limits to PQ
/// (pinned at the violated limit), re-solves, and switches a pinned bus back
/// when its voltage crosses the setpoint in the releasing direction.
pub fn solve_power_flow(
    case: &NetworkCase,
    options: &PfOptions,
    start: Option<&OperatingPoint>,
) -> Result<PfSolution> {
    match check_connectivity(case, None)? {
        Connectivity::Connected => {}
        Connectivity::Islanded { islands } => return Err(Error::Islanded { islands }),
    }
    let y = build_admittance(case, None)?;

    let mut point = match start {
        Some(p) => {
            check_dimensions(case, p)?;
            p.clone()
        }
        None if options.flat_start => OperatingPoint::flat_start(case),
        None => OperatingPoint::from_case(case),
    };

    // Buses already switched in the starting point keep their pins: a
    // nominal-PV bus arriving as PQ is assumed pinned at whichever limit its
    // recorded output sits closer to.
    let mut pins: HashMap<usize, PinnedLimit> = HashMap::new();
    for (i, bus) in case.buses.iter().enumerate() {
        if bus.kind == BusKind::Pv && point.bus_kinds[i] == BusKind::Pq {
            let (q_min, q_max) = case.q_limits_at(i);
            let q_bus: f64 = case.generators_at(i).map(|(gi, _)| point.q_gen[gi]).sum();
            let limit = if (q_bus - q_max).abs() <= (q_bus - q_min).abs() {
                PinnedLimit::QMax
            } else {
                PinnedLimit::QMin
            };
            pins.insert(i, limit);
        }
    }

    const MAX_OUTER_ROUNDS: usize = 10;
    let slack = case.slack_index();

    for round in 1..=MAX_OUTER_ROUNDS {
        let (iterations, trace) = newton_inner(case, &y, &mut point, options)?;

        let q_bus = bus_reactive_generation(case, &y, &point);

        if !options.enforce_q_limits {
            finalize_q_gen(case, &q_bus, &mut point, &pins);
            return Ok(PfSolution {
                point,
                iterations,
                outer_rounds: round,
                mismatch_trace: trace,
            });
        }

        let mut to_pin: Vec<(usize, PinnedLimit)> = Vec::new();
        let mut to_release: Vec<usize> = Vec::new();

        for (i, _) in case.buses.iter().enumerate() {
            if i == slack {
                continue;
            }
            match point.bus_kinds[i] {
                BusKind::Pv => {
                    let (q_min, q_max) = case.q_limits_at(i);
                    if q_bus[i] > q_max {
                        to_pin.push((i, PinnedLimit::QMax));
                    } else if q_bus[i] < q_min {
                        to_pin.push((i, PinnedLimit::QMin));
                    }
                }
                BusKind::Pq => {
                    if let Some(&limit) = pins.get(&i) {
                        let vset = case.v_setpoint_at(i).expect("pinned bus has a generator");
                        let release = match limit {
                            PinnedLimit::QMax => point.v_mag[i] > vset,
                            PinnedLimit::QMin => point.v_mag[i] < vset,
                        };
                        if release {
                            to_release.push(i);
                        }
                    }
                }
                BusKind::Slack => {}
            }
        }

        if to_pin.is_empty() && to_release.is_empty() {
            finalize_q_gen(case, &q_bus, &mut point, &pins);
            return Ok(PfSolution {
                point,
                iterations,
                outer_rounds: round,
                mismatch_trace: trace,
            });
        }

        for (i, limit) in to_pin {
            point.bus_kinds[i] = BusKind::Pq;
            for (gi, g) in case.generators_at(i) {
                point.q_gen[gi] = match limit {
                    PinnedLimit::QMax => g.q_max,
                    PinnedLimit::QMin => g.q_min,
                };
            }
            pins.insert(i, limit);
        }
        for i in to_release {
            point.bus_kinds[i] = BusKind::Pv;
            point.v_mag[i] = case.v_setpoint_at(i).expect("released bus has a generator");
            pins.remove(&i);
        }
    }

    Err(Error::Diverged(DivergenceReport {
        iterations: MAX_OUTER_ROUNDS,
        mismatch_trace: Vec::new(),
        reason: DivergenceReason::BusKindOscillation,
    }))
}

/// Final generator outputs: every unpinned machine takes its bus's
/// recomputed reactive generation; pinned machines stay exactly at their
/// limit.
fn finalize_q_gen(
    case: &NetworkCase,
    q_bus: &DVector<f64>,
    point: &mut OperatingPoint,
    pins: &HashMap<usize, PinnedLimit>,
) {
    for i in 0..case.n_buses() {
        if pins.contains_key(&i) {
            continue;
        }
        if case.generators_at(i).next().is_some() {
            split_bus_q(case, i, q_bus[i], &mut point.q_gen);
        }
    }
}

fn newton_inner(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    point: &mut OperatingPoint,
    options: &PfOptions,
) -> Result<(usize, Vec<f64>)> {
    let mut trace = Vec::with_capacity(options.max_iter + 1);
    let mut growth_streak = 0usize;

    for iteration in 0..=options.max_iter {
        let m = compute_mismatch(case, y, point)?;
        let norm = if m.is_empty() { 0.0 } else { m.amax() };
        trace.push(norm);

        if !norm.is_finite() {
            return Err(Error::Diverged(DivergenceReport {
                iterations: iteration,
                mismatch_trace: trace,
                reason: DivergenceReason::MismatchGrowth,
            }));
        }
        if norm <= options.tol {
            return Ok((iteration, trace));
        }
        if trace.len() >= 2 && norm > trace[trace.len() - 2] {
            growth_streak += 1;
            if growth_streak >= 3 {
                return Err(Error::Diverged(DivergenceReport {
                    iterations: iteration,
                    mismatch_trace: trace,
                    reason: DivergenceReason::MismatchGrowth,
                }));
            }
        } else {
            growth_streak = 0;
        }
        if iteration == options.max_iter {
            break;
        }

        let jac = build_jacobian(case, y, point)?;
        let ang = jac.ang_buses.clone();
        let pq = jac.pq_buses.clone();
        let dx = jac.assemble().lu().solve(&m).ok_or_else(|| {
            Error::Diverged(DivergenceReport {
                iterations: iteration,
                mismatch_trace: trace.clone(),
                reason: DivergenceReason::SingularJacobian,
            })
        })?;

        for (r, &i) in ang.iter().enumerate() {
            point.v_ang[i] += dx[r];
        }
        for (r, &i) in pq.iter().enumerate() {
            point.v_mag[i] += dx[ang.len() + r];
        }
    }

    Err(Error::Diverged(DivergenceReport {
        iterations: options.max_iter,
        mismatch_trace: trace,
        reason: DivergenceReason::IterationLimit,
    }))
}

/// Complex power at the two ends of a branch under the pi model, in MVA.
/// Both flows are measured from the bus into the branch, so their sum is
/// the branch loss.
pub fn branch_flow(
    case: &NetworkCase,
    point: &OperatingPoint,
    k: usize,
) -> Result<(Complex64, Complex64)> {
    if k >= case.branches.len() {
        return Err(Error::BranchIndexOutOfRange {
            index: k,
            count: case.branches.len(),
        });
    }
    let branch = &case.branches[k];
    if !branch.in_service {
        return Err(Error::BranchOutOfService(k));
    }
    let f = case.bus_index(branch.from_bus)?;
    let t = case.bus_index(branch.to_bus)?;
    let (y_ff, y_ft, y_tf, y_tt) = branch_elements(branch);
    let vf = point.complex_voltage(f);
    let vt = point.complex_voltage(t);
    let s_from = vf * (y_ff * vf + y_ft * vt).conj() * case.base_mva;
    let s_to = vt * (y_tf * vf + y_tt * vt).conj() * case.base_mva;
    Ok((s_from, s_to))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::ieee14;
    use crate::model::{Branch, Bus, Generator};

    fn bus(id: u32, kind: BusKind, p: f64, q: f64) -> Bus {
        Bus {
            id,
            kind,
            p_load: p,
            q_load: q,
            v_mag: 1.0,
            v_ang: 0.0,
            shunt_g: 0.0,
            shunt_b: 0.0,
        }
    }

    fn line(from: u32, to: u32, r: f64, x: f64) -> Branch {
        Branch {
            from_bus: from,
            to_bus: to,
            r,
            x,
            b_charging: 0.0,
            tap_ratio: 1.0,
            phase_shift: 0.0,
            in_service: true,
        }
    }

    fn gen(bus: u32, p: f64, q_min: f64, q_max: f64, vset: f64) -> Generator {
        Generator {
            bus,
            p_gen: p,
            q_gen: 0.0,
            q_min,
            q_max,
            v_setpoint: vset,
        }
    }

    fn two_bus_zero_load() -> NetworkCase {
        NetworkCase::new(
            100.0,
            vec![
                bus(1, BusKind::Slack, 0.0, 0.0),
                bus(2, BusKind::Pq, 0.0, 0.0),
            ],
            vec![line(1, 2, 0.0, 0.1)],
            vec![gen(1, 0.0, -100.0, 100.0, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn zero_network_zero_mismatch() {
        let case = two_bus_zero_load();
        let y = build_admittance(&case, None).unwrap();
        let point = OperatingPoint::flat_start(&case);
        let m = compute_mismatch(&case, &y, &point).unwrap();
        assert!(m.amax() < 1e-15);
    }

    #[test]
    fn zero_network_solves_immediately() {
        let case = two_bus_zero_load();
        let sol = solve_power_flow(&case, &PfOptions::default(), None).unwrap();
        assert!(sol.iterations <= 1);
        assert!((sol.point.v_mag[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_bus_lossless_jacobian_pattern() {
        // Lossless branch x = 0.1: off-diagonal B12 = 10. At flat voltages
        // dP2/dtheta2 = V2*V1*B21*cos(theta21) with the series susceptance
        // entering the diagonal through -Q - B22*V^2.
        let case = two_bus_zero_load();
        let y = build_admittance(&case, None).unwrap();
        let point = OperatingPoint::flat_start(&case);
        let jac = build_jacobian(&case, &y, &point).unwrap();
        // Single state bus (bus 2): f_theta is 1x1.
        let b12 = y.b(0, 1);
        let expected = point.v_mag[0] * point.v_mag[1] * b12 * 0.0f64.cos();
        assert!((jac.f_theta[(0, 0)] - expected).abs() < 1e-12);
    }

    #[test]
    fn shunt_only_gv_diagonal() {
        // A purely resistive branch keeps the off-diagonal susceptance at
        // zero, so with a bus shunt b the diagonal dQ/dV at flat voltage is
        // exactly -2*B_ii.
        let mut b2 = bus(2, BusKind::Pq, 0.0, 0.0);
        b2.shunt_b = 0.25;
        let case = NetworkCase::new(
            100.0,
            vec![bus(1, BusKind::Slack, 0.0, 0.0), b2],
            vec![line(1, 2, 0.5, 0.0)],
            vec![gen(1, 0.0, -100.0, 100.0, 1.0)],
        )
        .unwrap();
        let y = build_admittance(&case, None).unwrap();
        let point = OperatingPoint::flat_start(&case);
        let jac = build_jacobian(&case, &y, &point).unwrap();
        assert!((jac.g_v[(0, 0)] - (-2.0 * y.b(1, 1))).abs() < 1e-12);
    }

    #[test]
    fn case14_converges_from_flat() {
        let case = ieee14();
        let y = build_admittance(&case, None).unwrap();
        let sol = solve_power_flow(&case, &PfOptions::default(), None).unwrap();
        assert!(sol.iterations <= 6, "took {} iterations", sol.iterations);
        let m = compute_mismatch(&case, &y, &sol.point).unwrap();
        assert!(m.amax() < 1e-8);
        // Spot values from the published solved case.
        let b14 = case.bus_index(14).unwrap();
        assert!((sol.point.v_mag[b14] - 1.0355).abs() < 1e-3);
    }

    #[test]
    fn q_limit_idempotence() {
        let case = ieee14().scale_load(1.2).unwrap();
        let opts = PfOptions {
            enforce_q_limits: true,
            ..Default::default()
        };
        let first = solve_power_flow(&case, &opts, None).unwrap();
        let again = solve_power_flow(&case, &opts, Some(&first.point)).unwrap();
        assert_eq!(first.point.bus_kinds, again.point.bus_kinds);
        for i in 0..case.n_buses() {
            assert!((first.point.v_mag[i] - again.point.v_mag[i]).abs() <= 1e-10);
            assert!((first.point.v_ang[i] - again.point.v_ang[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn q_limits_respected_when_enforced() {
        // Tight limit at the PV bus forces a PV->PQ switch.
        let case = NetworkCase::new(
            100.0,
            vec![
                bus(1, BusKind::Slack, 0.0, 0.0),
                bus(2, BusKind::Pv, 80.0, 60.0),
            ],
            vec![line(1, 2, 0.01, 0.1)],
            vec![
                gen(1, 0.0, -500.0, 500.0, 1.0),
                gen(2, 0.0, -5.0, 5.0, 1.05),
            ],
        )
        .unwrap();
        let opts = PfOptions {
            enforce_q_limits: true,
            ..Default::default()
        };
        let sol = solve_power_flow(&case, &opts, None).unwrap();
        assert_eq!(sol.point.bus_kinds[1], BusKind::Pq);
        assert_eq!(sol.point.q_gen[1], 5.0);
        assert!(sol.point.v_mag[1] < 1.05);

        // Without enforcement the setpoint is held and the limit is blown.
        let free = solve_power_flow(&case, &PfOptions::default(), None).unwrap();
        assert!(free.point.q_gen[1] > 5.0);
        assert!((free.point.v_mag[1] - 1.05).abs() < 1e-12);
    }

    #[test]
    fn branch_flow_zero_without_potential_difference() {
        let case = two_bus_zero_load();
        let point = OperatingPoint::flat_start(&case);
        let (s_from, s_to) = branch_flow(&case, &point, 0).unwrap();
        assert!(s_from.norm() < 1e-12);
        assert!(s_to.norm() < 1e-12);
    }

    #[test]
    fn branch_flow_rejects_bad_indices() {
        let case = two_bus_zero_load();
        let point = OperatingPoint::flat_start(&case);
        assert!(matches!(
            branch_flow(&case, &point, 5),
            Err(Error::BranchIndexOutOfRange { .. })
        ));
        let out = case.with_branch_out(0).unwrap();
        assert!(matches!(
            branch_flow(&out, &point, 0),
            Err(Error::BranchOutOfService(0))
        ));
    }

    #[test]
    fn branch_flow_loss_balance() {
        let case = ieee14();
        let sol = solve_power_flow(&case, &PfOptions::default(), None).unwrap();
        for k in 0..case.branches.len() {
            let (s_from, s_to) = branch_flow(&case, &sol.point, k).unwrap();
            let loss = s_from + s_to;
            assert!(
                loss.re >= -1e-9,
                "branch {k} negative active loss {}",
                loss.re
            );
        }
    }

    #[test]
    fn outage_1_2_diverges_at_normal_load() {
        let case = ieee14();
        let k = case.branch_by_label("1-2").unwrap();
        let out = case.with_branch_out(k).unwrap();
        let opts = PfOptions {
            enforce_q_limits: true,
            ..Default::default()
        };
        match solve_power_flow(&out, &opts, None) {
            Err(Error::Diverged(report)) => {
                assert!(!report.mismatch_trace.is_empty() || report.iterations > 0);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn islanded_input_is_rejected() {
        let case = ieee14();
        let k = case.branch_by_label("7-8").unwrap();
        let out = case.with_branch_out(k).unwrap();
        assert!(matches!(
            solve_power_flow(&out, &PfOptions::default(), None),
            Err(Error::Islanded { .. })
        ));
    }

    #[test]
    fn mismatch_matches_jacobian_prediction() {
        // Perturbing one angle by eps changes the mismatch by -J*dx + O(eps^2).
        let case = ieee14();
        let y = build_admittance(&case, None).unwrap();
        let sol = solve_power_flow(&case, &PfOptions::default(), None).unwrap();
        let jac = build_jacobian(&case, &y, &sol.point).unwrap();

        let eps = 1e-6;
        let mut perturbed = sol.point.clone();
        let target = jac.ang_buses[3];
        perturbed.v_ang[target] += eps;

        let m0 = compute_mismatch(&case, &y, &sol.point).unwrap();
        let m1 = compute_mismatch(&case, &y, &perturbed).unwrap();

        let full = jac.assemble();
        let mut dx = DVector::zeros(full.ncols());
        dx[3] = eps;
        let predicted = &m0 - &full * &dx;
        let err = (&m1 - &predicted).amax();
        assert!(err < 100.0 * eps * eps, "Taylor residual {err}");
    }
}
