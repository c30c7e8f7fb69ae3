//! Post-contingency state estimation without a full re-solve.
//!
//! A branch outage is modeled through the equivalent-injection
//! transformation: on the outaged topology, adding the (negated) branch-end
//! flows to the bus schedule reproduces the pre-contingency state exactly.
//! Removing that adjustment again, all at once or in fractions when
//! generators hit reactive limits on the way, yields a linear prediction
//! of the post-contingency state and of the PV-to-PQ transitions.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{BusKind, NetworkCase};
use crate::pf::{
    branch_flow, build_jacobian_partitioned, bus_reactive_generation, split_bus_q, OperatingPoint,
    PinnedLimit,
};
use crate::ybus::{build_admittance, check_connectivity, Connectivity};

/// Equivalent-injection adjustment for one branch outage, per unit.
///
/// `delta_p[i]` / `delta_q[i]` hold the negated from- and to-end flows at
/// the two endpoint buses and zero elsewhere: the injections of the
/// outaged-topology equivalent system relative to the base schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionChange {
    pub delta_p: DVector<f64>,
    pub delta_q: DVector<f64>,
    pub outage: usize,
}

impl InjectionChange {
    /// Active-then-reactive stacked vector, bus order.
    pub fn delta_f(&self) -> DVector<f64> {
        let n = self.delta_p.len();
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&self.delta_p);
        out.rows_mut(n, n).copy_from(&self.delta_q);
        out
    }
}

/// Build the equivalent-injection adjustment for outaging branch `outage`
/// at a solved pre-contingency point.
pub fn injection_change_vector(
    case: &NetworkCase,
    point: &OperatingPoint,
    outage: usize,
) -> Result<InjectionChange> {
    let (s_from, s_to) = branch_flow(case, point, outage)?;
    let branch = &case.branches[outage];
    let f = case.bus_index(branch.from_bus)?;
    let t = case.bus_index(branch.to_bus)?;

    let n = case.n_buses();
    let mut delta_p = DVector::zeros(n);
    let mut delta_q = DVector::zeros(n);
    delta_p[f] += -s_from.re / case.base_mva;
    delta_q[f] += -s_from.im / case.base_mva;
    delta_p[t] += -s_to.re / case.base_mva;
    delta_q[t] += -s_to.im / case.base_mva;

    Ok(InjectionChange {
        delta_p,
        delta_q,
        outage,
    })
}

/// Guard band: fractions this close to one count as one, so rounding noise
/// cannot spin the loop.
const K_GUARD: f64 = 1e-9;

/// Severity fraction of a reactive-limit violation: the share of the
/// predicted step a machine can absorb before leaving its band.
///
/// Returns 1 when the predicted output stays within limits, otherwise the
/// linear fraction at which the violated limit is met. Requires the
/// previous output to respect the limits.
pub fn k_factor(q_prev: f64, q_next: f64, q_min: f64, q_max: f64) -> Result<f64> {
    if q_prev < q_min || q_prev > q_max {
        return Err(Error::QLimitContract {
            q_prev,
            q_min,
            q_max,
        });
    }
    let k = if q_next > q_max {
        (q_max - q_prev) / (q_next - q_prev)
    } else if q_next < q_min {
        (q_prev - q_min) / (q_prev - q_next)
    } else {
        1.0
    };
    Ok(if k >= 1.0 - K_GUARD { 1.0 } else { k })
}

/// One predicted PV-to-PQ switch.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// External bus id.
    pub bus: u32,
    pub limit: PinnedLimit,
    /// K value at the moment of the switch.
    pub k: f64,
}

/// Predicted post-contingency operating state.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedState {
    pub point: OperatingPoint,
    /// Switches in the order they were predicted; unique by bus.
    pub transitions: Vec<Transition>,
    /// Fraction of the remaining adjustment consumed per loop pass, each in
    /// (0, 1]; the final pass always consumes its full remainder.
    pub applied_fraction_history: Vec<f64>,
}

impl EstimatedState {
    /// External ids of the predicted transitions, ascending.
    pub fn transition_buses(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.transitions.iter().map(|t| t.bus).collect();
        ids.sort_unstable();
        ids
    }
}

/// Reactive generation per generator (MVAr) implied by a point: the
/// network-equation injection at each generator bus plus its load, split
/// across co-located machines.
pub fn predicted_generator_q(case: &NetworkCase, point: &OperatingPoint) -> Result<Vec<f64>> {
    let y = build_admittance(case, None)?;
    let q_bus = bus_reactive_generation(case, &y, point);
    let mut q_gen = point.q_gen.clone();
    for i in 0..case.n_buses() {
        if case.generators_at(i).next().is_some() {
            split_bus_q(case, i, q_bus[i], &mut q_gen);
        }
    }
    Ok(q_gen)
}

/// Estimate the operating state after outaging branch `outage`, starting
/// from a solved pre-contingency point.
///
/// Each pass linearizes on the outaged topology at the current state and
/// partition, predicts the step for the remaining adjustment, and checks
/// every PV machine's predicted reactive output. If one would exceed a
/// limit, only the smallest admissible fraction is applied, that bus is
/// pinned to its violated limit as PQ, and the loop repeats on the
/// remainder.
pub fn estimate_post_contingency(
    case: &NetworkCase,
    point: &OperatingPoint,
    outage: usize,
) -> Result<EstimatedState> {
    match check_connectivity(case, Some(outage))? {
        Connectivity::Connected => {}
        Connectivity::Islanded { islands } => return Err(Error::Islanded { islands }),
    }

    let change = injection_change_vector(case, point, outage)?;
    let y_out = build_admittance(case, Some(outage))?;
    let n = case.n_buses();
    let slack = case.slack_index();

    let mut state = point.clone();
    let mut remaining = 1.0f64;
    let mut history = Vec::new();
    let mut transitions: Vec<Transition> = Vec::new();

    // The adjustment that is still scheduled acts as extra nodal demand, so
    // a generator's physical output at an intermediate state is the
    // network-equation value minus the unapplied share at its bus.
    let gen_q_at = |p: &OperatingPoint, rho: f64| -> DVector<f64> {
        let mut q = bus_reactive_generation(case, &y_out, p);
        for i in 0..n {
            q[i] -= rho * change.delta_q[i] * case.base_mva;
        }
        q
    };

    let initial_pv = state
        .bus_kinds
        .iter()
        .filter(|k| **k == BusKind::Pv)
        .count();

    for pass in 1..=initial_pv + 1 {
        let jac = build_jacobian_partitioned(&y_out, &state.v_mag, &state.v_ang, &state.bus_kinds);
        let na = jac.ang_buses.len();
        let np = jac.pq_buses.len();

        // Driving the state from the equivalent system toward the true
        // post-contingency schedule removes the remaining adjustment.
        let mut rhs = DVector::zeros(na + np);
        for (r, &i) in jac.ang_buses.iter().enumerate() {
            rhs[r] = -change.delta_p[i] * remaining;
        }
        for (r, &i) in jac.pq_buses.iter().enumerate() {
            rhs[na + r] = -change.delta_q[i] * remaining;
        }

        let step = jac
            .assemble()
            .lu()
            .solve(&rhs)
            .ok_or(Error::EstimationFailed {
                pass,
                reason: "singular Jacobian".to_string(),
            })?;

        let mut next = state.clone();
        for (r, &i) in jac.ang_buses.iter().enumerate() {
            next.v_ang[i] += step[r];
        }
        for (r, &i) in jac.pq_buses.iter().enumerate() {
            next.v_mag[i] += step[na + r];
        }

        let pv_buses: Vec<usize> = (0..n)
            .filter(|&i| i != slack && state.bus_kinds[i] == BusKind::Pv)
            .collect();

        if pv_buses.is_empty() {
            history.push(1.0);
            let q_bus = gen_q_at(&next, 0.0);
            finalize(case, &q_bus, &mut next, &transitions);
            return Ok(EstimatedState {
                point: next,
                transitions,
                applied_fraction_history: history,
            });
        }

        let q_prev = gen_q_at(&state, remaining);
        let q_next = gen_q_at(&next, 0.0);

        let mut k_min = 1.0f64;
        let mut pin: Option<(usize, PinnedLimit)> = None;
        for &i in &pv_buses {
            let (q_min, q_max) = case.q_limits_at(i);
            // Nonlinear recomputation can overshoot a limit by rounding at
            // the exact switch point; clamp before applying the contract.
            let prev = q_prev[i].clamp(q_min, q_max);
            let k = k_factor(prev, q_next[i], q_min, q_max)?;
            if k >= 1.0 {
                continue;
            }
            // Ties go to the lower external bus id.
            let wins = k < k_min
                || (k == k_min && pin.is_none_or(|(j, _)| case.bus_id(i) < case.bus_id(j)));
            if wins {
                k_min = k;
                pin = Some((
                    i,
                    if q_next[i] > q_max {
                        PinnedLimit::QMax
                    } else {
                        PinnedLimit::QMin
                    },
                ));
            }
        }

        match pin {
            None => {
                history.push(1.0);
                finalize(case, &q_next, &mut next, &transitions);
                return Ok(EstimatedState {
                    point: next,
                    transitions,
                    applied_fraction_history: history,
                });
            }
            Some((bus_idx, limit)) => {
                if k_min > 0.0 {
                    for (r, &i) in jac.ang_buses.iter().enumerate() {
                        state.v_ang[i] += k_min * step[r];
                    }
                    for (r, &i) in jac.pq_buses.iter().enumerate() {
                        state.v_mag[i] += k_min * step[na + r];
                    }
                    history.push(k_min);
                    remaining *= 1.0 - k_min;
                }
                state.bus_kinds[bus_idx] = BusKind::Pq;
                for (gi, g) in case.generators_at(bus_idx) {
                    state.q_gen[gi] = match limit {
                        PinnedLimit::QMax => g.q_max,
                        PinnedLimit::QMin => g.q_min,
                    };
                }
                transitions.push(Transition {
                    bus: case.bus_id(bus_idx),
                    limit,
                    k: k_min,
                });
            }
        }
    }

    Err(Error::EstimationFailed {
        pass: initial_pv + 1,
        reason: "switching loop failed to settle".to_string(),
    })
}

/// Final generator outputs: pinned machines stay at their limit, the rest
/// take the recomputed bus value.
fn finalize(
    case: &NetworkCase,
    q_bus: &DVector<f64>,
    point: &mut OperatingPoint,
    transitions: &[Transition],
) {
    for i in 0..case.n_buses() {
        if case.generators_at(i).next().is_none() {
            continue;
        }
        let pinned = transitions.iter().any(|t| t.bus == case.bus_id(i))
            || (point.bus_kinds[i] == BusKind::Pq && case.buses[i].kind == BusKind::Pv);
        if !pinned {
            split_bus_q(case, i, q_bus[i], &mut point.q_gen);
        }
    }
}
