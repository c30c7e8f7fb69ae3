//! Sensitivity-based Thevenin index.
//!
//! Two routes to the same quantity:
//! - the *limit form*: state sensitivities to a load-scaling parameter,
//!   obtained from one linear solve against the power-flow Jacobian, fed
//!   into the closed-form index;
//! - the *finite form*: the ratio built from two discrete measurement
//!   snapshots, which converges to the limit form as the load increment
//!   shrinks. It doubles as the validation path for the limit form.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{BusKind, NetworkCase};
use crate::pf::{build_jacobian_partitioned, OperatingPoint};
use crate::ybus::build_admittance;

/// One voltage/current snapshot at a load bus, per unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasorMeasurement {
    /// Bus voltage phasor.
    pub v: Complex64,
    /// Injected load current phasor.
    pub i: Complex64,
    /// Complex load power; satisfies `s_load = v * conj(i)`.
    pub s_load: Complex64,
}

impl PhasorMeasurement {
    /// Build a measurement from the bus voltage and the load it serves.
    pub fn from_load(v: Complex64, s_load: Complex64) -> Self {
        let i = (s_load / v).conj();
        Self { v, i, s_load }
    }
}

/// Two-point Thevenin identification result, per unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheveninEstimate {
    pub e_th: Complex64,
    pub z_th: Complex64,
    /// Load impedance at the first snapshot.
    pub z_load: Complex64,
}

/// Identify the Thevenin equivalent from two measurement snapshots:
/// `z_th = -(v2 - v1) / (i2 - i1)`, source voltage from the first snapshot.
pub fn estimate_thevenin_two_point(
    m1: &PhasorMeasurement,
    m2: &PhasorMeasurement,
) -> Result<TheveninEstimate> {
    let di = m2.i - m1.i;
    if di.norm() == 0.0 {
        return Err(Error::DegeneratePair);
    }
    let z_th = -(m2.v - m1.v) / di;
    let e_th = m1.v + z_th * m1.i;
    let z_load = m1.v / m1.i;
    Ok(TheveninEstimate { e_th, z_th, z_load })
}

/// Local Thevenin index: |z_th / z_load|. Unity marks the maximum power
/// transfer boundary.
pub fn lti_ratio(est: &TheveninEstimate) -> Result<f64> {
    if est.z_load.norm() == 0.0 {
        return Err(Error::ZeroLoadImpedance);
    }
    Ok((est.z_th / est.z_load).norm())
}

/// Finite-increment form of the local Thevenin index:
///
/// ```text
/// LTI(dl) = sqrt( (dv/(dl*V))^2 + (dth/dl)^2 )
///         / sqrt( (1 - dv/(dl*V))^2 + (dth/dl)^2 )
/// ```
///
/// expressed here through `dv_over_v = dV/V` and `dtheta` taken between the
/// two snapshots. All terms are kept; no further small-angle simplification
/// is applied.
pub fn lti_finite(dv_over_v: f64, dtheta: f64, dlambda: f64) -> Result<f64> {
    if dlambda == 0.0 {
        return Err(Error::ZeroDeltaLambda);
    }
    let a = dv_over_v / dlambda;
    let b = dtheta / dlambda;
    Ok((a * a + b * b).sqrt() / ((1.0 - a) * (1.0 - a) + b * b).sqrt())
}

/// Direction of the stress applied per unit of the scaling parameter: the
/// derivative of the scheduled bus injections with respect to lambda.
#[derive(Debug, Clone, PartialEq)]
pub struct StressDirection {
    pub f_lambda_p: DVector<f64>,
    pub g_lambda_q: DVector<f64>,
}

impl StressDirection {
    /// Uniform system load growth: every load scales by `(1 + lambda)` at
    /// constant power factor and every generator's active dispatch scales
    /// with it, the slack absorbing the residual. This is the continuation
    /// parametrization under which the index is defined, so the injection
    /// derivative at each bus is `(p_gen - p_load)` / `-q_load`, per unit.
    pub fn uniform(case: &NetworkCase) -> Self {
        let n = case.n_buses();
        let mut f = DVector::zeros(n);
        let mut g = DVector::zeros(n);
        for (i, b) in case.buses.iter().enumerate() {
            f[i] = (case.p_gen_at(i) - b.p_load) / case.base_mva;
            g[i] = -b.q_load / case.base_mva;
        }
        Self {
            f_lambda_p: f,
            g_lambda_q: g,
        }
    }

    /// Stress that scales only the load at `bus` by `(1 + lambda)`. Used by
    /// the two-point identification path; the screening index itself uses
    /// [`StressDirection::uniform`].
    pub fn scale_load(case: &NetworkCase, bus: u32) -> Result<Self> {
        let idx = case.bus_index(bus)?;
        let n = case.n_buses();
        let mut f = DVector::zeros(n);
        let mut g = DVector::zeros(n);
        f[idx] = -case.buses[idx].p_load / case.base_mva;
        g[idx] = -case.buses[idx].q_load / case.base_mva;
        Ok(Self {
            f_lambda_p: f,
            g_lambda_q: g,
        })
    }
}

/// State derivatives with respect to the stress parameter, full bus length.
/// Buses whose magnitude is held (slack, untransitioned PV) carry zero in
/// `dv_dlambda`; the slack angle derivative is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityResult {
    pub dtheta_dlambda: DVector<f64>,
    pub dv_dlambda: DVector<f64>,
    /// Buses treated as PV-to-PQ in this solve, ascending external id.
    pub transitions: Vec<u32>,
}

/// Threshold on the solution max-norm beyond which the predictor solve is
/// declared singular (operating point at or past collapse).
const SINGULAR_SOLUTION_NORM: f64 = 1e8;

/// Solve the predictor system for the state sensitivities at an operating
/// point, with `dlambda = 1`.
///
/// The Jacobian partition starts from the case's nominal bus kinds; every
/// bus in `transitions` (a nominal-PV bus whose machine is at a reactive
/// limit) contributes its reactive-power row and magnitude column, exactly
/// the bordered augmentation used when generators hit their limits.
pub fn solve_sensitivities(
    case: &NetworkCase,
    point: &OperatingPoint,
    direction: &StressDirection,
    transitions: &[u32],
) -> Result<SensitivityResult> {
    let n = case.n_buses();
    if point.v_mag.len() != n || direction.f_lambda_p.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: point.v_mag.len(),
        });
    }

    let mut kinds: Vec<BusKind> = case.buses.iter().map(|b| b.kind).collect();
    let mut sorted_transitions: Vec<u32> = transitions.to_vec();
    sorted_transitions.sort_unstable();
    sorted_transitions.dedup();
    for &bus in &sorted_transitions {
        let idx = case.bus_index(bus)?;
        if kinds[idx] != BusKind::Pv {
            return Err(Error::InvalidCase(format!(
                "transition bus {bus} is not a PV bus in the case"
            )));
        }
        kinds[idx] = BusKind::Pq;
    }

    let y = build_admittance(case, None)?;
    let jac = build_jacobian_partitioned(&y, &point.v_mag, &point.v_ang, &kinds);

    let na = jac.ang_buses.len();
    let np = jac.pq_buses.len();
    let mut rhs = DVector::zeros(na + np);
    for (r, &i) in jac.ang_buses.iter().enumerate() {
        rhs[r] = direction.f_lambda_p[i];
    }
    for (r, &i) in jac.pq_buses.iter().enumerate() {
        rhs[na + r] = direction.g_lambda_q[i];
    }

    let full = jac.assemble();
    let solution = full.lu().solve(&rhs).ok_or(Error::Singular {
        condition: f64::INFINITY,
    })?;

    let sol_norm = if solution.is_empty() {
        0.0
    } else {
        solution.amax()
    };
    if sol_norm > SINGULAR_SOLUTION_NORM {
        let rhs_norm = if rhs.is_empty() { 0.0 } else { rhs.amax() };
        return Err(Error::Singular {
            condition: sol_norm / rhs_norm.max(f64::MIN_POSITIVE),
        });
    }

    let mut dtheta = DVector::zeros(n);
    let mut dv = DVector::zeros(n);
    for (r, &i) in jac.ang_buses.iter().enumerate() {
        dtheta[i] = solution[r];
    }
    for (r, &i) in jac.pq_buses.iter().enumerate() {
        dv[i] = solution[na + r];
    }

    Ok(SensitivityResult {
        dtheta_dlambda: dtheta,
        dv_dlambda: dv,
        transitions: sorted_transitions,
    })
}

/// Sensitivity-based Thevenin index at a bus: the limit of the finite LTI
/// as the load increment vanishes.
///
/// ```text
/// STI = sqrt( ((dV/dl)/V)^2 + (dth/dl)^2 )
///     / sqrt( (1 - (dV/dl)/V)^2 + (dth/dl)^2 )
/// ```
///
/// Unity marks the instability boundary. `bus` is the dense bus index and
/// `v_mag` the voltage magnitude there.
pub fn sti(sens: &SensitivityResult, bus: usize, v_mag: f64) -> f64 {
    let a = sens.dv_dlambda[bus] / v_mag;
    let b = sens.dtheta_dlambda[bus];
    (a * a + b * b).sqrt() / ((1.0 - a) * (1.0 - a) + b * b).sqrt()
}
