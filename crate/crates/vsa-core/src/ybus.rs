//! Bus admittance matrix construction and topology queries.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{Branch, NetworkCase};

/// Dense n-by-n complex bus admittance matrix, per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub matrix: DMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Conductance part of entry (i, j).
    pub fn g(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)].re
    }

    /// Susceptance part of entry (i, j).
    pub fn b(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)].im
    }
}

/// Two-port admittance elements of a branch under the standard pi model
/// with an off-nominal tap `tau` and phase shift at the from end:
/// returns (y_ff, y_ft, y_tf, y_tt).
pub fn branch_elements(branch: &Branch) -> (Complex64, Complex64, Complex64, Complex64) {
    let ys = Complex64::new(1.0, 0.0) / Complex64::new(branch.r, branch.x);
    let bc = Complex64::new(0.0, branch.b_charging / 2.0);
    let tau = branch.tap_ratio;
    let shift = Complex64::from_polar(1.0, branch.phase_shift);

    let y_ff = (ys + bc) / (tau * tau);
    let y_ft = -ys / (tau * shift.conj());
    let y_tf = -ys / (tau * shift);
    let y_tt = ys + bc;
    (y_ff, y_ft, y_tf, y_tt)
}

/// Build the bus admittance matrix, optionally with one branch removed
/// entirely (series element and charging).
pub fn build_admittance(case: &NetworkCase, outage: Option<usize>) -> Result<AdmittanceMatrix> {
    if let Some(k) = outage {
        if k >= case.branches.len() {
            return Err(Error::BranchIndexOutOfRange {
                index: k,
                count: case.branches.len(),
            });
        }
    }

    let n = case.n_buses();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));

    for (k, branch) in case.branches.iter().enumerate() {
        if !branch.in_service || outage == Some(k) {
            continue;
        }
        let f = case.bus_index(branch.from_bus)?;
        let t = case.bus_index(branch.to_bus)?;
        let (y_ff, y_ft, y_tf, y_tt) = branch_elements(branch);
        y[(f, f)] += y_ff;
        y[(f, t)] += y_ft;
        y[(t, f)] += y_tf;
        y[(t, t)] += y_tt;
    }

    for (i, bus) in case.buses.iter().enumerate() {
        y[(i, i)] += Complex64::new(bus.shunt_g, bus.shunt_b);
    }

    Ok(AdmittanceMatrix { matrix: y })
}

/// Result of a connectivity check.
#[derive(Debug, Clone, PartialEq)]
pub enum Connectivity {
    Connected,
    /// All connected components, each listed by external bus ids.
    Islanded {
        islands: Vec<Vec<u32>>,
    },
}

impl Connectivity {
    pub fn is_connected(&self) -> bool {
        matches!(self, Connectivity::Connected)
    }

    /// The components cut off from the slack bus.
    pub fn disconnected_from_slack(&self, case: &NetworkCase) -> Vec<Vec<u32>> {
        let slack_id = case.bus_id(case.slack_index());
        match self {
            Connectivity::Connected => Vec::new(),
            Connectivity::Islanded { islands } => islands
                .iter()
                .filter(|set| !set.contains(&slack_id))
                .cloned()
                .collect(),
        }
    }
}

/// Graph connectivity over in-service branches, excluding `outage` if given.
/// On a split, every component is reported as an island, bus ids ascending.
pub fn check_connectivity(case: &NetworkCase, outage: Option<usize>) -> Result<Connectivity> {
    if let Some(k) = outage {
        if k >= case.branches.len() {
            return Err(Error::BranchIndexOutOfRange {
                index: k,
                count: case.branches.len(),
            });
        }
    }

    let n = case.n_buses();
    let mut adjacency = vec![Vec::new(); n];
    for (k, branch) in case.branches.iter().enumerate() {
        if !branch.in_service || outage == Some(k) {
            continue;
        }
        let f = case.bus_index(branch.from_bus)?;
        let t = case.bus_index(branch.to_bus)?;
        adjacency[f].push(t);
        adjacency[t].push(f);
    }

    let mut component = vec![usize::MAX; n];
    let mut count = 0;
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        component[start] = count;
        while let Some(i) = stack.pop() {
            for &j in &adjacency[i] {
                if component[j] == usize::MAX {
                    component[j] = count;
                    stack.push(j);
                }
            }
        }
        count += 1;
    }

    if count == 1 {
        return Ok(Connectivity::Connected);
    }

    let mut islands: Vec<Vec<u32>> = vec![Vec::new(); count];
    for (i, &c) in component.iter().enumerate() {
        islands[c].push(case.bus_id(i));
    }
    for set in &mut islands {
        set.sort_unstable();
    }
    islands.sort();

    Ok(Connectivity::Islanded { islands })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::ieee14;
    use crate::model::{Bus, BusKind, Generator};

    fn two_bus_case(r: f64, x: f64) -> NetworkCase {
        NetworkCase::new(
            100.0,
            vec![
                Bus {
                    id: 1,
                    kind: BusKind::Slack,
                    p_load: 0.0,
                    q_load: 0.0,
                    v_mag: 1.0,
                    v_ang: 0.0,
                    shunt_g: 0.0,
                    shunt_b: 0.0,
                },
                Bus {
                    id: 2,
                    kind: BusKind::Pq,
                    p_load: 0.0,
                    q_load: 0.0,
                    v_mag: 1.0,
                    v_ang: 0.0,
                    shunt_g: 0.0,
                    shunt_b: 0.0,
                },
            ],
            vec![Branch {
                from_bus: 1,
                to_bus: 2,
                r,
                x,
                b_charging: 0.0,
                tap_ratio: 1.0,
                phase_shift: 0.0,
                in_service: true,
            }],
            vec![Generator {
                bus: 1,
                p_gen: 0.0,
                q_gen: 0.0,
                q_min: -100.0,
                q_max: 100.0,
                v_setpoint: 1.0,
            }],
        )
        .unwrap()
    }

    #[test]
    fn single_branch_construction() {
        // r = 0, x = 0.1: series admittance -j10, so Y12 = +j10, Y11 = -j10.
        let case = two_bus_case(0.0, 0.1);
        let y = build_admittance(&case, None).unwrap();
        assert!((y.matrix[(0, 1)] - Complex64::new(0.0, 10.0)).norm() < 1e-12);
        assert!((y.matrix[(0, 0)] - Complex64::new(0.0, -10.0)).norm() < 1e-12);
        assert!((y.matrix[(1, 1)] - Complex64::new(0.0, -10.0)).norm() < 1e-12);
    }

    #[test]
    fn outage_zeroes_the_pair_entry() {
        let case = ieee14();
        // 5-6 is the only branch between buses 5 and 6.
        let k = case.branch_by_label("5-6").unwrap();
        let y = build_admittance(&case, Some(k)).unwrap();
        let i = case.bus_index(5).unwrap();
        let j = case.bus_index(6).unwrap();
        assert_eq!(y.matrix[(i, j)], Complex64::new(0.0, 0.0));
        assert_eq!(y.matrix[(j, i)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn outage_equals_marked_out_of_service() {
        let case = ieee14();
        for k in 0..case.branches.len() {
            let a = build_admittance(&case, Some(k)).unwrap();
            let b = build_admittance(&case.with_branch_out(k).unwrap(), None).unwrap();
            assert_eq!(a, b, "branch {k}");
        }
    }

    #[test]
    fn symmetric_without_taps() {
        let case = two_bus_case(0.02, 0.1);
        let y = build_admittance(&case, None).unwrap();
        assert_eq!(y.matrix[(0, 1)], y.matrix[(1, 0)]);
    }

    #[test]
    fn outage_out_of_range() {
        let case = ieee14();
        assert!(matches!(
            build_admittance(&case, Some(99)),
            Err(Error::BranchIndexOutOfRange { .. })
        ));
    }

    #[test]
    fn islanding_cases() {
        let case = ieee14();
        let k78 = case.branch_by_label("7-8").unwrap();
        let conn = check_connectivity(&case, Some(k78)).unwrap();
        assert_eq!(conn.disconnected_from_slack(&case), vec![vec![8]]);

        let k56 = case.branch_by_label("5-6").unwrap();
        assert!(check_connectivity(&case, Some(k56)).unwrap().is_connected());
    }

    #[test]
    fn chain_split_in_the_middle() {
        let case = NetworkCase::new(
            100.0,
            vec![
                Bus {
                    id: 1,
                    kind: BusKind::Slack,
                    p_load: 0.0,
                    q_load: 0.0,
                    v_mag: 1.0,
                    v_ang: 0.0,
                    shunt_g: 0.0,
                    shunt_b: 0.0,
                },
                Bus {
                    id: 2,
                    kind: BusKind::Pq,
                    p_load: 0.0,
                    q_load: 0.0,
                    v_mag: 1.0,
                    v_ang: 0.0,
                    shunt_g: 0.0,
                    shunt_b: 0.0,
                },
                Bus {
                    id: 3,
                    kind: BusKind::Pq,
                    p_load: 0.0,
                    q_load: 0.0,
                    v_mag: 1.0,
                    v_ang: 0.0,
                    shunt_g: 0.0,
                    shunt_b: 0.0,
                },
            ],
            vec![
                Branch {
                    from_bus: 1,
                    to_bus: 2,
                    r: 0.0,
                    x: 0.1,
                    b_charging: 0.0,
                    tap_ratio: 1.0,
                    phase_shift: 0.0,
                    in_service: true,
                },
                Branch {
                    from_bus: 2,
                    to_bus: 3,
                    r: 0.0,
                    x: 0.1,
                    b_charging: 0.0,
                    tap_ratio: 1.0,
                    phase_shift: 0.0,
                    in_service: true,
                },
            ],
            vec![Generator {
                bus: 1,
                p_gen: 0.0,
                q_gen: 0.0,
                q_min: -10.0,
                q_max: 10.0,
                v_setpoint: 1.0,
            }],
        )
        .unwrap();

        // Removing the middle link splits the path into two islands.
        match check_connectivity(&case, Some(1)).unwrap() {
            Connectivity::Islanded { islands } => {
                assert_eq!(islands, vec![vec![1, 2], vec![3]]);
            }
            other => panic!("expected islands, got {other:?}"),
        }
    }
}
