//! Immutable network model: buses, branches, generators.
//!
//! External bus numbers from the case file are preserved; internally every
//! bus also has a dense index (file order) used for vectors and matrices.
//! All power quantities in the model are stored in physical units (MW, MVAr);
//! per-unit conversion happens where the network equations are evaluated.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Role of a bus in the power flow formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    /// Angle reference; absorbs the system power imbalance.
    Slack,
    /// Generator bus holding its voltage magnitude at a setpoint.
    Pv,
    /// Load bus with fixed active and reactive injection.
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// External bus number from the case file.
    pub id: u32,
    pub kind: BusKind,
    /// Active load, MW.
    pub p_load: f64,
    /// Reactive load, MVAr.
    pub q_load: f64,
    /// Voltage magnitude, per unit (as stored in the case file).
    pub v_mag: f64,
    /// Voltage angle, radians.
    pub v_ang: f64,
    /// Shunt conductance, per unit.
    pub shunt_g: f64,
    /// Shunt susceptance, per unit.
    pub shunt_b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from_bus: u32,
    pub to_bus: u32,
    /// Series resistance, per unit.
    pub r: f64,
    /// Series reactance, per unit.
    pub x: f64,
    /// Total line charging susceptance, per unit.
    pub b_charging: f64,
    /// Off-nominal tap ratio at the from end; 1.0 for a plain line.
    pub tap_ratio: f64,
    /// Phase shift, radians.
    pub phase_shift: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    /// External id of the bus this generator is attached to.
    pub bus: u32,
    /// Active output, MW.
    pub p_gen: f64,
    /// Reactive output, MVAr.
    pub q_gen: f64,
    /// Reactive limits, MVAr.
    pub q_min: f64,
    pub q_max: f64,
    /// Voltage setpoint, per unit.
    pub v_setpoint: f64,
}

/// Parsed grid model. Immutable after construction; operations that "modify"
/// the case (`scale_load`, `with_branch_out`) return a new one.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    index: HashMap<u32, usize>,
}

impl NetworkCase {
    /// Validates the case invariants and builds the id -> dense index map.
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self> {
        if base_mva <= 0.0 {
            return Err(Error::InvalidCase(format!(
                "baseMVA must be positive, got {base_mva}"
            )));
        }

        let mut index = HashMap::with_capacity(buses.len());
        for (i, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, i).is_some() {
                return Err(Error::DuplicateBusId(bus.id));
            }
            if bus.v_mag <= 0.0 {
                return Err(Error::InvalidCase(format!(
                    "bus {} has non-positive voltage magnitude",
                    bus.id
                )));
            }
        }

        let slack_count = buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        match slack_count {
            0 => return Err(Error::NoSlackBus),
            1 => {}
            _ => return Err(Error::MultipleSlackBuses),
        }

        for branch in &branches {
            for end in [branch.from_bus, branch.to_bus] {
                if !index.contains_key(&end) {
                    return Err(Error::DanglingBusRef {
                        table: "branch",
                        bus: end,
                    });
                }
            }
            if branch.r == 0.0 && branch.x == 0.0 {
                return Err(Error::InvalidCase(format!(
                    "branch {}-{} has zero impedance",
                    branch.from_bus, branch.to_bus
                )));
            }
            if branch.tap_ratio <= 0.0 {
                return Err(Error::InvalidCase(format!(
                    "branch {}-{} has non-positive tap ratio",
                    branch.from_bus, branch.to_bus
                )));
            }
        }

        for gen in &generators {
            if !index.contains_key(&gen.bus) {
                return Err(Error::DanglingBusRef {
                    table: "gen",
                    bus: gen.bus,
                });
            }
            if gen.q_min > gen.q_max {
                return Err(Error::InvalidCase(format!(
                    "generator at bus {} has q_min > q_max",
                    gen.bus
                )));
            }
        }

        // Generator-backed buses: PV (and slack) buses must have a machine to
        // hold their voltage, and co-located machines must agree on it.
        for bus in &buses {
            let at_bus: Vec<&Generator> = generators.iter().filter(|g| g.bus == bus.id).collect();
            if bus.kind != BusKind::Pq && at_bus.is_empty() {
                return Err(Error::InvalidCase(format!(
                    "bus {} is {:?} but has no generator",
                    bus.id, bus.kind
                )));
            }
            if at_bus.len() > 1 {
                let v0 = at_bus[0].v_setpoint;
                if at_bus.iter().any(|g| (g.v_setpoint - v0).abs() > 1e-6) {
                    return Err(Error::InvalidCase(format!(
                        "generators at bus {} disagree on voltage setpoint",
                        bus.id
                    )));
                }
            }
        }

        Ok(Self {
            base_mva,
            buses,
            branches,
            generators,
            index,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Dense index of an external bus id.
    pub fn bus_index(&self, id: u32) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownBus(id))
    }

    /// External id of a dense bus index.
    pub fn bus_id(&self, idx: usize) -> u32 {
        self.buses[idx].id
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated: exactly one slack bus")
    }

    /// Generators attached to the bus at dense index `idx`.
    pub fn generators_at(&self, idx: usize) -> impl Iterator<Item = (usize, &Generator)> {
        let id = self.buses[idx].id;
        self.generators
            .iter()
            .enumerate()
            .filter(move |(_, g)| g.bus == id)
    }

    /// Aggregated reactive limits (MVAr) of all generators at a bus.
    pub fn q_limits_at(&self, idx: usize) -> (f64, f64) {
        self.generators_at(idx)
            .fold((0.0, 0.0), |(lo, hi), (_, g)| (lo + g.q_min, hi + g.q_max))
    }

    /// Voltage setpoint of the generator(s) at a bus, if any.
    pub fn v_setpoint_at(&self, idx: usize) -> Option<f64> {
        self.generators_at(idx).next().map(|(_, g)| g.v_setpoint)
    }

    /// Total scheduled active generation at a bus, MW.
    pub fn p_gen_at(&self, idx: usize) -> f64 {
        self.generators_at(idx).map(|(_, g)| g.p_gen).sum()
    }

    /// Report label for a branch: "i-j" in external bus numbers, with an
    /// ordinal suffix for parallel circuits ("i-j#2", ...).
    pub fn branch_label(&self, k: usize) -> String {
        let b = &self.branches[k];
        let mut ordinal = 1;
        for other in &self.branches[..k] {
            let same = (other.from_bus == b.from_bus && other.to_bus == b.to_bus)
                || (other.from_bus == b.to_bus && other.to_bus == b.from_bus);
            if same {
                ordinal += 1;
            }
        }
        if ordinal == 1 {
            format!("{}-{}", b.from_bus, b.to_bus)
        } else {
            format!("{}-{}#{}", b.from_bus, b.to_bus, ordinal)
        }
    }

    /// Resolve a branch label ("i-j" or "i-j#n") to a branch index.
    /// "i-j" and "j-i" are equivalent.
    pub fn branch_by_label(&self, label: &str) -> Result<usize> {
        for k in 0..self.branches.len() {
            let own = self.branch_label(k);
            if own == label {
                return Ok(k);
            }
            // Accept the reversed endpoint order too.
            let b = &self.branches[k];
            let rev = if own.contains('#') {
                let ord = own.split('#').nth(1).unwrap();
                format!("{}-{}#{}", b.to_bus, b.from_bus, ord)
            } else {
                format!("{}-{}", b.to_bus, b.from_bus)
            };
            if rev == label {
                return Ok(k);
            }
        }
        Err(Error::UnknownBranchLabel(label.to_string()))
    }

    /// New case with every bus load multiplied by `factor`.
    pub fn scale_load(&self, factor: f64) -> Result<NetworkCase> {
        if factor <= 0.0 {
            return Err(Error::NonPositiveFactor(factor));
        }
        let mut scaled = self.clone();
        for bus in &mut scaled.buses {
            bus.p_load *= factor;
            bus.q_load *= factor;
        }
        Ok(scaled)
    }

    /// New case with branch `k` marked out of service.
    pub fn with_branch_out(&self, k: usize) -> Result<NetworkCase> {
        if k >= self.branches.len() {
            return Err(Error::BranchIndexOutOfRange {
                index: k,
                count: self.branches.len(),
            });
        }
        let mut out = self.clone();
        out.branches[k].in_service = false;
        Ok(out)
    }

    /// Buses with nonzero load and no generator, in ascending external id.
    /// This is the default monitored set for screening.
    pub fn pure_load_buses(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .buses
            .iter()
            .enumerate()
            .filter(|(i, b)| {
                (b.p_load != 0.0 || b.q_load != 0.0) && self.generators_at(*i).next().is_none()
            })
            .map(|(_, b)| b.id)
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Total system load, (MW, MVAr).
    pub fn total_load(&self) -> (f64, f64) {
        self.buses
            .iter()
            .fold((0.0, 0.0), |(p, q), b| (p + b.p_load, q + b.q_load))
    }
}
