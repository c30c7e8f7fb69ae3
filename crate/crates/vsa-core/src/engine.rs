//! Contingency screening: estimate the post-outage state for every
//! non-excluded branch, compute the Thevenin index at every monitored load
//! bus, raise alarms, and (in benchmark mode) compare against indices from
//! exact post-contingency power-flow solutions.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::estimate_post_contingency;
use crate::model::{BusKind, NetworkCase};
use crate::pf::{solve_power_flow, OperatingPoint, PfOptions};
use crate::sti::{solve_sensitivities, sti, StressDirection};
use crate::ybus::{check_connectivity, Connectivity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningConfig {
    /// Multiplier on every bus load (1.0 normal, 1.2 peak).
    pub load_scale: f64,
    /// Alarm when a predicted index exceeds this value.
    pub alarm_threshold: f64,
    /// Branch labels ("i-j") left out of the screen entirely.
    pub excluded_branches: Vec<String>,
    /// Monitored load buses by external id; `None` selects every bus with
    /// nonzero load and no generator.
    pub monitored_buses: Option<Vec<u32>>,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            load_scale: 1.0,
            alarm_threshold: 0.45,
            excluded_branches: Vec::new(),
            monitored_buses: None,
        }
    }
}

impl ScreeningConfig {
    fn validate(&self) -> Result<()> {
        if self.load_scale <= 0.0 {
            return Err(Error::NonPositiveFactor(self.load_scale));
        }
        if self.alarm_threshold <= 0.0 {
            return Err(Error::InvalidCase(format!(
                "alarm threshold must be positive, got {}",
                self.alarm_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Islanded,
    PfDiverged,
    EstimationFailed,
    Singular,
}

impl RecordStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecordStatus::Ok => "ok",
            RecordStatus::Islanded => "islanded",
            RecordStatus::PfDiverged => "pf_diverged",
            RecordStatus::EstimationFailed => "estimation_failed",
            RecordStatus::Singular => "singular",
        }
    }
}

/// One (contingency, load bus) result. Outage-level failures (islanding,
/// estimation failure) produce a single record with no bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StiRecord {
    /// Branch label "i-j" in external bus numbers.
    pub outage: String,
    pub bus: Option<u32>,
    pub sti_predicted: Option<f64>,
    /// Index recomputed at the exact post-contingency solution, when
    /// benchmarking.
    pub sti_benchmark: Option<f64>,
    pub alarm: bool,
    pub status: RecordStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StiReport {
    pub config: ScreeningConfig,
    /// Ordered by (outage position in the case file, bus id).
    pub records: Vec<StiRecord>,
    /// Average relative error (percent) of the prediction per outage,
    /// present when benchmarking.
    pub sigma_per_outage: BTreeMap<String, f64>,
    /// Buses dropped from the sigma averages because either side of the
    /// comparison was not ok.
    pub sigma_excluded: usize,
}

impl StiReport {
    pub fn any_alarm(&self) -> bool {
        self.records.iter().any(|r| r.alarm)
    }
}

/// Build the case at a given operating level: every load and every
/// generator's active dispatch scale with the level (the continuation
/// parametrization the index is defined under), the slack machine absorbing
/// the residual imbalance. Reactive limits and setpoints stay fixed.
pub fn scale_operating_level(case: &NetworkCase, factor: f64) -> Result<NetworkCase> {
    let scaled = case.scale_load(factor)?;
    let mut generators = scaled.generators.clone();
    for g in &mut generators {
        g.p_gen *= factor;
    }
    NetworkCase::new(
        scaled.base_mva,
        scaled.buses.clone(),
        scaled.branches.clone(),
        generators,
    )
}

/// Average relative error in percent: `100 * mean(|pred - bench| / bench)`.
pub fn average_relative_error(predicted: &[f64], benchmark: &[f64]) -> Result<f64> {
    if predicted.len() != benchmark.len() {
        return Err(Error::DimensionMismatch {
            expected: benchmark.len(),
            got: predicted.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    let mut total = 0.0;
    for (p, b) in predicted.iter().zip(benchmark) {
        if *b == 0.0 {
            return Err(Error::InvalidCase(
                "zero benchmark entry in sigma".to_string(),
            ));
        }
        total += (p - b).abs() / b;
    }
    Ok(100.0 * total / predicted.len() as f64)
}

/// Screen every non-excluded branch outage and predict the index at each
/// monitored bus from the estimated post-contingency state.
pub fn screen(case: &NetworkCase, config: &ScreeningConfig) -> Result<StiReport> {
    run(case, config, false)
}

/// Screen and additionally benchmark each prediction against the index at
/// the exact post-contingency power-flow solution.
pub fn benchmark(case: &NetworkCase, config: &ScreeningConfig) -> Result<StiReport> {
    run(case, config, true)
}

fn run(case: &NetworkCase, config: &ScreeningConfig, with_benchmark: bool) -> Result<StiReport> {
    config.validate()?;
    let scaled = scale_operating_level(case, config.load_scale)?;

    let monitored: Vec<u32> = match &config.monitored_buses {
        Some(ids) => {
            let mut ids = ids.clone();
            ids.sort_unstable();
            ids.dedup();
            for &id in &ids {
                scaled.bus_index(id)?;
            }
            ids
        }
        None => scaled.pure_load_buses(),
    };

    let mut excluded = vec![false; scaled.branches.len()];
    for label in &config.excluded_branches {
        excluded[scaled.branch_by_label(label)?] = true;
    }

    let pf_opts = PfOptions {
        enforce_q_limits: true,
        ..Default::default()
    };
    let base = solve_power_flow(&scaled, &pf_opts, None).map_err(|e| match e {
        Error::Diverged(report) => Error::BaseCaseDiverged(report),
        other => other,
    })?;

    // Buses already reactive-limited in the base case stay switched in
    // every downstream sensitivity solve.
    let base_transitions: Vec<u32> = scaled
        .buses
        .iter()
        .enumerate()
        .filter(|(i, b)| b.kind == BusKind::Pv && base.point.bus_kinds[*i] == BusKind::Pq)
        .map(|(_, b)| b.id)
        .collect();

    let outages: Vec<usize> = (0..scaled.branches.len())
        .filter(|&k| scaled.branches[k].in_service && !excluded[k])
        .collect();

    let mut per_outage: Vec<(usize, OutageOutcome)> = outages
        .par_iter()
        .map(|&k| {
            let outcome = screen_one_outage(
                &scaled,
                &base.point,
                &base_transitions,
                &monitored,
                k,
                config.alarm_threshold,
                with_benchmark,
            );
            (k, outcome)
        })
        .collect();
    per_outage.sort_by_key(|(k, _)| *k);

    let mut records = Vec::new();
    let mut sigma_per_outage = BTreeMap::new();
    let mut sigma_excluded = 0;
    for (_, outcome) in per_outage {
        records.extend(outcome.records);
        if let Some((label, value)) = outcome.sigma {
            sigma_per_outage.insert(label, value);
        }
        sigma_excluded += outcome.sigma_dropped;
    }

    Ok(StiReport {
        config: config.clone(),
        records,
        sigma_per_outage,
        sigma_excluded,
    })
}

/// Everything one outage contributes to the report.
struct OutageOutcome {
    records: Vec<StiRecord>,
    sigma: Option<(String, f64)>,
    sigma_dropped: usize,
}

#[allow(clippy::too_many_arguments)]
fn screen_one_outage(
    case: &NetworkCase,
    base: &OperatingPoint,
    base_transitions: &[u32],
    monitored: &[u32],
    k: usize,
    threshold: f64,
    with_benchmark: bool,
) -> OutageOutcome {
    let label = case.branch_label(k);
    let one_status_row = |status: RecordStatus| OutageOutcome {
        records: vec![StiRecord {
            outage: label.clone(),
            bus: None,
            sti_predicted: None,
            sti_benchmark: None,
            alarm: false,
            status,
        }],
        sigma: None,
        sigma_dropped: 0,
    };

    match check_connectivity(case, Some(k)) {
        Ok(Connectivity::Connected) => {}
        Ok(Connectivity::Islanded { .. }) => return one_status_row(RecordStatus::Islanded),
        Err(_) => return one_status_row(RecordStatus::EstimationFailed),
    }

    let est = match estimate_post_contingency(case, base, k) {
        Ok(est) => est,
        Err(_) => return one_status_row(RecordStatus::EstimationFailed),
    };

    let mut transitions = base_transitions.to_vec();
    transitions.extend(est.transition_buses());
    transitions.sort_unstable();
    transitions.dedup();

    let case_out = case.with_branch_out(k).expect("outage index checked");
    let direction = StressDirection::uniform(&case_out);

    // One sensitivity solve per outage covers every monitored bus.
    let predicted = match solve_sensitivities(&case_out, &est.point, &direction, &transitions) {
        Ok(sens) => sens,
        Err(_) => return one_status_row(RecordStatus::Singular),
    };

    // Exact post-contingency solution for the benchmark column.
    let exact = if with_benchmark {
        let opts = PfOptions {
            enforce_q_limits: true,
            ..Default::default()
        };
        match solve_power_flow(&case_out, &opts, None) {
            Ok(sol) => {
                let trans: Vec<u32> = case_out
                    .buses
                    .iter()
                    .enumerate()
                    .filter(|(i, b)| {
                        b.kind == BusKind::Pv && sol.point.bus_kinds[*i] == BusKind::Pq
                    })
                    .map(|(_, b)| b.id)
                    .collect();
                let sens = solve_sensitivities(&case_out, &sol.point, &direction, &trans).ok();
                sens.map(|s| (sol.point, s))
            }
            Err(_) => None,
        }
    } else {
        None
    };
    let benchmark_diverged = with_benchmark && exact.is_none();

    let mut records = Vec::with_capacity(monitored.len());
    let mut sigma_pred = Vec::new();
    let mut sigma_bench = Vec::new();
    let mut sigma_dropped = 0;

    for &bus in monitored {
        let idx = case.bus_index(bus).expect("monitored buses validated");
        let value = sti(&predicted, idx, est.point.v_mag[idx]);
        let bench_value = exact
            .as_ref()
            .map(|(point, sens)| sti(sens, idx, point.v_mag[idx]));

        let status = if benchmark_diverged {
            RecordStatus::PfDiverged
        } else {
            RecordStatus::Ok
        };
        let alarm = status == RecordStatus::Ok && value > threshold;
        if status == RecordStatus::Ok {
            if let Some(bench) = bench_value {
                sigma_pred.push(value);
                sigma_bench.push(bench);
            }
        } else {
            sigma_dropped += 1;
        }
        records.push(StiRecord {
            outage: label.clone(),
            bus: Some(bus),
            sti_predicted: Some(value),
            sti_benchmark: bench_value,
            alarm,
            status,
        });
    }

    let sigma = if with_benchmark && !sigma_pred.is_empty() {
        average_relative_error(&sigma_pred, &sigma_bench)
            .ok()
            .map(|value| (label, value))
    } else {
        None
    };

    OutageOutcome {
        records,
        sigma,
        sigma_dropped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::ieee14;

    #[test]
    fn sigma_examples() {
        assert_eq!(
            average_relative_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(),
            0.0
        );
        let sigma = average_relative_error(&[1.1, 2.2], &[1.0, 2.0]).unwrap();
        assert!((sigma - 10.0).abs() < 1e-9);
        assert!(average_relative_error(&[1.0], &[1.0, 2.0]).is_err());
        assert!(average_relative_error(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn default_monitored_set_is_the_pure_load_buses() {
        let case = ieee14();
        assert_eq!(case.pure_load_buses(), vec![4, 5, 9, 10, 11, 12, 13, 14]);
    }

    #[test]
    fn screen_with_standard_exclusions() {
        let case = ieee14();
        let config = ScreeningConfig {
            excluded_branches: vec!["1-2".into(), "7-8".into()],
            ..Default::default()
        };
        let report = screen(&case, &config).unwrap();
        let ok = report
            .records
            .iter()
            .filter(|r| r.status == RecordStatus::Ok)
            .count();
        assert_eq!(ok, 18 * 8);
        assert_eq!(report.records.len(), 18 * 8);
        assert!(!report.any_alarm(), "no alarms expected at normal load");
    }

    #[test]
    fn unexcluded_islanding_becomes_a_status_row() {
        let case = ieee14();
        let config = ScreeningConfig::default();
        let report = screen(&case, &config).unwrap();
        let islanded: Vec<&StiRecord> = report
            .records
            .iter()
            .filter(|r| r.status == RecordStatus::Islanded)
            .collect();
        assert_eq!(islanded.len(), 1);
        assert_eq!(islanded[0].outage, "7-8");
        assert_eq!(islanded[0].bus, None);
    }

    #[test]
    fn unknown_exclusion_is_rejected() {
        let case = ieee14();
        let config = ScreeningConfig {
            excluded_branches: vec!["3-9".into()],
            ..Default::default()
        };
        assert!(matches!(
            screen(&case, &config),
            Err(Error::UnknownBranchLabel(_))
        ));
    }

    #[test]
    fn alarm_flag_matches_threshold_rule() {
        let case = ieee14();
        let config = ScreeningConfig {
            load_scale: 1.2,
            excluded_branches: vec!["1-2".into(), "7-8".into()],
            ..Default::default()
        };
        let report = screen(&case, &config).unwrap();
        for r in &report.records {
            if r.status == RecordStatus::Ok {
                assert_eq!(r.alarm, r.sti_predicted.unwrap() > config.alarm_threshold);
            } else {
                assert!(!r.alarm);
            }
        }
    }
}
