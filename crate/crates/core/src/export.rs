//! CSV and summary emission. All writers take `io::Write` sinks; file
//! handling (and atomic replacement) is the caller's business.
//!
//! Channel states are 1-based in every emitted table. Floats are written
//! with the shortest round-trip representation, so identical numbers always
//! produce identical bytes.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fsmc::BurstStats;
use crate::lqr::{GainSchedule, SweepPoint};
use crate::sim::{SimStats, SimTrace};
use crate::stability::StabilityReport;

fn csv_writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(sink)
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// `k,state,row,col,value` for every gain entry of a finite-horizon schedule.
pub fn gain_schedule_csv<W: Write>(sink: W, schedule: &GainSchedule) -> Result<()> {
    let mut w = csv_writer(sink);
    w.write_record(["k", "state", "row", "col", "value"])
        .map_err(csv_err)?;
    for k in 0..schedule.horizon() {
        for state in 0..schedule.state_count() {
            let g = schedule.gain(k, state);
            for row in 0..g.nrows() {
                for col in 0..g.ncols() {
                    w.write_record([
                        k.to_string(),
                        (state + 1).to_string(),
                        (row + 1).to_string(),
                        (col + 1).to_string(),
                        num(g[(row, col)]),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `k,state,row,col,value` for the Riccati value matrices of a schedule.
pub fn riccati_csv<W: Write>(sink: W, schedule: &GainSchedule) -> Result<()> {
    let mut w = csv_writer(sink);
    w.write_record(["k", "state", "row", "col", "value"])
        .map_err(csv_err)?;
    for k in 0..=schedule.horizon() {
        for state in 0..schedule.state_count() {
            let x = schedule.riccati(k, state);
            for row in 0..x.nrows() {
                for col in 0..x.ncols() {
                    w.write_record([
                        k.to_string(),
                        (state + 1).to_string(),
                        (row + 1).to_string(),
                        (col + 1).to_string(),
                        num(x[(row, col)]),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Burst statistics table: one row per (start state, burst length, end
/// state) with the burst-profile component and the conditional transition
/// probability.
pub fn burst_stats_csv<W: Write>(sink: W, stats: &BurstStats) -> Result<()> {
    let mut w = csv_writer(sink);
    w.write_record(["i", "n", "j", "varsigma_component", "zeta"])
        .map_err(csv_err)?;
    let n_states = stats.model().state_count();
    for i in 0..n_states {
        for n in 0..=stats.max_burst() {
            for j in 0..n_states {
                let profile = stats.burst_profile(n, j);
                w.write_record([
                    (i + 1).to_string(),
                    n.to_string(),
                    (j + 1).to_string(),
                    num(profile[i]),
                    num(stats.burst_transition(i, n, j)),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Compensation-factor sweep table.
pub fn sweep_csv<W: Write>(sink: W, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv_writer(sink);
    w.write_record(["phi", "rho", "j_inf", "status"]).map_err(csv_err)?;
    for p in points {
        match &p.outcome {
            Ok(out) => w.write_record([
                num(p.phi),
                num(out.spectral_radius),
                num(out.long_run_cost),
                "ok".to_string(),
            ]),
            Err(e) => w.write_record([num(p.phi), String::new(), String::new(), e.to_string()]),
        }
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-step percentile envelopes, one row per (component, step).
pub fn percentiles_csv<W: Write>(sink: W, stats: &SimStats) -> Result<()> {
    let mut w = csv_writer(sink);
    w.write_record(["component", "k", "median", "p95", "p999", "max"])
        .map_err(csv_err)?;
    for env in &stats.envelopes {
        for k in 0..env.median.len() {
            w.write_record([
                (env.component + 1).to_string(),
                k.to_string(),
                num(env.median[k]),
                num(env.p95[k]),
                num(env.p999[k]),
                num(env.max[k]),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Longest-burst histogram over channel traces.
pub fn burst_hist_csv<W: Write>(sink: W, stats: &SimStats) -> Result<()> {
    let mut w = csv_writer(sink);
    w.write_record(["longest_burst", "count"]).map_err(csv_err)?;
    for (len, count) in &stats.longest_burst_hist {
        w.write_record([len.to_string(), count.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Full trajectory dump of one trace.
pub fn trace_csv<W: Write>(sink: W, trace: &SimTrace, trace_id: usize) -> Result<()> {
    let mut w = csv_writer(sink);
    let n_x = trace.steps.first().map_or(0, |s| s.state.len());
    let n_u = trace.steps.first().map_or(0, |s| s.input.len());
    let mut header = vec!["trace_id".to_string(), "k".to_string(), "theta".to_string(),
        "delta".to_string(), "Delta".to_string()];
    header.extend((1..=n_x).map(|i| format!("x_{i}")));
    header.extend((1..=n_u).map(|i| format!("u_{i}")));
    header.extend((1..=n_u).map(|i| format!("u_c_{i}")));
    header.push("step_cost".to_string());
    w.write_record(&header).map_err(csv_err)?;
    for record in &trace.steps {
        let mut row = vec![
            trace_id.to_string(),
            record.step.to_string(),
            (record.channel_state + 1).to_string(),
            (record.delivered as u8).to_string(),
            record.burst.to_string(),
        ];
        row.extend(record.state.iter().map(|&v| num(v)));
        row.extend(record.input.iter().map(|&v| num(v)));
        row.extend(record.command.iter().map(|&v| num(v)));
        row.push(num(record.step_cost));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Generic `row,col,value` matrix dump (steady-state second moments, ...).
pub fn matrix_csv<W: Write>(sink: W, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv_writer(sink);
    w.write_record(["row", "col", "value"]).map_err(csv_err)?;
    for row in 0..m.nrows() {
        for col in 0..m.ncols() {
            w.write_record([
                (row + 1).to_string(),
                (col + 1).to_string(),
                num(m[(row, col)]),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct StabilitySummary {
    spectral_radius: f64,
    mean_square_stable: bool,
    mode_count: usize,
    unreachable_modes: usize,
    truncation_mass: f64,
    radius_method: String,
}

/// Stability report summary as a TOML document.
pub fn stability_summary_toml(report: &StabilityReport) -> String {
    let summary = StabilitySummary {
        spectral_radius: report.spectral_radius(),
        mean_square_stable: report.is_mean_square_stable(),
        mode_count: report.mode_count(),
        unreachable_modes: report.unreachable_modes().len(),
        truncation_mass: report.truncation_mass(),
        radius_method: match report.radius_iterations() {
            Some(iters) => format!("power iteration ({iters} iterations)"),
            None => "dense eigensolve".into(),
        },
    };
    toml::to_string_pretty(&summary).expect("summary serializes")
}

#[derive(Serialize)]
struct CostSummary {
    horizon: usize,
    noise_traces: usize,
    channel_traces: usize,
    divergent_traces: usize,
    exclusion_quantile: f64,
    average_cost_all: Option<f64>,
    average_cost_excluded: Option<f64>,
}

/// Monte Carlo cost summary as a TOML document.
pub fn cost_summary_toml(stats: &SimStats, quantile: f64) -> String {
    let summary = CostSummary {
        horizon: stats.horizon,
        noise_traces: stats.noise_traces,
        channel_traces: stats.channel_traces,
        divergent_traces: stats.divergent,
        exclusion_quantile: quantile,
        average_cost_all: stats.empirical_average_cost(1.0).ok(),
        average_cost_excluded: stats.empirical_average_cost(quantile).ok(),
    };
    toml::to_string_pretty(&summary).expect("summary serializes")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsmc::FsmcModel;
    use crate::sim::{monte_carlo, Policy, SimConfig};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn burst_stats_csv_has_full_grid() {
        let stats = BurstStats::build(&crate::pendulum::channel(), 1e-6).unwrap();
        let mut buf = Vec::new();
        burst_stats_csv(&mut buf, &stats).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows = text.lines().count() - 1;
        assert_eq!(rows, 4 * 4 * (stats.max_burst() + 1));
        assert!(text.starts_with("i,n,j,varsigma_component,zeta"));
    }

    #[test]
    fn percentile_csv_emits_each_component() {
        let channel = FsmcModel::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[0.9]),
        )
        .unwrap();
        let plant = crate::pendulum::plant();
        let cfg = SimConfig {
            plant,
            channel,
            policy: Policy::Stationary(vec![crate::pendulum::reference_gains_best_phi()[0].clone()]),
            horizon: 5,
            noise_traces: 2,
            channel_traces: 2,
            master_seed: 3,
            theta_init: DVector::from_element(1, 1.0),
        };
        let stats = monte_carlo(&cfg).unwrap();
        let mut buf = Vec::new();
        percentiles_csv(&mut buf, &stats).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count() - 1, 4 * 6);
    }
}
