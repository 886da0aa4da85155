//! Accuracy metrics over rolled-out predictions and the timing comparison.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{run_simulation, SimOptions, SimulationRecord};
use crate::surrogate::Surrogate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parameter {
    Stress,
    Strain,
    Dx,
    Dy,
    Dz,
    Rd,
}

impl Parameter {
    pub fn name(self) -> &'static str {
        match self {
            Parameter::Stress => "sigma",
            Parameter::Strain => "epsilon",
            Parameter::Dx => "d_x",
            Parameter::Dy => "d_y",
            Parameter::Dz => "d_z",
            Parameter::Rd => "R_d",
        }
    }

    /// Parameters reported for a mesh of the given dimensionality.
    pub fn for_dim(dim: usize) -> Vec<Parameter> {
        let mut p = vec![
            Parameter::Stress,
            Parameter::Strain,
            Parameter::Dx,
            Parameter::Dy,
        ];
        if dim == 3 {
            p.push(Parameter::Dz);
        }
        p.push(Parameter::Rd);
        p
    }
}

/// Coefficient of determination, `1 - SS_res / SS_tot`.
pub fn r_squared(gt: &[f64], pred: &[f64]) -> Result<f64> {
    if gt.len() != pred.len() || gt.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "R^2 needs two equal-length series of >= 2 values, got {} and {}",
            gt.len(),
            pred.len()
        )));
    }
    let mean = gt.iter().sum::<f64>() / gt.len() as f64;
    let ss_tot: f64 = gt.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric(
            "ground truth has zero variance".into(),
        ));
    }
    let ss_res: f64 = gt.iter().zip(pred).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Ground-truth and predicted values of one parameter for one simulation.
pub type SimPair = (Vec<f64>, Vec<f64>);

fn normalized_error(sims: &[SimPair], per_sim: impl Fn(&[f64], &[f64]) -> f64) -> Result<f64> {
    if sims.is_empty() {
        return Err(Error::UndefinedMetric("no simulations".into()));
    }
    let mut total = 0.0;
    for (j, (gt, pred)) in sims.iter().enumerate() {
        if gt.len() != pred.len() || gt.is_empty() {
            return Err(Error::UndefinedMetric(format!(
                "simulation {j}: length mismatch"
            )));
        }
        let (lo, hi) = gt
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        if !(hi > lo) {
            return Err(Error::UndefinedMetric(format!(
                "simulation {j}: ground-truth range is degenerate ({lo})"
            )));
        }
        total += per_sim(gt, pred) / (hi - lo);
    }
    Ok(100.0 * total / sims.len() as f64)
}

/// Mean over simulations of range-normalized MAE, in percent.
pub fn nmae(sims: &[SimPair]) -> Result<f64> {
    normalized_error(sims, |g, p| {
        g.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>() / g.len() as f64
    })
}

/// Mean over simulations of range-normalized RMSE, in percent.
pub fn nrmse(sims: &[SimPair]) -> Result<f64> {
    normalized_error(sims, |g, p| {
        (g.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / g.len() as f64).sqrt()
    })
}

/// Euclidean norm across displacement components, elementwise.
pub fn resultant_displacement(components: &[&[f64]]) -> Vec<f64> {
    let n = components.first().map_or(0, |c| c.len());
    (0..n)
        .map(|i| components.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
        .collect()
}

/// Values of `p` over frames `1..=T`, frame-major.
pub fn parameter_values(sim: &SimulationRecord, p: Parameter) -> Vec<f64> {
    let n = sim.topology.n_nodes();
    let dim = sim.topology.dim();
    let mut out = Vec::new();
    for f in &sim.frames[1..] {
        let d = &f.displacements;
        match p {
            Parameter::Stress => out.extend_from_slice(&f.stress),
            Parameter::Strain => out.extend_from_slice(&f.strain),
            Parameter::Dx => out.extend_from_slice(&d[..n]),
            Parameter::Dy => out.extend_from_slice(&d[n..2 * n]),
            Parameter::Dz => out.extend_from_slice(&d[2 * n..3 * n]),
            Parameter::Rd => {
                let comps: Vec<&[f64]> = (0..dim).map(|a| &d[a * n..(a + 1) * n]).collect();
                out.extend(resultant_displacement(&comps));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub parameter: Parameter,
    pub r2: f64,
    pub nmae: f64,
    pub nrmse: f64,
    /// Values per simulation (Γ).
    pub values_per_sim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub sims: usize,
    pub surrogate_mean_s: f64,
    pub oracle_mean_s: f64,
    pub speedup: f64,
}

impl TimingReport {
    pub const CSV_HEADER: &'static str = "sims,surrogate_mean_s,oracle_mean_s,speedup";

    pub fn to_csv(&self) -> String {
        format!(
            "{}\n{},{:.6e},{:.6e},{:.3}\n",
            Self::CSV_HEADER,
            self.sims,
            self.surrogate_mean_s,
            self.oracle_mean_s,
            self.speedup
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Number of simulations (A).
    pub sims: usize,
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "parameter,r2,nmae_pct,nrmse_pct,sims,values_per_sim";

    pub fn row(&self, p: Parameter) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.parameter == p)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.6},{:.4},{:.4},{},{}",
                r.parameter.name(),
                r.r2,
                r.nmae,
                r.nrmse,
                self.sims,
                r.values_per_sim
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<10}{:>12}{:>12}{:>12}\n",
            "parameter", "R2", "NMAE %", "NRMSE %"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10}{:>12.4}{:>12.3}{:>12.3}",
                r.parameter.name(),
                r.r2,
                r.nmae,
                r.nrmse
            );
        }
        let _ = writeln!(s, "simulations: {}", self.sims);
        s
    }
}

/// Metrics of predicted records against ground truth, in physical units.
pub fn compare(gt: &[SimulationRecord], pred: &[SimulationRecord]) -> Result<MetricsReport> {
    if gt.is_empty() || gt.len() != pred.len() {
        return Err(Error::UndefinedMetric(format!(
            "{} ground-truth and {} predicted simulations",
            gt.len(),
            pred.len()
        )));
    }
    let dim = gt[0].topology.dim();
    let mut rows = Vec::new();
    for p in Parameter::for_dim(dim) {
        let pairs: Vec<SimPair> = gt
            .iter()
            .zip(pred)
            .map(|(g, q)| (parameter_values(g, p), parameter_values(q, p)))
            .collect();
        let pooled_gt: Vec<f64> = pairs.iter().flat_map(|(g, _)| g.iter().copied()).collect();
        let pooled_pred: Vec<f64> = pairs.iter().flat_map(|(_, q)| q.iter().copied()).collect();
        rows.push(MetricRow {
            parameter: p,
            r2: r_squared(&pooled_gt, &pooled_pred)?,
            nmae: nmae(&pairs)?,
            nrmse: nrmse(&pairs)?,
            values_per_sim: pairs[0].0.len(),
        });
    }
    Ok(MetricsReport {
        sims: gt.len(),
        rows,
    })
}

/// Fully autoregressive evaluation of a surrogate on a test set.
pub fn evaluate(surrogate: &Surrogate, test: &[SimulationRecord]) -> Result<MetricsReport> {
    let pred: Vec<SimulationRecord> = test
        .par_iter()
        .map(|s| surrogate.predict_record(s))
        .collect::<Result<_>>()?;
    compare(test, &pred)
}

/// Mean wall-clock per simulation of `f` over `sims`, run sequentially.
pub fn mean_seconds<T>(
    sims: &[SimulationRecord],
    mut f: impl FnMut(&SimulationRecord) -> Result<T>,
) -> Result<f64> {
    let start = Instant::now();
    for s in sims {
        std::hint::black_box(f(s)?);
    }
    Ok(start.elapsed().as_secs_f64() / sims.len() as f64)
}

/// Surrogate rollout versus a fresh oracle solve of the same cases.
pub fn timing_report(
    surrogate: &Surrogate,
    sims: &[SimulationRecord],
    opts: &SimOptions,
) -> Result<TimingReport> {
    if sims.len() < 3 {
        return Err(Error::UndefinedMetric(
            "timing needs at least 3 simulations".into(),
        ));
    }
    let oracle = mean_seconds(sims, |s| {
        run_simulation(&s.topology, &s.material, &s.load, opts)
    })?;
    let surrogate_s = mean_seconds(sims, |s| surrogate.predict_record(s))?;
    Ok(TimingReport {
        sims: sims.len(),
        surrogate_mean_s: surrogate_s,
        oracle_mean_s: oracle,
        speedup: oracle / surrogate_s,
    })
}
