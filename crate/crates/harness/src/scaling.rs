//! Scaling records, weak/strong efficiencies and the iteration growth fit.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::run::{solve_frequency, weight_table};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub frequency: f64,
    pub dofs: usize,
    /// One worker per subdomain.
    pub workers: usize,
    pub iterations: usize,
    /// Setup (local factorizations and coarse space) seconds.
    pub t_f: f64,
    /// Krylov solve seconds.
    pub t_s: f64,
    pub t_tot: f64,
    pub efficiency: f64,
}

impl ScalingRecord {
    pub fn new(frequency: f64, dofs: usize, workers: usize, iterations: usize, t_f: f64, t_s: f64) -> Self {
        ScalingRecord {
            frequency,
            dofs,
            workers,
            iterations,
            t_f,
            t_s,
            t_tot: t_f + t_s,
            efficiency: 1.0,
        }
    }

    /// A record from tabulated totals where the split is unknown.
    pub fn from_total(frequency: f64, dofs: usize, workers: usize, iterations: usize, t_tot: f64) -> Self {
        ScalingRecord::new(frequency, dofs, workers, iterations, 0.0, t_tot)
    }
}

fn check_time(r: &ScalingRecord) -> Result<()> {
    if !(r.t_tot > 0.0 && r.t_tot.is_finite()) {
        bail!("T_tot must be positive and finite, got {}", r.t_tot);
    }
    if r.workers == 0 || r.dofs == 0 {
        bail!("worker and dof counts must be positive");
    }
    Ok(())
}

/// E_w = [T_ref·cores_ref/dof_ref] / [T·cores/dof].
pub fn weak_efficiency(record: &ScalingRecord, reference: &ScalingRecord) -> Result<f64> {
    check_time(record)?;
    check_time(reference)?;
    let cost = |r: &ScalingRecord| r.t_tot * r.workers as f64 / r.dofs as f64;
    Ok(cost(reference) / cost(record))
}

/// E_s = [T_ref·cores_ref] / [T·cores].
pub fn strong_efficiency(record: &ScalingRecord, reference: &ScalingRecord) -> Result<f64> {
    check_time(record)?;
    check_time(reference)?;
    Ok(reference.t_tot * reference.workers as f64 / (record.t_tot * record.workers as f64))
}

/// Index of the smallest problem, ties broken by fewest workers.
pub fn smallest(records: &[ScalingRecord]) -> Option<usize> {
    (0..records.len()).min_by_key(|&i| (records[i].dofs, records[i].workers))
}

/// Fills `efficiency` with E_w against the smallest problem.
pub fn annotate_weak(records: &mut [ScalingRecord]) -> Result<()> {
    let Some(r) = smallest(records) else {
        bail!("no scaling records");
    };
    let reference = records[r].clone();
    for rec in records.iter_mut() {
        rec.efficiency = weak_efficiency(rec, &reference)?;
    }
    Ok(())
}

/// Fills `efficiency` with E_s against the record with the fewest workers.
pub fn annotate_strong(records: &mut [ScalingRecord]) -> Result<()> {
    let Some(r) = (0..records.len()).min_by_key(|&i| records[i].workers) else {
        bail!("no scaling records");
    };
    let reference = records[r].clone();
    for rec in records.iter_mut() {
        rec.efficiency = strong_efficiency(rec, &reference)?;
    }
    Ok(())
}

/// Least-squares slope of ln(iterations) against ln(frequency).
pub fn growth_exponent(frequencies: &[f64], iterations: &[usize]) -> Result<f64> {
    if frequencies.len() != iterations.len() || frequencies.len() < 2 {
        bail!("growth fit needs at least two (frequency, iterations) pairs");
    }
    if frequencies.iter().any(|f| !(*f > 0.0)) || iterations.iter().any(|&i| i == 0) {
        bail!("growth fit needs positive frequencies and iteration counts");
    }
    let x: Vec<f64> = frequencies.iter().map(|f| f.ln()).collect();
    let y: Vec<f64> = iterations.iter().map(|&i| (i as f64).ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        bail!("growth fit needs distinct frequencies");
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub frequency: f64,
    pub dofs: usize,
    pub subdomains: usize,
    pub iterations: usize,
    pub converged: bool,
    pub t_f: f64,
    pub t_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub exponent: f64,
    /// False when any run missed the tolerance; the exponent is then suspect.
    pub all_converged: bool,
}

/// Solves the template at each frequency with the grid refined at fixed
/// points per wavelength and fits the iteration growth exponent.
pub fn iteration_frequency_sweep(template: &RunConfig, frequencies: &[f64]) -> Result<SweepTable> {
    if frequencies.len() < 3 {
        bail!("a sweep needs at least three frequencies");
    }
    if template.model.ppw.is_none() {
        bail!("a sweep needs `model.ppw` so the grid follows the frequency");
    }
    let table = weight_table(template)?;
    let mut rows = Vec::with_capacity(frequencies.len());
    for &f in frequencies {
        let res = solve_frequency(template, &table, f).with_context(|| format!("sweep at {f} Hz"))?;
        let r = &res.report;
        rows.push(SweepRow {
            frequency: f,
            dofs: r.dofs,
            subdomains: r.subdomains,
            iterations: r.solve.max_iterations(),
            converged: r.solve.all_converged(),
            t_f: r.t_f,
            t_s: r.t_s,
        });
    }
    let f: Vec<f64> = rows.iter().map(|r| r.frequency).collect();
    let its: Vec<usize> = rows.iter().map(|r| r.iterations.max(1)).collect();
    Ok(SweepTable {
        exponent: growth_exponent(&f, &its)?,
        all_converged: rows.iter().all(|r| r.converged),
        rows,
    })
}
