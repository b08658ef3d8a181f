//! The penetration-sweep harness: a grid of automation shares × random
//! seeds × run durations per scenario, executed as independent jobs,
//! averaged across seeds, and reduced to per-metric trend verdicts.
//!
//! Workers pull jobs from a shared queue, but results are written back by
//! job index and every reduction runs in a canonical order, so all emitted
//! artifacts are byte-identical for any worker count.

pub mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use crate::engine::{run, RunSummary, SimConfig, SimError};
use crate::metrics::{
    percent_benefit, FuelEmissionModel, MetricsAccumulator, NodeEvaluationResult, QueueConfig,
    Scope,
};
use crate::net::CompiledNet;

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("invalid sweep spec: {0}")]
    Spec(String),
    #[error(
        "run failed for {scenario} duration {duration_s} s penetration {penetration_pct}% \
         seed {seed}: {source}"
    )]
    Run {
        scenario: String,
        duration_s: f64,
        penetration_pct: f64,
        seed: u64,
        #[source]
        source: SimError,
    },
    #[error("aggregation failed: {0}")]
    Aggregate(String),
}

/// A named, ready-to-run network.
pub struct Scenario {
    pub name: String,
    pub net: CompiledNet,
}

/// One run length and the scope its results are evaluated under.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DurationSpec {
    pub duration_s: f64,
    pub scope: Scope,
}

/// The full experimental design.
pub struct SweepSpec {
    pub scenarios: Vec<Scenario>,
    /// Automation shares as fractions; must start at 0 and increase.
    pub grid: Vec<f64>,
    /// Same seed list for every grid cell (common random numbers).
    pub seeds: Vec<u64>,
    pub durations: Vec<DurationSpec>,
    pub dt: f64,
    pub model: FuelEmissionModel,
    pub queue: QueueConfig,
    pub workers: usize,
}

pub const DEFAULT_GRID: [f64; 7] = [0.0, 0.20, 0.35, 0.50, 0.65, 0.80, 1.0];

impl SweepSpec {
    pub fn new(scenarios: Vec<Scenario>) -> Self {
        SweepSpec {
            scenarios,
            grid: DEFAULT_GRID.to_vec(),
            seeds: (1..=10).collect(),
            durations: vec![
                DurationSpec { duration_s: 500.0, scope: Scope::Node },
                DurationSpec { duration_s: 3600.0, scope: Scope::FullNetwork },
            ],
            dt: 0.1,
            model: FuelEmissionModel::default(),
            queue: QueueConfig::default(),
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        }
    }

    pub fn job_count(&self) -> usize {
        self.scenarios.len() * self.durations.len() * self.grid.len() * self.seeds.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.scenarios.is_empty() {
            return Err("no scenarios".into());
        }
        if self.grid.first() != Some(&0.0) {
            return Err("penetration grid must start at 0".into());
        }
        for w in self.grid.windows(2) {
            if !(w[1] > w[0]) {
                return Err("penetration grid must be strictly increasing".into());
            }
        }
        if self.grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err("penetration grid values must lie in [0, 1]".into());
        }
        if self.seeds.is_empty() {
            return Err("at least one seed required".into());
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err("seeds must be distinct".into());
        }
        if self.durations.is_empty() {
            return Err("at least one duration required".into());
        }
        if self.durations.iter().any(|d| !d.duration_s.is_finite() || d.duration_s <= 0.0) {
            return Err("durations must be positive".into());
        }
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err("dt must be positive".into());
        }
        if self.workers == 0 {
            return Err("workers must be at least 1".into());
        }
        self.model.validate()?;
        self.queue.validate()
    }
}

/// Penetration fraction as a percent, rounded to 1/1000 of a percent so
/// grid values compare exactly across cells and print cleanly.
fn pct_of(fraction: f64) -> f64 {
    (fraction * 1e5).round() / 1e3
}

/// Integers print bare ("35"), everything else via shortest round-trip.
fn fmt_pct(p: f64) -> String {
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round() as i64)
    } else {
        format!("{p}")
    }
}

/// One simulation run evaluated under its duration's scope.
#[derive(Clone, Debug, PartialEq)]
pub struct RawResult {
    pub scenario: String,
    pub duration_s: f64,
    pub scope: Scope,
    pub penetration_pct: f64,
    pub seed: u64,
    pub result: NodeEvaluationResult,
    /// Benefit against the 0%-penetration run of the same cell and seed.
    pub pct_fuel_benefit: f64,
    pub run: RunSummary,
}

/// Execute the whole design; results come back in a canonical order
/// (scenario, duration, penetration, seed) independent of worker count.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<RawResult>, SweepError> {
    run_sweep_with(spec, &|_, _| {})
}

/// Like [`run_sweep`], reporting (completed, total) after each finished job.
/// The callback runs on worker threads, in completion order.
pub fn run_sweep_with(
    spec: &SweepSpec,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<Vec<RawResult>, SweepError> {
    spec.validate().map_err(SweepError::Spec)?;

    let n_dur = spec.durations.len();
    let n_grid = spec.grid.len();
    let n_seed = spec.seeds.len();
    let total = spec.job_count();

    let job = |idx: usize| -> Result<RawResult, SweepError> {
        let qi = idx % n_seed;
        let gi = idx / n_seed % n_grid;
        let di = idx / (n_seed * n_grid) % n_dur;
        let si = idx / (n_seed * n_grid * n_dur);
        let scenario = &spec.scenarios[si];
        let dur = spec.durations[di];
        let seed = spec.seeds[qi];
        let penetration_pct = pct_of(spec.grid[gi]);
        let cfg = SimConfig {
            dt: spec.dt,
            duration_s: dur.duration_s,
            penetration: spec.grid[gi],
            seed,
        };
        let mut acc = MetricsAccumulator::new(&scenario.net, spec.dt, spec.model, spec.queue);
        let summary = run(&scenario.net, cfg, &mut acc).map_err(|source| SweepError::Run {
            scenario: scenario.name.clone(),
            duration_s: dur.duration_s,
            penetration_pct,
            seed,
            source,
        })?;
        let scoped = acc.finish();
        let result = match dur.scope {
            Scope::Node => scoped.node,
            Scope::FullNetwork => scoped.full_network,
        };
        Ok(RawResult {
            scenario: scenario.name.clone(),
            duration_s: dur.duration_s,
            scope: dur.scope,
            penetration_pct,
            seed,
            result,
            pct_fuel_benefit: 0.0, // filled against the 0% cell below
            run: summary,
        })
    };

    let cursor = AtomicUsize::new(0);
    let completed = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let workers = spec.workers.min(total).max(1);

    let mut outcomes: Vec<(usize, Result<RawResult, SweepError>)> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    scope.spawn(|| {
                        let mut local = Vec::new();
                        loop {
                            let idx = cursor.fetch_add(1, Ordering::Relaxed);
                            if idx >= total || failed.load(Ordering::Relaxed) {
                                break;
                            }
                            let outcome = job(idx);
                            if outcome.is_err() {
                                failed.store(true, Ordering::Relaxed);
                            } else {
                                progress(completed.fetch_add(1, Ordering::Relaxed) + 1, total);
                            }
                            local.push((idx, outcome));
                        }
                        local
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("sweep worker panicked")).collect()
        });

    outcomes.sort_by_key(|(idx, _)| *idx);
    let mut results = Vec::with_capacity(total);
    for (_, outcome) in outcomes {
        results.push(outcome?);
    }
    if results.len() != total {
        // A failure elsewhere stopped the queue before this point was hit.
        return Err(SweepError::Aggregate("sweep aborted before completing".into()));
    }

    // Per-seed benefit against the 0% run of the same scenario/duration/seed
    // (grid index 0 is the 0% cell by construction).
    for si in 0..spec.scenarios.len() {
        for di in 0..n_dur {
            let cell = |gi: usize, qi: usize| ((si * n_dur + di) * n_grid + gi) * n_seed + qi;
            for qi in 0..n_seed {
                let base = results[cell(0, qi)].result.fuel_per_vehicle_gal;
                for gi in 0..n_grid {
                    let idx = cell(gi, qi);
                    let own = results[idx].result.fuel_per_vehicle_gal;
                    results[idx].pct_fuel_benefit = if gi == 0 {
                        0.0
                    } else {
                        percent_benefit(base, own).unwrap_or(0.0)
                    };
                }
            }
        }
    }
    Ok(results)
}

/// Seed-mean of every metric for one (scenario, duration, scope,
/// penetration) cell, plus changes against the 0% cell.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub scenario: String,
    pub duration_s: f64,
    pub scope: Scope,
    pub penetration_pct: f64,
    pub veh_count_mean: f64,
    pub fuel_per_veh_mean: f64,
    pub pct_fuel_benefit: f64,
    pub pct_mobility_change: f64,
    pub avg_queue_m_mean: f64,
    pub max_queue_m_mean: f64,
    pub avg_delay_s_mean: f64,
    pub avg_stopped_delay_s_mean: f64,
    pub co_g_per_veh: f64,
    pub nox_g_per_veh: f64,
    pub voc_g_per_veh: f64,
    pub total_stops_mean: f64,
}

type CellKey = (String, u64, Scope, u64);

fn cell_key(r: &RawResult) -> CellKey {
    // Positive finite floats order correctly by their bit patterns.
    (r.scenario.clone(), r.duration_s.to_bits(), r.scope, (r.penetration_pct * 1e3).round() as u64)
}

/// Collapse raw results to per-cell seed means, in canonical order
/// (scenario, duration, scope, penetration) regardless of input order.
pub fn aggregate(raw: &[RawResult]) -> Result<Vec<AggregateRow>, SweepError> {
    if raw.is_empty() {
        return Err(SweepError::Aggregate("no results to aggregate".into()));
    }
    let mut cells: BTreeMap<CellKey, Vec<&RawResult>> = BTreeMap::new();
    for r in raw {
        cells.entry(cell_key(r)).or_default().push(r);
    }
    let mut reference: Option<Vec<u64>> = None;
    for rows in cells.values_mut() {
        rows.sort_by_key(|r| r.seed);
        let seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
        match &reference {
            None => reference = Some(seeds),
            Some(expect) if *expect == seeds => {}
            Some(expect) => {
                return Err(SweepError::Aggregate(format!(
                    "cell {}/{}s/{}/{}% has seeds {seeds:?}, expected {expect:?}",
                    rows[0].scenario, rows[0].duration_s, rows[0].scope, rows[0].penetration_pct,
                )));
            }
        }
    }

    let mean_of = |rows: &[&RawResult], f: fn(&RawResult) -> f64| -> f64 {
        rows.iter().map(|&r| f(r)).sum::<f64>() / rows.len() as f64
    };

    let mut out = Vec::with_capacity(cells.len());
    for ((scenario, dur_bits, scope, pct_milli), rows) in &cells {
        let base_key = (scenario.clone(), *dur_bits, *scope, 0);
        let base = cells.get(&base_key).ok_or_else(|| {
            SweepError::Aggregate(format!("no 0% baseline cell for scenario {scenario}"))
        })?;
        let fuel_mean = mean_of(rows, |r| r.result.fuel_per_vehicle_gal);
        let count_mean = mean_of(rows, |r| r.result.vehicle_count as f64);
        let (benefit, mobility) = if *pct_milli == 0 {
            (0.0, 0.0)
        } else {
            let base_fuel = mean_of(base, |r| r.result.fuel_per_vehicle_gal);
            let base_count = mean_of(base, |r| r.result.vehicle_count as f64);
            let benefit = percent_benefit(base_fuel, fuel_mean).map_err(|e| {
                SweepError::Aggregate(format!("benefit for scenario {scenario}: {e}"))
            })?;
            let mobility =
                if base_count == 0.0 { 0.0 } else { 100.0 * (count_mean - base_count) / base_count };
            (benefit, mobility)
        };
        out.push(AggregateRow {
            scenario: scenario.clone(),
            duration_s: f64::from_bits(*dur_bits),
            scope: *scope,
            penetration_pct: *pct_milli as f64 / 1e3,
            veh_count_mean: count_mean,
            fuel_per_veh_mean: fuel_mean,
            pct_fuel_benefit: benefit,
            pct_mobility_change: mobility,
            avg_queue_m_mean: mean_of(rows, |r| r.result.avg_queue_m),
            max_queue_m_mean: mean_of(rows, |r| r.result.max_queue_m),
            avg_delay_s_mean: mean_of(rows, |r| r.result.avg_delay_s),
            avg_stopped_delay_s_mean: mean_of(rows, |r| r.result.avg_stopped_delay_s),
            co_g_per_veh: mean_of(rows, |r| r.result.co_per_vehicle_g),
            nox_g_per_veh: mean_of(rows, |r| r.result.nox_per_vehicle_g),
            voc_g_per_veh: mean_of(rows, |r| r.result.voc_per_vehicle_g),
            total_stops_mean: mean_of(rows, |r| r.result.total_stops as f64),
        });
    }
    Ok(out)
}

pub const RESULTS_HEADER: &str = "route,scope,duration_s,penetration_pct,seed,veh_count,\
    total_fuel_gal,fuel_per_veh_gal,pct_fuel_benefit,co_g,nox_g,voc_g,avg_queue_m,max_queue_m,\
    avg_delay_s,avg_stopped_delay_s,total_stops";

pub const AGGREGATE_HEADER: &str = "route,duration_s,scope,penetration_pct,veh_count_mean,\
    fuel_per_veh_mean,pct_fuel_benefit,pct_mobility_change,avg_queue_m_mean,max_queue_m_mean,\
    avg_delay_s_mean,avg_stopped_delay_s_mean,co_g_per_veh,nox_g_per_veh,voc_g_per_veh,\
    total_stops_mean";

/// One row per run, columns fixed by [`RESULTS_HEADER`]. Floats use the
/// shortest representation that round-trips, so downstream recomputation
/// sees the exact values.
pub fn write_results_csv<W: Write>(raw: &[RawResult], mut out: W) -> io::Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in raw {
        let m = &r.result;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.scope,
            r.duration_s,
            fmt_pct(r.penetration_pct),
            r.seed,
            m.vehicle_count,
            m.total_fuel_gal,
            m.fuel_per_vehicle_gal,
            r.pct_fuel_benefit,
            m.co_g,
            m.nox_g,
            m.voc_g,
            m.avg_queue_m,
            m.max_queue_m,
            m.avg_delay_s,
            m.avg_stopped_delay_s,
            m.total_stops,
        )?;
    }
    Ok(())
}

/// One row per cell, columns fixed by [`AGGREGATE_HEADER`].
pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{AGGREGATE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.duration_s,
            r.scope,
            fmt_pct(r.penetration_pct),
            r.veh_count_mean,
            r.fuel_per_veh_mean,
            r.pct_fuel_benefit,
            r.pct_mobility_change,
            r.avg_queue_m_mean,
            r.max_queue_m_mean,
            r.avg_delay_s_mean,
            r.avg_stopped_delay_s_mean,
            r.co_g_per_veh,
            r.nox_g_per_veh,
            r.voc_g_per_veh,
            r.total_stops_mean,
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improving,
    Degrading,
    Flat,
    NonMonotoneImproving,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Improving => "improving",
            Verdict::Degrading => "degrading",
            Verdict::Flat => "flat",
            Verdict::NonMonotoneImproving => "non-monotone-improving",
        })
    }
}

/// How one metric moves across the penetration grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TrendVerdict {
    pub metric: &'static str,
    /// Rank correlation of the cell means against penetration.
    pub spearman_rho: f64,
    pub baseline_mean: f64,
    pub endpoint_mean: f64,
    /// Welch two-sided p for 100% vs 0% across seeds; `None` when per-seed
    /// results were not available (aggregate-only reporting).
    pub welch_p: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioTrends {
    pub scenario: String,
    pub duration_s: f64,
    pub scope: Scope,
    pub metrics: Vec<TrendVerdict>,
}

struct MetricDef {
    name: &'static str,
    lower_is_better: bool,
    agg: fn(&AggregateRow) -> f64,
    raw: fn(&NodeEvaluationResult) -> f64,
}

const TREND_METRICS: &[MetricDef] = &[
    MetricDef {
        name: "fuel_per_veh",
        lower_is_better: true,
        agg: |r| r.fuel_per_veh_mean,
        raw: |m| m.fuel_per_vehicle_gal,
    },
    MetricDef {
        name: "veh_count",
        lower_is_better: false,
        agg: |r| r.veh_count_mean,
        raw: |m| m.vehicle_count as f64,
    },
    MetricDef {
        name: "co_per_veh",
        lower_is_better: true,
        agg: |r| r.co_g_per_veh,
        raw: |m| m.co_per_vehicle_g,
    },
    MetricDef {
        name: "nox_per_veh",
        lower_is_better: true,
        agg: |r| r.nox_g_per_veh,
        raw: |m| m.nox_per_vehicle_g,
    },
    MetricDef {
        name: "voc_per_veh",
        lower_is_better: true,
        agg: |r| r.voc_g_per_veh,
        raw: |m| m.voc_per_vehicle_g,
    },
    MetricDef {
        name: "avg_queue_m",
        lower_is_better: true,
        agg: |r| r.avg_queue_m_mean,
        raw: |m| m.avg_queue_m,
    },
    MetricDef {
        name: "max_queue_m",
        lower_is_better: true,
        agg: |r| r.max_queue_m_mean,
        raw: |m| m.max_queue_m,
    },
    MetricDef {
        name: "avg_delay_s",
        lower_is_better: true,
        agg: |r| r.avg_delay_s_mean,
        raw: |m| m.avg_delay_s,
    },
    MetricDef {
        name: "avg_stopped_delay_s",
        lower_is_better: true,
        agg: |r| r.avg_stopped_delay_s_mean,
        raw: |m| m.avg_stopped_delay_s,
    },
    MetricDef {
        name: "total_stops",
        lower_is_better: true,
        agg: |r| r.total_stops_mean,
        raw: |m| m.total_stops as f64,
    },
];

fn classify(
    pcts: &[f64],
    values: &[f64],
    lower_is_better: bool,
    significant: bool,
) -> (f64, Verdict) {
    let rho = stats::spearman(pcts, values);
    let diff = values[values.len() - 1] - values[0];
    let verdict = if !significant || diff == 0.0 {
        Verdict::Flat
    } else if (diff < 0.0) == lower_is_better {
        let rho_improving = if lower_is_better { -rho } else { rho };
        if rho_improving > 1.0 - 1e-9 {
            Verdict::Improving
        } else {
            Verdict::NonMonotoneImproving
        }
    } else {
        Verdict::Degrading
    };
    (rho, verdict)
}

fn grouped_rows(rows: &[AggregateRow]) -> Vec<Vec<&AggregateRow>> {
    let mut groups: Vec<Vec<&AggregateRow>> = Vec::new();
    for row in rows {
        match groups.last_mut() {
            Some(g)
                if g[0].scenario == row.scenario
                    && g[0].duration_s == row.duration_s
                    && g[0].scope == row.scope =>
            {
                g.push(row)
            }
            _ => groups.push(vec![row]),
        }
    }
    groups
}

/// Per-metric trend verdicts for every (scenario, duration, scope) group.
/// `raw` supplies the per-seed endpoint samples for the Welch test; rows
/// must be in [`aggregate`] output order.
pub fn trend_report(
    rows: &[AggregateRow],
    raw: &[RawResult],
) -> Result<Vec<ScenarioTrends>, SweepError> {
    trend_report_inner(rows, Some(raw))
}

/// Trend verdicts from aggregate rows alone (for example a re-read CSV).
/// Without per-seed data there is no Welch test; endpoint significance
/// falls back to any numerically meaningful difference.
pub fn trend_report_from_aggregate(
    rows: &[AggregateRow],
) -> Result<Vec<ScenarioTrends>, SweepError> {
    trend_report_inner(rows, None)
}

fn trend_report_inner(
    rows: &[AggregateRow],
    raw: Option<&[RawResult]>,
) -> Result<Vec<ScenarioTrends>, SweepError> {
    let mut out = Vec::new();
    for group in grouped_rows(rows) {
        if group.len() < 3 {
            return Err(SweepError::Aggregate(format!(
                "scenario {} has {} grid points; trends need at least 3",
                group[0].scenario,
                group.len()
            )));
        }
        let pcts: Vec<f64> = group.iter().map(|r| r.penetration_pct).collect();
        let first = group[0];
        let last = group[group.len() - 1];
        let endpoint_samples = |pct: f64, def: &MetricDef| -> Vec<f64> {
            let mut sample: Vec<(u64, f64)> = raw
                .unwrap()
                .iter()
                .filter(|r| {
                    r.scenario == first.scenario
                        && r.duration_s == first.duration_s
                        && r.scope == first.scope
                        && r.penetration_pct == pct
                })
                .map(|r| (r.seed, (def.raw)(&r.result)))
                .collect();
            sample.sort_by_key(|(seed, _)| *seed);
            sample.into_iter().map(|(_, v)| v).collect()
        };

        let mut metrics = Vec::with_capacity(TREND_METRICS.len());
        for def in TREND_METRICS {
            let values: Vec<f64> = group.iter().map(|r| (def.agg)(r)).collect();
            let baseline_mean = values[0];
            let endpoint_mean = values[values.len() - 1];
            let welch = raw.map(|_| {
                let a = endpoint_samples(first.penetration_pct, def);
                let b = endpoint_samples(last.penetration_pct, def);
                stats::welch_p(&a, &b)
            });
            let significant = match welch {
                Some(p) => p < 0.05,
                None => {
                    (endpoint_mean - baseline_mean).abs()
                        > 1e-9 * baseline_mean.abs().max(1.0)
                }
            };
            let (rho, verdict) = classify(&pcts, &values, def.lower_is_better, significant);
            metrics.push(TrendVerdict {
                metric: def.name,
                spearman_rho: rho,
                baseline_mean,
                endpoint_mean,
                welch_p: welch,
                verdict,
            });
        }
        out.push(ScenarioTrends {
            scenario: first.scenario.clone(),
            duration_s: first.duration_s,
            scope: first.scope,
            metrics,
        });
    }
    Ok(out)
}

/// Human-readable trend report, deterministic for identical inputs.
pub fn render_trends(trends: &[ScenarioTrends]) -> String {
    let mut out = String::new();
    for t in trends {
        out.push_str(&format!(
            "{} | duration {} s | scope {}\n",
            t.scenario, t.duration_s, t.scope
        ));
        for m in &t.metrics {
            let p = match m.welch_p {
                Some(p) => format!("{p:.4}"),
                None => "n/a".into(),
            };
            out.push_str(&format!(
                "  {:<20} {:<23} rho={:+.3}  base={:.6}  end={:.6}  p={}\n",
                m.metric, m.verdict.to_string(), m.spearman_rho, m.baseline_mean, m.endpoint_mean, p
            ));
        }
    }
    out
}
