//! Receding-horizon variant: apply only the first mode of the optimal pattern
//! at the current state's representative, advance the true state, re-plan.
//!
//! The first mode of the optimal pattern of length `j` at `z` is
//! `policy[j][z]`, so a single backward pass serves every re-plan.

use std::io::Write;
use std::time::Instant;

use crate::bounds::ErrorConstants;
use crate::dynamics::{simulate_pattern, ModeId, Pattern, SwitchedSystem, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{GridIndex, StateGrid};
use crate::scalar::Scalar;
use crate::synthesis::{Plan, SynthesisOptions, TerminalCost};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplanEntry {
    pub step: usize,
    pub cell: GridIndex,
    pub horizon: usize,
    pub mode: ModeId,
}

#[derive(Debug, Clone)]
pub struct RecedingRunResult<T> {
    pub applied_modes: Pattern<T>,
    pub trajectory: Trajectory<T>,
    pub value: T,
    pub metric: Option<T>,
    pub replan_count: usize,
    pub log: Vec<ReplanEntry>,
}

impl<T: Scalar> Plan<T> {
    /// Receding-horizon run from `y0` over the plan's horizon.
    pub fn receding(&self, y0: &[T]) -> Result<RecedingRunResult<T>> {
        let k = self.horizon();
        let tau = self.system.tau();
        if !self.system.domain().contains(y0) {
            return Err(Error::OutOfDomain {
                state: y0.iter().map(|v| v.as_f64()).collect(),
            });
        }
        let mut trajectory = simulate_pattern(&self.system, y0, &Pattern::empty(tau), &self.substeps, None)?;
        let mut log = Vec::with_capacity(k);
        let mut y = y0.to_vec();
        for n in 0..k {
            let z = self.grid.representative(&y)?;
            let horizon = k - n;
            let u = self.policy.at(horizon, z).ok_or_else(|| {
                if self.successors.admissible(z).is_err() {
                    Error::InvarianceViolation { cells: vec![z.index()] }
                } else {
                    Error::Internal(format!("no finite-cost continuation from cell {} at horizon {horizon}", z.0))
                }
            })?;
            log.push(ReplanEntry {
                step: n,
                cell: z,
                horizon,
                mode: u,
            });
            let seg = simulate_pattern(&self.system, &y, &Pattern::new(vec![u], tau), &self.substeps, None)?;
            let t0 = tau * T::lit(n as f64);
            let last = seg.states.len() - 1;
            for (i, (t, s)) in seg.times.iter().zip(&seg.states).enumerate().skip(1) {
                let time = if i == last { tau * T::lit((n + 1) as f64) } else { t0 + *t };
                trajectory.times.push(time);
                trajectory.states.push(s.clone());
            }
            trajectory.controls.push(u);
            trajectory.segment_ends.push(trajectory.states.len() - 1);
            y.copy_from_slice(seg.endpoint());
        }
        let applied = Pattern::new(trajectory.controls.clone(), tau);
        Ok(RecedingRunResult {
            value: self.cost.eval(&y),
            metric: self.cost.metric(&y),
            applied_modes: applied,
            trajectory,
            replan_count: k,
            log,
        })
    }
}

/// Builds a [`Plan`] and runs the receding-horizon variant from `y0`.
pub fn run_receding<T: Scalar>(
    system: &SwitchedSystem<T>,
    grid: StateGrid<T>,
    cost: TerminalCost<T>,
    k: usize,
    y0: &[T],
    constants: &[ErrorConstants<T>],
    options: &SynthesisOptions,
) -> Result<RecedingRunResult<T>> {
    Plan::build(system, grid, cost, k, constants, options)?.receding(y0)
}

/// CSV `n,cell,horizon,mode`.
pub fn write_replan_log<W: Write>(mut out: W, log: &[ReplanEntry]) -> std::io::Result<()> {
    writeln!(out, "n,cell,horizon,mode")?;
    for e in log {
        writeln!(out, "{},{},{},{}", e.step, e.cell.0, e.horizon, e.mode)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Robust,
    Receding,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Robust => "robust",
            Method::Receding => "receding",
        }
    }

    pub fn is_robust(self) -> bool {
        matches!(self, Method::Robust)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow<T> {
    pub method: Method,
    pub k_per_axis: usize,
    pub initial_state: Vec<T>,
    pub value: T,
    pub metric: Option<T>,
    /// Robust rows only: the same pattern simulated from the initial state
    /// itself rather than from its representative.
    pub achieved_value: Option<T>,
    pub achieved_metric: Option<T>,
    pub pattern: Vec<ModeId>,
    pub endpoint: Vec<T>,
    /// Shared plan construction plus the method's own run.
    pub wall_seconds: f64,
}

/// Runs both methods from every initial state on one shared plan.
pub fn compare_robust_vs_receding<T: Scalar>(plan: &Plan<T>, initial_states: &[Vec<T>]) -> Result<Vec<ComparisonRow<T>>> {
    let mut rows = Vec::with_capacity(2 * initial_states.len());
    for y0 in initial_states {
        let started = Instant::now();
        let robust = plan.robust(y0)?;
        rows.push(ComparisonRow {
            method: Method::Robust,
            k_per_axis: plan.grid.k_per_axis(),
            initial_state: y0.clone(),
            value: robust.value,
            metric: robust.metric,
            achieved_value: Some(robust.achieved_value),
            achieved_metric: robust.achieved_metric,
            endpoint: robust.trajectory.endpoint().to_vec(),
            pattern: robust.pattern.modes,
            wall_seconds: plan.build_seconds + started.elapsed().as_secs_f64(),
        });
        let started = Instant::now();
        let variant = plan.receding(y0)?;
        rows.push(ComparisonRow {
            method: Method::Receding,
            k_per_axis: plan.grid.k_per_axis(),
            initial_state: y0.clone(),
            value: variant.value,
            metric: variant.metric,
            achieved_value: None,
            achieved_metric: None,
            endpoint: variant.trajectory.endpoint().to_vec(),
            pattern: variant.applied_modes.modes,
            wall_seconds: plan.build_seconds + started.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}
