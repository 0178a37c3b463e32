//! Backward dynamic programming over the successor graph, extraction of
//! approximate optimal patterns, and numerical checks of robustness and
//! convergence.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{check_hypothesis, ErrorConstants, HypothesisReport, Provenance};
use crate::dynamics::{reference_solve, simulate_pattern, ModeId, Pattern, Substeps, SwitchedSystem, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{build_successors, cache_key, cached_successors, Admissibility, GridIndex, StateGrid, SuccessorTable};
use crate::scalar::{distance, Scalar};

type CostFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// Terminal cost `J(y)` evaluated at the end of the horizon, with an optional
/// figure of merit reported alongside it.
#[derive(Clone)]
pub struct TerminalCost<T> {
    label: String,
    eval: CostFn<T>,
    metric: Option<(String, CostFn<T>)>,
}

impl<T: Scalar> TerminalCost<T> {
    pub fn new(label: impl Into<String>, f: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            eval: Arc::new(f),
            metric: None,
        }
    }

    /// `||y - target||`.
    pub fn distance_to(target: Vec<T>) -> Self {
        let label = format!("distance-to{target:?}");
        Self::new(label, move |y| distance(y, &target))
    }

    pub fn with_metric(mut self, label: impl Into<String>, f: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        self.metric = Some((label.into(), Arc::new(f)));
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, y: &[T]) -> T {
        (self.eval)(y)
    }

    pub fn metric_label(&self) -> Option<&str> {
        self.metric.as_ref().map(|(l, _)| l.as_str())
    }

    pub fn metric(&self, y: &[T]) -> Option<T> {
        self.metric.as_ref().map(|(_, f)| f(y))
    }
}

impl<T> std::fmt::Debug for TerminalCost<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TerminalCost").field("label", &self.label).finish_non_exhaustive()
    }
}

/// `v_j` over all grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable<T> {
    pub step: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> ValueTable<T> {
    pub fn at(&self, z: GridIndex) -> T {
        self.values[z.index()]
    }
}

/// Metadata persisted with a policy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyHeader {
    pub system_hash: String,
    pub k_per_axis: usize,
    pub horizon: usize,
    pub tau: f64,
    pub cost_label: String,
    pub provenance: Option<Provenance>,
}

const NO_MODE: u8 = u8::MAX;

/// `policy[j][z]`: first mode of the optimal pattern of length `j` from `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    horizon: usize,
    cells: usize,
    data: Vec<u8>,
    pub header: PolicyHeader,
}

impl PolicyTable {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn cell_count(&self) -> usize {
        self.cells
    }

    /// Optimal first mode at horizon `j` (`1 <= j <= k`), `None` when no
    /// finite-cost continuation exists from `z`.
    pub fn at(&self, j: usize, z: GridIndex) -> Option<ModeId> {
        assert!(j >= 1 && j <= self.horizon, "horizon {j} outside 1..={}", self.horizon);
        let b = self.data[(j - 1) * self.cells + z.index()];
        (b != NO_MODE).then_some(ModeId(b as usize))
    }

    const MAGIC: &'static [u8; 8] = b"RSPOLICY";

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(Self::MAGIC)?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        out.write_all(&(self.horizon as u64).to_le_bytes())?;
        out.write_all(&(self.cells as u64).to_le_bytes())?;
        out.write_all(&self.data)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Format("not a policy file".into()));
        }
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4)?;
        let hlen = u32::from_le_bytes(b4) as usize;
        if hlen > 1 << 20 {
            return Err(Error::Format("policy header too large".into()));
        }
        let mut hbuf = vec![0u8; hlen];
        input.read_exact(&mut hbuf)?;
        let header: PolicyHeader = serde_json::from_slice(&hbuf).map_err(|e| Error::Format(e.to_string()))?;
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8)?;
        let horizon = u64::from_le_bytes(b8) as usize;
        input.read_exact(&mut b8)?;
        let cells = u64::from_le_bytes(b8) as usize;
        let mut data = Vec::new();
        input.read_to_end(&mut data)?;
        if data.len() != horizon * cells {
            return Err(Error::Format("policy payload has the wrong size".into()));
        }
        Ok(Self {
            horizon,
            cells,
            data,
            header,
        })
    }
}

/// Treatment of grid points without admissible modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeadCells {
    /// Fail as soon as one exists.
    #[default]
    Reject,
    /// Give them infinite value; fail only if a pattern walks into one.
    Tolerate,
}

/// Backward recursion `v_j(z) = min_{u in Adm(z)} v_{j-1}(next^u(z))` from
/// `v_0(z) = cost(center(z))`, keeping the argmin (lowest mode on ties).
pub fn value_iteration<T: Scalar>(
    table: &SuccessorTable,
    grid: &StateGrid<T>,
    cost: &TerminalCost<T>,
    k: usize,
) -> Result<(ValueTable<T>, PolicyTable)> {
    value_iteration_with(table, grid, cost, k, DeadCells::Reject)
}

pub fn value_iteration_with<T: Scalar>(
    table: &SuccessorTable,
    grid: &StateGrid<T>,
    cost: &TerminalCost<T>,
    k: usize,
    dead: DeadCells,
) -> Result<(ValueTable<T>, PolicyTable)> {
    let n = grid.len();
    if table.cell_count() != n {
        return Err(Error::Validation(format!(
            "successor table has {} cells, grid has {n}",
            table.cell_count()
        )));
    }
    if table.mode_count() >= NO_MODE as usize {
        return Err(Error::Validation("policy storage supports at most 255 modes".into()));
    }
    if dead == DeadCells::Reject && k > 0 && !table.invariance_violations().is_empty() {
        return Err(Error::InvarianceViolation {
            cells: table.invariance_violations().iter().map(|z| z.index()).collect(),
        });
    }
    let mut values: Vec<T> = (0..n)
        .into_par_iter()
        .map(|z| cost.eval(&grid.center(GridIndex(z as u32))))
        .collect();
    if let Some(z) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("terminal cost is not finite at cell {z}")));
    }
    let mut data = vec![NO_MODE; k * n];
    for j in 1..=k {
        let prev = &values;
        let step: Vec<(T, u8)> = (0..n)
            .into_par_iter()
            .map(|z| {
                let mut best = T::infinity();
                let mut arg = NO_MODE;
                for (u, &e) in table.row(GridIndex(z as u32)).iter().enumerate() {
                    if e == u32::MAX {
                        continue;
                    }
                    let v = prev[e as usize];
                    if v < best {
                        best = v;
                        arg = u as u8;
                    }
                }
                (best, arg)
            })
            .collect();
        let slice = &mut data[(j - 1) * n..j * n];
        values = step
            .into_iter()
            .zip(slice.iter_mut())
            .map(|((v, a), slot)| {
                *slot = a;
                v
            })
            .collect();
    }
    Ok((
        ValueTable { step: k, values },
        PolicyTable {
            horizon: k,
            cells: n,
            data,
            header: PolicyHeader {
                horizon: k,
                k_per_axis: grid.k_per_axis(),
                cost_label: cost.label().to_string(),
                ..PolicyHeader::default()
            },
        },
    ))
}

/// Walks the successor graph from `z0` following the policy, giving the
/// approximate optimal pattern of length `policy.horizon()`.
pub fn extract_pattern<T: Scalar>(
    policy: &PolicyTable,
    table: &SuccessorTable,
    z0: GridIndex,
    tau: T,
) -> Result<Pattern<T>> {
    extract_pattern_with_cells(policy, table, z0, tau).map(|(p, _)| p)
}

/// Like [`extract_pattern`], also returning the visited grid points `z_0..z_k`.
pub fn extract_pattern_with_cells<T: Scalar>(
    policy: &PolicyTable,
    table: &SuccessorTable,
    z0: GridIndex,
    tau: T,
) -> Result<(Pattern<T>, Vec<GridIndex>)> {
    let k = policy.horizon();
    let mut modes = Vec::with_capacity(k);
    let mut cells = Vec::with_capacity(k + 1);
    let mut z = z0;
    cells.push(z);
    for j in (1..=k).rev() {
        let u = policy.at(j, z).ok_or_else(|| {
            if table.admissible(z).is_err() {
                Error::InvarianceViolation { cells: vec![z.index()] }
            } else {
                Error::Internal(format!("no finite-cost continuation from cell {} at horizon {j}", z.0))
            }
        })?;
        z = table
            .next(z, u)
            .ok_or_else(|| Error::Internal(format!("policy chose inadmissible mode {u} at cell {}", z.0)))?;
        modes.push(u);
        cells.push(z);
    }
    Ok((Pattern::new(modes, tau), cells))
}

/// Options shared by the synthesis front ends.
#[derive(Debug, Clone, Default)]
pub struct SynthesisOptions {
    /// Proceed even when (H) fails for some mode.
    pub force: bool,
    pub admissibility: Admissibility,
    /// Directory for persisted successor tables.
    pub cache_dir: Option<PathBuf>,
}

/// Everything computed once per (system, grid, cost, horizon): the (H)
/// check with its subsampling, the successor graph and the policy.
#[derive(Debug, Clone)]
pub struct Plan<T: Scalar> {
    pub system: SwitchedSystem<T>,
    pub grid: StateGrid<T>,
    pub cost: TerminalCost<T>,
    pub hypothesis: HypothesisReport<T>,
    pub substeps: Substeps,
    pub successors: SuccessorTable,
    pub values: ValueTable<T>,
    pub policy: PolicyTable,
    pub cache_hit: bool,
    pub build_seconds: f64,
}

impl<T: Scalar> Plan<T> {
    pub fn build(
        system: &SwitchedSystem<T>,
        grid: StateGrid<T>,
        cost: TerminalCost<T>,
        k: usize,
        constants: &[ErrorConstants<T>],
        options: &SynthesisOptions,
    ) -> Result<Self> {
        let started = Instant::now();
        system.validate()?;
        if grid.bounds() != system.domain() {
            return Err(Error::Validation("grid must partition the system's domain box".into()));
        }
        let hypothesis = check_hypothesis(system, constants, grid.eps())?;
        if !hypothesis.satisfied() {
            if options.force {
                log::warn!("proceeding despite (H) violation: {}", hypothesis.into_error());
            } else {
                return Err(hypothesis.into_error());
            }
        }
        let substeps = hypothesis.substeps();
        let (successors, cache_hit) = match &options.cache_dir {
            Some(dir) => cached_successors(dir, system, &grid, &substeps, options.admissibility)?,
            None => (build_successors(system, &grid, &substeps, options.admissibility)?, false),
        };
        let (values, mut policy) = value_iteration_with(&successors, &grid, &cost, k, DeadCells::Tolerate)?;
        policy.header = PolicyHeader {
            system_hash: cache_key(system, grid.k_per_axis(), &substeps, options.admissibility),
            k_per_axis: grid.k_per_axis(),
            horizon: k,
            tau: system.tau().as_f64(),
            cost_label: cost.label().to_string(),
            provenance: Some(hypothesis.provenance),
        };
        Ok(Self {
            system: system.clone(),
            grid,
            cost,
            hypothesis,
            substeps,
            successors,
            values,
            policy,
            cache_hit,
            build_seconds: started.elapsed().as_secs_f64(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.policy.horizon()
    }

    /// Robust synthesis from `y0`: the pattern of its representative, simulated
    /// from the representative and from `y0` itself.
    pub fn robust(&self, y0: &[T]) -> Result<SynthesisResult<T>> {
        let z0 = self.grid.representative(y0)?;
        let (pattern, cells) = extract_pattern_with_cells(&self.policy, &self.successors, z0, self.system.tau())?;
        let center = self.grid.center(z0);
        let domain = self.system.domain();
        let trajectory = simulate_pattern(&self.system, &center, &pattern, &self.substeps, Some(domain))?;
        let achieved_trajectory = simulate_pattern(&self.system, y0, &pattern, &self.substeps, Some(domain))?;
        let value = self.cost.eval(trajectory.endpoint());
        let achieved_value = self.cost.eval(achieved_trajectory.endpoint());
        Ok(SynthesisResult {
            metric: self.cost.metric(trajectory.endpoint()),
            achieved_metric: self.cost.metric(achieved_trajectory.endpoint()),
            pattern,
            value,
            trajectory,
            achieved_value,
            achieved_trajectory,
            grid_value: self.values.at(z0),
            cells,
            start_cell: z0,
            eps: self.grid.eps(),
            provenance: self.hypothesis.provenance,
            hypothesis_satisfied: self.hypothesis.satisfied(),
        })
    }
}

/// Outcome of robust synthesis for one initial state.
#[derive(Debug, Clone)]
pub struct SynthesisResult<T> {
    pub pattern: Pattern<T>,
    /// Terminal cost of the Euler trajectory from the representative.
    pub value: T,
    /// Euler trajectory of the pattern from the representative of `y0`.
    pub trajectory: Trajectory<T>,
    /// Terminal cost of the Euler trajectory from `y0` itself.
    pub achieved_value: T,
    pub achieved_trajectory: Trajectory<T>,
    /// `v_k^eps` at the representative.
    pub grid_value: T,
    /// Grid points visited by the pattern, `z_0 ..= z_k`.
    pub cells: Vec<GridIndex>,
    pub start_cell: GridIndex,
    pub metric: Option<T>,
    pub achieved_metric: Option<T>,
    pub eps: T,
    pub provenance: Provenance,
    pub hypothesis_satisfied: bool,
}

/// Builds a [`Plan`] and runs robust synthesis from `y0`.
pub fn synthesize<T: Scalar>(
    system: &SwitchedSystem<T>,
    grid: StateGrid<T>,
    cost: TerminalCost<T>,
    k: usize,
    y0: &[T],
    constants: &[ErrorConstants<T>],
    options: &SynthesisOptions,
) -> Result<SynthesisResult<T>> {
    Plan::build(system, grid, cost, k, constants, options)?.robust(y0)
}

/// Deviations of exact solutions from two same-cell initial states to the
/// Euler trajectory of the cell center.
#[derive(Debug, Clone)]
pub struct RobustnessReport<T> {
    pub cell: GridIndex,
    pub eps: T,
    /// Largest `||Y_{n tau, y_i} - Euler_{n tau, z}||` over segment boundaries.
    pub max_deviation: [T; 2],
    /// Terminal cost of the exact solutions.
    pub values: [T; 2],
    /// Terminal cost of the Euler trajectory from the center.
    pub center_value: T,
    pub value_gap: T,
}

impl<T: Scalar> RobustnessReport<T> {
    pub fn bound_holds(&self) -> bool {
        self.max_deviation.iter().all(|&d| d <= self.eps)
    }

    pub fn values_within_eps(&self) -> bool {
        self.values.iter().all(|&v| (v - self.center_value).abs() <= self.eps)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn verify_robustness<T: Scalar>(
    system: &SwitchedSystem<T>,
    grid: &StateGrid<T>,
    pattern: &Pattern<T>,
    substeps: &Substeps,
    cost: &TerminalCost<T>,
    y1: &[T],
    y2: &[T],
    oracle_tol: T,
) -> Result<RobustnessReport<T>> {
    let z = grid.representative(y1)?;
    if grid.representative(y2)? != z {
        return Err(Error::Validation("initial states must share their representative".into()));
    }
    let center = grid.center(z);
    let approx = simulate_pattern(system, &center, pattern, substeps, None)?;
    let mut max_deviation = [T::zero(); 2];
    let mut values = [T::zero(); 2];
    for (i, y) in [y1, y2].into_iter().enumerate() {
        let exact = reference_solve(system, y, pattern, oracle_tol)?;
        for n in 0..approx.boundary_count() {
            max_deviation[i] = max_deviation[i].max(distance(exact.boundary(n), approx.boundary(n)));
        }
        values[i] = cost.eval(exact.endpoint());
    }
    Ok(RobustnessReport {
        cell: z,
        eps: grid.eps(),
        max_deviation,
        values,
        center_value: cost.eval(approx.endpoint()),
        value_gap: (values[0] - values[1]).abs(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow<T> {
    pub k_per_axis: usize,
    pub eps: T,
    /// Cost of the Euler trajectory of the synthesized pattern from `y0`.
    pub value: T,
    /// Cost of the Euler trajectory from the representative.
    pub center_value: T,
    pub grid_value: T,
}

/// Robust synthesis for each grid resolution in `resolutions`.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study<T: Scalar>(
    system: &SwitchedSystem<T>,
    cost: &TerminalCost<T>,
    k: usize,
    y0: &[T],
    resolutions: &[usize],
    constants: &[ErrorConstants<T>],
    options: &SynthesisOptions,
) -> Result<Vec<ConvergenceRow<T>>> {
    resolutions
        .iter()
        .map(|&kk| {
            let grid = StateGrid::new(system.domain().clone(), kk)?;
            let res = synthesize(system, grid, cost.clone(), k, y0, constants, options)?;
            Ok(ConvergenceRow {
                k_per_axis: kk,
                eps: res.eps,
                value: res.achieved_value,
                center_value: res.value,
                grid_value: res.grid_value,
            })
        })
        .collect()
}

/// CSV `segment,start_t,mode,control_value`, one row per pattern entry.
pub fn write_control_schedule<T: Scalar, W: std::io::Write>(
    mut out: W,
    system: &SwitchedSystem<T>,
    pattern: &Pattern<T>,
) -> std::io::Result<()> {
    writeln!(out, "segment,start_t,mode,control_value")?;
    for (n, &u) in pattern.modes.iter().enumerate() {
        let start = pattern.tau * T::lit(n as f64);
        writeln!(out, "{n},{start},{u},{}", system.mode(u).control)?;
    }
    Ok(())
}
