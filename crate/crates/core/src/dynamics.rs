//! Switched systems `dy/dt = f_u(y, w)`, explicit Euler stepping over mode
//! patterns, and an adaptive Runge-Kutta reference integrator used as a
//! testing oracle.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of a mode in a [`SwitchedSystem`]; dense in `[0, m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModeId(pub usize);

impl ModeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Closed axis-aligned box `[lo, hi]` in `R^M`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBox<T> {
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Scalar> StateBox<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::Validation(format!(
                "box bounds must be non-empty and of equal length (got {} and {})",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::Validation("box requires finite lo < hi on every axis".into()));
        }
        Ok(Self { lo, hi })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: T, hi: T) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[T] {
        &self.lo
    }

    pub fn hi(&self) -> &[T] {
        &self.hi
    }

    pub fn contains(&self, y: &[T]) -> bool {
        y.len() == self.dim()
            && y
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&l, &h))| v >= l && v <= h)
    }

    /// All `2^M` vertices, first axis most significant.
    pub fn vertices(&self) -> Vec<Vec<T>> {
        let m = self.dim();
        (0..1usize << m)
            .map(|mask| {
                (0..m)
                    .map(|i| {
                        if mask >> (m - 1 - i) & 1 == 1 {
                            self.hi[i]
                        } else {
                            self.lo[i]
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Right-hand side of one mode. `w` has the system's disturbance dimension
/// and is all zeros for undisturbed evaluation.
pub trait VectorField<T>: Send + Sync {
    fn eval(&self, y: &[T], w: &[T], dy: &mut [T]);
}

/// Adapter turning a closure into a [`VectorField`].
pub struct FnField<F>(pub F);

impl<T, F> VectorField<T> for FnField<F>
where
    F: Fn(&[T], &[T], &mut [T]) + Send + Sync,
{
    fn eval(&self, y: &[T], w: &[T], dy: &mut [T]) {
        (self.0)(y, w, dy)
    }
}

/// One member of the finite mode set.
#[derive(Clone)]
pub struct Mode<T> {
    pub label: String,
    /// Physical control level this mode stands for (exported in control schedules).
    pub control: T,
    pub field: Arc<dyn VectorField<T>>,
}

impl<T: fmt::Debug> fmt::Debug for Mode<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mode")
            .field("label", &self.label)
            .field("control", &self.control)
            .finish_non_exhaustive()
    }
}

/// A controlled system `dy/dt = f_u(y)` with finitely many modes, a domain box
/// and a sampling period `tau`.
#[derive(Clone, Debug)]
pub struct SwitchedSystem<T: Scalar> {
    name: String,
    domain: StateBox<T>,
    modes: Vec<Mode<T>>,
    tau: T,
    disturbance: Option<StateBox<T>>,
    parameters: Vec<f64>,
}

impl<T: Scalar> SwitchedSystem<T> {
    pub fn new(name: impl Into<String>, domain: StateBox<T>, tau: T) -> Result<Self> {
        if !(tau > T::zero()) || !tau.is_finite() {
            return Err(Error::Validation(format!("time step must be positive, got {tau}")));
        }
        Ok(Self {
            name: name.into(),
            domain,
            modes: Vec::new(),
            tau,
            disturbance: None,
            parameters: Vec::new(),
        })
    }

    pub fn with_mode(
        mut self,
        label: impl Into<String>,
        control: T,
        field: impl VectorField<T> + 'static,
    ) -> Self {
        self.modes.push(Mode {
            label: label.into(),
            control,
            field: Arc::new(field),
        });
        self
    }

    /// Declares the compact disturbance set `W` (as a box).
    pub fn with_disturbance(mut self, set: StateBox<T>) -> Self {
        self.disturbance = Some(set);
        self
    }

    /// Numeric parameters identifying the vector fields; they enter the
    /// content hash used for caching.
    pub fn with_parameters(mut self, params: Vec<f64>) -> Self {
        self.parameters = params;
        self
    }

    pub fn with_tau(mut self, tau: T) -> Result<Self> {
        if !(tau > T::zero()) {
            return Err(Error::Validation(format!("time step must be positive, got {tau}")));
        }
        self.tau = tau;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &StateBox<T> {
        &self.domain
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn modes(&self) -> &[Mode<T>] {
        &self.modes
    }

    pub fn mode(&self, u: ModeId) -> &Mode<T> {
        &self.modes[u.0]
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn mode_ids(&self) -> impl Iterator<Item = ModeId> {
        (0..self.modes.len()).map(ModeId)
    }

    pub fn disturbance(&self) -> Option<&StateBox<T>> {
        self.disturbance.as_ref()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.disturbance.as_ref().map_or(0, StateBox::dim)
    }

    pub fn parameters(&self) -> &[f64] {
        &self.parameters
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Validation(format!("system `{}` has no modes", self.name)));
        }
        if self.modes.len() > 255 {
            return Err(Error::Validation(format!(
                "at most 255 modes are supported, got {}",
                self.modes.len()
            )));
        }
        Ok(())
    }

    pub fn check_mode(&self, u: ModeId) -> Result<()> {
        if u.0 >= self.modes.len() {
            return Err(Error::Validation(format!(
                "mode {u} out of range (system has {} modes)",
                self.modes.len()
            )));
        }
        Ok(())
    }

    /// Undisturbed evaluation of `f_u(y)` into `dy`.
    #[inline]
    pub fn eval(&self, u: ModeId, y: &[T], dy: &mut [T]) {
        const ZEROS: usize = 8;
        let d = self.disturbance_dim();
        if d <= ZEROS {
            let w = [T::zero(); ZEROS];
            self.modes[u.0].field.eval(y, &w[..d], dy);
        } else {
            let w = vec![T::zero(); d];
            self.modes[u.0].field.eval(y, &w, dy);
        }
    }

    pub fn eval_disturbed(&self, u: ModeId, y: &[T], w: &[T], dy: &mut [T]) {
        self.modes[u.0].field.eval(y, w, dy);
    }

    /// Canonical byte encoding of everything that determines the dynamics.
    pub fn fingerprint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(self.name.as_bytes());
        out.push(0);
        out.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        out.extend_from_slice(&(self.modes.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.tau.as_f64().to_bits().to_le_bytes());
        for v in self.domain.lo.iter().chain(&self.domain.hi) {
            out.extend_from_slice(&v.as_f64().to_bits().to_le_bytes());
        }
        for m in &self.modes {
            out.extend_from_slice(m.label.as_bytes());
            out.push(0);
            out.extend_from_slice(&m.control.as_f64().to_bits().to_le_bytes());
        }
        out.extend_from_slice(&(self.parameters.len() as u64).to_le_bytes());
        for p in &self.parameters {
            out.extend_from_slice(&p.to_bits().to_le_bytes());
        }
        out
    }
}

/// Finite mode sequence applied with period `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern<T> {
    pub modes: Vec<ModeId>,
    pub tau: T,
}

impl<T: Scalar> Pattern<T> {
    pub fn new(modes: Vec<ModeId>, tau: T) -> Self {
        Self { modes, tau }
    }

    pub fn empty(tau: T) -> Self {
        Self::new(Vec::new(), tau)
    }

    pub fn repeat(u: ModeId, k: usize, tau: T) -> Self {
        Self::new(vec![u; k], tau)
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Concatenation `self · other`.
    pub fn concat(&self, other: &Pattern<T>) -> Pattern<T> {
        let mut modes = self.modes.clone();
        modes.extend_from_slice(&other.modes);
        Pattern::new(modes, self.tau)
    }

    pub fn horizon(&self) -> T {
        self.tau * T::lit(self.modes.len() as f64)
    }
}

/// Euler sub-iterations per mode used to integrate one period `tau`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substeps(Vec<usize>);

impl Substeps {
    pub fn new(per_mode: Vec<usize>) -> Result<Self> {
        if per_mode.contains(&0) {
            return Err(Error::Validation("substep counts must be at least 1".into()));
        }
        Ok(Self(per_mode))
    }

    pub fn uniform(modes: usize, n: usize) -> Self {
        Self(vec![n.max(1); modes])
    }

    pub fn get(&self, u: ModeId) -> usize {
        self.0[u.0]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Sampled piecewise-linear state path under a piecewise-constant control.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
    /// Mode applied on each `tau` segment.
    pub controls: Vec<ModeId>,
    /// `segment_ends[n]` is the index in `states` of the point at `t = n*tau`.
    pub segment_ends: Vec<usize>,
    /// Index of the first point that left the containment box, if any.
    pub left_box_at: Option<usize>,
}

impl<T: Scalar> Trajectory<T> {
    fn start(y0: Vec<T>) -> Self {
        Self {
            times: vec![T::zero()],
            states: vec![y0],
            controls: Vec::new(),
            segment_ends: vec![0],
            left_box_at: None,
        }
    }

    pub fn endpoint(&self) -> &[T] {
        self.states.last().expect("trajectory has at least one point")
    }

    pub fn end_time(&self) -> T {
        *self.times.last().expect("trajectory has at least one point")
    }

    /// State at `t = n * tau`.
    pub fn boundary(&self, n: usize) -> &[T] {
        &self.states[self.segment_ends[n]]
    }

    pub fn boundary_count(&self) -> usize {
        self.segment_ends.len()
    }

    /// Mode attributed to point `i`; a point on a segment boundary belongs to
    /// the segment it completes, the initial point to the first segment.
    pub fn mode_at_point(&self, i: usize) -> Option<ModeId> {
        if self.controls.is_empty() {
            return None;
        }
        let seg = self.segment_ends.partition_point(|&e| e < i);
        Some(self.controls[seg.saturating_sub(1).min(self.controls.len() - 1)])
    }

    /// CSV with header `t,y1..yM,mode`, one row per stored point.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let dim = self.states.first().map_or(0, Vec::len);
        let mut header = String::from("t");
        for i in 1..=dim {
            header.push_str(&format!(",y{i}"));
        }
        header.push_str(",mode");
        writeln!(out, "{header}")?;
        for (i, (t, y)) in self.times.iter().zip(&self.states).enumerate() {
            write!(out, "{t}")?;
            for v in y {
                write!(out, ",{v}")?;
            }
            match self.mode_at_point(i) {
                Some(u) => writeln!(out, ",{u}")?,
                None => writeln!(out, ",")?,
            }
        }
        Ok(())
    }
}

fn check_finite<T: Scalar>(u: ModeId, y: &[T]) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalDomain {
            mode: u,
            state: y.iter().map(|v| v.as_f64()).collect(),
        })
    }
}

/// One explicit Euler step `y + dt * f_u(y)`.
pub fn euler_step<T: Scalar>(system: &SwitchedSystem<T>, y: &[T], u: ModeId, dt: T) -> Result<Vec<T>> {
    system.check_mode(u)?;
    if !(dt > T::zero()) {
        return Err(Error::Validation(format!("step size must be positive, got {dt}")));
    }
    check_finite(u, y)?;
    let mut dy = vec![T::zero(); y.len()];
    system.eval(u, y, &mut dy);
    check_finite(u, &dy).map_err(|_| Error::NumericalDomain {
        mode: u,
        state: y.iter().map(|v| v.as_f64()).collect(),
    })?;
    Ok(y.iter().zip(&dy).map(|(&a, &b)| a + dt * b).collect())
}

/// Advances `y` in place by `n` Euler steps of size `dt` under mode `u`.
/// `scratch` must have the state dimension. No finiteness checks.
#[inline]
pub fn advance_in_place<T: Scalar>(
    system: &SwitchedSystem<T>,
    u: ModeId,
    y: &mut [T],
    dt: T,
    n: usize,
    scratch: &mut [T],
) {
    let field = &system.modes[u.0].field;
    let d = system.disturbance_dim();
    let w = vec![T::zero(); d];
    for _ in 0..n {
        field.eval(y, &w, scratch);
        for (v, &dv) in y.iter_mut().zip(scratch.iter()) {
            *v = *v + dt * dv;
        }
    }
}

/// Euler image of `y` after one full period `tau` under `u` using `n`
/// sub-iterations.
pub fn euler_period<T: Scalar>(system: &SwitchedSystem<T>, y: &[T], u: ModeId, n: usize) -> Result<Vec<T>> {
    let mut state = y.to_vec();
    let mut scratch = vec![T::zero(); y.len()];
    let dt = system.tau() / T::lit(n as f64);
    advance_in_place(system, u, &mut state, dt, n, &mut scratch);
    check_finite(u, &state)?;
    Ok(state)
}

/// Euler trajectory of `pattern` from `y0`, each period split into
/// `substeps` sub-iterations. If `containment` is given, leaving it is
/// flagged in [`Trajectory::left_box_at`] without aborting.
pub fn simulate_pattern<T: Scalar>(
    system: &SwitchedSystem<T>,
    y0: &[T],
    pattern: &Pattern<T>,
    substeps: &Substeps,
    containment: Option<&StateBox<T>>,
) -> Result<Trajectory<T>> {
    if y0.len() != system.dim() {
        return Err(Error::Validation(format!(
            "initial state has dimension {}, system has {}",
            y0.len(),
            system.dim()
        )));
    }
    if !system.domain().contains(y0) {
        return Err(Error::OutOfDomain {
            state: y0.iter().map(|v| v.as_f64()).collect(),
        });
    }
    let mut traj = Trajectory::start(y0.to_vec());
    let mut y = y0.to_vec();
    let mut dy = vec![T::zero(); y.len()];
    for (seg, &u) in pattern.modes.iter().enumerate() {
        system.check_mode(u)?;
        let n = substeps.get(u);
        let dt = pattern.tau / T::lit(n as f64);
        let t0 = pattern.tau * T::lit(seg as f64);
        for j in 1..=n {
            system.eval(u, &y, &mut dy);
            check_finite(u, &dy).map_err(|_| Error::NumericalDomain {
                mode: u,
                state: y.iter().map(|v| v.as_f64()).collect(),
            })?;
            for (v, &dv) in y.iter_mut().zip(&dy) {
                *v = *v + dt * dv;
            }
            let t = if j == n {
                pattern.tau * T::lit((seg + 1) as f64)
            } else {
                t0 + dt * T::lit(j as f64)
            };
            traj.times.push(t);
            traj.states.push(y.clone());
            if traj.left_box_at.is_none() && containment.is_some_and(|b| !b.contains(&y)) {
                traj.left_box_at = Some(traj.states.len() - 1);
            }
        }
        traj.controls.push(u);
        traj.segment_ends.push(traj.states.len() - 1);
    }
    Ok(traj)
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand-Prince integration of `dy/dt = f_u(y, w(t))` over
/// `[0, t_end]`, local error per step bounded by `tol` (mixed absolute and
/// relative scale). Returns the accepted step points including the endpoint.
pub fn integrate_mode_with<T, W>(
    system: &SwitchedSystem<T>,
    y0: &[T],
    u: ModeId,
    t_end: T,
    tol: T,
    disturbance: W,
) -> Result<Vec<(T, Vec<T>)>>
where
    T: Scalar,
    W: Fn(T) -> Vec<T>,
{
    system.check_mode(u)?;
    if !(tol > T::zero()) {
        return Err(Error::Validation(format!("tolerance must be positive, got {tol}")));
    }
    if t_end < T::zero() {
        return Err(Error::Validation("integration time must be non-negative".into()));
    }
    let dim = y0.len();
    let mut out = vec![(T::zero(), y0.to_vec())];
    if t_end == T::zero() {
        return Ok(out);
    }
    let field = &system.mode(u).field;
    let rhs = |t: T, y: &[T], dy: &mut [T]| field.eval(y, &disturbance(t), dy);

    let mut t = T::zero();
    let mut y = y0.to_vec();
    let mut k = vec![vec![T::zero(); dim]; 7];
    let mut stage = vec![T::zero(); dim];
    let mut y5 = vec![T::zero(); dim];
    let mut h = (t_end * T::lit(1e-3)).max(T::epsilon());
    let min_h = t_end * T::lit(1e-14);
    rhs(t, &y, &mut k[0]);
    let mut steps = 0usize;
    while t < t_end {
        steps += 1;
        if steps > 50_000_000 {
            return Err(Error::OracleFailure("step budget exhausted".into()));
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        for s in 1..7 {
            for i in 0..dim {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc = acc + h * T::lit(DP_A[s][j]) * kj[i];
                }
                stage[i] = acc;
            }
            let (_, tail) = k.split_at_mut(s);
            rhs(t + h * T::lit(DP_C[s]), &stage, &mut tail[0]);
        }
        let mut err = T::zero();
        for i in 0..dim {
            let mut hi = y[i];
            let mut lo = y[i];
            for s in 0..7 {
                hi = hi + h * T::lit(DP_B5[s]) * k[s][i];
                lo = lo + h * T::lit(DP_B4[s]) * k[s][i];
            }
            y5[i] = hi;
            let scale = tol * T::one().max(y[i].abs()).max(hi.abs());
            err = err.max((hi - lo).abs() / scale);
        }
        if !err.is_finite() {
            return Err(Error::OracleFailure(format!("non-finite error estimate at t={t}")));
        }
        if err <= T::one() {
            t = if last { t_end } else { t + h };
            y.copy_from_slice(&y5);
            // FSAL: last stage is f at the new point.
            let (first, rest) = k.split_at_mut(6);
            first[0].copy_from_slice(&rest[0]);
            out.push((t, y.clone()));
        }
        let factor = if err == T::zero() {
            T::lit(5.0)
        } else {
            (T::lit(0.9) * err.powf(T::lit(-0.2))).min(T::lit(5.0)).max(T::lit(0.2))
        };
        h = h * factor;
        if h < min_h && t < t_end {
            return Err(Error::OracleFailure(format!("step size underflow at t={t}")));
        }
    }
    Ok(out)
}

/// Undisturbed reference solution of a single mode at time `t_end`.
pub fn integrate_mode<T: Scalar>(
    system: &SwitchedSystem<T>,
    y0: &[T],
    u: ModeId,
    t_end: T,
    tol: T,
) -> Result<Vec<T>> {
    let d = system.disturbance_dim();
    let pts = integrate_mode_with(system, y0, u, t_end, tol, |_| vec![T::zero(); d])?;
    Ok(pts.into_iter().last().expect("non-empty").1)
}

/// High-accuracy solution of the piecewise system under `pattern`. Only used
/// to check the Euler scheme, never by synthesis.
pub fn reference_solve<T: Scalar>(
    system: &SwitchedSystem<T>,
    y0: &[T],
    pattern: &Pattern<T>,
    tol: T,
) -> Result<Trajectory<T>> {
    if y0.len() != system.dim() {
        return Err(Error::Validation("initial state dimension mismatch".into()));
    }
    let d = system.disturbance_dim();
    let mut traj = Trajectory::start(y0.to_vec());
    let mut y = y0.to_vec();
    for (seg, &u) in pattern.modes.iter().enumerate() {
        let t0 = pattern.tau * T::lit(seg as f64);
        let pts = integrate_mode_with(system, &y, u, pattern.tau, tol, |_| vec![T::zero(); d])?;
        let count = pts.len();
        for (i, (t, state)) in pts.into_iter().enumerate().skip(1) {
            let time = if i + 1 == count {
                pattern.tau * T::lit((seg + 1) as f64)
            } else {
                t0 + t
            };
            traj.times.push(time);
            traj.states.push(state);
        }
        y.copy_from_slice(traj.endpoint());
        traj.controls.push(u);
        traj.segment_ends.push(traj.states.len() - 1);
    }
    Ok(traj)
}
