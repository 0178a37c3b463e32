//! Built-in systems: the two-spin saturation contrast problem, small affine
//! test systems, and the exhaustive pattern search used as ground truth for
//! the dynamic program.

use rand::Rng;

use crate::bounds::{affine_constants, ErrorConstants};
use crate::dynamics::{Pattern, StateBox, SwitchedSystem, VectorField};
use crate::error::{Error, Result};
use crate::grid::{build_successors, Admissibility, GridIndex, StateGrid, SuccessorTable};
use crate::scalar::{norm, Scalar};
use crate::synthesis::TerminalCost;
use crate::{dynamics::Substeps, ModeId};

/// `f(y) = A y + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineField<T> {
    a: Vec<Vec<T>>,
    b: Vec<T>,
}

impl<T: Scalar> AffineField<T> {
    pub fn new(a: Vec<Vec<T>>, b: Vec<T>) -> Result<Self> {
        if a.len() != b.len() || a.iter().any(|r| r.len() != b.len()) {
            return Err(Error::Validation("affine field needs a square matrix matching b".into()));
        }
        Ok(Self { a, b })
    }

    pub fn matrix_f64(&self) -> Vec<Vec<f64>> {
        self.a.iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect()
    }

    pub fn offset_f64(&self) -> Vec<f64> {
        self.b.iter().map(|v| v.as_f64()).collect()
    }

    /// Exact constants on `domain`.
    pub fn constants(&self, domain: &StateBox<T>) -> Result<ErrorConstants<T>> {
        affine_constants(&self.matrix_f64(), &self.offset_f64(), domain)
    }
}

impl<T: Scalar> VectorField<T> for AffineField<T> {
    #[inline]
    fn eval(&self, y: &[T], _w: &[T], dy: &mut [T]) {
        for ((out, row), &bi) in dy.iter_mut().zip(&self.a).zip(&self.b) {
            *out = row.iter().zip(y).fold(bi, |acc, (&aij, &yj)| acc + aij * yj);
        }
    }
}

/// Affine system with one [`AffineField`] per mode, plus its exact constants.
#[derive(Debug, Clone)]
pub struct AffineSystem<T: Scalar> {
    pub system: SwitchedSystem<T>,
    pub fields: Vec<AffineField<T>>,
}

impl<T: Scalar> AffineSystem<T> {
    pub fn new(name: &str, domain: StateBox<T>, tau: T, fields: Vec<(T, AffineField<T>)>) -> Result<Self> {
        let mut params = Vec::new();
        let mut system = SwitchedSystem::new(name, domain, tau)?;
        let mut kept = Vec::new();
        for (i, (control, f)) in fields.into_iter().enumerate() {
            params.extend(f.matrix_f64().into_iter().flatten());
            params.extend(f.offset_f64());
            system = system.with_mode(format!("u{i}"), control, f.clone());
            kept.push(f);
        }
        Ok(Self {
            system: system.with_parameters(params),
            fields: kept,
        })
    }

    pub fn certified_constants(&self) -> Result<Vec<ErrorConstants<T>>> {
        self.fields.iter().map(|f| f.constants(self.system.domain())).collect()
    }
}

/// Physical constants and problem data of the two-spin contrast benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct MriParameters {
    pub omega_max: f64,
    pub t11: f64,
    pub t12: f64,
    pub t21: f64,
    pub t22: f64,
    pub t_big_m: f64,
    pub t_small_m: f64,
    /// Weight of the `||q1||^2` penalty.
    pub alpha: f64,
    /// Weight of the contrast reward.
    pub beta: f64,
    pub tau: f64,
    pub horizon: usize,
    /// Number of control levels, evenly spaced over `[-1, 1]` with both ends.
    pub levels: usize,
}

impl Default for MriParameters {
    fn default() -> Self {
        Self {
            omega_max: 202.95,
            t11: 2.0,
            t12: 0.3,
            t21: 2.5,
            t22: 2.5,
            t_big_m: 26.17,
            t_small_m: 2.0,
            alpha: 0.99,
            beta: 0.01,
            tau: 1.0 / 250.0,
            horizon: 215,
            levels: 30,
        }
    }
}

impl MriParameters {
    /// Transverse relaxation rate of the first spin.
    pub fn big_gamma_1(&self) -> f64 {
        1.0 / (self.t12 * self.omega_max)
    }

    /// Longitudinal relaxation rate of the first spin.
    pub fn small_gamma_1(&self) -> f64 {
        1.0 / (self.t11 * self.omega_max)
    }

    pub fn big_gamma_2(&self) -> f64 {
        1.0 / (self.t22 * self.omega_max)
    }

    pub fn small_gamma_2(&self) -> f64 {
        1.0 / (self.t21 * self.omega_max)
    }

    /// Common factor `2 pi T_m t_m` of all right-hand sides.
    pub fn time_scale(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.t_big_m * self.t_small_m
    }

    pub fn t_end(&self) -> f64 {
        self.tau * self.horizon as f64
    }

    pub fn control_levels(&self) -> Vec<f64> {
        if self.levels == 1 {
            return vec![0.0];
        }
        let n = (self.levels - 1) as f64;
        (0..self.levels).map(|i| -1.0 + 2.0 * i as f64 / n).collect()
    }

    fn as_vec(&self) -> Vec<f64> {
        vec![
            self.omega_max,
            self.t11,
            self.t12,
            self.t21,
            self.t22,
            self.t_big_m,
            self.t_small_m,
            self.alpha,
            self.beta,
        ]
    }
}

/// Two spins `q1 = (y1, z1)`, `q2 = (y2, z2)` over `[-1, 1]^4`, state order
/// `(y1, z1, y2, z2)`, one mode per control level `u`.
#[derive(Debug, Clone)]
pub struct MriBenchmark<T: Scalar> {
    pub params: MriParameters,
    pub affine: AffineSystem<T>,
    pub cost: TerminalCost<T>,
}

/// Field of one control level `u`:
/// `dy_i/dt = c (-Gamma_i y_i - u z_i)`, `dz_i/dt = c (gamma_i (1 - z_i) + u y_i)`.
pub fn mri_field<T: Scalar>(p: &MriParameters, u: f64) -> AffineField<T> {
    let c = p.time_scale();
    let (g1, s1, g2, s2) = (p.big_gamma_1(), p.small_gamma_1(), p.big_gamma_2(), p.small_gamma_2());
    let a = [
        [-c * g1, -c * u, 0.0, 0.0],
        [c * u, -c * s1, 0.0, 0.0],
        [0.0, 0.0, -c * g2, -c * u],
        [0.0, 0.0, c * u, -c * s2],
    ];
    let b = [0.0, c * s1, 0.0, c * s2];
    AffineField::new(
        a.iter().map(|r| r.iter().map(|&v| T::lit(v)).collect()).collect(),
        b.iter().map(|&v| T::lit(v)).collect(),
    )
    .expect("4x4 field")
}

/// Terminal cost `alpha ||q1||^2 - beta ||q2 - q1||^2`, reporting the
/// contrast `||q2||` as figure of merit.
pub fn mri_cost<T: Scalar>(p: &MriParameters) -> TerminalCost<T> {
    let (alpha, beta) = (T::lit(p.alpha), T::lit(p.beta));
    TerminalCost::new(format!("mri(alpha={},beta={})", p.alpha, p.beta), move |y: &[T]| {
        let q1 = y[0] * y[0] + y[1] * y[1];
        let dy = y[2] - y[0];
        let dz = y[3] - y[1];
        alpha * q1 - beta * (dy * dy + dz * dz)
    })
    .with_metric("contrast", |y: &[T]| norm(&y[2..4]))
}

impl<T: Scalar> MriBenchmark<T> {
    pub fn new(params: MriParameters) -> Result<Self> {
        if params.levels == 0 || params.levels > 255 {
            return Err(Error::Validation("between 1 and 255 control levels are supported".into()));
        }
        let domain = StateBox::cube(4, -T::one(), T::one())?;
        let fields = params
            .control_levels()
            .into_iter()
            .map(|u| (T::lit(u), mri_field(&params, u)))
            .collect();
        let mut affine = AffineSystem::new("mri", domain, T::lit(params.tau), fields)?;
        let mut fp = params.as_vec();
        fp.extend_from_slice(affine.system.parameters());
        affine.system = affine.system.clone().with_parameters(fp);
        Ok(Self {
            cost: mri_cost(&params),
            params,
            affine,
        })
    }

    pub fn system(&self) -> &SwitchedSystem<T> {
        &self.affine.system
    }

    pub fn grid(&self, k_per_axis: usize) -> Result<StateGrid<T>> {
        StateGrid::new(self.affine.system.domain().clone(), k_per_axis)
    }

    /// `q1(0) = (0, 1)` and the given `q2(0)`.
    pub fn initial_state(&self, q2: [f64; 2]) -> Vec<T> {
        vec![T::zero(), T::one(), T::lit(q2[0]), T::lit(q2[1])]
    }

    pub fn certified_constants(&self) -> Result<Vec<ErrorConstants<T>>> {
        self.affine.certified_constants()
    }
}

/// `dy/dt = -y` on `[-1, 1]`, one mode.
pub fn scalar_decay<T: Scalar>(tau: T) -> Result<AffineSystem<T>> {
    let f = AffineField::new(vec![vec![-T::one()]], vec![T::zero()])?;
    AffineSystem::new("decay", StateBox::cube(1, -T::one(), T::one())?, tau, vec![(T::zero(), f)])
}

/// `dy/dt = -y + u`, `u in {-1, 0, 1}`, on `[-1, 1]`.
pub fn toy_1d<T: Scalar>(tau: T) -> Result<AffineSystem<T>> {
    let fields = [-1.0, 0.0, 1.0]
        .into_iter()
        .map(|u| Ok((T::lit(u), AffineField::new(vec![vec![-T::one()]], vec![T::lit(u)])?)))
        .collect::<Result<Vec<_>>>()?;
    AffineSystem::new("toy-1d", StateBox::cube(1, -T::one(), T::one())?, tau, fields)
}

/// Random affine system on `[-1, 1]^dim` whose modes all have a negative
/// definite symmetric part: `A = -(s I + G G^T) + r K` with `K` skew, and an
/// offset pulling towards a random point of the box.
pub fn random_contractive_affine<R: Rng>(rng: &mut R, dim: usize, modes: usize, tau: f64) -> Result<AffineSystem<f64>> {
    let mut fields = Vec::with_capacity(modes);
    for i in 0..modes {
        let s = rng.gen_range(0.3..2.0);
        let g: Vec<Vec<f64>> = (0..dim).map(|_| (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect();
        let r = rng.gen_range(-1.0..1.0);
        let mut a = vec![vec![0.0; dim]; dim];
        for p in 0..dim {
            for q in 0..dim {
                let ggt: f64 = (0..dim).map(|l| g[p][l] * g[q][l]).sum();
                let skew = if p < q { r } else if p > q { -r } else { 0.0 };
                a[p][q] = -ggt + skew - if p == q { s } else { 0.0 };
            }
        }
        let target: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.6..0.6)).collect();
        let b: Vec<f64> = (0..dim).map(|p| -(0..dim).map(|q| a[p][q] * target[q]).sum::<f64>()).collect();
        fields.push((i as f64, AffineField::new(a, b)?));
    }
    AffineSystem::new("random-affine", StateBox::cube(dim, -1.0, 1.0)?, tau, fields)
}

/// A small problem on which every pattern can be enumerated.
#[derive(Debug, Clone)]
pub struct OracleInstance<T: Scalar> {
    pub table: SuccessorTable,
    pub grid: StateGrid<T>,
    pub cost: TerminalCost<T>,
    pub horizon: usize,
    pub start: GridIndex,
    pub tau: T,
}

impl<T: Scalar> OracleInstance<T> {
    /// Instance built from a system's successor graph.
    pub fn from_system(
        system: &SwitchedSystem<T>,
        grid: StateGrid<T>,
        substeps: &Substeps,
        cost: TerminalCost<T>,
        horizon: usize,
        start: GridIndex,
    ) -> Result<Self> {
        let table = build_successors(system, &grid, substeps, Admissibility::Endpoint)?;
        Ok(Self {
            table,
            grid,
            cost,
            horizon,
            start,
            tau: system.tau(),
        })
    }
}

/// Largest number of patterns [`brute_force_optimal`] will enumerate.
pub const ENUMERATION_CAP: u128 = 100_000;

/// Enumerates all of `U^k` in lexicographic order through the successor
/// graph and returns the first pattern of minimal terminal cost.
pub fn brute_force_optimal<T: Scalar>(inst: &OracleInstance<T>) -> Result<(Pattern<T>, T)> {
    let m = inst.table.mode_count();
    let total = (m as u128).checked_pow(inst.horizon as u32).unwrap_or(u128::MAX);
    if total > ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            patterns: total,
            cap: ENUMERATION_CAP,
        });
    }
    let mut best: Option<(Vec<ModeId>, T)> = None;
    let mut prefix = Vec::with_capacity(inst.horizon);
    enumerate(inst, inst.start, &mut prefix, &mut best);
    let (modes, value) = best.ok_or_else(|| Error::InvarianceViolation {
        cells: vec![inst.start.index()],
    })?;
    Ok((Pattern::new(modes, inst.tau), value))
}

fn enumerate<T: Scalar>(
    inst: &OracleInstance<T>,
    z: GridIndex,
    prefix: &mut Vec<ModeId>,
    best: &mut Option<(Vec<ModeId>, T)>,
) {
    if prefix.len() == inst.horizon {
        let v = inst.cost.eval(&inst.grid.center(z));
        if best.as_ref().is_none_or(|(_, b)| v < *b) {
            *best = Some((prefix.clone(), v));
        }
        return;
    }
    for u in 0..inst.table.mode_count() {
        if let Some(next) = inst.table.next(z, ModeId(u)) {
            prefix.push(ModeId(u));
            enumerate(inst, next, prefix, best);
            prefix.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::euler_step;

    #[test]
    fn mri_undriven_saturated_state_is_equilibrium() {
        let p = MriParameters::default();
        let f: AffineField<f64> = mri_field(&p, 0.0);
        let mut dy = [1.0; 4];
        f.eval(&[0.0, 1.0, 0.0, 1.0], &[], &mut dy);
        assert_eq!(dy, [0.0; 4]);
    }

    #[test]
    fn mri_euler_step_at_full_field() {
        // u = 1 at q1 = q2 = (0, 1): only the rotation terms act.
        let bench = MriBenchmark::<f64>::new(MriParameters::default()).unwrap();
        let top = ModeId(29);
        assert_eq!(bench.system().mode(top).control, 1.0);
        let y = euler_step(bench.system(), &[0.0, 1.0, 0.0, 1.0], top, 1.0 / 250.0).unwrap();
        let expect_y = -1.315_447_675_911_118_2;
        assert!((y[0] - expect_y).abs() < 1e-12);
        assert!((y[2] - expect_y).abs() < 1e-12);
        assert_eq!(y[1], 1.0);
        assert_eq!(y[3], 1.0);
    }

    #[test]
    fn mri_derived_constants() {
        let p = MriParameters::default();
        assert!((p.time_scale() - 328.861_918_977_779_56).abs() < 1e-9);
        assert!((p.big_gamma_1() - 0.016_424_406_668_309_107).abs() < 1e-15);
        assert!((p.small_gamma_1() - 0.002_463_661_000_246_366).abs() < 1e-15);
        assert!((p.big_gamma_2() - 0.001_970_928_800_197_092_9).abs() < 1e-15);
        assert!((p.t_end() - 0.86).abs() < 1e-12);
        let levels = p.control_levels();
        assert_eq!(levels.len(), 30);
        assert_eq!(levels[0], -1.0);
        assert_eq!(levels[29], 1.0);
        assert!((levels[1] - levels[0] - 2.0 / 29.0).abs() < 1e-15);
    }

    #[test]
    fn mri_grid_and_cost() {
        let bench = MriBenchmark::<f64>::new(MriParameters::default()).unwrap();
        let g = bench.grid(10).unwrap();
        assert_eq!(g.len(), 10_000);
        assert!((g.eps() - 0.2).abs() < 1e-15);
        let end = [0.0, 0.0, 0.6567, -0.2558];
        let contrast = (0.6567f64 * 0.6567 + 0.2558 * 0.2558).sqrt();
        assert!((bench.cost.eval(&end) + 0.01 * contrast * contrast).abs() < 1e-15);
        assert!((bench.cost.metric(&end).unwrap() - 0.7048).abs() < 1e-4);
    }

    #[test]
    fn mri_modes_contract() {
        let bench = MriBenchmark::<f64>::new(MriParameters::default()).unwrap();
        let cs = bench.certified_constants().unwrap();
        let c = MriParameters::default().time_scale();
        for k in &cs {
            assert!((k.osl + c * MriParameters::default().big_gamma_2()).abs() < 1e-9);
            assert!(k.growth.is_finite() && k.growth > 0.0);
        }
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let sys = toy_1d(0.2).unwrap();
        let grid = StateGrid::new(sys.system.domain().clone(), 5).unwrap();
        let inst = OracleInstance::from_system(
            &sys.system,
            grid,
            &Substeps::uniform(3, 1),
            TerminalCost::distance_to(vec![0.5]),
            11,
            GridIndex(0),
        )
        .unwrap();
        assert!(matches!(brute_force_optimal(&inst), Err(Error::EnumerationCap { .. })));
    }

    #[test]
    fn brute_force_zero_horizon() {
        let sys = toy_1d(0.2).unwrap();
        let grid = StateGrid::new(sys.system.domain().clone(), 5).unwrap();
        let inst = OracleInstance::from_system(
            &sys.system,
            grid.clone(),
            &Substeps::uniform(3, 1),
            TerminalCost::distance_to(vec![0.5]),
            0,
            GridIndex(1),
        )
        .unwrap();
        let (p, v): (_, f64) = brute_force_optimal(&inst).unwrap();
        assert!(p.is_empty());
        assert!((v - (0.5 - grid.center(GridIndex(1))[0]).abs()).abs() < 1e-15);
    }
}
