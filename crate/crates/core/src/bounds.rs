//! Guaranteed error radii for the explicit Euler scheme.
//!
//! Given the Lipschitz constant `L_u`, the growth constant
//! `C_u = L_u * sup ||f_u||` and the one-sided Lipschitz (OSL) constant
//! `lambda_u` of a mode, [`delta`] bounds the distance between the exact
//! solution started in a ball of radius `mu` and the Euler approximation
//! started at the ball's center. For contracting modes,
//! [`contraction_certificate`] gives the largest step for which the ball does
//! not grow, and [`subsample_count`] splits a sampling period accordingly.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ModeId, StateBox, Substeps, SwitchedSystem};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `|lambda| < OSL_SNAP` selects the `lambda = 0` formula.
pub const OSL_SNAP: f64 = 1e-12;

/// Default relative inflation applied to sampled constants.
pub const DEFAULT_MARGIN: f64 = 0.05;

/// Where a set of constants came from. Guarantees derived from sampled
/// constants are not certified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    CertifiedByUser,
    SampledEstimate,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::CertifiedByUser => "certified-by-user",
            Provenance::SampledEstimate => "sampled-estimate",
        }
    }

    /// Weakest of two provenances.
    pub fn combine(self, other: Provenance) -> Provenance {
        if self == Provenance::SampledEstimate || other == Provenance::SampledEstimate {
            Provenance::SampledEstimate
        } else {
            Provenance::CertifiedByUser
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "certified-by-user" | "certified" => Ok(Provenance::CertifiedByUser),
            "sampled-estimate" | "sampled" => Ok(Provenance::SampledEstimate),
            other => Err(Error::Format(format!("unknown provenance `{other}`"))),
        }
    }
}

/// Per-mode constants entering the error bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorConstants<T> {
    /// Lipschitz constant `L_u`.
    pub lipschitz: T,
    /// `C_u = L_u * sup_S ||f_u||`.
    pub growth: T,
    /// One-sided Lipschitz constant `lambda_u`.
    pub osl: T,
    /// Disturbance gain `gamma_u`.
    pub disturbance_gain: T,
    pub provenance: Provenance,
}

/// Sign regime of the OSL constant after snapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OslRegime {
    Contracting,
    Neutral,
    Expanding,
}

impl<T: Scalar> ErrorConstants<T> {
    pub fn new(lipschitz: T, growth: T, osl: T, disturbance_gain: T, provenance: Provenance) -> Result<Self> {
        let all = [lipschitz, growth, osl, disturbance_gain];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("error constants must be finite".into()));
        }
        if lipschitz < T::zero() || growth < T::zero() || disturbance_gain < T::zero() {
            return Err(Error::Validation(
                "Lipschitz, growth and disturbance constants must be non-negative".into(),
            ));
        }
        Ok(Self {
            lipschitz,
            growth,
            osl,
            disturbance_gain,
            provenance,
        })
    }

    pub fn certified(lipschitz: T, growth: T, osl: T, disturbance_gain: T) -> Result<Self> {
        Self::new(lipschitz, growth, osl, disturbance_gain, Provenance::CertifiedByUser)
    }

    pub fn regime(&self) -> OslRegime {
        if self.osl.abs() < T::lit(OSL_SNAP) {
            OslRegime::Neutral
        } else if self.osl < T::zero() {
            OslRegime::Contracting
        } else {
            OslRegime::Expanding
        }
    }
}

fn clamped_sqrt<T: Scalar>(radicand: T, what: &str) -> T {
    if radicand < T::zero() {
        warn!("{what}: negative radicand {radicand} clamped to zero");
        T::zero()
    } else {
        radicand.sqrt()
    }
}

/// `e^x - sum_{n < order} x^n / n!`, by its series near zero where the
/// direct form cancels.
fn exp_remainder<T: Scalar>(x: T, order: u32) -> T {
    if x.abs() < T::lit(0.5) {
        let mut term = T::one();
        for n in 1..=order {
            term = term * x / T::lit(n as f64);
        }
        let mut sum = term;
        let mut n = order;
        while term.abs() > T::epsilon() * sum.abs() && n < order + 40 {
            n += 1;
            term = term * x / T::lit(n as f64);
            sum = sum + term;
        }
        sum
    } else {
        let mut r = x.exp_m1();
        let mut term = T::one();
        for n in 1..order {
            term = term * x / T::lit(n as f64);
            r = r - term;
        }
        r
    }
}

/// Radius `delta^u_{t,mu}` of the ball around the Euler point that contains
/// the exact solution after time `t`, starting from a ball of radius `mu`.
///
/// The `C^2` terms are evaluated through `e^x - 1 - x - x^2/2`, which they
/// equal up to a factor, so that small `|lambda| t` keeps full precision.
pub fn delta<T: Scalar>(c: &ErrorConstants<T>, mu: T, t: T) -> T {
    let two = T::lit(2.0);
    let cc = c.growth * c.growth;
    let lam = c.osl;
    let radicand = match c.regime() {
        OslRegime::Contracting => {
            // C^2/lam^2 (t^2 + 2t/lam + 2/lam^2 (1 - e^{lam t}))
            let lam2 = lam * lam;
            mu * mu * (lam * t).exp() - two * cc * exp_remainder(lam * t, 3) / (lam2 * lam2)
        }
        OslRegime::Neutral => {
            // C^2 (-t^2 - 2t + 2(e^t - 1))
            mu * mu * t.exp() + two * cc * exp_remainder(t, 3)
        }
        OslRegime::Expanding => {
            // C^2/(3 lam^2) (-t^2 - 2t/(3 lam) + 2/(9 lam^2)(e^{3 lam t} - 1))
            let three = T::lit(3.0);
            let lam2 = lam * lam;
            mu * mu * (three * lam * t).exp() + two * cc * exp_remainder(three * lam * t, 3) / (T::lit(27.0) * lam2 * lam2)
        }
    };
    clamped_sqrt(radicand, "delta")
}

/// Scalar magnitude `|W|` of the disturbance set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec<T> {
    pub magnitude: T,
}

impl<T: Scalar> DisturbanceSpec<T> {
    pub fn new(magnitude: T) -> Result<Self> {
        if !(magnitude >= T::zero()) {
            return Err(Error::Validation(format!("disturbance magnitude must be >= 0, got {magnitude}")));
        }
        Ok(Self { magnitude })
    }

    pub fn none() -> Self {
        Self { magnitude: T::zero() }
    }
}

/// Error radius `delta^u_{t,eps,W}` for a contracting mode under a bounded
/// disturbance of magnitude `|W|`. Reduces to [`delta`] when `|W| = 0`.
pub fn delta_disturbed<T: Scalar>(c: &ErrorConstants<T>, eps: T, w: DisturbanceSpec<T>, t: T) -> Result<T> {
    if c.regime() != OslRegime::Contracting {
        return Err(Error::UnsupportedRegime(format!(
            "disturbed error bound needs a negative OSL constant, got {}",
            c.osl
        )));
    }
    let two = T::lit(2.0);
    let lam = c.osl;
    let cu = c.growth;
    let gam = c.disturbance_gain;
    let wm = w.magnitude;
    let x = lam * t;
    let e = x.exp();
    let lam2 = lam * lam;
    // C^2/(-lam^4)(-lam^2 t^2 - 2 lam t + 2 e^{lam t} - 2)
    let growth_term = -two * cu * cu * exp_remainder(x, 3) / (lam2 * lam2);
    // C gamma |W|/(-lam) (-lam t + e^{lam t} - 1)
    let cross_term = cu * gam * wm / (-lam) * exp_remainder(x, 2);
    let half_w = wm / two;
    // gamma^2 (|W|/2)^2/(-lam)(e^{lam t} - 1) + lam eps^2 e^{lam t}
    let inner = gam * gam * half_w * half_w / (-lam) * x.exp_m1() + lam * eps * eps * e;
    let radicand = growth_term + (cross_term + lam * inner) / lam2;
    Ok(clamped_sqrt(radicand, "delta_disturbed"))
}

/// `t -> delta^u_{t,mu0}` over `[0, horizon]`.
#[derive(Debug, Clone, Copy)]
pub struct BallRadiusSchedule<T> {
    pub mode: ModeId,
    pub mu0: T,
    pub horizon: T,
    pub constants: ErrorConstants<T>,
}

impl<T: Scalar> BallRadiusSchedule<T> {
    pub fn new(mode: ModeId, constants: ErrorConstants<T>, mu0: T, horizon: T) -> Result<Self> {
        if mu0 < T::zero() || horizon < T::zero() {
            return Err(Error::Validation("radius and horizon must be non-negative".into()));
        }
        Ok(Self {
            mode,
            mu0,
            horizon,
            constants,
        })
    }

    pub fn eval(&self, t: T) -> T {
        delta(&self.constants, self.mu0, t)
    }

    /// `points` evenly spaced samples `(t, delta(t))` including both ends.
    pub fn sample(&self, points: usize) -> Vec<(T, T)> {
        let n = points.max(2) - 1;
        (0..=n)
            .map(|i| {
                let t = self.horizon * T::lit(i as f64) / T::lit(n as f64);
                (t, self.eval(t))
            })
            .collect()
    }
}

/// Step-size certificate under which an error ball of radius `e0` does not
/// grow over one Euler step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate<T> {
    pub mode: ModeId,
    pub e0: T,
    pub g: T,
    pub alpha: T,
    pub max_step: T,
    pub satisfied_h: bool,
}

impl<T: Scalar> ContractionCertificate<T> {
    /// Residual of `-a/2 + (2 + a/2) alpha - alpha^2` with `a = |lambda| G`.
    pub fn quadratic_residual(&self, osl: T) -> T {
        let a = osl.abs() * self.g;
        let half = T::lit(0.5);
        -half * a + (T::lit(2.0) + half * a) * self.alpha - self.alpha * self.alpha
    }
}

pub fn contraction_certificate<T: Scalar>(
    mode: ModeId,
    c: &ErrorConstants<T>,
    e0: T,
) -> Result<ContractionCertificate<T>> {
    if !(e0 > T::zero()) {
        return Err(Error::Validation(format!("initial error e0 must be positive, got {e0}")));
    }
    if c.regime() != OslRegime::Contracting {
        return Err(Error::UnsupportedRegime(format!(
            "mode {mode}: contraction needs a negative OSL constant, got {}",
            c.osl
        )));
    }
    if c.growth == T::zero() {
        return Err(Error::Degenerate(format!("mode {mode}: growth constant C_u is zero")));
    }
    let four = T::lit(4.0);
    let abs_lam = c.osl.abs();
    let g = T::lit(3.0).sqrt() * e0 * abs_lam / c.growth;
    let q = abs_lam * g / four;
    let alpha = T::one() + q - (T::one() + q * q).sqrt();
    let satisfied_h = q < T::one();
    Ok(ContractionCertificate {
        mode,
        e0,
        g,
        alpha,
        max_step: g * (T::one() - alpha),
        satisfied_h,
    })
}

/// Smallest `n` with `tau / n <= max_step`.
pub fn subsample_count<T: Scalar>(cert: &ContractionCertificate<T>, tau: T) -> Result<usize> {
    if !cert.satisfied_h || !(cert.max_step > T::zero()) {
        return Err(Error::HypothesisViolation {
            modes: vec![cert.mode],
            hint: "contraction condition |lambda| G / 4 < 1 fails; use a finer grid".into(),
        });
    }
    let ratio = (tau / cert.max_step).as_f64();
    if !ratio.is_finite() || ratio > 1e12 {
        return Err(Error::Validation(format!("subsampling ratio {ratio} is not representable")));
    }
    let mut n = (ratio.ceil() as usize).max(1);
    while tau / T::lit(n as f64) > cert.max_step {
        n += 1;
    }
    Ok(n)
}

/// Outcome of checking hypothesis (H) for one mode.
#[derive(Debug, Clone)]
pub struct ModeHypothesis<T> {
    pub mode: ModeId,
    pub certificate: Option<ContractionCertificate<T>>,
    pub substeps: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct HypothesisReport<T> {
    pub e0: T,
    pub modes: Vec<ModeHypothesis<T>>,
    pub provenance: Provenance,
}

impl<T: Scalar> HypothesisReport<T> {
    pub fn satisfied(&self) -> bool {
        self.modes.iter().all(|m| m.failure.is_none())
    }

    pub fn violations(&self) -> Vec<ModeId> {
        self.modes.iter().filter(|m| m.failure.is_some()).map(|m| m.mode).collect()
    }

    pub fn substeps(&self) -> Substeps {
        Substeps::new(self.modes.iter().map(|m| m.substeps).collect()).expect("substeps >= 1")
    }

    pub fn into_error(&self) -> Error {
        let hints: Vec<String> = self
            .modes
            .iter()
            .filter_map(|m| m.failure.as_ref().map(|f| format!("mode {}: {f}", m.mode)))
            .collect();
        Error::HypothesisViolation {
            modes: self.violations(),
            hint: format!("{}; try a smaller tau or a finer grid", hints.join("; ")),
        }
    }
}

/// Checks (H) for every mode with ball radius `e0` and derives the per-mode
/// subsampling that enforces the step condition. Violating modes keep a
/// single substep.
pub fn check_hypothesis<T: Scalar>(
    system: &SwitchedSystem<T>,
    constants: &[ErrorConstants<T>],
    e0: T,
) -> Result<HypothesisReport<T>> {
    if constants.len() != system.mode_count() {
        return Err(Error::Validation(format!(
            "{} constant sets supplied for {} modes",
            constants.len(),
            system.mode_count()
        )));
    }
    let mut modes = Vec::with_capacity(constants.len());
    let mut provenance = Provenance::CertifiedByUser;
    for (u, c) in system.mode_ids().zip(constants) {
        provenance = provenance.combine(c.provenance);
        let entry = if c.regime() == OslRegime::Contracting && c.growth == T::zero() {
            // No drift: the ball shrinks by e^{lambda t / 2} at any step size.
            ModeHypothesis {
                mode: u,
                certificate: None,
                substeps: 1,
                failure: None,
            }
        } else {
            match contraction_certificate(u, c, e0) {
                Ok(cert) if cert.satisfied_h => ModeHypothesis {
                    mode: u,
                    certificate: Some(cert),
                    substeps: subsample_count(&cert, system.tau())?,
                    failure: None,
                },
                Ok(cert) => ModeHypothesis {
                    mode: u,
                    certificate: Some(cert),
                    substeps: 1,
                    failure: Some(format!("|lambda| G / 4 = {} >= 1", c.osl.abs() * cert.g / T::lit(4.0))),
                },
                Err(e) => ModeHypothesis {
                    mode: u,
                    certificate: None,
                    substeps: 1,
                    failure: Some(e.to_string()),
                },
            }
        };
        modes.push(entry);
    }
    Ok(HypothesisReport { e0, modes, provenance })
}

/// Exact constants of an affine field `f(y) = A y + b` on a box:
/// `lambda` is the top eigenvalue of `(A + A^T)/2`, `L` the spectral norm of
/// `A`, and `sup ||f||` is attained at a vertex.
pub fn affine_constants<T: Scalar>(a: &[Vec<f64>], b: &[f64], domain: &StateBox<T>) -> Result<ErrorConstants<T>> {
    let m = b.len();
    if a.len() != m || a.iter().any(|r| r.len() != m) || domain.dim() != m {
        return Err(Error::Validation("affine field dimensions disagree".into()));
    }
    let mat = DMatrix::from_fn(m, m, |i, j| a[i][j]);
    let sym = (&mat + mat.transpose()) * 0.5;
    let osl = sym.symmetric_eigenvalues().max();
    let lipschitz = mat.clone().svd(false, false).singular_values.max();
    let sup = domain
        .vertices()
        .iter()
        .map(|v| {
            (0..m)
                .map(|i| {
                    let r = (0..m).map(|j| a[i][j] * v[j].as_f64()).sum::<f64>() + b[i];
                    r * r
                })
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max);
    ErrorConstants::certified(T::lit(lipschitz), T::lit(lipschitz * sup), T::lit(osl), T::zero())
}

/// Best-effort sampled estimate of the constants of mode `u` over the domain
/// box. Combines pairwise difference quotients with finite-difference
/// Jacobians at the samples, then inflates each quantity by `1 + margin` in
/// the conservative direction.
pub fn estimate_constants<T: Scalar>(
    system: &SwitchedSystem<T>,
    u: ModeId,
    sample_count: usize,
    margin: f64,
    seed: u64,
) -> Result<ErrorConstants<T>> {
    system.check_mode(u)?;
    if sample_count < 2 {
        return Err(Error::Validation("at least two samples are needed".into()));
    }
    if !(margin >= 0.0) {
        return Err(Error::Validation("margin must be non-negative".into()));
    }
    let dim = system.dim();
    let lo: Vec<f64> = system.domain().lo().iter().map(|v| v.as_f64()).collect();
    let hi: Vec<f64> = system.domain().hi().iter().map(|v| v.as_f64()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Lattice part (vertices included), random part for the remainder.
    let mut per_axis = 2usize;
    while (per_axis + 1).checked_pow(dim as u32).is_some_and(|n| n <= sample_count / 2) {
        per_axis += 1;
    }
    let lattice = per_axis.pow(dim as u32).min(sample_count);
    let mut samples: Vec<Vec<f64>> = Vec::with_capacity(sample_count);
    for flat in 0..lattice {
        let mut rem = flat;
        let mut p = vec![0.0; dim];
        for i in (0..dim).rev() {
            let k = rem % per_axis;
            rem /= per_axis;
            p[i] = lo[i] + (hi[i] - lo[i]) * k as f64 / (per_axis - 1) as f64;
        }
        samples.push(p);
    }
    while samples.len() < sample_count {
        samples.push((0..dim).map(|i| rng.gen_range(lo[i]..=hi[i])).collect());
    }

    let eval = |y: &[f64], w: &[f64]| -> Vec<f64> {
        let yt: Vec<T> = y.iter().map(|&v| T::lit(v)).collect();
        let wt: Vec<T> = w.iter().map(|&v| T::lit(v)).collect();
        let mut out = vec![T::zero(); dim];
        system.eval_disturbed(u, &yt, &wt, &mut out);
        out.into_iter().map(|v| v.as_f64()).collect()
    };
    let d = system.disturbance_dim();
    let zero_w = vec![0.0; d];
    let values: Vec<Vec<f64>> = samples.iter().map(|y| eval(y, &zero_w)).collect();
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NumericalDomain {
            mode: u,
            state: samples[values.iter().position(|v| v.iter().any(|x| !x.is_finite())).unwrap()].clone(),
        });
    }

    let sup_f = values.iter().map(|v| vnorm(v)).fold(0.0, f64::max);
    let mut lip = 0.0f64;
    let mut osl = f64::NEG_INFINITY;
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            let dy: Vec<f64> = samples[i].iter().zip(&samples[j]).map(|(a, b)| a - b).collect();
            let ny2: f64 = dy.iter().map(|v| v * v).sum();
            if ny2 == 0.0 {
                continue;
            }
            let df: Vec<f64> = values[i].iter().zip(&values[j]).map(|(a, b)| a - b).collect();
            lip = lip.max(vnorm(&df) / ny2.sqrt());
            osl = osl.max(df.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>() / ny2);
        }
    }

    // Local Jacobians: the OSL constant over a convex set is the supremum of
    // the top eigenvalue of the symmetric part.
    let mut gain = 0.0f64;
    for y in &samples {
        let jac = jacobian(&|p: &[f64]| eval(p, &zero_w), y, &lo, &hi);
        let sym = (&jac + jac.transpose()) * 0.5;
        osl = osl.max(sym.symmetric_eigenvalues().max());
        lip = lip.max(jac.svd(false, false).singular_values.max());
        if let Some(wbox) = system.disturbance() {
            let wlo: Vec<f64> = wbox.lo().iter().map(|v| v.as_f64()).collect();
            let whi: Vec<f64> = wbox.hi().iter().map(|v| v.as_f64()).collect();
            let w0: Vec<f64> = (0..d).map(|i| 0.5 * (wlo[i] + whi[i])).collect();
            let jw = jacobian(&|w: &[f64]| eval(y, w), &w0, &wlo, &whi);
            gain = gain.max(jw.svd(false, false).singular_values.max());
        }
    }
    if let Some(wbox) = system.disturbance() {
        let wlo: Vec<f64> = wbox.lo().iter().map(|v| v.as_f64()).collect();
        let whi: Vec<f64> = wbox.hi().iter().map(|v| v.as_f64()).collect();
        for _ in 0..sample_count {
            let y1 = &samples[rng.gen_range(0..samples.len())];
            let y2 = &samples[rng.gen_range(0..samples.len())];
            let w1: Vec<f64> = (0..d).map(|i| rng.gen_range(wlo[i]..=whi[i])).collect();
            let w2: Vec<f64> = (0..d).map(|i| rng.gen_range(wlo[i]..=whi[i])).collect();
            let dy: Vec<f64> = y1.iter().zip(y2).map(|(a, b)| a - b).collect();
            let dw: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a - b).collect();
            let (ny, nw) = (vnorm(&dy), vnorm(&dw));
            if ny == 0.0 || nw == 0.0 {
                continue;
            }
            let df: Vec<f64> = eval(y1, &w1).iter().zip(eval(y2, &w2)).map(|(a, b)| a - b).collect();
            let excess = df.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>() - osl * ny * ny;
            gain = gain.max(excess / (ny * nw));
        }
    }

    let inflate = 1.0 + margin;
    let lipschitz = lip * inflate;
    let growth = lip * sup_f * inflate;
    let osl = osl + margin * osl.abs();
    ErrorConstants::new(
        T::lit(lipschitz),
        T::lit(growth),
        T::lit(osl),
        T::lit(gain.max(0.0) * inflate),
        Provenance::SampledEstimate,
    )
}

fn vnorm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central-difference Jacobian, one-sided where the stencil would leave the box.
fn jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], lo: &[f64], hi: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let f0 = f(x);
    let mut jac = DMatrix::zeros(f0.len(), n);
    for j in 0..n {
        let h = 1e-6 * (hi[j] - lo[j]).max(1e-12);
        let up = (x[j] + h).min(hi[j]);
        let down = (x[j] - h).max(lo[j]);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] = up;
        xm[j] = down;
        let (fp, fm) = (f(&xp), f(&xm));
        for i in 0..f0.len() {
            jac[(i, j)] = (fp[i] - fm[i]) / (up - down);
        }
    }
    jac
}

/// Writes constants as `mode,L,C,lambda,gamma,provenance` rows.
pub fn write_constants<T: Scalar, W: Write>(mut out: W, constants: &[ErrorConstants<T>]) -> std::io::Result<()> {
    writeln!(out, "mode,L,C,lambda,gamma,provenance")?;
    for (u, c) in constants.iter().enumerate() {
        writeln!(
            out,
            "{u},{},{},{},{},{}",
            c.lipschitz, c.growth, c.osl, c.disturbance_gain, c.provenance
        )?;
    }
    Ok(())
}

/// Parses the format produced by [`write_constants`]. Rows must list modes
/// `0..m` in order.
pub fn read_constants<T: Scalar, R: BufRead>(input: R) -> Result<Vec<ErrorConstants<T>>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("mode") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(Error::Format(format!("line {}: expected 6 fields, got {}", lineno + 1, fields.len())));
        }
        let mode: usize = fields[0]
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad mode index", lineno + 1)))?;
        if mode != out.len() {
            return Err(Error::Format(format!("line {}: expected mode {}, got {mode}", lineno + 1, out.len())));
        }
        let num = |s: &str| -> Result<T> {
            s.parse::<f64>()
                .map(T::lit)
                .map_err(|_| Error::Format(format!("line {}: bad number `{s}`", lineno + 1)))
        };
        out.push(ErrorConstants::new(
            num(fields[1])?,
            num(fields[2])?,
            num(fields[3])?,
            num(fields[4])?,
            fields[5].parse()?,
        )?);
    }
    Ok(out)
}
