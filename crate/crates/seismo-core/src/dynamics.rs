//! Ground-truth simulation of single-degree-of-freedom oscillators.
//!
//! Two constitutive models are supported: a linear spring and the Bouc-Wen
//! smooth hysteresis. The linear system is integrated with a piecewise-exact
//! recurrence (the excitation is treated as linear between samples, and the
//! step update uses the closed-form solution of the damped oscillator under
//! linear forcing). The Bouc-Wen system couples the restoring-force rate
//! equation
//!
//! ```text
//! df/dt = k·v − α·|v|·|f|^(n−1)·f − β·v·|f|^n
//! ```
//!
//! to the equation of motion and is integrated with classical RK4.
//!
//! The coupled Bouc-Wen simulation works in per-unit-mass form throughout:
//! the equation of motion is divided by the mass, so the hysteretic state
//! and the reported `restoring_force` are specific forces (acceleration
//! units) driven by the specific stiffness `k/m`. [`pushover`], which never
//! involves the mass, integrates the force-rate equation with the raw
//! stiffness instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::excitation::GroundMotion;

/// Simulations abort once |x| exceeds this guard and the sample is flagged
/// invalid instead of emitting garbage.
pub const DISPLACEMENT_GUARD_M: f64 = 1e3;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid structure parameter: {0}")]
    InvalidParameter(String),
    #[error("state became non-finite at t = {time_s:.4} s")]
    NonFinite { time_s: f64 },
    #[error("displacement exceeded the {DISPLACEMENT_GUARD_M} m divergence guard at t = {time_s:.4} s")]
    Diverged { time_s: f64 },
    #[error("operation requires the {expected} model")]
    WrongModel { expected: &'static str },
    #[error("effective damping ratio {zeta:.3} is outside the supported underdamped range [0, 1)")]
    UnsupportedDamping { zeta: f64 },
}

/// Viscous damping specification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DampingSpec {
    /// Fraction of critical damping, `c = 2ζ√(k·m)`.
    Ratio { zeta: f64 },
    /// Rayleigh damping, `c = α·m + β·k`.
    Rayleigh { alpha: f64, beta: f64 },
}

impl DampingSpec {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        match *self {
            DampingSpec::Ratio { zeta } => {
                if !zeta.is_finite() || !(0.0..1.0).contains(&zeta) {
                    return Err(DynamicsError::InvalidParameter(format!(
                        "damping ratio must satisfy 0 <= zeta < 1, got {zeta}"
                    )));
                }
            }
            DampingSpec::Rayleigh { alpha, beta } => {
                if !alpha.is_finite() || !beta.is_finite() || alpha < 0.0 || beta < 0.0 {
                    return Err(DynamicsError::InvalidParameter(format!(
                        "Rayleigh coefficients must be finite and non-negative, got alpha={alpha}, beta={beta}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Bouc-Wen nonlinearity coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoucWenParams {
    pub alpha: f64,
    pub beta: f64,
    pub n: f64,
}

impl BoucWenParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !self.alpha.is_finite() || !self.beta.is_finite() || self.alpha < 0.0 || self.beta < 0.0
        {
            return Err(DynamicsError::InvalidParameter(format!(
                "Bouc-Wen alpha/beta must be finite and non-negative, got {}/{}",
                self.alpha, self.beta
            )));
        }
        if !self.n.is_finite() || self.n < 1.0 {
            return Err(DynamicsError::InvalidParameter(format!(
                "Bouc-Wen exponent must satisfy n >= 1, got {}",
                self.n
            )));
        }
        Ok(())
    }

    /// Saturation force of the rate equation with stiffness `k_eff`:
    /// `(k_eff/(α+β))^(1/n)`. Returns infinity when α+β = 0 (the equation
    /// degenerates to a linear spring).
    pub fn ultimate_force(&self, k_eff: f64) -> f64 {
        let ab = self.alpha + self.beta;
        if ab <= 0.0 {
            f64::INFINITY
        } else {
            (k_eff / ab).powf(1.0 / self.n)
        }
    }

    /// Right-hand side of the force-rate equation for velocity `v` and
    /// current force `f` with stiffness `k_eff`.
    #[inline]
    pub fn force_rate(&self, k_eff: f64, v: f64, f: f64) -> f64 {
        let fa = f.abs();
        k_eff * v - self.alpha * v.abs() * fa.powf(self.n - 1.0) * f
            - self.beta * v * fa.powf(self.n)
    }
}

impl Default for BoucWenParams {
    fn default() -> Self {
        BoucWenParams {
            alpha: 1.0,
            beta: 2.0,
            n: 3.0,
        }
    }
}

/// Constitutive model of the restoring force.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StructuralModel {
    Linear,
    BoucWen(BoucWenParams),
}

/// One SDOF system: mass, stiffness, damping, and constitutive model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureParams {
    pub mass: f64,
    pub stiffness: f64,
    pub damping: DampingSpec,
    pub model: StructuralModel,
}

impl StructureParams {
    pub fn new(
        mass: f64,
        stiffness: f64,
        damping: DampingSpec,
        model: StructuralModel,
    ) -> Result<Self, DynamicsError> {
        if !mass.is_finite() || mass <= 0.0 {
            return Err(DynamicsError::InvalidParameter(format!(
                "mass must be positive and finite, got {mass}"
            )));
        }
        if !stiffness.is_finite() || stiffness <= 0.0 {
            return Err(DynamicsError::InvalidParameter(format!(
                "stiffness must be positive and finite, got {stiffness}"
            )));
        }
        damping.validate()?;
        if let StructuralModel::BoucWen(bw) = &model {
            bw.validate()?;
        }
        Ok(StructureParams {
            mass,
            stiffness,
            damping,
            model,
        })
    }

    pub fn linear(mass: f64, stiffness: f64, damping: DampingSpec) -> Result<Self, DynamicsError> {
        Self::new(mass, stiffness, damping, StructuralModel::Linear)
    }

    pub fn bouc_wen(
        mass: f64,
        stiffness: f64,
        damping: DampingSpec,
        bw: BoucWenParams,
    ) -> Result<Self, DynamicsError> {
        Self::new(mass, stiffness, damping, StructuralModel::BoucWen(bw))
    }
}

/// Initial state. `f0` is the initial restoring force in the per-unit-mass
/// convention of [`simulate_bouc_wen`]; it is ignored by the linear model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialConditions {
    pub x0: f64,
    pub v0: f64,
    pub f0: f64,
}

impl InitialConditions {
    pub fn at_rest() -> Self {
        InitialConditions {
            x0: 0.0,
            v0: 0.0,
            f0: 0.0,
        }
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        if !self.x0.is_finite() || !self.v0.is_finite() || !self.f0.is_finite() {
            return Err(DynamicsError::InvalidParameter(
                "initial conditions must be finite".into(),
            ));
        }
        Ok(())
    }
}

impl Default for InitialConditions {
    fn default() -> Self {
        Self::at_rest()
    }
}

/// Response time history sampled on the driving record's grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseSeries {
    pub dt: f64,
    pub displacement: Vec<f64>,
    pub velocity: Option<Vec<f64>>,
    /// Specific restoring force (Bouc-Wen only).
    pub restoring_force: Option<Vec<f64>>,
}

impl ResponseSeries {
    /// Two-column CSV: `time_s,displacement_m`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time_s,displacement_m")?;
        for (i, x) in self.displacement.iter().enumerate() {
            writeln!(w, "{},{}", i as f64 * self.dt, x)?;
        }
        Ok(())
    }
}

/// Undamped natural frequency `√(k/m)/(2π)` in Hz.
pub fn natural_frequency(s: &StructureParams) -> f64 {
    (s.stiffness / s.mass).sqrt() / (2.0 * std::f64::consts::PI)
}

/// Viscous damping coefficient in N·s/m.
pub fn damping_coefficient(s: &StructureParams) -> f64 {
    match s.damping {
        DampingSpec::Ratio { zeta } => 2.0 * zeta * (s.stiffness * s.mass).sqrt(),
        DampingSpec::Rayleigh { alpha, beta } => alpha * s.mass + beta * s.stiffness,
    }
}

/// Linear interpolation of the record between samples `i` and `i+1`.
#[inline]
fn lerp_accel(accel: &[f64], i: usize, u: f64) -> f64 {
    accel[i] + (accel[i + 1] - accel[i]) * u
}

fn check_state(x: f64, v: f64, t: f64) -> Result<(), DynamicsError> {
    if !x.is_finite() || !v.is_finite() {
        return Err(DynamicsError::NonFinite { time_s: t });
    }
    if x.abs() > DISPLACEMENT_GUARD_M {
        return Err(DynamicsError::Diverged { time_s: t });
    }
    Ok(())
}

/// Step coefficients of the exact damped-oscillator solution under forcing
/// that varies linearly across the step (Nigam-Jennings recurrence).
struct ExactStep {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    ap: f64,
    bp: f64,
    cp: f64,
    dp: f64,
}

impl ExactStep {
    fn new(wn: f64, zeta: f64, h: f64) -> Self {
        let sq = (1.0 - zeta * zeta).sqrt();
        let wd = wn * sq;
        let e = (-zeta * wn * h).exp();
        let sd = (wd * h).sin();
        let cd = (wd * h).cos();
        let zq = zeta / sq;
        let k = wn * wn; // stiffness per unit mass
        let a = e * (zq * sd + cd);
        let b = e * sd / wd;
        let c = (1.0 / k)
            * (2.0 * zeta / (wn * h)
                + e * (((1.0 - 2.0 * zeta * zeta) / (wd * h) - zq) * sd
                    - (1.0 + 2.0 * zeta / (wn * h)) * cd));
        let d = (1.0 / k)
            * (1.0 - 2.0 * zeta / (wn * h)
                + e * ((2.0 * zeta * zeta - 1.0) / (wd * h) * sd + 2.0 * zeta / (wn * h) * cd));
        let ap = -e * (wn / sq) * sd;
        let bp = e * (cd - zq * sd);
        let cp = (1.0 / k) * (-1.0 / h + e * ((wn / sq + zq / h) * sd + cd / h));
        let dp = (1.0 / (k * h)) * (1.0 - e * (zq * sd + cd));
        ExactStep {
            a,
            b,
            c,
            d,
            ap,
            bp,
            cp,
            dp,
        }
    }

    #[inline]
    fn advance(&self, x: f64, v: f64, p0: f64, p1: f64) -> (f64, f64) {
        (
            self.a * x + self.b * v + self.c * p0 + self.d * p1,
            self.ap * x + self.bp * v + self.cp * p0 + self.dp * p1,
        )
    }
}

/// Simulates the linear SDOF equation of motion
/// `m·ẍ + c·ẋ + k·x = −m·a_g(t)` under a ground-motion record.
///
/// The excitation is interpolated linearly between record samples and each
/// record interval is advanced in `substeps` exact sub-updates, so the
/// result is insensitive to `substeps` beyond round-off. The output is
/// sampled on the record grid and has the record's length.
pub fn simulate_linear(
    s: &StructureParams,
    gm: &GroundMotion,
    ic: &InitialConditions,
    substeps: u32,
) -> Result<ResponseSeries, DynamicsError> {
    if s.model != StructuralModel::Linear {
        return Err(DynamicsError::WrongModel { expected: "linear" });
    }
    if substeps == 0 {
        return Err(DynamicsError::InvalidParameter(
            "substeps must be >= 1".into(),
        ));
    }
    ic.validate()?;

    let wn = (s.stiffness / s.mass).sqrt();
    let c = damping_coefficient(s);
    let zeta = c / (2.0 * (s.stiffness * s.mass).sqrt());
    if !(0.0..1.0).contains(&zeta) {
        return Err(DynamicsError::UnsupportedDamping { zeta });
    }

    let n = gm.accel().len();
    let h = gm.dt() / substeps as f64;
    let step = ExactStep::new(wn, zeta, h);
    let inv = 1.0 / substeps as f64;

    let mut x = ic.x0;
    let mut v = ic.v0;
    let mut displacement = Vec::with_capacity(n);
    let mut velocity = Vec::with_capacity(n);
    displacement.push(x);
    velocity.push(v);

    let accel = gm.accel();
    for i in 0..n - 1 {
        for j in 0..substeps {
            let p0 = -lerp_accel(accel, i, j as f64 * inv);
            let p1 = -lerp_accel(accel, i, (j + 1) as f64 * inv);
            let (nx, nv) = step.advance(x, v, p0, p1);
            x = nx;
            v = nv;
        }
        check_state(x, v, (i + 1) as f64 * gm.dt())?;
        displacement.push(x);
        velocity.push(v);
    }

    Ok(ResponseSeries {
        dt: gm.dt(),
        displacement,
        velocity: Some(velocity),
        restoring_force: None,
    })
}

/// Simulates the Bouc-Wen hysteretic SDOF system in per-unit-mass form:
///
/// ```text
/// ẋ = v
/// v̇ = −a_g(t) − (c/m)·v − f
/// ḟ = (k/m)·v − α·|v|·|f|^(n−1)·f − β·v·|f|^n
/// ```
///
/// integrated with classical RK4 at step `gm.dt/substeps`, interpolating the
/// record linearly. `f` is the specific restoring force.
pub fn simulate_bouc_wen(
    s: &StructureParams,
    gm: &GroundMotion,
    ic: &InitialConditions,
    substeps: u32,
) -> Result<ResponseSeries, DynamicsError> {
    let bw = match &s.model {
        StructuralModel::BoucWen(bw) => *bw,
        StructuralModel::Linear => {
            return Err(DynamicsError::WrongModel {
                expected: "bouc_wen",
            })
        }
    };
    if substeps == 0 {
        return Err(DynamicsError::InvalidParameter(
            "substeps must be >= 1".into(),
        ));
    }
    ic.validate()?;

    let sys = BoucWenSystem {
        k_eff: s.stiffness / s.mass,
        c_over_m: damping_coefficient(s) / s.mass,
        bw,
        dt: gm.dt(),
        accel: gm.accel(),
    };

    let n = gm.accel().len();
    let inv = 1.0 / substeps as f64;

    let mut state = [ic.x0, ic.v0, ic.f0];
    let mut displacement = Vec::with_capacity(n);
    let mut velocity = Vec::with_capacity(n);
    let mut force = Vec::with_capacity(n);
    displacement.push(state[0]);
    velocity.push(state[1]);
    force.push(state[2]);

    for i in 0..n - 1 {
        for j in 0..substeps {
            state = sys.advance_substep(i, j as f64 * inv, inv, state, 0);
        }
        let t = (i + 1) as f64 * gm.dt();
        check_state(state[0], state[1], t)?;
        if !state[2].is_finite() {
            return Err(DynamicsError::NonFinite { time_s: t });
        }
        displacement.push(state[0]);
        velocity.push(state[1]);
        force.push(state[2]);
    }

    Ok(ResponseSeries {
        dt: gm.dt(),
        displacement,
        velocity: Some(velocity),
        restoring_force: Some(force),
    })
}

/// Per-unit-mass Bouc-Wen state dynamics with the driving record.
struct BoucWenSystem<'a> {
    k_eff: f64,
    c_over_m: f64,
    bw: BoucWenParams,
    dt: f64,
    accel: &'a [f64],
}

impl BoucWenSystem<'_> {
    #[inline]
    fn deriv(&self, ag: f64, state: [f64; 3]) -> [f64; 3] {
        let [_, v, f] = state;
        [
            v,
            -ag - self.c_over_m * v - f,
            self.bw.force_rate(self.k_eff, v, f),
        ]
    }

    /// One RK4 step spanning the fraction `[u0, u0 + du]` of record
    /// interval `i`.
    fn rk4(&self, i: usize, u0: f64, du: f64, state: [f64; 3]) -> [f64; 3] {
        let h = du * self.dt;
        let a0 = lerp_accel(self.accel, i, u0);
        let am = lerp_accel(self.accel, i, u0 + 0.5 * du);
        let a1 = lerp_accel(self.accel, i, u0 + du);
        let k1 = self.deriv(a0, state);
        let k2 = self.deriv(
            am,
            [
                state[0] + 0.5 * h * k1[0],
                state[1] + 0.5 * h * k1[1],
                state[2] + 0.5 * h * k1[2],
            ],
        );
        let k3 = self.deriv(
            am,
            [
                state[0] + 0.5 * h * k2[0],
                state[1] + 0.5 * h * k2[1],
                state[2] + 0.5 * h * k2[2],
            ],
        );
        let k4 = self.deriv(
            a1,
            [
                state[0] + h * k3[0],
                state[1] + h * k3[1],
                state[2] + h * k3[2],
            ],
        );
        [
            state[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            state[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            state[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        ]
    }

    /// Advances one sub-step, splitting at velocity sign changes. The `|v|`
    /// factor of the force-rate equation kinks at `v = 0`; stepping across
    /// the kink would drop the integrator below its order, so the crossing
    /// is located by bisection and the step restarts there.
    fn advance_substep(
        &self,
        i: usize,
        u0: f64,
        du: f64,
        state: [f64; 3],
        depth: u32,
    ) -> [f64; 3] {
        let trial = self.rk4(i, u0, du, state);
        let crossed = state[1] != 0.0 && trial[1] != 0.0 && (state[1] > 0.0) != (trial[1] > 0.0);
        if !crossed || depth >= 8 {
            return trial;
        }
        let mut lo = 0.0f64;
        let mut hi = du;
        for _ in 0..20 {
            let mid = 0.5 * (lo + hi);
            let probe = self.rk4(i, u0, mid, state);
            if (probe[1] > 0.0) == (state[1] > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let at_crossing = self.rk4(i, u0, hi, state);
        self.advance_substep(i, u0 + hi, du - hi, at_crossing, depth + 1)
    }
}

/// Quasi-static hysteresis trace: integrates the Bouc-Wen force-rate
/// equation with the raw stiffness along a prescribed displacement path.
/// The equation is rate-independent, so only the path matters:
///
/// ```text
/// df/dx = k − α·sign(dx)·|f|^(n−1)·f − β·|f|^n·sign(dx)... (see force_rate)
/// ```
///
/// Returns `(x, f)` pairs at the path nodes.
pub fn pushover(
    s: &StructureParams,
    displacement_path: &[f64],
) -> Result<Vec<(f64, f64)>, DynamicsError> {
    let bw = match &s.model {
        StructuralModel::BoucWen(bw) => *bw,
        StructuralModel::Linear => {
            return Err(DynamicsError::WrongModel {
                expected: "bouc_wen",
            })
        }
    };
    if displacement_path.is_empty() {
        return Ok(Vec::new());
    }
    if displacement_path[0] != 0.0 {
        return Err(DynamicsError::InvalidParameter(
            "displacement path must start at 0".into(),
        ));
    }
    if displacement_path.iter().any(|x| !x.is_finite()) {
        return Err(DynamicsError::InvalidParameter(
            "displacement path must be finite".into(),
        ));
    }

    let k = s.stiffness;
    // Resolve each segment to a fraction of the yield displacement f_u/k.
    let fu = bw.ultimate_force(k);
    let x_unit = if fu.is_finite() { fu / k } else { 1.0 };

    let mut f = 0.0f64;
    let mut out = Vec::with_capacity(displacement_path.len());
    out.push((0.0, 0.0));
    for w in displacement_path.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let dx_total = x1 - x0;
        if dx_total != 0.0 {
            let nsub = ((dx_total.abs() / (0.02 * x_unit)).ceil() as usize).clamp(1, 100_000);
            let hseg = dx_total / nsub as f64;
            // Rate independence: advance unit pseudo-time per sub-step with
            // velocity hseg, so Δf = force_rate(k, hseg, f) exactly follows
            // the signed displacement increment.
            for _ in 0..nsub {
                let k1 = bw.force_rate(k, hseg, f);
                let k2 = bw.force_rate(k, hseg, f + 0.5 * k1);
                let k3 = bw.force_rate(k, hseg, f + 0.5 * k2);
                let k4 = bw.force_rate(k, hseg, f + k3);
                f += (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
            }
        }
        if !f.is_finite() {
            return Err(DynamicsError::NonFinite { time_s: x1 });
        }
        out.push((x1, f));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excitation::GroundMotion;
    use approx::assert_relative_eq;

    const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

    fn zero_record(n: usize, dt: f64) -> GroundMotion {
        GroundMotion::new("zero", dt, vec![0.0; n]).unwrap()
    }

    fn ratio(zeta: f64) -> DampingSpec {
        DampingSpec::Ratio { zeta }
    }

    /// Independent RK4 integration of the linear SDOF system, used as an
    /// oracle for both simulate_linear and the Bouc-Wen degeneracy check.
    fn linear_rk4_oracle(
        s: &StructureParams,
        gm: &GroundMotion,
        ic: &InitialConditions,
        substeps: u32,
    ) -> Vec<f64> {
        let k_over_m = s.stiffness / s.mass;
        let c_over_m = damping_coefficient(s) / s.mass;
        let accel = gm.accel();
        let h = gm.dt() / substeps as f64;
        let inv = 1.0 / substeps as f64;
        let deriv =
            |ag: f64, st: [f64; 2]| [st[1], -ag - c_over_m * st[1] - k_over_m * st[0]];
        let mut st = [ic.x0, ic.v0];
        let mut out = vec![st[0]];
        for i in 0..accel.len() - 1 {
            for j in 0..substeps {
                let u = j as f64 * inv;
                let a0 = lerp_accel(accel, i, u);
                let am = lerp_accel(accel, i, u + 0.5 * inv);
                let a1 = lerp_accel(accel, i, u + inv);
                let k1 = deriv(a0, st);
                let k2 = deriv(am, [st[0] + 0.5 * h * k1[0], st[1] + 0.5 * h * k1[1]]);
                let k3 = deriv(am, [st[0] + 0.5 * h * k2[0], st[1] + 0.5 * h * k2[1]]);
                let k4 = deriv(a1, [st[0] + h * k3[0], st[1] + h * k3[1]]);
                st[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
                st[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
            }
            out.push(st[0]);
        }
        out
    }

    fn test_record(seed: u64, n: usize) -> GroundMotion {
        // Deterministic band-limited pseudo-record, good enough to exercise
        // the integrators without pulling in the excitation generator.
        let dt = 0.02;
        let accel: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 * dt;
                let p = seed as f64;
                2.0 * (TWO_PI * 1.3 * t + p).sin()
                    + 1.2 * (TWO_PI * 3.1 * t + 0.7 * p).cos()
                    + 0.5 * (TWO_PI * 0.4 * t).sin()
            })
            .collect();
        GroundMotion::new("test", dt, accel).unwrap()
    }

    #[test]
    fn natural_frequency_matches_reference_rows() {
        let s = StructureParams::linear(120.0, 30_000.0, ratio(0.05)).unwrap();
        assert!((natural_frequency(&s) - 2.52).abs() < 0.01);
        let s = StructureParams::linear(80.0, 100_000.0, ratio(0.05)).unwrap();
        assert!((natural_frequency(&s) - 5.63).abs() < 0.01);
        let s = StructureParams::linear(1.0, TWO_PI * TWO_PI, ratio(0.0)).unwrap();
        assert_relative_eq!(natural_frequency(&s), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn damping_coefficient_formulas() {
        let s = StructureParams::linear(100.0, 1e4, ratio(0.0)).unwrap();
        assert_eq!(damping_coefficient(&s), 0.0);

        let s = StructureParams::linear(
            100.0,
            1e4,
            DampingSpec::Rayleigh {
                alpha: 0.0,
                beta: 0.01,
            },
        )
        .unwrap();
        assert_relative_eq!(damping_coefficient(&s), 100.0, max_relative = 1e-12);

        // 2·0.05·√(50000·220) hand-evaluated
        let s = StructureParams::linear(220.0, 50_000.0, ratio(0.05)).unwrap();
        assert_relative_eq!(damping_coefficient(&s), 331.662479, max_relative = 1e-6);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(StructureParams::linear(-1.0, 1e4, ratio(0.05)).is_err());
        assert!(StructureParams::linear(1.0, 0.0, ratio(0.05)).is_err());
        assert!(StructureParams::linear(1.0, 1e4, ratio(1.0)).is_err());
        assert!(StructureParams::bouc_wen(
            1.0,
            1e4,
            ratio(0.05),
            BoucWenParams {
                alpha: 1.0,
                beta: 2.0,
                n: 0.5
            }
        )
        .is_err());
    }

    #[test]
    fn zero_input_zero_state_fixed_point() {
        let gm = zero_record(500, 0.02);
        let ic = InitialConditions::at_rest();

        let lin = StructureParams::linear(100.0, 1e4, ratio(0.05)).unwrap();
        let resp = simulate_linear(&lin, &gm, &ic, 10).unwrap();
        assert!(resp.displacement.iter().all(|&x| x == 0.0));
        assert_eq!(resp.displacement.len(), 500);

        let bw =
            StructureParams::bouc_wen(100.0, 1e4, ratio(0.05), BoucWenParams::default()).unwrap();
        let resp = simulate_bouc_wen(&bw, &gm, &ic, 10).unwrap();
        assert!(resp.displacement.iter().all(|&x| x == 0.0));
        assert!(resp.restoring_force.unwrap().iter().all(|&f| f == 0.0));
    }

    #[test]
    fn undamped_free_vibration_matches_cosine() {
        // x(t) = 0.01·cos(2πt) for k/m = (2π)², x0 = 0.01, v0 = 0.
        let s = StructureParams::linear(1.0, TWO_PI * TWO_PI, ratio(0.0)).unwrap();
        let gm = zero_record(1501, 0.02);
        let ic = InitialConditions {
            x0: 0.01,
            v0: 0.0,
            f0: 0.0,
        };
        let resp = simulate_linear(&s, &gm, &ic, 10).unwrap();

        // Spot value at t = 0.5 s.
        let at_half = resp.displacement[25];
        assert!((at_half - (-0.01)).abs() < 0.01 * 1e-3);

        // Whole 30 s window, 0.1% of the amplitude in max-norm.
        let max_err = resp
            .displacement
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - 0.01 * (TWO_PI * i as f64 * 0.02).cos()).abs())
            .fold(0.0, f64::max);
        assert!(
            max_err < 0.01 * 1e-3,
            "max deviation from cosine {max_err:.3e}"
        );
    }

    #[test]
    fn damped_static_limit() {
        // Constant a_g = 1 m/s²: displacement settles to −m·a_g/k.
        let s = StructureParams::linear(100.0, 1e4, ratio(0.2)).unwrap();
        let n = 2000; // 40 s at dt = 0.02, > 20 natural periods (T = 0.63 s)
        let gm = GroundMotion::new("const", 0.02, vec![1.0; n]).unwrap();
        let resp = simulate_linear(&s, &gm, &InitialConditions::at_rest(), 10).unwrap();
        let settled = *resp.displacement.last().unwrap();
        let expected = -100.0 * 1.0 / 1e4;
        assert!(
            (settled - expected).abs() < expected.abs() * 5e-3,
            "settled at {settled}, expected {expected}"
        );
    }

    #[test]
    fn exact_recurrence_agrees_with_rk4_oracle() {
        let s = StructureParams::linear(150.0, 40_000.0, ratio(0.05)).unwrap();
        let gm = test_record(3, 800);
        let ic = InitialConditions::at_rest();
        let exact = simulate_linear(&s, &gm, &ic, 2).unwrap();
        let oracle = linear_rk4_oracle(&s, &gm, &ic, 50);
        let scale = exact
            .displacement
            .iter()
            .fold(0.0f64, |m, &x| m.max(x.abs()));
        let max_diff = exact
            .displacement
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(
            max_diff < 1e-7 * scale,
            "exact vs RK4 oracle relative diff {:.3e}",
            max_diff / scale
        );
    }

    #[test]
    fn substep_halving_is_inert_for_linear() {
        let s = StructureParams::linear(150.0, 40_000.0, ratio(0.05)).unwrap();
        let gm = test_record(7, 1000);
        let ic = InitialConditions::at_rest();
        let a = simulate_linear(&s, &gm, &ic, 10).unwrap();
        let b = simulate_linear(&s, &gm, &ic, 20).unwrap();
        let scale = a.displacement.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        let diff = a
            .displacement
            .iter()
            .zip(&b.displacement)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-4 * scale);
    }

    #[test]
    fn linearity_of_response() {
        let s = StructureParams::linear(200.0, 50_000.0, ratio(0.05)).unwrap();
        let g1 = test_record(11, 600);
        let g2 = test_record(23, 600);
        let (c1, c2) = (1.7, -0.6);
        let combo: Vec<f64> = g1
            .accel()
            .iter()
            .zip(g2.accel())
            .map(|(a, b)| c1 * a + c2 * b)
            .collect();
        let gc = GroundMotion::new("combo", 0.02, combo).unwrap();
        let ic = InitialConditions::at_rest();
        let r1 = simulate_linear(&s, &g1, &ic, 10).unwrap();
        let r2 = simulate_linear(&s, &g2, &ic, 10).unwrap();
        let rc = simulate_linear(&s, &gc, &ic, 10).unwrap();
        let scale = rc.displacement.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        for i in 0..rc.displacement.len() {
            let lin = c1 * r1.displacement[i] + c2 * r2.displacement[i];
            assert!((rc.displacement[i] - lin).abs() < 1e-10 * scale.max(1e-12));
        }
    }

    #[test]
    fn undamped_energy_drift_is_negligible() {
        let s = StructureParams::linear(1.0, TWO_PI * TWO_PI, ratio(0.0)).unwrap();
        let gm = zero_record(1501, 0.02);
        let ic = InitialConditions {
            x0: 0.01,
            v0: 0.0,
            f0: 0.0,
        };
        let resp = simulate_linear(&s, &gm, &ic, 10).unwrap();
        let vel = resp.velocity.as_ref().unwrap();
        let e0 = 0.5 * TWO_PI * TWO_PI * 0.01 * 0.01;
        for i in 0..resp.displacement.len() {
            let e = 0.5 * TWO_PI * TWO_PI * resp.displacement[i].powi(2)
                + 0.5 * vel[i].powi(2);
            assert!(
                (e - e0).abs() < 1e-3 * e0,
                "energy drifted to {e} from {e0} at step {i}"
            );
        }
    }

    #[test]
    fn bouc_wen_degenerates_to_linear_when_alpha_beta_zero() {
        let bw = StructureParams::bouc_wen(
            120.0,
            30_000.0,
            ratio(0.05),
            BoucWenParams {
                alpha: 0.0,
                beta: 0.0,
                n: 3.0,
            },
        )
        .unwrap();
        let lin = StructureParams::linear(120.0, 30_000.0, ratio(0.05)).unwrap();
        let gm = test_record(5, 1500);
        let ic = InitialConditions::at_rest();

        let hyst = simulate_bouc_wen(&bw, &gm, &ic, 10).unwrap();
        let oracle = linear_rk4_oracle(&lin, &gm, &ic, 10);
        let scale = hyst
            .displacement
            .iter()
            .fold(0.0f64, |m, &x| m.max(x.abs()));
        let max_diff = hyst
            .displacement
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(
            max_diff < 1e-6 * scale,
            "degenerate Bouc-Wen vs linear RK4: {:.3e} relative",
            max_diff / scale
        );
    }

    #[test]
    fn bouc_wen_force_stays_below_ultimate() {
        let bw_params = BoucWenParams::default();
        let s = StructureParams::bouc_wen(120.0, 30_000.0, ratio(0.05), bw_params).unwrap();
        let base = test_record(9, 1500);
        let gm = base.scale_to_pga(9.81).unwrap(); // strong shaking, well past yield
        let resp = simulate_bouc_wen(&s, &gm, &InitialConditions::at_rest(), 10).unwrap();
        let fu = bw_params.ultimate_force(s.stiffness / s.mass);
        let fmax = resp
            .restoring_force
            .unwrap()
            .iter()
            .fold(0.0f64, |m, &f| m.max(f.abs()));
        assert!(fmax <= fu * (1.0 + 1e-3), "fmax {fmax} vs fu {fu}");
        assert!(fmax > 0.99 * fu, "expected yielding, fmax {fmax} vs fu {fu}");
    }

    #[test]
    fn bouc_wen_substep_halving_converged() {
        let s =
            StructureParams::bouc_wen(120.0, 30_000.0, ratio(0.05), BoucWenParams::default())
                .unwrap();
        let gm = test_record(13, 1500).scale_to_pga(5.886).unwrap();
        let ic = InitialConditions::at_rest();
        let a = simulate_bouc_wen(&s, &gm, &ic, 10).unwrap();
        let b = simulate_bouc_wen(&s, &gm, &ic, 20).unwrap();
        let scale = a.displacement.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        let diff = a
            .displacement
            .iter()
            .zip(&b.displacement)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(
            diff < 1e-6 * scale,
            "substep halving moved Bouc-Wen output by {:.3e} relative",
            diff / scale
        );
    }

    #[test]
    fn pushover_zero_path() {
        let s =
            StructureParams::bouc_wen(1.0, 30_000.0, ratio(0.0), BoucWenParams::default()).unwrap();
        let curve = pushover(&s, &[0.0; 8]).unwrap();
        assert_eq!(curve.len(), 8);
        assert!(curve.iter().all(|&(x, f)| x == 0.0 && f == 0.0));
    }

    #[test]
    fn pushover_saturates_at_ultimate_force() {
        let bw = BoucWenParams::default();
        let s = StructureParams::bouc_wen(1.0, 30_000.0, ratio(0.0), bw).unwrap();
        let fu = bw.ultimate_force(30_000.0);
        assert_relative_eq!(fu, 21.544346900318832, max_relative = 1e-12);

        let xy = fu / 30_000.0;
        let path: Vec<f64> = (0..=200).map(|i| i as f64 * 0.1 * xy).collect(); // ramp to 20·x_y
        let curve = pushover(&s, &path).unwrap();
        let f_end = curve.last().unwrap().1;
        assert!(
            (f_end - fu).abs() < 0.01 * fu,
            "pushover saturated at {f_end}, expected {fu}"
        );
        // Monotonic approach from below.
        for w in curve.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-12);
            assert!(w[1].1 <= fu * (1.0 + 1e-9));
        }
    }

    #[test]
    fn pushover_cycles_dissipate_energy() {
        let s =
            StructureParams::bouc_wen(1.0, 30_000.0, ratio(0.0), BoucWenParams::default()).unwrap();
        let fu = BoucWenParams::default().ultimate_force(30_000.0);
        let xy = fu / 30_000.0;
        // Two growing symmetric cycles, 0 → A → −A → 0 each.
        let mut path = vec![0.0];
        for amp_mult in [3.0, 6.0] {
            let a = amp_mult * xy;
            for i in 1..=40 {
                path.push(a * i as f64 / 40.0);
            }
            for i in 1..=80 {
                path.push(a - 2.0 * a * i as f64 / 80.0);
            }
            for i in 1..=40 {
                path.push(-a + a * i as f64 / 40.0);
            }
        }
        let curve = pushover(&s, &path).unwrap();
        let work: f64 = curve.windows(2).map(|w| {
            let (x0, f0) = w[0];
            let (x1, f1) = w[1];
            0.5 * (f0 + f1) * (x1 - x0)
        }).sum();
        assert!(work > 0.0, "hysteresis loops should dissipate, got {work}");
    }

    #[test]
    fn pushover_requires_zero_start() {
        let s =
            StructureParams::bouc_wen(1.0, 30_000.0, ratio(0.0), BoucWenParams::default()).unwrap();
        assert!(matches!(
            pushover(&s, &[0.1, 0.2]),
            Err(DynamicsError::InvalidParameter(_))
        ));
    }

    #[test]
    fn divergence_guard_flags_runaway() {
        // Resonant undamped forcing grows without bound; guard must fire
        // before emitting non-finite values.
        let s = StructureParams::linear(1.0, TWO_PI * TWO_PI, ratio(0.0)).unwrap();
        let accel: Vec<f64> = (0..200_000)
            .map(|i| 2000.0 * (TWO_PI * (i as f64 * 0.02)).sin())
            .collect();
        let gm = GroundMotion::new("resonant", 0.02, accel).unwrap();
        let err = simulate_linear(&s, &gm, &InitialConditions::at_rest(), 4).unwrap_err();
        assert!(matches!(err, DynamicsError::Diverged { .. }));
    }

    mod force_bound_property {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn restoring_force_respects_ultimate_bound(
                alpha in 0.2f64..3.0,
                beta in 0.2f64..3.0,
                n in 1.0f64..4.0,
                mass in 80.0f64..300.0,
                k_kn in 20.0f64..100.0,
                seed in 0u64..40,
            ) {
                let bw = BoucWenParams { alpha, beta, n };
                let s = StructureParams::bouc_wen(mass, k_kn * 1e3, ratio(0.05), bw).unwrap();
                let gm = test_record(seed, 400).scale_to_pga(9.81).unwrap();
                let resp =
                    simulate_bouc_wen(&s, &gm, &InitialConditions::at_rest(), 10).unwrap();
                let fu = bw.ultimate_force(s.stiffness / s.mass);
                let fmax = resp
                    .restoring_force
                    .unwrap()
                    .iter()
                    .fold(0.0f64, |m, &f| m.max(f.abs()));
                prop_assert!(fmax <= fu * (1.0 + 1e-3), "fmax {fmax} vs fu {fu}");
            }
        }
    }

    #[test]
    fn response_csv_round_trip_shape() {
        let resp = ResponseSeries {
            dt: 0.02,
            displacement: vec![0.0, 1.0e-3, -2.0e-3],
            velocity: None,
            restoring_force: None,
        };
        let mut buf = Vec::new();
        resp.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "time_s,displacement_m");
        assert_eq!(lines.count(), 3);
    }
}
