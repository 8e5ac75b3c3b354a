//! Spiking-neuron dynamics and surrogate gradients.
//!
//! Every model follows the same three-phase step: charge the membrane to
//! `H(t)` from the previous potential and the input current, fire where
//! `H(t)` reaches the threshold, then reset the fired neurons. Arithmetic is
//! done in `f64` and rounded once when the state is stored.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    /// `V = H(1 - S) + V_reset * S`
    #[default]
    Hard,
    /// `V = H - S * V_th`
    Subtract,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub tau: f32,
    pub v_rest: f32,
    pub v_th: f32,
    pub v_reset: f32,
    #[serde(default)]
    pub reset_mode: ResetMode,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau: 2.0,
            v_rest: 0.0,
            v_th: 1.0,
            v_reset: 0.0,
            reset_mode: ResetMode::Hard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EifParams {
    pub tau: f32,
    pub v_rest: f32,
    pub v_th: f32,
    pub v_reset: f32,
    /// Sharpness of the exponential drive.
    pub delta_t: f32,
    /// Rheobase potential.
    pub theta_rh: f32,
    #[serde(default)]
    pub reset_mode: ResetMode,
}

impl Default for EifParams {
    fn default() -> Self {
        Self {
            tau: 2.0,
            v_rest: 0.0,
            v_th: 1.0,
            v_reset: 0.0,
            delta_t: 1.0,
            theta_rh: 0.8,
            reset_mode: ResetMode::Hard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IzhikevichParams {
    pub a: f32,
    pub b: f32,
    pub c: f32,
    pub d: f32,
    pub v_peak: f32,
    /// Integration step in ms.
    pub dt: f32,
    /// Multiplier applied to the input current before it enters the
    /// quadratic dynamics; lets unit-scale spike inputs reach the mV regime.
    pub input_gain: f32,
}

impl Default for IzhikevichParams {
    fn default() -> Self {
        Self {
            a: 0.02,
            b: 0.2,
            c: -65.0,
            d: 8.0,
            v_peak: 30.0,
            dt: 1.0,
            input_gain: 1.0,
        }
    }
}

/// Non-leaky integrate-and-fire neuron used by converted networks: `H = V + X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IfParams {
    pub v_th: f32,
    pub v_reset: f32,
    pub reset_mode: ResetMode,
}

impl Default for IfParams {
    fn default() -> Self {
        Self {
            v_th: 1.0,
            v_reset: 0.0,
            reset_mode: ResetMode::Subtract,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NeuronModel {
    Lif(LifParams),
    Eif(EifParams),
    Izhikevich(IzhikevichParams),
    If(IfParams),
}

impl Default for NeuronModel {
    fn default() -> Self {
        NeuronModel::Lif(LifParams::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SurrogateKind {
    ATan { alpha: f32 },
    PiecewiseLeakyReLU { w: f32, c: f32 },
}

impl Default for SurrogateKind {
    fn default() -> Self {
        SurrogateKind::ATan { alpha: 2.0 }
    }
}

impl SurrogateKind {
    pub fn atan() -> Self {
        Self::default()
    }

    pub fn piecewise_leaky_relu() -> Self {
        SurrogateKind::PiecewiseLeakyReLU { w: 1.0, c: 0.01 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SurrogateKind::ATan { alpha } if !(alpha > 0.0) => {
                Err(Error::config(format!("ATan alpha must be > 0, got {alpha}")))
            }
            SurrogateKind::PiecewiseLeakyReLU { w, c } if !(w > 0.0) || !(0.0..1.0).contains(&c) => {
                Err(Error::config(format!(
                    "PiecewiseLeakyReLU needs w > 0 and 0 <= c < 1, got w={w}, c={c}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Smooth stand-in for the Heaviside step, evaluated at `x = H - V_th`.
///
/// ATan is `atan(pi/2 * alpha * x) / pi + 1/2`. The piecewise variant is the
/// integral of its gradient: linear with slope `1/(2w)` on `[-w, w]` rising
/// from 0 to 1, continued with slope `c` outside.
pub fn surrogate_value(x: f64, kind: SurrogateKind) -> f64 {
    match kind {
        SurrogateKind::ATan { alpha } => (FRAC_PI_2 * alpha as f64 * x).atan() / PI + 0.5,
        SurrogateKind::PiecewiseLeakyReLU { w, c } => {
            let (w, c) = (w as f64, c as f64);
            if x < -w {
                c * (x + w)
            } else if x > w {
                1.0 + c * (x - w)
            } else {
                x / (2.0 * w) + 0.5
            }
        }
    }
}

/// Derivative of [`surrogate_value`].
pub fn surrogate_grad(x: f64, kind: SurrogateKind) -> f64 {
    match kind {
        SurrogateKind::ATan { alpha } => {
            let alpha = alpha as f64;
            let z = FRAC_PI_2 * alpha * x;
            alpha / (2.0 * (1.0 + z * z))
        }
        SurrogateKind::PiecewiseLeakyReLU { w, c } => {
            if x.abs() <= w as f64 {
                1.0 / (2.0 * w as f64)
            } else {
                c as f64
            }
        }
    }
}

/// How the spike nonlinearity is evaluated in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpikeFn {
    /// Heaviside: binary spikes.
    Hard,
    /// `surrogate_value` replaces the step (used to verify gradients).
    Soft(SurrogateKind),
}

impl SpikeFn {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            SpikeFn::Hard => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            SpikeFn::Soft(kind) => surrogate_value(x, kind),
        }
    }
}

/// Membrane state of a population; `u` is only used by Izhikevich neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronState {
    pub v: Vec<f32>,
    pub u: Vec<f32>,
}

/// Result of one step of a population.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub spikes: Vec<f32>,
    pub state: NeuronState,
    pub charge: Vec<f32>,
}

/// Partial derivatives of one neuron's charge step, evaluated at the
/// previous state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargeJacobian {
    pub dh_dv: f64,
    pub dh_du: f64,
    pub dh_dx: f64,
    /// Recovery update `u' = f(v, u)`; identity for single-variable models.
    pub du_dv: f64,
    pub du_du: f64,
}

impl NeuronModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        match *self {
            NeuronModel::Lif(p) => {
                if !(p.tau > 0.0) {
                    return bad(format!("LIF tau must be > 0, got {}", p.tau));
                }
                if p.reset_mode == ResetMode::Hard && !(p.v_th > p.v_rest) {
                    return bad("LIF v_th must exceed v_rest for hard reset".into());
                }
            }
            NeuronModel::Eif(p) => {
                if !(p.tau > 0.0) || !(p.delta_t > 0.0) {
                    return bad("EIF needs tau > 0 and delta_t > 0".into());
                }
            }
            NeuronModel::Izhikevich(p) => {
                if !(p.dt > 0.0) {
                    return bad("Izhikevich dt must be > 0".into());
                }
            }
            NeuronModel::If(p) => {
                if !(p.v_th > 0.0) {
                    return bad("IF v_th must be > 0".into());
                }
            }
        }
        Ok(())
    }

    pub fn threshold(&self) -> f32 {
        match *self {
            NeuronModel::Lif(p) => p.v_th,
            NeuronModel::Eif(p) => p.v_th,
            NeuronModel::Izhikevich(p) => p.v_peak,
            NeuronModel::If(p) => p.v_th,
        }
    }

    pub fn reset_mode(&self) -> ResetMode {
        match *self {
            NeuronModel::Lif(p) => p.reset_mode,
            NeuronModel::Eif(p) => p.reset_mode,
            NeuronModel::Izhikevich(_) => ResetMode::Hard,
            NeuronModel::If(p) => p.reset_mode,
        }
    }

    pub fn reset_value(&self) -> f32 {
        match *self {
            NeuronModel::Lif(p) => p.v_reset,
            NeuronModel::Eif(p) => p.v_reset,
            NeuronModel::Izhikevich(p) => p.c,
            NeuronModel::If(p) => p.v_reset,
        }
    }

    pub fn has_recovery(&self) -> bool {
        matches!(self, NeuronModel::Izhikevich(_))
    }

    /// Fresh state for `n` neurons: potentials at the reset value.
    pub fn initial_state(&self, n: usize) -> NeuronState {
        match *self {
            NeuronModel::Izhikevich(p) => NeuronState {
                v: vec![p.c; n],
                u: vec![p.b * p.c; n],
            },
            _ => NeuronState {
                v: vec![self.reset_value(); n],
                u: Vec::new(),
            },
        }
    }

    /// Charge `H` and the pre-reset recovery variable for one neuron.
    #[inline]
    pub fn charge(&self, v: f64, u: f64, x: f64) -> (f64, f64) {
        match *self {
            NeuronModel::Lif(p) => {
                let tau = p.tau as f64;
                (v + (-(v - p.v_rest as f64) + x) / tau, u)
            }
            NeuronModel::Eif(p) => {
                let tau = p.tau as f64;
                let dt = p.delta_t as f64;
                let drive = dt * ((v - p.theta_rh as f64) / dt).exp();
                (v + (-(v - p.v_rest as f64) + drive + x) / tau, u)
            }
            NeuronModel::Izhikevich(p) => {
                let dt = p.dt as f64;
                let i = p.input_gain as f64 * x;
                let h = v + dt * (0.04 * v * v + 5.0 * v + 140.0 - u + i);
                let u_next = u + dt * p.a as f64 * (p.b as f64 * v - u);
                (h, u_next)
            }
            NeuronModel::If(_) => (v + x, u),
        }
    }

    #[inline]
    pub fn jacobian(&self, v: f64, _u: f64) -> ChargeJacobian {
        match *self {
            NeuronModel::Lif(p) => {
                let inv = 1.0 / p.tau as f64;
                ChargeJacobian {
                    dh_dv: 1.0 - inv,
                    dh_du: 0.0,
                    dh_dx: inv,
                    du_dv: 0.0,
                    du_du: 1.0,
                }
            }
            NeuronModel::Eif(p) => {
                let inv = 1.0 / p.tau as f64;
                let e = ((v - p.theta_rh as f64) / p.delta_t as f64).exp();
                ChargeJacobian {
                    dh_dv: 1.0 - inv + e * inv,
                    dh_du: 0.0,
                    dh_dx: inv,
                    du_dv: 0.0,
                    du_du: 1.0,
                }
            }
            NeuronModel::Izhikevich(p) => {
                let dt = p.dt as f64;
                ChargeJacobian {
                    dh_dv: 1.0 + dt * (0.08 * v + 5.0),
                    dh_du: -dt,
                    dh_dx: dt * p.input_gain as f64,
                    du_dv: dt * p.a as f64 * p.b as f64,
                    du_du: 1.0 - dt * p.a as f64,
                }
            }
            NeuronModel::If(_) => ChargeJacobian {
                dh_dv: 1.0,
                dh_du: 0.0,
                dh_dx: 1.0,
                du_dv: 0.0,
                du_du: 1.0,
            },
        }
    }

    /// Potential after the reset rule for charge `h` and spike value `s`.
    #[inline]
    pub fn reset(&self, h: f64, s: f64) -> f64 {
        let th = self.threshold() as f64;
        match self.reset_mode() {
            ResetMode::Hard => h * (1.0 - s) + self.reset_value() as f64 * s,
            ResetMode::Subtract => h - s * th,
        }
    }

    /// Recovery variable after the spike-triggered jump.
    #[inline]
    pub fn reset_recovery(&self, u_next: f64, s: f64) -> f64 {
        match *self {
            NeuronModel::Izhikevich(p) => u_next + p.d as f64 * s,
            _ => u_next,
        }
    }

    /// Advances `state` one step in place. `spikes` and `charge` receive
    /// `S(t)` and `H(t)`.
    pub fn step_in_place(
        &self,
        state: &mut NeuronState,
        input: &[f32],
        spike_fn: SpikeFn,
        spikes: &mut [f32],
        charge: &mut [f32],
    ) {
        let th = self.threshold() as f64;
        let rec = self.has_recovery();
        for i in 0..input.len() {
            let u = if rec { state.u[i] as f64 } else { 0.0 };
            let (h, u_next) = self.charge(state.v[i] as f64, u, input[i] as f64);
            let s = spike_fn.eval(h - th);
            state.v[i] = self.reset(h, s) as f32;
            if rec {
                state.u[i] = self.reset_recovery(u_next, s) as f32;
            }
            spikes[i] = s as f32;
            charge[i] = h as f32;
        }
    }

    /// Pure single step with input validation.
    pub fn step(&self, state: &NeuronState, input: &[f32]) -> Result<StepOutput> {
        if state.v.len() != input.len() || (self.has_recovery() && state.u.len() != input.len()) {
            return Err(Error::shape(format!(
                "neuron state has {} neurons, input has {}",
                state.v.len(),
                input.len()
            )));
        }
        if let Some(i) = input.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("input current {i} is not finite")));
        }
        let mut next = state.clone();
        let mut spikes = vec![0f32; input.len()];
        let mut charge = vec![0f32; input.len()];
        self.step_in_place(&mut next, input, SpikeFn::Hard, &mut spikes, &mut charge);
        Ok(StepOutput {
            spikes,
            state: next,
            charge,
        })
    }
}

pub fn lif_step(state: &NeuronState, input: &[f32], params: &LifParams) -> Result<StepOutput> {
    NeuronModel::Lif(*params).step(state, input)
}

pub fn eif_step(state: &NeuronState, input: &[f32], params: &EifParams) -> Result<StepOutput> {
    NeuronModel::Eif(*params).step(state, input)
}

pub fn izhikevich_step(
    state: &NeuronState,
    input: &[f32],
    params: &IzhikevichParams,
) -> Result<StepOutput> {
    NeuronModel::Izhikevich(*params).step(state, input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(v: f32) -> NeuronState {
        NeuronState {
            v: vec![v],
            u: Vec::new(),
        }
    }

    #[test]
    fn lif_subthreshold() {
        let out = lif_step(&single(0.4), &[1.0], &LifParams::default()).unwrap();
        assert!((out.charge[0] - 0.7).abs() < 1e-6);
        assert_eq!(out.spikes, vec![0.0]);
        assert!((out.state.v[0] - 0.7).abs() < 1e-6);
    }

    #[test]
    fn lif_fires_and_resets() {
        let hard = lif_step(&single(0.5), &[2.4], &LifParams::default()).unwrap();
        assert!((hard.charge[0] - 1.45).abs() < 1e-6);
        assert_eq!(hard.spikes, vec![1.0]);
        assert_eq!(hard.state.v[0], 0.0);

        let p = LifParams {
            reset_mode: ResetMode::Subtract,
            ..LifParams::default()
        };
        let sub = lif_step(&single(0.5), &[2.4], &p).unwrap();
        assert!((sub.state.v[0] - 0.45).abs() < 1e-6);
    }

    #[test]
    fn lif_rejects_non_finite_input() {
        assert!(lif_step(&single(0.0), &[f32::NAN], &LifParams::default()).is_err());
        assert!(lif_step(&single(0.0), &[1.0, 2.0], &LifParams::default()).is_err());
    }

    #[test]
    fn eif_exponential_drive() {
        let out = eif_step(&single(0.0), &[0.0], &EifParams::default()).unwrap();
        let expected = 0.5 * (-0.8f64).exp();
        assert!((out.charge[0] as f64 - expected).abs() < 1e-6);
        assert!((expected - 0.22466).abs() < 1e-5);
    }

    #[test]
    fn eif_reduces_to_lif_without_drive() {
        // A vanishing sharpness drives delta_t * exp((v - theta)/delta_t) to 0.
        let eif = EifParams {
            delta_t: 1e-3,
            ..EifParams::default()
        };
        for (v, x) in [(0.0, 0.3), (0.2, 1.1), (0.5, 2.4), (-0.3, 0.0)] {
            let a = eif_step(&single(v), &[x], &eif).unwrap();
            let b = lif_step(&single(v), &[x], &LifParams::default()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn eif_fires_and_resets() {
        let out = eif_step(&single(0.9), &[2.0], &EifParams::default()).unwrap();
        assert!(out.charge[0] >= 1.0);
        assert_eq!(out.spikes[0], 1.0);
        assert_eq!(out.state.v[0], 0.0);
    }

    #[test]
    fn izhikevich_step_arithmetic() {
        let st = NeuronState {
            v: vec![-65.0],
            u: vec![-13.0],
        };
        let out = izhikevich_step(&st, &[10.0], &IzhikevichParams::default()).unwrap();
        assert!((out.state.v[0] + 58.0).abs() < 1e-4, "{}", out.state.v[0]);
        assert_eq!(out.spikes[0], 0.0);
    }

    #[test]
    fn izhikevich_fixed_point() {
        // 0.04 v^2 + 5 v + 140 = u with u = b v (b = 0.2) has root
        // v = (-4.8 + sqrt(4.8^2 - 4*0.04*140)) / 0.08 = -70
        let p = IzhikevichParams::default();
        let st = NeuronState {
            v: vec![-70.0],
            u: vec![-14.0],
        };
        let out = izhikevich_step(&st, &[0.0], &p).unwrap();
        assert!((out.state.v[0] + 70.0).abs() < 1e-4);
        assert!((out.state.u[0] + 14.0).abs() < 1e-5);
    }

    #[test]
    fn izhikevich_spike_reset() {
        let p = IzhikevichParams::default();
        let st = NeuronState {
            v: vec![29.0],
            u: vec![-10.0],
        };
        let out = izhikevich_step(&st, &[5.0], &p).unwrap();
        assert_eq!(out.spikes[0], 1.0);
        assert_eq!(out.state.v[0], -65.0);
        let u_next = -10.0 + 0.02 * (0.2 * 29.0 + 10.0);
        assert!((out.state.u[0] as f64 - (u_next + 8.0)).abs() < 1e-5);
    }

    #[test]
    fn surrogate_examples() {
        let at = SurrogateKind::atan();
        assert_eq!(surrogate_value(0.0, at), 0.5);
        assert_eq!(surrogate_grad(0.0, at), 1.0);
        let g1 = surrogate_grad(1.0, at);
        assert!((g1 - 2.0 / (2.0 * (1.0 + PI * PI))).abs() < 1e-12);
        assert!((g1 - 0.09200).abs() < 1e-5);
        let pl = SurrogateKind::piecewise_leaky_relu();
        assert_eq!(surrogate_grad(0.5, pl), 0.5);
        assert!((surrogate_grad(2.0, pl) - 0.01).abs() < 1e-9);
        assert_eq!(surrogate_value(0.0, pl), 0.5);
        assert_eq!(surrogate_value(1.0, pl), 1.0);
        assert_eq!(surrogate_value(-1.0, pl), 0.0);
    }

    #[test]
    fn surrogate_validation() {
        assert!(SurrogateKind::ATan { alpha: 0.0 }.validate().is_err());
        assert!(SurrogateKind::PiecewiseLeakyReLU { w: 1.0, c: 1.0 }
            .validate()
            .is_err());
        assert!(SurrogateKind::piecewise_leaky_relu().validate().is_ok());
    }

    proptest! {
        #[test]
        fn leak_contracts_toward_rest(v in -5.0f32..0.99, tau in 1.01f32..10.0) {
            let p = LifParams { tau, ..LifParams::default() };
            let out = lif_step(&single(v), &[0.0], &p).unwrap();
            prop_assume!(out.spikes[0] == 0.0);
            prop_assert!(out.charge[0].abs() < v.abs() || v == 0.0);
        }

        #[test]
        fn spikes_are_binary_and_subtract_is_exact(v in -2.0f32..2.0, x in -5.0f32..5.0) {
            let p = LifParams { reset_mode: ResetMode::Subtract, ..LifParams::default() };
            let out = lif_step(&single(v), &[x], &p).unwrap();
            prop_assert!(out.spikes[0] == 0.0 || out.spikes[0] == 1.0);
            if out.spikes[0] == 1.0 {
                let expected = (out.charge[0] as f64 - 1.0) as f32;
                prop_assert!((out.state.v[0] - expected).abs() <= f32::EPSILON * 4.0);
            }
        }

        #[test]
        fn atan_grad_even_and_positive(x in -50.0f64..50.0, alpha in 0.1f32..8.0) {
            let k = SurrogateKind::ATan { alpha };
            prop_assert!(surrogate_grad(x, k) > 0.0);
            prop_assert_eq!(surrogate_grad(x, k), surrogate_grad(-x, k));
        }
    }
}
