//! Circle-criterion observer for one sensor index set and its ISS envelope.
//!
//! For an index set `J` the observer is
//!
//! ```text
//! dxhat/dt = A xhat + phi(xi) + L (y_J - H_J xhat - w_J)
//! xi       = H xhat + w + K (y_J - H_J xhat - w_J)
//! ```
//!
//! where `xi` uses the full output matrix and the full known input, and `K`
//! maps the `#J`-dimensional residual into all `N` nonlinearity arguments.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index_set::IndexSet;
use crate::linalg::{all_finite, is_symmetric, mat_norm_inf, select_entries, select_rows, sym_eig_range};
use crate::system::LureSystem;

/// Certificate `(P, L, K, nu, mu)` for one index set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverGains {
    pub index_set: IndexSet,
    pub p: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub nu: f64,
    pub mu: f64,
}

impl ObserverGains {
    /// Structural checks: shapes, exact symmetry and positive definiteness of `P`.
    pub fn validate(&self, state_dim: usize, sensors: usize) -> Result<()> {
        let nj = self.index_set.len();
        if self.p.shape() != (state_dim, state_dim) {
            return Err(Error::dim("P", format!("{state_dim}x{state_dim}"), shape(&self.p)));
        }
        if self.l.shape() != (state_dim, nj) {
            return Err(Error::dim("L", format!("{state_dim}x{nj}"), shape(&self.l)));
        }
        if self.k.shape() != (sensors, nj) {
            return Err(Error::dim("K", format!("{sensors}x{nj}"), shape(&self.k)));
        }
        if self.index_set.members().iter().any(|&i| i >= sensors) {
            return Err(Error::Argument(format!(
                "index set {} exceeds sensor count",
                self.index_set
            )));
        }
        if !is_symmetric(&self.p) {
            return Err(Error::Argument("P is not symmetric".into()));
        }
        if !(self.nu >= 0.0 && self.mu >= 0.0) {
            return Err(Error::Argument("nu and mu must be nonnegative".into()));
        }
        let (lo, _) = sym_eig_range(&self.p);
        if !(lo > 0.0) {
            return Err(Error::Argument(format!(
                "P is not positive definite (min eigenvalue {lo:e})"
            )));
        }
        Ok(())
    }
}

fn shape(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

/// Running estimate of one observer in the bank.
#[derive(Clone, Debug)]
pub struct ObserverState {
    pub xhat: DVector<f64>,
    pub gains: ObserverGains,
    h_j: DMatrix<f64>,
}

impl ObserverState {
    pub fn new(sys: &LureSystem, gains: ObserverGains, xhat0: DVector<f64>) -> Result<Self> {
        gains.validate(sys.state_dim(), sys.sensor_count())?;
        if xhat0.len() != sys.state_dim() {
            return Err(Error::dim("initial estimate", sys.state_dim(), xhat0.len()));
        }
        if !all_finite(&xhat0) {
            return Err(Error::Argument("initial estimate must be finite".into()));
        }
        let h_j = select_rows(sys.h(), gains.index_set.members());
        Ok(ObserverState {
            xhat: xhat0,
            gains,
            h_j,
        })
    }

    pub fn index_set(&self) -> &IndexSet {
        &self.gains.index_set
    }

    /// Output rows `H_J` used by this observer.
    pub fn h_j(&self) -> &DMatrix<f64> {
        &self.h_j
    }
}

/// `gain * (y_J - (H_J xhat + w_J))`.
pub fn output_injection(
    gain: &DMatrix<f64>,
    y_j: &DVector<f64>,
    xhat: &DVector<f64>,
    w_j: &DVector<f64>,
    h_j: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let nj = y_j.len();
    if w_j.len() != nj || h_j.nrows() != nj || gain.ncols() != nj {
        return Err(Error::dim(
            "output injection",
            format!("residual length {nj}"),
            format!(
                "w_J {}, H_J {} rows, gain {} cols",
                w_j.len(),
                h_j.nrows(),
                gain.ncols()
            ),
        ));
    }
    if h_j.ncols() != xhat.len() {
        return Err(Error::dim("output injection H_J columns", xhat.len(), h_j.ncols()));
    }
    Ok(gain * (y_j - (h_j * xhat + w_j)))
}

/// Observer vector field evaluated at `obs.xhat` for the (possibly corrupted)
/// outputs `y_j` of its own index set.
pub fn observer_rhs(obs: &ObserverState, sys: &LureSystem, y_j: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    let xhat = &obs.xhat;
    observer_rhs_at(obs, sys, xhat, y_j, t)
}

/// Same as [`observer_rhs`] but at an arbitrary estimate (integrator stages).
pub fn observer_rhs_at(
    obs: &ObserverState,
    sys: &LureSystem,
    xhat: &DVector<f64>,
    y_j: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    let w = sys.known_input(t);
    let members = obs.gains.index_set.members();
    let w_j = select_entries(&w, members);
    let residual = y_j - (&obs.h_j * xhat + &w_j);
    if residual.len() != members.len() {
        return Err(Error::dim("observer outputs", members.len(), y_j.len()));
    }
    let xi = sys.h() * xhat + w + &obs.gains.k * &residual;
    let dx = sys.a() * xhat + sys.apply_phi(&xi) + &obs.gains.l * &residual;
    if !all_finite(&dx) {
        return Err(Error::Overflow { t });
    }
    Ok(dx)
}

/// Explicit envelope `|e(t)| <= c e^{-lambda t / 2} |e(0)| + g sup|a_J|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IssEnvelope {
    /// `nu / lambda_max(P)`
    pub decay_rate: f64,
    /// `sqrt(lambda_max(P) / lambda_min(P))`
    pub overshoot: f64,
    /// `sqrt(alpha / (decay_rate * lambda_min(P)))`
    pub gain: f64,
    /// `2 mu (d^2 |K|^2 + |L|^2) / lambda_max(P)`
    pub alpha: f64,
}

impl IssEnvelope {
    /// Transient term `beta(r, t)`.
    pub fn beta(&self, r: f64, t: f64) -> f64 {
        self.overshoot * (-0.5 * self.decay_rate * t).exp() * r
    }

    /// Attack-gain term `gamma(r)`.
    pub fn gamma(&self, r: f64) -> f64 {
        self.gain * r
    }

    pub fn bound(&self, e0: f64, t: f64, attack_sup: f64) -> f64 {
        self.beta(e0, t) + self.gamma(attack_sup)
    }
}

/// Envelope constants of a certificate; `d_bar` is the largest upper slope.
pub fn iss_envelope(gains: &ObserverGains, d_bar: f64) -> Result<IssEnvelope> {
    if !(gains.nu > 0.0) {
        return Err(Error::NonStrictCertificate { nu: gains.nu });
    }
    let (pmin, pmax) = sym_eig_range(&gains.p);
    if !(pmin > 0.0) {
        return Err(Error::Argument("P is not positive definite".into()));
    }
    let decay_rate = gains.nu / pmax;
    let k = mat_norm_inf(&gains.k);
    let l = mat_norm_inf(&gains.l);
    let alpha = 2.0 * gains.mu * (d_bar * d_bar * k * k + l * l) / pmax;
    Ok(IssEnvelope {
        decay_rate,
        overshoot: (pmax / pmin).sqrt(),
        gain: (alpha / (decay_rate * pmin)).sqrt(),
        alpha,
    })
}

/// Outcome of comparing an error trace with its envelope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnvelopeCheck {
    pub holds: bool,
    /// Largest `error - bound` over the trace (negative when the bound holds with room).
    pub worst_excess: f64,
    /// Largest bound value over the trace.
    pub scale: f64,
}

/// Sample-wise check of `err(t) <= beta(err(0), t) + gamma(attack_sup(t)) + slack`.
pub fn check_envelope(times: &[f64], trace_error: &[f64], env: &IssEnvelope, attack_sup: &[f64], slack: f64) -> bool {
    envelope_check(times, trace_error, env, attack_sup, slack).holds
}

pub fn envelope_check(
    times: &[f64],
    trace_error: &[f64],
    env: &IssEnvelope,
    attack_sup: &[f64],
    slack: f64,
) -> EnvelopeCheck {
    assert_eq!(times.len(), trace_error.len(), "misaligned error trace");
    assert_eq!(times.len(), attack_sup.len(), "misaligned attack trace");
    let Some(&e0) = trace_error.first() else {
        return EnvelopeCheck {
            holds: true,
            worst_excess: f64::NEG_INFINITY,
            scale: 0.0,
        };
    };
    let mut worst = f64::NEG_INFINITY;
    let mut scale = 0.0_f64;
    let mut holds = true;
    for ((&t, &e), &s) in times.iter().zip(trace_error).zip(attack_sup) {
        let b = env.bound(e0, t, s);
        scale = scale.max(b);
        worst = worst.max(e - b);
        if !(e <= b + slack) {
            holds = false;
        }
    }
    EnvelopeCheck {
        holds,
        worst_excess: worst,
        scale,
    }
}

/// Running maximum `sup_{s <= t_k} |a_J(s)|` from sampled attack vectors.
pub fn running_attack_sup(attacks: &[DVector<f64>], set: &IndexSet) -> Vec<f64> {
    let mut acc = 0.0_f64;
    attacks
        .iter()
        .map(|a| {
            let m = set.members().iter().fold(0.0_f64, |m, &i| m.max(a[i].abs()));
            acc = acc.max(m);
            acc
        })
        .collect()
}
