//! Radial low-voltage feeder with droop-controlled inverters.
//!
//! Customers `1..=N` hang off connection points along a line fed from the
//! substation. Segment `i` (impedance `R_i + jX_i`, `i = 0..N-1`) joins
//! connection point `i` to `i + 1`; customer `i` reaches its connection point
//! through a service drop `R'_{i-1} + jX'_{i-1}`. Line flows follow the
//! linearized DistFlow relations and each inverter tracks a piecewise
//! saturating droop set-point of `w = v_ref^2 - v^2` with first-order lag.
//!
//! In Lur'e coordinates the state is the generated reactive power `q_g`, the
//! outputs are `z_i = v_ref^2 - v_i^2`, and `z = H q_g + w` with `H` and the
//! constant input `w` assembled from the impedances and loads.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{KnownInput, LureSystem, Nonlinearity, SlopeBounds};

pub use crate::attack::voltage_attack_transform as attack_transform;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridTopology {
    /// Line segment resistances `R_0..R_{N-1}`.
    pub r: Vec<f64>,
    /// Line segment reactances `X_0..X_{N-1}`.
    pub x: Vec<f64>,
    /// Service-drop resistances, entry `i - 1` for customer `i`.
    pub r_service: Vec<f64>,
    /// Service-drop reactances, entry `i - 1` for customer `i`.
    pub x_service: Vec<f64>,
    /// Inverter time constants (s).
    pub tau: Vec<f64>,
    /// Inverter apparent-power ratings.
    pub s_bar: Vec<f64>,
    /// Active generation.
    pub rho_g: Vec<f64>,
    /// Active consumption.
    pub rho_c: Vec<f64>,
    /// Reactive consumption.
    pub q_c: Vec<f64>,
    pub w_min: Vec<f64>,
    pub w_m: Vec<f64>,
    pub w_n: Vec<f64>,
    pub w_max: Vec<f64>,
    #[serde(default = "one")]
    pub v_ref: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Squared-voltage reference at the substation is `v_head^2`.
    #[serde(default = "one")]
    pub v_head: f64,
}

fn one() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.05
}

impl GridTopology {
    /// A homogeneous feeder used by the bundled scenarios.
    pub fn example(n: usize) -> Self {
        let v = |x: f64| vec![x; n];
        GridTopology {
            r: (0..n).map(|i| 0.04 + 0.01 * (i % 3) as f64).collect(),
            x: (0..n).map(|i| 0.03 + 0.005 * (i % 4) as f64).collect(),
            r_service: v(0.02),
            x_service: v(0.01),
            tau: (0..n).map(|i| 1.0 + 0.25 * (i % 2) as f64).collect(),
            s_bar: v(1.0),
            rho_g: v(0.8),
            rho_c: v(0.5),
            q_c: v(0.1),
            w_min: v(-0.08),
            w_m: v(-0.02),
            w_n: v(0.02),
            w_max: v(0.08),
            v_ref: 1.0,
            delta: 0.05,
            v_head: 1.0,
        }
    }

    pub fn customers(&self) -> usize {
        self.tau.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.customers();
        if n == 0 {
            return Err(Error::Config("feeder needs at least one customer".into()));
        }
        let arrays: [(&str, &Vec<f64>); 13] = [
            ("r", &self.r),
            ("x", &self.x),
            ("r_service", &self.r_service),
            ("x_service", &self.x_service),
            ("tau", &self.tau),
            ("s_bar", &self.s_bar),
            ("rho_g", &self.rho_g),
            ("rho_c", &self.rho_c),
            ("q_c", &self.q_c),
            ("w_min", &self.w_min),
            ("w_m", &self.w_m),
            ("w_n", &self.w_n),
            ("w_max", &self.w_max),
        ];
        for (name, a) in arrays {
            if a.len() != n {
                return Err(Error::Config(format!(
                    "grid.{name} has {} entries, expected {n}",
                    a.len()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("grid.{name} must be finite")));
            }
        }
        for (name, a) in [
            ("r", &self.r),
            ("x", &self.x),
            ("r_service", &self.r_service),
            ("x_service", &self.x_service),
        ] {
            if a.iter().any(|&v| v < 0.0) {
                return Err(Error::Config(format!("grid.{name} must be nonnegative")));
            }
        }
        for i in 0..n {
            let c = i + 1;
            if !(self.tau[i] > 0.0) {
                return Err(Error::Config(format!("customer {c}: tau must be positive")));
            }
            if !(self.w_min[i] <= self.w_m[i]
                && self.w_m[i] <= 0.0
                && 0.0 <= self.w_n[i]
                && self.w_n[i] <= self.w_max[i])
            {
                return Err(Error::Config(format!(
                    "customer {c}: droop breakpoints must satisfy w_min <= w_m <= 0 <= w_n <= w_max"
                )));
            }
            if self.s_bar[i] * self.s_bar[i] < self.rho_g[i] * self.rho_g[i] {
                return Err(Error::Config(format!("customer {c}: s_bar^2 must be at least rho_g^2")));
            }
        }
        if !(self.delta > 0.0 && self.v_ref.is_finite() && self.v_head.is_finite()) {
            return Err(Error::Config("delta must be positive and voltages finite".into()));
        }
        Ok(())
    }

    /// Reactive saturation limit `sqrt(s_bar^2 - rho_g^2)` of customer index `i` (zero-based).
    pub fn q_bar(&self, i: usize) -> f64 {
        (self.s_bar[i] * self.s_bar[i] - self.rho_g[i] * self.rho_g[i])
            .max(0.0)
            .sqrt()
    }

    /// Net active injections `rho = rho_g - rho_c`.
    pub fn rho(&self) -> Vec<f64> {
        self.rho_g.iter().zip(&self.rho_c).map(|(g, c)| g - c).collect()
    }

    /// Droop set-point of customer `i` for squared-voltage deviation `w`.
    pub fn droop(&self, i: usize, w: f64) -> f64 {
        let q = self.q_bar(i);
        let (wmin, wm, wn, wmax) = (self.w_min[i], self.w_m[i], self.w_n[i], self.w_max[i]);
        if w <= wmin {
            -q
        } else if w <= wm {
            -(1.0 - (w - wmin) / (wm - wmin)) * q
        } else if w <= wn {
            0.0
        } else if w <= wmax {
            (w - wn) / (wmax - wn) * q
        } else {
            q
        }
    }

    fn droop_ratios(&self, i: usize) -> Result<(f64, f64)> {
        let upper = self.w_max[i] - self.w_n[i];
        let lower = self.w_m[i] - self.w_min[i];
        if !(upper > 0.0 && lower > 0.0) {
            return Err(Error::DegenerateDroop { customer: i + 1 });
        }
        let q = self.q_bar(i);
        Ok((q / upper, q / lower))
    }

    /// `min` of the two droop branch slopes.
    pub fn droop_slope_bound(&self, i: usize) -> Result<f64> {
        let (a, b) = self.droop_ratios(i)?;
        Ok(a.min(b))
    }

    /// Steepest droop branch slope, the true Lipschitz constant of the droop.
    pub fn droop_max_slope(&self, i: usize) -> Result<f64> {
        let (a, b) = self.droop_ratios(i)?;
        Ok(a.max(b))
    }

    /// Droop as piecewise-linear knots, scaled by `scale`.
    fn droop_knots(&self, i: usize, scale: f64) -> Vec<[f64; 2]> {
        let q = self.q_bar(i) * scale;
        let mut knots = vec![[self.w_min[i], -q], [self.w_m[i], 0.0]];
        if self.w_n[i] > self.w_m[i] {
            knots.push([self.w_n[i], 0.0]);
        }
        knots.push([self.w_max[i], q]);
        knots
    }

    /// `H_ik = -2 sum_{j < min(i,k)} X_j - 2 delta_ik X'_{i-1}` (customers one-based).
    pub fn h_matrix(&self) -> DMatrix<f64> {
        let n = self.customers();
        let mut prefix = vec![0.0; n + 1];
        for j in 0..n {
            prefix[j + 1] = prefix[j] + self.x[j];
        }
        DMatrix::from_fn(n, n, |r, c| {
            let m = r.min(c) + 1;
            let diag = if r == c { self.x_service[r] } else { 0.0 };
            -2.0 * prefix[m] - 2.0 * diag
        })
    }

    /// Part of `z_i` that does not depend on `q_g`.
    pub fn known_input(&self) -> DVector<f64> {
        let n = self.customers();
        let rho = self.rho();
        // downstream sums over customers k > j, for segment j
        let mut down_q = vec![0.0; n + 1];
        let mut down_rho = vec![0.0; n + 1];
        for j in (0..n).rev() {
            down_q[j] = down_q[j + 1] + self.q_c[j];
            down_rho[j] = down_rho[j + 1] + rho[j];
        }
        let base = self.v_ref * self.v_ref - self.v_head * self.v_head;
        let mut acc = 0.0;
        DVector::from_fn(n, |i, _| {
            acc += 2.0 * self.x[i] * down_q[i] - 2.0 * self.r[i] * down_rho[i];
            base + acc - 2.0 * self.r_service[i] * rho[i] + 2.0 * self.x_service[i] * self.q_c[i]
        })
    }

    /// The feeder in Lur'e form. The upper slope of customer `i` is its
    /// steepest droop slope divided by `tau_i`.
    pub fn compile_lure(&self) -> Result<LureSystem> {
        self.validate()?;
        let n = self.customers();
        let a = DMatrix::from_fn(n, n, |r, c| if r == c { -1.0 / self.tau[r] } else { 0.0 });
        let mut phi = Vec::with_capacity(n);
        let mut slopes = Vec::with_capacity(n);
        for i in 0..n {
            let d = self.droop_max_slope(i)?;
            if !(d > 0.0) {
                return Err(Error::Config(format!(
                    "customer {}: inverter has no reactive capacity",
                    i + 1
                )));
            }
            phi.push(Nonlinearity::PiecewiseLinear {
                knots: self.droop_knots(i, 1.0 / self.tau[i]),
            });
            slopes.push(SlopeBounds::new(0.0, d / self.tau[i]));
        }
        LureSystem::new(
            a,
            self.h_matrix(),
            phi,
            slopes,
            KnownInput::Constant(self.known_input()),
        )
    }

    /// Linearized DistFlow solution for generated reactive power `q_g`.
    pub fn distflow_solve(&self, q_g: &DVector<f64>) -> GridState {
        let n = self.customers();
        let rho = self.rho();
        let q: Vec<f64> = (0..n).map(|i| q_g[i] - self.q_c[i]).collect();
        // no flow beyond the last customer: P_N = Q_N = 0
        let mut p_flow = vec![0.0; n + 1];
        let mut q_flow = vec![0.0; n + 1];
        for i in (0..n).rev() {
            p_flow[i] = p_flow[i + 1] - rho[i];
            q_flow[i] = q_flow[i + 1] - q[i];
        }
        let mut v_prime_sq = vec![self.v_head * self.v_head; n + 1];
        for i in 0..n {
            v_prime_sq[i + 1] = v_prime_sq[i] - 2.0 * (self.r[i] * p_flow[i] + self.x[i] * q_flow[i]);
        }
        let v_sq = (0..n)
            .map(|i| v_prime_sq[i + 1] + 2.0 * (self.r_service[i] * rho[i] + self.x_service[i] * q[i]))
            .collect();
        p_flow.truncate(n);
        q_flow.truncate(n);
        GridState {
            q_g: q_g.clone(),
            p_flow,
            q_flow,
            v_prime_sq,
            v_sq: DVector::from_vec(v_sq),
        }
    }

    /// Squared-voltage estimates `v_ref^2 - H_i xhat - w_i`, clamped at zero.
    pub fn reconstruct_voltage(&self, xhat: &DVector<f64>) -> Reconstruction {
        let raw = DVector::from_element(self.customers(), self.v_ref * self.v_ref)
            - self.h_matrix() * xhat
            - self.known_input();
        let clamped = raw.iter().any(|&v| v < 0.0);
        Reconstruction {
            v_sq: raw.map(|v| v.max(0.0)),
            clamped,
        }
    }
}

/// Flows and voltages implied by a reactive generation profile.
#[derive(Clone, Debug, PartialEq)]
pub struct GridState {
    pub q_g: DVector<f64>,
    /// `P_i` from connection point `i` to `i + 1`, `i = 0..N-1`.
    pub p_flow: Vec<f64>,
    pub q_flow: Vec<f64>,
    /// Connection-point squared voltages `v'_0..v'_N`.
    pub v_prime_sq: Vec<f64>,
    /// Customer squared voltages `v_1..v_N`.
    pub v_sq: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub v_sq: DVector<f64>,
    /// Some raw estimate was negative and got clamped.
    pub clamped: bool,
}

/// Squared safety band `[(v_ref - delta)^2, (v_ref + delta)^2]`.
pub fn safety_band_sq(v_ref: f64, delta: f64) -> Result<(f64, f64)> {
    if v_ref - delta < 0.0 {
        return Err(Error::Config(format!(
            "safety band lower edge v_ref - delta = {} is negative",
            v_ref - delta
        )));
    }
    Ok(((v_ref - delta).powi(2), (v_ref + delta).powi(2)))
}

/// In-band flags per sample and customer for squared voltages.
pub fn safety_monitor(v_sq: &[DVector<f64>], v_ref: f64, delta: f64) -> Result<Vec<Vec<bool>>> {
    let (lo, hi) = safety_band_sq(v_ref, delta)?;
    Ok(v_sq
        .iter()
        .map(|v| v.iter().map(|&s| lo <= s && s <= hi).collect())
        .collect())
}

/// A raw measurement left the band while the reconstruction stayed inside.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FalseAlarmAverted {
    pub t: f64,
    /// One-based customer number.
    pub customer: usize,
}

/// First sample per customer at which the raw squared measurement is out of
/// band while the reconstructed squared voltage is in band.
pub fn false_alarms_averted(
    times: &[f64],
    raw_v_sq: &[DVector<f64>],
    reconstructed_v_sq: &[DVector<f64>],
    v_ref: f64,
    delta: f64,
) -> Result<Vec<FalseAlarmAverted>> {
    let raw = safety_monitor(raw_v_sq, v_ref, delta)?;
    let rec = safety_monitor(reconstructed_v_sq, v_ref, delta)?;
    let n = raw.first().map_or(0, |r| r.len());
    let mut events = Vec::new();
    for i in 0..n {
        if let Some(k) = (0..times.len()).find(|&k| !raw[k][i] && rec[k][i]) {
            events.push(FalseAlarmAverted {
                t: times[k],
                customer: i + 1,
            });
        }
    }
    Ok(events)
}
