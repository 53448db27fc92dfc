//! Sample-wise bound checks on simulation traces.
//!
//! Observer errors are measured in the Euclidean norm, which dominates the
//! infinity norm used by the consistency measure, so the per-observer
//! envelopes also bound the chained selected-estimate inequality.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridTopology;
use crate::index_set::IndexSet;
use crate::observer::{envelope_check, iss_envelope, EnvelopeCheck, IssEnvelope};
use crate::selector::ObserverBank;
use crate::sim::SimTrace;

/// Absolute plus scale-relative tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Slack {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Slack {
    fn default() -> Self {
        Slack { abs: 1e-6, rel: 1e-3 }
    }
}

impl Slack {
    pub fn at(&self, scale: f64) -> f64 {
        self.abs + self.rel * scale
    }
}

/// Envelopes of every bank observer, tier 1 then tier 2.
pub fn bank_envelopes(bank: &ObserverBank, d_bar: f64) -> Result<Vec<IssEnvelope>> {
    bank.observers().map(|o| iss_envelope(&o.gains, d_bar)).collect()
}

/// Slowest decay rate across the bank.
pub fn slowest_rate(envelopes: &[IssEnvelope]) -> f64 {
    envelopes.iter().map(|e| e.decay_rate).fold(f64::INFINITY, f64::min)
}

/// Running `sup_{s <= t} |a_J(s)|` in the Euclidean norm.
pub fn attack_sup_euclidean(trace: &SimTrace, set: &IndexSet) -> Vec<f64> {
    let mut acc = 0.0_f64;
    trace
        .a
        .iter()
        .map(|a| {
            let m = set.members().iter().map(|&i| a[i] * a[i]).sum::<f64>().sqrt();
            acc = acc.max(m);
            acc
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObserverVerdict {
    pub set: IndexSet,
    pub tier: u8,
    pub check: EnvelopeCheck,
}

/// ISS envelope check for every observer; the slack grows with each envelope's scale.
pub fn observer_envelopes(
    trace: &SimTrace,
    bank: &ObserverBank,
    envelopes: &[IssEnvelope],
    slack: Slack,
) -> Vec<ObserverVerdict> {
    let n1 = bank.tier1().len();
    bank.observers()
        .enumerate()
        .map(|(o, obs)| {
            let err = trace.observer_error(o);
            let sup = attack_sup_euclidean(trace, obs.index_set());
            let raw = envelope_check(&trace.times, &err, &envelopes[o], &sup, 0.0);
            let mut check = envelope_check(&trace.times, &err, &envelopes[o], &sup, slack.at(raw.scale));
            check.scale = raw.scale;
            ObserverVerdict {
                set: obs.index_set().clone(),
                tier: if o < n1 { 1 } else { 2 },
                check,
            }
        })
        .collect()
}

/// Selected-estimate bound per sample, with the bound series itself.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectedBound {
    pub holds: bool,
    pub worst_excess: f64,
    pub scale: f64,
    #[serde(skip)]
    pub bound: Vec<f64>,
    #[serde(skip)]
    pub error: Vec<f64>,
}

/// Three-term bound on `|x - xhat_sigma|_inf` for a known attack support:
/// `beta_Pbar + beta_Ibar + max_{P in Ibar} beta_P`, where `Ibar` is the first
/// attack-free tier-1 set and `Pbar` the first attack-free tier-2 subset of
/// the set selected at that sample.
pub fn selected_bound_series(
    trace: &SimTrace,
    bank: &ObserverBank,
    envelopes: &[IssEnvelope],
    support: &IndexSet,
) -> Result<Vec<f64>> {
    let n1 = bank.tier1().len();
    if trace.is_empty() {
        return Ok(Vec::new());
    }
    let e0: Vec<f64> = (0..bank.len())
        .map(|o| (&trace.x[0] - &trace.xhat[0][o]).norm())
        .collect();
    let beta = |o: usize, t: f64| envelopes[o].beta(e0[o], t);
    let i_bar = bank
        .tier1()
        .iter()
        .position(|o| o.index_set().is_disjoint(support))
        .ok_or_else(|| Error::Argument(format!("attack support {support} leaves no clean tier-1 set")))?;
    // attack-free tier-2 subset of each tier-1 set
    let p_bar: Vec<usize> = (0..n1)
        .map(|s| {
            bank.children(s)
                .iter()
                .copied()
                .find(|&p| bank.tier2()[p].index_set().is_disjoint(support))
                .ok_or_else(|| Error::Argument(format!("attack support {support} exceeds the budget")))
        })
        .collect::<Result<_>>()?;
    Ok(trace
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let s = trace.selection.sigma[k];
            let consistency = bank
                .children(i_bar)
                .iter()
                .map(|&p| beta(n1 + p, t))
                .fold(0.0, f64::max);
            beta(n1 + p_bar[s], t) + beta(i_bar, t) + consistency
        })
        .collect())
}

pub fn selected_error_bound(
    trace: &SimTrace,
    bank: &ObserverBank,
    envelopes: &[IssEnvelope],
    support: &IndexSet,
    slack: Slack,
) -> Result<SelectedBound> {
    let bound = selected_bound_series(trace, bank, envelopes, support)?;
    let error = trace.selected_error();
    let scale = bound.iter().copied().fold(0.0, f64::max);
    let tol = slack.at(scale);
    let worst_excess = error
        .iter()
        .zip(&bound)
        .map(|(e, b)| e - b)
        .fold(f64::NEG_INFINITY, f64::max);
    let holds = error.iter().zip(&bound).all(|(e, b)| *e <= b + tol);
    Ok(SelectedBound {
        holds,
        worst_excess,
        scale,
        bound,
        error,
    })
}

/// First sample time after which the selected error stays below `eps`.
pub fn convergence_time(times: &[f64], error: &[f64], eps: f64) -> Option<f64> {
    let last_bad = error.iter().rposition(|&e| !(e < eps));
    match last_bad {
        None => times.first().copied(),
        Some(k) if k + 1 < times.len() => Some(times[k + 1]),
        Some(_) => None,
    }
}

/// Squared-voltage traces of a grid run.
#[derive(Clone, Debug, PartialEq)]
pub struct VoltageTraces {
    pub true_sq: Vec<DVector<f64>>,
    pub estimated_sq: Vec<DVector<f64>>,
    /// Squared voltages implied by the received, possibly corrupted, measurements.
    pub received_sq: Vec<DVector<f64>>,
    /// Some reconstruction was clamped at zero.
    pub clamped: bool,
}

pub fn voltage_traces(grid: &GridTopology, trace: &SimTrace) -> VoltageTraces {
    let vr2 = grid.v_ref * grid.v_ref;
    let mut clamped = false;
    let estimated_sq = trace
        .selection
        .xhat
        .iter()
        .map(|xh| {
            let r = grid.reconstruct_voltage(xh);
            clamped |= r.clamped;
            r.v_sq
        })
        .collect();
    VoltageTraces {
        true_sq: trace.x.iter().map(|x| grid.distflow_solve(x).v_sq).collect(),
        estimated_sq,
        received_sq: trace.y.iter().map(|y| y.map(|yi| vr2 - yi)).collect(),
        clamped,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VoltageBound {
    pub holds: bool,
    pub worst_excess: f64,
    #[serde(skip)]
    pub bound: Vec<DVector<f64>>,
}

/// `|v_i^2 - vhat_i^2| <= |H_i|_1 * bound(t)` with `bound` bounding the
/// infinity-norm selected error.
pub fn voltage_bound(grid: &GridTopology, volts: &VoltageTraces, selected_bound: &[f64], slack: Slack) -> VoltageBound {
    let h = grid.h_matrix();
    let row_norms: Vec<f64> = (0..h.nrows()).map(|i| h.row(i).iter().map(|v| v.abs()).sum()).collect();
    let mut holds = true;
    let mut worst = f64::NEG_INFINITY;
    let bound: Vec<DVector<f64>> = selected_bound
        .iter()
        .map(|b| DVector::from_iterator(row_norms.len(), row_norms.iter().map(|r| r * b)))
        .collect();
    let scale = bound.iter().map(|b| b.max()).fold(0.0, f64::max);
    let tol = slack.at(scale);
    for ((v, vh), b) in volts.true_sq.iter().zip(&volts.estimated_sq).zip(&bound) {
        for i in 0..v.len() {
            let excess = (v[i] - vh[i]).abs() - b[i];
            worst = worst.max(excess);
            if !(excess <= tol) {
                holds = false;
            }
        }
    }
    VoltageBound {
        holds,
        worst_excess: worst,
        bound,
    }
}
