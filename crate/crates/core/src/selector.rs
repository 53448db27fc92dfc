//! Two-tier observer bank and consistency-based selection.
//!
//! Tier 1 holds one observer per sensor set of size `N - M`, tier 2 one per
//! set of size `N - 2M`. The consistency of a tier-1 set `S` is the largest
//! infinity-norm deviation between its estimate and those of the tier-2 sets
//! it contains; the selected estimate is the tier-1 estimate of smallest
//! consistency, ties going to the lexicographically first set.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index_set::{k_subsets, IndexSet};
use crate::linalg::norm_inf;
use crate::observer::{ObserverGains, ObserverState};
use crate::system::LureSystem;

/// Checks the redundancy condition `N > 2M`.
pub fn check_redundancy(sensors: usize, budget: usize) -> Result<()> {
    if sensors > 2 * budget {
        Ok(())
    } else {
        Err(Error::InsufficientRedundancy { sensors, budget })
    }
}

/// Tier-1 and tier-2 index sets in lexicographic order (identical when `M = 0`).
pub fn required_sets(sensors: usize, budget: usize) -> Result<(Vec<IndexSet>, Vec<IndexSet>)> {
    check_redundancy(sensors, budget)?;
    Ok((
        k_subsets(sensors, sensors - budget)?,
        k_subsets(sensors, sensors - 2 * budget)?,
    ))
}

#[derive(Clone, Debug)]
pub struct ObserverBank {
    sensors: usize,
    budget: usize,
    tier1: Vec<ObserverState>,
    tier2: Vec<ObserverState>,
    /// `children[s]` lists the tier-2 observers whose sets lie inside tier-1 set `s`.
    children: Vec<Vec<usize>>,
}

/// Builds the bank with every observer started at `xhat0`, except where
/// `initial` overrides the start for a given set (applied to both tiers).
pub fn build_bank(
    sys: &LureSystem,
    budget: usize,
    gains: &BTreeMap<IndexSet, ObserverGains>,
    xhat0: &DVector<f64>,
    initial: &BTreeMap<IndexSet, DVector<f64>>,
) -> Result<ObserverBank> {
    let sensors = sys.sensor_count();
    let (sets1, sets2) = required_sets(sensors, budget)?;
    let mut missing: Vec<IndexSet> = sets1
        .iter()
        .chain(&sets2)
        .filter(|s| !gains.contains_key(*s))
        .cloned()
        .collect();
    missing.dedup();
    if !missing.is_empty() {
        return Err(Error::MissingGains(missing));
    }
    let make = |set: &IndexSet| -> Result<ObserverState> {
        let g = gains[set].clone();
        if &g.index_set != set {
            return Err(Error::Argument(format!(
                "gains filed under {set} are certified for {}",
                g.index_set
            )));
        }
        let x0 = initial.get(set).unwrap_or(xhat0).clone();
        ObserverState::new(sys, g, x0)
    };
    let tier1 = sets1.iter().map(make).collect::<Result<Vec<_>>>()?;
    let tier2 = sets2.iter().map(make).collect::<Result<Vec<_>>>()?;
    let children = sets1
        .iter()
        .map(|s| {
            sets2
                .iter()
                .enumerate()
                .filter(|(_, p)| p.is_subset_of(s))
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    Ok(ObserverBank {
        sensors,
        budget,
        tier1,
        tier2,
        children,
    })
}

impl ObserverBank {
    pub fn sensor_count(&self) -> usize {
        self.sensors
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn tier1(&self) -> &[ObserverState] {
        &self.tier1
    }

    pub fn tier2(&self) -> &[ObserverState] {
        &self.tier2
    }

    pub fn len(&self) -> usize {
        self.tier1.len() + self.tier2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tier-1 observers followed by tier-2 observers.
    pub fn observers(&self) -> impl Iterator<Item = &ObserverState> {
        self.tier1.iter().chain(&self.tier2)
    }

    pub fn observers_mut(&mut self) -> impl Iterator<Item = &mut ObserverState> {
        self.tier1.iter_mut().chain(self.tier2.iter_mut())
    }

    /// Tier-2 indices contained in tier-1 observer `s`.
    pub fn children(&self, s: usize) -> &[usize] {
        &self.children[s]
    }

    pub fn tier1_index(&self, set: &IndexSet) -> Option<usize> {
        self.tier1.iter().position(|o| o.index_set() == set)
    }

    pub fn tier2_index(&self, set: &IndexSet) -> Option<usize> {
        self.tier2.iter().position(|o| o.index_set() == set)
    }

    /// Consistency measure of tier-1 observer `s`.
    pub fn consistency(&self, s: usize) -> f64 {
        let xs = &self.tier1[s].xhat;
        self.children[s]
            .iter()
            .map(|&p| norm_inf(&(xs - &self.tier2[p].xhat)))
            .fold(0.0, f64::max)
    }

    pub fn consistencies(&self) -> Vec<f64> {
        (0..self.tier1.len()).map(|s| self.consistency(s)).collect()
    }

    pub fn select(&self) -> Selection {
        let pi = self.consistencies();
        let sigma = argmin_first(&pi);
        Selection {
            sigma,
            set: self.tier1[sigma].index_set().clone(),
            xhat: self.tier1[sigma].xhat.clone(),
            pi,
        }
    }
}

/// First index attaining the minimum; NaN entries never win.
pub fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] || values[best].is_nan() && !v.is_nan() {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    /// Index into the tier-1 observers.
    pub sigma: usize,
    pub set: IndexSet,
    pub xhat: DVector<f64>,
    pub pi: Vec<f64>,
}

/// Selection rule applied at each recorded sample. With a dwell time the
/// selected set is held for at least that long after each switch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Selector {
    pub dwell_time: Option<f64>,
    #[serde(skip)]
    held: Option<(usize, f64)>,
}

impl Selector {
    pub fn new(dwell_time: Option<f64>) -> Self {
        Selector { dwell_time, held: None }
    }

    pub fn choose(&mut self, bank: &ObserverBank, t: f64) -> Selection {
        let mut sel = bank.select();
        if let (Some(dwell), Some((held, since))) = (self.dwell_time, self.held) {
            if held != sel.sigma && t - since < dwell {
                sel.sigma = held;
                sel.set = bank.tier1[held].index_set().clone();
                sel.xhat = bank.tier1[held].xhat.clone();
            }
        }
        match self.held {
            Some((h, _)) if h == sel.sigma => {}
            _ => self.held = Some((sel.sigma, t)),
        }
        sel
    }
}

/// Per-sample record of the selection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelectionTrace {
    pub sets: Vec<IndexSet>,
    pub times: Vec<f64>,
    /// `pi[k][s]`: consistency of tier-1 set `s` at sample `k`.
    pub pi: Vec<Vec<f64>>,
    pub sigma: Vec<usize>,
    pub xhat: Vec<DVector<f64>>,
}

impl SelectionTrace {
    pub fn new(bank: &ObserverBank) -> Self {
        SelectionTrace {
            sets: bank.tier1.iter().map(|o| o.index_set().clone()).collect(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, t: f64, sel: Selection) {
        self.times.push(t);
        self.pi.push(sel.pi);
        self.sigma.push(sel.sigma);
        self.xhat.push(sel.xhat);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn selected_set(&self, k: usize) -> &IndexSet {
        &self.sets[self.sigma[k]]
    }

    /// First sample from which the selection never changes, if any.
    pub fn settles_at(&self) -> Option<usize> {
        let last = *self.sigma.last()?;
        let k = self.sigma.iter().rposition(|&s| s != last).map_or(0, |k| k + 1);
        Some(k)
    }
}
