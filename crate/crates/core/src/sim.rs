//! Fixed-step integration of the plant together with the observer bank.
//!
//! The plant does not depend on the observers, so each step first computes
//! the plant stages, evaluates the (possibly attacked) measurements at the
//! stage states and times, and then advances every observer with those
//! stage measurements.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::attack::{measure, AttackScenario};
use crate::error::{Error, Result};
use crate::linalg::select_entries;
use crate::observer::{observer_rhs_at, ObserverState};
use crate::selector::{ObserverBank, SelectionTrace, Selector};
use crate::system::{lure_dynamics, LureSystem};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Rk4,
    Euler,
}

impl Method {
    fn stages(self) -> &'static [(f64, f64)] {
        // (time offset, weight) per stage in units of h
        match self {
            Method::Rk4 => &[(0.0, 1.0 / 6.0), (0.5, 1.0 / 3.0), (0.5, 1.0 / 3.0), (1.0, 1.0 / 6.0)],
            Method::Euler => &[(0.0, 1.0)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub step: f64,
    pub horizon: f64,
    pub method: Method,
    /// Record every `decimation`-th step (the final step is always recorded).
    pub decimation: usize,
    /// Seeds randomized scenario generation only; integration is deterministic.
    pub seed: u64,
    /// Any state component above this magnitude truncates the run.
    pub overflow: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            step: 1e-3,
            horizon: 10.0,
            method: Method::Rk4,
            decimation: 1,
            seed: 0,
            overflow: 1e12,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("step must be positive, got {}", self.step)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!(
                "horizon must be nonnegative, got {}",
                self.horizon
            )));
        }
        if self.horizon > 0.0 && self.step > self.horizon {
            return Err(Error::Config("step exceeds horizon".into()));
        }
        if self.decimation == 0 {
            return Err(Error::Config("decimation must be at least 1".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }
}

/// Plant stage states, times and measurements for one step.
struct PlantStages {
    x_next: DVector<f64>,
    times: Vec<f64>,
    y: Vec<DVector<f64>>,
}

fn plant_stages(
    sys: &LureSystem,
    attack: &AttackScenario,
    x: &DVector<f64>,
    t: f64,
    h: f64,
    method: Method,
) -> Result<PlantStages> {
    let stages = method.stages();
    let mut times = Vec::with_capacity(stages.len());
    let mut y = Vec::with_capacity(stages.len());
    let mut incr = DVector::zeros(x.len());
    let mut prev_k: Option<DVector<f64>> = None;
    for &(c, w) in stages {
        let ts = t + c * h;
        let xs = match &prev_k {
            Some(k) => x + k * (c * h),
            None => x.clone(),
        };
        y.push(measure(sys, &xs, ts, attack));
        let k = lure_dynamics(sys, &xs, ts)?;
        incr += &k * w;
        times.push(ts);
        prev_k = Some(k);
    }
    Ok(PlantStages {
        x_next: x + incr * h,
        times,
        y,
    })
}

fn observer_step(
    obs: &ObserverState,
    sys: &LureSystem,
    stages: &PlantStages,
    h: f64,
    method: Method,
) -> Result<DVector<f64>> {
    let members = obs.index_set().members();
    let mut incr = DVector::zeros(obs.xhat.len());
    let mut prev_k: Option<DVector<f64>> = None;
    for (s, &(c, w)) in method.stages().iter().enumerate() {
        let xs = match &prev_k {
            Some(k) => &obs.xhat + k * (c * h),
            None => obs.xhat.clone(),
        };
        let y_j = select_entries(&stages.y[s], members);
        let k = observer_rhs_at(obs, sys, &xs, &y_j, stages.times[s])?;
        incr += &k * w;
        prev_k = Some(k);
    }
    Ok(&obs.xhat + incr * h)
}

fn exceeds(v: &DVector<f64>, limit: f64) -> bool {
    v.iter().any(|x| !(x.abs() <= limit))
}

/// Advances plant and bank by one step; returns the new plant state.
pub fn step(
    sys: &LureSystem,
    bank: &mut ObserverBank,
    attack: &AttackScenario,
    x: &DVector<f64>,
    t: f64,
    h: f64,
    method: Method,
) -> Result<DVector<f64>> {
    let stages = plant_stages(sys, attack, x, t, h, method)?;
    let next: Vec<DVector<f64>> = bank
        .observers()
        .map(|o| observer_step(o, sys, &stages, h, method))
        .collect::<Result<_>>()?;
    for (o, xh) in bank.observers_mut().zip(next) {
        o.xhat = xh;
    }
    Ok(stages.x_next)
}

/// Recorded trajectories on the decimated grid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimTrace {
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    /// `xhat[k][o]`: estimate of observer `o` (tier 1 then tier 2) at sample `k`.
    pub xhat: Vec<Vec<DVector<f64>>>,
    pub y: Vec<DVector<f64>>,
    /// Additive output perturbation `y - z`.
    pub a: Vec<DVector<f64>>,
    pub selection: SelectionTrace,
    /// Time of the first overflow, when the run was cut short.
    pub truncated_at: Option<f64>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Euclidean estimation error of observer `o` per sample.
    pub fn observer_error(&self, o: usize) -> Vec<f64> {
        self.x
            .iter()
            .zip(&self.xhat)
            .map(|(x, xh)| (x - &xh[o]).norm())
            .collect()
    }

    /// Infinity-norm error of the selected estimate per sample.
    pub fn selected_error(&self) -> Vec<f64> {
        self.x
            .iter()
            .zip(&self.selection.xhat)
            .map(|(x, xh)| (x - xh).amax())
            .collect()
    }
}

fn record(
    trace: &mut SimTrace,
    sys: &LureSystem,
    attack: &AttackScenario,
    bank: &ObserverBank,
    sel: &mut Selector,
    x: &DVector<f64>,
    t: f64,
) {
    let y = measure(sys, x, t, attack);
    let a = &y - sys.outputs(x, t);
    trace.times.push(t);
    trace.x.push(x.clone());
    trace.xhat.push(bank.observers().map(|o| o.xhat.clone()).collect());
    trace.y.push(y);
    trace.a.push(a);
    trace.selection.push(t, sel.choose(bank, t));
}

/// Integrates plant and bank over the horizon, selecting at every recorded sample.
pub fn run(
    sys: &LureSystem,
    bank: &mut ObserverBank,
    attack: &AttackScenario,
    x0: &DVector<f64>,
    cfg: &SimConfig,
    selector: &mut Selector,
) -> Result<SimTrace> {
    cfg.validate()?;
    if x0.len() != sys.state_dim() {
        return Err(Error::dim("initial state", sys.state_dim(), x0.len()));
    }
    let mut trace = SimTrace {
        selection: SelectionTrace::new(bank),
        ..Default::default()
    };
    let mut x = x0.clone();
    record(&mut trace, sys, attack, bank, selector, &x, 0.0);
    let n = cfg.steps();
    for k in 0..n {
        let t = k as f64 * cfg.step;
        let t_next = (k + 1) as f64 * cfg.step;
        let advanced = step(sys, bank, attack, &x, t, cfg.step, cfg.method);
        let blown = match &advanced {
            Ok(xn) => exceeds(xn, cfg.overflow) || bank.observers().any(|o| exceeds(&o.xhat, cfg.overflow)),
            Err(Error::Overflow { .. }) => true,
            Err(_) => false,
        };
        if blown {
            trace.truncated_at = Some(t_next);
            break;
        }
        x = advanced?;
        if (k + 1) % cfg.decimation == 0 || k + 1 == n {
            record(&mut trace, sys, attack, bank, selector, &x, t_next);
        }
    }
    Ok(trace)
}

/// Plant-only trajectory on the same grid and with the same stepping as [`run`].
pub fn run_plant(
    sys: &LureSystem,
    attack: &AttackScenario,
    x0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    cfg.validate()?;
    let mut times = vec![0.0];
    let mut xs = vec![x0.clone()];
    let mut x = x0.clone();
    let n = cfg.steps();
    for k in 0..n {
        let t = k as f64 * cfg.step;
        x = plant_stages(sys, attack, &x, t, cfg.step, cfg.method)?.x_next;
        if exceeds(&x, cfg.overflow) {
            return Err(Error::Overflow { t: t + cfg.step });
        }
        if (k + 1) % cfg.decimation == 0 || k + 1 == n {
            times.push((k + 1) as f64 * cfg.step);
            xs.push(x.clone());
        }
    }
    Ok((times, xs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::AttackDomain;
    use crate::attack::AttackSignal;
    use crate::index_set::IndexSet;
    use crate::observer::ObserverGains;
    use crate::selector::{build_bank, required_sets};
    use crate::system::{KnownInput, Nonlinearity, SlopeBounds};
    use nalgebra::DMatrix;
    use std::collections::BTreeMap;

    fn scalar(a: f64) -> LureSystem {
        LureSystem::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            vec![Nonlinearity::Zero],
            vec![SlopeBounds::new(0.0, 1.0)],
            KnownInput::zero(1),
        )
        .unwrap()
    }

    fn cfg(step: f64, horizon: f64) -> SimConfig {
        SimConfig {
            step,
            horizon,
            ..Default::default()
        }
    }

    fn end(sys: &LureSystem, c: &SimConfig) -> f64 {
        run_plant(sys, &AttackScenario::none(1), &DVector::from_element(1, 1.0), c)
            .unwrap()
            .1
            .last()
            .unwrap()[0]
    }

    #[test]
    fn frozen_system_is_unchanged() {
        let sys = LureSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            vec![Nonlinearity::Zero; 2],
            vec![SlopeBounds::new(0.0, 1.0); 2],
            KnownInput::zero(2),
        )
        .unwrap();
        let x0 = DVector::from_vec(vec![0.123456789, -9.87654321]);
        let (_, xs) = run_plant(&sys, &AttackScenario::none(2), &x0, &cfg(0.01, 1.0)).unwrap();
        assert!(xs.iter().all(|x| x == &x0));
    }

    #[test]
    fn rk4_exponential() {
        let x = end(&scalar(-1.0), &cfg(0.1, 1.0));
        assert!((x - (-1.0f64).exp()).abs() < 1e-6);
        let x = end(&scalar(-1.0), &cfg(0.01, 1.0));
        assert!((x - (-1.0f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn convergence_orders() {
        let exact = (-1.0f64).exp();
        let err = |m: Method, h: f64| {
            let c = SimConfig {
                method: m,
                ..cfg(h, 1.0)
            };
            (end(&scalar(-1.0), &c) - exact).abs()
        };
        let r4 = err(Method::Rk4, 0.1) / err(Method::Rk4, 0.05);
        assert!((r4 - 16.0).abs() < 1.5, "rk4 ratio {r4}");
        let r1 = err(Method::Euler, 0.01) / err(Method::Euler, 0.005);
        assert!((r1 - 2.0).abs() < 0.1, "euler ratio {r1}");
    }

    #[test]
    fn zero_horizon_has_initial_sample_only() {
        let sys = scalar(-1.0);
        let (t, _) = run_plant(
            &sys,
            &AttackScenario::none(1),
            &DVector::from_element(1, 1.0),
            &cfg(0.1, 0.0),
        )
        .unwrap();
        assert_eq!(t, vec![0.0]);
    }

    #[test]
    fn invalid_configs() {
        assert!(cfg(0.0, 1.0).validate().is_err());
        assert!(cfg(2.0, 1.0).validate().is_err());
        assert!(SimConfig {
            decimation: 0,
            ..cfg(0.1, 1.0)
        }
        .validate()
        .is_err());
    }

    fn bank_for(sys: &LureSystem, l: f64) -> ObserverBank {
        let n = sys.state_dim();
        let (a, b) = required_sets(n, 0).unwrap();
        let gains: BTreeMap<IndexSet, ObserverGains> = a
            .iter()
            .chain(&b)
            .map(|s| {
                (
                    s.clone(),
                    ObserverGains {
                        index_set: s.clone(),
                        p: DMatrix::identity(n, n),
                        l: DMatrix::from_element(n, s.len(), l),
                        k: DMatrix::zeros(n, s.len()),
                        nu: 1.0,
                        mu: 1.0,
                    },
                )
            })
            .collect();
        build_bank(sys, 0, &gains, &DVector::zeros(n), &BTreeMap::new()).unwrap()
    }

    #[test]
    fn observers_do_not_disturb_plant_and_runs_repeat() {
        let sys = scalar(-0.5);
        let atk = AttackScenario::new(1, vec![(0, AttackSignal::Bias { value: 0.3 })], AttackDomain::Output).unwrap();
        let x0 = DVector::from_element(1, 2.0);
        let c = SimConfig {
            decimation: 7,
            ..cfg(0.01, 3.0)
        };
        let (t, xs) = run_plant(&sys, &atk, &x0, &c).unwrap();
        let mut b1 = bank_for(&sys, 2.0);
        let tr1 = run(&sys, &mut b1, &atk, &x0, &c, &mut Selector::default()).unwrap();
        assert_eq!(tr1.times, t);
        assert_eq!(tr1.x, xs);
        let mut b2 = bank_for(&sys, 2.0);
        let tr2 = run(&sys, &mut b2, &atk, &x0, &c, &mut Selector::default()).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(*tr1.times.last().unwrap(), 3.0);
    }

    #[test]
    fn attack_free_observer_converges() {
        let sys = scalar(-0.5);
        let mut b = bank_for(&sys, 2.0);
        let tr = run(
            &sys,
            &mut b,
            &AttackScenario::none(1),
            &DVector::from_element(1, 2.0),
            &cfg(0.01, 10.0),
            &mut Selector::default(),
        )
        .unwrap();
        // error decays at rate a - l = -2.5
        let e = tr.observer_error(0);
        assert!((e.last().unwrap() - 2.0 * (-25.0f64).exp()).abs() < 1e-12);
        assert!(tr.truncated_at.is_none());
    }

    #[test]
    fn divergent_observer_truncates() {
        let sys = scalar(-0.5);
        let mut b = bank_for(&sys, -10.0);
        let c = SimConfig {
            overflow: 1e6,
            ..cfg(0.01, 100.0)
        };
        let tr = run(
            &sys,
            &mut b,
            &AttackScenario::none(1),
            &DVector::from_element(1, 2.0),
            &c,
            &mut Selector::default(),
        )
        .unwrap();
        let t = tr.truncated_at.expect("run should be truncated");
        assert!(t < 100.0);
        assert!(tr.xhat.iter().flatten().all(|v| v[0].abs() <= 1e6));
    }
}
