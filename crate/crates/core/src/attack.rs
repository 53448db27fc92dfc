//! Sensor attack signals and corrupted measurements `y_i = z_i + a_i`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index_set::IndexSet;
use crate::system::LureSystem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSignal {
    /// Constant bias.
    Bias { value: f64 },
    /// `slope * t`, unbounded.
    Ramp { slope: f64 },
    /// `amplitude * sin(omega * t + phase)`
    Sinusoid {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `value` for `t >= time`, zero before.
    Step { time: f64, value: f64 },
    /// Linear interpolation through `(t, a)` points, held flat outside.
    Table { points: Vec<[f64; 2]> },
}

impl AttackSignal {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            AttackSignal::Bias { value } => *value,
            AttackSignal::Ramp { slope } => slope * t,
            AttackSignal::Sinusoid {
                amplitude,
                omega,
                phase,
            } => amplitude * (omega * t + phase).sin(),
            AttackSignal::Step { time, value } => {
                if t >= *time {
                    *value
                } else {
                    0.0
                }
            }
            AttackSignal::Table { points } => {
                let (first, last) = (points[0], points[points.len() - 1]);
                if t <= first[0] {
                    return first[1];
                }
                if t >= last[0] {
                    return last[1];
                }
                let k = points.partition_point(|p| p[0] < t);
                let (a, b) = (points[k - 1], points[k]);
                a[1] + (b[1] - a[1]) * (t - a[0]) / (b[0] - a[0])
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let AttackSignal::Table { points } = self {
            if points.is_empty() || points.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                return Err(Error::Config(
                    "table attack needs strictly increasing time points".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Where the attacker adds its signal.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum AttackDomain {
    /// Directly on the Lur'e output: `y = z + alpha`.
    #[default]
    Output,
    /// On the unsquared voltage of a feeder whose outputs are `z = v_ref^2 - v^2`:
    /// the monitor receives `v + alpha` and converts it back to `v_ref^2 - (v + alpha)^2`.
    Voltage { v_ref: f64 },
}

/// Fixed attack support with one signal per attacked sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackScenario {
    sensors: usize,
    support: IndexSet,
    signals: Vec<Option<AttackSignal>>,
    domain: AttackDomain,
}

impl AttackScenario {
    pub fn none(sensors: usize) -> Self {
        AttackScenario {
            sensors,
            support: IndexSet::default(),
            signals: vec![None; sensors],
            domain: AttackDomain::Output,
        }
    }

    /// `signals` pairs zero-based sensor indices with their signals.
    pub fn new(sensors: usize, signals: Vec<(usize, AttackSignal)>, domain: AttackDomain) -> Result<Self> {
        let support = IndexSet::new(signals.iter().map(|(i, _)| *i).collect(), sensors)?;
        let mut slots = vec![None; sensors];
        for (i, s) in signals {
            s.validate()?;
            slots[i] = Some(s);
        }
        Ok(AttackScenario {
            sensors,
            support,
            signals: slots,
            domain,
        })
    }

    pub fn support(&self) -> &IndexSet {
        &self.support
    }

    pub fn domain(&self) -> AttackDomain {
        self.domain
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors
    }

    pub fn signal(&self, i: usize) -> Option<&AttackSignal> {
        self.signals[i].as_ref()
    }

    pub fn is_admissible(&self, budget: usize) -> bool {
        self.support.len() <= budget
    }

    /// Raw attacker signal per sensor (zero off the support).
    pub fn raw(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.sensors,
            self.signals.iter().map(|s| s.as_ref().map_or(0.0, |s| s.at(t))),
        )
    }

    /// Additive perturbation of the Lur'e outputs `a = y - z` given the true outputs.
    pub fn output_perturbation(&self, z: &DVector<f64>, t: f64) -> DVector<f64> {
        let alpha = self.raw(t);
        match self.domain {
            AttackDomain::Output => alpha,
            AttackDomain::Voltage { v_ref } => {
                let vr2 = v_ref * v_ref;
                DVector::from_fn(z.len(), |i, _| {
                    if alpha[i] == 0.0 {
                        return 0.0;
                    }
                    let v = (vr2 - z[i]).max(0.0).sqrt();
                    voltage_attack_transform(v, alpha[i])
                })
            }
        }
    }

    /// Relabels sensors by `perm[old] = new`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut signals = vec![None; self.sensors];
        for (old, s) in self.signals.iter().enumerate() {
            signals[perm[old]] = s.clone();
        }
        AttackScenario {
            sensors: self.sensors,
            support: self.support.permuted(perm),
            signals,
            domain: self.domain,
        }
    }
}

/// Lur'e-coordinate image of a voltage attack `v -> v + alpha` when the output is
/// `z = v_ref^2 - v^2`: expanding `v_ref^2 - (v + alpha)^2` gives
/// `z - 2 v alpha - alpha^2`.
pub fn voltage_attack_transform(v: f64, alpha: f64) -> f64 {
    -2.0 * v * alpha - alpha * alpha
}

/// `y = H x + w(t) + a(t)`.
pub fn measure(sys: &LureSystem, x: &DVector<f64>, t: f64, attack: &AttackScenario) -> DVector<f64> {
    let z = sys.outputs(x, t);
    if attack.support.is_empty() {
        return z;
    }
    let a = attack.output_perturbation(&z, t);
    z + a
}
