//! Scenario files: configuration, gains caching and end-to-end runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{AttackDomain, AttackScenario, AttackSignal};
use crate::checks::{
    bank_envelopes, convergence_time, observer_envelopes, selected_error_bound, voltage_bound, voltage_traces, Slack,
    VoltageTraces,
};
use crate::error::{Error, Result};
use crate::grid::{false_alarms_averted, safety_monitor, FalseAlarmAverted, GridTopology};
use crate::index_set::IndexSet;
use crate::io::{
    ensure_dir, fmt_f64, gains_file_name, read_gains_dir, write_gains, write_trace, Manifest, ManifestEntry,
    SolverMeta, Table,
};
use crate::lmi::{synthesize, verify_gains, LmiProblem, SynthesisOptions};
use crate::observer::ObserverGains;
use crate::selector::{build_bank, required_sets, ObserverBank, Selector};
use crate::sim::{run, SimConfig, SimTrace};
use crate::system::{KnownInput, LureSystem, Nonlinearity, SlopeBounds};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub system: Option<RawSystem>,
    #[serde(default)]
    pub grid: Option<GridTopology>,
    pub attack: AttackConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub synthesis: SynthesisOptions,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Lur'e system given directly by its matrices, one row per inner list.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSystem {
    pub a: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub nonlinearity: Vec<Nonlinearity>,
    /// `[lower, upper]` per sensor; defaults to the nonlinearity's own bounds.
    #[serde(default)]
    pub slopes: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub input: InputSpec,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    #[default]
    Zero,
    Constant {
        value: Vec<f64>,
    },
    Sinusoid {
        offset: Vec<f64>,
        amplitude: Vec<f64>,
        omega: Vec<f64>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Largest number of sensors the attacker may corrupt.
    pub budget: usize,
    #[serde(default)]
    pub domain: DomainSpec,
    #[serde(default)]
    pub signals: Vec<AttackEntry>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSpec {
    #[default]
    Output,
    /// Additive attack on the unsquared voltage measurement (grid scenarios only).
    Voltage,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackEntry {
    /// One-based sensor number.
    pub sensor: usize,
    pub signal: AttackSignal,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Plant initial state; drawn uniformly from `[-random_box, random_box]` when absent
    /// and `random_box` is set, zero otherwise.
    #[serde(default)]
    pub x: Option<Vec<f64>>,
    /// Common observer initial estimate (zero when absent).
    #[serde(default)]
    pub xhat: Option<Vec<f64>>,
    #[serde(default)]
    pub random_box: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(default)]
    pub dwell_time: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksConfig {
    pub envelopes: bool,
    pub selected_bound: bool,
    pub voltage_bound: bool,
    pub slack_abs: f64,
    pub slack_rel: f64,
    /// Expected final selected set (one-based); the selection must settle on it.
    pub settle_on: Option<IndexSet>,
    /// The selected error must end below this value.
    pub converge_eps: Option<f64>,
    /// Require a raw measurement to leave the safety band while the
    /// reconstruction and the true voltages stay inside.
    pub false_alarm_averted: bool,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        ChecksConfig {
            envelopes: true,
            selected_bound: true,
            voltage_bound: true,
            slack_abs: 1e-6,
            slack_rel: 1e-3,
            settle_on: None,
            converge_eps: None,
            false_alarm_averted: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub plots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { plots: true }
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if nr == 0 || rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Config(format!(
            "system.{what} must be a non-empty rectangular matrix"
        )));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

impl RawSystem {
    pub fn compile(&self) -> Result<LureSystem> {
        let a = matrix(&self.a, "a")?;
        let h = matrix(&self.h, "h")?;
        let n = h.nrows();
        let slopes = match &self.slopes {
            Some(s) => s.iter().map(|b| SlopeBounds::new(b[0], b[1])).collect(),
            None => self
                .nonlinearity
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    f.natural_slope_bounds()
                        .filter(|b| b.upper > 0.0 && b.lower >= 0.0)
                        .ok_or_else(|| Error::Config(format!("system.slopes needed for sensor {}", i + 1)))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let len_ok = |v: &Vec<f64>| v.len() == n;
        let input = match &self.input {
            InputSpec::Zero => KnownInput::zero(n),
            InputSpec::Constant { value } if len_ok(value) => KnownInput::Constant(DVector::from_vec(value.clone())),
            InputSpec::Sinusoid {
                offset,
                amplitude,
                omega,
            } if len_ok(offset) && len_ok(amplitude) && len_ok(omega) => KnownInput::Sinusoid {
                offset: DVector::from_vec(offset.clone()),
                amplitude: DVector::from_vec(amplitude.clone()),
                omega: DVector::from_vec(omega.clone()),
            },
            _ => return Err(Error::Config(format!("system.input entries must have length {n}"))),
        };
        LureSystem::new(a, h, self.nonlinearity.clone(), slopes, input).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Compiled scenario ready to run.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub system: LureSystem,
    pub grid: Option<GridTopology>,
    pub attack: AttackScenario,
    pub budget: usize,
    pub x0: DVector<f64>,
    pub xhat0: DVector<f64>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies command-line overrides of the seeds and the LMI tolerance.
    pub fn apply_overrides(&mut self, seed: Option<u64>, tol: Option<f64>) {
        if let Some(s) = seed {
            self.synthesis.seed = s;
            self.sim.seed = s;
        }
        if let Some(t) = tol {
            self.synthesis.psd_tol = t;
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| "scenario".into())
    }

    /// Hash of everything the gains depend on: the system section and the synthesis settings.
    pub fn input_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.system)?);
        h.update(serde_json::to_vec(&self.grid)?);
        h.update(serde_json::to_vec(&self.synthesis)?);
        Ok(hex::encode(h.finalize()))
    }

    pub fn compile(&self) -> Result<Scenario> {
        let (system, grid) = match (&self.system, &self.grid) {
            (Some(raw), None) => (raw.compile()?, None),
            (None, Some(g)) => (
                g.compile_lure().map_err(|e| Error::Config(e.to_string()))?,
                Some(g.clone()),
            ),
            _ => return Err(Error::Config("exactly one of [system] and [grid] must be given".into())),
        };
        let n = system.sensor_count();
        let budget = self.attack.budget;
        crate::selector::check_redundancy(n, budget)?;
        let domain = match (self.attack.domain, &grid) {
            (DomainSpec::Output, _) => AttackDomain::Output,
            (DomainSpec::Voltage, Some(g)) => AttackDomain::Voltage { v_ref: g.v_ref },
            (DomainSpec::Voltage, None) => {
                return Err(Error::Config("voltage-domain attacks need a [grid] section".into()))
            }
        };
        let mut signals = Vec::new();
        for e in &self.attack.signals {
            if e.sensor == 0 || e.sensor > n {
                return Err(Error::Config(format!("attack sensor {} outside 1..={n}", e.sensor)));
            }
            if signals.iter().any(|(i, _)| *i == e.sensor - 1) {
                return Err(Error::Config(format!("attack sensor {} listed twice", e.sensor)));
            }
            signals.push((e.sensor - 1, e.signal.clone()));
        }
        let attack = AttackScenario::new(n, signals, domain)?;
        if !attack.is_admissible(budget) {
            return Err(Error::Config(format!(
                "attack support {} has {} sensors but the budget is M = {budget}",
                attack.support(),
                attack.support().len()
            )));
        }
        self.sim.validate()?;
        let vec_of = |v: &Vec<f64>, what: &str| -> Result<DVector<f64>> {
            if v.len() != n {
                return Err(Error::Config(format!("initial.{what} must have length {n}")));
            }
            Ok(DVector::from_vec(v.clone()))
        };
        let x0 = match (&self.initial.x, self.initial.random_box) {
            (Some(x), _) => vec_of(x, "x")?,
            (None, Some(b)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.sim.seed);
                DVector::from_fn(n, |_, _| rng.gen_range(-b..=b))
            }
            (None, None) => DVector::zeros(n),
        };
        let xhat0 = match &self.initial.xhat {
            Some(x) => vec_of(x, "xhat")?,
            None => DVector::zeros(n),
        };
        Ok(Scenario {
            system,
            grid,
            attack,
            budget,
            x0,
            xhat0,
        })
    }
}

/// One row of the synthesis summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthesisRow {
    pub index_set: IndexSet,
    pub lambda_max: f64,
    pub nu: f64,
    pub mu: f64,
}

#[derive(Clone, Debug)]
pub struct GainsSet {
    pub gains: BTreeMap<IndexSet, ObserverGains>,
    pub rows: Vec<SynthesisRow>,
    pub cached: bool,
}

fn gains_dir(out: &Path) -> PathBuf {
    out.join("gains")
}

/// Synthesizes certificates for both tiers into `out/gains`, reusing cached
/// files when the manifest hash matches.
pub fn synthesize_gains(cfg: &ScenarioConfig, sc: &Scenario, out: &Path) -> Result<GainsSet> {
    let dir = ensure_dir(&gains_dir(out))?;
    let hash = cfg.input_hash()?;
    if let Some(m) = Manifest::read(&dir)? {
        if m.input_hash == hash {
            let gains = read_gains_dir(&dir, &m)?;
            let rows = m
                .entries
                .iter()
                .map(|e| SynthesisRow {
                    index_set: e.index_set.clone(),
                    lambda_max: e.lambda_max,
                    nu: e.nu,
                    mu: e.mu,
                })
                .collect();
            return Ok(GainsSet {
                gains,
                rows,
                cached: true,
            });
        }
    }
    let (t1, t2) = required_sets(sc.system.sensor_count(), sc.budget)?;
    let mut sets = t1;
    for s in t2 {
        if !sets.contains(&s) {
            sets.push(s);
        }
    }
    let mut gains = BTreeMap::new();
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for set in sets {
        let prob = LmiProblem::for_system(&sc.system, set.clone())?;
        match synthesize(&prob, &cfg.synthesis) {
            Ok(r) => {
                let file = gains_file_name(&set);
                let meta = SolverMeta {
                    seed: r.seed,
                    restart: r.restart,
                    lambda_max: r.lambda_max,
                    p_max: r.p_max,
                };
                write_gains(&dir.join(&file), &r.gains, sc.system.sensor_count(), meta)?;
                entries.push(ManifestEntry {
                    index_set: set.clone(),
                    file,
                    lambda_max: r.lambda_max,
                    nu: r.gains.nu,
                    mu: r.gains.mu,
                });
                gains.insert(set, r.gains);
            }
            Err(Error::Infeasible { set, best_lambda_max }) => failures.push((set, best_lambda_max)),
            Err(e) => return Err(e),
        }
    }
    if !failures.is_empty() {
        return Err(Error::SynthesisFailed(failures));
    }
    let manifest = Manifest {
        input_hash: hash,
        entries,
    };
    manifest.write(&dir)?;
    let rows = manifest
        .entries
        .iter()
        .map(|e| SynthesisRow {
            index_set: e.index_set.clone(),
            lambda_max: e.lambda_max,
            nu: e.nu,
            mu: e.mu,
        })
        .collect();
    Ok(GainsSet {
        gains,
        rows,
        cached: false,
    })
}

/// Loads previously synthesized gains, refusing stale ones.
pub fn load_gains(cfg: &ScenarioConfig, out: &Path) -> Result<BTreeMap<IndexSet, ObserverGains>> {
    let dir = gains_dir(out);
    let m = Manifest::read(&dir)?
        .ok_or_else(|| Error::Config(format!("no gains manifest in {}; run synthesize first", dir.display())))?;
    if m.input_hash != cfg.input_hash()? {
        return Err(Error::Config(format!(
            "gains in {} are stale for this configuration",
            dir.display()
        )));
    }
    read_gains_dir(&dir, &m)
}

/// Pass/fail verdict of one invariant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub invariant: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub name: String,
    pub sensors: usize,
    pub budget: usize,
    pub attack_support: IndexSet,
    pub cached_gains: bool,
    pub samples: usize,
    pub truncated_at: Option<f64>,
    pub final_sigma: IndexSet,
    pub settled_at: Option<f64>,
    pub slowest_rate: f64,
    pub synthesis: Vec<SynthesisRow>,
    pub verdicts: Vec<Verdict>,
    pub false_alarms_averted: Vec<FalseAlarmAverted>,
    pub reconstruction_clamped: bool,
    /// Unsquared safety band for grid scenarios.
    pub safety_band: Option<[f64; 2]>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn failures(&self) -> Vec<&Verdict> {
        self.verdicts.iter().filter(|v| !v.passed).collect()
    }
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub trace: SimTrace,
    pub bank: ObserverBank,
    /// Time, selected error and its bound, plus squared voltages for grid runs.
    pub bounds: Table,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GainsMode {
    /// Synthesize, or reuse matching cached gains.
    Synthesize,
    /// Use existing gains only and re-verify every certificate.
    Verify,
}

/// Runs a scenario and writes `trace.csv`, `bounds.csv` and `report.json` into `out`.
pub fn run_scenario(cfg: &ScenarioConfig, out: &Path, mode: GainsMode) -> Result<RunOutcome> {
    let sc = cfg.compile()?;
    ensure_dir(out)?;
    let mut verdicts = Vec::new();
    let (gains, rows, cached) = match mode {
        GainsMode::Synthesize => {
            let g = synthesize_gains(cfg, &sc, out)?;
            (g.gains, g.rows, g.cached)
        }
        GainsMode::Verify => {
            let g = load_gains(cfg, out)?;
            for (set, gain) in &g {
                let v = verify_gains(&sc.system, gain, cfg.synthesis.tolerances())?;
                verdicts.push(Verdict {
                    name: format!("lmi_certificate{set}"),
                    invariant: "certificate passes verify",
                    passed: v.feasible,
                    detail: format!("lambda_max = {:e}, lambda_min(P) = {:e}", v.lambda_max, v.p_min),
                });
            }
            (g, Vec::new(), true)
        }
    };
    let mut bank = build_bank(&sc.system, sc.budget, &gains, &sc.xhat0, &BTreeMap::new())?;
    let bank0 = bank.clone();
    let mut selector = Selector::new(cfg.selection.dwell_time);
    let trace = run(&sc.system, &mut bank, &sc.attack, &sc.x0, &cfg.sim, &mut selector)?;

    let slack = Slack {
        abs: cfg.checks.slack_abs,
        rel: cfg.checks.slack_rel,
    };
    let d_bar = sc.system.max_upper_slope();
    let envelopes = bank_envelopes(&bank0, d_bar)?;
    let slowest = crate::checks::slowest_rate(&envelopes);
    if let Some(t) = trace.truncated_at {
        verdicts.push(Verdict {
            name: "finite_trajectory".into(),
            invariant: "trajectories stay below the overflow threshold",
            passed: false,
            detail: format!("overflow at t = {t}"),
        });
    }
    if cfg.checks.envelopes {
        for v in observer_envelopes(&trace, &bank0, &envelopes, slack) {
            verdicts.push(Verdict {
                name: format!("observer_envelope{}", v.set),
                invariant: "observer error within its ISS envelope",
                passed: v.check.holds,
                detail: format!("worst excess {:e}, scale {:e}", v.check.worst_excess, v.check.scale),
            });
        }
    }
    let support = sc.attack.support().clone();
    let sel = selected_error_bound(&trace, &bank0, &envelopes, &support, slack)?;
    if cfg.checks.selected_bound {
        verdicts.push(Verdict {
            name: "selected_error_bound".into(),
            invariant: "selected estimate error within the three-term bound",
            passed: sel.holds,
            detail: format!("worst excess {:e}, scale {:e}", sel.worst_excess, sel.scale),
        });
    }
    if let Some(eps) = cfg.checks.converge_eps {
        let t = convergence_time(&trace.times, &sel.error, eps);
        verdicts.push(Verdict {
            name: "selected_error_converges".into(),
            invariant: "selected estimate error ends below tolerance",
            passed: t.is_some(),
            detail: match t {
                Some(t) => format!("below {eps:e} from t = {t}"),
                None => format!("final error {:e}", sel.error.last().copied().unwrap_or(f64::NAN)),
            },
        });
    }
    let settled = trace.selection.settles_at();
    if let Some(expected) = &cfg.checks.settle_on {
        let last = trace.selection.sigma.last().map(|&s| &trace.selection.sets[s]);
        verdicts.push(Verdict {
            name: "sigma_settles".into(),
            invariant: "selection settles on the expected attack-free set",
            passed: last == Some(expected),
            detail: format!(
                "final {} from t = {}",
                last.map_or("-".to_string(), |s| s.to_string()),
                settled.map_or(f64::NAN, |k| trace.times[k])
            ),
        });
    }

    let mut bounds = Table::new(vec!["t".into(), "selected_error".into(), "selected_bound".into()]);
    let mut averted = Vec::new();
    let mut clamped = false;
    let volts: Option<VoltageTraces> = sc.grid.as_ref().map(|g| voltage_traces(g, &trace));
    if let (Some(g), Some(v)) = (&sc.grid, &volts) {
        clamped = v.clamped;
        let vb = voltage_bound(g, v, &sel.bound, slack);
        if cfg.checks.voltage_bound {
            verdicts.push(Verdict {
                name: "voltage_bound".into(),
                invariant: "squared-voltage error within |H_i| times the selected bound",
                passed: vb.holds,
                detail: format!("worst excess {:e}", vb.worst_excess),
            });
        }
        averted = false_alarms_averted(&trace.times, &v.received_sq, &v.estimated_sq, g.v_ref, g.delta)?;
        if cfg.checks.false_alarm_averted {
            let truth = safety_monitor(&v.true_sq, g.v_ref, g.delta)?;
            let rec = safety_monitor(&v.estimated_sq, g.v_ref, g.delta)?;
            let raw = safety_monitor(&v.received_sq, g.v_ref, g.delta)?;
            let truth_ok = truth.iter().all(|r| r.iter().all(|&b| b));
            let attacked = support.members();
            let raw_exits = attacked.iter().all(|&i| raw.iter().any(|r| !r[i]));
            let rec_stays = attacked.iter().all(|&i| rec.iter().all(|r| r[i]));
            verdicts.push(Verdict {
                name: "false_alarm_averted".into(),
                invariant: "raw attacked voltage leaves the band while the reconstruction stays inside",
                passed: truth_ok && raw_exits && rec_stays && !attacked.is_empty(),
                detail: format!("true in band {truth_ok}, raw exits {raw_exits}, reconstruction in band {rec_stays}"),
            });
        }
        let n = g.customers();
        for i in 1..=n {
            bounds.header.push(format!("v2[{i}]"));
        }
        for i in 1..=n {
            bounds.header.push(format!("v2hat[{i}]"));
        }
        for i in 1..=n {
            bounds.header.push(format!("v2rx[{i}]"));
        }
        for i in 1..=n {
            bounds.header.push(format!("v2bound[{i}]"));
        }
        for k in 0..trace.len() {
            let mut row = vec![fmt_f64(trace.times[k]), fmt_f64(sel.error[k]), fmt_f64(sel.bound[k])];
            row.extend(v.true_sq[k].iter().map(|x| fmt_f64(*x)));
            row.extend(v.estimated_sq[k].iter().map(|x| fmt_f64(*x)));
            row.extend(v.received_sq[k].iter().map(|x| fmt_f64(*x)));
            row.extend(vb.bound[k].iter().map(|x| fmt_f64(*x)));
            bounds.push(row);
        }
    } else {
        for k in 0..trace.len() {
            bounds.push(vec![
                fmt_f64(trace.times[k]),
                fmt_f64(sel.error[k]),
                fmt_f64(sel.bound[k]),
            ]);
        }
    }

    let tier2: Vec<IndexSet> = bank.tier2().iter().map(|o| o.index_set().clone()).collect();
    write_trace(&out.join("trace.csv"), &trace, &tier2)?;
    bounds.write(&out.join("bounds.csv"))?;
    let report = RunReport {
        name: cfg.label(),
        sensors: sc.system.sensor_count(),
        budget: sc.budget,
        attack_support: support,
        cached_gains: cached,
        samples: trace.len(),
        truncated_at: trace.truncated_at,
        final_sigma: trace
            .selection
            .sigma
            .last()
            .map(|&s| trace.selection.sets[s].clone())
            .unwrap_or_default(),
        settled_at: settled.map(|k| trace.times[k]),
        slowest_rate: slowest,
        synthesis: rows,
        verdicts,
        false_alarms_averted: averted,
        reconstruction_clamped: clamped,
        safety_band: sc.grid.as_ref().map(|g| [g.v_ref - g.delta, g.v_ref + g.delta]),
    };
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(RunOutcome {
        report,
        trace,
        bank: bank0,
        bounds,
    })
}
