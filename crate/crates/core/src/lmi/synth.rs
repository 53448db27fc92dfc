//! Certificate search by projected descent on the largest eigenvalue.
//!
//! The assembled matrix is affine in `(P, Y, K, nu, mu)`, so its largest
//! eigenvalue is convex in those variables. Each restart minimizes a
//! log-sum-exp smoothing of the spectrum with Adam steps, projecting `P`
//! onto `{(p_max / p_condition) I <= P <= p_max I}` and `(Y, K)` onto a box
//! after every step. Capping the condition number of `P` and the size of `Y`
//! keeps the recovered `L = P^{-1} Y` moderate. Each restart then alternates
//! a bisection that raises `nu` to the feasibility boundary with further
//! descent at the raised `nu`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{assemble_unchecked, verify, LmiCandidate, LmiProblem, VerifyTolerances};
use crate::error::{Error, Result};
use crate::linalg::{clip_spectrum_below, symmetrize};
use crate::observer::ObserverGains;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Descent iterations per phase.
    pub max_iters: usize,
    /// Alternations of nu bisection and re-descent.
    pub nu_rounds: usize,
    pub psd_tol: f64,
    pub p_floor_verify: f64,
    /// Returned certificates satisfy `lambda_max <= -margin`.
    pub margin: f64,
    /// Largest condition number of `P` allowed during the search.
    pub p_condition: f64,
    /// Spectral cap of `P` during the search.
    pub p_max: f64,
    /// Number of times `p_max` is multiplied by 10 after a failed search.
    pub p_max_escalations: usize,
    /// Box bound on the entries of `Y` and `K`.
    pub bound: f64,
    pub mu_max: f64,
    /// Largest assembled matrix side length accepted.
    pub size_cap: usize,
    pub learning_rate: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            restarts: 16,
            seed: 1,
            max_iters: 1500,
            nu_rounds: 6,
            psd_tol: 1e-8,
            p_floor_verify: 1e-10,
            margin: 1e-6,
            p_condition: 20.0,
            p_max: 1.0,
            p_max_escalations: 2,
            bound: 10.0,
            mu_max: 1e4,
            size_cap: 60,
            learning_rate: 0.05,
        }
    }
}

impl SynthesisOptions {
    pub fn tolerances(&self) -> VerifyTolerances {
        VerifyTolerances {
            psd_tol: self.psd_tol,
            p_floor: self.p_floor_verify,
        }
    }
}

/// A verified certificate and how it was found.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub gains: ObserverGains,
    /// Largest eigenvalue of the assembled matrix at the returned gains.
    pub lambda_max: f64,
    pub seed: u64,
    pub restart: usize,
    pub p_max: f64,
}

#[derive(Clone, Debug)]
struct Vars {
    p: DMatrix<f64>,
    y: DMatrix<f64>,
    k: DMatrix<f64>,
    log_mu: f64,
}

impl Vars {
    fn candidate(&self, nu: f64) -> LmiCandidate {
        LmiCandidate {
            p: self.p.clone(),
            y: self.y.clone(),
            k: self.k.clone(),
            nu,
            mu: self.log_mu.exp(),
        }
    }
}

struct Bounds {
    p_floor: f64,
    p_max: f64,
    entry: f64,
    log_mu: (f64, f64),
}

impl Bounds {
    fn project(&self, v: &mut Vars) {
        let eig = SymmetricEigen::new(symmetrize(&v.p));
        let vals = eig.eigenvalues.map(|x| x.clamp(self.p_floor, self.p_max));
        let q = &eig.eigenvectors;
        v.p = symmetrize(&(q * DMatrix::from_diagonal(&vals) * q.transpose()));
        v.y.apply(|x| *x = x.clamp(-self.entry, self.entry));
        v.k.apply(|x| *x = x.clamp(-self.entry, self.entry));
        v.log_mu = v.log_mu.clamp(self.log_mu.0, self.log_mu.1);
    }
}

/// Log-sum-exp smoothed largest eigenvalue and its gradient blocks.
struct Smoothed {
    lambda_max: f64,
    g_p: DMatrix<f64>,
    g_y: DMatrix<f64>,
    g_k: DMatrix<f64>,
    g_log_mu: f64,
}

fn smoothed_max(prob: &LmiProblem, v: &Vars, nu: f64, temperature: f64) -> Smoothed {
    let m = assemble_unchecked(prob, &v.candidate(nu));
    let eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.max();
    let weights = eig.eigenvalues.map(|l| (temperature * (l - top)).exp());
    let total = weights.sum();
    let size = weights.len();
    // G = sum_i w_i v_i v_i^T / sum_i w_i
    let mut g = DMatrix::zeros(size, size);
    for i in 0..size {
        let w = weights[i] / total;
        if w < 1e-14 {
            continue;
        }
        let col = eig.eigenvectors.column(i);
        g.ger(w, &col, &col, 1.0);
    }
    let (n, ns) = (prob.state_dim(), prob.sensors());
    let g11 = g.view((0, 0), (n, n)).clone_owned();
    let g12 = g.view((0, n), (n, ns)).clone_owned();
    let g13 = g.view((0, n + ns), (n, n)).clone_owned();
    let g33 = g.view((n + ns, n + ns), (n, n)).clone_owned();

    let g_p_full = &prob.a * &g11 + &g11 * prob.a.transpose() + &g12 * 2.0 - &g13 * 2.0;
    Smoothed {
        lambda_max: top,
        g_p: symmetrize(&g_p_full),
        g_y: &g11 * prob.h_j.transpose() * -2.0,
        g_k: g12.transpose() * prob.h_j.transpose() * -2.0,
        g_log_mu: -g33.trace() * v.log_mu.exp(),
    }
}

fn true_lambda_max(prob: &LmiProblem, v: &Vars, nu: f64) -> f64 {
    let m = assemble_unchecked(prob, &v.candidate(nu));
    SymmetricEigen::new(m).eigenvalues.max()
}

struct Adam {
    m: Vec<DMatrix<f64>>,
    s: Vec<DMatrix<f64>>,
    step: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;

    fn new(v: &Vars) -> Self {
        let shapes = [v.p.shape(), v.y.shape(), v.k.shape(), (1, 1)];
        Adam {
            m: shapes.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect(),
            s: shapes.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect(),
            step: 0,
        }
    }

    fn update(&mut self, v: &mut Vars, grad: &Smoothed, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        let grads = [
            grad.g_p.clone(),
            grad.g_y.clone(),
            grad.g_k.clone(),
            DMatrix::from_element(1, 1, grad.g_log_mu),
        ];
        let mut deltas = Vec::with_capacity(4);
        for (i, g) in grads.iter().enumerate() {
            self.m[i] = &self.m[i] * Self::B1 + g * (1.0 - Self::B1);
            self.s[i] = &self.s[i] * Self::B2 + g.component_mul(g) * (1.0 - Self::B2);
            let d = self.m[i].zip_map(&self.s[i], |m, s| -lr * (m / c1) / ((s / c2).sqrt() + 1e-12));
            deltas.push(d);
        }
        v.p += symmetrize(&deltas[0]);
        v.y += &deltas[1];
        v.k += &deltas[2];
        v.log_mu += deltas[3][(0, 0)];
    }
}

/// Minimizes the largest eigenvalue at fixed `nu`; returns the best iterate.
fn descend(prob: &LmiProblem, start: Vars, nu: f64, bounds: &Bounds, opts: &SynthesisOptions) -> (Vars, f64) {
    let mut v = start;
    bounds.project(&mut v);
    let mut best = (v.clone(), true_lambda_max(prob, &v, nu));
    let mut adam = Adam::new(&v);
    let iters = opts.max_iters.max(1);
    let (t0, t1) = (10.0_f64, 1e4_f64);
    let mut checkpoint = best.1;
    for it in 0..iters {
        let frac = it as f64 / iters as f64;
        let temperature = t0 * (t1 / t0).powf(frac);
        let lr = opts.learning_rate * (0.02 + 0.98 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()));
        let s = smoothed_max(prob, &v, nu, temperature);
        if s.lambda_max < best.1 {
            best = (v.clone(), s.lambda_max);
        }
        adam.update(&mut v, &s, lr);
        bounds.project(&mut v);
        if it % 150 == 149 {
            let gain = checkpoint - best.1;
            if gain < 1e-7 * (1.0 + best.1.abs()) {
                break;
            }
            checkpoint = best.1;
        }
    }
    let last = true_lambda_max(prob, &v, nu);
    if last < best.1 {
        best = (v, last);
    }
    best
}

/// Largest `nu` in `[lo, ..)` with `lambda_max <= -margin`, assuming `lo` is feasible.
fn push_nu(prob: &LmiProblem, v: &Vars, lo: f64, margin: f64) -> f64 {
    let feasible = |nu: f64| true_lambda_max(prob, v, nu) <= -margin;
    let base = true_lambda_max(prob, v, lo);
    // lambda_max grows by at most the nu increment (nu enters as nu * I on one block)
    let mut good = lo + (-margin - base).max(0.0);
    if !feasible(good) {
        good = lo;
    }
    let mut bad = good + (good - lo).max(1e-3) + 1e-3;
    while feasible(bad) {
        good = bad;
        bad = 2.0 * bad + 1e-3;
        if bad > 1e9 {
            return good;
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (good + bad);
        if feasible(mid) {
            good = mid;
        } else {
            bad = mid;
        }
        if bad - good <= 1e-12 * (1.0 + good) {
            break;
        }
    }
    good
}

fn initial_vars(prob: &LmiProblem, restart: usize, rng: &mut ChaCha8Rng, p_max: f64) -> Vars {
    let (n, ns, nj) = (prob.state_dim(), prob.sensors(), prob.attacked_dim());
    if restart == 0 {
        return Vars {
            p: DMatrix::identity(n, n) * (0.5 * p_max),
            y: DMatrix::zeros(n, nj),
            k: DMatrix::zeros(ns, nj),
            log_mu: 0.0,
        };
    }
    let q = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let p = clip_spectrum_below(&(&q * q.transpose() / n as f64), 0.05) * (0.5 * p_max);
    Vars {
        p,
        y: DMatrix::from_fn(n, nj, |_, _| rng.gen_range(-1.0..1.0)),
        k: DMatrix::from_fn(ns, nj, |_, _| rng.gen_range(-1.0..1.0)),
        log_mu: rng.gen_range(-1.0..4.0),
    }
}

#[derive(Debug)]
enum RestartOutcome {
    Found { vars: Vars, nu: f64, lambda_max: f64 },
    Failed { lambda_max: f64 },
}

fn run_restart(prob: &LmiProblem, opts: &SynthesisOptions, restart: usize, p_max: f64) -> RestartOutcome {
    let seed = opts
        .seed
        .wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = Bounds {
        p_floor: p_max / opts.p_condition.max(1.0),
        p_max,
        entry: opts.bound,
        log_mu: (1e-6_f64.ln(), opts.mu_max.ln()),
    };
    let start = initial_vars(prob, restart, &mut rng, p_max);
    let (mut vars, mut lam) = descend(prob, start, 0.0, &bounds, opts);
    if lam > -opts.margin {
        return RestartOutcome::Failed { lambda_max: lam };
    }
    let mut nu = 0.0;
    for round in 0..=opts.nu_rounds {
        let pushed = push_nu(prob, &vars, nu, opts.margin);
        let gained = pushed - nu;
        nu = pushed;
        if round == opts.nu_rounds || gained <= 1e-6 * (1.0 + nu) && round > 0 {
            break;
        }
        let (v2, l2) = descend(prob, vars.clone(), nu, &bounds, opts);
        if l2 <= -opts.margin {
            vars = v2;
        }
    }
    lam = true_lambda_max(prob, &vars, nu);
    RestartOutcome::Found {
        vars,
        nu,
        lambda_max: lam,
    }
}

/// Searches for a certificate; the result always passes [`verify`].
pub fn synthesize(prob: &LmiProblem, opts: &SynthesisOptions) -> Result<SynthesisReport> {
    if prob.size() > opts.size_cap {
        return Err(Error::TooLarge {
            size: prob.size(),
            cap: opts.size_cap,
        });
    }
    let mut best_failed = f64::INFINITY;
    let mut p_max = opts.p_max;
    for _ in 0..=opts.p_max_escalations {
        let outcomes: Vec<RestartOutcome> = (0..opts.restarts.max(1))
            .into_par_iter()
            .map(|r| run_restart(prob, opts, r, p_max))
            .collect();
        let mut chosen: Option<(usize, Vars, f64, f64)> = None;
        for (r, o) in outcomes.into_iter().enumerate() {
            match o {
                RestartOutcome::Failed { lambda_max } => best_failed = best_failed.min(lambda_max),
                RestartOutcome::Found { vars, nu, lambda_max } => {
                    best_failed = best_failed.min(lambda_max);
                    let better = chosen.as_ref().is_none_or(|c| nu > c.2);
                    if better {
                        chosen = Some((r, vars, nu, lambda_max));
                    }
                }
            }
        }
        if let Some((restart, vars, nu, _)) = chosen {
            let gains = vars.candidate(nu).into_gains(prob.index_set.clone())?;
            let verdict = verify(prob, &LmiCandidate::from_gains(&gains), opts.tolerances())?;
            if verdict.feasible {
                return Ok(SynthesisReport {
                    gains,
                    lambda_max: verdict.lambda_max,
                    seed: opts.seed,
                    restart,
                    p_max,
                });
            }
            best_failed = best_failed.min(verdict.lambda_max);
        }
        p_max *= 10.0;
    }
    Err(Error::Infeasible {
        set: prob.index_set.clone(),
        best_lambda_max: best_failed,
    })
}
