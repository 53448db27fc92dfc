//! Plant models: the general attacked-output plant and its Lur'e specialization
//! `dx/dt = A x + phi(z)`, `z_i = H_i x + w_i(t)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::all_finite;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type InputFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Scalar slope-restricted nonlinearity of one output channel.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Nonlinearity {
    Zero,
    Linear {
        slope: f64,
    },
    /// `gain * tanh(scale * s)`
    Tanh {
        gain: f64,
        scale: f64,
    },
    /// `clamp(slope * s, -limit, limit)`
    Saturation {
        slope: f64,
        limit: f64,
    },
    /// Linear interpolation through `knots` (sorted by abscissa), flat outside.
    PiecewiseLinear {
        knots: Vec<[f64; 2]>,
    },
    #[serde(skip)]
    Custom(ScalarFn),
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nonlinearity::Zero => write!(f, "Zero"),
            Nonlinearity::Linear { slope } => write!(f, "Linear({slope})"),
            Nonlinearity::Tanh { gain, scale } => write!(f, "Tanh({gain}, {scale})"),
            Nonlinearity::Saturation { slope, limit } => write!(f, "Saturation({slope}, {limit})"),
            Nonlinearity::PiecewiseLinear { knots } => write!(f, "PiecewiseLinear({knots:?})"),
            Nonlinearity::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Nonlinearity {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Linear { slope } => slope * s,
            Nonlinearity::Tanh { gain, scale } => gain * (scale * s).tanh(),
            Nonlinearity::Saturation { slope, limit } => (slope * s).clamp(-limit, *limit),
            Nonlinearity::PiecewiseLinear { knots } => piecewise_linear(knots, s),
            Nonlinearity::Custom(f) => f(s),
        }
    }

    /// Tightest slope interval implied by the parameters, if known in closed form.
    pub fn natural_slope_bounds(&self) -> Option<SlopeBounds> {
        let b = match self {
            Nonlinearity::Zero => SlopeBounds::new(0.0, 0.0),
            Nonlinearity::Linear { slope } => SlopeBounds::new(*slope, *slope),
            Nonlinearity::Tanh { gain, scale } => {
                let k = gain * scale;
                SlopeBounds::new(k.min(0.0), k.max(0.0))
            }
            Nonlinearity::Saturation { slope, .. } => SlopeBounds::new(slope.min(0.0), slope.max(0.0)),
            Nonlinearity::PiecewiseLinear { knots } => {
                let (lo, hi) = knots.windows(2).fold((0.0_f64, 0.0_f64), |(lo, hi), w| {
                    let s = (w[1][1] - w[0][1]) / (w[1][0] - w[0][0]);
                    (lo.min(s), hi.max(s))
                });
                SlopeBounds::new(lo, hi)
            }
            Nonlinearity::Custom(_) => return None,
        };
        Some(b)
    }

    fn validate(&self) -> Result<()> {
        if let Nonlinearity::PiecewiseLinear { knots } = self {
            if knots.is_empty() {
                return Err(Error::Config("piecewise-linear nonlinearity needs knots".into()));
            }
            if knots.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                return Err(Error::Config(
                    "piecewise-linear knots must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }
}

fn piecewise_linear(knots: &[[f64; 2]], s: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if s <= first[0] {
        return first[1];
    }
    if s >= last[0] {
        return last[1];
    }
    let k = knots.partition_point(|p| p[0] < s);
    let (a, b) = (knots[k - 1], knots[k]);
    a[1] + (b[1] - a[1]) * (s - a[0]) / (b[0] - a[0])
}

/// Slope interval `[lower, upper]` with `0 <= lower <= upper`, `upper > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeBounds {
    pub lower: f64,
    pub upper: f64,
}

impl SlopeBounds {
    pub fn new(lower: f64, upper: f64) -> Self {
        SlopeBounds { lower, upper }
    }
}

/// Sampling settings for slope verification.
#[derive(Clone, Debug)]
pub struct SlopeCheck {
    pub range: f64,
    pub grid_points: usize,
    pub random_pairs: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SlopeCheck {
    fn default() -> Self {
        SlopeCheck {
            range: 10.0,
            grid_points: 401,
            random_pairs: 2000,
            tol: 1e-9,
            seed: 0x5eed,
        }
    }
}

/// True iff every difference quotient over pairs of distinct `grid` points lies in
/// `[lower - tol, upper + tol]`.
pub fn verify_slope(phi: impl Fn(f64) -> f64, lower: f64, upper: f64, grid: &[f64], tol: f64) -> bool {
    let vals: Vec<f64> = grid.iter().map(|&s| phi(s)).collect();
    for i in 0..grid.len() {
        for j in (i + 1)..grid.len() {
            let dx = grid[j] - grid[i];
            if dx == 0.0 {
                continue;
            }
            let q = (vals[j] - vals[i]) / dx;
            if !(q >= lower - tol && q <= upper + tol) {
                return false;
            }
        }
    }
    true
}

/// Dense grid plus random pairs over `[-range, range]`.
pub fn verify_slope_sampled(phi: &Nonlinearity, bounds: SlopeBounds, check: &SlopeCheck) -> bool {
    let n = check.grid_points.max(2);
    let grid: Vec<f64> = (0..n)
        .map(|k| -check.range + 2.0 * check.range * k as f64 / (n - 1) as f64)
        .collect();
    if !verify_slope(|s| phi.eval(s), bounds.lower, bounds.upper, &grid, check.tol) {
        return false;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    (0..check.random_pairs).all(|_| {
        let a = rng.gen_range(-check.range..check.range);
        let b = rng.gen_range(-check.range..check.range);
        verify_slope(|s| phi.eval(s), bounds.lower, bounds.upper, &[a, b], check.tol)
    })
}

/// Known input `w(t)` entering the nonlinearity arguments.
#[derive(Clone)]
pub enum KnownInput {
    Constant(DVector<f64>),
    /// `offset + amplitude * sin(omega * t)`, componentwise.
    Sinusoid {
        offset: DVector<f64>,
        amplitude: DVector<f64>,
        omega: DVector<f64>,
    },
    Custom(InputFn),
}

impl fmt::Debug for KnownInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KnownInput::Constant(v) => write!(f, "Constant({:?})", v.as_slice()),
            KnownInput::Sinusoid { .. } => write!(f, "Sinusoid(..)"),
            KnownInput::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl KnownInput {
    pub fn zero(n: usize) -> Self {
        KnownInput::Constant(DVector::zeros(n))
    }

    pub fn at(&self, t: f64) -> DVector<f64> {
        match self {
            KnownInput::Constant(v) => v.clone(),
            KnownInput::Sinusoid {
                offset,
                amplitude,
                omega,
            } => DVector::from_fn(offset.len(), |i, _| offset[i] + amplitude[i] * (omega[i] * t).sin()),
            KnownInput::Custom(f) => f(t),
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            KnownInput::Constant(v) => Some(v.len()),
            KnownInput::Sinusoid {
                offset,
                amplitude,
                omega,
            } => (offset.len() == amplitude.len() && offset.len() == omega.len()).then_some(offset.len()),
            KnownInput::Custom(_) => None,
        }
    }
}

/// Lur'e plant with scalar sensors.
///
/// The nonlinearity vector enters the state derivative directly, so the
/// sensor count equals the state dimension.
#[derive(Clone, Debug)]
pub struct LureSystem {
    a: DMatrix<f64>,
    h: DMatrix<f64>,
    phi: Vec<Nonlinearity>,
    slopes: Vec<SlopeBounds>,
    input: KnownInput,
}

impl LureSystem {
    pub fn new(
        a: DMatrix<f64>,
        h: DMatrix<f64>,
        phi: Vec<Nonlinearity>,
        slopes: Vec<SlopeBounds>,
        input: KnownInput,
    ) -> Result<Self> {
        Self::with_slope_check(a, h, phi, slopes, input, &SlopeCheck::default())
    }

    pub fn with_slope_check(
        a: DMatrix<f64>,
        h: DMatrix<f64>,
        phi: Vec<Nonlinearity>,
        slopes: Vec<SlopeBounds>,
        input: KnownInput,
        check: &SlopeCheck,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::dim(
                "A",
                "non-empty square",
                format!("{}x{}", a.nrows(), a.ncols()),
            ));
        }
        if h.ncols() != n {
            return Err(Error::dim("H columns", n, h.ncols()));
        }
        let sensors = h.nrows();
        if sensors != n {
            return Err(Error::dim("sensor count (must equal state dimension)", n, sensors));
        }
        if phi.len() != sensors {
            return Err(Error::dim("nonlinearities", sensors, phi.len()));
        }
        if slopes.len() != sensors {
            return Err(Error::dim("slope bounds", sensors, slopes.len()));
        }
        if let Some(d) = input.dim() {
            if d != sensors {
                return Err(Error::dim("known input", sensors, d));
            }
        }
        if !a.iter().chain(h.iter()).all(|v| v.is_finite()) {
            return Err(Error::Argument("A and H must be finite".into()));
        }
        for (i, (f, b)) in phi.iter().zip(&slopes).enumerate() {
            f.validate()?;
            if !(0.0 <= b.lower && b.lower <= b.upper && b.upper > 0.0) {
                return Err(Error::Argument(format!(
                    "sensor {}: slope bounds must satisfy 0 <= lower <= upper, upper > 0 (got [{}, {}])",
                    i + 1,
                    b.lower,
                    b.upper
                )));
            }
            if !verify_slope_sampled(f, *b, check) {
                return Err(Error::Argument(format!(
                    "sensor {}: nonlinearity violates slope bounds [{}, {}]",
                    i + 1,
                    b.lower,
                    b.upper
                )));
            }
        }
        Ok(LureSystem {
            a,
            h,
            phi,
            slopes,
            input,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn sensor_count(&self) -> usize {
        self.h.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn nonlinearities(&self) -> &[Nonlinearity] {
        &self.phi
    }

    pub fn slopes(&self) -> &[SlopeBounds] {
        &self.slopes
    }

    pub fn upper_slopes(&self) -> DVector<f64> {
        DVector::from_iterator(self.slopes.len(), self.slopes.iter().map(|b| b.upper))
    }

    /// `max_i upper_i`
    pub fn max_upper_slope(&self) -> f64 {
        self.slopes.iter().map(|b| b.upper).fold(0.0, f64::max)
    }

    pub fn known_input(&self, t: f64) -> DVector<f64> {
        self.input.at(t)
    }

    /// Stacked `phi_i(v_i)`.
    pub fn apply_phi(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(v.len(), self.phi.iter().zip(v.iter()).map(|(f, &s)| f.eval(s)))
    }

    /// Attack-free outputs `z = H x + w(t)`.
    pub fn outputs(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        &self.h * x + self.input.at(t)
    }

    /// Permutes sensors (and the matching state coordinates) by `perm[old] = new`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.state_dim();
        let mut inv = vec![0; n];
        for (old, &new) in perm.iter().enumerate() {
            inv[new] = old;
        }
        let a = DMatrix::from_fn(n, n, |i, j| self.a[(inv[i], inv[j])]);
        let h = DMatrix::from_fn(n, n, |i, j| self.h[(inv[i], inv[j])]);
        let phi = (0..n).map(|i| self.phi[inv[i]].clone()).collect();
        let slopes = (0..n).map(|i| self.slopes[inv[i]]).collect();
        let base = self.input.clone();
        let inv2 = inv.clone();
        let input = KnownInput::Custom(Arc::new(move |t| {
            let w = base.at(t);
            DVector::from_fn(w.len(), |i, _| w[inv2[i]])
        }));
        LureSystem::new(a, h, phi, slopes, input)
    }

    /// Views this plant through the general attacked-output interface.
    pub fn to_general_plant(&self) -> GeneralPlant {
        let a = self.a.clone();
        let phi = self.phi.clone();
        let n = self.state_dim();
        let outputs = (0..self.sensor_count())
            .map(|i| {
                let row = self.h.row(i).clone_owned();
                Arc::new(move |x: &DVector<f64>, w: &DVector<f64>| (&row * x)[0] + w[i]) as OutputMap
            })
            .collect();
        GeneralPlant {
            state_dim: n,
            input_dim: self.sensor_count(),
            dynamics: Arc::new(move |x, z, _w| {
                let nl = DVector::from_iterator(z.len(), phi.iter().zip(z.iter()).map(|(f, &s)| f.eval(s)));
                &a * x + nl
            }),
            outputs,
        }
    }
}

/// `A x + phi(H x + w(t))`.
pub fn lure_dynamics(sys: &LureSystem, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    let z = sys.outputs(x, t);
    let dx = &sys.a * x + sys.apply_phi(&z);
    if !all_finite(&dx) {
        return Err(Error::Overflow { t });
    }
    Ok(dx)
}

pub type DynamicsMap = Arc<dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type OutputMap = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;

/// `dx/dt = f(x, z, w)`, `z_i = h_i(x, w)` with scalar outputs.
#[derive(Clone)]
pub struct GeneralPlant {
    pub state_dim: usize,
    pub input_dim: usize,
    pub dynamics: DynamicsMap,
    pub outputs: Vec<OutputMap>,
}

impl GeneralPlant {
    pub fn sensor_count(&self) -> usize {
        self.outputs.len()
    }

    pub fn outputs_at(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.outputs.len(), self.outputs.iter().map(|h| h(x, w)))
    }

    pub fn derivative(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let z = self.outputs_at(x, w);
        (self.dynamics)(x, &z, w)
    }
}
