//! Circle-criterion observer LMI: assembly, verification and desk-scale synthesis.
//!
//! In the variables `(P, Y = P L, K, nu, mu)` the certificate condition is
//!
//! ```text
//! [ PA + A'P - Y H_J - (Y H_J)' + nu I   P + (H - K H_J)'   -P    ]
//! [ (P + (H - K H_J)')'                  -2 diag(1/d)        0    ]  <= 0
//! [ -P                                   0                  -mu I ]
//! ```
//!
//! The third block row carries the observer-gain-weighted attack channel,
//! which lives in the state space, so it has dimension `n_x`.

mod synth;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::index_set::IndexSet;
use crate::linalg::{select_rows, sym_eig_range, symmetrize};
use crate::observer::ObserverGains;
use crate::system::LureSystem;

pub use synth::{synthesize, SynthesisOptions, SynthesisReport};

/// Condition number of `P` above which assembly refuses the candidate.
pub const MAX_P_CONDITION: f64 = 1e12;

/// Data of the LMI for one index set.
#[derive(Clone, Debug)]
pub struct LmiProblem {
    pub index_set: IndexSet,
    pub a: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub h_j: DMatrix<f64>,
    pub d_bar: DVector<f64>,
}

impl LmiProblem {
    pub fn new(index_set: IndexSet, a: DMatrix<f64>, h: DMatrix<f64>, d_bar: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || h.ncols() != n || h.nrows() != n {
            return Err(Error::dim(
                "LMI data",
                format!("A {n}x{n}, H {n}x{n}"),
                format!("A {}x{}, H {}x{}", a.nrows(), a.ncols(), h.nrows(), h.ncols()),
            ));
        }
        if d_bar.len() != h.nrows() {
            return Err(Error::dim("upper slopes", h.nrows(), d_bar.len()));
        }
        if d_bar.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Argument("upper slopes must be positive".into()));
        }
        if index_set.members().iter().any(|&i| i >= h.nrows()) {
            return Err(Error::Argument(format!("index set {index_set} exceeds sensor count")));
        }
        let h_j = select_rows(&h, index_set.members());
        Ok(LmiProblem {
            index_set,
            a,
            h,
            h_j,
            d_bar,
        })
    }

    pub fn for_system(sys: &LureSystem, index_set: IndexSet) -> Result<Self> {
        Self::new(index_set, sys.a().clone(), sys.h().clone(), sys.upper_slopes())
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn sensors(&self) -> usize {
        self.h.nrows()
    }

    pub fn attacked_dim(&self) -> usize {
        self.index_set.len()
    }

    /// Side length of the assembled block matrix.
    pub fn size(&self) -> usize {
        2 * self.state_dim() + self.sensors()
    }

    /// Relabels sensors and state coordinates by `perm[old] = new`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.state_dim();
        let mut inv = vec![0; n];
        for (old, &new) in perm.iter().enumerate() {
            inv[new] = old;
        }
        let a = DMatrix::from_fn(n, n, |i, j| self.a[(inv[i], inv[j])]);
        let h = DMatrix::from_fn(n, n, |i, j| self.h[(inv[i], inv[j])]);
        let d = DVector::from_fn(n, |i, _| self.d_bar[inv[i]]);
        LmiProblem::new(self.index_set.permuted(perm), a, h, d)
    }
}

/// Candidate in the linearizing variables, `Y = P L`.
#[derive(Clone, Debug, PartialEq)]
pub struct LmiCandidate {
    pub p: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub nu: f64,
    pub mu: f64,
}

impl LmiCandidate {
    pub fn from_gains(g: &ObserverGains) -> Self {
        LmiCandidate {
            p: g.p.clone(),
            y: &g.p * &g.l,
            k: g.k.clone(),
            nu: g.nu,
            mu: g.mu,
        }
    }

    /// Recovers `L = P^{-1} Y`.
    pub fn into_gains(self, index_set: IndexSet) -> Result<ObserverGains> {
        let chol = self.p.clone().cholesky().ok_or(Error::SingularP {
            condition: f64::INFINITY,
        })?;
        let l = chol.solve(&self.y);
        Ok(ObserverGains {
            index_set,
            p: self.p,
            l,
            k: self.k,
            nu: self.nu,
            mu: self.mu,
        })
    }

    /// Relabels consistently with [`LmiProblem::permuted`].
    pub fn permuted(&self, perm: &[usize], old_set: &IndexSet) -> Self {
        let n = self.p.nrows();
        let mut inv = vec![0; n];
        for (old, &new) in perm.iter().enumerate() {
            inv[new] = old;
        }
        // columns of Y and K follow the (re-sorted) members of the index set
        let new_set = old_set.permuted(perm);
        let col_src: Vec<usize> = new_set
            .members()
            .iter()
            .map(|&m| old_set.members().iter().position(|&o| perm[o] == m).unwrap())
            .collect();
        let nj = col_src.len();
        LmiCandidate {
            p: DMatrix::from_fn(n, n, |i, j| self.p[(inv[i], inv[j])]),
            y: DMatrix::from_fn(n, nj, |i, c| self.y[(inv[i], col_src[c])]),
            k: DMatrix::from_fn(self.k.nrows(), nj, |i, c| self.k[(inv[i], col_src[c])]),
            nu: self.nu,
            mu: self.mu,
        }
    }
}

fn check_candidate_dims(prob: &LmiProblem, cand: &LmiCandidate) -> Result<()> {
    let (n, nsens, nj) = (prob.state_dim(), prob.sensors(), prob.attacked_dim());
    if cand.p.shape() != (n, n) || cand.y.shape() != (n, nj) || cand.k.shape() != (nsens, nj) {
        return Err(Error::dim(
            "LMI candidate",
            format!("P {n}x{n}, Y {n}x{nj}, K {nsens}x{nj}"),
            format!("P {:?}, Y {:?}, K {:?}", cand.p.shape(), cand.y.shape(), cand.k.shape()),
        ));
    }
    Ok(())
}

/// Assembles the symmetric block matrix of size `2 n_x + N`.
pub fn assemble(prob: &LmiProblem, cand: &LmiCandidate) -> Result<DMatrix<f64>> {
    check_candidate_dims(prob, cand)?;
    let (lo, hi) = sym_eig_range(&symmetrize(&cand.p));
    let condition = hi.abs().max(lo.abs()) / hi.abs().min(lo.abs());
    if !(condition <= MAX_P_CONDITION) {
        return Err(Error::SingularP { condition });
    }
    Ok(assemble_unchecked(prob, cand))
}

pub(crate) fn assemble_unchecked(prob: &LmiProblem, cand: &LmiCandidate) -> DMatrix<f64> {
    let n = prob.state_dim();
    let ns = prob.sensors();
    let size = 2 * n + ns;
    let p = &cand.p;
    let yh = &cand.y * &prob.h_j;
    let a11 = p * &prob.a + prob.a.transpose() * p - &yh - yh.transpose() + DMatrix::identity(n, n) * cand.nu;
    let b = p + (&prob.h - &cand.k * &prob.h_j).transpose();

    let mut m = DMatrix::zeros(size, size);
    m.view_mut((0, 0), (n, n)).copy_from(&a11);
    m.view_mut((0, n), (n, ns)).copy_from(&b);
    m.view_mut((n, 0), (ns, n)).copy_from(&b.transpose());
    m.view_mut((0, n + ns), (n, n)).copy_from(&(-p));
    m.view_mut((n + ns, 0), (n, n)).copy_from(&(-p));
    for i in 0..ns {
        m[(n + i, n + i)] = -2.0 / prob.d_bar[i];
    }
    for i in 0..n {
        m[(n + ns + i, n + ns + i)] = -cand.mu;
    }
    symmetrize(&m)
}

/// Tolerances for accepting a certificate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyTolerances {
    /// Largest admissible eigenvalue of the assembled matrix.
    pub psd_tol: f64,
    /// Smallest admissible eigenvalue of `P`.
    pub p_floor: f64,
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        VerifyTolerances {
            psd_tol: 1e-8,
            p_floor: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub feasible: bool,
    pub lambda_max: f64,
    pub p_min: f64,
}

pub fn verify(prob: &LmiProblem, cand: &LmiCandidate, tol: VerifyTolerances) -> Result<Verdict> {
    let m = assemble(prob, cand)?;
    let (_, lambda_max) = sym_eig_range(&m);
    let (p_min, _) = sym_eig_range(&cand.p);
    Ok(Verdict {
        feasible: lambda_max <= tol.psd_tol && p_min >= tol.p_floor,
        lambda_max,
        p_min,
    })
}

/// Verifies stored gains against the system they claim to certify.
pub fn verify_gains(sys: &LureSystem, gains: &ObserverGains, tol: VerifyTolerances) -> Result<Verdict> {
    let prob = LmiProblem::for_system(sys, gains.index_set.clone())?;
    verify(&prob, &LmiCandidate::from_gains(gains), tol)
}

/// Pivot magnitude treated as zero by [`sylvester_oracle`].
const ORACLE_PIVOT_EPS: f64 = 1e-9;

/// Negative-semidefiniteness test for a symmetric matrix without eigenvalues.
///
/// Runs symmetric Gaussian elimination on `-M` with diagonal (largest-pivot)
/// pivoting. The successive pivots are ratios of nested principal minors of
/// the permuted matrix, so `-M` is PSD iff no pivot is negative and a
/// vanishing pivot leaves a vanishing Schur complement row.
pub fn sylvester_oracle(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    let mut b = -m.clone();
    let scale = b.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
    let eps = ORACLE_PIVOT_EPS + f64::EPSILON * scale * n as f64;
    let mut active: Vec<usize> = (0..n).collect();
    while !active.is_empty() {
        let (pos, &piv) = active
            .iter()
            .enumerate()
            .max_by(|x, y| b[(*x.1, *x.1)].total_cmp(&b[(*y.1, *y.1)]))
            .unwrap();
        let d = b[(piv, piv)];
        if d < -eps {
            return false;
        }
        if d <= eps {
            // every remaining diagonal is ~0; PSD forces the whole block to ~0
            return active.iter().all(|&i| active.iter().all(|&j| b[(i, j)].abs() <= eps));
        }
        active.swap_remove(pos);
        for &i in &active {
            let f = b[(i, piv)] / d;
            if f == 0.0 {
                continue;
            }
            for &j in &active {
                b[(i, j)] -= f * b[(piv, j)];
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn scalar_problem() -> LmiProblem {
        LmiProblem::new(
            IndexSet::full(1),
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap()
    }

    pub(crate) fn scalar_candidate(nu: f64, mu: f64) -> LmiCandidate {
        LmiCandidate {
            p: DMatrix::from_element(1, 1, 1.0),
            y: DMatrix::zeros(1, 1),
            k: DMatrix::from_element(1, 1, 1.0),
            nu,
            mu,
        }
    }

    #[test]
    fn scalar_block_substitution() {
        let m = assemble(&scalar_problem(), &scalar_candidate(0.5, 2.0)).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[-1.5, 1.0, -1.0, 1.0, -2.0, 0.0, -1.0, 0.0, -2.0]);
        assert_eq!(m, expected);
    }

    #[test]
    fn zero_candidate_structure() {
        let n = 2;
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 3.0]);
        let prob = LmiProblem::new(
            IndexSet::full(2),
            DMatrix::zeros(2, 2),
            h.clone(),
            DVector::from_vec(vec![0.5, 2.0]),
        )
        .unwrap();
        let cand = LmiCandidate {
            p: DMatrix::identity(2, 2),
            y: DMatrix::zeros(2, 2),
            k: DMatrix::zeros(2, 2),
            nu: 0.0,
            mu: 0.0,
        };
        let m = assemble(&prob, &cand).unwrap();
        let b = DMatrix::identity(2, 2) + h.transpose();
        assert_eq!(m.view((0, 0), (n, n)).clone_owned(), DMatrix::zeros(2, 2));
        assert_eq!(m.view((0, n), (n, n)).clone_owned(), b);
        assert_eq!(m.view((n, 0), (n, n)).clone_owned(), b.transpose());
        assert_eq!(m.view((0, 2 * n), (n, n)).clone_owned(), -DMatrix::identity(2, 2));
        assert_eq!(m.view((2 * n, 0), (n, n)).clone_owned(), -DMatrix::identity(2, 2));
        assert_eq!(m[(2, 2)], -4.0);
        assert_eq!(m[(3, 3)], -1.0);
        assert_eq!(m.view((2 * n, 2 * n), (n, n)).clone_owned(), DMatrix::zeros(2, 2));
        assert_eq!(m.view((n, 2 * n), (n, n)).clone_owned(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn scalar_candidate_verified() {
        let v = verify(
            &scalar_problem(),
            &scalar_candidate(0.5, 2.0),
            VerifyTolerances::default(),
        )
        .unwrap();
        assert!(v.feasible, "{v:?}");
        // Sylvester cross-check: leading minors of the negated matrix are 1.5, 2, 2.
        let neg = -assemble(&scalar_problem(), &scalar_candidate(0.5, 2.0)).unwrap();
        let minors: Vec<f64> = (1..=3)
            .map(|k| neg.view((0, 0), (k, k)).clone_owned().determinant())
            .collect();
        for (got, want) in minors.iter().zip([1.5, 2.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(sylvester_oracle(
            &assemble(&scalar_problem(), &scalar_candidate(0.5, 2.0)).unwrap()
        ));
    }

    #[test]
    fn large_nu_breaks_the_certificate() {
        let cand = scalar_candidate(3.0, 2.0);
        let m = assemble(&scalar_problem(), &cand).unwrap();
        assert_eq!(m[(0, 0)], 1.0);
        assert!(
            !verify(&scalar_problem(), &cand, VerifyTolerances::default())
                .unwrap()
                .feasible
        );
    }

    #[test]
    fn zero_mu_with_coupling_breaks_the_certificate() {
        let cand = scalar_candidate(0.5, 0.0);
        assert!(
            !verify(&scalar_problem(), &cand, VerifyTolerances::default())
                .unwrap()
                .feasible
        );
        assert!(!sylvester_oracle(&assemble(&scalar_problem(), &cand).unwrap()));
    }

    #[test]
    fn singular_p_rejected() {
        let prob = LmiProblem::new(
            IndexSet::full(2),
            -DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DVector::from_element(2, 1.0),
        )
        .unwrap();
        let cand = LmiCandidate {
            p: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14]),
            y: DMatrix::zeros(2, 2),
            k: DMatrix::zeros(2, 2),
            nu: 0.0,
            mu: 1.0,
        };
        assert!(matches!(assemble(&prob, &cand), Err(Error::SingularP { .. })));
    }

    #[test]
    fn oracle_examples() {
        assert!(sylvester_oracle(&-DMatrix::identity(3, 3)));
        assert!(sylvester_oracle(&DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -1.0])));
        assert!(!sylvester_oracle(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])));
    }

    #[test]
    fn assembled_matrix_is_exactly_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(1..5);
            let set = IndexSet::new((0..n).filter(|_| rng.gen_bool(0.6)).collect(), n).unwrap();
            let nj = set.len();
            let prob = LmiProblem::new(
                set,
                DMatrix::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0)),
                DMatrix::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0)),
                DVector::from_fn(n, |_, _| rng.gen_range(0.1..3.0)),
            )
            .unwrap();
            let q = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let cand = LmiCandidate {
                p: symmetrize(&(&q * q.transpose())) + DMatrix::identity(n, n) * 0.1,
                y: DMatrix::from_fn(n, nj, |_, _| rng.gen_range(-1.0..1.0)),
                k: DMatrix::from_fn(n, nj, |_, _| rng.gen_range(-1.0..1.0)),
                nu: rng.gen_range(0.0..1.0),
                mu: rng.gen_range(0.0..5.0),
            };
            let m = assemble(&prob, &cand).unwrap();
            assert_eq!(m, m.transpose());
        }
    }

    #[test]
    fn verify_is_invariant_under_sensor_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..100 {
            let n = 3;
            let set = IndexSet::new(vec![0, 2], n).unwrap();
            let prob = LmiProblem::new(
                set.clone(),
                DMatrix::from_fn(n, n, |i, j| if i == j { -2.0 } else { rng.gen_range(-0.5..0.5) }),
                DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)),
                DVector::from_fn(n, |_, _| rng.gen_range(0.2..1.0)),
            )
            .unwrap();
            let cand = LmiCandidate {
                p: DMatrix::identity(n, n),
                y: DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0)),
                k: DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0)),
                nu: rng.gen_range(0.0..0.5),
                mu: rng.gen_range(0.5..20.0),
            };
            let perm = [2, 0, 1];
            let v1 = verify(&prob, &cand, VerifyTolerances::default()).unwrap();
            let v2 = verify(
                &prob.permuted(&perm).unwrap(),
                &cand.permuted(&perm, &set),
                VerifyTolerances::default(),
            )
            .unwrap();
            assert_eq!(v1.feasible, v2.feasible);
            assert!((v1.lambda_max - v2.lambda_max).abs() < 1e-12 * (1.0 + v1.lambda_max.abs()));
        }
    }
}
