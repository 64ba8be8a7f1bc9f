//! Lower and upper estimates of the measurement distance
//!
//! `d(M1, M2) = sup_ρ min_f Σ_j ‖K_{1 f(j)} ρ K_{1 f(j)}† − K_{2j} ρ K_{2j}†‖₂`.
//!
//! The supremum over states is not computed exactly. [`distance_lower`]
//! evaluates the objective on explicit states, so any value it returns is a
//! lower bound. [`distance_upper`] fixes the assignment and maximizes each
//! term separately over pure states, which bounds the distance from above.

use nalgebra::DVector;
use rayon::prelude::*;

use super::assignment::{min_assignment, Assignment};
use super::{DensityOperator, Measurement, ProductKraus};
use crate::ops::{self, ComplexMatrix, C64};
use crate::rng;
use crate::{Error, Result};

/// Search budget for [`distance_lower`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceBudget {
    /// Haar-random pure states evaluated before refinement.
    pub samples: usize,
    /// Best sampled states that are refined by coordinate search.
    pub restarts: usize,
    pub seed: u64,
    /// Objective evaluations allowed per refinement run.
    pub max_evals: usize,
}

impl Default for DistanceBudget {
    fn default() -> Self {
        Self {
            samples: 64,
            restarts: 4,
            seed: 0,
            max_evals: 20_000,
        }
    }
}

impl DistanceBudget {
    pub fn new(samples: usize, restarts: usize, seed: u64) -> Self {
        Self {
            samples,
            restarts,
            seed,
            ..Self::default()
        }
    }
}

/// Best state found by [`distance_lower_detailed`].
#[derive(Debug, Clone)]
pub struct LowerBound {
    pub value: f64,
    /// `None` when the maximally mixed state was best.
    pub state: Option<DVector<C64>>,
    pub assignment: Assignment,
}

/// Spectral norm of `a a† − b b†`.
///
/// The operator has rank at most two; its eigenvalues are
/// `(|a|² − |b|² ± sqrt((|a|² − |b|²)² + 4 G)) / 2` with `G` the Gram
/// determinant `|a|²|b|² − |⟨a,b⟩|²`, computed from the residual of `b`
/// against `a` so that `a = b` gives exactly zero.
pub fn pure_difference_norm(a: &DVector<C64>, b: &DVector<C64>) -> f64 {
    let na = a.norm_squared();
    let nb = b.norm_squared();
    difference_norm_from_parts(na, nb, gram_det(a, b, na))
}

fn gram_det(a: &DVector<C64>, b: &DVector<C64>, na: f64) -> f64 {
    if na == 0.0 {
        return 0.0;
    }
    let coef = a.dotc(b) / na;
    let residual = b - a * coef;
    na * residual.norm_squared()
}

fn difference_norm_from_parts(na: f64, nb: f64, gram: f64) -> f64 {
    let diff = na - nb;
    (diff.abs() + (diff * diff + 4.0 * gram.max(0.0)).sqrt()) / 2.0
}

pub(crate) fn padded_totals(
    m1: &Measurement,
    m2: &Measurement,
) -> Result<(Vec<ComplexMatrix>, Vec<ComplexMatrix>)> {
    if m1.party_dims != m2.party_dims {
        return Err(Error::Dimension(format!(
            "party dimensions differ: {:?} vs {:?}",
            m1.party_dims, m2.party_dims
        )));
    }
    let n = m1.len().max(m2.len()).max(1);
    let pad = |m: &Measurement| {
        let mut v = m.totals();
        v.resize(n, ProductKraus::zero_pad(&m.party_dims).total());
        v
    };
    Ok((pad(m1), pad(m2)))
}

struct Objective<'a> {
    k1: &'a [ComplexMatrix],
    k2: &'a [ComplexMatrix],
}

impl Objective<'_> {
    fn dim(&self) -> usize {
        self.k1[0].ncols()
    }

    fn pure_costs(&self, psi: &DVector<C64>) -> Vec<Vec<f64>> {
        let a: Vec<DVector<C64>> = self.k1.iter().map(|k| k * psi).collect();
        let b: Vec<DVector<C64>> = self.k2.iter().map(|k| k * psi).collect();
        let na: Vec<f64> = a.iter().map(|v| v.norm_squared()).collect();
        let nb: Vec<f64> = b.iter().map(|v| v.norm_squared()).collect();
        (0..a.len())
            .map(|i| {
                (0..b.len())
                    .map(|j| {
                        // symmetric in (a, b) so that swapping measurements
                        // reproduces the same numbers
                        let g = if na[i] >= nb[j] {
                            gram_det(&a[i], &b[j], na[i])
                        } else {
                            gram_det(&b[j], &a[i], nb[j])
                        };
                        difference_norm_from_parts(na[i], nb[j], g)
                    })
                    .collect()
            })
            .collect()
    }

    fn mixed_costs(&self, rho: &ComplexMatrix) -> Vec<Vec<f64>> {
        let a: Vec<ComplexMatrix> = self.k1.iter().map(|k| k * rho * k.adjoint()).collect();
        let b: Vec<ComplexMatrix> = self.k2.iter().map(|k| k * rho * k.adjoint()).collect();
        (0..a.len())
            .map(|i| {
                (0..b.len())
                    .map(|j| ops::spectral_norm(&ops::hermitian_part(&(&a[i] - &b[j]))))
                    .collect()
            })
            .collect()
    }

    fn pure(&self, psi: &DVector<C64>) -> Assignment {
        min_assignment(&self.pure_costs(psi))
    }
}

fn normalize(x: &[f64]) -> DVector<C64> {
    let d = x.len() / 2;
    let v = DVector::from_fn(d, |i, _| C64::new(x[2 * i], x[2 * i + 1]));
    let n = v.norm();
    v.unscale(n)
}

fn to_params(psi: &DVector<C64>) -> Vec<f64> {
    psi.iter().flat_map(|z| [z.re, z.im]).collect()
}

/// Derivative-free coordinate search over the unit sphere in `C^D`, with the
/// step halved whenever no coordinate move improves the objective.
fn refine(obj: &Objective<'_>, start: &DVector<C64>, max_evals: usize) -> (f64, DVector<C64>) {
    let mut x = to_params(start);
    let mut best = obj.pure(start).cost;
    let mut step = 0.25;
    let mut evals = 0;
    while step >= 1e-6 && evals < max_evals {
        let mut improved = false;
        for k in 0..x.len() {
            for sign in [1.0, -1.0] {
                let mut trial = x.clone();
                trial[k] += sign * step;
                let psi = normalize(&trial);
                let v = obj.pure(&psi).cost;
                evals += 1;
                if v > best {
                    best = v;
                    x = to_params(&psi);
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (best, normalize(&x))
}

/// Certified lower bound on the distance; see [`distance_lower_detailed`].
pub fn distance_lower(m1: &Measurement, m2: &Measurement, budget: DistanceBudget) -> Result<f64> {
    Ok(distance_lower_detailed(m1, m2, budget)?.value)
}

/// Evaluates the objective exactly (optimal assignment) on the maximally
/// mixed state, computational basis states, `budget.samples` Haar-random
/// states, and coordinate-search refinements of the best `budget.restarts`
/// pure states. The result is deterministic for a fixed seed.
pub fn distance_lower_detailed(
    m1: &Measurement,
    m2: &Measurement,
    budget: DistanceBudget,
) -> Result<LowerBound> {
    let (k1, k2) = padded_totals(m1, m2)?;
    let obj = Objective { k1: &k1, k2: &k2 };
    let d = obj.dim();

    let mixed = obj.mixed_costs(DensityOperator::maximally_mixed(d).matrix());
    let mut best = LowerBound {
        value: 0.0,
        state: None,
        assignment: min_assignment(&mixed),
    };
    best.value = best.assignment.cost;

    let mut g = rng::seeded(budget.seed);
    let mut candidates: Vec<DVector<C64>> = (0..d)
        .map(|k| DVector::from_fn(d, |i, _| if i == k { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }))
        .collect();
    candidates.extend((0..budget.samples).map(|_| rng::haar_state(&mut g, d)));

    let scored: Vec<(f64, Assignment)> = candidates
        .par_iter()
        .map(|psi| {
            let a = obj.pure(psi);
            (a.cost, a)
        })
        .collect();

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&x, &y| scored[y].0.total_cmp(&scored[x].0).then(x.cmp(&y)));

    for &idx in &order[..1] {
        if scored[idx].0 > best.value {
            best = LowerBound {
                value: scored[idx].0,
                state: Some(candidates[idx].clone()),
                assignment: scored[idx].1.clone(),
            };
        }
    }

    let refined: Vec<(f64, DVector<C64>)> = order
        .iter()
        .take(budget.restarts)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&&idx| refine(&obj, &candidates[idx], budget.max_evals))
        .collect();
    for (v, psi) in refined {
        if v > best.value {
            let assignment = obj.pure(&psi);
            best = LowerBound {
                value: v,
                state: Some(psi),
                assignment,
            };
        }
    }
    Ok(best)
}

/// `rows[j] = j`.
pub fn identity_matching(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Completeness below which [`distance_upper`] is capped at 2.
const COMPLETE_TOL: f64 = 1e-9;

/// Upper bound for a fixed matching: `Σ_j max_ψ ‖K_{1 f(j)} ψψ† K_{1 f(j)}† − K_{2j} ψψ† K_{2j}†‖₂`.
///
/// Each term is convex in the state, so its supremum sits on a pure state.
/// It is found by alternating maximization over the pair `(φ, ψ)` of
/// `±(|⟨φ|K₁|ψ⟩|² − |⟨φ|K₂|ψ⟩|²)`, each half-step being a rank-two
/// eigenproblem, from many starting points. For complete measurements the
/// sum is capped at 2, which bounds the distance itself.
pub fn distance_upper(m1: &Measurement, m2: &Measurement, matching: &[usize]) -> Result<f64> {
    let (k1, k2) = padded_totals(m1, m2)?;
    let n = k1.len();
    if matching.len() != n {
        return Err(Error::Matching(format!(
            "matching has {} entries, padded outcome count is {n}",
            matching.len()
        )));
    }
    let mut seen = vec![false; n];
    for &i in matching {
        if i >= n || seen[i] {
            return Err(Error::Matching(format!("index {i} repeated or out of range")));
        }
        seen[i] = true;
    }
    let terms: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| term_supremum(&k1[matching[j]], &k2[j], j as u64))
        .collect();
    let sum: f64 = terms.iter().sum();
    // each term is at most p₁ + p₂, so complete measurements are within 2
    let complete = m1.completeness_deviation() <= COMPLETE_TOL && m2.completeness_deviation() <= COMPLETE_TOL;
    Ok(if complete { sum.min(2.0) } else { sum })
}

/// Top eigenpair (by `s·λ`) of `s(x x† − y y†)`, solved in `span{x, y}`.
fn rank2_top(x: &DVector<C64>, y: &DVector<C64>, s: f64) -> Option<(f64, DVector<C64>)> {
    let nx = x.norm();
    let (e1, e2) = if nx > 0.0 {
        let e1 = x.unscale(nx);
        let r = y - &e1 * e1.dotc(y);
        let nr = r.norm();
        (e1, (nr > 1e-300).then(|| r.unscale(nr)))
    } else {
        let ny = y.norm();
        if ny == 0.0 {
            return None;
        }
        (y.unscale(ny), None)
    };
    let basis: Vec<DVector<C64>> = std::iter::once(e1).chain(e2).collect();
    let m = basis.len();
    let cx: Vec<C64> = basis.iter().map(|e| e.dotc(x)).collect();
    let cy: Vec<C64> = basis.iter().map(|e| e.dotc(y)).collect();
    let small = ComplexMatrix::from_fn(m, m, |i, j| {
        (cx[i] * cx[j].conj() - cy[i] * cy[j].conj()) * s
    });
    let (vals, vecs) = ops::eigh(&small);
    let top = vals[m - 1];
    let v = basis
        .iter()
        .enumerate()
        .fold(DVector::zeros(x.len()), |acc, (k, e)| acc + e * vecs[(k, m - 1)]);
    Some((top, v))
}

fn alternate(k1: &ComplexMatrix, k2: &ComplexMatrix, start: &DVector<C64>, s: f64) -> f64 {
    let mut psi = start.clone();
    let mut best = pure_difference_norm(&(k1 * &psi), &(k2 * &psi));
    for _ in 0..200 {
        let Some((_, phi)) = rank2_top(&(k1 * &psi), &(k2 * &psi), s) else {
            break;
        };
        let Some((_, next)) = rank2_top(&(k1.adjoint() * &phi), &(k2.adjoint() * &phi), s) else {
            break;
        };
        let n = next.norm();
        if n == 0.0 {
            break;
        }
        psi = next.unscale(n);
        let v = pure_difference_norm(&(k1 * &psi), &(k2 * &psi));
        let gain = v - best;
        best = best.max(v);
        if gain <= 1e-15 {
            break;
        }
    }
    best
}

fn term_supremum(k1: &ComplexMatrix, k2: &ComplexMatrix, stream: u64) -> f64 {
    let d = k1.ncols();
    let z1 = ops::max_abs_entry(k1) == 0.0;
    let z2 = ops::max_abs_entry(k2) == 0.0;
    if z1 && z2 {
        return 0.0;
    }
    if z1 || z2 {
        let k = if z1 { k2 } else { k1 };
        return ops::spectral_norm(k).powi(2);
    }
    let mut starts: Vec<DVector<C64>> = Vec::new();
    for k in [k1.clone(), k2.clone(), k1 - k2, k1 + k2] {
        let v = ops::svd(&k).v;
        starts.extend((0..v.ncols()).map(|i| v.column(i).into_owned()));
    }
    let mut g = rng::seeded(rng::child_seed(0x5eed, stream));
    starts.extend((0..8).map(|_| rng::haar_state(&mut g, d)));
    starts
        .iter()
        .flat_map(|psi| [1.0, -1.0].map(|s| alternate(k1, k2, psi, s)))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::canonicalize;
    use crate::ops::{identity, ket_bra};

    fn single(party_dims: &[usize], factors: Vec<Vec<ComplexMatrix>>) -> Measurement {
        canonicalize(
            factors.into_iter().map(ProductKraus::unit).collect(),
            party_dims,
        )
        .unwrap()
    }

    #[test]
    fn closed_form_matches_eigen() {
        let mut g = rng::seeded(5);
        for _ in 0..50 {
            let a = rng::haar_state(&mut g, 4).scale(0.7);
            let b = rng::haar_state(&mut g, 4).scale(1.3);
            let m = &a * a.adjoint() - &b * b.adjoint();
            let exact = ops::spectral_norm(&m);
            assert!((pure_difference_norm(&a, &b) - exact).abs() < 1e-12);
        }
        let a = rng::haar_state(&mut g, 3);
        assert_eq!(pure_difference_norm(&a, &a), 0.0);
    }

    #[test]
    fn identical_measurements_have_zero_distance() {
        let m = single(&[2], vec![vec![ket_bra(2, 0, 0)], vec![ket_bra(2, 1, 1)]]);
        let d = distance_lower(&m, &m, DistanceBudget::new(16, 2, 1)).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(distance_upper(&m, &m, &identity_matching(2)).unwrap(), 0.0);
    }

    #[test]
    fn identity_versus_projective_measurement() {
        let m1 = single(&[2], vec![vec![identity(2)]]);
        let m2 = single(&[2], vec![vec![ket_bra(2, 0, 0)], vec![ket_bra(2, 1, 1)]]);

        // brute force over both assignments at |+⟩
        let plus = DVector::from_vec(vec![C64::new(0.5f64.sqrt(), 0.0); 2]);
        let rho = &plus * plus.adjoint();
        let (k1, k2) = padded_totals(&m1, &m2).unwrap();
        let term = |i: usize, j: usize| {
            ops::spectral_norm(&(&k1[i] * &rho * k1[i].adjoint() - &k2[j] * &rho * k2[j].adjoint()))
        };
        let at_plus = (term(0, 0) + term(1, 1)).min(term(1, 0) + term(0, 1));
        assert!(at_plus >= 0.5);

        let d = distance_lower(&m1, &m2, DistanceBudget::new(32, 2, 0)).unwrap();
        assert!(d >= 0.5 && d >= at_plus - 1e-6, "{d} vs {at_plus}");
        let up = distance_upper(&m1, &m2, &identity_matching(2)).unwrap();
        assert!(d <= up + 1e-9 && up <= 2.0 + 1e-9);
    }

    #[test]
    fn single_unitary_upper_term() {
        // max over pure states of ‖ρ − ZρZ‖ is 1, attained at |+⟩
        let z = ops::diag(&[1.0, -1.0]);
        let m1 = single(&[2], vec![vec![identity(2)]]);
        let m2 = single(&[2], vec![vec![z]]);
        let up = distance_upper(&m1, &m2, &[0]).unwrap();
        assert!((up - 1.0).abs() < 1e-9, "{up}");
    }

    #[test]
    fn rejects_bad_matching_and_dims() {
        let m = single(&[2], vec![vec![ket_bra(2, 0, 0)], vec![ket_bra(2, 1, 1)]]);
        assert!(matches!(distance_upper(&m, &m, &[0, 0]), Err(Error::Matching(_))));
        assert!(matches!(distance_upper(&m, &m, &[0]), Err(Error::Matching(_))));
        let other = single(&[3], vec![vec![identity(3)]]);
        assert!(matches!(
            distance_lower(&m, &other, DistanceBudget::default()),
            Err(Error::Dimension(_))
        ));
    }
}
