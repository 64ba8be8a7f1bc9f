//! Separable measurements given by product Kraus operators.

mod assignment;
mod distance;

pub use assignment::{min_assignment, min_assignment_brute_force, Assignment};
pub use distance::{
    distance_lower, distance_lower_detailed, distance_upper, identity_matching,
    pure_difference_norm, DistanceBudget, LowerBound,
};

use crate::ops::{self, ComplexMatrix, PsdOperator};
use crate::{Error, Result};

/// One outcome: `weight · K⁽¹⁾ ⊗ … ⊗ K⁽ᴾ⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductKraus {
    pub weight: f64,
    pub factors: Vec<ComplexMatrix>,
}

impl ProductKraus {
    pub fn new(weight: f64, factors: Vec<ComplexMatrix>) -> Self {
        Self { weight, factors }
    }

    pub fn unit(factors: Vec<ComplexMatrix>) -> Self {
        Self::new(1.0, factors)
    }

    /// Zero outcome used to pad the shorter list when comparing measurements.
    pub fn zero_pad(party_dims: &[usize]) -> Self {
        Self::new(0.0, party_dims.iter().map(|&d| ops::zeros(d, d)).collect())
    }

    pub fn party_count(&self) -> usize {
        self.factors.len()
    }

    /// The joint Kraus operator `weight · ⊗ factors`.
    pub fn total(&self) -> ComplexMatrix {
        ops::kron_all(self.factors.iter()).scale(self.weight)
    }

    /// Local POVM part `K⁽ᵅ⁾† K⁽ᵅ⁾` (weight excluded).
    pub fn local_povm(&self, party: usize) -> PsdOperator {
        let f = &self.factors[party];
        PsdOperator::from_trusted(f.adjoint() * f)
    }

    /// Joint POVM element `weight² ⊗ K⁽ᵅ⁾†K⁽ᵅ⁾`.
    pub fn povm(&self) -> ComplexMatrix {
        let locals: Vec<ComplexMatrix> = (0..self.party_count())
            .map(|a| self.local_povm(a).into_matrix())
            .collect();
        ops::kron_all(locals.iter()).scale(self.weight * self.weight)
    }

    pub fn is_zero(&self) -> bool {
        self.weight == 0.0 || self.factors.iter().any(|f| ops::max_abs_entry(f) == 0.0)
    }
}

/// A separable measurement over fixed party dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub party_dims: Vec<usize>,
    pub outcomes: Vec<ProductKraus>,
    pub canonical: bool,
}

impl Measurement {
    /// Checks dimensions but does not canonicalize.
    pub fn new(party_dims: Vec<usize>, outcomes: Vec<ProductKraus>) -> Result<Self> {
        check_dims(&party_dims, &outcomes)?;
        Ok(Self {
            party_dims,
            outcomes,
            canonical: false,
        })
    }

    pub fn party_count(&self) -> usize {
        self.party_dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.party_dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// `Σ_j K_j† K_j`.
    pub fn povm_sum(&self) -> ComplexMatrix {
        let d = self.total_dim();
        self.outcomes
            .iter()
            .fold(ops::zeros(d, d), |acc, o| acc + o.povm())
    }

    /// Max-entry deviation of the POVM sum from the identity.
    pub fn completeness_deviation(&self) -> f64 {
        ops::max_abs_diff(&self.povm_sum(), &ops::identity(self.total_dim()))
    }

    pub fn totals(&self) -> Vec<ComplexMatrix> {
        self.outcomes.iter().map(ProductKraus::total).collect()
    }
}

fn check_dims(party_dims: &[usize], outcomes: &[ProductKraus]) -> Result<()> {
    if party_dims.is_empty() || party_dims.contains(&0) {
        return Err(Error::Dimension(format!(
            "party dimensions must be positive, got {party_dims:?}"
        )));
    }
    for (j, o) in outcomes.iter().enumerate() {
        if o.factors.len() != party_dims.len() {
            return Err(Error::Dimension(format!(
                "outcome {j} has {} factors for {} parties",
                o.factors.len(),
                party_dims.len()
            )));
        }
        for (a, (f, &d)) in o.factors.iter().zip(party_dims).enumerate() {
            if f.nrows() != d || f.ncols() != d {
                return Err(Error::Dimension(format!(
                    "outcome {j} party {a}: factor is {}x{}, party dimension is {d}",
                    f.nrows(),
                    f.ncols()
                )));
            }
        }
        if !o.weight.is_finite() || o.weight < 0.0 {
            return Err(Error::Parameter(format!(
                "outcome {j} has invalid weight {}",
                o.weight
            )));
        }
        if o.factors.iter().any(|f| !ops::is_finite(f)) {
            return Err(Error::NonFinite);
        }
    }
    Ok(())
}

/// Tolerance on `1 - |cos θ|` between joint Kraus operators treated as
/// proportional. Geometric copies produced by cycles agree to round-off;
/// genuinely distinct outcomes in the constructions differ at `O(ε)` angles,
/// so the cut sits well below `Tolerances::RAY`.
pub const KRAUS_RAY_TOL: f64 = 1e-12;

/// Merges globally proportional outcomes.
///
/// Each group keeps the factors of its first member; the new weight is
/// `sqrt(Σ|c_i|²)` where `c_i` is member `i`'s coefficient against the
/// unweighted representative. Zero outcomes are dropped. Singleton groups
/// are left untouched, which makes the operation idempotent.
pub fn canonicalize(raw: Vec<ProductKraus>, party_dims: &[usize]) -> Result<Measurement> {
    check_dims(party_dims, &raw)?;

    struct Group {
        rep: ProductKraus,
        rep_unit: ComplexMatrix,
        rep_norm2: f64,
        coeffs: Vec<f64>,
    }

    let mut groups: Vec<Group> = Vec::new();
    for outcome in raw {
        if outcome.is_zero() {
            continue;
        }
        let total = outcome.total();
        if ops::frobenius(&total) == 0.0 {
            continue;
        }
        let hit = groups
            .iter_mut()
            .find(|g| ops::operators_proportional(&g.rep_unit, &total, KRAUS_RAY_TOL));
        match hit {
            Some(g) => {
                let coef = ops::hs_inner(&g.rep_unit, &total) / g.rep_norm2;
                g.coeffs.push(coef.norm_sqr());
            }
            None => {
                let rep_unit = ops::kron_all(outcome.factors.iter());
                let rep_norm2 = ops::frobenius(&rep_unit).powi(2);
                groups.push(Group {
                    rep: outcome,
                    rep_unit,
                    rep_norm2,
                    coeffs: Vec::new(),
                });
            }
        }
    }

    let outcomes = groups
        .into_iter()
        .map(|g| {
            if g.coeffs.is_empty() {
                g.rep
            } else {
                let own = g.rep.weight * g.rep.weight;
                let weight = (own + g.coeffs.iter().sum::<f64>()).sqrt();
                ProductKraus::new(weight, g.rep.factors)
            }
        })
        .collect();

    Ok(Measurement {
        party_dims: party_dims.to_vec(),
        outcomes,
        canonical: true,
    })
}

/// Whether `Σ_j K_j†K_j = I` within `tol` (max-entry).
pub fn check_complete(m: &Measurement, tol: f64) -> bool {
    m.completeness_deviation() <= tol
}

/// A normalized density operator on the joint space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    matrix: PsdOperator,
}

impl DensityOperator {
    pub const TRACE_TOL: f64 = 1e-10;

    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        let op = PsdOperator::new(matrix)?;
        let t = op.trace();
        if (t - 1.0).abs() > Self::TRACE_TOL {
            return Err(Error::Parameter(format!("density operator has trace {t}")));
        }
        Ok(Self { matrix: op })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            matrix: PsdOperator::from_trusted(ops::identity(dim).unscale(dim as f64)),
        }
    }

    /// `|ψ⟩⟨ψ|` for a (not necessarily normalized) vector.
    pub fn pure(psi: &nalgebra::DVector<ops::C64>) -> Result<Self> {
        let n = psi.norm();
        if n == 0.0 {
            return Err(Error::ZeroOperator);
        }
        let v = psi.unscale(n);
        Ok(Self {
            matrix: PsdOperator::from_trusted(&v * v.adjoint()),
        })
    }

    /// Computational basis projector `|k⟩⟨k|`.
    pub fn basis(dim: usize, k: usize) -> Self {
        Self {
            matrix: PsdOperator::from_trusted(ops::ket_bra(dim, k, k)),
        }
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        self.matrix.matrix()
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

/// One measurement outcome applied to a state. `state` is `None` when the
/// probability is below [`NULL_PROBABILITY`].
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub probability: f64,
    pub state: Option<DensityOperator>,
}

/// Completeness required by [`apply`].
pub const APPLY_COMPLETENESS_TOL: f64 = 1e-8;
/// Probabilities below this carry no post-measurement state.
pub const NULL_PROBABILITY: f64 = 1e-14;

/// Post-measurement probabilities and states `K ρ K† / p`.
pub fn apply(m: &Measurement, rho: &DensityOperator) -> Result<Vec<Outcome>> {
    if rho.dim() != m.total_dim() {
        return Err(Error::Dimension(format!(
            "state dimension {} does not match measurement dimension {}",
            rho.dim(),
            m.total_dim()
        )));
    }
    let deviation = m.completeness_deviation();
    if deviation > APPLY_COMPLETENESS_TOL {
        return Err(Error::Incomplete { deviation });
    }
    Ok(m.outcomes
        .iter()
        .map(|o| apply_kraus(&o.total(), rho.matrix()))
        .collect())
}

pub(crate) fn apply_kraus(k: &ComplexMatrix, rho: &ComplexMatrix) -> Outcome {
    let out = k * rho * k.adjoint();
    let p = ops::trace(&out).re.max(0.0);
    let state = (p >= NULL_PROBABILITY).then(|| DensityOperator {
        matrix: PsdOperator::from_trusted(out.unscale(p)),
    });
    Outcome {
        probability: p,
        state,
    }
}
