//! Explicit measurement families.
//!
//! * [`qubit_family`]: the four-outcome two-qubit measurement with its
//!   four-step repeating protocol and the three-outcome `ε = 0` limit.
//! * [`general_family`]: random bipartite families driven by a `2L`-step
//!   cycle with contraction `qε`.
//! * [`infinitize`]: turns any finite bipartite tree into a nearby
//!   measurement with zero ray deficit.
//! * [`delta_one_chain`], [`delta_one_two_round`]: finite protocols whose
//!   deficit is exactly one.

use crate::deficit::{delta, DeficitReport};
use crate::measurement::{canonicalize, check_complete, Measurement, ProductKraus};
use crate::ops::{self, psd_sqrt, pseudo_inverse, ComplexMatrix, PsdOperator, Tolerances};
use crate::rng::{self, SeededRng};
use crate::tree::{
    unroll, validate, CycleDescriptor, CycleStep, InfiniteProtocol, LoccNode, LoccTree, TREE_TOL,
};
use crate::{Error, Result};
use rand::Rng;

/// Completeness tolerance for the builders' self-checks.
pub const BUILD_TOL: f64 = 1e-9;
/// Resampling budget for randomized builders.
pub const MAX_ATTEMPTS: usize = 32;

fn spin_flip() -> ComplexMatrix {
    ops::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
}

fn trusted(m: ComplexMatrix) -> PsdOperator {
    PsdOperator::new(m.clone()).unwrap_or_else(|_| {
        // clip round-off below zero
        PsdOperator::new(ops::hermitian_fn(&m, |v| v.max(0.0))).expect("clipped operator is PSD")
    })
}

fn sqrt_of(p: &PsdOperator) -> ComplexMatrix {
    psd_sqrt(p).into_matrix()
}

/// `sqrt(P) T sqrt(P)`.
fn sandwich(p: &PsdOperator, t: &ComplexMatrix) -> PsdOperator {
    let s = sqrt_of(p);
    trusted(ops::hermitian_part(&(&s * t * &s)))
}

fn difference(a: &PsdOperator, b: &PsdOperator) -> PsdOperator {
    trusted(a.matrix() - b.matrix())
}

// ---------------------------------------------------------------------------
// two-qubit family

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitFamilyParams {
    pub q: f64,
    pub epsilon: f64,
}

impl QubitFamilyParams {
    pub fn new(q: f64, epsilon: f64) -> Self {
        Self { q, epsilon }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::Parameter(format!("q = {} must lie in (0, 1)", self.q)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return Err(Error::Parameter(format!(
                "epsilon = {} must lie in [0, 1)",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// `2ε(1 − q)/(1 − qε)`.
    pub fn distance_bound(&self) -> f64 {
        2.0 * self.epsilon * (1.0 - self.q) / (1.0 - self.q * self.epsilon)
    }
}

#[derive(Debug, Clone)]
pub struct QubitFamily {
    pub params: QubitFamilyParams,
    /// The four product Kraus operators `Â_j ⊗ B̂_j` without the weight.
    pub kraus: Vec<ProductKraus>,
    /// Weighted by `1/sqrt(1 − qε)`; at `ε = 0` this coincides with `m0`.
    pub m_eps: Measurement,
    /// Four-step protocol with contraction `qε`; absent at `ε = 0`.
    pub cycle: Option<CycleDescriptor>,
    pub m0: Measurement,
    /// Two-round protocol implementing `m0`, with Bob's spin flip on the
    /// last branch.
    pub m0_tree: LoccTree,
}

fn qubit_kraus(q: f64, eps: f64) -> Vec<ProductKraus> {
    let p0 = ops::ket_bra(2, 0, 0);
    let p1 = ops::ket_bra(2, 1, 1);
    let lower = ops::ket_bra(2, 0, 1);
    let a = [
        ops::identity(2),
        p0.scale((1.0 - q).sqrt()),
        p0.scale(q.sqrt()) + &p1,
        lower.scale((1.0 - q).sqrt()),
    ];
    let b = [
        p0.scale((1.0 - eps).sqrt()),
        p0.scale(eps.sqrt()) + &p1,
        lower.scale((1.0 - eps).sqrt()),
        ops::identity(2).scale(eps.sqrt()),
    ];
    a.into_iter()
        .zip(b)
        .map(|(x, y)| ProductKraus::unit(vec![x, y]))
        .collect()
}

fn qubit_measurement(q: f64, eps: f64) -> Result<Measurement> {
    let w = (1.0 - q * eps).sqrt().recip();
    let raw = qubit_kraus(q, eps)
        .into_iter()
        .map(|k| ProductKraus::new(w, k.factors))
        .collect();
    canonicalize(raw, &[2, 2])
}

fn qubit_cycle(q: f64, eps: f64) -> Result<CycleDescriptor> {
    let d = |a: f64, b: f64| PsdOperator::new(ops::diag(&[a, b]));
    let id = ops::identity(2);
    let mut steps = vec![
        CycleStep::new(1, d(1.0 - eps, 0.0)?, d(eps, 1.0)?),
        CycleStep::new(0, d(1.0 - q, 0.0)?, d(q, 1.0)?),
        CycleStep::new(1, d(0.0, 1.0 - eps)?, d(eps, eps)?),
        CycleStep::new(0, d(0.0, 1.0 - q)?, d(q, q)?),
    ];
    steps[2].terminal_isometries = Some(vec![id.clone(), spin_flip()]);
    steps[3].terminal_isometries = Some(vec![spin_flip(), id]);
    Ok(CycleDescriptor {
        entry_povm: vec![PsdOperator::identity(2), PsdOperator::identity(2)],
        steps,
        contraction: q * eps,
    })
}

fn qubit_m0_tree(q: f64) -> Result<LoccTree> {
    let d = |a: f64, b: f64| PsdOperator::new(ops::diag(&[a, b]));
    let alice = vec![
        LoccNode::leaf(0, d(1.0 - q, 0.0)?),
        LoccNode::leaf(0, d(q, 1.0)?).with_isometries(vec![ops::identity(2), spin_flip()]),
    ];
    Ok(LoccTree::new(
        vec![2, 2],
        vec![
            LoccNode::leaf(1, d(1.0, 0.0)?),
            LoccNode::branch(1, d(0.0, 1.0)?, alice),
        ],
    ))
}

/// Builds the two-qubit family and runs its self-checks.
pub fn qubit_family(params: QubitFamilyParams) -> Result<QubitFamily> {
    params.check()?;
    let QubitFamilyParams { q, epsilon: eps } = params;
    let m_eps = qubit_measurement(q, eps)?;
    if !check_complete(&m_eps, BUILD_TOL) {
        return Err(Error::Incomplete {
            deviation: m_eps.completeness_deviation(),
        });
    }
    let m0 = qubit_measurement(q, 0.0)?;
    let cycle = if eps > 0.0 {
        let c = qubit_cycle(q, eps)?;
        let report = validate(&unroll(&c, 1)?, BUILD_TOL);
        if !report.is_valid() {
            return Err(Error::InvalidCycle(format!("{:?}", report.violations)));
        }
        Some(c)
    } else {
        None
    };
    Ok(QubitFamily {
        params,
        kraus: qubit_kraus(q, eps),
        m_eps,
        cycle,
        m0,
        m0_tree: qubit_m0_tree(q)?,
    })
}

// ---------------------------------------------------------------------------
// general bipartite family

/// Cumulative chains of a general family.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralFamilySpec {
    pub dims: (usize, usize),
    pub l: usize,
    pub q: f64,
    pub epsilon: f64,
    /// `𝒜̂_1 … 𝒜̂_{2L+1}` at positions `0 … 2L`.
    pub a_chain: Vec<PsdOperator>,
    /// `ℬ̂_0 … ℬ̂_{2L}` at positions `0 … 2L`.
    pub b_chain: Vec<PsdOperator>,
    /// `λ_min(ℬ̂_{2L−2})`.
    pub epsilon_star: f64,
    /// `λ_min(𝒜̂_{2L−1})`.
    pub q_star: f64,
}

impl GeneralFamilySpec {
    /// `𝒜̂_i`, `1 ≤ i ≤ 2L+1`.
    pub fn a(&self, i: usize) -> &PsdOperator {
        &self.a_chain[i - 1]
    }

    /// `ℬ̂_i`, `0 ≤ i ≤ 2L`.
    pub fn b(&self, i: usize) -> &PsdOperator {
        &self.b_chain[i]
    }

    /// Largest violation of the sibling sums along both chains.
    pub fn sum_residual(&self) -> f64 {
        (1..=self.l)
            .flat_map(|j| {
                let a = ops::max_abs_diff(
                    self.a(2 * j - 1).matrix(),
                    &(self.a(2 * j).matrix() + self.a(2 * j + 1).matrix()),
                );
                let b = ops::max_abs_diff(
                    self.b(2 * j - 2).matrix(),
                    &(self.b(2 * j - 1).matrix() + self.b(2 * j).matrix()),
                );
                [a, b]
            })
            .fold(0.0, f64::max)
    }

    /// Deviation of the chain ends from `q I` and `ε I`.
    pub fn endpoint_residual(&self) -> f64 {
        let (da, db) = self.dims;
        let a = ops::max_abs_diff(self.a(2 * self.l + 1).matrix(), &ops::identity(da).scale(self.q));
        let b = ops::max_abs_diff(self.b(2 * self.l).matrix(), &ops::identity(db).scale(self.epsilon));
        a.max(b)
    }

    /// Smallest eigenvalue over the continuing elements, which must be
    /// full rank.
    pub fn min_continuing_eigenvalue(&self) -> f64 {
        let a = (1..=self.l).map(|j| ops::min_eigenvalue(self.a(2 * j + 1).matrix()));
        let b = (1..=self.l).map(|j| ops::min_eigenvalue(self.b(2 * j).matrix()));
        a.chain(b).fold(f64::INFINITY, f64::min)
    }

    fn measurement(&self, eps_zero: bool) -> Result<Measurement> {
        let n = 2 * self.l;
        let (w, b_end) = if eps_zero {
            // ℬ̂_{2L} vanishes and ℬ̂_{2L−1} takes the whole of ℬ̂_{2L−2}
            (1.0, Some(self.b(n - 2).clone()))
        } else {
            ((1.0 - self.q * self.epsilon).sqrt().recip(), None)
        };
        let raw = (1..=n)
            .filter(|&i| !(eps_zero && i == n))
            .map(|i| {
                let b = match (&b_end, i == n - 1) {
                    (Some(end), true) => end.clone(),
                    _ => self.b(i).clone(),
                };
                ProductKraus::new(w, vec![sqrt_of(self.a(i)), sqrt_of(&b)])
            })
            .collect();
        canonicalize(raw, &[self.dims.0, self.dims.1])
    }

    fn cycle(&self) -> CycleDescriptor {
        let steps = (1..=self.l)
            .flat_map(|j| {
                [
                    CycleStep::new(1, self.b(2 * j - 1).clone(), self.b(2 * j).clone()),
                    CycleStep::new(0, self.a(2 * j).clone(), self.a(2 * j + 1).clone()),
                ]
            })
            .collect();
        CycleDescriptor {
            entry_povm: vec![PsdOperator::identity(self.dims.0), PsdOperator::identity(self.dims.1)],
            steps,
            contraction: self.q * self.epsilon,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneralFamily {
    pub spec: GeneralFamilySpec,
    /// `{Â_i ⊗ B̂_i / sqrt(1 − qε)}`, `i = 1 … 2L`.
    pub m_eps: Measurement,
    pub cycle: CycleDescriptor,
    /// The `ε → 0` limit with `2L − 1` outcomes.
    pub m0: Measurement,
    pub report: DeficitReport,
    /// Samples drawn before the distinctness check passed.
    pub attempts: usize,
}

/// Spectrum range of the random splits generating the continuing elements.
const SPLIT_SPECTRUM: (f64, f64) = (0.5, 0.95);

/// Random family on `C^dA ⊗ C^dB`.
///
/// Continuing elements are drawn as `sqrt(P) T sqrt(P)` with the spectrum of
/// `T` in `[0.5, 0.95]`; the final splits are fixed by `𝒜̂_{2L+1} = qI` and
/// `ℬ̂_{2L} = εI`. If `q` is omitted it is set to half of `q*`. Samples are
/// redrawn until the deficit is zero, which needs `L ≥ 2`.
pub fn general_family(
    dims: (usize, usize),
    l: usize,
    q: Option<f64>,
    epsilon: f64,
    seed: u64,
) -> Result<GeneralFamily> {
    let (da, db) = dims;
    if da < 2 || db < 2 {
        return Err(Error::Parameter(format!("dimensions {dims:?} must be at least 2")));
    }
    if l == 0 {
        return Err(Error::Parameter("L must be at least 1".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Parameter(format!("epsilon = {epsilon} must lie in (0, 1)")));
    }
    let mut last_err = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut g = rng::seeded(rng::child_seed(seed, attempt as u64));
        let mut a_cont = Vec::new();
        let mut b_cont = Vec::new();
        let mut a = PsdOperator::identity(da);
        let mut b = PsdOperator::identity(db);
        for _ in 1..l {
            b = sandwich(&b, &rng::random_spectrum(&mut g, db, SPLIT_SPECTRUM.0, SPLIT_SPECTRUM.1));
            a = sandwich(&a, &rng::random_spectrum(&mut g, da, SPLIT_SPECTRUM.0, SPLIT_SPECTRUM.1));
            b_cont.push(b.clone());
            a_cont.push(a.clone());
        }
        let q_star = ops::min_eigenvalue(a.matrix());
        let q = q.unwrap_or(q_star / 2.0);
        let spec = chains_to_spec(dims, l, q, epsilon, &a_cont, &b_cont, true)?;
        match finish_family(spec, attempt + 1) {
            Ok(f) => return Ok(f),
            Err(e @ (Error::Distinctness { .. } | Error::GroupingAmbiguity { .. })) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(match last_err {
        Some(Error::GroupingAmbiguity { .. }) | Some(Error::Distinctness { .. }) | None => {
            Error::Distinctness {
                attempts: MAX_ATTEMPTS,
            }
        }
        Some(e) => e,
    })
}

/// Family from explicit continuing elements `𝒜̂_3, 𝒜̂_5, …, 𝒜̂_{2L−1}` and
/// `ℬ̂_2, ℬ̂_4, …, ℬ̂_{2L−2}`. Here the thresholds may be met with equality,
/// which is the case for the two-qubit family.
pub fn general_family_from_chains(
    dims: (usize, usize),
    l: usize,
    q: f64,
    epsilon: f64,
    a_continuing: &[PsdOperator],
    b_continuing: &[PsdOperator],
) -> Result<GeneralFamily> {
    if l == 0 || a_continuing.len() + 1 != l || b_continuing.len() + 1 != l {
        return Err(Error::Parameter(format!(
            "L = {l} needs {} continuing elements per party",
            l.saturating_sub(1)
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) || !(q > 0.0 && q < 1.0) {
        return Err(Error::Parameter(format!("q = {q}, epsilon = {epsilon} must lie in (0, 1)")));
    }
    let spec = chains_to_spec(dims, l, q, epsilon, a_continuing, b_continuing, false)?;
    finish_family(spec, 1)
}

/// Thresholds below this relative slack count as met with equality.
const THRESHOLD_SLACK: f64 = 1e-12;

fn chains_to_spec(
    dims: (usize, usize),
    l: usize,
    q: f64,
    epsilon: f64,
    a_cont: &[PsdOperator],
    b_cont: &[PsdOperator],
    strict: bool,
) -> Result<GeneralFamilySpec> {
    let (da, db) = dims;
    let mut a_chain = vec![PsdOperator::identity(da)];
    let mut b_chain = vec![PsdOperator::identity(db)];
    for j in 1..=l {
        let next_b = if j < l {
            b_cont[j - 1].clone()
        } else {
            PsdOperator::identity(db).scaled(epsilon)
        };
        let next_a = if j < l {
            a_cont[j - 1].clone()
        } else {
            PsdOperator::identity(da).scaled(q)
        };
        let parent_b = b_chain.last().expect("nonempty").clone();
        let parent_a = a_chain.last().expect("nonempty").clone();
        if j == l {
            let eps_star = ops::min_eigenvalue(parent_b.matrix());
            let q_star = ops::min_eigenvalue(parent_a.matrix());
            let over = |x: f64, star: f64| {
                if strict {
                    x >= star
                } else {
                    x > star * (1.0 + THRESHOLD_SLACK)
                }
            };
            if over(epsilon, eps_star) {
                return Err(Error::Threshold {
                    epsilon,
                    threshold: eps_star,
                });
            }
            if over(q, q_star) {
                return Err(Error::Parameter(format!("q = {q} is not below q* = {q_star}")));
            }
        }
        b_chain.push(difference(&parent_b, &next_b));
        b_chain.push(next_b);
        a_chain.push(difference(&parent_a, &next_a));
        a_chain.push(next_a);
    }
    let epsilon_star = ops::min_eigenvalue(b_chain[2 * l - 2].matrix());
    let q_star = ops::min_eigenvalue(a_chain[2 * l - 2].matrix());
    Ok(GeneralFamilySpec {
        dims,
        l,
        q,
        epsilon,
        a_chain,
        b_chain,
        epsilon_star,
        q_star,
    })
}

fn finish_family(spec: GeneralFamilySpec, attempts: usize) -> Result<GeneralFamily> {
    if spec.sum_residual() > BUILD_TOL || spec.endpoint_residual() > BUILD_TOL {
        return Err(Error::InvalidCycle("chain sums do not close".into()));
    }
    let m_eps = spec.measurement(false)?;
    if !check_complete(&m_eps, BUILD_TOL) {
        return Err(Error::Incomplete {
            deviation: m_eps.completeness_deviation(),
        });
    }
    let report = delta(&m_eps, Tolerances::RAY)?;
    if report.delta != 0 || m_eps.len() != 2 * spec.l {
        return Err(Error::Distinctness { attempts });
    }
    let cycle = spec.cycle();
    cycle.check()?;
    let m0 = spec.measurement(true)?;
    Ok(GeneralFamily {
        spec,
        m_eps,
        cycle,
        m0,
        report,
        attempts,
    })
}

// ---------------------------------------------------------------------------
// infinitizer

#[derive(Debug, Clone, PartialEq)]
pub struct InfinitizeConfig {
    pub epsilon: f64,
    /// Cycle half-length `L` used at every leaf without an override.
    pub half_length: usize,
    /// Optional per-leaf `L_j`, in depth-first leaf order.
    pub per_leaf: Option<Vec<usize>>,
    pub seed: u64,
    pub max_attempts: usize,
}

impl InfinitizeConfig {
    pub fn new(epsilon: f64, half_length: usize, seed: u64) -> Self {
        Self {
            epsilon,
            half_length,
            per_leaf: None,
            seed,
            max_attempts: MAX_ATTEMPTS,
        }
    }

    fn half_length_at(&self, leaf: usize) -> usize {
        self.per_leaf
            .as_ref()
            .and_then(|v| v.get(leaf).copied())
            .unwrap_or(self.half_length)
    }
}

#[derive(Debug, Clone)]
pub struct InfinitizeOutput {
    pub protocol: InfiniteProtocol,
    pub m_eps: Measurement,
    /// Absent at `ε = 0`, where the input measurement is returned as is.
    pub report: Option<DeficitReport>,
    pub attempts: usize,
}

/// Spectrum of the random operators defining each leaf's planes.
const PLANE_SPECTRUM: (f64, f64) = (0.2, 0.8);
/// Normalized singular value below which two planes are taken to meet.
pub const PLANE_TOL: f64 = 1e-8;

/// Per-leaf data of the appended branch.
struct LeafBranch {
    /// Party measuring first inside the cycle (the leaf's last actor).
    x: usize,
    /// `(label, direction)` spanning each party's plane.
    planes: [(PsdOperator, PsdOperator); 2],
    /// Terminal of the ε-split performed by the other party.
    y_terminal: PsdOperator,
    cycle: CycleDescriptor,
}

/// Converts a finite bipartite tree into an infinite-round protocol whose
/// measurement has zero ray deficit and tends to the tree's measurement as
/// `ε → 0`.
///
/// 1. Every sibling group is perturbed in individual coordinates:
///    `E_i → (1 − ε)(E_i + (I − Π)/k) + ε F_i` with `Σ F_i = I`, so the
///    sibling sums hold, descendants follow automatically, and every label
///    becomes full rank.
/// 2. At each leaf, with `x` the label of the party that acted last and `y`
///    the other label, the other party splits `y` into `y − εβ` (terminal)
///    and `εβ`, where `β = sqrt(y) M sqrt(y)`.
/// 3. A `2L`-step cycle starting with the last actor follows. The last
///    actor's elements lie in `span{x, sqrt(x) G sqrt(x)}` and return to
///    `2^{−L} x`; the other party's lie in `span{y, β}` and return to
///    `2^{−L} εβ`, with the final terminal proportional to `y − εβ` so that it
///    coalesces with the ε-split's terminal. Contraction is `4^{−L}`.
/// 4. Planes of different leaves are checked to meet at most in a shared
///    original label, and the final deficit is checked to be zero; failures
///    are resampled.
pub fn infinitize(t: &LoccTree, cfg: &InfinitizeConfig) -> Result<InfinitizeOutput> {
    let report = validate(t, TREE_TOL);
    if let Some(v) = report.violations.first() {
        return Err(Error::InvalidTree(format!("at {:?}: {}", v.path, v.message)));
    }
    if t.party_count() != 2 {
        return Err(Error::Parameter("the infinitizer handles two parties".into()));
    }
    if t.party_dims.iter().any(|&d| d < 2) {
        return Err(Error::Parameter("both parties need dimension at least 2".into()));
    }
    let eps = cfg.epsilon;
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Threshold {
            epsilon: eps,
            threshold: 1.0,
        });
    }
    let leaf_count = t.leaf_count();
    for j in 0..leaf_count {
        if cfg.half_length_at(j) < 2 {
            return Err(Error::Parameter(format!(
                "leaf {j}: cycle half-length must be at least 2"
            )));
        }
    }
    if eps == 0.0 {
        return Ok(InfinitizeOutput {
            protocol: InfiniteProtocol {
                prefix: t.clone(),
                cycles: Vec::new(),
            },
            m_eps: crate::tree::leaf_measurement(t)?,
            report: None,
            attempts: 0,
        });
    }

    let mut plane_failures = 0;
    for attempt in 0..cfg.max_attempts {
        let mut g = rng::seeded(rng::child_seed(cfg.seed, attempt as u64));
        let perturbed = perturb_tree(t, eps, &mut g);
        let leaves = perturbed.leaves();
        let branches: Vec<LeafBranch> = leaves
            .iter()
            .enumerate()
            .map(|(j, view)| {
                let x = leaf_party(&perturbed, &view.path);
                leaf_branch(x, &view.labels, eps, cfg.half_length_at(j), &mut g)
            })
            .collect::<Result<_>>()?;

        if !planes_disjoint(&branches) {
            plane_failures += 1;
            continue;
        }

        let (prefix, cycles) = attach(&perturbed, &branches);
        let protocol = InfiniteProtocol { prefix, cycles };
        let m_eps = protocol.limit_measurement()?;
        match delta(&m_eps, Tolerances::RAY) {
            Ok(r) if r.delta == 0 => {
                if !check_complete(&m_eps, 1e-8) {
                    return Err(Error::Incomplete {
                        deviation: m_eps.completeness_deviation(),
                    });
                }
                return Ok(InfinitizeOutput {
                    protocol,
                    m_eps,
                    report: Some(r),
                    attempts: attempt + 1,
                });
            }
            Ok(_) | Err(Error::GroupingAmbiguity { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    if plane_failures == cfg.max_attempts {
        Err(Error::PlaneIntersection {
            attempts: cfg.max_attempts,
        })
    } else {
        Err(Error::Distinctness {
            attempts: cfg.max_attempts,
        })
    }
}

fn leaf_party(t: &LoccTree, path: &[usize]) -> usize {
    let mut node = &t.root;
    for &i in path {
        node = &node.children[i];
    }
    node.party.unwrap_or(0)
}

fn support_projector(p: &ComplexMatrix) -> ComplexMatrix {
    ops::hermitian_fn(p, |v| if v > Tolerances::RANK { 1.0 } else { 0.0 })
}

/// A unitary agreeing with `u` on the support of `label`.
fn unitary_extension(u: &ComplexMatrix, label: &PsdOperator) -> ComplexMatrix {
    let restricted = u * support_projector(label.matrix());
    let d = ops::svd(&restricted);
    d.u * d.v.adjoint()
}

fn perturb_tree(t: &LoccTree, eps: f64, g: &mut SeededRng) -> LoccTree {
    fn go(
        orig: &LoccNode,
        old: &mut Vec<PsdOperator>,
        new: &mut Vec<PsdOperator>,
        eps: f64,
        g: &mut SeededRng,
    ) -> LoccNode {
        let mut out = LoccNode {
            party: orig.party,
            cumulative_local: orig.cumulative_local.clone(),
            children: Vec::new(),
            leaf_isometries: None,
        };
        if let Some(p) = orig.party {
            out.cumulative_local = new[p].clone();
        }
        if orig.is_leaf() {
            out.leaf_isometries = orig.leaf_isometries.as_ref().map(|us| {
                us.iter()
                    .zip(old.iter())
                    .map(|(u, label)| unitary_extension(u, label))
                    .collect()
            });
            return out;
        }
        let party = orig.child_party().expect("validated tree");
        let parent_old = old[party].clone();
        let parent_new = new[party].clone();
        let d = parent_old.dim();
        let k = orig.children.len();
        let root_old = sqrt_of(&parent_old);
        let inv = pseudo_inverse(&root_old, Tolerances::RANK.sqrt());
        let kernel = (ops::identity(d) - support_projector(parent_old.matrix())).unscale(k as f64);
        let fresh = rng::random_partition_of_identity(g, d, k);
        for (child, f) in orig.children.iter().zip(&fresh) {
            let e = &inv * child.cumulative_local.matrix() * &inv + &kernel;
            let mixed = e.scale(1.0 - eps) + f.scale(eps);
            let label = sandwich(&parent_new, &mixed);
            let saved_old = std::mem::replace(&mut old[party], child.cumulative_local.clone());
            let saved_new = std::mem::replace(&mut new[party], label);
            out.children.push(go(child, old, new, eps, g));
            old[party] = saved_old;
            new[party] = saved_new;
        }
        out
    }
    let ids: Vec<PsdOperator> = t.party_dims.iter().map(|&d| PsdOperator::identity(d)).collect();
    let root = go(&t.root, &mut ids.clone(), &mut ids.clone(), eps, g);
    LoccTree {
        party_dims: t.party_dims.clone(),
        root: LoccNode {
            party: None,
            ..root
        },
    }
}

fn leaf_branch(
    x: usize,
    labels: &[PsdOperator],
    eps: f64,
    l: usize,
    g: &mut SeededRng,
) -> Result<LeafBranch> {
    let y = 1 - x;
    let xl = labels[x].clone();
    let yl = labels[y].clone();
    let gx = sandwich(&xl, &rng::random_spectrum(g, xl.dim(), PLANE_SPECTRUM.0, PLANE_SPECTRUM.1));
    let beta = sandwich(&yl, &rng::random_spectrum(g, yl.dim(), PLANE_SPECTRUM.0, PLANE_SPECTRUM.1));
    let half = 0.5f64.powi(l as i32);

    // last actor: X_m = 2^{-m}(x + c_m g), c_0 = c_L = 0
    let c: Vec<f64> = (0..=l)
        .map(|m| if m == 0 || m == l { 0.0 } else { g.random_range(0.1..0.9) })
        .collect();
    let x_chain: Vec<PsdOperator> = (0..=l)
        .map(|m| {
            let s = 0.5f64.powi(m as i32);
            trusted((xl.matrix() + gx.matrix().scale(c[m])).scale(s))
        })
        .collect();

    // other party: Y_0 = εβ, Y_m = ε(p_m y + r_m β), Y_L = 2^{-L} εβ
    let w = rng::random_simplex(g, l - 1);
    let z = rng::random_simplex(g, l - 1);
    let d0 = 1.0 - half;
    let ratio = w.iter().zip(&z).map(|(wi, zi)| zi / wi).fold(f64::INFINITY, f64::min);
    let mu = g.random_range(0.3..0.9) * 0.15 * d0 * ratio;
    let drop = d0 + eps * mu;
    let mut y_chain = vec![beta.scaled(eps)];
    let (mut p, mut r) = (0.0, 1.0);
    for m in 1..l {
        p += mu * w[m - 1];
        r -= drop * z[m - 1];
        y_chain.push(trusted((yl.matrix().scale(p) + beta.matrix().scale(r)).scale(eps)));
    }
    y_chain.push(beta.scaled(eps * half));

    let y_terminal = trusted(yl.matrix() - beta.matrix().scale(eps));
    let mut entry = vec![PsdOperator::identity(1); 2];
    entry[x] = xl.clone();
    entry[y] = y_chain[0].clone();
    let steps = (1..=l)
        .flat_map(|m| {
            [
                CycleStep::new(x, difference(&x_chain[m - 1], &x_chain[m]), x_chain[m].clone()),
                CycleStep::new(y, difference(&y_chain[m - 1], &y_chain[m]), y_chain[m].clone()),
            ]
        })
        .collect();
    let mut planes = [(xl.clone(), gx.clone()), (yl.clone(), beta.clone())];
    if x == 1 {
        planes.swap(0, 1);
    }
    Ok(LeafBranch {
        x,
        planes,
        y_terminal,
        cycle: CycleDescriptor {
            entry_povm: entry,
            steps,
            contraction: half * half,
        },
    })
}

/// Real coordinates of a Hermitian matrix in an orthonormal basis.
fn hermitian_coords(h: &ComplexMatrix) -> Vec<f64> {
    let d = h.nrows();
    let mut v = Vec::with_capacity(d * d);
    let s = std::f64::consts::SQRT_2;
    for i in 0..d {
        v.push(h[(i, i)].re);
        for j in i + 1..d {
            v.push(s * h[(i, j)].re);
            v.push(s * h[(i, j)].im);
        }
    }
    v
}

/// Smallest singular value of the column-normalized matrix of operators.
fn independence(ops_: &[&PsdOperator]) -> f64 {
    let cols: Vec<Vec<f64>> = ops_
        .iter()
        .map(|o| {
            let v = hermitian_coords(o.matrix());
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let rows = cols[0].len();
    if rows < cols.len() {
        return 0.0;
    }
    let m = ComplexMatrix::from_fn(rows, cols.len(), |i, j| ops::r(cols[j][i]));
    ops::svd(&m).singular_values.into_iter().fold(f64::INFINITY, f64::min)
}

fn planes_disjoint(branches: &[LeafBranch]) -> bool {
    for party in 0..2 {
        for j in 0..branches.len() {
            for k in j + 1..branches.len() {
                let (lj, dj) = &branches[j].planes[party];
                let (lk, dk) = &branches[k].planes[party];
                if independence(&[lj, dj, lk, dk]) > PLANE_TOL {
                    continue;
                }
                let shared = ops::ray_distance(lj, lk).map(|d| d <= Tolerances::RAY).unwrap_or(false);
                if !(shared && independence(&[lj, dj, dk]) > PLANE_TOL) {
                    return false;
                }
            }
        }
    }
    true
}

fn attach(perturbed: &LoccTree, branches: &[LeafBranch]) -> (LoccTree, Vec<(usize, CycleDescriptor)>) {
    fn go(node: &mut LoccNode, branches: &[LeafBranch], next: &mut usize) {
        if node.is_leaf() {
            let b = &branches[*next];
            *next += 1;
            let y = 1 - b.x;
            let mut terminal = LoccNode::leaf(y, b.y_terminal.clone());
            terminal.leaf_isometries = node.leaf_isometries.take();
            let continuing = LoccNode::leaf(y, b.cycle.entry_povm[y].clone());
            node.children = vec![terminal, continuing];
            return;
        }
        for c in &mut node.children {
            go(c, branches, next);
        }
    }
    let mut prefix = perturbed.clone();
    let mut isometries = Vec::new();
    for view in perturbed.leaves() {
        isometries.push(view.isometries);
    }
    go(&mut prefix.root, branches, &mut 0);
    let cycles = branches
        .iter()
        .zip(isometries)
        .enumerate()
        .map(|(j, (b, us))| {
            let mut c = b.cycle.clone();
            for s in &mut c.steps {
                s.terminal_isometries = us.clone();
            }
            (2 * j + 1, c)
        })
        .collect();
    (prefix, cycles)
}

// ---------------------------------------------------------------------------
// deficit-one chains

/// Spectrum of the random splits in the deficit-one chains.
const CHAIN_SPECTRUM: (f64, f64) = (0.05, 0.95);

/// Alternating chain of `N − 1` two-outcome measurements, Alice first. The
/// first outcome of each terminates except in the final measurement, whose
/// two outcomes share the other party's element; the deficit is one.
pub fn delta_one_chain(n: usize, dims: (usize, usize), seed: u64) -> Result<LoccTree> {
    if n < 2 {
        return Err(Error::Parameter("the chain needs N ≥ 2".into()));
    }
    if dims.0 < 2 || dims.1 < 2 {
        return Err(Error::Parameter(format!("dimensions {dims:?} must be at least 2")));
    }
    let party_dims = vec![dims.0, dims.1];
    for attempt in 0..MAX_ATTEMPTS {
        let mut g = rng::seeded(rng::child_seed(seed, attempt as u64));
        let mut labels: Vec<PsdOperator> = party_dims.iter().map(|&d| PsdOperator::identity(d)).collect();
        // (party, terminal, continuing) per step, built top-down
        let mut steps = Vec::with_capacity(n - 1);
        for k in 0..n - 1 {
            let party = k % 2;
            let t = rng::random_spectrum(&mut g, party_dims[party], CHAIN_SPECTRUM.0, CHAIN_SPECTRUM.1);
            let cont = sandwich(&labels[party], &t);
            let term = difference(&labels[party], &cont);
            labels[party] = cont.clone();
            steps.push((party, term, cont));
        }
        let mut below: Option<Vec<LoccNode>> = None;
        for (party, term, cont) in steps.into_iter().rev() {
            let continuing = match below.take() {
                Some(children) => LoccNode::branch(party, cont, children),
                None => LoccNode::leaf(party, cont),
            };
            below = Some(vec![LoccNode::leaf(party, term), continuing]);
        }
        let tree = LoccTree::new(party_dims.clone(), below.unwrap_or_default());
        if deficit_is_one(&tree, n) {
            return Ok(tree);
        }
    }
    Err(Error::Distinctness {
        attempts: MAX_ATTEMPTS,
    })
}

/// Two-round variant: Alice measures `N − 2` outcomes
/// `w_{m1} K + w_{m2} (I − K)`, Bob splits `I` into `I − λ_m β` and `λ_m β`,
/// and after Bob's second outcome Alice separates `w_{m1} K` from
/// `w_{m2} (I − K)`. Those final outcomes coalesce across `m`.
pub fn delta_one_two_round(n: usize, dims: (usize, usize), seed: u64) -> Result<LoccTree> {
    if n < 3 {
        return Err(Error::Parameter("the two-round chain needs N ≥ 3".into()));
    }
    if dims.0 < 2 || dims.1 < 2 {
        return Err(Error::Parameter(format!("dimensions {dims:?} must be at least 2")));
    }
    let (da, db) = dims;
    let m = n - 2;
    for attempt in 0..MAX_ATTEMPTS {
        let mut g = rng::seeded(rng::child_seed(seed, attempt as u64));
        let k1 = rng::random_spectrum(&mut g, da, 0.2, 0.8);
        let k2 = ops::identity(da) - &k1;
        let beta = rng::random_spectrum(&mut g, db, 0.2, 0.8);
        let w1 = rng::random_simplex(&mut g, m);
        let w2 = rng::random_simplex(&mut g, m);
        let children = (0..m)
            .map(|i| {
                let lambda = g.random_range(0.2..0.9);
                let a = trusted(k1.scale(w1[i]) + k2.scale(w2[i]));
                let bob = vec![
                    LoccNode::leaf(1, trusted(ops::identity(db) - beta.scale(lambda))),
                    LoccNode::branch(
                        1,
                        trusted(beta.scale(lambda)),
                        vec![
                            LoccNode::leaf(0, trusted(k1.scale(w1[i]))),
                            LoccNode::leaf(0, trusted(k2.scale(w2[i]))),
                        ],
                    ),
                ];
                LoccNode::branch(0, a, bob)
            })
            .collect();
        let tree = LoccTree::new(vec![da, db], children);
        if deficit_is_one(&tree, n) {
            return Ok(tree);
        }
    }
    Err(Error::Distinctness {
        attempts: MAX_ATTEMPTS,
    })
}

fn deficit_is_one(tree: &LoccTree, n: usize) -> bool {
    let Ok(m) = crate::tree::leaf_measurement(tree) else {
        return false;
    };
    m.len() == n && matches!(delta(&m, Tolerances::RAY), Ok(r) if r.delta == 1)
}
