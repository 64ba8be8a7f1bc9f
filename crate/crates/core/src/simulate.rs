//! Exact execution of protocols and convergence tables.

use std::io::Write;

use rayon::prelude::*;

use crate::constructions::{general_family, infinitize, qubit_family, InfinitizeConfig, QubitFamilyParams};
use crate::measurement::{
    apply_kraus, distance_lower_detailed, distance_upper, identity_matching, DensityOperator,
    DistanceBudget, Measurement, NULL_PROBABILITY,
};
use crate::tree::{leaf_measurement, CycleDescriptor, InfiniteProtocol, LoccTree};
use crate::{Error, Result};

/// One terminal branch of an exhaustive run, or the unresolved residual.
#[derive(Debug, Clone)]
pub struct RunRecord {
    /// Depth-first leaf index in the unrolled tree; `None` for the residual.
    pub leaf: Option<usize>,
    pub path: Vec<usize>,
    pub probability: f64,
    /// `None` for the residual and for branches of negligible probability.
    pub post_state: Option<DensityOperator>,
    pub rounds_used: usize,
    /// Index into the protocol's cycle list, for branches inside a cycle.
    pub cycle: Option<usize>,
    /// Zero-based pass of that cycle.
    pub cycle_index: usize,
    /// Step of the cycle at which the branch terminated.
    pub step: Option<usize>,
}

impl RunRecord {
    pub fn is_residual(&self) -> bool {
        self.leaf.is_none()
    }
}

/// Enumerates every terminal outcome of `passes` passes through each cycle.
///
/// Probabilities are exact. The mass still inside a cycle after the last
/// pass is reported as a single residual record (last in the list) and is
/// never renormalized away.
pub fn run(p: &InfiniteProtocol, rho: &DensityOperator, passes: usize) -> Result<Vec<RunRecord>> {
    if passes == 0 {
        return Err(Error::Parameter("at least one pass is required".into()));
    }
    let total_dim: usize = p.prefix.party_dims.iter().product();
    if rho.dim() != total_dim {
        return Err(Error::Dimension(format!(
            "state has dimension {}, protocol acts on {total_dim}",
            rho.dim()
        )));
    }
    let unrolled = p.unroll(passes)?;
    let attach: Vec<(Vec<usize>, usize)> = {
        let leaves = p.prefix.leaves();
        p.cycles
            .iter()
            .map(|(leaf, c)| (leaves[*leaf].path.clone(), c.steps.len()))
            .collect()
    };
    let leaves = unrolled.leaves();
    let classified: Vec<(usize, Option<(usize, usize)>, bool)> = leaves
        .iter()
        .map(|view| locate(&view.path, &attach, passes))
        .enumerate()
        .map(|(i, loc)| match loc {
            None => (i, None, false),
            Some((c, k, residual)) => (i, Some((c, k)), residual),
        })
        .collect();

    let records: Vec<(RunRecord, bool)> = classified
        .par_iter()
        .map(|&(i, loc, residual)| {
            let view = &leaves[i];
            let o = apply_kraus(&view.kraus().total(), rho.matrix());
            let prob = o.probability;
            let post = o.state.filter(|_| prob > NULL_PROBABILITY && !residual);
            let (cycle, cycle_index, step) = match loc {
                Some((c, k)) => {
                    let n = attach[c].1;
                    (Some(c), k / n, (!residual).then_some(k % n))
                }
                None => (None, 0, None),
            };
            (
                RunRecord {
                    leaf: Some(i),
                    path: view.path.clone(),
                    probability: prob,
                    post_state: post,
                    rounds_used: view.path.len(),
                    cycle,
                    cycle_index,
                    step,
                },
                residual,
            )
        })
        .collect();

    let mut out = Vec::with_capacity(records.len() + 1);
    let mut residual = RunRecord {
        leaf: None,
        path: Vec::new(),
        probability: 0.0,
        post_state: None,
        rounds_used: 0,
        cycle: None,
        cycle_index: passes,
        step: None,
    };
    for (r, is_residual) in records {
        if is_residual {
            residual.probability += r.probability;
            residual.rounds_used = residual.rounds_used.max(r.rounds_used);
        } else {
            out.push(r);
        }
    }
    if !p.cycles.is_empty() {
        out.push(residual);
    }
    Ok(out)
}

/// For a leaf below a cycle: `(cycle, step count below the attachment,
/// residual?)`. Inside a cycle the path continues with `1` at every step
/// and ends with `0` at the terminal branch.
fn locate(path: &[usize], attach: &[(Vec<usize>, usize)], passes: usize) -> Option<(usize, usize, bool)> {
    attach.iter().enumerate().find_map(|(c, (prefix, n))| {
        let rest = path.strip_prefix(prefix.as_slice())?;
        let total = n * passes;
        if rest.len() == total && rest.iter().all(|&b| b == 1) {
            return Some((c, total, true));
        }
        let (last, ones) = rest.split_last()?;
        (*last == 0 && ones.iter().all(|&b| b == 1)).then_some((c, ones.len(), false))
    })
}

/// Residual weight after `passes` passes: `contraction^passes`.
pub fn truncation_error(c: &CycleDescriptor, passes: u32) -> f64 {
    c.contraction.powi(passes as i32)
}

/// Smallest `R` with `contraction^R < target`, by repeated multiplication.
/// `None` when the contraction is not below one.
pub fn passes_below(contraction: f64, target: f64) -> Option<usize> {
    if !(0.0..1.0).contains(&contraction) {
        return None;
    }
    let mut err = 1.0;
    let mut r = 0;
    while err >= target {
        err *= contraction;
        r += 1;
    }
    Some(r)
}

/// Truncation target used for the `R` column of convergence tables.
pub const TRUNCATION_TARGET: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub d_lower: f64,
    pub d_upper: f64,
    /// Closed-form bound, where the family has one.
    pub paper_bound: Option<f64>,
    /// Passes needed for truncation error below `1e-6`; zero without a cycle.
    pub truncation_r: usize,
}

impl ConvergenceRow {
    /// `d_lower` exceeds the closed-form bound by more than `1e-6`.
    pub fn violates_bound(&self) -> bool {
        self.paper_bound.is_some_and(|b| self.d_lower > b + 1e-6)
    }
}

/// `M_ε`, its limit, and the cycle contraction at one `ε`.
#[derive(Debug, Clone)]
pub struct FamilyInstance {
    pub m_eps: Measurement,
    pub m0: Measurement,
    pub contraction: f64,
    pub paper_bound: Option<f64>,
}

/// A family of measurements indexed by `ε`.
pub trait FamilyBuilder: Sync {
    fn build(&self, epsilon: f64) -> Result<FamilyInstance>;
}

pub struct QubitFamilyBuilder {
    pub q: f64,
}

impl FamilyBuilder for QubitFamilyBuilder {
    fn build(&self, epsilon: f64) -> Result<FamilyInstance> {
        let params = QubitFamilyParams::new(self.q, epsilon);
        let f = qubit_family(params)?;
        Ok(FamilyInstance {
            contraction: f.cycle.as_ref().map_or(0.0, |c| c.contraction),
            m_eps: f.m_eps,
            m0: f.m0,
            paper_bound: Some(params.distance_bound()),
        })
    }
}

pub struct GeneralFamilyBuilder {
    pub dims: (usize, usize),
    pub l: usize,
    pub q: Option<f64>,
    pub seed: u64,
}

impl FamilyBuilder for GeneralFamilyBuilder {
    fn build(&self, epsilon: f64) -> Result<FamilyInstance> {
        let f = general_family(self.dims, self.l, self.q, epsilon, self.seed)?;
        Ok(FamilyInstance {
            contraction: f.cycle.contraction,
            m_eps: f.m_eps,
            m0: f.m0,
            paper_bound: None,
        })
    }
}

pub struct InfinitizerBuilder {
    pub tree: LoccTree,
    pub half_length: usize,
    pub seed: u64,
}

impl FamilyBuilder for InfinitizerBuilder {
    fn build(&self, epsilon: f64) -> Result<FamilyInstance> {
        let out = infinitize(&self.tree, &InfinitizeConfig::new(epsilon, self.half_length, self.seed))?;
        Ok(FamilyInstance {
            contraction: out.protocol.contraction(),
            m_eps: out.m_eps,
            m0: leaf_measurement(&self.tree)?,
            paper_bound: None,
        })
    }
}

/// Distance estimates between `M_ε` and `M_0` along a grid of `ε`.
///
/// The upper bound uses the better of the index matching and the assignment
/// found at the lower bound's optimal state.
pub fn convergence(
    family: &dyn FamilyBuilder,
    grid: &[f64],
    budget: DistanceBudget,
) -> Result<Vec<ConvergenceRow>> {
    grid.iter()
        .map(|&eps| {
            let inst = family.build(eps)?;
            let lower = distance_lower_detailed(&inst.m_eps, &inst.m0, budget)?;
            let n = lower.assignment.rows.len();
            let by_index = distance_upper(&inst.m_eps, &inst.m0, &identity_matching(n))?;
            let by_assignment = if lower.assignment.rows == identity_matching(n) {
                by_index
            } else {
                distance_upper(&inst.m_eps, &inst.m0, &lower.assignment.rows)?
            };
            let truncation_r = if inst.contraction == 0.0 {
                0
            } else {
                passes_below(inst.contraction, TRUNCATION_TARGET)
                    .ok_or_else(|| Error::InvalidCycle("contraction is not below one".into()))?
            };
            Ok(ConvergenceRow {
                epsilon: eps,
                d_lower: lower.value,
                d_upper: by_index.min(by_assignment),
                paper_bound: inst.paper_bound,
                truncation_r,
            })
        })
        .collect()
}

pub const CSV_HEADER: &str = "epsilon,d_lower,d_upper,paper_bound,R_for_1e-6";

/// Writes the table with a header; a missing bound is an empty field.
pub fn write_csv<W: Write>(rows: &[ConvergenceRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        let bound = r.paper_bound.map(|b| b.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", r.epsilon, r.d_lower, r.d_upper, bound, r.truncation_r)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::apply;
    use crate::ops::{self, PsdOperator};
    use crate::tree::LoccNode;

    fn qubit_protocol(q: f64, eps: f64) -> InfiniteProtocol {
        let c = qubit_family(QubitFamilyParams::new(q, eps)).unwrap().cycle.unwrap();
        InfiniteProtocol {
            prefix: LoccTree::new(vec![2, 2], Vec::new()),
            cycles: vec![(0, c)],
        }
    }

    #[test]
    fn residual_on_maximally_mixed_state() {
        let p = qubit_protocol(0.5, 0.5);
        let rho = DensityOperator::maximally_mixed(4);
        for r in 1..=4 {
            let recs = run(&p, &rho, r).unwrap();
            let res = recs.last().unwrap();
            assert!(res.is_residual());
            assert!((res.probability - 0.25f64.powi(r as i32)).abs() < 1e-14);
            let total: f64 = recs.iter().map(|x| x.probability).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert_eq!(recs.len(), 4 * r + 1);
        }
    }

    #[test]
    fn cumulative_probabilities_approach_the_limit() {
        let (q, eps) = (0.3, 0.6);
        let p = qubit_protocol(q, eps);
        let psi = nalgebra::DVector::from_vec(vec![
            ops::c(0.6, 0.0),
            ops::c(0.0, 0.48),
            ops::c(0.0, 0.0),
            ops::c(0.64, 0.0),
        ]);
        let rho = DensityOperator::pure(&psi).unwrap();
        let limit = apply(&p.limit_measurement().unwrap(), &rho).unwrap();
        let recs = run(&p, &rho, 30).unwrap();
        let mut per_step = [0.0; 4];
        for r in recs.iter().filter(|r| !r.is_residual()) {
            per_step[r.step.unwrap()] += r.probability;
        }
        for (a, b) in per_step.iter().zip(&limit) {
            assert!((a - b.probability).abs() < 1e-12);
        }
        let first = recs.iter().find(|r| r.step == Some(0) && r.cycle_index == 2).unwrap();
        assert_eq!(first.rounds_used, 9);
    }

    #[test]
    fn prefix_only_matches_apply() {
        let t = crate::tree::random_finite_tree(&[2, 3], 2, 2, 5).unwrap();
        let p = InfiniteProtocol {
            prefix: t.clone(),
            cycles: Vec::new(),
        };
        let rho = DensityOperator::maximally_mixed(6);
        let recs = run(&p, &rho, 1).unwrap();
        let expected = apply(&leaf_measurement(&t).unwrap(), &rho).unwrap();
        assert_eq!(recs.len(), expected.len());
        for (r, e) in recs.iter().zip(&expected) {
            assert!((r.probability - e.probability).abs() < 1e-12);
        }
    }

    #[test]
    fn cycle_below_a_prefix_leaf() {
        let half = PsdOperator::new(ops::identity(2).scale(0.5)).unwrap();
        let prefix = LoccTree::new(vec![2, 2], vec![LoccNode::leaf(0, half.clone()), LoccNode::leaf(0, half)]);
        let mut c = qubit_family(QubitFamilyParams::new(0.5, 0.5)).unwrap().cycle.unwrap();
        c.entry_povm[0] = c.entry_povm[0].scaled(0.5);
        for s in &mut c.steps {
            if s.party == 0 {
                s.terminal = s.terminal.scaled(0.5);
                s.continuing = s.continuing.scaled(0.5);
            }
        }
        let p = InfiniteProtocol {
            prefix,
            cycles: vec![(1, c)],
        };
        let recs = run(&p, &DensityOperator::maximally_mixed(4), 2).unwrap();
        assert!((recs.last().unwrap().probability - 0.5 * 0.0625).abs() < 1e-14);
        let total: f64 = recs.iter().map(|r| r.probability).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(recs[0].cycle, None);
        assert_eq!(recs[1].cycle, Some(0));
    }

    #[test]
    fn truncation_arithmetic() {
        let c = qubit_family(QubitFamilyParams::new(0.5, 0.5)).unwrap().cycle.unwrap();
        assert_eq!(truncation_error(&c, 4), 0.00390625);
        assert_eq!(truncation_error(&c, 0), 1.0);
        assert_eq!(passes_below(0.9, 0.01), Some(44));
        assert_eq!(passes_below(1.0, 0.01), None);
    }

    #[test]
    fn convergence_table_for_the_qubit_family() {
        let rows = convergence(
            &QubitFamilyBuilder { q: 0.5 },
            &[0.2, 0.1, 0.0],
            DistanceBudget::new(16, 2, 0),
        )
        .unwrap();
        // independent search over states with all 24 matchings
        assert!((rows[0].d_lower - 0.259_550_569_236_9).abs() < 1e-6);
        for w in rows.windows(2) {
            assert!(w[1].d_lower <= w[0].d_lower + 1e-6);
        }
        for r in &rows {
            assert!(r.d_lower <= r.d_upper + 1e-9);
        }
        assert!(rows[2].d_lower.abs() < 1e-12 && rows[2].d_upper.abs() < 1e-12);
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(text.lines().count(), 4);
    }
}
