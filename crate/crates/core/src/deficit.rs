//! Ray deficit of a separable measurement and the finite-round test.

use crate::measurement::Measurement;
use crate::ops::{self, PsdOperator, Ray};
use crate::{Error, Result};

/// Outcomes whose local elements for one party lie on the same ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayGroup {
    pub party: usize,
    pub ray: Ray,
    pub multiplicity: usize,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeficitReport {
    pub delta: usize,
    /// Distinct rays per party.
    pub ray_counts: Vec<usize>,
    pub groups: Vec<RayGroup>,
    /// Canonical outcome count.
    pub n: usize,
    /// Party count.
    pub p: usize,
    /// Smallest normalized distance between different groups of one party;
    /// infinite when every party has a single group.
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    /// A single distinct outcome.
    TrivialIsometry,
    /// `Δ < P − 1`: no finite-round protocol implements the measurement.
    NotFiniteRoundLocc,
    /// The necessary condition holds, so nothing is concluded.
    Inconclusive,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TrivialIsometry => "TrivialIsometry",
            Self::NotFiniteRoundLocc => "NotFiniteRoundLOCC",
            Self::Inconclusive => "Inconclusive",
        }
    }
}

/// Pairs closer than this multiple of the tolerance, but not within it,
/// make the grouping ambiguous.
pub const AMBIGUITY_FACTOR: f64 = 10.0;

/// Partitions outcome indices by proportionality of their local elements.
///
/// Groups are listed by lowest member index and represented by that member.
/// Any pair at normalized distance in `(tol, 10·tol)` is an error.
pub fn group_rays(m: &Measurement, party: usize, tol: f64) -> Result<Vec<RayGroup>> {
    Ok(group_with_margin(m, party, tol)?.0)
}

fn group_with_margin(m: &Measurement, party: usize, tol: f64) -> Result<(Vec<RayGroup>, f64)> {
    if party >= m.party_count() {
        return Err(Error::Parameter(format!(
            "party {party} out of range for {} parties",
            m.party_count()
        )));
    }
    let locals: Vec<PsdOperator> = m
        .outcomes
        .iter()
        .map(|o| o.local_povm(party).normalized())
        .collect::<Result<_>>()?;
    let n = locals.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = ops::frobenius(&(locals[i].matrix() - locals[j].matrix()));
            if d > tol && d < AMBIGUITY_FACTOR * tol {
                return Err(Error::GroupingAmbiguity {
                    party,
                    distance: d,
                    tol,
                    upper: AMBIGUITY_FACTOR * tol,
                });
            }
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    // connected components of the "within tol" graph
    let mut label = vec![usize::MAX; n];
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = start;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if label[j] == usize::MAX && dist[i][j] <= tol {
                    label[j] = start;
                    stack.push(j);
                }
            }
        }
    }

    let mut margin = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            if label[i] != label[j] {
                margin = margin.min(dist[i][j]);
            }
        }
    }

    let mut groups = Vec::new();
    for rep in 0..n {
        if label[rep] != rep {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&j| label[j] == rep).collect();
        groups.push(RayGroup {
            party,
            ray: Ray {
                representative: locals[rep].clone(),
                sources: members.clone(),
            },
            multiplicity: members.len(),
            members,
        });
    }
    Ok((groups, margin))
}

/// The ray deficit, computed both as `Σ(m − 1)` and as `PN − Σ R_α`.
pub fn delta(m: &Measurement, tol: f64) -> Result<DeficitReport> {
    if !m.canonical {
        return Err(Error::Parameter("the ray deficit needs a canonical measurement".into()));
    }
    if m.is_empty() {
        return Err(Error::Parameter("measurement has no outcomes".into()));
    }
    let p = m.party_count();
    let n = m.len();
    let mut groups = Vec::new();
    let mut ray_counts = Vec::with_capacity(p);
    let mut margin = f64::INFINITY;
    for party in 0..p {
        let (g, mg) = group_with_margin(m, party, tol)?;
        ray_counts.push(g.len());
        margin = margin.min(mg);
        groups.extend(g);
    }
    let by_multiplicity: usize = groups.iter().map(|g| g.multiplicity - 1).sum();
    let by_count = p * n - ray_counts.iter().sum::<usize>();
    if by_multiplicity != by_count {
        return Err(Error::Parameter(format!(
            "deficit formulas disagree: {by_multiplicity} vs {by_count}"
        )));
    }
    Ok(DeficitReport {
        delta: by_multiplicity,
        ray_counts,
        groups,
        n,
        p,
        margin,
    })
}

pub fn classify(m: &Measurement, tol: f64) -> Result<Classification> {
    Ok(classify_with_report(m, tol)?.0)
}

/// The verdict together with the deficit report that certifies it.
pub fn classify_with_report(m: &Measurement, tol: f64) -> Result<(Classification, DeficitReport)> {
    let report = delta(m, tol)?;
    let c = if report.n == 1 {
        Classification::TrivialIsometry
    } else if report.delta + 1 < report.p {
        Classification::NotFiniteRoundLocc
    } else {
        Classification::Inconclusive
    };
    Ok((c, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{canonicalize, ProductKraus};
    use crate::ops::{diag, identity, ket_bra, ComplexMatrix, Tolerances};

    fn family(q: f64, eps: f64) -> Measurement {
        let p0 = ket_bra(2, 0, 0);
        let p1 = ket_bra(2, 1, 1);
        let flip = ket_bra(2, 0, 1);
        let a: [ComplexMatrix; 4] = [
            identity(2),
            p0.scale((1.0 - q).sqrt()),
            p0.scale(q.sqrt()) + &p1,
            flip.scale((1.0 - q).sqrt()),
        ];
        let b: [ComplexMatrix; 4] = [
            p0.scale((1.0 - eps).sqrt()),
            p0.scale(eps.sqrt()) + &p1,
            flip.scale((1.0 - eps).sqrt()),
            identity(2).scale(eps.sqrt()),
        ];
        let w = 1.0 / (1.0 - q * eps).sqrt();
        let raw = a
            .into_iter()
            .zip(b)
            .map(|(x, y)| ProductKraus::new(w, vec![x, y]))
            .collect();
        canonicalize(raw, &[2, 2]).unwrap()
    }

    #[test]
    fn alice_side_all_singletons() {
        let groups = group_rays(&family(0.5, 0.25), 0, Tolerances::RAY).unwrap();
        assert_eq!(groups.len(), 4);
        assert!(groups.iter().all(|g| g.multiplicity == 1));
    }

    #[test]
    fn limit_bob_side_has_a_doubleton() {
        let m = family(0.5, 0.0);
        assert_eq!(m.len(), 3);
        let groups = group_rays(&m, 1, Tolerances::RAY).unwrap();
        let sizes: Vec<usize> = groups.iter().map(|g| g.multiplicity).collect();
        assert_eq!(sizes, vec![1, 2]);
        assert_eq!(groups[1].members, vec![1, 2]);
        let r = delta(&m, Tolerances::RAY).unwrap();
        assert_eq!(r.delta, 1);
        assert_eq!(classify(&m, Tolerances::RAY).unwrap(), Classification::Inconclusive);
    }

    #[test]
    fn family_has_zero_deficit() {
        let m = family(0.5, 0.25);
        let r = delta(&m, Tolerances::RAY).unwrap();
        assert_eq!((r.delta, r.n, r.p), (0, 4, 2));
        assert_eq!(r.ray_counts, vec![4, 4]);
        assert!(r.margin > 0.1);
        assert_eq!(classify(&m, Tolerances::RAY).unwrap(), Classification::NotFiniteRoundLocc);
    }

    #[test]
    fn shared_local_part_is_one_group() {
        let raw = (0..3)
            .map(|k| ProductKraus::unit(vec![identity(2).scale(0.5), ket_bra(3, k, k)]))
            .collect();
        let m = canonicalize(raw, &[2, 3]).unwrap();
        let groups = group_rays(&m, 0, Tolerances::RAY).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].multiplicity, 3);
    }

    #[test]
    fn single_outcome_is_trivial() {
        let m = canonicalize(vec![ProductKraus::unit(vec![identity(2), identity(2)])], &[2, 2]).unwrap();
        assert_eq!(classify(&m, Tolerances::RAY).unwrap(), Classification::TrivialIsometry);
    }

    #[test]
    fn near_threshold_is_ambiguous() {
        let tol = Tolerances::RAY;
        let raw = vec![
            ProductKraus::unit(vec![diag(&[1.0, 1.0]), ket_bra(2, 0, 0)]),
            ProductKraus::unit(vec![diag(&[1.0, (1.0 + 6.0 * tol).sqrt()]), ket_bra(2, 1, 1)]),
        ];
        let m = canonicalize(raw, &[2, 2]).unwrap();
        assert!(matches!(
            delta(&m, tol),
            Err(Error::GroupingAmbiguity { party: 0, .. })
        ));
    }

    #[test]
    fn zero_local_element_rejected() {
        let m = Measurement {
            party_dims: vec![2, 2],
            outcomes: vec![ProductKraus::unit(vec![identity(2), ops::zeros(2, 2)])],
            canonical: true,
        };
        assert!(matches!(group_rays(&m, 1, 1e-8), Err(Error::ZeroOperator)));
    }
}
