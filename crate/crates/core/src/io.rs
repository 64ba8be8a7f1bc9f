//! JSON formats.
//!
//! A matrix is a list of rows, each entry a `[re, im]` pair. Numbers are
//! written in shortest round-trip form, so output is byte-stable.
//!
//! * measurement: `{"party_dims": [..], "outcomes": [{"weight": w, "factors": [M, ..]}]}`
//! * tree: `{"party_dims": [..], "root": node}` with
//!   `node = {"party": a, "cumulative_local": M, "children": [node, ..], "leaf_isometries": [M, ..]}`;
//!   the root's `party` and `cumulative_local` may be omitted.
//! * cycle: `{"entry_povm": [M, ..], "steps": [{"party", "terminal", "continuing", "terminal_isometries"}], "contraction": c}`
//! * protocol: `{"prefix": tree, "cycles": [{"leaf": i, "cycle": cycle}]}`

use serde::{Deserialize, Serialize};

use crate::deficit::{Classification, DeficitReport};
use crate::measurement::{canonicalize, Measurement, ProductKraus};
use crate::ops::{ComplexMatrix, PsdOperator, C64};
use crate::simulate::{ConvergenceRow, RunRecord};
use crate::tree::{CycleDescriptor, CycleStep, InfiniteProtocol, LoccNode, LoccTree};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(transparent)]
pub struct MatrixJson(pub Vec<Vec<[f64; 2]>>);

impl MatrixJson {
    pub fn from_matrix(m: &ComplexMatrix) -> Self {
        Self(
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
                .collect(),
        )
    }

    pub fn to_matrix(&self) -> Result<ComplexMatrix> {
        let rows = self.0.len();
        let cols = self.0.first().map_or(0, Vec::len);
        if rows == 0 || self.0.iter().any(|r| r.len() != cols) {
            return Err(Error::Format("matrix rows must be nonempty and of equal length".into()));
        }
        let m = ComplexMatrix::from_fn(rows, cols, |i, j| C64::new(self.0[i][j][0], self.0[i][j][1]));
        if !crate::ops::is_finite(&m) {
            return Err(Error::NonFinite);
        }
        Ok(m)
    }
}

fn psd(m: &MatrixJson) -> Result<PsdOperator> {
    PsdOperator::new(m.to_matrix()?)
}

fn matrices(ms: &[MatrixJson]) -> Result<Vec<ComplexMatrix>> {
    ms.iter().map(MatrixJson::to_matrix).collect()
}

fn to_json(ms: &[ComplexMatrix]) -> Vec<MatrixJson> {
    ms.iter().map(MatrixJson::from_matrix).collect()
}

#[derive(Serialize, Deserialize)]
struct OutcomeJson {
    weight: f64,
    factors: Vec<MatrixJson>,
}

#[derive(Serialize, Deserialize)]
struct MeasurementJson {
    party_dims: Vec<usize>,
    outcomes: Vec<OutcomeJson>,
}

/// Parses and canonicalizes a measurement.
pub fn measurement_from_json(text: &str) -> Result<Measurement> {
    let raw: MeasurementJson = serde_json::from_str(text)?;
    let outcomes = raw
        .outcomes
        .iter()
        .map(|o| Ok(ProductKraus::new(o.weight, matrices(&o.factors)?)))
        .collect::<Result<Vec<_>>>()?;
    canonicalize(outcomes, &raw.party_dims)
}

pub fn measurement_to_json(m: &Measurement) -> String {
    let raw = MeasurementJson {
        party_dims: m.party_dims.clone(),
        outcomes: m
            .outcomes
            .iter()
            .map(|o| OutcomeJson {
                weight: o.weight,
                factors: to_json(&o.factors),
            })
            .collect(),
    };
    pretty(&raw)
}

#[derive(Serialize, Deserialize)]
struct NodeJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    party: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cumulative_local: Option<MatrixJson>,
    #[serde(default)]
    children: Vec<NodeJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    leaf_isometries: Option<Vec<MatrixJson>>,
}

#[derive(Serialize, Deserialize)]
struct TreeJson {
    party_dims: Vec<usize>,
    root: NodeJson,
}

fn node_from(n: &NodeJson, is_root: bool) -> Result<LoccNode> {
    let children = n
        .children
        .iter()
        .map(|c| node_from(c, false))
        .collect::<Result<Vec<_>>>()?;
    let leaf_isometries = n.leaf_isometries.as_deref().map(matrices).transpose()?;
    if is_root {
        return Ok(LoccNode {
            party: None,
            cumulative_local: PsdOperator::identity(1),
            children,
            leaf_isometries,
        });
    }
    let party = n.party.ok_or_else(|| Error::Format("non-root node without a party".into()))?;
    let label = n
        .cumulative_local
        .as_ref()
        .ok_or_else(|| Error::Format("non-root node without cumulative_local".into()))?;
    Ok(LoccNode {
        party: Some(party),
        cumulative_local: psd(label)?,
        children,
        leaf_isometries,
    })
}

fn node_to(n: &LoccNode) -> NodeJson {
    NodeJson {
        party: n.party,
        cumulative_local: n.party.map(|_| MatrixJson::from_matrix(n.cumulative_local.matrix())),
        children: n.children.iter().map(node_to).collect(),
        leaf_isometries: n.leaf_isometries.as_deref().map(to_json),
    }
}

fn tree_from(t: &TreeJson) -> Result<LoccTree> {
    let root = node_from(&t.root, true)?;
    let mut tree = LoccTree::new(t.party_dims.clone(), root.children);
    tree.root.leaf_isometries = root.leaf_isometries;
    Ok(tree)
}

fn tree_to(t: &LoccTree) -> TreeJson {
    TreeJson {
        party_dims: t.party_dims.clone(),
        root: node_to(&t.root),
    }
}

/// Parses a tree. Labels must be PSD; the tree is not validated further.
pub fn tree_from_json(text: &str) -> Result<LoccTree> {
    tree_from(&serde_json::from_str(text)?)
}

pub fn tree_to_json(t: &LoccTree) -> String {
    pretty(&tree_to(t))
}

#[derive(Serialize, Deserialize)]
struct StepJson {
    party: usize,
    terminal: MatrixJson,
    continuing: MatrixJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    terminal_isometries: Option<Vec<MatrixJson>>,
}

#[derive(Serialize, Deserialize)]
struct CycleJson {
    entry_povm: Vec<MatrixJson>,
    steps: Vec<StepJson>,
    contraction: f64,
}

fn cycle_from(c: &CycleJson) -> Result<CycleDescriptor> {
    Ok(CycleDescriptor {
        entry_povm: c.entry_povm.iter().map(psd).collect::<Result<_>>()?,
        steps: c
            .steps
            .iter()
            .map(|s| {
                Ok(CycleStep {
                    party: s.party,
                    terminal: psd(&s.terminal)?,
                    continuing: psd(&s.continuing)?,
                    terminal_isometries: s.terminal_isometries.as_deref().map(matrices).transpose()?,
                })
            })
            .collect::<Result<_>>()?,
        contraction: c.contraction,
    })
}

fn cycle_to(c: &CycleDescriptor) -> CycleJson {
    CycleJson {
        entry_povm: c.entry_povm.iter().map(|e| MatrixJson::from_matrix(e.matrix())).collect(),
        steps: c
            .steps
            .iter()
            .map(|s| StepJson {
                party: s.party,
                terminal: MatrixJson::from_matrix(s.terminal.matrix()),
                continuing: MatrixJson::from_matrix(s.continuing.matrix()),
                terminal_isometries: s.terminal_isometries.as_deref().map(to_json),
            })
            .collect(),
        contraction: c.contraction,
    }
}

pub fn cycle_from_json(text: &str) -> Result<CycleDescriptor> {
    cycle_from(&serde_json::from_str(text)?)
}

pub fn cycle_to_json(c: &CycleDescriptor) -> String {
    pretty(&cycle_to(c))
}

#[derive(Serialize, Deserialize)]
struct AttachedJson {
    leaf: usize,
    cycle: CycleJson,
}

#[derive(Serialize, Deserialize)]
struct ProtocolJson {
    prefix: TreeJson,
    cycles: Vec<AttachedJson>,
}

pub fn protocol_from_json(text: &str) -> Result<InfiniteProtocol> {
    let p: ProtocolJson = serde_json::from_str(text)?;
    Ok(InfiniteProtocol {
        prefix: tree_from(&p.prefix)?,
        cycles: p
            .cycles
            .iter()
            .map(|a| Ok((a.leaf, cycle_from(&a.cycle)?)))
            .collect::<Result<_>>()?,
    })
}

pub fn protocol_to_json(p: &InfiniteProtocol) -> String {
    pretty(&ProtocolJson {
        prefix: tree_to(&p.prefix),
        cycles: p
            .cycles
            .iter()
            .map(|(leaf, c)| AttachedJson {
                leaf: *leaf,
                cycle: cycle_to(c),
            })
            .collect(),
    })
}

#[derive(Serialize)]
struct GroupJson {
    party: usize,
    multiplicity: usize,
    members: Vec<usize>,
    representative: MatrixJson,
}

#[derive(Serialize)]
struct ReportJson {
    #[serde(skip_serializing_if = "Option::is_none")]
    classification: Option<&'static str>,
    delta: usize,
    ray_counts: Vec<usize>,
    n: usize,
    p: usize,
    /// `null` when every party has a single group.
    margin: Option<f64>,
    groups: Vec<GroupJson>,
}

/// The deficit report, optionally with a verdict.
pub fn report_to_json(r: &DeficitReport, c: Option<Classification>) -> String {
    pretty(&ReportJson {
        classification: c.map(Classification::as_str),
        delta: r.delta,
        ray_counts: r.ray_counts.clone(),
        n: r.n,
        p: r.p,
        margin: r.margin.is_finite().then_some(r.margin),
        groups: r
            .groups
            .iter()
            .map(|g| GroupJson {
                party: g.party,
                multiplicity: g.multiplicity,
                members: g.members.clone(),
                representative: MatrixJson::from_matrix(g.ray.representative.matrix()),
            })
            .collect(),
    })
}

#[derive(Serialize)]
struct RecordJson {
    leaf: Option<usize>,
    path: Vec<usize>,
    probability: f64,
    residual: bool,
    post_state: Option<MatrixJson>,
    rounds_used: usize,
    cycle: Option<usize>,
    cycle_index: usize,
    step: Option<usize>,
}

/// A run transcript.
pub fn records_to_json(records: &[RunRecord]) -> String {
    let rows: Vec<RecordJson> = records
        .iter()
        .map(|r| RecordJson {
            leaf: r.leaf,
            path: r.path.clone(),
            probability: r.probability,
            residual: r.is_residual(),
            post_state: r.post_state.as_ref().map(|s| MatrixJson::from_matrix(s.matrix())),
            rounds_used: r.rounds_used,
            cycle: r.cycle,
            cycle_index: r.cycle_index,
            step: r.step,
        })
        .collect();
    pretty(&rows)
}

#[derive(Serialize)]
struct RowJson {
    epsilon: f64,
    d_lower: f64,
    d_upper: f64,
    paper_bound: Option<f64>,
    truncation_r: usize,
}

pub fn rows_to_json(rows: &[ConvergenceRow]) -> String {
    let v: Vec<RowJson> = rows
        .iter()
        .map(|r| RowJson {
            epsilon: r.epsilon,
            d_lower: r.d_lower,
            d_upper: r.d_upper,
            paper_bound: r.paper_bound,
            truncation_r: r.truncation_r,
        })
        .collect();
    pretty(&v)
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructions::{qubit_family, QubitFamilyParams};
    use crate::tree::random_finite_tree;

    #[test]
    fn measurement_round_trip_is_byte_stable() {
        let m = qubit_family(QubitFamilyParams::new(0.3, 0.1)).unwrap().m_eps;
        let text = measurement_to_json(&m);
        let back = measurement_from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(measurement_to_json(&back), text);
    }

    #[test]
    fn tree_round_trip() {
        let mut t = random_finite_tree(&[2, 3], 2, 2, 8).unwrap();
        t.root.children[1].children[0].leaf_isometries =
            Some(vec![crate::ops::identity(2), crate::ops::identity(3)]);
        let text = tree_to_json(&t);
        let back = tree_from_json(&text).unwrap();
        let (a, b) = (t.leaves(), back.leaves());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.path, y.path);
            assert!(crate::ops::max_abs_diff(&x.kraus().total(), &y.kraus().total()) < 1e-15);
        }
        assert_eq!(tree_to_json(&back), tree_to_json(&tree_from_json(&tree_to_json(&back)).unwrap()));
    }

    #[test]
    fn cycle_and_protocol_round_trip() {
        let c = qubit_family(QubitFamilyParams::new(0.5, 0.25)).unwrap().cycle.unwrap();
        let text = cycle_to_json(&c);
        assert_eq!(cycle_from_json(&text).unwrap(), c);
        let p = InfiniteProtocol {
            prefix: LoccTree::new(vec![2, 2], Vec::new()),
            cycles: vec![(0, c)],
        };
        let text = protocol_to_json(&p);
        assert_eq!(protocol_to_json(&protocol_from_json(&text).unwrap()), text);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(tree_from_json("{"), Err(Error::Json(_))));
        let ragged = r#"{"party_dims":[1],"outcomes":[{"weight":1,"factors":[[[[1,0]],[]]]}]}"#;
        assert!(matches!(measurement_from_json(ragged), Err(Error::Format(_))));
        let no_party = r#"{"party_dims":[2],"root":{"children":[{"cumulative_local":[[[1,0],[0,0]],[[0,0],[1,0]]]}]}}"#;
        assert!(matches!(tree_from_json(no_party), Err(Error::Format(_))));
    }
}
