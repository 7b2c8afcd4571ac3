//! The stacked parameter vector y(t) = [α(t), β(t), A(t), Γ(t)].

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{ArcSet, TemporalGraph};
use crate::process::{Index, ParamProcess};

/// Parameter processes bound to a temporal graph.
#[derive(Clone, Debug)]
pub struct ParamBundle {
    pub alpha: ParamProcess,
    pub beta: ParamProcess,
    pub gamma: ParamProcess,
    pub graph: TemporalGraph,
}

impl ParamBundle {
    /// Binds the processes to the graph's node count.
    pub fn new(graph: TemporalGraph, alpha: ParamProcess, beta: ParamProcess, gamma: ParamProcess) -> Result<Self> {
        let n = graph.node_count();
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        Ok(ParamBundle {
            alpha: alpha.bind(n)?,
            beta: beta.bind(n)?,
            gamma: gamma.bind(n)?,
            graph,
        })
    }

    /// Constant parameters on a graph.
    pub fn constant(graph: TemporalGraph, alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        Self::new(
            graph,
            ParamProcess::constant(alpha),
            ParamProcess::constant(beta),
            ParamProcess::constant(gamma),
        )
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Independent realization of the stochastic parameters; the graph and
    /// indicator membership are shared.
    pub fn realization(&self, salt: u64) -> Self {
        ParamBundle {
            alpha: self.alpha.realization(salt),
            beta: self.beta.realization(salt),
            gamma: self.gamma.realization(salt),
            graph: self.graph.clone(),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.alpha.is_deterministic() && self.beta.is_deterministic() && self.gamma.is_deterministic()
    }

    /// Empty snapshot sized for this bundle.
    pub fn new_snapshot(&self) -> Snapshot {
        let n = self.node_count();
        Snapshot {
            t: f64::NAN,
            alpha: vec![0.0; n],
            beta: vec![0.0; n],
            arcs: self.graph.base_arcs().clone(),
            gamma: Vec::new(),
            keys: None,
        }
    }

    /// Evaluates y(t) into `snap`, reusing buffers and skipping components
    /// whose constancy piece has not changed.
    pub fn fill(&self, t: f64, snap: &mut Snapshot) {
        let epoch = self.graph.epoch_index(t);
        let keys = PieceKeys {
            epoch,
            alpha: self.alpha.piece_key(t),
            beta: self.beta.piece_key(t),
            gamma: self.gamma.piece_key(t),
        };
        let prev = snap.keys.take();
        let same = |f: fn(&PieceKeys) -> Option<u64>| match &prev {
            Some(p) => f(p).is_some() && f(p) == f(&keys),
            None => false,
        };
        if !same(|k| k.alpha) {
            self.alpha.fill_nodes(t, &mut snap.alpha);
        }
        if !same(|k| k.beta) {
            self.beta.fill_nodes(t, &mut snap.beta);
        }
        let epoch_same = prev.as_ref().is_some_and(|p| p.epoch == epoch);
        if !epoch_same {
            snap.arcs = self.graph.epoch(epoch);
        }
        if !(epoch_same && same(|k| k.gamma)) {
            fill_arcs(&self.gamma, t, &snap.arcs, &mut snap.gamma);
        }
        snap.t = t;
        snap.keys = Some(keys);
    }

    /// Freshly allocated y(t).
    pub fn snapshot(&self, t: f64) -> Snapshot {
        let mut s = self.new_snapshot();
        self.fill(t, &mut s);
        s
    }
}

fn fill_arcs(gamma: &ParamProcess, t: f64, arcs: &ArcSet, out: &mut Vec<f64>) {
    out.clear();
    if gamma.is_uniform() {
        let x = gamma.eval_unchecked(t, Index::Global);
        out.resize(arcs.len(), x);
    } else {
        out.extend(
            arcs.iter()
                .map(|(source, target)| gamma.eval_unchecked(t, Index::Arc { target, source })),
        );
    }
}

#[derive(Clone, Debug, PartialEq)]
struct PieceKeys {
    epoch: usize,
    alpha: Option<u64>,
    beta: Option<u64>,
    gamma: Option<u64>,
}

/// y(t) at one time: per-node α and β, the arc set A(t), and γ per arc in
/// the arc set's flat (target, source) order.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub arcs: Arc<ArcSet>,
    pub gamma: Vec<f64>,
    keys: Option<PieceKeys>,
}

impl Snapshot {
    /// Builds a snapshot directly from values, e.g. for validators.
    pub fn from_values(alpha: Vec<f64>, beta: Vec<f64>, arcs: Arc<ArcSet>, gamma: Vec<f64>) -> Result<Self> {
        let n = arcs.node_count();
        if alpha.len() != n || beta.len() != n || gamma.len() != arcs.len() {
            return Err(Error::InvalidArgument(
                "snapshot dimensions do not match the arc set".into(),
            ));
        }
        Ok(Snapshot {
            t: 0.0,
            alpha,
            beta,
            arcs,
            gamma,
            keys: None,
        })
    }

    pub fn node_count(&self) -> usize {
        self.alpha.len()
    }

    /// Attackers of `v` and the matching γ_vu values.
    pub fn row(&self, v: usize) -> (&[u32], &[f64]) {
        let sources = self.arcs.in_neighbors(v);
        let start = self.arcs.row_start(v);
        (sources, &self.gamma[start..start + sources.len()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{erdos_renyi, Perturbation};

    #[test]
    fn snapshot_matches_direct_evaluation() {
        let g = erdos_renyi(30, 0.2, 4)
            .unwrap()
            .with_perturbation(Some(Perturbation::standard(9)))
            .unwrap();
        let bundle = ParamBundle::new(
            g.clone(),
            ParamProcess::piecewise_uniform(0.1, 0.3, 1).unwrap(),
            ParamProcess::sinusoidal(0.5, &[(0.1, 1.0, 0.0)]),
            ParamProcess::piecewise_uniform(0.0, 0.5, 2).unwrap(),
        )
        .unwrap();
        let mut snap = bundle.new_snapshot();
        for k in 0..400 {
            let t = k as f64 * 0.05;
            bundle.fill(t, &mut snap);
            let fresh = bundle.snapshot(t);
            assert_eq!(snap.alpha, fresh.alpha);
            assert_eq!(snap.beta, fresh.beta);
            assert_eq!(snap.gamma, fresh.gamma);
            assert_eq!(snap.arcs, g.arcs_at(t));
            for v in 0..30 {
                assert_eq!(snap.alpha[v], bundle.alpha.eval(t, Index::Node(v)).unwrap());
                let (src, gam) = snap.row(v);
                for (&u, &x) in src.iter().zip(gam) {
                    let want = bundle
                        .gamma
                        .eval(
                            t,
                            Index::Arc {
                                target: v,
                                source: u as usize,
                            },
                        )
                        .unwrap();
                    assert_eq!(x, want);
                }
            }
        }
    }

    #[test]
    fn empty_graph_rejected() {
        let g = TemporalGraph::new(ArcSet::empty(0));
        assert!(matches!(
            ParamBundle::constant(g, 0.0, 0.5, 0.1),
            Err(Error::EmptyGraph)
        ));
    }
}
