//! Sector-to-sector importance network and its planar maximally filtered
//! graph.

mod categories;
mod planarity;

pub use categories::{category_names, macro_category, UNCLASSIFIED};
pub use planarity::{check_planarity, is_planar, KuratowskiKind, KuratowskiSubgraph, PlanarEmbedding, Planarity};

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::ExplainerMatrix;
use crate::scalar::Scalar;

/// F[s, s'] = validated importance of feature sector s for target sector s'.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorImportanceMatrix<T> {
    pub sectors: Vec<String>,
    pub f: Array2<T>,
}

/// Transposes a targets × features validated-importance matrix onto the
/// feature order and zeroes the diagonal.
pub fn sector_importance_matrix<T: Scalar>(
    targets: &[String],
    features: &[String],
    validated: ArrayView2<'_, T>,
) -> Result<SectorImportanceMatrix<T>> {
    if validated.dim() != (targets.len(), features.len()) {
        return Err(Error::shape(format!(
            "importances {:?} for {} targets and {} features",
            validated.dim(),
            targets.len(),
            features.len()
        )));
    }
    let mut sorted_t = targets.to_vec();
    let mut sorted_f = features.to_vec();
    sorted_t.sort();
    sorted_f.sort();
    if sorted_t != sorted_f {
        return Err(Error::shape("targets and features must be the same sectors"));
    }
    if validated.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
        return Err(Error::Data("importances must be finite and non-negative".into()));
    }
    let row_of: std::collections::HashMap<&str, usize> = targets.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let n = features.len();
    let f = Array2::from_shape_fn((n, n), |(s, t)| {
        if s == t {
            T::zero()
        } else {
            validated[[row_of[features[t].as_str()], s]]
        }
    });
    Ok(SectorImportanceMatrix { sectors: features.to_vec(), f })
}

impl<T: Scalar> SectorImportanceMatrix<T> {
    pub fn from_explainers(m: &ExplainerMatrix<T>) -> Result<Self> {
        sector_importance_matrix(&m.targets, &m.features, m.matrix().view())
    }
}

/// Undirected edge; `u → v` is the winning direction when it matters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdge<T> {
    pub u: usize,
    pub v: usize,
    pub weight: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph<T> {
    pub n: usize,
    pub edges: Vec<WeightedEdge<T>>,
}

/// weight(s, s') = max(F[s, s'], F[s', s]); zero pairs carry no edge. Ties
/// point from the lower to the higher index.
pub fn collapse_multiedges<T: Scalar>(f: &SectorImportanceMatrix<T>) -> WeightedGraph<T> {
    let n = f.sectors.len();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let (ab, ba) = (f.f[[a, b]], f.f[[b, a]]);
            let w = ab.max(ba);
            if w > T::zero() {
                let (u, v) = if ba > ab { (b, a) } else { (a, b) };
                edges.push(WeightedEdge { u, v, weight: w });
            }
        }
    }
    WeightedGraph { n, edges }
}

/// Accepted edges in acceptance order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarGraph<T> {
    pub n: usize,
    pub edges: Vec<WeightedEdge<T>>,
    pub n_rejected: usize,
}

impl<T> PlanarGraph<T> {
    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.u, e.v)).collect()
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Greedy filtration: edges by descending weight (ties by the sorted
/// endpoint pair), each kept iff the graph stays planar, until 3(N−2) edges.
/// An edge joining two components is always kept, which is also why the
/// result contains the maximum spanning forest.
pub fn pmfg<T: Scalar>(g: &WeightedGraph<T>) -> Result<PlanarGraph<T>> {
    let n = g.n;
    if n < 3 {
        return Err(Error::param(format!("filtering needs at least 3 nodes, got {n}")));
    }
    let mut seen = HashSet::new();
    for e in &g.edges {
        if e.u >= n || e.v >= n || e.u == e.v {
            return Err(Error::param(format!("edge ({}, {}) is not a simple edge on {n} nodes", e.u, e.v)));
        }
        if !seen.insert((e.u.min(e.v), e.u.max(e.v))) {
            return Err(Error::param(format!("repeated edge ({}, {})", e.u, e.v)));
        }
        if !e.weight.is_finite() {
            return Err(Error::param("edge weights must be finite"));
        }
    }
    let key = |e: &WeightedEdge<T>| (e.u.min(e.v), e.u.max(e.v));
    let mut order: Vec<&WeightedEdge<T>> = g.edges.iter().collect();
    order.sort_by(|a, b| b.weight.partial_cmp(&a.weight).expect("finite").then(key(a).cmp(&key(b))));
    let target = 3 * (n - 2);
    let mut parent: Vec<usize> = (0..n).collect();
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(target);
    let mut edges = Vec::with_capacity(target);
    let mut n_rejected = 0;
    for e in order {
        if edges.len() == target {
            break;
        }
        let (a, b) = (find(&mut parent, e.u), find(&mut parent, e.v));
        let keep = if a != b {
            parent[a.max(b)] = a.min(b);
            true
        } else {
            pairs.push((e.u, e.v));
            let ok = planarity::planar_unchecked(n, &pairs);
            pairs.pop();
            ok
        };
        if keep {
            pairs.push((e.u, e.v));
            edges.push(*e);
        } else {
            n_rejected += 1;
        }
    }
    log::debug!("filtered graph: {} edges kept, {} rejected", edges.len(), n_rejected);
    Ok(PlanarGraph { n, edges, n_rejected })
}

/// Directed edge of the filtered network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectedEdge<T> {
    pub source: usize,
    pub target: usize,
    pub weight: T,
    /// F[s, s'] = F[s', s]: the link holds both ways.
    pub bidirectional: bool,
}

/// Re-attaches to every kept edge the direction of its larger entry in F.
pub fn restore_directions<T: Scalar>(p: &PlanarGraph<T>, f: &SectorImportanceMatrix<T>) -> Result<Vec<DirectedEdge<T>>> {
    if f.sectors.len() != p.n {
        return Err(Error::shape(format!("{} sectors for a {}-node graph", f.sectors.len(), p.n)));
    }
    p.edges
        .iter()
        .map(|e| {
            let (a, b) = (e.u.min(e.v), e.u.max(e.v));
            let (ab, ba) = (f.f[[a, b]], f.f[[b, a]]);
            if ab.max(ba) != e.weight {
                return Err(Error::Data(format!("edge ({a}, {b}) does not come from this matrix")));
            }
            let (source, target) = if ba > ab { (b, a) } else { (a, b) };
            Ok(DirectedEdge { source, target, weight: e.weight, bidirectional: ab == ba })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    use crate::rng::task_rng;

    fn complete<T: Copy>(n: usize, mut w: impl FnMut(usize, usize) -> T) -> WeightedGraph<T> {
        let edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).map(|(u, v)| WeightedEdge { u, v, weight: w(u, v) }).collect();
        WeightedGraph { n, edges }
    }

    fn random_complete(n: usize, seed: u64) -> WeightedGraph<f64> {
        let mut rng = task_rng(seed, &[]);
        complete(n, |_, _| rng.random_range(0.0..1.0))
    }

    /// Prim on the dense weight matrix; weights assumed distinct.
    fn max_spanning_tree(g: &WeightedGraph<f64>) -> HashSet<(usize, usize)> {
        let n = g.n;
        let mut w = vec![vec![f64::NEG_INFINITY; n]; n];
        for e in &g.edges {
            w[e.u][e.v] = e.weight;
            w[e.v][e.u] = e.weight;
        }
        let mut inside = vec![false; n];
        let mut best = vec![(f64::NEG_INFINITY, usize::MAX); n];
        inside[0] = true;
        for v in 1..n {
            best[v] = (w[0][v], 0);
        }
        let mut tree = HashSet::new();
        for _ in 1..n {
            let v = (0..n).filter(|&v| !inside[v]).max_by(|&a, &b| best[a].0.total_cmp(&best[b].0)).unwrap();
            inside[v] = true;
            let u = best[v].1;
            tree.insert((u.min(v), u.max(v)));
            for x in 0..n {
                if !inside[x] && w[v][x] > best[x].0 {
                    best[x] = (w[v][x], v);
                }
            }
        }
        tree
    }

    fn pair_set(p: &PlanarGraph<f64>) -> HashSet<(usize, usize)> {
        p.edges.iter().map(|e| (e.u.min(e.v), e.u.max(e.v))).collect()
    }

    #[test]
    fn sector_matrix_examples() {
        let s: Vec<String> = ["01", "02"].iter().map(|x| x.to_string()).collect();
        let f = sector_importance_matrix(&s, &s, array![[0.9, 0.0], [0.0, 0.7]].view()).unwrap();
        assert!(f.f.iter().all(|&v| v == 0.0));
        // target 02 explained by feature 01 → F[01, 02]
        let f = sector_importance_matrix(&s, &s, array![[0.0, 0.0], [0.4, 0.0]].view()).unwrap();
        assert_eq!(f.f, array![[0.0, 0.4], [0.0, 0.0]]);
        // target order differs from feature order
        let t: Vec<String> = ["02", "01"].iter().map(|x| x.to_string()).collect();
        let f = sector_importance_matrix(&t, &s, array![[0.4, 0.0], [0.0, 0.0]].view()).unwrap();
        assert_eq!(f.f, array![[0.0, 0.4], [0.0, 0.0]]);
        assert!(sector_importance_matrix(&s, &s, array![[0.0, 0.1]].view()).is_err());
        assert!(sector_importance_matrix(&s, &s, array![[0.0, -0.1], [0.0, 0.0]].view()).is_err());
        let other: Vec<String> = ["01", "03"].iter().map(|x| x.to_string()).collect();
        assert!(sector_importance_matrix(&other, &s, array![[0.0, 0.0], [0.0, 0.0]].view()).is_err());
    }

    #[test]
    fn collapse_examples() {
        let names: Vec<String> = (0..3).map(|i| i.to_string()).collect();
        let f = SectorImportanceMatrix { sectors: names, f: array![[0.0, 0.3, 0.2], [0.1, 0.0, 0.0], [0.2, 0.5, 0.0]] };
        let g = collapse_multiedges(&f);
        assert_eq!(
            g.edges,
            vec![
                WeightedEdge { u: 0, v: 1, weight: 0.3 },
                WeightedEdge { u: 0, v: 2, weight: 0.2 },
                WeightedEdge { u: 2, v: 1, weight: 0.5 },
            ]
        );
    }

    #[test]
    fn small_complete_graphs() {
        let k4 = pmfg(&random_complete(4, 1)).unwrap();
        assert_eq!((k4.edges.len(), k4.n_rejected), (6, 0));
        // K5: the one rejected edge is the lightest, since every other edge
        // fits before it and the tenth edge always closes a K5
        let g = complete(5, |u, v| (10 * u + v) as f64);
        let p = pmfg(&g).unwrap();
        assert_eq!((p.edges.len(), p.n_rejected), (9, 0));
        assert!(!pair_set(&p).contains(&(0, 1)));
        let g = random_complete(5, 9);
        let lightest = g.edges.iter().min_by(|a, b| a.weight.total_cmp(&b.weight)).unwrap();
        assert!(!pair_set(&pmfg(&g).unwrap()).contains(&(lightest.u, lightest.v)));
        assert!(pmfg(&complete(2, |_, _| 1.0)).is_err());
    }

    #[test]
    fn closing_edge_of_k33_is_rejected() {
        let mut edges: Vec<WeightedEdge<f64>> =
            (0..3).flat_map(|u| (3..6).map(move |v| WeightedEdge { u, v, weight: 10.0 + (u * 6 + v) as f64 })).collect();
        edges.push(WeightedEdge { u: 0, v: 1, weight: 1.0 });
        let p = pmfg(&WeightedGraph { n: 6, edges }).unwrap();
        // (0, 3) is the lightest bipartite edge and would complete K3,3
        assert!(!pair_set(&p).contains(&(0, 3)));
        assert!(pair_set(&p).len() >= 8 && p.n_rejected >= 1);
        assert_eq!(p.edges.len() + p.n_rejected, 10);
        assert!(is_planar(6, &p.edge_pairs()).unwrap());
    }

    #[test]
    fn sparse_input_exhausts_edges() {
        let g = WeightedGraph { n: 5, edges: vec![WeightedEdge { u: 0, v: 1, weight: 1.0 }, WeightedEdge { u: 3, v: 4, weight: 2.0 }] };
        let p = pmfg(&g).unwrap();
        assert_eq!(p.edges.len(), 2);
        assert_eq!(p.edges[0].u, 3);
    }

    #[test]
    fn bad_edges_are_rejected() {
        let e = |u, v| WeightedEdge { u, v, weight: 1.0 };
        assert!(pmfg(&WeightedGraph { n: 3, edges: vec![e(0, 0)] }).is_err());
        assert!(pmfg(&WeightedGraph { n: 3, edges: vec![e(0, 3)] }).is_err());
        assert!(pmfg(&WeightedGraph { n: 3, edges: vec![e(0, 1), e(1, 0)] }).is_err());
        assert!(pmfg(&WeightedGraph { n: 3, edges: vec![WeightedEdge { u: 0, v: 1, weight: f64::NAN }] }).is_err());
    }

    #[test]
    fn directions_restored() {
        let names: Vec<String> = (0..3).map(|i| i.to_string()).collect();
        let f = SectorImportanceMatrix { sectors: names, f: array![[0.0, 0.1, 0.4], [0.3, 0.0, 0.2], [0.4, 0.0, 0.0]] };
        let p = pmfg(&collapse_multiedges(&f)).unwrap();
        let d = restore_directions(&p, &f).unwrap();
        assert_eq!(
            d,
            vec![
                DirectedEdge { source: 0, target: 2, weight: 0.4, bidirectional: true },
                DirectedEdge { source: 1, target: 0, weight: 0.3, bidirectional: false },
                DirectedEdge { source: 1, target: 2, weight: 0.2, bidirectional: false },
            ]
        );
        let mut wrong = f.clone();
        wrong.f[[1, 0]] = 0.35;
        assert!(restore_directions(&p, &wrong).is_err());
    }

    #[test]
    fn ties_follow_pair_order() {
        let p = pmfg(&complete(6, |_, _| 1.0)).unwrap();
        let first: Vec<(usize, usize)> = p.edges.iter().take(5).map(|e| (e.u, e.v)).collect();
        assert_eq!(first, vec![(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)]);
        assert_eq!(p.edges.len(), 12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn filtered_graph_properties(n in 5usize..31, seed in any::<u64>()) {
            let g = random_complete(n, seed);
            let p = pmfg(&g).unwrap();
            prop_assert_eq!(p.edges.len(), 3 * (n - 2));
            prop_assert!(is_planar(n, &p.edge_pairs()).unwrap());
            let kept = pair_set(&p);
            prop_assert!(max_spanning_tree(&g).is_subset(&kept));
            prop_assert!(p.edges.windows(2).all(|w| w[0].weight >= w[1].weight));
            // order-only dependence
            let warped = WeightedGraph { n, edges: g.edges.iter().map(|e| WeightedEdge { weight: (3.0 * e.weight).exp() - 7.0, ..*e }).collect() };
            prop_assert_eq!(pair_set(&pmfg(&warped).unwrap()), kept);
        }

        #[test]
        fn collapse_is_pairwise_max(seed in any::<u64>(), n in 2usize..9) {
            let mut rng = task_rng(seed, &[]);
            let mut f: Array2<f64> = Array2::from_shape_fn((n, n), |_| if rng.random_range(0.0..1.0) < 0.3 { 0.0 } else { rng.random_range(0.0..1.0) });
            f.diag_mut().fill(0.0);
            let m = SectorImportanceMatrix { sectors: (0..n).map(|i| i.to_string()).collect(), f: f.clone() };
            let g = collapse_multiedges(&m);
            let mut expected = 0;
            for a in 0..n {
                for b in a + 1..n {
                    let w = f[[a, b]].max(f[[b, a]]);
                    if w > 0.0 {
                        expected += 1;
                        let e = g.edges.iter().find(|e| e.u.min(e.v) == a && e.u.max(e.v) == b).unwrap();
                        prop_assert_eq!(e.weight, w);
                        prop_assert_eq!(f[[e.u, e.v]], w);
                    }
                }
            }
            prop_assert_eq!(g.edges.len(), expected);
        }
    }
}
