//! Random-forest binary classifier over binary features, with class
//! probabilities and Gini importance.

mod tree;

pub use tree::{DecisionTree, Node, TrainingMatrix};

use std::path::Path;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::task_rng;
use crate::scalar::Scalar;

/// Features examined at each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// ⌈√V⌉
    Sqrt,
    All,
    Count(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            min_samples_split: 2,
            max_depth: None,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::param("n_trees must be at least 1"));
        }
        if self.min_samples_split < 2 {
            return Err(Error::param("min_samples_split must be at least 2"));
        }
        if self.max_features == MaxFeatures::Count(0) {
            return Err(Error::param("max_features must be at least 1"));
        }
        Ok(())
    }
}

/// Σ_i p̂_i (1 − p̂_i) over the two classes.
pub fn gini_impurity<T: Scalar>(class_counts: (u64, u64)) -> Result<T> {
    let (c0, c1) = class_counts;
    let n = c0 + c1;
    if n == 0 {
        return Err(Error::Degenerate("Gini impurity of an empty node".into()));
    }
    let n = T::from_count(n as usize);
    Ok([c0, c1]
        .iter()
        .map(|&c| {
            let p = T::from_count(c as usize) / n;
            p * (T::one() - p)
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest<T> {
    pub trees: Vec<DecisionTree<T>>,
    pub n_features: usize,
    pub params: ForestParams,
    pub seed: u64,
}

/// Tree `t` is grown from its own generator keyed by (seed, t), so trees
/// can be built in any order or in parallel with identical results.
pub fn train_forest<T: Scalar>(x: &TrainingMatrix, y: &[u8], params: &ForestParams, seed: u64) -> Result<Forest<T>> {
    params.validate()?;
    if y.len() != x.n_rows() {
        return Err(Error::shape(format!("{} labels for {} observations", y.len(), x.n_rows())));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::param("labels must be binary (0/1)"));
    }
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = task_rng(seed, &[t as u64]);
            tree::Grower::grow(x, y, params, &mut rng)
        })
        .collect();
    Ok(Forest { trees, n_features: x.n_features(), params: params.clone(), seed })
}

/// Convenience wrapper packing `x` first.
pub fn train_forest_dense<T: Scalar>(x: ArrayView2<'_, u8>, y: &[u8], params: &ForestParams, seed: u64) -> Result<Forest<T>> {
    train_forest(&TrainingMatrix::new(x)?, y, params, seed)
}

impl<T: Scalar> Forest<T> {
    /// Mean over trees of the class-1 frequency of the leaf each row reaches.
    pub fn predict_proba(&self, x: ArrayView2<'_, u8>) -> Result<Vec<T>> {
        if x.ncols() != self.n_features {
            return Err(Error::shape(format!("{} columns, forest expects {}", x.ncols(), self.n_features)));
        }
        let n_trees = T::from_count(self.trees.len());
        Ok(x.rows()
            .into_iter()
            .map(|row| {
                let row = row.to_vec();
                let mut s = T::zero();
                for t in &self.trees {
                    s += t.predict_row(&row);
                }
                s / n_trees
            })
            .collect())
    }

    /// GI_j = (1/T) Σ_t GI_j(t); each tree's decreases are normalized to
    /// sum to one, trees without splits contribute zeros.
    pub fn gini_importance(&self) -> Vec<T> {
        let mut acc = vec![T::zero(); self.n_features];
        for t in &self.trees {
            for (a, v) in acc.iter_mut().zip(t.importance(self.n_features)) {
                *a += v;
            }
        }
        let n = T::from_count(self.trees.len().max(1));
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        for t in &self.trees {
            t.validate(self.n_features)?;
        }
        Ok(())
    }
}

const FORMAT_NAME: &str = "fips-forest";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ForestFile<T> {
    format: String,
    version: u32,
    forest: Forest<T>,
}

pub fn save_forest<T: Scalar>(forest: &Forest<T>, path: &Path) -> Result<()> {
    let file = ForestFile { format: FORMAT_NAME.into(), version: FORMAT_VERSION, forest: forest.clone() };
    std::fs::write(path, serde_json::to_vec(&file)?)?;
    Ok(())
}

pub fn load_forest<T: Scalar>(path: &Path) -> Result<Forest<T>> {
    let file: ForestFile<T> = serde_json::from_slice(&std::fs::read(path)?)?;
    if file.format != FORMAT_NAME || file.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported forest file {} v{}", file.format, file.version)));
    }
    file.forest.validate()?;
    Ok(file.forest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn gini_examples() {
        assert_eq!(gini_impurity::<f64>((10, 0)).unwrap(), 0.0);
        assert_eq!(gini_impurity::<f64>((5, 5)).unwrap(), 0.5);
        assert!((gini_impurity::<f64>((3, 1)).unwrap() - 0.375).abs() < 1e-15);
        assert!(matches!(gini_impurity::<f64>((0, 0)), Err(Error::Degenerate(_))));
    }

    proptest! {
        #[test]
        fn gini_bounded_and_symmetric(a in 0u64..1000, b in 0u64..1000) {
            prop_assume!(a + b > 0);
            let g: f64 = gini_impurity((a, b)).unwrap();
            prop_assert!((0.0..=0.5).contains(&g));
            prop_assert_eq!(g, gini_impurity::<f64>((b, a)).unwrap());
        }
    }

    fn random_data(seed: u64, n: usize, v: usize) -> (Array2<u8>, Vec<u8>) {
        let mut rng = task_rng(seed, &[]);
        let x = Array2::from_shape_fn((n, v), |_| u8::from(rng.random_bool(0.5)));
        let y = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
        (x, y)
    }

    #[test]
    fn constant_labels_give_trivial_forest() {
        let (x, _) = random_data(1, 40, 5);
        let f: Forest<f64> = train_forest_dense(x.view(), &[0; 40], &ForestParams::default(), 3).unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
        assert!(f.predict_proba(x.view()).unwrap().iter().all(|&s| s == 0.0));
        assert!(f.gini_importance().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = random_data(2, 120, 9);
        let p = ForestParams { n_trees: 20, ..Default::default() };
        let a: Forest<f64> = train_forest_dense(x.view(), &y, &p, 11).unwrap();
        let b: Forest<f64> = train_forest_dense(x.view(), &y, &p, 11).unwrap();
        assert_eq!(a, b);
        let c: Forest<f64> = train_forest_dense(x.view(), &y, &p, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_feature_gets_all_importance() {
        let x = array![[0u8], [1], [0], [1], [1]];
        let y = [0u8, 1, 0, 1, 0];
        let f: Forest<f64> = train_forest_dense(x.view(), &y, &ForestParams::default(), 0).unwrap();
        assert!(f.trees.iter().any(|t| t.n_splits() > 0));
        let gi = f.gini_importance();
        // trees whose bootstrap drew one class only contribute zero
        let split_trees = f.trees.iter().filter(|t| t.n_splits() > 0).count() as f64;
        assert!((gi[0] - split_trees / 100.0).abs() < 1e-12);
    }

    #[test]
    fn determining_feature_dominates() {
        let mut rng = task_rng(5, &[]);
        let x = Array2::from_shape_fn((200, 4), |_| u8::from(rng.random_bool(0.5)));
        let y: Vec<u8> = x.column(3).to_vec();
        let f: Forest<f64> = train_forest_dense(x.view(), &y, &ForestParams { n_trees: 50, ..Default::default() }, 1).unwrap();
        assert!(f.gini_importance()[3] > 0.9);
        assert_eq!(f.predict_proba(x.view()).unwrap(), y.iter().map(|&v| v as f64).collect::<Vec<_>>());
    }

    #[test]
    fn prediction_averages_leaves() {
        let forest = Forest::<f64> {
            trees: vec![DecisionTree::leaf(0.0), DecisionTree::leaf(0.5), DecisionTree::leaf(1.0)],
            n_features: 2,
            params: ForestParams::default(),
            seed: 0,
        };
        assert_eq!(forest.predict_proba(array![[0u8, 1]].view()).unwrap(), vec![0.5]);
        let one = Forest { trees: vec![DecisionTree::leaf(0.7)], ..forest.clone() };
        assert_eq!(one.predict_proba(array![[1u8, 1]].view()).unwrap(), vec![0.7]);
        assert!(matches!(forest.predict_proba(array![[0u8]].view()), Err(Error::Shape(_))));
    }

    #[test]
    fn importance_of_hand_built_forest() {
        let t1 = DecisionTree {
            nodes: vec![
                Node::Split { feature: 0, decrease: 0.3, left: 1, right: 2 },
                Node::Leaf { frequency: 0.0 },
                Node::Split { feature: 2, decrease: 0.1, left: 3, right: 4 },
                Node::Leaf { frequency: 0.5 },
                Node::Leaf { frequency: 1.0 },
            ],
        };
        let t2 = DecisionTree {
            nodes: vec![
                Node::Split { feature: 1, decrease: 0.2, left: 1, right: 2 },
                Node::Leaf { frequency: 0.0 },
                Node::Split { feature: 1, decrease: 0.2, left: 3, right: 4 },
                Node::Leaf { frequency: 0.0 },
                Node::Leaf { frequency: 1.0 },
            ],
        };
        let f = Forest { trees: vec![t1.clone(), t2.clone()], n_features: 3, params: ForestParams::default(), seed: 0 };
        // walk every node by hand
        let mut want = [0.0f64; 3];
        for t in [&t1, &t2] {
            let total: f64 = t.nodes.iter().map(|n| match n { Node::Split { decrease, .. } => *decrease, _ => 0.0 }).sum();
            for n in &t.nodes {
                if let Node::Split { feature, decrease, .. } = n {
                    want[*feature] += decrease / total / 2.0;
                }
            }
        }
        let got = f.gini_importance();
        for j in 0..3 {
            assert!((got[j] - want[j]).abs() < 1e-15);
        }
        assert!((got[0] - 0.375).abs() < 1e-15);
        assert!((got[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn importance_sums_to_one_when_every_tree_splits() {
        for seed in 0..10 {
            let (x, y) = random_data(seed, 150, 8);
            let f: Forest<f64> = train_forest_dense(x.view(), &y, &ForestParams { n_trees: 30, ..Default::default() }, seed).unwrap();
            if f.trees.iter().all(|t| t.n_splits() > 0) {
                let s: f64 = f.gini_importance().iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn feature_permutation_permutes_importance() {
        // shallow trees on many rows keep exact GD ties between features away
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            max_features: MaxFeatures::All,
            max_depth: Some(3),
            ..Default::default()
        };
        let perm = [3usize, 0, 4, 1, 2];
        for seed in 0..5 {
            let (x, y) = random_data(seed, 500, 5);
            let xp = Array2::from_shape_fn(x.dim(), |(i, j)| x[[i, perm[j]]]);
            let a: Forest<f64> = train_forest_dense(x.view(), &y, &params, 0).unwrap();
            let b: Forest<f64> = train_forest_dense(xp.view(), &y, &params, 0).unwrap();
            let (ga, gb) = (a.gini_importance(), b.gini_importance());
            for j in 0..5 {
                assert_eq!(gb[j], ga[perm[j]]);
            }
        }
    }

    #[test]
    fn works_in_single_precision() {
        let (x, y) = random_data(3, 80, 6);
        let f: Forest<f32> = train_forest_dense(x.view(), &y, &ForestParams { n_trees: 10, ..Default::default() }, 0).unwrap();
        let s: f32 = f.gini_importance().iter().sum();
        assert!((s - 1.0).abs() < 1e-5);
        assert!(f.predict_proba(x.view()).unwrap().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn save_and_reload() {
        let (x, y) = random_data(4, 60, 4);
        let f: Forest<f64> = train_forest_dense(x.view(), &y, &ForestParams { n_trees: 5, ..Default::default() }, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("forest.json");
        save_forest(&f, &path).unwrap();
        assert_eq!(load_forest::<f64>(&path).unwrap(), f);
        std::fs::write(&path, r#"{"format":"other","version":1,"forest":{"trees":[],"n_features":1,"params":{},"seed":0}}"#).unwrap();
        assert!(load_forest::<f64>(&path).is_err());
    }
}
