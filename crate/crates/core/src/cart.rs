//! CART classification trees: Gini impurity, exhaustive midpoint threshold
//! search, greedy recursive partitioning, prediction and a JSON document form.
//!
//! Conventions: a split sends `x[feature] <= threshold` to the left child;
//! thresholds are midpoints between consecutive distinct training values;
//! ties between equally good splits go to the lowest feature index, then the
//! lowest threshold; a leaf predicts its majority class, lowest id on ties.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Legend;
use crate::samples::LabeledVectors;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub max_depth: usize,
    pub min_leaf_samples: usize,
    pub min_impurity_decrease: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            max_depth: 12,
            min_leaf_samples: 1,
            min_impurity_decrease: 0.0,
        }
    }
}

impl TrainParams {
    /// Grow until leaves are pure or unsplittable.
    pub fn unlimited() -> Self {
        TrainParams {
            max_depth: usize::MAX,
            ..TrainParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::Config("max_depth must be >= 1".into()));
        }
        if self.min_leaf_samples < 1 {
            return Err(Error::Config("min_leaf_samples must be >= 1".into()));
        }
        if !(self.min_impurity_decrease.is_finite() && self.min_impurity_decrease >= 0.0) {
            return Err(Error::Config("min_impurity_decrease must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        class: u8,
        /// Training rows per class id at this leaf.
        counts: Vec<u64>,
    },
}

impl TreeNode {
    fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }
}

/// A trained tree together with the band order it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub bands: Vec<String>,
    pub legend: Legend,
    pub root: TreeNode,
}

/// Winning split of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Size-weighted mean Gini impurity of the two children.
    pub weighted_child_impurity: f64,
}

/// Gini impurity `1 - sum (n_c / N)^2`.
pub fn gini(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyCounts);
    }
    let n = total as f64;
    Ok(1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

/// Feature-major copy of the training data with labels as count indices.
struct Columns {
    cols: Vec<Vec<f32>>,
    y: Vec<usize>,
    n_classes: usize,
}

impl Columns {
    fn new(data: &LabeledVectors) -> Self {
        let n_features = data.n_features();
        let mut cols = vec![Vec::with_capacity(data.len()); n_features];
        for row in &data.rows {
            for (f, &v) in row.x.iter().enumerate() {
                cols[f].push(v);
            }
        }
        let n_classes = data.legend.class_span().max(
            data.rows
                .iter()
                .map(|r| r.y as usize + 1)
                .max()
                .unwrap_or(0),
        );
        Columns {
            cols,
            y: data.rows.iter().map(|r| r.y as usize).collect(),
            n_classes,
        }
    }

    fn counts(&self, rows: &[usize]) -> Vec<u64> {
        let mut c = vec![0u64; self.n_classes];
        for &r in rows {
            c[self.y[r]] += 1;
        }
        c
    }
}

/// Candidate partition scored by `S_L / n_L + S_R / n_R` with `S = sum c^2`;
/// larger is purer. Kept as integers so comparisons are exact.
#[derive(Clone, Copy)]
struct Score {
    sq_left: u64,
    n_left: u64,
    sq_right: u64,
    n_right: u64,
}

impl Score {
    /// Exact `self > other` by cross-multiplication.
    fn beats(&self, other: &Score) -> bool {
        let num = |s: &Score| {
            u128::from(s.sq_left) * u128::from(s.n_right)
                + u128::from(s.sq_right) * u128::from(s.n_left)
        };
        let den = |s: &Score| u128::from(s.n_left) * u128::from(s.n_right);
        num(self) * den(other) > num(other) * den(self)
    }

    fn weighted_impurity(&self) -> f64 {
        let n = (self.n_left + self.n_right) as f64;
        let purity =
            self.sq_left as f64 / self.n_left as f64 + self.sq_right as f64 / self.n_right as f64;
        (n - purity) / n
    }
}

fn find_split(data: &Columns, rows: &[usize], min_leaf: usize) -> Option<Split> {
    let n = rows.len();
    if n < 2 * min_leaf.max(1) {
        return None;
    }
    debug_assert!(
        n < 1 << 24,
        "exact split scoring assumes fewer than 2^24 rows"
    );
    let total = data.counts(rows);
    let total_sq: u64 = total.iter().map(|c| c * c).sum();
    let mut best: Option<(Score, Split)> = None;
    let mut order = rows.to_vec();
    for (f, col) in data.cols.iter().enumerate() {
        order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
        let mut left = vec![0u64; data.n_classes];
        let mut right = total.clone();
        let mut sq_left = 0u64;
        let mut sq_right = total_sq;
        for i in 0..n - 1 {
            let c = data.y[order[i]];
            sq_left += 2 * left[c] + 1;
            left[c] += 1;
            sq_right -= 2 * right[c] - 1;
            right[c] -= 1;
            let (lo, hi) = (col[order[i]], col[order[i + 1]]);
            let n_left = i + 1;
            if lo >= hi || n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let score = Score {
                sq_left,
                n_left: n_left as u64,
                sq_right,
                n_right: (n - n_left) as u64,
            };
            if best.as_ref().is_none_or(|(b, _)| score.beats(b)) {
                let threshold = (f64::from(lo) + f64::from(hi)) / 2.0;
                best = Some((
                    score,
                    Split {
                        feature: f,
                        threshold,
                        weighted_child_impurity: score.weighted_impurity(),
                    },
                ));
            }
        }
    }
    best.map(|(_, s)| s)
}

/// Exhaustive search for the split minimising weighted child Gini impurity.
/// `None` when no threshold separates the rows.
pub fn best_split(data: &LabeledVectors) -> Option<Split> {
    let cols = Columns::new(data);
    let rows: Vec<usize> = (0..data.len()).collect();
    find_split(&cols, &rows, 1)
}

fn majority(counts: &[u64]) -> u8 {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best as u8
}

fn grow(data: &Columns, rows: &mut [usize], depth: usize, p: &TrainParams) -> TreeNode {
    let counts = data.counts(rows);
    let leaf = |counts: Vec<u64>| TreeNode::Leaf {
        class: majority(&counts),
        counts,
    };
    let impurity = gini(&counts).expect("nodes are never empty");
    if impurity == 0.0 || depth >= p.max_depth {
        return leaf(counts);
    }
    let Some(split) = find_split(data, rows, p.min_leaf_samples) else {
        return leaf(counts);
    };
    // Gini is concave, so the decrease is never negative; only a positive
    // minimum can reject a split.
    if p.min_impurity_decrease > 0.0
        && impurity - split.weighted_child_impurity < p.min_impurity_decrease
    {
        return leaf(counts);
    }
    let col = &data.cols[split.feature];
    rows.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
    let cut = rows.partition_point(|&r| f64::from(col[r]) <= split.threshold);
    let (l, r) = rows.split_at_mut(cut);
    TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(grow(data, l, depth + 1, p)),
        right: Box::new(grow(data, r, depth + 1, p)),
    }
}

pub fn train(data: &LabeledVectors, params: &TrainParams) -> Result<DecisionTree> {
    params.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let cols = Columns::new(data);
    let mut rows: Vec<usize> = (0..data.len()).collect();
    Ok(DecisionTree {
        bands: data.band_names.clone(),
        legend: data.legend.clone(),
        root: grow(&cols, &mut rows, 0, params),
    })
}

impl DecisionTree {
    pub fn predict(&self, x: &[f32]) -> Result<u8> {
        if x.len() != self.bands.len() {
            return Err(Error::DimensionMismatch(format!(
                "feature vector has {} values, tree expects {}",
                x.len(),
                self.bands.len()
            )));
        }
        Ok(self.predict_unchecked(x))
    }

    /// Descent without the length check; `x` must have one value per band.
    pub(crate) fn predict_unchecked(&self, x: &[f32]) -> u8 {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { class, .. } => return *class,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if f64::from(x[*feature]) <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn predict_batch<V: AsRef<[f32]>>(&self, xs: &[V]) -> Result<Vec<u8>> {
        xs.iter().map(|x| self.predict(x.as_ref())).collect()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn n_leaves(&self) -> usize {
        self.root.leaves()
    }

    fn validate(&self) -> Result<()> {
        fn walk(node: &TreeNode, tree: &DecisionTree) -> Result<()> {
            match node {
                TreeNode::Leaf { class, counts } => {
                    if counts.is_empty() {
                        return Err(Error::Parse("leaf with empty counts".into()));
                    }
                    if !tree.legend.contains(*class) {
                        return Err(Error::Parse(format!("leaf class {class} not in legend")));
                    }
                    Ok(())
                }
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= tree.bands.len() {
                        return Err(Error::Parse(format!(
                            "split on feature {feature} out of range"
                        )));
                    }
                    if !threshold.is_finite() {
                        return Err(Error::Parse("non-finite threshold".into()));
                    }
                    walk(left, tree)?;
                    walk(right, tree)
                }
            }
        }
        if self.bands.is_empty() {
            return Err(Error::Parse("tree has no bands".into()));
        }
        walk(&self.root, self)
    }
}

/// Pretty JSON; thresholds are written in shortest round-trip form.
pub fn serialize_tree(tree: &DecisionTree) -> String {
    let mut text = serde_json::to_string_pretty(tree).expect("tree serializes");
    text.push('\n');
    text
}

pub fn parse_tree(text: &str) -> Result<DecisionTree> {
    let mut de = serde_json::Deserializer::from_str(text);
    de.disable_recursion_limit();
    let tree = DecisionTree::deserialize(&mut de)
        .map_err(|e| Error::Parse(format!("tree document: {e}")))?;
    de.end()
        .map_err(|e| Error::Parse(format!("tree document: {e}")))?;
    tree.validate()?;
    Ok(tree)
}
