//! Self-contained gradient-boosted decision trees: histogram splits on
//! quantile bins, softmax cross-entropy objective, depth-limited greedy
//! growth. Deterministic for a fixed (data, params, seed).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LAMBDA: f64 = 1.0;
const MAX_BINS: usize = 64;
const HESS_FLOOR: f64 = 1e-16;

/// Tuning knobs, mirroring the usual boosted-tree parameter names.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub learning_rate: f64,
    /// Minimum loss reduction required to keep a split.
    pub min_split_loss: f64,
    pub row_subsample: f64,
    pub col_subsample: f64,
    pub max_depth: usize,
    pub n_trees: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            learning_rate: 0.1,
            min_split_loss: 0.0,
            row_subsample: 1.0,
            col_subsample: 1.0,
            max_depth: 3,
            n_trees: 200,
        }
    }
}

/// One node of a flattened tree. `feature == u32::MAX` marks a leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Node {
    feature: u32,
    /// Rows with value <= threshold go left.
    threshold: f64,
    left: u32,
    right: u32,
    value: f64,
}

impl Node {
    fn leaf(value: f64) -> Node {
        Node {
            feature: u32::MAX,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
        }
    }

    fn is_leaf(&self) -> bool {
        self.feature == u32::MAX
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return n.value;
            }
            i = if row[n.feature as usize] <= n.threshold {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }
}

/// A fitted forest: `n_trees` boosting rounds of one tree per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbdt {
    n_classes: usize,
    n_features: usize,
    /// Row-major rounds: trees[round * n_classes + class].
    trees: Vec<Tree>,
}

impl Gbdt {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_rounds(&self) -> usize {
        if self.n_classes == 0 {
            0
        } else {
            self.trees.len() / self.n_classes
        }
    }

    /// Class probabilities for one row.
    pub fn predict_proba(&self, row: &[f64]) -> Vec<f64> {
        let mut logits = vec![0.0; self.n_classes];
        for (i, tree) in self.trees.iter().enumerate() {
            logits[i % self.n_classes] += tree.predict(row);
        }
        softmax(&logits)
    }

    /// Most probable class; exact ties go to the lowest class index.
    pub fn predict_class(&self, row: &[f64]) -> usize {
        let p = self.predict_proba(row);
        let mut best = 0;
        for (k, v) in p.iter().enumerate().skip(1) {
            if *v > p[best] {
                best = k;
            }
        }
        best
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|e| e / s).collect()
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed ^ a) ^ b))
}

/// Quantile cut points of one feature column; splits test `x <= cut`.
fn cut_points(values: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
    sorted.dedup();
    if sorted.len() < 2 {
        return Vec::new();
    }
    let gaps = sorted.len() - 1;
    if gaps <= MAX_BINS - 1 {
        return sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    // evenly spaced quantiles of the distinct values
    (1..MAX_BINS)
        .map(|q| {
            let i = q * gaps / MAX_BINS;
            0.5 * (sorted[i] + sorted[i + 1])
        })
        .collect()
}

struct SplitPlan {
    feature: usize,
    cut_index: usize,
    gain: f64,
}

struct TreeBuilder<'a> {
    binned: &'a [Vec<u8>],
    cuts: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a GbdtParams,
    features: &'a [usize],
}

impl TreeBuilder<'_> {
    /// Best split of `rows`, scanning features then cuts in fixed order
    /// with strict improvement, so ties resolve deterministically.
    fn best_split(&self, rows: &[usize]) -> Option<SplitPlan> {
        let mut best: Option<SplitPlan> = None;
        let (g_tot, h_tot) = rows.iter().fold((0.0, 0.0), |(g, h), &r| {
            (g + self.grad[r], h + self.hess[r])
        });
        let parent_score = g_tot * g_tot / (h_tot + LAMBDA);
        for &f in self.features {
            let cuts = &self.cuts[f];
            if cuts.is_empty() {
                continue;
            }
            let n_bins = cuts.len() + 1;
            let mut g_bin = vec![0.0f64; n_bins];
            let mut h_bin = vec![0.0f64; n_bins];
            let mut c_bin = vec![0usize; n_bins];
            let col = &self.binned[f];
            for &r in rows {
                let b = col[r] as usize;
                g_bin[b] += self.grad[r];
                h_bin[b] += self.hess[r];
                c_bin[b] += 1;
            }
            let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
            for t in 0..cuts.len() {
                gl += g_bin[t];
                hl += h_bin[t];
                cl += c_bin[t];
                if cl == 0 || cl == rows.len() {
                    continue;
                }
                let gr = g_tot - gl;
                let hr = h_tot - hl;
                let gain = 0.5
                    * (gl * gl / (hl + LAMBDA) + gr * gr / (hr + LAMBDA) - parent_score)
                    - self.params.min_split_loss;
                if gain > 0.0 && best.as_ref().map_or(true, |b| gain > b.gain) {
                    best = Some(SplitPlan {
                        feature: f,
                        cut_index: t,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let (g, h) = rows.iter().fold((0.0, 0.0), |(g, h), &r| {
            (g + self.grad[r], h + self.hess[r])
        });
        -self.params.learning_rate * g / (h + LAMBDA)
    }

    fn grow(&self, rows: Vec<usize>) -> Tree {
        let mut nodes = Vec::new();
        self.grow_node(rows, 0, &mut nodes);
        Tree { nodes }
    }

    fn grow_node(&self, rows: Vec<usize>, depth: usize, nodes: &mut Vec<Node>) -> u32 {
        let id = nodes.len() as u32;
        if depth >= self.params.max_depth || rows.len() < 2 {
            nodes.push(Node::leaf(self.leaf_value(&rows)));
            return id;
        }
        let Some(plan) = self.best_split(&rows) else {
            nodes.push(Node::leaf(self.leaf_value(&rows)));
            return id;
        };
        nodes.push(Node {
            feature: plan.feature as u32,
            threshold: self.cuts[plan.feature][plan.cut_index],
            left: 0,
            right: 0,
            value: 0.0,
        });
        let col = &self.binned[plan.feature];
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&r| (col[r] as usize) <= plan.cut_index);
        let left = self.grow_node(left_rows, depth + 1, nodes);
        let right = self.grow_node(right_rows, depth + 1, nodes);
        nodes[id as usize].left = left;
        nodes[id as usize].right = right;
        id
    }
}

/// Fits a softmax-objective forest on row-major features `x` and class
/// ids `y` in `0..n_classes`. An empty training set yields an empty
/// forest (uniform probabilities), which callers may rely on for
/// degenerate anchored folds.
pub fn fit(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    params: &GbdtParams,
    seed: u64,
) -> Result<Gbdt> {
    if x.len() != y.len() {
        return Err(Error::domain(format!(
            "{} feature rows but {} labels",
            x.len(),
            y.len()
        )));
    }
    if n_classes == 0 {
        return Err(Error::domain("n_classes must be at least 1"));
    }
    if let Some(bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::domain(format!(
            "class id {bad} outside 0..{n_classes}"
        )));
    }
    let n = x.len();
    let m = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != m) {
        return Err(Error::domain("ragged feature matrix"));
    }
    // nothing to learn with one class or no rows: uniform forest
    if n == 0 || n_classes == 1 {
        return Ok(Gbdt {
            n_classes,
            n_features: m,
            trees: Vec::new(),
        });
    }

    // column-major quantile binning, done once
    let mut cuts = Vec::with_capacity(m);
    let mut binned = Vec::with_capacity(m);
    let mut column = vec![0.0f64; n];
    for f in 0..m {
        for (r, row) in x.iter().enumerate() {
            column[r] = row[f];
        }
        let c = cut_points(&column);
        let b: Vec<u8> = column
            .iter()
            .map(|&v| c.partition_point(|&cp| cp < v) as u8)
            .collect();
        cuts.push(c);
        binned.push(b);
    }

    let mut logits = vec![0.0f64; n * n_classes];
    let mut probs = vec![0.0f64; n * n_classes];
    let mut grad = vec![0.0f64; n];
    let mut hess = vec![0.0f64; n];
    let mut trees = Vec::with_capacity(params.n_trees * n_classes);
    let all_rows: Vec<usize> = (0..n).collect();
    let all_cols: Vec<usize> = (0..m).collect();

    for round in 0..params.n_trees {
        for r in 0..n {
            let p = softmax(&logits[r * n_classes..(r + 1) * n_classes]);
            probs[r * n_classes..(r + 1) * n_classes].copy_from_slice(&p);
        }
        let rows: Vec<usize> = if params.row_subsample < 1.0 {
            let take = ((n as f64 * params.row_subsample).floor() as usize).max(1);
            let mut rng = stream_rng(seed, round as u64, u64::MAX);
            let mut idx = all_rows.clone();
            idx.partial_shuffle(&mut rng, take);
            let mut picked = idx[..take].to_vec();
            picked.sort_unstable();
            picked
        } else {
            all_rows.clone()
        };
        for class in 0..n_classes {
            for &r in &rows {
                let p = probs[r * n_classes + class];
                grad[r] = p - if y[r] == class { 1.0 } else { 0.0 };
                hess[r] = (p * (1.0 - p)).max(HESS_FLOOR);
            }
            let features: Vec<usize> = if params.col_subsample < 1.0 {
                let take = ((m as f64 * params.col_subsample).floor() as usize).max(1);
                let mut rng = stream_rng(seed, round as u64, class as u64);
                let mut idx = all_cols.clone();
                idx.partial_shuffle(&mut rng, take);
                let mut picked = idx[..take].to_vec();
                picked.sort_unstable();
                picked
            } else {
                all_cols.clone()
            };
            let builder = TreeBuilder {
                binned: &binned,
                cuts: &cuts,
                grad: &grad,
                hess: &hess,
                params,
                features: &features,
            };
            let tree = builder.grow(rows.clone());
            for (r, row) in x.iter().enumerate() {
                logits[r * n_classes + class] += tree.predict(row);
            }
            trees.push(tree);
        }
    }
    Ok(Gbdt {
        n_classes,
        n_features: m,
        trees,
    })
}
