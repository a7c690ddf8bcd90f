//! Random-forest regression: bagged CART trees with impurity importances.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::CompensatedSum;

const IMPORTANCE_EPS: f64 = 1e-12;
const MAGIC: &[u8; 4] = b"SLRF";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` means `ceil(D / 3)`.
    pub mtry: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 500,
            max_depth: None,
            min_samples_leaf: 1,
            mtry: None,
            bootstrap: true,
            seed: 1,
        }
    }
}

impl ForestParams {
    pub fn mtry_for(&self, d: usize) -> usize {
        self.mtry.unwrap_or(d.div_ceil(3)).clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    Leaf(f64),
    /// Rows with `x[feature] <= threshold` go left (the next node in
    /// pre-order); the right child sits at index `right`.
    Split { feature: u32, threshold: f64, right: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, right } => {
                    i = if row[feature as usize] <= threshold { i + 1 } else { right as usize };
                }
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> (usize, usize) {
            // returns (depth below i, index after the subtree)
            match nodes[i] {
                Node::Leaf(_) => (0, i + 1),
                Node::Split { right, .. } => {
                    let (l, _) = walk(nodes, i + 1);
                    let (r, end) = walk(nodes, right as usize);
                    (1 + l.max(r), end)
                }
            }
        }
        walk(&self.nodes, 0).0
    }

    /// Split thresholds with their features, in pre-order.
    pub fn splits(&self) -> Vec<(usize, f64)> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Split { feature, threshold, .. } => Some((feature as usize, threshold)),
                Node::Leaf(_) => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    /// n_trees x D impurity decreases, each row normalized to sum to 1
    /// unless the tree never split.
    pub per_tree_importance: Array2<f64>,
    pub params: ForestParams,
    pub feature_count: usize,
}

/// Grows one tree. Every node owns the same range `lo..hi` of each list in
/// `lists`; list `f < D` holds the node's bootstrap slots ordered by
/// `(x_f, y)` and list `D` orders them by `y`. Splits partition all lists
/// stably, so nodes never re-sort and sums run in an order that does not
/// depend on the order of the training rows.
struct Grower<'a> {
    cols: &'a [Vec<f64>],
    y: &'a [f64],
    params: &'a ForestParams,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    importance: Vec<f64>,
    /// Bootstrap slot to training row.
    rows: Vec<u32>,
    lists: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    buf: Vec<u32>,
    /// `recip[i] = 1 / i`
    recip: &'a [f64],
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    n_left: usize,
}

impl Candidate {
    fn beats(&self, other: &Option<Candidate>) -> bool {
        match other {
            None => true,
            Some(b) => {
                self.gain > b.gain
                    || (self.gain == b.gain
                        && (self.feature < b.feature || (self.feature == b.feature && self.threshold < b.threshold)))
            }
        }
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m > a && m < b {
        m
    } else {
        a
    }
}

impl Grower<'_> {
    fn node_mean(&self, lo: usize, hi: usize) -> (f64, bool) {
        let by_y = &self.lists[self.cols.len()][lo..hi];
        let y_of = |slot: u32| self.y[self.rows[slot as usize] as usize];
        let (first, last) = (y_of(by_y[0]), y_of(by_y[by_y.len() - 1]));
        if first == last {
            return (first, true);
        }
        let sum: CompensatedSum = by_y.iter().map(|&s| y_of(s)).collect();
        (sum.value() / by_y.len() as f64, false)
    }

    /// Best split on one feature, ignoring candidates that leave fewer than
    /// `min_samples_leaf` rows on a side.
    fn best_on(&self, lo: usize, hi: usize, feature: usize, mean: f64) -> Option<Candidate> {
        let col = &self.cols[feature];
        let slots = &self.lists[feature][lo..hi];
        let row = |slot: u32| self.rows[slot as usize] as usize;
        let n = slots.len();
        if col[row(slots[0])] == col[row(slots[n - 1])] {
            return None;
        }
        let total: f64 = slots.iter().map(|&s| self.y[row(s)] - mean).sum();
        let base = total * total * self.recip[n];
        let leaf = self.params.min_samples_leaf;
        let mut left = 0.0;
        let mut best: Option<Candidate> = None;
        for i in 1..n {
            let (a, b) = (row(slots[i - 1]), row(slots[i]));
            left += self.y[a] - mean;
            if i < leaf || n - i < leaf || col[a] == col[b] {
                continue;
            }
            let right = total - left;
            let score = left * left * self.recip[i] + right * right * self.recip[n - i];
            if best.is_none_or(|c| score > c.gain) {
                best = Some(Candidate {
                    gain: score,
                    feature,
                    threshold: midpoint(col[a], col[b]),
                    n_left: i,
                });
            }
        }
        best.map(|c| Candidate { gain: c.gain - base, ..c })
    }

    fn partition(&mut self, lo: usize, hi: usize) {
        self.buf.resize(hi - lo, 0);
        for list in self.lists.iter_mut() {
            let (mut w, mut k) = (lo, 0usize);
            for r in lo..hi {
                let s = list[r];
                let left = self.goes_left[s as usize] as usize;
                list[w] = s;
                self.buf[k] = s;
                w += left;
                k += 1 - left;
            }
            list[w..hi].copy_from_slice(&self.buf[..k]);
        }
    }

    fn grow(&mut self, lo: usize, hi: usize, depth: usize) {
        let at = self.nodes.len();
        let (mean, pure) = self.node_mean(lo, hi);
        self.nodes.push(Node::Leaf(mean));
        let n = hi - lo;
        if pure || n < 2 * self.params.min_samples_leaf || self.params.max_depth.is_some_and(|d| depth >= d) {
            return;
        }
        let d = self.cols.len();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(&mut self.rng);
        let (tried, rest) = order.split_at_mut(self.mtry);
        tried.sort_unstable();
        let mut best: Option<Candidate> = None;
        for &f in tried.iter() {
            if let Some(c) = self.best_on(lo, hi, f, mean) {
                if c.beats(&best) {
                    best = Some(c);
                }
            }
        }
        if best.is_none_or(|b| b.gain <= 0.0) {
            for &f in rest.iter() {
                if let Some(c) = self.best_on(lo, hi, f, mean) {
                    if c.beats(&best) {
                        best = Some(c);
                    }
                }
            }
        }
        let Some(best) = best else { return };
        self.importance[best.feature] += best.gain.max(0.0);
        let mid = lo + best.n_left;
        for (r, &s) in self.lists[best.feature][lo..hi].iter().enumerate() {
            self.goes_left[s as usize] = lo + r < mid;
        }
        self.partition(lo, hi);
        self.grow(lo, mid, depth + 1);
        let right = self.nodes.len() as u32;
        self.grow(mid, hi, depth + 1);
        self.nodes[at] = Node::Split {
            feature: best.feature as u32,
            threshold: best.threshold,
            right,
        };
    }
}

/// Row indices ordered by `(primary, secondary)`.
fn row_order(primary: &[f64], secondary: &[f64]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..primary.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (a, b) = (a as usize, b as usize);
        primary[a].total_cmp(&primary[b]).then(secondary[a].total_cmp(&secondary[b]))
    });
    order
}

fn check_matrix(x: ArrayView2<f64>) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam("feature matrix contains non-finite values".into()));
    }
    Ok(())
}

/// Fit a forest on the rows of `x` against `y`. Trees are grown in parallel,
/// each from its own generator derived from the seed and the tree index.
pub fn fit(x: ArrayView2<f64>, y: &[f64], params: &ForestParams) -> Result<ForestModel> {
    let (n, d) = x.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    if n > u32::MAX as usize {
        return Err(Error::InvalidParam("too many rows".into()));
    }
    if d == 0 {
        return Err(Error::Empty("feature matrix"));
    }
    if params.n_trees == 0 {
        return Err(Error::InvalidParam("n_trees must be >= 1".into()));
    }
    if params.min_samples_leaf == 0 || params.min_samples_leaf > n {
        return Err(Error::InvalidParam(format!(
            "min_samples_leaf must be in 1..={n}, got {}",
            params.min_samples_leaf
        )));
    }
    if let Some(m) = params.mtry {
        if m == 0 || m > d {
            return Err(Error::InvalidParam(format!("mtry must be in 1..={d}, got {m}")));
        }
    }
    check_matrix(x)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam("target contains non-finite values".into()));
    }
    let cols: Vec<Vec<f64>> = (0..d).map(|j| x.column(j).to_vec()).collect();
    let mut orders: Vec<Vec<u32>> = cols.iter().map(|c| row_order(c, y)).collect();
    orders.push(row_order(y, y));
    let mtry = params.mtry_for(d);
    let recip: Vec<f64> = (0..=n).map(|i| if i == 0 { 0.0 } else { 1.0 / i as f64 }).collect();

    let fitted: Vec<(Tree, Vec<f64>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(t as u64);
            let mut count = vec![0u32; n];
            if params.bootstrap {
                for _ in 0..n {
                    count[rng.random_range(0..n)] += 1;
                }
            } else {
                count.fill(1);
            }
            // slots are laid out row by row, so a row's copies are contiguous
            let mut first_slot = vec![0u32; n];
            let mut rows = Vec::with_capacity(n);
            for (i, &c) in count.iter().enumerate() {
                first_slot[i] = rows.len() as u32;
                rows.extend(std::iter::repeat_n(i as u32, c as usize));
            }
            let lists = orders
                .iter()
                .map(|order| {
                    let mut list = Vec::with_capacity(n);
                    for &i in order {
                        let i = i as usize;
                        list.extend(first_slot[i]..first_slot[i] + count[i]);
                    }
                    list
                })
                .collect();
            let mut g = Grower {
                cols: &cols,
                y,
                params,
                mtry,
                rng,
                nodes: Vec::new(),
                importance: vec![0.0; d],
                rows,
                lists,
                goes_left: vec![false; n],
                buf: Vec::with_capacity(n),
                recip: &recip,
            };
            g.grow(0, n, 0);
            let total: f64 = g.importance.iter().sum();
            if total > 0.0 {
                g.importance.iter_mut().for_each(|v| *v /= total);
            }
            (Tree { nodes: g.nodes }, g.importance)
        })
        .collect();

    let mut per_tree_importance = Array2::zeros((params.n_trees, d));
    let mut trees = Vec::with_capacity(params.n_trees);
    for (t, (tree, imp)) in fitted.into_iter().enumerate() {
        per_tree_importance.row_mut(t).assign(&ndarray::ArrayView1::from(&imp[..]));
        trees.push(tree);
    }
    Ok(ForestModel {
        trees,
        per_tree_importance,
        params: params.clone(),
        feature_count: d,
    })
}

impl ForestModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.feature_count {
            return Err(Error::DimensionMismatch {
                expected: self.feature_count,
                got: x.ncols(),
            });
        }
        check_matrix(x)?;
        Ok(x.outer_iter()
            .map(|row| {
                let row = row.to_vec();
                let mut mean = 0.0;
                for (k, t) in self.trees.iter().enumerate() {
                    mean += (t.predict_row(&row) - mean) / (k + 1) as f64;
                }
                mean
            })
            .collect())
    }

    pub fn mean_importance(&self) -> Vec<f64> {
        self.per_tree_importance.mean_axis(ndarray::Axis(0)).expect("n_trees >= 1").to_vec()
    }

    /// Per-feature `mean / (sample std + 1e-12)` of the per-tree importances.
    pub fn importance_z(&self) -> Result<Vec<f64>> {
        let t = self.trees.len();
        if t < 2 {
            return Err(Error::InvalidParam("importance Z-scores need at least 2 trees".into()));
        }
        Ok(self
            .per_tree_importance
            .columns()
            .into_iter()
            .map(|c| {
                let mean = c.sum() / t as f64;
                let var = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (t - 1) as f64;
                mean / (var.sqrt() + IMPORTANCE_EPS)
            })
            .collect())
    }

    /// Binary layout: `SLRF`, version, D, params as length-prefixed JSON,
    /// tree count, each tree as its node count followed by pre-order nodes
    /// (`0, value` for a leaf; `1, feature, threshold` for a split), then the
    /// importance matrix. All little-endian.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.feature_count as u32)?;
        let params = serde_json::to_vec(&self.params).map_err(std::io::Error::other)?;
        w.write_u32::<LittleEndian>(params.len() as u32)?;
        w.write_all(&params)?;
        w.write_u32::<LittleEndian>(self.trees.len() as u32)?;
        for t in &self.trees {
            w.write_u32::<LittleEndian>(t.nodes.len() as u32)?;
            for n in &t.nodes {
                match *n {
                    Node::Leaf(v) => {
                        w.write_u8(0)?;
                        w.write_f64::<LittleEndian>(v)?;
                    }
                    Node::Split { feature, threshold, .. } => {
                        w.write_u8(1)?;
                        w.write_u32::<LittleEndian>(feature)?;
                        w.write_f64::<LittleEndian>(threshold)?;
                    }
                }
            }
        }
        for v in self.per_tree_importance.iter() {
            w.write_f64::<LittleEndian>(*v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        read_forest(&mut BufReader::new(file)).map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData | std::io::ErrorKind::UnexpectedEof => Error::Format {
                kind: "forest model",
                message: e.to_string(),
            },
            _ => Error::io(path, e),
        })
    }
}

fn read_forest(r: &mut impl Read) -> std::io::Result<ForestModel> {
    let invalid = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_owned());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid("missing SLRF magic"));
    }
    if r.read_u32::<LittleEndian>()? != VERSION {
        return Err(invalid("unsupported version"));
    }
    let d = r.read_u32::<LittleEndian>()? as usize;
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    let params: ForestParams = serde_json::from_slice(&buf).map_err(|_| invalid("bad parameters"))?;
    let n_trees = r.read_u32::<LittleEndian>()? as usize;
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut nodes = Vec::with_capacity(count);
        for _ in 0..count {
            nodes.push(match r.read_u8()? {
                0 => Node::Leaf(r.read_f64::<LittleEndian>()?),
                1 => {
                    let feature = r.read_u32::<LittleEndian>()?;
                    if feature as usize >= d {
                        return Err(invalid("split feature out of range"));
                    }
                    Node::Split {
                        feature,
                        threshold: r.read_f64::<LittleEndian>()?,
                        right: 0,
                    }
                }
                _ => return Err(invalid("bad node tag")),
            });
        }
        link(&mut nodes).ok_or_else(|| invalid("malformed tree"))?;
        trees.push(Tree { nodes });
    }
    let mut imp = vec![0f64; n_trees * d];
    r.read_f64_into::<LittleEndian>(&mut imp)?;
    Ok(ForestModel {
        trees,
        per_tree_importance: Array2::from_shape_vec((n_trees, d), imp).expect("shape"),
        params,
        feature_count: d,
    })
}

/// Recompute right-child offsets of a pre-order node list.
fn link(nodes: &mut [Node]) -> Option<()> {
    fn walk(nodes: &mut [Node], i: usize) -> Option<usize> {
        match *nodes.get(i)? {
            Node::Leaf(_) => Some(i + 1),
            Node::Split { feature, threshold, .. } => {
                let right = walk(nodes, i + 1)?;
                let end = walk(nodes, right)?;
                nodes[i] = Node::Split { feature, threshold, right: right as u32 };
                Some(end)
            }
        }
    }
    (walk(nodes, 0)? == nodes.len()).then_some(())
}
