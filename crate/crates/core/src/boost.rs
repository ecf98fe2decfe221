//! Gradient tree boosting under Tweedie deviance with a log link.
//!
//! Each round fits a least-squares regression tree to the negative
//! gradient `y e^((1-p)F) - e^((2-p)F)` and replaces the tree's fitted
//! values by the exact in-leaf minimizer
//! `ln(sum w y e^((1-p)F) / sum w e^((2-p)F))`, damped by the learning rate.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::stratified_folds;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::shrink::Groups;
use crate::tweedie::unit_deviance;

/// Bound on a leaf value; only reached by leaves whose responses are all 0.
pub const LEAF_CAP: f64 = 19.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoostConfig {
    pub max_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_node_size: usize,
    pub subsample: f64,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            max_trees: 3000,
            learning_rate: 0.05,
            max_depth: 3,
            min_node_size: 10,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!("learning_rate must lie in (0, 1], got {}", self.learning_rate)));
        }
        if self.max_depth == 0 || self.min_node_size == 0 {
            return Err(Error::Config("max_depth and min_node_size must be at least 1".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Config(format!("subsample must lie in (0, 1], got {}", self.subsample)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        /// Rows with `x <= threshold` go left.
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn eval(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    node = if x[(row, *feature)] <= *threshold { left } else { right };
                }
            }
        }
    }

    fn count_splits(&self, counts: &mut [usize]) {
        if let Node::Split { feature, left, right, .. } = self {
            counts[*feature] += 1;
            left.count_splits(counts);
            right.count_splits(counts);
        }
    }

    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut f64>) {
        match self {
            Node::Leaf { value } => out.push(value),
            Node::Split { left, right, .. } => {
                left.leaves_mut(out);
                right.leaves_mut(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub features: Vec<String>,
    pub p: f64,
    pub learning_rate: f64,
    pub f0: f64,
    pub trees: Vec<Node>,
    /// Split counts per feature column.
    pub feature_usage: Vec<usize>,
    /// Training deviance before the first round and after each round.
    pub train_deviance: Vec<f64>,
    #[serde(skip)]
    pub train_scores: Vec<f64>,
}

impl BoostModel {
    fn check(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.features.len() {
            return Err(Error::Schema(format!(
                "model expects {} feature columns, got {}",
                self.features.len(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Scores `F0 + sum lr * tree_m(x)` using the first `trees` trees.
    pub fn scores(&self, x: &DMatrix<f64>, trees: usize) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok((0..x.nrows())
            .map(|i| {
                let mut f = self.f0;
                for t in &self.trees[..trees.min(self.trees.len())] {
                    f += self.learning_rate * t.eval(x, i);
                }
                f
            })
            .collect())
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.scores(x, self.trees.len())?.into_iter().map(f64::exp).collect())
    }

    /// Drops trees beyond the first `m`.
    pub fn truncate(&mut self, m: usize) {
        self.trees.truncate(m);
        self.train_deviance.truncate(m + 1);
        self.train_scores.clear();
        let mut usage = vec![0; self.features.len()];
        for t in &self.trees {
            t.count_splits(&mut usage);
        }
        self.feature_usage = usage;
    }
}

/// Features used in at least one split, with split counts.
pub fn selected_features(model: &BoostModel) -> Vec<(String, usize)> {
    model
        .features
        .iter()
        .zip(&model.feature_usage)
        .filter(|(_, c)| **c > 0)
        .map(|(n, c)| (n.clone(), *c))
        .collect()
}

/// Groups with any member column used in a split, with summed counts.
pub fn selected_groups(model: &BoostModel, groups: &Groups) -> Vec<(String, usize)> {
    let mut counts = vec![0; groups.names.len()];
    for (c, &u) in model.feature_usage.iter().enumerate() {
        counts[groups.of_column[c]] += u;
    }
    groups
        .names
        .iter()
        .zip(counts)
        .filter(|(_, c)| *c > 0)
        .map(|(n, c)| (n.clone(), c))
        .collect()
}

fn check_inputs(x: &DMatrix<f64>, names: &[String], y: &[f64], weights: Option<&[f64]>, p: f64) -> Result<()> {
    if !(p >= 1.0) {
        return Err(Error::domain(format!("boosting supports powers p >= 1, got {p}")));
    }
    crate::tweedie::check_response(x, names, y, p, weights)
}

struct Presorted {
    order: Vec<Vec<usize>>,
    /// Feature values in `order`.
    values: Vec<Vec<f64>>,
}

impl Presorted {
    fn new(x: &DMatrix<f64>) -> Self {
        let order: Vec<Vec<usize>> = (0..x.ncols())
            .map(|j| {
                let mut idx: Vec<usize> = (0..x.nrows()).collect();
                idx.sort_by(|&a, &b| x[(a, j)].total_cmp(&x[(b, j)]).then(a.cmp(&b)));
                idx
            })
            .collect();
        let values = order
            .iter()
            .enumerate()
            .map(|(j, idx)| idx.iter().map(|&i| x[(i, j)]).collect())
            .collect();
        Presorted { order, values }
    }
}

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

enum Tmp {
    Leaf,
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Grows a least-squares tree level by level. `node_of[i]` must be 0 for
/// rows in the sample and `usize::MAX` elsewhere; on return it holds leaf
/// ids (indices into the arena) for sampled rows.
fn grow_tree(
    x: &DMatrix<f64>,
    sorted: &Presorted,
    r: &[f64],
    w: &[f64],
    node_of: &mut [usize],
    config: &BoostConfig,
) -> (Vec<Tmp>, Vec<usize>) {
    let mut arena = vec![Tmp::Leaf];
    let mut frontier = vec![0usize];
    for _ in 0..config.max_depth {
        if frontier.is_empty() {
            break;
        }
        // Arena id -> frontier slot.
        let mut slot_of = vec![usize::MAX; arena.len()];
        for (s, &id) in frontier.iter().enumerate() {
            slot_of[id] = s;
        }
        let k = frontier.len();
        // Frontier slot per row, NONE for rows outside the frontier.
        const NONE: u32 = u32::MAX;
        let row_slot: Vec<u32> = node_of
            .iter()
            .map(|&id| if id != usize::MAX && id < slot_of.len() && slot_of[id] != usize::MAX { slot_of[id] as u32 } else { NONE })
            .collect();
        let wr: Vec<f64> = r.iter().zip(w).map(|(a, b)| a * b).collect();
        let mut tot_g = vec![0.0; k];
        let mut tot_w = vec![0.0; k];
        let mut tot_gg = vec![0.0; k];
        let mut tot_n = vec![0usize; k];
        for i in 0..r.len() {
            let s = row_slot[i];
            if s != NONE {
                let s = s as usize;
                tot_g[s] += wr[i];
                tot_w[s] += w[i];
                tot_gg[s] += wr[i] * r[i];
                tot_n[s] += 1;
            }
        }
        let mut best: Vec<Option<Best>> = vec![None; k];
        let mut lg = vec![0.0; k];
        let mut lw = vec![0.0; k];
        let mut ln = vec![0usize; k];
        let mut last = vec![f64::NAN; k];
        for (f, (order, values)) in sorted.order.iter().zip(&sorted.values).enumerate() {
            lg.iter_mut().for_each(|v| *v = 0.0);
            lw.iter_mut().for_each(|v| *v = 0.0);
            ln.iter_mut().for_each(|v| *v = 0);
            for (&i, &v) in order.iter().zip(values) {
                let s = row_slot[i];
                if s == NONE {
                    continue;
                }
                let s = s as usize;
                if ln[s] > 0 && v > last[s] && ln[s] >= config.min_node_size && tot_n[s] - ln[s] >= config.min_node_size {
                    let rg = tot_g[s] - lg[s];
                    let rw = tot_w[s] - lw[s];
                    if lw[s] > 0.0 && rw > 0.0 {
                        let gain = lg[s] * lg[s] / lw[s] + rg * rg / rw - tot_g[s] * tot_g[s] / tot_w[s];
                        let floor = 1e-12 * tot_gg[s];
                        if gain > floor && best[s].is_none_or(|b| gain > b.gain) {
                            let mid = last[s] + (v - last[s]) / 2.0;
                            let threshold = if mid < v { mid } else { last[s] };
                            best[s] = Some(Best { gain, feature: f, threshold });
                        }
                    }
                }
                lg[s] += wr[i];
                lw[s] += w[i];
                ln[s] += 1;
                last[s] = v;
            }
        }
        let mut next = Vec::new();
        let mut children = vec![(usize::MAX, usize::MAX); k];
        for (s, &id) in frontier.iter().enumerate() {
            if let Some(b) = best[s] {
                let left = arena.len();
                arena.push(Tmp::Leaf);
                arena.push(Tmp::Leaf);
                arena[id] = Tmp::Split { feature: b.feature, threshold: b.threshold, left, right: left + 1 };
                children[s] = (left, left + 1);
                next.push(left);
                next.push(left + 1);
            }
        }
        for i in 0..r.len() {
            if row_slot[i] == NONE {
                continue;
            }
            let s = row_slot[i] as usize;
            if let (Some(b), (l, rr)) = (best[s], children[s]) {
                node_of[i] = if x[(i, b.feature)] <= b.threshold { l } else { rr };
            }
        }
        frontier = next;
    }
    let leaves: Vec<usize> = (0..arena.len()).filter(|&i| matches!(arena[i], Tmp::Leaf)).collect();
    (arena, leaves)
}

fn route(arena: &[Tmp], x: &DMatrix<f64>, row: usize) -> usize {
    let mut id = 0;
    loop {
        match arena[id] {
            Tmp::Leaf => return id,
            Tmp::Split { feature, threshold, left, right } => {
                id = if x[(row, feature)] <= threshold { left } else { right };
            }
        }
    }
}

fn to_node(arena: &[Tmp], values: &[f64], id: usize) -> Node {
    match arena[id] {
        Tmp::Leaf => Node::Leaf { value: values[id] },
        Tmp::Split { feature, threshold, left, right } => Node::Split {
            feature,
            threshold,
            left: Box::new(to_node(arena, values, left)),
            right: Box::new(to_node(arena, values, right)),
        },
    }
}

/// Exact in-leaf minimizer given current scores.
fn leaf_values(arena_len: usize, leaf_of: &[usize], rows: &[usize], y: &[f64], w: &[f64], f: &[f64], p: f64) -> Vec<f64> {
    let mut num = vec![0.0; arena_len];
    let mut den = vec![0.0; arena_len];
    for &i in rows {
        let l = leaf_of[i];
        num[l] += w[i] * y[i] * ((1.0 - p) * f[i]).exp();
        den[l] += w[i] * ((2.0 - p) * f[i]).exp();
    }
    num.iter()
        .zip(&den)
        .map(|(a, b)| {
            if *b > 0.0 {
                if *a > 0.0 { (a / b).ln().clamp(-LEAF_CAP, LEAF_CAP) } else { -LEAF_CAP }
            } else {
                0.0
            }
        })
        .collect()
}

fn deviance(y: &[f64], f: &[f64], w: &[f64], p: f64) -> f64 {
    y.iter().zip(f).zip(w).map(|((y, f), w)| w * unit_deviance(*y, f.exp(), p)).sum()
}

pub fn fit(
    x: &DMatrix<f64>,
    names: &[String],
    y: &[f64],
    weights: Option<&[f64]>,
    p: f64,
    config: &BoostConfig,
) -> Result<BoostModel> {
    config.validate()?;
    check_inputs(x, names, y, weights, p)?;
    let n = y.len();
    let w: Vec<f64> = (0..n).map(|i| weights.map_or(1.0, |w| w[i])).collect();
    let wsum: f64 = w.iter().sum();
    let ybar = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / wsum;
    if !(ybar > 0.0) {
        return Err(Error::domain("boosting needs a response with positive mean"));
    }
    let f0 = ybar.ln();
    let mut f = vec![f0; n];
    let sorted = Presorted::new(x);
    let mut trees = Vec::new();
    let mut usage = vec![0; x.ncols()];
    let mut dev = deviance(y, &f, &w, p);
    let mut train_deviance = vec![dev];
    let lr = config.learning_rate;
    let all: Vec<usize> = (0..n).collect();
    let n_sample = ((config.subsample * n as f64).round() as usize).clamp(1, n);
    let mut rng = stream_rng(config.seed, 5);

    for _ in 0..config.max_trees {
        let r: Vec<f64> = (0..n)
            .map(|i| y[i] * ((1.0 - p) * f[i]).exp() - ((2.0 - p) * f[i]).exp())
            .collect();
        let rows: Vec<usize> = if n_sample == n {
            all.clone()
        } else {
            let mut s = sample(&mut rng, n, n_sample).into_vec();
            s.sort_unstable();
            s
        };
        let mut node_of = vec![usize::MAX; n];
        for &i in &rows {
            node_of[i] = 0;
        }
        let (arena, _) = grow_tree(x, &sorted, &r, &w, &mut node_of, config);
        let leaf_of: Vec<usize> = if n_sample == n { node_of } else { (0..n).map(|i| route(&arena, x, i)).collect() };
        let mut values = leaf_values(arena.len(), &leaf_of, &rows, y, &w, &f, p);
        let step = |values: &[f64]| -> Vec<f64> { (0..n).map(|i| f[i] + lr * values[leaf_of[i]]).collect() };
        let mut new_f = step(&values);
        let mut new_dev = deviance(y, &new_f, &w, p);
        if n_sample < n && new_dev > dev {
            // An unlucky subsample: fall back to full-data leaf values,
            // which cannot increase the deviance.
            values = leaf_values(arena.len(), &leaf_of, &all, y, &w, &f, p);
            new_f = step(&values);
            new_dev = deviance(y, &new_f, &w, p);
        }
        let tree = to_node(&arena, &values, 0);
        tree.count_splits(&mut usage);
        trees.push(tree);
        f = new_f;
        dev = new_dev;
        train_deviance.push(dev);
    }
    Ok(BoostModel {
        features: names.to_vec(),
        p,
        learning_rate: lr,
        f0,
        trees,
        feature_usage: usage,
        train_deviance,
        train_scores: f,
    })
}

pub fn predict(model: &BoostModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    model.predict(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeCv {
    pub best_trees: usize,
    /// Mean out-of-fold RMSE after `m` trees, `m = 0..=max_trees`.
    pub rmse: Vec<f64>,
}

/// Number of rounds minimizing the mean out-of-fold RMSE (earliest on ties).
#[allow(clippy::too_many_arguments)]
pub fn select_trees_by_cv(
    x: &DMatrix<f64>,
    names: &[String],
    y: &[f64],
    weights: Option<&[f64]>,
    p: f64,
    config: &BoostConfig,
    folds: usize,
    seed: u64,
) -> Result<TreeCv> {
    let assignment = stratified_folds(y, folds, seed)?;
    let curves: Vec<Option<Vec<f64>>> = (0..folds)
        .into_par_iter()
        .map(|fold| -> Result<Option<Vec<f64>>> {
            let train: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] != fold).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] == fold).collect();
            let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            if y_train.iter().all(|v| *v == 0.0) {
                log::warn!("skipping fold {fold}: training response is all zero");
                return Ok(None);
            }
            let w_train: Option<Vec<f64>> = weights.map(|w| train.iter().map(|&i| w[i]).collect());
            let x_test = x.select_rows(&test);
            let y_test: Vec<f64> = test.iter().map(|&i| y[i]).collect();
            let cfg = BoostConfig { seed: derive_seed(config.seed, fold as u64), ..config.clone() };
            let model = fit(&x.select_rows(&train), names, &y_train, w_train.as_deref(), p, &cfg)?;
            let rmse = |s: &[f64]| {
                (s.iter().zip(&y_test).map(|(f, y)| (f.exp() - y).powi(2)).sum::<f64>() / y_test.len() as f64).sqrt()
            };
            let mut s = vec![model.f0; test.len()];
            let mut full = vec![rmse(&s)];
            for tree in &model.trees {
                for (i, v) in s.iter_mut().enumerate() {
                    *v += model.learning_rate * tree.eval(&x_test, i);
                }
                full.push(rmse(&s));
            }
            Ok(Some(full))
        })
        .collect::<Result<Vec<_>>>()?;
    let used: Vec<&Vec<f64>> = curves.iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::domain("every cross-validation fold was skipped"));
    }
    let rmse: Vec<f64> = (0..=config.max_trees)
        .map(|m| used.iter().map(|c| c[m]).sum::<f64>() / used.len() as f64)
        .collect();
    let mut best = 0;
    for (m, v) in rmse.iter().enumerate() {
        if *v < rmse[best] {
            best = m;
        }
    }
    Ok(TreeCv { best_trees: best, rmse })
}

/// Leaf pointers of a tree in depth-first order, for in-place edits.
pub fn leaf_values_mut(tree: &mut Node) -> Vec<&mut f64> {
    let mut out = Vec::new();
    tree.leaves_mut(&mut out);
    out
}
