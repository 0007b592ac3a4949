//! Two reference classifiers over numeric feature rows with outcomes in
//! `[0, 1]`: a ridge-penalized logistic model (L1) and bagged shallow Gini
//! trees (L2). Both train on rows aggregated by identical feature vectors,
//! which keeps fitting cost proportional to the number of distinct profiles.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;

pub const LOGISTIC_PENALTY: f64 = 1e-3;
pub const FOREST_TREES: usize = 25;
pub const FOREST_DEPTH: usize = 4;

/// Feature rows and outcomes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Self {
        assert_eq!(x.len(), y.len(), "rows and outcomes differ in length");
        Self { x, y }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self { x: rows.iter().map(|&i| self.x[i].clone()).collect(), y: rows.iter().map(|&i| self.y[i]).collect() }
    }
}

/// Rows merged by identical features: `(features, weight, weighted y sum)`.
fn aggregate<'a, I>(rows: I) -> Vec<(Vec<f64>, f64, f64)>
where
    I: IntoIterator<Item = (&'a [f64], f64, f64)>,
{
    let mut at: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut out: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    for (x, w, y) in rows {
        if w == 0.0 {
            continue;
        }
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        match at.get(&key) {
            Some(&i) => {
                out[i].1 += w;
                out[i].2 += w * y;
            }
            None => {
                at.insert(key, out.len());
                out.push((x.to_vec(), w, w * y));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    /// L1: penalized logistic regression
    Logistic,
    /// L2: bagged depth-limited trees
    Forest,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 2] = [LearnerKind::Logistic, LearnerKind::Forest];

    pub fn fit(self, data: &Dataset, seed: u64) -> Result<Fitted, HarnessError> {
        if data.is_empty() {
            return Err(HarnessError::EmptyTraining);
        }
        Ok(match self {
            LearnerKind::Logistic => Fitted::Logistic(Logistic::fit(data, LOGISTIC_PENALTY)),
            LearnerKind::Forest => Fitted::Forest(Forest::fit(data, FOREST_TREES, FOREST_DEPTH, seed)),
        })
    }
}

impl FromStr for LearnerKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" | "l1" => Ok(LearnerKind::Logistic),
            "forest" | "trees" | "l2" => Ok(LearnerKind::Forest),
            _ => Err(HarnessError::UnknownLearner(s.to_string())),
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LearnerKind::Logistic => "logistic",
            LearnerKind::Forest => "forest",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Fitted {
    Logistic(Logistic),
    Forest(Forest),
}

impl Fitted {
    pub fn prob(&self, x: &[f64]) -> f64 {
        match self {
            Fitted::Logistic(m) => m.prob(x),
            Fitted::Forest(m) => m.prob(x),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.prob(x) >= 0.5 {
            1.0
        } else {
            0.0
        }
    }

    /// Fraction of rows whose predicted class matches `y >= 0.5`.
    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return f64::NAN;
        }
        let hits = data.x.iter().zip(&data.y).filter(|(x, &y)| self.predict(x) == class(y)).count();
        hits as f64 / data.len() as f64
    }

    /// Mean squared error of predicted probabilities.
    pub fn brier(&self, data: &Dataset) -> f64 {
        let se: f64 = data.x.iter().zip(&data.y).map(|(x, &y)| (self.prob(x) - y).powi(2)).sum();
        se / data.len() as f64
    }
}

pub fn class(y: f64) -> f64 {
    if y >= 0.5 {
        1.0
    } else {
        0.0
    }
}

/// Logistic regression minimizing the summed negative log-likelihood plus
/// `penalty / 2 * |w|^2` (intercept unpenalized). Gradient steps are scaled
/// by the diagonal of the Hessian and sized by backtracking line search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub iterations: usize,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl Logistic {
    const MAX_ITER: usize = 5000;
    const TOL: f64 = 1e-14;

    pub fn fit(data: &Dataset, penalty: f64) -> Self {
        let rows = aggregate(data.x.iter().zip(&data.y).map(|(x, &y)| (x.as_slice(), 1.0, y)));
        Self::fit_weighted(&rows, data.len() as f64, penalty)
    }

    fn fit_weighted(rows: &[(Vec<f64>, f64, f64)], total: f64, penalty: f64) -> Self {
        let p = rows.first().map_or(0, |r| r.0.len());
        // centred columns decouple the intercept from the weights
        let mut center = vec![0.0; p];
        for (x, n, _) in rows {
            for j in 0..p {
                center[j] += n * x[j] / total;
            }
        }
        let centred: Vec<(Vec<f64>, f64, f64)> = rows
            .iter()
            .map(|(x, n, s)| (x.iter().zip(&center).map(|(a, c)| a - c).collect(), *n, *s))
            .collect();
        let rows = centred.as_slice();
        // the objective is kept on the per-row scale
        let penalty = penalty / total;
        let dim = p + 1;
        let eta = |w: &[f64], x: &[f64]| w[p] + x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        let objective = |w: &[f64]| {
            let nll: f64 = rows.iter().map(|(x, n, s)| n * softplus(eta(w, x)) - s * eta(w, x)).sum();
            nll / total + 0.5 * penalty * w[..p].iter().map(|v| v * v).sum::<f64>()
        };
        let mut w = vec![0.0; dim];
        let mut f = objective(&w);
        let mut iterations = 0;
        for it in 0..Self::MAX_ITER {
            iterations = it + 1;
            let mut g = vec![0.0; dim];
            let mut h = vec![0.0; dim];
            for (x, n, s) in rows {
                let mu = sigmoid(eta(&w, x));
                let r = n * mu - s;
                let c = n * mu * (1.0 - mu);
                for j in 0..p {
                    g[j] += r * x[j];
                    h[j] += c * x[j] * x[j];
                }
                g[p] += r;
                h[p] += c;
            }
            for j in 0..dim {
                g[j] /= total;
                h[j] /= total;
                if j < p {
                    g[j] += penalty * w[j];
                    h[j] += penalty;
                }
            }
            let dir: Vec<f64> = g.iter().zip(&h).map(|(gj, hj)| -gj / hj.max(1e-12)).collect();
            let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
            // scaled decrement, roughly twice the remaining suboptimality
            if -slope < Self::TOL {
                break;
            }
            let mut step = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand: Vec<f64> = w.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
                let fc = objective(&cand);
                if fc <= f + 1e-4 * step * slope {
                    w = cand;
                    f = fc;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let intercept = w[p] - w[..p].iter().zip(&center).map(|(a, c)| a * c).sum::<f64>();
        Self { intercept, weights: w[..p].to_vec(), iterations }
    }

    pub fn prob(&self, x: &[f64]) -> f64 {
        sigmoid(self.intercept + x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

impl Node {
    fn prob(&self, x: &[f64]) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.prob(x)
                } else {
                    right.prob(x)
                }
            }
        }
    }
}

/// Bootstrap-aggregated Gini trees; the prediction is the mean leaf rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Node>,
}

type Row = (Vec<f64>, f64, f64);

fn gini(w: f64, s: f64) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let p = s / w;
    2.0 * w * p * (1.0 - p)
}

fn grow(rows: &[Row], depth: usize) -> Node {
    let (w, s) = rows.iter().fold((0.0, 0.0), |(a, b), r| (a + r.1, b + r.2));
    let leaf = Node::Leaf(if w > 0.0 { s / w } else { 0.5 });
    if depth == 0 || w < 2.0 || s <= 0.0 || s >= w {
        return leaf;
    }
    let parent = gini(w, s);
    let p = rows[0].0.len();
    let mut best: Option<(f64, usize, f64)> = None;
    for j in 0..p {
        let mut vals: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r.0[j], r.1, r.2)).collect();
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (mut lw, mut ls) = (0.0, 0.0);
        for i in 0..vals.len() - 1 {
            lw += vals[i].1;
            ls += vals[i].2;
            if vals[i].0 == vals[i + 1].0 {
                continue;
            }
            let gain = parent - gini(lw, ls) - gini(w - lw, s - ls);
            if gain > 1e-12 && best.is_none_or(|b| gain > b.0) {
                best = Some((gain, j, 0.5 * (vals[i].0 + vals[i + 1].0)));
            }
        }
    }
    let Some((_, feature, threshold)) = best else { return leaf };
    let (l, r): (Vec<Row>, Vec<Row>) = rows.iter().cloned().partition(|row| row.0[feature] <= threshold);
    Node::Split { feature, threshold, left: Box::new(grow(&l, depth - 1)), right: Box::new(grow(&r, depth - 1)) }
}

impl Forest {
    pub fn fit(data: &Dataset, trees: usize, depth: usize, seed: u64) -> Self {
        let n = data.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..trees)
            .map(|_| {
                let mut counts = vec![0u32; n];
                for _ in 0..n {
                    counts[rng.gen_range(0..n)] += 1;
                }
                let rows = aggregate(
                    data.x.iter().zip(&data.y).zip(&counts).map(|((x, &y), &c)| (x.as_slice(), c as f64, y)),
                );
                grow(&rows, depth)
            })
            .collect();
        Self { trees }
    }

    pub fn prob(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.prob(x)).sum::<f64>() / self.trees.len() as f64
    }
}
