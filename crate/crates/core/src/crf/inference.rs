//! MAP inference: exact dynamic programming on forests, damped max-product
//! belief propagation followed by ICM with restarts on loopy graphs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::L;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub bp_iterations: usize,
    pub damping: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            bp_iterations: 50,
            damping: 0.5,
            restarts: 10,
            seed: 0,
        }
    }
}

/// Potential tables of one instance, in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Potentials {
    pub unary: Vec<[f64; L]>,
    /// `pairwise[e][y_source][y_target]`
    pub pairwise: Vec<[[f64; L]; L]>,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
}

pub fn is_forest(n: usize, sources: &[usize], targets: &[usize]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (&s, &t) in sources.iter().zip(targets) {
        let (a, b) = (find(&mut parent, s), find(&mut parent, t));
        if a == b {
            return false;
        }
        parent[a] = b;
    }
    true
}

fn argmax(values: &[f64; L]) -> usize {
    let mut best = 0;
    for k in 1..L {
        if values[k] > values[best] {
            best = k;
        }
    }
    best
}

impl Potentials {
    pub fn len(&self) -> usize {
        self.unary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unary.is_empty()
    }

    pub fn score(&self, y: &[usize]) -> f64 {
        let u: f64 = self.unary.iter().zip(y).map(|(row, &k)| row[k]).sum();
        let p: f64 = (0..self.pairwise.len())
            .map(|e| self.pairwise[e][y[self.sources[e]]][y[self.targets[e]]])
            .sum();
        u + p
    }

    /// Adds `weight` to every label that differs from `gold`.
    pub fn add_hamming(&mut self, gold: &[usize], weight: f64) -> Result<()> {
        if gold.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} gold labels for {} nodes",
                gold.len(),
                self.len()
            )));
        }
        for (row, &g) in self.unary.iter_mut().zip(gold) {
            for (k, v) in row.iter_mut().enumerate() {
                if k != g {
                    *v += weight;
                }
            }
        }
        Ok(())
    }

    fn incident(&self) -> Vec<Vec<(usize, bool)>> {
        let mut adj = vec![Vec::new(); self.len()];
        for e in 0..self.sources.len() {
            adj[self.sources[e]].push((e, true));
            adj[self.targets[e]].push((e, false));
        }
        adj
    }

    /// Edge potential seen from `v`: `table[y_v][y_other]`.
    fn oriented(&self, e: usize, v_is_source: bool, yv: usize, yo: usize) -> f64 {
        if v_is_source {
            self.pairwise[e][yv][yo]
        } else {
            self.pairwise[e][yo][yv]
        }
    }

    pub fn unary_argmax(&self) -> Vec<usize> {
        self.unary.iter().map(argmax).collect()
    }

    /// Highest-scoring labeling found; exact when the graph is a forest.
    pub fn map(&self, config: &InferenceConfig) -> Vec<usize> {
        if is_forest(self.len(), &self.sources, &self.targets) {
            self.tree_map()
        } else {
            self.loopy_map(config)
        }
    }

    pub fn tree_map(&self) -> Vec<usize> {
        let n = self.len();
        let adj = self.incident();
        let mut order = Vec::with_capacity(n);
        let mut parent: Vec<Option<(usize, bool)>> = vec![None; n];
        let mut seen = vec![false; n];
        for root in 0..n {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            let start = order.len();
            order.push(root);
            let mut head = start;
            while head < order.len() {
                let v = order[head];
                head += 1;
                for &(e, v_is_source) in &adj[v] {
                    let w = if v_is_source {
                        self.targets[e]
                    } else {
                        self.sources[e]
                    };
                    if !seen[w] {
                        seen[w] = true;
                        parent[w] = Some((e, !v_is_source));
                        order.push(w);
                    }
                }
            }
        }
        let mut up = self.unary.clone();
        let mut choice = vec![[0usize; L]; n];
        for &v in order.iter().rev() {
            let Some((e, v_is_source)) = parent[v] else {
                continue;
            };
            let p = if v_is_source {
                self.targets[e]
            } else {
                self.sources[e]
            };
            let mut msg = [0.0; L];
            for yp in 0..L {
                let mut best = 0;
                let mut best_val = f64::NEG_INFINITY;
                for yv in 0..L {
                    let val = up[v][yv] + self.oriented(e, v_is_source, yv, yp);
                    if val > best_val {
                        best_val = val;
                        best = yv;
                    }
                }
                msg[yp] = best_val;
                choice[v][yp] = best;
            }
            for yp in 0..L {
                up[p][yp] += msg[yp];
            }
        }
        let mut y = vec![0; n];
        for &v in &order {
            y[v] = match parent[v] {
                None => argmax(&up[v]),
                Some((e, v_is_source)) => {
                    let p = if v_is_source {
                        self.targets[e]
                    } else {
                        self.sources[e]
                    };
                    choice[v][y[p]]
                }
            };
        }
        y
    }

    /// Damped synchronous max-sum belief propagation; returns the belief argmax.
    pub fn belief_propagation(&self, iterations: usize, damping: f64) -> Vec<usize> {
        let m = self.sources.len();
        let adj = self.incident();
        // to_target[e] is the message source -> target over target labels
        let mut to_target = vec![[0.0; L]; m];
        let mut to_source = vec![[0.0; L]; m];
        let beliefs = |tt: &[[f64; L]], ts: &[[f64; L]]| -> Vec<[f64; L]> {
            let mut b = self.unary.clone();
            for (v, list) in adj.iter().enumerate() {
                for &(e, v_is_source) in list {
                    let msg = if v_is_source { &ts[e] } else { &tt[e] };
                    for k in 0..L {
                        b[v][k] += msg[k];
                    }
                }
            }
            b
        };
        for _ in 0..iterations {
            let b = beliefs(&to_target, &to_source);
            let mut change: f64 = 0.0;
            let mut next_t = to_target.clone();
            let mut next_s = to_source.clone();
            for e in 0..m {
                let (s, t) = (self.sources[e], self.targets[e]);
                for (out, from, from_is_source, prev) in [
                    (&mut next_t[e], s, true, &to_source[e]),
                    (&mut next_s[e], t, false, &to_target[e]),
                ] {
                    let mut fresh = [f64::NEG_INFINITY; L];
                    for (yo, f) in fresh.iter_mut().enumerate() {
                        for yf in 0..L {
                            let val =
                                b[from][yf] - prev[yf] + self.oriented(e, from_is_source, yf, yo);
                            *f = f.max(val);
                        }
                    }
                    let top = fresh.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    for k in 0..L {
                        let v = damping * out[k] + (1.0 - damping) * (fresh[k] - top);
                        change = change.max((v - out[k]).abs());
                        out[k] = v;
                    }
                }
            }
            to_target = next_t;
            to_source = next_s;
            if change < 1e-9 {
                break;
            }
        }
        beliefs(&to_target, &to_source).iter().map(argmax).collect()
    }

    /// Iterated conditional modes; moves only on strict improvement.
    pub fn icm(&self, mut y: Vec<usize>) -> Vec<usize> {
        let adj = self.incident();
        for _ in 0..200 {
            let mut changed = false;
            for v in 0..self.len() {
                let mut local = self.unary[v];
                for &(e, v_is_source) in &adj[v] {
                    let other = if v_is_source {
                        y[self.targets[e]]
                    } else {
                        y[self.sources[e]]
                    };
                    for (k, l) in local.iter_mut().enumerate() {
                        *l += self.oriented(e, v_is_source, k, other);
                    }
                }
                let best = argmax(&local);
                if local[best] > local[y[v]] + 1e-12 {
                    y[v] = best;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        y
    }

    pub fn loopy_map(&self, config: &InferenceConfig) -> Vec<usize> {
        let mut candidates = vec![
            self.icm(self.unary_argmax()),
            self.icm(self.belief_propagation(config.bp_iterations, config.damping)),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for _ in 0..config.restarts {
            let start = (0..self.len()).map(|_| rng.gen_range(0..L)).collect();
            candidates.push(self.icm(start));
        }
        let mut best = 0;
        let mut best_score = self.score(&candidates[0]);
        for (i, c) in candidates.iter().enumerate().skip(1) {
            let s = self.score(c);
            if s > best_score {
                best = i;
                best_score = s;
            }
        }
        candidates.swap_remove(best)
    }
}

/// Exhaustive maximization over all `5ⁿ` labelings; first maximizer in
/// lexicographic order wins.
pub fn brute_force_map(pot: &Potentials) -> (Vec<usize>, f64) {
    let n = pot.len();
    let mut y = vec![0; n];
    let mut best = (y.clone(), pot.score(&y));
    loop {
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            y[i] += 1;
            if y[i] < L {
                break;
            }
            y[i] = 0;
        }
        let s = pot.score(&y);
        if s > best.1 {
            best = (y.clone(), s);
        }
    }
}
