//! Log-space dynamic programs over the 9-tag linear chain.

use crate::math::logsumexp;

pub const NUM_TAGS: usize = 9;

pub type TagRow = [f64; NUM_TAGS];

/// Fully materialised potentials for one sequence: per-position emission
/// scores, tag-to-tag transitions (`transitions[from][to]`) and start/end
/// scores. A path's score is the sum of the potentials it touches.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub emissions: Vec<TagRow>,
    pub transitions: [TagRow; NUM_TAGS],
    pub start: TagRow,
    pub end: TagRow,
}

/// Posterior marginals from forward-backward.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub log_partition: f64,
    /// `unary[t][y] = P(y_t = y)`.
    pub unary: Vec<TagRow>,
    /// `pairwise[t][i][j] = P(y_t = i, y_{t+1} = j)`, one entry per edge.
    pub pairwise: Vec<[TagRow; NUM_TAGS]>,
}

impl Lattice {
    pub fn len(&self) -> usize {
        self.emissions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emissions.is_empty()
    }

    /// # Panics
    /// If `tags` is empty, has the wrong length or holds an index ≥ 9.
    pub fn path_score(&self, tags: &[usize]) -> f64 {
        assert!(
            !tags.is_empty() && tags.len() == self.len(),
            "path length mismatch"
        );
        let mut s = self.start[tags[0]] + self.end[tags[tags.len() - 1]];
        for (t, &y) in tags.iter().enumerate() {
            s += self.emissions[t][y];
            if t > 0 {
                s += self.transitions[tags[t - 1]][y];
            }
        }
        s
    }

    /// `alpha[t][y]`: log-sum of all prefixes ending in `y` at `t`,
    /// including the emission at `t`.
    fn forward(&self) -> Vec<TagRow> {
        let mut alpha = Vec::with_capacity(self.len());
        let mut prev: TagRow = std::array::from_fn(|y| self.start[y] + self.emissions[0][y]);
        alpha.push(prev);
        let mut buf = [0.0; NUM_TAGS];
        for e in &self.emissions[1..] {
            let cur: TagRow = std::array::from_fn(|j| {
                for i in 0..NUM_TAGS {
                    buf[i] = prev[i] + self.transitions[i][j];
                }
                logsumexp(&buf) + e[j]
            });
            alpha.push(cur);
            prev = cur;
        }
        alpha
    }

    /// `beta[t][y]`: log-sum of all suffixes after `t` given `y` at `t`,
    /// including the end score but not the emission at `t`.
    fn backward(&self) -> Vec<TagRow> {
        let n = self.len();
        let mut beta = vec![[0.0; NUM_TAGS]; n];
        beta[n - 1] = self.end;
        let mut buf = [0.0; NUM_TAGS];
        for t in (0..n - 1).rev() {
            let next = beta[t + 1];
            let e = &self.emissions[t + 1];
            beta[t] = std::array::from_fn(|i| {
                for j in 0..NUM_TAGS {
                    buf[j] = self.transitions[i][j] + e[j] + next[j];
                }
                logsumexp(&buf)
            });
        }
        beta
    }

    /// `log Σ_paths exp(score)` by the forward recursion.
    ///
    /// # Panics
    /// If the lattice is empty.
    pub fn log_partition(&self) -> f64 {
        assert!(!self.is_empty(), "empty sequence");
        let alpha = self.forward();
        let last = alpha[alpha.len() - 1];
        let closing: TagRow = std::array::from_fn(|y| last[y] + self.end[y]);
        logsumexp(&closing)
    }

    /// # Panics
    /// If the lattice is empty.
    pub fn marginals(&self) -> Marginals {
        assert!(!self.is_empty(), "empty sequence");
        let alpha = self.forward();
        let beta = self.backward();
        let n = self.len();
        let closing: TagRow = std::array::from_fn(|y| alpha[n - 1][y] + self.end[y]);
        let log_z = logsumexp(&closing);
        let unary = (0..n)
            .map(|t| std::array::from_fn(|y| (alpha[t][y] + beta[t][y] - log_z).exp()))
            .collect();
        let pairwise = (0..n - 1)
            .map(|t| {
                std::array::from_fn(|i| {
                    std::array::from_fn(|j| {
                        (alpha[t][i]
                            + self.transitions[i][j]
                            + self.emissions[t + 1][j]
                            + beta[t + 1][j]
                            - log_z)
                            .exp()
                    })
                })
            })
            .collect();
        Marginals {
            log_partition: log_z,
            unary,
            pairwise,
        }
    }

    /// Highest-scoring path and its score.
    ///
    /// Ties are resolved towards the lowest tag index at each backtracking
    /// step: the last tag is the lowest-index optimal one, then each earlier
    /// tag is the lowest-index optimal predecessor. Among equally scoring
    /// paths this picks the smallest one when compared from the last
    /// position backwards.
    ///
    /// # Panics
    /// If the lattice is empty.
    pub fn viterbi(&self) -> (Vec<usize>, f64) {
        assert!(!self.is_empty(), "empty sequence");
        let n = self.len();
        let mut delta: TagRow = std::array::from_fn(|y| self.start[y] + self.emissions[0][y]);
        let mut back: Vec<[usize; NUM_TAGS]> = Vec::with_capacity(n - 1);
        for e in &self.emissions[1..] {
            let mut ptr = [0usize; NUM_TAGS];
            let next: TagRow = std::array::from_fn(|j| {
                let mut best = delta[0] + self.transitions[0][j];
                for i in 1..NUM_TAGS {
                    let s = delta[i] + self.transitions[i][j];
                    if s > best {
                        best = s;
                        ptr[j] = i;
                    }
                }
                best + e[j]
            });
            back.push(ptr);
            delta = next;
        }
        let mut last = 0;
        let mut best = delta[0] + self.end[0];
        for y in 1..NUM_TAGS {
            let s = delta[y] + self.end[y];
            if s > best {
                best = s;
                last = y;
            }
        }
        let mut path = vec![last; n];
        for t in (1..n).rev() {
            path[t - 1] = back[t - 1][path[t]];
        }
        (path, best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_lattice(rng: &mut ChaCha8Rng, n: usize, integer: bool) -> Lattice {
        let mut draw = || {
            if integer {
                rng.gen_range(-1i32..=1) as f64
            } else {
                rng.gen_range(-3.0..3.0)
            }
        };
        let emissions = (0..n).map(|_| std::array::from_fn(|_| draw())).collect();
        let transitions = std::array::from_fn(|_| std::array::from_fn(|_| draw()));
        let start = std::array::from_fn(|_| draw());
        let end = std::array::from_fn(|_| draw());
        Lattice {
            emissions,
            transitions,
            start,
            end,
        }
    }

    fn all_paths(n: usize) -> impl Iterator<Item = Vec<usize>> {
        (0..NUM_TAGS.pow(n as u32)).map(move |mut code| {
            let mut p = vec![0; n];
            for slot in p.iter_mut() {
                *slot = code % NUM_TAGS;
                code /= NUM_TAGS;
            }
            p
        })
    }

    /// Maximum by score; among exact ties the path that is smallest when
    /// read from the last position backwards.
    fn brute_force(l: &Lattice) -> (Vec<usize>, f64, f64) {
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut scores = Vec::new();
        for p in all_paths(l.len()) {
            let s = l.path_score(&p);
            scores.push(s);
            let better = match &best {
                None => true,
                Some((bp, bs)) => s > *bs || (s == *bs && p.iter().rev().lt(bp.iter().rev())),
            };
            if better {
                best = Some((p, s));
            }
        }
        let (p, s) = best.unwrap();
        (p, s, logsumexp(&scores))
    }

    #[test]
    fn matches_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..120 {
            let n = 1 + trial % 5;
            // every third lattice uses values in {-1, 0, 1} so exact ties occur
            let l = random_lattice(&mut rng, n, trial % 3 == 0);
            let (bp, bs, blz) = brute_force(&l);
            let (vp, vs) = l.viterbi();
            assert!((vs - bs).abs() < 1e-9, "trial {trial}: {vs} vs {bs}");
            assert_eq!(vp, bp, "trial {trial}");
            assert!((l.log_partition() - blz).abs() < 1e-8, "trial {trial}");
        }
    }

    #[test]
    fn zero_lattice() {
        let l = Lattice {
            emissions: vec![[0.0; NUM_TAGS]; 4],
            transitions: [[0.0; NUM_TAGS]; NUM_TAGS],
            start: [0.0; NUM_TAGS],
            end: [0.0; NUM_TAGS],
        };
        assert!((l.log_partition() - 4.0 * 9f64.ln()).abs() < 1e-12);
        assert_eq!(l.viterbi().0, vec![0; 4]);
    }

    #[test]
    fn marginals_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=6 {
            let l = random_lattice(&mut rng, n, false);
            let m = l.marginals();
            assert!((m.log_partition - l.log_partition()).abs() < 1e-12);
            for row in &m.unary {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            for (t, pair) in m.pairwise.iter().enumerate() {
                for i in 0..NUM_TAGS {
                    let left: f64 = pair[i].iter().sum();
                    assert!((left - m.unary[t][i]).abs() < 1e-8);
                    let right: f64 = (0..NUM_TAGS).map(|k| pair[k][i]).sum();
                    assert!((right - m.unary[t + 1][i]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn emission_shift_keeps_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let l = random_lattice(&mut rng, 4, false);
            let mut shifted = l.clone();
            let pos = rng.gen_range(0..4);
            let c = rng.gen_range(-10.0..10.0);
            shifted.emissions[pos].iter_mut().for_each(|e| *e += c);
            for p in all_paths(4).step_by(97) {
                assert!((shifted.path_score(&p) - l.path_score(&p) - c).abs() < 1e-9);
            }
            assert_eq!(shifted.viterbi().0, l.viterbi().0);
        }
    }

    #[test]
    fn partition_bounds_every_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = random_lattice(&mut rng, 3, false);
        let lz = l.log_partition();
        assert!(all_paths(3).all(|p| l.path_score(&p) <= lz));
    }
}
