//! Projective dependency chart parsing under the dependency model with
//! valence (DMV).
//!
//! A tree's score is the sum of
//! * `root[r] + attach[0][r]` for the single token `r` attached to ROOT,
//! * `attach[h][d] + attach_val[h][d][v] + cont[h][dir][v]` for every arc,
//!   where `v` is adjacent for the dependent nearest to `h` on that side, and
//! * `stop[h][dir][v]` once per head and direction, `v` being adjacent iff the
//!   head took no dependent on that side.
//!
//! All tables are log-space. The algorithms are split-head Eisner
//! recursions, O(n³) in sentence length.

mod enumerate;
mod inside;
mod viterbi;

pub use enumerate::{enumerate_projective_trees, MAX_ENUMERATION_LEN};
pub use inside::{arc_posteriors, expected_counts, inside, Chart};
pub use viterbi::viterbi;

use thiserror::Error;

use crate::scalar::ChartScalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dir {
    Left = 0,
    Right = 1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Valence {
    Adjacent = 0,
    NonAdjacent = 1,
}

impl Valence {
    pub fn from_has_dependents(has: bool) -> Self {
        if has {
            Valence::NonAdjacent
        } else {
            Valence::Adjacent
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChartError {
    #[error("sentence length must be at least 1")]
    EmptySentence,
    #[error("score table `{table}` has {got} entries, expected {expected} for n = {n}")]
    Dimension {
        table: &'static str,
        got: usize,
        expected: usize,
        n: usize,
    },
    #[error("tree enumeration limited to n <= {max}, got {n}")]
    TooLong { n: usize, max: usize },
    #[error("head array of length {got} does not match n = {n}")]
    HeadLength { got: usize, n: usize },
}

/// Log-scores of every DMV decision for one sentence of length `n`.
///
/// Heads are indexed `0..=n` with 0 the artificial ROOT, dependents `1..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DmvScores<S> {
    n: usize,
    attach: Vec<S>,
    attach_val: Vec<S>,
    stop: Vec<S>,
    cont: Vec<S>,
    root: Vec<S>,
}

impl<S: ChartScalar> DmvScores<S> {
    /// All-zero scores: every tree scores 0.
    pub fn zeros(n: usize) -> Result<Self, ChartError> {
        if n == 0 {
            return Err(ChartError::EmptySentence);
        }
        let m = n + 1;
        Ok(DmvScores {
            n,
            attach: vec![S::zero(); m * m],
            attach_val: vec![S::zero(); m * m * 2],
            stop: vec![S::zero(); m * 4],
            cont: vec![S::zero(); m * 4],
            root: vec![S::zero(); m],
        })
    }

    /// Builds scores from flat row-major tables with the layouts
    /// `attach[(n+1)·(n+1)]`, `attach_val[(n+1)·(n+1)·2]`,
    /// `stop/cont[(n+1)·2·2]` (head, dir, valence) and `root[n+1]` (entry 0
    /// ignored).
    pub fn from_tables(
        n: usize,
        attach: Vec<S>,
        attach_val: Vec<S>,
        stop: Vec<S>,
        cont: Vec<S>,
        root: Vec<S>,
    ) -> Result<Self, ChartError> {
        if n == 0 {
            return Err(ChartError::EmptySentence);
        }
        let m = n + 1;
        for (table, got, expected) in [
            ("attach", attach.len(), m * m),
            ("attach_val", attach_val.len(), m * m * 2),
            ("stop", stop.len(), m * 4),
            ("cont", cont.len(), m * 4),
            ("root", root.len(), m),
        ] {
            if got != expected {
                return Err(ChartError::Dimension {
                    table,
                    got,
                    expected,
                    n,
                });
            }
        }
        Ok(DmvScores {
            n,
            attach,
            attach_val,
            stop,
            cont,
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn ai(&self, h: usize, d: usize) -> usize {
        h * (self.n + 1) + d
    }

    #[inline]
    fn dvi(h: usize, dir: Dir, val: Valence) -> usize {
        h * 4 + dir as usize * 2 + val as usize
    }

    #[inline]
    pub fn attach(&self, h: usize, d: usize) -> S {
        self.attach[self.ai(h, d)]
    }

    #[inline]
    pub fn attach_val(&self, h: usize, d: usize, val: Valence) -> S {
        self.attach_val[self.ai(h, d) * 2 + val as usize]
    }

    /// Total score of arc `h → d` when attached with valence `val`,
    /// including the continue decision that precedes it.
    #[inline]
    pub fn arc(&self, h: usize, d: usize, val: Valence) -> S {
        let dir = if d < h { Dir::Left } else { Dir::Right };
        self.attach(h, d) + self.attach_val(h, d, val) + self.cont(h, dir, val)
    }

    #[inline]
    pub fn stop(&self, h: usize, dir: Dir, val: Valence) -> S {
        self.stop[Self::dvi(h, dir, val)]
    }

    #[inline]
    pub fn cont(&self, h: usize, dir: Dir, val: Valence) -> S {
        self.cont[Self::dvi(h, dir, val)]
    }

    #[inline]
    pub fn root(&self, d: usize) -> S {
        self.root[d]
    }

    pub fn set_attach(&mut self, h: usize, d: usize, x: S) {
        let i = self.ai(h, d);
        self.attach[i] = x;
    }

    pub fn set_attach_val(&mut self, h: usize, d: usize, val: Valence, x: S) {
        let i = self.ai(h, d) * 2 + val as usize;
        self.attach_val[i] = x;
    }

    pub fn set_stop(&mut self, h: usize, dir: Dir, val: Valence, x: S) {
        self.stop[Self::dvi(h, dir, val)] = x;
    }

    pub fn set_cont(&mut self, h: usize, dir: Dir, val: Valence, x: S) {
        self.cont[Self::dvi(h, dir, val)] = x;
    }

    pub fn set_root(&mut self, d: usize, x: S) {
        self.root[d] = x;
    }

    pub fn attach_table(&self) -> &[S] {
        &self.attach
    }

    pub fn attach_val_table(&self) -> &[S] {
        &self.attach_val
    }

    pub fn stop_table(&self) -> &[S] {
        &self.stop
    }

    pub fn cont_table(&self) -> &[S] {
        &self.cont
    }

    pub fn root_table(&self) -> &[S] {
        &self.root
    }

    /// Applies `f` to every entry, e.g. to promote precision.
    pub fn map<T: ChartScalar>(&self, f: impl Fn(S) -> T) -> DmvScores<T> {
        DmvScores {
            n: self.n,
            attach: self.attach.iter().map(|&x| f(x)).collect(),
            attach_val: self.attach_val.iter().map(|&x| f(x)).collect(),
            stop: self.stop.iter().map(|&x| f(x)).collect(),
            cont: self.cont.iter().map(|&x| f(x)).collect(),
            root: self.root.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Score of one tree given as a 1-based head array.
    pub fn score_tree(&self, heads: &[usize]) -> Result<S, ChartError> {
        let n = self.n;
        if heads.len() != n {
            return Err(ChartError::HeadLength { got: heads.len(), n });
        }
        let mut total = S::zero();
        for d in 1..=n {
            if heads[d - 1] == 0 {
                total += self.root(d) + self.attach(0, d);
            }
        }
        for h in 1..=n {
            // left dependents nearest-first
            let left: Vec<usize> = (1..h).rev().filter(|&d| heads[d - 1] == h).collect();
            let right: Vec<usize> = (h + 1..=n).filter(|&d| heads[d - 1] == h).collect();
            for (dir, deps) in [(Dir::Left, left), (Dir::Right, right)] {
                for (k, &d) in deps.iter().enumerate() {
                    total += self.arc(h, d, Valence::from_has_dependents(k > 0));
                }
                total += self.stop(h, dir, Valence::from_has_dependents(!deps.is_empty()));
            }
        }
        Ok(total)
    }
}

/// Expected number of times each DMV decision fires; equivalently the
/// gradient of the log partition function. Same layout as [`DmvScores`].
pub type DmvCounts<S> = DmvScores<S>;

/// Square `(n+1)×(n+1)` matrix of arc marginals `P[h][d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArcPosteriors<S> {
    n: usize,
    p: Vec<S>,
}

impl<S: ChartScalar> ArcPosteriors<S> {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, h: usize, d: usize) -> S {
        self.p[h * (self.n + 1) + d]
    }

    /// Row-major flat view, ROOT row first.
    pub fn as_slice(&self) -> &[S] {
        &self.p
    }
}
