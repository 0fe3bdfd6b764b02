use super::{ChartError, Dir, DmvScores, Valence};
use crate::scalar::ChartScalar;

/// Score plus tie-break keys: among equal scores the tree with the smaller
/// sum of head indices wins, then the one with the smaller total arc length.
#[derive(Clone, Copy, Debug)]
struct Best<S> {
    score: S,
    head_sum: usize,
    len_sum: usize,
}

impl<S: ChartScalar> Best<S> {
    fn none() -> Self {
        Best {
            score: S::neg_infinity(),
            head_sum: usize::MAX,
            len_sum: usize::MAX,
        }
    }

    fn beats(&self, other: &Best<S>) -> bool {
        let (a, b) = (self.score.re(), other.score.re());
        if a != b {
            return a > b;
        }
        (self.head_sum, self.len_sum) < (other.head_sum, other.len_sum)
    }

    fn join(self, o: Best<S>) -> Best<S> {
        Best {
            score: self.score + o.score,
            head_sum: self.head_sum.saturating_add(o.head_sum),
            len_sum: self.len_sum.saturating_add(o.len_sum),
        }
    }

    fn plus(self, s: S) -> Best<S> {
        Best { score: self.score + s, ..self }
    }

    fn leaf(s: S) -> Best<S> {
        Best {
            score: s,
            head_sum: 0,
            len_sum: 0,
        }
    }
}

struct Table<S> {
    m1: usize,
    best: Vec<Best<S>>,
    back: Vec<usize>,
}

impl<S: ChartScalar> Table<S> {
    fn new(m1: usize) -> Self {
        Table {
            m1,
            best: vec![Best::none(); m1 * m1],
            back: vec![0; m1 * m1],
        }
    }

    fn get(&self, a: usize, b: usize) -> Best<S> {
        self.best[a * self.m1 + b]
    }

    fn offer(&mut self, a: usize, b: usize, cand: Best<S>, bp: usize) {
        let i = a * self.m1 + b;
        if cand.beats(&self.best[i]) {
            self.best[i] = cand;
            self.back[i] = bp;
        }
    }

    fn bp(&self, a: usize, b: usize) -> usize {
        self.back[a * self.m1 + b]
    }
}

/// Highest-scoring projective tree and its score.
///
/// Ties are resolved deterministically: smaller sum of head indices first,
/// then smaller total arc length, then the first candidate in split order.
pub fn viterbi<S: ChartScalar>(scores: &DmvScores<S>) -> Result<(Vec<usize>, S), ChartError> {
    let n = scores.len();
    if n == 0 {
        return Err(ChartError::EmptySentence);
    }
    let m1 = n + 1;
    let mut open_r = Table::new(m1);
    let mut open_l = Table::new(m1);
    let mut sealed_r = Table::new(m1);
    let mut sealed_l = Table::new(m1);
    let mut inc_r = Table::new(m1);
    let mut inc_l = Table::new(m1);
    for h in 1..=n {
        open_r.offer(h, h, Best::leaf(S::zero()), h);
        open_l.offer(h, h, Best::leaf(S::zero()), h);
        sealed_r.offer(h, h, Best::leaf(scores.stop(h, Dir::Right, Valence::Adjacent)), h);
        sealed_l.offer(h, h, Best::leaf(scores.stop(h, Dir::Left, Valence::Adjacent)), h);
    }
    for w in 1..n {
        for i in 1..=n - w {
            let j = i + w;
            let arc_key = |h: usize, d: usize| Best {
                score: S::zero(),
                head_sum: h,
                len_sum: h.abs_diff(d),
            };
            for m in i..j {
                let v = Valence::from_has_dependents(m != i);
                let cand = open_r
                    .get(i, m)
                    .join(sealed_l.get(j, m + 1))
                    .join(arc_key(i, j))
                    .plus(scores.arc(i, j, v));
                inc_r.offer(i, j, cand, m);
            }
            for m in i..j {
                let v = Valence::from_has_dependents(m + 1 != j);
                let cand = sealed_r
                    .get(i, m)
                    .join(open_l.get(j, m + 1))
                    .join(arc_key(j, i))
                    .plus(scores.arc(j, i, v));
                inc_l.offer(j, i, cand, m);
            }
            for d in i + 1..=j {
                let cand = inc_r.get(i, d).join(sealed_r.get(d, j));
                open_r.offer(i, j, cand, d);
            }
            for d in i..j {
                let cand = sealed_l.get(d, i).join(inc_l.get(j, d));
                open_l.offer(j, i, cand, d);
            }
            let o = open_r.get(i, j);
            sealed_r.offer(i, j, o.plus(scores.stop(i, Dir::Right, Valence::NonAdjacent)), j);
            let o = open_l.get(j, i);
            sealed_l.offer(j, i, o.plus(scores.stop(j, Dir::Left, Valence::NonAdjacent)), i);
        }
    }
    let mut best = Best::none();
    let mut root = 0;
    for h in 1..=n {
        let cand = sealed_l
            .get(h, 1)
            .join(sealed_r.get(h, n))
            .plus(scores.root(h) + scores.attach(0, h));
        if cand.beats(&best) {
            best = cand;
            root = h;
        }
    }
    if root == 0 {
        // every tree has probability zero; fall back to the first candidate
        root = 1;
        best.score = S::neg_infinity();
    }

    let mut heads = vec![0usize; n];
    heads[root - 1] = 0;
    #[derive(Clone, Copy)]
    enum Item {
        OpenR(usize, usize),
        OpenL(usize, usize),
        SealedR(usize, usize),
        SealedL(usize, usize),
        IncR(usize, usize),
        IncL(usize, usize),
    }
    let mut stack = vec![Item::SealedL(root, 1), Item::SealedR(root, n)];
    while let Some(item) = stack.pop() {
        match item {
            Item::SealedR(h, j) => stack.push(Item::OpenR(h, j)),
            Item::SealedL(h, i) => stack.push(Item::OpenL(h, i)),
            Item::OpenR(h, j) => {
                if h != j {
                    let d = open_r.bp(h, j);
                    stack.push(Item::IncR(h, d));
                    stack.push(Item::SealedR(d, j));
                }
            }
            Item::OpenL(h, i) => {
                if h != i {
                    let d = open_l.bp(h, i);
                    stack.push(Item::IncL(h, d));
                    stack.push(Item::SealedL(d, i));
                }
            }
            Item::IncR(h, d) => {
                heads[d - 1] = h;
                let m = inc_r.bp(h, d);
                stack.push(Item::OpenR(h, m));
                stack.push(Item::SealedL(d, m + 1));
            }
            Item::IncL(h, d) => {
                heads[d - 1] = h;
                let m = inc_l.bp(h, d);
                stack.push(Item::SealedR(d, m));
                stack.push(Item::OpenL(h, m + 1));
            }
        }
    }
    Ok((heads, best.score))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token() {
        let mut s = DmvScores::<f64>::zeros(1).unwrap();
        s.set_root(1, -0.5);
        s.set_stop(1, Dir::Left, Valence::Adjacent, -0.25);
        s.set_stop(1, Dir::Right, Valence::Adjacent, -0.125);
        let (heads, score) = viterbi(&s).unwrap();
        assert_eq!(heads, vec![0]);
        assert_eq!(score, -0.875);
    }

    #[test]
    fn two_token_example() {
        let mut s = DmvScores::<f64>::zeros(2).unwrap();
        s.set_attach(1, 2, 2f64.ln());
        let (heads, score) = viterbi(&s).unwrap();
        assert_eq!(heads, vec![0, 1]);
        assert!((score - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn all_zero_tie_break() {
        let s = DmvScores::<f64>::zeros(3).unwrap();
        let (heads, score) = viterbi(&s).unwrap();
        assert_eq!(heads, vec![0, 1, 1]);
        assert_eq!(score, 0.0);
    }
}
