use super::{ArcPosteriors, ChartError, Dir, DmvCounts, DmvScores, Valence};
use crate::scalar::{logsumexp, ChartScalar};

/// Inside tables of the split-head DMV recursion.
///
/// Every table is `(n+1)×(n+1)` indexed `[head][far end]`:
/// * `open_*` – a head's half-constituent on one side, not yet stopped,
/// * `sealed_*` – the same after the stop decision,
/// * `inc_*` – an incomplete item `[head][dep]` right after the arc is built.
#[derive(Clone, Debug)]
pub struct Chart<S> {
    n: usize,
    open_r: Vec<S>,
    open_l: Vec<S>,
    sealed_r: Vec<S>,
    sealed_l: Vec<S>,
    inc_r: Vec<S>,
    inc_l: Vec<S>,
    log_partition: S,
}

impl<S: ChartScalar> Chart<S> {
    pub fn log_partition(&self) -> S {
        self.log_partition
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn ix(&self, a: usize, b: usize) -> usize {
        a * (self.n + 1) + b
    }

    /// Inside score of the sealed full constituent headed by `h`.
    pub fn sealed_span(&self, h: usize) -> S {
        self.sealed_l[self.ix(h, 1)] + self.sealed_r[self.ix(h, self.n)]
    }
}

fn val_at(m: usize, h: usize) -> Valence {
    Valence::from_has_dependents(m != h)
}

/// Runs the inside pass; `log_partition` is the log-sum over all projective
/// single-root trees of their scores.
pub fn inside<S: ChartScalar>(scores: &DmvScores<S>) -> Result<Chart<S>, ChartError> {
    let n = scores.len();
    if n == 0 {
        return Err(ChartError::EmptySentence);
    }
    let m1 = n + 1;
    let ninf = S::neg_infinity();
    let mut c = Chart {
        n,
        open_r: vec![ninf; m1 * m1],
        open_l: vec![ninf; m1 * m1],
        sealed_r: vec![ninf; m1 * m1],
        sealed_l: vec![ninf; m1 * m1],
        inc_r: vec![ninf; m1 * m1],
        inc_l: vec![ninf; m1 * m1],
        log_partition: ninf,
    };
    let ix = |a: usize, b: usize| a * m1 + b;
    for h in 1..=n {
        c.open_r[ix(h, h)] = S::zero();
        c.open_l[ix(h, h)] = S::zero();
        c.sealed_r[ix(h, h)] = scores.stop(h, Dir::Right, Valence::Adjacent);
        c.sealed_l[ix(h, h)] = scores.stop(h, Dir::Left, Valence::Adjacent);
    }
    let mut buf: Vec<S> = Vec::with_capacity(n);
    for w in 1..n {
        for i in 1..=n - w {
            let j = i + w;
            // arc i -> j
            buf.clear();
            for m in i..j {
                let v = val_at(m, i);
                buf.push(c.open_r[ix(i, m)] + scores.arc(i, j, v) + c.sealed_l[ix(j, m + 1)]);
            }
            c.inc_r[ix(i, j)] = logsumexp(&buf);
            // arc j -> i
            buf.clear();
            for m in i..j {
                let v = val_at(m + 1, j);
                buf.push(c.sealed_r[ix(i, m)] + c.open_l[ix(j, m + 1)] + scores.arc(j, i, v));
            }
            c.inc_l[ix(j, i)] = logsumexp(&buf);

            buf.clear();
            for d in i + 1..=j {
                buf.push(c.inc_r[ix(i, d)] + c.sealed_r[ix(d, j)]);
            }
            c.open_r[ix(i, j)] = logsumexp(&buf);
            buf.clear();
            for d in i..j {
                buf.push(c.sealed_l[ix(d, i)] + c.inc_l[ix(j, d)]);
            }
            c.open_l[ix(j, i)] = logsumexp(&buf);

            c.sealed_r[ix(i, j)] = c.open_r[ix(i, j)] + scores.stop(i, Dir::Right, Valence::NonAdjacent);
            c.sealed_l[ix(j, i)] = c.open_l[ix(j, i)] + scores.stop(j, Dir::Left, Valence::NonAdjacent);
        }
    }
    buf.clear();
    for h in 1..=n {
        buf.push(scores.root(h) + scores.attach(0, h) + c.sealed_span(h));
    }
    c.log_partition = logsumexp(&buf);
    Ok(c)
}

struct Adjoint<S> {
    counts: DmvCounts<S>,
    open_r: Vec<S>,
    open_l: Vec<S>,
    sealed_r: Vec<S>,
    sealed_l: Vec<S>,
    inc_r: Vec<S>,
    inc_l: Vec<S>,
}

/// `exp(term − total) · upstream`, zero when the parent item is unreachable.
#[inline]
fn share<S: ChartScalar>(term: S, total: S, upstream: S) -> S {
    if total.is_neg_infinite() || term.is_neg_infinite() {
        S::zero()
    } else {
        (term - total).exp() * upstream
    }
}

/// Log partition plus the expected count of every decision, computed by
/// reverse-mode differentiation of the inside recursion.
pub fn expected_counts<S: ChartScalar>(scores: &DmvScores<S>) -> Result<(S, DmvCounts<S>), ChartError> {
    let c = inside(scores)?;
    let n = c.n;
    let m1 = n + 1;
    let ix = |a: usize, b: usize| a * m1 + b;
    let zero = S::zero();
    let mut g = Adjoint {
        counts: DmvScores::zeros(n)?,
        open_r: vec![zero; m1 * m1],
        open_l: vec![zero; m1 * m1],
        sealed_r: vec![zero; m1 * m1],
        sealed_l: vec![zero; m1 * m1],
        inc_r: vec![zero; m1 * m1],
        inc_l: vec![zero; m1 * m1],
    };
    let z = c.log_partition;
    for h in 1..=n {
        let term = scores.root(h) + scores.attach(0, h) + c.sealed_span(h);
        let w = share(term, z, S::one());
        g.counts.root[h] += w;
        let a = g.counts.ai(0, h);
        g.counts.attach[a] += w;
        g.sealed_l[ix(h, 1)] += w;
        g.sealed_r[ix(h, n)] += w;
    }
    for w in (1..n).rev() {
        for i in (1..=n - w).rev() {
            let j = i + w;
            let a = g.sealed_l[ix(j, i)];
            g.open_l[ix(j, i)] += a;
            g.counts.stop[DmvScores::<S>::dvi(j, Dir::Left, Valence::NonAdjacent)] += a;
            let a = g.sealed_r[ix(i, j)];
            g.open_r[ix(i, j)] += a;
            g.counts.stop[DmvScores::<S>::dvi(i, Dir::Right, Valence::NonAdjacent)] += a;

            let up = g.open_l[ix(j, i)];
            let tot = c.open_l[ix(j, i)];
            for d in i..j {
                let s = share(c.sealed_l[ix(d, i)] + c.inc_l[ix(j, d)], tot, up);
                g.sealed_l[ix(d, i)] += s;
                g.inc_l[ix(j, d)] += s;
            }
            let up = g.open_r[ix(i, j)];
            let tot = c.open_r[ix(i, j)];
            for d in i + 1..=j {
                let s = share(c.inc_r[ix(i, d)] + c.sealed_r[ix(d, j)], tot, up);
                g.inc_r[ix(i, d)] += s;
                g.sealed_r[ix(d, j)] += s;
            }

            let up = g.inc_l[ix(j, i)];
            let tot = c.inc_l[ix(j, i)];
            for m in i..j {
                let v = val_at(m + 1, j);
                let s = share(c.sealed_r[ix(i, m)] + c.open_l[ix(j, m + 1)] + scores.arc(j, i, v), tot, up);
                g.sealed_r[ix(i, m)] += s;
                g.open_l[ix(j, m + 1)] += s;
                add_arc(&mut g.counts, j, i, v, s);
            }
            let up = g.inc_r[ix(i, j)];
            let tot = c.inc_r[ix(i, j)];
            for m in i..j {
                let v = val_at(m, i);
                let s = share(c.open_r[ix(i, m)] + scores.arc(i, j, v) + c.sealed_l[ix(j, m + 1)], tot, up);
                g.open_r[ix(i, m)] += s;
                g.sealed_l[ix(j, m + 1)] += s;
                add_arc(&mut g.counts, i, j, v, s);
            }
        }
    }
    for h in 1..=n {
        let a = g.sealed_r[ix(h, h)];
        g.counts.stop[DmvScores::<S>::dvi(h, Dir::Right, Valence::Adjacent)] += a;
        let a = g.sealed_l[ix(h, h)];
        g.counts.stop[DmvScores::<S>::dvi(h, Dir::Left, Valence::Adjacent)] += a;
    }
    Ok((z, g.counts))
}

fn add_arc<S: ChartScalar>(counts: &mut DmvCounts<S>, h: usize, d: usize, v: Valence, s: S) {
    let dir = if d < h { Dir::Left } else { Dir::Right };
    let a = counts.ai(h, d);
    counts.attach[a] += s;
    counts.attach_val[a * 2 + v as usize] += s;
    counts.cont[DmvScores::<S>::dvi(h, dir, v)] += s;
}

/// Marginal probability of every arc `h → d` (row 0 is ROOT).
pub fn arc_posteriors<S: ChartScalar>(scores: &DmvScores<S>) -> Result<ArcPosteriors<S>, ChartError> {
    let (_, counts) = expected_counts(scores)?;
    Ok(ArcPosteriors {
        n: counts.n,
        p: counts.attach,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::enumerate_projective_trees;
    use crate::scalar::Dual;

    fn brute_log_partition(s: &DmvScores<f64>) -> f64 {
        let scores: Vec<f64> = enumerate_projective_trees(s.len())
            .unwrap()
            .iter()
            .map(|h| s.score_tree(h).unwrap())
            .collect();
        logsumexp(&scores)
    }

    #[test]
    fn trivial_partitions() {
        let s = DmvScores::<f64>::zeros(1).unwrap();
        assert_eq!(inside(&s).unwrap().log_partition(), 0.0);
        let s = DmvScores::<f64>::zeros(3).unwrap();
        assert!((inside(&s).unwrap().log_partition() - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_token_weighted_example() {
        let mut s = DmvScores::<f64>::zeros(2).unwrap();
        s.set_attach(1, 2, 2f64.ln());
        let z = inside(&s).unwrap().log_partition();
        assert!((z - 3f64.ln()).abs() < 1e-12);
        let p = arc_posteriors(&s).unwrap();
        assert!((p.get(1, 2) - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.get(2, 1) - 1.0 / 3.0).abs() < 1e-12);
        assert!((p.get(0, 1) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_scores_symmetric_posteriors() {
        let s = DmvScores::<f64>::zeros(2).unwrap();
        let p = arc_posteriors(&s).unwrap();
        for (h, d) in [(0, 1), (0, 2), (1, 2), (2, 1)] {
            assert!((p.get(h, d) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn handles_impossible_decisions() {
        // token 1 may never stop on the right without a dependent
        let mut s = DmvScores::<f64>::zeros(3).unwrap();
        s.set_stop(1, Dir::Right, Valence::Adjacent, f64::NEG_INFINITY);
        s.set_root(2, f64::NEG_INFINITY);
        s.set_root(3, f64::NEG_INFINITY);
        let z = inside(&s).unwrap().log_partition();
        assert!((z - brute_log_partition(&s)).abs() < 1e-12);
        let (_, counts) = expected_counts(&s).unwrap();
        assert!(counts.attach_table().iter().all(|x| x.is_finite()));
        assert!((counts.root(1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expected_counts_match_finite_differences() {
        let mut s = DmvScores::<f64>::zeros(4).unwrap();
        let mut k = 0.37f64;
        let mut next = || {
            k = (k * 7.13 + 0.61).fract();
            k * 2.0 - 1.0
        };
        for h in 0..=4 {
            for d in 1..=4 {
                s.set_attach(h, d, next());
                s.set_attach_val(h, d, Valence::NonAdjacent, next());
            }
        }
        for h in 1..=4 {
            s.set_root(h, next());
            for dir in [Dir::Left, Dir::Right] {
                for v in [Valence::Adjacent, Valence::NonAdjacent] {
                    s.set_stop(h, dir, v, next());
                    s.set_cont(h, dir, v, next());
                }
            }
        }
        let (_, counts) = expected_counts(&s).unwrap();
        let eps = 1e-6;
        let z = |s: &DmvScores<f64>| inside(s).unwrap().log_partition();
        for h in 1..=4 {
            for dir in [Dir::Left, Dir::Right] {
                for v in [Valence::Adjacent, Valence::NonAdjacent] {
                    let mut up = s.clone();
                    up.set_stop(h, dir, v, s.stop(h, dir, v) + eps);
                    let mut dn = s.clone();
                    dn.set_stop(h, dir, v, s.stop(h, dir, v) - eps);
                    let fd = (z(&up) - z(&dn)) / (2.0 * eps);
                    assert!((fd - counts.stop(h, dir, v)).abs() < 1e-7);
                    let mut up = s.clone();
                    up.set_cont(h, dir, v, s.cont(h, dir, v) + eps);
                    let mut dn = s.clone();
                    dn.set_cont(h, dir, v, s.cont(h, dir, v) - eps);
                    let fd = (z(&up) - z(&dn)) / (2.0 * eps);
                    assert!((fd - counts.cont(h, dir, v)).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn dual_pass_gives_posterior_jacobian() {
        // d/dt P[h][d](attach + t·e_{2,3}) against finite differences of P
        let mut s = DmvScores::<f64>::zeros(3).unwrap();
        s.set_attach(1, 2, 0.3);
        s.set_attach(2, 3, -0.4);
        s.set_attach(3, 1, 0.9);
        s.set_stop(2, Dir::Right, Valence::Adjacent, -0.2);
        let mut dual = s.map(Dual::constant);
        dual.set_attach(2, 3, Dual::new(-0.4, 1.0));
        let pd = arc_posteriors(&dual).unwrap();
        let eps = 1e-6;
        let mut up = s.clone();
        up.set_attach(2, 3, -0.4 + eps);
        let mut dn = s.clone();
        dn.set_attach(2, 3, -0.4 - eps);
        let pu = arc_posteriors(&up).unwrap();
        let pn = arc_posteriors(&dn).unwrap();
        for h in 0..=3 {
            for d in 1..=3 {
                let fd = (pu.get(h, d) - pn.get(h, d)) / (2.0 * eps);
                assert!((fd - pd.get(h, d).du).abs() < 1e-7, "{h} {d}");
            }
        }
    }
}
