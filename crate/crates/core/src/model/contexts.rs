use std::collections::HashMap;

use crate::scalar::Scalar;
use crate::structure::{SecondOrder, SecondOrderPattern};
use crate::tensor::{biaffine_features, mlp, Bound, Var};

use super::forward::layers;
use super::{ModelConfig, Result};

/// A language unit matched against visual nodes. Token indices are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContextKind {
    Token(usize),
    /// `(head, dependent)`
    Arc(usize, usize),
    Second(SecondOrder),
}

impl ContextKind {
    /// The arcs whose posteriors weight this context.
    pub fn arcs(&self) -> Vec<(usize, usize)> {
        match *self {
            ContextKind::Token(_) => vec![],
            ContextKind::Arc(h, d) => vec![(h, d)],
            ContextKind::Second(s) => second_arcs(s).to_vec(),
        }
    }
}

fn second_arcs(s: SecondOrder) -> [(usize, usize); 2] {
    let [a, h, b] = s.tokens;
    match s.pattern {
        SecondOrderPattern::Chain => [(a, h), (h, b)],
        SecondOrderPattern::Siblings => [(h, a), (h, b)],
    }
}

/// Contexts entering the contrastive loss for a sentence of length `n`
/// with row-major arc posteriors `post` (`(n+1)²`): every token, every
/// non-ROOT arc with posterior at least `arc_threshold`, and the chains and
/// sibling pairs built from those arcs whose posterior product reaches
/// `second_threshold`, strongest first, at most `max_second`.
pub fn plan_contexts(n: usize, post: &[f64], cfg: &ModelConfig) -> Vec<ContextKind> {
    let m = n + 1;
    let p = |h: usize, d: usize| post[h * m + d];
    let mut out: Vec<ContextKind> = (1..=n).map(ContextKind::Token).collect();
    let mut arcs = Vec::new();
    for h in 1..=n {
        for d in 1..=n {
            if h != d && p(h, d) >= cfg.arc_threshold {
                arcs.push((h, d));
            }
        }
    }
    out.extend(arcs.iter().map(|&(h, d)| ContextKind::Arc(h, d)));

    let mut second: Vec<(f64, SecondOrder)> = Vec::new();
    for &(h, d) in &arcs {
        for &(h2, d2) in &arcs {
            if h2 == d && d2 != h {
                let s = SecondOrder {
                    tokens: [h, d, d2],
                    pattern: SecondOrderPattern::Chain,
                };
                second.push((p(h, d) * p(d, d2), s));
            }
            if h2 == h && d < d2 {
                let s = SecondOrder {
                    tokens: [d, h, d2],
                    pattern: SecondOrderPattern::Siblings,
                };
                second.push((p(h, d) * p(h, d2), s));
            }
        }
    }
    second.retain(|(w, _)| *w >= cfg.second_threshold);
    second.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    second.truncate(cfg.max_second);
    out.extend(second.into_iter().map(|(_, s)| ContextKind::Second(s)));
    out
}

/// Context vectors `[len(kinds), match_dim]` from fused token vectors
/// `c: [n, E]`, rows in the order of `kinds`. Rows are L2-normalized when
/// the configuration asks for normalized similarities.
pub(crate) fn context_vectors<'g, S: Scalar>(
    b: &Bound<'g, S>,
    cfg: &ModelConfig,
    c: Var<'g, S>,
    kinds: &[ContextKind],
) -> Result<Var<'g, S>> {
    let g = c.graph();
    let tokens: Vec<usize> = kinds
        .iter()
        .filter_map(|k| match k {
            ContextKind::Token(i) => Some(i - 1),
            _ => None,
        })
        .collect();

    let mut arc_ids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut arcs: Vec<(usize, usize)> = Vec::new();
    for k in kinds {
        for a in k.arcs() {
            arc_ids.entry(a).or_insert_with(|| {
                arcs.push(a);
                arcs.len() - 1
            });
        }
    }

    let mut parts = Vec::new();
    let mut order: Vec<usize> = Vec::with_capacity(kinds.len());
    if !tokens.is_empty() {
        parts.push(c.gather_rows(&tokens)?.matmul(b.get("match.c")?)?);
    }
    let mut base = tokens.len();
    let arc_vecs = if arcs.is_empty() {
        None
    } else {
        let par = mlp(c, &layers(b, "ctx.par")?)?;
        let chd = mlp(c, &layers(b, "ctx.chd")?)?;
        let hs: Vec<usize> = arcs.iter().map(|&(h, _)| h - 1).collect();
        let ds: Vec<usize> = arcs.iter().map(|&(_, d)| d - 1).collect();
        Some(biaffine_features(
            par.gather_rows(&hs)?,
            chd.gather_rows(&ds)?,
            b.get("ctx.arc.w1")?,
            b.get("ctx.arc.w2")?,
            b.get("ctx.arc.b")?,
        )?)
    };
    let arc_rows: Vec<usize> = kinds
        .iter()
        .filter_map(|k| match *k {
            ContextKind::Arc(h, d) => Some(arc_ids[&(h, d)]),
            _ => None,
        })
        .collect();
    let seconds: Vec<[usize; 2]> = kinds
        .iter()
        .filter_map(|k| match *k {
            ContextKind::Second(s) => {
                let [x, y] = second_arcs(s);
                Some([arc_ids[&x], arc_ids[&y]])
            }
            _ => None,
        })
        .collect();
    if let Some(av) = arc_vecs {
        if !arc_rows.is_empty() {
            parts.push(av.gather_rows(&arc_rows)?);
        }
        if !seconds.is_empty() {
            let first: Vec<usize> = seconds.iter().map(|p| p[0]).collect();
            let second: Vec<usize> = seconds.iter().map(|p| p[1]).collect();
            let pair = g.concat_cols(&[av.gather_rows(&first)?, av.gather_rows(&second)?])?;
            parts.push(mlp(pair, &layers(b, "ctx.sec")?)?);
        }
    }

    // parts are grouped by kind; map each kind back to its row
    let (mut ti, mut ai, mut si) = (0, 0, 0);
    let n_arc_rows = arc_rows.len();
    for k in kinds {
        order.push(match k {
            ContextKind::Token(_) => {
                ti += 1;
                ti - 1
            }
            ContextKind::Arc(..) => {
                ai += 1;
                base + ai - 1
            }
            ContextKind::Second(_) => {
                si += 1;
                base + n_arc_rows + si - 1
            }
        });
    }
    base += n_arc_rows;
    debug_assert_eq!(base + seconds.len(), kinds.len());
    let mut out = g.concat_rows(&parts)?;
    if order.iter().enumerate().any(|(i, &r)| i != r) {
        out = out.gather_rows(&order)?;
    }
    if cfg.normalize_sim {
        out = out.l2_normalize_rows()?;
    }
    Ok(out)
}

/// Visual nodes projected into the matching space, normalized like the
/// context vectors.
pub(crate) fn project_nodes<'g, S: Scalar>(b: &Bound<'g, S>, cfg: &ModelConfig, nodes: Var<'g, S>) -> Result<Var<'g, S>> {
    let v = nodes.matmul(b.get("match.v")?)?;
    Ok(if cfg.normalize_sim { v.l2_normalize_rows()? } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig::with_dims(4, 4)
    }

    #[test]
    fn plan_keeps_confident_arcs_and_patterns() {
        // tree 2 -> 1, 0 -> 2, 2 -> 3 with certainty
        let n = 3;
        let mut post = vec![0.0; 16];
        post[2 * 4 + 1] = 1.0;
        post[2] = 1.0;
        post[2 * 4 + 3] = 1.0;
        let plan = plan_contexts(n, &post, &cfg());
        assert_eq!(
            plan,
            vec![
                ContextKind::Token(1),
                ContextKind::Token(2),
                ContextKind::Token(3),
                ContextKind::Arc(2, 1),
                ContextKind::Arc(2, 3),
                ContextKind::Second(SecondOrder {
                    tokens: [1, 2, 3],
                    pattern: SecondOrderPattern::Siblings
                }),
            ]
        );
    }

    #[test]
    fn plan_caps_second_order() {
        let n = 4;
        let post = vec![0.5; 25];
        let mut c = cfg();
        c.max_second = 3;
        let plan = plan_contexts(n, &post, &c);
        let second = plan.iter().filter(|k| matches!(k, ContextKind::Second(_))).count();
        assert_eq!(second, 3);
        c.second_threshold = 0.3;
        let plan = plan_contexts(n, &post, &c);
        assert!(plan.iter().all(|k| !matches!(k, ContextKind::Second(_))));
    }
}
