use crate::chart::{expected_counts, DmvScores};
use crate::scalar::Scalar;
use crate::tensor::{Bound, Tensor, Var};

use super::contexts::{context_vectors, plan_contexts, project_nodes, ContextKind};
use super::forward::BatchForward;
use super::{Model, ModelError, Result};

/// Loss values of one batch; `total` is the differentiable objective.
pub struct LossValues<'g, S: Scalar> {
    pub total: Var<'g, S>,
    pub mle: f64,
    /// `None` when the contrastive term was not computed.
    pub contrastive: Option<f64>,
}

/// Mean negative log marginal likelihood of the batch.
pub fn mle_loss<'g, S: Scalar>(fwd: &BatchForward<'g, S>) -> Result<Var<'g, S>> {
    let k = fwd.layout.len();
    Ok(fwd.log_partition.sum()?.scale(S::lit(-1.0 / k as f64))?)
}

/// Posterior-weighted contrastive loss. Each context of a sentence is scored
/// against every image of the batch by its best-matching visual node, the
/// score is multiplied by the context's posterior, and the sentence's own
/// image must win a softmax over images.
pub fn contrastive_loss<'g, S: Scalar>(
    model: &Model<S>,
    b: &Bound<'g, S>,
    fwd: &BatchForward<'g, S>,
) -> Result<Var<'g, S>> {
    let images = fwd.nodes.len();
    if images < 2 {
        return Err(ModelError::BatchTooSmall(images));
    }
    let cfg = &model.config;
    let g = fwd.summary.graph();
    let projected = fwd
        .nodes
        .iter()
        .map(|(v, _)| project_nodes(b, cfg, *v))
        .collect::<Result<Vec<_>>>()?;
    let mut terms = Vec::with_capacity(fwd.layout.len());
    for (k, c) in fwd.contexts.iter().enumerate() {
        let n = fwd.layout.lens()[k];
        let kinds = plan_contexts(n, &fwd.posterior(k), cfg);
        let vectors = context_vectors(b, cfg, *c, &kinds)?;
        let nc = kinds.len();

        // p = a·(b + arc) + tok: 1 for tokens, P(h,d) for arcs, the product of
        // the two arc posteriors for second-order contexts
        let off = fwd.layout.posterior_offset(k);
        let at = |(h, d): (usize, usize)| Some(off + h * (n + 1) + d);
        let mut first = Vec::with_capacity(nc);
        let mut second = Vec::with_capacity(nc);
        let mut arc_one = Vec::with_capacity(nc);
        let mut tok_one = Vec::with_capacity(nc);
        for kind in &kinds {
            let arcs = kind.arcs();
            first.push(arcs.first().and_then(|&a| at(a)));
            second.push(arcs.get(1).and_then(|&a| at(a)));
            arc_one.push(if matches!(kind, ContextKind::Arc(..)) { S::one() } else { S::zero() });
            tok_one.push(if matches!(kind, ContextKind::Token(_)) { S::one() } else { S::zero() });
        }
        let pa = fwd.posteriors.gather(&first, &[nc])?;
        let pb = fwd.posteriors.gather(&second, &[nc])?;
        let weight = pa
            .mul(pb.add(g.constant(Tensor::vector(arc_one))?)?)?
            .add(g.constant(Tensor::vector(tok_one))?)?;

        let cols = projected
            .iter()
            .map(|v| {
                let best = vectors.matmul_t(*v)?.max_rows()?;
                best.reshape(&[nc, 1])
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let sims = g.concat_cols(&cols)?.scale_rows(weight)?.log_softmax_rows()?;
        let own: Vec<Option<usize>> = (0..nc).map(|r| Some(r * images + fwd.image_of[k])).collect();
        terms.push(sims.gather(&own, &[nc])?.sum()?);
    }
    let mut total = terms[0];
    for t in &terms[1..] {
        total = total.add(*t)?;
    }
    Ok(total.scale(S::lit(-1.0 / terms.len() as f64))?)
}

/// `(1 − λ)·L_mle + λ·L_cl`. The contrastive term is skipped at `λ = 0` and
/// the likelihood term at `λ = 1`.
pub fn total_loss<'g, S: Scalar>(
    model: &Model<S>,
    b: &Bound<'g, S>,
    fwd: &BatchForward<'g, S>,
    lambda: f64,
) -> Result<LossValues<'g, S>> {
    combine(model, b, fwd, lambda, mle_loss(fwd)?)
}

/// Cross-entropy of the decoder against the expected counts of a harmonic
/// initializer (attachment log-score `−ln|h − d|`), used for warm-up in
/// place of the likelihood term.
pub fn harmonic_warmup_loss<'g, S: Scalar>(fwd: &BatchForward<'g, S>) -> Result<Var<'g, S>> {
    let mut targets: [Vec<S>; 5] = Default::default();
    for &n in fwd.layout.lens() {
        let mut h = DmvScores::<f64>::zeros(n)?;
        for head in 1..=n {
            for d in 1..=n {
                if head != d {
                    h.set_attach(head, d, -((head as f64 - d as f64).abs().ln()));
                }
            }
        }
        let (_, c) = expected_counts(&h)?;
        for (t, table) in [
            c.attach_table(),
            c.attach_val_table(),
            c.stop_table(),
            c.cont_table(),
            c.root_table(),
        ]
        .into_iter()
        .enumerate()
        {
            targets[t].extend(table.iter().map(|&x| S::lit(x)));
        }
    }
    let g = fwd.summary.graph();
    let mut total: Option<Var<'g, S>> = None;
    for (t, target) in targets.into_iter().enumerate().skip(1) {
        let term = fwd.scores[t].mul(g.constant(Tensor::vector(target))?)?.sum()?;
        total = Some(match total {
            Some(x) => x.add(term)?,
            None => term,
        });
    }
    let k = fwd.layout.len() as f64;
    Ok(total.expect("four tables").scale(S::lit(-1.0 / k))?)
}

/// Warm-up objective `(1 − λ)·L_warm + λ·L_cl`.
pub fn warmup_total_loss<'g, S: Scalar>(
    model: &Model<S>,
    b: &Bound<'g, S>,
    fwd: &BatchForward<'g, S>,
    lambda: f64,
) -> Result<LossValues<'g, S>> {
    combine(model, b, fwd, lambda, harmonic_warmup_loss(fwd)?)
}

fn combine<'g, S: Scalar>(
    model: &Model<S>,
    b: &Bound<'g, S>,
    fwd: &BatchForward<'g, S>,
    lambda: f64,
    first: Var<'g, S>,
) -> Result<LossValues<'g, S>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ModelError::Lambda(lambda));
    }
    let k = fwd.layout.len() as f64;
    let mle = -fwd.log_partition.value().data().iter().map(|x| x.as_f64()).sum::<f64>() / k;
    if lambda == 0.0 {
        return Ok(LossValues {
            total: first,
            mle,
            contrastive: None,
        });
    }
    let cl = contrastive_loss(model, b, fwd)?;
    let total = if lambda == 1.0 {
        cl
    } else {
        first.scale(S::lit(1.0 - lambda))?.add(cl.scale(S::lit(lambda))?)?
    };
    Ok(LossValues {
        total,
        mle,
        contrastive: Some(cl.item().as_f64()),
    })
}
