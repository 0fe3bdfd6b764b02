//! Tape operations wrapping the DMV chart: the log partition function and
//! the arc posteriors of a batch of sentences.
//!
//! Scores enter as five flat tensors, each the concatenation over sentences
//! of the corresponding [`DmvScores`] table. Chart math runs in `f64`
//! regardless of the tape's scalar type. The gradient of the log partition
//! is the table of expected counts; the vector-Jacobian product of the
//! posteriors is a Hessian-vector product of the log partition, obtained by
//! running the count pass over dual numbers.

use std::rc::Rc;

use rayon::prelude::*;

use crate::chart::{expected_counts, DmvCounts, DmvScores};
use crate::scalar::{ChartScalar, Dual, Scalar};
use crate::tensor::{CustomOp, Result, Tensor, TensorError, Var};

/// Per-sentence offsets into the flat score tensors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScoreLayout {
    lens: Vec<usize>,
}

/// Sizes of the five tables for a sentence of length `n`, in input order:
/// attach, attach_val, stop, cont, root.
fn table_sizes(n: usize) -> [usize; 5] {
    let m = n + 1;
    [m * m, m * m * 2, m * 4, m * 4, m]
}

impl ScoreLayout {
    pub fn new(lens: Vec<usize>) -> Self {
        ScoreLayout { lens }
    }

    pub fn lens(&self) -> &[usize] {
        &self.lens
    }

    pub fn len(&self) -> usize {
        self.lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lens.is_empty()
    }

    /// Total length of table `t` (0..5) over the batch.
    pub fn total(&self, t: usize) -> usize {
        self.lens.iter().map(|&n| table_sizes(n)[t]).sum()
    }

    /// Start offset of table `t` for sentence `k`.
    pub fn offset(&self, t: usize, k: usize) -> usize {
        self.lens[..k].iter().map(|&n| table_sizes(n)[t]).sum()
    }

    /// Start of sentence `k` in the flat posterior output.
    pub fn posterior_offset(&self, k: usize) -> usize {
        self.offset(0, k)
    }

    fn split<T: Copy>(&self, tables: &[&[T]; 5]) -> Vec<[Vec<T>; 5]> {
        let mut offs = [0usize; 5];
        self.lens
            .iter()
            .map(|&n| {
                let sizes = table_sizes(n);
                std::array::from_fn(|t| {
                    let v = tables[t][offs[t]..offs[t] + sizes[t]].to_vec();
                    offs[t] += sizes[t];
                    v
                })
            })
            .collect()
    }
}

fn op_err(op: &str, e: impl std::fmt::Display) -> TensorError {
    TensorError::Op {
        op: op.to_string(),
        msg: e.to_string(),
    }
}

fn to_scores<T: ChartScalar>(n: usize, t: [Vec<T>; 5]) -> std::result::Result<DmvScores<T>, crate::chart::ChartError> {
    let [a, av, st, co, ro] = t;
    DmvScores::from_tables(n, a, av, st, co, ro)
}

fn count_tables<T: ChartScalar>(c: &DmvCounts<T>) -> [&[T]; 5] {
    [
        c.attach_table(),
        c.attach_val_table(),
        c.stop_table(),
        c.cont_table(),
        c.root_table(),
    ]
}

struct Shared {
    layout: ScoreLayout,
    scores: Vec<DmvScores<f64>>,
    counts: Vec<DmvCounts<f64>>,
}

struct LogPartitionOp(Rc<Shared>);

struct PosteriorOp(Rc<Shared>);

impl<S: Scalar> CustomOp<S> for LogPartitionOp {
    fn name(&self) -> &str {
        "dmv_log_partition"
    }

    fn backward(&self, grad: &Tensor<S>, _: &[Rc<Tensor<S>>], _: &Tensor<S>) -> Result<Vec<Option<Tensor<S>>>> {
        let sh: &Shared = &self.0;
        let mut out: [Vec<S>; 5] = std::array::from_fn(|t| Vec::with_capacity(sh.layout.total(t)));
        for (k, c) in sh.counts.iter().enumerate() {
            let g = grad.data()[k].as_f64();
            for (t, table) in count_tables(c).into_iter().enumerate() {
                out[t].extend(table.iter().map(|&x| S::lit(x * g)));
            }
        }
        Ok(out.into_iter().map(|v| Some(Tensor::vector(v))).collect())
    }
}

impl<S: Scalar> CustomOp<S> for PosteriorOp {
    fn name(&self) -> &str {
        "dmv_arc_posteriors"
    }

    fn backward(&self, grad: &Tensor<S>, _: &[Rc<Tensor<S>>], _: &Tensor<S>) -> Result<Vec<Option<Tensor<S>>>> {
        let sh: &Shared = &self.0;
        let g: Vec<f64> = grad.data().iter().map(|x| x.as_f64()).collect();
        let per: Vec<_> = sh
            .scores
            .par_iter()
            .enumerate()
            .map(|(k, sc)| {
                let off = sh.layout.posterior_offset(k);
                let gk = &g[off..off + sc.attach_table().len()];
                let mut dual = sc.map(Dual::constant);
                let m = sc.len() + 1;
                for h in 0..m {
                    for d in 0..m {
                        let re = sc.attach(h, d);
                        dual.set_attach(h, d, Dual::new(re, gk[h * m + d]));
                    }
                }
                expected_counts(&dual).map(|(_, c)| c)
            })
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| op_err("dmv_arc_posteriors", e))?;
        let per: Vec<DmvCounts<Dual>> = per;
        let mut out: [Vec<S>; 5] = std::array::from_fn(|t| Vec::with_capacity(sh.layout.total(t)));
        for c in &per {
            for (t, table) in count_tables(c).into_iter().enumerate() {
                out[t].extend(table.iter().map(|x| S::lit(x.du)));
            }
        }
        Ok(out.into_iter().map(|v| Some(Tensor::vector(v))).collect())
    }
}

/// Log partition per sentence (`[K]`) and flattened arc posteriors
/// (`[Σ (n_k+1)²]`, row-major per sentence, ROOT row first).
///
/// `inputs` are the flat attach, attach_val, stop, cont and root tables.
pub fn dmv_marginals<'g, S: Scalar>(
    inputs: [Var<'g, S>; 5],
    layout: &ScoreLayout,
) -> Result<(Var<'g, S>, Var<'g, S>)> {
    let vals: Vec<Vec<f64>> = inputs
        .iter()
        .map(|v| v.value().data().iter().map(|x| x.as_f64()).collect())
        .collect();
    for (t, v) in vals.iter().enumerate() {
        if v.len() != layout.total(t) {
            return Err(TensorError::Shape {
                op: "dmv_marginals",
                lhs: vec![v.len()],
                rhs: vec![layout.total(t)],
            });
        }
    }
    let refs: [&[f64]; 5] = std::array::from_fn(|t| vals[t].as_slice());
    let scores = layout
        .split(&refs)
        .into_iter()
        .zip(layout.lens())
        .map(|(t, &n)| to_scores(n, t))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| op_err("dmv_marginals", e))?;
    let results = scores
        .par_iter()
        .map(expected_counts)
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| op_err("dmv_marginals", e))?;
    let mut logz = Vec::with_capacity(results.len());
    let mut post = Vec::with_capacity(layout.total(0));
    let mut counts = Vec::with_capacity(results.len());
    for (z, c) in results {
        logz.push(S::lit(z));
        post.extend(c.attach_table().iter().map(|&x| S::lit(x)));
        counts.push(c);
    }
    let shared = Rc::new(Shared {
        layout: layout.clone(),
        scores,
        counts,
    });
    let g = inputs[0].graph();
    let z = g.custom(&inputs, Tensor::vector(logz), Box::new(LogPartitionOp(shared.clone())))?;
    let p = g.custom(&inputs, Tensor::vector(post), Box::new(PosteriorOp(shared)))?;
    Ok((z, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::arc_posteriors;
    use crate::tensor::Graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(rng: &mut ChaCha8Rng, layout: &ScoreLayout) -> Vec<Tensor<f64>> {
        (0..5)
            .map(|t| Tensor::vector((0..layout.total(t)).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect()
    }

    fn run(vals: &[Tensor<f64>], layout: &ScoreLayout, weights: &[f64]) -> (f64, Vec<Tensor<f64>>) {
        let g = Graph::new();
        let vars: Vec<_> = vals.iter().enumerate().map(|(i, t)| g.param(&format!("t{i}"), t.clone()).unwrap()).collect();
        let (z, p) = dmv_marginals([vars[0], vars[1], vars[2], vars[3], vars[4]], layout).unwrap();
        let w = g.constant(Tensor::vector(weights.to_vec())).unwrap();
        let loss = p.mul(w).unwrap().sum().unwrap().add(z.sum().unwrap()).unwrap();
        let grads = g.backward(loss).unwrap();
        (loss.item(), vars.iter().map(|v| grads.get(*v).unwrap().clone()).collect())
    }

    #[test]
    fn outputs_match_chart() {
        let layout = ScoreLayout::new(vec![3, 1, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals = random_inputs(&mut rng, &layout);
        let g = Graph::new();
        let vars: Vec<_> = vals.iter().map(|t| g.constant(t.clone()).unwrap()).collect();
        let (z, p) = dmv_marginals([vars[0], vars[1], vars[2], vars[3], vars[4]], &layout).unwrap();
        let refs: [&[f64]; 5] = std::array::from_fn(|t| vals[t].data());
        for (k, t) in layout.split(&refs).into_iter().enumerate() {
            let sc = to_scores(layout.lens()[k], t).unwrap();
            let chart = crate::chart::inside(&sc).unwrap();
            assert_eq!(z.value().data()[k], chart.log_partition());
            let post = arc_posteriors(&sc).unwrap();
            let off = layout.posterior_offset(k);
            assert_eq!(&p.value().data()[off..off + post.as_slice().len()], post.as_slice());
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let layout = ScoreLayout::new(vec![3, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let vals = random_inputs(&mut rng, &layout);
        let weights: Vec<f64> = (0..layout.total(0)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, analytic) = run(&vals, &layout, &weights);
        let eps = 1e-5;
        for t in 0..5 {
            for i in 0..vals[t].len() {
                let mut plus = vals.to_vec();
                plus[t].data_mut()[i] += eps;
                let mut minus = vals.to_vec();
                minus[t].data_mut()[i] -= eps;
                let fd = (run(&plus, &layout, &weights).0 - run(&minus, &layout, &weights).0) / (2.0 * eps);
                let an = analytic[t].data()[i];
                assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "table {t} entry {i}: {fd} vs {an}");
            }
        }
    }
}
