use super::{Result, Tensor, TensorError, Var};
use crate::scalar::Scalar;

/// `x·W + b` with `W: [in,out]`, `b: [out]`.
#[derive(Clone, Copy, Debug)]
pub struct Affine<'g, S: Scalar> {
    pub w: Var<'g, S>,
    pub b: Var<'g, S>,
}

impl<'g, S: Scalar> Affine<'g, S> {
    pub fn apply(&self, x: Var<'g, S>) -> Result<Var<'g, S>> {
        x.matmul(self.w)?.add_row(self.b)
    }
}

/// Stack of affine layers with ReLU between them (not after the last).
pub fn mlp<'g, S: Scalar>(x: Var<'g, S>, layers: &[Affine<'g, S>]) -> Result<Var<'g, S>> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        h = layer.apply(h)?;
        if i + 1 < layers.len() {
            h = h.relu()?;
        }
    }
    Ok(h)
}

/// Scaled dot-product attention. Returns the attended values `[n,e]` and
/// the attention weights `[n,m]`.
pub fn attention<'g, S: Scalar>(
    q: Var<'g, S>,
    k: Var<'g, S>,
    v: Var<'g, S>,
) -> Result<(Var<'g, S>, Var<'g, S>)> {
    let a = q.shape().last().copied().unwrap_or(1);
    let scale = S::one() / S::count(a).sqrt();
    let weights = q.matmul_t(k)?.scale(scale)?.softmax_rows()?;
    Ok((weights.matmul(v)?, weights))
}

/// `uᵀ·W1·v + (u+v)ᵀ·W2 + b` for plain vectors; `w1` is row-major `r×r`.
pub fn biaffine<S: Scalar>(u: &[S], v: &[S], w1: &[S], w2: &[S], b: S) -> Result<S> {
    let r = u.len();
    if v.len() != r || w2.len() != r || w1.len() != r * r {
        return Err(TensorError::Shape {
            op: "biaffine",
            lhs: vec![u.len(), v.len()],
            rhs: vec![w1.len(), w2.len()],
        });
    }
    let mut out = b;
    for i in 0..r {
        let mut row = S::zero();
        for j in 0..r {
            row += w1[i * r + j] * v[j];
        }
        out += u[i] * row + (u[i] + v[i]) * w2[i];
    }
    Ok(out)
}

fn ones<'g, S: Scalar>(like: Var<'g, S>, n: usize) -> Result<Var<'g, S>> {
    like.graph().constant(Tensor::full(&[n, 1], S::one()))
}

/// All-pairs biaffine scores: `out[i,j] = biaffine(x_i, y_j)` for
/// `x: [n,r]`, `y: [m,r]`, `w1: [r,r]`, `w2: [r]`, `b: [1]`.
pub fn biaffine_table<'g, S: Scalar>(
    x: Var<'g, S>,
    y: Var<'g, S>,
    w1: Var<'g, S>,
    w2: Var<'g, S>,
    b: Var<'g, S>,
) -> Result<Var<'g, S>> {
    let (n, m) = (x.shape()[0], y.shape()[0]);
    let r = w2.shape().first().copied().unwrap_or(0);
    let (on, om) = (ones(x, n)?, ones(x, m)?);
    let w2 = w2.reshape(&[r, 1])?;
    let bil = x.matmul(w1)?.matmul_t(y)?;
    let lx = x.matmul(w2)?.matmul_t(om)?;
    let ly = on.matmul_t(y.matmul(w2)?)?;
    let bias = on.matmul(b.reshape(&[1, 1])?)?.matmul_t(om)?;
    bil.add(lx)?.add(ly)?.add(bias)
}

/// Row-wise vector-valued biaffine: for each row `i` and output `o`,
/// `out[i,o] = x_iᵀ·W1[o]·y_i + (x_i+y_i)ᵀ·W2[:,o] + b[o]`, with
/// `w1: [O,r,r]`, `w2: [r,O]`, `b: [O]`.
pub fn biaffine_features<'g, S: Scalar>(
    x: Var<'g, S>,
    y: Var<'g, S>,
    w1: Var<'g, S>,
    w2: Var<'g, S>,
    b: Var<'g, S>,
) -> Result<Var<'g, S>> {
    x.bilinear(y, w1)?.add(x.add(y)?.matmul(w2)?)?.add_row(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn biaffine_arithmetic() {
        let got = biaffine(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0, 0.0, 0.0], &[2.0, 3.0], 0.5).unwrap();
        assert_eq!(got, 6.5);
        let c = biaffine(&[0.3, -2.0], &[1.5, 0.1], &[0.0; 4], &[0.0; 2], 1.25).unwrap();
        assert_eq!(c, 1.25);
        assert!(biaffine(&[1.0], &[1.0, 2.0], &[0.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn batched_biaffine_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut r = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (n, m, d, o) = (3, 4, 2, 3);
        let (x, y, w1, w2, b) = (r(n * d), r(m * d), r(d * d), r(d), r(1));
        let g = Graph::new();
        let c = |shape: &[usize], v: &Vec<f64>| g.constant(Tensor::new(shape.to_vec(), v.clone()).unwrap()).unwrap();
        let table = biaffine_table(c(&[n, d], &x), c(&[m, d], &y), c(&[d, d], &w1), c(&[d], &w2), c(&[1], &b))
            .unwrap()
            .value();
        for i in 0..n {
            for j in 0..m {
                let want = biaffine(&x[i * d..(i + 1) * d], &y[j * d..(j + 1) * d], &w1, &w2, b[0]).unwrap();
                assert!((table.at(i, j) - want).abs() < 1e-12);
            }
        }

        let (y2, w1o, w2o, bo) = (r(n * d), r(o * d * d), r(d * o), r(o));
        let feats = biaffine_features(c(&[n, d], &x), c(&[n, d], &y2), c(&[o, d, d], &w1o), c(&[d, o], &w2o), c(&[o], &bo))
            .unwrap()
            .value();
        for i in 0..n {
            for k in 0..o {
                let w2k: Vec<f64> = (0..d).map(|a| w2o[a * o + k]).collect();
                let want = biaffine(
                    &x[i * d..(i + 1) * d],
                    &y2[i * d..(i + 1) * d],
                    &w1o[k * d * d..(k + 1) * d * d],
                    &w2k,
                    bo[k],
                )
                .unwrap();
                assert!((feats.at(i, k) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_properties() {
        let g = Graph::<f64>::new();
        let q = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 5.0]]).unwrap()).unwrap();
        let k = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap()).unwrap();
        let v = g.constant(Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap()).unwrap();
        let (_, w) = attention(q, k, v).unwrap();
        let w = w.value();
        for r in 0..2 {
            assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // one key: output is exactly its value
        let k1 = g.constant(Tensor::from_rows(&[vec![3.0, -1.0]]).unwrap()).unwrap();
        let v1 = g.constant(Tensor::from_rows(&[vec![0.25, 7.0]]).unwrap()).unwrap();
        let (out, _) = attention(q, k1, v1).unwrap();
        assert_eq!(out.value().data(), &[0.25, 7.0, 0.25, 7.0]);
    }

    #[test]
    fn identity_mlp_passes_nonnegative_input() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_rows(&[vec![0.0, 1.5, 2.0]]).unwrap()).unwrap();
        let layer = Affine {
            w: g.constant(Tensor::identity(3)).unwrap(),
            b: g.constant(Tensor::zeros(&[3])).unwrap(),
        };
        let y = mlp(x, &[layer, layer]).unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }
}
