use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Single-head cross-attention projections.
///
/// Tokens (`n x d`) attend over codes (`t x c`):
/// `out = X + softmax(X Wq (C Wk)^T / sqrt(dk)) (C Wv) Wo`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttnParams<T> {
    /// `d x dk`
    pub w_q: Matrix<T>,
    /// `c x dk`
    pub w_k: Matrix<T>,
    /// `c x dv`
    pub w_v: Matrix<T>,
    /// `dv x d`
    pub w_o: Matrix<T>,
}

impl<T: Scalar> CrossAttnParams<T> {
    pub fn new(w_q: Matrix<T>, w_k: Matrix<T>, w_v: Matrix<T>, w_o: Matrix<T>) -> Result<Self> {
        let (d, dk) = w_q.shape();
        let (c, dk2) = w_k.shape();
        let (c2, dv) = w_v.shape();
        let (dv2, d2) = w_o.shape();
        if dk != dk2 || c != c2 || dv != dv2 || d != d2 || d == 0 || c == 0 || dk == 0 || dv == 0 {
            return Err(Error::shape(
                "Wq d x dk, Wk c x dk, Wv c x dv, Wo dv x d",
                format!("Wq {d}x{dk}, Wk {c}x{dk2}, Wv {c2}x{dv}, Wo {dv2}x{d2}"),
            ));
        }
        Ok(Self { w_q, w_k, w_v, w_o })
    }

    /// Gaussian initialisation with `1/sqrt(fan_in)` scale, `dk = dv = d`.
    pub fn random(model_width: usize, code_width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = model_width;
        let sd = T::one() / T::from_usize_lossy(d).sqrt();
        let sc = T::one() / T::from_usize_lossy(code_width).sqrt();
        Self {
            w_q: Matrix::random_normal(d, d, sd, &mut rng),
            w_k: Matrix::random_normal(code_width, d, sc, &mut rng),
            w_v: Matrix::random_normal(code_width, d, sc, &mut rng),
            w_o: Matrix::random_normal(d, d, sd, &mut rng),
        }
    }

    pub fn model_width(&self) -> usize {
        self.w_q.rows()
    }

    pub fn code_width(&self) -> usize {
        self.w_k.rows()
    }

    pub fn key_width(&self) -> usize {
        self.w_q.cols()
    }
}

/// Forward result with the intermediates the backward pass needs.
#[derive(Clone, Debug)]
pub struct AttentionOutput<T> {
    pub output: Matrix<T>,
    /// `n x t` attention weights; each row sums to one.
    pub weights: Matrix<T>,
    queries: Matrix<T>,
    keys: Matrix<T>,
    values: Matrix<T>,
    attended: Matrix<T>,
}

#[derive(Clone, Debug)]
pub struct CrossAttnGrads<T> {
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
    pub w_o: Matrix<T>,
    pub tokens: Matrix<T>,
    pub codes: Matrix<T>,
}

fn softmax_rows<T: Scalar>(scores: &Matrix<T>) -> Matrix<T> {
    let mut out = scores.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Residual single-head cross-attention of `tokens` over `codes`.
pub fn cross_attention<T: Scalar>(
    tokens: &Matrix<T>,
    codes: &Matrix<T>,
    params: &CrossAttnParams<T>,
) -> Result<AttentionOutput<T>> {
    if tokens.cols() != params.model_width() {
        return Err(Error::shape(format!("tokens of width {}", params.model_width()), tokens.cols()));
    }
    if codes.cols() != params.code_width() || codes.rows() == 0 {
        return Err(Error::shape(
            format!("at least one code row of width {}", params.code_width()),
            format!("{}x{}", codes.rows(), codes.cols()),
        ));
    }
    let scale = T::one() / T::from_usize_lossy(params.key_width()).sqrt();
    let queries = tokens.matmul(&params.w_q)?;
    let keys = codes.matmul(&params.w_k)?;
    let values = codes.matmul(&params.w_v)?;
    let scores = queries.matmul(&keys.transpose())?.map(|s| s * scale);
    let weights = softmax_rows(&scores);
    let attended = weights.matmul(&values)?;
    let output = tokens.zip_with(&attended.matmul(&params.w_o)?, |x, y| x + y)?;
    Ok(AttentionOutput { output, weights, queries, keys, values, attended })
}

/// Gradients of a scalar loss given `upstream = dL/d(output)`.
pub fn cross_attention_backward<T: Scalar>(
    tokens: &Matrix<T>,
    codes: &Matrix<T>,
    params: &CrossAttnParams<T>,
    forward: &AttentionOutput<T>,
    upstream: &Matrix<T>,
) -> Result<CrossAttnGrads<T>> {
    if upstream.shape() != forward.output.shape() {
        return Err(Error::shape(format!("{:?}", forward.output.shape()), format!("{:?}", upstream.shape())));
    }
    let scale = T::one() / T::from_usize_lossy(params.key_width()).sqrt();
    let a = &forward.weights;

    let d_w_o = forward.attended.transpose().matmul(upstream)?;
    let d_attended = upstream.matmul(&params.w_o.transpose())?;
    let d_weights = d_attended.matmul(&forward.values.transpose())?;
    let d_values = a.transpose().matmul(&d_attended)?;

    // Softmax Jacobian, row by row.
    let mut d_scores = Matrix::zeros(a.rows(), a.cols());
    for r in 0..a.rows() {
        let dot: T = a.row(r).iter().zip(d_weights.row(r)).map(|(&p, &g)| p * g).sum();
        for c in 0..a.cols() {
            d_scores.set(r, c, a.get(r, c) * (d_weights.get(r, c) - dot) * scale);
        }
    }
    let d_queries = d_scores.matmul(&forward.keys)?;
    let d_keys = d_scores.transpose().matmul(&forward.queries)?;

    let d_w_q = tokens.transpose().matmul(&d_queries)?;
    let d_w_k = codes.transpose().matmul(&d_keys)?;
    let d_w_v = codes.transpose().matmul(&d_values)?;
    let d_tokens = upstream.zip_with(&d_queries.matmul(&params.w_q.transpose())?, |a, b| a + b)?;
    let d_codes =
        d_keys.matmul(&params.w_k.transpose())?.zip_with(&d_values.matmul(&params.w_v.transpose())?, |a, b| a + b)?;
    Ok(CrossAttnGrads { w_q: d_w_q, w_k: d_w_k, w_v: d_w_v, w_o: d_w_o, tokens: d_tokens, codes: d_codes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_code_row_takes_all_weight() {
        let p = CrossAttnParams::<f64>::random(4, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_matrix(5, 4, &mut rng);
        let code = rand_matrix(1, 3, &mut rng);
        let fwd = cross_attention(&x, &code, &p).unwrap();
        assert!(fwd.weights.as_slice().iter().all(|&w| w == 1.0));
        let injected = code.matmul(&p.w_v).unwrap().matmul(&p.w_o).unwrap();
        for r in 0..5 {
            for c in 0..4 {
                assert!((fwd.output.get(r, c) - x.get(r, c) - injected.get(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_value_projection_is_residual_only() {
        let mut p = CrossAttnParams::<f64>::random(4, 3, 7);
        p.w_v = Matrix::zeros(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_matrix(3, 4, &mut rng);
        let codes = rand_matrix(6, 3, &mut rng);
        assert_eq!(cross_attention(&x, &codes, &p).unwrap().output, x);
    }

    #[test]
    fn hand_computed_two_by_two() {
        // Identity projections, dk = 2: scores = X C^T / sqrt(2).
        let id = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = CrossAttnParams::new(id.clone(), id.clone(), id.clone(), id).unwrap();
        let x = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let codes = Matrix::new(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let fwd = cross_attention(&x, &codes, &p).unwrap();
        // Row 0 scores (2/sqrt2, 0) -> weight e^{sqrt2}/(e^{sqrt2}+1).
        let w0 = 2f64.sqrt().exp() / (2f64.sqrt().exp() + 1.0);
        // Row 1 scores (0, 1/sqrt2).
        let w1 = 1.0 / (1.0 + (1.0 / 2f64.sqrt()).exp());
        let expected = [1.0 + 2.0 * w0, 1.0 - w0, 2.0 * w1, 1.0 + (1.0 - w1)];
        for (got, want) in fwd.output.as_slice().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = CrossAttnParams::<f64>::random(4, 3, 1);
        assert!(cross_attention(&Matrix::zeros(2, 5), &Matrix::zeros(2, 3), &p).is_err());
        assert!(cross_attention(&Matrix::zeros(2, 4), &Matrix::zeros(2, 2), &p).is_err());
        assert!(CrossAttnParams::new(
            Matrix::<f64>::zeros(4, 2),
            Matrix::zeros(3, 3),
            Matrix::zeros(3, 4),
            Matrix::zeros(4, 4)
        )
        .is_err());
    }
}
