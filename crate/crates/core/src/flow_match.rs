//! Rectified-flow objective, velocity fields and the guided Euler sampler.
//!
//! Time runs from pure noise at `t = 0` to data at `t = 1`:
//! `z_t = (1 - t) z0 + t z1`, with target velocity `z1 - z0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::guidance::GuidanceBundle;
use crate::latent_codec::{LatentSeq, Layout};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// What a velocity field is conditioned on besides the noisy latents.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning<T> {
    pub guidance: GuidanceBundle<T>,
    /// Pose latents aligned token-for-token with the latents being denoised.
    pub pose: Option<LatentSeq<T>>,
}

impl<T: Scalar> Conditioning<T> {
    pub fn new(guidance: GuidanceBundle<T>, pose: Option<LatentSeq<T>>) -> Self {
        Self { guidance, pose }
    }

    /// Conditioning for the listed token positions: pose tokens are gathered,
    /// frame codes are sliced four frames per token.
    pub fn slice_tokens(&self, tokens: &[usize]) -> Result<Self> {
        Ok(Self {
            guidance: self.guidance.select_tokens(tokens)?,
            pose: self.pose.as_ref().map(|p| p.gather(tokens)).transpose()?,
        })
    }

    /// Unconditional branch: guidance zeroed, pose kept.
    pub fn unconditional(&self) -> Self {
        Self { guidance: self.guidance.zeroed(), pose: self.pose.clone() }
    }
}

/// `u(z_t, g, t)`: predicted velocity with the shape of `z_t`.
pub trait VelocityField<T: Scalar>: Sync {
    fn velocity(&self, z: &LatentSeq<T>, cond: &Conditioning<T>, t: T) -> Result<LatentSeq<T>>;

    /// True when output token `i` depends only on input token `i` (and `t`, `cond`).
    fn token_local(&self) -> bool;
}

impl<T: Scalar, F: VelocityField<T> + ?Sized> VelocityField<T> for &F {
    fn velocity(&self, z: &LatentSeq<T>, cond: &Conditioning<T>, t: T) -> Result<LatentSeq<T>> {
        (**self).velocity(z, cond, t)
    }

    fn token_local(&self) -> bool {
        (**self).token_local()
    }
}

/// The same vector for every token.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantField<T> {
    pub value: Vec<T>,
}

impl<T: Scalar> VelocityField<T> for ConstantField<T> {
    fn velocity(&self, z: &LatentSeq<T>, _cond: &Conditioning<T>, _t: T) -> Result<LatentSeq<T>> {
        if self.value.len() != z.dim() {
            return Err(Error::shape(format!("token width {}", self.value.len()), z.dim()));
        }
        z.with_tokens(vec![self.value.clone(); z.len()])
    }

    fn token_local(&self) -> bool {
        true
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ZeroField;

impl<T: Scalar> VelocityField<T> for ZeroField {
    fn velocity(&self, z: &LatentSeq<T>, _cond: &Conditioning<T>, _t: T) -> Result<LatentSeq<T>> {
        Ok(z.map(|_| T::zero()))
    }

    fn token_local(&self) -> bool {
        true
    }
}

/// Returns a fixed velocity regardless of input; used as a perfect predictor
/// when `value = z1 - z0`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrescribedField<T> {
    pub value: LatentSeq<T>,
}

impl<T: Scalar> VelocityField<T> for PrescribedField<T> {
    fn velocity(&self, z: &LatentSeq<T>, _cond: &Conditioning<T>, _t: T) -> Result<LatentSeq<T>> {
        z.check_same_shape(&self.value)?;
        Ok(self.value.clone())
    }

    fn token_local(&self) -> bool {
        false
    }
}

/// Token-local affine model `u(z, t) = A z + b t + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineField<T> {
    pub a: Matrix<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
}

/// Gradients of the flow-matching loss with respect to the affine parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineGrad<T> {
    pub a: Matrix<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> AffineField<T> {
    pub fn new(a: Matrix<T>, b: Vec<T>, c: Vec<T>) -> Result<Self> {
        let d = a.rows();
        if d == 0 || a.cols() != d || b.len() != d || c.len() != d {
            return Err(Error::shape(
                format!("A {d}x{d}, b and c of length {d}"),
                format!("A {}x{}, b {}, c {}", a.rows(), a.cols(), b.len(), c.len()),
            ));
        }
        Ok(Self { a, b, c })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { a: Matrix::zeros(dim, dim), b: vec![T::zero(); dim], c: vec![T::zero(); dim] }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn eval_token(&self, z: &[T], t: T) -> Vec<T> {
        let d = self.dim();
        (0..d)
            .map(|i| {
                let row = self.a.row(i);
                let mut acc = T::zero();
                for (&w, &x) in row.iter().zip(z) {
                    acc += w * x;
                }
                acc + self.b[i] * t + self.c[i]
            })
            .collect()
    }

    /// Mean-squared flow-matching loss over a batch of `(z0, z1, t)` token
    /// triples and its analytic gradient.
    ///
    /// With residual `r = u(z_t, t) - (z1 - z0)` and `N` scalar entries:
    /// `dA = (2/N) sum r z_t^T`, `db = (2/N) sum r t`, `dc = (2/N) sum r`.
    pub fn loss_and_grad(&self, batch: &[(Vec<T>, Vec<T>, T)]) -> Result<(T, AffineGrad<T>)> {
        let d = self.dim();
        let mut grad = AffineField::zeros(d);
        if batch.is_empty() {
            return Err(Error::shape("non-empty batch", 0));
        }
        let n = T::from_usize_lossy(batch.len() * d);
        let two_n = T::lit(2.0) / n;
        let mut loss = T::zero();
        for (z0, z1, t) in batch {
            if z0.len() != d || z1.len() != d {
                return Err(Error::shape(format!("tokens of width {d}"), format!("{} and {}", z0.len(), z1.len())));
            }
            let zt: Vec<T> = z0.iter().zip(z1).map(|(&a, &b)| (T::one() - *t) * a + *t * b).collect();
            let u = self.eval_token(&zt, *t);
            for i in 0..d {
                let r = u[i] - (z1[i] - z0[i]);
                loss += r * r;
                let g = two_n * r;
                for (j, &x) in zt.iter().enumerate() {
                    let cur = grad.a.get(i, j);
                    grad.a.set(i, j, cur + g * x);
                }
                grad.b[i] += g * *t;
                grad.c[i] += g;
            }
        }
        Ok((loss / n, AffineGrad { a: grad.a, b: grad.b, c: grad.c }))
    }

    fn apply_step(&mut self, grad: &AffineGrad<T>, lr: T) {
        for (w, &g) in self.a.as_mut_slice().iter_mut().zip(grad.a.as_slice()) {
            *w -= lr * g;
        }
        for (w, &g) in self.b.iter_mut().zip(&grad.b) {
            *w -= lr * g;
        }
        for (w, &g) in self.c.iter_mut().zip(&grad.c) {
            *w -= lr * g;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.iter().chain(&self.c).all(|v| v.is_finite())
    }
}

impl<T: Scalar> VelocityField<T> for AffineField<T> {
    fn velocity(&self, z: &LatentSeq<T>, _cond: &Conditioning<T>, t: T) -> Result<LatentSeq<T>> {
        if z.dim() != self.dim() {
            return Err(Error::shape(format!("token width {}", self.dim()), z.dim()));
        }
        z.with_tokens(z.tokens().iter().map(|tok| self.eval_token(tok, t)).collect())
    }

    fn token_local(&self) -> bool {
        true
    }
}

/// Exact conditional-mean velocity for a Gaussian data distribution
/// `N(mu, sigma^2 I)` per token:
/// `E[z1 - z0 | z_t] = mu + (t s^2 - (1 - t)) / ((1 - t)^2 + t^2 s^2) (z - t mu)`.
///
/// When `mean_from_reference` is set, `mu` is the guidance reference token,
/// which makes the field respond to classifier-free guidance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianOracle<T> {
    pub mean: Vec<T>,
    pub std: T,
    pub mean_from_reference: bool,
}

impl<T: Scalar> GaussianOracle<T> {
    pub fn new(mean: Vec<T>, std: T) -> Self {
        Self { mean, std, mean_from_reference: false }
    }

    pub fn from_reference(dim: usize, std: T) -> Self {
        Self { mean: vec![T::zero(); dim], std, mean_from_reference: true }
    }
}

impl<T: Scalar> VelocityField<T> for GaussianOracle<T> {
    fn velocity(&self, z: &LatentSeq<T>, cond: &Conditioning<T>, t: T) -> Result<LatentSeq<T>> {
        let mu: &[T] = if self.mean_from_reference { cond.guidance.ref_latent.token(0) } else { &self.mean };
        if mu.len() != z.dim() {
            return Err(Error::shape(format!("token width {}", mu.len()), z.dim()));
        }
        let s2 = self.std * self.std;
        let one_t = T::one() - t;
        let den = one_t * one_t + t * t * s2;
        if den <= T::zero() {
            return Err(Error::Domain(format!("Gaussian oracle undefined at t = {t} for std {}", self.std)));
        }
        let gain = (t * s2 - one_t) / den;
        z.with_tokens(
            z.tokens().iter().map(|tok| tok.iter().zip(mu).map(|(&x, &m)| m + gain * (x - t * m)).collect()).collect(),
        )
    }

    fn token_local(&self) -> bool {
        true
    }
}

fn check_t<T: Scalar>(t: T) -> Result<()> {
    if t >= T::zero() && t <= T::one() {
        Ok(())
    } else {
        Err(Error::Domain(format!("t must lie in [0, 1], got {t}")))
    }
}

/// `(1 - t) z0 + t z1`.
pub fn interpolate<T: Scalar>(z0: &LatentSeq<T>, z1: &LatentSeq<T>, t: T) -> Result<LatentSeq<T>> {
    check_t(t)?;
    z0.zip_with(z1, |a, b| (T::one() - t) * a + t * b)
}

/// `z1 - z0`.
pub fn target_velocity<T: Scalar>(z0: &LatentSeq<T>, z1: &LatentSeq<T>) -> Result<LatentSeq<T>> {
    z0.zip_with(z1, |a, b| b - a)
}

/// Mean squared error between the field's prediction at `z_t` and `z1 - z0`.
pub fn fm_loss<T: Scalar, F: VelocityField<T> + ?Sized>(
    field: &F,
    z0: &LatentSeq<T>,
    z1: &LatentSeq<T>,
    cond: &Conditioning<T>,
    t: T,
) -> Result<T> {
    let zt = interpolate(z0, z1, t)?;
    let target = target_velocity(z0, z1)?;
    let pred = field.velocity(&zt, cond, t)?;
    pred.check_same_shape(&target)?;
    let n = T::from_usize_lossy(target.len() * target.dim());
    Ok(pred.values().zip(target.values()).map(|(p, v)| (p - v) * (p - v)).sum::<T>() / n)
}

/// Source of data tokens `z1` for training.
pub trait TrainingData<T: Scalar> {
    fn dim(&self) -> usize;
    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<T>;
}

/// Every draw is the same vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMass<T> {
    pub value: Vec<T>,
}

impl<T: Scalar> TrainingData<T> for PointMass<T> {
    fn dim(&self) -> usize {
        self.value.len()
    }

    fn draw(&self, _rng: &mut ChaCha8Rng) -> Vec<T> {
        self.value.clone()
    }
}

/// Isotropic Gaussian `N(mean, std^2 I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianData<T> {
    pub mean: Vec<T>,
    pub std: T,
}

impl<T: Scalar> TrainingData<T> for GaussianData<T> {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<T> {
        self.mean.iter().map(|&m| m + self.std * T::lit(rng.sample::<f64, _>(StandardNormal))).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions<T> {
    pub steps: usize,
    pub batch: usize,
    pub lr: T,
    pub seed: u64,
}

impl<T: Scalar> Default for TrainOptions<T> {
    fn default() -> Self {
        Self { steps: 3000, batch: 64, lr: T::lit(0.05), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport<T> {
    pub model: AffineField<T>,
    /// Batch loss before each update.
    pub losses: Vec<T>,
}

/// Fits a zero-initialised [`AffineField`] by minibatch SGD on the
/// flow-matching loss, `t ~ U(0, 1)`, `z0 ~ N(0, I)`. The learning rate
/// decays linearly from `opts.lr` to zero over the run.
pub fn train_affine<T: Scalar, D: TrainingData<T> + ?Sized>(
    data: &D,
    opts: &TrainOptions<T>,
) -> Result<TrainReport<T>> {
    if !opts.lr.is_finite() || opts.lr < T::zero() {
        return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", opts.lr)));
    }
    if opts.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let d = data.dim();
    if d == 0 {
        return Err(Error::shape("data of positive width", 0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut model = AffineField::zeros(d);
    let mut losses = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let batch: Vec<_> = (0..opts.batch)
            .map(|_| {
                let z1 = data.draw(&mut rng);
                let z0: Vec<T> = (0..d).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
                // Open interval: reject the (measure-zero) endpoint draw.
                let mut t: f64 = rng.random();
                while t == 0.0 {
                    t = rng.random();
                }
                (z0, z1, T::lit(t))
            })
            .collect();
        let (loss, grad) = model.loss_and_grad(&batch)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }
        losses.push(loss);
        let lr = opts.lr * T::from_usize_lossy(opts.steps - step) / T::from_usize_lossy(opts.steps);
        model.apply_step(&grad, lr);
        if !model.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }
    }
    Ok(TrainReport { model, losses })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig<T> {
    pub steps: usize,
    pub cfg_scale: T,
    pub seed: u64,
}

impl<T: Scalar> SamplerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("sampler needs at least one step".into()));
        }
        if !self.cfg_scale.is_finite() || self.cfg_scale < T::zero() {
            return Err(Error::Config(format!("cfg scale must be finite and >= 0, got {}", self.cfg_scale)));
        }
        Ok(())
    }

    /// `t_k = k / steps`.
    pub fn time(&self, k: usize) -> T {
        T::from_usize_lossy(k) / T::from_usize_lossy(self.steps)
    }

    pub fn step_size(&self) -> T {
        T::one() / T::from_usize_lossy(self.steps)
    }
}

/// `len` tokens of i.i.d. standard normal noise.
pub fn standard_normal_latents<T: Scalar>(len: usize, dim: usize, layout: Layout, seed: u64) -> Result<LatentSeq<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens = (0..len).map(|_| (0..dim).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect()).collect();
    LatentSeq::new(tokens, layout)
}

/// `u_unc + s (u_c - u_unc)`; at `s = 1` only the conditional field is evaluated.
pub fn guided_velocity<T, C, U>(
    cond_field: &C,
    uncond_field: &U,
    z: &LatentSeq<T>,
    cond: &Conditioning<T>,
    t: T,
    scale: T,
) -> Result<LatentSeq<T>>
where
    T: Scalar,
    C: VelocityField<T> + ?Sized,
    U: VelocityField<T> + ?Sized,
{
    let uc = cond_field.velocity(z, cond, t)?;
    uc.check_same_shape(z)?;
    if scale == T::one() {
        return Ok(uc);
    }
    let uu = uncond_field.velocity(z, &cond.unconditional(), t)?;
    uc.zip_with(&uu, |c, u| u + scale * (c - u))
}

/// One Euler update `z + h u`, in place.
pub(crate) fn euler_update<T: Scalar>(z: &mut LatentSeq<T>, u: &LatentSeq<T>, h: T) {
    for i in 0..z.len() {
        for (x, &v) in z.token_mut(i).iter_mut().zip(u.token(i)) {
            *x += h * v;
        }
    }
}

/// Integrates the guided field from `t = 0` to `t = 1` with `cfg.steps` uniform Euler steps.
pub fn euler_sample<T, C, U>(
    cond_field: &C,
    uncond_field: &U,
    z0: &LatentSeq<T>,
    cond: &Conditioning<T>,
    cfg: &SamplerConfig<T>,
) -> Result<LatentSeq<T>>
where
    T: Scalar,
    C: VelocityField<T> + ?Sized,
    U: VelocityField<T> + ?Sized,
{
    cfg.validate()?;
    let h = cfg.step_size();
    let mut z = z0.clone();
    for k in 0..cfg.steps {
        let u = guided_velocity(cond_field, uncond_field, &z, cond, cfg.time(k), cfg.cfg_scale)?;
        euler_update(&mut z, &u, h);
        if !z.is_finite() {
            return Err(Error::NumericOverflow { timestep: k, window: None });
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(tokens: Vec<Vec<f64>>) -> LatentSeq<f64> {
        LatentSeq::new(tokens, Layout::Uniform).unwrap()
    }

    fn cond(dim: usize) -> Conditioning<f64> {
        let r = seq(vec![vec![0.0; dim]]);
        Conditioning::new(GuidanceBundle::reference_only(r, 4).unwrap(), None)
    }

    #[test]
    fn interpolate_examples() {
        let z0 = seq(vec![vec![0.0, 0.0]]);
        let z1 = seq(vec![vec![1.0, 1.0]]);
        assert_eq!(interpolate(&z0, &z1, 0.5).unwrap(), seq(vec![vec![0.5, 0.5]]));
        assert_eq!(interpolate(&z0, &z1, 0.0).unwrap(), z0);
        assert_eq!(interpolate(&z0, &z1, 1.0).unwrap(), z1);
        assert_eq!(interpolate(&seq(vec![vec![2.0]]), &seq(vec![vec![6.0]]), 0.25).unwrap(), seq(vec![vec![3.0]]));
        assert!(matches!(interpolate(&z0, &z1, 1.5), Err(Error::Domain(_))));
        assert!(matches!(interpolate(&z0, &seq(vec![vec![1.0]]), 0.5), Err(Error::InvalidShape { .. })));
    }

    #[test]
    fn target_velocity_examples() {
        let z0 = seq(vec![vec![1.0, 2.0]]);
        let z1 = seq(vec![vec![4.0, 0.0]]);
        assert_eq!(target_velocity(&z0, &z1).unwrap(), seq(vec![vec![3.0, -2.0]]));
        assert_eq!(target_velocity(&z0, &z0).unwrap(), seq(vec![vec![0.0, 0.0]]));
    }

    #[test]
    fn loss_examples() {
        let z0 = seq(vec![vec![0.0; 3]; 2]);
        let z1 = seq(vec![vec![1.0; 3]; 2]);
        assert_eq!(fm_loss(&ZeroField, &z0, &z1, &cond(3), 0.3).unwrap(), 1.0);
        let perfect = PrescribedField { value: target_velocity(&z0, &z1).unwrap() };
        assert_eq!(fm_loss(&perfect, &z0, &z1, &cond(3), 0.7).unwrap(), 0.0);
    }

    #[test]
    fn constant_field_euler_is_exact() {
        let z0 = seq(vec![vec![0.5, -1.0], vec![2.0, 0.25]]);
        let k = ConstantField { value: vec![1.0, -2.0] };
        for steps in [1, 2, 4, 8] {
            let cfg = SamplerConfig { steps, cfg_scale: 1.0, seed: 0 };
            let out = euler_sample(&k, &k, &z0, &cond(2), &cfg).unwrap();
            assert_eq!(out, seq(vec![vec![1.5, -3.0], vec![3.0, -1.75]]));
        }
    }

    #[test]
    fn zero_steps_rejected() {
        let z0 = seq(vec![vec![0.0]]);
        let cfg = SamplerConfig { steps: 0, cfg_scale: 1.0, seed: 0 };
        assert!(matches!(euler_sample(&ZeroField, &ZeroField, &z0, &cond(1), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn overflow_reports_timestep() {
        let z0 = seq(vec![vec![1.0]]);
        let huge = ConstantField { value: vec![f64::MAX] };
        let cfg = SamplerConfig { steps: 1, cfg_scale: 1.0, seed: 0 };
        let err = euler_sample(&huge, &huge, &z0.map(|_| f64::MAX), &cond(1), &cfg).unwrap_err();
        assert!(matches!(err, Error::NumericOverflow { timestep: 0, window: None }));
    }

    #[test]
    fn lr_zero_keeps_initialisation() {
        let data = PointMass { value: vec![1.0, 2.0] };
        let opts = TrainOptions { steps: 20, batch: 4, lr: 0.0, seed: 3 };
        assert_eq!(train_affine(&data, &opts).unwrap().model, AffineField::zeros(2));
    }

    #[test]
    fn divergence_is_reported() {
        let data = PointMass { value: vec![1.0] };
        let opts = TrainOptions { steps: 10_000, batch: 4, lr: 1e6, seed: 3 };
        assert!(matches!(train_affine(&data, &opts), Err(Error::TrainingDiverged { .. })));
    }

    #[test]
    fn oracle_at_start_points_from_noise_to_mean() {
        let o = GaussianOracle::new(vec![3.0], 1.0);
        let z = seq(vec![vec![0.5]]);
        assert_eq!(o.velocity(&z, &cond(1), 0.0).unwrap(), seq(vec![vec![2.5]]));
    }
}
