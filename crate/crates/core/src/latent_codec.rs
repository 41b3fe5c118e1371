//! Lossless toy temporal codec.
//!
//! Four consecutive frames are flattened into one latent token. The standard
//! layout compresses a lone first frame into its own token (replicated four
//! times so every token has the same width); the uniform layout is obtained by
//! duplicating frame 0, encoding with the standard layout and dropping the
//! first token, so that every token derives from exactly four source frames.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Frames per latent token.
pub const CHUNK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FrameShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl FrameShape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    /// Number of scalars in one frame.
    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Width of a latent token built from frames of this shape.
    pub const fn token_dim(&self) -> usize {
        CHUNK * self.len()
    }
}

impl std::fmt::Display for FrameShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// One H x W x C frame stored row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame<T> {
    shape: FrameShape,
    data: Vec<T>,
}

impl<T: Scalar> Frame<T> {
    pub fn new(shape: FrameShape, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::shape("positive frame dimensions", shape));
        }
        if data.len() != shape.len() {
            return Err(Error::shape(format!("{} values for {shape}", shape.len()), data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: FrameShape, value: T) -> Self {
        Self { shape, data: vec![value; shape.len()] }
    }

    /// A 1x1x1 frame.
    pub fn scalar(value: T) -> Self {
        Self::filled(FrameShape::new(1, 1, 1), value)
    }

    /// Single-channel frame from an H x W plane.
    pub fn from_plane(plane: &Matrix<T>) -> Result<Self> {
        Self::new(FrameShape::new(plane.rows(), plane.cols(), 1), plane.as_slice().to_vec())
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.shape.width + x) * self.shape.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        let i = (y * self.shape.width + x) * self.shape.channels + c;
        self.data[i] = v;
    }

    /// Extracts channel `c` as an H x W plane.
    pub fn plane(&self, c: usize) -> Matrix<T> {
        Matrix::from_fn(self.shape.height, self.shape.width, |y, x| self.get(y, x, c))
    }

    /// Channel-averaged H x W plane.
    pub fn luminance(&self) -> Matrix<T> {
        let n = T::from_usize_lossy(self.shape.channels);
        Matrix::from_fn(self.shape.height, self.shape.width, |y, x| {
            (0..self.shape.channels).map(|c| self.get(y, x, c)).sum::<T>() / n
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Clamps every value into the pixel range [0, 1].
    pub fn clamp_unit(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|&v| v >= T::zero() && v <= T::one())
    }
}

/// Ordered, non-empty sequence of equally shaped frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSeq<T> {
    shape: FrameShape,
    frames: Vec<Frame<T>>,
}

impl<T: Scalar> FrameSeq<T> {
    pub fn new(frames: Vec<Frame<T>>) -> Result<Self> {
        let shape = frames.first().ok_or_else(|| Error::shape("at least one frame", 0))?.shape;
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.shape != shape) {
            return Err(Error::shape(format!("frame shape {shape}"), format!("frame {i} with shape {}", f.shape)));
        }
        Ok(Self { shape, frames })
    }

    /// Sequence of 1x1x1 frames, handy for hand traces.
    pub fn from_scalars(values: &[T]) -> Result<Self> {
        Self::new(values.iter().map(|&v| Frame::scalar(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn frames(&self) -> &[Frame<T>] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &Frame<T> {
        &self.frames[i]
    }

    pub fn into_frames(self) -> Vec<Frame<T>> {
        self.frames
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Frame<T>> {
        self.frames.iter()
    }

    /// Frames `range` as a new sequence.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::shape(format!("non-empty range within 0..{}", self.len()), format!("{range:?}")));
        }
        Self::new(self.frames[range].to_vec())
    }

    pub fn map(&self, f: impl Fn(T) -> T + Copy) -> Self {
        Self { shape: self.shape, frames: self.frames.iter().map(|fr| fr.map(f)).collect() }
    }

    pub fn in_unit_range(&self) -> bool {
        self.frames.iter().all(Frame::in_unit_range)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layout {
    /// `1 + T/4` tokens; token 0 holds the lone first frame.
    Standard,
    /// `L/4` tokens, each from four consecutive source frames.
    Uniform,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::Standard => "standard",
            Layout::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Layout::Standard),
            "uniform" => Ok(Layout::Uniform),
            other => Err(Error::Parse(format!("unknown layout `{other}`"))),
        }
    }
}

/// Ordered sequence of equal-width latent tokens.
///
/// `frame_shape` is present when the tokens came from (or decode to) frames;
/// it is required by the decoders and by fields that look inside a token.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSeq<T> {
    dim: usize,
    layout: Layout,
    frame_shape: Option<FrameShape>,
    tokens: Vec<Vec<T>>,
}

impl<T: Scalar> LatentSeq<T> {
    pub fn new(tokens: Vec<Vec<T>>, layout: Layout) -> Result<Self> {
        let dim = tokens.first().ok_or_else(|| Error::shape("at least one token", 0))?.len();
        if dim == 0 {
            return Err(Error::shape("tokens of positive width", 0));
        }
        if let Some((i, t)) = tokens.iter().enumerate().find(|(_, t)| t.len() != dim) {
            return Err(Error::shape(format!("token width {dim}"), format!("token {i} of width {}", t.len())));
        }
        Ok(Self { dim, layout, frame_shape: None, tokens })
    }

    pub fn zeros(len: usize, dim: usize, layout: Layout) -> Result<Self> {
        Self::new(vec![vec![T::zero(); dim]; len], layout)
    }

    /// Attaches the frame shape the tokens were stacked from.
    pub fn with_frame_shape(mut self, shape: FrameShape) -> Result<Self> {
        if shape.token_dim() != self.dim {
            return Err(Error::shape(format!("token width {} for frames {shape}", shape.token_dim()), self.dim));
        }
        self.frame_shape = Some(shape);
        Ok(self)
    }

    /// The token the standard layout builds for a lone frame: the frame stacked four times.
    pub fn lone_frame_token(frame: &Frame<T>) -> Vec<T> {
        let mut tok = Vec::with_capacity(frame.shape().token_dim());
        for _ in 0..CHUNK {
            tok.extend_from_slice(frame.as_slice());
        }
        tok
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn frame_shape(&self) -> Option<FrameShape> {
        self.frame_shape
    }

    pub fn tokens(&self) -> &[Vec<T>] {
        &self.tokens
    }

    pub fn token(&self, i: usize) -> &[T] {
        &self.tokens[i]
    }

    pub fn token_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.tokens[i]
    }

    pub fn into_tokens(self) -> Vec<Vec<T>> {
        self.tokens
    }

    /// Same metadata, tokens replaced; widths must match.
    pub fn with_tokens(&self, tokens: Vec<Vec<T>>) -> Result<Self> {
        let mut out = Self::new(tokens, self.layout)?;
        if out.dim != self.dim {
            return Err(Error::shape(format!("token width {}", self.dim), out.dim));
        }
        out.frame_shape = self.frame_shape;
        Ok(out)
    }

    pub fn relabel(mut self, layout: Layout) -> Self {
        self.layout = layout;
        self
    }

    /// Tokens at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::shape(format!("indices below {}", self.len()), bad));
        }
        self.with_tokens(indices.iter().map(|&i| self.tokens[i].clone()).collect())
    }

    /// Writes `src` token k to position `indices[k]`.
    pub fn scatter(&mut self, indices: &[usize], src: &Self) -> Result<()> {
        if indices.len() != src.len() || src.dim != self.dim {
            return Err(Error::shape(
                format!("{} tokens of width {}", indices.len(), self.dim),
                format!("{} tokens of width {}", src.len(), src.dim),
            ));
        }
        for (&i, tok) in indices.iter().zip(&src.tokens) {
            if i >= self.len() {
                return Err(Error::shape(format!("indices below {}", self.len()), i));
            }
            self.tokens[i].copy_from_slice(tok);
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.len() == other.len() && self.dim == other.dim
    }

    pub(crate) fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(
                format!("{} tokens of width {}", self.len(), self.dim),
                format!("{} tokens of width {}", other.len(), other.dim),
            ))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let mut out = self.clone();
        for tok in &mut out.tokens {
            for v in tok.iter_mut() {
                *v = f(*v);
            }
        }
        out
    }

    /// Elementwise combination; shapes must agree.
    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other)?;
        let mut out = self.clone();
        for (a, b) in out.tokens.iter_mut().zip(&other.tokens) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = f(*x, y);
            }
        }
        Ok(out)
    }

    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.tokens.iter().flat_map(|t| t.iter().copied())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

fn stack_frames<T: Scalar>(frames: &[Frame<T>]) -> Vec<T> {
    frames.iter().flat_map(|f| f.as_slice().iter().copied()).collect()
}

/// Standard (lone first frame) encoding of `1 + T` frames, `T` divisible by 4.
pub fn encode_standard<T: Scalar>(video: &FrameSeq<T>) -> Result<LatentSeq<T>> {
    let n = video.len();
    if n < 1 + CHUNK || !(n - 1).is_multiple_of(CHUNK) {
        return Err(Error::shape(
            format!("1 + 4k frames with k >= 1 (e.g. {})", 1 + CHUNK * ((n.max(1) - 1) / CHUNK).max(1)),
            n,
        ));
    }
    let frames = video.frames();
    let mut tokens = Vec::with_capacity(1 + (n - 1) / CHUNK);
    tokens.push(LatentSeq::lone_frame_token(&frames[0]));
    tokens.extend(frames[1..].chunks(CHUNK).map(stack_frames));
    LatentSeq::new(tokens, Layout::Standard)?.with_frame_shape(video.shape())
}

/// Uniform encoding of `L` frames, `L` divisible by 4: duplicate frame 0,
/// encode with the standard layout, drop the first token.
pub fn encode_uniform<T: Scalar>(video: &FrameSeq<T>) -> Result<LatentSeq<T>> {
    let n = video.len();
    if n < CHUNK || !n.is_multiple_of(CHUNK) {
        return Err(Error::shape("a positive multiple of 4 frames", n));
    }
    let mut padded = Vec::with_capacity(n + 1);
    padded.push(video.frame(0).clone());
    padded.extend_from_slice(video.frames());
    let standard = encode_standard(&FrameSeq::new(padded)?)?;
    let shape = video.shape();
    let tokens = standard.into_tokens().into_iter().skip(1).collect();
    LatentSeq::new(tokens, Layout::Uniform)?.with_frame_shape(shape)
}

fn decode_shape<T: Scalar>(latents: &LatentSeq<T>) -> Result<FrameShape> {
    latents.frame_shape().ok_or_else(|| Error::shape("latents with a known frame shape", "latents without frame shape"))
}

fn unstack<T: Scalar>(token: &[T], shape: FrameShape, out: &mut Vec<Frame<T>>) {
    for chunk in token.chunks(shape.len()) {
        out.push(Frame { shape, data: chunk.to_vec() });
    }
}

/// Inverse of [`encode_standard`]: token 0 yields one frame, every later token four.
pub fn decode_standard<T: Scalar>(latents: &LatentSeq<T>) -> Result<FrameSeq<T>> {
    if latents.layout() != Layout::Standard {
        return Err(Error::LayoutMismatch { expected: "standard", actual: latents.layout().name() });
    }
    let shape = decode_shape(latents)?;
    let mut frames = Vec::with_capacity(1 + CHUNK * (latents.len() - 1));
    frames.push(Frame { shape, data: latents.token(0)[..shape.len()].to_vec() });
    for tok in &latents.tokens()[1..] {
        unstack(tok, shape, &mut frames);
    }
    FrameSeq::new(frames)
}

/// Inverse of [`encode_uniform`]: duplicate token 0, decode with the standard
/// layout, drop the first frame.
pub fn decode_uniform<T: Scalar>(latents: &LatentSeq<T>) -> Result<FrameSeq<T>> {
    if latents.layout() != Layout::Uniform {
        return Err(Error::LayoutMismatch { expected: "uniform", actual: latents.layout().name() });
    }
    let shape = decode_shape(latents)?;
    let mut tokens = Vec::with_capacity(latents.len() + 1);
    tokens.push(latents.token(0).to_vec());
    tokens.extend(latents.tokens().iter().cloned());
    let standard = LatentSeq::new(tokens, Layout::Standard)?.with_frame_shape(shape)?;
    let frames = decode_standard(&standard)?.into_frames().into_iter().skip(1).collect();
    FrameSeq::new(frames)
}
