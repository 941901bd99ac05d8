//! Dense row-major f64 arrays plus the deterministic random source used by
//! every stochastic piece of the crate (shuffling, dropout, weight init,
//! augmentation).

use crate::error::{Error, Result};

/// Dense N-dimensional array of `f64` values with an explicit shape.
///
/// Data is stored row-major; for feature stacks the dimension order is
/// `(maps, rows, cols)`. The element count always equals the product of the
/// shape entries, every shape entry is at least 1, and all stored values are
/// finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Geometry {
                op: "tensor_new",
                msg: format!("shape entries must be >= 1, got {shape:?}"),
            });
        }
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::ShapeMismatch {
                op: "tensor_new",
                left: shape,
                right: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor_new"));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Rank-1 tensor from a flat vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Rank-2 tensor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Geometry {
                op: "from_rows",
                msg: "ragged rows".into(),
            });
        }
        Tensor::new(vec![r, c], rows.concat())
    }

    /// The identity matrix of side `n`.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Reinterprets the same data under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c] = v;
    }

    #[inline]
    pub fn at3(&self, d: usize, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(d * self.shape[1] + r) * self.shape[2] + c]
    }

    #[inline]
    pub fn set3(&mut self, d: usize, r: usize, c: usize, v: f64) {
        debug_assert_eq!(self.rank(), 3);
        self.data[(d * self.shape[1] + r) * self.shape[2] + c] = v;
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| c * v)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Euclidean norm over all elements.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Matrix product of two rank-2 tensors `[m x k] * [k x n] -> [m x n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.data[i * k + p] * b.data[p * n + j];
            }
            out.data[i * n + j] = acc;
        }
    }
    Ok(out)
}

/// Matrix-vector product: `[m x k] * [k] -> [m]`.
pub fn matvec(a: &Tensor, x: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || x.rank() != 1 || a.shape[1] != x.shape[0] {
        return Err(Error::ShapeMismatch {
            op: "matvec",
            left: a.shape.clone(),
            right: x.shape.clone(),
        });
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let mut out = Tensor::zeros(&[m]);
    for i in 0..m {
        let mut acc = 0.0;
        for p in 0..k {
            acc += a.data[i * k + p] * x.data[p];
        }
        out.data[i] = acc;
    }
    Ok(out)
}

/// A square read-only window into a rank-2 tensor.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    src: &'a Tensor,
    pub row: usize,
    pub col: usize,
    pub side: usize,
}

impl<'a> Window<'a> {
    #[inline]
    pub fn at(&self, dr: usize, dc: usize) -> f64 {
        self.src.at2(self.row + dr, self.col + dc)
    }

    pub fn sum(&self) -> f64 {
        let mut acc = 0.0;
        for dr in 0..self.side {
            for dc in 0..self.side {
                acc += self.at(dr, dc);
            }
        }
        acc
    }

    /// Sliding dot-product against a rank-2 kernel of the same side.
    pub fn dot(&self, kernel: &Tensor) -> f64 {
        debug_assert_eq!(kernel.shape(), [self.side, self.side]);
        let mut acc = 0.0;
        for dr in 0..self.side {
            for dc in 0..self.side {
                acc += self.at(dr, dc) * kernel.at2(dr, dc);
            }
        }
        acc
    }
}

/// Yields every `win`-sided window of a rank-2 tensor at the given stride, in
/// row-major order of the windows' top-left corners.
///
/// The geometry must tile exactly: `(H - win)` and `(W - win)` have to be
/// divisible by `stride`. Padding, when needed, is the caller's job.
pub fn slide_windows(input: &Tensor, win: usize, stride: usize) -> Result<Vec<Window<'_>>> {
    if input.rank() != 2 {
        return Err(Error::Geometry {
            op: "slide_windows",
            msg: format!("expected rank-2 input, got shape {:?}", input.shape()),
        });
    }
    if win == 0 || stride == 0 {
        return Err(Error::Geometry {
            op: "slide_windows",
            msg: "window and stride must be positive".into(),
        });
    }
    let (h, w) = (input.shape[0], input.shape[1]);
    if h < win || w < win {
        return Err(Error::Geometry {
            op: "slide_windows",
            msg: format!("window {win} exceeds input {h}x{w}"),
        });
    }
    if !(h - win).is_multiple_of(stride) || !(w - win).is_multiple_of(stride) {
        let need_h = stride - (h - win) % stride;
        let need_w = stride - (w - win) % stride;
        return Err(Error::Geometry {
            op: "slide_windows",
            msg: format!(
                "input {h}x{w} does not tile with window {win} stride {stride}; \
                 pad {} row(s) and {} col(s)",
                need_h % stride,
                need_w % stride
            ),
        });
    }
    let rows = (h - win) / stride + 1;
    let cols = (w - win) / stride + 1;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(Window {
                src: input,
                row: r * stride,
                col: c * stride,
                side: win,
            });
        }
    }
    Ok(out)
}

/// Surrounds a rank-2 tensor with a border of `p` zeros on every side.
pub fn pad_zero(input: &Tensor, p: usize) -> Result<Tensor> {
    if input.rank() != 2 {
        return Err(Error::Geometry {
            op: "pad_zero",
            msg: format!("expected rank-2 input, got shape {:?}", input.shape()),
        });
    }
    if p == 0 {
        return Ok(input.clone());
    }
    let (h, w) = (input.shape[0], input.shape[1]);
    let mut out = Tensor::zeros(&[h + 2 * p, w + 2 * p]);
    for r in 0..h {
        for c in 0..w {
            out.set2(r + p, c + p, input.at2(r, c));
        }
    }
    Ok(out)
}

/// Removes a border of `p` elements from every side; inverse of [`pad_zero`].
pub fn crop(input: &Tensor, p: usize) -> Result<Tensor> {
    if input.rank() != 2 {
        return Err(Error::Geometry {
            op: "crop",
            msg: format!("expected rank-2 input, got shape {:?}", input.shape()),
        });
    }
    let (h, w) = (input.shape[0], input.shape[1]);
    if h <= 2 * p || w <= 2 * p {
        return Err(Error::Geometry {
            op: "crop",
            msg: format!("cannot crop {p} from {h}x{w}"),
        });
    }
    let mut out = Tensor::zeros(&[h - 2 * p, w - 2 * p]);
    for r in 0..h - 2 * p {
        for c in 0..w - 2 * p {
            out.set2(r, c, input.at2(r + p, c + p));
        }
    }
    Ok(out)
}

/// Deterministic xorshift64* generator.
///
/// State transition: `x ^= x >> 12; x ^= x << 25; x ^= x >> 27`; output is
/// `x * 0x2545F4914F6CDD1D`. Seeds are pre-mixed through SplitMix64
/// (`z = (s + 0x9E3779B97F4A7C15); z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
/// z = (z ^ z>>27) * 0x94D049BB133111EB; z ^ z>>31`) so that small seeds and
/// seed zero still produce well-spread states. Identical seeds produce
/// identical streams on every platform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        let mut state = splitmix64(seed);
        if state == 0 {
            // xorshift state must be nonzero
            state = GOLDEN_GAMMA;
        }
        Rng { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform draw in `[0, 1)` using the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform index in `[0, n)`, as `next_u64() mod n`.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }
}

/// The stochastic consumers of randomness, each with its own stream so that
/// adding or removing one consumer cannot shift the draws of another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    Shuffle = 0,
    Dropout = 1,
    DropConnect = 2,
    WeightInit = 3,
    Augment = 4,
}

/// Derives the seed of a named stream from the master seed.
///
/// Mixing rule: `stream_seed = splitmix64(master + (id + 1) * GOLDEN_GAMMA)`.
pub fn stream_rng(master_seed: u64, id: StreamId) -> Rng {
    let tag = (id as u64 + 1).wrapping_mul(GOLDEN_GAMMA);
    Rng::from_seed(splitmix64(master_seed.wrapping_add(tag)))
}

/// One generator per named stream, all derived from a single master seed.
#[derive(Debug, Clone)]
pub struct RngStreams {
    pub shuffle: Rng,
    pub dropout: Rng,
    pub dropconnect: Rng,
    pub weight_init: Rng,
    pub augment: Rng,
}

impl RngStreams {
    pub fn from_master(seed: u64) -> Self {
        RngStreams {
            shuffle: stream_rng(seed, StreamId::Shuffle),
            dropout: stream_rng(seed, StreamId::Dropout),
            dropconnect: stream_rng(seed, StreamId::DropConnect),
            weight_init: stream_rng(seed, StreamId::WeightInit),
            augment: stream_rng(seed, StreamId::Augment),
        }
    }
}

/// Fisher-Yates shuffle: iterates `i` from `n-1` down to 1 and swaps index
/// `i` with `j = next_u64() mod (i + 1)`. Returns a permuted copy.
pub fn shuffle<T: Clone>(items: &[T], rng: &mut Rng) -> Vec<T> {
    let mut out = items.to_vec();
    if out.len() < 2 {
        return out;
    }
    for i in (1..out.len()).rev() {
        let j = rng.index(i + 1);
        out.swap(i, j);
    }
    out
}
