use std::fmt;

use crate::error::{Error, Result};

/// Dimensions of a [`Tensor4`]: batch, channels, rows, columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one sample (`c·h·w`).
    pub const fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane_len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub const fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense 4-D array in row-major `(n, c, h, w)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: Shape4) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape4, value: f64) -> Result<Self> {
        check_dims(shape)?;
        Ok(Tensor4 {
            shape,
            data: vec![value; shape.len()],
        })
    }

    pub fn from_vec(shape: Shape4, data: Vec<f64>) -> Result<Self> {
        check_dims(shape)?;
        if data.len() != shape.len() {
            return Err(Error::shape(
                "Tensor4::from_vec",
                format!("{} values for {shape}", shape.len()),
                format!("{} values", data.len()),
            ));
        }
        Ok(Tensor4 { shape, data })
    }

    /// Concatenates single-or-multi-sample tensors along the batch axis.
    pub fn stack(parts: &[Tensor4]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero tensors".into()))?;
        let (c, h, w) = (first.shape.c, first.shape.h, first.shape.w);
        let mut n = 0;
        let mut data = Vec::with_capacity(parts.iter().map(|t| t.data.len()).sum());
        for t in parts {
            if (t.shape.c, t.shape.h, t.shape.w) != (c, h, w) {
                return Err(Error::shape(
                    "Tensor4::stack",
                    format!("?x{c}x{h}x{w}"),
                    t.shape,
                ));
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Self::from_vec(Shape4::new(n, c, h, w), data)
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.shape.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.shape.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Copies sample `n` out as a batch of one.
    pub fn sample_tensor(&self, n: usize) -> Tensor4 {
        let s = self.shape;
        Tensor4 {
            shape: Shape4::new(1, s.c, s.h, s.w),
            data: self.sample(n).to_vec(),
        }
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.index(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f64) {
        let i = self.shape.index(n, c, y, x);
        self.data[i] = value;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_dims(shape: Shape4) -> Result<()> {
    if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
        return Err(Error::InvalidArgument(format!(
            "tensor dimensions must be >= 1, got {shape}"
        )));
    }
    Ok(())
}
