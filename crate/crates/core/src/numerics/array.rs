use crate::error::{Error, Result};

/// Dense array of `f32` values, row-major with the last axis contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Array {
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        check_shape(shape)?;
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics on a zero extent; use [`Array::from_vec`] for fallible construction.
    pub fn full(shape: &[usize], value: f32) -> Self {
        check_shape(shape).expect("invalid shape");
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(&[n, n]);
        for i in 0..n {
            out.data[i * n + i] = 1.0;
        }
        out
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Array, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        self.expect_shape(other.shape())?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Array) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Array) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f32) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Array) -> Result<()> {
        self.expect_shape(other.shape())?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::dim(format!(
                "expected shape {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Array) -> Result<f32> {
        self.expect_shape(other.shape())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0` and comparing NaN payloads.
    pub fn bitwise_eq(&self, other: &Array) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    // Video helpers. A video is laid out as [channels, frames, height, width].

    fn video_dims(&self) -> Result<(usize, usize, usize)> {
        if self.ndim() != 4 {
            return Err(Error::dim(format!(
                "expected a [C, M, H, W] video, got shape {:?}",
                self.shape
            )));
        }
        let s = &self.shape;
        Ok((s[0], s[1], s[2] * s[3]))
    }

    /// Number of frames of a `[C, M, H, W]` video.
    pub fn frames(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(0)
    }

    /// New video whose frame `i` is this video's frame `indices[i]`.
    pub fn gather_frames(&self, indices: &[usize]) -> Result<Array> {
        let (c, m, site) = self.video_dims()?;
        if indices.is_empty() {
            return Err(Error::dim("cannot gather zero frames"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::Index(format!("frame {bad} out of range for {m} frames")));
        }
        let out_m = indices.len();
        let mut data = Vec::with_capacity(c * out_m * site);
        for ch in 0..c {
            for &i in indices {
                let off = (ch * m + i) * site;
                data.extend_from_slice(&self.data[off..off + site]);
            }
        }
        Array::from_vec(&[c, out_m, self.shape[2], self.shape[3]], data)
    }

    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Array> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather_frames(&idx)
    }

    /// Copies `src` (a `[C, len, H, W]` video) into frames `start..start+len`.
    pub fn write_frames(&mut self, start: usize, src: &Array) -> Result<()> {
        let (c, m, site) = self.video_dims()?;
        let (sc, sm, ssite) = src.video_dims()?;
        if sc != c || ssite != site || start + sm > m {
            return Err(Error::dim(format!(
                "cannot write {:?} at frame {start} of {:?}",
                src.shape, self.shape
            )));
        }
        for ch in 0..c {
            let dst = (ch * m + start) * site;
            let s = ch * sm * site;
            self.data[dst..dst + sm * site].copy_from_slice(&src.data[s..s + sm * site]);
        }
        Ok(())
    }

    /// Contiguous slice holding one channel of one frame.
    pub fn frame_plane(&self, channel: usize, frame: usize) -> &[f32] {
        let m = self.shape[1];
        let site = self.shape[2] * self.shape[3];
        let off = (channel * m + frame) * site;
        &self.data[off..off + site]
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::dim("arrays need at least one axis"));
    }
    if shape.contains(&0) {
        return Err(Error::dim(format!("zero extent in shape {shape:?}")));
    }
    Ok(())
}
