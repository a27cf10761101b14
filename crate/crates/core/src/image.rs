//! Dense raster type and the bilinear sampling shared by preprocessing,
//! CAM upsampling, and rendering.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-major `height x width x channels` raster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), height * width * channels, "image buffer size");
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centres at
    /// integer positions); out-of-range coordinates replicate the border.
    pub fn sample_bilinear(&self, y: T, x: T, c: usize) -> T {
        let max_y = T::from_usize_lossy(self.height - 1);
        let max_x = T::from_usize_lossy(self.width - 1);
        let y = y.max(T::zero()).min(max_y);
        let x = x.max(T::zero()).min(max_x);
        let y0 = y.floor();
        let x0 = x.floor();
        let dy = y - y0;
        let dx = x - x0;
        let y0 = y0.to_usize().unwrap_or(0);
        let x0 = x0.to_usize().unwrap_or(0);
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let one = T::one();
        if dy == T::zero() && dx == T::zero() {
            return self.get(y0, x0, c);
        }
        let top = self.get(y0, x0, c) * (one - dx) + self.get(y0, x1, c) * dx;
        let bottom = self.get(y1, x0, c) * (one - dx) + self.get(y1, x1, c) * dx;
        top * (one - dy) + bottom * dy
    }

    /// Bilinear resize with half-pixel centre alignment. Same-size resizing
    /// returns an identical copy.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = T::from_usize_lossy(self.height) / T::from_usize_lossy(height);
        let sx = T::from_usize_lossy(self.width) / T::from_usize_lossy(width);
        let half = T::from_f64_lossy(0.5);
        let channels = self.channels;
        Self::from_fn(height, width, channels, |y, x, c| {
            let src_y = (T::from_usize_lossy(y) + half) * sy - half;
            let src_x = (T::from_usize_lossy(x) + half) * sx - half;
            self.sample_bilinear(src_y, src_x, c)
        })
    }

    /// Replicate a single-channel raster to `channels` channels.
    pub fn replicate_channels(&self, channels: usize) -> Self {
        if self.channels == channels {
            return self.clone();
        }
        assert_eq!(self.channels, 1, "only single-channel rasters replicate");
        Self::from_fn(self.height, self.width, channels, |y, x, _| self.get(y, x, 0))
    }

    /// Channel-mean luminance raster.
    pub fn to_gray(&self) -> Self {
        let n = T::from_usize_lossy(self.channels);
        Self::from_fn(self.height, self.width, 1, |y, x, _| {
            (0..self.channels).map(|c| self.get(y, x, c)).sum::<T>() / n
        })
    }

    pub fn min_max(&self) -> (T, T) {
        self.data
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `1 x C x H x W` tensor view of this image.
    pub fn to_tensor(&self) -> Tensor<T> {
        let (h, w, ch) = (self.height, self.width, self.channels);
        let mut out = vec![T::zero(); h * w * ch];
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    out[(c * h + y) * w + x] = self.get(y, x, c);
                }
            }
        }
        Tensor::from_vec([1, ch, h, w], out)
    }

    /// Convert to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|v| U::from_f64_lossy(v.lossy_f64())).collect(),
        )
    }
}

/// Stack images of identical shape into an `N x C x H x W` batch.
pub fn batch_tensor<T: Scalar>(images: &[&Image<T>]) -> Tensor<T> {
    assert!(!images.is_empty(), "empty batch");
    let (h, w, c) = (images[0].height, images[0].width, images[0].channels);
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        assert_eq!((img.height, img.width, img.channels), (h, w, c), "batch shape");
        data.extend_from_slice(img.to_tensor().data());
    }
    Tensor::from_vec([images.len(), c, h, w], data)
}
