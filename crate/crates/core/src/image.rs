//! Dense image buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Single-channel row-major image.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Plane {
        Plane { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Plane> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch);
        }
        Ok(Plane { width, height, data })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Three-channel row-major image, one `[f64; 3]` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image3 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl Image3 {
    pub fn zeros(width: usize, height: usize) -> Image3 {
        Image3 { width, height, data: vec![[0.0; 3]; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Image3> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch);
        }
        Ok(Image3 { width, height, data })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn channel(&self, c: usize) -> Plane {
        Plane { width: self.width, height: self.height, data: self.data.iter().map(|p| p[c]).collect() }
    }

    pub fn same_shape(&self, other: &Image3) -> bool {
        self.width == other.width && self.height == other.height
    }
}
