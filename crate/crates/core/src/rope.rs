//! Rotary position embedding.
//!
//! A head vector of even dimension d is treated as d/2 planar pairs
//! (2i, 2i+1); pair i rotates by `position * base^(-2i/d)` radians. Angles
//! and trigonometry run in f64 so that large positions keep the group law
//! `R_a . R_b = R_{a+b}` within the crate-wide geometry epsilon.

use alloc::vec::Vec;

/// Single tolerance used by every geometric "equality" contract, in 32-bit
/// max-abs terms.
pub const GEOMETRY_EPS: f32 = 1e-6;

#[derive(Clone, Debug)]
pub struct Rope {
    head_dim: usize,
    inv_freq: Vec<f64>,
}

impl Rope {
    pub fn new(head_dim: usize, base: f32) -> Self {
        debug_assert!(head_dim % 2 == 0);
        let inv_freq = (0..head_dim / 2)
            .map(|i| libm::pow(base as f64, -2.0 * i as f64 / head_dim as f64))
            .collect();
        Self { head_dim, inv_freq }
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    /// Rotate one head vector to `position`. Negative positions de-rotate.
    pub fn rotate(&self, v: &[f32], position: i64) -> Vec<f32> {
        let mut out = v.to_vec();
        self.rotate_in_place(&mut out, position);
        out
    }

    pub fn rotate_in_place(&self, v: &mut [f32], position: i64) {
        debug_assert_eq!(v.len(), self.head_dim);
        if position == 0 {
            return;
        }
        let p = position as f64;
        for (i, &f) in self.inv_freq.iter().enumerate() {
            let angle = p * f;
            let s = libm::sin(angle);
            let c = libm::cos(angle);
            let a = v[2 * i] as f64;
            let b = v[2 * i + 1] as f64;
            v[2 * i] = (a * c - b * s) as f32;
            v[2 * i + 1] = (a * s + b * c) as f32;
        }
    }

    /// Rotate a multi-head row (`heads * head_dim` floats) head by head.
    pub fn rotate_row(&self, row: &mut [f32], position: i64) {
        debug_assert_eq!(row.len() % self.head_dim, 0);
        for chunk in row.chunks_mut(self.head_dim) {
            self.rotate_in_place(chunk, position);
        }
    }
}
