//! KV-cache fragments with absolute-position provenance, positional
//! alignment, and offset measurement/application.
//!
//! Keys are stored rotated at their absolute positions; values carry no
//! positional encoding. Offsets live in the base fragment's frame (keys
//! de-rotated to the base positions), so one stored offset can be replayed
//! at any target position with a single re-rotation.

use crate::error::{Error, Result};
use crate::rope::Rope;
use alloc::vec;
use alloc::vec::Vec;

/// Per-layer key/value rows, `[len * width]` each, row-major by position.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerKv {
    pub keys: Vec<f32>,
    pub values: Vec<f32>,
}

impl LayerKv {
    fn with_capacity(len: usize, width: usize) -> Self {
        Self { keys: Vec::with_capacity(len * width), values: Vec::with_capacity(len * width) }
    }

    fn zeros(len: usize, width: usize) -> Self {
        Self { keys: vec![0.0; len * width], values: vec![0.0; len * width] }
    }
}

/// A contiguous run of cached positions across all layers.
#[derive(Clone, Debug, PartialEq)]
pub struct KvFragment {
    /// Absolute position of the first row; keys are rotated at `start + i`.
    pub start: i64,
    pub len: usize,
    /// Row width: `num_heads * head_dim`.
    pub width: usize,
    pub layers: Vec<LayerKv>,
}

/// Key/value deviation between two fragments, stored in the base frame.
#[derive(Clone, Debug, PartialEq)]
pub struct KvOffset {
    pub base_start: i64,
    pub len: usize,
    pub width: usize,
    /// `keys` holds delta-k (base frame), `values` holds delta-v.
    pub layers: Vec<LayerKv>,
}

/// Kind of a template segment a span belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    Prefix,
    Placeholder,
}

/// Location of one segment inside an instantiated prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentSpan {
    pub start: usize,
    pub len: usize,
    pub kind: SegmentKind,
    /// Placeholder ordinal i for placeholders and for the prefix p_i that
    /// follows placeholder i; the leading prefix has slot 0.
    pub slot: usize,
}

impl KvFragment {
    pub fn empty(num_layers: usize, width: usize, start: i64) -> Self {
        Self { start, len: 0, width, layers: (0..num_layers).map(|_| LayerKv::with_capacity(0, width)).collect() }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn key_row(&self, layer: usize, idx: usize) -> &[f32] {
        &self.layers[layer].keys[idx * self.width..(idx + 1) * self.width]
    }

    pub fn value_row(&self, layer: usize, idx: usize) -> &[f32] {
        &self.layers[layer].values[idx * self.width..(idx + 1) * self.width]
    }

    /// Drop rows at the tail, keeping the first `len`.
    pub fn truncate(&mut self, len: usize) {
        debug_assert!(len <= self.len);
        for layer in &mut self.layers {
            layer.keys.truncate(len * self.width);
            layer.values.truncate(len * self.width);
        }
        self.len = len;
    }

    /// Copy of the rows covered by `[span_start, span_start + span_len)`,
    /// with `start` advanced accordingly.
    pub fn slice(&self, span_start: usize, span_len: usize) -> Result<KvFragment> {
        if span_start + span_len > self.len {
            return Err(Error::SpanOutOfRange { start: span_start, len: span_len, fragment_len: self.len });
        }
        let layers = self
            .layers
            .iter()
            .map(|l| LayerKv {
                keys: l.keys[span_start * self.width..(span_start + span_len) * self.width].to_vec(),
                values: l.values[span_start * self.width..(span_start + span_len) * self.width].to_vec(),
            })
            .collect();
        Ok(KvFragment { start: self.start + span_start as i64, len: span_len, width: self.width, layers })
    }

    pub fn slice_span(&self, span: &SegmentSpan) -> Result<KvFragment> {
        self.slice(span.start, span.len)
    }

    /// Re-rotate every key to sit at `new_start + i`; values untouched.
    pub fn shifted(&self, new_start: i64, rope: &Rope) -> KvFragment {
        let delta = new_start - self.start;
        let mut out = self.clone();
        out.start = new_start;
        if delta != 0 {
            for layer in &mut out.layers {
                for (i, row) in layer.keys.chunks_mut(self.width).enumerate() {
                    let _ = i;
                    rope.rotate_row(row, delta);
                }
            }
        }
        out
    }

    /// Total f32 payload in bytes (keys + values over all layers).
    pub fn tensor_bytes(&self) -> usize {
        self.layers.iter().map(|l| (l.keys.len() + l.values.len()) * 4).sum()
    }
}

impl KvOffset {
    pub fn zeros(num_layers: usize, width: usize, base_start: i64, len: usize) -> Self {
        Self { base_start, len, width, layers: (0..num_layers).map(|_| LayerKv::zeros(len, width)).collect() }
    }

    /// First `len` positions of the offset, aligned from segment start.
    pub fn truncated(&self, len: usize) -> Result<KvOffset> {
        if len > self.len {
            return Err(Error::LengthMismatch { expected: len, got: self.len });
        }
        let layers = self
            .layers
            .iter()
            .map(|l| LayerKv {
                keys: l.keys[..len * self.width].to_vec(),
                values: l.values[..len * self.width].to_vec(),
            })
            .collect();
        Ok(KvOffset { base_start: self.base_start, len, width: self.width, layers })
    }

    pub fn tensor_bytes(&self) -> usize {
        self.layers.iter().map(|l| (l.keys.len() + l.values.len()) * 4).sum()
    }
}

fn check_same_shape(a_layers: usize, b_layers: usize, a_width: usize, b_width: usize, a_len: usize, b_len: usize) -> Result<()> {
    if a_layers != b_layers {
        return Err(Error::ShapeMismatch { what: "layer count", expected: a_layers, got: b_layers });
    }
    if a_width != b_width {
        return Err(Error::ShapeMismatch { what: "row width", expected: a_width, got: b_width });
    }
    if a_len != b_len {
        return Err(Error::LengthMismatch { expected: a_len, got: b_len });
    }
    Ok(())
}

/// Deviation of `real` from `base`: keys de-rotated to the base positions
/// first, values subtracted directly.
pub fn measure_offset(real: &KvFragment, base: &KvFragment, rope: &Rope) -> Result<KvOffset> {
    check_same_shape(base.num_layers(), real.num_layers(), base.width, real.width, base.len, real.len)?;
    let delta_pos = base.start - real.start;
    let mut out = KvOffset::zeros(base.num_layers(), base.width, base.start, base.len);
    for l in 0..base.num_layers() {
        for i in 0..base.len {
            let mut k = real.key_row(l, i).to_vec();
            rope.rotate_row(&mut k, delta_pos);
            let bk = base.key_row(l, i);
            let dst = &mut out.layers[l].keys[i * base.width..(i + 1) * base.width];
            for (d, (rk, b)) in dst.iter_mut().zip(k.iter().zip(bk)) {
                *d = rk - b;
            }
            let rv = real.value_row(l, i);
            let bv = base.value_row(l, i);
            let dst = &mut out.layers[l].values[i * base.width..(i + 1) * base.width];
            for (d, (r, b)) in dst.iter_mut().zip(rv.iter().zip(bv)) {
                *d = r - b;
            }
        }
    }
    Ok(out)
}

/// `base + delta` in the base frame, then keys re-rotated to `target_start`.
pub fn apply_offset(base: &KvFragment, delta: &KvOffset, target_start: i64, rope: &Rope) -> Result<KvFragment> {
    check_same_shape(base.num_layers(), delta.layers.len(), base.width, delta.width, base.len, delta.len)?;
    let rot = target_start - base.start;
    let mut out = KvFragment::empty(base.num_layers(), base.width, target_start);
    out.len = base.len;
    for l in 0..base.num_layers() {
        let mut keys = Vec::with_capacity(base.len * base.width);
        let mut values = Vec::with_capacity(base.len * base.width);
        for i in 0..base.len {
            let bk = base.key_row(l, i);
            let dk = &delta.layers[l].keys[i * base.width..(i + 1) * base.width];
            let mut k: Vec<f32> = bk.iter().zip(dk).map(|(b, d)| b + d).collect();
            rope.rotate_row(&mut k, rot);
            keys.extend_from_slice(&k);
            let bv = base.value_row(l, i);
            let dv = &delta.layers[l].values[i * base.width..(i + 1) * base.width];
            values.extend(bv.iter().zip(dv).map(|(b, d)| b + d));
        }
        out.layers[l] = LayerKv { keys, values };
    }
    Ok(out)
}

/// Join position-contiguous fragments into one.
pub fn concat_fragments(parts: &[&KvFragment]) -> Result<KvFragment> {
    let first = parts.first().ok_or(Error::EmptyCandidates)?;
    let mut out = KvFragment::empty(first.num_layers(), first.width, first.start);
    let mut expected = first.start;
    for part in parts {
        check_same_shape(out.num_layers(), part.num_layers(), out.width, part.width, part.len, part.len)?;
        if part.start != expected {
            return Err(Error::PositionGap { expected, got: part.start });
        }
        for (dst, src) in out.layers.iter_mut().zip(&part.layers) {
            dst.keys.extend_from_slice(&src.keys);
            dst.values.extend_from_slice(&src.values);
        }
        out.len += part.len;
        expected += part.len as i64;
    }
    Ok(out)
}

/// Largest absolute elementwise difference over all layers, keys and values.
pub fn max_abs_diff(a: &KvFragment, b: &KvFragment) -> f32 {
    let mut worst = 0.0f32;
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        for (x, y) in la.keys.iter().zip(&lb.keys) {
            worst = worst.max((x - y).abs());
        }
        for (x, y) in la.values.iter().zip(&lb.values) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::rope::GEOMETRY_EPS;

    fn random_fragment(rng: &mut SplitMix64, layers: usize, width: usize, start: i64, len: usize) -> KvFragment {
        let mut f = KvFragment::empty(layers, width, start);
        f.len = len;
        for l in 0..layers {
            f.layers[l] = LayerKv {
                keys: (0..len * width).map(|_| (rng.next_f64() * 2.0 - 1.0) as f32).collect(),
                values: (0..len * width).map(|_| (rng.next_f64() * 2.0 - 1.0) as f32).collect(),
            };
        }
        f
    }

    #[test]
    fn slice_whole_is_identity() {
        let f = random_fragment(&mut SplitMix64::new(1), 2, 8, 5, 6);
        assert_eq!(f.slice(0, 6).unwrap(), f);
    }

    #[test]
    fn slices_concat_back() {
        let f = random_fragment(&mut SplitMix64::new(2), 2, 8, 3, 7);
        let a = f.slice(0, 3).unwrap();
        let b = f.slice(3, 4).unwrap();
        assert_eq!(concat_fragments(&[&a, &b]).unwrap(), f);
    }

    #[test]
    fn concat_rejects_gap() {
        let f = random_fragment(&mut SplitMix64::new(3), 1, 4, 0, 6);
        let a = f.slice(0, 2).unwrap();
        let b = f.slice(3, 2).unwrap();
        assert!(matches!(concat_fragments(&[&a, &b]), Err(Error::PositionGap { .. })));
    }

    #[test]
    fn shift_round_trip() {
        let rope = Rope::new(4, 10_000.0);
        let f = random_fragment(&mut SplitMix64::new(4), 2, 8, 0, 5);
        let back = f.shifted(512, &rope).shifted(0, &rope);
        assert!(max_abs_diff(&back, &f) < GEOMETRY_EPS);
        assert_eq!(f.shifted(0, &rope), f);
    }

    #[test]
    fn offset_of_self_is_zero() {
        let rope = Rope::new(4, 10_000.0);
        let f = random_fragment(&mut SplitMix64::new(5), 2, 8, 2, 5);
        let off = measure_offset(&f, &f, &rope).unwrap();
        for l in &off.layers {
            assert!(l.keys.iter().all(|&x| x == 0.0));
            assert!(l.values.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn pure_shift_measures_as_zero() {
        let rope = Rope::new(4, 10_000.0);
        let base = random_fragment(&mut SplitMix64::new(6), 2, 8, 0, 5);
        let real = base.shifted(100, &rope);
        let off = measure_offset(&real, &base, &rope).unwrap();
        let worst = off
            .layers
            .iter()
            .flat_map(|l| l.keys.iter().chain(&l.values))
            .fold(0.0f32, |w, &x| w.max(x.abs()));
        assert!(worst < GEOMETRY_EPS);
    }

    #[test]
    fn measure_apply_round_trip() {
        let rope = Rope::new(4, 10_000.0);
        let mut rng = SplitMix64::new(7);
        for _ in 0..20 {
            let len = 1 + rng.next_below(6);
            let base = random_fragment(&mut rng, 2, 8, rng.next_below(64) as i64, len);
            let real = random_fragment(&mut rng, 2, 8, rng.next_below(64) as i64, len);
            let off = measure_offset(&real, &base, &rope).unwrap();
            let rebuilt = apply_offset(&base, &off, real.start, &rope).unwrap();
            assert!(max_abs_diff(&rebuilt, &real) < GEOMETRY_EPS);
        }
    }

    #[test]
    fn zero_delta_reduces_to_shift() {
        let rope = Rope::new(4, 10_000.0);
        let base = random_fragment(&mut SplitMix64::new(8), 2, 8, 0, 4);
        let zero = KvOffset::zeros(2, 8, 0, 4);
        let stay = apply_offset(&base, &zero, 0, &rope).unwrap();
        assert_eq!(stay, base);
        let moved = apply_offset(&base, &zero, 37, &rope).unwrap();
        assert!(max_abs_diff(&moved, &base.shifted(37, &rope)) < GEOMETRY_EPS);
    }

    #[test]
    fn mismatched_lengths_error() {
        let rope = Rope::new(4, 10_000.0);
        let a = random_fragment(&mut SplitMix64::new(9), 2, 8, 0, 4);
        let b = random_fragment(&mut SplitMix64::new(10), 2, 8, 0, 5);
        assert!(measure_offset(&a, &b, &rope).is_err());
    }
}
