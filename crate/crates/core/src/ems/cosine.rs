// Copyright 2025 The webcoach Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

use super::EmsError;

/// Dot product accumulated in `f64`. Stored vectors are `f32`; `f64`
/// inputs are accepted for callers that scale or compose vectors first.
///
/// Eight lanes are summed independently and folded at the end so the
/// compiler can vectorize; the order is fixed, so results are reproducible.
pub fn dot_f64<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i].into() * y[i].into();
        }
    }
    let mut tail = 0f64;
    for (x, y) in ra.iter().zip(rb) {
        tail += (*x).into() * (*y).into();
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub fn norm_f64<T: Copy + Into<f64>>(a: &[T]) -> f64 {
    dot_f64(a, a).sqrt()
}

/// `f32` dot product with the same lane layout, used inside the graph index.
pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Normalized dot product `a·b / (‖a‖ ‖b‖)`, clamped to [-1, 1].
pub fn cosine_score<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64, EmsError> {
    if a.len() != b.len() {
        return Err(EmsError::Schema { expected: a.len(), got: b.len() });
    }
    let (na, nb) = (norm_f64(a), norm_f64(b));
    cosine_with_norms(a, na, b, nb)
}

pub(crate) fn cosine_with_norms<T: Copy + Into<f64>>(a: &[T], na: f64, b: &[T], nb: f64) -> Result<f64, EmsError> {
    if na == 0.0 || nb == 0.0 {
        return Err(EmsError::Domain("zero vector has no direction".into()));
    }
    if !na.is_finite() || !nb.is_finite() {
        return Err(EmsError::Domain("vector has non-finite entries".into()));
    }
    Ok((dot_f64(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_orthogonality() {
        let a = [0.3f32, -1.7, 2.5, 4.0];
        assert!((cosine_score(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let e1 = [1f32, 0.0, 0.0];
        let e2 = [0f32, 1.0, 0.0];
        assert!(cosine_score(&e1, &e2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn hand_computed_pair() {
        // (1,2,2)·(2,1,2) = 8, both norms 3.
        let s = cosine_score(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert!((s - 8.0 / 9.0).abs() < 1e-15);
        let s64 = cosine_score(&[1e6f64, 2e6, 2e6], &[2.0, 1.0, 2.0]).unwrap();
        assert!((s64 - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(cosine_score(&[0.0, 0.0], &[1.0, 0.0]), Err(EmsError::Domain(_))));
        assert!(matches!(cosine_score(&[1.0, 0.0], &[1.0, 0.0, 0.0]), Err(EmsError::Schema { expected: 2, got: 3 })));
    }

    #[test]
    fn lane_sum_matches_naive_on_odd_lengths() {
        let a: Vec<f32> = (0..37).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..37).map(|i| (i as f32 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        assert!((dot_f64(&a, &b) - naive).abs() < 1e-12);
        assert!((f64::from(dot_f32(&a, &b)) - naive).abs() < 1e-4);
    }
}
