//! Streaming moments with an order-fixed merge (Chan et al. update), so
//! chunked parallel reductions are bit-reproducible.

use nalgebra::DVector;

/// Scalar running mean / variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    /// Unbiased sample variance (0 for fewer than two samples).
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean; infinite below two samples.
    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            f64::INFINITY
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Coordinatewise running mean / variance of vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct VecMoments {
    pub count: u64,
    pub mean: DVector<f64>,
    m2: DVector<f64>,
}

impl VecMoments {
    pub fn new(dim: usize) -> Self {
        Self { count: 0, mean: DVector::zeros(dim), m2: DVector::zeros(dim) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn push(&mut self, x: &DVector<f64>) {
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d * inv;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    pub fn merge(&mut self, other: &VecMoments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.dim() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn variance(&self) -> DVector<f64> {
        if self.count < 2 {
            DVector::zeros(self.dim())
        } else {
            &self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> DVector<f64> {
        if self.count < 2 {
            DVector::from_element(self.dim(), f64::INFINITY)
        } else {
            self.variance().map(|v| (v / self.count as f64).sqrt())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn merge_matches_sequential(xs in prop::collection::vec(-1e3f64..1e3, 2..200), split in 0usize..200) {
            let split = split.min(xs.len());
            let all: Moments = xs.iter().cloned().collect();
            let mut a: Moments = xs[..split].iter().cloned().collect();
            let b: Moments = xs[split..].iter().cloned().collect();
            a.merge(&b);
            prop_assert_eq!(a.count, all.count);
            prop_assert!((a.mean - all.mean).abs() <= 1e-9 * (1.0 + all.mean.abs()));
            prop_assert!((a.variance() - all.variance()).abs() <= 1e-7 * (1.0 + all.variance()));
        }
    }

    #[test]
    fn vector_moments_agree_with_scalar() {
        let data: Vec<DVector<f64>> = (0..50).map(|i| DVector::from_vec(vec![i as f64, (i * i) as f64 * 0.1])).collect();
        let mut vm = VecMoments::new(2);
        for d in &data {
            vm.push(d);
        }
        let s: Moments = data.iter().map(|d| d[1]).collect();
        assert!((vm.mean[1] - s.mean).abs() < 1e-12);
        assert!((vm.std_error()[1] - s.std_error()).abs() < 1e-12);
    }

    #[test]
    fn single_sample_has_infinite_error() {
        let m: Moments = [1.0].into_iter().collect();
        assert!(m.std_error().is_infinite());
    }
}
