//! Latent tensors and their (robust) energies.

use crate::error::{Error, Result};

/// A flat, finite-valued latent with shape metadata.
///
/// Values are held in `f64` regardless of the precision they were stored in.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl LatentTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::ShapeMismatch(
                "shape must have at least one dimension".into(),
            ));
        }
        if shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "zero-sized dimension in {shape:?}"
            )));
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::ShapeMismatch(format!("shape {shape:?} overflows")))?;
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {numel} elements but {} were given",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Self { shape, data })
    }

    /// A rank-1 tensor over `data`.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false: a valid tensor holds at least one element.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &LatentTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Elementwise map that re-checks finiteness of the result.
    pub(crate) fn map_checked(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteResult { index });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Elementwise combination of two same-shaped tensors, re-checking finiteness.
    pub(crate) fn zip_checked(
        &self,
        other: &LatentTensor,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        self.same_shape(other)?;
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteResult { index });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    /// `a * self`.
    pub fn scaled(&self, a: f64) -> Result<Self> {
        self.map_checked(|v| a * v)
    }
}

/// Percentile window `[l, h]` on the squared-value distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustWindow {
    l: f64,
    h: f64,
}

impl RobustWindow {
    /// The whole distribution; robust energy over it is plain energy.
    pub const FULL: RobustWindow = RobustWindow { l: 0.0, h: 100.0 };

    pub fn new(l: f64, h: f64) -> Result<Self> {
        if !(0.0..=100.0).contains(&l) || !(0.0..=100.0).contains(&h) || l >= h {
            return Err(Error::InvalidWindow { l, h });
        }
        Ok(Self { l, h })
    }

    pub fn low(&self) -> f64 {
        self.l
    }

    pub fn high(&self) -> f64 {
        self.h
    }
}

impl Default for RobustWindow {
    fn default() -> Self {
        Self { l: 45.0, h: 55.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustEnergyResult {
    /// Sum of squared values inside the window.
    pub energy: f64,
    /// Lower window bound on the squared scale.
    pub p_low: f64,
    /// Upper window bound on the squared scale.
    pub p_high: f64,
    /// Number of elements that contributed to `energy`.
    pub count: usize,
    /// Set when the window admitted nothing and the full energy was used instead.
    pub fell_back: bool,
}

/// Squared L2 norm, correctly rounded.
pub fn energy(x: &LatentTensor) -> f64 {
    exact_sum(x.data.iter().map(|v| v * v))
}

/// Linear-interpolation percentile of `values` (rank `p/100 * (N-1)`).
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidPercentile(p));
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { index });
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(percentile_of_sorted(&sorted, p))
}

fn percentile_of_sorted(sorted: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - rank.floor();
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Energy over the elements whose squares fall inside the percentile window.
///
/// Both percentiles are taken on the squared values of the flattened tensor
/// and the bounds are inclusive. When the window admits no element the full
/// energy is returned with `count == N`.
pub fn robust_energy(x: &LatentTensor, w: RobustWindow) -> RobustEnergyResult {
    let mut q: Vec<f64> = x.data.iter().map(|v| v * v).collect();
    q.sort_unstable_by(f64::total_cmp);
    let p_low = percentile_of_sorted(&q, w.l);
    let p_high = percentile_of_sorted(&q, w.h);

    // q is sorted, so the admitted elements form one contiguous run.
    let start = q.partition_point(|&v| v < p_low);
    let end = q.partition_point(|&v| v <= p_high);
    if start >= end {
        return RobustEnergyResult {
            energy: exact_sum(q.iter().copied()),
            p_low,
            p_high,
            count: q.len(),
            fell_back: true,
        };
    }
    RobustEnergyResult {
        energy: exact_sum(q[start..end].iter().copied()),
        p_low,
        p_high,
        count: end - start,
        fell_back: false,
    }
}

/// Correctly rounded floating-point sum (Shewchuk's partials).
///
/// The result does not depend on summation order, which keeps the robust
/// energy permutation-invariant and equal to [`energy`] on the full window.
pub(crate) fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        if !x.is_finite() {
            return x;
        }
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            if !hi.is_finite() {
                return hi;
            }
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }

    let Some(mut n) = partials.len().checked_sub(1) else {
        return 0.0;
    };
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        let y = partials[n - 1];
        n -= 1;
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    // Round-half-even correction when the remaining partials push past a tie.
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(data: &[f64]) -> LatentTensor {
        LatentTensor::from_vec(data.to_vec()).unwrap()
    }

    /// Kahan-Babuska summation, independent of `exact_sum`.
    fn kahan_oracle(values: &[f64]) -> f64 {
        let mut sum = 0.0f64;
        let mut c = 0.0f64;
        for &v in values {
            let t = sum + v;
            if sum.abs() >= v.abs() {
                c += (sum - t) + v;
            } else {
                c += (v - t) + sum;
            }
            sum = t;
        }
        sum + c
    }

    #[test]
    fn construction() {
        assert!(LatentTensor::new(vec![2], vec![1.0, 2.0]).is_ok());
        assert!(matches!(
            LatentTensor::new(vec![2, 2], vec![0.0; 3]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            LatentTensor::new(vec![1], vec![f64::NAN]),
            Err(Error::NonFiniteValue { index: 0 })
        ));
        assert!(matches!(
            LatentTensor::new(vec![2], vec![0.0, f64::INFINITY]),
            Err(Error::NonFiniteValue { index: 1 })
        ));
        assert!(LatentTensor::new(vec![], vec![]).is_err());
        assert!(LatentTensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy(&t(&[1.0, 2.0, 2.0])), 9.0);
        assert_eq!(energy(&t(&[0.0, 0.0, 0.0])), 0.0);
    }

    #[test]
    fn energy_matches_compensated_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.gen_range(1..300);
            let scale = 10f64.powi(rng.gen_range(-3..4));
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
            let squares: Vec<f64> = v.iter().map(|x| x * x).collect();
            let oracle = kahan_oracle(&squares);
            let got = energy(&t(&v));
            assert!(
                (got - oracle).abs() <= 1e-12 * oracle.abs(),
                "{got} vs {oracle}"
            );
        }
    }

    #[test]
    fn exact_sum_cancellation() {
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum(std::iter::empty()), 0.0);
        assert_eq!(exact_sum([f64::MAX, f64::MAX]), f64::INFINITY);
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[5.0], 0.0).unwrap(), 5.0);
        assert_eq!(percentile(&[5.0], 37.0).unwrap(), 5.0);
        assert_eq!(percentile(&[5.0], 100.0).unwrap(), 5.0);
        let q = [1.0, 4.0, 9.0, 16.0, 25.0];
        // rank 1.8 -> 4 + 0.8 * 5, rank 2.2 -> 9 + 0.2 * 7
        assert!((percentile(&q, 45.0).unwrap() - 8.0).abs() < 1e-12);
        assert!((percentile(&q, 55.0).unwrap() - 10.4).abs() < 1e-12);
        // order of the input does not matter
        assert_eq!(
            percentile(&[25.0, 1.0, 16.0, 4.0, 9.0], 45.0).unwrap(),
            percentile(&q, 45.0).unwrap()
        );
    }

    #[test]
    fn percentile_errors() {
        assert!(matches!(percentile(&[], 50.0), Err(Error::EmptyInput)));
        assert!(matches!(
            percentile(&[1.0], 101.0),
            Err(Error::InvalidPercentile(_))
        ));
        assert!(matches!(
            percentile(&[1.0], -0.5),
            Err(Error::InvalidPercentile(_))
        ));
        assert!(matches!(
            percentile(&[1.0, f64::NAN], 5.0),
            Err(Error::NonFiniteValue { index: 1 })
        ));
    }

    #[test]
    fn window_validation() {
        let w = RobustWindow::default();
        assert_eq!((w.low(), w.high()), (45.0, 55.0));
        assert!(RobustWindow::new(55.0, 45.0).is_err());
        assert!(RobustWindow::new(50.0, 50.0).is_err());
        assert!(RobustWindow::new(-1.0, 50.0).is_err());
        assert!(RobustWindow::new(0.0, 100.5).is_err());
        assert!(RobustWindow::new(f64::NAN, 50.0).is_err());
        assert!(RobustWindow::new(0.0, 100.0).is_ok());
    }

    #[test]
    fn robust_energy_examples() {
        let r = robust_energy(&t(&[1.0, 2.0, 3.0, 4.0, 5.0]), RobustWindow::default());
        assert_eq!(r.energy, 9.0);
        assert_eq!(r.count, 1);
        assert!(!r.fell_back);
        assert!((r.p_low - 8.0).abs() < 1e-12 && (r.p_high - 10.4).abs() < 1e-12);

        let x = t(&[0.3, -1.7, 2.2, 0.0, -0.4, 9.1]);
        let full = robust_energy(&x, RobustWindow::FULL);
        assert_eq!(full.energy, energy(&x));
        assert_eq!(full.count, x.len());

        let c = 1.5;
        let r = robust_energy(&t(&[c, c, -c, c]), RobustWindow::new(10.0, 20.0).unwrap());
        assert_eq!(r.energy, 4.0 * c * c);
        assert_eq!(r.count, 4);
    }

    #[test]
    fn empty_window_falls_back_to_full_energy() {
        // q = [0, 100]; the 45-55 band is [45, 55] and admits neither element.
        let x = t(&[0.0, 10.0]);
        let r = robust_energy(&x, RobustWindow::default());
        assert!(r.fell_back);
        assert_eq!(r.count, 2);
        assert_eq!(r.energy, 100.0);
    }

    fn small_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, 1..40)
    }

    proptest! {
        #[test]
        fn full_window_is_plain_energy(v in small_vec()) {
            let x = t(&v);
            prop_assert_eq!(robust_energy(&x, RobustWindow::FULL).energy, energy(&x));
        }

        #[test]
        fn robust_energy_scale_equivariant(v in small_vec(), a in 0.01f64..100.0, l in 0.0f64..99.0, width in 1.0f64..100.0) {
            let w = RobustWindow::new(l, (l + width).min(100.0)).unwrap();
            let x = t(&v);
            let base = robust_energy(&x, w).energy;
            let scaled = robust_energy(&x.scaled(a).unwrap(), w).energy;
            prop_assert!((scaled - a * a * base).abs() <= 1e-9 * (a * a * base).abs().max(f64::MIN_POSITIVE));
        }

        #[test]
        fn robust_energy_permutation_invariant(v in small_vec(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = v.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let w = RobustWindow::default();
            prop_assert_eq!(robust_energy(&t(&v), w), robust_energy(&t(&shuffled), w));
        }

        #[test]
        fn percentile_within_range(v in small_vec(), p in 0.0f64..=100.0) {
            let got = percentile(&v, p).unwrap();
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= got && got <= hi);
        }

        #[test]
        fn windowed_sum_bounded_by_energy(v in small_vec()) {
            let x = t(&v);
            let r = robust_energy(&x, RobustWindow::default());
            prop_assert!(r.count <= x.len());
            prop_assert!(r.p_low <= r.p_high);
            if !r.fell_back {
                prop_assert!(energy(&x) >= r.energy);
            }
        }
    }
}
