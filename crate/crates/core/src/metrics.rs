//! Batch summaries of trajectories and terminal samples.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::latent::{exact_sum, LatentTensor};
use crate::toy::TrajectoryLog;

/// Batch statistics for one denoising step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepSummary {
    pub step: usize,
    pub mean_ratio: f64,
    pub max_ratio: f64,
    pub fallback_frac: f64,
    pub mean_moment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub steps: Vec<StepSummary>,
}

impl TraceSummary {
    /// Mean of the per-step mean ratios.
    pub fn overall_mean_ratio(&self) -> f64 {
        self.steps.iter().map(|s| s.mean_ratio).sum::<f64>() / self.steps.len() as f64
    }

    pub fn overall_max_ratio(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.max_ratio)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn overall_fallback_frac(&self) -> f64 {
        self.steps.iter().map(|s| s.fallback_frac).sum::<f64>() / self.steps.len() as f64
    }
}

/// Per-step mean/max of `e_cfg / e_c`, fallback fraction and mean state moment.
pub fn trace_summary(logs: &[TrajectoryLog]) -> Result<TraceSummary> {
    let first = logs.first().ok_or(Error::EmptyBatch)?;
    let len = first.len();
    if let Some(bad) = logs.iter().find(|l| l.len() != len) {
        return Err(Error::RaggedLogs {
            expected: len,
            found: bad.len(),
        });
    }
    let n = logs.len() as f64;
    let steps = (0..len)
        .map(|i| {
            let mut sum_ratio = 0.0;
            let mut max_ratio = f64::NEG_INFINITY;
            let mut fallbacks = 0usize;
            let mut sum_moment = 0.0;
            for log in logs {
                let r = log[i].ratio();
                sum_ratio += r;
                max_ratio = max_ratio.max(r);
                fallbacks += usize::from(log[i].fallback_used);
                sum_moment += log[i].moment;
            }
            StepSummary {
                step: first[i].step,
                mean_ratio: sum_ratio / n,
                max_ratio,
                fallback_frac: fallbacks as f64 / n,
                mean_moment: sum_moment / n,
            }
        })
        .collect();
    Ok(TraceSummary { steps })
}

fn uniform_len(samples: &[LatentTensor]) -> Result<usize> {
    let first = samples.first().ok_or(Error::EmptyBatch)?;
    for s in samples {
        first.same_shape(s)?;
    }
    Ok(first.len())
}

/// Componentwise mean and the dimension-normalized second moment `mean(||x||^2) / d`.
pub fn moment_stats(samples: &[LatentTensor]) -> Result<(Vec<f64>, f64)> {
    let d = uniform_len(samples)?;
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    let mut second = 0.0;
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.data()) {
            *m += v;
            second += v * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    Ok((mean, second / (n * d as f64)))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn mean_pairwise(a: &[LatentTensor], b: &[LatentTensor]) -> f64 {
    let pairs = a
        .iter()
        .flat_map(|x| b.iter().map(move |y| distance(x.data(), y.data())));
    exact_sum(pairs) / (a.len() as f64 * b.len() as f64)
}

/// Two-sample energy distance `2 E|A-B| - E|A-A'| - E|B-B'|`.
///
/// Uses the V-statistic (all pairs, diagonal included) so that identical
/// sets give exactly zero. Sums are correctly rounded, which makes the
/// result exactly symmetric in its arguments.
pub fn energy_distance(a: &[LatentTensor], b: &[LatentTensor]) -> Result<f64> {
    let da = uniform_len(a)?;
    let db = uniform_len(b)?;
    if da != db || a[0].shape() != b[0].shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a[0].shape(),
            b[0].shape()
        )));
    }
    let cross = mean_pairwise(a, b);
    let within_a = mean_pairwise(a, a);
    let within_b = mean_pairwise(b, b);
    Ok(exact_sum([2.0 * cross, -within_a, -within_b]).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{trajectory_rng, StepRecord};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn t(data: &[f64]) -> LatentTensor {
        LatentTensor::from_vec(data.to_vec()).unwrap()
    }

    fn rec(step: usize, e_c: f64, e_cfg: f64, fallback_used: bool, moment: f64) -> StepRecord {
        StepRecord {
            step,
            e_c,
            e_cfg,
            e_cfg_raw: e_cfg,
            scale: 1.0,
            fallback_used,
            moment,
        }
    }

    #[test]
    fn single_log_summary_is_the_log() {
        let log = vec![rec(2, 2.0, 3.0, false, 0.5), rec(1, 4.0, 4.0, true, 0.25)];
        let s = trace_summary(&[log]).unwrap();
        assert_eq!(
            s.steps[0],
            StepSummary {
                step: 2,
                mean_ratio: 1.5,
                max_ratio: 1.5,
                fallback_frac: 0.0,
                mean_moment: 0.5
            }
        );
        assert_eq!(
            s.steps[1],
            StepSummary {
                step: 1,
                mean_ratio: 1.0,
                max_ratio: 1.0,
                fallback_frac: 1.0,
                mean_moment: 0.25
            }
        );
    }

    #[test]
    fn duplicated_logs_have_mean_equal_max() {
        let log = vec![
            rec(3, 1.0, 7.0, false, 1.0),
            rec(2, 3.0, 1.0, false, 2.0),
            rec(1, 0.1, 0.3, false, 3.0),
        ];
        let s = trace_summary(&[log.clone(), log]).unwrap();
        for step in &s.steps {
            assert_eq!(step.mean_ratio, step.max_ratio);
        }
    }

    #[test]
    fn summary_matches_naive_two_pass_oracle() {
        let mut rng = trajectory_rng(100, 0);
        let logs: Vec<TrajectoryLog> = (0..100)
            .map(|_| {
                (1..=20)
                    .rev()
                    .map(|s| {
                        rec(
                            s,
                            rng.gen_range(0.1..5.0),
                            rng.gen_range(0.1..5.0),
                            rng.gen_bool(0.2),
                            rng.gen_range(0.0..3.0),
                        )
                    })
                    .collect()
            })
            .collect();
        let s = trace_summary(&logs).unwrap();
        for i in 0..20 {
            let ratios: Vec<f64> = logs.iter().map(|l| l[i].e_cfg / l[i].e_c).collect();
            let mut total = 0.0;
            for r in &ratios {
                total += r;
            }
            let mut max = ratios[0];
            for r in &ratios {
                if *r > max {
                    max = *r;
                }
            }
            let mut fb = 0.0;
            let mut mom = 0.0;
            for l in &logs {
                if l[i].fallback_used {
                    fb += 1.0;
                }
                mom += l[i].moment;
            }
            assert!((s.steps[i].mean_ratio - total / 100.0).abs() <= 1e-12);
            assert_eq!(s.steps[i].max_ratio, max);
            assert!((s.steps[i].fallback_frac - fb / 100.0).abs() <= 1e-12);
            assert!((s.steps[i].mean_moment - mom / 100.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn summary_errors() {
        assert!(matches!(trace_summary(&[]), Err(Error::EmptyBatch)));
        let a = vec![rec(1, 1.0, 1.0, false, 0.0)];
        assert!(matches!(
            trace_summary(&[a, vec![]]),
            Err(Error::RaggedLogs {
                expected: 1,
                found: 0
            })
        ));
    }

    #[test]
    fn moment_examples() {
        let (mean, m2) = moment_stats(&[t(&[1.0]), t(&[3.0])]).unwrap();
        assert_eq!((mean, m2), (vec![2.0], 5.0));
        let (mean, m2) = moment_stats(&vec![t(&[0.0, 0.0]); 4]).unwrap();
        assert_eq!((mean, m2), (vec![0.0, 0.0], 0.0));
        assert!(matches!(moment_stats(&[]), Err(Error::EmptyBatch)));
        assert!(matches!(
            moment_stats(&[t(&[1.0]), t(&[1.0, 2.0])]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn moment_of_gaussian_batch_within_standard_errors() {
        let (mu, sigma, n) = ([1.0, -0.5, 2.0], 0.7, 4000);
        let mut rng = trajectory_rng(8, 0);
        let samples: Vec<LatentTensor> = (0..n)
            .map(|_| t(&mu.map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal))))
            .collect();
        let (mean, m2) = moment_stats(&samples).unwrap();
        let se = sigma / (n as f64).sqrt();
        for i in 0..3 {
            assert!((mean[i] - mu[i]).abs() < 3.0 * se);
        }
        // E||x||^2/d = sigma^2 + |mu|^2/d; per-sample variance of ||x||^2/d
        // is (2 d sigma^4 + 4 sigma^2 |mu|^2) / d^2.
        let d = 3.0;
        let mu2: f64 = mu.iter().map(|m| m * m).sum();
        let expect = sigma * sigma + mu2 / d;
        let se2 =
            ((2.0 * d * sigma.powi(4) + 4.0 * sigma * sigma * mu2) / (d * d) / n as f64).sqrt();
        assert!((m2 - expect).abs() < 3.0 * se2, "{m2} vs {expect}");
    }

    #[test]
    fn energy_distance_examples() {
        let a = vec![t(&[0.0, 1.0]), t(&[2.0, -1.0]), t(&[0.5, 0.5])];
        assert_eq!(energy_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(energy_distance(&[t(&[0.0])], &[t(&[1.0])]).unwrap(), 2.0);
        assert!(matches!(energy_distance(&[], &a), Err(Error::EmptyBatch)));
        assert!(matches!(
            energy_distance(&[t(&[0.0])], &a),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn energy_distance_symmetric_and_nonnegative() {
        let mut rng = trajectory_rng(3, 0);
        for _ in 0..50 {
            let na = rng.gen_range(1..20);
            let nb = rng.gen_range(1..20);
            let a: Vec<LatentTensor> = (0..na)
                .map(|_| t(&[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]))
                .collect();
            let b: Vec<LatentTensor> = (0..nb)
                .map(|_| t(&[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]))
                .collect();
            let ab = energy_distance(&a, &b).unwrap();
            assert_eq!(ab, energy_distance(&b, &a).unwrap());
            assert!(ab >= 0.0);
        }
    }

    #[test]
    fn shifted_gaussians_are_farther_than_same_distribution() {
        let sigma = 1.0;
        let draw = |seed: u64, stream: u64, shift: f64| -> Vec<LatentTensor> {
            let mut rng = trajectory_rng(seed, stream);
            (0..512)
                .map(|_| t(&[shift + sigma * rng.sample::<f64, _>(StandardNormal)]))
                .collect()
        };
        for seed in 0..20 {
            let base = draw(seed, 0, 0.0);
            let same = energy_distance(&base, &draw(seed, 1, 0.0)).unwrap();
            let shifted = energy_distance(&base, &draw(seed, 2, 2.0 * sigma)).unwrap();
            assert!(shifted > same, "seed {seed}: {shifted} <= {same}");
        }
    }
}
