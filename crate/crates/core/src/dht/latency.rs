use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A latency distribution in simulated milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LatencyDist {
    Constant { ms: f64 },
    Uniform { min_ms: f64, max_ms: f64 },
    /// Heavy-tailed; `scale_ms` is the minimum value.
    Pareto { scale_ms: f64, shape: f64 },
    Empirical { samples_ms: Vec<f64> },
}

impl LatencyDist {
    pub fn validate(&self) -> Result<(), String> {
        let ok = match self {
            Self::Constant { ms } => *ms >= 0.0 && ms.is_finite(),
            Self::Uniform { min_ms, max_ms } => *min_ms >= 0.0 && min_ms <= max_ms && max_ms.is_finite(),
            Self::Pareto { scale_ms, shape } => *scale_ms > 0.0 && *shape > 0.0 && scale_ms.is_finite(),
            Self::Empirical { samples_ms } => {
                !samples_ms.is_empty() && samples_ms.iter().all(|s| *s >= 0.0 && s.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid latency distribution {self:?}"))
        }
    }

    pub fn sample_ms<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Constant { ms } => *ms,
            Self::Uniform { min_ms, max_ms } => {
                if min_ms == max_ms {
                    *min_ms
                } else {
                    Uniform::new_inclusive(*min_ms, *max_ms).sample(rng)
                }
            }
            Self::Pareto { scale_ms, shape } => {
                let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                scale_ms / u.powf(1.0 / shape)
            }
            Self::Empirical { samples_ms } => *samples_ms.choose(rng).expect("validated non-empty"),
        }
    }

    /// Inverse CDF at `p` in [0, 1].
    pub fn quantile_ms(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self {
            Self::Constant { ms } => *ms,
            Self::Uniform { min_ms, max_ms } => min_ms + p * (max_ms - min_ms),
            Self::Pareto { scale_ms, shape } => scale_ms / (1.0 - p).max(f64::MIN_POSITIVE).powf(1.0 / shape),
            Self::Empirical { samples_ms } => {
                let mut sorted = samples_ms.clone();
                sorted.sort_by(f64::total_cmp);
                let i = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
                sorted[i]
            }
        }
    }

    /// Typical value.
    pub fn nominal_ms(&self) -> f64 {
        match self {
            Self::Constant { ms } => *ms,
            Self::Uniform { min_ms, max_ms } => (min_ms + max_ms) / 2.0,
            Self::Pareto { scale_ms, shape } if *shape > 1.0 => scale_ms * shape / (shape - 1.0),
            Self::Pareto { scale_ms, .. } => *scale_ms,
            Self::Empirical { samples_ms } => samples_ms.iter().sum::<f64>() / samples_ms.len() as f64,
        }
    }
}

/// Per-operation latencies. A PUT completes once all replicas answered, so
/// its latency is the maximum of `replication` draws from `put_replica`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub get: LatencyDist,
    pub put_replica: LatencyDist,
    /// One relay hop.
    pub forward: LatencyDist,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            get: LatencyDist::Uniform { min_ms: 10.0, max_ms: 30.0 },
            put_replica: LatencyDist::Pareto { scale_ms: 250.0, shape: 2.0 },
            forward: LatencyDist::Uniform { min_ms: 10.0, max_ms: 30.0 },
        }
    }
}

impl LatencyModel {
    pub fn zero() -> Self {
        let zero = LatencyDist::Constant { ms: 0.0 };
        Self { get: zero.clone(), put_replica: zero.clone(), forward: zero }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.get.validate()?;
        self.put_replica.validate()?;
        self.forward.validate()
    }

    /// Nominal duration of one replicated PUT.
    pub fn nominal_put_ms(&self, replication: u32) -> f64 {
        match &self.put_replica {
            // Expected maximum of n Pareto draws grows like n^(1/shape).
            LatencyDist::Pareto { scale_ms, shape } => scale_ms * f64::from(replication.max(1)).powf(1.0 / shape),
            d => d.nominal_ms(),
        }
    }

    /// `q`-quantile of one replicated PUT: the maximum of `replication`
    /// draws is below x with probability F(x)^n.
    pub fn put_quantile_ms(&self, replication: u32, q: f64) -> f64 {
        self.put_replica.quantile_ms(q.clamp(0.0, 1.0).powf(1.0 / f64::from(replication.max(1))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn put_quantile_matches_sampled_maximum() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let m = LatencyModel::default();
        let q90 = m.put_quantile_ms(19, 0.9);
        let n = 20_000;
        let below = (0..n)
            .filter(|_| (0..19).map(|_| m.put_replica.sample_ms(&mut rng)).fold(0.0, f64::max) <= q90)
            .count();
        let frac = below as f64 / n as f64;
        assert!((frac - 0.9).abs() < 0.01, "{frac}");
        let e = LatencyDist::Empirical { samples_ms: vec![5.0, 1.0, 3.0] };
        assert_eq!(e.quantile_ms(0.0), 1.0);
        assert_eq!(e.quantile_ms(0.5), 3.0);
        assert_eq!(e.quantile_ms(1.0), 5.0);
    }

    #[test]
    fn samples_stay_in_range() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let u = LatencyDist::Uniform { min_ms: 2.0, max_ms: 3.0 };
        let p = LatencyDist::Pareto { scale_ms: 100.0, shape: 2.0 };
        let e = LatencyDist::Empirical { samples_ms: vec![1.0, 7.0] };
        for _ in 0..1000 {
            assert!((2.0..=3.0).contains(&u.sample_ms(&mut rng)));
            assert!(p.sample_ms(&mut rng) >= 100.0);
            assert!([1.0, 7.0].contains(&e.sample_ms(&mut rng)));
        }
    }

    #[test]
    fn pareto_mean_matches() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let p = LatencyDist::Pareto { scale_ms: 1.0, shape: 3.0 };
        let n = 200_000;
        let mean = (0..n).map(|_| p.sample_ms(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.5).abs() < 0.02, "{mean}");
    }

    #[test]
    fn validation() {
        assert!(LatencyDist::Uniform { min_ms: 3.0, max_ms: 2.0 }.validate().is_err());
        assert!(LatencyDist::Empirical { samples_ms: vec![] }.validate().is_err());
        assert!(LatencyModel::default().validate().is_ok());
    }
}
