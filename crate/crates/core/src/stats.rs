//! Small numeric helpers shared across modules.

/// Pairwise (cascade) summation; result depends only on input order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    pairwise_sum(values) / values.len() as f64
}

/// Mean and population variance of a stream of samples.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0.0 {
            0.0
        } else {
            self.sum / self.n
        }
    }

    pub fn variance(&self) -> f64 {
        if self.n == 0.0 {
            return 0.0;
        }
        let m = self.mean();
        (self.sum_sq / self.n - m * m).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_ints() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499500.0);
        assert_eq!(mean(&[]), 0.0);
    }

    #[test]
    fn moments() {
        let mut m = Moments::default();
        for v in [0.0, 1.0, 0.0, 1.0] {
            m.push(v);
        }
        assert_eq!(m.mean(), 0.5);
        assert_eq!(m.variance(), 0.25);
    }
}
