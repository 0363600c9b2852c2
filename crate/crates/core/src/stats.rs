//! Order-fixed summary statistics.

/// Pairwise summation over the slice in index order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Summary {
    /// Mean and population std of `xs`. Empty input gives NaN statistics.
    pub fn of(xs: &[f64]) -> Self {
        let count = xs.len();
        if count == 0 {
            return Summary { count, mean: f64::NAN, std: f64::NAN };
        }
        // shifted by the first value so that constant input has exactly zero spread
        let shift = xs[0];
        let dev: Vec<f64> = xs.iter().map(|x| x - shift).collect();
        let dev_mean = pairwise_sum(&dev) / count as f64;
        let sq: Vec<f64> = dev.iter().map(|d| (d - dev_mean) * (d - dev_mean)).collect();
        let std = (pairwise_sum(&sq) / count as f64).sqrt();
        Summary { count, mean: shift + dev_mean, std }
    }

    /// Standard error of the mean, using the unbiased variance.
    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        let n = self.count as f64;
        self.std * (n / (n - 1.0)).sqrt() / n.sqrt()
    }
}

/// Standard error of an empirical frequency `hits / total` around `p`.
pub fn binomial_stderr(p: f64, total: usize) -> f64 {
    (p * (1.0 - p) / total as f64).sqrt()
}
