//! Sample means with standard errors.

use num_complex::Complex64;

/// Running mean/variance accumulator (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct Running {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Running {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_err(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Mean and standard error of a real sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let mut r = Running::default();
    xs.iter().for_each(|&x| r.push(x));
    (r.mean(), r.std_err())
}

/// Complex sample mean with separate standard errors of the real and
/// imaginary parts.
#[derive(Debug, Clone, Copy)]
pub struct ComplexMean {
    pub mean: Complex64,
    pub se_re: f64,
    pub se_im: f64,
}

impl ComplexMean {
    pub fn of(xs: &[Complex64]) -> Self {
        let mut re = Running::default();
        let mut im = Running::default();
        for z in xs {
            re.push(z.re);
            im.push(z.im);
        }
        ComplexMean { mean: Complex64::new(re.mean(), im.mean()), se_re: re.std_err(), se_im: im.std_err() }
    }

    /// True when both parts are within `k` standard errors of `target`.
    /// A part with zero spread must match exactly up to rounding.
    pub fn within(&self, target: Complex64, k: f64) -> bool {
        let tol = |se: f64, t: f64| (k * se).max(1e-12 * t.abs().max(1e-300));
        (self.mean.re - target.re).abs() <= tol(self.se_re, target.re)
            && (self.mean.im - target.im).abs() <= tol(self.se_im, target.im)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_matches_direct() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let (m, se) = mean_se(&xs);
        assert!((m - 3.5).abs() < 1e-15);
        let var = xs.iter().map(|x| (x - 3.5f64).powi(2)).sum::<f64>() / 3.0;
        assert!((se - (var / 4.0).sqrt()).abs() < 1e-15);
    }
}
