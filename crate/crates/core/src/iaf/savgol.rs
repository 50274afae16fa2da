use nalgebra::DMatrix;

/// Savitzky-Golay convolution weights for a centred window.
#[derive(Debug, Clone)]
pub struct SavitzkyGolay {
    half: usize,
    smooth: Vec<f64>,
    slope: Vec<f64>,
}

impl SavitzkyGolay {
    /// `window` must be odd and greater than `order`.
    pub fn new(window: usize, order: usize) -> Option<Self> {
        if window.is_multiple_of(2) || window <= order {
            return None;
        }
        let half = window / 2;
        // Vandermonde over offsets -half..=half; row r of the pseudo-inverse
        // gives the weights for the r-th polynomial coefficient at offset 0.
        let a = DMatrix::from_fn(window, order + 1, |i, j| (i as f64 - half as f64).powi(j as i32));
        let pinv = (a.transpose() * &a).try_inverse()? * a.transpose();
        Some(Self {
            half,
            smooth: pinv.row(0).iter().copied().collect(),
            slope: if order >= 1 {
                pinv.row(1).iter().copied().collect()
            } else {
                vec![0.0; window]
            },
        })
    }

    fn convolve(&self, weights: &[f64], x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                weights
                    .iter()
                    .enumerate()
                    .map(|(k, w)| {
                        // Mirror at the ends; only the outermost bins are affected.
                        let j = i as isize + k as isize - self.half as isize;
                        let j = if j < 0 {
                            (-j) as usize
                        } else if j as usize >= n {
                            2 * (n - 1) - j as usize
                        } else {
                            j as usize
                        };
                        w * x[j.min(n - 1)]
                    })
                    .sum()
            })
            .collect()
    }

    pub fn smooth(&self, x: &[f64]) -> Vec<f64> {
        self.convolve(&self.smooth, x)
    }

    /// First derivative per sample step.
    pub fn derivative(&self, x: &[f64]) -> Vec<f64> {
        self.convolve(&self.slope, x)
    }
}
