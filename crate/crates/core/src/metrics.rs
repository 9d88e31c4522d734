//! Forecast error metrics.

use crate::error::{Error, Result};

fn check(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() || y.is_empty() {
        return Err(Error::Dimension {
            op: "metric",
            left: (y.len(), 1),
            right: (y_hat.len(), 1),
        });
    }
    Ok(())
}

/// `(1/H) Σ (y − ŷ)²`
pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    Ok(y.iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y.len() as f64)
}

/// `(1/H) Σ |y − ŷ|`
pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Running mean of per-window metrics, accumulated in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricSums {
    pub sq_err: f64,
    pub abs_err: f64,
    pub elements: usize,
    pub windows: usize,
}

impl MetricSums {
    pub fn add_window(&mut self, y: &[f64], y_hat: &[f64]) -> Result<()> {
        check(y, y_hat)?;
        for (a, b) in y.iter().zip(y_hat) {
            let d = a - b;
            self.sq_err += d * d;
            self.abs_err += d.abs();
        }
        self.elements += y.len();
        self.windows += 1;
        Ok(())
    }

    pub fn mse(&self) -> f64 {
        self.sq_err / self.elements.max(1) as f64
    }

    pub fn mae(&self) -> f64 {
        self.abs_err / self.elements.max(1) as f64
    }
}
