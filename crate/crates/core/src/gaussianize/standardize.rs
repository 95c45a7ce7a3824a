//! Shared standardization with a temperature: `γ·(x − mean)/std`.

use crate::error::{Error, Result};
use crate::stage::{check_cotangent, Pullback, Stage};
use crate::tensor::Tensor;

/// Sample standard deviation (`n − 1` normalization).
fn mean_std(x: &Tensor) -> Result<(f64, f64)> {
    let n = x.len();
    if n < 2 {
        return Err(Error::Variance);
    }
    let m = x.mean();
    let var = x.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::Variance);
    }
    Ok((m, var.sqrt()))
}

pub fn standardize(x: &Tensor, gamma: f64) -> Result<Tensor> {
    StandardizeStage::new(gamma)?.apply(x)
}

pub struct StandardizeStage {
    gamma: f64,
}

impl StandardizeStage {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {gamma}")));
        }
        Ok(Self { gamma })
    }
}

impl Stage for StandardizeStage {
    fn name(&self) -> &str {
        "standardize"
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Pullback)> {
        let (m, sd) = mean_std(x)?;
        let gamma = self.gamma;
        let z = x.map(|v| gamma * (v - m) / sd);
        let zc = z.clone();
        let dims = x.dims().to_vec();
        let n1 = (x.len() - 1) as f64;
        let pb = Pullback::new(move |g| {
            check_cotangent(&dims, g)?;
            let gm = g.mean();
            let gz = g.dot(&zc) / (gamma * gamma * n1);
            g.zip_map(&zc, |gi, zi| gamma / sd * (gi - gm - zi * gz))
        });
        Ok((z, pb))
    }
}
