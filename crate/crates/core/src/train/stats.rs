//! Summary statistics over repeated runs.

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (denominator `n − 1`); 0 for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Standardised mean difference `(mean_a − mean_b) / s_pooled`, with
/// `s_pooled² = ((n_a − 1)s_a² + (n_b − 1)s_b²) / (n_a + n_b − 2)`.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::UndefinedEffectSize(format!("need at least 2 runs per side, got {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = ((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b)) / (na + nb - 2.0);
    if !(pooled > 0.0) {
        return Err(Error::UndefinedEffectSize("pooled variance is zero".into()));
    }
    Ok((mean(a) - mean(b)) / pooled.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cases() {
        assert!((cohens_d(&[2.0, 4.0], &[1.0, 3.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(cohens_d(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap(), 0.0);
        assert!(matches!(cohens_d(&[1.0, 1.0], &[0.0, 0.0]), Err(Error::UndefinedEffectSize(_))));
        assert!(cohens_d(&[1.0], &[0.0, 2.0]).is_err());
        assert!((sample_std(&[2.0, 4.0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}
