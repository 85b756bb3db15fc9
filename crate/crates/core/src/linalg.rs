use nalgebra::{DMatrix, Schur};

const SCHUR_MAX_ITER: usize = 10_000;

/// Largest eigenvalue modulus.
///
/// The shifted-QR Schur iteration can stall on some matrices (zero diagonal
/// with a symmetric pattern, for one), so it runs with an iteration cap and
/// falls back to Gelfand's formula `ρ = lim ‖Aⁿ‖^{1/n}` via repeated
/// normalized squaring.
pub(crate) fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if let Some(schur) = Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER) {
        return schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
    }
    gelfand(m)
}

fn gelfand(m: &DMatrix<f64>) -> f64 {
    // invariant: A^p = exp(log_scale) · b
    let mut b = m.clone();
    let mut log_scale = 0.0;
    let mut p = 1.0f64;
    for _ in 0..48 {
        let n = b.norm();
        if n == 0.0 {
            return 0.0;
        }
        b /= n;
        log_scale += n.ln();
        b = &b * &b;
        log_scale *= 2.0;
        p *= 2.0;
    }
    let n = b.norm();
    if n == 0.0 {
        0.0
    } else {
        ((log_scale + n.ln()) / p).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fallback_agrees_with_schur() {
        let m = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, 0.1, 0.4, 0.3, 0.2, 0.0, 0.1]);
        let a = spectral_radius(&m);
        let b = gelfand(&m);
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn stalling_pattern_terminates() {
        // tridiagonal with zero diagonal; ρ = sqrt(2 · 0.05 · 0.1)
        let m = DMatrix::from_row_slice(3, 3, &[0.0, 0.05, 0.0, 0.1, 0.0, 0.05, 0.0, 0.1, 0.0]);
        let rho = spectral_radius(&m);
        assert!((rho - (2.0f64 * 0.005).sqrt()).abs() < 1e-9, "{rho}");
    }

    #[test]
    fn nilpotent_and_rotation() {
        let n = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(spectral_radius(&n) < 1e-6);
        let r = DMatrix::from_row_slice(2, 2, &[0.0, -0.9, 0.9, 0.0]);
        assert!((spectral_radius(&r) - 0.9).abs() < 1e-9);
        assert!((gelfand(&r) - 0.9).abs() < 1e-9);
    }
}
