//! Per-participant objective `r_i(q) = ρ_i(-R_i - qᵀ(P - ...))` evaluated in
//! closed form from the joint moments of `(R_i, P)`.

use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};

use crate::market_model::{AssetModel, EllipseKind, Participant, RiskSpec};
use crate::{Error, Matrix, Result, Vector};

/// Absolute floor for the ES square-root argument.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Expected shortfall of the unit-variance standardized variable of `kind`.
pub fn es_standardized(kind: EllipseKind, alpha: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParam(format!("alpha = {alpha} outside [0,1)")));
    }
    if alpha == 0.0 {
        return Ok(0.0);
    }
    match kind {
        EllipseKind::Gaussian => {
            let n = Normal::standard();
            Ok(n.pdf(n.inverse_cdf(alpha)) / (1.0 - alpha))
        }
        EllipseKind::StudentT { nu } => {
            if !(nu > 2.0) {
                return Err(Error::InvalidParam(format!("nu = {nu} must exceed 2")));
            }
            let t = StudentsT::new(0.0, 1.0, nu).map_err(|e| Error::InvalidParam(e.to_string()))?;
            let x = t.inverse_cdf(alpha);
            let raw = t.pdf(x) * (nu + x * x) / ((1.0 - alpha) * (nu - 1.0));
            Ok(((nu - 2.0) / nu).sqrt() * raw)
        }
    }
}

/// Quantile of the unit-variance standardized variable of `kind`.
pub fn standardized_quantile(kind: EllipseKind, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParam(format!("quantile level {alpha} outside (0,1)")));
    }
    match kind {
        EllipseKind::Gaussian => Ok(Normal::standard().inverse_cdf(alpha)),
        EllipseKind::StudentT { nu } => {
            if !(nu > 2.0) {
                return Err(Error::InvalidParam(format!("nu = {nu} must exceed 2")));
            }
            let t = StudentsT::new(0.0, 1.0, nu).map_err(|e| Error::InvalidParam(e.to_string()))?;
            Ok(((nu - 2.0) / nu).sqrt() * t.inverse_cdf(alpha))
        }
    }
}

fn check_dims(p: &Participant, a: &AssetModel, q: &Vector) -> Result<()> {
    let m = a.dim();
    if p.cov_r.len() != m || q.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "participant {}: m = {m}, |cov_r| = {}, |q| = {}",
            p.id,
            p.cov_r.len(),
            q.len()
        )));
    }
    Ok(())
}

fn entropic_ok(a: &AssetModel) -> Result<()> {
    match a.ellipse {
        EllipseKind::Gaussian => Ok(()),
        EllipseKind::StudentT { .. } => Err(Error::UnsupportedCombination(
            "entropic risk with Student-t payoffs".into(),
        )),
    }
}

/// `(1, q)ᵀ Γ_i (1, q)`, the variance of `R_i + qᵀP`.
pub fn position_variance(p: &Participant, a: &AssetModel, q: &Vector) -> f64 {
    p.var_r + 2.0 * q.dot(&p.cov_r) + q.dot(&(&a.gamma * q))
}

/// Risk of participant `p` holding `q`, gross of the price paid.
pub fn objective_r(p: &Participant, a: &AssetModel, q: &Vector) -> Result<f64> {
    check_dims(p, a, q)?;
    let base = -p.er - q.dot(&a.mu);
    match p.risk {
        RiskSpec::Entropic { varrho } => {
            entropic_ok(a)?;
            Ok(base + 0.5 * varrho * position_variance(p, a, q))
        }
        RiskSpec::ExpectedShortfall { alpha } => {
            let es = es_standardized(a.ellipse, alpha)?;
            Ok(base + es * position_variance(p, a, q).max(0.0).sqrt())
        }
    }
}

/// Analytic gradient of [`objective_r`].
pub fn grad_r(p: &Participant, a: &AssetModel, q: &Vector) -> Result<Vector> {
    check_dims(p, a, q)?;
    let lin = &p.cov_r + &a.gamma * q;
    match p.risk {
        RiskSpec::Entropic { varrho } => {
            entropic_ok(a)?;
            Ok(lin * varrho - &a.mu)
        }
        RiskSpec::ExpectedShortfall { alpha } => {
            let es = es_standardized(a.ellipse, alpha)?;
            let v = position_variance(p, a, q);
            if v <= DEGENERACY_TOL {
                return Err(Error::DegenerateRisk(p.id.clone()));
            }
            Ok(lin * (es / v.sqrt()) - &a.mu)
        }
    }
}

/// Analytic Hessian of [`objective_r`].
pub fn hessian_r(p: &Participant, a: &AssetModel, q: &Vector) -> Result<Matrix> {
    check_dims(p, a, q)?;
    match p.risk {
        RiskSpec::Entropic { varrho } => {
            entropic_ok(a)?;
            Ok(&a.gamma * varrho)
        }
        RiskSpec::ExpectedShortfall { alpha } => {
            let es = es_standardized(a.ellipse, alpha)?;
            let v = position_variance(p, a, q);
            if v <= DEGENERACY_TOL {
                return Err(Error::DegenerateRisk(p.id.clone()));
            }
            let s = v.sqrt();
            let lin = &p.cov_r + &a.gamma * q;
            Ok((&a.gamma / s - &lin * lin.transpose() / (s * v)) * es)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn asset() -> AssetModel {
        AssetModel::single(2.0, 0.2, EllipseKind::Gaussian)
    }

    fn v1(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    #[test]
    fn gaussian_es_values() {
        assert_eq!(es_standardized(EllipseKind::Gaussian, 0.0).unwrap(), 0.0);
        let v = es_standardized(EllipseKind::Gaussian, 0.975).unwrap();
        assert!((v - 2.33780).abs() < 1e-4, "{v}");
    }

    #[test]
    fn es_rejects_bad_params() {
        assert!(es_standardized(EllipseKind::Gaussian, 1.0).is_err());
        assert!(es_standardized(EllipseKind::Gaussian, -0.1).is_err());
        assert!(es_standardized(EllipseKind::StudentT { nu: 2.0 }, 0.9).is_err());
    }

    /// ES as the average of standardized quantiles above alpha.
    fn es_quadrature(kind: EllipseKind, alpha: f64) -> f64 {
        // substitution u = 1 - (1-alpha) s^2 concentrates nodes near u = 1
        let n = 200_000;
        let mut acc = 0.0;
        for k in 0..n {
            let s = (k as f64 + 0.5) / n as f64;
            let u = 1.0 - (1.0 - alpha) * s * s;
            let w = 2.0 * (1.0 - alpha) * s / n as f64;
            acc += standardized_quantile(kind, u).unwrap() * w;
        }
        acc / (1.0 - alpha)
    }

    #[test]
    fn student_t_closed_form_matches_quadrature() {
        let kind = EllipseKind::StudentT { nu: 2.5 };
        let closed = es_standardized(kind, 0.975).unwrap();
        let quad = es_quadrature(kind, 0.975);
        assert!((closed - quad).abs() < 1e-6 * closed.max(1.0) * 10.0, "{closed} vs {quad}");
        let g = es_standardized(EllipseKind::Gaussian, 0.975).unwrap();
        assert!((g - es_quadrature(EllipseKind::Gaussian, 0.975)).abs() < 1e-6);
    }

    #[test]
    fn es_increasing_in_alpha() {
        for kind in [EllipseKind::Gaussian, EllipseKind::StudentT { nu: 4.0 }] {
            let mut prev = es_standardized(kind, 0.5).unwrap();
            for k in 1..50 {
                let a = 0.5 + 0.49 * k as f64 / 50.0;
                let v = es_standardized(kind, a).unwrap();
                assert!(v > prev);
                prev = v;
            }
        }
    }

    #[test]
    fn entropic_normalization() {
        let p = Participant::member("0", RiskSpec::Entropic { varrho: 1.0 }, 0.0, 0.0, v1(0.0));
        let a = AssetModel::single(0.0, 0.2, EllipseKind::Gaussian);
        assert_eq!(objective_r(&p, &a, &v1(0.0)).unwrap(), 0.0);
        let g = grad_r(&p, &asset(), &v1(0.0)).unwrap();
        assert_eq!(g[0], -2.0);
    }

    #[test]
    fn entropic_student_rejected() {
        let p = Participant::member("0", RiskSpec::Entropic { varrho: 1.0 }, 0.0, 0.0, v1(0.0));
        let a = AssetModel::single(0.0, 0.2, EllipseKind::StudentT { nu: 3.0 });
        assert!(matches!(objective_r(&p, &a, &v1(0.0)), Err(Error::UnsupportedCombination(_))));
    }

    #[test]
    fn es_member_at_post_default_position_prices_at_p_prime() {
        // member 1 of the 15-member ES example after liquidation of member 15
        let p = Participant::member("1", RiskSpec::ExpectedShortfall { alpha: 0.975 }, 0.0, 0.09, v1(0.048));
        let g = grad_r(&p, &asset(), &v1(-1.28)).unwrap();
        assert!((-g[0] - 2.04).abs() < 5e-3, "{}", -g[0]);
    }

    #[test]
    fn degenerate_es_gradient_errors() {
        let p = Participant::member("c", RiskSpec::ExpectedShortfall { alpha: 0.975 }, 0.0, 0.04, v1(0.04));
        assert!(matches!(grad_r(&p, &asset(), &v1(-1.0)), Err(Error::DegenerateRisk(_))));
        assert!(objective_r(&p, &asset(), &v1(-1.0)).is_ok());
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let gamma = Matrix::from_row_slice(2, 2, &[0.05, 0.01, 0.01, 0.03]);
        let a = AssetModel::new(Vector::from_vec(vec![1.0, 2.0]), gamma, EllipseKind::Gaussian);
        let p = Participant::member("x", RiskSpec::ExpectedShortfall { alpha: 0.95 }, 0.1, 0.2, Vector::from_vec(vec![0.02, -0.03]));
        let q = Vector::from_vec(vec![0.4, -1.1]);
        let h = hessian_r(&p, &a, &q).unwrap();
        let eps = 1e-6;
        for k in 0..2 {
            let mut qp = q.clone();
            qp[k] += eps;
            let mut qm = q.clone();
            qm[k] -= eps;
            let col = (grad_r(&p, &a, &qp).unwrap() - grad_r(&p, &a, &qm).unwrap()) / (2.0 * eps);
            for r in 0..2 {
                assert!((col[r] - h[(r, k)]).abs() < 1e-6, "{} vs {}", col[r], h[(r, k)]);
            }
        }
    }
}
