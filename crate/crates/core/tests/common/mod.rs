#![allow(dead_code)]

use ccpftp::{AssetModel, EllipseKind, Exchange, Matrix, Participant, RiskSpec, Scenario, StrategyKind, StrategySpec, Vector};
use rand::Rng;

pub fn v1(x: f64) -> Vector {
    Vector::from_element(1, x)
}

/// Fifteen members with alternating covariances, as in the bundled files.
pub fn fifteen(risk: RiskSpec, ellipse: EllipseKind, kind: StrategyKind) -> Scenario {
    let ps: Vec<Participant> = (1..=15)
        .map(|i| {
            let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
            Participant::member(i.to_string(), risk, 0.0, 0.09 * (i * i) as f64, v1(sign * 0.048 * i as f64))
        })
        .collect();
    one_exchange(AssetModel::single(2.0, 0.2, ellipse), ps, "15", kind)
}

pub fn one_exchange(asset: AssetModel, ps: Vec<Participant>, defaulter: &str, kind: StrategyKind) -> Scenario {
    let m = asset.dim();
    Scenario {
        asset,
        exchanges: vec![Exchange {
            id: "D".into(),
            members: ps.iter().map(|p| p.id.clone()).collect(),
            clearing_rhs: Vector::zeros(m),
        }],
        participants: ps,
        defaulters: vec![defaulter.to_string()],
        strategy: StrategySpec::new(kind),
        xva: None,
    }
}

/// Well-conditioned SPD matrix.
pub fn random_gamma<R: Rng>(rng: &mut R, m: usize) -> Matrix {
    let b = Matrix::from_fn(m, m, |_, _| rng.random_range(-0.3..0.3));
    &b * b.transpose() + Matrix::identity(m, m) * rng.random_range(0.02..0.1)
}

/// Participant whose joint covariance with the payoffs is positive definite.
pub fn random_participant<R: Rng>(rng: &mut R, id: &str, risk: RiskSpec, gamma: &Matrix) -> Participant {
    let m = gamma.nrows();
    let cov = Vector::from_fn(m, |_, _| rng.random_range(-0.2..0.2));
    let gi = gamma.clone().cholesky().unwrap().inverse();
    let floor = cov.dot(&(&gi * &cov));
    Participant::member(id, risk, rng.random_range(-0.1..0.1), floor + rng.random_range(0.01..0.2), cov)
}

pub fn random_entropic_scenario<R: Rng>(rng: &mut R, m: usize, n: usize, kind: StrategyKind) -> Scenario {
    let gamma = random_gamma(rng, m);
    let mu = Vector::from_fn(m, |_, _| rng.random_range(1.0..3.0));
    let ps: Vec<Participant> = (0..n)
        .map(|k| {
            let risk = RiskSpec::Entropic { varrho: rng.random_range(0.3..3.0) };
            random_participant(rng, &format!("m{k:02}"), risk, &gamma)
        })
        .collect();
    let d = ps[rng.random_range(0..n)].id.clone();
    let mut s = one_exchange(AssetModel::new(mu, gamma.clone(), EllipseKind::Gaussian), ps, &d, kind);
    s.strategy.hedger_risk = Some(RiskSpec::Entropic { varrho: rng.random_range(0.3..3.0) });
    s
}
