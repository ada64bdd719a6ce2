mod common;

use ccpftp::equilibrium::solve;
use ccpftp::{
    pre_default_equilibria, resolve, resolve_with, AssetModel, EllipseKind, Participant, RiskSpec, StrategyKind,
    Vector,
};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// n + 1 members with equal ϱ, covariance ±δ on the last two, others zero.
fn pair_scenario(n: usize, varrho: f64, delta: f64, sigma: f64) -> ccpftp::Scenario {
    let r = RiskSpec::Entropic { varrho };
    let ps: Vec<Participant> = (1..=n + 1)
        .map(|i| {
            let cov = if i == n { delta } else if i == n + 1 { -delta } else { 0.0 };
            Participant::member(i.to_string(), r, 0.0, 1.0, v1(cov))
        })
        .collect();
    one_exchange(AssetModel::single(2.0, sigma, EllipseKind::Gaussian), ps, &(n + 1).to_string(), StrategyKind::LiquidateOwn)
}

#[test]
fn n_survivors_without_entrant() {
    for (n, varrho, delta, sigma) in [(1, 1.0, 0.05, 0.2), (4, 0.7, 0.03, 0.25), (9, 2.0, -0.08, 0.15)] {
        let s = pair_scenario(n, varrho, delta, sigma);
        let o = resolve(&s).unwrap();
        let expect = varrho / (2.0 * n as f64) * (delta / sigma).powi(2);
        assert!((o.mc_total - expect).abs() < 1e-12, "n={n}: {} vs {expect}", o.mc_total);
        let post = o.post_of("D").unwrap();
        assert!((post.price[0] - (2.0 - varrho * delta / n as f64)).abs() < 1e-12);
        let s2 = sigma * sigma;
        assert!((post.position(&n.to_string()).unwrap()[0] + (n as f64 - 1.0) * delta / (n as f64 * s2)).abs() < 1e-12);
    }
}

#[test]
fn n_survivors_with_entrant() {
    for (n, varrho, delta, dprime, sigma) in [(3, 1.0, 0.05, 0.02, 0.2), (6, 1.5, 0.04, -0.03, 0.3), (2, 0.5, 0.06, 0.09, 0.2), (5, 1.0, 0.05, 0.0, 0.2)] {
        let mut s = pair_scenario(n, varrho, delta, sigma);
        s.strategy.new_entrants = vec![Participant::member(
            (n + 2).to_string(),
            RiskSpec::Entropic { varrho },
            0.0,
            1.0,
            v1(dprime),
        )];
        let o = resolve(&s).unwrap();
        let nf = n as f64;
        let s2 = sigma * sigma;
        let post = o.post_of("D").unwrap();
        assert!((post.price[0] - (2.0 - varrho * (delta + dprime) / (nf + 1.0))).abs() < 1e-12);
        assert!((post.position(&(n + 2).to_string()).unwrap()[0] - (delta - dprime * nf) / ((nf + 1.0) * s2)).abs() < 1e-12);
        assert!((post.position(&n.to_string()).unwrap()[0] - (dprime - nf * delta) / ((nf + 1.0) * s2)).abs() < 1e-12);
        // risk increments evaluated at the positions and price checked above
        let expect = varrho * (delta * delta + 2.0 * dprime * delta - dprime * dprime * nf) / (2.0 * s2 * (nf + 1.0));
        assert!((o.mc_total - expect).abs() < 1e-12, "n={n}: {} vs {expect}", o.mc_total);
        // a zero-covariance entrant is just one more survivor
        if dprime == 0.0 {
            assert!((o.mc_total - varrho / (2.0 * (nf + 1.0)) * delta * delta / s2).abs() < 1e-12);
        }
        // entrants hold nothing before the default
        assert!(o.pre_of("D").unwrap().position(&(n + 2).to_string()).is_none());
    }
}

/// Moves `k c` of the clearing target into participant `p`'s receivable.
fn shift(p: &Participant, a: &AssetModel, c: &Vector, k: f64) -> Participant {
    let gc = &a.gamma * c;
    let mut out = p.clone();
    out.er += k * c.dot(&a.mu);
    out.var_r += 2.0 * k * c.dot(&p.cov_r) + k * k * c.dot(&gc);
    out.cov_r = &p.cov_r + gc * k;
    out
}

#[test]
fn nonzero_clearing_equals_shifted_zero_clearing() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let m = rng.random_range(1..=3);
        let n = rng.random_range(2..=6);
        let gamma = random_gamma(&mut rng, m);
        let a = AssetModel::new(Vector::from_fn(m, |_, _| rng.random_range(1.0..3.0)), gamma.clone(), EllipseKind::Gaussian);
        let es = trial % 2 == 1;
        let ps: Vec<Participant> = (0..n)
            .map(|k| {
                let risk = if es {
                    RiskSpec::ExpectedShortfall { alpha: rng.random_range(0.9..0.99) }
                } else {
                    RiskSpec::Entropic { varrho: rng.random_range(0.5..2.0) }
                };
                random_participant(&mut rng, &format!("p{k}"), risk, &gamma)
            })
            .collect();
        let c = Vector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let direct = solve("D", &ps, &a, &c, None).unwrap();
        // two different splits k of c must give the same answer
        for _ in 0..2 {
            let mut ks: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let tot: f64 = ks.iter().sum();
            ks.iter_mut().for_each(|k| *k /= tot);
            let shifted: Vec<Participant> = ps.iter().zip(&ks).map(|(p, k)| shift(p, &a, &c, *k)).collect();
            let z = solve("D", &shifted, &a, &Vector::zeros(m), None).unwrap();
            assert!((&z.price - &direct.price).amax() < 1e-9, "trial {trial}");
            for (p, k) in ps.iter().zip(&ks) {
                let back = z.position(&p.id).unwrap() + &c * *k;
                assert!((back - direct.position(&p.id).unwrap()).amax() < 1e-9, "trial {trial}");
            }
        }
    }
}

#[test]
fn hybrid_interpolates_between_endpoints() {
    let s = fifteen(RiskSpec::Entropic { varrho: 1.0 }, EllipseKind::Gaussian, StrategyKind::HedgeOwn);
    let pre = pre_default_equilibria(&s).unwrap();
    let hedge = resolve_with(&s, &s.strategy, &pre).unwrap();
    let q_d = hedge.q_d.clone();
    let at = |frac: f64| {
        let kind = StrategyKind::HybridOwn { q_d_liq: &q_d * frac };
        resolve_with(&s, &s.strategy.with_kind(kind), &pre).unwrap()
    };
    assert!((at(0.0).mc_total - hedge.mc_total).abs() < 1e-9);
    let mut prev = None;
    for k in 0..=10 {
        let o = at(k as f64 / 10.0);
        let t = &o.table3_row;
        assert!((t.lc + t.sum_delta_rho - o.mc_total).abs() < 1e-9);
        if let Some(p) = prev {
            assert!(f64::abs(o.mc_total - p) < 0.05, "jump at {k}");
        }
        prev = Some(o.mc_total);
    }
    let es = fifteen(RiskSpec::ExpectedShortfall { alpha: 0.975 }, EllipseKind::Gaussian, StrategyKind::LiquidateOwn);
    let pre = pre_default_equilibria(&es).unwrap();
    let liq = resolve_with(&es, &es.strategy, &pre).unwrap();
    let full = resolve_with(&es, &es.strategy.with_kind(StrategyKind::HybridOwn { q_d_liq: liq.q_d.clone() }), &pre).unwrap();
    assert!(full.post_of("D").unwrap().position("c").unwrap().amax() < 1e-9);
    assert!((full.mc_total - liq.mc_total).abs() < 1e-9);
}

#[test]
fn every_strategy_satisfies_the_decomposition() {
    let mut s = fifteen(RiskSpec::Entropic { varrho: 1.0 }, EllipseKind::Gaussian, StrategyKind::LiquidateOwn);
    s.exchanges.push(ccpftp::Exchange { id: "E".into(), members: vec!["e1".into(), "e2".into()], clearing_rhs: v1(0.0) });
    s.participants.push(Participant::member("e1", RiskSpec::Entropic { varrho: 1.0 }, 0.0, 0.1, v1(0.05)));
    s.participants.push(Participant::member("e2", RiskSpec::Entropic { varrho: 2.0 }, 0.0, 0.1, v1(-0.03)));
    let pre = pre_default_equilibria(&s).unwrap();
    let e = "E".to_string();
    let half = v1(-8.68);
    let kinds = [
        StrategyKind::LiquidateOwn,
        StrategyKind::LiquidateExternal { exchange: e.clone() },
        StrategyKind::HedgeOwn,
        StrategyKind::HedgeExternal { exchange: e.clone() },
        StrategyKind::ReplicateOwn,
        StrategyKind::ReplicateExternal { exchange: e.clone() },
        StrategyKind::HybridOwn { q_d_liq: half.clone() },
        StrategyKind::HybridExternal { exchange: e, q_d_liq: half },
    ];
    for (line, kind) in kinds.into_iter().enumerate() {
        let o = resolve_with(&s, &s.strategy.with_kind(kind), &pre).unwrap();
        assert_eq!(o.table3_row.line as usize, line + 1);
        let by_exchange: f64 = o.lc_per_exchange.iter().map(|x| x.1).sum();
        let by_member: f64 = o.lc_per_participant.iter().map(|x| x.1).sum();
        assert!((by_exchange - by_member).abs() < 1e-9);
        assert!((o.lc_total() + o.sum_delta_rho() - o.mc_total).abs() < 1e-9);
        assert!((o.table3_row.lc - o.table3_row.lc_formula).abs() < 1e-9, "line {}", line + 1);
        for e in o.post.iter() {
            assert!(e.residual_clearing <= 1e-8 && e.residual_kkt <= 1e-8);
        }
    }
}
