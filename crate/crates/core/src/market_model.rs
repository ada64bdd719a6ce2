//! Scenario data model: assets, participants, exchanges, and validation.

use std::collections::{BTreeMap, BTreeSet};

use crate::resolution::{StrategyKind, StrategySpec};
use crate::xva::XvaConfig;
use crate::{Error, Matrix, Result, Vector};

/// Relative eigenvalue tolerance for positive-definiteness checks.
pub const TOL_PD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EllipseKind {
    Gaussian,
    StudentT { nu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiskSpec {
    Entropic { varrho: f64 },
    ExpectedShortfall { alpha: f64 },
}

impl RiskSpec {
    pub fn is_entropic(&self) -> bool {
        matches!(self, RiskSpec::Entropic { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    ClearingMember,
    SimpleParticipant,
    CcpHedger,
}

/// Mean payoff and covariance of the traded assets.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetModel {
    pub mu: Vector,
    pub gamma: Matrix,
    pub ellipse: EllipseKind,
}

impl AssetModel {
    pub fn new(mu: Vector, gamma: Matrix, ellipse: EllipseKind) -> Self {
        AssetModel { mu, gamma, ellipse }
    }

    /// Single-asset model with payoff mean `mu` and volatility `sigma`.
    pub fn single(mu: f64, sigma: f64, ellipse: EllipseKind) -> Self {
        AssetModel {
            mu: Vector::from_element(1, mu),
            gamma: Matrix::from_element(1, 1, sigma * sigma),
            ellipse,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn gamma_inverse(&self) -> Result<Matrix> {
        self.gamma
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or(Error::SingularGamma)
    }
}

/// A market participant described by its risk preference and the first two
/// joint moments of its receivable with the asset payoffs.
#[derive(Debug, Clone, PartialEq)]
pub struct Participant {
    pub id: String,
    pub role: Role,
    pub risk: RiskSpec,
    pub er: f64,
    pub var_r: f64,
    pub cov_r: Vector,
}

impl Participant {
    pub fn member(id: impl Into<String>, risk: RiskSpec, er: f64, var_r: f64, cov_r: Vector) -> Self {
        Participant {
            id: id.into(),
            role: Role::ClearingMember,
            risk,
            er,
            var_r,
            cov_r,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    pub id: String,
    pub members: Vec<String>,
    pub clearing_rhs: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub asset: AssetModel,
    pub exchanges: Vec<Exchange>,
    pub participants: Vec<Participant>,
    /// Defaulting member(s); several ids are aggregated into one defaulted position.
    pub defaulters: Vec<String>,
    pub strategy: StrategySpec,
    pub xva: Option<XvaConfig>,
}

impl Scenario {
    pub fn participant(&self, id: &str) -> Result<&Participant> {
        self.participants
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn exchange(&self, id: &str) -> Result<&Exchange> {
        self.exchanges
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    /// The exchange holding the defaulter(s).
    pub fn defaulter_exchange(&self) -> Result<&Exchange> {
        let d = self
            .defaulters
            .first()
            .ok_or_else(|| Error::InvalidParam("no defaulter given".into()))?;
        let hits: Vec<&Exchange> = self
            .exchanges
            .iter()
            .filter(|e| e.members.iter().any(|m| m == d))
            .collect();
        match hits.as_slice() {
            [e] => Ok(e),
            _ => Err(Error::InvalidParam(format!(
                "defaulter {d} must belong to exactly one exchange"
            ))),
        }
    }

    pub fn members_of(&self, exchange: &Exchange) -> Result<Vec<Participant>> {
        exchange
            .members
            .iter()
            .map(|id| self.participant(id).cloned())
            .collect()
    }
}

/// Block matrix `[[Var R, covᵀ], [cov, Γ]]` of the pair `(R_i, P)`.
pub fn assemble_joint_moments(p: &Participant, a: &AssetModel) -> Result<Matrix> {
    let m = a.dim();
    if p.cov_r.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "participant {} has |cov_r| = {} but m = {}",
            p.id,
            p.cov_r.len(),
            m
        )));
    }
    let mut g = Matrix::zeros(m + 1, m + 1);
    g[(0, 0)] = p.var_r;
    for k in 0..m {
        g[(0, k + 1)] = p.cov_r[k];
        g[(k + 1, 0)] = p.cov_r[k];
    }
    for r in 0..m {
        for c in 0..m {
            g[(r + 1, c + 1)] = 0.5 * (a.gamma[(r, c)] + a.gamma[(c, r)]);
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: &'static str,
    pub message: String,
}

impl Diagnostic {
    fn error(code: &'static str, message: String) -> Self {
        Diagnostic { severity: Severity::Error, code, message }
    }
    fn warning(code: &'static str, message: String) -> Self {
        Diagnostic { severity: Severity::Warning, code, message }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}[{}]: {}", self.code, self.message)
    }
}

/// Eigenvalues (ascending) of the symmetric part of `m`.
fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    let s = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

fn check_risk(p: &Participant, out: &mut Vec<Diagnostic>) {
    match p.risk {
        RiskSpec::Entropic { varrho } if !(varrho > 0.0 && varrho.is_finite()) => out.push(
            Diagnostic::error("invalid_risk_param", format!("{}: varrho must be > 0", p.id)),
        ),
        RiskSpec::ExpectedShortfall { alpha } if !(0.0..1.0).contains(&alpha) => out.push(
            Diagnostic::error("invalid_risk_param", format!("{}: alpha must lie in [0,1)", p.id)),
        ),
        _ => {}
    }
}

/// Checks the scenario's well-posedness; an empty list means no findings.
pub fn validate_scenario(s: &Scenario) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let a = &s.asset;
    let m = a.dim();

    if a.gamma.nrows() != m || a.gamma.ncols() != m {
        out.push(Diagnostic::error(
            "dimension_mismatch",
            format!("gamma is {}x{} but mu has length {m}", a.gamma.nrows(), a.gamma.ncols()),
        ));
        return out;
    }
    if a.mu.iter().any(|x| !x.is_finite()) {
        out.push(Diagnostic::error("mu_not_finite", "mu has non-finite entries".into()));
    }
    let asym = (&a.gamma - a.gamma.transpose()).amax();
    if asym > 1e-12 * (1.0 + a.gamma.amax()) {
        out.push(Diagnostic::error("gamma_not_symmetric", format!("max asymmetry {asym:.3e}")));
    }
    let ev = sym_eigenvalues(&a.gamma);
    let top = ev.last().copied().unwrap_or(0.0);
    if ev.first().copied().unwrap_or(0.0) <= TOL_PD * top.abs() || top <= 0.0 {
        out.push(Diagnostic::error(
            "gamma_not_pd",
            format!("smallest eigenvalue {:.3e}", ev.first().copied().unwrap_or(0.0)),
        ));
    }

    let student = match a.ellipse {
        EllipseKind::StudentT { nu } => {
            if !(nu > 2.0) {
                out.push(Diagnostic::error("nu_too_small", format!("nu = {nu} must exceed 2")));
            }
            true
        }
        EllipseKind::Gaussian => false,
    };

    let mut seen = BTreeSet::new();
    for p in &s.participants {
        if !seen.insert(p.id.as_str()) {
            out.push(Diagnostic::error("duplicate_id", format!("participant {} listed twice", p.id)));
        }
        check_risk(p, &mut out);
        if student && p.risk.is_entropic() {
            out.push(Diagnostic::error(
                "entropic_with_student_t",
                format!("{}: entropic risk requires Gaussian payoffs", p.id),
            ));
        }
        if p.var_r < 0.0 || !p.var_r.is_finite() || !p.er.is_finite() {
            out.push(Diagnostic::error("invalid_moments", format!("{}: var_r must be >= 0", p.id)));
            continue;
        }
        let g = match assemble_joint_moments(p, a) {
            Ok(g) => g,
            Err(e) => {
                out.push(Diagnostic::error("dimension_mismatch", e.to_string()));
                continue;
            }
        };
        let ev = sym_eigenvalues(&g);
        let top = ev.last().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
        let low = ev.first().copied().unwrap_or(0.0);
        if low < -TOL_PD * top {
            out.push(Diagnostic::error(
                "gamma_i_not_psd",
                format!("{}: joint covariance has eigenvalue {low:.3e}", p.id),
            ));
        } else if low <= TOL_PD * top
            && matches!(p.risk, RiskSpec::ExpectedShortfall { .. })
            && p.role != Role::CcpHedger
        {
            out.push(Diagnostic::warning(
                "gamma_i_singular",
                format!("{}: receivable in the span of the payoffs, uniqueness not guaranteed", p.id),
            ));
        }
    }

    let mut membership: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &s.exchanges {
        if e.members.is_empty() {
            out.push(Diagnostic::error("empty_exchange", format!("exchange {} has no members", e.id)));
        }
        if e.clearing_rhs.len() != m || e.clearing_rhs.iter().any(|x| !x.is_finite()) {
            out.push(Diagnostic::error(
                "invalid_clearing_rhs",
                format!("exchange {}: clearing_rhs must be finite with length {m}", e.id),
            ));
        }
        for id in &e.members {
            if s.participant(id).is_err() {
                out.push(Diagnostic::error("unknown_participant", format!("{id} in exchange {}", e.id)));
            }
            *membership.entry(id.as_str()).or_default() += 1;
        }
    }

    if s.defaulters.is_empty() {
        out.push(Diagnostic::error("no_defaulter", "no defaulter given".into()));
    }
    let mut home = BTreeSet::new();
    for d in &s.defaulters {
        match membership.get(d.as_str()) {
            Some(1) => {
                if let Some(e) = s.exchanges.iter().find(|e| e.members.contains(d)) {
                    home.insert(e.id.as_str());
                }
            }
            _ => out.push(Diagnostic::error(
                "defaulter_exchange",
                format!("defaulter {d} must belong to exactly one exchange"),
            )),
        }
    }
    if home.len() > 1 {
        out.push(Diagnostic::error(
            "defaulter_exchange",
            "all defaulters must belong to the same exchange".into(),
        ));
    }

    validate_strategy(s, m, &home, &mut out);
    if let Some(x) = &s.xva {
        for msg in x.check() {
            out.push(Diagnostic::error("invalid_xva", msg));
        }
        let market_alpha = s
            .participants
            .iter()
            .filter_map(|p| match p.risk {
                RiskSpec::ExpectedShortfall { alpha } => Some(alpha),
                RiskSpec::Entropic { .. } => None,
            })
            .fold(0.0, f64::max);
        if x.alpha_kva <= market_alpha {
            out.push(Diagnostic::error(
                "invalid_xva",
                format!("alpha_kva {} must exceed the market-risk level {market_alpha}", x.alpha_kva),
            ));
        }
    }
    out
}

fn validate_strategy(s: &Scenario, m: usize, home: &BTreeSet<&str>, out: &mut Vec<Diagnostic>) {
    let st = &s.strategy;
    if let Some(ext) = st.kind.external_exchange() {
        match s.exchange(ext) {
            Err(_) => out.push(Diagnostic::error("unknown_exchange", format!("external exchange {ext}"))),
            Ok(e) => {
                if home.contains(e.id.as_str()) || s.defaulters.iter().any(|d| e.members.contains(d)) {
                    out.push(Diagnostic::error(
                        "strategy_mismatch",
                        format!("external exchange {ext} contains the defaulter"),
                    ));
                }
            }
        }
    }
    if let StrategyKind::HybridOwn { q_d_liq } | StrategyKind::HybridExternal { q_d_liq, .. } = &st.kind {
        if q_d_liq.len() != m {
            out.push(Diagnostic::error(
                "dimension_mismatch",
                format!("q_d_liq has length {} but m = {m}", q_d_liq.len()),
            ));
        }
    }
    if let Some(r) = &st.hedger_risk {
        let probe = Participant {
            id: "c".into(),
            role: Role::CcpHedger,
            risk: *r,
            er: 0.0,
            var_r: 0.0,
            cov_r: Vector::zeros(m),
        };
        check_risk(&probe, out);
    }
    for p in &st.new_entrants {
        if s.participant(&p.id).is_ok() {
            out.push(Diagnostic::error("duplicate_id", format!("entrant {} already exists", p.id)));
        }
        check_risk(p, out);
        if p.cov_r.len() != m {
            out.push(Diagnostic::error("dimension_mismatch", format!("entrant {} cov_r length", p.id)));
        }
    }
}

/// Returns `Err(Error::Validation)` when any diagnostic is an error.
pub fn ensure_valid(s: &Scenario) -> Result<Vec<Diagnostic>> {
    let d = validate_scenario(s);
    let errors: Vec<String> = d
        .iter()
        .filter(|x| x.severity == Severity::Error)
        .map(|x| x.to_string())
        .collect();
    if errors.is_empty() {
        Ok(d)
    } else {
        Err(Error::Validation(errors.join("; ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn asset() -> AssetModel {
        AssetModel::single(2.0, 0.2, EllipseKind::Gaussian)
    }

    fn scenario(ps: Vec<Participant>) -> Scenario {
        let ids: Vec<String> = ps.iter().map(|p| p.id.clone()).collect();
        Scenario {
            asset: asset(),
            exchanges: vec![Exchange { id: "D".into(), members: ids.clone(), clearing_rhs: Vector::zeros(1) }],
            defaulters: vec![ids.last().unwrap().clone()],
            participants: ps,
            strategy: StrategySpec::new(StrategyKind::LiquidateOwn),
            xva: None,
        }
    }

    #[test]
    fn joint_moments_zero_receivable() {
        let a = AssetModel::new(Vector::from_vec(vec![1.0, 1.0]), Matrix::identity(2, 2), EllipseKind::Gaussian);
        let p = Participant::member("1", RiskSpec::Entropic { varrho: 1.0 }, 0.0, 0.0, Vector::zeros(2));
        let g = assemble_joint_moments(&p, &a).unwrap();
        let mut want = Matrix::identity(3, 3);
        want[(0, 0)] = 0.0;
        assert_eq!(g, want);
    }

    #[test]
    fn joint_moments_member_one() {
        let p = Participant::member("1", RiskSpec::Entropic { varrho: 1.0 }, 0.0, 0.09, Vector::from_element(1, 0.048));
        let g = assemble_joint_moments(&p, &asset()).unwrap();
        assert_eq!(g[(0, 0)], 0.09);
        assert_eq!(g[(0, 1)], 0.048);
        assert_eq!(g[(1, 0)], 0.048);
        assert!((g[(1, 1)] - 0.04).abs() < 1e-15);
        assert_eq!(g, g.transpose());
    }

    #[test]
    fn joint_moments_dimension_mismatch() {
        let p = Participant::member("1", RiskSpec::Entropic { varrho: 1.0 }, 0.0, 0.0, Vector::zeros(2));
        assert!(matches!(assemble_joint_moments(&p, &asset()), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn span_case_has_null_direction() {
        let gamma = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let a = AssetModel::new(Vector::zeros(2), gamma.clone(), EllipseKind::Gaussian);
        let w = Vector::from_vec(vec![0.7, -1.3]);
        let cov = &gamma * &w;
        let var = w.dot(&cov);
        let p = Participant::member("x", RiskSpec::ExpectedShortfall { alpha: 0.9 }, 0.0, var, cov);
        let g = assemble_joint_moments(&p, &a).unwrap();
        let v = Vector::from_vec(vec![-1.0, w[0], w[1]]);
        assert!((&g * &v).amax() < 1e-12);
    }

    #[test]
    fn negative_eigenvalue_rejected() {
        let mut s = scenario(vec![Participant::member("1", RiskSpec::Entropic { varrho: 1.0 }, 0.0, 0.0, Vector::zeros(1))]);
        s.asset.gamma[(0, 0)] = -0.04;
        let d = validate_scenario(&s);
        assert!(d.iter().any(|x| x.code == "gamma_not_pd" && x.severity == Severity::Error));
    }

    #[test]
    fn span_receivable_warns() {
        let cov = 0.1;
        let p = Participant::member("1", RiskSpec::ExpectedShortfall { alpha: 0.975 }, 0.0, cov * cov / 0.04, Vector::from_element(1, cov));
        let q = Participant::member("2", RiskSpec::ExpectedShortfall { alpha: 0.975 }, 0.0, 1.0, Vector::from_element(1, -cov));
        let d = validate_scenario(&scenario(vec![p, q]));
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, "gamma_i_singular");
        assert_eq!(d[0].severity, Severity::Warning);
    }

    #[test]
    fn clean_scenario_has_no_diagnostics() {
        let ps = (1..=3)
            .map(|i| Participant::member(i.to_string(), RiskSpec::Entropic { varrho: 1.0 }, 0.0, 0.09 * (i * i) as f64, Vector::from_element(1, 0.01 * i as f64)))
            .collect();
        let s = scenario(ps);
        assert!(validate_scenario(&s).is_empty());
        assert_eq!(validate_scenario(&s), validate_scenario(&s));
    }

    #[test]
    fn student_t_needs_nu_above_two() {
        let mut s = scenario(vec![Participant::member("1", RiskSpec::ExpectedShortfall { alpha: 0.9 }, 0.0, 1.0, Vector::zeros(1))]);
        s.asset.ellipse = EllipseKind::StudentT { nu: 2.0 };
        assert!(validate_scenario(&s).iter().any(|x| x.code == "nu_too_small"));
    }
}
