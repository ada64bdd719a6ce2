//! TOML scenario files.
//!
//! ```toml
//! defaulter = "15"
//!
//! [asset]
//! mu = [2.0]
//! sigma = 0.2            # or gamma = [[0.04]]
//! ellipse = "gaussian"   # or "student_t" with nu = 2.5
//!
//! [[exchanges]]
//! id = "D"
//! members = ["1", "2"]
//!
//! [[participants]]
//! id = "1"
//! risk = { kind = "expected_shortfall", alpha = 0.975 }
//! var_r = 0.09
//! cov_r = [0.048]
//!
//! [strategy]
//! kind = "liquidate_own"
//!
//! [xva]
//! alpha_im = 0.75
//! alpha_df = 0.80
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use ccpftp::{
    AssetModel, Collateral, EllipseKind, Exchange, KvaScaling, Matrix, Participant, RiskSpec, Role, Scenario,
    StrategyKind, StrategySpec, Vector, XvaConfig,
};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error in {path}{location}: {message}")]
    Parse { path: String, location: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileScenario {
    asset: FileAsset,
    #[serde(default)]
    exchanges: Vec<FileExchange>,
    participants: Vec<FileParticipant>,
    #[serde(default)]
    defaulter: Option<StringOrList>,
    #[serde(default)]
    strategy: Option<FileStrategy>,
    #[serde(default)]
    xva: Option<FileXva>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum StringOrList {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileAsset {
    mu: Vec<f64>,
    #[serde(default)]
    sigma: Option<f64>,
    #[serde(default)]
    gamma: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_ellipse")]
    ellipse: String,
    #[serde(default)]
    nu: Option<f64>,
}

fn default_ellipse() -> String {
    "gaussian".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileExchange {
    id: String,
    #[serde(default)]
    members: Vec<String>,
    #[serde(default)]
    clearing_rhs: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize, Clone, Copy)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum FileRisk {
    Entropic { varrho: f64 },
    ExpectedShortfall { alpha: f64 },
}

impl From<FileRisk> for RiskSpec {
    fn from(r: FileRisk) -> Self {
        match r {
            FileRisk::Entropic { varrho } => RiskSpec::Entropic { varrho },
            FileRisk::ExpectedShortfall { alpha } => RiskSpec::ExpectedShortfall { alpha },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileParticipant {
    id: String,
    risk: FileRisk,
    #[serde(default)]
    role: Option<String>,
    /// Shorthand for listing the participant among an exchange's members.
    #[serde(default)]
    exchange: Option<String>,
    #[serde(default)]
    er: f64,
    var_r: f64,
    cov_r: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileStrategy {
    kind: String,
    #[serde(default)]
    exchange: Option<String>,
    #[serde(default)]
    q_d_liq: Option<Vec<f64>>,
    #[serde(default)]
    hedger_risk: Option<FileRisk>,
    #[serde(default)]
    hedger_id: Option<String>,
    #[serde(default)]
    new_entrants: Vec<FileParticipant>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileXva {
    horizon: Option<f64>,
    default_gamma: Option<f64>,
    #[serde(default)]
    gamma: BTreeMap<String, f64>,
    funding_blend: Option<f64>,
    rho_cr: Option<f64>,
    alpha_im: Option<f64>,
    alpha_df: Option<f64>,
    alpha_kva: Option<f64>,
    hurdle: Option<f64>,
    n_paths: Option<usize>,
    n_batches: Option<usize>,
    seed: Option<u64>,
    kva_scaling: Option<String>,
    #[serde(default)]
    otc_receivable: BTreeMap<String, f64>,
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

fn ellipse(a: &FileAsset) -> Result<EllipseKind, ScenarioError> {
    match a.ellipse.as_str() {
        "gaussian" => Ok(EllipseKind::Gaussian),
        "student_t" => a
            .nu
            .map(|nu| EllipseKind::StudentT { nu })
            .ok_or_else(|| invalid("student_t ellipse requires nu")),
        other => Err(invalid(format!("unknown ellipse '{other}'"))),
    }
}

fn asset(a: &FileAsset) -> Result<AssetModel, ScenarioError> {
    let m = a.mu.len();
    let gamma = match (&a.gamma, a.sigma) {
        (Some(rows), None) => {
            if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                return Err(invalid(format!("asset.gamma must be {m}x{m}")));
            }
            Matrix::from_fn(m, m, |i, j| rows[i][j])
        }
        (None, Some(s)) if m == 1 => Matrix::from_element(1, 1, s * s),
        (None, Some(_)) => return Err(invalid("asset.sigma only applies to a single asset; use gamma")),
        (Some(_), Some(_)) => return Err(invalid("give either asset.sigma or asset.gamma, not both")),
        (None, None) => return Err(invalid("asset needs sigma or gamma")),
    };
    Ok(AssetModel::new(Vector::from_vec(a.mu.clone()), gamma, ellipse(a)?))
}

fn role(r: &Option<String>) -> Result<Role, ScenarioError> {
    match r.as_deref() {
        None | Some("clearing_member") | Some("member") => Ok(Role::ClearingMember),
        Some("simple_participant") => Ok(Role::SimpleParticipant),
        Some("ccp_hedger") => Ok(Role::CcpHedger),
        Some(other) => Err(invalid(format!("unknown role '{other}'"))),
    }
}

fn participant(p: &FileParticipant) -> Result<Participant, ScenarioError> {
    Ok(Participant {
        id: p.id.clone(),
        role: role(&p.role)?,
        risk: p.risk.into(),
        er: p.er,
        var_r: p.var_r,
        cov_r: Vector::from_vec(p.cov_r.clone()),
    })
}

/// Maps a strategy name to its kind; composites are handled by the runner.
pub fn strategy_kind(
    name: &str,
    exchange: Option<&str>,
    q_d_liq: Option<&[f64]>,
) -> Result<StrategyKind, ScenarioError> {
    let ext = || {
        exchange
            .map(str::to_string)
            .ok_or_else(|| invalid(format!("strategy {name} needs an external exchange")))
    };
    let liq = || {
        q_d_liq
            .map(|v| Vector::from_vec(v.to_vec()))
            .ok_or_else(|| invalid(format!("strategy {name} needs q_d_liq")))
    };
    Ok(match name {
        "liquidate_own" => StrategyKind::LiquidateOwn,
        "liquidate_external" => StrategyKind::LiquidateExternal { exchange: ext()? },
        "hedge_own" => StrategyKind::HedgeOwn,
        "hedge_external" => StrategyKind::HedgeExternal { exchange: ext()? },
        "replicate_own" => StrategyKind::ReplicateOwn,
        "replicate_external" => StrategyKind::ReplicateExternal { exchange: ext()? },
        "hybrid_own" => StrategyKind::HybridOwn { q_d_liq: liq()? },
        "hybrid_external" => StrategyKind::HybridExternal { exchange: ext()?, q_d_liq: liq()? },
        other => return Err(invalid(format!("unknown strategy '{other}'"))),
    })
}

fn xva(x: &FileXva) -> Result<XvaConfig, ScenarioError> {
    let d = XvaConfig::default();
    let collateral = match (x.alpha_im, x.alpha_df) {
        (Some(alpha_im), Some(alpha_df)) => Collateral::Margined { alpha_im, alpha_df },
        (None, None) => Collateral::None,
        _ => return Err(invalid("xva.alpha_im and xva.alpha_df must be given together")),
    };
    let kva_scaling = match x.kva_scaling.as_deref() {
        None | Some("survival") => KvaScaling::Survival,
        Some("plain") => KvaScaling::Plain,
        Some(other) => return Err(invalid(format!("unknown kva_scaling '{other}'"))),
    };
    Ok(XvaConfig {
        horizon: x.horizon.unwrap_or(d.horizon),
        default_gamma: x.default_gamma.unwrap_or(d.default_gamma),
        gamma: x.gamma.clone(),
        funding_blend: x.funding_blend.unwrap_or(d.funding_blend),
        rho_cr: x.rho_cr.unwrap_or(d.rho_cr),
        collateral,
        alpha_kva: x.alpha_kva.unwrap_or(d.alpha_kva),
        hurdle: x.hurdle.unwrap_or(d.hurdle),
        n_paths: x.n_paths.unwrap_or(d.n_paths),
        n_batches: x.n_batches.unwrap_or(d.n_batches),
        seed: x.seed.unwrap_or(d.seed),
        kva_scaling,
        otc_receivable: x.otc_receivable.clone(),
    })
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
    (line, col)
}

/// Parses scenario text; `origin` is used in messages only.
pub fn parse_scenario_str(src: &str, origin: &str) -> Result<Scenario, ScenarioError> {
    let f: FileScenario = toml::from_str(src).map_err(|e| {
        let location = e
            .span()
            .map(|s| {
                let (l, c) = line_col(src, s.start);
                format!(":{l}:{c}")
            })
            .unwrap_or_default();
        ScenarioError::Parse { path: origin.to_string(), location, message: e.message().to_string() }
    })?;
    let asset = asset(&f.asset)?;
    let m = asset.dim();
    let participants = f.participants.iter().map(participant).collect::<Result<Vec<_>, _>>()?;

    let mut exchanges: Vec<Exchange> = f
        .exchanges
        .iter()
        .map(|e| Exchange {
            id: e.id.clone(),
            members: e.members.clone(),
            clearing_rhs: e.clearing_rhs.clone().map(Vector::from_vec).unwrap_or_else(|| Vector::zeros(m)),
        })
        .collect();
    for p in &f.participants {
        if let Some(ex) = &p.exchange {
            let k = match exchanges.iter().position(|e| &e.id == ex) {
                Some(k) => k,
                None => {
                    exchanges.push(Exchange { id: ex.clone(), members: Vec::new(), clearing_rhs: Vector::zeros(m) });
                    exchanges.len() - 1
                }
            };
            if !exchanges[k].members.contains(&p.id) {
                exchanges[k].members.push(p.id.clone());
            }
        }
    }

    let defaulters = match f.defaulter {
        Some(StringOrList::One(d)) => vec![d],
        Some(StringOrList::Many(v)) => v,
        None => Vec::new(),
    };
    let strategy = match &f.strategy {
        None => StrategySpec::new(StrategyKind::LiquidateOwn),
        Some(st) => {
            let kind = strategy_kind(&st.kind, st.exchange.as_deref(), st.q_d_liq.as_deref())?;
            let mut spec = StrategySpec::new(kind);
            spec.hedger_risk = st.hedger_risk.map(Into::into);
            if let Some(h) = &st.hedger_id {
                spec.hedger_id = h.clone();
            }
            spec.new_entrants = st.new_entrants.iter().map(participant).collect::<Result<_, _>>()?;
            spec
        }
    };
    let xva = f.xva.as_ref().map(xva).transpose()?;
    Ok(Scenario { asset, exchanges, participants, defaulters, strategy, xva })
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io { path: path.display().to_string(), source: e })?;
    parse_scenario_str(&src, &path.display().to_string())
}
