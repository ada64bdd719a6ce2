//! Batch runner for scenario files: evaluates resolution strategies, the
//! optional XVA study, and renders tables, CSV or JSON.

pub mod output;
pub mod scenario;

use std::path::PathBuf;

use ccpftp::resolution::pre_default_equilibria;
use ccpftp::{
    resolve_with, validate_scenario, Collateral, Equilibrium, ResolutionOutcome, Scenario, Severity, StrategyKind,
    Vector, XvaPlan, XvaReport,
};

pub use scenario::{parse_scenario, parse_scenario_str, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_XVA: i32 = 5;

/// The eight resolution strategies in table order.
pub const ALL8: [&str; 8] = [
    "liquidate_own",
    "liquidate_external",
    "hedge_own",
    "hedge_external",
    "replicate_own",
    "replicate_external",
    "hybrid_own",
    "hybrid_external",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReportLevel {
    Summary,
    PerParticipant,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRequest {
    pub scenario: PathBuf,
    /// Strategy names; empty means the scenario's own strategy.
    pub strategies: Vec<String>,
    /// `None` runs the XVA study whenever the scenario configures one.
    pub xva: Option<bool>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub uncollateralized: bool,
    pub out: OutputFormat,
    pub report: ReportLevel,
}

impl RunRequest {
    pub fn new(scenario: impl Into<PathBuf>) -> Self {
        RunRequest {
            scenario: scenario.into(),
            strategies: Vec::new(),
            xva: None,
            seed: None,
            paths: None,
            uncollateralized: false,
            out: OutputFormat::Table,
            report: ReportLevel::Summary,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Validation(String),
    #[error("solver failure: {0}")]
    Solver(ccpftp::Error),
    #[error("xva failure: {0}")]
    Xva(ccpftp::Error),
    #[error("{0}")]
    Other(ccpftp::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Scenario(ScenarioError::Invalid(_)) | RunError::Validation(_) | RunError::Other(_) => {
                EXIT_VALIDATION
            }
            RunError::Scenario(_) => EXIT_PARSE,
            RunError::Solver(_) => EXIT_SOLVER,
            RunError::Xva(_) => EXIT_XVA,
        }
    }

    /// Residual history of a failed Newton solve, if any.
    pub fn residual_history(&self) -> Option<&[f64]> {
        match self {
            RunError::Solver(ccpftp::Error::NoConvergence { history, .. }) => Some(history),
            _ => None,
        }
    }
}

impl From<ccpftp::Error> for RunError {
    fn from(e: ccpftp::Error) -> Self {
        if e.is_solver() {
            RunError::Solver(e)
        } else if e.is_xva() {
            RunError::Xva(e)
        } else {
            RunError::Other(e)
        }
    }
}

/// A requested row: a plain strategy, a pure auction, or a strategy
/// followed by an auction of the residual package.
#[derive(Debug, Clone, PartialEq)]
pub enum StrategyRequest {
    Plain(String),
    Auction,
    ThenAuction(String),
}

impl StrategyRequest {
    pub fn name(&self) -> String {
        match self {
            StrategyRequest::Plain(s) => s.clone(),
            StrategyRequest::Auction => "auction".into(),
            StrategyRequest::ThenAuction(s) => format!("{}_then_auction", s.trim_end_matches("_own")),
        }
    }
}

pub fn parse_strategy_list(names: &[String]) -> Result<Vec<StrategyRequest>, RunError> {
    let mut out = Vec::new();
    for raw in names {
        for name in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "all8" => out.extend(ALL8.iter().map(|s| StrategyRequest::Plain(s.to_string()))),
                "auction" => out.push(StrategyRequest::Auction),
                n if n.ends_with("_then_auction") => {
                    let base = n.trim_end_matches("_then_auction");
                    let own = if base.ends_with("_own") { base.to_string() } else { format!("{base}_own") };
                    if !ALL8.contains(&own.as_str()) {
                        return Err(RunError::Validation(format!("unknown strategy '{n}'")));
                    }
                    out.push(StrategyRequest::ThenAuction(own));
                }
                n if ALL8.contains(&n) => out.push(StrategyRequest::Plain(n.to_string())),
                n => return Err(RunError::Validation(format!("unknown strategy '{n}'"))),
            }
        }
    }
    if out.is_empty() {
        return Err(RunError::Validation("no strategies requested".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyResult {
    pub name: String,
    pub outcome: Option<ResolutionOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub scenario: Scenario,
    pub warnings: Vec<String>,
    pub pre: Vec<Equilibrium>,
    pub strategies: Vec<StrategyResult>,
    pub xva: Option<XvaReport>,
}

fn default_external(s: &Scenario) -> Option<String> {
    if let Some(e) = s.strategy.kind.external_exchange() {
        return Some(e.to_string());
    }
    s.exchanges
        .iter()
        .find(|e| !s.defaulters.iter().any(|d| e.members.contains(d)))
        .map(|e| e.id.clone())
}

fn default_liquidated(s: &Scenario, q_d: &Vector) -> Vector {
    match &s.strategy.kind {
        StrategyKind::HybridOwn { q_d_liq } | StrategyKind::HybridExternal { q_d_liq, .. } => q_d_liq.clone(),
        _ => q_d * 0.5,
    }
}

/// Builds the strategy kind for `name`, borrowing the external exchange and
/// liquidated share from the scenario (half of `q_d` if unspecified).
pub fn kind_for(s: &Scenario, name: &str, q_d: &Vector) -> Result<StrategyKind, RunError> {
    if name == s.strategy.kind.name() {
        return Ok(s.strategy.kind.clone());
    }
    let ext = default_external(s);
    let liq = default_liquidated(s, q_d);
    let needs_ext = name.ends_with("_external");
    if needs_ext && ext.is_none() {
        return Err(RunError::Validation(format!("{name} needs an exchange without the defaulter")));
    }
    let liq_slice: Vec<f64> = liq.iter().copied().collect();
    scenario::strategy_kind(name, ext.as_deref(), Some(&liq_slice)).map_err(RunError::from)
}

/// Applies the request's overrides to the scenario's XVA configuration.
pub fn effective_scenario(mut s: Scenario, req: &RunRequest) -> Scenario {
    if let Some(x) = s.xva.as_mut() {
        if let Some(seed) = req.seed {
            x.seed = seed;
        }
        if let Some(n) = req.paths {
            x.n_paths = n;
            if n % x.n_batches != 0 || n < x.n_batches {
                x.n_batches = 1;
            }
        }
        if req.uncollateralized {
            x.collateral = Collateral::None;
        }
    }
    s
}

/// Runs `requests` on an already parsed scenario.
pub fn execute_scenario(
    s: Scenario,
    requests: &[StrategyRequest],
    with_xva: Option<bool>,
) -> Result<RunResult, RunError> {
    let diags = validate_scenario(&s);
    let errors: Vec<String> = diags.iter().filter(|d| d.severity == Severity::Error).map(|d| d.to_string()).collect();
    if !errors.is_empty() {
        return Err(RunError::Validation(errors.join("\n")));
    }
    let warnings = diags.iter().filter(|d| d.severity == Severity::Warning).map(|d| d.to_string()).collect();

    let pre = pre_default_equilibria(&s)?;
    let d_ex = s.defaulter_exchange()?.id.clone();
    let pre_d = pre.iter().find(|e| e.exchange_id == d_ex).expect("defaulter exchange solved");
    let mut q_d = Vector::zeros(s.asset.dim());
    for d in &s.defaulters {
        q_d += pre_d.position(d).ok_or_else(|| ccpftp::Error::UnknownId(d.clone()))?;
    }

    let run_xva = match with_xva {
        Some(true) if s.xva.is_none() => {
            return Err(RunError::Validation("--xva requested but the scenario has no [xva] section".into()))
        }
        Some(flag) => flag,
        None => s.xva.is_some(),
    };
    if !run_xva && requests.iter().any(|r| !matches!(r, StrategyRequest::Plain(_))) {
        return Err(RunError::Validation("auction strategies require the XVA study".into()));
    }

    let mut strategies = Vec::new();
    let mut plans = Vec::new();
    for r in requests {
        let (outcome, plan) = match r {
            StrategyRequest::Auction => (None, XvaPlan::Auction),
            StrategyRequest::Plain(n) | StrategyRequest::ThenAuction(n) => {
                let kind = kind_for(&s, n, &q_d)?;
                let o = resolve_with(&s, &s.strategy.with_kind(kind), &pre)?;
                let plan = if matches!(r, StrategyRequest::Plain(_)) {
                    XvaPlan::Resolution(o.clone())
                } else {
                    XvaPlan::ResolutionThenAuction(o.clone())
                };
                (Some(o), plan)
            }
        };
        strategies.push(StrategyResult { name: r.name(), outcome });
        plans.push((r.name(), plan));
    }
    let xva = if run_xva {
        let cfg = s.xva.clone().expect("checked above");
        // XVA is valued on the defaulter's exchange only
        let plans: Vec<(String, XvaPlan)> = plans
            .into_iter()
            .filter(|(_, p)| match p {
                XvaPlan::Resolution(o) | XvaPlan::ResolutionThenAuction(o) => o.strategy.external_exchange().is_none(),
                XvaPlan::Auction => true,
            })
            .collect();
        Some(ccpftp::run_xva(&s, &pre, &plans, &cfg)?)
    } else {
        None
    };
    Ok(RunResult { scenario: s, warnings, pre, strategies, xva })
}

/// Parses, applies overrides and runs.
pub fn execute(req: &RunRequest) -> Result<RunResult, RunError> {
    let s = effective_scenario(parse_scenario(&req.scenario)?, req);
    let requests = if req.strategies.is_empty() {
        vec![StrategyRequest::Plain(s.strategy.kind.name().to_string())]
    } else {
        parse_strategy_list(&req.strategies)?
    };
    execute_scenario(s, &requests, req.xva)
}

/// Runs the request, writing output to stdout and errors to stderr.
pub fn run(req: &RunRequest) -> i32 {
    match execute(req) {
        Ok(res) => {
            for w in &res.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", output::render(&res, req.out, req.report));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(h) = e.residual_history() {
                eprintln!("residual history:");
                for (k, r) in h.iter().enumerate() {
                    eprintln!("  {k:>4}  {r:.6e}");
                }
            }
            e.exit_code()
        }
    }
}
