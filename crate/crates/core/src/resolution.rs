//! Default-resolution strategies: post-default clearing, liquidity cost,
//! risk increments and market cost.

use crate::equilibrium::{solve, Equilibrium};
use crate::market_model::{ensure_valid, AssetModel, Exchange, Participant, RiskSpec, Role, Scenario};
use crate::risk_engine::objective_r;
use crate::{Error, Result, Vector};

#[derive(Debug, Clone, PartialEq)]
pub enum StrategyKind {
    LiquidateOwn,
    LiquidateExternal { exchange: String },
    HedgeOwn,
    HedgeExternal { exchange: String },
    ReplicateOwn,
    ReplicateExternal { exchange: String },
    HybridOwn { q_d_liq: Vector },
    HybridExternal { exchange: String, q_d_liq: Vector },
}

impl StrategyKind {
    pub fn external_exchange(&self) -> Option<&str> {
        match self {
            StrategyKind::LiquidateExternal { exchange }
            | StrategyKind::HedgeExternal { exchange }
            | StrategyKind::ReplicateExternal { exchange }
            | StrategyKind::HybridExternal { exchange, .. } => Some(exchange),
            _ => None,
        }
    }

    /// Line of the market-cost decomposition table (1..=8).
    pub fn line(&self) -> u8 {
        match self {
            StrategyKind::LiquidateOwn => 1,
            StrategyKind::LiquidateExternal { .. } => 2,
            StrategyKind::HedgeOwn => 3,
            StrategyKind::HedgeExternal { .. } => 4,
            StrategyKind::ReplicateOwn => 5,
            StrategyKind::ReplicateExternal { .. } => 6,
            StrategyKind::HybridOwn { .. } => 7,
            StrategyKind::HybridExternal { .. } => 8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::LiquidateOwn => "liquidate_own",
            StrategyKind::LiquidateExternal { .. } => "liquidate_external",
            StrategyKind::HedgeOwn => "hedge_own",
            StrategyKind::HedgeExternal { .. } => "hedge_external",
            StrategyKind::ReplicateOwn => "replicate_own",
            StrategyKind::ReplicateExternal { .. } => "replicate_external",
            StrategyKind::HybridOwn { .. } => "hybrid_own",
            StrategyKind::HybridExternal { .. } => "hybrid_external",
        }
    }

    pub fn uses_hedger(&self) -> bool {
        !matches!(self, StrategyKind::LiquidateOwn | StrategyKind::LiquidateExternal { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    /// Participants joining the designated post-default exchange with zero
    /// pre-default position.
    pub new_entrants: Vec<Participant>,
    /// Risk preference of the CCP hedger; defaults to the defaulter's.
    pub hedger_risk: Option<RiskSpec>,
    pub hedger_id: String,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind) -> Self {
        StrategySpec {
            kind,
            new_entrants: Vec::new(),
            hedger_risk: None,
            hedger_id: "c".to_string(),
        }
    }

    pub fn with_kind(&self, kind: StrategyKind) -> Self {
        StrategySpec { kind, ..self.clone() }
    }
}

/// The CCP acting as a hedging participant with receivable
/// `R_c = wᵀ(P - p^D)`, `w` the hedged part of the defaulted position.
#[derive(Debug, Clone, PartialEq)]
pub struct CcpHedger {
    pub participant: Participant,
    pub w: Vector,
}

impl CcpHedger {
    pub fn new(id: &str, risk: RiskSpec, w: &Vector, pre_price: &Vector, a: &AssetModel) -> Self {
        let cov = &a.gamma * w;
        CcpHedger {
            participant: Participant {
                id: id.to_string(),
                role: Role::CcpHedger,
                risk,
                er: w.dot(&(&a.mu - pre_price)),
                var_r: w.dot(&cov),
                cov_r: cov,
            },
            w: w.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum HedgerMode {
    Optimizing(Participant),
    Pinned(Participant, Vector),
}

/// Post-default membership and clearing target of one exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct PostPlan {
    pub exchange_id: String,
    pub participants: Vec<Participant>,
    pub clearing_rhs: Vector,
    hedger: Option<HedgerMode>,
}

impl PostPlan {
    pub fn hedger(&self) -> Option<&Participant> {
        match &self.hedger {
            Some(HedgerMode::Optimizing(p)) | Some(HedgerMode::Pinned(p, _)) => Some(p),
            None => None,
        }
    }

    pub fn pinned_position(&self) -> Option<&Vector> {
        match &self.hedger {
            Some(HedgerMode::Pinned(_, q)) => Some(q),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table3Row {
    pub line: u8,
    /// Liquidity cost from the strategy's closed expression in `q_d` and prices.
    pub lc_formula: f64,
    pub lc: f64,
    pub sum_delta_rho: f64,
    pub mc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionOutcome {
    pub strategy: StrategyKind,
    pub q_d: Vector,
    pub q_d_liq: Vector,
    pub q_d_hedge: Vector,
    pub hedger: Option<CcpHedger>,
    pub defaulter_exchange: String,
    pub pre: Vec<Equilibrium>,
    pub post: Vec<Equilibrium>,
    pub lc_per_exchange: Vec<(String, f64)>,
    pub lc_per_participant: Vec<(String, f64)>,
    pub delta_rho: Vec<(String, f64)>,
    /// Liquidation-leg increments `Δq^l_i` per post-default participant.
    pub liquidation_leg: Vec<(String, Vector)>,
    pub mc_per_exchange: Vec<(String, f64)>,
    pub mc_total: f64,
    pub table3_row: Table3Row,
}

fn lookup<'a, T>(v: &'a [(String, T)], id: &str) -> Option<&'a T> {
    v.iter().find(|(k, _)| k == id).map(|(_, x)| x)
}

impl ResolutionOutcome {
    pub fn pre_of(&self, exchange: &str) -> Option<&Equilibrium> {
        self.pre.iter().find(|e| e.exchange_id == exchange)
    }
    pub fn post_of(&self, exchange: &str) -> Option<&Equilibrium> {
        self.post.iter().find(|e| e.exchange_id == exchange)
    }
    pub fn lc_of(&self, id: &str) -> Option<f64> {
        lookup(&self.lc_per_participant, id).copied()
    }
    pub fn delta_rho_of(&self, id: &str) -> Option<f64> {
        lookup(&self.delta_rho, id).copied()
    }
    pub fn leg_of(&self, id: &str) -> Option<&Vector> {
        lookup(&self.liquidation_leg, id)
    }
    pub fn lc_total(&self) -> f64 {
        self.lc_per_exchange.iter().map(|x| x.1).sum()
    }
    pub fn sum_delta_rho(&self) -> f64 {
        self.delta_rho.iter().map(|x| x.1).sum()
    }
}

/// Solves every exchange at its pre-default clearing target.
pub fn pre_default_equilibria(s: &Scenario) -> Result<Vec<Equilibrium>> {
    s.exchanges
        .iter()
        .map(|e| {
            let ps = s.members_of(e)?;
            solve(&e.id, &ps, &s.asset, &e.clearing_rhs, None)
        })
        .collect()
}

fn defaulted_position(s: &Scenario, pre_d: &Equilibrium) -> Result<Vector> {
    let mut q = Vector::zeros(s.asset.dim());
    for d in &s.defaulters {
        q += pre_d
            .position(d)
            .ok_or_else(|| Error::UnknownId(d.clone()))?;
    }
    Ok(q)
}

fn hedger_risk(s: &Scenario, spec: &StrategySpec) -> Result<RiskSpec> {
    match spec.hedger_risk {
        Some(r) => Ok(r),
        None => Ok(s.participant(&s.defaulters[0])?.risk),
    }
}

/// Post-default membership, clearing targets and hedger per affected exchange.
pub fn post_default_clearing(
    s: &Scenario,
    spec: &StrategySpec,
    pre: &[Equilibrium],
) -> Result<(Vec<PostPlan>, Vector, Option<CcpHedger>)> {
    let d_ex = s.defaulter_exchange()?;
    let pre_d = pre
        .iter()
        .find(|e| e.exchange_id == d_ex.id)
        .ok_or_else(|| Error::UnknownId(d_ex.id.clone()))?;
    let q_d = defaulted_position(s, pre_d)?;
    let m = s.asset.dim();

    let survivors: Vec<Participant> = s
        .members_of(d_ex)?
        .into_iter()
        .filter(|p| !s.defaulters.contains(&p.id))
        .collect();
    let ext: Option<&Exchange> = match spec.kind.external_exchange() {
        Some(id) => {
            let e = s.exchange(id)?;
            if e.id == d_ex.id || s.defaulters.iter().any(|d| e.members.contains(d)) {
                return Err(Error::StrategyMismatch(format!("external exchange {id} contains the defaulter")));
            }
            Some(e)
        }
        None => None,
    };

    let q_d_liq = match &spec.kind {
        StrategyKind::HybridOwn { q_d_liq } | StrategyKind::HybridExternal { q_d_liq, .. } => {
            if q_d_liq.len() != m {
                return Err(Error::DimensionMismatch("q_d_liq length".into()));
            }
            q_d_liq.clone()
        }
        StrategyKind::LiquidateOwn | StrategyKind::LiquidateExternal { .. } => q_d.clone(),
        _ => Vector::zeros(m),
    };
    let q_d_hedge = &q_d - &q_d_liq;

    let hedger = if spec.kind.uses_hedger() {
        let risk = hedger_risk(s, spec)?;
        Some(CcpHedger::new(&spec.hedger_id, risk, &q_d_hedge, &pre_d.price, &s.asset))
    } else {
        None
    };
    let optimizing = || hedger.as_ref().map(|h| HedgerMode::Optimizing(h.participant.clone()));
    let pinned = || hedger.as_ref().map(|h| HedgerMode::Pinned(h.participant.clone(), -&q_d));

    let with_entrants = |mut v: Vec<Participant>| {
        v.extend(spec.new_entrants.iter().cloned());
        v
    };
    let base_d = &d_ex.clearing_rhs;
    let own = |members: Vec<Participant>, rhs: Vector, h: Option<HedgerMode>| PostPlan {
        exchange_id: d_ex.id.clone(),
        participants: members,
        clearing_rhs: rhs,
        hedger: h,
    };
    let plans = match (&spec.kind, ext) {
        (StrategyKind::LiquidateOwn, _) => vec![own(with_entrants(survivors), base_d.clone(), None)],
        (StrategyKind::HedgeOwn, _) => vec![own(with_entrants(survivors), base_d - &q_d, optimizing())],
        (StrategyKind::ReplicateOwn, _) => vec![own(with_entrants(survivors), base_d - &q_d, pinned())],
        (StrategyKind::HybridOwn { .. }, _) => {
            vec![own(with_entrants(survivors), base_d - &q_d_hedge, optimizing())]
        }
        (kind, Some(e)) => {
            let members = with_entrants(s.members_of(e)?);
            let base_e = &e.clearing_rhs;
            let (rhs_e, h) = match kind {
                StrategyKind::LiquidateExternal { .. } => (base_e + &q_d, None),
                StrategyKind::HedgeExternal { .. } => (base_e.clone(), optimizing()),
                StrategyKind::ReplicateExternal { .. } => (base_e.clone(), pinned()),
                StrategyKind::HybridExternal { .. } => (base_e + &q_d_liq, optimizing()),
                _ => unreachable!(),
            };
            vec![
                own(survivors, base_d - &q_d, None),
                PostPlan { exchange_id: e.id.clone(), participants: members, clearing_rhs: rhs_e, hedger: h },
            ]
        }
        (_, None) => return Err(Error::StrategyMismatch("external strategy without exchange".into())),
    };
    Ok((plans, q_d, hedger))
}

fn solve_plan(plan: &PostPlan, a: &AssetModel) -> Result<Equilibrium> {
    match &plan.hedger {
        Some(HedgerMode::Pinned(h, q)) => {
            let rhs = &plan.clearing_rhs - q;
            let mut eq = solve(&plan.exchange_id, &plan.participants, a, &rhs, None)?;
            eq.ids.push(h.id.clone());
            eq.positions.push(q.clone());
            eq.clearing_rhs = plan.clearing_rhs.clone();
            Ok(eq)
        }
        Some(HedgerMode::Optimizing(h)) => solve(&plan.exchange_id, &plan.participants, a, &plan.clearing_rhs, Some(h)),
        None => solve(&plan.exchange_id, &plan.participants, a, &plan.clearing_rhs, None),
    }
}

/// Runs the scenario's own strategy.
pub fn resolve(s: &Scenario) -> Result<ResolutionOutcome> {
    ensure_valid(s)?;
    let pre = pre_default_equilibria(s)?;
    resolve_with(s, &s.strategy, &pre)
}

/// Runs `spec` against precomputed pre-default equilibria.
pub fn resolve_with(s: &Scenario, spec: &StrategySpec, pre: &[Equilibrium]) -> Result<ResolutionOutcome> {
    let a = &s.asset;
    let m = a.dim();
    let (plans, q_d, hedger) = post_default_clearing(s, spec, pre)?;
    let hedger_id = hedger.as_ref().map(|h| h.participant.id.clone());
    let q_d_hedge = hedger.as_ref().map(|h| h.w.clone()).unwrap_or_else(|| Vector::zeros(m));
    let q_d_liq = &q_d - &q_d_hedge;

    let mut post = Vec::new();
    let mut lc_ex = Vec::new();
    let mut lc_i = Vec::new();
    let mut drho = Vec::new();
    let mut legs = Vec::new();
    let mut mc_ex = Vec::new();
    for plan in &plans {
        let eq = solve_plan(plan, a)?;
        let pre_eq = pre
            .iter()
            .find(|e| e.exchange_id == plan.exchange_id)
            .ok_or_else(|| Error::UnknownId(plan.exchange_id.clone()))?;
        let dp = &pre_eq.price - &eq.price;
        let zero = Vector::zeros(m);
        let pre_pos = |id: &str| pre_eq.position(id).cloned().unwrap_or_else(|| zero.clone());

        let lc_e: f64 = eq.positions.iter().map(|q| q.dot(&dp)).sum();

        // liquidation leg split
        let has_hedger = plan.hedger.is_some();
        let deltas: Vec<(String, Vector)> = eq
            .iter()
            .map(|(id, q)| (id.to_string(), q - pre_pos(id)))
            .collect();
        let target = eq
            .iter()
            .fold(plan.clearing_rhs.clone(), |acc, (id, _)| acc - pre_pos(id));
        let traders: Vec<&(String, Vector)> = deltas
            .iter()
            .filter(|(id, _)| Some(id) != hedger_id.as_ref().filter(|_| has_hedger))
            .collect();
        let mut leg_map: Vec<(String, Vector)> = Vec::new();
        for (id, dq) in &deltas {
            let is_c = has_hedger && Some(id) == hedger_id.as_ref();
            let leg = if !has_hedger {
                dq.clone()
            } else if is_c {
                zero.clone()
            } else {
                let mut v = Vector::zeros(m);
                for k in 0..m {
                    let tk = target[k];
                    if tk.abs() <= 1e-14 {
                        continue;
                    }
                    let sk: f64 = traders.iter().map(|(_, d)| d[k]).sum();
                    v[k] = if sk.abs() > 1e-14 { dq[k] * tk / sk } else { tk / traders.len() as f64 };
                }
                v
            };
            leg_map.push((id.clone(), leg));
        }

        let mut sum_rho = 0.0;
        for (id, qn) in eq.iter() {
            let qo = pre_pos(id);
            let leg = &lookup(&leg_map, id).cloned().unwrap_or_else(|| zero.clone());
            lc_i.push((id.to_string(), (&qo + leg).dot(&dp)));
            let p = plan
                .participants
                .iter()
                .chain(plan.hedger())
                .find(|p| p.id == id)
                .ok_or_else(|| Error::UnknownId(id.to_string()))?;
            let is_c = Some(id.to_string()) == hedger_id && has_hedger;
            let before = if is_c { 0.0 } else { objective_r(p, a, &qo)? };
            let r = objective_r(p, a, qn)? - before + qn.dot(&eq.price) - qo.dot(&pre_eq.price);
            sum_rho += r;
            drho.push((id.to_string(), r));
        }
        legs.extend(leg_map);
        lc_ex.push((plan.exchange_id.clone(), lc_e));
        mc_ex.push((plan.exchange_id.clone(), lc_e + sum_rho));
        post.push(eq);
    }
    let mc_total: f64 = mc_ex.iter().map(|x| x.1).sum();

    let d_id = s.defaulter_exchange()?.id.clone();
    let price_move = |ex: &str| -> Vector {
        let a0 = pre.iter().find(|e| e.exchange_id == ex).map(|e| e.price.clone());
        let a1 = post.iter().find(|e| e.exchange_id == ex).map(|e| e.price.clone());
        match (a0, a1) {
            (Some(x), Some(y)) => x - y,
            _ => Vector::zeros(m),
        }
    };
    let dpd = price_move(&d_id);
    let dpe = spec.kind.external_exchange().map(price_move).unwrap_or_else(|| Vector::zeros(m));
    let lc_formula = match &spec.kind {
        StrategyKind::LiquidateOwn => 0.0,
        StrategyKind::LiquidateExternal { .. } => -q_d.dot(&dpd) + q_d.dot(&dpe),
        StrategyKind::HedgeOwn
        | StrategyKind::HedgeExternal { .. }
        | StrategyKind::ReplicateOwn
        | StrategyKind::ReplicateExternal { .. } => -q_d.dot(&dpd),
        StrategyKind::HybridOwn { .. } => -q_d_hedge.dot(&dpd),
        StrategyKind::HybridExternal { .. } => -q_d.dot(&dpd) + q_d_liq.dot(&dpe),
    };
    let lc: f64 = lc_ex.iter().map(|x| x.1).sum();
    let sum_delta_rho: f64 = drho.iter().map(|x| x.1).sum();
    Ok(ResolutionOutcome {
        strategy: spec.kind.clone(),
        q_d,
        q_d_liq,
        q_d_hedge,
        hedger,
        defaulter_exchange: d_id,
        pre: pre.to_vec(),
        post,
        lc_per_exchange: lc_ex,
        lc_per_participant: lc_i,
        delta_rho: drho,
        liquidation_leg: legs,
        mc_per_exchange: mc_ex,
        mc_total,
        table3_row: Table3Row { line: spec.kind.line(), lc_formula, lc, sum_delta_rho, mc: mc_total },
    })
}

/// Market cost of survivors-only liquidation, `½ ϱ' q_dᵀ Γ q_d`.
pub fn mc_liquidation_survivors(varrho_post: f64, q_d: &Vector, a: &AssetModel) -> f64 {
    0.5 * varrho_post * q_d.dot(&(&a.gamma * q_d))
}

/// Market cost of hedging on the own exchange without new participants.
pub fn mc_hedging_no_entrants(
    varrho: f64,
    varrho_post: f64,
    varrho_c: f64,
    cov: &Vector,
    q_d: &Vector,
    a: &AssetModel,
) -> Result<f64> {
    let gi = a.gamma_inverse()?;
    Ok(varrho * varrho * (varrho_post - varrho_c) / (2.0 * varrho_c * varrho_c) * cov.dot(&(&gi * cov))
        + 0.5 * varrho_post * q_d.dot(&(&a.gamma * q_d))
        - varrho_post * varrho / varrho_c * q_d.dot(cov))
}

fn entropic_rho(p: &Participant) -> Result<f64> {
    match p.risk {
        RiskSpec::Entropic { varrho } => Ok(varrho),
        _ => Err(Error::WrongRiskKind(format!("{} is not entropic", p.id))),
    }
}

/// Entropic market cost from moments only, via the participants' optimal
/// value functions `f_i*(a) = -aᵀΓ⁻¹a/(2ϱ_i) + aᵀΓ⁻¹cov_i - ϱ_i cov_iᵀΓ⁻¹cov_i/2`
/// evaluated at the pre- and post-default risk premia `a = μ - p`.
pub fn entropic_mc_value_function(s: &Scenario) -> Result<f64> {
    let a = &s.asset;
    let gi = a.gamma_inverse()?;
    let d_ex = s.defaulter_exchange()?;
    let members = s.members_of(d_ex)?;
    let inv_sum: f64 = members.iter().map(|p| entropic_rho(p).map(|r| 1.0 / r)).sum::<Result<f64>>()?;
    let rho = 1.0 / inv_sum;
    let cov = members.iter().fold(Vector::zeros(a.dim()), |acc, p| acc + &p.cov_r);
    let prem = &cov * rho;
    let mut q_d = Vector::zeros(a.dim());
    for p in members.iter().filter(|p| s.defaulters.contains(&p.id)) {
        q_d += &gi * (&cov * (rho / entropic_rho(p)?) - &p.cov_r);
    }
    let survivors: Vec<&Participant> = members.iter().filter(|p| !s.defaulters.contains(&p.id)).collect();
    let entrants = &s.strategy.new_entrants;
    let quad = |x: &Vector, y: &Vector| x.dot(&(&gi * y));

    let (hedging, rho_c) = match s.strategy.kind {
        StrategyKind::LiquidateOwn => (false, 0.0),
        StrategyKind::HedgeOwn => {
            let r = s.strategy.hedger_risk.unwrap_or(s.participant(&s.defaulters[0])?.risk);
            match r {
                RiskSpec::Entropic { varrho } => (true, varrho),
                _ => return Err(Error::WrongRiskKind("hedger is not entropic".into())),
            }
        }
        _ => return Err(Error::StrategyMismatch("closed form covers liquidate_own and hedge_own".into())),
    };

    let mut inv_post = 0.0;
    let mut cov_post = Vector::zeros(a.dim());
    for p in survivors.iter().copied().chain(entrants.iter()) {
        inv_post += 1.0 / entropic_rho(p)?;
        cov_post += &p.cov_r;
    }
    let rhs = if hedging {
        inv_post += 1.0 / rho_c;
        cov_post += &a.gamma * &q_d;
        -&q_d
    } else {
        Vector::zeros(a.dim())
    };
    let rho_post = 1.0 / inv_post;
    let prem_post = (&cov_post + &a.gamma * &rhs) * rho_post;
    // LC = rhsᵀ(p - p') = rhsᵀ(a' - a)
    let mut mc = rhs.dot(&(&prem_post - &prem));
    for p in &survivors {
        let r = entropic_rho(p)?;
        mc += -(quad(&prem_post, &prem_post) - quad(&prem, &prem)) / (2.0 * r) + quad(&(&prem_post - &prem), &p.cov_r);
    }
    for p in entrants {
        let r = entropic_rho(p)?;
        mc += -quad(&prem_post, &prem_post) / (2.0 * r) + quad(&prem_post, &p.cov_r) - 0.5 * r * quad(&p.cov_r, &p.cov_r);
    }
    if hedging {
        mc += (&prem_post - &prem).dot(&q_d) - quad(&prem_post, &prem_post) / (2.0 * rho_c);
    }
    Ok(mc)
}

/// Closed-form entropic market cost for `liquidate_own` and `hedge_own`.
pub fn entropic_mc_closed_form(s: &Scenario) -> Result<f64> {
    let a = &s.asset;
    if a.ellipse != crate::EllipseKind::Gaussian {
        return Err(Error::WrongRiskKind("closed form requires Gaussian payoffs".into()));
    }
    if !s.strategy.new_entrants.is_empty() {
        return entropic_mc_value_function(s);
    }
    let gi = a.gamma_inverse()?;
    let d_ex = s.defaulter_exchange()?;
    let members = s.members_of(d_ex)?;
    let mut inv = 0.0;
    let mut inv_post = 0.0;
    let mut cov = Vector::zeros(a.dim());
    for p in &members {
        let r = entropic_rho(p)?;
        inv += 1.0 / r;
        if !s.defaulters.contains(&p.id) {
            inv_post += 1.0 / r;
        }
        cov += &p.cov_r;
    }
    let rho = 1.0 / inv;
    let mut q_d = Vector::zeros(a.dim());
    for p in members.iter().filter(|p| s.defaulters.contains(&p.id)) {
        q_d += &gi * (&cov * (rho / entropic_rho(p)?) - &p.cov_r);
    }
    match s.strategy.kind {
        StrategyKind::LiquidateOwn => Ok(mc_liquidation_survivors(1.0 / inv_post, &q_d, a)),
        StrategyKind::HedgeOwn => {
            let rc = match s.strategy.hedger_risk.unwrap_or(s.participant(&s.defaulters[0])?.risk) {
                RiskSpec::Entropic { varrho } => varrho,
                _ => return Err(Error::WrongRiskKind("hedger is not entropic".into())),
            };
            let rho_post = 1.0 / (inv_post + 1.0 / rc);
            mc_hedging_no_entrants(rho, rho_post, rc, &cov, &q_d, a)
        }
        _ => Err(Error::StrategyMismatch("closed form covers liquidate_own and hedge_own".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_model::EllipseKind;

    fn v1(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    fn scenario(n: usize, risk: RiskSpec, kind: StrategyKind) -> Scenario {
        let ps: Vec<Participant> = (1..=n)
            .map(|i| {
                let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
                Participant::member(i.to_string(), risk, 0.0, 0.09 * (i * i) as f64, v1(sign * 0.048 * i as f64))
            })
            .collect();
        Scenario {
            asset: AssetModel::single(2.0, 0.2, EllipseKind::Gaussian),
            exchanges: vec![Exchange {
                id: "D".into(),
                members: ps.iter().map(|p| p.id.clone()).collect(),
                clearing_rhs: v1(0.0),
            }],
            defaulters: vec![n.to_string()],
            participants: ps,
            strategy: StrategySpec::new(kind),
            xva: None,
        }
    }

    #[test]
    fn liquidation_has_zero_lc() {
        let s = scenario(15, RiskSpec::Entropic { varrho: 1.0 }, StrategyKind::LiquidateOwn);
        let o = resolve(&s).unwrap();
        assert!(o.lc_total().abs() < 1e-12);
        assert!((o.mc_total - 0.43).abs() < 0.005);
        assert!((o.delta_rho_of("14").unwrap() - 0.83).abs() < 0.005);
    }

    #[test]
    fn entropic_hedging_costs() {
        let s = scenario(15, RiskSpec::Entropic { varrho: 1.0 }, StrategyKind::HedgeOwn);
        let o = resolve(&s).unwrap();
        let post = o.post_of("D").unwrap();
        assert!((post.position("c").unwrap()[0] - 16.80).abs() < 0.005, "{:?}", post);
        assert!((o.lc_total() + 0.83).abs() < 0.005);
        assert!((o.mc_total - 0.42).abs() < 0.005);
        assert!((o.table3_row.lc - o.table3_row.lc_formula).abs() < 1e-12);
        let lc_sum: f64 = o.lc_per_participant.iter().map(|x| x.1).sum();
        assert!((lc_sum - o.lc_total()).abs() < 1e-12);
    }

    #[test]
    fn hybrid_with_full_liquidation_matches_liquidation() {
        // an ES hedger with nothing to hedge stays at its kink
        let s = scenario(6, RiskSpec::ExpectedShortfall { alpha: 0.975 }, StrategyKind::LiquidateOwn);
        let pre = pre_default_equilibria(&s).unwrap();
        let liq = resolve_with(&s, &s.strategy, &pre).unwrap();
        let qd = liq.q_d.clone();
        let hyb = resolve_with(&s, &s.strategy.with_kind(StrategyKind::HybridOwn { q_d_liq: qd }), &pre).unwrap();
        assert!(hyb.post_of("D").unwrap().position("c").unwrap().amax() < 1e-12);
        assert!((hyb.mc_total - liq.mc_total).abs() < 1e-9);
    }

    #[test]
    fn replicate_equals_liquidate_mc() {
        let s = scenario(9, RiskSpec::ExpectedShortfall { alpha: 0.975 }, StrategyKind::LiquidateOwn);
        let pre = pre_default_equilibria(&s).unwrap();
        let liq = resolve_with(&s, &s.strategy, &pre).unwrap();
        let rep = resolve_with(&s, &s.strategy.with_kind(StrategyKind::ReplicateOwn), &pre).unwrap();
        assert!((liq.mc_total - rep.mc_total).abs() < 1e-9);
        let dp = pre[0].price[0] - rep.post[0].price[0];
        assert!((rep.lc_total() - liq.lc_total() + liq.q_d[0] * dp).abs() < 1e-9);
    }

    #[test]
    fn closed_forms_agree() {
        for kind in [StrategyKind::LiquidateOwn, StrategyKind::HedgeOwn] {
            let s = scenario(15, RiskSpec::Entropic { varrho: 1.0 }, kind);
            let o = resolve(&s).unwrap();
            let cf = entropic_mc_closed_form(&s).unwrap();
            let vf = entropic_mc_value_function(&s).unwrap();
            assert!((o.mc_total - cf).abs() < 1e-9, "{} vs {cf}", o.mc_total);
            assert!((o.mc_total - vf).abs() < 1e-9, "{} vs {vf}", o.mc_total);
        }
    }

    #[test]
    fn unchanged_participant_has_zero_increment() {
        let s = scenario(4, RiskSpec::Entropic { varrho: 1.0 }, StrategyKind::LiquidateOwn);
        let mut s2 = s.clone();
        // defaulter with no position: nothing moves
        s2.participants.push(Participant::member("z", RiskSpec::Entropic { varrho: 1e6 }, 0.0, 0.0, v1(0.0)));
        s2.exchanges[0].members.push("z".into());
        s2.defaulters = vec!["z".into()];
        let o = resolve(&s2).unwrap();
        for (_, r) in &o.delta_rho {
            assert!(r.abs() < 1e-5);
        }
    }
}
