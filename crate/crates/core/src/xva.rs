//! Credit valuation adjustments of clearing members around a default:
//! margins, default-fund contributions, Monte Carlo CVA/KVA, MVA, FVA,
//! auction costs and the resulting funds transfer price.
//!
//! Defaults follow a one-factor Gaussian latent model,
//! `X_i = √ϱ ε + √(1-ϱ) ε_i`, member `i` defaulting iff `X_i ≤ Φ⁻¹(γ_i)`.
//! The market payoff `P = μ + L Y` is drawn independently of the credit
//! factors. Paths are split into batches, each with its own ChaCha stream
//! keyed by `(seed, batch)`, so results do not depend on the thread count.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::equilibrium::Equilibrium;
use crate::market_model::{AssetModel, Role, Scenario};
use crate::resolution::{ResolutionOutcome, StrategyKind};
use crate::risk_engine::standardized_quantile;
use crate::{Error, Matrix, Result, Vector};

/// Relative size below which an auction package counts as flat.
const FLAT_PACKAGE_TOL: f64 = 1e-8;
const MIN_TAIL_PATHS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Collateral {
    /// No initial margin and no default fund.
    None,
    /// VaR initial margin at `alpha_im`, cover-2 default fund at `alpha_df`.
    Margined { alpha_im: f64, alpha_df: f64 },
}

/// Normalization of the KVA expected shortfall.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KvaScaling {
    /// ES of the survival-weighted loss `J_0 (C_0 - CVA_0)` rescaled by
    /// `1/(1-γ_0)`.
    Survival,
    /// ES of `C_0 - CVA_0` among surviving paths.
    Plain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XvaConfig {
    /// Horizon in years; default probabilities are understood over it.
    pub horizon: f64,
    pub default_gamma: f64,
    /// Per-participant default probabilities overriding `default_gamma`.
    /// The CCP hedger defaults to 0 unless listed here.
    pub gamma: BTreeMap<String, f64>,
    /// Ratio of the blended funding rate to γ.
    pub funding_blend: f64,
    pub rho_cr: f64,
    pub collateral: Collateral,
    pub alpha_kva: f64,
    pub hurdle: f64,
    pub n_paths: usize,
    pub n_batches: usize,
    pub seed: u64,
    pub kva_scaling: KvaScaling,
    /// Expected OTC receivables per participant, entering FVA only.
    pub otc_receivable: BTreeMap<String, f64>,
}

impl Default for XvaConfig {
    fn default() -> Self {
        XvaConfig {
            horizon: 5.0,
            default_gamma: 0.393,
            gamma: BTreeMap::new(),
            funding_blend: 0.25,
            rho_cr: 0.2,
            collateral: Collateral::Margined { alpha_im: 0.75, alpha_df: 0.80 },
            alpha_kva: 0.9975,
            hurdle: 0.10,
            n_paths: 1_000_000,
            n_batches: 100,
            seed: 42,
            kva_scaling: KvaScaling::Survival,
            otc_receivable: BTreeMap::new(),
        }
    }
}

impl XvaConfig {
    /// Returns one message per violated constraint.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        let unit = |x: f64| (0.0..1.0).contains(&x);
        if !(self.horizon > 0.0) {
            out.push(format!("horizon {} must be positive", self.horizon));
        }
        if !unit(self.default_gamma) {
            out.push(format!("default probability {} outside [0,1)", self.default_gamma));
        }
        for (id, g) in &self.gamma {
            if !unit(*g) {
                out.push(format!("default probability of {id} = {g} outside [0,1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.funding_blend) {
            out.push(format!("funding blend {} outside [0,1]", self.funding_blend));
        }
        if !unit(self.rho_cr) {
            out.push(format!("credit correlation {} outside [0,1)", self.rho_cr));
        }
        if let Collateral::Margined { alpha_im, alpha_df } = self.collateral {
            if !(alpha_im > 0.0 && alpha_im < 1.0) {
                out.push(format!("alpha_im {alpha_im} outside (0,1)"));
            }
            if !(alpha_df > alpha_im && alpha_df < 1.0) {
                out.push(format!("alpha_df {alpha_df} must lie in (alpha_im, 1)"));
            }
        }
        if !(self.alpha_kva > 0.0 && self.alpha_kva < 1.0) {
            out.push(format!("alpha_kva {} outside (0,1)", self.alpha_kva));
        }
        if !(self.hurdle >= 0.0) {
            out.push(format!("hurdle {} must be non-negative", self.hurdle));
        }
        if self.n_paths == 0 || self.n_batches == 0 {
            out.push("n_paths and n_batches must be positive".into());
        } else if self.n_paths % self.n_batches != 0 {
            out.push(format!("n_paths {} not divisible by n_batches {}", self.n_paths, self.n_batches));
        }
        out
    }

    pub fn gamma_of(&self, id: &str, role: Role) -> f64 {
        match self.gamma.get(id) {
            Some(g) => *g,
            None if role == Role::CcpHedger => 0.0,
            None => self.default_gamma,
        }
    }

    fn kva_factor(&self, gamma: f64) -> f64 {
        let base = self.hurdle / (1.0 + self.hurdle);
        match self.kva_scaling {
            KvaScaling::Survival => base / (1.0 - gamma),
            KvaScaling::Plain => base,
        }
    }
}

/// Initial margin, stressed loss over IM and default-fund contribution per
/// account.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginProfile {
    pub ids: Vec<String>,
    pub im: Vec<f64>,
    pub sloim: Vec<f64>,
    pub df: Vec<f64>,
}

impl MarginProfile {
    pub fn get(&self, id: &str) -> Option<(f64, f64)> {
        let k = self.ids.iter().position(|x| x == id)?;
        Some((self.im[k], self.df[k]))
    }
}

/// VaR initial margins at `price` and a cover-2 default fund allocated
/// pro rata to stressed losses over IM.
pub fn compute_margins(
    ids: &[String],
    positions: &[Vector],
    price: &Vector,
    a: &AssetModel,
    collateral: Collateral,
) -> Result<MarginProfile> {
    let n = positions.len();
    let (alpha_im, alpha_df) = match collateral {
        Collateral::None => {
            return Ok(MarginProfile { ids: ids.to_vec(), im: vec![0.0; n], sloim: vec![0.0; n], df: vec![0.0; n] })
        }
        Collateral::Margined { alpha_im, alpha_df } => (alpha_im, alpha_df),
    };
    if alpha_df < alpha_im {
        return Err(Error::InvalidParam(format!("alpha_df {alpha_df} below alpha_im {alpha_im}")));
    }
    let z_im = standardized_quantile(a.ellipse, alpha_im)?;
    let z_df = standardized_quantile(a.ellipse, alpha_df)?;
    let drift = price - &a.mu;
    let mut im = Vec::with_capacity(n);
    let mut sloim = Vec::with_capacity(n);
    for q in positions {
        let s = q.dot(&(&a.gamma * q)).max(0.0).sqrt();
        im.push(q.dot(&drift) + s * z_im);
        sloim.push(s * (z_df - z_im));
    }
    let total: f64 = sloim.iter().sum();
    let mut sorted = sloim.clone();
    sorted.sort_by(|x, y| y.total_cmp(x));
    let cover2: f64 = sorted.iter().take(2).sum();
    let df = sloim
        .iter()
        .map(|s| if total > 0.0 { s / total * cover2 } else { 0.0 })
        .collect();
    Ok(MarginProfile { ids: ids.to_vec(), im, sloim, df })
}

/// One clearing account in a credit state.
#[derive(Debug, Clone, PartialEq)]
pub struct Account {
    pub id: String,
    pub q: Vector,
    /// Deterministic part of the exposure on top of `qᵀ(p_ref - P)`.
    pub shift: f64,
    pub im: f64,
    pub df: f64,
    /// Loss-allocation weight among survivors.
    pub weight: f64,
}

/// A set of accounts sharing a reference price and default fund.
#[derive(Debug, Clone, PartialEq)]
pub struct CreditState {
    pub label: String,
    pub ref_price: Vector,
    pub accounts: Vec<Account>,
}

impl CreditState {
    /// Margins are taken at `margin_price`; loss weights are the default-fund
    /// contributions, or the positions' standard deviations when the fund
    /// is empty.
    pub fn build(
        label: impl Into<String>,
        ids: &[String],
        positions: &[Vector],
        shifts: &[f64],
        ref_price: &Vector,
        margin_price: &Vector,
        a: &AssetModel,
        collateral: Collateral,
    ) -> Result<Self> {
        let m = compute_margins(ids, positions, margin_price, a, collateral)?;
        let df_total: f64 = m.df.iter().sum();
        let weights: Vec<f64> = if df_total > 0.0 {
            m.df.clone()
        } else {
            let w: Vec<f64> = positions.iter().map(|q| q.dot(&(&a.gamma * q)).max(0.0).sqrt()).collect();
            if w.iter().sum::<f64>() > 0.0 {
                w
            } else {
                vec![1.0; ids.len()]
            }
        };
        let accounts = (0..ids.len())
            .map(|k| Account {
                id: ids[k].clone(),
                q: positions[k].clone(),
                shift: shifts[k],
                im: m.im[k],
                df: m.df[k],
                weight: weights[k],
            })
            .collect();
        Ok(CreditState { label: label.into(), ref_price: ref_price.clone(), accounts })
    }

    pub fn account(&self, id: &str) -> Option<&Account> {
        self.accounts.iter().find(|x| x.id == id)
    }
}

/// Names whose defaults are simulated jointly, with their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Universe {
    pub names: Vec<String>,
    pub gamma: Vec<f64>,
}

impl Universe {
    pub fn index(&self, id: &str) -> Result<usize> {
        self.names.iter().position(|n| n == id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    fn thresholds(&self) -> Vec<f64> {
        let n = Normal::standard();
        self.gamma
            .iter()
            .map(|&g| if g <= 0.0 { f64::NEG_INFINITY } else { n.inverse_cdf(g) })
            .collect()
    }
}

/// Survival indicators (`names` per path) and market factors (`m` per path).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDraws {
    pub n: usize,
    pub alive: Vec<bool>,
    pub y: Vec<f64>,
}

/// Draws one batch of default indicators and market shocks.
pub fn draw_batch(cfg: &XvaConfig, universe: &Universe, m: usize, batch: usize) -> BatchDraws {
    let n = cfg.n_paths / cfg.n_batches.max(1);
    let k = universe.names.len();
    let th = universe.thresholds();
    let (a, b) = (cfg.rho_cr.sqrt(), (1.0 - cfg.rho_cr).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(batch as u64);
    let mut alive = Vec::with_capacity(n * k);
    let mut y = Vec::with_capacity(n * m);
    for _ in 0..n {
        let eps: f64 = rng.sample(StandardNormal);
        for t in &th {
            let e: f64 = rng.sample(StandardNormal);
            alive.push(a * eps + b * e > *t);
        }
        for _ in 0..m {
            y.push(rng.sample(StandardNormal));
        }
    }
    BatchDraws { n, alive, y }
}

#[derive(Debug, Clone, Default)]
struct AccountBatch {
    sum_jc: f64,
    sum_jc2: f64,
    sum_c_alive: f64,
    survivors: usize,
    es: Option<f64>,
}

fn evaluate_batch(
    states: &[(CreditState, Vec<usize>)],
    draws: &BatchDraws,
    chol: &Matrix,
    mu: &Vector,
    k: usize,
    alpha_kva: f64,
) -> Vec<Vec<AccountBatch>> {
    let m = mu.len();
    states
        .iter()
        .map(|(st, idx)| {
            let na = st.accounts.len();
            // exposure_j = c_j - b_jᵀ Y with c_j = q_j(p_ref - μ) + shift_j, b_j = Lᵀq_j
            let base: Vec<f64> = st.accounts.iter().map(|x| x.q.dot(&(&st.ref_price - mu)) + x.shift).collect();
            let loads: Vec<Vector> = st.accounts.iter().map(|x| chol.transpose() * &x.q).collect();
            let buffer: Vec<f64> = st.accounts.iter().map(|x| x.im + x.df).collect();
            let mut out = vec![AccountBatch::default(); na];
            let mut tails: Vec<Vec<f64>> = vec![Vec::with_capacity(draws.n); na];
            for p in 0..draws.n {
                let alive = &draws.alive[p * k..(p + 1) * k];
                let y = &draws.y[p * m..(p + 1) * m];
                let mut loss = 0.0;
                let mut den = 0.0;
                for (j, &u) in idx.iter().enumerate() {
                    if alive[u] {
                        den += st.accounts[j].weight;
                    } else {
                        let by: f64 = loads[j].iter().zip(y).map(|(l, z)| l * z).sum();
                        loss += (base[j] - by - buffer[j]).max(0.0);
                    }
                }
                for (j, &u) in idx.iter().enumerate() {
                    if !alive[u] {
                        continue;
                    }
                    let c = if den > 0.0 { st.accounts[j].weight / den * loss } else { 0.0 };
                    let acc = &mut out[j];
                    acc.sum_jc += c;
                    acc.sum_jc2 += c * c;
                    acc.sum_c_alive += c;
                    acc.survivors += 1;
                    tails[j].push(c);
                }
            }
            for (acc, mut t) in out.iter_mut().zip(tails) {
                if t.is_empty() {
                    continue;
                }
                let ns = t.len();
                let kk = ((alpha_kva * ns as f64).ceil() as usize).saturating_sub(1).min(ns - 1);
                t.select_nth_unstable_by(kk, |x, y| x.total_cmp(y));
                let tail = &t[kk..];
                acc.es = Some(tail.iter().sum::<f64>() / tail.len() as f64);
            }
            out
        })
        .collect()
}

/// XVA components of one account in one state.
#[derive(Debug, Clone, PartialEq)]
pub struct AccountXva {
    pub id: String,
    pub gamma: f64,
    pub im: f64,
    pub df: f64,
    pub cva: f64,
    pub cva_se: f64,
    /// `E[C_0 | J_0 = 1]` from surviving paths only.
    pub cva_rejection: f64,
    pub cva_rejection_se: f64,
    pub mva: f64,
    pub kva: f64,
    pub kva_se: f64,
    /// Survival-measure ES of `C_0 - CVA_0` before the hurdle factor.
    pub es_centered: f64,
    pub fva: f64,
}

impl AccountXva {
    pub fn total(&self) -> f64 {
        self.cva + self.mva + self.kva + self.fva
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XvaStateResult {
    pub label: String,
    pub accounts: Vec<AccountXva>,
}

impl XvaStateResult {
    pub fn get(&self, id: &str) -> Option<&AccountXva> {
        self.accounts.iter().find(|x| x.id == id)
    }
}

/// Monte Carlo evaluation of several states on common random numbers.
pub fn evaluate_states(
    states: &[CreditState],
    universe: &Universe,
    a: &AssetModel,
    cfg: &XvaConfig,
) -> Result<Vec<XvaStateResult>> {
    let problems = cfg.check();
    if !problems.is_empty() {
        return Err(Error::InvalidParam(problems.join("; ")));
    }
    let chol = a
        .gamma
        .clone()
        .cholesky()
        .ok_or(Error::SingularGamma)?
        .l();
    let indexed: Vec<(CreditState, Vec<usize>)> = states
        .iter()
        .map(|st| {
            let idx = st.accounts.iter().map(|x| universe.index(&x.id)).collect::<Result<Vec<_>>>()?;
            Ok((st.clone(), idx))
        })
        .collect::<Result<_>>()?;
    let k = universe.names.len();
    let m = a.dim();
    let batches: Vec<Vec<Vec<AccountBatch>>> = (0..cfg.n_batches)
        .into_par_iter()
        .map(|b| {
            let draws = draw_batch(cfg, universe, m, b);
            evaluate_batch(&indexed, &draws, &chol, &a.mu, k, cfg.alpha_kva)
        })
        .collect();

    let n_total = (cfg.n_paths / cfg.n_batches * cfg.n_batches) as f64;
    let mut results = Vec::with_capacity(states.len());
    for (s_idx, (st, idx)) in indexed.iter().enumerate() {
        let mut accounts = Vec::with_capacity(st.accounts.len());
        for (j, acc) in st.accounts.iter().enumerate() {
            let gamma = universe.gamma[idx[j]];
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            let mut sum_alive = 0.0;
            let mut surv = 0usize;
            let mut es_batches = Vec::with_capacity(cfg.n_batches);
            for b in &batches {
                let x = &b[s_idx][j];
                sum += x.sum_jc;
                sum2 += x.sum_jc2;
                sum_alive += x.sum_c_alive;
                surv += x.survivors;
                if let Some(e) = x.es {
                    es_batches.push(e);
                }
            }
            if surv == 0 {
                return Err(Error::NoSurvivors);
            }
            if (1.0 - cfg.alpha_kva) * surv as f64 > 0.0 && (1.0 - cfg.alpha_kva) * (surv as f64) < MIN_TAIL_PATHS {
                return Err(Error::InsufficientTail { tail: (1.0 - cfg.alpha_kva) * surv as f64 });
            }
            let mean_jc = sum / n_total;
            let var_jc = (sum2 / n_total - mean_jc * mean_jc).max(0.0);
            let cva = mean_jc / (1.0 - gamma);
            let cva_se = (var_jc / n_total).sqrt() / (1.0 - gamma);
            let cva_rej = sum_alive / surv as f64;
            let var_rej = (sum2 / surv as f64 - cva_rej * cva_rej).max(0.0);
            let nb = es_batches.len() as f64;
            let es_mean = es_batches.iter().sum::<f64>() / nb;
            let es_var = es_batches.iter().map(|e| (e - es_mean).powi(2)).sum::<f64>() / (nb - 1.0).max(1.0);
            let factor = cfg.kva_factor(gamma);
            let centered = (es_mean - cva).max(0.0);
            let kva = factor * centered;
            let es_surv = match cfg.kva_scaling {
                KvaScaling::Survival => centered / (1.0 - gamma),
                KvaScaling::Plain => centered,
            };
            let mva = cfg.funding_blend * gamma * (acc.im + acc.df);
            let er = cfg.otc_receivable.get(&acc.id).copied().unwrap_or(0.0);
            let fva = gamma / (1.0 + gamma) * (er - cva - mva - es_surv).max(0.0);
            accounts.push(AccountXva {
                id: acc.id.clone(),
                gamma,
                im: acc.im,
                df: acc.df,
                cva,
                cva_se,
                cva_rejection: cva_rej,
                cva_rejection_se: (var_rej / surv as f64).sqrt(),
                mva,
                kva,
                kva_se: factor * (es_var / nb).sqrt(),
                es_centered: es_surv,
                fva,
            });
        }
        results.push(XvaStateResult { label: st.label.clone(), accounts });
    }
    Ok(results)
}

/// Summed XVA increments by component.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct XvaDelta {
    pub cva: f64,
    pub mva: f64,
    pub kva: f64,
    pub fva: f64,
}

impl XvaDelta {
    pub fn total(&self) -> f64 {
        self.cva + self.mva + self.kva + self.fva
    }

    fn between(after: Option<&AccountXva>, before: Option<&AccountXva>) -> Self {
        let f = |x: Option<&AccountXva>, g: fn(&AccountXva) -> f64| x.map(g).unwrap_or(0.0);
        XvaDelta {
            cva: f(after, |x| x.cva) - f(before, |x| x.cva),
            mva: f(after, |x| x.mva) - f(before, |x| x.mva),
            kva: f(after, |x| x.kva) - f(before, |x| x.kva),
            fva: f(after, |x| x.fva) - f(before, |x| x.fva),
        }
    }

    fn add(&mut self, o: XvaDelta) {
        self.cva += o.cva;
        self.mva += o.mva;
        self.kva += o.kva;
        self.fva += o.fva;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionCandidate {
    pub taker: String,
    pub sum: XvaDelta,
    /// The taker's own increment.
    pub own: XvaDelta,
    pub ac: f64,
}

/// One row of the strategy comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyFtp {
    pub name: String,
    pub lc: f64,
    pub sum_delta_rho: f64,
    pub mc: f64,
    pub sum_delta_xva: f64,
    pub ac: f64,
    pub taker: Option<String>,
    pub cc: f64,
    pub ftp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyXva {
    pub name: String,
    pub post: Option<XvaStateResult>,
    pub delta_xva: Vec<(String, f64)>,
    pub sum_delta: XvaDelta,
    /// Candidates ranked by auction cost, best first.
    pub auction: Vec<AuctionCandidate>,
    pub ftp: StrategyFtp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XvaReport {
    pub collateral: Collateral,
    pub n_paths: usize,
    pub n_batches: usize,
    pub seed: u64,
    pub pre: XvaStateResult,
    pub strategies: Vec<StrategyXva>,
}

impl XvaReport {
    pub fn strategy(&self, name: &str) -> Option<&StrategyXva> {
        self.strategies.iter().find(|s| s.name == name)
    }
}

/// What to value for one row of the comparison.
#[derive(Debug, Clone, PartialEq)]
pub enum XvaPlan {
    /// A resolution strategy, with no auction of any residual package.
    Resolution(ResolutionOutcome),
    /// Auction of the defaulted portfolio at pre-default prices.
    Auction,
    /// A resolution strategy followed by an auction of the CCP's residual
    /// package.
    ResolutionThenAuction(ResolutionOutcome),
}

struct PlanStates {
    post: Option<usize>,
    auction: Vec<(String, usize)>,
}

fn universe_of(s: &Scenario, cfg: &XvaConfig) -> Universe {
    let mut names = Vec::new();
    let mut gamma = Vec::new();
    for p in s.participants.iter().chain(&s.strategy.new_entrants) {
        if !names.contains(&p.id) {
            names.push(p.id.clone());
            gamma.push(cfg.gamma_of(&p.id, p.role));
        }
    }
    let c = s.strategy.hedger_id.clone();
    if !names.contains(&c) {
        gamma.push(cfg.gamma_of(&c, Role::CcpHedger));
        names.push(c);
    }
    Universe { names, gamma }
}

/// Post-default accounts of the defaulter's exchange.
fn post_state(o: &ResolutionOutcome, a: &AssetModel, cfg: &XvaConfig) -> Result<CreditState> {
    let pre = o
        .pre_of(&o.defaulter_exchange)
        .ok_or_else(|| Error::UnknownId(o.defaulter_exchange.clone()))?;
    let post = o
        .post_of(&o.defaulter_exchange)
        .ok_or_else(|| Error::UnknownId(o.defaulter_exchange.clone()))?;
    let dp = &pre.price - &post.price;
    let zero = Vector::zeros(a.dim());
    let shifts: Vec<f64> = post
        .ids
        .iter()
        .map(|id| {
            let q = pre.position(id).unwrap_or(&zero);
            let leg = o.leg_of(id).unwrap_or(&zero);
            (q + leg).dot(&dp)
        })
        .collect();
    CreditState::build("post", &post.ids, &post.positions, &shifts, &post.price, &pre.price, a, cfg.collateral)
}

fn auction_states(
    base: &CreditState,
    exclude: &[String],
    package: &Vector,
    margin_price: &Vector,
    a: &AssetModel,
    cfg: &XvaConfig,
) -> Result<Vec<(String, CreditState)>> {
    let kept: Vec<&Account> = base.accounts.iter().filter(|x| !exclude.contains(&x.id)).collect();
    if kept.is_empty() {
        return Err(Error::NoSurvivors);
    }
    let ids: Vec<String> = kept.iter().map(|x| x.id.clone()).collect();
    let shifts: Vec<f64> = kept.iter().map(|x| x.shift).collect();
    kept.iter()
        .enumerate()
        .map(|(t, taker)| {
            let qs: Vec<Vector> = kept
                .iter()
                .enumerate()
                .map(|(j, x)| if j == t { &x.q + package } else { x.q.clone() })
                .collect();
            let st = CreditState::build(
                format!("auction:{}", taker.id),
                &ids,
                &qs,
                &shifts,
                &base.ref_price,
                margin_price,
                a,
                cfg.collateral,
            )?;
            Ok((taker.id.clone(), st))
        })
        .collect()
}

fn is_flat(package: &Vector, scale: &Vector) -> bool {
    package.amax() <= FLAT_PACKAGE_TOL * scale.amax().max(1.0)
}

/// Values every plan against the pre-default state on one set of paths.
pub fn run_xva(
    s: &Scenario,
    pre: &[Equilibrium],
    plans: &[(String, XvaPlan)],
    cfg: &XvaConfig,
) -> Result<XvaReport> {
    let a = &s.asset;
    let d_ex = s.defaulter_exchange()?;
    let pre_d = pre
        .iter()
        .find(|e| e.exchange_id == d_ex.id)
        .ok_or_else(|| Error::UnknownId(d_ex.id.clone()))?;
    let universe = universe_of(s, cfg);
    let mut q_d = Vector::zeros(a.dim());
    for d in &s.defaulters {
        q_d += pre_d.position(d).ok_or_else(|| Error::UnknownId(d.clone()))?;
    }
    let zeros = vec![0.0; pre_d.ids.len()];
    let pre_state = CreditState::build("pre", &pre_d.ids, &pre_d.positions, &zeros, &pre_d.price, &pre_d.price, a, cfg.collateral)?;
    let mut states = vec![pre_state.clone()];
    let mut index = Vec::with_capacity(plans.len());
    for (_, plan) in plans {
        let mut ps = PlanStates { post: None, auction: Vec::new() };
        match plan {
            XvaPlan::Auction => {
                for (t, st) in auction_states(&pre_state, &s.defaulters, &q_d, &pre_d.price, a, cfg)? {
                    ps.auction.push((t, states.len()));
                    states.push(st);
                }
            }
            XvaPlan::Resolution(o) | XvaPlan::ResolutionThenAuction(o) => {
                let post = post_state(o, a, cfg)?;
                ps.post = Some(states.len());
                states.push(post.clone());
                if let XvaPlan::ResolutionThenAuction(o) = plan {
                    if o.strategy.external_exchange().is_some() {
                        return Err(Error::UnsupportedCombination(
                            "auction after an external-exchange strategy".into(),
                        ));
                    }
                    let mut package = o.q_d_hedge.clone();
                    let mut exclude = Vec::new();
                    if let Some(h) = &o.hedger {
                        let post_eq = o.post_of(&o.defaulter_exchange).ok_or(Error::NoSurvivors)?;
                        if let Some(qc) = post_eq.position(&h.participant.id) {
                            package += qc;
                        }
                        exclude.push(h.participant.id.clone());
                    }
                    if !matches!(o.strategy, StrategyKind::LiquidateOwn) && !is_flat(&package, &q_d) {
                        for (t, st) in auction_states(&post, &exclude, &package, &pre_d.price, a, cfg)? {
                            ps.auction.push((t, states.len()));
                            states.push(st);
                        }
                    }
                }
            }
        }
        index.push(ps);
    }

    let mut results = evaluate_states(&states, &universe, a, cfg)?;
    let pre_res = results[0].clone();
    let hedger_ids: Vec<String> = vec![s.strategy.hedger_id.clone()];
    let counted = |id: &str| !s.defaulters.iter().any(|d| d == id) && !hedger_ids.iter().any(|c| c == id);

    let mut out = Vec::with_capacity(plans.len());
    for ((name, plan), ps) in plans.iter().zip(index) {
        let (post_res, base_res) = match ps.post {
            Some(k) => {
                let r = std::mem::replace(&mut results[k], XvaStateResult { label: String::new(), accounts: vec![] });
                (Some(r.clone()), r)
            }
            None => (None, pre_res.clone()),
        };
        let mut delta_xva = Vec::new();
        let mut sum_delta = XvaDelta::default();
        if let Some(post) = &post_res {
            for acc in &post.accounts {
                if !counted(&acc.id) {
                    continue;
                }
                let d = XvaDelta::between(Some(acc), pre_res.get(&acc.id));
                delta_xva.push((acc.id.clone(), d.total()));
                sum_delta.add(d);
            }
        }
        let mut auction = Vec::new();
        for (taker, k) in &ps.auction {
            let st = &results[*k];
            let mut sum = XvaDelta::default();
            let mut own = XvaDelta::default();
            for acc in &base_res.accounts {
                if !counted(&acc.id) {
                    continue;
                }
                let d = XvaDelta::between(st.get(&acc.id), Some(acc));
                if &acc.id == taker {
                    own = d;
                }
                sum.add(d);
            }
            auction.push(AuctionCandidate { taker: taker.clone(), sum, own, ac: sum.total() });
        }
        auction.sort_by(|x, y| x.ac.total_cmp(&y.ac));
        let (ac, taker) = match auction.first() {
            Some(c) => (c.ac, Some(c.taker.clone())),
            None => (0.0, None),
        };
        let (lc, sum_delta_rho, mc) = match plan {
            XvaPlan::Auction => (0.0, 0.0, 0.0),
            XvaPlan::Resolution(o) | XvaPlan::ResolutionThenAuction(o) => (o.lc_total(), o.sum_delta_rho(), o.mc_total),
        };
        let sdx = sum_delta.total();
        let cc = sdx + ac;
        out.push(StrategyXva {
            name: name.clone(),
            post: post_res,
            delta_xva,
            sum_delta,
            auction,
            ftp: StrategyFtp { name: name.clone(), lc, sum_delta_rho, mc, sum_delta_xva: sdx, ac, taker, cc, ftp: mc + cc },
        });
    }
    Ok(XvaReport {
        collateral: cfg.collateral,
        n_paths: cfg.n_paths,
        n_batches: cfg.n_batches,
        seed: cfg.seed,
        pre: pre_res,
        strategies: out,
    })
}
