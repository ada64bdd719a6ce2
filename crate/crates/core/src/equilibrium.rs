//! Radner equilibria: closed form for entropic/Gaussian exchanges, damped
//! Newton on the first-order system otherwise.

use crate::market_model::{AssetModel, EllipseKind, Participant, RiskSpec};
use crate::risk_engine::{es_standardized, grad_r, hessian_r, objective_r, position_variance};
use crate::{Error, Matrix, Result, Vector};

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    ClosedForm,
    Newton { iterations: usize },
    /// ES hedger parked at its kink `q_c = -w_c`.
    HedgerKink { iterations: usize },
    /// ES hedger on the indifference ray `q_c = -w_c + t Γ⁻¹(μ - p)`.
    HedgerRay { iterations: usize },
}

impl SolveMethod {
    pub fn iterations(&self) -> usize {
        match *self {
            SolveMethod::ClosedForm => 0,
            SolveMethod::Newton { iterations }
            | SolveMethod::HedgerKink { iterations }
            | SolveMethod::HedgerRay { iterations } => iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub exchange_id: String,
    pub ids: Vec<String>,
    pub positions: Vec<Vector>,
    pub price: Vector,
    pub clearing_rhs: Vector,
    pub residual_kkt: f64,
    pub residual_clearing: f64,
    pub method: SolveMethod,
    pub residual_history: Vec<f64>,
}

impl Equilibrium {
    pub fn position(&self, id: &str) -> Option<&Vector> {
        self.ids.iter().position(|x| x == id).map(|k| &self.positions[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Vector)> {
        self.ids.iter().map(|s| s.as_str()).zip(self.positions.iter())
    }
}

/// `ϱ = (Σ 1/ϱ_i)⁻¹` and `cov = Σ cov_i` over an entropic population.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRisk {
    pub varrho_agg: f64,
    pub cov_agg: Vector,
}

impl AggregateRisk {
    pub fn of(participants: &[Participant]) -> Result<Self> {
        let first = participants
            .first()
            .ok_or_else(|| Error::InvalidParam("empty participant set".into()))?;
        let mut tol = 0.0;
        let mut cov = Vector::zeros(first.cov_r.len());
        for p in participants {
            match p.risk {
                RiskSpec::Entropic { varrho } => tol += 1.0 / varrho,
                _ => return Err(Error::WrongRiskKind(format!("{} is not entropic", p.id))),
            }
            cov += &p.cov_r;
        }
        Ok(AggregateRisk { varrho_agg: 1.0 / tol, cov_agg: cov })
    }
}

fn varrho_of(p: &Participant) -> Result<f64> {
    match p.risk {
        RiskSpec::Entropic { varrho } => Ok(varrho),
        _ => Err(Error::WrongRiskKind(format!("{} is not entropic", p.id))),
    }
}

fn check_rhs(a: &AssetModel, rhs: &Vector) -> Result<()> {
    if rhs.len() != a.dim() {
        return Err(Error::DimensionMismatch(format!(
            "clearing rhs has length {} but m = {}",
            rhs.len(),
            a.dim()
        )));
    }
    Ok(())
}

/// Closed-form mean-variance equilibrium for risk aversions `rhos`; shared by
/// the entropic solver and the Newton warm start.
fn mean_variance_equilibrium(
    participants: &[Participant],
    rhos: &[f64],
    a: &AssetModel,
    rhs: &Vector,
) -> Result<(Vec<Vector>, Vector)> {
    let ginv = a.gamma_inverse()?;
    let agg = 1.0 / rhos.iter().map(|r| 1.0 / r).sum::<f64>();
    let cov: Vector = participants
        .iter()
        .fold(Vector::zeros(a.dim()), |acc, p| acc + &p.cov_r);
    let shifted = &cov + &a.gamma * rhs;
    let price = &a.mu - &shifted * agg;
    let positions = participants
        .iter()
        .zip(rhos)
        .map(|(p, r)| {
            let k = agg / r;
            &ginv * (&shifted * k - &p.cov_r)
        })
        .collect();
    Ok((positions, price))
}

fn residuals(
    participants: &[Participant],
    a: &AssetModel,
    positions: &[Vector],
    price: &Vector,
    rhs: &Vector,
) -> (f64, f64) {
    let mut kkt: f64 = 0.0;
    for (p, q) in participants.iter().zip(positions) {
        match grad_r(p, a, q) {
            Ok(g) => kkt = kkt.max((g + price).amax()),
            Err(_) => kkt = f64::INFINITY,
        }
    }
    let total = positions.iter().fold(Vector::zeros(a.dim()), |acc, q| acc + q);
    (kkt, (total - rhs).amax())
}

/// Entropic/Gaussian equilibrium with clearing condition `Σ q_i = rhs`.
pub fn solve_entropic(
    exchange_id: &str,
    participants: &[Participant],
    a: &AssetModel,
    rhs: &Vector,
) -> Result<Equilibrium> {
    check_rhs(a, rhs)?;
    if a.ellipse != EllipseKind::Gaussian {
        return Err(Error::UnsupportedCombination("entropic risk with Student-t payoffs".into()));
    }
    let rhos: Vec<f64> = participants.iter().map(varrho_of).collect::<Result<_>>()?;
    if rhos.is_empty() {
        return Err(Error::InvalidParam("empty participant set".into()));
    }
    let (positions, price) = mean_variance_equilibrium(participants, &rhos, a, rhs)?;
    let (kkt, clr) = residuals(participants, a, &positions, &price, rhs);
    Ok(Equilibrium {
        exchange_id: exchange_id.to_string(),
        ids: participants.iter().map(|p| p.id.clone()).collect(),
        positions,
        price,
        clearing_rhs: rhs.clone(),
        residual_kkt: kkt,
        residual_clearing: clr,
        method: SolveMethod::ClosedForm,
        residual_history: Vec::new(),
    })
}

/// Curvature-matched entropic proxy of a participant for the warm start.
fn proxy_rho(p: &Participant, a: &AssetModel) -> f64 {
    match p.risk {
        RiskSpec::Entropic { varrho } => varrho,
        RiskSpec::ExpectedShortfall { alpha } => {
            let es = es_standardized(a.ellipse, alpha).unwrap_or(1.0).max(1e-6);
            let scale = if p.var_r > 1e-12 { p.var_r } else { a.gamma.trace() / a.dim() as f64 };
            es / scale.sqrt()
        }
    }
}

struct NewtonOutcome {
    positions: Vec<Vector>,
    iterations: usize,
    history: Vec<f64>,
}

/// First-order system: gradient matching against participant 0 plus clearing.
fn first_order_residual(
    ps: &[Participant],
    a: &AssetModel,
    x: &[Vector],
    rhs: &Vector,
) -> Result<Vector> {
    let m = a.dim();
    let n = ps.len();
    let mut f = Vector::zeros(n * m);
    let g0 = grad_r(&ps[0], a, &x[0])?;
    for i in 1..n {
        let gi = grad_r(&ps[i], a, &x[i])?;
        f.rows_mut((i - 1) * m, m).copy_from(&(gi - &g0));
    }
    let total = x.iter().fold(Vector::zeros(m), |acc, q| acc + q);
    f.rows_mut((n - 1) * m, m).copy_from(&(total - rhs));
    Ok(f)
}

fn first_order_jacobian(ps: &[Participant], a: &AssetModel, x: &[Vector]) -> Result<Matrix> {
    let m = a.dim();
    let n = ps.len();
    let mut j = Matrix::zeros(n * m, n * m);
    let h0 = hessian_r(&ps[0], a, &x[0])?;
    for i in 1..n {
        let hi = hessian_r(&ps[i], a, &x[i])?;
        j.view_mut(((i - 1) * m, 0), (m, m)).copy_from(&(-&h0));
        j.view_mut(((i - 1) * m, i * m), (m, m)).copy_from(&hi);
    }
    for i in 0..n {
        j.view_mut(((n - 1) * m, i * m), (m, m)).copy_from(&Matrix::identity(m, m));
    }
    Ok(j)
}

fn split(v: &Vector, n: usize, m: usize) -> Vec<Vector> {
    (0..n).map(|i| v.rows(i * m, m).into_owned()).collect()
}

fn stack(x: &[Vector]) -> Vector {
    let data: Vec<f64> = x.iter().flat_map(|q| q.iter().copied()).collect();
    Vector::from_vec(data)
}

/// Damped Newton with Armijo backtracking on `‖F‖`.
fn damped_newton<F, J>(x0: Vector, residual: F, jacobian: J) -> Result<(Vector, usize, f64, Vec<f64>)>
where
    F: Fn(&Vector) -> Result<Vector>,
    J: Fn(&Vector) -> Result<Matrix>,
{
    let mut x = x0;
    let mut f = residual(&x)?;
    let mut norm = f.norm();
    let mut history = vec![f.amax()];
    for it in 0..NEWTON_MAX_ITER {
        if f.amax() <= NEWTON_TOL {
            return Ok((x, it, f.amax(), history));
        }
        let jac = jacobian(&x)?;
        let step = jac
            .lu()
            .solve(&(-&f))
            .ok_or_else(|| Error::NoConvergence { iterations: it, residual: f.amax(), history: history.clone() })?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &x + &step * t;
            if let Ok(ft) = residual(&trial) {
                let nt = ft.norm();
                if nt.is_finite() && nt <= (1.0 - 1e-4 * t) * norm {
                    x = trial;
                    f = ft;
                    norm = nt;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        history.push(f.amax());
        if !accepted {
            return Err(Error::NoConvergence { iterations: it + 1, residual: f.amax(), history });
        }
    }
    if f.amax() <= NEWTON_TOL {
        return Ok((x, NEWTON_MAX_ITER, f.amax(), history));
    }
    Err(Error::NoConvergence { iterations: NEWTON_MAX_ITER, residual: f.amax(), history })
}

fn newton_smooth(ps: &[Participant], a: &AssetModel, rhs: &Vector) -> Result<NewtonOutcome> {
    let m = a.dim();
    let n = ps.len();
    let rhos: Vec<f64> = ps.iter().map(|p| proxy_rho(p, a)).collect();
    let warm = mean_variance_equilibrium(ps, &rhos, a, rhs)
        .map(|(q, _)| stack(&q))
        .unwrap_or_else(|_| Vector::zeros(n * m));
    let res = |v: &Vector| first_order_residual(ps, a, &split(v, n, m), rhs);
    let jac = |v: &Vector| first_order_jacobian(ps, a, &split(v, n, m));
    let attempt = damped_newton(warm, res, jac).or_else(|_| {
        // cold start: spread the clearing target evenly
        let cold: Vec<Vector> = (0..n).map(|_| rhs / n as f64).collect();
        damped_newton(stack(&cold), res, jac)
    })?;
    Ok(NewtonOutcome {
        positions: split(&attempt.0, n, m),
        iterations: attempt.1,
        history: attempt.3,
    })
}

/// True if the participant's joint covariance is singular, i.e. `R_i` lies in
/// the span of the payoffs and the ES objective has a kink.
pub fn is_span_degenerate(p: &Participant, a: &AssetModel) -> bool {
    let Ok(ginv) = a.gamma_inverse() else { return false };
    let explained = p.cov_r.dot(&(&ginv * &p.cov_r));
    p.var_r - explained <= 1e-10 * p.var_r.abs().max(1e-300) + 1e-14
}

/// Expected-shortfall (or mixed smooth) equilibrium, optionally with a CCP
/// hedger whose receivable may lie in the span of the payoffs.
pub fn solve_es(
    exchange_id: &str,
    participants: &[Participant],
    a: &AssetModel,
    rhs: &Vector,
    hedger: Option<&Participant>,
) -> Result<Equilibrium> {
    check_rhs(a, rhs)?;
    if participants.is_empty() {
        return Err(Error::InvalidParam("empty participant set".into()));
    }
    let kinked = hedger.filter(|h| {
        matches!(h.risk, RiskSpec::ExpectedShortfall { .. }) && is_span_degenerate(h, a)
    });
    let Some(c) = kinked else {
        let mut all = participants.to_vec();
        all.extend(hedger.cloned());
        let out = newton_smooth(&all, a, rhs)?;
        return Ok(finish(exchange_id, &all, a, rhs, out.positions, SolveMethod::Newton { iterations: out.iterations }, out.history));
    };
    solve_with_kinked_hedger(exchange_id, participants, a, rhs, c)
}

fn finish(
    exchange_id: &str,
    ps: &[Participant],
    a: &AssetModel,
    rhs: &Vector,
    positions: Vec<Vector>,
    method: SolveMethod,
    history: Vec<f64>,
) -> Equilibrium {
    let price = grad_r(&ps[0], a, &positions[0]).map(|g| -g).unwrap_or_else(|_| a.mu.clone());
    let smooth: Vec<(Participant, Vector)> = ps
        .iter()
        .zip(&positions)
        .filter(|(p, q)| grad_r(p, a, q).is_ok())
        .map(|(p, q)| (p.clone(), q.clone()))
        .collect();
    let sp: Vec<Participant> = smooth.iter().map(|x| x.0.clone()).collect();
    let sq: Vec<Vector> = smooth.iter().map(|x| x.1.clone()).collect();
    let (kkt, _) = residuals(&sp, a, &sq, &price, rhs);
    let total = positions.iter().fold(Vector::zeros(a.dim()), |acc, q| acc + q);
    Equilibrium {
        exchange_id: exchange_id.to_string(),
        ids: ps.iter().map(|p| p.id.clone()).collect(),
        residual_clearing: (total - rhs).amax(),
        positions,
        price,
        clearing_rhs: rhs.clone(),
        residual_kkt: kkt,
        method,
        residual_history: history,
    }
}

fn solve_with_kinked_hedger(
    exchange_id: &str,
    others: &[Participant],
    a: &AssetModel,
    rhs: &Vector,
    c: &Participant,
) -> Result<Equilibrium> {
    let m = a.dim();
    let n = others.len();
    let ginv = a.gamma_inverse()?;
    let w = &ginv * &c.cov_r;
    let es_c = match c.risk {
        RiskSpec::ExpectedShortfall { alpha } => es_standardized(a.ellipse, alpha)?,
        _ => unreachable!("kinked hedger is ES"),
    };
    let mut all = others.to_vec();
    all.push(c.clone());

    // kink branch: hedger holds -w, the others clear rhs + w
    let kink = newton_smooth(others, a, &(rhs + &w))?;
    let price = -grad_r(&others[0], a, &kink.positions[0])?;
    let gap = &a.mu - &price;
    if gap.dot(&(&ginv * &gap)).sqrt() <= es_c * (1.0 + 1e-12) {
        let mut pos = kink.positions;
        pos.push(-&w);
        return Ok(finish(exchange_id, &all, a, rhs, pos, SolveMethod::HedgerKink { iterations: kink.iterations }, kink.history));
    }

    // ray branch: unknowns (q_others, t)
    let unpack = |v: &Vector| (split(&v.rows(0, n * m).into_owned(), n, m), v[n * m]);
    let res = |v: &Vector| -> Result<Vector> {
        let (x, t) = unpack(v);
        let mut f = Vector::zeros(n * m + 1);
        let g0 = grad_r(&others[0], a, &x[0])?;
        for i in 1..n {
            let gi = grad_r(&others[i], a, &x[i])?;
            f.rows_mut((i - 1) * m, m).copy_from(&(gi - &g0));
        }
        let gap = &a.mu + &g0;
        let qc = -&w + &ginv * &gap * t;
        let total = x.iter().fold(qc, |acc, q| acc + q);
        f.rows_mut((n - 1) * m, m).copy_from(&(total - rhs));
        f[n * m] = gap.dot(&(&ginv * &gap)) - es_c * es_c;
        Ok(f)
    };
    let jac = |v: &Vector| -> Result<Matrix> {
        let (x, t) = unpack(v);
        let mut j = Matrix::zeros(n * m + 1, n * m + 1);
        j.view_mut((0, 0), (n * m, n * m)).copy_from(&first_order_jacobian(others, a, &x)?);
        let h0 = hessian_r(&others[0], a, &x[0])?;
        let g0 = grad_r(&others[0], a, &x[0])?;
        let gap = &a.mu + &g0;
        let row = (n - 1) * m;
        let extra = &ginv * &h0 * t;
        let mut blk = j.view((row, 0), (m, m)).into_owned();
        blk += extra;
        j.view_mut((row, 0), (m, m)).copy_from(&blk);
        j.view_mut((row, n * m), (m, 1)).copy_from(&(&ginv * &gap));
        let dc = (h0.transpose() * (&ginv * &gap)) * 2.0;
        j.view_mut((n * m, 0), (1, m)).copy_from(&dc.transpose());
        Ok(j)
    };
    let mut x0 = stack(&kink.positions).as_slice().to_vec();
    x0.push(0.0);
    let (sol, it, _, hist) = damped_newton(Vector::from_vec(x0), res, jac)?;
    let (mut pos, t) = unpack(&sol);
    let gap = &a.mu + grad_r(&others[0], a, &pos[0])?;
    pos.push(-&w + &ginv * gap * t);
    Ok(finish(exchange_id, &all, a, rhs, pos, SolveMethod::HedgerRay { iterations: it }, hist))
}

/// Dispatches to the closed form when every participant is entropic.
pub fn solve(
    exchange_id: &str,
    participants: &[Participant],
    a: &AssetModel,
    rhs: &Vector,
    hedger: Option<&Participant>,
) -> Result<Equilibrium> {
    let all_entropic = participants.iter().chain(hedger).all(|p| p.risk.is_entropic());
    if all_entropic {
        let mut all = participants.to_vec();
        all.extend(hedger.cloned());
        solve_entropic(exchange_id, &all, a, rhs)
    } else {
        solve_es(exchange_id, participants, a, rhs, hedger)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub residual_kkt: f64,
    pub residual_clearing: f64,
    pub price_consistency: f64,
    /// `r_c(q_c) + q_cᵀp + r_c*(-p)` for participants with a kink.
    pub conjugate_residual: Option<f64>,
}

/// Recomputes the equilibrium conditions from scratch.
pub fn verify_equilibrium(eq: &Equilibrium, participants: &[Participant], a: &AssetModel) -> Verification {
    let mut kkt: f64 = 0.0;
    let mut implied: Vec<Vector> = Vec::new();
    let mut conj: Option<f64> = None;
    for (id, q) in eq.iter() {
        let Some(p) = participants.iter().find(|p| p.id == id) else { continue };
        match grad_r(p, a, q) {
            Ok(g) => {
                kkt = kkt.max((&g + &eq.price).amax());
                implied.push(-g);
            }
            Err(_) => {
                let r = conjugate_residual(p, a, q, &eq.price);
                conj = Some(conj.unwrap_or(0.0).max(r));
            }
        }
    }
    let mut cons: f64 = 0.0;
    for i in 0..implied.len() {
        for j in i + 1..implied.len() {
            cons = cons.max((&implied[i] - &implied[j]).amax());
        }
    }
    let total = eq.positions.iter().fold(Vector::zeros(a.dim()), |acc, q| acc + q);
    Verification {
        residual_kkt: kkt,
        residual_clearing: (total - &eq.clearing_rhs).amax(),
        price_consistency: cons,
        conjugate_residual: conj,
    }
}

/// Conjugate-equality gap `r(q) + qᵀp + r*(-p)`, with `r*` maximised over a
/// box of half-width `10·max(1, ‖q‖∞, ‖w‖∞)` around the origin.
pub fn conjugate_residual(p: &Participant, a: &AssetModel, q: &Vector, price: &Vector) -> f64 {
    let f = |x: &Vector| -> f64 {
        match objective_r(p, a, x) {
            Ok(r) => -price.dot(x) - r,
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let scale = a
        .gamma_inverse()
        .map(|gi| (gi * &p.cov_r).amax())
        .unwrap_or(0.0)
        .max(q.amax())
        .max(1.0);
    let sup = maximize_concave_box(&f, q, 10.0 * scale);
    let at = -f(q);
    (at + sup).max(0.0)
}

/// Cyclic coordinate golden-section ascent of a concave function on a box.
fn maximize_concave_box(f: &dyn Fn(&Vector) -> f64, start: &Vector, half_width: f64) -> f64 {
    let m = start.len();
    let mut x = start.clone();
    let mut best = f(&x);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..20 {
        let before = best;
        for k in 0..m {
            let (mut lo, mut hi) = (-half_width, half_width);
            let eval = |t: f64, x: &Vector| {
                let mut y = x.clone();
                y[k] = t;
                f(&y)
            };
            let mut c = hi - phi * (hi - lo);
            let mut d = lo + phi * (hi - lo);
            let (mut fc, mut fd) = (eval(c, &x), eval(d, &x));
            while hi - lo > 1e-12 * half_width.max(1.0) {
                if fc >= fd {
                    hi = d;
                    d = c;
                    fd = fc;
                    c = hi - phi * (hi - lo);
                    fc = eval(c, &x);
                } else {
                    lo = c;
                    c = d;
                    fc = fd;
                    d = lo + phi * (hi - lo);
                    fd = eval(d, &x);
                }
            }
            let t = 0.5 * (lo + hi);
            let ft = eval(t, &x);
            if ft > best {
                best = ft;
                x[k] = t;
            }
        }
        if best - before <= 1e-14 * (1.0 + best.abs()) {
            break;
        }
    }
    best
}

/// Implied equilibrium price of a participant with a differentiable objective.
pub fn implied_price(p: &Participant, a: &AssetModel, q: &Vector) -> Result<Vector> {
    grad_r(p, a, q).map(|g| -g)
}

/// Variance of `R_i + qᵀP` re-exported for diagnostics.
pub fn participant_variance(p: &Participant, a: &AssetModel, q: &Vector) -> f64 {
    position_variance(p, a, q)
}
