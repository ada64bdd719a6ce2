//! Rendering of run results. Every numeric value is first flattened into
//! [`Record`]s so that the CSV and JSON sinks carry identical numbers.

use std::fmt::Write as _;

use ccpftp::xva::{AccountXva, StrategyXva};
use serde_json::{json, Map, Value};

use crate::{OutputFormat, ReportLevel, RunResult, StrategyResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub strategy: String,
    pub section: &'static str,
    pub id: String,
    pub field: String,
    pub value: f64,
}

/// Formats with six significant digits.
/// Magnitudes below 1e-12 print as zero.
pub fn sig6(x: f64) -> String {
    if x.abs() < 1e-12 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.5e}")
    }
}

fn indexed(name: &str, k: usize, m: usize) -> String {
    if m == 1 {
        name.to_string()
    } else {
        format!("{name}[{k}]")
    }
}

fn xva_fields(a: &AccountXva, level: ReportLevel) -> Vec<(&'static str, f64)> {
    let mut v = vec![("cva", a.cva), ("mva", a.mva), ("kva", a.kva), ("fva", a.fva), ("xva", a.total())];
    if level >= ReportLevel::Full {
        v.extend([("im", a.im), ("df", a.df), ("cva_se", a.cva_se), ("kva_se", a.kva_se)]);
    }
    v
}

fn xva_for<'a>(res: &'a RunResult, name: &str) -> Option<&'a StrategyXva> {
    res.xva.as_ref().and_then(|x| x.strategy(name))
}

/// Flattens the result into records, filtered by `level`.
pub fn records(res: &RunResult, level: ReportLevel) -> Vec<Record> {
    let mut out = Vec::new();
    let m = res.scenario.asset.dim();
    let mut push = |strategy: &str, section: &'static str, id: &str, field: String, value: f64| {
        out.push(Record { strategy: strategy.to_string(), section, id: id.to_string(), field, value })
    };
    for StrategyResult { name, outcome } in &res.strategies {
        if let Some(o) = outcome {
            push(name, "summary", "", "lc".into(), o.lc_total());
            push(name, "summary", "", "sum_delta_rho".into(), o.sum_delta_rho());
            push(name, "summary", "", "mc".into(), o.mc_total);
            if let (Some(a), Some(b)) = (o.pre_of(&o.defaulter_exchange), o.post_of(&o.defaulter_exchange)) {
                for k in 0..m {
                    push(name, "summary", "", indexed("price_pre", k, m), a.price[k]);
                    push(name, "summary", "", indexed("price_post", k, m), b.price[k]);
                }
            }
        } else {
            for f in ["lc", "sum_delta_rho", "mc"] {
                push(name, "summary", "", f.into(), 0.0);
            }
        }
        if let Some(x) = xva_for(res, name) {
            push(name, "summary", "", "sum_delta_xva".into(), x.ftp.sum_delta_xva);
            push(name, "summary", "", "ac".into(), x.ftp.ac);
            push(name, "summary", "", "cc".into(), x.ftp.cc);
            push(name, "summary", "", "ftp".into(), x.ftp.ftp);
        }
        if level >= ReportLevel::PerParticipant {
            if let Some(o) = outcome {
                for post in &o.post {
                    let pre = o.pre_of(&post.exchange_id);
                    for (id, q) in post.iter() {
                        let before = pre.and_then(|e| e.position(id));
                        for k in 0..m {
                            push(name, "participant", id, indexed("q_pre", k, m), before.map(|v| v[k]).unwrap_or(0.0));
                            push(name, "participant", id, indexed("q_post", k, m), q[k]);
                        }
                        push(name, "participant", id, "lc".into(), o.lc_of(id).unwrap_or(0.0));
                        push(name, "participant", id, "delta_rho".into(), o.delta_rho_of(id).unwrap_or(0.0));
                    }
                }
            }
            if let Some(x) = xva_for(res, name) {
                if let Some(post) = &x.post {
                    for a in &post.accounts {
                        for (f, v) in xva_fields(a, level) {
                            push(name, "xva_post", &a.id, f.into(), v);
                        }
                    }
                }
                for (id, d) in &x.delta_xva {
                    push(name, "xva_post", id, "delta_xva".into(), *d);
                }
                for c in &x.auction {
                    for (f, v) in [
                        ("d_cva", c.sum.cva),
                        ("d_mva", c.sum.mva),
                        ("d_kva", c.sum.kva),
                        ("d_fva", c.sum.fva),
                        ("ac", c.ac),
                        ("own", c.own.total()),
                    ] {
                        push(name, "auction", &c.taker, f.into(), v);
                    }
                }
            }
        }
        if level >= ReportLevel::Full {
            if let Some(o) = outcome {
                let t = &o.table3_row;
                push(name, "diagnostics", "", "table3_line".into(), t.line as f64);
                push(name, "diagnostics", "", "lc_formula".into(), t.lc_formula);
                for (tag, eqs) in [("pre", &o.pre), ("post", &o.post)] {
                    for e in eqs {
                        let id = format!("{tag}:{}", e.exchange_id);
                        push(name, "diagnostics", &id, "residual_kkt".into(), e.residual_kkt);
                        push(name, "diagnostics", &id, "residual_clearing".into(), e.residual_clearing);
                        push(name, "diagnostics", &id, "iterations".into(), e.method.iterations() as f64);
                    }
                }
            }
        }
    }
    if level >= ReportLevel::PerParticipant {
        if let Some(x) = &res.xva {
            for a in &x.pre.accounts {
                for (f, v) in xva_fields(a, level) {
                    push("", "xva_pre", &a.id, f.into(), v);
                }
            }
        }
    }
    out
}

pub fn to_csv(recs: &[Record]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "section", "id", "field", "value"]).expect("in-memory write");
    for r in recs {
        w.write_record([r.strategy.as_str(), r.section, r.id.as_str(), r.field.as_str(), &r.value.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Nested as strategy → section → id → field.
pub fn to_json(res: &RunResult, recs: &[Record]) -> Value {
    let mut strategies = Map::new();
    let mut shared = Map::new();
    for r in recs {
        let root = if r.strategy.is_empty() {
            &mut shared
        } else {
            strategies.entry(r.strategy.clone()).or_insert_with(|| Value::Object(Map::new())).as_object_mut().unwrap()
        };
        let sec = root.entry(r.section).or_insert_with(|| Value::Object(Map::new())).as_object_mut().unwrap();
        let target = if r.id.is_empty() {
            sec
        } else {
            sec.entry(r.id.clone()).or_insert_with(|| Value::Object(Map::new())).as_object_mut().unwrap()
        };
        target.insert(r.field.clone(), json!(r.value));
    }
    let order: Vec<Value> = res.strategies.iter().map(|s| json!(s.name)).collect();
    let mut top = Map::new();
    top.insert("strategy_order".into(), Value::Array(order));
    top.insert("strategies".into(), Value::Object(strategies));
    if let Some(x) = &res.xva {
        shared.insert("n_paths".into(), json!(x.n_paths));
        shared.insert("n_batches".into(), json!(x.n_batches));
        shared.insert("seed".into(), json!(x.seed));
        let takers: Map<String, Value> = x
            .strategies
            .iter()
            .filter_map(|s| s.ftp.taker.as_ref().map(|t| (s.name.clone(), json!(t))))
            .collect();
        shared.insert("takers".into(), Value::Object(takers));
    }
    top.insert("xva".into(), Value::Object(shared));
    Value::Object(top)
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (k, c) in r.iter().enumerate() {
            width[k] = width[k].max(c.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        cells.iter().enumerate().map(|(k, c)| format!("{c:>w$}", w = width[k])).collect::<Vec<_>>().join("  ")
    };
    let _ = writeln!(out, "{}", line(header.iter().map(|s| s.to_string()).collect()));
    let _ = writeln!(out, "{}", width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    for r in rows {
        let _ = writeln!(out, "{}", line(r.clone()));
    }
    out.push('\n');
}

pub fn to_table(res: &RunResult, level: ReportLevel) -> String {
    let mut out = String::new();
    let m = res.scenario.asset.dim();
    let with_xva = res.xva.is_some();
    let mut header = vec!["strategy", "LC", "sum drho", "MC"];
    if with_xva {
        header.extend(["sum dXVA", "AC", "taker", "FTP"]);
    }
    let rows: Vec<Vec<String>> = res
        .strategies
        .iter()
        .map(|s| {
            let (lc, rho, mc) = s.outcome.as_ref().map(|o| (o.lc_total(), o.sum_delta_rho(), o.mc_total)).unwrap_or((0.0, 0.0, 0.0));
            let mut r = vec![s.name.clone(), sig6(lc), sig6(rho), sig6(mc)];
            if with_xva {
                match xva_for(res, &s.name) {
                    Some(x) => r.extend([
                        sig6(x.ftp.sum_delta_xva),
                        sig6(x.ftp.ac),
                        x.ftp.taker.clone().unwrap_or_else(|| "-".into()),
                        sig6(x.ftp.ftp),
                    ]),
                    None => r.extend(["-".into(), "-".into(), "-".into(), "-".into()]),
                }
            }
            r
        })
        .collect();
    table(&mut out, &header, &rows);
    if level < ReportLevel::PerParticipant {
        return out;
    }
    for s in &res.strategies {
        if let Some(o) = &s.outcome {
            for post in &o.post {
                let pre = o.pre_of(&post.exchange_id);
                let _ = writeln!(
                    out,
                    "{} on {}: p = {}  p' = {}",
                    s.name,
                    post.exchange_id,
                    pre.map(|e| fmt_vec(&e.price)).unwrap_or_default(),
                    fmt_vec(&post.price)
                );
                let mut rows = Vec::new();
                for (id, q) in post.iter() {
                    let before = pre.and_then(|e| e.position(id));
                    rows.push(vec![
                        id.to_string(),
                        before.map(fmt_vec).unwrap_or_else(|| "-".into()),
                        fmt_vec(q),
                        sig6(o.lc_of(id).unwrap_or(0.0)),
                        sig6(o.delta_rho_of(id).unwrap_or(0.0)),
                    ]);
                }
                if let Some(pre) = pre {
                    for (id, q) in pre.iter().filter(|(id, _)| post.position(id).is_none()) {
                        rows.push(vec![id.to_string(), fmt_vec(q), "-".into(), "-".into(), "-".into()]);
                    }
                }
                table(&mut out, &["id", "q", "q'", "LC_i", "drho_i"], &rows);
            }
            if level >= ReportLevel::Full {
                let t = &o.table3_row;
                let _ = writeln!(
                    out,
                    "decomposition line {}: LC = {} (closed form {}), sum drho = {}, MC = {}",
                    t.line,
                    sig6(t.lc),
                    sig6(t.lc_formula),
                    sig6(t.sum_delta_rho),
                    sig6(t.mc)
                );
                for e in o.pre.iter().chain(&o.post) {
                    let _ = writeln!(
                        out,
                        "  {}: kkt {:.3e}, clearing {:.3e}, {:?}",
                        e.exchange_id, e.residual_kkt, e.residual_clearing, e.method
                    );
                }
                out.push('\n');
            }
        }
        if let Some(x) = xva_for(res, &s.name) {
            if let (Some(post), Some(rx)) = (&x.post, &res.xva) {
                let _ = writeln!(out, "{}: XVA before and after", s.name);
                let mut rows = Vec::new();
                for a in &rx.pre.accounts {
                    let after = post.get(&a.id);
                    let delta = x.delta_xva.iter().find(|(id, _)| id == &a.id).map(|d| sig6(d.1));
                    rows.push(vec![
                        a.id.clone(),
                        sig6(a.total()),
                        after.map(|b| sig6(b.total())).unwrap_or_else(|| "-".into()),
                        delta.unwrap_or_else(|| "-".into()),
                    ]);
                }
                for b in post.accounts.iter().filter(|b| rx.pre.get(&b.id).is_none()) {
                    rows.push(vec![b.id.clone(), "-".into(), sig6(b.total()), "-".into()]);
                }
                table(&mut out, &["id", "XVA", "XVA'", "dXVA"], &rows);
            }
            if !x.auction.is_empty() {
                let _ = writeln!(out, "{}: takers ranked by auction cost (own share in parentheses)", s.name);
                let rows: Vec<Vec<String>> = x
                    .auction
                    .iter()
                    .map(|c| {
                        let pair = |a: f64, b: f64| format!("{} ({})", sig6(a), sig6(b));
                        vec![
                            c.taker.clone(),
                            pair(c.sum.mva, c.own.mva),
                            pair(c.sum.cva, c.own.cva),
                            pair(c.sum.kva, c.own.kva),
                            pair(c.ac, c.own.total()),
                        ]
                    })
                    .collect();
                table(&mut out, &["taker", "dMVA", "dCVA", "dKVA", "AC"], &rows);
            }
        }
    }
    if level >= ReportLevel::Full {
        if let Some(x) = &res.xva {
            let _ = writeln!(out, "pre-default XVA components ({} paths, {} batches, seed {})", x.n_paths, x.n_batches, x.seed);
            let rows: Vec<Vec<String>> = x
                .pre
                .accounts
                .iter()
                .map(|a| {
                    vec![
                        a.id.clone(),
                        sig6(a.im),
                        sig6(a.df),
                        format!("{} ± {}", sig6(a.cva), sig6(a.cva_se)),
                        sig6(a.mva),
                        format!("{} ± {}", sig6(a.kva), sig6(a.kva_se)),
                        sig6(a.fva),
                    ]
                })
                .collect();
            table(&mut out, &["id", "IM", "DF", "CVA", "MVA", "KVA", "FVA"], &rows);
        }
    }
    let _ = m;
    out
}

fn fmt_vec(v: &ccpftp::Vector) -> String {
    if v.len() == 1 {
        sig6(v[0])
    } else {
        format!("[{}]", v.iter().map(|x| sig6(*x)).collect::<Vec<_>>().join(", "))
    }
}

pub fn render(res: &RunResult, format: OutputFormat, level: ReportLevel) -> String {
    match format {
        OutputFormat::Table => to_table(res, level),
        OutputFormat::Csv => to_csv(&records(res, level)),
        OutputFormat::Json => {
            let recs = records(res, level);
            let mut s = serde_json::to_string_pretty(&to_json(res, &recs)).expect("serializable");
            s.push('\n');
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.4300001), "0.430000");
        assert_eq!(sig6(-13.7512345), "-13.7512");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(-4.4e-16), "0");
        assert_eq!(sig6(1.5e-7), "1.50000e-7");
    }
}
