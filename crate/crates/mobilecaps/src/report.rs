//! Report documents and their text summaries.
//!
//! `report.json` is written by hand so that its bytes depend only on the
//! numbers: keys in a fixed order, floats with six decimals.

use std::fmt::Write as _;

use mobilecaps_core::hypertune::Observation;
use mobilecaps_core::metrics::{ClassMetrics, EvalReport};
use mobilecaps_core::trainer::History;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub name: String,
    /// Trainable parameters of the model behind the report, when known.
    pub params: Option<usize>,
    pub report: EvalReport,
}

/// The contents of `report.json`: which command produced it and its reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub kind: String,
    pub reports: Vec<NamedReport>,
}

fn float(x: f64) -> String {
    if !x.is_finite() {
        return "null".into();
    }
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

fn opt_float(x: Option<f64>) -> String {
    x.map_or_else(|| "null".into(), float)
}

fn string(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialise")
}

fn list<I: IntoIterator<Item = String>>(items: I) -> String {
    format!("[{}]", items.into_iter().collect::<Vec<_>>().join(", "))
}

fn class_json(c: &ClassMetrics, pad: &str) -> String {
    format!(
        "{{\n{pad}  \"precision\": {},\n{pad}  \"recall\": {},\n{pad}  \"f1\": {},\n{pad}  \"support\": {},\n{pad}  \"precision_undefined\": {},\n{pad}  \"recall_undefined\": {}\n{pad}}}",
        float(c.precision),
        float(c.recall),
        float(c.f1),
        c.support,
        c.precision_undefined,
        c.recall_undefined
    )
}

/// One report as a JSON object whose lines are indented by `indent` spaces.
pub fn report_json(r: &EvalReport, indent: usize) -> String {
    let pad = " ".repeat(indent);
    let inner = format!("{pad}  ");
    let confusion = list(r.confusion.iter().map(|row| list(row.iter().map(usize::to_string))));
    let per_class = if r.per_class.is_empty() {
        "[]".to_string()
    } else {
        let items: Vec<String> = r.per_class.iter().map(|c| format!("{inner}  {}", class_json(c, &format!("{inner}  ")))).collect();
        format!("[\n{}\n{inner}]", items.join(",\n"))
    };
    let fields = [
        ("samples", r.samples.to_string()),
        ("confusion", confusion),
        ("per_class", per_class),
        ("accuracy", float(r.accuracy)),
        ("macro_precision", float(r.macro_precision)),
        ("macro_recall", float(r.macro_recall)),
        ("macro_f1", float(r.macro_f1)),
        ("auc", list(r.auc.iter().map(|a| opt_float(*a)))),
        ("r2", opt_float(r.r2)),
    ];
    let body: Vec<String> = fields.iter().map(|(k, v)| format!("{inner}\"{k}\": {v}")).collect();
    format!("{{\n{}\n{pad}}}", body.join(",\n"))
}

pub fn document_json(doc: &ReportDocument) -> String {
    let items: Vec<String> = doc
        .reports
        .iter()
        .map(|n| {
            let params = n.params.map_or_else(|| "null".into(), |p| p.to_string());
            format!(
                "    {{\n      \"name\": {},\n      \"params\": {params},\n      \"report\": {}\n    }}",
                string(&n.name),
                report_json(&n.report, 6)
            )
        })
        .collect();
    let reports = if items.is_empty() { "[]".to_string() } else { format!("[\n{}\n  ]", items.join(",\n")) };
    format!("{{\n  \"kind\": {},\n  \"reports\": {reports}\n}}\n", string(&doc.kind))
}

fn pct(x: f64) -> String {
    format!("{:6.2}", 100.0 * x)
}

/// Side-by-side table of the reports in a document.
pub fn summarize_document(doc: &ReportDocument) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} report", doc.kind);
    let width = doc.reports.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let _ = writeln!(out, "{:width$}  {:>7}  {:>6}  {:>6}  {:>6}  {:>6}  {:>8}  {:>10}", "name", "samples", "acc", "prec", "rec", "f1", "r2", "params");
    for n in &doc.reports {
        let r = &n.report;
        let r2 = r.r2.map_or_else(|| "-".into(), |v| format!("{v:.4}"));
        let params = n.params.map_or_else(|| "-".into(), |p| p.to_string());
        let _ = writeln!(
            out,
            "{:width$}  {:>7}  {}  {}  {}  {}  {:>8}  {:>10}",
            n.name,
            r.samples,
            pct(r.accuracy),
            pct(r.macro_precision),
            pct(r.macro_recall),
            pct(r.macro_f1),
            r2,
            params
        );
    }
    for n in &doc.reports {
        let _ = writeln!(out, "\n{}: per class (precision / recall / f1 / support / auc)", n.name);
        for (k, c) in n.report.per_class.iter().enumerate() {
            let auc = n.report.auc.get(k).copied().flatten().map_or_else(|| "-".into(), |a| format!("{a:.4}"));
            let _ = writeln!(out, "  {k}: {} / {} / {} / {} / {auc}", pct(c.precision), pct(c.recall), pct(c.f1), c.support);
        }
        let _ = writeln!(out, "  confusion (rows = truth): {:?}", n.report.confusion);
    }
    out
}

pub fn summarize_history(h: &History) -> String {
    let mut out = String::from("training history\n");
    for e in &h.epochs {
        let _ = write!(out, "  epoch {:4}  lr {:.6}  loss {:.6}", e.epoch, e.lr, e.loss);
        if let Some(v) = &e.val {
            let _ = write!(out, "  val loss {:.6}", v.loss);
            if let Some(a) = v.accuracy {
                let _ = write!(out, "  val acc {:.4}", a);
            }
            if let Some(r2) = v.r2 {
                let _ = write!(out, "  val r2 {:.4}", r2);
            }
        }
        out.push('\n');
    }
    out
}

pub fn summarize_trace(trace: &[Observation]) -> String {
    let mut out = String::from("search trace\n");
    let mut best: Option<&Observation> = None;
    for (i, o) in trace.iter().enumerate() {
        let params: Vec<String> = o.params.iter().map(|p| format!("{p:.6}")).collect();
        let status = o.error.as_deref().map_or_else(String::new, |e| format!("  failed: {e}"));
        let _ = writeln!(out, "  {:3}  params [{}]  value {:.6}{status}", i + 1, params.join(", "), o.value);
        if !o.failed && best.is_none_or(|b| o.value > b.value) {
            best = Some(o);
        }
    }
    if let Some(b) = best {
        let params: Vec<String> = b.params.iter().map(|p| format!("{p:.6}")).collect();
        let _ = writeln!(out, "  best: params [{}]  value {:.6}", params.join(", "), b.value);
    }
    out
}
