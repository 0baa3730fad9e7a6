//! CSV tables and SVG renderings of pipeline results.
//!
//! Every figure is written twice: the CSV holds the data, the SVG is a plain
//! rendering of it. Output is a pure function of the inputs.

use std::fmt::Write as _;

use crate::classify::{EffectSize, Magnitude, PruneReason, SelectionFit, SelectionOutcome};
use crate::datamodel::table::fmt_f64;
use crate::evaluate::{ConfusionMatrix, CurvePoint, CvScores, Metrics, Rate};
use crate::psm::ScoreHistogram;

fn opt_rate(r: Option<Rate>) -> String {
    r.map(|r| fmt_f64(r.value())).unwrap_or_default()
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Metric rows, one column per labelled run. Undefined values are blank.
pub fn metrics_csv(runs: &[(String, Metrics, Option<f64>)]) -> String {
    let mut s = String::from("metric");
    for (label, _, _) in runs {
        let _ = write!(s, ",{label}");
    }
    s.push('\n');
    type Row = (&'static str, fn(&Metrics) -> String);
    let rows: [Row; 4] = [
        ("accuracy", |m| fmt_f64(m.accuracy.value())),
        ("precision", |m| opt_rate(m.precision)),
        ("recall", |m| opt_rate(m.recall)),
        ("f1", |m| opt_rate(m.f1)),
    ];
    for (name, f) in rows {
        s.push_str(name);
        for (_, m, _) in runs {
            let _ = write!(s, ",{}", f(m));
        }
        s.push('\n');
    }
    s.push_str("auc");
    for (_, _, auc) in runs {
        let _ = write!(s, ",{}", opt(*auc));
    }
    s.push('\n');
    s
}

pub fn confusion_csv(runs: &[(String, ConfusionMatrix)]) -> String {
    let mut s = String::from("run,positive,tp,fp,fn,tn,n\n");
    for (label, c) in runs {
        let _ = writeln!(
            s,
            "{label},{},{},{},{},{},{}",
            c.positive,
            c.tp,
            c.fp,
            c.fn_,
            c.tn,
            c.n()
        );
    }
    s
}

pub fn folds_csv(cv: &CvScores) -> String {
    let mut s = String::from("fold,n_train,n_test,train_accuracy,test_accuracy\n");
    for (i, f) in cv.folds.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            i + 1,
            f.n_train,
            f.n_test,
            fmt_f64(f.train_accuracy),
            fmt_f64(f.test_accuracy)
        );
    }
    let _ = writeln!(
        s,
        "mean,,,{},{}",
        fmt_f64(cv.mean_train),
        fmt_f64(cv.mean_test)
    );
    s
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("fraction,n,train_score,validation_score\n");
    for p in curve {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            fmt_f64(p.fraction),
            p.n,
            fmt_f64(p.train_score),
            fmt_f64(p.validation_score)
        );
    }
    s
}

pub fn effects_csv(effects: &[EffectSize]) -> String {
    let mut s = String::from("feature,d,magnitude\n");
    for e in effects {
        let mag =
            e.d.map(|d| Magnitude::of(d).as_str())
                .unwrap_or("undefined");
        let _ = writeln!(s, "{},{},{mag}", e.feature, opt(e.d));
    }
    s
}

pub fn prune_csv(fit: &SelectionFit) -> String {
    let mut s = String::from("feature,reason,partner,abs_r\n");
    for d in &fit.prune.dropped {
        match &d.reason {
            PruneReason::Constant => {
                let _ = writeln!(s, "{},constant,,", d.feature);
            }
            PruneReason::Correlated { partner, r } => {
                let _ = writeln!(s, "{},correlated,{partner},{}", d.feature, fmt_f64(*r));
            }
        }
    }
    s
}

/// Preliminary-tree importances of the features kept by pruning, with the
/// top-k flag.
pub fn importance_csv(fit: &SelectionFit) -> String {
    let m = &fit.preliminary;
    let mut s = String::from("feature,importance,candidate\n");
    for (f, imp) in m.features.iter().zip(&m.importances) {
        let _ = writeln!(
            s,
            "{f},{},{}",
            fmt_f64(*imp),
            u8::from(fit.candidates.contains(f))
        );
    }
    s
}

pub fn selection_csv(sel: &SelectionOutcome) -> String {
    let mut s = String::from("feature,accuracy,selected,weight\n");
    for (i, f) in sel.features.iter().enumerate() {
        match sel.selected.iter().position(|&j| j == i) {
            Some(p) => {
                let _ = writeln!(
                    s,
                    "{f},{},1,{}",
                    fmt_f64(sel.accuracy[i]),
                    fmt_f64(sel.weights[p])
                );
            }
            None => {
                let _ = writeln!(s, "{f},{},0,", fmt_f64(sel.accuracy[i]));
            }
        }
    }
    s
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 60.0;

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn axes(s: &mut String, x_label: &str, y_label: &str) {
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#,
        H - PAD
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
}

/// Signed horizontal bars, e.g. effect sizes.
pub fn bar_svg(title: &str, labels: &[String], values: &[f64], x_label: &str) -> String {
    let n = labels.len().max(1) as f64;
    let left = 220.0;
    let right = W - 30.0;
    let top = 40.0;
    let bottom = H - 40.0;
    let span = values.iter().fold(0.5f64, |a, v| a.max(v.abs())) * 1.1;
    let x = |v: f64| left + (v + span) / (2.0 * span) * (right - left);
    let row = (bottom - top) / n;
    let mut s = open(title);
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{top}" x2="{:.1}" y2="{bottom}" stroke="black"/>"#,
        x(0.0),
        x(0.0)
    );
    for (i, (l, &v)) in labels.iter().zip(values).enumerate() {
        let y = top + i as f64 * row;
        let (a, b) = if v < 0.0 {
            (x(v), x(0.0))
        } else {
            (x(0.0), x(v))
        };
        let colour = if v < 0.0 { "#b2182b" } else { "#2166ac" };
        let _ = writeln!(
            s,
            r#"<rect x="{a:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{colour}"/>"#,
            y + row * 0.15,
            b - a,
            row * 0.7
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            y + row * 0.6,
            escape(l)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
        (left + right) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    s.push_str("</svg>\n");
    s
}

/// Line chart on a `[0, 1]` y axis.
pub fn line_svg(
    title: &str,
    x: &[f64],
    series: &[(&str, Vec<f64>)],
    x_label: &str,
    y_label: &str,
) -> String {
    let mut s = open(title);
    axes(&mut s, x_label, y_label);
    let (x0, x1) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let xr = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |v: f64| PAD + (v - x0) / xr * (W - 2.0 * PAD);
    let py = |v: f64| H - PAD - v.clamp(0.0, 1.0) * (H - 2.0 * PAD);
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{t}</text>"#,
            PAD - 4.0,
            py(t) + 4.0
        );
    }
    let colours = ["#2166ac", "#b2182b", "#1b7837", "#762a83"];
    for (k, (name, ys)) in series.iter().enumerate() {
        let c = colours[k % colours.len()];
        let pts: Vec<String> = x
            .iter()
            .zip(ys)
            .map(|(a, b)| format!("{:.1},{:.1}", px(*a), py(*b)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{c}">{}</text>"#,
            W - PAD - 120.0,
            PAD + 14.0 * k as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// 2x2 grid: rows are true class, columns predicted class, positive first.
pub fn confusion_svg(title: &str, c: &ConfusionMatrix) -> String {
    let mut s = open(title);
    let pos = c.positive.as_str();
    let neg = c.positive.other().as_str();
    let cells = [[c.tp, c.fn_], [c.fp, c.tn]];
    let max = cells.iter().flatten().copied().max().unwrap_or(1).max(1) as f64;
    let size = 120.0;
    let x0 = W / 2.0 - size;
    let y0 = 80.0;
    for (i, row) in cells.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let shade = 255.0 - 180.0 * v as f64 / max;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{size}" height="{size}" fill="rgb({shade:.0},{shade:.0},255)" stroke="black"/>"#,
                x0 + j as f64 * size,
                y0 + i as f64 * size
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="20">{v}</text>"#,
                x0 + (j as f64 + 0.5) * size,
                y0 + (i as f64 + 0.5) * size + 7.0
            );
        }
    }
    for (k, l) in [pos, neg].iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">predicted {l}</text>"#,
            x0 + (k as f64 + 0.5) * size,
            y0 - 8.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">true {l}</text>"#,
            x0 - 8.0,
            y0 + (k as f64 + 0.5) * size
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Propensity histograms: ACr above the axis, HC below; before matching in
/// outline, after matching filled.
pub fn histogram_svg(title: &str, h: &ScoreHistogram) -> String {
    let mut s = open(title);
    axes(&mut s, "propensity score", "count");
    let bins = h.edges.len() - 1;
    let max = h.before.iter().flatten().copied().max().unwrap_or(1).max(1) as f64;
    let mid = H / 2.0;
    let half = (H - 2.0 * PAD) / 2.0;
    let bw = (W - 2.0 * PAD) / bins as f64;
    for b in 0..bins {
        let x = PAD + b as f64 * bw;
        for (g, sign, colour) in [(1usize, -1.0, "#b2182b"), (0usize, 1.0, "#2166ac")] {
            for (counts, filled) in [(&h.before[g], false), (&h.after[g], true)] {
                let hgt = counts[b] as f64 / max * half;
                let y = if sign < 0.0 { mid - hgt } else { mid };
                let style = if filled {
                    format!(r#"fill="{colour}" fill-opacity="0.6""#)
                } else {
                    format!(r#"fill="none" stroke="{colour}""#)
                };
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.1}" y="{y:.1}" width="{bw:.1}" height="{hgt:.1}" {style}/>"#
                );
            }
        }
    }
    let _ = writeln!(
        s,
        r##"<text x="{}" y="{}" fill="#b2182b">ACr</text>"##,
        W - PAD - 40.0,
        PAD + 10.0
    );
    let _ = writeln!(
        s,
        r##"<text x="{}" y="{}" fill="#2166ac">HC</text>"##,
        W - PAD - 40.0,
        H - PAD - 6.0
    );
    s.push_str("</svg>\n");
    s
}
