//! CSV, text and SVG renderings of trial results.

use std::fmt::Write;

use crate::roadnet::RouteClass;
use crate::trainer::{SweepPoint, TrialReport};

pub const CURVES_HEADER: &str = "seed,exec_policy,step,discounted_return,reached_goal,route_class";
pub const AGGREGATE_HEADER: &str = "exec_policy,step,mean_return,stderr_return,n_seeds";

/// Per-seed learning curves, one row per evaluation.
pub fn curves_csv(report: &TrialReport) -> String {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for s in &report.seeds {
        for p in &s.points {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.seed, p.policy, p.step, p.discounted_return, p.reached_goal, p.route_class
            )
            .unwrap();
        }
    }
    out
}

pub fn aggregate_csv(report: &TrialReport) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for a in &report.aggregate {
        writeln!(out, "{},{},{},{},{}", a.policy, a.step, a.mean_return, a.stderr_return, a.n_seeds).unwrap();
    }
    out
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("lr,exec_policy,mean_area,stderr_area,n_seeds\n");
    for p in points {
        writeln!(out, "{},{},{},{},{}", p.lr, p.policy, p.mean_area, p.stderr_area, p.n_seeds).unwrap();
    }
    out
}

/// Final-route counts and last-evaluation returns as an aligned table.
pub fn summary_table(report: &TrialReport) -> String {
    let mut out = String::new();
    write!(out, "{:<8}", "policy").unwrap();
    for c in RouteClass::ALL {
        write!(out, " {:>9}", c.as_str()).unwrap();
    }
    writeln!(out, " {:>12} {:>9}", "final_mean", "stderr").unwrap();
    let hist = report.class_histograms();
    for policy in &report.policies {
        write!(out, "{:<8}", policy).unwrap();
        for c in RouteClass::ALL {
            let n = hist.get(policy).and_then(|h| h.get(&c)).copied().unwrap_or(0);
            write!(out, " {:>9}", n).unwrap();
        }
        match report.aggregate.iter().rev().find(|a| &a.policy == policy) {
            Some(a) => writeln!(out, " {:>12.3} {:>9.3}", a.mean_return, a.stderr_return).unwrap(),
            None => writeln!(out, " {:>12} {:>9}", "-", "-").unwrap(),
        }
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Mean learning curves with one-standard-error bands.
pub fn curves_svg(report: &TrialReport) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let pts = &report.aggregate;
    let mut out = String::new();
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#)
        .unwrap();
    writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    if pts.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let x_max = pts.iter().map(|p| p.step).max().unwrap_or(1).max(1) as f64;
    let lo = pts.iter().map(|p| p.mean_return - p.stderr_return).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.mean_return + p.stderr_return).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi - lo < 1e-9 { (lo - 1.0, hi + 1.0) } else { (lo, hi) };
    let sx = |x: f64| pad + x / x_max * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - lo) / (hi - lo) * (h - 2.0 * pad);
    writeln!(
        out,
        r#"<path d="M{l},{t} L{l},{b} L{r},{b}" stroke="black" fill="none"/>"#,
        l = pad,
        t = pad,
        b = h - pad,
        r = w - pad
    )
    .unwrap();
    writeln!(out, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">step</text>"#, w / 2.0, h - 15.0).unwrap();
    writeln!(out, r#"<text x="5" y="{}" font-size="12">{:.1}</text>"#, pad, hi).unwrap();
    writeln!(out, r#"<text x="5" y="{}" font-size="12">{:.1}</text>"#, h - pad, lo).unwrap();
    writeln!(out, r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{}</text>"#, w - pad, h - 30.0, x_max)
        .unwrap();
    for (k, policy) in report.policies.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let series: Vec<_> = pts.iter().filter(|p| &p.policy == policy).collect();
        if series.is_empty() {
            continue;
        }
        let mut band = String::new();
        for p in &series {
            write!(band, "{:.2},{:.2} ", sx(p.step as f64), sy(p.mean_return + p.stderr_return)).unwrap();
        }
        for p in series.iter().rev() {
            write!(band, "{:.2},{:.2} ", sx(p.step as f64), sy(p.mean_return - p.stderr_return)).unwrap();
        }
        writeln!(out, r#"<polygon points="{}" fill="{}" fill-opacity="0.2" stroke="none"/>"#, band.trim_end(), color)
            .unwrap();
        let line: Vec<String> =
            series.iter().map(|p| format!("{:.2},{:.2}", sx(p.step as f64), sy(p.mean_return))).collect();
        writeln!(out, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, line.join(" "), color)
            .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="12" fill="{}">{}</text>"#,
            pad + 10.0,
            pad + 15.0 * (k as f64 + 1.0),
            color,
            policy
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}
