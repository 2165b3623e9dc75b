//! Merging robustness curves across runs and rendering them as SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;

/// One `(epsilon, V_lower)` row of a run's curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub epsilon: f64,
    pub v_lower: f64,
}

#[derive(Debug, Clone)]
pub struct RunCurve {
    pub env: String,
    pub algorithm: String,
    pub rows: Vec<CurveRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedRow {
    pub env: String,
    pub algorithm: String,
    pub epsilon: f64,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

pub const MERGED_HEADER: &str = "env,algorithm,epsilon,mean_V_lower,std_V_lower,runs";

/// Parse a curve CSV (`epsilon,V_lower,safe`).
pub fn parse_curve_csv(text: &str) -> Result<Vec<CurveRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.starts_with("epsilon,V_lower") => {}
        other => return Err(format!("unexpected curve header {other:?}")),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let mut f = line.split(',');
            let mut num = |what: &str| {
                f.next()
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| format!("row {}: bad {what} in `{line}`", i + 2))
            };
            Ok(CurveRow {
                epsilon: num("epsilon")?,
                v_lower: num("V_lower")?,
            })
        })
        .collect()
}

/// Mean and population standard deviation per `(env, algorithm, epsilon)`,
/// ordered by env, algorithm, then epsilon.
pub fn merge(curves: &[RunCurve]) -> Vec<MergedRow> {
    let mut groups: BTreeMap<(String, String), BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for c in curves {
        let g = groups.entry((c.env.clone(), c.algorithm.clone())).or_default();
        for r in &c.rows {
            // non-negative floats order like their bit patterns
            g.entry(r.epsilon.to_bits()).or_default().push(r.v_lower);
        }
    }
    let mut out = Vec::new();
    for ((env, algorithm), by_eps) in groups {
        for (bits, vals) in by_eps {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = if mean.is_finite() {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
            } else {
                0.0
            };
            out.push(MergedRow {
                env: env.clone(),
                algorithm: algorithm.clone(),
                epsilon: f64::from_bits(bits),
                mean,
                std,
                runs: vals.len(),
            });
        }
    }
    out
}

pub fn merged_csv(rows: &[MergedRow]) -> String {
    let mut s = String::from(MERGED_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.env, r.algorithm, r.epsilon, r.mean, r.std, r.runs);
    }
    s
}

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line chart of mean `V_lower` against epsilon for one env, one series per
/// algorithm. Non-finite means are left out of the polyline.
pub fn svg_chart(env: &str, rows: &[MergedRow]) -> String {
    let rows: Vec<&MergedRow> = rows.iter().filter(|r| r.env == env).collect();
    let finite: Vec<&&MergedRow> = rows.iter().filter(|r| r.mean.is_finite()).collect();
    let (mut x0, mut x1) = bounds(finite.iter().map(|r| r.epsilon));
    let (mut y0, mut y1) = bounds(finite.iter().map(|r| r.mean));
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 <= y0 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{env}</text>"#,
        WIDTH / 2.0
    );
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{left:.1} {top:.1} L{left:.1} {bottom:.1} L{right:.1} {bottom:.1}" fill="none" stroke="black"/>"#
    );
    for (v, anchor_x) in [(x0, left), (x1, right)] {
        let _ = writeln!(
            s,
            r#"<text x="{anchor_x:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            bottom + 16.0,
            tick(v)
        );
    }
    for (v, anchor_y) in [(y0, bottom), (y1, top)] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            left - 6.0,
            anchor_y + 4.0,
            tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12">epsilon</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle" font-family="sans-serif" font-size="12">V_lower</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    let mut algos: Vec<&str> = rows.iter().map(|r| r.algorithm.as_str()).collect();
    algos.dedup();
    for (k, algo) in algos.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = finite
            .iter()
            .filter(|r| r.algorithm == *algo)
            .map(|r| format!("{:.1},{:.1}", px(r.epsilon), py(r.mean)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
        }
        let ly = top + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" font-family="sans-serif" font-size="11" fill="{color}">{algo}</text>"#,
            right - 60.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() && hi.is_finite() {
        (lo, hi)
    } else {
        (0.0, 0.0)
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(env: &str, algo: &str, vals: &[(f64, f64)]) -> RunCurve {
        RunCurve {
            env: env.into(),
            algorithm: algo.into(),
            rows: vals.iter().map(|&(epsilon, v_lower)| CurveRow { epsilon, v_lower }).collect(),
        }
    }

    #[test]
    fn single_run_has_zero_std() {
        let m = merge(&[curve("quad1d", "PA-PC", &[(0.0, -10.0), (0.1, -20.0)])]);
        assert_eq!(m.len(), 2);
        assert!(m.iter().all(|r| r.std == 0.0 && r.runs == 1));
    }

    #[test]
    fn merges_seeds_per_epsilon() {
        let runs: Vec<RunCurve> = (0..5)
            .map(|k| curve("quad1d", "SA-PC", &[(0.0, -10.0 - k as f64), (0.05, -12.0), (0.1, -15.0)]))
            .collect();
        let m = merge(&runs);
        assert_eq!(m.len(), 3);
        assert_eq!(m[0].mean, -12.0);
        assert!((m[0].std - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(m[0].runs, 5);
    }

    #[test]
    fn parses_what_the_verifier_writes() {
        let rows = parse_curve_csv("epsilon,V_lower,safe\n0,-1.5,true\n0.1,-inf,false\n").unwrap();
        assert_eq!(rows[1].v_lower, f64::NEG_INFINITY);
        assert!(parse_curve_csv("eps\n").is_err());
        assert!(parse_curve_csv("epsilon,V_lower,safe\nx,1,true\n").is_err());
    }

    #[test]
    fn infinite_entries_are_skipped_in_chart() {
        let m = merge(&[curve("nav", "SA-SC", &[(0.0, -3.0), (0.1, f64::NEG_INFINITY)])]);
        let svg = svg_chart("nav", &m);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(!svg.contains("inf"));
    }
}
