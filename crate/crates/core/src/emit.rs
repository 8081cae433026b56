//! Report and plot-data output: structured reports, CSV tables and polylines.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::geodesic::GeodesicPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Toml,
    Json,
}

pub fn render<T: Serialize>(value: &T, format: ReportFormat) -> String {
    match format {
        ReportFormat::Toml => toml::to_string(value).expect("reports serialize"),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
            s.push('\n');
            s
        }
    }
}

/// `x` as C's `%.17g` prints it.
pub fn format_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..17).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        trim(&format!("{x:.*}", (16 - exp) as usize))
    }
}

/// Comma-separated table with a header row.
pub fn csv_table(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| format_g17(*x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Polylines as one table: `path, index, t, x0, x1, ...`.
pub fn polylines(paths: &[GeodesicPath]) -> String {
    let n = paths.iter().flat_map(|p| p.samples.first()).map(|s| s.point.len()).max().unwrap_or(0);
    let mut header = vec!["path".to_string(), "index".to_string(), "t".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = paths
        .iter()
        .enumerate()
        .flat_map(|(k, path)| {
            path.samples.iter().enumerate().map(move |(i, s)| {
                let mut row = vec![k as f64, i as f64, s.t];
                row.extend(&s.point);
                row
            })
        })
        .collect();
    csv_table(&header, &rows)
}

/// Point sets such as fibers, one polyline per set.
pub fn point_sets(sets: &[Vec<Vec<f64>>]) -> String {
    let n = sets.iter().flatten().map(Vec::len).max().unwrap_or(0);
    let mut header = vec!["path".to_string(), "index".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    for (k, set) in sets.iter().enumerate() {
        for (i, p) in set.iter().enumerate() {
            let mut row = vec![k as f64, i as f64];
            row.extend(p);
            rows.push(row);
        }
    }
    csv_table(&header, &rows)
}

pub fn curvature_profile_table(profile: &[(f64, f64)]) -> String {
    let rows: Vec<Vec<f64>> = profile.iter().map(|(r, pi)| vec![*r, *pi]).collect();
    csv_table(&["r", "mean_curvature"], &rows)
}

pub fn write_file(path: &Path, contents: &str) -> io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)
}

/// One line per record: `PASS`/`FAIL`, id, measured against expected.
pub fn text_summary(report: &crate::suite::SuiteReport) -> String {
    let mut out = String::new();
    for r in &report.records {
        let measured = r.measured.map_or_else(|| "error".to_string(), format_g17);
        let _ = write!(
            out,
            "{} {}/{} measured {} expected {} tol {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.scenario,
            r.check,
            measured,
            format_g17(r.expected),
            format_g17(r.tolerance)
        );
        if let Some(e) = &r.error {
            let _ = write!(out, " ({e})");
        }
        out.push('\n');
    }
    let s = report.summary;
    let _ = writeln!(out, "{} checks, {} passed, {} failed", s.total, s.passed, s.failed);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suite::SuiteReport;

    #[test]
    fn g17_matches_c() {
        let cases = [
            (0.1, "0.10000000000000001"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (1e-5, "1.0000000000000001e-05"),
            (123456789.0, "123456789"),
            (1e17, "1e+17"),
            (2.0 / 3.0, "0.66666666666666663"),
            (1e300, "1.0000000000000001e+300"),
            (0.0001, "0.0001"),
        ];
        for (x, s) in cases {
            assert_eq!(format_g17(x), s, "{x}");
        }
    }

    #[test]
    fn g17_round_trips() {
        for x in [std::f64::consts::PI, -1.0 / 3.0, 6.02214076e23, 5e-324, f64::MAX] {
            assert_eq!(format_g17(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn empty_report_is_valid() {
        let report = SuiteReport::from_records(0, Vec::new(), Default::default());
        for format in [ReportFormat::Toml, ReportFormat::Json] {
            let text = render(&report, format);
            let back: SuiteReport = match format {
                ReportFormat::Toml => toml::from_str(&text).unwrap(),
                ReportFormat::Json => serde_json::from_str(&text).unwrap(),
            };
            assert_eq!(back, report);
        }
    }

    #[test]
    fn csv_has_header() {
        let t = csv_table(&["a", "b"], &[vec![1.0, 0.5]]);
        assert_eq!(t, "a,b\n1,0.5\n");
    }
}
