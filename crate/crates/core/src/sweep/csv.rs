//! Plot-ready CSV output.

use std::fs;
use std::path::Path;

use super::{SweepError, SweepResult};

pub const CSV_HEADER: &str = "distance_km,extra_db,dr,cr,dead_time_us,bias_v,total_clicks,effective_clicks,qber,kr_bps";

/// Six significant digits, C `%g` style: fixed notation for decimal
/// exponents in [-4, 6), scientific otherwise, trailing zeros removed.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..6).contains(&exp) {
        trim(&format!("{x:.*}", (5 - exp) as usize))
    } else {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

/// The CSV text of a sweep: header plus one line per row, in row order.
/// Rows the hardware or the QBER ceiling rule out report a key rate of 0.
pub fn render_csv(result: &SweepResult) -> String {
    let mut out = String::with_capacity(64 * (result.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &result.rows {
        let fields = [
            r.budget.distance_km,
            r.budget.extra_loss_db,
            r.dr,
            r.cr,
            r.budget.dead_time_s * 1e6,
            r.bias_v,
            r.total_clicks_hz,
            r.effective_clicks_hz,
            r.qber,
            r.usable_kr_bps(),
        ];
        let line: Vec<String> = fields.iter().map(|&x| fmt_sig6(x)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<(), SweepError> {
    fs::write(path, render_csv(result)).map_err(|source| SweepError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{run_sweep, Grids, SweepSpec};
    use super::*;

    #[test]
    fn sig6_matches_printf_g() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (19305.0, "19305"),
            (19305.4567, "19305.5"),
            (0.03125, "0.03125"),
            (565174.447, "565174"),
            (1234567.0, "1.23457e+06"),
            (0.000012345678, "1.23457e-05"),
            (0.0001, "0.0001"),
            (-2.5, "-2.5"),
            (50.0, "50"),
            (999999.5, "1e+06"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_sig6(x), want, "{x}");
        }
    }

    fn three_points() -> SweepResult {
        run_sweep(&SweepSpec {
            grids: Grids {
                dr: vec![0.03125],
                cr: vec![0.5, 0.7, 0.9],
                ..Grids::default()
            },
            ..SweepSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn empty_result_is_header_only() {
        let mut r = three_points();
        r.rows.clear();
        assert_eq!(render_csv(&r), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn emission_is_line_per_row_and_repeatable() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        let r = three_points();
        emit_csv(&r, &a).unwrap();
        emit_csv(&r, &b).unwrap();
        let text = std::fs::read(&a).unwrap();
        assert_eq!(text, std::fs::read(&b).unwrap());
        let text = String::from_utf8(text).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().starts_with("80,0,0.03125,0.5,50,2,"));
    }

    #[test]
    fn unwritable_path_names_the_path() {
        let err = emit_csv(&three_points(), Path::new("/nonexistent/dir/out.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/out.csv"));
    }
}
