//! Post-run SVG line plots, one file per diagnostics column against time.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rymflow_core::DiagnosticsRecord;

pub const PLOT_COLUMNS: [(&str, fn(&DiagnosticsRecord) -> f64); 13] = [
    ("energy_F", |r| r.energy_f),
    ("dissipation_pred", |r| r.dissipation_pred),
    ("dissipation_meas", |r| r.dissipation_meas),
    ("volume", |r| r.volume),
    ("flux", |r| r.flux),
    ("calabi", |r| r.calabi),
    ("gauss_bonnet_residual", |r| r.gauss_bonnet_residual),
    ("volume_ode_residual", |r| r.volume_ode_residual),
    ("lambda", |r| r.lambda_schrodinger),
    ("parallel_defect_int", |r| r.parallel_defect_int),
    ("parallel_defect_sup", |r| r.parallel_defect_sup),
    ("moser_trudinger", |r| r.moser_trudinger_k),
    ("sobolev_proxy", |r| r.sobolev_proxy),
];

const W: f64 = 720.0;
const H: f64 = 440.0;
const ML: f64 = 78.0;
const MR: f64 = 18.0;
const MT: f64 = 34.0;
const MB: f64 = 46.0;

pub fn emit_plots(dir: &Path, records: &[DiagnosticsRecord]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(PLOT_COLUMNS.len());
    for (name, pick) in PLOT_COLUMNS {
        let path = dir.join(format!("plot_{name}.svg"));
        let svg = render_column(name, records, pick);
        fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

fn render_column(name: &str, records: &[DiagnosticsRecord], pick: fn(&DiagnosticsRecord) -> f64) -> String {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .map(|r| (r.t, pick(r)))
        .filter(|(t, v)| t.is_finite() && v.is_finite())
        .collect();
    let (t0, t1) = padded_range(pts.iter().map(|p| p.0));
    let (v0, v1) = padded_range(pts.iter().map(|p| p.1));
    let x = |t: f64| ML + (t - t0) / (t1 - t0) * (W - ML - MR);
    let y = |v: f64| H - MB - (v - v0) / (v1 - v0) * (H - MT - MB);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{name} vs t</text>",
        W / 2.0
    );
    let _ = writeln!(
        s,
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>",
        W - ML - MR,
        H - MT - MB
    );
    for (frac, tv) in [(0.0, t0), (0.5, 0.5 * (t0 + t1)), (1.0, t1)] {
        let px = ML + frac * (W - ML - MR);
        let _ = writeln!(
            s,
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            H - MB + 18.0,
            short(tv)
        );
    }
    for (frac, vv) in [(0.0, v0), (0.5, 0.5 * (v0 + v1)), (1.0, v1)] {
        let py = H - MB - frac * (H - MT - MB);
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            ML - 6.0,
            py + 4.0,
            short(vv)
        );
    }
    if pts.len() > 1 {
        let mut d = String::new();
        for (i, (t, v)) in pts.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, x(*t), y(*v));
        }
        let _ = writeln!(
            s,
            "<path d=\"{}\" fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1.5\"/>",
            d.trim_end()
        );
    } else if let Some((t, v)) = pts.first() {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1f5fa8\"/>",
            x(*t),
            y(*v)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        let pad = 0.5 * (1.0 + lo.abs() * 1e-3);
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn short(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.3e}")
    }
}
