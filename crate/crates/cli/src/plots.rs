//! Static SVG plots rendered from the trace and bounds tables.

use std::path::{Path, PathBuf};

use plotters::prelude::*;
use secest_core::io::Table;

type Series = (String, Vec<f64>);

const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

fn range(series: &[Series], extra: &[f64]) -> (f64, f64) {
    let (lo, hi) = series
        .iter()
        .flat_map(|(_, v)| v.iter())
        .chain(extra)
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

fn chart(path: &Path, title: &str, y_label: &str, t: &[f64], series: &[Series], hlines: &[f64]) -> Result<(), String> {
    let root = SVGBackend::new(path, (900, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let t0 = t.first().copied().unwrap_or(0.0);
    let t1 = t.last().copied().unwrap_or(1.0).max(t0 + 1e-9);
    let (y0, y1) = range(series, hlines);
    let mut c = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(t0..t1, y0..y1)
        .map_err(|e| e.to_string())?;
    c.configure_mesh()
        .x_desc("t")
        .y_desc(y_label)
        .draw()
        .map_err(|e| e.to_string())?;
    for (k, (name, ys)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts = t.iter().copied().zip(ys.iter().copied()).filter(|(_, y)| y.is_finite());
        c.draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(|e| e.to_string())?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    for &h in hlines {
        c.draw_series(LineSeries::new([(t0, h), (t1, h)], BLACK.stroke_width(1)))
            .map_err(|e| e.to_string())?;
    }
    c.configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(|e| e.to_string())?;
    root.present().map_err(|e| e.to_string())
}

fn columns(table: &Table, prefix: &str, strip: &str) -> Vec<Series> {
    table
        .columns_with_prefix(prefix)
        .into_iter()
        .map(|c| {
            let v = table.column(&c).unwrap_or_default();
            (c.trim_start_matches(strip).to_string(), v)
        })
        .collect()
}

/// Writes the plots into `dir` and returns the written paths.
pub fn render(dir: &Path, trace: &Table, bounds: &Table, band: Option<(f64, f64)>) -> Result<Vec<PathBuf>, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let t = trace.column("t").ok_or("trace has no t column")?;
    let mut written = Vec::new();

    let pi = columns(trace, "pi_S", "pi_");
    let p = dir.join("consistency.svg");
    chart(&p, "Consistency measure per tier-1 set", "pi", &t, &pi, &[])?;
    written.push(p);

    let labels: Vec<String> = pi.iter().map(|(n, _)| n.trim_start_matches('S').to_string()).collect();
    let sigma: Vec<f64> = trace
        .column_text("sigma")
        .unwrap_or_default()
        .iter()
        .map(|s| labels.iter().position(|l| l == s).map_or(f64::NAN, |i| (i + 1) as f64))
        .collect();
    let p = dir.join("selection.svg");
    chart(
        &p,
        "Selected tier-1 set (index in lexicographic order)",
        "sigma",
        &t,
        &[("sigma".into(), sigma)],
        &[],
    )?;
    written.push(p);

    let tb = bounds.column("t").ok_or("bounds has no t column")?;
    let log = |v: Vec<f64>| v.into_iter().map(|x| x.max(1e-300).log10()).collect::<Vec<_>>();
    let err = vec![
        (
            "selected error".to_string(),
            log(bounds.column("selected_error").unwrap_or_default()),
        ),
        (
            "bound".to_string(),
            log(bounds.column("selected_bound").unwrap_or_default()),
        ),
    ];
    let p = dir.join("error.svg");
    chart(
        &p,
        "Selected estimate error and bound",
        "log10 |x - xhat|",
        &tb,
        &err,
        &[],
    )?;
    written.push(p);

    if let Some((lo, hi)) = band {
        let sqrt = |v: Vec<(String, Vec<f64>)>, tag: &str| -> Vec<Series> {
            v.into_iter()
                .map(|(n, ys)| {
                    (
                        format!("{tag} {n}"),
                        ys.into_iter().map(|y| y.max(0.0).sqrt()).collect(),
                    )
                })
                .collect()
        };
        let mut volts = sqrt(columns(bounds, "v2[", "v2"), "true");
        volts.extend(sqrt(columns(bounds, "v2hat[", "v2hat"), "estimated"));
        volts.extend(sqrt(columns(bounds, "v2rx[", "v2rx"), "received"));
        let p = dir.join("voltage.svg");
        chart(
            &p,
            "Customer voltages and safety band",
            "v (p.u.)",
            &tb,
            &volts,
            &[lo, hi],
        )?;
        written.push(p);
    }
    Ok(written)
}
