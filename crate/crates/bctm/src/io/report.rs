//! Structured reports (JSON with a stable key schema), curve exports and a
//! minimal SVG rendering of survival curves.
//!
//! Reports avoid volatile fields (timestamps, timings), so a command rerun
//! with identical inputs and seed writes byte-identical files. Timing is
//! printed to the console instead.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::em::{FitResult, ProfilePoint};
use crate::error::Result;
use crate::io::dataset::RowIssue;
use crate::model::{BctmParameters, KnotGrid};
use crate::npmle::NpmleEstimate;
use crate::simulation::{MonteCarloReport, SimScenario};

/// One row of a `B`-sweep table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub b: usize,
    pub loglik: f64,
    pub n_params: usize,
    pub aic: f64,
}

/// Full record of a `fit` run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub command: String,
    pub dataset: String,
    pub n_observations: usize,
    pub rejected_rows: Vec<RowIssue>,
    pub parameter_names: Vec<String>,
    pub knots: KnotGrid,
    pub init: BctmParameters,
    pub fit: FitResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_sweep: Option<Vec<SweepRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Vec<ProfilePoint>>,
}

/// Full record of a `simulate` run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateReport {
    pub command: String,
    pub scenario: SimScenario,
    pub report: MonteCarloReport,
}

/// Full record of an `npmle` run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NpmleReport {
    pub command: String,
    pub dataset: String,
    pub n_observations: usize,
    pub rejected_rows: Vec<RowIssue>,
    pub estimate: NpmleEstimate,
    pub survival_curve: Vec<(f64, f64)>,
}

/// Per-group descriptive summary row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub n: usize,
    pub n_events: usize,
    pub event_percent: f64,
    /// Median midpoint of the finite event intervals; `None` without events.
    pub median_event_midpoint: Option<f64>,
    /// Covariate name, mean and standard deviation (`None` for fewer than
    /// two subjects).
    pub covariates: Vec<(String, f64, Option<f64>)>,
}

/// Full record of a `summary` run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryReport {
    pub command: String,
    pub dataset: String,
    pub group_column: String,
    /// Event medians use midpoints of finite intervals, events only.
    pub median_rule: String,
    pub groups: Vec<GroupSummary>,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes one `t,survival` delimited file per profile and returns the paths.
pub fn write_curve_files(
    out_prefix: &Path,
    curves: &[(String, Vec<(f64, f64)>)],
) -> Result<Vec<std::path::PathBuf>> {
    let mut paths = Vec::with_capacity(curves.len());
    for (name, points) in curves {
        let safe: String = name
            .chars()
            .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let path = out_prefix.with_file_name(format!(
            "{}_{}.csv",
            out_prefix
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "curves".into()),
            safe
        ));
        let mut text = String::from("t,survival\n");
        for (t, s) in points {
            text.push_str(&format!("{t},{s}\n"));
        }
        std::fs::write(&path, text)?;
        paths.push(path);
    }
    Ok(paths)
}

const SVG_PALETTE: [&str; 6] = ["#1f6fb2", "#c23b22", "#2e8b57", "#8a2be2", "#b8860b", "#36454f"];

/// Renders all curves into one SVG with axes and a legend.
pub fn write_curves_svg(path: &Path, curves: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    let width = 720.0;
    let height = 480.0;
    let margin = 60.0;
    let t_max = curves
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|(t, _)| *t))
        .fold(1e-12f64, f64::max);
    let to_x = |t: f64| margin + (width - 2.0 * margin) * t / t_max;
    let to_y = |s: f64| height - margin - (height - 2.0 * margin) * s;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // axes
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n",
        x0 = margin,
        y0 = height - margin,
        x1 = width - margin,
        y1 = margin,
    ));
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = to_y(frac);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#cccccc\" stroke-dasharray=\"3,3\"/>\n\
             <text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{frac:.2}</text>\n",
            margin,
            width - margin,
            margin - 6.0,
            y + 4.0,
        ));
        let t = frac * t_max;
        let x = to_x(t);
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{t:.2}</text>\n",
            height - margin + 16.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">time</text>\n\
         <text x=\"16\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" \
         transform=\"rotate(-90 16 {})\">population survival</text>\n",
        width / 2.0,
        height - 14.0,
        height / 2.0,
        height / 2.0,
    ));
    for (k, (name, points)) in curves.iter().enumerate() {
        let color = SVG_PALETTE[k % SVG_PALETTE.len()];
        let path_points: Vec<String> = points
            .iter()
            .map(|(t, s)| format!("{:.3},{:.3}", to_x(*t), to_y(*s)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\" points=\"{}\"/>\n",
            path_points.join(" ")
        ));
        let ly = margin + 18.0 * k as f64;
        let lx = width - margin - 150.0;
        svg.push_str(&format!(
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{}\" y=\"{}\" font-size=\"12\">{name}</text>\n",
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Writes the per-group summary as a wide delimited table.
pub fn write_summary_csv(report: &SummaryReport, path: &Path) -> Result<()> {
    let mut header = String::from("group,n,n_events,event_percent,median_event_midpoint");
    if let Some(first) = report.groups.first() {
        for (name, _, _) in &first.covariates {
            header.push_str(&format!(",mean_{name},sd_{name}"));
        }
    }
    let mut text = header;
    text.push('\n');
    for g in &report.groups {
        let median = g
            .median_event_midpoint
            .map(|m| format!("{m}"))
            .unwrap_or_else(|| "NA".into());
        text.push_str(&format!(
            "{},{},{},{:.4},{median}",
            g.group, g.n, g.n_events, g.event_percent
        ));
        for (_, mean, sd) in &g.covariates {
            let sd = sd.map(|s| format!("{s:.4}")).unwrap_or_else(|| "NA".into());
            text.push_str(&format!(",{mean:.4},{sd}"));
        }
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_report_round_trips_bit_exactly() {
        let knots = KnotGrid::new(vec![0.0, 0.1 + 0.2, 1.0 / 3.0 + 1.0]).unwrap();
        let theta = BctmParameters::new(
            0.123456789012345678,
            vec![0.1, 0.2, std::f64::consts::PI],
            vec![1.0 / 3.0, -2.0 / 7.0],
            vec![0.6180339887498949],
        )
        .unwrap();
        let report = FitReport {
            command: "fit".into(),
            dataset: "data.csv".into(),
            n_observations: 10,
            rejected_rows: vec![],
            parameter_names: theta.names(),
            knots: knots.clone(),
            init: theta.clone(),
            fit: FitResult {
                theta_hat: theta.clone(),
                se: vec![Some(0.1), None, Some(1.0 / 7.0), Some(0.2), Some(0.3), Some(0.4)],
                vcov: None,
                loglik: -199.51930000000001,
                aic: 419.0386,
                n_params: 6,
                n_em_iters: 12,
                converged: true,
                loglik_trace: vec![-210.0, -200.0, -199.51930000000001],
                boundary: vec![false; 6],
                vcov_pseudo_inverse: false,
                mstep_stalled: false,
                fixed_alpha: None,
            },
            b_sweep: None,
            profile: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        write_json(&report, &path).unwrap();
        let back: FitReport = read_json(&path).unwrap();
        assert_eq!(back.fit.theta_hat, report.fit.theta_hat);
        assert_eq!(back.knots, report.knots);
        assert_eq!(back.fit.loglik.to_bits(), report.fit.loglik.to_bits());
        // writing again produces identical bytes
        let path2 = dir.path().join("report2.json");
        write_json(&back, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn curve_files_and_svg_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("curves");
        let curves = vec![
            ("treated".to_string(), vec![(0.0, 1.0), (1.0, 0.8), (2.0, 0.6)]),
            ("control".to_string(), vec![(0.0, 1.0), (1.0, 0.7), (2.0, 0.5)]),
        ];
        let paths = write_curve_files(&prefix, &curves).unwrap();
        assert_eq!(paths.len(), 2);
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(text.starts_with("t,survival\n0,1\n"));
        let svg_path = dir.path().join("curves.svg");
        write_curves_svg(&svg_path, &curves).unwrap();
        let svg = std::fs::read_to_string(&svg_path).unwrap();
        assert!(svg.contains("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("treated"));
    }
}
