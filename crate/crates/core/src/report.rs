//! Report emitters: training-history CSV, grid summary CSV, JSON records,
//! run manifests and predicted-vs-actual SVG plots.
//!
//! All files are written to a temporary sibling and renamed into place, so
//! no output is ever left partially written. Float formatting is
//! deterministic: identical values produce identical bytes.

use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::train::{CellOutcome, EvalReport, TrainingHistory};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Rounds to 6 significant digits and prints the shortest decimal form.
pub fn fmt_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = 5 - exp;
    let rounded = if decimals >= 0 {
        let scale = 10f64.powi(decimals.min(300));
        (x * scale).round() / scale
    } else {
        let scale = 10f64.powi((-decimals).min(300));
        (x / scale).round() * scale
    };
    format!("{rounded}")
}

/// Writes to `<name>.tmp` in the target directory, then renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// `epoch,train_mae,val_mae` with one row per trained epoch, full float
/// precision.
pub fn history_csv(history: &TrainingHistory) -> String {
    let mut out = String::from("epoch,train_mae,val_mae\n");
    for r in &history.records {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_mae, r.val_mae));
    }
    out
}

/// `model,optimizer,val_mae,test_mae,epochs`, one row per grid cell in cell
/// order, MAE values at 6 significant digits. Failed cells leave their MAE
/// fields empty.
pub fn summary_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("model,optimizer,val_mae,test_mae,epochs\n");
    for r in reports {
        let val = r.val_mae.map(fmt_sig6).unwrap_or_default();
        let test = r.test_mae.map(fmt_sig6).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.model, r.optimizer, val, test, r.epochs
        ));
    }
    out
}

/// Everything needed to reproduce a run, fully resolved before training
/// starts and serialized next to the outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub tool_version: String,
    pub command: String,
    pub data_path: String,
    pub models: Vec<String>,
    pub optimizers: Vec<String>,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub parallelism: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub out_dir: String,
}

pub const REPORT_SCHEMA: u32 = 1;

pub fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Config(format!("manifest: {e}")))?;
    write_atomic(path, format!("{json}\n").as_bytes())
}

/// JSON record for a single (model, optimizer) run. Normalized MAE matches
/// the summary tables; predictions are included both normalized and on the
/// original scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub model: String,
    pub optimizer: String,
    pub val_mae: Option<f64>,
    pub test_mae: Option<f64>,
    /// Best epoch of the initial run, used for retraining.
    pub epochs: usize,
    pub trained_epochs: Option<usize>,
    pub stopped_early: Option<bool>,
    pub error: Option<String>,
    pub normalizer_min: f64,
    pub normalizer_max: f64,
    pub test_predictions_normalized: Option<Vec<f64>>,
    pub test_actuals_normalized: Option<Vec<f64>>,
    pub test_predictions: Option<Vec<f64>>,
    pub test_actuals: Option<Vec<f64>>,
}

impl RunReport {
    pub fn from_outcome(outcome: &CellOutcome, normalizer: &Normalizer) -> RunReport {
        let denorm =
            |xs: &Option<Vec<f64>>| xs.as_ref().map(|v| v.iter().map(|&x| normalizer.invert(x)).collect());
        RunReport {
            schema: REPORT_SCHEMA,
            model: outcome.report.model.to_string(),
            optimizer: outcome.report.optimizer.to_string(),
            val_mae: outcome.report.val_mae,
            test_mae: outcome.report.test_mae,
            epochs: outcome.report.epochs,
            trained_epochs: outcome.history.as_ref().map(|h| h.epochs()),
            stopped_early: outcome.history.as_ref().map(|h| h.stopped_early),
            error: outcome.report.error.clone(),
            normalizer_min: normalizer.min(),
            normalizer_max: normalizer.max(),
            test_predictions_normalized: outcome.test_predictions.clone(),
            test_actuals_normalized: outcome.test_actuals.clone(),
            test_predictions: denorm(&outcome.test_predictions),
            test_actuals: denorm(&outcome.test_actuals),
        }
    }
}

pub fn write_run_report(report: &RunReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Config(format!("run report: {e}")))?;
    write_atomic(path, format!("{json}\n").as_bytes())
}

const SVG_WIDTH: f64 = 840.0;
const SVG_HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 45.0;

fn polyline_points(values: &[f64], lo: f64, hi: f64) -> String {
    let plot_w = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = values.len();
    let mut pts = String::new();
    for (i, &v) in values.iter().enumerate() {
        let x = MARGIN_LEFT
            + if n > 1 {
                plot_w * i as f64 / (n - 1) as f64
            } else {
                plot_w / 2.0
            };
        let y = MARGIN_TOP + plot_h * (1.0 - (v - lo) / span);
        if i > 0 {
            pts.push(' ');
        }
        pts.push_str(&format!("{x:.2},{y:.2}"));
    }
    pts
}

/// Renders actual and predicted series (normalized scale) as a
/// self-contained SVG with axes and a legend.
pub fn prediction_svg(actual: &[f64], predicted: &[f64]) -> Result<String> {
    if actual.is_empty() || predicted.is_empty() {
        return Err(Error::Domain("cannot plot empty series".into()));
    }
    if actual.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} actual vs {} predicted points",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.iter().chain(predicted).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("plot values".into()));
    }
    let lo = actual
        .iter()
        .chain(predicted)
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = actual
        .iter()
        .chain(predicted)
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.05 * (hi - lo).max(1e-9);
    let (lo, hi) = (lo - pad, hi + pad);

    let plot_w = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x0 = MARGIN_LEFT;
    let y0 = MARGIN_TOP;
    let x1 = MARGIN_LEFT + plot_w;
    let y1 = MARGIN_TOP + plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y1}\" x2=\"{x1}\" y2=\"{y1}\" stroke=\"black\" stroke-width=\"1\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\" stroke-width=\"1\"/>\n"
    ));
    // Y ticks and grid.
    for k in 0..=4 {
        let frac = k as f64 / 4.0;
        let v = lo + (hi - lo) * frac;
        let y = y1 - plot_h * frac;
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{x0}\" y2=\"{y:.2}\" stroke=\"black\" stroke-width=\"1\"/>\n",
            x0 - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{}</text>\n",
            x0 - 8.0,
            y + 4.0,
            fmt_sig6(v)
        ));
    }
    // X ticks: first, middle, last index.
    let n = actual.len();
    for idx in [0usize, n.saturating_sub(1) / 2, n - 1] {
        let x = x0 + if n > 1 {
            plot_w * idx as f64 / (n - 1) as f64
        } else {
            plot_w / 2.0
        };
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{y1}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"1\"/>\n",
            y1 + 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{idx}</text>\n",
            y1 + 18.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">test day</text>\n",
        x0 + plot_w / 2.0,
        y1 + 36.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">normalized value</text>\n",
        y0 + plot_h / 2.0,
        y0 + plot_h / 2.0
    ));
    // Series.
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        polyline_points(actual, lo, hi)
    ));
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        polyline_points(predicted, lo, hi)
    ));
    // Legend.
    let lx = x1 - 130.0;
    let ly = y0 + 8.0;
    svg.push_str(&format!(
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"120\" height=\"40\" fill=\"white\" stroke=\"black\" stroke-width=\"0.5\"/>\n",
        lx, ly
    ));
    svg.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n",
        lx + 8.0,
        ly + 13.0,
        lx + 32.0,
        ly + 13.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">actual</text>\n",
        lx + 38.0,
        ly + 17.0
    ));
    svg.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#d62728\" stroke-width=\"2\"/>\n",
        lx + 8.0,
        ly + 29.0,
        lx + 32.0,
        ly + 29.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">predicted</text>\n",
        lx + 38.0,
        ly + 33.0
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Renders and atomically writes the prediction plot.
pub fn emit_prediction_svg(actual: &[f64], predicted: &[f64], path: &Path) -> Result<()> {
    let svg = prediction_svg(actual, predicted)?;
    write_atomic(path, svg.as_bytes())
}
