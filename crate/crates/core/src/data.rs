//! Series ingestion, chronological splitting, min-max normalization and
//! lookback windowing.
//!
//! The normalizer is always fitted on the training segment only; validation
//! and test values may therefore fall outside [0, 1]. Windows never straddle
//! a split boundary: each segment is windowed on its own.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use chrono::NaiveDate;
use std::path::Path;

/// Default lookback: a window of the previous 14 trading days.
pub const LOOKBACK: usize = 14;
/// Default horizon: predict the next day.
pub const HORIZON: usize = 1;

/// A daily series of positive closing values with strictly increasing dates.
#[derive(Debug, Clone)]
pub struct TimeSeries {
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
    volumes: Option<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(
        dates: Vec<NaiveDate>,
        values: Vec<f64>,
        volumes: Option<Vec<f64>>,
    ) -> Result<Self> {
        if dates.is_empty() {
            return Err(Error::Domain("empty series".into()));
        }
        if dates.len() != values.len() {
            return Err(Error::Domain(format!(
                "{} dates vs {} values",
                dates.len(),
                values.len()
            )));
        }
        if let Some(v) = &volumes {
            if v.len() != values.len() {
                return Err(Error::Domain(format!(
                    "{} volumes vs {} values",
                    v.len(),
                    values.len()
                )));
            }
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("dates are not strictly increasing".into()));
        }
        if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain("closing values must be positive".into()));
        }
        Ok(TimeSeries {
            dates,
            values,
            volumes,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn volumes(&self) -> Option<&[f64]> {
        self.volumes.as_deref()
    }

    fn segment(&self, start: usize, end: usize) -> TimeSeries {
        TimeSeries {
            dates: self.dates[start..end].to_vec(),
            values: self.values[start..end].to_vec(),
            volumes: self.volumes.as_ref().map(|v| v[start..end].to_vec()),
        }
    }

    /// Concatenates two adjacent segments (used to rebuild train+val for
    /// retraining). Date ordering is revalidated.
    pub fn concat(&self, other: &TimeSeries) -> Result<TimeSeries> {
        let mut dates = self.dates.clone();
        dates.extend_from_slice(&other.dates);
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        let volumes = match (&self.volumes, &other.volumes) {
            (Some(a), Some(b)) => {
                let mut v = a.clone();
                v.extend_from_slice(b);
                Some(v)
            }
            _ => None,
        };
        TimeSeries::new(dates, values, volumes)
    }
}

fn parse_field<T: std::str::FromStr>(
    raw: &str,
    line: usize,
    what: &str,
) -> Result<T> {
    raw.trim().parse::<T>().map_err(|_| Error::Ingest {
        line,
        message: format!("cannot parse {what} from '{}'", raw.trim()),
    })
}

/// Loads a `date,close[,volume]` file. Dates are ISO `YYYY-MM-DD`; the line
/// number in errors is 1-based and counts the header.
pub fn load_series(path: &Path) -> Result<TimeSeries> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or(Error::Ingest {
        line: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let with_volume = match cols.as_slice() {
        ["date", "close"] => false,
        ["date", "close", "volume"] => true,
        _ => {
            return Err(Error::Ingest {
                line: 1,
                message: format!("expected header 'date,close[,volume]', got '{header}'"),
            })
        }
    };

    let mut dates = Vec::new();
    let mut values = Vec::new();
    let mut volumes = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            return Err(Error::Ingest {
                line,
                message: "blank line".into(),
            });
        }
        let fields: Vec<&str> = raw.split(',').collect();
        let expected = if with_volume { 3 } else { 2 };
        if fields.len() != expected {
            return Err(Error::Ingest {
                line,
                message: format!("expected {expected} fields, got {}", fields.len()),
            });
        }
        let date = NaiveDate::parse_from_str(fields[0].trim(), "%Y-%m-%d").map_err(|_| {
            Error::Ingest {
                line,
                message: format!("cannot parse date from '{}'", fields[0].trim()),
            }
        })?;
        if let Some(&prev) = dates.last() {
            if date <= prev {
                return Err(Error::Ingest {
                    line,
                    message: format!("date {date} does not increase past {prev}"),
                });
            }
        }
        let close: f64 = parse_field(fields[1], line, "close")?;
        if !close.is_finite() || close <= 0.0 {
            return Err(Error::Ingest {
                line,
                message: format!("close must be positive, got {close}"),
            });
        }
        if with_volume {
            let vol: f64 = parse_field(fields[2], line, "volume")?;
            if !vol.is_finite() || vol < 0.0 {
                return Err(Error::Ingest {
                    line,
                    message: format!("volume must be non-negative, got {vol}"),
                });
            }
            volumes.push(vol);
        }
        dates.push(date);
        values.push(close);
    }
    if dates.is_empty() {
        return Err(Error::Ingest {
            line: 1,
            message: "no data rows".into(),
        });
    }
    TimeSeries::new(dates, values, with_volume.then_some(volumes))
}

/// Segment sizes for a 70/15/15 chronological split: train and validation
/// round down, the remainder goes to test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 70 / 100;
    let val = n * 15 / 100;
    (train, val, n - train - val)
}

/// Splits into contiguous, ordered train/validation/test segments.
pub fn chronological_split(s: &TimeSeries) -> Result<(TimeSeries, TimeSeries, TimeSeries)> {
    if s.len() < 20 {
        return Err(Error::Domain(format!(
            "series of length {} is too short to split (need at least 20)",
            s.len()
        )));
    }
    let (n_train, n_val, _) = split_sizes(s.len());
    Ok((
        s.segment(0, n_train),
        s.segment(n_train, n_train + n_val),
        s.segment(n_train + n_val, s.len()),
    ))
}

/// Affine min-max rescaler fitted on training extrema.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    min_t: f64,
    max_t: f64,
}

impl Normalizer {
    /// Stores the extrema of the training values.
    pub fn fit(train_values: &[f64]) -> Result<Self> {
        if train_values.is_empty() {
            return Err(Error::Domain("cannot fit normalizer on empty values".into()));
        }
        let min_t = train_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_t = train_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(max_t > min_t) {
            return Err(Error::Domain(format!(
                "degenerate series: min == max == {min_t}"
            )));
        }
        Ok(Normalizer { min_t, max_t })
    }

    pub fn min(&self) -> f64 {
        self.min_t
    }

    pub fn max(&self) -> f64 {
        self.max_t
    }

    /// `(x - min) / (max - min)`; values outside the training range map
    /// outside [0, 1].
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min_t) / (self.max_t - self.min_t)
    }

    /// Exact affine inverse of [`apply`](Self::apply).
    pub fn invert(&self, y: f64) -> f64 {
        self.min_t + y * (self.max_t - self.min_t)
    }

    pub fn apply_all(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }
}

/// Lookback windows paired with their next-step targets.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    /// `[n, lookback, 1]`
    inputs: Tensor,
    /// `[n, 1]`
    targets: Tensor,
    /// Start index of each window in the source segment. The target of
    /// sample `i` sits at `origins[i] + lookback + horizon - 1`.
    origins: Vec<usize>,
    lookback: usize,
    horizon: usize,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn targets(&self) -> &Tensor {
        &self.targets
    }

    pub fn origins(&self) -> &[usize] {
        &self.origins
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Gathers the given sample rows into new input/target tensors.
    pub fn gather(&self, rows: &[usize]) -> Result<(Tensor, Tensor)> {
        if rows.is_empty() {
            return Err(Error::Domain("gather of zero rows".into()));
        }
        let mut inp = Tensor::zeros(&[rows.len(), self.lookback, 1]);
        let mut tgt = Tensor::zeros(&[rows.len(), 1]);
        for (dst, &src) in rows.iter().enumerate() {
            if src >= self.len() {
                return Err(Error::Domain(format!(
                    "sample index {src} out of range 0..{}",
                    self.len()
                )));
            }
            for t in 0..self.lookback {
                inp.set3(dst, t, 0, self.inputs.at3(src, t, 0));
            }
            tgt.set2(dst, 0, self.targets.at2(src, 0));
        }
        Ok((inp, tgt))
    }
}

/// Builds all (window, next value) samples: sample `i` takes
/// `values[i .. i+lookback]` as input and `values[i+lookback+horizon-1]`
/// as target, so no input index ever reaches the target index.
pub fn make_windows(values: &[f64], lookback: usize, horizon: usize) -> Result<WindowedDataset> {
    if lookback == 0 || horizon == 0 {
        return Err(Error::Config(
            "lookback and horizon must be positive".into(),
        ));
    }
    let n_values = values.len();
    if n_values < lookback + horizon {
        return Err(Error::Domain(format!(
            "{n_values} values cannot form a window of {lookback} plus horizon {horizon}"
        )));
    }
    let n = n_values - lookback - horizon + 1;
    let mut inputs = Tensor::zeros(&[n, lookback, 1]);
    let mut targets = Tensor::zeros(&[n, 1]);
    let mut origins = Vec::with_capacity(n);
    for i in 0..n {
        for t in 0..lookback {
            inputs.set3(i, t, 0, values[i + t]);
        }
        targets.set2(i, 0, values[i + lookback + horizon - 1]);
        origins.push(i);
    }
    Ok(WindowedDataset {
        inputs,
        targets,
        origins,
        lookback,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn write_csv(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_small_file() {
        let f = write_csv(&[
            "date,close",
            "2020-01-01,100.0",
            "2020-01-02,101.5",
            "2020-01-03,99.25",
        ]);
        let s = load_series(f.path()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.values(), &[100.0, 101.5, 99.25]);
        assert!(s.volumes().is_none());
    }

    #[test]
    fn loads_volume_column() {
        let f = write_csv(&["date,close,volume", "2020-01-01,100.0,5000", "2020-01-02,101.0,0"]);
        let s = load_series(f.path()).unwrap();
        assert_eq!(s.volumes().unwrap(), &[5000.0, 0.0]);
    }

    #[test]
    fn out_of_order_date_names_line() {
        let f = write_csv(&[
            "date,close",
            "2020-01-05,100.0",
            "2020-01-04,101.0",
        ]);
        match load_series(f.path()) {
            Err(Error::Ingest { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected ingest error, got {other:?}"),
        }
    }

    #[test]
    fn non_positive_close_names_line() {
        let f = write_csv(&["date,close", "2020-01-01,100.0", "2020-01-02,-3.0"]);
        match load_series(f.path()) {
            Err(Error::Ingest { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected ingest error, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_error() {
        let f = write_csv(&["date,close", "2020-01-01,"]);
        assert!(matches!(load_series(f.path()), Err(Error::Ingest { line: 2, .. })));
    }

    #[test]
    fn bad_header_is_error() {
        let f = write_csv(&["time,price", "2020-01-01,100.0"]);
        assert!(matches!(load_series(f.path()), Err(Error::Ingest { line: 1, .. })));
    }

    #[test]
    fn long_file_extrema_match_column_scan() {
        let n = 7554usize;
        let mut lines = vec!["date,close".to_string()];
        let start = date("1990-01-01");
        let mut raw = Vec::with_capacity(n);
        for i in 0..n {
            let d = start + chrono::Days::new(i as u64);
            // Deterministic wiggle, always positive.
            let v = 300.0 + (i as f64) * 0.31 + ((i as f64) * 0.37).sin() * 25.0;
            raw.push(v);
            lines.push(format!("{},{v:.6}", d.format("%Y-%m-%d")));
        }
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let f = write_csv(&refs);
        let s = load_series(f.path()).unwrap();
        assert_eq!(s.len(), n);

        // Independent scan of what was written (through the text round-trip).
        let lo = s.values().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = s.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let want_lo: f64 = raw
            .iter()
            .map(|v| format!("{v:.6}").parse::<f64>().unwrap())
            .fold(f64::INFINITY, f64::min);
        let want_hi: f64 = raw
            .iter()
            .map(|v| format!("{v:.6}").parse::<f64>().unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(lo, want_lo);
        assert_eq!(hi, want_hi);
    }

    #[test]
    fn split_size_arithmetic() {
        assert_eq!(split_sizes(1000), (700, 150, 150));
        assert_eq!(split_sizes(10), (7, 1, 2));
        assert_eq!(split_sizes(7554), (5287, 1133, 1134));
    }

    #[test]
    fn split_preserves_order_and_coverage() {
        let n = 97;
        let dates: Vec<NaiveDate> = (0..n)
            .map(|i| date("2010-01-01") + chrono::Days::new(i as u64))
            .collect();
        let values: Vec<f64> = (0..n).map(|i| 10.0 + i as f64).collect();
        let s = TimeSeries::new(dates, values.clone(), None).unwrap();
        let (train, val, test) = chronological_split(&s).unwrap();
        assert_eq!(train.len() + val.len() + test.len(), n);
        let rebuilt: Vec<f64> = train
            .values()
            .iter()
            .chain(val.values())
            .chain(test.values())
            .cloned()
            .collect();
        assert_eq!(rebuilt, values);
    }

    #[test]
    fn split_rejects_short_series() {
        let dates: Vec<NaiveDate> = (0..19)
            .map(|i| date("2010-01-01") + chrono::Days::new(i as u64))
            .collect();
        let values = vec![1.0; 19];
        let s = TimeSeries::new(dates, values, None).unwrap();
        assert!(matches!(chronological_split(&s), Err(Error::Domain(_))));
    }

    #[test]
    fn normalizer_examples() {
        let n = Normalizer::fit(&[100.0, 150.0, 200.0]).unwrap();
        assert_eq!(n.min(), 100.0);
        assert_eq!(n.max(), 200.0);
        assert_eq!(n.apply(150.0), 0.5);
        assert_eq!(n.apply(250.0), 1.5);
        assert_eq!(n.apply(100.0), 0.0);
        assert_eq!(n.apply(200.0), 1.0);
    }

    #[test]
    fn constant_series_is_degenerate() {
        assert!(matches!(
            Normalizer::fit(&[5.0, 5.0, 5.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn window_counts() {
        let values: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let w = make_windows(&values, LOOKBACK, HORIZON).unwrap();
        assert_eq!(w.len(), 6);

        let fourteen: Vec<f64> = (0..14).map(|i| i as f64).collect();
        assert!(matches!(
            make_windows(&fourteen, LOOKBACK, HORIZON),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn windows_match_brute_force_enumeration() {
        let values: Vec<f64> = (0..100).map(|i| (i as f64 * 0.7).sin()).collect();
        let w = make_windows(&values, LOOKBACK, HORIZON).unwrap();

        // Brute force: every (14-window, next value) pair.
        let mut expected = Vec::new();
        for start in 0..values.len() {
            let end = start + LOOKBACK;
            if end < values.len() {
                expected.push((start, values[start..end].to_vec(), values[end]));
            }
        }
        assert_eq!(w.len(), expected.len());
        for (i, (start, window, target)) in expected.iter().enumerate() {
            assert_eq!(w.origins()[i], *start);
            for t in 0..LOOKBACK {
                assert_eq!(w.inputs().at3(i, t, 0), window[t]);
            }
            assert_eq!(w.targets().at2(i, 0), *target);
        }
    }

    #[test]
    fn no_lookahead_by_construction() {
        let values: Vec<f64> = (0..60).map(|i| 1.0 + i as f64).collect();
        let w = make_windows(&values, LOOKBACK, HORIZON).unwrap();
        for (i, &origin) in w.origins().iter().enumerate() {
            let target_index = origin + w.lookback() + w.horizon() - 1;
            let max_input_index = origin + w.lookback() - 1;
            assert!(max_input_index < target_index);
            // Cross-check tensor contents against the source segment.
            assert_eq!(w.targets().at2(i, 0), values[target_index]);
            assert_eq!(w.inputs().at3(i, w.lookback() - 1, 0), values[max_input_index]);
        }
    }

    #[test]
    fn gather_picks_rows() {
        let values: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let w = make_windows(&values, LOOKBACK, HORIZON).unwrap();
        let (inp, tgt) = w.gather(&[3, 0]).unwrap();
        assert_eq!(inp.shape(), &[2, LOOKBACK, 1]);
        assert_eq!(tgt.at2(0, 0), w.targets().at2(3, 0));
        assert_eq!(tgt.at2(1, 0), w.targets().at2(0, 0));
    }

    proptest! {
        #[test]
        fn normalizer_round_trips(
            lo in -1e4f64..1e4,
            span in 1e-3f64..1e4,
            x in -1e5f64..1e5,
        ) {
            let n = Normalizer::fit(&[lo, lo + span]).unwrap();
            let back = n.invert(n.apply(x));
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        }

        #[test]
        fn window_count_formula(n in 15usize..200) {
            let values: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let w = make_windows(&values, LOOKBACK, HORIZON).unwrap();
            prop_assert_eq!(w.len(), n - LOOKBACK - HORIZON + 1);
        }
    }
}
