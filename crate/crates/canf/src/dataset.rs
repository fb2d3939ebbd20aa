//! Hourly-load ingestion, week-randomized train/test splitting,
//! rolling-window extraction, standardization, and a seeded synthetic load
//! generator.
//!
//! Splitting happens at whole-week (168-hour) granularity anchored at the
//! series start, and every window remembers the absolute hour it begins at,
//! so leakage between train and test windows is checkable after the fact.

use std::path::Path;

use chrono::{NaiveDateTime, TimeDelta};
use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::shuffled_indices;
use crate::seeding;

/// Hours per split week.
pub const WEEK_HOURS: usize = 168;

/// A contiguous hourly load series with its origin metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadSeries {
    /// Hourly consumption values (kWh), finite and non-negative.
    pub values: Vec<f64>,
    /// ISO-8601 timestamp of the first value.
    pub start: String,
    /// Free-form location label.
    pub location: String,
}

/// A contiguous slice of the series, tagged with its offset so downstream
/// windows can prove they never straddle a train/test boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Hour index of the first value within the original series.
    pub start_hour: usize,
    pub values: Vec<f64>,
}

/// Rolling windows y[t−L ..= t+K] plus the provenance and standardization
/// metadata carried alongside them.
#[derive(Debug, Clone)]
pub struct SequenceDataset {
    /// n×(L+1+K) window matrix.
    pub windows: Array2<f64>,
    pub l: usize,
    pub k: usize,
    /// Absolute hour index of each window's first element.
    pub starts: Vec<usize>,
    /// (mean, std) that produced this dataset, if it was standardized.
    pub stats: Option<(f64, f64)>,
}

impl LoadSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Write the series as a two-column hourly CSV with a header row.
    pub fn to_csv(
        &self,
        path: &Path,
        timestamp_column: &str,
        value_column: &str,
    ) -> Result<()> {
        let start = parse_timestamp(&self.start).ok_or_else(|| Error::ParseError {
            row: 0,
            message: format!("series start '{}' is not an ISO-8601 timestamp", self.start),
        })?;
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record([timestamp_column, value_column])?;
        for (i, v) in self.values.iter().enumerate() {
            let ts = start + TimeDelta::hours(i as i64);
            writer.write_record([
                ts.format("%Y-%m-%dT%H:%M:%S").to_string(),
                format!("{v}"),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(ts) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(ts);
        }
    }
    None
}

/// Read an hourly load CSV with a header row. Rows must be consecutive
/// hours; gaps, negative loads, and malformed cells are rejected with the
/// 1-based data-row number.
pub fn load_csv(path: &Path, timestamp_column: &str, value_column: &str) -> Result<LoadSeries> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let ts_idx = headers
        .iter()
        .position(|h| h == timestamp_column)
        .ok_or_else(|| Error::ParseError {
            row: 0,
            message: format!("missing column '{timestamp_column}'"),
        })?;
    let val_idx = headers
        .iter()
        .position(|h| h == value_column)
        .ok_or_else(|| Error::ParseError {
            row: 0,
            message: format!("missing column '{value_column}'"),
        })?;

    let mut values = Vec::new();
    let mut start = String::new();
    let mut prev: Option<NaiveDateTime> = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let ts_str = record.get(ts_idx).ok_or_else(|| Error::ParseError {
            row,
            message: "missing timestamp field".into(),
        })?;
        let ts = parse_timestamp(ts_str).ok_or_else(|| Error::ParseError {
            row,
            message: format!("unparseable timestamp '{ts_str}'"),
        })?;
        if let Some(prev) = prev {
            if ts - prev != TimeDelta::hours(1) {
                return Err(Error::NonHourlyCadence {
                    timestamp: ts_str.to_string(),
                });
            }
        } else {
            start = ts_str.to_string();
        }
        prev = Some(ts);

        let val_str = record.get(val_idx).ok_or_else(|| Error::ParseError {
            row,
            message: "missing load field".into(),
        })?;
        let value: f64 = val_str.trim().parse().map_err(|_| Error::ParseError {
            row,
            message: format!("unparseable load '{val_str}'"),
        })?;
        if !value.is_finite() {
            return Err(Error::ParseError {
                row,
                message: "non-finite load".into(),
            });
        }
        if value < 0.0 {
            return Err(Error::NegativeLoad { row });
        }
        values.push(value);
    }
    Ok(LoadSeries {
        values,
        start,
        location: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    })
}

/// Partition the series into 168-hour weeks anchored at the start and assign
/// ⌈fraction·weeks⌉ whole weeks to the test side uniformly at random; hours
/// past the last whole week stay with that week's side. Consecutive
/// same-side weeks merge into one contiguous segment, so the union of all
/// returned segments reconstructs the series exactly.
pub fn week_split(
    series: &LoadSeries,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<Segment>, Vec<Segment>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test fraction must lie strictly between 0 and 1, got {test_fraction}"
        )));
    }
    let hours = series.len();
    let weeks = hours / WEEK_HOURS;
    if weeks < 8 {
        return Err(Error::TooShort {
            hours,
            min_hours: 8 * WEEK_HOURS,
        });
    }
    let n_test = (test_fraction * weeks as f64).ceil() as usize;
    let mut rng = seeding::rng(seed);
    let order = shuffled_indices(weeks, &mut rng);
    let mut is_test = vec![false; weeks];
    for &w in order.iter().take(n_test) {
        is_test[w] = true;
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut w = 0;
    while w < weeks {
        let side = is_test[w];
        let start_week = w;
        while w < weeks && is_test[w] == side {
            w += 1;
        }
        let start_hour = start_week * WEEK_HOURS;
        // The ragged tail (if any) rides along with the final week.
        let end_hour = if w == weeks { hours } else { w * WEEK_HOURS };
        let segment = Segment {
            start_hour,
            values: series.values[start_hour..end_hour].to_vec(),
        };
        if side {
            test.push(segment);
        } else {
            train.push(segment);
        }
    }
    Ok((train, test))
}

/// Extract every `stride`-spaced window of length L+1+K inside each segment.
/// Windows never cross segment boundaries. Segments shorter than one window
/// are skipped with a warning; it is an error only if nothing remains.
pub fn rolling_windows(
    segments: &[Segment],
    l: usize,
    k: usize,
    stride: usize,
) -> Result<SequenceDataset> {
    let width = l + 1 + k;
    let stride = stride.max(1);
    let mut rows: Vec<f64> = Vec::new();
    let mut starts = Vec::new();
    for seg in segments {
        if seg.values.len() < width {
            log::warn!(
                "segment at hour {} has {} values, shorter than one {width}-hour window; skipped",
                seg.start_hour,
                seg.values.len()
            );
            continue;
        }
        let mut offset = 0;
        while offset + width <= seg.values.len() {
            rows.extend_from_slice(&seg.values[offset..offset + width]);
            starts.push(seg.start_hour + offset);
            offset += stride;
        }
    }
    if starts.is_empty() {
        return Err(Error::SegmentTooShort);
    }
    let windows = Array2::from_shape_vec((starts.len(), width), rows).expect("consistent shape");
    Ok(SequenceDataset {
        windows,
        l,
        k,
        starts,
        stats: None,
    })
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.windows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.l + 1 + self.k
    }

    /// The observed block y[t−L ..= t] of every window.
    pub fn observed(&self) -> ArrayView2<'_, f64> {
        self.windows.slice(s![.., ..self.l + 1])
    }

    /// The future block y[t+1 ..= t+K] of every window.
    pub fn future(&self) -> ArrayView2<'_, f64> {
        self.windows.slice(s![.., self.l + 1..])
    }

    /// Pooled scalar (mean, population std) over every entry.
    pub fn pooled_stats(&self) -> Result<(f64, f64)> {
        let n = self.windows.len() as f64;
        if n == 0.0 {
            return Err(Error::EmptyData { min: 1, got: 0 });
        }
        let mean = self.windows.sum() / n;
        let var = self.windows.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std.is_nan() || std <= 0.0 {
            return Err(Error::ZeroVariance);
        }
        Ok((mean, std))
    }

    /// Apply (x − mean)/std with the given stats, or stats pooled from this
    /// dataset when none are supplied (train-set stats are then reused for
    /// the test set so nothing leaks). The stats used are recorded on the
    /// result.
    pub fn standardize(&self, stats: Option<(f64, f64)>) -> Result<SequenceDataset> {
        let (mean, std) = match stats {
            Some((m, s)) => {
                if s.is_nan() || s <= 0.0 {
                    return Err(Error::ZeroVariance);
                }
                (m, s)
            }
            None => self.pooled_stats()?,
        };
        Ok(SequenceDataset {
            windows: self.windows.mapv(|v| (v - mean) / std),
            l: self.l,
            k: self.k,
            starts: self.starts.clone(),
            stats: Some((mean, std)),
        })
    }

    /// Exact inverse of [`standardize`](Self::standardize); identity if the
    /// dataset was never standardized.
    pub fn destandardize(&self) -> SequenceDataset {
        match self.stats {
            None => self.clone(),
            Some((mean, std)) => SequenceDataset {
                windows: self.windows.mapv(|v| v * std + mean),
                l: self.l,
                k: self.k,
                starts: self.starts.clone(),
                stats: None,
            },
        }
    }

    /// Split off the chronologically last `fraction` of windows as a
    /// validation set (ties to provenance order, so validation windows come
    /// from the latest training hours).
    pub fn train_val_split(&self, val_fraction: f64) -> Result<(SequenceDataset, SequenceDataset)> {
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "validation fraction must lie strictly between 0 and 1, got {val_fraction}"
            )));
        }
        let n = self.len();
        let n_val = ((n as f64) * val_fraction).ceil() as usize;
        let n_val = n_val.clamp(1, n.saturating_sub(1).max(1));
        let split = n - n_val;
        if split == 0 {
            return Err(Error::EmptyData { min: 2, got: n });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| self.starts[i]);
        let take = |idx: &[usize]| SequenceDataset {
            windows: crate::neural::select_rows(self.windows.view(), idx),
            l: self.l,
            k: self.k,
            starts: idx.iter().map(|&i| self.starts[i]).collect(),
            stats: self.stats,
        };
        Ok((take(&order[..split]), take(&order[split..])))
    }
}

/// Shape of the synthetic load profile. Defaults give a plausible
/// residential-feeder look: a skewed double-peak daily cycle whose amplitude
/// drops on weekends, a gentle weekly swell, and persistent AR(1) noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthProfile {
    /// Constant demand floor component (kWh).
    pub base: f64,
    /// Amplitude of the primary daily sinusoid.
    pub daily_amp: f64,
    /// Relative amplitude of the second daily harmonic (morning shoulder).
    pub second_harmonic: f64,
    /// Multiplier applied to the daily cycle on Saturday/Sunday.
    pub weekend_scale: f64,
    /// Amplitude of the smooth weekly sinusoid.
    pub weekly_amp: f64,
    /// AR(1) coefficient of the noise process.
    pub ar_coeff: f64,
    /// Standard deviation of the AR(1) innovations.
    pub noise_std: f64,
    /// Hard positivity floor (kWh).
    pub floor: f64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            base: 3.0,
            daily_amp: 1.0,
            second_harmonic: 0.35,
            weekend_scale: 0.85,
            weekly_amp: 0.45,
            ar_coeff: 0.8,
            noise_std: 0.28,
            floor: 0.05,
        }
    }
}

/// Generate a synthetic hourly load series of the given number of weeks,
/// deterministic per seed. The series starts on a Monday at midnight so the
/// weekday/weekend regime is aligned with the timestamps.
pub fn synth_load(weeks: usize, profile: &SynthProfile, seed: u64) -> LoadSeries {
    let hours = weeks * WEEK_HOURS;
    let mut rng = seeding::rng(seed);
    let mut values = Vec::with_capacity(hours);
    let mut noise = 0.0f64;
    let two_pi = std::f64::consts::TAU;
    for t in 0..hours {
        let hour = (t % 24) as f64;
        let day = (t / 24) % 7;
        let weekend = day >= 5;
        // Evening peak around 18:00 plus a morning shoulder.
        let shape = (two_pi * (hour - 12.0) / 24.0).sin()
            + profile.second_harmonic * (two_pi * (2.0 * hour) / 24.0 + 1.0).sin();
        let amp = profile.daily_amp * if weekend { profile.weekend_scale } else { 1.0 };
        let weekly = profile.weekly_amp * (two_pi * t as f64 / WEEK_HOURS as f64).sin();
        noise = profile.ar_coeff * noise
            + profile.noise_std * rng.sample::<f64, _>(StandardNormal);
        let load = profile.base + amp * shape + weekly + noise;
        values.push(load.max(profile.floor));
    }
    LoadSeries {
        values,
        // 2021-01-04 is a Monday.
        start: "2021-01-04T00:00:00".to_string(),
        location: "synthetic".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    fn series_of(hours: usize) -> LoadSeries {
        LoadSeries {
            values: (0..hours).map(|i| i as f64).collect(),
            start: "2021-01-04T00:00:00".into(),
            location: "test".into(),
        }
    }

    #[test]
    fn load_csv_reads_well_formed_file() {
        let f = write_temp_csv(
            "timestamp,load_kwh\n\
             2021-01-04T00:00:00,1.5\n\
             2021-01-04T01:00:00,2.0\n\
             2021-01-04T02:00:00,1.75\n",
        );
        let s = load_csv(f.path(), "timestamp", "load_kwh").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.start, "2021-01-04T00:00:00");
        assert_eq!(s.values, vec![1.5, 2.0, 1.75]);
    }

    #[test]
    fn load_csv_rejects_gap() {
        let f = write_temp_csv(
            "timestamp,load_kwh\n\
             2021-01-04T00:00:00,1.0\n\
             2021-01-04T02:00:00,2.0\n",
        );
        match load_csv(f.path(), "timestamp", "load_kwh") {
            Err(Error::NonHourlyCadence { timestamp }) => {
                assert_eq!(timestamp, "2021-01-04T02:00:00");
            }
            other => panic!("expected NonHourlyCadence, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_rejects_negative_and_garbage() {
        let f = write_temp_csv(
            "timestamp,load_kwh\n\
             2021-01-04T00:00:00,1.0\n\
             2021-01-04T01:00:00,-0.5\n",
        );
        assert!(matches!(
            load_csv(f.path(), "timestamp", "load_kwh"),
            Err(Error::NegativeLoad { row: 2 })
        ));
        let g = write_temp_csv(
            "timestamp,load_kwh\n\
             2021-01-04T00:00:00,abc\n",
        );
        assert!(matches!(
            load_csv(g.path(), "timestamp", "load_kwh"),
            Err(Error::ParseError { row: 1, .. })
        ));
        let h = write_temp_csv("time,load\n2021-01-04T00:00:00,1.0\n");
        assert!(matches!(
            load_csv(h.path(), "timestamp", "load_kwh"),
            Err(Error::ParseError { row: 0, .. })
        ));
    }

    #[test]
    fn csv_round_trip_preserves_year_of_data() {
        let series = synth_load(52, &SynthProfile::default(), 42);
        assert_eq!(series.len(), 8736);
        let f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        series.to_csv(f.path(), "timestamp", "load_kwh").unwrap();
        let back = load_csv(f.path(), "timestamp", "load_kwh").unwrap();
        assert_eq!(back.len(), series.len());
        assert_eq!(back.start, series.start);
        for (a, b) in series.values.iter().zip(&back.values) {
            assert_eq!(a, b, "values must survive the text round trip");
        }
    }

    #[test]
    fn week_split_honors_ceiling_fraction() {
        let series = series_of(8 * WEEK_HOURS);
        let (train, test) = week_split(&series, 0.25, 7).unwrap();
        let train_hours: usize = train.iter().map(|s| s.values.len()).sum();
        let test_hours: usize = test.iter().map(|s| s.values.len()).sum();
        assert_eq!(test_hours, 2 * WEEK_HOURS);
        assert_eq!(train_hours, 6 * WEEK_HOURS);
    }

    #[test]
    fn week_split_is_deterministic_and_partitions() {
        let series = series_of(10 * WEEK_HOURS + 13); // ragged tail
        let (train_a, test_a) = week_split(&series, 0.3, 5).unwrap();
        let (train_b, test_b) = week_split(&series, 0.3, 5).unwrap();
        assert_eq!(train_a, train_b);
        assert_eq!(test_a, test_b);

        // Reassemble by start hour: must reproduce the series exactly.
        let mut all: Vec<&Segment> = train_a.iter().chain(test_a.iter()).collect();
        all.sort_by_key(|s| s.start_hour);
        let mut rebuilt = Vec::new();
        for seg in &all {
            assert_eq!(seg.start_hour, rebuilt.len(), "segments must abut");
            rebuilt.extend_from_slice(&seg.values);
        }
        assert_eq!(rebuilt, series.values);
    }

    #[test]
    fn week_split_rejects_short_series() {
        let series = series_of(7 * WEEK_HOURS);
        assert!(matches!(
            week_split(&series, 0.25, 0),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn rolling_windows_counts_and_boundaries() {
        let (l, k) = (3, 2);
        let width = l + 1 + k; // 6
        let one = vec![Segment {
            start_hour: 0,
            values: (0..width).map(|i| i as f64).collect(),
        }];
        let ds = rolling_windows(&one, l, k, 1).unwrap();
        assert_eq!(ds.len(), 1);

        let longer = vec![Segment {
            start_hour: 10,
            values: (0..width + 5).map(|i| i as f64).collect(),
        }];
        let ds = rolling_windows(&longer, l, k, 1).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.starts, vec![10, 11, 12, 13, 14, 15]);

        let two = vec![
            Segment {
                start_hour: 0,
                values: (0..width + 2).map(|i| i as f64).collect(),
            },
            Segment {
                start_hour: 100,
                values: (0..width + 3).map(|i| i as f64).collect(),
            },
        ];
        let ds = rolling_windows(&two, l, k, 1).unwrap();
        assert_eq!(ds.len(), 3 + 4);

        // Stride-2 extraction halves the count.
        let ds = rolling_windows(&longer, l, k, 2).unwrap();
        assert_eq!(ds.starts, vec![10, 12, 14]);
    }

    #[test]
    fn rolling_windows_skips_short_segments() {
        let segs = vec![
            Segment {
                start_hour: 0,
                values: vec![1.0, 2.0],
            },
            Segment {
                start_hour: 50,
                values: (0..10).map(|i| i as f64).collect(),
            },
        ];
        let ds = rolling_windows(&segs, 3, 2, 1).unwrap();
        assert_eq!(ds.len(), 5);
        let all_short = vec![Segment {
            start_hour: 0,
            values: vec![1.0, 2.0],
        }];
        assert!(matches!(
            rolling_windows(&all_short, 3, 2, 1),
            Err(Error::SegmentTooShort)
        ));
    }

    #[test]
    fn standardize_round_trips_and_centers() {
        let series = synth_load(9, &SynthProfile::default(), 3);
        let (train, test) = week_split(&series, 0.25, 1).unwrap();
        let train_ds = rolling_windows(&train, 7, 12, 1).unwrap();
        let test_ds = rolling_windows(&test, 7, 12, 1).unwrap();

        let std_train = train_ds.standardize(None).unwrap();
        let (m, s) = std_train.stats.unwrap();
        let back = std_train.destandardize();
        for (a, b) in train_ds.windows.iter().zip(back.windows.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let (m2, s2) = std_train.pooled_stats().unwrap();
        assert!(m2.abs() < 1e-10, "self-standardized mean {m2}");
        assert!((s2 - 1.0).abs() < 1e-10, "self-standardized std {s2}");

        // Test data standardized with train stats keeps its own offset.
        let std_test = test_ds.standardize(Some((m, s))).unwrap();
        let (mt, _) = std_test.pooled_stats().unwrap();
        assert!(mt.abs() > 1e-6, "test mean unexpectedly centered: {mt}");
    }

    #[test]
    fn standardize_rejects_constant_data() {
        let segs = vec![Segment {
            start_hour: 0,
            values: vec![2.0; 20],
        }];
        let ds = rolling_windows(&segs, 2, 2, 1).unwrap();
        assert!(matches!(ds.standardize(None), Err(Error::ZeroVariance)));
    }

    #[test]
    fn train_and_test_windows_never_overlap() {
        let series = synth_load(12, &SynthProfile::default(), 9);
        let (train, test) = week_split(&series, 0.25, 4).unwrap();
        let (l, k) = (7, 12);
        let train_ds = rolling_windows(&train, l, k, 1).unwrap();
        let test_ds = rolling_windows(&test, l, k, 1).unwrap();
        let width = l + 1 + k;
        for &ts in &test_ds.starts {
            for &tr in &train_ds.starts {
                let disjoint = ts + width <= tr || tr + width <= ts;
                assert!(disjoint, "windows at {tr} and {ts} overlap");
            }
        }
    }

    #[test]
    fn train_val_split_takes_latest_windows() {
        let series = synth_load(10, &SynthProfile::default(), 2);
        let (train, _) = week_split(&series, 0.2, 3).unwrap();
        let ds = rolling_windows(&train, 7, 12, 1).unwrap();
        let (fit, val) = ds.train_val_split(0.2).unwrap();
        assert_eq!(fit.len() + val.len(), ds.len());
        let max_fit = fit.starts.iter().max().unwrap();
        let min_val = val.starts.iter().min().unwrap();
        assert!(min_val > max_fit, "validation windows must be the latest");
    }

    #[test]
    fn synth_noiseless_daily_profile_has_period_24() {
        let profile = SynthProfile {
            noise_std: 0.0,
            weekly_amp: 0.0,
            weekend_scale: 1.0,
            ..SynthProfile::default()
        };
        let s = synth_load(9, &profile, 0);
        for t in 0..s.len() - 24 {
            assert_eq!(s.values[t], s.values[t + 24], "period broken at {t}");
        }
    }

    #[test]
    fn synth_is_deterministic_and_positive() {
        let p = SynthProfile::default();
        let a = synth_load(52, &p, 11);
        let b = synth_load(52, &p, 11);
        assert_eq!(a.values, b.values);
        let c = synth_load(52, &p, 12);
        assert_ne!(a.values, c.values);
        assert!(a.values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn synth_daily_autocorrelation_is_strong() {
        let s = synth_load(52, &SynthProfile::default(), 19);
        let n = s.len();
        let mean = s.values.iter().sum::<f64>() / n as f64;
        let var: f64 = s.values.iter().map(|v| (v - mean).powi(2)).sum();
        let lag = 24;
        let cov: f64 = (0..n - lag)
            .map(|t| (s.values[t] - mean) * (s.values[t + lag] - mean))
            .sum();
        let acf = cov / var;
        assert!(acf > 0.5, "lag-24 autocorrelation {acf}");
    }

    #[test]
    fn synth_weekend_amplitude_is_damped() {
        // Zero the noise and the weekly drift so the only difference between
        // days is the weekend damping factor.
        let profile = SynthProfile {
            noise_std: 0.0,
            weekly_amp: 0.0,
            ..SynthProfile::default()
        };
        let s = synth_load(4, &profile, 0);
        let day_range = |d: usize| {
            let day = &s.values[d * 24..(d + 1) * 24];
            day.iter().cloned().fold(f64::MIN, f64::max)
                - day.iter().cloned().fold(f64::MAX, f64::min)
        };
        // Day 0 is a Monday; day 5 a Saturday.
        let scale = profile.weekend_scale;
        assert!(day_range(5) < (scale + 0.05) * day_range(0));
        assert!(day_range(6) < (scale + 0.05) * day_range(1));
        assert!(day_range(5) > (scale - 0.05) * day_range(0));
    }
}
