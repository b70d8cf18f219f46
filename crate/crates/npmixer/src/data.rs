//! Dataset ingestion and windowing: CSV loading with row-addressed errors,
//! chronological splits, train-statistics standardization, and sliding
//! lookback/horizon windows.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Channel-major series: `values[c * len + t]`.
pub struct Dataset {
    pub channel_names: Vec<String>,
    pub values: Vec<Real>,
    pub len: usize,
}

impl Dataset {
    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn channel(&self, c: usize) -> &[Real] {
        &self.values[c * self.len..(c + 1) * self.len]
    }
}

/// Loads a CSV whose first column is a timestamp (ignored) and whose
/// remaining columns are numeric channels. Errors carry 1-based file row
/// numbers.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::ingest(None, format!("cannot read dataset {}: {e}", path.display()))
    })?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::ingest(Some(1), "empty file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 {
        return Err(Error::ingest(
            Some(1),
            "header must have a timestamp column plus at least one channel",
        ));
    }
    let channel_names: Vec<String> = cols[1..].iter().map(|s| s.trim().to_string()).collect();
    let channels = channel_names.len();
    // column-major fill: parse row-major, transpose at the end
    let mut rows: Vec<Real> = Vec::new();
    let mut len = 0usize;
    for (idx, line) in lines {
        let row_no = idx + 1; // 1-based
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        fields.next(); // timestamp
        let mut count = 0;
        for f in fields {
            let v: Real = f.trim().parse().map_err(|_| {
                Error::ingest(Some(row_no), format!("cannot parse '{}' as a number", f.trim()))
            })?;
            if !v.is_finite() {
                return Err(Error::ingest(Some(row_no), "non-finite value"));
            }
            rows.push(v);
            count += 1;
        }
        if count != channels {
            return Err(Error::ingest(
                Some(row_no),
                format!("expected {channels} channel values, found {count}"),
            ));
        }
        len += 1;
    }
    if len == 0 {
        return Err(Error::ingest(Some(1), "no data rows"));
    }
    let mut values = vec![0.0; channels * len];
    for t in 0..len {
        for c in 0..channels {
            values[c * len + t] = rows[t * channels + c];
        }
    }
    Ok(Dataset { channel_names, values, len })
}

/// Per-channel standardization statistics computed on the training region.
#[derive(Clone, Debug)]
pub struct Standardizer {
    pub mean: Vec<Real>,
    pub std: Vec<Real>,
}

pub struct Splits {
    pub train: Vec<Real>,
    pub val: Vec<Real>,
    pub test: Vec<Real>,
    pub train_len: usize,
    pub val_len: usize,
    pub test_len: usize,
    pub channels: usize,
    pub stats: Standardizer,
}

impl Splits {
    pub fn split(&self, name: &str) -> Result<(&[Real], usize)> {
        match name {
            "train" => Ok((&self.train, self.train_len)),
            "val" => Ok((&self.val, self.val_len)),
            "test" => Ok((&self.test, self.test_len)),
            _ => Err(Error::config(format!("unknown split '{name}'"))),
        }
    }
}

/// Chronological split into `(train_len, val_len, test_len)` steps, then
/// standardization of all three with the training mean/std (eps-floored).
pub fn split_and_standardize(
    ds: &Dataset,
    train_len: usize,
    val_len: usize,
    test_len: usize,
) -> Result<Splits> {
    if train_len + val_len + test_len > ds.len {
        return Err(Error::config(format!(
            "splits {train_len}+{val_len}+{test_len} exceed series length {}",
            ds.len
        )));
    }
    if train_len == 0 {
        return Err(Error::config("train split must be non-empty"));
    }
    let c = ds.channels();
    let mut mean = Vec::with_capacity(c);
    let mut std = Vec::with_capacity(c);
    for ch in 0..c {
        let train = &ds.channel(ch)[..train_len];
        let m = train.iter().sum::<Real>() / train_len as Real;
        let var = train.iter().map(|v| (v - m) * (v - m)).sum::<Real>() / train_len as Real;
        mean.push(m);
        std.push(var.sqrt().max(1e-8));
    }
    let take = |start: usize, n: usize| -> Vec<Real> {
        let mut out = Vec::with_capacity(c * n);
        for ch in 0..c {
            let s = ds.channel(ch);
            out.extend(
                s[start..start + n]
                    .iter()
                    .map(|v| (v - mean[ch]) / std[ch]),
            );
        }
        out
    };
    Ok(Splits {
        train: take(0, train_len),
        val: take(train_len, val_len),
        test: take(train_len + val_len, test_len),
        train_len,
        val_len,
        test_len,
        channels: c,
        stats: Standardizer { mean, std },
    })
}

/// Number of (lookback, horizon) windows in a split of `len` steps.
pub fn window_count(len: usize, lookback: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(lookback + horizon)
}

/// Copies window `w` of a channel-major split into `(x: [C,L], y: [C,H])`.
pub fn window(
    split: &[Real],
    split_len: usize,
    channels: usize,
    lookback: usize,
    horizon: usize,
    w: usize,
) -> (Vec<Real>, Vec<Real>) {
    debug_assert!(w < window_count(split_len, lookback, horizon));
    let mut x = Vec::with_capacity(channels * lookback);
    let mut y = Vec::with_capacity(channels * horizon);
    for c in 0..channels {
        let s = &split[c * split_len..(c + 1) * split_len];
        x.extend_from_slice(&s[w..w + lookback]);
        y.extend_from_slice(&s[w + lookback..w + lookback + horizon]);
    }
    (x, y)
}

/// Stacks the given window indices into batched `(x: [B,C,L], y: [B,C,H])`.
pub fn gather_batch(
    split: &[Real],
    split_len: usize,
    channels: usize,
    lookback: usize,
    horizon: usize,
    indices: &[usize],
) -> (Vec<Real>, Vec<Real>) {
    let mut xs = Vec::with_capacity(indices.len() * channels * lookback);
    let mut ys = Vec::with_capacity(indices.len() * channels * horizon);
    for &w in indices {
        let (x, y) = window(split, split_len, channels, lookback, horizon, w);
        xs.extend(x);
        ys.extend(y);
    }
    (xs, ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_and_transposes() {
        let f = write_csv("date,a,b\n2020-01-01,1,10\n2020-01-02,2,20\n2020-01-03,3,30\n");
        let ds = load_csv(f.path()).unwrap();
        assert_eq!(ds.channel_names, vec!["a", "b"]);
        assert_eq!(ds.len, 3);
        assert_eq!(ds.channel(0), &[1.0, 2.0, 3.0]);
        assert_eq!(ds.channel(1), &[10.0, 20.0, 30.0]);
    }

    #[test]
    fn bad_rows_are_numbered() {
        let f = write_csv("date,a\n2020-01-01,1\n2020-01-02,oops\n");
        match load_csv(f.path()).err() {
            Some(Error::Ingest { row: Some(3), .. }) => {}
            other => panic!("expected row-3 ingest error, got {other:?}"),
        }
        let f = write_csv("date,a,b\n2020-01-01,1\n");
        match load_csv(f.path()).err() {
            Some(Error::Ingest { row: Some(2), .. }) => {}
            other => panic!("expected row-2 ingest error, got {other:?}"),
        }
    }

    #[test]
    fn standardization_uses_train_stats_only() {
        // channel values 0..10; train = first 6
        let mut csv = String::from("date,a\n");
        for t in 0..10 {
            csv.push_str(&format!("t{t},{t}\n"));
        }
        let ds = load_csv(write_csv(&csv).path()).unwrap();
        let sp = split_and_standardize(&ds, 6, 2, 2).unwrap();
        let m = 2.5; // mean of 0..=5
        let sd = (35.0f64 / 12.0).sqrt(); // var of 0..=5 = 35/12
        assert!((sp.stats.mean[0] - m).abs() < 1e-12);
        assert!((sp.stats.std[0] - sd).abs() < 1e-12);
        // train split standardized to zero mean
        let tm: Real = sp.train.iter().sum::<Real>() / 6.0;
        assert!(tm.abs() < 1e-12);
        // val/test standardized with the SAME stats
        assert!((sp.val[0] - (6.0 - m) / sd).abs() < 1e-12);
        assert!((sp.test[0] - (8.0 - m) / sd).abs() < 1e-12);
    }

    #[test]
    fn window_extraction() {
        assert_eq!(window_count(10, 4, 3), 4);
        assert_eq!(window_count(6, 4, 3), 0);
        let mut csv = String::from("date,a,b\n");
        for t in 0..10 {
            csv.push_str(&format!("t{t},{t},{}\n", 100 + t));
        }
        let ds = load_csv(write_csv(&csv).path()).unwrap();
        // identity standardization region is irrelevant; use raw values via
        // a split equal to the full series with manual stats undone
        let sp = split_and_standardize(&ds, 10, 0, 0).unwrap();
        let (x, y) = window(&sp.train, 10, 2, 4, 3, 1);
        // channel 0 raw values 1..=4 then 5..=7, standardized
        let std0 = sp.stats.std[0];
        let m0 = sp.stats.mean[0];
        assert_eq!(x.len(), 8);
        assert_eq!(y.len(), 6);
        assert!((x[0] - (1.0 - m0) / std0).abs() < 1e-12);
        assert!((y[0] - (5.0 - m0) / std0).abs() < 1e-12);
        // batch stacking
        let (bx, _) = gather_batch(&sp.train, 10, 2, 4, 3, &[0, 1]);
        assert_eq!(bx.len(), 16);
        let (x0, _) = window(&sp.train, 10, 2, 4, 3, 0);
        assert_eq!(&bx[..8], &x0[..]);
    }

    #[test]
    fn etth1_matches_published_layout() {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../data/ETTh1.csv");
        if !path.exists() {
            return;
        }
        let ds = load_csv(&path).unwrap();
        assert_eq!(ds.channels(), 7);
        assert_eq!(ds.len, 17420);
        assert_eq!(ds.channel_names.last().map(String::as_str), Some("OT"));
    }
}
