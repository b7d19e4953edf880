//! CSV ingestion, normalization into `[-1, 1]^d` and synthetic data.

use std::path::Path;

use detfree_gp::Dataset64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Unnormalized scattered data, row-major `N x d` points.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub d: usize,
    pub points: Vec<f64>,
    pub y: Vec<f64>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    /// Random subset of `n` rows, in their original order.
    pub fn subsample(&self, n: usize, seed: u64) -> Self {
        if n >= self.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = index::sample(&mut rng, self.len(), n).into_vec();
        rows.sort_unstable();
        let mut points = Vec::with_capacity(n * self.d);
        for &r in &rows {
            points.extend_from_slice(self.point(r));
        }
        Self { d: self.d, points, y: rows.iter().map(|&r| self.y[r]).collect() }
    }
}

/// Rows skipped by a lenient load, with their 1-based line numbers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadReport {
    pub rows: usize,
    pub dropped: Vec<(usize, String)>,
}

/// Reads a CSV with columns `x1..xd` and `y` (any order, other columns
/// ignored). In strict mode any malformed row is an error; otherwise it
/// is dropped and reported.
pub fn load_csv(path: &Path, strict: bool) -> Result<(RawDataset, LoadReport)> {
    let parse_err = |line: usize, message: String| HarnessError::Parse { path: path.to_path_buf(), line, message };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => HarnessError::io(path, io),
            other => parse_err(1, format!("{other:?}")),
        })?;
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.is_empty() {
        return Err(parse_err(1, "empty file".into()));
    }
    let y_col = headers.iter().position(|h| h == "y").ok_or_else(|| parse_err(1, "missing `y` column".into()))?;
    let mut x_cols = Vec::new();
    for j in 1.. {
        match headers.iter().position(|h| h == format!("x{j}")) {
            Some(c) => x_cols.push(c),
            None => break,
        }
    }
    if x_cols.is_empty() {
        return Err(parse_err(1, "missing coordinate columns `x1..xd`".into()));
    }
    let d = x_cols.len();
    let mut raw = RawDataset { d, points: Vec::new(), y: Vec::new() };
    let mut report = LoadReport::default();
    for (k, rec) in reader.records().enumerate() {
        let line = k + 2;
        let row = rec.map_err(|e| parse_err(line, e.to_string())).and_then(|rec| {
            let cell = |c: usize| -> Result<f64> {
                let s = rec.get(c).ok_or_else(|| parse_err(line, format!("missing column {}", headers[c].to_string())))?;
                let v: f64 = s.parse().map_err(|_| parse_err(line, format!("`{s}` in column {} is not a number", &headers[c])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(line, format!("non-finite value in column {}", &headers[c])))
                }
            };
            let xs = x_cols.iter().map(|&c| cell(c)).collect::<Result<Vec<f64>>>()?;
            Ok((xs, cell(y_col)?))
        });
        match row {
            Ok((xs, y)) => {
                raw.points.extend(xs);
                raw.y.push(y);
            }
            Err(e) if !strict => {
                log::warn!("dropping malformed row: {e}");
                report.dropped.push((line, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    if raw.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    report.rows = raw.len();
    Ok((raw, report))
}

pub fn write_csv(path: &Path, data: &RawDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::io(path, e.into()))?;
    let mut header: Vec<String> = (1..=data.d).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    let io = |e: csv::Error| HarnessError::io(path, e.into());
    w.write_record(&header).map_err(io)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.point(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.y[i].to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// `x_norm = (x − center) / half_width` per axis and `y_norm = y − y_mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub center: Vec<f64>,
    pub half_width: Vec<f64>,
    pub y_mean: f64,
}

impl AffineTransform {
    pub fn identity(d: usize) -> Self {
        Self { center: vec![0.0; d], half_width: vec![1.0; d], y_mean: 0.0 }
    }

    pub fn forward_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.center).zip(&self.half_width).map(|((&v, &c), &h)| ((v - c) / h).clamp(-1.0, 1.0)).collect()
    }

    pub fn inverse_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.center).zip(&self.half_width).map(|((&v, &c), &h)| v * h + c).collect()
    }

    pub fn forward_y(&self, y: f64) -> f64 {
        y - self.y_mean
    }

    pub fn inverse_y(&self, y: f64) -> f64 {
        y + self.y_mean
    }

    /// Standard deviations and variances are unchanged by a shift.
    pub fn inverse_std(&self, s: f64) -> f64 {
        s
    }
}

/// Maps the bounding box onto `[-1, 1]^d` and de-means the observations.
/// Data already inside the cube with zero mean is left untouched.
pub fn normalize(raw: &RawDataset) -> Result<(Dataset64, AffineTransform)> {
    if raw.is_empty() {
        return Err(HarnessError::Config("cannot normalize an empty dataset".into()));
    }
    let n = raw.len();
    let mut lo = vec![f64::INFINITY; raw.d];
    let mut hi = vec![f64::NEG_INFINITY; raw.d];
    for i in 0..n {
        for (j, &v) in raw.point(i).iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let y_mean = raw.y.iter().sum::<f64>() / n as f64;
    let inside = lo.iter().all(|&l| l >= -1.0) && hi.iter().all(|&h| h <= 1.0);
    let mut tf = if inside {
        AffineTransform::identity(raw.d)
    } else {
        if let Some(j) = (0..raw.d).find(|&j| !(hi[j] > lo[j])) {
            return Err(HarnessError::Config(format!("coordinate x{} has zero range", j + 1)));
        }
        AffineTransform {
            center: lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            half_width: lo.iter().zip(&hi).map(|(l, h)| 0.5 * (h - l)).collect(),
            y_mean: 0.0,
        }
    };
    if y_mean.abs() > 0.0 {
        tf.y_mean = y_mean;
    }
    let mut points = Vec::with_capacity(raw.points.len());
    for i in 0..n {
        points.extend(tf.forward_point(raw.point(i)));
    }
    let y = raw.y.iter().map(|&v| tf.forward_y(v)).collect();
    Ok((Dataset64::new(raw.d, points, y)?, tf))
}

/// `N` uniform points in `[-1, 1]^d` with `y_i = Π_j cos(x_i^j) + η ε_i`.
pub fn synth_dataset(d: usize, n: usize, eta: f64, seed: u64) -> Result<Dataset64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let y = points
        .chunks_exact(d)
        .map(|p| {
            let noise: f64 = rng.sample(StandardNormal);
            p.iter().map(|v| v.cos()).product::<f64>() + eta * noise
        })
        .collect();
    Ok(Dataset64::new(d, points, y)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    }

    #[test]
    fn well_formed_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "x1,x2,y\n0,1,2\n3,4,5\n6,7,8\n");
        let (raw, rep) = load_csv(&p, true).unwrap();
        assert_eq!(raw.len(), 3);
        assert_eq!(raw.d, 2);
        assert_eq!(raw.point(1), &[3.0, 4.0]);
        assert_eq!(rep.rows, 3);
        assert!(rep.dropped.is_empty());
    }

    #[test]
    fn malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "b.csv", "y,x1\n1,0.5\nfoo,0.1\n2,0.25\n");
        let (raw, rep) = load_csv(&p, false).unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(rep.dropped.len(), 1);
        assert_eq!(rep.dropped[0].0, 3);
        match load_csv(&p, true).unwrap_err() {
            HarnessError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_columns_and_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_csv(&write(&dir, "c.csv", "x1,z\n1,2\n"), true).is_err());
        assert!(load_csv(&write(&dir, "d.csv", "y,z\n1,2\n"), true).is_err());
        assert!(load_csv(&write(&dir, "e.csv", ""), true).is_err());
        assert!(load_csv(&write(&dir, "f.csv", "x1,y\n"), true).is_err());
        let e = load_csv(&dir.path().join("missing.csv"), true).unwrap_err();
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let raw = RawDataset { d: 2, points: vec![0.1, 1.0 / 3.0, -2.5e-9, 7e200], y: vec![std::f64::consts::E, -0.0] };
        let p = dir.path().join("rt.csv");
        write_csv(&p, &raw).unwrap();
        let (back, _) = load_csv(&p, true).unwrap();
        assert_eq!(back, raw);
    }

    #[test]
    fn normalization() {
        let raw = RawDataset { d: 1, points: vec![-1.0, 0.0, 1.0], y: vec![-1.0, 0.0, 1.0] };
        let (_, tf) = normalize(&raw).unwrap();
        assert_eq!(tf, AffineTransform::identity(1));

        let raw = RawDataset { d: 1, points: vec![0.0, 5.0, 10.0], y: vec![1.0, 2.0, 6.0] };
        let (ds, tf) = normalize(&raw).unwrap();
        assert_eq!(ds.points(), &[-1.0, 0.0, 1.0]);
        assert_eq!(tf.y_mean, 3.0);
        for &x in &[0.0, 2.5, 7.0, 10.0] {
            assert!((tf.inverse_point(&tf.forward_point(&[x]))[0] - x).abs() < 1e-14);
        }
        assert!((tf.inverse_y(ds.observations()[2]) - 6.0).abs() < 1e-14);

        let flat = RawDataset { d: 2, points: vec![0.0, 3.0, 1.0, 3.0], y: vec![0.0, 0.0] };
        assert!(normalize(&flat).is_err());
    }

    #[test]
    fn synthetic_data() {
        let a = synth_dataset(2, 50, 0.0, 3).unwrap();
        for i in 0..50 {
            let p = a.point(i);
            assert_eq!(a.observations()[i], p[0].cos() * p[1].cos());
        }
        assert_eq!(synth_dataset(2, 50, 0.1, 9).unwrap(), synth_dataset(2, 50, 0.1, 9).unwrap());
        let b = synth_dataset(1, 100_000, 0.1, 4).unwrap();
        let r: Vec<f64> = (0..b.len()).map(|i| b.observations()[i] - b.point(i)[0].cos()).collect();
        let m = r.iter().sum::<f64>() / r.len() as f64;
        let v = r.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / (r.len() - 1) as f64;
        assert!((v - 0.01).abs() < 0.0005, "{v}");
    }

    #[test]
    fn subsampling() {
        let raw = RawDataset { d: 1, points: (0..100).map(f64::from).collect(), y: (0..100).map(f64::from).collect() };
        let s = raw.subsample(10, 1);
        assert_eq!(s.len(), 10);
        assert!(s.y.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s, raw.subsample(10, 1));
        assert_eq!(raw.subsample(200, 1), raw);
    }

    proptest::proptest! {
        #[test]
        fn normalization_lands_in_cube_and_inverts(
            pts in proptest::collection::vec(-50.0f64..50.0, 4..40),
            y in proptest::collection::vec(-5.0f64..5.0, 20),
        ) {
            let n = (pts.len() / 2).min(y.len());
            let raw = RawDataset { d: 2, points: pts[..2 * n].to_vec(), y: y[..n].to_vec() };
            let Ok((data, tf)) = normalize(&raw) else { return Ok(()) };
            proptest::prop_assert!(data.points().iter().all(|v| (-1.0..=1.0).contains(v)));
            let mean = data.observations().iter().sum::<f64>() / n as f64;
            proptest::prop_assert!(mean.abs() < 1e-9);
            for i in 0..n {
                let back = tf.inverse_point(data.point(i));
                for (a, b) in back.iter().zip(raw.point(i)) {
                    proptest::prop_assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
                }
                proptest::prop_assert!((tf.inverse_y(data.observations()[i]) - raw.y[i]).abs() < 1e-12);
            }
        }
    }
}
