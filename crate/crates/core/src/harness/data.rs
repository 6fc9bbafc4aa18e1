//! Datasets: synthetic generators, IDX and CSV files, splits and outliers.

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Normal};

use crate::autodiff::Tensor;
use crate::distributions::CoupledGaussian;
use crate::error::{Error, Result};

/// `n` rows of `d` values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl Dataset {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::Shape(format!("{n} rows of {d} need {} values, got {}", n * d, data.len())));
        }
        Ok(Self { n, d, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset { n: idx.len(), d: self.d, data: idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect() }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.n, self.d, self.data.clone()).expect("sizes agree")
    }
}

/// `k` component means drawn uniformly from `[0.2, 0.8]^d`.
pub fn mixture_means<R: Rng + ?Sized>(k: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..k).map(|_| (0..d).map(|_| rng.random_range(0.2..0.8)).collect()).collect()
}

/// Equal-weight isotropic Gaussian mixture, clipped to `[0, 1]`. Returns the
/// data and the component of each row.
pub fn generate_mixture<R: Rng + ?Sized>(
    means: &[Vec<f64>],
    spread: f64,
    n: usize,
    rng: &mut R,
) -> Result<(Dataset, Vec<usize>)> {
    if means.is_empty() || n == 0 {
        return Err(Error::Config("mixture needs at least one component and one row".into()));
    }
    let d = means[0].len();
    let noise = Normal::new(0.0, spread).map_err(|e| Error::Config(format!("mixture_spread: {e}")))?;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..means.len());
        labels.push(c);
        data.extend(means[c].iter().map(|m| (m + noise.sample(rng)).clamp(0.0, 1.0)));
    }
    Ok((Dataset::new(n, d, data)?, labels))
}

/// Coupled-Gaussian samples squashed into `(0, 1)` by a sigmoid.
pub fn generate_heavytail<R: Rng + ?Sized>(n: usize, d: usize, kappa: f64, rng: &mut R) -> Result<Dataset> {
    let g = CoupledGaussian::standard(d, kappa)?;
    let mut data = vec![0.0; n * d];
    for row in data.chunks_mut(d) {
        g.sample_into(rng, row);
        for v in row.iter_mut() {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
    }
    Dataset::new(n, d, data)
}

const IDX_MAGIC: u32 = 0x0000_0803;

/// Unsigned-byte image tensor, scaled by `1/255`, one flattened image per row.
pub fn read_idx(bytes: &[u8]) -> Result<Dataset> {
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("four bytes")))
            .ok_or_else(|| Error::Format("IDX header truncated".into()))
    };
    let magic = word(0)?;
    if magic != IDX_MAGIC {
        return Err(Error::Format(format!("IDX magic {magic:#010x}, expected {IDX_MAGIC:#010x}")));
    }
    let (count, rows, cols) = (word(1)? as usize, word(2)? as usize, word(3)? as usize);
    let d = rows.checked_mul(cols).ok_or_else(|| Error::Format("IDX image size overflows".into()))?;
    let total = count.checked_mul(d).ok_or_else(|| Error::Format("IDX payload size overflows".into()))?;
    let payload = &bytes[16..];
    if payload.len() < total {
        return Err(Error::Format(format!("IDX payload truncated: {} of {total} bytes", payload.len())));
    }
    if payload.len() > total {
        return Err(Error::Format(format!("{} trailing bytes after IDX payload", payload.len() - total)));
    }
    Dataset::new(count, d, payload.iter().map(|&b| b as f64 / 255.0).collect())
}

/// Writes images of `rows × cols` pixels; values are scaled by 255 and rounded.
pub fn write_idx(ds: &Dataset, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if rows * cols != ds.d {
        return Err(Error::Shape(format!("{rows}x{cols} images need {} values per row, have {}", rows * cols, ds.d)));
    }
    let mut out = Vec::with_capacity(16 + ds.data.len());
    for w in [IDX_MAGIC, ds.n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    out.extend(ds.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn load_idx_images(path: &Path) -> Result<Dataset> {
    read_idx(&std::fs::read(path)?)
}

/// CSV with a header row and one vector per line.
pub fn read_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let d = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.len();
    let mut data = Vec::new();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        for f in rec.iter() {
            data.push(f.trim().parse::<f64>().map_err(|_| Error::Format(format!("row {}: '{f}' is not a number", n + 1)))?);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Format(format!("{} has no data rows", path.display())));
    }
    Dataset::new(n, d, data)
}

pub fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    w.write_record(header).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Replaces `round(fraction·n)` seeded-random rows by `row + scale·Cauchy`
/// noise clipped to `[0, 1]`. Returns the corruption mask.
pub fn inject_outliers<R: Rng + ?Sized>(ds: &mut Dataset, fraction: f64, scale: f64, rng: &mut R) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("outlier fraction {fraction} outside [0, 1]")));
    }
    let count = (fraction * ds.n as f64).round() as usize;
    let mut mask = vec![false; ds.n];
    let noise = Cauchy::new(0.0, 1.0).expect("unit scale");
    let mut chosen = sample_indices(rng, ds.n, count).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        mask[i] = true;
        for v in &mut ds.data[i * ds.d..(i + 1) * ds.d] {
            let e: f64 = noise.sample(rng);
            *v = (*v + scale * e).clamp(0.0, 1.0);
        }
    }
    Ok(mask)
}

/// Train/validation/test indices from a seeded permutation of `0..n`.
pub fn split_indices(n: usize, fractions: [f64; 3], seed: u64) -> [Vec<usize>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 << 21);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let n_train = (fractions[0] * n as f64).floor() as usize;
    let n_val = ((fractions[1] * n as f64).floor() as usize).min(n - n_train);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    [idx, val, test]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tight_single_component_collapses_to_mean() {
        let means = vec![vec![0.3, 0.6, 0.9]];
        let (ds, _) = generate_mixture(&means, 1e-9, 50, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for i in 0..ds.n {
            for (a, b) in ds.row(i).iter().zip(&means[0]) {
                assert!((a - b).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn mixture_means_are_recovered() {
        let means = vec![vec![0.25; 16], vec![0.75; 16]];
        let (ds, labels) = generate_mixture(&means, 0.05, 1000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for c in 0..2 {
            let rows: Vec<usize> = (0..ds.n).filter(|&i| labels[i] == c).collect();
            for j in 0..16 {
                let m = rows.iter().map(|&i| ds.row(i)[j]).sum::<f64>() / rows.len() as f64;
                assert!((m - means[c][j]).abs() <= 0.05 * means[c][j]);
            }
        }
    }

    #[test]
    fn generators_are_seeded() {
        let a = generate_heavytail(20, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = generate_heavytail(20, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn idx_examples_and_round_trip() {
        let mut bytes = Vec::new();
        for w in [0x803u32, 1, 2, 2] {
            bytes.extend_from_slice(&w.to_be_bytes());
        }
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        let ds = read_idx(&bytes).unwrap();
        let expect = [0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0];
        assert_eq!(ds.data, expect);
        assert!((ds.data[2] - 0.50196).abs() < 1e-5 && (ds.data[3] - 0.25098).abs() < 1e-5);
        assert_eq!(write_idx(&ds, 2, 2).unwrap(), bytes);

        let mut wrong = bytes.clone();
        wrong[3] = 0x01;
        assert!(matches!(read_idx(&wrong), Err(Error::Format(_))));
        assert!(matches!(read_idx(&bytes[..18]), Err(Error::Format(_))));
        let mut huge = bytes.clone();
        huge[4..8].copy_from_slice(&u32::MAX.to_be_bytes());
        huge[8..12].copy_from_slice(&u32::MAX.to_be_bytes());
        huge[12..16].copy_from_slice(&u32::MAX.to_be_bytes());
        assert!(matches!(read_idx(&huge), Err(Error::Format(_))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        let header = vec!["a".to_string(), "b".to_string()];
        write_csv(&p, &header, vec![vec!["0.5".into(), "1".into()], vec!["-2".into(), "3.25".into()]].into_iter()).unwrap();
        let ds = read_csv(&p).unwrap();
        assert_eq!((ds.n, ds.d), (2, 2));
        assert_eq!(ds.data, vec![0.5, 1.0, -2.0, 3.25]);
    }

    #[test]
    fn outlier_examples() {
        let base = generate_heavytail(1000, 4, 0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut d0 = base.clone();
        let m = inject_outliers(&mut d0, 0.0, 5.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(d0, base);
        assert!(m.iter().all(|v| !v));
        let mut d1 = base.clone();
        inject_outliers(&mut d1, 1.0, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(d1, base);
        let mut d2 = base.clone();
        let m = inject_outliers(&mut d2, 0.1, 1.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(m.iter().filter(|&&v| v).count(), 100);
        for i in 0..base.n {
            if !m[i] {
                assert_eq!(d2.row(i), base.row(i));
            }
        }
    }

    #[test]
    fn split_depends_only_on_seed_and_n() {
        let a = split_indices(100, [0.7, 0.15, 0.15], 3);
        let b = split_indices(100, [0.7, 0.15, 0.15], 3);
        assert_eq!(a, b);
        assert_eq!((a[0].len(), a[1].len(), a[2].len()), (70, 15, 15));
        let mut all: Vec<usize> = a.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_ne!(split_indices(100, [0.7, 0.15, 0.15], 4), a);
    }
}
