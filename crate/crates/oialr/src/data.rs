//! Desk-scale datasets: synthetic Gaussian blobs, IDX image files, and
//! sliding-window CSV series.
//!
//! A dataset is one flat feature matrix with the first `train_len` rows
//! forming the training split and the rest the test split. Loaders are
//! deterministic; the only randomness is the blob generator's explicit
//! seed, and epoch shuffling derives from (seed, epoch) alone.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Matrix),
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Targets,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// All samples, train rows first.
    pub features: Matrix,
    pub targets: Targets,
    pub train_len: usize,
    /// Classification only: number of classes.
    pub num_classes: Option<usize>,
}

impl Dataset {
    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn train_count(&self) -> usize {
        self.train_len
    }

    pub fn test_count(&self) -> usize {
        self.features.rows() - self.train_len
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.targets, Targets::Classes(_))
    }

    /// Width of a regression target row, 0 for classification.
    pub fn target_dim(&self) -> usize {
        match &self.targets {
            Targets::Classes(_) => 0,
            Targets::Values(v) => v.cols(),
        }
    }

    /// Training-row visit order for one epoch; a pure function of
    /// (seed, epoch).
    pub fn shuffled_train_order(&self, seed: u64, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..self.train_len).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Gathers the given sample rows into one batch.
    pub fn gather(&self, rows: &[usize]) -> Batch {
        let mut inputs = Matrix::zeros(rows.len(), self.feature_dim());
        for (out_i, &r) in rows.iter().enumerate() {
            inputs.row_mut(out_i).copy_from_slice(self.features.row(r));
        }
        let targets = match &self.targets {
            Targets::Classes(c) => Targets::Classes(rows.iter().map(|&r| c[r]).collect()),
            Targets::Values(v) => {
                let mut t = Matrix::zeros(rows.len(), v.cols());
                for (out_i, &r) in rows.iter().enumerate() {
                    t.row_mut(out_i).copy_from_slice(v.row(r));
                }
                Targets::Values(t)
            }
        };
        Batch { inputs, targets }
    }

    /// Batches covering `order` in sequence; the final batch may be short.
    pub fn batches<'a>(
        &'a self,
        order: &'a [usize],
        batch_size: usize,
    ) -> impl Iterator<Item = Batch> + 'a {
        order.chunks(batch_size.max(1)).map(|rows| self.gather(rows))
    }

    pub fn test_rows(&self) -> Vec<usize> {
        (self.train_len..self.features.rows()).collect()
    }
}

/// Gaussian clusters at seeded uniform centers in [-1, 1]^dims, stratified
/// 80/20 into train/test per class.
pub fn synth_blobs(
    classes: usize,
    dims: usize,
    samples_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Data(format!(
            "blob generator needs at least 2 classes, got {classes}"
        )));
    }
    if dims < 1 || samples_per_class < 1 {
        return Err(Error::Data(format!(
            "blob generator needs dims >= 1 and samples >= 1, got dims {dims}, samples {samples_per_class}"
        )));
    }
    if !spread.is_finite() || spread < 0.0 {
        return Err(Error::Data(format!("blob spread must be >= 0, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    // Draw all samples class by class, then lay out train rows first.
    let mut samples: Vec<Vec<(Vec<f64>, usize)>> = Vec::with_capacity(classes);
    for (label, center) in centers.iter().enumerate() {
        let mut class_rows = Vec::with_capacity(samples_per_class);
        for _ in 0..samples_per_class {
            let row: Vec<f64> = center
                .iter()
                .map(|c| c + spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            class_rows.push((row, label));
        }
        samples.push(class_rows);
    }
    let train_per_class = (samples_per_class * 8) / 10;
    let total = classes * samples_per_class;
    let mut features = Matrix::zeros(total, dims);
    let mut labels = Vec::with_capacity(total);
    let mut out_i = 0;
    for class_rows in &samples {
        for (row, label) in &class_rows[..train_per_class] {
            features.row_mut(out_i).copy_from_slice(row);
            labels.push(*label);
            out_i += 1;
        }
    }
    let train_len = out_i;
    for class_rows in &samples {
        for (row, label) in &class_rows[train_per_class..] {
            features.row_mut(out_i).copy_from_slice(row);
            labels.push(*label);
            out_i += 1;
        }
    }
    Ok(Dataset {
        features,
        targets: Targets::Classes(labels),
        train_len,
        num_classes: Some(classes),
    })
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], at: usize, what: &str, path: &Path) -> Result<u32> {
    let end = at + 4;
    if bytes.len() < end {
        return Err(Error::Data(format!(
            "{}: truncated before {what}",
            path.display()
        )));
    }
    Ok(u32::from_be_bytes([
        bytes[at],
        bytes[at + 1],
        bytes[at + 2],
        bytes[at + 3],
    ]))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// One IDX image/label file pair as (pixels scaled to [0,1], class
/// indices).
fn read_idx_pair(images_path: &Path, labels_path: &Path) -> Result<(Matrix, Vec<usize>)> {
    let img_bytes = read_file(images_path)?;
    let magic = read_be_u32(&img_bytes, 0, "magic", images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "{}: magic {magic:#010x} is not an IDX image file ({IDX_IMAGES_MAGIC:#010x})",
            images_path.display()
        )));
    }
    let count = read_be_u32(&img_bytes, 4, "image count", images_path)? as usize;
    let rows = read_be_u32(&img_bytes, 8, "row count", images_path)? as usize;
    let cols = read_be_u32(&img_bytes, 12, "column count", images_path)? as usize;
    let pixels = count * rows * cols;
    if img_bytes.len() < 16 + pixels {
        return Err(Error::Data(format!(
            "{}: expected {} pixel bytes, file holds {}",
            images_path.display(),
            pixels,
            img_bytes.len().saturating_sub(16)
        )));
    }
    let mut features = Matrix::zeros(count, rows * cols);
    for i in 0..count {
        let row = features.row_mut(i);
        let src = &img_bytes[16 + i * rows * cols..16 + (i + 1) * rows * cols];
        for (f, &b) in row.iter_mut().zip(src) {
            *f = b as f64 / 255.0;
        }
    }

    let lbl_bytes = read_file(labels_path)?;
    let magic = read_be_u32(&lbl_bytes, 0, "magic", labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Data(format!(
            "{}: magic {magic:#010x} is not an IDX label file ({IDX_LABELS_MAGIC:#010x})",
            labels_path.display()
        )));
    }
    let lbl_count = read_be_u32(&lbl_bytes, 4, "label count", labels_path)? as usize;
    if lbl_count != count {
        return Err(Error::Data(format!(
            "{} holds {count} images but {} holds {lbl_count} labels",
            images_path.display(),
            labels_path.display()
        )));
    }
    if lbl_bytes.len() < 8 + lbl_count {
        return Err(Error::Data(format!(
            "{}: truncated label payload",
            labels_path.display()
        )));
    }
    let labels: Vec<usize> = lbl_bytes[8..8 + lbl_count].iter().map(|&b| b as usize).collect();
    Ok((features, labels))
}

/// Single IDX pair split 80/20 by index order.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (features, labels) = read_idx_pair(images_path, labels_path)?;
    let train_len = features.rows() * 8 / 10;
    dataset_from_labeled(features, labels, train_len)
}

/// Separate train and test IDX pairs.
pub fn load_idx_with_test(
    train_images: &Path,
    train_labels: &Path,
    test_images: &Path,
    test_labels: &Path,
) -> Result<Dataset> {
    let (train_f, train_l) = read_idx_pair(train_images, train_labels)?;
    let (test_f, test_l) = read_idx_pair(test_images, test_labels)?;
    if train_f.cols() != test_f.cols() {
        return Err(Error::Data(format!(
            "train images are {} pixels, test images {}",
            train_f.cols(),
            test_f.cols()
        )));
    }
    let train_len = train_f.rows();
    let mut features = Matrix::zeros(train_len + test_f.rows(), train_f.cols());
    for i in 0..train_len {
        features.row_mut(i).copy_from_slice(train_f.row(i));
    }
    for i in 0..test_f.rows() {
        features.row_mut(train_len + i).copy_from_slice(test_f.row(i));
    }
    let mut labels = train_l;
    labels.extend(test_l);
    dataset_from_labeled(features, labels, train_len)
}

fn dataset_from_labeled(features: Matrix, labels: Vec<usize>, train_len: usize) -> Result<Dataset> {
    let num_classes = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    if num_classes < 2 {
        return Err(Error::Data(format!(
            "labels span {num_classes} classes, need at least 2"
        )));
    }
    Ok(Dataset {
        features,
        targets: Targets::Classes(labels),
        train_len,
        num_classes: Some(num_classes),
    })
}

/// Sliding-window forecasting dataset from a numeric CSV with a header
/// row. Each sample's features are `input_len` consecutive rows flattened,
/// its targets the following `pred_len` rows flattened. Windows advance by
/// one row; the first 80% are the training split. Every column is
/// z-normalized with statistics from the rows the training windows touch.
pub fn load_csv_series(path: &Path, input_len: usize, pred_len: usize) -> Result<Dataset> {
    if input_len < 1 || pred_len < 1 {
        return Err(Error::Data(format!(
            "window lengths must be >= 1, got input {input_len}, prediction {pred_len}"
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    };
    let cols = header.split(',').count();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(cols);
        for (col_idx, cell) in line.split(',').enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: line {}, column {}: '{}' is not numeric",
                    path.display(),
                    line_idx + 1,
                    col_idx + 1,
                    cell.trim()
                ))
            })?;
            row.push(v);
        }
        if row.len() != cols {
            return Err(Error::Data(format!(
                "{}: line {} has {} cells, header has {}",
                path.display(),
                line_idx + 1,
                row.len(),
                cols
            )));
        }
        rows.push(row);
    }
    let window = input_len + pred_len;
    if rows.len() < window {
        return Err(Error::Data(format!(
            "{}: {} data rows cannot fit one {window}-row window",
            path.display(),
            rows.len()
        )));
    }
    let n_windows = rows.len() - window + 1;
    let train_len = ((n_windows * 8) / 10).max(1);
    // Normalization statistics come from the rows covered by training
    // windows only.
    let stat_rows = (train_len - 1) + window;
    let mut means = vec![0.0; cols];
    for row in &rows[..stat_rows] {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= stat_rows as f64;
    }
    let mut stds = vec![0.0; cols];
    for row in &rows[..stat_rows] {
        for ((s, v), m) in stds.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut stds {
        *s = (*s / stat_rows as f64).sqrt();
    }
    let norm = |v: f64, c: usize| {
        if stds[c] < 1e-12 {
            0.0
        } else {
            (v - means[c]) / stds[c]
        }
    };
    let mut features = Matrix::zeros(n_windows, input_len * cols);
    let mut targets = Matrix::zeros(n_windows, pred_len * cols);
    for w in 0..n_windows {
        let frow = features.row_mut(w);
        for t in 0..input_len {
            for c in 0..cols {
                frow[t * cols + c] = norm(rows[w + t][c], c);
            }
        }
        let trow = targets.row_mut(w);
        for t in 0..pred_len {
            for c in 0..cols {
                trow[t * cols + c] = norm(rows[w + input_len + t][c], c);
            }
        }
    }
    if !features.all_finite() || !targets.all_finite() {
        return Err(Error::Data(format!(
            "{}: non-finite values after normalization",
            path.display()
        )));
    }
    Ok(Dataset {
        features,
        targets: Targets::Values(targets),
        train_len,
        num_classes: None,
    })
}
