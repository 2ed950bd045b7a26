//! Independent oracles and synthetic fixtures shared by the integration tests
//! and the acceptance suite.
#![allow(dead_code)]

use std::path::Path;

use ndarray::{ArrayD, Dimension, IxDyn};
use nnoodkit::dataset::{DatasetDescriptor, FileFormat};
use nnoodkit::io;
use nnoodkit::NdImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// AUROC by counting every positive/negative pair.
pub fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// AP from an explicit sweep over every distinct threshold, high to low.
pub fn ap_bruteforce(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let mut tp = 0.0;
        let mut predicted = 0.0;
        for (s, &l) in scores.iter().zip(labels) {
            if *s >= t {
                predicted += 1.0;
                if l {
                    tp += 1.0;
                }
            }
        }
        let recall = tp / n_pos;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    ap
}

/// Dense Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        for row in col + 1..n {
            let f = a[row][col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// Dense discrete Poisson system for a 2D region inside an image.
///
/// A footprint pixel is unknown when every in-image 4-neighbour is also in
/// the footprint; other footprint pixels keep the destination value. For an
/// unknown `p` and neighbour `q`, the edge target `f_p - f_q` is
/// `gy[q]` / `gx[q]` when `q` precedes `p` and `-gy[p]` / `-gx[p]` when it
/// follows (`gy`, `gx` are forward differences in box coordinates).
pub struct DensePoisson {
    pub matrix: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    /// Box-local coordinates of each unknown.
    pub unknowns: Vec<(usize, usize)>,
}

pub fn dense_poisson_2d(
    dest: &ArrayD<f32>,
    origin: (usize, usize),
    footprint: &ArrayD<bool>,
    gy: &ArrayD<f64>,
    gx: &ArrayD<f64>,
) -> DensePoisson {
    let (h, w) = (dest.shape()[0], dest.shape()[1]);
    let (bh, bw) = (footprint.shape()[0], footprint.shape()[1]);
    let in_fp = |y: isize, x: isize| -> bool {
        y >= 0
            && x >= 0
            && (y as usize) < bh
            && (x as usize) < bw
            && footprint[[y as usize, x as usize]]
    };
    let mut id = vec![vec![None; bw]; bh];
    let mut unknowns = Vec::new();
    for y in 0..bh {
        for x in 0..bw {
            if !footprint[[y, x]] {
                continue;
            }
            let (gy_, gx_) = (y + origin.0, x + origin.1);
            let mut interior = true;
            for (dy, dx) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                let (ny, nx) = (gy_ as isize + dy, gx_ as isize + dx);
                let in_image = ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w;
                if in_image && !in_fp(y as isize + dy, x as isize + dx) {
                    interior = false;
                }
            }
            if interior {
                id[y][x] = Some(unknowns.len());
                unknowns.push((y, x));
            }
        }
    }
    let n = unknowns.len();
    let mut matrix = vec![vec![0.0; n]; n];
    let mut rhs = vec![0.0; n];
    for (k, &(y, x)) in unknowns.iter().enumerate() {
        let (gy_, gx_) = (y + origin.0, x + origin.1);
        let mut edges: Vec<((usize, usize), f64)> = Vec::new();
        if gy_ > 0 {
            edges.push(((y - 1, x), gy[[y - 1, x]]));
        }
        if gy_ + 1 < h {
            edges.push(((y + 1, x), -gy[[y, x]]));
        }
        if gx_ > 0 {
            edges.push(((y, x - 1), gx[[y, x - 1]]));
        }
        if gx_ + 1 < w {
            edges.push(((y, x + 1), -gx[[y, x]]));
        }
        for ((qy, qx), v) in edges {
            matrix[k][k] += 1.0;
            rhs[k] += v;
            match id[qy][qx] {
                Some(j) => matrix[k][j] -= 1.0,
                None => rhs[k] += f64::from(dest[[qy + origin.0, qx + origin.1]]),
            }
        }
    }
    DensePoisson {
        matrix,
        rhs,
        unknowns,
    }
}

pub fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Random connected-ish blob footprint: union of discs inside the box.
pub fn random_blob(rng: &mut ChaCha8Rng, bh: usize, bw: usize) -> ArrayD<bool> {
    let discs: Vec<(f64, f64, f64)> = (0..rng.random_range(1..=4))
        .map(|_| {
            (
                rng.random_range(0.0..bh as f64),
                rng.random_range(0.0..bw as f64),
                rng.random_range(3.0..(bh.min(bw) as f64 / 2.0)),
            )
        })
        .collect();
    ArrayD::from_shape_fn(IxDyn(&[bh, bw]), |i| {
        discs
            .iter()
            .any(|&(cy, cx, r)| (i[0] as f64 - cy).powi(2) + (i[1] as f64 - cx).powi(2) <= r * r)
    })
}

/// 8-bit textured image: smooth waves plus noise.
pub fn texture(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ArrayD<u8> {
    let (fy, fx, ph) = (
        rng.random_range(0.1..0.6),
        rng.random_range(0.1..0.6),
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    ArrayD::from_shape_fn(IxDyn(&[h, w]), |i| {
        let v = 128.0 + 60.0 * ((i[0] as f64 * fy + ph).sin() + (i[1] as f64 * fx).cos()) / 2.0;
        (v + rng.random_range(-30.0..30.0)).clamp(0.0, 255.0) as u8
    })
}

/// Constant background with a textured ellipse; returns the image and the
/// ellipse mask.
pub fn object_on_background(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
) -> (ArrayD<u8>, ArrayD<bool>) {
    let tex = texture(rng, h, w);
    let (cy, cx) = (
        rng.random_range(0.35..0.65) * h as f64,
        rng.random_range(0.35..0.65) * w as f64,
    );
    let (ry, rx) = (
        rng.random_range(0.2..0.3) * h as f64,
        rng.random_range(0.2..0.3) * w as f64,
    );
    let mask = ArrayD::from_shape_fn(IxDyn(&[h, w]), |i| {
        ((i[0] as f64 - cy) / ry).powi(2) + ((i[1] as f64 - cx) / rx).powi(2) <= 1.0
    });
    let mut img = ArrayD::from_elem(IxDyn(&[h, w]), 10u8);
    ndarray::Zip::from(&mut img)
        .and(&mask)
        .and(&tex)
        .for_each(|o, &m, &t| {
            if m {
                *o = t.max(60);
            }
        });
    (img, mask)
}

pub fn to_image(a: &ArrayD<u8>) -> NdImage {
    NdImage::from_spatial(a.mapv(f32::from)).unwrap()
}

/// Writes a 2D PNG dataset under `root` and returns the raw images.
pub fn write_png_dataset(
    root: &Path,
    n: usize,
    h: usize,
    w: usize,
    uniform_background: bool,
    seed: u64,
) -> Vec<ArrayD<u8>> {
    let train = root.join("imagesTr");
    std::fs::create_dir_all(&train).unwrap();
    let desc = DatasetDescriptor {
        name: "synthetic".into(),
        spatial_rank: 2,
        channels: 1,
        uniform_background,
        safe_augmentations: vec![],
        file_format: FileFormat::Png2d,
    };
    io::write_json(&root.join("dataset.json"), &desc).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let img = if uniform_background {
                object_on_background(&mut rng, h, w).0
            } else {
                texture(&mut rng, h, w)
            };
            let bytes = io::encode_gray8_png(&img).unwrap();
            io::write_atomic(&train.join(format!("case_{k:03}.png")), &bytes).unwrap();
            img
        })
        .collect()
}

/// All files in a directory, sorted, with their bytes.
pub fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

/// Checks the label and support contract of one generated sample against
/// its source image. Returns a description of the first violation.
pub fn check_label_contract(
    kind: nnoodkit::tasks::TaskKind,
    x_i: &NdImage,
    sample: &nnoodkit::tasks::AugmentedSample,
) -> Result<(), String> {
    use nnoodkit::tasks::TaskKind;
    let shape = x_i.spatial_shape().to_vec();
    let mut covered = ArrayD::from_elem(IxDyn(&shape), false);
    for spec in &sample.specs {
        for (local, &inside) in spec.footprint.indexed_iter() {
            if inside {
                let g: Vec<usize> = local
                    .slice()
                    .iter()
                    .zip(&spec.origin)
                    .map(|(l, o)| l + o)
                    .collect();
                covered[IxDyn(&g)] = true;
            }
        }
    }
    let label = sample.label.values();
    let (orig, aug) = (x_i.data(), sample.image.data());
    let channels = x_i.channels();
    for (idx, &inside) in covered.indexed_iter() {
        let pix = idx.slice().to_vec();
        let mut full = vec![0usize];
        full.extend(&pix);
        let mut diff = 0.0f64;
        let mut identical = true;
        for c in 0..channels {
            full[0] = c;
            let (a, o) = (aug[IxDyn(&full)], orig[IxDyn(&full)]);
            identical &= a.to_bits() == o.to_bits();
            diff += (f64::from(a) - f64::from(o)).abs();
        }
        let l = label[&idx];
        if !(0.0..=1.0).contains(&l) {
            return Err(format!("label {l} out of range at {pix:?}"));
        }
        if !inside {
            if !identical {
                return Err(format!("pixel {pix:?} changed outside every footprint"));
            }
            if l != 0.0 {
                return Err(format!("label {l} outside footprints at {pix:?}"));
            }
            continue;
        }
        match kind {
            TaskKind::Fpi | TaskKind::Pii => {
                let alpha = sample.patches[0].alpha.ok_or("missing alpha")?;
                if l != alpha as f32 {
                    return Err(format!("label {l} != alpha {alpha} at {pix:?}"));
                }
            }
            TaskKind::Cutpaste => {
                if l != 0.0 && l != 1.0 {
                    return Err(format!("non-binary cutpaste label {l}"));
                }
            }
            TaskKind::Nsa | TaskKind::NsaMixed => {
                if diff > 0.0 && f64::from(l) < 0.1 - 1e-6 {
                    return Err(format!("label {l} below 0.1 at changed pixel {pix:?}"));
                }
            }
        }
    }
    Ok(())
}

/// In-memory normalised dataset with foreground masks.
pub fn object_dataset(
    n: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> (Vec<NdImage>, Vec<nnoodkit::ForegroundMask>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<NdImage> = (0..n)
        .map(|_| {
            nnoodkit::image::zscore_normalize(&to_image(&object_on_background(&mut rng, h, w).0))
        })
        .collect();
    let masks = images
        .iter()
        .map(|i| nnoodkit::foreground::foreground_mask(i).unwrap())
        .collect();
    (images, masks)
}
