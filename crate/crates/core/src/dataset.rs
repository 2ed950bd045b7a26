//! Dataset layout on disk: `dataset.json`, `imagesTr/`, `imagesTs/`, `labelsTs/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foreground::foreground_mask;
use crate::image::{zscore_normalize, ForegroundMask, NdImage};
use crate::io;

pub const DESCRIPTOR_FILE: &str = "dataset.json";
pub const TRAIN_DIR: &str = "imagesTr";
pub const TEST_DIR: &str = "imagesTs";
pub const TEST_LABEL_DIR: &str = "labelsTs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Png2d,
    Nifti,
}

/// Augmentations declared safe for a dataset. Training is out of scope; the
/// list is validated and carried through for downstream pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    Flip { axis: usize },
    Rotate90 { plane: (usize, usize) },
    Rotate { angle_range: (f64, f64) },
    Scale { range: (f64, f64) },
    Gamma { range: (f64, f64) },
    Noise { sigma_range: (f64, f64) },
}

impl Augmentation {
    fn validate(&self, rank: usize) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64), positive: bool| {
            lo.is_finite() && hi.is_finite() && lo <= hi && (!positive || lo > 0.0)
        };
        let ok = match *self {
            Augmentation::Flip { axis } => axis < rank,
            Augmentation::Rotate90 { plane: (a, b) } => a < rank && b < rank && a != b,
            Augmentation::Rotate { angle_range } => range_ok(angle_range, false),
            Augmentation::Scale { range } | Augmentation::Gamma { range } => range_ok(range, true),
            Augmentation::Noise { sigma_range } => {
                range_ok(sigma_range, false) && sigma_range.0 >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "augmentation {self:?} for rank {rank}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub spatial_rank: usize,
    pub channels: usize,
    pub uniform_background: bool,
    #[serde(default)]
    pub safe_augmentations: Vec<Augmentation>,
    pub file_format: FileFormat,
}

impl DatasetDescriptor {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.spatial_rank) {
            return Err(Error::UnsupportedRank {
                op: "dataset",
                rank: self.spatial_rank,
            });
        }
        if self.channels < 1 {
            return Err(Error::InvalidParameter("channels must be positive".into()));
        }
        if self.file_format == FileFormat::Png2d && self.spatial_rank != 2 {
            return Err(Error::InvalidParameter(
                "png2d datasets must have spatial rank 2".into(),
            ));
        }
        self.safe_augmentations
            .iter()
            .try_for_each(|a| a.validate(self.spatial_rank))
    }

    fn accepts(&self, path: &Path) -> bool {
        match self.file_format {
            FileFormat::Png2d => io::is_png(path),
            FileFormat::Nifti => io::is_nifti(path),
        }
    }
}

/// A loaded, z-score normalised image set.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub descriptor: DatasetDescriptor,
    pub names: Vec<String>,
    pub images: Vec<NdImage>,
}

impl Dataset {
    /// Loads `imagesTr/` sorted by file name.
    pub fn load_training(root: &Path) -> Result<Dataset> {
        let descriptor: DatasetDescriptor = io::read_json(&root.join(DESCRIPTOR_FILE))
            .map_err(|e| Error::Format(format!("{}: {e}", root.join(DESCRIPTOR_FILE).display())))?;
        descriptor.validate()?;
        let files = list_images(&root.join(TRAIN_DIR), &descriptor)?;
        if files.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut names = Vec::with_capacity(files.len());
        let mut images = Vec::with_capacity(files.len());
        for f in &files {
            let img = io::read_image(f, Some(descriptor.spatial_rank))
                .map_err(|e| Error::Format(format!("{}: {e}", f.display())))?;
            if img.channels() != descriptor.channels
                || img.spatial_rank() != descriptor.spatial_rank
            {
                return Err(Error::Format(format!(
                    "{}: shape {:?} does not match {} channel(s) of rank {}",
                    f.display(),
                    img.data().shape(),
                    descriptor.channels,
                    descriptor.spatial_rank
                )));
            }
            names.push(io::image_stem(f).unwrap_or_default());
            images.push(zscore_normalize(&img));
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            descriptor,
            names,
            images,
        })
    }

    /// Foreground masks when the descriptor declares a uniform background.
    pub fn foreground_masks(&self) -> Result<Option<Vec<ForegroundMask>>> {
        if !self.descriptor.uniform_background {
            return Ok(None);
        }
        use rayon::prelude::*;
        self.images
            .par_iter()
            .map(foreground_mask)
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

/// Image files in `dir` matching the descriptor's format, sorted by name.
pub fn list_images(dir: &Path, descriptor: &DatasetDescriptor) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Format(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && descriptor.accepts(p))
        .collect();
    files.sort();
    Ok(files)
}
