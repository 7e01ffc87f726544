//! Dataset manifest and image loading.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageBatch, IMAGE_SIZE};
use crate::tensor::{Shape, Tensor};

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn is_abnormal(self) -> bool {
        self == Label::Abnormal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "images/train/",
            Split::Test => "images/test/",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub label: Label,
    pub mask_path: Option<String>,
    pub seed: u64,
}

impl ManifestRow {
    /// File stem, used as the image id in reports.
    pub fn image_id(&self) -> String {
        Path::new(&self.path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.path.clone())
    }

    pub fn split(&self) -> Option<Split> {
        [Split::Train, Split::Test]
            .into_iter()
            .find(|s| self.path.starts_with(s.prefix()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let headers = reader.headers()?.clone();
        if headers != vec!["path", "label", "mask_path", "seed"] {
            return Err(Error::Manifest(format!("unexpected header {headers:?}")));
        }
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
        let manifest = Manifest { rows };
        manifest.validate(dir)?;
        Ok(manifest)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut w = csv::Writer::from_path(&path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    /// Every listed file exists, masks accompany exactly the abnormal rows,
    /// and each row sits in a known split.
    pub fn validate(&self, dir: &Path) -> Result<()> {
        for row in &self.rows {
            if row.split().is_none() {
                return Err(Error::Manifest(format!("{}: not under images/train or images/test", row.path)));
            }
            if row.label.is_abnormal() != row.mask_path.is_some() {
                return Err(Error::Manifest(format!("{}: mask presence disagrees with label", row.path)));
            }
            if row.label.is_abnormal() && row.split() == Some(Split::Train) {
                return Err(Error::Manifest(format!("{}: abnormal image in the train split", row.path)));
            }
            for p in std::iter::once(&row.path).chain(&row.mask_path) {
                if !dir.join(p).is_file() {
                    return Err(Error::Manifest(format!("{p}: listed but missing")));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestRow> {
        self.rows.iter().filter(|r| r.split() == Some(split)).collect()
    }
}

/// Loads an RGB image, resizes bilinearly to 128x128 if needed and maps
/// `[0, 255]` to `[-1, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let size = IMAGE_SIZE as u32;
    let img = if img.dimensions() == (size, size) {
        img
    } else {
        image::imageops::resize(&img, size, size, FilterType::Triangle)
    };
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px.0[c] as f32 / 127.5 - 1.0;
        }
    }
    Tensor::from_vec(Shape::new(1, 3, IMAGE_SIZE, IMAGE_SIZE), data)
}

/// Loads a binary ground-truth mask as a row-major `128 x 128` bool grid.
pub fn load_mask(path: &Path) -> Result<Vec<bool>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let size = IMAGE_SIZE as u32;
    let img = if img.dimensions() == (size, size) {
        img
    } else {
        image::imageops::resize(&img, size, size, FilterType::Nearest)
    };
    Ok(img.pixels().map(|p| p.0[0] > 127).collect())
}

/// Loads the given rows into one batch.
pub fn load_rows(dir: &Path, rows: &[&ManifestRow]) -> Result<ImageBatch> {
    let tensors = rows
        .iter()
        .map(|r| load_image(&dir.join(&r.path)))
        .collect::<Result<Vec<_>>>()?;
    if tensors.is_empty() {
        return ImageBatch::new(Tensor::zeros(Shape::new(0, 3, IMAGE_SIZE, IMAGE_SIZE)));
    }
    let refs: Vec<&Tensor> = tensors.iter().collect();
    ImageBatch::new(Tensor::concat_batch(&refs)?)
}

/// One labelled split held in memory.
#[derive(Debug, Clone)]
pub struct LoadedSplit {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
    pub images: ImageBatch,
}

impl LoadedSplit {
    pub fn labels(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.label.is_abnormal()).collect()
    }
}

pub fn load_split(dir: &Path, split: Split) -> Result<LoadedSplit> {
    let manifest = Manifest::read(dir)?;
    let rows = manifest.split(split);
    let images = load_rows(dir, &rows)?;
    Ok(LoadedSplit {
        root: dir.to_path_buf(),
        rows: rows.into_iter().cloned().collect(),
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    #[test]
    fn normalization_maps_extremes_to_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = RgbImage::new(128, 128);
        img.put_pixel(0, 0, Rgb([255, 0, 128]));
        let p = dir.path().join("a.png");
        img.save(&p).unwrap();
        let t = load_image(&p).unwrap();
        let plane = 128 * 128;
        assert_eq!(t.data()[0], 1.0);
        assert_eq!(t.data()[plane], -1.0);
        assert!((t.data()[2 * plane] - (128.0 / 127.5 - 1.0)).abs() < 1e-7);
    }

    #[test]
    fn other_sizes_are_resized() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.png");
        RgbImage::from_pixel(64, 200, Rgb([10, 20, 30])).save(&p).unwrap();
        let t = load_image(&p).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 128, 128));
        assert!((t.data()[0] - (10.0 / 127.5 - 1.0)).abs() < 1e-6);
    }

    #[test]
    fn manifest_rejects_missing_files_and_bad_masks() {
        let dir = tempfile::tempdir().unwrap();
        let row = ManifestRow {
            path: "images/test/x.png".into(),
            label: Label::Abnormal,
            mask_path: None,
            seed: 1,
        };
        let m = Manifest { rows: vec![row] };
        assert!(matches!(m.validate(dir.path()), Err(Error::Manifest(_))));
        let row = ManifestRow {
            path: "images/train/y.png".into(),
            label: Label::Normal,
            mask_path: None,
            seed: 1,
        };
        let m = Manifest { rows: vec![row] };
        assert!(matches!(m.validate(dir.path()), Err(Error::Manifest(_))));
    }
}
