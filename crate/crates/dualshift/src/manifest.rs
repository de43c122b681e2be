//! CSV manifests (`id,path,label,domain`) with grayscale image files.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use dualshift_core::dataset::Image;
use dualshift_core::{Dataset, Domain, Provenance, Sample};
use serde::{Deserialize, Serialize};

use crate::{io_err, write_file, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const HEADER: [&str; 4] = ["id", "path", "label", "domain"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub path: String,
    pub label: String,
    pub domain: String,
}

/// Accepts either a manifest file or a directory holding `manifest.csv`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads every row of a manifest. Image paths are relative to the
/// manifest's directory unless absolute. Rows are numbered from 1 after
/// the header in error messages.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let path = manifest_path(path);
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let file = std::fs::File::open(&path).map_err(io_err(&path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let bad = |row: usize, message: String| Error::Manifest {
        path: path.clone(),
        row,
        message,
    };
    let header = reader.headers().map_err(|e| bad(0, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(bad(0, format!("header must be `{}`", HEADER.join(","))));
    }
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| bad(row, e.to_string()))?;
        let label = match record.label.as_str() {
            "0" => 0,
            "1" => 1,
            other => return Err(bad(row, format!("label `{other}` must be 0 or 1"))),
        };
        let domain: Domain = record
            .domain
            .parse()
            .map_err(|_| bad(row, format!("domain `{}` must be mass or nonmass", record.domain)))?;
        if !seen.insert(record.id.clone()) {
            return Err(bad(row, format!("duplicate id `{}`", record.id)));
        }
        let image_path = base.join(&record.path);
        let image = read_image(&image_path).map_err(|e| bad(row, e.to_string()))?;
        samples.push(Sample {
            id: record.id,
            image,
            label,
            domain,
        });
    }
    Ok(Dataset::new(samples, Provenance::Manifest)?)
}

/// Reads a grayscale raster, rescaling to `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_luma16();
    let (w, h) = img.dimensions();
    let pixels = img
        .into_raw()
        .into_iter()
        .map(|v| f64::from(v) / 65535.0)
        .collect();
    Ok(Image::new(h as usize, w as usize, pixels)?)
}

/// Writes a 16-bit grayscale PNG.
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let raw: Vec<u16> = image
        .pixels
        .iter()
        .map(|p| (p.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buffer =
        image::ImageBuffer::<image::Luma<u16>, _>::from_raw(image.width as u32, image.height as u32, raw)
            .expect("pixel count matches dimensions");
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    buffer.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `images/<id>.png` for every sample plus `manifest.csv` under
/// `dir`. Returns the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    for sample in &dataset.samples {
        let relative = format!("images/{}.png", sample.id);
        write_image(&dir.join(&relative), &sample.image)?;
        writer
            .serialize(ManifestRow {
                id: sample.id.clone(),
                path: relative,
                label: sample.label.to_string(),
                domain: sample.domain.to_string(),
            })
            .expect("in-memory csv write");
    }
    let bytes = writer.into_inner().expect("in-memory csv flush");
    let path = dir.join(MANIFEST_FILE);
    write_file(&path, bytes)?;
    Ok(path)
}
