//! Folder-backed datasets.
//!
//! Layout: `root/<class_name>/<image files>`, with one plain-text split
//! file per split listing class names line by line.

use std::fs;
use std::path::Path;

use image::{ImageReader, Rgb, RgbImage};

use super::{ClassRecord, DataError, Dataset, Split};
use crate::tensor::Tensor;

/// Loads the classes named by `split_file` from `root`.
pub fn load_folder_dataset(
    root: &Path,
    split_file: &Path,
    split: Split,
) -> Result<Dataset, DataError> {
    let listing = fs::read_to_string(split_file).map_err(|source| DataError::Io {
        path: split_file.to_path_buf(),
        source,
    })?;
    let names: Vec<&str> = listing
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if names.is_empty() {
        return Err(DataError::EmptySplit(split_file.to_path_buf()));
    }

    let mut classes = Vec::with_capacity(names.len());
    for name in names {
        let dir = root.join(name);
        if !dir.is_dir() {
            return Err(DataError::MissingClassDir {
                class: name.to_string(),
                root: root.to_path_buf(),
            });
        }
        let mut files: Vec<_> = fs::read_dir(&dir)
            .map_err(|source| DataError::Io {
                path: dir.clone(),
                source,
            })?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut samples = Vec::with_capacity(files.len());
        for file in files {
            samples.push(decode_image(&file)?);
        }
        if samples.len() < 2 {
            return Err(DataError::TooFewSamples(name.to_string()));
        }
        classes.push(ClassRecord {
            name: name.to_string(),
            samples,
        });
    }
    Dataset::new(split, classes)
}

fn decode_image(path: &Path) -> Result<Tensor<f32>, DataError> {
    let img = ImageReader::open(path)
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .decode()
        .map_err(|source| DataError::BadImage {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                out.data_mut()[(c * h + y) * w + x] = px.0[c] as f32 / 255.0;
            }
        }
    }
    Ok(out)
}

/// Materializes a dataset in the folder layout, one PNG per sample.
pub fn save_dataset_as_folder(dataset: &Dataset, root: &Path) -> Result<(), DataError> {
    for class in dataset.classes() {
        let dir = root.join(&class.name);
        fs::create_dir_all(&dir).map_err(|source| DataError::Io {
            path: dir.clone(),
            source,
        })?;
        for (i, sample) in class.samples.iter().enumerate() {
            let shape = sample.shape();
            let (h, w) = (shape[1], shape[2]);
            let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let (x, y) = (x as usize, y as usize);
                let px = |c: usize| {
                    (sample.data()[(c * h + y) * w + x].clamp(0.0, 1.0) * 255.0).round() as u8
                };
                Rgb([px(0), px(1), px(2)])
            });
            let path = dir.join(format!("{i:04}.png"));
            img.save(&path).map_err(|source| DataError::BadImage {
                path,
                source,
            })?;
        }
    }
    Ok(())
}

/// Writes `<split>.txt` files listing class names, one per line.
pub fn write_split_files(dir: &Path, splits: &[(Split, Vec<String>)]) -> Result<(), DataError> {
    for (split, names) in splits {
        let path = dir.join(format!("{}.txt", split.name()));
        let body = names.join("\n") + "\n";
        fs::write(&path, body).map_err(|source| DataError::Io { path, source })?;
    }
    Ok(())
}
