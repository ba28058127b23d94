//! Image-folder ingestion: a directory of class subfolders (ID sets) or a
//! flat directory of images (OOD sets).

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use ndarray::Array4;

use crate::data::dataset::{Dataset, TransformSpec};
use crate::error::{Error, Result};
use crate::num::Float;

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    Ok(entries)
}

fn decode_image<F: Float>(
    path: &Path,
    resize: Option<(usize, usize)>,
) -> Result<(Vec<F>, usize, usize)> {
    let img = image::open(path).map_err(|e| Error::UnreadableImage {
        path: path.into(),
        reason: e.to_string(),
    })?;
    let img = match resize {
        Some((h, w)) => img.resize_exact(w as u32, h as u32, FilterType::Triangle),
        None => img,
    };
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let (h, w) = (h as usize, w as usize);
    // Channel-major output.
    let mut out = vec![F::zero(); 3 * h * w];
    for (x, y, pixel) in rgb.enumerate_pixels() {
        for c in 0..3 {
            out[c * h * w + y as usize * w + x as usize] =
                F::from_f64_lossy(pixel[c] as f64 / 255.0);
        }
    }
    Ok((out, h, w))
}

/// Loads a dataset from `root`, deterministically ordered by sorted file
/// names.
///
/// When `root` contains subdirectories, each subdirectory is a class (sorted
/// by name, labels assigned in that order). Otherwise `root` is taken as a
/// flat, unlabeled image folder. Without `transform.resize`, all images must
/// already share one size.
pub fn load_image_folder<F: Float>(root: &Path, transform: &TransformSpec) -> Result<Dataset<F>> {
    if !root.is_dir() {
        return Err(Error::MissingDirectory { path: root.into() });
    }
    let entries = sorted_entries(root)?;
    let class_dirs: Vec<&PathBuf> = entries.iter().filter(|p| p.is_dir()).collect();

    let mut files: Vec<(PathBuf, Option<usize>)> = Vec::new();
    let mut class_names = Vec::new();
    if class_dirs.is_empty() {
        for path in entries.iter().filter(|p| is_image_file(p)) {
            files.push((path.clone(), None));
        }
    } else {
        for (label, dir) in class_dirs.iter().enumerate() {
            class_names.push(
                dir.file_name()
                    .and_then(|n| n.to_str())
                    .unwrap_or("class")
                    .to_string(),
            );
            for path in sorted_entries(dir)?.into_iter().filter(|p| is_image_file(p)) {
                files.push((path, Some(label)));
            }
        }
    }
    if files.is_empty() {
        return Err(Error::MissingDirectory { path: root.into() });
    }

    let mut images: Option<Array4<F>> = None;
    let mut labels = Vec::new();
    let mut sample_ids = Vec::with_capacity(files.len());
    for (row, (path, label)) in files.iter().enumerate() {
        let (pixels, h, w) = decode_image::<F>(path, transform.resize)?;
        let store = images.get_or_insert_with(|| Array4::zeros((files.len(), 3, h, w)));
        let s = store.shape();
        if s[2] != h || s[3] != w {
            return Err(Error::shape_mismatch(
                format!("image size of {}", path.display()),
                &[h, w],
                &[s[2], s[3]],
            ));
        }
        store
            .index_axis_mut(ndarray::Axis(0), row)
            .as_slice_mut()
            .expect("contiguous")
            .copy_from_slice(&pixels);
        if let Some(l) = label {
            labels.push(*l);
        }
        sample_ids.push(
            path.strip_prefix(root)
                .unwrap_or(path)
                .to_string_lossy()
                .replace(',', "_"),
        );
    }
    Ok(Dataset {
        images: images.expect("at least one file"),
        labels,
        sample_ids,
        class_names,
        value_range: (0.0, 1.0),
        transform: *transform,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("oodkit-folder-{tag}-{}", std::process::id()));
        std::fs::remove_dir_all(&dir).ok();
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn write_png(path: &Path, shade: u8, size: u32) {
        let img = image::RgbImage::from_pixel(size, size, image::Rgb([shade, shade, shade]));
        img.save(path).unwrap();
    }

    #[test]
    fn empty_folder_is_missing_directory() {
        let dir = tmpdir("empty");
        let err = load_image_folder::<f32>(&dir, &TransformSpec::default()).unwrap_err();
        assert!(matches!(err, Error::MissingDirectory { .. }));
        let err =
            load_image_folder::<f32>(&dir.join("nope"), &TransformSpec::default()).unwrap_err();
        assert!(matches!(err, Error::MissingDirectory { .. }));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn two_classes_three_images_each() {
        let dir = tmpdir("classes");
        for (ci, class) in ["alpha", "beta"].iter().enumerate() {
            let cdir = dir.join(class);
            std::fs::create_dir_all(&cdir).unwrap();
            for i in 0..3 {
                write_png(&cdir.join(format!("img{i}.png")), (ci * 100 + i * 10) as u8, 8);
            }
        }
        let ds = load_image_folder::<f32>(&dir, &TransformSpec::default()).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.labels, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(ds.class_names, vec!["alpha", "beta"]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn flat_folder_is_unlabeled_and_sorted() {
        let dir = tmpdir("flat");
        write_png(&dir.join("b.png"), 10, 8);
        write_png(&dir.join("a.png"), 20, 8);
        let ds = load_image_folder::<f32>(&dir, &TransformSpec::default()).unwrap();
        assert!(ds.labels.is_empty());
        assert_eq!(ds.sample_ids, vec!["a.png", "b.png"]);
        // a.png has shade 20.
        assert!((ds.images[[0, 0, 0, 0]] - 20.0 / 255.0).abs() < 1e-6);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn resize_produces_requested_shape() {
        let dir = tmpdir("resize");
        write_png(&dir.join("a.png"), 128, 10);
        write_png(&dir.join("b.png"), 64, 20);
        let spec = TransformSpec {
            resize: Some((8, 8)),
            ..TransformSpec::default()
        };
        let ds = load_image_folder::<f32>(&dir, &spec).unwrap();
        assert_eq!(ds.images.shape(), &[2, 3, 8, 8]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unreadable_image_names_the_file() {
        let dir = tmpdir("bad");
        std::fs::write(dir.join("broken.png"), b"not a png").unwrap();
        let err = load_image_folder::<f32>(&dir, &TransformSpec::default()).unwrap_err();
        match err {
            Error::UnreadableImage { path, .. } => {
                assert!(path.ends_with("broken.png"));
            }
            other => panic!("expected UnreadableImage, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
