//! `<root>/<class_name>/<file>.ppm` dataset trees.

use std::fs;
use std::path::Path;

use hgtnet_core::data::{ImageSample, Split};

use crate::error::{HgtError, Result};
use crate::{fsio, ppm};

fn list_dir(dir: &Path) -> Result<Vec<fs::DirEntry>> {
    let rd = fs::read_dir(dir).map_err(|e| HgtError::io(dir, e))?;
    let mut entries = rd.collect::<std::io::Result<Vec<_>>>().map_err(|e| HgtError::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

fn is_ppm(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
}

/// Load every class directory under `root`. Labels follow the byte order of
/// the directory names; sample ids are `<class>/<file>`.
pub fn load_tree(root: &Path) -> Result<(Vec<String>, Vec<ImageSample>)> {
    let mut names = Vec::new();
    let mut samples = Vec::new();
    for class_dir in list_dir(root)? {
        let path = class_dir.path();
        if !path.is_dir() {
            continue;
        }
        let name = class_dir
            .file_name()
            .into_string()
            .map_err(|n| HgtError::Data(format!("class directory {n:?} is not UTF-8")))?;
        let label = names.len();
        let before = samples.len();
        for file in list_dir(&path)? {
            let fpath = file.path();
            if !fpath.is_file() || !is_ppm(&fpath) {
                continue;
            }
            let bytes = fsio::read(&fpath)?;
            let image = ppm::decode(&bytes).map_err(|msg| HgtError::Image { path: fpath.clone(), msg })?;
            samples.push(ImageSample {
                id: format!("{name}/{}", file.file_name().to_string_lossy()),
                image,
                label,
                split: Split::Train,
            });
        }
        if samples.len() == before {
            return Err(HgtError::Data(format!("class directory {} holds no .ppm files", path.display())));
        }
        names.push(name);
    }
    if names.is_empty() {
        return Err(HgtError::Data(format!("{} has no class directories", root.display())));
    }
    Ok((names, samples))
}

/// Write each sample to `<root>/<class name>/<basename of id>.ppm`.
pub fn write_tree(root: &Path, class_names: &[String], samples: &[ImageSample]) -> Result<usize> {
    for s in samples {
        let class = class_names
            .get(s.label)
            .ok_or_else(|| HgtError::Data(format!("sample `{}` has label {} without a class name", s.id, s.label)))?;
        let base = s.id.rsplit('/').next().unwrap_or(&s.id);
        let base = base.strip_suffix(".ppm").unwrap_or(base);
        fsio::write_atomic(&root.join(class).join(format!("{base}.ppm")), &ppm::encode(&s.image))?;
    }
    Ok(samples.len())
}
