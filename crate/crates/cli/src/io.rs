use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use splitmerge_core::bundle::to_json;
use splitmerge_core::ImageSize;

use crate::error::{CliError, CliResult};

pub const BUNDLE_SUFFIX: &str = ".bundle.json";
pub const STRUCTURE_SUFFIX: &str = ".structure.json";

/// `512` or `640x480` (width by height).
pub fn parse_image(s: &str) -> Result<ImageSize, String> {
    let dim = |v: &str| {
        v.trim()
            .parse::<u32>()
            .map_err(|e| format!("bad image size `{s}`: {e}"))
    };
    let (w, h) = match s.split_once(['x', 'X']) {
        Some((w, h)) => (dim(w)?, dim(h)?),
        None => {
            let n = dim(s)?;
            (n, n)
        }
    };
    if w == 0 || h == 0 {
        return Err(format!("image size `{s}` must be positive"));
    }
    Ok(ImageSize::new(w, h))
}

/// Sample id of `path` if its file name ends with `suffix`.
pub fn sample_id(path: &Path, suffix: &str) -> Option<String> {
    path.file_name()?
        .to_str()?
        .strip_suffix(suffix)
        .map(str::to_string)
}

/// `(id, path)` for every file in `dir` ending with `suffix`, sorted by id.
pub fn list_samples(dir: &Path, suffix: &str) -> CliResult<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::at(dir)(e.into()))? {
        let path = entry?.path();
        if let Some(id) = sample_id(&path, suffix) {
            out.push((id, path));
        }
    }
    out.sort();
    Ok(out)
}

/// A single file keyed by its id, or every matching file in a directory.
pub fn collect_inputs(path: &Path, suffix: &str) -> CliResult<Vec<(String, PathBuf)>> {
    if path.is_dir() {
        let found = list_samples(path, suffix)?;
        if found.is_empty() {
            return Err(CliError::Input(format!(
                "{}: no *{suffix} files",
                path.display()
            )));
        }
        return Ok(found);
    }
    let id = sample_id(path, suffix)
        .or_else(|| {
            path.file_stem()
                .and_then(|s| s.to_str())
                .map(str::to_string)
        })
        .unwrap_or_default();
    Ok(vec![(id, path.to_path_buf())])
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult {
    let s = to_json(v).map_err(CliError::at(path))?;
    fs::write(path, s).map_err(|e| CliError::at(path)(e.into()))
}

pub fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| CliError::at(dir)(e.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_sizes() {
        assert_eq!(parse_image("512").unwrap(), ImageSize::new(512, 512));
        assert_eq!(parse_image("640x480").unwrap(), ImageSize::new(640, 480));
        assert!(parse_image("0").is_err());
        assert!(parse_image("12y4").is_err());
    }

    #[test]
    fn ids_strip_the_suffix() {
        let p = Path::new("out/sample_00003.structure.json");
        assert_eq!(
            sample_id(p, STRUCTURE_SUFFIX).as_deref(),
            Some("sample_00003")
        );
        assert_eq!(sample_id(p, BUNDLE_SUFFIX), None);
    }
}
