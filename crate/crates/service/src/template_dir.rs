//! Loads system-instruction overrides from a directory of `<name>.txt` files.

use std::path::Path;

use cpe_core::templates::{TemplateError, TemplateId, TemplateSet};

#[derive(Debug, thiserror::Error)]
pub enum TemplateDirError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{file}: {source}")]
    Invalid { file: String, source: TemplateError },
}

/// Starts from the built-in texts and replaces each one that has a file in
/// `dir`. Other files are ignored.
pub fn load_template_dir(dir: &Path) -> Result<TemplateSet, TemplateDirError> {
    let mut set = TemplateSet::default();
    for id in TemplateId::ALL {
        let path = dir.join(format!("{}.txt", id.file_stem()));
        let body = match std::fs::read_to_string(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
            Err(source) => return Err(TemplateDirError::Io { path: path.display().to_string(), source }),
        };
        let body = body.strip_suffix('\n').unwrap_or(&body).to_string();
        set = set
            .with_override(id, body)
            .map_err(|source| TemplateDirError::Invalid { file: path.display().to_string(), source })?;
    }
    Ok(set)
}

/// Writes the built-in texts to `dir`, one file per template.
pub fn write_template_dir(dir: &Path, set: &TemplateSet) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for id in TemplateId::ALL {
        std::fs::write(dir.join(format!("{}.txt", id.file_stem())), format!("{}\n", set.body(id)))?;
    }
    Ok(())
}
