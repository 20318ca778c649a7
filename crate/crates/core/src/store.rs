//! On-disk session layout:
//!
//! ```text
//! <data_dir>/<session_id>/manifest.json
//! <data_dir>/<session_id>/segment_00000.json ...
//! <data_dir>/<session_id>/media/img_<t_ms>.ppm
//! <data_dir>/<session_id>/media/aud_<t_ms>.wav
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{SegmentFile, SessionManifest};
use crate::segment::{json_error, parse_segment, to_canonical_json, SegmentError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("segment {index}: {source}")]
    Segment {
        index: u32,
        #[source]
        source: SegmentError,
    },
    #[error("manifest: {0}")]
    Manifest(SegmentError),
    #[error("media path `{0}` escapes the session directory")]
    BadMediaPath(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct SessionDir {
    root: PathBuf,
    session_id: String,
}

impl SessionDir {
    pub fn new(data_dir: impl AsRef<Path>, session_id: &str) -> Self {
        Self {
            root: data_dir.as_ref().join(session_id),
            session_id: session_id.to_string(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn exists(&self) -> bool {
        self.manifest_path().is_file()
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.root.join("checkpoint.json")
    }

    pub fn segment_path(&self, index: u32) -> PathBuf {
        self.root.join(segment_file_name(index))
    }

    pub fn media_dir(&self) -> PathBuf {
        self.root.join("media")
    }

    /// Resolves a `media/...` path from a record, refusing anything that
    /// would leave the session directory.
    pub fn media_path(&self, rel: &str) -> Result<PathBuf, StoreError> {
        if !crate::segment::media_path_ok(rel) {
            return Err(StoreError::BadMediaPath(rel.to_string()));
        }
        Ok(self.root.join(rel))
    }

    pub fn create(&self) -> Result<(), StoreError> {
        let media = self.media_dir();
        fs::create_dir_all(&media).map_err(io_err(&media))
    }

    pub fn read_manifest(&self) -> Result<SessionManifest, StoreError> {
        let path = self.manifest_path();
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(self.session_id.clone()))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Manifest(json_error(&bytes, &e)))
    }

    pub fn write_manifest(&self, manifest: &SessionManifest) -> Result<(), StoreError> {
        let bytes = to_canonical_json(manifest).expect("manifest always serializes");
        write_atomic(&self.manifest_path(), &bytes)
    }

    pub fn read_segment_bytes(&self, index: u32) -> Result<Vec<u8>, StoreError> {
        let path = self.segment_path(index);
        fs::read(&path).map_err(io_err(&path))
    }

    pub fn read_segment(&self, index: u32) -> Result<SegmentFile, StoreError> {
        let bytes = self.read_segment_bytes(index)?;
        parse_segment(&bytes).map_err(|source| StoreError::Segment { index, source })
    }

    /// Number of consecutive segment files present, starting at index 0.
    pub fn segment_files_on_disk(&self) -> u32 {
        let mut n = 0;
        while self.segment_path(n).is_file() {
            n += 1;
        }
        n
    }
}

pub fn segment_file_name(index: u32) -> String {
    format!("segment_{index:05}.json")
}

pub fn image_media_name(t_ms: u64) -> String {
    format!("media/img_{t_ms}.ppm")
}

pub fn audio_media_name(t_ms: u64) -> String {
    format!("media/aud_{t_ms}.wav")
}

/// Lists session ids under a data directory (directories holding a manifest).
pub fn list_sessions(data_dir: &Path) -> Result<Vec<String>, StoreError> {
    let entries = match fs::read_dir(data_dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(data_dir)(e)),
    };
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io_err(data_dir))?;
        if entry.path().join("manifest.json").is_file() {
            if let Some(name) = entry.file_name().to_str() {
                ids.push(name.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_names() {
        let d = SessionDir::new("/data", "abc");
        assert_eq!(d.segment_path(3), PathBuf::from("/data/abc/segment_00003.json"));
        assert_eq!(image_media_name(1000), "media/img_1000.ppm");
        assert_eq!(audio_media_name(0), "media/aud_0.wav");
        assert!(d.media_path("media/img_0.ppm").is_ok());
        assert!(d.media_path("../other/manifest.json").is_err());
        assert!(d.media_path("/etc/passwd").is_err());
    }

    #[test]
    fn missing_session_is_not_found() {
        let tmp = tempfile::tempdir().unwrap();
        let d = SessionDir::new(tmp.path(), "nope");
        assert!(matches!(d.read_manifest(), Err(StoreError::NotFound(_))));
        assert_eq!(list_sessions(tmp.path()).unwrap(), Vec::<String>::new());
    }
}
