//! Annotation JSON and `ODFS` feature files.
//!
//! `ODFS` layout: `"ODFS" | u32 dim | u32 count | f32[count * dim]`, all
//! little-endian, row-major; row `i` is the window ending at frame `i`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, FeatureStream, VideoAnnotation};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"ODFS";

const ANNOTATIONS_FILE: &str = "annotations.json";
const FEATURES_DIR: &str = "features";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub videos: Vec<VideoAnnotation>,
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<AnnotationFile> {
    let text = fs::read_to_string(path.as_ref())?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.as_ref().display())))
}

pub fn write_annotations(path: impl AsRef<Path>, file: &AnnotationFile) -> Result<()> {
    let mut text = serde_json::to_string_pretty(file)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_feature_stream<W: Write>(mut w: W, fs: &FeatureStream) -> Result<()> {
    let dim = u32::try_from(fs.dim).map_err(|_| Error::Format("dim exceeds u32".into()))?;
    let count = u32::try_from(fs.len()).map_err(|_| Error::Format("count exceeds u32".into()))?;
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    let mut buf = Vec::with_capacity(fs.len() * fs.dim * 4);
    for row in &fs.frames {
        for v in row {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_feature_stream<R: Read>(mut r: R, video_id: &str) -> Result<FeatureStream> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format(format!("{video_id}: not an ODFS feature file")));
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != dim * count * 4 {
        return Err(Error::Format(format!(
            "{video_id}: expected {} payload bytes for {count}x{dim}, found {}",
            dim * count * 4,
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let frames = if dim == 0 {
        vec![Vec::new(); count]
    } else {
        values.chunks_exact(dim).map(<[f64]>::to_vec).collect()
    };
    FeatureStream::new(video_id, dim, frames)
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(Error::Format(format!("video id {id:?} is not usable as a file name")));
    }
    Ok(())
}

/// Writes `annotations.json` and `features/<id>.odfs` under `dir`.
pub fn write_corpus_dir(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join(FEATURES_DIR))?;
    write_annotations(
        dir.join(ANNOTATIONS_FILE),
        &AnnotationFile {
            videos: corpus.videos.clone(),
        },
    )?;
    for stream in &corpus.streams {
        check_id(&stream.video_id)?;
        let path = dir.join(FEATURES_DIR).join(format!("{}.odfs", stream.video_id));
        let file = fs::File::create(path)?;
        write_feature_stream(std::io::BufWriter::new(file), stream)?;
    }
    Ok(())
}

/// Reads a directory written by [`write_corpus_dir`].
pub fn read_corpus_dir(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let ann = read_annotations(dir.join(ANNOTATIONS_FILE))?;
    let mut streams = Vec::with_capacity(ann.videos.len());
    for v in &ann.videos {
        check_id(&v.id)?;
        let path = dir.join(FEATURES_DIR).join(format!("{}.odfs", v.id));
        let file = fs::File::open(&path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        streams.push(read_feature_stream(std::io::BufReader::new(file), &v.id)?);
    }
    Corpus::new(ann.videos, streams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_corpus, SynthConfig};

    #[test]
    fn feature_stream_layout() {
        let fs = FeatureStream::new("v", 2, vec![vec![1.0, -2.5], vec![0.25, 3.0]]).unwrap();
        let mut bytes = Vec::new();
        write_feature_stream(&mut bytes, &fs).unwrap();
        assert_eq!(&bytes[..4], b"ODFS");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[16..20], &(-2.5f32).to_le_bytes());
        assert_eq!(bytes.len(), 12 + 16);
        let back = read_feature_stream(bytes.as_slice(), "v").unwrap();
        assert_eq!(back, fs);
    }

    #[test]
    fn truncated_stream_is_rejected() {
        let fs = FeatureStream::new("v", 3, vec![vec![1.0; 3]; 4]).unwrap();
        let mut bytes = Vec::new();
        write_feature_stream(&mut bytes, &fs).unwrap();
        bytes.pop();
        assert!(matches!(read_feature_stream(bytes.as_slice(), "v"), Err(Error::Format(_))));
        assert!(read_feature_stream(&b"ODNN\0\0\0\0\0\0\0\0"[..], "v").is_err());
    }

    #[test]
    fn annotation_json_shape() {
        let text = r#"{"videos":[{"id":"a","fps":10.0,"num_frames":50,
            "instances":[{"class":2,"start_sec":1.0,"end_sec":2.5,"ambiguous_start":true}]}]}"#;
        let file: AnnotationFile = serde_json::from_str(text).unwrap();
        assert_eq!(file.videos[0].instances[0].class, 2);
        assert!(file.videos[0].instances[0].ambiguous_start);
        let gt = file.videos[0].ground_truths();
        assert!(gt[0].ambiguous);
        assert_eq!(gt[0].as_time, 1.0);
    }

    #[test]
    fn corpus_directory_round_trip() {
        let s = synth_corpus(&SynthConfig::new(4, 2, 3, 3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus_dir(&s.corpus, dir.path()).unwrap();
        let back = read_corpus_dir(dir.path()).unwrap();
        assert_eq!(back, s.corpus);
    }
}
