use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, SubsecRound, Utc};
use flate2::read::MultiGzDecoder;
use rayon::prelude::*;
use serde::Deserialize;

use super::PostRecord;
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct RawPost {
    user: String,
    ts: String,
    text: Option<String>,
}

/// Posts parsed from one input file.
#[derive(Debug, Clone)]
pub struct FileIngest {
    pub path: PathBuf,
    pub posts: Vec<PostRecord>,
    pub skipped: usize,
}

pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    let ts = DateTime::parse_from_rfc3339(raw)
        .map(|t| t.with_timezone(&Utc))
        .or_else(|_| {
            NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S%.f").map(|n| n.and_utc())
        })
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S").map(|n| n.and_utc()))
        .ok()?;
    Some(ts.trunc_subsecs(0))
}

fn parse_line(line: &str) -> Option<PostRecord> {
    let raw: RawPost = serde_json::from_str(line).ok()?;
    if raw.user.is_empty() {
        return None;
    }
    Some(PostRecord {
        user_id: raw.user,
        timestamp: parse_timestamp(&raw.ts)?,
        text: raw.text.unwrap_or_default(),
    })
}

fn open(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path).map_err(|e| Error::read(path, e))?;
    if path.extension().is_some_and(|ext| ext == "gz") {
        Ok(Box::new(MultiGzDecoder::new(file)))
    } else {
        Ok(Box::new(file))
    }
}

/// Reads newline-delimited JSON posts (`{"user", "ts", "text"}`), gunzipping
/// `.gz` files. Malformed lines are skipped and counted.
pub fn read_posts(path: &Path) -> Result<FileIngest> {
    let reader = BufReader::new(open(path)?);
    let mut posts = Vec::new();
    let mut skipped = 0;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::read(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Some(post) => posts.push(post),
            None => skipped += 1,
        }
    }
    Ok(FileIngest {
        path: path.to_owned(),
        posts,
        skipped,
    })
}

/// Reads every file, in parallel, returning results in input order.
pub fn read_all(paths: &[PathBuf]) -> Result<Vec<FileIngest>> {
    paths.par_iter().map(|p| read_posts(p)).collect()
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use flate2::write::GzEncoder;
    use flate2::Compression;

    use super::*;

    const LINES: &str = r#"{"user":"u1","ts":"2012-08-01T10:00:00Z","text":"hello world"}
not json
{"user":"","ts":"2012-08-01T10:00:00Z","text":"no user"}
{"user":"u2","ts":"yesterday","text":"bad ts"}

{"user":"u2","ts":"2012-08-01T11:30:00.250+00:00","text":"second"}
"#;

    #[test]
    fn skips_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("posts.jsonl");
        std::fs::write(&path, LINES).unwrap();
        let ingest = read_posts(&path).unwrap();
        assert_eq!(ingest.posts.len(), 2);
        assert_eq!(ingest.skipped, 3);
        assert_eq!(
            ingest.posts[1].timestamp.to_rfc3339(),
            "2012-08-01T11:30:00+00:00"
        );
    }

    #[test]
    fn reads_gzip_by_extension() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("posts.jsonl.gz");
        let mut enc = GzEncoder::new(File::create(&path).unwrap(), Compression::default());
        enc.write_all(LINES.as_bytes()).unwrap();
        enc.finish().unwrap();
        let ingest = read_posts(&path).unwrap();
        assert_eq!(ingest.posts.len(), 2);
    }

    #[test]
    fn unreadable_file_names_path() {
        let err = read_posts(Path::new("/no/such/posts.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/no/such/posts.jsonl"));
    }
}
