//! Dataset files: a header line followed by one query group per line.
//!
//! ```text
//! {"format":"permurank.dataset","version":1,"split":"train","count":800,"world":{...}}
//! {"group_id":0,"query_id":0,"query":[...],"items":[[...],...],...}
//! ```
//!
//! Paths ending in `.gz` are gzip-compressed transparently. Unknown keys in
//! the header, the world block or a group are dropped with a warning so newer
//! writers stay readable.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Dataset, QueryGroup, Split, SyntheticWorldConfig};
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "permurank.dataset";
pub const DATASET_VERSION: u32 = 1;

const HEADER_KEYS: &[&str] = &["format", "version", "split", "count", "world"];
const WORLD_KEYS: &[&str] = &[
    "query_dim",
    "item_dim",
    "context_dim",
    "list_len",
    "n_brands",
    "n_colors",
    "relevance_scale",
    "relevance_bias",
    "relevance_noise",
    "logging_noise",
    "label_mode",
    "logged_per_query",
    "examination",
    "behavioral",
    "seed",
];
const GROUP_KEYS: &[&str] = &[
    "group_id",
    "query_id",
    "query",
    "context",
    "items",
    "brands",
    "colors",
    "rel_logits",
    "logged",
    "label",
    "clicks",
    "logged_purchase",
];

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    split: Split,
    count: usize,
    world: SyntheticWorldConfig,
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Reads a whole text file, decompressing `.gz` paths.
pub(crate) fn read_text(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    if is_gz(path) {
        GzDecoder::new(file).read_to_end(&mut buf)
    } else {
        BufReader::new(file).read_to_end(&mut buf)
    }
    .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

/// Writes `bytes`, gzip-compressing `.gz` paths. The gzip header carries no
/// timestamp, so output is reproducible.
pub(crate) fn write_text(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let res = if is_gz(path) {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes).and_then(|_| enc.finish().map(drop))
    } else {
        let mut file = file;
        file.write_all(bytes)
    };
    res.map_err(|e| Error::io(path, e))
}

/// Serializes a dataset to its JSONL text.
pub fn write_dataset(dataset: &Dataset) -> Result<String> {
    let header = Header {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_VERSION,
        split: dataset.split,
        count: dataset.groups.len(),
        world: dataset.world.clone(),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for g in &dataset.groups {
        out.push_str(&serde_json::to_string(g)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), write_dataset(dataset)?.as_bytes())
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = read_text(path)?;
    read_dataset(&bytes[..], &path.display().to_string())
}

/// Removes keys outside `known`, warning once per key per file.
pub(crate) fn strip_unknown(map: &mut Map<String, Value>, known: &[&str], what: &str, warned: &mut BTreeSet<String>) {
    let unknown: Vec<String> = map.keys().filter(|k| !known.contains(&k.as_str())).cloned().collect();
    for key in unknown {
        map.remove(&key);
        if warned.insert(format!("{what}.{key}")) {
            log::warn!("ignoring unknown field `{key}` in {what}");
        }
    }
}

/// Parses one JSON object line, reporting failures against `line`.
pub(crate) fn parse_object(text: &str, origin: &str, line: usize) -> Result<Map<String, Value>> {
    let parse_err = |message: String| Error::Parse {
        what: origin.to_string(),
        line,
        message,
    };
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(parse_err("expected a JSON object".into())),
        Err(e) => Err(parse_err(e.to_string())),
    }
}

pub(crate) fn from_object<T: serde::de::DeserializeOwned>(map: Map<String, Value>, origin: &str, line: usize) -> Result<T> {
    serde_json::from_value(Value::Object(map)).map_err(|e| Error::Parse {
        what: origin.to_string(),
        line,
        message: e.to_string(),
    })
}

/// Checks the `format`/`version` pair of a header object.
pub(crate) fn check_format(map: &Map<String, Value>, format: &str, version: u32, origin: &str) -> Result<()> {
    let found_format = map.get("format").and_then(Value::as_str);
    if found_format != Some(format) {
        return Err(Error::Parse {
            what: origin.to_string(),
            line: 1,
            message: format!("expected a `{format}` header line"),
        });
    }
    let found = map.get("version").and_then(Value::as_u64).ok_or_else(|| Error::Parse {
        what: origin.to_string(),
        line: 1,
        message: "header has no integer version".into(),
    })?;
    if found != u64::from(version) {
        return Err(Error::SchemaVersion {
            what: origin.to_string(),
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: version,
        });
    }
    Ok(())
}

/// Parses dataset JSONL from any reader. `origin` names the source in errors.
pub fn read_dataset<R: BufRead>(reader: R, origin: &str) -> Result<Dataset> {
    let mut warned = BTreeSet::new();
    let mut lines = reader.lines().enumerate();
    let header_line = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::io(origin, e))?,
        None => return Err(Error::Data(format!("{origin}: empty dataset file"))),
    };
    let mut header = parse_object(&header_line, origin, 1)?;
    check_format(&header, DATASET_FORMAT, DATASET_VERSION, origin)?;
    strip_unknown(&mut header, HEADER_KEYS, "dataset header", &mut warned);
    if let Some(Value::Object(world)) = header.get_mut("world") {
        strip_unknown(world, WORLD_KEYS, "world config", &mut warned);
    }
    let header: Header = from_object(header, origin, 1)?;
    header.world.validate().map_err(|e| Error::Data(format!("{origin}: invalid world config: {e}")))?;

    let mut groups = Vec::with_capacity(header.count.min(1 << 16));
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(origin, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut obj = parse_object(&line, origin, lineno)?;
        strip_unknown(&mut obj, GROUP_KEYS, "query group", &mut warned);
        let group: QueryGroup = from_object(obj, origin, lineno)?;
        group.validate(&header.world).map_err(|e| Error::Parse {
            what: origin.to_string(),
            line: lineno,
            message: e.to_string(),
        })?;
        groups.push(group);
    }
    if groups.len() != header.count {
        return Err(Error::Data(format!(
            "{origin}: header announces {} groups but {} were read",
            header.count,
            groups.len()
        )));
    }
    Ok(Dataset {
        world: header.world,
        split: header.split,
        groups,
    })
}

/// Writes the three split files into `dir`.
pub fn save_splits(splits: &super::DatasetSplits, dir: impl AsRef<Path>, gzip: bool) -> Result<()> {
    let dir = dir.as_ref();
    for ds in [&splits.train, &splits.val, &splits.test] {
        let mut name = ds.split.file_name().to_string();
        if gzip {
            name.push_str(".gz");
        }
        save(ds, dir.join(name))?;
    }
    Ok(())
}

/// Loads `split` from `dir`, preferring the plain file over `.gz`.
pub fn load_split(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let plain = dir.as_ref().join(split.file_name());
    if plain.exists() {
        return load(plain);
    }
    let gz = dir.as_ref().join(format!("{}.gz", split.file_name()));
    if gz.exists() {
        return load(gz);
    }
    Err(Error::Data(format!("no {} file in {}", split.file_name(), dir.as_ref().display())))
}
