//! JSON Lines dataset files: one header line with vocabularies and synonyms,
//! then one `ImageRecord` per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, ImageRecord, Vocabulary};
use crate::scenegraph::SynonymMap;

const FORMAT_TAG: &str = "sgground-dataset";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    vocab_objects: Vec<String>,
    vocab_attributes: Vec<String>,
    vocab_predicates: Vec<String>,
    #[serde(default)]
    synonyms: SynonymMap,
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Dataset, DatasetError> {
    let mut header: Option<Header> = None;
    let mut images = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DatasetError::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let json_err = |e: serde_json::Error| DatasetError::Json {
            line: line_no,
            message: e.to_string(),
        };
        if header.is_none() {
            let h: Header = serde_json::from_str(&line).map_err(json_err)?;
            if h.format != FORMAT_TAG || h.version != FORMAT_VERSION {
                return Err(DatasetError::Json {
                    line: line_no,
                    message: format!(
                        "unsupported format {:?} version {} (expected {FORMAT_TAG:?} {FORMAT_VERSION})",
                        h.format, h.version
                    ),
                });
            }
            header = Some(h);
            continue;
        }
        let img: ImageRecord = serde_json::from_str(&line).map_err(json_err)?;
        images.push(img);
    }
    let header = header.ok_or(DatasetError::MissingHeader)?;
    let dataset = Dataset {
        images,
        vocab: Vocabulary::new(header.vocab_objects, header.vocab_attributes, header.vocab_predicates)?,
        synonyms: header.synonyms,
    };
    dataset.validate()?;
    Ok(dataset)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(BufReader::new(file))
}

pub fn write_dataset<W: Write>(d: &Dataset, mut w: W) -> std::io::Result<()> {
    let header = Header {
        format: FORMAT_TAG.to_string(),
        version: FORMAT_VERSION,
        vocab_objects: d.vocab.objects().to_vec(),
        vocab_attributes: d.vocab.attributes().to_vec(),
        vocab_predicates: d.vocab.predicates().to_vec(),
        synonyms: d.synonyms.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for img in &d.images {
        serde_json::to_writer(&mut w, img)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_dataset(d, BufWriter::new(file)).map_err(io_err)
}

pub fn to_jsonl_string(d: &Dataset) -> String {
    let mut buf = Vec::new();
    write_dataset(d, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}
