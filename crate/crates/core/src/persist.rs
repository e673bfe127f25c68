//! Versioned JSON model files: `{"format": ..., "version": ..., "model": ...}`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("model file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("expected a {expected:?} model file, found {found:?}")]
    Format { expected: String, found: String },
    #[error("unsupported model file version {found} (expected {expected})")]
    Version { expected: u32, found: u64 },
}

#[derive(Serialize)]
struct EnvelopeRef<'a, T> {
    format: &'a str,
    version: u32,
    model: &'a T,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u64,
    model: serde_json::Value,
}

pub fn to_json<T: Serialize>(format: &str, model: &T) -> Result<String, PersistError> {
    Ok(serde_json::to_string(&EnvelopeRef {
        format,
        version: MODEL_FILE_VERSION,
        model,
    })?)
}

pub fn from_json<T: DeserializeOwned>(format: &str, json: &str) -> Result<T, PersistError> {
    unwrap_envelope(format, serde_json::from_str(json)?)
}

fn unwrap_envelope<T: DeserializeOwned>(format: &str, header: Header) -> Result<T, PersistError> {
    if header.format != format {
        return Err(PersistError::Format {
            expected: format.into(),
            found: header.format,
        });
    }
    if header.version != u64::from(MODEL_FILE_VERSION) {
        return Err(PersistError::Version {
            expected: MODEL_FILE_VERSION,
            found: header.version,
        });
    }
    Ok(serde_json::from_value(header.model)?)
}

pub fn save<T: Serialize>(
    path: impl AsRef<Path>,
    format: &str,
    model: &T,
) -> Result<(), PersistError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(
        &mut w,
        &EnvelopeRef {
            format,
            version: MODEL_FILE_VERSION,
            model,
        },
    )?;
    w.flush()?;
    Ok(())
}

pub fn load<T: DeserializeOwned>(path: impl AsRef<Path>, format: &str) -> Result<T, PersistError> {
    let header: Header = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    unwrap_envelope(format, header)
}
