//! JSON encoder checkpoints. Floats are written in shortest round-trip form
//! and parsed exactly, so save/load is bitwise lossless.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};

use super::{Encoder, EncoderConfig, ParameterSet};

pub const FORMAT: &str = "avkm-encoder/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderCheckpoint {
    pub format: String,
    pub config: EncoderConfig,
    pub output_dim: usize,
    pub embeddings: EmbeddingTable,
    pub params: ParameterSet,
}

impl EncoderCheckpoint {
    pub fn from_encoder(encoder: &Encoder) -> Self {
        EncoderCheckpoint {
            format: FORMAT.to_string(),
            config: encoder.config.clone(),
            output_dim: encoder.output_dim(),
            embeddings: (*encoder.embeddings).clone(),
            params: encoder.params.clone(),
        }
    }

    pub fn into_encoder(self) -> Result<Encoder> {
        self.check()?;
        Ok(Encoder::from_parts(
            self.config,
            Arc::new(self.embeddings),
            self.params,
        ))
    }

    /// Rebuilds the encoder on top of an existing shared word-vector table,
    /// which must match the stored one exactly.
    pub fn into_encoder_sharing(self, table: &Arc<EmbeddingTable>) -> Result<Encoder> {
        self.check()?;
        if **table != self.embeddings {
            return Err(Error::Checkpoint(
                "checkpoint word vectors differ from the shared table".into(),
            ));
        }
        Ok(Encoder::from_parts(self.config, Arc::clone(table), self.params))
    }

    fn check(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format {:?}, expected {FORMAT:?}",
                self.format
            )));
        }
        if self.output_dim != self.config.output_dim() {
            return Err(Error::Checkpoint(format!(
                "output dimension {} disagrees with configuration ({})",
                self.output_dim,
                self.config.output_dim()
            )));
        }
        if !self.params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter values".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

impl Encoder {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        EncoderCheckpoint::load(path)?.into_encoder()
    }
}
