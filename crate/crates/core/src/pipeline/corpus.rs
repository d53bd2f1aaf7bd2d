use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::BatchShape;
use crate::backend::TokenId;
use crate::{Error, Result};

/// One pre-tokenised corpus line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<TokenId>,
}

pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("corpus line {}: {e}", i + 1)))?;
        if !ids.insert(doc.doc_id.clone()) {
            return Err(Error::Parse(format!("corpus line {}: duplicate doc_id {:?}", i + 1, doc.doc_id)));
        }
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(Error::Empty("corpus".into()));
    }
    Ok(docs)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file))
}

pub fn write_corpus<W: Write>(mut w: W, docs: &[Document]) -> Result<()> {
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Splits documents, in file order, into sentences of at most
/// `tokens_per_sentence` tokens and deals them into consecutive batches.
/// Pieces shorter than 2 tokens are dropped. Sentences beyond the batch
/// shape are ignored.
pub fn make_batches(docs: &[Document], shape: &BatchShape) -> Result<Vec<Vec<Vec<TokenId>>>> {
    let need = shape.n_batches * shape.sentences_per_batch;
    let sentences: Vec<Vec<TokenId>> = docs
        .iter()
        .flat_map(|d| d.tokens.chunks(shape.tokens_per_sentence))
        .filter(|s| s.len() >= 2)
        .take(need)
        .map(<[TokenId]>::to_vec)
        .collect();
    if sentences.len() < need {
        return Err(Error::Config(format!(
            "corpus yields {} sentences of 2 to {} tokens, the batch shape needs {need}",
            sentences.len(),
            shape.tokens_per_sentence
        )));
    }
    Ok(sentences.chunks(shape.sentences_per_batch).map(<[Vec<TokenId>]>::to_vec).collect())
}
