//! Writing datasets to disk.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use polyforget_core::tasks::{export_jsonl, ingest_massive, Vitality};

use crate::error::{HarnessError, Result};
use crate::report::{write_json, write_languages};
use crate::workload::Workload;

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

/// One MASSIVE-style JSON-lines file per language plus `languages.json`.
/// Returns the files written.
pub fn write_workload(work: &Workload, out: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut written = Vec::new();
    for ds in &work.datasets {
        let name = format!("{}.jsonl", ds.lang_id());
        let path = out.join(&name);
        let mut w = create(&path)?;
        export_jsonl(&mut w, std::slice::from_ref(ds), &work.schema, |t| {
            work.vocab.get(t).cloned().unwrap_or_else(|| "<unk>".into())
        })?;
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
        written.push(name);
    }
    write_languages(out, &work.languages())?;
    Ok(written)
}

/// Ingests a MASSIVE-style file into one JSON dataset per locale, the
/// vocabulary (one word per line, line number = id) and the label names.
pub fn ingest_to_dir(
    input: &Path,
    out: &Path,
    max_len: usize,
    vitality: &BTreeMap<String, Vitality>,
) -> Result<Vec<String>> {
    let corpus = ingest_massive(input, max_len, vitality)?;
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut written = Vec::new();
    for (locale, ds) in &corpus.datasets {
        let name = format!("{locale}.json");
        write_json(&out.join(&name), ds)?;
        written.push(name);
    }
    let vocab_path = out.join("vocab.txt");
    let mut w = create(&vocab_path)?;
    for word in corpus.vocab.words() {
        writeln!(w, "{word}").map_err(|e| HarnessError::io(&vocab_path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(&vocab_path, e))?;
    write_json(&out.join("labels.json"), &corpus.schema.label_names())?;
    written.extend(["vocab.txt".to_string(), "labels.json".to_string()]);
    Ok(written)
}
