use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub src_tokens: Vec<usize>,
    pub tgt_tokens: Vec<usize>,
    /// Never stored on disk; regenerated from the id.
    pub features: Option<Tensor>,
}

impl Utterance {
    pub fn new(id: impl Into<String>, src_tokens: Vec<usize>, tgt_tokens: Vec<usize>) -> Self {
        Self {
            id: id.into(),
            src_tokens,
            tgt_tokens,
            features: None,
        }
    }
}

/// Per utterance id, the entity target sequences its hypothesis must contain.
pub type EntityTargets = Vec<(String, Vec<Vec<usize>>)>;

fn join(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_ids(field: &str, path: &Path, line: usize, what: &str) -> Result<Vec<usize>> {
    let err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    if field.trim().is_empty() {
        return Err(err(format!("empty {what} field")));
    }
    field
        .split(' ')
        .map(|t| t.parse().map_err(|_| err(format!("bad {what} token {t:?}"))))
        .collect()
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_corpus(path: &Path, utts: &[Utterance]) -> Result<()> {
    write_lines(
        path,
        utts.iter()
            .map(|u| format!("{}\t{}\t{}", u.id, join(&u.src_tokens), join(&u.tgt_tokens))),
    )
}

pub fn read_corpus(path: &Path) -> Result<Vec<Utterance>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields[0].is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n,
                msg: format!("expected id, src and tgt fields, found {} fields", fields.len()),
            });
        }
        out.push(Utterance::new(
            fields[0],
            parse_ids(fields[1], path, n, "source")?,
            parse_ids(fields[2], path, n, "target")?,
        ));
    }
    Ok(out)
}

pub fn write_entity_sidecar(path: &Path, entities: &EntityTargets) -> Result<()> {
    write_lines(
        path,
        entities
            .iter()
            .flat_map(|(id, seqs)| seqs.iter().map(move |s| format!("{id}\t{}", join(s)))),
    )
}

/// Consecutive lines with the same id are grouped.
pub fn read_entity_sidecar(path: &Path) -> Result<EntityTargets> {
    let text = fs::read_to_string(path)?;
    let mut out: EntityTargets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (id, ids) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "expected id and entity fields".into(),
        })?;
        let seq = parse_ids(ids, path, i + 1, "entity")?;
        match out.last_mut() {
            Some((last, seqs)) if last == id => seqs.push(seq),
            _ => out.push((id.to_string(), vec![seq])),
        }
    }
    Ok(out)
}
