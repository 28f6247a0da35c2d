use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, Example};
use crate::error::{Error, Result};

const COLUMNS: [&str; 3] = ["text", "label", "language"];

/// CSV is RFC 4180 with quoting; TSV has no quoting and no embedded tabs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Csv,
    Tsv,
}

impl CorpusFormat {
    /// Guesses from the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => CorpusFormat::Tsv,
            _ => CorpusFormat::Csv,
        }
    }

    fn reader_builder(self) -> csv::ReaderBuilder {
        let mut b = csv::ReaderBuilder::new();
        b.has_headers(true).flexible(true);
        if self == CorpusFormat::Tsv {
            b.delimiter(b'\t').quoting(false);
        }
        b
    }
}

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(file, format)
}

/// Parses a corpus; label names are indexed in order of first appearance.
pub fn read_corpus(reader: impl Read, format: CorpusFormat) -> Result<Corpus> {
    let mut rdr = format.reader_builder().from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut positions = [usize::MAX; 3];
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        if h.is_empty() && headers.len() == 1 {
            break;
        }
        match COLUMNS.iter().position(|c| *c == h) {
            Some(c) => positions[c] = i,
            None => return Err(Error::UnknownColumn(h.to_string())),
        }
    }
    if let Some(missing) = positions.iter().position(|&p| p == usize::MAX) {
        return Err(Error::MissingColumn(COLUMNS[missing].to_string()));
    }

    let mut corpus = Corpus::new(Vec::new());
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            row: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line());
        let field = |col: usize| -> Result<&str> {
            record.get(positions[col]).ok_or_else(|| Error::Parse {
                row,
                message: format!("missing `{}` field", COLUMNS[col]),
            })
        };
        let text = field(0)?.to_string();
        let label_name = field(1)?;
        let language = field(2)?.trim();
        if label_name.is_empty() {
            return Err(Error::Parse {
                row,
                message: "empty `label` field".into(),
            });
        }
        if language.is_empty() {
            return Err(Error::Parse {
                row,
                message: "empty `language` field".into(),
            });
        }
        let label = match corpus.label_names.iter().position(|n| n == label_name) {
            Some(i) => i,
            None => {
                corpus.label_names.push(label_name.to_string());
                corpus.label_names.len() - 1
            }
        };
        corpus.examples.push(Example {
            text,
            label,
            language: language.to_string(),
        });
    }
    Ok(corpus)
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>, format: CorpusFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut b = csv::WriterBuilder::new();
    if format == CorpusFormat::Tsv {
        b.delimiter(b'\t').quote_style(csv::QuoteStyle::Never);
    }
    let mut w = b.from_writer(file);
    let fail = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(COLUMNS).map_err(fail)?;
    for ex in corpus.examples() {
        if format == CorpusFormat::Tsv && ex.text.contains(['\t', '\n', '\r']) {
            return Err(Error::InvalidConfig(format!(
                "text {:?} cannot be written as TSV",
                ex.text
            )));
        }
        w.write_record([
            ex.text.as_str(),
            corpus.label_names()[ex.label].as_str(),
            ex.language.as_str(),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str, f: CorpusFormat) -> Result<Corpus> {
        read_corpus(s.as_bytes(), f)
    }

    #[test]
    fn first_appearance_labels() {
        let c = parse("text,label,language\nx,A,eng\ny,B,eng\nz,A,hin\n", CorpusFormat::Csv).unwrap();
        assert_eq!(c.label_names(), &["A".to_string(), "B".to_string()]);
        let labels: Vec<_> = c.examples().iter().map(|e| e.label).collect();
        assert_eq!(labels, vec![0, 1, 0]);
    }

    #[test]
    fn header_only_is_empty() {
        let c = parse("text,label,language\n", CorpusFormat::Csv).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn missing_language_names_row() {
        match parse("text,label,language\nx,A,eng\ny,B\n", CorpusFormat::Csv) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        match parse("text,label,language\nx,A,\n", CorpusFormat::Csv) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn column_checks() {
        assert!(matches!(
            parse("text,label,language,extra\n", CorpusFormat::Csv),
            Err(Error::UnknownColumn(c)) if c == "extra"
        ));
        assert!(matches!(
            parse("text,label\n", CorpusFormat::Csv),
            Err(Error::MissingColumn(c)) if c == "language"
        ));
    }

    #[test]
    fn rfc4180_quoting_and_column_order() {
        let c = parse(
            "language,text,label\neng,\"a, \"\"quoted\"\"\nline\",A\n",
            CorpusFormat::Csv,
        )
        .unwrap();
        assert_eq!(c.examples()[0].text, "a, \"quoted\"\nline");
    }

    #[test]
    fn tsv_has_no_quoting() {
        let c = parse("text\tlabel\tlanguage\n\"hi\" there\tA\teng\n", CorpusFormat::Tsv).unwrap();
        assert_eq!(c.examples()[0].text, "\"hi\" there");
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = parse("text,label,language\n\"a,b\",A,eng\nc,B,hin\n", CorpusFormat::Csv).unwrap();
        for f in [CorpusFormat::Csv, CorpusFormat::Tsv] {
            let p = dir.path().join("c.txt");
            write_corpus(&c, &p, f).unwrap();
            assert_eq!(load_corpus(&p, f).unwrap(), c);
        }
    }
}
