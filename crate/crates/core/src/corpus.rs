//! JSONL corpus files: one `NBestList` object per line.

use std::path::Path;

use crate::error::{Error, Result};
use crate::integration::NBestList;

/// Parses JSONL text. Blank lines are skipped; any other line must be a
/// valid record or the whole parse fails with its line number.
pub fn parse_corpus(text: &str, origin: &str) -> Result<Vec<NBestList>> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: idx + 1,
            message,
        };
        let record: NBestList = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        record.validate().map_err(|e| err(e.to_string()))?;
        records.push(record);
    }
    Ok(records)
}

pub fn load_corpus(path: &Path) -> Result<Vec<NBestList>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, &path.display().to_string())
}

pub fn corpus_to_jsonl(records: &[NBestList]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_corpus(path: &Path, records: &[NBestList]) -> Result<()> {
    std::fs::write(path, corpus_to_jsonl(records)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integration::Hypothesis;

    #[test]
    fn empty_text_is_empty_corpus() {
        assert!(parse_corpus("", "c").unwrap().is_empty());
        assert!(parse_corpus("\n\n", "c").unwrap().is_empty());
    }

    #[test]
    fn round_trip() {
        let records = vec![
            NBestList {
                id: "a".into(),
                transcription: Some("play muse".into()),
                domain: "Music".into(),
                intent: "PlayArtist".into(),
                nbest: vec![
                    Hypothesis::scored("play news", 0.7),
                    Hypothesis::scored("play muse", 0.2),
                ],
            },
            NBestList {
                id: "b".into(),
                transcription: None,
                domain: "Weather".into(),
                intent: "GetRain".into(),
                nbest: vec![Hypothesis::new("will it rain")],
            },
        ];
        let text = corpus_to_jsonl(&records);
        assert_eq!(parse_corpus(&text, "c").unwrap(), records);
    }

    #[test]
    fn errors_name_line_and_field() {
        let good = r#"{"id":"a","domain":"D","intent":"I","nbest":[{"text":"x"}]}"#;
        let missing = r#"{"id":"b","domain":"D","nbest":[{"text":"x"}]}"#;
        match parse_corpus(&format!("{good}\n{missing}\n"), "c.jsonl") {
            Err(Error::Parse { line, message, path }) => {
                assert_eq!(line, 2);
                assert_eq!(path, "c.jsonl");
                assert!(message.contains("intent"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let empty_list = r#"{"id":"a","domain":"D","intent":"I","nbest":[]}"#;
        assert!(matches!(
            parse_corpus(empty_list, "c"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_corpus("{not json", "c"),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
