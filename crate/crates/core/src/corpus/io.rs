//! Corpus JSONL and lexicon TSV formats.
//!
//! Corpus lines look like
//! `{"tokens":[{"w":"gaana","t":"L1"},{"w":"enjoy"}],"label":"positive","target":"song enjoy"}`.
//! Tags are optional on ingest; missing ones are filled from a lexicon when
//! one is supplied.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::cmi::CmiWeights;
use super::switching::Utterance;
use super::tag::{normalize_surface, LanguageTag, Lexicon, Token};
use super::CorpusError;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenRecord {
    w: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t: Option<LanguageTag>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceRecord {
    tokens: Vec<TokenRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<String>,
}

/// A loaded corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    /// False when some token had no tag and no lexicon was available; such
    /// tokens were tagged `Other`.
    pub fully_tagged: bool,
}

pub fn read_corpus(reader: impl BufRead, lexicon: Option<&Lexicon>, weights: &CmiWeights) -> Result<Corpus, CorpusError> {
    let mut utterances = Vec::new();
    let mut fully_tagged = true;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| CorpusError::Malformed { line: line_no, message };
        let record: UtteranceRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if record.tokens.is_empty() {
            return Err(malformed("utterance has no tokens".into()));
        }
        let mut tokens = Vec::with_capacity(record.tokens.len());
        for (pos, tr) in record.tokens.iter().enumerate() {
            let surface = normalize_surface(&tr.w, pos).map_err(|e| malformed(e.to_string()))?;
            let tag = match (tr.t, lexicon) {
                (Some(t), _) => t,
                (None, Some(lex)) if surface.chars().any(char::is_alphabetic) => lex.lookup(&surface),
                (None, Some(_)) => LanguageTag::Other,
                (None, None) => {
                    fully_tagged = false;
                    LanguageTag::Other
                }
            };
            tokens.push(Token::new(&surface, tag).map_err(|e| malformed(e.to_string()))?);
        }
        let mut u = Utterance::new(tokens, weights).map_err(|e| malformed(e.to_string()))?;
        u.label = record.label;
        if let Some(target) = record.target {
            let words: Vec<String> = target.split_whitespace().map(str::to_string).collect();
            if words.is_empty() {
                return Err(malformed("empty target".into()));
            }
            u.target = Some(words);
        }
        utterances.push(u);
    }
    Ok(Corpus { utterances, fully_tagged })
}

pub fn write_corpus(mut writer: impl Write, utterances: &[Utterance]) -> Result<(), CorpusError> {
    for u in utterances {
        let record = UtteranceRecord {
            tokens: u.tokens.iter().map(|t| TokenRecord { w: t.surface().to_string(), t: Some(t.tag) }).collect(),
            label: u.label.clone(),
            target: u.target.as_ref().map(|t| t.join(" ")),
        };
        serde_json::to_writer(&mut writer, &record).map_err(std::io::Error::other)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// `word<TAB>lang[<TAB>count]` per line. Blank lines and `#` comments are skipped.
pub fn read_lexicon(reader: impl BufRead, policy: super::tag::OverlapPolicy) -> Result<Lexicon, CorpusError> {
    let mut lex = Lexicon::new(policy);
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let malformed = |message: String| CorpusError::Malformed { line: idx + 1, message };
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if !(2..=3).contains(&cols.len()) {
            return Err(malformed(format!("expected word<TAB>lang, got {} column(s)", cols.len())));
        }
        let tag: LanguageTag = cols[1].parse().map_err(|e: CorpusError| malformed(e.to_string()))?;
        if !tag.is_language() {
            return Err(malformed("lexicon language must be L1 or L2".into()));
        }
        let count = match cols.get(2) {
            Some(c) => c.trim().parse::<u64>().map_err(|e| malformed(format!("bad count: {e}")))?,
            None => 1,
        };
        lex.insert(cols[0], tag, count).map_err(|e| malformed(e.to_string()))?;
    }
    if lex.is_empty() {
        return Err(CorpusError::EmptyLexicon);
    }
    Ok(lex)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::OverlapPolicy;

    #[test]
    fn reads_tagged_and_untagged_lines() {
        let text = concat!(
            r#"{"tokens":[{"w":"ye","t":"L1"},{"w":"gaana","t":"L1"},{"w":"enjoy","t":"L2"},{"w":"kare","t":"L1"}],"label":"positive"}"#,
            "\n\n",
            r#"{"tokens":[{"w":"Gaana"},{"w":"enjoy"}],"target":"gaana pasand"}"#,
            "\n"
        );
        let lex = Lexicon::from_words(["gaana"], ["enjoy"], OverlapPolicy::Other).unwrap();
        let c = read_corpus(text.as_bytes(), Some(&lex), &CmiWeights::default()).unwrap();
        assert!(c.fully_tagged);
        assert_eq!(c.utterances.len(), 2);
        assert_eq!(c.utterances[0].spi, [0, 1, 0, 0]);
        assert_eq!(c.utterances[0].label.as_deref(), Some("positive"));
        assert_eq!(c.utterances[1].sp_indices, [1]);
        assert_eq!(c.utterances[1].target.as_ref().unwrap(), &["gaana", "pasand"]);

        let c = read_corpus(text.as_bytes(), None, &CmiWeights::default()).unwrap();
        assert!(!c.fully_tagged);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"tokens\":[{\"w\":\"a\",\"t\":\"L1\"}]}\n{\"tokens\":[{\"w\":\"a b\"}]}\n";
        match read_corpus(text.as_bytes(), None, &CmiWeights::default()) {
            Err(CorpusError::Malformed { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        let text = "{\"tokens\":[],\"extra\":1}\n";
        assert!(matches!(
            read_corpus(text.as_bytes(), None, &CmiWeights::default()),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn corpus_round_trip() {
        let text = r#"{"tokens":[{"w":"x","t":"L1"},{"w":"y","t":"L2"},{"w":"!","t":"O"}],"label":"neutral","target":"x x"}"#;
        let c = read_corpus(text.as_bytes(), None, &CmiWeights::default()).unwrap();
        let mut buf = Vec::new();
        write_corpus(&mut buf, &c.utterances).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim_end(), text);
    }

    #[test]
    fn lexicon_tsv() {
        let text = "gaana\tL1\n# comment\nenjoy\tL2\t7\ndo\tL1\ndo\tL2\n";
        let lex = read_lexicon(text.as_bytes(), OverlapPolicy::Other).unwrap();
        assert_eq!(lex.lookup("gaana"), LanguageTag::L1);
        assert_eq!(lex.lookup("enjoy"), LanguageTag::L2);
        assert_eq!(lex.lookup("do"), LanguageTag::Other);
        assert!(matches!(
            read_lexicon("oops\n".as_bytes(), OverlapPolicy::Other),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
        assert!(read_lexicon("x\tO\n".as_bytes(), OverlapPolicy::Other).is_err());
    }
}
