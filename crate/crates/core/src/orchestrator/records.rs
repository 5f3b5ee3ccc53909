use std::fmt;

use crate::corpus::SentenceId;
use crate::tsv;

use super::{OrchestratorError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Final,
    Trial,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Final => "final",
            Phase::Trial => "trial",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "final" => Some(Phase::Final),
            "trial" => Some(Phase::Trial),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One translation. LFM trials of reference neighbors carry the id
/// `<test id>/<neighbor id>`; the trial of the test sentence itself carries
/// the test id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationRecord {
    pub id: SentenceId,
    pub strategy: String,
    pub run: usize,
    pub phase: Phase,
    pub source: String,
    pub reference: String,
    pub hypothesis: String,
}

impl TranslationRecord {
    /// The test sentence a record belongs to.
    pub fn test_id(&self) -> &str {
        let id = self.id.as_str();
        id.split_once('/').map_or(id, |(test, _)| test)
    }

    /// For neighbor trials, the reference pair that was translated.
    pub fn neighbor_id(&self) -> Option<&str> {
        self.id.as_str().split_once('/').map(|(_, n)| n)
    }
}

pub const RECORDS_HEADER: &str = "# id\tstrategy\trun\tphase\tsource\treference\thypothesis";

/// Tab-separated, one record per line, fields escaped with `\t`, `\n`,
/// `\r` and `\\`.
pub fn render_records(records: &[TranslationRecord]) -> String {
    let mut out = String::from(RECORDS_HEADER);
    out.push('\n');
    for r in records {
        let fields = [
            tsv::escape(r.id.as_str()),
            tsv::escape(&r.strategy),
            r.run.to_string(),
            r.phase.to_string(),
            tsv::escape(&r.source),
            tsv::escape(&r.reference),
            tsv::escape(&r.hypothesis),
        ];
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    out
}

pub fn parse_records(text: &str) -> Result<Vec<TranslationRecord>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = tsv::strip_cr(raw);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| OrchestratorError::Records {
            line: idx + 1,
            reason,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", f.len())));
        }
        let run = f[2]
            .parse()
            .map_err(|_| err(format!("run `{}` is not an integer", f[2])))?;
        let phase = Phase::parse(f[3]).ok_or_else(|| err(format!("unknown phase `{}`", f[3])))?;
        let id = tsv::unescape(f[0]);
        if id.is_empty() {
            return Err(err("empty id".into()));
        }
        out.push(TranslationRecord {
            id: SentenceId::new(id),
            strategy: tsv::unescape(f[1]),
            run,
            phase,
            source: tsv::unescape(f[4]),
            reference: tsv::unescape(f[5]),
            hypothesis: tsv::unescape(f[6]),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_with_awkward_text() {
        let records = vec![
            TranslationRecord {
                id: SentenceId::new("12"),
                strategy: "lfm:k=5,q=2".into(),
                run: 1,
                phase: Phase::Final,
                source: "你好\t嗎".into(),
                reference: "Nga’ay ho .".into(),
                hypothesis: "".into(),
            },
            TranslationRecord {
                id: SentenceId::new("12/r7"),
                strategy: "lfm:k=5,q=2".into(),
                run: 1,
                phase: Phase::Trial,
                source: "a\\b".into(),
                reference: "line\nbreak".into(),
                hypothesis: "x".into(),
            },
        ];
        let text = render_records(&records);
        assert!(text.starts_with(RECORDS_HEADER));
        assert_eq!(parse_records(&text).unwrap(), records);
        assert_eq!(records[1].test_id(), "12");
        assert_eq!(records[1].neighbor_id(), Some("r7"));
        assert_eq!(records[0].neighbor_id(), None);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            parse_records("1\tzeroshot\t0\tfinal\ta\tb\n"),
            Err(OrchestratorError::Records { line: 1, .. })
        ));
        assert!(parse_records("1\tzeroshot\tx\tfinal\ta\tb\tc\n").is_err());
        assert!(parse_records("1\tzeroshot\t0\tdraft\ta\tb\tc\n").is_err());
    }

    proptest! {
        #[test]
        fn any_text_round_trips(src in "\\PC{0,20}", hyp in "[a-z\\t\\n\\\\ ]{0,20}", run in 0usize..10) {
            let r = TranslationRecord {
                id: SentenceId::new("7"),
                strategy: "knn_rpc:k=5".into(),
                run,
                phase: Phase::Final,
                source: src,
                reference: "ref".into(),
                hypothesis: hyp,
            };
            prop_assert_eq!(parse_records(&render_records(std::slice::from_ref(&r))).unwrap(), vec![r]);
        }
    }
}
