//! Labeled user-input mentions and their TSV file format:
//! `input<TAB>city<TAB>admin1<TAB>country`, input backslash-escaped.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::gazetteer::LocationTriple;
use crate::text::{escape, unescape};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledMention {
    pub user_input: String,
    pub truth: LocationTriple,
}

impl LabeledMention {
    pub fn new(user_input: impl Into<String>, truth: LocationTriple) -> Result<Self> {
        if truth.is_null() {
            return Err(Error::NullTruth);
        }
        Ok(LabeledMention {
            user_input: user_input.into(),
            truth,
        })
    }
}

pub fn read_mentions<R: BufRead>(reader: R) -> Result<Vec<LabeledMention>> {
    const WHAT: &str = "mentions";
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::format(
                WHAT,
                n + 1,
                format!("expected 4 columns, got {}", f.len()),
            ));
        }
        let truth = LocationTriple::new(&unescape(f[1]), &unescape(f[2]), &unescape(f[3]))
            .map_err(|e| Error::format(WHAT, n + 1, e.to_string()))?;
        let m = LabeledMention::new(unescape(f[0]), truth)
            .map_err(|e| Error::format(WHAT, n + 1, e.to_string()))?;
        out.push(m);
    }
    Ok(out)
}

pub fn write_mentions<W: Write>(mut out: W, mentions: &[LabeledMention]) -> Result<()> {
    for m in mentions {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            escape(&m.user_input),
            escape(m.truth.city()),
            escape(m.truth.admin1()),
            escape(m.truth.country())
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let ms = vec![
            LabeledMention::new(
                "TURKEY/SİNOP",
                LocationTriple::new("", "Sinop", "Turkey").unwrap(),
            )
            .unwrap(),
            LabeledMention::new("", LocationTriple::new("", "", "Japan").unwrap()).unwrap(),
            LabeledMention::new(
                "a\tb",
                LocationTriple::new("Iwaki", "Fukushima", "Japan").unwrap(),
            )
            .unwrap(),
        ];
        let mut buf = Vec::new();
        write_mentions(&mut buf, &ms).unwrap();
        assert_eq!(read_mentions(buf.as_slice()).unwrap(), ms);
    }

    #[test]
    fn null_truth_rejected() {
        assert!(read_mentions("x\t\t\t\n".as_bytes()).is_err());
        assert!(matches!(
            LabeledMention::new("x", LocationTriple::null()),
            Err(Error::NullTruth)
        ));
    }
}
