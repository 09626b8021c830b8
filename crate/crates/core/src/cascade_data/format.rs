//! Tab-separated cascade text format.
//!
//! ```text
//! <id>\t<root>\t<publish_ts>\t<n_events>\t<path_1> <path_2> ...
//! ```
//!
//! Each path is `u0/u1/.../uk:offset`: the adopter is the last user and its
//! parent the second to last. A single-user path naming the root is the
//! root post itself and yields no event; `n_events` counts the others.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cascade, Event};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    /// Path-per-adoption convention of the public Weibo cascade release.
    #[default]
    WeiboPaths,
}

pub fn parse_corpus(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Vec<Cascade>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus_str(&text, format)
}

pub fn parse_corpus_str(text: &str, format: DatasetFormat) -> Result<Vec<Cascade>> {
    match format {
        DatasetFormat::WeiboPaths => text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| parse_line(l, i + 1))
            .collect(),
    }
}

fn parse_line(line: &str, lineno: usize) -> Result<Cascade> {
    let perr = |msg: String| Error::Parse { line: lineno, msg };
    let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
    if fields.len() != 5 {
        return Err(perr(format!(
            "expected 5 tab-separated fields, found {}",
            fields.len()
        )));
    }
    let id = fields[0].to_string();
    let root = fields[1].to_string();
    if id.is_empty() || root.is_empty() {
        return Err(perr("empty id or root user".into()));
    }
    let publish_time: i64 = fields[2]
        .parse()
        .map_err(|_| perr(format!("bad publish timestamp {:?}", fields[2])))?;
    let declared: usize = fields[3]
        .parse()
        .map_err(|_| perr(format!("bad event count {:?}", fields[3])))?;

    let mut events = Vec::new();
    for token in fields[4].split_whitespace() {
        let (users, offset) = token
            .rsplit_once(':')
            .ok_or_else(|| perr(format!("path {token:?} has no offset")))?;
        let offset: f64 = offset
            .parse()
            .map_err(|_| perr(format!("bad offset in path {token:?}")))?;
        if !offset.is_finite() || offset < 0.0 {
            return Err(perr(format!("negative or non-finite offset in {token:?}")));
        }
        let chain: Vec<&str> = users.split('/').collect();
        if chain.iter().any(|u| u.is_empty()) {
            return Err(perr(format!("empty user in path {token:?}")));
        }
        match chain.as_slice() {
            [only] if *only == root => continue,
            [_] => return Err(perr(format!("path {token:?} has no parent"))),
            [.., parent, user] => events.push(Event {
                user: user.to_string(),
                parent: parent.to_string(),
                offset,
            }),
            [] => unreachable!("split yields at least one item"),
        }
    }

    if events.len() != declared {
        return Err(Error::Integrity {
            line: lineno,
            msg: format!("declared {declared} events, found {}", events.len()),
        });
    }
    events.sort_by(|a, b| a.offset.total_cmp(&b.offset));
    let mut seen = HashSet::with_capacity(events.len());
    for e in &events {
        if !seen.insert((e.user.as_str(), e.offset.to_bits())) {
            return Err(Error::Integrity {
                line: lineno,
                msg: format!("duplicate adoption of {} at {}", e.user, e.offset),
            });
        }
    }

    Ok(Cascade {
        id,
        root_user: root,
        publish_time,
        events,
    })
}

/// Writes cascades in the text format, rebuilding each path from the
/// parent chain. Parsing the output yields the same cascades.
pub fn write_corpus<W: Write>(mut out: W, cascades: &[Cascade]) -> std::io::Result<()> {
    let mut line = String::new();
    for c in cascades {
        line.clear();
        let _ = write!(
            line,
            "{}\t{}\t{}\t{}\t{}:0",
            c.id,
            c.root_user,
            c.publish_time,
            c.events.len(),
            c.root_user
        );
        let mut paths: HashMap<&str, String> = HashMap::with_capacity(c.events.len() + 1);
        paths.insert(c.root_user.as_str(), c.root_user.clone());
        for e in &c.events {
            let path = match paths.get(e.parent.as_str()) {
                Some(p) => format!("{p}/{}", e.user),
                None => format!("{}/{}", e.parent, e.user),
            };
            let _ = write!(line, " {path}:{}", e.offset);
            paths.entry(e.user.as_str()).or_insert(path);
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_reference_line() {
        let c = parse_corpus_str(
            "42\tu0\t1464739200\t2\tu0:0 u0/u1:30 u0/u2:95\n",
            DatasetFormat::WeiboPaths,
        )
        .unwrap();
        assert_eq!(c.len(), 1);
        let c = &c[0];
        assert_eq!(c.id, "42");
        assert_eq!(c.root_user, "u0");
        assert_eq!(c.publish_time, 1464739200);
        let got: Vec<_> = c
            .events
            .iter()
            .map(|e| (e.user.as_str(), e.parent.as_str(), e.offset))
            .collect();
        assert_eq!(got, vec![("u1", "u0", 30.0), ("u2", "u0", 95.0)]);
    }

    #[test]
    fn parent_is_second_to_last_on_path() {
        let c = parse_corpus_str("7\ta\t0\t2\ta:0 a/b:5 a/b/c:9", DatasetFormat::WeiboPaths)
            .unwrap();
        assert_eq!(c[0].events[1].parent, "b");
        assert_eq!(c[0].events[1].user, "c");
    }

    #[test]
    fn count_mismatch_is_integrity_error_with_line() {
        let text = "1\tu0\t0\t1\tu0:0 u0/u1:3\n2\tu0\t0\t3\tu0:0 u0/u1:3 u0/u2:4\n";
        match parse_corpus_str(text, DatasetFormat::WeiboPaths) {
            Err(Error::Integrity { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_is_parse_error_with_line() {
        let text = "1\tu0\t0\t0\tu0:0\n\nbad line\n";
        match parse_corpus_str(text, DatasetFormat::WeiboPaths) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            parse_corpus_str("1\tu0\t0\t1\tu0/u1:-3", DatasetFormat::WeiboPaths),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        assert!(parse_corpus_str("", DatasetFormat::WeiboPaths)
            .unwrap()
            .is_empty());
        assert!(parse_corpus_str("\n\n", DatasetFormat::WeiboPaths)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn preserves_file_order() {
        let text = "b\tu\t0\t0\tu:0\na\tu\t0\t0\tu:0\nc\tu\t0\t0\tu:0\n";
        let ids: Vec<_> = parse_corpus_str(text, DatasetFormat::WeiboPaths)
            .unwrap()
            .into_iter()
            .map(|c| c.id)
            .collect();
        assert_eq!(ids, ["b", "a", "c"]);
    }

    #[test]
    fn events_out_of_order_are_sorted() {
        let c = parse_corpus_str("1\tr\t0\t2\tr/b:50 r/a:10", DatasetFormat::WeiboPaths).unwrap();
        assert_eq!(c[0].events[0].user, "a");
    }

    #[test]
    fn duplicate_adoption_rejected() {
        assert!(matches!(
            parse_corpus_str("1\tr\t0\t2\tr/a:5 r/a:5", DatasetFormat::WeiboPaths),
            Err(Error::Integrity { line: 1, .. })
        ));
    }

    #[test]
    fn write_then_parse_is_identity() {
        let text = "9\tr\t100\t3\tr:0 r/a:1.5 r/a/b:2.25 r/c:7\n";
        let parsed = parse_corpus_str(text, DatasetFormat::WeiboPaths).unwrap();
        let mut buf = Vec::new();
        write_corpus(&mut buf, &parsed).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), text);
        let again = parse_corpus_str(std::str::from_utf8(&buf).unwrap(), DatasetFormat::WeiboPaths)
            .unwrap();
        assert_eq!(again, parsed);
    }
}
