use super::{Direction, RelationInstance, Span};
use crate::{DiscoError, Result};

const REQUIRED: [&str; 12] = [
    "doc",
    "unit1_toks",
    "unit2_toks",
    "unit1_txt",
    "unit2_txt",
    "s1_toks",
    "s2_toks",
    "unit1_sent",
    "unit2_sent",
    "dir",
    "orig_label",
    "label",
];

/// A parsed `.rels` file that remembers its original lines.
#[derive(Debug, Clone)]
pub struct RelsTable {
    lines: Vec<String>,
    /// Line index of each data row, parallel to `instances`.
    row_lines: Vec<usize>,
    label_col: usize,
    instances: Vec<RelationInstance>,
}

impl RelsTable {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.replace("\r\n", "\n");
        let lines: Vec<String> = text.lines().map(str::to_string).collect();
        let Some(header_at) = lines.iter().position(|l| !l.trim().is_empty()) else {
            return Ok(RelsTable {
                lines,
                row_lines: Vec::new(),
                label_col: REQUIRED.len() - 1,
                instances: Vec::new(),
            });
        };
        let header: Vec<&str> = lines[header_at].split('\t').collect();
        let mut cols = [0usize; REQUIRED.len()];
        let mut missing = Vec::new();
        for (slot, name) in cols.iter_mut().zip(REQUIRED) {
            match header.iter().position(|h| h.trim() == name) {
                Some(i) => *slot = i,
                None => missing.push(name),
            }
        }
        if !missing.is_empty() {
            return Err(DiscoError::format(
                header_at + 1,
                format!("missing required column(s): {}", missing.join(", ")),
            ));
        }
        let [doc, u1_toks, u2_toks, u1_txt, u2_txt, _, _, u1_sent, u2_sent, dir, _, label] = cols;

        let mut row_lines = Vec::new();
        let mut instances = Vec::new();
        for (i, line) in lines.iter().enumerate().skip(header_at + 1) {
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != header.len() {
                return Err(DiscoError::format(
                    lineno,
                    format!(
                        "expected {} tab-separated columns, found {}",
                        header.len(),
                        fields.len()
                    ),
                ));
            }
            let spans = |col: usize| {
                parse_span_list(fields[col]).map_err(|m| DiscoError::format(lineno, m))
            };
            let unit1_spans = spans(u1_toks)?;
            let unit2_spans = spans(u2_toks)?;
            if spans_overlap(&unit1_spans, &unit2_spans) {
                return Err(DiscoError::format(
                    lineno,
                    format!(
                        "units overlap: {} and {}",
                        fields[u1_toks], fields[u2_toks]
                    ),
                ));
            }
            let direction = Direction::parse(fields[dir]).ok_or_else(|| {
                DiscoError::format(
                    lineno,
                    format!("direction {:?} is neither 1>2 nor 1<2", fields[dir]),
                )
            })?;
            instances.push(RelationInstance {
                doc_id: fields[doc].to_string(),
                unit1_spans,
                unit2_spans,
                unit1_text: fields[u1_txt].to_string(),
                unit2_text: fields[u2_txt].to_string(),
                unit1_sent_text: fields[u1_sent].to_string(),
                unit2_sent_text: fields[u2_sent].to_string(),
                direction,
                label: fields[label].to_string(),
            });
            row_lines.push(i);
        }
        Ok(RelsTable {
            lines,
            row_lines,
            label_col: label,
            instances,
        })
    }

    pub fn instances(&self) -> &[RelationInstance] {
        &self.instances
    }

    pub fn into_instances(self) -> Vec<RelationInstance> {
        self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

pub fn parse_rels(text: &str) -> Result<Vec<RelationInstance>> {
    Ok(RelsTable::parse(text)?.into_instances())
}

/// Rewrites the `label` column of every data row with `predicted`.
pub fn serialize_rel_predictions<S: AsRef<str>>(table: &RelsTable, predicted: &[S]) -> Result<String> {
    if predicted.len() != table.instances.len() {
        return Err(DiscoError::contract(format!(
            "{} relation instances but {} predictions",
            table.instances.len(),
            predicted.len()
        )));
    }
    let mut rows = table.row_lines.iter().zip(predicted).peekable();
    let mut out = String::new();
    for (i, line) in table.lines.iter().enumerate() {
        match rows.peek() {
            Some((&at, label)) if at == i => {
                let mut fields: Vec<&str> = line.split('\t').collect();
                fields[table.label_col] = label.as_ref();
                out.push_str(&fields.join("\t"));
                rows.next();
            }
            _ => out.push_str(line),
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses `a-b,c,d-e` into ascending, disjoint inclusive ranges.
pub fn parse_span_list(s: &str) -> std::result::Result<Vec<Span>, String> {
    let mut spans: Vec<Span> = Vec::new();
    for part in s.trim().split(',') {
        let bad = || format!("malformed span expression {s:?}");
        let (a, b) = match part.split_once('-') {
            Some((a, b)) => (a, b),
            None => (part, part),
        };
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a == 0 || a > b {
            return Err(bad());
        }
        if let Some(&(_, prev_end)) = spans.last() {
            if a <= prev_end {
                return Err(format!("span ranges in {s:?} are not ascending and disjoint"));
            }
        }
        spans.push((a, b));
    }
    Ok(spans)
}

fn spans_overlap(x: &[Span], y: &[Span]) -> bool {
    x.iter()
        .any(|&(a, b)| y.iter().any(|&(c, d)| a <= d && c <= b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "doc\tunit1_toks\tunit2_toks\tunit1_txt\tunit2_txt\ts1_toks\ts2_toks\tunit1_sent\tunit2_sent\tdir\torig_label\tlabel";

    fn file(rows: &[&str]) -> String {
        let mut s = format!("{HEADER}\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    const STAC_ROW: &str = "s1\t1-4\t5\tdo we start ?\tno\t1-4\t5\tdo we start ?\tno\t1>2\tQuestion_answer_pair\tquestion_answer_pair";

    #[test]
    fn row_with_direction() {
        let inst = parse_rels(&file(&[STAC_ROW])).unwrap();
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].direction, Direction::LeftToRight);
        assert_eq!(inst[0].unit1_text, "do we start ?");
        assert_eq!(inst[0].unit2_text, "no");
        assert_eq!(inst[0].label, "question_answer_pair");
        assert_eq!(inst[0].unit2_spans, vec![(5, 5)]);
    }

    #[test]
    fn discontinuous_spans() {
        assert_eq!(parse_span_list("5-7,10-12").unwrap(), vec![(5, 7), (10, 12)]);
        assert!(parse_span_list("7-5").is_err());
        assert!(parse_span_list("5-7,6-9").is_err());
        assert!(parse_span_list("a-b").is_err());
        assert!(parse_span_list("").is_err());
    }

    #[test]
    fn header_only_and_empty() {
        assert!(parse_rels(&file(&[])).unwrap().is_empty());
        assert!(parse_rels("").unwrap().is_empty());
    }

    #[test]
    fn bad_direction_and_missing_column() {
        let bad = STAC_ROW.replace("1>2", "1=2");
        assert!(matches!(
            parse_rels(&file(&[&bad])),
            Err(DiscoError::Format { line: 2, .. })
        ));
        let no_label = HEADER.replace("\tlabel", "");
        assert!(matches!(
            parse_rels(&format!("{no_label}\n")),
            Err(DiscoError::Format { line: 1, .. })
        ));
    }

    #[test]
    fn extra_columns_tolerated() {
        let text = format!("{HEADER}\textra\n{STAC_ROW}\tjunk\n");
        let table = RelsTable::parse(&text).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(serialize_rel_predictions(&table, &["question_answer_pair"]).unwrap(), text);
    }

    #[test]
    fn predictions_rewrite_label_column() {
        let text = file(&[STAC_ROW, &STAC_ROW.replace("1-4\t5", "6-7\t8")]);
        let table = RelsTable::parse(&text).unwrap();
        let gold: Vec<String> = table.instances().iter().map(|i| i.label.clone()).collect();
        assert_eq!(serialize_rel_predictions(&table, &gold).unwrap(), text);
        let out = serialize_rel_predictions(&table, &["question", "question"]).unwrap();
        assert!(out.lines().nth(1).unwrap().ends_with("\tquestion"));
        assert!(matches!(
            serialize_rel_predictions(&table, &["question"]),
            Err(DiscoError::Contract(_))
        ));
    }

    proptest! {
        #[test]
        fn parsed_spans_are_ascending_and_disjoint(
            ranges in proptest::collection::vec((1usize..60, 0usize..5), 1..6)
        ) {
            let text = ranges
                .iter()
                .map(|(a, len)| if *len == 0 { a.to_string() } else { format!("{a}-{}", a + len) })
                .collect::<Vec<_>>()
                .join(",");
            match parse_span_list(&text) {
                Ok(spans) => {
                    prop_assert_eq!(spans.len(), ranges.len());
                    for w in spans.windows(2) {
                        prop_assert!(w[0].1 < w[1].0);
                    }
                    for &(a, b) in &spans {
                        prop_assert!(1 <= a && a <= b);
                    }
                }
                Err(_) => {
                    // rejected exactly when the generated ranges collide or go backwards
                    let ok = ranges.windows(2).all(|w| w[0].0 + w[0].1 < w[1].0);
                    prop_assert!(!ok);
                }
            }
        }
    }
}
