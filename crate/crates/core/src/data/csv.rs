use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{FerRecord, Usage, CLASS_NAMES, IMAGE_PIXELS, N_CLASSES};
use crate::error::{Error, Result};

/// Image count stated for FER2013 in its original description. The file
/// distributed on Kaggle holds one fewer row.
pub const DOCUMENTED_TOTAL: usize = 35888;

const HEADER: [&str; 3] = ["emotion", "pixels", "Usage"];

/// Records per (split, class).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplitCounts {
    pub counts: [[usize; N_CLASSES]; 3],
}

impl SplitCounts {
    pub fn from_records(records: &[FerRecord]) -> Self {
        let mut c = SplitCounts::default();
        for r in records {
            c.counts[r.usage.index()][r.label] += 1;
        }
        c
    }

    pub fn split_total(&self, usage: Usage) -> usize {
        self.counts[usage.index()].iter().sum()
    }

    pub fn total(&self) -> usize {
        Usage::ALL.iter().map(|&u| self.split_total(u)).sum()
    }

    /// Tab-separated table: one row per class plus a total row.
    pub fn report(&self) -> String {
        let mut out = String::from("class\tTraining\tPublicTest\tPrivateTest\ttotal\n");
        for (k, name) in CLASS_NAMES.iter().enumerate() {
            let row: Vec<usize> = Usage::ALL
                .iter()
                .map(|u| self.counts[u.index()][k])
                .collect();
            out.push_str(&format!(
                "{name}\t{}\t{}\t{}\t{}\n",
                row[0],
                row[1],
                row[2],
                row.iter().sum::<usize>()
            ));
        }
        out.push_str(&format!(
            "total\t{}\t{}\t{}\t{}\n",
            self.split_total(Usage::Training),
            self.split_total(Usage::PublicTest),
            self.split_total(Usage::PrivateTest),
            self.total()
        ));
        out
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<FerRecord>,
    pub counts: SplitCounts,
    pub warnings: Vec<String>,
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parse a FER2013 CSV stream (`emotion,pixels,Usage`). The first malformed
/// row aborts the parse with its 1-based line number.
pub fn parse_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = Vec::new();
    let mut row = ::csv::StringRecord::new();
    let mut first = true;
    loop {
        let more = reader.read_record(&mut row).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if first {
            first = false;
            let header: Vec<&str> = row.iter().map(str::trim).collect();
            if header != HEADER {
                return Err(parse_err(
                    line,
                    format!("expected header emotion,pixels,Usage, got {header:?}"),
                ));
            }
            continue;
        }
        if row.len() != 3 {
            return Err(parse_err(
                line,
                format!("expected 3 fields, got {}", row.len()),
            ));
        }
        let label: usize = row[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("emotion {:?} is not an integer", &row[0])))?;
        if label >= N_CLASSES {
            return Err(parse_err(
                line,
                format!("emotion {label} is outside 0..{N_CLASSES}"),
            ));
        }
        let mut pixels = Vec::with_capacity(IMAGE_PIXELS);
        for tok in row[1].split_ascii_whitespace() {
            let v: i64 = tok
                .parse()
                .map_err(|_| parse_err(line, format!("pixel {tok:?} is not an integer")))?;
            let v = u8::try_from(v)
                .map_err(|_| parse_err(line, format!("pixel {v} is outside 0..=255")))?;
            pixels.push(v);
        }
        if pixels.len() != IMAGE_PIXELS {
            return Err(parse_err(
                line,
                format!("expected {IMAGE_PIXELS} pixels, got {}", pixels.len()),
            ));
        }
        let usage = Usage::parse(row[2].trim())
            .ok_or_else(|| parse_err(line, format!("unknown Usage {:?}", &row[2])))?;
        records.push(FerRecord {
            id: records.len(),
            label,
            pixels,
            usage,
        });
    }
    if first {
        return Err(parse_err(1, "empty input, missing header"));
    }

    let counts = SplitCounts::from_records(&records);
    let mut warnings = Vec::new();
    if counts.total() != DOCUMENTED_TOTAL {
        let msg = format!(
            "dataset holds {} images; FER2013 is documented as {DOCUMENTED_TOTAL} (the public file has 35887)",
            counts.total()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(Dataset {
        records,
        counts,
        warnings,
    })
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(std::io::BufReader::new(file))
}

pub fn write_csv<W: Write>(records: &[FerRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "emotion,pixels,Usage")?;
    let mut line = String::with_capacity(IMAGE_PIXELS * 4);
    for r in records {
        line.clear();
        for (i, p) in r.pixels.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            line.push_str(&p.to_string());
        }
        writeln!(out, "{},{},{}", r.label, line, r.usage.as_str())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: &str, pixels: usize, usage: &str) -> String {
        format!("{label},{},{usage}\n", vec!["0"; pixels].join(" "))
    }

    fn parse(body: &str) -> Result<Dataset> {
        parse_csv(format!("emotion,pixels,Usage\n{body}").as_bytes())
    }

    #[test]
    fn black_image_row() {
        let ds = parse(&row("3", 2304, "Training")).unwrap();
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.records[0].label, 3);
        assert!(ds.records[0].pixels.iter().all(|&p| p == 0));
        assert_eq!(ds.counts.split_total(Usage::Training), 1);
        assert_eq!(ds.warnings.len(), 1);
    }

    #[test]
    fn short_row_reports_line() {
        let body = row("1", 2304, "Training") + &row("2", 2303, "PublicTest");
        match parse(&body) {
            Err(Error::Parse { line: 3, message }) => {
                assert!(message.contains("2303"), "{message}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn field_errors() {
        let pix = vec!["0"; 2304].join(" ");
        let cases = [
            format!("7,{pix},Training\n"),
            format!("x,{pix},Training\n"),
            format!("1,{pix},Validation\n"),
            format!("1,{pix}\n"),
            format!("1,{},Training\n", pix.replacen('0', "256", 1)),
            format!("1,{},Training\n", pix.replacen('0', "-1", 1)),
            format!("1,{},Training\n", pix.replacen('0', "1.5", 1)),
        ];
        for body in cases {
            assert!(
                matches!(parse(&body), Err(Error::Parse { line: 2, .. })),
                "{}",
                &body[..20]
            );
        }
    }

    #[test]
    fn header_is_required() {
        let err = parse_csv(row("1", 2304, "Training").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(matches!(parse_csv(&b""[..]), Err(Error::Parse { .. })));
    }

    #[test]
    fn stats_report_layout() {
        let body = row("3", 2304, "Training") + &row("0", 2304, "PrivateTest");
        let ds = parse(&body).unwrap();
        let report = ds.counts.report();
        let lines: Vec<&str> = report.lines().collect();
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[1], "angry\t0\t0\t1\t1");
        assert_eq!(lines[4], "happy\t1\t0\t0\t1");
        assert_eq!(lines[8], "total\t1\t0\t1\t2");
    }
}
