//! CSV adapters, the record file and report writers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    build_vocab, clean_text, dataset_stats, integrity_check, tokenize, DatasetStats, IntegrityReport, LabelScheme,
    Record, Vocabulary, COARSE_NAMES, FINE_NAMES,
};
use crate::error::{Error, Result};

pub const RECORD_FILE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsvSchema {
    /// Columns `text`, `score` and optionally `year`.
    Generic,
    /// Booking.com dump: `Positive_Review`, `Negative_Review`,
    /// `Reviewer_Score`, `Review_Date` (m/d/yyyy).
    Booking,
}

impl std::str::FromStr for CsvSchema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generic" => Ok(Self::Generic),
            "booking" => Ok(Self::Booking),
            other => Err(Error::InvalidInput(format!("unknown schema `{other}`"))),
        }
    }
}

/// Tokenized records together with the vocabulary that produced the ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordFile {
    pub format_version: u32,
    pub vocabulary: Vocabulary,
    pub max_len: usize,
    pub records: Vec<Record>,
}

pub struct Preprocessed {
    pub file: RecordFile,
    pub stats: Option<DatasetStats>,
    pub integrity: IntegrityReport,
}

struct RawRow {
    text: String,
    score: Option<f64>,
    year: Option<i32>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn parse_score(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn read_rows<R: Read>(reader: R, schema: CsvSchema) -> Result<Vec<RawRow>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let field = |rec: &csv::StringRecord, i: usize| rec.get(i).unwrap_or("").to_string();
    let mut rows = Vec::new();
    match schema {
        CsvSchema::Generic => {
            let text = column(&headers, "text")?;
            let score = column(&headers, "score")?;
            let year = column(&headers, "year").ok();
            for rec in rdr.records() {
                let rec = rec?;
                rows.push(RawRow {
                    text: field(&rec, text),
                    score: parse_score(&field(&rec, score)),
                    year: year.and_then(|i| field(&rec, i).trim().parse().ok()),
                });
            }
        }
        CsvSchema::Booking => {
            let pos = column(&headers, "Positive_Review")?;
            let neg = column(&headers, "Negative_Review")?;
            let score = column(&headers, "Reviewer_Score")?;
            let date = column(&headers, "Review_Date")?;
            for rec in rdr.records() {
                let rec = rec?;
                let text = format!("{} {}", field(&rec, pos).trim(), field(&rec, neg).trim());
                rows.push(RawRow {
                    text: text.trim().to_string(),
                    score: parse_score(&field(&rec, score)),
                    year: field(&rec, date).trim().rsplit('/').next().and_then(|y| y.parse().ok()),
                });
            }
        }
    }
    Ok(rows)
}

/// Cleans, labels and tokenizes a review CSV.
///
/// Rows with a missing score or with no text left after cleaning are
/// dropped and counted. Rows whose score is outside [0, 10] are excluded
/// and counted as out-of-range violations.
pub fn preprocess_csv<R: Read>(
    reader: R,
    schema: CsvSchema,
    scheme: &LabelScheme,
    min_frequency: usize,
    max_vocab: usize,
    max_len: usize,
) -> Result<Preprocessed> {
    let rows = read_rows(reader, schema)?;
    let mut dropped = 0;
    let mut out_of_range = 0;
    let mut records = Vec::new();
    for row in rows {
        let clean = clean_text(&row.text);
        let Some(score) = row.score else {
            dropped += 1;
            continue;
        };
        if clean.is_empty() {
            dropped += 1;
            continue;
        }
        let Ok(labels) = scheme.labels(score) else {
            out_of_range += 1;
            continue;
        };
        records.push(Record {
            raw_text: row.text,
            clean_text: clean,
            token_ids: Vec::new(),
            coarse_label: labels.coarse,
            fine_label: labels.fine,
            intensity: labels.intensity,
            score,
            year: row.year,
        });
    }
    let vocabulary = if records.is_empty() {
        Vocabulary::from_words(std::iter::empty())
    } else {
        let corpus: Vec<&str> = records.iter().map(|r| r.clean_text.as_str()).collect();
        build_vocab(&corpus, min_frequency, max_vocab)?
    };
    for r in &mut records {
        r.token_ids = tokenize(&vocabulary, &r.clean_text, max_len);
    }
    let mut integrity = integrity_check(&records, scheme);
    integrity.out_of_range_scores += out_of_range;
    integrity.dropped_rows = dropped;
    let stats = if records.is_empty() {
        None
    } else {
        Some(dataset_stats(&records)?)
    };
    Ok(Preprocessed {
        file: RecordFile {
            format_version: RECORD_FILE_VERSION,
            vocabulary,
            max_len,
            records,
        },
        stats,
        integrity,
    })
}

pub fn write_record_file(path: &Path, file: &RecordFile) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(w, file)?;
    Ok(())
}

pub fn read_record_file(path: &Path) -> Result<RecordFile> {
    let file: RecordFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if file.format_version != RECORD_FILE_VERSION {
        return Err(Error::InvalidInput(format!(
            "record file version {} is not supported (expected {RECORD_FILE_VERSION})",
            file.format_version
        )));
    }
    Ok(file)
}

/// `group,max,q25,mean,median`, one row per group.
pub fn write_stats_csv(path: &Path, stats: &DatasetStats) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group", "max", "q25", "mean", "median"])?;
    for g in &stats.groups {
        w.write_record([
            g.group.clone(),
            format!("{:.4}", g.max),
            format!("{:.4}", g.q25),
            format!("{:.4}", g.mean),
            format!("{:.4}", g.median),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `scheme,label,name,count` for the coarse and fine label histograms.
pub fn write_histogram_csv(path: &Path, stats: &DatasetStats) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scheme", "label", "name", "count"])?;
    for (i, c) in stats.coarse_counts.iter().enumerate() {
        w.write_record(["coarse".to_string(), i.to_string(), COARSE_NAMES[i].into(), c.to_string()])?;
    }
    for (i, c) in stats.fine_counts.iter().enumerate() {
        w.write_record(["fine".to_string(), i.to_string(), FINE_NAMES[i].into(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(csv: &str, schema: CsvSchema) -> Result<Preprocessed> {
        preprocess_csv(csv.as_bytes(), schema, &LabelScheme::default(), 1, 100, 8)
    }

    #[test]
    fn generic_rows() {
        let csv = "text,score,year\n\"Lovely room!\",9.2,2016\nAwful noise,2.5,2015\n\"ok, fine\",6,\n";
        let p = run(csv, CsvSchema::Generic).unwrap();
        assert_eq!(p.file.records.len(), 3);
        assert!(p.integrity.is_clean());
        let r = &p.file.records[0];
        assert_eq!((r.clean_text.as_str(), r.fine_label, r.year), ("lovely room", 4, Some(2016)));
        assert_eq!(p.file.records[2].year, None);
        assert_eq!(r.token_ids.len(), 8);
        assert_eq!(p.stats.unwrap().overall().count, 3);
    }

    #[test]
    fn out_of_range_and_missing() {
        let csv = "text,score\ngood,12\nbad,\n@only_a_mention,5\nfine,5\n";
        let p = run(csv, CsvSchema::Generic).unwrap();
        assert_eq!(p.file.records.len(), 1);
        assert_eq!(p.integrity.out_of_range_scores, 1);
        assert_eq!(p.integrity.dropped_rows, 2);
        assert_eq!(p.integrity.violations(), 1);
    }

    #[test]
    fn booking_concatenates_columns() {
        let csv = "Hotel_Name,Negative_Review,Positive_Review,Reviewer_Score,Review_Date\n\
                   H, Small room , Great staff ,7.9,8/3/2017\n";
        let p = run(csv, CsvSchema::Booking).unwrap();
        let r = &p.file.records[0];
        assert_eq!(r.raw_text, "Great staff Small room");
        assert_eq!(r.clean_text, "great staff small room");
        assert_eq!(r.year, Some(2017));
        assert_eq!(r.score, 7.9);
    }

    #[test]
    fn missing_column_is_reported() {
        let err = run("body,score\nx,1\n", CsvSchema::Generic).err().unwrap();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "text"));
    }

    #[test]
    fn record_file_round_trip() {
        let p = run("text,score\na b,3\nb c,8\n", CsvSchema::Generic).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_record_file(&path, &p.file).unwrap();
        assert_eq!(read_record_file(&path).unwrap(), p.file);
    }
}
