//! Review ingestion, text preprocessing, splitting and document construction.
//!
//! The pipeline runs in four stages, each producing an immutable value:
//! [`load_reviews`] → [`preprocess`] → [`split`] → [`build_documents`].
//! [`PreparedDataset`] bundles the results and persists them as a dataset
//! directory that the training and explanation commands consume.

mod dataset;
mod documents;
mod preprocess;
mod split;
mod stats;
mod stopwords;

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{CarpError, Result};

pub use dataset::{DatasetMeta, PreparedDataset, ReviewSentences};
pub use documents::{build_documents, Document, DocumentBank, TokenOrigin};
pub use preprocess::{
    preprocess, tokenize, LinearRatingMap, PreprocessConfig, ProcessedCorpus, ProcessedReview,
    Vocabulary, OOV_INDEX, PAD_INDEX,
};
pub use split::{split, Example, SplitConfig, SplitCorpus, SplitEntry, SplitKind};
pub use stats::{corpus_stats, StatsReport};
pub use stopwords::ENGLISH_STOPWORDS;

/// One raw (user, item, rating, review) observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub text: String,
    #[serde(default)]
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, Default)]
pub struct ReviewCorpus {
    pub records: Vec<ReviewRecord>,
    /// Lines that could not be parsed and were skipped.
    pub malformed: usize,
}

impl ReviewCorpus {
    pub fn new(records: Vec<ReviewRecord>) -> Self {
        ReviewCorpus {
            records,
            malformed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    /// Amazon review dump: one JSON object per line with `reviewerID`,
    /// `asin`, `overall`, `reviewText` and optionally `unixReviewTime`.
    AmazonJsonl,
    /// CSV with a header row containing `user_id,item_id,rating,text` and an
    /// optional `timestamp` column.
    GenericCsv,
}

impl std::str::FromStr for InputFormat {
    type Err = CarpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amazon-jsonl" => Ok(InputFormat::AmazonJsonl),
            "generic-csv" => Ok(InputFormat::GenericCsv),
            other => Err(CarpError::Config(format!("unknown input format `{other}`"))),
        }
    }
}

#[derive(Deserialize)]
struct AmazonLine {
    #[serde(rename = "reviewerID")]
    reviewer_id: String,
    asin: String,
    overall: f64,
    #[serde(rename = "reviewText", default)]
    review_text: Option<String>,
    #[serde(rename = "unixReviewTime", default)]
    unix_review_time: Option<i64>,
}

#[derive(Deserialize)]
struct CsvRow {
    user_id: String,
    item_id: String,
    rating: f64,
    #[serde(default)]
    text: String,
    #[serde(default)]
    timestamp: Option<i64>,
}

const MAX_MALFORMED_FRACTION: f64 = 0.10;

/// Reads a review file. Gzip input is detected from its magic bytes.
///
/// Malformed lines are counted and skipped; more than 10% malformed lines is
/// an error. Record order equals file order.
pub fn load_reviews(path: &Path, format: InputFormat) -> Result<ReviewCorpus> {
    let reader = open_maybe_gz(path)?;
    let (records, malformed, total) = match format {
        InputFormat::AmazonJsonl => read_amazon(reader, path)?,
        InputFormat::GenericCsv => read_csv(reader)?,
    };
    if total == 0 {
        log::warn!("{} contains no review lines", path.display());
    }
    if total > 0 && malformed as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(CarpError::TooManyMalformed {
            path: path.to_path_buf(),
            malformed,
            total,
        });
    }
    if malformed > 0 {
        log::warn!(
            "skipped {malformed} malformed line(s) of {total} in {}",
            path.display()
        );
    }
    Ok(ReviewCorpus { records, malformed })
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file = File::open(path).map_err(|e| CarpError::io(path, e))?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic).map_err(|e| CarpError::io(path, e))?;
    let file = File::open(path).map_err(|e| CarpError::io(path, e))?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

fn read_amazon(reader: Box<dyn BufRead>, path: &Path) -> Result<(Vec<ReviewRecord>, usize, usize)> {
    let mut records = Vec::new();
    let mut malformed = 0;
    let mut total = 0;
    for line in reader.lines() {
        let line = line.map_err(|e| CarpError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match serde_json::from_str::<AmazonLine>(&line) {
            Ok(row) => records.push(ReviewRecord {
                user_id: row.reviewer_id,
                item_id: row.asin,
                rating: row.overall,
                text: row.review_text.unwrap_or_default(),
                timestamp: row.unix_review_time,
            }),
            Err(_) => malformed += 1,
        }
    }
    Ok((records, malformed, total))
}

fn read_csv(reader: Box<dyn BufRead>) -> Result<(Vec<ReviewRecord>, usize, usize)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let mut records = Vec::new();
    let mut malformed = 0;
    let mut total = 0;
    for row in rdr.deserialize::<CsvRow>() {
        total += 1;
        match row {
            Ok(row) => records.push(ReviewRecord {
                user_id: row.user_id,
                item_id: row.item_id,
                rating: row.rating,
                text: row.text,
                timestamp: row.timestamp,
            }),
            Err(_) => malformed += 1,
        }
    }
    Ok((records, malformed, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents).unwrap();
        f
    }

    #[test]
    fn empty_file_gives_empty_corpus() {
        let f = write_tmp(b"");
        let corpus = load_reviews(f.path(), InputFormat::AmazonJsonl).unwrap();
        assert!(corpus.is_empty());
        assert_eq!(corpus.malformed, 0);
    }

    #[test]
    fn truncated_line_is_skipped_and_counted() {
        // 1 of 2 malformed is 50%, so raise the good-line count to stay under
        // the 10% cap and check the count separately.
        let good = r#"{"reviewerID":"u1","asin":"i1","overall":5.0,"reviewText":"great strings","unixReviewTime":10}"#;
        let bad = r#"{"reviewerID":"u2","asin":"i1","overall":4"#;
        let f = write_tmp(format!("{good}\n{bad}\n").as_bytes());
        let err = load_reviews(f.path(), InputFormat::AmazonJsonl).unwrap_err();
        assert!(matches!(err, CarpError::TooManyMalformed { malformed: 1, total: 2, .. }));

        let mut text = String::new();
        for _ in 0..10 {
            text.push_str(good);
            text.push('\n');
        }
        text.push_str(bad);
        let f = write_tmp(text.as_bytes());
        let corpus = load_reviews(f.path(), InputFormat::AmazonJsonl).unwrap();
        assert_eq!(corpus.len(), 10);
        assert_eq!(corpus.malformed, 1);
        assert_eq!(corpus.records[0].timestamp, Some(10));
    }

    #[test]
    fn gzip_input_is_detected() {
        use flate2::write::GzEncoder;
        let line = r#"{"reviewerID":"u1","asin":"i1","overall":3.0,"reviewText":"fine"}"#;
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(line.as_bytes()).unwrap();
        let f = write_tmp(&enc.finish().unwrap());
        let corpus = load_reviews(f.path(), InputFormat::AmazonJsonl).unwrap();
        assert_eq!(corpus.records[0].text, "fine");
        assert_eq!(corpus.records[0].timestamp, None);
    }

    #[test]
    fn csv_with_header() {
        let f = write_tmp(b"user_id,item_id,rating,text,timestamp\na,x,4,\"nice, loud\",7\nb,y,2,meh,\n");
        let corpus = load_reviews(f.path(), InputFormat::GenericCsv).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.records[0].text, "nice, loud");
        assert_eq!(corpus.records[0].timestamp, Some(7));
        assert_eq!(corpus.records[1].timestamp, None);
    }

    #[test]
    fn missing_file_is_fatal() {
        let err = load_reviews(Path::new("/nonexistent/reviews.json"), InputFormat::AmazonJsonl);
        assert!(matches!(err, Err(CarpError::Io { .. })));
    }
}
