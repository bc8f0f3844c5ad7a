//! Delimited-text ledger files.
//!
//! ```text
//! # ecash-ledger format=1
//! # scenario_digest=<64 hex digits>
//! # seed=<u64>
//! # start_date=<YYYY-MM-DD>
//! # duration_days=<u32>
//! tx_id,date,hour,...          (column names, see COLUMNS)
//! 1,1997-10-09,0,...           (one record per line)
//! ```
//!
//! Amounts are integer minor units. Empty optional fields are empty cells.
//! The file digest is SHA-256 over the exact bytes written.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::SimClock;
use crate::money::Money;
use crate::record::{PurseId, TransactionRecord};
use crate::txgen::RecordSink;

pub const FORMAT_VERSION: u32 = 1;

pub const COLUMNS: [&str; 18] = [
    "tx_id",
    "date",
    "hour",
    "primary_period",
    "secondary_period",
    "tertiary_period",
    "tx_type",
    "status",
    "payer_id",
    "payer_class",
    "payee_id",
    "payee_class",
    "amount",
    "payer_balance_after",
    "payee_balance_after",
    "onchip_events",
    "counterfeit_taint",
    "taint_amount",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerHeader {
    pub format_version: u32,
    pub scenario_digest: String,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub duration_days: u32,
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Corrupt { line: u64, message: String },
}

fn corrupt(line: u64, message: impl Into<String>) -> LedgerError {
    LedgerError::Corrupt {
        line,
        message: message.into(),
    }
}

struct HashingWriter<W> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Streams records to a ledger file; memory use does not grow with the
/// number of records.
pub struct LedgerWriter<W: Write> {
    csv: csv::Writer<HashingWriter<W>>,
    last: Option<(u32, u64)>,
    count: u64,
}

impl<W: Write> LedgerWriter<W> {
    pub fn new(inner: W, header: &LedgerHeader) -> io::Result<Self> {
        let mut hw = HashingWriter {
            inner,
            hasher: Sha256::new(),
        };
        write!(
            hw,
            "# ecash-ledger format={}\n# scenario_digest={}\n# seed={}\n# start_date={}\n# duration_days={}\n",
            header.format_version, header.scenario_digest, header.seed, header.start_date, header.duration_days
        )?;
        let mut csv = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(hw);
        csv.write_record(COLUMNS)?;
        Ok(LedgerWriter {
            csv,
            last: None,
            count: 0,
        })
    }

    pub fn write(&mut self, r: &TransactionRecord) -> io::Result<()> {
        let key = (r.timestamp.tertiary_period, r.tx_id);
        if self.last.is_some_and(|l| key <= l) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("record {} is out of (day, hour, tx_id) order", r.tx_id),
            ));
        }
        self.last = Some(key);
        self.count += 1;
        self.csv.write_record(to_row(r))?;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Flushes and returns the hex digest of everything written.
    pub fn finish(self) -> io::Result<String> {
        let mut hw = self.csv.into_inner().map_err(|e| e.into_error())?;
        hw.flush()?;
        Ok(hex::encode(hw.hasher.finalize()))
    }
}

impl<W: Write> RecordSink for LedgerWriter<W> {
    fn record(&mut self, r: &TransactionRecord) -> io::Result<()> {
        self.write(r)
    }
}

impl LedgerWriter<BufWriter<File>> {
    pub fn create(path: &Path, header: &LedgerHeader) -> io::Result<Self> {
        LedgerWriter::new(BufWriter::new(File::create(path)?), header)
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn to_row(r: &TransactionRecord) -> [String; 18] {
    let t = &r.timestamp;
    [
        r.tx_id.to_string(),
        t.date.to_string(),
        t.hour.to_string(),
        t.primary_period.to_string(),
        t.secondary_period.to_string(),
        t.tertiary_period.to_string(),
        r.tx_type.to_string(),
        r.status.to_string(),
        opt(r.payer_id),
        opt(r.payer_class),
        r.payee_id.to_string(),
        r.payee_class.to_string(),
        r.amount.minor().to_string(),
        opt(r.payer_balance_after.map(|m| m.minor())),
        r.payee_balance_after.minor().to_string(),
        r.onchip_events.to_string(),
        r.counterfeit_taint.to_string(),
        r.taint_amount.minor().to_string(),
    ]
}

fn parse_row(f: &csv::StringRecord, line: u64) -> Result<TransactionRecord, LedgerError> {
    if f.len() != COLUMNS.len() {
        return Err(corrupt(
            line,
            format!("expected {} fields, found {}", COLUMNS.len(), f.len()),
        ));
    }
    fn field<T: std::str::FromStr>(f: &csv::StringRecord, i: usize, line: u64) -> Result<T, LedgerError>
    where
        T::Err: std::fmt::Display,
    {
        f[i].parse()
            .map_err(|e| corrupt(line, format!("column `{}`: {e}", COLUMNS[i])))
    }
    fn optional<T: std::str::FromStr>(f: &csv::StringRecord, i: usize, line: u64) -> Result<Option<T>, LedgerError>
    where
        T::Err: std::fmt::Display,
    {
        if f[i].is_empty() {
            Ok(None)
        } else {
            field(f, i, line).map(Some)
        }
    }
    let hour: u8 = field(f, 2, line)?;
    if hour > 23 {
        return Err(corrupt(line, "column `hour`: out of range"));
    }
    Ok(TransactionRecord {
        tx_id: field(f, 0, line)?,
        timestamp: SimClock {
            date: field(f, 1, line)?,
            hour,
            primary_period: field(f, 3, line)?,
            secondary_period: field(f, 4, line)?,
            tertiary_period: field(f, 5, line)?,
        },
        tx_type: field(f, 6, line)?,
        status: field(f, 7, line)?,
        payer_id: optional::<u32>(f, 8, line)?.map(PurseId),
        payer_class: optional(f, 9, line)?,
        payee_id: PurseId(field(f, 10, line)?),
        payee_class: field(f, 11, line)?,
        amount: Money::new(field(f, 12, line)?),
        payer_balance_after: optional::<i64>(f, 13, line)?.map(Money::new),
        payee_balance_after: Money::new(field(f, 14, line)?),
        onchip_events: field(f, 15, line)?,
        counterfeit_taint: field(f, 16, line)?,
        taint_amount: Money::new(field(f, 17, line)?),
    })
}

fn header_value<'a>(line: &'a str, key: &str, n: u64) -> Result<&'a str, LedgerError> {
    line.strip_prefix("# ")
        .and_then(|s| s.strip_prefix(key))
        .and_then(|s| s.strip_prefix('='))
        .map(str::trim_end)
        .ok_or_else(|| corrupt(n, format!("expected `# {key}=...` header line")))
}

/// Record iterator over a ledger stream.
pub struct LedgerReader<R: Read> {
    header: LedgerHeader,
    records: csv::StringRecordsIntoIter<BufReader<R>>,
}

impl<R: Read> LedgerReader<R> {
    pub fn new(inner: R) -> Result<Self, LedgerError> {
        let mut buf = BufReader::new(inner);
        let mut lines = Vec::with_capacity(5);
        for n in 1..=5u64 {
            let mut l = String::new();
            if buf.read_line(&mut l)? == 0 {
                return Err(corrupt(n, "truncated header"));
            }
            lines.push(l);
        }
        let format = lines[0]
            .trim_end()
            .strip_prefix("# ecash-ledger format=")
            .ok_or_else(|| corrupt(1, "not a ledger file"))?;
        let parse_err = |n: u64| move |e: &dyn std::fmt::Display| corrupt(n, format!("bad header value: {e}"));
        let format_version: u32 = format.parse().map_err(|e| parse_err(1)(&e))?;
        if format_version != FORMAT_VERSION {
            return Err(corrupt(1, format!("unsupported format version {format_version}")));
        }
        let header = LedgerHeader {
            format_version,
            scenario_digest: header_value(&lines[1], "scenario_digest", 2)?.to_string(),
            seed: header_value(&lines[2], "seed", 3)?
                .parse()
                .map_err(|e| parse_err(3)(&e))?,
            start_date: header_value(&lines[3], "start_date", 4)?
                .parse()
                .map_err(|e| parse_err(4)(&e))?,
            duration_days: header_value(&lines[4], "duration_days", 5)?
                .parse()
                .map_err(|e| parse_err(5)(&e))?,
        };
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(buf);
        let mut records = csv.records();
        let cols = records.next().ok_or_else(|| corrupt(6, "missing column header"))?;
        let cols = cols.map_err(|e| corrupt(6, e.to_string()))?;
        if cols.iter().ne(COLUMNS.iter().copied()) {
            return Err(corrupt(6, "column header does not match this format version"));
        }
        Ok(LedgerReader {
            header,
            records: csv.into_records(),
        })
    }

    pub fn header(&self) -> &LedgerHeader {
        &self.header
    }
}

impl<R: Read> Iterator for LedgerReader<R> {
    type Item = Result<TransactionRecord, LedgerError>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = self.records.next()?;
        // The reader starts counting at the column header line.
        Some(match rec {
            Ok(r) => {
                let line = r.position().map_or(0, |p| p.line()) + 5;
                parse_row(&r, line)
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line()) + 5;
                Err(corrupt(line, e.to_string()))
            }
        })
    }
}

/// Writes a whole ledger and returns its digest.
pub fn write_ledger<'a>(
    records: impl IntoIterator<Item = &'a TransactionRecord>,
    header: &LedgerHeader,
    path: &Path,
) -> io::Result<String> {
    let mut w = LedgerWriter::create(path, header)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

pub fn open_ledger(path: &Path) -> Result<LedgerReader<File>, LedgerError> {
    LedgerReader::new(File::open(path)?)
}

/// Reads a whole ledger into memory.
pub fn read_ledger(path: &Path) -> Result<(LedgerHeader, Vec<TransactionRecord>), LedgerError> {
    let r = open_ledger(path)?;
    let header = r.header().clone();
    let records = r.collect::<Result<Vec<_>, _>>()?;
    Ok((header, records))
}

/// SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> io::Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    io::copy(&mut f, &mut h)?;
    Ok(hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::purse::PurseClass;
    use crate::record::{DenyReason, EventSet, TxStatus, TxType};

    fn header() -> LedgerHeader {
        LedgerHeader {
            format_version: FORMAT_VERSION,
            scenario_digest: "ab".repeat(32),
            seed: 7,
            start_date: NaiveDate::from_ymd_opt(1998, 1, 1).unwrap(),
            duration_days: 3,
        }
    }

    fn sample() -> Vec<TransactionRecord> {
        let start = header().start_date;
        vec![
            TransactionRecord {
                tx_id: 1,
                timestamp: SimClock::at(start, 0, 0),
                tx_type: TxType::CounterfeitInjection,
                status: TxStatus::Executed,
                payer_id: None,
                payer_class: None,
                payee_id: PurseId(9),
                payee_class: PurseClass::Consumer,
                amount: Money::new(5000),
                payer_balance_after: None,
                payee_balance_after: Money::new(5000),
                onchip_events: EventSet::EMPTY,
                counterfeit_taint: true,
                taint_amount: Money::new(5000),
            },
            TransactionRecord {
                tx_id: 2,
                timestamp: SimClock::at(start, 1, 13),
                tx_type: TxType::ConsumerToConsumer,
                status: TxStatus::Denied(DenyReason::PayeeLocked),
                payer_id: Some(PurseId(9)),
                payer_class: Some(PurseClass::Consumer),
                payee_id: PurseId(4),
                payee_class: PurseClass::Consumer,
                amount: Money::new(30000),
                payer_balance_after: Some(Money::new(5000)),
                payee_balance_after: Money::new(-0),
                onchip_events: EventSet::CTL_EXCEEDED.union(EventSet::PURSE_LOCKED),
                counterfeit_taint: false,
                taint_amount: Money::ZERO,
            },
        ]
    }

    #[test]
    fn round_trip_is_field_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        let d = write_ledger(&sample(), &header(), &p).unwrap();
        let (h, recs) = read_ledger(&p).unwrap();
        assert_eq!(h, header());
        assert_eq!(recs, sample());
        assert_eq!(d, file_digest(&p).unwrap());
    }

    #[test]
    fn empty_ledger_is_header_only_with_stable_digest() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        let da = write_ledger([], &header(), &a).unwrap();
        let db = write_ledger([], &header(), &b).unwrap();
        assert_eq!(da, db);
        let text = std::fs::read_to_string(&a).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(read_ledger(&a).unwrap().1.is_empty());
    }

    #[test]
    fn out_of_order_records_are_refused() {
        let mut w = LedgerWriter::new(Vec::new(), &header()).unwrap();
        let s = sample();
        w.write(&s[1]).unwrap();
        assert!(w.write(&s[0]).is_err());
    }

    #[test]
    fn corrupt_line_is_reported_with_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        write_ledger(&sample(), &header(), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap().replace(",30000,", ",3x000,");
        std::fs::write(&p, text).unwrap();
        match read_ledger(&p) {
            Err(LedgerError::Corrupt { line, message }) => {
                assert_eq!(line, 8, "{message}");
                assert!(message.contains("amount"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn streaming_writer_does_not_buffer_records() {
        struct Counting(u64);
        impl Write for Counting {
            fn write(&mut self, b: &[u8]) -> io::Result<usize> {
                self.0 += b.len() as u64;
                Ok(b.len())
            }
            fn flush(&mut self) -> io::Result<()> {
                Ok(())
            }
        }
        let mut w = LedgerWriter::new(Counting(0), &header()).unwrap();
        let mut r = sample()[1].clone();
        for i in 0..1_000_000u64 {
            r.tx_id = i + 10;
            w.write(&r).unwrap();
        }
        // Bytes reach the sink as they are produced.
        assert!(w.csv.get_ref().inner.0 > 50_000_000);
        w.finish().unwrap();
    }
}
