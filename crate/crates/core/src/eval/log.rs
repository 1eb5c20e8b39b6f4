use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{create_file, open_file, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub hour: i64,
    pub user: String,
    pub item: String,
    pub kind: String,
    pub weight: f64,
}

/// Timestamped user-item interactions, kept in canonical order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionLog {
    records: Vec<Interaction>,
}

impl InteractionLog {
    /// Sorts by (hour, user, item, kind); weights must be positive and finite.
    pub fn new(mut records: Vec<Interaction>) -> Result<Self> {
        if let Some(bad) = records.iter().find(|r| !(r.weight > 0.0 && r.weight.is_finite())) {
            return Err(Error::validation(format!(
                "interaction weight must be > 0, got {} for ({}, {})",
                bad.weight, bad.user, bad.item
            )));
        }
        records.sort_by(|a, b| {
            (a.hour, &a.user, &a.item, &a.kind)
                .cmp(&(b.hour, &b.user, &b.item, &b.kind))
                .then(a.weight.total_cmp(&b.weight))
        });
        Ok(Self { records })
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn hour_range(&self) -> Option<(i64, i64)> {
        Some((self.records.first()?.hour, self.records.last()?.hour))
    }

    /// Records with `lo <= hour <= hi`.
    pub fn between(&self, lo: i64, hi: i64) -> &[Interaction] {
        let start = self.records.partition_point(|r| r.hour < lo);
        let end = self.records.partition_point(|r| r.hour <= hi);
        &self.records[start..end.max(start)]
    }

    /// TSV `hour<TAB>user<TAB>item<TAB>type<TAB>weight`; `#` lines and blanks skipped.
    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut records = Vec::new();
        for (k, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = Some(k + 1);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(Error::parse(lineno, format!("expected 5 tab-separated fields, got {}", f.len())));
            }
            let hour = f[0]
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad hour {:?}", f[0])))?;
            let weight: f64 = f[4]
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad weight {:?}", f[4])))?;
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(Error::validation(format!("line {}: weight must be > 0, got {weight}", k + 1)));
            }
            records.push(Interaction {
                hour,
                user: f[1].to_string(),
                item: f[2].to_string(),
                kind: f[3].to_string(),
                weight,
            });
        }
        Self::new(records)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_tsv(BufReader::new(open_file(path)?))
    }

    pub fn write_tsv<W: Write>(&self, w: &mut W) -> Result<()> {
        for r in &self.records {
            writeln!(w, "{}\t{}\t{}\t{}\t{}", r.hour, r.user, r.item, r.kind, r.weight)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(create_file(path)?);
        self.write_tsv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}
