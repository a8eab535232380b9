//! Append-only invocation audit log: one XML record per line, sequence
//! numbers gap-free from 1 across restarts.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::Mutex;

use infoflow_core::protocol::{self, InvocationAuditRecord};

struct Inner {
    file: File,
    records: Vec<InvocationAuditRecord>,
}

pub struct AuditLog {
    inner: Mutex<Inner>,
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

impl AuditLog {
    /// Opens or creates the log, loading existing records.
    pub fn open(path: &Path) -> io::Result<AuditLog> {
        let existing = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e),
        };
        if !existing.is_empty() && !existing.ends_with(b"\n") {
            return Err(invalid(format!("{} ends with a partial record", path.display())));
        }
        let mut records = Vec::new();
        for (i, line) in existing.split(|b| *b == b'\n').filter(|l| !l.is_empty()).enumerate() {
            let r = protocol::decode_audit_record(line).map_err(|e| invalid(format!("{} line {}: {e}", path.display(), i + 1)))?;
            if r.sequence != i as u64 + 1 {
                return Err(invalid(format!("{} line {}: sequence {} out of order", path.display(), i + 1, r.sequence)));
            }
            records.push(r);
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog {
            inner: Mutex::new(Inner { file, records }),
        })
    }

    /// Assigns the next sequence number and appends. Returns the sequence.
    pub fn append(&self, mut record: InvocationAuditRecord) -> io::Result<u64> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        record.sequence = inner.records.len() as u64 + 1;
        let mut line = protocol::encode_audit_record(&record).map_err(|e| invalid(e.to_string()))?;
        line.push(b'\n');
        inner.file.write_all(&line)?;
        inner.file.flush()?;
        let seq = record.sequence;
        inner.records.push(record);
        Ok(seq)
    }

    /// Records with sequence greater than `since`, ascending.
    pub fn since(&self, since: u64) -> Vec<InvocationAuditRecord> {
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let start = usize::try_from(since).unwrap_or(usize::MAX).min(inner.records.len());
        inner.records[start..].to_vec()
    }

    pub fn len(&self) -> u64 {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).records.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use infoflow_core::Timestamp;

    fn rec(user: &str) -> InvocationAuditRecord {
        InvocationAuditRecord {
            sequence: 0,
            timestamp: Timestamp::from_unix(0).unwrap(),
            user: user.into(),
            action: "directory".into(),
            service: None,
            params: Default::default(),
            outcome: "ok".into(),
            rows: None,
        }
    }

    #[test]
    fn sequences_continue_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.log");
        let log = AuditLog::open(&path).unwrap();
        assert_eq!(log.append(rec("a")).unwrap(), 1);
        assert_eq!(log.append(rec("b")).unwrap(), 2);
        let bytes = std::fs::read(&path).unwrap();
        drop(log);
        let log = AuditLog::open(&path).unwrap();
        assert_eq!(log.append(rec("c")).unwrap(), 3);
        assert!(std::fs::read(&path).unwrap().starts_with(&bytes));
        assert_eq!(log.since(1).iter().map(|r| r.sequence).collect::<Vec<_>>(), vec![2, 3]);
        assert!(log.since(3).is_empty());
        assert!(log.since(u64::MAX).is_empty());
    }

    #[test]
    fn corrupt_log_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.log");
        std::fs::write(&path, "<audit-record sequence=\"2\"").unwrap();
        assert!(AuditLog::open(&path).is_err());
    }
}
