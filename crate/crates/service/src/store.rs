//! SQLite-backed persistence for submissions, uploaded images, image records
//! under review and the review audit trail.
//!
//! Schema:
//!
//! ```sql
//! images       (sha256 PK, path, bytes, upload_count, first_seen)
//! submissions  (id PK, image_sha256 -> images, questionnaire JSON, status,
//!               result JSON NULL, error NULL, created_at, updated_at)
//! records      (id PK, record JSON, image_path, verification, augmented)
//! review_audit (id PK AUTOINCREMENT, record_id, action, reviewer, note, at)
//! ```
//!
//! Timestamps are fixed-width RFC 3339 UTC strings so they compare
//! lexicographically.

use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, SecondsFormat, Utc};
use lesion_triage_core::{Dataset, ImageRecord, Verification};
use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, ServiceError};
use crate::questionnaire::Questionnaire;
use crate::result::ScanResult;

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS images (
    sha256 TEXT PRIMARY KEY,
    path TEXT NOT NULL,
    bytes INTEGER NOT NULL,
    upload_count INTEGER NOT NULL,
    first_seen TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS submissions (
    id TEXT PRIMARY KEY,
    image_sha256 TEXT NOT NULL REFERENCES images(sha256),
    questionnaire TEXT NOT NULL,
    status TEXT NOT NULL,
    result TEXT,
    error TEXT,
    created_at TEXT NOT NULL,
    updated_at TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS submissions_created ON submissions(created_at);
CREATE INDEX IF NOT EXISTS submissions_status ON submissions(status);
CREATE TABLE IF NOT EXISTS records (
    id TEXT PRIMARY KEY,
    record TEXT NOT NULL,
    image_path TEXT NOT NULL,
    verification TEXT NOT NULL,
    augmented INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS review_audit (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    record_id TEXT NOT NULL,
    action TEXT NOT NULL,
    reviewer TEXT NOT NULL,
    note TEXT NOT NULL,
    at TEXT NOT NULL
);
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Pending,
    Classified,
    Failed,
}

impl Status {
    fn as_str(self) -> &'static str {
        match self {
            Status::Pending => "Pending",
            Status::Classified => "Classified",
            Status::Failed => "Failed",
        }
    }

    fn parse(s: &str) -> Self {
        match s {
            "Classified" => Status::Classified,
            "Failed" => Status::Failed,
            _ => Status::Pending,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Submission {
    pub id: String,
    pub image_sha256: String,
    pub questionnaire: Questionnaire,
    pub status: Status,
    pub result: Option<ScanResult>,
    pub error: Option<String>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Verified,
    Rejected,
}

impl Verdict {
    pub fn verification(self) -> Verification {
        match self {
            Verdict::Verified => Verification::ExpertVerified,
            Verdict::Rejected => Verification::Rejected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub record_id: String,
    pub action: String,
    pub reviewer: String,
    pub note: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StoredImage {
    pub sha256: String,
    pub path: PathBuf,
    /// True when these bytes had been uploaded before.
    pub duplicate: bool,
}

pub fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Micros, true)
}

fn parse_time(s: &str) -> rusqlite::Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, Box::new(e)))
}

fn json_col<T: serde::de::DeserializeOwned>(s: &str) -> rusqlite::Result<T> {
    serde_json::from_str(s)
        .map_err(|e| rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, Box::new(e)))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

pub struct Store {
    conn: Mutex<Connection>,
    image_dir: PathBuf,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("image_dir", &self.image_dir).finish()
    }
}

impl Store {
    /// Opens (creating if needed) the database file. Uploaded bytes live in
    /// `<stem>-images/` next to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("store");
        let image_dir = path.with_file_name(format!("{stem}-images"));
        std::fs::create_dir_all(image_dir.join("saliency"))?;
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "NORMAL")?;
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.busy_timeout(std::time::Duration::from_secs(5))?;
        conn.execute_batch(SCHEMA)?;
        Ok(Self {
            conn: Mutex::new(conn),
            image_dir,
        })
    }

    fn conn(&self) -> MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn image_dir(&self) -> &Path {
        &self.image_dir
    }

    pub fn saliency_path(&self, submission_id: &str) -> PathBuf {
        self.image_dir.join("saliency").join(format!("{submission_id}.png"))
    }

    /// Writes upload bytes under their SHA-256 name. Repeat uploads bump a
    /// counter instead of storing the bytes again.
    pub fn put_image(&self, bytes: &[u8], extension: &str) -> Result<StoredImage> {
        let sha = hex::encode(Sha256::digest(bytes));
        let path = self.image_dir.join(&sha[..2]).join(format!("{sha}.{extension}"));
        let conn = self.conn();
        let existing: Option<String> = conn
            .query_row("SELECT path FROM images WHERE sha256 = ?1", [&sha], |r| r.get(0))
            .optional()?;
        if let Some(p) = existing {
            conn.execute("UPDATE images SET upload_count = upload_count + 1 WHERE sha256 = ?1", [&sha])?;
            tracing::info!(sha256 = %sha, "duplicate upload");
            return Ok(StoredImage {
                sha256: sha,
                path: PathBuf::from(p),
                duplicate: true,
            });
        }
        std::fs::create_dir_all(path.parent().unwrap())?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, &path)?;
        conn.execute(
            "INSERT INTO images (sha256, path, bytes, upload_count, first_seen) VALUES (?1, ?2, ?3, 1, ?4)",
            params![sha, path.to_string_lossy(), bytes.len() as i64, timestamp(Utc::now())],
        )?;
        Ok(StoredImage {
            sha256: sha,
            path,
            duplicate: false,
        })
    }

    pub fn image_path(&self, sha256: &str) -> Result<PathBuf> {
        self.conn()
            .query_row("SELECT path FROM images WHERE sha256 = ?1", [sha256], |r| r.get::<_, String>(0))
            .optional()?
            .map(PathBuf::from)
            .ok_or_else(|| ServiceError::NotFound(sha256.to_string()))
    }

    pub fn upload_count(&self, sha256: &str) -> Result<u64> {
        Ok(self
            .conn()
            .query_row("SELECT upload_count FROM images WHERE sha256 = ?1", [sha256], |r| r.get::<_, i64>(0))
            .optional()?
            .unwrap_or(0) as u64)
    }

    pub fn insert_submission(
        &self,
        id: &str,
        image_sha256: &str,
        questionnaire: &Questionnaire,
        created_at: DateTime<Utc>,
    ) -> Result<Submission> {
        let t = timestamp(created_at);
        self.conn().execute(
            "INSERT INTO submissions (id, image_sha256, questionnaire, status, created_at, updated_at)
             VALUES (?1, ?2, ?3, 'Pending', ?4, ?4)",
            params![id, image_sha256, to_json(questionnaire), t],
        )?;
        self.submission(id)
    }

    fn finish(&self, id: &str, status: Status, result: Option<&ScanResult>, error: Option<&str>) -> Result<()> {
        let conn = self.conn();
        let created: String = conn
            .query_row("SELECT created_at FROM submissions WHERE id = ?1", [id], |r| r.get(0))
            .optional()?
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))?;
        // Never let updated_at precede created_at, even if the clock steps back.
        let now = timestamp(Utc::now()).max(created);
        conn.execute(
            "UPDATE submissions SET status = ?2, result = ?3, error = ?4, updated_at = ?5 WHERE id = ?1",
            params![id, status.as_str(), result.map(to_json), error, now],
        )?;
        Ok(())
    }

    pub fn set_classified(&self, id: &str, result: &ScanResult) -> Result<()> {
        self.finish(id, Status::Classified, Some(result), None)
    }

    pub fn set_failed(&self, id: &str, error: &str) -> Result<()> {
        self.finish(id, Status::Failed, None, Some(error))
    }

    pub fn submission(&self, id: &str) -> Result<Submission> {
        self.conn()
            .query_row(
                "SELECT id, image_sha256, questionnaire, status, result, error, created_at, updated_at
                 FROM submissions WHERE id = ?1",
                [id],
                row_to_submission,
            )
            .optional()?
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    /// Pending submission ids, oldest first.
    pub fn pending_ids(&self) -> Result<Vec<String>> {
        let conn = self.conn();
        let mut stmt =
            conn.prepare("SELECT id FROM submissions WHERE status = 'Pending' ORDER BY created_at, id")?;
        let ids = stmt.query_map([], |r| r.get(0))?.collect::<rusqlite::Result<_>>()?;
        Ok(ids)
    }

    pub fn count_submissions(&self) -> Result<u64> {
        Ok(self.conn().query_row("SELECT COUNT(*) FROM submissions", [], |r| r.get::<_, i64>(0))? as u64)
    }

    /// Questionnaires of submissions created within `[from, to]` (either end open).
    pub fn questionnaires_between(
        &self,
        from: Option<DateTime<Utc>>,
        to: Option<DateTime<Utc>>,
    ) -> Result<Vec<Questionnaire>> {
        let lo = from.map(timestamp).unwrap_or_default();
        let hi = to.map(timestamp).unwrap_or_else(|| "9999".into());
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT questionnaire FROM submissions WHERE created_at >= ?1 AND created_at <= ?2 ORDER BY created_at, id",
        )?;
        let rows = stmt
            .query_map(params![lo, hi], |r| json_col(&r.get::<_, String>(0)?))?
            .collect::<rusqlite::Result<_>>()?;
        Ok(rows)
    }

    /// Adds records not already present, resolving image paths against the
    /// dataset root. Existing rows keep their review state. Returns the number added.
    pub fn import_records(&self, dataset: &Dataset) -> Result<usize> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let mut added = 0;
        for r in &dataset.records {
            added += tx.execute(
                "INSERT OR IGNORE INTO records (id, record, image_path, verification, augmented)
                 VALUES (?1, ?2, ?3, ?4, ?5)",
                params![
                    r.id,
                    to_json(r),
                    dataset.resolve(&r.path).to_string_lossy(),
                    r.verification.token(),
                    r.is_augmented()
                ],
            )?;
        }
        tx.commit()?;
        Ok(added)
    }

    pub fn record(&self, id: &str) -> Result<(ImageRecord, PathBuf)> {
        self.conn()
            .query_row("SELECT record, image_path FROM records WHERE id = ?1", [id], |r| {
                Ok((json_col(&r.get::<_, String>(0)?)?, PathBuf::from(r.get::<_, String>(1)?)))
            })
            .optional()?
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    /// Every stored record, ordered by id.
    pub fn records(&self) -> Result<Vec<ImageRecord>> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT record FROM records ORDER BY id")?;
        let rows = stmt
            .query_map([], |r| json_col(&r.get::<_, String>(0)?))?
            .collect::<rusqlite::Result<_>>()?;
        Ok(rows)
    }

    /// Unverified augmented records, ordered by id, plus the total queue length.
    pub fn review_queue(&self, offset: usize, limit: usize) -> Result<(usize, Vec<ImageRecord>)> {
        let conn = self.conn();
        let total: i64 = conn.query_row(
            "SELECT COUNT(*) FROM records WHERE augmented = 1 AND verification = 'unverified'",
            [],
            |r| r.get(0),
        )?;
        let mut stmt = conn.prepare(
            "SELECT record FROM records WHERE augmented = 1 AND verification = 'unverified'
             ORDER BY id LIMIT ?1 OFFSET ?2",
        )?;
        let rows = stmt
            .query_map(params![limit as i64, offset as i64], |r| json_col(&r.get::<_, String>(0)?))?
            .collect::<rusqlite::Result<_>>()?;
        Ok((total as usize, rows))
    }

    /// One-way transition of an unverified augmented record, with an audit entry.
    pub fn review(&self, id: &str, verdict: Verdict, reviewer: &str, note: &str) -> Result<ImageRecord> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let json: String = tx
            .query_row("SELECT record FROM records WHERE id = ?1", [id], |r| r.get(0))
            .optional()?
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))?;
        let mut record: ImageRecord = json_col(&json)?;
        if !record.is_augmented() {
            return Err(ServiceError::NotAugmented(id.to_string()));
        }
        if record.verification != Verification::Unverified {
            return Err(ServiceError::AlreadyReviewed(id.to_string()));
        }
        record.verification = verdict.verification();
        tx.execute(
            "UPDATE records SET record = ?2, verification = ?3 WHERE id = ?1",
            params![id, to_json(&record), record.verification.token()],
        )?;
        tx.execute(
            "INSERT INTO review_audit (record_id, action, reviewer, note, at) VALUES (?1, ?2, ?3, ?4, ?5)",
            params![id, record.verification.token(), reviewer, note, timestamp(Utc::now())],
        )?;
        tx.commit()?;
        Ok(record)
    }

    /// Administrative reset back to unverified so a record can be reviewed again.
    pub fn reset_review(&self, id: &str, admin: &str, note: &str) -> Result<ImageRecord> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let json: String = tx
            .query_row("SELECT record FROM records WHERE id = ?1", [id], |r| r.get(0))
            .optional()?
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))?;
        let mut record: ImageRecord = json_col(&json)?;
        record.verification = Verification::Unverified;
        tx.execute(
            "UPDATE records SET record = ?2, verification = 'unverified' WHERE id = ?1",
            params![id, to_json(&record)],
        )?;
        tx.execute(
            "INSERT INTO review_audit (record_id, action, reviewer, note, at) VALUES (?1, 'reset', ?2, ?3, ?4)",
            params![id, admin, note, timestamp(Utc::now())],
        )?;
        tx.commit()?;
        Ok(record)
    }

    pub fn audit_log(&self, id: &str) -> Result<Vec<AuditEntry>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT record_id, action, reviewer, note, at FROM review_audit WHERE record_id = ?1 ORDER BY id",
        )?;
        let rows = stmt
            .query_map([id], |r| {
                Ok(AuditEntry {
                    record_id: r.get(0)?,
                    action: r.get(1)?,
                    reviewer: r.get(2)?,
                    note: r.get(3)?,
                    at: parse_time(&r.get::<_, String>(4)?)?,
                })
            })?
            .collect::<rusqlite::Result<_>>()?;
        Ok(rows)
    }

    /// Copies stored review states onto matching records of `dataset`.
    pub fn apply_verdicts(&self, dataset: &Dataset) -> Result<Dataset> {
        let stored: std::collections::HashMap<String, Verification> =
            self.records()?.into_iter().map(|r| (r.id, r.verification)).collect();
        let records = dataset
            .records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if let Some(&v) = stored.get(&r.id) {
                    r.verification = v;
                }
                r
            })
            .collect();
        Ok(dataset.derive(records))
    }
}

fn row_to_submission(r: &rusqlite::Row<'_>) -> rusqlite::Result<Submission> {
    let result: Option<String> = r.get(4)?;
    Ok(Submission {
        id: r.get(0)?,
        image_sha256: r.get(1)?,
        questionnaire: json_col(&r.get::<_, String>(2)?)?,
        status: Status::parse(&r.get::<_, String>(3)?),
        result: result.as_deref().map(json_col).transpose()?,
        error: r.get(5)?,
        created_at: parse_time(&r.get::<_, String>(6)?)?,
        updated_at: parse_time(&r.get::<_, String>(7)?)?,
    })
}
