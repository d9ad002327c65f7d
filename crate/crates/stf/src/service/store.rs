//! One directory per job: `request.json` exactly as submitted, `status.json`
//! rewritten atomically on every transition, and the artifacts.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::artifacts::ArtifactPaths;

pub const REQUEST_FILE: &str = "request.json";
pub const STATUS_FILE: &str = "status.json";
pub const RESTART_NOTE: &str = "interrupted: the service restarted while this job was running";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub status: JobStatus,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub artifact_paths: ArtifactPaths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_content_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("job store i/o: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt status file for job {job_id}: {source}")]
    Corrupt {
        job_id: String,
        source: serde_json::Error,
    },
}

#[derive(Debug)]
pub struct JobStore {
    jobs: PathBuf,
}

impl JobStore {
    pub fn open(data_dir: &Path) -> Result<Self, StoreError> {
        let jobs = data_dir.join("jobs");
        fs::create_dir_all(&jobs)?;
        Ok(Self { jobs })
    }

    /// Ids are UUIDs; anything else is never looked up on disk.
    pub fn is_valid_id(id: &str) -> bool {
        uuid::Uuid::try_parse(id).is_ok()
    }

    pub fn job_dir(&self, id: &str) -> PathBuf {
        self.jobs.join(id)
    }

    pub fn create(&self, request_bytes: &[u8]) -> Result<JobRecord, StoreError> {
        let job_id = uuid::Uuid::now_v7().simple().to_string();
        let dir = self.job_dir(&job_id);
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(REQUEST_FILE), request_bytes)?;
        let record = JobRecord {
            job_id,
            status: JobStatus::Queued,
            created_at: Utc::now(),
            started_at: None,
            finished_at: None,
            artifact_paths: ArtifactPaths::default(),
            video_content_type: None,
            error_message: None,
        };
        self.save(&record)?;
        Ok(record)
    }

    pub fn save(&self, record: &JobRecord) -> Result<(), StoreError> {
        let json = serde_json::to_vec_pretty(record).expect("job records always serialize");
        write_atomic(&self.job_dir(&record.job_id).join(STATUS_FILE), &json)?;
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<Option<JobRecord>, StoreError> {
        if !Self::is_valid_id(id) {
            return Ok(None);
        }
        let bytes = match fs::read(self.job_dir(id).join(STATUS_FILE)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        serde_json::from_slice(&bytes).map(Some).map_err(|source| StoreError::Corrupt {
            job_id: id.to_string(),
            source,
        })
    }

    pub fn request_bytes(&self, id: &str) -> Result<Vec<u8>, StoreError> {
        Ok(fs::read(self.job_dir(id).join(REQUEST_FILE))?)
    }

    /// Every job id, oldest first.
    pub fn ids(&self) -> Result<Vec<String>, StoreError> {
        let mut ids: Vec<String> = fs::read_dir(&self.jobs)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| Self::is_valid_id(id))
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Marks jobs left `running` by a previous process as failed and returns
    /// the ids still `queued`, oldest first.
    pub fn sweep(&self) -> Result<Vec<String>, StoreError> {
        let mut queued = Vec::new();
        for id in self.ids()? {
            let Some(mut record) = self.load(&id)? else {
                continue;
            };
            match record.status {
                JobStatus::Running => {
                    record.status = JobStatus::Failed;
                    record.finished_at = Some(Utc::now());
                    record.error_message = Some(RESTART_NOTE.to_string());
                    self.save(&record)?;
                    log::warn!("job {id} was running at shutdown; marked failed");
                }
                JobStatus::Queued => queued.push(id),
                JobStatus::Done | JobStatus::Failed => {}
            }
        }
        Ok(queued)
    }
}

/// Writes to a sibling temp file, syncs it, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
