//! The single job worker. It is the only writer of `running`, `done` and
//! `failed` transitions.

use chrono::Utc;
use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::mpsc::Receiver;
use std::sync::Arc;
use std::thread::JoinHandle;

use stf_core::{Pipeline, RequestDocument};

use super::store::{JobRecord, JobStatus, JobStore};
use crate::artifacts::{write_generation, ArtifactPaths};

pub struct Worker {
    store: Arc<JobStore>,
    model_dir: Option<PathBuf>,
    prefer_mp4: bool,
    pipelines: HashMap<String, Pipeline>,
}

impl Worker {
    pub fn new(store: Arc<JobStore>, model_dir: Option<PathBuf>, prefer_mp4: bool) -> Self {
        Self {
            store,
            model_dir,
            prefer_mp4,
            pipelines: HashMap::new(),
        }
    }

    /// Runs jobs in arrival order until every sender is dropped.
    pub fn spawn(mut self, queue: Receiver<String>) -> JoinHandle<()> {
        std::thread::Builder::new()
            .name("stf-worker".into())
            .spawn(move || {
                for id in queue {
                    if let Err(e) = self.process(&id) {
                        log::error!("job {id}: {e}");
                    }
                }
            })
            .expect("spawn worker thread")
    }

    fn process(&mut self, id: &str) -> Result<(), super::store::StoreError> {
        let Some(mut record) = self.store.load(id)? else {
            log::warn!("queued job {id} has no record");
            return Ok(());
        };
        if record.status != JobStatus::Queued {
            return Ok(());
        }
        record.status = JobStatus::Running;
        record.started_at = Some(Utc::now());
        self.store.save(&record)?;
        log::info!("job {id} running");

        let outcome = catch_unwind(AssertUnwindSafe(|| self.execute(&record)));
        record.finished_at = Some(Utc::now());
        match outcome {
            Ok(Ok((paths, content_type))) => {
                record.status = JobStatus::Done;
                record.artifact_paths = paths;
                record.video_content_type = Some(content_type);
                let dir = self.store.job_dir(id);
                let video_ok = record
                    .artifact_paths
                    .video
                    .as_ref()
                    .is_some_and(|v| std::fs::metadata(dir.join(v)).is_ok_and(|m| m.len() > 0));
                if !video_ok {
                    record.status = JobStatus::Failed;
                    record.error_message = Some("video artifact missing after generation".into());
                }
            }
            Ok(Err(message)) => {
                record.status = JobStatus::Failed;
                record.error_message = Some(message);
            }
            Err(panic) => {
                let what = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "unknown panic".into());
                self.pipelines.remove(&record_model(&self.store, id));
                record.status = JobStatus::Failed;
                record.error_message = Some(format!("internal error: {what}"));
            }
        }
        self.store.save(&record)?;
        log::info!("job {id} {:?}", record.status);
        Ok(())
    }

    fn execute(&mut self, record: &JobRecord) -> Result<(ArtifactPaths, String), String> {
        let id = &record.job_id;
        let bytes = self.store.request_bytes(id).map_err(|e| e.to_string())?;
        let doc = RequestDocument::from_json(&bytes).map_err(|e| e.to_string())?;
        let request = doc.resolve().map_err(|e| e.to_string())?;
        let pipeline = match self.pipelines.entry(doc.model.clone()) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(Pipeline::from_model_id(&doc.model, self.model_dir.as_deref()).map_err(|e| e.to_string())?)
            }
        };
        let output = pipeline
            .run(&request, |p| log::debug!("job {id}: step {}/{}", p.step, p.total_steps))
            .map_err(|e| e.to_string())?;
        let (paths, format) =
            write_generation(&output, &self.store.job_dir(id), self.prefer_mp4).map_err(|e| e.to_string())?;
        Ok((paths, format.content_type().to_string()))
    }
}

fn record_model(store: &JobStore, id: &str) -> String {
    store
        .request_bytes(id)
        .ok()
        .and_then(|b| RequestDocument::from_json(&b).ok())
        .map(|d| d.model)
        .unwrap_or_default()
}
