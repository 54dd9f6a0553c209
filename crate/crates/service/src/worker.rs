use std::sync::Arc;

use tokio::sync::mpsc;

use crate::error::{Result, ServiceError};
use crate::result::Triage;
use crate::store::Store;

/// Handle for enqueueing classification jobs by submission id.
#[derive(Debug, Clone)]
pub struct JobQueue {
    tx: Option<mpsc::UnboundedSender<String>>,
}

impl JobQueue {
    /// A queue with no worker behind it; jobs stay Pending in the store.
    pub fn detached() -> Self {
        Self { tx: None }
    }

    pub fn enqueue(&self, id: String) {
        if let Some(tx) = &self.tx {
            // A closed channel means shutdown; the job stays Pending and is
            // picked up again on the next start.
            let _ = tx.send(id);
        }
    }
}

/// Spawns `workers` consumers sharing one queue and re-enqueues every Pending
/// submission left over from a previous run.
pub fn spawn_workers(store: Arc<Store>, triage: Arc<dyn Triage>, workers: usize) -> Result<JobQueue> {
    if workers == 0 {
        return Ok(JobQueue::detached());
    }
    let (tx, rx) = mpsc::unbounded_channel::<String>();
    let rx = Arc::new(tokio::sync::Mutex::new(rx));
    for _ in 0..workers {
        let (rx, store, triage) = (rx.clone(), store.clone(), triage.clone());
        tokio::spawn(async move {
            loop {
                let Some(id) = rx.lock().await.recv().await else { break };
                let (store, triage) = (store.clone(), triage.clone());
                let job = tokio::task::spawn_blocking(move || process(&store, triage.as_ref(), &id));
                if let Ok(Err(e)) = job.await {
                    tracing::error!(error = %e, "job bookkeeping failed");
                }
            }
        });
    }
    let queue = JobQueue { tx: Some(tx) };
    for id in store.pending_ids()? {
        queue.enqueue(id);
    }
    Ok(queue)
}

/// Runs one job to completion, recording either the result or the failure.
pub fn process(store: &Store, triage: &dyn Triage, id: &str) -> Result<()> {
    let sub = store.submission(id)?;
    if sub.status != crate::store::Status::Pending {
        return Ok(());
    }
    let outcome = (|| -> Result<_> {
        let path = store.image_path(&sub.image_sha256)?;
        let image = image::open(&path)
            .map_err(|e| ServiceError::UndecodableImage(e.to_string()))?
            .to_rgb8();
        let t = triage.triage(&image)?;
        t.overlay
            .save(store.saliency_path(id))
            .map_err(|e| ServiceError::Io(std::io::Error::other(e)))?;
        Ok(t.result)
    })();
    match outcome {
        Ok(result) => store.set_classified(id, &result),
        Err(e) => {
            tracing::warn!(submission = id, error = %e, "classification failed");
            store.set_failed(id, &e.to_string())
        }
    }
}
