//! Fixed-size pool of worker threads for independent sample jobs.
//!
//! Workers only compute; the calling thread receives every result and is the
//! single owner of caches and accumulators.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use crossbeam_channel::unbounded;

/// How a batch of jobs ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolOutcome {
    pub completed: usize,
    /// Jobs not started because the deadline had passed.
    pub skipped: usize,
}

/// Runs `work` on every job with `workers` threads and hands each result to
/// `on_result` on the calling thread, in completion order, tagged with the
/// job position.
///
/// The deadline is checked before a job starts, never during one. An error
/// from `on_result` stops the pool once the running jobs have finished.
pub fn run_jobs<J, R, E, W, F>(jobs: &[J], workers: usize, deadline: Option<Instant>, work: W, mut on_result: F) -> Result<PoolOutcome, E>
where
    J: Sync,
    R: Send,
    W: Fn(&J) -> R + Sync,
    F: FnMut(usize, R) -> Result<(), E>,
{
    let (job_tx, job_rx) = unbounded::<usize>();
    for i in 0..jobs.len() {
        job_tx.send(i).expect("receiver is alive");
    }
    drop(job_tx);
    let (result_tx, result_rx) = unbounded::<(usize, R)>();
    let stop = AtomicBool::new(false);
    let expired = || deadline.is_some_and(|d| Instant::now() >= d);

    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(jobs.len().max(1)) {
            let job_rx = job_rx.clone();
            let result_tx = result_tx.clone();
            let (work, stop) = (&work, &stop);
            scope.spawn(move || {
                while !stop.load(Ordering::Relaxed) && !expired() {
                    let Ok(i) = job_rx.recv() else { break };
                    if result_tx.send((i, work(&jobs[i]))).is_err() {
                        break;
                    }
                }
            });
        }
        drop(result_tx);
        let mut completed = 0;
        let mut failure = None;
        for (i, r) in result_rx {
            completed += 1;
            if failure.is_none() {
                if let Err(e) = on_result(i, r) {
                    stop.store(true, Ordering::Relaxed);
                    failure = Some(e);
                }
            }
        }
        match failure {
            Some(e) => Err(e),
            None => Ok(PoolOutcome { completed, skipped: jobs.len() - completed }),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;
    use std::time::Duration;

    #[test]
    fn every_job_runs_once_for_any_worker_count() {
        let jobs: Vec<u64> = (0..57).collect();
        for workers in [1, 3, 8, 100] {
            let mut seen = vec![0; jobs.len()];
            let out = run_jobs(&jobs, workers, None, |j| j * j, |i, r| {
                assert_eq!(r, jobs[i] * jobs[i]);
                seen[i] += 1;
                Ok::<_, Infallible>(())
            })
            .unwrap();
            assert_eq!(out, PoolOutcome { completed: 57, skipped: 0 });
            assert!(seen.iter().all(|&s| s == 1));
        }
    }

    #[test]
    fn expired_deadline_starts_nothing() {
        let jobs = [1, 2, 3];
        let past = Instant::now() - Duration::from_secs(1);
        let out = run_jobs(&jobs, 2, Some(past), |j| *j, |_, _| Ok::<_, Infallible>(())).unwrap();
        assert_eq!(out, PoolOutcome { completed: 0, skipped: 3 });
    }

    #[test]
    fn consumer_error_stops_the_pool() {
        let jobs: Vec<u32> = (0..1000).collect();
        let mut calls = 0;
        let err = run_jobs(&jobs, 1, None, |j| *j, |_, r| {
            calls += 1;
            if r == 5 {
                Err("stop")
            } else {
                Ok(())
            }
        });
        assert_eq!(err, Err("stop"));
        assert!(calls < 1000);
    }

    #[test]
    fn empty_batch_is_fine() {
        let jobs: [u8; 0] = [];
        let out = run_jobs(&jobs, 4, None, |j| *j, |_, _| Ok::<_, Infallible>(())).unwrap();
        assert_eq!(out, PoolOutcome { completed: 0, skipped: 0 });
    }
}
