use std::collections::VecDeque;

use super::ScanResult;
use crate::error::{Error, Result};

/// The last `n` scans, oldest first.
///
/// Until `n` real scans exist the missing rows duplicate the oldest real scan,
/// so the history always has exactly `n` rows once the first scan is pushed.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleHistory {
    capacity: usize,
    frames: VecDeque<ScanResult>,
}

impl ObstacleHistory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "history needs at least one row");
        Self {
            capacity,
            frames: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn newest(&self) -> Option<&ScanResult> {
        self.frames.back()
    }

    /// Rows oldest to newest.
    pub fn frames(&self) -> impl ExactSizeIterator<Item = &ScanResult> + '_ {
        self.frames.iter()
    }

    pub fn get(&self, index: usize) -> Option<&ScanResult> {
        self.frames.get(index)
    }

    pub fn push(&mut self, scan: ScanResult) -> Result<()> {
        match self.frames.back() {
            None => {
                for _ in 1..self.capacity {
                    self.frames.push_back(scan.clone());
                }
                self.frames.push_back(scan);
            }
            Some(newest) if scan.timestamp <= newest.timestamp => {
                return Err(Error::StaleScan {
                    newest: newest.timestamp,
                    got: scan.timestamp,
                });
            }
            Some(_) => {
                self.frames.pop_front();
                self.frames.push_back(scan);
            }
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }
}
