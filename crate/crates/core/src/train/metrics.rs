use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One row: an epoch (or round) on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub acc: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub epochs: usize,
    pub final_train_acc: Option<f64>,
    pub final_eval_acc: Option<f64>,
    /// Mean over the last five epochs.
    pub last5_train_acc: Option<f64>,
    pub last5_eval_acc: Option<f64>,
    pub diverged: Option<String>,
}

const HEADER: &str = "epoch,split,loss,acc,lr,wall_ms";

impl Metrics {
    pub fn push(&mut self, r: Record) {
        self.records.push(r);
    }

    pub fn split(&self, split: &str) -> impl Iterator<Item = &Record> {
        let split = split.to_string();
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn accs(&self, split: &str) -> Vec<f64> {
        self.split(split).map(|r| r.acc).collect()
    }

    /// Mean accuracy of the last `k` records of `split`.
    pub fn last_k_acc(&self, split: &str, k: usize) -> Option<f64> {
        let a = self.accs(split);
        if a.is_empty() || k == 0 {
            return None;
        }
        let tail = &a[a.len().saturating_sub(k)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }

    pub fn summary(&self, diverged: Option<String>) -> Summary {
        Summary {
            epochs: self.split("train").count(),
            final_train_acc: self.accs("train").last().copied(),
            final_eval_acc: self.accs("eval").last().copied(),
            last5_train_acc: self.last_k_acc("train", 5),
            last5_eval_acc: self.last_k_acc("eval", 5),
            diverged,
        }
    }

    /// CSV text; `timing` false blanks the wall-clock column.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut s = String::from(HEADER);
        s.push('\n');
        for r in &self.records {
            let wall = if timing { r.wall_ms.to_string() } else { String::new() };
            s.push_str(&format!("{},{},{:?},{:?},{:?},{}\n", r.epoch, r.split, r.loss, r.acc, r.lr, wall));
        }
        s
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    /// Write `metrics.csv`, `metrics.jsonl` and `summary.json` into `dir`.
    pub fn write_all(&self, dir: impl AsRef<Path>, diverged: Option<String>) -> Result<Summary> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), self.to_csv(true))?;
        std::fs::write(dir.join("metrics.jsonl"), self.to_jsonl()?)?;
        let summary = self.summary(diverged);
        let mut f = std::fs::File::create(dir.join("summary.json"))?;
        serde_json::to_writer_pretty(&mut f, &summary)?;
        f.write_all(b"\n")?;
        Ok(summary)
    }
}
