use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const EMA_SMOOTHING: f64 = 0.95;
const EMA_INCREMENT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: f64,
    pub ema_loss: f64,
}

/// Raw and exponentially smoothed training loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossLog {
    pub records: Vec<LossRecord>,
}

impl LossLog {
    pub fn push(&mut self, step: u64, epoch: u64, lr: f64, loss: f64) {
        let ema_loss = match self.records.last() {
            Some(prev) => EMA_SMOOTHING * prev.ema_loss + EMA_INCREMENT * loss,
            None => loss,
        };
        self.records.push(LossRecord {
            step,
            epoch,
            lr,
            loss,
            ema_loss,
        });
    }

    pub fn last(&self) -> Option<&LossRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,epoch,lr,loss,ema_loss\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{:e},{},{}", r.step, r.epoch, r.lr, r.loss, r.ema_loss);
        }
        s
    }
}
