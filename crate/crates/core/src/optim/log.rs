use std::io::Write;

use crate::error::Result;
use crate::stats::{format_sig, Curve};

/// Whether log rows are Reptile episodes or plain epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogUnit {
    Episode,
    Epoch,
}

impl LogUnit {
    pub fn column(self) -> &'static str {
        match self {
            LogUnit::Episode => "episode",
            LogUnit::Epoch => "epoch",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// 1-based episode or epoch number.
    pub index: usize,
    /// Mean mini-batch training loss of the last epoch in this unit.
    pub train_loss: f64,
    pub val_acc: f64,
    /// Mean pairwise cosine of the mini-batch gradients seen in this unit.
    pub grad_alignment: Option<f64>,
}

/// Learning curve of one fit plus its early-stopping outcome.
///
/// `best_episode` is 0 when no record beat the untrained model's
/// validation accuracy, otherwise the first record holding the maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub unit: LogUnit,
    pub initial_val_acc: f64,
    pub records: Vec<EpisodeRecord>,
    pub best_episode: usize,
    pub stopped_early: bool,
}

impl EpisodeLog {
    pub(crate) fn new(unit: LogUnit, initial_val_acc: f64) -> Self {
        EpisodeLog {
            unit,
            initial_val_acc,
            records: Vec::new(),
            best_episode: 0,
            stopped_early: false,
        }
    }

    pub fn best_val_acc(&self) -> f64 {
        if self.best_episode == 0 {
            self.initial_val_acc
        } else {
            self.records[self.best_episode - 1].val_acc
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn val_accuracies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.val_acc).collect()
    }

    pub fn val_curve(&self) -> Curve {
        Curve::from_values(&self.val_accuracies())
    }

    /// CSV with header `episode,train_loss,val_acc` (or `epoch,...`),
    /// floats at 6 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{},train_loss,val_acc", self.unit.column())?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{}",
                r.index,
                format_sig(r.train_loss, 6),
                format_sig(r.val_acc, 6)
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii csv")
    }
}

/// Patience bookkeeping shared by every fit loop.
#[derive(Debug, Clone)]
pub(crate) struct EarlyStopping {
    best: f64,
    since_best: usize,
    patience: usize,
}

impl EarlyStopping {
    pub fn new(initial: f64, patience: usize) -> Self {
        EarlyStopping {
            best: initial,
            since_best: 0,
            patience,
        }
    }

    /// Returns `(improved, stop)`. Only strict improvement resets patience.
    pub fn observe(&mut self, value: f64) -> (bool, bool) {
        if value > self.best {
            self.best = value;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best >= self.patience)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut log = EpisodeLog::new(LogUnit::Episode, 0.2);
        log.records.push(EpisodeRecord {
            index: 1,
            train_loss: 1.0 / 3.0,
            val_acc: 0.5,
            grad_alignment: None,
        });
        assert_eq!(log.to_csv(), "episode,train_loss,val_acc\n1,0.333333,0.5\n");
        log.unit = LogUnit::Epoch;
        assert!(log.to_csv().starts_with("epoch,train_loss,val_acc\n"));
    }

    #[test]
    fn ties_do_not_reset_patience() {
        let mut es = EarlyStopping::new(0.5, 2);
        assert_eq!(es.observe(0.5), (false, false));
        assert_eq!(es.observe(0.6), (true, false));
        assert_eq!(es.observe(0.6), (false, false));
        assert_eq!(es.observe(0.55), (false, true));
    }
}
