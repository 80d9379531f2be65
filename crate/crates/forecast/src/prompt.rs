use std::collections::HashMap;

use dsse_data::{Calendar, TimeSeriesDataset};
use dsse_grid::MeasurementKind;
use serde::{Deserialize, Serialize};

use crate::error::{ForecastError, Result};

pub const PAD: &str = "<pad>";

const WORDS: &[&str] = &[
    PAD, "feeder", "season", "day", "hour", "channels", "p_inj", "q_inj", "p_flow", "q_flow", "ch", "min", "max",
    "mean", "winter", "spring", "summer", "autumn", "monday", "tuesday", "wednesday", "thursday", "friday",
    "saturday", "sunday", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", ".", "-",
];

/// Slot-filled text describing the feeder, the calendar position of the
/// forecast step and the training-split channel statistics.
///
/// Rendered form: `feeder <name> season <s> day <d> hour <h h> channels <m>
/// p_inj <n> q_inj <n> p_flow <n> q_flow <n> ch <i> min <x> max <x> mean <x> ...`,
/// with numbers spelled one character per token, then padded or truncated to
/// `length` tokens. Time-varying slots come first so truncation keeps them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub feeder: String,
    /// Feeder names the vocabulary admits.
    pub known_feeders: Vec<String>,
    pub kind_counts: [usize; 4],
    /// Per-channel (min, max, mean) over the training split, observed cells only.
    pub channel_stats: Vec<(f64, f64, f64)>,
    pub length: usize,
}

impl PromptTemplate {
    pub fn from_training(feeder: &str, train: &TimeSeriesDataset, length: usize) -> Self {
        let mut kind_counts = [0; 4];
        for d in &train.descriptors {
            let k = match d.kind {
                MeasurementKind::PInj => 0,
                MeasurementKind::QInj => 1,
                MeasurementKind::PFlow => 2,
                MeasurementKind::QFlow => 3,
            };
            kind_counts[k] += 1;
        }
        let channel_stats = (0..train.channel_count())
            .map(|c| {
                let obs: Vec<f64> =
                    train.frames.iter().filter(|f| f.mask[c]).map(|f| f.values[c]).collect();
                if obs.is_empty() {
                    return (0.0, 0.0, 0.0);
                }
                let min = obs.iter().copied().fold(f64::INFINITY, f64::min);
                let max = obs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (min, max, obs.iter().sum::<f64>() / obs.len() as f64)
            })
            .collect();
        Self {
            feeder: feeder.to_string(),
            known_feeders: vec![feeder.to_string()],
            kind_counts,
            channel_stats,
            length,
        }
    }

    pub fn vocabulary(&self) -> Vocabulary {
        let mut words: Vec<String> = WORDS.iter().map(|w| w.to_string()).collect();
        for f in &self.known_feeders {
            if !words.contains(f) {
                words.push(f.clone());
            }
        }
        Vocabulary::new(words)
    }

    pub fn render(&self, cal: &Calendar) -> Vec<String> {
        let mut t: Vec<String> = Vec::with_capacity(self.length.max(16));
        let word = |t: &mut Vec<String>, w: &str| t.push(w.to_string());
        word(&mut t, "feeder");
        word(&mut t, &self.feeder);
        word(&mut t, "season");
        word(&mut t, cal.season().as_str());
        word(&mut t, "day");
        word(&mut t, cal.weekday_name());
        word(&mut t, "hour");
        spell(&mut t, &format!("{:02}", cal.hour));
        word(&mut t, "channels");
        spell(&mut t, &self.channel_stats.len().to_string());
        for (name, n) in ["p_inj", "q_inj", "p_flow", "q_flow"].iter().zip(self.kind_counts) {
            word(&mut t, name);
            spell(&mut t, &n.to_string());
        }
        for (i, (lo, hi, mean)) in self.channel_stats.iter().enumerate() {
            if t.len() >= self.length {
                break;
            }
            word(&mut t, "ch");
            spell(&mut t, &i.to_string());
            for (name, v) in [("min", lo), ("max", hi), ("mean", mean)] {
                word(&mut t, name);
                spell(&mut t, &format!("{v:.3}"));
            }
        }
        t.truncate(self.length);
        t.resize(self.length, PAD.to_string());
        t
    }

    pub fn encode(&self, cal: &Calendar, vocab: &Vocabulary) -> Result<Vec<usize>> {
        self.render(cal).iter().map(|w| vocab.id(w)).collect()
    }
}

fn spell(out: &mut Vec<String>, s: &str) {
    out.extend(s.chars().map(|c| c.to_string()));
}

/// Closed word-level vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Result<usize> {
        self.index.get(word).copied().ok_or_else(|| ForecastError::OutOfVocabulary(word.to_string()))
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }
}
