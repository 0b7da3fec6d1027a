//! Desk-scale SGD training on the synthetic texture task.

pub mod dataset;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::batchnorm::{BnMode, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
use crate::nn::block::BnSettings;
use crate::nn::loss::{argmax, softmax_cross_entropy};
use crate::nn::network::Network;
use crate::nn::tape::Tape;
use crate::tensor::{Rng, Shape4, Tensor};
use crate::zoo::config::ModelConfig;

pub use dataset::SyntheticDataset;

/// Steps between run-log entries.
pub const LOG_EVERY: usize = 10;

fn default_samples_per_class() -> usize {
    100
}

fn default_bn_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_bn_momentum() -> f64 {
    DEFAULT_MOMENTUM
}

/// The `train` section of a training config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(default = "default_samples_per_class")]
    pub samples_per_class: usize,
    #[serde(default = "default_bn_epsilon")]
    pub bn_epsilon: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub train: TrainSettings,
}

impl TrainConfig {
    /// Parses a model config object carrying an extra `train` section.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg = |e: serde_json::Error| Error::Config(e.to_string());
        let mut value: serde_json::Value = serde_json::from_str(text).map_err(cfg)?;
        let train = value
            .as_object_mut()
            .and_then(|o| o.remove("train"))
            .ok_or_else(|| Error::Config("missing `train` section".into()))?;
        let config = TrainConfig {
            model: serde_json::from_value(value).map_err(cfg)?,
            train: serde_json::from_value(train).map_err(cfg)?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(&self.model).expect("model configs always serialize");
        value["train"] = serde_json::to_value(&self.train).expect("train settings always serialize");
        serde_json::to_string_pretty(&value).expect("json")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        let finite = [t.learning_rate, t.momentum, t.bn_epsilon, t.bn_momentum].iter().all(|v| v.is_finite());
        if !finite || t.learning_rate < 0.0 || !(0.0..1.0).contains(&t.momentum) {
            return Err(Error::Config("learning rate must be >= 0 and momentum in [0, 1)".into()));
        }
        if t.batch_size == 0 || t.steps == 0 || t.samples_per_class == 0 || t.bn_epsilon <= 0.0 {
            return Err(Error::Config("batch size, steps, samples per class and bn epsilon must be positive".into()));
        }
        self.model.check(dataset::IMAGE_SIZE)?;
        if self.model.stem.in_channels != dataset::IMAGE_CHANNELS {
            return Err(Error::Config(format!("stem must take {} channels", dataset::IMAGE_CHANNELS)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Every tenth step's batch loss and accuracy, then a final entry at
/// `step == steps` holding loss and accuracy over the whole training set
/// with running batch-norm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub entries: Vec<LogEntry>,
    /// Batch loss at every step.
    pub step_losses: Vec<f64>,
}

impl RunLog {
    pub fn final_entry(&self) -> LogEntry {
        *self.entries.last().expect("a run log is never empty")
    }

    /// Mean batch loss over the `window` steps ending at `step` (exclusive).
    pub fn smoothed_loss(&self, step: usize, window: usize) -> Option<f64> {
        if window == 0 || step < window || step > self.step_losses.len() {
            return None;
        }
        Some(self.step_losses[step - window..step].iter().sum::<f64>() / window as f64)
    }

    /// `step,loss,accuracy` with a header row and LF line endings.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Config(format!("writing csv: {e}"));
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["step", "loss", "accuracy"]).map_err(io)?;
        for e in &self.entries {
            w.write_record([e.step.to_string(), format!("{:.12}", e.loss), format!("{:.6}", e.accuracy)])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Config(format!("writing csv: {e}")))
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("json")
    }
}

fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let hits = argmax(logits).iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Heavy-ball SGD: `v = momentum * v + g`, `p -= lr * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, shapes: &[Shape4]) -> Self {
        Sgd { learning_rate, momentum, velocity: shapes.iter().map(|&s| Tensor::zeros(s)).collect() }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(Error::Shape("optimizer, parameter and gradient counts differ".into()));
        }
        let (lr, mu) = (self.learning_rate, self.momentum);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            *v = v.zip_map(g, |v, g| mu * v + g)?;
            *p = p.zip_map(v, |p, v| p - lr * v)?;
        }
        Ok(())
    }
}

/// Full-dataset loss and accuracy in inference mode, evaluated in chunks.
pub fn evaluate(net: &mut Network, data: &SyntheticDataset, chunk: usize) -> Result<(f64, f64)> {
    let (mut loss, mut hits) = (0.0, 0.0);
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in all.chunks(chunk.max(1)) {
        let (x, y) = data.batch(idx)?;
        let logits = net.predict(&x)?;
        let (l, _) = softmax_cross_entropy(&logits, &y)?;
        loss += l * idx.len() as f64;
        hits += accuracy(&logits, &y) * idx.len() as f64;
    }
    let n = data.len() as f64;
    Ok((loss / n, hits / n))
}

/// Trains from scratch; the seed fixes initialization, data and batch order.
pub fn train(config: &TrainConfig) -> Result<RunLog> {
    config.validate()?;
    let t = &config.train;
    let classes = config.model.head.classes;
    let data = SyntheticDataset::generate(classes, t.samples_per_class, t.seed)?;
    let bn = BnSettings { epsilon: t.bn_epsilon, momentum: t.bn_momentum };
    let mut net = Network::new(&config.model, t.seed, bn)?;
    let shapes = net.params().shapes();
    let mut sgd = Sgd::new(t.learning_rate, t.momentum, &shapes);
    let mut order_rng = Rng::new(t.seed ^ 0x5eed_0f_ba7c_4e5);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();

    let mut entries = Vec::new();
    let mut step_losses = Vec::with_capacity(t.steps);
    for step in 0..t.steps {
        let mut idx = Vec::with_capacity(t.batch_size);
        while idx.len() < t.batch_size {
            if cursor == order.len() {
                order_rng.shuffle(&mut order);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let (x, y) = data.batch(&idx)?;
        let mut tape = Tape::new();
        let xv = tape.input(x);
        let out = net.forward(&mut tape, xv, BnMode::Train)?;
        let (loss, dlogits) = softmax_cross_entropy(tape.value(out), &y)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        if step % LOG_EVERY == 0 {
            entries.push(LogEntry { step, loss, accuracy: accuracy(tape.value(out), &y) });
        }
        step_losses.push(loss);
        let grads = tape.backward(out, dlogits)?.param_grads(&shapes)?;
        sgd.step(net.params_mut().values_mut(), &grads)?;
    }
    let (loss, acc) = evaluate(&mut net, &data, 64)?;
    if !loss.is_finite() {
        return Err(Error::Diverged { step: t.steps, loss });
    }
    entries.push(LogEntry { step: t.steps, loss, accuracy: acc });
    Ok(RunLog { entries, step_losses })
}
