use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{detection_loss, LossTerms, LossWeights};
use super::targets::{assign_targets, TargetGrid};
use super::{slot_channel, Detector, Field, SLOT_LEN};
use crate::anchors::Anchor;
use crate::error::{Error, Result};
use crate::geometry::StringSample;
use crate::inference::{
    assemble_string, detections_from_prediction, prepare_image, target_input_dims, Thresholds,
};
use crate::net::{sgd_step, Grads, NetSpec, Network, Params, Real, SgdConfig, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub sgd: SgdConfig,
    pub epochs_max: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Batches between input-scale draws.
    pub multi_scale_every: usize,
    /// `(height, width)` input sizes; the first one is used until the first draw.
    pub scale_choices: Vec<(usize, usize)>,
    pub seed: u64,
    pub loss: LossWeights,
    /// Backbone convolution widths; see [`NetSpec::from_widths`].
    pub widths: Vec<usize>,
    /// Global gradient-norm cap applied to each batch gradient; 0 disables.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let mut scale_choices = Vec::new();
        for h in [96, 128, 160] {
            for w in [192, 256, 320] {
                scale_choices.push((h, w));
            }
        }
        // the 128x256 shape first
        scale_choices.swap(0, 4);
        Self {
            sgd: SgdConfig::default(),
            epochs_max: 60,
            patience: 5,
            multi_scale_every: 10,
            scale_choices,
            seed: 0,
            loss: LossWeights::default(),
            widths: vec![16, 32, 64, 64, 128, 128],
            clip_norm: 10.0,
        }
    }
}

impl TrainConfig {
    /// Settings sized for short strings on a single CPU core: two small
    /// input shapes, batch 16, a linearly decaying rate and a heavier class
    /// term. 10,000 two- and three-digit strings train in about 20 minutes.
    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.sgd.learning_rate = 0.005;
        cfg.sgd.final_rate = 0.0005;
        cfg.sgd.batch_size = 16;
        cfg.epochs_max = 20;
        cfg.patience = 6;
        cfg.scale_choices = vec![(96, 128), (128, 128)];
        cfg.loss.class = 5.0;
        cfg.widths = vec![8, 16, 32, 64, 128, 128];
        cfg
    }
}

fn parse_scales(v: &str) -> Option<Vec<(usize, usize)>> {
    v.split(',')
        .map(|s| {
            let (h, w) = s.trim().split_once('x')?;
            Some((h.parse().ok()?, w.parse().ok()?))
        })
        .collect()
}

fn parse_list(v: &str) -> Option<Vec<usize>> {
    v.split(',').map(|s| s.trim().parse().ok()).collect()
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        self.loss.validate()?;
        if self.patience == 0 || self.epochs_max == 0 || self.multi_scale_every == 0 {
            return Err(Error::Config(
                "patience, epochs_max and multi_scale_every must be at least 1".into(),
            ));
        }
        if self.scale_choices.is_empty() {
            return Err(Error::Config("no input scales".into()));
        }
        let stride = NetSpec::from_widths(&self.widths, SLOT_LEN).stride();
        if let Some(s) = self
            .scale_choices
            .iter()
            .find(|(h, w)| *h == 0 || *w == 0 || h % stride != 0 || w % stride != 0)
        {
            return Err(Error::Config(format!("scale {}x{} is not a multiple of {stride}", s.0, s.1)));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config(format!("clip_norm {}", self.clip_norm)));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(format!("network widths {:?}", self.widths)));
        }
        Ok(())
    }

    /// Sets one field from its `key=value` name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("bad value {value:?} for {key}"));
        let f = || value.parse::<f64>().map_err(|_| bad());
        let u = || value.parse::<usize>().map_err(|_| bad());
        match key {
            "learning_rate" => self.sgd.learning_rate = f()?,
            "final_rate" => self.sgd.final_rate = f()?,
            "momentum" => self.sgd.momentum = f()?,
            "weight_decay" => self.sgd.weight_decay = f()?,
            "batch_size" => self.sgd.batch_size = u()?,
            "epochs_max" => self.epochs_max = u()?,
            "patience" => self.patience = u()?,
            "multi_scale_every" => self.multi_scale_every = u()?,
            "scales" => self.scale_choices = parse_scales(value).ok_or_else(bad)?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "coord_weight" => self.loss.coord = f()?,
            "obj_weight" => self.loss.obj = f()?,
            "noobj_weight" => self.loss.noobj = f()?,
            "class_weight" => self.loss.class = f()?,
            "widths" => self.widths = parse_list(value).ok_or_else(bad)?,
            "clip_norm" => self.clip_norm = f()?,
            _ => return Err(Error::Config(format!("unknown training key {key:?}"))),
        }
        Ok(())
    }

    /// `key=value` lines understood by [`TrainConfig::from_kv`].
    pub fn to_kv(&self) -> String {
        let scales: Vec<String> = self.scale_choices.iter().map(|(h, w)| format!("{h}x{w}")).collect();
        let widths: Vec<String> = self.widths.iter().map(usize::to_string).collect();
        let mut s = String::new();
        for (k, v) in [
            ("learning_rate", self.sgd.learning_rate.to_string()),
            ("final_rate", self.sgd.final_rate.to_string()),
            ("momentum", self.sgd.momentum.to_string()),
            ("weight_decay", self.sgd.weight_decay.to_string()),
            ("batch_size", self.sgd.batch_size.to_string()),
            ("epochs_max", self.epochs_max.to_string()),
            ("patience", self.patience.to_string()),
            ("multi_scale_every", self.multi_scale_every.to_string()),
            ("scales", scales.join(",")),
            ("seed", self.seed.to_string()),
            ("coord_weight", self.loss.coord.to_string()),
            ("obj_weight", self.loss.obj.to_string()),
            ("noobj_weight", self.loss.noobj.to_string()),
            ("class_weight", self.loss.class.to_string()),
            ("widths", widths.join(",")),
            ("clip_norm", self.clip_norm.to_string()),
        ] {
            writeln!(s, "{k}={v}").expect("writing to a String");
        }
        s
    }

    /// Defaults overridden by the `key=value` lines of `text`; `#` starts a
    /// comment line.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: "config".into(),
                line: i + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn net_spec(&self, anchors: usize) -> NetSpec {
        NetSpec::from_widths(&self.widths, anchors * SLOT_LEN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean per-sample training loss over the epoch.
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub collisions: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Input `(height, width)` used by each batch, in order.
    pub scale_schedule: Vec<(usize, usize)>,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Outcome of one early-stopping observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

/// Tracks the best validation score. Accuracy decides; equal accuracy counts
/// as an improvement only with a strictly lower validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(f64, f64)>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn observe(&mut self, epoch: usize, accuracy: f64, loss: f64) -> Verdict {
        let improved = match self.best {
            None => true,
            Some((acc, l)) => accuracy > acc || (accuracy == acc && loss < l),
        };
        if improved {
            self.best = Some((accuracy, loss));
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Verdict {
            improved,
            stop: self.stale >= self.patience,
        }
    }
}

/// Letterboxes `sample` to `(height, width)` and assigns its boxes to the grid.
pub fn sample_targets<T: Real>(
    sample: &StringSample,
    anchors: &[Anchor],
    height: usize,
    width: usize,
    stride: usize,
) -> Result<(Tensor<T>, TargetGrid)> {
    let (input, lb) = prepare_image::<T>(sample.image(), height, width)?;
    let boxes = sample
        .annotations()
        .iter()
        .map(|a| Ok((lb.to_network(&a.bbox)?, a.class)))
        .collect::<Result<Vec<_>>>()?;
    let grid = assign_targets(&boxes, anchors, height / stride, width / stride, stride)?;
    Ok((input, grid))
}

fn sample_gradient(
    net: &Network<f32>,
    sample: &StringSample,
    anchors: &[Anchor],
    scale: (usize, usize),
    weights: &LossWeights,
) -> Result<(LossTerms, Grads<f32>, usize)> {
    let (input, grid) = sample_targets::<f32>(sample, anchors, scale.0, scale.1, net.spec().stride())?;
    let (pred, cache) = net.forward(&input)?;
    let (terms, grad_out) = detection_loss(&pred, &grid, weights)?;
    let (grads, _) = net.backward(&cache, &grad_out)?;
    Ok((terms, grads, grid.collisions))
}

/// String accuracy and mean detection loss over `samples` at the test-time
/// input size.
pub fn validate_split(model: &Detector, samples: &[StringSample], thresholds: &Thresholds) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Argument("empty validation set".into()));
    }
    let stride = model.network.spec().stride();
    let per: Vec<(bool, f64)> = samples
        .par_iter()
        .map(|s| {
            let (h, w) = target_input_dims(s.image());
            let (input, grid) = sample_targets::<f32>(s, &model.anchors, h, w, stride)?;
            let lb = crate::inference::Letterbox::fit(s.image().width(), s.image().height(), h, w)?;
            let pred = model.network.predict(&input)?;
            let (terms, _) = detection_loss(&pred, &grid, &model.config.loss)?;
            let dets = detections_from_prediction(&pred, &model.anchors, stride, &lb, thresholds)?;
            Ok((assemble_string(&dets).text == s.label(), terms.total))
        })
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    let correct = per.iter().filter(|p| p.0).count() as f64;
    Ok((correct / n, per.iter().map(|p| p.1).sum::<f64>() / n))
}

/// Head weights start at a tenth of their He scale and objectness biases
/// at this value, so the untrained detector predicts small offsets and few
/// objects.
pub const OBJ_BIAS_INIT: f32 = -4.0;
const HEAD_INIT_SCALE: f32 = 0.1;

/// Freshly initialized network for `anchors` under `cfg`.
pub fn initial_network(cfg: &TrainConfig, anchors: usize) -> Result<Network<f32>> {
    let mut net = Network::<f32>::with_seed(cfg.net_spec(anchors), cfg.seed)?;
    let head = net.params_mut().convs.last_mut().expect("spec has a head");
    head.weight.scale(HEAD_INIT_SCALE);
    for a in 0..anchors {
        head.bias.data_mut()[slot_channel(a, Field::Obj as usize)] = OBJ_BIAS_INIT;
    }
    Ok(net)
}

fn global_norm(g: &Grads<f32>) -> f64 {
    g.tensors()
        .flat_map(|t| t.data())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt()
}

fn diverged(epoch: usize, batch: usize, message: String) -> Error {
    Error::Diverged {
        epoch,
        batch,
        message,
    }
}

/// Mini-batch SGD with multi-scale inputs and early stopping on validation
/// string accuracy. Returns the weights of the best validation epoch.
pub fn train(
    train_set: &[StringSample],
    val_set: &[StringSample],
    anchors: &[Anchor],
    cfg: &TrainConfig,
) -> Result<(Detector, History)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Argument("training and validation sets must be non-empty".into()));
    }
    if anchors.is_empty() {
        return Err(Error::Argument("no anchors".into()));
    }
    let spec = cfg.net_spec(anchors.len());
    let net = initial_network(cfg, anchors.len())?;
    let mut model = Detector::new(net, anchors.to_vec(), cfg.clone())?;
    let mut velocity = Params::<f32>::zeros(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let thresholds = Thresholds::default();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = History::default();
    let mut best = model.network.clone();
    let mut scale = cfg.scale_choices[0];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut batch_index = 0usize;

    for epoch in 1..=cfg.epochs_max {
        let lr = cfg.sgd.rate_at(epoch - 1, cfg.epochs_max);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut collisions = 0;
        for (b, chunk) in order.chunks(cfg.sgd.batch_size).enumerate() {
            if batch_index > 0 && batch_index % cfg.multi_scale_every == 0 && cfg.scale_choices.len() > 1 {
                // draw a different scale
                let mut next = scale;
                while next == scale {
                    next = cfg.scale_choices[rng.random_range(0..cfg.scale_choices.len())];
                }
                scale = next;
            }
            history.scale_schedule.push(scale);
            let results: Vec<(LossTerms, Grads<f32>, usize)> = chunk
                .par_iter()
                .map(|&i| sample_gradient(&model.network, &train_set[i], anchors, scale, &cfg.loss))
                .collect::<Result<_>>()?;
            let mut grads = Params::<f32>::zeros(&spec);
            let mut batch_loss = 0.0;
            for (terms, g, c) in &results {
                grads.add_assign(g);
                batch_loss += terms.total;
                collisions += c;
            }
            if !batch_loss.is_finite() {
                return Err(diverged(epoch, b, format!("loss {batch_loss}")));
            }
            grads.scale(1.0 / chunk.len() as f32);
            let norm = global_norm(&grads);
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                grads.scale((cfg.clip_norm / norm) as f32);
            }
            sgd_step(model.network.params_mut(), &grads, &mut velocity, lr, &cfg.sgd)
                .map_err(|e| diverged(epoch, b, e.to_string()))?;
            if !model.network.params().is_finite() {
                return Err(diverged(epoch, b, "non-finite parameters".into()));
            }
            epoch_loss += batch_loss;
            batch_index += 1;
        }

        let (val_accuracy, val_loss) = validate_split(&model, val_set, &thresholds)?;
        history.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: epoch_loss / train_set.len() as f64,
            val_accuracy,
            val_loss,
            collisions,
        });
        let verdict = stopper.observe(epoch, val_accuracy, val_loss);
        if verdict.improved {
            best = model.network.clone();
        }
        if verdict.stop {
            history.stopped_early = true;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch();
    model.network = best;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_after_peak() {
        let curve = [0.1, 0.3, 0.5, 0.4, 0.45, 0.5, 0.2];
        let mut es = EarlyStopping::new(3);
        let mut stopped = None;
        for (i, &acc) in curve.iter().enumerate() {
            if es.observe(i + 1, acc, 1.0).stop {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(6));
        assert_eq!(es.best_epoch(), 3);
    }

    #[test]
    fn loss_breaks_accuracy_ties() {
        let mut es = EarlyStopping::new(2);
        assert!(es.observe(1, 0.0, 5.0).improved);
        assert!(es.observe(2, 0.0, 4.0).improved);
        assert!(!es.observe(3, 0.0, 4.5).improved);
        assert_eq!(es.best_epoch(), 2);
    }

    #[test]
    fn config_kv_roundtrip() {
        let mut cfg = TrainConfig::default();
        cfg.set("scales", "64x128, 96x160").unwrap();
        cfg.set("learning_rate", "0.01").unwrap();
        cfg.set("widths", "8,16,32").unwrap();
        assert_eq!(TrainConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert!(cfg.set("nope", "1").is_err());
        assert!(cfg.set("batch_size", "x").is_err());
        assert_eq!(TrainConfig::default().scale_choices[0], (128, 256));
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        cfg.scale_choices = vec![(100, 256)];
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
