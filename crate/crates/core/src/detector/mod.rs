//! Grid detection head: target assignment, loss, training and model files.
//!
//! A grid prediction has `anchors * 15` channels. Channel `a * 15 + f` holds
//! field `f` of anchor `a`: `tx, ty, tw, th, tobj`, then ten class scores.

mod loss;
mod targets;
mod train;

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub use loss::{detection_loss, sse, LossTerms, LossWeights};
pub use targets::{assign_targets, best_anchor, SlotTarget, TargetGrid};
pub use train::{
    initial_network, sample_targets, train, OBJ_BIAS_INIT, validate_split, EarlyStopping, EpochRecord, History, TrainConfig,
    Verdict,
};

use crate::anchors::{format_anchors, parse_anchors, Anchor};
use crate::error::{Error, Result};
use crate::geometry::DigitClass;
use crate::net::{read_checkpoint, write_checkpoint, Network};

pub const SLOT_LEN: usize = 5 + DigitClass::COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Field {
    X = 0,
    Y = 1,
    W = 2,
    H = 3,
    Obj = 4,
    /// First of the ten class scores.
    Class = 5,
}

pub fn slot_channel(anchor: usize, field: usize) -> usize {
    anchor * SLOT_LEN + field
}

/// A trained network together with the anchors its head was trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub network: Network<f32>,
    pub anchors: Vec<Anchor>,
    pub config: TrainConfig,
}

/// Sidecar path holding anchors and training configuration.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

impl Detector {
    pub fn new(network: Network<f32>, anchors: Vec<Anchor>, config: TrainConfig) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::Config("detector needs at least one anchor".into()));
        }
        if network.spec().out_channels() != anchors.len() * SLOT_LEN {
            return Err(Error::Consistency(format!(
                "network emits {} channels, {} anchors need {}",
                network.spec().out_channels(),
                anchors.len(),
                anchors.len() * SLOT_LEN
            )));
        }
        Ok(Self {
            network,
            anchors,
            config,
        })
    }

    /// Writes the checkpoint to `path` and the sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        write_checkpoint(&self.network, &mut w)?;
        w.flush()?;
        let mut meta = String::from("[anchors]\n");
        meta.push_str(&format_anchors(&self.anchors));
        meta.push_str("[config]\n");
        meta.push_str(&self.config.to_kv());
        fs::write(sidecar_path(path), meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let meta_path = sidecar_path(path);
        if !meta_path.exists() {
            return Err(Error::MissingFile(meta_path));
        }
        let network = read_checkpoint(BufReader::new(fs::File::open(path)?))?;
        let meta = fs::read_to_string(&meta_path)?;
        let (anchor_text, config_text) = meta
            .strip_prefix("[anchors]\n")
            .and_then(|m| m.split_once("[config]\n"))
            .ok_or_else(|| Error::Format(format!("{} lacks [anchors]/[config] sections", meta_path.display())))?;
        let anchors = parse_anchors(anchor_text)?;
        let config = TrainConfig::from_kv(config_text)?;
        Self::new(network, anchors, config)
    }
}
