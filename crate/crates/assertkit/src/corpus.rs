//! Protocol files and the on-disk synthetic corpus.

use std::fs;
use std::path::{Path, PathBuf};

use assertkit_core::audio::{format_protocol, parse_protocol, Protocol, TrialEntry};
use assertkit_core::synth::{SynthConfig, SynthCorpus};
use rayon::prelude::*;

use crate::error::{io_err, Result};
use crate::pool::worker_pool;
use crate::wav::write_wav;

pub const PROTOCOL_FILE: &str = "protocol.txt";
pub const TRAIN_PROTOCOL_FILE: &str = "train.protocol.txt";
pub const DEV_PROTOCOL_FILE: &str = "dev.protocol.txt";
pub const WAV_DIR: &str = "wav";

pub fn read_protocol(path: &Path) -> Result<Protocol> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(parse_protocol(&text)?)
}

pub fn write_protocol(path: &Path, entries: &[TrialEntry]) -> Result<()> {
    fs::write(path, format_protocol(entries)).map_err(io_err(path))
}

pub fn wav_path(wav_dir: &Path, utt_id: &str) -> PathBuf {
    wav_dir.join(format!("{utt_id}.wav"))
}

/// Every `dev_every`-th entry (1-based position `dev_every`, `2 dev_every`,
/// ...) goes to dev, the rest to train. Classes are laid out in contiguous
/// runs, so each class lands in both halves.
pub fn split_protocol(entries: &[TrialEntry], dev_every: usize) -> (Protocol, Protocol) {
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        if dev_every > 0 && (i + 1) % dev_every == 0 {
            dev.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    (train, dev)
}

/// Renders the corpus into `out_dir/wav/<utt_id>.wav` and writes
/// `out_dir/protocol.txt`. Output is byte-identical for equal configs.
pub fn synth_corpus(cfg: SynthConfig, out_dir: &Path) -> Result<Protocol> {
    let corpus = SynthCorpus::new(cfg)?;
    let wav_dir = out_dir.join(WAV_DIR);
    fs::create_dir_all(&wav_dir).map_err(io_err(&wav_dir))?;
    worker_pool().install(|| {
        (0..corpus.len()).into_par_iter().try_for_each(|i| {
            let clip = corpus.render(i)?;
            write_wav(&wav_path(&wav_dir, &corpus.protocol()[i].utt_id), &clip)
        })
    })?;
    write_protocol(&out_dir.join(PROTOCOL_FILE), corpus.protocol())?;
    Ok(corpus.protocol().clone())
}
