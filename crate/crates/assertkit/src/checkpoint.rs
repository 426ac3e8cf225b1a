//! Versioned checkpoint container.
//!
//! A text header followed by raw weights:
//!
//! ```text
//! ASSERTKIT-CKPT 1
//! [model]
//! kind = senet34
//! ...
//! [meta]
//! selected_epoch = 6
//! [manifest]
//! param stem.conv.weight 16,1,3,3
//! buffer stem.bn.running_mean 16
//! [end]
//! ```
//!
//! The bytes after the `[end]` line are the manifest tensors in order, as
//! little-endian f32.

use std::fs;
use std::path::Path;

use assertkit_core::models::{Model, ModelConfig};

use crate::error::{format_err, io_err, Result};

const MAGIC_LINE: &str = "ASSERTKIT-CKPT 1";
const END_LINE: &str = "[end]\n";

/// A trained model plus free-form `key = value` metadata (label space,
/// feature kind, segmenter, selected epoch).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn new(model: Model<f32>) -> Self {
        Self { model, meta: Vec::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut head = format!("{MAGIC_LINE}\n[model]\n");
        for (k, v) in self.model.config().to_pairs() {
            head += &format!("{k} = {v}\n");
        }
        head += "[meta]\n";
        for (k, v) in &self.meta {
            head += &format!("{k} = {v}\n");
        }
        head += "[manifest]\n";
        let store = self.model.store();
        let tensors: Vec<_> = store
            .params()
            .map(|(n, t)| ("param", n, t))
            .chain(store.buffers().map(|(n, t)| ("buffer", n, t)))
            .collect();
        for (role, name, t) in &tensors {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            head += &format!("{role} {name} {}\n", shape.join(","));
        }
        head += END_LINE;
        let mut out = head.into_bytes();
        for (_, _, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(path: &Path, bytes: &[u8]) -> Result<Self> {
        let bad = |detail: String| format_err(path, detail);
        let end = bytes
            .windows(END_LINE.len())
            .position(|w| w == END_LINE.as_bytes())
            .ok_or_else(|| bad("missing [end] marker".into()))?;
        let head = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
        let mut lines = head.lines();
        if lines.next() != Some(MAGIC_LINE) {
            return Err(bad("not a checkpoint (bad magic line)".into()));
        }
        let mut section = "";
        let mut model_pairs = Vec::new();
        let mut meta = Vec::new();
        let mut manifest = Vec::new();
        for line in lines {
            if line.starts_with('[') {
                section = match line {
                    "[model]" | "[meta]" | "[manifest]" => line,
                    _ => return Err(bad(format!("unknown section {line}"))),
                };
                continue;
            }
            match section {
                "[model]" | "[meta]" => {
                    let (k, v) = line.split_once(" = ").ok_or_else(|| bad(format!("bad line `{line}`")))?;
                    if section == "[model]" {
                        model_pairs.push((k, v));
                    } else {
                        meta.push((k.to_string(), v.to_string()));
                    }
                }
                "[manifest]" => {
                    let f: Vec<&str> = line.split(' ').collect();
                    if f.len() != 3 || !matches!(f[0], "param" | "buffer") {
                        return Err(bad(format!("bad manifest line `{line}`")));
                    }
                    let shape = f[2]
                        .split(',')
                        .map(|s| s.parse::<usize>().map_err(|_| bad(format!("bad shape `{}`", f[2]))))
                        .collect::<Result<Vec<usize>>>()?;
                    manifest.push((f[0], f[1], shape));
                }
                _ => return Err(bad(format!("line outside any section: `{line}`"))),
            }
        }
        let cfg = ModelConfig::from_pairs(model_pairs)?;
        let mut model = Model::<f32>::new(cfg)?;
        let store = model.store();
        let expected: Vec<(&str, String, Vec<usize>)> = store
            .params()
            .map(|(n, t)| ("param", n.to_string(), t.shape().to_vec()))
            .chain(store.buffers().map(|(n, t)| ("buffer", n.to_string(), t.shape().to_vec())))
            .collect();
        if expected.len() != manifest.len() {
            return Err(bad(format!("manifest lists {} tensors, model has {}", manifest.len(), expected.len())));
        }
        for ((role, name, shape), (er, en, es)) in manifest.iter().zip(&expected) {
            if role != er || name != en || shape != es {
                return Err(bad(format!("manifest entry {role} {name} {shape:?} does not match model ({er} {en} {es:?})")));
            }
        }
        let mut body = &bytes[end + END_LINE.len()..];
        let total: usize = manifest.iter().map(|(_, _, s)| s.iter().product::<usize>()).sum();
        if body.len() != total * 4 {
            return Err(bad(format!("weights: expected {} bytes, found {}", total * 4, body.len())));
        }
        for (_, name, shape) in &manifest {
            let n = shape.iter().product::<usize>();
            let data: Vec<f32> = body[..n * 4].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            model.store_mut().set_by_name(name, &data)?;
            body = &body[n * 4..];
        }
        Ok(Self { model, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::decode(path, &bytes)
    }
}
