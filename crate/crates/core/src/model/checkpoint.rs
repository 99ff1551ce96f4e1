//! Checkpoint directories.
//!
//! `manifest.txt` is line oriented:
//!
//! ```text
//! # blockprune checkpoint
//! meta <key> <value>
//! tensor <name> <rows> <cols> <role> <prunable 0|1> <data file> <bias file | ->
//! ```
//!
//! Each data or bias file is a raw blob of little-endian `f64` in row-major
//! order. Values round-trip bit-exactly.

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelParams, Role, WeightTensor};
use crate::binio::{decode_f64s, write_f64s};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<WeightTensor>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams, seed: u64) -> Self {
        let c = params.config;
        let meta = [
            ("seed", seed),
            ("vocab", c.vocab as u64),
            ("dim", c.dim as u64),
            ("ffn_hidden", c.ffn_hidden as u64),
            ("classes", c.classes as u64),
            ("seq_len", c.seq_len as u64),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Checkpoint {
            meta,
            tensors: params.tensors.clone(),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks numeric meta `{key}`")))
    }

    /// Rebuilds model parameters from the recorded architecture.
    pub fn into_params(self) -> Result<ModelParams> {
        let config = ModelConfig {
            vocab: self.meta_usize("vocab")?,
            dim: self.meta_usize("dim")?,
            ffn_hidden: self.meta_usize("ffn_hidden")?,
            classes: self.meta_usize("classes")?,
            seq_len: self.meta_usize("seq_len")?,
        };
        ModelParams::from_tensors(config, self.tensors)
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("# blockprune checkpoint\n");
    for (k, v) in &ckpt.meta {
        if k.contains(char::is_whitespace) || v.contains(char::is_whitespace) || v.is_empty() {
            return Err(Error::InvalidArgument(format!("meta entry `{k}` = `{v}` contains whitespace")));
        }
        manifest.push_str(&format!("meta {k} {v}\n"));
    }
    for t in &ckpt.tensors {
        if t.name.is_empty() || t.name.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("tensor name `{}` is not a single token", t.name)));
        }
        let stem = file_stem(&t.name);
        let data_file = format!("{stem}.bin");
        write_f64s(fs::File::create(dir.join(&data_file))?, t.matrix.as_slice())?;
        let bias_file = match &t.bias {
            Some(b) => {
                let f = format!("{stem}.bias.bin");
                write_f64s(fs::File::create(dir.join(&f))?, b)?;
                f
            }
            None => "-".to_string(),
        };
        manifest.push_str(&format!(
            "tensor {} {} {} {} {} {} {}\n",
            t.name,
            t.matrix.rows(),
            t.matrix.cols(),
            t.role,
            u8::from(t.prunable),
            data_file,
            bias_file
        ));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)?;
    let mut meta = Vec::new();
    let mut tensors = Vec::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: &str| Error::format(&path, lineno, msg);
        match fields[0] {
            "meta" if fields.len() == 3 => meta.push((fields[1].to_string(), fields[2].to_string())),
            "tensor" if fields.len() == 8 => {
                let rows: usize = fields[2].parse().map_err(|_| bad("bad row count"))?;
                let cols: usize = fields[3].parse().map_err(|_| bad("bad column count"))?;
                let role = Role::parse(fields[4]).ok_or_else(|| bad("unknown role"))?;
                let prunable = match fields[5] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad("prunable flag must be 0 or 1")),
                };
                let data = decode_f64s(&fs::read(dir.join(fields[6]))?)
                    .filter(|d| d.len() == rows * cols)
                    .ok_or_else(|| bad(&format!("data file {} does not hold {rows}x{cols} values", fields[6])))?;
                let bias = match fields[7] {
                    "-" => None,
                    f => Some(decode_f64s(&fs::read(dir.join(f))?).ok_or_else(|| bad("truncated bias file"))?),
                };
                tensors.push(WeightTensor {
                    name: fields[1].to_string(),
                    matrix: Matrix::from_vec(rows, cols, data)?,
                    role,
                    prunable,
                    bias,
                });
            }
            _ => return Err(bad(&format!("unrecognized line `{line}`"))),
        }
    }
    let mut names: Vec<&str> = tensors.iter().map(|t| t.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::format(&path, 0, "duplicate tensor names"));
    }
    Ok(Checkpoint { meta, tensors })
}
