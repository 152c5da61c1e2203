//! Per-epoch training records and their on-disk forms: the run-log CSV
//! (schema documented in `docs/runlog_schema.md`) and optional binary
//! per-epoch gradient/mask dumps consumed by the analysis module.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a parsed
//! log reproduces the in-memory values bit-exactly and reruns of a
//! deterministic trainer produce byte-identical files.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub epoch: usize,
    pub nat_train_acc: f64,
    pub nat_test_acc: f64,
    pub adv_test_acc: f64,
    pub ce_nat: f64,
    pub kl_nat_adv: f64,
    pub l_cr: f64,
    pub revision_events: usize,
    /// Mean |gradient| per parameter tensor (pre-mask), aligned with
    /// `RunLog::layer_names`.
    pub grad_mean: Vec<f64>,
    /// Fraction of gradient entries kept by the mask, per parameter tensor.
    pub frac_updated: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    /// Run tag, e.g. `st`, `at`, `cure`, `U-23`.
    pub tag: String,
    pub layer_names: Vec<String>,
    pub records: Vec<TrainRecord>,
}

impl RunLog {
    pub fn new(tag: impl Into<String>, layer_names: Vec<String>) -> Self {
        RunLog {
            tag: tag.into(),
            layer_names,
            records: Vec::new(),
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str("epoch,nat_train_acc,nat_test_acc,adv_test_acc,ce_nat,kl_nat_adv,l_cr,revision_events");
        for name in &self.layer_names {
            out.push_str(&format!(",grad_mean.{name}"));
        }
        for name in &self.layer_names {
            out.push_str(&format!(",frac_updated.{name}"));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}",
                r.epoch, r.nat_train_acc, r.nat_test_acc, r.adv_test_acc, r.ce_nat, r.kl_nat_adv, r.l_cr, r.revision_events
            ));
            for v in &r.grad_mean {
                out.push_str(&format!(",{v}"));
            }
            for v in &r.frac_updated {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_csv(path: &Path) -> Result<RunLog> {
        let label = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(label.clone(), e))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format(label.clone(), "empty run log"))?;
        let cols: Vec<&str> = header.split(',').collect();
        const FIXED: [&str; 8] = [
            "epoch",
            "nat_train_acc",
            "nat_test_acc",
            "adv_test_acc",
            "ce_nat",
            "kl_nat_adv",
            "l_cr",
            "revision_events",
        ];
        if cols.len() < FIXED.len() || cols[..FIXED.len()] != FIXED {
            return Err(Error::format(label, "unrecognized run-log header"));
        }
        let extra = &cols[FIXED.len()..];
        let layer_names: Vec<String> = extra
            .iter()
            .take_while(|c| c.starts_with("grad_mean."))
            .map(|c| c.trim_start_matches("grad_mean.").to_string())
            .collect();
        let n_layers = layer_names.len();
        if extra.len() != 2 * n_layers
            || !extra[n_layers..]
                .iter()
                .zip(&layer_names)
                .all(|(c, n)| *c == format!("frac_updated.{n}"))
        {
            return Err(Error::format(label, "run-log layer columns are inconsistent"));
        }

        let mut log = RunLog::new("loaded", layer_names);
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::format(label, format!("row {}: wrong field count", i + 2)));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::format(label.clone(), format!("row {}: `{s}` is not a number", i + 2)))
            };
            let grad_mean = fields[8..8 + n_layers]
                .iter()
                .map(|s| num(s))
                .collect::<Result<Vec<_>>>()?;
            let frac_updated = fields[8 + n_layers..]
                .iter()
                .map(|s| num(s))
                .collect::<Result<Vec<_>>>()?;
            log.records.push(TrainRecord {
                epoch: num(fields[0])? as usize,
                nat_train_acc: num(fields[1])?,
                nat_test_acc: num(fields[2])?,
                adv_test_acc: num(fields[3])?,
                ce_nat: num(fields[4])?,
                kl_nat_adv: num(fields[5])?,
                l_cr: num(fields[6])?,
                revision_events: num(fields[7])? as usize,
                grad_mean,
                frac_updated,
            });
        }
        Ok(log)
    }
}

// ── Per-epoch gradient/mask dumps ────────────────────────────────────
//
// magic "CUREGDMP" | version u32 LE | epoch u32 LE | tensor count u32 LE |
// per tensor: name len u32 + UTF-8 name | numel u64 | numel f64 LE
// (mean |grad| per entry, averaged over the epoch's batches) | packed mask
// bitset (LSB first), ceil(numel/8) bytes, the epoch's final mask.

const DUMP_MAGIC: &[u8; 8] = b"CUREGDMP";
const DUMP_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct TensorStats {
    pub name: String,
    pub mean_abs_grad: Vec<f64>,
    /// Unpacked 0/1 mask entries.
    pub mask: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct StatsDump {
    pub epoch: usize,
    pub tensors: Vec<TensorStats>,
}

pub fn dump_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("stats_epoch{epoch:04}.bin"))
}

pub fn write_stats_dump(dir: &Path, dump: &StatsDump) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let path = dump_path(dir, dump.epoch);
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    out.extend_from_slice(&(dump.epoch as u32).to_le_bytes());
    out.extend_from_slice(&(dump.tensors.len() as u32).to_le_bytes());
    for t in &dump.tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.mean_abs_grad.len() as u64).to_le_bytes());
        for v in &t.mean_abs_grad {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut packed = vec![0u8; t.mask.len().div_ceil(8)];
        for (j, &bit) in t.mask.iter().enumerate() {
            if bit {
                packed[j / 8] |= 1 << (j % 8);
            }
        }
        out.extend_from_slice(&packed);
    }
    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_stats_dump(path: &Path) -> Result<StatsDump> {
    let label = path.display().to_string();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(label.clone(), e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(label.clone(), e))?;
    fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, label: &str) -> Result<&'a [u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::format(label, "truncated stats dump"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    }
    let mut pos = 0usize;
    if take(&bytes, &mut pos, 8, &label)? != DUMP_MAGIC {
        return Err(Error::format(label, "not a CUREGDMP stats dump"));
    }
    let version = u32::from_le_bytes(take(&bytes, &mut pos, 4, &label)?.try_into().unwrap());
    if version != DUMP_VERSION {
        return Err(Error::format(label, format!("unsupported dump version {version}")));
    }
    let epoch = u32::from_le_bytes(take(&bytes, &mut pos, 4, &label)?.try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(take(&bytes, &mut pos, 4, &label)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&bytes, &mut pos, 4, &label)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&bytes, &mut pos, name_len, &label)?.to_vec())
            .map_err(|_| Error::format(label.clone(), "bad tensor name"))?;
        let numel = u64::from_le_bytes(take(&bytes, &mut pos, 8, &label)?.try_into().unwrap()) as usize;
        let raw = take(&bytes, &mut pos, numel * 8, &label)?;
        let mean_abs_grad: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let packed = take(&bytes, &mut pos, numel.div_ceil(8), &label)?;
        let mask: Vec<bool> = (0..numel).map(|j| packed[j / 8] >> (j % 8) & 1 == 1).collect();
        tensors.push(TensorStats {
            name,
            mean_abs_grad,
            mask,
        });
    }
    Ok(StatsDump { epoch, tensors })
}

/// Ascending epoch order of all dumps in a directory.
pub fn list_stats_dumps(dir: &Path) -> Result<Vec<PathBuf>> {
    let label = dir.display().to_string();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(label, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("stats_epoch") && n.ends_with(".bin"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    Ok(paths)
}
