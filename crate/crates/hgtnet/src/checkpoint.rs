//! Binary checkpoint: magic `HGTN`, u32 version, u64-prefixed UTF-8 metadata
//! (the run config text plus `state.*` keys), the parameter table, then the
//! optimizer moments as a second table whose entries are named `m/<param>`
//! and `v/<param>`. Integers and floats are little-endian.
//!
//! Table layout: u64 count, then per entry a u64-prefixed name, a u8 rank,
//! `rank` u64 extents and the f64 data.

use std::fmt::Write as _;
use std::path::Path;

use hgtnet_core::data::DatasetStats;
use hgtnet_core::model::{HgtNet, Param, ParamSet};
use hgtnet_core::train::{EpochRecord, Moments, StopTracker, Trainer};

use crate::config::{parse_entries, RunConfig};
use crate::error::{CheckpointError, HgtError, Result};
use crate::fsio;

pub const MAGIC: [u8; 4] = *b"HGTN";
pub const VERSION: u32 = 1;

/// Everything needed to evaluate with, or resume, a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub class_names: Vec<String>,
    pub stats: DatasetStats,
    pub params: ParamSet,
    pub moments: Moments,
    /// Completed epochs.
    pub epoch: u64,
    pub step: u64,
    pub tracker: StopTracker,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn from_trainer(tr: &Trainer, config: &RunConfig, class_names: &[String]) -> Self {
        let mut config = config.clone();
        config.model = tr.model.cfg.clone();
        config.train = tr.config.clone();
        config.train_policy = tr.policy.clone();
        Self {
            config,
            class_names: class_names.to_vec(),
            stats: tr.stats,
            params: tr.model.params.clone(),
            moments: tr.moments.clone(),
            epoch: tr.epoch,
            step: tr.step,
            tracker: tr.tracker,
            history: tr.history.clone(),
        }
    }

    pub fn model(&self) -> HgtNet {
        HgtNet { cfg: self.config.model.clone(), params: self.params.clone() }
    }

    pub fn into_trainer(self) -> Trainer {
        Trainer {
            model: HgtNet { cfg: self.config.model, params: self.params },
            config: self.config.train,
            policy: self.config.train_policy,
            stats: self.stats,
            moments: self.moments,
            step: self.step,
            epoch: self.epoch,
            tracker: self.tracker,
            history: self.history,
        }
    }

    fn metadata(&self) -> String {
        let mut s = self.config.to_text();
        s.push_str("# state\n");
        let triple = |v: [f64; 3]| format!("{},{},{}", v[0], v[1], v[2]);
        writeln!(s, "state.epoch = {}", self.epoch).unwrap();
        writeln!(s, "state.step = {}", self.step).unwrap();
        writeln!(s, "state.best_test_loss = {}", self.tracker.best_loss).unwrap();
        writeln!(s, "state.bad_epochs = {}", self.tracker.bad_epochs).unwrap();
        writeln!(s, "state.stats_mean = {}", triple(self.stats.mean)).unwrap();
        writeln!(s, "state.stats_std = {}", triple(self.stats.std)).unwrap();
        for (i, n) in self.class_names.iter().enumerate() {
            writeln!(s, "state.class.{i} = {n}").unwrap();
        }
        for r in &self.history {
            writeln!(
                s,
                "state.history.{} = {},{},{},{}",
                r.epoch, r.train_loss, r.train_acc, r.test_loss, r.test_acc
            )
            .unwrap();
        }
        s
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = self.metadata();
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        write_table(&mut out, self.params.iter().map(|(n, p)| (n.to_string(), p)));
        let m = self.moments.m.iter().map(|(n, p)| (format!("m/{n}"), p));
        let v = self.moments.v.iter().map(|(n, p)| (format!("v/{n}"), p));
        write_table(&mut out, m.chain(v));
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::Version { found: version, expected: VERSION });
        }
        let meta_len = r.len("metadata length")?;
        let meta = std::str::from_utf8(r.take(meta_len, "metadata")?)
            .map_err(|_| CheckpointError::Corrupt("metadata is not UTF-8".into()))?;
        let mut ck = parse_metadata(meta).map_err(|e| CheckpointError::Corrupt(format!("metadata: {e}")))?;

        let params = read_table(&mut r, "parameter table")?;
        let expected = ParamSet::init(&ck.config.model, 0).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        if !params.same_layout(&expected) {
            return Err(CheckpointError::Corrupt("parameter table does not match the model config".into()));
        }
        let moments = read_table(&mut r, "moment table")?;
        let (mut m, mut v) = (ParamSet::new(), ParamSet::new());
        for (name, p) in moments.iter() {
            let (target, base) = match name.split_once('/') {
                Some(("m", base)) => (&mut m, base),
                Some(("v", base)) => (&mut v, base),
                _ => return Err(CheckpointError::Corrupt(format!("unexpected moment entry `{name}`"))),
            };
            target.insert(base, p.clone()).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        }
        if !params.same_layout(&m) || !params.same_layout(&v) {
            return Err(CheckpointError::Corrupt("moment table does not match the parameters".into()));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        ck.params = params;
        ck.moments = Moments { m, v };
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let fail = |source| HgtError::Checkpoint { path: path.to_path_buf(), source };
        let bytes = std::fs::read(path).map_err(|e| fail(CheckpointError::Unreadable(e)))?;
        Self::decode(&bytes).map_err(fail)
    }
}

fn parse_metadata(meta: &str) -> std::result::Result<Checkpoint, String> {
    let mut config = RunConfig::default();
    let mut names: Vec<(usize, String)> = Vec::new();
    let mut history = Vec::new();
    let (mut epoch, mut step, mut bad, mut best) = (None, None, None, None);
    let (mut mean, mut std) = (None, None);
    let num = |k: &str, v: &str| -> std::result::Result<f64, String> {
        v.trim().parse().map_err(|_| format!("`{k}`: cannot parse `{v}`"))
    };
    let triple = |k: &str, v: &str| -> std::result::Result<[f64; 3], String> {
        let xs: Vec<f64> = v.split(',').map(|x| num(k, x)).collect::<std::result::Result<_, _>>()?;
        xs.try_into().map_err(|_| format!("`{k}` needs three values"))
    };
    for e in parse_entries(meta).map_err(|e| e.to_string())? {
        let (k, v) = (e.key.as_str(), e.value.as_str());
        let int = |v: &str| v.parse::<u64>().map_err(|_| format!("`{k}`: cannot parse `{v}`"));
        match k.strip_prefix("state.") {
            None => config.set(k, v).map_err(|err| err.to_string())?,
            Some("epoch") => epoch = Some(int(v)?),
            Some("step") => step = Some(int(v)?),
            Some("bad_epochs") => bad = Some(int(v)? as usize),
            Some("best_test_loss") => best = Some(num(k, v)?),
            Some("stats_mean") => mean = Some(triple(k, v)?),
            Some("stats_std") => std = Some(triple(k, v)?),
            Some(rest) => {
                if let Some(i) = rest.strip_prefix("class.") {
                    names.push((int(i)? as usize, v.to_string()));
                } else if let Some(i) = rest.strip_prefix("history.") {
                    let xs: Vec<f64> = v.split(',').map(|x| num(k, x)).collect::<std::result::Result<_, _>>()?;
                    let [tl, ta, vl, va]: [f64; 4] = xs.try_into().map_err(|_| format!("`{k}` needs four values"))?;
                    let epoch = int(i)? as usize;
                    history.push(EpochRecord { epoch, train_loss: tl, train_acc: ta, test_loss: vl, test_acc: va });
                } else {
                    return Err(format!("unknown key `{k}`"));
                }
            }
        }
    }
    config.validate().map_err(|e| e.to_string())?;
    names.sort();
    if names.iter().enumerate().any(|(i, (j, _))| i != *j) {
        return Err("class names are not numbered 0..K".into());
    }
    history.sort_by_key(|r| r.epoch);
    let missing = |what: &str| format!("missing `state.{what}`");
    Ok(Checkpoint {
        config,
        class_names: names.into_iter().map(|(_, n)| n).collect(),
        stats: DatasetStats {
            mean: mean.ok_or_else(|| missing("stats_mean"))?,
            std: std.ok_or_else(|| missing("stats_std"))?,
        },
        params: ParamSet::new(),
        moments: Moments { m: ParamSet::new(), v: ParamSet::new() },
        epoch: epoch.ok_or_else(|| missing("epoch"))?,
        step: step.ok_or_else(|| missing("step"))?,
        tracker: StopTracker {
            best_loss: best.ok_or_else(|| missing("best_test_loss"))?,
            bad_epochs: bad.ok_or_else(|| missing("bad_epochs"))?,
        },
        history,
    })
}

fn write_table<'a>(out: &mut Vec<u8>, entries: impl Iterator<Item = (String, &'a Param)>) {
    let entries: Vec<_> = entries.collect();
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, p) in entries {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(p.shape.len() as u8);
        for &e in &p.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_table(r: &mut Reader, what: &'static str) -> std::result::Result<ParamSet, CheckpointError> {
    let count = r.len(what)?;
    let mut set = ParamSet::new();
    for _ in 0..count {
        let name_len = r.len(what)?;
        let name = std::str::from_utf8(r.take(name_len, what)?)
            .map_err(|_| CheckpointError::Corrupt("entry name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1, what)?[0] as usize;
        let shape = (0..rank).map(|_| r.len(what)).collect::<std::result::Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .filter(|n| n.checked_mul(8).is_some())
            .ok_or_else(|| CheckpointError::Corrupt(format!("entry `{name}` has an absurd shape {shape:?}")))?;
        let raw = r.take(n * 8, what)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if set.get(&name).is_some() {
            return Err(CheckpointError::Corrupt(format!("entry `{name}` appears twice")));
        }
        set.insert(name.clone(), Param { shape, data })
            .map_err(|e| CheckpointError::Corrupt(format!("entry `{name}`: {e}")))?;
    }
    Ok(set)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn len(&mut self, what: &'static str) -> std::result::Result<usize, CheckpointError> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| CheckpointError::Corrupt(format!("{what}: length {v} too large")))
    }
}
