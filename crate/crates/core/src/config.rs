//! Line-oriented `key = value` configuration with `[section]` headers.
//!
//! Keys: see `RunConfig::to_text` for the full, canonical listing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{DatasetSpec, DEFAULT_LEXICON};
use crate::error::{Error, Result};
use crate::train::{Schedule, TrainConfig};

/// Parsed sections in file order, each a key → value map.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Ini {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = Ini::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("line {}: {msg}", i + 1));
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                ini.sections.entry(name.clone()).or_default();
                section = Some(name);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            let sec = section
                .clone()
                .ok_or_else(|| at("key outside of any [section]".into()))?;
            let key = key.trim().to_string();
            let map = ini.sections.entry(sec.clone()).or_default();
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(at(format!("duplicate key `{sec}.{key}`")));
            }
        }
        Ok(ini)
    }

    /// Sets `section.key` (used for command-line overrides).
    pub fn set(&mut self, dotted: &str, value: &str) -> Result<()> {
        let (sec, key) = dotted
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override `{dotted}` must be section.key")))?;
        self.sections
            .entry(sec.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    fn keys(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.sections
            .iter()
            .flat_map(|(s, m)| m.iter().map(move |(k, v)| (s.as_str(), k.as_str(), v.as_str())))
    }
}

fn parse_value<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{section}.{key}`: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(section: &str, key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| parse_value(section, key, v.trim()))
        .collect()
}

fn join_list<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Where and how the synthetic dataset is generated.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub spec: DatasetSpec,
}

/// Everything a `train` / `ablate` invocation needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::toy(3_000),
            data: DataConfig {
                dir: PathBuf::from("data/toy"),
                spec: DatasetSpec::toy(7),
            },
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_ini(&Ini::parse(&text)?)
    }

    /// Applies every key in `ini` on top of the defaults; unknown keys fail.
    pub fn from_ini(ini: &Ini) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut schedule = None::<(Option<u64>, Option<u64>, Option<u64>)>;
        let mut steps = c.train.schedule.total;
        let mut augment_on = c.train.augment.is_some();
        let mut aug = c.train.augment.clone().unwrap_or_default();
        for (s, k, v) in ini.keys() {
            let t = &mut c.train;
            let d = &mut c.data;
            match (s, k) {
                ("model", "profile") => t.model.profile = parse_value(s, k, v)?,
                ("model", "em") => t.model.toggles.em = parse_value(s, k, v)?,
                ("model", "sadm") => t.model.toggles.sadm = parse_value(s, k, v)?,
                ("model", "head") => t.model.head = parse_value(s, k, v)?,
                ("model", "loss") => t.model.loss = parse_value(s, k, v)?,
                ("model", "max_len") => t.model.max_len = parse_value(s, k, v)?,
                ("train", "batch_size") => t.batch_size = parse_value(s, k, v)?,
                ("train", "steps") => steps = parse_value(s, k, v)?,
                ("train", "warmup") => schedule.get_or_insert((None, None, None)).0 = Some(parse_value(s, k, v)?),
                ("train", "milestone1") => schedule.get_or_insert((None, None, None)).1 = Some(parse_value(s, k, v)?),
                ("train", "milestone2") => schedule.get_or_insert((None, None, None)).2 = Some(parse_value(s, k, v)?),
                ("train", "smoothing") => t.smoothing = parse_value(s, k, v)?,
                ("train", "seed") => t.seed = parse_value(s, k, v)?,
                ("train", "eval_every") => t.eval_every = parse_value(s, k, v)?,
                ("train", "checkpoint_every") => t.checkpoint_every = parse_value(s, k, v)?,
                ("train", "rho") => t.rho = parse_value(s, k, v)?,
                ("train", "eps") => t.eps = parse_value(s, k, v)?,
                ("train", "lr") => t.lr = parse_value(s, k, v)?,
                ("train", "target_accuracy") => {
                    t.target_accuracy = if v == "none" { None } else { Some(parse_value(s, k, v)?) }
                }
                ("augment", "enabled") => augment_on = parse_value(s, k, v)?,
                ("augment", "p") => aug.p = parse_value(s, k, v)?,
                ("augment", "blur_lengths") => aug.blur_lengths = parse_list(s, k, v)?,
                ("augment", "blur_angles") => aug.blur_angles_deg = parse_list(s, k, v)?,
                ("augment", "noise_sigma") => aug.noise_sigma = parse_value(s, k, v)?,
                ("augment", "brightness") => aug.brightness = parse_value(s, k, v)?,
                ("augment", "contrast") => aug.contrast = parse_value(s, k, v)?,
                ("data", "dir") => d.dir = PathBuf::from(v),
                ("data", "n_train") => d.spec.n_train = parse_value(s, k, v)?,
                ("data", "n_eval") => d.spec.n_eval = parse_value(s, k, v)?,
                ("data", "height") => d.spec.height = parse_value(s, k, v)?,
                ("data", "width") => d.spec.width = parse_value(s, k, v)?,
                ("data", "seed") => d.spec.seed = parse_value(s, k, v)?,
                ("data", "eval_noise") => d.spec.eval_noise = parse_value(s, k, v)?,
                ("data", "lexicon") => {
                    d.spec.lexicon = if v == "default" {
                        DEFAULT_LEXICON.iter().map(|w| w.to_string()).collect()
                    } else {
                        v.split(',').map(|w| w.trim().to_ascii_lowercase()).collect()
                    }
                }
                _ => return Err(Error::Config(format!("unknown key `{s}.{k}`"))),
            }
        }
        let scaled = Schedule::scaled(steps);
        c.train.schedule = match schedule {
            None => scaled,
            Some((w, m1, m2)) => Schedule {
                warmup: w.unwrap_or(scaled.warmup),
                milestones: (m1.unwrap_or(scaled.milestones.0), m2.unwrap_or(scaled.milestones.1)),
                total: steps,
            },
        };
        c.train.augment = augment_on.then_some(aug);
        c.train.validate()?;
        Ok(c)
    }

    /// Canonical text of the training-relevant keys (everything except the
    /// data directory). Stored in checkpoints and hashed for fingerprints.
    pub fn train_text(&self) -> String {
        let t = &self.train;
        let m = &t.model;
        let mut out = String::from("[model]\n");
        for (k, v) in m.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out.push_str("\n[train]\n");
        let s = t.schedule;
        let _ = writeln!(out, "batch_size = {}", t.batch_size);
        let _ = writeln!(out, "steps = {}", s.total);
        let _ = writeln!(out, "warmup = {}", s.warmup);
        let _ = writeln!(out, "milestone1 = {}", s.milestones.0);
        let _ = writeln!(out, "milestone2 = {}", s.milestones.1);
        let _ = writeln!(out, "smoothing = {}", t.smoothing);
        let _ = writeln!(out, "seed = {}", t.seed);
        let _ = writeln!(out, "eval_every = {}", t.eval_every);
        let _ = writeln!(out, "checkpoint_every = {}", t.checkpoint_every);
        let _ = writeln!(out, "rho = {}", t.rho);
        let _ = writeln!(out, "eps = {}", t.eps);
        let _ = writeln!(out, "lr = {}", t.lr);
        let _ = writeln!(
            out,
            "target_accuracy = {}",
            t.target_accuracy.map_or("none".to_string(), |a| a.to_string())
        );
        out.push_str("\n[augment]\n");
        let a = t.augment.clone();
        let _ = writeln!(out, "enabled = {}", a.is_some());
        let a = a.unwrap_or_default();
        let _ = writeln!(out, "p = {}", a.p);
        let _ = writeln!(out, "blur_lengths = {}", join_list(&a.blur_lengths));
        let _ = writeln!(out, "blur_angles = {}", join_list(&a.blur_angles_deg));
        let _ = writeln!(out, "noise_sigma = {}", a.noise_sigma);
        let _ = writeln!(out, "brightness = {}", a.brightness);
        let _ = writeln!(out, "contrast = {}", a.contrast);
        out
    }

    /// Canonical text of every key, data section included.
    pub fn to_text(&self) -> String {
        let d = &self.data;
        let mut out = self.train_text();
        out.push_str("\n[data]\n");
        let _ = writeln!(out, "dir = {}", d.dir.display());
        let _ = writeln!(out, "n_train = {}", d.spec.n_train);
        let _ = writeln!(out, "n_eval = {}", d.spec.n_eval);
        let _ = writeln!(out, "height = {}", d.spec.height);
        let _ = writeln!(out, "width = {}", d.spec.width);
        let _ = writeln!(out, "seed = {}", d.spec.seed);
        let _ = writeln!(out, "eval_noise = {}", d.spec.eval_noise);
        let _ = writeln!(out, "lexicon = {}", d.spec.lexicon.join(","));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::HeadKind;
    use crate::model::LossKind;

    #[test]
    fn defaults_round_trip_through_text() {
        let c = RunConfig::default();
        let back = RunConfig::from_ini(&Ini::parse(&c.to_text()).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn keys_and_overrides_apply() {
        let mut ini = Ini::parse(
            "# comment\n[model]\nhead = shpn\nloss = ctc\n\n[train]\nsteps = 700\nseed = 4 # trailing\n[augment]\nenabled = false\n",
        )
        .unwrap();
        ini.set("train.batch_size", "8").unwrap();
        let c = RunConfig::from_ini(&ini).unwrap();
        assert_eq!(c.train.model.head, HeadKind::Shpn);
        assert_eq!(c.train.model.loss, LossKind::Ctc);
        assert_eq!(c.train.schedule, Schedule::scaled(700));
        assert_eq!((c.train.seed, c.train.batch_size), (4, 8));
        assert!(c.train.augment.is_none());
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert!(Ini::parse("key = 1\n").is_err());
        assert!(Ini::parse("[a]\nnot a pair\n").is_err());
        assert!(Ini::parse("[a]\nx = 1\nx = 2\n").is_err());
        assert!(RunConfig::from_ini(&Ini::parse("[model]\ncolour = red\n").unwrap()).is_err());
        assert!(RunConfig::from_ini(&Ini::parse("[model]\nhead = fc\n").unwrap()).is_err());
        assert!(RunConfig::from_ini(&Ini::parse("[train]\nsteps = 2\n").unwrap()).is_err());
    }
}
