//! Ablation grids over heads, losses and backbone/augmentation toggles, with a
//! results store of one CSV file per (cell, seed).

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::backbone::AblationToggles;
use crate::config::RunConfig;
use crate::data::{hex, AugmentConfig, Dataset, Manifest, Split};
use crate::error::{Error, Result};
use crate::heads::HeadKind;
use crate::model::LossKind;
use crate::train::{evaluate, load_params, RunOptions, Trainer, LATEST_CHECKPOINT};

pub const RESULT_HEADER: &str =
    "fingerprint,head,loss,em,sadm,augment,seed,status,steps,eval_word_acc,eval_edit_dist,wall_seconds,error";

/// One cell of an ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RunSpec {
    pub head: HeadKind,
    pub loss: LossKind,
    pub em: bool,
    pub sadm: bool,
    pub augment: bool,
}

impl RunSpec {
    /// SPPN + CE with EM, SADM and augmentation.
    pub const FULL: RunSpec = RunSpec {
        head: HeadKind::Sppn,
        loss: LossKind::Ce,
        em: true,
        sadm: true,
        augment: true,
    };

    pub fn is_full(&self) -> bool {
        *self == Self::FULL
    }

    /// `base` with this cell's head, loss and toggles; augmentation uses the
    /// base settings when enabled (defaults if the base has none).
    pub fn apply(&self, base: &RunConfig, seed: u64) -> RunConfig {
        let mut c = base.clone();
        let m = &mut c.train.model;
        m.head = self.head;
        m.loss = self.loss;
        m.toggles = AblationToggles {
            em: self.em,
            sadm: self.sadm,
        };
        c.train.augment = self
            .augment
            .then(|| base.train.augment.clone().unwrap_or_else(AugmentConfig::default));
        c.train.seed = seed;
        c
    }

    /// Hash of the cell's canonical training text and the dataset digest.
    /// The text already carries the cell, the seed and the schedule.
    pub fn fingerprint(&self, base: &RunConfig, seed: u64, manifest_digest: &str) -> String {
        let mut h = Sha256::new();
        h.update(self.apply(base, seed).train_text().as_bytes());
        h.update(b"\n[dataset]\n");
        h.update(manifest_digest.as_bytes());
        hex(&h.finalize())[..16].to_string()
    }
}

impl fmt::Display for RunSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}+{} em={} sadm={} augment={}",
            self.head, self.loss, self.em, self.sadm, self.augment
        )
    }
}

/// Preset grids mirroring the three ablation tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Grid {
    /// Heads × losses on CPNet without augmentation.
    Heads,
    /// Base, Base+EM, Base+EM+SADM with SPPN + CE, no augmentation.
    Backbone,
    /// The full configuration with and without augmentation.
    Augment,
    /// Only the full configuration.
    Single,
}

impl Grid {
    pub const ALL: [Grid; 4] = [Grid::Heads, Grid::Backbone, Grid::Augment, Grid::Single];

    pub fn cells(self) -> Vec<RunSpec> {
        let plain = RunSpec {
            augment: false,
            ..RunSpec::FULL
        };
        match self {
            Grid::Heads => HeadKind::ALL
                .iter()
                .flat_map(|&head| {
                    [LossKind::Ctc, LossKind::Ce]
                        .into_iter()
                        .map(move |loss| RunSpec { head, loss, ..plain })
                })
                .collect(),
            Grid::Backbone => [(false, false), (true, false), (true, true)]
                .into_iter()
                .map(|(em, sadm)| RunSpec { em, sadm, ..plain })
                .collect(),
            Grid::Augment => vec![plain, RunSpec::FULL],
            Grid::Single => vec![RunSpec::FULL],
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grid::Heads => "heads",
            Grid::Backbone => "backbone",
            Grid::Augment => "augment",
            Grid::Single => "single",
        })
    }
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Grid::ALL
            .into_iter()
            .find(|g| g.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown grid `{s}` (heads, backbone, augment, single)")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CellStatus {
    Ok,
    Failed(String),
}

/// One row of the results store.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub fingerprint: String,
    pub spec: RunSpec,
    pub seed: u64,
    pub status: CellStatus,
    pub steps: u64,
    pub eval_word_acc: f64,
    pub eval_edit_dist: f64,
    pub wall_seconds: f64,
}

impl CellResult {
    pub fn to_csv(&self) -> String {
        let s = &self.spec;
        let (status, err) = match &self.status {
            CellStatus::Ok => ("ok", String::new()),
            CellStatus::Failed(e) => ("failed", e.replace([',', '\n', '\r'], ";")),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.3},{}",
            self.fingerprint,
            s.head,
            s.loss,
            s.em,
            s.sadm,
            s.augment,
            self.seed,
            status,
            self.steps,
            self.eval_word_acc,
            self.eval_edit_dist,
            self.wall_seconds,
            err
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().splitn(13, ',').collect();
        let bad = || Error::Config(format!("malformed result row `{line}`"));
        if f.len() != 13 {
            return Err(bad());
        }
        let p = |i: usize| f[i];
        let status = match p(7) {
            "ok" => CellStatus::Ok,
            "failed" => CellStatus::Failed(p(12).to_string()),
            _ => return Err(bad()),
        };
        Ok(CellResult {
            fingerprint: p(0).to_string(),
            spec: RunSpec {
                head: p(1).parse()?,
                loss: p(2).parse()?,
                em: p(3).parse().map_err(|_| bad())?,
                sadm: p(4).parse().map_err(|_| bad())?,
                augment: p(5).parse().map_err(|_| bad())?,
            },
            seed: p(6).parse().map_err(|_| bad())?,
            status,
            steps: p(8).parse().map_err(|_| bad())?,
            eval_word_acc: p(9).parse().map_err(|_| bad())?,
            eval_edit_dist: p(10).parse().map_err(|_| bad())?,
            wall_seconds: p(11).parse().map_err(|_| bad())?,
        })
    }

    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("csv.tmp");
        fs::write(&tmp, format!("{RESULT_HEADER}\n{}\n", self.to_csv())).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(RESULT_HEADER) {
            return Err(Error::Config(format!("{}: not a result file", path.display())));
        }
        Self::parse(lines.next().unwrap_or(""))
    }
}

/// Every `*.csv` result in `dir`, sorted by fingerprint.
pub fn read_results(dir: &Path) -> Result<Vec<CellResult>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            out.push(CellResult::load(&path)?);
        }
    }
    out.sort_by(|a, b| a.fingerprint.cmp(&b.fingerprint));
    Ok(out)
}

/// What `ablate` did with each (cell, seed).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AblationSummary {
    pub trained: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// The dataset every cell trains on; splits are loaded once per input size.
pub struct AblationData<'a> {
    pub dir: &'a Path,
    pub manifest: &'a Manifest,
    loaded: HashMap<(usize, usize), (Dataset, Dataset)>,
}

impl<'a> AblationData<'a> {
    pub fn new(dir: &'a Path, manifest: &'a Manifest) -> Self {
        AblationData {
            dir,
            manifest,
            loaded: HashMap::new(),
        }
    }

    fn splits(&mut self, (h, w): (usize, usize)) -> Result<&(Dataset, Dataset)> {
        if !self.loaded.contains_key(&(h, w)) {
            let train = Dataset::load(self.dir, self.manifest, Split::Train, h, w)?;
            let eval = Dataset::load(self.dir, self.manifest, Split::Eval, h, w)?;
            self.loaded.insert((h, w), (train, eval));
        }
        Ok(&self.loaded[&(h, w)])
    }
}

pub fn result_path(results: &Path, fingerprint: &str) -> PathBuf {
    results.join(format!("{fingerprint}.csv"))
}

pub fn run_dir(results: &Path, fingerprint: &str) -> PathBuf {
    results.join("runs").join(fingerprint)
}

/// Trains every (cell, seed) lacking a successful result. A failing cell is
/// recorded as failed and the rest of the grid continues.
pub fn ablate(
    cells: &[RunSpec],
    seeds: &[u64],
    base: &RunConfig,
    data: &mut AblationData<'_>,
    results: &Path,
) -> Result<AblationSummary> {
    fs::create_dir_all(results).map_err(|e| Error::io(results, e))?;
    let digest = data.manifest.digest();
    let mut summary = AblationSummary::default();
    for spec in cells {
        for &seed in seeds {
            let fp = spec.fingerprint(base, seed, &digest);
            let path = result_path(results, &fp);
            if path.exists() && CellResult::load(&path).is_ok_and(|r| r.is_ok()) {
                log::info!("skip {spec} seed {seed} ({fp})");
                summary.skipped += 1;
                continue;
            }
            log::info!("train {spec} seed {seed} ({fp})");
            let result = match train_cell(spec, seed, base, data, &run_dir(results, &fp)) {
                Ok((steps, acc, ed, wall)) => {
                    summary.trained += 1;
                    CellResult {
                        fingerprint: fp.clone(),
                        spec: *spec,
                        seed,
                        status: CellStatus::Ok,
                        steps,
                        eval_word_acc: acc,
                        eval_edit_dist: ed,
                        wall_seconds: wall,
                    }
                }
                Err(e) => {
                    log::warn!("cell {spec} seed {seed} failed: {e}");
                    summary.failed += 1;
                    CellResult {
                        fingerprint: fp.clone(),
                        spec: *spec,
                        seed,
                        status: CellStatus::Failed(e.to_string()),
                        steps: 0,
                        eval_word_acc: f64::NAN,
                        eval_edit_dist: f64::NAN,
                        wall_seconds: 0.0,
                    }
                }
            };
            result.save(&path)?;
        }
    }
    Ok(summary)
}

fn train_cell(
    spec: &RunSpec,
    seed: u64,
    base: &RunConfig,
    data: &mut AblationData<'_>,
    dir: &Path,
) -> Result<(u64, f64, f64, f64)> {
    let cfg = spec.apply(base, seed);
    let trainer = Trainer::new(cfg.train.clone(), cfg.train_text())?;
    let (train, eval) = data.splits(trainer.model().input_size())?;
    let latest = dir.join(LATEST_CHECKPOINT);
    let opts = RunOptions {
        resume: latest.exists().then_some(latest),
        stop_after: None,
    };
    let out = trainer.run(train, Some(eval), dir, &opts)?;
    let m = match out.last_eval {
        Some(m) => m,
        None => {
            let (_, store) = load_params(trainer.model(), &out.checkpoint)?;
            evaluate(trainer.model(), &store, eval, 64)?
        }
    };
    Ok((out.step, m.word_accuracy, m.mean_normalized_edit_distance, out.wall_seconds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_have_the_table_layouts() {
        assert_eq!(Grid::Heads.cells().len(), 6);
        assert_eq!(Grid::Backbone.cells().len(), 3);
        assert_eq!(Grid::Augment.cells(), vec![RunSpec { augment: false, ..RunSpec::FULL }, RunSpec::FULL]);
        assert!(Grid::Single.cells()[0].is_full());
        assert!(Grid::Backbone.cells().iter().all(|c| c.head == HeadKind::Sppn && !c.augment));
        for g in Grid::ALL {
            assert_eq!(g.to_string().parse::<Grid>().unwrap(), g);
        }
    }

    #[test]
    fn fingerprint_separates_cells_seeds_and_data() {
        let base = RunConfig::default();
        let a = RunSpec::FULL.fingerprint(&base, 0, "d1");
        assert_eq!(a, RunSpec::FULL.fingerprint(&base, 0, "d1"));
        assert_ne!(a, RunSpec::FULL.fingerprint(&base, 1, "d1"));
        assert_ne!(a, RunSpec::FULL.fingerprint(&base, 0, "d2"));
        let other = RunSpec { sadm: false, ..RunSpec::FULL };
        assert_ne!(a, other.fingerprint(&base, 0, "d1"));
    }

    #[test]
    fn result_rows_round_trip() {
        let r = CellResult {
            fingerprint: "00ff".into(),
            spec: RunSpec::FULL,
            seed: 3,
            status: CellStatus::Failed("boom, twice".into()),
            steps: 0,
            eval_word_acc: 0.5,
            eval_edit_dist: 0.25,
            wall_seconds: 1.5,
        };
        let back = CellResult::parse(&r.to_csv()).unwrap();
        assert_eq!(back.status, CellStatus::Failed("boom; twice".into()));
        assert_eq!((back.spec, back.seed, back.eval_word_acc), (r.spec, 3, 0.5));
    }
}
