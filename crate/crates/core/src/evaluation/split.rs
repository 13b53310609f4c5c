use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::methods::DataSplit;
use crate::synthgen::LabeledScan;
use crate::voxcore::NUM_CLASSES;

pub const TARGET_FRACTIONS: [f64; 3] = [0.5, 0.25, 0.25];
/// Minimum share of S cells and of D cells in every set.
pub const MIN_CLASS_FRACTION: f64 = 0.02;
pub const DEFAULT_MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetKind {
    Train,
    Val,
    Test,
}

impl SetKind {
    pub const ALL: [SetKind; 3] = [SetKind::Train, SetKind::Val, SetKind::Test];

    pub fn name(self) -> &'static str {
        match self {
            SetKind::Train => "train",
            SetKind::Val => "val",
            SetKind::Test => "test",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SetKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Split(format!("unknown set {s:?}; expected train, val or test")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub scan_id: String,
    pub group_id: String,
    pub set: SetKind,
}

/// Scan-to-set assignment of one fold with its realized fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold: usize,
    pub records: Vec<SplitRecord>,
    /// Share of scans in (train, val, test).
    pub set_fractions: [f64; 3],
    /// Per set, the share of label cells of each class (S, D, N).
    pub class_fractions: [[f64; NUM_CLASSES]; 3],
}

/// Scans per set for `n` scans: 50% / 25% rounded, the remainder to test.
pub fn target_counts(n: usize) -> [usize; 3] {
    let train = (n as f64 * TARGET_FRACTIONS[0]).round() as usize;
    let val = ((n as f64 * TARGET_FRACTIONS[1]).round() as usize).min(n - train);
    [train, val, n - train - val]
}

fn realized(scans: &[LabeledScan], sets: &[SetKind]) -> ([usize; 3], [[f64; NUM_CLASSES]; 3]) {
    let mut counts = [0usize; 3];
    let mut cells = [[0usize; NUM_CLASSES]; 3];
    for (s, set) in scans.iter().zip(sets) {
        counts[set.index()] += 1;
        for (acc, h) in cells[set.index()].iter_mut().zip(s.labels.histogram()) {
            *acc += h;
        }
    }
    let fractions = cells.map(|c| {
        let total: usize = c.iter().sum();
        c.map(|v| if total == 0 { 0.0 } else { v as f64 / total as f64 })
    });
    (counts, fractions)
}

impl FoldAssignment {
    fn build(fold: usize, scans: &[LabeledScan], sets: &[SetKind]) -> Self {
        let (counts, class_fractions) = realized(scans, sets);
        let n = scans.len().max(1) as f64;
        Self {
            fold,
            records: scans
                .iter()
                .zip(sets)
                .map(|(s, &set)| SplitRecord {
                    scan_id: s.volume.scan_id.clone(),
                    group_id: s.volume.group_id.clone(),
                    set,
                })
                .collect(),
            set_fractions: counts.map(|c| c as f64 / n),
            class_fractions,
        }
    }

    /// Rebuilds an assignment from parsed records, checking they cover `scans` exactly.
    pub fn from_records(fold: usize, records: &[SplitRecord], scans: &[LabeledScan]) -> Result<Self> {
        let by_id: BTreeMap<&str, &SplitRecord> = records.iter().map(|r| (r.scan_id.as_str(), r)).collect();
        if by_id.len() != records.len() {
            return Err(Error::Split("split file lists a scan more than once".into()));
        }
        let mut sets = Vec::with_capacity(scans.len());
        for s in scans {
            let r = by_id
                .get(s.volume.scan_id.as_str())
                .ok_or_else(|| Error::Split(format!("scan {} is missing from the split", s.volume.scan_id)))?;
            if r.group_id != s.volume.group_id {
                return Err(Error::Split(format!(
                    "scan {} is in group {}, split says {}",
                    s.volume.scan_id, s.volume.group_id, r.group_id
                )));
            }
            sets.push(r.set);
        }
        if records.len() != scans.len() {
            return Err(Error::Split("split lists scans that are not in the dataset".into()));
        }
        Ok(Self::build(fold, scans, &sets))
    }

    pub fn set_of(&self, scan_id: &str) -> Option<SetKind> {
        self.records.iter().find(|r| r.scan_id == scan_id).map(|r| r.set)
    }

    /// Text records `scan_id,group_id,set`, one per line after a header.
    pub fn to_text(&self) -> String {
        let mut s = String::from("scan_id,group_id,set\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{}\n", r.scan_id, r.group_id, r.set));
        }
        s
    }

    /// Scans of each set, in dataset order.
    pub fn apply<'a>(&self, scans: &'a [LabeledScan]) -> Result<DataSplit<'a>> {
        let mut split = DataSplit {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for s in scans {
            let set = self
                .set_of(&s.volume.scan_id)
                .ok_or_else(|| Error::Split(format!("scan {} is not assigned", s.volume.scan_id)))?;
            match set {
                SetKind::Train => split.train.push(s),
                SetKind::Val => split.val.push(s),
                SetKind::Test => split.test.push(s),
            }
        }
        Ok(split)
    }
}

pub fn parse_split(text: &str) -> Result<Vec<SplitRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("scan_id")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [scan_id, group_id, set] = fields[..] else {
            return Err(Error::Split(format!("line {}: expected scan_id,group_id,set", i + 1)));
        };
        out.push(SplitRecord {
            scan_id: scan_id.to_string(),
            group_id: group_id.to_string(),
            set: set.parse()?,
        });
    }
    Ok(out)
}

/// Smallest S or D share over the three sets, minus a penalty per scan of
/// count deviation beyond one; non-negative slack means the split is valid.
fn slack(counts: [usize; 3], targets: [usize; 3], fractions: &[[f64; NUM_CLASSES]; 3]) -> f64 {
    let off: usize = counts
        .iter()
        .zip(targets)
        .map(|(c, t)| c.abs_diff(t).saturating_sub(1))
        .sum();
    let class = fractions
        .iter()
        .flat_map(|f| [f[0], f[1]])
        .fold(f64::INFINITY, f64::min);
    class - MIN_CLASS_FRACTION - off as f64
}

/// Random group-level split meeting the 50/25/25 (±1 scan) and minimum S/D
/// share constraints, found by rejection sampling.
pub fn split_dataset(scans: &[LabeledScan], seed: u64, max_attempts: usize) -> Result<FoldAssignment> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in scans.iter().enumerate() {
        groups.entry(s.volume.group_id.as_str()).or_default().push(i);
    }
    if groups.len() < 3 {
        return Err(Error::Split(format!(
            "need at least 3 groups to fill train, val and test, found {}",
            groups.len()
        )));
    }
    let targets = target_counts(scans.len());
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, [usize; 3], [[f64; NUM_CLASSES]; 3])> = None;
    for _ in 0..max_attempts.max(1) {
        groups.shuffle(&mut rng);
        let mut sets = vec![SetKind::Train; scans.len()];
        let mut counts = [0usize; 3];
        for g in &groups {
            // the set furthest below its target takes the next group
            let k = (0..3)
                .max_by_key(|&k| (targets[k] as isize - counts[k] as isize, std::cmp::Reverse(k)))
                .expect("three sets");
            for &i in g {
                sets[i] = SetKind::ALL[k];
            }
            counts[k] += g.len();
        }
        let (counts, fractions) = realized(scans, &sets);
        let s = slack(counts, targets, &fractions);
        if s >= 0.0 && counts.iter().all(|&c| c > 0) {
            return Ok(FoldAssignment::build(0, scans, &sets));
        }
        if best.as_ref().map_or(true, |b| s > b.0) {
            best = Some((s, counts, fractions));
        }
    }
    let (_, counts, f) = best.expect("at least one attempt");
    Err(Error::Split(format!(
        "no split met the constraints in {max_attempts} attempts; best had {}/{}/{} scans, S shares {:.4}/{:.4}/{:.4}, D shares {:.4}/{:.4}/{:.4}",
        counts[0], counts[1], counts[2], f[0][0], f[1][0], f[2][0], f[0][1], f[1][1], f[2][1]
    )))
}

/// Distinct group ids per set; a valid assignment has pairwise disjoint sets.
pub fn groups_by_set(assignment: &FoldAssignment) -> [BTreeSet<String>; 3] {
    let mut out: [BTreeSet<String>; 3] = Default::default();
    for r in &assignment.records {
        out[r.set.index()].insert(r.group_id.clone());
    }
    out
}
