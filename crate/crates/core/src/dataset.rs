//! Per-subject data: volumes for every instance plus the trial table that
//! ties instances to labels, trials and domains.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BrainMask, SampleStack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::invalid(format!("unknown domain `{other}`"))),
        }
    }
}

/// One row per instance; the instance id is the row index.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTable {
    trial_ids: Vec<u64>,
    labels: Vec<u8>,
    domains: Vec<Domain>,
}

impl TrialTable {
    /// Fails when a trial id is shared by instances with different labels or
    /// domains.
    pub fn new(trial_ids: Vec<u64>, labels: Vec<u8>, domains: Vec<Domain>) -> Result<Self> {
        if trial_ids.len() != labels.len() || labels.len() != domains.len() {
            return Err(Error::invalid("trial table columns differ in length"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::invalid(format!("labels must be 0 or 1, found {bad}")));
        }
        let mut seen: BTreeMap<u64, (u8, Domain)> = BTreeMap::new();
        for i in 0..trial_ids.len() {
            let key = (labels[i], domains[i]);
            if let Some(prev) = seen.insert(trial_ids[i], key) {
                if prev != key {
                    return Err(Error::invalid(format!(
                        "trial {} mixes labels or domains",
                        trial_ids[i]
                    )));
                }
            }
        }
        Ok(TrialTable {
            trial_ids,
            labels,
            domains,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn trial_id(&self, i: usize) -> u64 {
        self.trial_ids[i]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn domain(&self, i: usize) -> Domain {
        self.domains[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn instances(&self, domain: Domain) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.domains[i] == domain).collect()
    }

    pub fn count(&self, domain: Domain) -> usize {
        self.domains.iter().filter(|&&d| d == domain).count()
    }

    /// Fraction of class-1 instances in a domain; `None` when it is empty.
    pub fn prevalence(&self, domain: Domain) -> Option<f64> {
        let idx = self.instances(domain);
        if idx.is_empty() {
            return None;
        }
        let ones = idx.iter().filter(|&&i| self.labels[i] == 1).count();
        Some(ones as f64 / idx.len() as f64)
    }

    /// Trials of one domain and class mapped to their instances, ordered by
    /// trial id.
    pub fn trials_of(&self, domain: Domain, label: u8) -> BTreeMap<u64, Vec<usize>> {
        let mut out: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for i in 0..self.len() {
            if self.domains[i] == domain && self.labels[i] == label {
                out.entry(self.trial_ids[i]).or_default().push(i);
            }
        }
        out
    }

    pub fn labels_at(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Volumes for every instance of both domains on one masked grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDataset {
    pub mask: BrainMask,
    pub samples: SampleStack,
    pub trials: TrialTable,
}

impl SubjectDataset {
    pub fn new(mask: BrainMask, samples: SampleStack, trials: TrialTable) -> Result<Self> {
        if samples.dims != mask.grid().dims {
            return Err(Error::invalid(format!(
                "sample dims {:?} do not match mask dims {:?}",
                samples.dims,
                mask.grid().dims
            )));
        }
        if samples.n_samples != trials.len() {
            return Err(Error::invalid(format!(
                "{} volumes but {} trial-table rows",
                samples.n_samples,
                trials.len()
            )));
        }
        Ok(SubjectDataset {
            mask,
            samples,
            trials,
        })
    }

    /// Instances x masked voxels.
    pub fn features(&self) -> Result<DMatrix<f64>> {
        self.samples.masked_matrix(&self.mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VoxelGrid;

    #[test]
    fn trials_must_be_single_label_and_domain() {
        let d = vec![Domain::Source; 3];
        assert!(TrialTable::new(vec![1, 1, 2], vec![0, 1, 1], d.clone()).is_err());
        assert!(TrialTable::new(vec![1, 1, 2], vec![0, 0, 1], vec![Domain::Source, Domain::Target, Domain::Source]).is_err());
        let t = TrialTable::new(vec![1, 1, 2], vec![0, 0, 1], d).unwrap();
        assert_eq!(t.prevalence(Domain::Source), Some(1.0 / 3.0));
        assert_eq!(t.prevalence(Domain::Target), None);
        assert_eq!(t.trials_of(Domain::Source, 0)[&1], vec![0, 1]);
    }

    #[test]
    fn dataset_checks_shapes() {
        let grid = VoxelGrid::isotropic([2, 1, 1], 3.0).unwrap();
        let mask = BrainMask::full(grid);
        let stack = SampleStack::new([2, 1, 1], 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = TrialTable::new(vec![0, 1], vec![0, 1], vec![Domain::Source; 2]).unwrap();
        let ds = SubjectDataset::new(mask.clone(), stack.clone(), t).unwrap();
        assert_eq!(ds.features().unwrap(), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let t1 = TrialTable::new(vec![0], vec![0], vec![Domain::Source]).unwrap();
        assert!(SubjectDataset::new(mask, stack, t1).is_err());
        assert_eq!("target".parse::<Domain>().unwrap(), Domain::Target);
    }
}
