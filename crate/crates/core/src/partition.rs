//! Trial-aware train/test partitions for both domains and the grid of plans
//! over partitions and target sample sizes.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::dataset::{Domain, TrialTable};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, shuffle, uniform_index};

/// Fraction of source trials per class used for training.
pub const SOURCE_TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub seed: u64,
    pub n_t: usize,
    pub source_train: Vec<usize>,
    pub source_test: Vec<usize>,
    pub target_train: Vec<usize>,
    pub target_test: Vec<usize>,
}

/// Splits source trials 4:1 per class and draws `n_t` class-balanced target
/// instances. Other instances of the drawn target trials are discarded; the
/// remaining target instances form the target test set.
pub fn make_partition(table: &TrialTable, n_t: usize, seed: u64) -> Result<PartitionPlan> {
    let mut rng = rng_from_seed(seed);
    let mut source_train = Vec::new();
    let mut source_test = Vec::new();
    for label in [0u8, 1] {
        let trials: Vec<Vec<usize>> = table.trials_of(Domain::Source, label).into_values().collect();
        if trials.is_empty() {
            return Err(Error::degenerate(format!("source domain has no trials of class {label}")));
        }
        let mut order: Vec<usize> = (0..trials.len()).collect();
        shuffle(&mut order, &mut rng);
        let n_train = (trials.len() as f64 * SOURCE_TRAIN_FRACTION).round() as usize;
        for (k, &t) in order.iter().enumerate() {
            let dst = if k < n_train { &mut source_train } else { &mut source_test };
            dst.extend_from_slice(&trials[t]);
        }
    }

    let by_class: Vec<Vec<usize>> = [0u8, 1]
        .iter()
        .map(|&l| table.trials_of(Domain::Target, l).into_values().flatten().collect())
        .collect();
    let available = by_class[0].len() + by_class[1].len();
    if available > 0 && (by_class[0].is_empty() || by_class[1].is_empty()) {
        return Err(Error::degenerate("target domain lacks one of the classes"));
    }
    if n_t > available {
        return Err(Error::invalid(format!(
            "n_t = {n_t} exceeds the {available} target instances"
        )));
    }
    // class quotas within one of each other; an odd remainder goes to a
    // random class, and a short class hands its deficit to the other
    let mut quota = [n_t / 2, n_t / 2];
    if n_t % 2 == 1 {
        quota[uniform_index(&mut rng, 2)] += 1;
    }
    for c in 0..2 {
        let short = quota[c].saturating_sub(by_class[c].len());
        quota[c] -= short;
        quota[1 - c] += short;
    }
    let mut target_train = Vec::with_capacity(n_t);
    for c in 0..2 {
        let mut pool = by_class[c].clone();
        shuffle(&mut pool, &mut rng);
        target_train.extend_from_slice(&pool[..quota[c]]);
    }
    let used: BTreeSet<u64> = target_train.iter().map(|&i| table.trial_id(i)).collect();
    let target_test = table
        .instances(Domain::Target)
        .into_iter()
        .filter(|&i| !used.contains(&table.trial_id(i)))
        .collect();

    source_train.sort_unstable();
    source_test.sort_unstable();
    target_train.sort_unstable();
    Ok(PartitionPlan {
        seed,
        n_t,
        source_train,
        source_test,
        target_train,
        target_test,
    })
}

/// Plans for every (partition, n_t) cell, partition-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanGrid {
    pub n_partitions: usize,
    pub n_t_values: Vec<usize>,
    pub plans: Vec<PartitionPlan>,
}

impl PlanGrid {
    pub fn get(&self, partition: usize, nt_index: usize) -> &PartitionPlan {
        &self.plans[partition * self.n_t_values.len() + nt_index]
    }

    /// All partitions for one n_t value, in partition order.
    pub fn column(&self, nt_index: usize) -> Vec<&PartitionPlan> {
        (0..self.n_partitions).map(|p| self.get(p, nt_index)).collect()
    }
}

/// Seed of one grid cell.
pub fn cell_seed(base_seed: u64, partition: usize, n_t: usize) -> u64 {
    derive_seed(base_seed, &[partition as u64, n_t as u64])
}

pub fn make_plan_grid(
    table: &TrialTable,
    n_partitions: usize,
    n_t_values: &[usize],
    base_seed: u64,
) -> Result<PlanGrid> {
    if n_partitions == 0 {
        return Err(Error::invalid("n_partitions must be >= 1"));
    }
    if n_t_values.is_empty() {
        return Err(Error::invalid("n_t list is empty"));
    }
    let mut plans = Vec::with_capacity(n_partitions * n_t_values.len());
    for p in 0..n_partitions {
        for &nt in n_t_values {
            plans.push(make_partition(table, nt, cell_seed(base_seed, p, nt))?);
        }
    }
    Ok(PlanGrid {
        n_partitions,
        n_t_values: n_t_values.to_vec(),
        plans,
    })
}

impl PartitionPlan {
    /// Line-oriented text: one labeled line per field.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "n_t {}", self.n_t);
        let _ = writeln!(s, "source_train {}", list(&self.source_train));
        let _ = writeln!(s, "source_test {}", list(&self.source_test));
        let _ = writeln!(s, "target_train {}", list(&self.target_train));
        let _ = writeln!(s, "target_test {}", list(&self.target_test));
        s
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let mut plan = PartitionPlan {
            seed: 0,
            n_t: 0,
            source_train: vec![],
            source_test: vec![],
            target_train: vec![],
            target_test: vec![],
        };
        let mut seen = BTreeSet::new();
        for line in s.lines().filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let nums = |p: std::str::SplitWhitespace<'_>| -> Result<Vec<u64>> {
                p.map(|t| t.parse::<u64>().map_err(|_| Error::invalid(format!("bad number `{t}` in plan"))))
                    .collect()
            };
            let v = nums(parts)?;
            let idx = || v.iter().map(|&x| x as usize).collect::<Vec<_>>();
            match key {
                "seed" => plan.seed = *v.first().ok_or_else(|| Error::invalid("seed line is empty"))?,
                "n_t" => plan.n_t = *v.first().ok_or_else(|| Error::invalid("n_t line is empty"))? as usize,
                "source_train" => plan.source_train = idx(),
                "source_test" => plan.source_test = idx(),
                "target_train" => plan.target_train = idx(),
                "target_test" => plan.target_test = idx(),
                other => return Err(Error::invalid(format!("unknown plan field `{other}`"))),
            }
            seen.insert(key.to_string());
        }
        if seen.len() != 6 {
            return Err(Error::invalid("plan text is missing fields"));
        }
        Ok(plan)
    }

    /// Describes the first violated plan invariant, if any.
    pub fn audit(&self, table: &TrialTable) -> Option<String> {
        let lists = [
            &self.source_train,
            &self.source_test,
            &self.target_train,
            &self.target_test,
        ];
        let mut all = BTreeSet::new();
        for l in lists {
            for &i in l.iter() {
                if i >= table.len() {
                    return Some(format!("instance {i} out of range"));
                }
                if !all.insert(i) {
                    return Some(format!("instance {i} listed twice"));
                }
            }
        }
        let trials = |v: &[usize]| v.iter().map(|&i| table.trial_id(i)).collect::<BTreeSet<_>>();
        let train: BTreeSet<u64> = trials(&self.source_train).union(&trials(&self.target_train)).copied().collect();
        let test: BTreeSet<u64> = trials(&self.source_test).union(&trials(&self.target_test)).copied().collect();
        if let Some(t) = train.intersection(&test).next() {
            return Some(format!("trial {t} appears in train and test"));
        }
        if self.target_train.len() != self.n_t {
            return Some(format!("target_train has {} instances, n_t = {}", self.target_train.len(), self.n_t));
        }
        for (name, l, d) in [
            ("source_train", &self.source_train, Domain::Source),
            ("source_test", &self.source_test, Domain::Source),
            ("target_train", &self.target_train, Domain::Target),
            ("target_test", &self.target_test, Domain::Target),
        ] {
            if l.iter().any(|&i| table.domain(i) != d) {
                return Some(format!("{name} holds an instance of the wrong domain"));
            }
        }
        None
    }
}
