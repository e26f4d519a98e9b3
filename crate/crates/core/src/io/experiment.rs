//! Experiment runs: method comparison over a plan grid, searchlight mapping,
//! rank statistics over result tables and permutation tests over maps.
//!
//! `compare` and `searchlight` write a `manifest.json` holding the full run
//! specification, the input fingerprint and output checksums; feeding that
//! file back through [`replay`] reproduces the tables and maps byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::bundle::{bundle_fingerprint, read_dataset, sha256_hex};
use super::maps::{read_score_map, write_pvalue_map, write_score_map};
use super::tables::{fmt_f64, frequency_csv, friedman_text, groups_text, rank_summary_csv, results_csv};
use crate::adaptation::{adapt, DomainPair, Method, MethodParams};
use crate::dataset::{Domain, SubjectDataset};
use crate::error::{Error, Result};
use crate::exec::{worker_count, Execution};
use crate::linear::{balanced_accuracy, FitConfig};
use crate::partition::{make_plan_grid, PartitionPlan, PlanGrid};
use crate::rng::derive_seed;
use crate::searchlight::{center_scores, run_searchlight, ScoreMap, SearchlightConfig};
use crate::stats::{
    per_subject_permutation_test, sign_flip_permutation_test, significance_frequency_table, PValueMap,
    PermutationConfig, RankSummary, ResultsTable, TfceConfig,
};

pub const RUN_MANIFEST: &str = "manifest.json";

fn ids(methods: &[Method]) -> Vec<String> {
    methods.iter().map(|m| m.id().to_string()).collect()
}

fn write_out(dir: &Path, name: &str, bytes: &[u8], outputs: &mut BTreeMap<String, String>) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, bytes)?;
    outputs.insert(name.to_string(), sha256_hex(bytes));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSpec {
    pub bundle: PathBuf,
    pub methods: Vec<String>,
    pub partitions: usize,
    pub nt_list: Vec<usize>,
    pub seed: u64,
    pub params: MethodParams,
    pub fit: FitConfig,
    pub alpha: f64,
}

impl CompareSpec {
    pub fn new(bundle: PathBuf, methods: &[Method], partitions: usize, nt_list: Vec<usize>, seed: u64) -> Self {
        CompareSpec {
            bundle,
            methods: ids(methods),
            partitions,
            nt_list,
            seed,
            params: MethodParams::default(),
            fit: FitConfig::default(),
            alpha: 0.05,
        }
    }

    pub fn parsed_methods(&self) -> Result<Vec<Method>> {
        let m: Vec<Method> = self.methods.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        if m.is_empty() {
            return Err(Error::invalid("method list is empty"));
        }
        let mut seen = m.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != m.len() {
            return Err(Error::invalid("method list has duplicates"));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchlightSpec {
    pub bundle: PathBuf,
    pub radius_mm: f64,
    pub methods: Vec<String>,
    pub partitions: usize,
    pub nt: usize,
    pub seed: u64,
    pub params: MethodParams,
    pub fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum RunSpec {
    Compare(CompareSpec),
    Searchlight(SearchlightSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub spec: RunSpec,
    pub bundle_sha256: String,
    /// Output file (relative to the run directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub n_cells: usize,
    pub n_failed: usize,
    pub wall_time_s: f64,
    pub workers: usize,
}

impl RunManifest {
    pub fn failure_fraction(&self) -> f64 {
        if self.n_cells == 0 {
            0.0
        } else {
            self.n_failed as f64 / self.n_cells as f64
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        fs::write(dir.join(RUN_MANIFEST), text + "\n")?;
        Ok(())
    }
}

fn new_manifest(spec: RunSpec, bundle: &Path) -> Result<RunManifest> {
    Ok(RunManifest {
        tool: "xdecode".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        spec,
        bundle_sha256: bundle_fingerprint(bundle)?,
        outputs: BTreeMap::new(),
        n_cells: 0,
        n_failed: 0,
        wall_time_s: 0.0,
        workers: worker_count(),
    })
}

/// A failed (partition, n_t, method) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub partition: usize,
    pub n_t: usize,
    pub method: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    /// One table per n_t value (rows = partitions).
    pub tables: Vec<ResultsTable>,
    pub all: ResultsTable,
    pub summary: Option<RankSummary>,
    pub failures: Vec<CellFailure>,
    pub manifest: RunManifest,
}

/// Target-test balanced accuracy of every method on one plan. Recoverable
/// failures become NaN plus a message.
pub fn evaluate_plan(
    x: &nalgebra::DMatrix<f64>,
    data: &SubjectDataset,
    plan: &PartitionPlan,
    methods: &[Method],
    params: &MethodParams,
    fit: &FitConfig,
) -> Result<Vec<(f64, Option<String>)>> {
    let labels = data.trials.labels();
    let lab = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<u8>>();
    let pair = DomainPair::new(
        x.select_rows(&plan.source_train),
        lab(&plan.source_train),
        x.select_rows(&plan.target_train),
        lab(&plan.target_train),
    )?;
    let xe = x.select_rows(&plan.target_test);
    let ye = lab(&plan.target_test);
    let mut params = params.clone();
    params.seed = derive_seed(plan.seed, &[0x5eed]);
    methods
        .iter()
        .map(|&m| {
            let r = adapt(m, &pair, &params, fit).and_then(|model| {
                for w in &model.warnings {
                    warn!("plan seed {} {m}: {w}", plan.seed);
                }
                balanced_accuracy(&ye, &model.predict_target(&xe)?)
            });
            match r {
                Ok(v) => Ok((v, None)),
                Err(e) if e.is_fit_failure() => Ok((f64::NAN, Some(e.to_string()))),
                Err(e) => Err(e),
            }
        })
        .collect()
}

fn check_both_domains(data: &SubjectDataset) -> Result<()> {
    for d in [Domain::Source, Domain::Target] {
        if data.trials.count(d) == 0 {
            return Err(Error::invalid(format!("bundle has no {d} instances")));
        }
    }
    Ok(())
}

/// Runs every method on every (partition, n_t) plan and writes
///
/// ```text
/// results_nt<N>.csv   partition x method, one per n_t
/// results_all.csv     all tables stacked, keyed by n_t and partition
/// rank_summary.csv    aligned-rank summary of results_all
/// friedman.txt        statistic, p-value, rank order
/// groups.txt          non-significance groups
/// plans.txt           every plan, so index sets can be audited
/// failures.csv        failed cells
/// manifest.json
/// ```
pub fn run_compare(spec: &CompareSpec, out: &Path, exec: Execution) -> Result<CompareOutcome> {
    let start = Instant::now();
    let methods = spec.parsed_methods()?;
    spec.fit.validate()?;
    let data = read_dataset(&spec.bundle)?;
    check_both_domains(&data)?;
    let grid = make_plan_grid(&data.trials, spec.partitions, &spec.nt_list, spec.seed)?;
    let x = data.features()?;
    info!(
        "compare: {} methods, {} plans, {} features",
        methods.len(),
        grid.plans.len(),
        x.ncols()
    );
    let cells = exec.try_map(grid.plans.len(), |c| {
        evaluate_plan(&x, &data, &grid.plans[c], &methods, &spec.params, &spec.fit)
    })?;

    let names = ids(&methods);
    let n_nt = spec.nt_list.len();
    let mut failures = Vec::new();
    let mut tables = Vec::with_capacity(n_nt);
    for (k, &nt) in spec.nt_list.iter().enumerate() {
        let m = nalgebra::DMatrix::from_fn(spec.partitions, methods.len(), |p, j| cells[p * n_nt + k][j].0);
        tables.push(ResultsTable::new(names.clone(), m)?);
        for p in 0..spec.partitions {
            for (j, (_, msg)) in cells[p * n_nt + k].iter().enumerate() {
                if let Some(msg) = msg {
                    failures.push(CellFailure {
                        partition: p,
                        n_t: nt,
                        method: names[j].clone(),
                        message: msg.clone(),
                    });
                }
            }
        }
    }
    let all = ResultsTable::vstack(&tables)?;
    let summary = if methods.len() >= 2 {
        match RankSummary::from_table(&all) {
            Ok(s) => Some(s),
            Err(e) => {
                warn!("no rank summary: {e}");
                None
            }
        }
    } else {
        None
    };

    fs::create_dir_all(out)?;
    let mut manifest = new_manifest(RunSpec::Compare(spec.clone()), &spec.bundle)?;
    let mut outputs = BTreeMap::new();
    let part_keys: Vec<Vec<String>> = (0..spec.partitions).map(|p| vec![p.to_string()]).collect();
    for (k, &nt) in spec.nt_list.iter().enumerate() {
        let bytes = results_csv(&tables[k], &["partition"], &part_keys)?;
        write_out(out, &format!("results_nt{nt:03}.csv"), &bytes, &mut outputs)?;
    }
    let all_keys: Vec<Vec<String>> = spec
        .nt_list
        .iter()
        .flat_map(|nt| (0..spec.partitions).map(move |p| vec![nt.to_string(), p.to_string()]))
        .collect();
    write_out(out, "results_all.csv", &results_csv(&all, &["n_t", "partition"], &all_keys)?, &mut outputs)?;
    if let Some(s) = &summary {
        write_out(out, "rank_summary.csv", &rank_summary_csv(s)?, &mut outputs)?;
        write_out(out, "friedman.txt", friedman_text(s, spec.alpha).as_bytes(), &mut outputs)?;
        write_out(out, "groups.txt", groups_text(s, spec.alpha).as_bytes(), &mut outputs)?;
    }
    write_out(out, "plans.txt", plans_text(&grid).as_bytes(), &mut outputs)?;
    write_out(out, "failures.csv", &failures_csv(&failures)?, &mut outputs)?;

    manifest.outputs = outputs;
    manifest.n_cells = grid.plans.len() * methods.len();
    manifest.n_failed = failures.len();
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.write(out)?;
    Ok(CompareOutcome {
        tables,
        all,
        summary,
        failures,
        manifest,
    })
}

fn plans_text(grid: &PlanGrid) -> String {
    let mut s = String::new();
    for p in 0..grid.n_partitions {
        for k in 0..grid.n_t_values.len() {
            let _ = writeln!(s, "# partition {p} n_t {}", grid.n_t_values[k]);
            s.push_str(&grid.get(p, k).to_text());
        }
    }
    s
}

/// Parses `plans.txt` back into `(partition, plan)` pairs.
pub fn parse_plans_text(s: &str) -> Result<Vec<(usize, PartitionPlan)>> {
    let mut out = Vec::new();
    let mut cur: Option<(usize, String)> = None;
    let flush = |cur: &mut Option<(usize, String)>, out: &mut Vec<(usize, PartitionPlan)>| -> Result<()> {
        if let Some((p, body)) = cur.take() {
            out.push((p, PartitionPlan::from_text(&body)?));
        }
        Ok(())
    };
    for line in s.lines() {
        if let Some(rest) = line.strip_prefix("# partition ") {
            flush(&mut cur, &mut out)?;
            let p = rest
                .split_whitespace()
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::invalid(format!("bad plan header `{line}`")))?;
            cur = Some((p, String::new()));
        } else if let Some((_, body)) = &mut cur {
            body.push_str(line);
            body.push('\n');
        }
    }
    flush(&mut cur, &mut out)?;
    Ok(out)
}

fn failures_csv(f: &[CellFailure]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n_t", "partition", "method", "message"])
        .map_err(super::bundle::csv_err)?;
    for c in f {
        w.write_record([c.n_t.to_string(), c.partition.to_string(), c.method.clone(), c.message.clone()])
            .map_err(super::bundle::csv_err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

#[derive(Debug, Clone)]
pub struct SearchlightOutcome {
    pub maps: BTreeMap<String, ScoreMap>,
    pub manifest: RunManifest,
}

/// Runs the searchlight with `partitions` plans at one n_t and writes each
/// map as a score-map bundle under `maps/<name>/`, plus `summary.csv`,
/// `plans.txt` and `manifest.json`.
pub fn run_searchlight_experiment(spec: &SearchlightSpec, out: &Path, exec: Execution) -> Result<SearchlightOutcome> {
    let start = Instant::now();
    let methods: Vec<Method> = spec.methods.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    let data = read_dataset(&spec.bundle)?;
    check_both_domains(&data)?;
    let grid = make_plan_grid(&data.trials, spec.partitions, &[spec.nt], spec.seed)?;
    let plans: Vec<PartitionPlan> = grid.column(0).into_iter().cloned().collect();
    let cfg = SearchlightConfig {
        radius_mm: spec.radius_mm,
        methods,
        fit: spec.fit,
        params: spec.params.clone(),
        keep_per_partition: true,
    };
    let res = run_searchlight(&data, &plans, &cfg, exec)?;
    info!("searchlight: {} spheres x {} partitions", res.n_spheres, res.n_partitions);

    fs::create_dir_all(out)?;
    let mut manifest = new_manifest(RunSpec::Searchlight(spec.clone()), &spec.bundle)?;
    let mut outputs = BTreeMap::new();
    let mut summary = String::from("map,n_failed,grand_mean,peak_x,peak_y,peak_z,peak_value\n");
    let mut n_failed = 0;
    for (name, map) in &res.maps {
        let dir = out.join("maps").join(name);
        write_score_map(map, name, &dir)?;
        for f in ["manifest.txt", "samples.f32le", "mask.u8"] {
            let bytes = fs::read(dir.join(f))?;
            outputs.insert(format!("maps/{name}/{f}"), sha256_hex(&bytes));
        }
        n_failed += map.n_failed() as usize;
        let (c, v) = match map.argmax() {
            Some(r) => (map.mask.grid().coord(map.mask.masked_indices()[r]), map.values[r]),
            None => ([0; 3], f64::NAN),
        };
        let _ = writeln!(
            summary,
            "{name},{},{},{},{},{},{}",
            map.n_failed(),
            fmt_f64(map.grand_mean()),
            c[0],
            c[1],
            c[2],
            fmt_f64(v)
        );
    }
    write_out(out, "summary.csv", summary.as_bytes(), &mut outputs)?;
    write_out(out, "plans.txt", plans_text(&grid).as_bytes(), &mut outputs)?;
    manifest.outputs = outputs;
    manifest.n_cells = res.n_spheres * res.n_partitions * res.maps.len();
    manifest.n_failed = n_failed;
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.write(out)?;
    Ok(SearchlightOutcome {
        maps: res.maps,
        manifest,
    })
}

/// Re-executes a run from its manifest into `out`, after checking that the
/// input bundle is unchanged.
pub fn replay(manifest_path: &Path, out: &Path, exec: Execution) -> Result<RunManifest> {
    let m = RunManifest::read(manifest_path)?;
    let bundle = match &m.spec {
        RunSpec::Compare(s) => &s.bundle,
        RunSpec::Searchlight(s) => &s.bundle,
    };
    let now = bundle_fingerprint(bundle)?;
    if now != m.bundle_sha256 {
        return Err(Error::bundle("bundle_sha256", "input bundle changed since the run was recorded"));
    }
    match &m.spec {
        RunSpec::Compare(s) => run_compare(s, out, exec).map(|o| o.manifest),
        RunSpec::Searchlight(s) => run_searchlight_experiment(s, out, exec).map(|o| o.manifest),
    }
}

/// Rank statistics for each table plus the frequency of significant
/// pairwise wins across them. Writes `rank_summary_<i>.csv`,
/// `friedman_<i>.txt`, `groups_<i>.txt` per table, `frequency.csv` and
/// `tables.txt` (index to source path).
pub fn run_friedman(tables: &[(String, ResultsTable)], alpha: f64, out: &Path) -> Result<Vec<RankSummary>> {
    if tables.is_empty() {
        return Err(Error::invalid("no tables matched"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0,1)"));
    }
    fs::create_dir_all(out)?;
    let mut outputs = BTreeMap::new();
    let mut index = String::new();
    let mut summaries = Vec::new();
    for (i, (label, t)) in tables.iter().enumerate() {
        let s = RankSummary::from_table(t).map_err(|e| Error::invalid(format!("{label}: {e}")))?;
        write_out(out, &format!("rank_summary_{i:03}.csv"), &rank_summary_csv(&s)?, &mut outputs)?;
        write_out(out, &format!("friedman_{i:03}.txt"), friedman_text(&s, alpha).as_bytes(), &mut outputs)?;
        write_out(out, &format!("groups_{i:03}.txt"), groups_text(&s, alpha).as_bytes(), &mut outputs)?;
        let _ = writeln!(index, "{i:03} {label}");
        summaries.push(s);
    }
    let freq = significance_frequency_table(&summaries, alpha)?;
    write_out(out, "frequency.csv", &frequency_csv(&summaries[0].methods, &freq)?, &mut outputs)?;
    write_out(out, "tables.txt", index.as_bytes(), &mut outputs)?;
    Ok(summaries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermtestSummary {
    pub mode: String,
    pub inputs: Vec<String>,
    pub n_observations: usize,
    pub permutation: PermutationConfig,
    pub tfce: TfceConfig,
    pub alpha: f64,
    pub n_permutations: usize,
    pub exhaustive: bool,
    pub min_p: f64,
    pub n_significant: usize,
    pub zero_variance_voxels: usize,
}

/// Group test over several score maps (one per subject, using each mean
/// map) or, for a single map, the within-subject test over its partitions.
/// Maps that are not yet centered on chance are centered first. Writes the
/// p-value bundle under `pvalues/`, `significant.csv` and `summary.json`.
pub fn run_permtest(
    map_dirs: &[PathBuf],
    cfg: &PermutationConfig,
    tfce: TfceConfig,
    alpha: f64,
    out: &Path,
    exec: Execution,
) -> Result<(PValueMap, PermtestSummary)> {
    if map_dirs.is_empty() {
        return Err(Error::invalid("no maps matched"));
    }
    tfce.validate()?;
    let mut maps = Vec::new();
    for d in map_dirs {
        let (_, m) = read_score_map(d)?;
        maps.push(if m.centered { m } else { center_scores(&m) });
    }
    let mask = maps[0].mask.clone();
    if maps.iter().any(|m| m.mask != mask) {
        return Err(Error::invalid("maps are on different masks"));
    }
    let (mode, pmap, n_obs) = if maps.len() == 1 {
        let pp = maps[0]
            .per_partition
            .clone()
            .ok_or_else(|| Error::invalid("a single map needs per-partition layers"))?;
        let pp = nan_to_zero(pp);
        let n = pp.len();
        ("per-subject", per_subject_permutation_test(&pp, &mask, cfg, tfce, exec)?, n)
    } else {
        let obs = nan_to_zero(maps.iter().map(|m| m.values.clone()).collect());
        let n = obs.len();
        ("group", sign_flip_permutation_test(&obs, &mask, cfg, tfce, exec)?, n)
    };
    fs::create_dir_all(out)?;
    write_pvalue_map(&pmap, &out.join("pvalues"))?;
    let sig = pmap.significant(alpha);
    let mut csv = String::from("x,y,z,p,observed\n");
    for &r in &sig {
        let c = mask.grid().coord(mask.masked_indices()[r]);
        let _ = writeln!(csv, "{},{},{},{},{}", c[0], c[1], c[2], fmt_f64(pmap.p[r]), fmt_f64(pmap.observed[r]));
    }
    fs::write(out.join("significant.csv"), csv)?;
    let summary = PermtestSummary {
        mode: mode.into(),
        inputs: map_dirs.iter().map(|p| p.display().to_string()).collect(),
        n_observations: n_obs,
        permutation: *cfg,
        tfce,
        alpha,
        n_permutations: pmap.n_permutations,
        exhaustive: pmap.exhaustive,
        min_p: pmap.min_p(),
        n_significant: sig.len(),
        zero_variance_voxels: pmap.zero_variance.len(),
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(out.join("summary.json"), text + "\n")?;
    Ok((pmap, summary))
}

/// Failed voxels carry no evidence either way.
fn nan_to_zero(mut v: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    for row in &mut v {
        for x in row.iter_mut().filter(|x| !x.is_finite()) {
            *x = 0.0;
        }
    }
    v
}

/// Human-readable description of any bundle.
pub fn inspect(dir: &Path) -> Result<String> {
    let b = super::bundle::VolumeBundle::read(dir)?;
    let mut s = String::new();
    let g = b.mask.grid();
    let _ = writeln!(s, "kind: {}", b.manifest.get_opt("kind").unwrap_or("unknown"));
    let _ = writeln!(s, "dims: {} x {} x {}", g.dims[0], g.dims[1], g.dims[2]);
    let _ = writeln!(
        s,
        "voxel_size_mm: {} x {} x {}",
        g.voxel_size_mm[0], g.voxel_size_mm[1], g.voxel_size_mm[2]
    );
    let _ = writeln!(s, "masked voxels: {}", b.mask.n_masked());
    let _ = writeln!(s, "samples: {}", b.stack.n_samples);
    if let Some(t) = &b.trials {
        for d in [Domain::Source, Domain::Target] {
            let n_trials: usize = (0..=1u8).map(|l| t.trials_of(d, l).len()).sum();
            let _ = writeln!(
                s,
                "{d}: {} instances in {} trials, prevalence {}",
                t.count(d),
                n_trials,
                t.prevalence(d).map_or("n/a".to_string(), |p| format!("{p:.3}"))
            );
        }
    }
    for (k, v) in &b.manifest.entries {
        if !k.starts_with("sha256") {
            continue;
        }
        let _ = writeln!(s, "{k}: {v}");
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::bundle::{write_dataset, Manifest};
    use crate::io::synth::{generate_synth, SynthConfig};

    fn bundle(dir: &Path) -> PathBuf {
        let cfg: SynthConfig = serde_json::from_str(
            r#"{"seed": 1, "n_features": 6, "n_informative": 2, "n_source": 60, "n_target": 60,
                "trial_length": 2, "separation": 2.0, "shift": {"rotation_deg": 40}}"#,
        )
        .unwrap();
        let (ds, _) = generate_synth(&cfg).unwrap();
        let p = dir.join("bundle");
        write_dataset(&ds, &p, &Manifest::default()).unwrap();
        p
    }

    #[test]
    fn single_method_single_partition_is_one_cell() {
        let tmp = tempfile::tempdir().unwrap();
        let b = bundle(tmp.path());
        let spec = CompareSpec::new(b, &[Method::Baseline], 1, vec![10], 3);
        let o = run_compare(&spec, &tmp.path().join("out"), Execution::Sequential).unwrap();
        assert_eq!((o.all.values.nrows(), o.all.values.ncols()), (1, 1));
        assert!(o.summary.is_none());
        assert!(tmp.path().join("out/results_nt010.csv").exists());
    }

    #[test]
    fn default_methods_give_thirteen_columns_and_audit_clean_plans() {
        let tmp = tempfile::tempdir().unwrap();
        let b = bundle(tmp.path());
        let spec = CompareSpec::new(b.clone(), &Method::ALL, 3, vec![10, 20], 5);
        let out = tmp.path().join("out");
        let o = run_compare(&spec, &out, Execution::Parallel).unwrap();
        assert_eq!(o.tables.len(), 2);
        assert_eq!((o.tables[0].values.nrows(), o.tables[0].values.ncols()), (3, 13));
        assert_eq!(o.all.values.nrows(), 6);
        let data = read_dataset(&b).unwrap();
        let plans = parse_plans_text(&fs::read_to_string(out.join("plans.txt")).unwrap()).unwrap();
        assert_eq!(plans.len(), 6);
        for (_, p) in &plans {
            assert_eq!(p.audit(&data.trials), None);
        }
        let m = RunManifest::read(&out.join(RUN_MANIFEST)).unwrap();
        assert_eq!(m.n_cells, 6 * 13);
        for (f, sum) in &m.outputs {
            assert_eq!(&sha256_hex(&fs::read(out.join(f)).unwrap()), sum, "{f}");
        }
    }

    #[test]
    fn replay_is_byte_identical_across_modes() {
        let tmp = tempfile::tempdir().unwrap();
        let b = bundle(tmp.path());
        let methods = [Method::Baseline, Method::Naive, Method::Rtlc, Method::Ulsif];
        let spec = CompareSpec::new(b, &methods, 4, vec![10], 7);
        let a = tmp.path().join("a");
        let first = run_compare(&spec, &a, Execution::Parallel).unwrap().manifest;
        let again = replay(&a.join(RUN_MANIFEST), &tmp.path().join("b"), Execution::Sequential).unwrap();
        assert_eq!(first.outputs, again.outputs);
    }

    #[test]
    fn changed_bundle_blocks_replay() {
        let tmp = tempfile::tempdir().unwrap();
        let b = bundle(tmp.path());
        let spec = CompareSpec::new(b.clone(), &[Method::Baseline], 1, vec![10], 3);
        let a = tmp.path().join("a");
        run_compare(&spec, &a, Execution::Sequential).unwrap();
        let mp = b.join("manifest.txt");
        let text = fs::read_to_string(&mp).unwrap() + "note: edited\n";
        fs::write(&mp, text).unwrap();
        assert!(replay(&a.join(RUN_MANIFEST), &tmp.path().join("b"), Execution::Sequential).is_err());
    }

    #[test]
    fn unknown_method_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let mut spec = CompareSpec::new(bundle(tmp.path()), &[Method::Baseline], 1, vec![10], 3);
        spec.methods.push("svm".into());
        assert!(matches!(
            run_compare(&spec, &tmp.path().join("o"), Execution::Sequential),
            Err(Error::InvalidArgument(_))
        ));
    }
}
