//! On-disk bundle: a directory holding a `key: value` manifest, a raw
//! little-endian `f32` volume stack, a byte mask and (for datasets) a trial
//! table.
//!
//! ```text
//! <dir>/manifest.txt     key: value lines
//! <dir>/samples.f32le    n_samples volumes, x fastest, then y, then z
//! <dir>/mask.u8          one byte per voxel, 1 = inside
//! <dir>/trials.csv       instance_id,trial_id,label,domain (datasets only)
//! ```
//!
//! SHA-256 checksums of the three data files are stored in the manifest and
//! verified on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dataset::{Domain, SubjectDataset, TrialTable};
use crate::error::{Error, Result};
use crate::volume::{BrainMask, SampleStack, VoxelGrid};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const SAMPLES_FILE: &str = "samples.f32le";
pub const MASK_FILE: &str = "mask.u8";
pub const TRIALS_FILE: &str = "trials.csv";
pub const FORMAT_TAG: &str = "xdecode-bundle-1";

/// Ordered `key: value` manifest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::bundle(key, "missing from manifest"))
    }

    pub fn get_opt(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::bundle(key, format!("cannot parse `{raw}`")))
    }

    pub fn parse_triple<T: std::str::FromStr + Copy>(&self, key: &str) -> Result<[T; 3]> {
        let raw = self.get(key)?;
        let parts: Vec<T> = raw
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::bundle(key, format!("cannot parse `{raw}`"))))
            .collect::<Result<_>>()?;
        if parts.len() != 3 {
            return Err(Error::bundle(key, format!("expected three values, got `{raw}`")));
        }
        Ok([parts[0], parts[1], parts[2]])
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}: {v}\n"))
            .collect()
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (no, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::bundle("manifest", format!("line {} has no `key: value` pair", no + 1)))?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Generic volume bundle: any stack of volumes on a masked grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeBundle {
    pub manifest: Manifest,
    pub mask: BrainMask,
    pub stack: SampleStack,
    pub trials: Option<TrialTable>,
}

fn f32_bytes(data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn trials_csv(t: &TrialTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["instance_id", "trial_id", "label", "domain"])
        .map_err(csv_err)?;
    for i in 0..t.len() {
        w.write_record([
            i.to_string(),
            t.trial_id(i).to_string(),
            t.label(i).to_string(),
            t.domain(i).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

fn parse_trials(bytes: &[u8]) -> Result<TrialTable> {
    let mut r = csv::Reader::from_reader(bytes);
    let (mut t, mut l, mut d) = (vec![], vec![], vec![]);
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::bundle(TRIALS_FILE, e.to_string()))?;
        let field = |k: usize| rec.get(k).ok_or_else(|| Error::bundle(TRIALS_FILE, format!("row {row} is short")));
        let id: usize = field(0)?
            .parse()
            .map_err(|_| Error::bundle(TRIALS_FILE, format!("row {row}: bad instance_id")))?;
        if id != row {
            return Err(Error::bundle(TRIALS_FILE, format!("row {row}: instance ids must be 0..n in order")));
        }
        t.push(field(1)?.parse().map_err(|_| Error::bundle(TRIALS_FILE, format!("row {row}: bad trial_id")))?);
        l.push(field(2)?.parse().map_err(|_| Error::bundle(TRIALS_FILE, format!("row {row}: bad label")))?);
        d.push(field(3)?.parse().map_err(|_| Error::bundle(TRIALS_FILE, format!("row {row}: bad domain")))?);
    }
    TrialTable::new(t, l, d).map_err(|e| Error::bundle(TRIALS_FILE, e.to_string()))
}

impl VolumeBundle {
    /// Writes the data files and the manifest (with dims, counts and
    /// checksums filled in from the data).
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let grid = self.mask.grid();
        let samples = f32_bytes(&self.stack.data);
        let mask: Vec<u8> = self.mask.included().iter().map(|&b| u8::from(b)).collect();
        let mut m = self.manifest.clone();
        m.set("format", FORMAT_TAG);
        m.set("dims", format!("{} {} {}", grid.dims[0], grid.dims[1], grid.dims[2]));
        m.set(
            "voxel_size_mm",
            format!("{} {} {}", grid.voxel_size_mm[0], grid.voxel_size_mm[1], grid.voxel_size_mm[2]),
        );
        m.set("n_samples", self.stack.n_samples);
        m.set("n_masked", self.mask.n_masked());
        m.set("dtype", "f32");
        m.set("endianness", "little");
        m.set("layout", "voxel-fastest");
        m.set("samples_file", SAMPLES_FILE);
        m.set("mask_file", MASK_FILE);
        m.set("sha256_samples", sha256_hex(&samples));
        m.set("sha256_mask", sha256_hex(&mask));
        fs::write(dir.join(SAMPLES_FILE), &samples)?;
        fs::write(dir.join(MASK_FILE), &mask)?;
        if let Some(t) = &self.trials {
            let bytes = trials_csv(t)?;
            m.set("trials_file", TRIALS_FILE);
            m.set("sha256_trials", sha256_hex(&bytes));
            for dom in [Domain::Source, Domain::Target] {
                m.set(&format!("n_{dom}"), t.count(dom));
                if let Some(p) = t.prevalence(dom) {
                    m.set(&format!("prevalence_{dom}"), format!("{p:.6}"));
                }
            }
            fs::write(dir.join(TRIALS_FILE), &bytes)?;
        }
        fs::write(dir.join(MANIFEST_FILE), m.to_text())?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))
            .map_err(|e| Error::bundle(MANIFEST_FILE, e.to_string()))?;
        let m = Manifest::from_text(&text)?;
        if m.get("format")? != FORMAT_TAG {
            return Err(Error::bundle("format", format!("expected {FORMAT_TAG}")));
        }
        if m.get("dtype")? != "f32" {
            return Err(Error::bundle("dtype", "only f32 is supported"));
        }
        if m.get("endianness")? != "little" {
            return Err(Error::bundle("endianness", "only little-endian data is supported"));
        }
        let dims: [usize; 3] = m.parse_triple("dims")?;
        let vs: [f64; 3] = m.parse_triple("voxel_size_mm")?;
        let grid = VoxelGrid::new(dims, vs).map_err(|e| Error::bundle("dims", e.to_string()))?;
        let n_samples: usize = m.parse("n_samples")?;

        let read = |key: &str, default: &str| -> Result<Vec<u8>> {
            let name = m.get_opt(key).unwrap_or(default);
            fs::read(dir.join(name)).map_err(|e| Error::bundle(key, e.to_string()))
        };
        let check = |key: &str, bytes: &[u8]| -> Result<()> {
            if let Some(sum) = m.get_opt(key) {
                if sum != sha256_hex(bytes) {
                    return Err(Error::bundle(key, "checksum mismatch"));
                }
            }
            Ok(())
        };

        let mask_bytes = read("mask_file", MASK_FILE)?;
        check("sha256_mask", &mask_bytes)?;
        if mask_bytes.len() != grid.n_voxels() {
            return Err(Error::bundle(
                "mask_file",
                format!("{} bytes for {} voxels", mask_bytes.len(), grid.n_voxels()),
            ));
        }
        let mask = BrainMask::new(grid.clone(), mask_bytes.iter().map(|&b| b != 0).collect())
            .map_err(|e| Error::bundle("mask_file", e.to_string()))?;
        if let Some(n) = m.get_opt("n_masked") {
            if n.parse::<usize>().ok() != Some(mask.n_masked()) {
                return Err(Error::bundle("n_masked", format!("manifest says {n}, mask has {}", mask.n_masked())));
            }
        }

        let sample_bytes = read("samples_file", SAMPLES_FILE)?;
        check("sha256_samples", &sample_bytes)?;
        let expected = n_samples * grid.n_voxels() * 4;
        if sample_bytes.len() != expected {
            return Err(Error::bundle(
                "n_samples",
                format!(
                    "manifest implies {expected} bytes ({n_samples} samples), array holds {}",
                    sample_bytes.len()
                ),
            ));
        }
        let data: Vec<f32> = sample_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let stack = SampleStack::new(dims, n_samples, data)?;

        let trials = if m.get_opt("trials_file").is_some() {
            let bytes = read("trials_file", TRIALS_FILE)?;
            check("sha256_trials", &bytes)?;
            let t = parse_trials(&bytes)?;
            if t.len() != n_samples {
                return Err(Error::bundle(
                    "n_samples",
                    format!("manifest says {n_samples}, trial table has {} rows", t.len()),
                ));
            }
            for dom in [Domain::Source, Domain::Target] {
                let key = format!("n_{dom}");
                if let Some(v) = m.get_opt(&key) {
                    if v.parse::<usize>().ok() != Some(t.count(dom)) {
                        return Err(Error::bundle(&key, format!("manifest says {v}, trial table has {}", t.count(dom))));
                    }
                }
                let key = format!("prevalence_{dom}");
                if let (Some(v), Some(p)) = (m.get_opt(&key), t.prevalence(dom)) {
                    let claimed: f64 = v.parse().map_err(|_| Error::bundle(&key, "not a number"))?;
                    // the manifest stores six decimals
                    if (claimed - p).abs() > 5e-7 + 1e-12 {
                        return Err(Error::bundle(&key, format!("manifest says {v}, trial table gives {p:.6}")));
                    }
                }
            }
            Some(t)
        } else {
            None
        };
        Ok(VolumeBundle {
            manifest: m,
            mask,
            stack,
            trials,
        })
    }
}

pub fn write_dataset(ds: &SubjectDataset, dir: &Path, extra: &Manifest) -> Result<()> {
    let mut manifest = extra.clone();
    manifest.set("kind", "dataset");
    VolumeBundle {
        manifest,
        mask: ds.mask.clone(),
        stack: ds.samples.clone(),
        trials: Some(ds.trials.clone()),
    }
    .write(dir)
}

pub fn read_dataset(dir: &Path) -> Result<SubjectDataset> {
    let b = VolumeBundle::read(dir)?;
    if b.manifest.get_opt("kind").is_some_and(|k| k != "dataset") {
        return Err(Error::bundle("kind", "not a dataset bundle"));
    }
    let trials = b.trials.ok_or_else(|| Error::bundle("trials_file", "dataset bundle has no trial table"))?;
    SubjectDataset::new(b.mask, b.stack, trials)
}

/// SHA-256 of a bundle's manifest, which pins every data file through its
/// checksums.
pub fn bundle_fingerprint(dir: &Path) -> Result<String> {
    let bytes = fs::read(dir.join(MANIFEST_FILE)).map_err(|e| Error::bundle(MANIFEST_FILE, e.to_string()))?;
    Ok(sha256_hex(&bytes))
}
