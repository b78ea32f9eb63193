//! Subject discovery, the preprocessing cache and its manifest.

use crate::io::{read_json, sha256_file, sha256_hex, write_bytes, write_json};
use anyhow::{anyhow, bail, Context, Result};
use mgmt_core::nifti::{read_nifti_file, write_nifti, Datatype, NiftiHeader};
use mgmt_core::preprocess::{preprocess_subject, LabelVolume, PreprocessParams, PreprocessedSubject, SubjectBundle};
use mgmt_core::Volume3D;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const INPUT_NAMES: [&str; 5] = ["flair", "t1", "t1ce", "t2", "seg"];
pub const OUTPUT_NAMES: [&str; 8] = ["flair", "t1", "t1ce", "t2", "labels", "p_et", "p_tc", "p_wt"];
pub const MANIFEST: &str = "manifest.json";

/// Input files of one subject, `.nii` preferred over `.nii.gz`.
pub fn discover(data_dir: &Path, id: &str) -> Result<BTreeMap<String, PathBuf>> {
    let dir = data_dir.join(id);
    if !dir.is_dir() {
        bail!("no subject directory {}", dir.display());
    }
    INPUT_NAMES
        .iter()
        .map(|&name| {
            let path = ["nii", "nii.gz"]
                .iter()
                .map(|ext| dir.join(format!("{name}.{ext}")))
                .find(|p| p.is_file())
                .ok_or_else(|| anyhow!("{id}: missing {name}.nii[.gz]"))?;
            Ok((name.to_string(), path))
        })
        .collect()
}

pub fn load_subject(id: &str, files: &BTreeMap<String, PathBuf>) -> Result<SubjectBundle> {
    let read = |name: &str| -> Result<Volume3D> {
        let p = &files[name];
        Ok(read_nifti_file(p).with_context(|| format!("{id}: {}", p.display()))?.1)
    };
    Ok(SubjectBundle {
        subject_id: id.to_string(),
        flair: read("flair")?,
        t1: read("t1")?,
        t1ce: read("t1ce")?,
        t2: read("t2")?,
        labels: LabelVolume::from_volume(&read("seg")?).with_context(|| format!("{id}: seg"))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub status: EntryStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// File name to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// SHA-256 of the preprocessing parameters the entries were built with.
    pub params_sha256: String,
    pub subjects: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub fn load(cache_dir: &Path) -> Option<Self> {
        read_json(&cache_dir.join(MANIFEST)).ok()
    }

    pub fn ok_subjects(&self) -> impl Iterator<Item = &str> {
        self.subjects.iter().filter(|(_, e)| e.status == EntryStatus::Ok).map(|(k, _)| k.as_str())
    }
}

pub fn params_hash(params: &PreprocessParams) -> String {
    sha256_hex(serde_json::to_string(params).expect("params serialize").as_bytes())
}

pub fn cached_path(cache_dir: &Path, id: &str, name: &str) -> PathBuf {
    cache_dir.join(id).join(format!("{name}.nii"))
}

pub fn load_cached(cache_dir: &Path, id: &str, name: &str) -> Result<Volume3D> {
    let p = cached_path(cache_dir, id, name);
    Ok(read_nifti_file(&p).with_context(|| format!("{id}: {}", p.display()))?.1)
}

/// An unchanged entry: same inputs, and every output present with its
/// recorded hash.
pub fn is_fresh(cache_dir: &Path, id: &str, entry: &ManifestEntry, inputs: &BTreeMap<String, String>) -> bool {
    entry.status == EntryStatus::Ok
        && &entry.inputs == inputs
        && entry.outputs.len() == OUTPUT_NAMES.len()
        && entry
            .outputs
            .iter()
            .all(|(name, h)| sha256_file(&cached_path(cache_dir, id, name)).map(|x| &x == h).unwrap_or(false))
}

/// Writes the eight cached volumes and returns their hashes.
pub fn write_cached(cache_dir: &Path, p: &PreprocessedSubject) -> Result<BTreeMap<String, String>> {
    let b = &p.bundle;
    let id = &b.subject_id;
    let labels = b.labels.to_volume();
    let vols: [(&str, &Volume3D); 8] = [
        ("flair", &b.flair),
        ("t1", &b.t1),
        ("t1ce", &b.t1ce),
        ("t2", &b.t2),
        ("labels", &labels),
        ("p_et", &p.soft.et),
        ("p_tc", &p.soft.tc),
        ("p_wt", &p.soft.wt),
    ];
    let mut out = BTreeMap::new();
    for (name, v) in vols {
        let mut hdr = NiftiHeader::for_volume(v);
        if name == "labels" {
            hdr.datatype = Datatype::Uint8;
        }
        let bytes = write_nifti(&hdr, v)?;
        write_bytes(&cached_path(cache_dir, id, name), &bytes, false)?;
        out.insert(name.to_string(), sha256_hex(&bytes));
    }
    Ok(out)
}

/// Preprocesses one subject from its input files into the cache.
pub fn build_entry(
    cache_dir: &Path,
    id: &str,
    files: &BTreeMap<String, PathBuf>,
    inputs: BTreeMap<String, String>,
    params: &PreprocessParams,
) -> ManifestEntry {
    let run = || -> Result<BTreeMap<String, String>> {
        let raw = load_subject(id, files)?;
        let p = preprocess_subject(&raw, params).with_context(|| format!("{id}: preprocessing"))?;
        write_cached(cache_dir, &p)
    };
    match run() {
        Ok(outputs) => ManifestEntry { status: EntryStatus::Ok, error: None, inputs, outputs },
        Err(e) => failed_entry(inputs, &e),
    }
}

pub fn failed_entry(inputs: BTreeMap<String, String>, e: &anyhow::Error) -> ManifestEntry {
    ManifestEntry { status: EntryStatus::Failed, error: Some(format!("{e:#}")), inputs, outputs: BTreeMap::new() }
}

pub fn hash_inputs(files: &BTreeMap<String, PathBuf>) -> Result<BTreeMap<String, String>> {
    files.iter().map(|(k, p)| Ok((k.clone(), sha256_file(p)?))).collect()
}

pub fn save_manifest(cache_dir: &Path, m: &Manifest) -> Result<()> {
    write_json(&cache_dir.join(MANIFEST), m)
}
