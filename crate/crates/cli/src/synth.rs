//! Synthetic subjects in the on-disk data layout, for tests and demos.

use anyhow::Result;
use mgmt_core::nifti::{write_nifti, Datatype, NiftiHeader};
use mgmt_core::preprocess::{LabelVolume, SubjectBundle};
use mgmt_core::{CohortColumns, CohortRow, CohortTable, Volume3D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Peak amplitude of the multiplicative Gaussian bias field.
    pub bias: f64,
    /// Relative standard deviation of the voxel noise.
    pub noise: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self { dims: [28, 32, 32], spacing: [1.5, 1.2, 1.2], bias: 0.4, noise: 0.04 }
    }
}

/// `B(p) = 1 + a · exp(-|p - c|² / 2σ²)` with σ of 60% of the field of view.
pub fn bias_field(toy: &ToySpec, centre: [f64; 3]) -> Volume3D {
    let fov: Vec<f64> = (0..3).map(|a| toy.dims[a] as f64 * toy.spacing[a]).collect();
    let sigma = 0.6 * fov.iter().cloned().fold(0.0, f64::max);
    Volume3D::from_fn(toy.dims, toy.spacing, |z, y, x| {
        let p = [z, y, x];
        let r2: f64 = (0..3).map(|a| ((p[a] as f64 + 0.5) * toy.spacing[a] - centre[a]).powi(2)).sum();
        (1.0 + toy.bias * (-r2 / (2.0 * sigma * sigma)).exp()) as f32
    })
    .expect("valid grid")
}

/// Ellipsoidal brain with a three-layer tumor. Methylated subjects get a
/// fine checkerboard texture in the enhancing rim and a brighter core.
pub fn synth_subject(id: &str, label: u8, toy: &ToySpec, seed: u64) -> SubjectBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = toy.dims.map(|v| v as f64);
    let c = [d[0] / 2.0, d[1] / 2.0, d[2] / 2.0];
    let semi = [0.42 * d[0], 0.42 * d[1], 0.42 * d[2]];
    let rmin = d.iter().cloned().fold(f64::MAX, f64::min);
    let r_et = rmin * rng.gen_range(0.14..0.19);
    let r_ncr = r_et * 0.5;
    let r_ed = r_et * 1.5;
    let tc = [0, 1, 2].map(|a| c[a] + rng.gen_range(-0.08..0.08) * d[a]);
    let bias_c = [0, 1, 2].map(|a| rng.gen_range(0.2..0.8) * d[a] * toy.spacing[a]);
    let bias = bias_field(toy, bias_c);
    let noise = Normal::new(0.0, toy.noise).expect("valid sigma");

    let n: usize = toy.dims.iter().product();
    let mut labels = vec![0u8; n];
    let mut brain = vec![false; n];
    for z in 0..toy.dims[0] {
        for y in 0..toy.dims[1] {
            for x in 0..toy.dims[2] {
                let i = (z * toy.dims[1] + y) * toy.dims[2] + x;
                let p = [z as f64 + 0.5, y as f64 + 0.5, x as f64 + 0.5];
                let e: f64 = (0..3).map(|a| ((p[a] - c[a]) / semi[a]).powi(2)).sum();
                brain[i] = e <= 1.0;
                let r = (0..3).map(|a| (p[a] - tc[a]).powi(2)).sum::<f64>().sqrt();
                labels[i] = if !brain[i] {
                    0
                } else if r < r_ncr {
                    1
                } else if r < r_et {
                    4
                } else if r < r_ed {
                    2
                } else {
                    0
                };
            }
        }
    }
    // tissue, NCR, ED, ET intensities for flair, t1, t1ce, t2
    let table: [[f64; 4]; 4] = [
        [0.45, 0.35, 0.85, 0.6],
        [0.6, 0.3, 0.45, 0.5],
        [0.55, 0.3, 0.5, 0.95],
        [0.4, 0.7, 0.8, 0.6],
    ];
    let boost = if label == 1 { 1.15 } else { 1.0 };
    let mut mods: Vec<Volume3D> = Vec::with_capacity(4);
    for (m, row) in table.iter().enumerate() {
        let mut data = vec![0f32; n];
        for i in 0..n {
            if !brain[i] {
                continue;
            }
            let [z, y, x] = [i / (toy.dims[1] * toy.dims[2]), (i / toy.dims[2]) % toy.dims[1], i % toy.dims[2]];
            let base = match labels[i] {
                1 => row[1] * boost,
                2 => row[2],
                4 if label == 1 && m == 2 => row[3] * if (z + y + x) % 2 == 0 { 1.2 } else { 0.8 },
                4 => row[3],
                _ => row[0],
            };
            let v = base * (1.0 + noise.sample(&mut rng)) * bias.data()[i] as f64;
            data[i] = (1000.0 * v.max(0.01)) as f32;
        }
        mods.push(Volume3D::new(toy.dims, toy.spacing, data).expect("valid grid"));
    }
    let [flair, t1, t1ce, t2]: [Volume3D; 4] = mods.try_into().expect("four modalities");
    SubjectBundle {
        subject_id: id.to_string(),
        flair,
        t1,
        t1ce,
        t2,
        labels: LabelVolume::new(toy.dims, toy.spacing, labels).expect("valid labels"),
    }
}

/// Writes `<dir>/<id>/{flair,t1,t1ce,t2,seg}.nii[.gz]`.
pub fn write_subject(dir: &Path, b: &SubjectBundle, gz: bool) -> Result<()> {
    let sub = dir.join(&b.subject_id);
    std::fs::create_dir_all(&sub)?;
    let ext = if gz { "nii.gz" } else { "nii" };
    let mut seg_hdr = NiftiHeader::for_volume(&b.labels.to_volume());
    seg_hdr.datatype = Datatype::Uint8;
    let items = [
        ("flair", NiftiHeader::for_volume(&b.flair), &b.flair),
        ("t1", NiftiHeader::for_volume(&b.t1), &b.t1),
        ("t1ce", NiftiHeader::for_volume(&b.t1ce), &b.t1ce),
        ("t2", NiftiHeader::for_volume(&b.t2), &b.t2),
    ];
    for (name, hdr, vol) in items {
        crate::io::write_bytes(&sub.join(format!("{name}.{ext}")), &write_nifti(&hdr, vol)?, gz)?;
    }
    let seg = b.labels.to_volume();
    crate::io::write_bytes(&sub.join(format!("seg.{ext}")), &write_nifti(&seg_hdr, &seg)?, gz)?;
    Ok(())
}

/// Writes `n` subjects (alternating labels, every third one gzipped) plus
/// `cohort.csv`, and returns the cohort.
pub fn write_toy_cohort(dir: &Path, n: usize, toy: &ToySpec, seed: u64) -> Result<CohortTable> {
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("TOY{i:03}");
        let label = (i % 2) as u8;
        let b = synth_subject(&id, label, toy, seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
        write_subject(dir, &b, i % 3 == 2)?;
        rows.push(CohortRow { subject_id: id, label, split: None });
    }
    let table = CohortTable { rows, excluded: 0 };
    std::fs::write(dir.join("cohort.csv"), mgmt_core::cohort::write_cohort_csv(&table, &CohortColumns::default()))?;
    Ok(table)
}
