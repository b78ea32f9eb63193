//! Acceptance gate. Each criterion prints one `PASS` / `FAIL` line and then
//! asserts, so `cargo test --test acceptance -- --nocapture` shows the whole
//! scorecard.

use mgmt_cli::pipeline::crossval_table;
use mgmt_cli::split::kfold;
use mgmt_cli::synth::{synth_subject, ToySpec};
use mgmt_core::cls_metrics::{
    basic_rates, brier, confusion, logit_nll, macro_f1, roc_auc, sigmoid, temperature_scale, Scored, ScoredCohort,
};
use mgmt_core::fusion::{deserialize, serialize, train_gbm, GbmConfig};
use mgmt_core::nifti::{read_nifti, write_nifti, Datatype, Endianness, NiftiHeader};
use mgmt_core::preprocess::{
    canonicalize_labels, correct_bias, extract_brain, preprocess_subject, probability_channels, LabelVolume, Modality,
    PreprocessParams,
};
use mgmt_core::radiomics::{
    extract_features, fractal_dimension, glcm_features, gldm_features, glrlm_features, glszm_features,
    ngtdm_features, DiscretizedRoi, FeatureTable, FeatureVector, RadiomicsParams,
};
use mgmt_core::seg_math::{
    boundary_regularizer, cross_entropy, dice_eval, ensemble_loss, hd95, macro_dice, ramp, seg_loss,
    soft_dice_loss, softmax_logits, ClassTensor, OneHotTarget, RampSchedule, Region,
};
use mgmt_core::{BinaryMask, CohortRow, CohortTable, Exec, Volume3D};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::time::Instant;

fn verdict(name: &str, ok: bool, detail: String) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

fn cv(v: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = v.collect();
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt() / m
}

#[test]
fn bias_correction_efficacy() {
    let t0 = Instant::now();
    let mut worst_red: f64 = 1.0;
    let mut worst_ratio: f64 = 0.0;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centre = [0, 1, 2].map(|_| rng.gen_range(30.0..66.0));
        let b = Volume3D::from_fn([64; 3], [1.5; 3], |z, y, x| {
            let p = [z, y, x].map(|v| (v as f64 + 0.5) * 1.5);
            let r2: f64 = (0..3).map(|a| (p[a] - centre[a]).powi(2)).sum();
            (1.0 + 0.8 * (-r2 / (2.0 * 30.0f64.powi(2))).exp()) as f32
        })
        .unwrap();
        let c = 32.0;
        let brain = BinaryMask::from_fn([64; 3], [1.5; 3], |z, y, x| {
            let r2 = ((z as f64 + 0.5 - c) / 26.0).powi(2) + ((y as f64 + 0.5 - c) / 28.0).powi(2)
                + ((x as f64 + 0.5 - c) / 24.0).powi(2);
            r2 <= 1.0
        })
        .unwrap();
        let truth = Volume3D::from_fn([64; 3], [1.5; 3], |z, y, x| {
            if brain.get(z, y, x) { 100.0 * (1.0 + 0.02 * rng.gen_range(-1.0f32..1.0)) } else { 0.0 }
        })
        .unwrap();
        let obs = Volume3D::new([64; 3], [1.5; 3], truth.data().iter().zip(b.data()).map(|(t, b)| t * b).collect()).unwrap();
        let mask = extract_brain(&obs).unwrap();
        let corr = correct_bias(&obs, &mask).unwrap();
        let inside = |v: &Volume3D| -> Vec<f64> {
            v.data().iter().zip(brain.data()).filter(|(_, &m)| m).map(|(&x, _)| x as f64).collect()
        };
        let before = cv(inside(&obs).into_iter());
        let after = cv(inside(&corr).into_iter());
        let ratio = cv(inside(&corr).into_iter().zip(inside(&truth)).map(|(c, t)| c / t));
        println!("  phantom {seed}: CV {before:.4} -> {after:.4}, ratio CV {ratio:.4}");
        worst_red = worst_red.min(1.0 - after / before);
        worst_ratio = worst_ratio.max(ratio);
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        "bias-correction efficacy",
        worst_red >= 0.5 && worst_ratio <= 0.05 && secs < 30.0,
        format!("min CV reduction {:.1}%, max ratio CV {worst_ratio:.4}, {secs:.1} s", 100.0 * worst_red),
    );
}

#[test]
fn preprocessing_invariants() {
    let t0 = Instant::now();
    let params = PreprocessParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut range_bad, mut grid_bad, mut pad_bad, mut part_bad, mut nest_bad) = (0usize, 0usize, 0usize, 0usize, 0usize);
    let (mut sides_unclamped, mut sides_clamped) = (0usize, 0usize);
    for k in 0..50u64 {
        let dims = [0, 1, 2].map(|_| rng.gen_range(24..52usize));
        let toy = ToySpec { dims, spacing: [rng.gen_range(0.9..1.6), 1.0, 1.0], ..ToySpec::default() };
        let raw = synth_subject(&format!("P{k:02}"), (k % 2) as u8, &toy, 500 + k);
        let p = preprocess_subject(&raw, &params).unwrap();
        let b = &p.bundle;
        for m in Modality::ALL {
            let v = b.modality(m);
            grid_bad += usize::from(v.dims() != [160; 3]);
            range_bad += v.data().iter().filter(|x| !(0.0..=1.0).contains(*x)).count();
        }
        grid_bad += usize::from(b.labels.dims() != [160; 3]);

        // padding against the raw tumour box
        let tb = raw.labels.tumor_mask().bounding_box().unwrap();
        for a in 0..3 {
            if tb.lo[a] >= 12 {
                sides_unclamped += 1;
                pad_bad += usize::from(p.roi.lo[a] != tb.lo[a] - 12);
            } else {
                sides_clamped += 1;
                pad_bad += usize::from(p.roi.lo[a] != 0);
            }
            if tb.hi[a] + 12 < dims[a] {
                sides_unclamped += 1;
                pad_bad += usize::from(p.roi.hi[a] != tb.hi[a] + 12);
            } else {
                sides_clamped += 1;
                pad_bad += usize::from(p.roi.hi[a] != dims[a] - 1);
            }
        }

        // partition: every voxel in exactly one of BG, ET, TC \ ET, WT \ TC
        let c = canonicalize_labels(&b.labels);
        for (i, &l) in b.labels.data().iter().enumerate() {
            let (et, tc, wt, bg) = (c.et.data()[i], c.tc.data()[i], c.wt.data()[i], c.bg.data()[i]);
            let classes = [bg, et, tc && !et, wt && !tc].iter().filter(|&&x| x).count();
            let expect = (l == 4, l == 1 || l == 4, l != 0, l == 0);
            part_bad += usize::from(classes != 1 || (et, tc, wt, bg) != expect || (et && !tc) || (tc && !wt));
        }

        // nesting on the synthesized maps and on random class posteriors
        let s = &p.soft;
        for i in 0..s.et.len() {
            nest_bad += usize::from(!(s.et.data()[i] <= s.tc.data()[i] && s.tc.data()[i] <= s.wt.data()[i]));
        }
        let g = [6, 6, 6];
        let mut probs: [Vec<f32>; 4] = Default::default();
        for _ in 0..216 {
            let z: [f64; 4] = [0, 1, 2, 3].map(|_| rng.gen_range(-4.0..4.0));
            let e = z.map(f64::exp);
            let t: f64 = e.iter().sum();
            for c in 0..4 {
                probs[c].push((e[c] / t) as f32);
            }
        }
        let probs = probs.map(|d| Volume3D::new(g, [1.0; 3], d).unwrap());
        let ch = probability_channels(&probs).unwrap();
        for i in 0..216 {
            nest_bad += usize::from(!(ch.et.data()[i] <= ch.tc.data()[i] && ch.tc.data()[i] <= ch.wt.data()[i]));
        }
    }
    let ok = range_bad + grid_bad + pad_bad + part_bad + nest_bad == 0 && sides_unclamped > 0 && sides_clamped > 0;
    verdict(
        "preprocessing invariants",
        ok,
        format!(
            "50 subjects; out-of-range {range_bad}, grid {grid_bad}, padding {pad_bad} ({sides_unclamped} unclamped / {sides_clamped} clamped sides), partition {part_bad}, nesting {nest_bad}; {:.1} s",
            t0.elapsed().as_secs_f64()
        ),
    );
}

// ------------------------------------------------------------ oracle helpers

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn idx(d: [usize; 3], p: [usize; 3]) -> usize {
    (p[0] * d[1] + p[1]) * d[2] + p[2]
}

fn all_coords(d: [usize; 3]) -> Vec<[usize; 3]> {
    let mut v = Vec::new();
    for z in 0..d[0] {
        for y in 0..d[1] {
            for x in 0..d[2] {
                v.push([z, y, x]);
            }
        }
    }
    v
}

fn shift(d: [usize; 3], p: [usize; 3], o: [isize; 3]) -> Option<[usize; 3]> {
    let mut q = [0; 3];
    for a in 0..3 {
        let v = p[a] as isize + o[a];
        if v < 0 || v >= d[a] as isize {
            return None;
        }
        q[a] = v as usize;
    }
    Some(q)
}

fn neighbours26() -> Vec<[isize; 3]> {
    let mut v = Vec::new();
    for z in -1..=1 {
        for y in -1..=1 {
            for x in -1..=1 {
                if (z, y, x) != (0, 0, 0) {
                    v.push([z, y, x]);
                }
            }
        }
    }
    v
}

const FACES: [[isize; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

fn naive_percentile(sorted: &[f64], q: f64) -> f64 {
    let r = q * (sorted.len() - 1) as f64;
    let lo = r.floor() as usize;
    let hi = r.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (r - lo as f64)
}

fn naive_surface(m: &[bool], d: [usize; 3]) -> Vec<[usize; 3]> {
    all_coords(d)
        .into_iter()
        .filter(|&p| m[idx(d, p)] && FACES.iter().any(|&o| shift(d, p, o).map_or(true, |q| !m[idx(d, q)])))
        .collect()
}

fn naive_hd95(a: &[bool], b: &[bool], d: [usize; 3], sp: [f64; 3]) -> Option<f64> {
    if !a.contains(&true) || !b.contains(&true) {
        return None;
    }
    let (sa, sb) = (naive_surface(a, d), naive_surface(b, d));
    let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| {
        let mut v: Vec<f64> = from
            .iter()
            .map(|p| {
                to.iter()
                    .map(|q| (0..3).map(|k| ((p[k] as f64 - q[k] as f64) * sp[k]).powi(2)).sum::<f64>().sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        v.sort_by(f64::total_cmp);
        naive_percentile(&v, 0.95)
    };
    Some(directed(&sa, &sb).max(directed(&sb, &sa)))
}

// ------------------------------------------------------------------ metrics

#[test]
fn metric_oracle_equivalence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let codes = [0u8, 1, 2, 4];
    let (mut dice_bad, mut hd_bad, mut hd_defined) = (0, 0, 0);
    for _ in 0..200 {
        let d = [0, 1, 2].map(|_| rng.gen_range(2..8usize));
        let sp = [0, 1, 2].map(|_| rng.gen_range(0.5..2.0f32) as f64);
        let n: usize = d.iter().product();
        let density = rng.gen_range(0.0..1.0);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<u8> {
            (0..n).map(|_| if rng.gen_bool(density) { codes[rng.gen_range(1..4)] } else { 0 }).collect()
        };
        let (pl, tl) = (draw(&mut rng), draw(&mut rng));
        let pv = LabelVolume::new(d, sp, pl.clone()).unwrap();
        let tv = LabelVolume::new(d, sp, tl.clone()).unwrap();
        let members: [fn(u8) -> bool; 3] = [|l| l == 4, |l| l == 1 || l == 4, |l| l != 0];
        let mut sum = 0.0;
        for (r, member) in Region::ALL.iter().zip(members) {
            let a: Vec<bool> = pl.iter().map(|&l| member(l)).collect();
            let b: Vec<bool> = tl.iter().map(|&l| member(l)).collect();
            let (na, nb) = (a.iter().filter(|&&x| x).count(), b.iter().filter(|&&x| x).count());
            let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
            let want = match (na, nb) {
                (0, 0) => 1.0,
                (0, _) | (_, 0) => 0.0,
                _ => 2.0 * inter as f64 / ((na + nb) as f64 + 1e-6),
            };
            let got = dice_eval(&pv, &tv, *r).unwrap();
            dice_bad += usize::from(!close(got, want, 1e-9));
            sum += want;

            let ma = BinaryMask::new(d, sp, a.clone()).unwrap();
            let mb = BinaryMask::new(d, sp, b.clone()).unwrap();
            let got = hd95(&ma, &mb).unwrap();
            let want = naive_hd95(&a, &b, d, sp);
            hd_defined += usize::from(want.is_some());
            hd_bad += usize::from(match (got, want) {
                (Some(g), Some(w)) => (g - w).abs() > 1e-6,
                (None, None) => false,
                _ => true,
            });
        }
        dice_bad += usize::from(!close(macro_dice(&pv, &tv).unwrap(), sum / 3.0, 1e-9));
    }

    let (mut auc_bad, mut rate_bad, mut f1_bad, mut brier_bad) = (0, 0, 0, 0);
    for _ in 0..200 {
        let n = rng.gen_range(2..60);
        let mut items: Vec<Scored> = (0..n)
            .map(|_| {
                let prob = rng.gen_range(0..11) as f64 / 10.0;
                Scored { y: rng.gen_range(0..2), score: rng.gen_range(0..8) as f64, prob }
            })
            .collect();
        items[0].y = 1;
        items[1].y = 0;
        let c = ScoredCohort::new(items.clone());
        let (mut twice, mut p, mut q) = (0u64, 0u64, 0u64);
        for a in &items {
            if a.y == 1 {
                p += 1;
            } else {
                q += 1;
            }
            for b in &items {
                if a.y == 1 && b.y == 0 {
                    twice += if a.score > b.score { 2 } else if a.score == b.score { 1 } else { 0 };
                }
            }
        }
        auc_bad += usize::from(roc_auc(&c).unwrap() != twice as f64 / (2 * p * q) as f64);

        let thr = rng.gen_range(0..11) as f64 / 10.0;
        let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for s in &items {
            let pred = s.prob >= thr;
            match (pred, s.y) {
                (true, 1) => tp += 1,
                (true, _) => fp += 1,
                (false, 1) => fn_ += 1,
                _ => tn += 1,
            }
        }
        let cm = confusion(&c, thr);
        let r = basic_rates(&cm);
        let frac = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        rate_bad += usize::from(
            (cm.tp, cm.tn, cm.fp, cm.fn_) != (tp, tn, fp, fn_)
                || r.accuracy != frac(tp + tn, n as u64)
                || r.tpr != frac(tp, tp + fn_)
                || r.tnr != frac(tn, tn + fp)
                || r.fpr != frac(fp, fp + tn)
                || r.precision != frac(tp, tp + fp),
        );
        let f1 = |tp: u64, fp: u64, fn_: u64| if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        let want_f1 = (f1(tp, fp, fn_) + f1(tn, fn_, fp)) / 2.0;
        f1_bad += usize::from(!close(macro_f1(&cm), want_f1, 1e-12));

        let want_brier = items.iter().rev().map(|s| (s.prob - s.y as f64) * (s.prob - s.y as f64)).sum::<f64>() / n as f64;
        brier_bad += usize::from(!close(brier(&c).unwrap(), want_brier, 1e-9));
    }
    let secs = t0.elapsed().as_secs_f64();
    let bad = dice_bad + hd_bad + auc_bad + rate_bad + f1_bad + brier_bad;
    verdict(
        "metric oracle equivalence",
        bad == 0 && secs < 60.0,
        format!(
            "200 instances each; mismatches dice {dice_bad}, hd95 {hd_bad} ({hd_defined} defined), auc {auc_bad}, rates {rate_bad}, macro-F1 {f1_bad}, brier {brier_bad}; {secs:.1} s"
        ),
    );
}

// ------------------------------------------------------------------- losses

#[test]
fn loss_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = [4usize; 3];
    let n = 64;
    let sched = RampSchedule::default();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let ch: [Vec<f64>; 4] = std::array::from_fn(|_| (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect());
        let classes: Vec<u8> = (0..n).map(|_| if rng.gen_bool(0.5) { 0 } else { rng.gen_range(1..4) }).collect();
        let z = ClassTensor::new(d, ch.clone()).unwrap();
        let y = OneHotTarget::new(d, classes.clone()).unwrap();

        let probs: Vec<[f64; 4]> = (0..n)
            .map(|i| {
                let e = [0, 1, 2, 3].map(|c| ch[c][i].exp());
                let s: f64 = e.iter().sum();
                e.map(|v| v / s)
            })
            .collect();
        let ce = probs.iter().zip(&classes).map(|(p, &c)| -p[c as usize].ln()).sum::<f64>() / n as f64;
        let mut dice = 0.0;
        for c in 1..4 {
            let inter: f64 = (0..n).filter(|&i| classes[i] == c as u8).map(|i| probs[i][c]).sum();
            let sp: f64 = probs.iter().map(|p| p[c]).sum();
            let sy = classes.iter().filter(|&&k| k == c as u8).count() as f64;
            dice += (2.0 * inter + 1e-6) / (sp + sy + 1e-6);
        }
        let dice = 1.0 - dice / 3.0;
        let fg: Vec<bool> = classes.iter().map(|&c| c > 0).collect();
        let boundary = all_coords(d)
            .into_iter()
            .filter(|&p| {
                let me = fg[idx(d, p)];
                let dil = me || FACES.iter().any(|&o| shift(d, p, o).is_some_and(|q| fg[idx(d, q)]));
                let ero = me && FACES.iter().all(|&o| shift(d, p, o).is_some_and(|q| fg[idx(d, q)]));
                dil && !ero
            })
            .count() as f64
            / n as f64;
        let e = rng.gen_range(0.0..120.0);
        let lam = if e >= 100.0 { 0.3 } else { 0.3 * (1.0 - (std::f64::consts::PI * e / 100.0).cos()) / 2.0 };

        let p = softmax_logits(&z);
        for i in 0..n {
            for c in 0..4 {
                worst = worst.max((p.at(c, i) - probs[i][c]).abs());
            }
        }
        worst = worst.max((cross_entropy(&z, &y).unwrap() - ce).abs());
        worst = worst.max((soft_dice_loss(&p, &y).unwrap() - dice).abs());
        worst = worst.max((boundary_regularizer(&y) - boundary).abs());
        worst = worst.max((ramp(e, &sched) - lam).abs());
        worst = worst.max((seg_loss(&z, &y, e, &sched).unwrap() - (ce + dice + lam * boundary)).abs());

        let heads: Vec<f64> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(0.01..0.99)).collect();
        let label = rng.gen_range(0..2u8);
        let k = heads.len() as f64;
        let mean = heads.iter().sum::<f64>() / k;
        let bce: f64 = heads.iter().map(|&h| if label == 1 { -h.ln() } else { -(1.0 - h).ln() }).sum();
        let var = heads.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / k;
        let kl = |p: f64, q: f64| p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
        let jsd = heads.iter().map(|&h| kl(h, mean)).sum::<f64>() / k;
        worst = worst.max((ensemble_loss(&heads, label, 0.7, 1.3) - (bce + 0.7 * var + 1.3 * jsd)).abs());
    }
    let ends = ramp(0.0, &sched) == 0.0 && ramp(sched.epochs, &sched) == 0.3;
    verdict(
        "loss formulas",
        worst <= 1e-9 && ends,
        format!("50 random 4^3 tensors, max abs error {worst:.2e}; ramp(0) = {}, ramp(E) = {}", ramp(0.0, &sched), ramp(sched.epochs, &sched)),
    );
}

// ---------------------------------------------------------------- radiomics

struct Brute {
    d: [usize; 3],
    lv: Vec<u32>,
}

impl Brute {
    fn at(&self, p: [usize; 3]) -> u32 {
        self.lv[idx(self.d, p)]
    }

    fn voxels(&self) -> Vec<[usize; 3]> {
        all_coords(self.d).into_iter().filter(|&p| self.at(p) > 0).collect()
    }

    fn ng(&self) -> usize {
        *self.lv.iter().max().unwrap() as usize
    }

    fn directions() -> Vec<[isize; 3]> {
        neighbours26().into_iter().filter(|o| o.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0)).collect()
    }

    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        parent[i] = r;
        r
    }

    /// Sizes of the components linking equal-level voxels through `offs`,
    /// grouped by level.
    fn components(&self, offs: &[[isize; 3]]) -> Vec<(u32, usize)> {
        let n = self.lv.len();
        let mut parent: Vec<usize> = (0..n).collect();
        for p in self.voxels() {
            for &o in offs {
                if let Some(q) = shift(self.d, p, o) {
                    if self.at(q) == self.at(p) {
                        let (a, b) = (Self::find(&mut parent, idx(self.d, p)), Self::find(&mut parent, idx(self.d, q)));
                        parent[a] = b;
                    }
                }
            }
        }
        let mut sizes = std::collections::BTreeMap::new();
        for p in self.voxels() {
            let r = Self::find(&mut parent, idx(self.d, p));
            sizes.entry(r).or_insert((self.at(p), 0usize)).1 += 1;
        }
        sizes.into_values().collect()
    }

    fn size_stats(groups: &[(u32, usize)], ng: usize) -> [f64; 4] {
        let n = groups.len() as f64;
        let sre = groups.iter().map(|&(_, s)| 1.0 / (s * s) as f64).sum::<f64>() / n;
        let lre = groups.iter().map(|&(_, s)| (s * s) as f64).sum::<f64>() / n;
        let gln = (1..=ng as u32).map(|g| (groups.iter().filter(|e| e.0 == g).count() as f64).powi(2)).sum::<f64>() / n;
        let max = groups.iter().map(|e| e.1).max().unwrap();
        let sn = (1..=max).map(|s| (groups.iter().filter(|e| e.1 == s).count() as f64).powi(2)).sum::<f64>() / n;
        [sre, lre, gln, sn]
    }

    fn glcm(&self) -> Vec<f64> {
        let ng = self.ng();
        let mut per = Vec::new();
        for o in Self::directions() {
            let mut m = vec![vec![0.0; ng]; ng];
            for p in self.voxels() {
                if let Some(q) = shift(self.d, p, o) {
                    let (a, b) = (self.at(p) as usize, self.at(q) as usize);
                    if b > 0 {
                        m[a - 1][b - 1] += 1.0;
                        m[b - 1][a - 1] += 1.0;
                    }
                }
            }
            let t: f64 = m.iter().flatten().sum();
            if t == 0.0 {
                continue;
            }
            let pm: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|c| c / t).collect()).collect();
            let px: Vec<f64> = pm.iter().map(|r| r.iter().sum()).collect();
            let mu: f64 = px.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum();
            let var: f64 = px.iter().enumerate().map(|(i, p)| ((i + 1) as f64 - mu).powi(2) * p).sum();
            let mut f = [0.0; 6];
            for i in 0..ng {
                for j in 0..ng {
                    let p = pm[i][j];
                    let dd = i.abs_diff(j) as f64;
                    f[0] += p * dd * dd;
                    f[1] += p * dd;
                    f[2] += p / (1.0 + dd);
                    f[3] += p * p;
                    if p > 0.0 {
                        f[4] -= p * p.log2();
                    }
                    f[5] += ((i + 1) as f64 - mu) * ((j + 1) as f64 - mu) * p;
                }
            }
            f[5] = if var > 0.0 { f[5] / var } else { 0.0 };
            per.push(f);
        }
        if per.is_empty() {
            return vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        }
        (0..6).map(|k| per.iter().map(|f| f[k]).sum::<f64>() / per.len() as f64).collect()
    }

    fn glrlm(&self) -> Vec<f64> {
        let np = self.voxels().len() as f64;
        let dirs = Self::directions();
        let mut acc = [0.0; 5];
        for o in &dirs {
            let runs = self.components(&[*o]);
            let s = Self::size_stats(&runs, self.ng());
            for k in 0..4 {
                acc[k] += s[k];
            }
            acc[4] += runs.len() as f64 / np;
        }
        acc.iter().map(|v| v / dirs.len() as f64).collect()
    }

    fn glszm(&self) -> Vec<f64> {
        let zones = self.components(&neighbours26());
        let [sze, lze, gln, _] = Self::size_stats(&zones, self.ng());
        vec![sze, lze, zones.len() as f64 / self.voxels().len() as f64, gln]
    }

    fn gldm(&self) -> Vec<f64> {
        let vox = self.voxels();
        let n = vox.len() as f64;
        let deps: Vec<(u32, usize)> = vox
            .iter()
            .map(|&p| {
                let k = neighbours26().into_iter().filter(|&o| shift(self.d, p, o).is_some_and(|q| self.at(q) == self.at(p))).count();
                (self.at(p), k + 1)
            })
            .collect();
        let [sde, lde, _, dn] = Self::size_stats(&deps, self.ng());
        let mut cells = std::collections::BTreeMap::new();
        for e in &deps {
            *cells.entry(*e).or_insert(0.0) += 1.0;
        }
        let de = cells.values().map(|c: &f64| -(c / n) * (c / n).log2()).sum();
        vec![sde, lde, dn, de]
    }

    fn ngtdm(&self) -> Vec<f64> {
        let ng = self.ng();
        let (mut cnt, mut s) = (vec![0.0; ng], vec![0.0; ng]);
        for p in self.voxels() {
            let nb: Vec<f64> =
                neighbours26().into_iter().filter_map(|o| shift(self.d, p, o)).map(|q| self.at(q)).filter(|&l| l > 0).map(f64::from).collect();
            if nb.is_empty() {
                continue;
            }
            let a = self.at(p) as usize;
            cnt[a - 1] += 1.0;
            s[a - 1] += (a as f64 - nb.iter().sum::<f64>() / nb.len() as f64).abs();
        }
        let nvp: f64 = cnt.iter().sum();
        if nvp == 0.0 {
            return vec![1e6, 0.0, 0.0, 0.0, 0.0];
        }
        let lv: Vec<usize> = (0..ng).filter(|&i| cnt[i] > 0.0).collect();
        let p = |i: usize| cnt[i] / nvp;
        let g = |i: usize| (i + 1) as f64;
        let ngp = lv.len() as f64;
        let ps: f64 = lv.iter().map(|&i| p(i) * s[i]).sum();
        let ssum: f64 = lv.iter().map(|&i| s[i]).sum();
        let coarse = if ps > 0.0 { (1.0 / ps).min(1e6) } else { 1e6 };
        let (mut c1, mut b1, mut x1, mut t1) = (0.0, 0.0, 0.0, 0.0);
        for &i in &lv {
            for &j in &lv {
                c1 += p(i) * p(j) * (g(i) - g(j)).powi(2);
                b1 += (g(i) * p(i) - g(j) * p(j)).abs();
                x1 += (g(i) - g(j)).abs() * (p(i) * s[i] + p(j) * s[j]) / (p(i) + p(j));
                t1 += (p(i) + p(j)) * (g(i) - g(j)).powi(2);
            }
        }
        let contrast = if ngp > 1.0 { c1 / (ngp * (ngp - 1.0)) * ssum / nvp } else { 0.0 };
        let busy = if b1 > 0.0 { ps / b1 } else { 0.0 };
        let strength = if ssum > 0.0 { t1 / ssum } else { 0.0 };
        vec![coarse, contrast, busy, x1 / nvp, strength]
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs() + 1e-12
}

#[test]
fn radiomics_texture_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = Vec::new();
    let mut checked = 0;
    for case in 0..20 {
        let d = [0, 1, 2].map(|_| rng.gen_range(1..=6usize));
        let n: usize = d.iter().product();
        let ng = rng.gen_range(1..=5u32);
        let density = rng.gen_range(0.3..1.0);
        let mut lv: Vec<u32> = (0..n).map(|_| if rng.gen_bool(density) { rng.gen_range(1..=ng) } else { 0 }).collect();
        if !lv.iter().any(|&l| l > 0) {
            lv[0] = 1;
        }
        let roi = DiscretizedRoi::from_levels(d, [1.0; 3], lv.clone()).unwrap();
        let b = Brute { d, lv };
        let fams: [(&str, FeatureVector, Vec<f64>); 5] = [
            ("glcm", glcm_features(&roi), b.glcm()),
            ("glrlm", glrlm_features(&roi), b.glrlm()),
            ("glszm", glszm_features(&roi), b.glszm()),
            ("gldm", gldm_features(&roi), b.gldm()),
            ("ngtdm", ngtdm_features(&roi), b.ngtdm()),
        ];
        for (fam, got, want) in fams {
            assert_eq!(got.len(), want.len(), "{fam} feature count");
            for (f, w) in got.features.iter().zip(&want) {
                checked += 1;
                if !rel_close(f.value, *w, 1e-9) {
                    bad.push(format!("case {case} {}: {} vs {}", f.name, f.value, w));
                }
            }
        }
    }
    verdict(
        "radiomics texture oracle",
        bad.is_empty(),
        format!("20 ROIs, {checked} values, {} outside 1e-9 relative {:?}", bad.len(), bad.iter().take(3).collect::<Vec<_>>()),
    );
}

fn random_lesion(rng: &mut ChaCha8Rng, d: [usize; 3], margin: usize) -> (Volume3D, BinaryMask) {
    let vol = Volume3D::from_fn(d, [2.0; 3], |_, _, _| rng.gen_range(0.0..1.0f32)).unwrap();
    let c = d.map(|n| n as f64 / 2.0);
    let r = [0, 1, 2].map(|a| (d[a] - 2 * margin) as f64 / 2.0);
    let mask = BinaryMask::from_fn(d, [2.0; 3], |z, y, x| {
        let p = [z, y, x];
        let q: f64 = (0..3).map(|a| ((p[a] as f64 + 0.5 - c[a]) / r[a]).powi(2)).sum();
        q <= 1.0 && (p[0] + 2 * p[1] + 3 * p[2]) % 7 != 0
    })
    .unwrap();
    (vol, mask)
}

#[test]
fn radiomics_invariance_and_fractal() {
    let params = RadiomicsParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut trans_bad, mut perm_bad) = (0, 0);
    for _ in 0..3 {
        let d = [rng.gen_range(10..16), rng.gen_range(10..16), rng.gen_range(10..16)];
        let (vol, mask) = random_lesion(&mut rng, d, 2);
        let (base, _) = extract_features(&vol, &mask, &params).unwrap();
        assert_eq!(base.len(), 43);

        let t = [0, 1, 2].map(|_| rng.gen_range(1..6usize));
        let big = [0, 1, 2].map(|a| d[a] + t[a] + rng.gen_range(0..4));
        let src = vol.data().to_vec();
        let tvol = Volume3D::from_fn(big, [2.0; 3], |z, y, x| {
            let (sz, sy, sx) = (z.wrapping_sub(t[0]), y.wrapping_sub(t[1]), x.wrapping_sub(t[2]));
            if sz < d[0] && sy < d[1] && sx < d[2] {
                src[idx(d, [sz, sy, sx])]
            } else {
                0.5
            }
        })
        .unwrap();
        let tmask = BinaryMask::from_fn(big, [2.0; 3], |z, y, x| {
            let (sz, sy, sx) = (z.wrapping_sub(t[0]), y.wrapping_sub(t[1]), x.wrapping_sub(t[2]));
            sz < d[0] && sy < d[1] && sx < d[2] && mask.get(sz, sy, sx)
        })
        .unwrap();
        let (moved, _) = extract_features(&tvol, &tmask, &params).unwrap();
        trans_bad += base.values().iter().zip(moved.values()).filter(|(a, b)| a.to_bits() != b.to_bits()).count();

        let mut perm = [0usize, 1, 2];
        while perm == [0, 1, 2] {
            perm.shuffle(&mut rng);
        }
        // output axis a reads source axis perm[a]
        let pd = perm.map(|a| d[a]);
        let from = |z: usize, y: usize, x: usize| {
            let o = [z, y, x];
            let mut s = [0usize; 3];
            for a in 0..3 {
                s[perm[a]] = o[a];
            }
            s
        };
        let pvol = Volume3D::from_fn(pd, [2.0; 3], |z, y, x| src[idx(d, from(z, y, x))]).unwrap();
        let pmask = BinaryMask::from_fn(pd, [2.0; 3], |z, y, x| {
            let s = from(z, y, x);
            mask.get(s[0], s[1], s[2])
        })
        .unwrap();
        let (permuted, _) = extract_features(&pvol, &pmask, &params).unwrap();
        perm_bad += base.values().iter().zip(permuted.values()).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    }
    let cube = BinaryMask::full([64; 3], [1.0; 3]).unwrap();
    let plane = BinaryMask::from_fn([64; 3], [1.0; 3], |z, _, _| z == 32).unwrap();
    let (fc, fp) = (fractal_dimension(&cube), fractal_dimension(&plane));
    verdict(
        "radiomics invariance",
        trans_bad == 0 && perm_bad == 0,
        format!("3 lesions x 43 features; {trans_bad} differ after translation, {perm_bad} after axis permutation"),
    );
    verdict(
        "box-counting dimension",
        (2.8..=3.0).contains(&fc) && (1.8..=2.2).contains(&fp),
        format!("cube {fc:.3}, plane {fp:.3}"),
    );
}

// ---------------------------------------------------------------------- gbm

fn benchmark_cohort(rng: &mut ChaCha8Rng, n: usize) -> (FeatureTable, Vec<u8>, CohortTable) {
    let names: Vec<String> = (0..10).map(|j| format!("x{j}")).collect();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let x: Vec<f64> = (0..10).map(|_| StandardNormal.sample(rng)).collect();
        y.push(u8::from(x[0] + x[1] + x[2] + x[3] > 0.0));
        rows.push((format!("S{i:03}"), x));
    }
    let cohort = CohortTable {
        rows: rows
            .iter()
            .zip(&y)
            .map(|((id, _), &label)| CohortRow { subject_id: id.clone(), label, split: None })
            .collect(),
        excluded: 0,
    };
    (FeatureTable { names, rows }, y, cohort)
}

fn fold_vector(table: &FeatureTable, cohort: &CohortTable, k: usize) -> Vec<usize> {
    let split = kfold(cohort, k, 42).unwrap();
    table.rows.iter().map(|(id, _)| split.folds[id]).collect()
}

#[test]
fn gbm_benchmark() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (table, y, cohort) = benchmark_cohort(&mut rng, 400);
    let gbm = GbmConfig::default();
    let folds = fold_vector(&table, &cohort, 5);
    let (rep, _) = crossval_table(&table, &y, &folds, 5, &gbm, 42).unwrap();
    let auc = rep.mean.roc_auc.unwrap();

    let x: Vec<Vec<f64>> = table.rows.iter().map(|r| r.1.clone()).collect();
    let (_, log) = train_gbm(&x, &y, &gbm, Exec::default()).unwrap();
    let monotone = log.losses.windows(2).all(|w| w[1] <= w[0]);

    let mut shuffled = y.clone();
    shuffled.shuffle(&mut rng);
    let (null, _) = crossval_table(&table, &shuffled, &folds, 5, &gbm, 42).unwrap();
    let null_auc = null.mean.roc_auc.unwrap();
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        "gbm synthetic benchmark",
        auc >= 0.95 && monotone && (0.35..=0.65).contains(&null_auc) && secs < 120.0,
        format!(
            "5-fold AUC {auc:.4} (sd {:.4}); training loss nonincreasing over {} rounds: {monotone}; permuted-label AUC {null_auc:.4}; {secs:.1} s",
            rep.std.roc_auc.unwrap_or(f64::NAN),
            log.losses.len() - 1
        ),
    );
}

// -------------------------------------------------------------- calibration

#[test]
fn temperature_calibration() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worse, mut auc_changed) = (0, 0);
    let mut temps = Vec::new();
    for _ in 0..50 {
        let n = rng.gen_range(40..200);
        let scale = rng.gen_range(0.3..4.0);
        let mut labels = Vec::with_capacity(n);
        let mut logits = Vec::with_capacity(n);
        for i in 0..n {
            let y = (i % 2) as u8;
            let noise: f64 = StandardNormal.sample(&mut rng);
            labels.push(y);
            logits.push(scale * ((y as f64 - 0.5) * 1.5 + noise));
        }
        let t = temperature_scale(&logits, &labels).unwrap();
        temps.push(t);
        worse += usize::from(logit_nll(&logits, &labels, t) > logit_nll(&logits, &labels, 1.0));
        let score = |f: &dyn Fn(f64) -> f64| {
            ScoredCohort::new(logits.iter().zip(&labels).map(|(&l, &y)| Scored { y, score: f(l), prob: sigmoid(l / t) }).collect())
        };
        let raw = roc_auc(&score(&|l| l)).unwrap();
        let cal = roc_auc(&score(&|l| sigmoid(l / t))).unwrap();
        auc_changed += usize::from(raw != cal);
    }
    temps.sort_by(f64::total_cmp);
    verdict(
        "temperature calibration",
        worse == 0 && auc_changed == 0,
        format!(
            "50 cohorts, T* in [{:.3}, {:.3}]; NLL higher than at T=1 in {worse}; AUC changed in {auc_changed}",
            temps[0],
            temps[49]
        ),
    );
}

// -------------------------------------------------------------- determinism

fn tree_bytes(root: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn run_determinism() {
    use mgmt_cli::pipeline;
    use mgmt_cli::synth::write_toy_cohort;
    use mgmt_cli::PipelineConfig;

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_toy_cohort(&data, 12, &ToySpec::default(), 11).unwrap();
    let run = |name: &str, jobs: usize| -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.data_dir = data.clone();
        cfg.cache_dir = dir.path().join(name).join("cache");
        cfg.output_dir = dir.path().join(name).join("out");
        cfg.preprocess.grid = [32; 3];
        cfg.gbm.n_rounds = 40;
        cfg.split.folds = 3;
        cfg.jobs = jobs;
        assert!(pipeline::run_preprocess(&cfg).unwrap().ok());
        assert!(pipeline::run_features(&cfg).unwrap().ok());
        pipeline::run_train(&cfg).unwrap();
        pipeline::run_crossval(&cfg).unwrap();
        pipeline::run_report(&cfg).unwrap();
        cfg
    };
    let a = run("a", 1);
    let b = run("b", 2);
    let (ta, tb) = (tree_bytes(dir.path().join("a").as_path()), tree_bytes(dir.path().join("b").as_path()));
    let differing: Vec<&String> = ta.keys().filter(|k| tb.get(*k) != ta.get(*k)).collect();
    let same_set = ta.keys().eq(tb.keys());

    let payload = std::fs::read(a.model_path().join("model.gbm")).unwrap();
    let model = deserialize(&payload).unwrap();
    let again = serialize(&model);
    let reread = deserialize(&again).unwrap();
    let x: Vec<f64> = (0..model.min_features().max(1)).map(|j| (j as f64 * 0.37).sin()).collect();
    let bit_exact = reread == model
        && again == payload
        && model.predict_margin(&x).unwrap().to_bits() == reread.predict_margin(&x).unwrap().to_bits();
    let _ = b;
    verdict(
        "run determinism",
        same_set && differing.is_empty() && bit_exact && ta.len() > 20,
        format!(
            "{} files compared between jobs=1 and jobs=2, {} differ {:?}; model round trip bit-exact: {bit_exact}",
            ta.len(),
            differing.len(),
            differing.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

// -------------------------------------------------------------------- nifti

fn gzip(bytes: &[u8]) -> Vec<u8> {
    use std::io::Write;
    let mut e = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
    e.write_all(bytes).unwrap();
    e.finish().unwrap()
}

fn no_panic_err(bytes: &[u8]) -> Result<bool, ()> {
    std::panic::catch_unwind(|| read_nifti(bytes).is_err()).map_err(|_| ())
}

#[test]
fn nifti_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let types = [Datatype::Uint8, Datatype::Int16, Datatype::Float32, Datatype::Float64];
    let mut round_bad = 0;
    let mut valid = Vec::new();
    for i in 0..100 {
        let d = [0, 1, 2].map(|_| rng.gen_range(1..10usize));
        let sp = [0, 1, 2].map(|_| rng.gen_range(0.5..3.0f32) as f64);
        let dt = types[i % 4];
        let vol = Volume3D::from_fn(d, sp, |_, _, _| match dt {
            Datatype::Uint8 => rng.gen_range(0..=255) as f32,
            Datatype::Int16 => rng.gen_range(-32768..=32767) as f32,
            _ => rng.gen_range(-1e4..1e4f32),
        })
        .unwrap();
        let mut h = NiftiHeader::for_volume(&vol);
        h.datatype = dt;
        h.endianness = if rng.gen_bool(0.5) { Endianness::Big } else { Endianness::Little };
        let raw = write_nifti(&h, &vol).unwrap();
        let bytes = if i % 3 == 0 { gzip(&raw) } else { raw.clone() };
        match read_nifti(&bytes) {
            Ok((hh, v)) => {
                round_bad += usize::from(
                    v.dims() != vol.dims()
                        || v.spacing() != vol.spacing()
                        || hh.datatype != dt
                        || hh.endianness != h.endianness
                        || v.data().iter().zip(vol.data()).any(|(a, b)| a.to_bits() != b.to_bits()),
                );
            }
            Err(_) => round_bad += 1,
        }
        valid.push((raw, h.endianness));
    }

    let put16 = |b: &mut Vec<u8>, at: usize, v: i16, e: Endianness| {
        let x = if e == Endianness::Big { v.to_be_bytes() } else { v.to_le_bytes() };
        b[at..at + 2].copy_from_slice(&x);
    };
    let put32 = |b: &mut Vec<u8>, at: usize, v: f32, e: Endianness| {
        let x = if e == Endianness::Big { v.to_be_bytes() } else { v.to_le_bytes() };
        b[at..at + 4].copy_from_slice(&x);
    };
    let (mut accepted, mut panicked) = (0, 0);
    for c in 0..1000 {
        let (base, e) = &valid[rng.gen_range(0..valid.len())];
        let e = *e;
        let mut b = base.clone();
        match c % 10 {
            0 => b.truncate(rng.gen_range(0..348)),
            1 => b[0..4].copy_from_slice(&rng.gen_range(349..100000i32).to_le_bytes()),
            2 => b[344 + rng.gen_range(0..3)] ^= 0x20,
            3 => put16(&mut b, 40, *[0i16, 5, 6, 7, 8, -1].choose(&mut rng).unwrap(), e),
            4 => put16(&mut b, 42 + 2 * rng.gen_range(0..3), rng.gen_range(-5..=0), e),
            5 => put32(&mut b, 80 + 4 * rng.gen_range(0..3), *[0.0f32, -1.0, f32::NAN, f32::INFINITY].choose(&mut rng).unwrap(), e),
            6 => put16(&mut b, 70, *[0i16, 1, 8, 32, 128, 256, 512, 768].choose(&mut rng).unwrap(), e),
            7 => put32(&mut b, 108, *[0.0f32, 100.0, 351.0, 352.5, f32::NAN, -352.0].choose(&mut rng).unwrap(), e),
            8 => {
                let keep = rng.gen_range(348..b.len());
                b.truncate(keep);
            }
            _ => {
                let z = gzip(&b);
                b = z[..rng.gen_range(0..z.len() - 8)].to_vec();
            }
        }
        match no_panic_err(&b) {
            Ok(true) => {}
            Ok(false) => accepted += 1,
            Err(()) => panicked += 1,
        }
    }

    let mut flip_panics = 0;
    for _ in 0..1000 {
        let (base, _) = &valid[rng.gen_range(0..valid.len())];
        let mut b = base.clone();
        for _ in 0..rng.gen_range(1..8) {
            let at = rng.gen_range(0..b.len());
            b[at] = rng.gen();
        }
        flip_panics += usize::from(no_panic_err(&b).is_err());
    }
    verdict(
        "nifti fuzz",
        round_bad == 0 && accepted == 0 && panicked == 0 && flip_panics == 0,
        format!(
            "100 round trips, {round_bad} mismatched; 1000 corruptions, {accepted} accepted, {panicked} panicked; 1000 random byte edits, {flip_panics} panicked"
        ),
    );
}
