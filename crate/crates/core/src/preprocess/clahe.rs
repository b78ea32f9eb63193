//! Contrast-limited adaptive histogram equalization on axial slices,
//! restricted to a region mask.

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClaheParams {
    /// Clip limit as a fraction of the tile pixel count.
    pub clip_limit: f64,
    /// Tiles per slice axis.
    pub tiles: usize,
    pub bins: usize,
    /// Slices whose in-region range is below this are left untouched.
    pub min_range: f64,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            clip_limit: 0.01,
            tiles: 8,
            bins: 256,
            min_range: 1e-6,
        }
    }
}

struct TileGrid {
    starts: Vec<usize>,
    centres: Vec<f64>,
}

impl TileGrid {
    fn new(n: usize, tiles: usize) -> Self {
        let t = tiles.clamp(1, n);
        let starts: Vec<usize> = (0..=t).map(|k| k * n / t).collect();
        let centres = (0..t)
            .map(|k| (starts[k] + starts[k + 1] - 1) as f64 / 2.0)
            .collect();
        Self { starts, centres }
    }

    fn len(&self) -> usize {
        self.centres.len()
    }

    /// Neighbouring tile pair and the weight of the second one.
    fn blend(&self, i: usize) -> (usize, usize, f64) {
        let p = i as f64;
        let n = self.len();
        if n == 1 || p <= self.centres[0] {
            return (0, 0, 0.0);
        }
        if p >= self.centres[n - 1] {
            return (n - 1, n - 1, 0.0);
        }
        let k = self.centres.partition_point(|&c| c <= p) - 1;
        let t = (p - self.centres[k]) / (self.centres[k + 1] - self.centres[k]);
        (k, k + 1, t)
    }
}

/// Equalizes one `h x w` slice in place. Values must lie in `[0, 1]`;
/// only pixels with `region[i]` are read and written.
pub fn clahe_slice(slice: &mut [f32], region: &[bool], h: usize, w: usize, p: &ClaheParams) {
    let (lo, hi) = slice
        .iter()
        .zip(region)
        .filter(|(_, &r)| r)
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || ((hi - lo) as f64) < p.min_range {
        return;
    }
    let gy = TileGrid::new(h, p.tiles);
    let gx = TileGrid::new(w, p.tiles);
    let bins = p.bins.max(2);
    let bin_of = |v: f32| ((v.clamp(0.0, 1.0) as f64 * bins as f64) as usize).min(bins - 1);

    let mut maps: Vec<Option<Vec<f64>>> = Vec::with_capacity(gy.len() * gx.len());
    for ty in 0..gy.len() {
        for tx in 0..gx.len() {
            let mut hist = vec![0.0f64; bins];
            let mut n = 0usize;
            for y in gy.starts[ty]..gy.starts[ty + 1] {
                for x in gx.starts[tx]..gx.starts[tx + 1] {
                    let i = y * w + x;
                    if region[i] {
                        hist[bin_of(slice[i])] += 1.0;
                        n += 1;
                    }
                }
            }
            if n == 0 {
                maps.push(None);
                continue;
            }
            let area = ((gy.starts[ty + 1] - gy.starts[ty]) * (gx.starts[tx + 1] - gx.starts[tx])) as f64;
            let clip = (p.clip_limit * area).max(1.0);
            let mut excess = 0.0;
            for b in hist.iter_mut() {
                if *b > clip {
                    excess += *b - clip;
                    *b = clip;
                }
            }
            let bonus = excess / bins as f64;
            let mut acc = 0.0;
            let mut cdf: Vec<f64> = hist
                .iter()
                .map(|&b| {
                    acc += b + bonus;
                    acc
                })
                .collect();
            cdf.iter_mut().for_each(|c| *c /= acc);
            maps.push(Some(cdf));
        }
    }

    let apply = |t: usize, v: f32| -> f64 {
        match &maps[t] {
            Some(cdf) => cdf[bin_of(v)],
            None => v as f64,
        }
    };
    let ntx = gx.len();
    for y in 0..h {
        let (y0, y1, wy) = gy.blend(y);
        for x in 0..w {
            let i = y * w + x;
            if !region[i] {
                continue;
            }
            let v = slice[i];
            let (x0, x1, wx) = gx.blend(x);
            let top = (1.0 - wx) * apply(y0 * ntx + x0, v) + wx * apply(y0 * ntx + x1, v);
            let bot = (1.0 - wx) * apply(y1 * ntx + x0, v) + wx * apply(y1 * ntx + x1, v);
            slice[i] = ((1.0 - wy) * top + wy * bot).clamp(0.0, 1.0) as f32;
        }
    }
}
