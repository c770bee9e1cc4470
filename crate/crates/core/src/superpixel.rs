//! Superpixel segmentation of a single multiband frame.
//!
//! The segmenter is a deterministic SLIC variant: k-means in a joint
//! spectral/spatial metric, seeded on a regular grid with step `S`, with each
//! center only competing for pixels inside a +/-S window around it. The
//! combined distance is
//!
//! `D = d_spectral + (compactness * scale / S) * d_spatial`
//!
//! where `d_spectral` is the Euclidean distance across bands, `d_spatial` the
//! Euclidean pixel distance, and `scale` the mean absolute sample value of
//! the frame (1 when the frame is identically zero), which makes the
//! spatial/spectral balance invariant to a global rescaling of the data.
//! Ties go to the lowest center index, updates recompute plain means, and no
//! randomness enters anywhere, so equal inputs always give equal labelings.
//!
//! A final connectivity pass guarantees every output segment is 4-connected:
//! stray components whose size is at most `S^2 / 4` are merged into the
//! neighboring component they share the longest boundary with.

use crate::error::{Error, Result};
use crate::formats::Frame;

/// Tuning knobs for [`slic_segment`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelParams {
    /// Grid step `S` (target superpixel side length), `1 <= S <= min(H, W)`.
    pub step: usize,
    /// Relative weight of spatial against spectral distance.
    pub compactness: f64,
    /// Number of assignment/update rounds.
    pub iterations: usize,
}

impl SuperpixelParams {
    pub fn new(step: usize) -> Self {
        SuperpixelParams {
            step,
            compactness: 10.0,
            iterations: 10,
        }
    }

    fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.step == 0 {
            return Err(Error::invalid("superpixel step must be >= 1"));
        }
        if self.step > height.min(width) {
            return Err(Error::invalid(format!(
                "superpixel step {} exceeds min(height, width) = {}",
                self.step,
                height.min(width)
            )));
        }
        if !(self.compactness > 0.0) || !self.compactness.is_finite() {
            return Err(Error::invalid(format!(
                "compactness must be positive and finite, got {}",
                self.compactness
            )));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iteration count must be >= 1"));
        }
        Ok(())
    }
}

/// A partition of the pixel grid into contiguous integer labels `0..K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    segments: usize,
}

impl Labeling {
    /// Labels must cover `0..K` with no gaps.
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dims(format!(
                "labeling dimensions must be positive, got {height}x{width}"
            )));
        }
        let n = height
            .checked_mul(width)
            .ok_or_else(|| Error::dims("labeling dimensions overflow"))?;
        if labels.len() != n {
            return Err(Error::dims(format!(
                "labeling holds {} entries, expected {n}",
                labels.len()
            )));
        }
        let max = *labels.iter().max().expect("non-empty") as usize;
        if max >= n {
            return Err(Error::invalid(format!(
                "label {max} cannot be contiguous over {n} pixels"
            )));
        }
        let mut seen = vec![false; max + 1];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(gap) = seen.iter().position(|&s| !s) {
            return Err(Error::invalid(format!(
                "label ids are not contiguous: id {gap} is unused but {max} appears"
            )));
        }
        Ok(Labeling {
            height,
            width,
            labels,
            segments: max + 1,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Label of flat row-major `pixel`.
    pub fn label(&self, pixel: usize) -> usize {
        self.labels[pixel] as usize
    }

    /// Number of distinct segments `K`.
    pub fn segment_count(&self) -> usize {
        self.segments
    }

    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.segments];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Member pixel ids per segment, each list in ascending order.
    pub fn segment_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.segments];
        for (n, &l) in self.labels.iter().enumerate() {
            members[l as usize].push(n);
        }
        members
    }

    /// True when every segment forms one 4-connected region.
    pub fn is_four_connected(&self) -> bool {
        let comps = connected_components(&self.labels, self.height, self.width);
        let mut seen = vec![false; self.segments];
        for comp in &comps {
            let l = self.labels[comp[0]] as usize;
            if seen[l] {
                return false;
            }
            seen[l] = true;
        }
        true
    }
}

struct Center {
    row: f64,
    col: f64,
    spectrum: Vec<f64>,
}

/// Grid seed coordinates along one axis: `S/2, S/2 + S, ...`.
fn grid_axis(extent: usize, step: usize) -> Vec<usize> {
    (step / 2..extent).step_by(step).collect()
}

/// Segment one frame into compact spectrally homogeneous superpixels.
pub fn slic_segment(frame: &Frame, params: &SuperpixelParams) -> Result<Labeling> {
    let (h, w, l) = (frame.height(), frame.width(), frame.bands());
    params.validate(h, w)?;
    let s = params.step;
    let n = h * w;

    let rows = grid_axis(h, s);
    let cols = grid_axis(w, s);
    let mut centers: Vec<Center> = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            let pixel = r * w + c;
            let spectrum = (0..l).map(|b| frame.value(b, pixel) as f64).collect();
            centers.push(Center {
                row: r as f64,
                col: c as f64,
                spectrum,
            });
        }
    }

    // Scale the spatial weight by the data magnitude so `compactness` means
    // the same thing regardless of the units the bands are expressed in.
    let mean_abs =
        frame.values().iter().map(|v| v.abs() as f64).sum::<f64>() / frame.values().len() as f64;
    let scale = if mean_abs > 0.0 { mean_abs } else { 1.0 };
    let spatial_weight = params.compactness * scale / s as f64;

    let sf = s as f64;
    let mut labels = vec![u32::MAX; n];
    let mut best = vec![f64::INFINITY; n];

    let spectral_dist = |pixel: usize, spectrum: &[f64]| -> f64 {
        let mut acc = 0.0;
        for (b, sv) in spectrum.iter().enumerate() {
            let d = frame.value(b, pixel) as f64 - sv;
            acc += d * d;
        }
        acc.sqrt()
    };
    let combined = |pixel: usize, r: usize, c: usize, center: &Center| -> f64 {
        let dr = r as f64 - center.row;
        let dc = c as f64 - center.col;
        spectral_dist(pixel, &center.spectrum) + spatial_weight * (dr * dr + dc * dc).sqrt()
    };

    for iter in 0..params.iterations {
        best.fill(f64::INFINITY);
        labels.fill(u32::MAX);

        // Assignment: centers compete inside a +/-S window; strict `<` keeps
        // the lowest center index on ties.
        for (k, center) in centers.iter().enumerate() {
            let r_lo = (center.row - sf).ceil().max(0.0) as usize;
            let r_hi = (center.row + sf).floor().min((h - 1) as f64) as usize;
            let c_lo = (center.col - sf).ceil().max(0.0) as usize;
            let c_hi = (center.col + sf).floor().min((w - 1) as f64) as usize;
            for r in r_lo..=r_hi {
                for c in c_lo..=c_hi {
                    let pixel = r * w + c;
                    let d = combined(pixel, r, c, center);
                    if d < best[pixel] {
                        best[pixel] = d;
                        labels[pixel] = k as u32;
                    }
                }
            }
        }

        // Moved centers can in principle leave a pixel outside every window;
        // assign such strays by a full scan under the same metric.
        for pixel in 0..n {
            if labels[pixel] == u32::MAX {
                let (r, c) = (pixel / w, pixel % w);
                for (k, center) in centers.iter().enumerate() {
                    let d = combined(pixel, r, c, center);
                    if d < best[pixel] {
                        best[pixel] = d;
                        labels[pixel] = k as u32;
                    }
                }
            }
        }

        if iter + 1 == params.iterations {
            break;
        }

        // Update: every center moves to the mean of its pixels.
        let mut count = vec![0usize; centers.len()];
        let mut row_sum = vec![0.0f64; centers.len()];
        let mut col_sum = vec![0.0f64; centers.len()];
        let mut spec_sum = vec![0.0f64; centers.len() * l];
        for (pixel, &label) in labels.iter().enumerate() {
            let k = label as usize;
            count[k] += 1;
            row_sum[k] += (pixel / w) as f64;
            col_sum[k] += (pixel % w) as f64;
            for b in 0..l {
                spec_sum[k * l + b] += frame.value(b, pixel) as f64;
            }
        }
        for (k, center) in centers.iter_mut().enumerate() {
            if count[k] == 0 {
                continue; // keep an empty center where it was
            }
            let m = count[k] as f64;
            center.row = row_sum[k] / m;
            center.col = col_sum[k] / m;
            for b in 0..l {
                center.spectrum[b] = spec_sum[k * l + b] / m;
            }
        }
    }

    enforce_connectivity(&labels, h, w, s)
}

/// Connected components (4-adjacency, equal input label), in row-major
/// discovery order; each component's pixel list is ascending.
fn connected_components(labels: &[u32], height: usize, width: usize) -> Vec<Vec<usize>> {
    let n = height * width;
    let mut comp_of = vec![usize::MAX; n];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut queue = Vec::new();
    for start in 0..n {
        if comp_of[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        comp_of[start] = id;
        queue.clear();
        queue.push(start);
        let mut members = vec![start];
        while let Some(p) = queue.pop() {
            let (r, c) = (p / width, p % width);
            let mut visit = |q: usize| {
                if comp_of[q] == usize::MAX && labels[q] == labels[p] {
                    comp_of[q] = id;
                    queue.push(q);
                    members.push(q);
                }
            };
            if r > 0 {
                visit(p - width);
            }
            if r + 1 < height {
                visit(p + width);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < width {
                visit(p + 1);
            }
        }
        members.sort_unstable();
        comps.push(members);
    }
    comps
}

/// Rewrite an arbitrary label image so that every segment is 4-connected,
/// absorbing components of size at most `step^2 / 4` into the neighboring
/// component with the longest shared boundary (ties: lowest component id).
/// Output ids are renumbered contiguously in row-major first-occurrence
/// order. A labeling whose segments are already connected and large enough
/// comes back unchanged up to that renumbering.
pub fn enforce_connectivity(
    labels: &[u32],
    height: usize,
    width: usize,
    step: usize,
) -> Result<Labeling> {
    if height == 0 || width == 0 || labels.len() != height * width {
        return Err(Error::dims(format!(
            "label buffer holds {} entries, expected {height}x{width}",
            labels.len()
        )));
    }
    if step == 0 {
        return Err(Error::invalid("step must be >= 1"));
    }
    let comps = connected_components(labels, height, width);
    let n_comps = comps.len();
    let mut comp_of = vec![0usize; labels.len()];
    for (id, members) in comps.iter().enumerate() {
        for &p in members {
            comp_of[p] = id;
        }
    }

    // Union-find over components; a merged group keeps its representative's
    // original discovery id, which is what tie-breaking compares.
    let mut parent: Vec<usize> = (0..n_comps).collect();
    let mut size: Vec<usize> = comps.iter().map(Vec::len).collect();
    let mut members: Vec<Vec<usize>> = comps;
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    let threshold = step * step; // merge while 4 * size <= step^2
    loop {
        let mut merged_any = false;
        for c in 0..n_comps {
            if find(&mut parent, c) != c || 4 * size[c] > threshold {
                continue;
            }
            // Count boundary edges toward every adjacent group.
            let mut counts: Vec<(usize, usize)> = Vec::new(); // (root, edges)
            for &p in &members[c] {
                let (r, col) = (p / width, p % width);
                let mut tally = |q: usize| {
                    let root = find(&mut parent, comp_of[q]);
                    if root != c {
                        match counts.iter_mut().find(|(g, _)| *g == root) {
                            Some((_, e)) => *e += 1,
                            None => counts.push((root, 1)),
                        }
                    }
                };
                if r > 0 {
                    tally(p - width);
                }
                if r + 1 < height {
                    tally(p + width);
                }
                if col > 0 {
                    tally(p - 1);
                }
                if col + 1 < width {
                    tally(p + 1);
                }
            }
            let Some(&(target, _)) = counts
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            else {
                continue; // the whole image is one component
            };
            parent[c] = target;
            size[target] += size[c];
            let moved = std::mem::take(&mut members[c]);
            members[target].extend(moved);
            merged_any = true;
        }
        if !merged_any {
            break;
        }
    }

    // Contiguous renumbering by row-major first occurrence.
    let mut new_id = vec![u32::MAX; n_comps];
    let mut next = 0u32;
    let mut out = vec![0u32; labels.len()];
    for p in 0..labels.len() {
        let root = find(&mut parent, comp_of[p]);
        if new_id[root] == u32::MAX {
            new_id[root] = next;
            next += 1;
        }
        out[p] = new_id[root];
    }
    Labeling::new(height, width, out)
}

/// Voronoi partition of the pixel grid around the same seed grid SLIC uses,
/// computed in exact integer arithmetic (ties to the lowest center index).
/// This is both the S-step block partition used by the synthetic scenarios
/// and the segmentation limit of SLIC on a constant frame.
pub fn grid_partition(height: usize, width: usize, step: usize) -> Result<Labeling> {
    if height == 0 || width == 0 {
        return Err(Error::dims("grid dimensions must be positive"));
    }
    if step == 0 || step > height.min(width) {
        return Err(Error::invalid(format!(
            "step {step} must lie in 1..=min(height, width) = {}",
            height.min(width)
        )));
    }
    let rows = grid_axis(height, step);
    let cols = grid_axis(width, step);
    let mut labels = vec![0u32; height * width];
    for r in 0..height {
        for c in 0..width {
            let mut best = usize::MAX;
            let mut best_k = 0u32;
            let mut k = 0u32;
            for &cr in &rows {
                for &cc in &cols {
                    let dr = r.abs_diff(cr);
                    let dc = c.abs_diff(cc);
                    let d = dr * dr + dc * dc;
                    if d < best {
                        best = d;
                        best_k = k;
                    }
                    k += 1;
                }
            }
            labels[r * width + c] = best_k;
        }
    }
    // Center indices already appear in row-major order, but renumber anyway
    // so the contiguity invariant never depends on that coincidence.
    let mut remap = std::collections::BTreeMap::new();
    let mut next = 0u32;
    let mut out = vec![0u32; labels.len()];
    for (i, &l) in labels.iter().enumerate() {
        let id = *remap.entry(l).or_insert_with(|| {
            let id = next;
            next += 1;
            id
        });
        out[i] = id;
    }
    Labeling::new(height, width, out)
}
