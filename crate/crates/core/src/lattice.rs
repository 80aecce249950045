//! Approximate high-dimensional Gaussian filtering on a permutohedral lattice.
//!
//! The lattice implements the splat/blur/slice pipeline: input values are
//! projected onto the vertices of the enclosing lattice simplex (splat),
//! convolved along each lattice axis with a small stencil (blur), and
//! interpolated back to the input points (slice). The composite operation
//! approximates
//!
//! ```text
//! out_a = sum_b exp(-0.5 * ||f_a - f_b||^2) * v_b        (self term included)
//! ```
//!
//! in time and memory linear in the number of points. Features must already
//! be scaled so the unit-variance kernel above is the one intended; the
//! `model` module performs that scaling.
//!
//! The blur runs once in forward axis order and once in reverse, and the two
//! results are averaged. Each single-axis pass is a symmetric operator, so
//! the averaged pipeline is exactly self-adjoint, which the solver and the
//! verification suite rely on.
//!
//! [`brute_force_gaussian`] is the exact O(n^2) reference used by tests and
//! small instances; it shares nothing with the lattice path.

use rayon::prelude::*;

use crate::scalar::Scalar;
use crate::{Error, Result};

/// Points to be filtered, one `dim`-vector per point, already kernel-scaled.
#[derive(Debug, Clone)]
pub struct FeatureMatrix<T> {
    dim: usize,
    count: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    /// `data` is point-major: `data[p * dim + c]` is component `c` of point `p`.
    pub fn new(dim: usize, count: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Empty { what: "feature dimension" });
        }
        if count == 0 {
            return Err(Error::Empty { what: "feature points" });
        }
        if data.len() != dim * count {
            return Err(Error::ShapeMismatch {
                expected: dim * count,
                actual: data.len(),
            });
        }
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteFeature {
                    point: i / dim,
                    component: i % dim,
                });
            }
        }
        Ok(Self { dim, count, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn point(&self, p: usize) -> &[T] {
        &self.data[p * self.dim..(p + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

/// Per-point value vectors riding through the filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMatrix<T> {
    channels: usize,
    count: usize,
    data: Vec<T>,
}

impl<T: Scalar> ValueMatrix<T> {
    /// `data` is point-major: `data[p * channels + k]`.
    pub fn new(channels: usize, count: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Empty { what: "value channels" });
        }
        if count == 0 {
            return Err(Error::Empty { what: "value points" });
        }
        if data.len() != channels * count {
            return Err(Error::ShapeMismatch {
                expected: channels * count,
                actual: data.len(),
            });
        }
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    point: i / channels,
                    channel: i % channels,
                });
            }
        }
        Ok(Self {
            channels,
            count,
            data,
        })
    }

    pub fn ones(count: usize) -> Self {
        Self {
            channels: 1,
            count,
            data: vec![T::one(); count],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn row(&self, p: usize) -> &[T] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}

/// Deterministic open-addressing table mapping lattice keys (the first `dim`
/// coordinates of a lattice point) to dense vertex indices in insertion
/// order. Determinism of the indices makes every downstream buffer layout,
/// and therefore every filtered value, reproducible bit for bit.
struct KeyTable {
    dim: usize,
    /// Power-of-two slot array holding `vertex index + 1`, 0 = empty.
    slots: Vec<u32>,
    /// Flat key storage, `dim` entries per vertex, insertion order.
    keys: Vec<i32>,
}

impl KeyTable {
    /// `expected` is an upper-ish estimate of the vertex count, used to
    /// presize the slot array: growing later rehashes every key, which is
    /// the dominant build cost for large inputs.
    fn new(dim: usize, expected: usize) -> Self {
        let slots = (expected * 2).next_power_of_two().max(1 << 12);
        Self {
            dim,
            slots: vec![0; slots],
            keys: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.keys.len() / self.dim
    }

    fn key(&self, idx: usize) -> &[i32] {
        &self.keys[idx * self.dim..(idx + 1) * self.dim]
    }

    #[inline]
    fn hash(key: &[i32]) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for &k in key {
            h ^= k as u32 as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^ (h >> 31)
    }

    fn find(&self, key: &[i32]) -> Option<u32> {
        let mask = self.slots.len() - 1;
        let mut slot = (Self::hash(key) as usize) & mask;
        loop {
            let entry = self.slots[slot];
            if entry == 0 {
                return None;
            }
            if self.key((entry - 1) as usize) == key {
                return Some(entry - 1);
            }
            slot = (slot + 1) & mask;
        }
    }

    fn find_or_insert(&mut self, key: &[i32]) -> u32 {
        if (self.len() + 1) * 3 > self.slots.len() * 2 {
            self.grow();
        }
        let mask = self.slots.len() - 1;
        let mut slot = (Self::hash(key) as usize) & mask;
        loop {
            let entry = self.slots[slot];
            if entry == 0 {
                let idx = self.len() as u32;
                self.keys.extend_from_slice(key);
                self.slots[slot] = idx + 1;
                return idx;
            }
            if self.key((entry - 1) as usize) == key {
                return entry - 1;
            }
            slot = (slot + 1) & mask;
        }
    }

    fn grow(&mut self) {
        let new_cap = self.slots.len() * 2;
        let mask = new_cap - 1;
        let mut slots = vec![0u32; new_cap];
        for idx in 0..self.len() {
            let mut slot = (Self::hash(self.key(idx)) as usize) & mask;
            while slots[slot] != 0 {
                slot = (slot + 1) & mask;
            }
            slots[slot] = idx as u32 + 1;
        }
        self.slots = slots;
    }
}

/// Rows per parallel work unit in the blur and slice loops.
const PAR_BLOCK: usize = 2048;

/// Reusable vertex-sized scratch buffers for [`PermutohedralLattice::filter_into`].
#[derive(Debug, Default)]
pub(crate) struct FilterWorkspace {
    fwd: Vec<f64>,
    rev: Vec<f64>,
    work: Vec<f64>,
}

/// Immutable filtering structure built from a feature embedding.
///
/// Construction is single-writer; afterwards the lattice is read-only and
/// [`filter`](Self::filter) may be called concurrently.
pub struct PermutohedralLattice<T> {
    dim: usize,
    count: usize,
    vertex_count: usize,
    /// Per point, `dim + 1` enclosing-vertex indices.
    offsets: Vec<u32>,
    /// Per point, `dim + 1` barycentric weights (non-negative, sum to 1).
    weights: Vec<T>,
    /// Per axis and vertex, the two blur neighbors stored as `index + 1`
    /// (0 = absent). Layout: `neighbors[axis * vertex_count + v]`.
    neighbors: Vec<[u32; 2]>,
    /// Result of filtering the all-ones value, kept in double precision so
    /// normalized filtering of a constant reproduces it exactly.
    norm: Vec<f64>,
}

/// Builds the lattice for a feature embedding.
///
/// Cost and memory are O(n * d). The construction is deterministic: the same
/// features produce bit-identical tables. Non-finite features are rejected
/// (with the offending point index) when the [`FeatureMatrix`] is created.
pub fn build_lattice<T: Scalar>(features: &FeatureMatrix<T>) -> PermutohedralLattice<T> {
    let d = features.dim();
    let dp1 = d + 1;
    let n = features.count();

    // Feature scaling onto the hyperplane lattice. The blur contributes
    // variance (d+1)^2/2 per axis and splat/slice interpolation adds
    // (d+1)^2/6, so scaling features by sqrt(2/3)(d+1) makes the composite
    // kernel unit-variance in the original feature units.
    let inv_std_dev = (2.0f64 / 3.0).sqrt() * dp1 as f64;
    let scale: Vec<f64> = (0..d)
        .map(|i| inv_std_dev / (((i + 1) * (i + 2)) as f64).sqrt())
        .collect();

    // Populated vertex counts rarely exceed the point count on real feature
    // clouds, and an oversized slot array is itself a cache liability; the
    // table still grows if the estimate is low.
    let mut table = KeyTable::new(d, n);
    let mut offsets = vec![0u32; n * dp1];
    let mut weights = vec![T::zero(); n * dp1];

    let mut elevated = vec![0.0f64; dp1];
    let mut rem0 = vec![0.0f64; dp1];
    let mut rank = vec![0i32; dp1];
    let mut bary = vec![0.0f64; dp1 + 1];
    let mut key = vec![0i32; d];

    for p in 0..n {
        let feat = features.point(p);

        // Embed into the hyperplane sum(x) = 0 in d+1 dimensions.
        let mut sm = 0.0f64;
        for j in (1..=d).rev() {
            let cf = feat[j - 1].wide() * scale[j - 1];
            elevated[j] = sm - j as f64 * cf;
            sm += cf;
        }
        elevated[0] = sm;

        // Round to the nearest remainder-zero lattice point.
        let down = 1.0 / dp1 as f64;
        let mut sum = 0i64;
        for i in 0..dp1 {
            let v = elevated[i] * down;
            let up_r = v.ceil() * dp1 as f64;
            let down_r = v.floor() * dp1 as f64;
            let r = if up_r - elevated[i] < elevated[i] - down_r {
                up_r
            } else {
                down_r
            };
            rem0[i] = r;
            sum += (r * down).round() as i64;
        }

        // Rank residuals to identify the enclosing simplex.
        rank.iter_mut().for_each(|r| *r = 0);
        for i in 0..d {
            let di = elevated[i] - rem0[i];
            for j in (i + 1)..dp1 {
                if di < elevated[j] - rem0[j] {
                    rank[i] += 1;
                } else {
                    rank[j] += 1;
                }
            }
        }

        // If the rounded point left the plane, walk it back.
        for i in 0..dp1 {
            rank[i] += sum as i32;
            if rank[i] < 0 {
                rank[i] += dp1 as i32;
                rem0[i] += dp1 as f64;
            } else if rank[i] > d as i32 {
                rank[i] -= dp1 as i32;
                rem0[i] -= dp1 as f64;
            }
        }

        // Barycentric coordinates inside the simplex.
        bary.iter_mut().for_each(|b| *b = 0.0);
        for i in 0..dp1 {
            let v = (elevated[i] - rem0[i]) * down;
            let r = (d as i32 - rank[i]) as usize;
            bary[r] += v;
            bary[r + 1] -= v;
        }
        bary[0] += 1.0 + bary[dp1];

        // Register the d+1 enclosing vertices.
        for r in 0..dp1 {
            for i in 0..d {
                let canonical = if rank[i] <= (d - r) as i32 {
                    r as i32
                } else {
                    r as i32 - dp1 as i32
                };
                key[i] = rem0[i] as i32 + canonical;
            }
            offsets[p * dp1 + r] = table.find_or_insert(&key);
            weights[p * dp1 + r] = T::narrow(bary[r]);
        }
    }

    // Blur adjacency: along each of the d+1 axes, the neighbors of a vertex
    // differ by -1 in every stored coordinate except +d in the axis one (the
    // implied last coordinate keeps the sum at zero).
    let m = table.len();
    let mut neighbors = vec![[0u32; 2]; dp1 * m];
    let mut nkey = vec![0i32; d];
    for axis in 0..dp1 {
        for v in 0..m {
            let k = table.key(v);
            for dir in 0..2 {
                let step = if dir == 0 { -1 } else { 1 };
                for i in 0..d {
                    nkey[i] = k[i] + step;
                }
                if axis < d {
                    nkey[axis] = k[axis] - step * d as i32;
                }
                neighbors[axis * m + v][dir] =
                    table.find(&nkey).map(|idx| idx + 1).unwrap_or(0);
            }
        }
    }

    let mut lattice = PermutohedralLattice {
        dim: d,
        count: n,
        vertex_count: m,
        offsets,
        weights,
        neighbors,
        norm: Vec::new(),
    };

    // Normalization vector: the filtered all-ones value.
    let mut norm = vec![0.0f64; n];
    lattice.filter_interleaved(&vec![T::one(); n], 1, &mut norm, &mut FilterWorkspace::default());
    debug_assert!(norm.iter().all(|&x| x > 0.0));
    lattice.norm = norm;
    lattice
}

impl<T: Scalar> PermutohedralLattice<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Number of populated lattice vertices (the down-sampled graph size).
    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    /// Approximate Gaussian filtering of `values`.
    ///
    /// With `normalize` set, each output row is divided component-wise by the
    /// filtered all-ones vector, so constants are preserved. Cost is
    /// O(n * (d + c)).
    pub fn filter(&self, values: &ValueMatrix<T>, normalize: bool) -> Result<ValueMatrix<T>> {
        let out = self.filter_raw(values.as_slice(), values.channels(), normalize)?;
        let data = out.iter().map(|&x| T::narrow(x)).collect();
        ValueMatrix::new(values.channels(), values.count(), data)
    }

    /// Filter raw point-major storage, returning the double-precision result
    /// before narrowing. The solver consumes this to keep message arithmetic
    /// in f64 end to end.
    pub(crate) fn filter_raw(
        &self,
        values: &[T],
        channels: usize,
        normalize: bool,
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0f64; values.len()];
        let mut ws = FilterWorkspace::default();
        self.filter_into(values, channels, normalize, &mut out, &mut ws)?;
        Ok(out)
    }

    /// As [`filter_raw`], writing into caller-owned buffers so iterated
    /// callers avoid reallocating the vertex-sized scratch space.
    pub(crate) fn filter_into(
        &self,
        values: &[T],
        channels: usize,
        normalize: bool,
        out: &mut [f64],
        ws: &mut FilterWorkspace,
    ) -> Result<()> {
        if channels == 0 || values.len() != channels * self.count || out.len() != values.len() {
            return Err(Error::CountMismatch {
                expected: self.count,
                actual: if channels == 0 { 0 } else { values.len() / channels },
            });
        }
        self.filter_interleaved(values, channels, out, ws);
        if normalize {
            out.par_chunks_mut(channels)
                .zip(self.norm.par_iter())
                .for_each(|(row, nv)| {
                    for v in row {
                        *v /= nv;
                    }
                });
        }
        Ok(())
    }

    /// Splat/blur/slice with all channels interleaved per vertex, so every
    /// random vertex access touches one contiguous row. Accumulation is in
    /// f64 and the result is independent of the worker-thread count.
    fn filter_interleaved(&self, input: &[T], c: usize, out: &mut [f64], ws: &mut FilterWorkspace) {
        let dp1 = self.dim + 1;
        let m = self.vertex_count;
        // Vertex rows are offset by one: row 0 is a permanently-zero sink
        // for absent blur neighbors.
        let len = (m + 1) * c;
        ws.fwd.clear();
        ws.fwd.resize(len, 0.0);
        let splat = &mut ws.fwd;
        for p in 0..self.count {
            let row = &input[p * c..(p + 1) * c];
            for r in 0..dp1 {
                let o = self.offsets[p * dp1 + r] as usize + 1;
                let w = self.weights[p * dp1 + r].wide();
                let dst = &mut splat[o * c..(o + 1) * c];
                for (d, v) in dst.iter_mut().zip(row) {
                    *d += w * v.wide();
                }
            }
        }

        // Forward and reverse axis orders are each other's adjoints; their
        // average makes the whole filter exactly self-adjoint. The splat
        // lives in `fwd` and is copied once for the reverse chain.
        ws.rev.clear();
        ws.rev.extend_from_slice(&ws.fwd);
        ws.work.resize(len, 0.0);
        let (fwd, rev, work) = (&mut ws.fwd, &mut ws.rev, &mut ws.work);
        for axis in 0..dp1 {
            self.blur_pass(axis, c, fwd, work);
            std::mem::swap(fwd, work);
        }
        for axis in (0..dp1).rev() {
            self.blur_pass(axis, c, rev, work);
            std::mem::swap(rev, work);
        }
        let (fwd, rev) = (&ws.fwd, &ws.rev);

        // Slice: interpolate back and rescale so the unnormalized output
        // matches the mass of the true Gauss transform. The constant folds
        // together the blur DC gain 2^(d+1), the lattice covolume
        // (d+1)^(d-1/2) under the sqrt(2/3)(d+1) feature-to-lattice
        // similarity, the Gaussian mass (2pi)^(d/2), and the 1/2 that
        // averages the two blur orders.
        let d = self.dim as f64;
        let alpha = 0.5 * (d + 1.0).sqrt() * (4.0 * std::f64::consts::PI / 3.0).powf(d / 2.0)
            / (d + 1.0).exp2();
        let offsets = &self.offsets;
        let weights = &self.weights;
        out.par_chunks_mut(c * PAR_BLOCK)
            .enumerate()
            .for_each(|(block, rows)| {
                for (j, row) in rows.chunks_mut(c).enumerate() {
                    let p = block * PAR_BLOCK + j;
                    row.iter_mut().for_each(|v| *v = 0.0);
                    for r in 0..dp1 {
                        let off = offsets[p * dp1 + r] as usize + 1;
                        let w = weights[p * dp1 + r].wide();
                        let f = &fwd[off * c..(off + 1) * c];
                        let b = &rev[off * c..(off + 1) * c];
                        for (k, v) in row.iter_mut().enumerate() {
                            *v += w * (f[k] + b[k]);
                        }
                    }
                    row.iter_mut().for_each(|v| *v *= alpha);
                }
            });
    }

    /// One symmetric blur step along `axis` with stencil (1/2, 1, 1/2),
    /// reading `src` rows and writing `dst` rows. Absent neighbors
    /// contribute zero; the stencil gain is compensated at slice time.
    /// Row 0 stays zero. Vertex rows are distributed over worker threads;
    /// each row depends only on `src`, so the result is thread-count
    /// independent.
    fn blur_pass(&self, axis: usize, c: usize, src: &[f64], dst: &mut [f64]) {
        let m = self.vertex_count;
        let nb = &self.neighbors[axis * m..(axis + 1) * m];
        dst[..c].iter_mut().for_each(|v| *v = 0.0);
        dst[c..].par_chunks_mut(c * PAR_BLOCK)
            .enumerate()
            .for_each(|(block, rows)| {
                for (j, row) in rows.chunks_mut(c).enumerate() {
                    let v = block * PAR_BLOCK + j;
                    let [n1, n2] = nb[v];
                    let center = &src[(v + 1) * c..(v + 2) * c];
                    let a = &src[n1 as usize * c..(n1 as usize + 1) * c];
                    let b = &src[n2 as usize * c..(n2 as usize + 1) * c];
                    for k in 0..c {
                        row[k] = center[k] + 0.5 * (a[k] + b[k]);
                    }
                }
            });
    }

    /// Checks the structural invariants: barycentric weights non-negative
    /// and summing to one per point, every vertex offset in range, and a
    /// strictly positive normalization vector.
    pub fn validate(&self) -> Result<()> {
        let dp1 = self.dim + 1;
        for p in 0..self.count {
            let ws = &self.weights[p * dp1..(p + 1) * dp1];
            let sum: f64 = ws.iter().map(|w| w.wide()).sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidParameter {
                    name: "barycentric",
                    reason: format!("weights of point {p} sum to {sum}"),
                });
            }
            for w in ws {
                if w.wide() < -1e-6 {
                    return Err(Error::InvalidParameter {
                        name: "barycentric",
                        reason: format!("negative weight {w} at point {p}"),
                    });
                }
            }
            for r in 0..dp1 {
                if self.offsets[p * dp1 + r] as usize >= self.vertex_count {
                    return Err(Error::InvalidParameter {
                        name: "offsets",
                        reason: format!("point {p} references a vertex out of range"),
                    });
                }
            }
        }
        if let Some(p) = self.norm.iter().position(|&x| x <= 0.0) {
            return Err(Error::InvalidParameter {
                name: "normalization",
                reason: format!("non-positive normalization at point {p}"),
            });
        }
        Ok(())
    }
}

/// Exact Gaussian filtering by direct summation, O(n^2).
///
/// The verification oracle for the lattice path; also usable directly on
/// small instances. Accumulates in f64.
pub fn brute_force_gaussian<T: Scalar>(
    features: &FeatureMatrix<T>,
    values: &ValueMatrix<T>,
) -> Result<ValueMatrix<T>> {
    if features.count() != values.count() {
        return Err(Error::CountMismatch {
            expected: features.count(),
            actual: values.count(),
        });
    }
    let n = features.count();
    let d = features.dim();
    let c = values.channels();
    let feats: Vec<f64> = features.as_slice().iter().map(|v| v.wide()).collect();
    let vals: Vec<f64> = values.as_slice().iter().map(|v| v.wide()).collect();

    let out: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|a| {
            let fa = &feats[a * d..(a + 1) * d];
            let mut acc = vec![0.0f64; c];
            for b in 0..n {
                let fb = &feats[b * d..(b + 1) * d];
                let mut dist2 = 0.0f64;
                for i in 0..d {
                    let diff = fa[i] - fb[i];
                    dist2 += diff * diff;
                }
                let w = (-0.5 * dist2).exp();
                let vb = &vals[b * c..(b + 1) * c];
                for (a_k, v_k) in acc.iter_mut().zip(vb) {
                    *a_k += w * v_k;
                }
            }
            acc.into_iter()
        })
        .collect();

    ValueMatrix::new(c, n, out.iter().map(|&x| T::narrow(x)).collect())
}
