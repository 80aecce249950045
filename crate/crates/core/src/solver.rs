//! Mean-field inference over the joint field.
//!
//! Two update paths exist on purpose:
//!
//! * [`MeanFieldEngine`] / [`run_inference`]: the fast path. All variables
//!   update simultaneously; the label-summed pairwise messages come from
//!   permutohedral filtering of the marginal field, one lattice per kernel
//!   per frame window.
//! * [`mf_step_sequential`]: the verification path. Variables update one at
//!   a time against exact pairwise kernel sums, which provably never
//!   increases the mean-field free energy. Quadratic cost, guarded to small
//!   instances.
//!
//! [`free_energy`] evaluates the variational objective E_Q\[E\] - H(Q)
//! exactly and anchors the sequential path's monotonicity checks.

use std::ops::Range;

use rayon::prelude::*;
use std::time::Instant;

use crate::hoc::{self, CliqueSet};
use crate::lattice::PermutohedralLattice;
use crate::model::{self, CrfProblem};
use crate::model::UnaryField;
use crate::scalar::Scalar;
use crate::{Error, Label, Result};

/// Exact paths refuse instances larger than this.
pub const SEQUENTIAL_GUARD: usize = 5000;

/// Per-pixel label distributions maintained by mean field. Rows live on the
/// probability simplex.
#[derive(Debug, Clone)]
pub struct MarginalField<T> {
    frames: usize,
    frame_pixels: usize,
    labels: usize,
    q: Vec<T>,
}

impl<T: Scalar> MarginalField<T> {
    pub fn new(frames: usize, frame_pixels: usize, labels: usize, q: Vec<T>) -> Result<Self> {
        if q.len() != frames * frame_pixels * labels {
            return Err(Error::ShapeMismatch {
                expected: frames * frame_pixels * labels,
                actual: q.len(),
            });
        }
        let field = Self {
            frames,
            frame_pixels,
            labels,
            q,
        };
        field.validate()?;
        Ok(field)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn frame_pixels(&self) -> usize {
        self.frame_pixels
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn variable_count(&self) -> usize {
        self.frames * self.frame_pixels
    }

    #[inline]
    pub fn row(&self, var: usize) -> &[T] {
        &self.q[var * self.labels..(var + 1) * self.labels]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.q
    }

    /// Checks every row is non-negative, finite and sums to 1 within 1e-6.
    pub fn validate(&self) -> Result<()> {
        for (var, row) in self.q.chunks(self.labels).enumerate() {
            let mut sum = 0.0f64;
            for (label, v) in row.iter().enumerate() {
                let x = v.wide();
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::InvalidParameter {
                        name: "marginal",
                        reason: format!("Q({var},{label}) = {x}"),
                    });
                }
                sum += x;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidParameter {
                    name: "marginal",
                    reason: format!("row {var} sums to {sum}"),
                });
            }
        }
        Ok(())
    }

    /// Argmax decoding; ties break toward the smaller label id.
    pub fn decode(&self) -> Vec<Label> {
        self.q
            .chunks(self.labels)
            .map(|row| {
                let mut best = 0usize;
                for l in 1..self.labels {
                    if row[l] > row[best] {
                        best = l;
                    }
                }
                best as Label
            })
            .collect()
    }
}

/// Wall time per phase plus the free-energy trace when the sequential
/// oracle produced the result.
#[derive(Debug, Clone, Default)]
pub struct SolverReport {
    pub iterations: usize,
    pub lattice_build_seconds: f64,
    pub filter_seconds: f64,
    pub hoc_seconds: f64,
    pub normalize_seconds: f64,
    pub total_seconds: f64,
    pub free_energy_trace: Vec<f64>,
}

/// Softmax of the negated costs with max-subtraction, row by row.
fn softmax_rows<T: Scalar>(neg_energy: &[f64], labels: usize, out: &mut [T]) {
    for (row_in, row_out) in neg_energy.chunks(labels).zip(out.chunks_mut(labels)) {
        let m = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0f64;
        let mut tmp = [0.0f64; 64];
        if labels <= 64 {
            for (l, &e) in row_in.iter().enumerate() {
                let v = (e - m).exp();
                tmp[l] = v;
                sum += v;
            }
            for (l, o) in row_out.iter_mut().enumerate() {
                *o = T::narrow(tmp[l] / sum);
            }
        } else {
            for &e in row_in {
                sum += (e - m).exp();
            }
            for (&e, o) in row_in.iter().zip(row_out.iter_mut()) {
                *o = T::narrow((e - m).exp() / sum);
            }
        }
    }
}

/// Initial marginals: the per-pixel softmax of the negated unary costs.
pub fn init_marginals<T: Scalar>(unary: &UnaryField<T>) -> MarginalField<T> {
    init_window(unary, 0, unary.variable_count(), unary.frames())
}

fn init_window<T: Scalar>(
    unary: &UnaryField<T>,
    base: usize,
    vars: usize,
    frames: usize,
) -> MarginalField<T> {
    let labels = unary.labels();
    let neg: Vec<f64> = unary.as_slice()[base * labels..(base + vars) * labels]
        .iter()
        .map(|c| -c.wide())
        .collect();
    let mut q = vec![T::zero(); vars * labels];
    softmax_rows(&neg, labels, &mut q);
    MarginalField {
        frames,
        frame_pixels: vars / frames,
        labels,
        q,
    }
}

/// Filter-based mean-field updater for one window of frames. Builds one
/// lattice per (positively weighted) kernel at construction; afterwards
/// [`step`](Self::step) is read-only on the lattices and may be called for
/// any number of iterations.
pub struct MeanFieldEngine<'p, T: Scalar> {
    problem: &'p CrfProblem<T>,
    base: usize,
    vars: usize,
    frames: Range<usize>,
    lattices: Vec<Option<PermutohedralLattice<T>>>,
    window_cliques: CliqueSet<T>,
    pub times: PhaseTimes,
    // Scratch reused across iterations.
    msg: Vec<f64>,
    filtered: Vec<f64>,
    neg: Vec<f64>,
    ws: crate::lattice::FilterWorkspace,
}

/// Accumulated wall time per phase.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseTimes {
    pub lattice_build: f64,
    pub filter: f64,
    pub hoc: f64,
    pub normalize: f64,
}

impl<'p, T: Scalar> MeanFieldEngine<'p, T> {
    pub fn new(problem: &'p CrfProblem<T>, frames: Range<usize>) -> Result<Self> {
        if frames.end > problem.volume.frames() || frames.is_empty() {
            return Err(Error::InvalidParameter {
                name: "frames",
                reason: format!(
                    "window {frames:?} outside 0..{}",
                    problem.volume.frames()
                ),
            });
        }
        let np = problem.volume.frame_pixels();
        let base = frames.start * np;
        let vars = frames.len() * np;
        let start = Instant::now();
        let lattices = problem
            .kernels
            .iter()
            .map(|kernel| {
                if kernel.weight.wide() > 0.0 {
                    let feats = model::embed_features_window(problem, kernel, frames.clone());
                    Some(crate::lattice::build_lattice(&feats))
                } else {
                    None
                }
            })
            .collect();
        let window_cliques = problem.cliques.restrict(base, vars);
        let mut times = PhaseTimes::default();
        times.lattice_build = start.elapsed().as_secs_f64();
        Ok(Self {
            problem,
            base,
            vars,
            frames,
            lattices,
            window_cliques,
            times,
            msg: Vec::new(),
            filtered: Vec::new(),
            neg: Vec::new(),
            ws: crate::lattice::FilterWorkspace::default(),
        })
    }

    pub fn window(&self) -> Range<usize> {
        self.frames.clone()
    }

    /// One simultaneous update of the whole window.
    ///
    /// For every variable i and label l the pairwise message is
    /// `sum_{l'} mu(l,l') sum_m w_m ([filter_m(Q(l'))]_i - Q_i(l'))`: the
    /// filter includes the self term with weight one, so subtracting Q
    /// removes self-interaction. Under Potts compatibility the label-summed
    /// part is constant per pixel and cancels in normalization, leaving the
    /// folded form `-psi + w*(filter(Q) - Q) - h`.
    pub fn step(&mut self, q: &MarginalField<T>) -> Result<MarginalField<T>> {
        let labels = self.problem.labels();
        if q.variable_count() != self.vars || q.labels() != labels {
            return Err(Error::DimensionMismatch {
                left: "marginals",
                right: "engine window",
                detail: format!(
                    "{} vars x {} labels vs {} vars x {} labels",
                    q.variable_count(),
                    q.labels(),
                    self.vars,
                    labels
                ),
            });
        }

        // Pairwise messages via filtering, accumulated in f64.
        let t0 = Instant::now();
        self.msg.clear();
        self.msg.resize(self.vars * labels, 0.0);
        self.filtered.resize(self.vars * labels, 0.0);
        for (kernel, lattice) in self.problem.kernels.iter().zip(&self.lattices) {
            let Some(lattice) = lattice else { continue };
            lattice.filter_into(q.as_slice(), labels, false, &mut self.filtered, &mut self.ws)?;
            let w = kernel.weight.wide();
            self.msg
                .par_chunks_mut(4096)
                .zip(self.filtered.par_chunks(4096))
                .zip(q.as_slice().par_chunks(4096))
                .for_each(|((ms, fs), qs)| {
                    for ((m, &f), qv) in ms.iter_mut().zip(fs).zip(qs) {
                        *m += w * (f - qv.wide());
                    }
                });
        }
        self.times.filter += t0.elapsed().as_secs_f64();

        // Higher-order additive costs from the current marginals.
        let t1 = Instant::now();
        let h = if self.window_cliques.is_empty() {
            None
        } else {
            Some(hoc::hoc_update_field(
                q.as_slice(),
                labels,
                &self.window_cliques,
            )?)
        };
        self.times.hoc += t1.elapsed().as_secs_f64();

        // Compatibility transform, unary, softmax, damping.
        let t2 = Instant::now();
        let compat = &self.problem.compatibility;
        let unary = &self.problem.unary;
        let base = self.base;
        let msg = &self.msg;
        self.neg.resize(self.vars * labels, 0.0);
        let unary_slice = &unary.as_slice()[base * labels..(base + self.vars) * labels];
        if compat.is_potts() {
            self.neg
                .par_chunks_mut(4096)
                .zip(unary_slice.par_chunks(4096))
                .zip(msg.par_chunks(4096))
                .for_each(|((ns, us), ms)| {
                    for ((n, u), &m) in ns.iter_mut().zip(us).zip(ms) {
                        *n = -u.wide() + m;
                    }
                });
        } else {
            self.neg
                .par_chunks_mut(labels * 1024)
                .zip(unary_slice.par_chunks(labels * 1024))
                .zip(msg.par_chunks(labels * 1024))
                .for_each(|((ns, us), ms)| {
                    for ((nrow, urow), mrow) in ns
                        .chunks_mut(labels)
                        .zip(us.chunks(labels))
                        .zip(ms.chunks(labels))
                    {
                        for l in 0..labels {
                            let mut m = 0.0f64;
                            for lp in 0..labels {
                                m += compat.mu(l, lp).wide() * mrow[lp];
                            }
                            nrow[l] = -urow[l].wide() - m;
                        }
                    }
                });
        }
        if let Some(h) = &h {
            for (n, hv) in self.neg.iter_mut().zip(h) {
                *n -= hv;
            }
        }
        let mut out = vec![T::zero(); self.vars * labels];
        let damping = self.problem.damping.wide();
        let neg = &self.neg;
        out.par_chunks_mut(labels * 1024)
            .zip(neg.par_chunks(labels * 1024))
            .zip(q.as_slice().par_chunks(labels * 1024))
            .for_each(|((os, ns), qs)| {
                softmax_rows(ns, labels, os);
                if damping < 1.0 {
                    for (o, qv) in os.iter_mut().zip(qs) {
                        *o = T::narrow(damping * o.wide() + (1.0 - damping) * qv.wide());
                    }
                }
            });
        self.times.normalize += t2.elapsed().as_secs_f64();

        Ok(MarginalField {
            frames: self.frames.len(),
            frame_pixels: q.frame_pixels(),
            labels,
            q: out,
        })
    }
}

/// One parallel update over the whole problem treated as a single window.
///
/// Convenience wrapper for tests and small instances; it rebuilds the
/// lattices on every call, so iterated inference should use
/// [`MeanFieldEngine`] or [`run_inference`] instead.
pub fn mf_step_parallel<T: Scalar>(
    problem: &CrfProblem<T>,
    q: &MarginalField<T>,
) -> Result<MarginalField<T>> {
    let mut engine = MeanFieldEngine::new(problem, 0..problem.volume.frames())?;
    engine.step(q)
}

/// Exact sequential coordinate updates in the given variable order.
///
/// Each visited variable is set to the exact minimizer of the mean-field
/// free energy given all other marginals (pairwise sums evaluated with
/// [`model::pairwise_kernel_value`], clique terms with
/// [`hoc::expected_clique_cost`]), so the free energy never increases.
/// Quadratic per variable; guarded to small instances.
pub fn mf_step_sequential<T: Scalar>(
    problem: &CrfProblem<T>,
    q: &MarginalField<T>,
    order: &[usize],
) -> Result<MarginalField<T>> {
    let n = problem.variable_count();
    if n > SEQUENTIAL_GUARD {
        return Err(Error::SizeGuard {
            count: n,
            guard: SEQUENTIAL_GUARD,
        });
    }
    let labels = problem.labels();
    if q.variable_count() != n || q.labels() != labels {
        return Err(Error::DimensionMismatch {
            left: "marginals",
            right: "problem",
            detail: format!("{} vs {} variables", q.variable_count(), n),
        });
    }
    if let Some(&bad) = order.iter().find(|&&i| i >= n) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            labels: n,
            variable: bad,
        });
    }

    let membership = problem.cliques.membership(n);
    let mut new_q = q.clone();
    let compat = &problem.compatibility;
    let mut acc = vec![0.0f64; labels];
    let mut neg = vec![0.0f64; labels];
    for &i in order {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for j in 0..n {
            if j == i {
                continue;
            }
            let mut kv = 0.0f64;
            for kernel in &problem.kernels {
                kv += kernel.weight.wide() * model::pairwise_kernel_value(problem, kernel, i, j);
            }
            if kv == 0.0 {
                continue;
            }
            let row = new_q.row(j);
            for (a, v) in acc.iter_mut().zip(row) {
                *a += kv * v.wide();
            }
        }
        let urow = problem.unary.row(i);
        for l in 0..labels {
            let mut m = 0.0f64;
            for lp in 0..labels {
                m += compat.mu(l, lp).wide() * acc[lp];
            }
            let mut hc = 0.0f64;
            for &c in &membership[i] {
                hc += hoc::expected_clique_cost(
                    new_q.as_slice(),
                    labels,
                    problem.cliques.clique(c as usize),
                    i,
                    l,
                    problem.cliques.params(),
                )?;
            }
            neg[l] = -urow[l].wide() - m - hc;
        }
        let row_range = i * labels..(i + 1) * labels;
        softmax_rows(&neg, labels, &mut new_q.q[row_range]);
    }
    Ok(new_q)
}

/// The mean-field variational objective E_Q\[E\] - H(Q), evaluated exactly
/// (quadratic pairwise enumeration; guarded to small instances).
pub fn free_energy<T: Scalar>(problem: &CrfProblem<T>, q: &MarginalField<T>) -> Result<f64> {
    let n = problem.variable_count();
    if n > SEQUENTIAL_GUARD {
        return Err(Error::SizeGuard {
            count: n,
            guard: SEQUENTIAL_GUARD,
        });
    }
    let labels = problem.labels();
    if q.variable_count() != n || q.labels() != labels {
        return Err(Error::DimensionMismatch {
            left: "marginals",
            right: "problem",
            detail: format!("{} vs {n} variables", q.variable_count()),
        });
    }

    let mut total = 0.0f64;
    for var in 0..n {
        let row = q.row(var);
        let urow = problem.unary.row(var);
        for l in 0..labels {
            total += row[l].wide() * urow[l].wide();
        }
    }

    let compat = &problem.compatibility;
    for a in 0..n {
        let qa = q.row(a);
        for b in (a + 1)..n {
            let mut kv = 0.0f64;
            for kernel in &problem.kernels {
                kv += kernel.weight.wide() * model::pairwise_kernel_value(problem, kernel, a, b);
            }
            if kv == 0.0 {
                continue;
            }
            let qb = q.row(b);
            let coupling = if compat.is_potts() {
                let mut same = 0.0f64;
                for l in 0..labels {
                    same += qa[l].wide() * qb[l].wide();
                }
                1.0 - same
            } else {
                let mut c = 0.0f64;
                for l in 0..labels {
                    let ql = qa[l].wide();
                    if ql == 0.0 {
                        continue;
                    }
                    for lp in 0..labels {
                        c += ql * compat.mu(l, lp).wide() * qb[lp].wide();
                    }
                }
                c
            };
            total += kv * coupling;
        }
    }

    for clique in problem.cliques.iter() {
        total += hoc::expected_clique_energy(q.as_slice(), labels, clique, problem.cliques.params())?;
    }

    // Negative entropy, with 0 ln 0 = 0.
    for v in q.as_slice() {
        let x = v.wide();
        if x > 0.0 {
            total += x * x.ln();
        }
    }
    Ok(total)
}

/// Full fast-path inference: windows of `problem.batch` consecutive frames
/// are each solved jointly with `problem.iterations` parallel updates, then
/// decoded by per-pixel argmax (ties toward the smaller label).
pub fn run_inference<T: Scalar>(
    problem: &CrfProblem<T>,
) -> Result<(Vec<Label>, MarginalField<T>, SolverReport)> {
    let start = Instant::now();
    let frames = problem.volume.frames();
    let np = problem.volume.frame_pixels();
    let labels = problem.labels();
    let mut labeling = Vec::with_capacity(problem.variable_count());
    let mut q_all = vec![T::zero(); problem.variable_count() * labels];
    let mut report = SolverReport {
        iterations: problem.iterations,
        ..SolverReport::default()
    };

    let mut f0 = 0usize;
    while f0 < frames {
        let f1 = (f0 + problem.batch).min(frames);
        let mut engine = MeanFieldEngine::new(problem, f0..f1)?;
        let vars = (f1 - f0) * np;
        let mut q = init_window(&problem.unary, f0 * np, vars, f1 - f0);
        for _ in 0..problem.iterations {
            q = engine.step(&q)?;
        }
        labeling.extend(q.decode());
        q_all[f0 * np * labels..f1 * np * labels].copy_from_slice(q.as_slice());
        report.lattice_build_seconds += engine.times.lattice_build;
        report.filter_seconds += engine.times.filter;
        report.hoc_seconds += engine.times.hoc;
        report.normalize_seconds += engine.times.normalize;
        f0 = f1;
    }

    let q_field = MarginalField {
        frames,
        frame_pixels: np,
        labels,
        q: q_all,
    };
    report.total_seconds = start.elapsed().as_secs_f64();
    Ok((labeling, q_field, report))
}

/// Sequential-oracle inference for desk-scale verification: `sweeps` full
/// passes in natural variable order, recording the free energy after
/// initialization and after every sweep.
pub fn run_sequential<T: Scalar>(
    problem: &CrfProblem<T>,
    sweeps: usize,
) -> Result<(Vec<Label>, MarginalField<T>, SolverReport)> {
    let start = Instant::now();
    let mut q = init_marginals(&problem.unary);
    let order: Vec<usize> = (0..problem.variable_count()).collect();
    let mut trace = vec![free_energy(problem, &q)?];
    for _ in 0..sweeps {
        q = mf_step_sequential(problem, &q, &order)?;
        trace.push(free_energy(problem, &q)?);
    }
    let labeling = q.decode();
    let report = SolverReport {
        iterations: sweeps,
        total_seconds: start.elapsed().as_secs_f64(),
        free_energy_trace: trace,
        ..SolverReport::default()
    };
    Ok((labeling, q, report))
}
