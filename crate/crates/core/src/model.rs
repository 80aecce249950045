//! The joint random field over a batch of video frames.
//!
//! A [`CrfProblem`] couples every pixel of every frame in the batch through
//! weighted Gaussian kernels (a spatio-temporal smoothness kernel and an
//! appearance kernel over position, time and color), a label-compatibility
//! function, per-pixel unary costs, and optional higher-order segment
//! cliques. This module also evaluates exact energies by direct pair
//! enumeration; that path is quadratic and exists for verification, not for
//! the fast solver.
//!
//! Variable ids are laid out as `id = t * (W*H) + y * W + x` and this layout
//! is part of the file-format and test contracts.

use crate::hoc::{self, CliqueSet};
use crate::lattice::FeatureMatrix;
use crate::scalar::Scalar;
use crate::{Error, Label, Result};

/// F frames of W x H RGB pixels; the conditioning data of the field.
#[derive(Debug, Clone)]
pub struct VideoVolume {
    frames: usize,
    width: usize,
    height: usize,
    rgb: Vec<[u8; 3]>,
}

impl VideoVolume {
    pub fn new(frames: usize, width: usize, height: usize, rgb: Vec<[u8; 3]>) -> Result<Self> {
        if frames == 0 || width == 0 || height == 0 {
            return Err(Error::Empty { what: "video volume" });
        }
        if rgb.len() != frames * width * height {
            return Err(Error::ShapeMismatch {
                expected: frames * width * height,
                actual: rgb.len(),
            });
        }
        Ok(Self {
            frames,
            width,
            height,
            rgb,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Pixels per frame.
    pub fn frame_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Total variable count F*W*H.
    pub fn variable_count(&self) -> usize {
        self.frames * self.frame_pixels()
    }

    #[inline]
    pub fn var_index(&self, t: usize, x: usize, y: usize) -> usize {
        t * self.frame_pixels() + y * self.width + x
    }

    /// Inverse of [`var_index`](Self::var_index): `(t, x, y)`.
    #[inline]
    pub fn coords(&self, var: usize) -> (usize, usize, usize) {
        let np = self.frame_pixels();
        let t = var / np;
        let r = var % np;
        (t, r % self.width, r / self.width)
    }

    #[inline]
    pub fn rgb(&self, var: usize) -> [u8; 3] {
        self.rgb[var]
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.rgb
    }
}

/// Per-pixel, per-label costs (negative log scores), variable-major and
/// label-minor: `costs[var * labels + label]`.
#[derive(Debug, Clone)]
pub struct UnaryField<T> {
    frames: usize,
    width: usize,
    height: usize,
    labels: usize,
    costs: Vec<T>,
}

impl<T: Scalar> UnaryField<T> {
    pub fn new(
        frames: usize,
        width: usize,
        height: usize,
        labels: usize,
        costs: Vec<T>,
    ) -> Result<Self> {
        if labels == 0 {
            return Err(Error::Empty { what: "labels" });
        }
        let vars = frames * width * height;
        if costs.len() != vars * labels {
            return Err(Error::ShapeMismatch {
                expected: vars * labels,
                actual: costs.len(),
            });
        }
        for (i, c) in costs.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::NonFiniteCost {
                    path: "<memory>".into(),
                    pixel: i / labels,
                    label: i % labels,
                });
            }
        }
        Ok(Self {
            frames,
            width,
            height,
            labels,
            costs,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn variable_count(&self) -> usize {
        self.frames * self.width * self.height
    }

    #[inline]
    pub fn row(&self, var: usize) -> &[T] {
        &self.costs[var * self.labels..(var + 1) * self.labels]
    }

    #[inline]
    pub fn cost(&self, var: usize, label: usize) -> T {
        self.costs[var * self.labels + label]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.costs
    }
}

/// Which feature embedding a kernel uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// Position and frame index: d = 3.
    Smoothness,
    /// Position, frame index and color: d = 6.
    Appearance,
}

/// One weighted Gaussian kernel of the pairwise term.
#[derive(Debug, Clone)]
pub struct KernelSpec<T> {
    pub kind: KernelKind,
    pub weight: T,
    pub sigma_xy: T,
    pub sigma_time: T,
    /// Color bandwidth; present exactly for appearance kernels.
    pub sigma_rgb: Option<T>,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn smoothness(weight: T, sigma_xy: T, sigma_time: T) -> Self {
        Self {
            kind: KernelKind::Smoothness,
            weight,
            sigma_xy,
            sigma_time,
            sigma_rgb: None,
        }
    }

    pub fn appearance(weight: T, sigma_xy: T, sigma_time: T, sigma_rgb: T) -> Self {
        Self {
            kind: KernelKind::Appearance,
            weight,
            sigma_xy,
            sigma_time,
            sigma_rgb: Some(sigma_rgb),
        }
    }

    /// Feature dimension of the embedding.
    pub fn dim(&self) -> usize {
        match self.kind {
            KernelKind::Smoothness => 3,
            KernelKind::Appearance => 6,
        }
    }

    fn validate(&self) -> Result<()> {
        let pos = |name: &'static str, v: T| -> Result<()> {
            if !(v.wide() > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive and finite, got {v}"),
                });
            }
            Ok(())
        };
        if !(self.weight.wide() >= 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "kernel weight",
                reason: format!("must be non-negative and finite, got {}", self.weight),
            });
        }
        pos("sigma_xy", self.sigma_xy)?;
        pos("sigma_time", self.sigma_time)?;
        match (self.kind, self.sigma_rgb) {
            (KernelKind::Appearance, Some(s)) => pos("sigma_rgb", s),
            (KernelKind::Appearance, None) => Err(Error::InvalidParameter {
                name: "sigma_rgb",
                reason: "appearance kernel requires a color bandwidth".into(),
            }),
            (KernelKind::Smoothness, None) => Ok(()),
            (KernelKind::Smoothness, Some(_)) => Err(Error::InvalidParameter {
                name: "sigma_rgb",
                reason: "smoothness kernel takes no color bandwidth".into(),
            }),
        }
    }
}

/// Label compatibility mu(l, l'): the cost multiplier applied to the kernel
/// sum of a pair labeled (l, l').
#[derive(Debug, Clone)]
pub struct Compatibility<T> {
    labels: usize,
    matrix: Vec<T>,
    potts: bool,
}

impl<T: Scalar> Compatibility<T> {
    /// Potts model: 0 on the diagonal, 1 off it.
    pub fn potts(labels: usize) -> Self {
        let mut matrix = vec![T::one(); labels * labels];
        for l in 0..labels {
            matrix[l * labels + l] = T::zero();
        }
        Self {
            labels,
            matrix,
            potts: true,
        }
    }

    /// Arbitrary symmetric compatibility matrix.
    pub fn from_matrix(labels: usize, matrix: Vec<T>) -> Result<Self> {
        if matrix.len() != labels * labels {
            return Err(Error::ShapeMismatch {
                expected: labels * labels,
                actual: matrix.len(),
            });
        }
        for l in 0..labels {
            for k in (l + 1)..labels {
                if (matrix[l * labels + k] - matrix[k * labels + l]).abs().wide() > 1e-12 {
                    return Err(Error::InvalidParameter {
                        name: "compatibility",
                        reason: format!("matrix not symmetric at ({l},{k})"),
                    });
                }
            }
        }
        Ok(Self {
            labels,
            matrix,
            potts: false,
        })
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn is_potts(&self) -> bool {
        self.potts
    }

    #[inline]
    pub fn mu(&self, l: usize, k: usize) -> T {
        self.matrix[l * self.labels + k]
    }
}

/// The full model of a frame batch.
#[derive(Debug, Clone)]
pub struct CrfProblem<T> {
    pub volume: VideoVolume,
    pub unary: UnaryField<T>,
    pub kernels: Vec<KernelSpec<T>>,
    pub compatibility: Compatibility<T>,
    pub cliques: CliqueSet<T>,
    pub iterations: usize,
    /// Frame-window size for inference; windows are disjoint consecutive
    /// frame ranges.
    pub batch: usize,
    /// Blend factor for the parallel update, 1 = undamped.
    pub damping: T,
}

impl<T: Scalar> CrfProblem<T> {
    pub fn new(
        volume: VideoVolume,
        unary: UnaryField<T>,
        kernels: Vec<KernelSpec<T>>,
        compatibility: Compatibility<T>,
        cliques: CliqueSet<T>,
        iterations: usize,
        batch: usize,
    ) -> Result<Self> {
        if unary.frames() != volume.frames()
            || unary.width() != volume.width()
            || unary.height() != volume.height()
        {
            return Err(Error::DimensionMismatch {
                left: "unary",
                right: "volume",
                detail: format!(
                    "{}x{}x{} vs {}x{}x{}",
                    unary.frames(),
                    unary.width(),
                    unary.height(),
                    volume.frames(),
                    volume.width(),
                    volume.height()
                ),
            });
        }
        if compatibility.labels() != unary.labels() {
            return Err(Error::DimensionMismatch {
                left: "compatibility",
                right: "unary",
                detail: format!("{} vs {} labels", compatibility.labels(), unary.labels()),
            });
        }
        for k in &kernels {
            k.validate()?;
        }
        cliques.validate(volume.variable_count(), unary.labels())?;
        if iterations == 0 {
            return Err(Error::InvalidParameter {
                name: "iterations",
                reason: "must be at least 1".into(),
            });
        }
        if batch == 0 {
            return Err(Error::InvalidParameter {
                name: "batch",
                reason: "must be at least 1".into(),
            });
        }
        Ok(Self {
            volume,
            unary,
            kernels,
            compatibility,
            cliques,
            iterations,
            batch,
            damping: T::one(),
        })
    }

    pub fn with_damping(mut self, damping: T) -> Result<Self> {
        let d = damping.wide();
        if !(d > 0.0 && d <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "damping",
                reason: format!("must lie in (0, 1], got {damping}"),
            });
        }
        self.damping = damping;
        Ok(self)
    }

    pub fn labels(&self) -> usize {
        self.unary.labels()
    }

    pub fn variable_count(&self) -> usize {
        self.volume.variable_count()
    }
}

/// Embeds every variable of the problem for `kernel`, scaled so that
/// `exp(-0.5 ||f_a - f_b||^2)` equals the kernel value of the pair.
///
/// Smoothness: `sqrt(2)/sigma_xy * (x, y)` and `sqrt(2)/sigma_time * t`.
/// Appearance additionally carries `sqrt(2)/sigma_rgb * (r, g, b)`.
pub fn embed_features<T: Scalar>(
    problem: &CrfProblem<T>,
    kernel: &KernelSpec<T>,
) -> Result<FeatureMatrix<T>> {
    kernel.validate()?;
    Ok(embed_features_window(
        problem,
        kernel,
        0..problem.volume.frames(),
    ))
}

/// Embedding restricted to a window of frames (variable ids stay global, so
/// the `t` coordinate is the absolute frame index).
pub(crate) fn embed_features_window<T: Scalar>(
    problem: &CrfProblem<T>,
    kernel: &KernelSpec<T>,
    frames: std::ops::Range<usize>,
) -> FeatureMatrix<T> {
    let vol = &problem.volume;
    let (w, h) = (vol.width(), vol.height());
    let sqrt2 = std::f64::consts::SQRT_2;
    let sx = sqrt2 / kernel.sigma_xy.wide();
    let st = sqrt2 / kernel.sigma_time.wide();
    let d = kernel.dim();
    let count = frames.len() * w * h;
    let mut data = Vec::with_capacity(count * d);
    match kernel.kind {
        KernelKind::Smoothness => {
            for t in frames {
                for y in 0..h {
                    for x in 0..w {
                        data.push(T::narrow(x as f64 * sx));
                        data.push(T::narrow(y as f64 * sx));
                        data.push(T::narrow(t as f64 * st));
                    }
                }
            }
        }
        KernelKind::Appearance => {
            let sc = sqrt2 / kernel.sigma_rgb.expect("validated").wide();
            for t in frames {
                for y in 0..h {
                    for x in 0..w {
                        let [r, g, b] = vol.rgb(vol.var_index(t, x, y));
                        data.push(T::narrow(x as f64 * sx));
                        data.push(T::narrow(y as f64 * sx));
                        data.push(T::narrow(t as f64 * st));
                        data.push(T::narrow(r as f64 * sc));
                        data.push(T::narrow(g as f64 * sc));
                        data.push(T::narrow(b as f64 * sc));
                    }
                }
            }
        }
    }
    FeatureMatrix::new(d, count, data).expect("embedding is finite by construction")
}

/// Exact kernel value for a variable pair, evaluated directly from raw
/// coordinates in double precision. Oracle-path only; the fast path never
/// calls this.
pub fn pairwise_kernel_value<T: Scalar>(
    problem: &CrfProblem<T>,
    kernel: &KernelSpec<T>,
    a: usize,
    b: usize,
) -> f64 {
    let vol = &problem.volume;
    let (ta, xa, ya) = vol.coords(a);
    let (tb, xb, yb) = vol.coords(b);
    let dx = xa as f64 - xb as f64;
    let dy = ya as f64 - yb as f64;
    let dt = ta as f64 - tb as f64;
    let sxy = kernel.sigma_xy.wide();
    let stm = kernel.sigma_time.wide();
    let mut e = (dx * dx + dy * dy) / (sxy * sxy) + (dt * dt) / (stm * stm);
    if kernel.kind == KernelKind::Appearance {
        let src = kernel.sigma_rgb.expect("validated").wide();
        let ca = vol.rgb(a);
        let cb = vol.rgb(b);
        let mut dc2 = 0.0f64;
        for i in 0..3 {
            let dc = ca[i] as f64 - cb[i] as f64;
            dc2 += dc * dc;
        }
        e += dc2 / (src * src);
    }
    (-e).exp()
}

/// Exact energy of a labeling: unary + pairwise over unordered distinct
/// pairs + clique terms. Quadratic in the variable count; intended for
/// small verification instances (roughly n <= 5000).
pub fn energy<T: Scalar>(problem: &CrfProblem<T>, labeling: &[Label]) -> Result<f64> {
    let n = problem.variable_count();
    let labels = problem.labels();
    if labeling.len() != n {
        return Err(Error::LengthMismatch {
            pred: labeling.len(),
            gt: n,
        });
    }
    if let Some(var) = labeling.iter().position(|&l| l as usize >= labels) {
        return Err(Error::LabelOutOfRange {
            label: labeling[var] as usize,
            labels,
            variable: var,
        });
    }

    let mut total = 0.0f64;
    for (var, &l) in labeling.iter().enumerate() {
        total += problem.unary.cost(var, l as usize).wide();
    }

    for a in 0..n {
        for b in (a + 1)..n {
            let mu = problem
                .compatibility
                .mu(labeling[a] as usize, labeling[b] as usize)
                .wide();
            if mu == 0.0 {
                continue;
            }
            let mut k = 0.0f64;
            for kernel in &problem.kernels {
                k += kernel.weight.wide() * pairwise_kernel_value(problem, kernel, a, b);
            }
            total += mu * k;
        }
    }

    for clique in problem.cliques.iter() {
        total += hoc::clique_energy(clique, labeling, problem.cliques.params())?;
    }
    Ok(total)
}
