//! Pn-Potts higher-order pattern potentials over segment cliques.
//!
//! A clique pays `gamma_l` when all of its members share label `l` and
//! `gamma_max = alpha * |c|` otherwise, which rewards segment-level label
//! consistency. The mean-field update needs, for each member `i` and label
//! `l`, the expectation of the clique cost conditioned on `x_i = l`:
//!
//! ```text
//! E[psi_c | x_i = l] = gamma_l * P + gamma_max * (1 - P),
//! P = prod_{j in c \ {i}} Q_j(l)
//! ```
//!
//! [`hoc_update_field`] accumulates that quantity for every member of every
//! clique using per-clique prefix/suffix products (no division, so zero
//! marginals are harmless), switching to log-domain accumulation for long
//! cliques to dodge underflow.

use crate::scalar::Scalar;
use crate::{Error, Label, Result};

/// Clique sizes above which exclusion products are accumulated in the log
/// domain.
const LOG_DOMAIN_THRESHOLD: usize = 64;

/// Pn-Potts parameters: per-label unanimous cost and the slope of the
/// non-unanimous cost `gamma_max(c) = alpha * |c|`.
#[derive(Debug, Clone)]
pub struct PnPottsParams<T> {
    gamma_low: Vec<T>,
    alpha: T,
}

impl<T: Scalar> PnPottsParams<T> {
    pub fn new(gamma_low: Vec<T>, alpha: T) -> Result<Self> {
        if gamma_low.is_empty() {
            return Err(Error::Empty { what: "gamma_low" });
        }
        for (l, g) in gamma_low.iter().enumerate() {
            if !(g.is_finite() && g.wide() >= 0.0) {
                return Err(Error::InvalidParameter {
                    name: "gamma_low",
                    reason: format!("label {l}: must be non-negative and finite, got {g}"),
                });
            }
        }
        if !(alpha.is_finite() && alpha.wide() >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("must be non-negative and finite, got {alpha}"),
            });
        }
        Ok(Self { gamma_low, alpha })
    }

    /// Same unanimous cost for every label.
    pub fn uniform(labels: usize, gamma_low: T, alpha: T) -> Result<Self> {
        Self::new(vec![gamma_low; labels], alpha)
    }

    pub fn labels(&self) -> usize {
        self.gamma_low.len()
    }

    pub fn gamma_low(&self, label: usize) -> T {
        self.gamma_low[label]
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    /// Cost of a non-unanimous clique of the given size.
    pub fn gamma_max(&self, clique_size: usize) -> f64 {
        self.alpha.wide() * clique_size as f64
    }
}

/// Where a clique came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CliqueSource {
    /// One superpixel of a per-frame segmentation layer.
    Superpixel { layer: u32 },
    /// A whole supervoxel spanning frames.
    Supervoxel,
    /// One per-frame slice of a supervoxel.
    SupervoxelSlice,
}

/// Segment cliques with their Pn-Potts parameters. Cliques from one layer
/// partition their frame span; cliques from distinct layers may overlap.
#[derive(Debug, Clone)]
pub struct CliqueSet<T> {
    cliques: Vec<Vec<u32>>,
    sources: Vec<CliqueSource>,
    params: PnPottsParams<T>,
}

impl<T: Scalar> CliqueSet<T> {
    pub fn empty(params: PnPottsParams<T>) -> Self {
        Self {
            cliques: Vec::new(),
            sources: Vec::new(),
            params,
        }
    }

    pub fn push(&mut self, members: Vec<u32>, source: CliqueSource) -> Result<()> {
        if members.is_empty() {
            return Err(Error::EmptyClique);
        }
        self.cliques.push(members);
        self.sources.push(source);
        Ok(())
    }

    /// Appends another layer's cliques; overlap across layers is expected.
    /// The receiving set's parameters stay in force.
    pub fn extend(&mut self, other: CliqueSet<T>) {
        self.cliques.extend(other.cliques);
        self.sources.extend(other.sources);
    }

    pub fn len(&self) -> usize {
        self.cliques.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cliques.is_empty()
    }

    pub fn params(&self) -> &PnPottsParams<T> {
        &self.params
    }

    pub fn clique(&self, idx: usize) -> &[u32] {
        &self.cliques[idx]
    }

    pub fn source(&self, idx: usize) -> CliqueSource {
        self.sources[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> {
        self.cliques.iter().map(|c| c.as_slice())
    }

    /// Checks member ids against the variable count and the gamma ordering
    /// (`gamma_max(c) >= gamma_l` for every clique and label).
    pub fn validate(&self, variables: usize, labels: usize) -> Result<()> {
        if self.params.labels() != labels {
            return Err(Error::DimensionMismatch {
                left: "clique params",
                right: "labels",
                detail: format!("{} vs {labels}", self.params.labels()),
            });
        }
        let max_low = self
            .params
            .gamma_low
            .iter()
            .map(|g| g.wide())
            .fold(0.0f64, f64::max);
        for (idx, c) in self.cliques.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::EmptyClique);
            }
            if let Some(&bad) = c.iter().find(|&&m| m as usize >= variables) {
                return Err(Error::InvalidParameter {
                    name: "clique member",
                    reason: format!("clique {idx} references variable {bad} of {variables}"),
                });
            }
            if self.params.gamma_max(c.len()) < max_low {
                return Err(Error::InvalidParameter {
                    name: "gamma_max",
                    reason: format!(
                        "clique {idx} of size {} has gamma_max below gamma_low {max_low}",
                        c.len()
                    ),
                });
            }
        }
        Ok(())
    }

    /// Restriction to the variable range `[base, base + len)`, remapping
    /// member ids to local offsets. Cliques crossing the range boundary are
    /// cut down to their intersection; cliques entirely outside vanish.
    pub(crate) fn restrict(&self, base: usize, len: usize) -> CliqueSet<T> {
        let mut out = CliqueSet::empty(self.params.clone());
        for (c, &src) in self.cliques.iter().zip(&self.sources) {
            let members: Vec<u32> = c
                .iter()
                .filter(|&&m| (m as usize) >= base && (m as usize) < base + len)
                .map(|&m| (m as usize - base) as u32)
                .collect();
            if !members.is_empty() {
                out.cliques.push(members);
                out.sources.push(src);
            }
        }
        out
    }

    /// For each variable, the indices of the cliques containing it.
    pub fn membership(&self, variables: usize) -> Vec<Vec<u32>> {
        let mut member_of = vec![Vec::new(); variables];
        for (idx, c) in self.cliques.iter().enumerate() {
            for &m in c {
                member_of[m as usize].push(idx as u32);
            }
        }
        member_of
    }
}

/// Expected clique cost conditioned on member `i` taking `label`:
/// `gamma_l * P + gamma_max * (1 - P)` with `P` the probability that all
/// other members take `label` under `q`.
///
/// `q` is the marginal field as a flat `(variables x labels)` slice.
pub fn expected_clique_cost<T: Scalar>(
    q: &[T],
    labels: usize,
    clique: &[u32],
    member: usize,
    label: usize,
    params: &PnPottsParams<T>,
) -> Result<f64> {
    if clique.is_empty() {
        return Err(Error::EmptyClique);
    }
    if !clique.iter().any(|&m| m as usize == member) {
        return Err(Error::NotCliqueMember { variable: member });
    }
    let p = if clique.len() > LOG_DOMAIN_THRESHOLD {
        let mut ln_sum = 0.0f64;
        let mut zeros = 0usize;
        for &m in clique {
            if m as usize == member {
                continue;
            }
            let v = q[m as usize * labels + label].wide();
            if v == 0.0 {
                zeros += 1;
            } else {
                ln_sum += v.ln();
            }
        }
        if zeros > 0 {
            0.0
        } else {
            ln_sum.exp()
        }
    } else {
        clique
            .iter()
            .filter(|&&m| m as usize != member)
            .map(|&m| q[m as usize * labels + label].wide())
            .product()
    };
    let g_low = params.gamma_low(label).wide();
    let g_max = params.gamma_max(clique.len());
    Ok(g_low * p + g_max * (1.0 - p))
}

/// The additive per-pixel cost field `h_i(l)`: the sum over cliques
/// containing `i` of the expected clique cost, flat `(variables x labels)`
/// in f64.
///
/// Exclusion products use per-clique prefix/suffix arrays per label, so no
/// division by potentially-zero marginals occurs; long cliques accumulate in
/// the log domain. Cost O(sum |c| * labels).
pub fn hoc_update_field<T: Scalar>(
    q: &[T],
    labels: usize,
    cliques: &CliqueSet<T>,
) -> Result<Vec<f64>> {
    let n = q.len() / labels;
    cliques.validate(n, labels)?;
    let mut h = vec![0.0f64; q.len()];
    let mut prefix: Vec<f64> = Vec::new();
    let mut suffix: Vec<f64> = Vec::new();
    let mut zeros_pre: Vec<u32> = Vec::new();
    let mut zeros_suf: Vec<u32> = Vec::new();

    for clique in cliques.iter() {
        let k = clique.len();
        let g_max = cliques.params().gamma_max(k);
        let log_domain = k > LOG_DOMAIN_THRESHOLD;
        prefix.resize(k + 1, 0.0);
        suffix.resize(k + 1, 0.0);
        if log_domain {
            zeros_pre.resize(k + 1, 0);
            zeros_suf.resize(k + 1, 0);
        }
        for label in 0..labels {
            let g_low = cliques.params().gamma_low(label).wide();
            if log_domain {
                prefix[0] = 0.0;
                zeros_pre[0] = 0;
                for (j, &m) in clique.iter().enumerate() {
                    let v = q[m as usize * labels + label].wide();
                    let (ln, z) = if v == 0.0 { (0.0, 1) } else { (v.ln(), 0) };
                    prefix[j + 1] = prefix[j] + ln;
                    zeros_pre[j + 1] = zeros_pre[j] + z;
                }
                suffix[k] = 0.0;
                zeros_suf[k] = 0;
                for (j, &m) in clique.iter().enumerate().rev() {
                    let v = q[m as usize * labels + label].wide();
                    let (ln, z) = if v == 0.0 { (0.0, 1) } else { (v.ln(), 0) };
                    suffix[j] = suffix[j + 1] + ln;
                    zeros_suf[j] = zeros_suf[j + 1] + z;
                }
                for (j, &m) in clique.iter().enumerate() {
                    let p = if zeros_pre[j] + zeros_suf[j + 1] > 0 {
                        0.0
                    } else {
                        (prefix[j] + suffix[j + 1]).exp()
                    };
                    h[m as usize * labels + label] += g_low * p + g_max * (1.0 - p);
                }
            } else {
                prefix[0] = 1.0;
                for (j, &m) in clique.iter().enumerate() {
                    prefix[j + 1] = prefix[j] * q[m as usize * labels + label].wide();
                }
                suffix[k] = 1.0;
                for (j, &m) in clique.iter().enumerate().rev() {
                    suffix[j] = suffix[j + 1] * q[m as usize * labels + label].wide();
                }
                for (j, &m) in clique.iter().enumerate() {
                    let p = prefix[j] * suffix[j + 1];
                    h[m as usize * labels + label] += g_low * p + g_max * (1.0 - p);
                }
            }
        }
    }
    Ok(h)
}

/// Exact clique cost of a labeling: `gamma_l` if unanimous on `l`, else
/// `gamma_max`.
pub fn clique_energy<T: Scalar>(
    clique: &[u32],
    labeling: &[Label],
    params: &PnPottsParams<T>,
) -> Result<f64> {
    if clique.is_empty() {
        return Err(Error::EmptyClique);
    }
    let first = labeling[clique[0] as usize];
    let unanimous = clique.iter().all(|&m| labeling[m as usize] == first);
    if unanimous {
        Ok(params.gamma_low(first as usize).wide())
    } else {
        Ok(params.gamma_max(clique.len()))
    }
}

/// Expectation of the clique cost under fully factorized marginals:
/// `sum_l gamma_l * P_l + gamma_max * (1 - sum_l P_l)` with
/// `P_l = prod_{j in c} Q_j(l)`. Used by the free-energy oracle.
pub fn expected_clique_energy<T: Scalar>(
    q: &[T],
    labels: usize,
    clique: &[u32],
    params: &PnPottsParams<T>,
) -> Result<f64> {
    if clique.is_empty() {
        return Err(Error::EmptyClique);
    }
    let g_max = params.gamma_max(clique.len());
    let mut total = g_max;
    for label in 0..labels {
        let p = if clique.len() > LOG_DOMAIN_THRESHOLD {
            let mut ln_sum = 0.0f64;
            let mut zero = false;
            for &m in clique {
                let v = q[m as usize * labels + label].wide();
                if v == 0.0 {
                    zero = true;
                    break;
                }
                ln_sum += v.ln();
            }
            if zero {
                0.0
            } else {
                ln_sum.exp()
            }
        } else {
            clique
                .iter()
                .map(|&m| q[m as usize * labels + label].wide())
                .product()
        };
        total += (params.gamma_low(label).wide() - g_max) * p;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn params(labels: usize, alpha: f64) -> PnPottsParams<f64> {
        PnPottsParams::uniform(labels, 0.0, alpha).unwrap()
    }

    fn random_marginals(n: usize, labels: usize, seed: u64) -> Vec<f64> {
        let mut rng = SplitMix64::new(seed);
        let mut q = vec![0.0f64; n * labels];
        for row in q.chunks_mut(labels) {
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = rng.next_f64() + 1e-3;
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        q
    }

    /// Exhaustive conditional expectation over all assignments of the other
    /// members; the oracle for `expected_clique_cost`.
    fn enumerate_expected(
        q: &[f64],
        labels: usize,
        clique: &[u32],
        member: usize,
        label: usize,
        params: &PnPottsParams<f64>,
    ) -> f64 {
        let others: Vec<u32> = clique
            .iter()
            .copied()
            .filter(|&m| m as usize != member)
            .collect();
        let mut total = 0.0;
        let combos = labels.pow(others.len() as u32);
        for combo in 0..combos {
            let mut weight = 1.0;
            let mut c = combo;
            let mut unanimous = true;
            for &m in &others {
                let lm = c % labels;
                c /= labels;
                weight *= q[m as usize * labels + lm];
                unanimous &= lm == label;
            }
            let cost = if unanimous {
                params.gamma_low(label)
            } else {
                params.gamma_max(clique.len())
            };
            total += weight * cost;
        }
        total
    }

    #[test]
    fn pair_clique_half_probability() {
        // Clique {0, 1}, Q_1 = (0.5, 0.5), gamma_low = 0, gamma_max = 1
        // (alpha = 0.5, |c| = 2): conditioning on either label gives 0.5.
        let q = vec![1.0, 0.0, 0.5, 0.5];
        let p = params(2, 0.5);
        for label in 0..2 {
            let c = expected_clique_cost(&q, 2, &[0, 1], 0, label, &p).unwrap();
            assert!((c - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_partner_gives_gamma_low() {
        let q = vec![0.3, 0.7, 1.0, 0.0];
        let p = PnPottsParams::new(vec![0.125, 0.25], 0.5).unwrap();
        let c = expected_clique_cost(&q, 2, &[0, 1], 0, 0, &p).unwrap();
        assert!((c - 0.125).abs() < 1e-12);
    }

    #[test]
    fn singleton_clique_pays_gamma_low() {
        let q = vec![0.5, 0.5];
        let p = PnPottsParams::new(vec![0.5, 0.75], 1.0).unwrap();
        let c = expected_clique_cost(&q, 2, &[0], 0, 1, &p).unwrap();
        assert!((c - 0.75).abs() < 1e-12, "empty product must give 1");
    }

    #[test]
    fn rejects_non_member_and_empty() {
        let q = vec![0.5, 0.5, 0.5, 0.5];
        let p = params(2, 0.5);
        assert!(matches!(
            expected_clique_cost(&q, 2, &[1], 0, 0, &p),
            Err(Error::NotCliqueMember { variable: 0 })
        ));
        assert!(matches!(
            expected_clique_cost(&q, 2, &[], 0, 0, &p),
            Err(Error::EmptyClique)
        ));
    }

    #[test]
    fn update_field_of_empty_set_is_zero() {
        let q = random_marginals(6, 3, 1);
        let set = CliqueSet::empty(params(3, 0.5));
        let h = hoc_update_field(&q, 3, &set).unwrap();
        assert!(h.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn layers_add_on_shared_pixels() {
        let q = random_marginals(4, 2, 2);
        let mut a = CliqueSet::empty(params(2, 0.5));
        a.push(vec![0, 1], CliqueSource::Superpixel { layer: 0 })
            .unwrap();
        let mut b = CliqueSet::empty(params(2, 0.5));
        b.push(vec![0, 2], CliqueSource::Superpixel { layer: 1 })
            .unwrap();
        let mut c = CliqueSet::empty(params(2, 0.5));
        c.push(vec![0, 3], CliqueSource::SupervoxelSlice).unwrap();

        let ha = hoc_update_field(&q, 2, &a).unwrap();
        let hb = hoc_update_field(&q, 2, &b).unwrap();
        let hc = hoc_update_field(&q, 2, &c).unwrap();
        let mut all = a.clone();
        all.extend(b);
        all.extend(c);
        let h = hoc_update_field(&q, 2, &all).unwrap();
        for i in 0..h.len() {
            assert!((h[i] - (ha[i] + hb[i] + hc[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        let labels = 3;
        let q = random_marginals(8, labels, 3);
        let clique: Vec<u32> = (0..8).collect();
        let p = params(labels, 0.05);
        for member in [0usize, 3, 7] {
            for label in 0..labels {
                let fast = expected_clique_cost(&q, labels, &clique, member, label, &p).unwrap();
                let slow = enumerate_expected(&q, labels, &clique, member, label, &p);
                assert!(
                    (fast - slow).abs() < 1e-9,
                    "member {member} label {label}: {fast} vs {slow}"
                );
            }
        }
        // The field accumulates the same numbers.
        let mut set = CliqueSet::empty(p.clone());
        set.push(clique.clone(), CliqueSource::Supervoxel).unwrap();
        let h = hoc_update_field(&q, labels, &set).unwrap();
        for &m in &clique {
            for label in 0..labels {
                let slow = enumerate_expected(&q, labels, &clique, m as usize, label, &p);
                assert!((h[m as usize * labels + label] - slow).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn clique_energy_examples() {
        let labeling: Vec<u8> = vec![2, 2, 2, 2];
        let p = PnPottsParams::new(vec![0.0, 0.0, 0.1], 0.05).unwrap();
        let e = clique_energy(&[0, 1, 2, 3], &labeling, &p).unwrap();
        assert!((e - 0.1).abs() < 1e-12);

        let mixed: Vec<u8> = (0..40).map(|i| (i % 3) as u8).collect();
        let p3 = params(3, 0.05);
        let clique: Vec<u32> = (0..40).collect();
        let e = clique_energy(&clique, &mixed, &p3).unwrap();
        assert!((e - 2.0).abs() < 1e-12, "0.05 * 40 = 2.0");

        let single = clique_energy(&[5], &mixed, &p3).unwrap();
        assert!((single - 0.0).abs() < 1e-12);
    }

    #[test]
    fn long_clique_underflow_safe() {
        // 10^4 members at Q = 0.99: the exclusion product is ~exp(-100.5);
        // the log-domain path must agree with direct log evaluation.
        let n = 10_000usize;
        let labels = 2;
        let mut q = vec![0.0f64; n * labels];
        for row in q.chunks_mut(labels) {
            row[0] = 0.99;
            row[1] = 0.01;
        }
        let clique: Vec<u32> = (0..n as u32).collect();
        let p = params(labels, 0.001);
        let cost = expected_clique_cost(&q, labels, &clique, 0, 0, &p).unwrap();
        let p_ref = ((n - 1) as f64 * 0.99f64.ln()).exp();
        let expect = p.gamma_max(n) * (1.0 - p_ref);
        assert!(
            (cost - expect).abs() <= 1e-6 * expect.abs(),
            "{cost} vs {expect}"
        );
        // Field path crosses the log-domain threshold too.
        let mut set = CliqueSet::empty(p.clone());
        set.push(clique, CliqueSource::Supervoxel).unwrap();
        let h = hoc_update_field(&q, labels, &set).unwrap();
        assert!((h[0] - expect).abs() <= 1e-6 * expect.abs());
    }

    #[test]
    fn consistency_across_conditioning_member() {
        // E_Q[psi_c] computed as sum_l Q_i(l) * expected(i, l) must not
        // depend on which member i is conditioned on, and must equal the
        // direct expectation.
        let labels = 3;
        let q = random_marginals(6, labels, 11);
        let clique: Vec<u32> = vec![0, 2, 3, 5];
        let p = params(labels, 0.07);
        let direct = expected_clique_energy(&q, labels, &clique, &p).unwrap();
        for &m in &clique {
            let via: f64 = (0..labels)
                .map(|l| {
                    q[m as usize * labels + l]
                        * expected_clique_cost(&q, labels, &clique, m as usize, l, &p).unwrap()
                })
                .sum();
            assert!((via - direct).abs() < 1e-9, "member {m}: {via} vs {direct}");
        }
    }

    proptest! {
        #[test]
        fn cost_bounded_by_gammas(seed in 0u64..500, size in 2usize..9, labels in 2usize..5) {
            let q = random_marginals(size, labels, seed);
            let clique: Vec<u32> = (0..size as u32).collect();
            let p = PnPottsParams::uniform(labels, 0.01, 0.05).unwrap();
            let g_max = p.gamma_max(size);
            for label in 0..labels {
                let c = expected_clique_cost(&q, labels, &clique, 0, label, &p).unwrap();
                prop_assert!(c >= 0.01 - 1e-12 && c <= g_max + 1e-12);
            }
        }

        #[test]
        fn field_matches_per_member_costs(seed in 0u64..200, size in 2usize..7) {
            let labels = 3;
            let q = random_marginals(size, labels, seed);
            let clique: Vec<u32> = (0..size as u32).collect();
            let p = PnPottsParams::uniform(labels, 0.0, 0.05).unwrap();
            let mut set = CliqueSet::empty(p.clone());
            set.push(clique.clone(), CliqueSource::Supervoxel).unwrap();
            let h = hoc_update_field(&q, labels, &set).unwrap();
            for &m in &clique {
                for label in 0..labels {
                    let c = expected_clique_cost(&q, labels, &clique, m as usize, label, &p).unwrap();
                    prop_assert!((h[m as usize * labels + label] - c).abs() < 1e-9);
                }
            }
        }
    }
}
