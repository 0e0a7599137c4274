//! Exact compositional kernels.
//!
//! [`exact_kernel`] runs the bottom-up recurrence
//! `k_v = sigma_v(mean_{u in in(v)} k_u)`. [`FeatureDistribution`] is an
//! independent check: it enumerates the sampler's probability tree and
//! averages `psi(x) conj(psi(x'))` over the resulting features directly.

use std::collections::BTreeMap;
use std::io::Write;

use crate::base_spaces::{base_kernel, BaseParam};
use crate::embedding::{empirical_kernel, eval_feature, Embedder, InputRecord, Mode};
use crate::error::{Error, Result};
use crate::features::{build_registry, FeatureAtom, FeatureExpr};
use crate::par::{self, Execution};
use crate::skeleton::{Node, NodeId, Skeleton};

/// Averaged child kernels may leave `[-1, 1]` by this much before it is an error.
pub const CLAMP_SLACK: f64 = 1e-9;

fn clamp_rho(rho: f64, node: NodeId) -> Result<f64> {
    if rho.abs() <= 1.0 {
        Ok(rho)
    } else if rho.abs() <= 1.0 + CLAMP_SLACK {
        Ok(rho.clamp(-1.0, 1.0))
    } else {
        Err(Error::Domain(format!(
            "kernel argument {rho} at node {node} is outside [-1, 1]"
        )))
    }
}

/// The compositional kernel `k_S(x, x')`.
pub fn exact_kernel(skeleton: &Skeleton, x: &InputRecord, y: &InputRecord) -> Result<f64> {
    x.check(skeleton)?;
    y.check(skeleton)?;
    let mut k = vec![0.0; skeleton.len()];
    for &v in skeleton.topo_order() {
        k[v.index()] = match skeleton.node_unchecked(v) {
            Node::Input(space) => base_kernel(space, &x.coords[v.index()], &y.coords[v.index()])?,
            Node::Internal(node) => {
                let avg = node.inputs.iter().map(|u| k[u.index()]).sum::<f64>() / node.inputs.len() as f64;
                node.activation.eval(clamp_rho(avg, v)?)
            }
        };
    }
    Ok(k[skeleton.output().index()])
}

/// Row-major `n x n` matrix of exact kernel values.
pub fn kernel_matrix(skeleton: &Skeleton, xs: &[InputRecord], exec: Execution) -> Result<Vec<f64>> {
    let n = xs.len();
    let upper = par::map_range(exec, n, |i| {
        (i..n)
            .map(|j| exact_kernel(skeleton, &xs[i], &xs[j]))
            .collect::<Result<Vec<f64>>>()
    });
    let mut out = vec![0.0; n * n];
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row?.into_iter().enumerate() {
            let j = i + off;
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Ok(out)
}

pub fn write_matrix_csv<W: Write>(out: W, n: usize, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for i in 0..n {
        w.write_record(values[i * n..(i + 1) * n].iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Monte Carlo estimate from a fresh `q`-draw registry, complex features.
pub fn mc_kernel(skeleton: &Skeleton, x: &InputRecord, y: &InputRecord, q: usize, seed: u64) -> Result<f64> {
    mc_kernel_with(skeleton, x, y, q, seed, Mode::Complex)
}

pub fn mc_kernel_with(
    skeleton: &Skeleton,
    x: &InputRecord,
    y: &InputRecord,
    q: usize,
    seed: u64,
    mode: Mode,
) -> Result<f64> {
    let registry = build_registry(skeleton, q, seed, Execution::default())?;
    let emb = Embedder::new(skeleton, &registry, mode)?;
    empirical_kernel(&emb.embed(x)?, &emb.embed(y)?)
}

/// Kernel value from exact enumeration, with a bound on the probability
/// mass the enumeration left out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnumeratedKernel {
    pub value: f64,
    pub truncation_bound: f64,
}

/// Degrees are cut where the activation's cumulative mass reaches this.
const DEGREE_MASS: f64 = 1.0 - 1e-10;
/// Enumeration branches below this probability are dropped (and bounded).
const PRUNE: f64 = 1e-18;
/// Enumeration gives up beyond this many live states.
const MAX_STATES: usize = 2_000_000;

/// The exact distribution of sampled features over a discrete skeleton,
/// up to truncation.
#[derive(Debug, Clone)]
pub struct FeatureDistribution {
    features: Vec<(FeatureExpr, f64)>,
    truncation_bound: f64,
}

type StateKey = (Vec<u32>, Vec<(u32, u32)>);

impl FeatureDistribution {
    /// Enumerates degree choices, child choices and base parameters.
    ///
    /// A node's degrees stop at `degree_cap` or where its cumulative mass
    /// reaches `1 - 1e-10`, whichever comes first.
    pub fn enumerate(skeleton: &Skeleton, degree_cap: usize) -> Result<Self> {
        let mut params: Vec<Vec<(BaseParam, f64)>> = Vec::with_capacity(skeleton.n_inputs());
        let mut bounds = Vec::with_capacity(skeleton.n_inputs());
        for space in skeleton.input_spaces() {
            params.push(
                space
                    .enumerate_params()
                    .ok_or_else(|| Error::UnsupportedSpace(format!("{space:?}")))?,
            );
            bounds.push(space.bound());
        }

        let mut dropped = 0.0;
        let mut terminal: BTreeMap<Vec<(u32, u32)>, f64> = BTreeMap::new();
        let mut frontier: BTreeMap<StateKey, f64> = BTreeMap::new();
        frontier.insert((vec![skeleton.output().0], Vec::new()), 1.0);

        let acc_bound = |atoms: &[(u32, u32)]| -> f64 { atoms.iter().map(|&(n, _)| bounds[n as usize - 1]).product() };

        while !frontier.is_empty() {
            let mut next: BTreeMap<StateKey, f64> = BTreeMap::new();
            for ((mut pending, atoms), p) in frontier {
                let Some(v) = pending.pop() else {
                    *terminal.entry(atoms).or_insert(0.0) += p;
                    continue;
                };
                let mut push = |pending: Vec<u32>, atoms: Vec<(u32, u32)>, q: f64| {
                    if q < PRUNE {
                        dropped += q * acc_bound(&atoms);
                    } else {
                        *next.entry((pending, atoms)).or_insert(0.0) += q;
                    }
                };
                match skeleton.node_unchecked(NodeId(v)) {
                    Node::Input(_) => {
                        for (k, (_, w)) in params[v as usize - 1].iter().enumerate() {
                            let mut a = atoms.clone();
                            let pos = a.partition_point(|x| *x <= (v, k as u32));
                            a.insert(pos, (v, k as u32));
                            push(pending.clone(), a, p * w);
                        }
                    }
                    Node::Internal(node) => {
                        let coeffs = node.activation.coeffs();
                        let mut cum = 0.0;
                        let mut kept = 0.0;
                        for (l, &a_l) in coeffs.iter().enumerate() {
                            if l > degree_cap || cum >= DEGREE_MASS {
                                break;
                            }
                            cum += a_l;
                            if a_l == 0.0 {
                                continue;
                            }
                            kept += a_l;
                            for (counts, w) in multinomial(l, node.inputs.len()) {
                                let mut pend = pending.clone();
                                for (u, c) in node.inputs.iter().zip(&counts) {
                                    pend.extend(std::iter::repeat_n(u.0, *c));
                                }
                                pend.sort_unstable();
                                push(pend, atoms.clone(), p * a_l * w);
                            }
                        }
                        dropped += p * (1.0 - kept).max(0.0) * acc_bound(&atoms);
                    }
                }
            }
            if next.len() + terminal.len() > MAX_STATES {
                return Err(Error::Parameter(format!(
                    "enumeration exceeds {MAX_STATES} states; lower degree_cap or use a smaller skeleton"
                )));
            }
            frontier = next;
        }

        let features = terminal
            .into_iter()
            .map(|(atoms, p)| {
                let expr = FeatureExpr::new(
                    atoms
                        .iter()
                        .map(|&(n, k)| FeatureAtom {
                            node: NodeId(n),
                            param: params[n as usize - 1][k as usize].0.clone(),
                        })
                        .collect(),
                );
                (expr, p)
            })
            .collect();
        Ok(Self {
            features,
            truncation_bound: dropped,
        })
    }

    pub fn features(&self) -> &[(FeatureExpr, f64)] {
        &self.features
    }

    pub fn truncation_bound(&self) -> f64 {
        self.truncation_bound
    }

    pub fn total_mass(&self) -> f64 {
        self.features.iter().map(|(_, p)| p).sum()
    }

    /// `sum_f P(f) Re(psi_f(x) conj(psi_f(x')))`.
    pub fn kernel(&self, skeleton: &Skeleton, x: &InputRecord, y: &InputRecord) -> Result<EnumeratedKernel> {
        x.check(skeleton)?;
        y.check(skeleton)?;
        let mut value = 0.0;
        for (f, p) in &self.features {
            let a = eval_feature(skeleton, f, x)?;
            let b = eval_feature(skeleton, f, y)?;
            value += p * (a.re * b.re + a.im * b.im);
        }
        Ok(EnumeratedKernel {
            value,
            truncation_bound: self.truncation_bound,
        })
    }
}

/// Brute-force kernel by enumerating the sampler's probability tree.
pub fn enumerate_kernel(
    skeleton: &Skeleton,
    x: &InputRecord,
    y: &InputRecord,
    degree_cap: usize,
) -> Result<EnumeratedKernel> {
    FeatureDistribution::enumerate(skeleton, degree_cap)?.kernel(skeleton, x, y)
}

/// All ways to place `l` uniform draws into `k` bins, with probabilities.
fn multinomial(l: usize, k: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    let mut counts = vec![0usize; k];
    let log_fact: Vec<f64> = (0..=l)
        .scan(0.0, |acc, i| {
            if i > 0 {
                *acc += (i as f64).ln();
            }
            Some(*acc)
        })
        .collect();
    let base = -(l as f64) * (k as f64).ln();
    fn rec(
        pos: usize,
        left: usize,
        counts: &mut Vec<usize>,
        out: &mut Vec<(Vec<usize>, f64)>,
        log_fact: &[f64],
        base: f64,
    ) {
        if pos + 1 == counts.len() {
            counts[pos] = left;
            let lp = log_fact[log_fact.len() - 1] - counts.iter().map(|&c| log_fact[c]).sum::<f64>() + base;
            out.push((counts.clone(), lp.exp()));
            return;
        }
        for c in 0..=left {
            counts[pos] = c;
            rec(pos + 1, left - c, counts, out, log_fact, base);
        }
    }
    rec(0, l, &mut counts, &mut out, &log_fact, base);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_spaces::{BaseSpace, BaseValue};
    use crate::rng::RandomStream;
    use crate::skeleton::ActivationSpec;

    fn circles(phases: &[f64]) -> InputRecord {
        InputRecord::new(phases.iter().map(|&t| BaseValue::circle_from_phase(t)).collect())
    }

    #[test]
    fn multinomial_sums_to_one() {
        for (l, k) in [(0, 3), (1, 1), (5, 2), (7, 3)] {
            let total: f64 = multinomial(l, k).iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-13);
        }
        assert_eq!(multinomial(3, 2).len(), 4);
    }

    #[test]
    fn diagonal_is_one() {
        let s = Skeleton::layered(
            vec![BaseSpace::Circle; 3],
            &[2, 1],
            ActivationSpec::Relu { max_degree: 32 },
        )
        .unwrap();
        let x = circles(&[0.1, 2.0, -1.0]);
        assert!((exact_kernel(&s, &x, &x).unwrap() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn shallow_exp_kernel_closed_form() {
        let c = 0.25;
        let s = Skeleton::flat(vec![BaseSpace::Circle; 3], ActivationSpec::Exp { c }).unwrap();
        // every coordinate pair at the same angle gives rho = cos(0.7)
        let x = circles(&[0.0, 1.0, 2.0]);
        let y = circles(&[0.7, 1.7, 2.7]);
        let rho = 0.7f64.cos();
        let k = exact_kernel(&s, &x, &y).unwrap();
        assert!((k - (c * (rho - 1.0)).exp()).abs() < 1e-15);
    }

    #[test]
    fn single_input_is_base_kernel() {
        let space = BaseSpace::Categorical { n: 4 };
        let s = Skeleton::single_input(space.clone()).unwrap();
        let x = InputRecord::new(vec![BaseValue::Categorical(2)]);
        let y = InputRecord::new(vec![BaseValue::Categorical(3)]);
        assert_eq!(exact_kernel(&s, &x, &y).unwrap(), 0.0);
        let e = enumerate_kernel(&s, &x, &y, 30).unwrap();
        assert_eq!(e.truncation_bound, 0.0);
        assert!(e.value.abs() < 1e-15);
        assert!((enumerate_kernel(&s, &x, &x, 30).unwrap().value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_output_enumerates_to_one() {
        let s = Skeleton::flat(
            vec![BaseSpace::Circle; 2],
            ActivationSpec::Explicit { coeffs: vec![1.0] },
        )
        .unwrap();
        let x = circles(&[0.0, 1.0]);
        let y = circles(&[2.0, 3.0]);
        assert_eq!(enumerate_kernel(&s, &x, &y, 30).unwrap().value, 1.0);
    }

    #[test]
    fn enumeration_matches_recurrence_on_binary_exp() {
        let s = Skeleton::flat(vec![BaseSpace::Binary; 2], ActivationSpec::Exp { c: 1.0 }).unwrap();
        let dist = FeatureDistribution::enumerate(&s, 30).unwrap();
        for (a, b) in [(1i8, 1i8), (1, -1), (-1, -1)] {
            for (c, d) in [(1i8, -1i8), (-1, -1)] {
                let x = InputRecord::new(vec![BaseValue::Binary(a), BaseValue::Binary(b)]);
                let y = InputRecord::new(vec![BaseValue::Binary(c), BaseValue::Binary(d)]);
                let e = dist.kernel(&s, &x, &y).unwrap();
                let k = exact_kernel(&s, &x, &y).unwrap();
                assert!((e.value - k).abs() <= 1e-8 + e.truncation_bound, "{} vs {k}", e.value);
            }
        }
    }

    #[test]
    fn continuous_space_is_unsupported() {
        let s = Skeleton::single_input(BaseSpace::Gaussian { d: 2, a: 1.0 }).unwrap();
        assert!(matches!(
            FeatureDistribution::enumerate(&s, 10),
            Err(Error::UnsupportedSpace(_))
        ));
    }

    #[test]
    fn mc_examples() {
        let c = Skeleton::flat(vec![BaseSpace::Circle], ActivationSpec::Explicit { coeffs: vec![1.0] }).unwrap();
        let x = circles(&[0.3]);
        let y = circles(&[2.3]);
        assert_eq!(mc_kernel(&c, &x, &y, 1, 0).unwrap(), 1.0);

        let b = Skeleton::single_input(BaseSpace::Binary).unwrap();
        let x = InputRecord::new(vec![BaseValue::Binary(1)]);
        let y = InputRecord::new(vec![BaseValue::Binary(-1)]);
        for q in [1, 7, 100] {
            assert_eq!(mc_kernel(&b, &x, &y, q, 3).unwrap(), exact_kernel(&b, &x, &y).unwrap());
        }
    }

    #[test]
    fn mc_shallow_exp_is_accurate() {
        let s = Skeleton::flat(vec![BaseSpace::Circle; 5], ActivationSpec::Exp { c: 0.25 }).unwrap();
        let mut rng = RandomStream::new(8);
        let mut pass = 0;
        for t in 0..100 {
            let x = circles(
                &(0..5)
                    .map(|_| rng.uniform() * std::f64::consts::TAU)
                    .collect::<Vec<_>>(),
            );
            let y = circles(
                &(0..5)
                    .map(|_| rng.uniform() * std::f64::consts::TAU)
                    .collect::<Vec<_>>(),
            );
            let mc = mc_kernel(&s, &x, &y, 4096, t).unwrap();
            if (mc - exact_kernel(&s, &x, &y).unwrap()).abs() <= 0.05 {
                pass += 1;
            }
        }
        assert!(pass >= 99, "{pass}");
    }

    #[test]
    fn series_and_closed_form_agree_for_exp() {
        for c in [0.25, 1.0, 3.0] {
            let act = crate::skeleton::ConjugateActivation::exp_scaled(c).unwrap();
            for i in 0..=40 {
                let rho = -1.0 + i as f64 / 20.0;
                assert!((act.eval(rho) - act.eval_series(rho)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn drift_beyond_slack_is_an_error() {
        assert_eq!(clamp_rho(1.0 + 5e-10, NodeId(3)).unwrap(), 1.0);
        assert!(clamp_rho(1.0 + 1e-6, NodeId(3)).is_err());
    }

    #[test]
    fn matrix_is_symmetric_with_unit_diagonal() {
        let s = Skeleton::flat(vec![BaseSpace::Circle; 2], ActivationSpec::Exp { c: 1.0 }).unwrap();
        let xs: Vec<InputRecord> = (0..6).map(|i| circles(&[i as f64, 0.5 * i as f64])).collect();
        let k = kernel_matrix(&s, &xs, Execution::Parallel).unwrap();
        assert_eq!(k, kernel_matrix(&s, &xs, Execution::Sequential).unwrap());
        for i in 0..6 {
            assert!((k[i * 6 + i] - 1.0).abs() < 1e-12);
            for j in 0..6 {
                assert_eq!(k[i * 6 + j], k[j * 6 + i]);
            }
        }
    }
}
