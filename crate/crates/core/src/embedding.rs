//! Evaluating a feature registry on inputs.
//!
//! Entry `d` of a registry with multiplicity `m_d` out of `q` draws becomes
//! coordinate `sqrt(m_d / q) * psi_d(x)`, so
//! `sum_d (m_d / q) psi_d(x) conj(psi_d(x'))` is exactly the average over the
//! raw draws. Real mode replaces `psi = R e^{i theta}` by
//! `sqrt(2) R cos(theta + b_d)` with `b_d` in `{0, pi/2}` fixed per entry.

use std::collections::HashMap;
use std::io::Write;

use num_complex::Complex64;

use crate::base_spaces::{eval_unchecked, BaseValue};
use crate::error::{Error, Result};
use crate::features::{FeatureExpr, FeatureRegistry};
use crate::par::{self, Execution};
use crate::rng::RandomStream;
use crate::skeleton::Skeleton;

/// A point of the product input space, one coordinate per input node.
#[derive(Debug, Clone, PartialEq)]
pub struct InputRecord {
    pub coords: Vec<BaseValue>,
}

impl InputRecord {
    pub fn new(coords: Vec<BaseValue>) -> Self {
        Self { coords }
    }

    /// Checks arity and every coordinate's domain.
    pub fn check(&self, skeleton: &Skeleton) -> Result<()> {
        if self.coords.len() != skeleton.n_inputs() {
            return Err(Error::Domain(format!(
                "record has {} coordinates, skeleton has {} inputs",
                self.coords.len(),
                skeleton.n_inputs()
            )));
        }
        for (space, x) in skeleton.input_spaces().zip(&self.coords) {
            space.check_value(x)?;
        }
        Ok(())
    }
}

/// Product of the feature's base features at `x`; `1` for the empty feature.
pub fn eval_feature(skeleton: &Skeleton, expr: &FeatureExpr, x: &InputRecord) -> Result<Complex64> {
    let mut acc = Complex64::new(1.0, 0.0);
    for atom in expr.atoms() {
        let space = skeleton
            .input_space(atom.node)
            .ok_or_else(|| Error::Domain(format!("atom on non-input node {}", atom.node)))?;
        let value = x
            .coords
            .get(atom.node.index())
            .ok_or_else(|| Error::Domain(format!("record lacks coordinate {}", atom.node)))?;
        acc *= crate::base_spaces::eval_base_feature(space, &atom.param, value)?;
    }
    Ok(acc)
}

/// How registry features are turned into coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Complex,
    /// Real features with phase shifts drawn from this seed.
    Real {
        seed: u64,
    },
}

/// An embedded input. `values` already include the `sqrt(m/q)` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<Complex64>,
    pub weights: Vec<f64>,
    pub phase_shifts: Option<Vec<f64>>,
    mode: Mode,
    registry: String,
}

impl Embedding {
    pub fn real_mode(&self) -> bool {
        matches!(self.mode, Mode::Real { .. })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Real parts, for real-mode embeddings.
    pub fn real_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shift {
    Zero,
    HalfPi,
}

/// Precomputed evaluation plan for one registry: distinct atoms are
/// evaluated once per record and shared between entries.
#[derive(Debug, Clone)]
pub struct Embedder<'a> {
    skeleton: &'a Skeleton,
    atoms: Vec<(
        usize,
        &'a crate::base_spaces::BaseSpace,
        &'a crate::base_spaces::BaseParam,
    )>,
    entries: Vec<Vec<usize>>,
    weights: Vec<f64>,
    shifts: Option<Vec<Shift>>,
    mode: Mode,
    registry: String,
}

impl<'a> Embedder<'a> {
    pub fn new(skeleton: &'a Skeleton, registry: &'a FeatureRegistry, mode: Mode) -> Result<Self> {
        if registry.skeleton_hash() != skeleton.fingerprint() {
            return Err(Error::Usage("registry was built for a different skeleton".into()));
        }
        let mut index: HashMap<(u32, Vec<u8>), usize> = HashMap::new();
        let mut atoms = Vec::new();
        let mut entries = Vec::with_capacity(registry.len());
        for e in registry.entries() {
            let mut ids = Vec::with_capacity(e.expr.len());
            for a in e.expr.atoms() {
                let mut key = Vec::new();
                a.param.encode_into(&mut key);
                let next = atoms.len();
                let id = *index.entry((a.node.0, key)).or_insert(next);
                if id == next {
                    let space = skeleton
                        .input_space(a.node)
                        .ok_or_else(|| Error::Domain(format!("atom on non-input node {}", a.node)))?;
                    space.validate_param(&a.param)?;
                    atoms.push((a.node.index(), space, &a.param));
                }
                ids.push(id);
            }
            entries.push(ids);
        }
        let q = registry.draws() as f64;
        let weights = registry
            .entries()
            .iter()
            .map(|e| (e.multiplicity as f64 / q).sqrt())
            .collect();
        let shifts = match mode {
            Mode::Complex => None,
            Mode::Real { seed } => {
                let mut rng = RandomStream::new(seed);
                Some(
                    (0..registry.len())
                        .map(|_| if rng.coin() { Shift::HalfPi } else { Shift::Zero })
                        .collect(),
                )
            }
        };
        Ok(Self {
            skeleton,
            atoms,
            entries,
            weights,
            shifts,
            mode,
            registry: registry.fingerprint(),
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    /// Unweighted complex feature values `psi_d(x)`.
    pub fn raw_features(&self, x: &InputRecord) -> Result<Vec<Complex64>> {
        x.check(self.skeleton)?;
        let atom_values = self
            .atoms
            .iter()
            .map(|&(i, space, param)| eval_unchecked(space, param, &x.coords[i]))
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .entries
            .iter()
            .map(|ids| {
                ids.iter()
                    .fold(Complex64::new(1.0, 0.0), |acc, &k| acc * atom_values[k])
            })
            .collect())
    }

    pub fn embed(&self, x: &InputRecord) -> Result<Embedding> {
        let raw = self.raw_features(x)?;
        let values = match &self.shifts {
            None => raw.iter().zip(&self.weights).map(|(v, w)| v * *w).collect(),
            Some(shifts) => raw
                .iter()
                .zip(&self.weights)
                .zip(shifts)
                .map(|((v, w), s)| Complex64::new(w * real_feature(*v, *s), 0.0))
                .collect(),
        };
        Ok(Embedding {
            values,
            weights: self.weights.clone(),
            phase_shifts: self.shifts.as_ref().map(|s| {
                s.iter()
                    .map(|b| match b {
                        Shift::Zero => 0.0,
                        Shift::HalfPi => std::f64::consts::FRAC_PI_2,
                    })
                    .collect()
            }),
            mode: self.mode,
            registry: self.registry.clone(),
        })
    }

    pub fn embed_batch(&self, xs: &[InputRecord], exec: Execution) -> Result<Vec<Embedding>> {
        par::map_slice(exec, xs, |x| self.embed(x)).into_iter().collect()
    }

    /// Real-mode embeddings as an `m x D` row-major matrix.
    pub fn real_matrix(&self, xs: &[InputRecord], exec: Execution) -> Result<nalgebra::DMatrix<f64>> {
        if self.shifts.is_none() {
            return Err(Error::Usage("real matrix requires real mode".into()));
        }
        let rows = self.embed_batch(xs, exec)?;
        let d = self.dim();
        Ok(nalgebra::DMatrix::from_fn(rows.len(), d, |i, j| rows[i].values[j].re))
    }
}

/// `sqrt(2) R cos(theta + b)` for `v = R e^{i theta}`.
fn real_feature(v: Complex64, shift: Shift) -> f64 {
    let r2 = std::f64::consts::SQRT_2;
    match shift {
        Shift::Zero => r2 * v.re,
        Shift::HalfPi => -r2 * v.im,
    }
}

/// Embeds a single record; builds an [`Embedder`] each call.
pub fn embed(skeleton: &Skeleton, registry: &FeatureRegistry, x: &InputRecord, mode: Mode) -> Result<Embedding> {
    Embedder::new(skeleton, registry, mode)?.embed(x)
}

/// `sum_d Re(e_d conj(e'_d))`.
pub fn empirical_kernel(e: &Embedding, f: &Embedding) -> Result<f64> {
    if e.registry != f.registry || e.mode != f.mode || e.values.len() != f.values.len() {
        return Err(Error::Usage(
            "embeddings come from different registries or modes".into(),
        ));
    }
    Ok(e.values
        .iter()
        .zip(&f.values)
        .map(|(a, b)| a.re * b.re + a.im * b.im)
        .sum())
}

/// Writes real-mode embeddings as CSV, one row per input.
pub fn write_embeddings_csv<W: Write>(out: W, rows: &[Embedding]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = rows.first().map_or(0, |e| e.dim());
    w.write_record((0..d).map(|j| format!("f{j}")))?;
    for e in rows {
        if !e.real_mode() {
            return Err(Error::Usage("CSV export requires real-mode embeddings".into()));
        }
        w.write_record(e.values.iter().map(|v| v.re.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
