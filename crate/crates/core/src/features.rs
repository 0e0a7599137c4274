//! Random feature sampling over a skeleton and the de-duplicating registry.

use std::cmp::Ordering;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::base_spaces::{sample_base_param, BaseParam};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rng::RandomStream;
use crate::skeleton::{hex, Node, NodeId, Skeleton};

/// One base feature: input node plus sampled base parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAtom {
    pub node: NodeId,
    pub param: BaseParam,
}

impl FeatureAtom {
    fn key(&self) -> Vec<u8> {
        let mut buf = self.node.0.to_be_bytes().to_vec();
        self.param.encode_into(&mut buf);
        buf
    }
}

/// A sampled feature: the product of its atoms. Atoms are kept sorted by
/// canonical encoding; the empty expression is the constant feature `1`.
#[derive(Debug, Clone)]
pub struct FeatureExpr {
    atoms: Vec<FeatureAtom>,
    key: Box<[u8]>,
}

impl FeatureExpr {
    pub fn new(atoms: Vec<FeatureAtom>) -> Self {
        let mut keyed: Vec<(Vec<u8>, FeatureAtom)> = atoms.into_iter().map(|a| (a.key(), a)).collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        let mut key = Vec::new();
        for (k, _) in &keyed {
            key.extend_from_slice(&(k.len() as u32).to_be_bytes());
            key.extend_from_slice(k);
        }
        Self {
            atoms: keyed.into_iter().map(|(_, a)| a).collect(),
            key: key.into_boxed_slice(),
        }
    }

    pub fn constant() -> Self {
        Self::new(Vec::new())
    }

    pub fn atoms(&self) -> &[FeatureAtom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Canonical byte encoding; equal iff the expressions are equal.
    pub fn canonical_key(&self) -> &[u8] {
        &self.key
    }
}

impl PartialEq for FeatureExpr {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for FeatureExpr {}

impl PartialOrd for FeatureExpr {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FeatureExpr {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}

impl Hash for FeatureExpr {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key.hash(state)
    }
}

/// Samples one random feature rooted at `node`.
///
/// Input nodes yield a single atom. Internal nodes draw a degree `l` from
/// their activation and then `l` independent uniform children, each
/// expanded recursively; the result is the union of the children's atoms.
pub fn rfss_sample(skeleton: &Skeleton, node: NodeId, rng: &mut RandomStream) -> Result<FeatureExpr> {
    skeleton.node(node)?;
    Ok(sample_from(skeleton, node, rng))
}

pub(crate) fn sample_from(skeleton: &Skeleton, node: NodeId, rng: &mut RandomStream) -> FeatureExpr {
    let mut atoms = Vec::new();
    let mut stack = vec![node];
    while let Some(v) = stack.pop() {
        match skeleton.node_unchecked(v) {
            Node::Input(space) => atoms.push(FeatureAtom {
                node: v,
                param: sample_base_param(space, rng),
            }),
            Node::Internal(n) => {
                let l = n.activation.sample_degree(rng);
                for _ in 0..l {
                    stack.push(n.inputs[rng.below(n.inputs.len())]);
                }
            }
        }
    }
    FeatureExpr::new(atoms)
}

/// The raw draws `0..q` in draw order; draw `i` uses stream `(seed, i)`.
pub fn sample_draws(skeleton: &Skeleton, q: usize, master_seed: u64, exec: Execution) -> Vec<FeatureExpr> {
    par::map_range(exec, q, |i| {
        let mut rng = RandomStream::for_index(master_seed, i as u64);
        sample_from(skeleton, skeleton.output(), &mut rng)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryEntry {
    pub expr: FeatureExpr,
    pub multiplicity: u64,
}

/// De-duplicated features with multiplicities summing to `draws`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRegistry {
    entries: Vec<RegistryEntry>,
    draws: u64,
    master_seed: u64,
    skeleton_hash: String,
}

impl FeatureRegistry {
    /// Builds a registry from raw draws by sorting and merging equal features.
    pub fn from_draws(mut draws: Vec<FeatureExpr>, master_seed: u64, skeleton_hash: String, exec: Execution) -> Self {
        let q = draws.len() as u64;
        par::sort_unstable(exec, &mut draws);
        let mut entries: Vec<RegistryEntry> = Vec::new();
        for expr in draws {
            match entries.last_mut() {
                Some(last) if last.expr == expr => last.multiplicity += 1,
                _ => entries.push(RegistryEntry { expr, multiplicity: 1 }),
            }
        }
        Self {
            entries,
            draws: q,
            master_seed,
            skeleton_hash,
        }
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn skeleton_hash(&self) -> &str {
        &self.skeleton_hash
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Hex SHA-256 over the serialized registry.
    pub fn fingerprint(&self) -> String {
        hex(&Sha256::digest(self.to_json().as_bytes()))
    }

    /// Repeats each entry by its multiplicity, in registry order.
    pub fn expand(&self) -> Vec<FeatureExpr> {
        self.entries
            .iter()
            .flat_map(|e| std::iter::repeat_n(e.expr.clone(), e.multiplicity as usize))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let file = RegistryFile {
            format: REGISTRY_FORMAT.into(),
            version: REGISTRY_VERSION,
            master_seed: self.master_seed,
            skeleton_hash: self.skeleton_hash.clone(),
            draws: self.draws,
            entries: self
                .entries
                .iter()
                .map(|e| FileEntry {
                    atoms: e.expr.atoms.clone(),
                    multiplicity: e.multiplicity,
                })
                .collect(),
        };
        let mut s = serde_json::to_string(&file).expect("registry serializes");
        s.push('\n');
        s
    }

    /// Parses a registry file and checks it against `skeleton`.
    pub fn from_json(text: &str, skeleton: &Skeleton) -> Result<Self> {
        let file: RegistryFile = serde_json::from_str(text)?;
        if file.format != REGISTRY_FORMAT || file.version != REGISTRY_VERSION {
            return Err(Error::Parse(format!(
                "unsupported registry format {} v{}",
                file.format, file.version
            )));
        }
        if file.skeleton_hash != skeleton.fingerprint() {
            return Err(Error::Usage("registry was built for a different skeleton".into()));
        }
        let mut total = 0u64;
        let mut entries = Vec::with_capacity(file.entries.len());
        for e in file.entries {
            if e.multiplicity == 0 {
                return Err(Error::Parse("zero multiplicity".into()));
            }
            for a in &e.atoms {
                let space = skeleton
                    .input_space(a.node)
                    .ok_or_else(|| Error::Domain(format!("atom references non-input node {}", a.node)))?;
                space.validate_param(&a.param)?;
            }
            total += e.multiplicity;
            entries.push(RegistryEntry {
                expr: FeatureExpr::new(e.atoms),
                multiplicity: e.multiplicity,
            });
        }
        if total != file.draws {
            return Err(Error::Parse(format!(
                "multiplicities sum to {total}, header says {}",
                file.draws
            )));
        }
        Ok(Self {
            entries,
            draws: file.draws,
            master_seed: file.master_seed,
            skeleton_hash: file.skeleton_hash,
        })
    }
}

const REGISTRY_FORMAT: &str = "comprf-registry";
const REGISTRY_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    format: String,
    version: u32,
    master_seed: u64,
    skeleton_hash: String,
    draws: u64,
    entries: Vec<FileEntry>,
}

#[derive(Serialize, Deserialize)]
struct FileEntry {
    atoms: Vec<FeatureAtom>,
    multiplicity: u64,
}

/// Draws `q` features from the output node and merges duplicates.
/// The result does not depend on `exec` or the thread count.
pub fn build_registry(skeleton: &Skeleton, q: usize, master_seed: u64, exec: Execution) -> Result<FeatureRegistry> {
    if q == 0 {
        return Err(Error::Parameter("q must be at least 1".into()));
    }
    let draws = sample_draws(skeleton, q, master_seed, exec);
    Ok(FeatureRegistry::from_draws(
        draws,
        master_seed,
        skeleton.fingerprint(),
        exec,
    ))
}

/// Pearson correlations between per-input occurrence indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct Cooccurrence {
    pub n: usize,
    /// Row-major `n x n`.
    pub values: Vec<f64>,
    /// Inputs whose indicator has zero variance; their rows and columns are 0.
    pub degenerate: Vec<bool>,
}

impl Cooccurrence {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// Correlation of "input `i` occurs in the feature" indicators, counting
/// each registry entry with its multiplicity.
pub fn cooccurrence_matrix(registry: &FeatureRegistry, n_inputs: usize) -> Result<Cooccurrence> {
    if registry.is_empty() {
        return Err(Error::Parameter("registry is empty".into()));
    }
    let n = n_inputs;
    let total = registry.draws() as f64;
    let mut single = vec![0.0f64; n];
    let mut joint = vec![0.0f64; n * n];
    let mut present = Vec::with_capacity(n);
    for e in registry.entries() {
        present.clear();
        for a in e.expr.atoms() {
            let i = a.node.index();
            if i >= n {
                return Err(Error::Domain(format!("atom on node {} beyond {n} inputs", a.node)));
            }
            if present.last() != Some(&i) {
                present.push(i);
            }
        }
        // atoms are sorted by node, so `present` is sorted and unique
        let w = e.multiplicity as f64;
        for (k, &i) in present.iter().enumerate() {
            single[i] += w;
            for &j in &present[k..] {
                joint[i * n + j] += w;
            }
        }
    }
    let var: Vec<f64> = single.iter().map(|&s| total * s - s * s).collect();
    let degenerate: Vec<bool> = var.iter().map(|&v| v <= 0.0).collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            if degenerate[i] || degenerate[j] {
                continue;
            }
            let r = if i == j {
                1.0
            } else {
                (total * joint[i * n + j] - single[i] * single[j]) / (var[i] * var[j]).sqrt()
            };
            values[i * n + j] = r;
            values[j * n + i] = r;
        }
    }
    Ok(Cooccurrence { n, values, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsityStats {
    pub mean_atoms: f64,
    pub max_atoms: usize,
    pub distinct_count: usize,
    pub dedup_ratio: f64,
}

pub fn sparsity_stats(registry: &FeatureRegistry) -> SparsityStats {
    let draws = registry.draws().max(1) as f64;
    let weighted: f64 = registry
        .entries()
        .iter()
        .map(|e| e.multiplicity as f64 * e.expr.len() as f64)
        .sum();
    SparsityStats {
        mean_atoms: weighted / draws,
        max_atoms: registry.entries().iter().map(|e| e.expr.len()).max().unwrap_or(0),
        distinct_count: registry.len(),
        dedup_ratio: registry.len() as f64 / draws,
    }
}
