//! Perturbation dataset generation, splitting and on-disk format.
//!
//! Each sample kicks the frequency of one node (or an m-node combination)
//! away from the stable equilibrium, integrates the swing dynamics, records
//! the first `record_len` frequency snapshots as features and labels the
//! sample with the finite-horizon stability verdict.
//!
//! Generation is deterministic for a given `(grid, spec, seed)`: sample `i`
//! draws from an independent counter-mode RNG stream `i + 1`, so parallel
//! generation and any subset regeneration reproduce identical bytes.
//! Stream 0 is reserved for choosing the multi-node combinations.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

use crate::dynamics::{simulate_labeled, solve_equilibrium, DynamicsError, LabelConfig, SystemState};
use crate::grid::PowerGrid;

const MAGIC: &[u8; 4] = b"TTDS";
const FORMAT_VERSION: u16 = 1;

/// How to perturb the equilibrium and how much trajectory to keep.
#[derive(Debug, Clone, Copy)]
pub struct PerturbationSpec {
    /// Half-width of the uniform frequency kick (rad/s).
    pub kick_magnitude: f64,
    /// Samples per single kicked node.
    pub samples_per_node: usize,
    /// Nodes kicked simultaneously in each multi-node combination.
    pub multi_node_count: usize,
    /// Number of distinct multi-node combinations.
    pub multi_combos: usize,
    /// Samples per multi-node combination.
    pub samples_per_combo: usize,
    /// Number of recorded frequency snapshots (including t = 0).
    pub record_len: usize,
    /// Also kick phases uniformly in `(-pi, pi)` at the perturbed nodes.
    pub perturb_phase: bool,
    /// Labeling horizon and thresholds.
    pub label: LabelConfig,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            kick_magnitude: 20.0,
            samples_per_node: 100,
            multi_node_count: 3,
            multi_combos: 60,
            samples_per_combo: 100,
            record_len: 101,
            perturb_phase: false,
            label: LabelConfig::default(),
        }
    }
}

/// One labeled perturbation: kicked nodes, RNG stream and the recorded
/// frequency block (`n * record_len`, node-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: u8,
    pub kicked: Vec<usize>,
    pub stream: u64,
    pub features: Vec<f64>,
}

impl Sample {
    pub fn is_single(&self) -> bool {
        self.kicked.len() == 1
    }
}

/// A labeled dataset bound to a specific grid by fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub fingerprint: [u8; 32],
    pub n: usize,
    pub record_len: usize,
    pub samples: Vec<Sample>,
}

/// Human-readable sidecar written next to the binary dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u16,
    pub grid_fingerprint: String,
    pub nodes: usize,
    pub record_len: usize,
    pub samples: usize,
    pub stable: usize,
    pub unstable: usize,
    pub single_node_samples: usize,
    pub multi_node_samples: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("invalid perturbation spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset file: {0}")]
    Format(String),
    #[error("dataset fingerprint {got} does not match grid fingerprint {want}")]
    Fingerprint { got: String, want: String },
}

pub fn hex32(bytes: &[u8; 32]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn stable_count(&self) -> usize {
        self.samples.iter().filter(|s| s.label == 1).count()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.label as f64).collect()
    }

    fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            fingerprint: self.fingerprint,
            n: self.n,
            record_len: self.record_len,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn manifest(&self, seed: Option<u64>) -> DatasetManifest {
        let stable = self.stable_count();
        let single = self.samples.iter().filter(|s| s.is_single()).count();
        DatasetManifest {
            format_version: FORMAT_VERSION,
            grid_fingerprint: hex32(&self.fingerprint),
            nodes: self.n,
            record_len: self.record_len,
            samples: self.len(),
            stable,
            unstable: self.len() - stable,
            single_node_samples: single,
            multi_node_samples: self.len() - single,
            seed,
        }
    }
}

/// Pick `count` distinct sorted `m`-subsets of `0..n` using RNG stream 0.
pub fn choose_combinations(
    n: usize,
    m: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, SamplingError> {
    if m == 0 || m > n {
        return Err(SamplingError::Spec(format!(
            "combination size {m} invalid for {n} nodes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let mut seen = HashSet::new();
    let mut combos = Vec::with_capacity(count);
    let mut attempts = 0usize;
    let budget = 1000 * count.max(1);
    while combos.len() < count {
        attempts += 1;
        if attempts > budget {
            return Err(SamplingError::Spec(format!(
                "could not draw {count} distinct {m}-subsets of {n} nodes"
            )));
        }
        let mut pick: Vec<usize> = rand::seq::index::sample(&mut rng, n, m).into_vec();
        pick.sort_unstable();
        if seen.insert(pick.clone()) {
            combos.push(pick);
        }
    }
    Ok(combos)
}

/// Draw the perturbed initial state for one sample.
pub fn sample_initial_state(
    equilibrium: &SystemState,
    kicked: &[usize],
    spec: &PerturbationSpec,
    rng: &mut ChaCha8Rng,
) -> SystemState {
    let mut state = equilibrium.clone();
    let kick = Uniform::new_inclusive(-spec.kick_magnitude, spec.kick_magnitude);
    for &node in kicked {
        state.omega[node] += kick.sample(rng);
    }
    if spec.perturb_phase {
        let phase = Uniform::new(-std::f64::consts::PI, std::f64::consts::PI);
        for &node in kicked {
            state.delta[node] += phase.sample(rng);
        }
    }
    state
}

/// Generate the full single-node plus multi-node corpus for a grid.
///
/// Sample order is: node 0's kicks, node 1's kicks, ..., then combination 0's
/// kicks, combination 1's, and so on.
pub fn generate_dataset(
    grid: &PowerGrid,
    spec: &PerturbationSpec,
    seed: u64,
) -> Result<Dataset, SamplingError> {
    if spec.record_len == 0 {
        return Err(SamplingError::Spec("record_len must be positive".into()));
    }
    if spec.record_len as f64 > spec.label.horizon / spec.label.dt + 1.0 {
        return Err(SamplingError::Spec(format!(
            "record_len {} exceeds the simulated horizon",
            spec.record_len
        )));
    }
    if !(spec.kick_magnitude > 0.0) {
        return Err(SamplingError::Spec("kick_magnitude must be positive".into()));
    }
    let n = grid.n();
    let equilibrium = solve_equilibrium(grid, &SystemState::zeros(n))?;
    let combos = if spec.multi_combos > 0 {
        choose_combinations(n, spec.multi_node_count, spec.multi_combos, seed)?
    } else {
        Vec::new()
    };
    let singles = n * spec.samples_per_node;
    let total = singles + combos.len() * spec.samples_per_combo;

    let kicked_for = |idx: usize| -> &[usize] {
        if idx < singles {
            let node = idx / spec.samples_per_node;
            std::slice::from_ref(&grid_node_ids()[node])
        } else {
            let rest = idx - singles;
            &combos[rest / spec.samples_per_combo]
        }
    };
    // Node identity slices for the single-node case; a static ramp avoids
    // allocating per sample.
    fn grid_node_ids() -> &'static [usize] {
        static IDS: std::sync::OnceLock<Vec<usize>> = std::sync::OnceLock::new();
        IDS.get_or_init(|| (0..4096).collect())
    }
    if n > 4096 {
        return Err(SamplingError::Spec("grids above 4096 nodes unsupported".into()));
    }

    let samples: Result<Vec<Sample>, SamplingError> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let kicked = kicked_for(idx);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx as u64 + 1);
            let state0 = sample_initial_state(&equilibrium, kicked, spec, &mut rng);
            let (features, verdict) =
                simulate_labeled(grid, &state0, &spec.label, spec.record_len)?;
            Ok(Sample {
                label: verdict.label(),
                kicked: kicked.to_vec(),
                stream: idx as u64 + 1,
                features,
            })
        })
        .collect();
    Ok(Dataset {
        fingerprint: grid.fingerprint(),
        n,
        record_len: spec.record_len,
        samples: samples?,
    })
}

/// Deterministic 60/20/20 split of the single-node samples; every multi-node
/// sample goes to the test set.
pub fn split_dataset(dataset: &Dataset, seed: u64) -> (Dataset, Dataset, Dataset) {
    let singles: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.samples[i].is_single())
        .collect();
    let multis: Vec<usize> = (0..dataset.len())
        .filter(|&i| !dataset.samples[i].is_single())
        .collect();
    let mut order = singles;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let s = order.len();
    let n_train = (s as f64 * 0.6).floor() as usize;
    let n_val = (s as f64 * 0.2).floor() as usize;
    let train = dataset.subset(&order[..n_train]);
    let val = dataset.subset(&order[n_train..n_train + n_val]);
    let mut test_idx: Vec<usize> = order[n_train + n_val..].to_vec();
    test_idx.extend(multis);
    let test = dataset.subset(&test_idx);
    (train, val, test)
}

fn bitmap_len(n: usize) -> usize {
    n.div_ceil(8)
}

/// Write the binary dataset plus a `<path>.json` sidecar manifest.
pub fn save_dataset(
    path: impl AsRef<Path>,
    dataset: &Dataset,
    seed: Option<u64>,
) -> Result<(), SamplingError> {
    let path = path.as_ref();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&dataset.fingerprint);
    buf.extend_from_slice(&(dataset.n as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.record_len as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.len() as u32).to_le_bytes());
    let bl = bitmap_len(dataset.n);
    for sample in &dataset.samples {
        buf.push(sample.label);
        let mut bitmap = vec![0u8; bl];
        for &node in &sample.kicked {
            bitmap[node / 8] |= 1 << (node % 8);
        }
        buf.extend_from_slice(&bitmap);
        buf.extend_from_slice(&sample.stream.to_le_bytes());
        for &v in &sample.features {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    let manifest = dataset.manifest(seed);
    let sidecar = sidecar_path(path);
    std::fs::write(&sidecar, serde_json::to_string_pretty(&manifest).unwrap() + "\n")?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

/// Read a binary dataset; when `expected_fingerprint` is given, mismatches
/// are rejected before any sample is parsed.
pub fn load_dataset(
    path: impl AsRef<Path>,
    expected_fingerprint: Option<&[u8; 32]>,
) -> Result<Dataset, SamplingError> {
    let mut raw = Vec::new();
    std::fs::File::open(path.as_ref())?.read_to_end(&mut raw)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, len: usize| -> Result<&[u8], SamplingError> {
        if *pos + len > raw.len() {
            return Err(SamplingError::Format(format!(
                "truncated at byte {} (wanted {len} more)",
                *pos
            )));
        }
        let out = &raw[*pos..*pos + len];
        *pos += len;
        Ok(out)
    };
    if take(&mut pos, 4)? != MAGIC {
        return Err(SamplingError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(SamplingError::Format(format!(
            "unsupported format version {version}"
        )));
    }
    let mut fingerprint = [0u8; 32];
    fingerprint.copy_from_slice(take(&mut pos, 32)?);
    if let Some(want) = expected_fingerprint {
        if &fingerprint != want {
            return Err(SamplingError::Fingerprint {
                got: hex32(&fingerprint),
                want: hex32(want),
            });
        }
    }
    let n = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let record_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let bl = bitmap_len(n);
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let label = take(&mut pos, 1)?[0];
        if label > 1 {
            return Err(SamplingError::Format(format!("label byte {label}")));
        }
        let bitmap = take(&mut pos, bl)?.to_vec();
        let kicked: Vec<usize> = (0..n)
            .filter(|&i| bitmap[i / 8] & (1 << (i % 8)) != 0)
            .collect();
        let stream = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let block = take(&mut pos, n * record_len * 8)?;
        let features: Vec<f64> = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if features.iter().any(|v| !v.is_finite()) {
            return Err(SamplingError::Format("non-finite feature value".into()));
        }
        samples.push(Sample {
            label,
            kicked,
            stream,
            features,
        });
    }
    if pos != raw.len() {
        return Err(SamplingError::Format(format!(
            "{} trailing bytes after {count} samples",
            raw.len() - pos
        )));
    }
    Ok(Dataset {
        fingerprint,
        n,
        record_len,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PowerGrid;

    fn two_node(p: f64, k: f64) -> PowerGrid {
        PowerGrid::from_normalized(
            "two_node",
            1.0,
            vec![0.5, 0.5],
            vec![p, -p],
            vec![(0, 1, k)],
        )
        .unwrap()
    }

    fn small_spec() -> PerturbationSpec {
        PerturbationSpec {
            kick_magnitude: 2.0,
            samples_per_node: 3,
            multi_node_count: 2,
            multi_combos: 1,
            samples_per_combo: 2,
            record_len: 11,
            perturb_phase: false,
            label: LabelConfig {
                horizon: 10.0,
                ..LabelConfig::default()
            },
        }
    }

    #[test]
    fn sample_counts_are_exact() {
        let grid = two_node(0.5, 1.0);
        let ds = generate_dataset(&grid, &small_spec(), 7).unwrap();
        assert_eq!(ds.len(), 2 * 3 + 1 * 2);
        assert_eq!(ds.samples.iter().filter(|s| s.is_single()).count(), 6);
        for s in &ds.samples {
            assert_eq!(s.features.len(), 2 * 11);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let grid = two_node(0.5, 1.0);
        let a = generate_dataset(&grid, &small_spec(), 42).unwrap();
        let b = generate_dataset(&grid, &small_spec(), 42).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&grid, &small_spec(), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_kick_would_be_stable_and_overload_unstable() {
        // The dataset labels agree with direct classification at extremes: a
        // well-coupled grid survives tiny kicks, an overloaded one never
        // synchronizes.
        let stable_grid = two_node(0.1, 5.0);
        let spec = PerturbationSpec {
            kick_magnitude: 0.05,
            ..small_spec()
        };
        let ds = generate_dataset(&stable_grid, &spec, 1).unwrap();
        assert!(ds.samples.iter().all(|s| s.label == 1));

        let overloaded = two_node(1.5, 1.0);
        // No equilibrium exists, so generation reports a dynamics error.
        assert!(matches!(
            generate_dataset(&overloaded, &spec, 1),
            Err(SamplingError::Dynamics(_))
        ));
    }

    #[test]
    fn features_start_at_perturbed_state() {
        let grid = two_node(0.5, 1.0);
        let spec = small_spec();
        let ds = generate_dataset(&grid, &spec, 9).unwrap();
        let eq = solve_equilibrium(&grid, &SystemState::zeros(2)).unwrap();
        for s in ds.samples.iter().filter(|s| s.is_single()) {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            rng.set_stream(s.stream);
            let state0 = sample_initial_state(&eq, &s.kicked, &spec, &mut rng);
            for node in 0..2 {
                assert_eq!(s.features[node * spec.record_len], state0.omega[node]);
            }
        }
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let grid = two_node(0.5, 1.0);
        let spec = PerturbationSpec {
            samples_per_node: 10,
            ..small_spec()
        };
        let ds = generate_dataset(&grid, &spec, 5).unwrap();
        let (train, val, test) = split_dataset(&ds, 11);
        assert_eq!(train.len(), 12);
        assert_eq!(val.len(), 4);
        assert_eq!(test.len(), 4 + 2);
        assert!(test.samples.iter().filter(|s| !s.is_single()).count() == 2);
        assert_eq!(train.len() + val.len() + test.len(), ds.len());
        let (train2, _, _) = split_dataset(&ds, 11);
        assert_eq!(train, train2);
        let (train3, _, _) = split_dataset(&ds, 12);
        assert_ne!(train, train3);
    }

    #[test]
    fn save_load_round_trip() {
        let grid = two_node(0.5, 1.0);
        let ds = generate_dataset(&grid, &small_spec(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.ds");
        save_dataset(&path, &ds, Some(3)).unwrap();
        let loaded = load_dataset(&path, Some(&grid.fingerprint())).unwrap();
        assert_eq!(ds, loaded);
        let manifest: DatasetManifest =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(manifest.samples, ds.len());
        assert_eq!(manifest.grid_fingerprint, hex32(&grid.fingerprint()));
    }

    #[test]
    fn fingerprint_mismatch_rejected() {
        let grid = two_node(0.5, 1.0);
        let ds = generate_dataset(&grid, &small_spec(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.ds");
        save_dataset(&path, &ds, None).unwrap();
        let other = [0xabu8; 32];
        assert!(matches!(
            load_dataset(&path, Some(&other)),
            Err(SamplingError::Fingerprint { .. })
        ));
    }

    #[test]
    fn truncated_and_corrupt_files_rejected() {
        let grid = two_node(0.5, 1.0);
        let ds = generate_dataset(&grid, &small_spec(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.ds");
        save_dataset(&path, &ds, None).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let truncated = dir.path().join("trunc.ds");
        std::fs::write(&truncated, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            load_dataset(&truncated, None),
            Err(SamplingError::Format(_))
        ));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        let bad_path = dir.path().join("magic.ds");
        std::fs::write(&bad_path, &bad).unwrap();
        assert!(matches!(
            load_dataset(&bad_path, None),
            Err(SamplingError::Format(_))
        ));
    }

    #[test]
    fn combinations_distinct_and_sized() {
        let combos = choose_combinations(10, 3, 20, 77).unwrap();
        assert_eq!(combos.len(), 20);
        let set: HashSet<_> = combos.iter().cloned().collect();
        assert_eq!(set.len(), 20);
        for c in &combos {
            assert_eq!(c.len(), 3);
            assert!(c.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(choose_combinations(3, 5, 1, 0).is_err());
        assert!(choose_combinations(4, 2, 7, 0).is_err(), "only 6 subsets exist");
    }
}
