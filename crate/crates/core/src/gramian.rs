//! Per-sensor observability Gramian contributions ("atoms") and their
//! state-averaged collections.
//!
//! For one presumed initial state, sensor `j` contributes
//! `G_j = sum_{i=0}^{N-1} (c_j xi_i)' (c_j xi_i)`. The Gramian of a sensor
//! set is the sum of the atoms of its members, so every selection query is
//! a handful of matrix additions. A collection holds the atoms of `q`
//! presumed initial states for averaged measures.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrator::{simulate, IrkConfig};
use crate::model::{Model, SensorSet, StateVector};
use crate::sensitivity::{propagate_sensitivities, SensitivityStack};

/// Atoms for every (initial guess, sensor) pair, plus the metadata needed
/// by the selection metrics.
#[derive(Debug, Clone)]
pub struct GramianAtoms {
    /// `atoms[guess][sensor]`, each a symmetric PSD `n_x` x `n_x` matrix.
    atoms: Vec<Vec<DMatrix<f64>>>,
    n_x: usize,
    n_samples: usize,
    /// Per guess, `trace(W(V))`; the log-det regularizer scales with it.
    full_traces: Vec<f64>,
}

impl GramianAtoms {
    /// Builds atoms for several presumed initial states by simulating each
    /// one and propagating its sensitivities. Guesses run in parallel;
    /// a failure reports the (1-based) index of the offending guess.
    pub fn collect(
        model: &Model,
        guesses: &[StateVector],
        n_states: usize,
        cfg: &IrkConfig,
    ) -> Result<Self> {
        if guesses.is_empty() {
            return Err(Error::Argument("need at least one initial guess".into()));
        }
        let per_guess: Vec<Result<Vec<DMatrix<f64>>>> = guesses
            .par_iter()
            .enumerate()
            .map(|(k, guess)| {
                single_guess_atoms(model, guess, n_states, cfg).map_err(|e| e.for_guess(k + 1))
            })
            .collect();
        let mut atoms = Vec::with_capacity(guesses.len());
        for result in per_guess {
            atoms.push(result?);
        }
        GramianAtoms::from_parts(atoms, n_states)
    }

    /// Like [`GramianAtoms::collect`] but keeps going when individual
    /// guesses fail to simulate; returns the surviving collection together
    /// with the original guess indices that survived and the per-guess
    /// errors. Fails only when no guess survives.
    pub fn collect_lenient(
        model: &Model,
        guesses: &[StateVector],
        n_states: usize,
        cfg: &IrkConfig,
    ) -> Result<(Self, Vec<usize>, Vec<(usize, Error)>)> {
        if guesses.is_empty() {
            return Err(Error::Argument("need at least one initial guess".into()));
        }
        let per_guess: Vec<(usize, Result<Vec<DMatrix<f64>>>)> = guesses
            .par_iter()
            .enumerate()
            .map(|(k, guess)| (k, single_guess_atoms(model, guess, n_states, cfg)))
            .collect();
        let mut atoms = Vec::new();
        let mut surviving = Vec::new();
        let mut failures = Vec::new();
        for (k, result) in per_guess {
            match result {
                Ok(a) => {
                    atoms.push(a);
                    surviving.push(k);
                }
                Err(e) => failures.push((k, e)),
            }
        }
        if atoms.is_empty() {
            let (k, e) = failures.pop().expect("at least one failure when none survive");
            return Err(e.for_guess(k + 1));
        }
        Ok((GramianAtoms::from_parts(atoms, n_states)?, surviving, failures))
    }

    /// Wraps precomputed atoms. Every matrix must be square of one common
    /// dimension, symmetric to rounding, and every guess must cover the
    /// same number of sensors.
    pub fn from_parts(atoms: Vec<Vec<DMatrix<f64>>>, n_samples: usize) -> Result<Self> {
        if atoms.is_empty() || atoms[0].is_empty() {
            return Err(Error::Argument("atom collection is empty".into()));
        }
        let n_y = atoms[0].len();
        let n_x = atooms_dim(&atoms)?;
        for guess in &atoms {
            if guess.len() != n_y {
                return Err(Error::Argument(format!(
                    "every guess must have {n_y} sensor atoms, got {}",
                    guess.len()
                )));
            }
            for g in guess {
                let asym = (g - g.transpose()).amax();
                if asym > 1e-12 * g.amax().max(1.0) {
                    return Err(Error::Argument(format!(
                        "atom is not symmetric (max asymmetry {asym:.3e})"
                    )));
                }
            }
        }
        let full_traces = atoms
            .iter()
            .map(|guess| guess.iter().map(|g| g.trace()).sum())
            .collect();
        Ok(GramianAtoms {
            atoms,
            n_x,
            n_samples,
            full_traces,
        })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_sensors(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn num_guesses(&self) -> usize {
        self.atoms.len()
    }

    /// Observation window the atoms were built with.
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Atom of sensor `j` (0-based) for guess `k` (0-based).
    pub fn atom(&self, guess: usize, sensor: usize) -> &DMatrix<f64> {
        &self.atoms[guess][sensor]
    }

    /// `trace(W(V))` for one guess.
    pub fn full_trace(&self, guess: usize) -> f64 {
        self.full_traces[guess]
    }

    /// Sums the atoms of the selected sensors for one guess; the empty set
    /// gives the zero matrix. The sum is symmetrized against rounding.
    pub fn assemble(&self, guess: usize, set: &SensorSet) -> Result<DMatrix<f64>> {
        if guess >= self.num_guesses() {
            return Err(Error::Argument(format!(
                "guess index {guess} out of range ({} guesses)",
                self.num_guesses()
            )));
        }
        let mut w = DMatrix::zeros(self.n_x, self.n_x);
        for &j in set.members() {
            if j >= self.n_sensors() {
                return Err(Error::Argument(format!(
                    "sensor index {} out of range (n_y = {})",
                    j + 1,
                    self.n_sensors()
                )));
            }
            w += &self.atoms[guess][j];
        }
        symmetrize(&mut w);
        Ok(w)
    }

    /// The collection restricted to a single guess.
    pub fn single_guess(&self, guess: usize) -> Result<GramianAtoms> {
        if guess >= self.num_guesses() {
            return Err(Error::Argument(format!(
                "guess index {guess} out of range ({} guesses)",
                self.num_guesses()
            )));
        }
        Ok(GramianAtoms {
            atoms: vec![self.atoms[guess].clone()],
            n_x: self.n_x,
            n_samples: self.n_samples,
            full_traces: vec![self.full_traces[guess]],
        })
    }

    /// Writes every atom as `atom_g{guess}_s{sensor}.csv` (1-based, row per
    /// matrix row, 17 significant digits).
    pub fn export_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (k, guess) in self.atoms.iter().enumerate() {
            for (j, atom) in guess.iter().enumerate() {
                let path = dir.join(format!("atom_g{}_s{}.csv", k + 1, j + 1));
                let mut file = std::fs::File::create(path)?;
                for r in 0..atom.nrows() {
                    let row: Vec<String> =
                        (0..atom.ncols()).map(|c| format!("{:.16e}", atom[(r, c)])).collect();
                    writeln!(file, "{}", row.join(","))?;
                }
            }
        }
        Ok(())
    }
}

fn atooms_dim(atoms: &[Vec<DMatrix<f64>>]) -> Result<usize> {
    let n_x = atoms[0][0].nrows();
    for guess in atoms {
        for g in guess {
            if g.nrows() != n_x || g.ncols() != n_x {
                return Err(Error::Argument(format!(
                    "atoms must all be {n_x}x{n_x}, got {}x{}",
                    g.nrows(),
                    g.ncols()
                )));
            }
        }
    }
    Ok(n_x)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}

/// Atoms of one guess: `G_j = sum_i (c_j xi_i)' (c_j xi_i)`.
pub fn build_atoms(
    measurement: &DMatrix<f64>,
    stack: &SensitivityStack,
) -> Result<Vec<DMatrix<f64>>> {
    if stack.is_empty() {
        return Err(Error::Argument("sensitivity stack is empty".into()));
    }
    let n_x = stack.matrix(0).ncols();
    if measurement.ncols() != n_x {
        return Err(Error::Argument(format!(
            "measurement has {} columns but sensitivities are {n_x}-dimensional",
            measurement.ncols()
        )));
    }
    let n_y = measurement.nrows();
    let mut atoms = vec![DMatrix::zeros(n_x, n_x); n_y];
    for xi in stack.matrices() {
        let rows = measurement * xi; // n_y x n_x, row j = c_j xi_i
        for (j, atom) in atoms.iter_mut().enumerate() {
            let row = rows.row(j);
            atom.ger(1.0, &row.transpose(), &row.transpose(), 1.0);
        }
    }
    for atom in &mut atoms {
        symmetrize(atom);
    }
    Ok(atoms)
}

fn single_guess_atoms(
    model: &Model,
    guess: &StateVector,
    n_states: usize,
    cfg: &IrkConfig,
) -> Result<Vec<DMatrix<f64>>> {
    let trajectory = simulate(model, guess, n_states, cfg)?;
    let stack = propagate_sensitivities(model, &trajectory, cfg)?;
    build_atoms(model.measurement(), &stack)
}

/// Explicitly materialized Jacobian of the lifted output map: the
/// `N n_y x n_x` stack of the blocks `C xi_i`. Kept as the independent
/// route for checking the atom construction, and reused by the estimation
/// residual Jacobian.
pub fn lifted_output_jacobian(
    measurement: &DMatrix<f64>,
    stack: &SensitivityStack,
) -> DMatrix<f64> {
    let n_y = measurement.nrows();
    let n_x = measurement.ncols();
    let n = stack.len();
    let mut jac = DMatrix::zeros(n * n_y, n_x);
    for (i, xi) in stack.matrices().iter().enumerate() {
        jac.view_mut((i * n_y, 0), (n_y, n_x)).copy_from(&(measurement * xi));
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::bundled;
    use nalgebra::{dvector, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(rng: &mut ChaCha8Rng, n_x: usize, n: usize) -> SensitivityStack {
        let mut xis = vec![DMatrix::identity(n_x, n_x)];
        for _ in 1..n {
            xis.push(DMatrix::from_fn(n_x, n_x, |_, _| rng.random_range(-1.0..1.0)));
        }
        SensitivityStack::from_matrices(xis)
    }

    fn random_measurement(rng: &mut ChaCha8Rng, n_y: usize, n_x: usize) -> DMatrix<f64> {
        loop {
            let c = DMatrix::from_fn(n_y, n_x, |_, _| rng.random_range(-1.0..1.0));
            if (0..n_y).all(|j| c.row(j).amax() > 1e-3) {
                return c;
            }
        }
    }

    #[test]
    fn identity_sensitivities_give_counting_atoms() {
        let n = 5;
        let stack = SensitivityStack::from_matrices(vec![DMatrix::identity(3, 3); n]);
        let c = DMatrix::identity(3, 3);
        let atoms = build_atoms(&c, &stack).unwrap();
        for (j, atom) in atoms.iter().enumerate() {
            let mut expected = DMatrix::zeros(3, 3);
            expected[(j, j)] = n as f64;
            assert_eq!(atom, &expected);
        }
    }

    #[test]
    fn window_one_identity_gives_unit_projectors() {
        let stack = SensitivityStack::from_matrices(vec![DMatrix::identity(4, 4)]);
        let atoms = build_atoms(&DMatrix::identity(4, 4), &stack).unwrap();
        for (j, atom) in atoms.iter().enumerate() {
            let mut expected = DMatrix::zeros(4, 4);
            expected[(j, j)] = 1.0;
            assert_eq!(atom, &expected);
        }
    }

    #[test]
    fn atom_sum_equals_lifted_jacobian_gram_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..5 {
            let stack = random_stack(&mut rng, 4, 6);
            let c = random_measurement(&mut rng, 3, 4);
            let atoms = build_atoms(&c, &stack).unwrap();
            let total = atoms.iter().fold(DMatrix::zeros(4, 4), |acc, g| acc + g);
            let jac = lifted_output_jacobian(&c, &stack);
            let gram = jac.transpose() * jac;
            assert!((total - gram).amax() < 1e-10);
        }
    }

    #[test]
    fn assemble_empty_and_singleton() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let stack = random_stack(&mut rng, 3, 4);
        let c = random_measurement(&mut rng, 4, 3);
        let atoms =
            GramianAtoms::from_parts(vec![build_atoms(&c, &stack).unwrap()], 4).unwrap();
        let empty = atoms.assemble(0, &SensorSet::empty()).unwrap();
        assert_eq!(empty, DMatrix::zeros(3, 3));
        for j in 0..4 {
            let single = atoms
                .assemble(0, &SensorSet::from_zero_based([j]).unwrap())
                .unwrap();
            assert_eq!(&single, atoms.atom(0, j));
        }
        assert!(atoms
            .assemble(0, &SensorSet::from_zero_based([9]).unwrap())
            .is_err());
    }

    #[test]
    fn assemble_is_additive_over_disjoint_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let stack = random_stack(&mut rng, 4, 5);
        let c = random_measurement(&mut rng, 6, 4);
        let atoms =
            GramianAtoms::from_parts(vec![build_atoms(&c, &stack).unwrap()], 5).unwrap();
        let a = SensorSet::from_zero_based([0usize, 2]).unwrap();
        let b = SensorSet::from_zero_based([3usize, 5]).unwrap();
        let union = SensorSet::from_zero_based([0usize, 2, 3, 5]).unwrap();
        let sum = atoms.assemble(0, &a).unwrap() + atoms.assemble(0, &b).unwrap();
        let direct = atoms.assemble(0, &union).unwrap();
        assert!((sum - direct).amax() < 1e-12);
    }

    #[test]
    fn nested_sets_have_psd_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let stack = random_stack(&mut rng, 4, 6);
        let c = random_measurement(&mut rng, 5, 4);
        let atoms =
            GramianAtoms::from_parts(vec![build_atoms(&c, &stack).unwrap()], 6).unwrap();
        let small = SensorSet::from_zero_based([1usize, 3]).unwrap();
        let large = SensorSet::from_zero_based([0usize, 1, 3, 4]).unwrap();
        let diff = atoms.assemble(0, &large).unwrap() - atoms.assemble(0, &small).unwrap();
        let min_eig = diff.symmetric_eigenvalues().min();
        let trace = atoms.assemble(0, &large).unwrap().trace();
        assert!(min_eig >= -1e-10 * trace.max(1.0), "min eigenvalue {min_eig:.3e}");
    }

    #[test]
    fn atoms_are_psd() {
        let model = bundled::six_species().to_model().unwrap();
        let cfg = IrkConfig::new(0.05);
        let x0 = dvector![1.0, 0.5, 0.2, 0.1, 0.1, 0.05];
        let atoms = GramianAtoms::collect(&model, &[x0], 15, &cfg).unwrap();
        for j in 0..atoms.n_sensors() {
            let g = atoms.atom(0, j);
            let min_eig = g.symmetric_eigenvalues().min();
            assert!(min_eig >= -1e-10 * g.amax().max(1.0));
        }
    }

    #[test]
    fn collection_slices_match_independent_single_guess_builds() {
        let model = bundled::six_species().to_model().unwrap();
        let cfg = IrkConfig::new(0.05);
        let guesses = vec![
            dvector![1.0, 0.5, 0.2, 0.1, 0.1, 0.05],
            dvector![1.2, 0.4, 0.3, 0.15, 0.05, 0.1],
            dvector![0.8, 0.6, 0.1, 0.05, 0.2, 0.08],
        ];
        let collection = GramianAtoms::collect(&model, &guesses, 10, &cfg).unwrap();
        assert_eq!(collection.num_guesses(), 3);
        for (k, guess) in guesses.iter().enumerate() {
            let single = GramianAtoms::collect(&model, &[guess.clone()], 10, &cfg).unwrap();
            for j in 0..collection.n_sensors() {
                assert_eq!(collection.atom(k, j), single.atom(0, j));
            }
        }
    }

    #[test]
    fn identical_guesses_give_identical_slices() {
        let model = bundled::six_species().to_model().unwrap();
        let cfg = IrkConfig::new(0.05);
        let x0 = dvector![1.0, 0.5, 0.2, 0.1, 0.1, 0.05];
        let collection =
            GramianAtoms::collect(&model, &[x0.clone(), x0], 8, &cfg).unwrap();
        for j in 0..collection.n_sensors() {
            assert_eq!(collection.atom(0, j), collection.atom(1, j));
        }
    }

    #[test]
    fn lenient_collection_reports_failing_guess() {
        let model = bundled::six_species().to_model().unwrap();
        let mut cfg = IrkConfig::new(50.0); // hopeless step for the bad guess
        cfg.newton_max_iters = 3;
        // huge state makes Newton diverge at this step size; modest one is fine
        let good = dvector![0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
        let bad = dvector![1e6, 1e6, 1e6, 1e6, 1e6, 1e6];
        cfg.step_size = 2.0;
        let (atoms, surviving, failures) =
            GramianAtoms::collect_lenient(&model, &[good, bad], 5, &cfg).unwrap();
        assert_eq!(surviving, vec![0]);
        assert_eq!(atoms.num_guesses(), 1);
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].0, 1);
    }

    #[test]
    fn full_rank_gramian_matches_full_column_rank_of_lifted_jacobian() {
        let model = bundled::six_species().to_model().unwrap();
        let cfg = IrkConfig::new(0.05);
        let x0 = dvector![1.0, 0.5, 0.2, 0.1, 0.1, 0.05];
        let traj = simulate(&model, &x0, 12, &cfg).unwrap();
        let stack = propagate_sensitivities(&model, &traj, &cfg).unwrap();
        let atoms = GramianAtoms::from_parts(
            vec![build_atoms(model.measurement(), &stack).unwrap()],
            12,
        )
        .unwrap();
        let w = atoms.assemble(0, &SensorSet::full(6)).unwrap();
        let w_svs = w.svd(false, false).singular_values;
        let w_rank = w_svs.iter().filter(|s| **s > 1e-10 * w_svs.max()).count();

        let jac = lifted_output_jacobian(model.measurement(), &stack);
        let j_svs = jac.svd(false, false).singular_values;
        let j_rank = j_svs.iter().filter(|s| **s > 1e-10 * j_svs.max()).count();

        assert_eq!(w_rank, 6);
        assert_eq!(j_rank, 6);
    }

    #[test]
    fn export_writes_one_file_per_atom() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stack = random_stack(&mut rng, 2, 3);
        let c = random_measurement(&mut rng, 2, 2);
        let atoms =
            GramianAtoms::from_parts(vec![build_atoms(&c, &stack).unwrap()], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        atoms.export_csv(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("atom_g1_s2.csv")).unwrap();
        assert_eq!(text.lines().count(), 2);
        let first: f64 = text.lines().next().unwrap().split(',').next().unwrap().parse().unwrap();
        assert_eq!(first, atoms.atom(0, 1)[(0, 0)]);
    }

    #[test]
    fn from_parts_rejects_asymmetric_atoms() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(GramianAtoms::from_parts(vec![vec![bad]], 1).is_err());
    }

    #[test]
    fn zero_dynamics_atoms_from_simulation() {
        let model = Model::new(
            3,
            |x: &StateVector| DVector::zeros(x.len()),
            DMatrix::identity(3, 3),
        )
        .unwrap()
        .with_jacobian(|x: &StateVector| DMatrix::zeros(x.len(), x.len()));
        let cfg = IrkConfig::new(0.1);
        let atoms =
            GramianAtoms::collect(&model, &[dvector![1.0, 2.0, 3.0]], 7, &cfg).unwrap();
        for j in 0..3 {
            let mut expected = DMatrix::zeros(3, 3);
            expected[(j, j)] = 7.0;
            assert_eq!(atoms.atom(0, j), &expected);
        }
    }
}
