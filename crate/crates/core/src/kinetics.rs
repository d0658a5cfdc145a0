//! Mass-action chemical-reaction-network dynamics and the network file
//! format.
//!
//! A network is a list of reactions
//! `sum_i q_ji R_i  <=>  sum_i w_ji R_i` with forward rate `v_j` and
//! backward rate `b_j`. The state is the vector of species concentrations
//! and evolves as `x' = Theta psi(x)` where `Theta[i][j] = w_ji - q_ji`
//! and `psi_j(x) = v_j prod_i x_i^{q_ji} - b_j prod_i x_i^{w_ji}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, StateVector};

/// A mass-action reaction network together with its measurement matrix.
///
/// Immutable after construction; the stoichiometry matrix `Theta` is
/// derived from the coefficient tables once, so it can never disagree with
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionNetwork {
    species: Vec<String>,
    /// Reactant (forward) stoichiometric coefficients, one row per reaction.
    reactant_coeffs: DMatrix<f64>,
    /// Product (backward) stoichiometric coefficients, one row per reaction.
    product_coeffs: DMatrix<f64>,
    forward_rates: DVector<f64>,
    backward_rates: DVector<f64>,
    /// `Theta`, n_x x N_r, column j = products minus reactants of reaction j.
    stoichiometry: DMatrix<f64>,
    measurement: DMatrix<f64>,
}

impl ReactionNetwork {
    /// Builds and validates a network. `measurement` defaults to the
    /// identity (every species is a candidate sensor node).
    pub fn new(
        species: Vec<String>,
        reactant_coeffs: DMatrix<f64>,
        product_coeffs: DMatrix<f64>,
        forward_rates: DVector<f64>,
        backward_rates: DVector<f64>,
        measurement: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n_x = species.len();
        if n_x == 0 {
            return Err(Error::Parse("network has no species".into()));
        }
        let n_r = reactant_coeffs.nrows();
        if product_coeffs.nrows() != n_r
            || reactant_coeffs.ncols() != n_x
            || product_coeffs.ncols() != n_x
        {
            return Err(Error::Parse(format!(
                "coefficient tables must be {n_r}x{n_x}; got q {}x{}, w {}x{}",
                reactant_coeffs.nrows(),
                reactant_coeffs.ncols(),
                product_coeffs.nrows(),
                product_coeffs.ncols()
            )));
        }
        if forward_rates.len() != n_r || backward_rates.len() != n_r {
            return Err(Error::Parse(format!(
                "rate vectors must have length {n_r}; got v {}, b {}",
                forward_rates.len(),
                backward_rates.len()
            )));
        }
        for j in 0..n_r {
            if forward_rates[j] < 0.0 || !forward_rates[j].is_finite() {
                return Err(Error::Parse(format!(
                    "reactions[{j}].v: negative rate ({})",
                    forward_rates[j]
                )));
            }
            if backward_rates[j] < 0.0 || !backward_rates[j].is_finite() {
                return Err(Error::Parse(format!(
                    "reactions[{j}].b: negative rate ({})",
                    backward_rates[j]
                )));
            }
            let all_zero = (0..n_x)
                .all(|i| reactant_coeffs[(j, i)] == 0.0 && product_coeffs[(j, i)] == 0.0);
            if all_zero {
                return Err(Error::Parse(format!(
                    "reactions[{j}]: every coefficient is zero"
                )));
            }
            for i in 0..n_x {
                for (name, table) in [("q", &reactant_coeffs), ("w", &product_coeffs)] {
                    let c = table[(j, i)];
                    if c < 0.0 || !c.is_finite() {
                        return Err(Error::Parse(format!(
                            "reactions[{j}].{name}[{i}]: coefficients must be nonnegative, got {c}"
                        )));
                    }
                }
            }
        }
        let measurement = measurement.unwrap_or_else(|| DMatrix::identity(n_x, n_x));
        if measurement.ncols() != n_x || measurement.nrows() == 0 {
            return Err(Error::Parse(format!(
                "measurement must have {n_x} columns and at least one row"
            )));
        }
        for r in 0..measurement.nrows() {
            if measurement.row(r).iter().all(|v| *v == 0.0) {
                return Err(Error::Parse(format!("measurement row {} is all zero", r + 1)));
            }
        }
        let mut stoichiometry = DMatrix::zeros(n_x, n_r);
        for j in 0..n_r {
            for i in 0..n_x {
                stoichiometry[(i, j)] = product_coeffs[(j, i)] - reactant_coeffs[(j, i)];
            }
        }
        Ok(ReactionNetwork {
            species,
            reactant_coeffs,
            product_coeffs,
            forward_rates,
            backward_rates,
            stoichiometry,
            measurement,
        })
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn n_reactions(&self) -> usize {
        self.reactant_coeffs.nrows()
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    /// `Theta`, the n_x x N_r net stoichiometry matrix.
    pub fn stoichiometry(&self) -> &DMatrix<f64> {
        &self.stoichiometry
    }

    pub fn measurement(&self) -> &DMatrix<f64> {
        &self.measurement
    }

    /// Reaction rates `psi(x)`, one entry per reaction.
    pub fn rate_vector(&self, x: &StateVector) -> Result<DVector<f64>> {
        self.check_state(x)?;
        let n_r = self.n_reactions();
        let mut rates = DVector::zeros(n_r);
        for j in 0..n_r {
            let mut value = 0.0;
            if self.forward_rates[j] != 0.0 {
                value += self.forward_rates[j] * self.monomial(&self.reactant_coeffs, j, x)?;
            }
            if self.backward_rates[j] != 0.0 {
                value -= self.backward_rates[j] * self.monomial(&self.product_coeffs, j, x)?;
            }
            rates[j] = value;
        }
        Ok(rates)
    }

    /// The vector field `Theta psi(x)`.
    pub fn dynamics(&self, x: &StateVector) -> Result<StateVector> {
        Ok(&self.stoichiometry * self.rate_vector(x)?)
    }

    /// Exact Jacobian of [`ReactionNetwork::dynamics`].
    pub fn jacobian(&self, x: &StateVector) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        let (n_r, n_x) = (self.n_reactions(), self.n_species());
        let mut rate_jac = DMatrix::zeros(n_r, n_x);
        for j in 0..n_r {
            for i in 0..n_x {
                let mut d = 0.0;
                if self.forward_rates[j] != 0.0 {
                    d += self.forward_rates[j]
                        * self.monomial_derivative(&self.reactant_coeffs, j, x, i)?;
                }
                if self.backward_rates[j] != 0.0 {
                    d -= self.backward_rates[j]
                        * self.monomial_derivative(&self.product_coeffs, j, x, i)?;
                }
                rate_jac[(j, i)] = d;
            }
        }
        Ok(&self.stoichiometry * rate_jac)
    }

    /// Wraps the network as a [`Model`] with its analytic Jacobian.
    ///
    /// Requires integer stoichiometric exponents so that evaluation is
    /// total on the whole state space.
    pub fn to_model(&self) -> Result<Model> {
        for j in 0..self.n_reactions() {
            for i in 0..self.n_species() {
                for table in [&self.reactant_coeffs, &self.product_coeffs] {
                    if table[(j, i)].fract() != 0.0 {
                        return Err(Error::Argument(format!(
                            "reactions[{j}]: non-integer exponent {}; wrap manually \
                             with domain-checked evaluation",
                            table[(j, i)]
                        )));
                    }
                }
            }
        }
        let dyn_net = self.clone();
        let jac_net = self.clone();
        Ok(Model::new(
            self.n_species(),
            move |x: &StateVector| {
                dyn_net
                    .dynamics(x)
                    .expect("integer-exponent kinetics is total")
            },
            self.measurement.clone(),
        )?
        .with_jacobian(move |x: &StateVector| {
            jac_net
                .jacobian(x)
                .expect("integer-exponent kinetics is total")
        }))
    }

    /// `prod_i x_i^{e_i}` for row `j` of a coefficient table, with the
    /// convention `0^0 = 1`.
    fn monomial(&self, coeffs: &DMatrix<f64>, j: usize, x: &StateVector) -> Result<f64> {
        let mut prod = 1.0;
        for i in 0..x.len() {
            prod *= power(x[i], coeffs[(j, i)])?;
        }
        Ok(prod)
    }

    /// `d/dx_i prod_l x_l^{e_l}` for row `j`; a zero exponent contributes a
    /// zero term.
    fn monomial_derivative(
        &self,
        coeffs: &DMatrix<f64>,
        j: usize,
        x: &StateVector,
        i: usize,
    ) -> Result<f64> {
        let e_i = coeffs[(j, i)];
        if e_i == 0.0 {
            return Ok(0.0);
        }
        let mut prod = e_i * power(x[i], e_i - 1.0)?;
        for l in 0..x.len() {
            if l != i {
                prod *= power(x[l], coeffs[(j, l)])?;
            }
        }
        Ok(prod)
    }

    fn check_state(&self, x: &StateVector) -> Result<()> {
        if x.len() != self.n_species() {
            return Err(Error::Argument(format!(
                "state has length {}, expected {}",
                x.len(),
                self.n_species()
            )));
        }
        Ok(())
    }
}

/// `base^exp` with `0^0 = 1`; rejects the combinations that have no real
/// value (negative base with fractional exponent, zero base with negative
/// exponent).
fn power(base: f64, exp: f64) -> Result<f64> {
    if exp == 0.0 {
        return Ok(1.0);
    }
    if base < 0.0 && exp.fract() != 0.0 {
        return Err(Error::Domain(format!(
            "negative concentration {base} with non-integer exponent {exp}"
        )));
    }
    if base == 0.0 && exp < 0.0 {
        return Err(Error::Domain(format!(
            "zero concentration raised to negative exponent {exp}"
        )));
    }
    if exp.fract() == 0.0 && exp.abs() < i32::MAX as f64 {
        Ok(base.powi(exp as i32))
    } else {
        Ok(base.powf(exp))
    }
}

// --- file format -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    species: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    measurement: Option<Vec<Vec<f64>>>,
    reactions: Vec<ReactionDoc>,
}

#[derive(Serialize, Deserialize)]
struct ReactionDoc {
    q: Vec<u32>,
    w: Vec<u32>,
    v: f64,
    b: f64,
}

/// Parses a network document (TOML).
///
/// Schema: `species = [names]`, `[[reactions]]` tables with integer
/// coefficient arrays `q`, `w` and rates `v`, `b`, and an optional
/// `measurement` row list that defaults to the identity.
pub fn parse_network(text: &str) -> Result<ReactionNetwork> {
    let doc: NetworkDoc = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let n_x = doc.species.len();
    let n_r = doc.reactions.len();
    let mut reactant = DMatrix::zeros(n_r, n_x);
    let mut product = DMatrix::zeros(n_r, n_x);
    let mut forward = DVector::zeros(n_r);
    let mut backward = DVector::zeros(n_r);
    for (j, reaction) in doc.reactions.iter().enumerate() {
        if reaction.q.len() != n_x || reaction.w.len() != n_x {
            return Err(Error::Parse(format!(
                "reactions[{j}]: q and w must have one entry per species ({n_x}); \
                 got {} and {}",
                reaction.q.len(),
                reaction.w.len()
            )));
        }
        for i in 0..n_x {
            reactant[(j, i)] = f64::from(reaction.q[i]);
            product[(j, i)] = f64::from(reaction.w[i]);
        }
        forward[j] = reaction.v;
        backward[j] = reaction.b;
    }
    let measurement = match doc.measurement {
        None => None,
        Some(rows) => {
            let n_rows = rows.len();
            if n_rows == 0 || rows.iter().any(|r| r.len() != n_x) {
                return Err(Error::Parse(format!(
                    "measurement must be a non-empty list of rows of length {n_x}"
                )));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            Some(DMatrix::from_row_slice(n_rows, n_x, &flat))
        }
    };
    ReactionNetwork::new(doc.species, reactant, product, forward, backward, measurement)
}

/// Reads and parses a network document from disk.
pub fn load_network(path: &std::path::Path) -> Result<ReactionNetwork> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    parse_network(&text)
}

/// Serializes a network back to the document format. Rates round-trip
/// bit-exact; coefficients must be nonnegative integers.
pub fn serialize_network(net: &ReactionNetwork) -> Result<String> {
    let n_x = net.n_species();
    let mut reactions = Vec::with_capacity(net.n_reactions());
    for j in 0..net.n_reactions() {
        let to_ints = |table: &DMatrix<f64>| -> Result<Vec<u32>> {
            (0..n_x)
                .map(|i| {
                    let c = table[(j, i)];
                    if c.fract() != 0.0 || c < 0.0 || c > f64::from(u32::MAX) {
                        Err(Error::Argument(format!(
                            "reactions[{j}]: coefficient {c} is not a nonnegative integer"
                        )))
                    } else {
                        Ok(c as u32)
                    }
                })
                .collect()
        };
        reactions.push(ReactionDoc {
            q: to_ints(&net.reactant_coeffs)?,
            w: to_ints(&net.product_coeffs)?,
            v: net.forward_rates[j],
            b: net.backward_rates[j],
        });
    }
    let identity = net.measurement == DMatrix::identity(n_x, n_x);
    let measurement = (!identity).then(|| {
        (0..net.measurement.nrows())
            .map(|r| net.measurement.row(r).iter().copied().collect())
            .collect()
    });
    let doc = NetworkDoc {
        species: net.species.clone(),
        measurement,
        reactions,
    };
    toml::to_string(&doc).map_err(|e| Error::Parse(e.to_string()))
}

/// Bundled benchmark networks.
pub mod bundled {
    use super::{parse_network, ReactionNetwork};

    const SIX_SPECIES: &str = include_str!("../../../configs/six_species.toml");
    const NINE_SPECIES: &str = include_str!("../../../configs/nine_species.toml");

    /// The 6-species, 6-reversible-reaction hydrogen/oxygen benchmark.
    pub fn six_species() -> ReactionNetwork {
        parse_network(SIX_SPECIES).expect("bundled six-species network is valid")
    }

    /// The 9-species hydrogen/oxygen surrogate.
    pub fn nine_species() -> ReactionNetwork {
        parse_network(NINE_SPECIES).expect("bundled nine-species network is valid")
    }
}
