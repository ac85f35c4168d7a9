//! Python bindings: encryption, sharing, the accountant and whole simulated runs.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use dpagg::{ahe, aggproto, committee, dpcore, harness, sharing};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "AheParams", module = "dpagg_py", frozen)]
struct PyAheParams {
    inner: ahe::AheParams,
}

#[pymethods]
impl PyAheParams {
    #[new]
    #[pyo3(signature = (degree = 4096, max_adds = 1024))]
    fn new(degree: usize, max_adds: u64) -> PyResult<Self> {
        if degree == 4096 {
            return Ok(Self {
                inner: ahe::AheParams::desk(max_adds),
            });
        }
        if !degree.is_power_of_two() || !(8..=4096).contains(&degree) {
            return Err(PyValueError::new_err(format!("degree {degree} must be a power of two in [8, 4096]")));
        }
        Ok(Self {
            inner: ahe::AheParams::with_degree(degree, max_adds),
        })
    }

    #[getter]
    fn degree(&self) -> usize {
        self.inner.ring().degree()
    }

    #[getter]
    fn modulus(&self) -> u128 {
        self.inner.ring().q()
    }

    #[getter]
    fn plain_modulus(&self) -> u64 {
        self.inner.plain_modulus()
    }

    #[getter]
    fn slots(&self) -> usize {
        self.inner.slots()
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.inner.scale()
    }

    #[getter]
    fn fresh_noise_bound(&self) -> u128 {
        self.inner.fresh_noise_bound()
    }

    #[getter]
    fn ciphertext_bytes(&self) -> usize {
        ahe::Ciphertext::serialized_len(&self.inner)
    }

    fn smudging_bound(&self, committee: usize) -> PyResult<u128> {
        self.inner.smudging_for_committee(committee).map_err(err)
    }
}

#[pyclass(name = "PublicKey", module = "dpagg_py", frozen)]
struct PyPublicKey {
    inner: ahe::PublicKey,
}

#[pyclass(name = "SecretKey", module = "dpagg_py", frozen)]
struct PySecretKey {
    inner: ahe::SecretKey,
}

#[pyclass(name = "Plaintext", module = "dpagg_py", frozen)]
struct PyPlaintext {
    inner: ahe::Plaintext,
    plain_modulus: u64,
}

#[pymethods]
impl PyPlaintext {
    #[getter]
    fn round_t(&self) -> u64 {
        self.inner.round_t
    }

    fn coeffs(&self) -> Vec<u64> {
        self.inner.coeffs()
    }

    fn decode(&self) -> Vec<f64> {
        self.inner.decode(self.plain_modulus)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

#[pyclass(name = "Ciphertext", module = "dpagg_py", frozen)]
struct PyCiphertext {
    inner: ahe::Ciphertext,
}

#[pymethods]
impl PyCiphertext {
    fn to_bytes(&self, params: &PyAheParams) -> Vec<u8> {
        self.inner.to_bytes(&params.inner)
    }

    #[staticmethod]
    fn from_bytes(params: &PyAheParams, data: Vec<u8>) -> PyResult<Self> {
        ahe::Ciphertext::from_bytes(&params.inner, &data)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    fn add(&self, other: &Self, params: &PyAheParams) -> PyResult<Self> {
        ahe::ct_add(&self.inner, &other.inner, &params.inner)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    fn digest(&self, params: &PyAheParams) -> String {
        dpagg::hash::hex(&self.inner.digest(&params.inner))
    }
}

#[pyfunction]
fn keygen(params: &PyAheParams, seed: u64) -> (PyPublicKey, PySecretKey) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (pk, sk) = ahe::keygen(&params.inner, &mut rng);
    (PyPublicKey { inner: pk }, PySecretKey { inner: sk })
}

#[pyfunction]
fn encode(round_t: u64, update: Vec<f64>, params: &PyAheParams) -> PyResult<PyPlaintext> {
    ahe::encode(round_t, &update, &params.inner)
        .map(|inner| PyPlaintext {
            inner,
            plain_modulus: params.inner.plain_modulus(),
        })
        .map_err(err)
}

#[pyfunction]
fn encrypt(pk: &PyPublicKey, pt: &PyPlaintext, params: &PyAheParams, seed: u64) -> PyResult<PyCiphertext> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ahe::encrypt(&pk.inner, &pt.inner, &params.inner, &mut rng)
        .map(|(inner, _)| PyCiphertext { inner })
        .map_err(err)
}

#[pyfunction]
fn decrypt(sk: &PySecretKey, ct: &PyCiphertext, params: &PyAheParams) -> PyResult<PyPlaintext> {
    ahe::decrypt(&sk.inner, &ct.inner, &params.inner)
        .map(|inner| PyPlaintext {
            inner,
            plain_modulus: params.inner.plain_modulus(),
        })
        .map_err(err)
}

#[pyclass(name = "ShareSet", module = "dpagg_py", frozen)]
struct PyShareSet {
    inner: sharing::ShareSet,
    group: sharing::DlogGroup,
}

#[pymethods]
impl PyShareSet {
    #[getter]
    fn threshold(&self) -> usize {
        self.inner.threshold
    }

    #[getter]
    fn count(&self) -> usize {
        self.inner.count
    }

    fn member_shares(&self, i: u32) -> PyResult<Vec<u128>> {
        self.inner.member_shares(i).map(<[u128]>::to_vec).map_err(err)
    }

    fn verify(&self, i: u32, shares: Vec<u128>) -> bool {
        sharing::verify_share_vector(i, &shares, &self.inner.feldman, &self.group)
    }

    fn reconstruct(&self, quorum: Vec<u32>) -> PyResult<Vec<u128>> {
        self.inner.reconstruct(&quorum, self.group.field()).map_err(err)
    }
}

/// Feldman-verifiable Shamir sharing of `secret` (elements of Z_q) among `c` members, threshold `a`.
#[pyfunction]
#[pyo3(signature = (secret, c, a, q = 97, seed = 0))]
fn share(secret: Vec<u128>, c: usize, a: usize, q: u128, seed: u64) -> PyResult<PyShareSet> {
    let group = sharing::DlogGroup::for_modulus(q).map_err(err)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let inner = sharing::share(&secret, c, a, &group, &mut rng).map_err(err)?;
    Ok(PyShareSet { inner, group })
}

#[pyfunction]
fn failure_prob(f: f64, t_frac: f64, c: usize) -> PyResult<f64> {
    committee::failure_prob(f, t_frac, c).map_err(err)
}

#[pyfunction]
fn moments_alpha(q: f64, z: f64, order: u32) -> PyResult<f64> {
    dpcore::moments_alpha(q, z, order).map_err(err)
}

#[pyfunction]
fn epsilon_for(rounds: u64, q: f64, z: f64, delta: f64) -> PyResult<f64> {
    dpcore::epsilon_for(rounds, q, z, delta).map_err(err)
}

#[pyfunction]
fn trees_needed(num_params: usize, slots: usize) -> usize {
    aggproto::trees_needed(num_params, slots)
}

#[pyfunction]
fn sampling_concentration_bound(qw: f64, k: f64) -> f64 {
    aggproto::sampling_concentration_bound(qw, k)
}

#[pyfunction]
fn desk_config() -> String {
    harness::WorldConfig::desk().to_json()
}

/// Runs every round of the JSON world config; returns the per-round reports as JSON strings.
#[pyfunction]
#[pyo3(signature = (config_json, out = None))]
fn run(py: Python<'_>, config_json: &str, out: Option<PathBuf>) -> PyResult<Vec<String>> {
    let cfg = harness::WorldConfig::from_json(config_json).map_err(err)?;
    let outcome = py
        .detach(|| harness::run_scenario(cfg, &harness::ScenarioOptions { out }))
        .map_err(err)?;
    outcome
        .reports
        .iter()
        .map(|r| serde_json::to_string(r).map_err(err))
        .collect()
}

#[pymodule]
fn dpagg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAheParams>()?;
    m.add_class::<PyPublicKey>()?;
    m.add_class::<PySecretKey>()?;
    m.add_class::<PyPlaintext>()?;
    m.add_class::<PyCiphertext>()?;
    m.add_class::<PyShareSet>()?;
    m.add_function(wrap_pyfunction!(keygen, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(encrypt, m)?)?;
    m.add_function(wrap_pyfunction!(decrypt, m)?)?;
    m.add_function(wrap_pyfunction!(share, m)?)?;
    m.add_function(wrap_pyfunction!(failure_prob, m)?)?;
    m.add_function(wrap_pyfunction!(moments_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon_for, m)?)?;
    m.add_function(wrap_pyfunction!(trees_needed, m)?)?;
    m.add_function(wrap_pyfunction!(sampling_concentration_bound, m)?)?;
    m.add_function(wrap_pyfunction!(desk_config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
