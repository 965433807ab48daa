use std::path::PathBuf;

use kgdomain::ellipsoid::fit_with_outcome;
use kgdomain::eval::{comparison_csv, comparison_text};
use kgdomain::graph::load_dataset_dir;
use pyo3::exceptions::{PyKeyError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: kgdomain::Error) -> PyErr {
    use kgdomain::Error::*;
    match e {
        Io { .. } => PyOSError::new_err(e.to_string()),
        UnknownLabel { .. } => PyKeyError::new_err(e.to_string()),
        Parse { .. } | Config(_) | Format(_) | DimensionMismatch { .. } | EmptyInput(_) | StaleDomainModel { .. } => {
            PyValueError::new_err(e.to_string())
        }
        Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = kgdomain::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

#[pyclass(name = "KnowledgeGraph", module = "pykgdomain", frozen)]
struct PyGraph {
    inner: kgdomain::KnowledgeGraph,
}

#[pymethods]
impl PyGraph {
    /// Load `train.txt`, `valid.txt` and `test.txt` from a directory.
    #[staticmethod]
    #[pyo3(signature = (directory, format = "hrt"))]
    fn load(directory: PathBuf, format: &str) -> PyResult<Self> {
        let inner = load_dataset_dir(&directory, parse(format)?).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (train, valid = Vec::new(), test = Vec::new()))]
    fn from_triples(
        train: Vec<[String; 3]>,
        valid: Vec<[String; 3]>,
        test: Vec<[String; 3]>,
    ) -> PyResult<Self> {
        let inner = kgdomain::KnowledgeGraph::from_labeled(&train, &valid, &test).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_entities(&self) -> usize {
        self.inner.num_entities()
    }

    #[getter]
    fn num_relations(&self) -> usize {
        self.inner.num_relations()
    }

    /// `(train, valid, test)` triple counts.
    #[getter]
    fn split_sizes(&self) -> (usize, usize, usize) {
        (self.inner.train.len(), self.inner.valid.len(), self.inner.test.len())
    }

    fn entity_id(&self, label: &str) -> PyResult<u32> {
        self.inner.entities.id(label).ok_or_else(|| PyKeyError::new_err(label.to_string()))
    }

    fn relation_id(&self, label: &str) -> PyResult<u32> {
        self.inner.relations.id(label).ok_or_else(|| PyKeyError::new_err(label.to_string()))
    }

    fn entity_label(&self, id: u32) -> PyResult<String> {
        self.inner
            .entities
            .label(id)
            .map(str::to_string)
            .ok_or_else(|| PyKeyError::new_err(id))
    }

    fn relation_categories(&self) -> Vec<(String, String)> {
        kgdomain::graph::classify_relations(&self.inner)
            .into_iter()
            .map(|(r, c)| (self.inner.relations.label(r).unwrap_or_default().to_string(), c.as_str().to_string()))
            .collect()
    }

    fn __repr__(&self) -> String {
        let (tr, va, te) = self.split_sizes();
        format!(
            "KnowledgeGraph(entities={}, relations={}, train={tr}, valid={va}, test={te})",
            self.num_entities(),
            self.num_relations()
        )
    }
}

#[pyclass(name = "Model", module = "pykgdomain", frozen)]
struct PyModel {
    inner: kgdomain::EmbeddingModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: kgdomain::EmbeddingModel::load(&path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant.as_str()
    }

    #[getter]
    fn final_dim(&self) -> usize {
        self.inner.final_dim()
    }

    #[getter]
    fn fingerprint(&self) -> u64 {
        self.inner.fingerprint()
    }

    /// Baseline dissimilarity of `(head, relation, tail)` by id.
    fn score(&self, head: u32, relation: u32, tail: u32) -> PyResult<f64> {
        self.inner.score_triple(&kgdomain::Triple::new(head, relation, tail)).map_err(to_py)
    }

    /// Entity vector in the relation's final space for `side` ("head" or "tail").
    fn project(&self, entity: u32, relation: u32, side: &str) -> PyResult<Vec<f64>> {
        self.inner.project_entity(entity, relation, parse(side)?).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(variant={}, entities={}, relations={}, dim={})",
            self.variant(),
            self.inner.num_entities,
            self.inner.num_relations,
            self.final_dim()
        )
    }
}

/// Train a baseline embedding. Staged variants need `init`, a trained TransE.
#[pyfunction]
#[pyo3(signature = (
    graph, variant = "transe", dim = 50, rel_dim = None, lr = 0.001, margin = 2.0, batch = 120,
    dissim = "l1", epochs = 1000, sampling = "uniform", seed = 0, normalize = false, init = None,
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    graph: &PyGraph,
    variant: &str,
    dim: usize,
    rel_dim: Option<usize>,
    lr: f64,
    margin: f64,
    batch: usize,
    dissim: &str,
    epochs: usize,
    sampling: &str,
    seed: u64,
    normalize: bool,
    init: Option<&PyModel>,
) -> PyResult<PyModel> {
    let cfg = kgdomain::TrainConfig {
        variant: parse(variant)?,
        dim_entity: dim,
        dim_relation: rel_dim.unwrap_or(dim),
        learning_rate: lr,
        margin,
        batch_size: batch,
        dissimilarity: parse(dissim)?,
        epochs,
        negative_sampling: parse(sampling)?,
        seed,
        normalize_entities: normalize,
        early_stop: None,
    };
    let init = init.map(|m| &m.inner);
    let inner = py.detach(|| kgdomain::train(&graph.inner, &cfg, init)).map_err(to_py)?;
    Ok(PyModel { inner })
}

#[pyclass(name = "Ellipsoid", module = "pykgdomain", frozen)]
struct PyEllipsoid {
    inner: kgdomain::Ellipsoid,
}

#[pymethods]
impl PyEllipsoid {
    /// From a center and a lower-triangular factor given as rows.
    #[new]
    fn new(center: Vec<f64>, factor: Vec<Vec<f64>>) -> PyResult<Self> {
        let k = center.len();
        if factor.len() != k || factor.iter().any(|row| row.len() != k) {
            return Err(PyValueError::new_err(format!("factor must be {k} x {k}")));
        }
        let dense: Vec<f64> = factor.concat();
        let l = kgdomain::LowerTriangular::from_dense(k, &dense).map_err(to_py)?;
        Ok(Self { inner: kgdomain::Ellipsoid::new(center, l).map_err(to_py)? })
    }

    #[staticmethod]
    fn sphere(center: Vec<f64>, radius: f64) -> PyResult<Self> {
        Ok(Self { inner: kgdomain::Ellipsoid::sphere(center, radius).map_err(to_py)? })
    }

    /// Fit to a point cloud with SGD on the radial distance.
    #[staticmethod]
    #[pyo3(signature = (points, lr = 1e-5, batch = 120, epochs = 500, seed = 0))]
    fn fit(py: Python<'_>, points: Vec<Vec<f64>>, lr: f64, batch: usize, epochs: usize, seed: u64) -> PyResult<Self> {
        let cfg = kgdomain::FitConfig {
            learning_rate: lr,
            batch_size: batch,
            epochs,
            seed,
            ..kgdomain::FitConfig::default()
        };
        let out = py.detach(|| fit_with_outcome(&points, &cfg)).map_err(to_py)?;
        Ok(Self { inner: out.ellipsoid })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn center(&self) -> Vec<f64> {
        self.inner.center().to_vec()
    }

    /// `M = L Lᵀ` as rows.
    #[getter]
    fn matrix(&self) -> Vec<Vec<f64>> {
        self.inner.matrix().chunks(self.inner.dim()).map(<[f64]>::to_vec).collect()
    }

    fn quad_form(&self, point: Vec<f64>) -> PyResult<f64> {
        self.inner.quad_form(&point).map_err(to_py)
    }

    fn contains(&self, point: Vec<f64>) -> PyResult<bool> {
        self.inner.contains(&point).map_err(to_py)
    }

    fn score_train(&self, point: Vec<f64>) -> PyResult<f64> {
        self.inner.score_train(&point).map_err(to_py)
    }

    fn score_test(&self, point: Vec<f64>) -> PyResult<f64> {
        self.inner.score_test(&point).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Ellipsoid(dim={}, center={:?})", self.dim(), self.inner.center())
    }
}

#[pyclass(name = "DomainModel", module = "pykgdomain", frozen)]
struct PyDomains {
    inner: kgdomain::DomainModel,
}

#[pymethods]
impl PyDomains {
    /// Fit one ellipsoid per relation side of the training split.
    #[staticmethod]
    #[pyo3(signature = (graph, model, lr = 1e-5, batch = 120, epochs = 500, seed = 0, min_members = 2))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        graph: &PyGraph,
        model: &PyModel,
        lr: f64,
        batch: usize,
        epochs: usize,
        seed: u64,
        min_members: usize,
    ) -> PyResult<Self> {
        let cfg = kgdomain::FitConfig {
            learning_rate: lr,
            batch_size: batch,
            epochs,
            seed,
            min_members,
            ..kgdomain::FitConfig::default()
        };
        let inner = py
            .detach(|| kgdomain::fit_all_domains(&graph.inner, &model.inner, &cfg))
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: kgdomain::DomainModel::load(&path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn num_fitted(&self) -> usize {
        self.inner.ellipsoids.len()
    }

    #[getter]
    fn num_skipped(&self) -> usize {
        self.inner.skipped.len()
    }

    fn ellipsoid(&self, relation: u32, side: &str) -> PyResult<Option<PyEllipsoid>> {
        Ok(self.inner.get(relation, parse(side)?).map(|e| PyEllipsoid { inner: e.clone() }))
    }

    /// Domain penalty of `entity` in the `side` slot of `relation`.
    fn penalty(&self, model: &PyModel, entity: u32, relation: u32, side: &str) -> PyResult<f64> {
        kgdomain::domain_penalty(&self.inner, &model.inner, entity, relation, parse(side)?).map_err(to_py)
    }
}

#[pyclass(name = "EvalReport", module = "pykgdomain", frozen)]
struct PyReport {
    inner: kgdomain::EvalReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn n_test(&self) -> usize {
        self.inner.n_test
    }

    #[getter]
    fn tie_rate(&self) -> f64 {
        self.inner.tie_rate
    }

    /// `{"filtered.tail.all.hits@10": 93.1, ...}`
    fn metrics(&self) -> std::collections::BTreeMap<String, f64> {
        self.inner
            .rows()
            .into_iter()
            .map(|(setting, side, cat, metric, v)| (format!("{setting}.{side}.{cat}.{metric}"), v))
            .collect()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }
}

#[pyfunction]
#[pyo3(signature = (graph, model, domains = None, ties = "optimistic"))]
fn evaluate(
    py: Python<'_>,
    graph: &PyGraph,
    model: &PyModel,
    domains: Option<&PyDomains>,
    ties: &str,
) -> PyResult<PyReport> {
    let opts = kgdomain::EvalOptions { tie_mode: parse(ties)? };
    let dm = domains.map(|d| &d.inner);
    let inner = py
        .detach(|| kgdomain::evaluate(&model.inner, dm, &graph.inner, &opts))
        .map_err(to_py)?;
    Ok(PyReport { inner })
}

/// Side-by-side `(text, csv)` of a baseline and a domain-augmented report.
#[pyfunction]
fn compare(baseline: &PyReport, dre: &PyReport) -> (String, String) {
    (comparison_text(&baseline.inner, &dre.inner), comparison_csv(&baseline.inner, &dre.inner))
}

#[pymodule]
fn pykgdomain(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyEllipsoid>()?;
    m.add_class::<PyDomains>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
