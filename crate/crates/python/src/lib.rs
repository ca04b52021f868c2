//! Python bindings for the insnsim simulator.
//!
//! Exposes reference runs, traces, datasets, trained models and the
//! trace-driven simulator.

use pyo3::prelude::*;

#[pymodule]
mod insnsim {
    use std::fs::File;
    use std::io::BufReader;

    use insnsim_core::dataset::{BuildOptions, Dataset as CoreDataset, Partition};
    use insnsim_core::des::{self, ProcessorConfig};
    use insnsim_core::predictor::{self, class_of, CnnConfig, CnnModel, TrainOptions};
    use insnsim_core::report::mean_prediction_errors;
    use insnsim_core::sim::{
        simulate_parallel, CnnPredictor, LatencyPredictor, OraclePredictor, ParallelOptions, SimConfig,
    };
    use insnsim_core::trace::{self, AnnotatedInstruction, FeatureLayout, LatencyTriple};
    use insnsim_core::workload::{generate, WorkloadKind, WorkloadSpec};
    use insnsim_core::Error;
    use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
    use pyo3::prelude::*;
    use pyo3::types::PyDict;

    fn py_err(e: Error) -> PyErr {
        match e {
            Error::Io(e) => PyIOError::new_err(e.to_string()),
            e @ (Error::Config(_) | Error::InvalidArgument(_) | Error::Shape(_)) => {
                PyValueError::new_err(e.to_string())
            }
            e => PyRuntimeError::new_err(e.to_string()),
        }
    }

    fn kind(name: &str) -> PyResult<WorkloadKind> {
        WorkloadKind::parse(name).ok_or_else(|| {
            let known: Vec<_> = WorkloadKind::ALL.iter().map(|k| k.name()).collect();
            PyValueError::new_err(format!("unknown workload {name:?}; expected one of {known:?}"))
        })
    }

    /// Names of the synthetic workload kinds.
    #[pyfunction]
    fn workload_kinds() -> Vec<&'static str> {
        WorkloadKind::ALL.iter().map(|k| k.name()).collect()
    }

    /// An annotated instruction trace with ground-truth latencies.
    #[pyclass(module = "insnsim")]
    pub struct Trace {
        records: Vec<AnnotatedInstruction>,
        config_hash: u64,
    }

    #[pymethods]
    impl Trace {
        #[staticmethod]
        fn load(path: &str) -> PyResult<Trace> {
            let file = File::open(path).map_err(|e| py_err(e.into()))?;
            let (header, records) = trace::read_trace_from(BufReader::new(file)).map_err(py_err)?;
            Ok(Trace {
                records,
                config_hash: header.config_hash,
            })
        }

        fn save(&self, path: &str) -> PyResult<()> {
            trace::write_trace(path, &self.records, self.config_hash).map_err(py_err)
        }

        #[getter]
        fn config_hash(&self) -> u64 {
            self.config_hash
        }

        /// `(fetch, execution, store)` latencies in trace order.
        fn latencies(&self) -> Vec<(u32, u32, u32)> {
            self.records
                .iter()
                .map(|r| (r.truth.fetch, r.truth.execution, r.truth.store))
                .collect()
        }

        fn __len__(&self) -> usize {
            self.records.len()
        }

        fn __repr__(&self) -> String {
            format!("Trace(len={}, config_hash={:#018x})", self.records.len(), self.config_hash)
        }
    }

    /// Generates a synthetic workload and runs it on the reference
    /// out-of-order model. Returns `(trace, total_cycles, cpi)`.
    #[pyfunction]
    #[pyo3(signature = (workload, instructions, seed=0))]
    fn reference_run(py: Python<'_>, workload: &str, instructions: u64, seed: u64) -> PyResult<(Trace, u64, f64)> {
        let spec = WorkloadSpec::preset(kind(workload)?, instructions, seed);
        let config = ProcessorConfig::default();
        let run = py
            .detach(|| generate(&spec).and_then(|prog| des::simulate(&prog, &config)))
            .map_err(py_err)?;
        let trace = Trace {
            records: run.trace,
            config_hash: config.hash(),
        };
        Ok((trace, run.total_cycles, run.cpi))
    }

    /// Training samples built from one or more traces.
    #[pyclass(module = "insnsim")]
    pub struct Dataset {
        inner: CoreDataset,
    }

    #[pymethods]
    impl Dataset {
        #[staticmethod]
        #[pyo3(signature = (traces, max_context=110, dedup=true, split=(90, 5, 5)))]
        fn build(
            py: Python<'_>,
            traces: Vec<PyRef<'_, Trace>>,
            max_context: usize,
            dedup: bool,
            split: (u32, u32, u32),
        ) -> PyResult<Dataset> {
            let refs: Vec<&[AnnotatedInstruction]> = traces.iter().map(|t| t.records.as_slice()).collect();
            let opts = BuildOptions {
                layout: FeatureLayout::new(max_context),
                dedup,
                split: [split.0, split.1, split.2],
            };
            let inner = py.detach(|| CoreDataset::build(&refs, &opts)).map_err(py_err)?;
            Ok(Dataset { inner })
        }

        #[staticmethod]
        fn load(path: &str) -> PyResult<Dataset> {
            CoreDataset::read(path).map(|inner| Dataset { inner }).map_err(py_err)
        }

        fn save(&self, path: &str) -> PyResult<()> {
            self.inner.write(path).map_err(py_err)
        }

        #[getter]
        fn max_context(&self) -> usize {
            self.inner.layout.max_context
        }

        /// Sample counts of the train, validation and test partitions.
        fn partition_sizes(&self) -> (usize, usize, usize) {
            let n = |p| self.inner.indices(p).len();
            (n(Partition::Train), n(Partition::Validation), n(Partition::Test))
        }

        fn __len__(&self) -> usize {
            self.inner.len()
        }
    }

    /// A trained latency predictor.
    #[pyclass(module = "insnsim")]
    pub struct Model {
        inner: CnnModel,
    }

    #[pymethods]
    impl Model {
        /// Trains a new model. Returns it with the `(train, validation)`
        /// loss of every epoch.
        #[staticmethod]
        #[pyo3(signature = (
            dataset, preset="c3", epochs=10, batch_size=128, lr=0.001, seed=0,
            samples_per_epoch=None, final_lr_ratio=1.0
        ))]
        #[allow(clippy::too_many_arguments)]
        fn train(
            py: Python<'_>,
            dataset: &Dataset,
            preset: &str,
            epochs: usize,
            batch_size: usize,
            lr: f64,
            seed: u64,
            samples_per_epoch: Option<usize>,
            final_lr_ratio: f64,
        ) -> PyResult<(Model, Vec<(f64, f64)>)> {
            let ds = &dataset.inner;
            let config = CnnConfig::preset(preset, &ds.layout).map_err(py_err)?;
            let opts = TrainOptions {
                epochs,
                batch_size,
                lr,
                seed,
                samples_per_epoch,
                final_lr_ratio,
            };
            let outcome = py.detach(|| predictor::train(ds, &config, &opts)).map_err(py_err)?;
            let history = outcome
                .epochs
                .iter()
                .map(|e| (e.train_loss, e.validation_loss))
                .collect();
            Ok((Model { inner: outcome.model }, history))
        }

        #[staticmethod]
        fn load(path: &str) -> PyResult<Model> {
            CnnModel::read(path).map(|inner| Model { inner }).map_err(py_err)
        }

        fn save(&self, path: &str) -> PyResult<()> {
            self.inner.write(path).map_err(py_err)
        }

        #[getter]
        fn parameter_count(&self) -> usize {
            self.inner.net.params.len()
        }

        /// Test-partition metrics: mean per-head prediction errors and the
        /// fetch-class accuracy.
        fn evaluate<'py>(&self, py: Python<'py>, dataset: &Dataset) -> PyResult<Bound<'py, PyDict>> {
            let ds = &dataset.inner;
            let test = ds.indices(Partition::Test);
            let model = &self.inner;
            let preds = py.detach(|| predictor::predict_samples(model, ds, &test, 256));
            let truth: Vec<LatencyTriple> = test.iter().map(|&s| ds.label(s)).collect();
            let latencies: Vec<LatencyTriple> = preds.iter().map(|p| p.latency).collect();
            let errors = mean_prediction_errors(&latencies, &truth).map_err(py_err)?;
            let classes = model.config.class_counts[0];
            let hits = preds
                .iter()
                .zip(&truth)
                .filter(|(p, t)| p.classes[0] == class_of(t.fetch, classes))
                .count();
            let d = PyDict::new(py);
            d.set_item("samples", test.len())?;
            d.set_item("fetch_error", errors[0])?;
            d.set_item("execution_error", errors[1])?;
            d.set_item("store_error", errors[2])?;
            d.set_item("fetch_accuracy", hits as f64 / test.len().max(1) as f64)?;
            Ok(d)
        }
    }

    /// Replays a trace through the trace-driven simulator. Without a model
    /// the recorded latencies are used.
    #[pyfunction]
    #[pyo3(signature = (trace, model=None, sub_traces=1, workers=0, max_context=110))]
    fn simulate<'py>(
        py: Python<'py>,
        trace: &Trace,
        model: Option<&Model>,
        sub_traces: usize,
        workers: usize,
        max_context: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let cfg = SimConfig {
            max_context,
            ..Default::default()
        };
        let opts = ParallelOptions {
            sub_traces,
            workers,
            ..Default::default()
        };
        let records = &trace.records;
        let result = py
            .detach(|| {
                let predictor: Box<dyn LatencyPredictor> = match model {
                    Some(m) => Box::new(CnnPredictor::new(m.inner.clone())),
                    None => Box::new(OraclePredictor::new(records)),
                };
                simulate_parallel(records, predictor.as_ref(), &cfg, &opts)
            })
            .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("total_cycles", result.total_cycles)?;
        d.set_item("instructions", result.instruction_count)?;
        d.set_item("cpi", result.cpi)?;
        d.set_item("sum_fetch", result.parts.iter().map(|p| p.sum_fetch).sum::<u64>())?;
        d.set_item("delta", result.parts.iter().map(|p| p.delta).sum::<u64>())?;
        d.set_item("sub_trace_cycles", result.parts.iter().map(|p| p.total_cycles).collect::<Vec<_>>())?;
        Ok(d)
    }
}
