//! Error metrics and CSV reports.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trace::LatencyTriple;

/// `|predicted - truth| / (truth + 1)`.
pub fn prediction_error(predicted: u32, truth: u32) -> f64 {
    (predicted as f64 - truth as f64).abs() / (truth as f64 + 1.0)
}

/// Percentage difference of a model CPI from a reference CPI.
pub fn cpi_error(cpi_model: f64, cpi_reference: f64) -> Result<f64> {
    if !(cpi_reference > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "reference CPI must be positive, got {cpi_reference}"
        )));
    }
    Ok((cpi_model / cpi_reference - 1.0).abs() * 100.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhaseWindow {
    pub index: usize,
    pub instructions: u64,
    pub cycles: u64,
    pub cpi: f64,
    /// Set on a trailing window shorter than the requested size.
    pub partial: bool,
}

/// CPI of consecutive `window`-instruction windows from per-instruction
/// fetch latencies.
pub fn phase_cpi(fetch: &[u32], window: u64) -> Result<Vec<PhaseWindow>> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    Ok(fetch
        .chunks(window.min(usize::MAX as u64) as usize)
        .enumerate()
        .map(|(index, w)| {
            let cycles: u64 = w.iter().map(|&f| f as u64).sum();
            PhaseWindow {
                index,
                instructions: w.len() as u64,
                cycles,
                cpi: cycles as f64 / w.len() as f64,
                partial: (w.len() as u64) < window,
            }
        })
        .collect())
}

pub fn windows_csv(windows: &[PhaseWindow]) -> String {
    let mut s = String::from("window_index,instructions,cpi,partial\n");
    for w in windows {
        s.push_str(&format!("{},{},{:.6},{}\n", w.index, w.instructions, w.cpi, w.partial));
    }
    s
}

/// Per-head mean error over paired predictions.
pub fn mean_prediction_errors(predicted: &[LatencyTriple], truth: &[LatencyTriple]) -> Result<[f64; 3]> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut sum = [0.0; 3];
    for (p, t) in predicted.iter().zip(truth) {
        let (p, t) = (p.as_array(), t.as_array());
        for h in 0..3 {
            sum[h] += prediction_error(p[h], t[h]);
        }
    }
    let n = predicted.len().max(1) as f64;
    Ok(sum.map(|s| s / n))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorkloadCpi {
    pub workload: String,
    pub reference_cpi: f64,
    pub model_cpi: f64,
    pub error_percent: f64,
    /// Whether the workload contributed training data.
    pub trained: bool,
}

impl WorkloadCpi {
    pub fn new(workload: &str, reference_cpi: f64, model_cpi: f64, trained: bool) -> Result<WorkloadCpi> {
        Ok(WorkloadCpi {
            workload: workload.to_string(),
            reference_cpi,
            model_cpi,
            error_percent: cpi_error(model_cpi, reference_cpi)?,
            trained,
        })
    }
}

/// Phase CPI of two simulators over the same instructions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseComparison {
    pub workload: String,
    pub reference: Vec<PhaseWindow>,
    pub model: Vec<PhaseWindow>,
}

impl PhaseComparison {
    pub fn new(workload: &str, reference_fetch: &[u32], model_fetch: &[u32], window: u64) -> Result<PhaseComparison> {
        if reference_fetch.len() != model_fetch.len() {
            return Err(Error::Shape("phase series cover different instruction counts".into()));
        }
        Ok(PhaseComparison {
            workload: workload.to_string(),
            reference: phase_cpi(reference_fetch, window)?,
            model: phase_cpi(model_fetch, window)?,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("workload,window_index,reference_cpi,model_cpi,difference,partial\n");
        for (r, m) in self.reference.iter().zip(&self.model) {
            s.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{}\n",
                self.workload,
                r.index,
                r.cpi,
                m.cpi,
                m.cpi - r.cpi,
                r.partial
            ));
        }
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ErrorReport {
    /// Fetch, execution, store.
    pub head_errors: Option<[f64; 3]>,
    pub fetch_class_accuracy: Option<f64>,
    pub workloads: Vec<WorkloadCpi>,
    pub phases: Vec<PhaseComparison>,
}

impl ErrorReport {
    fn mean_error(&self, trained: bool) -> Option<f64> {
        let v: Vec<f64> = self
            .workloads
            .iter()
            .filter(|w| w.trained == trained)
            .map(|w| w.error_percent)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn train_average(&self) -> Option<f64> {
        self.mean_error(true)
    }

    pub fn unseen_average(&self) -> Option<f64> {
        self.mean_error(false)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,name,value\n");
        if let Some(e) = self.head_errors {
            for (name, v) in ["fetch", "execution", "store"].iter().zip(e) {
                s.push_str(&format!("prediction_error,{name},{v:.6}\n"));
            }
        }
        if let Some(a) = self.fetch_class_accuracy {
            s.push_str(&format!("class_accuracy,fetch,{a:.6}\n"));
        }
        for w in &self.workloads {
            s.push_str(&format!("reference_cpi,{},{:.6}\n", w.workload, w.reference_cpi));
            s.push_str(&format!("model_cpi,{},{:.6}\n", w.workload, w.model_cpi));
            s.push_str(&format!("cpi_error_percent,{},{:.6}\n", w.workload, w.error_percent));
        }
        if let Some(v) = self.train_average() {
            s.push_str(&format!("cpi_error_percent,train_avg,{v:.6}\n"));
        }
        if let Some(v) = self.unseen_average() {
            s.push_str(&format!("cpi_error_percent,sim_avg,{v:.6}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_examples() {
        assert_eq!(prediction_error(0, 0), 0.0);
        assert_eq!(prediction_error(1, 0), 1.0);
        assert!((prediction_error(110, 99) - 0.11).abs() < 1e-12);
        assert!(cpi_error(1.0, 1.0).unwrap() == 0.0);
        assert!((cpi_error(1.1, 1.0).unwrap() - 10.0).abs() < 1e-9);
        assert!(cpi_error(1.0, 0.0).is_err());
    }

    #[test]
    fn phase_windows() {
        let w = phase_cpi(&[1; 25], 10).unwrap();
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|p| p.cpi == 1.0));
        assert!(w[2].partial && !w[1].partial);
        let f = [3, 0, 1, 7];
        let one = phase_cpi(&f, 4).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].cpi, 11.0 / 4.0);
        assert!(phase_cpi(&f, 0).is_err());
    }
}
