use serde::{Deserialize, Serialize};

use crate::error::{MetricError, Result};

/// Mean and population standard deviation over repeated runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn from_samples(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub jsd: Stat,
    pub cov: Stat,
    pub mmd: Stat,
    pub one_nna: Stat,
    pub swd: Stat,
    pub runs: usize,
    pub n_ref: usize,
    pub n_gen: usize,
    pub points_per_cloud: usize,
    /// Histogram definition used for JSD.
    pub jsd_grid: String,
}

/// Flat CSV form of [`MetricReport`].
#[derive(Debug, Serialize, Deserialize)]
struct Row {
    jsd_mean: f64,
    jsd_std: f64,
    cov_mean: f64,
    cov_std: f64,
    mmd_mean: f64,
    mmd_std: f64,
    one_nna_mean: f64,
    one_nna_std: f64,
    swd_mean: f64,
    swd_std: f64,
    runs: usize,
    n_ref: usize,
    n_gen: usize,
    points_per_cloud: usize,
    jsd_grid: String,
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Header line plus one data row. Floats are written in shortest
    /// round-trip form, so parsing back is lossless.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(Row {
            jsd_mean: self.jsd.mean,
            jsd_std: self.jsd.std,
            cov_mean: self.cov.mean,
            cov_std: self.cov.std,
            mmd_mean: self.mmd.mean,
            mmd_std: self.mmd.std,
            one_nna_mean: self.one_nna.mean,
            one_nna_std: self.one_nna.std,
            swd_mean: self.swd.mean,
            swd_std: self.swd.std,
            runs: self.runs,
            n_ref: self.n_ref,
            n_gen: self.n_gen,
            points_per_cloud: self.points_per_cloud,
            jsd_grid: self.jsd_grid.clone(),
        })?;
        let bytes = w.into_inner().map_err(|e| MetricError::Config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| MetricError::Config(e.to_string()))
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(s.as_bytes());
        let row: Row = r
            .deserialize()
            .next()
            .ok_or_else(|| MetricError::Empty("CSV has no data row".into()))??;
        Ok(Self {
            jsd: Stat {
                mean: row.jsd_mean,
                std: row.jsd_std,
            },
            cov: Stat {
                mean: row.cov_mean,
                std: row.cov_std,
            },
            mmd: Stat {
                mean: row.mmd_mean,
                std: row.mmd_std,
            },
            one_nna: Stat {
                mean: row.one_nna_mean,
                std: row.one_nna_std,
            },
            swd: Stat {
                mean: row.swd_mean,
                std: row.swd_std,
            },
            runs: row.runs,
            n_ref: row.n_ref,
            n_gen: row.n_gen,
            points_per_cloud: row.points_per_cloud,
            jsd_grid: row.jsd_grid,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std() {
        let s = Stat::from_samples(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
    }

    #[test]
    fn csv_and_json_round_trip() {
        let r = MetricReport {
            jsd: Stat { mean: 0.1 + 0.2, std: 1.0 / 3.0 },
            cov: Stat { mean: 0.5, std: 0.0 },
            mmd: Stat { mean: 1e-7, std: 2.5e-9 },
            one_nna: Stat { mean: 0.75, std: 0.01 },
            swd: Stat { mean: std::f64::consts::PI, std: 0.0 },
            runs: 5,
            n_ref: 64,
            n_gen: 64,
            points_per_cloud: 256,
            jsd_grid: "bev100x100@±80m".into(),
        };
        assert_eq!(MetricReport::from_csv(&r.to_csv().unwrap()).unwrap(), r);
        assert_eq!(MetricReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }
}
