//! Time series and dataset containers plus the preprocessing transforms
//! (differencing, rolling mean, log, mean-centering).

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// A single observed series: an identifier and a finite-valued sample path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    id: String,
    values: Vec<f64>,
}

impl TimeSeries {
    /// Builds a series, rejecting empty paths and non-finite values.
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Result<Self, Error> {
        let id = id.into();
        if values.is_empty() {
            return Err(Error::EmptySeries { id });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { id, index });
        }
        Ok(TimeSeries { id, values })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of observations. Always at least 1.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn derived(&self, suffix: &str, values: Vec<f64>) -> TimeSeries {
        TimeSeries {
            id: format!("{}{}", self.id, suffix),
            values,
        }
    }
}

/// An ordered collection of series with unique ids. Lengths may differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    series: Vec<TimeSeries>,
}

impl Dataset {
    /// Builds a dataset, preserving order and rejecting duplicate ids.
    pub fn new(series: Vec<TimeSeries>) -> Result<Self, Error> {
        if series.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut seen = std::collections::HashSet::new();
        for s in &series {
            if !seen.insert(s.id().to_owned()) {
                return Err(Error::DuplicateId {
                    id: s.id().to_owned(),
                });
            }
        }
        Ok(Dataset { series })
    }

    pub fn series(&self) -> &[TimeSeries] {
        &self.series
    }

    /// Number of series. Always at least 1.
    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&TimeSeries> {
        self.series.get(index)
    }

    pub fn by_id(&self, id: &str) -> Option<&TimeSeries> {
        self.series.iter().find(|s| s.id() == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.series.iter().map(|s| s.id())
    }

    /// Applies a fallible transform to every series, keeping order.
    pub fn map(
        &self,
        f: impl Fn(&TimeSeries) -> Result<TimeSeries, Error>,
    ) -> Result<Dataset, Error> {
        let series = self.series.iter().map(f).collect::<Result<Vec<_>, _>>()?;
        Dataset::new(series)
    }
}

/// Model order triple (p, d, q): p autoregressive lags, d differencing
/// passes, q moving-average lags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmaSpec {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArmaSpec {
    /// Requires p + q >= 1; a pure differencing "model" fits nothing.
    pub fn new(p: usize, d: usize, q: usize) -> Result<Self, Error> {
        if p + q == 0 {
            return Err(Error::invalid("model order requires p + q >= 1"));
        }
        Ok(ArmaSpec { p, d, q })
    }
}

/// Applies `d` passes of adjacent differencing. Each pass shortens the
/// series by one; `d = 0` is the identity.
pub fn difference(series: &TimeSeries, d: usize) -> Result<TimeSeries, Error> {
    if d == 0 {
        return Ok(series.clone());
    }
    if d >= series.len() {
        return Err(Error::TooShort {
            id: series.id().to_owned(),
            len: series.len(),
            needed: d + 1,
            op: "difference",
        });
    }
    let mut values = series.values().to_vec();
    for _ in 0..d {
        values = values.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(series.derived(&format!("~d{d}"), values))
}

/// Rolling mean with the given window; output has `T - window + 1` points.
/// `window = 1` is the identity.
pub fn rolling_mean(series: &TimeSeries, window: usize) -> Result<TimeSeries, Error> {
    if window == 0 {
        return Err(Error::invalid("rolling mean window must be positive"));
    }
    if window == 1 {
        return Ok(series.clone());
    }
    if window > series.len() {
        return Err(Error::TooShort {
            id: series.id().to_owned(),
            len: series.len(),
            needed: window,
            op: "rolling_mean",
        });
    }
    let values = series
        .values()
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    Ok(series.derived(&format!("~rm{window}"), values))
}

/// Natural log of every value; errors on the first value <= 0.
pub fn log_transform(series: &TimeSeries) -> Result<TimeSeries, Error> {
    if let Some(index) = series.values().iter().position(|&v| v <= 0.0) {
        return Err(Error::Domain {
            id: series.id().to_owned(),
            index,
            value: series.values()[index],
            op: "log",
        });
    }
    let values = series.values().iter().map(|v| v.ln()).collect();
    Ok(series.derived("~log", values))
}

/// Subtracts the sample mean from every value.
pub fn center(series: &TimeSeries) -> Result<TimeSeries, Error> {
    let mean = series.values().iter().sum::<f64>() / series.len() as f64;
    let values = series.values().iter().map(|v| v - mean).collect();
    Ok(series.derived("~ctr", values))
}
