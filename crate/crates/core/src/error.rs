use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown template kind `{0}`")]
    UnknownTemplate(String),

    #[error("invalid parameter spec `{name}`: {reason}")]
    InvalidParamSpec { name: String, reason: String },

    #[error("design vector has {got} values, template `{template}` expects {expected}")]
    DesignLength {
        template: String,
        expected: usize,
        got: usize,
    },

    #[error("parameter `{name}` = {value} outside [{min}, {max}]")]
    OutOfBounds {
        name: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("design violates constraint `{name}` (c = {value:.6})")]
    ConstraintViolated { name: String, value: f64 },

    #[error("invalid raster: {0}")]
    Raster(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("airgap row {row} contains non-air cells")]
    GapRowNotAir { row: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("metric `{metric}` undefined: {reason}")]
    Metric { metric: &'static str, reason: String },

    #[error("KPI `{kpi}`: {source}")]
    Kpi {
        kpi: String,
        #[source]
        source: Box<Error>,
    },

    #[error("feasibility rate {rate:.4} below 1% over a probe batch of {probe}")]
    Infeasible { rate: f64, probe: usize },

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Nn(#[from] motorkpi_nn::NnError),
}

pub type Result<T> = std::result::Result<T, Error>;
