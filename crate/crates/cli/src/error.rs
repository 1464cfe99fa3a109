use neuroedge_core::convert::ConvertError;
use neuroedge_core::cost::CostError;
use neuroedge_core::imaging::ImagingError;
use neuroedge_core::map::MapError;
use neuroedge_core::model::smod::SmodError;
use neuroedge_core::model::ModelError;
use neuroedge_core::nas::NasError;
use neuroedge_core::sim::SimError;
use neuroedge_core::train::TrainError;
use thiserror::Error;

/// Failure of a subcommand, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ImagingError> for CliError {
    fn from(e: ImagingError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SmodError> for CliError {
    fn from(e: SmodError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Invariant(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::EmptyDataset | TrainError::LabelOutOfRange { .. } => CliError::Data(e.to_string()),
            TrainError::Diverged { .. } | TrainError::Model(_) => CliError::Invariant(e.to_string()),
        }
    }
}

impl From<ConvertError> for CliError {
    fn from(e: ConvertError) -> Self {
        match e {
            ConvertError::NotAnn | ConvertError::NotSnn => CliError::Usage(e.to_string()),
            ConvertError::Train(t) => t.into(),
            _ => CliError::Invariant(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Window { .. } => CliError::Usage(e.to_string()),
            SimError::NonFinite { .. } | SimError::Model(_) | SimError::Unsupported(_) => CliError::Invariant(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MapError> for CliError {
    fn from(e: MapError) -> Self {
        match e {
            MapError::Chip(_) => CliError::Usage(e.to_string()),
            MapError::Csv(_) | MapError::Json(_) => CliError::Data(e.to_string()),
            _ => CliError::Invariant(e.to_string()),
        }
    }
}

impl From<CostError> for CliError {
    fn from(e: CostError) -> Self {
        match e {
            CostError::UnknownDevice(_) => CliError::Usage(e.to_string()),
            CostError::Calibration(_) => CliError::Invariant(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NasError> for CliError {
    fn from(e: NasError) -> Self {
        match e {
            NasError::Config(_) => CliError::Usage(e.to_string()),
            NasError::Objective(_) => CliError::Invariant(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
