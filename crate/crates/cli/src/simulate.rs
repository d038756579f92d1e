use std::path::PathBuf;

use clap::{Args, ValueEnum};
use qdlag::sim::{default_modes, gen_dataset, ErrorLaw, Model, SimConfig};
use qdlag::QuantileLevel;

use crate::data_io::{write_dataset, write_json};
use crate::document::TruthDocument;
use crate::error::CliResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
    #[value(name = "C", alias = "c")]
    C,
}

impl From<ModelArg> for Model {
    fn from(m: ModelArg) -> Model {
        match m {
            ModelArg::A => Model::A,
            ModelArg::B => Model::B,
            ModelArg::C => Model::C,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ErrorArg {
    Normal,
    T4,
}

impl From<ErrorArg> for ErrorLaw {
    fn from(e: ErrorArg) -> ErrorLaw {
        match e {
            ErrorArg::Normal => ErrorLaw::Normal,
            ErrorArg::T4 => ErrorLaw::StudentT4,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "A")]
    pub model: ModelArg,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 6)]
    pub k: usize,
    #[arg(long, default_value_t = 30)]
    pub t: usize,
    #[arg(long, default_value_t = 5)]
    pub p: usize,
    #[arg(long, default_value_t = 0.5)]
    pub snr: f64,
    #[arg(long, value_enum, default_value = "normal")]
    pub error: ErrorArg,
    /// quantile level recorded with the truth (sets its intercept shift)
    #[arg(long, default_value_t = 0.25)]
    pub tau: f64,
    /// fixes the true coefficients
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// selects the data draw under the seed
    #[arg(long, default_value_t = 0)]
    pub replicate: u64,
    /// comma-separated modes, one per exposure [default: reference modes]
    #[arg(long, value_delimiter = ',')]
    pub modes: Vec<usize>,
    /// dataset CSV
    #[arg(long)]
    pub out: PathBuf,
    /// truth document [default: <out>.truth.json]
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

impl SimulateArgs {
    pub fn config(&self) -> CliResult<SimConfig> {
        Ok(SimConfig {
            n: self.n,
            k: self.k,
            t: self.t,
            p: self.p,
            model: self.model.into(),
            error: self.error.into(),
            snr: self.snr,
            tau: QuantileLevel::new(self.tau)?,
            modes: if self.modes.is_empty() {
                default_modes(self.k, self.t)
            } else {
                self.modes.clone()
            },
            seed: self.seed,
            replicate: self.replicate,
        })
    }
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let cfg = args.config()?;
    let ds = gen_dataset(&cfg)?;
    write_dataset(&args.out, &ds.data)?;
    let truth_path = args.truth.clone().unwrap_or_else(|| {
        let mut s = args.out.clone().into_os_string();
        s.push(".truth.json");
        PathBuf::from(s)
    });
    write_json(Some(&truth_path), &TruthDocument::new(&cfg, &ds.truth))
}
