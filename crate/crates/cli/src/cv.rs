use std::path::{Path, PathBuf};

use clap::Args;
use qdlag::selection::{select_cv, select_holdout, SelectionResult, TuningGrid};

use crate::args::ModelArgs;
use crate::data_io::{csv_writer, fmt_f64, write_json};
use crate::document::{EstimatorKind, ResultDocument, SelectionDoc};
use crate::error::{CliError, CliResult};
use crate::fit::{ensure_converged, header};

#[derive(Debug, Clone, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// comma-separated lambda1 values (lambda for en and ridge)
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid_l1: Vec<f64>,
    /// comma-separated lambda2 values (alpha for en; unused by ridge)
    #[arg(long, value_delimiter = ',')]
    pub grid_l2: Vec<f64>,
    /// number of cross-validation folds
    #[arg(long, conflicts_with = "validation")]
    pub folds: Option<usize>,
    /// held-out validation CSV instead of cross-validation
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// result document of the winning refit [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of validation scores (rows lambda1, columns lambda2)
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub allow_nonconverged: bool,
}

pub const DEFAULT_FOLDS: usize = 5;

pub fn build_grid(kind: EstimatorKind, l1: &[f64], l2: &[f64]) -> CliResult<TuningGrid> {
    let grid = match kind {
        EstimatorKind::Uni | EstimatorKind::Concave => {
            if l2.is_empty() {
                return Err(CliError::Usage(
                    "--grid-l2 is required for uni and concave".into(),
                ));
            }
            TuningGrid::new(l1.to_vec(), l2.to_vec())
        }
        EstimatorKind::En => {
            if l2.is_empty() {
                return Err(CliError::Usage(
                    "--grid-l2 (alpha values) is required for en".into(),
                ));
            }
            TuningGrid::elastic_net(l1.to_vec(), l2.to_vec())
        }
        EstimatorKind::Ridge => {
            if l2.iter().any(|&a| a != 0.0) {
                return Err(CliError::Usage(
                    "ridge fixes alpha at 0; drop --grid-l2".into(),
                ));
            }
            TuningGrid::elastic_net(l1.to_vec(), vec![0.0])
        }
    };
    Ok(grid?)
}

pub fn write_scores(path: &Path, kind: EstimatorKind, sel: &SelectionResult) -> CliResult<()> {
    let (row_name, col_name) = match kind {
        EstimatorKind::Uni | EstimatorKind::Concave => ("lambda1", "lambda2"),
        EstimatorKind::En | EstimatorKind::Ridge => ("lambda", "alpha"),
    };
    let mut wtr = csv_writer(path)?;
    let io = |e| CliError::io(path, e);
    let mut head = vec![row_name.to_string()];
    head.extend(
        sel.grid
            .lambda2_values()
            .iter()
            .map(|v| format!("{col_name}={}", fmt_f64(*v))),
    );
    wtr.write_record(&head).map_err(io)?;
    for (i, a) in sel.grid.lambda1_values().iter().enumerate() {
        let mut row = vec![fmt_f64(*a)];
        row.extend(sel.score_table.row(i).iter().map(|s| {
            if s.is_nan() {
                String::new()
            } else {
                fmt_f64(*s)
            }
        }));
        wtr.write_record(&row).map_err(io)?;
    }
    wtr.flush().map_err(|e| CliError::io(path, e))
}

pub fn run(args: &CvArgs) -> CliResult<()> {
    let kind = args.model.estimator;
    let tau = args.model.tau()?;
    let grid = build_grid(kind, &args.grid_l1, &args.grid_l2)?;
    let data = args.model.load(&args.model.data)?;
    let config = args.model.solver.settings().descent_config(args.model.seed);
    let sel = match &args.validation {
        Some(path) => {
            let validation = args.model.load(path)?;
            select_holdout(&data, &validation, tau, &grid, kind.estimator(), &config)?
        }
        None => select_cv(
            &data,
            tau,
            &grid,
            args.folds.unwrap_or(DEFAULT_FOLDS),
            kind.estimator(),
            &config,
        )?,
    };
    if let Some(path) = &args.scores {
        write_scores(path, kind, &sel)?;
    }
    ensure_converged(&sel.refit, args.allow_nonconverged)?;
    let mut doc = ResultDocument::new(header("cv", &args.model), sel.best, &sel.refit);
    doc.selection = Some(SelectionDoc::of(&sel));
    write_json(args.out.as_deref(), &doc)
}
