mod artifact;
mod plot;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rrglmm::formula::parse_level_spec;
use rrglmm::inference::{format_parameter_set, format_prevalence_table, weighted_prevalence_rows};
use rrglmm::simulate::simulate_rr_dataset;
use rrglmm::{
    anova_lr, fit_model, gof, load_table, parse_formula, residuals_with, Approximation,
    ColumnRoles, FitOptions, GofTest, GroupingOptions, LevelOrder, LinkFamily, LoadSchema,
    NaPolicy, PatternKey, RRDataset, ResidualKind, SimulationSpec,
};

use artifact::FitArtifact;
use plot::PlotKind;

/// A failure with the exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<rrglmm::Error> for CliError {
    fn from(e: rrglmm::Error) -> Self {
        CliError {
            code: if e.is_numerical() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

#[derive(Parser)]
#[command(
    name = "rrglmm",
    version,
    about = "Regression models for randomized-response survey data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a GLM, or a random-intercept GLMM when the formula has a `(1 | g)` term
    Fit(FitArgs),
    /// Print the summary of a saved fit
    Summary {
        /// Fit artifact written by `fit --out`
        #[arg(long = "fit")]
        fit: PathBuf,
    },
    /// Weighted prevalence estimates per item and design
    Prevalence(PrevalenceArgs),
    /// Residuals of a saved fit as CSV
    Residuals(ResidualArgs),
    /// Goodness-of-fit tests of a saved GLM fit
    Gof(GofArgs),
    /// Likelihood-ratio comparison of two saved fits
    Anova {
        first: PathBuf,
        second: PathBuf,
        /// Write the table as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a dataset from a JSON description
    Simulate {
        /// JSON file describing designs, covariates and the true model
        #[arg(long)]
        spec: PathBuf,
        /// Override the seed given in the file
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a saved fit as SVG
    Plot {
        #[arg(long = "fit")]
        fit: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NaArg {
    Omit,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV with a header row
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "RRmodel")]
    rr_model_col: String,
    #[arg(long, default_value = "p1")]
    p1_col: String,
    #[arg(long, default_value = "p2")]
    p2_col: String,
    /// Column naming the survey item of each row
    #[arg(long)]
    item_col: Option<String>,
    /// Missing-data policy
    #[arg(long, value_enum, default_value = "omit")]
    na: NaArg,
}

impl DataArgs {
    fn load(
        &self,
        response: &str,
        group: Option<&str>,
        covariates: Vec<String>,
    ) -> Result<(RRDataset, usize), CliError> {
        let mut roles = ColumnRoles::new(response, &self.rr_model_col, &self.p1_col, &self.p2_col);
        if let Some(item) = &self.item_col {
            roles = roles.with_item(item);
        }
        if let Some(g) = group {
            roles = roles.with_group(g);
        }
        let file = fs::File::open(&self.data)
            .map_err(|e| CliError::data(format!("cannot open {}: {e}", self.data.display())))?;
        let NaArg::Omit = self.na;
        let loaded = load_table(file, &LoadSchema { roles, covariates }, NaPolicy::Omit)?;
        Ok((loaded.dataset, loaded.dropped))
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model formula, e.g. "y ~ x + (1 | id)"
    #[arg(long)]
    formula: String,
    #[arg(long, default_value = "logit", value_parser = parse_link)]
    link: LinkFamily,
    /// Factor level order as `name=a,b,c`; the first level is the reference
    #[arg(long = "levels", alias = "level", value_name = "NAME=A,B,...")]
    levels: Vec<String>,
    /// Quadrature nodes for mixed models; 1 is the Laplace approximation
    #[arg(long, default_value_t = 1)]
    agq: usize,
    /// Keep a fit that did not converge instead of failing
    #[arg(long)]
    allow_unconverged: bool,
    /// Fit artifact (JSON) output path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PrevalenceArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "response")]
    response_col: String,
    /// Pool all designs within an item
    #[arg(long)]
    pooled: bool,
    /// Write the estimates as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    Covariates,
    CovariatesAndDesign,
}

#[derive(Args)]
struct GroupingArgs {
    /// Hosmer-Lemeshow groups
    #[arg(long, default_value_t = 10)]
    groups: usize,
    /// What defines a covariate pattern for grouped statistics
    #[arg(long, value_enum, default_value = "covariates")]
    pattern_key: PatternArg,
}

impl GroupingArgs {
    fn options(&self) -> GroupingOptions {
        GroupingOptions {
            hl_groups: self.groups,
            pattern_key: match self.pattern_key {
                PatternArg::Covariates => PatternKey::Covariates,
                PatternArg::CovariatesAndDesign => PatternKey::CovariatesAndDesign,
            },
        }
    }
}

#[derive(Args)]
struct ResidualArgs {
    #[arg(long = "fit")]
    fit: PathBuf,
    /// response, pearson, deviance, unconditional.response, unconditional.pearson,
    /// pearson.grouped, deviance.grouped or hosmer-lemeshow
    #[arg(long = "type", default_value = "pearson", value_parser = parse_residual_kind)]
    kind: ResidualKind,
    #[command(flatten)]
    grouping: GroupingArgs,
    /// Output CSV path; standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GofArgs {
    #[arg(long = "fit")]
    fit: PathBuf,
    #[command(flatten)]
    grouping: GroupingArgs,
    /// Write the report as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_link(s: &str) -> Result<LinkFamily, String> {
    s.parse().map_err(|e: rrglmm::Error| e.to_string())
}

fn parse_residual_kind(s: &str) -> Result<ResidualKind, String> {
    s.parse().map_err(|e: rrglmm::Error| e.to_string())
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn print(text: &str) {
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(text.as_bytes());
    let _ = stdout.flush();
}

fn fit(args: &FitArgs) -> Result<(), CliError> {
    let formula = parse_formula(&args.formula)?;
    let mut levels = LevelOrder::new();
    for spec in &args.levels {
        let (name, order) = parse_level_spec(spec)?;
        levels.insert(name, order);
    }
    let (data, dropped) = args.data.load(
        &formula.response,
        formula.random_intercept.as_deref(),
        formula.covariates(),
    )?;
    if args.agq == 0 {
        return Err(CliError::data("--agq needs at least one node"));
    }
    let approximation = if args.agq == 1 {
        Approximation::Laplace
    } else {
        Approximation::Agq(args.agq)
    };
    let options = FitOptions {
        levels,
        approximation,
        ..Default::default()
    };
    let fitted = fit_model(&formula, &data, args.link, &options)?;
    let artifact = FitArtifact::new(fitted, dropped);
    if !artifact.fit.converged() && !args.allow_unconverged {
        return Err(CliError::numerical(
            "the fit did not converge; rerun with --allow-unconverged to keep it",
        ));
    }
    print(&artifact.summary()?);
    if let Some(out) = &args.out {
        artifact.save(out)?;
    }
    Ok(())
}

fn prevalence(args: &PrevalenceArgs) -> Result<(), CliError> {
    let (data, dropped) = args.data.load(&args.response_col, None, Vec::new())?;
    let items = data.item_labels();
    let cells = weighted_prevalence_rows(
        data.response(),
        data.assignments(),
        items.as_deref(),
        !args.pooled,
    )?;
    let mut text = String::new();
    let mut k = 0;
    while k < cells.len() {
        let item = cells[k].item.clone();
        let end = k + cells[k..].iter().take_while(|c| c.item == item).count();
        text.push_str(&format!(
            "Item: {}\n",
            item.as_deref().unwrap_or("(all rows)")
        ));
        for c in &cells[k..end] {
            let sets: Vec<String> = c
                .parameter_sets
                .iter()
                .copied()
                .map(format_parameter_set)
                .collect();
            text.push_str(&format!(
                "  {} {}\n",
                c.rr_model.map_or("all", |m| m.name()),
                sets.join(" ")
            ));
        }
        text.push_str(&format_prevalence_table(&cells[k..end]));
        text.push('\n');
        k = end;
    }
    if dropped > 0 {
        text.push_str(&format!(
            "({dropped} observations deleted due to missingness)\n"
        ));
    }
    print(&text);
    if let Some(out) = &args.out {
        write_file(out, &to_json(&cells)?)?;
    }
    Ok(())
}

fn residual_csv(args: &ResidualArgs) -> Result<Vec<u8>, CliError> {
    let artifact = FitArtifact::load(&args.fit)?;
    let r = residuals_with(&artifact.fit, args.kind, &args.grouping.options())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::data(e.to_string());
    match &r.grouping {
        None => {
            let d = artifact.fit.data();
            w.write_record(["row", "rr_model", "fitted", "residual"])
                .map_err(csv_err)?;
            for (i, v) in r.values.iter().enumerate() {
                let fitted = artifact.fit.fitted()[i];
                w.write_record([
                    (i + 1).to_string(),
                    d.assignments[i].kind.name().to_string(),
                    fitted.to_string(),
                    v.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        Some(groups) => {
            w.write_record([
                "group",
                "size",
                "observed",
                "fitted",
                "fitted_min",
                "fitted_max",
                "residual",
            ])
            .map_err(csv_err)?;
            for (k, (g, v)) in groups.iter().zip(&r.values).enumerate() {
                w.write_record([
                    (k + 1).to_string(),
                    g.size.to_string(),
                    g.mean_response.to_string(),
                    g.fitted.to_string(),
                    g.bounds.0.to_string(),
                    g.bounds.1.to_string(),
                    v.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.into_inner().map_err(|e| CliError::data(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(args) => fit(&args),
        Command::Summary { fit } => {
            print(&FitArtifact::load(&fit)?.summary()?);
            Ok(())
        }
        Command::Prevalence(args) => prevalence(&args),
        Command::Residuals(args) => {
            let bytes = residual_csv(&args)?;
            match &args.out {
                Some(out) => write_file(out, &bytes),
                None => {
                    print(&String::from_utf8_lossy(&bytes));
                    Ok(())
                }
            }
        }
        Command::Gof(args) => {
            let artifact = FitArtifact::load(&args.fit)?;
            let report = gof(&artifact.fit, &GofTest::ALL, &args.grouping.options())?;
            print(&report.to_string());
            if let Some(out) = &args.out {
                write_file(out, &to_json(&report)?)?;
            }
            Ok(())
        }
        Command::Anova { first, second, out } => {
            let a = FitArtifact::load(&first)?;
            let b = FitArtifact::load(&second)?;
            let table = anova_lr(&a.fit, &b.fit)?;
            print(&table.to_string());
            if let Some(out) = &out {
                write_file(out, &to_json(&table)?)?;
            }
            Ok(())
        }
        Command::Simulate { spec, seed, out } => {
            let text = fs::read_to_string(&spec)
                .map_err(|e| CliError::data(format!("cannot read {}: {e}", spec.display())))?;
            let mut spec: SimulationSpec = serde_json::from_str(&text)
                .map_err(|e| CliError::data(format!("invalid simulation file: {e}")))?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let data = simulate_rr_dataset(&spec)?;
            let mut bytes = Vec::new();
            data.write_csv(&mut bytes)?;
            write_file(&out, &bytes)?;
            log::info!("wrote {} rows to {}", data.n_rows(), out.display());
            Ok(())
        }
        Command::Plot { fit, kind, out } => {
            let artifact = FitArtifact::load(&fit)?;
            let svg = match kind {
                PlotKind::ResidualScatter => plot::residual_scatter(&artifact.fit)?,
                PlotKind::PrevalenceCi => plot::prevalence_ci(&artifact.fit)?,
            };
            write_file(&out, svg.as_bytes())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
