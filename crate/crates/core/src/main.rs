use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use cellseries::artifacts::{
    create_writer, load_models, load_quantizer, outcomes_from_records, output_records,
    restore_first_instant, save_training, without_first_instant, write_engine_report, RunKind,
};
use cellseries::config::{parse_key_values, to_cli_args};
use cellseries::engine::{fill_gaps, predict, CellModel};
use cellseries::eval::{evaluate, render_report, Comparison, EvalReport};
use cellseries::evolution::{train_all, GaParams};
use cellseries::kalman::{kalman_fill, kalman_predict, DEFAULT_EM_ITERATIONS};
use cellseries::pipeline::{run_on_grid, run_planted, write_run, PipelineConfig};
use cellseries::planted::{gen_planted, PlantedConfig};
use cellseries::quantizer::{Quantizer, DEFAULT_NUM_STATES};
use cellseries::series::{
    insert_test_gaps, read_output_series, read_stations, write_output_series, SeriesGrid, TestSet,
};

/// Cellular-automaton gap filling and prediction for correlated series.
#[derive(Parser)]
#[command(name = "cellseries", version, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus from a random planted automaton.
    GenData(GenDataArgs),
    /// Hide a fraction of every station's measurements as a test set.
    InsertGaps(InsertGapsArgs),
    /// Evolve neighborhoods for every cell and write the model directory.
    Train(TrainArgs),
    /// Fill gaps with the trained rules.
    Fill(EngineArgs),
    /// Predict every value one step ahead with the trained rules.
    Predict(EngineArgs),
    /// Fill gaps by per-series Kalman smoothing.
    KalmanFill(KalmanArgs),
    /// Predict one step ahead by per-series Kalman filtering.
    KalmanPredict(KalmanArgs),
    /// Hit ratios of an output series on a test set.
    Evaluate(EvaluateArgs),
    /// Side-by-side tables from evaluation files.
    Report(ReportArgs),
    /// Run the whole experiment end to end.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct Common {
    /// `key = value` file whose entries act as flags given before the others.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GridInput {
    /// Stations CSV (`id,x,y`).
    #[arg(long)]
    stations: PathBuf,
    /// Series CSV (`station_id,t,value`).
    #[arg(long)]
    series: PathBuf,
    /// Number of instants; defaults to the largest one in the series file.
    #[arg(long)]
    horizon: Option<usize>,
}

impl GridInput {
    fn load(&self) -> Result<SeriesGrid> {
        SeriesGrid::load_csv(&self.stations, &self.series, self.horizon).with_context(|| {
            format!("loading {} and {}", self.stations.display(), self.series.display())
        })
    }
}

#[derive(Args)]
struct GaArgs {
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    elite_rate: Option<f64>,
    #[arg(long)]
    crossover_prob: Option<f64>,
    #[arg(long)]
    selection_pressure: Option<f64>,
    #[arg(long)]
    weight_ratio: Option<f64>,
    /// Neighborhood size `n`, the cell itself included.
    #[arg(long)]
    neighborhood_size: Option<usize>,
    /// Candidate set size `m`, the cell itself included.
    #[arg(long)]
    candidates: Option<usize>,
    /// Largest group label `u`.
    #[arg(long)]
    max_groups: Option<u8>,
}

impl GaArgs {
    fn resolve(&self, base: GaParams, seed: u64) -> GaParams {
        GaParams {
            population: self.population.unwrap_or(base.population),
            generations: self.generations.unwrap_or(base.generations),
            elite_rate: self.elite_rate.unwrap_or(base.elite_rate),
            crossover_prob: self.crossover_prob.unwrap_or(base.crossover_prob),
            selection_pressure: self.selection_pressure.unwrap_or(base.selection_pressure),
            weight_ratio: self.weight_ratio.unwrap_or(base.weight_ratio),
            neighborhood_size: self.neighborhood_size.unwrap_or(base.neighborhood_size),
            candidates: self.candidates.unwrap_or(base.candidates),
            max_groups: self.max_groups.unwrap_or(base.max_groups),
            seed,
        }
    }
}

#[derive(Args)]
struct PlantedArgs {
    /// Number of stations.
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    zero_inflation: Option<f64>,
    #[arg(long)]
    value_range: Option<f64>,
    #[arg(long)]
    extent: Option<f64>,
}

impl PlantedArgs {
    fn resolve(&self, base: PlantedConfig) -> PlantedConfig {
        PlantedConfig {
            stations: self.cells.unwrap_or(base.stations),
            noise: self.noise.unwrap_or(base.noise),
            zero_inflation: self.zero_inflation.unwrap_or(base.zero_inflation),
            value_range: self.value_range.unwrap_or(base.value_range),
            extent: self.extent.unwrap_or(base.extent),
            ..base
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    planted: PlantedArgs,
    #[arg(long, default_value_t = 500)]
    horizon: usize,
    #[arg(long, default_value_t = DEFAULT_NUM_STATES)]
    num_states: usize,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    neighborhood_size: Option<usize>,
    #[arg(long)]
    max_groups: Option<u8>,
    #[arg(long)]
    out_stations: PathBuf,
    #[arg(long)]
    out_series: PathBuf,
    /// JSON description of the generating automaton.
    #[arg(long)]
    out_model: Option<PathBuf>,
}

#[derive(Args)]
struct InsertGapsArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: GridInput,
    #[arg(long, default_value_t = 0.05)]
    fraction: f64,
    #[arg(long, default_value_t = DEFAULT_NUM_STATES)]
    num_states: usize,
    #[arg(long)]
    out_series: PathBuf,
    /// Hidden entries (`station_id,t,value,state`).
    #[arg(long)]
    out_test: PathBuf,
    /// Quantizer fitted on the complete input.
    #[arg(long)]
    out_quantizer: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: GridInput,
    #[command(flatten)]
    ga: GaArgs,
    /// Quantizer file; fitted on the input when absent.
    #[arg(long)]
    quantizer: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_NUM_STATES)]
    num_states: usize,
    #[arg(long)]
    model_dir: PathBuf,
}

#[derive(Args)]
struct EngineArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: GridInput,
    #[arg(long)]
    model_dir: PathBuf,
    /// Test set; adds true states to the report, and for prediction puts
    /// back hidden first-instant entries.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-position outcome CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct KalmanArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: GridInput,
    #[arg(long)]
    quantizer: PathBuf,
    /// For prediction, puts back hidden first-instant entries.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EM_ITERATIONS)]
    iterations: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    stations: PathBuf,
    /// Output series CSV with a `source` column.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    quantizer: PathBuf,
    /// Ignore test entries at the first instant (which is never predicted).
    #[arg(long)]
    exclude_first_instant: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    fill_ca: Option<PathBuf>,
    #[arg(long)]
    fill_kalman: Option<PathBuf>,
    #[arg(long)]
    predict_ca: Option<PathBuf>,
    #[arg(long)]
    predict_kalman: Option<PathBuf>,
    #[arg(long)]
    out_text: PathBuf,
    #[arg(long)]
    out_csv: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    planted: PlantedArgs,
    #[command(flatten)]
    ga: GaArgs,
    /// Use this stations CSV instead of a generated corpus.
    #[arg(long, requires = "series")]
    stations: Option<PathBuf>,
    #[arg(long, requires = "stations")]
    series: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    num_states: Option<usize>,
    #[arg(long)]
    gap_fraction: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Insert the entries of any `--config` file right after the subcommand so
/// that flags given on the command line win.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    let mut it = args.iter().skip(2);
    while let Some(a) = it.next() {
        let Some(s) = a.to_str() else { continue };
        if s == "--config" {
            path = it.next().cloned();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading config {}", Path::new(&path).display()))?;
    let extra = to_cli_args(&parse_key_values(&text)?);
    let mut out: Vec<OsString> = args.iter().take(2).cloned().collect();
    out.extend(extra.into_iter().map(OsString::from));
    out.extend(args.into_iter().skip(2));
    Ok(out)
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn writer(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    create_writer(path).with_context(|| format!("creating {}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_quantizer(path: &Path) -> Result<Quantizer> {
    let text = fs::read_to_string(path).with_context(|| format!("opening {}", path.display()))?;
    Quantizer::from_text(&text).with_context(|| format!("reading quantizer {}", path.display()))
}

fn read_model(dir: &Path, stations: &[cellseries::Station]) -> Result<(Quantizer, Vec<CellModel>)> {
    let ctx = || format!("loading model {}", dir.display());
    let q = load_quantizer(dir).with_context(ctx)?;
    let models = load_models(dir, stations).with_context(ctx)?;
    Ok((q, models))
}

fn read_test(path: &Path, grid_stations: &[cellseries::Station]) -> Result<TestSet> {
    TestSet::read_csv(grid_stations, open(path)?)
        .with_context(|| format!("reading test set {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let mut base = PlantedConfig {
                horizon: a.horizon,
                num_states: a.num_states,
                ..PlantedConfig::default()
            };
            base.candidates = a.candidates.unwrap_or(base.candidates);
            base.neighborhood_size = a.neighborhood_size.unwrap_or(base.neighborhood_size);
            base.max_groups = a.max_groups.unwrap_or(base.max_groups);
            let cfg = a.planted.resolve(base);
            let (grid, model) = gen_planted(&cfg, a.common.seed)?;
            grid.write_stations_csv(writer(&a.out_stations)?)?;
            grid.write_csv(writer(&a.out_series)?)?;
            if let Some(p) = a.out_model {
                write_file(&p, model.to_json()? + "\n")?;
            }
        }
        Command::InsertGaps(a) => {
            let grid = a.input.load()?;
            let q = Quantizer::fit_range(&grid, a.num_states)?;
            let (gapped, test) = insert_test_gaps(&grid, a.fraction, a.common.seed, &q)?;
            gapped.write_csv(writer(&a.out_series)?)?;
            test.write_csv(grid.stations(), writer(&a.out_test)?)?;
            write_file(&a.out_quantizer, q.to_text())?;
        }
        Command::Train(a) => {
            let grid = a.input.load()?;
            let q = match &a.quantizer {
                Some(p) => read_quantizer(p)?,
                None => Quantizer::fit_range(&grid, a.num_states)?,
            };
            let params = a.ga.resolve(GaParams::default(), a.common.seed);
            let trainings = train_all(&grid, &q, &params)?;
            save_training(&a.model_dir, grid.stations(), &q, &params, &trainings)?;
        }
        Command::Fill(a) => {
            let grid = a.input.load()?;
            let (q, models) = read_model(&a.model_dir, grid.stations())?;
            let test = a.test.as_deref().map(|p| read_test(p, grid.stations())).transpose()?;
            let (states, report) = fill_gaps(&grid, &models, &q)?;
            let recs = output_records(RunKind::Fill, &grid, &states, &q)?;
            write_output_series(grid.stations(), &recs, writer(&a.out)?)?;
            if let Some(p) = a.report {
                write_engine_report(grid.stations(), &report, test.as_ref(), writer(&p)?)?;
            }
        }
        Command::Predict(a) => {
            let mut grid = a.input.load()?;
            let (q, models) = read_model(&a.model_dir, grid.stations())?;
            let test = a.test.as_deref().map(|p| read_test(p, grid.stations())).transpose()?;
            if let Some(t) = &test {
                grid = restore_first_instant(&grid, t)?;
            }
            let (states, report) = predict(&grid, &models, &q)?;
            let recs = output_records(RunKind::Predict, &grid, &states, &q)?;
            write_output_series(grid.stations(), &recs, writer(&a.out)?)?;
            if let Some(p) = a.report {
                write_engine_report(grid.stations(), &report, test.as_ref(), writer(&p)?)?;
            }
        }
        Command::KalmanFill(a) => {
            let grid = a.input.load()?;
            let q = read_quantizer(&a.quantizer)?;
            let run = kalman_fill(&grid, &q, a.iterations)?;
            let recs = output_records(RunKind::KalmanFill, &grid, &run.states, &q)?;
            write_output_series(grid.stations(), &recs, writer(&a.out)?)?;
        }
        Command::KalmanPredict(a) => {
            let mut grid = a.input.load()?;
            let q = read_quantizer(&a.quantizer)?;
            if let Some(p) = &a.test {
                grid = restore_first_instant(&grid, &read_test(p, grid.stations())?)?;
            }
            let run = kalman_predict(&grid, &q, a.iterations)?;
            let recs = output_records(RunKind::KalmanPredict, &grid, &run.states, &q)?;
            write_output_series(grid.stations(), &recs, writer(&a.out)?)?;
        }
        Command::Evaluate(a) => {
            let stations = read_stations(open(&a.stations)?).with_context(|| format!("reading {}", a.stations.display()))?;
            let q = read_quantizer(&a.quantizer)?;
            let mut test = read_test(&a.test, &stations)?;
            if a.exclude_first_instant {
                test = without_first_instant(&test);
            }
            let recs = read_output_series(&stations, open(&a.output)?)
                .with_context(|| format!("reading {}", a.output.display()))?;
            let report = evaluate(&stations, &test, &outcomes_from_records(&recs, &q)?)?;
            report.write_csv(writer(&a.out)?)?;
        }
        Command::Report(a) => {
            let load = |p: &Option<PathBuf>| -> Result<Option<EvalReport>> {
                p.as_deref()
                    .map(|p| {
                        EvalReport::read_csv(open(p)?)
                            .with_context(|| format!("reading {}", p.display()))
                    })
                    .transpose()
            };
            let fill = (load(&a.fill_ca)?, load(&a.fill_kalman)?);
            let pred = (load(&a.predict_ca)?, load(&a.predict_kalman)?);
            let mut pairs = Vec::new();
            for (title, pair) in [("Gap filling", &fill), ("Value prediction", &pred)] {
                match pair {
                    (Some(ca), Some(k)) => pairs.push(Comparison {
                        title,
                        automaton: ca,
                        kalman: k,
                    }),
                    (None, None) => {}
                    _ => bail!("{title}: both the automaton and the Kalman file are needed"),
                }
            }
            if pairs.is_empty() {
                bail!("no evaluation files given");
            }
            let rendered = render_report(&pairs)?;
            write_file(&a.out_text, rendered.text)?;
            write_file(&a.out_csv, rendered.csv)?;
        }
        Command::Pipeline(a) => {
            let base = PipelineConfig::default();
            let ga = a.ga.resolve(base.ga.clone(), 0);
            let mut planted = a.planted.resolve(base.planted.clone());
            planted.candidates = ga.candidates;
            planted.neighborhood_size = ga.neighborhood_size;
            planted.max_groups = ga.max_groups;
            planted.num_states = a.num_states.unwrap_or(base.num_states);
            if let Some(h) = a.horizon {
                planted.horizon = h;
            }
            let cfg = PipelineConfig {
                planted,
                ga,
                num_states: a.num_states.unwrap_or(base.num_states),
                gap_fraction: a.gap_fraction.unwrap_or(base.gap_fraction),
                kalman_iterations: a.iterations.unwrap_or(base.kalman_iterations),
                seed: a.common.seed,
            };
            let run = match (&a.stations, &a.series) {
                (Some(st), Some(se)) => run_on_grid(SeriesGrid::load_csv(st, se, a.horizon)?, &cfg)?,
                _ => run_planted(&cfg)?,
            };
            write_run(&a.out_dir, &run).with_context(|| format!("writing {}", a.out_dir.display()))?;
            print!("{}", run.report.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    let command = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let cli = match Cli::from_arg_matches(&command.get_matches_from(args)) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::FAILURE
        }
    }
}
