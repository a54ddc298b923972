//! The full experiment: hide test entries, train every cell, fill and
//! predict with both methods, score and tabulate.

use std::fs;
use std::path::Path;

use crate::artifacts::{
    create_writer, output_records, restore_first_instant, save_training, without_first_instant,
    write_engine_report, RunKind,
};
use crate::engine::{fill_gaps, predict, CellModel, EngineReport, StateGrid};
use crate::error::Result;
use crate::eval::{
    evaluate, outcomes_from_grid, outcomes_from_report, render_report, Comparison, EvalReport,
    RenderedReport,
};
use crate::evolution::{train_all, CellTraining, GaParams};
use crate::kalman::{kalman_fill, kalman_predict, KalmanRun, DEFAULT_EM_ITERATIONS};
use crate::planted::{gen_planted, PlantedConfig, PlantedModel};
use crate::quantizer::{Quantizer, DEFAULT_NUM_STATES};
use crate::series::{insert_test_gaps, write_output_series, SeriesGrid, TestSet};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Corpus generator, used when no grid is supplied.
    pub planted: PlantedConfig,
    /// The seed field is replaced by one derived from `seed`.
    pub ga: GaParams,
    pub num_states: usize,
    pub gap_fraction: f64,
    pub kalman_iterations: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    /// Small enough to finish in seconds.
    fn default() -> Self {
        Self {
            planted: PlantedConfig {
                stations: 12,
                horizon: 500,
                noise: 0.1,
                zero_inflation: 0.5,
                ..PlantedConfig::default()
            },
            ga: GaParams {
                population: 200,
                generations: 30,
                neighborhood_size: 4,
                candidates: 6,
                max_groups: 3,
                ..GaParams::default()
            },
            num_states: DEFAULT_NUM_STATES,
            gap_fraction: 0.05,
            kalman_iterations: DEFAULT_EM_ITERATIONS,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    fn gap_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    fn ga_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub grid: SeriesGrid,
    pub planted: Option<PlantedModel>,
    pub quantizer: Quantizer,
    pub gapped: SeriesGrid,
    pub test: TestSet,
    pub ga: GaParams,
    pub trainings: Vec<CellTraining>,
    pub fill: (StateGrid, EngineReport),
    pub kalman_fill: KalmanRun,
    /// The gapped grid with its first instant restored.
    pub predict_input: SeriesGrid,
    pub predict: (StateGrid, EngineReport),
    pub kalman_predict: KalmanRun,
    pub fill_eval: [EvalReport; 2],
    pub predict_eval: [EvalReport; 2],
    pub report: RenderedReport,
}

/// Generate a planted corpus from `config.seed`, then [`run_on_grid`].
pub fn run_planted(config: &PipelineConfig) -> Result<PipelineRun> {
    let (grid, model) = gen_planted(&config.planted, config.seed)?;
    let mut run = run_on_grid(grid, config)?;
    run.planted = Some(model);
    Ok(run)
}

/// Prediction is scored on the test entries after the first instant, since
/// the first instant is never predicted.
pub fn run_on_grid(grid: SeriesGrid, config: &PipelineConfig) -> Result<PipelineRun> {
    let quantizer = Quantizer::fit_range(&grid, config.num_states)?;
    let (gapped, test) = insert_test_gaps(&grid, config.gap_fraction, config.gap_seed(), &quantizer)?;
    let ga = GaParams {
        seed: config.ga_seed(),
        ..config.ga.clone()
    };
    let trainings = train_all(&gapped, &quantizer, &ga)?;
    let models: Vec<CellModel> = trainings
        .iter()
        .map(|tr| {
            let specs = tr
                .outcome
                .top
                .iter()
                .map(|(g, f)| Ok((g.decode(&tr.candidates, tr.center)?, *f)))
                .collect::<Result<_>>()?;
            CellModel::new(tr.center, specs)
        })
        .collect::<Result<_>>()?;

    let fill = fill_gaps(&gapped, &models, &quantizer)?;
    let kfill = kalman_fill(&gapped, &quantizer, config.kalman_iterations)?;
    let predict_input = restore_first_instant(&gapped, &test)?;
    let pred = predict(&predict_input, &models, &quantizer)?;
    let kpred = kalman_predict(&predict_input, &quantizer, config.kalman_iterations)?;

    let st = grid.stations();
    let pred_test = without_first_instant(&test);
    let fill_eval = [
        evaluate(st, &test, &outcomes_from_report(&fill.1))?,
        evaluate(st, &test, &outcomes_from_grid(&kfill.states))?,
    ];
    let predict_eval = [
        evaluate(st, &pred_test, &outcomes_from_grid(&pred.0))?,
        evaluate(st, &pred_test, &outcomes_from_grid(&kpred.states))?,
    ];
    let report = render_report(&[
        Comparison {
            title: "Gap filling",
            automaton: &fill_eval[0],
            kalman: &fill_eval[1],
        },
        Comparison {
            title: "Value prediction",
            automaton: &predict_eval[0],
            kalman: &predict_eval[1],
        },
    ])?;

    Ok(PipelineRun {
        grid,
        planted: None,
        quantizer,
        gapped,
        test,
        ga,
        trainings,
        fill,
        kalman_fill: kfill,
        predict_input,
        predict: pred,
        kalman_predict: kpred,
        fill_eval,
        predict_eval,
        report,
    })
}

/// Write every input, artifact and output of a run under `dir`.
pub fn write_run(dir: &Path, run: &PipelineRun) -> Result<()> {
    fs::create_dir_all(dir)?;
    let st = run.grid.stations();
    run.grid.write_stations_csv(create_writer(&dir.join("stations.csv"))?)?;
    run.grid.write_csv(create_writer(&dir.join("series.csv"))?)?;
    if let Some(model) = &run.planted {
        fs::write(dir.join("planted.json"), model.to_json()? + "\n")?;
    }
    run.gapped.write_csv(create_writer(&dir.join("gapped.csv"))?)?;
    run.test.write_csv(st, create_writer(&dir.join("test.csv"))?)?;
    save_training(&dir.join("model"), st, &run.quantizer, &run.ga, &run.trainings)?;

    let q = &run.quantizer;
    let outputs = [
        ("fill.csv", RunKind::Fill, &run.gapped, &run.fill.0),
        ("kalman_fill.csv", RunKind::KalmanFill, &run.gapped, &run.kalman_fill.states),
        ("predict.csv", RunKind::Predict, &run.predict_input, &run.predict.0),
        (
            "kalman_predict.csv",
            RunKind::KalmanPredict,
            &run.predict_input,
            &run.kalman_predict.states,
        ),
    ];
    for (name, kind, input, states) in outputs {
        let recs = output_records(kind, input, states, q)?;
        write_output_series(st, &recs, create_writer(&dir.join(name))?)?;
    }
    write_engine_report(st, &run.fill.1, Some(&run.test), create_writer(&dir.join("fill_report.csv"))?)?;
    write_engine_report(
        st,
        &run.predict.1,
        Some(&run.test),
        create_writer(&dir.join("predict_report.csv"))?,
    )?;
    let evals = [
        ("eval_fill_ca.csv", &run.fill_eval[0]),
        ("eval_fill_kalman.csv", &run.fill_eval[1]),
        ("eval_predict_ca.csv", &run.predict_eval[0]),
        ("eval_predict_kalman.csv", &run.predict_eval[1]),
    ];
    for (name, ev) in evals {
        ev.write_csv(create_writer(&dir.join(name))?)?;
    }
    fs::write(dir.join("report.txt"), &run.report.text)?;
    fs::write(dir.join("report.csv"), &run.report.csv)?;
    Ok(())
}
