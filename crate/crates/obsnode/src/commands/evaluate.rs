use std::cell::RefCell;

use obsnode_core::data::{Split, Trajectory};
use obsnode_core::evaluate::{
    clip_for_display, heatmap_pgm, rmse_grid, test_scale, EvalError, ModelPredictor, Predictor, RmseGrid,
};

use super::{push_row, write_file, CONFIG_FILE};
use crate::checkpoint;
use crate::config::{to_pretty, EvalSplit, EvaluateConfig};
use crate::dataset;
use crate::error::{CliError, Result};

pub const RMSE_FILE: &str = "rmse.csv";
pub const RMSE_MEAN_FILE: &str = "rmse_mean.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

pub struct EvaluateOutput {
    pub grid: RmseGrid,
    pub mean: RmseGrid,
}

/// `(unit_id, t_c, time, prediction)`.
type PredictionRow = (u64, f64, f64, Vec<f64>);

/// Remembers every forecast it hands out, in call order.
struct Recording<'a, P> {
    inner: &'a P,
    rows: RefCell<Vec<PredictionRow>>,
}

impl<P: Predictor> Predictor for Recording<'_, P> {
    fn predict(
        &self,
        unit: &Trajectory,
        t_c: f64,
        query_times: &[f64],
    ) -> std::result::Result<Vec<Vec<f64>>, EvalError> {
        let preds = self.inner.predict(unit, t_c, query_times)?;
        let mut rows = self.rows.borrow_mut();
        for (t, p) in query_times.iter().zip(&preds) {
            rows.push((unit.unit_id, t_c, *t, p.clone()));
        }
        Ok(preds)
    }
}

/// Scores a checkpoint on one split and writes the grid CSVs (all
/// components, and their mean), optional heatmaps and per-unit predictions.
pub fn evaluate(cfg: &EvaluateConfig) -> Result<EvaluateOutput> {
    let (data, _) = dataset::read(&cfg.dataset_dir)?;
    let (model, stats) = checkpoint::load(&cfg.checkpoint)?;
    let c = model.config();
    if c.d_y != data.d_y || c.d_a != data.d_a {
        return Err(CliError::usage("checkpoint and dataset dimensions differ"));
    }
    let split = match cfg.split {
        EvalSplit::Train => Split::Train,
        EvalSplit::Val => Split::Val,
        EvalSplit::Test => Split::Test,
    };
    let units = data.split(split);
    let scale = test_scale(&units, data.d_y);
    if let Some(j) = scale.iter().position(|s| !(*s > 0.0)) {
        return Err(CliError::data(format!(
            "component {} has no spread on the evaluated split",
            j + 1
        )));
    }
    let predictor = ModelPredictor {
        model: &model,
        stats: &stats,
    };
    let recording = Recording {
        inner: &predictor,
        rows: RefCell::new(Vec::new()),
    };
    let grid = rmse_grid(&recording, &units, &cfg.assimilation_times, &cfg.horizons, &scale)?;
    let mean = grid.mean_over_components();

    let dir = &cfg.output_dir;
    write_file(&dir.join(CONFIG_FILE), to_pretty(cfg))?;
    write_file(&dir.join(RMSE_FILE), grid.to_csv())?;
    write_file(&dir.join(RMSE_MEAN_FILE), mean.to_csv())?;
    if let Some(h) = &cfg.heatmap {
        if h.cell == 0 {
            return Err(CliError::usage("heatmap.cell must be positive"));
        }
        let shown = clip_for_display(&grid, h.cap)?;
        for j in 0..grid.d_y {
            write_file(
                &dir.join(format!("heatmap_component_{}.pgm", j + 1)),
                heatmap_pgm(&shown, j, h.cap, h.cell),
            )?;
        }
    }
    if cfg.predictions {
        let mut out = String::from("unit_id,t_c,time");
        for j in 1..=data.d_y {
            out.push_str(&format!(",component_{j}"));
        }
        out.push('\n');
        for (id, t_c, t, p) in recording.rows.into_inner() {
            out.push_str(&format!("{id},{t_c},{t}"));
            push_row(&mut out, p);
        }
        write_file(&dir.join(PREDICTIONS_FILE), out)?;
    }
    Ok(EvaluateOutput { grid, mean })
}
