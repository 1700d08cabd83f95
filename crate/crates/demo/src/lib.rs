//! Browser front end: train a small reservoir on a flow and watch sparse updates keep the
//! prediction on track, map the transverse exponent of the on-off coupled Rössler pair, and
//! render a Kuramoto-Sivashinsky space-time field.
//!
//! Everything heavy lives in `rcforecast`; this crate only shrinks the shipped configs to
//! browser size and flattens results into `Float64Array`s for the page's canvases.

use rcforecast::dynsys::{DynSystem, PdeSystem};
use rcforecast::experiment::{evaluate, train_model, Dataset, ExperimentConfig};
use rcforecast::lyapunov::{stability_map as transverse_map, LyapunovOptions};
use rcforecast::reservoir::ReservoirModel;
use rcforecast::updating::UpdateSchedule;
use wasm_bindgen::prelude::*;

const RESERVOIR_SIZE: usize = 300;
const TRAINING_STEPS: usize = 20_000;

/// Active-step and period axes of the stability map, in steps.
pub const MAP_ACTIVE: [usize; 8] = [1, 2, 3, 4, 5, 6, 8, 10];
pub const MAP_PERIOD: [usize; 10] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

fn shipped_config(system: &str) -> Option<&'static str> {
    Some(match system {
        "rossler" => include_str!("../../../configs/rossler.toml"),
        "lorenz" => include_str!("../../../configs/lorenz.toml"),
        "hindmarsh_rose" => include_str!("../../../configs/hindmarsh_rose.toml"),
        "food_web" => include_str!("../../../configs/food_web.toml"),
        _ => return None,
    })
}

fn js(e: rcforecast::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A trained reservoir plus the true trajectory it is compared against.
#[wasm_bindgen]
pub struct Forecast {
    cfg: ExperimentConfig,
    data: Dataset,
    model: ReservoirModel,
    delta_e: f64,
}

impl Forecast {
    pub fn train(system: &str, seed: u64) -> rcforecast::Result<Self> {
        let text = shipped_config(system)
            .ok_or_else(|| rcforecast::Error::Config(format!("unknown system {system:?}")))?;
        let mut cfg = ExperimentConfig::from_toml(text)?;
        cfg.seeds.override_with(seed);
        cfg.reservoir.size = RESERVOIR_SIZE;
        cfg.training.steps = TRAINING_STEPS;
        cfg.training.washout = cfg.training.washout.min(TRAINING_STEPS / 10);
        // Truth long enough for the longest run the page asks for.
        cfg.evaluation.steps = Some(8000);
        let data = Dataset::generate(&cfg)?;
        let (model, _) = train_model(&cfg, &data)?;
        Ok(Self { cfg, data, model, delta_e: f64::NAN })
    }

    /// `[truth; prediction; error]` for `channel`, each `steps` long. `period == 0` runs
    /// free; otherwise `channel` is updated with strength `c` during the first `active`
    /// steps of every `period`.
    pub fn predict(&mut self, period: usize, active: usize, c: f64, channel: usize, steps: usize) -> rcforecast::Result<Vec<f64>> {
        let steps = steps.min(self.data.truth.len());
        self.cfg.evaluation.steps = Some(steps);
        let plan = if period == 0 {
            None
        } else {
            Some(UpdateSchedule::regular_on(period, active, vec![channel], c).realize(self.data.system.sites())?)
        };
        let (pred, series) = evaluate(&self.cfg, &mut self.model, &self.data, plan.as_ref())?;
        self.delta_e = series.delta_e;
        let mut out = Vec::with_capacity(3 * steps);
        out.extend(self.data.truth.slice_rows(0, steps).column(channel));
        out.extend(pred.column(channel));
        out.extend_from_slice(&series.e);
        Ok(out)
    }
}

#[wasm_bindgen]
impl Forecast {
    #[wasm_bindgen(constructor)]
    pub fn new(system: &str, seed: u32) -> Result<Forecast, JsError> {
        Self::train(system, seed as u64).map_err(js)
    }

    pub fn run(&mut self, period: usize, active: usize, c: f64, channel: usize, steps: usize) -> Result<Vec<f64>, JsError> {
        self.predict(period, active, c, channel, steps).map_err(js)
    }

    /// δe of the last run.
    #[wasm_bindgen(getter, js_name = deltaE)]
    pub fn delta_e(&self) -> f64 {
        self.delta_e
    }

    #[wasm_bindgen(getter)]
    pub fn dt(&self) -> f64 {
        self.data.system.dt()
    }

    #[wasm_bindgen(getter, js_name = lambdaMax)]
    pub fn lambda_max(&self) -> f64 {
        self.cfg.evaluation.lambda_max
    }
}

/// Transverse exponents over `MAP_ACTIVE × MAP_PERIOD`, rows by period; NaN where
/// `T0 > T`.
pub fn rossler_map(c: f64, channel: usize, time: f64) -> rcforecast::Result<Vec<f64>> {
    let text = include_str!("../../../configs/rossler_sweep.toml");
    let cfg = ExperimentConfig::from_toml(text)?;
    let DynSystem::Ode(system) = cfg.system.build()? else { unreachable!("rossler is a flow") };
    if channel > 2 {
        return Err(rcforecast::Error::InvalidParameter(format!("channel {channel} out of range")));
    }
    let mut mask = [false; 3];
    mask[channel] = true;
    let opts = LyapunovOptions::new((time / system.dt).ceil() as usize);
    let grid = transverse_map(&system, c, &MAP_ACTIVE, &MAP_PERIOD, mask, &opts, 1)?;
    Ok(grid.cells.iter().map(|v| v.unwrap_or(f64::NAN)).collect())
}

#[wasm_bindgen(js_name = stabilityMap)]
pub fn stability_map(c: f64, channel: usize, time: f64) -> Result<Vec<f64>, JsError> {
    rossler_map(c, channel, time).map_err(js)
}

#[wasm_bindgen(js_name = mapActive)]
pub fn map_active() -> Vec<u32> {
    MAP_ACTIVE.iter().map(|&v| v as u32).collect()
}

#[wasm_bindgen(js_name = mapPeriod)]
pub fn map_period() -> Vec<u32> {
    MAP_PERIOD.iter().map(|&v| v as u32).collect()
}

/// `steps × 64` KSE field on L = 22 after a short transient, row-major in time.
pub fn kse(steps: usize, seed: u64) -> rcforecast::Result<Vec<f64>> {
    let system = DynSystem::Pde(PdeSystem::kse_default());
    Ok(system.generate(seed, steps, 400)?.as_slice().to_vec())
}

#[wasm_bindgen(js_name = kseField)]
pub fn kse_field(steps: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    kse(steps, seed as u64).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forecast_layout_and_zero_coupling() {
        let mut f = Forecast::train("rossler", 5).unwrap();
        let free = f.predict(0, 0, 0.0, 1, 200).unwrap();
        assert_eq!(free.len(), 600);
        let free_err = f.delta_e;
        assert!(free_err.is_finite());
        // The first block is the truth itself.
        let truth: Vec<f64> = f.data.truth.slice_rows(0, 200).column(1).collect();
        assert_eq!(&free[..200], truth.as_slice());
        let coupled = f.predict(10, 3, 0.0, 1, 200).unwrap();
        assert_eq!(free, coupled);
        assert_eq!(f.delta_e, free_err);
    }

    #[test]
    fn unknown_system_is_an_error() {
        assert!(Forecast::train("duffing", 1).is_err());
    }

    #[test]
    fn map_covers_the_grid() {
        let cells = rossler_map(0.8, 1, 50.0).unwrap();
        assert_eq!(cells.len(), MAP_ACTIVE.len() * MAP_PERIOD.len());
        // Every active length on the axis fits inside the shortest period.
        assert!(cells.iter().all(|v| v.is_finite()));
        assert!(rossler_map(0.8, 3, 50.0).is_err());
    }

    #[test]
    fn kse_field_shape() {
        let f = kse(50, 2).unwrap();
        assert_eq!(f.len(), 50 * 64);
        assert!(f.iter().all(|v| v.is_finite()));
    }
}
