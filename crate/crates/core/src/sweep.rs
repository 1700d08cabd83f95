//! Grids of prediction experiments over update schedules, and the grid container
//! shared with the stability maps.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{evaluate, train_model, Dataset, ExperimentConfig, ScheduleKind, SweepConfig};
use crate::reservoir::ReservoirModel;
use crate::updating::UpdateSchedule;

/// δe recorded for cells whose prediction diverged or exceeded this value.
pub const DELTA_E_CEILING: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self { name: name.into(), values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Row-major grid: row `j` holds `y.values[j]`, column `i` holds `x.values[i]`.
/// Masked cells are `None`; flagged cells carry a value that needs a caveat (clamped
/// divergence, unconverged exponent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub quantity: String,
    pub x: Axis,
    pub y: Axis,
    pub cells: Vec<Option<f64>>,
    pub flagged: Vec<bool>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl SweepGrid {
    pub fn new(quantity: impl Into<String>, x: Axis, y: Axis) -> Self {
        let n = x.len() * y.len();
        Self {
            quantity: quantity.into(),
            x,
            y,
            cells: vec![None; n],
            flagged: vec![false; n],
            metadata: BTreeMap::new(),
        }
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        assert!(ix < self.x.len() && iy < self.y.len(), "cell ({ix}, {iy}) out of range");
        iy * self.x.len() + ix
    }

    pub fn get(&self, ix: usize, iy: usize) -> Option<f64> {
        self.cells[self.index(ix, iy)]
    }

    pub fn set(&mut self, ix: usize, iy: usize, value: Option<f64>, flagged: bool) {
        let k = self.index(ix, iy);
        self.cells[k] = value;
        self.flagged[k] = flagged;
    }

    /// `(ix, iy)` of every cell in storage order.
    pub fn coordinates(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.y.len()).flat_map(move |iy| (0..self.x.len()).map(move |ix| (ix, iy)))
    }

    /// Matrix CSV: the header row lists the x values after a `y\x` corner cell; each
    /// following row starts with its y value. Masked cells are empty fields.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec![format!("{}\\{}", self.y.name, self.x.name)];
        header.extend(self.x.values.iter().map(|v| format!("{v:?}")));
        writeln!(w, "{}", header.join(","))?;
        for (iy, y) in self.y.values.iter().enumerate() {
            let mut line = vec![format!("{y:?}")];
            for ix in 0..self.x.len() {
                line.push(self.get(ix, iy).map_or(String::new(), |v| format!("{v:?}")));
            }
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Reads the matrix CSV back. Flags and metadata live only in the JSON form.
    pub fn read_csv<R: Read>(r: R, quantity: &str) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty grid CSV".into()))??;
        let mut fields = header.split(',');
        let corner = fields.next().unwrap_or_default();
        let (y_name, x_name) =
            corner.split_once('\\').ok_or_else(|| Error::Format(format!("bad corner cell {corner:?}")))?;
        let xs = fields.map(parse_f64).collect::<Result<Vec<_>>>()?;
        let mut ys = Vec::new();
        let mut cells = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut f = line.split(',');
            ys.push(parse_f64(f.next().unwrap_or_default())?);
            let row: Vec<Option<f64>> =
                f.map(|s| if s.is_empty() { Ok(None) } else { parse_f64(s).map(Some) }).collect::<Result<_>>()?;
            if row.len() != xs.len() {
                return Err(Error::Format(format!("row with {} cells, expected {}", row.len(), xs.len())));
            }
            cells.extend(row);
        }
        let mut grid = Self::new(quantity, Axis::new(x_name, xs), Axis::new(y_name, ys));
        grid.cells = cells;
        Ok(grid)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let grid: Self = serde_json::from_reader(r)?;
        if grid.cells.len() != grid.x.len() * grid.y.len() || grid.flagged.len() != grid.cells.len() {
            return Err(Error::Format("cell count does not match the axes".into()));
        }
        Ok(grid)
    }

    /// Binary PPM with one pixel per cell, largest y on the top row. Values are mapped
    /// linearly (or on log10 when `log` is set and all values are positive) from the
    /// grid's range onto a five-stop viridis ramp; masked cells are black.
    pub fn write_ppm<W: Write>(&self, mut w: W, log: bool) -> Result<()> {
        let present: Vec<f64> = self.cells.iter().flatten().copied().filter(|v| v.is_finite()).collect();
        let log = log && present.iter().all(|&v| v > 0.0);
        let map = |v: f64| if log { v.log10() } else { v };
        let lo = present.iter().map(|&v| map(v)).fold(f64::INFINITY, f64::min);
        let hi = present.iter().map(|&v| map(v)).fold(f64::NEG_INFINITY, f64::max);
        write!(w, "P6\n{} {}\n255\n", self.x.len(), self.y.len())?;
        for iy in (0..self.y.len()).rev() {
            for ix in 0..self.x.len() {
                let px = match self.get(ix, iy) {
                    Some(v) if v.is_finite() => {
                        let t = if hi > lo { (map(v) - lo) / (hi - lo) } else { 0.5 };
                        viridis(t)
                    }
                    _ => [0, 0, 0],
                };
                w.write_all(&px)?;
            }
        }
        Ok(())
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Format(format!("not a number: {s:?}")))
}

const VIRIDIS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn viridis(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (t.floor() as usize).min(VIRIDIS.len() - 2);
    let f = t - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (VIRIDIS[i][c] + f * (VIRIDIS[i + 1][c] - VIRIDIS[i][c])).round() as u8;
    }
    out
}

/// Evaluates `f` on every index in `0..n`, on up to `workers` threads, and returns the
/// results in index order.
pub(crate) fn map_cells<T, S, I, F>(n: usize, workers: usize, init: I, f: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("thread pool");
        return pool.install(|| (0..n).into_par_iter().map_init(&init, |s, i| f(s, i)).collect());
    }
    let _ = workers;
    let mut state = init();
    (0..n).map(|i| f(&mut state, i)).collect()
}

/// δe of one schedule, clamped at [`DELTA_E_CEILING`]; the flag marks clamped cells.
pub fn delta_e_for(
    cfg: &ExperimentConfig,
    model: &mut ReservoirModel,
    data: &Dataset,
    schedule: &UpdateSchedule,
) -> Result<(f64, bool)> {
    let plan = schedule.realize(data.system.sites())?;
    match evaluate(cfg, model, data, Some(&plan)) {
        Ok((_, s)) if s.delta_e.is_finite() && s.delta_e <= DELTA_E_CEILING => Ok((s.delta_e, false)),
        Ok(_) | Err(Error::Diverged { .. }) => Ok((DELTA_E_CEILING, true)),
        Err(e) => Err(e),
    }
}

/// Schedule of regular-mode cell `(active, period)` for `sw`.
pub fn regular_cell_schedule(sw: &SweepConfig, sites: usize, active: usize, period: usize) -> UpdateSchedule {
    match &sw.sites {
        Some(idx) => UpdateSchedule::regular_on(period, active, idx.clone(), sw.c),
        None => UpdateSchedule::regular(period, active, sw.coupled_sites.unwrap_or(sites), sw.c),
    }
}

/// Runs the `sweep` table of `cfg`: δe over the prediction window for every schedule in
/// the grid. Regular sweeps span `active` (x) by `period` (y), with `active > period`
/// masked; random sweeps span `p_t` (x) by `p_s` (y) and average `random_seeds`
/// schedule seeds `seeds.schedule + k` per cell.
pub fn run_sweep(cfg: &ExperimentConfig, workers: usize) -> Result<SweepGrid> {
    let sw = cfg.sweep.as_ref().ok_or_else(|| Error::Config("config has no sweep table".into()))?;
    let data = Dataset::generate(cfg)?;
    let (model, _) = train_model(cfg, &data)?;
    run_sweep_with(cfg, sw, &data, &model, workers)
}

/// [`run_sweep`] with data and a trained model supplied by the caller.
pub fn run_sweep_with(
    cfg: &ExperimentConfig,
    sw: &SweepConfig,
    data: &Dataset,
    model: &ReservoirModel,
    workers: usize,
) -> Result<SweepGrid> {
    let sites = data.system.sites();
    let mut grid = match sw.mode {
        ScheduleKind::Regular => SweepGrid::new(
            "delta_e",
            Axis::new("T0", sw.active.iter().map(|&v| v as f64).collect()),
            Axis::new("T", sw.period.iter().map(|&v| v as f64).collect()),
        ),
        ScheduleKind::Random => {
            SweepGrid::new("delta_e", Axis::new("p_t", sw.p_t.clone()), Axis::new("p_s", sw.p_s.clone()))
        }
    };
    let coords: Vec<(usize, usize)> = grid.coordinates().collect();

    let cell = |model: &mut ReservoirModel, k: usize| -> Result<Option<(f64, bool)>> {
        let (ix, iy) = coords[k];
        if !sw.reuse_model {
            *model = train_model(cfg, data)?.0;
        }
        match sw.mode {
            ScheduleKind::Regular => {
                let (active, period) = (sw.active[ix], sw.period[iy]);
                if active > period {
                    return Ok(None);
                }
                let s = regular_cell_schedule(sw, sites, active, period);
                delta_e_for(cfg, model, data, &s).map(Some)
            }
            ScheduleKind::Random => {
                let mut total = 0.0;
                let mut flagged = false;
                for k in 0..sw.random_seeds {
                    let seed = cfg.seeds.schedule.wrapping_add(k as u64);
                    let s = UpdateSchedule::random(sw.p_t[ix], sw.p_s[iy], seed, sw.c);
                    let (v, f) = delta_e_for(cfg, model, data, &s)?;
                    total += v;
                    flagged |= f;
                }
                Ok(Some((total / sw.random_seeds as f64, flagged)))
            }
        }
    };
    let results = map_cells(coords.len(), workers, || model.clone(), |m, k| cell(m, k));
    for (k, r) in results.into_iter().enumerate() {
        match r? {
            Some((v, f)) => {
                grid.cells[k] = Some(v);
                grid.flagged[k] = f;
            }
            None => grid.cells[k] = None,
        }
    }
    grid.metadata.insert("config_hash".into(), cfg.hash().into());
    grid.metadata.insert("seeds".into(), serde_json::to_value(cfg.seeds)?);
    grid.metadata.insert("coupling".into(), sw.c.into());
    grid.metadata.insert("ceiling".into(), DELTA_E_CEILING.into());
    grid.metadata.insert("masked".into(), "null in JSON, empty field in CSV: T0 > T".into());
    if sw.mode == ScheduleKind::Random {
        grid.metadata.insert("random_seeds".into(), sw.random_seeds.into());
    }
    grid.metadata.insert("prediction_steps".into(), cfg.evaluation.prediction_steps(data.system.dt()).into());
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SweepGrid {
        let mut g = SweepGrid::new("delta_e", Axis::new("T0", vec![1.0, 2.0]), Axis::new("T", vec![1.0, 10.0]));
        g.set(0, 0, Some(0.001), false);
        g.set(1, 0, None, false);
        g.set(0, 1, Some(0.1 + 0.2), false);
        g.set(1, 1, Some(DELTA_E_CEILING), true);
        g
    }

    #[test]
    fn csv_layout_and_masked_cells() {
        let mut buf = Vec::new();
        sample().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "T\\T0,1.0,2.0");
        assert_eq!(lines[1], "1.0,0.001,");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let g = sample();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = SweepGrid::read_csv(&buf[..], "delta_e").unwrap();
        assert_eq!(back.cells, g.cells);
        assert_eq!(back.x, g.x);
        assert_eq!(back.y, g.y);
    }

    #[test]
    fn json_round_trip_is_identical() {
        let mut g = sample();
        g.metadata.insert("config_hash".into(), "abc".into());
        let mut buf = Vec::new();
        g.write_json(&mut buf).unwrap();
        assert_eq!(SweepGrid::read_json(&buf[..]).unwrap(), g);
    }

    #[test]
    fn ppm_has_one_pixel_per_cell() {
        let mut buf = Vec::new();
        sample().write_ppm(&mut buf, true).unwrap();
        let header = b"P6\n2 2\n255\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(buf.len(), header.len() + 12);
        // Top-left pixel is (T0=1, T=10); the masked cell (T0=2, T=1) is bottom-right.
        assert_eq!(&buf[buf.len() - 3..], &[0, 0, 0]);
    }

    #[test]
    fn parallel_map_preserves_order() {
        let out = map_cells(50, 4, || 0u64, |_, i| i * i);
        assert_eq!(out, (0..50).map(|i| i * i).collect::<Vec<_>>());
    }
}
