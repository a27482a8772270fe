//! Monte-Carlo comparison of fusion methods, gamma tuning and output files.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::{Band, StateSpaceModel};
use crate::methods::{FilterPlan, MethodRegistry};

use super::config::{ExperimentConfig, GammaPair};
use super::truth::TruthModel;

/// First run index of the held-out tuning batch. Evaluation runs use indices
/// below this, so the two batches never share random streams.
pub const TUNING_RUN_BASE: u64 = 1 << 40;

/// Mean squared error per method, time step and state component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseTable {
    pub methods: Vec<String>,
    pub components: Vec<String>,
    pub runs: usize,
    /// `mse[method][t − 1][component]`.
    pub mse: Vec<Vec<Vec<f64>>>,
    /// Standard error over runs of each `mse` cell.
    pub std_error: Vec<Vec<Vec<f64>>>,
    /// `time_average[method][component]`.
    pub time_average: Vec<Vec<f64>>,
    /// Standard error over runs of each time average.
    pub time_average_std_error: Vec<Vec<f64>>,
}

impl MseTable {
    pub fn steps(&self) -> usize {
        self.mse.first().map_or(0, |m| m.len())
    }

    pub fn method_index(&self, name: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == name)
    }

    /// Time-averaged MSE of one method and component.
    pub fn average(&self, method: &str, component: usize) -> Option<f64> {
        self.method_index(method)
            .map(|i| self.time_average[i][component])
    }
}

/// Mean and standard error of a sample accumulated as sums.
fn mean_and_se(sum: f64, sum_sq: f64, k: usize) -> (f64, f64) {
    let kf = k as f64;
    let mean = sum / kf;
    if k < 2 {
        return (mean, 0.0);
    }
    let var = ((sum_sq - kf * mean * mean) / (kf - 1.0)).max(0.0);
    (mean, (var / kf).sqrt())
}

/// Rewrites a step error as `(method, run, t)` context.
fn in_run(err: Error, method: &str, run: u64) -> Error {
    match err {
        Error::AtStep { t, source } => Error::InRun {
            method: method.into(),
            run: run as usize,
            t,
            source,
        },
        other => Error::InRun {
            method: method.into(),
            run: run as usize,
            t: 0,
            source: Box::new(other),
        },
    }
}

/// Plans for the named methods, in the given order.
pub fn build_plans(
    model: &StateSpaceModel,
    names: &[String],
    band: Band,
    cfg: &ExperimentConfig,
    steps: usize,
) -> Result<Vec<FilterPlan>> {
    let registry = MethodRegistry::standard(band, cfg.solver_config());
    let methods = registry.select(names)?;
    methods
        .par_iter()
        .map(|m| m.plan(model, steps).map_err(|e| in_run(e, m.name(), 0)))
        .collect()
}

/// Runs every plan on the runs `first .. first + count` and tabulates the
/// squared errors. Runs are simulated in parallel and merged in run order.
pub fn evaluate_plans(
    plans: &[FilterPlan],
    truth: &TruthModel,
    seed: u64,
    first: u64,
    count: usize,
    steps: usize,
    components: Vec<String>,
) -> Result<MseTable> {
    if count == 0 {
        return Err(Error::invalid("at least one run is required"));
    }
    let n = components.len();
    // per run: errors[method][t][component]
    let per_run: Vec<Vec<Vec<Vec<f64>>>> = (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let run = first + k;
            let tr = truth.simulate(seed, run, steps);
            plans
                .iter()
                .map(|plan| {
                    let est = plan.run(&tr.measurements).map_err(|e| in_run(e, &plan.method, run))?;
                    Ok(est
                        .iter()
                        .zip(&tr.states)
                        .map(|(e, x)| (0..n).map(|c| (e[c] - x[c]).powi(2)).collect())
                        .collect())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let methods: Vec<String> = plans.iter().map(|p| p.method.clone()).collect();
    let mut mse = Vec::with_capacity(plans.len());
    let mut std_error = Vec::with_capacity(plans.len());
    let mut time_average = Vec::with_capacity(plans.len());
    let mut time_average_std_error = Vec::with_capacity(plans.len());
    for mi in 0..plans.len() {
        let mut cells = vec![vec![0.0; n]; steps];
        let mut cell_se = vec![vec![0.0; n]; steps];
        for t in 0..steps {
            for c in 0..n {
                let (mut s, mut s2) = (0.0, 0.0);
                for run in &per_run {
                    let v = run[mi][t][c];
                    s += v;
                    s2 += v * v;
                }
                (cells[t][c], cell_se[t][c]) = mean_and_se(s, s2, count);
            }
        }
        let mut avg = vec![0.0; n];
        let mut avg_se = vec![0.0; n];
        for c in 0..n {
            avg[c] = cells.iter().map(|row| row[c]).sum::<f64>() / steps as f64;
            let (mut s, mut s2) = (0.0, 0.0);
            for run in &per_run {
                let v = run[mi].iter().map(|row| row[c]).sum::<f64>() / steps as f64;
                s += v;
                s2 += v * v;
            }
            avg_se[c] = mean_and_se(s, s2, count).1;
        }
        mse.push(cells);
        std_error.push(cell_se);
        time_average.push(avg);
        time_average_std_error.push(avg_se);
    }
    Ok(MseTable {
        methods,
        components,
        runs: count,
        mse,
        std_error,
        time_average,
        time_average_std_error,
    })
}

/// Simulates `cfg.runs` runs and compares `cfg.methods` on them.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<MseTable> {
    cfg.validate()?;
    let model = cfg.state_space()?;
    let truth = TruthModel::new(&model, &cfg.beta)?;
    let plans = build_plans(&model, &cfg.methods, cfg.gamma.band(), cfg, cfg.steps)?;
    evaluate_plans(
        &plans,
        &truth,
        cfg.seed,
        0,
        cfg.runs,
        cfg.steps,
        cfg.component_names(model.n()),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaPoint {
    pub gamma1: f64,
    pub gamma2: f64,
    /// Time-averaged position (first component) MSE on the tuning runs.
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tuning {
    pub best: GammaPair,
    pub surface: Vec<GammaPoint>,
    /// Comparison on the evaluation runs with the robust filter at `best`.
    pub table: MseTable,
}

/// Grid search over a band shared by all sensors, scored on held-out runs.
pub fn tune_gamma(cfg: &ExperimentConfig) -> Result<Tuning> {
    cfg.validate()?;
    let grid = cfg
        .gamma_grid
        .as_ref()
        .ok_or_else(|| Error::invalid("gamma_grid is required for tuning"))?;
    if grid.is_empty() {
        return Err(Error::invalid("gamma_grid must not be empty"));
    }
    if cfg.tuning_runs == 0 {
        return Err(Error::invalid("tuning_runs must be at least 1"));
    }
    let model = cfg.state_space()?;
    let truth = TruthModel::new(&model, &cfg.beta)?;
    let names = cfg.component_names(model.n());
    let robust = vec!["mcmdrkf".to_string()];
    let surface = grid
        .par_iter()
        .map(|g| {
            let plans = build_plans(&model, &robust, g.band(), cfg, cfg.steps)?;
            let table = evaluate_plans(
                &plans,
                &truth,
                cfg.seed,
                TUNING_RUN_BASE,
                cfg.tuning_runs,
                cfg.steps,
                names.clone(),
            )?;
            Ok(GammaPoint {
                gamma1: g.gamma1,
                gamma2: g.gamma2,
                mse: table.time_average[0][0],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // first minimum in grid order
    let best = surface
        .iter()
        .fold(None::<&GammaPoint>, |acc, p| match acc {
            Some(a) if a.mse <= p.mse => Some(a),
            _ => Some(p),
        })
        .map(|p| GammaPair {
            gamma1: p.gamma1,
            gamma2: p.gamma2,
        })
        .expect("non-empty grid");
    let mut eval = cfg.clone();
    eval.gamma = best;
    let table = run_comparison(&eval)?;
    Ok(Tuning {
        best,
        surface,
        table,
    })
}

/// Truth, estimates and `Tr V` of every method along one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDump {
    pub methods: Vec<String>,
    pub components: Vec<String>,
    pub truth: Vec<Vec<f64>>,
    /// `estimates[method][t − 1]`.
    pub estimates: Vec<Vec<Vec<f64>>>,
    /// `trace_v[method][t − 1]`.
    pub trace_v: Vec<Vec<f64>>,
}

pub fn simulate_trajectory(cfg: &ExperimentConfig, run: u64) -> Result<TrajectoryDump> {
    cfg.validate()?;
    let model = cfg.state_space()?;
    let truth = TruthModel::new(&model, &cfg.beta)?;
    let plans = build_plans(&model, &cfg.methods, cfg.gamma.band(), cfg, cfg.steps)?;
    let tr = truth.simulate(cfg.seed, run, cfg.steps);
    let mut estimates = Vec::with_capacity(plans.len());
    for plan in &plans {
        let est = plan
            .run(&tr.measurements)
            .map_err(|e| in_run(e, &plan.method, run))?;
        estimates.push(est.iter().map(|e| e.iter().copied().collect()).collect());
    }
    Ok(TrajectoryDump {
        methods: plans.iter().map(|p| p.method.clone()).collect(),
        components: cfg.component_names(model.n()),
        truth: tr.states.iter().map(|x| x.iter().copied().collect()).collect(),
        estimates,
        trace_v: plans
            .iter()
            .map(|p| p.steps.iter().map(|s| s.v.trace()).collect())
            .collect(),
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path)?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Long-format `t,method,component,mse`.
pub fn write_results(table: &MseTable, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "method", "component", "mse"]).map_err(csv_err)?;
    for t in 0..table.steps() {
        for (mi, method) in table.methods.iter().enumerate() {
            for (c, comp) in table.components.iter().enumerate() {
                w.write_record([
                    (t + 1).to_string(),
                    method.clone(),
                    comp.clone(),
                    table.mse[mi][t][c].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `method,component,mse,std_error` with time-averaged MSE.
pub fn write_summary(table: &MseTable, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["method", "component", "mse", "std_error"]).map_err(csv_err)?;
    for (mi, method) in table.methods.iter().enumerate() {
        for (c, comp) in table.components.iter().enumerate() {
            w.write_record([
                method.clone(),
                comp.clone(),
                table.time_average[mi][c].to_string(),
                table.time_average_std_error[mi][c].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_gamma_surface(surface: &[GammaPoint], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["gamma1", "gamma2", "mse"]).map_err(csv_err)?;
    for p in surface {
        w.write_record([p.gamma1.to_string(), p.gamma2.to_string(), p.mse.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory(dump: &TrajectoryDump, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(dump.components.iter().map(|c| format!("true_{c}")));
    for m in &dump.methods {
        header.extend(dump.components.iter().map(|c| format!("{m}_{c}")));
    }
    header.extend(dump.methods.iter().map(|m| format!("{m}_trace_v")));
    w.write_record(&header).map_err(csv_err)?;
    for t in 0..dump.truth.len() {
        let mut row = vec![(t + 1).to_string()];
        row.extend(dump.truth[t].iter().map(|v| v.to_string()));
        for est in &dump.estimates {
            row.extend(est[t].iter().map(|v| v.to_string()));
        }
        row.extend(dump.trace_v.iter().map(|tv| tv[t].to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Gnuplot script drawing the first component's MSE against time from
/// `results.csv` in the same directory.
pub fn plot_script(table: &MseTable) -> String {
    let comp = table.components.first().map_or("x1", |c| c.as_str());
    let methods = table.methods.join(" ");
    format!(
        "set datafile separator ','\n\
         set terminal pngcairo size 900,600\n\
         set output '{comp}_mse.png'\n\
         set xlabel 'time step'\n\
         set ylabel '{comp} MSE'\n\
         set logscale y\n\
         set key top right\n\
         methods = \"{methods}\"\n\
         plot for [m in methods] 'results.csv' every ::1 \\\n    \
         using 1:(strcol(2) eq m && strcol(3) eq '{comp}' ? $4 : 1/0) \\\n    \
         with lines title m\n"
    )
}

/// Writes `results.csv`, `summary.csv` and `plot.gp` into `dir`.
pub fn write_comparison(table: &MseTable, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_results(table, &dir.join("results.csv"))?;
    write_summary(table, &dir.join("summary.csv"))?;
    fs::write(dir.join("plot.gp"), plot_script(table))?;
    Ok(())
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::Config("threads must be at least 1".into())),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(edit: impl FnOnce(&mut ExperimentConfig)) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            steps: 40,
            runs: 6,
            tuning_runs: 3,
            ..ExperimentConfig::default()
        };
        edit(&mut cfg);
        cfg
    }

    #[test]
    fn averages_are_means_of_series() {
        let table = run_comparison(&small(|_| {})).unwrap();
        for (mi, cells) in table.mse.iter().enumerate() {
            for c in 0..3 {
                let mean = cells.iter().map(|r| r[c]).sum::<f64>() / cells.len() as f64;
                assert!((mean - table.time_average[mi][c]).abs() <= 1e-12 * mean.max(1.0));
            }
            assert!(cells.iter().flatten().all(|v| *v >= 0.0));
        }
        assert_eq!(table.methods, vec!["kf1", "ckf", "ci", "mcmdrkf"]);
    }

    #[test]
    fn near_noiseless_world_converges() {
        let cfg = small(|c| {
            c.runs = 1;
            c.steps = 100;
            c.beta = vec![0.0; 3];
            c.model.q = vec![vec![1e-4]];
            for s in &mut c.model.sensors {
                s.r = vec![vec![1e-4]];
            }
        });
        let table = run_comparison(&cfg).unwrap();
        // against the prior variance 100 of every component
        for cells in &table.mse {
            assert!(cells[cells.len() - 1].iter().all(|v| v * 100.0 < 100.0));
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let cfg = small(|_| {});
        let one = with_threads(Some(1), || run_comparison(&cfg)).unwrap().unwrap();
        let four = with_threads(Some(4), || run_comparison(&cfg)).unwrap().unwrap();
        assert_eq!(one, four);
        assert!(with_threads(Some(0), || ()).is_err());
    }

    #[test]
    fn singleton_grid_returns_its_point() {
        let cfg = small(|c| {
            c.methods = vec!["mcmdrkf".into()];
            c.gamma_grid = Some(vec![GammaPair { gamma1: 1.0, gamma2: 1.0 }]);
        });
        let tuning = tune_gamma(&cfg).unwrap();
        assert_eq!(tuning.best, GammaPair { gamma1: 1.0, gamma2: 1.0 });
        assert_eq!(tuning.surface.len(), 1);
        let mut direct = cfg.clone();
        direct.gamma = tuning.best;
        assert_eq!(tuning.table, run_comparison(&direct).unwrap());
    }

    #[test]
    fn surface_is_total() {
        let cfg = small(|c| {
            c.gamma_grid = Some(vec![
                GammaPair { gamma1: 0.99, gamma2: 1.01 },
                GammaPair { gamma1: 0.5, gamma2: 2.0 },
            ]);
        });
        let tuning = tune_gamma(&cfg).unwrap();
        assert_eq!(tuning.surface.len(), 2);
        assert!(tuning.surface.iter().all(|p| p.mse.is_finite() && p.mse >= 0.0));
    }

    #[test]
    fn tuning_needs_a_grid() {
        assert!(tune_gamma(&small(|_| {})).is_err());
    }

    #[test]
    fn output_files() {
        let dir = tempfile::tempdir().unwrap();
        let table = run_comparison(&small(|c| c.steps = 5)).unwrap();
        write_comparison(&table, dir.path()).unwrap();
        let results = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(results.lines().next(), Some("t,method,component,mse"));
        assert_eq!(results.lines().count(), 1 + 5 * 4 * 3);
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 1 + 4 * 3);
        assert!(fs::read_to_string(dir.path().join("plot.gp")).unwrap().contains("results.csv"));
    }

    #[test]
    fn trajectory_layout() {
        let cfg = small(|c| {
            c.steps = 4;
            c.methods = vec!["ckf".into(), "mcmdrkf".into()];
        });
        let dump = simulate_trajectory(&cfg, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajectory.csv");
        write_trajectory(&dump, &path).unwrap();
        let text = fs::read_to_string(path).unwrap();
        let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
        assert_eq!(header.len(), 1 + 3 + 2 * 3 + 2);
        assert_eq!(header[0], "t");
        assert_eq!(header[1], "true_position");
        assert_eq!(header[4], "ckf_position");
        assert_eq!(header[11], "mcmdrkf_trace_v");
        assert_eq!(text.lines().count(), 5);
    }
}
