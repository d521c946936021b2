//! The four pipeline stages: generate, fit, evaluate, report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use steerid::encoder::{self, EncoderModel, Standardizer, TrainConfig};
use steerid::gp::{self, NarxOrders, SeKernel};
use steerid::linear::{self, fit_lti};
use steerid::signal::{nrmse_evolution, Dataset};
use steerid::sim::run_experiment;

use crate::artifacts::{
    load_artifact, save_artifact, EncoderArtifact, GpArtifact, LtiArtifact, ModelArtifact,
};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::io::{
    fmt_f64, write_dataset_csv, write_manifest, write_truth_csv, DatasetStore, ManifestEntry,
    Purpose,
};
use crate::plot::{write_evaluation_svg, Series, PALETTE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Lti,
    Gp,
    Encoder,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Lti, Method::Gp, Method::Encoder];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Lti => "lti",
            Method::Gp => "gp",
            Method::Encoder => "encoder",
        }
    }

    pub fn parse(s: &str) -> CliResult<Method> {
        match s {
            "lti" => Ok(Method::Lti),
            "gp" => Ok(Method::Gp),
            "encoder" => Ok(Method::Encoder),
            other => Err(CliError::config(format!(
                "unknown method {other:?}; expected lti, gp or encoder"
            ))),
        }
    }
}

pub fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

pub fn models_dir(out: &Path) -> PathBuf {
    out.join("models")
}

pub fn report_dir(out: &Path) -> PathBuf {
    out.join("report")
}

pub fn model_path(out: &Path, method: Method) -> PathBuf {
    models_dir(out).join(format!("{}.json", method.name()))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

/// Simulates every configured dataset and writes the records, truth
/// sidecars and the manifest. `seed_offset` shifts all dataset seeds.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path, seed_offset: u64) -> CliResult<()> {
    let dir = data_dir(out);
    ensure_dir(&dir)?;
    let params = cfg.sim_params();
    let mut manifest = Vec::with_capacity(cfg.datasets.len());
    for spec in &cfg.datasets {
        let espec = spec.experiment_spec();
        let noise = spec.noise_model();
        let seed = spec.seed.wrapping_add(seed_offset);
        let exp = run_experiment(&espec, &params, &noise, seed)
            .map_err(|e| CliError::data(format!("dataset {:?}: {e}", spec.id)))?;
        write_dataset_csv(&dir.join(format!("{}.csv", spec.id)), &exp.dataset)?;
        write_truth_csv(&dir.join(format!("{}.truth.csv", spec.id)), &exp)?;
        manifest.push(ManifestEntry {
            id: spec.id.clone(),
            speed: spec.speed,
            duration: spec.duration,
            samples: exp.dataset.len(),
            t_s: exp.dataset.t_s,
        });
    }
    write_manifest(&dir.join("manifest.json"), &manifest)
}

fn decimate_all(data: &[Dataset], factor: usize) -> CliResult<Vec<Dataset>> {
    data.iter()
        .map(|d| {
            d.decimate(factor)
                .map_err(|e| CliError::data(format!("dataset {:?}: {e}", d.id)))
        })
        .collect()
}

fn dead_zone_all(data: &[Dataset], edges: [f64; 2]) -> CliResult<Vec<Dataset>> {
    data.iter()
        .map(|d| {
            d.with_dead_zone(edges[0], edges[1])
                .map_err(|e| CliError::data(format!("dataset {:?}: {e}", d.id)))
        })
        .collect()
}

/// Channel means over a set of records, `([u_s, v], r)`.
fn channel_means(data: &[Dataset]) -> ([f64; 2], f64) {
    let n: usize = data.iter().map(|d| d.len()).sum();
    let nf = n.max(1) as f64;
    let mut u = [0.0; 2];
    let mut y = 0.0;
    for d in data {
        u[0] += d.u_s.iter().sum::<f64>();
        u[1] += d.v.iter().sum::<f64>();
        y += d.r.iter().sum::<f64>();
    }
    ([u[0] / nf, u[1] / nf], y / nf)
}

/// Shifts every channel into deviations from the given means.
fn center_dataset(d: &Dataset, u_mean: [f64; 2], y_mean: f64) -> Dataset {
    Dataset::new(
        d.id.clone(),
        d.t.clone(),
        d.u_s.iter().map(|&x| x - u_mean[0]).collect(),
        d.v.iter().map(|&x| x - u_mean[1]).collect(),
        d.r.iter().map(|&x| x - y_mean).collect(),
        d.t_s,
    )
    .expect("centering preserves validity")
}

fn fit_split<'a>(
    cfg: &'a ExperimentConfig,
    method_train: &'a Option<Vec<String>>,
    method_val: &'a Option<Vec<String>>,
) -> (&'a [String], &'a [String]) {
    (
        method_train.as_deref().unwrap_or(&cfg.split.train),
        method_val.as_deref().unwrap_or(&cfg.split.val),
    )
}

/// Fits one method on the configured split and writes its model artifact.
/// `seed_override` replaces the encoder training seed when given.
pub fn cmd_fit(
    method: Method,
    cfg: &ExperimentConfig,
    out: &Path,
    seed_override: Option<u64>,
) -> CliResult<()> {
    ensure_dir(&models_dir(out))?;
    let store = DatasetStore::new(data_dir(out), &cfg.split_plan());
    let artifact = match method {
        Method::Lti => fit_lti_method(cfg, &store)?,
        Method::Gp => fit_gp_method(cfg, &store)?,
        Method::Encoder => fit_encoder_method(cfg, &store, out, seed_override)?,
    };
    save_artifact(&model_path(out, method), &artifact)
}

fn fit_lti_method(cfg: &ExperimentConfig, store: &DatasetStore) -> CliResult<ModelArtifact> {
    let c = &cfg.lti;
    let (train_ids, val_ids) = fit_split(cfg, &c.train, &c.val);
    let mut train = decimate_all(&store.load_all(train_ids, Purpose::Fit)?, c.decimate)?;
    let mut val = decimate_all(&store.load_all(val_ids, Purpose::Fit)?, c.decimate)?;
    let dead_zone = c.dead_zone.then_some(c.dead_zone_edges);
    if let Some(edges) = dead_zone {
        train = dead_zone_all(&train, edges)?;
        val = dead_zone_all(&val, edges)?;
    }
    // The linear model works in deviations around the training operating
    // point; a near-constant speed channel would otherwise force a huge
    // DC transient from the zero initial state.
    let (u_mean, y_mean) = channel_means(&train);
    let train: Vec<Dataset> = train.iter().map(|d| center_dataset(d, u_mean, y_mean)).collect();
    let val: Vec<Dataset> = val.iter().map(|d| center_dataset(d, u_mean, y_mean)).collect();
    let model = fit_lti(
        &train, &val, c.n_a, c.n_b, c.n_k, c.n_x, c.epochs, c.lr,
    )
    .map_err(|e| CliError::training(format!("lti: {e}")))?;
    Ok(ModelArtifact::Lti(LtiArtifact::from_model(
        &model, c.decimate, dead_zone, u_mean, y_mean,
    )))
}

fn fit_gp_method(cfg: &ExperimentConfig, store: &DatasetStore) -> CliResult<ModelArtifact> {
    let c = &cfg.gp;
    let (train_ids, val_ids) = fit_split(cfg, &c.train, &c.val);
    let train = decimate_all(&store.load_all(train_ids, Purpose::Fit)?, c.decimate)?;
    let val = decimate_all(&store.load_all(val_ids, Purpose::Fit)?, c.decimate)?;
    let val_ref: &[Dataset] = if val.is_empty() { &train } else { &val };

    let order_grid: Vec<NarxOrders> = c
        .orders
        .iter()
        .map(|&[n_a, n_b]| NarxOrders::new(n_a, n_b))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::config(format!("gp.orders: {e}")))?;
    let kernel_grid: Vec<SeKernel> = c
        .lengthscale_scales
        .iter()
        .map(|&s| SeKernel {
            signal_var: c.signal_var,
            lengthscales: vec![s],
            noise_var: c.noise_var,
        })
        .collect();

    let (template, orders) = gp::tune_hyperparameters(
        &train, val_ref, &order_grid, &kernel_grid, c.horizon, c.row_cap,
    )
    .map_err(|e| CliError::training(format!("gp: {e}")))?;

    let (mut rows, mut targets) = gp::build_regressors_all(&train, orders)
        .map_err(|e| CliError::training(format!("gp: {e}")))?;
    gp::subsample_rows(&mut rows, &mut targets, c.row_cap);
    let kernel = template
        .expand(&rows)
        .map_err(|e| CliError::training(format!("gp: {e}")))?;
    let model = gp::gp_fit(&rows, &targets, &kernel)
        .map_err(|e| CliError::training(format!("gp: {e}")))?;
    Ok(ModelArtifact::Gp(GpArtifact::from_model(
        &model, orders, c.decimate,
    )))
}

fn fit_encoder_method(
    cfg: &ExperimentConfig,
    store: &DatasetStore,
    out: &Path,
    seed_override: Option<u64>,
) -> CliResult<ModelArtifact> {
    let c = &cfg.encoder;
    let (train_ids, val_ids) = fit_split(cfg, &c.train, &c.val);
    let train = decimate_all(&store.load_all(train_ids, Purpose::Fit)?, c.decimate)?;
    let val = decimate_all(&store.load_all(val_ids, Purpose::Fit)?, c.decimate)?;

    let norm = Standardizer::fit(&train).map_err(|e| CliError::training(format!("encoder: {e}")))?;
    let seed = seed_override.unwrap_or(c.seed);
    let init = EncoderModel::init(c.n_x, c.n_past, &c.hidden, seed, norm)
        .map_err(|e| CliError::config(format!("encoder: {e}")))?;
    let tcfg = TrainConfig {
        n: c.n,
        tau0: c.tau0,
        batch_size: c.batch_size,
        lr: c.lr,
        epochs: c.epochs,
        seed,
        val_patience: c.val_patience,
    };
    let outcome = encoder::train(&init, &train, &val, &tcfg)
        .map_err(|e| CliError::training(format!("encoder: {e}")))?;

    let mut history = String::from("epoch,train_loss,val_nrmse\n");
    for h in &outcome.history {
        history.push_str(&format!(
            "{},{},{}\n",
            h.epoch,
            fmt_f64(h.train_loss),
            fmt_f64(h.val_nrmse)
        ));
    }
    let hist_path = models_dir(out).join("encoder_history.csv");
    std::fs::write(&hist_path, history)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", hist_path.display())))?;

    if outcome.diverged {
        return Err(CliError::training(
            "encoder: loss became non-finite; best-so-far model discarded",
        ));
    }
    Ok(ModelArtifact::Encoder(EncoderArtifact::from_model(
        &outcome.model,
        c.decimate,
    )))
}

struct Evaluation {
    /// Decimated record the model was run on.
    dataset: Dataset,
    /// Full-length simulated output, head equal to the measured samples
    /// for methods with an initialization window.
    y_hat: Vec<f64>,
    /// First predicted sample; the NRMSE window starts here.
    warmup: usize,
}

fn evaluate_model(artifact: &ModelArtifact, d: &Dataset) -> CliResult<Evaluation> {
    match artifact {
        ModelArtifact::Lti(art) => {
            let model = art.to_model()?;
            let mut dd = d
                .decimate(art.decimate)
                .map_err(|e| CliError::data(format!("dataset {:?}: {e}", d.id)))?;
            if let Some(edges) = art.dead_zone {
                dd = dd
                    .with_dead_zone(edges[0], edges[1])
                    .map_err(|e| CliError::data(e.to_string()))?;
            }
            let centered = center_dataset(&dd, art.u_mean, art.y_mean);
            let y_dev = linear::simulate_lti(&model, &centered.inputs(), &DVector::zeros(model.n_x))
                .map_err(|e| CliError::data(format!("lti on {:?}: {e}", d.id)))?;
            let y_hat = y_dev.iter().map(|&y| y + art.y_mean).collect();
            Ok(Evaluation { dataset: dd, y_hat, warmup: 0 })
        }
        ModelArtifact::Gp(art) => {
            let model = art.to_model()?;
            let orders = art.orders()?;
            let dd = d
                .decimate(art.decimate)
                .map_err(|e| CliError::data(format!("dataset {:?}: {e}", d.id)))?;
            let y_hat = gp::gp_simulate(&model, &dd, orders)
                .map_err(|e| CliError::data(format!("gp on {:?}: {e}", d.id)))?;
            Ok(Evaluation { dataset: dd, y_hat, warmup: orders.max_lag() })
        }
        ModelArtifact::Encoder(art) => {
            let model = art.to_model()?;
            let dd = d
                .decimate(art.decimate)
                .map_err(|e| CliError::data(format!("dataset {:?}: {e}", d.id)))?;
            let y_hat = encoder::simulate_free_run(&model, &dd)
                .map_err(|e| CliError::data(format!("encoder on {:?}: {e}", d.id)))?;
            Ok(Evaluation { dataset: dd, y_hat, warmup: model.n_past })
        }
    }
}

/// Free-runs every fitted model on every test record and writes the NRMSE
/// report, evolution curves, simulation traces and one SVG per test set.
pub fn cmd_evaluate(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let rdir = report_dir(out);
    ensure_dir(&rdir)?;
    let store = DatasetStore::new(data_dir(out), &cfg.split_plan());

    let mut methods: Vec<(Method, ModelArtifact)> = Vec::new();
    for m in Method::ALL {
        let path = model_path(out, m);
        if path.exists() {
            methods.push((m, load_artifact(&path)?));
        }
    }
    if methods.is_empty() {
        return Err(CliError::data(format!(
            "no model files found under {}",
            models_dir(out).display()
        )));
    }

    // report rows: dataset id -> method name -> final NRMSE.
    let mut table: BTreeMap<String, BTreeMap<&'static str, f64>> = BTreeMap::new();
    for id in &cfg.split.test {
        let d = store.load(id, Purpose::Evaluate)?;
        let mut traces_xy: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
        let mut evo_xy: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
        let mut measured: Option<(Vec<f64>, Vec<f64>)> = None;

        for (method, artifact) in &methods {
            let ev = evaluate_model(artifact, &d)?;
            let y = &ev.dataset.r[ev.warmup..];
            let y_hat = &ev.y_hat[ev.warmup..];
            let evolution = nrmse_evolution(y, y_hat)
                .map_err(|e| CliError::data(format!("{} on {:?}: {e}", method.name(), id)))?;
            let final_nrmse = *evolution.last().expect("non-empty evolution");
            table
                .entry(id.clone())
                .or_default()
                .insert(method.name(), final_nrmse);

            let mut evo_csv = String::from("k,nrmse\n");
            for (j, &e) in evolution.iter().enumerate() {
                evo_csv.push_str(&format!("{},{}\n", ev.warmup + j, fmt_f64(e)));
            }
            let evo_path = rdir.join(format!("nrmse_evolution_{}_{}.csv", method.name(), id));
            std::fs::write(&evo_path, evo_csv)
                .map_err(|e| CliError::data(format!("cannot write {}: {e}", evo_path.display())))?;

            let mut trace_csv = String::from("t,y,y_hat,error\n");
            for k in 0..ev.dataset.len() {
                trace_csv.push_str(&format!(
                    "{},{},{},{}\n",
                    fmt_f64(ev.dataset.t[k]),
                    fmt_f64(ev.dataset.r[k]),
                    fmt_f64(ev.y_hat[k]),
                    fmt_f64(ev.y_hat[k] - ev.dataset.r[k]),
                ));
            }
            let trace_path = rdir.join(format!("trace_{}_{}.csv", method.name(), id));
            std::fs::write(&trace_path, trace_csv).map_err(|e| {
                CliError::data(format!("cannot write {}: {e}", trace_path.display()))
            })?;

            if measured.is_none() {
                measured = Some((ev.dataset.t.clone(), ev.dataset.r.clone()));
            }
            traces_xy.push((
                method.name().to_string(),
                ev.dataset.t.clone(),
                ev.y_hat.clone(),
            ));
            evo_xy.push((
                method.name().to_string(),
                (ev.warmup..ev.warmup + evolution.len())
                    .map(|k| k as f64)
                    .collect(),
                evolution,
            ));
        }

        let (mt, mr) = measured.expect("at least one method evaluated");
        let mut trace_series = vec![Series {
            label: "measured",
            color: "#555555",
            x: &mt,
            y: &mr,
        }];
        for (i, (name, x, y)) in traces_xy.iter().enumerate() {
            trace_series.push(Series {
                label: name,
                color: PALETTE[i % PALETTE.len()],
                x,
                y,
            });
        }
        let evo_series: Vec<Series> = evo_xy
            .iter()
            .enumerate()
            .map(|(i, (name, x, y))| Series {
                label: name,
                color: PALETTE[i % PALETTE.len()],
                x,
                y,
            })
            .collect();
        write_evaluation_svg(
            &rdir.join(format!("{id}.svg")),
            &format!("test set {id}"),
            &trace_series,
            &evo_series,
        )?;
    }

    let mut report = String::from("dataset");
    for (m, _) in &methods {
        report.push(',');
        report.push_str(m.name());
    }
    report.push('\n');
    for (id, row) in &table {
        report.push_str(id);
        for (m, _) in &methods {
            report.push(',');
            match row.get(m.name()) {
                Some(v) => report.push_str(&fmt_f64(*v)),
                None => report.push_str("nan"),
            }
        }
        report.push('\n');
    }
    let report_path = rdir.join("report.csv");
    std::fs::write(&report_path, report)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", report_path.display())))
}

/// Renders `report.csv` as a table of percentages with one decimal.
pub fn cmd_report(out: &Path) -> CliResult<String> {
    let path = report_dir(out).join("report.csv");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::data(format!("missing report {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::data("empty report.csv"))?;
    let columns: Vec<&str> = header.split(',').collect();
    let mut rendered = String::new();
    rendered.push_str(&format!("{:<10}", columns[0]));
    for c in &columns[1..] {
        rendered.push_str(&format!("{c:>10}"));
    }
    rendered.push('\n');
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        rendered.push_str(&format!("{:<10}", fields.next().unwrap_or("")));
        for f in fields {
            match f.parse::<f64>() {
                Ok(v) => rendered.push_str(&format!("{:>9.1}%", v * 100.0)),
                Err(_) => rendered.push_str(&format!("{f:>10}")),
            }
        }
        rendered.push('\n');
    }
    Ok(rendered)
}
