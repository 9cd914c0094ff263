use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use neurolens_core::evaluation::{correlate_by_method, CorrelationRow};
use neurolens_core::*;
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::report::{write_json, RunManifest};
use crate::UsageError;

pub fn synth(args: &SynthArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut config: SynthConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let data = generate(&config)?;
    write_dataset(&data, &args.out)?;
    log::info!(
        "wrote {} samples x {} neurons to {} (seed {})",
        data.n_samples(),
        data.n_neurons(),
        args.out.display(),
        config.seed
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct IngestSummary<'a> {
    n_samples: usize,
    n_neurons: usize,
    n_concepts: usize,
    samples_per_concept: Vec<usize>,
    manifest: &'a Manifest,
}

pub fn ingest_check(args: &IngestCheckArgs, deterministic: bool) -> Result<()> {
    let data = load_dataset(&args.data)?;
    let summary = IngestSummary {
        n_samples: data.n_samples(),
        n_neurons: data.n_neurons(),
        n_concepts: data.n_concepts(),
        samples_per_concept: partition_by_concept(&data).iter().map(Vec::len).collect(),
        manifest: data.manifest(),
    };
    let run = RunManifest::new("ingest-check", deterministic).input("data", &args.data);
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(out) = &args.out {
        write_json(out, &run, &summary)?;
    }
    Ok(())
}

pub fn fit_densities(args: &FitArgs) -> Result<()> {
    let data = load_dataset(&args.data)?;
    let bank = fit_density_bank(&data, args.bins)?;
    bank.write_cache(&args.out)?;
    log::info!("wrote {} x {} densities to {}", bank.n_neurons(), bank.n_concepts(), args.out.display());
    Ok(())
}

/// Reads a density cache for `data`, or fits one when no cache is given.
fn load_or_fit_bank(path: Option<&Path>, data: &ActivationDataset, bins: usize) -> Result<DensityBank> {
    match path {
        Some(p) => Ok(DensityBank::read_cache(p, data)?),
        None => Ok(fit_density_bank(data, bins)?),
    }
}

pub fn separability(args: &SeparabilityArgs, deterministic: bool) -> Result<()> {
    let data = load_dataset(&args.data)?;
    let bank = load_or_fit_bank(args.densities.as_deref(), &data, args.bins)?;
    let report = layer_separability(&bank)?;
    let mut run = RunManifest::new("separability", deterministic)
        .input("data", &args.data)
        .param("B", bank.n_bins());
    if let Some(d) = &args.densities {
        run = run.input("densities", d);
    }
    write_json(&args.out, &run, &report)?;
    println!("layer_score {:.6} ({} of {} neurons scored)", report.layer_score, report.n_scored(), report.per_neuron.len());
    Ok(())
}

pub fn overlap(args: &OverlapArgs, deterministic: bool) -> Result<()> {
    let data = load_dataset(&args.data)?;
    let mut run = RunManifest::new("overlap", deterministic).input("data", &args.data);
    let report = match args.mode {
        OverlapModeArg::Topk => {
            run = run.param("K", args.top_k);
            topk_salient_overlap(&data, args.top_k)?
        }
        OverlapModeArg::Active => active_neuron_overlap(&data)?,
    };
    write_json(&args.out, &run, &report)?;
    println!("all_k_pct {:.3}", report.all_k_pct);
    Ok(())
}

fn plan_run(run: RunManifest, plan: &InterventionPlan, bins: usize) -> RunManifest {
    run.param("method", plan.method)
        .param("target", plan.target)
        .param("p", plan.params.p)
        .param("tau", plan.params.tau)
        .param("window_mult", plan.params.window_mult)
        .param("B", bins)
}

/// Builds a plan from flags, returning the bank APP needs.
fn plan_from_flags(
    flags: &PlanArgs,
    fit: &ActivationDataset,
    densities: Option<&Path>,
    bins: usize,
) -> Result<(InterventionPlan, Option<DensityBank>)> {
    let method = flags
        .method
        .ok_or_else(|| UsageError("--method is required".into()))?;
    let target = flags
        .target
        .ok_or_else(|| UsageError("--target is required".into()))?;
    if fit.n_concepts() < 2 {
        return Err(UsageError(format!(
            "concept erasure needs at least 2 concepts, dataset has {}",
            fit.n_concepts()
        ))
        .into());
    }
    let bank = if method == Method::App || densities.is_some() {
        Some(load_or_fit_bank(densities, fit, bins)?)
    } else {
        None
    };
    let plan = build_plan(fit, bank.as_ref(), method, target, flags.p, flags.tau)?;
    Ok((plan, bank))
}

pub fn build_plan_cmd(args: &BuildPlanArgs, deterministic: bool) -> Result<()> {
    let data = load_dataset(&args.data)?;
    let (mut plan, bank) = plan_from_flags(&args.plan, &data, args.densities.as_deref(), args.bins)?;
    let mut run = RunManifest::new("build-plan", deterministic).input("data", &args.data);
    if plan.method == Method::App {
        let cache = match &args.densities {
            Some(d) => d.clone(),
            None => {
                let cache = sibling(&args.out, "dens");
                bank.as_ref()
                    .expect("APP plans are built with a bank")
                    .write_cache(&cache)?;
                cache
            }
        };
        run = run.input("densities", &cache);
        plan.densities = Some(cache.display().to_string());
    }
    let n_bins = bank.as_ref().map_or(args.bins, DensityBank::n_bins);
    write_json(&args.out, &plan_run(run, &plan, n_bins), &plan)?;
    println!("{} plan for concept {} touches {} neurons", plan.method, plan.target, plan.neurons.len());
    Ok(())
}

/// `path` with `ext` appended to its file name.
fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(ext);
    path.with_file_name(name)
}

fn read_plan(path: &Path) -> Result<InterventionPlan> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let plan: InterventionPlan =
        serde_json::from_str(&text).with_context(|| format!("parsing plan {}", path.display()))?;
    plan.validate()?;
    Ok(plan)
}

/// The bank an APP plan was built from: an explicit cache, the cache the
/// plan recorded (as written, or next to the plan file), or a fresh fit.
fn bank_for_plan(
    plan: &InterventionPlan,
    plan_path: &Path,
    explicit: Option<&Path>,
    fit: &ActivationDataset,
    bins: usize,
) -> Result<Option<DensityBank>> {
    if plan.method != Method::App {
        return Ok(None);
    }
    if let Some(p) = explicit {
        return Ok(Some(DensityBank::read_cache(p, fit)?));
    }
    if let Some(recorded) = &plan.densities {
        let recorded = PathBuf::from(recorded);
        let beside = plan_path.parent().map(|dir| dir.join(&recorded));
        let found = std::iter::once(recorded.clone())
            .chain(beside)
            .find(|p| p.exists());
        if let Some(p) = found {
            return Ok(Some(DensityBank::read_cache(&p, fit)?));
        }
        log::warn!("density cache {} not found; refitting", recorded.display());
    }
    Ok(Some(fit_density_bank(fit, bins)?))
}

pub fn intervene(args: &InterveneArgs) -> Result<()> {
    let data = load_dataset(&args.data)?;
    let fit = match &args.fit {
        Some(p) => load_dataset(p)?,
        None => data.clone(),
    };
    let (plan, bank) = match &args.plan_file {
        Some(path) => {
            let plan = read_plan(path)?;
            let bank = bank_for_plan(&plan, path, args.densities.as_deref(), &fit, args.bins)?;
            (plan, bank)
        }
        None => plan_from_flags(&args.plan, &fit, args.densities.as_deref(), args.bins)?,
    };
    if plan.n_neurons != data.n_neurons() {
        return Err(UsageError(format!(
            "plan covers {} neurons, dataset has {}",
            plan.n_neurons,
            data.n_neurons()
        ))
        .into());
    }
    let out = plan.apply_dataset(&data, bank.as_ref())?;
    write_dataset(&out, &args.out)?;
    log::info!("{} applied to {} samples, wrote {}", plan.method, out.n_samples(), args.out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CorrelationCsvRow {
    score: f64,
    delta_acc: f64,
    method: String,
    run_id: String,
}

pub fn evaluate(args: &EvaluateArgs, deterministic: bool) -> Result<()> {
    let fit = load_dataset(&args.fit)?;
    let eval = load_dataset(&args.eval)?;
    let plan = read_plan(&args.plan_file)?;
    let bank = bank_for_plan(&plan, &args.plan_file, args.densities.as_deref(), &fit, args.bins)?;

    let model = train_readout(&fit)?;
    let before = evaluate_readout(&model, &eval, None)?;
    let after = evaluate_readout(&model, &eval, Some((&plan, bank.as_ref())))?;
    let distortion = offtarget_distortion(&eval, &plan, bank.as_ref())?;
    let dppl = match (args.ppl_base, args.ppl_post) {
        (Some(base), Some(post)) => Some(dppl(base, post)?),
        _ => None,
    };
    let report = erasure_metrics(&before, &after, plan.target)?
        .with_distortion(distortion)
        .with_dppl(dppl);

    let run = RunManifest::new("evaluate", deterministic)
        .input("fit", &args.fit)
        .input("eval", &args.eval)
        .input("plan", &args.plan_file);
    let run = plan_run(run, &plan, bank.as_ref().map_or(args.bins, DensityBank::n_bins));
    write_json(&args.out, &run, &report)?;
    println!(
        "{} target {}: delta_acc {:.4} delta_conf {:.4} distortion {:.4}",
        plan.method, plan.target, report.delta_acc, report.delta_conf, report.distortion
    );

    if let Some(path) = &args.csv {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["concept", "metric", "before", "after"])?;
        let names = &eval.manifest().concept_names;
        for c in &report.per_concept {
            let name = &names[c.concept];
            w.write_record([name, "accuracy", &c.acc_before.to_string(), &c.acc_after.to_string()])?;
            w.write_record([name, "confidence", &c.conf_before.to_string(), &c.conf_after.to_string()])?;
        }
        w.flush()?;
    }

    if let Some(path) = &args.append_correlation {
        let score = match args.score {
            Some(s) => s,
            None => {
                let bank = match bank {
                    Some(b) => b,
                    None => fit_density_bank(&fit, args.bins)?,
                };
                layer_separability(&bank)?.layer_score
            }
        };
        let needs_header = fs::metadata(path).map_or(true, |m| m.len() == 0);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        let mut w = csv::WriterBuilder::new().has_headers(needs_header).from_writer(file);
        w.serialize(CorrelationCsvRow {
            score,
            delta_acc: report.delta_acc,
            method: plan.method.to_string(),
            run_id: args.run_id.clone(),
        })?;
        w.flush()?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct CorrelationReport {
    methods: Vec<neurolens_core::evaluation::MethodCorrelation>,
}

pub fn correlate(args: &CorrelateArgs, deterministic: bool) -> Result<()> {
    let mut reader = csv::Reader::from_path(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let rows: Vec<CorrelationRow> = reader
        .deserialize::<CorrelationCsvRow>()
        .map(|r| {
            r.map(|r| CorrelationRow {
                separability_score: r.score,
                delta_acc: r.delta_acc,
                method: r.method,
                run_id: r.run_id,
            })
        })
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing {}", args.input.display()))?;
    let report = CorrelationReport {
        methods: correlate_by_method(&rows)?,
    };
    let run = RunManifest::new("correlate", deterministic).input("input", &args.input);
    write_json(&args.out, &run, &report)?;
    for m in &report.methods {
        println!("{}: r {:.4} p {:.3e} n {}", m.method, m.r, m.p, m.n);
    }
    Ok(())
}
