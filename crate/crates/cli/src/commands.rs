use std::collections::BTreeMap;
use std::time::Duration;

use fpgap_core::attack::{attack_seed, PipelineConfig, SeedReport, DELTA_TARGET};
use fpgap_core::backends::quantized::{measure_layer_error, quantize_input, quantize_network};
use fpgap_core::backends::{quantized_infer, QuantizationScheme};
use fpgap_core::errchar::{cross_backend_histogram, local_sweep, max_gradient_element, sweep_csv, sweep_median, SWEEP_RANGE};
use fpgap_core::modelgen::{accuracy, gen_dataset, load_dataset, save_dataset, RunSpec, ToyDataset};
use fpgap_core::rng;
use fpgap_core::verifier::{encode_milp, interval_bounds, Arithmetic, BnbOptions, Objective, Verdict, Verifier};
use fpgap_core::{infer, load_model, save_model, BackendId, ImageTensor, Network, PerturbationSet};
use rayon::prelude::*;
use serde::Serialize;

use crate::report::{display_path, prepare_dir, write_json, AttackSummary, BackendColumn, RunConfig, SeedFile};
use crate::{
    AttackArgs, DumpMilpArgs, ErrcharArgs, Failure, GenDataArgs, ObjectiveArg, QuantizeArgs, SelectSeedsArgs,
    SolverArgs, TrainArgs, VerifyArgs, EXIT_NOT_ROBUST, EXIT_TIMEOUT,
};

const MODEL_FILE: &str = "model.fpgap";
const DATASET_FILE: &str = "dataset.fpgap";
const CALIBRATION_INPUTS: usize = 200;

fn verifier(s: &SolverArgs) -> Result<Verifier, Failure> {
    if !(s.time_limit.is_finite() && s.time_limit > 0.0) {
        return Err(Failure::Usage(format!("--time-limit {} must be positive", s.time_limit)));
    }
    let arithmetic = if s.exact { Arithmetic::Rational } else { Arithmetic::Double };
    let options = BnbOptions {
        time_limit: Duration::from_secs_f64(s.time_limit),
        deterministic: s.deterministic,
        threads: if s.deterministic { 1 } else { rayon::current_num_threads() },
        ..BnbOptions::default()
    };
    Ok(Verifier { arithmetic, options })
}

fn solver_config(cfg: &mut RunConfig, s: &SolverArgs) {
    cfg.time_limit = Some(s.time_limit);
    cfg.verifier = Some(if s.exact { "rational" } else { "double" });
    cfg.deterministic = Some(s.deterministic);
}

fn check_eps(eps: f64) -> Result<f64, Failure> {
    if eps.is_finite() && eps >= 0.0 {
        Ok(eps)
    } else {
        Err(Failure::Usage(format!("--eps {eps} must be finite and non-negative")))
    }
}

fn image(data: &ToyDataset, index: usize) -> Result<(&ImageTensor<f32>, usize), Failure> {
    match data.images.get(index) {
        Some(x) => Ok((x, data.labels[index])),
        None => Err(Failure::Usage(format!("index {index} out of range for {} images", data.len()))),
    }
}

fn backend_accuracy(net: &Network, data: &ToyDataset, backend: BackendId) -> Result<f64, Failure> {
    let idx: Vec<usize> = data.test_indices().collect();
    let hits = idx
        .par_iter()
        .map(|&i| Ok((infer(backend, net, &data.images[i])?.argmax() == data.labels[i]) as usize))
        .collect::<Result<Vec<_>, fpgap_core::Error>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / idx.len().max(1) as f64)
}

pub fn gen_data(a: &GenDataArgs) -> Result<u8, Failure> {
    let data = gen_dataset(a.seed, a.size, a.classes)?;
    let dir = prepare_dir(&a.out_dir)?;
    save_dataset(&data, &dir.join(DATASET_FILE))?;
    println!("wrote {} images of {} classes", data.len(), data.classes);
    Ok(0)
}

#[derive(Serialize)]
struct TrainReport<'a> {
    config: &'a RunSpec,
    parameters: usize,
    train_accuracy: f64,
    test_accuracy: f64,
}

pub fn train(a: &TrainArgs) -> Result<u8, Failure> {
    let mut spec = RunSpec::load(&a.config)?;
    if let Some(seed) = a.seed {
        spec.train.seed = seed;
    }
    let (data, net) = spec.run()?;
    let dir = prepare_dir(&a.out_dir)?;
    save_model(&net, &dir.join(MODEL_FILE))?;
    save_dataset(&data, &dir.join(DATASET_FILE))?;
    let report = TrainReport {
        config: &spec,
        parameters: net.parameter_count(),
        train_accuracy: accuracy(&net, &data, data.train_indices()),
        test_accuracy: accuracy(&net, &data, data.test_indices()),
    };
    write_json(&dir.join("train.json"), &report)?;
    println!("train accuracy {:.4}, test accuracy {:.4}", report.train_accuracy, report.test_accuracy);
    Ok(0)
}

#[derive(Serialize)]
struct VerifyReport {
    config: RunConfig,
    index: usize,
    label: usize,
    target: usize,
    predicted: usize,
    objective: &'static str,
    threshold: f64,
    verdict: &'static str,
    margin: Option<f64>,
    counterexample: Option<Vec<f64>>,
    /// Reference CW loss at the counterexample rounded to single precision.
    counterexample_cw: Option<f64>,
    nodes: usize,
    lp_solves: usize,
    lp_iterations: usize,
    exact_retries: usize,
}

pub fn verify(a: &VerifyArgs) -> Result<u8, Failure> {
    let net = load_model(&a.model)?;
    let data = load_dataset(&a.dataset)?;
    let eps = check_eps(a.eps)?;
    let (x, label) = image(&data, a.index)?;
    let target = a.target.unwrap_or(label);
    let v = verifier(&a.solver)?;
    let (objective, threshold, result) = match a.objective {
        ObjectiveArg::Worst => ("worst", a.tau, v.worst(&net, &PerturbationSet::new(x.clone(), eps)?, target, a.tau)?),
        ObjectiveArg::Closest => ("closest", eps, v.closest(&net, x, eps, target)?),
    };
    let counterexample = result.counterexample().map(|c| c.data().to_vec());
    let counterexample_cw = match result.counterexample() {
        Some(c) => Some(infer(BackendId::RefF64, &net, &c.round_to_single())?.cw_loss(target)?),
        None => None,
    };
    let mut config = RunConfig {
        subcommand: "verify",
        model: Some(display_path(&a.model)),
        dataset: Some(display_path(&a.dataset)),
        eps: Some(eps),
        ..RunConfig::default()
    };
    solver_config(&mut config, &a.solver);
    let report = VerifyReport {
        config,
        index: a.index,
        label,
        target,
        predicted: infer(BackendId::RefF64, &net, x)?.argmax(),
        objective,
        threshold,
        verdict: result.label(),
        margin: result.margin().copied(),
        counterexample,
        counterexample_cw,
        nodes: result.stats.nodes,
        lp_solves: result.stats.lp_solves,
        lp_iterations: result.stats.lp_iterations,
        exact_retries: result.stats.exact_retries,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Internal(e.to_string()))?;
    println!("{text}");
    if let Some(dir) = &a.out_dir {
        write_json(&prepare_dir(dir)?.join("verify.json"), &report)?;
    }
    Ok(match result.verdict {
        Verdict::Robust { .. } => 0,
        Verdict::NotRobust { .. } => EXIT_NOT_ROBUST,
        Verdict::Timeout => EXIT_TIMEOUT,
    })
}

pub fn select_seeds(a: &SelectSeedsArgs) -> Result<u8, Failure> {
    let net = load_model(&a.model)?;
    let data = load_dataset(&a.dataset)?;
    let eps = check_eps(a.eps)?;
    let v = verifier(&a.solver)?;
    let zero = ImageTensor::zeros(net.input_shape());
    let mut bracketable = BTreeMap::new();
    let mut indices = Vec::new();
    for i in data.test_indices() {
        if indices.len() == a.count {
            break;
        }
        let (x, label) = image(&data, i)?;
        if infer(BackendId::RefF64, &net, x)?.argmax() != label {
            continue;
        }
        let dark = match bracketable.get(&label) {
            Some(&b) => b,
            None => {
                let b = v.worst(&net, &PerturbationSet::new(zero.clone(), eps)?, label, 0.0)?.is_not_robust();
                bracketable.insert(label, b);
                b
            }
        };
        if dark && v.worst(&net, &PerturbationSet::new(x.clone(), eps)?, label, 0.0)?.is_robust() {
            indices.push(i);
        }
    }
    if indices.len() < a.count {
        eprintln!("warning: found only {} of {} seeds", indices.len(), a.count);
    }
    let file = SeedFile { eps, indices };
    let text = toml::to_string(&file).map_err(|e| Failure::Internal(e.to_string()))?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(dir)?;
    }
    std::fs::write(&a.out, &text)?;
    print!("{text}");
    Ok(0)
}

#[derive(Serialize)]
struct AdversarialPair {
    backend: BackendId,
    x0: Vec<f32>,
    x_adv: Vec<f32>,
}

#[derive(Serialize)]
struct SeedEntry<'a> {
    #[serde(flatten)]
    report: &'a SeedReport,
    /// Test accuracy of the attacked model under each backend with a validated attack.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    attacked_test_accuracy: BTreeMap<BackendId, f64>,
    pairs: Vec<AdversarialPair>,
}

#[derive(Serialize)]
struct AttackReport<'a> {
    config: RunConfig,
    seeds: Vec<SeedEntry<'a>>,
    summary: AttackSummary,
}

fn validated(r: &SeedReport, b: BackendId) -> bool {
    r.attacks.iter().any(|a| a.backend == b && a.success && a.validation.as_ref().is_some_and(|v| v.all_pass()))
}

pub fn attack(a: &AttackArgs) -> Result<u8, Failure> {
    let net = load_model(&a.model)?;
    let data = load_dataset(&a.dataset)?;
    let file = a.seeds.as_deref().map(SeedFile::load).transpose()?;
    let indices = if a.index.is_empty() { file.as_ref().map(|f| f.indices.clone()).unwrap_or_default() } else { a.index.clone() };
    if indices.is_empty() {
        return Err(Failure::Usage("no seed images: pass --seeds or --index".into()));
    }
    let eps = check_eps(a.eps.or(file.as_ref().map(|f| f.eps)).ok_or_else(|| Failure::Usage("--eps is required without a seed file".into()))?)?;
    if a.iters == 0 {
        return Err(Failure::Usage("--iters must be at least 1".into()));
    }
    let backends = if a.backend.is_empty() { BackendId::SINGLE.to_vec() } else { a.backend.clone() };
    let v = verifier(&a.solver)?;
    let cfg = PipelineConfig {
        eps,
        backends: backends.clone(),
        u: a.u,
        iterations: a.iters,
        attack_seed: a.seed,
        bias_shift: a.bias_shift,
        delta_target: DELTA_TARGET,
    };
    for &i in &indices {
        image(&data, i)?;
    }
    let reports = indices
        .par_iter()
        .map(|&i| attack_seed(&v, &net, i, &data.images[i], data.labels[i], &cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let mut entries = Vec::with_capacity(reports.len());
    for r in &reports {
        let mut acc = BTreeMap::new();
        let mut pairs = Vec::new();
        for att in &r.attacks {
            if !validated(r, att.backend) {
                continue;
            }
            if let (Some(shifted), true) = (&r.attacked_network, a.bias_shift) {
                acc.insert(att.backend, backend_accuracy(shifted, &data, att.backend)?);
            }
            if let (Some(x0), Some(x_adv)) = (&r.x0, &att.x_adv) {
                pairs.push(AdversarialPair { backend: att.backend, x0: x0.data().to_vec(), x_adv: x_adv.data().to_vec() });
            }
        }
        entries.push(SeedEntry { report: r, attacked_test_accuracy: acc, pairs });
    }
    let columns = backends
        .iter()
        .map(|&b| BackendColumn {
            backend: b,
            attacks: reports.iter().filter(|r| validated(r, b)).count(),
            min_test_acc: entries
                .iter()
                .filter_map(|e| e.attacked_test_accuracy.get(&b).copied())
                .min_by(f64::total_cmp),
        })
        .collect();
    let summary = AttackSummary {
        tested: reports.len(),
        quasi_adversarial: reports.iter().filter(|r| r.quasi_adversarial()).count(),
        columns,
    };
    let table = summary.table(a.bias_shift);
    let found = summary.columns.iter().any(|c| c.attacks > 0);
    let mut config = RunConfig {
        subcommand: "attack",
        model: Some(display_path(&a.model)),
        dataset: Some(display_path(&a.dataset)),
        eps: Some(eps),
        backends,
        seed: Some(a.seed),
        seed_indices: indices,
        u: Some(a.u),
        iters: Some(a.iters),
        bias_shift: Some(a.bias_shift),
        ..RunConfig::default()
    };
    solver_config(&mut config, &a.solver);
    let dir = prepare_dir(&a.out_dir)?;
    write_json(&dir.join("attack.json"), &AttackReport { config, seeds: entries, summary })?;
    std::fs::write(dir.join("summary.txt"), &table)?;
    print!("{table}");
    Ok(if found { EXIT_NOT_ROBUST } else { 0 })
}

#[derive(Serialize)]
struct HistogramSummary {
    backend: BackendId,
    median: f64,
    max: f64,
    at_least_1e_9: u64,
}

#[derive(Serialize)]
struct ErrcharReport {
    config: RunConfig,
    sweep_index: usize,
    element: usize,
    sweep_steps: usize,
    sweep_range: f64,
    sweep_medians: Vec<(BackendId, f64)>,
    reference: BackendId,
    compared: u64,
    histogram: Vec<HistogramSummary>,
}

pub fn errchar(a: &ErrcharArgs) -> Result<u8, Failure> {
    let net = load_model(&a.model)?;
    let data = load_dataset(&a.dataset)?;
    let index = a.index.unwrap_or(data.test_indices().start.min(data.len().saturating_sub(1)));
    let (x, _) = image(&data, index)?;
    let backends = if a.backend.is_empty() {
        std::iter::once(BackendId::RefF64).chain(BackendId::SINGLE).collect()
    } else {
        a.backend.clone()
    };
    let element = max_gradient_element(&net, x)?;
    let sweep = local_sweep(&net, x, element, SWEEP_RANGE, a.steps, &backends)?;
    let hist = cross_backend_histogram(&data.images, &net, &backends, a.reference)?;
    let dir = prepare_dir(&a.out_dir)?;
    std::fs::write(dir.join("sweep.csv"), sweep_csv(&sweep))?;
    std::fs::write(dir.join("histogram.csv"), hist.to_csv())?;
    let report = ErrcharReport {
        config: RunConfig {
            subcommand: "errchar",
            model: Some(display_path(&a.model)),
            dataset: Some(display_path(&a.dataset)),
            backends: backends.clone(),
            ..RunConfig::default()
        },
        sweep_index: index,
        element,
        sweep_steps: a.steps,
        sweep_range: SWEEP_RANGE,
        sweep_medians: backends.iter().filter_map(|&b| sweep_median(&sweep, b).map(|m| (b, m))).collect(),
        reference: a.reference,
        compared: hist.compared,
        histogram: hist
            .backends
            .iter()
            .map(|h| HistogramSummary {
                backend: h.backend,
                median: h.median,
                max: h.max,
                at_least_1e_9: hist.count_at_least(h.backend, 1e-9),
            })
            .collect(),
    };
    write_json(&dir.join("errchar.json"), &report)?;
    for h in &report.histogram {
        println!("{:<13} median {:.3e}  max {:.3e}", h.backend.name(), h.median, h.max);
    }
    Ok(0)
}

#[derive(Serialize)]
struct QuantizeReport {
    config: RunConfig,
    s0: f64,
    s1: f64,
    measured_error: Option<f64>,
    error_bound: f64,
    inputs: usize,
    aligned: bool,
    mismatched_inputs: usize,
    control_aligned: bool,
    control_mismatched_inputs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    quantized_test_accuracy: Option<f64>,
}

fn random_images(shape: fpgap_core::Shape, n: usize, seed: u64, stream: u64) -> Vec<ImageTensor<f32>> {
    let mut r = rng::stream(seed, stream);
    (0..n)
        .map(|_| {
            let v = (0..shape.len()).map(|_| rng::unit_f32(&mut r)).collect();
            ImageTensor::new(shape, v).expect("shape matches")
        })
        .collect()
}

/// Number of inputs whose logits differ in any bit between backends.
fn count_mismatches(
    inputs: &[ImageTensor<f32>],
    logits: impl Fn(BackendId, &ImageTensor<f32>) -> fpgap_core::Result<Vec<f64>> + Sync,
) -> Result<usize, Failure> {
    let flags = inputs
        .par_iter()
        .map(|x| {
            let all = BackendId::ALL.iter().map(|&b| logits(b, x)).collect::<fpgap_core::Result<Vec<_>>>()?;
            let bits = |v: &Vec<f64>| v.iter().map(|s| s.to_bits()).collect::<Vec<_>>();
            Ok(all.iter().any(|v| bits(v) != bits(&all[0])) as usize)
        })
        .collect::<fpgap_core::Result<Vec<_>>>()?;
    Ok(flags.iter().sum())
}

pub fn quantize_demo(a: &QuantizeArgs) -> Result<u8, Failure> {
    let net = load_model(&a.model)?;
    let provisional = QuantizationScheme::new(a.s0, a.s1, a.s0 * a.s1 / 4.0)?;
    let qnet = quantize_network(&net, &provisional)?;
    let shape = net.input_shape();
    let (measured, error_bound) = match a.error_bound {
        Some(e) => (None, e),
        None => {
            if !(a.safety.is_finite() && a.safety >= 1.0) {
                return Err(Failure::Usage(format!("--safety {} must be at least 1", a.safety)));
            }
            let calib: Vec<_> =
                random_images(shape, CALIBRATION_INPUTS, a.seed, 1).iter().map(|x| quantize_input(x, a.s0)).collect();
            let m = measure_layer_error(&qnet, &calib, (a.s0, a.s1), &BackendId::ALL)?;
            // keep the bound positive when every backend happens to be exact
            (Some(m), (m * a.safety).max(f64::MIN_POSITIVE))
        }
    };
    let scheme = QuantizationScheme::new(a.s0, a.s1, error_bound)
        .map_err(|e| Failure::Usage(format!("scheme refused: {e}")))?;
    let raw = random_images(shape, a.inputs, a.seed, 2);
    let lattice: Vec<_> = raw.iter().map(|x| quantize_input(x, a.s0)).collect();
    let mismatched = count_mismatches(&lattice, |b, x| Ok(quantized_infer(&qnet, x, &scheme, b)?.to_f64()))?;
    let control = count_mismatches(&raw, |b, x| Ok(infer(b, &net, x)?.to_f64()))?;
    let quantized_test_accuracy = match &a.dataset {
        Some(p) => {
            let data = load_dataset(p)?;
            let idx: Vec<usize> = data.test_indices().collect();
            let mut hits = 0usize;
            for &i in &idx {
                let x = quantize_input(&data.images[i], a.s0);
                hits += (quantized_infer(&qnet, &x, &scheme, BackendId::RefF64)?.argmax() == data.labels[i]) as usize;
            }
            Some(hits as f64 / idx.len().max(1) as f64)
        }
        None => None,
    };
    let report = QuantizeReport {
        config: RunConfig {
            subcommand: "quantize-demo",
            model: Some(display_path(&a.model)),
            dataset: a.dataset.as_deref().map(display_path),
            backends: BackendId::ALL.to_vec(),
            seed: Some(a.seed),
            ..RunConfig::default()
        },
        s0: a.s0,
        s1: a.s1,
        measured_error: measured,
        error_bound,
        inputs: a.inputs,
        aligned: mismatched == 0,
        mismatched_inputs: mismatched,
        control_aligned: control == 0,
        control_mismatched_inputs: control,
        quantized_test_accuracy,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Internal(e.to_string()))?;
    println!("{text}");
    if let Some(dir) = &a.out_dir {
        write_json(&prepare_dir(dir)?.join("quantize.json"), &report)?;
    }
    Ok(0)
}

pub fn dump_milp(a: &DumpMilpArgs) -> Result<u8, Failure> {
    let net = load_model(&a.model)?;
    let data = load_dataset(&a.dataset)?;
    let (x, label) = image(&data, a.index)?;
    let region = PerturbationSet::new(x.clone(), check_eps(a.eps)?)?;
    let bounds = interval_bounds::<f64>(&net, &region);
    let model = encode_milp(&net, &region, label, Objective::Worst { tau: a.tau }, &bounds)?;
    print!("{}", model.to_lp_string());
    Ok(0)
}
