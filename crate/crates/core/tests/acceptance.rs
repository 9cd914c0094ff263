//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use neurolens_core::evaluation::{correlate_by_method, CorrelationRow};
use neurolens_core::intervention::{app_damp, posterior, Window};
use neurolens_core::rng::SplitMix64;
use neurolens_core::separability::jsd;
use neurolens_core::*;

type Outcome = std::result::Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> std::result::Result<(), String> {
    check(elapsed < Duration::from_secs(limit_s), || {
        format!("took {elapsed:.2?}, limit {limit_s} s")
    })
}

fn uniform(rng: &mut SplitMix64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.next_f64()
}

fn below(rng: &mut SplitMix64, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

/// JS divergence in bits of unit Gaussians centred at `means`, by
/// trapezoid quadrature of the mixture entropy.
fn gaussian_jsd_bits(means: &[f64]) -> f64 {
    use std::f64::consts::{E, PI};
    let k = means.len() as f64;
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min) - 12.0;
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 12.0;
    let steps = 200_000;
    let dx = (hi - lo) / steps as f64;
    let mut h_mix = 0.0;
    for t in 0..=steps {
        let x = lo + t as f64 * dx;
        let p = means
            .iter()
            .map(|mu| (-(x - mu).powi(2) / 2.0).exp() / (2.0 * PI).sqrt())
            .sum::<f64>()
            / k;
        let w = if t == 0 || t == steps { 0.5 } else { 1.0 };
        if p > 0.0 {
            h_mix -= w * p * p.log2() * dx;
        }
    }
    let h_each = 0.5 * (2.0 * PI * E).log2();
    (h_mix - h_each).max(0.0)
}

fn density_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(1);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let n = 2 + below(&mut rng, 999);
        let n_modes = 1 + below(&mut rng, 3);
        let modes: Vec<(f64, f64)> = (0..n_modes)
            .map(|_| (uniform(&mut rng, -5.0, 5.0), uniform(&mut rng, 0.2, 3.0)))
            .collect();
        let values: Vec<f64> = (0..n)
            .map(|_| {
                let (mu, sd) = modes[below(&mut rng, n_modes)];
                mu + sd * rng.next_normal()
            })
            .collect();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let d = fit_histogram_density(&values, lo, hi, 2048).map_err(|e| e.to_string())?;
        let h = d.bandwidth();
        let x = uniform(&mut rng, lo - 3.0 * h, hi + 3.0 * h);
        let peak = values
            .iter()
            .map(|&v| kde_exact(&values, h, v))
            .fold(0.0, f64::max);
        let err = (d.evaluate(x) - kde_exact(&values, h, x)).abs() / peak;
        worst = worst.max(err);
        check(err <= 1e-3, || {
            format!("case {case}: n {n}, x {x}, error {err:.3e} x peak")
        })?;
    }
    let elapsed = start.elapsed();
    within(elapsed, 10)?;
    Ok(format!("50 cases, worst error {worst:.2e} x peak, {elapsed:.2?}"))
}

fn jsd_extremes() -> Outcome {
    let mut rng = SplitMix64::new(2);
    let bins = 2048;
    let mut same: Vec<f64> = (0..bins).map(|_| rng.next_f64()).collect();
    let total: f64 = same.iter().sum();
    same.iter_mut().for_each(|p| *p /= total);
    for k in [2usize, 4, 14] {
        let identical = vec![same.clone(); k];
        let score = js_distance_of(&identical)?;
        check(score.abs() <= 1e-9, || format!("identical k={k}: {score}"))?;
        let raw = jsd(&identical).map_err(|e| e.to_string())?;
        check(raw.abs() <= 1e-9, || format!("identical k={k}: jsd {raw}"))?;
    }
    let mut report = Vec::new();
    for k in [2usize, 4, 14] {
        // concept i owns a private block of bins
        let width = bins / k;
        let disjoint: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let mut p = vec![0.0; bins];
                let block = &mut p[i * width..(i + 1) * width];
                let w: Vec<f64> = (0..width).map(|_| 0.1 + rng.next_f64()).collect();
                let s: f64 = w.iter().sum();
                block.iter_mut().zip(&w).for_each(|(b, v)| *b = v / s);
                p
            })
            .collect();
        let score = js_distance_of(&disjoint)?;
        check((score - 1.0).abs() <= 1e-6, || format!("disjoint k={k}: {score}"))?;
        report.push(format!("k={k} {score:.9}"));
    }
    Ok(format!("identical 0, disjoint {}", report.join(", ")))
}

fn js_distance_of(dists: &[Vec<f64>]) -> std::result::Result<f64, String> {
    let wrapped: Vec<Option<&Vec<f64>>> = dists.iter().map(Some).collect();
    separability::js_distance(&wrapped)
        .map_err(|e| e.to_string())?
        .ok_or_else(|| "no concept present".to_string())
}

fn sweep_base() -> SynthConfig {
    let mut base = SynthConfig::uniform(2000, 4, 2, 0.0, 1.0, 1.0, Representation::Base, 0);
    base.stds = vec![vec![1.0; 2], vec![0.5; 2], vec![2.0; 2], vec![3.0; 2]];
    base
}

fn separability_monotonicity() -> Outcome {
    let start = Instant::now();
    let gaps = [0.0, 1.0, 2.0, 4.0, 8.0];
    let sweep = separability_sweep(&sweep_base(), &gaps, 7).map_err(|e| e.to_string())?;
    let mut scores = Vec::new();
    for (gap, data) in &sweep {
        let bank = fit_density_bank(data, 2048).map_err(|e| e.to_string())?;
        let s = layer_separability(&bank).map_err(|e| e.to_string())?.layer_score;
        // every neuron's two concepts differ by `gap` of their shared std
        let oracle = gaussian_jsd_bits(&[0.0, *gap]).sqrt();
        check((s - oracle).abs() <= 0.05, || {
            format!("gap {gap}: S {s:.4}, oracle {oracle:.4}")
        })?;
        scores.push(s);
    }
    check(scores.windows(2).all(|w| w[0] < w[1]), || {
        format!("not strictly increasing: {scores:?}")
    })?;
    let elapsed = start.elapsed();
    within(elapsed, 60)?;
    let shown: Vec<String> = scores.iter().map(|s| format!("{s:.3}")).collect();
    Ok(format!("S = [{}], {elapsed:.2?}", shown.join(", ")))
}

fn app_algebra() -> Outcome {
    let window = Window { mean: 2.0, std: 1.0 };
    let outside = 7.25f32;
    check(app_damp(outside, &window, 2.5, 0.9).to_bits() == outside.to_bits(), || {
        "outside the window the value changed".into()
    })?;
    check(app_damp(2.5, &window, 2.5, 1.0).to_bits() == 0f32.to_bits(), || {
        "pi = 1 did not give 0".into()
    })?;
    check(app_damp(2.0, &window, 2.5, 0.8).to_bits() == 0.4f32.to_bits(), || {
        format!("x = 2, pi = 0.8 gave {}", app_damp(2.0, &window, 2.5, 0.8))
    })?;

    // the zero and unchanged cases again, through a built APP plan
    let labels = vec![0, 0, 0, 0, 1, 1, 1, 1];
    let values = vec![1.0, 1.5, 2.0, 2.5, 100.0, 100.5, 101.0, 101.5];
    let data = ActivationDataset::new(
        1,
        2,
        labels,
        values,
        Manifest::synthetic(Representation::Base, 2),
    )
    .map_err(|e| e.to_string())?;
    let bank = fit_density_bank(&data, 2048).map_err(|e| e.to_string())?;
    let plan = build_plan(&data, Some(&bank), Method::App, 0, None, 0.1).map_err(|e| e.to_string())?;
    let inside = plan.apply(&[1.75], Some(&bank)).map_err(|e| e.to_string())?;
    check(inside[0].to_bits() == 0f32.to_bits(), || {
        format!("uniquely-target value became {}", inside[0])
    })?;
    let far = plan.apply(&[100.25], Some(&bank)).map_err(|e| e.to_string())?;
    check(far[0].to_bits() == 100.25f32.to_bits(), || {
        format!("value outside the window became {}", far[0])
    })?;

    // posterior normalization over random banks and points
    let mut rng = SplitMix64::new(4);
    let mut worst: f64 = 0.0;
    let mut evaluations = 0;
    while evaluations < 10_000 {
        let k = 2 + below(&mut rng, 5);
        let d = 1 + below(&mut rng, 4);
        let mut cfg = SynthConfig::uniform(60, d, k, 0.0, 1.0, 0.8, Representation::Sae, rng.next_u64());
        for row in cfg.means.iter_mut() {
            row.iter_mut().for_each(|m| *m = uniform(&mut rng, -1.0, 4.0));
        }
        let data = generate(&cfg).map_err(|e| e.to_string())?;
        let bank = fit_density_bank(&data, 256).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let j = below(&mut rng, d);
            let present: Vec<usize> = (0..k).filter(|&i| bank.density(j, i).is_some()).collect();
            if present.is_empty() {
                continue;
            }
            let x = uniform(&mut rng, -3.0, 9.0);
            let mut total = 0.0;
            for &i in &present {
                total += posterior(&bank, j, i, x).map_err(|e| e.to_string())?;
            }
            worst = worst.max((total - 1.0).abs());
            evaluations += 1;
        }
    }
    check(worst <= 1e-9, || format!("sum of posteriors off by {worst:.3e}"))?;
    Ok(format!("3 cases bit-exact, {evaluations} posterior sums within {worst:.1e}"))
}

/// Six neurons, four concepts. The target's three salient neurons are each
/// shared with one other concept at a lower level; the rest are weak.
fn mixed_layout(scale: f64, n: usize, seed: u64) -> SynthConfig {
    let means = [
        [4.0, 2.0, 0.0, 0.0],
        [4.0, 0.0, 2.0, 0.0],
        [4.0, 0.0, 0.0, 2.0],
        [0.0, 1.0, 1.0, 1.0],
        [1.0, 1.0, 0.0, 0.0],
        [1.0, 1.0, 1.0, 1.0],
    ];
    let mut cfg = SynthConfig::uniform(n, 6, 4, 0.0, 1.0, 1.0, Representation::Base, seed);
    cfg.means = means
        .iter()
        .map(|row| row.iter().map(|m| m * scale).collect())
        .collect();
    cfg
}

struct MethodRun {
    delta_acc: f64,
    distortion: f64,
}

/// Fits on one draw of `cfg`, scores on an independent draw.
fn run_method(cfg: &SynthConfig, method: Method, p: f64) -> std::result::Result<MethodRun, String> {
    let fit = generate(cfg).map_err(|e| e.to_string())?;
    let mut eval_cfg = cfg.clone();
    eval_cfg.seed = cfg.seed + 1;
    let eval = generate(&eval_cfg).map_err(|e| e.to_string())?;
    let bank = fit_density_bank(&fit, 2048).map_err(|e| e.to_string())?;
    let model = train_readout(&fit).map_err(|e| e.to_string())?;
    let before = evaluate_readout(&model, &eval, None).map_err(|e| e.to_string())?;
    let plan = build_plan(&fit, Some(&bank), method, 0, Some(p), DEFAULT_TAU)
        .map_err(|e| e.to_string())?;
    let after = evaluate_readout(&model, &eval, Some((&plan, Some(&bank)))).map_err(|e| e.to_string())?;
    let report = erasure_metrics(&before, &after, 0).map_err(|e| e.to_string())?;
    let distortion = offtarget_distortion(&eval, &plan, Some(&bank)).map_err(|e| e.to_string())?;
    Ok(MethodRun {
        delta_acc: report.delta_acc,
        distortion,
    })
}

fn method_ordering() -> Outcome {
    let start = Instant::now();
    let cfg = mixed_layout(1.0, 500, 11);
    let app = run_method(&cfg, Method::App, 0.3)?;
    let range = run_method(&cfg, Method::Range, 0.3)?;
    let full = run_method(&cfg, Method::Full, 0.3)?;
    let summary = format!(
        "distortion app {:.3} range {:.3} full {:.3}; delta_acc app {:.3} full {:.3}",
        app.distortion, range.distortion, full.distortion, app.delta_acc, full.delta_acc
    );
    check(app.distortion < range.distortion && range.distortion < full.distortion, || {
        summary.clone()
    })?;
    check(app.delta_acc >= full.delta_acc, || summary.clone())?;
    let elapsed = start.elapsed();
    within(elapsed, 30)?;
    Ok(format!("{summary}, {elapsed:.2?}"))
}

fn correlation_analog() -> Outcome {
    let start = Instant::now();
    let mut rows = Vec::new();
    for i in 0..20u64 {
        let cfg = mixed_layout(0.1 * (i + 1) as f64, 300, 100 + 2 * i);
        let fit = generate(&cfg).map_err(|e| e.to_string())?;
        let bank = fit_density_bank(&fit, 2048).map_err(|e| e.to_string())?;
        let s = layer_separability(&bank).map_err(|e| e.to_string())?.layer_score;
        for method in [Method::App, Method::Full] {
            rows.push(CorrelationRow {
                separability_score: s,
                delta_acc: run_method(&cfg, method, 0.3)?.delta_acc,
                method: method.to_string(),
                run_id: format!("config-{i}"),
            });
        }
    }
    let results = correlate_by_method(&rows).map_err(|e| e.to_string())?;
    let get = |m: Method| {
        results
            .iter()
            .find(|r| r.method == m.as_str())
            .cloned()
            .ok_or_else(|| format!("no rows for {m}"))
    };
    let app = get(Method::App)?;
    let full = get(Method::Full)?;
    let summary = format!(
        "app r {:.3} (p {:.1e}), full r {:.3} (p {:.2})",
        app.r, app.p, full.r, full.p
    );
    check(app.r > 0.6 && app.p < 0.01 && app.r > full.r, || summary.clone())?;
    let elapsed = start.elapsed();
    within(elapsed, 300)?;
    Ok(format!("{summary}, {elapsed:.2?}"))
}

fn metric_identities() -> Outcome {
    let exemplar = ErasureReport::from_drops(0, 0.276, 0.051, 0.3, 0.1);
    check(exemplar.delta_acc == 0.276 - 0.051, || "exemplar delta is not the difference".into())?;
    check((exemplar.delta_acc - 0.225).abs() < 1e-12, || {
        format!("exemplar delta {}", exemplar.delta_acc)
    })?;

    let mut rng = SplitMix64::new(7);
    for case in 0..100 {
        let k = 2 + below(&mut rng, 13);
        let target = below(&mut rng, k);
        let draw = |rng: &mut SplitMix64| -> Vec<f64> { (0..k).map(|_| rng.next_f64()).collect() };
        let before = ConceptResults {
            accuracy: draw(&mut rng),
            confidence: draw(&mut rng),
            counts: vec![10; k],
        };
        let after = ConceptResults {
            accuracy: draw(&mut rng),
            confidence: draw(&mut rng),
            counts: vec![10; k],
        };
        let r = erasure_metrics(&before, &after, target).map_err(|e| e.to_string())?;
        let d_acc = before.accuracy[target] - after.accuracy[target];
        let d_conf = before.confidence[target] - after.confidence[target];
        let aux: Vec<usize> = (0..k).filter(|&c| c != target).collect();
        let d_acc_aux = aux
            .iter()
            .map(|&c| before.accuracy[c] - after.accuracy[c])
            .sum::<f64>()
            / aux.len() as f64;
        let d_conf_aux = aux
            .iter()
            .map(|&c| before.confidence[c] - after.confidence[c])
            .sum::<f64>()
            / aux.len() as f64;
        check(
            r.d_acc == d_acc
                && r.d_conf == d_conf
                && r.d_acc_aux == d_acc_aux
                && r.d_conf_aux == d_conf_aux
                && r.delta_acc == r.d_acc - r.d_acc_aux
                && r.delta_conf == r.d_conf - r.d_conf_aux,
            || format!("case {case} (k {k}, target {target}) differs: {r:?}"),
        )?;
    }
    Ok(format!("exemplar delta_acc {:.3}, 100 random reports exact", exemplar.delta_acc))
}

fn set_iou(sets: &[&BTreeSet<usize>]) -> f64 {
    let mut inter = sets[0].clone();
    let mut union = sets[0].clone();
    for s in &sets[1..] {
        inter = inter.intersection(s).cloned().collect();
        union = union.union(s).cloned().collect();
    }
    if union.is_empty() {
        0.0
    } else {
        100.0 * inter.len() as f64 / union.len() as f64
    }
}

fn compare_with_oracle(report: &OverlapReport, sets: &[BTreeSet<usize>]) -> std::result::Result<(), String> {
    let k = sets.len();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    let mut expected_pairs = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            expected_pairs.push((i, j, set_iou(&[&sets[i], &sets[j]])));
        }
    }
    check(report.pairwise.len() == expected_pairs.len(), || "pair count differs".into())?;
    for (got, want) in report.pairwise.iter().zip(&expected_pairs) {
        check(got.0 == want.0 && got.1 == want.1 && close(got.2, want.2), || {
            format!("pair {:?} vs oracle {:?}", got, want)
        })?;
    }
    let all: Vec<&BTreeSet<usize>> = sets.iter().collect();
    let all_k = set_iou(&all);
    check(close(report.all_k_pct, all_k), || {
        format!("all-k {} vs oracle {all_k}", report.all_k_pct)
    })?;
    for &(m, pct) in &report.by_subset_size {
        let mut total = 0.0;
        let mut count = 0;
        for mask in 0u32..(1 << k) {
            if mask.count_ones() as usize != m {
                continue;
            }
            let members: Vec<&BTreeSet<usize>> =
                (0..k).filter(|i| mask & (1 << i) != 0).map(|i| &sets[i]).collect();
            total += set_iou(&members);
            count += 1;
        }
        let want = total / count as f64;
        check(close(pct, want), || format!("size {m}: {pct} vs oracle {want}"))?;
    }
    check(report.by_subset_size.len() == k - 1, || "subset sizes missing".into())?;
    let empty: Vec<usize> = (0..k).filter(|&i| sets[i].is_empty()).collect();
    check(report.empty_concepts == empty, || "empty concepts differ".into())
}

fn overlap_oracle() -> Outcome {
    let mut rng = SplitMix64::new(8);
    for case in 0..50 {
        let d = 1 + below(&mut rng, 64);
        let k = 2 + below(&mut rng, 5);
        let n = k * (1 + below(&mut rng, 8));
        let labels: Vec<u32> = (0..n).map(|s| (s % k) as u32).collect();
        let sparsity = rng.next_f64();
        let values: Vec<f32> = (0..n * d)
            .map(|_| {
                if rng.next_f64() < sparsity {
                    0.0
                } else {
                    (3.0 * rng.next_normal()) as f32
                }
            })
            .collect();
        let data = ActivationDataset::new(d, k, labels, values, Manifest::synthetic(Representation::Sae, k))
            .map_err(|e| e.to_string())?;

        let mut active = vec![BTreeSet::new(); k];
        let mut sums = vec![vec![0.0f64; d]; k];
        let mut counts = vec![0usize; k];
        for s in 0..n {
            let c = data.label(s);
            counts[c] += 1;
            for (j, &v) in data.row(s).iter().enumerate() {
                sums[c][j] += v as f64;
                if v > 0.0 {
                    active[c].insert(j);
                }
            }
        }
        let report = active_neuron_overlap(&data).map_err(|e| e.to_string())?;
        compare_with_oracle(&report, &active).map_err(|e| format!("case {case} active: {e}"))?;

        let top_k = 1 + below(&mut rng, d);
        let top: Vec<BTreeSet<usize>> = (0..k)
            .map(|c| {
                let means: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                let mut order: Vec<usize> = (0..d).collect();
                order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
                order.into_iter().take(top_k).collect()
            })
            .collect();
        let report = topk_salient_overlap(&data, top_k).map_err(|e| e.to_string())?;
        compare_with_oracle(&report, &top).map_err(|e| format!("case {case} top-{top_k}: {e}"))?;
    }

    let dense = generate(&SynthConfig::uniform(40, 32, 5, 3.0, 0.5, 1.0, Representation::Sae, 9))
        .map_err(|e| e.to_string())?;
    let report = active_neuron_overlap(&dense).map_err(|e| e.to_string())?;
    check(report.all_k_pct == 100.0 && report.pairwise.iter().all(|p| p.2 == 100.0), || {
        format!("dense all-active overlap {}", report.all_k_pct)
    })?;
    Ok("50 random datasets match the set oracle, dense all-active 100%".into())
}

fn write_bytes(path: &Path, bytes: &[u8]) {
    std::fs::write(path, bytes).expect("write fixture");
}

fn format_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = SplitMix64::new(9);
    for case in 0..100 {
        let d = below(&mut rng, 40);
        let k = 1 + below(&mut rng, 6);
        let n = k + below(&mut rng, 50);
        let mut labels: Vec<u32> = (0..n).map(|s| (s % k) as u32).collect();
        for i in (1..n).rev() {
            labels.swap(i, below(&mut rng, i + 1));
        }
        let values: Vec<f32> = (0..n * d)
            .map(|_| f32::from_bits(rng.next_u64() as u32))
            .map(|v| if v.is_finite() { v } else { -0.0 })
            .collect();
        let rep = if case % 2 == 0 { Representation::Base } else { Representation::Sae };
        let mut manifest = Manifest::synthetic(rep, k);
        manifest.layer = below(&mut rng, 40) as u32;
        let data = ActivationDataset::new(d, k, labels, values, manifest).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("case{case}.actv"));
        write_dataset(&data, &path).map_err(|e| e.to_string())?;
        let back = load_dataset(&path).map_err(|e| e.to_string())?;
        let same_bits = back
            .values()
            .iter()
            .zip(data.values())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        check(
            same_bits
                && back.labels() == data.labels()
                && back.manifest() == data.manifest()
                && back.n_neurons() == d
                && back.n_concepts() == k,
            || format!("case {case} did not round-trip"),
        )?;
    }

    let good = generate(&SynthConfig::uniform(4, 3, 2, 1.0, 1.0, 1.0, Representation::Base, 3))
        .map_err(|e| e.to_string())?;
    let good_path = dir.path().join("good.actv");
    write_dataset(&good, &good_path).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&good_path).map_err(|e| e.to_string())?;
    let manifest = std::fs::read(manifest_path_of(&good_path)).map_err(|e| e.to_string())?;
    let header = 4 + 4 + 8 + 8 + 4;

    type Fixture = (&'static str, Vec<u8>, Option<Vec<u8>>, fn(&Error) -> bool);
    let mut fixtures: Vec<Fixture> = Vec::new();
    let mut bad_magic = bytes.clone();
    bad_magic[..4].copy_from_slice(b"ACTX");
    fixtures.push(("bad magic", bad_magic, None, |e| matches!(e, Error::BadMagic { .. })));
    let mut bad_version = bytes.clone();
    bad_version[4..8].copy_from_slice(&2u32.to_le_bytes());
    fixtures.push(("version 2", bad_version, None, |e| matches!(e, Error::VersionMismatch { .. })));
    fixtures.push(("short header", bytes[..10].to_vec(), None, |e| matches!(e, Error::Truncated { .. })));
    fixtures.push(("short payload", bytes[..bytes.len() - 3].to_vec(), None, |e| {
        matches!(e, Error::Truncated { .. })
    }));
    let mut inflated = bytes.clone();
    inflated[8..16].copy_from_slice(&1000u64.to_le_bytes());
    fixtures.push(("inflated sample count", inflated, None, |e| matches!(e, Error::Truncated { .. })));
    let mut trailing = bytes.clone();
    trailing.extend_from_slice(&[0, 0, 0, 0]);
    fixtures.push(("trailing bytes", trailing, None, |e| matches!(e, Error::Validation(_))));
    let mut bad_label = bytes.clone();
    bad_label[header..header + 4].copy_from_slice(&7u32.to_le_bytes());
    fixtures.push(("label out of range", bad_label, None, |e| matches!(e, Error::LabelOutOfRange { .. })));
    let mut nan = bytes.clone();
    let first_value = header + 4 * good.n_samples();
    nan[first_value..first_value + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    fixtures.push(("nan activation", nan, None, |e| matches!(e, Error::NonFinite { .. })));
    fixtures.push(("malformed manifest", bytes.clone(), Some(b"{\"model\":".to_vec()), |e| {
        matches!(e, Error::Manifest(_))
    }));
    let mut wrong_names: serde_json::Value = serde_json::from_slice(&manifest).map_err(|e| e.to_string())?;
    wrong_names["concept_names"] = serde_json::json!(["only_one"]);
    fixtures.push((
        "concept names mismatch",
        bytes.clone(),
        Some(serde_json::to_vec(&wrong_names).map_err(|e| e.to_string())?),
        |e| matches!(e, Error::Manifest(_)),
    ));

    for (i, (name, body, side, expected)) in fixtures.iter().enumerate() {
        let path = dir.path().join(format!("bad{i}.actv"));
        write_bytes(&path, body);
        write_bytes(&manifest_path_of(&path), side.as_deref().unwrap_or(&manifest));
        match load_dataset(&path) {
            Ok(_) => return Err(format!("{name}: accepted")),
            Err(e) => check(expected(&e), || format!("{name}: wrong error {e:?}"))?,
        }
    }
    let lonely = dir.path().join("lonely.actv");
    write_bytes(&lonely, &bytes);
    check(matches!(load_dataset(&lonely), Err(Error::Io { .. })), || {
        "missing manifest not reported as an i/o error".into()
    })?;
    Ok(format!("100 datasets bit-exact, {} corrupt fixtures rejected", fixtures.len() + 1))
}

fn manifest_path_of(path: &Path) -> std::path::PathBuf {
    store::manifest_path(path)
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        (1, "density fidelity", density_fidelity),
        (2, "jsd bounds and extremes", jsd_extremes),
        (3, "separability monotonicity", separability_monotonicity),
        (4, "app algebra", app_algebra),
        (5, "method ordering", method_ordering),
        (6, "separability vs erasure correlation", correlation_analog),
        (7, "metric identities", metric_identities),
        (8, "overlap statistics", overlap_oracle),
        (9, "format round-trip", format_round_trip),
    ];
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|panic| Err(format!("panicked: {panic:?}")));
        match outcome {
            Ok(detail) => println!("criterion {id} ({name}): PASS - {detail}"),
            Err(detail) => {
                println!("criterion {id} ({name}): FAIL - {detail}");
                failed.push(id);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
