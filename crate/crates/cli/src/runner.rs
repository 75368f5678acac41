use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mpgnn_lab::aggregation::{ceil_log2, classify_profile, log_schedule, measure_profile};
use mpgnn_lab::cr::CR_CSV_HEADER;
use mpgnn_lab::gnn::TRACE_CSV_HEADER;
use mpgnn_lab::graph::{enumerate_labeled_graphs, graph_to_json, parse_graph, random_graph, star_family};
use mpgnn_lab::lab::{compare_report, expobserve_suite, verify_star_lemma};
use mpgnn_lab::mlp::probe_mlp_complexity;
use mpgnn_lab::{cr_run, gnn_eval, sample, Aggregator, Caps, FeaturedGraph, GnnModel, MeasureMode, MlpSpec, Rat, ValueDomain};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{model_refs, CapsConfig, Experiment, ExperimentConfig, Family, ModeName, ModelRef};
use crate::plot::emit_plot_data;

/// One output file, relative to the run's output directory.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub path: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn text(path: String, text: String) -> Self {
        Artifact { path, bytes: text.into_bytes() }
    }

    fn json(path: String, value: &Value) -> Self {
        let mut bytes = serde_json::to_vec_pretty(value).expect("json value serializes");
        bytes.push(b'\n');
        Artifact { path, bytes }
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }
}

/// Everything a run produced, before it is written.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    pub failures: Vec<String>,
}

impl RunOutput {
    pub fn passes(&self) -> bool {
        self.failures.is_empty()
    }
}

struct Item<'a> {
    name: &'a str,
    seed: u64,
    caps: CapsConfig,
    lab_caps: Caps,
    base: &'a Path,
}

fn to_value(v: impl Serialize) -> Result<Value> {
    serde_json::to_value(v).context("serializing report")
}

/// Runs every item of a validated config; items are independent and may run
/// in parallel, their artifacts are merged in config order.
pub fn run(cfg: &ExperimentConfig, base: &Path) -> Result<RunOutput> {
    let per_item: Vec<RunOutput> = cfg
        .experiments
        .par_iter()
        .map(|e| {
            let name = e.name().expect("validated configs name every item");
            let item = Item { name, seed: cfg.seed, caps: cfg.caps, lab_caps: cfg.caps.lab(), base };
            run_item(e, &item).with_context(|| format!("experiment {name} ({})", e.kind()))
        })
        .collect::<Result<_>>()?;
    let mut out = RunOutput::default();
    for item in per_item {
        out.artifacts.extend(item.artifacts);
        out.failures.extend(item.failures);
    }
    out.artifacts.push(manifest(cfg, &out)?);
    Ok(out)
}

fn manifest(cfg: &ExperimentConfig, out: &RunOutput) -> Result<Artifact> {
    let mut entries: Vec<&Artifact> = out.artifacts.iter().collect();
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    if let Some(w) = entries.windows(2).find(|w| w[0].path == w[1].path) {
        bail!("two artifacts share the path {}", w[0].path);
    }
    let files: Vec<Value> = entries
        .iter()
        .map(|a| json!({ "path": a.path, "sha256": a.sha256(), "bytes": a.bytes.len() }))
        .collect();
    let doc = json!({
        "seed": cfg.seed,
        "caps": cfg.caps,
        "experiments": cfg.experiments.iter().map(|e| json!({ "name": e.name(), "kind": e.kind() })).collect::<Vec<_>>(),
        "passes": out.passes(),
        "hard_failures": out.failures,
        "artifacts": files,
    });
    Ok(Artifact::json("manifest.json".to_string(), &doc))
}

/// Writes every artifact under `dir`, creating directories as needed.
pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<()> {
    for a in artifacts {
        let path = dir.join(&a.path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(&path, &a.bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run_item(e: &Experiment, item: &Item<'_>) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let report = match e {
        Experiment::AggProfile { aggregators, domains, mode, samples, n, k_offset, k, .. } => {
            let ns = n.usizes();
            let schedule = match k {
                Some(k) => ns.iter().map(|&n| (n, *k)).collect(),
                None => log_schedule(&ns, *k_offset),
            };
            let mode = match mode {
                ModeName::Exhaustive => MeasureMode::Exhaustive,
                ModeName::Sampled => MeasureMode::Sampled { samples: *samples },
                ModeName::ReciprocalPrimes => MeasureMode::ReciprocalPrimes,
            };
            agg_profile(aggregators, domains, mode, &schedule, item, &mut out)?
        }
        Experiment::MlpProbe { mlp, dims, weight_bits, budgets, samples, .. } => {
            let spec = match mlp {
                Some(p) => {
                    let path = item.base.join(p);
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<MlpSpec>(&text).with_context(|| format!("parsing MLP file {}", path.display()))?
                }
                None => MlpSpec::random(&mut sample::rng(item.seed), dims, *weight_bits)?,
            };
            let probe = probe_mlp_complexity(&spec, budgets.values(), *samples, item.seed)?;
            let mut csv = String::from("budget,samples,max_input_bitlen,max_observed_bitlen,analytic_bound,bound_violations\n");
            for r in &probe.rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.budget, r.samples, r.max_input_bitlen, r.max_observed_bitlen, r.analytic_bound, r.bound_violations
                ));
                if r.bound_violations > 0 || r.max_observed_bitlen as u128 > r.analytic_bound {
                    out.failures.push(format!(
                        "{}: budget {} exceeds the composed bound ({} violations)",
                        item.name, r.budget, r.bound_violations
                    ));
                }
            }
            out.artifacts.push(Artifact::text(format!("{}.csv", item.name), csv));
            json!({ "mlp": spec, "probe": probe })
        }
        Experiment::StarLemma { n, .. } => {
            let mut rows = Vec::new();
            for &n in n.values() {
                let r = verify_star_lemma(n as usize, &item.lab_caps)?;
                if !r.passes() {
                    out.failures.push(format!("{}: n={n} {}", item.name, star_flags(&r)));
                }
                rows.push(r);
            }
            to_value(rows)?
        }
        Experiment::Expobserve { seeds, models, n, .. } | Experiment::CrBound { seeds, models, n, .. } => {
            let refs = model_refs(*seeds, models, item.seed);
            let loaded = refs.iter().map(|r| r.load(item.base)).collect::<Result<Vec<_>>>()?;
            verification(e, &refs, &loaded, &n.usizes(), item, &mut out)?
        }
        Experiment::CrRun { graph, t, .. } => {
            let g = load_graph(item.base, graph)?;
            let h = cr_run(&g, *t);
            let id = graph_id(graph, 0);
            out.artifacts.push(Artifact::text(
                format!("{}.csv", item.name),
                format!("{CR_CSV_HEADER}\n{}", h.csv_rows(&id)),
            ));
            let counts = (0..=h.len()).map(|t| h.class_count(t)).collect::<mpgnn_lab::Result<Vec<_>>>()?;
            let partitions = (0..=h.len()).map(|t| h.partition(t)).collect::<mpgnn_lab::Result<Vec<_>>>()?;
            json!({
                "graph": graph.display().to_string(),
                "n": g.n(),
                "rounds": h.len(),
                "stable_at": h.stable_at(),
                "class_counts": counts,
                "partitions": partitions,
                "graph_color_hash": h.graph_color(h.len())?.digest_hex(),
            })
        }
        Experiment::GnnEval { model, graphs, .. } => gnn_eval_item(model, graphs, item, &mut out)?,
        Experiment::Compare { model, n, .. } => {
            let m = model.load(item.base)?;
            let report = compare_report(&m, &n.usizes(), &item.lab_caps)?;
            for row in report.rows.iter().filter(|r| r.hard_failure()) {
                out.failures.push(format!(
                    "{}: n={} expobserve bound holds {}, witness found {}",
                    item.name,
                    row.n,
                    row.expobserve_bound_holds,
                    row.witness.is_some()
                ));
            }
            json!({ "model": model.to_string(), "rows": report.rows })
        }
        Experiment::Gen { family, n, count, p, .. } => gen_item(*family, &n.usizes(), *count, p, item, &mut out)?,
    };
    let doc = json!({
        "kind": e.kind(),
        "name": item.name,
        "seed": item.seed,
        "params": e,
        "passes": out.failures.is_empty(),
        "hard_failures": out.failures,
        "report": report,
    });
    if !matches!(e, Experiment::Gen { .. }) {
        let plot = emit_plot_data(e.kind(), &doc["report"])?;
        out.artifacts.push(Artifact::text(format!("{}.plot.csv", item.name), plot));
    }
    out.artifacts.push(Artifact::json(format!("{}.json", item.name), &doc));
    Ok(out)
}

fn star_flags(r: &mpgnn_lab::lab::StarLemmaReport) -> String {
    let mut bad = Vec::new();
    if r.family_size as u128 != r.compositions_count {
        bad.push(format!("family_size {} != compositions {}", r.family_size, r.compositions_count));
    }
    for (flag, name) in [
        (r.center_cr2_distinct, "center_cr2_distinct"),
        (r.graph_cr2_distinct, "graph_cr2_distinct"),
        (r.degree_oracle_pass, "degree_oracle_pass"),
    ] {
        if !flag {
            bad.push(format!("{name} false"));
        }
    }
    bad.join(", ")
}

/// Proven ceilings: integer sum within `ceil(log2 n) + k + 2`, integer mean
/// within that plus `<n>`, max never above `k`.
fn agg_ceiling(agg: Aggregator, domain: ValueDomain, n: usize, k: u32) -> Option<u64> {
    let sum = ceil_log2(n as u64) as u64 + k as u64 + 2;
    match (agg, domain) {
        (Aggregator::Max, _) => Some(k as u64),
        (Aggregator::Sum, ValueDomain::Integer) => Some(sum),
        (Aggregator::Mean, ValueDomain::Integer) => Some(sum + Rat::from_int(n as i64).bitlen()),
        _ => None,
    }
}

fn agg_profile(
    aggregators: &[Aggregator],
    domains: &[ValueDomain],
    mode: MeasureMode,
    schedule: &[(usize, u32)],
    item: &Item<'_>,
    out: &mut RunOutput,
) -> Result<Value> {
    let mut entries = Vec::new();
    for &agg in aggregators {
        for &domain in domains {
            let profile = measure_profile(agg, schedule, mode, domain, item.seed, item.caps.multisets as u128)?;
            for row in &profile.rows {
                if let Some(ceiling) = agg_ceiling(agg, domain, row.n, row.k) {
                    if row.s > ceiling {
                        out.failures.push(format!(
                            "{}: {agg} over {} at n={} k={} reached {} > {ceiling}",
                            item.name,
                            domain.name(),
                            row.n,
                            row.k,
                            row.s
                        ));
                    }
                }
            }
            out.artifacts.push(Artifact::text(format!("{}.{agg}-{}.csv", item.name, domain.name()), profile.to_csv()));
            let mut entry = json!({
                "aggregator": agg,
                "domain": domain,
                "mode": mode.name(),
                "rows": profile.rows,
            });
            if profile.rows.len() >= 4 {
                let c = classify_profile(profile)?;
                entry["fit"] = to_value(c.fit)?;
                entry["log_coef"] = json!(c.log_coef);
                entry["log_intercept"] = json!(c.log_intercept);
                entry["linear_coef"] = json!(c.linear_coef);
                entry["note"] = json!(c.note);
            }
            entries.push(entry);
        }
    }
    Ok(Value::Array(entries))
}

fn verification(
    e: &Experiment,
    refs: &[ModelRef],
    models: &[GnnModel],
    ns: &[usize],
    item: &Item<'_>,
    out: &mut RunOutput,
) -> Result<Value> {
    let expobserve = matches!(e, Experiment::Expobserve { .. });
    let mut rows: Vec<Vec<Value>> = vec![Vec::new(); models.len()];
    for &n in ns {
        for (i, (ex, cr)) in expobserve_suite(models, n, &item.lab_caps)?.into_iter().enumerate() {
            let label = &refs[i];
            if expobserve {
                if !ex.passes() {
                    out.failures.push(format!(
                        "{}: {label} n={n} bound holds {}, trace conflicts {}",
                        item.name, ex.bound_holds, ex.trace_implies_output_violations
                    ));
                }
                rows[i].push(to_value(ex)?);
            } else {
                if !cr.passes() {
                    out.failures.push(format!(
                        "{}: {label} n={n} vertex violations {}, graph violations {}",
                        item.name, cr.vertex_violations, cr.graph_violations
                    ));
                }
                rows[i].push(to_value(cr)?);
            }
        }
    }
    Ok(Value::Array(
        refs.iter()
            .zip(rows)
            .map(|(r, rows)| json!({ "model": r.to_string(), "rows": rows }))
            .collect(),
    ))
}

fn load_graph(base: &Path, path: &Path) -> Result<FeaturedGraph> {
    let full = base.join(path);
    let text = std::fs::read_to_string(&full).with_context(|| format!("reading graph file {}", full.display()))?;
    parse_graph(&text).map_err(|e| anyhow!("parsing graph file {}: {e}", full.display()))
}

/// A CSV-safe id: position plus file stem.
fn graph_id(path: &Path, i: usize) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let stem: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{}-{stem}", i + 1)
}

fn gnn_eval_item(model: &ModelRef, graphs: &[PathBuf], item: &Item<'_>, out: &mut RunOutput) -> Result<Value> {
    let m = model.load(item.base)?;
    let mut csv = format!("{TRACE_CSV_HEADER}\n");
    let mut docs = Vec::new();
    for (i, path) in graphs.iter().enumerate() {
        let g = load_graph(item.base, path)?;
        let e = gnn_eval(&m, &g)?;
        let id = graph_id(path, i);
        csv.push_str(&e.trace.csv_rows(&id));
        let bits = (0..g.n()).map(|v| e.trace.trace_bitlen(v)).collect::<mpgnn_lab::Result<Vec<_>>>()?;
        docs.push(json!({
            "graph": id,
            "file": path.display().to_string(),
            "n": g.n(),
            "finals": e.finals,
            "readout": e.readout,
            "trace_bitlens": bits,
            "max_trace_bitlen": bits.iter().max(),
            "graph_trace_bitlen": e.trace.graph_trace_bitlen(),
            "empty_neighbourhood": e.trace.any_empty_neighbourhood(),
        }));
    }
    out.artifacts.push(Artifact::text(format!("{}.csv", item.name), csv));
    Ok(json!({ "model": model.to_string(), "graphs": docs }))
}

fn gen_item(family: Family, ns: &[usize], count: u64, p: &str, item: &Item<'_>, out: &mut RunOutput) -> Result<Value> {
    let p: Rat = p.parse()?;
    let mut files = Vec::new();
    let mut emit = |file: String, g: &FeaturedGraph| {
        let path = format!("{}/{file}.json", item.name);
        files.push(path.clone());
        out.artifacts.push(Artifact::text(path, graph_to_json(g) + "\n"));
    };
    let mut total: u64 = 0;
    let mut budget = |extra: u64| -> Result<()> {
        total += extra;
        if total > item.caps.sample_count {
            bail!("{total} graph files exceed the sample count cap (caps.sample_count = {})", item.caps.sample_count);
        }
        Ok(())
    };
    for &n in ns {
        match family {
            Family::Labeled => {
                budget(mpgnn_lab::graph::labeled_graph_count(n.min(item.caps.graph_n)) as u64)?;
                for (i, g) in enumerate_labeled_graphs(n, item.caps.graph_n)?.enumerate() {
                    emit(format!("labeled-n{n}-{i:07}"), &g);
                }
            }
            Family::Star => {
                let family = star_family(n, item.caps.star_n)?;
                budget(family.len() as u64)?;
                for (k, g) in family {
                    let parts: Vec<String> = k.parts().iter().map(usize::to_string).collect();
                    emit(format!("star-n{n}-{}", parts.join("_")), &g);
                }
            }
            Family::Random => {
                budget(count)?;
                for i in 0..count {
                    emit(format!("random-n{n}-{i:04}"), &random_graph(n, &p, item.seed.wrapping_add(i))?);
                }
            }
            Family::Complete | Family::Path | Family::Cycle => {
                budget(1)?;
                let (label, g) = match family {
                    Family::Complete => ("complete", FeaturedGraph::complete(n)),
                    Family::Path => ("path", FeaturedGraph::path(n)),
                    _ => ("cycle", FeaturedGraph::cycle(n)),
                };
                emit(format!("{label}-n{n}"), &g);
            }
        }
    }
    Ok(json!({ "family": family, "files": files }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_text(text: &str) -> RunOutput {
        let mut cfg = ExperimentConfig::parse(text).unwrap();
        cfg.validate(Path::new(".")).unwrap();
        run(&cfg, Path::new(".")).unwrap()
    }

    fn artifact<'a>(out: &'a RunOutput, path: &str) -> &'a Artifact {
        out.artifacts.iter().find(|a| a.path == path).unwrap_or_else(|| panic!("no {path}"))
    }

    #[test]
    fn runs_are_byte_identical() {
        let text = "seed = 4\n[[experiment]]\nkind = \"agg-profile\"\nn = \"2^1..2^5\"\n\
                    [[experiment]]\nkind = \"compare\"\nn = \"3,5\"\n";
        let a = run_text(text);
        let b = run_text(text);
        let digests = |o: &RunOutput| o.artifacts.iter().map(|a| (a.path.clone(), a.sha256())).collect::<Vec<_>>();
        assert_eq!(digests(&a), digests(&b));
        assert!(a.passes(), "{:?}", a.failures);
    }

    #[test]
    fn manifest_lists_every_artifact() {
        let out = run_text("[[experiment]]\nkind = \"star-lemma\"\nn = \"1..2\"\n");
        let manifest: Value = serde_json::from_slice(&artifact(&out, "manifest.json").bytes).unwrap();
        let listed: Vec<&str> = manifest["artifacts"].as_array().unwrap().iter().map(|a| a["path"].as_str().unwrap()).collect();
        assert_eq!(listed, ["01-star-lemma.json", "01-star-lemma.plot.csv"]);
        for entry in manifest["artifacts"].as_array().unwrap() {
            let a = artifact(&out, entry["path"].as_str().unwrap());
            assert_eq!(entry["sha256"], a.sha256());
        }
        assert_eq!(manifest["passes"], true);
    }

    #[test]
    fn sampled_profiles_record_the_fit() {
        let out = run_text("[[experiment]]\nkind = \"agg-profile\"\naggregators = [\"max\"]\nn = \"2^1..2^6\"\nname = \"p\"\n");
        let doc: Value = serde_json::from_slice(&artifact(&out, "p.json").bytes).unwrap();
        assert_eq!(doc["report"][0]["fit"], "log-consistent");
        let csv = String::from_utf8(artifact(&out, "p.max-integer.csv").bytes.clone()).unwrap();
        assert!(csv.starts_with("n,k,s,mode,domain\n2,5,"), "{csv}");
    }

    #[test]
    fn gen_writes_parseable_graphs() {
        let out = run_text("[[experiment]]\nkind = \"gen\"\nfamily = \"star\"\nn = 2\nname = \"g\"\n");
        let graphs: Vec<_> = out.artifacts.iter().filter(|a| a.path.starts_with("g/")).collect();
        assert_eq!(graphs.len(), 6);
        for a in graphs {
            let g = parse_graph(std::str::from_utf8(&a.bytes).unwrap()).unwrap();
            assert_eq!(g.n(), 5);
        }
    }

    #[test]
    fn gen_respects_the_file_cap() {
        let mut cfg = ExperimentConfig::parse(
            "[caps]\nsample_count = 10\n[[experiment]]\nkind = \"gen\"\nfamily = \"labeled\"\nn = 4\n",
        )
        .unwrap();
        cfg.validate(Path::new(".")).unwrap();
        let err = format!("{:#}", run(&cfg, Path::new(".")).unwrap_err());
        assert!(err.contains("sample count cap"), "{err}");
    }
}
