use anyhow::{bail, Result};
use serde_json::Value;

pub const PLOT_HEADER: &str = "series,x,y";

#[derive(Default)]
struct Plot {
    body: String,
}

impl Plot {
    /// Adds `(x, y)` for every row that has both fields; nulls are skipped.
    fn series(&mut self, name: &str, rows: &[Value], x: &str, y: &str) {
        for row in rows {
            if let (Some(x), Some(y)) = (scalar(&row[x]), scalar(&row[y])) {
                self.body.push_str(&format!("{},{x},{y}\n", quote(name)));
            }
        }
    }

    fn point(&mut self, name: &str, x: impl ToString, y: &Value) {
        if let Some(y) = scalar(y) {
            self.body.push_str(&format!("{},{},{y}\n", quote(name), x.to_string()));
        }
    }
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(u8::from(*b).to_string()),
        Value::String(s) if s.parse::<f64>().is_ok() => Some(s.clone()),
        _ => None,
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn rows(v: &Value) -> &[Value] {
    v.as_array().map_or(&[], Vec::as_slice)
}

fn label(v: &Value, key: &str) -> String {
    v[key].as_str().unwrap_or_default().to_string()
}

/// Projects a report of the given kind into `series,x,y` rows; an empty
/// report yields the header alone.
pub fn emit_plot_data(kind: &str, report: &Value) -> Result<String> {
    let mut p = Plot::default();
    match kind {
        "agg-profile" => {
            for e in rows(report) {
                let name = format!("{}-{}", label(e, "aggregator"), label(e, "domain"));
                p.series(&name, rows(&e["rows"]), "n", "s");
            }
        }
        "mlp-probe" => {
            let r = rows(&report["probe"]["rows"]);
            p.series("max-observed", r, "budget", "max_observed_bitlen");
            p.series("analytic-bound", r, "budget", "analytic_bound");
        }
        "star-lemma" => {
            let r = rows(report);
            p.series("family-size", r, "n", "family_size");
            p.series("lemma-bound", r, "n", "lemma_bound");
            p.series("center-cr2-classes", r, "n", "center_cr2_classes");
            p.series("graph-cr2-classes", r, "n", "graph_cr2_classes");
        }
        "expobserve" => {
            for m in rows(report) {
                let model = label(m, "model");
                let r = rows(&m["rows"]);
                p.series(&format!("{model}/vertex-classes"), r, "n", "vertex_classes");
                p.series(&format!("{model}/distinct-traces"), r, "n", "distinct_traces");
                p.series(&format!("{model}/l_n"), r, "n", "l_n");
                p.series(&format!("{model}/graph-classes"), r, "n", "graph_classes");
                p.series(&format!("{model}/lg_n"), r, "n", "lg_n");
            }
        }
        "cr-bound" => {
            for m in rows(report) {
                let model = label(m, "model");
                let r = rows(&m["rows"]);
                p.series(&format!("{model}/cr-vertex-classes"), r, "n", "cr_vertex_classes");
                p.series(&format!("{model}/model-vertex-classes"), r, "n", "model_vertex_classes");
                p.series(&format!("{model}/cr-graph-classes"), r, "n", "cr_graph_classes");
                p.series(&format!("{model}/model-graph-classes"), r, "n", "model_graph_classes");
            }
        }
        "cr-run" => {
            for (t, c) in rows(&report["class_counts"]).iter().enumerate() {
                p.point("classes", t, c);
            }
        }
        "gnn-eval" => {
            for g in rows(&report["graphs"]) {
                let name = format!("{}/trace-bitlen", label(g, "graph"));
                for (v, b) in rows(&g["trace_bitlens"]).iter().enumerate() {
                    p.point(&name, v + 1, b);
                }
            }
        }
        "compare" => {
            let r = rows(&report["rows"]);
            p.series("vertex-classes", r, "n", "vertex_classes");
            p.series("cr2-star-lower-bound", r, "n", "cr2_star_lower_bound");
            p.series("l_n", r, "n", "l_n");
            p.series("ratio", r, "n", "ratio");
        }
        other => bail!("unknown report kind {other:?} for plot data"),
    }
    Ok(format!("{PLOT_HEADER}\n{}", p.body))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn agg_profile_projects_n_and_s_per_domain() {
        let report = json!([
            { "aggregator": "sum", "domain": "integer", "rows": [{ "n": 2, "s": 6 }, { "n": 4, "s": 8 }] },
            { "aggregator": "sum", "domain": "rational", "rows": [{ "n": 2, "s": 9 }] }
        ]);
        let text = emit_plot_data("agg-profile", &report).unwrap();
        assert_eq!(text, "series,x,y\nsum-integer,2,6\nsum-integer,4,8\nsum-rational,2,9\n");
    }

    #[test]
    fn compare_projects_classes_and_binomial_bound() {
        let report = json!({ "rows": [
            { "n": 3, "vertex_classes": 1, "cr2_star_lower_bound": 1, "l_n": 4, "ratio": 1.0 },
            { "n": 4, "vertex_classes": 1, "cr2_star_lower_bound": null, "l_n": 4, "ratio": null }
        ]});
        let text = emit_plot_data("compare", &report).unwrap();
        assert!(text.contains("vertex-classes,3,1\nvertex-classes,4,1\n"), "{text}");
        assert!(text.contains("cr2-star-lower-bound,3,1\nl_n"), "{text}");
        assert!(!text.contains("cr2-star-lower-bound,4"), "{text}");
    }

    #[test]
    fn empty_report_is_header_only() {
        for kind in ["agg-profile", "star-lemma", "expobserve", "cr-bound", "compare", "cr-run", "gnn-eval", "mlp-probe"] {
            assert_eq!(emit_plot_data(kind, &json!([])).unwrap(), "series,x,y\n", "{kind}");
        }
    }

    #[test]
    fn unknown_kind_is_an_error() {
        let err = emit_plot_data("histogram", &json!([])).unwrap_err();
        assert!(err.to_string().contains("histogram"));
    }

    #[test]
    fn series_names_with_commas_are_quoted() {
        let report = json!([{ "model": "a,b.json", "rows": [{ "n": 2, "l_n": 3 }] }]);
        let text = emit_plot_data("expobserve", &report).unwrap();
        assert!(text.contains("\"a,b.json/l_n\",2,3"), "{text}");
    }
}
