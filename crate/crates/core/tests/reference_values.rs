//! Constants taken from the published experiments, checked against the
//! reference text shipped at the workspace root.

mod common;

use std::path::PathBuf;

use ctxbai::env::GenConstraints;
use ctxbai::harness::ExperimentConfig;
use ctxbai::stopping::classic_sigma2;
use ctxbai::{Instance, MeanSpec};

fn reference_text() -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../paper.md");
    std::fs::read_to_string(path).expect("reference text present")
}

// Parses the rows of the first bmatrix after `from` into numbers.
fn matrix_after(text: &str, from: usize) -> (Vec<Vec<f64>>, usize) {
    let start = text[from..].find("\\begin{bmatrix}").unwrap() + from;
    let body_start = start + "\\begin{bmatrix}".len();
    let end = text[body_start..].find("\\end{bmatrix}").unwrap() + body_start;
    let rows = text[body_start..end]
        .split("\\\\")
        .map(str::trim)
        .filter(|r| !r.is_empty())
        .map(|r| r.split('&').map(|v| v.trim().parse::<f64>().unwrap()).collect())
        .collect();
    (rows, end)
}

#[test]
fn three_context_fixture_matches_published_instance() {
    let text = reference_text();
    let anchor = text.find("label{eq: sep-instance}").unwrap();
    let (mu, after) = matrix_after(&text, anchor);
    let (a, _) = matrix_after(&text, after);
    let mu: Vec<f64> = mu.into_iter().map(|r| r[0]).collect();

    let inst = Instance::load(common::fixture("three_context.json")).unwrap();
    assert_eq!(inst.a().rows(), a);
    assert_eq!(inst.mu(), &MeanSpec::Separator(mu));
    assert!(text[anchor.saturating_sub(200)..anchor + 200].contains("\\delta = 0.01"));
}

#[test]
fn generator_defaults_match_published_setup() {
    let text = reference_text();
    assert!(text.contains("lies in \\([0,10]^{k \\times n}\\)"));
    assert!(text.contains("\\ge \\frac{1}{4k}"));
    assert!(text.contains("\\Delta_i \\in [\\frac{1}{2n}, \\frac{i+1}{2n}]"));

    let c = GenConstraints::new(5, 3);
    assert_eq!(c.mu_range, (0.0, 10.0));
    assert!((c.a_min_floor - 1.0 / 12.0).abs() < 1e-15);
    // arm 2 of 5: [1/10, 3/10]
    assert!((c.gap_bands[1].0 - 0.1).abs() < 1e-15);
    assert!((c.gap_bands[1].1 - 0.3).abs() < 1e-15);
    assert!((c.gap_bands[4].1 - 0.6).abs() < 1e-15);
}

#[test]
fn baseline_variance_matches_published_value() {
    let text = reference_text();
    assert!(text.contains("$\\sigma = \\sqrt{26}$"));
    assert!(text.contains("$\\sigma^2 = 26$"));
    assert_eq!(classic_sigma2(0.0, 10.0), 26.0);
}

#[test]
fn default_confidence_matches_published_setup() {
    let text = reference_text();
    assert!(text.contains("set the confidence parameter $\\delta$ to $0.1$"));
    let cfg: ExperimentConfig =
        serde_json::from_str(r#"{"instances": {"paths": ["x.json"]}, "algorithms": ["nsts"], "trials": 1}"#)
            .unwrap();
    assert_eq!(cfg.delta, 0.1);
}

#[test]
fn published_speedup_exceeds_the_acceptance_bar() {
    let text = reference_text();
    let row = text
        .lines()
        .find(|l| l.contains("{5}") && l.contains("& 3 &"))
        .unwrap();
    let cells: Vec<f64> = row
        .split('&')
        .skip(2)
        .map(|c| c.trim().trim_end_matches("\\\\").trim().parse().unwrap())
        .collect();
    assert_eq!(cells, vec![30635.0, 427872.0]);
    assert!(cells[1] / cells[0] > 3.0);
}
