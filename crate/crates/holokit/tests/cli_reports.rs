use holokit::cli::{execute, parse_config, run, SCHEMA_TAG};
use holokit::{HoloError, NORMALIZATION};
use serde_json::Value;
use std::process::Command;

const DISC: &str = r#"
[domain]
kind = "ball"
dim = 1

[map]
kind = "ball-translation"
a = 0.5
"#;

fn config(body: &str) -> String {
    format!("{DISC}\n{body}")
}

fn claim(report: &holokit::cli::Report, name: &str) -> f64 {
    report.claims.iter().find(|c| c.name == name).unwrap_or_else(|| panic!("no claim {name}")).value
}

#[test]
fn classify_disc_translation() {
    let cfg = parse_config(&config("[run]\nverb = \"classify\"\n")).unwrap();
    let r = run(&cfg).unwrap();
    assert_eq!(r.schema, SCHEMA_TAG);
    assert_eq!(r.normalization, NORMALIZATION);
    assert_eq!(r.result["map_type"], "hyperbolic");
    // Dilation of z -> (z + a)/(1 + a z) at its attracting point 1 is (1 - a)/(1 + a).
    assert!((claim(&r, "dilation") - 1.0 / 3.0).abs() < 1e-3);
    assert!((claim(&r, "divergence_rate") - 3f64.ln()).abs() < 1e-3);
    assert!(r.claims.iter().all(|c| !c.evidence.is_empty()));
}

#[test]
fn kobayashi_on_the_ball() {
    let text = r#"
[domain]
kind = "ball"
dim = 2
[run]
verb = "kobayashi"
[run.params]
x = [[0.0, 0.0], [0.0, 0.0]]
y = [[0.5, 0.0], [0.0, 0.0]]
"#;
    let r = run(&parse_config(text).unwrap()).unwrap();
    assert!((claim(&r, "distance") - 3f64.ln()).abs() < 1e-12);
    assert!(r.result["gap"].as_f64().unwrap() < 1e-12);
    assert!(r.map.is_none());
}

#[test]
fn backward_orbit_table_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("orbit.csv");
    let text = config(&format!(
        "[run]\nverb = \"backward-orbit\"\ncsv = {:?}\n[run.params]\nzeta = [[-1.0, 0.0]]\nseed_point = [[-0.8, 0.0]]\n",
        csv_path.to_str().unwrap()
    ));
    let r = execute(&parse_config(&text).unwrap());
    assert_eq!(r.exit_code(), 0, "{:?}", r.error);
    let steps = r.result["orbit"]["steps"].as_array().unwrap();
    assert!(!steps.is_empty());
    for s in steps {
        assert!((s.as_f64().unwrap() - 3f64.ln()).abs() < 1e-3);
    }
    // Closed-form inverse orbit: x_{n+1} = (x_n - a)/(1 - a x_n).
    let pts: Vec<f64> = r.table.as_ref().unwrap().rows.iter().map(|row| row[1]).collect();
    for w in pts.windows(2) {
        assert!(((w[0] - 0.5) / (1.0 - 0.5 * w[0]) - w[1]).abs() < 1e-9);
    }
    holokit::cli::emit(&r).unwrap();
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "index,re_z1,im_z1,step,distance_to_base,koranyi");
    assert_eq!(lines.count(), pts.len());
}

#[test]
fn identical_configs_give_identical_reports() {
    let text = config("[run]\nverb = \"divergence-rate\"\n[run.params]\nm_max = 64\n");
    let cfg = parse_config(&text).unwrap();
    let (a, b) = (run(&cfg).unwrap(), run(&cfg).unwrap());
    assert_eq!(serde_json::to_string(&a.without_timestamp()).unwrap(), serde_json::to_string(&b.without_timestamp()).unwrap());
    let v: Value = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(v["schema"], SCHEMA_TAG);
    assert!(v["timestamp"]["wall_clock_seconds"].is_number());
    assert_eq!(v["config"]["run"]["verb"], "divergence-rate");
}

fn schema_field(text: &str) -> String {
    match parse_config(text) {
        Err(HoloError::Schema { field, .. }) => field,
        other => panic!("expected a schema error, got {other:?}"),
    }
}

#[test]
fn schema_errors_name_the_field() {
    assert_eq!(schema_field(&config("[run]\nverb = \"teleport\"\n")), "run.verb");
    assert_eq!(schema_field("[domain]\nkind = \"torus\"\n[run]\nverb = \"kobayashi\"\n"), "domain.kind");
    assert_eq!(schema_field("[domain]\nkind = \"ball\"\ndim = 0\n[run]\nverb = \"kobayashi\"\n"), "domain.dim");
    assert_eq!(
        schema_field("[domain]\nkind = \"ellipsoid\"\ncoefficients = [1.0, -2.0]\n[run]\nverb = \"kobayashi\"\n"),
        "domain.coefficients"
    );
    assert!(schema_field(&config("[run]\nverb = \"classify\"\n[run.params]\nbogus = 1\n")).starts_with("run.params"));
    assert_eq!(schema_field("[run]\nverb = \"kobayashi\"\n"), "domain");
    // Map and domain disagree.
    let cfg = parse_config("[domain]\nkind = \"ball\"\ndim = 2\n[map]\nkind = \"siegel-hyperbolic\"\nlambda = 2.0\n[run]\nverb = \"classify\"\n").unwrap();
    match run(&cfg) {
        Err(HoloError::Schema { field, .. }) => assert_eq!(field, "map.kind"),
        other => panic!("{other:?}"),
    }
}

fn binary(text: &str) -> (i32, Value) {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = (dir.path().join("exp.toml"), dir.path().join("report.json"));
    std::fs::write(&cfg, text).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_holokit")).arg(&cfg).arg("--output").arg(&out).status().unwrap();
    let report = std::fs::read_to_string(&out).map(|s| serde_json::from_str(&s).unwrap()).unwrap_or(Value::Null);
    (status.code().unwrap(), report)
}

#[test]
fn exit_codes() {
    let (code, rep) = binary(&config("[run]\nverb = \"dilation\"\n[run.params]\nzeta = [[1.0, 0.0]]\n"));
    assert_eq!(code, 0);
    assert_eq!(rep["status"], "ok");
    assert!((rep["result"]["value"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-3);

    let (code, rep) = binary(&config("[run]\nverb = \"teleport\"\n"));
    assert_eq!((code, rep), (2, Value::Null));

    // Seeds toward the attracting point never leave the horoball.
    let (code, rep) = binary(&config("[run]\nverb = \"backward-orbit\"\n[run.params]\nzeta = [[1.0, 0.0]]\nlambda = 3.0\n"));
    assert_eq!(code, 3);
    assert_eq!(rep["error"]["kind"], "TrappedOrbit");

    let (code, rep) = binary(&config("[run]\nverb = \"julia\"\n[run.params]\nzeta = [[1.0, 0.0]]\nradii = [-1.0]\n"));
    assert_eq!(code, 5);
    assert_eq!(rep["error"]["exit_code"], 5);

    assert_eq!(HoloError::InvariantViolation("x".into()).exit_code(), 4);
}
