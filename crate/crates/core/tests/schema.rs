//! `summary.json` of every command against the shipped schema, checked with
//! a validator for the subset of JSON Schema the file uses.

use darcy_mlmc::experiment::{self, Command, ExperimentConfig};
use serde_json::{json, Value};

const SCHEMA: &str = include_str!("../schemas/summary.schema.json");

fn resolve<'a>(root: &'a Value, r: &str) -> &'a Value {
    let name = r.strip_prefix("#/$defs/").expect("local ref");
    &root["$defs"][name]
}

fn type_ok(t: &str, v: &Value) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "number" => v.is_number(),
        "integer" => v.is_i64() || v.is_u64(),
        other => panic!("unsupported type {other}"),
    }
}

fn validate(root: &Value, schema: &Value, v: &Value, path: &str) -> Result<(), String> {
    let s = schema.as_object().expect("schema object");
    if let Some(r) = s.get("$ref") {
        return validate(root, resolve(root, r.as_str().unwrap()), v, path);
    }
    if let Some(t) = s.get("type") {
        let ok = match t {
            Value::String(t) => type_ok(t, v),
            Value::Array(ts) => ts.iter().any(|t| type_ok(t.as_str().unwrap(), v)),
            _ => panic!("bad type keyword"),
        };
        if !ok {
            return Err(format!("{path}: expected {t}, got {v}"));
        }
    }
    if let Some(e) = s.get("enum") {
        if !e.as_array().unwrap().contains(v) {
            return Err(format!("{path}: {v} not in {e}"));
        }
    }
    if let Some(alts) = s.get("oneOf") {
        let hits = alts
            .as_array()
            .unwrap()
            .iter()
            .filter(|a| validate(root, a, v, path).is_ok())
            .count();
        if hits != 1 {
            return Err(format!("{path}: matches {hits} alternatives"));
        }
    }
    match v {
        Value::Object(map) => {
            for r in s.get("required").and_then(Value::as_array).into_iter().flatten() {
                if !map.contains_key(r.as_str().unwrap()) {
                    return Err(format!("{path}: missing {r}"));
                }
            }
            let props = s.get("properties").and_then(Value::as_object);
            for (k, child) in map {
                match props.and_then(|p| p.get(k)) {
                    Some(ps) => validate(root, ps, child, &format!("{path}.{k}"))?,
                    None if s.get("additionalProperties") == Some(&Value::Bool(false)) => {
                        return Err(format!("{path}: unexpected key {k}"));
                    }
                    None => {}
                }
            }
        }
        Value::Array(items) => {
            if let Some(is) = s.get("items") {
                for (i, item) in items.iter().enumerate() {
                    validate(root, is, item, &format!("{path}[{i}]"))?;
                }
            }
        }
        Value::Number(n) => {
            let x = n.as_f64().unwrap();
            if s.get("minimum").and_then(Value::as_f64).is_some_and(|m| x < m) {
                return Err(format!("{path}: {x} below minimum"));
            }
            if s.get("maximum").and_then(Value::as_f64).is_some_and(|m| x > m) {
                return Err(format!("{path}: {x} above maximum"));
            }
            if s.get("exclusiveMinimum")
                .and_then(Value::as_f64)
                .is_some_and(|m| x <= m)
            {
                return Err(format!("{path}: {x} not above exclusive minimum"));
            }
        }
        Value::String(st) => {
            let len = st.chars().count() as u64;
            if s.get("minLength").and_then(Value::as_u64).is_some_and(|m| len < m)
                || s.get("maxLength").and_then(Value::as_u64).is_some_and(|m| len > m)
            {
                return Err(format!("{path}: length {len} out of range"));
            }
        }
        _ => {}
    }
    Ok(())
}

fn check(v: &Value) -> Result<(), String> {
    let schema: Value = serde_json::from_str(SCHEMA).unwrap();
    validate(&schema, &schema, v, "$")
}

const LAYERS: &str = r#"
[permeability]
model = "piecewise_constant"
layers = [{ mu = 0.0, sigma2 = 1.0 }, { mu = 0.0, sigma2 = 1.0 }, { mu = 0.0, sigma2 = 1.0 }]
"#;

const FIELD: &str = r#"
[permeability]
model = "lognormal"
mu = 0.0
sigma2 = 1.0
lambda = 0.3
norm = 1
"#;

fn summary(command: Command, problem: &str, perm: &str, rest: &str) -> Value {
    let text = format!("[problem]\n{problem}\n{perm}\n{rest}");
    let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
    experiment::run(command, &cfg).unwrap().summary()
}

fn all_summaries() -> Vec<Value> {
    let mp1 = "kind = \"point_average\"\ndim = 2";
    let mp2 = "kind = \"outflow\"\ndim = 2";
    vec![
        summary(
            Command::Convergence,
            mp1,
            LAYERS,
            "[grid]\nlevels = 2\nreference_level = 3\n[sampling]\nsamples = 10",
        ),
        summary(Command::CgvCompare, mp2, FIELD, "[grid]\nm0 = 4\nlevels = 2\n[sampling]\nsamples = 10"),
        // zero variance: no reduction factor
        summary(
            Command::CgvCompare,
            mp2,
            "[permeability]\nmodel = \"constant\"\nvalue = 2.0",
            "[grid]\nm0 = 4\nlevels = 1\n[sampling]\nsamples = 4",
        ),
        summary(Command::SolverBench, mp1, FIELD, "[bench]\nm = [8, 16]\nsystems = 2"),
        summary(
            Command::Mlmc,
            mp2,
            LAYERS,
            "[grid]\nm0 = 4\n[sampling]\neps = [0.2, 0.1]\nestimator = \"both\"\nwarmup = 10\ninitial_level = 1\nmax_level = 2",
        ),
        summary(
            Command::Mlmc,
            mp2,
            LAYERS,
            "[grid]\nm0 = 4\n[sampling]\neps = [0.1]\nwarmup = 10\ninitial_level = 1\nmax_level = 2",
        ),
    ]
}

#[test]
fn every_command_matches_the_schema() {
    let all = all_summaries();
    for s in &all {
        check(s).unwrap_or_else(|e| panic!("{e}\n{s:#}"));
        let hash = s["config_hash"].as_str().unwrap();
        assert!(hash.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
    }
    assert_eq!(all[2]["results"]["rows"][0]["reduction"], Value::Null);
    assert_eq!(all[2]["results"]["rows"][0]["var_y_standard"], json!(0.0));
    assert_eq!(all[5]["results"]["mc"], json!([]));
    assert_eq!(all[5]["results"]["mlmc_cost_exponent"], Value::Null);
}

#[test]
fn schema_rejects_broken_summaries() {
    let s = &all_summaries()[0];
    let mut missing = s.clone();
    missing.as_object_mut().unwrap().remove("seed");
    assert!(check(&missing).is_err());

    let mut extra = s.clone();
    extra["results"]["rows"][0]["unexpected"] = json!(1);
    assert!(check(&extra).is_err());

    let mut wrong = s.clone();
    wrong["results"]["rows"][0]["samples"] = json!("ten");
    assert!(check(&wrong).is_err());

    let mut negative = s.clone();
    negative["results"]["rows"][1]["var_y"] = json!(-1.0);
    assert!(check(&negative).is_err());

    let mut command = s.clone();
    command["command"] = json!("plot");
    assert!(check(&command).is_err());
}
