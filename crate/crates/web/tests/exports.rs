use locfisher_web::{fisher_curves, monte_carlo, optimal_time};
use serde_json::Value;

fn parse(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.expect("export failed")).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn curves_have_the_requested_shape_and_ordering() {
    let v = parse(fisher_curves(2.0, 1.0, 1e-4, 3.0, 30));
    assert_eq!(floats(&v["t"]).len(), 30);
    let single = floats(&v["two_level_single"]["J"]);
    let closed = floats(&v["closed_form_single"]);
    for (a, b) in single.iter().zip(&closed) {
        assert!((a - b).abs() <= 1e-3 * b.max(1e-12), "{a} vs {b}");
    }
    for p in ["two_level_iid2", "two_level_ent2"] {
        let (j, big) = (floats(&v[p]["j"]), floats(&v[p]["J"]));
        assert!(j.iter().zip(&big).all(|(j, b)| *b + 1e-12 >= *j), "{p}");
    }
}

#[test]
fn optimal_time_agrees_with_search() {
    let v = parse(optimal_time(2.0, 1.0));
    let a = v["closed_form"]["t_star"].as_f64().unwrap();
    let b = v["numerical"]["t_star"].as_f64().unwrap();
    assert!((a - 2f64.ln()).abs() < 1e-12);
    assert!((a - b).abs() < 1e-6);
}

#[test]
fn monte_carlo_is_seeded_and_near_the_bound() {
    let run = || monte_carlo(2.0, 1.0, 1e-3, 2f64.ln(), 50_000, 20, 5, "optimal");
    assert_eq!(run(), run());
    let v = parse(run());
    let (r, se) = (v["ratio"].as_f64().unwrap(), v["ratio_se"].as_f64().unwrap());
    assert!((r - 1.0).abs() < 5.0 * se, "{r} +- {se}");
}

#[test]
fn bad_inputs_are_errors_not_panics() {
    assert!(fisher_curves(1.0, 1.0, 1e-4, 3.0, 10).is_err());
    assert!(fisher_curves(2.0, 1.0, 1e-4, 3.0, 0).is_err());
    assert!(fisher_curves(2.0, 1.0, 1e-4, -1.0, 10).is_err());
    assert!(monte_carlo(2.0, 1.0, 1e-3, 0.7, 100, 5, 1, "bogus").is_err());
    assert!(monte_carlo(2.0, 1.0, 1e-3, 0.7, 100, 0, 1, "optimal").is_err());
    assert!(monte_carlo(2.0, 1.0, 1e-3, 0.7, 100, 5, 1, "sigma_x").is_err());
}
