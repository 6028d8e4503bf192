//! Golden dump of one sorted observation. Regenerate with `UPDATE_GOLDEN=1`.

use std::path::PathBuf;

use dwarl::dwa::DwaConfig;
use dwarl::env::{EnvConfig, NavEnv};
use dwarl::eval::{DwaPlanner, Planner};
use dwarl::observation::{ObservationBuilder, ObservationConfig};
use dwarl::world::ScenarioConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn dump() -> String {
    let obs = ObservationConfig {
        k: 4,
        n: 3,
        ..ObservationConfig::default()
    };
    let cfg = EnvConfig {
        history: obs.n,
        ..EnvConfig::default()
    };
    let scenario = ScenarioConfig::builtin("dense-dynamic").unwrap();
    let mut env = NavEnv::new(scenario, cfg, 7).unwrap();
    let planner = DwaPlanner::new(DwaConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..5 {
        let cmd = planner.command(&env, &mut rng).unwrap();
        env.step(cmd).unwrap();
    }
    let builder = ObservationBuilder::new(obs, cfg.limits).unwrap();
    env.observation(&builder).unwrap().debug_string()
}

fn close(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            (x - y).abs() <= 1e-9 * x.abs().max(1.0)
        }
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(a, b)| close(a, b)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| close(v, w)))
        }
        _ => a == b,
    }
}

#[test]
fn dense_dynamic_observation_matches_golden() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/dense_dynamic_k4_n3.json");
    let got = dump();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &got).unwrap();
    }
    let want = std::fs::read_to_string(&path).unwrap();
    let (g, w): (Value, Value) = (serde_json::from_str(&got).unwrap(), serde_json::from_str(&want).unwrap());
    assert!(close(&g, &w), "observation dump drifted from {}", path.display());
}
