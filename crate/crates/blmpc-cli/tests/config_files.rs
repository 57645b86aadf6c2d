//! Keeps the shipped `configs/*.toml` files in lockstep with the built-in
//! defaults. Regenerate them with
//! `cargo test -p blmpc-cli --test config_files -- --ignored`.

use blmpc_cli::config::{default_config, load_config, TaskId};
use std::path::PathBuf;

const TASKS: [(TaskId, &str); 4] = [
    (TaskId::DoubleIntegrator, "double_integrator.toml"),
    (TaskId::Pendulum, "pendulum.toml"),
    (TaskId::Cartpole, "cartpole.toml"),
    (TaskId::QuadraticSynthetic, "quadratic_synthetic.toml"),
];

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
#[ignore = "writes the config files; run explicitly to regenerate"]
fn regenerate_shipped_configs() {
    for (id, file) in TASKS {
        let text = toml::to_string_pretty(&default_config(id)).unwrap();
        std::fs::write(configs_dir().join(file), text).unwrap();
    }
}

#[test]
fn shipped_configs_match_builtin_defaults() {
    for (id, file) in TASKS {
        let path = configs_dir().join(file);
        let loaded = load_config(&path)
            .unwrap_or_else(|e| panic!("{file} does not load: {e}"));
        let expected = toml::to_string_pretty(&default_config(id)).unwrap();
        let on_disk = std::fs::read_to_string(&path).unwrap();
        assert_eq!(on_disk, expected, "{file} is out of sync with built-in defaults");
        assert_eq!(loaded.task.id, id);
    }
}
