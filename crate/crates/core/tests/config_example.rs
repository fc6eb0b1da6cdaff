use drape_core::backend::{Capability, Mode};
use drape_core::config::EngineConfig;

#[test]
fn shipped_example_config_loads() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../engine.example.toml");
    let cfg = EngineConfig::load(path).unwrap();
    assert!(cfg.data_dir.is_absolute());
    assert_eq!(cfg.planner.seed, Some(1234));
    let gw = cfg.gateway_config();
    gw.validate().unwrap();
    let mode = |c: Capability| gw.backends.iter().find(|d| d.capability == c).unwrap().mode;
    assert_eq!(mode(Capability::Chat), Mode::Remote);
    assert_eq!(mode(Capability::Matting), Mode::Mock);
}
