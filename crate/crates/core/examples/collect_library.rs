//! Collects a small trajectory library with a cheap oracle, saves it, and
//! shows that a flipped byte is caught on load.

use bsd_planner::datastore::{collect_library, load_library, save_library, CollectConfig};
use bsd_planner::dynamics::{SystemId, SystemSpec};
use bsd_planner::mbd::MbdConfig;

fn main() -> bsd_planner::Result<()> {
    let s = SystemSpec::new(SystemId::Tt2d);
    let cfg = CollectConfig {
        n_target: 20,
        oracle: MbdConfig {
            n_diffuse: 20,
            candidates: 128,
            ..MbdConfig::default()
        },
        ..CollectConfig::default()
    };
    let lib = collect_library(&s, &cfg, 42)?;
    let st = lib.reward_stats();
    println!("{} records, reward mean {:.3} in [{:.3}, {:.3}]", lib.len(), st.mean, st.min, st.max);

    let dir = std::env::temp_dir().join("bsd-collect-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("TT2D.ndjson");
    save_library(&lib, &path)?;
    let back = load_library(&path, Some(SystemId::Tt2d))?;
    assert_eq!(back.records(), lib.records());
    println!("round trip ok: {}", path.display());

    let mut bytes = std::fs::read(&path)?;
    let k = bytes.len() / 2;
    bytes[k] ^= 0x01;
    std::fs::write(&path, &bytes)?;
    match load_library(&path, None) {
        Err(e) => println!("corrupted copy rejected: {e}"),
        Ok(_) => println!("corruption went unnoticed"),
    }
    Ok(())
}
