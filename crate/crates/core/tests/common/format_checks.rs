//! Round trips, corruption handling and seed determinism.

use std::path::Path;

use diffail::ail::{train, Algo, TrainConfig, TrainedModel};
use diffail::envs::EnvId;
use diffail::expert::{generate_expert, ExpertDataset, ExpertMethod, SacExpertConfig};
use diffail::numerics::Checkpoint;
use diffail::{Error, FormatError};

pub fn pointmass_expert(n: usize, seed: u64) -> ExpertDataset {
    generate_expert(EnvId::PointMass, ExpertMethod::Lqr, n, seed, &SacExpertConfig::default())
        .unwrap()
        .0
}

/// A training run small enough for the default test tier.
pub fn small_config(dir: &Path, algo: Algo, tag: &str) -> TrainConfig {
    let mut cfg = TrainConfig::new(EnvId::PointMass, dir.join("expert.dax"));
    cfg.algo = algo;
    cfg.steps = 120;
    cfg.warmup = 40;
    cfg.batch_size = 16;
    cfg.eval_interval = 40;
    cfg.eval_episodes = 2;
    cfg.disc_hidden = 16;
    cfg.disc_layers = 2;
    cfg.sac_hidden = 16;
    cfg.seed = 3;
    cfg.deterministic_log = true;
    cfg.log = Some(dir.join(format!("{tag}.csv")));
    cfg.checkpoint = Some(dir.join(format!("{tag}.dail")));
    cfg
}

fn is_bad_magic<T>(r: &Result<T, Error>) -> bool {
    matches!(r, Err(Error::Format(FormatError::BadMagic(_))))
}

fn is_version<T>(r: &Result<T, Error>) -> bool {
    matches!(r, Err(Error::Format(FormatError::UnsupportedVersion { .. })))
}

fn is_truncated<T>(r: &Result<T, Error>) -> bool {
    matches!(r, Err(Error::Format(FormatError::Truncated)))
}

fn corruption_checks<T>(name: &str, bytes: &[u8], dir: &Path, load: impl Fn(&Path) -> Result<T, Error>) -> Vec<(String, bool)> {
    let mut out = Vec::new();
    let path = dir.join(format!("corrupt_{name}"));

    let mut b = bytes.to_vec();
    b[0] ^= 0xff;
    std::fs::write(&path, &b).unwrap();
    let r = load(&path);
    out.push((format!("{name}: bad magic"), is_bad_magic(&r)));

    let mut b = bytes.to_vec();
    let v = u32::from_le_bytes(b[4..8].try_into().unwrap()) + 1;
    b[4..8].copy_from_slice(&v.to_le_bytes());
    std::fs::write(&path, &b).unwrap();
    let r = load(&path);
    let text = r.as_ref().err().map(|e| e.to_string()).unwrap_or_default();
    out.push((format!("{name}: version + 1"), is_version(&r) && text.contains("unsupported version")));

    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    out.push((format!("{name}: truncated"), is_truncated(&load(&path))));
    out
}

/// Every A9 format property, named.
pub fn format_checks(dir: &Path) -> Vec<(String, bool)> {
    let mut out = Vec::new();
    let data = pointmass_expert(4, 11);
    let bytes = data.encode();
    let p = dir.join("fmt.dax");
    data.save(&p).unwrap();
    let back = ExpertDataset::load(&p).unwrap();
    out.push(("dataset round trip is byte-stable".into(), back.encode() == bytes && back == data));
    let text = ExpertDataset::decode(&{
        let mut b = bytes.clone();
        b[0] = b'X';
        b
    })
    .map(|_| ())
    .map_err(|e| e.to_string())
    .err()
    .unwrap_or_default();
    out.push(("dataset bad magic message".into(), text.contains("not a DiffAIL dataset")));
    out.extend(corruption_checks("dataset", &bytes, dir, |p| ExpertDataset::load(p)));

    data.save(dir.join("expert.dax")).unwrap();
    let cfg = small_config(dir, Algo::DiffAil, "fmt");
    train(&cfg).unwrap();
    let ck_path = cfg.checkpoint.clone().unwrap();
    let ck_bytes = std::fs::read(&ck_path).unwrap();
    let model = TrainedModel::load(&ck_path).unwrap();
    let again = dir.join("again.dail");
    model.save(&again).unwrap();
    out.push((
        "checkpoint round trip is byte-stable".into(),
        std::fs::read(&again).unwrap() == ck_bytes,
    ));
    let raw = Checkpoint::decode(&ck_bytes).unwrap();
    out.push(("checkpoint re-encodes identically".into(), raw.encode() == ck_bytes));
    out.extend(corruption_checks("checkpoint", &ck_bytes, dir, |p| TrainedModel::load(p)));
    out
}

/// Runs the same configuration twice and compares logs and checkpoints.
pub fn rerun_identical(dir: &Path, algo: Algo) -> bool {
    pointmass_expert(4, 11).save(dir.join("expert.dax")).unwrap();
    let a = small_config(dir, algo, "first");
    let b = small_config(dir, algo, "second");
    train(&a).unwrap();
    train(&b).unwrap();
    let read = |p: &Option<std::path::PathBuf>| std::fs::read(p.as_ref().unwrap()).unwrap();
    let (la, lb) = (read(&a.log), read(&b.log));
    // The preamble names the output files; everything else must match.
    let body = |v: &[u8]| -> String {
        String::from_utf8_lossy(v)
            .lines()
            .filter(|l| !l.starts_with("# log=") && !l.starts_with("# checkpoint="))
            .collect::<Vec<_>>()
            .join("\n")
    };
    body(&la) == body(&lb) && read(&a.checkpoint) == read(&b.checkpoint)
}
