//! On-disk formats. JSON-lines files open with a header line carrying
//! `format_version`; readers reject other versions.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behaviors::{Demonstration, Episode, EXPLOIT_EPISODES};
use crate::error::{Error, Result};
use crate::gridworld::EnvInstance;
use crate::neural::Checkpoint;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancesHeader {
    pub format_version: u32,
    pub kind: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemosHeader {
    pub format_version: u32,
    pub kind: String,
    /// Per demonstration: indices into the episode lines that follow the
    /// header, exploration episode first. Identical episodes are stored once.
    pub demonstrations: Vec<Vec<usize>>,
    pub episode_count: usize,
}

pub fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

fn check_kind(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Format(format!("expected a `{expected}` file, found `{found}`")));
    }
    Ok(())
}

fn write_lines<W: Write>(mut w: W, header: &impl Serialize, lines: impl IntoIterator<Item = String>) -> Result<()> {
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for line in lines {
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn parse_line<T: DeserializeOwned>(line: &str, number: usize) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Format(format!("line {number}: {e}")))
}

/// Reads the header and the body lines; the header's `format_version` is
/// checked before anything else is parsed.
fn read_lines<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<String>)> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{} is empty", path.display())))??;
    #[derive(Deserialize)]
    struct Version {
        format_version: u32,
    }
    let v: Version = parse_line(&first, 1)?;
    check_version(v.format_version)?;
    let header = parse_line(&first, 1)?;
    let body = lines.collect::<std::io::Result<Vec<_>>>()?;
    Ok((header, body.into_iter().filter(|l| !l.trim().is_empty()).collect()))
}

pub fn write_instances(path: &Path, instances: &[EnvInstance]) -> Result<()> {
    let header = InstancesHeader {
        format_version: FORMAT_VERSION,
        kind: "instances".into(),
        count: instances.len(),
    };
    let lines = instances
        .iter()
        .map(serde_json::to_string)
        .collect::<serde_json::Result<Vec<_>>>()?;
    write_lines(BufWriter::new(fs::File::create(path)?), &header, lines)
}

pub fn read_instances(path: &Path) -> Result<Vec<EnvInstance>> {
    let (header, lines): (InstancesHeader, _) = read_lines(path)?;
    check_kind(&header.kind, "instances")?;
    let instances = lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let inst: EnvInstance = parse_line(l, i + 2)?;
            inst.validate()?;
            Ok(inst)
        })
        .collect::<Result<Vec<_>>>()?;
    if instances.len() != header.count {
        return Err(Error::Format(format!(
            "header announces {} instances, file holds {}",
            header.count,
            instances.len()
        )));
    }
    Ok(instances)
}

pub fn write_demos(path: &Path, demos: &[Demonstration]) -> Result<()> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut lines = Vec::new();
    let mut demonstrations = Vec::with_capacity(demos.len());
    for demo in demos {
        let mut refs = Vec::with_capacity(1 + EXPLOIT_EPISODES);
        for ep in demo.episodes() {
            let line = serde_json::to_string(ep)?;
            let next = lines.len();
            let id = *index.entry(line.clone()).or_insert(next);
            if id == next {
                lines.push(line);
            }
            refs.push(id);
        }
        demonstrations.push(refs);
    }
    let header = DemosHeader {
        format_version: FORMAT_VERSION,
        kind: "demos".into(),
        demonstrations,
        episode_count: lines.len(),
    };
    write_lines(BufWriter::new(fs::File::create(path)?), &header, lines)
}

pub fn read_demos(path: &Path) -> Result<Vec<Demonstration>> {
    let (header, lines): (DemosHeader, _) = read_lines(path)?;
    check_kind(&header.kind, "demos")?;
    if lines.len() != header.episode_count {
        return Err(Error::Format(format!(
            "header announces {} episodes, file holds {}",
            header.episode_count,
            lines.len()
        )));
    }
    let episodes = lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let ep: Episode = parse_line(l, i + 2)?;
            ep.validate()?;
            Ok(ep)
        })
        .collect::<Result<Vec<_>>>()?;
    header
        .demonstrations
        .iter()
        .map(|refs| {
            let get = |&i: &usize| {
                episodes
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Format(format!("episode reference {i} out of range")))
            };
            let (first, rest) = refs
                .split_first()
                .ok_or_else(|| Error::Format("demonstration without episodes".into()))?;
            Ok(Demonstration {
                exploration_episode: get(first)?,
                exploit_episodes: rest.iter().map(get).collect::<Result<_>>()?,
            })
        })
        .collect()
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    #[derive(Deserialize)]
    struct Version {
        format_version: u32,
    }
    let text = fs::read_to_string(path)?;
    let v: Version = serde_json::from_str(&text)?;
    check_version(v.format_version)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behaviors::generate_demonstrations;
    use crate::gridworld::EnvConfig;
    use crate::rng;

    fn instances() -> Vec<EnvInstance> {
        (0..3)
            .map(|seed| {
                EnvInstance::from_config(&EnvConfig {
                    n: 4,
                    episode_cap: 2000,
                    seed,
                })
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn instances_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("instances.jsonl");
        let insts = instances();
        write_instances(&path, &insts).unwrap();
        assert_eq!(read_instances(&path).unwrap(), insts);
    }

    #[test]
    fn demos_round_trip_and_share_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        let demos = generate_demonstrations(&instances(), 2, &mut rng::from_seed(0)).unwrap();
        write_demos(&path, &demos).unwrap();
        assert_eq!(read_demos(&path).unwrap(), demos);
        let text = fs::read_to_string(&path).unwrap();
        let mut distinct: Vec<&Episode> = Vec::new();
        for ep in demos.iter().flat_map(|d| d.episodes()) {
            if !distinct.contains(&ep) {
                distinct.push(ep);
            }
        }
        assert!(distinct.len() < demos.len() * (1 + EXPLOIT_EPISODES));
        assert_eq!(text.lines().count(), 1 + distinct.len());
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("instances.jsonl");
        write_instances(&path, &instances()).unwrap();
        let text = fs::read_to_string(&path).unwrap().replacen("\"format_version\":1", "\"format_version\":9", 1);
        fs::write(&path, text).unwrap();
        assert!(matches!(read_instances(&path), Err(Error::FormatVersion { found: 9, .. })));
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        write_instances(&path, &instances()).unwrap();
        assert!(matches!(read_demos(&path), Err(Error::Format(_))));
    }

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
