//! Stage artifacts on disk. Every file is written to a temporary sibling and
//! renamed into place, so a failed command never leaves a truncated output.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Every artifact a command can read or write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Artifact {
    Corpus,
    Designated,
    Checkpoint,
    TrainReport,
    Design(usize),
    Responses,
    Encoder(usize),
    Alignment,
    Layers,
    Attributions,
    Metrics,
    Masking,
}

impl Artifact {
    pub fn file_name(self) -> String {
        match self {
            Artifact::Corpus => "corpus.json".into(),
            Artifact::Designated => "designated.json".into(),
            Artifact::Checkpoint => "model.balm".into(),
            Artifact::TrainReport => "train_report.json".into(),
            Artifact::Design(l) => format!("design_layer{l}.json"),
            Artifact::Responses => "responses.json".into(),
            Artifact::Encoder(l) => format!("encoder_layer{l}.json"),
            Artifact::Alignment => "alignment.csv".into(),
            Artifact::Layers => "layers.json".into(),
            Artifact::Attributions => "attributions.jsonl".into(),
            Artifact::Metrics => "metrics.json".into(),
            Artifact::Masking => "masking.json".into(),
        }
    }

    /// The command that writes this artifact.
    pub fn producer(self) -> &'static str {
        match self {
            Artifact::Corpus | Artifact::Designated => "synth",
            Artifact::Checkpoint | Artifact::TrainReport => "train",
            Artifact::Design(_) | Artifact::Responses => "embed",
            Artifact::Encoder(_) | Artifact::Alignment | Artifact::Layers => "fit",
            Artifact::Attributions => "attribute",
            Artifact::Metrics => "analyze",
            Artifact::Masking => "mask",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub synth: u64,
    pub model: u64,
    pub train: u64,
    pub analysis: u64,
    pub masking: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub brainalign: String,
    pub brainalign_cli: String,
}

/// Provenance written next to the outputs of every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub seeds: Seeds,
    pub versions: Versions,
    pub stages: Vec<StageTime>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let mut f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(|e| io_err(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), total))
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Artifact I/O for one command, recording digests and stage timings.
pub struct Store<'a> {
    cfg: &'a RunConfig,
    command: &'static str,
    dir: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    stages: Vec<StageTime>,
}

impl<'a> Store<'a> {
    pub fn open(cfg: &'a RunConfig, command: &'static str) -> Result<Self> {
        let dir = cfg.paths.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self {
            cfg,
            command,
            dir,
            inputs: Vec::new(),
            outputs: Vec::new(),
            stages: Vec::new(),
        })
    }

    /// Where `a` is read from, honoring path overrides in the config.
    pub fn input_path(&self, a: Artifact) -> PathBuf {
        let p = &self.cfg.paths;
        let external = match a {
            Artifact::Corpus => p.corpus.clone(),
            Artifact::Responses => p.responses.clone(),
            Artifact::Checkpoint => p.checkpoint.clone(),
            _ => None,
        };
        external.unwrap_or_else(|| self.dir.join(a.file_name()))
    }

    pub fn exists(&self, a: Artifact) -> bool {
        self.input_path(a).is_file()
    }

    /// Fails with a dependency error naming the producer when `a` is missing.
    pub fn require(&mut self, a: Artifact) -> Result<PathBuf> {
        let path = self.input_path(a);
        if !path.is_file() {
            return Err(CliError::Dependency {
                path,
                producer: a.producer(),
            });
        }
        if !self.inputs.contains(&path) {
            self.inputs.push(path.clone());
        }
        Ok(path)
    }

    pub fn reader(&mut self, a: Artifact) -> Result<BufReader<File>> {
        let path = self.require(a)?;
        let f = File::open(&path).map_err(|e| io_err(&path, e))?;
        Ok(BufReader::new(f))
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(&mut self, a: Artifact) -> Result<T> {
        let path = self.require(a)?;
        let r = self.reader(a)?;
        serde_json::from_reader(r).map_err(|e| CliError::Core {
            context: format!("reading {}", path.display()),
            source: e.into(),
        })
    }

    /// Writes `bytes` to `name` in the output directory atomically.
    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        tmp.write_all(bytes).map_err(|e| io_err(&path, e))?;
        tmp.as_file().sync_all().map_err(|e| io_err(&path, e))?;
        tmp.persist(&path).map_err(|e| io_err(&path, e.error))?;
        if !self.outputs.contains(&path) {
            self.outputs.push(path);
        }
        Ok(())
    }

    pub fn write(&mut self, a: Artifact, bytes: &[u8]) -> Result<()> {
        self.write_bytes(&a.file_name(), bytes)
    }

    pub fn write_json<T: Serialize>(&mut self, a: Artifact, value: &T) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(value).expect("artifacts serialize");
        self.write(a, &bytes)
    }

    /// Runs one named stage and records its wall-clock time.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self)?;
        self.stages.push(StageTime {
            stage: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        log::info!("{}: {name} took {:.2}s", self.command, start.elapsed().as_secs_f64());
        Ok(out)
    }

    fn digests(&self, paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
        paths
            .iter()
            .map(|p| {
                let (sha256, bytes) = sha256_file(p)?;
                let shown = p.strip_prefix(&self.dir).unwrap_or(p);
                Ok(FileDigest {
                    path: shown.display().to_string(),
                    sha256,
                    bytes,
                })
            })
            .collect()
    }

    /// Writes the manifest for this command.
    pub fn finish(self) -> Result<()> {
        let c = self.cfg;
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: c.clone(),
            seeds: Seeds {
                synth: c.synth.seed,
                model: c.model.seed,
                train: c.train.seed,
                analysis: c.analysis.seed,
                masking: c.masking.seeds.clone(),
            },
            versions: Versions {
                brainalign: brainalign::VERSION.to_string(),
                brainalign_cli: env!("CARGO_PKG_VERSION").to_string(),
            },
            stages: self.stages.clone(),
            inputs: self.digests(&self.inputs)?,
            outputs: self.digests(&self.outputs)?,
        };
        let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        let name = RunManifest::file_name(self.command);
        let mut this = self;
        this.write_bytes(&name, &bytes)
    }
}

/// Checks every output digest listed in the manifests of `dir`; returns the
/// files whose contents no longer match.
pub fn verify_manifests(dir: &Path) -> Result<Vec<String>> {
    let mut bad = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut names: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    names.sort();
    for m in names {
        let text = std::fs::read(&m).map_err(|e| io_err(&m, e))?;
        let manifest: RunManifest = serde_json::from_slice(&text).map_err(|e| CliError::Core {
            context: format!("reading {}", m.display()),
            source: e.into(),
        })?;
        for out in &manifest.outputs {
            let path = dir.join(&out.path);
            match sha256_file(&path) {
                Ok((sha, _)) if sha == out.sha256 => {}
                _ => bad.push(out.path.clone()),
            }
        }
    }
    Ok(bad)
}
