//! Artifact plumbing. Every output carries `{tool, version, config_hash, seed}`: JSON files
//! embed it under `provenance`, checkpoints store it as metadata, and other files get a
//! `<name>.prov.json` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use pepgen::tensor::Checkpoint;

use crate::config::PipelineConfig;
use crate::failure::{Context, Failure, Result};

pub const TOOL: &str = "pepgen";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    payload: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    provenance: Provenance,
    #[serde(flatten)]
    payload: T,
}

/// Resolved configuration plus the output directory artifacts are read from and written to.
pub struct Run {
    pub cfg: PipelineConfig,
    pub provenance: Provenance,
    pub written: Vec<PathBuf>,
}

impl Run {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        fs::create_dir_all(&cfg.paths.out_dir)
            .data_err(&format!("creating output directory {}", cfg.paths.out_dir.display()))?;
        let provenance = Provenance {
            tool: TOOL.into(),
            version: VERSION.into(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
        };
        Ok(Self { cfg, provenance, written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.paths.out_dir.join(name)
    }

    /// Path of an input artifact; a missing one means an earlier step has not run.
    pub fn input(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Failure::config(format!("missing {}; run `pepgen {producer}` first", p.display())))
        }
    }

    fn record(&mut self, p: PathBuf) -> PathBuf {
        self.written.push(p.clone());
        p
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, payload: &T) -> Result<PathBuf> {
        let env = EnvelopeOut { provenance: &self.provenance, payload };
        let mut bytes = serde_json::to_vec_pretty(&env).data_err("serializing")?;
        bytes.push(b'\n');
        let p = self.path(name);
        fs::write(&p, bytes).data_err(&format!("writing {}", p.display()))?;
        Ok(self.record(p))
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str, producer: &str) -> Result<(Provenance, T)> {
        let p = self.input(name, producer)?;
        let bytes = fs::read(&p).data_err(&format!("reading {}", p.display()))?;
        let env: EnvelopeIn<T> = serde_json::from_slice(&bytes).data_err(&format!("parsing {}", p.display()))?;
        self.warn_on_mismatch(&p, &env.provenance);
        Ok((env.provenance, env.payload))
    }

    /// Writes raw bytes plus a provenance sidecar.
    pub fn write_file(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path(name);
        write_with_sidecar(&p, bytes, &self.provenance)?;
        Ok(self.record(p))
    }

    /// Like `write_file`, for an explicit destination outside the output directory.
    pub fn write_file_at(&mut self, path: &Path, bytes: &[u8]) -> Result<PathBuf> {
        write_with_sidecar(path, bytes, &self.provenance)?;
        Ok(self.record(path.to_owned()))
    }

    pub fn save_checkpoint(&mut self, name: &str, mut ck: Checkpoint) -> Result<PathBuf> {
        ck.set_meta("prov.tool", TOOL);
        ck.set_meta("prov.version", VERSION);
        ck.set_meta("prov.config_hash", self.provenance.config_hash.clone());
        ck.set_meta("prov.seed", self.provenance.seed.to_string());
        let p = self.path(name);
        ck.save(&p).data_err(&format!("writing {}", p.display()))?;
        Ok(self.record(p))
    }

    pub fn load_checkpoint(&self, name: &str, producer: &str) -> Result<Checkpoint> {
        let p = self.input(name, producer)?;
        let ck = Checkpoint::load(&p).model_err(&format!("loading {}", p.display()))?;
        if let Some(prov) = checkpoint_provenance(&ck) {
            self.warn_on_mismatch(&p, &prov);
        }
        Ok(ck)
    }

    fn warn_on_mismatch(&self, p: &Path, prov: &Provenance) {
        if prov.config_hash != self.provenance.config_hash {
            log::warn!(
                "{} was produced under config {} (current {})",
                p.display(),
                prov.config_hash,
                self.provenance.config_hash
            );
        }
    }
}

/// Writes `path` and `<path>.prov.json` next to it.
pub fn write_with_sidecar(path: &Path, bytes: &[u8], prov: &Provenance) -> Result<()> {
    fs::write(path, bytes).data_err(&format!("writing {}", path.display()))?;
    let mut side = serde_json::to_vec_pretty(prov).data_err("serializing")?;
    side.push(b'\n');
    let sp = sidecar_path(path);
    fs::write(&sp, side).data_err(&format!("writing {}", sp.display()))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".prov.json");
    PathBuf::from(s)
}

pub fn checkpoint_provenance(ck: &Checkpoint) -> Option<Provenance> {
    Some(Provenance {
        tool: ck.meta("prov.tool").ok()?.to_owned(),
        version: ck.meta("prov.version").ok()?.to_owned(),
        config_hash: ck.meta("prov.config_hash").ok()?.to_owned(),
        seed: ck.meta_parse("prov.seed").ok()?,
    })
}
