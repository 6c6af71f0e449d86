use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

/// Run metadata written into every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub config: RunConfig,
}

impl Provenance {
    pub fn new(command: &str, cfg: &RunConfig, seed: Option<u64>) -> Self {
        Provenance {
            tool: "equicpi",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_hash: cfg.hash(),
            seed,
            config: cfg.clone(),
        }
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("provenance serializes")
    }
}

/// One file (or stdout when `path` is None) to write once everything has
/// been computed.
#[derive(Debug)]
pub struct Artifact {
    pub path: Option<PathBuf>,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(path: Option<PathBuf>, bytes: Vec<u8>) -> Self {
        Artifact { path, bytes }
    }
}

pub fn write_all(artifacts: &[Artifact]) -> Result<(), CliError> {
    for a in artifacts {
        match &a.path {
            Some(p) => std::fs::write(p, &a.bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(&a.bytes)
                    .and_then(|_| out.flush())
                    .map_err(|e| CliError::Io(format!("stdout: {e}")))?
            }
        }
    }
    Ok(())
}

/// CSV with a leading `# provenance {json}` comment line.
pub struct CsvOut {
    w: csv::Writer<Vec<u8>>,
}

impl CsvOut {
    pub fn new(prov: &Provenance, header: &[&str]) -> Self {
        let mut buf = b"# provenance ".to_vec();
        serde_json::to_writer(&mut buf, &prov.to_value()).expect("provenance serializes");
        buf.push(b'\n');
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(header).expect("write to memory");
        CsvOut { w }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields).expect("write to memory");
    }

    pub fn finish(self) -> Vec<u8> {
        self.w.into_inner().expect("flush to memory")
    }
}

/// Pretty JSON object with sorted keys: `{"provenance": ..., <body fields>}`.
pub fn json_doc<T: Serialize>(prov: &Provenance, body: &T) -> Vec<u8> {
    let mut v = serde_json::to_value(body).expect("body serializes");
    let obj = match v {
        serde_json::Value::Object(ref mut m) => m,
        _ => unreachable!("artifact bodies are structs"),
    };
    obj.insert("provenance".into(), prov.to_value());
    let mut out = serde_json::to_vec_pretty(&v).expect("json serializes");
    out.push(b'\n');
    out
}

pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
