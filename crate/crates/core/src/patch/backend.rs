use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::volume::Volume3D;

/// A segmentation model run on one patch at a time.
///
/// Every input and output channel is a patch-sized grid. Outputs must be
/// probabilities in `[0, 1]` and the same inputs must give the same outputs.
pub trait ModelBackend: Send + Sync {
    fn describe(&self) -> String;
    fn predict(&self, inputs: &[Volume3D]) -> Result<Vec<Volume3D>>;
}

fn input_channel(inputs: &[Volume3D], channel: usize) -> Result<&Volume3D> {
    inputs.get(channel).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "backend reads channel {channel} but only {} were given",
            inputs.len()
        ))
    })
}

/// Emits one constant channel per entry of `values`.
#[derive(Debug, Clone)]
pub struct ConstantBackend {
    pub values: Vec<f32>,
}

impl ModelBackend for ConstantBackend {
    fn describe(&self) -> String {
        format!("constant {:?}", self.values)
    }

    fn predict(&self, inputs: &[Volume3D]) -> Result<Vec<Volume3D>> {
        let g = input_channel(inputs, 0)?.geometry();
        self.values
            .iter()
            .map(|&v| Volume3D::filled(g.clone(), v))
            .collect()
    }
}

/// Returns input `channel` unchanged.
#[derive(Debug, Clone)]
pub struct IdentityBackend {
    pub channel: usize,
}

impl ModelBackend for IdentityBackend {
    fn describe(&self) -> String {
        format!("identity of channel {}", self.channel)
    }

    fn predict(&self, inputs: &[Volume3D]) -> Result<Vec<Volume3D>> {
        Ok(vec![input_channel(inputs, self.channel)?.clone()])
    }
}

/// First output is `1` where input `channel` exceeds `threshold`, else `0`;
/// the remaining `outputs - 1` channels are all zero.
#[derive(Debug, Clone)]
pub struct ThresholdBackend {
    pub channel: usize,
    pub threshold: f32,
    pub outputs: usize,
}

impl ModelBackend for ThresholdBackend {
    fn describe(&self) -> String {
        format!("channel {} > {}", self.channel, self.threshold)
    }

    fn predict(&self, inputs: &[Volume3D]) -> Result<Vec<Volume3D>> {
        let src = input_channel(inputs, self.channel)?;
        let t = self.threshold;
        let mut out = vec![src.map(|v| if v > t { 1.0 } else { 0.0 })?];
        for _ in 1..self.outputs.max(1) {
            out.push(Volume3D::filled(src.geometry().clone(), 0.0)?);
        }
        Ok(out)
    }
}

/// Runs `program args.. --in <dir> --out <dir>` once per patch. Inputs are
/// written as `ch0.json/raw`, `ch1.json/raw`, ... and outputs are read back
/// under the same names from the output directory.
#[derive(Debug, Clone)]
pub struct ExternalProcessBackend {
    pub program: PathBuf,
    pub args: Vec<String>,
}

fn channel_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("ch{k}.json"))
}

impl ModelBackend for ExternalProcessBackend {
    fn describe(&self) -> String {
        format!("external {}", self.program.display())
    }

    fn predict(&self, inputs: &[Volume3D]) -> Result<Vec<Volume3D>> {
        let work = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let (in_dir, out_dir) = (work.path().join("in"), work.path().join("out"));
        for d in [&in_dir, &out_dir] {
            std::fs::create_dir(d).map_err(|e| Error::io(d, e))?;
        }
        for (k, ch) in inputs.iter().enumerate() {
            io::write_volume(ch, channel_path(&in_dir, k))?;
        }
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg("--in")
            .arg(&in_dir)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .map_err(|e| Error::io(&self.program, e))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(Error::InvalidParameter(format!(
                "{} exited with {}: {}",
                self.program.display(),
                output.status,
                stderr.trim()
            )));
        }
        let mut out = Vec::new();
        while channel_path(&out_dir, out.len()).exists() {
            out.push(io::read_volume(channel_path(&out_dir, out.len()))?);
        }
        Ok(out)
    }
}

/// Serializable choice of backend, as found in pipeline configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendSpec {
    Constant {
        values: Vec<f32>,
    },
    Identity {
        #[serde(default)]
        channel: usize,
    },
    Threshold {
        #[serde(default)]
        channel: usize,
        threshold: f32,
        #[serde(default = "one")]
        outputs: usize,
    },
    External {
        command: PathBuf,
        #[serde(default)]
        args: Vec<String>,
    },
}

fn one() -> usize {
    1
}

impl BackendSpec {
    pub fn build(&self) -> Box<dyn ModelBackend> {
        match self.clone() {
            BackendSpec::Constant { values } => Box::new(ConstantBackend { values }),
            BackendSpec::Identity { channel } => Box::new(IdentityBackend { channel }),
            BackendSpec::Threshold {
                channel,
                threshold,
                outputs,
            } => Box::new(ThresholdBackend {
                channel,
                threshold,
                outputs,
            }),
            BackendSpec::External { command, args } => Box::new(ExternalProcessBackend {
                program: command,
                args,
            }),
        }
    }
}
