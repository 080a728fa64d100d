//! JSON schemas for MDPs, rewards and policies, and the JSON Lines
//! trajectory format (one header line with `meta`, then one record per line).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{LinearRewardClass, Policy, RewardFunction, TabularMdp};
use crate::sampling::{DatasetMeta, Trajectory, TrajectoryDataset};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpFile {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub d0: Vec<f64>,
    pub p: Vec<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RewardFile {
    Table {
        #[serde(default)]
        id: Option<String>,
        r: Vec<Vec<Vec<f64>>>,
    },
    Linear {
        #[serde(default)]
        id: Option<String>,
        phi: Vec<Vec<Vec<f64>>>,
        theta: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RewardsFile {
    Many(Vec<RewardFile>),
    One(RewardFile),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFile {
    pub pi: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeaderLine {
    meta: DatasetMeta,
}

fn nested3(values: &Array3<f64>) -> Vec<Vec<Vec<f64>>> {
    values
        .outer_iter()
        .map(|m| m.outer_iter().map(|r| r.to_vec()).collect())
        .collect()
}

fn flat3(v: &[Vec<Vec<f64>>], what: &str) -> Result<Array3<f64>> {
    let d0 = v.len();
    let d1 = v.first().map_or(0, Vec::len);
    let d2 = v.first().and_then(|x| x.first()).map_or(0, Vec::len);
    let mut flat = Vec::with_capacity(d0 * d1 * d2);
    for m in v {
        if m.len() != d1 {
            return Err(Error::DimensionMismatch(format!(
                "{what}: ragged second dimension"
            )));
        }
        for r in m {
            if r.len() != d2 {
                return Err(Error::DimensionMismatch(format!(
                    "{what}: ragged third dimension"
                )));
            }
            flat.extend_from_slice(r);
        }
    }
    Array3::from_shape_vec((d0, d1, d2), flat)
        .map_err(|e| Error::DimensionMismatch(format!("{what}: {e}")))
}

impl MdpFile {
    pub fn from_mdp(mdp: &TabularMdp) -> Self {
        let p = mdp
            .transitions()
            .outer_iter()
            .map(|stage| nested3(&stage.to_owned()))
            .collect();
        Self {
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            horizon: mdp.horizon(),
            d0: mdp.initial().to_vec(),
            p,
        }
    }

    pub fn into_mdp(self) -> Result<TabularMdp> {
        let (h, s, a) = (self.horizon, self.num_states, self.num_actions);
        if self.p.len() != h {
            return Err(Error::DimensionMismatch(format!(
                "p has {} stages, H = {h}",
                self.p.len()
            )));
        }
        let mut flat = Vec::with_capacity(h * s * a * s);
        for stage in &self.p {
            let t = flat3(stage, "p")?;
            if t.dim() != (s, a, s) {
                return Err(Error::DimensionMismatch(format!(
                    "p stage has shape {:?}, expected {:?}",
                    t.dim(),
                    (s, a, s)
                )));
            }
            flat.extend(t.iter().copied());
        }
        let p = Array4::from_shape_vec((h, s, a, s), flat)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        TabularMdp::new(Array1::from(self.d0), p)
    }
}

impl RewardFile {
    pub fn from_reward(r: &RewardFunction) -> Self {
        RewardFile::Table {
            id: r.id.clone(),
            r: nested3(r.values()),
        }
    }

    pub fn into_reward(self) -> Result<RewardFunction> {
        let (id, reward) = match self {
            RewardFile::Table { id, r } => (id, RewardFunction::new(flat3(&r, "r")?)?),
            RewardFile::Linear { id, phi, theta } => {
                let phi = flat3(&phi, "phi")?;
                let d = theta.first().map_or(0, Vec::len);
                let flat: Vec<f64> = theta.iter().flatten().copied().collect();
                let theta = Array2::from_shape_vec((theta.len(), d), flat)
                    .map_err(|e| Error::DimensionMismatch(format!("theta: {e}")))?;
                (id, LinearRewardClass::new(phi, theta)?.materialize()?)
            }
        };
        Ok(match id {
            Some(id) => reward.with_id(id),
            None => reward,
        })
    }
}

impl PolicyFile {
    pub fn from_policy(pi: &Policy) -> Self {
        Self {
            pi: nested3(pi.probs()),
        }
    }

    pub fn into_policy(self) -> Result<Policy> {
        Policy::new(flat3(&self.pi, "pi")?)
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn read_mdp(path: &Path) -> Result<TabularMdp> {
    let file: MdpFile = serde_json::from_reader(open(path)?)?;
    file.into_mdp()
}

pub fn write_mdp(path: &Path, mdp: &TabularMdp) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &MdpFile::from_mdp(mdp))?;
    writeln!(w)?;
    Ok(())
}

/// Accepts either a single reward object or an array of them.
pub fn parse_rewards(json: &str) -> Result<Vec<RewardFunction>> {
    let parsed: RewardsFile = serde_json::from_str(json)?;
    let files = match parsed {
        RewardsFile::Many(v) => v,
        RewardsFile::One(r) => vec![r],
    };
    files.into_iter().map(RewardFile::into_reward).collect()
}

pub fn read_rewards(path: &Path) -> Result<Vec<RewardFunction>> {
    let mut s = String::new();
    open(path)?.read_to_string(&mut s)?;
    parse_rewards(&s)
}

pub fn write_rewards(path: &Path, rewards: &[RewardFunction]) -> Result<()> {
    let files: Vec<RewardFile> = rewards.iter().map(RewardFile::from_reward).collect();
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &files)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_policy(path: &Path) -> Result<Policy> {
    let file: PolicyFile = serde_json::from_reader(open(path)?)?;
    file.into_policy()
}

pub fn write_policy(path: &Path, pi: &Policy) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &PolicyFile::from_policy(pi))?;
    writeln!(w)?;
    Ok(())
}

pub fn write_dataset_to<W: Write>(mut w: W, data: &TrajectoryDataset) -> Result<()> {
    serde_json::to_writer(
        &mut w,
        &HeaderLine {
            meta: data.meta.clone(),
        },
    )?;
    writeln!(w)?;
    for t in &data.trajectories {
        serde_json::to_writer(&mut w, t)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_dataset_from<R: BufRead>(r: R) -> Result<TrajectoryDataset> {
    let mut lines = r
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let header = lines.next().ok_or(Error::EmptyDataset)??;
    let header: HeaderLine = serde_json::from_str(&header)?;
    let trajectories = lines
        .map(|l| Ok(serde_json::from_str::<Trajectory>(&l?)?))
        .collect::<Result<Vec<_>>>()?;
    TrajectoryDataset::new(header.meta, trajectories)
}

pub fn write_dataset(path: &Path, data: &TrajectoryDataset) -> Result<()> {
    let mut w = create(path)?;
    write_dataset_to(&mut w, data)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<TrajectoryDataset> {
    read_dataset_from(open(path)?)
}

/// Write `contents` to `path`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(contents.as_bytes())?;
    w.flush()?;
    Ok(())
}
