use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{stream_rng, Execution};
use crate::mbr::mbr_select;
use crate::policy::TabularPolicy;
use crate::seqcore::Sequence;
use crate::tasks::{load_candidates, TaskSpec};
use crate::utility::{pair_utility, UtilityKind};

const DECODE_STREAM: u64 = 0xdec0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    Sample,
    Mbr,
}

#[derive(Debug, Clone)]
pub struct DecodeRequest {
    pub checkpoint: PathBuf,
    /// Task file for references; defaults to `task.json` next to the checkpoint.
    pub task: Option<PathBuf>,
    pub mode: DecodeMode,
    pub g: Option<usize>,
    pub kind: UtilityKind,
    /// Pre-sampled MBR candidates (JSONL) instead of sampling from the policy.
    pub candidates: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub prompt_id: usize,
    pub output: Sequence,
    pub text: String,
    /// Utility against the evaluation reference, when one is available.
    pub score: Option<f64>,
    /// Consensus score of the MBR winner.
    pub mbr_score: Option<f64>,
}

fn find_task(req: &DecodeRequest) -> Result<Option<TaskSpec>> {
    if let Some(p) = &req.task {
        return TaskSpec::load(p).map(Some);
    }
    let sibling = [Path::new("task.json"), Path::new("../task.json")]
        .iter()
        .filter_map(|rel| req.checkpoint.parent().map(|d| d.join(rel)))
        .find(|p| p.exists());
    sibling.map(|p| TaskSpec::load(&p)).transpose()
}

pub fn cmd_decode(req: &DecodeRequest, exec: Execution) -> Result<Vec<Decoded>> {
    let policy = TabularPolicy::load_checkpoint(&req.checkpoint)?;
    let task = find_task(req)?;
    if let Some(t) = &task {
        if t.vocab_size != policy.vocab().size() || t.l_max != policy.l_max() || t.prompts.len() != policy.num_prompts()
        {
            return Err(Error::Incompatible("task does not match the checkpoint".into()));
        }
    }
    let file: Option<BTreeMap<usize, Vec<Sequence>>> = match &req.candidates {
        Some(p) => Some(load_candidates(p, policy.vocab(), policy.l_max())?),
        None => None,
    };
    let g = match (req.mode, req.g, &file) {
        (DecodeMode::Mbr, None, None) => return Err(Error::Config("--g is required for --mode mbr".into())),
        (DecodeMode::Mbr, Some(g), _) if g < 2 => {
            return Err(Error::Config(format!("--g must be >= 2 for mbr, got {g}")))
        }
        (_, g, _) => g.unwrap_or(0),
    };
    let prompts: Vec<usize> = match &file {
        Some(m) if req.mode == DecodeMode::Mbr => m.keys().copied().collect(),
        _ => (0..policy.num_prompts()).collect(),
    };
    if let Some(&q) = prompts.iter().find(|&&q| q >= policy.num_prompts()) {
        return Err(Error::PromptOutOfRange {
            prompt: q,
            num_prompts: policy.num_prompts(),
        });
    }
    let rows = exec.map(prompts.len(), |k| -> Result<Decoded> {
        let q = prompts[k];
        let mut rng = stream_rng(req.seed, &[DECODE_STREAM, q as u64]);
        let (output, mbr_score) = match req.mode {
            DecodeMode::Greedy => (policy.greedy_decode(q), None),
            DecodeMode::Sample => (policy.sample(q, &mut rng), None),
            DecodeMode::Mbr => {
                let cands: Vec<Sequence> = match &file {
                    Some(m) => m[&q].clone(),
                    None => (0..g).map(|_| policy.sample(q, &mut rng)).collect(),
                };
                let pick = mbr_select(req.kind, &cands)?;
                (cands[pick.index].clone(), Some(pick.score))
            }
        };
        Ok(Decoded {
            prompt_id: q,
            text: policy.vocab().render(&output),
            score: task.as_ref().map(|t| pair_utility(req.kind, &output, t.reference(q))),
            output,
            mbr_score,
        })
    });
    rows.into_iter().collect()
}

pub fn write_jsonl(rows: &[Decoded], mut w: impl Write) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}
