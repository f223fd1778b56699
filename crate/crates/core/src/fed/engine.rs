//! Round orchestration with validation-based model selection.

use std::io::Write;

use super::{fedavg_aggregate, scaffold_server_update, Algorithm, Federation, ScaffoldState, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{N_OUTCOMES, OUTCOME_NAMES};
use crate::wire::{EvalSplit, OutcomeScores};
use crate::Params;

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    /// Per-outcome validation AUROC, averaged over every validation set.
    pub val_auroc: OutcomeScores,
    /// Mean of `val_auroc` over defined outcomes; drives model selection.
    pub score: Option<f64>,
    pub improved: bool,
    /// Mean local training loss per training site, in slot order.
    pub train_loss: Vec<f64>,
    /// `|c − mean c_i|` after the round (SCAFFOLD only).
    pub control_gap: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub clients: Vec<String>,
    pub history: Vec<RoundRecord>,
    pub best_params: Params,
    /// 0 when no round ever improved on the initial model.
    pub best_round: u32,
    pub best_score: Option<f64>,
    pub final_params: Params,
    /// Per-site test AUROC of the selected model.
    pub test_scores: Vec<(String, Vec<OutcomeScores>)>,
}

/// Averages each outcome over all evaluation sets where it is defined.
pub fn pool_scores<'a>(sets: impl IntoIterator<Item = &'a OutcomeScores>) -> (OutcomeScores, Option<f64>) {
    let mut sum = [0.0; N_OUTCOMES];
    let mut count = [0usize; N_OUTCOMES];
    for set in sets {
        for o in 0..N_OUTCOMES {
            if let Some(v) = set[o] {
                sum[o] += v;
                count[o] += 1;
            }
        }
    }
    let mut per = [None; N_OUTCOMES];
    for o in 0..N_OUTCOMES {
        if count[o] > 0 {
            per[o] = Some(sum[o] / count[o] as f64);
        }
    }
    let defined: Vec<f64> = per.iter().flatten().copied().collect();
    let score = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    (per, score)
}

/// Runs up to `cfg.rounds` rounds, stopping after `cfg.patience` rounds
/// without a strict improvement in validation score (0 disables early
/// stopping). The selected model is then scored on every site's test data
/// and the sites are shut down.
pub fn run_federated(
    fed: &mut dyn Federation,
    init: Params,
    algorithm: Algorithm,
    cfg: &TrainConfig,
) -> Result<RunResult> {
    run_federated_observed(fed, init, algorithm, cfg, &mut |_, _, _| {})
}

/// [`run_federated`] with a hook that sees the global model (and SCAFFOLD
/// state) after every aggregation.
pub fn run_federated_observed(
    fed: &mut dyn Federation,
    init: Params,
    algorithm: Algorithm,
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(u32, &Params, Option<&ScaffoldState<f64>>),
) -> Result<RunResult> {
    cfg.validate()?;
    let clients = fed.trainers();
    if clients.is_empty() {
        return Err(Error::Participation("no training sites".into()));
    }
    let mut scaffold = (algorithm == Algorithm::Scaffold).then(|| ScaffoldState::new(&init, 0..clients.len() as u32));
    let mut x = init.clone();
    let mut best = (init, 0u32, None::<f64>);
    let mut history = Vec::new();
    let mut stale = 0;
    for round in 1..=cfg.rounds as u32 {
        let control = scaffold.as_ref().map(|s| s.server.clone());
        let updates = fed.train_round(round, &x, control.as_ref())?;
        let train_loss = updates.iter().map(|u| u.train_loss).collect();
        let mut control_gap = None;
        x = match scaffold.take() {
            Some(state) => {
                let (next, state) = scaffold_server_update(&state, &x, &updates, cfg.server_lr)?;
                control_gap = Some(state.control_mean_gap()?);
                scaffold = Some(state);
                next
            }
            None => fedavg_aggregate(&updates)?,
        };
        observe(round, &x, scaffold.as_ref());
        let evals = fed.evaluate(round, EvalSplit::Validation, &x)?;
        let (val_auroc, score) = pool_scores(evals.iter().flat_map(|(_, sets)| sets));
        let improved = match (score, best.2) {
            (Some(s), Some(b)) => s > b,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if improved {
            best = (x.clone(), round, score);
            stale = 0;
        } else {
            stale += 1;
        }
        log::info!(
            "{} round {round}: validation score {} {}",
            algorithm.name(),
            score.map_or("n/a".into(), |s| format!("{s:.4}")),
            if improved { "(best)" } else { "" }
        );
        history.push(RoundRecord { round, val_auroc, score, improved, train_loss, control_gap });
        if cfg.patience > 0 && stale >= cfg.patience {
            log::info!("no improvement for {stale} rounds, stopping");
            break;
        }
    }
    let last = history.last().map_or(0, |r| r.round);
    let test_scores = fed.evaluate(last, EvalSplit::Test, &best.0)?;
    fed.shutdown()?;
    Ok(RunResult {
        clients,
        history,
        best_params: best.0,
        best_round: best.1,
        best_score: best.2,
        final_params: x,
        test_scores,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// One row per round; floats are written in shortest round-trip form so two
/// histories are byte-equal exactly when their values are bit-equal.
pub fn write_history_csv<W: Write>(result: &RunResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = vec!["round".into()];
    header.extend(OUTCOME_NAMES.iter().map(|o| format!("val_auroc_{o}")));
    header.extend(["val_score".into(), "improved".into(), "control_gap".into()]);
    header.extend(result.clients.iter().map(|c| format!("train_loss_{c}")));
    w.write_record(&header)?;
    for r in &result.history {
        let mut row = vec![r.round.to_string()];
        row.extend(r.val_auroc.iter().map(|v| cell(*v)));
        row.extend([cell(r.score), r.improved.to_string(), cell(r.control_gap)]);
        row.extend(r.train_loss.iter().map(|l| l.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn history_csv_string(result: &RunResult) -> Result<String> {
    let mut buf = Vec::new();
    write_history_csv(result, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}
