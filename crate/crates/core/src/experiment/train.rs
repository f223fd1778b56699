//! Training jobs for every paradigm and their on-disk artifacts.

use std::fs;

use serde::{Deserialize, Serialize};

use super::data::{global_scaler, load_sites, SiteData};
use super::{ExperimentConfig, RunKind, SiteRole, Transport};
use crate::error::{Error, Result};
use crate::fed::{
    run_federated, write_history_csv, Algorithm, DirectFederation, Federation, RunResult, SiteClient, TrainConfig,
    WireFederation,
};
use crate::model::{init_model, read_checkpoint, read_params_file, write_checkpoint, write_params_file, ArchConfig};
use crate::personalize::{fine_tune, PersonalizedModel};
use crate::pipeline::{FeatureMatrix, ScalerStats};
use crate::Params;

const CHECKPOINT: &str = "model.ckpt";
const PERSONAL: &str = "personal.params";
const META: &str = "meta.json";
const HISTORY: &str = "history.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub name: String,
    pub kind: RunKind,
    /// Development sites whose rows trained the model.
    pub trained_on: Vec<String>,
    /// Scale bounds the model expects its inputs in.
    pub scaler: ScalerStats,
    pub best_round: u32,
    pub best_score: Option<f64>,
    pub rounds_run: usize,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub meta: ModelMeta,
    pub arch: ArchConfig,
    /// Network parameters (the frozen backbone for a personalized model).
    pub params: Params,
    /// Surgeon table and heads of a personalized model.
    pub personal: Option<Params>,
    pub history: Option<RunResult>,
}

impl TrainedModel {
    pub fn save(&self, cfg: &ExperimentConfig) -> Result<()> {
        let dir = cfg.model_dir(&self.meta.name);
        fs::create_dir_all(&dir)?;
        write_checkpoint(&dir.join(CHECKPOINT), &self.arch, &self.params)?;
        if let Some(p) = &self.personal {
            write_params_file(&dir.join(PERSONAL), p)?;
        }
        fs::write(dir.join(META), serde_json::to_string_pretty(&self.meta)?)?;
        if let Some(h) = &self.history {
            write_history_csv(h, fs::File::create(dir.join(HISTORY))?)?;
        }
        Ok(())
    }

    pub fn load(cfg: &ExperimentConfig, name: &str) -> Result<Self> {
        let dir = cfg.model_dir(name);
        let meta: ModelMeta = serde_json::from_str(
            &fs::read_to_string(dir.join(META))
                .map_err(|e| Error::Config(format!("model `{name}` has no metadata in {}: {e}", dir.display())))?,
        )?;
        let (arch, params) = read_checkpoint(&dir.join(CHECKPOINT))?;
        let expected = cfg.arch();
        if arch != expected {
            return Err(Error::Layout(format!("checkpoint `{name}` was trained with a different architecture")));
        }
        let personal =
            if meta.kind == RunKind::Personalized { Some(read_params_file(&dir.join(PERSONAL))?) } else { None };
        Ok(TrainedModel { meta, arch, params, personal, history: None })
    }

    /// Risk scores `[n × 4]`, row-major.
    pub fn predict(&self, data: &FeatureMatrix) -> Result<Vec<f64>> {
        let t = match &self.personal {
            Some(personal) => {
                PersonalizedModel { backbone: self.params.clone(), personal: personal.clone() }.predict(data)?
            }
            None => crate::model::predict_matrix(&self.params, data)?,
        };
        Ok(t.data().to_vec())
    }
}

pub fn local_name(site: &str) -> String {
    format!("local_{site}")
}

pub fn personalized_name(site: &str) -> String {
    format!("personalized_{site}")
}

fn initial_params(cfg: &ExperimentConfig) -> Result<Params> {
    init_model(&cfg.arch(), cfg.seed)
}

fn finish(
    cfg: &ExperimentConfig,
    name: String,
    kind: RunKind,
    trained_on: Vec<String>,
    scaler: ScalerStats,
    run: RunResult,
) -> TrainedModel {
    TrainedModel {
        meta: ModelMeta {
            name,
            kind,
            trained_on,
            scaler,
            best_round: run.best_round,
            best_score: run.best_score,
            rounds_run: run.history.len(),
        },
        arch: cfg.arch(),
        params: run.best_params.clone(),
        personal: None,
        history: Some(run),
    }
}

fn dev_sites(sites: &[SiteData]) -> impl Iterator<Item = &SiteData> {
    sites.iter().filter(|s| s.role == SiteRole::Development)
}

/// A site's federation member under the given scaler. Development sites
/// train and validate; external sites only evaluate. `slot` orders the
/// training sites.
pub fn site_client(
    site: &SiteData,
    slot: u64,
    scaler: &ScalerStats,
    algorithm: Algorithm,
    train_cfg: &TrainConfig,
) -> Result<SiteClient> {
    let m = site.matrices(scaler)?;
    Ok(SiteClient::new(
        site.name.clone(),
        slot,
        m.train,
        m.validation.into_iter().collect(),
        vec![m.test],
        train_cfg.clone(),
        algorithm,
    ))
}

/// One model per development site on its own data and scale.
pub fn train_local(cfg: &ExperimentConfig, site: &SiteData) -> Result<TrainedModel> {
    if site.role != SiteRole::Development {
        return Err(Error::Config(format!("{} is not a development site", site.name)));
    }
    let scaler = site.local.scaler();
    let client = site_client(site, 0, &scaler, Algorithm::FedAvg, &cfg.training.local)?;
    log::info!("training local model for {}", site.name);
    let run = run_federated(
        &mut DirectFederation::new(vec![client]),
        initial_params(cfg)?,
        Algorithm::FedAvg,
        &cfg.training.local,
    )?;
    Ok(finish(cfg, local_name(&site.name), RunKind::Local, vec![site.name.clone()], scaler, run))
}

/// Pooled training on every development site's rows, preprocessed exactly
/// as in the federation (site-local clipping, shared scale).
pub fn train_central(cfg: &ExperimentConfig, sites: &[SiteData]) -> Result<TrainedModel> {
    let scaler = global_scaler(sites)?;
    let mut trains = Vec::new();
    let mut vals = Vec::new();
    let mut names = Vec::new();
    for s in dev_sites(sites) {
        let m = s.matrices(&scaler)?;
        trains.extend(m.train);
        vals.extend(m.validation);
        names.push(s.name.clone());
    }
    let pooled = FeatureMatrix::concat(&trains.iter().collect::<Vec<_>>())?;
    let client =
        SiteClient::new("pooled", 0, Some(pooled), vals, vec![], cfg.training.central.clone(), Algorithm::FedAvg);
    log::info!("training central model on {} pooled sites", names.len());
    let run = run_federated(
        &mut DirectFederation::new(vec![client]),
        initial_params(cfg)?,
        Algorithm::FedAvg,
        &cfg.training.central,
    )?;
    Ok(finish(cfg, "central".into(), RunKind::Central, names, scaler, run))
}

/// Every configured site as a federation member: development sites train,
/// external sites score the selected model.
pub fn federation_members(
    cfg: &ExperimentConfig,
    sites: &[SiteData],
    algorithm: Algorithm,
) -> Result<(ScalerStats, Vec<SiteClient>)> {
    let scaler = global_scaler(sites)?;
    let mut clients = Vec::new();
    let mut slot = 0;
    for s in sites {
        let this = if s.role == SiteRole::Development { slot } else { u64::MAX };
        clients.push(site_client(s, this, &scaler, algorithm, &cfg.training.federated)?);
        if s.role == SiteRole::Development {
            slot += 1;
        }
    }
    Ok((scaler, clients))
}

/// Runs a federation over any transport and packages the selected model.
pub fn train_federated_with(
    cfg: &ExperimentConfig,
    fed: &mut dyn Federation,
    algorithm: Algorithm,
    scaler: ScalerStats,
) -> Result<TrainedModel> {
    log::info!("training {} federation", algorithm.name());
    let run = run_federated(fed, initial_params(cfg)?, algorithm, &cfg.training.federated)?;
    let trained_on = run.clients.clone();
    Ok(finish(cfg, algorithm.name().into(), RunKind::from_algorithm(algorithm), trained_on, scaler, run))
}

pub fn train_federated(
    cfg: &ExperimentConfig,
    sites: &[SiteData],
    algorithm: Algorithm,
    transport: Transport,
) -> Result<TrainedModel> {
    let (scaler, members) = federation_members(cfg, sites, algorithm)?;
    match transport {
        Transport::Direct => train_federated_with(cfg, &mut DirectFederation::new(members), algorithm, scaler),
        Transport::InProcess => train_federated_with(cfg, &mut WireFederation::loopback(members), algorithm, scaler),
    }
}

/// Fine-tunes the federated `base` model at every development site.
pub fn train_personalized(
    cfg: &ExperimentConfig,
    sites: &[SiteData],
    base: &TrainedModel,
) -> Result<Vec<TrainedModel>> {
    let mut out = Vec::new();
    for s in dev_sites(sites) {
        let m = s.matrices(&base.meta.scaler)?;
        let (train, val) = (m.train.expect("development site"), m.validation.expect("development site"));
        let res = fine_tune(&base.params, &base.arch, &train, &val, &cfg.personalize.train, &cfg.personalize.surgeon)?;
        log::info!(
            "{}: validation loss {:.5} -> {:.5} (epoch {})",
            s.name,
            res.val_loss_before,
            res.val_loss_after,
            res.best_epoch
        );
        out.push(TrainedModel {
            meta: ModelMeta {
                name: personalized_name(&s.name),
                kind: RunKind::Personalized,
                trained_on: vec![s.name.clone()],
                scaler: base.meta.scaler.clone(),
                best_round: res.best_epoch as u32,
                best_score: None,
                rounds_run: res.train_loss.len(),
            },
            arch: base.arch.clone(),
            params: res.model.backbone,
            personal: Some(res.model.personal),
            history: None,
        });
    }
    Ok(out)
}

/// Runs every job in `cfg.runs`, saving each model as it finishes.
pub fn train_all(cfg: &ExperimentConfig) -> Result<Vec<TrainedModel>> {
    cfg.validate()?;
    let sites = load_sites(cfg)?;
    let mut done: Vec<TrainedModel> = Vec::new();
    for &kind in &cfg.runs {
        let models = match kind {
            RunKind::Local => dev_sites(&sites).map(|s| train_local(cfg, s)).collect::<Result<Vec<_>>>()?,
            RunKind::Central => vec![train_central(cfg, &sites)?],
            RunKind::Personalized => {
                let base_name = cfg.personalize.base.algorithm().expect("validated").name();
                let base = match done.iter().find(|m| m.meta.name == base_name) {
                    Some(m) => m.clone(),
                    None => TrainedModel::load(cfg, base_name)?,
                };
                train_personalized(cfg, &sites, &base)?
            }
            fed => {
                let algorithm = fed.algorithm().expect("federated run");
                vec![train_federated(cfg, &sites, algorithm, cfg.training.transport)?]
            }
        };
        for m in models {
            m.save(cfg)?;
            done.push(m);
        }
    }
    Ok(done)
}
