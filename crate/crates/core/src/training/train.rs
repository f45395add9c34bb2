use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{contrastive_loss, make_batches, sample_positives, AdamW, AdamWConfig, AlignmentDataset, TrainBatch};
use crate::error::{Error, Result};
use crate::late_interaction::maxsim_with_argmax;
use crate::numerics::Matrix;
use crate::qap::checkpoint::{read_tensor_file, write_tensor_file};
use crate::qap::{assemble_query, load_checkpoint, save_checkpoint, CheckpointMeta, PoolingGrads, PoolingParams, Stage};

pub const OPTIMIZER_FILE: &str = "optimizer.bin";
pub const TRAIN_CONFIG_FILE: &str = "train_config.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: u64,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub temperature: f64,
    pub seed: u64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

fn default_weight_decay() -> f64 {
    0.01
}

impl TrainConfig {
    /// Alignment pretraining: LR 1e-4, 5 epochs, batch 512, warmup 300, τ 0.3.
    pub fn pretraining() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 5,
            batch_size: 512,
            warmup_steps: 300,
            temperature: 0.3,
            seed: 0,
            weight_decay: 0.01,
        }
    }

    /// Pretraining schedule at desk scale: batch 32, warmup 30.
    pub fn desk() -> Self {
        Self { batch_size: 32, warmup_steps: 30, ..Self::pretraining() }
    }

    /// Downstream fine-tuning (OKVQA-like): LR 5e-5, 15 epochs, warmup 10, τ 0.8.
    pub fn downstream() -> Self {
        Self {
            learning_rate: 5e-5,
            epochs: 15,
            batch_size: 512,
            warmup_steps: 10,
            temperature: 0.8,
            seed: 0,
            weight_decay: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::param(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param("learning rate must be finite and non-negative"));
        }
        if self.batch_size < 2 {
            return Err(Error::param("batch size must be at least 2"));
        }
        Ok(())
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            warmup_steps: self.warmup_steps,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Loss and parameter gradients of one batch at the alignment stage.
///
/// Scores use MaxSim in `f64`; its sub-gradient routes each query token's
/// upstream gradient to the passage token that attained the maximum.
pub fn batch_loss_and_grads(
    params: &PoolingParams,
    data: &AlignmentDataset,
    batch: &TrainBatch,
    temperature: f64,
) -> Result<(f64, PoolingGrads)> {
    let passages: Vec<&Matrix> = batch.positives.iter().map(|&p| &data.passages[p]).collect();
    let forward = batch
        .items
        .par_iter()
        .map(|&i| {
            let q = assemble_query(&data.queries[i], params, Stage::Alignment)?;
            let tokens = q.tokens();
            let scored = passages
                .iter()
                .map(|p| maxsim_with_argmax(&tokens, p))
                .collect::<Result<Vec<_>>>()?;
            Ok((q, tokens, scored))
        })
        .collect::<Result<Vec<_>>>()?;

    let b = batch.len();
    let mut scores = Matrix::zeros(b, b);
    for (i, (_, _, row)) in forward.iter().enumerate() {
        for (j, (s, _)) in row.iter().enumerate() {
            scores.set(i, j, *s);
        }
    }
    let loss = contrastive_loss(&scores, temperature)?;

    let per_item = forward
        .par_iter()
        .enumerate()
        .map(|(i, (q, tokens, row))| {
            let mut d_tokens = Matrix::zeros(tokens.rows(), tokens.cols());
            for (j, (_, argmax)) in row.iter().enumerate() {
                let g = loss.grad.get(i, j);
                if g == 0.0 {
                    continue;
                }
                for (r, &a) in argmax.iter().enumerate() {
                    for (o, &d) in d_tokens.row_mut(r).iter_mut().zip(passages[j].row(a)) {
                        *o += g * d;
                    }
                }
            }
            let mut grads = params.zero_grads();
            q.backward(params, &data.queries[batch.items[i]], &d_tokens, &mut grads)?;
            Ok(grads)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total = params.zero_grads();
    for g in &per_item {
        total.add_assign(g);
    }
    Ok((loss.loss, total))
}

/// Alignment trainer: owns the parameters, optimizer state and position in
/// the schedule, so a run can be checkpointed and resumed at an epoch
/// boundary.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub params: PoolingParams,
    pub optimizer: AdamW,
    pub config: TrainConfig,
    pub init_seed: u64,
    /// Completed epochs.
    pub epoch: u64,
    pub history: Vec<StepRecord>,
}

impl Trainer {
    pub fn new(params: PoolingParams, config: TrainConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let n = params.param_count();
        Ok(Self { params, optimizer: AdamW::new(config.adamw(), n), config, init_seed, epoch: 0, history: Vec::new() })
    }

    pub fn step_count(&self) -> u64 {
        self.optimizer.step
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// Runs one update and records its loss.
    pub fn step(&mut self, data: &AlignmentDataset, batch: &TrainBatch) -> Result<StepRecord> {
        let (loss, grads) = batch_loss_and_grads(&self.params, data, batch, self.config.temperature)?;
        let mut flat = self.params.flatten();
        let step = self.optimizer.step;
        let lr = self.optimizer.update(&mut flat, &grads.flatten())?;
        self.params.load_flat(&flat)?;
        let rec = StepRecord { step, epoch: self.epoch, loss, lr };
        log::debug!("step {step} epoch {} loss {loss:.6} lr {lr:.3e}", self.epoch);
        self.history.push(rec);
        Ok(rec)
    }

    pub fn run_epoch(&mut self, data: &AlignmentDataset) -> Result<Vec<StepRecord>> {
        let positives = sample_positives(&data.gold, self.config.seed, self.epoch)?;
        let batches = make_batches(&positives, self.config.batch_size, self.config.seed, self.epoch)?;
        let mut out = Vec::with_capacity(batches.len());
        for b in &batches {
            out.push(self.step(data, b)?);
        }
        self.epoch += 1;
        if let Some(mean) = mean_loss(&out) {
            log::info!("epoch {} mean loss {mean:.6}", self.epoch);
        }
        Ok(out)
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            dims: self.params.dims,
            activation: self.params.activation,
            init_seed: self.init_seed,
            step: self.optimizer.step,
            epoch: self.epoch,
        }
    }

    /// Writes parameters, optimizer moments and the training config.
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, &self.params, &self.meta())?;
        let n = self.optimizer.m.len();
        let tensors = vec![
            ("m".to_string(), Matrix::new(1, n, self.optimizer.m.clone())?),
            ("v".to_string(), Matrix::new(1, n, self.optimizer.v.clone())?),
        ];
        write_tensor_file(&dir.join(OPTIMIZER_FILE), &tensors)?;
        let path = dir.join(TRAIN_CONFIG_FILE);
        fs::write(&path, serde_json::to_string_pretty(&self.config)?).map_err(|e| Error::io(&path, e))
    }

    /// Restores a trainer saved by [`save`](Self::save). `config` overrides
    /// the stored one when given (for example to extend the epoch count).
    pub fn resume(dir: &Path, config: Option<TrainConfig>) -> Result<Self> {
        let (params, meta) = load_checkpoint(dir)?;
        let config = match config {
            Some(c) => c,
            None => {
                let path = dir.join(TRAIN_CONFIG_FILE);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                serde_json::from_str(&text)?
            }
        };
        let mut t = Self::new(params, config, meta.init_seed)?;
        let tensors = read_tensor_file(&dir.join(OPTIMIZER_FILE))?;
        let n = t.params.param_count();
        match tensors.as_slice() {
            [(m_name, m), (v_name, v)] if m_name == "m" && v_name == "v" && m.cols() == n && v.cols() == n => {
                t.optimizer.m = m.data().to_vec();
                t.optimizer.v = v.data().to_vec();
            }
            _ => return Err(Error::format(0, "optimizer state does not match the parameters")),
        }
        t.optimizer.step = meta.step;
        t.epoch = meta.epoch;
        Ok(t)
    }
}

pub fn mean_loss(steps: &[StepRecord]) -> Option<f64> {
    if steps.is_empty() {
        None
    } else {
        Some(steps.iter().map(|s| s.loss).sum::<f64>() / steps.len() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: PoolingParams,
    pub steps: Vec<StepRecord>,
    /// Mean loss of each epoch.
    pub epoch_means: Vec<f64>,
}

/// Trains for `config.epochs` epochs. With `checkpoint_dir`, the state
/// after epoch `e` is written to `checkpoint_dir/epoch_{e:03}` and the final
/// state to `checkpoint_dir` itself.
pub fn train_alignment(
    data: &AlignmentDataset,
    params: PoolingParams,
    config: TrainConfig,
    init_seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(params, config, init_seed)?;
    continue_training(&mut trainer, data, checkpoint_dir)?;
    Ok(outcome(trainer))
}

/// Runs the remaining epochs of `trainer`.
pub fn continue_training(trainer: &mut Trainer, data: &AlignmentDataset, checkpoint_dir: Option<&Path>) -> Result<()> {
    if data.len() < trainer.config.batch_size {
        return Err(Error::param(format!(
            "dataset has {} queries, fewer than the batch size {}",
            data.len(),
            trainer.config.batch_size
        )));
    }
    while !trainer.is_finished() {
        trainer.run_epoch(data)?;
        if let Some(dir) = checkpoint_dir {
            trainer.save(&dir.join(format!("epoch_{:03}", trainer.epoch)))?;
        }
    }
    if let Some(dir) = checkpoint_dir {
        trainer.save(dir)?;
    }
    Ok(())
}

pub fn outcome(trainer: Trainer) -> TrainOutcome {
    let mut by_epoch: BTreeMap<u64, Vec<StepRecord>> = BTreeMap::new();
    for s in &trainer.history {
        by_epoch.entry(s.epoch).or_default().push(*s);
    }
    let epoch_means = by_epoch.values().filter_map(|v| mean_loss(v)).collect();
    TrainOutcome { params: trainer.params, steps: trainer.history, epoch_means }
}

/// Fraction of queries whose top-`k` alignment-stage MaxSim ranking over
/// all passages of `data` contains a gold passage. Ties rank the lower
/// passage id first.
pub fn alignment_recall(params: &PoolingParams, data: &AlignmentDataset, k: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("no queries to evaluate".into()));
    }
    let hits = data
        .queries
        .par_iter()
        .zip(&data.gold)
        .map(|(q, gold)| {
            let tokens = assemble_query(q, params, Stage::Alignment)?.tokens();
            let mut scored = data
                .passages
                .iter()
                .enumerate()
                .map(|(j, p)| maxsim_with_argmax(&tokens, p).map(|(s, _)| (j, s)))
                .collect::<Result<Vec<_>>>()?;
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| data.passage_ids[a.0].cmp(&data.passage_ids[b.0])));
            Ok(scored.iter().take(k).any(|(j, _)| gold.contains(j)))
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// `step,epoch,loss,lr` with a header row.
pub fn write_loss_csv(path: &Path, steps: &[StepRecord]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut body = String::from("step,epoch,loss,lr\n");
    for s in steps {
        body.push_str(&format!("{},{},{:.9},{:.6e}\n", s.step, s.epoch, s.loss, s.lr));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_io::{synth_planted_dataset, PlantedConfig};
    use crate::numerics::check_gradients;
    use crate::qap::{Activation, PoolingDims};

    fn tiny() -> (AlignmentDataset, PoolingParams) {
        let d = synth_planted_dataset(&PlantedConfig { patches: 12, ..PlantedConfig::new(8, 2, 8, 6, 3) }).unwrap();
        let data = AlignmentDataset::from_planted(&d).unwrap();
        let dims = PoolingDims { d_v: 6, d_t: 8, l_g: 2, heads: 3, hidden: 6 };
        (data, PoolingParams::init(dims, Activation::Silu, 1).unwrap())
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let (data, mut p) = tiny();
        let mut rng = crate::numerics::Rng::new(4);
        for (_, l) in p.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b = 0.1 * rng.normal());
        }
        let batch = TrainBatch { items: vec![0, 3, 5, 6], positives: vec![0, 3, 5, 6] };
        let (_, grads) = batch_loss_and_grads(&p, &data, &batch, 0.3).unwrap();
        let mut scratch = p.clone();
        let report = check_gradients(
            |flat| {
                scratch.load_flat(flat).unwrap();
                batch_loss_and_grads(&scratch, &data, &batch, 0.3).unwrap().0
            },
            &p.flatten(),
            &grads.flatten(),
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let (data, p) = tiny();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 2, batch_size: 4, warmup_steps: 2, ..TrainConfig::desk() };
        let out = train_alignment(&data, p.clone(), cfg, 1, None).unwrap();
        let same = p.flatten().iter().zip(out.params.flatten()).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
        assert_eq!(out.steps.len(), 8);
        assert_eq!(out.epoch_means.len(), 2);
    }

    #[test]
    fn fixed_seed_gives_same_curve() {
        let (data, p) = tiny();
        let cfg = TrainConfig { epochs: 2, batch_size: 4, warmup_steps: 2, learning_rate: 1e-3, ..TrainConfig::desk() };
        let a = train_alignment(&data, p.clone(), cfg, 1, None).unwrap();
        let b = train_alignment(&data, p, cfg, 1, None).unwrap();
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (data, p) = tiny();
        let cfg = TrainConfig { epochs: 3, batch_size: 4, warmup_steps: 2, learning_rate: 1e-3, ..TrainConfig::desk() };
        let full = train_alignment(&data, p.clone(), cfg, 1, None).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(p, TrainConfig { epochs: 1, ..cfg }, 1).unwrap();
        continue_training(&mut t, &data, Some(dir.path())).unwrap();
        let mut resumed = Trainer::resume(dir.path(), Some(cfg)).unwrap();
        assert_eq!(resumed.step_count(), 4);
        continue_training(&mut resumed, &data, None).unwrap();
        assert_eq!(resumed.params, full.params);
        assert!(dir.path().join("epoch_001").join("params.bin").exists());
    }

    #[test]
    fn inputs_are_not_modified() {
        let (data, p) = tiny();
        let before = data.clone();
        let cfg = TrainConfig { epochs: 1, batch_size: 4, learning_rate: 1e-2, ..TrainConfig::desk() };
        train_alignment(&data, p, cfg, 1, None).unwrap();
        for (a, b) in before.queries.iter().zip(&data.queries) {
            assert!(a.e_t.data().iter().zip(b.e_t.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert_eq!(a.v_g, b.v_g);
            assert_eq!(a.v_m, b.v_m);
        }
    }

    #[test]
    fn small_dataset_rejected() {
        let (data, p) = tiny();
        let cfg = TrainConfig { batch_size: 64, ..TrainConfig::desk() };
        assert!(matches!(train_alignment(&data, p, cfg, 1, None), Err(Error::Param(_))));
    }

    #[test]
    fn loss_csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let steps = vec![StepRecord { step: 0, epoch: 0, loss: 1.5, lr: 1e-4 }];
        write_loss_csv(&path, &steps).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "step,epoch,loss,lr\n0,0,1.500000000,1.000000e-4\n");
    }

    #[test]
    fn presets() {
        let p = TrainConfig::pretraining();
        assert_eq!((p.learning_rate, p.epochs, p.batch_size, p.warmup_steps, p.temperature), (1e-4, 5, 512, 300, 0.3));
        let d = TrainConfig::desk();
        assert_eq!((d.batch_size, d.warmup_steps), (32, 30));
        assert_eq!(TrainConfig::downstream().temperature, 0.8);
        assert!(TrainConfig { temperature: 0.0, ..d }.validate().is_err());
    }
}
